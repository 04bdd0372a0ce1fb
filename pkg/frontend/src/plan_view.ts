import { CommandGate, GatewayClient } from './client.js';
import { fmtDeg, fmtNum, rsdLevel } from './format.js';
import type { DeviceDoc, GatewayState } from './types.js';

// place_device requires a strictly positive radius; clamp drags at the rim
// of the target instead of spamming bad_args.
export const MIN_RADIUS_M = 0.05;
const HIT_PX = 16;

export interface PlanTransform {
  cx: number;
  cy: number;
  pxPerM: number;
}

export function planTransform(
  width: number,
  height: number,
  maxRadiusM: number,
): PlanTransform {
  const margin = 30;
  const span = Math.max(0.5, maxRadiusM);
  return {
    cx: width / 2,
    cy: height / 2,
    pxPerM: (Math.min(width, height) / 2 - margin) / span,
  };
}

// Top-down scene: target at the canvas center, angle 0 straight up,
// positive angles clockwise (matching the gateway's bearing convention).
export function toCanvas(
  t: PlanTransform,
  angleDeg: number,
  radiusM: number,
): { x: number; y: number } {
  const a = (angleDeg * Math.PI) / 180;
  return {
    x: t.cx + radiusM * t.pxPerM * Math.sin(a),
    y: t.cy - radiusM * t.pxPerM * Math.cos(a),
  };
}

export function toPolar(
  t: PlanTransform,
  x: number,
  y: number,
): { angle_deg: number; radius_m: number } {
  const dx = (x - t.cx) / t.pxPerM;
  const dy = (t.cy - y) / t.pxPerM;
  return {
    angle_deg: (Math.atan2(dx, dy) * 180) / Math.PI,
    radius_m: Math.max(MIN_RADIUS_M, Math.hypot(dx, dy)),
  };
}

export function hitDevice(
  t: PlanTransform,
  devices: DeviceDoc[],
  x: number,
  y: number,
): number | null {
  let best: number | null = null;
  let bestDist = HIT_PX;
  for (const dev of devices) {
    const p = toCanvas(t, dev.angle_deg, dev.radius_m);
    const d = Math.hypot(p.x - x, p.y - y);
    if (d <= bestDist) {
      best = dev.device;
      bestDist = d;
    }
  }
  return best;
}

export class PlanView {
  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private readout: HTMLElement;
  private gate: CommandGate;
  private state: GatewayState | null = null;
  private dragging: number | null = null;

  constructor(root: HTMLElement, client: GatewayClient) {
    const panel = document.createElement('section');
    panel.className = 'panel';
    panel.innerHTML = '<h2>Plan</h2>';
    this.canvas = document.createElement('canvas');
    this.canvas.width = 420;
    this.canvas.height = 420;
    this.canvas.className = 'plan-canvas';
    this.readout = document.createElement('div');
    this.readout.className = 'readout';
    panel.append(this.canvas, this.readout);
    root.appendChild(panel);
    this.ctx = this.canvas.getContext('2d')!;
    this.gate = new CommandGate(client);

    this.canvas.addEventListener('pointerdown', (ev) => this.onDown(ev));
    this.canvas.addEventListener('pointermove', (ev) => this.onMove(ev));
    this.canvas.addEventListener('pointerup', () => (this.dragging = null));
    this.canvas.addEventListener('pointerleave', () => (this.dragging = null));
  }

  render(state: GatewayState): void {
    this.state = state;
    this.draw();
  }

  private transform(): PlanTransform {
    const devices = Object.values(this.state?.sections.devices ?? {});
    const maxR = Math.max(1, ...devices.map((d) => d.radius_m));
    return planTransform(this.canvas.width, this.canvas.height, maxR);
  }

  private pointer(ev: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) * this.canvas.width) / rect.width,
      y: ((ev.clientY - rect.top) * this.canvas.height) / rect.height,
    };
  }

  private onDown(ev: PointerEvent): void {
    if (this.state === null) return;
    const { x, y } = this.pointer(ev);
    const devices = Object.values(this.state.sections.devices);
    this.dragging = hitDevice(this.transform(), devices, x, y);
    if (this.dragging !== null) this.canvas.setPointerCapture(ev.pointerId);
  }

  private onMove(ev: PointerEvent): void {
    if (this.dragging === null || this.state === null) return;
    const { x, y } = this.pointer(ev);
    const pos = toPolar(this.transform(), x, y);
    // The dot itself only moves when the gateway's delta comes back.
    this.gate.send('place_device', { device: this.dragging, ...pos });
  }

  private draw(): void {
    const ctx = this.ctx;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    if (this.state === null) return;
    const s = this.state.sections;
    const devices = Object.values(s.devices);
    const t = this.transform();

    const members = devices.filter((d) => d.joined);
    if (members.length > 0) {
      const meanR =
        members.reduce((acc, d) => acc + d.radius_m, 0) / members.length;
      ctx.beginPath();
      ctx.setLineDash([4, 6]);
      ctx.strokeStyle = '#49566a';
      ctx.arc(t.cx, t.cy, meanR * t.pxPerM, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.setLineDash([]);
    }

    // Target board seen from above.
    ctx.fillStyle = '#d8b04a';
    ctx.fillRect(t.cx - 11, t.cy - 3, 22, 6);

    for (const dev of devices) {
      const p = toCanvas(t, dev.angle_deg, dev.radius_m);
      const isHost = dev.device === s.membership.host;
      ctx.beginPath();
      ctx.fillStyle = dev.joined ? (isHost ? '#6fd08c' : '#5aa9e6') : '#77808d';
      ctx.arc(p.x, p.y, 9, 0, 2 * Math.PI);
      ctx.fill();
      if (dev.device === this.dragging) {
        ctx.beginPath();
        ctx.strokeStyle = '#f0f4f8';
        ctx.arc(p.x, p.y, 12, 0, 2 * Math.PI);
        ctx.stroke();
      }
      ctx.fillStyle = '#0d1117';
      ctx.font = 'bold 11px system-ui, sans-serif';
      ctx.textAlign = 'center';
      ctx.textBaseline = 'middle';
      ctx.fillText(String(dev.device), p.x, p.y);
      ctx.fillStyle = '#9aa7b4';
      ctx.font = '10px system-ui, sans-serif';
      ctx.fillText(
        `${fmtDeg(dev.angle_deg)} / ${dev.radius_m.toFixed(2)}m`,
        p.x,
        p.y + 20,
      );
    }

    const angle = s.metrics.angle_rsd;
    const size = s.metrics.size_rsd;
    this.readout.innerHTML =
      `<span class="metric ${rsdLevel(angle)}">angle_rsd ${fmtNum(angle)}</span>` +
      `<span class="metric ${rsdLevel(size)}">size_rsd ${fmtNum(size)}</span>` +
      `<span>drag a device to send place_device</span>`;
  }
}
