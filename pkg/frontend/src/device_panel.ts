import { adjacentGaps, fmtDeg, fmtNum } from './format.js';
import type { DeviceDoc, GatewayState } from './types.js';

// Radar placement: bearing 0 is up and grows clockwise, so the gateway's
// self bearing of exactly 180 lands pinned at south.
export function bearingPoint(
  bearingDeg: number,
  radiusPx: number,
): { x: number; y: number } {
  const b = (bearingDeg * Math.PI) / 180;
  return { x: radiusPx * Math.sin(b), y: -radiusPx * Math.cos(b) };
}

export class DevicePanel {
  private tabs: HTMLElement;
  private radar: HTMLCanvasElement;
  private overlay: HTMLCanvasElement;
  private fitBadge: HTMLElement;
  private gaps: HTMLElement;
  private state: GatewayState | null = null;
  private selected: string | null = null;

  constructor(root: HTMLElement) {
    const panel = document.createElement('section');
    panel.className = 'panel';
    panel.innerHTML = '<h2>Device</h2>';
    this.tabs = document.createElement('div');
    this.tabs.className = 'tabs';
    const row = document.createElement('div');
    row.className = 'device-row';
    this.radar = document.createElement('canvas');
    this.radar.width = 240;
    this.radar.height = 240;
    this.overlay = document.createElement('canvas');
    this.overlay.width = 256;
    this.overlay.height = 144;
    this.overlay.className = 'viewport';
    const right = document.createElement('div');
    this.fitBadge = document.createElement('div');
    this.fitBadge.className = 'fit-badge';
    this.gaps = document.createElement('div');
    this.gaps.className = 'gaps';
    right.append(this.overlay, this.fitBadge);
    row.append(this.radar, right, this.gaps);
    panel.append(this.tabs, row);
    root.appendChild(panel);

    this.tabs.addEventListener('click', (ev) => {
      const id = (ev.target as HTMLElement).dataset['device'];
      if (id !== undefined) {
        this.selected = id;
        this.draw();
      }
    });
  }

  render(state: GatewayState): void {
    this.state = state;
    const ids = Object.keys(state.sections.devices);
    if (this.selected === null || !ids.includes(this.selected)) {
      this.selected = ids[0] ?? null;
    }
    this.tabs.innerHTML = ids
      .map(
        (id) =>
          `<button data-device="${id}" class="${id === this.selected ? 'active' : ''}">${id}</button>`,
      )
      .join('');
    this.draw();
  }

  private doc(): DeviceDoc | null {
    if (this.state === null || this.selected === null) return null;
    return this.state.sections.devices[this.selected] ?? null;
  }

  private draw(): void {
    const doc = this.doc();
    this.drawRadar(doc);
    this.drawOverlay(doc);
    this.drawGaps(doc);
  }

  private drawRadar(doc: DeviceDoc | null): void {
    const ctx = this.radar.getContext('2d')!;
    const { width, height } = this.radar;
    const cx = width / 2;
    const cy = height / 2;
    const R = Math.min(cx, cy) - 26;
    ctx.clearRect(0, 0, width, height);
    ctx.beginPath();
    ctx.strokeStyle = '#49566a';
    ctx.arc(cx, cy, R, 0, 2 * Math.PI);
    ctx.stroke();
    // Target at the center of the replica.
    ctx.fillStyle = '#d8b04a';
    ctx.beginPath();
    ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
    ctx.fill();
    if (doc === null) return;
    ctx.font = '10px system-ui, sans-serif';
    ctx.textAlign = 'center';
    for (const [id, bearing] of Object.entries(doc.compass)) {
      const p = bearingPoint(bearing, R);
      const self = id === String(doc.device);
      ctx.beginPath();
      ctx.fillStyle = self ? '#f0f4f8' : '#5aa9e6';
      ctx.arc(cx + p.x, cy + p.y, self ? 7 : 5, 0, 2 * Math.PI);
      ctx.fill();
      ctx.fillStyle = '#9aa7b4';
      // The printed bearing is the gateway value, digit for digit.
      ctx.fillText(`${id} ${fmtDeg(bearing)}`, cx + p.x, cy + p.y - 10);
    }
  }

  private drawOverlay(doc: DeviceDoc | null): void {
    const ctx = this.overlay.getContext('2d')!;
    const { width, height } = this.overlay;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = '#10151c';
    ctx.fillRect(0, 0, width, height);
    ctx.strokeStyle = '#49566a';
    ctx.strokeRect(0.5, 0.5, width - 1, height - 1);
    if (this.state === null || doc === null) return;
    const guide = this.state.sections.guide_box;
    if (guide !== null) {
      ctx.setLineDash([5, 4]);
      ctx.strokeStyle = '#6fd08c';
      ctx.strokeRect(
        (guide.cx - guide.w / 2) * width,
        (guide.cy - guide.h / 2) * height,
        guide.w * width,
        guide.h * height,
      );
      ctx.setLineDash([]);
    }
    const box = doc.target_box;
    if (box !== null) {
      ctx.fillStyle = 'rgba(90, 169, 230, 0.35)';
      ctx.strokeStyle = '#5aa9e6';
      const x = (box.cx - box.w / 2) * width;
      const y = (box.cy - box.h / 2) * height;
      ctx.fillRect(x, y, box.w * width, box.h * height);
      ctx.strokeRect(x, y, box.w * width, box.h * height);
    } else {
      ctx.fillStyle = '#b55';
      ctx.font = '11px system-ui, sans-serif';
      ctx.fillText('no view of target', 10, height / 2);
    }
    const fit = doc.guide_fit;
    if (fit === null) {
      this.fitBadge.textContent = guide === null ? 'no guide box set' : 'fit: --';
      this.fitBadge.className = 'fit-badge';
    } else {
      this.fitBadge.textContent =
        `${fit.satisfied ? 'FIT' : 'ADJUST'} size ${fmtNum(fit.size_ratio)} ` +
        `offset ${fmtNum(fit.center_offset)}`;
      this.fitBadge.className = `fit-badge ${fit.satisfied ? 'ok' : 'warn'}`;
    }
  }

  private drawGaps(doc: DeviceDoc | null): void {
    if (doc === null) {
      this.gaps.innerHTML = '';
      return;
    }
    const rows = adjacentGaps(doc.compass)
      .map(
        (g) =>
          `<div>${g.from}→${g.to} <b>${fmtDeg(g.gap_deg)}</b></div>`,
      )
      .join('');
    this.gaps.innerHTML = `<h3>neighbor gaps</h3>${rows}`;
  }
}
