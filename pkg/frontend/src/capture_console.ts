import { GatewayClient } from './client.js';
import { fmtMs } from './format.js';
import type { Ack, GatewayState } from './types.js';

// Countdown packets span a 5 s window before the fire instant; the slack on
// both sides keeps first-packet latency and post-fire stragglers visible.
const WINDOW_BEFORE_MS = 5600;
const WINDOW_AFTER_MS = 400;

export function tickX(t: number, t0: number, t1: number, width: number): number {
  if (t1 <= t0) return 0;
  return ((t - t0) / (t1 - t0)) * width;
}

// The lane axis centers on the scheduled fire instant: the finished capture
// if there is one, else the running countdown.
export function captureWindow(
  state: GatewayState,
): { t0: number; t1: number; t_fire: number } | null {
  const s = state.sections;
  const tFire = s.capture?.t_fire_ms ?? s.countdown?.t_fire_ms;
  if (tFire === undefined) return null;
  return { t0: tFire - WINDOW_BEFORE_MS, t1: tFire + WINDOW_AFTER_MS, t_fire: tFire };
}

export class CaptureConsole {
  private mode: HTMLSelectElement;
  private rate: HTMLInputElement;
  private videoMs: HTMLInputElement;
  private armBtn: HTMLButtonElement;
  private cancelBtn: HTMLButtonElement;
  private status: HTMLElement;
  private lanes: HTMLCanvasElement;
  private table: HTMLElement;
  private client: GatewayClient;
  private state: GatewayState | null = null;

  constructor(root: HTMLElement, client: GatewayClient) {
    this.client = client;
    const panel = document.createElement('section');
    panel.className = 'panel';
    panel.innerHTML = '<h2>Capture</h2>';

    const controls = document.createElement('div');
    controls.className = 'controls';
    this.mode = document.createElement('select');
    this.mode.innerHTML = '<option value="photo">photo</option><option value="video">video</option>';
    this.rate = document.createElement('input');
    this.rate.type = 'number';
    this.rate.value = '20';
    this.rate.title = 'countdown rate (Hz)';
    this.videoMs = document.createElement('input');
    this.videoMs.type = 'number';
    this.videoMs.value = '4000';
    this.videoMs.title = 'video duration (ms)';
    this.armBtn = document.createElement('button');
    this.armBtn.textContent = 'Arm';
    this.cancelBtn = document.createElement('button');
    this.cancelBtn.textContent = 'Cancel';
    this.status = document.createElement('span');
    this.status.className = 'status';
    controls.append(this.mode, this.rate, this.videoMs, this.armBtn,
                    this.cancelBtn, this.status);

    this.lanes = document.createElement('canvas');
    this.lanes.width = 560;
    this.lanes.height = 150;
    this.lanes.className = 'lanes';
    this.table = document.createElement('div');
    this.table.className = 'skew-table';
    panel.append(controls, this.lanes, this.table);
    root.appendChild(panel);

    this.armBtn.addEventListener('click', () => this.arm());
    this.cancelBtn.addEventListener('click', () => {
      this.client.send('cancel_capture').then(
        (ack) => this.showAck(ack),
        () => {},
      );
    });
  }

  private arm(): void {
    const args: Record<string, unknown> = {
      mode: this.mode.value,
      rate_hz: Number(this.rate.value),
    };
    if (this.mode.value === 'video') args['video_ms'] = Number(this.videoMs.value);
    this.client.send('arm_capture', args).then(
      (ack) => this.showAck(ack),
      () => {},
    );
  }

  private showAck(ack: Ack): void {
    this.status.textContent =
      ack.code === 'ok' ? `ok (${ack.phase})` : `${ack.code}: ${ack.detail ?? ''}`;
    this.status.className = `status ${ack.code === 'ok' ? 'ok' : 'warn'}`;
  }

  render(state: GatewayState): void {
    this.state = state;
    const phase = state.sections.phase;
    this.armBtn.disabled = phase !== 'positioning' && phase !== 'armed';
    this.cancelBtn.disabled = phase !== 'armed';
    this.drawLanes();
    this.drawTable();
  }

  private drawLanes(): void {
    const ctx = this.lanes.getContext('2d')!;
    const { width, height } = this.lanes;
    ctx.clearRect(0, 0, width, height);
    if (this.state === null) return;
    const win = captureWindow(this.state);
    const s = this.state.sections;
    const ids = Object.keys(s.devices);
    const laneH = height / Math.max(1, ids.length);
    ctx.font = '10px system-ui, sans-serif';
    ctx.textBaseline = 'middle';
    ids.forEach((id, i) => {
      const y = (i + 0.5) * laneH;
      ctx.strokeStyle = '#2a3442';
      ctx.beginPath();
      ctx.moveTo(34, y);
      ctx.lineTo(width, y);
      ctx.stroke();
      ctx.fillStyle = '#9aa7b4';
      ctx.textAlign = 'left';
      ctx.fillText(id, 6, y);
      if (win === null) return;
      const dev = s.devices[id]!;
      ctx.strokeStyle = '#5aa9e6';
      for (const t of dev.ticks?.heard_ms ?? []) {
        const x = 34 + tickX(t, win.t0, win.t1, width - 34);
        ctx.beginPath();
        ctx.moveTo(x, y - laneH * 0.22);
        ctx.lineTo(x, y + laneH * 0.22);
        ctx.stroke();
      }
      if (dev.fired_at_ms !== null) {
        const x = 34 + tickX(dev.fired_at_ms, win.t0, win.t1, width - 34);
        ctx.strokeStyle = '#6fd08c';
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.moveTo(x, y - laneH * 0.4);
        ctx.lineTo(x, y + laneH * 0.4);
        ctx.stroke();
        ctx.lineWidth = 1;
      }
    });
    if (win !== null) {
      const x = 34 + tickX(win.t_fire, win.t0, win.t1, width - 34);
      ctx.strokeStyle = '#d8b04a';
      ctx.setLineDash([3, 3]);
      ctx.beginPath();
      ctx.moveTo(x, 0);
      ctx.lineTo(x, height);
      ctx.stroke();
      ctx.setLineDash([]);
    }
  }

  private drawTable(): void {
    if (this.state === null) {
      this.table.innerHTML = '';
      return;
    }
    const s = this.state.sections;
    const cd = s.countdown;
    const cap = s.capture;
    let head = '';
    if (cd !== null) {
      head = `<div class="countdown">T−${fmtMs(cd.remaining_ms, 0)} ` +
        `(${cd.mode}, capture ${cd.capture_id}, ${cd.rate_hz} Hz)</div>`;
    }
    if (cap === null) {
      this.table.innerHTML = head;
      return;
    }
    const rows = Object.keys(s.devices)
      .map((id) => {
        const dev = s.devices[id]!;
        const packets = dev.ticks?.heard_ms.length ?? 0;
        const fired = dev.fired_at_ms;
        // Per-device skew is display arithmetic on two gateway numbers.
        const skew = fired === null ? null : fired - cap.t_fire_ms;
        const missed = cap.missed.includes(id);
        return `<tr class="${missed ? 'warn' : ''}"><td>${id}</td>` +
          `<td>${packets}</td><td>${fmtMs(fired)}</td>` +
          `<td>${missed ? 'MISSED' : fmtMs(skew)}</td></tr>`;
      })
      .join('');
    this.table.innerHTML =
      `${head}<table><tr><th>device</th><th>packets</th><th>fired at</th>` +
      `<th>skew</th></tr>${rows}</table>` +
      `<div class="summary">max skew <b>${fmtMs(cap.max_skew_ms)}</b> · ` +
      `mean latency <b>${fmtMs(cap.mean_latency_ms)}</b></div>`;
  }
}
