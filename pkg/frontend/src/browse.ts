import { CommandGate, GatewayClient } from './client.js';
import { fmtDeg, fmtMs } from './format.js';
import type { Ack, GatewayState, TimelineDoc } from './types.js';

export interface RowSpan {
  view: string;
  t0: number;
  t1: number;
}

// Fold the transition markers into per-view occupancy spans; together the
// spans tile [0, duration] exactly (the gateway keeps markers ordered).
export function timelineSpans(tl: TimelineDoc): RowSpan[] {
  const spans: RowSpan[] = [];
  let view = tl.initial_view;
  let t = 0;
  for (const tr of tl.transitions) {
    spans.push({ view, t0: t, t1: tr.t_ms });
    view = tr.to;
    t = tr.t_ms;
  }
  spans.push({ view, t0: t, t1: tl.duration_ms });
  return spans;
}

export function cursorTime(x: number, width: number, durationMs: number): number {
  const f = Math.min(1, Math.max(0, width <= 0 ? 0 : x / width));
  return Math.round(f * durationMs);
}

const STRIP_LEFT = 40; // label gutter ahead of the time axis

export class BrowseCompose {
  private slider: HTMLInputElement;
  private tiltLabel: HTMLElement;
  private strip: HTMLElement;
  private lanes: HTMLCanvasElement;
  private exportBtn: HTMLButtonElement;
  private edlOut: HTMLPreElement;
  private status: HTMLElement;
  private client: GatewayClient;
  private gate: CommandGate;
  private state: GatewayState | null = null;
  private cursorMs = 0;
  private scrubbing = false;
  private moved = false;
  private downRow = -1;
  private sliderHeld = false;

  constructor(root: HTMLElement, client: GatewayClient) {
    this.client = client;
    const panel = document.createElement('section');
    panel.className = 'panel wide';
    panel.innerHTML = '<h2>Browse &amp; compose</h2>';

    const tiltRow = document.createElement('div');
    tiltRow.className = 'controls';
    this.slider = document.createElement('input');
    this.slider.type = 'range';
    this.slider.min = '-180';
    this.slider.max = '180';
    this.slider.step = '0.1';
    this.slider.value = '0';
    this.tiltLabel = document.createElement('span');
    this.tiltLabel.textContent = 'tilt 0.0°';
    tiltRow.append('tilt', this.slider, this.tiltLabel);

    this.strip = document.createElement('div');
    this.strip.className = 'view-strip';
    this.lanes = document.createElement('canvas');
    this.lanes.width = 560;
    this.lanes.height = 140;
    this.lanes.className = 'timeline';

    const exportRow = document.createElement('div');
    exportRow.className = 'controls';
    this.exportBtn = document.createElement('button');
    this.exportBtn.textContent = 'Export EDL';
    this.status = document.createElement('span');
    this.status.className = 'status';
    exportRow.append(this.exportBtn, this.status);
    this.edlOut = document.createElement('pre');
    this.edlOut.className = 'edl';

    panel.append(tiltRow, this.strip, this.lanes, exportRow, this.edlOut);
    root.appendChild(panel);

    this.gate = new CommandGate(client, (ack) => this.showAck(ack));
    this.slider.addEventListener('pointerdown', () => (this.sliderHeld = true));
    this.slider.addEventListener('pointerup', () => (this.sliderHeld = false));
    this.slider.addEventListener('input', () => {
      const tilt = Number(this.slider.value);
      this.tiltLabel.textContent = `tilt ${fmtDeg(tilt)}`;
      this.gate.send('select_view', { tilt_deg: tilt });
    });
    this.exportBtn.addEventListener('click', () => {
      this.client.send('export_edl').then(
        (ack) => {
          this.showAck(ack);
          // Shown byte for byte as the gateway serialized it.
          if (ack.edl !== undefined) this.edlOut.textContent = ack.edl;
        },
        () => {},
      );
    });
    // Dragging scrubs the interlocked cursor; a clean tap on a row cuts to
    // that row's view at the cursor.
    this.lanes.addEventListener('pointerdown', (ev) => this.onDown(ev));
    this.lanes.addEventListener('pointermove', (ev) => this.onScrub(ev));
    this.lanes.addEventListener('pointerup', () => this.onUp());
    this.lanes.addEventListener('pointerleave', () => (this.scrubbing = false));
  }

  private showAck(ack: Ack): void {
    this.status.textContent =
      ack.code === 'ok' ? 'ok' : `${ack.code}: ${ack.detail ?? ''}`;
    this.status.className = `status ${ack.code === 'ok' ? 'ok' : 'warn'}`;
  }

  private lanePoint(ev: PointerEvent): { x: number; y: number } {
    const rect = this.lanes.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) * this.lanes.width) / rect.width,
      y: ((ev.clientY - rect.top) * this.lanes.height) / rect.height,
    };
  }

  private onDown(ev: PointerEvent): void {
    const tl = this.state?.sections.timeline;
    if (tl == null) return;
    const { x, y } = this.lanePoint(ev);
    const views = this.state!.sections.browse.views;
    this.cursorMs = cursorTime(x - STRIP_LEFT, this.lanes.width - STRIP_LEFT,
                               tl.duration_ms);
    this.downRow = Math.floor(y / (this.lanes.height / Math.max(1, views.length)));
    this.scrubbing = true;
    this.moved = false;
    this.drawLanes();
  }

  private onScrub(ev: PointerEvent): void {
    const tl = this.state?.sections.timeline;
    if (!this.scrubbing || tl == null) return;
    const { x } = this.lanePoint(ev);
    const next = cursorTime(x - STRIP_LEFT, this.lanes.width - STRIP_LEFT,
                            tl.duration_ms);
    if (next !== this.cursorMs) this.moved = true;
    this.cursorMs = next;
    this.drawLanes();
  }

  private onUp(): void {
    if (!this.scrubbing) return;
    this.scrubbing = false;
    if (this.moved) return; // it was a seek, not a tap
    const views = this.state?.sections.browse.views ?? [];
    const view = views[this.downRow];
    if (view !== undefined && view.view !== this.currentViewAt(this.cursorMs)) {
      this.client.send('add_transition', {
        t_ms: this.cursorMs,
        view: view.view,
      }).then((ack) => this.showAck(ack), () => {});
    }
  }

  private currentViewAt(tMs: number): string | null {
    const tl = this.state?.sections.timeline;
    if (tl == null) return null;
    const span = timelineSpans(tl).find((sp) => sp.t0 <= tMs && tMs < sp.t1);
    return span?.view ?? tl.current_view;
  }

  render(state: GatewayState): void {
    this.state = state;
    const browse = state.sections.browse;
    if (!this.sliderHeld) {
      this.slider.value = String(browse.tilt_deg);
      this.tiltLabel.textContent = `tilt ${fmtDeg(browse.tilt_deg)}`;
    }
    this.drawStrip();
    this.drawLanes();
  }

  private drawStrip(): void {
    if (this.state === null) return;
    const s = this.state.sections;
    this.strip.innerHTML = '';
    for (const v of s.browse.views) {
      const card = document.createElement('div');
      card.className = `view-card ${v.view === s.browse.selected ? 'selected' : ''}`;
      const canvas = document.createElement('canvas');
      canvas.width = 112;
      canvas.height = 63;
      const ctx = canvas.getContext('2d')!;
      ctx.fillStyle = '#10151c';
      ctx.fillRect(0, 0, canvas.width, canvas.height);
      // Synthetic render: the projected target rectangle from this view's
      // device, straight from the gateway document.
      const box = s.devices[v.view]?.target_box;
      if (box != null) {
        ctx.fillStyle = '#d8b04a';
        ctx.fillRect(
          (box.cx - box.w / 2) * canvas.width,
          (box.cy - box.h / 2) * canvas.height,
          box.w * canvas.width,
          box.h * canvas.height,
        );
      }
      const label = document.createElement('div');
      label.innerHTML =
        `<b>${v.view}</b> rel ${fmtDeg(v.rel_yaw_deg)}<br>` +
        `centered ${fmtDeg(v.centered_yaw_deg)}`;
      card.append(canvas, label);
      card.addEventListener('click', () => {
        this.gate.send('select_view', { tilt_deg: v.centered_yaw_deg });
      });
      this.strip.appendChild(card);
    }
  }

  private drawLanes(): void {
    const ctx = this.lanes.getContext('2d')!;
    const { width, height } = this.lanes;
    ctx.clearRect(0, 0, width, height);
    if (this.state === null) return;
    const s = this.state.sections;
    const tl = s.timeline;
    const views = s.browse.views;
    if (tl === null || views.length === 0) {
      ctx.fillStyle = '#77808d';
      ctx.font = '11px system-ui, sans-serif';
      ctx.fillText('no editable timeline (video capture required)', 10, 20);
      return;
    }
    const laneH = height / views.length;
    const axisW = width - STRIP_LEFT;
    const spans = timelineSpans(tl);
    ctx.font = '10px system-ui, sans-serif';
    ctx.textBaseline = 'middle';
    views.forEach((v, i) => {
      const y0 = i * laneH;
      ctx.fillStyle = '#1a212b';
      ctx.fillRect(STRIP_LEFT, y0 + 2, axisW, laneH - 4);
      ctx.fillStyle = '#9aa7b4';
      ctx.textAlign = 'left';
      ctx.fillText(v.view, 6, y0 + laneH / 2);
      ctx.fillStyle = '#5aa9e6';
      for (const sp of spans) {
        if (sp.view !== v.view) continue;
        const x0 = STRIP_LEFT + (sp.t0 / tl.duration_ms) * axisW;
        const x1 = STRIP_LEFT + (sp.t1 / tl.duration_ms) * axisW;
        ctx.fillRect(x0, y0 + 2, Math.max(1, x1 - x0), laneH - 4);
      }
    });
    for (const tr of tl.transitions) {
      const x = STRIP_LEFT + (tr.t_ms / tl.duration_ms) * axisW;
      ctx.strokeStyle = '#d8b04a';
      ctx.beginPath();
      ctx.moveTo(x, 0);
      ctx.lineTo(x, height);
      ctx.stroke();
    }
    // One cursor, interlocked across every row.
    const cx = STRIP_LEFT + (this.cursorMs / tl.duration_ms) * axisW;
    ctx.strokeStyle = '#f0f4f8';
    ctx.beginPath();
    ctx.moveTo(cx, 0);
    ctx.lineTo(cx, height);
    ctx.stroke();
    ctx.fillStyle = '#f0f4f8';
    ctx.textAlign = 'left';
    ctx.fillText(fmtMs(this.cursorMs, 0), Math.min(cx + 4, width - 48), 8);
  }
}
