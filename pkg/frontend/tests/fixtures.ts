import type { DeviceDoc, Sections, Snapshot } from '../src/types.js';

export function deviceDoc(id: number, over: Partial<DeviceDoc> = {}): DeviceDoc {
  return {
    device: id,
    phase: 'positioning',
    joined: true,
    angle_deg: id * 30,
    radius_m: 2.5,
    display_yaw_deg: -id * 30,
    compass: { [String(id)]: 180.0 },
    target_box: { cx: 0.5, cy: 0.5, w: 0.2, h: 0.4 },
    guide_fit: null,
    ticks: null,
    fired_at_ms: null,
    ...over,
  };
}

export function sections(over: Partial<Sections> = {}): Sections {
  return {
    time: { time_ms: 1000, duration_ms: 60000 },
    phase: 'positioning',
    membership: { host: 1, swarm_id: '00000001deadbeef', members: [1, 2] },
    devices: { '1': deviceDoc(1), '2': deviceDoc(2) },
    guide_box: null,
    countdown: null,
    capture: null,
    browse: { views: [], selected: null, tilt_deg: 0 },
    timeline: null,
    metrics: { angle_rsd: 0.25, size_rsd: 0.12 },
    ...over,
  };
}

export function snapshot(seq = 0, over: Partial<Sections> = {}): Snapshot {
  return { type: 'snapshot', seq, ...sections(over) };
}
