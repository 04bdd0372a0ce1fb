// Gateway document shapes, mirrored verbatim from the server's JSON schema.
// The UI renders these as-is; nothing here is recomputed client-side.

export interface TimeDoc {
  time_ms: number;
  duration_ms: number;
}

export interface MembershipDoc {
  host: number;
  swarm_id: string | null;
  members: number[];
}

export interface Box {
  cx: number;
  cy: number;
  w: number;
  h: number;
}

export interface GuideFit {
  size_ratio: number;
  center_offset: number;
  satisfied: boolean;
}

export interface Ticks {
  capture_id: number;
  heard_ms: number[];
}

export interface DeviceDoc {
  device: number;
  phase: string;
  joined: boolean;
  angle_deg: number;
  radius_m: number;
  display_yaw_deg: number | null;
  compass: Record<string, number>;
  target_box: Box | null;
  guide_fit: GuideFit | null;
  ticks: Ticks | null;
  fired_at_ms: number | null;
}

export interface CountdownDoc {
  capture_id: number;
  mode: string;
  t_fire_ms: number;
  remaining_ms: number;
  rate_hz: number;
}

export interface CaptureDoc {
  mode: string;
  t_fire_ms: number;
  fired: Record<string, number>;
  missed: string[];
  mean_latency_ms?: number;
  max_skew_ms?: number;
}

export interface BrowseView {
  view: string;
  rel_yaw_deg: number;
  centered_yaw_deg: number;
  media: string;
}

export interface BrowseDoc {
  views: BrowseView[];
  selected: string | null;
  tilt_deg: number;
}

export interface TransitionDoc {
  t_ms: number;
  from: string;
  to: string;
}

export interface TimelineDoc {
  duration_ms: number;
  initial_view: string;
  current_view: string;
  transitions: TransitionDoc[];
}

export interface MetricsDoc {
  angle_rsd: number | null;
  size_rsd: number | null;
}

export interface Sections {
  time: TimeDoc;
  phase: string;
  membership: MembershipDoc;
  devices: Record<string, DeviceDoc>;
  guide_box: Box | null;
  countdown: CountdownDoc | null;
  capture: CaptureDoc | null;
  browse: BrowseDoc;
  timeline: TimelineDoc | null;
  metrics: MetricsDoc;
}

export interface Snapshot extends Sections {
  type: 'snapshot';
  seq: number;
}

export interface Delta {
  type: 'delta';
  seq: number;
  changed: Partial<Sections>;
}

export interface Ack {
  type: 'ack';
  id: number | null;
  code: string;
  phase: string;
  detail?: string;
  selected?: string;
  edl?: string;
}

export type ServerDoc = Snapshot | Delta | Ack;

export interface Command {
  id: number;
  cmd: string;
  args: Record<string, unknown>;
}

export interface GatewayState {
  seq: number;
  sections: Sections;
}
