// Display-only formatting of gateway values. Numbers shown next to a unit
// come straight from the state documents; nothing is re-derived here beyond
// arithmetic between displayed values (neighbor gaps, per-device skew).

// Spacing reads as even at or below this relative standard deviation.
export const RSD_GREEN = 0.1;

export function fmtDeg(v: number | null | undefined, digits = 1): string {
  return v === null || v === undefined ? '--' : `${v.toFixed(digits)}°`;
}

export function fmtMs(v: number | null | undefined, digits = 1): string {
  return v === null || v === undefined ? '--' : `${v.toFixed(digits)} ms`;
}

export function fmtNum(v: number | null | undefined, digits = 3): string {
  return v === null || v === undefined ? '--' : v.toFixed(digits);
}

export function rsdLevel(v: number | null | undefined): 'ok' | 'warn' | 'none' {
  if (v === null || v === undefined) return 'none';
  return v <= RSD_GREEN ? 'ok' : 'warn';
}

export interface Gap {
  from: string;
  to: string;
  gap_deg: number;
}

// Angle between neighboring cameras on one device's compass: entries sorted
// by bearing, consecutive differences, wrapping the last back to the first.
export function adjacentGaps(compass: Record<string, number>): Gap[] {
  const entries = Object.entries(compass)
    .map(([id, bearing]) => ({ id, bearing }))
    .sort((a, b) => a.bearing - b.bearing || a.id.localeCompare(b.id));
  if (entries.length < 2) return [];
  return entries.map((e, i) => {
    const next = entries[(i + 1) % entries.length]!;
    const raw = next.bearing - e.bearing;
    return {
      from: e.id,
      to: next.id,
      gap_deg: i === entries.length - 1 ? raw + 360 : raw,
    };
  });
}
