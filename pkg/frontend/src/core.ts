// Pure state/stepping logic for the tuner UI, kept free of DOM and network
// so it is unit-testable. The server remains the validation authority; the
// steppers here only keep the client from sending values the server's
// divisibility/oddness rules would reject.

export interface SgmParams {
  min_disparity: number;
  num_disparities: number;
  block_size: number;
  p1: number;
  p2: number;
  disp12_max_diff: number;
  uniqueness_ratio: number;
  speckle_window_size: number;
  speckle_range: number;
  num_paths: number;
}

export interface ParamControlSpec {
  min: number;
  max: number;
  step: number;
  snap?: (value: number, params: SgmParams) => number;
}

/** Snap to the nearest positive multiple of 16. */
export function snapNumDisparities(value: number): number {
  const snapped = Math.round(value / 16) * 16;
  return Math.max(16, snapped);
}

/** Snap to the nearest odd integer >= 1. */
export function snapBlockSize(value: number): number {
  const v = Math.max(1, Math.round(value));
  return v % 2 === 0 ? v + 1 : v;
}

/** p2 must stay strictly greater than p1. */
export function clampP2(p1: number, p2: number): number {
  return p2 > p1 ? p2 : p1 + 1;
}

export const PARAM_SPECS: Record<keyof SgmParams, ParamControlSpec> = {
  min_disparity: { min: -64, max: 64, step: 1 },
  num_disparities: { min: 16, max: 256, step: 16, snap: (v) => snapNumDisparities(v) },
  block_size: { min: 1, max: 21, step: 2, snap: (v) => snapBlockSize(v) },
  p1: { min: 1, max: 500, step: 1, snap: (v) => Math.max(1, Math.round(v)) },
  p2: { min: 2, max: 2000, step: 1, snap: (v, p) => clampP2(p.p1, Math.round(v)) },
  disp12_max_diff: { min: -1, max: 16, step: 1 },
  uniqueness_ratio: { min: 0, max: 50, step: 1 },
  speckle_window_size: { min: 0, max: 400, step: 10 },
  speckle_range: { min: 1, max: 16, step: 1 },
  num_paths: { min: 4, max: 8, step: 4, snap: (v) => (v < 6 ? 4 : 8) },
};

export const PARAM_NAMES = Object.keys(PARAM_SPECS) as (keyof SgmParams)[];

/** Apply a control edit: snap to the rule-respecting grid for that field. */
export function snapParam(params: SgmParams, name: keyof SgmParams, value: number): number {
  const spec = PARAM_SPECS[name];
  const clamped = Math.min(spec.max, Math.max(spec.min, value));
  return spec.snap ? spec.snap(clamped, params) : Math.round(clamped);
}

export interface FrameEvent {
  type: "frame";
  generation: number;
  params: SgmParams;
  compute_ms: number;
  image_b64: string;
}

export interface ViewState {
  generation: number;
  image_b64: string | null;
  compute_ms: number;
}

/** Monotone-in-generation frame application; stale frames are dropped. */
export function applyFrame(state: ViewState, frame: FrameEvent): ViewState {
  if (state.image_b64 !== null && frame.generation < state.generation) return state;
  return { generation: frame.generation, image_b64: frame.image_b64, compute_ms: frame.compute_ms };
}

export interface Roi {
  x: number;
  y: number;
  w: number;
  h: number;
}

/** Rectangle from two drag corners, clamped to the image bounds. */
export function roiFromDrag(
  x0: number, y0: number, x1: number, y1: number, width: number, height: number
): Roi | null {
  const cx0 = Math.min(Math.max(Math.min(x0, x1), 0), width - 1);
  const cy0 = Math.min(Math.max(Math.min(y0, y1), 0), height - 1);
  const cx1 = Math.min(Math.max(Math.max(x0, x1), 0), width);
  const cy1 = Math.min(Math.max(Math.max(y0, y1), 0), height);
  const x = Math.floor(cx0);
  const y = Math.floor(cy0);
  const w = Math.max(1, Math.ceil(cx1) - x);
  const h = Math.max(1, Math.ceil(cy1) - y);
  if (x + w > width || y + h > height) {
    return { x, y, w: Math.min(w, width - x), h: Math.min(h, height - y) };
  }
  return { x, y, w, h };
}

/**
 * Tracks last-accepted vs pending edits so a server rejection can revert
 * the controls to known-good values.
 */
export class ParamStore {
  accepted: SgmParams;
  pending: SgmParams;

  constructor(initial: SgmParams) {
    this.accepted = { ...initial };
    this.pending = { ...initial };
  }

  edit(name: keyof SgmParams, value: number): SgmParams {
    this.pending = { ...this.pending, [name]: snapParam(this.pending, name, value) };
    if (name === "p1") {
      this.pending.p2 = clampP2(this.pending.p1, this.pending.p2);
    }
    return this.pending;
  }

  /** Fields that differ from the last server-accepted state. */
  diff(): Partial<SgmParams> {
    const out: Partial<SgmParams> = {};
    for (const name of PARAM_NAMES) {
      if (this.pending[name] !== this.accepted[name]) out[name] = this.pending[name];
    }
    return out;
  }

  accept(params: SgmParams): void {
    this.accepted = { ...params };
    this.pending = { ...params };
  }

  revert(): SgmParams {
    this.pending = { ...this.accepted };
    return this.pending;
  }
}

/** Trailing-edge debounce; repeated calls within `ms` coalesce into one. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void, ms: number
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, ms);
  };
}

export function formatDistance(distance: number | null | undefined): string {
  if (distance === null || distance === undefined || !isFinite(distance)) return "n/a";
  return `${distance.toFixed(3)} m`;
}
