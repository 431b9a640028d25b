export interface PoseBounds {
  translation: number;
  rotation_deg: number;
}

export interface SessionInfo {
  resolution: [number, number];
  camera: { fx: number; fy: number; cx: number; cy: number };
  canonical_pose: number[]; // 12 floats, 3x4 row-major
  bounds: PoseBounds;
  points: number;
  pivot_depth: number;
  style_id: string | null;
}

/** Orbit parameters relative to the canonical camera. */
export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  /** dolly along the view axis, in scene units (0 = canonical distance) */
  dolly: number;
}

export interface StyleResult {
  style_id: string;
  cache_hit: boolean;
}
