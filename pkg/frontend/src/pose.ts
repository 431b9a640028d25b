import type { OrbitState, PoseBounds } from "./types.js";

export type Mat3 = number[]; // 9 entries, row-major
export type Pose = number[]; // 12 entries, 3x4 row-major [R|t]

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9).fill(0);
  for (let i = 0; i < 3; i++)
    for (let j = 0; j < 3; j++)
      for (let k = 0; k < 3; k++) out[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return out;
}

export function matVec(a: Mat3, v: number[]): number[] {
  return [
    a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
    a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
    a[6] * v[0] + a[7] * v[1] + a[8] * v[2],
  ];
}

export function transpose(a: Mat3): Mat3 {
  return [a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]];
}

function rotY(deg: number): Mat3 {
  const r = (deg * Math.PI) / 180;
  const c = Math.cos(r), s = Math.sin(r);
  return [c, 0, s, 0, 1, 0, -s, 0, c];
}

function rotX(deg: number): Mat3 {
  const r = (deg * Math.PI) / 180;
  const c = Math.cos(r), s = Math.sin(r);
  return [1, 0, 0, 0, c, -s, 0, s, c];
}

export function poseRotation(p: Pose): Mat3 {
  return [p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]];
}

export function poseTranslation(p: Pose): number[] {
  return [p[3], p[7], p[11]];
}

export function buildPose(r: Mat3, t: number[]): Pose {
  return [r[0], r[1], r[2], t[0], r[3], r[4], r[5], t[1], r[6], r[7], r[8], t[2]];
}

/**
 * Orbit the canonical camera about the pivot point on its view axis:
 * rotate by azimuth (yaw) / elevation (pitch) around the pivot, then dolly
 * along the axis. Returned as the world->camera pose the service expects.
 */
export function orbitPose(canonical: Pose, pivotDepth: number, orbit: OrbitState): Pose {
  const ro = matMul(rotY(orbit.azimuthDeg), rotX(orbit.elevationDeg));
  const rc = poseRotation(canonical);
  const tc = poseTranslation(canonical);
  const pivot = [0, 0, pivotDepth];
  const roPivot = matVec(ro, pivot);
  const rot = matMul(ro, rc);
  const rt = matVec(ro, tc);
  const t = [
    rt[0] + pivot[0] - roPivot[0],
    rt[1] + pivot[1] - roPivot[1],
    rt[2] + pivot[2] - roPivot[2] + orbit.dolly,
  ];
  return buildPose(rot, t);
}

/** Mirror of the service's bounds test: translation delta and rotation angle
 * of a pose relative to the canonical one. */
export function poseOffset(canonical: Pose, pose: Pose): { dtInf: number; angleDeg: number } {
  const dr = matMul(poseRotation(pose), transpose(poseRotation(canonical)));
  const drTc = matVec(dr, poseTranslation(canonical));
  const t = poseTranslation(pose);
  const dt = [t[0] - drTc[0], t[1] - drTc[1], t[2] - drTc[2]];
  const trace = dr[0] + dr[4] + dr[8];
  const cos = Math.min(1, Math.max(-1, (trace - 1) / 2));
  return {
    dtInf: Math.max(Math.abs(dt[0]), Math.abs(dt[1]), Math.abs(dt[2])),
    angleDeg: (Math.acos(cos) * 180) / Math.PI,
  };
}

export function withinBounds(canonical: Pose, pose: Pose, bounds: PoseBounds): boolean {
  const { dtInf, angleDeg } = poseOffset(canonical, pose);
  return dtInf <= bounds.translation + 1e-9 && angleDeg <= bounds.rotation_deg + 1e-7;
}

/**
 * Largest in-bounds orbit along the ray toward the requested parameters
 * (bisection; identity is always valid). Keeps every issued pose inside
 * the session bounds, whatever the pivot depth.
 */
export function clampOrbit(
  canonical: Pose,
  pivotDepth: number,
  desired: OrbitState,
  bounds: PoseBounds,
): OrbitState {
  const at = (s: number): OrbitState => ({
    azimuthDeg: desired.azimuthDeg * s,
    elevationDeg: desired.elevationDeg * s,
    dolly: desired.dolly * s,
  });
  const ok = (s: number) => withinBounds(canonical, orbitPose(canonical, pivotDepth, at(s)), bounds);
  if (ok(1)) return desired;
  let lo = 0, hi = 1;
  for (let i = 0; i < 24; i++) {
    const mid = (lo + hi) / 2;
    if (ok(mid)) lo = mid;
    else hi = mid;
  }
  return at(lo);
}

/** Display limits for the orbit sliders implied by the session bounds. */
export function orbitLimits(pivotDepth: number, bounds: PoseBounds): { maxAngleDeg: number; maxDolly: number } {
  // orbiting by angle a moves the camera ~2*d*sin(a/2); invert for the
  // translation budget and respect the rotation budget
  const byTranslation = (2 * Math.asin(Math.min(1, bounds.translation / (2 * pivotDepth))) * 180) / Math.PI;
  return {
    maxAngleDeg: Math.min(bounds.rotation_deg, byTranslation),
    maxDolly: bounds.translation,
  };
}
