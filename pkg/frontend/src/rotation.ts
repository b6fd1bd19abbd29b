/** 3x3 rotation and 9D box math shared by the annotation and verify screens. */

export type Mat3 = [
  [number, number, number],
  [number, number, number],
  [number, number, number],
];
export type Vec3 = [number, number, number];

export interface Pose9D {
  rotation: Mat3;
  translation: Vec3;
  extents: Vec3;
}

export const IDENTITY: Mat3 = [
  [1, 0, 0],
  [0, 1, 0],
  [0, 0, 1],
];

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: number[][] = [];
  for (let i = 0; i < 3; i++) {
    out.push([0, 0, 0]);
    for (let j = 0; j < 3; j++) {
      for (let k = 0; k < 3; k++) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out as Mat3;
}

export function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

export function transpose(m: Mat3): Mat3 {
  return [
    [m[0][0], m[1][0], m[2][0]],
    [m[0][1], m[1][1], m[2][1]],
    [m[0][2], m[1][2], m[2][2]],
  ];
}

export function rotationAboutAxis(axis: "x" | "y" | "z", radians: number): Mat3 {
  const c = Math.cos(radians);
  const s = Math.sin(radians);
  if (axis === "x") {
    return [
      [1, 0, 0],
      [0, c, -s],
      [0, s, c],
    ];
  }
  if (axis === "y") {
    return [
      [c, 0, s],
      [0, 1, 0],
      [-s, 0, c],
    ];
  }
  return [
    [c, -s, 0],
    [s, c, 0],
    [0, 0, 1],
  ];
}

function column(m: Mat3, j: number): Vec3 {
  return [m[0][j], m[1][j], m[2][j]];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

/**
 * Re-orthonormalize a near-rotation after accumulated float drift:
 * Gram-Schmidt on the first two columns, third column from the cross product
 * so the determinant stays +1.
 */
export function orthonormalize(m: Mat3): Mat3 {
  const c0 = normalize(column(m, 0));
  let c1 = column(m, 1);
  const p = dot(c0, c1);
  c1 = normalize([c1[0] - p * c0[0], c1[1] - p * c0[1], c1[2] - p * c0[2]]);
  const c2 = cross(c0, c1);
  return [
    [c0[0], c1[0], c2[0]],
    [c0[1], c1[1], c2[1]],
    [c0[2], c1[2], c2[2]],
  ];
}

/** Geodesic angle between two rotations, in radians. */
export function geodesicDistance(a: Mat3, b: Mat3): number {
  const rel = matMul(transpose(a), b);
  const trace = rel[0][0] + rel[1][1] + rel[2][2];
  return Math.acos(Math.min(1, Math.max(-1, (trace - 1) / 2)));
}

/** Map a point with a 9D pose treated as a rigid transform. */
export function applyPose(pose: Pose9D, p: Vec3): Vec3 {
  const r = matVec(pose.rotation, p);
  return [
    r[0] + pose.translation[0],
    r[1] + pose.translation[1],
    r[2] + pose.translation[2],
  ];
}

/**
 * The 8 box corners: canonical unit-box corners scaled by the extents and
 * pushed through the pose.  Corner i has sign bits (i&4 -> x, i&2 -> y,
 * i&1 -> z), matching the server's corner ordering.
 */
export function boxCorners(pose: Pose9D): Vec3[] {
  const corners: Vec3[] = [];
  for (let i = 0; i < 8; i++) {
    const local: Vec3 = [
      (i & 4 ? 0.5 : -0.5) * pose.extents[0],
      (i & 2 ? 0.5 : -0.5) * pose.extents[1],
      (i & 1 ? 0.5 : -0.5) * pose.extents[2],
    ];
    corners.push(applyPose(pose, local));
  }
  return corners;
}
