// Client-side quad validation and rectification homography.
//
// Mirrors the server exactly: canonical corner order starts at the corner
// minimizing x+y (ties: smaller y, then x) and runs clockwise on screen
// (y grows down); the 8-unknown rectification system is solved after
// Hartley normalization so both sides agree to well under 1e-6.

export type Point = [number, number];
export type Matrix3 = number[][];

export type QuadCheck =
  | { ok: true; corners: Point[] }
  | { ok: false; reason: "self-intersecting" | "zero-area" | "non-convex" | "incomplete" };

function cross(o: Point, a: Point, b: Point): number {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

function signedArea(pts: Point[]): number {
  let acc = 0;
  for (let i = 0; i < pts.length; i++) {
    const [x1, y1] = pts[i];
    const [x2, y2] = pts[(i + 1) % pts.length];
    acc += x1 * y2 - x2 * y1;
  }
  return acc / 2;
}

function segmentsCross(a: Point, b: Point, c: Point, d: Point): boolean {
  const d1 = cross(c, d, a);
  const d2 = cross(c, d, b);
  const d3 = cross(a, b, c);
  const d4 = cross(a, b, d);
  return d1 > 0 !== d2 > 0 && d3 > 0 !== d4 > 0;
}

const EPS = 1e-9;

export function canonicalizeQuad(points: Point[]): QuadCheck {
  if (points.length !== 4) return { ok: false, reason: "incomplete" };
  let pts = points.map((p) => [p[0], p[1]] as Point);
  if (
    segmentsCross(pts[0], pts[1], pts[2], pts[3]) ||
    segmentsCross(pts[1], pts[2], pts[3], pts[0])
  ) {
    return { ok: false, reason: "self-intersecting" };
  }
  const area2 = signedArea(pts);
  if (Math.abs(area2) <= EPS) return { ok: false, reason: "zero-area" };
  if (area2 < 0) pts = [pts[0], pts[3], pts[2], pts[1]];
  for (let i = 0; i < 4; i++) {
    if (cross(pts[(i + 3) % 4], pts[i], pts[(i + 1) % 4]) <= EPS) {
      return { ok: false, reason: "non-convex" };
    }
  }
  let start = 0;
  const key = (p: Point) => [p[0] + p[1], p[1], p[0]];
  for (let i = 1; i < 4; i++) {
    const a = key(pts[i]);
    const b = key(pts[start]);
    if (a[0] < b[0] || (a[0] === b[0] && (a[1] < b[1] || (a[1] === b[1] && a[2] < b[2])))) {
      start = i;
    }
  }
  const corners = [0, 1, 2, 3].map((i) => pts[(start + i) % 4]);
  return { ok: true, corners };
}

function solveLinear(a: number[][], b: number[]): number[] {
  // Gaussian elimination with partial pivoting on an n x n system.
  const n = b.length;
  const m = a.map((row, i) => [...row, b[i]]);
  for (let col = 0; col < n; col++) {
    let piv = col;
    for (let r = col + 1; r < n; r++) {
      if (Math.abs(m[r][col]) > Math.abs(m[piv][col])) piv = r;
    }
    if (Math.abs(m[piv][col]) < 1e-14) throw new Error("singular system");
    [m[col], m[piv]] = [m[piv], m[col]];
    const pivot = m[col][col];
    for (let c = col; c <= n; c++) m[col][c] /= pivot;
    for (let r = 0; r < n; r++) {
      if (r === col || m[r][col] === 0) continue;
      const f = m[r][col];
      for (let c = col; c <= n; c++) m[r][c] -= f * m[col][c];
    }
  }
  return m.map((row) => row[n]);
}

function normalizingTransform(pts: Point[]): Matrix3 {
  const cx = pts.reduce((s, p) => s + p[0], 0) / pts.length;
  const cy = pts.reduce((s, p) => s + p[1], 0) / pts.length;
  const rms = Math.sqrt(
    pts.reduce((s, p) => s + (p[0] - cx) ** 2 + (p[1] - cy) ** 2, 0) / pts.length,
  );
  const s = rms > 0 ? Math.SQRT2 / rms : 1;
  return [
    [s, 0, -s * cx],
    [0, s, -s * cy],
    [0, 0, 1],
  ];
}

function mat3Mul(a: Matrix3, b: Matrix3): Matrix3 {
  const out: Matrix3 = [
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
  ];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out;
}

export function invert3(m: Matrix3): Matrix3 {
  const [a, b, c] = m[0];
  const [d, e, f] = m[1];
  const [g, h, i] = m[2];
  const det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  if (Math.abs(det) < 1e-15) throw new Error("matrix not invertible");
  return [
    [(e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det],
    [(f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det],
    [(d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det],
  ];
}

export function rectificationHomography(
  corners: Point[],
  outW: number,
  outH: number,
): Matrix3 {
  const targets: Point[] = [
    [0, 0],
    [outW, 0],
    [outW, outH],
    [0, outH],
  ];
  const tIn = normalizingTransform(corners);
  const tOut = normalizingTransform(targets);
  const apply = (t: Matrix3, p: Point): Point => [
    t[0][0] * p[0] + t[0][2],
    t[1][1] * p[1] + t[1][2],
  ];
  const a: number[][] = [];
  const rhs: number[] = [];
  for (let i = 0; i < 4; i++) {
    const [x, y] = apply(tIn, corners[i]);
    const [u, v] = apply(tOut, targets[i]);
    a.push([x, y, 1, 0, 0, 0, -u * x, -u * y]);
    a.push([0, 0, 0, x, y, 1, -v * x, -v * y]);
    rhs.push(u, v);
  }
  const h = solveLinear(a, rhs);
  const norm: Matrix3 = [
    [h[0], h[1], h[2]],
    [h[3], h[4], h[5]],
    [h[6], h[7], 1],
  ];
  const full = mat3Mul(invert3(tOut), mat3Mul(norm, tIn));
  const scale = full[2][2];
  return full.map((row) => row.map((v) => v / scale));
}

export function applyHomography(h: Matrix3, p: Point): Point {
  const w = h[2][0] * p[0] + h[2][1] * p[1] + h[2][2];
  return [
    (h[0][0] * p[0] + h[0][1] * p[1] + h[0][2]) / w,
    (h[1][0] * p[0] + h[1][1] * p[1] + h[1][2]) / w,
  ];
}

export function quadAspect(corners: Point[]): number {
  const d = (p: Point, q: Point) => Math.hypot(q[0] - p[0], q[1] - p[1]);
  const w = (d(corners[0], corners[1]) + d(corners[3], corners[2])) / 2;
  const h = (d(corners[0], corners[3]) + d(corners[1], corners[2])) / 2;
  return w / h;
}
