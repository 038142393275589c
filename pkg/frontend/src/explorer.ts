// Results explorer logic: ranking rows, per-image overlays with per-pair
// tooltips, method hot-swap that keeps the viewport, and the SOTA series.
//
// GT overlay colors follow the platform convention: care regions green,
// don't-care regions red.

import type { RankingRow, SamplePayload, SotaPoint } from "./api.js";

export const CARE_COLOR = "#1a9641";
export const DONT_CARE_COLOR = "#d7191c";
export const DETECTION_COLOR = "#2b6cd4";

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export interface ExplorerState {
  task: string;
  protocol: string;
  image: string | null;
  method: string | null;
  viewport: Viewport;
}

export function initialExplorer(task: string, protocol: string): ExplorerState {
  return {
    task,
    protocol,
    image: null,
    method: null,
    viewport: { zoom: 1, panX: 0, panY: 0 },
  };
}

export function hotSwapMethod(state: ExplorerState, method: string): ExplorerState {
  // switching method keeps image and viewport so behaviours line up visually
  return { ...state, method };
}

export function selectImage(state: ExplorerState, image: string): ExplorerState {
  return { ...state, image, viewport: { zoom: 1, panX: 0, panY: 0 } };
}

export function gtColor(region: { care: boolean }): string {
  return region.care ? CARE_COLOR : DONT_CARE_COLOR;
}

export interface OverlayShape {
  kind: "gt" | "detection";
  id: string;
  points: number[][];
  color: string;
  dashed: boolean;
  tooltip: string;
}

export function buildOverlays(payload: SamplePayload): OverlayShape[] {
  const shapes: OverlayShape[] = [];
  const pairValue = new Map<number, string>();
  const matchedGt = new Map<string, string>();
  for (const match of payload.sample.matches) {
    const value =
      match.iou !== undefined
        ? `IoU ${(match.iou as number).toFixed(3)}`
        : `R ${(match.area_recall as number)?.toFixed(3)} / P ${(
            match.area_precision as number
          )?.toFixed(3)}`;
    pairValue.set(match.det, `matched ${match.gt}: ${value}`);
    matchedGt.set(match.gt, value);
  }
  const ignored = new Set(payload.sample.ignored_det);
  for (const gt of payload.gt ?? []) {
    const value = matchedGt.get(gt.node_id);
    shapes.push({
      kind: "gt",
      id: gt.node_id,
      points: gt.points,
      color: gtColor(gt),
      dashed: !gt.care,
      tooltip: value ? `${gt.node_id} (${value})` : `${gt.node_id} (unmatched)`,
    });
  }
  for (const det of payload.detections) {
    if (!det.points) continue;
    const suffix = ignored.has(det.index)
      ? "ignored (don't-care overlap)"
      : pairValue.get(det.index) ?? "unmatched";
    shapes.push({
      kind: "detection",
      id: `det ${det.index}`,
      points: det.points,
      color: DETECTION_COLOR,
      dashed: ignored.has(det.index),
      tooltip: `det ${det.index}: ${suffix}`,
    });
  }
  return shapes;
}

export function seriesIsNonDecreasing(series: SotaPoint[]): boolean {
  for (let i = 1; i < series.length; i++) {
    if (series[i].hmean < series[i - 1].hmean) return false;
  }
  return true;
}

export function rankingCells(row: RankingRow): string[] {
  return [
    row.method + (row.private ? " (private)" : ""),
    row.owner,
    row.date.slice(0, 10),
    row.precision.toFixed(6),
    row.recall.toFixed(6),
    row.hmean.toFixed(6),
  ];
}

export function sotaPath(
  series: SotaPoint[],
  width: number,
  height: number,
  pad = 24,
): string {
  // simple polyline path for an inline SVG chart
  if (series.length === 0) return "";
  const xs = series.map((_, i) =>
    series.length === 1 ? pad : pad + (i * (width - 2 * pad)) / (series.length - 1),
  );
  const ys = series.map((p) => height - pad - p.hmean * (height - 2 * pad));
  return xs.map((x, i) => `${i === 0 ? "M" : "L"}${x.toFixed(1)},${ys[i].toFixed(1)}`).join(" ");
}
