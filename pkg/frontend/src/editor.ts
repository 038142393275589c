// Annotation editor state: click-to-place draft quads with a live
// rectified preview.  The draft is validated with the same rules the
// server applies, so save can only be enabled for quads the server will
// accept; the preview homography is the same 8x8 solve the server runs.

import {
  applyHomography,
  canonicalizeQuad,
  type Matrix3,
  type Point,
  quadAspect,
  rectificationHomography,
} from "./geometry.js";

export interface EditorState {
  imageId: string;
  zoom: number;
  panX: number;
  panY: number;
  selectedNode: string | null;
  draft: Point[];
  dirty: boolean;
  headRevision: number;
}

export function createEditor(imageId: string, headRevision: number): EditorState {
  return {
    imageId,
    zoom: 1,
    panX: 0,
    panY: 0,
    selectedNode: null,
    draft: [],
    dirty: false,
    headRevision,
  };
}

export function addDraftPoint(state: EditorState, p: Point): EditorState {
  if (state.draft.length >= 4) return state;
  return { ...state, draft: [...state.draft, p], dirty: true };
}

export function dragDraftCorner(state: EditorState, index: number, p: Point): EditorState {
  if (index < 0 || index >= state.draft.length) return state;
  const draft = state.draft.map((q, i) => (i === index ? p : q));
  return { ...state, draft, dirty: true };
}

export function clearDraft(state: EditorState): EditorState {
  return { ...state, draft: [], dirty: false };
}

export type DraftStatus =
  | { state: "incomplete"; placed: number }
  | { state: "invalid"; reason: string }
  | { state: "valid"; corners: Point[] };

export function draftStatus(state: EditorState): DraftStatus {
  if (state.draft.length < 4) {
    return { state: "incomplete", placed: state.draft.length };
  }
  const check = canonicalizeQuad(state.draft);
  if (!check.ok) return { state: "invalid", reason: check.reason };
  return { state: "valid", corners: check.corners };
}

export function saveEnabled(state: EditorState): boolean {
  return draftStatus(state).state === "valid";
}

export interface Preview {
  homography: Matrix3;
  width: number;
  height: number;
  corners: Point[];
}

export function draftPreview(state: EditorState, cropH = 64): Preview | null {
  const status = draftStatus(state);
  if (status.state !== "valid") return null;
  const width = Math.max(1, Math.round(cropH * quadAspect(status.corners)));
  const homography = rectificationHomography(status.corners, width, cropH);
  return { homography, width, height: cropH, corners: status.corners };
}

export function previewCornerError(preview: Preview): number {
  // defining property of the rectification: corners land on the rect corners
  const targets: Point[] = [
    [0, 0],
    [preview.width, 0],
    [preview.width, preview.height],
    [0, preview.height],
  ];
  let worst = 0;
  for (let i = 0; i < 4; i++) {
    const mapped = applyHomography(preview.homography, preview.corners[i]);
    worst = Math.max(worst, Math.hypot(mapped[0] - targets[i][0], mapped[1] - targets[i][1]));
  }
  return worst;
}
