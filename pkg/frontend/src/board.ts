// Care / don't-care board: pure state transitions plus a batched flush.
//
// Cards move between the two columns locally ("optimistic"); one apply
// posts a single batched verdict request.  On any server rejection the
// board rolls back by refetching.  The card multiset is invariant under
// every operation; moves that return a card to its original side cancel
// the pending verdict instead of stacking a redundant one.

import type { Api, Board, BoardCard, VerdictRequest } from "./api.js";

export type Side = "care" | "dont_care";

export interface BoardState {
  collection: string;
  image: string;
  revision: number;
  care: BoardCard[];
  dontCare: BoardCard[];
  origin: Map<string, Side>;
  pending: Map<string, Side>;
}

export function fromServer(collection: string, board: Board): BoardState {
  const origin = new Map<string, Side>();
  for (const card of board.care) origin.set(card.node_id, "care");
  for (const card of board.dont_care) origin.set(card.node_id, "dont_care");
  return {
    collection,
    image: board.image,
    revision: board.revision,
    care: [...board.care],
    dontCare: [...board.dont_care],
    origin,
    pending: new Map(),
  };
}

function listOf(state: BoardState, side: Side): BoardCard[] {
  return side === "care" ? state.care : state.dontCare;
}

export function moveCard(state: BoardState, nodeId: string, to: Side): BoardState {
  const from: Side = state.care.some((c) => c.node_id === nodeId) ? "care" : "dont_care";
  if (from === to) return state;
  const card = listOf(state, from).find((c) => c.node_id === nodeId);
  if (!card) return state;
  const next: BoardState = {
    ...state,
    care: state.care.filter((c) => c.node_id !== nodeId),
    dontCare: state.dontCare.filter((c) => c.node_id !== nodeId),
    pending: new Map(state.pending),
  };
  listOf(next, to).push(card);
  if (state.origin.get(nodeId) === to) {
    next.pending.delete(nodeId); // back home: nothing to tell the server
  } else {
    next.pending.set(nodeId, to);
  }
  return next;
}

export function cardMultiset(state: BoardState): string[] {
  return [...state.care, ...state.dontCare].map((c) => c.node_id).sort();
}

export function pendingVerdicts(state: BoardState): VerdictRequest[] {
  return [...state.pending.entries()].map(([nodeId, side]) => ({
    collection: state.collection,
    image: state.image,
    node_id: nodeId,
    stage: "in_context",
    verdict: side === "care" ? "care" : "dont_care",
  }));
}

export interface ApplyResult {
  state: BoardState;
  applied: number;
  rolledBack: boolean;
}

export async function applyMoves(state: BoardState, api: Api): Promise<ApplyResult> {
  const verdicts = pendingVerdicts(state);
  if (verdicts.length === 0) {
    return { state, applied: 0, rolledBack: false };
  }
  try {
    await api.postVerdicts(verdicts);
  } catch {
    // concurrent edit (stale head or state change): drop local moves,
    // show the server's truth
    const fresh = await api.board(state.collection, state.image);
    return { state: fromServer(state.collection, fresh), applied: 0, rolledBack: true };
  }
  const fresh = await api.board(state.collection, state.image);
  return {
    state: fromServer(state.collection, fresh),
    applied: verdicts.length,
    rolledBack: false,
  };
}
