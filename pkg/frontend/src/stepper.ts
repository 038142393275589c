// Out-of-context verification stepper: one word at a time, in the
// server's seeded order, with progress persisted so a session can resume
// where it stopped.  Skip advances without posting anything.

import type { Api, QueueEntry } from "./api.js";

export interface StepperState {
  collection: string;
  seed: number;
  queue: QueueEntry[];
  index: number;
}

export interface ProgressStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export function progressKey(collection: string, seed: number): string {
  return `rrc.verify.${collection}.${seed}`;
}

export function createStepper(
  collection: string,
  seed: number,
  queue: QueueEntry[],
  storage: ProgressStore,
): StepperState {
  const saved = storage.getItem(progressKey(collection, seed));
  let index = 0;
  if (saved !== null) {
    const parsed = Number.parseInt(saved, 10);
    if (Number.isFinite(parsed) && parsed >= 0 && parsed <= queue.length) {
      index = parsed;
    }
  }
  return { collection, seed, queue, index };
}

export function currentCard(state: StepperState): QueueEntry | null {
  return state.index < state.queue.length ? state.queue[state.index] : null;
}

export function done(state: StepperState): boolean {
  return state.index >= state.queue.length;
}

function advance(state: StepperState, storage: ProgressStore): StepperState {
  const next = { ...state, index: state.index + 1 };
  storage.setItem(progressKey(state.collection, state.seed), String(next.index));
  return next;
}

export async function judge(
  state: StepperState,
  verdict: "care" | "dont_care" | "skip",
  api: Api,
  storage: ProgressStore,
): Promise<StepperState> {
  const card = currentCard(state);
  if (!card) return state;
  if (verdict !== "skip") {
    await api.postVerdicts([
      {
        collection: state.collection,
        image: card.image,
        node_id: card.node_id,
        stage: "out_of_context",
        verdict,
      },
    ]);
  }
  return advance(state, storage);
}
