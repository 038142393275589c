// Thin typed client for the portal /api surface.  Every state-changing
// interaction in the UI goes through here; the server re-validates all of it.

export interface Session {
  token: string;
  user: { id: string; email: string; display_name: string; role: string };
}

export interface BoardCard {
  node_id: string;
  transcription: string;
  points?: number[][];
  crop_w?: number;
  crop_h?: number;
  homography?: number[][];
}

export interface Board {
  image: string;
  revision: number;
  care: BoardCard[];
  dont_care: BoardCard[];
}

export interface QueueEntry {
  image: string;
  node_id: string;
  care: boolean;
  transcription: string;
  points?: number[][];
  crop_w?: number;
  crop_h?: number;
  homography?: number[][];
}

export interface RankingRow {
  submission: string;
  method: string;
  owner: string;
  date: string;
  precision: number;
  recall: number;
  hmean: number;
  private: boolean;
}

export interface SotaPoint {
  date: string;
  hmean: number;
  method: string;
}

export interface VerdictRequest {
  collection: string;
  image: string;
  node_id: string;
  stage: "in_context" | "out_of_context";
  verdict: "care" | "dont_care";
}

export interface SamplePayload {
  image: string;
  protocol: string;
  sample: {
    matches: { gt: string; det: number; iou?: number; [k: string]: unknown }[];
    unmatched_gt: string[];
    unmatched_det: number[];
    ignored_det: number[];
    sample_precision: number;
    sample_recall: number;
  };
  detections: {
    index: number;
    points: number[][] | null;
    confidence: number | null;
    transcription: string | null;
  }[];
  gt:
    | { node_id: string; points: number[][]; care: boolean; transcription: string }[]
    | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: unknown,
  ) {
    super(`${status} ${code}`);
  }
}

export class Api {
  token: string | null = null;

  constructor(private base: string = "") {}

  private headers(): Record<string, string> {
    return this.token ? { Authorization: `Bearer ${this.token}` } : {};
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: this.headers() };
    if (body !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await fetch(this.base + path, init);
    if (!res.ok) {
      let payload: { error?: string; detail?: unknown } = {};
      try {
        payload = await res.json();
      } catch {
        // non-JSON error body
      }
      throw new ApiError(res.status, payload.error ?? "Error", payload.detail);
    }
    return (await res.json()) as T;
  }

  async login(email: string, password: string): Promise<Session> {
    const session = await this.request<Session>("POST", "/api/sessions", {
      email,
      password,
    });
    this.token = session.token;
    return session;
  }

  register(email: string, displayName: string, password: string) {
    return this.request("POST", "/api/users", {
      email,
      display_name: displayName,
      password,
    });
  }

  listTasks() {
    return this.request<{ tid: string; title: string; evaluations: { id: string }[] }[]>(
      "GET",
      "/api/tasks",
    );
  }

  rankings(tid: string, protocol: string) {
    return this.request<{ rows: RankingRow[] }>(
      "GET",
      `/api/tasks/${tid}/rankings?protocol=${encodeURIComponent(protocol)}`,
    );
  }

  sota(tid: string, protocol: string) {
    return this.request<{ series: SotaPoint[] }>(
      "GET",
      `/api/tasks/${tid}/sota?protocol=${encodeURIComponent(protocol)}`,
    );
  }

  sample(sid: string, image: string, protocol: string) {
    return this.request<SamplePayload>(
      "GET",
      `/api/submissions/${sid}/samples/${image}?protocol=${encodeURIComponent(protocol)}`,
    );
  }

  annotation(cid: string, iid: string) {
    return this.request<{ revision: number; tree: unknown[] }>(
      "GET",
      `/api/collections/${cid}/images/${iid}/annotation`,
    );
  }

  saveAnnotation(cid: string, iid: string, tree: unknown[], expectedHead: number) {
    return this.request<{ revision: number }>(
      "PUT",
      `/api/collections/${cid}/images/${iid}/annotation`,
      { tree, expected_head: expectedHead },
    );
  }

  board(cid: string, iid: string) {
    return this.request<Board>(
      "GET",
      `/api/collections/${cid}/images/${iid}/verification/in-context`,
    );
  }

  postVerdicts(verdicts: VerdictRequest[]) {
    return this.request<{ results: { node_id: string; care: boolean }[] }>(
      "POST",
      "/api/verification/verdicts",
      { verdicts },
    );
  }

  outOfContextQueue(cid: string, seed: number) {
    return this.request<{ queue: QueueEntry[] }>(
      "GET",
      `/api/collections/${cid}/verification/out-of-context?seed=${seed}`,
    );
  }

  previewRectify(cid: string, iid: string, points: number[][]) {
    return this.request<{
      homography: number[][];
      width: number;
      height: number;
      crop_png_base64: string;
    }>("POST", "/api/preview/rectify", { collection: cid, image: iid, points });
  }

  imageUrl(cid: string, iid: string): string {
    return `${this.base}/api/collections/${cid}/images/${iid}`;
  }
}
