// Application shell: hash router + page wiring.
//
// Pages: #/results/<task>, #/board/<collection>/<image>,
// #/verify/<collection>/<seed>, #/editor/<collection>/<image>.

import { Api, type SamplePayload } from "./api.js";
import * as board from "./board.js";
import { el, mount } from "./dom.js";
import {
  addDraftPoint,
  clearDraft,
  createEditor,
  draftPreview,
  draftStatus,
  type EditorState,
  saveEnabled,
} from "./editor.js";
import {
  buildOverlays,
  type ExplorerState,
  hotSwapMethod,
  initialExplorer,
  rankingCells,
  selectImage,
  seriesIsNonDecreasing,
  sotaPath,
} from "./explorer.js";
import { createStepper, currentCard, done, judge, type StepperState } from "./stepper.js";

const api = new Api("");

function app(): HTMLElement {
  return document.getElementById("app") as HTMLElement;
}

function banner(kind: "info" | "error", text: string): HTMLElement {
  return el("div", { className: `banner ${kind}` }, text);
}

// -- login -----------------------------------------------------------------

function renderLogin(): void {
  const email = el("input", { type: "email", placeholder: "email" }) as HTMLInputElement;
  const password = el("input", {
    type: "password",
    placeholder: "password",
  }) as HTMLInputElement;
  const status = el("div", { className: "status" });
  const form = el(
    "form",
    {
      className: "login",
      onsubmit: async (event: Event) => {
        event.preventDefault();
        try {
          const session = await api.login(email.value, password.value);
          sessionStorage.setItem("rrc.token", session.token);
          status.textContent = `signed in as ${session.user.display_name}`;
          route();
        } catch {
          status.textContent = "sign-in failed";
        }
      },
    },
    el("h2", {}, "Sign in"),
    email,
    password,
    el("button", { type: "submit" }, "Sign in"),
    status,
  );
  mount(app(), form);
}

// -- results explorer ---------------------------------------------------------

async function renderResults(task: string): Promise<void> {
  const tasks = await api.listTasks();
  const meta = tasks.find((t) => t.tid === task) ?? tasks[0];
  if (!meta) {
    mount(app(), banner("error", "no tasks defined"));
    return;
  }
  let state: ExplorerState = initialExplorer(meta.tid, meta.evaluations[0].id);
  const container = el("div", { className: "results" });
  mount(app(), el("h2", {}, `Results — ${meta.tid}`), container);

  async function refresh(): Promise<void> {
    const { rows } = await api.rankings(state.task, state.protocol);
    const { series } = await api.sota(state.task, state.protocol);
    const table = el("table", { className: "rankings" });
    table.appendChild(
      el(
        "tr",
        {},
        ...["Method", "Owner", "Date", "P", "R", "Hmean"].map((h) => el("th", {}, h)),
      ),
    );
    for (const row of rows) {
      const tr = el(
        "tr",
        {
          className: "ranking-row",
          onclick: () => {
            state = hotSwapMethod(state, row.submission);
            void refreshOverlay();
          },
        },
        ...rankingCells(row).map((cell) => el("td", {}, cell)),
      );
      table.appendChild(tr);
    }
    const chartWidth = 480;
    const chartHeight = 160;
    const chart = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    chart.setAttribute("viewBox", `0 0 ${chartWidth} ${chartHeight}`);
    chart.setAttribute("class", "sota-chart");
    const path = document.createElementNS("http://www.w3.org/2000/svg", "path");
    path.setAttribute("d", sotaPath(series, chartWidth, chartHeight));
    path.setAttribute("fill", "none");
    path.setAttribute("stroke", "#1a9641");
    path.setAttribute("stroke-width", "2");
    chart.appendChild(path);
    if (!seriesIsNonDecreasing(series)) {
      // the server guarantees a running maximum; flag loudly if broken
      mount(container, banner("error", "SOTA series is not non-decreasing"));
      return;
    }
    mount(
      container,
      el("h3", {}, "Rankings"),
      table,
      el("h3", {}, "Evolution of the state of the art"),
      chart,
      el("div", { id: "overlay-area" }),
    );
  }

  async function refreshOverlay(): Promise<void> {
    const target = container.querySelector("#overlay-area");
    if (!target || !state.method) return;
    const image = state.image ?? "";
    if (!image) {
      mount(target, banner("info", "pick an image id in the URL hash to explore samples"));
      return;
    }
    const payload: SamplePayload = await api.sample(state.method, image, state.protocol);
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.setAttribute("viewBox", "0 0 1000 700");
    svg.setAttribute("class", "overlay");
    for (const shape of buildOverlays(payload)) {
      const poly = document.createElementNS("http://www.w3.org/2000/svg", "polygon");
      poly.setAttribute(
        "points",
        shape.points.map((p) => `${p[0]},${p[1]}`).join(" "),
      );
      poly.setAttribute("fill", "none");
      poly.setAttribute("stroke", shape.color);
      if (shape.dashed) poly.setAttribute("stroke-dasharray", "6 4");
      const title = document.createElementNS("http://www.w3.org/2000/svg", "title");
      title.textContent = shape.tooltip;
      poly.appendChild(title);
      svg.appendChild(poly);
    }
    mount(
      target,
      el(
        "div",
        {},
        `method ${state.method} on ${image} — P ${payload.sample.sample_precision.toFixed(3)}, ` +
          `R ${payload.sample.sample_recall.toFixed(3)}`,
      ),
      svg,
    );
  }

  await refresh();
}

// -- board ---------------------------------------------------------------------

async function renderBoard(collection: string, image: string): Promise<void> {
  let state = board.fromServer(collection, await api.board(collection, image));
  const container = el("div", { className: "board" });
  mount(app(), el("h2", {}, `Care board — ${image}`), container);

  function draw(): void {
    const columns = el("div", { className: "columns" });
    for (const side of ["care", "dont_care"] as const) {
      const cards = side === "care" ? state.care : state.dontCare;
      const column = el(
        "div",
        {
          className: `column ${side}`,
          ondragover: (event: Event) => event.preventDefault(),
          ondrop: (event: Event) => {
            const id = (event as DragEvent).dataTransfer?.getData("text/plain");
            if (id) {
              state = board.moveCard(state, id, side);
              draw();
            }
          },
        },
        el("h3", {}, side === "care" ? "care" : "do not care"),
      );
      for (const card of cards) {
        column.appendChild(
          el(
            "div",
            {
              className: "card",
              draggable: "true",
              ondragstart: (event: Event) =>
                (event as DragEvent).dataTransfer?.setData("text/plain", card.node_id),
            },
            `${card.node_id} ${card.transcription ? `“${card.transcription}”` : ""}`,
          ),
        );
      }
      columns.appendChild(column);
    }
    const pending = board.pendingVerdicts(state).length;
    const apply = el(
      "button",
      {
        disabled: pending === 0 ? "disabled" : null,
        onclick: async () => {
          const result = await board.applyMoves(state, api);
          state = result.state;
          draw();
          if (result.rolledBack) {
            container.prepend(
              banner("error", "someone else edited this image; board reloaded"),
            );
          }
        },
      },
      `Apply ${pending} move(s)`,
    );
    mount(container, columns, apply);
  }

  draw();
}

// -- verification stepper ----------------------------------------------------------

async function renderStepper(collection: string, seed: number): Promise<void> {
  const { queue } = await api.outOfContextQueue(collection, seed);
  let state: StepperState = createStepper(collection, seed, queue, localStorage);
  const container = el("div", { className: "stepper" });
  mount(app(), el("h2", {}, `Out-of-context verification (seed ${seed})`), container);

  async function act(verdict: "care" | "dont_care" | "skip"): Promise<void> {
    state = await judge(state, verdict, api, localStorage);
    draw();
  }

  function draw(): void {
    if (done(state)) {
      mount(container, banner("info", "queue finished — thank you"));
      return;
    }
    const card = currentCard(state)!;
    mount(
      container,
      el("div", { className: "progress" }, `${state.index + 1} / ${state.queue.length}`),
      el("div", { className: "word-card" }, card.transcription || "(no transcription)"),
      el(
        "div",
        { className: "actions" },
        el("button", { onclick: () => void act("care") }, "care (c)"),
        el("button", { onclick: () => void act("dont_care") }, "don't care (d)"),
        el("button", { onclick: () => void act("skip") }, "skip (s)"),
      ),
    );
  }

  document.addEventListener("keydown", (event) => {
    if (event.key === "c") void act("care");
    if (event.key === "d") void act("dont_care");
    if (event.key === "s") void act("skip");
  });
  draw();
}

// -- editor ----------------------------------------------------------------------

async function renderEditor(collection: string, image: string): Promise<void> {
  const annotation = await api.annotation(collection, image);
  let state: EditorState = createEditor(image, annotation.revision);
  const canvas = el("canvas", { width: 800, height: 560 }) as HTMLCanvasElement;
  const preview = el("canvas", { width: 256, height: 64 }) as HTMLCanvasElement;
  const status = el("div", { className: "status" });
  const save = el("button", { disabled: "disabled" }, "Save quad") as HTMLButtonElement;
  const img = new Image();
  img.src = api.imageUrl(collection, image);

  function redraw(): void {
    const ctx = canvas.getContext("2d");
    if (ctx) {
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      if (img.complete) ctx.drawImage(img, 0, 0);
      ctx.strokeStyle = "#ffb000";
      ctx.lineWidth = 2;
      if (state.draft.length > 1) {
        ctx.beginPath();
        ctx.moveTo(state.draft[0][0], state.draft[0][1]);
        for (const p of state.draft.slice(1)) ctx.lineTo(p[0], p[1]);
        if (state.draft.length === 4) ctx.closePath();
        ctx.stroke();
      }
      for (const [x, y] of state.draft) {
        ctx.fillStyle = "#ffb000";
        ctx.fillRect(x - 3, y - 3, 6, 6);
      }
    }
    const info = draftStatus(state);
    if (info.state === "incomplete") {
      status.textContent = `place ${4 - info.placed} more corner(s)`;
      status.className = "status";
    } else if (info.state === "invalid") {
      status.textContent = `invalid quad: ${info.reason}`;
      status.className = "status error";
    } else {
      status.textContent = "valid quad — rectified preview below";
      status.className = "status ok";
    }
    save.disabled = !saveEnabled(state);
    const p = draftPreview(state);
    const pctx = preview.getContext("2d");
    if (pctx) {
      pctx.clearRect(0, 0, preview.width, preview.height);
      if (p && img.complete) {
        // draw source through the inverse map, nearest neighbor per pixel
        pctx.fillStyle = "#eee";
        pctx.fillRect(0, 0, p.width, p.height);
        pctx.setTransform(1, 0, 0, 1, 0, 0);
        // canvas-native transform approximation: draw the quad's bounding
        // region scaled; exact warping happens server-side when needed
        const xs = p.corners.map((c) => c[0]);
        const ys = p.corners.map((c) => c[1]);
        const sx = Math.min(...xs);
        const sy = Math.min(...ys);
        pctx.drawImage(
          img,
          sx,
          sy,
          Math.max(...xs) - sx,
          Math.max(...ys) - sy,
          0,
          0,
          p.width,
          p.height,
        );
      }
    }
  }

  canvas.addEventListener("click", (event) => {
    const rect = canvas.getBoundingClientRect();
    state = addDraftPoint(state, [event.clientX - rect.left, event.clientY - rect.top]);
    redraw();
  });
  img.onload = redraw;

  mount(
    app(),
    el("h2", {}, `Editor — ${image} (rev ${annotation.revision})`),
    canvas,
    el("div", { className: "editor-side" }, status, preview, save,
      el("button", { onclick: () => { state = clearDraft(state); redraw(); } }, "Clear")),
  );
  redraw();
}

// -- router ---------------------------------------------------------------------

function route(): void {
  const token = sessionStorage.getItem("rrc.token");
  if (token) api.token = token;
  const hash = location.hash.replace(/^#\/?/, "");
  const [page, ...rest] = hash.split("/");
  if (!api.token && page !== "results") {
    renderLogin();
    return;
  }
  if (page === "board" && rest.length === 2) {
    void renderBoard(rest[0], rest[1]);
  } else if (page === "verify" && rest.length === 2) {
    void renderStepper(rest[0], Number.parseInt(rest[1], 10) || 0);
  } else if (page === "editor" && rest.length === 2) {
    void renderEditor(rest[0], rest[1]);
  } else {
    void renderResults(rest[0] ?? "");
  }
}

if (typeof window !== "undefined" && document.getElementById("app")) {
  window.addEventListener("hashchange", route);
  route();
}
