"""Standalone offline evaluator and mini portal packed into bundles.

A bundle directory holds ``task.json``, ``gt/gt.zip``, ``ui/`` and the
``serve`` entrypoint.  ``python serve`` starts a local, read-only server
(evaluate + visualize); ``python serve eval --subm RES.zip -o OUT/`` runs
the evaluation offline.  Both paths call the same engine the portal
workers use, which is what makes bundle output byte-identical.
"""

from __future__ import annotations

import argparse
import json
import mimetypes
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .evalrun import evaluate_archives, write_results
from .fileio import canonical_json_bytes
from .taskdef import ResearchTask


def load_bundle_task(bundle_dir: Path) -> tuple[ResearchTask, str]:
    descriptor = json.loads((bundle_dir / "task.json").read_text("utf-8"))
    evaluation = descriptor.get("bundle_evaluation")
    task = ResearchTask.from_dict(descriptor)
    if not evaluation:
        evaluation = task.evaluations[task.default_evaluation].id
    return task, evaluation


def bundle_evaluate(
    bundle_dir: Path,
    submission_zip: bytes,
    evaluation_id: str | None = None,
    per_sample: bool = True,
) -> tuple[dict, dict | None, dict[str, dict]]:
    task, default_eval = load_bundle_task(bundle_dir)
    proto = task.protocol(evaluation_id or default_eval)
    gt_zip = (bundle_dir / "gt" / "gt.zip").read_bytes()
    report, overall, samples = evaluate_archives(
        proto.id, proto.kind, proto.params, gt_zip, submission_zip,
        per_sample=per_sample and proto.per_sample,
        pattern=task.input_format.archive_rule,
    )
    return report.as_dict(), overall, samples


class _BundleHandler(BaseHTTPRequestHandler):
    bundle_dir: Path = Path(".")
    results: dict[str, tuple[dict, dict[str, dict]]] = {}

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, obj) -> None:
        self._send(status, json.dumps(obj, ensure_ascii=False).encode("utf-8"))

    def do_GET(self) -> None:  # noqa: N802 - http.server API
        path = self.path.split("?", 1)[0]
        if path == "/api/task":
            self._send(200, (self.bundle_dir / "task.json").read_bytes())
            return
        if path == "/api/results":
            listing = [
                {"id": rid, "overall": overall}
                for rid, (overall, _) in sorted(self.results.items())
            ]
            self._send_json(200, listing)
            return
        if path.startswith("/api/results/"):
            parts = path.split("/")
            # /api/results/<rid>/overall.json | /api/results/<rid>/samples/<image>
            if len(parts) >= 5 and parts[3] in self.results:
                overall, samples = self.results[parts[3]]
                if parts[4] == "overall.json":
                    self._send(200, canonical_json_bytes(overall))
                    return
                if parts[4] == "samples" and len(parts) == 6 and parts[5] in samples:
                    self._send(200, canonical_json_bytes(samples[parts[5]]))
                    return
            self._send_json(404, {"error": "no such result"})
            return
        # static UI
        rel = "index.html" if path in ("/", "") else path.lstrip("/")
        target = (self.bundle_dir / "ui" / rel).resolve()
        ui_root = (self.bundle_dir / "ui").resolve()
        if ui_root in target.parents or target == ui_root:
            if target.is_file():
                ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
                self._send(200, target.read_bytes(), ctype)
                return
        self._send_json(404, {"error": "not found"})

    def do_POST(self) -> None:  # noqa: N802 - http.server API
        if self.path.split("?", 1)[0] != "/api/evaluate":
            self._send_json(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        report, overall, samples = bundle_evaluate(self.bundle_dir, body)
        if overall is None:
            self._send_json(422, {"validation": report})
            return
        rid = f"r{len(self.results) + 1:04d}"
        self.results[rid] = (overall, samples)
        self._send_json(200, {"id": rid, "validation": report, "overall": overall})


def serve_bundle(bundle_dir: Path, host: str = "127.0.0.1", port: int = 8600) -> None:
    handler = type(
        "Handler", (_BundleHandler,), {"bundle_dir": bundle_dir, "results": {}}
    )
    server = ThreadingHTTPServer((host, port), handler)
    print(f"standalone portal for {bundle_dir.name} on http://{host}:{port}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


def main(bundle_dir: Path, argv: list[str]) -> int:
    parser = argparse.ArgumentParser(prog="serve", description="standalone task bundle")
    sub = parser.add_subparsers(dest="command")
    run = sub.add_parser("run", help="serve the local portal (default)")
    run.add_argument("--host", default="127.0.0.1")
    run.add_argument("--port", type=int, default=8600)
    ev = sub.add_parser("eval", help="evaluate a submission offline")
    ev.add_argument("--subm", required=True, help="submission archive (zip)")
    ev.add_argument("-o", "--out", required=True, help="output directory")
    ev.add_argument("--evaluation", default=None, help="protocol id (default: bundle default)")
    ev.add_argument("--no-per-sample", action="store_true")
    args = parser.parse_args(argv or ["run"])

    if args.command == "eval":
        submission = Path(args.subm).read_bytes()
        report, overall, samples = bundle_evaluate(
            bundle_dir, submission, args.evaluation, per_sample=not args.no_per_sample
        )
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validation.json").write_bytes(canonical_json_bytes(report))
        if overall is None:
            print("validation failed; see validation.json")
            return 2
        write_results(out, overall, samples)
        print(f"hmean={overall['hmean']:.6f} precision={overall['precision']:.6f} "
              f"recall={overall['recall']:.6f}")
        return 0

    serve_bundle(bundle_dir, args.host, args.port)
    return 0


def default_ui_assets() -> dict[str, bytes]:
    """Minimal built-in pages; `rrc pack --ui DIR` swaps in richer assets."""
    index = """<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Standalone evaluation</title>
<style>
body { font-family: system-ui, sans-serif; margin: 2rem auto; max-width: 52rem; }
h1 { font-size: 1.3rem; }
table { border-collapse: collapse; width: 100%; margin-top: 1rem; }
td, th { border: 1px solid #ccc; padding: .35rem .6rem; text-align: left; }
#drop { border: 2px dashed #888; padding: 2rem; text-align: center; margin: 1rem 0; }
.err { color: #b00; white-space: pre-wrap; }
</style>
</head>
<body>
<h1 id="title">Standalone evaluation</h1>
<p id="subtitle"></p>
<div id="drop">Select a submission archive: <input type="file" id="file" accept=".zip"></div>
<div id="error" class="err"></div>
<table id="results" hidden>
<thead><tr><th>#</th><th>Precision</th><th>Recall</th><th>Hmean</th></tr></thead>
<tbody></tbody>
</table>
<script src="app.js"></script>
</body>
</html>
"""
    app = """async function refresh() {
  const task = await (await fetch('/api/task')).json();
  document.getElementById('title').textContent = task.title;
  document.getElementById('subtitle').textContent =
    task.challenge_id + ' / ' + task.task_id + ' — evaluation: ' + task.bundle_evaluation;
  const rows = await (await fetch('/api/results')).json();
  const table = document.getElementById('results');
  const body = table.querySelector('tbody');
  body.innerHTML = '';
  for (const row of rows) {
    const tr = document.createElement('tr');
    for (const v of [row.id, row.overall.precision, row.overall.recall, row.overall.hmean]) {
      const td = document.createElement('td');
      td.textContent = typeof v === 'number' ? v.toFixed(6) : v;
      tr.appendChild(td);
    }
    body.appendChild(tr);
  }
  table.hidden = rows.length === 0;
}
document.getElementById('file').addEventListener('change', async (ev) => {
  const file = ev.target.files[0];
  if (!file) return;
  document.getElementById('error').textContent = '';
  const res = await fetch('/api/evaluate', { method: 'POST', body: await file.arrayBuffer() });
  const data = await res.json();
  if (!res.ok) {
    document.getElementById('error').textContent =
      'Validation failed:\\n' + data.validation.errors.map(
        (e) => `${e.file}:${e.line} ${e.code} ${e.message}`).join('\\n');
    return;
  }
  refresh();
});
refresh();
"""
    return {"index.html": index.encode("utf-8"), "app.js": app.encode("utf-8")}
