"""The rrc command: offline evaluation, portal server, workers, bundles.

The evaluator here is the exact engine the portal workers and standalone
bundles run, so `rrc eval` on the same GT and submission produces
byte-identical overall.json and per-sample files.
"""

from __future__ import annotations

import argparse
import os
import socket
import sys
from pathlib import Path

from .evalrun import GRAMMAR_FOR_KIND, evaluate_archives, write_results
from .fileio import canonical_json_bytes

PROTOCOL_ALIASES = {
    "iou": "localization_iou",
    "deteval": "localization_deteval",
    "e2e": "end_to_end",
    "recognition": "recognition",
}


def _parse_params(pairs: list[str]) -> dict:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            print(f"rrc eval: --param expects key=value, got {pair!r}", file=sys.stderr)
            raise SystemExit(2)
        key, value = pair.split("=", 1)
        params[key] = value
    return params


def cmd_eval(args: argparse.Namespace) -> int:
    kind = PROTOCOL_ALIASES[args.protocol]
    protocol_id = args.protocol_id or args.protocol
    params = _parse_params(args.param)
    try:
        gt_zip = Path(args.gt).read_bytes()
        submission = Path(args.subm).read_bytes()
    except OSError as exc:
        print(f"rrc eval: cannot read input: {exc}", file=sys.stderr)
        return 2
    report, overall, samples = evaluate_archives(
        protocol_id,
        kind,
        params,
        gt_zip,
        submission,
        per_sample=args.per_sample,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "validation.json").write_bytes(canonical_json_bytes(report.as_dict()))
    if overall is None:
        print(f"validation failed with {len(report.errors)} error(s); see validation.json",
              file=sys.stderr)
        return 2
    write_results(out, overall, samples)
    print(
        f"{protocol_id}: precision={overall['precision']:.6f} "
        f"recall={overall['recall']:.6f} hmean={overall['hmean']:.6f} "
        f"({overall['num_samples']} samples)"
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .portal import create_app

    app = create_app(Path(args.store))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_worker_run(args: argparse.Namespace) -> int:
    from .evalservice import run_worker

    worker_id = args.worker_id or f"{socket.gethostname()}-{os.getpid()}"
    done = run_worker(
        Path(args.store),
        worker_id,
        protocol=args.protocol,
        lease=args.lease,
        poll=args.poll,
        max_jobs=args.max_jobs,
        idle_exit=args.idle_exit,
    )
    print(f"worker {worker_id} completed {done} job(s)")
    return 0


def cmd_pack(args: argparse.Namespace) -> int:
    from .datastore import Store
    from .taskdef import TaskStore

    tasks = TaskStore(Store(Path(args.store)))
    ui_assets = None
    if args.ui:
        ui_dir = Path(args.ui)
        ui_assets = {
            str(p.relative_to(ui_dir)): p.read_bytes()
            for p in sorted(ui_dir.rglob("*"))
            if p.is_file()
        }
    data = tasks.export_standalone_bundle(args.task, args.evaluation, ui_assets)
    Path(args.out).write_bytes(data)
    print(f"wrote {args.out} ({len(data)} bytes)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("eval", help="evaluate a submission against a GT archive")
    ev.add_argument("--gt", required=True, help="GT archive (zip of gt_<image-id>.txt)")
    ev.add_argument("--subm", required=True, help="submission archive (zip of res_<image-id>.txt)")
    ev.add_argument("--protocol", required=True, choices=sorted(PROTOCOL_ALIASES))
    ev.add_argument("--protocol-id", default=None,
                    help="protocol id recorded in results (default: the alias)")
    ev.add_argument("--per-sample", action="store_true")
    ev.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    ev.add_argument("-o", "--out", required=True)
    ev.set_defaults(func=cmd_eval)

    sv = sub.add_parser("serve", help="run the portal")
    sv.add_argument("--store", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8500)
    sv.set_defaults(func=cmd_serve)

    wk = sub.add_parser("worker", help="evaluation worker pool")
    wk_sub = wk.add_subparsers(dest="worker_command", required=True)
    run = wk_sub.add_parser("run", help="poll for jobs and evaluate them")
    run.add_argument("--store", required=True)
    run.add_argument("--protocol", default=None, help="only claim jobs for this protocol id")
    run.add_argument("--lease", type=float, default=600.0)
    run.add_argument("--poll", type=float, default=2.0)
    run.add_argument("--worker-id", default=None)
    run.add_argument("--max-jobs", type=int, default=None)
    run.add_argument("--idle-exit", type=float, default=None,
                     help="exit after this many idle seconds (default: run forever)")
    run.set_defaults(func=cmd_worker_run)

    pk = sub.add_parser("pack", help="export a standalone task bundle")
    pk.add_argument("--task", required=True)
    pk.add_argument("--store", required=True)
    pk.add_argument("--evaluation", default=None)
    pk.add_argument("--ui", default=None, help="directory of web assets to embed")
    pk.add_argument("-o", "--out", required=True)
    pk.set_defaults(func=cmd_pack)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
