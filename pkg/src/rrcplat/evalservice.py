"""Evaluation job queue and worker pool over a shared filesystem.

Queue state is the directory a job file sits in (``queue/pending``,
``claimed``, ``done``, ``failed``); every transition is a single atomic
rename, so any number of workers on any number of hosts can race without
coordination and each job is claimed by exactly one of them.  Execution is
at-least-once, but the result commit is rename-if-absent, so exactly one
result set becomes durable and re-runs are unobservable (evaluation is
deterministic).

A claimed job carries a lease; the reaper returns expired claims to
pending.  Workers that die between the claim rename and the lease write
leave a claim-less file, which is reaped on file ctime + lease.
"""

from __future__ import annotations

import json
import os
import random
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from .evalrun import evaluate_archives, write_results
from .fileio import create_exclusive, read_json, write_atomic
from .submissions import SubmissionStore
from .taskdef import TaskStore

STATES = ("pending", "claimed", "done", "failed")
DEFAULT_LEASE = 600.0
DEFAULT_POLL = 2.0
DEFAULT_MAX_ATTEMPTS = 3


class QueueError(Exception):
    pass


class NotValidated(QueueError):
    pass


class LeaseExpired(QueueError):
    pass


@dataclass
class Job:
    submission: str
    protocol: str
    kind: str
    params: dict
    task: str
    gt_snapshot: str
    per_sample: bool = True
    pattern: str = "res_{image_id}.txt"
    enqueued_at: float = 0.0
    attempts: int = 0
    worker: str | None = None
    claimed_at: float | None = None
    lease_expiry: float | None = None
    last_error: str | None = None

    @property
    def name(self) -> str:
        return f"{self.submission}_{self.protocol}.json"

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class JobQueue:
    def __init__(self, store_root: Path | str):
        self.root = Path(store_root)
        self.dir = self.root / "queue"
        for state in STATES:
            (self.dir / state).mkdir(parents=True, exist_ok=True)

    def _state_dir(self, state: str) -> Path:
        return self.dir / state

    def _exists_anywhere(self, name: str) -> bool:
        return any((self._state_dir(s) / name).exists() for s in STATES)

    def enqueue(self, submission_id: str, task, validated: bool | None = None) -> list[Job]:
        """One pending job per task protocol; re-enqueueing is a no-op."""
        subs = SubmissionStore(self.root)
        record = subs.load(submission_id)
        ok = record.validation_ok if validated is None else validated
        if not ok:
            raise NotValidated(f"submission {submission_id} failed validation")
        jobs: list[Job] = []
        for proto in task.evaluations:
            job = Job(
                submission=submission_id,
                protocol=proto.id,
                kind=proto.kind,
                params=dict(proto.params),
                task=task.tid,
                gt_snapshot=record.gt_snapshot or "",
                per_sample=proto.per_sample,
                pattern=task.input_format.archive_rule,
                enqueued_at=time.time(),
            )
            if self._exists_anywhere(job.name):
                jobs.append(job)
                continue
            create_exclusive(self._state_dir("pending") / job.name, _encode(job))
            jobs.append(job)
        return jobs

    def claim_next(
        self,
        worker_id: str,
        protocol: str | None = None,
        lease: float = DEFAULT_LEASE,
        now: float | None = None,
    ) -> Job | None:
        """Atomically claim the oldest pending job; None if the queue is empty."""
        at = now if now is not None else time.time()
        pending = self._state_dir("pending")
        candidates: list[tuple[float, str, Job]] = []
        for path in pending.glob("*.json"):
            try:
                job = _decode(path.read_bytes())
            except (OSError, ValueError, TypeError, KeyError):
                continue  # mid-rename or torn listing; next poll sees it
            if protocol and job.protocol != protocol:
                continue
            candidates.append((job.enqueued_at, path.name, job))
        candidates.sort(key=lambda c: (c[0], c[1]))
        for _, name, job in candidates:
            try:
                os.rename(pending / name, self._state_dir("claimed") / name)
            except FileNotFoundError:
                continue  # lost the race for this one
            job.worker = worker_id
            job.claimed_at = at
            job.lease_expiry = at + lease
            write_atomic(self._state_dir("claimed") / name, _encode(job))
            return job
        return None

    def _verify_claim(self, job: Job, now: float) -> Path:
        path = self._state_dir("claimed") / job.name
        try:
            current = _decode(path.read_bytes())
        except (OSError, ValueError):
            raise LeaseExpired(f"{job.name} is no longer claimed")
        if current.worker != job.worker:
            raise LeaseExpired(f"{job.name} was reclaimed by {current.worker!r}")
        if current.lease_expiry is not None and current.lease_expiry < now:
            raise LeaseExpired(f"{job.name} lease expired")
        return path

    def complete(self, job: Job, overall: dict, samples: dict[str, dict],
                 now: float | None = None) -> None:
        """Commit results (first durable write wins) and move the job to done."""
        at = now if now is not None else time.time()
        path = self._verify_claim(job, at)
        results_dir = SubmissionStore(self.root).results_dir(job.submission, job.protocol)
        results_dir.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".tmp-{job.protocol}-", dir=results_dir.parent))
        try:
            write_results(tmp, overall, samples)
            try:
                os.rename(tmp, results_dir)
            except OSError:
                # a previous claimant already committed; theirs wins
                shutil.rmtree(tmp, ignore_errors=True)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        job.last_error = None
        write_atomic(path, _encode(job))
        try:
            os.rename(path, self._state_dir("done") / job.name)
        except FileNotFoundError as exc:
            raise LeaseExpired(f"{job.name} reclaimed during completion") from exc

    def fail(self, job: Job, error: str, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
             now: float | None = None) -> str:
        """Record a failed attempt; returns the resulting state."""
        at = now if now is not None else time.time()
        path = self._verify_claim(job, at)
        job.attempts += 1
        job.last_error = error
        job.worker = None
        job.claimed_at = None
        job.lease_expiry = None
        target_state = "pending" if job.attempts < max_attempts else "failed"
        write_atomic(path, _encode(job))
        try:
            os.rename(path, self._state_dir(target_state) / job.name)
        except FileNotFoundError as exc:
            raise LeaseExpired(f"{job.name} reclaimed during fail()") from exc
        return target_state

    def reap_leases(self, now: float | None = None, lease: float = DEFAULT_LEASE) -> int:
        """Return claimed jobs with expired leases to pending; idempotent."""
        at = now if now is not None else time.time()
        claimed = self._state_dir("claimed")
        reaped = 0
        for path in claimed.glob("*.json"):
            try:
                job = _decode(path.read_bytes())
                expiry = job.lease_expiry
                if expiry is None:
                    expiry = path.stat().st_ctime + lease
            except (OSError, ValueError):
                continue
            if expiry < at:
                try:
                    os.rename(path, self._state_dir("pending") / path.name)
                    reaped += 1
                except FileNotFoundError:
                    continue
        return reaped

    def counts(self) -> dict[str, int]:
        return {s: len(list(self._state_dir(s).glob("*.json"))) for s in STATES}

    def jobs_in(self, state: str) -> list[Job]:
        jobs = []
        for path in sorted(self._state_dir(state).glob("*.json")):
            try:
                jobs.append(_decode(path.read_bytes()))
            except (OSError, ValueError):
                continue
        return jobs

    def job_state(self, submission_id: str, protocol_id: str) -> str | None:
        name = f"{submission_id}_{protocol_id}.json"
        for state in STATES:
            if (self._state_dir(state) / name).exists():
                return state
        return None


def _encode(job: Job) -> bytes:
    return (json.dumps(job.as_dict(), ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def _decode(data: bytes) -> Job:
    return Job(**json.loads(data.decode("utf-8")))


def evaluate_job(store_root: Path, job: Job) -> tuple[dict, dict[str, dict]]:
    """Run one job's protocol against its frozen GT snapshot."""
    from .datastore import Store

    tasks = TaskStore(Store(store_root))
    gt_zip = tasks.snapshot_bytes(job.task, job.gt_snapshot or None)
    submission_zip = SubmissionStore(store_root).archive_bytes(job.submission)
    report, overall, samples = evaluate_archives(
        job.protocol, job.kind, job.params, gt_zip, submission_zip,
        per_sample=job.per_sample, pattern=job.pattern,
    )
    if overall is None:
        raise QueueError(f"submission {job.submission} failed validation at eval time")
    return overall, samples


def run_worker(
    store_root: Path | str,
    worker_id: str,
    protocol: str | None = None,
    lease: float = DEFAULT_LEASE,
    poll: float = DEFAULT_POLL,
    max_jobs: int | None = None,
    evaluator=None,
    idle_exit: float | None = None,
) -> int:
    """Polling worker loop; returns the number of jobs completed."""
    root = Path(store_root)
    queue = JobQueue(root)
    evaluator = evaluator or evaluate_job
    done = 0
    idle_since: float | None = None
    rng = random.Random()
    while True:
        queue.reap_leases(lease=lease)
        job = queue.claim_next(worker_id, protocol=protocol, lease=lease)
        if job is None:
            if max_jobs is not None and done >= max_jobs:
                return done
            now = time.time()
            if idle_since is None:
                idle_since = now
            elif idle_exit is not None and now - idle_since > idle_exit:
                return done
            time.sleep(max(0.05, poll + rng.uniform(-0.5, 0.5) * poll / DEFAULT_POLL))
            continue
        idle_since = None
        try:
            overall, samples = evaluator(root, job)
            queue.complete(job, overall, samples)
            done += 1
        except LeaseExpired:
            continue
        except Exception as exc:  # noqa: BLE001 - worker must survive bad jobs
            try:
                queue.fail(job, f"{type(exc).__name__}: {exc}")
            except LeaseExpired:
                pass
        if max_jobs is not None and done >= max_jobs:
            return done
