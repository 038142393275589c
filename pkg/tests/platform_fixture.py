"""A fully provisioned platform store for integration-level tests.

Builds a collection of annotated images, defines the three fixture tasks
(dual-protocol localization, end-to-end, recognition), freezes GT, and
knows how to fabricate submission archives of controlled quality.
"""

from __future__ import annotations

import io
import random
import zipfile
from dataclasses import dataclass
from pathlib import Path

from rrcplat.datastore import Store
from rrcplat.evalrun import GtData, load_gt_archive
from rrcplat.geometry import Quad, format_coord
from rrcplat.taskdef import ResearchTask, TaskStore

from helpers import png_bytes, random_word_scene

LOC_TASK = "demo__localization"
E2E_TASK = "demo__end-to-end"
RECOG_TASK = "demo__recognition"


@dataclass
class FixturePlatform:
    store: Store
    tasks: TaskStore
    collection_id: str
    image_ids: list[str]

    @classmethod
    def build(cls, root: Path, n_images: int = 6, seed: int = 1) -> "FixturePlatform":
        rng = random.Random(seed)
        store = Store(root)
        store.create_collection("scenes", "Fixture Scenes", "boss")
        coll = store.collection("scenes")
        coll.add_member("annot", "contributor", actor="boss")
        image_ids: list[str] = []
        for i in range(n_images):
            rec = coll.import_image(
                png_bytes(200, 120, color=((i * 37) % 251, (i * 91) % 251, 120)),
                f"scene{i}.png",
                actor="boss",
            ).record
            tree = random_word_scene(rng, n_words=rng.randrange(2, 7))
            coll.save_annotation(rec.id, tree, "annot", expected_head=0)
            image_ids.append(rec.id)
        coll.assign_subset(image_ids, "public-test", actor="boss")

        tasks = TaskStore(store)
        source = {"internal": {"collection": "scenes", "subset": "public-test"}}
        tasks.define_task(
            "demo", "localization", "Fixture Localization", source, "quad",
            evaluations=[
                {"id": "iou", "kind": "localization_iou"},
                {"id": "deteval", "kind": "localization_deteval"},
            ],
        )
        tasks.define_task(
            "demo", "end-to-end", "Fixture End-to-End", source, "quad+transcription",
            evaluations=[{"id": "e2e", "kind": "end_to_end"}],
        )
        tasks.define_task(
            "demo", "recognition", "Fixture Recognition", source, "transcription-only",
            evaluations=[{"id": "recognition", "kind": "recognition"}],
        )
        for tid in (LOC_TASK, E2E_TASK, RECOG_TASK):
            tasks.freeze_gt(tid)
        return cls(store=store, tasks=tasks, collection_id="scenes", image_ids=image_ids)

    def task(self, tid: str) -> ResearchTask:
        return self.tasks.load_task(tid)

    def gt_data(self, tid: str) -> GtData:
        return load_gt_archive(self.tasks.snapshot_bytes(tid))

    def make_submission_zip(
        self, tid: str, quality: float = 0.8, seed: int = 7, drop_files: int = 0
    ) -> bytes:
        """Synthesize a submission at roughly the given recall quality."""
        rng = random.Random(seed)
        task = self.task(tid)
        gt = self.gt_data(tid)
        grammar = task.input_format.line_grammar
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            ids = gt.image_ids[: len(gt.image_ids) - drop_files]
            for image_id in ids:
                lines: list[str] = []
                for region in gt.regions[image_id]:
                    if not region.care:
                        continue
                    if grammar == "transcription-only":
                        text = region.transcription if rng.random() < quality else "???"
                        lines = [text]
                        break
                    if rng.random() > quality:
                        continue
                    quad = _jitter(rng, region.quad, 1.5)
                    coords = ",".join(format_coord(v) for v in quad.flat())
                    if grammar == "quad":
                        lines.append(coords)
                    elif grammar == "quad+confidence":
                        lines.append(f"{coords},{rng.uniform(0.5, 1.0):.2f}")
                    elif grammar == "quad+transcription":
                        text = region.transcription if rng.random() < 0.9 else "wrong"
                        lines.append(f"{coords},{text}")
                    else:
                        text = region.transcription if rng.random() < 0.9 else "wrong"
                        lines.append(f"{coords},{rng.uniform(0.5, 1.0):.2f},{text}")
                zf.writestr(f"res_{image_id}.txt", "".join(l + "\n" for l in lines))
        return buf.getvalue()


def _jitter(rng: random.Random, quad: Quad, amount: float) -> Quad:
    from rrcplat.geometry import canonicalize_quad

    flat = [v + rng.uniform(-amount, amount) for v in quad.flat()]
    try:
        return canonicalize_quad(flat)
    except Exception:
        return quad
