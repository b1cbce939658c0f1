"""End-to-end training runs: split, epochs, checkpoints, final report and run manifest."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .evaluation import MetricReport, evaluate
from .graph import (HeteroGraph, InteractionSplit, NodeType, dataset_fingerprint, leave_one_out_split,
                    load_dataset)
from .model import RecipeRec
from .objectives import Adam
from .tensor import ContractError
from .training import EpochStats, make_optimizer, train_epoch

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.zip"
SPLIT = "split.json"
MANIFEST = "manifest.json"
REPORT = "report"


@dataclass
class RunResult:
    model: RecipeRec
    split: InteractionSplit
    report: MetricReport
    trace: list[dict] = field(default_factory=list)
    out_dir: Path | None = None


def write_json_atomic(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    os.replace(tmp, path)


def checkpoint_meta(model: RecipeRec, epoch: int, optimizer: Adam) -> dict:
    return {"epoch": epoch, "adam_t": optimizer.t, "config": model.config.to_dict(),
            "version": __version__}


def save_training_state(path: Path, model: RecipeRec, optimizer: Adam, epoch: int) -> None:
    arrays = dict(model.state_arrays())
    arrays.update(optimizer.state())
    save_checkpoint(path, arrays, model.config.seed, checkpoint_meta(model, epoch, optimizer))


def load_model(path: str | Path, g: HeteroGraph, config: TrainConfig | None = None
               ) -> tuple[RecipeRec, dict, dict]:
    """Rebuild a model from a checkpoint; raises ContractError when dimensions disagree with ``g``."""
    arrays, manifest = load_checkpoint(path)
    if config is None:
        config = TrainConfig.from_dict(manifest["meta"]["config"], prefix="checkpoint.config.")
    model = RecipeRec.init(g, config)
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("optim/")})
    return model, arrays, manifest


def train_run(config: TrainConfig, g: HeteroGraph, out_dir: str | Path | None = None,
              resume: str | Path | None = None, data_dir: str | Path | None = None) -> RunResult:
    """Train for ``config.epochs`` epochs and evaluate; writes artifacts when ``out_dir`` is set.

    Resuming restores parameters, optimizer moments and the epoch counter, so
    the remaining epochs are bitwise identical to an uninterrupted run.
    """
    start = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    split = leave_one_out_split(g, config.seed)
    first_epoch = 0
    if resume is not None:
        model, arrays, manifest = load_model(resume, g, config)
        optimizer = make_optimizer(model)
        try:
            optimizer.load_state(arrays, int(manifest["meta"]["adam_t"]))
        except KeyError as exc:
            raise ContractError(f"{resume}: checkpoint has no optimizer state ({exc})") from exc
        first_epoch = int(manifest["meta"]["epoch"])
    else:
        model = RecipeRec.init(g, config)
        optimizer = make_optimizer(model)
    if out is not None:
        split.save(out / SPLIT)

    trace: list[dict] = []
    for epoch in range(first_epoch, config.epochs):
        stats: EpochStats = train_epoch(g, split, model, optimizer, epoch)
        row = stats.to_json()
        done = epoch + 1
        if config.eval_every and done % config.eval_every == 0:
            rep = evaluate(g, split, model)
            row["hr@10"] = rep.get("hr", 10)
            row["ndcg@10"] = rep.get("ndcg", 10)
        trace.append(row)
        log.info("epoch %d loss %.4f (%.2fs)", done, stats.mean_loss, stats.seconds)
        if out is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
            save_training_state(out / f"checkpoint-e{done:04d}.zip", model, optimizer, done)

    train_seconds = time.perf_counter() - start
    report = evaluate(g, split, model)
    if out is not None:
        save_training_state(out / CHECKPOINT, model, optimizer, max(config.epochs, first_epoch))
        report.write(out, REPORT)
        manifest = {
            "version": __version__,
            "config": config.to_dict(),
            "seeds": {"root": config.seed, "streams": "stream_rng(root, stream, *extra)"},
            "dataset": {"dir": str(data_dir) if data_dir else None,
                        "fingerprint": dataset_fingerprint(data_dir) if data_dir else None,
                        "summary": g.summary()},
            "resumed_from": {"path": str(resume), "epoch": first_epoch} if resume else None,
            "trace": trace,
            "final": report.to_json(),
            "timings": {"train_seconds": train_seconds,
                        "total_seconds": time.perf_counter() - start},
        }
        write_json_atomic(out / MANIFEST, manifest)
    return RunResult(model, split, report, trace, out)


def train_from_dir(config: TrainConfig, data_dir: str | Path, out_dir: str | Path,
                   resume: str | Path | None = None) -> RunResult:
    return train_run(config, load_dataset(data_dir), out_dir, resume, data_dir)


def eval_checkpoint(checkpoint: str | Path, data_dir: str | Path, split_path: str | Path,
                    out_dir: str | Path | None = None) -> MetricReport:
    g = load_dataset(data_dir)
    model, _, _ = load_model(checkpoint, g)
    split = InteractionSplit.load(split_path, g)
    report = evaluate(g, split, model)
    if out_dir is not None:
        report.write(out_dir, REPORT)
    return report


def export_embeddings(checkpoint: str | Path, data_dir: str | Path, out_path: str | Path) -> int:
    """Write ``node_type,node_id,v0..`` rows for users, recipes (fused) and ingredients; returns row count."""
    g = load_dataset(data_dir)
    model, _, _ = load_model(checkpoint, g)
    with T.no_grad():
        emb = model.forward(g)
    off = g.offsets[NodeType.INGREDIENT]
    blocks = [(NodeType.USER, emb.users.data), (NodeType.RECIPE, emb.recipes.data),
              (NodeType.INGREDIENT, emb.graph.data[off : off + g.counts[NodeType.INGREDIENT]])]
    d = emb.users.shape[1]
    rows = 0
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("node_type,node_id," + ",".join(f"v{i}" for i in range(d)) + "\n")
        for t, mat in blocks:
            for i, vec in enumerate(np.asarray(mat)):
                fh.write(f"{t.value},{i}," + ",".join(repr(float(x)) for x in vec) + "\n")
                rows += 1
    return rows
