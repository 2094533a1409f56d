"""Two-stage training driver shared by the command line and the tests."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .agae import init_semantic, load_semantic, save_semantic
from .align import AlignConfig, category_centers, fit_semantic
from .config import RunConfig, serialize_config
from .datakit import Dataset
from .numkit import spawn_rngs
from .visual_mt import MeanTeacherState, RampSchedule, VisualConfig, embed_all, fit_visual, load_state, save_state

LOG_COLUMNS = ("epoch", "l_svc", "l_uvc", "omega2", "l_ssa", "l_usa")


@dataclass
class TrainResult:
    state: MeanTeacherState
    semantic: object
    log: list[dict]


def visual_config(cfg: RunConfig) -> VisualConfig:
    return VisualConfig(epochs=cfg.epochs_visual, lr=cfg.lr, batch_size=cfg.batch_size,
                        unseen_batch_size=cfg.batch_size, ramp=RampSchedule(cfg.w_max, cfg.ramp_epochs),
                        aug_sigma=cfg.aug_sigma, use_uvc=cfg.uvc)


def align_config(cfg: RunConfig) -> AlignConfig:
    return AlignConfig(omega3=cfg.omega3, epochs=cfg.epochs_semantic, lr=cfg.lr, use_usa=cfg.usa,
                       embed_kind=cfg.embed_kind)


def train_visual(ds: Dataset, cfg: RunConfig, log: list | None = None) -> MeanTeacherState:
    rng = spawn_rngs(cfg.seed, 2)[0]

    def record(epoch, m):
        if log is not None:
            log.append({"epoch": epoch, "l_svc": m["l_svc"], "l_uvc": m["l_uvc"], "omega2": m["omega2"]})

    return fit_visual(ds, visual_config(cfg), rng, d_v=cfg.d_v, hidden=list(cfg.hidden_visual),
                      omega1=cfg.omega1, on_epoch=record)


def train_semantic(ds: Dataset, state: MeanTeacherState, cfg: RunConfig, log: list | None = None,
                   epoch_offset: int = 0):
    """Stage 2 with the visual space frozen: only semantic weights are optimised."""
    rng = spawn_rngs(cfg.seed, 2)[1]
    params = init_semantic(cfg.embed_kind, ds.attributes, cfg.d_v, rng, cfg.hidden_semantic, cfg.threshold)
    centers = category_centers(embed_all(state, ds.seen_features), ds.seen_labels, ds.seen_class_ids)
    v_unseen = embed_all(state, ds.unseen_features)

    def record(epoch, m):
        if log is not None:
            log.append({"epoch": epoch_offset + epoch, "l_ssa": m["l_ssa"], "l_usa": m["l_usa"]})

    return fit_semantic(params, ds, centers, v_unseen, align_config(cfg), rng, on_epoch=record)


def train(ds: Dataset, cfg: RunConfig) -> TrainResult:
    if ds.unseen_labels_heldout is not None:
        ds = ds.without_heldout()
    log: list[dict] = []
    state = train_visual(ds, cfg, log)
    semantic = train_semantic(ds, state, cfg, log, epoch_offset=cfg.epochs_visual)
    return TrainResult(state, semantic, log)


def format_log(log: list[dict]) -> str:
    """CSV of per-epoch losses; a stage leaves the other stage's columns empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in log:
        w.writerow([row["epoch"]] + [repr(float(row[c])) if c in row else "" for c in LOG_COLUMNS[1:]])
    return buf.getvalue()


def save_run(result: TrainResult, cfg: RunConfig, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_state(result.state, out / "visual")
    save_semantic(result.semantic, out / "semantic")
    (out / "train_log.csv").write_text(format_log(result.log), encoding="utf-8")
    (out / "config.txt").write_text(serialize_config(cfg, include_dirs=False), encoding="utf-8")


def load_run(out_dir: str | Path):
    out = Path(out_dir)
    return load_state(out / "visual"), load_semantic(out / "semantic")

