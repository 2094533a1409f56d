"""Stage 1: Mean-Teacher visual embedding over pre-extracted features.

The student S maps features to unit-norm embeddings, the classifier C maps
embeddings to seen-class probabilities, and the teacher is an exponential
moving average of the student.  Seen data drives a cross-entropy loss, unseen
data a student/teacher consistency loss on augmented copies.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .datakit import Dataset
from .numkit import NumericError, ShapeError, relu, row_l2_normalize, row_l2_normalize_backward

LOG_CLAMP = 1e-12


@dataclass
class MlpParams:
    """Fully connected layers; ReLU between layers and optionally after the last."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    final_relu: bool = False

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias row per weight matrix, at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (1, w.shape[1]):
                raise ShapeError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: input dim {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def named(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(dims: list[int], rng: np.random.Generator, final_relu: bool = False) -> MlpParams:
    ws = [glorot(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
    bs = [np.zeros((1, b)) for b in dims[1:]]
    return MlpParams(ws, bs, final_relu)


def mlp_forward(p: MlpParams, x: np.ndarray):
    """Return ``(output, cache)``; cache holds layer inputs and pre-activations."""
    if x.shape[1] != p.in_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {p.in_dim}")
    inputs, pre = [], []
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = relu(z) if (i < last or p.final_relu) else z
    return h, (inputs, pre)


def mlp_backward(p: MlpParams, cache, grad_out: np.ndarray):
    """Return ``(weight_grads, bias_grads, input_grad)``."""
    inputs, pre = cache
    last = len(p.weights) - 1
    gw: list[np.ndarray] = [None] * len(p.weights)
    gb: list[np.ndarray] = [None] * len(p.weights)
    g = grad_out
    for i in range(last, -1, -1):
        if i < last or p.final_relu:
            g = g * (pre[i] > 0)
        gw[i] = inputs[i].T @ g
        gb[i] = g.sum(axis=0, keepdims=True)
        g = g @ p.weights[i].T
    return gw, gb, g


# -- student / classifier ----------------------------------------------------

def init_student(d_in: int, hidden: list[int], d_v: int, rng: np.random.Generator) -> MlpParams:
    # ReLU on the output as well: embeddings are non-negative like pooled CNN features.
    return init_mlp([d_in, *hidden, d_v], rng, final_relu=True)


def init_classifier(d_v: int, n_seen: int, rng: np.random.Generator) -> MlpParams:
    return init_mlp([d_v, n_seen], rng, final_relu=False)


def student_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    return row_l2_normalize(mlp_forward(p, x)[0])


def _student_forward_cache(p: MlpParams, x: np.ndarray):
    raw, cache = mlp_forward(p, x)
    return row_l2_normalize(raw), (raw, cache)


def _student_backward(p: MlpParams, cache, grad_out: np.ndarray):
    raw, mcache = cache
    return mlp_backward(p, mcache, row_l2_normalize_backward(raw, grad_out))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classifier_forward(c: MlpParams, v: np.ndarray) -> np.ndarray:
    return softmax(mlp_forward(c, v)[0])


def seen_visual_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true column; logs clamped at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    p_true = probs[np.arange(len(labels)), labels]
    if np.any(~np.isfinite(p_true)):
        raise NumericError("non-finite class probability")
    return float(-np.mean(np.log(np.maximum(p_true, LOG_CLAMP))))


def seen_visual_loss_grad_logits(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of :func:`seen_visual_loss` with respect to the softmax logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    g = probs.copy()
    rows = np.arange(n)
    g[rows, labels] -= 1.0
    # Clamped rows have a flat loss.
    g[probs[rows, labels] < LOG_CLAMP] = 0.0
    return g / n


def augment_features(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return x.copy()
    return x + rng.standard_normal(x.shape) * sigma


def consistency_loss(s_out: np.ndarray, t_out: np.ndarray) -> float:
    if s_out.shape != t_out.shape:
        raise ShapeError(f"consistency_loss: shape mismatch {s_out.shape} vs {t_out.shape}")
    if s_out.shape[0] == 0:
        return 0.0
    d = s_out - t_out
    return float(np.mean(np.sum(d * d, axis=1)))


def consistency_loss_grad(s_out: np.ndarray, t_out: np.ndarray) -> np.ndarray:
    """Gradient with respect to ``s_out``; the teacher side is a constant target."""
    return 2.0 * (s_out - t_out) / max(s_out.shape[0], 1)


@dataclass(frozen=True)
class RampSchedule:
    w_max: float = 1.0
    ramp_epochs: int = 40

    def __post_init__(self):
        if self.w_max < 0:
            raise ValueError("w_max must be >= 0")
        if self.ramp_epochs < 1:
            raise ValueError("ramp_epochs must be >= 1")


def ramp_weight(sch: RampSchedule, epoch: int) -> float:
    """Gaussian ramp-up ``w_max * exp(-5 (1 - t)^2)``, ``t = min(epoch / ramp_epochs, 1)``."""
    t = min(epoch / sch.ramp_epochs, 1.0)
    return sch.w_max * math.exp(-5.0 * (1.0 - t) ** 2)


def visual_total_loss(l_svc: float, l_uvc: float, omega2: float) -> float:
    return l_svc + omega2 * l_uvc


# -- optimizer ---------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- mean teacher ------------------------------------------------------------

@dataclass
class MeanTeacherState:
    student: MlpParams
    teacher: MlpParams
    classifier: MlpParams
    omega1: float = 0.95
    optimizer: Adam = field(default_factory=Adam)
    epoch: int = 0

    def __post_init__(self):
        if not 0.0 <= self.omega1 <= 1.0:
            raise ValueError(f"omega1 must lie in [0, 1], got {self.omega1}")
        s_shapes = [w.shape for w in self.student.weights]
        if s_shapes != [w.shape for w in self.teacher.weights]:
            raise ShapeError("teacher and student shapes differ")
        if self.classifier.in_dim != self.student.out_dim:
            raise ShapeError("classifier input dim != embedding dim")

    def trainable(self) -> dict[str, np.ndarray]:
        return {**self.student.named("student."), **self.classifier.named("classifier.")}


def init_state(d_in: int, hidden: list[int], d_v: int, n_seen: int, rng: np.random.Generator,
               omega1: float = 0.95, lr: float = 1e-3) -> MeanTeacherState:
    student = init_student(d_in, hidden, d_v, rng)
    classifier = init_classifier(d_v, n_seen, rng)
    return MeanTeacherState(student, copy.deepcopy(student), classifier, omega1, Adam(lr=lr))


def ema_update(state: MeanTeacherState) -> MeanTeacherState:
    """teacher <- omega1 * teacher + (1 - omega1) * student, entrywise, in place."""
    a = state.omega1
    for tw, sw in zip(state.teacher.weights + state.teacher.biases,
                      state.student.weights + state.student.biases):
        tw *= a
        tw += (1.0 - a) * sw
    return state


@dataclass(frozen=True)
class VisualConfig:
    epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 64
    unseen_batch_size: int = 64
    ramp: RampSchedule = RampSchedule()
    aug_sigma: float = 0.2  # relative to the global std of the unseen features
    n_aug: int = 1
    use_uvc: bool = True


def visual_loss_and_grads(state: MeanTeacherState, xs: np.ndarray, ys_col: np.ndarray,
                          xu: np.ndarray | None, xu_aug: list[np.ndarray], omega2: float):
    """Loss pieces of one mixed batch and gradients of ``l_svc + omega2 * l_uvc``.

    ``ys_col`` are classifier column indices.  The teacher output is a fixed target.
    """
    v, scache = _student_forward_cache(state.student, xs)
    logits, ccache = mlp_forward(state.classifier, v)
    probs = softmax(logits)
    l_svc = seen_visual_loss(probs, ys_col)
    cw, cb, g_v = mlp_backward(state.classifier, ccache, seen_visual_loss_grad_logits(probs, ys_col))
    sw, sb, _ = _student_backward(state.student, scache, g_v)

    l_uvc = 0.0
    if xu is not None and len(xu) and xu_aug:
        s_u, ucache = _student_forward_cache(state.student, xu)
        g_su = np.zeros_like(s_u)
        for xa in xu_aug:
            t_u = student_forward(state.teacher, xa)
            l_uvc += consistency_loss(s_u, t_u) / len(xu_aug)
            g_su += consistency_loss_grad(s_u, t_u) / len(xu_aug)
        if omega2 != 0.0:
            uw, ub, _ = _student_backward(state.student, ucache, omega2 * g_su)
            sw = [a + b for a, b in zip(sw, uw)]
            sb = [a + b for a, b in zip(sb, ub)]
    grads = {}
    for i in range(len(sw)):
        grads[f"student.w{i}"], grads[f"student.b{i}"] = sw[i], sb[i]
    for i in range(len(cw)):
        grads[f"classifier.w{i}"], grads[f"classifier.b{i}"] = cw[i], cb[i]
    acc = float(np.mean(np.argmax(probs, axis=1) == ys_col))
    return l_svc, l_uvc, acc, grads


def train_visual_epoch(state: MeanTeacherState, ds: Dataset, cfg: VisualConfig, rng: np.random.Generator):
    """One pass over the seen data in shuffled batches, each paired with an unseen batch.

    Returns ``(state, metrics)`` with metrics ``l_svc``, ``l_uvc``, ``omega2``, ``acc``
    averaged over steps.  ``state`` is updated in place.
    """
    col = {c: i for i, c in enumerate(ds.seen_class_ids)}
    ys_all = np.array([col[int(y)] for y in ds.seen_labels], dtype=np.int64)
    n_s, n_u = ds.seen_features.shape[0], ds.unseen_features.shape[0]
    omega2 = ramp_weight(cfg.ramp, state.epoch) if cfg.use_uvc else 0.0
    aug_sigma = cfg.aug_sigma * float(np.std(ds.unseen_features)) if n_u else 0.0

    order = rng.permutation(n_s)
    trainable = state.trainable()
    totals = np.zeros(3)
    steps = 0
    for start in range(0, n_s, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        xu = aug = None
        if n_u:
            uidx = rng.choice(n_u, size=min(cfg.unseen_batch_size, n_u), replace=False)
            xu = ds.unseen_features[uidx]
            aug = [augment_features(xu, aug_sigma, rng) for _ in range(cfg.n_aug)]
        l_svc, l_uvc, acc, grads = visual_loss_and_grads(
            state, ds.seen_features[idx], ys_all[idx], xu, aug, omega2)
        state.optimizer.step(trainable, grads)
        ema_update(state)
        totals += (l_svc, l_uvc, acc)
        steps += 1
    state.epoch += 1
    l_svc, l_uvc, acc = totals / max(steps, 1)
    return state, {"l_svc": l_svc, "l_uvc": l_uvc, "omega2": omega2, "acc": acc}


def fit_visual(ds: Dataset, cfg: VisualConfig, rng: np.random.Generator, d_v: int = 64,
               hidden: list[int] | None = None, omega1: float = 0.95, on_epoch=None) -> MeanTeacherState:
    hidden = [256] if hidden is None else hidden
    state = init_state(ds.feature_dim, hidden, d_v, len(ds.seen_class_ids), rng, omega1, cfg.lr)
    for _ in range(cfg.epochs):
        state, metrics = train_visual_epoch(state, ds, cfg, rng)
        if on_epoch is not None:
            on_epoch(state.epoch, metrics)
    return state


def embed_all(state: MeanTeacherState, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Student embeddings of every row; the teacher is not used."""
    if x.shape[0] == 0:
        return np.zeros((0, state.student.out_dim))
    return np.vstack([student_forward(state.student, x[i:i + chunk]) for i in range(0, x.shape[0], chunk)])


# -- checkpoints -------------------------------------------------------------

def save_state(state: MeanTeacherState, directory: str | Path) -> None:
    entries = []
    for role, p in (("student", state.student), ("teacher", state.teacher), ("classifier", state.classifier)):
        for name, arr in p.named(f"{role}.").items():
            entries.append((name, arr, role))
    opt = state.optimizer
    for name in sorted(opt.m):
        entries.append((f"adam_m.{name}", opt.m[name], "optimizer"))
        entries.append((f"adam_v.{name}", opt.v[name], "optimizer"))
    scalars = {"omega1": state.omega1, "epoch": state.epoch, "adam_t": opt.t, "adam_lr": opt.lr,
               "student_final_relu": float(state.student.final_relu)}
    for name, val in scalars.items():
        entries.append((name, np.array([[float(val)]]), "scalar"))
    checkpoint.save_arrays(directory, entries)


def _mlp_from(arrays, role: str, final_relu: bool) -> MlpParams:
    ws, bs = [], []
    i = 0
    while f"{role}.w{i}" in arrays:
        ws.append(arrays[f"{role}.w{i}"][0])
        bs.append(arrays[f"{role}.b{i}"][0])
        i += 1
    if not ws:
        raise checkpoint.CheckpointError(f"checkpoint has no {role} layers")
    return MlpParams(ws, bs, final_relu)


def load_state(directory: str | Path) -> MeanTeacherState:
    arrays = checkpoint.load_arrays(directory)
    try:
        scalar = {k: float(v[0][0, 0]) for k, v in arrays.items() if v[1] == "scalar"}
        final_relu = bool(scalar["student_final_relu"])
        opt = Adam(lr=scalar["adam_lr"], t=int(scalar["adam_t"]))
        for k, (arr, role) in arrays.items():
            if role == "optimizer":
                kind, name = k.split(".", 1)
                (opt.m if kind == "adam_m" else opt.v)[name] = arr
        return MeanTeacherState(
            _mlp_from(arrays, "student", final_relu),
            _mlp_from(arrays, "teacher", final_relu),
            _mlp_from(arrays, "classifier", False),
            scalar["omega1"], opt, int(scalar["epoch"]),
        )
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"visual checkpoint missing entry {exc}") from None
