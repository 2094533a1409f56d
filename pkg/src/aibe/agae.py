"""Attentional graph attribute embedding and its GAE / FCE ablation variants.

All three map the ``n_c x n_a`` attribute matrix to an ``n_c x d_v`` semantic
space with unit-norm rows.  Forward passes return a cache so the alignment
trainer can backpropagate by hand.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .numkit import ShapeError, hadamard, matmul, relu, row_l2_normalize, row_l2_normalize_backward
from .visual_mt import MlpParams, glorot, init_mlp, mlp_backward, mlp_forward

EMBED_KINDS = ("AGAE", "GAE", "FCE")


def attribute_adjacency(attrs: np.ndarray, threshold: float = 0.0) -> np.ndarray:
    """Category similarity: cosine of attribute rows, zeroed below ``threshold``, zero diagonal."""
    norms = np.linalg.norm(attrs, axis=1)
    zero = norms == 0.0
    if np.any(zero):
        warnings.warn(f"all-zero attribute rows {np.flatnonzero(zero).tolist()}; their graph links are cut",
                      stacklevel=2)
    unit = attrs / np.where(zero, 1.0, norms)[:, None]
    r = np.clip(unit @ unit.T, 0.0, 1.0)
    r[r < threshold] = 0.0
    np.fill_diagonal(r, 0.0)
    r[zero, :] = 0.0
    r[:, zero] = 0.0
    return 0.5 * (r + r.T)


def normalize_adjacency(r: np.ndarray) -> np.ndarray:
    """Symmetric normalisation D^-1/2 (R + I) D^-1/2 with D the row sums of R + I."""
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ShapeError(f"adjacency must be square, got {r.shape}")
    a = r + np.eye(r.shape[0])
    d = 1.0 / np.sqrt(a.sum(axis=1))
    # outer(d, d) is exactly symmetric, so a symmetric input stays exactly symmetric
    return a * np.outer(d, d)


def graph_layer(m: np.ndarray, x: np.ndarray, w: np.ndarray, apply_nonlinearity: bool = True) -> np.ndarray:
    out = matmul(matmul(m, x), w)
    return relu(out) if apply_nonlinearity else out


@dataclass
class AgaeParams:
    """Graph embedding weights plus the cached normalised adjacency.

    ``kind`` is ``"AGAE"`` (with the attentional fully connected branch ``w_f``)
    or ``"GAE"`` (three plain graph layers; ``w_f`` is ``None``).
    """

    w_g: np.ndarray
    w_f: np.ndarray | None
    w_g2: np.ndarray
    w_g3: np.ndarray
    m: np.ndarray
    kind: str = "AGAE"

    def __post_init__(self):
        if self.kind not in ("AGAE", "GAE"):
            raise ValueError(f"unknown graph embedding kind {self.kind!r}")
        if self.kind == "AGAE" and (self.w_f is None or self.w_f.shape != self.w_g.shape):
            raise ShapeError("AGAE needs w_f with the same shape as w_g")
        if self.w_g.shape[1] != self.w_g2.shape[0] or self.w_g2.shape[1] != self.w_g3.shape[0]:
            raise ShapeError("graph layer weights do not chain")
        if self.m.shape[0] != self.m.shape[1]:
            raise ShapeError("adjacency must be square")

    def named(self) -> dict[str, np.ndarray]:
        out = {"w_g": self.w_g, "w_g2": self.w_g2, "w_g3": self.w_g3}
        if self.w_f is not None:
            out["w_f"] = self.w_f
        return out


def init_agae(attrs: np.ndarray, d_v: int, rng: np.random.Generator, hidden: int = 2048,
              kind: str = "AGAE", threshold: float = 0.0) -> AgaeParams:
    """Glorot weights; the two deeper layers start non-negative.

    Their inputs are post-ReLU, so a sign-symmetric start kills about half of
    the units of every layer on the handful of class rows we propagate.
    """
    n_a = attrs.shape[1]
    m = normalize_adjacency(attribute_adjacency(attrs, threshold))
    w_g = glorot(rng, n_a, hidden)
    w_f = glorot(rng, n_a, hidden) if kind == "AGAE" else None
    w_g2 = np.abs(glorot(rng, hidden, hidden))
    w_g3 = np.abs(glorot(rng, hidden, d_v))
    return AgaeParams(w_g, w_f, w_g2, w_g3, m, kind)


def init_fce(n_a: int, d_v: int, rng: np.random.Generator, hidden: int = 2048) -> MlpParams:
    """Three-layer MLP with the same non-negative start for the deeper layers as :func:`init_agae`."""
    p = init_mlp([n_a, hidden, hidden, d_v], rng, final_relu=True)
    for w in p.weights[1:]:
        np.abs(w, out=w)
    return p


def init_semantic(kind: str, attrs: np.ndarray, d_v: int, rng: np.random.Generator, hidden: int = 2048,
                  threshold: float = 0.0):
    if kind == "FCE":
        return init_fce(attrs.shape[1], d_v, rng, hidden)
    if kind in ("AGAE", "GAE"):
        return init_agae(attrs, d_v, rng, hidden, kind, threshold)
    raise ValueError(f"embed kind must be one of {EMBED_KINDS}, got {kind!r}")


def embed_kind(params) -> str:
    return "FCE" if isinstance(params, MlpParams) else params.kind


# -- forward / backward ------------------------------------------------------

def _graph_forward(p: AgaeParams, attrs: np.ndarray):
    if attrs.shape != (p.m.shape[0], p.w_g.shape[0]):
        raise ShapeError(f"attributes {attrs.shape} do not match adjacency {p.m.shape} / w_g {p.w_g.shape}")
    ma = p.m @ attrs
    c = {"ma": ma}
    if p.kind == "AGAE":
        xg = ma @ p.w_g
        zf = attrs @ p.w_f
        xf = relu(zf)
        z1 = hadamard(xg, xf)
        c.update(xg=xg, zf=zf, xf=xf)
    else:
        z1 = ma @ p.w_g
    x1 = relu(z1)
    mx1 = p.m @ x1
    z2 = mx1 @ p.w_g2
    x2 = relu(z2)
    mx2 = p.m @ x2
    z3 = mx2 @ p.w_g3
    x3 = relu(z3)
    c.update(z1=z1, mx1=mx1, z2=z2, mx2=mx2, z3=z3, x3=x3)
    return row_l2_normalize(x3), c


def _graph_backward(p: AgaeParams, attrs: np.ndarray, c, grad_s: np.ndarray) -> dict[str, np.ndarray]:
    g3 = row_l2_normalize_backward(c["x3"], grad_s) * (c["z3"] > 0)
    grads = {"w_g3": c["mx2"].T @ g3}
    g2 = (p.m.T @ (g3 @ p.w_g3.T)) * (c["z2"] > 0)
    grads["w_g2"] = c["mx1"].T @ g2
    g1 = (p.m.T @ (g2 @ p.w_g2.T)) * (c["z1"] > 0)
    if p.kind == "AGAE":
        grads["w_g"] = c["ma"].T @ (g1 * c["xf"])
        grads["w_f"] = attrs.T @ ((g1 * c["xg"]) * (c["zf"] > 0))
    else:
        grads["w_g"] = c["ma"].T @ g1
    return grads


def semantic_forward(params, attrs: np.ndarray):
    """Return ``(S, cache)`` for any embedding kind."""
    if isinstance(params, MlpParams):
        out, cache = mlp_forward(params, attrs)
        return row_l2_normalize(out), (out, cache)
    return _graph_forward(params, attrs)


def semantic_backward(params, attrs: np.ndarray, cache, grad_s: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a loss with respect to the named weights, given dLoss/dS."""
    if isinstance(params, MlpParams):
        out, mcache = cache
        gw, gb, _ = mlp_backward(params, mcache, row_l2_normalize_backward(out, grad_s))
        grads = {}
        for i in range(len(gw)):
            grads[f"w{i}"], grads[f"b{i}"] = gw[i], gb[i]
        return grads
    return _graph_backward(params, attrs, cache, grad_s)


def agae_forward(p: AgaeParams, attrs: np.ndarray) -> np.ndarray:
    if p.kind != "AGAE":
        raise ValueError("agae_forward needs AGAE parameters")
    return _graph_forward(p, attrs)[0]


def gae_forward(p: AgaeParams, attrs: np.ndarray) -> np.ndarray:
    """Three stacked graph layers, no attentional branch (``w_f`` ignored)."""
    plain = AgaeParams(p.w_g, None, p.w_g2, p.w_g3, p.m, "GAE")
    return _graph_forward(plain, attrs)[0]


def fce_forward(layers: MlpParams, attrs: np.ndarray) -> np.ndarray:
    return semantic_forward(layers, attrs)[0]


def embed(params, attrs: np.ndarray) -> np.ndarray:
    return semantic_forward(params, attrs)[0]


# -- checkpoints -------------------------------------------------------------

def save_semantic(params, directory: str | Path) -> None:
    kind = embed_kind(params)
    entries = [(name, arr, f"semantic:{kind}") for name, arr in params.named().items()]
    if isinstance(params, AgaeParams):
        entries.append(("adjacency", params.m, "adjacency"))
    checkpoint.save_arrays(directory, entries)


def load_semantic(directory: str | Path):
    arrays = checkpoint.load_arrays(directory)
    kinds = {role.split(":", 1)[1] for _, role in arrays.values() if role.startswith("semantic:")}
    if len(kinds) != 1:
        raise checkpoint.CheckpointError(f"semantic checkpoint declares kinds {sorted(kinds)}")
    kind = kinds.pop()
    a = {k: v[0] for k, v in arrays.items()}
    try:
        if kind == "FCE":
            n = sum(1 for k in a if k.startswith("w"))
            return MlpParams([a[f"w{i}"] for i in range(n)], [a[f"b{i}"] for i in range(n)], final_relu=True)
        return AgaeParams(a["w_g"], a.get("w_f"), a["w_g2"], a["w_g3"], a["adjacency"], kind)
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"semantic checkpoint missing entry {exc}") from None
