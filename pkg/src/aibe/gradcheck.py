"""Finite-difference verification of every hand-written gradient in the package.

Each objective is checked on ``n`` random tiny instances.  Instances whose
pre-activations sit within ``KINK_MARGIN`` of a ReLU kink, whose outputs have a
dead (all-zero) row, or whose nearest-row choice is nearly tied are redrawn,
since central differences are meaningless there.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import agae, align, visual_mt
from .datakit import Dataset
from .numkit import finite_difference_gradient, make_rng, relative_error, row_l2_normalize, \
    row_l2_normalize_backward
from .visual_mt import MlpParams

STEP = 1e-5
TOLERANCE = 1e-4
KINK_MARGIN = 1e-3
MAX_REDRAWS = 500

_analytic_scale = 1.0  # != 1 only inside the negative-control hook

OBJECTIVES = ("svc", "uvc", "visual_total", "ssa", "usa", "semantic_total",
              "layer:student", "layer:classifier", "layer:row_l2_normalize", "layer:graph_layer",
              "layer:AGAE", "layer:GAE", "layer:FCE")


class Degenerate(Exception):
    """Raised by an instance builder when the draw is too close to a kink."""


@dataclass
class SuiteResult:
    errors: dict[str, list[float]] = field(default_factory=dict)
    seconds: float = 0.0

    def max_error(self, name: str) -> float:
        return max(self.errors[name])

    def failing(self, tol: float = TOLERANCE) -> list[str]:
        return [k for k in self.errors if self.max_error(k) >= tol]


def _away_from_kinks(*arrays) -> None:
    for a in arrays:
        if a.size and np.min(np.abs(a)) < KINK_MARGIN:
            raise Degenerate


def _live_rows(x: np.ndarray) -> None:
    if np.any(np.linalg.norm(x, axis=1) < KINK_MARGIN):
        raise Degenerate


def _fd_error(params: dict[str, np.ndarray], loss, analytic: dict[str, np.ndarray]) -> float:
    """Relative error between ``analytic`` and central differences of ``loss()`` over all of ``params``."""
    a_parts, n_parts = [], []
    for name, arr in params.items():
        def f(x, arr=arr):
            saved = arr.copy()
            arr[...] = x
            try:
                return loss()
            finally:
                arr[...] = saved
        n_parts.append(finite_difference_gradient(f, arr.copy(), STEP).ravel())
        a_parts.append(_analytic_scale * analytic[name].ravel())
    return relative_error(np.concatenate(a_parts), np.concatenate(n_parts))


def _normal_mlp(rng, dims, final_relu) -> MlpParams:
    ws = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(dims[:-1], dims[1:])]
    bs = [0.3 * rng.standard_normal((1, b)) for b in dims[1:]]
    return MlpParams(ws, bs, final_relu)


def _mlp_kinks(p: MlpParams, x: np.ndarray) -> np.ndarray:
    out, (_, pre) = visual_mt.mlp_forward(p, x)
    relu_pre = pre if p.final_relu else pre[:-1]
    _away_from_kinks(*relu_pre)
    return out


# -- visual objectives ---------------------------------------------------------

def _visual_instance(rng):
    d_in, hidden, d_v, n_s, b = 4, 5, 3, 3, 6
    student = _normal_mlp(rng, [d_in, hidden, d_v], True)
    teacher = _normal_mlp(rng, [d_in, hidden, d_v], True)
    classifier = _normal_mlp(rng, [d_v, n_s], False)
    state = visual_mt.MeanTeacherState(student, teacher, classifier)
    xs = rng.standard_normal((b, d_in))
    ys = rng.integers(0, n_s, size=b)
    xu = rng.standard_normal((b, d_in))
    xa = xu + 0.3 * rng.standard_normal(xu.shape)
    for x in (xs, xu):
        _live_rows(_mlp_kinks(student, x))
    _live_rows(_mlp_kinks(teacher, xa))
    return state, xs, ys, xu, xa


def check_visual(rng, omega2: float) -> float:
    """``l_svc + omega2 * l_uvc`` against the student and classifier weights."""
    state, xs, ys, xu, xa = _visual_instance(rng)
    params = state.trainable()

    def loss():
        l_svc, l_uvc, _, _ = visual_mt.visual_loss_and_grads(state, xs, ys, xu, [xa], omega2)
        return l_svc + omega2 * l_uvc

    _, _, _, grads = visual_mt.visual_loss_and_grads(state, xs, ys, xu, [xa], omega2)
    return _fd_error(params, loss, grads)


def check_uvc(rng) -> float:
    state, _, _, xu, xa = _visual_instance(rng)
    target = visual_mt.student_forward(state.teacher, xa)
    params = state.student.named()

    def loss():
        return visual_mt.consistency_loss(visual_mt.student_forward(state.student, xu), target)

    raw, cache = visual_mt.mlp_forward(state.student, xu)
    g = visual_mt.consistency_loss_grad(row_l2_normalize(raw), target)
    gw, gb, _ = visual_mt.mlp_backward(state.student, cache, row_l2_normalize_backward(raw, g))
    grads = {}
    for i in range(len(gw)):
        grads[f"w{i}"], grads[f"b{i}"] = gw[i], gb[i]
    return _fd_error(params, loss, grads)


# -- semantic objectives -------------------------------------------------------

N_SEEN, N_UNSEEN, N_ATTR, HIDDEN, D_V = 4, 3, 3, 5, 4


def _semantic_params(rng, kind: str, attrs: np.ndarray):
    if kind == "FCE":
        return _normal_mlp(rng, [N_ATTR, HIDDEN, HIDDEN, D_V], True)
    m = agae.normalize_adjacency(agae.attribute_adjacency(attrs))
    w = lambda a, b: rng.standard_normal((a, b)) / np.sqrt(a)
    w_f = w(N_ATTR, HIDDEN) if kind == "AGAE" else None
    return agae.AgaeParams(w(N_ATTR, HIDDEN), w_f, np.abs(w(HIDDEN, HIDDEN)), np.abs(w(HIDDEN, D_V)), m, kind)


def _semantic_kinks(params, attrs: np.ndarray) -> np.ndarray:
    if isinstance(params, MlpParams):
        out = _mlp_kinks(params, attrs)
    else:
        s, c = agae._graph_forward(params, attrs)
        z1 = c["z1"]
        if params.kind == "AGAE":
            _away_from_kinks(c["zf"])
            z1 = z1[c["xf"] > 0]  # gated-off entries are exactly zero for every nearby weight
        _away_from_kinks(z1, c["z2"], c["z3"])
        out = c["x3"]
    _live_rows(out)
    return out


class _SemanticFixture:
    def __init__(self, rng, kind: str):
        n_c = N_SEEN + N_UNSEEN
        attrs = rng.standard_normal((n_c, N_ATTR))
        seen, unseen = list(range(N_SEEN)), list(range(N_SEEN, n_c))
        self.ds = Dataset(attrs, [f"c{i}" for i in range(n_c)], seen, unseen,
                          np.zeros((N_SEEN, 1)), np.array(seen), np.zeros((1, 1)))
        self.params = _semantic_params(rng, kind, attrs)
        _semantic_kinks(self.params, attrs)
        self.centers = align.CategoryCenters(seen, row_l2_normalize(np.abs(rng.standard_normal((N_SEEN, D_V)))),
                                             [1] * N_SEEN)
        self.v_unseen = row_l2_normalize(np.abs(rng.standard_normal((8, D_V))))
        s_u = agae.embed(self.params, attrs)[unseen]
        top2 = np.sort(self.v_unseen @ s_u.T, axis=1)[:, -2:]
        if np.any(top2[:, 1] - top2[:, 0] < KINK_MARGIN):
            raise Degenerate

    def error(self, w_ssa: float, w_usa: float) -> float:
        p, ds = self.params, self.ds
        seen, unseen = np.asarray(ds.seen_class_ids), np.asarray(ds.unseen_class_ids)

        def loss():
            s = agae.embed(p, ds.attributes)
            return (w_ssa * align.seen_alignment_loss(self.centers, s[seen])
                    + w_usa * align.unseen_alignment_loss(self.v_unseen, s[unseen]))

        s, cache = agae.semantic_forward(p, ds.attributes)
        g = np.zeros_like(s)
        g[seen] += w_ssa * align.seen_alignment_grad(self.centers, s[seen])
        g[unseen] += w_usa * align.unseen_alignment_grad(self.v_unseen, s[unseen])
        return _fd_error(p.named(), loss, agae.semantic_backward(p, ds.attributes, cache, g))


def check_semantic_total_via_trainer(rng, kind: str, omega3: float) -> float:
    """The trainer's own ``semantic_loss_and_grads`` against differences of its loss."""
    fx = _SemanticFixture(rng, kind)

    def loss():
        l_ssa, l_usa, _ = align.semantic_loss_and_grads(fx.params, fx.ds, fx.centers, fx.v_unseen, omega3, True)
        return l_ssa + omega3 * l_usa

    _, _, grads = align.semantic_loss_and_grads(fx.params, fx.ds, fx.centers, fx.v_unseen, omega3, True)
    return _fd_error(fx.params.named(), loss, grads)


# -- single layers -------------------------------------------------------------

def check_layer_student(rng) -> float:
    p = _normal_mlp(rng, [4, 5, 3], True)
    x = rng.standard_normal((6, 4))
    _live_rows(_mlp_kinks(p, x))
    gout = rng.standard_normal((6, 3))
    raw, cache = visual_mt.mlp_forward(p, x)
    gw, gb, gx = visual_mt.mlp_backward(p, cache, row_l2_normalize_backward(raw, gout))
    grads = {"x": gx}
    params = {"x": x}
    for i in range(len(gw)):
        grads[f"w{i}"], grads[f"b{i}"] = gw[i], gb[i]
        params[f"w{i}"], params[f"b{i}"] = p.weights[i], p.biases[i]
    return _fd_error(params, lambda: float(np.sum(gout * visual_mt.student_forward(p, x))), grads)


def check_layer_classifier(rng) -> float:
    p = _normal_mlp(rng, [3, 4], False)
    v = rng.standard_normal((5, 3))
    ys = rng.integers(0, 4, size=5)
    logits, cache = visual_mt.mlp_forward(p, v)
    g = visual_mt.seen_visual_loss_grad_logits(visual_mt.softmax(logits), ys)
    gw, gb, gv = visual_mt.mlp_backward(p, cache, g)
    params = {"w0": p.weights[0], "b0": p.biases[0], "v": v}
    grads = {"w0": gw[0], "b0": gb[0], "v": gv}
    return _fd_error(params, lambda: visual_mt.seen_visual_loss(visual_mt.classifier_forward(p, v), ys), grads)


def check_layer_normalize(rng) -> float:
    x = rng.standard_normal((5, 4))
    _live_rows(x)
    gout = rng.standard_normal(x.shape)
    return _fd_error({"x": x}, lambda: float(np.sum(gout * row_l2_normalize(x))),
                     {"x": row_l2_normalize_backward(x, gout)})


def check_graph_layer(rng) -> float:
    n, d_in, d_out = 5, 4, 3
    m = agae.normalize_adjacency(agae.attribute_adjacency(rng.standard_normal((n, 3))))
    x = rng.standard_normal((n, d_in))
    w = rng.standard_normal((d_in, d_out))
    z = m @ x @ w
    _away_from_kinks(z)
    gout = rng.standard_normal((n, d_out))
    gz = gout * (z > 0)
    grads = {"x": m.T @ gz @ w.T, "w": (m @ x).T @ gz}
    return _fd_error({"x": x, "w": w}, lambda: float(np.sum(gout * agae.graph_layer(m, x, w))), grads)


def check_semantic_layer(rng, kind: str) -> float:
    attrs = rng.standard_normal((N_SEEN + N_UNSEEN, N_ATTR))
    p = _semantic_params(rng, kind, attrs)
    _semantic_kinks(p, attrs)
    gout = rng.standard_normal((attrs.shape[0], D_V))
    s, cache = agae.semantic_forward(p, attrs)
    grads = agae.semantic_backward(p, attrs, cache, gout)
    return _fd_error(p.named(), lambda: float(np.sum(gout * agae.embed(p, attrs))), grads)


# -- suite -------------------------------------------------------------------

def _checks(rng):
    kind = ("AGAE", "GAE", "FCE")
    w3 = float(rng.uniform(0.1, 2.0))
    return {
        "svc": lambda r: check_visual(r, 0.0),
        "uvc": check_uvc,
        "visual_total": lambda r: check_visual(r, w3),
        "ssa": lambda r: max(_SemanticFixture(r, k).error(1.0, 0.0) for k in kind),
        "usa": lambda r: max(_SemanticFixture(r, k).error(0.0, 1.0) for k in kind),
        "semantic_total": lambda r: max(check_semantic_total_via_trainer(r, k, w3) for k in kind),
        "layer:student": check_layer_student,
        "layer:classifier": check_layer_classifier,
        "layer:row_l2_normalize": check_layer_normalize,
        "layer:graph_layer": check_graph_layer,
        "layer:AGAE": lambda r: check_semantic_layer(r, "AGAE"),
        "layer:GAE": lambda r: check_semantic_layer(r, "GAE"),
        "layer:FCE": lambda r: check_semantic_layer(r, "FCE"),
    }


def _one(check, rng) -> float:
    for _ in range(MAX_REDRAWS):
        try:
            return check(rng)
        except Degenerate:
            continue
    raise RuntimeError("could not draw an instance away from ReLU kinks")


def run_suite(seed: int = 0, n_instances: int = 20, corrupt: str | None = None) -> SuiteResult:
    """Check every objective on ``n_instances`` draws.

    ``corrupt`` names an objective whose reported error is computed against a
    deliberately perturbed analytic gradient; it is a negative control for tests.
    """
    if corrupt is not None and corrupt not in OBJECTIVES:
        raise ValueError(f"unknown objective {corrupt!r}")
    start = time.perf_counter()
    rng = make_rng(seed)
    result = SuiteResult()
    for name, check in _checks(rng).items():
        errs = []
        for _ in range(n_instances):
            if name == corrupt:
                errs.append(_corrupted(check, rng))
            else:
                errs.append(_one(check, rng))
        result.errors[name] = errs
    result.seconds = time.perf_counter() - start
    return result


def _corrupted(check, rng) -> float:
    global _analytic_scale
    _analytic_scale = 1.01
    try:
        return _one(check, rng)
    finally:
        _analytic_scale = 1.0


def report_lines(result: SuiteResult, tol: float = TOLERANCE) -> list[str]:
    lines = []
    for name in result.errors:
        err = result.max_error(name)
        lines.append(f"{name:24s} n={len(result.errors[name]):3d} max_rel_err={err:.3e} "
                     f"{'ok' if err < tol else 'FAIL'}")
    return lines
