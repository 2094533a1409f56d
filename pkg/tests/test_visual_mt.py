import copy
import math

import numpy as np
import pytest

from aibe import visual_mt as vm
from aibe.datakit import SynthSpec, gen_synthetic
from aibe.numkit import NumericError, finite_difference_gradient, make_rng, relative_error


def test_ema_examples():
    st = vm.init_state(3, [4], 2, 2, make_rng(0), omega1=0.95)
    for w in st.teacher.weights + st.teacher.biases:
        w[...] = 0.0
    for w in st.student.weights + st.student.biases:
        w[...] = 1.0
    vm.ema_update(st)
    assert all(np.allclose(w, 0.05, atol=1e-15) for w in st.teacher.weights + st.teacher.biases)


def test_ema_omega_edge_cases():
    for omega, expect_student in ((0.0, True), (1.0, False)):
        st = vm.init_state(3, [4], 2, 2, make_rng(1), omega1=omega)
        st.student.weights[0] += 1.0
        before = copy.deepcopy(st.teacher)
        vm.ema_update(st)
        ref = st.student if expect_student else before
        assert np.array_equal(st.teacher.weights[0], ref.weights[0])


def test_ema_converges_to_fixed_student():
    st = vm.init_state(3, [4], 2, 2, make_rng(2), omega1=0.95)
    for _ in range(400):
        vm.ema_update(st)
    assert np.allclose(st.teacher.weights[0], st.student.weights[0], atol=1e-8)


def test_omega1_range_checked():
    with pytest.raises(ValueError):
        vm.init_state(3, [4], 2, 2, make_rng(0), omega1=1.5)


def test_seen_loss_values():
    probs = np.array([[0.25, 0.75], [0.5, 0.5]])
    assert math.isclose(vm.seen_visual_loss(probs, np.array([1, 0])), -(math.log(0.75) + math.log(0.5)) / 2)
    assert vm.seen_visual_loss(np.array([[1.0, 0.0]]), np.array([0])) == 0.0
    assert math.isclose(vm.seen_visual_loss(np.array([[1.0, 0.0]]), np.array([1])), -math.log(1e-12))


def test_seen_loss_grad_matches_differences(rng):
    logits = rng.standard_normal((5, 4))
    y = rng.integers(0, 4, 5)
    f = lambda z: vm.seen_visual_loss(vm.softmax(z), y)
    g = vm.seen_visual_loss_grad_logits(vm.softmax(logits), y)
    assert relative_error(g, finite_difference_gradient(f, logits)) < 1e-7


def test_consistency_loss():
    s = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert vm.consistency_loss(s, s) == 0.0
    t = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert vm.consistency_loss(s, t) == 1.0
    assert vm.consistency_loss(np.zeros((0, 2)), np.zeros((0, 2))) == 0.0


def test_ramp():
    sch = vm.RampSchedule(w_max=2.0, ramp_epochs=10)
    assert math.isclose(vm.ramp_weight(sch, 0), 2.0 * math.exp(-5))
    assert vm.ramp_weight(sch, 10) == 2.0
    assert vm.ramp_weight(sch, 50) == 2.0
    ws = [vm.ramp_weight(sch, e) for e in range(12)]
    assert ws == sorted(ws)


def test_total_loss():
    assert vm.visual_total_loss(1.0, 3.0, 0.5) == 2.5


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([[1.0, -2.0]])}
    opt = vm.Adam(lr=0.001)
    opt.step(p, {"w": np.array([[0.3, -7.0]])})
    assert np.allclose(p["w"], [[0.999, -1.999]], atol=1e-9)
    with pytest.raises(NumericError):
        opt.step(p, {"w": np.array([[np.nan, 0.0]])})


def test_student_embeddings_are_unit_rows(rng):
    st = vm.init_state(5, [8], 4, 3, rng)
    v = vm.embed_all(st, rng.standard_normal((10, 5)))
    norms = np.linalg.norm(v, axis=1)
    assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0))


def test_training_learns_seen_classes():
    ds = gen_synthetic(SynthSpec(sigma=0.1), make_rng(0)).without_heldout()
    log = []
    st = vm.fit_visual(ds, vm.VisualConfig(epochs=30), make_rng(1), on_epoch=lambda e, m: log.append(m))
    assert log[-1]["l_svc"] < log[0]["l_svc"]
    assert log[-1]["acc"] > 0.9
    assert st.epoch == 30


def test_uvc_off_means_zero_weight():
    ds = gen_synthetic(SynthSpec(sigma=0.1), make_rng(0)).without_heldout()
    log = []
    vm.fit_visual(ds, vm.VisualConfig(epochs=3, use_uvc=False), make_rng(1), on_epoch=lambda e, m: log.append(m))
    assert all(m["omega2"] == 0.0 for m in log)


def test_checkpoint_round_trip(tmp_path, rng):
    st = vm.init_state(3, [4], 2, 2, rng)
    st.optimizer.step(st.trainable(), {k: np.ones_like(v) for k, v in st.trainable().items()})
    vm.save_state(st, tmp_path)
    back = vm.load_state(tmp_path)
    assert back.omega1 == st.omega1 and back.optimizer.t == 1
    for a, b in zip(back.student.weights + back.teacher.weights, st.student.weights + st.teacher.weights):
        assert np.array_equal(a, b)
    assert np.array_equal(back.optimizer.m["student.w0"], st.optimizer.m["student.w0"])
