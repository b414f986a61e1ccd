import csv
import json

import numpy as np
import pytest

from motionedit.losses import EditSpec
from motionedit.optimizer import (OptimizerConfig, OptimizerError,
                                  RetainedStepMeter, grad_full_cache,
                                  grad_inversion_recompute, optimize_noise)
from motionedit.sampler import SamplerConfig, standard_noise
from motionedit.schedule import build_schedule, respace

from _util import ScaleStub, ZeroStub
from conftest import FRAME_SHAPE

SHAPE = (4, 2, 3)
MR = EditSpec(kind="motion_range")


def small_inv_schedule(n, base=32):
    return respace(build_schedule(base), n, invertible=True)


def test_full_cache_two_step_closed_form():
    """Linear stub makes the whole chain a per-coordinate 2x2 affine product."""
    kappa, p = 0.5, 0.8
    sched = small_inv_schedule(2, base=8)
    stub = ScaleStub(kappa)
    rng = np.random.default_rng(0)
    xT, yT = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    # independent oracle: J = M_p P_1 M_p P_2 per coordinate; L = mean(x0^2)
    mix = np.array([[p, 1 - p], [1 - p, p]])
    chain = np.eye(2)
    for t in (1, 2):
        a, b = sched.a(t), sched.b(t)
        pre = np.array([[a, b * kappa], [a * b * kappa, a + (b * kappa) ** 2]])
        chain = chain @ (mix @ pre)
    x0 = chain[0, 0] * xT + chain[0, 1] * yT
    gx_expect = (2.0 * x0 / x0.size) * chain[0, 0]
    gy_expect = (2.0 * x0 / x0.size) * chain[0, 1]

    loss, gx, gy = grad_full_cache(xT, yT, stub, sched, MR,
                                   config=SamplerConfig(mixing_p=p))
    assert abs(loss - float((x0 ** 2).mean())) < 1e-12
    assert np.abs(gx - gx_expect).max() < 1e-12
    assert np.abs(gy - gy_expect).max() < 1e-12


def test_loss_at_its_optimum_gives_zero_gradients():
    # zero stub and zero noise generate the all-zero motion, which sits at the
    # frame-joint optimum for zero targets, so nothing flows back
    spec = EditSpec(kind="frame_joint", frames=(0, 2), joints=(0, 1),
                    targets=np.zeros((2, 3)))
    loss, gx, gy = grad_full_cache(np.zeros(SHAPE), np.zeros(SHAPE), ZeroStub(),
                                   small_inv_schedule(3), spec)
    assert loss == 0.0
    assert np.array_equal(gx, np.zeros(SHAPE))
    assert np.array_equal(gy, np.zeros(SHAPE))


def test_full_cache_matches_finite_differences(toy_model, toy_schedule):
    sched = respace(toy_schedule, 5, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 3)
    yT = xT.copy()
    spec = EditSpec(kind="velocity")
    _, gx, _ = grad_full_cache(xT, yT, toy_model, sched, spec)

    from motionedit.optimizer import _run_generation
    def loss_of(x):
        x0, _ = _run_generation(x, yT, toy_model, sched, SamplerConfig(),
                                lambda t: None)
        return float((np.concatenate([x0[1:] - x0[:-1],
                                      np.zeros((1,) + x0.shape[1:])]) ** 2).mean())

    rng = np.random.default_rng(4)
    h = 1e-4
    for flat in rng.choice(xT.size, size=8, replace=False):
        e = np.zeros(xT.size)
        e[flat] = h
        e = e.reshape(FRAME_SHAPE)
        fd = (loss_of(xT + e) - loss_of(xT - e)) / (2 * h)
        an = gx.reshape(-1)[flat]
        assert abs(fd - an) / (abs(an) + 1e-9) < 1e-4


def test_full_cache_refuses_above_cap(toy_model, toy_schedule):
    sched = respace(toy_schedule, 70, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 5)
    with pytest.raises(OptimizerError, match="cap|total_steps"):
        grad_full_cache(xT, xT.copy(), toy_model, sched, MR, cap=64)


def test_recompute_requires_invertible_schedule(toy_model, toy_schedule):
    xT = standard_noise(FRAME_SHAPE, 6)
    with pytest.raises(OptimizerError, match="invertible"):
        grad_inversion_recompute(xT, xT.copy(), toy_model,
                                 respace(toy_schedule, 10), MR)


@pytest.mark.parametrize("n_steps", [5, 10, 20])
@pytest.mark.parametrize("kind", ["frame_joint", "motion_range", "velocity",
                                  "symmetry"])
def test_gradient_path_equivalence(toy_model, toy_schedule, skeleton, kind,
                                   n_steps):
    sched = respace(toy_schedule, n_steps, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 7)
    yT = standard_noise(FRAME_SHAPE, 8)  # distinct arms exercise both inputs
    if kind == "frame_joint":
        spec = EditSpec(kind=kind, frames=(5, 15), joints=(8, 11),
                        targets=np.full((2, 3), 0.3))
    else:
        spec = EditSpec(kind=kind)
    l1, gx1, gy1 = grad_full_cache(xT, yT, toy_model, sched, spec,
                                   mirror=skeleton.mirror)
    l2, gx2, gy2 = grad_inversion_recompute(xT, yT, toy_model, sched, spec,
                                            mirror=skeleton.mirror)
    assert abs(l1 - l2) < 1e-9
    for g1, g2 in ((gx1, gx2), (gy1, gy2)):
        rel = np.abs(g1 - g2).max() / (np.abs(g1).max() + 1e-12)
        assert rel <= 1e-5


def test_recompute_zero_stub_closed_form():
    """eps = 0 and p = 1 decouple the arms: dL/dx_T = prod(a_t) dL/dx0."""
    sched = small_inv_schedule(6, base=16)
    config = SamplerConfig(mixing_p=1.0)
    rng = np.random.default_rng(9)
    xT, yT = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    loss, gx, gy = grad_inversion_recompute(xT, yT, ZeroStub(), sched, MR,
                                            config=config)
    prod_a = float(np.prod(sched.a_coeffs))
    x0 = prod_a * xT
    assert np.abs(gx - prod_a * 2.0 * x0 / x0.size).max() < 1e-15
    assert np.array_equal(gy, np.zeros(SHAPE))


def test_recorded_mode_gradients_match(toy_model, toy_schedule):
    from motionedit.sampler import generate
    sched = respace(toy_schedule, 8, invertible=True)
    config = SamplerConfig(noise_mode="recorded")
    xT = standard_noise(FRAME_SHAPE, 10)
    _, _, ledger = generate(xT, toy_model, sched, config, rng=11)
    l1, gx1, _ = grad_full_cache(xT, xT.copy(), toy_model, sched, MR,
                                 config=config, ledger=ledger)
    l2, gx2, _ = grad_inversion_recompute(xT, xT.copy(), toy_model, sched, MR,
                                          config=config, ledger=ledger)
    assert abs(l1 - l2) < 1e-9
    assert np.abs(gx1 - gx2).max() / (np.abs(gx1).max() + 1e-12) <= 1e-5
    with pytest.raises(OptimizerError, match="ledger"):
        grad_inversion_recompute(xT, xT.copy(), toy_model, sched, MR,
                                 config=config, ledger=None)


def test_memory_contract_counters(toy_model, toy_schedule):
    xT = standard_noise(FRAME_SHAPE, 12)
    for n in (10, 20):
        meter = RetainedStepMeter()
        grad_full_cache(xT, xT.copy(), toy_model,
                        respace(toy_schedule, n, invertible=True), MR,
                        meter=meter)
        assert meter.peak == n
        assert meter.current == 0
    for n in (10, 99):
        meter = RetainedStepMeter()
        grad_inversion_recompute(xT, xT.copy(), toy_model,
                                 respace(toy_schedule, n, invertible=True), MR,
                                 meter=meter)
        assert meter.peak == 2
        assert meter.current == 0
    # T in {100, 1000} via a stub model (the toy embedding table stops at 100)
    small = np.random.default_rng(13).standard_normal(SHAPE)
    for n in (100, 1000):
        meter = RetainedStepMeter()
        sched = respace(build_schedule(n + 1), n, invertible=True)
        grad_inversion_recompute(small, small.copy(), ScaleStub(0.5), sched, MR,
                                 meter=meter)
        assert meter.peak == 2
        assert meter.current == 0


def test_optimize_rejects_bad_config():
    with pytest.raises(OptimizerError):
        OptimizerConfig(steps=0)
    with pytest.raises(OptimizerError):
        OptimizerConfig(lr=-1.0)
    with pytest.raises(OptimizerError):
        OptimizerConfig(grad_path="magic")


def test_optimize_null_update_keeps_loss(toy_model, toy_schedule, skeleton):
    sched = respace(toy_schedule, 10, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 14)
    trace = optimize_noise(xT, xT.copy(), toy_model, sched,
                           OptimizerConfig(steps=1, lr=0.0, renorm_noise=False),
                           MR, mirror=skeleton.mirror)
    assert len(trace.records) == 2
    assert trace.records[0].relative_loss == 1.0
    assert trace.records[1].loss == trace.records[0].loss
    assert np.array_equal(trace.final_x_T, xT)


def test_optimize_descends_for_every_kind(toy_model, toy_schedule, skeleton):
    sched = respace(toy_schedule, 20, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 0)
    kinds = {
        "frame_joint": EditSpec(kind="frame_joint", frames=(10, 20, 30),
                                joints=(8, 11), targets=np.full((2, 3), 0.4)),
        "motion_range": EditSpec(kind="motion_range"),
        "velocity": EditSpec(kind="velocity"),
        "symmetry": EditSpec(kind="symmetry"),
    }
    for kind, spec in kinds.items():
        trace = optimize_noise(xT, xT.copy(), toy_model, sched,
                               OptimizerConfig(steps=3), spec,
                               mirror=skeleton.mirror)
        rels = [r.relative_loss for r in trace.records]
        assert rels[0] == 1.0
        assert rels[1] < 1.0, kind
        assert rels[3] <= rels[1], kind


def test_optimize_trace_contents(toy_model, toy_schedule, tmp_path):
    sched = respace(toy_schedule, 10, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 15)
    trace = optimize_noise(xT, xT.copy(), toy_model, sched,
                           OptimizerConfig(steps=2, lr=0.5), MR)
    assert [r.step for r in trace.records] == [0, 1, 2]
    assert trace.records[0].grad_inf_norm is None
    for rec in trace.records[1:]:
        assert rec.grad_inf_norm > 0
        assert rec.retained_steps == 2  # inversion_recompute default
        assert rec.wall_time >= 0
    assert trace.final_x_0 is not None

    jsonl = tmp_path / "trace.jsonl"
    trace.to_jsonl(jsonl)
    rows = [json.loads(line) for line in jsonl.read_text().splitlines()]
    assert rows[0]["relative_loss"] == 1.0 and len(rows) == 3

    csv_path = tmp_path / "trace.csv"
    trace.to_csv(csv_path)
    with open(csv_path) as fh:
        parsed = list(csv.DictReader(fh))
    assert len(parsed) == 3 and parsed[0]["step"] == "0"


def test_optimize_full_cache_path(toy_model, toy_schedule):
    sched = respace(toy_schedule, 10, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 16)
    trace = optimize_noise(xT, xT.copy(), toy_model, sched,
                           OptimizerConfig(steps=1, grad_path="full_cache"), MR)
    assert trace.records[1].retained_steps == 10
    assert trace.records[1].loss < trace.records[0].loss


def test_optimize_tie_arms_flag(toy_model, toy_schedule):
    sched = respace(toy_schedule, 10, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 17)
    trace = optimize_noise(xT, xT.copy(), toy_model, sched,
                           OptimizerConfig(steps=2, tie_arms=True), MR)
    assert trace.records[-1].arm_divergence == 0.0
    assert np.array_equal(trace.final_x_T, trace.final_y_T)


def test_optimize_aborts_on_nonfinite(toy_model, toy_schedule):
    sched = respace(toy_schedule, 5, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 18)
    with np.errstate(over="ignore", invalid="ignore"):
        trace = optimize_noise(xT, xT.copy(), toy_model, sched,
                               OptimizerConfig(steps=3, lr=1e308,
                                               grad_normalize=True,
                                               renorm_noise=False), MR)
    assert trace.aborted
    assert trace.abort_reason
    assert len(trace.records) >= 1
    with pytest.raises(OptimizerError):
        optimize_noise(np.full(FRAME_SHAPE, np.nan), xT, toy_model, sched,
                       OptimizerConfig(steps=1), MR)


def test_optimize_early_stop_plateau(toy_model, toy_schedule):
    sched = respace(toy_schedule, 10, invertible=True)
    xT = standard_noise(FRAME_SHAPE, 19)
    trace = optimize_noise(xT, xT.copy(), toy_model, sched,
                           OptimizerConfig(steps=8, lr=0.0, renorm_noise=False,
                                           early_stop=True), MR)
    # zero lr never improves, so the plateau rule stops after patience steps
    assert len(trace.records) == 3  # s=0 plus two plateau hits
