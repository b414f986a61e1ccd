"""Inversion error growth with step count, recorded at demo scale.

Short inversions round-trip to float precision; long ones accumulate
amplified rounding until the reconstruction is numerically meaningless.
The suite asserts the tolerance only at the short/test-scale settings and
records the large-step blowup without failing on it.
"""

import numpy as np
import pytest

from motionedit.denoiser import (DEFAULT_CORPUS_CLIPS, DEFAULT_CORPUS_FRAMES,
                                 DEFAULT_TRAIN_EPOCHS, DEFAULT_TRAIN_LR,
                                 ConditionedDenoiser, DenoiserConfig,
                                 init_params, synth_corpus, train)
from motionedit.sampler import InversionError, generate, invert, standard_noise
from motionedit.schedule import build_schedule, respace

from conftest import FRAME_SHAPE

DEMO_TOTAL_STEPS = 1000


@pytest.fixture(scope="module")
def demo_model():
    config = DenoiserConfig(max_timestep=DEMO_TOTAL_STEPS)
    schedule = build_schedule(DEMO_TOTAL_STEPS)
    corpus = synth_corpus(seed=7, n_clips=DEFAULT_CORPUS_CLIPS,
                          frames=DEFAULT_CORPUS_FRAMES, config=config)
    params, _ = train(init_params(config, seed=1), corpus, schedule,
                      epochs=DEFAULT_TRAIN_EPOCHS, lr=DEFAULT_TRAIN_LR, seed=3)
    return ConditionedDenoiser(params, corpus.clips[0][1]), schedule


def round_trip_error(model, schedule, n_steps, seed=0):
    inv = respace(schedule, n_steps, invertible=True)
    x_T = standard_noise(FRAME_SHAPE, seed)
    try:
        x0, y0, _ = generate(x_T, model, inv)
        state = invert(x0, y0, model, inv)
        return float(np.abs(state.x - x_T).max())
    except InversionError:
        return float("inf")  # blew past float range: recorded as incalculable


def test_inversion_error_grows_with_step_count(demo_model, toy_model,
                                               toy_schedule):
    model, schedule = demo_model
    errors = {n: round_trip_error(model, schedule, n)
              for n in (10, 50, 200, 999)}
    for n, err in errors.items():
        print(f"inversion stability: {n} steps -> max error {err:.3e}")
    # the short-chain settings must stay inside the engine tolerance
    assert errors[10] < 1e-4
    # monotone growth across the recorded series
    values = [errors[n] for n in (10, 50, 200, 999)]
    assert all(a < b for a, b in zip(values, values[1:]))
    # large step counts are flagged, not failed: just record that they degrade
    assert errors[999] > 1.0 or np.isinf(errors[999])
    # the acceptance-scale setting on the test schedule holds the tolerance
    test_err = max(round_trip_error(toy_model, toy_schedule, 50, seed=s)
                   for s in range(3))
    assert test_err <= 1e-6
