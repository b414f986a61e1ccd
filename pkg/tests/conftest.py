"""Session-scoped toy engine: one seeded corpus + one trained denoiser.

Training runs once per session (~8 s) and everything downstream — round
trips, gradient checks, edits, acceptance — shares the result, so every
number asserted in the suite refers to this exact seeded setup.
"""

import numpy as np
import pytest

from motionedit.denoiser import (DEFAULT_CORPUS_CLIPS, DEFAULT_CORPUS_FRAMES,
                                 DEFAULT_TRAIN_EPOCHS, DEFAULT_TRAIN_LR,
                                 ConditionedDenoiser, DenoiserConfig,
                                 init_params, synth_corpus, train)
from motionedit.motion import default_skeleton
from motionedit.schedule import build_schedule

TOY_TOTAL_STEPS = 100
CORPUS_SEED = 7
INIT_SEED = 1
TRAIN_SEED = 3
FRAME_SHAPE = (DEFAULT_CORPUS_FRAMES, 16, 3)


@pytest.fixture(scope="session")
def toy_config():
    return DenoiserConfig(max_timestep=TOY_TOTAL_STEPS)


@pytest.fixture(scope="session")
def toy_schedule():
    return build_schedule(TOY_TOTAL_STEPS)


@pytest.fixture(scope="session")
def toy_corpus(toy_config):
    return synth_corpus(seed=CORPUS_SEED, n_clips=DEFAULT_CORPUS_CLIPS,
                        frames=DEFAULT_CORPUS_FRAMES, config=toy_config)


@pytest.fixture(scope="session")
def trained(toy_config, toy_corpus, toy_schedule):
    params0 = init_params(toy_config, seed=INIT_SEED)
    params, history = train(params0, toy_corpus, toy_schedule,
                            epochs=DEFAULT_TRAIN_EPOCHS, lr=DEFAULT_TRAIN_LR,
                            seed=TRAIN_SEED)
    return params, history


@pytest.fixture(scope="session")
def toy_params(trained):
    return trained[0]


@pytest.fixture(scope="session")
def toy_model(toy_params, toy_corpus):
    return ConditionedDenoiser(toy_params, toy_corpus.clips[0][1])


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()
