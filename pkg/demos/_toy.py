"""Shared demo setup: a small trained engine, cached on disk after first run."""

import os
import time

from motionedit import (ConditionedDenoiser, DenoiserConfig, build_schedule,
                        init_params, load_checkpoint, save_checkpoint,
                        synth_corpus, train)
from motionedit.denoiser import (DEFAULT_CORPUS_CLIPS, DEFAULT_CORPUS_FRAMES,
                                 DEFAULT_TRAIN_EPOCHS, DEFAULT_TRAIN_LR)

OUT_DIR = os.path.join(os.path.dirname(__file__), "out")
TOTAL_STEPS = 100


def toy_engine():
    """Returns (params, schedule, corpus); trains once and caches the result."""
    os.makedirs(OUT_DIR, exist_ok=True)
    config = DenoiserConfig(max_timestep=TOTAL_STEPS)
    schedule = build_schedule(TOTAL_STEPS)
    corpus = synth_corpus(seed=7, n_clips=DEFAULT_CORPUS_CLIPS,
                          frames=DEFAULT_CORPUS_FRAMES, config=config)
    ckpt = os.path.join(OUT_DIR, "toy.ckpt.json")
    if os.path.exists(ckpt):
        params, schedule = load_checkpoint(ckpt)
        return params, schedule, corpus
    print("training the toy denoiser (first run only)...")
    t0 = time.perf_counter()
    params, history = train(init_params(config, seed=1), corpus, schedule,
                            epochs=DEFAULT_TRAIN_EPOCHS, lr=DEFAULT_TRAIN_LR,
                            seed=3)
    print(f"  trained in {time.perf_counter() - t0:.1f}s, "
          f"final loss {sum(history[-10:]) / 10:.4f}")
    save_checkpoint(params, schedule, ckpt)
    return params, schedule, corpus


def bound_model(params, corpus, clip=0):
    return ConditionedDenoiser(params, corpus.clips[clip][1])
