"""Command-line front end: train, generate, invert, style-copy, edit, serve.

Every pipeline is deterministic given its seeds; rerunning a command with
identical inputs produces bit-identical artifact files. Errors exit with
status 2; with ``--json`` they are emitted as machine-readable JSON on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .denoiser import (DEFAULT_CORPUS_CLIPS, DEFAULT_CORPUS_FRAMES,
                       DEFAULT_TRAIN_EPOCHS, DEFAULT_TRAIN_LR, CheckpointError,
                       ConditionedDenoiser, DenoiserConfig, DenoiserError,
                       condition_from_json_dict, init_params, load_checkpoint,
                       save_checkpoint, synth_corpus, train)
from .losses import EditSpecError, spec_from_json_dict
from .motion import (MotionFormatError, MotionSequence, SkeletonMismatchError,
                     default_skeleton, load_motion, save_motion, stat_frechet)
from .optimizer import OptimizerConfig, OptimizerError, optimize_noise
from .sampler import (InversionError, SamplerConfig, SamplerError, generate,
                      invert, regenerate_with_style, save_noise_bundle,
                      standard_noise)
from .schedule import ScheduleError, build_schedule, respace

_KNOWN_ERRORS = (ScheduleError, SamplerError, DenoiserError, CheckpointError,
                 MotionFormatError, SkeletonMismatchError, EditSpecError,
                 OptimizerError, ValueError, OSError)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _emit(args, payload: dict):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _load_engine(ckpt_path):
    params, schedule = load_checkpoint(ckpt_path)
    skeleton = default_skeleton()
    if params.config.joints != skeleton.n_joints:
        raise CheckpointError(
            f"checkpoint was trained for {params.config.joints} joints; the "
            f"CLI skeleton has {skeleton.n_joints}")
    return params, schedule, skeleton


def _condition(args, path, params, frames=None):
    doc = _load_json(path)
    if frames is not None and "speech_features" not in doc:
        doc.setdefault("frames", frames)
    return condition_from_json_dict(doc, params.config)


def cmd_train(args) -> int:
    config = DenoiserConfig(max_timestep=args.steps)
    schedule = build_schedule(args.steps)
    corpus = synth_corpus(args.corpus_seed, args.clips, args.frames, config)
    params = init_params(config, seed=args.init_seed)
    params, history = train(params, corpus, schedule, epochs=args.epochs,
                            lr=args.lr, seed=args.train_seed)
    save_checkpoint(params, schedule, args.out)
    first = float(np.mean(history[:10])) if history else 0.0
    last = float(np.mean(history[-10:])) if history else 0.0
    _emit(args, {"checkpoint": str(args.out), "steps": len(history),
                 "initial_loss": first, "final_loss": last})
    return 0


def cmd_generate(args) -> int:
    params, schedule, skeleton = _load_engine(args.ckpt)
    cond = _condition(args, args.condition, params, frames=DEFAULT_CORPUS_FRAMES)
    model = ConditionedDenoiser(params, cond)
    shape = (cond.frames, params.config.joints, params.config.channels)
    x_T = standard_noise(shape, args.seed)
    gen_schedule = schedule if args.steps is None else respace(schedule, args.steps)
    x0, _, _ = generate(x_T, model, gen_schedule, SamplerConfig(mixing_p=args.mixing_p))
    motion = MotionSequence(skeleton=skeleton, frames=x0, frame_rate=args.fps,
                            condition=cond)
    save_motion(motion, args.out)
    _emit(args, {"motion": str(args.out), "frames": cond.frames,
                 "steps": gen_schedule.total_steps})
    return 0


def cmd_invert(args) -> int:
    params, schedule, skeleton = _load_engine(args.ckpt)
    motion = load_motion(args.motion, expect_skeleton=skeleton)
    cond = _condition(args, args.condition, params, frames=motion.n_frames)
    model = ConditionedDenoiser(params, cond)
    inv_schedule = respace(schedule, args.steps, invertible=True)
    config = SamplerConfig(mixing_p=args.mixing_p)
    state = invert(motion.frames, motion.frames.copy(), model, inv_schedule, config)
    from .sampler import NoiseLedger
    save_noise_bundle(args.out, state.x, state.y, inv_schedule,
                      NoiseLedger(mode="deterministic"))
    _emit(args, {"noise": str(args.out), "steps": args.steps,
                 "x_inf_norm": float(np.abs(state.x).max())})
    return 0


def cmd_regen_style(args) -> int:
    params, schedule, skeleton = _load_engine(args.ckpt)
    motion = load_motion(args.motion, expect_skeleton=skeleton)
    cond_old = _condition(args, args.old_cond, params, frames=motion.n_frames)
    cond_new = _condition(args, args.new_cond, params, frames=motion.n_frames)
    inv_schedule = respace(schedule, args.inv_steps, invertible=True)
    config = SamplerConfig(mixing_p=args.mixing_p)
    x_new = regenerate_with_style(motion.frames,
                                  ConditionedDenoiser(params, cond_old),
                                  ConditionedDenoiser(params, cond_new),
                                  schedule, inv_schedule, config)
    out = MotionSequence(skeleton=skeleton, frames=x_new,
                         frame_rate=motion.frame_rate, condition=cond_new)
    save_motion(out, args.out)
    _emit(args, {"motion": str(args.out), "inv_steps": args.inv_steps})
    return 0


def cmd_edit(args) -> int:
    params, schedule, skeleton = _load_engine(args.ckpt)
    motion = load_motion(args.motion, expect_skeleton=skeleton)
    cond = _condition(args, args.condition, params, frames=motion.n_frames)
    model = ConditionedDenoiser(params, cond)
    spec_doc = _load_json(args.spec)
    docs = spec_doc if isinstance(spec_doc, list) else [spec_doc]
    specs = [spec_from_json_dict(doc, skeleton.joint_names) for doc in docs]
    for spec in specs:
        spec.validate_against(motion.n_frames, skeleton.n_joints,
                              params.config.channels)

    opt_schedule = respace(schedule, args.inv_steps, invertible=True)
    config = SamplerConfig(mixing_p=args.mixing_p)
    state = invert(motion.frames, motion.frames.copy(), model, opt_schedule, config)
    trace = optimize_noise(state.x, state.y, model, opt_schedule,
                           OptimizerConfig(steps=args.steps, lr=args.lr),
                           specs, mirror=skeleton.mirror, config=config)
    if trace.aborted:
        raise OptimizerError(f"edit aborted: {trace.abort_reason}")
    out = MotionSequence(skeleton=skeleton, frames=trace.final_x_0,
                         frame_rate=motion.frame_rate, condition=cond)
    save_motion(out, args.out)
    if args.trace:
        trace.to_jsonl(args.trace)
    if args.trace_csv:
        trace.to_csv(args.trace_csv)
    _emit(args, {"motion": str(args.out),
                 "loss_initial": trace.records[0].loss,
                 "loss_final": trace.records[-1].loss,
                 "relative_loss": trace.records[-1].relative_loss})
    return 0


def cmd_metrics(args) -> int:
    a = load_motion(args.a)
    b = load_motion(args.b)
    _emit(args, {"stat_frechet": stat_frechet(a, b)})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(ckpt_path=args.ckpt)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionedit",
        description="Invertible-diffusion motion generation and editing")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable output and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the toy denoiser on a synthetic corpus")
    p.add_argument("--corpus-seed", type=int, default=7)
    p.add_argument("--clips", type=_positive_int, default=DEFAULT_CORPUS_CLIPS)
    p.add_argument("--frames", type=_positive_int, default=DEFAULT_CORPUS_FRAMES)
    p.add_argument("--epochs", type=int, default=DEFAULT_TRAIN_EPOCHS)
    p.add_argument("--lr", type=float, default=DEFAULT_TRAIN_LR)
    p.add_argument("--steps", type=_positive_int, default=100,
                   help="diffusion steps of the training schedule")
    p.add_argument("--init-seed", type=int, default=1)
    p.add_argument("--train-seed", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="coupled generation from seeded noise")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--condition", required=True, help="condition JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=_positive_int, default=None,
                   help="optional plain respacing for faster generation")
    p.add_argument("--mixing-p", type=float, default=SamplerConfig().mixing_p)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("invert", help="reconstruct input noise from a motion")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--condition", required=True)
    p.add_argument("--steps", type=_positive_int, default=50)
    p.add_argument("--mixing-p", type=float, default=SamplerConfig().mixing_p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("regen-style",
                       help="invert under the old condition, regenerate under a new one")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--old-cond", required=True)
    p.add_argument("--new-cond", required=True)
    p.add_argument("--inv-steps", type=_positive_int, default=50)
    p.add_argument("--mixing-p", type=float, default=SamplerConfig().mixing_p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regen_style)

    p = sub.add_parser("edit", help="optimize input noise under an edit spec")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--condition", required=True)
    p.add_argument("--spec", required=True, help="edit spec JSON (degrees, joint names)")
    p.add_argument("--steps", type=_positive_int, default=OptimizerConfig().steps)
    p.add_argument("--lr", type=float, default=OptimizerConfig().lr)
    p.add_argument("--inv-steps", type=_positive_int, default=50)
    p.add_argument("--mixing-p", type=float, default=SamplerConfig().mixing_p)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="write per-step trace JSONL here")
    p.add_argument("--trace-csv", default=None)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("metrics", help="statistical Fréchet distance between motions")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("serve", help="run the HTTP job service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _KNOWN_ERRORS as exc:
        if args.json:
            print(json.dumps({"error": str(exc),
                              "kind": type(exc).__name__}), file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
