"""HTTP job service: async generation/inversion/editing for scripts and the UI.

Jobs run on a small worker pool; the store is a lock-guarded map, so status
polls never wait on a running job. Edit jobs append trace records as they
happen, which the trace endpoint serves as JSON lines for live loss curves.
Wire angles are radians throughout; only the human-authored edit-spec format
uses degrees, converted at the schema boundary.
"""

from __future__ import annotations

import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field, ValidationError

from .denoiser import (DEFAULT_CORPUS_CLIPS, DEFAULT_CORPUS_FRAMES,
                       DEFAULT_TRAIN_EPOCHS, DEFAULT_TRAIN_LR, CheckpointError,
                       ConditionedDenoiser, DenoiserConfig, DenoiserError,
                       condition_from_json_dict, init_params, load_checkpoint,
                       save_checkpoint, synth_corpus, train)
from .losses import EditSpecError, spec_from_json_dict
from .motion import (MotionFormatError, MotionSequence, SkeletonMismatchError,
                     default_skeleton, save_motion)
from .optimizer import OptimizerConfig, OptimizerError, optimize_noise
from .sampler import (InversionError, SamplerConfig, SamplerError, generate,
                      invert, regenerate_with_style, standard_noise)
from .schedule import ScheduleError, build_schedule, respace

DATA_DIR_ENV = "MOTIONEDIT_DATA_DIR"

_ENGINE_ERRORS = (ScheduleError, SamplerError, DenoiserError, CheckpointError,
                  MotionFormatError, SkeletonMismatchError, EditSpecError,
                  OptimizerError, ValueError)

JOB_KINDS = ("train", "generate", "invert", "regen_style", "edit")


class JobRequest(BaseModel):
    kind: str
    payload: dict = Field(default_factory=dict)


class GeneratePayload(BaseModel):
    condition: dict
    seed: int = 0
    steps: int | None = Field(default=None, ge=1)
    mixing_p: float | None = None


class InvertPayload(BaseModel):
    motion_id: str
    condition: dict
    steps: int = Field(default=50, ge=1)
    mixing_p: float | None = None


class RegenStylePayload(BaseModel):
    motion_id: str
    old_condition: dict
    new_condition: dict
    inv_steps: int = Field(default=50, ge=1)
    mixing_p: float | None = None


class EditPayload(BaseModel):
    motion_id: str
    condition: dict
    spec: dict | list
    steps: int = Field(default=3, ge=1)
    lr: float = Field(default=0.05, ge=0.0)
    inv_steps: int = Field(default=50, ge=1)
    mixing_p: float | None = None


class TrainPayload(BaseModel):
    corpus_seed: int = 7
    clips: int = Field(default=DEFAULT_CORPUS_CLIPS, ge=1)
    frames: int = Field(default=DEFAULT_CORPUS_FRAMES, ge=2)
    epochs: int = Field(default=DEFAULT_TRAIN_EPOCHS, ge=0)
    lr: float = DEFAULT_TRAIN_LR
    steps: int = Field(default=100, ge=1)
    init_seed: int = 1
    train_seed: int = 3


class MotionUpload(BaseModel):
    frames: list
    frame_rate: float = 30.0


_PAYLOADS = {"train": TrainPayload, "generate": GeneratePayload,
             "invert": InvertPayload, "regen_style": RegenStylePayload,
             "edit": EditPayload}


class EngineSession:
    """Shared state behind the endpoints: model, stores, worker pool."""

    def __init__(self, params, schedule, skeleton=None, max_workers: int = 2):
        self.params = params
        self.schedule = schedule
        self.skeleton = skeleton or default_skeleton()
        self.lock = threading.Lock()
        self.motions: dict[str, MotionSequence] = {}
        self.jobs: dict[str, dict] = {}
        self._counter = 0
        self.executor = ThreadPoolExecutor(max_workers=max_workers)
        self.data_dir = os.environ.get(DATA_DIR_ENV)
        if self.data_dir:
            os.makedirs(self.data_dir, exist_ok=True)

    def next_id(self, prefix: str) -> str:
        with self.lock:
            self._counter += 1
            return f"{prefix}{self._counter:04d}"

    def store_motion(self, motion: MotionSequence) -> str:
        motion_id = self.next_id("m")
        with self.lock:
            self.motions[motion_id] = motion
        if self.data_dir:
            save_motion(motion, os.path.join(self.data_dir, f"{motion_id}.gmo"))
        return motion_id

    def get_motion(self, motion_id: str) -> MotionSequence:
        with self.lock:
            motion = self.motions.get(motion_id)
        if motion is None:
            raise HTTPException(status_code=404, detail=f"unknown motion {motion_id}")
        return motion

    def sampler_config(self, mixing_p) -> SamplerConfig:
        return SamplerConfig() if mixing_p is None else SamplerConfig(mixing_p=mixing_p)

    def condition(self, doc: dict, frames: int):
        doc = dict(doc)
        if "speech_features" not in doc:
            doc.setdefault("frames", frames)
        cond = condition_from_json_dict(doc, self.params.config)
        if cond.frames != frames:
            raise EditSpecError(
                f"condition covers {cond.frames} frames, motion has {frames}")
        return cond


def _run_train(session: EngineSession, p: TrainPayload, job: dict) -> dict:
    config = DenoiserConfig(max_timestep=p.steps)
    schedule = build_schedule(p.steps)
    corpus = synth_corpus(p.corpus_seed, p.clips, p.frames, config)
    params = init_params(config, seed=p.init_seed)
    params, history = train(params, corpus, schedule, epochs=p.epochs,
                            lr=p.lr, seed=p.train_seed)
    result = {"steps": len(history),
              "final_loss": float(np.mean(history[-10:])) if history else 0.0}
    if session.data_dir:
        path = os.path.join(session.data_dir, f"{job['id']}.ckpt.json")
        save_checkpoint(params, schedule, path)
        result["checkpoint"] = path
    return result


def _run_generate(session: EngineSession, p: GeneratePayload, job: dict) -> dict:
    frames = DEFAULT_CORPUS_FRAMES
    if "speech_features" in p.condition:
        frames = len(p.condition["speech_features"])
    elif "frames" in p.condition:
        frames = int(p.condition["frames"])
    cond = session.condition(p.condition, frames)
    model = ConditionedDenoiser(session.params, cond)
    shape = (cond.frames, session.params.config.joints,
             session.params.config.channels)
    sched = session.schedule if p.steps is None else respace(session.schedule, p.steps)
    x0, _, _ = generate(standard_noise(shape, p.seed), model, sched,
                        session.sampler_config(p.mixing_p))
    motion = MotionSequence(skeleton=session.skeleton, frames=x0, condition=cond)
    return {"motion_id": session.store_motion(motion)}


def _run_invert(session: EngineSession, p: InvertPayload, job: dict) -> dict:
    motion = session.get_motion(p.motion_id)
    cond = session.condition(p.condition, motion.n_frames)
    model = ConditionedDenoiser(session.params, cond)
    inv_sched = respace(session.schedule, p.steps, invertible=True)
    state = invert(motion.frames, motion.frames.copy(), model, inv_sched,
                   session.sampler_config(p.mixing_p))
    return {"steps": p.steps, "x_inf_norm": float(np.abs(state.x).max())}


def _run_regen_style(session: EngineSession, p: RegenStylePayload, job: dict) -> dict:
    motion = session.get_motion(p.motion_id)
    cond_old = session.condition(p.old_condition, motion.n_frames)
    cond_new = session.condition(p.new_condition, motion.n_frames)
    inv_sched = respace(session.schedule, p.inv_steps, invertible=True)
    x_new = regenerate_with_style(motion.frames,
                                  ConditionedDenoiser(session.params, cond_old),
                                  ConditionedDenoiser(session.params, cond_new),
                                  session.schedule, inv_sched,
                                  session.sampler_config(p.mixing_p))
    out = MotionSequence(skeleton=session.skeleton, frames=x_new,
                         frame_rate=motion.frame_rate, condition=cond_new)
    return {"motion_id": session.store_motion(out)}


def _run_edit(session: EngineSession, p: EditPayload, job: dict) -> dict:
    motion = session.get_motion(p.motion_id)
    cond = session.condition(p.condition, motion.n_frames)
    model = ConditionedDenoiser(session.params, cond)
    specs = _parse_specs(session, p.spec, motion.n_frames)
    opt_sched = respace(session.schedule, p.inv_steps, invertible=True)
    config = session.sampler_config(p.mixing_p)
    state = invert(motion.frames, motion.frames.copy(), model, opt_sched, config)

    def on_record(rec):
        with session.lock:
            job["trace"].append(rec.to_dict())

    trace = optimize_noise(state.x, state.y, model, opt_sched,
                           OptimizerConfig(steps=p.steps, lr=p.lr), specs,
                           mirror=session.skeleton.mirror, config=config,
                           on_record=on_record)
    if trace.aborted:
        raise OptimizerError(f"edit aborted: {trace.abort_reason}")
    out = MotionSequence(skeleton=session.skeleton, frames=trace.final_x_0,
                         frame_rate=motion.frame_rate, condition=cond)
    return {"motion_id": session.store_motion(out),
            "original_motion_id": p.motion_id,
            "loss_final": trace.records[-1].loss,
            "relative_loss": trace.records[-1].relative_loss}


def _parse_specs(session: EngineSession, doc, n_frames: int):
    docs = doc if isinstance(doc, list) else [doc]
    specs = [spec_from_json_dict(d, session.skeleton.joint_names) for d in docs]
    for spec in specs:
        spec.validate_against(n_frames, session.skeleton.n_joints,
                              session.params.config.channels)
    return specs


_RUNNERS = {"train": _run_train, "generate": _run_generate,
            "invert": _run_invert, "regen_style": _run_regen_style,
            "edit": _run_edit}


def create_app(ckpt_path=None, params=None, schedule=None,
               skeleton=None, max_workers: int = 2) -> FastAPI:
    if params is None or schedule is None:
        if ckpt_path is None:
            raise ValueError("create_app needs a checkpoint path or params+schedule")
        params, schedule = load_checkpoint(ckpt_path)
    session = EngineSession(params, schedule, skeleton, max_workers)
    app = FastAPI(title="motionedit", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.session = session

    def _job_snapshot(job_id: str) -> dict:
        with session.lock:
            job = session.jobs.get(job_id)
            if job is None:
                raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
            return {"id": job["id"], "kind": job["kind"], "status": job["status"],
                    "result": job["result"], "error": job["error"]}

    def _execute(job_id: str):
        with session.lock:
            job = session.jobs[job_id]
            job["status"] = "running"
        try:
            result = _RUNNERS[job["kind"]](session, job["payload_model"], job)
        except (_ENGINE_ERRORS + (HTTPException,)) as exc:
            detail = exc.detail if isinstance(exc, HTTPException) else str(exc)
            with session.lock:
                job["status"] = "failed"
                job["error"] = str(detail)
            return
        with session.lock:
            job["status"] = "done"
            job["result"] = result

    @app.post("/api/jobs")
    def submit_job(request: JobRequest):
        if request.kind not in JOB_KINDS:
            raise HTTPException(status_code=400,
                                detail=f"unknown job kind {request.kind!r}")
        try:
            payload = _PAYLOADS[request.kind](**request.payload)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=json.loads(exc.json()))
        if request.kind == "edit":
            motion = session.get_motion(payload.motion_id)  # 404 before queueing
            try:
                _parse_specs(session, payload.spec, motion.n_frames)
            except (EditSpecError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        job_id = session.next_id("j")
        job = {"id": job_id, "kind": request.kind, "status": "queued",
               "payload_model": payload, "result": None, "error": None,
               "trace": []}
        with session.lock:
            session.jobs[job_id] = job
        session.executor.submit(_execute, job_id)
        return {"job_id": job_id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        return _job_snapshot(job_id)

    @app.get("/api/jobs/{job_id}/result")
    def job_result(job_id: str):
        snap = _job_snapshot(job_id)
        if snap["status"] in ("queued", "running"):
            raise HTTPException(status_code=409,
                                detail=f"job {job_id} not finished")
        return snap

    @app.get("/api/jobs/{job_id}/trace")
    def job_trace(job_id: str):
        _job_snapshot(job_id)  # 404 check
        with session.lock:
            records = list(session.jobs[job_id]["trace"])
        lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        return PlainTextResponse(lines, media_type="application/jsonl")

    @app.get("/api/skeleton")
    def skeleton_def():
        return session.skeleton.to_json_dict()

    @app.get("/api/motions/{motion_id}")
    def get_motion(motion_id: str):
        motion = session.get_motion(motion_id)
        return {"skeleton": motion.skeleton.to_json_dict(),
                "frame_rate": motion.frame_rate,
                "frames": motion.frames.tolist()}

    @app.put("/api/motions")
    def put_motion(upload: MotionUpload):
        try:
            frames = np.asarray(upload.frames, dtype=np.float64)
            motion = MotionSequence(skeleton=session.skeleton, frames=frames,
                                    frame_rate=upload.frame_rate)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"motion_id": session.store_motion(motion)}

    return app
