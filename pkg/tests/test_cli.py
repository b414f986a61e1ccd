import hashlib
import json

import numpy as np
import pytest

from motionedit.cli import main
from motionedit.denoiser import save_checkpoint
from motionedit.motion import load_motion
from motionedit.sampler import load_noise_bundle

from conftest import TOY_TOTAL_STEPS


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory, toy_params, toy_schedule):
    path = tmp_path_factory.mktemp("ckpt") / "toy.ckpt.json"
    save_checkpoint(toy_params, toy_schedule, path)
    return path


@pytest.fixture(scope="module")
def cond_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cond") / "cond.json"
    path.write_text(json.dumps({"speaker_id": 0, "frames": 60, "speech_seed": 3}))
    return path


@pytest.fixture(scope="module")
def cond_file_b(tmp_path_factory):
    path = tmp_path_factory.mktemp("cond") / "cond_b.json"
    path.write_text(json.dumps({"speaker_id": 1, "frames": 60, "speech_seed": 9}))
    return path


@pytest.fixture(scope="module")
def gen_motion(tmp_path_factory, ckpt, cond_file):
    out = tmp_path_factory.mktemp("gen") / "m.gmo"
    rc = main(["generate", "--ckpt", str(ckpt), "--condition", str(cond_file),
               "--seed", "5", "--out", str(out)])
    assert rc == 0
    return out


def test_train_writes_checkpoint(tmp_path):
    out = tmp_path / "tiny.ckpt.json"
    rc = main(["--json", "train", "--corpus-seed", "2", "--clips", "2",
               "--frames", "12", "--epochs", "2", "--steps", "10",
               "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["format"] == 1
    assert doc["config"]["max_timestep"] == 10


def test_generate_is_bit_deterministic(tmp_path, ckpt, cond_file):
    a, b = tmp_path / "a.gmo", tmp_path / "b.gmo"
    for out in (a, b):
        rc = main(["generate", "--ckpt", str(ckpt), "--condition",
                   str(cond_file), "--seed", "11", "--out", str(out)])
        assert rc == 0
    assert sha(a) == sha(b)
    motion = load_motion(a)
    assert motion.frames.shape == (60, 16, 3)


def test_invert_round_trip_outputs_bundle(tmp_path, ckpt, cond_file, gen_motion):
    out = tmp_path / "noise.bin"
    rc = main(["invert", "--ckpt", str(ckpt), "--motion", str(gen_motion),
               "--condition", str(cond_file), "--steps", "50",
               "--out", str(out)])
    assert rc == 0
    x, y, sched, ledger = load_noise_bundle(out)
    assert x.shape == (60, 16, 3)
    assert sched.total_steps == 50
    assert sched.is_invertible
    assert ledger.mode == "deterministic"
    # deterministic rerun
    out2 = tmp_path / "noise2.bin"
    main(["invert", "--ckpt", str(ckpt), "--motion", str(gen_motion),
          "--condition", str(cond_file), "--steps", "50", "--out", str(out2)])
    assert sha(out) == sha(out2)


def test_invert_single_step_is_engine_error(tmp_path, ckpt, cond_file,
                                            gen_motion, capsys):
    out = tmp_path / "noise.bin"
    rc = main(["--json", "invert", "--ckpt", str(ckpt), "--motion",
               str(gen_motion), "--condition", str(cond_file), "--steps", "1",
               "--out", str(out)])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert "terminal step not invertible" in err["error"]


def test_edit_pipeline_and_determinism(tmp_path, ckpt, cond_file, gen_motion):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "motion_range", "direction": "minimize"}))
    outs, traces = [], []
    for tag in ("a", "b"):
        out = tmp_path / f"edit_{tag}.gmo"
        trace = tmp_path / f"trace_{tag}.jsonl"
        rc = main(["edit", "--ckpt", str(ckpt), "--motion", str(gen_motion),
                   "--condition", str(cond_file), "--spec", str(spec),
                   "--steps", "2", "--lr", "0.5", "--inv-steps", "20",
                   "--out", str(out), "--trace", str(trace)])
        assert rc == 0
        outs.append(out)
        traces.append(trace)
    assert sha(outs[0]) == sha(outs[1])
    rows = [json.loads(l) for l in traces[0].read_text().splitlines()]
    assert rows[0]["relative_loss"] == 1.0
    assert rows[-1]["loss"] < rows[0]["loss"]
    # trace files match except the wall-time field
    for ra, rb in zip(rows, (json.loads(l) for l in traces[1].read_text().splitlines())):
        ra.pop("wall_time"), rb.pop("wall_time")
        assert ra == rb


def test_edit_rejects_zero_steps(ckpt, cond_file, gen_motion, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "velocity"}))
    with pytest.raises(SystemExit) as exc:
        main(["edit", "--ckpt", str(ckpt), "--motion", str(gen_motion),
              "--condition", str(cond_file), "--spec", str(spec),
              "--steps", "0", "--out", str(tmp_path / "x.gmo")])
    assert exc.value.code == 2


def test_edit_bad_frame_index_reported(ckpt, cond_file, gen_motion, tmp_path,
                                       capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "kind": "frame_joint", "frames": [999], "joints": ["l_wrist"],
        "targets_deg": [[0.0, 0.0, 0.0]]}))
    rc = main(["--json", "edit", "--ckpt", str(ckpt), "--motion",
               str(gen_motion), "--condition", str(cond_file), "--spec",
               str(spec), "--out", str(tmp_path / "x.gmo")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert "999" in err["error"]


def test_regen_style_self_condition_close(tmp_path, ckpt, cond_file, gen_motion):
    out = tmp_path / "styled.gmo"
    rc = main(["regen-style", "--ckpt", str(ckpt), "--motion", str(gen_motion),
               "--old-cond", str(cond_file), "--new-cond", str(cond_file),
               "--inv-steps", "50", "--out", str(out)])
    assert rc == 0
    original = load_motion(gen_motion)
    styled = load_motion(out)
    assert np.abs(styled.frames - original.frames).mean() < 0.8


def test_metrics_command(tmp_path, ckpt, cond_file, cond_file_b, gen_motion,
                         capsys):
    other = tmp_path / "other.gmo"
    main(["generate", "--ckpt", str(ckpt), "--condition", str(cond_file_b),
          "--seed", "77", "--out", str(other)])
    capsys.readouterr()  # drain the generate output
    rc = main(["--json", "metrics", "--a", str(gen_motion), "--b", str(other)])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["stat_frechet"] > 0.0
    rc = main(["--json", "metrics", "--a", str(gen_motion), "--b", str(gen_motion)])
    doc = json.loads(capsys.readouterr().out)
    assert doc["stat_frechet"] < 1e-8


def test_unknown_checkpoint_is_clean_error(tmp_path, cond_file, capsys):
    rc = main(["--json", "generate", "--ckpt", str(tmp_path / "nope.json"),
               "--condition", str(cond_file), "--out", str(tmp_path / "x.gmo")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["kind"] == "CheckpointError"
