import hashlib
import shutil
import xml.dom.minidom

import pytest

from latentplan.checkpoint import load_checkpoint
from latentplan.cli import main

SMALL = "vae_epochs = 2\nmdrnn_epochs = 2\niteration_epochs = 1\nt_max = 20\nhorizon = 4\ngenerations = 2\n" \
        "random_rollouts = 4\nrollout_steps = 15\neval_tracks = 2\nrollouts_per_iteration = 2\nbptt_len = 8\n"


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.cfg").write_text(SMALL)
    cfg = str(d / "small.cfg")
    assert main(["collect", "--episodes", "4", "--steps", "15", "--out", str(d / "data"), "--config", cfg]) == 0
    assert main(["train", "--component", "vae", "--data", str(d / "data"), "--config", cfg, "--out", str(d / "vae.ckpt")]) == 0
    assert main(["train", "--component", "mdrnn", "--vae", str(d / "vae.ckpt"), "--data", str(d / "data"),
                 "--config", cfg, "--out", str(d / "model.ckpt")]) == 0
    return d


def cfg(d):
    return str(d / "small.cfg")


class TestCollect:
    def test_files_and_manifest(self, tmp_path, capsys):
        assert main(["collect", "--policy", "random", "--episodes", "2", "--steps", "10", "--out", str(tmp_path)]) == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.txt", "rollout_00000.bin", "rollout_00001.bin"]
        assert "reward" in capsys.readouterr().out

    def test_rerun_identical(self, tmp_path):
        for out in ("a", "b"):
            main(["collect", "--episodes", "2", "--steps", "10", "--seed", "9", "--out", str(tmp_path / out)])
        for name in ("rollout_00000.bin", "rollout_00001.bin", "manifest.txt"):
            assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)

    def test_zero_episodes(self, tmp_path, capsys):
        assert main(["collect", "--episodes", "0", "--out", str(tmp_path)]) == 2
        assert "episodes must be ≥ 1" in capsys.readouterr().err

    def test_plan_needs_model(self, tmp_path):
        assert main(["collect", "--policy", "plan", "--episodes", "1", "--out", str(tmp_path)]) == 2

    def test_plan_with_model(self, workdir, tmp_path):
        args = ["collect", "--policy", "plan", "--episodes", "1", "--steps", "5", "--model", str(workdir / "model.ckpt"),
                "--config", cfg(workdir), "--out", str(tmp_path)]
        assert main(args) == 0
        assert "plan" in (tmp_path / "manifest.txt").read_text()

    def test_unwritable_dir(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["collect", "--episodes", "1", "--steps", "3", "--out", str(blocker / "sub")]) == 1

    def test_bad_config(self, tmp_path):
        (tmp_path / "bad.cfg").write_text("nonsense = 1\n")
        assert main(["collect", "--episodes", "1", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == 2


class TestTrain:
    def test_checkpoint_and_loss_csv(self, workdir):
        rows = (workdir / "vae.ckpt.loss.csv").read_text().splitlines()
        assert rows[0] == "epoch,loss" and len(rows) == 1 + 2
        tensors = load_checkpoint(workdir / "model.ckpt")
        assert any(k.startswith("vae.") for k in tensors) and any(k.startswith("mdrnn.") for k in tensors)

    def test_deterministic(self, workdir, tmp_path):
        args = ["train", "--component", "vae", "--data", str(workdir / "data"), "--config", cfg(workdir)]
        main(args + ["--out", str(tmp_path / "a.ckpt")])
        main(args + ["--out", str(tmp_path / "b.ckpt")])
        assert digest(tmp_path / "a.ckpt") == digest(workdir / "vae.ckpt") == digest(tmp_path / "b.ckpt")

    def test_truncated_rollout(self, workdir, tmp_path, capsys):
        data = tmp_path / "data"
        shutil.copytree(workdir / "data", data)
        victim = data / "rollout_00001.bin"
        victim.write_bytes(victim.read_bytes()[:50])
        assert main(["train", "--component", "vae", "--data", str(data), "--out", str(tmp_path / "x.ckpt")]) == 1
        assert "rollout_00001.bin" in capsys.readouterr().err

    def test_mdrnn_needs_vae(self, workdir, tmp_path):
        assert main(["train", "--component", "mdrnn", "--data", str(workdir / "data"), "--out", str(tmp_path / "m")]) == 2


class TestEvaluate:
    def test_single_track(self, workdir, tmp_path, capsys):
        rep = tmp_path / "r.csv"
        args = ["evaluate", "--model", str(workdir / "model.ckpt"), "--tracks", "1", "--config", cfg(workdir),
                "--report", str(rep)]
        assert main(args) == 0
        assert capsys.readouterr().out.strip().endswith("± 0.00")
        rows = [l for l in rep.read_text().splitlines() if not l.startswith("#")]
        assert len(rows) == 2

    def test_report_rows_and_determinism(self, workdir, tmp_path):
        args = ["evaluate", "--model", str(workdir / "model.ckpt"), "--tracks", "3", "--horizon", "3",
                "--generations", "2", "--config", cfg(workdir)]
        main(args + ["--report", str(tmp_path / "a.csv")])
        main(args + ["--report", str(tmp_path / "b.csv")])
        text = (tmp_path / "a.csv").read_text()
        assert text == (tmp_path / "b.csv").read_text()
        assert "# horizon = 3" in text
        assert len([l for l in text.splitlines() if not l.startswith("#")]) == 4

    def test_invalid_checkpoint(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"EPLSCKPT" + b"\0" * 12)
        assert main(["evaluate", "--model", str(tmp_path / "bad.ckpt")]) == 1

    def test_missing_checkpoint(self, tmp_path):
        assert main(["evaluate", "--model", str(tmp_path / "none.ckpt")]) == 1

    def test_vae_only_checkpoint(self, workdir):
        assert main(["evaluate", "--model", str(workdir / "vae.ckpt"), "--tracks", "1"]) == 1

    def test_invalid_horizon(self, workdir):
        assert main(["evaluate", "--model", str(workdir / "model.ckpt"), "--horizon", "0"]) == 2


class TestIterate:
    def test_one_iteration(self, workdir, tmp_path):
        out = tmp_path / "run"
        assert main(["iterate", "--config", cfg(workdir), "--iterations", "1", "--out", str(out)]) == 0
        assert (out / "iteration_0.csv").exists() and (out / "iteration_1.csv").exists()
        lines = (out / "iterations.csv").read_text().splitlines()
        assert lines[0] == "iteration,mean,std" and len(lines) == 3


class TestSweep:
    def test_rows(self, workdir, tmp_path):
        out = tmp_path / "s.csv"
        args = ["sweep", "--model", str(workdir / "model.ckpt"), "--param", "horizon", "--values", "1,5,15",
                "--tracks", "1", "--config", cfg(workdir), "--out", str(out)]
        assert main(args) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "horizon,mean,std" and [l.split(",")[0] for l in lines[1:]] == ["1", "5", "15"]

    def test_duplicates_kept(self, workdir, tmp_path):
        out = tmp_path / "s.csv"
        main(["sweep", "--model", str(workdir / "model.ckpt"), "--param", "generations", "--values", "2,2",
              "--tracks", "1", "--config", cfg(workdir), "--out", str(out)])
        assert len(out.read_text().splitlines()) == 3

    @pytest.mark.parametrize("values", ["", " , ", "1,x", "0"])
    def test_bad_values(self, workdir, tmp_path, values):
        args = ["sweep", "--model", str(workdir / "model.ckpt"), "--param", "horizon", "--values", values,
                "--out", str(tmp_path / "s.csv")]
        assert main(args) == 2

    def test_bad_param(self, workdir, tmp_path):
        args = ["sweep", "--model", str(workdir / "model.ckpt"), "--param", "p_mut", "--values", "1",
                "--out", str(tmp_path / "s.csv")]
        assert main(args) == 2


class TestViz:
    def run(self, workdir, out, *extra):
        return main(["viz", "--model", str(workdir / "model.ckpt"), "--track-seed", "3", "--config", cfg(workdir),
                     "--out", str(out), *extra])

    def test_two_layers(self, workdir, tmp_path):
        assert self.run(workdir, tmp_path / "a.svg") == 0
        doc = xml.dom.minidom.parse(str(tmp_path / "a.svg"))
        assert [p.getAttribute("id") for p in doc.getElementsByTagName("path")] == ["track", "executed"]

    def test_plans_layers(self, workdir, tmp_path):
        assert self.run(workdir, tmp_path / "p.svg", "--show-plans", "--every", "5") == 0
        doc = xml.dom.minidom.parse(str(tmp_path / "p.svg"))
        paths = doc.getElementsByTagName("path")
        assert len(paths) > 2 and all(p.getAttribute("id").startswith("plan-") for p in paths[2:])

    def test_byte_identical(self, workdir, tmp_path):
        self.run(workdir, tmp_path / "a.svg", "--show-plans")
        self.run(workdir, tmp_path / "b.svg", "--show-plans")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_usage_errors_exit_2():
    assert main([]) == 2
    assert main(["collect"]) == 2
    assert main(["nonsense"]) == 2
