from glove import cli
from glove.env import UavEnv
from glove.harness import read_metrics


def test_baseline_then_report(tmp_path, capsys):
    out = tmp_path / "b"
    assert cli.main(["baseline", "--set", "N=4", "--steps", "3", "--out", str(out)]) == 0
    assert len(read_metrics(out / "metrics.tsv")) == 3
    assert "usage_first10" in capsys.readouterr().out
    assert cli.main(["report", str(out / "metrics.tsv"), "--out", str(tmp_path / "fig")]) == 0
    assert (tmp_path / "fig" / "usage.png").stat().st_size > 0


def test_train_eval_round_trip(tmp_path):
    t = tmp_path / "t"
    assert cli.main(["train", "--set", "N=4", "--seed", "2", "--steps", "2", "--out", str(t), "--figures"]) == 0
    assert (t / "checkpoint.txt").exists() and (t / "figures" / "latency_s.png").exists()
    e = tmp_path / "e"
    assert cli.main(["eval", "--set", "N=4", "--seed", "2", "--steps", "2", "--out", str(e), "--checkpoint", str(t / "checkpoint.txt")]) == 0
    # ablated architecture cannot load the full checkpoint
    assert cli.main(["eval", "--ablation", "--set", "N=4", "--steps", "1", "--out", str(e), "--checkpoint", str(t / "checkpoint.txt")]) == 1


def test_config_file_and_ablation(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("N = 5\nsteps = 2\n")
    out = tmp_path / "a"
    assert cli.main(["train", "--config", str(cfg), "--ablation", "--out", str(out)]) == 0
    assert "self_node = False" in (out / "config.txt").read_text()


def test_config_error_exit_status(tmp_path, capsys):
    assert cli.main(["baseline", "--set", "hurst=1.5", "--out", str(tmp_path)]) == 2
    assert "hurst" in capsys.readouterr().err


def test_abort_exit_status(tmp_path, monkeypatch):
    def boom(self, action):
        raise RuntimeError("broken")

    monkeypatch.setattr(UavEnv, "step", boom)
    assert cli.main(["baseline", "--set", "N=4", "--steps", "2", "--out", str(tmp_path)]) == 1


def test_default_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    assert cli.main(["baseline", "--set", "N=3", "--seed", "7", "--steps", "1"]) == 0
    assert (tmp_path / "baseline-s7" / "metrics.tsv").exists()
