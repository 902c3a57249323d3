"""End-to-end runs of the command line entry point.

Every test calls main(argv) in-process against tiny corpora in temp
directories, checking exit codes, printed tables and the files each
verb leaves behind.
"""
import pytest

from pedcast.cli import main
from pedcast.training import load_checkpoint

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

# five 20-frame scenes, two straight-line pedestrians each
# (x0, y0, vx, vy) in metres and metres per frame
_LINES = {
    "a": ((0.0, 0.0, 0.5, 0.0), (0.0, 4.0, 0.5, 0.0)),
    "b": ((0.0, 0.0, 0.45, 0.05), (9.0, 1.0, -0.45, 0.05)),
    "c": ((0.0, 3.0, 0.5, 0.0), (3.0, 0.0, 0.0, 0.35)),
    "d": ((0.0, 0.0, 0.35, 0.35), (7.0, 0.0, -0.35, 0.35)),
    "e": ((1.0, 0.0, 0.0, 0.5), (4.0, 9.5, 0.0, -0.5)),
}

# small dims keep each training run well under a second
FAST = ["--batch", "4", "--hidden", "12", "--embed", "6", "--seed", "0"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    for name, peds in _LINES.items():
        rows = []
        for t in range(20):
            for pid, (x0, y0, vx, vy) in enumerate(peds, start=1):
                rows.append(f"{t * 10} {pid} {x0 + vx * t:.4f} "
                            f"{y0 + vy * t:.4f}")
        (root / f"{name}.txt").write_text("\n".join(rows) + "\n")
    manifest = root / "manifest.txt"
    manifest.write_text("".join(f"{n} {n}.txt stride=10\n" for n in _LINES))
    return manifest


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    rc = main(["train", "--manifest", str(corpus), "--holdout", "e",
               "--out", str(out), "--epochs", "2", "--sigma", "2"] + FAST)
    assert rc == 0
    path = out / "checkpoints" / "e_sigma2.ckpt"
    assert path.is_file()
    return path


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_synth")
    rc = main(["synth", "--out", str(out), "--size", "desk", "--seed", "7"])
    assert rc == 0
    return out


class TestExitCodes:
    def test_no_verb_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_unknown_verb_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_required_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--holdout", "e"])
        assert exc.value.code == 1

    def test_missing_manifest_exits_2(self, tmp_path, capsys):
        rc = main(["prepare", "--manifest", str(tmp_path / "nope.txt")])
        assert rc == 2
        assert "data error" in capsys.readouterr().err

    def test_malformed_manifest_exits_2(self, tmp_path, capsys):
        mf = tmp_path / "manifest.txt"
        mf.write_text("onlyname\n")
        rc = main(["prepare", "--manifest", str(mf)])
        assert rc == 2
        assert "data error" in capsys.readouterr().err

    def test_unknown_holdout_exits_1(self, corpus, tmp_path, capsys):
        rc = main(["train", "--manifest", str(corpus), "--holdout", "zzz",
                   "--out", str(tmp_path), "--epochs", "1"] + FAST)
        assert rc == 1
        assert "configuration error" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore:divide by zero:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_diverging_training_exits_3(self, corpus, tmp_path, capsys):
        # an absurd learning rate sends the parameters to ~1e18 after one
        # Adam step, so the next forward pass leaves the float range
        rc = main(["train", "--manifest", str(corpus), "--holdout", "e",
                   "--out", str(tmp_path), "--epochs", "3", "--lr", "1e18",
                   "--sigma", "2"] + FAST)
        assert rc == 3
        assert "numeric failure" in capsys.readouterr().err


class TestSynthAndPrepare:
    def test_synth_writes_five_datasets_and_manifest(self, synth_dir):
        assert (synth_dir / "manifest.txt").is_file()
        for name in ("eth", "hotel", "zara01", "zara02", "ucy"):
            assert (synth_dir / f"{name}.txt").stat().st_size > 0

    def test_prepare_prints_stats_and_writes_csv(self, synth_dir, tmp_path,
                                                 capsys):
        rc = main(["prepare", "--manifest", str(synth_dir / "manifest.txt"),
                   "--out", str(tmp_path)])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].split() == ["dataset", "pedestrians", "frames",
                                    "crowded"]
        assert len(lines) == 6
        stats = (tmp_path / "stats.csv").read_text().splitlines()
        assert stats[0] == "dataset,pedestrians,frames,crowded_frames"
        assert len(stats) == 6
        by_name = {row.split(",")[0]: row.split(",") for row in stats[1:]}
        assert set(by_name) == {"eth", "hotel", "zara01", "zara02", "ucy"}
        assert all(int(v[1]) > 0 and int(v[2]) > 0 for v in by_name.values())

    def test_prepare_without_out_writes_nothing(self, corpus, tmp_path,
                                                capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        rc = main(["prepare", "--manifest", str(corpus)])
        assert rc == 0
        assert "a" in capsys.readouterr().out
        assert list(tmp_path.iterdir()) == []


class TestTrainCli:
    def test_writes_checkpoint_and_loss_log(self, trained):
        log = trained.parent / "e_sigma2_loss.csv"
        rows = log.read_text().splitlines()
        assert rows[0] == "epoch,mean_loss,wall_seconds"
        assert len(rows) == 3
        ckpt = load_checkpoint(str(trained))
        assert ckpt.epoch == 2
        assert ckpt.config.hidden_dim == 12
        assert ckpt.config.sigma == 2.0

    def test_progress_lines_printed(self, corpus, tmp_path, capsys):
        rc = main(["train", "--manifest", str(corpus), "--holdout", "d",
                   "--out", str(tmp_path), "--epochs", "1", "--sigma", "2"]
                  + FAST)
        assert rc == 0
        out = capsys.readouterr().out
        assert "epoch    1/1" in out
        assert "checkpoint:" in out

    def test_ablation_flag_changes_checkpoint_name(self, corpus, tmp_path):
        rc = main(["train", "--manifest", str(corpus), "--holdout", "e",
                   "--out", str(tmp_path), "--epochs", "1", "--sigma", "2",
                   "--ablation", "no-interaction"] + FAST)
        assert rc == 0
        path = tmp_path / "checkpoints" / "e_sigma2_nointeraction.ckpt"
        assert path.is_file()
        assert load_checkpoint(str(path)).params.interaction is False


class TestEvalCli:
    def run_eval(self, corpus, trained, out, extra=()):
        return main(["eval", "--manifest", str(corpus), "--holdout", "e",
                     "--checkpoint", str(trained), "--runs", "2",
                     "--seed", "5", "--out", str(out), *extra])

    def test_writes_metrics_figure_and_trajectories(self, corpus, trained,
                                                    tmp_path, capsys):
        rc = self.run_eval(corpus, trained, tmp_path)
        assert rc == 0
        metrics = (tmp_path / "metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("dataset,sigma,runs,ade_mean,ade_var,"
                                     "fde_mean,fde_var,per_frame_ade_01")
        assert len(metrics) == 2
        assert metrics[1].startswith("e,2,2,")
        table = (tmp_path / "metrics.txt").read_text()
        assert "ADE (m)" in table
        assert capsys.readouterr().out == table
        png = (tmp_path / "per_frame.png").read_bytes()
        assert png[:8] == PNG_MAGIC
        tdir = tmp_path / "trajectories"
        files = sorted(p.name for p in tdir.iterdir())
        assert files == ["e_w0000.csv"]
        rows = (tdir / "e_w0000.csv").read_text().splitlines()
        assert rows[0] == "ped_id,step,kind,x,y"
        kinds = [r.split(",")[2] for r in rows[1:]]
        # both pedestrians are fully observed: 8 obs + 12 truth + 12 pred
        assert kinds.count("obs") == 16
        assert kinds.count("truth") == 24
        assert kinds.count("pred") == 24

    def test_sigma_override_lands_in_report(self, corpus, trained, tmp_path):
        rc = self.run_eval(corpus, trained, tmp_path, ("--sigma", "8"))
        assert rc == 0
        row = (tmp_path / "metrics.csv").read_text().splitlines()[1]
        assert row.startswith("e,8,2,")

    def test_no_trajectories_flag(self, corpus, trained, tmp_path):
        rc = self.run_eval(corpus, trained, tmp_path, ("--no-trajectories",))
        assert rc == 0
        assert not (tmp_path / "trajectories").exists()
        assert (tmp_path / "metrics.csv").is_file()

    def test_rerun_is_byte_identical(self, corpus, trained, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert self.run_eval(corpus, trained, out1) == 0
        assert self.run_eval(corpus, trained, out2) == 0
        for rel in ("metrics.csv", "metrics.txt", "trajectories/e_w0000.csv"):
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()

    def test_missing_checkpoint_exits_2(self, corpus, tmp_path, capsys):
        rc = main(["eval", "--manifest", str(corpus), "--holdout", "e",
                   "--checkpoint", str(tmp_path / "nope.ckpt"),
                   "--out", str(tmp_path)])
        assert rc == 2
        assert "data error" in capsys.readouterr().err

    def test_unknown_holdout_exits_1(self, corpus, trained, tmp_path, capsys):
        rc = main(["eval", "--manifest", str(corpus), "--holdout", "zzz",
                   "--checkpoint", str(trained), "--out", str(tmp_path)])
        assert rc == 1
        assert "unknown dataset" in capsys.readouterr().err


def _sweep_argv(corpus, out):
    return (["sweep", "--manifest", str(corpus), "--holdout", "e",
             "--sigmas", "1,4", "--runs", "1", "--mode", "greedy",
             "--out", str(out), "--epochs", "1", "--sigma", "1"] + FAST)


@pytest.fixture(scope="module")
def sweep_out(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_sweep")
    assert main(_sweep_argv(corpus, out)) == 0
    return out


class TestSweepCli:
    def test_outputs(self, sweep_out):
        ckpts = sorted(p.name
                       for p in (sweep_out / "checkpoints").glob("*.ckpt"))
        assert ckpts == ["e_sigma1.ckpt", "e_sigma4.ckpt"]
        metrics = (sweep_out / "metrics.csv").read_text().splitlines()
        assert len(metrics) == 3
        avgs = (sweep_out / "averages.csv").read_text().splitlines()
        assert avgs[0] == "sigma,ade_mean,fde_mean"
        assert [r.split(",")[0] for r in avgs[1:]] == ["1", "4"]
        assert (sweep_out / "table.txt").read_text().startswith("dataset")
        for fig in ("sweep.png", "per_frame.png"):
            assert (sweep_out / fig).read_bytes()[:8] == PNG_MAGIC

    def test_second_run_reuses_cached_checkpoints(self, corpus, sweep_out):
        cache = sweep_out / "checkpoints"
        before = {p.name: p.stat().st_mtime_ns for p in cache.glob("*.ckpt")}
        assert main(_sweep_argv(corpus, sweep_out)) == 0
        after = {p.name: p.stat().st_mtime_ns for p in cache.glob("*.ckpt")}
        assert after == before

    def test_bad_sigmas_exits_1(self, corpus, tmp_path, capsys):
        rc = main(["sweep", "--manifest", str(corpus), "--sigmas", "2,x",
                   "--out", str(tmp_path), "--epochs", "1"] + FAST)
        assert rc == 1
        assert "--sigmas" in capsys.readouterr().err


class TestPredictCli:
    def test_writes_csv_and_figure(self, corpus, trained, tmp_path, capsys):
        rc = main(["predict", "--manifest", str(corpus), "--holdout", "e",
                   "--checkpoint", str(trained), "--window", "0",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert "wrote" in capsys.readouterr().out
        rows = (tmp_path / "e_w0000.csv").read_text().splitlines()
        assert rows[0] == "ped_id,step,kind,x,y"
        assert sum(r.split(",")[2] == "pred" for r in rows[1:]) == 24
        assert (tmp_path / "e_w0000.png").read_bytes()[:8] == PNG_MAGIC

    def test_greedy_default_is_deterministic(self, corpus, trained, tmp_path):
        out1, out2 = tmp_path / "p1", tmp_path / "p2"
        for out in (out1, out2):
            rc = main(["predict", "--manifest", str(corpus), "--holdout",
                       "e", "--checkpoint", str(trained), "--out", str(out)])
            assert rc == 0
        assert ((out1 / "e_w0000.csv").read_bytes()
                == (out2 / "e_w0000.csv").read_bytes())

    def test_window_out_of_range_exits_1(self, corpus, trained, tmp_path,
                                         capsys):
        rc = main(["predict", "--manifest", str(corpus), "--holdout", "e",
                   "--checkpoint", str(trained), "--window", "42",
                   "--out", str(tmp_path)])
        assert rc == 1
        assert "out of range" in capsys.readouterr().err
