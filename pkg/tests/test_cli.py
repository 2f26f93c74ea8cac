from pathlib import Path

import numpy as np
import pytest

from neonext.cli import main
from neonext.neoinit import InitSpec, neoinit
from neonext.tensor import read_matrix
from neonext.trainer import CONFIG_HEADER


def write_tiny_config(path, out_dir, **overrides):
    kv = {
        "model": "neonext-micro",
        "data": "synthetic",
        "synth_train": "192",
        "synth_val": "64",
        "epochs": "1",
        "warmup_epochs": "1",
        "batch_size": "32",
        "seeds": "1",
        "init": "neoinit",
        "augment": "basic",
        "drop_path": "0.05",
        "out_dir": str(out_dir),
    }
    kv.update(overrides)
    lines = [CONFIG_HEADER] + [f"{k} = {v}" for k, v in kv.items()]
    Path(path).write_text("\n".join(lines) + "\n")


class TestInitDump:
    def test_square_no_noise(self, tmp_path, capsys):
        out = tmp_path / "m.t4"
        code = main(["init-dump", "--rows", "7", "--cols", "7", "--no-noise", "--out", str(out)])
        assert code == 0
        printed = capsys.readouterr().out
        assert printed.count("\n") == 7
        assert np.array_equal(read_matrix(out).array, np.eye(7))

    def test_noisy_matches_library(self, tmp_path):
        out = tmp_path / "m.t4"
        main(["init-dump", "--rows", "3", "--cols", "5", "--seed", "11", "--out", str(out)])
        want = neoinit(InitSpec(3, 5, noise=True, seed=11))
        assert np.array_equal(read_matrix(out).array, want.array)

    def test_repeat_invocation_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.t4", tmp_path / "b.t4"
        ta, tb = tmp_path / "a.txt", tmp_path / "b.txt"
        main(["init-dump", "--rows", "4", "--cols", "6", "--seed", "3", "--out", str(a), "--text-out", str(ta)])
        out_a = capsys.readouterr().out
        main(["init-dump", "--rows", "4", "--cols", "6", "--seed", "3", "--out", str(b), "--text-out", str(tb)])
        out_b = capsys.readouterr().out
        assert a.read_bytes() == b.read_bytes()
        assert ta.read_bytes() == tb.read_bytes()
        assert out_a == out_b


class TestEquivCheck:
    def test_passes_and_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "equiv.csv"
        code = main(["equiv-check", "--trials", "20", "--seed", "7", "--out", str(out)])
        assert code == 0
        assert "max |patchwise - blockdiag|" in capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert lines[0] == "trial,kind,n,c,h,w,groups,max_abs_dev"
        assert len(lines) == 21

    def test_repeat_invocation_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["equiv-check", "--trials", "10", "--seed", "9", "--out", str(a)])
        main(["equiv-check", "--trials", "10", "--seed", "9", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestBenchCli:
    def test_runs_and_appends(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code = main([
            "bench", "--op", "neocell", "--c", "2", "--h", "8", "--w", "8", "--k", "4",
            "--iters", "2", "--warmup", "1", "--out", str(out),
        ])
        assert code == 0
        assert "multiplies=512" not in capsys.readouterr().out  # c=2 doubles it
        assert out.read_text().count("\n") == 2

    def test_non_timing_columns_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["bench", "--op", "dwconv", "--c", "2", "--h", "8", "--w", "8", "--k", "3",
                "--iters", "1", "--warmup", "0", "--seed", "4"]
        main(args + ["--out", str(a)])
        main(args + ["--out", str(b)])
        cut = lambda p: [",".join(ln.split(",")[:11]) for ln in Path(p).read_text().splitlines()]
        assert cut(a) == cut(b)


class TestGradcheckCli:
    @pytest.mark.parametrize("layer", ["neocell", "pointwise", "batchnorm", "gelu"])
    def test_layers_pass(self, layer, capsys):
        code = main(["gradcheck", "--layer", layer, "--c", "2", "--h", "8", "--w", "8", "--k", "4"])
        out = capsys.readouterr().out
        assert code == 0, out
        assert "max relative error" in out

    def test_model_passes_with_sampling(self, capsys):
        code = main(["gradcheck", "--layer", "model", "--entries", "2"])
        assert code == 0, capsys.readouterr().out

    def test_failure_exit_nonzero(self, capsys):
        # an absurd threshold forces failure reporting
        code = main(["gradcheck", "--layer", "pointwise", "--c", "2", "--h", "4", "--w", "4",
                     "--threshold", "1e-18"])
        assert code == 1


class TestTrainCli:
    def test_train_writes_outputs(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        write_tiny_config(cfg, tmp_path / "out")
        code = main(["train", "--config", str(cfg)])
        assert code == 0
        assert (tmp_path / "out" / "run.csv").is_file()
        assert (tmp_path / "out" / "checkpoint" / "manifest.txt").is_file()

    def test_train_csv_deterministic_modulo_walltime(self, tmp_path):
        cfg_a, cfg_b = tmp_path / "a.cfg", tmp_path / "b.cfg"
        write_tiny_config(cfg_a, tmp_path / "out_a")
        write_tiny_config(cfg_b, tmp_path / "out_b")
        main(["train", "--config", str(cfg_a)])
        main(["train", "--config", str(cfg_b)])
        strip = lambda p: [",".join(ln.split(",")[:-1]) for ln in Path(p).read_text().splitlines()]
        assert strip(tmp_path / "out_a" / "run.csv") == strip(tmp_path / "out_b" / "run.csv")

    def test_diverged_run_exits_2(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        write_tiny_config(cfg, tmp_path / "out", lr="1e9", init="random-normal", warmup_epochs="0")
        assert main(["train", "--config", str(cfg)]) == 2

    def test_config_error_exits_1(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not a config\n")
        assert main(["train", "--config", str(cfg)]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_config_exits_1(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 1


class TestAblateCli:
    def test_report_written(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        write_tiny_config(cfg, tmp_path / "out", seeds="1,2")
        code = main(["ablate", "--config", str(cfg)])
        assert code == 0
        out = capsys.readouterr().out
        assert "accuracy gap" in out
        assert (tmp_path / "out" / "ablation_report.txt").is_file()
