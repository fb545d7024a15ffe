import numpy as np
import pytest

from fxpnn.cli import EXIT_USAGE, main
from fxpnn.codebook import build_weight_codebook
from fxpnn.nn import MlpModel, QuantizedMlpModel, read_model

FAST = ["--steps", "40", "--batch-size", "32"]
LC_FAST = ["--max-iters", "2", "--learn-steps", "10", "--batch-size", "32"]


@pytest.fixture(scope="module")
def float_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "float.txt"
    assert main(["train", "--out", str(path), "--seed", "3", *FAST]) == 0
    return path


def test_complexity_stdout(capsys):
    assert main(["complexity", "--k", "14"]) == 0
    assert capsys.readouterr().out == "receiver,k,additions,ratio\nml,14,30464,1.0\nnn,14,10496,0.3445\n"


def test_complexity_small_k(capsys):
    assert main(["complexity", "--k", "2"]) == EXIT_USAGE
    assert "at least 3" in capsys.readouterr().err


def test_unknown_flag():
    assert main(["complexity", "--bogus"]) == EXIT_USAGE


def test_train_needs_out(capsys):
    assert main(["train", *FAST]) == EXIT_USAGE
    assert "--out" in capsys.readouterr().err


def test_train_deterministic(tmp_path, float_model):
    again = tmp_path / "again.txt"
    assert main(["train", "--out", str(again), "--seed", "3", *FAST]) == 0
    assert again.read_bytes() == float_model.read_bytes()
    assert isinstance(read_model(again), MlpModel)


def test_dc_quantize(tmp_path, float_model, capsys):
    out = tmp_path / "dc.txt"
    assert main(["quantize", "--model", str(float_model), "--method", "dc", "--out", str(out)]) == 0
    assert "codebook size 51" in capsys.readouterr().out
    assert out.read_text().splitlines()[2] == "format 5 8"
    # quantising an already-quantised model with the same format changes nothing
    twice = tmp_path / "dc2.txt"
    assert main(["quantize", "--model", str(out), "--method", "dc", "--out", str(twice)]) == 0
    assert twice.read_bytes() == out.read_bytes()


def test_lc_quantize_membership(tmp_path, float_model, capsys):
    out, trace = tmp_path / "lc.txt", tmp_path / "trace.csv"
    argv = ["quantize", "--model", str(float_model), "--kf", "4", "--out", str(out), "--trace", str(trace), *LC_FAST]
    assert main(argv) == 0
    assert "LC 2 iterations" in capsys.readouterr().out
    qm = read_model(out)
    assert isinstance(qm, QuantizedMlpModel) and qm.fmt.frac_bits == 4
    params = qm.dequantize().params
    mask = qm.arch.weight_mask()
    assert build_weight_codebook(10).contains_all(params[mask])
    assert trace.read_text().startswith("iter,mu,psi_gap,loss\n")


def test_quantize_missing_model(tmp_path):
    assert main(["quantize", "--model", str(tmp_path / "nope"), "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_fixed_eval_needs_quantized(tmp_path, float_model, capsys):
    argv = ["eval", "--receiver", "nn-fixed", "--model", str(float_model), "--blocks", "10"]
    assert main(argv) == EXIT_USAGE
    assert "quantized" in capsys.readouterr().err


def test_corrupt_model_is_runtime_error(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("fxpnn v1\narch 8 64 32 256\nformat 5 8\nw 0 0 0 + 77\n")
    assert main(["eval", "--receiver", "nn-float", "--model", str(bad), "--blocks", "10"]) == 1


def _eval(tmp_path, name, *extra):
    out = tmp_path / name
    argv = ["eval", "--snr-start", "0", "--snr-stop", "6", "--snr-step", "3", "--blocks", "3000", "--out", str(out)]
    assert main(argv + list(extra)) == 0
    return out.read_bytes()


def test_eval_csv_deterministic_and_worker_invariant(tmp_path):
    a = _eval(tmp_path, "a.csv", "--seed", "11")
    b = _eval(tmp_path, "b.csv", "--seed", "11")
    c = _eval(tmp_path, "c.csv", "--seed", "11", "--workers", "2")
    assert a == b == c
    lines = a.decode().splitlines()
    assert lines[0] == "snr,bler,blocks,errors,receiver" and len(lines) == 4
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0.0", "3.0", "6.0"]


def test_fixed_eval_reports_saturations(tmp_path, float_model, capsys):
    argv = ["eval", "--receiver", "dc-fixed", "--model", str(float_model), "--blocks", "200",
            "--snr-start", "5", "--snr-stop", "5"]
    assert main(argv) == 0
    cap = capsys.readouterr()
    assert cap.out.splitlines()[1].endswith(",dc-fixed")
    assert "saturation events:" in cap.err


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nk = 10\n")
    assert main(["complexity", "--config", str(cfg)]) == 0
    assert "ml,10,22272," in capsys.readouterr().out
    # flags beat the file
    assert main(["complexity", "--config", str(cfg), "--k", "12"]) == 0
    assert "ml,12,26368," in capsys.readouterr().out


def test_config_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("kk=3\n")
    assert main(["complexity", "--config", str(cfg)]) == EXIT_USAGE
    assert "kk" in capsys.readouterr().err


def test_config_invalid_choice(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("receiver=mmse\n")
    assert main(["eval", "--config", str(cfg)]) == EXIT_USAGE


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "fxpnn", "complexity"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("receiver,k")
    np.testing.assert_equal(r.stdout.count("\n"), 3)
