import json

import numpy as np
import pytest

from otreg.cli import heatmap_pgm, main
from otreg.io import load_matrix, save_matrix


@pytest.fixture
def files(tmp_path):
    def put(name, m):
        path = tmp_path / name
        save_matrix(path, np.asarray(m, dtype=float))
        return str(path)

    return put


def test_align_identical_rows(files, tmp_path):
    s = files("s.emb", [[0.3, 0.4, 0.5]])
    assert main(["align", "--source", s, "--target", s, "--plan-out", str(tmp_path / "p.csv"),
                 "--report-out", str(tmp_path / "r.json")]) == 0
    np.testing.assert_array_equal(load_matrix(tmp_path / "p.csv"), [[1.0]])
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["command"] == "align"
    assert report["results"]["l_cost"] == pytest.approx(0.0, abs=1e-12)
    assert set(report["inputs"]) == {"source", "target"}
    assert {"l_spr", "l_ot", "marginal_error", "iterations"} <= set(report["results"])


def test_align_orthogonal_pairing(files, tmp_path):
    s = files("s.csv", [[1, 0], [0, 1]])
    t = files("t.csv", [[0, 1], [1, 0]])
    assert main(["align", "--source", s, "--target", t, "--epsilon", "0.005",
                 "--plan-out", str(tmp_path / "p.emb")]) == 0
    np.testing.assert_allclose(load_matrix(tmp_path / "p.emb"), [[0, 0.5], [0.5, 0]], atol=1e-3)


def test_align_missing_file_no_outputs(files, tmp_path, capsys):
    t = files("t.csv", [[1, 0]])
    code = main(["align", "--source", str(tmp_path / "nope.csv"), "--target", t,
                 "--plan-out", str(tmp_path / "p.csv"), "--report-out", str(tmp_path / "r.json")])
    assert code == 2
    assert not (tmp_path / "p.csv").exists() and not (tmp_path / "r.json").exists()
    assert "nope.csv" in capsys.readouterr().err


def test_align_dimension_mismatch(files):
    assert main(["align", "--source", files("a.csv", [[1, 0]]), "--target", files("b.csv", [[1, 0, 0]])]) == 2


def test_align_zero_row_is_numerical_failure(files, tmp_path):
    code = main(["align", "--source", files("a.csv", [[0, 0]]), "--target", files("b.csv", [[1, 0]]),
                 "--plan-out", str(tmp_path / "p.csv")])
    assert code == 3 and not (tmp_path / "p.csv").exists()


def test_align_linear_overflow_exit_3(files):
    s = files("a.csv", [[1, 0], [0, 1]])
    t = files("b.csv", [[-1, 0.1], [0.1, -1]])
    assert main(["align", "--source", s, "--target", t, "--epsilon", "1e-4", "--linear"]) == 3


def _hello(tmp_path, files):
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    idx = [0, 0, 1, 1, 2, 2, 2, 2, 3, 3]
    return files("f.emb", q[idx]), files("pad.emb", q[5:6])


def test_compress_hello(files, tmp_path):
    f, pad = _hello(tmp_path, files)
    out = tmp_path / "c.csv"
    assert main(["compress", "--input", f, "--pad", pad, "--out", str(out), "--report-out", str(tmp_path / "r.json")]) == 0
    assert load_matrix(out).shape == (5, 6)
    assert json.loads((tmp_path / "r.json").read_text())["results"]["after_merge"] == 5


def test_compress_near_one_identity(files, tmp_path):
    m = np.random.default_rng(3).normal(size=(7, 4))
    f, pad = files("f.csv", m), files("pad.csv", np.ones((1, 4)))
    out = tmp_path / "c.csv"
    assert main(["compress", "--input", f, "--pad", pad, "--merge-threshold", "0.9999",
                 "--drop-threshold", "0.9999", "--out", str(out)]) == 0
    np.testing.assert_array_equal(load_matrix(out), m)


def test_compress_all_pad(files, tmp_path):
    f, pad = files("f.csv", [[0, 1], [0, 2], [0, 3]]), files("pad.csv", [[0, 1]])
    out = tmp_path / "c.emb"
    assert main(["compress", "--input", f, "--pad", pad, "--out", str(out), "--report-out", str(tmp_path / "r.json")]) == 0
    assert load_matrix(out).shape == (0, 2)
    assert json.loads((tmp_path / "r.json").read_text())["results"]["empty"] is True


def test_compress_bad_pad_file(files, tmp_path):
    f, pad = files("f.csv", [[0, 1]]), files("pad.csv", [[0, 1], [1, 0]])
    assert main(["compress", "--input", f, "--pad", pad, "--out", str(tmp_path / "c.csv")]) == 2


@pytest.mark.parametrize("rows,expected", [([0, 1, 2, 1, 2, 1], 4), ([0, 1, 2], 4), ([0], 2)])
def test_unique_counts(files, tmp_path, rows, expected):
    q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(5, 5)))
    out = tmp_path / "g.emb"
    assert main(["unique", "--input", files("e.csv", q[rows]), "--pad", files("p.csv", q[4:5]), "--out", str(out)]) == 0
    assert load_matrix(out).shape[0] == expected
    mapping = json.loads((tmp_path / "g.map.json").read_text())["results"]
    assert mapping["n_g"] == expected and mapping["pad_row_index"] == expected - 1


def test_heatmap_anchor_pixels(files, tmp_path):
    src = files("s.csv", [[1, 0], [-1, 0], [0, 1]])
    tgt = files("t.csv", [[1, 0]])
    out = tmp_path / "h.pgm"
    assert main(["heatmap", "--source", src, "--target", tgt, "--out", str(out)]) == 0
    assert out.read_text().split() == ["P2", "1", "3", "255", "0", "255", "128"]


def test_heatmap_csv_and_bad_extension(files, tmp_path):
    src = files("s.csv", [[1, 0], [0, 1]])
    assert main(["heatmap", "--source", src, "--target", src, "--out", str(tmp_path / "h.csv")]) == 0
    np.testing.assert_allclose(load_matrix(tmp_path / "h.csv"), [[0, 1], [1, 0]], atol=1e-15)
    assert main(["heatmap", "--source", src, "--target", src, "--out", str(tmp_path / "h.png")]) == 2


def test_heatmap_round_half_up():
    assert heatmap_pgm(np.array([[1.0, 2.0 / 255]])).decode().split()[-2:] == ["128", "1"]


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--sizes", "2x2", "--trials", "1"]) == 0
    assert "worst relative error" in capsys.readouterr().out
    assert main(["gradcheck", "--sizes", "2x2", "--trials", "1", "--inject-gradient-error", "0.01"]) == 1
    assert "2x2" in capsys.readouterr().err
    assert main(["gradcheck", "--trials", "0"]) == 0
    assert "warning" in capsys.readouterr().err


def test_gradcheck_bad_sizes():
    assert main(["gradcheck", "--sizes", "2by2"]) == 2


TINY = "k = 2\nd_h = 16\nstage1_epochs = 1\nstage2_epochs = {s2}\ncorpus.utterance_count = 4\ncorpus.eval_count = 2\n"


def test_train_artifacts(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY.format(s2=1))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out-dir", str(out)]) == 0
    names = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()}
    assert {"steps.jsonl", "eval_stage1.json", "eval_final.json", "run_report.json",
            "params/final_w1.emb", "params/stage1_b2.emb"} <= names
    lines = (out / "steps.jsonl").read_text().splitlines()
    assert len(lines) == 8 and json.loads(lines[-1])["stage"] == 2


def test_train_stage1_only(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY.format(s2=0))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out-dir", str(out)]) == 0
    assert (out / "eval_stage1.json").exists()
    assert not (out / "eval_final.json").exists()
    assert not list(out.glob("params/final_*"))


def test_train_bad_key(tmp_path, capsys):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("k = 2\nwarmup = 3\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "run")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_3(tmp_path, capsys):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY.format(s2=0) + "learning_rate = 1e300\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "run")]) == 3
    assert "sample index" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()
