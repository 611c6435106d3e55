import math

import numpy as np
import pytest

import fmgan


def test_ipot_hand_instance():
    cost = np.array([[0.2, 0.8], [0.7, 0.1]])
    r = fmgan.ipot(cost)
    assert abs(r["value"] - 0.15) <= 1e-3
    assert r["residual"] <= 1e-6
    assert r["plan"].shape == (2, 2)
    assert (r["plan"] >= 0).all()
    np.testing.assert_allclose(r["plan"].sum(axis=1), [0.5, 0.5], atol=1e-6)


def test_ipot_matches_exact_on_random_costs():
    rng = np.random.default_rng(3)
    for n in range(2, 7):
        cost = rng.uniform(0, 2, size=(n, n))
        assert abs(fmgan.ipot(cost)["value"] - fmgan.exact_emd(cost)["value"]) <= 1e-3
        assert abs(fmgan.sinkhorn(cost, 0.01, iters=20000)["value"] - fmgan.exact_emd(cost)["value"]) <= 1e-2


def test_fmd_identity_and_gradient_shapes():
    rng = np.random.default_rng(5)
    f = rng.normal(size=(6, 4))
    assert fmgan.fmd(f, f, tol=1e-12, outer_iters=5000)["value"] <= 1e-6
    g = rng.normal(size=(6, 4))
    df, dg = fmgan.fmd_grad(f, g)
    assert df.shape == f.shape and dg.shape == g.shape
    c = fmgan.cosine_cost(f, g)
    assert c.shape == (4, 4)
    assert ((c >= -1e-12) & (c <= 2 + 1e-12)).all()


def test_bleu_examples():
    the, cat, is_, on, mat = 4, 5, 6, 7, 8
    ref = [[the, cat, is_, on, the, mat]]
    assert fmgan.bleu(ref, ref, 4) == pytest.approx(1.0)
    assert fmgan.self_bleu([[4, 5, 6], [4, 5, 6]], 2) == pytest.approx(1.0)


def test_errors_map_to_python_exceptions():
    with pytest.raises(fmgan.DimensionError):
        fmgan.ipot(np.zeros(3))
    with pytest.raises(fmgan.NumericError):
        fmgan.ipot(np.array([[0.2, math.nan], [0.7, 0.1]]))
    with pytest.raises(fmgan.Error):
        fmgan.bleu([], [[4, 5]], 2)


def test_config_defaults():
    d = fmgan.config_defaults("cipher-train")
    assert d["train.iterations"] == "3000"
    assert d["solver.beta"] == "0.5"


def test_cli_ot_bench(tmp_path):
    cost = tmp_path / "c.txt"
    cost.write_text("0.2 0.8\n0.7 0.1\n")
    code, out, err = fmgan.run(["ot-bench", "--cost", str(cost), "--outdir", str(tmp_path / "out")])
    assert code == 0, err
    assert (tmp_path / "out" / "summary.csv").exists()
    code, _, err = fmgan.run(["train", "--bata", "1", "--outdir", str(tmp_path / "bad")])
    assert code == 2
    assert "bata" in err
