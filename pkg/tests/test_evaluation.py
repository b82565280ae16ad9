import numpy as np
import pytest

from taclang.evaluation import (
    area_bin,
    depth_bin,
    linear_probe,
    position_bin,
    r_squared,
    regress_probe,
    retrieval,
    ridge_fit,
    ridge_predict,
    slide_bin,
)


def unit_rows(rng, n, d=16):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_linear_probe_separable_is_perfect(rng):
    x0 = rng.normal(size=(60, 4)) + np.array([4.0, 0, 0, 0])
    x1 = rng.normal(size=(60, 4)) - np.array([4.0, 0, 0, 0])
    x = np.vstack([x0, x1])
    y = np.array([0] * 60 + [1] * 60)
    acc = linear_probe(x, y, x, y, 2)
    assert acc == 1.0


def test_linear_probe_shuffled_labels_chance(rng):
    x = rng.normal(size=(700, 8))
    y = rng.integers(0, 7, size=700)
    xv = rng.normal(size=(700, 8))
    yv = rng.integers(0, 7, size=700)
    acc = linear_probe(x, y, xv, yv, 7)
    assert abs(acc - 1 / 7) < 0.05


def test_linear_probe_rejects_single_class(rng):
    x = rng.normal(size=(10, 3))
    with pytest.raises(ValueError):
        linear_probe(x, np.zeros(10, dtype=int), x, np.zeros(10, dtype=int), 2)


def test_ridge_exact_fit_gives_perfect_metrics(rng):
    x = rng.normal(size=(100, 5))
    w_true = rng.normal(size=5)
    y = x @ w_true + 0.7
    w = ridge_fit(x, y)
    pred = ridge_predict(w, x)
    res = pred - y
    # the ridge penalty leaves a small shrinkage bias
    assert np.abs(res).mean() < 1e-3
    assert r_squared(res, y - y.mean()) > 1 - 1e-6


def test_constant_mean_predictor_r2_zero(rng):
    y = rng.normal(size=200)
    res = np.full_like(y, y.mean()) - y
    assert r_squared(res, y - y.mean()) == pytest.approx(0.0, abs=1e-12)


def test_r2_independent_two_pass_oracle(rng):
    pred = rng.normal(size=150)
    y = rng.normal(size=150)
    ours = r_squared(pred - y, y - y.mean())
    ss_res = sum((p - t) ** 2 for p, t in zip(pred, y))
    ss_tot = sum((t - y.mean()) ** 2 for t in y)
    assert ours == pytest.approx(1 - ss_res / ss_tot, abs=1e-9)


def test_regress_probe_perfect_embeddings(rng):
    """Targets linearly readable from features -> near-perfect metrics."""
    n = 400
    x = rng.normal(size=(n, 12))
    proj = rng.normal(size=(12, 8)) * 0.3
    t = np.tanh(x @ proj)
    # make sin/cos channel pairs consistent angles
    for cs, cc in ((4, 5), (6, 7)):
        ang = np.arctan2(t[:, cs], t[:, cc])
        t[:, cs], t[:, cc] = np.sin(ang), np.cos(ang)
    # ...and linearly readable again
    x = np.hstack([t, rng.normal(size=(n, 4)) * 0.01])
    m = np.ones((n, 8))
    half = n // 2
    out = regress_probe(x[:half], t[:half], m[:half], x[half:], t[half:], m[half:])
    assert out["depth"]["r2"] > 0.99
    assert out["macro"]["r2"] > 0.95
    assert out["macro"]["mae"] == pytest.approx(
        np.mean([out[k]["mae"] for k in ("depth", "position", "area", "principal_axis", "shear")]),
        abs=1e-12,
    )


def test_regress_probe_excludes_all_masked_attribute(rng):
    n = 100
    x = rng.normal(size=(n, 6))
    t = rng.uniform(-1, 1, size=(n, 8))
    m = np.ones((n, 8))
    m[:, 4] = m[:, 5] = 0.0  # principal axis never valid
    half = n // 2
    out = regress_probe(x[:half], t[:half], m[:half], x[half:], t[half:], m[half:])
    assert "principal_axis" not in out
    assert set(out) == {"depth", "position", "area", "shear", "macro"}


def test_retrieval_identical_sets_token_perfect(rng):
    f = unit_rows(rng, 30)
    out = retrieval(f, f)
    assert out["top1"] == 1.0 and out["top5"] == 1.0


def test_retrieval_random_chance(rng):
    f = unit_rows(rng, 100, d=64)
    g = unit_rows(rng, 100, d=64)
    out = retrieval(f, g)
    assert out["top1"] <= 0.05


def test_retrieval_rotation_invariance(rng):
    """Common rotation preserves cosine similarities exactly enough."""
    f = unit_rows(rng, 40)
    g = unit_rows(rng, 40)
    base = retrieval(f, g)
    q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
    rotated = retrieval(f @ q, g @ q)
    assert rotated["top1"] == base["top1"]
    assert rotated["top5"] == base["top5"]


def test_retrieval_size_mismatch(rng):
    with pytest.raises(ValueError):
        retrieval(unit_rows(rng, 4), unit_rows(rng, 5))


def test_metrics_invariant_to_common_permutation(rng):
    f = unit_rows(rng, 50)
    g = unit_rows(rng, 50)
    base = retrieval(f, g)
    perm = rng.permutation(50)
    assert retrieval(f[perm], g[perm])["top1"] == base["top1"]


def test_bin_builders():
    assert depth_bin(0.0) == 0
    assert depth_bin(3.99) == 7
    assert depth_bin(4.0) == 7
    assert area_bin(0.01) == 0
    assert area_bin(0.5) == 4
    assert position_bin(0.0, 0.0) == 0
    assert position_bin(0.99, 0.99) == 15
    assert slide_bin(0.0) == 0 and slide_bin(359.0) == 7
