"""Frozen-encoder benchmarks: linear probes, attribute regression, retrieval.

Probes are deterministic: multinomial logistic regression by full-batch
gradient descent with a Lipschitz-bound step size, and closed-form ridge
regression. Angular attributes are scored in angle space after atan2
recovery, with wrapped errors scaled by the half-period.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import SHAPES, TEXTURES, TWISTS, wrap_angle_deg
from .language import build_vocabulary
from .nn import Adam, load_model
from .pretrain import is_validation_id, load_training_arrays

RIDGE_LAMBDA = 1e-3
PROBE_TOL = 1e-6
PROBE_MAX_ITERS = 100000

DEPTH_BINS = 8          # 0.5 mm bins over [0, 4]
AREA_BIN_EDGES = (0.02, 0.05, 0.1, 0.2)
POSITION_GRID = 4       # 4x4 zones over [0, 1]^2
SLIDE_BINS = 8          # 45 degree sectors


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def linear_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    n_classes: int,
) -> float:
    """Softmax-regression accuracy on the validation split.

    Full-batch first-order optimization from zero weights: Nesterov-
    accelerated gradient descent with a 1/L step (L bounds the softmax
    cross-entropy curvature), run until the gradient max-norm falls below
    tolerance. Deterministic.
    """
    if len(np.unique(train_y)) < 2:
        raise ValueError("linear probe needs at least two classes present")
    xb = np.hstack([train_x, np.ones((len(train_x), 1))])
    yh = _one_hot(train_y, n_classes)
    lip = 0.5 * np.linalg.norm(xb, 2) ** 2 / len(xb)
    lr = 1.0 / max(lip, 1e-12)
    w = np.zeros((xb.shape[1], n_classes))
    w_prev = w.copy()
    t_prev = 1.0
    for _ in range(PROBE_MAX_ITERS):
        t_cur = (1.0 + math.sqrt(1.0 + 4.0 * t_prev**2)) / 2.0
        z = w + ((t_prev - 1.0) / t_cur) * (w - w_prev)
        logits = xb @ z
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        g = xb.T @ (p - yh) / len(xb)
        w_prev, w, t_prev = w, z - lr * g, t_cur
        if np.abs(g).max() < PROBE_TOL:
            break
    vb = np.hstack([val_x, np.ones((len(val_x), 1))])
    pred = (vb @ w).argmax(axis=1)
    return float((pred == val_y).mean())


def mlp_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    n_classes: int,
    seed: int = 0,
    epochs: int = 200,
) -> float:
    """Small MLP head (64 hidden) trained with the in-package optimizer."""
    if len(np.unique(train_y)) < 2:
        raise ValueError("mlp probe needs at least two classes present")
    rng = np.random.default_rng(seed)
    w1 = ad.parameter((train_x.shape[1], 64), rng)
    b1 = ad.parameter((64,), rng, scale=0.01)
    w2 = ad.parameter((64, n_classes), rng)
    b2 = ad.parameter((n_classes,), rng, scale=0.01)
    params = [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)]
    opt = Adam(params, lr=1e-2)
    x = Tensor(train_x)
    yh = Tensor(_one_hot(train_y, n_classes))
    for _ in range(epochs):
        h = ad.relu(ad.matmul(x, w1) + b1)
        logits = ad.matmul(h, w2) + b2
        shifted = logits - ad.detach(ad.max_(logits, axis=1, keepdims=True))
        lse = ad.log(ad.sum_(ad.exp(shifted), axis=1, keepdims=True))
        loss = ad.mean(ad.sum_((lse - shifted) * yh, axis=1))
        opt.zero_grad()
        loss.backward()
        opt.step()
    h = np.maximum(val_x @ w1.data + b1.data, 0.0)
    pred = (h @ w2.data + b2.data).argmax(axis=1)
    return float((pred == val_y).mean())


def ridge_fit(train_x: np.ndarray, train_y: np.ndarray) -> np.ndarray:
    """Closed-form ridge weights (bias unpenalized); returns (d+1,) vector."""
    xb = np.hstack([train_x, np.ones((len(train_x), 1))])
    reg = RIDGE_LAMBDA * np.eye(xb.shape[1])
    reg[-1, -1] = 0.0
    return np.linalg.solve(xb.T @ xb + reg, xb.T @ train_y)


def ridge_predict(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((len(x), 1))]) @ w


def r_squared(residuals: np.ndarray, deviations: np.ndarray) -> float:
    ss_res = float((residuals**2).sum())
    ss_tot = float((deviations**2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


def _scalar_metrics(pred: np.ndarray, truth: np.ndarray) -> dict:
    res = pred - truth
    return {
        "mae": float(np.abs(res).mean()),
        "rmse": float(np.sqrt((res**2).mean())),
        "r2": r_squared(res, truth - truth.mean()),
    }


def _angle_metrics(pred_deg: np.ndarray, truth_deg: np.ndarray, period: float) -> dict:
    """Wrapped angular errors scaled by the half-period into [0, 1]."""
    half = period / 2.0
    res = np.array([wrap_angle_deg(p - t, period) for p, t in zip(pred_deg, truth_deg)]) / half
    mean_angle = math.degrees(
        math.atan2(
            np.sin(np.radians(truth_deg * (360.0 / period))).mean(),
            np.cos(np.radians(truth_deg * (360.0 / period))).mean(),
        )
    ) * (period / 360.0)
    dev = np.array([wrap_angle_deg(t - mean_angle, period) for t in truth_deg]) / half
    return {
        "mae": float(np.abs(res).mean()),
        "rmse": float(np.sqrt((res**2).mean())),
        "r2": r_squared(res, dev),
    }


def regress_probe(
    train_x: np.ndarray, train_t: np.ndarray, train_m: np.ndarray,
    val_x: np.ndarray, val_t: np.ndarray, val_m: np.ndarray,
) -> dict:
    """Ridge regression per attribute on normalized targets.

    Angular attributes (principal axis, shear) are fit on their sin/cos
    channels and evaluated in angle space. Attributes with no valid samples
    are reported absent and excluded from the macro average.
    """
    out: dict[str, dict] = {}

    def subset(mask_col):
        return train_m[:, mask_col] > 0, val_m[:, mask_col] > 0

    tr, va = subset(0)
    w = ridge_fit(train_x[tr], train_t[tr, 0])
    out["depth"] = _scalar_metrics(ridge_predict(w, val_x[va]), val_t[va, 0])

    tr, va = subset(1)
    if tr.sum() >= 2 and va.sum() >= 2:
        preds, res, dev = [], [], []
        for c in (1, 2):
            w = ridge_fit(train_x[tr], train_t[tr, c])
            p = ridge_predict(w, val_x[va])
            preds.append(p)
            res.append(p - val_t[va, c])
            dev.append(val_t[va, c] - val_t[va, c].mean())
        res, dev = np.concatenate(res), np.concatenate(dev)
        out["position"] = {
            "mae": float(np.abs(res).mean()),
            "rmse": float(np.sqrt((res**2).mean())),
            "r2": r_squared(res, dev),
        }

    tr, va = subset(3)
    w = ridge_fit(train_x[tr], train_t[tr, 3])
    out["area"] = _scalar_metrics(ridge_predict(w, val_x[va]), val_t[va, 3])

    for name, (cs, cc), period in (("principal_axis", (4, 5), 180.0), ("shear", (6, 7), 360.0)):
        tr = train_m[:, cs] > 0
        va = val_m[:, cs] > 0
        if tr.sum() < 2 or va.sum() < 2:
            continue
        ws = ridge_fit(train_x[tr], train_t[tr, cs])
        wc = ridge_fit(train_x[tr], train_t[tr, cc])
        ps = ridge_predict(ws, val_x[va])
        pc = ridge_predict(wc, val_x[va])
        # targets encode the doubled angle for the principal axis
        enc_period = 360.0
        pred_enc = np.degrees(np.arctan2(ps, pc)) % enc_period
        true_enc = np.degrees(np.arctan2(val_t[va, cs], val_t[va, cc])) % enc_period
        factor = period / enc_period
        out[name] = _angle_metrics(pred_enc * factor, true_enc * factor, period)

    macro = {
        k: float(np.mean([m[k] for m in out.values()])) for k in ("mae", "rmse", "r2")
    }
    out["macro"] = macro
    return out


def retrieval(f_t: np.ndarray, f_l: np.ndarray, ks=(1, 5)) -> dict:
    """Tactile->language ranking by cosine similarity over the whole pool."""
    if f_t.shape != f_l.shape:
        raise ValueError("retrieval sets must be index-aligned")
    sims = f_t @ f_l.T
    order = np.argsort(-sims, axis=1, kind="stable")
    ranks = (order == np.arange(len(f_t))[:, None]).argmax(axis=1)
    return {f"top{k}": float((ranks < k).mean()) for k in ks} | {"pool": int(len(f_t))}


# classification task label builders ---------------------------------------

def depth_bin(depth_mm: float, gel: float = 4.0) -> int:
    return min(int(depth_mm / (gel / DEPTH_BINS)), DEPTH_BINS - 1)


def area_bin(area: float) -> int:
    return int(np.searchsorted(AREA_BIN_EDGES, area, side="right"))


def position_bin(u: float, v: float) -> int:
    return min(int(u * POSITION_GRID), POSITION_GRID - 1) * POSITION_GRID + min(
        int(v * POSITION_GRID), POSITION_GRID - 1
    )


def slide_bin(deg: float) -> int:
    return int(deg // (360.0 / SLIDE_BINS)) % SLIDE_BINS


def classification_tasks(labels: list[dict]) -> dict[str, tuple[np.ndarray, np.ndarray, int]]:
    """(selector, class labels, n_classes) per task from ground-truth rows."""
    n = len(labels)
    tasks = {}

    def build(name, valid_fn, label_fn, k):
        sel = np.array([valid_fn(r) for r in labels])
        ys = np.array([label_fn(r) if s else 0 for r, s in zip(labels, sel)], dtype=np.int64)
        tasks[name] = (sel, ys, k)

    build("shape", lambda r: r.get("shape") is not None,
          lambda r: SHAPES.index(r["shape"]), len(SHAPES))
    build("texture", lambda r: r.get("texture") is not None,
          lambda r: TEXTURES.index(r["texture"]), len(TEXTURES))
    build("depth_bin", lambda r: True, lambda r: depth_bin(r["depth_mm"]), DEPTH_BINS)
    build("area_bin", lambda r: True, lambda r: area_bin(r["area_fraction"]),
          len(AREA_BIN_EDGES) + 1)
    build("position_bin", lambda r: r.get("centroid") is not None,
          lambda r: position_bin(*r["centroid"]), POSITION_GRID**2)
    build("slide_bin", lambda r: r.get("slide_deg") is not None,
          lambda r: slide_bin(r["slide_deg"]), SLIDE_BINS)
    build("twist", lambda r: r.get("twist") is not None,
          lambda r: TWISTS.index(r["twist"]), len(TWISTS))
    return tasks


def evaluate(ckpt_path, corpus_dir, probe: str = "linear", report_path=None) -> dict:
    """Full frozen-encoder benchmark over a corpus; returns the report dict."""
    if probe not in ("linear", "mlp"):
        raise ValueError(f"unknown probe {probe!r}")
    vocab = build_vocabulary()
    model = load_model(ckpt_path, vocab)
    data = load_training_arrays(corpus_dir, vocab)
    val_sel = np.array([is_validation_id(s) for s in data["ids"]])
    tr_idx, va_idx = np.flatnonzero(~val_sel), np.flatnonzero(val_sel)

    f_t = np.concatenate([
        model.encode_tactile(data["features"][lo : lo + 256]).data
        for lo in range(0, len(data["ids"]), 256)
    ])
    f_l = np.concatenate([
        model.encode_text(data["token_ids"][lo : lo + 256, 0]).data
        for lo in range(0, len(data["ids"]), 256)
    ])

    probe_fn = linear_probe if probe == "linear" else mlp_probe
    classification = {}
    for name, (sel, ys, k) in classification_tasks(data["labels"]).items():
        tr = np.intersect1d(tr_idx, np.flatnonzero(sel))
        va = np.intersect1d(va_idx, np.flatnonzero(sel))
        if len(tr) == 0 or len(va) == 0 or len(np.unique(ys[tr])) < 2:
            continue
        classification[name] = probe_fn(f_t[tr], ys[tr], f_t[va], ys[va], k)

    regression = regress_probe(
        f_t[tr_idx], data["targets"][tr_idx], data["masks"][tr_idx],
        f_t[va_idx], data["targets"][va_idx], data["masks"][va_idx],
    )
    report = {
        "version": 1,
        "probe": probe,
        "n_train": int(len(tr_idx)),
        "n_val": int(len(va_idx)),
        "classification": classification,
        "regression": regression,
        "retrieval": retrieval(f_t[va_idx], f_l[va_idx]),
    }
    if report_path is not None:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(json.dumps(report, indent=1, sort_keys=True))
    return report
