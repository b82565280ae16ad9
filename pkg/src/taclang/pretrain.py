"""Tri-modal contrastive + auxiliary regression pretraining.

The pairwise contrastive term is implemented exactly as printed, with a
literal -1/2 prefactor over the batch sum; ``mean_reduction`` switches to a
1/N average instead. The alignment objective sums the six directed terms
with per-pair weights, and the total loss adds the masked MSE regression
term on the tactile embedding.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dataio
from .autodiff import Tensor
from .core import normal_map, normalize
from .language import L_MAX, TEMPLATES, Vocabulary, build_vocabulary
from .nn import Adam, Model, cosine_lr_scale, save_model


@dataclass(frozen=True)
class LossWeights:
    tl: float = 1.0
    ti: float = 1.0
    li: float = 1.0

    def __post_init__(self):
        if min(self.tl, self.ti, self.li) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.tl == self.ti == self.li == 0:
            raise ValueError("at least one alignment weight must be positive")


def _check_unit_rows(f: Tensor, name: str):
    norms = np.linalg.norm(f.data, axis=1)
    if np.abs(norms - 1.0).max() > 1e-4:
        raise ValueError(f"{name} rows must be unit-norm (max deviation {np.abs(norms - 1.0).max():.2e})")


def info_nce(f_a: Tensor, f_b: Tensor, tau, mean_reduction: bool = False) -> Tensor:
    """Directed contrastive loss L_{A->B} with in-batch negatives.

    -(1/2) * sum_i log softmax_j(f_Ai . f_Bj / tau)[i], stabilized by
    subtracting the detached row max. ``mean_reduction`` divides by N instead
    of 2.
    """
    if not isinstance(tau, Tensor):
        tau = Tensor(np.asarray([float(tau)]))
    if f_a.ndim != 2 or f_b.ndim != 2 or f_a.shape != f_b.shape:
        raise ValueError(f"embedding batches must match, got {f_a.shape} vs {f_b.shape}")
    if float(tau.data.reshape(-1)[0]) <= 0:
        raise ValueError("temperature must be positive")
    _check_unit_rows(f_a, "f_a")
    _check_unit_rows(f_b, "f_b")
    n = f_a.shape[0]
    logits = ad.div(ad.matmul(f_a, ad.transpose(f_b)), tau)
    shifted = logits - ad.detach(ad.max_(logits, axis=1, keepdims=True))
    lse = ad.log(ad.sum_(ad.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - lse
    pos = ad.sum_(log_probs * Tensor(np.eye(n)))
    scale = 1.0 / n if mean_reduction else 0.5
    return pos * (-scale)


def alignment_loss(
    f_t: Tensor,
    f_l: Tensor,
    f_i: Tensor,
    tau,
    weights: LossWeights = LossWeights(),
    mean_reduction: bool = False,
) -> Tensor:
    """Weighted sum of the six directed contrastive terms across modalities."""
    if not (f_t.shape[0] == f_l.shape[0] == f_i.shape[0]):
        raise ValueError("modalities must share the batch size")

    def pair(a, b):
        return info_nce(a, b, tau, mean_reduction) + info_nce(b, a, tau, mean_reduction)

    total = pair(f_t, f_l) * (weights.tl / 2.0)
    total = total + pair(f_t, f_i) * (weights.ti / 2.0)
    total = total + pair(f_l, f_i) * (weights.li / 2.0)
    return total


def regression_loss(pred: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked MSE: per-sample mean over valid channels, averaged over batch.

    Samples with no valid channel contribute zero.
    """
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != targets.shape or pred.shape != mask.shape:
        raise ValueError("prediction/target/mask shapes must match")
    diff = pred - Tensor(targets)
    sq = diff * diff * Tensor(mask)
    denom = np.maximum(mask.sum(axis=1), 1.0)
    per_sample = ad.sum_(sq, axis=1) / Tensor(denom)
    return ad.mean(per_sample)


def total_loss(align: Tensor, regress: Tensor) -> Tensor:
    return align + regress


def is_validation_id(sample_id: str) -> bool:
    """Deterministic 9:1 split keyed on the hashed sample id."""
    digest = hashlib.sha256(sample_id.encode()).digest()
    return int.from_bytes(digest[:8], "big") % 10 == 0


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    mean_reduction: bool = False
    template_style: str = "tokenized"
    val_batch: int = 32


def load_training_arrays(corpus_dir, vocab: Vocabulary, style: str = "tokenized") -> dict:
    """Corpus -> dense arrays: features, image maps, targets, token ids (x10)."""
    entries = dataio.load_corpus(corpus_dir)
    n = len(entries)
    feats = np.zeros((n, 529, 6))
    maps = np.zeros((n, 23, 23))
    targets = np.zeros((n, 8))
    masks = np.zeros((n, 8))
    token_ids = np.zeros((n, len(TEMPLATES), L_MAX), dtype=np.int64)
    ids = []
    labels = []
    from .language import describe_tokens

    for k, (sample_id, frame, label) in enumerate(entries):
        ids.append(sample_id)
        labels.append(label)
        state = dataio.state_from_dict(label)
        sample = normalize(frame, state)
        feats[k] = sample.points
        maps[k] = normal_map(frame)
        targets[k] = sample.targets
        masks[k] = sample.target_mask
        for v in range(len(TEMPLATES)):
            _, seq = describe_tokens(state, vocab, style, v)
            token_ids[k, v] = seq.ids
    return {
        "ids": ids, "labels": labels, "features": feats, "maps": maps,
        "targets": targets, "masks": masks, "token_ids": token_ids,
    }


def _embed_eval(model: Model, feats, maps, token_ids, chunk: int = 256):
    f_t, f_i, f_l = [], [], []
    for lo in range(0, len(feats), chunk):
        hi = lo + chunk
        f_t.append(model.encode_tactile(feats[lo:hi]).data)
        f_i.append(model.encode_image(maps[lo:hi]).data)
        f_l.append(model.encode_text(token_ids[lo:hi]).data)
    return np.concatenate(f_t), np.concatenate(f_l), np.concatenate(f_i)


def in_batch_top1(f_l: np.ndarray, f_t: np.ndarray, batch: int) -> float:
    """Text->tactile top-1 within consecutive batches of the given size."""
    n = (len(f_l) // batch) * batch
    if n == 0:
        n, batch = len(f_l), len(f_l)
    hits = 0
    for lo in range(0, n, batch):
        sims = f_l[lo : lo + batch] @ f_t[lo : lo + batch].T
        hits += int((sims.argmax(axis=1) == np.arange(sims.shape[0])).sum())
    return hits / n


def train(corpus_dir, out_ckpt, metrics_path, config: TrainConfig | None = None) -> dict:
    """Full pretraining run; deterministic given (corpus, config.seed).

    Writes per-epoch JSONL metrics and the checkpoint of the epoch with the
    best validation in-batch retrieval.
    """
    config = config or TrainConfig()
    vocab = build_vocabulary()
    data = load_training_arrays(corpus_dir, vocab, config.template_style)
    n = len(data["ids"])
    if n < 200:
        raise ValueError(f"corpus too small for pretraining: {n} < 200 samples")

    val_sel = np.array([is_validation_id(s) for s in data["ids"]])
    train_idx = np.flatnonzero(~val_sel)
    val_idx = np.flatnonzero(val_sel)

    model = Model(vocab, seed=config.seed)
    base_snapshot = model.base_table.data.copy()
    numeric_snapshot = model.numeric_table.data.copy()
    opt = Adam(model.trainable(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7261696E]))

    n_batches = len(train_idx) // config.batch_size
    if n_batches == 0:
        raise ValueError("not enough training samples for one batch")
    total_steps = config.epochs * n_batches
    step = 0
    metrics_rows = []
    best = {"top1": -1.0, "epoch": -1, "state": None}

    for epoch in range(config.epochs):
        perm = rng.permutation(train_idx)
        variants = rng.integers(0, len(TEMPLATES), size=len(perm))
        epoch_align, epoch_reg = [], []
        for b in range(n_batches):
            sel = perm[b * config.batch_size : (b + 1) * config.batch_size]
            var = variants[b * config.batch_size : (b + 1) * config.batch_size]
            ids_batch = data["token_ids"][sel, var]
            f_t = model.encode_tactile(data["features"][sel])
            f_l = model.encode_text(ids_batch)
            f_i = model.encode_image(data["maps"][sel])
            tau = model.tau()
            align = alignment_loss(f_t, f_l, f_i, tau, config.weights, config.mean_reduction)
            reg = regression_loss(model.regress(f_t), data["targets"][sel], data["masks"][sel])
            loss = total_loss(align, reg)
            opt.zero_grad()
            loss.backward()
            opt.step(cosine_lr_scale(step, total_steps))
            model.clamp_tau()
            step += 1
            epoch_align.append(float(align.data))
            epoch_reg.append(float(reg.data))

        vf_t, vf_l, vf_i = _embed_eval(
            model, data["features"][val_idx], data["maps"][val_idx],
            data["token_ids"][val_idx, 0],
        )
        top1 = in_batch_top1(vf_l, vf_t, config.val_batch)
        val_align = alignment_loss(
            Tensor(vf_t), Tensor(vf_l), Tensor(vf_i), model.tau(),
            config.weights, config.mean_reduction,
        )
        val_reg = regression_loss(
            model.regress(Tensor(vf_t)), data["targets"][val_idx], data["masks"][val_idx]
        )
        row = {
            "epoch": epoch,
            "align_loss": float(np.mean(epoch_align)),
            "regression_loss": float(np.mean(epoch_reg)),
            "tau": float(np.exp(model.log_tau.data[0])),
            "val_top1_text_to_tactile": top1,
            "val_align_loss": float(val_align.data),
            "val_regression_loss": float(val_reg.data),
            "val_total_loss": float(val_align.data) + float(val_reg.data),
        }
        metrics_rows.append(row)
        if top1 > best["top1"]:
            best = {"top1": top1, "epoch": epoch,
                    "state": {k: v.copy() for k, v in model.state_arrays().items()}}

    if not np.array_equal(base_snapshot, model.base_table.data):
        raise AssertionError("frozen base embedding rows changed during training")

    model.load_state(best["state"])
    save_model(out_ckpt, model)
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        with Path(metrics_path).open("w") as fh:
            for row in metrics_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return {
        "best_epoch": best["epoch"],
        "best_val_top1": best["top1"],
        "epochs": config.epochs,
        "n_train": int(len(train_idx)),
        "n_val": int(len(val_idx)),
        "numeric_rows_changed": bool(not np.array_equal(numeric_snapshot, model.numeric_table.data)),
        "metrics": metrics_rows,
    }
