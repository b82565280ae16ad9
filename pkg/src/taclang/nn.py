"""Encoders for the three modalities, the optimizer, and checkpoint IO.

All parameters are float64 Tensors from the in-package autodiff engine. The
text embedding table is split into a frozen base block (word tokens, fixed at
initialization) and a learnable numeric block, concatenated at lookup time so
the frozen rows structurally receive no gradient.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import GRID_SIDE, N_MARKERS, N_TARGET_CHANNELS
from .language import L_MAX, Vocabulary

EMBED_DIM = 64
POINT_HIDDEN = (64, 128)
HEAD_HIDDEN = 128
IMAGE_HIDDEN = 256
TAU_INIT = 0.07
LOG_TAU_MIN, LOG_TAU_MAX = math.log(1e-3), math.log(10.0)

CKPT_MAGIC = b"FGTC"
CKPT_VERSION = 1


def _linear(rng, fan_in: int, fan_out: int, prefix: str, params: dict) -> tuple[Tensor, Tensor]:
    w = ad.parameter((fan_in, fan_out), rng)
    # Small nonzero bias keeps degenerate inputs (rest frames, zero maps)
    # away from the unnormalizable zero vector.
    b = ad.parameter((fan_out,), rng, scale=0.01)
    params[f"{prefix}.w"] = w
    params[f"{prefix}.b"] = b
    return w, b


def _numeric_token_init(vocab, rng) -> np.ndarray:
    """Smooth per-attribute manifolds for the numeric token embeddings.

    Fine-grained bins (1-degree angles) occur only a handful of times in a
    desk-scale corpus; initializing each attribute family on a ramp (scalars)
    or a circle in a random 2-plane (angles, period-aware: the principal axis
    uses the doubled angle) gives neighbouring bins similar embeddings from
    step 0, the numeric-aware structure a pretrained vocabulary would carry.
    """
    import re

    n_base = vocab.n_base
    rows = np.empty((len(vocab) - n_base, EMBED_DIM))
    basis: dict[str, np.ndarray] = {}

    def unit(key):
        if key not in basis:
            v = rng.normal(0.0, 1.0, EMBED_DIM)
            basis[key] = v / np.linalg.norm(v)
        return basis[key]

    pat = re.compile(r"^<(depth|area|principal|slide|posx|posy)_([0-9.]+)>$")
    for i, token in enumerate(vocab.tokens[n_base:]):
        m = pat.match(token)
        noise = rng.normal(0.0, 0.04, EMBED_DIM)
        if m is None:  # twist tokens: plain random rows at base scale
            rows[i] = rng.normal(0.0, 1.0 / math.sqrt(EMBED_DIM), EMBED_DIM)
        else:
            family, raw = m.group(1), float(m.group(2))
            if family in ("principal", "slide"):
                theta = math.radians(raw * (2.0 if family == "principal" else 1.0))
                direction = math.cos(theta) * unit(family + ".u") + math.sin(theta) * unit(family + ".v")
            else:
                hi = {"depth": 4.0, "area": 1.0, "posx": 19.0, "posy": 19.0}[family]
                direction = (2.0 * raw / hi - 1.0) * unit(family + ".v")
            rows[i] = 0.75 * unit(family + ".c") + 0.6 * direction + noise
    return rows


class Model:
    """Tri-modal encoder stack plus temperature and the regression head."""

    def __init__(self, vocab: Vocabulary, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.vocab_hash = vocab.hash()
        self.params: dict[str, Tensor] = {}
        p = self.params

        self.t_w1, self.t_b1 = _linear(rng, 6, POINT_HIDDEN[0], "tactile.point1", p)
        self.t_w2, self.t_b2 = _linear(rng, POINT_HIDDEN[0], POINT_HIDDEN[1], "tactile.point2", p)
        self.t_w3, self.t_b3 = _linear(rng, 2 * POINT_HIDDEN[1], HEAD_HIDDEN, "tactile.head1", p)
        self.t_w4, self.t_b4 = _linear(rng, HEAD_HIDDEN, EMBED_DIM, "tactile.head2", p)
        # Large final bias pins the pre-normalization magnitude so the unit
        # sphere behaves locally affinely; scalar attributes stay linearly
        # readable after L2 normalization.
        self.t_b4.data = rng.normal(0.0, 0.5, size=EMBED_DIM)

        n_base = vocab.n_base
        scale = 1.0 / math.sqrt(EMBED_DIM)
        # Frozen stand-in for a pretrained word vocabulary.
        self.base_table = Tensor(rng.normal(0.0, scale, size=(n_base, EMBED_DIM)))
        self.numeric_table = Tensor(_numeric_token_init(vocab, rng), requires_grad=True)
        self.pos_table = ad.parameter((L_MAX, EMBED_DIM), rng, scale=0.1 * scale)
        p["text.numeric_table"] = self.numeric_table
        p["text.pos_table"] = self.pos_table
        self.l_wp, self.l_bp = _linear(rng, EMBED_DIM, EMBED_DIM, "text.proj", p)
        # Constant pre-normalization fallback for all-pad sequences.
        self.empty_text = Tensor(rng.normal(0.0, 1.0, size=(EMBED_DIM,)))

        self.i_w1, self.i_b1 = _linear(rng, N_MARKERS, IMAGE_HIDDEN, "image.mlp1", p)
        self.i_w2, self.i_b2 = _linear(rng, IMAGE_HIDDEN, EMBED_DIM, "image.mlp2", p)

        self.log_tau = Tensor(np.array([math.log(TAU_INIT)]), requires_grad=True)
        p["log_tau"] = self.log_tau

        self.r_w1, self.r_b1 = _linear(rng, EMBED_DIM, EMBED_DIM, "regress.mlp1", p)
        self.r_w2, self.r_b2 = _linear(rng, EMBED_DIM, N_TARGET_CHANNELS, "regress.mlp2", p)

        self.frozen: dict[str, Tensor] = {
            "text.base_table": self.base_table,
            "text.empty": self.empty_text,
        }

    # forward passes -------------------------------------------------------
    def encode_tactile(self, points: np.ndarray) -> Tensor:
        """(B, 529, 6) point features -> unit-norm (B, 64) embeddings.

        Permutation invariance over points comes from the max/mean pooling.
        """
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 2:
            points = points[None]
        if points.shape[1:] != (N_MARKERS, 6):
            raise ValueError(f"expected (B, {N_MARKERS}, 6) points, got {points.shape}")
        b = points.shape[0]
        x = Tensor(points.reshape(b * N_MARKERS, 6))
        h = ad.relu(ad.matmul(x, self.t_w1) + self.t_b1)
        h = ad.relu(ad.matmul(h, self.t_w2) + self.t_b2)
        h = ad.reshape(h, (b, N_MARKERS, POINT_HIDDEN[1]))
        pooled = ad.concat([ad.max_(h, axis=1), ad.mean(h, axis=1)], axis=1)
        h = ad.relu(ad.matmul(pooled, self.t_w3) + self.t_b3)
        h = ad.matmul(h, self.t_w4) + self.t_b4
        return ad.l2_normalize(h, axis=1)

    def encode_text(self, ids: np.ndarray) -> Tensor:
        """(B, L_MAX) token ids -> unit-norm (B, 64) embeddings.

        Gradient w.r.t. frozen base rows is identically zero (separate
        non-trainable block). All-pad sequences fall back to a fixed constant
        pre-normalization vector.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] != L_MAX:
            raise ValueError(f"expected (B, {L_MAX}) ids, got {ids.shape}")
        if ids.min() < 0 or ids.max() >= len(self.vocab):
            raise IndexError("token id out of vocabulary range")
        b = ids.shape[0]
        table = ad.concat([self.base_table, self.numeric_table], axis=0)
        emb = ad.reshape(ad.gather(table, ids.reshape(-1)), (b, L_MAX, EMBED_DIM))
        emb = emb + ad.reshape(self.pos_table, (1, L_MAX, EMBED_DIM))
        pad_mask = (ids != self.vocab.pad_id).astype(np.float64)
        counts = pad_mask.sum(axis=1)
        emb = emb * Tensor(pad_mask[:, :, None])
        pooled = ad.sum_(emb, axis=1) / Tensor(np.maximum(counts, 1.0)[:, None])
        empty = Tensor((counts == 0).astype(np.float64)[:, None])
        pooled = pooled + empty * ad.reshape(self.empty_text, (1, EMBED_DIM))
        h = ad.matmul(pooled, self.l_wp) + self.l_bp
        return ad.l2_normalize(h, axis=1)

    def encode_image(self, maps: np.ndarray) -> Tensor:
        """(B, 23, 23) normal-displacement maps -> unit-norm (B, 64)."""
        maps = np.asarray(maps, dtype=np.float64)
        if maps.ndim == 2:
            maps = maps[None]
        if maps.shape[1:] != (GRID_SIDE, GRID_SIDE):
            raise ValueError(f"expected (B, {GRID_SIDE}, {GRID_SIDE}) maps, got {maps.shape}")
        x = Tensor(maps.reshape(maps.shape[0], N_MARKERS))
        h = ad.relu(ad.matmul(x, self.i_w1) + self.i_b1)
        h = ad.matmul(h, self.i_w2) + self.i_b2
        return ad.l2_normalize(h, axis=1)

    def regress(self, f_t: Tensor) -> Tensor:
        """Physical-attribute head on (post-norm) tactile embeddings."""
        h = ad.relu(ad.matmul(f_t, self.r_w1) + self.r_b1)
        return ad.matmul(h, self.r_w2) + self.r_b2

    def tau(self) -> Tensor:
        return ad.exp(self.log_tau)

    def clamp_tau(self):
        np.clip(self.log_tau.data, LOG_TAU_MIN, LOG_TAU_MAX, out=self.log_tau.data)

    # state ----------------------------------------------------------------
    def trainable(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.params.items()}
        state.update({name: t.data for name, t in self.frozen.items()})
        return state

    def load_state(self, state: dict[str, np.ndarray]):
        own = dict(self.params)
        own.update(self.frozen)
        missing = set(own) ^ set(state)
        if missing:
            raise ValueError(f"checkpoint parameter set mismatch: {sorted(missing)}")
        for name, tensor in own.items():
            if tensor.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            tensor.data = state[name].astype(np.float64).copy()


class Adam:
    """Moment-based first-order optimizer, fixed update order, float64.

    ``weight_decay`` is decoupled and applied to weight matrices only
    (parameter names ending in ``.w``), never to biases or embedding tables.
    """

    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.items = sorted(named_params, key=lambda kv: kv[0])
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.items}
        self.v = {name: np.zeros_like(p.data) for name, p in self.items}

    def step(self, lr_scale: float = 1.0):
        self.t += 1
        for name, p in self.items:
            if p.grad is None:
                continue
            if self.weight_decay > 0.0 and name.endswith(".w"):
                p.data = p.data * (1.0 - self.weight_decay * lr_scale)
            g = p.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / (1 - self.b1 ** self.t)
            vhat = self.v[name] / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * lr_scale * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for _, p in self.items:
            p.grad = None


def cosine_lr_scale(step: int, total_steps: int) -> float:
    if total_steps <= 1:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


# checkpoint format ---------------------------------------------------------

def save_checkpoint(path: str | Path, state: dict[str, np.ndarray], vocab_hash: str) -> None:
    """Binary checkpoint: header, named shape table, raw float64 buffers."""
    names = sorted(state)
    hash_bytes = bytes.fromhex(vocab_hash)
    buf = bytearray(CKPT_MAGIC)
    buf += struct.pack("<II", CKPT_VERSION, len(names))
    buf += struct.pack("<H", len(hash_bytes)) + hash_bytes
    for name in names:
        arr = np.ascontiguousarray(state[name], dtype=np.float64)
        nb = name.encode()
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    for name in names:
        buf += np.ascontiguousarray(state[name], dtype=np.float64).tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path, expect_vocab_hash: str | None = None) -> tuple[dict[str, np.ndarray], str]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 4
    version, count = struct.unpack_from("<II", raw, off)
    off += 8
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<H", raw, off)
    off += 2
    vocab_hash = raw[off : off + hlen].hex()
    off += hlen
    if expect_vocab_hash is not None and vocab_hash != expect_vocab_hash:
        raise ValueError("checkpoint was written against a different vocabulary")
    shapes = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        shapes.append((name, shape))
    state = {}
    for name, shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape)
        off += size * 8
        state[name] = arr.copy()
    return state, vocab_hash


def save_model(path: str | Path, model: Model) -> None:
    save_checkpoint(path, model.state_arrays(), model.vocab_hash)


def load_model(path: str | Path, vocab: Vocabulary, seed: int = 0) -> Model:
    state, _ = load_checkpoint(path, expect_vocab_hash=vocab.hash())
    model = Model(vocab, seed=seed)
    model.load_state(state)
    return model
