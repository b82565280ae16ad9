"""Conditional flow matching action head and a scripted contact-following task.

A small MLP learns the time-dependent velocity field transporting standard
Gaussian noise to expert actions along linear interpolation paths; sampling
integrates the field with a fixed-step Euler scheme. The toy environment
presses a virtual sensor onto a raised straight ridge: the policy must hold a
target contact depth while re-centering the ridge laterally, conditioned only
on the frozen tactile embedding and a normalized target-depth goal.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import DEFAULT_EXTENT, MarkerFrame, point_features, rest_grid
from .language import build_vocabulary
from .nn import Adam, Model, cosine_lr_scale, load_checkpoint, save_checkpoint
from .synthgen import ContactScript, Indenter, indent, splitmix64

FLOW_HIDDEN = 128


class FlowNet:
    """MLP velocity field: (action, time, conditioning) -> velocity."""

    def __init__(self, action_dim: int, cond_dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.action_dim = action_dim
        self.cond_dim = cond_dim
        in_dim = action_dim + 1 + cond_dim
        self.params: dict[str, Tensor] = {}
        for name, (fi, fo) in {
            "flow.l1": (in_dim, FLOW_HIDDEN),
            "flow.l2": (FLOW_HIDDEN, FLOW_HIDDEN),
            "flow.l3": (FLOW_HIDDEN, action_dim),
        }.items():
            self.params[f"{name}.w"] = ad.parameter((fi, fo), rng)
            self.params[f"{name}.b"] = ad.parameter((fo,), rng, scale=0.01)

    def forward(self, x: Tensor, t: Tensor, cond: Tensor | None = None) -> Tensor:
        pieces = [x, t]
        if self.cond_dim:
            pieces.append(cond)
        h = ad.concat(pieces, axis=1)
        p = self.params
        h = ad.relu(ad.matmul(h, p["flow.l1.w"]) + p["flow.l1.b"])
        h = ad.relu(ad.matmul(h, p["flow.l2.w"]) + p["flow.l2.b"])
        return ad.matmul(h, p["flow.l3.w"]) + p["flow.l3.b"]

    def velocity(self, x: np.ndarray, t: np.ndarray, cond: np.ndarray | None = None) -> np.ndarray:
        """Forward pass on plain arrays (no graph), for sampling."""
        h = np.concatenate([x, t] + ([cond] if self.cond_dim else []), axis=1)
        p = self.params
        h = np.maximum(h @ p["flow.l1.w"].data + p["flow.l1.b"].data, 0.0)
        h = np.maximum(h @ p["flow.l2.w"].data + p["flow.l2.b"].data, 0.0)
        return h @ p["flow.l3.w"].data + p["flow.l3.b"].data

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, t in self.params.items():
            t.data = state[k].astype(np.float64).copy()


def flow_matching_loss(
    net: FlowNet, x0: np.ndarray, x1: np.ndarray, t: np.ndarray, cond: np.ndarray | None = None
) -> Tensor:
    """Mean squared error between the field at x_t and the target x1 - x0.

    x_t = (1 - t) x0 + t x1 on the linear path.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if x0.shape != x1.shape or len(t) != len(x0):
        raise ValueError("noise/action/time batches must align")
    xt = (1.0 - t) * x0 + t * x1
    pred = net.forward(Tensor(xt), Tensor(t), Tensor(cond) if cond is not None else None)
    diff = pred - Tensor(x1 - x0)
    return ad.mean(ad.sum_(diff * diff, axis=1))


def flow_sample(
    net: FlowNet, x0: np.ndarray, steps: int, cond: np.ndarray | None = None
) -> np.ndarray:
    """Euler integration of the learned field from the given noise draw."""
    if steps < 1:
        raise ValueError("sampler needs at least one step")
    x = np.asarray(x0, dtype=np.float64).copy()
    for k in range(steps):
        t = np.full((len(x), 1), k / steps)
        x += net.velocity(x, t, cond) / steps
    return x


# toy contact-following environment -----------------------------------------

@dataclass(frozen=True)
class ToyEnvConfig:
    target_depth_mm: float = 1.0
    episode_len: int = 40
    max_step_mm: float = 0.5
    obs_noise_mm: float = 0.02
    init_lat_mm: float = 3.0
    init_depth_mm: tuple[float, float] = (0.3, 1.5)
    ridge_length_mm: float = 6.0
    ridge_width_mm: float = 1.2
    extent: tuple[float, float, float] = DEFAULT_EXTENT
    success_depth_tol_mm: float = 0.2
    success_lat_tol_mm: float = 1.0

    def goal_vector(self) -> np.ndarray:
        return np.array([2.0 * self.target_depth_mm / self.extent[2] - 1.0])


class ToyEnv:
    """Virtual sensor over a raised ridge; state is (lateral, along, depth)."""

    def __init__(self, cfg: ToyEnvConfig, episode: int, base_seed: int):
        self.cfg = cfg
        self.episode = episode
        self.base_seed = base_seed
        rng = np.random.default_rng(splitmix64(base_seed, episode))
        self.lat = float(rng.uniform(-cfg.init_lat_mm, cfg.init_lat_mm))
        self.along = 0.0
        self.depth = float(rng.uniform(*cfg.init_depth_mm))
        self.step_count = 0

    def observe(self) -> MarkerFrame:
        cfg = self.cfg
        w, h, gel = cfg.extent
        rest = rest_grid(cfg.extent)
        obs_seed = splitmix64(self.base_seed, self.episode * 4096 + self.step_count)
        if self.depth <= 1e-9:
            deformed = rest.copy()
            if cfg.obs_noise_mm > 0:
                rng = np.random.default_rng(obs_seed)
                deformed = deformed + rng.normal(0.0, cfg.obs_noise_mm, rest.shape)
            return MarkerFrame(rest, deformed, cfg.extent)
        u = float(np.clip(0.5 - self.lat / w, 0.16, 0.84))
        indenter = Indenter(
            "edge",
            {"length": cfg.ridge_length_mm, "width": cfg.ridge_width_mm},
            center=(u, 0.5),
            rotation_deg=90.0,
        )
        script = ContactScript(
            "press",
            depth_mm=min(self.depth, gel),
            noise_sigma_mm=cfg.obs_noise_mm,
            seed=obs_seed,
        )
        frame, _ = indent(indenter, script, cfg.extent)
        return frame

    def apply(self, action: np.ndarray):
        cfg = self.cfg
        a = np.clip(np.asarray(action, dtype=np.float64), -cfg.max_step_mm, cfg.max_step_mm)
        self.lat += a[0]
        self.along += a[1]
        self.depth = float(np.clip(self.depth - a[2], 0.0, cfg.extent[2]))
        self.step_count += 1

    def lateral_error(self) -> float:
        return abs(self.lat)

    def depth_error(self) -> float:
        return abs(self.depth - self.cfg.target_depth_mm)


def expert_action(env: ToyEnv, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    """Proportional controller toward (target depth, ridge line)."""
    cfg = env.cfg
    dx = np.clip(-0.6 * env.lat, -cfg.max_step_mm, cfg.max_step_mm)
    dy = 0.2
    dz = np.clip(env.depth - cfg.target_depth_mm, -cfg.max_step_mm, cfg.max_step_mm)
    return np.array([dx, dy, dz]) + rng.normal(0.0, noise, 3)


def rollout(env: ToyEnv, policy_fn) -> dict:
    """Run one episode; policy_fn(frame, step) -> action."""
    cfg = env.cfg
    depth_errs, rows = [], []
    for step in range(cfg.episode_len):
        frame = env.observe()
        action = policy_fn(frame, step)
        rows.append({
            "step": step, "x": env.lat, "y": env.along, "depth": env.depth,
            "dx": float(action[0]), "dy": float(action[1]), "dz": float(action[2]),
        })
        env.apply(action)
        depth_errs.append(env.depth_error())
    tail = float(np.mean(depth_errs[-10:]))
    success = tail <= cfg.success_depth_tol_mm and env.lateral_error() <= cfg.success_lat_tol_mm
    return {
        "success": bool(success),
        "tail_depth_err_mm": tail,
        "final_lat_err_mm": env.lateral_error(),
        "steps": rows,
    }


def _embed_frames(model: Model, frames_feats: np.ndarray, chunk: int = 256) -> np.ndarray:
    return np.concatenate([
        model.encode_tactile(frames_feats[lo : lo + chunk]).data
        for lo in range(0, len(frames_feats), chunk)
    ])


@dataclass
class PolicyTrainConfig:
    episodes: int = 500
    seed: int = 0
    train_steps: int = 4000
    batch_size: int = 256
    lr: float = 1e-3
    stage2: bool = False
    stage2_steps: int = 500
    stage2_lr_scale: float = 0.1
    sample_steps: int = 16
    env: ToyEnvConfig = field(default_factory=ToyEnvConfig)


def collect_expert_dataset(cfg: PolicyTrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """(point features, expert actions) over scripted expert episodes."""
    feats, actions = [], []
    for ep in range(cfg.episodes):
        env = ToyEnv(cfg.env, ep, cfg.seed)
        rng = np.random.default_rng(splitmix64(cfg.seed ^ 0x657870, ep))
        for _ in range(cfg.env.episode_len):
            frame = env.observe()
            a = expert_action(env, rng)
            feats.append(point_features(frame))
            actions.append(a)
            env.apply(a)
    return np.asarray(feats), np.asarray(actions)


def train_policy(encoder_ckpt, out_ckpt, cfg: PolicyTrainConfig | None = None) -> dict:
    """Stage-1 flow matching with a frozen tactile encoder (stage-2 optional).

    Stage 2, when enabled, unfreezes the encoder at a reduced learning rate
    and fine-tunes through the tactile features of a dataset subset.
    """
    cfg = cfg or PolicyTrainConfig()
    vocab = build_vocabulary()
    encoder_state, vocab_hash = load_checkpoint(encoder_ckpt, expect_vocab_hash=vocab.hash())
    model = Model(vocab, seed=cfg.seed)
    model.load_state(encoder_state)
    encoder_snapshot = {k: v.copy() for k, v in model.state_arrays().items()}

    feats, actions = collect_expert_dataset(cfg)
    z = _embed_frames(model, feats)
    goal = np.broadcast_to(cfg.env.goal_vector(), (len(z), 1))
    cond = np.hstack([z, goal])

    net = FlowNet(action_dim=3, cond_dim=cond.shape[1], seed=cfg.seed)
    opt = Adam(sorted(net.params.items()), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x666C6F77]))
    losses = []
    for step in range(cfg.train_steps):
        sel = rng.integers(0, len(cond), size=cfg.batch_size)
        x0 = rng.normal(0.0, 1.0, size=(cfg.batch_size, 3))
        t = rng.uniform(0.0, 1.0, size=cfg.batch_size)
        loss = flow_matching_loss(net, x0, actions[sel], t, cond[sel])
        opt.zero_grad()
        loss.backward()
        opt.step(cosine_lr_scale(step, cfg.train_steps))
        losses.append(float(loss.data))

    for key, arr in model.state_arrays().items():
        if not np.array_equal(arr, encoder_snapshot[key]):
            raise AssertionError(f"stage-1 modified encoder parameter {key}")

    if cfg.stage2:
        subset = min(len(feats), 4000)
        joint = list(net.params.items()) + list(model.trainable())
        opt2 = Adam(sorted(joint), lr=cfg.lr * cfg.stage2_lr_scale)
        for step in range(cfg.stage2_steps):
            sel = rng.integers(0, subset, size=cfg.batch_size)
            x0 = rng.normal(0.0, 1.0, size=(cfg.batch_size, 3))
            t = rng.uniform(0.0, 1.0, size=cfg.batch_size)
            f_t = model.encode_tactile(feats[sel])
            cond_t = ad.concat([f_t, Tensor(goal[sel])], axis=1)
            xt = (1.0 - t[:, None]) * x0 + t[:, None] * actions[sel]
            pred = net.forward(Tensor(xt), Tensor(t[:, None]), cond_t)
            diff = pred - Tensor(actions[sel] - x0)
            loss = ad.mean(ad.sum_(diff * diff, axis=1))
            opt2.zero_grad()
            loss.backward()
            opt2.step(cosine_lr_scale(step, cfg.stage2_steps))

    state = {f"encoder.{k}": v for k, v in model.state_arrays().items()}
    state.update({k: v for k, v in net.state_arrays().items()})
    save_checkpoint(out_ckpt, state, vocab_hash)
    meta = {
        "action_dim": 3,
        "cond_dim": int(cond.shape[1]),
        "sample_steps": cfg.sample_steps,
        "episodes": cfg.episodes,
        "seed": cfg.seed,
        "stage2": cfg.stage2,
        "env": {
            "target_depth_mm": cfg.env.target_depth_mm,
            "episode_len": cfg.env.episode_len,
            "obs_noise_mm": cfg.env.obs_noise_mm,
        },
        "final_loss": losses[-1],
    }
    Path(str(out_ckpt) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return meta


def load_policy(ckpt_path) -> tuple[Model, FlowNet, dict]:
    vocab = build_vocabulary()
    state, _ = load_checkpoint(ckpt_path, expect_vocab_hash=vocab.hash())
    meta = json.loads(Path(str(ckpt_path) + ".meta.json").read_text())
    model = Model(vocab, seed=0)
    model.load_state({k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")})
    net = FlowNet(meta["action_dim"], meta["cond_dim"], seed=0)
    net.load_state({k: v for k, v in state.items() if k.startswith("flow.")})
    return model, net, meta


def make_flow_policy(model: Model, net: FlowNet, env_cfg: ToyEnvConfig,
                     episode: int, base_seed: int, sample_steps: int):
    """Policy closure: per-step noise is seeded from (episode, step)."""
    goal = env_cfg.goal_vector()

    def policy_fn(frame: MarkerFrame, step: int) -> np.ndarray:
        z = model.encode_tactile(point_features(frame)[None]).data
        cond = np.hstack([z, goal[None, :]])
        rng = np.random.default_rng(splitmix64(base_seed ^ 0x706F6C, episode * 4096 + step))
        x0 = rng.normal(0.0, 1.0, size=(1, net.action_dim))
        return flow_sample(net, x0, sample_steps, cond)[0]

    return policy_fn


def eval_policy(ckpt_path, episodes: int = 100, seed: int = 1000,
                traj_out=None, metrics_out=None) -> dict:
    """Roll out the trained policy; success needs the terminal depth within
    tolerance of the target and the final lateral deviation under 1 mm."""
    model, net, meta = load_policy(ckpt_path)
    env_cfg = ToyEnvConfig(
        target_depth_mm=meta["env"]["target_depth_mm"],
        episode_len=meta["env"]["episode_len"],
        obs_noise_mm=meta["env"]["obs_noise_mm"],
    )
    results = []
    traj_rows = []
    for ep in range(episodes):
        env = ToyEnv(env_cfg, ep, seed)
        policy_fn = make_flow_policy(model, net, env_cfg, ep, seed, meta["sample_steps"])
        res = rollout(env, policy_fn)
        results.append(res)
        if traj_out is not None:
            for row in res["steps"]:
                traj_rows.append({"episode": ep, **row})
    summary = {
        "episodes": episodes,
        "success_rate": float(np.mean([r["success"] for r in results])),
        "mean_tail_depth_err_mm": float(np.mean([r["tail_depth_err_mm"] for r in results])),
        "mean_final_lat_err_mm": float(np.mean([r["final_lat_err_mm"] for r in results])),
    }
    if traj_out is not None:
        with Path(traj_out).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["episode", "step", "x", "y", "depth", "dx", "dy", "dz"])
            writer.writeheader()
            writer.writerows(traj_rows)
    if metrics_out is not None:
        Path(metrics_out).write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def mixture_benchmark(seed: int = 0, train_steps: int = 3000, batch: int = 256,
                      n_samples: int = 10000, ks=(8, 16, 32, 64)) -> dict:
    """Unconditional 1-d flow on a two-Gaussian mixture (means +-2, sigma 0.25).

    Reports mode statistics of 10k generated samples and the 1-Wasserstein
    distance to target draws for several Euler step counts.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6978]))
    net = FlowNet(action_dim=1, cond_dim=0, seed=seed)
    opt = Adam(sorted(net.params.items()), lr=1e-3)

    def draw_target(r, n):
        signs = np.where(r.integers(0, 2, size=n) == 0, -2.0, 2.0)
        return (signs + r.normal(0.0, 0.25, size=n))[:, None]

    for step in range(train_steps):
        x1 = draw_target(rng, batch)
        x0 = rng.normal(0.0, 1.0, size=(batch, 1))
        t = rng.uniform(0.0, 1.0, size=batch)
        loss = flow_matching_loss(net, x0, x1, t)
        opt.zero_grad()
        loss.backward()
        opt.step(cosine_lr_scale(step, train_steps))

    sample_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x73616D70]))
    x0 = sample_rng.normal(0.0, 1.0, size=(n_samples, 1))
    target = np.sort(draw_target(sample_rng, n_samples)[:, 0])
    report: dict = {"seed": seed, "w1_by_steps": {}}
    for k in ks:
        samples = flow_sample(net, x0, k)[:, 0]
        report["w1_by_steps"][str(k)] = float(np.abs(np.sort(samples) - target).mean())
        if k == max(ks):
            pos = samples[samples > 0]
            neg = samples[samples <= 0]
            report["samples_steps"] = k
            report["positive_weight"] = float(len(pos) / len(samples))
            report["positive_mode_mean"] = float(pos.mean())
            report["negative_mode_mean"] = float(neg.mean())
            report["mean_abs"] = float(np.abs(samples).mean())
    return report
