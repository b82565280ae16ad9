"""Stage orchestration with content-hash manifests and skip-if-unchanged.

Each stage writes ``manifests/<stage>.json`` recording the config hash, the
hashes of its input artifacts, and its outputs; a stage is re-run only when
any of those change. A lock file serializes pipelines on one output directory.
"""
from __future__ import annotations

import hashlib
import json
import os
from contextlib import contextmanager
from pathlib import Path

from .config import PipelineConfig, config_to_dict

STAGES = ("gen", "annotate", "tokenize", "train", "eval", "policy-train", "policy-eval")

STAGE_DEPS = {
    "gen": (),
    "annotate": ("gen",),
    "tokenize": ("gen",),
    "train": ("gen",),
    "eval": ("gen", "train"),
    "policy-train": ("train",),
    "policy-eval": ("policy-train",),
}


class PipelineError(RuntimeError):
    pass


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _section_hash(cfg: PipelineConfig, *sections: str) -> str:
    payload = {s: config_to_dict(cfg)[s] for s in sections}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@contextmanager
def directory_lock(out_dir: Path):
    lock = out_dir / ".lock"
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(f"output directory is locked by another pipeline ({lock})")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class Paths:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.corpus = out_dir / "corpus"
        self.labels = self.corpus / "labels.jsonl"
        self.estimated = out_dir / "estimated.jsonl"
        self.agreement = out_dir / "agreement.json"
        self.descriptions = out_dir / "descriptions.jsonl"
        self.vocab = out_dir / "vocabulary.json"
        self.ckpt = out_dir / "encoder.ckpt"
        self.train_metrics = out_dir / "train_metrics.jsonl"
        self.report = out_dir / "eval_report.json"
        self.policy_ckpt = out_dir / "policy.ckpt"
        self.policy_metrics = out_dir / "policy_metrics.json"
        self.traj = out_dir / "trajectories.csv"
        self.manifests = out_dir / "manifests"

    def manifest(self, stage: str) -> Path:
        return self.manifests / f"{stage}.json"


def _stage_spec(stage: str, cfg: PipelineConfig, paths: Paths) -> dict:
    """(config hash, input paths, output paths) per stage."""
    specs = {
        "gen": ("generator", [], [paths.labels]),
        "annotate": ("annotator", [paths.labels], [paths.estimated, paths.agreement]),
        "tokenize": ("tokenizer", [paths.labels], [paths.descriptions, paths.vocab]),
        "train": ("training", [paths.labels], [paths.ckpt, paths.train_metrics]),
        "eval": ("evaluation", [paths.labels, paths.ckpt], [paths.report]),
        "policy-train": ("policy", [paths.ckpt], [paths.policy_ckpt, paths.policy_metrics]),
        "policy-eval": ("policy", [paths.policy_ckpt], [Path(str(paths.policy_metrics) + ".eval.json"), paths.traj]),
    }
    section, inputs, outputs = specs[stage]
    return {
        "config_hash": _section_hash(cfg, section),
        "inputs": inputs,
        "outputs": outputs,
    }


def _run_gen(cfg: PipelineConfig, paths: Paths):
    from .synthgen import GeneratorConfig, generate_corpus

    g = cfg.generator
    gen_cfg = GeneratorConfig(
        shape_weights=dict(g.shape_weights),
        texture_weights=dict(g.texture_weights),
        primitive_weights=dict(g.primitive_weights),
        depth_range_mm=tuple(g.depth_range_mm),
        slide_range_mm=tuple(g.slide_range_mm),
        twist_range_deg=tuple(g.twist_range_deg),
        noise_sigma_mm=g.noise_sigma_mm,
        membrane_sigma_mm=g.membrane_sigma_mm,
    )
    generate_corpus(gen_cfg, g.n_samples, g.seed, paths.corpus)


def _run_annotate(cfg: PipelineConfig, paths: Paths):
    from . import dataio
    from .annotator import AnnotatorConfig, annotate_corpus, compare_annotations

    a = cfg.annotator
    ann_cfg = AnnotatorConfig(
        contact_threshold_mm=a.contact_threshold_mm,
        svd_singularity_ratio_min=a.svd_singularity_ratio_min,
        twist_amplitude_min_rad=a.twist_amplitude_min_rad,
        slide_magnitude_min_mm=a.slide_magnitude_min_mm,
    )
    est = annotate_corpus(paths.corpus, ann_cfg, paths.estimated)
    gt = dataio.read_jsonl(paths.labels)
    agreement = compare_annotations(gt, est)
    paths.agreement.write_text(json.dumps(agreement, indent=1, sort_keys=True))


def _run_tokenize(cfg: PipelineConfig, paths: Paths):
    from . import dataio
    from .language import TEMPLATES, build_vocabulary, describe_tokens

    vocab = build_vocabulary()
    vocab.save(paths.vocab)
    rows = []
    for label in dataio.read_jsonl(paths.labels):
        state = dataio.state_from_dict(label)
        for variant in range(len(TEMPLATES)):
            text, seq = describe_tokens(state, vocab, cfg.tokenizer.style, variant)
            rows.append({"id": label["id"], "variant": variant, "text": text, "ids": list(seq.ids)})
    dataio.write_jsonl(paths.descriptions, rows)


def _run_train(cfg: PipelineConfig, paths: Paths):
    from .pretrain import LossWeights, TrainConfig, train

    t = cfg.training
    train_cfg = TrainConfig(
        epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
        weight_decay=t.weight_decay, seed=t.seed,
        weights=LossWeights(t.lambda_tl, t.lambda_ti, t.lambda_li),
        mean_reduction=t.mean_reduction, template_style=t.template_style,
        val_batch=t.val_batch,
    )
    train(paths.corpus, paths.ckpt, paths.train_metrics, train_cfg)


def _run_eval(cfg: PipelineConfig, paths: Paths):
    from .evaluation import evaluate

    evaluate(paths.ckpt, paths.corpus, cfg.evaluation.probe, paths.report)


def _run_policy_train(cfg: PipelineConfig, paths: Paths):
    from .flowpolicy import PolicyTrainConfig, ToyEnvConfig, train_policy

    p = cfg.policy
    meta = train_policy(paths.ckpt, paths.policy_ckpt, PolicyTrainConfig(
        episodes=p.episodes, seed=p.seed, train_steps=p.train_steps, stage2=p.stage2,
        env=ToyEnvConfig(target_depth_mm=p.target_depth_mm),
    ))
    paths.policy_metrics.write_text(json.dumps(meta, indent=1, sort_keys=True))


def _run_policy_eval(cfg: PipelineConfig, paths: Paths):
    from .flowpolicy import eval_policy

    eval_policy(
        paths.policy_ckpt, episodes=cfg.policy.eval_episodes, seed=cfg.policy.eval_seed,
        traj_out=paths.traj, metrics_out=Path(str(paths.policy_metrics) + ".eval.json"),
    )


_RUNNERS = {
    "gen": _run_gen,
    "annotate": _run_annotate,
    "tokenize": _run_tokenize,
    "train": _run_train,
    "eval": _run_eval,
    "policy-train": _run_policy_train,
    "policy-eval": _run_policy_eval,
}


def run_pipeline(cfg: PipelineConfig, out_dir, stages=None, force: bool = False,
                 quiet: bool = False) -> list[str]:
    """Run the requested stages in canonical order; returns the executed list.

    A stage is skipped when its manifest matches the current config hash and
    input hashes and all outputs still exist. Missing upstream artifacts name
    the stage to run first.
    """
    out_dir = Path(out_dir)
    requested = list(STAGES) if stages is None else list(stages)
    for s in requested:
        if s not in STAGES:
            raise PipelineError(f"unknown stage {s!r} (valid: {', '.join(STAGES)})")
    executed = []
    with directory_lock(out_dir):
        paths = Paths(out_dir)
        paths.manifests.mkdir(parents=True, exist_ok=True)
        for stage in STAGES:
            if stage not in requested:
                continue
            for dep in STAGE_DEPS[stage]:
                dep_spec = _stage_spec(dep, cfg, paths)
                if not all(Path(o).exists() for o in dep_spec["outputs"]):
                    raise PipelineError(
                        f"missing artifacts for stage '{stage}'; run stage '{dep}' first"
                    )
            spec = _stage_spec(stage, cfg, paths)
            manifest = {
                "stage": stage,
                "config_hash": spec["config_hash"],
                "inputs": {
                    str(Path(p).relative_to(out_dir)): _sha256_file(Path(p))
                    for p in spec["inputs"]
                },
            }
            mpath = paths.manifest(stage)
            if not force and mpath.exists():
                old = json.loads(mpath.read_text())
                unchanged = (
                    old.get("config_hash") == manifest["config_hash"]
                    and old.get("inputs") == manifest["inputs"]
                    and all(Path(o).exists() for o in spec["outputs"])
                )
                if unchanged:
                    if not quiet:
                        print(f"[pipeline] {stage}: up to date, skipping")
                    continue
            if not quiet:
                print(f"[pipeline] {stage}: running")
            _RUNNERS[stage](cfg, paths)
            manifest["outputs"] = {
                str(Path(p).relative_to(out_dir)): _sha256_file(Path(p))
                for p in spec["outputs"] if Path(p).exists()
            }
            mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True))
            executed.append(stage)
    return executed
