"""Pipeline configuration: nested dataclasses with strict JSON round-tripping.

Every field has a documented default; unknown keys are rejected with a
field-path diagnostic. ``config_hash`` feeds the stage manifests.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, is_dataclass
from pathlib import Path


@dataclass
class GeneratorSection:
    n_samples: int = 2000
    seed: int = 7
    noise_sigma_mm: float = 0.02
    membrane_sigma_mm: float = 1.0
    depth_range_mm: list = field(default_factory=lambda: [0.3, 3.5])
    slide_range_mm: list = field(default_factory=lambda: [0.3, 2.0])
    twist_range_deg: list = field(default_factory=lambda: [5.0, 15.0])
    shape_weights: dict = field(default_factory=lambda: {
        "sphere": 1.0, "cylinder": 1.0, "edge": 1.0, "ellipse": 1.0, "ridge": 1.0,
    })
    texture_weights: dict = field(default_factory=lambda: {
        "smooth": 1.0, "bumpy": 1.0, "ridged": 1.0,
    })
    primitive_weights: dict = field(default_factory=lambda: {
        "press": 1.0, "press_slide": 1.0, "press_twist": 1.0,
    })


@dataclass
class AnnotatorSection:
    contact_threshold_mm: float = 0.1
    svd_singularity_ratio_min: float = 2.0
    twist_amplitude_min_rad: float = 0.005
    slide_magnitude_min_mm: float = 0.05


@dataclass
class TokenizerSection:
    style: str = "tokenized"


@dataclass
class TrainingSection:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-3
    seed: int = 0
    lambda_tl: float = 1.0
    lambda_ti: float = 1.0
    lambda_li: float = 1.0
    mean_reduction: bool = False
    template_style: str = "tokenized"
    val_batch: int = 32


@dataclass
class EvaluationSection:
    probe: str = "linear"


@dataclass
class PolicySection:
    episodes: int = 500
    eval_episodes: int = 100
    seed: int = 0
    eval_seed: int = 1000
    train_steps: int = 4000
    stage2: bool = False
    target_depth_mm: float = 1.0


@dataclass
class PipelineConfig:
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    annotator: AnnotatorSection = field(default_factory=AnnotatorSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    policy: PolicySection = field(default_factory=PolicySection)


def _from_dict(cls, payload: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(fields)
    if unknown:
        raise ValueError(f"config: unknown key {path}{sorted(unknown)[0]}")
    kwargs = {}
    for name, f in fields.items():
        if name not in payload:
            continue
        value = payload[name]
        if is_dataclass(f.type) or (isinstance(f.type, str) and f.type.endswith("Section")):
            sub_cls = type(f.default_factory())  # type: ignore[misc]
            if not isinstance(value, dict):
                raise ValueError(f"config: {path}{name} must be an object")
            kwargs[name] = _from_dict(sub_cls, value, f"{path}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> PipelineConfig:
    if not isinstance(payload, dict):
        raise ValueError("config: top level must be a JSON object")
    return _from_dict(PipelineConfig, payload, "")


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Defaults when no path is given; strict parse otherwise."""
    if path is None:
        return PipelineConfig()
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"config: invalid JSON at line {e.lineno}: {e.msg}") from e
    return config_from_dict(payload)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True))


def config_hash(cfg: PipelineConfig) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()
