"""Analytical contact-state estimation from marker frames alone.

Every estimator is a pure function of the deformation field and the rest
geometry; shape and texture are never inferred here (they are categorical
labels carried from the generator when available).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    N_MARKERS,
    TWIST_CCW,
    TWIST_CW,
    TWIST_NONE,
    ContactState,
    DeformationField,
    MarkerFrame,
    deformation_field,
    wrap_angle_deg,
)
from .synthgen import principal_axis_of_points
from . import dataio


@dataclass(frozen=True)
class AnnotatorConfig:
    contact_threshold_mm: float = 0.1
    svd_singularity_ratio_min: float = 2.0
    twist_amplitude_min_rad: float = 0.005
    slide_magnitude_min_mm: float = 0.05

    def __post_init__(self):
        if self.contact_threshold_mm <= 0 or self.twist_amplitude_min_rad <= 0 \
                or self.slide_magnitude_min_mm <= 0:
            raise ValueError("annotator thresholds must be positive")
        if self.svd_singularity_ratio_min < 1.0:
            raise ValueError("singularity ratio gate must be >= 1")


def estimate_depth(field: DeformationField) -> float:
    """Maximum normal displacement magnitude over all markers."""
    return float(np.abs(field.normal).max())


def extract_contact_region(field: DeformationField, config: AnnotatorConfig) -> np.ndarray:
    """Indices of markers whose |dz| exceeds the contact threshold."""
    return np.flatnonzero(np.abs(field.normal) > config.contact_threshold_mm)


def estimate_centroid_area(region: np.ndarray, frame: MarkerFrame):
    """(centroid in normalized coords | None, area fraction) of the region."""
    area = float(len(region)) / N_MARKERS
    if len(region) == 0:
        return None, 0.0
    w, h, _ = frame.sensor_extent
    mean_xy = frame.rest[region, :2].mean(axis=0)
    return (float(mean_xy[0] / w), float(mean_xy[1] / h)), area


def estimate_principal_axis(region: np.ndarray, frame: MarkerFrame, config: AnnotatorConfig):
    """Dominant in-plane direction of the region, or None below the SVD gate."""
    if len(region) < 3:
        return None
    angle, _ = principal_axis_of_points(
        frame.rest[region, :2], config.svd_singularity_ratio_min
    )
    return angle


def estimate_slide(region: np.ndarray, field: DeformationField, config: AnnotatorConfig):
    """Direction of mean tangential displacement, or None when too weak.

    Convention: +x -> 0 deg, +y -> 90 deg, in [0, 360).
    """
    if len(region) == 0:
        return None
    mean_t = field.tangential[region].mean(axis=0)
    if float(np.hypot(mean_t[0], mean_t[1])) < config.slide_magnitude_min_mm:
        return None
    return float(math.degrees(math.atan2(mean_t[1], mean_t[0])) % 360.0)


def twist_amplitude_rad(
    region: np.ndarray,
    field: DeformationField,
    frame: MarkerFrame,
) -> float:
    """Net rotation (radians) of the tangential field about the region centroid.

    The translation-like component is removed first by regressing each
    tangential component on the local normal engagement (constant + |dz|):
    a pure slide is engagement-proportional and leaves no residual, while a
    rigid rotation is orthogonal to the engagement profile and survives. The
    residual field's least-squares rigid rotation rate is the amplitude;
    positive means counterclockwise.
    """
    tangential = field.tangential[region]
    w = np.abs(field.normal[region])
    design = np.stack([np.ones_like(w), w], axis=1)
    beta, *_ = np.linalg.lstsq(design, tangential, rcond=None)
    resid = tangential - design @ beta
    rel = frame.rest[region, :2] - frame.rest[region, :2].mean(axis=0)
    denom = float((rel * rel).sum())
    if denom < 1e-12:
        return 0.0
    cross = rel[:, 0] * resid[:, 1] - rel[:, 1] * resid[:, 0]
    return float(cross.sum() / denom)


def estimate_twist(
    region: np.ndarray,
    field: DeformationField,
    frame: MarkerFrame,
    config: AnnotatorConfig,
):
    """clockwise / counterclockwise / none, or None for an empty region.

    Counterclockwise means positive z-curl of the residual tangential field.
    """
    if len(region) == 0:
        return None
    amp = twist_amplitude_rad(region, field, frame)
    if abs(amp) < config.twist_amplitude_min_rad:
        return TWIST_NONE
    return TWIST_CCW if amp > 0 else TWIST_CW


def annotate(
    frame: MarkerFrame,
    config: AnnotatorConfig | None = None,
    shape: str | None = None,
    texture: str | None = None,
) -> ContactState:
    """Full analytical annotation of one frame.

    If no marker clears the contact threshold the sample is treated as
    no-contact: depth and area are 0 and the geometric attributes invalid.
    """
    config = config or AnnotatorConfig()
    field = deformation_field(frame)
    region = extract_contact_region(field, config)
    if len(region) == 0:
        return ContactState(0.0, 0.0, shape=shape, texture=texture)
    centroid, area = estimate_centroid_area(region, frame)
    gel = frame.sensor_extent[2]
    return ContactState(
        depth_mm=min(estimate_depth(field), gel),
        area_fraction=area,
        centroid=centroid,
        principal_axis_deg=estimate_principal_axis(region, frame, config),
        slide_deg=estimate_slide(region, field, config),
        twist=estimate_twist(region, field, frame, config),
        shape=shape,
        texture=texture,
    )


def annotate_corpus(
    corpus_dir: str | Path,
    config: AnnotatorConfig | None = None,
    out_path: str | Path | None = None,
) -> list[dict]:
    """Annotate every frame of a corpus; shape/texture copied from labels."""
    config = config or AnnotatorConfig()
    rows = []
    for sample_id, frame, label in dataio.load_corpus(corpus_dir):
        state = annotate(frame, config, shape=label.get("shape"), texture=label.get("texture"))
        rows.append({"id": sample_id, "estimated": True, **dataio.state_to_dict(state)})
    if out_path is not None:
        dataio.write_jsonl(out_path, rows)
    return rows


def compare_annotations(gt_rows: list[dict], est_rows: list[dict]) -> dict:
    """Per-attribute agreement between ground-truth and estimated labels.

    Angular errors are computed on samples where both sides are valid; twist
    accuracy treats None (invalid) and the three categories as distinct.
    """
    gt_by_id = {r["id"]: r for r in gt_rows}
    depth_err, centroid_err, axis_err, slide_err = [], [], [], []
    twist_total = twist_correct = 0
    axis_gated = 0
    for est in est_rows:
        gt = gt_by_id[est["id"]]
        depth_err.append(abs(est["depth_mm"] - gt["depth_mm"]))
        if gt["centroid"] is not None and est["centroid"] is not None:
            du = est["centroid"][0] - gt["centroid"][0]
            dv = est["centroid"][1] - gt["centroid"][1]
            centroid_err.append(math.hypot(du, dv))
        if gt["principal_axis_deg"] is not None and est["principal_axis_deg"] is not None:
            axis_gated += 1
            axis_err.append(
                abs(wrap_angle_deg(est["principal_axis_deg"] - gt["principal_axis_deg"], 180.0))
            )
        if gt["slide_deg"] is not None and est["slide_deg"] is not None:
            slide_err.append(
                abs(wrap_angle_deg(est["slide_deg"] - gt["slide_deg"], 360.0))
            )
        twist_total += 1
        if est["twist"] == gt["twist"]:
            twist_correct += 1

    def _mean(xs):
        return float(np.mean(xs)) if xs else None

    return {
        "n_samples": len(est_rows),
        "depth_mae_mm": _mean(depth_err),
        "depth_max_mm": float(np.max(depth_err)) if depth_err else None,
        "centroid_mean_err": _mean(centroid_err),
        "principal_axis_mean_err_deg": _mean(axis_err),
        "principal_axis_max_err_deg": float(np.max(axis_err)) if axis_err else None,
        "principal_axis_gated_count": axis_gated,
        "slide_mean_err_deg": _mean(slide_err),
        "slide_max_err_deg": float(np.max(slide_err)) if slide_err else None,
        "slide_count": len(slide_err),
        "twist_accuracy": twist_correct / twist_total if twist_total else None,
    }
