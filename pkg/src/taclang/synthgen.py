"""Deterministic synthetic contact generation from parametric indenters.

Each sample presses a rigid indenter into the virtual gel under one of three
primitives (press, press+slide, press+twist) and records the marker frame plus
the analytic ground-truth contact state. All randomness is derived from
(base_seed, sample_index) through splitmix64, so generation order and
parallel scheduling cannot change the output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    DEFAULT_EXTENT,
    GRID_SIDE,
    N_MARKERS,
    TWIST_CCW,
    TWIST_CW,
    TWIST_NONE,
    ContactState,
    MarkerFrame,
    grid_spacing_mm,
    rest_grid,
)
from . import dataio

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

GENERATOR_SHAPES = ("sphere", "cylinder", "edge", "ellipse", "ridge")
PRIMITIVES = ("press", "press_slide", "press_twist")
CHIRALITIES = (TWIST_CW, TWIST_CCW)


def splitmix64(seed: int, index: int = 0) -> int:
    """Stateless splitmix64 stream: mix of seed advanced by index+1 steps."""
    z = (seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class Indenter:
    """Parametric rigid indenter: shape + micro-texture + in-plane pose.

    shape params: sphere/cylinder {radius}; edge/ridge {length, width}
    (ridge also {count}); ellipse {a, b} with a > b.
    texture params: bumpy {amplitude, spacing}; ridged {amplitude, period}.
    """

    shape: str
    params: dict
    texture: str = "smooth"
    texture_params: dict = field(default_factory=dict)
    center: tuple[float, float] = (0.5, 0.5)
    rotation_deg: float = 0.0

    def __post_init__(self):
        if self.shape not in GENERATOR_SHAPES:
            raise ValueError(f"unknown indenter shape {self.shape!r}")
        if any(v <= 0 for k, v in self.params.items()):
            raise ValueError(f"indenter parameters must be positive: {self.params}")
        u, v = self.center
        if not (0.0 < u < 1.0 and 0.0 < v < 1.0):
            raise ValueError(f"indenter center must be interior, got {self.center}")

    def footprint_radius_mm(self) -> float:
        p = self.params
        if self.shape in ("sphere", "cylinder"):
            return p["radius"]
        if self.shape == "edge":
            return math.hypot(p["length"] / 2.0, p["width"] / 2.0)
        if self.shape == "ellipse":
            return max(p["a"], p["b"])
        # ridge: count bars with pitch 2*width, centred
        half_span = (p["count"] - 1) * p["width"] + p["width"] / 2.0
        return math.hypot(p["length"] / 2.0, half_span)


@dataclass(frozen=True)
class ContactScript:
    """Scripted interaction: primitive, magnitudes, approach tilt, noise, seed."""

    primitive: str
    depth_mm: float
    slide_direction_deg: float = 0.0
    slide_distance_mm: float = 0.0
    twist_chirality: str = TWIST_CW
    twist_angle_deg: float = 0.0
    approach_tilt_deg: float = 0.0
    tilt_azimuth_deg: float = 0.0
    noise_sigma_mm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        if not (self.depth_mm > 0.0):
            raise ValueError(f"scripted depth must be > 0, got {self.depth_mm}")
        if not (0.0 <= self.approach_tilt_deg <= 15.0):
            raise ValueError("approach tilt must stay within the 15 degree cone")
        if self.noise_sigma_mm < 0.0:
            raise ValueError("noise sigma must be >= 0")
        if self.primitive == "press_twist" and self.twist_chirality not in CHIRALITIES:
            raise ValueError(f"twist chirality must be one of {CHIRALITIES}")


def _local_coords(indenter: Indenter, extent) -> tuple[np.ndarray, np.ndarray]:
    w, h, _ = extent
    rest = rest_grid(extent)
    cx, cy = indenter.center[0] * w, indenter.center[1] * h
    phi = math.radians(indenter.rotation_deg)
    dx = rest[:, 0] - cx
    dy = rest[:, 1] - cy
    lx = math.cos(phi) * dx + math.sin(phi) * dy
    ly = -math.sin(phi) * dx + math.cos(phi) * dy
    return lx, ly


def clearance_profile(indenter: Indenter, extent=DEFAULT_EXTENT) -> np.ndarray:
    """Gap between the undeformed gel plane and the indenter height field.

    Measured at each marker, in mm; inf outside the indenter footprint. The
    profile is re-zeroed so its minimum over the grid is 0, making the scripted
    depth the exact maximum marker indentation.
    """
    lx, ly = _local_coords(indenter, extent)
    p = indenter.params
    inf = np.inf
    if indenter.shape == "sphere":
        r = p["radius"]
        rho2 = lx * lx + ly * ly
        inside = rho2 < r * r
        c = np.where(inside, r - np.sqrt(np.maximum(r * r - rho2, 0.0)), inf)
    elif indenter.shape == "cylinder":
        r = p["radius"]
        c = np.where(lx * lx + ly * ly <= r * r, 0.0, inf)
    elif indenter.shape == "edge":
        half_l, half_w = p["length"] / 2.0, p["width"] / 2.0
        inside = (np.abs(lx) <= half_l) & (np.abs(ly) <= half_w)
        c = np.where(inside, 0.0, inf)
    elif indenter.shape == "ellipse":
        a, b = p["a"], p["b"]
        m = (lx / a) ** 2 + (ly / b) ** 2
        inside = m < 1.0
        cvert = min(a, b)
        c = np.where(inside, cvert * (1.0 - np.sqrt(np.maximum(1.0 - m, 0.0))), inf)
    elif indenter.shape == "ridge":
        half_l, width, count = p["length"] / 2.0, p["width"], int(p["count"])
        pitch = 2.0 * width
        c = np.full(N_MARKERS, inf)
        for k in range(count):
            yk = (k - (count - 1) / 2.0) * pitch
            inside = (np.abs(lx) <= half_l) & (np.abs(ly - yk) <= width / 2.0)
            c = np.where(inside, 0.0, c)
    else:  # pragma: no cover
        raise ValueError(indenter.shape)

    finite = np.isfinite(c)
    if indenter.texture == "bumpy":
        amp = indenter.texture_params["amplitude"]
        s = indenter.texture_params["spacing"]
        tex = amp * (1.0 - np.cos(2 * np.pi * lx / s) * np.cos(2 * np.pi * ly / s)) / 2.0
        c = np.where(finite, c + tex, c)
    elif indenter.texture == "ridged":
        amp = indenter.texture_params["amplitude"]
        period = indenter.texture_params["period"]
        tex = amp * (1.0 - np.cos(2 * np.pi * ly / period)) / 2.0
        c = np.where(finite, c + tex, c)
    return c


def _membrane_blur(values: np.ndarray, sigma_mm: float, extent) -> np.ndarray:
    """Truncated separable Gaussian over the 23x23 grid (radius 2 cells)."""
    if sigma_mm <= 0.0:
        return values
    sigma_px = sigma_mm / grid_spacing_mm(extent)
    radius = 2
    offs = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offs / sigma_px) ** 2)
    kernel /= kernel.sum()
    grid = values.reshape(GRID_SIDE, GRID_SIDE)
    padded = np.pad(grid, radius, mode="constant")
    tmp = np.zeros_like(padded)
    for i, kv in enumerate(kernel):
        tmp += kv * np.roll(padded, i - radius, axis=0)
    out = np.zeros_like(padded)
    for i, kv in enumerate(kernel):
        out += kv * np.roll(tmp, i - radius, axis=1)
    return out[radius:-radius, radius:-radius].reshape(-1)


def principal_axis_of_points(xy: np.ndarray, ratio_min: float = 2.0):
    """(angle_deg in [0, 180), singularity ratio) from a 2-D point set via SVD.

    Returns (None, ratio) when the set is too small or too isotropic.
    """
    if xy.shape[0] < 3:
        return None, 0.0
    centered = xy - xy.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    ratio = float("inf") if svals[1] < 1e-12 else float(svals[0] / svals[1])
    if ratio < ratio_min:
        return None, ratio
    vx, vy = vt[0]
    angle = math.degrees(math.atan2(vy, vx)) % 180.0
    return float(angle), ratio


def indent(
    indenter: Indenter,
    script: ContactScript,
    extent=DEFAULT_EXTENT,
    membrane_sigma_mm: float = 1.0,
    axis_ratio_min: float = 2.0,
) -> tuple[MarkerFrame, ContactState]:
    """Synthesize one contact and its analytic ground truth.

    Normal displacement per marker is max(0, depth - clearance); an isotropic
    Gaussian membrane term couples neighbours (taken as a pointwise max with
    the raw field so contact-constrained markers keep the indenter-imposed
    indentation). Tangential motion is the scripted slide vector or rigid
    in-plane rotation, scaled by local normal engagement. Ground truth is
    computed from the noiseless pre-kernel contact mask. The approach tilt is
    carried as script metadata; it does not enter the displacement model.
    """
    w, h, gel = extent
    cx, cy = indenter.center[0] * w, indenter.center[1] * h
    r_fp = indenter.footprint_radius_mm()
    if cx - r_fp < 0 or cx + r_fp > w or cy - r_fp < 0 or cy + r_fp > h:
        raise ValueError("indenter footprint extends outside the sensor plane")
    if script.depth_mm > gel:
        raise ValueError(f"scripted depth {script.depth_mm} exceeds gel depth {gel}")

    rest = rest_grid(extent)
    clearance = clearance_profile(indenter, extent)
    finite = np.isfinite(clearance)
    if not finite.any():
        raise ValueError("indenter footprint does not cover any marker")
    clearance = np.where(finite, clearance - clearance[finite].min(), clearance)

    raw = np.where(finite, np.maximum(0.0, script.depth_mm - clearance), 0.0)
    mask = raw > 0.0

    # Ground truth from the noiseless pre-kernel mask.
    mask_xy = rest[mask, :2]
    centroid_mm = mask_xy.mean(axis=0)
    centroid_uv = (float(centroid_mm[0] / w), float(centroid_mm[1] / h))
    area = float(mask.sum()) / N_MARKERS
    axis_deg, _ = principal_axis_of_points(mask_xy, axis_ratio_min)

    smoothed = np.maximum(raw, _membrane_blur(raw, membrane_sigma_mm, extent))
    engagement = smoothed / script.depth_mm

    tangential = np.zeros((N_MARKERS, 2))
    slide_deg = None
    twist = TWIST_NONE
    if script.primitive == "press_slide":
        theta = math.radians(script.slide_direction_deg)
        vec = script.slide_distance_mm * np.array([math.cos(theta), math.sin(theta)])
        tangential = engagement[:, None] * vec[None, :]
        slide_deg = script.slide_direction_deg % 360.0
    elif script.primitive == "press_twist":
        sign = 1.0 if script.twist_chirality == TWIST_CCW else -1.0
        alpha = sign * math.radians(script.twist_angle_deg)
        rel = rest[:, :2] - centroid_mm[None, :]
        rot = np.empty_like(rel)
        ca, sa = math.cos(alpha), math.sin(alpha)
        rot[:, 0] = (ca - 1.0) * rel[:, 0] - sa * rel[:, 1]
        rot[:, 1] = sa * rel[:, 0] + (ca - 1.0) * rel[:, 1]
        tangential = engagement[:, None] * rot
        twist = script.twist_chirality

    disp = np.zeros((N_MARKERS, 3))
    disp[:, :2] = tangential
    disp[:, 2] = -smoothed
    if script.noise_sigma_mm > 0.0:
        rng = np.random.default_rng(script.seed)
        disp += rng.normal(0.0, script.noise_sigma_mm, size=(N_MARKERS, 3))

    frame = MarkerFrame(rest, rest + disp, extent)
    state = ContactState(
        depth_mm=float(script.depth_mm),
        area_fraction=area,
        centroid=centroid_uv,
        principal_axis_deg=axis_deg,
        slide_deg=slide_deg,
        twist=twist,
        shape=indenter.shape,
        texture=indenter.texture,
    )
    return frame, state


def normal_force_proxy(frame: MarkerFrame, k: float = 1.0) -> float:
    """k * sum of marker indentation magnitudes; generator metadata only."""
    dz = frame.deformed[:, 2] - frame.rest[:, 2]
    return float(k * np.maximum(0.0, -dz).sum())


@dataclass(frozen=True)
class GeneratorConfig:
    """Mixture weights and parameter ranges for corpus generation."""

    shape_weights: dict = field(
        default_factory=lambda: {s: 1.0 for s in GENERATOR_SHAPES}
    )
    texture_weights: dict = field(
        default_factory=lambda: {"smooth": 1.0, "bumpy": 1.0, "ridged": 1.0}
    )
    primitive_weights: dict = field(
        default_factory=lambda: {"press": 1.0, "press_slide": 1.0, "press_twist": 1.0}
    )
    depth_range_mm: tuple[float, float] = (0.3, 3.5)
    slide_range_mm: tuple[float, float] = (0.3, 2.0)
    twist_range_deg: tuple[float, float] = (5.0, 15.0)
    tilt_max_deg: float = 8.0
    sphere_radius_mm: tuple[float, float] = (1.5, 5.0)
    cylinder_radius_mm: tuple[float, float] = (1.5, 5.0)
    edge_length_mm: tuple[float, float] = (6.0, 14.0)
    edge_width_mm: tuple[float, float] = (0.8, 2.0)
    ellipse_a_mm: tuple[float, float] = (3.0, 6.0)
    ellipse_b_mm: tuple[float, float] = (1.0, 2.5)
    ridge_length_mm: tuple[float, float] = (6.0, 12.0)
    ridge_width_mm: tuple[float, float] = (0.8, 1.5)
    ridge_counts: tuple[int, ...] = (2, 3)
    texture_amplitude_mm: float = 0.15
    texture_spacing_mm: float = 1.5
    noise_sigma_mm: float = 0.02
    membrane_sigma_mm: float = 1.0
    sensor_extent: tuple[float, float, float] = DEFAULT_EXTENT

    def with_noise(self, sigma: float) -> "GeneratorConfig":
        return replace(self, noise_sigma_mm=sigma)


def _weighted_choice(rng: np.random.Generator, weights: dict) -> str:
    names = sorted(weights)
    w = np.array([weights[n] for n in names], dtype=np.float64)
    w = w / w.sum()
    return names[int(rng.choice(len(names), p=w))]


def _uniform(rng: np.random.Generator, lo_hi: tuple[float, float]) -> float:
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def draw_sample_spec(cfg: GeneratorConfig, seed: int, combo=None):
    """Draw (Indenter, ContactScript) from one per-sample RNG stream."""
    rng = np.random.default_rng(seed)
    if combo is None:
        shape = _weighted_choice(rng, cfg.shape_weights)
        texture = _weighted_choice(rng, cfg.texture_weights)
        primitive = _weighted_choice(rng, cfg.primitive_weights)
    else:
        shape, texture, primitive = combo

    if shape == "sphere":
        params = {"radius": _uniform(rng, cfg.sphere_radius_mm)}
    elif shape == "cylinder":
        params = {"radius": _uniform(rng, cfg.cylinder_radius_mm)}
    elif shape == "edge":
        params = {
            "length": _uniform(rng, cfg.edge_length_mm),
            "width": _uniform(rng, cfg.edge_width_mm),
        }
    elif shape == "ellipse":
        params = {"a": _uniform(rng, cfg.ellipse_a_mm), "b": _uniform(rng, cfg.ellipse_b_mm)}
    else:
        params = {
            "length": _uniform(rng, cfg.ridge_length_mm),
            "width": _uniform(rng, cfg.ridge_width_mm),
            "count": float(cfg.ridge_counts[int(rng.integers(len(cfg.ridge_counts)))]),
        }

    if texture == "bumpy":
        tex_params = {"amplitude": cfg.texture_amplitude_mm, "spacing": cfg.texture_spacing_mm}
    elif texture == "ridged":
        tex_params = {"amplitude": cfg.texture_amplitude_mm, "period": cfg.texture_spacing_mm}
    else:
        tex_params = {}

    w, h, _ = cfg.sensor_extent
    tmp = Indenter(shape, params, texture, tex_params)
    r_fp = tmp.footprint_radius_mm()
    u_lo = max(0.1, r_fp / w + 1e-6)
    u_hi = min(0.9, 1.0 - r_fp / w - 1e-6)
    v_lo = max(0.1, r_fp / h + 1e-6)
    v_hi = min(0.9, 1.0 - r_fp / h - 1e-6)
    center = (float(rng.uniform(u_lo, u_hi)), float(rng.uniform(v_lo, v_hi)))
    rotation = float(rng.uniform(0.0, 360.0))
    indenter = Indenter(shape, params, texture, tex_params, center, rotation)

    depth = _uniform(rng, cfg.depth_range_mm)
    tilt = float(rng.uniform(0.0, cfg.tilt_max_deg))
    azimuth = float(rng.uniform(0.0, 360.0))
    script = ContactScript(
        primitive=primitive,
        depth_mm=depth,
        slide_direction_deg=float(rng.uniform(0.0, 360.0)),
        slide_distance_mm=_uniform(rng, cfg.slide_range_mm),
        twist_chirality=CHIRALITIES[int(rng.integers(2))],
        twist_angle_deg=_uniform(rng, cfg.twist_range_deg),
        approach_tilt_deg=tilt,
        tilt_azimuth_deg=azimuth,
        noise_sigma_mm=cfg.noise_sigma_mm,
        seed=seed,
    )
    return indenter, script


def _coverage_combos(cfg: GeneratorConfig):
    shapes = sorted(cfg.shape_weights)
    textures = sorted(cfg.texture_weights)
    primitives = sorted(cfg.primitive_weights)
    return [(s, t, p) for s in shapes for t in textures for p in primitives]


def generate_corpus(cfg: GeneratorConfig, n: int, base_seed: int, out_dir) -> list[dict]:
    """Write n samples + labels.jsonl under out_dir; returns the label rows.

    The first len(shapes x textures x primitives) samples cycle through every
    combination so small corpora still cover all categorical marginals; the
    rest are weighted draws.
    """
    if n < 1:
        raise ValueError(f"corpus size must be >= 1, got {n}")
    from pathlib import Path

    out_dir = Path(out_dir)
    (out_dir / dataio.SAMPLES_DIR).mkdir(parents=True, exist_ok=True)
    combos = _coverage_combos(cfg)
    rows = []
    for index in range(n):
        combo = combos[index] if index < len(combos) else None
        # Rare thin rotated bars can slip between marker rows; redraw
        # deterministically until the footprint covers a marker.
        for retry in range(16):
            seed = splitmix64(splitmix64(base_seed, index), retry) if retry else splitmix64(base_seed, index)
            indenter, script = draw_sample_spec(cfg, seed, combo)
            try:
                frame, state = indent(
                    indenter, script, cfg.sensor_extent, cfg.membrane_sigma_mm
                )
                break
            except ValueError:
                if retry == 15:
                    raise
        sample_id = f"{index:06d}"
        dataio.write_frame(dataio.sample_path(out_dir, sample_id), frame)
        row = {"id": sample_id, "seed": seed, **dataio.state_to_dict(state)}
        row["meta"] = {
            "primitive": script.primitive,
            "slide_distance_mm": script.slide_distance_mm if script.primitive == "press_slide" else None,
            "twist_angle_deg": script.twist_angle_deg if script.primitive == "press_twist" else None,
            "approach_tilt_deg": script.approach_tilt_deg,
            "noise_sigma_mm": script.noise_sigma_mm,
            "indenter": {
                "shape": indenter.shape,
                "params": indenter.params,
                "center": list(indenter.center),
                "rotation_deg": indenter.rotation_deg,
            },
            "force_proxy_n": normal_force_proxy(frame),
        }
        rows.append(row)
    dataio.write_jsonl(dataio.labels_path(out_dir), rows)
    return rows
