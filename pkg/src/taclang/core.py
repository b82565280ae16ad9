"""Marker-grid domain types and the normalization conventions shared by every stage.

The sensor is modelled as a 23x23 grid of surface markers. A raw observation is
a pair of marker clouds (rest, deformed); everything downstream works on the
per-marker displacement field and on contact-state records derived from it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRID_SIDE = 23
N_MARKERS = GRID_SIDE * GRID_SIDE  # 529

# (width_mm, height_mm, gel_depth_mm). Gel depth 4 mm matches the top of the
# depth token range.
DEFAULT_EXTENT = (20.0, 20.0, 4.0)

SHAPES = ("sphere", "cylinder", "edge", "ellipse", "ridge", "irregular")
TEXTURES = ("smooth", "bumpy", "ridged")
TWIST_CW = "clockwise"
TWIST_CCW = "counterclockwise"
TWIST_NONE = "none"
TWISTS = (TWIST_CW, TWIST_CCW, TWIST_NONE)

N_TARGET_CHANNELS = 8
TARGET_NAMES = (
    "depth", "pos_u", "pos_v", "area",
    "principal_sin", "principal_cos", "slide_sin", "slide_cos",
)


def rest_grid(extent=DEFAULT_EXTENT) -> np.ndarray:
    """Regular axis-aligned marker grid spanning [0, w] x [0, h] at z = 0.

    Row-major: index = iy * GRID_SIDE + ix.
    """
    w, h, _ = extent
    xs = np.linspace(0.0, w, GRID_SIDE)
    ys = np.linspace(0.0, h, GRID_SIDE)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    pts = np.zeros((N_MARKERS, 3), dtype=np.float64)
    pts[:, 0] = gx.ravel()
    pts[:, 1] = gy.ravel()
    return pts


def grid_spacing_mm(extent=DEFAULT_EXTENT) -> float:
    return extent[0] / (GRID_SIDE - 1)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)  # copy so the caller's buffer stays writable
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MarkerFrame:
    """Rest and deformed marker clouds, index-aligned, in sensor millimetres."""

    rest: np.ndarray
    deformed: np.ndarray
    sensor_extent: tuple[float, float, float] = DEFAULT_EXTENT

    def __post_init__(self):
        rest = np.asarray(self.rest, dtype=np.float64)
        deformed = np.asarray(self.deformed, dtype=np.float64)
        if rest.shape != (N_MARKERS, 3) or deformed.shape != (N_MARKERS, 3):
            raise ValueError(
                f"marker frame needs {N_MARKERS}x3 rest/deformed arrays, "
                f"got {rest.shape} and {deformed.shape}"
            )
        if not (np.isfinite(rest).all() and np.isfinite(deformed).all()):
            raise ValueError("marker coordinates must be finite")
        expected = rest_grid(self.sensor_extent)
        # Grid positions may round-trip through 32-bit storage.
        if not np.allclose(rest, expected, atol=1e-4):
            raise ValueError("rest positions must form the regular sensor grid")
        object.__setattr__(self, "rest", _freeze(rest))
        object.__setattr__(self, "deformed", _freeze(deformed))
        object.__setattr__(self, "sensor_extent", tuple(float(v) for v in self.sensor_extent))


@dataclass(frozen=True)
class DeformationField:
    """Per-marker displacement vectors (deformed - rest), in millimetres."""

    displacement: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.displacement, dtype=np.float64)
        if d.shape != (N_MARKERS, 3):
            raise ValueError(f"displacement must be {N_MARKERS}x3, got {d.shape}")
        object.__setattr__(self, "displacement", _freeze(d))

    @property
    def normal(self) -> np.ndarray:
        """Signed normal component (dz); indentation is negative."""
        return self.displacement[:, 2]

    @property
    def tangential(self) -> np.ndarray:
        """In-plane components (dx, dy)."""
        return self.displacement[:, :2]


def deformation_field(frame: MarkerFrame) -> DeformationField:
    """Elementwise deformed - rest."""
    if frame.rest.shape != frame.deformed.shape:
        raise ValueError("rest/deformed length mismatch")
    return DeformationField(frame.deformed - frame.rest)


@dataclass(frozen=True)
class ContactState:
    """Annotated physical contact state. ``None`` marks an invalid attribute.

    ``twist`` is one of {"clockwise", "counterclockwise", "none"} when valid;
    "none" is a valid value stating the absence of rotation.
    """

    depth_mm: float
    area_fraction: float
    centroid: tuple[float, float] | None = None
    principal_axis_deg: float | None = None
    slide_deg: float | None = None
    twist: str | None = None
    shape: str | None = None
    texture: str | None = None

    def __post_init__(self):
        if not (self.depth_mm >= 0.0):
            raise ValueError(f"depth_mm must be >= 0, got {self.depth_mm}")
        if not (0.0 <= self.area_fraction <= 1.0):
            raise ValueError(f"area_fraction must be in [0, 1], got {self.area_fraction}")
        if (self.area_fraction == 0.0) != (self.depth_mm == 0.0):
            raise ValueError("no-contact consistency: area_fraction = 0 iff depth_mm = 0")
        if self.centroid is not None:
            u, v = self.centroid
            if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
                raise ValueError(f"centroid must lie in [0,1]^2, got {self.centroid}")
            object.__setattr__(self, "centroid", (float(u), float(v)))
        if self.principal_axis_deg is not None and not (0.0 <= self.principal_axis_deg < 180.0):
            raise ValueError(f"principal_axis_deg must be in [0, 180), got {self.principal_axis_deg}")
        if self.slide_deg is not None and not (0.0 <= self.slide_deg < 360.0):
            raise ValueError(f"slide_deg must be in [0, 360), got {self.slide_deg}")
        if self.twist is not None and self.twist not in TWISTS:
            raise ValueError(f"twist must be one of {TWISTS}, got {self.twist!r}")
        if self.shape is not None and self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.texture is not None and self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")

    @property
    def validity(self) -> dict[str, bool]:
        return {
            "depth": True,
            "centroid": self.centroid is not None,
            "area": True,
            "principal_axis": self.principal_axis_deg is not None,
            "slide": self.slide_deg is not None,
            "twist": self.twist is not None,
            "shape": self.shape is not None,
            "texture": self.texture is not None,
        }


@dataclass(frozen=True)
class NormalizedSample:
    """Encoder-ready sample: 529 six-dim point features plus regression targets.

    Features are [rest_x, rest_y, rest_z, dx, dy, dz] mapped to [-1, 1].
    Targets are [depth, u, v, area, sin 2*principal, cos 2*principal,
    sin slide, cos slide], each in [-1, 1]; masked channels are zero.
    """

    points: np.ndarray
    targets: np.ndarray
    target_mask: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        tgt = np.asarray(self.targets, dtype=np.float64)
        msk = np.asarray(self.target_mask, dtype=np.float64)
        if pts.shape != (N_MARKERS, 6):
            raise ValueError(f"points must be {N_MARKERS}x6, got {pts.shape}")
        if tgt.shape != (N_TARGET_CHANNELS,) or msk.shape != (N_TARGET_CHANNELS,):
            raise ValueError("targets/target_mask must have 8 channels")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "targets", _freeze(tgt))
        object.__setattr__(self, "target_mask", _freeze(msk))


def point_features(frame: MarkerFrame) -> np.ndarray:
    """Per-marker 6-vectors [rest_x, rest_y, rest_z, dx, dy, dz] in [-1, 1].

    Rest coordinates are affinely mapped from the sensor extent; displacement
    components are divided by the gel depth. Values are clipped so that sensor
    noise cannot push features out of range.
    """
    w, h, gel = frame.sensor_extent
    disp = frame.deformed - frame.rest
    feats = np.empty((N_MARKERS, 6), dtype=np.float64)
    feats[:, 0] = 2.0 * frame.rest[:, 0] / w - 1.0
    feats[:, 1] = 2.0 * frame.rest[:, 1] / h - 1.0
    feats[:, 2] = frame.rest[:, 2] / gel
    feats[:, 3:6] = disp / gel
    return np.clip(feats, -1.0, 1.0)


def normal_map(frame: MarkerFrame) -> np.ndarray:
    """Normalized 23x23 normal-displacement map, the image-modality input."""
    gel = frame.sensor_extent[2]
    dz = (frame.deformed[:, 2] - frame.rest[:, 2]) / gel
    return np.clip(dz, -1.0, 1.0).reshape(GRID_SIDE, GRID_SIDE)


def normalize(frame: MarkerFrame, state: ContactState) -> NormalizedSample:
    """Build the unified [-1, 1] representation of a (frame, state) pair.

    The principal axis has period 180 deg, so its angle is doubled before the
    sin/cos encoding to stay continuous across the wrap. Invalid attributes
    become zeros with a cleared mask bit.
    """
    gel = frame.sensor_extent[2]
    if state.depth_mm > gel:
        raise ValueError(f"depth {state.depth_mm} exceeds gel depth {gel}")
    targets = np.zeros(N_TARGET_CHANNELS, dtype=np.float64)
    mask = np.zeros(N_TARGET_CHANNELS, dtype=np.float64)

    targets[0] = 2.0 * state.depth_mm / gel - 1.0
    mask[0] = 1.0
    if state.centroid is not None:
        targets[1] = 2.0 * state.centroid[0] - 1.0
        targets[2] = 2.0 * state.centroid[1] - 1.0
        mask[1] = mask[2] = 1.0
    targets[3] = 2.0 * state.area_fraction - 1.0
    mask[3] = 1.0
    if state.principal_axis_deg is not None:
        doubled = math.radians(2.0 * state.principal_axis_deg)
        targets[4] = math.sin(doubled)
        targets[5] = math.cos(doubled)
        mask[4] = mask[5] = 1.0
    if state.slide_deg is not None:
        rad = math.radians(state.slide_deg)
        targets[6] = math.sin(rad)
        targets[7] = math.cos(rad)
        mask[6] = mask[7] = 1.0
    return NormalizedSample(point_features(frame), np.clip(targets, -1.0, 1.0), mask)


def denormalize_targets(targets: np.ndarray, extent=DEFAULT_EXTENT) -> dict[str, float]:
    """Inverse affine map of the scalar channels plus atan2 angle recovery."""
    gel = extent[2]
    t = np.asarray(targets, dtype=np.float64)
    out = {
        "depth_mm": (t[0] + 1.0) * gel / 2.0,
        "pos_u": (t[1] + 1.0) / 2.0,
        "pos_v": (t[2] + 1.0) / 2.0,
        "area_fraction": (t[3] + 1.0) / 2.0,
        "principal_axis_deg": math.degrees(math.atan2(t[4], t[5])) / 2.0 % 180.0,
        "slide_deg": math.degrees(math.atan2(t[6], t[7])) % 360.0,
    }
    return out


def wrap_angle_deg(delta: float, period: float) -> float:
    """Wrap an angular difference into (-period/2, period/2]."""
    d = delta % period
    if d > period / 2.0:
        d -= period
    return d
