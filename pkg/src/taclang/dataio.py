"""On-disk formats: binary marker frames (.fgt) and JSON-lines label sidecars.

Binary layout (little-endian): magic "FGT1", u32 grid_w, u32 grid_h,
3 x f32 sensor extent, then 529x3 f32 rest points, then 529x3 f32 deformed
points.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import GRID_SIDE, N_MARKERS, ContactState, MarkerFrame

MAGIC = b"FGT1"
_HEADER = struct.Struct("<4sII3f")
SAMPLE_SUFFIX = ".fgt"
LABELS_NAME = "labels.jsonl"
SAMPLES_DIR = "samples"


def write_frame(path: str | Path, frame: MarkerFrame) -> None:
    path = Path(path)
    w, h, gel = frame.sensor_extent
    buf = bytearray(_HEADER.pack(MAGIC, GRID_SIDE, GRID_SIDE, w, h, gel))
    buf += frame.rest.astype("<f4").tobytes()
    buf += frame.deformed.astype("<f4").tobytes()
    path.write_bytes(bytes(buf))


def read_frame(path: str | Path) -> MarkerFrame:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated sample file")
    magic, gw, gh, w, h, gel = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if gw != GRID_SIDE or gh != GRID_SIDE:
        raise ValueError(f"{path}: unsupported grid {gw}x{gh}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size != 2 * N_MARKERS * 3:
        raise ValueError(f"{path}: expected {2 * N_MARKERS * 3} floats, got {body.size}")
    rest = body[: N_MARKERS * 3].reshape(N_MARKERS, 3).astype(np.float64)
    deformed = body[N_MARKERS * 3 :].reshape(N_MARKERS, 3).astype(np.float64)
    return MarkerFrame(rest, deformed, (float(w), float(h), float(gel)))


def state_to_dict(state: ContactState) -> dict:
    return {
        "depth_mm": state.depth_mm,
        "centroid": list(state.centroid) if state.centroid is not None else None,
        "area_fraction": state.area_fraction,
        "principal_axis_deg": state.principal_axis_deg,
        "slide_deg": state.slide_deg,
        "twist": state.twist,
        "shape": state.shape,
        "texture": state.texture,
    }


def state_from_dict(d: dict) -> ContactState:
    centroid = d.get("centroid")
    return ContactState(
        depth_mm=float(d["depth_mm"]),
        area_fraction=float(d["area_fraction"]),
        centroid=tuple(centroid) if centroid is not None else None,
        principal_axis_deg=d.get("principal_axis_deg"),
        slide_deg=d.get("slide_deg"),
        twist=d.get("twist"),
        shape=d.get("shape"),
        texture=d.get("texture"),
    )


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def sample_path(corpus_dir: str | Path, sample_id: str) -> Path:
    return Path(corpus_dir) / SAMPLES_DIR / f"{sample_id}{SAMPLE_SUFFIX}"


def labels_path(corpus_dir: str | Path) -> Path:
    return Path(corpus_dir) / LABELS_NAME


def load_corpus(corpus_dir: str | Path) -> list[tuple[str, MarkerFrame, dict]]:
    """Load every (id, frame, label row) of a generated corpus, sorted by id."""
    corpus_dir = Path(corpus_dir)
    lp = labels_path(corpus_dir)
    if not lp.exists():
        raise FileNotFoundError(f"missing labels file {lp}")
    rows = read_jsonl(lp)
    out = []
    for row in sorted(rows, key=lambda r: r["id"]):
        sp = sample_path(corpus_dir, row["id"])
        if not sp.exists():
            raise FileNotFoundError(f"missing sample file {sp}")
        out.append((row["id"], read_frame(sp), row))
    return out
