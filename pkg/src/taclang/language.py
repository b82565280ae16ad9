"""Template-based contact descriptions and the discrete numeric token scheme.

Continuous attributes are discretized into bins, one vocabulary token per bin
(<depth_0.0> ... <depth_4.0>, <area_0.01> ... <area_1.0>, <principal_0> ...
<principal_359>, <slide_0> ... <slide_359>, <posx_k>/<posy_k>, twist tokens).
Word tokens harvested from the template bank form the frozen base vocabulary;
numeric tokens are the learnable partition.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .core import TWIST_CCW, TWIST_CW, TWIST_NONE, ContactState, SHAPES, TEXTURES

L_MAX = 64
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

DEPTH_STEP, DEPTH_MAX = 0.1, 4.0
AREA_STEP = 0.01
ANGLE_STEP = 1.0
POS_STEP = 0.05

TWIST_TOKENS = {TWIST_CW: "<twist_cw>", TWIST_CCW: "<twist_ccw>", TWIST_NONE: "<twist_none>"}

_NUMERIC_RE = re.compile(r"^<(depth|area|principal|slide|posx|posy)_([0-9.]+)>$|^<twist_(cw|ccw|none)>$")


def _area_label(k: int) -> str:
    """Bin centers 0.01..1.00 printed with trailing zeros trimmed (0.5, 1.0)."""
    s = f"{k / 100.0:.2f}".rstrip("0")
    if s.endswith("."):
        s += "0"
    return s


def _round_half_up(x: float) -> int:
    # the epsilon absorbs binary representation error at exact bin edges
    return int(math.floor(x + 0.5 + 1e-9))


def bin_encode(attribute: str, value: float) -> str:
    """Token of the nearest bin center, rounding half up at bin edges."""
    if attribute == "depth":
        if not (0.0 <= value <= DEPTH_MAX):
            raise ValueError(f"depth {value} outside [0, {DEPTH_MAX}]")
        return f"<depth_{_round_half_up(value / DEPTH_STEP) * DEPTH_STEP:.1f}>"
    if attribute == "area":
        if not (0.0 <= value <= 1.0):
            raise ValueError(f"area {value} outside [0, 1]")
        k = min(max(_round_half_up(value / AREA_STEP), 1), 100)
        return f"<area_{_area_label(k)}>"
    if attribute in ("principal", "slide"):
        if not (0.0 <= value < 360.0):
            raise ValueError(f"{attribute} angle {value} outside [0, 360)")
        return f"<{attribute}_{_round_half_up(value) % 360}>"
    if attribute in ("posx", "posy"):
        if not (0.0 <= value <= 1.0):
            raise ValueError(f"{attribute} {value} outside [0, 1]")
        return f"<{attribute}_{min(int(value / POS_STEP + 1e-9), 19)}>"
    if attribute == "twist":
        if value not in TWIST_TOKENS:
            raise ValueError(f"twist value {value!r} not encodable")
        return TWIST_TOKENS[value]
    raise ValueError(f"unknown attribute {attribute!r}")


def bin_decode(token: str):
    """Bin center of a numeric token; raises TypeError for word tokens."""
    m = _NUMERIC_RE.match(token)
    if m is None:
        raise TypeError(f"{token!r} is not a numeric token")
    if m.group(3) is not None:
        return {"cw": TWIST_CW, "ccw": TWIST_CCW, "none": TWIST_NONE}[m.group(3)]
    family, raw = m.group(1), float(m.group(2))
    if family == "depth":
        return _round_half_up(raw / DEPTH_STEP) * DEPTH_STEP
    if family == "area":
        return min(max(_round_half_up(raw / AREA_STEP), 1), 100) * AREA_STEP
    if family in ("principal", "slide"):
        return float(int(raw) % 360)
    return min(int(round(raw)), 19) * POS_STEP + POS_STEP / 2.0


def numeric_tokens() -> list[str]:
    toks = [f"<depth_{k * DEPTH_STEP:.1f}>" for k in range(41)]
    toks += [f"<area_{_area_label(k)}>" for k in range(1, 101)]
    toks += [f"<principal_{d}>" for d in range(360)]
    toks += [f"<slide_{d}>" for d in range(360)]
    toks += [f"<posx_{k}>" for k in range(20)]
    toks += [f"<posy_{k}>" for k in range(20)]
    toks += [TWIST_TOKENS[TWIST_CW], TWIST_TOKENS[TWIST_CCW], TWIST_TOKENS[TWIST_NONE]]
    return toks


# --- template bank ---------------------------------------------------------
# Each template is an ordered list of (required slot names, clause text).
# A clause is emitted only when all of its slots are valid; {object} degrades
# gracefully when shape or texture is missing.

SLOT_OBJECT = ("object",)

TEMPLATES = [
    [(SLOT_OBJECT, "{object}"), (("depth",), ", pressed {depth}"),
     (("position",), " at {position}"), (("area",), " with a {area} contact area"),
     (("axis",), ", oriented along {axis}"), (("slide",), ", sliding towards {slide}"),
     (("twist",), " and twisting {twist}"), ((), ".")],
    [(("depth",), "pressed {depth}"), (SLOT_OBJECT, ", {object}"),
     (("area",), " covers a {area} contact area"), (("position",), " at {position}"),
     (("slide",), ", slides towards {slide}"), (("twist",), ", twists {twist}"),
     (("axis",), " and lies along {axis}"), ((), ".")],
    [(SLOT_OBJECT, "the sensor touches {object}"), (("position",), " at {position}"),
     (("depth",), ", pressing {depth}"), (("axis",), " along {axis}"),
     (("area",), " over a {area} contact area"), (("twist",), ", twisting {twist}"),
     (("slide",), " while sliding towards {slide}"), ((), ".")],
    [(("area",), "a {area} contact area"), (SLOT_OBJECT, " from {object}"),
     (("depth",), ", pressed {depth}"), (("position",), " at {position}"),
     (("twist",), ", twisting {twist}"), (("slide",), ", sliding towards {slide}"),
     (("axis",), ", oriented along {axis}"), ((), ".")],
    [(SLOT_OBJECT, "contact with {object}"), (("depth",), " pressed {depth}"),
     (("axis",), ", elongated along {axis}"), (("position",), ", centred at {position}"),
     (("area",), ", area {area}"), (("slide",), ", shearing towards {slide}"),
     (("twist",), ", rotating {twist}"), ((), ".")],
    [(("position",), "at {position}"), (SLOT_OBJECT, " {object} presses"),
     (("depth",), " {depth}"), (("area",), " with {area} of the pad covered"),
     (("slide",), ", moving towards {slide}"), (("axis",), " along {axis}"),
     (("twist",), ", twisting {twist}"), ((), ".")],
    [(SLOT_OBJECT, "{object} indents the gel"), (("depth",), " {depth}"),
     (("position",), " at {position}"), (("axis",), ", aligned with {axis}"),
     (("slide",), ", dragging towards {slide}"), (("area",), " across a {area} area"),
     (("twist",), " and rotating {twist}"), ((), ".")],
    [(("depth",), "an indentation pressed {depth}"), (("area",), " with a {area} footprint"),
     (SLOT_OBJECT, " left by {object}"), (("axis",), ", oriented along {axis}"),
     (("position",), " near {position}"), (("twist",), ", twisting {twist}"),
     (("slide",), ", sliding towards {slide}"), ((), ".")],
    [(SLOT_OBJECT, "the pad senses {object}"), (("slide",), " sliding towards {slide}"),
     (("twist",), " and twisting {twist}"), (("depth",), ", pressed {depth}"),
     (("position",), " at {position}"), (("area",), " over a {area} contact patch"),
     (("axis",), " along {axis}"), ((), ".")],
    [(("twist",), "twisting {twist}"), (("slide",), " and sliding towards {slide}"),
     (SLOT_OBJECT, ", {object}"), (("depth",), " is pressed {depth}"),
     (("area",), " over a {area} region"), (("axis",), " oriented along {axis}"),
     (("position",), " around {position}"), ((), ".")],
]

DEPTH_WORDS = ("lightly", "moderately", "deeply")  # cut points 0.5 / 2.0 mm
AREA_WORDS = ("small", "medium", "large")  # cut points 0.05 / 0.2
AXIS_WORDS = ("horizontal", "diagonal", "vertical", "antidiagonal")
SLIDE_WORDS = (
    "the-right", "the-upper-right", "the-top", "the-upper-left",
    "the-left", "the-lower-left", "the-bottom", "the-lower-right",
)
ZONE_WORDS = ("left", "middle", "right"), ("bottom", "center", "top")
TWIST_WORDS = {TWIST_CW: "clockwise", TWIST_CCW: "counterclockwise", TWIST_NONE: "barely"}


def _depth_word(mm: float) -> str:
    if mm < 0.5:
        return DEPTH_WORDS[0]
    return DEPTH_WORDS[1] if mm < 2.0 else DEPTH_WORDS[2]


def _area_word(frac: float) -> str:
    if frac < 0.05:
        return AREA_WORDS[0]
    return AREA_WORDS[1] if frac < 0.2 else AREA_WORDS[2]


def _axis_word(deg: float) -> str:
    idx = int(((deg + 22.5) % 180.0) // 45.0)
    return AXIS_WORDS[idx]


def _slide_word(deg: float) -> str:
    return SLIDE_WORDS[int(((deg + 22.5) % 360.0) // 45.0)]


def _zone_word(u: float, v: float) -> str:
    col = ZONE_WORDS[0][min(int(u * 3), 2)]
    row = ZONE_WORDS[1][min(int(v * 3), 2)]
    return "the-middle" if (col, row) == ("middle", "center") else f"the-{row}-{col}"


def _slot_values(state: ContactState, style: str) -> dict[str, str]:
    obj_words = [w for w in (state.texture, state.shape) if w is not None]
    slots: dict[str, str] = {
        "object": ("a " + " ".join(obj_words) + " object") if obj_words else "an object"
    }
    if style == "plain":
        slots["depth"] = _depth_word(state.depth_mm)
        slots["area"] = _area_word(state.area_fraction)
        if state.centroid is not None:
            slots["position"] = _zone_word(*state.centroid)
        if state.principal_axis_deg is not None:
            slots["axis"] = f"a {_axis_word(state.principal_axis_deg)} direction"
        if state.slide_deg is not None:
            slots["slide"] = _slide_word(state.slide_deg)
        if state.twist is not None:
            slots["twist"] = TWIST_WORDS[state.twist]
    else:
        slots["depth"] = f"to {bin_encode('depth', state.depth_mm)}"
        slots["area"] = bin_encode("area", state.area_fraction)
        if state.centroid is not None:
            u, v = state.centroid
            slots["position"] = f"{bin_encode('posx', u)} {bin_encode('posy', v)}"
        if state.principal_axis_deg is not None:
            canonical = _round_half_up(state.principal_axis_deg % 180.0) % 180
            slots["axis"] = f"<principal_{canonical}>"
        if state.slide_deg is not None:
            slots["slide"] = bin_encode("slide", state.slide_deg)
        if state.twist is not None:
            slots["twist"] = bin_encode("twist", state.twist)
    return slots


def describe(state: ContactState, style: str = "tokenized", variant: int = 0) -> str:
    """Render one of the ten fixed templates; invalid slots drop their clause."""
    if style not in ("plain", "tokenized"):
        raise ValueError(f"unknown style {style!r}")
    if not (0 <= variant < len(TEMPLATES)):
        raise ValueError(f"variant must be in [0, {len(TEMPLATES)}), got {variant}")
    slots = _slot_values(state, style)
    if "depth" not in slots:
        raise ValueError("a description needs at least a valid depth")
    parts = []
    for required, text in TEMPLATES[variant]:
        if all(r in slots for r in required):
            parts.append(text.format(**slots))
    sentence = "".join(parts)
    sentence = sentence[0].upper() + sentence[1:]
    return sentence


def words_of(text: str) -> list[str]:
    """Whitespace tokens with sentence punctuation stripped; words lowercased."""
    out = []
    for raw in text.split():
        tok = raw.strip(",.")
        if not tok:
            continue
        out.append(tok if tok.startswith("<") else tok.lower())
    return out


def _harvest_base_words() -> list[str]:
    demo = ContactState(
        depth_mm=1.0, area_fraction=0.1, centroid=(0.5, 0.5),
        principal_axis_deg=10.0, slide_deg=10.0, twist=TWIST_CW,
        shape="sphere", texture="smooth",
    )
    words: set[str] = set()
    for variant in range(len(TEMPLATES)):
        for style in ("plain", "tokenized"):
            for w in words_of(describe(demo, style, variant)):
                if not w.startswith("<"):
                    words.add(w)
    words.update(s.lower() for s in SHAPES)
    words.update(t.lower() for t in TEXTURES)
    words.update(DEPTH_WORDS)
    words.update(AREA_WORDS)
    words.update(AXIS_WORDS)
    words.update(SLIDE_WORDS)
    words.update(TWIST_WORDS.values())
    for u in (0.1, 0.5, 0.9):
        for v in (0.1, 0.5, 0.9):
            words.add(_zone_word(u, v))
    words.update({"a", "an", "direction", "object"})
    return sorted(words)


@dataclass(frozen=True)
class Vocabulary:
    """Dense, deterministic token table with a frozen/learnable partition."""

    tokens: tuple[str, ...]
    learnable_mask: tuple[bool, ...]

    def __post_init__(self):
        if len(self.tokens) != len(set(self.tokens)):
            raise ValueError("duplicate tokens in vocabulary")
        if len(self.tokens) != len(self.learnable_mask):
            raise ValueError("learnable mask length mismatch")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK_TOKEN]

    @property
    def n_base(self) -> int:
        """Base (frozen) tokens occupy the leading id range."""
        return len(self.tokens) - sum(self.learnable_mask)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def encode(self, text: str) -> list[int]:
        ids = [self.id_of(w) for w in words_of(text)]
        if len(ids) > L_MAX:
            raise ValueError(f"description longer than L_MAX={L_MAX}")
        return ids + [self.pad_id] * (L_MAX - len(ids))

    def hash(self) -> str:
        payload = json.dumps(
            {"tokens": list(self.tokens), "learnable": list(self.learnable_mask)},
            sort_keys=True,
        ).encode()
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str | Path) -> None:
        rows = {t: {"id": i, "learnable": bool(self.learnable_mask[i])}
                for i, t in enumerate(self.tokens)}
        Path(path).write_text(json.dumps(rows, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        rows = json.loads(Path(path).read_text())
        ordered = sorted(rows.items(), key=lambda kv: kv[1]["id"])
        return cls(
            tokens=tuple(t for t, _ in ordered),
            learnable_mask=tuple(bool(v["learnable"]) for _, v in ordered),
        )


def build_vocabulary() -> Vocabulary:
    base = [PAD_TOKEN, UNK_TOKEN] + _harvest_base_words()
    numeric = numeric_tokens()
    return Vocabulary(
        tokens=tuple(base + numeric),
        learnable_mask=tuple([False] * len(base) + [True] * len(numeric)),
    )


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence, padded with <pad> as a suffix."""

    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) != L_MAX:
            raise ValueError(f"token sequence must have length {L_MAX}")

    @classmethod
    def from_text(cls, text: str, vocab: Vocabulary) -> "TokenSequence":
        return cls(tuple(vocab.encode(text)))


def describe_tokens(
    state: ContactState, vocab: Vocabulary, style: str = "tokenized", variant: int = 0
) -> tuple[str, TokenSequence]:
    text = describe(state, style, variant)
    return text, TokenSequence.from_text(text, vocab)
