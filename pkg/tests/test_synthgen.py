import math
from collections import Counter

import numpy as np
import pytest

from taclang import dataio
from taclang.core import TWIST_CCW, deformation_field
from taclang.synthgen import (
    GENERATOR_SHAPES,
    ContactScript,
    GeneratorConfig,
    Indenter,
    generate_corpus,
    indent,
    normal_force_proxy,
    principal_axis_of_points,
    splitmix64,
)


def test_splitmix64_is_stable():
    assert splitmix64(0, 0) == splitmix64(0, 0)
    assert splitmix64(0, 0) != splitmix64(0, 1)
    assert splitmix64(1, 0) != splitmix64(0, 0)
    assert 0 <= splitmix64(123456, 789) < 2**64


def test_sphere_press_exact_depth_before_smoothing():
    # closed-form clearance: the sphere apex sits on a marker at (0.5, 0.5)
    ind = Indenter("sphere", {"radius": 3.0}, center=(0.5, 0.5))
    frame, state = indent(ind, ContactScript("press", depth_mm=1.0), membrane_sigma_mm=0.0)
    indentation = -(frame.deformed[:, 2] - frame.rest[:, 2])
    assert indentation.max() == pytest.approx(1.0, abs=1e-12)
    assert state.depth_mm == 1.0
    # contact disc radius sqrt(r^2 - (r-d)^2) = sqrt(5) mm
    rest = frame.rest
    rho = np.hypot(rest[:, 0] - 10.0, rest[:, 1] - 10.0)
    assert np.all(indentation[rho > math.sqrt(5.0) + 1e-9] == 0.0)


def test_press_depth_to_zero_limit():
    ind = Indenter("sphere", {"radius": 3.0}, center=(0.5, 0.5))
    frame, state = indent(ind, ContactScript("press", depth_mm=1e-6))
    disp = np.abs(frame.deformed - frame.rest)
    assert disp.max() <= 1e-6 + 1e-12
    assert state.area_fraction <= 2 / 529


def test_ellipse_principal_axis_matches_orientation():
    ind = Indenter("ellipse", {"a": 6.0, "b": 2.0}, center=(0.5, 0.5), rotation_deg=30.0)
    _, state = indent(ind, ContactScript("press", depth_mm=1.5))
    assert state.principal_axis_deg == pytest.approx(30.0, abs=2.0)


def test_circular_shapes_have_gated_axis():
    for shape, params in (("sphere", {"radius": 4.0}), ("cylinder", {"radius": 4.0})):
        _, state = indent(Indenter(shape, params, center=(0.5, 0.5)),
                          ContactScript("press", depth_mm=2.0))
        assert state.principal_axis_deg is None


def test_indent_determinism():
    ind = Indenter("edge", {"length": 8.0, "width": 1.5}, texture="bumpy",
                   texture_params={"amplitude": 0.15, "spacing": 1.5},
                   center=(0.4, 0.6), rotation_deg=77.0)
    script = ContactScript("press_slide", depth_mm=1.2, slide_direction_deg=45.0,
                           slide_distance_mm=1.0, noise_sigma_mm=0.02, seed=99)
    f1, s1 = indent(ind, script)
    f2, s2 = indent(ind, script)
    assert np.array_equal(f1.deformed, f2.deformed)
    assert s1 == s2


def test_footprint_outside_plane_raises():
    ind = Indenter("sphere", {"radius": 5.0}, center=(0.12, 0.5))
    with pytest.raises(ValueError):
        indent(ind, ContactScript("press", depth_mm=1.0))


def test_depth_monotonicity_of_area():
    ind = Indenter("sphere", {"radius": 4.0}, center=(0.47, 0.52))
    areas = [
        indent(ind, ContactScript("press", depth_mm=d))[1].area_fraction
        for d in (0.3, 0.8, 1.5, 2.5, 3.5)
    ]
    assert all(a2 >= a1 for a1, a2 in zip(areas, areas[1:]))


def test_pose_rotation_equivariance_of_axis():
    base = 20.0
    for delta in (0.0, 40.0, 125.0):
        ind = Indenter("ellipse", {"a": 6.0, "b": 2.0}, center=(0.5, 0.5),
                       rotation_deg=base + delta)
        _, state = indent(ind, ContactScript("press", depth_mm=1.5))
        expected = (base + delta) % 180.0
        err = abs((state.principal_axis_deg - expected + 90.0) % 180.0 - 90.0)
        assert err < 2.0, (delta, state.principal_axis_deg)


def test_twist_chirality_curl_sign():
    ind = Indenter("cylinder", {"radius": 4.0}, center=(0.5, 0.5))
    script = ContactScript("press_twist", depth_mm=1.5, twist_chirality=TWIST_CCW,
                           twist_angle_deg=8.0)
    frame, state = indent(ind, script)
    assert state.twist == TWIST_CCW
    field = deformation_field(frame)
    region = np.abs(field.normal) > 0.0
    rel = frame.rest[region, :2] - frame.rest[region, :2].mean(axis=0)
    t = field.tangential[region]
    curl_z = (rel[:, 0] * t[:, 1] - rel[:, 1] * t[:, 0]).sum()
    assert curl_z > 0.0


def test_slide_engagement_scaling():
    # markers outside contact do not shear
    ind = Indenter("cylinder", {"radius": 3.0}, center=(0.5, 0.5))
    script = ContactScript("press_slide", depth_mm=1.0, slide_direction_deg=0.0,
                           slide_distance_mm=1.0)
    frame, _ = indent(ind, script)
    field = deformation_field(frame)
    outside = np.abs(field.normal) == 0.0
    assert np.all(field.tangential[outside] == 0.0)
    # fully engaged markers carry the full slide vector
    inside = -field.normal >= 0.999
    assert np.allclose(field.tangential[inside, 0], 1.0, atol=1e-9)
    assert np.allclose(field.tangential[inside, 1], 0.0, atol=1e-12)


def test_principal_axis_of_points_collinear():
    xs = np.stack([np.linspace(0, 5, 9), np.zeros(9)], axis=1)
    angle, ratio = principal_axis_of_points(xs)
    assert angle == pytest.approx(0.0, abs=1e-9)
    assert ratio == math.inf


def test_force_proxy_positive_under_press():
    ind = Indenter("cylinder", {"radius": 3.0}, center=(0.5, 0.5))
    frame, _ = indent(ind, ContactScript("press", depth_mm=1.0))
    assert normal_force_proxy(frame) > 0.0


def test_generate_corpus_determinism(tmp_path):
    cfg = GeneratorConfig()
    generate_corpus(cfg, 5, 77, tmp_path / "a")
    generate_corpus(cfg, 5, 77, tmp_path / "b")
    for i in range(5):
        fa = (tmp_path / "a" / "samples" / f"{i:06d}.fgt").read_bytes()
        fb = (tmp_path / "b" / "samples" / f"{i:06d}.fgt").read_bytes()
        assert fa == fb
    assert (tmp_path / "a" / "labels.jsonl").read_bytes() == (tmp_path / "b" / "labels.jsonl").read_bytes()


def test_generate_corpus_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(GeneratorConfig(), 0, 1, tmp_path)


def test_corpus_categorical_coverage(small_noiseless_corpus):
    _, rows = small_noiseless_corpus
    shapes = Counter(r["shape"] for r in rows)
    textures = Counter(r["texture"] for r in rows)
    primitives = Counter(r["meta"]["primitive"] for r in rows)
    assert set(shapes) == {"sphere", "cylinder", "edge", "ellipse", "ridge"}
    assert set(textures) == {"smooth", "bumpy", "ridged"}
    assert set(primitives) == {"press", "press_slide", "press_twist"}


def test_thousand_sample_corpus_balance(tmp_path):
    rows = generate_corpus(GeneratorConfig(), 1000, 3, tmp_path / "k")
    shapes = Counter(r["shape"] for r in rows)
    assert all(shapes[s] >= 50 for s in GENERATOR_SHAPES), shapes
    # every coarse evaluation bin is hit
    from taclang.evaluation import area_bin, depth_bin, position_bin, slide_bin

    assert {depth_bin(r["depth_mm"]) for r in rows} >= set(range(7))
    assert {position_bin(*r["centroid"]) for r in rows} == set(range(16))
    assert {slide_bin(r["slide_deg"]) for r in rows if r["slide_deg"] is not None} == set(range(8))
    assert {area_bin(r["area_fraction"]) for r in rows} >= {0, 1, 2, 3}


def test_script_validation():
    with pytest.raises(ValueError):
        ContactScript("press", depth_mm=0.0)
    with pytest.raises(ValueError):
        ContactScript("press", depth_mm=1.0, approach_tilt_deg=20.0)
    with pytest.raises(ValueError):
        ContactScript("squeeze", depth_mm=1.0)
    with pytest.raises(ValueError):
        Indenter("sphere", {"radius": -1.0})


def test_labels_round_trip_through_jsonl(small_noiseless_corpus):
    corpus_dir, rows = small_noiseless_corpus
    loaded = dataio.read_jsonl(dataio.labels_path(corpus_dir))
    assert loaded == rows
