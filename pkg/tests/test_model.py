"""Tests for instance generation, the partial EDM view, and file I/O."""

import json

import numpy as np
import pytest

from snledm.model import (
    Instance,
    ModelError,
    build_partial_edm,
    center_anchors,
    derive_constants,
    export_edm_csv,
    fit_error,
    generate,
    load_instance,
    save_instance,
    with_bounds,
)
from snledm.operators import gram_to_edm


def small_instance(seed=1, **kw):
    params = dict(r=2, n=8, m=4, radio_range=10.0, density=1.0,
                  noise_sigma=0.0, square_half_width=0.5, seed=seed)
    params.update(kw)
    return generate(**params)


def test_center_anchors_hand_values():
    a_raw = np.array([[1.0, 0.0], [3.0, 0.0], [2.0, 3.0]])
    x_raw = np.zeros((5, 2))
    a, x, t = center_anchors(a_raw, x_raw)
    assert np.allclose(t, [2.0, 1.0])
    assert np.allclose(a, [[-1, -1], [1, -1], [0, 2]])
    assert np.allclose(x, -t)
    # idempotence and identity on centered input
    a2, x2, t2 = center_anchors(a, x)
    assert np.allclose(t2, 0.0)
    assert np.allclose(a2, a)


def test_center_anchors_rank_deficient():
    with pytest.raises(ModelError):
        center_anchors(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), np.zeros((4, 2)))


def test_generate_determinism():
    a = small_instance(seed=7)
    b = small_instance(seed=7)
    assert np.array_equal(a.x_true, b.x_true)
    assert a.sensor_edges == b.sensor_edges
    assert a.anchor_edges == b.anchor_edges


def test_generate_distinct_seeds_differ():
    a = small_instance(seed=1)
    b = small_instance(seed=2)
    assert not np.allclose(a.x_true, b.x_true)


def test_generate_complete_noiseless_matches_configuration():
    inst = small_instance()
    pe = build_partial_edm(inst)
    p = inst.points()
    assert np.allclose(pe.e, gram_to_edm(p @ p.T), atol=1e-12)
    # every pair known
    n_pairs = inst.n * (inst.n - 1) // 2 + inst.n * inst.m
    assert len(inst.sensor_edges) + len(inst.anchor_edges) == n_pairs


def test_generate_invariants():
    inst = generate(r=2, n=12, m=4, radio_range=0.4, density=0.8,
                    noise_sigma=0.1, seed=3, square_half_width=0.5)
    assert np.max(np.abs(inst.a.sum(axis=0))) < 1e-12
    assert inst.seed == 3
    pe = build_partial_edm(inst)
    # anchor block is exact regardless of noise
    assert np.allclose(pe.e[inst.n:, inst.n:], gram_to_edm(inst.a @ inst.a.T))
    # noiseless truth is a zero-residual fit when sigma = 0
    noiseless = generate(r=2, n=12, m=4, radio_range=0.4, density=0.8,
                         noise_sigma=0.0, seed=3, square_half_width=0.5)
    pe0 = build_partial_edm(noiseless)
    p = noiseless.points()
    assert fit_error(p @ p.T, pe0) < 1e-20


def test_generate_rejects_bad_parameters():
    with pytest.raises(ModelError):
        generate(r=2, n=4, m=4, radio_range=1.0, density=1.0, noise_sigma=0.0,
                 square_half_width=1.0, seed=0)
    with pytest.raises(ModelError):
        small_instance(density=0.0)
    with pytest.raises(ModelError):
        small_instance(radio_range=-1.0)


def test_generate_connectivity_unreachable():
    with pytest.raises(ModelError, match="connectivity"):
        generate(r=2, n=16, m=5, radio_range=0.01, density=0.1,
                 noise_sigma=0.0, square_half_width=2.0, seed=0)


def test_partial_edm_validation():
    inst = small_instance()
    bad = with_bounds(inst, upper_bounds=[(0, 1, 1.0)], lower_bounds=[(0, 1, 2.0)])
    with pytest.raises(ModelError, match="contradictory"):
        build_partial_edm(bad)


def test_derived_constants_vanish_on_anchor_block():
    inst = small_instance(seed=2)
    pe = build_partial_edm(inst)
    consts = derive_constants(pe, inst.a)
    n = inst.n
    assert np.allclose(consts.ebar[n:, n:], 0.0, atol=1e-12)


def test_instance_translation_invariance():
    # distances are unchanged by the recorded centering translation
    inst = small_instance(seed=4)
    p = inst.points() + inst.translation
    pe = build_partial_edm(inst)
    assert np.allclose(gram_to_edm(p @ p.T), gram_to_edm(inst.points() @ inst.points().T),
                       atol=1e-9)


def test_save_load_roundtrip(tmp_path):
    inst = generate(r=2, n=9, m=4, radio_range=0.5, density=0.7,
                    noise_sigma=0.05, seed=11, square_half_width=0.5)
    inst = with_bounds(inst, upper_bounds=[(0, 5, 2.0)], lower_bounds=[(1, 2, 0.1)])
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    back = load_instance(path)
    assert back.r == inst.r and back.n == inst.n and back.m == inst.m
    assert np.allclose(back.a, inst.a)
    assert np.allclose(back.x_true, inst.x_true)
    assert np.allclose(back.translation, inst.translation)
    assert back.seed == inst.seed
    assert back.sensor_edges == [tuple(e) for e in inst.sensor_edges]
    assert back.upper_bounds == [tuple(b) for b in inst.upper_bounds]
    assert back.lower_bounds == [tuple(b) for b in inst.lower_bounds]


def test_load_rejects_uncentered_anchors(tmp_path):
    inst = small_instance()
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    doc = json.loads(path.read_text())
    doc["anchors"][0][0] += 1.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelError, match="centered"):
        load_instance(path)


def test_load_missing_field(tmp_path):
    inst = small_instance()
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    doc = json.loads(path.read_text())
    del doc["anchors"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelError, match="missing fields"):
        load_instance(path)


def test_load_malformed_and_version(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ModelError, match="malformed"):
        load_instance(path)
    inst = small_instance()
    good = tmp_path / "inst.json"
    save_instance(inst, good)
    doc = json.loads(good.read_text())
    doc["format_version"] = 99
    good.write_text(json.dumps(doc))
    with pytest.raises(ModelError, match="format_version"):
        load_instance(good)


def test_instance_without_ground_truth(tmp_path):
    inst = small_instance()
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    doc = json.loads(path.read_text())
    doc["sensors_true"] = None
    path.write_text(json.dumps(doc))
    back = load_instance(path)
    assert back.x_true is None
    with pytest.raises(ModelError):
        back.points()
    build_partial_edm(back)     # matrix view works from stored edges


def test_export_edm_csv(tmp_path):
    inst = generate(r=2, n=6, m=3, radio_range=0.5, density=0.8,
                    noise_sigma=0.0, seed=5, square_half_width=0.5)
    pe = build_partial_edm(inst)
    path = tmp_path / "edm.csv"
    export_edm_csv(pe, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == pe.total + 1
    # unknown entries are blank, known entries parse back exactly
    cells = lines[1].split(",")
    for j, cell in enumerate(cells[1:]):
        if cell:
            assert float(cell) == pe.e[0, j]


def test_instance_validation():
    with pytest.raises(ModelError):
        Instance(r=2, n=5, m=3, a=np.zeros((3, 2)), x_true=None,
                 translation=np.zeros(2), radio_range=1.0, seed=0, noise_sigma=0.0)
