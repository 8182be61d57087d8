import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diner.coord_table import CoordTable, lattice, new_table
from diner.exceptions import DegenerateRangeError, ShapeError
from diner.network import BackboneSpec, forward, init_backbone
from diner.spectral import (band_edges, band_energies, band_ratios, extract_learned_inr,
                            post_interpolate)

side = st.sampled_from([4, 8, 16, 32])


def test_constant_image_is_all_band_zero():
    rep = band_ratios(np.full((16, 16), 0.3))
    assert np.allclose(rep.band_ratios, [1, 0, 0, 0], atol=1e-12)


def test_checkerboard_is_all_outer_band():
    y, x = np.indices((16, 16))
    rep = band_ratios(np.where((x + y) % 2 == 0, 1.0, -1.0))
    assert np.allclose(rep.band_ratios, [0, 0, 0, 1], atol=1e-12)


def test_band_edges_cover_half_diagonal():
    edges = band_edges(4)
    assert edges[0][0] == 0.0
    assert abs(edges[-1][1] - np.sqrt(2) / 2) < 1e-15
    widths = [hi - lo for lo, hi in edges]
    assert np.allclose(widths, widths[0])


def test_band_oracle_by_loop():
    img = np.random.default_rng(0).random((8, 8))
    mag = np.abs(np.fft.fft2(img))
    expected = np.zeros(4)
    for u in range(8):
        for v in range(8):
            fy = u / 8 if u < 4 else u / 8 - 1
            fx = v / 8 if v < 4 else v / 8 - 1
            k = min(int(np.hypot(fy, fx) / (np.sqrt(2) / 2) * 4), 3)
            expected[k] += mag[u, v]
    assert np.allclose(band_energies(img), expected, rtol=1e-12)


def test_channels_are_averaged():
    img = np.random.default_rng(1).random((8, 8, 3))
    assert band_ratios(img).band_ratios == band_ratios(img.mean(axis=-1)).band_ratios


def test_report_json_fields():
    doc = json.loads(band_ratios(np.eye(8)).to_json())
    assert set(doc) == {"band_edges", "band_ratios", "total_energy"}
    assert abs(sum(doc["band_ratios"]) - 1) < 1e-9


def test_non_2d_rejected():
    with pytest.raises(ShapeError):
        band_ratios(np.zeros(16))


@given(side, st.integers(0, 2**32 - 1))
def test_ratios_sum_to_one(n, seed):
    rep = band_ratios(np.random.default_rng(seed).random((n, n)))
    assert abs(sum(rep.band_ratios) - 1) < 1e-9
    assert min(rep.band_ratios) >= 0


@given(side, st.integers(0, 2**32 - 1), st.floats(0.01, 5.0))
def test_offset_only_changes_band_zero(n, seed, offset):
    img = np.random.default_rng(seed).random((n, n))
    a, b = band_energies(img), band_energies(img + offset)
    assert np.allclose(a[1:], b[1:], rtol=1e-9, atol=1e-9)
    assert b[0] > a[0] - 1e-9


@given(side, st.integers(0, 2**32 - 1))
def test_transpose_symmetry(n, seed):
    img = np.random.default_rng(seed).random((n, n))
    assert np.allclose(band_ratios(img).band_ratios, band_ratios(img.T).band_ratios, atol=1e-12)


# -------------------------------------------------------- learned INR

def test_learned_inr_on_grid_table_matches_plain_forward():
    bk = init_backbone(BackboneSpec(2, 3, width=16), 0)
    table = new_table(8 * 8, 2, "grid", shape=(8, 8))
    learned = extract_learned_inr(bk, table, (8, 8))
    plain = np.clip(forward(bk, lattice((8, 8))), 0, 1).reshape(8, 8, 3)
    assert np.max(np.abs(learned - plain)) < 1e-12


def test_learned_inr_of_constant_network():
    bk = init_backbone(BackboneSpec(2, 1, width=4), 0)
    for W in bk.weights:
        W[:] = 0
    bk.biases[-1][:] = 0.25
    table = new_table(16, 2, "uniform", rng=0, scale=0.5)
    assert np.all(extract_learned_inr(bk, table, (5, 7)) == 0.25)


def test_learned_inr_degenerate_box():
    bk = init_backbone(BackboneSpec(2, 1), 0)
    table = CoordTable(np.column_stack([np.linspace(0, 1, 4), np.zeros(4)]))
    with pytest.raises(DegenerateRangeError):
        extract_learned_inr(bk, table, (2, 2))


# ---------------------------------------------------- post_interpolate

def test_interpolate_identity():
    g = np.random.default_rng(0).random((3, 5))
    assert np.array_equal(post_interpolate(g, 1), g)


def test_interpolate_midpoints():
    out = post_interpolate(np.array([[0.0, 1.0], [0.0, 1.0]]), 2)
    assert out.shape == (3, 3)
    assert np.allclose(out[:, 1], 0.5)
    assert np.allclose(out[:, 0], 0.0) and np.allclose(out[:, 2], 1.0)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.floats(-2, 2))
def test_interpolate_constant(h, w, factor, c):
    out = post_interpolate(np.full((h, w, 2), c), factor)
    assert np.allclose(out, c)


def test_interpolate_trilinear_exact_for_linear_fields():
    t, y, x = np.meshgrid(np.arange(3.0), np.arange(4.0), np.arange(2.0), indexing="ij")
    vol = 2 * t - y + 0.5 * x
    out = post_interpolate(vol, 3, n_spatial=3)
    t2, y2, x2 = np.meshgrid(np.arange(7) / 3, np.arange(10) / 3, np.arange(4) / 3, indexing="ij")
    assert np.allclose(out, 2 * t2 - y2 + 0.5 * x2)
