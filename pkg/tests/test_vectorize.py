import xml.etree.ElementTree as ET

import numpy as np
import png
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import synth
from dht.encoder import EncoderConfig, init_state
from dht.hierarchy import build_hierarchy
from dht.kernels import KernelSpec
from dht.pipeline import vectorize_image
from dht.selection import ICConfig, prune
from dht.vectorize import (
    SVG_NS,
    is_simple,
    max_deviation,
    parse_svg,
    rasterize,
    rasterize_contours,
    rasterize_svg,
    score_vectorization,
    shoelace,
    simplify,
    to_hex,
    trace_mask,
    trace_region,
    vectorize,
)
from conftest import two_tone

LINEAR = init_state(EncoderConfig(arch="linear"), 3)


def perimeter(c):
    return float(np.sum(np.hypot(*(np.roll(c, -1, axis=0) - c).T)))


# ---------------------------------------------------------------- tracing


def test_single_pixel():
    (c,) = trace_region(np.array([[0, 1], [1, 1]]), 0)
    assert c.tolist() == [[0, 0], [1, 0], [1, 1], [0, 1]]


def test_solid_block():
    mask = np.zeros((4, 4), dtype=bool)
    mask[1:3, 1:3] = True
    (c,) = trace_mask(mask)
    assert perimeter(c) == 8.0
    assert shoelace(c) == 4.0


def test_ring_has_one_hole():
    mask = np.ones((3, 3), dtype=bool)
    mask[1, 1] = False
    outer, hole = trace_mask(mask)
    assert shoelace(outer) == 9.0 and shoelace(hole) == -1.0
    labels = (synth.ring()[..., 0] > 0.5).astype(int)
    assert len(trace_region(labels, 1)) == 2  # the annulus: outer plus one hole


def test_pinch_vertex_kept_separate():
    # two pixels touching at a corner belong to one mask but form two squares
    mask = np.array([[1, 0], [0, 1]], dtype=bool)
    cs = trace_mask(mask)
    assert len(cs) == 2 and all(shoelace(c) == 1.0 for c in cs)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.1, 0.9), st.integers(0, 2**31))
def test_tracing_covers_mask(h, w, density, seed):
    mask = np.random.default_rng(seed).random((h, w)) < density
    cs = trace_mask(mask)
    assert sum(shoelace(c) for c in cs) == mask.sum()
    assert np.array_equal(rasterize_contours(cs, h, w), mask)
    for tol in (0.75, 1.5):
        simp = [simplify(c, tol) for c in cs]
        for c, s in zip(cs, simp):
            assert is_simple(s)
            assert max_deviation(c, s) <= tol + 1e-9
            assert max_deviation(s, c) <= tol + 1e-9  # both directions: Hausdorff


# ---------------------------------------------------------------- simplification


def test_rectangle_has_four_vertices():
    mask = np.zeros((6, 9), dtype=bool)
    mask[1:5, 2:8] = True
    (c,) = trace_mask(mask)
    for tol in (0.0, 0.5, 3.0):
        assert len(simplify(c, tol)) == 4


def test_zero_tolerance_only_drops_collinear():
    raw = np.array([[0, 0], [1, 0], [2, 0], [2, 1], [2, 2], [1, 2], [1, 1], [0, 1]])
    out = simplify(raw, 0.0)
    assert out.tolist() == [[0, 0], [2, 0], [2, 2], [1, 2], [1, 1], [0, 1]]


def test_staircase_gets_fewer_vertices():
    mask = np.tri(10, dtype=bool)
    (c,) = trace_mask(mask)
    s = simplify(c, 1.0)
    assert len(s) < len(simplify(c, 0.0))
    assert max_deviation(c, s) <= 1.0


def test_degenerate_and_bad_tolerance():
    two = np.array([[0, 0], [1, 1]])
    assert simplify(two, 1.0) is two or np.array_equal(simplify(two, 1.0), two)
    with pytest.raises(ValueError):
        simplify(np.zeros((4, 2)), -1)


def test_is_simple():
    assert is_simple(np.array([[0, 0], [2, 0], [2, 2], [0, 2]]))
    assert not is_simple(np.array([[0, 0], [2, 2], [2, 0], [0, 2]]))  # bow tie


# ---------------------------------------------------------------- documents


def doc_for(x, state=LINEAR, ic=ICConfig(), tol=0.75, coarse_level=None):
    return vectorize_image(x, state, KernelSpec(), ic, tol=tol, coarse_level=coarse_level)


def test_constant_image():
    x = np.full((16, 16, 3), 0.4)
    doc = doc_for(x)
    coarse, fine = doc.layer("coarse"), doc.layer("fine")
    assert len(coarse) == 1 and len(fine) == 1
    for p in coarse + fine:
        (c,) = p.contours
        assert shoelace(c) == 256.0 and p.fill_hex == to_hex([0.4] * 3)


def test_two_tone_halves():
    x = two_tone()
    doc = doc_for(x, coarse_level=0)
    assert len(doc.paths) == 2 and not doc.layer("coarse")
    np.testing.assert_allclose([p.fill for p in doc.paths], [x[0, 0], x[0, -1]], atol=1e-12)


def test_coarse_paths_come_first():
    doc = doc_for(synth.blocks())
    layers = [p.layer for p in doc.paths]
    assert layers == sorted(layers)  # "coarse" < "fine"
    assert layers[0] == "coarse"


def test_bad_coarse_level():
    x = two_tone(8, 8)
    hier = build_hierarchy(x)
    with pytest.raises(ValueError):
        vectorize(x, hier, prune(hier, x), coarse_level=len(hier))


@pytest.mark.parametrize("name", sorted(synth.FIXTURES))
def test_interior_pixels_get_region_mean(name):
    x = synth.FIXTURES[name]()
    hier = build_hierarchy(x)
    pruned = prune(hier, x, ICConfig(on_raw_pixels=True))
    doc = vectorize(x, hier, pruned, tol=0.75, coarse_level=0)
    out = rasterize_svg(doc.to_svg())
    lab = pruned.labels.labels
    pad = np.pad(lab, 1, mode="edge")
    interior = np.ones_like(lab, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            interior &= pad[1 + dr : 1 + dr + lab.shape[0], 1 + dc : 1 + dc + lab.shape[1]] == lab
    for p in doc.paths:
        sel = interior & (lab == p.region)
        np.testing.assert_allclose(out[sel], np.asarray(p.fill)[None].repeat(sel.sum(), 0), atol=0.5 / 255 + 1e-12)


@pytest.mark.parametrize("name", sorted(synth.FIXTURES))
def test_exact_coverage_at_zero_tolerance(name):
    x = synth.FIXTURES[name]()
    doc = doc_for(x, state=init_state(EncoderConfig(), 3), tol=0.0)
    fine = doc.layer("fine")
    assert sum(shoelace(c) for p in fine for c in p.contours) == 64 * 64
    count = np.zeros((64, 64), dtype=int)
    for p in fine:
        count += rasterize_contours(p.contours, 64, 64)
    assert np.all(count == 1)


def test_layering_fine_wins_where_it_covers():
    x = synth.diagonal()
    doc = doc_for(x)
    fine_only = type(doc)(doc.width, doc.height, doc.layer("fine"), doc.tol)
    a, b = rasterize(doc), rasterize(fine_only)
    covered = np.zeros((64, 64), dtype=bool)
    for p in doc.layer("fine"):
        covered |= rasterize_contours(p.contours, 64, 64)
    assert np.array_equal(a[covered], b[covered])


def test_svg_is_well_formed():
    doc = doc_for(synth.ring())
    text = doc.to_svg()
    root = ET.fromstring(text)
    assert root.tag == f"{{{SVG_NS}}}svg" and root.get("viewBox") == "0 0 64 64"
    paths = root.findall(f".//{{{SVG_NS}}}path")
    assert len(paths) == len(doc.paths)
    for el in paths:
        assert el.get("fill-rule") == "evenodd" and el.get("stroke") == "none"
        assert el.get("fill").startswith("#") and len(el.get("fill")) == 7
    back = parse_svg(text)
    assert [p.layer for p in back.paths] == [p.layer for p in doc.paths]


def cairo_render(svg: str) -> np.ndarray:
    cairosvg = pytest.importorskip("cairosvg")
    out = cairosvg.svg2png(bytestring=svg.encode())
    w, h, rows, _ = png.Reader(bytes=out).asRGBA8()
    a = np.array([list(r) for r in rows], dtype=float).reshape(h, w, 4) / 255
    return a[..., :3] * a[..., 3:]


@pytest.mark.parametrize("name", sorted(synth.FIXTURES))
def test_agrees_with_an_external_renderer(name):
    x = synth.FIXTURES[name]()
    svg = doc_for(x, state=init_state(EncoderConfig(), 3)).to_svg()
    ours, theirs = rasterize_svg(svg), cairo_render(svg)
    assert theirs.shape == ours.shape
    # anti-aliasing only touches boundary pixels
    assert np.mean(np.all(np.abs(ours - theirs) <= 1.5 / 255, axis=-1)) > 0.85
    a, b = score_vectorization(x, ours).psnr, score_vectorization(x, theirs).psnr
    assert abs(a - b) < 3.5


def test_scores():
    x = synth.blocks()
    r = score_vectorization(x, x)
    assert (r.mse, r.psnr, r.ssim) == (0.0, 99.0, pytest.approx(1.0))
    # no mid-grey anywhere: inverted image is structurally opposite
    assert score_vectorization(x, 1.0 - x).ssim < 0.2
    with pytest.raises(ValueError):
        score_vectorization(x, x[:10])
    grey = x[..., :1]
    assert score_vectorization(grey, np.repeat(grey, 3, axis=2)).mse == 0.0


def test_two_tone_roundtrip_mse():
    x = two_tone()
    svg = doc_for(x, coarse_level=0).to_svg()
    assert score_vectorization(x, rasterize_svg(svg)).mse < 1e-4
    assert score_vectorization(x, cairo_render(svg)).mse < 1e-4
