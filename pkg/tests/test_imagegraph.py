import json

import numpy as np
import png
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dht.imagegraph import (
    EPS_VAR,
    GridGraph,
    Image,
    ImageFormatError,
    InvalidPartition,
    LabelMap,
    compact_labels,
    connected_region_count,
    grid_graph,
    internal_volume,
    is_valid_partition,
    load_feature_dump,
    load_image,
    region_stats,
    save_feature_dump,
    save_png,
    validate_partition,
)


def write_pnm(path, magic, w, h, maxval, body, comment=False):
    head = f"{magic}\n" + ("# made by hand\n" if comment else "") + f"{w} {h}\n{maxval}\n"
    path.write_bytes(head.encode() + bytes(body))


# ---------------------------------------------------------------- loading


def test_ppm_2x2_rgb(tmp_path):
    p = tmp_path / "a.ppm"
    write_pnm(p, "P6", 2, 2, 255, [255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255])
    img = load_image(p)
    assert (img.height, img.width, img.channels) == (2, 2, 3)
    np.testing.assert_array_equal(img.data.ravel(), [1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1])


def test_grey_single_zero(tmp_path):
    p = tmp_path / "z.pgm"
    write_pnm(p, "P5", 1, 1, 255, [0])
    img = load_image(p)
    assert img.shape == (1, 1, 1)
    assert img.data.ravel().tolist() == [0.0]


def test_png16_all_max(tmp_path):
    p = tmp_path / "w.png"
    save_png(p, np.full((3, 3), 65535, dtype=np.uint16), bitdepth=16)
    img = load_image(p)
    assert img.shape == (3, 3, 1)
    assert np.all(img.data == 1.0)


def test_pnm_16bit_and_comment(tmp_path):
    p = tmp_path / "b.pgm"
    # big-endian 16-bit samples 0, 1000, 65535
    body = b"".join(v.to_bytes(2, "big") for v in (0, 1000, 65535))
    write_pnm(p, "P5", 3, 1, 65535, body, comment=True)
    np.testing.assert_allclose(load_image(p).data.ravel(), [0, 1000 / 65535, 1])


@pytest.mark.parametrize("depth", [8, 16])
def test_png_roundtrip(tmp_path, rng, depth):
    scale = 2**depth - 1
    x = np.rint(rng.random((5, 7, 3)) * scale) / scale
    save_png(tmp_path / "x.png", x, bitdepth=depth)
    np.testing.assert_array_equal(load_image(tmp_path / "x.png").data, x)


def test_png_alpha_dropped(tmp_path):
    p = tmp_path / "rgba.png"
    rows = [[255, 0, 0, 128, 0, 255, 0, 0]]
    with open(p, "wb") as fh:
        png.Writer(2, 1, greyscale=False, alpha=True).write(fh, rows)
    img = load_image(p)
    assert img.channels == 3
    np.testing.assert_array_equal(img.data.ravel(), [1, 0, 0, 0, 1, 0])


def test_png_grey_alpha(tmp_path):
    p = tmp_path / "la.png"
    with open(p, "wb") as fh:
        png.Writer(2, 1, greyscale=True, alpha=True).write(fh, [[255, 0, 0, 255]])
    img = load_image(p)
    assert img.channels == 1
    np.testing.assert_array_equal(img.data.ravel(), [1, 0])


def test_png_low_bitdepth_rejected(tmp_path):
    p = tmp_path / "bits.png"
    with open(p, "wb") as fh:
        png.Writer(4, 1, greyscale=True, bitdepth=2).write(fh, [[0, 1, 2, 3]])
    with pytest.raises(ImageFormatError, match="bit depth"):
        load_image(p)


@pytest.mark.parametrize(
    "content",
    [b"hello world", b"P3\n1 1\n255\n0 0 0\n", b"P6\n2 2\n255\n\x00\x00", b"P5\n1 1\n70000\n\x00\x00", b"\x89PNG garbage"],
)
def test_bad_files(tmp_path, content):
    p = tmp_path / "bad.img"
    p.write_bytes(content)
    with pytest.raises(ImageFormatError):
        load_image(p)


def test_missing_file(tmp_path):
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "nope.png")


def test_image_clamps_and_rejects_nan():
    img = Image(np.array([[-0.5, 2.0]]))
    np.testing.assert_array_equal(img.data.ravel(), [0, 1])
    assert not img.data.flags.writeable
    with pytest.raises(ValueError):
        Image(np.array([[np.nan]]))


def test_feature_dump_roundtrip(tmp_path, rng):
    f = rng.standard_normal((4, 5, 3)).astype(np.float32)
    p = tmp_path / "f.bin"
    save_feature_dump(p, f)
    meta = json.loads((tmp_path / "f.bin.json").read_text())
    assert meta == {"h": 4, "w": 5, "c": 3, "dtype": "float32", "order": "row-major"}
    assert p.stat().st_size == 4 * 5 * 3 * 4
    np.testing.assert_array_equal(load_feature_dump(p), f)


# ---------------------------------------------------------------- grid


@pytest.mark.parametrize("h,w,n", [(2, 2, 4), (1, 5, 4), (3, 3, 12), (1, 1, 0)])
def test_edge_counts(h, w, n):
    g = grid_graph(h, w)
    assert g.n_edges == n == len(g.edges)
    assert g.n_vertices == h * w


def brute_edges(h, w):
    out = set()
    for r in range(h):
        for c in range(w):
            for dr, dc in ((0, 1), (1, 0)):
                if r + dr < h and c + dc < w:
                    out.add((r * w + c, (r + dr) * w + c + dc))
    return out


@given(st.integers(1, 7), st.integers(1, 7))
def test_edges_match_brute_force(h, w):
    e = GridGraph(h, w).edges
    assert {tuple(map(int, x)) for x in e} == brute_edges(h, w)
    horiz = e[:, 0] // w == e[:, 1] // w
    n_h = h * (w - 1)
    # horizontal block first, then vertical, both row-major
    assert horiz[:n_h].all() and not horiz[n_h:].any()
    assert np.all(np.diff(e[:n_h, 0]) > 0) and np.all(np.diff(e[n_h:, 0]) > 0)


def test_neighbourhood_sizes():
    g = GridGraph(3, 4)
    sizes = np.array([len(g.neighbors(v)) for v in range(12)]).reshape(3, 4)
    np.testing.assert_array_equal(sizes, [[2, 3, 3, 2], [3, 4, 4, 3], [2, 3, 3, 2]])
    assert g.neighbors(5) == [1, 4, 6, 9]


def test_grid_overflow_and_empty():
    with pytest.raises(OverflowError):
        GridGraph(70000, 70000)
    with pytest.raises(ValueError):
        GridGraph(0, 3)


# ---------------------------------------------------------------- labels


def test_compact_labels_order():
    lab, n = compact_labels(np.array([[7, 7, 3], [9, 3, 3]]))
    assert n == 3
    np.testing.assert_array_equal(lab, [[0, 0, 1], [2, 1, 1]])
    assert LabelMap.from_array(np.array([[5, 5]])).region_count == 1


def test_validate_partition():
    validate_partition(np.array([[0, 0, 1], [2, 1, 1]]))
    with pytest.raises(InvalidPartition, match="connected"):
        validate_partition(np.array([[0, 1, 0]]))
    with pytest.raises(InvalidPartition, match="dense"):
        validate_partition(np.array([[0, 2]]))
    with pytest.raises(InvalidPartition):
        validate_partition(np.array([[-1, 0]]))
    assert not is_valid_partition(np.array([[0, 1], [1, 0]]))
    # diagonal contact is not 4-connectivity
    assert connected_region_count(np.array([[0, 1], [1, 0]])) == 4


# ---------------------------------------------------------------- stats


def test_stats_constant_region():
    s = region_stats(np.zeros((2, 2), dtype=int), np.ones((2, 2, 1)))
    assert s.count.tolist() == [4]
    assert s.mean[0, 0] == 1.0
    assert s.var[0, 0] == EPS_VAR
    assert s.vol.tolist() == [4]


def test_stats_two_columns():
    s = region_stats(np.array([[0, 1], [0, 1]]), np.array([0.0, 1, 0, 1]))
    np.testing.assert_array_equal(s.mean[:, 0], [0, 1])
    assert s.vol.tolist() == [1, 1]
    np.testing.assert_array_equal(s.bbox, [[0, 0, 2, 1], [0, 1, 2, 2]])


def test_stats_singleton():
    s = region_stats(np.zeros((1, 1), dtype=int), np.array([0.3]))
    assert s.count.tolist() == [1] and s.vol.tolist() == [0]
    assert s.var[0, 0] == EPS_VAR


def test_stats_label_out_of_range():
    with pytest.raises(IndexError):
        region_stats(LabelMap(np.array([[0, 3]]), 2), np.zeros(2))


def random_partition(rng, h, w, k):
    """Random connected partition by growing ``k`` seeds over the grid."""
    lab = -np.ones(h * w, dtype=int)
    seeds = rng.choice(h * w, size=min(k, h * w), replace=False)
    lab[seeds] = np.arange(len(seeds))
    g = GridGraph(h, w)
    frontier = list(seeds)
    while frontier:
        v = frontier.pop(rng.integers(len(frontier)))
        for u in g.neighbors(int(v)):
            if lab[u] < 0:
                lab[u] = lab[v]
                frontier.append(u)
    return compact_labels(lab.reshape(h, w))[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**31))
def test_stats_match_brute_force(h, w, k, seed):
    rng = np.random.default_rng(seed)
    lab = random_partition(rng, h, w, k)
    validate_partition(lab)
    f = rng.standard_normal((h, w, 2))
    s = region_stats(lab, f)
    edges = brute_edges(h, w)
    flat = lab.ravel()
    for r in range(s.region_count):
        px = f.reshape(-1, 2)[flat == r]
        assert s.count[r] == len(px)
        np.testing.assert_allclose(s.mean[r], px.mean(0), atol=1e-10)
        np.testing.assert_allclose(s.var[r], np.maximum(px.var(0), EPS_VAR), atol=1e-10)
        assert s.vol[r] == sum(flat[a] == r and flat[b] == r for a, b in edges)
    assert s.count.sum() == h * w
    assert s.vol.sum() <= len(edges)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(2, 7), st.integers(0, 2**31))
def test_volume_additivity(h, w, seed):
    rng = np.random.default_rng(seed)
    lab = random_partition(rng, h, w, 4)
    n = lab.max() + 1
    flat = lab.ravel()
    edges = GridGraph(h, w).edges
    vol = internal_volume(lab, n)
    for a, b in edges:
        A, B = flat[a], flat[b]
        if A == B:
            continue
        merged = np.where(lab == B, A, lab)
        cut = int(np.sum(((flat[edges[:, 0]] == A) & (flat[edges[:, 1]] == B)) | ((flat[edges[:, 0]] == B) & (flat[edges[:, 1]] == A))))
        assert internal_volume(merged, n)[A] == vol[A] + vol[B] + cut
        break
