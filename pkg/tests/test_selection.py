import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dht.selection as smod
from dht.hierarchy import build_hierarchy
from dht.imagegraph import EPS_VAR, load_image, validate_partition
from dht.kernels import KernelSpec
from dht.selection import (
    EPS_AICC,
    ICConfig,
    ic_penalty,
    node_ic_table,
    prune,
    region_df,
    region_ic,
    region_neg2loglik,
    save_partition,
)

G = KernelSpec("gaussian", 1.0)
LOG2PIE = math.log(2 * math.pi * math.e)


def test_neg2loglik_examples():
    v = region_neg2loglik(np.array([4]), np.array([[1e-6]]))[0]
    assert v == pytest.approx(4 * (LOG2PIE + math.log(1e-6)), rel=1e-14)
    assert round(float(v), 2) == -43.91
    for d in (1, 3):
        one = region_neg2loglik(np.array([1]), np.full((1, d), EPS_VAR))[0]
        assert one == pytest.approx(d * LOG2PIE + d * math.log(EPS_VAR))


def test_generalized_normal_at_two_is_gaussian(rng):
    count = rng.integers(1, 50, 30).astype(float)
    var = np.maximum(rng.random((30, 4)) * 0.1, EPS_VAR)
    var[:3] = EPS_VAR
    g = region_neg2loglik(count, var)
    gn = region_neg2loglik(count, var, b=2.0, abs_moment=var)
    np.testing.assert_allclose(gn, g, rtol=0, atol=1e-10 * np.max(np.abs(g)))


def test_generalized_normal_needs_moment():
    with pytest.raises(ValueError):
        region_neg2loglik(np.array([2]), np.array([[0.1]]), b=1.0)


def test_region_df_examples():
    assert region_df(4, 4) == pytest.approx(0.8)
    assert region_df(0, 4) == 4.0
    vols = np.arange(0, 50)
    assert np.all(np.diff(region_df(vols, 100)) < 0)
    assert region_df(4, 4, df_scale=2.5) == pytest.approx(2.0)


def test_penalties():
    nll = region_neg2loglik(np.array([1]), np.array([[EPS_VAR]]))
    aic = region_ic(np.array([1]), np.array([[EPS_VAR]]), np.array([0]), ICConfig("AIC"), 4)
    assert aic[0] == pytest.approx(nll[0] + 2 * 4.0)
    # AICC with |S| <= df + 1: guarded denominator
    df, n = 4.0, 2.0
    want = 2 * df + 2 * df * (df + 1) / EPS_AICC
    assert ic_penalty(df, n, "AICC") == pytest.approx(want)
    assert np.isfinite(ic_penalty(df, 1.0, "AICC"))
    assert ic_penalty(0.7, 10.0, "AICC") == pytest.approx(1.4 + 2 * 0.7 * 1.7 / (10 - 1.7))
    assert ic_penalty(df, 10.0, "GN") == ic_penalty(df, 10.0, "AICC")
    for n in range(1, 30):
        bic, aic = ic_penalty(df, n, "BIC"), ic_penalty(df, n, "AIC")
        assert (bic > aic) == (n >= 8)


def test_config_validation():
    with pytest.raises(ValueError):
        ICConfig("CIC")
    with pytest.raises(ValueError):
        ICConfig("GN", gn_shape=0)
    with pytest.raises(ValueError):
        ICConfig(df_scale=-1)
    assert ICConfig("AIC", gn_shape=0.5).shape == 2.0
    assert ICConfig("GN", gn_shape=0.5).shape == 0.5


# ---------------------------------------------------------------- pruning


def test_constant_image_selects_root():
    f0 = np.full((4, 4, 1), 0.3)
    p = prune(build_hierarchy(f0, spec=G), f0.reshape(16, 1))
    assert p.region_count == 1
    assert p.labels.labels.max() == 0


def test_two_flat_halves():
    f0 = np.zeros((2, 4, 1))
    f0[:, 2:] = 1.0
    hier = build_hierarchy(f0, spec=G)
    p = prune(hier, f0.reshape(8, 1))
    np.testing.assert_array_equal(p.labels.labels, [[0, 0, 1, 1], [0, 0, 1, 1]])
    assert p.total_ic == pytest.approx(brute_force_min(hier, node_ic_table(hier, f0, ICConfig())))


def test_bottom_only_hierarchy(rng):
    f0 = rng.random((3, 3, 2))
    hier = build_hierarchy(f0, spec=G, max_levels=0)
    p = prune(hier, f0)
    assert p.region_count == 9
    assert p.level.tolist() == [0] * 9


def cuts(hier, t, i):
    """All antichain cuts of the subtree rooted at node (t, i)."""
    out = [[(t, i)]]
    if t > 0:
        kids = np.flatnonzero(hier.levels[t - 1].parent == i)
        for combo in itertools.product(*[cuts(hier, t - 1, int(k)) for k in kids]):
            out.append([n for part in combo for n in part])
    return out


def brute_force_min(hier, ics):
    T = len(hier) - 1
    best = 0.0
    for root in range(hier.levels[T].region_count):
        best += min(math.fsum(ics[t][i] for t, i in cut) for cut in cuts(hier, T, root))
    return best


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from([(1, 12), (2, 6), (3, 4), (2, 5), (3, 3), (1, 7)]),
    st.sampled_from(["AIC", "AICC", "BIC", "GN"]),
    st.sampled_from([0.05, 0.3, 1.0, 5.0]),
    st.integers(0, 2**31),
)
def test_dp_matches_exhaustive_search(shape, criterion, df_scale, seed):
    rng = np.random.default_rng(seed)
    h, w = shape
    # a few flat blocks plus noise so the optimum is not trivially a leaf cut
    f0 = np.repeat(rng.random((h, -(-w // 2), 2)), 2, axis=1)[:, :w] + 0.05 * rng.standard_normal((h, w, 2))
    hier = build_hierarchy(f0, spec=G)
    cfg = ICConfig(criterion, 0.7 if criterion == "GN" else 2.0, df_scale)
    p = prune(hier, f0, cfg)
    validate_partition(p.labels.labels)
    want = brute_force_min(hier, node_ic_table(hier, f0, cfg))
    assert math.isclose(p.total_ic, want, rel_tol=1e-12, abs_tol=1e-9)
    assert p.total_ic == pytest.approx(p.ic.sum(), rel=1e-15)


def test_ties_keep_the_coarser_node(rng, monkeypatch):
    f0 = rng.random((2, 4, 1))
    hier = build_hierarchy(f0, spec=G)

    def table(hier, f0, cfg):
        # every node costs exactly the sum of its pixels: all cuts tie
        out = [np.ones(hier.levels[0].region_count)]
        for t in range(1, len(hier)):
            out.append(np.asarray(hier.levels[t].sizes, dtype=float))
        return out

    monkeypatch.setattr(smod, "node_ic_table", table)
    p = prune(hier, f0)
    assert p.region_count == 1 and p.level.tolist() == [len(hier) - 1]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["AIC", "AICC", "GN"]), st.sampled_from([0.01, 0.1, 1.0]), st.integers(0, 2**31))
def test_larger_penalty_never_adds_regions(criterion, scale, seed):
    rng = np.random.default_rng(seed)
    f0 = np.repeat(np.repeat(rng.random((4, 4, 3)), 3, 0), 3, 1) + 0.03 * rng.standard_normal((12, 12, 3))
    hier = build_hierarchy(f0, spec=G)
    lo = prune(hier, f0, ICConfig(criterion, 1.5, scale))
    hi = prune(hier, f0, ICConfig(criterion, 1.5, scale * 10))
    assert hi.region_count <= lo.region_count


def test_partition_fields(rng):
    f0 = np.repeat(np.repeat(rng.random((3, 3, 2)), 4, 0), 4, 1)
    hier = build_hierarchy(f0, spec=G)
    p = prune(hier, f0)
    for r in range(p.region_count):
        lv = hier.levels[p.level[r]]
        # the chosen node covers exactly the pixels of region r
        np.testing.assert_array_equal(lv.labels == p.node[r], p.labels.labels == r)
        np.testing.assert_array_equal(p.features[r], lv.features[p.node[r]])


def test_save_partition(tmp_path, rng):
    f0 = np.repeat(np.repeat(rng.random((3, 3, 2)), 4, 0), 4, 1)
    p = prune(build_hierarchy(f0, spec=G), f0)
    path = tmp_path / "labels.png"
    save_partition(path, p)
    back = load_image(path).data[..., 0] * 65535
    np.testing.assert_array_equal(np.rint(back).astype(int), p.labels.labels)
    table = json.loads((tmp_path / "labels.png.json").read_text())
    assert table["regions"] == p.region_count
    assert sum(r["pixels"] for r in table["table"]) == 144
    assert table["total_ic"] == pytest.approx(p.total_ic)
