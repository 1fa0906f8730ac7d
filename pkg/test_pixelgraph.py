import io

import numpy as np
import pytest

from imagecore import GradientField, RasterImage, sobel_field
from oracles import brute_force_edges, graph_edge_set
from pixelgraph import (DirectedPixelGraph, GraphParams, build_graph, build_graphs, degrees, dump_edges,
                        edge_weight, link_predicate, neighborhood_offsets, pixel_distance, wrap_angle)

PARAMS = GraphParams()


def graph_of(band, params=PARAMS):
    img = RasterImage.from_array(band)
    return build_graph(img.band(0), sobel_field(img), params)


def test_default_params():
    assert (PARAMS.q, PARAMS.r, PARAMS.s, PARAMS.t, PARAMS.L) == (3, 0.315, 5, 45, 255)
    with pytest.raises(ValueError):
        GraphParams(q=0)
    with pytest.raises(ValueError):
        GraphParams(s=-1)


def test_pixel_distance():
    assert pixel_distance(7, 7, 10) == 0
    assert pixel_distance(3, 4, 10) == 1
    assert pixel_distance(0, 4 * 10 + 3, 10) == 5


@pytest.mark.parametrize('d, delta, expected', [
    (1, 0, 1 / 18),
    (3, 255, 1.0),
    (2, 0, 4 / 18),
])
def test_edge_weight(d, delta, expected):
    assert edge_weight(100.0, 100.0 + delta, d, PARAMS) == pytest.approx(expected)


def test_edge_weight_range():
    rng = np.random.default_rng(0)
    for dy, dx, d in neighborhood_offsets(PARAMS.q):
        w = edge_weight(rng.integers(0, 256, 50).astype(float), rng.integers(0, 256, 50).astype(float), d, PARAMS)
        assert np.all(w >= 1 / 18 - 1e-15) and np.all(w <= 1 + 1e-15)


def test_wrap_angle():
    assert float(wrap_angle(190.0)) == pytest.approx(-170.0)
    assert float(wrap_angle(-180.0)) == pytest.approx(180.0)
    assert float(wrap_angle(180.0)) == pytest.approx(180.0)
    assert float(wrap_angle(-350.0)) == pytest.approx(10.0)


def test_link_predicate_constant_region():
    band = np.full((8, 8), 50.0)
    field = sobel_field(RasterImage.from_array(band))
    assert link_predicate(8 * 3 + 3, 8 * 3 + 4, band, field, PARAMS)
    # d = 3: w = 9/18 > r
    assert not link_predicate(8 * 3 + 0, 8 * 3 + 3, band, field, PARAMS)


def test_link_predicate_is_signed():
    band = np.full((3, 3), 50.0)
    magnitude = np.zeros((3, 3, 1))
    magnitude[0, 1, 0] = 10.0
    field = GradientField(magnitude=magnitude, angle_deg=np.zeros((3, 3, 1)))
    assert link_predicate(0, 1, band, field, PARAMS)
    assert not link_predicate(1, 0, band, field, PARAMS)


def test_link_predicate_angle_gate():
    band = np.full((3, 3), 50.0)
    angle = np.zeros((3, 3, 1))
    angle[0, 0, 0] = 170.0
    angle[0, 1, 0] = -170.0
    field = GradientField(magnitude=np.zeros((3, 3, 1)), angle_deg=angle)
    # wrap(170 - (-170)) = -20, wrap(-170 - 170) = 20
    assert link_predicate(0, 1, band, field, PARAMS)
    assert link_predicate(1, 0, band, field, PARAMS)
    angle[0, 1, 0] = 100.0
    assert not link_predicate(0, 1, band, field, PARAMS)
    assert link_predicate(1, 0, band, field, PARAMS)


def test_constant_band_interior_degree():
    g = graph_of(np.full((16, 16), 128))
    k_in, k_out = degrees(g)
    interior = (slice(3, 13), slice(3, 13))
    assert np.all(k_in.reshape(16, 16)[interior] == 20)
    assert np.all(k_out.reshape(16, 16)[interior] == 20)
    assert graph_edge_set(g) == brute_force_edges(np.full((16, 16), 128), PARAMS)


@pytest.mark.parametrize('seed', range(20))
def test_build_graph_matches_all_pairs(seed):
    rng = np.random.default_rng(seed)
    band = rng.integers(0, 256, size=(12, 12))
    if seed % 2:
        # quantized bands keep many gates open
        band = band // 64 * 64
    assert graph_edge_set(graph_of(band)) == brute_force_edges(band, PARAMS)


def test_build_graph_matches_all_pairs_other_params():
    rng = np.random.default_rng(99)
    band = rng.integers(0, 256, size=(10, 11)) // 16 * 16
    params = GraphParams(q=2.5, r=0.4, s=20, t=90)
    assert graph_edge_set(graph_of(band, params)) == brute_force_edges(band, params)


def test_handshake_and_consistency():
    rng = np.random.default_rng(5)
    g = graph_of(rng.integers(0, 256, size=(20, 20)) // 32 * 32)
    k_in, k_out = degrees(g)
    assert g.edge_count == k_in.sum() == k_out.sum()
    src, dst = g.edges()
    assert np.all(src != dst)
    for i, j in zip(src.tolist(), dst.tolist()):
        assert i in g.in_neighbors(j)
        assert pixel_distance(i, j, g.width) <= PARAMS.q
    assert k_out.max() <= 28


def test_edges_sorted_and_neighbor_lists_sorted():
    rng = np.random.default_rng(6)
    g = graph_of(rng.integers(0, 256, size=(14, 9)) // 64 * 64)
    src, dst = g.edges()
    keys = src * g.node_count + dst
    assert np.all(np.diff(keys) > 0)
    for i in range(g.node_count):
        assert np.all(np.diff(g.in_neighbors(i)) > 0)


def test_degrees_small_graphs():
    empty = DirectedPixelGraph.from_edges([], [], 2, 2)
    k_in, k_out = degrees(empty)
    assert not k_in.any() and not k_out.any()

    single = DirectedPixelGraph.from_edges([0], [1], 2, 2)
    k_in, k_out = degrees(single)
    assert k_out.tolist() == [1, 0, 0, 0]
    assert k_in.tolist() == [0, 1, 0, 0]


def test_self_loops_rejected():
    with pytest.raises(ValueError):
        DirectedPixelGraph.from_edges([1], [1], 2, 2)


def test_build_graphs_per_band():
    rng = np.random.default_rng(8)
    img = RasterImage.from_array(rng.integers(0, 256, size=(10, 10, 3)))
    graphs = build_graphs(img, sobel_field(img), PARAMS)
    assert len(graphs) == 3
    assert graph_edge_set(graphs[1]) == graph_edge_set(graph_of(img.pixels[:, :, 1]))


def test_single_pixel_graph():
    g = graph_of(np.array([[9]]))
    assert (g.node_count, g.edge_count) == (1, 0)


def test_dump_edges_format():
    g = DirectedPixelGraph.from_edges([2, 0, 0], [1, 3, 1], 2, 2)
    out = io.StringIO()
    dump_edges(g, out)
    assert out.getvalue() == "nodes=4 edges=3\n0 1\n0 3\n2 1\n"


def test_transpose_swaps_directions():
    g = DirectedPixelGraph.from_edges([0, 1], [1, 2], 1, 3)
    t = g.transpose()
    assert graph_edge_set(t) == {(1, 0), (2, 1)}
