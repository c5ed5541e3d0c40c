import numpy as np
import pytest
from hypothesis import given, strategies as st

from colony_track.geometry import (
    Cell,
    Frame,
    NeighborGraph,
    Rect,
    build_neighbor_graph,
    cell_from_pixels,
    segments_distance,
    target_window,
)

from conftest import make_cell, make_frame, random_frame


# -- cell_from_pixels ------------------------------------------------------


def test_collinear_pixels():
    c = cell_from_pixels({(0, 0), (1, 0), (2, 0), (3, 0)})
    assert np.allclose(c.center, [1.5, 0.0])
    assert np.allclose(np.abs(c.axis_dir), [1.0, 0.0])
    assert np.allclose(sorted([tuple(c.e), tuple(c.h)]), [(0, 0), (3, 0)])
    assert c.length == pytest.approx(3.0)
    assert c.width == pytest.approx(0.0)


def test_symmetric_block_axis():
    pixels = {(x, y) for x in range(4) for y in range(2)}
    c = cell_from_pixels(pixels)
    assert np.allclose(np.abs(c.axis_dir), [1.0, 0.0])
    assert np.allclose(c.center, [1.5, 0.5])


def _rasterize_capsule(center, angle, length, width, step=0.5):
    u = np.array([np.cos(angle), np.sin(angle)])
    e = center - u * length / 2.0
    h = center + u * length / 2.0
    xs = np.arange(center[0] - length, center[0] + length, step)
    ys = np.arange(center[1] - length, center[1] + length, step)
    pts = []
    for x in xs:
        for y in ys:
            p = np.array([x, y])
            t = np.clip(np.dot(p - e, u) / length, 0.0, 1.0)
            if np.hypot(*(p - (e + t * length * u))) <= width / 2.0:
                pts.append((x, y))
    return pts


def test_rasterized_capsule_recovery():
    theta = np.deg2rad(30.0)
    pixels = _rasterize_capsule(np.array([10.0, 20.0]), theta, length=20.0, width=6.0)
    c = cell_from_pixels(pixels)
    recovered = np.arctan2(abs(c.axis_dir[1]), abs(c.axis_dir[0]))
    assert abs(np.rad2deg(recovered - theta)) < 2.0
    assert c.length == pytest.approx(26.0, abs=2.5)  # extreme pixels include caps


@pytest.mark.parametrize("pixels", [{(3, 4)}, {(3, 4), (3, 4)}])
def test_degenerate_pixel_sets(pixels):
    with pytest.raises(ValueError, match="degenerate cell"):
        cell_from_pixels(pixels)


@given(
    dx=st.floats(-1e4, 1e4),
    dy=st.floats(-1e4, 1e4),
    seed=st.integers(0, 10_000),
)
def test_translation_equivariance(dx, dy, seed):
    rng = np.random.default_rng(seed)
    base = [tuple(p) for p in rng.integers(0, 30, size=(12, 2))]
    if len({tuple(p) for p in base}) < 3:
        return
    try:
        c0 = cell_from_pixels(base)
    except ValueError:
        return
    c1 = cell_from_pixels([(x + dx, y + dy) for x, y in base])
    off = np.array([dx, dy])
    assert np.allclose(c1.center, c0.center + off, atol=1e-9 * max(1, abs(dx), abs(dy)))
    assert np.allclose(c1.e, c0.e + off, atol=1e-6)
    assert np.allclose(c1.h, c0.h + off, atol=1e-6)
    assert c1.length == pytest.approx(c0.length, abs=1e-6)
    assert c1.width == pytest.approx(c0.width, abs=1e-6)


# -- segment distance ------------------------------------------------------


def _sampled_segdist(p0, p1, q0, q1, k=400):
    t = np.linspace(0, 1, k)[:, None]
    a = p0 + t * (p1 - p0)
    b = q0 + t * (q1 - q0)
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt((d**2).sum(-1)).min()


@given(st.integers(0, 300))
def test_segments_distance_matches_dense_sampling(seed):
    rng = np.random.default_rng(seed)
    p0, p1, q0, q1 = rng.uniform(-5, 5, size=(4, 2))
    exact = float(segments_distance(p0, p1, q0, q1))
    sampled = _sampled_segdist(p0, p1, q0, q1)
    assert exact <= sampled + 1e-9
    assert sampled - exact < 0.05  # grid resolution bound


def test_segments_distance_crossing_and_degenerate():
    assert segments_distance([0, -1], [0, 1], [-1, 0], [1, 0]) == 0.0
    # point against segment
    assert float(segments_distance([0, 2], [0, 2], [-1, 0], [1, 0])) == pytest.approx(2.0)
    # collinear overlap
    assert float(segments_distance([0, 0], [2, 0], [1, 0], [3, 0])) == 0.0


# -- neighbor graph --------------------------------------------------------


def test_two_isolated_cells_within_rho_are_neighbors():
    a = make_cell("a", (0, 0))
    b = make_cell("b", (50, 0))
    g = build_neighbor_graph(make_frame([a, b]), rho=80.0)
    assert g.are_neighbors("a", "b")


def test_blocking_capsule_breaks_neighborhood():
    a = make_cell("a", (0, 0), angle=0.0)
    b = make_cell("b", (50, 0), angle=0.0)
    blocker = make_cell("x", (25, 0), angle=np.pi / 2, length=20.0, width=8.0)
    g = build_neighbor_graph(make_frame([a, b, blocker]), rho=80.0)
    assert not g.are_neighbors("a", "b")
    assert g.are_neighbors("a", "x") and g.are_neighbors("x", "b")


def test_rho_bound_excludes_far_pair():
    a = make_cell("a", (0, 0))
    b = make_cell("b", (90, 0))
    g = build_neighbor_graph(make_frame([a, b]), rho=80.0)
    assert not g.are_neighbors("a", "b")


def _brute_force_graph(frame, rho):
    """All-pairs reference: Delaunay edge, no capsule hit, within rho."""
    from scipy.spatial import Delaunay

    n = len(frame)
    centers = frame.centers()
    try:
        tri = Delaunay(centers)
        dedges = set()
        for s in tri.simplices:
            for i in range(3):
                e = tuple(sorted((int(s[i]), int(s[(i + 1) % 3]))))
                dedges.add(e)
    except Exception:
        dedges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    adj = np.zeros((n, n), dtype=bool)
    for i, j in dedges:
        if np.hypot(*(centers[i] - centers[j])) > rho:
            continue
        blocked = False
        for k in range(n):
            if k in (i, j):
                continue
            cell = frame.cells[k]
            # sample the edge densely and test against the capsule core
            t = np.linspace(0, 1, 800)[:, None]
            pts = centers[i] + t * (centers[j] - centers[i])
            seg = cell.h - cell.e
            denom = float(seg @ seg)
            tt = np.clip((pts - cell.e) @ seg / denom, 0, 1)
            proj = cell.e + tt[:, None] * seg
            if np.min(np.hypot(*(pts - proj).T)) < cell.width / 2.0 - 1e-7:
                blocked = True
                break
        if not blocked:
            adj[i, j] = adj[j, i] = True
    return adj


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_neighbor_graph_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    frame = random_frame(rng, 20, span=180.0)
    g = build_neighbor_graph(frame, rho=80.0)
    expected = _brute_force_graph(frame, 80.0)
    assert np.array_equal(g.adj, expected)


@given(st.integers(0, 150), st.floats(30.0, 120.0))
def test_neighbor_graph_symmetry_and_rho(seed, rho):
    rng = np.random.default_rng(seed)
    frame = random_frame(rng, int(rng.integers(2, 14)), span=150.0)
    g = build_neighbor_graph(frame, rho=rho)
    assert np.array_equal(g.adj, g.adj.T)
    assert not np.any(np.diag(g.adj))
    centers = frame.centers()
    for i, j in g.edges():
        assert np.hypot(*(centers[i] - centers[j])) <= rho + 1e-9


def test_fallback_below_three_cells():
    a = make_cell("a", (0, 0))
    b = make_cell("b", (40, 0))
    g = build_neighbor_graph(make_frame([a, b]), rho=80.0)
    assert g.are_neighbors("a", "b")
    lone = build_neighbor_graph(make_frame([a]), rho=80.0)
    assert lone.degree("a") == 0


def test_fallback_collinear_centers():
    cells = [make_cell(f"c{i}", (30.0 * i, 0.0), angle=np.pi / 2, length=10) for i in range(4)]
    g = build_neighbor_graph(make_frame(cells), rho=35.0)
    for i in range(3):
        assert g.are_neighbors(f"c{i}", f"c{i+1}")
    assert not g.are_neighbors("c0", "c2")


# -- target window ---------------------------------------------------------


def test_window_inclusion_boundaries():
    b = make_cell("b", (0, 0))
    inside = make_cell("t1", (49, 49))
    outside = make_cell("t2", (51, 0))
    edge = make_cell("t3", (50, 0))
    nxt = make_frame([inside, outside, edge], index=1)
    ids = [c.id for c in target_window(b, nxt, w=100.0)]
    assert ids == ["t1", "t3"]


@given(st.integers(0, 200), st.floats(10, 60), st.floats(0, 60))
def test_window_monotone_in_width(seed, w1, extra):
    rng = np.random.default_rng(seed)
    frame = random_frame(rng, 10, span=120.0, index=1)
    probe = make_cell("p", rng.uniform(0, 120, size=2))
    small = {c.id for c in target_window(probe, frame, w1)}
    large = {c.id for c in target_window(probe, frame, w1 + extra)}
    assert small <= large


def test_simulator_successor_always_in_window(minute_run):
    frames, lineage = minute_run.frames, minute_run.lineage
    w = 45.0
    for rec in lineage[:60]:
        src, dst = frames[rec.frame_index], frames[rec.frame_index + 1]
        for a, b in rec.moved.items():
            assert dst.cell(b).id in {c.id for c in target_window(src.cell(a), dst, w)}


# -- containers ------------------------------------------------------------


def test_frame_rejects_duplicate_ids():
    a = make_cell("a", (0, 0))
    with pytest.raises(ValueError, match="duplicate"):
        Frame(0, (a, make_cell("a", (30, 0))), Rect(-50, -50, 80, 50))


def test_frame_rejects_center_outside_bounds():
    with pytest.raises(ValueError, match="outside"):
        Frame(0, (make_cell("a", (100, 0)),), Rect(0, -10, 50, 10))


def test_neighbor_graph_validation():
    with pytest.raises(ValueError, match="symmetric"):
        NeighborGraph(("a", "b"), np.array([[False, True], [False, False]]))
    with pytest.raises(ValueError, match="irreflexive"):
        NeighborGraph(("a",), np.array([[True]]))


def test_cell_invariants():
    c = make_cell("a", (3, 4), angle=0.3, length=17.0)
    assert np.hypot(*(c.h - c.e)) == pytest.approx(c.length, rel=1e-9)
    assert np.allclose((c.e + c.h) / 2.0, c.center, atol=1e-6)
    cross = c.axis_dir[0] * (c.h - c.e)[1] - c.axis_dir[1] * (c.h - c.e)[0]
    assert abs(cross) < 1e-9
    with pytest.raises(ValueError):
        Cell("bad", [0, 0], [0, 0], 5.0)
