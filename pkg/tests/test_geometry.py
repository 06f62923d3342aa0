from __future__ import annotations

import itertools

import numpy as np
import pytest

from tablegraph.doc import Page, WordBox
from tablegraph.geometry import (
    BOTTOM,
    LEFT,
    MISSING,
    RIGHT,
    TOP,
    GraphConfig,
    assign_reading_order,
    build_neighbor_graph,
    edge_of,
    rotate_bboxes,
    rotate_page_90,
)

from .helpers import GRID, page_of, random_page


def brute_force_graph(page: Page, n: int) -> np.ndarray:
    """Pairwise loop: classify every other center by angle sector, sort by
    (squared distance, index), keep n."""
    count = len(page)
    slots = np.full((count, 4, n), MISSING, dtype=np.int64)
    centers = [b.center for b in page.wordboxes]
    for i, (xi, yi) in enumerate(centers):
        buckets = {e: [] for e in range(4)}
        for j, (xj, yj) in enumerate(centers):
            dx, dy = xj - xi, yj - yi
            if i == j or (dx == 0 and dy == 0):
                continue
            if abs(dx) >= abs(dy):
                e = RIGHT if dx > 0 else LEFT
            else:
                e = BOTTOM if dy > 0 else TOP
            buckets[e].append((dx * dx + dy * dy, j))
        for e, cands in buckets.items():
            for k, (_, j) in enumerate(sorted(cands)[:n]):
                slots[i, e, k] = j
    return slots


def test_edge_of_axis_and_diagonal_cases():
    assert edge_of((0, 0), (1, 0)) == RIGHT
    assert edge_of((0, 0), (0, -1)) == TOP
    assert edge_of((0, 0), (-1, 0)) == LEFT
    assert edge_of((0, 0), (0, 1)) == BOTTOM
    # all four diagonals go to the horizontal edge
    for sx, sy in itertools.product((-1, 1), repeat=2):
        assert edge_of((0, 0), (sx, sy)) == (RIGHT if sx > 0 else LEFT)
    with pytest.raises(ValueError):
        edge_of((0.5, 0.5), (0.5, 0.5))


def test_two_boxes_side_by_side():
    g = build_neighbor_graph(page_of((0.1, 0.1, 0.2, 0.2), (0.3, 0.1, 0.4, 0.2)), GraphConfig(1))
    assert g.slots[0].tolist() == [[MISSING], [MISSING], [1], [MISSING]]
    assert g.slots[1].tolist() == [[0], [MISSING], [MISSING], [MISSING]]


def test_single_box_and_empty_page():
    g = build_neighbor_graph(page_of((0.1, 0.1, 0.2, 0.2)), 3)
    assert (g.slots == MISSING).all() and g.slots.shape == (1, 4, 3)
    assert build_neighbor_graph(Page(1, 1, ()), 2).slots.shape == (0, 4, 2)


def test_distance_ties_resolved_by_index():
    # boxes 1 and 2 share a center 0.25 right of box 0
    page = page_of((0.4, 0.4, 0.5, 0.5), (0.65, 0.4, 0.75, 0.5), (0.65, 0.4, 0.75, 0.5))
    g = build_neighbor_graph(page, 1)
    assert g.slots[0, RIGHT].tolist() == [1]
    # coincident centers are not neighbors of each other
    assert g.slots[1].tolist() == [[0], [MISSING], [MISSING], [MISSING]]


def test_random_pages_match_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(150):
        page = random_page(rng, 20)
        for n in (1, 2, 3):
            np.testing.assert_array_equal(build_neighbor_graph(page, n).slots, brute_force_graph(page, n))


def test_every_box_with_candidates_has_a_neighbor():
    rng = np.random.default_rng(1)
    for _ in range(100):
        page = random_page(rng, 30)
        g = build_neighbor_graph(page, 1)
        centers = np.array([b.center for b in page.wordboxes]).reshape(-1, 2)
        for i in range(len(page)):
            others = (np.abs(centers - centers[i]).sum(axis=1) > 0).any()
            assert (g.slots[i] != MISSING).any() == others


def test_relabel_and_flat():
    page = page_of((0.1, 0.1, 0.2, 0.2), (0.3, 0.1, 0.4, 0.2), (0.1, 0.5, 0.2, 0.6))
    g = build_neighbor_graph(page, 1)
    perm = np.array([2, 0, 1])
    r = g.relabel(perm)
    for new, old in enumerate(perm):
        for e in range(4):
            want = [int(np.where(perm == j)[0][0]) for j in g.neighbors(old, e)]
            assert r.neighbors(new, e) == want
    assert g.flat().shape == (3, 4)
    # 0: right 1, bottom 2; 1: left 0, bottom 2; 2: top 0
    assert g.edge_count() == 5


def test_reading_order_single_line_and_two_lines():
    ro = assign_reading_order(page_of((0.6, 0.1, 0.7, 0.15), (0.1, 0.1, 0.2, 0.15), (0.3, 0.1, 0.4, 0.15)))
    assert ro.line_number.tolist() == [0, 0, 0]
    assert ro.order_in_line.tolist() == [2, 0, 1]
    ro = assign_reading_order(page_of((0.1, 0.3, 0.2, 0.35), (0.1, 0.1, 0.2, 0.15)))
    assert ro.line_number.tolist() == [1, 0]


def test_reading_order_exact_half_overlap_separates():
    # heights 0.25 and 0.5, shared y-interval 0.125 = 0.5 * min height
    ro = assign_reading_order(page_of((0.1, 0.0, 0.2, 0.25), (0.3, 0.125, 0.4, 0.625)))
    assert ro.line_number.tolist() == [0, 1]
    ro = assign_reading_order(page_of((0.1, 0.0, 0.2, 0.25), (0.3, 0.12, 0.4, 0.62)))
    assert ro.line_number.tolist() == [0, 0]


def test_reading_order_is_seed_based_not_transitive():
    # 1 overlaps the seed 0; 2 overlaps 1 but not 0, so it starts a new line
    ro = assign_reading_order(page_of((0.1, 0.0, 0.2, 0.1), (0.3, 0.04, 0.4, 0.14), (0.5, 0.08, 0.6, 0.18)))
    assert ro.line_number.tolist() == [0, 0, 1]


def test_rotation_examples():
    np.testing.assert_array_equal(rotate_bboxes(np.array([[0.0, 0.0, 1.0, 1.0]])), [[0, 0, 1, 1]])
    np.testing.assert_allclose(rotate_bboxes(np.array([[0.1, 0.2, 0.3, 0.4]])), [[0.6, 0.1, 0.8, 0.3]],
                               atol=1e-15)
    rng = np.random.default_rng(2)
    b = rng.uniform(0, 0.5, (50, 2))
    boxes = np.concatenate([b, b + rng.uniform(0.01, 0.5, (50, 2))], axis=1)
    r = boxes
    for _ in range(4):
        r = rotate_bboxes(r)
        assert (r[:, 0] < r[:, 2]).all() and (r[:, 1] < r[:, 3]).all()
    assert np.abs(r - boxes).max() <= 1e-12


def test_rotate_page_swaps_dimensions():
    page = Page(200.0, 100.0, (WordBox(0, (0.1, 0.2, 0.3, 0.4), "x"),))
    rot = rotate_page_90(page)
    assert (rot.width, rot.height) == (100.0, 200.0)
    assert rot.wordboxes[0].text == "x"


def _check_order_invariants(page):
    ro = assign_reading_order(page)
    n = len(page)
    pairs = set(zip(ro.line_number.tolist(), ro.order_in_line.tolist()))
    assert len(pairs) == n
    for line in set(ro.line_number.tolist()):
        orders = sorted(ro.order_in_line[ro.line_number == line].tolist())
        assert orders == list(range(len(orders)))
    # rotation duality
    rot = assign_reading_order(rotate_page_90(page))
    np.testing.assert_array_equal(rot.line_number, ro.rot_line_number)
    np.testing.assert_array_equal(rot.order_in_line, ro.rot_order_in_line)
    return ro


def test_reading_order_properties_on_random_pages():
    rng = np.random.default_rng(3)
    for _ in range(200):
        page = random_page(rng, 40)
        ro = _check_order_invariants(page)
        if not len(page):
            continue
        b = page.bboxes()
        room_x = int(round((1 - b[:, 2].max()) * GRID))
        room_y = int(round((1 - b[:, 3].max()) * GRID))
        sx, sy = rng.integers(0, room_x + 1) / GRID, rng.integers(0, room_y + 1) / GRID
        moved = Page(1, 1, tuple(WordBox(w.index, (w.bbox[0] + sx, w.bbox[1] + sy, w.bbox[2] + sx,
                                                   w.bbox[3] + sy)) for w in page.wordboxes))
        ro2 = assign_reading_order(moved)
        np.testing.assert_array_equal(ro.as_matrix(), ro2.as_matrix())
        np.testing.assert_array_equal(build_neighbor_graph(page, 2).slots, build_neighbor_graph(moved, 2).slots)


def test_sequence_sorts_by_line_then_order():
    page = page_of((0.5, 0.5, 0.6, 0.55), (0.1, 0.1, 0.2, 0.15), (0.1, 0.5, 0.2, 0.55))
    assert assign_reading_order(page).sequence().tolist() == [1, 2, 0]
