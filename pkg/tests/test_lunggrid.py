import numpy as np
import pytest

from cxrpatch.errors import InsufficientComponentsError, InvalidBoxError, InvalidInputError
from cxrpatch.lunggrid import (
    GRID_6,
    GRID_16,
    GridSpec,
    Mask,
    PatchGrid,
    Rect,
    build_grid,
    grid_preset,
    grid_union_covers,
    mask_to_lung_boxes,
)


def brute_force_components(bits):
    """Reference 8-connected labeling by BFS; returns list of pixel sets."""
    h, w = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    comps = []
    for sy in range(h):
        for sx in range(w):
            if bits[sy, sx] and not seen[sy, sx]:
                stack = [(sy, sx)]
                seen[sy, sx] = True
                pixels = []
                while stack:
                    y, x = stack.pop()
                    pixels.append((y, x))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = y + dy, x + dx
                            if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                stack.append((ny, nx))
                comps.append(pixels)
    return comps


def brute_force_boxes(bits):
    comps = sorted(brute_force_components(bits), key=len)[-2:]
    boxes = []
    for pixels in comps:
        ys = [p[0] for p in pixels]
        xs = [p[1] for p in pixels]
        boxes.append(Rect(min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1))
    boxes.sort(key=lambda r: (r.center_x, r.x))
    return boxes[0], boxes[1]


class TestMaskToLungBoxes:
    def test_two_rectangles(self):
        bits = np.zeros((40, 60), dtype=bool)
        bits[10:30, 10:20] = True
        bits[10:30, 40:50] = True
        left, right = mask_to_lung_boxes(Mask(bits))
        assert (left.x, left.y, left.w, left.h) == (10, 10, 10, 20)
        assert (right.x, right.y, right.w, right.h) == (40, 10, 10, 20)

    def test_all_zero_mask(self):
        with pytest.raises(InsufficientComponentsError) as exc:
            mask_to_lung_boxes(Mask(np.zeros((8, 8), dtype=bool)))
        assert exc.value.component_count == 0

    def test_single_component(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[2:5, 2:5] = True
        with pytest.raises(InsufficientComponentsError) as exc:
            mask_to_lung_boxes(Mask(bits))
        assert exc.value.component_count == 1

    def test_speck_ignored_with_l_shapes(self):
        bits = np.zeros((30, 30), dtype=bool)
        bits[2:12, 2:5] = True   # L part 1
        bits[9:12, 2:10] = True
        bits[2:12, 20:23] = True  # second L
        bits[2:5, 16:23] = True
        bits[25, 25] = True       # 1-px speck
        left, right = mask_to_lung_boxes(Mask(bits))
        exp_left, exp_right = brute_force_boxes(bits)
        assert left == exp_left and right == exp_right
        # speck's pixel not inside either box
        assert not (left.x <= 25 < left.right and left.y <= 25 < left.bottom)
        assert not (right.x <= 25 < right.right and right.y <= 25 < right.bottom)

    def test_matches_brute_force_on_random_masks(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 25:
            bits = rng.random((16, 16)) < 0.25
            comps = brute_force_components(bits)
            if len(comps) < 2:
                continue
            sizes = sorted(len(c) for c in comps)
            if len(sizes) >= 3 and sizes[-3] == sizes[-2]:
                continue  # ambiguous two-largest; ordering is impl-defined
            left, right = mask_to_lung_boxes(Mask(bits))
            exp_left, exp_right = brute_force_boxes(bits)
            assert {left, right} == {exp_left, exp_right}
            checked += 1


class TestBuildGrid:
    def test_zero_overlap_tiles_exactly(self):
        box = Rect(0, 0, 400, 800)
        grid = build_grid(box, Rect(1000, 0, 400, 800), GridSpec(2, 4, 0.0))
        assert len(grid.left_rects) == 8
        for r in grid.left_rects:
            assert (r.w, r.h) == (200, 200)
        xs = sorted({r.x for r in grid.left_rects})
        ys = sorted({r.y for r in grid.left_rects})
        assert xs == [0, 200] and ys == [0, 200, 400, 600]

    def test_overlap_formula_700_wide(self):
        # patch width 400, stride 300, overlap 100 = 0.25 * 400
        box = Rect(0, 0, 700, 800)
        grid = build_grid(box, Rect(1000, 0, 700, 800), GridSpec(2, 4, 0.25))
        row = grid.left_rects[:2]
        assert row[0].x == 0 and row[0].w == 400
        assert row[1].x == 300 and row[1].w == 400
        assert row[0].right - row[1].x == 100

    def test_single_column_spans_box_width(self):
        box = Rect(5, 7, 90, 300)
        grid = build_grid(box, Rect(200, 7, 90, 300), GridSpec(1, 3, 0.3))
        for r in grid.left_rects:
            assert r.x == 5 and r.w == 90

    def test_presets_total_counts(self):
        left, right = Rect(0, 0, 100, 200), Rect(150, 0, 100, 200)
        assert len(build_grid(left, right, GRID_16).rects) == 16
        assert len(build_grid(left, right, GRID_6).rects) == 6
        assert grid_preset(16).patches_per_lung == 8
        assert grid_preset(6).patches_per_lung == 3

    def test_row_major_ordering(self):
        grid = build_grid(Rect(0, 0, 100, 200), Rect(150, 0, 100, 200), GRID_16)
        rects = grid.left_rects
        for i in range(1, 8):
            prev, cur = rects[i - 1], rects[i]
            assert (cur.y, cur.x) > (prev.y, prev.x) or cur.y > prev.y

    def test_too_small_box_rejected(self):
        with pytest.raises(InvalidBoxError):
            build_grid(Rect(0, 0, 3, 200), Rect(150, 0, 100, 200), GridSpec(8, 4, 0.25))

    def test_random_boxes_cover_and_overlap(self):
        rng = np.random.default_rng(13)
        for _ in range(300):
            spec = GridSpec(
                cols_per_lung=int(rng.integers(1, 5)),
                rows_per_lung=int(rng.integers(1, 6)),
                overlap_fraction=float(rng.uniform(0, 0.499)),
            )
            min_w = int(np.ceil(spec.cols_per_lung * 2))
            min_h = int(np.ceil(spec.rows_per_lung * 2))
            left = Rect(
                int(rng.integers(0, 20)), int(rng.integers(0, 20)),
                int(rng.integers(min_w, min_w + 200)), int(rng.integers(min_h, min_h + 200)),
            )
            right = Rect(left.x + left.w + 10, left.y, left.w, left.h)
            grid = build_grid(left, right, spec)
            assert grid_union_covers(grid, left, right)
            # horizontal overlaps within floor(omega * patch width) +/- 1
            pw = left.w / (spec.cols_per_lung - (spec.cols_per_lung - 1) * spec.overlap_fraction)
            expected = int(np.floor(spec.overlap_fraction * pw))
            for row in range(spec.rows_per_lung):
                base = row * spec.cols_per_lung
                for c in range(1, spec.cols_per_lung):
                    a = grid.left_rects[base + c - 1]
                    b = grid.left_rects[base + c]
                    assert abs((a.right - b.x) - expected) <= 1

    def test_first_and_last_patch_align_to_box(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            spec = GridSpec(2, 4, float(rng.uniform(0, 0.499)))
            box = Rect(3, 9, int(rng.integers(30, 300)), int(rng.integers(30, 300)))
            grid = build_grid(box, Rect(box.x + box.w + 5, box.y, box.w, box.h), spec)
            assert grid.left_rects[0].x == box.x and grid.left_rects[0].y == box.y
            assert grid.left_rects[-1].right == box.right
            assert grid.left_rects[-1].bottom == box.bottom


class TestGridUnionCovers:
    def test_built_grid_covers(self):
        left, right = Rect(0, 0, 97, 211), Rect(120, 3, 101, 205)
        grid = build_grid(left, right, GRID_16)
        assert grid_union_covers(grid, left, right)

    def test_missing_rect_breaks_coverage(self):
        left, right = Rect(0, 0, 100, 200), Rect(150, 0, 100, 200)
        spec = GridSpec(2, 4, 0.0)  # zero overlap: every rect is load-bearing
        grid = build_grid(left, right, spec)
        broken = PatchGrid(
            left_rects=grid.left_rects[1:] + (grid.left_rects[-1],),
            right_rects=grid.right_rects,
            spec=spec,
        )
        assert not grid_union_covers(broken, left, right)


def test_rect_validation():
    with pytest.raises(InvalidInputError):
        Rect(0, 0, 0, 5)
    assert Rect(1, 2, 3, 4).area == 12
    assert Rect(0, 0, 10, 10).intersection_area(Rect(5, 5, 10, 10)) == 25
    assert Rect(0, 0, 10, 10).intersection_area(Rect(20, 20, 5, 5)) == 0
