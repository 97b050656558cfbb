import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from detbench.anchors import concat_grids, generate_grid, ssd_anchor_pyramid
from detbench.geometry import area, centers_sizes


def test_single_anchor():
    g = generate_grid(1, 1, 16, 16, [1], [1])
    assert_array_equal(g.boxes, [[0, 0, 16, 16]])


def test_count_and_ordering():
    g = generate_grid(2, 3, 16, 16, [1, 2], [1])
    assert len(g) == 12
    yc, xc, h, _ = centers_sizes(g.boxes)
    # Row-major over cells, then scale.
    assert_allclose(yc, np.repeat([8, 8, 8, 24, 24, 24], 2))
    assert_allclose(xc, np.repeat([8, 24, 40, 8, 24, 40], 2))
    assert_allclose(h, np.tile([16, 32], 6))


def test_ratio_preserves_area():
    g = generate_grid(1, 1, 16, 16, [1], [2])
    _, _, h, w = centers_sizes(g.boxes)
    assert w[0] == pytest.approx(16 * np.sqrt(2))
    assert h[0] == pytest.approx(16 / np.sqrt(2))
    assert area(g.boxes)[0] == pytest.approx(256)


def test_centers_follow_cell_centers(rng):
    fh, fw, s = 3, 5, 7.0
    g = generate_grid(fh, fw, s, 10, [0.5, 1, 2], [0.5, 1, 2])
    yc, xc, _, _ = centers_sizes(g.boxes)
    cells = np.arange(fh * fw).repeat(9)
    assert_allclose(yc, (cells // fw + 0.5) * s)
    assert_allclose(xc, (cells % fw + 0.5) * s)


def test_rejects_empty_lists():
    with pytest.raises(ValueError):
        generate_grid(2, 2, 16, 16, [], [1])
    with pytest.raises(ValueError):
        generate_grid(2, 2, 16, 16, [1], [])


def test_deterministic():
    a = generate_grid(4, 4, 8, 8, [1, 1.5], [0.5, 1, 2])
    b = generate_grid(4, 4, 8, 8, [1, 1.5], [0.5, 1, 2])
    assert a.boxes.tobytes() == b.boxes.tobytes()


def test_halving_resolution_covers_same_extent():
    fine = generate_grid(8, 8, 8, 8, [1], [1])
    coarse = generate_grid(4, 4, 16, 8, [1], [1])
    for g in (fine, coarse):
        yc, xc, _, _ = centers_sizes(g.boxes)
        # Centers sit half a stride inside the 64-pixel image on both grids.
        assert yc.min() == g.stride / 2 and yc.max() == 64 - g.stride / 2
        assert xc.min() == g.stride / 2 and xc.max() == 64 - g.stride / 2


def test_pyramid_counts_and_layer_order():
    grids = ssd_anchor_pyramid([(4, 4), (2, 2), (1, 1)], [8, 16, 32], [0.5, 1, 2], 32)
    assert [len(g) for g in grids] == [48, 12, 3]
    assert len(concat_grids(grids)) == 63
    sizes = [area(g.boxes).max() for g in grids]
    assert sizes == sorted(sizes)


def test_single_layer_pyramid_equals_grid():
    (g,) = ssd_anchor_pyramid([(4, 4)], [8], [0.5, 1, 2], 32)
    assert_array_equal(g.boxes, generate_grid(4, 4, 8, 8, [1], [0.5, 1, 2]).boxes)


def test_pyramid_rejects_non_decaying():
    with pytest.raises(ValueError):
        ssd_anchor_pyramid([(4, 4), (4, 4)], [8, 16], [1], 32)
    with pytest.raises(ValueError):
        ssd_anchor_pyramid([(16, 16), (2, 2)], [8, 16], [1], 32)
