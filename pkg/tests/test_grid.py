import pytest

from conftest import run_on_grid
from gridmat.grid import (
    DistScheme,
    auto_grid_shape,
    layouts,
    local_extent,
    make_grid,
    owner,
)
from gridmat.transport import run_ranks, single_world


def test_single_rank_grid_is_1x1():
    grid = make_grid(single_world())
    assert (grid.height, grid.width) == (1, 1)
    assert (grid.my_row, grid.my_col) == (0, 0)


@pytest.mark.parametrize(
    "size,expected",
    [(1, (1, 1)), (2, (1, 2)), (4, (2, 2)), (6, (2, 3)), (12, (3, 4)), (7, (1, 7))],
)
def test_auto_shape_largest_divisor_below_sqrt(size, expected):
    assert auto_grid_shape(size) == expected


def test_explicit_column_grid():
    def body(comm):
        grid = make_grid(comm, r=4, c=1)
        return grid.row_comm.size, grid.col_comm.size

    out = run_ranks(4, body)
    assert out == [(1, 4)] * 4


def test_grid_shape_mismatch_rejected():
    def body(comm):
        with pytest.raises(ValueError, match="does not match"):
            make_grid(comm, r=3, c=2)
        return True

    assert run_ranks(4, body) == [True] * 4


def test_rank_coordinate_bijection_column_major():
    def body(comm):
        grid = make_grid(comm, 2, 3)
        assert grid.world.rank == grid.my_row + grid.my_col * grid.height
        assert grid.rank_of(grid.my_row, grid.my_col) == grid.world.rank
        return grid.my_row, grid.my_col

    coords = run_ranks(6, body)
    assert len(set(coords)) == 6  # bijection


def test_row_col_comm_partition():
    def body(comm):
        grid = make_grid(comm, 2, 3)
        # members of my row_comm share my_row; ordered by my_col
        assert grid.row_comm.size == grid.width
        assert grid.col_comm.size == grid.height
        assert grid.row_comm.rank == grid.my_col
        assert grid.col_comm.rank == grid.my_row
        return True

    assert run_ranks(6, body) == [True] * 6


def test_owner_single_rank():
    grid = make_grid(single_world())
    for i in range(3):
        for j in range(3):
            assert owner(grid, DistScheme.MC_MR, i, j) == 0


def test_owner_mc_mr_residue():
    def body(comm):
        grid = make_grid(comm, 2, 3)
        return owner(grid, DistScheme.MC_MR, 5, 7)

    out = run_ranks(6, body)
    # (5 mod 2, 7 mod 3) = (1, 1) -> rank 1 + 1*2 = 3
    assert out == [3] * 6


def test_owner_vc_star_residue():
    def body(comm):
        grid = make_grid(comm, 2, 2)
        return owner(grid, DistScheme.VC_STAR, 6, 0)

    assert run_ranks(4, body) == [2] * 4


def test_owner_star_star_is_self():
    def body(comm):
        grid = make_grid(comm, 2, 2)
        return owner(grid, DistScheme.STAR_STAR, 3, 3) == comm.rank

    assert run_ranks(4, body) == [True] * 4


def test_local_extent_single_rank():
    grid = make_grid(single_world())
    assert local_extent(grid, DistScheme.MC_MR, 5, 3) == (5, 3)


def test_local_extent_2x2_residue_counts():
    def body(grid):
        return (grid.my_row, grid.my_col), local_extent(grid, DistScheme.MC_MR, 5, 5)

    out = dict(run_on_grid(2, 2, body))
    assert out[(0, 0)] == (3, 3)
    assert out[(1, 1)] == (2, 2)
    assert out[(0, 1)] == (3, 2)
    assert out[(1, 0)] == (2, 3)


def test_local_heights_sum_to_global():
    def body(grid):
        return local_extent(grid, DistScheme.MC_MR, 7, 1)[0]

    heights = run_on_grid(3, 1, body)
    assert heights == [3, 2, 2]
    assert sum(heights) == 7


def test_star_star_extent_is_full():
    def body(grid):
        return local_extent(grid, DistScheme.STAR_STAR, 4, 6)

    assert run_on_grid(2, 2, body) == [(4, 6)] * 4


def test_vc_star_rows_cycle_over_all_ranks():
    def body(grid):
        lh, lw = local_extent(grid, DistScheme.VC_STAR, 7, 3)
        return lh, lw

    out = run_on_grid(2, 2, body)
    assert [o[0] for o in out] == [2, 2, 2, 1]
    assert all(o[1] == 3 for o in out)


def test_index_maps_roundtrip_identity_single():
    grid = make_grid(single_world())
    rows, cols = layouts(grid, DistScheme.MC_MR)
    for i in range(5):
        assert rows.to_local(i) == i
        assert rows.to_global(i) == i


def test_index_map_known_value():
    def body(grid):
        rows, _ = layouts(grid, DistScheme.MC_MR)
        if grid.my_row == 1:
            return rows.to_local(5)
        return None

    out = run_on_grid(2, 2, body)
    assert {v for v in out if v is not None} == {2}  # (5-1)/2


@pytest.mark.parametrize("r,c", [(1, 1), (1, 3), (2, 2), (3, 3)])
def test_index_maps_exhaustive_roundtrip(r, c):
    def body(grid):
        rows, cols = layouts(grid, DistScheme.MC_MR)
        seen = []
        for i in range(9):
            for j in range(9):
                if rows.owns(i) and cols.owns(j):
                    li, lj = rows.to_local(i), cols.to_local(j)
                    assert rows.to_global(li) == i
                    assert cols.to_global(lj) == j
                    assert owner(grid, DistScheme.MC_MR, i, j) == grid.world.rank
                    seen.append((i, j))
        return seen

    per_rank = run_on_grid(r, c, body)
    flat = [ij for chunk in per_rank for ij in chunk]
    # partition property: no overlaps, full coverage
    assert len(flat) == len(set(flat)) == 81


def test_unowned_global_index_rejected():
    def body(grid):
        rows, _ = layouts(grid, DistScheme.MC_MR)
        bad = 1 if grid.my_row == 0 else 0
        with pytest.raises(IndexError, match="not owned"):
            rows.to_local(bad)
        return True

    assert run_on_grid(2, 1, body) == [True, True]
