import numpy as np
import pytest

from conftest import GRID_SHAPES, agreed, run_on_grid
from gridmat.distmat import DistMatrix
from gridmat.grid import make_grid
from gridmat.tableio import TableFormat, TableFormatError, read_table_dist, write_table
from gridmat.transport import single_world


def test_read_simple_table_single_rank(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("1 2\n3 4\n")
    A = read_table_dist(str(path), make_grid(single_world()))
    assert np.array_equal(A.local.a, [[1.0, 2.0], [3.0, 4.0]])


@pytest.mark.parametrize("r,c", GRID_SHAPES)
def test_read_same_across_grids(r, c, tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.uniform(-5, 5, (7, 3))
    path = tmp_path / "t.txt"
    path.write_text(
        "\n".join(" ".join(repr(float(v)) for v in row) for row in arr) + "\n"
    )

    def body(grid, p):
        return read_table_dist(p, grid).to_global_array()

    assert np.array_equal(agreed(run_on_grid(r, c, body, str(path))), arr)


def test_ragged_row_names_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2\n3\n")
    with pytest.raises(TableFormatError, match="line 2"):
        read_table_dist(str(path), make_grid(single_world()))


def test_unparseable_token_names_line_and_column(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2\n3 x\n")
    with pytest.raises(TableFormatError, match="line 2, column 2"):
        read_table_dist(str(path), make_grid(single_world()))


def test_empty_file_gives_empty_matrix(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    A = read_table_dist(str(path), make_grid(single_world()))
    assert (A.height, A.width) == (0, 0)


def test_header_skipped(tmp_path):
    path = tmp_path / "h.txt"
    path.write_text("colA colB\n1 2\n")
    A = read_table_dist(str(path), make_grid(single_world()),
                        TableFormat(header=True))
    assert (A.height, A.width) == (1, 2)
    assert A.local.a[0, 0] == 1.0


def test_comma_delimiter(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("1.5,2.5\n")
    A = read_table_dist(str(path), make_grid(single_world()),
                        TableFormat(delimiter="comma"))
    assert np.array_equal(A.local.a, [[1.5, 2.5]])


def test_integer_tag_strict(tmp_path):
    path = tmp_path / "i.txt"
    path.write_text("1 2\n")
    A = read_table_dist(str(path), make_grid(single_world()),
                        TableFormat(tag="i"))
    assert A.tag == "i" and A.local.a.dtype == np.int64
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2.5\n")
    with pytest.raises(TableFormatError, match="integer"):
        read_table_dist(str(bad), make_grid(single_world()), TableFormat(tag="i"))


def test_write_empty_matrix(tmp_path):
    path = tmp_path / "out.txt"
    A = DistMatrix.create(make_grid(single_world()), 0, 0)
    write_table(A, str(path))
    assert path.read_text() == ""


def test_round_trip_bitwise(tmp_path):
    path = tmp_path / "rt.txt"

    def body(grid, p):
        A = DistMatrix.create(grid, 7, 3)
        A.fill_uniform(42)
        write_table(A, p)
        grid.world.barrier()
        B = read_table_dist(p, grid)
        return np.array_equal(B.to_global_array(), A.to_global_array())

    assert all(run_on_grid(2, 2, body, str(path)))


def test_round_trip_comma_format(tmp_path):
    path = tmp_path / "rt.csv"
    grid = make_grid(single_world())
    A = DistMatrix.create(grid, 2, 2)
    A.fill_uniform(9)
    fmt = TableFormat(delimiter="comma")
    write_table(A, str(path), fmt)
    B = read_table_dist(str(path), grid, fmt)
    assert np.array_equal(B.local.a, A.local.a)
    assert "," in path.read_text()


def test_write_only_rank_zero(tmp_path):
    def body(grid, base):
        A = DistMatrix.create(grid, 2, 2)
        A.fill_uniform(3)
        p = f"{base}/rank{grid.world.rank}.txt"
        write_table(A, p)
        import os

        return os.path.exists(p)

    out = run_on_grid(2, 2, body, str(tmp_path))
    assert out == [True, False, False, False]
