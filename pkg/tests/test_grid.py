import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from pgtband.grid import (BinaryMask, LabelGrid, LgridError, binarize, grid_from_list,
                          read_lgrid, write_lgrid)


@st.composite
def label_grids(draw):
    ndim = draw(st.sampled_from([2, 3]))
    shape = draw(st.tuples(*[st.integers(1, 6)] * ndim))
    top = draw(st.sampled_from([1, 3, 255, 65535]))
    vox = draw(hnp.arrays(np.uint16, shape, elements=st.integers(0, top)))
    spacing = draw(st.one_of(
        st.just(()),
        st.tuples(*[st.floats(0.01, 100, allow_nan=False, allow_infinity=False)] * ndim),
    ))
    extra = draw(st.integers(0, 3))
    return LabelGrid(vox, spacing, min(65535, int(vox.max()) + extra))


def test_binarize_examples():
    assert binarize(grid_from_list([[1, 0], [0, 1]]), 1) == BinaryMask([[1, 0], [0, 1]])
    assert binarize(grid_from_list([[2, 2], [2, 2]]), 1).count == 0
    assert binarize(grid_from_list([[1, 2], [3, 1]]), 1) == BinaryMask([[1, 0], [0, 1]])


def test_binarize_rejects_label_outside_declared_range():
    with pytest.raises(ValueError, match="label absent from grid's declared range"):
        binarize(grid_from_list([[1, 0]], max_label=1), 2)


def test_binarize_copies_spacing():
    g = grid_from_list([[1, 0], [0, 1]], spacing=(0.5, 2.0))
    assert binarize(g, 1).spacing == (0.5, 2.0)


@given(label_grids(), st.integers(0, 5))
def test_binarize_count_matches_direct_count(g, label):
    if label > g.max_label:
        return
    assert binarize(g, label).count == int((g.voxels == label).sum())


def test_read_hand_decoded():
    data = b"LGRID 1 2 2 2 1\nDATA\n" + bytes([0, 0, 1, 0, 1, 0, 0, 0])
    g = read_lgrid(data)
    assert g.dims == (2, 2)
    assert g.voxels.tolist() == [[0, 1], [1, 0]]
    assert g.spacing == (1.0, 1.0)
    assert g.max_label == 1


def test_write_minimal():
    assert write_lgrid(grid_from_list([[0]])) == b"LGRID 1 2 1 1 0\nDATA\n\x00\x00"


def test_write_is_deterministic():
    a = grid_from_list([[3, 1], [0, 2]], spacing=(0.5, 1.25))
    b = grid_from_list([[3, 1], [0, 2]], spacing=(0.5, 1.25))
    assert write_lgrid(a) == write_lgrid(b)
    assert write_lgrid(a).startswith(b"LGRID 1 2 2 2 3\nSPACING 0.5 1.25\nDATA\n")


def test_row_major_last_axis_fastest():
    g = LabelGrid(np.arange(6).reshape(1, 2, 3))
    payload = write_lgrid(g).split(b"DATA\n", 1)[1]
    assert np.frombuffer(payload, "<u2").tolist() == [0, 1, 2, 3, 4, 5]


@given(label_grids())
def test_round_trip(g):
    data = write_lgrid(g)
    back = read_lgrid(data)
    assert back == g
    assert write_lgrid(back) == data


@pytest.mark.parametrize("data, field", [
    (b"LGRIX 1 2 1 1 0\nDATA\n\x00\x00", "magic"),
    (b"LGRID 2 2 1 1 0\nDATA\n\x00\x00", "version"),
    (b"LGRID 1 4 1 1 1 1 0\nDATA\n\x00\x00", "ndim"),
    (b"LGRID 1 1 1 0\nDATA\n\x00\x00", "ndim"),
    (b"LGRID 1 2 2 2 1\nDATA\n" + b"\x00\x00" * 3, "payload"),
    (b"LGRID 1 2 1 1 0\nDATA\n\x00\x00\x00", "payload"),
    (b"LGRID 1 2 1 1 0\nDATA\n\x05\x00", "max_label"),
    (b"LGRID 1 2 1 1 70000\nDATA\n\x00\x00", "max_label"),
    (b"LGRID 1 2 1 1 0\nSPACING 1.0\nDATA\n\x00\x00", "spacing"),
    (b"LGRID 1 2 1 1 0\nSPACING 1.0 -2\nDATA\n\x00\x00", "spacing"),
    (b"LGRID 1 2 1 1 0\nDATUM\n\x00\x00", "data"),
    (b"LGRID 1 2 0 1 0\nDATA\n", "dims"),
])
def test_parse_errors_name_the_field(data, field):
    with pytest.raises(LgridError) as exc:
        read_lgrid(data)
    assert exc.value.field == field


def test_reads_explicit_unit_spacing():
    data = b"LGRID 1 2 1 2 1\nSPACING 1.0 1\nDATA\n\x01\x00\x00\x00"
    assert read_lgrid(data) == grid_from_list([[1, 0]], max_label=1)


def test_grid_invariants():
    with pytest.raises(ValueError):
        LabelGrid(np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        LabelGrid(np.zeros((2, 2, 2, 2), dtype=int))
    with pytest.raises(ValueError):
        LabelGrid(np.zeros((2, 2), dtype=int), spacing=(1.0, 0.0))
    with pytest.raises(ValueError):
        LabelGrid(np.array([[3]]), max_label=2)
    g = grid_from_list([[1]])
    with pytest.raises(ValueError):
        g.voxels[0, 0] = 2
