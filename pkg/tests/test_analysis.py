import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xyscannet.analysis import (
    STACKS,
    ScanOrder,
    bench_compare,
    build_stack,
    column_major,
    flatten4way_orders,
    flatten4way_scan,
    forgetting_distance,
    init_flatten_block,
    flatten_block_forward,
    intra_cols,
    intra_rows,
    misalignment_count,
    row_major,
    stack_macs,
    stack_scan_macs,
)
from xyscannet.errors import ContractError, ShapeError
from xyscannet.scan import init_scan_params

grids = st.tuples(st.integers(1, 12), st.integers(1, 12))


def _brute_misaligned(H, W, order):
    # Walk each sequence with explicit neighbour tests, no distance formula.
    bad = 0
    for seq in order:
        for a, b in zip(seq, seq[1:]):
            neighbours = {(a[0] + dr, a[1] + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)}
            bad += b not in neighbours
    return bad


def test_misalignment_examples():
    assert misalignment_count(row_major(3, 4)) == 2
    assert misalignment_count(row_major(64, 64)) == 63
    assert misalignment_count(column_major(64, 64)) == 63
    assert misalignment_count(intra_rows(64, 64)) == 0
    assert misalignment_count(intra_cols(64, 64)) == 0
    # two-column rows wrap onto a diagonal neighbour
    assert misalignment_count(row_major(5, 2)) == 0


@given(grids)
def test_misalignment_matches_brute_force(hw):
    H, W = hw
    for order in [row_major(H, W), column_major(H, W), intra_rows(H, W), intra_cols(H, W)] + flatten4way_orders(H, W):
        assert misalignment_count(order) == _brute_misaligned(H, W, order.sequences)


@given(grids)
def test_all_orders_cover_the_grid(hw):
    for order in [row_major(*hw), intra_rows(*hw), intra_cols(*hw)] + flatten4way_orders(*hw):
        order.validate()


def test_invalid_orders():
    with pytest.raises(ContractError):
        misalignment_count(ScanOrder(2, 2, [[(0, 0), (0, 1), (1, 0)]]))
    with pytest.raises(ContractError):
        ScanOrder(1, 2, [[(0, 0), (0, 0), (0, 1)]]).validate()
    with pytest.raises(ContractError):
        ScanOrder(1, 1, [[(0, 3)]]).validate()
    with pytest.raises(ShapeError):
        row_major(0, 3)


def test_forgetting_distance_row_major():
    s = forgetting_distance(row_major(3, 4))
    assert s.horizontal.max == 1 and s.horizontal.mean == 1
    assert s.vertical.max == 4 and s.vertical.mean == 4
    assert s.overall.pairs == 3 * 3 + 2 * 4
    assert s.overall.disconnected == 0


def test_forgetting_distance_intra_rows():
    s = forgetting_distance(intra_rows(3, 4))
    assert s.horizontal.max == 1
    assert s.vertical.disconnected == 8
    assert math.isinf(s.vertical.max)
    assert s.overall.disconnected_fraction == pytest.approx(8 / 17)


def test_single_row_grid():
    assert misalignment_count(row_major(1, 7)) == 0
    s = forgetting_distance(row_major(1, 7))
    assert s.vertical.pairs == 0 and s.vertical.max == 0.0
    assert s.horizontal.mean == 1.0


# ---------------------------------------------------------- flatten baseline


def _scan_params(D, seed=0):
    rng = np.random.default_rng(seed)
    return [init_scan_params(rng, D, 2, dtype=np.float64) for _ in range(4)]


def test_flatten_scan_zero_and_shape():
    p = _scan_params(3)
    np.testing.assert_array_equal(flatten4way_scan(np.zeros((1, 4, 5, 3)), p).numpy(), 0.0)
    out = flatten4way_scan(np.random.default_rng(0).standard_normal((2, 4, 5, 3)), p)
    assert out.shape == (2, 4, 5, 3)
    with pytest.raises(ShapeError):
        flatten4way_scan(np.zeros((4, 5, 3)), p)


def test_flatten_scan_sees_whole_image():
    # Unlike a row scan, every output depends on a perturbation anywhere.
    p = _scan_params(2, 1)
    x = np.random.default_rng(1).standard_normal((1, 4, 4, 2))
    x2 = x.copy()
    x2[0, 3, 3] += 1.0
    d = np.abs(flatten4way_scan(x, p).numpy() - flatten4way_scan(x2, p).numpy())
    assert np.all(d.max(axis=-1) > 0)


def test_flatten_block_runs():
    w = init_flatten_block(np.random.default_rng(0), 4, 2, dtype=np.float64)
    assert flatten_block_forward(np.ones((1, 4, 4, 4)), w).shape == (1, 4, 4, 4)


# --------------------------------------------------------------- benchmark


def test_stack_cost_ordering():
    C, N, H, W = 16, 16, 64, 64
    assert stack_macs("flatten4way", C, N, H, W) > 2 * stack_macs("inter", C, N, H, W)
    assert stack_macs("inter", C, N, H, W) < stack_macs("interleaved", C, N, H, W) < stack_macs("intra", C, N, H, W)
    assert stack_scan_macs("inter", C, N, H, W) < stack_scan_macs("intra", C, N, H, W)


def test_build_stack():
    for name in STACKS:
        out = build_stack(name, 4, 2)(np.ones((1, 6, 6, 4)))
        assert out.shape == (1, 6, 6, 4)
    with pytest.raises(ValueError):
        build_stack("zigzag", 4, 2)


def test_bench_report_is_deterministic_in_macs():
    a = bench_compare(input_size=(8, 8), repeats=1, channels=4, state_dim=2, warmup=0)
    b = bench_compare(input_size=(8, 8), repeats=1, channels=4, state_dim=2, warmup=0)
    assert [r.macs for r in a.rows] == [r.macs for r in b.rows]
    assert [r.name for r in a.rows] == list(STACKS)
    assert all(r.median_s > 0 and r.peak_bytes > 0 for r in a.rows)
    assert a.to_csv().splitlines()[0].startswith("stack,C,N,H,W,macs")
    assert len(a.to_csv().splitlines()) == 5
    assert "flatten4way" in a.to_table()
    with pytest.raises(KeyError):
        a.row("nope")
