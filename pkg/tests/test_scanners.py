import numpy as np
import pytest

from xyscannet.errors import ShapeError
from xyscannet.scan import init_scan_params, s6_forward
from xyscannet.scanners import ScannerConfig, apply_scanner, inter_gate, inter_scan, intra_scan


def _p(D=3, N=4, seed=0):
    return init_scan_params(np.random.default_rng(seed), D, N, dtype=np.float64)


def test_intra_single_row_equals_s6():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((2, 1, 9, 3))
    p = _p()
    out = intra_scan(F, "horizontal", p).numpy()
    ref = s6_forward(F.reshape(2, 9, 3), p).numpy().reshape(2, 1, 9, 3)
    np.testing.assert_array_equal(out, ref)


@pytest.mark.parametrize("axis", ["horizontal", "vertical"])
@pytest.mark.parametrize("scan", [intra_scan, inter_scan])
def test_zero_input_gives_zero_output(axis, scan):
    np.testing.assert_array_equal(scan(np.zeros((1, 4, 5, 3)), axis, _p()).numpy(), 0.0)


def test_intra_perturbation_example():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((1, 6, 8, 3))
    p = _p()
    G = F.copy()
    G[0, 2, 5] += 1.0
    a, b = intra_scan(F, "horizontal", p).numpy(), intra_scan(G, "horizontal", p).numpy()
    rows = [h for h in range(6) if h != 2]
    np.testing.assert_array_equal(a[:, rows], b[:, rows])
    np.testing.assert_array_equal(a[:, 2, :5], b[:, 2, :5])  # causal inside the row
    assert np.any(a[:, 2, 5:] != b[:, 2, 5:])


def test_vertical_intra_isolates_columns():
    rng = np.random.default_rng(2)
    F = rng.standard_normal((2, 7, 5, 3))
    p = _p()
    G = F.copy()
    G[:, 3:, 1] += rng.standard_normal((2, 4, 3))
    a, b = intra_scan(F, "vertical", p).numpy(), intra_scan(G, "vertical", p).numpy()
    others = [w for w in range(5) if w != 1]
    np.testing.assert_array_equal(a[:, :, others], b[:, :, others])
    np.testing.assert_array_equal(a[:, :3, 1], b[:, :3, 1])


def test_inter_constant_input():
    p = _p()
    out = inter_scan(np.full((1, 4, 6, 3), 0.8), "vertical", p).numpy()
    gate = out / 0.8
    np.testing.assert_allclose(gate, np.broadcast_to(gate[:, :, :1, :], gate.shape), atol=1e-15)


@pytest.mark.parametrize("axis,pooled", [("vertical", 2), ("horizontal", 1)])
def test_inter_gate_factorization(axis, pooled):
    rng = np.random.default_rng(3)
    F = rng.standard_normal((2, 5, 6, 3))
    out = inter_scan(F, axis, _p()).numpy()
    mask = np.abs(F) > 1e-6
    gate = np.where(mask, out / np.where(mask, F, 1.0), np.nan)
    spread = np.nanmax(gate, axis=pooled) - np.nanmin(gate, axis=pooled)
    assert np.nanmax(spread) <= 1e-6
    g = inter_gate(F, axis, _p()).numpy()
    assert g.shape[pooled] == 1
    assert np.all((g > 0) & (g < 1))


def test_inter_gate_permutation_invariant_along_pooled_axis():
    rng = np.random.default_rng(4)
    F = rng.standard_normal((1, 4, 7, 3))
    perm = rng.permutation(7)
    p = _p()
    out = inter_scan(F, "vertical", p).numpy()
    out_perm = inter_scan(F[:, :, perm], "vertical", p).numpy()
    np.testing.assert_allclose(out_perm, out[:, :, perm], atol=1e-14)


def test_scanner_shape_errors():
    with pytest.raises(ShapeError):
        intra_scan(np.ones((1, 4, 4, 2)), "horizontal", _p(3))
    with pytest.raises(ShapeError):
        inter_scan(np.ones((4, 4, 3)), "vertical", _p(3))


def test_scanner_config_dispatch():
    rng = np.random.default_rng(5)
    F = rng.standard_normal((1, 3, 4, 3))
    p = _p()
    cfg = ScannerConfig("vertical", "inter", p)
    assert cfg.channels == 3
    np.testing.assert_array_equal(apply_scanner(F, cfg).numpy(), inter_scan(F, "vertical", p).numpy())
    with pytest.raises(ValueError):
        ScannerConfig("diagonal", "intra", p)
