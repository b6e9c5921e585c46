"""Window-extraction kernels checked against a brute-force oracle.

The oracle builds each window cell by cell with nested Python loops, so
any indexing or padding mistake in the vectorized/jit paths shows up as
a mismatch. Forward/backward paths must agree bitwise between the jit
and numpy implementations.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from hmn import kernels
from hmn.kernels import unfold_grid, unfold_grid_bwd


def oracle_unfold(grid, k):
    h, w, d = grid.shape
    pad = k // 2
    out = np.zeros((h * w, k * k * d))
    for r in range(h):
        for c in range(w):
            for dr in range(k):
                for dc in range(k):
                    rr, cc = r + dr - pad, c + dc - pad
                    if 0 <= rr < h and 0 <= cc < w:
                        for ch in range(d):
                            out[r * w + c, (dr * k + dc) * d + ch] = grid[rr, cc, ch]
    return out


def test_matches_oracle_small(rng):
    grid = rng.standard_normal((4, 5, 3))
    got = unfold_grid(grid, 3)
    np.testing.assert_array_equal(got, oracle_unfold(grid, 3))


def test_matches_oracle_k5(rng):
    grid = rng.standard_normal((6, 4, 2))
    np.testing.assert_array_equal(unfold_grid(grid, 5), oracle_unfold(grid, 5))


def test_matches_oracle_many_random(rng):
    # broad sweep over grid shapes and window sizes, exact equality
    for _ in range(100):
        h = int(rng.integers(1, 8))
        w = int(rng.integers(1, 8))
        d = int(rng.integers(1, 5))
        k = int(rng.choice([1, 3, 5]))
        grid = rng.standard_normal((h, w, d))
        np.testing.assert_array_equal(unfold_grid(grid, k), oracle_unfold(grid, k))


def test_k1_is_identity(rng):
    grid = rng.standard_normal((3, 3, 4))
    out = unfold_grid(grid, 1)
    np.testing.assert_array_equal(out, grid.reshape(9, 4))


def test_center_cell_is_own_token(rng):
    grid = rng.standard_normal((5, 5, 2))
    out = unfold_grid(grid, 3)
    center = 3 * 1 + 1  # dr=1, dc=1
    for r in range(5):
        for c in range(5):
            np.testing.assert_array_equal(
                out[r * 5 + c, center * 2:(center + 1) * 2], grid[r, c])


def test_even_k_rejected(rng):
    with pytest.raises(ValueError):
        unfold_grid(rng.standard_normal((4, 4, 2)), 2)


def test_border_padding_is_zero():
    grid = np.ones((2, 2, 1))
    out = unfold_grid(grid, 3)
    # top-left token: rows dr=0 fall outside, dc=0 falls outside
    row = out[0]
    assert row[0] == 0.0 and row[1] == 0.0 and row[2] == 0.0
    assert row[3] == 0.0 and row[4] == 1.0 and row[5] == 1.0


def oracle_unfold_bwd(dout, h, w, d, k):
    pad = k // 2
    acc = np.zeros((h, w, d))
    for r in range(h):
        for c in range(w):
            for dr in range(k):
                for dc in range(k):
                    rr, cc = r + dr - pad, c + dc - pad
                    if 0 <= rr < h and 0 <= cc < w:
                        for ch in range(d):
                            acc[rr, cc, ch] += dout[r * w + c, (dr * k + dc) * d + ch]
    return acc


def test_backward_matches_oracle(rng):
    h, w, d, k = 5, 4, 3, 3
    dout = rng.standard_normal((h * w, k * k * d))
    got = unfold_grid_bwd(dout, h, w, d, k)
    np.testing.assert_allclose(got, oracle_unfold_bwd(dout, h, w, d, k), rtol=1e-12)


def test_backward_is_adjoint(rng):
    # <unfold(x), y> == <x, unfold_bwd(y)> for the linear map
    h, w, d, k = 6, 6, 2, 3
    x = rng.standard_normal((h, w, d))
    y = rng.standard_normal((h * w, k * k * d))
    lhs = float((unfold_grid(x, k) * y).sum())
    rhs = float((x * unfold_grid_bwd(y, h, w, d, k)).sum())
    assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_numpy_fallback_matches_active_path(rng):
    # the private numpy implementations must agree bitwise with whatever
    # unfold_grid/unfold_grid_bwd dispatch to (jit when numba is present)
    for _ in range(20):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        d = int(rng.integers(1, 6))
        k = int(rng.choice([1, 3, 5]))
        grid = rng.standard_normal((h, w, d))
        np.testing.assert_array_equal(unfold_grid(grid, k), kernels._unfold_np(grid, k))
        dout = rng.standard_normal((h * w, k * k * d))
        a = unfold_grid_bwd(dout, h, w, d, k)
        b = kernels._unfold_bwd_np(dout, h, w, d, k)
        np.testing.assert_array_equal(a, b)


@pytest.mark.skipif(not kernels.USE_NUMBA, reason="jit path disabled via HMN_NO_NUMBA")
def test_env_flag_selects_numpy_path(tmp_path, rng):
    """A subprocess with HMN_NO_NUMBA=1 produces byte-identical results."""
    grid = rng.standard_normal((7, 5, 4))
    dout = rng.standard_normal((35, 9 * 4))
    np.save(tmp_path / "grid.npy", grid)
    np.save(tmp_path / "dout.npy", dout)
    script = (
        "import numpy as np\n"
        "from hmn.kernels import unfold_grid, unfold_grid_bwd, USE_NUMBA\n"
        "assert not USE_NUMBA\n"
        f"g = np.load(r'{tmp_path / 'grid.npy'}')\n"
        f"d = np.load(r'{tmp_path / 'dout.npy'}')\n"
        f"np.save(r'{tmp_path / 'fwd.npy'}', unfold_grid(g, 3))\n"
        f"np.save(r'{tmp_path / 'bwd.npy'}', unfold_grid_bwd(d, 7, 5, 4, 3))\n"
    )
    env = dict(os.environ, HMN_NO_NUMBA="1")
    subprocess.run([sys.executable, "-c", script], check=True, env=env)
    np.testing.assert_array_equal(np.load(tmp_path / "fwd.npy"), unfold_grid(grid, 3))
    np.testing.assert_array_equal(
        np.load(tmp_path / "bwd.npy"), unfold_grid_bwd(dout, 7, 5, 4, 3))
