"""Dense tensor primitives: unfolding, folding, mode products, Kronecker products.

All operations work on plain ``numpy.ndarray`` values in 64-bit floats and are
pure functions (no shared mutable state), so they are safe to call from
multiple threads.

Layout convention
-----------------
The linear order of a tensor is mode-1-fastest (Fortran order), and the mode-k
unfolding places mode k on the rows while the columns enumerate the remaining
modes in ascending order with the lowest-numbered mode varying fastest.  Under
this convention the matrix form of a multilinear product is

    unfold(G x_1 U1 ... x_K UK, k) = Uk @ unfold(G, k) @ kron_chain.T

with ``kron_chain = UK (x) ... (x) U_{k+1} (x) U_{k-1} (x) ... (x) U1``.
Every module in this package depends on that identity holding exactly, so do
not change the unfolding order.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "check_dense",
    "check_matrix",
    "unfold",
    "fold",
    "mode_product",
    "multi_mode_product",
    "kronecker",
    "frobenius_norm",
]


def check_dense(x, name: str = "tensor") -> np.ndarray:
    """Coerce `x` to a float64 ndarray and reject non-finite entries.

    This is the construction-time guard for tensors entering the library;
    internal kernels assume it already ran and skip the finite scan.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1:
        raise ValueError(f"{name} must have at least one mode")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return x


def check_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce `m` to a finite float64 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {m.ndim}-D")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return m


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-`mode` unfolding of `x` as an ``(n_mode, prod(other dims))`` matrix.

    Columns enumerate the remaining modes in ascending index order with the
    lowest-numbered mode varying fastest (see module docstring).
    """
    x = np.asarray(x)
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode {mode} out of range for a {x.ndim}-mode tensor")
    return np.moveaxis(x, mode, 0).reshape((x.shape[mode], -1), order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild a tensor of `shape` from `m`.

    ``fold(unfold(x, k), k, x.shape)`` is bitwise equal to ``x``.
    """
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    m = np.asarray(m)
    rest = tuple(s for i, s in enumerate(shape) if i != mode)
    expected = (shape[mode], int(np.prod(rest, dtype=np.int64)) if rest else 1)
    if m.ndim != 2 or m.shape != expected:
        raise ValueError(
            f"matrix of shape {getattr(m, 'shape', None)} does not match "
            f"mode-{mode} unfolding of shape {shape} (expected {expected})"
        )
    return np.moveaxis(m.reshape((shape[mode],) + rest, order="F"), 0, mode)


def mode_product(x: np.ndarray, v: np.ndarray, mode: int) -> np.ndarray:
    """Multiply `x` along `mode` by the matrix `v` (`v.shape[1]` must equal ``x.shape[mode]``)."""
    x = np.asarray(x)
    v = np.asarray(v)
    if v.ndim != 2:
        raise ValueError("mode_product expects a 2-D matrix")
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode {mode} out of range for a {x.ndim}-mode tensor")
    if v.shape[1] != x.shape[mode]:
        raise ValueError(
            f"inner dimension mismatch: matrix is {v.shape}, mode {mode} has "
            f"size {x.shape[mode]}"
        )
    # tensordot contracts independently of the unfolding code path, so the
    # unfolding identity tests genuinely cross-check two mechanisms.
    out = np.tensordot(v, x, axes=(1, mode))
    return np.moveaxis(out, 0, mode)


def multi_mode_product(
    x: np.ndarray,
    matrices: Sequence[np.ndarray | None],
    modes: Iterable[int] | None = None,
    transpose: bool = False,
) -> np.ndarray:
    """Apply several mode products; ``None`` entries are skipped (identity).

    Parameters
    ----------
    x : ndarray
        Input tensor.
    matrices : sequence of ndarray or None
        One matrix per entry of `modes`.
    modes : iterable of int, optional
        Modes to multiply along; defaults to ``0..len(matrices)-1``.  At most
        one matrix per mode.
    transpose : bool
        Apply each matrix transposed (used for subspace projection).

    The result is independent of application order for distinct modes; modes
    are applied in ascending order for determinism.
    """
    if modes is None:
        modes = range(len(matrices))
    modes = [int(k) for k in modes]
    if len(modes) != len(matrices):
        raise ValueError("matrices and modes must have equal length")
    if len(set(modes)) != len(modes):
        raise ValueError(f"duplicate mode in {modes}")
    out = np.asarray(x)
    for k, v in sorted(zip(modes, matrices), key=lambda t: t[0]):
        if v is None:
            continue
        out = mode_product(out, v.T if transpose else v, k)
    return out


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i, j) of the result is ``a[i, j] * b``."""
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    return np.kron(a, b)


def frobenius_norm(x: np.ndarray) -> float:
    """Square root of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(x).ravel()))
