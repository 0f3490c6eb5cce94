"""Truncated Tucker decomposition: HOSVD initialization plus HOOI refinement.

The returned factor matrices are column-orthonormal with a deterministic sign
convention (the largest-magnitude entry of each column is non-negative), so
repeated runs on identical data are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor_ops import frobenius_norm, mode_product, multi_mode_product, unfold

__all__ = ["TensorSubspace", "TuckerModel", "hosvd", "hooi"]

_ORTHO_TOL = 1e-10


def _fix_signs(u: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-magnitude entry is >= 0."""
    peaks = np.abs(u).argmax(axis=0)
    signs = np.sign(u[peaks, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def _leading_left_singular(m: np.ndarray, d: int) -> np.ndarray:
    """Top-`d` left singular vectors of `m`, completed to `d` orthonormal
    columns by Gram-Schmidt against canonical basis vectors when the numerical
    rank of `m` falls short."""
    rows = m.shape[0]
    if d > rows:
        raise ValueError(f"requested {d} components from a {rows}-row unfolding")
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size and s[0] > 0:
        rank = int(np.count_nonzero(s > max(m.shape) * np.finfo(np.float64).eps * s[0]))
    else:
        rank = 0
    cols = [u[:, j] for j in range(min(d, rank))]
    basis_idx = 0
    while len(cols) < d:
        if basis_idx >= rows:
            raise ValueError("cannot complete orthonormal basis")
        v = np.zeros(rows)
        v[basis_idx] = 1.0
        basis_idx += 1
        for q in cols:
            v = v - q * (q @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            cols.append(v / norm)
    return _fix_signs(np.column_stack(cols) if cols else np.zeros((rows, 0)))


@dataclass(frozen=True)
class TensorSubspace:
    """A list of per-mode column-orthonormal factor matrices.

    Factor ``k`` has shape ``(n_k, d_k)``.  Tensors passed to :meth:`project`
    and :meth:`reconstruct` may carry extra trailing modes (e.g. a stacked
    sample mode), which pass through untouched.
    """

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        factors = tuple(np.asarray(f, dtype=np.float64) for f in self.factors)
        object.__setattr__(self, "factors", factors)
        for k, f in enumerate(factors):
            if f.ndim != 2:
                raise ValueError(f"factor {k} must be 2-D")
            if f.shape[1] > f.shape[0]:
                raise ValueError(f"factor {k} has more columns than rows: {f.shape}")
            gram = f.T @ f
            err = np.linalg.norm(gram - np.eye(f.shape[1]))
            if err > _ORTHO_TOL:
                raise ValueError(
                    f"factor {k} is not column-orthonormal (deviation {err:.2e})"
                )

    @property
    def n_modes(self) -> int:
        return len(self.factors)

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[1] for f in self.factors)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Core representation of `x`: apply each factor transposed along its mode."""
        x = np.asarray(x)
        self._check_leading(x, self.mode_sizes, "project")
        return multi_mode_product(x, self.factors, transpose=True)

    def reconstruct(self, g: np.ndarray) -> np.ndarray:
        """Map a core tensor `g` back to the ambient space."""
        g = np.asarray(g)
        self._check_leading(g, self.dims, "reconstruct")
        return multi_mode_product(g, self.factors)

    def _check_leading(self, x, sizes, op):
        if x.ndim < self.n_modes:
            raise ValueError(
                f"{op}: input has {x.ndim} modes, subspace covers {self.n_modes}"
            )
        if tuple(x.shape[: self.n_modes]) != sizes:
            raise ValueError(
                f"{op}: leading mode sizes {x.shape[: self.n_modes]} do not match "
                f"subspace sizes {sizes}"
            )


@dataclass(frozen=True)
class TuckerModel:
    """A fitted subspace plus the core representation of the training tensor."""

    subspace: TensorSubspace
    core: np.ndarray
    sweep_errors: tuple[float, ...] = field(default=())

    def reconstruct(self) -> np.ndarray:
        return self.subspace.reconstruct(self.core)


def _validate_ranks(x, ranks, skip_modes):
    skip = sorted(int(k) for k in skip_modes)
    n_fac = x.ndim - len(skip)
    if skip and (skip != list(range(n_fac, x.ndim))):
        raise ValueError(
            f"skip_modes {skip} must be the trailing modes of a {x.ndim}-mode tensor"
        )
    ranks = tuple(int(d) for d in ranks)
    if len(ranks) != n_fac:
        raise ValueError(
            f"expected {n_fac} ranks for {x.ndim} modes with {len(skip)} skipped, "
            f"got {len(ranks)}"
        )
    for k, d in enumerate(ranks):
        if d < 1:
            raise ValueError(f"rank for mode {k} must be >= 1")
        if d > x.shape[k]:
            raise ValueError(
                f"rank {d} exceeds mode-{k} size {x.shape[k]}"
            )
    return ranks, n_fac


def hosvd(
    x: np.ndarray, ranks: Sequence[int], skip_modes: Sequence[int] = ()
) -> TuckerModel:
    """Truncated higher-order SVD.

    Parameters
    ----------
    x : ndarray
        Input tensor.
    ranks : sequence of int
        Target dimension per factored mode, ``ranks[k] <= x.shape[k]``.
    skip_modes : sequence of int
        Trailing modes left unfactored (an implicit identity factor); used to
        keep a stacked sample mode out of the decomposition.

    Returns
    -------
    TuckerModel
        Factor ``k`` holds the leading ``ranks[k]`` left singular vectors of
        the mode-``k`` unfolding; the core is the projection of `x`.
    """
    x = np.asarray(x, dtype=np.float64)
    ranks, n_fac = _validate_ranks(x, ranks, skip_modes)
    factors = tuple(
        _leading_left_singular(unfold(x, k), ranks[k]) for k in range(n_fac)
    )
    subspace = TensorSubspace(factors)
    return TuckerModel(subspace, subspace.project(x))


def hooi(
    x: np.ndarray,
    ranks: Sequence[int],
    skip_modes: Sequence[int] = (),
    max_sweeps: int = 5,
    tol: float = 1e-8,
) -> TuckerModel:
    """Higher-order orthogonal iteration, initialized from :func:`hosvd`.

    Each sweep updates every factor in ascending mode order from the SVD of
    the input projected onto the other modes, which makes the fit error
    non-increasing across sweeps.  Iteration stops when the relative fit
    change drops below `tol` or after `max_sweeps` sweeps; ``max_sweeps=0``
    returns the plain HOSVD.
    """
    x = np.asarray(x, dtype=np.float64)
    ranks, n_fac = _validate_ranks(x, ranks, skip_modes)
    model = hosvd(x, ranks, skip_modes)
    if max_sweeps == 0:
        return model

    x_sq = frobenius_norm(x) ** 2

    def fit_error(core):
        # Orthonormal factors make reconstruction an orthogonal projection,
        # so the residual satisfies ||x - rec||^2 = ||x||^2 - ||core||^2.
        return float(np.sqrt(max(x_sq - frobenius_norm(core) ** 2, 0.0)))

    factors = list(model.subspace.factors)
    errors = [fit_error(model.core)]
    for _ in range(max_sweeps):
        for k in range(n_fac):
            w = x
            for j in range(n_fac):
                if j != k:
                    w = mode_product(w, factors[j].T, j)
            factors[k] = _leading_left_singular(unfold(w, k), ranks[k])
        subspace = TensorSubspace(tuple(factors))
        core = subspace.project(x)
        errors.append(fit_error(core))
        prev, cur = errors[-2], errors[-1]
        if abs(prev - cur) / max(prev, np.finfo(np.float64).tiny) < tol:
            break
    return TuckerModel(subspace, core, sweep_errors=tuple(errors))
