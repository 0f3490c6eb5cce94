"""Estimators that learn a shared tensor subspace across two domains.

:class:`NTSL` fits a single Tucker subspace jointly to source and target
samples and uses the per-sample core tensors as adapted features.
:class:`TAISL` additionally learns one square row-orthonormal alignment matrix
per mode that maps source samples toward the target domain before projection;
the subspace and the alignment are fitted by alternating minimization.

Both estimators are unsupervised: labels play no role during fitting.  Inputs
are dense arrays with samples stacked on the last mode.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .stiefel import QuadraticStiefelProblem, StiefelSolverOptions, minimize_on_stiefel
from .tensor_ops import check_dense, frobenius_norm, multi_mode_product, unfold
from .tucker import TensorSubspace, hooi

__all__ = [
    "ConvergenceWarning",
    "NTSL",
    "TAISL",
    "precompute_mstep",
    "total_loss",
    "default_ranks",
]


class ConvergenceWarning(UserWarning):
    """Raised when the outer loss fails to decrease within its slack."""


def default_ranks(mode_sizes: Sequence[int]) -> tuple[int, ...]:
    """Default subspace dimension per mode: ceil(n_k / 2)."""
    return tuple((int(n) + 1) // 2 for n in mode_sizes)


def _is_identity(m: np.ndarray) -> bool:
    return m.shape[0] == m.shape[1] and np.array_equal(m, np.eye(m.shape[0]))


def _apply_alignment(x, mats, transpose=False):
    """Mode products by the alignment matrices; exact identities are skipped
    so an all-identity alignment returns the input bitwise."""
    ms = [None if _is_identity(m) else m for m in mats]
    return multi_mode_product(x, ms, modes=range(len(ms)), transpose=transpose)


def check_row_orthonormal(m: np.ndarray, tol: float = 1e-8, name: str = "matrix") -> np.ndarray:
    """Validate M M.T = I within `tol` and return the float64 array."""
    m = np.asarray(m, dtype=np.float64)
    err = np.linalg.norm(m @ m.T - np.eye(m.shape[0]))
    if err > tol:
        raise ValueError(f"{name} is not row-orthonormal (deviation {err:.2e})")
    return m


def precompute_mstep(
    x_source: np.ndarray,
    alignment: Sequence[np.ndarray],
    y: np.ndarray,
    mode: int,
    lam: float = 0.0,
) -> QuadraticStiefelProblem:
    """Gram accumulations for the mode-`mode` alignment subproblem.

    For every sample n, with Q_n the mode-`mode` unfolding of the sample after
    applying the other modes' alignment matrices, Y_n the unfolding of the
    auxiliary reconstruction `y`, and X_n the raw unfolding, the returned
    problem carries A = sum Q_n Q_n.T, B = sum Q_n Y_n.T, C = sum X_n X_n.T
    and const = sum tr(Y_n Y_n.T).  The sums are evaluated on the stacked
    batch unfolding, whose column blocks are exactly the per-sample
    unfoldings in sample order; no Kronecker matrix is ever materialized.
    """
    xs = np.asarray(x_source, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_structural = xs.ndim - 1
    if len(alignment) != n_structural:
        raise ValueError(
            f"expected {n_structural} alignment matrices, got {len(alignment)}"
        )
    if not 0 <= mode < n_structural:
        raise ValueError(f"mode {mode} out of range for {n_structural} structural modes")
    if y.shape != xs.shape:
        raise ValueError(f"auxiliary tensor shape {y.shape} != data shape {xs.shape}")

    others = [
        None if (j == mode or _is_identity(alignment[j])) else alignment[j]
        for j in range(n_structural)
    ]
    zk = multi_mode_product(xs, others, modes=range(n_structural))
    q = unfold(zk, mode)
    ymat = unfold(y, mode)
    xmat = unfold(xs, mode)
    a = q @ q.T
    b = q @ ymat.T
    c = xmat @ xmat.T
    const = float(np.sum(ymat * ymat))
    return QuadraticStiefelProblem(
        (a + a.T) / 2.0, b, (c + c.T) / 2.0, const, lam
    )


def total_loss(
    x_source: np.ndarray,
    x_target: np.ndarray,
    subspace: TensorSubspace,
    alignment: Sequence[np.ndarray],
    core_source: np.ndarray,
    core_target: np.ndarray,
    lam: float,
) -> float:
    """Full objective: both reconstruction residuals plus the weighted
    variance-preservation term, evaluated by direct tensor arithmetic."""
    xs = np.asarray(x_source, dtype=np.float64)
    xt = np.asarray(x_target, dtype=np.float64)
    z = _apply_alignment(xs, alignment)
    term_s = frobenius_norm(z - subspace.reconstruct(core_source)) ** 2
    term_t = frobenius_norm(xt - subspace.reconstruct(core_target)) ** 2
    back = _apply_alignment(z, alignment, transpose=True)
    reg = frobenius_norm(back - xs) ** 2
    return float(term_s + term_t + lam * reg)


def _check_domain_pair(x_source, x_target):
    xs = check_dense(x_source, "X_source")
    xt = check_dense(x_target, "X_target")
    if xs.ndim != xt.ndim:
        raise ValueError(
            f"source has {xs.ndim} modes but target has {xt.ndim}"
        )
    if xs.ndim < 3:
        raise ValueError(
            "inputs need at least two structural modes plus a trailing sample mode"
        )
    if xs.shape[:-1] != xt.shape[:-1]:
        raise ValueError(
            f"structural mode sizes differ between domains: "
            f"{xs.shape[:-1]} vs {xt.shape[:-1]}"
        )
    return xs, xt


def _resolve_ranks(mode_sizes, ranks):
    if ranks is None:
        return default_ranks(mode_sizes)
    ranks = tuple(int(d) for d in ranks)
    if len(ranks) != len(mode_sizes):
        raise ValueError(
            f"expected {len(mode_sizes)} ranks, got {len(ranks)}"
        )
    for d, n in zip(ranks, mode_sizes):
        if not 1 <= d <= n:
            raise ValueError(f"rank {d} invalid for mode of size {n}")
    return ranks


def _alternating_fit(
    xs,
    xt,
    ranks,
    lam,
    max_iter,
    tol,
    tucker_sweeps,
    tucker_tol,
    solver_options,
    align_sweeps,
):
    """One shared code path for both estimators.

    Each outer iteration runs a joint Tucker solve on the aligned source
    stacked with the target (sample mode unfactored), then sweeps the modes in
    ascending order solving each alignment subproblem with the freshest other
    matrices, warm-started from the current value.  ``align_sweeps=0`` keeps
    the alignment at identity, which is exactly the naive shared-subspace fit.
    """
    n_structural = xs.ndim - 1
    mats = [np.eye(n) for n in xs.shape[:-1]]
    opts = solver_options or StiefelSolverOptions()
    trace: list[tuple[int, float]] = []
    subspace = core_source = core_target = None

    for it in range(1, max_iter + 1):
        z = _apply_alignment(xs, mats)
        joint = np.concatenate([z, xt], axis=n_structural)
        model = hooi(
            joint,
            ranks,
            skip_modes=(n_structural,),
            max_sweeps=tucker_sweeps,
            tol=tucker_tol,
        )
        subspace = model.subspace

        if align_sweeps > 0:
            # Auxiliary reconstruction of the aligned source, fixed for the
            # whole alignment pass of this outer iteration.
            y = subspace.reconstruct(subspace.project(z))
            for _ in range(align_sweeps):
                for k in range(n_structural):
                    prob = precompute_mstep(xs, mats, y, k, lam)
                    result = minimize_on_stiefel(prob, mats[k].T, opts)
                    mats[k] = result.p.T
            z = _apply_alignment(xs, mats)

        core_source = subspace.project(z)
        core_target = subspace.project(xt)
        loss = total_loss(xs, xt, subspace, mats, core_source, core_target, lam)
        trace.append((it, loss))

        if it > 1:
            prev = trace[-2][1]
            slack = 1e-6 * (1.0 + abs(trace[0][1]))
            if loss > prev + slack:
                warnings.warn(
                    f"total loss increased from {prev:.6e} to {loss:.6e} at outer "
                    f"iteration {it}",
                    ConvergenceWarning,
                    stacklevel=3,
                )
            rel = abs(prev - loss) / max(abs(prev), np.finfo(np.float64).tiny)
            if rel < tol:
                break

    return subspace, mats, core_source, core_target, trace


class _TensorSubspaceBase(BaseEstimator):
    """Shared fitted-state handling and transforms."""

    def _set_fitted(self, subspace, mats, core_source, core_target, trace):
        self.subspace_ = subspace
        self.alignment_ = [m.copy() for m in mats]
        self.core_source_ = core_source
        self.core_target_ = core_target
        self.loss_trace_ = list(trace)
        self.n_iter_ = len(trace)
        return self

    def _require_fitted(self):
        if not hasattr(self, "subspace_"):
            raise NotFittedError(
                f"{type(self).__name__} instance is not fitted yet; call fit first"
            )

    def transform_source(self, X) -> np.ndarray:
        """Align source samples mode-wise, then project onto the subspace.

        `X` may be a single sample (structural modes only) or a batch with a
        trailing sample mode; the result is the core representation used as
        classifier features.
        """
        self._require_fitted()
        x = check_dense(X, "X")
        z = _apply_alignment(x, self.alignment_)
        return self.subspace_.project(z)

    def transform_target(self, X) -> np.ndarray:
        """Project target samples onto the shared subspace."""
        self._require_fitted()
        return self.subspace_.project(check_dense(X, "X"))

    def transform(self, X, domain: str = "source") -> np.ndarray:
        if domain == "source":
            return self.transform_source(X)
        if domain == "target":
            return self.transform_target(X)
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")


class NTSL(_TensorSubspaceBase):
    """Naive tensor subspace learning: a shared Tucker subspace, no alignment.

    A single joint Tucker decomposition is fitted to the source and target
    batches stacked along the sample mode, with the sample mode left
    unfactored.  Per-sample core tensors serve as domain-adapted features.

    Parameters
    ----------
    ranks : sequence of int or None
        Subspace dimension per structural mode.  ``None`` uses
        ``ceil(n_k / 2)`` per mode.
    tucker_sweeps : int
        Refinement sweeps after the HOSVD initialization.
    tucker_tol : float
        Relative fit-change tolerance for the refinement.

    Attributes
    ----------
    subspace_ : TensorSubspace
        Column-orthonormal factor per structural mode.
    alignment_ : list of ndarray
        Identity matrices (kept for interface parity with :class:`TAISL`).
    core_source_, core_target_ : ndarray
        Core batches of the training data.
    loss_trace_ : list of (int, float)
        Single entry holding the joint reconstruction loss.
    """

    def __init__(self, ranks=None, tucker_sweeps=5, tucker_tol=1e-8):
        self.ranks = ranks
        self.tucker_sweeps = tucker_sweeps
        self.tucker_tol = tucker_tol

    def fit(self, X_source, X_target):
        xs, xt = _check_domain_pair(X_source, X_target)
        ranks = _resolve_ranks(xs.shape[:-1], self.ranks)
        fitted = _alternating_fit(
            xs,
            xt,
            ranks,
            lam=0.0,
            max_iter=1,
            tol=0.0,
            tucker_sweeps=self.tucker_sweeps,
            tucker_tol=self.tucker_tol,
            solver_options=None,
            align_sweeps=0,
        )
        return self._set_fitted(*fitted)


class TAISL(_TensorSubspaceBase):
    """Tensor-aligned invariant subspace learning.

    Jointly learns a shared Tucker subspace and one square row-orthonormal
    alignment matrix per mode that maps source samples toward the target
    domain, by alternating between a joint Tucker solve and per-mode
    orthogonality-constrained quadratic programs.

    Parameters
    ----------
    ranks : sequence of int or None
        Subspace dimension per structural mode; ``None`` uses ``ceil(n_k/2)``.
    lam : float
        Weight of the variance-preservation regularizer.
    max_iter : int
        Maximum outer alternating iterations.
    tol : float
        Relative loss-change threshold for early stopping.
    tucker_sweeps, tucker_tol :
        Options of the per-iteration joint Tucker solve.
    solver_options : StiefelSolverOptions, optional
        Options of the per-mode alignment solver.
    align_sweeps : int
        Alignment passes over the modes per outer iteration; 0 disables
        alignment entirely (reproducing :class:`NTSL`).

    Attributes
    ----------
    subspace_ : TensorSubspace
    alignment_ : list of ndarray
        Square row-orthonormal matrix per structural mode.
    core_source_ : ndarray
        Cores of the aligned source batch.
    core_target_ : ndarray
    loss_trace_ : list of (int, float)
        Total loss after each outer iteration; non-increasing within slack
        (violations raise :class:`ConvergenceWarning`).
    """

    def __init__(
        self,
        ranks=None,
        lam=1e-5,
        max_iter=10,
        tol=1e-4,
        tucker_sweeps=5,
        tucker_tol=1e-8,
        solver_options=None,
        align_sweeps=1,
    ):
        self.ranks = ranks
        self.lam = lam
        self.max_iter = max_iter
        self.tol = tol
        self.tucker_sweeps = tucker_sweeps
        self.tucker_tol = tucker_tol
        self.solver_options = solver_options
        self.align_sweeps = align_sweeps

    def fit(self, X_source, X_target):
        xs, xt = _check_domain_pair(X_source, X_target)
        ranks = _resolve_ranks(xs.shape[:-1], self.ranks)
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.align_sweeps < 0:
            raise ValueError("align_sweeps must be >= 0")
        fitted = _alternating_fit(
            xs,
            xt,
            ranks,
            lam=float(self.lam),
            max_iter=int(self.max_iter),
            tol=float(self.tol),
            tucker_sweeps=self.tucker_sweeps,
            tucker_tol=self.tucker_tol,
            solver_options=self.solver_options,
            align_sweeps=int(self.align_sweeps),
        )
        return self._set_fitted(*fitted)
