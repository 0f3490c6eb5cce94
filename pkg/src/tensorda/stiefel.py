"""Minimization of orthogonality-constrained quadratics via a Cayley
curvilinear search.

The objective has the fixed form

    F(P) = tr(P.T A P) - 2 tr(P.T B) + const - lam * tr(P.T C P)

over matrices with orthonormal columns (P.T P = I).  A and C are Gram
accumulations precomputed once per problem, so loss and gradient evaluations
cost two small matrix products regardless of how many samples built them.

The update moves along the curve P(tau) = inv(I + tau/2 W) (I - tau/2 W) P
with the skew matrix W = G P.T - P G.T (G the ambient gradient), which stays
on the manifold for every step size.  Step sizes come from a Barzilai-Borwein
estimate guarded by monotone Armijo backtracking; a nonmonotone window is
available as an option for problems where strict descent stalls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "QuadraticStiefelProblem",
    "StiefelSolverOptions",
    "StiefelResult",
    "minimize_on_stiefel",
    "reorthonormalize",
]

_FEAS_TOL = 1e-8
_REORTH_TRIGGER = 1e-10


def _feasibility_error(p: np.ndarray) -> float:
    return float(np.linalg.norm(p.T @ p - np.eye(p.shape[1])))


def reorthonormalize(p: np.ndarray) -> np.ndarray:
    """Project a full-column-rank matrix onto the set of orthonormal columns.

    Uses QR with the R-diagonal made non-negative, so an already-feasible
    input is returned unchanged up to roundoff and a positive column scaling
    is removed exactly.  Raises on rank deficiency.
    """
    p = np.asarray(p, dtype=np.float64)
    q, r = np.linalg.qr(p)
    diag = np.diag(r)
    scale = np.abs(diag).max(initial=0.0)
    if scale == 0.0 or np.any(np.abs(diag) < max(p.shape) * np.finfo(np.float64).eps * scale):
        raise ValueError("matrix is rank deficient; cannot orthonormalize")
    signs = np.sign(diag)
    return q * signs


@dataclass(frozen=True)
class QuadraticStiefelProblem:
    """Precomputed coefficients of an orthogonality-constrained quadratic.

    Attributes
    ----------
    a : ndarray, shape (n, n)
        Symmetric PSD quadratic term (sum of Q_n Q_n.T over samples).
    b : ndarray, shape (n, d)
        Linear term (sum of Q_n Y_n.T).
    c : ndarray, shape (n, n)
        Symmetric PSD term weighted by ``-lam`` (sum of X_n X_n.T).
    const_term : float
        Additive constant (sum of tr(Y_n Y_n.T)).
    lam : float
        Non-negative weight on the variance-preservation term.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    const_term: float
    lam: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        n = a.shape[0]
        if a.shape != (n, n) or c.shape != (n, n):
            raise ValueError("a and c must be square matrices of equal size")
        if b.ndim != 2 or b.shape[0] != n:
            raise ValueError(f"b must have {n} rows, got shape {b.shape}")
        for name, m in (("a", a), ("c", c)):
            asym = np.linalg.norm(m - m.T)
            if asym > 1e-8 * (1.0 + np.linalg.norm(m)):
                raise ValueError(f"{name} is not symmetric (deviation {asym:.2e})")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        object.__setattr__(self, "a", (a + a.T) / 2.0)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", (c + c.T) / 2.0)
        object.__setattr__(self, "const_term", float(self.const_term))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.b.shape[1]

    def loss_and_grad(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        """Objective value and ambient gradient at a feasible point.

        Raises if `p` is not column-orthonormal within 1e-8; feasibility is
        reported, never silently repaired.
        """
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (self.n, self.d):
            raise ValueError(f"expected shape {(self.n, self.d)}, got {p.shape}")
        feas = _feasibility_error(p)
        if feas > _FEAS_TOL:
            raise ValueError(
                f"point is not column-orthonormal (||P'P - I|| = {feas:.2e})"
            )
        return self._loss_and_grad_unchecked(p)

    def _loss_and_grad_unchecked(self, p):
        ap = self.a @ p
        cp = self.c @ p
        loss = (
            float(np.sum(p * ap))
            - 2.0 * float(np.sum(p * self.b))
            + self.const_term
            - self.lam * float(np.sum(p * cp))
        )
        grad = 2.0 * (ap - self.lam * cp) - 2.0 * self.b
        return loss, grad


@dataclass
class StiefelSolverOptions:
    """Knobs for :func:`minimize_on_stiefel`.

    ``nonmonotone_window = 0`` keeps the default monotone Armijo rule (the
    outer alternating loop relies on non-increasing losses); a positive window
    accepts steps against the maximum of that many recent losses instead.
    """

    max_iters: int = 200
    grad_tol: float = 1e-6
    initial_step: float = 1e-3
    bb_step: bool = True
    armijo_c: float = 1e-4
    step_shrink: float = 0.5
    nonmonotone_window: int = 0
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol <= 0 or self.initial_step <= 0:
            raise ValueError("grad_tol and initial_step must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.nonmonotone_window < 0 or self.max_backtracks < 1:
            raise ValueError("nonmonotone_window must be >= 0, max_backtracks >= 1")


@dataclass(frozen=True)
class StiefelResult:
    """Solver output: final point, per-iteration losses, and diagnostics."""

    p: np.ndarray
    loss_trace: tuple[float, ...]
    grad_norm: float
    iterations: int
    converged: bool
    max_feasibility_error: float


def _riemannian_grad(p, grad):
    ptg = p.T @ grad
    return grad - p @ ((ptg + ptg.T) / 2.0)


def minimize_on_stiefel(
    prob: QuadraticStiefelProblem,
    p0: np.ndarray,
    options: StiefelSolverOptions | None = None,
) -> StiefelResult:
    """Minimize `prob` over column-orthonormal matrices starting from `p0`.

    Terminates when the Riemannian gradient norm (the ambient gradient
    projected onto the tangent space) drops below ``options.grad_tol`` or
    after ``options.max_iters`` accepted steps.  Non-convergence is reported
    through ``converged=False`` with the final gradient norm, not raised.
    """
    opts = options or StiefelSolverOptions()
    p = np.asarray(p0, dtype=np.float64).copy()
    feas0 = _feasibility_error(p)
    if feas0 > _FEAS_TOL:
        raise ValueError(
            f"initial point is not column-orthonormal (||P'P - I|| = {feas0:.2e})"
        )

    loss, grad = prob._loss_and_grad_unchecked(p)
    rgrad = _riemannian_grad(p, grad)
    trace = [loss]
    max_feas = feas0
    tau = opts.initial_step
    prev_p = prev_rgrad = None
    grad_norm = np.linalg.norm(rgrad)
    converged = grad_norm < opts.grad_tol
    iterations = 0
    eye = np.eye(prob.n)

    for it in range(1, opts.max_iters + 1):
        if converged:
            break
        w = grad @ p.T - p @ grad.T
        w_sq = float(np.sum(w * w))
        if opts.bb_step and prev_p is not None:
            # Barzilai-Borwein pair from the Riemannian gradients, which keep
            # varying even when the ambient gradient is constant.
            s = p - prev_p
            y = rgrad - prev_rgrad
            sy = abs(float(np.sum(s * y)))
            if it % 2 == 0:
                num, den = float(np.sum(s * s)), sy
            else:
                num, den = sy, float(np.sum(y * y))
            if den > 0 and num > 0:
                tau = num / den
        tau = float(np.clip(tau, 1e-16, 1e12))

        if opts.nonmonotone_window > 0:
            ref = max(trace[-opts.nonmonotone_window:])
        else:
            ref = trace[-1]

        accepted = False
        step = tau
        backtracks = 0
        for backtracks in range(opts.max_backtracks):
            lhs = eye + (step / 2.0) * w
            rhs = p - (step / 2.0) * (w @ p)
            try:
                p_new = scipy.linalg.solve(lhs, rhs)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                step *= opts.step_shrink
                continue
            loss_new, grad_new = prob._loss_and_grad_unchecked(p_new)
            # F'(0) along the Cayley curve equals -||W||_F^2 / 2.
            if loss_new <= ref - opts.armijo_c * step * 0.5 * w_sq:
                accepted = True
                break
            step *= opts.step_shrink
        if not accepted:
            # No acceptable decrease at any step size: numerically stationary.
            break
        if backtracks == 0:
            # Accepted immediately: let the next trial step grow, so objectives
            # whose BB estimate degenerates (e.g. constant gradients) still
            # reach the right step scale.
            tau = step / opts.step_shrink
        else:
            tau = step

        feas = _feasibility_error(p_new)
        max_feas = max(max_feas, feas)
        if feas > _REORTH_TRIGGER:
            p_new = reorthonormalize(p_new)
            loss_new, grad_new = prob._loss_and_grad_unchecked(p_new)

        prev_p, prev_rgrad = p, rgrad
        p, grad, loss = p_new, grad_new, loss_new
        rgrad = _riemannian_grad(p, grad)
        trace.append(loss)
        iterations = it
        grad_norm = np.linalg.norm(rgrad)
        converged = grad_norm < opts.grad_tol

    return StiefelResult(
        p=p,
        loss_trace=tuple(trace),
        grad_norm=float(grad_norm),
        iterations=iterations,
        converged=bool(converged),
        max_feasibility_error=float(max_feas),
    )
