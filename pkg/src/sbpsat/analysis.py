"""Linear solves, spectral diagnostics, BDF2 time stepping and rate fits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from sbpsat.discretization import Discretization, GlobalSystem
from sbpsat.errors import DataError, DefinitenessError, SolverError

#: matrices up to this size use dense eigen-decompositions
DENSE_LIMIT = 2000


# {{{ steady solves

def _factorize(A: sp.spmatrix):
    """LU factorization with diagonal pivoting on a symmetric ordering, so
    the pivots are those of an LDL^T factorization and carry the inertia."""
    return spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A",
                     diag_pivot_thresh=0.0, options={"SymmetricMode": True})


def is_positive_definite(A) -> bool:
    if sp.issparse(A) and A.shape[0] > DENSE_LIMIT:
        try:
            lu = _factorize(A)
        except RuntimeError:
            return False
        return bool(np.all(lu.U.diagonal() > 0.0))
    dense = A.toarray() if sp.issparse(A) else np.asarray(A)
    try:
        la.cholesky(dense, lower=True)
    except la.LinAlgError:
        return False
    return True


def extended_residual(A: sp.spmatrix, u: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``b - A u`` accumulated in extended precision and rounded to double."""
    A = sp.csr_matrix(A)
    prod = A.data.astype(np.longdouble) * np.asarray(u, dtype=np.longdouble)[A.indices]
    rows = np.zeros(A.shape[0], dtype=np.longdouble)
    nonempty = np.diff(A.indptr) > 0
    rows[nonempty] = np.add.reduceat(prod, A.indptr[:-1][nonempty])
    return (np.asarray(b, dtype=np.longdouble) - rows).astype(float)


def solve_steady(system: GlobalSystem, *, rtol: float = 1.0e-10,
                 backward_tol: float = 1.0e-13, refine: int = 2) -> np.ndarray:
    """Direct sparse solve of ``A u = b`` for symmetric positive definite
    ``A``; raises :class:`DefinitenessError` when a pivot is not positive.

    The factorization is followed by *refine* steps of iterative refinement
    with residuals accumulated in extended precision, which removes most of
    the rounding error that the ill-conditioning of ``A`` would otherwise
    leave in smooth quantities such as integral functionals. The solution
    is accepted when the relative residual is below *rtol* or, for systems
    whose right-hand side is small against ``||A|| ||u||``, when the
    normwise backward error is below *backward_tol*.
    """
    if not np.any(system.b):
        return np.zeros_like(system.b)
    try:
        lu = _factorize(system.A)
    except RuntimeError as exc:
        raise DefinitenessError(f"factorization failed ({exc}); the system is singular. "
                                "Use the eigenvalue scan for relaxed penalties.") from exc
    if np.any(lu.U.diagonal() <= 0.0):
        raise DefinitenessError("A is not positive definite; use the eigenvalue scan "
                                "for relaxed penalties")
    u = lu.solve(system.b)
    for _ in range(refine):
        u = u + lu.solve(extended_residual(system.A, u, system.b))
    if relative_residual(system, u) > rtol and backward_error(system, u) > backward_tol:
        raise SolverError(f"relative residual {relative_residual(system, u):.2e} exceeds "
                          f"{rtol:.0e} and backward error {backward_error(system, u):.2e} "
                          f"exceeds {backward_tol:.0e}")
    return u


def backward_error(system: GlobalSystem, u: np.ndarray) -> float:
    """``||A u - b|| / (||A|| ||u|| + ||b||)`` in the infinity norm."""
    r = np.abs(system.A @ u - system.b).max()
    anorm = abs(system.A).sum(axis=1).max()
    return float(r / (anorm * np.abs(u).max() + np.abs(system.b).max()))


def relative_residual(system: GlobalSystem, u: np.ndarray) -> float:
    nb = np.linalg.norm(system.b)
    r = np.linalg.norm(system.A @ u - system.b)
    return float(r / nb) if nb > 0 else float(r)

# }}}


# {{{ spectra

@dataclass(frozen=True)
class SpectrumReport:
    condition_number: float
    #: eigenvalue of ``A`` nearest zero, signed
    min_magnitude: float
    #: largest eigenvalue of the bilinear-form operator ``-A``
    form_max: float
    singular: bool = False


def _as_matrix(system):
    return system.A if isinstance(system, GlobalSystem) else system


def _extreme_eigs(A, which: str, k: int = 1, sigma=None) -> np.ndarray:
    n = A.shape[0]
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        return spla.eigsh(A, k=k, which=which, sigma=sigma, v0=v0, tol=1.0e-10,
                          maxiter=20 * n, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"eigenvalue iteration did not converge "
                          f"({len(exc.eigenvalues)} of {k} values)") from exc


def symmetric_eigenvalues(A, *, dense: bool | None = None) -> tuple[float, float, float]:
    """``(lambda_min, lambda_max, nearest-zero)`` of a symmetric matrix."""
    n = A.shape[0]
    if dense is None:
        dense = n <= DENSE_LIMIT
    if dense:
        ev = la.eigvalsh(A.toarray() if sp.issparse(A) else np.asarray(A))
        return float(ev[0]), float(ev[-1]), float(ev[np.argmin(np.abs(ev))])
    A = sp.csc_matrix(A)
    lmax = float(_extreme_eigs(A, "LA")[0])
    try:
        near = float(_extreme_eigs(A, "LM", sigma=0.0)[0])
    except RuntimeError:
        near = 0.0
    if near > 0.0 and is_positive_definite(A):
        # for definite A the eigenvalue nearest zero is the smallest one
        lmin = near
    else:
        lmin = float(_extreme_eigs(A, "SA")[0])
    return lmin, lmax, near


def spectrum(system, *, dense: bool | None = None) -> SpectrumReport:
    A = _as_matrix(system)
    lmin, lmax, near = symmetric_eigenvalues(A, dense=dense)
    scale = max(abs(lmin), abs(lmax))
    singular = abs(near) <= 1.0e-14 * scale
    big = max(abs(lmin), abs(lmax))
    cond = float("inf") if singular else big / abs(near)
    return SpectrumReport(condition_number=cond, min_magnitude=0.0 if singular else near,
                          form_max=-lmin, singular=singular)


def condition_number(system, *, dense: bool | None = None) -> float:
    """2-norm condition number of a symmetric matrix."""
    return spectrum(system, dense=dense).condition_number


def min_magnitude_eigenvalue(system, *, dense: bool | None = None) -> float:
    """Eigenvalue nearest zero of the bilinear-form operator ``-A``."""
    rep = spectrum(system, dense=dense)
    return 0.0 if rep.singular else -rep.min_magnitude


def form_max_eigenvalue(system) -> float:
    """Largest eigenvalue of ``-A``; negative exactly when ``A`` is positive
    definite, so its zero crossing marks the loss of stability."""
    A = _as_matrix(system)
    return -symmetric_eigenvalues(A)[0]


@dataclass
class RelaxationScan:
    alphas: np.ndarray
    form_max: np.ndarray
    #: smallest alpha at which ``A`` is positive definite, from bisection
    crossing: float | None
    bracket: tuple[float, float] | None


def relaxation_scan(build, alphas=None, *, bisect_tol: float = 1.0e-4) -> RelaxationScan:
    """Scan ``alpha -> largest eigenvalue of -A(alpha)`` and locate the
    stability threshold.

    *build* maps a relaxation factor to a symmetric matrix. ``A(alpha)`` is
    affine in alpha with a positive semidefinite slope, so definiteness is
    monotone and the threshold is found by bisection on Cholesky success.
    """
    if alphas is None:
        alphas = np.round(np.arange(0.05, 1.0 + 1.0e-9, 0.05), 10)
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0.0) or np.any(alphas > 1.0):
        raise DataError("relaxation factors must lie in (0, 1]")
    values = np.array([form_max_eigenvalue(build(a)) for a in alphas])
    stable = values < 0.0
    if not stable.any() or stable.all():
        return RelaxationScan(alphas, values, None, None)
    hi = float(alphas[np.argmax(stable)])
    lo_candidates = alphas[(alphas < hi) & ~stable]
    lo = float(lo_candidates.max()) if len(lo_candidates) else 0.0
    bracket = (lo, hi)
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if is_positive_definite(build(mid)):
            hi = mid
        else:
            lo = mid
    return RelaxationScan(alphas, values, 0.5 * (lo + hi), bracket)

# }}}


# {{{ time stepping

@dataclass
class EnergyHistory:
    t: np.ndarray
    energy: np.ndarray
    #: first step index whose energy exceeded the divergence threshold
    diverged_at: int | None = None
    final: np.ndarray | None = field(default=None, repr=False)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def is_nonincreasing(self, rtol: float = 1.0e-12) -> bool:
        e = self.energy
        return bool(np.all(e[1:] <= e[:-1] * (1.0 + rtol)))

    def max_increase(self) -> float:
        """Largest relative step-to-step growth of the energy."""
        e = self.energy
        if len(e) < 2:
            return 0.0
        return float(np.max((e[1:] - e[:-1]) / np.maximum(e[:-1], 1.0e-300)))


def energy(h: np.ndarray, u: np.ndarray) -> float:
    return float(np.dot(h * u, u))


def bdf2_advance(system: GlobalSystem, u0: np.ndarray, dt: float, steps: int, *,
                 divergence_factor: float = 1.0e3) -> EnergyHistory:
    """Integrate ``H du/dt = b - A u`` with BDF2 after one backward-Euler
    step, recording the energy ``u^T H u`` after each step.

    Integration stops early once the energy exceeds ``divergence_factor``
    times its initial value.
    """
    if dt <= 0.0:
        raise DataError(f"time step must be positive, got {dt}")
    H = sp.diags(system.h)
    A, b = system.A, system.b
    u_prev = np.asarray(u0, dtype=float).copy()
    ts, es = [0.0], [energy(system.h, u_prev)]
    e0 = es[0]
    if steps == 0:
        return EnergyHistory(np.array(ts), np.array(es), None, u_prev)

    be = spla.splu(sp.csc_matrix(H / dt + A))
    u = be.solve(system.h * u_prev / dt + b)
    _check_step(u, 1)
    ts.append(dt)
    es.append(energy(system.h, u))
    diverged = 1 if e0 > 0 and es[-1] > divergence_factor * e0 else None

    lu = spla.splu(sp.csc_matrix(1.5 * H / dt + A)) if steps > 1 else None
    n = 1
    while diverged is None and n < steps:
        rhs = system.h * (4.0 * u - u_prev) / (2.0 * dt) + b
        u_prev, u = u, lu.solve(rhs)
        n += 1
        _check_step(u, n)
        ts.append(n * dt)
        es.append(energy(system.h, u))
        if e0 > 0 and es[-1] > divergence_factor * e0:
            diverged = n
    return EnergyHistory(np.array(ts), np.array(es), diverged, u)


def _check_step(u, n):
    if not np.all(np.isfinite(u)):
        raise SolverError(f"implicit solve produced non-finite values at step {n}")


def bdf2_scalar(lam: float, y0: float, dt: float, steps: int) -> np.ndarray:
    """BDF2 with a backward-Euler start for ``y' = lam * y``."""
    y = np.empty(steps + 1)
    y[0] = y0
    y[1] = y0 / (1.0 - dt * lam)
    for n in range(1, steps):
        y[n + 1] = (4.0 * y[n] - y[n - 1]) / (3.0 - 2.0 * dt * lam)
    return y

# }}}


# {{{ errors and rates

def l2_error(disc: Discretization, u: np.ndarray, exact) -> float:
    """``sqrt(sum (u - u*)^T (J H) (u - u*))`` with *exact* a callable of
    the physical coordinates."""
    ue = np.broadcast_to(np.asarray(exact(disc.x[..., 0], disc.x[..., 1]), dtype=float),
                         disc.hp.shape)
    e = u.reshape(disc.hp.shape) - ue
    return float(np.sqrt(np.sum(disc.hp * e * e)))


@dataclass(frozen=True)
class RateFit:
    slope: float
    pairwise: tuple[float, ...]


def convergence_rate(errors, h) -> RateFit:
    """Least-squares slope of ``log(error)`` against ``log(h)`` and the
    rates between consecutive levels."""
    errors = np.asarray(errors, dtype=float)
    h = np.asarray(h, dtype=float)
    if errors.shape != h.shape or errors.ndim != 1:
        raise DataError("errors and mesh sizes must be one-dimensional and of equal length")
    if len(errors) < 2:
        raise DataError("at least two mesh levels are needed for a rate")
    if np.any(errors <= 0.0) or np.any(h <= 0.0):
        raise DataError("errors and mesh sizes must be positive")
    slope = float(np.polyfit(np.log(h), np.log(errors), 1)[0])
    pair = tuple(float(np.log(errors[i + 1] / errors[i]) / np.log(h[i + 1] / h[i]))
                 for i in range(len(h) - 1))
    return RateFit(slope, pair)

# }}}


# {{{ csv output

def write_relaxation_csv(stream, alphas, values) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["alpha", "min_eig"])
    for a, v in zip(alphas, values):
        w.writerow([f"{a:.6g}", f"{v:.12e}"])


def write_energy_csv(stream, history: EnergyHistory) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["t", "energy"])
    for t, e in zip(history.t, history.energy):
        w.writerow([f"{t:.6g}", f"{e:.12e}"])

# }}}

# vim: foldmethod=marker
