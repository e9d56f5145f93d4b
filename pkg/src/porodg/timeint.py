"""Second-order time integration of A x'' + B x' + C x = F(t).

Newmark-beta advances displacement and velocity together through a 2x2
block solve whose matrix is factorized once (the coefficients are time
independent); with gamma = 1/2, beta = 1/4 the scheme is unconditionally
stable and second-order accurate.  The leap-frog scheme is provided in
two variants: the update exactly as printed in the reference derivation,
whose two damping factors carry different powers of dt, and the standard
centered variant with dt/2 * B on both sides.  Both coincide when B = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spl


class SolverError(Exception):
    """Linear solve failed or exceeded its residual tolerance."""


class BlowupError(Exception):
    """Explicit time stepping left the stability region."""


@dataclass
class SimState:
    """Solution snapshot: time, displacement-like X, velocity Z."""

    t: float
    X: np.ndarray
    Z: np.ndarray

    def copy(self) -> "SimState":
        return SimState(self.t, self.X.copy(), self.Z.copy())


@dataclass(frozen=True)
class NewmarkParams:
    gamma: float = 0.5
    beta: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("Newmark gamma must lie in [0, 1]")
        if not 0.0 <= 2.0 * self.beta <= 1.0:
            raise ValueError("Newmark beta must satisfy 0 <= 2*beta <= 1")


class DirectSolver:
    """Sparse LU with a relative-residual acceptance check.

    Satisfies the solver contract factorize(matrix) -> handle and
    solve(handle, rhs) -> x with ||M x - b|| <= tol * ||b||.
    """

    def __init__(self, tol: float = 1e-10):
        self.tol = tol

    def factorize(self, matrix):
        mat = sps.csc_matrix(matrix)
        try:
            lu = spl.splu(mat)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        return (lu, mat)

    def solve(self, handle, rhs):
        lu, mat = handle
        rhs = np.asarray(rhs, dtype=float)
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values")
        bnorm = np.linalg.norm(rhs)
        if bnorm > 0:
            res = np.linalg.norm(mat @ x - rhs)
            if res > self.tol * bnorm:
                raise SolverError(
                    f"relative residual {res / bnorm:.3e} exceeds {self.tol:.1e}"
                )
        return x


def _as_csr(mat, n=None):
    if sps.issparse(mat):
        return mat.tocsr()
    arr = np.atleast_2d(np.asarray(mat, dtype=float))
    return sps.csr_matrix(arr)


class NewmarkIntegrator:
    """One-step Newmark advance of the coupled block system."""

    def __init__(self, A, B, C, dt: float, params: NewmarkParams | None = None,
                 solver: DirectSolver | None = None):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.params = params or NewmarkParams()
        self.dt = float(dt)
        self.A = _as_csr(A)
        self.B = _as_csr(B)
        self.C = _as_csr(C)
        self.n = self.A.shape[0]
        self.solver = solver or DirectSolver()
        g, b = self.params.gamma, self.params.beta
        lhs = sps.bmat([
            [self.A + dt ** 2 * b * self.C, dt ** 2 * b * self.B],
            [g * dt * self.C, self.A + g * dt * self.B],
        ], format="csc")
        self._handle = self.solver.factorize(lhs)

    def step(self, state: SimState, F_k: np.ndarray, F_k1: np.ndarray) -> SimState:
        dt = self.dt
        g, b = self.params.gamma, self.params.beta
        bt, gt = 0.5 - b, 1.0 - g
        CX_BZ = self.C @ state.X + self.B @ state.Z
        r1 = (self.A @ state.X + dt * (self.A @ state.Z)
              - dt ** 2 * bt * CX_BZ + dt ** 2 * (b * F_k1 + bt * F_k))
        r2 = self.A @ state.Z - gt * dt * CX_BZ + dt * (g * F_k1 + gt * F_k)
        sol = self.solver.solve(self._handle, np.concatenate([r1, r2]))
        return SimState(state.t + dt, sol[: self.n], sol[self.n:])


class LeapfrogIntegrator:
    """Explicit leap-frog advance; keeps the two previous displacement levels.

    ``variant='paper'`` uses (A + dt^2/2 B) on the left, verbatim from the
    printed update; ``variant='centered'`` uses the standard (A + dt/2 B).
    The start step X^1 is computed from the initial data by the dedicated
    Taylor start formula in both variants.
    """

    def __init__(self, A, B, C, dt: float, variant: str = "centered",
                 solver: DirectSolver | None = None,
                 blowup_factor: float = 1e12):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if variant not in ("paper", "centered"):
            raise ValueError("leapfrog variant must be 'paper' or 'centered'")
        self.dt = float(dt)
        self.variant = variant
        self.A = _as_csr(A)
        self.B = _as_csr(B)
        self.C = _as_csr(C)
        self.n = self.A.shape[0]
        self.solver = solver or DirectSolver()
        self.blowup_factor = blowup_factor
        damp = (dt ** 2 / 2.0) if variant == "paper" else (dt / 2.0)
        self._lhs_handle = self.solver.factorize(self.A + damp * self.B)
        self._mass_handle = self.solver.factorize(self.A)
        self._ref_norm = None

    def start(self, X0, Z0, F0) -> np.ndarray:
        """Taylor start: A X^1 = (A - dt^2/2 C) X^0 + (dt A - dt^2/2 B) Z^0 + dt^2/2 F^0."""
        dt = self.dt
        rhs = (self.A @ X0 - dt ** 2 / 2.0 * (self.C @ X0)
               + dt * (self.A @ Z0) - dt ** 2 / 2.0 * (self.B @ Z0)
               + dt ** 2 / 2.0 * F0)
        self._ref_norm = max(1.0, float(np.abs(X0).max(initial=0.0)))
        return self.solver.solve(self._mass_handle, rhs)

    def step(self, X_k, X_km1, F_k) -> np.ndarray:
        dt = self.dt
        rhs = (dt ** 2 * F_k + 2.0 * (self.A @ X_k) - dt ** 2 * (self.C @ X_k)
               + dt / 2.0 * (self.B @ X_km1) - self.A @ X_km1)
        X_k1 = self.solver.solve(self._lhs_handle, rhs)
        ref = self._ref_norm or 1.0
        if np.abs(X_k1).max(initial=0.0) > self.blowup_factor * ref:
            raise BlowupError(
                f"leap-frog iterate exceeded {self.blowup_factor:g} times the initial data"
            )
        return X_k1


def leapfrog_start(A, B, C, X0, Z0, dt, F0, variant: str = "centered") -> np.ndarray:
    return LeapfrogIntegrator(A, B, C, dt, variant).start(
        np.asarray(X0, dtype=float), np.asarray(Z0, dtype=float),
        np.asarray(F0, dtype=float),
    )


def leapfrog_step(A, B, C, X_k, X_km1, dt, F_k, variant: str = "centered") -> np.ndarray:
    return LeapfrogIntegrator(A, B, C, dt, variant).step(
        np.asarray(X_k, dtype=float), np.asarray(X_km1, dtype=float),
        np.asarray(F_k, dtype=float),
    )


def integrate(A, B, C, load, X0, Z0, dt, nsteps: int, scheme: str = "newmark",
              params: NewmarkParams | None = None, variant: str = "centered",
              callback=None, solver: DirectSolver | None = None) -> SimState:
    """March nsteps of size dt from (X0, Z0); returns the final state.

    ``load(t)`` supplies the right-hand side; ``callback(k, state)`` is
    invoked at every level including k = 0.  For leap-frog the returned
    velocity is the centered difference of the last two levels.
    """
    X0 = np.asarray(X0, dtype=float)
    Z0 = np.asarray(Z0, dtype=float)
    state = SimState(0.0, X0.copy(), Z0.copy())
    if callback is not None:
        callback(0, state)
    if scheme == "newmark":
        stepper = NewmarkIntegrator(A, B, C, dt, params, solver)
        F_k = np.asarray(load(0.0), dtype=float)
        for k in range(nsteps):
            F_k1 = np.asarray(load((k + 1) * dt), dtype=float)
            state = stepper.step(state, F_k, F_k1)
            F_k = F_k1
            if callback is not None:
                callback(k + 1, state)
        return state
    if scheme == "leapfrog":
        stepper = LeapfrogIntegrator(A, B, C, dt, variant, solver)
        X_prev = X0.copy()
        X_cur = stepper.start(X0, Z0, np.asarray(load(0.0), dtype=float))
        state = SimState(dt, X_cur, (X_cur - X_prev) / dt)
        if callback is not None:
            callback(1, state)
        for k in range(1, nsteps):
            X_next = stepper.step(X_cur, X_prev, np.asarray(load(k * dt), dtype=float))
            X_prev, X_cur = X_cur, X_next
            state = SimState((k + 1) * dt, X_cur, (X_cur - X_prev) / dt)
            if callback is not None:
                callback(k + 1, state)
        return state
    raise ValueError(f"unknown scheme {scheme!r}")


# ----------------------------------------------------------------------
# initial conditions
# ----------------------------------------------------------------------
def project_initial_conditions(space, u0, w0, phi0, u1, w1, phi1):
    """Element-wise L2 projection of the six initial fields onto the space.

    Fields are callables of point arrays: vector fields return (n, 2),
    the scalar ones (n,).  None is shorthand for the zero field.  The
    block mass matrix is element diagonal, so the projection reduces to
    dense local solves; projecting a discrete function reproduces its own
    coefficients.
    """
    dm = space.dofmap
    X = np.zeros(dm.total_size)
    Z = np.zeros(dm.total_size)

    def vec_rhs(e, fld, pts, w, phi):
        vals = fld(pts[:, 0], pts[:, 1])
        return phi @ (w * vals[:, 0]), phi @ (w * vals[:, 1])

    for e in dm.poro_elements:
        pts, w, phi, _ = space.volume_tables(e)
        M = (phi * w) @ phi.T
        lu = np.linalg.cholesky(M)
        def solve(rhs):
            return np.linalg.solve(lu.T, np.linalg.solve(lu, rhs))
        for fld, out, offset in ((u0, X, dm.offset_u), (w0, X, dm.offset_w),
                                 (u1, Z, dm.offset_u), (w1, Z, dm.offset_w)):
            if fld is None:
                continue
            rx, ry = vec_rhs(e, fld, pts, w, phi)
            out[offset + dm.u_indices(e, 0)] = solve(rx)
            out[offset + dm.u_indices(e, 1)] = solve(ry)
    for e in dm.acoustic_elements:
        pts, w, phi, _ = space.volume_tables(e)
        M = (phi * w) @ phi.T
        lu = np.linalg.cholesky(M)
        for fld, out in ((phi0, X), (phi1, Z)):
            if fld is None:
                continue
            rhs = phi @ (w * fld(pts[:, 0], pts[:, 1]))
            out[dm.phi_indices(e)] = np.linalg.solve(lu.T, np.linalg.solve(lu, rhs))
    return X, Z
