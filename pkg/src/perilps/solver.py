"""Static volume-constrained solves and Newmark time stepping.

Static systems go through a sparse direct factorization below a size
threshold and a Jacobi-preconditioned Krylov method above it (CG on the
symmetric strategies, BiCGStab on the mirror-coupled ones, direct
fallback on non-convergence).  Every returned solution is re-verified by a
matrix-free residual evaluation built from dilatation + apply_lps, which is
independent of the assembled matrix.

The dynamic scheme is the constant-average-acceleration Newmark method:
solve (4 rho/dt^2) u + L u = f(t_{n+1}) + (4 rho/dt^2)(u^n + dt v^n +
dt^2/4 a^n), then

    a^{n+1} = (4/dt^2)(u^{n+1} - u^n - dt v^n) - a^n
    v^{n+1} = v^n + (dt/2)(a^n + a^{n+1}).

The shifted matrix is constant in time, so the factorization is reused
across steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import NodalField, StiffnessSystem, apply_lps, dilatation


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class StaticSolveConfig:
    method: str = "auto"  # auto | direct | cg | bicgstab
    rel_tolerance: float = 1e-12
    max_iterations: int = 20000
    # The two-hop stencil makes LU fill expensive, while the operator's
    # conditioning is only O((L/delta)^2); Krylov wins beyond small systems.
    direct_limit: int = 8000

    def __post_init__(self):
        if self.rel_tolerance <= 0.0:
            raise SolverError("rel_tolerance must be positive")
        if self.method not in ("auto", "direct", "cg", "bicgstab"):
            raise SolverError(f"unknown solve method {self.method!r}")


@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual_history: list = field(default_factory=list)
    certified_residual: float = np.nan


class _LinearSolver:
    """One factorization / preconditioner, reusable across right-hand sides."""

    def __init__(self, a: sp.csr_matrix, symmetric: bool, config: StaticSolveConfig):
        self.config = config
        self.symmetric = symmetric
        method = config.method
        if method == "auto":
            method = "direct" if a.shape[0] <= config.direct_limit else (
                "cg" if symmetric else "bicgstab")
        self.method = method
        self.a = a.tocsr()
        self._lu = None
        if method == "direct":
            self._factorize()
        else:
            diag = self.a.diagonal()
            if np.any(diag == 0.0):
                raise SolverError("zero diagonal entry; system is singular or misassembled")
            self._minv = sp.diags(1.0 / diag)

    def _factorize(self):
        try:
            self._lu = spla.splu(self.a.tocsc())
        except RuntimeError as exc:
            raise SolverError(
                f"sparse factorization failed ({exc}); the eliminated system is singular "
                "(zero-energy mode?)") from exc

    def solve(self, b: np.ndarray, x0=None):
        if self.method == "direct":
            return self._lu.solve(b), SolveInfo("direct", 1)
        history = []
        count = [0]

        def callback(xk):
            count[0] += 1
            if count[0] % 25 == 0:
                history.append(float(np.linalg.norm(b - self.a @ xk)))

        krylov = spla.cg if self.method == "cg" else spla.bicgstab
        x, code = krylov(self.a, b, x0=x0, rtol=self.config.rel_tolerance, atol=0.0,
                         maxiter=self.config.max_iterations, M=self._minv,
                         callback=callback)
        if code != 0:
            history.append(float(np.linalg.norm(b - self.a @ x)))
            x, code = spla.lgmres(self.a, b, x0=x, rtol=self.config.rel_tolerance, atol=0.0,
                                  maxiter=self.config.max_iterations, M=self._minv)
            if code != 0:
                history.append(float(np.linalg.norm(b - self.a @ x)))
                if self._lu is None:
                    self._factorize()  # last-resort robustness at desk scale
                return self._lu.solve(b), SolveInfo("direct-fallback", count[0], history)
            return x, SolveInfo("lgmres-fallback", count[0], history)
        return x, SolveInfo(self.method, count[0], history)


def _certify(system: StiffnessSystem, t: float, u_full: np.ndarray,
             rhs: np.ndarray, u_int: np.ndarray, info: SolveInfo):
    res = system.residual_matrix_free(t, u_full)
    scale = max(float(np.linalg.norm(rhs)),
                float(np.max(np.abs(system.a_eff.diagonal())) * np.linalg.norm(u_int)),
                1e-300)
    info.certified_residual = float(np.linalg.norm(res.ravel()) / scale)
    if not np.isfinite(info.certified_residual) or info.certified_residual > 1e-6:
        raise SolverError(
            f"matrix-free residual {info.certified_residual:.3e} after {info.iterations} "
            f"iterations (history {info.residual_history[-3:]}); solve did not converge")


def solve_static(system: StiffnessSystem, config: StaticSolveConfig | None = None,
                 t: float = 0.0):
    """Solve the volume-constrained static problem; returns (NodalField, SolveInfo)."""
    config = config or StaticSolveConfig()
    solver = _LinearSolver(system.a_eff, system.symmetric, config)
    rhs = system.rhs(t)
    x, info = solver.solve(rhs)
    u_full = system.full_displacement(t, x)
    _certify(system, t, u_full, rhs, x, info)
    theta = dilatation(system.cloud, system.rule, system.spec, u_full)
    return NodalField(u_full, theta), info


@dataclass
class NewmarkState:
    """Displacement on all nodes; velocity/acceleration on interior dofs."""

    u: np.ndarray
    u_dot: np.ndarray
    u_ddot: np.ndarray
    t: float
    dt: float


def initial_state(system: StiffnessSystem, phi_fn, psi_fn, dt: float) -> NewmarkState:
    """Initial data plus the consistent acceleration rho a0 = f(0) - L phi."""
    cloud = system.cloud
    u0 = np.asarray(phi_fn(0.0, cloud.points), dtype=float)
    v0 = np.asarray(psi_fn(0.0, cloud.points[system.interior_idx]), dtype=float)
    rho = system.material.density
    if rho > 0.0:
        theta = dilatation(cloud, system.rule, system.spec, u0)
        lhs = apply_lps(cloud, system.rule, system.spec, system.material, u0, theta)
        f0 = np.asarray(system.f_fn(0.0, cloud.points[system.interior_idx]), dtype=float)
        a0 = (f0 - lhs[system.interior_idx]) / rho
    else:
        a0 = np.zeros_like(v0)
    return NewmarkState(u0, v0, a0, 0.0, dt)


class NewmarkIntegrator:
    """Implicit stepper owning the shifted system (4 rho/dt^2) I + A."""

    def __init__(self, system: StiffnessSystem, dt: float,
                 config: StaticSolveConfig | None = None):
        if dt <= 0.0:
            raise SolverError("time step must be positive")
        self.system = system
        self.dt = dt
        self.rho = system.material.density
        self.shift = 4.0 * self.rho / dt**2
        config = config or StaticSolveConfig()
        a_dyn = (system.a_eff + self.shift * sp.identity(system.n_unknowns, format="csr")).tocsr()
        self.solver = _LinearSolver(a_dyn, system.symmetric, config)

    def step(self, state: NewmarkState) -> NewmarkState:
        sysm = self.system
        t1 = state.t + self.dt
        u_int = state.u[sysm.interior_idx].ravel()
        v, a = state.u_dot.ravel(), state.u_ddot.ravel()
        predictor = u_int + self.dt * v + (self.dt**2 / 4.0) * a
        rhs = sysm.rhs(t1) + self.shift * predictor
        x, _ = self.solver.solve(rhs, x0=u_int)
        a_new = (4.0 / self.dt**2) * (x - u_int - self.dt * v) - a
        v_new = v + (self.dt / 2.0) * (a + a_new)
        u_full = sysm.full_displacement(t1, x)
        return NewmarkState(u_full, v_new.reshape(-1, 2), a_new.reshape(-1, 2), t1, self.dt)


def newmark_step(state: NewmarkState, system: StiffnessSystem,
                 config: StaticSolveConfig | None = None) -> NewmarkState:
    """Single implicit step; prefer NewmarkIntegrator when stepping repeatedly."""
    return NewmarkIntegrator(system, state.dt, config).step(state)


def run_dynamic(system: StiffnessSystem, phi_fn, psi_fn, T: float, dt: float,
                config: StaticSolveConfig | None = None, on_step=None) -> NewmarkState:
    """Advance ceil(T/dt) steps from the initial data; returns the final state."""
    state = initial_state(system, phi_fn, psi_fn, dt)
    if T <= 0.0:
        return state
    steps = int(np.ceil(T / dt - 1e-12))
    integrator = NewmarkIntegrator(system, dt, config)
    for _ in range(steps):
        state = integrator.step(state)
        if on_step is not None:
            on_step(state)
    return state


def write_snapshot_csv(path, cloud, u: np.ndarray) -> None:
    """Per-step dump: node id, x, y, u1, u2."""
    with open(path, "w") as fh:
        fh.write("node,x,y,u1,u2\n")
        for i, ((x, y), (u1, u2)) in enumerate(zip(cloud.points, u)):
            fh.write(f"{i},{x:.17g},{y:.17g},{u1:.17g},{u2:.17g}\n")
