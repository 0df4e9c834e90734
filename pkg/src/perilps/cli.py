"""Command-line front end: single solves, convergence studies, validation.

Three subcommands:

  solve      one case at one horizon; writes the solution field as CSV
  converge   horizon sweep; writes report.csv and rates.csv
  validate   fast invariant suite (kernel moments, quadrature reproduction,
             quadratic exactness, patch test); --quick skips the solve-based
             checks

Configuration precedence: defaults < config file (--config, flat key=value
with # comments) < PERILPS_* environment variables < command-line flags.
Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import boundary, harness, kernel, quadrature
from .geometry import GeometryError
from .operators import OperatorError, assemble, dilatation, apply_lps
from .quadrature import QuadratureError, build_rule, cache_key, load_weight_cache, \
    save_weight_cache
from .solver import SolverError, solve_static, write_snapshot_csv

ENV_PREFIX = "PERILPS_"


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str = "converge"
    case: str = "nonlinear-static"
    strategy: str = "smooth"
    kernel: str = kernel.INVERSE_R
    nu: float = 0.3
    grid: str = "cartesian"
    deltas: tuple = ()          # empty = case defaults (converge)
    delta: float = 0.05         # single horizon (solve)
    delta_over_h: float = 4.0
    dt: float = 0.01
    t_final: float = 0.1
    out: str = "."
    cache: bool = False
    threads: int = 1
    mirror: bool = True
    quick: bool = False
    snapshots: bool = False

    def validate(self) -> "RunConfig":
        if self.strategy not in boundary.STRATEGIES:
            raise UsageError(f"invalid field 'strategy': {self.strategy!r}")
        if self.kernel not in kernel.FAMILIES:
            raise UsageError(f"invalid field 'kernel': {self.kernel!r}")
        if self.grid not in ("cartesian", "polar"):
            raise UsageError(f"invalid field 'grid': {self.grid!r}")
        if not 0.0 < self.nu < 0.5:
            raise UsageError(f"invalid field 'nu': {self.nu} (plane strain needs 0 < nu < 1/2)")
        if self.strategy == boundary.LINEAR and not self.mirror:
            raise UsageError("invalid field 'mirror': linear extension requires mirror grids")
        for name in ("delta", "delta_over_h", "dt", "t_final"):
            if getattr(self, name) <= 0.0:
                raise UsageError(f"invalid field '{name}': must be positive")
        if self.threads < 1:
            raise UsageError("invalid field 'threads': must be >= 1")
        if any(d <= 0 for d in self.deltas):
            raise UsageError("invalid field 'deltas': must be positive")
        try:
            case = harness.get_case(self.case)
        except harness.HarnessError as exc:
            raise UsageError(f"invalid field 'case': {exc}") from exc
        if case.domain.kind == "square" and self.grid == "polar":
            raise UsageError("invalid field 'grid': polar grids apply to annulus cases only")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise UsageError(f"unknown configuration key '{key}'")
    if key in ("cache", "mirror", "quick", "snapshots"):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise UsageError(f"invalid field '{key}': expected a boolean, got {raw!r}")
    if key == "deltas":
        return tuple(float(tok) for tok in raw.replace(",", " ").split())
    if key in ("nu", "delta", "delta_over_h", "dt", "t_final"):
        return float(raw)
    if key == "threads":
        return int(raw)
    return raw.strip()


def _read_config_file(path: str) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        values[key] = _parse_value(key, raw)
    return values


def _env_overrides() -> dict:
    values = {}
    for key, raw in os.environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            values[name] = _parse_value(name, raw)
    return values


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name == "deltas":
            val = " ".join(f"{d:.17g}" for d in val)
        lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perilps", add_help=True)
    sub = parser.add_subparsers(dest="command")
    for name in ("solve", "converge", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--case", default=None)
        p.add_argument("--strategy", default=None)
        p.add_argument("--kernel", default=None)
        p.add_argument("--nu", default=None)
        p.add_argument("--grid", default=None)
        p.add_argument("--deltas", default=None)
        p.add_argument("--delta", default=None)
        p.add_argument("--delta-over-h", dest="delta_over_h", default=None)
        p.add_argument("--dt", default=None)
        p.add_argument("--T", dest="t_final", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--cache", default=None)
        p.add_argument("--threads", default=None)
        p.add_argument("--mirror", default=None)
        p.add_argument("--snapshots", default=None)
        if name == "validate":
            p.add_argument("--quick", nargs="?", const="true", default=None)
    return parser


def parse_config(argv) -> RunConfig:
    """Merge defaults, config file, PERILPS_* environment and flags."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        raise UsageError("could not parse command line") from exc
    if ns.command is None:
        raise UsageError("missing command: expected solve, converge or validate")
    values = {"command": ns.command}
    config_path = getattr(ns, "config", None)
    file_values = _read_config_file(config_path) if config_path else {}
    file_values.pop("command", None)
    values.update(file_values)
    values.update(_env_overrides())
    for key in _FIELD_TYPES:
        raw = getattr(ns, key, None)
        if raw is not None and key != "command":
            values[key] = _parse_value(key, str(raw))
    return RunConfig(**values).validate()


def _rule_with_cache(cfg: RunConfig, cloud, family: str):
    if not cfg.cache:
        return build_rule(cloud)
    cache_dir = Path(cfg.out) / "weight-cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{cache_key(cloud.domain, cfg.grid, cloud.h, cloud.delta, family)}.bin"
    if path.exists():
        return load_weight_cache(path, cloud)
    rule = build_rule(cloud)
    save_weight_cache(path, rule)
    return rule


def command_solve(cfg: RunConfig) -> int:
    case = harness.get_case(cfg.case)
    material = kernel.Material(poisson=cfg.nu)
    h = cfg.delta / cfg.delta_over_h
    cloud = harness.build_cloud(case.domain, cfg.grid, h, cfg.delta, mirror=cfg.mirror)
    rule = _rule_with_cache(cfg, cloud, cfg.kernel)
    spec = kernel.KernelSpec(cfg.kernel, cfg.delta)
    u0_fn = case.displacement(material)
    plan = boundary.BoundaryPlan(cfg.strategy, u0_fn)
    system = assemble(cloud, rule, spec, material, plan, case.body_force(material))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if case.dynamic:
        from .solver import run_dynamic

        def on_step(state):
            if cfg.snapshots:
                write_snapshot_csv(out / f"snapshot-{state.t:.6g}.csv", cloud, state.u)

        final = run_dynamic(system, u0_fn, case.velocity(material), cfg.t_final, cfg.dt,
                            on_step=on_step)
        u, t_eval = final.u, final.t
    else:
        result, _ = solve_static(system)
        u, t_eval = result.u, 0.0
    write_snapshot_csv(out / "solution.csv", cloud, u)
    err = harness.l2_error(cloud, u, u0_fn, t_eval)
    print(f"case={cfg.case} strategy={cfg.strategy} delta={cfg.delta:.6g} "
          f"l2_error={err:.6e}")
    return 0


def command_converge(cfg: RunConfig) -> int:
    deltas = cfg.deltas or None
    report = harness.run_convergence(
        cfg.case, cfg.strategy, kernel_family=cfg.kernel, nu=cfg.nu, grid=cfg.grid,
        deltas=deltas, delta_over_h=cfg.delta_over_h, dt=cfg.dt, t_final=cfg.t_final)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.case}-{cfg.strategy}"
    with open(out / f"{stem}-run.txt", "w") as fh:
        fh.write(f"# generated {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        fh.write(serialize_config(cfg))
    report.write_csv(out / f"{stem}-report.csv")
    report.write_rates_csv(out / f"{stem}-rates.csv")
    for metric, fit in report.rates.items():
        label = "exact" if fit.exact else f"{fit.slope:.3f} +- {fit.halfwidth:.3f}"
        print(f"{cfg.case} {cfg.strategy} {metric}: {label}")
    return 0


def _validate_checks(cfg: RunConfig):
    """(name, measured, tolerance) triples for the invariant suite."""
    checks = []
    delta = 0.1
    dom = harness.Domain.square(0.25)
    cloud = harness.build_cloud(dom, "cartesian", delta / 4.0, delta, mirror=True)
    rule = _rule_with_cache(cfg, cloud, kernel.INVERSE_R)
    spec = kernel.KernelSpec(kernel.INVERSE_R, delta)
    material = kernel.Material(poisson=cfg.nu)
    center = int(np.argmin(np.linalg.norm(cloud.points, axis=1)))

    res_a, res_b = kernel.check_normalization(spec, cloud, rule, center)
    checks.append(("kernel normalization (dilatational)", res_a, 1e-10))
    checks.append(("kernel normalization (deviatoric)", res_b, 1e-10))

    worst = 0.0
    for alpha in quadrature.monomial_basis():
        exact = quadrature.exact_moment(alpha, delta)

        def f(xi, xj, alpha=alpha):
            z = xj - xi
            r = np.linalg.norm(z, axis=1)
            return z[:, 0] ** alpha[0] * z[:, 1] ** alpha[1] / r**3

        got = quadrature.integrate(rule, cloud, center, f)
        worst = max(worst, abs(got - exact) / max(1.0, abs(exact)))
    checks.append(("quadrature moment reproduction", worst, 1e-10))

    u = np.zeros_like(cloud.points)
    u[:, 0] = cloud.points[:, 0] * cloud.points[:, 1]
    theta = dilatation(cloud, rule, spec, u)
    theta_err = float(np.max(np.abs(theta[cloud.inside] - cloud.points[cloud.inside, 1])))
    checks.append(("quadratic dilatation exactness", theta_err, 1e-9))
    lhs = apply_lps(cloud, rule, spec, material, u, theta)
    exact_rows = np.zeros_like(lhs[cloud.inside])
    exact_rows[:, 1] = -(material.lam + material.mu)
    lps_err = float(np.max(np.abs(lhs[cloud.inside] - exact_rows)))
    checks.append(("quadratic momentum exactness", lps_err, 1e-9))

    if not cfg.quick:
        def u_patch(t, pts):
            return np.stack([3 * pts[:, 0] + 2 * pts[:, 1],
                             -pts[:, 0] + 2 * pts[:, 1]], axis=1)

        for strategy in ("smooth", "linear"):
            plan = boundary.BoundaryPlan(strategy, u_patch)
            system = assemble(cloud, rule, spec, material, plan,
                              lambda t, pts: np.zeros_like(pts))
            field, _ = solve_static(system)
            err = harness.l2_error(cloud, field.u, u_patch)
            checks.append((f"patch test ({strategy})", err, 1e-10))
    return checks


def command_validate(cfg: RunConfig) -> int:
    checks = _validate_checks(cfg)
    width = max(len(name) for name, _, _ in checks)
    failed = 0
    for name, measured, tol in checks:
        ok = measured <= tol
        failed += 0 if ok else 1
        print(f"{name:<{width}}  measured {measured:.3e}  tolerance {tol:.0e}  "
              f"{'PASS' if ok else 'FAIL'}")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


def _cap_threads(n: int):
    # All internal parallelism sits in the BLAS pools; cap them to the
    # requested width.
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _cap_threads(cfg.threads)
    try:
        if cfg.command == "solve":
            return command_solve(cfg)
        if cfg.command == "converge":
            return command_converge(cfg)
        return command_validate(cfg)
    except (SolverError, OperatorError, QuadratureError, GeometryError,
            harness.HarnessError, boundary.BoundaryError, kernel.KernelError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
