"""Experiment orchestration: simulate / dualcheck / gradcheck / optimize.

Every run writes a manifest (resolved config + seed + version) next to its
CSV outputs so it can be replayed bit-exactly; timestamps are confined to the
manifest.  Exit codes: 0 success, 1 validation failure, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import duality_check
from .config import ConfigError, parse_problem_file
from .core import write_field, Field
from .dynamics import ControlPath, NumericalAbort, solve_forward
from .optimizer import fd_directional_derivative, gradient, optimize
from .paths import sample_ensemble, sample_path

__all__ = ["run", "main"]


def _csv_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _format_csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_csv_cell(v) for v in row) for row in rows]
    return "\n".join(lines)


def _thread_count(args) -> int:
    env = os.environ.get("SNLS_THREADS")
    if args.threads is not None:
        return max(1, args.threads)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _pmap(threads: int):
    if threads <= 1:
        return map

    def mapper(fn, items):
        items = list(items)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

    return mapper


def _load(args):
    cfg = parse_problem_file(args.config)
    if args.seed is not None:
        noise = dataclasses.replace(cfg.problem.noise, seed=args.seed)
        cfg.problem = dataclasses.replace(cfg.problem, noise=noise)
    return cfg


def _steps(cfg, dt: float) -> int:
    n = round(cfg.horizon / dt)
    if n < 1 or abs(n * dt - cfg.horizon) > 1e-9 * max(1.0, cfg.horizon):
        raise ConfigError(f"dt = {dt:g} does not divide the horizon T = {cfg.horizon:g}")
    return n


def _write_manifest(out: Path, args, cfg, extra=None):
    manifest = {
        "command": args.command,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "seed": cfg.problem.noise.seed,
        "args": {
            k: v for k, v in vars(args).items() if k not in ("command", "func") and v is not None
        },
        "config": cfg.text,
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _smooth_probe(cfg, seed_shift: int) -> np.ndarray:
    """Deterministic low-mode complex bump used as test source / direction."""
    grid = cfg.problem.grid
    gen = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.problem.noise.seed, spawn_key=(99, seed_shift))
    )
    envelope = np.exp(-sum(x**2 for x in grid.nodes) / (2.0 * (grid.extent / 3.0) ** 2))
    out = np.zeros(grid.shape, dtype=complex)
    for _ in range(3):
        kvec = gen.integers(-2, 3, size=grid.dimension)
        coef = gen.standard_normal() + 1j * gen.standard_normal()
        phase = sum(k * (np.pi / grid.extent) * x for k, x in zip(kvec, grid.nodes))
        out += coef * np.exp(1j * phase)
    return envelope * out


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    K = _steps(cfg, args.dt)
    u = ControlPath.constant(cfg.u0, K, args.dt, cfg.admissible)
    paths = sample_ensemble(cfg.problem.noise, args.paths, K, args.dt)
    pmap = _pmap(_thread_count(args))
    records = list(pmap(lambda p: solve_forward(cfg.problem, cfg.x0, u, p), paths))

    out = Path(args.out)
    _write_manifest(out, args, cfg)
    drift = 0.0
    for i, rec in enumerate(records):
        rows = [
            (k, k * args.dt, rec.mass_series[k], rec.energy_series[k], rec.boundary_series[k])
            for k in range(K + 1)
        ]
        _write_csv(out / f"diag_path{i:04d}.csv", ("k", "t", "mass", "energy", "boundary_mass"), rows)
        drift = max(drift, rec.max_mass_drift())
        if args.snapshots:
            for k in range(0, K + 1, args.snapshots):
                write_field(
                    Field(cfg.problem.grid, rec.state(k)),
                    out / f"field_p{i:04d}_k{k:06d}.snls",
                )
    print(f"simulate: {args.paths} path(s), K={K}, max relative mass drift {drift:.3e}")
    return 0


def _cmd_dualcheck(args) -> int:
    cfg = _load(args)
    cfg.cost.require_gamma2()
    pmap = _pmap(_thread_count(args))
    source = _smooth_probe(cfg, 1)
    rows = []
    dt = args.dt
    for _ in range(args.halvings + 1):
        K = _steps(cfg, dt)
        u = ControlPath.constant(cfg.u0, K, dt, cfg.admissible)
        paths = sample_ensemble(cfg.problem.noise, args.paths, K, dt)
        report = duality_check(cfg.problem, cfg.cost, u, source, paths, cfg.x0, pmap)
        rows.append((dt, report.residual))
        dt /= 2.0
    table = _format_csv(("dt", "residual"), rows)
    print(table)
    if args.out:
        out = Path(args.out)
        _write_manifest(out, args, cfg)
        _write_csv(out / "dualcheck.csv", ("dt", "residual"), rows)
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = _load(args)
    K = _steps(cfg, args.dt)
    u = ControlPath.constant(cfg.u0, K, args.dt, cfg.admissible)
    paths = sample_ensemble(cfg.problem.noise, args.paths, K, args.dt)
    pmap = _pmap(_thread_count(args))

    gen = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.problem.noise.seed, spawn_key=(98,))
    )
    direction = ControlPath(0.2 * gen.standard_normal((K, u.m)), args.dt)
    epsilons = [float(e) for e in args.eps.split(",")]

    report = gradient(cfg.problem, cfg.cost, u, cfg.x0, paths, pmap)
    adj = float((report.eta * direction.values).sum() * args.dt)
    fd = fd_directional_derivative(
        cfg.problem, cfg.cost, u, direction, epsilons, cfg.x0, paths, pmap=pmap
    )
    rows = [
        (eps, value, adj, abs(value - adj) / (1.0 + abs(value)))
        for eps, value in zip(fd.epsilons, fd.values)
    ]
    rel = abs(adj - fd.best) / (1.0 + abs(fd.best))
    rows.append((0.0, fd.best, adj, rel))  # extrapolated row
    table = _format_csv(("eps", "fd", "adjoint", "rel_error"), rows)
    print(table)
    print(f"extrapolated relative error {rel:.3e}")
    if args.out:
        out = Path(args.out)
        _write_manifest(out, args, cfg)
        _write_csv(out / "gradcheck.csv", ("eps", "fd", "adjoint", "rel_error"), rows)
    return 0


def _cmd_optimize(args) -> int:
    cfg = _load(args)
    cfg.cost.require_gamma2()
    K = _steps(cfg, args.dt)
    u0 = ControlPath.constant(cfg.u0, K, args.dt, cfg.admissible)
    paths = sample_ensemble(cfg.problem.noise, args.paths, K, args.dt)
    pmap = _pmap(_thread_count(args))
    result = optimize(
        cfg.problem,
        cfg.cost,
        cfg.admissible,
        u0,
        cfg.x0,
        paths,
        max_iters=args.max_iters,
        tol_pmp=args.tol,
        rho0=args.rho0,
        pmap=pmap,
    )
    out = Path(args.out)
    _write_manifest(out, args, cfg, {"termination": result.termination})
    _write_csv(
        out / "iters.csv",
        ("n", "phi", "stderr", "grad_norm", "rho", "pmp_residual"),
        [(h.n, h.phi, h.stderr, h.grad_norm, h.rho, h.pmp_residual) for h in result.history],
    )
    control_rows = [
        (k, k * args.dt, *result.control.values[k]) for k in range(K)
    ]
    _write_csv(
        out / "control_final.csv",
        ("k", "t", *(f"u_{j + 1}" for j in range(result.control.m))),
        control_rows,
    )
    last = result.history[-1]
    print(
        f"optimize: {result.termination} after {result.iterations} iteration(s); "
        f"phi = {last.phi:.6g} +- {last.stderr:.2g}, pmp residual = {last.pmp_residual:.3e}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snls",
        description="Stochastic NLS simulation and bilinear optimal control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out: bool):
        p.add_argument("--config", required=True, help="problem specification file")
        p.add_argument("--dt", type=float, required=True, help="time step")
        p.add_argument("--paths", type=int, default=1, help="Monte-Carlo ensemble size")
        p.add_argument("--seed", type=int, default=None, help="override the noise master seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: cores; env SNLS_THREADS overrides)")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--out", default=None, help="optional output directory")

    p = sub.add_parser("simulate", help="integrate the state equation and emit diagnostics")
    common(p, needs_out=True)
    p.add_argument("--snapshots", type=int, default=0,
                   help="emit field snapshots every this many steps (0 = off)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("dualcheck", help="duality-identity residual table over dt halvings")
    common(p, needs_out=False)
    p.add_argument("--halvings", type=int, default=2)
    p.set_defaults(func=_cmd_dualcheck)

    p = sub.add_parser("gradcheck", help="adjoint gradient vs central-difference ladder")
    common(p, needs_out=False)
    p.add_argument("--eps", default="1e-2,5e-3", help="comma-separated epsilon ladder")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("optimize", help="projected gradient descent to the PMP fixed point")
    common(p, needs_out=True)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=None, help="PMP residual tolerance")
    p.add_argument("--rho0", type=float, default=1.0, help="initial step size")
    p.set_defaults(func=_cmd_optimize)
    return parser


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
