"""Batch experiment harness.

Subcommands: simulate | hydro | converge | rate | exact, each driven by a
YAML config (see configs/reference.yaml).  Every command writes CSV or
structured-text outputs plus a run manifest; all data files carry the config
hash in a header comment.  Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import os
import sys
import time

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    compile_expression,
    load_config,
    parse_config,
    replica_rng,
    write_manifest,
)
from .dynamics import Model, ReservoirProfiles, simulate
from .empirical import block_average, empirical_measure, l1_distance, smooth
from .errors import ConfigError, LatgasError, NumericalFailure
from .generator import assemble_exact_generator
from .grid import Grid
from .hydro import (
    AxisFactor,
    BoundaryData,
    FieldSum,
    SeparableMode,
    TimeFactor,
    solve_controlled,
    solve_hydro,
)
from .lattice import Configuration, Lattice
from .ldp import EnergyBasis, default_basis, h_norm, rate_estimate, verify_f06
from .thermo import sample_profile_state


# --- shared builders -----------------------------------------------------------

def build_profiles(cfg: ExperimentConfig) -> ReservoirProfiles:
    alpha, beta = cfg.model.profile_callables()
    try:
        return ReservoirProfiles(cfg.model.velocities, alpha, beta)
    except ValueError as exc:
        raise ConfigError(f"reservoir profiles: {exc}") from None


def build_model(cfg: ExperimentConfig, N: int) -> Model:
    lat = Lattice(N, cfg.model.d)
    try:
        return Model(lat, cfg.model.velocities, profiles=build_profiles(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_grid(cfg: ExperimentConfig, m1: int, mt=None) -> Grid:
    d = cfg.model.d
    if d > 1 and mt is None:
        raise ConfigError("hydro.mt is required for d > 1")
    try:
        return Grid(d, m1, mt or 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_gamma(cfg: ExperimentConfig, grid: Grid, boundary: BoundaryData):
    spec = cfg.hydro.get("gamma", "linear")
    ncomp = cfg.model.d + 1
    if spec == "linear":
        def gamma(u):
            x = u[..., 0]
            shape = u.shape[:-1] + (ncomp,)
            a = np.broadcast_to(boundary.a, shape)
            b = np.broadcast_to(boundary.b, shape)
            return (1 - x)[..., None] * a + x[..., None] * b
        return gamma
    if isinstance(spec, list):
        if len(spec) != ncomp:
            raise ConfigError(f"hydro.gamma needs {ncomp} component expressions")
        names = [f"u{i}" for i in range(1, cfg.model.d + 1)]
        fns = [compile_expression(s, names) for s in spec]

        def gamma(u):
            return np.stack([f(u) for f in fns], axis=-1)
        return gamma
    raise ConfigError("hydro.gamma must be 'linear' or a list of expressions")


def _parse_time_mode(token: str, horizon: float) -> TimeFactor:
    token = str(token)
    if token in ("const", "linear"):
        return TimeFactor(token, horizon)
    kind, _, num = token.partition(":")
    if kind in ("cos", "sin") and num.isdigit() and int(num) >= 1:
        return TimeFactor(kind, horizon, int(num))
    raise ConfigError(f"bad time mode {token!r} (use const|linear|cos:N|sin:N)")


def build_basis(cfg: ExperimentConfig, horizon: float):
    d = cfg.model.d
    n_space = cfg.ldp.get("n_space_modes", 4)
    tokens = cfg.ldp.get("time_modes", ["const", "linear", "cos:1", "sin:1"])
    kinds = []
    for tok in tokens:
        tf = _parse_time_mode(tok, horizon)
        kinds.append((tf.kind, tf.n))
    n_tr = cfg.ldp.get("n_transverse", 0)
    return default_basis(d, horizon, n_space=n_space, time_kinds=kinds,
                         n_transverse=n_tr)


def build_control(cfg: ExperimentConfig, horizon: float):
    terms = cfg.ldp.get("control")
    if not terms:
        return None
    d = cfg.model.d
    modes = []
    for i, term in enumerate(terms):
        if not isinstance(term, dict):
            raise ConfigError(f"ldp.control[{i}] must be a mapping")
        unknown = set(term) - {"component", "amplitude", "space_mode", "time_mode"}
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} in ldp.control[{i}]")
        comp = int(term.get("component", 0))
        amp = float(term.get("amplitude", 0.1))
        k = int(term.get("space_mode", 1))
        tf = _parse_time_mode(term.get("time_mode", "const"), horizon)
        axes = [AxisFactor("sine", k)] + [AxisFactor("one")] * (d - 1)
        modes.append(SeparableMode(d + 1, comp, tf, axes, amplitude=amp))
    return FieldSum(modes)


def _csv_writer(path, header_cols, cfg: ExperimentConfig, units: str):
    fh = open(path, "w", newline="")
    fh.write(f"# config_hash={cfg.config_hash} units={units} latgas={__version__}\n")
    writer = csv.writer(fh)
    writer.writerow(header_cols)
    return fh, writer


def _out_dir(cfg: ExperimentConfig, args) -> str:
    directory = args.out or cfg.output.get("directory", "out")
    os.makedirs(directory, exist_ok=True)
    return directory


# --- simulate -------------------------------------------------------------------

def _sim_replica(raw_config: dict, N: int, replica: int):
    """One replica cell; top-level so it can cross a process boundary."""
    cfg = parse_config(raw_config)
    sim = cfg.simulate
    horizon = float(sim.get("horizon", 0.5))
    eps = float(sim.get("eps", 0.1))
    grid_m1 = int(sim.get("grid_m1", 65))
    block_radius = int(sim.get("block_radius", 1))

    model = build_model(cfg, N)
    grid = build_grid(cfg, grid_m1, cfg.hydro.get("mt"))
    boundary = BoundaryData.from_profiles(model.profiles, cfg.model.velocities, grid)
    gamma = build_gamma(cfg, grid, boundary)

    if "sample_times" in sim:
        times = [float(t) for t in sim["sample_times"]]
    else:
        k = int(sim.get("n_samples", 5))
        times = list(np.linspace(0.0, horizon, k))

    rng = replica_rng(cfg.model.seed, N, replica)
    lat = model.lattice
    targets = gamma(lat.positions())
    eta0 = Configuration(lat, cfg.model.velocities,
                         sample_profile_state(targets, lat, cfg.model.velocities, rng))

    centers_cfg = sim.get("block_centers", "auto")
    if centers_cfg == "auto":
        lo, hi = block_radius + 1, N - 1 - block_radius
        centers = sorted({min(max(c, lo), hi) for c in (N // 4, N // 2, (3 * N) // 4)}) \
            if hi >= lo else []
    else:
        centers = [int(c) for c in centers_cfg]

    log_path = None
    res = simulate(eta0, model, horizon, rng, sample_times=times, event_log=log_path)

    fields, blocks = [], []
    for t, eta in res.samples:
        meas = empirical_measure(eta, lat, cfg.model.velocities)
        sf = smooth(meas, eps, grid)
        fields.append((t, sf.values))
        for c in centers:
            coords = (c,) + (0,) * (cfg.model.d - 1)
            vec = block_average(eta, lat, cfg.model.velocities, coords, block_radius)
            blocks.append((t, c, vec))
    return {"fields": fields, "blocks": blocks, "n_events": res.n_events,
            "kind_counts": res.kind_counts, "grid_m1": grid_m1}


def cmd_simulate(cfg: ExperimentConfig, args) -> list:
    out = _out_dir(cfg, args)
    outputs = []
    cells = [(N, r) for N in cfg.model.n_values for r in range(cfg.model.replicas)]
    results = _map_cells(_sim_replica, cfg, cells, args.threads)
    grid_m1 = int(cfg.simulate.get("grid_m1", 65))
    grid = build_grid(cfg, grid_m1, cfg.hydro.get("mt"))
    nodes = grid.nodes().reshape(-1, cfg.model.d)
    ncomp = cfg.model.d + 1
    for (N, r), res in zip(cells, results):
        fpath = os.path.join(out, f"sim_N{N}_r{r}_fields.csv")
        fh, writer = _csv_writer(
            fpath,
            ["t"] + [f"u{i+1}" for i in range(cfg.model.d)]
            + [f"comp{k}" for k in range(ncomp)],
            cfg, "macroscopic time / densities per unit volume")
        with fh:
            for t, values in res["fields"]:
                flat = values.reshape(-1, ncomp)
                for x, row in zip(nodes, flat):
                    writer.writerow([f"{t:.10g}"] + [f"{c:.10g}" for c in x]
                                    + [f"{y:.12g}" for y in row])
        bpath = os.path.join(out, f"sim_N{N}_r{r}_blocks.csv")
        fh, writer = _csv_writer(
            bpath, ["t", "x1"] + [f"comp{k}" for k in range(ncomp)],
            cfg, "macroscopic time / per-site conserved quantities")
        with fh:
            for t, c, vec in res["blocks"]:
                writer.writerow([f"{t:.10g}", c] + [f"{y:.12g}" for y in vec])
        outputs += [fpath, bpath]
    return outputs


def _map_cells(fn, cfg: ExperimentConfig, cells, threads: int):
    if threads <= 1 or len(cells) <= 1:
        return [fn(cfg.raw, *cell) for cell in cells]
    with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, cfg.raw, *cell) for cell in cells]
        return [f.result() for f in futures]


# --- hydro ----------------------------------------------------------------------

def _hydro_solve(cfg: ExperimentConfig, m1: int, n_frames=None):
    hyd = cfg.hydro
    horizon = float(hyd.get("horizon", 0.5))
    grid = build_grid(cfg, m1, hyd.get("mt"))
    profiles = build_profiles(cfg)
    boundary = BoundaryData.from_profiles(profiles, cfg.model.velocities, grid)
    gamma = build_gamma(cfg, grid, boundary)
    dt = hyd.get("dt")
    frames = n_frames if n_frames is not None else int(hyd.get("n_frames", 256))
    traj = solve_hydro(gamma, boundary, horizon, grid, cfg.model.velocities,
                       dt=None if dt is None else float(dt), n_frames=frames)
    return traj


def cmd_hydro(cfg: ExperimentConfig, args) -> list:
    out = _out_dir(cfg, args)
    m1 = int(cfg.hydro.get("m1", 129))
    traj = _hydro_solve(cfg, m1)
    npz = os.path.join(out, "hydro_traj.npz")
    traj.save(npz)
    csv_path = os.path.join(out, "hydro_fields.csv")
    traj.to_csv(csv_path, header_comment=f"config_hash={cfg.config_hash}")
    outputs = [npz, csv_path]
    if cfg.hydro.get("refine", False):
        fine_m1 = 2 * (m1 - 1) + 1
        fine = _hydro_solve(cfg, fine_m1)
        coarse_end = traj.values[-1]
        fine_end = fine.values[-1][::2]
        ncomp = cfg.model.d + 1
        table = os.path.join(out, "hydro_convergence.csv")
        fh, writer = _csv_writer(table, ["component", "l1_error", "linf_error"],
                                 cfg, f"coarse m1={m1} vs fine m1={fine_m1} at T")
        with fh:
            l1 = l1_distance(traj.grid, coarse_end, fine_end)
            for k in range(ncomp):
                linf = float(np.max(np.abs(coarse_end[..., k] - fine_end[..., k])))
                writer.writerow([k, f"{l1[k]:.6e}", f"{linf:.6e}"])
        outputs.append(table)
    return outputs


# --- converge -------------------------------------------------------------------

def _conv_replica(raw_config: dict, N: int, replica: int):
    cfg = parse_config(raw_config)
    conv = cfg.converge
    t_cmp = float(conv.get("t_compare", 0.25))
    eps = float(conv.get("eps", 0.1))
    grid_m1 = int(conv.get("grid_m1", 65))

    model = build_model(cfg, N)
    grid = build_grid(cfg, grid_m1, cfg.hydro.get("mt"))
    boundary = BoundaryData.from_profiles(model.profiles, cfg.model.velocities, grid)
    gamma = build_gamma(cfg, grid, boundary)
    rng = replica_rng(cfg.model.seed, N, replica)
    lat = model.lattice
    eta0 = Configuration(lat, cfg.model.velocities,
                         sample_profile_state(gamma(lat.positions()), lat,
                                              cfg.model.velocities, rng))
    res = simulate(eta0, model, t_cmp, rng, sample_times=[t_cmp])
    _, eta = res.samples[0]
    meas = empirical_measure(eta, lat, cfg.model.velocities)
    return smooth(meas, eps, grid).values


def cmd_converge(cfg: ExperimentConfig, args) -> list:
    if len(cfg.model.n_values) < 2:
        raise ConfigError("converge needs model.N to list at least two sizes")
    out = _out_dir(cfg, args)
    conv = cfg.converge
    t_cmp = float(conv.get("t_compare", 0.25))
    grid_m1 = int(conv.get("grid_m1", 65))
    ref_m1 = int(conv.get("reference_m1", 2 * (grid_m1 - 1) + 1))
    if (ref_m1 - 1) % (grid_m1 - 1) != 0:
        raise ConfigError("converge.reference_m1 - 1 must be a multiple of grid_m1 - 1")
    stride = (ref_m1 - 1) // (grid_m1 - 1)

    ref_grid = build_grid(cfg, ref_m1, cfg.hydro.get("mt"))
    profiles = build_profiles(cfg)
    boundary = BoundaryData.from_profiles(profiles, cfg.model.velocities, ref_grid)
    gamma = build_gamma(cfg, ref_grid, boundary)
    ref = solve_hydro(gamma, boundary, t_cmp, ref_grid, cfg.model.velocities,
                      n_frames=int(conv.get("n_frames", 64)))
    pde_cmp = ref.values[-1][::stride]
    cmp_grid = build_grid(cfg, grid_m1, cfg.hydro.get("mt"))

    cells = [(N, r) for N in cfg.model.n_values for r in range(cfg.model.replicas)]
    results = _map_cells(_conv_replica, cfg, cells, args.threads)
    ncomp = cfg.model.d + 1
    per_replica = {}
    for (N, r), values in zip(cells, results):
        per_replica.setdefault(N, []).append(l1_distance(cmp_grid, values, pde_cmp))

    table = os.path.join(out, "converge.csv")
    fh, writer = _csv_writer(
        table, ["N", "component", "l1_mean", "l1_sem", "replicas"],
        cfg, f"L1 distance smoothed empirical vs PDE at t={t_cmp}")
    with fh:
        for N in cfg.model.n_values:
            errs = np.array(per_replica[N])
            mean = errs.mean(axis=0)
            sem = (errs.std(axis=0, ddof=1) / np.sqrt(len(errs))
                   if len(errs) > 1 else np.zeros(ncomp))
            for k in range(ncomp):
                writer.writerow([N, k, f"{mean[k]:.6e}", f"{sem[k]:.6e}", len(errs)])
    return [table]


# --- rate -----------------------------------------------------------------------

def cmd_rate(cfg: ExperimentConfig, args) -> list:
    out = _out_dir(cfg, args)
    m1 = int(cfg.hydro.get("m1", 129))
    horizon = float(cfg.hydro.get("horizon", 0.5))
    traj = _hydro_solve(cfg, m1)
    basis = build_basis(cfg, horizon)
    sizes = cfg.ldp.get("basis_sizes", [8, 16, len(basis)])
    sizes = sorted({int(s) for s in sizes if 1 <= int(s) <= len(basis)})

    sweep_path = os.path.join(out, "rate_sweep.csv")
    fh, writer = _csv_writer(sweep_path, ["basis_size", "estimate"],
                             cfg, "cost estimate of the uncontrolled solution")
    reports = {}
    with fh:
        for m in sizes:
            rep = rate_estimate(traj, traj.gamma, basis.subset(m),
                                cfg.model.velocities)
            reports[m] = rep
            writer.writerow([m, f"{rep.estimate:.6e}"])
    report_path = os.path.join(out, "rate_report.txt")
    reports[sizes[-1]].save(report_path)
    outputs = [sweep_path, report_path]

    control = build_control(cfg, horizon)
    if control is not None:
        grid = traj.grid
        profiles = build_profiles(cfg)
        boundary = BoundaryData.from_profiles(profiles, cfg.model.velocities, grid)
        gamma = build_gamma(cfg, grid, boundary)
        rep6 = verify_f06(gamma, boundary, control, grid, cfg.model.velocities,
                          horizon, basis, n_frames=int(cfg.hydro.get("n_frames", 256)))
        f06_path = os.path.join(out, "f06_report.txt")
        with open(f06_path, "w") as fh:
            fh.write("format: latgas-f06-report v1\n")
            fh.write(f"config_hash: {cfg.config_hash}\n")
            fh.write(f"lhs_cost_estimate: {rep6.lhs:.12e}\n")
            fh.write(f"rhs_quarter_control_norm: {rep6.rhs:.12e}\n")
            fh.write(f"relative_gap: {rep6.rel_gap:.6e}\n")
            fh.write(f"basis_size: {rep6.rate.basis_size}\n")
        outputs.append(f06_path)
    return outputs


# --- exact ----------------------------------------------------------------------

def cmd_exact(cfg: ExperimentConfig, args) -> list:
    out = _out_dir(cfg, args)
    exact = cfg.exact
    n = int(exact.get("N", 3))
    periodic = bool(exact.get("periodic", False))
    parts = tuple(exact.get("parts", ["boundary", "collision", "exclusion"]))
    lam = np.array(exact.get("lambda", [0.0] * (cfg.model.d + 1)), dtype=float)
    if len(lam) != cfg.model.d + 1:
        raise ConfigError(f"exact.lambda needs {cfg.model.d + 1} entries")

    lat = Lattice(n, cfg.model.d, periodic=periodic)
    profiles = None if periodic or "boundary" not in parts else build_profiles(cfg)
    model = Model(lat, cfg.model.velocities, profiles=profiles)
    gen = assemble_exact_generator(model, parts=parts)

    row_max = float(np.max(np.abs(gen.row_sums()))) if gen.n_states else 0.0
    inv_res = gen.invariance_residual(lam)
    audit = assemble_exact_generator(model, parts=("collision",)) \
        .detailed_balance_audit(lam)

    path = os.path.join(out, "exact_report.txt")
    with open(path, "w") as fh:
        fh.write("format: latgas-exact-report v1\n")
        fh.write(f"config_hash: {cfg.config_hash}\n")
        fh.write(f"N: {n}\nperiodic: {periodic}\nparts: {' '.join(parts)}\n")
        fh.write(f"n_states: {gen.n_states}\n")
        fh.write(f"max_abs_row_sum: {row_max:.3e}\n")
        fh.write(f"invariance_residual: {inv_res:.6e}\n")
        fh.write(f"collision_transitions: {audit['n_transitions']}\n")
        fh.write(f"collision_detailed_balance_worst: {audit['worst_imbalance']:.3e}\n")
        fh.write(f"collision_all_reversible: {audit['all_reversible']}\n")
    return [path]


# --- entry point -----------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "hydro": cmd_hydro,
    "converge": cmd_converge,
    "rate": cmd_rate,
    "exact": cmd_exact,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latgas",
        description="Boundary-driven lattice gas with velocities: "
                    "simulate, solve, and evaluate trajectory costs.",
    )
    parser.add_argument("--version", action="version", version=f"latgas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override model.seed")
        p.add_argument("--out", default=None, help="override output.directory")
        p.add_argument("--replicas", type=int, default=None,
                       help="override model.replicas")
        p.add_argument("--threads", type=int, default=1,
                       help="replica worker processes")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.raw["model"]["seed"] = int(args.seed)
            cfg = parse_config(cfg.raw)
        if args.replicas is not None:
            cfg.raw["model"]["replicas"] = int(args.replicas)
            cfg = parse_config(cfg.raw)
        outputs = COMMANDS[args.command](cfg, args)
        out = _out_dir(cfg, args)
        manifest = os.path.join(out, f"manifest_{args.command}.txt")
        seeds = [cfg.model.seed]
        write_manifest(manifest, args.command, cfg, seeds, outputs,
                       time.perf_counter() - started)
        print(f"[latgas] {args.command}: wrote {len(outputs)} file(s) to {out}")
        return 0
    except ConfigError as exc:
        print(f"[latgas] config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, LatgasError) as exc:
        print(f"[latgas] numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
