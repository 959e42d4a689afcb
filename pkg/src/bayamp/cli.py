"""Config-driven experiment front-end.

Each subcommand reads one JSON config, runs deterministically under the
recorded seed, and writes a CSV of curve data plus a JSON of scalars and
metadata (the config with all defaults filled in is echoed back).  The
report path also renders a PNG figure next to the delimited output unless
--no-figures is given.  Re-running a config reproduces the CSV bytes;
wallclock timings live in the JSON only, for that reason.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import codes, figures, operators, potential, state_evolution as se
from .amp import AmpConfig, run_amp, run_complex_amp, run_iterative_thresholding
from .learning import LearnSchedule, run_amp_em
from .priors import ComplexBernoulliGauss, SectionPrior, bigaussian_prior


class ConfigError(ValueError):
    pass


def _require(cfg, key, typ=None):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    val = cfg[key]
    if typ is not None and not isinstance(val, typ):
        raise ConfigError(f"config key {key!r} must be {typ}")
    return val


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) and not np.isfinite(v):
        return "nan"
    return f"{v:.12g}"


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(k)) for k in fieldnames])


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def _ensemble_from_cfg(cfg, alpha):
    return operators.CouplingEnsemble(
        L_c=int(cfg.get("L_c", 1)), L_r=int(cfg.get("L_r", 1)),
        w=int(cfg.get("w", 0)), J=float(cfg.get("sqrt_J", 1.0)) ** 2,
        alpha=alpha, beta_seed=float(cfg.get("beta_seed", 1.0)))


def _build_problem(cfg, seed):
    """Instance (op, y, prior, truth, delta) from an amp config block."""
    kind = _require(cfg, "kind", str)
    N = int(_require(cfg, "N"))
    op_cfg = cfg.get("operator", "dense")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 17)))
    if kind == "gauss_bernoulli":
        rho = float(_require(cfg, "rho"))
        eps = float(cfg.get("eps", 0.0))
        alpha = float(_require(cfg, "alpha"))
        prior = bigaussian_prior(rho, 1.0, eps)
        truth = prior.sample(N, rng)
        B = 1
    elif kind == "sections":
        B = int(_require(cfg, "B"))
        R = float(_require(cfg, "R"))
        alpha = se.rate_to_alpha(R, B)
        prior = SectionPrior(B)
        truth, _ = prior.sample(N // B, rng)
    elif kind == "complex_bernoulli_gauss":
        rho = float(_require(cfg, "rho"))
        alpha = float(_require(cfg, "alpha"))
        prior = ComplexBernoulliGauss(rho, 0.0, float(cfg.get("sigma2", 1.0)))
        truth = prior.sample(N, rng)
        B = 1
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    M = int(round(alpha * N))
    if isinstance(op_cfg, dict):
        ens = _ensemble_from_cfg(op_cfg, alpha)
        block_kind = op_cfg.get("block_kind", "gaussian")
        op = operators.gen_spatially_coupled(ens, block_kind, seed, N, B=B)
    elif op_cfg == "dense":
        op = operators.gen_iid_gaussian(M, N, 1.0 / (N / B), seed)
    elif op_cfg in ("hadamard", "fourier"):
        ens = operators.homogeneous_ensemble(alpha)
        op = operators.gen_spatially_coupled(ens, op_cfg, seed, N, B=B)
    else:
        raise ConfigError(f"unknown operator spec {op_cfg!r}")
    codeword = op.forward(truth)
    snr = cfg.get("snr")
    if snr:
        y, delta = codes.awgn(codeword, float(snr),
                              np.random.SeedSequence(entropy=(seed, 23)))
    else:
        y, delta = codeword, 0.0
    return op, y, prior, truth, delta


def cmd_amp(config, out, jobs, render):
    problem = _require(config, "problem", dict)
    solver = config.get("solver", {})
    seed = int(config.get("seed", 0))
    op, y, prior, truth, delta = _build_problem(problem, seed)
    amp_cfg = AmpConfig(damping=float(solver.get("damping", 0.0)),
                        tol=float(solver.get("tol", 1e-8)),
                        t_max=int(solver.get("t_max", 3000)),
                        delta=float(solver.get("delta", delta)))
    variant = solver.get("variant", "amp")
    schedule_cfg = solver.get("learn", None)
    t0 = time.perf_counter()
    learned = None
    if schedule_cfg:
        schedule = LearnSchedule(**schedule_cfg)
        result, learned = run_amp_em(op, y, prior, amp_cfg, schedule, truth=truth)
    elif variant == "amp":
        result = run_amp(op, y, prior, amp_cfg, truth=truth)
    elif variant == "full_tap":
        result = run_amp(op, y, prior, amp_cfg, truth=truth, full_tap=True)
    elif variant == "mean_field":
        result = run_iterative_thresholding(op, y, prior, amp_cfg, truth=truth)
    elif variant == "complex":
        result = run_complex_amp(op, y, prior, amp_cfg, truth=truth)
    else:
        raise ConfigError(f"unknown solver variant {variant!r}")
    wall = time.perf_counter() - t0
    tr = result.trace
    fields = ["t", "delta"] + (["mse"] if "mse" in tr else []) \
        + (["ser"] if "ser" in tr else [])
    rows = [{k: tr[k][i] for k in fields} for i in range(len(tr["t"]))]
    _write_csv(out / "trace.csv", fields, rows)
    payload = {"config": config, "seed": seed, "iterations": result.iterations,
               "converged": bool(result.converged), "diverged": bool(result.diverged),
               "final_mse": (float(tr["mse"][-1]) if "mse" in tr else None),
               "final_ser": (float(tr["ser"][-1]) if "ser" in tr else None),
               "free_energy": result.free_energy, "wallclock": wall}
    if learned is not None:
        payload["learned"] = {"delta": learned["delta"]}
    _write_json(out / "result.json", payload)
    if render:
        figures.render_trace(rows, out / "trace.png", title="AMP trace")
    return 0


def cmd_se(config, out, jobs, render):
    kind = _require(config, "kind", str)
    seed = int(config.get("seed", 0))
    cfg = se.SeConfig(mc_samples=int(config.get("mc_samples", 1_000_000)),
                      seed=seed, t_max=int(config.get("t_max", 200)),
                      tol=float(config.get("tol", 1e-10)))
    snr = float(config["snr"]) if config.get("snr") else np.inf
    if kind == "bigaussian":
        rho, eps = float(_require(config, "rho")), float(config.get("eps", 0.0))
        alpha = float(_require(config, "alpha"))
        res = se.se_trajectory_bigaussian(rho, eps, alpha, snr,
                                          E0=config.get("E0"), cfg=cfg)
    elif kind == "sections":
        res = se.se_trajectory_sections(int(_require(config, "B")),
                                        float(_require(config, "R")), snr,
                                        E0=config.get("E0"), cfg=cfg)
    elif kind == "coupled_bigaussian":
        rho, eps = float(_require(config, "rho")), float(config.get("eps", 0.0))
        ens = _ensemble_from_cfg(_require(config, "ensemble", dict),
                                 float(_require(config, "alpha")))
        variances = operators.build_coupling_variances(ens)
        rates = ens.row_rates()
        E0 = np.full(ens.L_c, se.initial_mse_bigaussian(rho, eps))

        def step(E, rng):
            return se.se_step_coupled_bigaussian(E, variances, rates, rho, eps, snr)

        res = se.se_run(step, E0, cfg)
    else:
        raise ConfigError(f"unknown SE kind {kind!r}")
    rows = []
    for entry in res.trajectory:
        row = {"t": entry["t"]}
        E = np.atleast_1d(entry["E"])
        if E.size == 1:
            row["E"] = float(E[0])
        else:
            for c, val in enumerate(E):
                row[f"E_{c}"] = float(val)
        for k in ("ser", "se"):
            if k in entry:
                row[k] = float(np.max(np.atleast_1d(entry[k])))
        rows.append(row)
    fields = list(rows[-1].keys())
    _write_csv(out / "trajectory.csv", fields, rows)
    _write_json(out / "result.json", {
        "config": config, "seed": seed, "iterations": res.iterations,
        "converged": bool(res.converged),
        "fixed_point": np.atleast_1d(res.E).tolist()})
    if render:
        figures.render_se(rows, out / "trajectory.png", title=f"state evolution ({kind})")
    return 0


def cmd_potential(config, out, jobs, render):
    family = _require(config, "family", str)
    seed = int(config.get("seed", 0))
    snr = float(config["snr"]) if config.get("snr") else np.inf
    n_grid = int(config.get("n_grid", 400))
    if family == "bigaussian":
        rho, eps = float(_require(config, "rho")), float(config.get("eps", 0.0))
        alpha = float(_require(config, "alpha"))
        E0 = se.initial_mse_bigaussian(rho, eps)
        grid = potential.log_grid(max(1e-9, 1e-2 * eps), 2 * E0, n_grid)
        phi = potential.phi_bigaussian(grid, rho, eps, alpha)
        curve = potential._bigaussian_curve(rho, eps, alpha, 0.0, 1.0, grid)
    elif family == "sections":
        B, R = int(_require(config, "B")), float(_require(config, "R"))
        cfg = se.SeConfig(mc_samples=int(config.get("mc_samples", 200_000)), seed=seed)
        E0 = (B - 1) / B**2
        grid = potential.log_grid(1e-9, 2 * E0, n_grid)
        phi = potential.phi_sections(grid, B, R, snr, cfg)
        curve = potential.build_potential_curve(
            lambda E: potential.phi_sections(E, B, R, snr, cfg), grid, refine=False)
    elif family == "large_b":
        R = float(_require(config, "R"))
        grid = np.linspace(1e-4, 1.5, n_grid)
        phi, _ = potential.phi_large_B(grid, R, snr)
        curve = potential.build_potential_curve(
            lambda E: potential.phi_large_B(E, R, snr)[0], grid, refine=False)
    else:
        raise ConfigError(f"unknown potential family {family!r}")
    rows = [{"E": float(e), "phi": float(p)} for e, p in zip(grid, phi)]
    _write_csv(out / "potential.csv", ["E", "phi"], rows)
    _write_json(out / "result.json", {
        "config": config, "seed": seed,
        "maxima": [[float(e), float(p)] for e, p in curve.maxima],
        "classification": curve.classification})
    if render:
        figures.render_potential(rows, out / "potential.png", curve.maxima,
                                 title=f"free entropy ({family})")
    return 0


def _transitions_point(args):
    family, x, kw = args
    if family == "bigaussian_rho":
        ts = potential.transitions_bigaussian(rho=x, **kw)
    elif family == "bigaussian_eps":
        ts = potential.transitions_bigaussian(eps=x, **kw)
    else:
        ts = potential.transitions_sections(B=int(x), **kw)
    return {"x": x, "bp": ts.bp, "opt": ts.opt, "static": ts.static}


def cmd_phase_diagram(config, out, jobs, render):
    family = _require(config, "family", str)
    grid = [float(v) for v in _require(config, "grid", list)]
    kw = dict(config.get("params", {}))
    tasks = [(family, x, kw) for x in grid]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_transitions_point, tasks))
    else:
        results = [_transitions_point(t) for t in tasks]
    results.sort(key=lambda r: r["x"])
    x_key = {"bigaussian_rho": "rho", "bigaussian_eps": "eps"}.get(family, "B")
    rows = [{x_key: r["x"], "bp": r["bp"], "opt": r["opt"], "static": r["static"]}
            for r in results]
    _write_csv(out / "phase_diagram.csv", [x_key, "bp", "opt", "static"], rows)
    _write_json(out / "result.json", {"config": config, "rows": rows})
    if render:
        figures.render_phase_diagram(rows, out / "phase_diagram.png", x_key,
                                     title=f"phase diagram ({family})")
    return 0


def _codes_trial(args):
    spec_kw, kind, ens_cfg, seed, solver = args
    spec = codes.CodeSpec(**spec_kw)
    ens = None
    if ens_cfg:
        ens = _ensemble_from_cfg(ens_cfg, spec.alpha)
    cfg = AmpConfig(damping=float(solver.get("damping", 0.0)),
                    tol=float(solver.get("tol", 1e-8)),
                    t_max=int(solver.get("t_max", 3000)),
                    delta=1.0 / spec.snr)
    rec = codes.transmit_and_decode(spec, kind, seed, ensemble=ens, config=cfg)
    rec.pop("result")
    return rec


def cmd_codes(config, out, jobs, render):
    B = int(_require(config, "B"))
    L = int(_require(config, "L"))
    snr = float(_require(config, "snr"))
    rates = [float(r) for r in _require(config, "rates", list)]
    n_seeds = int(config.get("n_seeds", 10))
    kind = config.get("operator", "hadamard")
    ens_cfg = config.get("ensemble")
    solver = config.get("solver", {})
    base_seed = int(config.get("seed", 0))
    powers = config.get("power_allocation")
    tasks = []
    for ri, R in enumerate(rates):
        spec_kw = {"L": L, "B": B, "R": R, "snr": snr}
        if powers == "exponential":
            spec_kw["group_powers"] = codes.exponential_power_allocation(
                int(config.get("groups", 8)), snr)
        for s in range(n_seeds):
            tasks.append((spec_kw, kind, ens_cfg, base_seed + 1000 * ri + s, solver))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            recs = list(ex.map(_codes_trial, tasks))
    else:
        recs = [_codes_trial(t) for t in tasks]
    recs.sort(key=lambda r: (r["R"], r["seed"]))
    fields = ["R", "seed", "ser", "iterations", "converged", "exact"]
    _write_csv(out / "benchmark.csv", fields, recs)
    agg = {}
    for R in rates:
        sel = [r for r in recs if r["R"] == R]
        agg[f"{R:g}"] = {
            "mean_ser": float(np.mean([r["ser"] for r in sel])),
            "block_error_rate": float(np.mean([r["ser"] > 0 for r in sel])),
            "mean_wallclock": float(np.mean([r["wallclock"] for r in sel]))}
    _write_json(out / "result.json", {"config": config, "aggregate": agg})
    if render:
        figures.render_codes(recs, out / "benchmark.png", title="SER vs rate")
    return 0


def _robust_trial(args):
    spec_kw, seed, t_max = args
    spec = codes.RobustEcSpec(spec_kw["N"], spec_kw["gamma"],
                              codes.GrossErrorChannel(spec_kw["rho"], spec_kw["eps"]))
    t0 = time.perf_counter()
    _, rho_hat, info = codes.robust_ec_roundtrip(
        spec, seed, AmpConfig(delta=0.0, t_max=t_max))
    return {"gamma": spec_kw["gamma"], "seed": seed, "rho_ideal_hat": rho_hat,
            "iterations": info["iterations"], "wallclock": time.perf_counter() - t0}


def cmd_robust_ec(config, out, jobs, render):
    N = int(_require(config, "N"))
    gammas = [float(g) for g in _require(config, "gammas", list)]
    rho = float(_require(config, "rho"))
    eps = float(config.get("eps", 0.0))
    n_seeds = int(config.get("n_seeds", 50))
    t_max = int(config.get("t_max", 1000))
    base_seed = int(config.get("seed", 0))
    tasks = [({"N": N, "gamma": g, "rho": rho, "eps": eps}, base_seed + 1000 * gi + s, t_max)
             for gi, g in enumerate(gammas) for s in range(n_seeds)]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            recs = list(ex.map(_robust_trial, tasks))
    else:
        recs = [_robust_trial(t) for t in tasks]
    recs.sort(key=lambda r: (r["gamma"], r["seed"]))
    fields = ["gamma", "seed", "rho_ideal_hat", "iterations"]
    _write_csv(out / "benchmark.csv", fields, recs)
    agg = {f"{g:g}": {
        "mean_rho_ideal": float(np.mean([r["rho_ideal_hat"] for r in recs if r["gamma"] == g])),
        "success_rate": float(np.mean([r["rho_ideal_hat"] < 1.5 for r in recs if r["gamma"] == g])),
        "mean_wallclock": float(np.mean([r["wallclock"] for r in recs if r["gamma"] == g]))}
        for g in gammas}
    _write_json(out / "result.json", {"config": config, "aggregate": agg})
    if render:
        figures.render_hist([r["rho_ideal_hat"] for r in recs],
                            out / "benchmark.png", xlabel="rho_ideal_hat",
                            title="robust EC noise-robustness ratio")
    return 0


_COMMANDS = {
    "amp": cmd_amp,
    "se": cmd_se,
    "potential": cmd_potential,
    "phase-diagram": cmd_phase_diagram,
    "codes": cmd_codes,
    "robust-ec": cmd_robust_ec,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bayamp",
        description="AMP solvers, state evolution, potentials and coding benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--no-figures", action="store_true")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        if args.seed is not None:
            config["seed"] = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, out, max(1, args.jobs),
                                       render=not args.no_figures)
    except (ConfigError, json.JSONDecodeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
