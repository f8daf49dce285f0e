"""Batch front-end: scenario files in, CSV files and a JSON manifest out.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical
failure (partial outputs are kept with a .partial suffix).  CSV bodies are
deterministic (floats at 17 significant digits, no timestamps); wall time
and versions live in the manifest.
"""

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bath import BathSpec
from .scenario import (
    ScenarioError,
    get_bool,
    get_float,
    get_grid,
    get_int,
    get_list,
    load_scenario,
)
from .system import (
    SINGLET,
    SystemModel,
    purity,
    renormalized_spectrum,
    singlet_fidelity,
)


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# output helpers


def format_float(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path: Path, header_comments, columns, rows):
    """Write a CSV with '#' comments, a named header row and 17-digit floats."""
    lines = []
    for comment in header_comments:
        lines.append(f"# {comment}")
    lines.append(",".join(columns))
    for row in rows:
        cells = []
        for value in row:
            if isinstance(value, str):
                cells.append(value)
            elif isinstance(value, (bool, np.bool_)):
                cells.append("true" if value else "false")
            elif value is None:
                cells.append("nan")
            else:
                cells.append(format_float(value))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _comment_block(name, flat):
    comments = [f"ftes {__version__}", f"job: {name}"]
    for key in sorted(flat):
        comments.append(f"{key} = {flat[key]}")
    return comments


def model_from(flat) -> SystemModel:
    bath = BathSpec(
        alpha=get_float(flat, "model.alpha"),
        omega_c=get_float(flat, "model.omega_c", 10.0),
        s=get_float(flat, "model.s", 1.0),
    )
    return SystemModel(
        bath=bath,
        delta=get_float(flat, "model.delta", 1.0),
        xi=get_float(flat, "model.xi", 0.0),
        eta=get_float(flat, "model.eta", 0.0),
        zeta=get_float(flat, "model.zeta", 0.0),
        with_counterterm=get_bool(flat, "model.counterterm", True),
    )


def _times(flat):
    t_max = get_float(flat, "numerics.t_max", 100.0)
    nt = get_int(flat, "numerics.nt", 401)
    scale = get_float(flat, "numerics.t_scale", 1.0)
    return np.linspace(0.0, t_max, nt) * scale


def _tcl4_options(flat):
    opts = {}
    if "numerics.tcl4_n0" in flat:
        opts["n0"] = get_int(flat, "numerics.tcl4_n0")
    if "numerics.tcl4_dt" in flat:
        opts["dt"] = get_float(flat, "numerics.tcl4_dt")
    if get_bool(flat, "numerics.tcl4_full", False):
        opts["full_accuracy"] = True
    return opts


def _tempo_config(flat, t_max):
    from .tempo import TempoConfig

    return TempoConfig(
        t_max=t_max,
        tau_s=get_float(flat, "numerics.tempo_tau", 0.02),
        k_max=get_int(flat, "numerics.tempo_kmax", 50),
        eps_svd=get_float(flat, "numerics.tempo_eps", 1e-6),
        chi_max=get_int(flat, "numerics.tempo_chi", 96),
    )


# ---------------------------------------------------------------------------
# subcommand implementations: each returns (columns, rows, manifest_extras)


def run_levels(flat, jobs=1):
    variant = flat.get("method.variant", "full")
    grid = get_grid(flat, "sweep.alpha", None) if "sweep.alpha" in flat else None
    if grid is None:
        grid = np.array([get_float(flat, "model.alpha")])
    model0 = model_from(flat)
    columns = [
        "alpha",
        "alpha_over_xi",
        "E1",
        "E2",
        "E3",
        "E4",
        "singlet_fidelity",
        "singlet_index",
    ]
    rows = []
    for alpha in grid:
        model = model0.with_(alpha=float(alpha))
        spec = renormalized_spectrum(model, variant)
        xi = model.xi if model.xi != 0 else np.nan
        rows.append(
            [alpha, alpha / xi]
            + list(spec["energies"])
            + [spec["singlet_fidelity"], float(spec["singlet_index"])]
        )
    return columns, rows, {"variant": variant, "points": len(rows)}


def _decay_one(args):
    flat, method, eta = args
    from .analysis import decay_scan

    model = model_from(flat)
    times = _times(flat)
    tempo_cfg = None
    if method == "tempo":
        tempo_cfg = _tempo_config(flat, float(times.max()))
    _, curves = decay_scan(
        model,
        [eta],
        method=method,
        times=times,
        tcl4_options=_tcl4_options(flat),
        tempo_config=tempo_cfg,
    )
    return curves[float(eta)]


def run_decay(flat, jobs=1):
    methods = get_list(flat, "method.methods", ["game"])
    etas = get_grid(flat, "sweep.eta", [get_float(flat, "model.eta", 0.0)])
    times = _times(flat)
    out = {}
    tasks = [(flat, method, float(eta)) for method in methods for eta in etas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_decay_one, tasks))
    else:
        results = [_decay_one(t) for t in tasks]
    failed = []
    for (_task_flat, method, eta), curve in zip(tasks, results):
        if curve is None:
            failed.append((method, eta))
        out[(method, eta)] = curve
    if failed == [(m, e) for m in methods for e in etas]:
        raise NumericalFailure("all decay curves failed")
    tables = {}
    for method in methods:
        columns = ["time"] + [f"fidelity_eta_{format_float(e)}" for e in etas]
        rows = []
        for k, t in enumerate(times):
            row = [t]
            for eta in etas:
                curve = out[(method, float(eta))]
                row.append(np.nan if curve is None else curve[k])
            rows.append(row)
        tables[method] = (columns, rows)
    return tables, {"methods": methods, "failed": [list(map(str, f)) for f in failed]}


def run_asymptotic(flat, jobs=1):
    from .mastereq import asymptotic_state, game_generator

    etas = get_grid(flat, "sweep.eta")
    model0 = model_from(flat)
    columns = ["eta", "singlet_fidelity", "purity", "unique"]
    rows = []
    for eta in etas:
        model = model0.with_(eta=float(eta))
        ast = asymptotic_state(game_generator(model))
        rho = ast["rho_inf"]
        rows.append([eta, singlet_fidelity(rho), purity(rho), ast["unique"]])
    return columns, rows, {"points": len(rows)}


def run_ftes_search(flat, jobs=1):
    from .analysis import optimize_ftes

    model = model_from(flat)
    x0 = None
    if "numerics.seed_eta" in flat:
        x0 = (
            get_float(flat, "numerics.seed_eta"),
            get_float(flat, "numerics.seed_zeta", 0.0),
        )
    res = optimize_ftes(
        model, x0=x0, purity_target=get_float(flat, "numerics.purity_target", 1e-8)
    )
    columns = [
        "eta_star",
        "zeta_star",
        "purity",
        "singlet_fidelity",
        "gamma_r",
        "gamma_max",
        "converged",
        "jump_residual",
        "ft_index",
    ]
    rows = [
        [
            res.eta_star,
            res.zeta_star,
            res.purity,
            res.singlet_fidelity,
            res.gamma_r,
            res.gamma_max,
            res.converged,
            res.jump_residual,
            float(res.ft_index),
        ]
    ]
    manifest = {
        "converged": bool(res.converged),
        "purity": res.purity,
        "eta_star": res.eta_star,
        "zeta_star": res.zeta_star,
    }
    if not res.converged:
        raise NumericalFailure(f"FTES search did not converge: {res.message}")
    return columns, rows, manifest


def run_ftes_scan(flat, jobs=1):
    from .analysis import ftes_scan

    if "sweep.xi" in flat:
        sweep, grid = "xi", get_grid(flat, "sweep.xi")
    elif "sweep.alpha" in flat:
        sweep, grid = "alpha", get_grid(flat, "sweep.alpha")
    else:
        raise ScenarioError("ftes-scan needs sweep.xi or sweep.alpha")
    model = model_from(flat)
    results = ftes_scan(model, sweep, grid)
    columns = [
        sweep,
        "eta_star",
        "zeta_star",
        "purity",
        "singlet_fidelity",
        "gamma_r",
        "gamma_max",
        "converged",
    ]
    rows = []
    for value, res in zip(grid, results):
        rows.append(
            [
                value,
                res.eta_star,
                res.zeta_star,
                res.purity,
                res.singlet_fidelity,
                res.gamma_r,
                res.gamma_max,
                res.converged,
            ]
        )
    n_conv = sum(1 for r in results if r.converged)
    if n_conv == 0:
        raise NumericalFailure("no scan point converged")
    return columns, rows, {"converged_points": n_conv, "total_points": len(rows)}


def run_recovery(flat, jobs=1):
    from .analysis import parabolic_minimum
    from .mastereq import game_generator, redfield_generator, relaxation_rates

    etas = get_grid(flat, "sweep.eta")
    methods = get_list(flat, "method.methods", ["game", "redfield"])
    model0 = model_from(flat)
    columns = ["eta"] + [f"gamma_r_{m}" for m in methods] + [
        f"gamma_max_{m}" for m in methods
    ]
    gens = {"game": game_generator, "redfield": redfield_generator}
    rows = []
    curves = {m: [] for m in methods}
    for eta in etas:
        model = model0.with_(eta=float(eta))
        row = [eta]
        rates_all = {}
        for m in methods:
            if m == "tcl4":
                from .tcl4 import tcl4_generator

                sup = tcl4_generator(model, **_tcl4_options(flat))
            else:
                sup = gens[m](model)
            rates = relaxation_rates(sup)
            rates_all[m] = rates
            curves[m].append(rates["gamma_r"])
        row += [rates_all[m]["gamma_r"] for m in methods]
        row += [rates_all[m]["gamma_max"] for m in methods]
        rows.append(row)
    manifest = {}
    for m in methods:
        vals = np.array([v if v is not None else np.nan for v in curves[m]])
        if np.all(np.isfinite(vals)):
            xm, ym = parabolic_minimum(etas, vals)
            manifest[f"minimum_eta_{m}"] = xm
            manifest[f"minimum_gamma_r_{m}"] = ym
    return columns, rows, manifest


def run_coarse_grain(flat, jobs=1):
    from .analysis import coarse_grain_distance

    tc_grid = get_grid(flat, "sweep.tc")
    alphas = get_grid(flat, "numerics.coarse_alphas", [get_float(flat, "model.alpha")])
    model0 = model_from(flat)
    xi_ratio = model0.xi / model0.bath.alpha if model0.bath.alpha else 0.0
    columns = ["tc"] + [f"distance_alpha_{format_float(a)}" for a in alphas]
    data = []
    for alpha in alphas:
        model = model0.with_(alpha=float(alpha), xi=float(xi_ratio * alpha))
        data.append(coarse_grain_distance(model, tc_grid))
    rows = []
    for k, tc in enumerate(tc_grid):
        rows.append([tc] + [d[k] for d in data])
    return columns, rows, {"alphas": [float(a) for a in alphas]}


def run_tempo(flat, jobs=1):
    from .tempo import tempo_propagate

    model = model_from(flat)
    t_max = get_float(flat, "numerics.t_max", 10.0)
    cfg = _tempo_config(flat, t_max)
    rho0 = np.outer(SINGLET, SINGLET.conj())
    times, values, info = tempo_propagate(model, rho0, cfg, rho0)
    columns = ["time", "singlet_fidelity", "trace", "min_eigenvalue"]
    rows = [
        [times[k], values[k], info["trace"][k], info["min_eigenvalues"][k]]
        for k in range(len(times))
    ]
    manifest = {
        "max_bond": int(info["max_bond"]),
        "discarded_weight": info["discarded_weight"],
        "k_max": info["k_max"],
        "min_eigenvalue": float(info["min_eigenvalues"].min()),
    }
    return columns, rows, manifest


def run_fit(flat, jobs=1):
    from .analysis import decay_scan, fit_exponential_decay

    model = model_from(flat)
    times = _times(flat)
    method = get_list(flat, "method.methods", ["redfield"])[0]
    _, curves = decay_scan(model, [model.eta], method=method, times=times,
                           tcl4_options=_tcl4_options(flat))
    series = curves[model.eta]
    if series is None:
        raise NumericalFailure(f"{method} trace failed")
    window = (
        get_float(flat, "numerics.fit_lo", 0.7 * times.max()),
        get_float(flat, "numerics.fit_hi", times.max()),
    )
    fit = fit_exponential_decay(times, series, window)
    columns = ["time", "fidelity", "fit_exponential", "fit_linear"]
    rows = []
    for k, t in enumerate(times):
        exp_val = fit["offset"] + fit["amplitude"] * np.exp(-fit["gamma"] * t)
        lin_val = fit["linear_intercept"] + fit["linear_slope"] * t
        rows.append([t, series[k], exp_val, lin_val])
    manifest = {
        "gamma": fit["gamma"],
        "recovery_time": (1.0 / fit["gamma"]) if fit["gamma"] else None,
        "offset": fit["offset"],
        "residual_exp": fit["residual_exp"],
        "residual_lin": fit["residual_lin"],
        "ill_conditioned": fit["ill_conditioned"],
        "window": list(window),
    }
    return columns, rows, manifest


_SINGLE_TABLE = {
    "levels": run_levels,
    "asymptotic": run_asymptotic,
    "ftes-search": run_ftes_search,
    "ftes-scan": run_ftes_scan,
    "recovery": run_recovery,
    "coarse-grain": run_coarse_grain,
    "tempo": run_tempo,
    "fit": run_fit,
}


def run_job(name, flat, out_dir: Path, jobs: int):
    """Execute one job; returns (csv_paths, manifest_fragment)."""
    sub = flat["subcommand"]
    basename = flat.get("output.basename", "out")
    prefix = f"{basename}_{name}" if name != "main" else basename
    outputs = []
    if sub == "decay":
        tables, extras = run_decay(flat, jobs)
        for method, (columns, rows) in tables.items():
            path = out_dir / f"{prefix}_{method}.csv"
            write_csv(path, _comment_block(name, flat), columns, rows)
            outputs.append(path.name)
        return outputs, extras
    if sub not in _SINGLE_TABLE:
        raise ScenarioError(f"subcommand '{sub}' is not implemented")
    columns, rows, extras = _SINGLE_TABLE[sub](flat, jobs)
    path = out_dir / f"{prefix}.csv"
    write_csv(path, _comment_block(name, flat), columns, rows)
    outputs.append(path.name)
    return outputs, extras


def run_scenario(path, out_dir, overrides=(), jobs=1) -> dict:
    scenario = load_scenario(path, overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    manifest = {
        "scenario": str(path),
        "version": __version__,
        "jobs": {},
        "outputs": [],
    }
    failure = None
    for name, flat in scenario["jobs"].items():
        try:
            outputs, extras = run_job(name, flat, out_dir, jobs)
            manifest["jobs"][name] = {"outputs": outputs, **_jsonable(extras)}
            manifest["outputs"].extend(outputs)
        except (NumericalFailure, FloatingPointError) as exc:
            manifest["jobs"][name] = {"error": str(exc)}
            failure = exc
    manifest["wall_time_s"] = time.time() - t0
    manifest["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    basename = scenario["base"].get("output.basename", "out")
    suffix = "_manifest.json" if failure is None else "_manifest.partial.json"
    (out_dir / f"{basename}{suffix}").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if failure is not None:
        raise NumericalFailure(str(failure))
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return float(obj)
    return obj


def scenario_dir() -> Path:
    return Path(__file__).parent / "scenarios"


_CLI_SUBCOMMANDS = (
    "run",
    "levels",
    "decay",
    "asymptotic",
    "ftes-search",
    "ftes-scan",
    "recovery",
    "coarse-grain",
    "tempo",
    "fit",
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ftes",
        description="Two detuned qubits in a common bosonic bath: "
        "dynamics, asymptotics and fault-tolerant excited-state search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _CLI_SUBCOMMANDS:
        p = sub.add_parser(
            name,
            help="run a scenario file"
            if name == "run"
            else f"run a scenario as the {name} subcommand",
        )
        p.add_argument("--scenario", required=True, help="scenario file path or figNN")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker process cap")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a scenario key (repeatable; job.NAME.key targets one job)",
        )
        p.add_argument(
            "--method",
            action="append",
            default=[],
            help="method selection (repeatable); shorthand for method.methods",
        )
    sub.add_parser("list-scenarios", help="list shipped scenario files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-scenarios":
        for path in sorted(scenario_dir().glob("*.scenario")):
            print(path.stem)
        return 0
    path = Path(args.scenario)
    if not path.exists():
        shipped = scenario_dir() / f"{args.scenario}.scenario"
        if shipped.exists():
            path = shipped
        else:
            print(f"error: scenario '{args.scenario}' not found", file=sys.stderr)
            return 2
    overrides = list(args.override)
    if args.command != "run":
        overrides.append(f"subcommand={args.command}")
    if args.method:
        overrides.append("method.methods=" + ",".join(args.method))
    try:
        manifest = run_scenario(path, args.out, overrides, args.jobs)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"outputs": manifest["outputs"]}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
