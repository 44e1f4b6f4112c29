"""Command-line front end: ``statereduction {run,verify,sweep}``.

Exit status: 0 success, 2 bad config or arguments, 3 an invariant check
failed, 4 numerical failure, 1 any other package error. Failures print a JSON
error record on stderr (and to ``error.json`` in the output directory).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import tolerances
from .config import RunManifest, load_manifest, parse_override
from .errors import ConfigError, ContractViolation, NoReduction, NumericalError, StateReductionError
from .qstate import random_unitary, trace_distance
from .reduction import (covariance_deviation, expand_bilinear, fingerprint, reduce,
                        sample_indices, signal_occupancies, through_body_drift, unitary_end_state)
from .screens import build_screen
from .squid import (FluxGrid, SquidParams, analyze_double_well, build_hamiltonian, default_grid,
                    eigensolve, sweep, tunneling_run)
from .sterngerlach import SGConfig, build_sg_scenario, covariance_check, run_batch, run_superposition
from .verification import run_all

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class InvariantFailure(StateReductionError):
    def __init__(self, names: list[str]):
        super().__init__("invariant check(s) failed: " + ", ".join(names))
        self.names = names


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, complex to [re, im], non-finite floats to null."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(float(x.real)), _clean(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _check(value: float, limit: float) -> dict:
    return {"value": value, "limit": limit, "passed": bool(value < limit)}


def _report(manifest: RunManifest, results: dict, checks: dict, artifacts: list[str]) -> dict:
    return {
        "kind": manifest.kind,
        "seed": manifest.seed,
        "config": str(manifest.config_path) if manifest.config_path else None,
        "inputs": manifest.settings,
        "tolerances": tolerances.current().as_dict(),
        "checks": checks,
        "results": results,
        "artifacts": artifacts,
        "meta": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                 "version": _version()},
    }


# -- scenario runners ---------------------------------------------------------

def _run_screening(m: RunManifest, jobs: int):
    s = m.settings["screening"]
    rng = np.random.default_rng([m.seed, 0])
    c_thr, c_sw = s["c_thr"], s["c_sw"]
    if c_thr is None or c_sw is None:
        z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        c_thr, c_sw = z / np.linalg.norm(z)
    norm = abs(c_thr) ** 2 + abs(c_sw) ** 2
    if abs(norm - 1) > tolerances.current().weight_sum:
        raise ConfigError(f"|c_thr|^2 + |c_sw|^2 = {norm:.12g}, expected 1", key="screening.c_thr")
    stats = None if s["statistics"] == "none" else s["statistics"]
    seed = m.seed if s["coupling_seed"] is None else s["coupling_seed"]
    sc = build_screen(c_thr, c_sw, modes=s["modes"], statistics=stats, builder=s["builder"],
                      mix_body=s["mix_body"], seed=seed)
    exp = expand_bilinear(sc)
    end = unitary_end_state(sc)
    tol = tolerances.current()
    checks = {"resummation": _check(trace_distance(exp.resum(), end), tol.reconstruction)}
    results = {"amplitudes": {"c_thr": c_thr, "c_sw": c_sw}, "metadata": sc.metadata,
               "channels": [int(i) for i in sc.decomposition.sector_ids]}
    rows = []
    try:
        mix = reduce(sc, exp)
    except NoReduction as exc:
        results["reduced"] = False
        results["end_state"] = fingerprint(exc.end_state, sc.signal_projectors)
        return results, checks, {}
    blocks = np.array(signal_occupancies(end, sc.signal_projectors))
    v = random_unitary(sc.layout.factor_dims[0], np.random.SeedSequence([m.seed, 1]))
    checks["weight_sum"] = _check(abs(float(mix.weights.sum()) - 1), tol.weight_sum)
    checks["block_trace_weights"] = _check(float(np.max(np.abs(blocks - mix.weights))), tol.weight_sum)
    checks["covariance"] = _check(covariance_deviation(sc, v), tol.covariance)
    idx = sample_indices(mix, s["samples"], np.random.default_rng([m.seed, 2]))
    counts = np.bincount(idx, minlength=len(mix))
    results.update(
        reduced=True,
        weights=mix.weights,
        components=[dict(fingerprint(st, sc.signal_projectors), channel=int(lab))
                    for st, lab in zip(mix.states, mix.labels)],
        through_body_drift={str(k): v for k, v in through_body_drift(sc).items()},
        tally={"samples": s["samples"], "counts": counts, "frequencies": counts / s["samples"]},
    )
    for k, (w, c) in enumerate(zip(mix.weights, counts)):
        rows.append([int(mix.labels[k]), float(w), int(c)])
    return results, checks, {"weights.csv": (["channel", "weight", "count"], rows)}


def _sg_config(m: RunManifest) -> tuple[SGConfig, dict]:
    s = dict(m.settings["sterngerlach"])
    run = {k: s.pop(k) for k in ("c_plus", "c_minus", "n_trials")}
    s["statistics"] = None if s["statistics"] == "none" else s["statistics"]
    try:
        return SGConfig(seed=m.seed, **s), run
    except ValueError as exc:
        raise ConfigError(str(exc), key="sterngerlach") from exc


def _run_sterngerlach(m: RunManifest, jobs: int):
    cfg, run = _sg_config(m)
    c_plus, c_minus = run["c_plus"], run["c_minus"]
    norm = abs(c_plus) ** 2 + abs(c_minus) ** 2
    if abs(norm - 1) > tolerances.current().weight_sum:
        raise ConfigError(f"|c_plus|^2 + |c_minus|^2 = {norm:.12g}, expected 1",
                          key="sterngerlach.c_plus")
    tol = tolerances.current()
    results = {"composite_dim": cfg.composite_dim(), "packet_energy": cfg.packet_energy,
               "wiring": cfg.wiring(), "grain_choice": "seeded uniform per strip cell"}
    checks = {}
    try:
        exp, mix = run_superposition(cfg, c_plus, c_minus)
        scen = build_sg_scenario(cfg, c_plus, c_minus)
        results["weights"] = mix.weights
        results["components"] = [dict(fingerprint(st, scen.signal_projectors), spin="+-"[lab])
                                 for st, lab in zip(mix.states, mix.labels)]
        checks["weight_sum"] = _check(abs(float(mix.weights.sum()) - 1), tol.weight_sum)
        blocks = np.array(signal_occupancies(unitary_end_state(scen), scen.signal_projectors))
        checks["block_trace_weights"] = _check(float(np.max(np.abs(blocks - mix.weights))),
                                               tol.weight_sum)
        v = random_unitary(2, np.random.SeedSequence([m.seed, 1])).entries
        checks["covariance"] = _check(covariance_check(cfg, v, c_plus, c_minus), tol.covariance)
    except NoReduction:
        results["registered"] = False
    tally = run_batch(cfg, c_plus, c_minus, run["n_trials"], seed=m.seed, jobs=jobs)
    results["tally"] = tally.summary()
    results["registered"] = tally.registered
    if tally.registered:
        wiring_ok = bool(np.all(tally.strips == tally.spins))
        checks["strip_matches_spin"] = {"value": wiring_ok, "passed": wiring_ok}
    rows = [[i, m.seed, "+-"[j] if j >= 0 else "none", int(s), int(g)]
            for i, (j, s, g) in enumerate(zip(tally.spins, tally.strips, tally.grains))]
    return results, checks, {"trials.csv": (["trial", "seed", "j", "strip", "grain"], rows)}


def _squid_params(m: RunManifest) -> SquidParams:
    s = m.settings["squid"]
    try:
        if s["units"] == "si":
            return SquidParams.from_si(s["capacitance"], s["inductance"], s["critical_current"],
                                       s["phi_ext"])
        if s["beta"] is not None:
            return SquidParams.from_beta(s["beta"], s["phi_ext"], capacitance=s["capacitance"],
                                         inductance=s["inductance"])
        return SquidParams(capacitance=s["capacitance"], inductance=s["inductance"],
                           critical_current=s["critical_current"], phi_ext=s["phi_ext"])
    except ValueError as exc:
        raise ConfigError(str(exc), key="squid") from exc


def _squid_grid(m: RunManifest, params: SquidParams) -> FluxGrid:
    s = m.settings["squid"]
    if s["phi_min"] is None:
        return default_grid(params, s["n_points"])
    try:
        return FluxGrid(s["phi_min"], s["phi_max"], s["n_points"])
    except ValueError as exc:
        raise ConfigError(str(exc), key="squid.phi_min") from exc


def _sweep_rows(m: RunManifest, params: SquidParams, jobs: int):
    sw = m.settings["squid.sweep"]
    values = np.linspace(sw["start"], sw["stop"], sw["num"])
    rows = sweep(params, sw["variable"], values, n_points=m.settings["squid"]["n_points"],
                 half_width=sw["half_width"], jobs=jobs)
    header = [sw["variable"], "phi1", "phi2", "vbar", "E1", "E2", "splitting"]
    if sw["variable"] != "beta":
        header.append("beta")
    table = [[r[h] for h in header] for r in rows]
    best = min(rows, key=lambda r: r["splitting"])
    return header, table, {"variable": sw["variable"], "points": len(rows),
                           "min_splitting_at": best[sw["variable"]],
                           "min_splitting": best["splitting"]}


def _run_squid_spectrum(m: RunManifest, jobs: int):
    params = _squid_params(m)
    grid = _squid_grid(m, params)
    levels = m.settings["squid"]["levels"]
    sol = eigensolve(build_hamiltonian(grid, params), levels)
    results = {"beta": params.beta, "units": params.units or "reduced",
               "grid": {"phi_min": grid.phi_min, "phi_max": grid.phi_max, "n_points": grid.n_points},
               "eigenvalues": sol.eigenvalues, "diagnostics": sol.diagnostics}
    if params.units:
        results["eigenvalues_J"] = [params.energy_to_si(e) for e in sol.eigenvalues]
    try:
        results["double_well"] = analyze_double_well(params, grid).as_dict()
    except StateReductionError as exc:
        results["double_well"] = {"error": type(exc).__name__, "message": str(exc)}
    files = {"spectrum.csv": (["level", "energy"],
                              [[i, float(e)] for i, e in enumerate(sol.eigenvalues)])}
    if "squid.sweep" in m.settings:
        header, table, summary = _sweep_rows(m, params, jobs)
        results["sweep"] = summary
        files["sweep.csv"] = (header, table)
    return results, {}, files


def _run_squid_evolve(m: RunManifest, jobs: int):
    params = _squid_params(m)
    grid = _squid_grid(m, params)
    ev = m.settings["squid.evolve"]
    out = tunneling_run(params, grid, steps_per_period=ev["steps_per_period"],
                        periods=ev["periods"])
    traj = out["trajectory"]
    times, left = traj.well_series(out["report"].saddle)
    results = {"double_well": out["report"].as_dict(), "period": out["period"],
               "t_final": float(traj.times[-1]), "dt": traj.dt,
               "left_initial": out["left_initial"], "right_final": out["right_final"]}
    checks = {"norm_drift": _check(out["norm_drift"], 1e-10)}
    return results, checks, {"trajectory.csv": (["t", "left_probability"],
                                                [[float(t), float(p)] for t, p in zip(times, left)])}


RUNNERS = {"screening": _run_screening, "sterngerlach": _run_sterngerlach,
           "squid-spectrum": _run_squid_spectrum, "squid-evolve": _run_squid_evolve}


def execute(manifest: RunManifest, jobs: int = 1) -> dict:
    """Run a manifest, write its report and CSVs, and return the report."""
    with tolerances.using(manifest.tolerances):
        results, checks, files = RUNNERS[manifest.kind](manifest, jobs)
        for name, (header, rows) in files.items():
            write_csv(manifest.out_dir / name, header, rows)
        report = _report(manifest, results, checks, sorted(files))
    write_json(manifest.out_dir / "report.json", report)
    failed = [k for k, c in checks.items() if not c["passed"]]
    if failed:
        raise InvariantFailure(failed)
    return report


def execute_sweep(manifest: RunManifest, jobs: int = 1) -> dict:
    if manifest.kind not in ("squid-spectrum", "squid-evolve") or "squid.sweep" not in manifest.settings:
        raise ConfigError("sweep needs a squid config with a [squid.sweep] section", key="squid.sweep")
    with tolerances.using(manifest.tolerances):
        header, table, summary = _sweep_rows(manifest, _squid_params(manifest), jobs)
        write_csv(manifest.out_dir / "sweep.csv", header, table)
        report = _report(manifest, {"sweep": summary}, {}, ["sweep.csv"])
    write_json(manifest.out_dir / "report.json", report)
    return report


def execute_verify(out_dir: Path, seed: int, instances: int, overrides: dict,
                   inject_nonunitary: bool = False) -> dict:
    tol = tolerances.DEFAULT.replace(**overrides)
    with tolerances.using(tol):
        suites = run_all(seed, instances, inject_nonunitary=inject_nonunitary)
    report = {"kind": "verify", "seed": seed, "instances": instances,
              "tolerances": tol.as_dict(), "suites": [s.as_dict() for s in suites],
              "passed": all(s.passed for s in suites),
              "meta": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                       "version": _version()}}
    write_json(out_dir / "verify.json", report)
    return report


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="statereduction",
                                description="State-reduction scenarios, Stern-Gerlach "
                                            "registration statistics and SQUID spectra.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required: bool):
        sp.add_argument("--config", type=Path, required=config_required, help="TOML scenario file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for batches/sweeps")
        sp.add_argument("--tolerance", action="append", default=[], metavar="KEY=VAL",
                        help="override one tolerance (repeatable)")

    common(sub.add_parser("run", help="run one scenario and write report.json plus CSVs"), True)
    common(sub.add_parser("sweep", help="SQUID parameter sweep to sweep.csv"), True)
    v = sub.add_parser("verify", help="run the seeded invariant suites")
    common(v, False)
    v.add_argument("--instances", type=int, default=100, help="random instances per suite")
    v.add_argument("--inject-nonunitary", action="store_true", help=argparse.SUPPRESS)
    return p


def _fail(code: int, record: dict, out_dir: Path | None) -> int:
    print(json.dumps(_clean(record), sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        try:
            write_json(out_dir / "error.json", record)
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", key="jobs")
        if args.command == "verify":
            overrides = dict(parse_override(o) for o in args.tolerance)
            seed = 0 if args.seed is None else args.seed
            if args.config is not None:
                m = load_manifest(args.config, out, seed=args.seed, overrides=args.tolerance)
                seed, overrides = m.seed, m.tolerance_overrides
            report = execute_verify(out, seed, args.instances, overrides, args.inject_nonunitary)
            print(json.dumps({"passed": report["passed"],
                              "suites": {s["name"]: s["passed"] for s in report["suites"]}},
                             sort_keys=True))
            return EXIT_OK if report["passed"] else EXIT_INVARIANT
        manifest = load_manifest(args.config, out, seed=args.seed, overrides=args.tolerance)
        if args.command == "sweep":
            report = execute_sweep(manifest, args.jobs)
        else:
            report = execute(manifest, args.jobs)
        print(json.dumps({"kind": report["kind"], "out": str(out), "seed": report["seed"]},
                         sort_keys=True))
        return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.record(), out)
    except InvariantFailure as exc:
        return _fail(EXIT_INVARIANT, {"error": "invariant", "message": str(exc),
                                      "invariants": exc.names}, out)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, {"error": "numerical", "message": str(exc),
                                      "diagnostics": exc.diagnostics}, out)
    except ContractViolation as exc:
        return _fail(EXIT_INVARIANT, {"error": "contract", "message": str(exc)}, out)
    except StateReductionError as exc:
        return _fail(EXIT_ERROR, {"error": type(exc).__name__, "message": str(exc)}, out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
