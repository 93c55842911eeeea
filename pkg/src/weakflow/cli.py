"""``weakflow`` command-line driver.

Every subcommand resolves its parameters as defaults < config file < flags,
writes the resolved set and its outputs into ``--out``, and prints a single
JSON summary line. Output files never contain timing information, so equal
inputs give byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coin, coupling, ensemble_stats, fields, wavepacket
from .errors import (
    GridTooCoarse,
    SplitStepUnconverged,
    UnresolvedCells,
    WeakflowError,
    ZeroNorm,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL_ERRORS = (SplitStepUnconverged, GridTooCoarse, ZeroNorm, UnresolvedCells)

# distortion w^2 t^2 / (N eps^2) = 0.01 for w = 7, N = 1000, eps = 1
DEFAULT_T = math.sqrt(10.0) / 7.0


@dataclass(frozen=True)
class Param:
    type: type
    default: object
    help: str = ""


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _mass(text) -> float:
    return math.inf if str(text).strip().lower() in ("inf", "infinite") else float(text)


COIN = {
    "n": Param(int, 1000, "number of coin spins N"),
    "alpha_up": Param(float, 0.8, "postselected up amplitude"),
    "alpha_down": Param(float, -0.6, "postselected down amplitude"),
}
PACKET = {
    "t": Param(float, DEFAULT_T, "evolution time"),
    "eps": Param(float, 1.0, "packet width"),
}

SCHEMAS: dict[str, dict[str, Param]] = {
    "displacement": {
        **COIN,
        **PACKET,
        "trials": Param(int, 0, "postselected samples to histogram (0: none)"),
        "bins": Param(int, 64, "histogram bins"),
        "n_profile": Param(int, 401, "points in the written profile"),
    },
    "convergence": {
        **COIN,
        **PACKET,
        "ladder": Param(_ints, (250, 500, 1000, 2000), "comma-separated N values"),
    },
    "probabilities": {**COIN, **PACKET},
    "moments": {
        **COIN,
        "n": Param(int, 100, "smallest N of the doubling ladder"),
        "steps": Param(int, 4, "ladder length"),
        "n_max": Param(int, 3, "largest moment order"),
        "p_values": Param(_floats, (0.0, 0.5, 1.0, 1.5, 2.0), "comma-separated momenta"),
        "T": Param(float, 1.0, "time in the moment phase"),
    },
    "field-map": {
        "q": Param(float, 1.0, "source charge"),
        "v": Param(float, 7.0, "source speed"),
        "t": Param(float, 1.0, "time"),
        "mode": Param(str, "retarded_sum", "closed_form or retarded_sum"),
        "rho_max": Param(float, 5.0, "largest rho"),
        "z_min": Param(float, -40.0, "smallest z"),
        "z_max": Param(float, 10.0, "largest z"),
        "n_rho": Param(int, 201, "rho points"),
        "n_z": Param(int, 801, "z points"),
    },
    "retarded-oracle": {
        "q": Param(float, 1.0, "source charge"),
        "v": Param(float, 0.5, "source speed"),
        "t": Param(float, 1.0, "time"),
        "rho": Param(float, 1.0, "field point rho"),
        "z": Param(float, 0.0, "field point z"),
    },
    "kick-compare": {
        **COIN,
        **PACKET,
        "t": Param(float, 3.0 / 7.0, "kick time T"),
        "behind": Param(float, 55.0, "test particle distance behind the weak position"),
        "phase": Param(float, 0.3, "largest kick phase (sets q')"),
        "mass": Param(_mass, math.inf, "test particle mass (inf for phase-only kick)"),
        "dx": Param(float, 3.0, "transverse offset"),
        "n_z": Param(int, 256, "charge grid points"),
        "n_zp": Param(int, 256, "test grid points"),
        "field_mode": Param(str, "closed_form", "closed_form or retarded_sum for the weak branch"),
    },
    "light-cone": {
        **COIN,
        **PACKET,
        "t": Param(float, 1.0, "evolution time"),
        "cutoff": Param(float, 5.0, "truncation half-width in units of eps"),
    },
    "causality": {
        "distance": Param(float, 1.0, "observer distance D"),
        "n": Param(int, 137, "number of coin spins N"),
        "q2": Param(float, 1.0 / 137.0, "squared charge in natural units"),
        "horizon": Param(float, 1.0, "time horizon T"),
        "w": Param(float, 7.0, "weak velocity"),
        "delta_e": Param(float, -1.0, "field uncertainty (negative: 1/D^2)"),
    },
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        for key, spec in schema.items():
            p.add_argument(_flag(key), dest=key, default=None, help=f"{spec.help} (default {spec.default})")
        p.add_argument("--config", type=Path, help="key = value file")
        p.add_argument("--out", type=Path, default=Path("weakflow_out"), help="output directory")
        p.add_argument("--seed", default=None, help="random seed (default 0)")
        p.add_argument("--threads", type=int, default=None, help="worker cap (falls back to WEAKFLOW_THREADS)")
        p.add_argument("--dry-run", action="store_true", help="validate and print the resolved parameters")
    return parser


def read_config(path: Path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(args: argparse.Namespace) -> dict:
    schema = SCHEMAS[args.subcommand]
    config = read_config(args.config) if args.config else {}
    extra = set(config) - set(schema) - {"seed", "threads"}
    if extra:
        raise ValueError(f"unknown config keys for {args.subcommand}: {sorted(extra)}")
    params = {}
    for key, spec in schema.items():
        raw = getattr(args, key)
        if raw is None:
            raw = config.get(key)
        params[key] = spec.default if raw is None else spec.type(raw)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    params["seed"] = int(seed)
    return params


def resolve_threads(args: argparse.Namespace, config_path: Path | None) -> int | None:
    if args.threads is not None:
        return args.threads
    if config_path is not None:
        cfg = read_config(config_path)
        if "threads" in cfg:
            return int(cfg["threads"])
    env = os.environ.get("WEAKFLOW_THREADS")
    return int(env) if env else None


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dumps(obj, **kw) -> str:
    return json.dumps(_clean(obj), sort_keys=True, ensure_ascii=False, allow_nan=False, **kw)


def params_digest(subcommand: str, params: dict) -> str:
    return hashlib.sha256(dumps({"subcommand": subcommand, "params": params}).encode()).hexdigest()


def _write_params(out: Path, subcommand: str, params: dict) -> None:
    lines = [f"# weakflow {subcommand}"] + [f"{k} = {_format(v)}" for k, v in sorted(params.items())]
    (out / "params.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


# --- subcommands ----------------------------------------------------------------


def _post(p) -> coin.CoinState:
    return coin.CoinState(p["n"], p["alpha_up"], p["alpha_down"])


def run_displacement(p, out: Path, threads):
    post = _post(p)
    w = coin.weak_velocity(post)
    packet = wavepacket.GaussianPacket(width=p["eps"])
    exact = wavepacket.evolve_exact(packet, post, p["t"])
    weak = wavepacket.evolve_weak(packet, w, p["t"])
    report = wavepacket.convergence_report(packet, post, p["t"])
    lo, hi = exact.content_range()
    z = np.linspace(lo, hi, p["n_profile"])
    dens = np.abs(exact.amplitude(z)) ** 2
    dens /= exact.norm_squared()
    weak_dens = np.abs(weak.profile_z(z)) ** 2
    _write_csv(out / "profile.csv", ["z", "exact_density", "weak_density"], zip(z, dens, weak_dens))
    results = {
        "weak_velocity": w,
        "weak_displacement": w * p["t"],
        "peak": wavepacket.peak_position(exact),
        "fidelity": report.fidelity,
        "peak_error": report.peak_error,
        "distortion_parameter": report.distortion_parameter,
    }
    if p["trials"] > 0:
        cfg = ensemble_stats.ExperimentConfig(post, p["eps"], p["t"], p["trials"], p["seed"])
        sample = ensemble_stats.sample_displacements(cfg, True, bins=p["bins"], threads=threads)
        ensemble_stats.write_histogram_csv(out / "histogram.csv", sample)
        results.update(sample_mean=sample.mean, sample_std=sample.std)
    return results


def run_convergence(p, out: Path, threads):
    packet = wavepacket.GaussianPacket(width=p["eps"])
    rows = []
    for n in p["ladder"]:
        post = coin.CoinState(n, p["alpha_up"], p["alpha_down"])
        rep = wavepacket.convergence_report(packet, post, p["t"])
        corrected = wavepacket.fidelity(
            wavepacket.evolve_exact(packet, post, p["t"]), wavepacket.correction_factor(packet, post, p["t"])
        )
        rows.append((n, rep.fidelity, 1 - rep.fidelity, corrected, rep.peak_error, rep.distortion_parameter))
    _write_csv(
        out / "convergence.csv",
        ["n_spins", "fidelity", "deficit", "fidelity_corrected", "peak_error", "distortion_parameter"],
        rows,
    )
    n = np.log([r[0] for r in rows])
    deficit = np.log([max(r[2], 1e-300) for r in rows])
    slope = float(np.polyfit(n, deficit, 1)[0]) if len(rows) > 1 else float("nan")
    return {"deficit_slope": slope, "fidelity": {str(r[0]): r[1] for r in rows}}


def run_probabilities(p, out: Path, threads):
    cfg = ensemble_stats.ExperimentConfig(_post(p), p["eps"], p["t"], 1, p["seed"])
    ledger = ensemble_stats.probability_ledger(cfg)
    results = ledger.as_dict()
    results.update(
        error_exceeds_floor=ledger.error_exceeds_floor,
        error_exceeds_postselection=ledger.error_exceeds_postselection,
    )
    (out / "probabilities.json").write_text(dumps(results, indent=2) + "\n", encoding="utf-8")
    return results


def run_moments(p, out: Path, threads):
    post = _post(p)
    ladder = [p["n"] * 2**k for k in range(p["steps"])]
    table = coupling.moment_replacement_check(post, p["n_max"], p["p_values"], p["T"], ladder)
    rows = []
    for k, n_spins in enumerate(table.ladder):
        for order in table.orders:
            for j, mom in enumerate(table.p_grid):
                rows.append((n_spins, order, mom, table.errors[k, order, j]))
    _write_csv(out / "moments.csv", ["n_spins", "order", "p", "relative_error"], rows)
    return {"largest_slope": table.largest_slope, "converges": table.converges}


def run_field_map(p, out: Path, threads):
    src = fields.SourceSpec(p["q"], p["v"], p["t"])
    grid = fields.FieldGrid(0.0, p["rho_max"], p["n_rho"], p["z_min"], p["z_max"], p["n_z"])
    fmap = fields.field_map(src, grid, p["mode"], threads=threads)
    fmap.write_csv(out / "field_map.csv")
    fmap.write_gnuplot(out / "field_map.gp", "field_map.csv")
    results = {"defined_cells": int(fmap.defined.sum()), "worldline_cells": int(fmap.on_worldline.sum())}
    if abs(p["v"]) > 1:
        results["cone_half_angle_deg"] = fields.mach_cone_half_angle(p["v"])
        results["measured_half_angle_deg"] = fields.measured_cone_half_angle(fmap)
    return results


def run_retarded_oracle(p, out: Path, threads):
    src = fields.SourceSpec(p["q"], p["v"], p["t"])
    point = (p["rho"], 0.0, p["z"])
    roots = fields.retarded_roots(src, point)
    residuals = [float(fields.retarded_residual(src, p["rho"], p["z"], r)) for r in roots]
    rad = float(fields.radicand(src, p["rho"], p["z"]))
    results = {
        "roots": roots,
        "residuals": residuals,
        "radicand": rad,
        "retarded_sum": fields.lienard_wiechert(src, point),
        "closed_form": src.q / math.sqrt(rad) if rad > 0 else None,
    }
    (out / "retarded_oracle.json").write_text(dumps(results, indent=2) + "\n", encoding="utf-8")
    return results


def run_kick_compare(p, out: Path, threads):
    post = _post(p)
    w = coin.weak_velocity(post)
    charge = wavepacket.GaussianPacket(width=p["eps"])
    T = p["t"]
    test_packet = wavepacket.GaussianPacket(center=(0.0, 0.0, w * T - p["behind"] * p["eps"]), width=p["eps"])
    probe = coupling.TestParticleSpec(0.0, math.inf, test_packet)
    grid = coupling.KickGrid.covering(charge, probe, T, w, p["n_z"], p["n_zp"], dx=p["dx"] * p["eps"])
    vmax = float(np.max(np.abs(coupling._kick_potential(1.0, grid.rho, grid.offsets, w, p["field_mode"]))))
    q_test = p["phase"] / vmax if vmax > 0 else 0.0
    test = coupling.TestParticleSpec(q_test, p["mass"], test_packet)
    if test.infinite_mass:
        exact = coupling.joint_kick_exact(charge, post, test, T, grid, threads=threads)
        weak = coupling.joint_kick_weak(charge, w, test, T, grid, p["field_mode"])
        substeps = 0
    else:
        res = coupling.joint_kick_finite_m(charge, post, test, T, grid, p["field_mode"], threads=threads)
        exact, weak, substeps = res.exact, res.weak, res.substeps
    exact.write_binary(out / "exact.bin")
    weak.write_binary(out / "weak.bin")
    coupling.write_summary_csv(out / "summary.csv", {"exact": exact, "weak": weak}, reference="weak")
    return {"test_charge": q_test, "fidelity": exact.fidelity(weak), "substeps": substeps}


def run_light_cone(p, out: Path, threads):
    post = _post(p)
    packet = wavepacket.GaussianPacket(width=p["eps"])
    rep = wavepacket.light_cone_check(packet, post, p["t"], cutoff=p["cutoff"])
    _write_csv(out / "light_cone.csv", ["z", "abs_amplitude"], zip(rep.grid, np.abs(rep.truncated_amplitude)))
    return {
        "support_bound": rep.support_bound,
        "max_outside": rep.max_outside,
        "holds": rep.holds,
        "analytic_ratio_at_weak": rep.analytic_ratio,
    }


def run_causality(p, out: Path, threads):
    if p["q2"] < 0:
        raise ValueError("q2 must be non-negative")
    query = coupling.CausalityQuery(
        p["distance"], p["n"], math.sqrt(p["q2"]), p["horizon"], None if p["delta_e"] < 0 else p["delta_e"]
    )
    rep = coupling.causality_check(query, p["w"])
    results = rep.as_dict()
    # headline verdict is the coupling inequality; the spread test is reported beside it
    results["pass"] = rep.coupling_condition
    return results


RUNNERS = {
    "displacement": run_displacement,
    "convergence": run_convergence,
    "probabilities": run_probabilities,
    "moments": run_moments,
    "field-map": run_field_map,
    "retarded-oracle": run_retarded_oracle,
    "kick-compare": run_kick_compare,
    "light-cone": run_light_cone,
    "causality": run_causality,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    start = time.perf_counter()
    try:
        params = resolve(args)
        threads = resolve_threads(args, args.config)
        digest = params_digest(args.subcommand, params)
        if args.dry_run:
            results = {"dry_run": True, "params": params}
        else:
            args.out.mkdir(parents=True, exist_ok=True)
            _write_params(args.out, args.subcommand, params)
            results = RUNNERS[args.subcommand](params, args.out, threads)
            (args.out / "results.json").write_text(
                dumps({"subcommand": args.subcommand, "params_digest": digest, "key_results": results}, indent=2)
                + "\n",
                encoding="utf-8",
            )
    except NUMERICAL_ERRORS as exc:
        print(f"weakflow: numerical contract violated: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, ZeroDivisionError, WeakflowError) as exc:
        print(f"weakflow: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    summary = {
        "subcommand": args.subcommand,
        "params_digest": digest,
        "key_results": results,
        "wall_time": time.perf_counter() - start,
    }
    print(dumps(summary))
    return EXIT_OK


def main() -> None:
    sys.exit(run())
