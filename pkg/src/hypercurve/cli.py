"""
Command-line entry point.

Every run reads one JSON document with the sections ``potential``, ``sim``,
``experiment`` and ``output``. Missing keys are filled from the reference
configuration of the chosen subcommand (print it with
``hypercurve reference-config SUBCOMMAND``); unknown keys are rejected.
Outputs go to a fresh directory ``<output.dir>/<subcommand>-<timestamp>``
together with ``manifest.json``, which is written on every exit path.

Exit codes: 0 success, 1 configuration error, 2 numerical failure or a
diverged Nash-Moser trace, 3 failed check in ``--check`` mode.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import math
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from hypercurve import __version__, harness, spectral
from hypercurve.dynamics import SimConfig, initial_data, simulate
from hypercurve.errors import ConfigurationError, NumericalError
from hypercurve.potential import PotentialSpec

SUBCOMMANDS = ("simulate", "diagnose", "linearize-check", "nash-moser",
               "stability", "lifespan", "convergence", "smoothing-check")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3

POTENTIAL_DEFAULTS = {"kind": "zero-eta", "n": 1, "gamma": 0.0, "kappa": 0.0, "p": 0.0, "table": None}

SIM_DEFAULTS = {
    "rho": math.pi, "vol0": None, "M": 64, "T": 1.0, "dt": None, "cfl_safety": 0.25,
    "eps": 1.0, "rescaled": False, "initial": {"kind": "circle", "radius": 1.0},
    "sample_every": 1, "volume_rtol": 1e-6,
}

OUTPUT_DEFAULTS = {"dir": "runs", "trajectory": True}

_NM_SIM = {
    "M": 64, "T": 0.5, "eps": 0.05, "rescaled": True, "rho": math.pi * 0.05,
    "initial": {"kind": "perturbed", "radius": 1.01, "modes": [[2, 1e-5, 0.0], [3, 0.0, 5e-6]],
                "velocity_modes": [[2, 0.0, 1e-5]]},
}

_PLAN = {"eps_list": [], "dt_list": [], "M_list": [], "seed": 0, "s_bar": 2.0, "tolerances": {}, "workers": 1}

EXPERIMENT_DEFAULTS = {
    "simulate": {},
    "diagnose": {"energy_rtol": 1e-6, "c": 1.0},
    "linearize-check": {
        "M": 32, "seed": 0, "digits": 40, "deltas": [1e-3, 1e-4, 1e-5, 1e-6], "slope_tol": 0.1,
        "linearity_tol": 1e-10, "spectrum_M": 128, "modes": [1, 2, 3, 4, 5], "spectrum_tol": 1e-3,
    },
    "nash-moser": {"s_bar": 2.0, "s": 4.0, "l_max": 8, "tol": 1e-8, "ball_radius": 1.0,
                   "compare_verlet": True, "h2_tol": 1e-4},
    "stability": {**_PLAN, "eps_list": [1e-2, 1e-3, 1e-4], "dt_list": [2e-3, 1e-3, 5e-4],
                  "tolerances": {"ratio_spread": 10.0, "order_tol": 0.3}},
    "lifespan": {**_PLAN, "eps_list": [0.04, 0.01], "tolerances": {"norm_growth": 2.0}},
    "convergence": {**_PLAN, "dt_list": [4e-3, 2e-3, 1e-3], "M_list": [16, 32, 64, 128],
                    "tolerances": {"order_tol": 0.2, "space_drop": 1e2, "space_floor": 1e-10}},
    "smoothing-check": {"pairs": [[3, 1], [2, 0], [1, 3], [0, 2]], "N_list": [2, 4, 8, 16],
                        "M_list": [128, 256], "fields": 20, "seed": 0, "max_variation": 0.5},
}

SIM_OVERRIDES = {
    "stability": {"T": 1.0, "dt": 1e-3, "initial": {"kind": "circle", "radius": 1.1}},
    "lifespan": {"M": 32, "T": 1.0, "initial": {
        "kind": "perturbed", "radius": 1.0, "modes": [[2, 1e-4, 0.0], [3, 0.0, 5e-5]],
        "velocity_modes": [[2, 0.0, 1e-4]]}},
    "convergence": {"T": 1.0, "initial": {"kind": "circle", "radius": 1.1}},
    "nash-moser": _NM_SIM,
    "linearize-check": {"initial": {"kind": "perturbed", "radius": 1.0,
                                    "modes": [[2, 0.1, 0.0], [3, 0.0, 0.05]]}},
}


def reference_config(subcommand: str) -> dict:
    """Complete configuration with every default spelled out."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigurationError(f"unknown subcommand {subcommand!r}; expected one of {SUBCOMMANDS}")
    sim = {**SIM_DEFAULTS, **SIM_OVERRIDES.get(subcommand, {})}
    return copy.deepcopy({
        "potential": POTENTIAL_DEFAULTS,
        "sim": sim,
        "experiment": EXPERIMENT_DEFAULTS[subcommand],
        "output": OUTPUT_DEFAULTS,
    })


# ---------------------------------------------------------------- config handling


def _merge(ref: dict, user: dict, path: str, unknown: list[str]) -> dict:
    out = copy.deepcopy(ref)
    for key, val in user.items():
        where = f"{path}.{key}" if path else key
        if key not in ref:
            unknown.append(where)
        elif isinstance(ref[key], dict) and key != "initial":
            if not isinstance(val, dict):
                raise ConfigurationError(f"{where} must be an object")
            out[key] = _merge(ref[key], val, where, unknown)
        else:
            # initial data is free-form; initial_data() rejects unknown keys per kind
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=VALUE`` in place; VALUE is parsed as JSON when possible."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"--set expects KEY=VALUE, got {assignment!r}")
    parts = key.split(".")
    node = cfg
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node, dict) or p not in node:
            raise ConfigurationError(f"unknown config key {'.'.join(parts[:i + 1])!r} in --set")
        if node[p] is None:
            node[p] = {}
        node = node[p]
    leaf = parts[-1]
    free = len(parts) >= 2 and parts[-2] == "initial"
    if not isinstance(node, dict) or (leaf not in node and not free):
        raise ConfigurationError(f"unknown config key {key!r} in --set")
    node[leaf] = _parse_value(value)


def resolve_config(subcommand: str, user: dict | None = None, overrides=(), seed: int | None = None) -> dict:
    """Reference config of ``subcommand`` updated by ``user``, ``--set`` overrides and ``--seed``."""
    user = user or {}
    if not isinstance(user, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown: list[str] = []
    cfg = _merge(reference_config(subcommand), user, "", unknown)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for a in overrides:
        apply_override(cfg, a)
    if seed is not None:
        if "seed" in cfg["experiment"]:
            cfg["experiment"]["seed"] = int(seed)
        if cfg["sim"]["initial"].get("kind") == "random":
            cfg["sim"]["initial"]["seed"] = int(seed)
    build_sim(cfg)  # validate early
    return cfg


def build_potential(section: dict) -> PotentialSpec:
    kind = section["kind"]
    if kind == "tabulated":
        if not section.get("table"):
            raise ConfigurationError("potential.table (CSV path) is required for kind 'tabulated'")
        if not Path(section["table"]).is_file():
            raise ConfigurationError(f"potential.table: file not found: {section['table']}")
        return PotentialSpec.from_csv(section["table"], n=int(section["n"]))
    return PotentialSpec(kind=kind, n=int(section["n"]), gamma=float(section["gamma"]),
                         kappa=float(section["kappa"]), p=float(section["p"]))


def build_sim(cfg: dict) -> SimConfig:
    s = cfg["sim"]
    try:
        sim = SimConfig(
            rho=float(s["rho"]), vol0=None if s["vol0"] is None else float(s["vol0"]),
            potential=build_potential(cfg["potential"]), M=int(s["M"]), T=float(s["T"]),
            dt=None if s["dt"] is None else float(s["dt"]), cfl_safety=float(s["cfl_safety"]),
            eps=float(s["eps"]), rescaled=bool(s["rescaled"]), initial=dict(s["initial"]),
            sample_every=int(s["sample_every"]), volume_rtol=float(s["volume_rtol"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad value in sim/potential section: {exc}") from exc
    initial_data(sim.initial, sim.M)
    return sim


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {p} is not valid JSON: {exc}") from exc


def fresh_run_dir(parent, subcommand: str) -> Path:
    """A directory that did not exist before this call."""
    parent = Path(parent)
    parent.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    base = parent / f"{subcommand}-{stamp}"
    for i in range(1000):
        d = base if i == 0 else base.with_name(f"{base.name}-{i}")
        try:
            d.mkdir()
            return d
        except FileExistsError:
            continue
    raise ConfigurationError(f"could not create a fresh run directory under {parent}")


# ---------------------------------------------------------------- pipelines


class CheckFailed(Exception):
    """A ``--check`` run whose acceptance test did not pass."""


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, default=harness._json_default))
    return path


def run_simulate(cfg: dict, out: Path) -> tuple[dict, list[Path], bool]:
    sim = build_sim(cfg)
    traj = simulate(sim)
    files = traj.write(out) if cfg["output"]["trajectory"] else []
    rel = np.abs(traj.volumes - traj.volumes_integrated) / np.abs(traj.volumes)
    summary = {
        "completed": traj.completed, "abort_reason": traj.abort_reason,
        "final_time": float(traj.times[-1]), "dt": float(traj.dt), "samples": len(traj),
        "max_displacement": traj.max_displacement(),
        "max_volume_mismatch_rel": float(np.max(rel)),
    }
    files.append(_dump(out / "summary.json", summary))
    if not traj.completed:
        raise NumericalError(f"simulation aborted: {traj.abort_reason}")
    return summary, files, True


def run_diagnose(cfg: dict, out: Path):
    from hypercurve.diagnostics import conservation_report, volume_bounds

    sim = build_sim(cfg)
    traj = simulate(sim)
    if not traj.completed:
        raise NumericalError(f"simulation aborted: {traj.abort_reason}")
    rep = conservation_report(traj, sim, c=float(cfg["experiment"]["c"]))
    files = rep.write(out)
    vb = volume_bounds(rep)
    drift = rep.drift(rep.conserved, relative=True)
    summary = {**rep.summary(), "volume_bound": vars(vb), "energy_rtol": cfg["experiment"]["energy_rtol"]}
    passed = vb.passed and drift <= float(cfg["experiment"]["energy_rtol"])
    summary["passed"] = passed
    files.append(_dump(out / "summary.json", summary))
    return summary, files, passed


def _random_field(M: int, seed: int, kmax: int = 6) -> np.ndarray:
    rng = np.random.default_rng(seed)
    th = spectral.nodes(M)
    h = np.zeros((M, 2))
    for k in range(kmax + 1):
        a = rng.standard_normal((2, 2)) / (1 + k) ** 2
        h += np.outer(np.cos(k * th), a[0]) + np.outer(np.sin(k * th), a[1])
    return h


def run_linearize_check(cfg: dict, out: Path):
    """Finite-difference slope, linearity, coefficient round trip and the circle spectrum."""
    from hypercurve.linearized import (LinearizedOperator, apply_linearized,
                                       assemble_coefficients, mode_frequency)
    from hypercurve.oracles import MPForce

    ex = cfg["experiment"]
    sim = replace(build_sim(cfg), M=int(ex["M"]))
    F0, _ = initial_data(sim.initial, sim.M)
    op = LinearizedOperator.static(F0, potential=sim.potential, rho=sim.rho, eps=sim.force_eps)
    m = op.reference_density
    h = _random_field(sim.M, int(ex["seed"]))
    g = _random_field(sim.M, int(ex["seed"]) + 1)
    Lh = apply_linearized(op, 0.0, h)
    mpf = MPForce(sim.M, m, sim.potential, sim.rho, sim.force_eps, dps=int(ex["digits"]))
    deltas = sorted((float(d) for d in ex["deltas"]), reverse=True)
    rows, errs = [], []
    for d in deltas:
        e = float(np.max(np.abs(mpf.central_difference(F0, h, d) - Lh)))
        errs.append(e)
        rows.append({"check": "fd", "delta": d, "error": e})
    slopes = [math.log(errs[i] / errs[i + 1]) / math.log(deltas[i] / deltas[i + 1])
              for i in range(len(errs) - 1) if errs[i + 1] > 0]
    a, b = 0.7, -1.3
    lin = apply_linearized(op, 0.0, a * h + b * g) - (a * Lh + b * apply_linearized(op, 0.0, g))
    linearity = float(np.max(np.abs(lin)) / max(np.max(np.abs(Lh)), 1e-300))
    coeffs = assemble_coefficients(op, 0.0)
    roundtrip = float(np.max(np.abs(coeffs.apply(*coeffs.decompose(h)) - Lh)) / max(np.max(np.abs(Lh)), 1e-300))
    # the unit circle with v = 1, rho = pi is an equilibrium with omega_k^2 = k^2 - 1
    M2 = int(ex["spectrum_M"])
    th = spectral.nodes(M2)
    circle = LinearizedOperator.static(np.stack([np.cos(th), np.sin(th)], axis=1))
    spec_err = 0.0
    for k in ex["modes"]:
        w2, _ = mode_frequency(circle, int(k), 0.0)
        exact = float(k * k - 1)
        err = abs(w2 - exact) / max(exact, 1.0)
        spec_err = max(spec_err, err)
        rows.append({"check": "spectrum", "k": int(k), "omega2": w2, "exact": exact, "error": err})
    passed = (all(abs(s - 2.0) <= float(ex["slope_tol"]) for s in slopes) and bool(slopes)
              and linearity <= float(ex["linearity_tol"]) and spec_err <= float(ex["spectrum_tol"]))
    summary = {"fd_slopes": slopes, "linearity_rel": linearity, "coefficient_roundtrip_rel": roundtrip,
               "spectrum_max_rel_error": spec_err, "a_min": float(coeffs.rho0), "a_max": float(coeffs.rho1),
               "passed": passed}
    rep = harness.ExperimentReport("linearize-check", passed, rows, summary)
    return summary, rep.write(out, "linearize_check"), passed


def run_nash_moser(cfg: dict, out: Path):
    from hypercurve.nashmoser import NashMoserConfig, h2_distance, iterate, verlet_reference

    ex = cfg["experiment"]
    nm = NashMoserConfig(build_sim(cfg), s_bar=float(ex["s_bar"]), s=float(ex["s"]), l_max=int(ex["l_max"]),
                         tol=float(ex["tol"]), ball_radius=float(ex["ball_radius"]))
    res = iterate(nm)
    files = res.trace.write(out)
    summary = res.trace.summary()
    passed = not res.trace.diverged
    if ex["compare_verlet"] and not res.trace.diverged:
        dist = h2_distance(res.problem, res.positions, verlet_reference(res.problem))
        summary.update(h2_distance_to_verlet=dist, h2_tol=float(ex["h2_tol"]))
        passed = dist <= float(ex["h2_tol"])
    summary["passed"] = passed
    files.append(_dump(out / "summary.json", summary))
    if res.trace.diverged:
        raise NumericalError(f"Nash-Moser iteration diverged: {res.trace.termination}")
    return summary, files, passed


def _plan(cfg: dict, kind: str) -> harness.ExperimentPlan:
    ex = cfg["experiment"]
    return harness.ExperimentPlan(
        kind=kind, sim=build_sim(cfg), eps_list=list(ex["eps_list"]), dt_list=list(ex["dt_list"]),
        M_list=list(ex["M_list"]), seed=int(ex["seed"]), s_bar=float(ex["s_bar"]),
        tolerances=dict(ex["tolerances"]), workers=int(ex["workers"]),
    )


def _run_plan(kind: str):
    def pipeline(cfg: dict, out: Path):
        rep = harness.run(_plan(cfg, kind))
        return {"passed": rep.passed, **rep.summary}, rep.write(out), rep.passed
    pipeline.__name__ = f"run_{kind}"
    return pipeline


def run_smoothing_check(cfg: dict, out: Path):
    ex = cfg["experiment"]
    rep = harness.smoothing_check(
        pairs=[tuple(p) for p in ex["pairs"]], N_list=tuple(ex["N_list"]), M_list=tuple(ex["M_list"]),
        fields=int(ex["fields"]), seed=int(ex["seed"]), max_variation=float(ex["max_variation"]))
    return {"passed": rep.passed, **rep.summary}, rep.write(out, "smoothing_check"), rep.passed


PIPELINES = {
    "simulate": run_simulate,
    "diagnose": run_diagnose,
    "linearize-check": run_linearize_check,
    "nash-moser": run_nash_moser,
    "stability": _run_plan("stability"),
    "lifespan": _run_plan("lifespan"),
    "convergence": _run_plan("convergence"),
    "smoothing-check": run_smoothing_check,
}


# ---------------------------------------------------------------- driver


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run(subcommand: str, config_path=None, overrides=(), out=None, seed=None, check=False,
        quiet=False) -> int:
    """Execute one subcommand and return its exit code."""
    started = _now()
    manifest = {"subcommand": subcommand, "version": __version__, "started": started,
                "config_path": None if config_path is None else str(config_path), "config": None}
    run_dir = None
    files: list[Path] = []
    code, message = EXIT_OK, "ok"
    try:
        if subcommand not in PIPELINES:
            raise ConfigurationError(f"unknown subcommand {subcommand!r}; expected one of {SUBCOMMANDS}")
        user = load_config(config_path) if config_path is not None else {}
        if out is not None:
            user = copy.deepcopy(user)
            user.setdefault("output", {})["dir"] = str(out)
        cfg = resolve_config(subcommand, user, overrides, seed)
        manifest["config"] = cfg
        run_dir = fresh_run_dir(cfg["output"]["dir"], subcommand)
        summary, files, passed = PIPELINES[subcommand](cfg, run_dir)
        if check and not passed:
            raise CheckFailed(f"{subcommand} check failed")
        if not quiet:
            print(json.dumps(summary, indent=2, default=harness._json_default))
    except ConfigurationError as exc:
        code, message = EXIT_CONFIG, f"configuration error: {exc}"
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        code, message = EXIT_NUMERICAL, f"numerical failure: {exc}"
    except CheckFailed as exc:
        code, message = EXIT_CHECK, str(exc)
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest, then re-raised
        manifest.update(ended=_now(), exit_status=None, message=traceback.format_exc())
        _write_manifest(manifest, run_dir, files, config_path, out)
        raise exc
    if code != EXIT_OK:
        print(message, file=sys.stderr)
    manifest.update(ended=_now(), exit_status=code, message=message)
    _write_manifest(manifest, run_dir, files, config_path, out)
    return code


def _write_manifest(manifest: dict, run_dir, files, config_path, out) -> Path:
    if run_dir is None:
        # failure before the run directory existed: still leave a record
        parent = Path(out) if out is not None else Path(
            (manifest.get("config") or {}).get("output", {}).get("dir", OUTPUT_DEFAULTS["dir"]))
        run_dir = fresh_run_dir(parent, f"{manifest['subcommand']}-failed")
    files = sorted({Path(f).name for f in (files or []) if Path(f).exists()}
                   | {p.name for p in Path(run_dir).iterdir() if p.name != "manifest.json"})
    manifest["run_dir"] = str(run_dir)
    manifest["files"] = files
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=harness._json_default))
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypercurve", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    ref = sub.add_parser("reference-config", help="print the complete default config of a subcommand")
    ref.add_argument("target", choices=SUBCOMMANDS)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", help="JSON config file (missing keys take reference values)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, VALUE parsed as JSON when possible; repeatable")
        p.add_argument("--out", help="parent directory for the fresh run directory")
        p.add_argument("--seed", type=int, help="seed for randomized pieces")
        p.add_argument("--quiet", action="store_true", help="do not print the summary")
        p.add_argument("--check", action="store_true", help="test mode: exit 3 when the check fails")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "reference-config":
        print(json.dumps(reference_config(args.target), indent=2))
        return EXIT_OK
    return run(args.command, args.config, args.overrides, args.out, args.seed, args.check, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
