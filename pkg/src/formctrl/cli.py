"""Command line entry point: ``formctrl <command> ...``.

Every command writes one JSON report (atomically when ``--out`` is given).
Exit status is 0 on success, 1 when any certificate or check fails and 2
on configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .certify import StabilityCertificate, constants_for, strong_convergence_gap
from .controls import (
    MollifierParams,
    ScheduleError,
    mollify,
    schedule_from_json,
)
from .galerkin import SynthesisParams, drift_eigenbasis, synthesize_pc, transfer_experiment, truncate
from .models import ModelSpec
from .propagate import propagate, propagate_pc
from .seeding import derive_seed
from .sweeps import (
    growth_suite,
    mollification_certificates,
    mollification_study,
    random_state,
    resolvent_suite,
    stability_suite,
    summarize,
    two_step,
)
from .system import ControlBoxError, FormLinearSystem, system_from_json, system_to_json
from . import certify as cert_mod

logger = logging.getLogger("formctrl")

SCHEMA_VERSION = "1"
REPORT_KEYS = ("schema_version", "tool", "tool_version", "command", "config", "seeds",
               "constants", "payload", "all_pass", "timing")
CERTIFICATE_KEYS = ("kind", "lhs", "rhs", "margin", "pass", "constants", "provenance", "extra")
PAYLOAD_KEYS = {
    "model": ("system",),
    "simulate": ("t_grid", "state_norms", "populations", "fidelity_to_target"),
    "certify": ("certificates", "summary"),
    "mollify-study": ("study", "certificates"),
    "galerkin-sweep": ("reports", "summary"),
    "synthesize": ("result",),
}
TIMING_KEYS = ("timing",)


class ConfigError(Exception):
    pass


def report_schema_version() -> str:
    return SCHEMA_VERSION


def schema_fingerprint() -> str:
    """Digest of the declared report layout; changes whenever a key set changes."""
    layout = {"report": REPORT_KEYS, "certificate": CERTIFICATE_KEYS,
              "payload": {k: PAYLOAD_KEYS[k] for k in sorted(PAYLOAD_KEYS)}}
    return hashlib.sha256(json.dumps(layout, sort_keys=True).encode()).hexdigest()[:16]


# ------------------------------------------------------------------- loading

def _load_json(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"{path}: file not found")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_system(path: str) -> FormLinearSystem:
    obj = _load_json(path)
    if isinstance(obj, dict) and obj.get("command") == "model" and "payload" in obj:
        obj = obj["payload"].get("system")
    try:
        return system_from_json(obj)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_schedule(path: str):
    try:
        return schedule_from_json(_load_json(path))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _state(source: str, system: FormLinearSystem, name: str) -> np.ndarray:
    """An integer selects a drift eigenvector; otherwise a JSON file ``{re, im}``."""
    _, vecs = drift_eigenbasis(system.h0)
    try:
        k = int(source)
    except ValueError:
        obj = _load_json(source)
        try:
            x = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj.get("im", np.zeros(len(obj["re"]))), dtype=float)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{source}: {name} vector needs fields re[, im] ({exc})") from None
        if x.shape != (system.dim,):
            raise ConfigError(f"{source}: {name} has length {x.size}, system dimension is {system.dim}")
        return x / np.linalg.norm(x)
    if not 0 <= k < system.dim:
        raise ConfigError(f"{name}: eigenvector index {k} outside [0, {system.dim})")
    return vecs[:, k].copy()


def _floats(text: str, name: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--{name}: expected comma-separated numbers, got '{text}'") from None


def _ints(text: str, name: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--{name}: expected comma-separated integers, got '{text}'") from None


def _need_seed(args) -> int:
    if args.seed is None:
        raise ConfigError(f"{args.command}: --seed is required for randomized runs")
    return int(args.seed)


# ------------------------------------------------------------------- output

def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".formctrl-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, StabilityCertificate):
        return x.to_json()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in TIMING_KEYS}


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "json", "verbose")}


# ------------------------------------------------------------------ commands

def cmd_model(args) -> tuple[dict, bool, dict, dict]:
    params = {"coupling": args.coupling}
    seeds = {}
    if args.kind == "random":
        params = {"seed": _need_seed(args)}
        seeds = {"model": params["seed"]}
    try:
        system = ModelSpec(args.kind, args.dim, args.channels, params).build()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return {"system": system_to_json(system)}, True, seeds, {"m": system.m}


def cmd_simulate(args):
    system = load_system(args.system)
    sched = load_schedule(args.schedule)
    phi = _state(args.phi, system, "phi")
    _, vecs = drift_eigenbasis(system.h0)
    grid = np.linspace(0.0, sched.T, max(args.grid, 2))
    states = [phi]
    step_props = []
    for a, b in zip(grid[:-1], grid[1:]):
        step_props.append(propagate(system, sched, float(b), float(a), args.tol).u_matrix)
        states.append(step_props[-1] @ states[-1])
    pops = [(np.abs(vecs.conj().T @ x) ** 2).tolist() for x in states]
    payload = {
        "t_grid": grid.tolist(),
        "state_norms": [float(np.linalg.norm(x)) for x in states],
        "populations": pops,
        "fidelity_to_target": None,
    }
    if args.target is not None:
        psi = _state(args.target, system, "target")
        payload["fidelity_to_target"] = float(abs(np.vdot(psi, states[-1])) ** 2)
    if args.unitary_csv:
        u = np.eye(system.dim, dtype=complex)
        for p in step_props:
            u = p @ u
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "re", "im"])
        for i in range(system.dim):
            for j in range(system.dim):
                w.writerow([i, j, repr(float(u[i, j].real)), repr(float(u[i, j].imag))])
        atomic_write(args.unitary_csv, buf.getvalue())
    return payload, True, {}, {"m": system.m}


def cmd_certify(args):
    system = load_system(args.system)
    schedules = [load_schedule(p) for p in (args.schedules or [])]
    for s in schedules:
        if s.channels != system.channels:
            raise ConfigError(f"schedule has {s.channels} channels, system has {system.channels}")
    kind = args.kind
    seeds = {}
    certs = []
    constants = {}
    try:
        if kind == "resolvent_lipschitz":
            seed = _need_seed(args)
            seeds["resolvent"] = seed
            certs, _ = resolvent_suite(system, args.trials or 1, seed)
        elif kind in ("propagator_growth_plus", "propagator_growth_minus", "propagator_growth"):
            seed = _need_seed(args)
            seeds["growth"] = seed
            if schedules:
                s = schedules[0]
                rng = np.random.default_rng(derive_seed(seed, "states"))
                phis = [random_state(rng, system.dim) for _ in range(args.trials or 1)]
                k_sched = constants_for(system, [s])
                for pair in cert_mod.growth_certificates(system, s, phis, s.T, 0.0, args.tol, k_sched):
                    certs.extend(pair)
            else:
                certs, _ = growth_suite(system, args.trials or 1, args.states, seed, tol=args.tol)
            if kind != "propagator_growth":
                certs = [c for c in certs if c.kind == kind]
        elif kind in ("stability_main", "stability_formlinear"):
            if len(schedules) == 2:
                k = constants_for(system, schedules)
                constants = k.to_dict()
                fn = cert_mod.certify_stability if kind == "stability_main" else cert_mod.certify_formlinear
                sj, sk = schedules
                certs = [fn(system, sj, sj if _same(sj, sk) else sk, k, tol=args.tol)]
            elif not schedules:
                seed = _need_seed(args)
                seeds["stability"] = seed
                certs, _ = stability_suite(system, args.trials or 1, args.mollified_trials, seed, tol=args.tol)
                if kind == "stability_formlinear":
                    certs = [StabilityCertificate.make("stability_formlinear", c.lhs, c.extra["rhs_formlinear"],
                                                       c.constants, c.provenance, c.extra) for c in certs]
            else:
                raise ConfigError(f"{kind}: give two schedules, or none with --trials/--seed")
        elif kind == "strong_convergence":
            if len(schedules) != 1 or schedules[0].kind != "piecewise_constant":
                raise ConfigError("strong_convergence: give one piecewise-constant schedule")
            seed = _need_seed(args)
            seeds["pairs"] = seed
            pc = schedules[0]
            d0 = 0.45 * float(np.min(np.diff(pc.breakpoints)))
            seq = [mollify(pc, MollifierParams(d0 * 0.5**k)) for k in range(args.trials or 6)]
            ref = propagate_pc(system, pc, pc.T)
            props = [propagate(system, s, s.T, 0.0, args.tol) for s in seq]
            rng = np.random.default_rng(derive_seed(seed, "probes"))
            probes = [random_state(rng, system.dim) for _ in range(args.states)]
            rep = strong_convergence_gap(ref, props, probes, system.frame, pairs=1000, seed=seed)
            certs = rep["certificates"]
        else:
            raise ConfigError(f"unknown certificate kind '{kind}'")
    except (ControlBoxError, ScheduleError) as exc:
        raise ConfigError(str(exc)) from None
    except cert_mod.CoverageError as exc:
        raise ConfigError(str(exc)) from None
    if not constants and certs:
        constants = certs[0].constants.to_dict()
    payload = {"certificates": [c.to_json() for c in certs], "summary": summarize(certs)}
    return payload, all(c.passed for c in certs), seeds, constants


def _same(a, b) -> bool:
    return json.dumps(a.to_json(), sort_keys=True) == json.dumps(b.to_json(), sort_keys=True)


def cmd_mollify_study(args):
    pc = load_schedule(args.schedule) if args.schedule else two_step()
    deltas = _floats(args.deltas, "deltas")
    try:
        study = mollification_study(pc, deltas, args.ramp)
    except ScheduleError as exc:
        raise ConfigError(str(exc)) from None
    certs = []
    constants = {}
    if args.system:
        system = load_system(args.system)
        certs = mollification_certificates(system, pc, deltas, args.tol)
        constants = certs[0].constants.to_dict() if certs else {}
    payload = {"study": study, "certificates": [c.to_json() for c in certs]}
    return payload, all(c.passed for c in certs), {}, constants


def _ambient_system(args) -> FormLinearSystem:
    system = load_system(args.system)
    if args.ambient is None or args.ambient == system.dim:
        return system
    if system.model is None:
        raise ConfigError(f"--ambient {args.ambient}: system file has no model description to rebuild from")
    m = system.model
    spec = ModelSpec(m["kind"], args.ambient, m.get("channels", 1),
                     {k: v for k, v in m.items() if k not in ("kind", "dim", "channels", "truncated_to")})
    return spec.build()


def _synthesis_params(args, seed) -> SynthesisParams:
    return SynthesisParams(segments=args.segments, T_max=args.t_max, restarts=args.restarts,
                           maxfev=args.maxfev, seed=seed)


def cmd_galerkin_sweep(args):
    seed = _need_seed(args)
    system = _ambient_system(args)
    phi = _state(args.phi, system, "phi")
    psi = _state(args.psi, system, "psi")
    ranks = _ints(args.ranks, "ranks")
    n_prime = args.n_prime
    reports = []
    rows = []
    for n in ranks:
        params = _synthesis_params(args, derive_seed(seed, "rank", n))
        try:
            rep = transfer_experiment(system, n_prime, n, phi, psi, args.epsilon, args.budget, params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        reports.append(rep.to_json())
        e = rep.errors
        rows.append([n, rep.success, e["finite_dim_infidelity"], e["ambient_final_error"],
                     e["chain_bound_terms"]["measured_gap"], e["chain_bound_terms"]["gap_bound"],
                     max(e["chain_bound_terms"]["l1"] or [0.0])])
    ambient = [r[3] for r in rows]
    summary = {
        "ranks": ranks,
        "synthesis_success": [r[1] for r in rows],
        "ambient_errors": ambient,
        "ambient_non_increasing": all(b <= a + 1e-12 for a, b in zip(ambient, ambient[1:])),
        "final_within_epsilon": bool(ambient and ambient[-1] <= args.epsilon),
        "max_l1": [r[6] for r in rows],
    }
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "synthesis_success", "finite_dim_infidelity", "ambient_final_error",
                    "measured_gap", "gap_bound", "max_l1"])
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])
        atomic_write(args.csv, buf.getvalue())
    ok = all(r["checks"]["gap_bound_dominates"] and r["checks"]["chain_holds"] for r in reports)
    consts = {"c": [r["errors"]["chain_bound_terms"]["c"] for r in reports],
              "L": [r["errors"]["chain_bound_terms"]["L"] for r in reports], "M": 0.0, "m": system.m}
    return {"reports": reports, "summary": summary}, ok, {"master": seed}, consts


def cmd_synthesize(args):
    seed = _need_seed(args)
    system = load_system(args.system)
    n = args.n or system.dim
    trunc = truncate(system, n)
    phi = trunc.restrict(_state(args.phi, system, "phi"))
    psi = trunc.restrict(_state(args.psi, system, "psi"))
    if abs(np.linalg.norm(phi) - 1) > 1e-10 or abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ConfigError(f"phi and psi must lie in the first {n} drift eigenvectors")
    res = synthesize_pc(trunc, phi, psi, args.epsilon, args.budget, _synthesis_params(args, seed))
    # exit codes track certificates only; the synthesis outcome lives in result.success
    return {"result": res.to_json()}, True, {"master": seed}, {"m": trunc.system.m}


COMMANDS = {
    "model": cmd_model,
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "mollify-study": cmd_mollify_study,
    "galerkin-sweep": cmd_galerkin_sweep,
    "synthesize": cmd_synthesize,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="formctrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"formctrl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", help="write the JSON report here (atomic)")
        sp.add_argument("--json", action="store_true", help="print only the JSON report")
        sp.add_argument("-v", "--verbose", action="store_true")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed for randomized steps")

    sp = sub.add_parser("model", help="write a model system as JSON")
    sp.add_argument("--kind", choices=["oscillator", "box", "random"], required=True)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--channels", type=int, default=1)
    sp.add_argument("--coupling", type=float, default=1.0)
    common(sp)

    sp = sub.add_parser("simulate", help="evolve a state under a schedule")
    sp.add_argument("--system", required=True)
    sp.add_argument("--schedule", required=True)
    sp.add_argument("--phi", default="0", help="drift eigenvector index or JSON vector file")
    sp.add_argument("--target", help="drift eigenvector index or JSON vector file")
    sp.add_argument("--grid", type=int, default=21)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--unitary-csv", help="write the final unitary as CSV")
    common(sp, seed=False)

    sp = sub.add_parser("certify", help="emit stability certificates")
    sp.add_argument("--kind", default="stability_main",
                    choices=list(cert_mod.KINDS) + ["propagator_growth"])
    sp.add_argument("--system", required=True)
    sp.add_argument("--schedules", nargs="*")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--states", type=int, default=10, help="random states per schedule")
    sp.add_argument("--mollified-trials", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-10)
    common(sp)

    sp = sub.add_parser("mollify-study", help="L1 distance and derivative budget versus ramp width")
    sp.add_argument("--schedule", help="piecewise-constant schedule (default: unit two-step on [0, 2])")
    sp.add_argument("--deltas", default="0.2,0.1,0.05")
    sp.add_argument("--ramp", choices=["quintic", "bump"], default="quintic")
    sp.add_argument("--system", help="also certify each mollification against the source")
    sp.add_argument("--tol", type=float, default=1e-10)
    common(sp, seed=False)

    for name in ("galerkin-sweep", "synthesize"):
        sp = sub.add_parser(name, help="controllability transfer across ranks" if name == "galerkin-sweep"
                            else "piecewise-constant synthesis in a truncation")
        sp.add_argument("--system", required=True)
        sp.add_argument("--phi", default="0")
        sp.add_argument("--psi", default="1")
        sp.add_argument("--epsilon", type=float, default=1e-2)
        sp.add_argument("--budget", type=float, default=5.0)
        sp.add_argument("--segments", type=int, default=6)
        sp.add_argument("--t-max", type=float, default=12.0)
        sp.add_argument("--restarts", type=int, default=8)
        sp.add_argument("--maxfev", type=int, default=4000)
        if name == "galerkin-sweep":
            sp.add_argument("--ranks", default="4,8,16")
            sp.add_argument("--ambient", type=int)
            sp.add_argument("--n-prime", type=int, default=2)
            sp.add_argument("--csv", help="write the per-rank summary table")
        else:
            sp.add_argument("--n", type=int, help="truncation rank (default: full)")
        common(sp)
    return p


def run(argv=None) -> tuple[int, dict | None]:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        payload, ok, seeds, constants = COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"formctrl {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2, None
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": "formctrl",
        "tool_version": __version__,
        "command": args.command,
        "config": _config_echo(args),
        "seeds": seeds,
        "constants": constants,
        "payload": payload,
        "all_pass": bool(ok),
        "timing": {"wall_seconds": time.perf_counter() - start},
    }
    text = dumps(report)
    if args.out:
        # `model --out` writes the system definition itself so it can be fed back in
        atomic_write(args.out, dumps(payload["system"]) if args.command == "model" else text)
    if args.json:
        sys.stdout.write(text)
    else:
        _human_summary(report)
    return (0 if ok else 1), report


def _human_summary(report: dict) -> None:
    payload = report["payload"]
    line = f"{report['command']}: {'PASS' if report['all_pass'] else 'FAIL'}"
    if "summary" in payload and "trials" in payload["summary"]:
        s = payload["summary"]
        line += f"  trials={s['trials']} failures={s['failures']} max_ratio={s['max_ratio']:.3g}"
    if report["constants"]:
        line += "  constants=" + json.dumps(report["constants"], default=_jsonable)
    print(line)


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
