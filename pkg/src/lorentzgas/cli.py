"""Command-line entry point: ``lorentzgas <experiment> [flags]``.

Configuration may come from a flat ``key = value`` file (``--config``); flags
override file keys and ``LORENTZ_OUTPUT_DIR`` overrides the output directory
of the file (but not ``--out``).  Exit status: 0 success, 2 invalid
configuration or inadmissible schedule, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import itertools
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import statistics as st
from .coupling import replica_record
from .dynamics import simulate_lorentz, write_trajectories_csv
from .environment import DEFAULT_CELL_SIDE, UNIT_RATE_INTENSITY, EnvironmentView
from .errors import LorentzGasError, ScheduleError
from .output import write_csv, write_jsonl, write_manifest
from .schedule import (ScalingRow, check_schedule, geometric_schedule, min_angle, radius_of,
                       sample_cap, spread_velocities)
from .streams import stream

EXPERIMENTS = ("simulate", "couple", "mismatch", "events", "green", "donsker", "quenched")
ENV_OUTPUT = "LORENTZ_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- parsing

def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in str(s).split(",") if x.strip()]


def _vec(s):
    v = _floats(s)
    if len(v) != 3:
        raise ConfigError(f"expected a 3-vector, got {s!r}")
    return v


def _vecs(s):
    return [_vec(x) for x in str(s).split(";") if x.strip()]


def _rows(s):
    """Explicit schedule ``n:eps:T:beta:N;...``."""
    out = []
    for item in str(s).split(";"):
        if item.strip():
            n, eps, T, beta, N = item.split(":")
            out.append((int(n), float(eps), float(T), float(beta), int(N)))
    return out


def _bool(s):
    if isinstance(s, bool):
        return s
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


# key -> (parser, default, help)
SCHEMA = {
    "seed": (int, 0, "base seed"),
    "intensity": (float, UNIT_RATE_INTENSITY, "base intensity (1/pi gives collision rate 1)"),
    "cell_side": (float, DEFAULT_CELL_SIDE, "hash-grid cell side in base units"),
    "eps": (_floats, [0.05], "scaling parameter(s), comma separated"),
    "T": (_floats, [5.0], "time horizon(s)"),
    "N": (_ints, [1], "number(s) of particles"),
    "beta": (float, None, "cap half-angle for sampled initial velocities"),
    "w": (float, None, "fan initial velocities at consecutive angle w"),
    "velocities": (_vecs, None, "explicit initial velocities 'x,y,z;x,y,z'"),
    "v0": (_vec, None, "single initial velocity 'x,y,z'"),
    "e": (_vec, [0.0, 0.0, 1.0], "cap axis"),
    "replicas": (int, 1000, "Monte Carlo replicas M"),
    "quenched": (_bool, False, "mismatch: fixed environment seed for every replica"),
    "r": (_floats, [0.001], "events: scatterer radius/radii"),
    "R": (_floats, [2.0, 5.0, 10.0], "green: ball centre distances"),
    "a": (float, 0.5, "green: ball radius"),
    "horizon": (float, 400.0, "green: flight horizon before the diffusive tail"),
    "rate": (float, 1.0, "flight rate for events, green, donsker"),
    "schedule": (str, "geometric", "quenched: 'geometric' family or explicit 'rows'"),
    "rows": (_rows, None, "quenched: explicit rows 'n:eps:T:beta:N;...'"),
    "eps_ratio": (float, 0.5, "geometric family: eps_n = eps_ratio^n"),
    "T_exponent": (float, 0.5, "geometric family: T_n = eps_n^-T_exponent"),
    "beta_exponent": (float, 0.5, "geometric family: beta_n = eps_n^beta_exponent"),
    "N_power": (float, 2.0, "geometric family: N_n = round(n^N_power)"),
    "n_min": (int, 1, "quenched: first row"),
    "n_max": (int, 8, "quenched: last row"),
    "mode": (str, "thm3", "quenched: admissibility mode"),
    "alpha": (float, 0.01, "quenched: Hoeffding level"),
    "wiener_paths": (int, 100_000, "Brownian reference paths"),
    "n_steps": (int, 1000, "grid steps on [0, 1] for rescaled paths"),
    "jobs": (int, None, "worker processes (default: all cores)"),
    "out": (str, None, "output directory"),
    "force": (_bool, False, "run despite r T > 1 or an inadmissible schedule"),
    "dump": (_bool, False, "write full trajectory tables"),
}
# not part of the hashed configuration: they cannot change any output byte
VOLATILE = ("jobs", "out")


def read_config_file(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in SCHEMA and k != "experiment":
            raise ConfigError(f"{path}:{n}: unknown key {k!r}")
        out[k] = v
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="lorentzgas", description=__doc__.splitlines()[0])
    p.add_argument("experiment", nargs="?", help="one of " + ", ".join(EXPERIMENTS))
    p.add_argument("--config", help="flat key = value configuration file")
    for k, (_, _, h) in SCHEMA.items():
        flag = "--" + k.replace("_", "-")
        if SCHEMA[k][0] is _bool:
            p.add_argument(flag, dest=k, action="store_const", const="1", default=None, help=h)
        else:
            p.add_argument(flag, dest=k, default=None, help=h)
    return p


def resolve_config(argv, environ=None):
    """Merge defaults, config file, environment and flags into a typed dict."""
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    raw = read_config_file(args.config) if args.config else {}
    if environ.get(ENV_OUTPUT):
        raw["out"] = environ[ENV_OUTPUT]
    for k in SCHEMA:
        v = getattr(args, k)
        if v is not None:
            raw[k] = v
    exp = args.experiment or raw.pop("experiment", None)
    raw.pop("experiment", None)
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = {"experiment": exp}
    for k, (parse, default, _) in SCHEMA.items():
        if k in raw:
            try:
                cfg[k] = parse(raw[k])
            except (TypeError, ValueError) as err:
                raise ConfigError(f"bad value for {k}: {raw[k]!r} ({err})") from None
        else:
            cfg[k] = default
    validate(cfg)
    return cfg


def validate(cfg):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(0 <= cfg["seed"] < 2**63, "seed must lie in [0, 2^63)")
    need(all(0 < e < 1 for e in cfg["eps"]), "eps must lie in (0, 1)")
    need(all(t > 0 for t in cfg["T"]), "T must be positive")
    need(all(n >= 1 for n in cfg["N"]), "N must be at least 1")
    need(cfg["beta"] is None or 0 < cfg["beta"] <= 1, "beta must lie in (0, 1]")
    need(cfg["w"] is None or cfg["w"] > 0, "w must be positive")
    need(cfg["replicas"] >= 1, "replicas must be at least 1")
    need(cfg["intensity"] > 0 and cfg["cell_side"] > 0, "intensity and cell_side must be positive")
    need(cfg["rate"] > 0, "rate must be positive")
    need(all(r > 0 for r in cfg["r"]), "r must be positive")
    need(cfg["jobs"] is None or cfg["jobs"] >= 1, "jobs must be at least 1")
    need(cfg["mode"] in ("thm1", "thm2", "thm3"), "mode must be thm1, thm2 or thm3")
    need(cfg["schedule"] in ("geometric", "rows"), "schedule must be 'geometric' or 'rows'")
    need(cfg["schedule"] != "rows" or bool(cfg["rows"]), "schedule 'rows' needs --rows")
    need(0 < cfg["eps_ratio"] < 1, "eps_ratio must lie in (0, 1)")
    if cfg["experiment"] == "quenched":
        try:
            schedule_rows(cfg)
        except ValueError as err:
            raise ConfigError(f"bad schedule: {err}") from None
    for v in (cfg["velocities"] or []) + ([cfg["v0"]] if cfg["v0"] else []):
        need(abs(math.hypot(*v) - 1.0) < 1e-9, "initial velocities must be unit vectors")
    if cfg["experiment"] in ("simulate", "couple", "mismatch") and not cfg["force"]:
        for eps, T in itertools.product(cfg["eps"], cfg["T"]):
            rT = radius_of(eps) * T
            need(rT <= 1.0, f"r T = {rT:.3g} > 1 at eps={eps}, T={T} (use --force)")


def hashed(cfg):
    return {k: v for k, v in cfg.items() if k not in VOLATILE}


# --------------------------------------------------------------------------- experiments

def _env(cfg):
    return {"intensity": cfg["intensity"], "cell_side": cfg["cell_side"]}


def _velocities(cfg, N, purpose, *key):
    """Explicit list, single v0, fan of angle w, or a cap sample (in that order)."""
    if cfg["velocities"]:
        return np.asarray(cfg["velocities"], float)
    if cfg["v0"]:
        return np.asarray([cfg["v0"]] * N, float)
    if cfg["w"] is not None:
        return spread_velocities(N, cfg["w"], cfg["e"])
    beta = math.pi if cfg["beta"] is None else cfg["beta"]
    return np.atleast_2d(sample_cap(stream(cfg["seed"], purpose, *key), cfg["e"], beta, N))


def run_simulate(cfg, outdir, jobs):
    rows, paths_all = [], []
    for eps, T, N in itertools.product(cfg["eps"], cfg["T"], cfg["N"]):
        view = EnvironmentView(st._base(cfg["seed"], _env(cfg)), eps, horizon=T)
        vel = _velocities(cfg, N, "v0_simulate", N)
        paths = [simulate_lorentz(view, v, T) for v in vel]
        for j, p in enumerate(paths):
            x = p.position(T)
            rows.append({"eps": eps, "T": T, "j": j, "r": view.r, "events": p.n_events,
                         "x_T": x[0], "y_T": x[1], "z_T": x[2]})
        paths_all.extend(paths)
    write_csv(outdir / "summary.csv", ["eps", "T", "j", "r", "events", "x_T", "y_T", "z_T"],
              rows, hashed(cfg))
    files = ["summary.csv"]
    if cfg["dump"]:
        from .output import header_lines
        write_trajectories_csv(outdir / "trajectories.csv", paths_all, header_lines(hashed(cfg)))
        files.append("trajectories.csv")
    return files


def _couple_task(args):
    cfg, eps, T, N, m = args
    vel = _velocities(cfg, N, "v0_couple", m)
    ens = st.coupled_replica(eps, T, vel, st.derive_seed(cfg["seed"], "env", m), cfg["seed"], m,
                             _env(cfg))
    w = min_angle(vel) if N > 1 else None
    rec = replica_record(ens, replica=m, eps=eps, w=w)
    rec["direct_mismatch"] = bool(math.isfinite(st.first_divergence(ens)))
    return rec, (ens if m == 0 else None)


def run_couple(cfg, outdir, jobs):
    records, files = [], []
    dumps = []
    for eps, T, N in itertools.product(cfg["eps"], cfg["T"], cfg["N"]):
        res = st._map(_couple_task, [(cfg, eps, T, N, m) for m in range(cfg["replicas"])], jobs)
        records.extend(r for r, _ in res)
        dumps.append(res[0][1])
    write_jsonl(outdir / "replicas.jsonl", records, hashed(cfg))
    files.append("replicas.jsonl")
    if cfg["dump"]:
        from .output import header_lines
        write_trajectories_csv(outdir / "lorentz.csv", [p for e in dumps for p in e.lorentz],
                               header_lines(hashed(cfg)))
        write_trajectories_csv(outdir / "flights.csv", [f for e in dumps for f in e.flights],
                               header_lines(hashed(cfg)))
        files += ["lorentz.csv", "flights.csv"]
    return files


MISMATCH_COLUMNS = ["eps", "r", "T", "N", "w", "M", "p_hat", "ci_half_width", "ci_method",
                    "bound", "fitted_C"]


def run_mismatch(cfg, outdir, jobs):
    rows, records = [], []
    for eps, T, N in itertools.product(cfg["eps"], cfg["T"], cfg["N"]):
        kw = dict(quenched=cfg["quenched"], env=_env(cfg), force=cfg["force"], jobs=jobs)
        if cfg["velocities"] or cfg["w"] is not None or cfg["v0"]:
            est = st.estimate_mismatch_probability(eps, T, cfg["replicas"], cfg["seed"],
                                                   velocities=_velocities(cfg, N, "v0"), **kw)
        else:
            beta = 1.0 if cfg["beta"] is None else cfg["beta"]
            est = st.estimate_mismatch_probability(eps, T, cfg["replicas"], cfg["seed"], N=N,
                                                   beta=beta, e=cfg["e"], **kw)
        rows.append(est.summary())
        records.extend(est.records)
    write_csv(outdir / "summary.csv", MISMATCH_COLUMNS, rows, hashed(cfg))
    write_jsonl(outdir / "replicas.jsonl", records, hashed(cfg))
    return ["summary.csv", "replicas.jsonl"]


def run_events(cfg, outdir, jobs):
    rows = []
    ws = [cfg["w"]] if cfg["w"] is not None else [0.05, 0.1, 0.2]
    for r, T, w in itertools.product(cfg["r"], cfg["T"], ws):
        ev = st.estimate_event_probabilities(r, T, w, cfg["replicas"], cfg["seed"], cfg["rate"])
        fit = ev.fitted
        for name, est in ev.estimates.items():
            rows.append({"r": r, "T": T, "w": w, "event": name, "M": est.M,
                         "p_hat": est.estimate, "ci_half_width": est.half_width,
                         "ci_method": est.method, "fitted_C": fit.get(name),
                         "uncovered": ev.uncovered})
    write_csv(outdir / "summary.csv", ["r", "T", "w", "event", "M", "p_hat", "ci_half_width",
                                       "ci_method", "fitted_C", "uncovered"], rows, hashed(cfg))
    return ["summary.csv"]


def run_green(cfg, outdir, jobs):
    rows = []
    for R in cfg["R"]:
        g = st.green_occupation((R, 0.0, 0.0), cfg["a"], cfg["replicas"], cfg["seed"],
                                r=cfg["r"][0], rate=cfg["rate"], horizon=cfg["horizon"])
        rows.append({"R": R, "a": g.a, "r": g.r, "M": g.visits.M,
                     "visits": g.visits.estimate, "visits_half_width": g.visits.half_width,
                     "occupation_over_r": g.occupation_over_r.estimate,
                     "occupation_half_width": g.occupation_over_r.half_width,
                     "gamma_integral": g.gamma_integral,
                     "far_field": st.far_field_gamma_integral(R, g.a),
                     "tail": g.tail, "ratio": g.ratio, "ratio_continuous": g.ratio_continuous})
    cols = ["R", "a", "r", "M", "visits", "visits_half_width", "occupation_over_r",
            "occupation_half_width", "gamma_integral", "far_field", "tail", "ratio",
            "ratio_continuous"]
    write_csv(outdir / "summary.csv", cols, rows, hashed(cfg))
    return ["summary.csv"]


def run_donsker(cfg, outdir, jobs):
    rows = []
    for T in cfg["T"]:
        rep = st.donsker_test(cfg["rate"], T, cfg["replicas"], cfg["seed"], cfg["n_steps"],
                              wiener_paths=cfg["wiener_paths"])
        for a in range(3):
            rows.append({"T": T, "quantity": f"ks_{'xyz'[a]}", "value": rep.ks_pvalues[a],
                         "reference": rep.variance, "passed": rep.ks_pvalues[a] > 0.01})
        for name, c in zip(("xy", "xz", "yz"), rep.correlations):
            rows.append({"T": T, "quantity": f"corr_{name}", "value": c,
                         "reference": rep.corr_bound, "passed": abs(c) <= rep.corr_bound})
        for k, (m, se) in rep.functional_means.items():
            rows.append({"T": T, "quantity": f"F_{k}", "value": m, "se": se,
                         "reference": rep.wiener_means[k][0],
                         "reference_se": rep.wiener_means[k][1],
                         "passed": rep.functional_agreement(k) <= 2.0})
    write_csv(outdir / "summary.csv", ["T", "quantity", "value", "se", "reference",
                                       "reference_se", "passed"], rows, hashed(cfg))
    return ["summary.csv"]


def run_quenched(cfg, outdir, jobs):
    rows = schedule_rows(cfg)
    report = check_schedule(rows, cfg["mode"])
    report.to_csv(outdir / "schedule.csv", _hdr(cfg))
    if not report.admissible and not cfg["force"]:
        raise ScheduleError("schedule is not admissible: " + ", ".join(
            k for k, v in report.flags.items() if v is False))
    tab = st.quenched_average_experiment(cfg["seed"], rows, mode=cfg["mode"], force=cfg["force"],
                                         env=_env(cfg), alpha=cfg["alpha"],
                                         wiener_paths=cfg["wiener_paths"],
                                         n_steps=cfg["n_steps"], jobs=jobs)
    out = []
    for name in tab.wiener:
        for rec, (gx, gy, gxy, env) in zip(tab.records, tab.gaps(name)):
            out.append({"n": rec["n"], "functional": name, "N": rec["N"],
                        "x_avg": rec["x_avg"][name], "y_avg": rec["y_avg"][name],
                        "wiener": tab.wiener[name][0], "wiener_se": tab.wiener[name][1],
                        "gap_xw": gx, "gap_yw": gy, "gap_xy": gxy, "envelope": env})
    cols = ["n", "functional", "N", "x_avg", "y_avg", "wiener", "wiener_se", "gap_xw",
            "gap_yw", "gap_xy", "envelope"]
    write_csv(outdir / "summary.csv", cols, out, hashed(cfg))
    mrows = []
    for rec, (m, small, b, f, bp) in zip(tab.records, tab.mismatch_rows()):
        mrows.append({"n": rec["n"], "N": rec["N"], "eps": rec["eps"], "r": rec["r"],
                      "T": rec["T"], "beta": rec["beta"], "alpha": rec["alpha"], "w": rec["w"],
                      "mismatch": m, "w_below_alpha": small, "bound": b,
                      "mismatched_paths": rec["mismatched_paths"], "fraction": f,
                      "bound_per_path": bp, "lorentz_events": rec["lorentz_events"]})
    write_csv(outdir / "rows.csv", list(mrows[0]) if mrows else ["n"], mrows, hashed(cfg))
    return ["schedule.csv", "summary.csv", "rows.csv"]


def schedule_rows(cfg):
    e = tuple(cfg["e"])
    if cfg["schedule"] == "rows":
        return [ScalingRow(n, eps, T, beta, N, e) for n, eps, T, beta, N in cfg["rows"]]
    return geometric_schedule(cfg["n_min"], cfg["n_max"], cfg["eps_ratio"], cfg["T_exponent"],
                              cfg["beta_exponent"], cfg["N_power"], e)


def _hdr(cfg):
    from .output import header_lines
    return header_lines(hashed(cfg))


RUNNERS = {"simulate": run_simulate, "couple": run_couple, "mismatch": run_mismatch,
           "events": run_events, "green": run_green, "donsker": run_donsker,
           "quenched": run_quenched}


def run(cfg):
    """Run one configured experiment; returns the list of files written."""
    outdir = Path(cfg["out"] or Path("runs") / cfg["experiment"])
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = cfg["jobs"] or os.cpu_count() or 1
    t0 = time.perf_counter()
    files = RUNNERS[cfg["experiment"]](cfg, outdir, jobs)
    write_manifest(outdir, hashed(cfg), {"seed": cfg["seed"]}, files, time.perf_counter() - t0)
    return [outdir / f for f in files] + [outdir / "manifest.json"]


def main(argv=None):
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
    except SystemExit as err:          # argparse usage errors
        return 2 if err.code else 0
    except (ConfigError, ValueError, OSError) as err:
        print(f"lorentzgas: {err}", file=sys.stderr)
        return 2
    try:
        files = run(cfg)
    except ScheduleError as err:
        print(f"lorentzgas: {err}", file=sys.stderr)
        return 2
    except (LorentzGasError, ValueError, ArithmeticError) as err:
        print(f"lorentzgas: runtime failure: {err}", file=sys.stderr)
        return 3
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
