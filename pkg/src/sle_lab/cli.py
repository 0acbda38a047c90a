"""Command-line entry point.

Subcommands map one-to-one onto library operations and emit CSV/JSON
artifacts.  Numeric options can come from a JSON config file (--config);
explicit flags override file values, and the fully resolved configuration,
defaults included, is echoed into a provenance JSON next to every artifact,
so no run is irreproducible.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 statistical gate failure.  Validation errors also print a machine
readable JSON object on stderr.  --threads (or SLE_LAB_THREADS) caps the
number of parallel replica chunks; results are independent of the thread
count because replica seeds derive from the replica index.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import bessel, ergodics, io, loewner, processes
from .errors import NumericsError, SleLabError, StatGateError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_STATGATE = 4


def _parser():
    p = argparse.ArgumentParser(prog="sle-lab",
                                description="Loewner evolution laboratory")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out-dir", default=".", help="artifact directory")
    p.add_argument("--threads", type=int, default=None,
                   help="max parallel replica chunks "
                        "(default: SLE_LAB_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim-trace", help="simulate a driving and its trace")
    s.add_argument("--kind", choices=("chordal", "radial", "wholeplane"),
                   default="chordal")
    s.add_argument("--kappa", type=float, default=2.0)
    s.add_argument("--rho", type=float, default=None,
                   help="whole-plane force-point weight (default kappa+2)")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--t", type=float, default=1.0, help="final capacity time")
    s.add_argument("--t-start", type=float, default=-8.0,
                   help="whole-plane start capacity")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("extract", help="extract whole-plane driving from a trace CSV")
    s.add_argument("--input", required=True, help="trace CSV (t, re, im)")
    s.add_argument("--cap-floor", type=float, default=-8.0)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("welding", help="welding of a backward radial process")
    s.add_argument("--kappa", type=float, default=2.0)
    s.add_argument("--rho", type=float, default=None,
                   help="backward force-point weight (default -kappa-6)")
    s.add_argument("--t", type=float, default=8.0)
    s.add_argument("--steps", type=int, default=4000)
    s.add_argument("--grid", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("bessel-density", help="transition density table")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--x0", type=float, default=0.0, help="start in y coordinates")
    s.add_argument("--grid", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("bessel-sample", help="Euler-Maruyama sample paths")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--y0", type=float, default=0.0)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--paths", type=int, default=1)
    s.add_argument("--killed", action="store_true")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("ergodic-diffusion", help="time average of f(Z)")
    s.add_argument("--kappa", type=float, default=4.0)
    s.add_argument("--rho", type=float, default=6.0)
    s.add_argument("--horizon", type=float, default=5000.0)
    s.add_argument("--f", default="cos", choices=sorted(ergodics.TEST_FUNCTIONS))
    s.add_argument("--gate-stderr", type=float, default=None,
                   help="flag the report when stderr exceeds this")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("ergodic-tip", help="chordal tip experiment")
    s.add_argument("--kappa", type=float, default=2.0)
    s.add_argument("--t0", type=float, default=1.0)
    s.add_argument("--steps", type=int, default=4000)
    s.add_argument("--replicas", type=int, default=20)
    s.add_argument("--f", default="cos", choices=sorted(ergodics.TEST_FUNCTIONS))
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("ergodic-radial", help="radial tip experiment")
    s.add_argument("--kappa", type=float, default=4.0)
    s.add_argument("--t-future", type=float, default=5.0)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--replicas", type=int, default=20)
    s.add_argument("--f", default="cos", choices=sorted(ergodics.TEST_FUNCTIONS))
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("reversibility", help="reversed-trace two-sample check")
    s.add_argument("--kappa", type=float, default=2.0)
    s.add_argument("--rho", type=float, default=None)
    s.add_argument("--replicas", type=int, default=200)
    s.add_argument("--steps", type=int, default=1200)
    s.add_argument("--t-start", type=float, default=-6.0)
    s.add_argument("--power", action="store_true",
                   help="bootstrap power estimate")
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    return p


def _apply_config_file(parser, argv):
    """Merge config-file values under explicit flags."""
    ns, _ = parser.parse_known_args(argv)
    if not getattr(ns, "config", None):
        return parser.parse_args(argv)
    with open(ns.config) as fh:
        file_cfg = json.load(fh)
    if not isinstance(file_cfg, dict):
        raise ValidationError("config file must hold a JSON object")
    ns = parser.parse_args(argv)
    known = set(vars(ns))
    unknown = set(k.replace("-", "_") for k in file_cfg) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    # flags given on the command line win; detect them by re-parsing with
    # file values as defaults
    defaults = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _resolved_config(ns):
    cfg = {k: v for k, v in sorted(vars(ns).items()) if k != "config"}
    cfg["threads"] = _threads(ns)
    return cfg


def _threads(ns):
    if ns.threads is not None:
        return max(1, ns.threads)
    env = os.environ.get("SLE_LAB_THREADS")
    return max(1, int(env)) if env else 1


def _out(ns, name):
    os.makedirs(ns.out_dir, exist_ok=True)
    return os.path.join(ns.out_dir, name)


def _emit_report(ns, cfg, name, payload):
    io.report_to_json(_out(ns, name), payload, cfg)


def _cmd_sim_trace(ns, cfg, h):
    if ns.kind == "wholeplane":
        rho = ns.kappa + 2.0 if ns.rho is None else ns.rho
        params = processes.SleParams(kappa=ns.kappa, rho=rho, sigma=1,
                                     seed=ns.seed)
        driving = processes.sample_wholeplane_driving(params, ns.t_start,
                                                      ns.steps, dt_max=np.inf)
    else:
        driving = processes.sample_brownian_driving(ns.kappa, ns.t, ns.steps,
                                                    ns.seed, kind=ns.kind)
    trace = loewner.compute_trace(driving)
    io.driving_to_csv(_out(ns, "driving.csv"), driving, h)
    io.trace_to_csv(_out(ns, "trace.csv"), trace, h)
    _emit_report(ns, cfg, "provenance.json",
                 {"artifacts": ["driving.csv", "trace.csv"],
                  "final_capacity": float(trace.times[-1])})
    return EXIT_OK


def _cmd_extract(ns, cfg, h):
    trace = io.trace_from_csv(ns.input)
    driving = loewner.extract_wholeplane_driving(trace.points,
                                                 cap_floor=ns.cap_floor)
    io.driving_to_csv(_out(ns, "extracted_driving.csv"), driving, h)
    _emit_report(ns, cfg, "provenance.json",
                 {"artifacts": ["extracted_driving.csv"],
                  "capacity_range": [float(driving.t0),
                                     float(driving.times[-1])]})
    return EXIT_OK


def _cmd_welding(ns, cfg, h):
    rho = -ns.kappa - 6.0 if ns.rho is None else ns.rho
    params = processes.SleParams(kappa=ns.kappa, rho=rho, sigma=-1,
                                 seed=ns.seed)
    path = processes.sample_stationary(params, ns.t, ns.steps)
    table = loewner.compute_welding(path.as_driving("radial"), ns.grid)
    io.write_csv(_out(ns, "welding.csv"),
                 [table.grid, table.partner, table.absorb_time,
                  table.welded.astype(float)],
                 ["x", "phi", "absorb_time", "welded"], h)
    _emit_report(ns, cfg, "welding.json",
                 {"artifacts": ["welding.csv"],
                  "fixed_points": [float(v) for v in table.fixed_points],
                  "welded_fraction": float(table.welded.mean())})
    return EXIT_OK


def _cmd_bessel_density(ns, cfg, h):
    edges = np.linspace(-1.0, 1.0, ns.grid + 1)
    y = 0.5 * (edges[1:] + edges[:-1])
    vals = bessel.transition_density_y(ns.delta, ns.t, ns.x0, y)
    io.density_table_to_csv(_out(ns, "density.csv"),
                            np.full(y.size, ns.x0), y, ns.t, vals, h)
    mass = float(np.sum(vals) * (edges[1] - edges[0]))
    _emit_report(ns, cfg, "density.json",
                 {"artifacts": ["density.csv"], "mass": mass})
    return EXIT_OK


def _cmd_bessel_sample(ns, cfg, h):
    sample = bessel.sample_y_path(ns.delta, ns.y0, ns.t, ns.steps, ns.seed,
                                  killed=ns.killed, n_paths=ns.paths)
    io.sample_path_to_csv(_out(ns, "sample_path.csv"), sample, h)
    payload = {"artifacts": ["sample_path.csv"],
               "mean_final": float(np.mean(sample.y[:, -1]))}
    if sample.lifetime is not None:
        finite = np.isfinite(sample.lifetime)
        payload["killed_fraction"] = float(finite.mean())
        payload["mean_lifetime"] = (float(sample.lifetime[finite].mean())
                                    if finite.any() else None)
    _emit_report(ns, cfg, "sample.json", payload)
    return EXIT_OK


def _cmd_ergodic_diffusion(ns, cfg, h):
    params = processes.SleParams(kappa=ns.kappa, rho=ns.rho, sigma=1,
                                 seed=ns.seed)
    steps = int(np.ceil(ns.horizon / processes.DEFAULT_DT))
    path = processes.sample_stationary(params, ns.horizon, steps)
    report = ergodics.diffusion_time_average(path, ns.f, tol=ns.gate_stderr)
    fn = ergodics.TEST_FUNCTIONS[ns.f]
    run = np.cumsum(fn(path.z[1:]) * path.dt) / (path.dt * np.arange(
        1, path.z.size))
    stride = max(1, run.size // 2000)
    io.write_csv(_out(ns, "running_average.csv"),
                 [path.times[1::stride], run[::stride]],
                 ["t", "running_average"], h)
    _emit_report(ns, cfg, "ergodic_report.json", report.to_dict())
    return EXIT_OK


def _tip_artifacts(ns, cfg, h, report, records):
    for i, rec in enumerate(records):
        io.write_csv(_out(ns, f"tip_records_{i:03d}.csv"),
                     [rec.s, rec.v, rec.h], ["s", "v", "h"], h)
    depth = records[0].v if records else np.array([])
    if records:
        running = np.cumsum(np.cos(2 * np.pi * records[0].h)) / np.arange(
            1, records[0].h.size + 1)
        io.write_csv(_out(ns, "running_vs_depth.csv"),
                     [depth, running], ["capacity", "running_average"], h)
    _emit_report(ns, cfg, "ergodic_report.json", report.to_dict())


def _cmd_ergodic_tip(ns, cfg, h):
    report, records = ergodics.chordal_tip_experiment(
        ns.kappa, ns.t0, ns.steps, ns.replicas, ns.seed, f=ns.f,
        keep_records=True, threads=_threads(ns))
    _tip_artifacts(ns, cfg, h, report, records)
    return EXIT_OK


def _cmd_ergodic_radial(ns, cfg, h):
    report, records = ergodics.radial_tip_experiment(
        ns.kappa, ns.t_future, ns.steps, ns.replicas, ns.seed, f=ns.f,
        keep_records=True)
    _tip_artifacts(ns, cfg, h, report, records)
    return EXIT_OK


def _cmd_reversibility(ns, cfg, h):
    out = ergodics.reversibility_check(ns.kappa, ns.replicas, ns.seed,
                                       rho=ns.rho, t_start=ns.t_start,
                                       steps=ns.steps, with_power=ns.power)
    n = max(out["forward_sample"].size, out["reversed_sample"].size)
    fwd = np.full(n, np.nan)
    rev = np.full(n, np.nan)
    fwd[:out["forward_sample"].size] = out["forward_sample"]
    rev[:out["reversed_sample"].size] = out["reversed_sample"]
    io.write_csv(_out(ns, "gap_samples.csv"), [fwd, rev],
                 ["forward", "reversed"], h)
    payload = {k: v for k, v in out.items()
               if k not in ("forward_sample", "reversed_sample")}
    payload["artifacts"] = ["gap_samples.csv"]
    _emit_report(ns, cfg, "reversibility.json", payload)
    if out["ks_pvalue"] < ns.alpha:
        raise StatGateError(
            f"two-sample KS rejected at {ns.alpha:g} "
            f"(p={out['ks_pvalue']:.3g})")
    return EXIT_OK


_COMMANDS = {
    "sim-trace": _cmd_sim_trace,
    "extract": _cmd_extract,
    "welding": _cmd_welding,
    "bessel-density": _cmd_bessel_density,
    "bessel-sample": _cmd_bessel_sample,
    "ergodic-diffusion": _cmd_ergodic_diffusion,
    "ergodic-tip": _cmd_ergodic_tip,
    "ergodic-radial": _cmd_ergodic_radial,
    "reversibility": _cmd_reversibility,
}


def run(argv) -> int:
    parser = _parser()
    try:
        ns = _apply_config_file(parser, list(argv))
        cfg = _resolved_config(ns)
        h = io.config_hash(cfg)
        return _COMMANDS[ns.command](ns, cfg, h)
    except StatGateError as exc:
        print(json.dumps({"error": "statistical-gate", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_STATGATE
    except ValidationError as exc:
        print(json.dumps({"error": "validation", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericsError,) as exc:
        print(json.dumps({"error": "numerical", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_NUMERICAL
    except SleLabError as exc:
        print(json.dumps({"error": "error", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "validation", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_VALIDATION


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
