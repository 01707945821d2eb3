"""Command-line surface: reproducible simulation and analysis runs driven by
JSON configs. Subcommands: simulate | g2 | allan | calibrate | fit.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import MeasurementSequence, calibrate
from .correlation import (
    DEFAULT_EXCLUDED_WINDOWS,
    fit_g2_comb,
    hbt_split,
    interarrival_histogram,
)
from .deadtime import fit_eta0, weighted_average
from .detectors import LnpdModel, SpadModel, detect, write_clickstream
from .errors import (
    EmptyStreamError,
    FitConvergenceError,
    ParameterError,
    SignalBelowBackgroundError,
    SignalDomainError,
    SingularFitError,
)
from .sources import CwSps, PulsedLaser, PulsedSps, generate
from .stability import CountTrace, allan_deviation, curve_to_csv, optimal_integration_time
from .streams import read_binary, write_binary

SCHEMA_VERSION = 1

_SOURCE_KINDS = {
    "pulsed_sps": (PulsedSps, ("rep_rate_hz", "p0", "p1", "p2", "lifetime_s")),
    "pulsed_laser": (PulsedLaser, ("rep_rate_hz", "mean_photons", "pulse_width_s")),
    "cw_sps": (CwSps, ("rate_pps", "lifetime_s")),
}


def _meta(params: dict) -> dict:
    canonical = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return {
        "toolkit_version": __version__,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
    }


def _write_json(payload: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _build_source(cfg: dict):
    kind = cfg.get("kind")
    if kind not in _SOURCE_KINDS:
        raise ParameterError(f"source.kind: must be one of {sorted(_SOURCE_KINDS)} (got {kind!r})")
    cls, fields = _SOURCE_KINDS[kind]
    kwargs = {k: cfg[k] for k in fields if k in cfg}
    missing = [k for k in fields if k not in cfg and k not in ("lifetime_s", "pulse_width_s")]
    if missing:
        raise ParameterError(f"source: missing field(s) {missing} for kind {kind!r}")
    return cls(**kwargs)


def _load_config(path) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ParameterError(f"schema: expected {SCHEMA_VERSION}, got {cfg.get('schema')!r}")
    if "seed" not in cfg:
        raise ParameterError("seed: mandatory (no wall-clock default)")
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = Path(args.out or cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    scenario = cfg.get("scenario", "run")
    source = _build_source(cfg["source"])
    duration = cfg["duration_s"]
    spad = SpadModel(**cfg["spad"]) if "spad" in cfg else None

    photons = generate(source, duration, seed)
    write_binary(photons, out / f"{scenario}_photons.bin")
    meta = _meta({"config": cfg, "seed": seed})
    sidecars = {"photons": len(photons), "duration_s": photons.duration_s}

    if spad is not None:
        if cfg.get("hbt", False):
            arm_a, arm_b = hbt_split(photons, seed + 1)
            for label, arm, det_seed in (("a", arm_a, seed + 2), ("b", arm_b, seed + 3)):
                clicks = detect(arm, spad, det_seed)
                write_clickstream(clicks, out / f"{scenario}_clicks_{label}.bin",
                                  extra={"_meta": meta})
                sidecars[f"clicks_{label}"] = clicks.counters()
        else:
            clicks = detect(photons, spad, seed + 2)
            write_clickstream(clicks, out / f"{scenario}_clicks.bin", extra={"_meta": meta})
            sidecars["clicks"] = clicks.counters()
    _write_json({"_meta": meta, "scenario": scenario, **sidecars}, out / f"{scenario}_summary.json")
    print(f"wrote {scenario} outputs to {out}")
    return 0


def cmd_g2(args) -> int:
    a = read_binary(args.clicks_a)
    b = read_binary(args.clicks_b)
    windows = DEFAULT_EXCLUDED_WINDOWS if args.exclude is None else [
        tuple(map(float, w.split(":"))) for w in args.exclude
    ]
    h = interarrival_histogram(a, b, args.bin_width, args.max_lag)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h.to_csv(out / f"{args.name}_histogram.csv")
    fit = fit_g2_comb(h, args.rep_rate, windows)
    payload = fit.to_json()
    payload["_meta"] = _meta({
        "clicks_a": str(args.clicks_a), "clicks_b": str(args.clicks_b),
        "rep_rate": args.rep_rate, "bin_width": args.bin_width,
        "max_lag": args.max_lag, "exclude": [list(w) for w in windows],
    })
    _write_json(payload, out / f"{args.name}_g2.json")
    print(f"g2[0] = {fit.g2_zero:.4f} +/- {fit.g2_zero_u:.4f}")
    return 0


def cmd_allan(args) -> int:
    with open(args.trace) as f:
        header = f.readline().strip()
        if header != "counts":
            raise ParameterError(f"trace file: expected header 'counts', got {header!r}")
        counts = [int(line) for line in f if line.strip()]
    trace = CountTrace(args.tau0, np.array(counts, dtype=np.int64))
    taus = [float(t) for t in args.taus.split(",")]
    curve = allan_deviation(trace, taus)
    if not curve:
        raise SignalDomainError("no tau value was computable for this trace")
    best = optimal_integration_time(curve)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve_to_csv(curve, out / f"{args.name}_allan.csv")
    payload = {
        "_meta": _meta({"trace": str(args.trace), "tau0": args.tau0, "taus": taus}),
        "optimal_tau_s": best,
        "curve": [[t, s] for t, s in curve],
    }
    _write_json(payload, out / f"{args.name}_allan.json")
    print(f"optimal integration time: {best} s")
    return 0


def cmd_calibrate(args) -> int:
    seq = MeasurementSequence.from_json(args.sequence)
    with open(args.lnpd) as f:
        lnpd = LnpdModel(**json.load(f))
    estimate = calibrate(seq, lnpd, apply_epsilon=not args.no_epsilon,
                         apply_p_a=not args.no_afterpulse)
    payload = estimate.to_json()
    payload["_meta"] = _meta({
        "sequence": seq.to_json(), "lnpd": str(args.lnpd),
        "apply_epsilon": not args.no_epsilon, "apply_p_a": not args.no_afterpulse,
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(payload, out / f"{args.name}_efficiency.json")
    print(f"eta = {estimate.eta:.5f} +/- {estimate.u_eta:.5f} "
          f"(relative {estimate.relative_u() * 100:.2f}%)")
    for name, rel in estimate.budget:
        print(f"  {name:<22s} {rel * 100:.4f}%")
    return 0


def _read_fit_csv(path):
    with open(path) as f:
        header = f.readline().strip()
        if header != "x,eta,u_eta":
            raise ParameterError(f"data file: expected header 'x,eta,u_eta', got {header!r}")
        rows = []
        for line in f:
            if line.strip():
                x, e, u = line.split(",")
                rows.append((float(x), float(e), float(u)))
    return rows


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.combine:
        values = []
        for p in args.combine:
            with open(p) as f:
                r = json.load(f)
            values.append((r["eta0"], r["uncertainty"]))
        mean, unc = weighted_average(values)
        payload = {
            "_meta": _meta({"combine": [str(p) for p in args.combine]}),
            "eta0": mean,
            "uncertainty": unc,
            "inputs": values,
        }
        _write_json(payload, out / f"{args.name}_eta0.json")
        print(f"weighted average eta0 = {mean:.4f} +/- {unc:.4f}")
        return 0

    if args.data is None or args.model is None:
        raise ParameterError("--data and --model: required unless --combine is used")
    data = _read_fit_csv(args.data)
    fixed = {"dead_time_s": args.dead_time}
    if args.model == "pulsed_sps":
        if args.eta_s is None:
            raise ParameterError("--eta-s: required for the pulsed_sps model")
        fixed["eta_s"] = args.eta_s
    if args.model == "pulsed_laser":
        if args.mu is None:
            raise ParameterError("--mu: required for the pulsed_laser model")
        fixed["mean_photons"] = args.mu
    result = fit_eta0(data, args.model, fixed, mode=args.mode)
    payload = result.to_json()
    payload["_meta"] = _meta({
        "data": str(args.data), "model": args.model, "fixed": fixed, "mode": args.mode,
    })
    _write_json(payload, out / f"{args.name}_fit.json")

    from .deadtime import _model_for, eta_model  # model curve for plotting

    model = _model_for(args.model, fixed)
    xs = np.geomspace(min(x for x, _, _ in data), max(x for x, _, _ in data), 200)
    with open(out / f"{args.name}_model_curve.csv", "w") as f:
        f.write("x,eta\n")
        for x in xs:
            f.write(f"{x!r},{eta_model(model, result.eta0, float(x)).eta!r}\n")
    print(f"eta0 = {result.eta0:.4f} +/- {result.uncertainty:.4f} "
          f"(chisq {result.chisq:.3g}, {result.n_points} points)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spadcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate photon and click streams from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("g2", help="histogram two click streams and fit g2[0]")
    p.add_argument("--clicks-a", required=True)
    p.add_argument("--clicks-b", required=True)
    p.add_argument("--rep-rate", type=float, required=True)
    p.add_argument("--bin-width", type=float, default=0.4e-9)
    p.add_argument("--max-lag", type=float, default=160e-9)
    p.add_argument("--exclude", nargs="*", default=None, metavar="START:END",
                   help="excluded lag windows in seconds, e.g. 18e-9:22e-9")
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="g2")
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("allan", help="Allan-deviation curve of a count trace")
    p.add_argument("--trace", required=True, help="CSV with header 'counts'")
    p.add_argument("--tau0", type=float, default=1.0)
    p.add_argument("--taus", required=True, help="comma-separated tau values in seconds")
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="trace")
    p.set_defaults(func=cmd_allan)

    p = sub.add_parser("calibrate", help="efficiency estimate from a measurement sequence")
    p.add_argument("--sequence", required=True)
    p.add_argument("--lnpd", required=True)
    p.add_argument("--no-epsilon", action="store_true")
    p.add_argument("--no-afterpulse", action="store_true")
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="calibration")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit", help="fit eta0 to (rate, eta, u_eta) data")
    p.add_argument("--data", help="CSV with header 'x,eta,u_eta'")
    p.add_argument("--model", choices=["pulsed_sps", "pulsed_laser", "cw_sps"])
    p.add_argument("--dead-time", type=float, default=20e-9)
    p.add_argument("--eta-s", type=float, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--mode", choices=["full", "linear_intercept"], default="full")
    p.add_argument("--combine", nargs="*", default=None,
                   help="combine fit-result JSONs into a weighted average instead")
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="fit")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, EmptyStreamError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (SignalDomainError, SignalBelowBackgroundError, SingularFitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FitConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if exc.diagnostics:
            resid = exc.diagnostics.get("residuals")
            print(f"last parameters: {exc.diagnostics.get('params')}", file=sys.stderr)
            if resid is not None:
                print(f"last residuals: {np.asarray(resid).tolist()}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc.filename}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
