"""Command-line front end: run curves from spec files, inspect scenes.

Exit codes: 0 success, 1 unusable configuration (bad flags, unreadable
or invalid spec file, output collision), 2 runtime failure.  Progress
and diagnostics go to standard error; data goes to files under --out
or to standard output for the info subcommands.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, load_spec
from .detection import detector_for, null_law, sample_null_statistics, threshold
from .estimation import SearchSpec, _as_kind, build_grid, estimate
from .experiments import (ExperimentSpec, fit_diversity, run_localization_curve,
                          run_mse_curve, run_pmd_curve, run_roc, verify_lemma6,
                          write_curve)
from .geometry import true_delays
from .localization import localize
from .synth import SnrSpec, energy_for_snr, synth_extended, synth_phased_array
from .waveforms import gram

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

_CURVES = ("pmd", "mse", "roc", "localization")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _default_threads() -> int:
    raw = os.environ.get("WIDEMIMO_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _load(args) -> ExperimentSpec:
    spec = load_spec(args.spec)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if overrides:
        d = spec.to_dict()
        d.update(overrides)
        d["snr_grid_db"] = tuple(d["snr_grid_db"])
        d["target_km"] = tuple(d["target_km"])
        spec = ExperimentSpec(**d)
    return spec


def _emit(result, args, name: str) -> None:
    """Write a CurveResult per --out/--format, or print CSV to stdout."""
    fmt = getattr(args, "format", "csv")
    if getattr(args, "out", None):
        paths = write_curve(result, args.out, name, force=args.force)
        _progress(f"wrote {paths[0]}")
        if fmt == "json":
            blob = {"kind": result.kind, "points": result.points,
                    "metadata": result.metadata}
            jpath = os.path.join(args.out, f"{name}.data.json")
            tmp = jpath + ".tmp"
            with open(tmp, "w") as fh:
                json.dump(blob, fh, indent=1, sort_keys=True)
            os.replace(tmp, jpath)
            _progress(f"wrote {jpath}")
    else:
        if fmt == "json":
            json.dump({"kind": result.kind, "points": result.points,
                       "metadata": result.metadata}, sys.stdout, indent=1,
                      sort_keys=True)
            print()
        else:
            sys.stdout.write(result.to_csv())


def _cmd_run(args) -> int:
    spec = _load(args)
    threads = args.threads if args.threads else _default_threads()
    _progress(f"spec {args.spec} hash {spec.spec_hash()} curve {args.curve}")
    if args.curve == "pmd":
        result = run_pmd_curve(spec, genie_delays=not args.pipeline,
                               progress=_progress)
    elif args.curve == "roc":
        result = run_roc(spec, snr_fixed=args.snr, progress=_progress)
    elif args.curve == "mse":
        result = run_mse_curve(spec, threads=threads, progress=_progress)
    else:
        result = run_localization_curve(spec, threads=threads,
                                        progress=_progress)
    name = args.name or f"{args.curve}_{spec.scenario}_{spec.n_tx}x{spec.n_rx}"
    _emit(result, args, name)
    if args.curve == "pmd" and args.fit:
        try:
            fit = fit_diversity(result)
            _progress(f"diversity slope {fit.slope:.3f} "
                      f"r^2 {fit.r_squared:.4f} over snr {fit.fit_range}")
        except ValueError as exc:
            _progress(f"diversity fit skipped: {exc}")
    return EXIT_OK


def _cmd_scene_info(args) -> int:
    spec = _load(args)
    scene = spec.scene()
    tau = true_delays(scene)
    info = {
        "scenario": spec.scenario,
        "n_tx": scene.n_tx,
        "n_rx": scene.n_rx,
        "tx_m": scene.tx.tolist(),
        "rx_m": scene.rx.tolist(),
        "target_m": scene.target.tolist(),
        "carrier_freq_hz": scene.carrier_freq_hz,
        "wavelength_m": scene.c / scene.carrier_freq_hz,
        "path_loss_exp": scene.path_loss_exp,
        "delays_s": tau.tau.tolist(),
        "delay_spread_s": float(tau.tau.max() - tau.tau.min()),
    }
    json.dump(info, sys.stdout, indent=1, sort_keys=True)
    print()
    return EXIT_OK


def _cmd_bank_info(args) -> int:
    spec = _load(args)
    scene = spec.scene()
    bank = spec.bank(scene)
    tau = true_delays(scene)
    rel = tau.tau - bank.window_start
    g11 = gram(bank, rel[0, 0], rel[0, 0], 1, 1).real
    worst = 0.0
    for m in range(1, scene.n_tx + 1):
        for mp in range(1, scene.n_tx + 1):
            if m == mp:
                continue
            g = gram(bank, rel[0, 0], rel[0, 0], m, mp)
            worst = max(worst, abs(g) / g11)
    info = {
        "n_waveforms": bank.n_waveforms,
        "duration_s": bank.duration,
        "sample_period_s": bank.sample_period,
        "num_samples": bank.num_samples,
        "window_start_s": bank.window_start,
        "window_slack_samples":
            (bank.window_start + bank.num_samples * bank.sample_period
             - (tau.tau.max() + bank.duration)) / bank.sample_period,
        "aligned_cross_gram_over_g11": worst,
    }
    json.dump(info, sys.stdout, indent=1, sort_keys=True)
    print()
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    """Empirical false-alarm rate of the analytic threshold at fixed delays."""
    spec = _load(args)
    scene = spec.scene()
    bank = spec.bank(scene)
    tau = true_delays(scene)
    energy = energy_for_snr(SnrSpec(args.snr), scene, bank)
    kind = detector_for(spec.detector)
    theta = threshold(kind, tau, scene, bank, energy, spec.pfa)
    n = spec.trials
    rng = np.random.default_rng(spec.seed)
    stats = sample_null_statistics(kind, tau, scene, bank, energy, n, rng)
    hits = int(np.sum(stats > theta))
    rate = hits / n
    se = float(np.sqrt(spec.pfa * (1.0 - spec.pfa) / n))
    dev = abs(rate - spec.pfa) / se if se > 0 else float("inf")
    report = {
        "detector": kind.value,
        "pfa_target": spec.pfa,
        "trials": n,
        "threshold": theta,
        "pfa_empirical": rate,
        "binomial_stderr": se,
        "deviation_sigmas": dev,
        "within_3_sigma": bool(dev <= 3.0),
    }
    json.dump(report, sys.stdout, indent=1, sort_keys=True)
    print()
    return EXIT_OK if report["within_3_sigma"] else EXIT_RUNTIME


def _cmd_localize(args) -> int:
    """One-shot: synthesize, estimate, localize, print the estimate."""
    spec = _load(args)
    scene = spec.scene()
    bank = spec.bank(scene)
    tau0 = true_delays(scene)
    snr = SnrSpec(args.snr)
    if spec.scenario == "phased_array":
        model = "point" if _as_kind(spec.estimator).is_point else "extended"
        snap = synth_phased_array(scene, bank, tau0, snr, [spec.seed],
                                  target_model=model)
    else:
        snap = synth_extended(scene, bank, tau0, snr, [spec.seed])
    search = spec.search()
    plan = build_grid(scene, search)
    res = estimate(spec.estimator, snap, scene, bank, search=search, plan=plan)
    loc = localize(scene, res.tau_hat, res.grid_point)
    report = {
        "snr_db": args.snr,
        "estimator": res.kind.value,
        "objective": res.objective,
        "grid_point_m": list(res.grid_point),
        "x_hat_m": loc.x_hat.tolist(),
        "error_m": float(np.linalg.norm(loc.x_hat - scene.target)),
        "iterations": loc.iterations,
        "converged": loc.converged,
    }
    json.dump(report, sys.stdout, indent=1, sort_keys=True)
    print()
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.suite != "lemma6":
        _progress(f"unknown suite {args.suite!r}; available: lemma6")
        return EXIT_CONFIG
    m = args.M
    trials = args.trials or 2_000_000
    fit = verify_lemma6(m, trials=trials, seed=args.seed or 0)
    slope = fit.slope
    tol = 0.15
    ok = abs(slope - m) <= tol * m
    print(f"small-ball decay slope for M={m}: {slope:.4f} "
          f"(target {m}, tolerance +-{tol * m:.2f}): "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="widemimo",
        description="Simulation and inference for widely spaced MIMO radar.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_spec=True):
        p.add_argument("--spec", required=need_spec,
                       help="path to a TOML experiment file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the spec's seed")
        p.add_argument("--trials", type=int, default=None,
                       help="override the spec's trial count")

    p_run = sub.add_parser("run", help="run a curve experiment")
    add_common(p_run)
    p_run.add_argument("--curve", choices=_CURVES, default="pmd")
    p_run.add_argument("--out", default=None,
                       help="output directory (default: CSV to stdout)")
    p_run.add_argument("--name", default=None, help="output basename")
    p_run.add_argument("--force", action="store_true",
                       help="overwrite outputs with a different spec hash")
    p_run.add_argument("--format", choices=("csv", "json"), default="csv")
    p_run.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: WIDEMIMO_THREADS or 1)")
    p_run.add_argument("--snr", type=float, default=0.0,
                       help="fixed SNR in dB for --curve roc")
    p_run.add_argument("--pipeline", action="store_true",
                       help="pmd with estimated delays instead of genie")
    p_run.add_argument("--fit", action="store_true",
                       help="print a diversity-slope fit after a pmd run")

    p_scene = sub.add_parser("scene-info", help="print scene geometry")
    add_common(p_scene)

    p_bank = sub.add_parser("bank-info", help="print waveform bank summary")
    add_common(p_bank)

    p_cal = sub.add_parser("calibrate",
                           help="empirical false-alarm rate vs the "
                                "analytic threshold")
    add_common(p_cal)
    p_cal.add_argument("--snr", type=float, default=0.0,
                       help="SNR in dB fixing the energy in the statistic")

    p_loc = sub.add_parser("localize",
                           help="one-shot estimate + localization")
    add_common(p_loc)
    p_loc.add_argument("--snr", type=float, default=20.0)

    p_ver = sub.add_parser("verify", help="run a direct numeric check")
    p_ver.add_argument("--suite", required=True, help="suite name (lemma6)")
    p_ver.add_argument("--M", type=int, default=2,
                       help="number of squared terms in the small-ball sum")
    p_ver.add_argument("--trials", type=int, default=None)
    p_ver.add_argument("--seed", type=int, default=None)
    return parser


_HANDLERS = {
    "run": _cmd_run,
    "scene-info": _cmd_scene_info,
    "bank-info": _cmd_bank_info,
    "calibrate": _cmd_calibrate,
    "localize": _cmd_localize,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; fold into the config-error code
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        _progress(f"error: {exc}")
        return EXIT_CONFIG
    except FileExistsError as exc:
        _progress(f"error: {exc} (pass --force to overwrite)")
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        _progress(f"runtime failure: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
