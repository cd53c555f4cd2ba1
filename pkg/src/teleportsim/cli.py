"""Command-line pipeline driver.

Subcommands: simulate, sync, coincide, tomo-state, tomo-process, analyze,
reproduce.  Most flags can also be supplied through environment variables
prefixed TELEPORTSIM_ (e.g. TELEPORTSIM_THREADS=4); an explicit flag wins.

Exit codes: 0 success, 2 configuration error, 3 synchronization failure,
4 tomography non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, scenario as scen, timesync, tomography, ttag
from .scenario import (
    EXIT_CONFIG,
    EXIT_NONCONVERGENCE,
    EXIT_OK,
    EXIT_SYNC,
    ConfigError,
    PINNED_SCENARIOS,
)
from .tomography import CountRecord

ENV_PREFIX = "TELEPORTSIM_"


def _env_default(name, fallback, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return fallback
    return cast(raw)


def _load_scenario_arg(args):
    if args.config:
        scenario = scen.load_scenario(args.config)
    elif args.pinned:
        scenario = PINNED_SCENARIOS[args.pinned]()
    else:
        raise ConfigError("provide --config PATH or --pinned NAME")
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.window_ns is not None:
        scenario = replace(
            scenario, analysis=replace(scenario.analysis, window_ns=args.window_ns)
        )
    if args.resync_s is not None:
        scenario = replace(
            scenario, analysis=replace(scenario.analysis, resync_interval_s=args.resync_s)
        )
    return scenario


def cmd_simulate(args) -> int:
    scenario = _load_scenario_arg(args)
    manifest = scen.simulate_scenario(scenario, args.out, threads=args.threads)
    print(f"simulated scenario {scenario.name!r}: {len(manifest['files'])} files -> {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    scenario = _load_scenario_arg(args)
    report = scen.analyze_scenario(scenario, args.out)
    for state in report["states"]:
        tag = " ff" if state["feedforward"] else ""
        print(
            f"{state['input']}{tag}: f = {state['fidelity']:.3f} +- {state['sigma']:.3f} "
            f"({state['n_fourfolds']} four-folds)"
        )
    if "average_fidelity" in report:
        avg = report["average_fidelity"]
        print(f"average: {avg['value']:.3f} +- {avg['sigma']:.3f}")
    if "process" in report:
        print(f"process fidelity: {report['process']['fidelity']:.3f}")
    return EXIT_OK


def cmd_sync(args) -> int:
    alice = ttag.read_ttag(args.alice)
    bob = ttag.read_ttag(args.bob)
    photon_mask = np.isin(bob["channel"], (ttag.CHANNELS["e"], ttag.CHANNELS["f"]))
    track = timesync.sync_track(
        alice["time_ps"].astype(np.int64),
        bob["time_ps"][photon_mask].astype(np.int64),
        resync_interval_s=args.resync_s if args.resync_s is not None else 180.0,
        expected_latency_ps=int(args.latency_us * 1_000_000),
    )
    records = [
        {
            "epoch_start_s": est.epoch_start_s,
            "offset_ps": est.offset_ps,
            "peak_significance": (
                est.peak_significance if np.isfinite(est.peak_significance) else None
            ),
            "valid": est.valid,
        }
        for est in track.estimates
    ]
    ttag.write_jsonl(args.out, records)
    print(f"{len(records)} sync epochs -> {args.out}")
    return EXIT_OK


def cmd_coincide(args) -> int:
    alice = ttag.read_ttag(args.alice)
    bob = ttag.read_ttag(args.bob)
    window_ps = int(round((args.window_ns if args.window_ns is not None else 3.0) * 1000))
    triples = timesync.classify_threefolds(alice, window_ps)
    sync_track = None
    if args.sync:
        epochs = [rec for rec in ttag.read_jsonl(args.sync) if rec.get("valid", True)]
        if not epochs:
            raise timesync.TimeSyncError("sync report has no valid epochs")
        anchors = np.array(
            [rec["epoch_start_s"] * timesync.PS_PER_S for rec in epochs], dtype=np.int64
        )
        offsets = np.array([rec["offset_ps"] for rec in epochs], dtype=np.float64)
        sync_track = timesync.SyncTrack(estimates=[], anchors_ps=anchors, offsets_ps=offsets)
    fourfolds = timesync.match_fourfolds(
        triples.times_ps,
        triples.labels,
        bob,
        window_ps,
        sync=sync_track,
        expected_latency_ps=int(args.latency_us * 1_000_000),
    )
    records = [
        {
            "alice_time_ps": int(a),
            "bob_time_ps": int(b),
            "bsm_label": timesync.LABEL_TO_BELL[int(label)].value,
            "bob_channel": ttag.CHANNEL_NAMES[int(ch)],
        }
        for a, b, label, ch in zip(
            fourfolds.alice_times_ps,
            fourfolds.bob_times_ps,
            fourfolds.labels,
            fourfolds.bob_channels,
        )
    ]
    ttag.write_jsonl(args.out, records)
    print(
        f"{triples.n_valid} triples ({triples.n_discarded} discarded), "
        f"{fourfolds.count} four-folds -> {args.out}"
    )
    return EXIT_OK


def _read_counts_csv(path):
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                CountRecord(row["basis"], int(row["n_first"]), int(row["n_second"]))
            )
    return records


def cmd_tomo_state(args) -> int:
    records = _read_counts_csv(args.counts)
    result = tomography.mle_reconstruct(records)
    out = {
        "rho": {
            "re": np.real(result.rho.entries).tolist(),
            "im": np.imag(result.rho.entries).tolist(),
        },
        "log_likelihood": result.log_likelihood,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    if args.ideal:
        from .qcore import standard_ket

        est = tomography.monte_carlo_sigma(
            records, standard_ket(args.ideal), n_resamples=args.resamples, seed=args.seed or 0
        )
        out["ideal"] = args.ideal
        out["fidelity"] = est.value
        out["sigma"] = est.sigma
    with open(args.out, "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=1)
    print(f"reconstruction -> {args.out} (converged={result.converged})")
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def cmd_tomo_process(args) -> int:
    pairs = []
    for path in args.states:
        with open(path) as fh:
            data = json.load(fh)
        if "ideal" not in data:
            raise ConfigError(f"{path}: state file lacks the 'ideal' input label")
        from .qcore import DensityMatrix

        rho = DensityMatrix(np.array(data["rho"]["re"]) + 1j * np.array(data["rho"]["im"]))
        pairs.append((data["ideal"], rho))
    chi = tomography.process_from_states(pairs)
    out = {
        "chi_re": np.real(chi.chi).tolist(),
        "chi_im": np.imag(chi.chi).tolist(),
        "process_fidelity": tomography.process_fidelity(chi),
    }
    with open(args.out, "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=1)
    print(f"process fidelity {out['process_fidelity']:.4f} -> {args.out}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out_root = Path(args.out)
    summary = {}
    for name in ("paper-stage1", "paper-stage2"):
        scenario = PINNED_SCENARIOS[name]()
        out_dir = out_root / name
        scen.simulate_scenario(scenario, out_dir, threads=args.threads)
        report = scen.analyze_scenario(scenario, out_dir)
        summary[name] = report
    stage1 = summary["paper-stage1"]
    with open(out_root / "stage1_fidelities.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input", "fidelity", "sigma", "n_fourfolds"])
        for state in stage1["states"]:
            writer.writerow(
                [state["input"], f"{state['fidelity']:.6f}", f"{state['sigma']:.6f}", state["n_fourfolds"]]
            )
    with open(out_root / "stage2_fidelities.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input", "fidelity", "sigma", "n_fourfolds"])
        for state in summary["paper-stage2"]["states"]:
            writer.writerow(
                [state["input"], f"{state['fidelity']:.6f}", f"{state['sigma']:.6f}", state["n_fourfolds"]]
            )
    with open(out_root / "process_matrix.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["l", "k", "re", "im"])
        chi_re = stage1["process"]["chi_re"]
        chi_im = stage1["process"]["chi_im"]
        for l in range(4):
            for k in range(4):
                writer.writerow([l, k, f"{chi_re[l][k]:.6f}", f"{chi_im[l][k]:.6f}"])
    digest = {
        "stage1": {
            s["input"]: {"fidelity": s["fidelity"], "sigma": s["sigma"]}
            for s in stage1["states"]
        },
        "stage1_average": stage1["average_fidelity"],
        "stage2": {
            s["input"]: {"fidelity": s["fidelity"], "sigma": s["sigma"]}
            for s in summary["paper-stage2"]["states"]
        },
        "process_fidelity": stage1["process"]["fidelity"],
    }
    with open(out_root / "summary.json", "w") as fh:
        json.dump(digest, fh, sort_keys=True, indent=1)
    print(json.dumps(digest["stage1"], indent=1))
    print(json.dumps(digest["stage2"], indent=1))
    print(f"process fidelity: {digest['process_fidelity']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teleportsim",
        description="Two-station teleportation link simulator and analysis chain",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_args(p):
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--pinned", choices=sorted(PINNED_SCENARIOS), help="built-in scenario")
        p.add_argument("--seed", type=int, default=_env_default("seed", None, int))
        p.add_argument("--out", default=_env_default("out", "out"), help="output directory")
        p.add_argument(
            "--threads", type=int, default=_env_default("threads", 1, int),
            help="simulation worker threads (default 1 for bit-stable output)",
        )
        p.add_argument("--window-ns", type=float, default=_env_default("window_ns", None, float))
        p.add_argument("--resync-s", type=float, default=_env_default("resync_s", None, float))

    p_sim = sub.add_parser("simulate", help="run the scheduled acquisitions, write ttag files")
    add_scenario_args(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="sync + coincide + tomography over simulated files")
    add_scenario_args(p_ana)
    p_ana.set_defaults(func=cmd_analyze)

    p_sync = sub.add_parser("sync", help="epoch-wise clock offset recovery for one run")
    p_sync.add_argument("alice")
    p_sync.add_argument("bob")
    p_sync.add_argument("--out", default="sync.jsonl")
    p_sync.add_argument("--resync-s", type=float, default=_env_default("resync_s", None, float))
    p_sync.add_argument("--latency-us", type=float, default=477.5)
    p_sync.set_defaults(func=cmd_sync)

    p_coin = sub.add_parser("coincide", help="triple classification and four-fold matching")
    p_coin.add_argument("alice")
    p_coin.add_argument("bob")
    p_coin.add_argument("--sync", help="sync.jsonl from the sync subcommand")
    p_coin.add_argument("--out", default="fourfolds.jsonl")
    p_coin.add_argument("--window-ns", type=float, default=_env_default("window_ns", None, float))
    p_coin.add_argument("--latency-us", type=float, default=477.5)
    p_coin.set_defaults(func=cmd_coincide)

    p_ts = sub.add_parser("tomo-state", help="MLE state reconstruction from a counts CSV")
    p_ts.add_argument("counts", help="CSV with columns basis,n_first,n_second")
    p_ts.add_argument("--ideal", help="ideal state label for fidelity")
    p_ts.add_argument("--resamples", type=int, default=1000)
    p_ts.add_argument("--seed", type=int, default=_env_default("seed", None, int))
    p_ts.add_argument("--out", default="rho.json")
    p_ts.set_defaults(func=cmd_tomo_state)

    p_tp = sub.add_parser("tomo-process", help="analytic process matrix from four state files")
    p_tp.add_argument("states", nargs=4, help="four tomo-state outputs (H, V, P, L)")
    p_tp.add_argument("--out", default="chi.json")
    p_tp.set_defaults(func=cmd_tomo_process)

    p_rep = sub.add_parser("reproduce", help="run the pinned paper-calibrated scenarios")
    p_rep.add_argument("--out", default=_env_default("out", "reproduce-out"))
    p_rep.add_argument("--threads", type=int, default=_env_default("threads", 1, int))
    p_rep.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ttag.TtagFormatError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except timesync.TimeSyncError as exc:
        print(f"synchronization failed: {exc}", file=sys.stderr)
        return EXIT_SYNC


if __name__ == "__main__":
    sys.exit(main())
