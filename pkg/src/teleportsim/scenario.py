"""Scenario runner: schedules acquisition runs, drives the analysis chain
(simulate -> sync -> coincide -> tomograph) and writes reports with
reproducibility manifests.

A scenario schedules one acquisition segment per input state; each segment
splits its duration over the scheduled analysis bases, and every
(segment, basis) pair becomes one simulator run with its own derived seed
and its own ttag/truth files.  Segments without feed-forward post-select
PsiMinus events (receiver does nothing); feed-forward segments post-select
the gated PsiPlus events.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, photonics, timesync, tomography, ttag
from .photonics import LossFluctuation, SimConfig
from .protocol import BASES
from .qcore import standard_ket
from .timesync import ClockModel
from .tomography import CountRecord

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SYNC = 3
EXIT_NONCONVERGENCE = 4

CLASSICAL_STATE_LIMIT = 2.0 / 3.0
CLASSICAL_PROCESS_LIMIT = 0.5

#: eigenbasis of each input state
EIGENBASIS = {"H": "H/V", "V": "H/V", "P": "P/M", "M": "P/M", "R": "R/L", "L": "R/L"}

_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """One input-state acquisition block of a scenario."""

    input_label: str
    duration_s: float
    feedforward: bool = False
    bsm_record: str | None = None  # default: label the analysis post-selects
    bases: dict = field(default_factory=dict)  # basis -> duration fraction

    def __post_init__(self):
        if self.input_label not in EIGENBASIS:
            raise ConfigError(f"unknown input state {self.input_label!r}")
        if self.duration_s <= 0:
            raise ConfigError("segment duration must be positive")
        bases = dict(self.bases) or {EIGENBASIS[self.input_label]: 1.0}
        for basis, fraction in bases.items():
            if basis not in BASES:
                raise ConfigError(f"unknown analysis basis {basis!r}")
            if fraction <= 0:
                raise ConfigError("basis fractions must be positive")
        if abs(sum(bases.values()) - 1.0) > 1e-9:
            raise ConfigError("basis fractions must sum to 1")
        if EIGENBASIS[self.input_label] not in bases:
            raise ConfigError(
                f"segment for {self.input_label!r} must schedule its eigenbasis"
            )
        object.__setattr__(self, "bases", bases)

    @property
    def postselect_label(self) -> int:
        return 1 if self.feedforward else 0

    @property
    def record(self) -> str:
        if self.bsm_record is not None:
            return self.bsm_record
        return "psi_plus" if self.feedforward else "psi_minus"


@dataclass(frozen=True)
class AnalysisSettings:
    window_ns: float = 3.0
    resync_interval_s: float = 180.0
    sync_bin_ps: int = 1000
    sync_search_range_ps: int = 1_000_000
    mc_resamples: int = 1000

    @property
    def window_ps(self) -> int:
        return int(round(self.window_ns * 1000))


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    sim: SimConfig
    segments: tuple
    analysis: AnalysisSettings = AnalysisSettings()

    def runs(self):
        """Expand segments into per-(segment, basis) simulator runs."""
        out = []
        index = 0
        for seg_idx, seg in enumerate(self.segments):
            for basis in sorted(seg.bases):
                run_seed = int(
                    np.random.SeedSequence([self.seed, 500, index]).generate_state(1)[0]
                )
                config = replace(
                    self.sim,
                    input_label=seg.input_label,
                    analysis_basis=basis,
                    duration_s=seg.duration_s * seg.bases[basis],
                    feedforward_enabled=seg.feedforward,
                    bsm_record=seg.record,
                    seed=run_seed,
                )
                run_id = f"{seg_idx:02d}_{seg.input_label}_{basis.replace('/', '')}" + (
                    "_ff" if seg.feedforward else ""
                )
                out.append(RunSpec(run_id=run_id, segment_index=seg_idx, config=config))
                index += 1
        return out


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    segment_index: int
    config: SimConfig


# ----------------------------------------------------------------------
# scenario (de)serialization: strict versioned schema, unknown keys rejected
# ----------------------------------------------------------------------

_SIM_KEYS = {
    "pump_rep_rate_hz", "pair_prob_epr", "pair_prob_hsp", "double_pair_prob_epr",
    "double_pair_prob_hsp", "detector_efficiency", "quantum_link_loss_db",
    "classical_link_efficiency", "dark_rate_intrinsic_hz", "background_rate_hz",
    "jitter_sigma_ps", "fiber_delay_ns", "propagation_delay_us",
    "coincidence_window_ns", "eom_gate_width_ns", "visibility", "depolarization",
    "keep_ungated_bob_tags", "truth_scope", "chunk_s",
}
_FLUCT_KEYS = {"model", "amplitude_db", "correlation_time_s"}
_CLOCK_KEYS = {
    "initial_offset_ps", "drift_bound_ps_per_epoch", "drift_epoch_s",
    "random_walk_sigma_ps_per_sqrt_s",
}
_SEGMENT_KEYS = {"input", "duration_s", "feedforward", "bsm_record", "bases"}
_ANALYSIS_KEYS = {
    "window_ns", "resync_interval_s", "sync_bin_ps", "sync_search_range_ps",
    "mc_resamples",
}


def _check_keys(mapping, allowed, context):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


def scenario_from_dict(data: dict) -> Scenario:
    _check_keys(data, {"version", "name", "seed", "sim", "segments", "analysis"}, "scenario")
    if data.get("version") != _SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario schema version {data.get('version')!r}")
    for key in ("name", "seed", "segments"):
        if key not in data:
            raise ConfigError(f"scenario is missing required key {key!r}")
    sim_data = dict(data.get("sim", {}))
    _check_keys(sim_data, _SIM_KEYS | {"loss_fluctuation", "clock"}, "sim")
    fluct = sim_data.pop("loss_fluctuation", None)
    clock = sim_data.pop("clock", None)
    if fluct is not None:
        _check_keys(fluct, _FLUCT_KEYS, "sim.loss_fluctuation")
        sim_data["loss_fluctuation"] = LossFluctuation(**fluct)
    if clock is not None:
        _check_keys(clock, _CLOCK_KEYS, "sim.clock")
        sim_data["clock"] = ClockModel(**clock)
    try:
        sim = SimConfig(**sim_data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sim config: {exc}") from exc
    segments = []
    for seg in data["segments"]:
        _check_keys(seg, _SEGMENT_KEYS, "segment")
        segments.append(
            Segment(
                input_label=seg["input"],
                duration_s=seg["duration_s"],
                feedforward=seg.get("feedforward", False),
                bsm_record=seg.get("bsm_record"),
                bases=seg.get("bases", {}),
            )
        )
    analysis_data = dict(data.get("analysis", {}))
    _check_keys(analysis_data, _ANALYSIS_KEYS, "analysis")
    return Scenario(
        name=str(data["name"]),
        seed=int(data["seed"]),
        sim=sim,
        segments=tuple(segments),
        analysis=AnalysisSettings(**analysis_data),
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    sim = asdict(scenario.sim)
    sim.pop("input_label")
    sim.pop("analysis_basis")
    sim.pop("duration_s")
    sim.pop("seed")
    sim.pop("feedforward_enabled")
    sim.pop("bsm_record")
    sim.pop("threads")
    return {
        "version": _SCHEMA_VERSION,
        "name": scenario.name,
        "seed": scenario.seed,
        "sim": sim,
        "segments": [
            {
                "input": seg.input_label,
                "duration_s": seg.duration_s,
                "feedforward": seg.feedforward,
                "bsm_record": seg.bsm_record,
                "bases": seg.bases,
            }
            for seg in scenario.segments
        ],
        "analysis": asdict(scenario.analysis),
    }


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(data)


def scenario_hash(scenario: Scenario) -> str:
    blob = json.dumps(scenario_to_dict(scenario), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ----------------------------------------------------------------------
# pipeline stages
# ----------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def simulate_scenario(scenario: Scenario, out_dir, threads: int = 1) -> dict:
    """Run every scheduled acquisition, write ttag/truth files and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    run_meta = []
    for spec in scenario.runs():
        run_dir = out_dir / "runs" / spec.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        config = replace(spec.config, threads=threads)
        result = photonics.run_sim(config)
        ttag.write_ttag(run_dir / "alice.ttag", result.alice_tags)
        ttag.write_ttag(run_dir / "bob.ttag", result.bob_tags)
        ttag.write_jsonl(run_dir / "truth.jsonl", result.truth)
        meta = {
            "run_id": spec.run_id,
            "segment_index": spec.segment_index,
            "input": config.input_label,
            "basis": config.analysis_basis,
            "feedforward": config.feedforward_enabled,
            "duration_s": config.duration_s,
            "seed": config.seed,
            "counters": result.counters,
        }
        with open(run_dir / "run.json", "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
        run_meta.append(meta)
        for name in ("alice.ttag", "bob.ttag", "truth.jsonl", "run.json"):
            files[f"runs/{spec.run_id}/{name}"] = _sha256(run_dir / name)
    manifest = {
        "artifact_version": __version__,
        "scenario": scenario.name,
        "seed": scenario.seed,
        "config_hash": scenario_hash(scenario),
        "threads_requested": threads,
        "files": files,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    with open(out_dir / "scenario.json", "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, sort_keys=True, indent=1)
    return manifest


def analyze_run(config: SimConfig, alice_tags, bob_tags, settings: AnalysisSettings):
    """sync -> coincide for one run; returns fourfolds and sync diagnostics."""
    window_ps = settings.window_ps
    triples = timesync.classify_threefolds(alice_tags, window_ps)
    photon_mask = np.isin(bob_tags["channel"], (ttag.CHANNELS["e"], ttag.CHANNELS["f"]))
    bob_photon_times = bob_tags["time_ps"][photon_mask].astype(np.int64)
    track = timesync.sync_track(
        triples.times_ps,
        bob_photon_times,
        resync_interval_s=settings.resync_interval_s,
        expected_latency_ps=config.expected_latency_ps,
        gps_prior_ps=0.0,
        bin_ps=settings.sync_bin_ps,
        search_range_ps=settings.sync_search_range_ps,
    )
    fourfolds = timesync.match_fourfolds(
        triples.times_ps,
        triples.labels,
        bob_tags,
        window_ps,
        sync=track,
        expected_latency_ps=config.expected_latency_ps,
    )
    return triples, track, fourfolds


def _counts_for_segment(per_basis_counts, input_label):
    records = []
    for basis, (n_first, n_second) in sorted(per_basis_counts.items()):
        records.append(CountRecord(basis, n_first, n_second))
    return records


def analyze_scenario(scenario: Scenario, out_dir) -> dict:
    """Full analysis over a simulated scenario directory; returns the report."""
    out_dir = Path(out_dir)
    segment_counts = {}
    sync_reports = {}
    run_rows = []
    for spec in scenario.runs():
        run_dir = out_dir / "runs" / spec.run_id
        alice_tags = ttag.read_ttag(run_dir / "alice.ttag")
        bob_tags = ttag.read_ttag(run_dir / "bob.ttag")
        triples, track, fourfolds = analyze_run(
            spec.config, alice_tags, bob_tags, scenario.analysis
        )
        seg = scenario.segments[spec.segment_index]
        select = fourfolds.labels == seg.postselect_label
        channels = fourfolds.bob_channels[select]
        n_first = int((channels == ttag.CHANNELS["e"]).sum())
        n_second = int((channels == ttag.CHANNELS["f"]).sum())
        per_seg = segment_counts.setdefault(spec.segment_index, {})
        pair = per_seg.setdefault(spec.config.analysis_basis, [0, 0])
        pair[0] += n_first
        pair[1] += n_second
        sync_reports[spec.run_id] = [
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
        run_rows.append(
            {
                "run_id": spec.run_id,
                "triples": triples.n_valid,
                "triples_discarded": triples.n_discarded,
                "fourfolds_selected": n_first + n_second,
            }
        )

    states = []
    rho_by_label = {}
    convergence_ok = True
    for seg_idx, seg in enumerate(scenario.segments):
        per_basis = {
            basis: tuple(pair) for basis, pair in segment_counts.get(seg_idx, {}).items()
        }
        ideal = standard_ket(seg.input_label)
        n_total = int(sum(a + b for a, b in per_basis.values()))
        entry = {
            "input": seg.input_label,
            "feedforward": seg.feedforward,
            "n_fourfolds": n_total,
            "counts": {b: list(v) for b, v in sorted(per_basis.items())},
        }
        if seg.feedforward or set(per_basis) != set(BASES):
            eigen = EIGENBASIS[seg.input_label]
            n_first, n_second = per_basis[eigen]
            est = tomography.monte_carlo_sigma_binary(
                n_first,
                n_second,
                n_resamples=scenario.analysis.mc_resamples,
                seed=scenario.seed + seg_idx,
            )
            entry["method"] = "eigenbasis_fraction"
        else:
            records = _counts_for_segment(per_basis, seg.input_label)
            result = tomography.mle_reconstruct(records)
            convergence_ok = convergence_ok and result.converged
            rho_by_label[seg.input_label] = result.rho
            est = tomography.monte_carlo_sigma(
                records,
                ideal,
                n_resamples=scenario.analysis.mc_resamples,
                seed=scenario.seed + seg_idx,
            )
            entry["method"] = "mle_tomography"
            entry["rho"] = {
                "re": np.real(result.rho.entries).tolist(),
                "im": np.imag(result.rho.entries).tolist(),
            }
        entry["fidelity"] = est.value
        entry["sigma"] = est.sigma
        entry["above_classical_limit"] = bool(est.value > CLASSICAL_STATE_LIMIT)
        states.append(entry)

    report = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "config_hash": scenario_hash(scenario),
        "states": states,
        "runs": run_rows,
        "sync": sync_reports,
        "mle_converged": convergence_ok,
    }
    no_ff = [s for s in states if not s["feedforward"]]
    if no_ff:
        fidelities = np.array([s["fidelity"] for s in no_ff])
        sigmas = np.array([s["sigma"] for s in no_ff])
        report["average_fidelity"] = {
            "value": float(fidelities.mean()),
            "sigma": float(np.sqrt(np.sum(sigmas**2)) / len(no_ff)),
            "above_classical_limit": bool(fidelities.mean() > CLASSICAL_STATE_LIMIT),
        }
    if set(rho_by_label) == set(tomography.PROCESS_INPUT_LABELS):
        chi = tomography.process_from_states(sorted(rho_by_label.items()))
        fproc = tomography.process_fidelity(chi)
        report["process"] = {
            "chi_re": np.real(chi.chi).tolist(),
            "chi_im": np.imag(chi.chi).tolist(),
            "fidelity": fproc,
            "sigma": _process_fidelity_sigma(scenario, segment_counts),
            "above_classical_limit": bool(fproc > CLASSICAL_PROCESS_LIMIT),
        }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    return report


def _process_fidelity_sigma(scenario: Scenario, segment_counts, n_resamples=200):
    """Poissonian Monte Carlo spread of the process fidelity."""
    tomo_segments = []
    for seg_idx, seg in enumerate(scenario.segments):
        if seg.feedforward:
            continue
        per_basis = segment_counts.get(seg_idx, {})
        if set(per_basis) != set(BASES):
            continue
        records = [
            CountRecord(basis, pair[0], pair[1]) for basis, pair in sorted(per_basis.items())
        ]
        tomo_segments.append((seg.input_label, records))
    if {label for label, _ in tomo_segments} != set(tomography.PROCESS_INPUT_LABELS):
        return None
    rng = np.random.default_rng(scenario.seed + 9001)
    values = []
    for _ in range(n_resamples):
        pairs = []
        for label, records in tomo_segments:
            resampled = tomography._resample_counts(records, rng)
            pairs.append((label, tomography.mle_reconstruct(resampled).rho))
        values.append(tomography.process_fidelity(tomography.process_from_states(pairs)))
    return float(np.std(np.asarray(values), ddof=1))


# ----------------------------------------------------------------------
# pinned paper-calibrated scenarios
# ----------------------------------------------------------------------

#: single fitted imperfection pair used by both pinned scenarios: the
#: visibility/depolarization values are a FIT chosen so the desk-scale
#: pipeline lands on the published fidelities, not a prediction.
CALIBRATED_VISIBILITY = 0.810
CALIBRATED_DEPOLARIZATION = 0.203

_DESK_SIM = dict(
    pair_prob_epr=0.02,
    pair_prob_hsp=0.02,
    detector_efficiency=0.95,
    quantum_link_loss_db=33.55,
    loss_fluctuation=LossFluctuation(model="ou", amplitude_db=5.45, correlation_time_s=60.0),
    classical_link_efficiency=0.213,
    dark_rate_intrinsic_hz=15.0,
    background_rate_hz=100.0,
    visibility=CALIBRATED_VISIBILITY,
    depolarization=CALIBRATED_DEPOLARIZATION,
    clock=ClockModel(initial_offset_ps=23_000.0),
)

_STAGE1_BASES = {"H/V": 0.2, "P/M": 0.2, "R/L": 0.2}


def _stage1_bases(label):
    bases = dict(_STAGE1_BASES)
    bases[EIGENBASIS[label]] = 0.6
    return bases


def paper_stage1_scenario(seed: int = 20120913) -> Scenario:
    """No feed-forward: four input states, PsiMinus post-selection, full
    state tomography per state (eigenbasis-weighted schedule)."""
    return Scenario(
        name="paper-stage1",
        seed=seed,
        sim=SimConfig(**_DESK_SIM),
        segments=(
            Segment("H", 260.0, bases=_stage1_bases("H")),
            Segment("V", 260.0, bases=_stage1_bases("V")),
            Segment("P", 1000.0, bases=_stage1_bases("P")),
            Segment("L", 2400.0, bases=_stage1_bases("L")),
        ),
    )


def paper_stage2_scenario(seed: int = 20120914) -> Scenario:
    """Active feed-forward: P and R inputs analyzed in their eigenbases,
    PsiPlus post-selection gated on the classical link."""
    return Scenario(
        name="paper-stage2",
        seed=seed,
        sim=SimConfig(**_DESK_SIM),
        segments=(
            Segment("P", 5200.0, feedforward=True),
            Segment("R", 1000.0, feedforward=True),
        ),
    )


def ideal_scenario(seed: int = 7) -> Scenario:
    """Noiseless short pipeline check: every fidelity should be ~1."""
    sim = SimConfig(
        pair_prob_epr=0.003,
        pair_prob_hsp=0.003,
        double_pair_prob_epr=0.0,
        double_pair_prob_hsp=0.0,
        detector_efficiency=1.0,
        quantum_link_loss_db=6.0,
        loss_fluctuation=LossFluctuation(model="constant", amplitude_db=0.0),
        dark_rate_intrinsic_hz=0.0,
        background_rate_hz=0.0,
        clock=ClockModel(initial_offset_ps=12_000.0, random_walk_sigma_ps_per_sqrt_s=20.0),
    )
    return Scenario(
        name="ideal",
        seed=seed,
        sim=sim,
        segments=(
            Segment("H", 40.0, bases=_stage1_bases("H")),
            Segment("V", 40.0, bases=_stage1_bases("V")),
            Segment("P", 40.0, bases=_stage1_bases("P")),
            Segment("L", 40.0, bases=_stage1_bases("L")),
        ),
        analysis=AnalysisSettings(mc_resamples=300),
    )


PINNED_SCENARIOS = {
    "paper-stage1": paper_stage1_scenario,
    "paper-stage2": paper_stage2_scenario,
    "ideal": ideal_scenario,
}
