"""Clock models, offset recovery by cross-correlation, and windowed
coincidence identification.

Both stations discipline their time-taggers to GPS, which leaves a bounded
slow drift between the two time bases; the residual offset is recovered
per epoch from the correlation peak between the two tag streams and applied
as a piecewise-linear correction to the receiver's tags.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels, ttag
from .qcore import BellState

PS_PER_S = 1_000_000_000_000

RESYNC_MIN_S = 45.0
RESYNC_MAX_S = 180.0
DEFAULT_BIN_PS = 1000
DEFAULT_SEARCH_RANGE_PS = 1_000_000
DEFAULT_SIGNIFICANCE_THRESHOLD = 5.0
MAX_CONSECUTIVE_SYNC_FAILURES = 3

LABEL_TO_BELL = {0: BellState.PSI_MINUS, 1: BellState.PSI_PLUS}


class SyncPeakNotFound(RuntimeError):
    """No significant correlation peak in this epoch."""

    def __init__(self, message, significance):
        super().__init__(message)
        self.significance = significance


class TimeSyncError(RuntimeError):
    """Too many consecutive epochs without a usable correlation peak."""


@dataclass(frozen=True)
class ClockModel:
    """GPS-disciplined clock pair: constant initial offset plus a bounded
    random-walk drift (reflected so any 990 s window stays within the bound)."""

    initial_offset_ps: float = 0.0
    drift_bound_ps_per_epoch: float = 5000.0
    drift_epoch_s: float = 990.0
    random_walk_sigma_ps_per_sqrt_s: float = 160.0

    def offset_series(self, duration_s: float, rng: np.random.Generator, dt_s: float = 1.0):
        """Sampled relative clock offset on a regular grid.

        Every new point is folded (reflected) into the interval that keeps it
        within the drift bound of all points in the trailing 990 s window, so
        the bound holds for any window by induction.  Returns an OffsetSeries
        evaluating between grid points with linear interpolation.
        """
        steps = int(np.ceil(duration_s / dt_s)) + 1
        window = max(int(round(self.drift_epoch_s / dt_s)), 1)
        bound = self.drift_bound_ps_per_epoch
        increments = rng.normal(
            0.0, self.random_walk_sigma_ps_per_sqrt_s * np.sqrt(dt_s), size=steps
        )
        walk = np.empty(steps + 1)
        walk[0] = 0.0
        max_q = deque([(0, 0.0)])  # decreasing values
        min_q = deque([(0, 0.0)])  # increasing values
        for k in range(1, steps + 1):
            while max_q and max_q[0][0] < k - window:
                max_q.popleft()
            while min_q and min_q[0][0] < k - window:
                min_q.popleft()
            lo = max_q[0][1] - bound
            hi = min_q[0][1] + bound
            value = walk[k - 1] + increments[k - 1]
            for _ in range(8):
                if value > hi:
                    value = 2.0 * hi - value
                elif value < lo:
                    value = 2.0 * lo - value
                else:
                    break
            value = min(max(value, lo), hi)
            walk[k] = value
            while max_q and max_q[-1][1] <= value:
                max_q.pop()
            max_q.append((k, value))
            while min_q and min_q[-1][1] >= value:
                min_q.pop()
            min_q.append((k, value))
        grid_ps = (np.arange(steps + 1) * dt_s * PS_PER_S).astype(np.int64)
        return OffsetSeries(grid_ps, self.initial_offset_ps + walk)


@dataclass(frozen=True)
class OffsetSeries:
    grid_ps: np.ndarray
    offsets_ps: np.ndarray

    def at(self, times_ps) -> np.ndarray:
        return np.interp(np.asarray(times_ps, dtype=np.float64), self.grid_ps, self.offsets_ps)


@dataclass(frozen=True)
class SyncEstimate:
    epoch_start_s: float
    offset_ps: float
    peak_significance: float
    valid: bool = True


@dataclass(frozen=True)
class CoincidenceEvent:
    kind: str
    channels: tuple
    time_ps: int
    bsm_label: BellState | None = None


def _require_sorted(times, name):
    times = np.asarray(times, dtype=np.int64)
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise ValueError(f"{name} must be time-ordered")
    return times


def cross_correlate(
    alice_times_ps,
    bob_times_ps,
    bin_ps: int = DEFAULT_BIN_PS,
    search_range_ps: int = DEFAULT_SEARCH_RANGE_PS,
    prior_ps: float = 0.0,
    significance_threshold: float = DEFAULT_SIGNIFICANCE_THRESHOLD,
) -> SyncEstimate:
    """Recover the clock offset as the peak of the (t_bob - t_alice) histogram.

    The search covers prior_ps +- search_range_ps at bin_ps resolution; the
    peak position is refined by parabolic interpolation over the three bins
    around the maximum, ties broken toward the smallest absolute offset.
    Significance is the peak height in off-peak standard deviations above the
    off-peak mean; estimates at or below the threshold raise SyncPeakNotFound.
    """
    if bin_ps < 1:
        raise ValueError("bin_ps must be >= 1")
    a = _require_sorted(alice_times_ps, "alice stream")
    b = _require_sorted(bob_times_ps, "bob stream")
    if a.size == 0 or b.size == 0:
        raise ValueError("cross_correlate requires non-empty streams")
    # bins centered on the prior so a zero-residual peak sits mid-bin
    lo = int(round(prior_ps)) - int(search_range_ps) - int(bin_ps) // 2
    hi = int(round(prior_ps)) + int(search_range_ps) + (int(bin_ps) - 1) // 2
    counts = kernels.lag_histogram(a, b, np.int64(lo), np.int64(hi), np.int64(bin_ps))
    centers = lo + bin_ps / 2.0 + np.arange(counts.size) * bin_ps
    peak_val = counts.max()
    candidates = np.flatnonzero(counts == peak_val)
    k = int(candidates[np.argmin(np.abs(centers[candidates]))])
    off_peak = np.delete(counts, slice(max(k - 2, 0), k + 3))
    mean_off = float(off_peak.mean()) if off_peak.size else 0.0
    std_off = float(off_peak.std()) if off_peak.size else 0.0
    if std_off > 0:
        significance = (float(peak_val) - mean_off) / std_off
    else:
        significance = np.inf if float(peak_val) > mean_off else 0.0
    offset = float(centers[k])
    if 0 < k < counts.size - 1:
        y1, y2, y3 = float(counts[k - 1]), float(counts[k]), float(counts[k + 1])
        denom = y1 - 2.0 * y2 + y3
        if denom < 0:
            offset += 0.5 * (y1 - y3) / denom * bin_ps
    if significance <= significance_threshold:
        raise SyncPeakNotFound(
            f"no significant correlation peak (significance {significance:.2f})",
            significance,
        )
    return SyncEstimate(epoch_start_s=0.0, offset_ps=offset, peak_significance=significance)


@dataclass(frozen=True)
class SyncTrack:
    """Per-epoch offset estimates with piecewise-linear interpolation."""

    estimates: list
    anchors_ps: np.ndarray = field(repr=False)
    offsets_ps: np.ndarray = field(repr=False)

    def offset_at(self, times_ps) -> np.ndarray:
        return np.interp(
            np.asarray(times_ps, dtype=np.float64), self.anchors_ps, self.offsets_ps
        )

    def correct(self, bob_times_ps) -> np.ndarray:
        t = np.asarray(bob_times_ps, dtype=np.int64)
        return np.rint(t - self.offset_at(t)).astype(np.int64)


def sync_track(
    alice_times_ps,
    bob_times_ps,
    resync_interval_s: float,
    expected_latency_ps: int = 0,
    gps_prior_ps: float = 0.0,
    bin_ps: int = DEFAULT_BIN_PS,
    search_range_ps: int = DEFAULT_SEARCH_RANGE_PS,
    significance_threshold: float = DEFAULT_SIGNIFICANCE_THRESHOLD,
) -> SyncTrack:
    """Epoch-by-epoch offset recovery over two full tag streams.

    The receiver stream is first reduced by the deterministic link latency;
    each epoch of resync_interval_s is correlated separately, seeded by the
    previous epoch's offset (the GPS prior for the first).  A failed epoch
    falls back to the previous estimate; more than
    MAX_CONSECUTIVE_SYNC_FAILURES in a row is a hard error.
    """
    if not RESYNC_MIN_S <= resync_interval_s <= RESYNC_MAX_S:
        raise ValueError(
            f"resync interval {resync_interval_s} s outside [{RESYNC_MIN_S}, {RESYNC_MAX_S}]"
        )
    a = _require_sorted(alice_times_ps, "alice stream")
    b0 = _require_sorted(bob_times_ps, "bob stream")
    if a.size == 0 or b0.size == 0:
        raise ValueError("sync_track requires non-empty streams")
    b = b0 - np.int64(expected_latency_ps)
    interval_ps = int(resync_interval_s * PS_PER_S)
    t_start = int(a[0])
    t_end = int(a[-1]) + 1
    estimates = []
    anchors = []
    offsets = []
    prior = float(gps_prior_ps)
    failures = 0
    epoch_start = t_start
    while epoch_start < t_end:
        epoch_end = epoch_start + interval_ps
        ia0, ia1 = np.searchsorted(a, [epoch_start, epoch_end])
        margin = int(abs(prior)) + search_range_ps
        ib0, ib1 = np.searchsorted(b, [epoch_start - margin, epoch_end + margin])
        epoch_s = (epoch_start - t_start) / PS_PER_S
        try:
            if ia1 - ia0 == 0 or ib1 - ib0 == 0:
                raise SyncPeakNotFound("empty epoch", 0.0)
            est = cross_correlate(
                a[ia0:ia1],
                b[ib0:ib1],
                bin_ps=bin_ps,
                search_range_ps=search_range_ps,
                prior_ps=prior,
                significance_threshold=significance_threshold,
            )
        except SyncPeakNotFound as exc:
            failures += 1
            if failures > MAX_CONSECUTIVE_SYNC_FAILURES:
                raise TimeSyncError(
                    f"{failures} consecutive sync failures at epoch {epoch_s:.0f} s"
                ) from exc
            estimates.append(
                SyncEstimate(epoch_s, prior, exc.significance, valid=False)
            )
        else:
            failures = 0
            prior = est.offset_ps
            estimates.append(
                SyncEstimate(epoch_s, est.offset_ps, est.peak_significance)
            )
        anchors.append(min(epoch_start + interval_ps // 2, t_end - 1))
        offsets.append(prior)
        epoch_start = epoch_end
    return SyncTrack(
        estimates=estimates,
        anchors_ps=np.asarray(anchors, dtype=np.int64),
        offsets_ps=np.asarray(offsets, dtype=np.float64),
    )


def find_coincidences(stream_a, stream_b, window_ps: int):
    """Greedy earliest-match pairing of two sorted tag streams.

    A pair forms when |t_a - t_b| <= window_ps (inclusive); each tag joins at
    most one coincidence.  Inputs are structured ttag arrays; the event time
    is the earlier member's time.
    """
    ta = _require_sorted(stream_a["time_ps"].astype(np.int64), "stream_a")
    tb = _require_sorted(stream_b["time_ps"].astype(np.int64), "stream_b")
    ia, ib = kernels.greedy_pair_indices(ta, tb, np.int64(window_ps))
    events = []
    for i, j in zip(ia, ib):
        channels = (
            ttag.CHANNEL_NAMES[int(stream_a["channel"][i])],
            ttag.CHANNEL_NAMES[int(stream_b["channel"][j])],
        )
        events.append(
            CoincidenceEvent(
                kind="twofold",
                channels=channels,
                time_ps=int(min(ta[i], tb[j])),
            )
        )
    return events


@dataclass(frozen=True)
class ThreefoldResult:
    times_ps: np.ndarray
    labels: np.ndarray  # 0 = PsiMinus, 1 = PsiPlus
    n_valid: int
    n_discarded: int
    n_incomplete: int

    def bell_labels(self):
        return [LABEL_TO_BELL[int(code)] for code in self.labels]


def classify_threefolds(alice_tags, window_ps: int) -> ThreefoldResult:
    """Group the sender's tags into trigger-anchored triples and label them.

    Triples matching the t-a-d / t-b-c pattern are PsiMinus, t-a-b / t-c-d
    are PsiPlus; any other channel pair is discarded (counted).
    """
    times = _require_sorted(alice_tags["time_ps"].astype(np.int64), "alice tags")
    channels = alice_tags["channel"]
    out_times, out_labels, n_valid, n_disc, n_inc = kernels.classify_triples(
        times, channels, window_ps
    )
    return ThreefoldResult(
        times_ps=out_times,
        labels=out_labels,
        n_valid=int(n_valid),
        n_discarded=int(n_disc),
        n_incomplete=int(n_inc),
    )


@dataclass(frozen=True)
class FourfoldResult:
    alice_times_ps: np.ndarray
    bob_times_ps: np.ndarray
    labels: np.ndarray
    bob_channels: np.ndarray

    @property
    def count(self) -> int:
        return int(self.labels.shape[0])


def match_fourfolds(
    bsm_times_ps,
    bsm_labels,
    bob_tags,
    window_ps: int,
    sync: SyncTrack | None = None,
    expected_latency_ps: int = 0,
) -> FourfoldResult:
    """Match BSM triple events against offset-corrected receiver photon tags.

    Receiver tags are reduced by the deterministic latency and the recovered
    clock offset before the greedy windowed match; ff marker tags never
    participate.
    """
    bsm_times = _require_sorted(bsm_times_ps, "bsm events")
    labels = np.asarray(bsm_labels, dtype=np.uint8)
    photon_mask = np.isin(bob_tags["channel"], (ttag.CHANNELS["e"], ttag.CHANNELS["f"]))
    bob_times = bob_tags["time_ps"][photon_mask].astype(np.int64)
    bob_channels = bob_tags["channel"][photon_mask]
    corrected = bob_times - np.int64(expected_latency_ps)
    if sync is not None:
        corrected = np.rint(corrected - sync.offset_at(bob_times)).astype(np.int64)
    order = np.argsort(corrected, kind="stable")
    corrected = corrected[order]
    bob_times = bob_times[order]
    bob_channels = bob_channels[order]
    ia, ib = kernels.greedy_pair_indices(bsm_times, corrected, np.int64(window_ps))
    return FourfoldResult(
        alice_times_ps=bsm_times[ia],
        bob_times_ps=bob_times[ib],
        labels=labels[ia],
        bob_channels=bob_channels[ib],
    )
