"""Raw-signal conditioning and seizure-stage segmentation.

A recording enters as one or more named channels at some native rate,
is reduced to a single bipolar channel, low-passed and resampled to the
working rate, staged around each annotated seizure, and finally cut into
fixed-length windows with the preictal side oversampled (by stride
shrinking, i.e. window overlap) until it roughly balances the interictal
side.  Ictal and postictal stretches are never windowed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.signal import firwin


class Stage(Enum):
    INTERICTAL = "interictal"
    PREICTAL = "preictal"
    ICTAL = "ictal"
    POSTICTAL = "postictal"


# Higher value wins wherever stage windows overlap.
_PRECEDENCE = {
    Stage.ICTAL: 3,
    Stage.POSTICTAL: 2,
    Stage.PREICTAL: 1,
    Stage.INTERICTAL: 0,
}

# Stride search floor: 5% of a segment, i.e. at most 95% window overlap.
MIN_STRIDE_FRACTION = 0.05

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class StagePolicy:
    """Timing constants for staging and windowing."""

    preictal_s: float = 3600.0
    postictal_s: float = 600.0
    segment_s: float = 2.0
    target_rate_hz: float = 128.0
    lowpass_hz: float = 64.0

    def __post_init__(self) -> None:
        for name in ("preictal_s", "postictal_s", "segment_s", "target_rate_hz", "lowpass_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lowpass_hz > self.target_rate_hz / 2 + _TIME_EPS:
            raise ValueError(
                f"lowpass_hz={self.lowpass_hz} exceeds the Nyquist rate of "
                f"target_rate_hz={self.target_rate_hz}"
            )
        n = self.segment_s * self.target_rate_hz
        if abs(n - round(n)) > 1e-6:
            raise ValueError(
                f"segment_s * target_rate_hz must be an integer sample count, got {n}"
            )

    @property
    def segment_samples(self) -> int:
        """Segment length in samples; also the model input width."""
        return int(round(self.segment_s * self.target_rate_hz))


@dataclass(frozen=True)
class SeizureAnnotation:
    onset_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not 0 <= self.onset_s < self.end_s:
            raise ValueError(
                f"need 0 <= onset < end, got onset={self.onset_s}, end={self.end_s}"
            )


@dataclass
class RawRecording:
    """Named channels sampled at a common rate."""

    channels: dict[str, np.ndarray]
    sample_rate_hz: float
    patient_id: str = ""

    def __post_init__(self) -> None:
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not self.channels:
            raise ValueError("recording has no channels")
        lengths = {name: np.asarray(ch).shape for name, ch in self.channels.items()}
        sizes = {shape for shape in lengths.values()}
        if any(len(s) != 1 for s in sizes) or len({s[0] for s in sizes}) != 1:
            raise ValueError(f"channels must be 1-d and equally long, got {lengths}")

    @property
    def n_samples(self) -> int:
        return next(iter(self.channels.values())).shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class LabeledSegment:
    """One fixed-length window; label 1 = preictal, 0 = interictal."""

    samples: np.ndarray
    label: int
    patient_id: str
    start_s: float
    # True when the source preictal span was clipped by the recording start
    # or an earlier seizure's postictal window (kept, but flagged).
    truncated_preictal: bool = False


def validate_annotations(annotations: list[SeizureAnnotation], duration_s: float) -> list[SeizureAnnotation]:
    """Sorted, pairwise non-overlapping annotations inside the recording."""
    ordered = sorted(annotations, key=lambda a: a.onset_s)
    for a in ordered:
        if a.end_s > duration_s + _TIME_EPS:
            raise ValueError(
                f"annotation [{a.onset_s}, {a.end_s}] ends past the recording "
                f"({duration_s} s)"
            )
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.onset_s < prev.end_s - _TIME_EPS:
            raise ValueError(
                f"annotations overlap: [{prev.onset_s}, {prev.end_s}] and "
                f"[{nxt.onset_s}, {nxt.end_s}]"
            )
    return ordered


def stage_at(t: float, annotations: list[SeizureAnnotation], policy: StagePolicy) -> Stage:
    """Stage of a single time point under the precedence rules.

    Ictal spans are closed [onset, end]; postictal is (end, end + postictal_s];
    preictal is [onset - preictal_s, onset) clipped at 0.  Ictal beats
    postictal beats preictal beats interictal wherever spans overlap.
    """
    best = Stage.INTERICTAL
    for a in annotations:
        if a.onset_s <= t <= a.end_s:
            return Stage.ICTAL
        if a.end_s < t <= a.end_s + policy.postictal_s:
            if _PRECEDENCE[Stage.POSTICTAL] > _PRECEDENCE[best]:
                best = Stage.POSTICTAL
        if max(0.0, a.onset_s - policy.preictal_s) <= t < a.onset_s:
            if _PRECEDENCE[Stage.PREICTAL] > _PRECEDENCE[best]:
                best = Stage.PREICTAL
    return best


def label_timeline(
    duration_s: float, annotations: list[SeizureAnnotation], policy: StagePolicy
) -> list[tuple[float, float, Stage]]:
    """Partition [0, duration] into maximal constant-stage intervals.

    The pieces are contiguous, exhaustive, and half-open [lo, hi), so a
    boundary instant is reported with the piece on its right.  Exact-boundary
    point queries should use :func:`stage_at`, which honours the closed ends
    (an ictal end belongs to ictal, not to the postictal piece after it).
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    ordered = validate_annotations(annotations, duration_s)
    points = {0.0, duration_s}
    for a in ordered:
        for t in (
            max(0.0, a.onset_s - policy.preictal_s),
            a.onset_s,
            a.end_s,
            min(duration_s, a.end_s + policy.postictal_s),
        ):
            if 0.0 < t < duration_s:
                points.add(t)
    cuts = sorted(points)
    pieces: list[tuple[float, float, Stage]] = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        stage = stage_at((lo + hi) / 2.0, ordered, policy)
        if pieces and pieces[-1][2] is stage:
            pieces[-1] = (pieces[-1][0], hi, stage)
        else:
            pieces.append((lo, hi, stage))
    return pieces


def derive_bipolar(rec: RawRecording, minuend: str, subtrahend: str) -> RawRecording:
    """Elementwise channel difference; covers referential re-derivation too,
    since (A - REF) - (B - REF) equals A - B."""
    for name in (minuend, subtrahend):
        if name not in rec.channels:
            raise KeyError(
                f"channel {name!r} not in recording (has {sorted(rec.channels)})"
            )
    diff = np.asarray(rec.channels[minuend], dtype=np.float64) - np.asarray(
        rec.channels[subtrahend], dtype=np.float64
    )
    return RawRecording(
        {f"{minuend}-{subtrahend}": diff}, rec.sample_rate_hz, rec.patient_id
    )


def design_lowpass(in_rate_hz: float, cutoff_hz: float) -> np.ndarray:
    """Linear-phase windowed-sinc low-pass with >= 40 dB stopband.

    Hamming-windowed design; the transition band is the narrower of 20% of
    the cutoff and the room left below the input Nyquist rate.
    """
    nyq = in_rate_hz / 2.0
    if cutoff_hz >= nyq:
        raise ValueError(f"cutoff {cutoff_hz} Hz must sit below Nyquist {nyq} Hz")
    transition = min(0.2 * cutoff_hz, nyq - cutoff_hz)
    # Hamming window: ~53 dB stopband once numtaps covers the transition.
    numtaps = int(math.ceil(3.3 * in_rate_hz / transition))
    if numtaps % 2 == 0:
        numtaps += 1
    return firwin(numtaps, cutoff_hz, window="hamming", fs=in_rate_hz)


def _filter_same_length(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # Reflect-pad so the symmetric kernel stays centered at the edges and a
    # constant input stays constant.
    half = (len(taps) - 1) // 2
    padded = np.pad(x, half, mode="reflect")
    return np.convolve(padded, taps, mode="valid")


def lowpass_and_resample(rec: RawRecording, policy: StagePolicy) -> RawRecording:
    """Anti-alias filter then resample every channel to the working rate.

    Integer decimation when the rate ratio is whole, linear interpolation
    otherwise.  A recording already at the target rate with the cutoff at
    Nyquist passes through untouched.
    """
    in_rate = rec.sample_rate_hz
    target = policy.target_rate_hz
    if in_rate < target - _TIME_EPS:
        raise ValueError(
            f"input rate {in_rate} Hz is below the target {target} Hz; upsampling "
            f"is not supported"
        )
    if abs(in_rate - target) <= _TIME_EPS and policy.lowpass_hz >= target / 2 - _TIME_EPS:
        return RawRecording(
            {k: np.asarray(v, dtype=np.float64).copy() for k, v in rec.channels.items()},
            target,
            rec.patient_id,
        )
    taps = design_lowpass(in_rate, policy.lowpass_hz)
    ratio = in_rate / target
    out_channels = {}
    for name, ch in rec.channels.items():
        x = _filter_same_length(np.asarray(ch, dtype=np.float64), taps)
        if abs(ratio - round(ratio)) <= 1e-9:
            y = x[:: int(round(ratio))]
        else:
            n_out = int(round(len(x) * target / in_rate))
            t_out = np.arange(n_out) / target
            t_in = np.arange(len(x)) / in_rate
            y = np.interp(t_out, t_in, x)
        out_channels[name] = y
    return RawRecording(out_channels, target, rec.patient_id)


def _window_starts(lo_s: float, hi_s: float, rate: float, length: int, stride: int) -> range:
    """Start indices of windows of ``length`` samples fully inside [lo_s, hi_s)."""
    first = math.ceil(lo_s * rate - _TIME_EPS)
    last = math.floor(hi_s * rate + _TIME_EPS) - length
    if last < first:
        return range(0)
    return range(first, last + 1, stride)


def _count_windows(spans: list[tuple[float, float]], rate: float, length: int, stride: int) -> int:
    return sum(len(_window_starts(lo, hi, rate, length, stride)) for lo, hi in spans)


def solve_preictal_stride(
    preictal_spans: list[tuple[float, float]],
    interictal_count: int,
    policy: StagePolicy,
) -> int:
    """Largest stride (in samples) whose preictal window count reaches the
    interictal count; falls back to the 5%-of-segment floor when even the
    densest packing cannot balance.  Ties resolve toward the larger stride.
    """
    length = policy.segment_samples
    floor = max(1, int(round(MIN_STRIDE_FRACTION * length)))
    rate = policy.target_rate_hz
    for stride in range(length, floor - 1, -1):
        if _count_windows(preictal_spans, rate, length, stride) >= interictal_count:
            return stride
    return floor


def segment_and_balance(
    rec: RawRecording,
    timeline: list[tuple[float, float, Stage]],
    policy: StagePolicy,
) -> list[LabeledSegment]:
    """Cut interictal/preictal stretches into labeled windows.

    Interictal windows use a non-overlapping stride of one segment; the
    preictal stride is shrunk (see :func:`solve_preictal_stride`) so the
    class counts roughly balance.  No window crosses a stage boundary, and
    ictal/postictal samples are excluded entirely; because a postictal span
    is closed on the right, a window may not even start on the instant the
    span ends, so emission there begins one sample later.
    """
    if len(rec.channels) != 1:
        raise ValueError(
            f"segmentation needs a single derived channel, got {sorted(rec.channels)}"
        )
    if abs(rec.sample_rate_hz - policy.target_rate_hz) > _TIME_EPS:
        raise ValueError(
            f"recording rate {rec.sample_rate_hz} Hz != target "
            f"{policy.target_rate_hz} Hz; resample first"
        )
    if not timeline:
        raise ValueError("timeline is empty")
    if abs(timeline[-1][1] - rec.duration_s) > 1.0 / policy.target_rate_hz:
        raise ValueError(
            f"timeline ends at {timeline[-1][1]} s but the recording lasts "
            f"{rec.duration_s} s"
        )
    x = next(iter(rec.channels.values()))
    length = policy.segment_samples
    if len(x) < length:
        raise ValueError(
            f"recording of {len(x)} samples is shorter than one segment ({length})"
        )
    rate = policy.target_rate_hz

    spans: list[tuple[float, float, Stage, bool]] = []
    prev_stage: Stage | None = None
    for lo, hi, stage in timeline:
        if stage in (Stage.INTERICTAL, Stage.PREICTAL):
            lo_w = lo
            if prev_stage is Stage.POSTICTAL:
                # The boundary instant still belongs to the closed postictal
                # span, so the first admissible sample sits one tick later.
                lo_w = (math.floor(lo * rate + _TIME_EPS) + 1) / rate
            truncated = stage is Stage.PREICTAL and (hi - lo) < policy.preictal_s - _TIME_EPS
            spans.append((lo_w, hi, stage, truncated))
        prev_stage = stage

    inter_spans = [(lo, hi) for lo, hi, st, _ in spans if st is Stage.INTERICTAL]
    pre_spans = [(lo, hi) for lo, hi, st, _ in spans if st is Stage.PREICTAL]
    inter_count = _count_windows(inter_spans, rate, length, length)
    pre_stride = solve_preictal_stride(pre_spans, inter_count, policy)

    segments: list[LabeledSegment] = []
    for lo, hi, stage, truncated in spans:
        if stage is Stage.INTERICTAL:
            label, stride = 0, length
        else:
            label, stride = 1, pre_stride
        for start in _window_starts(lo, hi, rate, length, stride):
            segments.append(
                LabeledSegment(
                    samples=x[start : start + length],
                    label=label,
                    patient_id=rec.patient_id,
                    start_s=start / rate,
                    truncated_preictal=truncated,
                )
            )
    return segments
