"""Synthetic heterogeneous federations of EEG-like segment datasets.

Each client draws band-limited background noise and stamps its positive
(preictal) segments with a client-specific marker waveform, then applies a
client-specific affine distortion (gain and DC offset, the "hardware" of
that hospital).  Markers of different clients occupy different frequency
bands, so a model fit to one client transfers poorly to the others, while
a balanced global model can learn all of them side by side.

A small slice of every marker is a federation-wide waveform whose sign
flips from client to client.  Locally that slice is genuinely predictive,
globally the flipped signs collide, which is what makes aggressive local
fitting (large local sample budgets) hurt the averaged model.

Training labels can carry annotation noise (a per-profile flip rate);
held-out labels stay clean so evaluation measures against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import ClientDataset, ClientSplit, split_dataset
from .pipeline import RawRecording, SeizureAnnotation, StagePolicy

WAVEFORM_FAMILIES = ("noise", "bursts")

# Background spectral tilt: power rolls off above this many cycles/segment.
_BACKGROUND_F0 = 8.0

# Weight of the sign-flipped shared slice inside each client marker.
CONFLICT_WEIGHT = 0.35
_SHARED_BAND = (76, 84)
_SHARED_SEED = 24245


@dataclass(frozen=True)
class ClientProfile:
    """Generator knobs for one simulated hospital."""

    name: str
    n_train: int
    n_test: int
    feature_shift: float = 0.0
    feature_scale: float = 1.0
    class_sep: float = 3.0
    preictal_frac: float = 0.5
    waveform_family: str = "noise"
    marker_band: tuple[float, float] | None = None
    shared_sign: int = 0
    label_noise: float = 0.0

    def __post_init__(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError(
                f"{self.name!r}: n_train and n_test must be positive, got "
                f"{self.n_train}/{self.n_test}"
            )
        if self.feature_scale <= 0:
            raise ValueError(f"{self.name!r}: feature_scale must be positive")
        if self.class_sep < 0:
            raise ValueError(f"{self.name!r}: class_sep must be >= 0")
        if not 0.0 < self.preictal_frac < 1.0:
            raise ValueError(
                f"{self.name!r}: preictal_frac must be in (0, 1), got {self.preictal_frac}"
            )
        if self.waveform_family not in WAVEFORM_FAMILIES:
            raise ValueError(
                f"{self.name!r}: waveform_family must be one of {WAVEFORM_FAMILIES}"
            )
        if self.shared_sign not in (-1, 0, 1):
            raise ValueError(f"{self.name!r}: shared_sign must be -1, 0, or +1")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError(
                f"{self.name!r}: label_noise must be in [0, 0.5), got {self.label_noise}"
            )

    @classmethod
    def from_total(cls, name: str, total: int, **kwargs) -> "ClientProfile":
        """80-10-10 sizing: a tenth each for validation and test."""
        if total < 10:
            raise ValueError(f"{name!r}: total {total} is too small to split")
        n_test = total // 10
        return cls(name, n_train=total - 2 * n_test, n_test=n_test, **kwargs)

    @property
    def n_total(self) -> int:
        return self.n_train + 2 * self.n_test


@dataclass(frozen=True)
class FederationSpec:
    """A full federation: client profiles, segment width, and master seed."""

    profiles: tuple[ClientProfile, ...]
    d: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise ValueError("federation needs at least one client profile")
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise ValueError(f"client names must be unique, got {names}")
        if self.d < 8:
            raise ValueError(f"segment width d must be >= 8, got {self.d}")


def _band_noise(
    rng: np.random.Generator, n: int, d: int, f0: float = _BACKGROUND_F0
) -> np.ndarray:
    """Rows of tilted band-limited noise with overall unit sample std.

    ``f0`` is the roll-off knee in cycles per row of ``d`` samples.
    """
    white = rng.standard_normal((n, d))
    freqs = np.arange(d // 2 + 1, dtype=np.float64)
    gain = 1.0 / np.sqrt(1.0 + (freqs / f0) ** 2)
    x = np.fft.irfft(np.fft.rfft(white, axis=1) * gain, n=d, axis=1)
    return x / x.std()


def _band_vector(rng: np.random.Generator, d: int, band: tuple[float, float]) -> np.ndarray:
    lo, hi = band
    lo_i = max(1, int(round(lo)))
    hi_i = min(d // 2, int(round(hi)))
    if hi_i <= lo_i:
        raise ValueError(f"marker band {band} is empty for d={d}")
    spec = np.zeros(d // 2 + 1, dtype=np.complex128)
    width = hi_i - lo_i
    spec[lo_i:hi_i] = rng.standard_normal(width) + 1j * rng.standard_normal(width)
    v = np.fft.irfft(spec, n=d)
    return v / np.linalg.norm(v)


@lru_cache(maxsize=8)
def _shared_waveform(d: int) -> np.ndarray:
    rng = np.random.default_rng(_SHARED_SEED)
    return _band_vector(rng, d, _SHARED_BAND)


def client_marker(profile: ClientProfile, d: int, seed: int) -> np.ndarray:
    """The unit-norm waveform stamped on this client's positive segments."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    band = profile.marker_band
    if band is None:
        # Clamp the draw range so tiny widths still host a band below Nyquist.
        lo_c = min(10.0, d / 4.0)
        hi_c = max(lo_c + 1.0, min(90.0, d // 2 - 8.0))
        center = rng.uniform(lo_c, hi_c)
        band = (center - 4.0, center + 4.0)
    v = _band_vector(rng, d, band)
    if profile.waveform_family == "bursts":
        t = np.arange(d, dtype=np.float64)
        envelope = np.exp(-0.5 * ((t - d / 2.0) / (d / 8.0)) ** 2)
        v = v * envelope
        v = v / np.linalg.norm(v)
    if profile.shared_sign == 0:
        return v
    shared = _shared_waveform(d) * profile.shared_sign
    mixed = np.sqrt(1.0 - CONFLICT_WEIGHT**2) * v + CONFLICT_WEIGHT * shared
    return mixed / np.linalg.norm(mixed)


def generate_client(profile: ClientProfile, d: int, seed: int) -> ClientDataset:
    """Deterministic dataset of ``profile.n_total`` labeled segments."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    n = profile.n_total
    labels = (rng.random(n) < profile.preictal_frac).astype(np.uint8)
    x = _band_noise(rng, n, d)
    marker = client_marker(profile, d, seed)
    pos = np.flatnonzero(labels == 1)
    amplitude = profile.class_sep * (0.8 + 0.4 * rng.random(pos.size))
    x[pos] += amplitude[:, None] * marker
    x = profile.feature_scale * x + profile.feature_shift
    if profile.label_noise > 0.0:
        # Annotation noise hits the leading train slice only (rows are split
        # contiguously); val/test labels stay clean for oracle evaluation.
        flips = rng.random(profile.n_train) < profile.label_noise
        labels[: profile.n_train] ^= flips.astype(np.uint8)
    return ClientDataset(profile.name, x, labels)


def generate_federation(spec: FederationSpec) -> list[ClientSplit]:
    """All clients of ``spec``, each split 80-10-10 train/val/test."""
    splits = []
    for idx, profile in enumerate(spec.profiles):
        seed = int(np.random.SeedSequence([spec.seed, idx]).generate_state(1)[0])
        ds = generate_client(profile, spec.d, seed)
        splits.append(split_dataset(ds, n_val=profile.n_test, n_test=profile.n_test))
    return splits


# Size ratios follow the four public corpora the simulation mirrors
# (one dominant pediatric archive, one small neonatal unit, two mid-size
# sites), scaled down to desk size.
_PRESET_TOTALS = {
    "pediatric_general": 54000,
    "neonatal_icu": 4000,
    "adult_epilepsy": 7200,
    "pediatric_sleep": 5400,
}

# Marker bands sit above the background knee where the tilted noise is
# quiet, with class_sep descending as the bands quieten so every client's
# own marker is about equally learnable.  Annotation noise rates differ by
# site, mimicking uneven labeling quality.
_PRESET_STYLE = {
    "pediatric_general": dict(
        feature_shift=0.0, feature_scale=1.0, class_sep=3.0, preictal_frac=0.458,
        waveform_family="noise", marker_band=(40.0, 48.0), shared_sign=1,
        label_noise=0.15,
    ),
    "neonatal_icu": dict(
        feature_shift=-2.0, feature_scale=0.2, class_sep=2.8, preictal_frac=0.501,
        waveform_family="bursts", marker_band=(52.0, 60.0), shared_sign=-1,
        label_noise=0.18,
    ),
    "adult_epilepsy": dict(
        feature_shift=3.0, feature_scale=2.5, class_sep=2.4, preictal_frac=0.504,
        waveform_family="noise", marker_band=(64.0, 72.0), shared_sign=1,
        label_noise=0.12,
    ),
    "pediatric_sleep": dict(
        feature_shift=1.0, feature_scale=1.4, class_sep=1.9, preictal_frac=0.447,
        waveform_family="bursts", marker_band=(88.0, 96.0), shared_sign=-1,
        label_noise=0.15,
    ),
}


def default_federation_spec(seed: int = 0, scale: float = 1.0, d: int = 256) -> FederationSpec:
    """The 4-client heterogeneous preset; ``scale`` shrinks every client
    proportionally (sizes rounded to a multiple of 10, floor 50)."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    profiles = []
    for name, total in _PRESET_TOTALS.items():
        scaled = max(50, int(round(total * scale / 10.0)) * 10)
        profiles.append(ClientProfile.from_total(name, scaled, **_PRESET_STYLE[name]))
    return FederationSpec(tuple(profiles), d=d, seed=seed)


def synthesize_recording(
    profile: ClientProfile,
    policy: StagePolicy,
    seed: int,
    duration_s: float = 7200.0,
    n_seizures: int = 2,
    sample_rate_hz: float = 256.0,
) -> tuple[RawRecording, list[SeizureAnnotation]]:
    """A raw multichannel recording with annotated seizures for the
    preprocessing path: two referential channels plus their shared
    reference.  Preictal stretches of the bipolar difference carry the
    client marker; ictal stretches get a large slow discharge.
    """
    if duration_s < (n_seizures + 1) * (policy.postictal_s + 60.0):
        raise ValueError(
            f"duration {duration_s} s is too short for {n_seizures} seizures"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz

    # Evenly spaced seizures with jitter, each 30-90 s long.
    annotations = []
    spacing = duration_s / (n_seizures + 1)
    for k in range(1, n_seizures + 1):
        onset = k * spacing + rng.uniform(-0.05, 0.05) * spacing
        length = rng.uniform(30.0, 90.0)
        annotations.append(SeizureAnnotation(onset, min(onset + length, duration_s - 1.0)))

    d_native = int(round(policy.segment_s * sample_rate_hz))
    # Keep the background knee at the same physical frequency as in the
    # segment generator: _BACKGROUND_F0 cycles per segment_s of signal.
    f0_rec = _BACKGROUND_F0 * duration_s / policy.segment_s
    diff = _band_noise(rng, 1, n, f0=f0_rec)[0]
    marker = client_marker(profile, d_native, seed)
    tile = np.tile(marker * np.sqrt(d_native / policy.segment_samples), n // d_native + 1)[:n]
    for a in annotations:
        pre_lo = max(0.0, a.onset_s - policy.preictal_s)
        pre = (t >= pre_lo) & (t < a.onset_s)
        diff[pre] += profile.class_sep * tile[pre]
        ictal = (t >= a.onset_s) & (t <= a.end_s)
        diff[ictal] += 8.0 * np.sin(2.0 * np.pi * 3.0 * t[ictal])

    ref = 0.5 * _band_noise(rng, 1, n, f0=f0_rec)[0]
    channels = {
        "F3-M2": 0.5 * diff + ref,
        "C3-M2": -0.5 * diff + ref,
        "M2": ref,
    }
    rec = RawRecording(channels, sample_rate_hz, patient_id=profile.name)
    return rec, annotations
