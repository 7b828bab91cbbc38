"""Signal pipeline: montage, filtering, staging, segmentation.

The staging oracle below walks the recording second by second and applies
the precedence rules directly, independent of the interval arithmetic in
the implementation.
"""

import numpy as np
import pytest

from fedeeg.pipeline import (
    RawRecording,
    SeizureAnnotation,
    Stage,
    StagePolicy,
    derive_bipolar,
    design_lowpass,
    label_timeline,
    lowpass_and_resample,
    segment_and_balance,
    solve_preictal_stride,
    stage_at,
)


def brute_force_stage(t, annotations, policy):
    """Priority scan at a single time point."""
    for a in annotations:
        if a.onset_s <= t <= a.end_s:
            return Stage.ICTAL
    for a in annotations:
        if a.end_s < t <= a.end_s + policy.postictal_s:
            return Stage.POSTICTAL
    for a in annotations:
        if max(0.0, a.onset_s - policy.preictal_s) <= t < a.onset_s:
            return Stage.PREICTAL
    return Stage.INTERICTAL


def default_policy(**kw):
    base = dict(
        target_rate_hz=128.0,
        lowpass_hz=40.0,
        preictal_s=3600.0,
        postictal_s=600.0,
        segment_s=2.0,
    )
    base.update(kw)
    return StagePolicy(**base)


class TestMontage:
    def test_referential_pair_reduces_to_bipolar(self):
        rng = np.random.default_rng(0)
        f3 = rng.standard_normal(512)
        c3 = rng.standard_normal(512)
        m2 = rng.standard_normal(512)
        rec = RawRecording(
            channels={"F3-M2": f3 - m2, "C3-M2": c3 - m2}, sample_rate_hz=256.0
        )
        out = derive_bipolar(rec, "F3-M2", "C3-M2")
        # (F3-M2)-(C3-M2) == F3-C3: the shared reference cancels.
        np.testing.assert_allclose(out.channels["F3-M2-C3-M2"], f3 - c3, atol=1e-12)

    def test_missing_channel_raises(self):
        rec = RawRecording(channels={"A": np.zeros(4)}, sample_rate_hz=128.0)
        with pytest.raises(KeyError):
            derive_bipolar(rec, "A", "B")

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            RawRecording(
                channels={"A": np.zeros(4), "B": np.zeros(5)}, sample_rate_hz=128.0
            )


class TestLowpassResample:
    def test_dc_preserved(self):
        rec = RawRecording(channels={"X": np.full(2048, 3.25)}, sample_rate_hz=256.0)
        out = lowpass_and_resample(rec, default_policy())
        np.testing.assert_allclose(out.channels["X"], 3.25, atol=1e-9)
        assert out.sample_rate_hz == 128.0

    def test_stopband_tone_suppressed(self):
        # 100 Hz tone at 256 Hz in, 40 Hz cutoff: residual RMS under 5%.
        t = np.arange(4096) / 256.0
        tone = np.sin(2 * np.pi * 100.0 * t)
        rec = RawRecording(channels={"X": tone}, sample_rate_hz=256.0)
        out = lowpass_and_resample(rec, default_policy())
        body = out.channels["X"][64:-64]  # skip edge transients
        rms = np.sqrt(np.mean(body**2))
        assert rms <= 0.05 * np.sqrt(0.5)

    def test_passband_tone_preserved(self):
        t = np.arange(4096) / 256.0
        tone = np.sin(2 * np.pi * 10.0 * t)
        rec = RawRecording(channels={"X": tone}, sample_rate_hz=256.0)
        out = lowpass_and_resample(rec, default_policy())
        n_out = len(out.channels["X"])
        expected = np.sin(2 * np.pi * 10.0 * np.arange(n_out) / 128.0)
        body = slice(64, -64)
        rms_err = np.sqrt(np.mean((out.channels["X"][body] - expected[body]) ** 2))
        assert rms_err <= 0.05 * np.sqrt(0.5)

    def test_already_at_target_passthrough(self):
        x = np.random.default_rng(1).standard_normal(256)
        rec = RawRecording(channels={"X": x}, sample_rate_hz=128.0)
        out = lowpass_and_resample(rec, default_policy(lowpass_hz=64.0))
        assert np.array_equal(out.channels["X"], x)

    def test_upsampling_refused(self):
        rec = RawRecording(channels={"X": np.zeros(64)}, sample_rate_hz=100.0)
        with pytest.raises(ValueError):
            lowpass_and_resample(rec, default_policy())

    def test_non_integer_ratio_uses_interpolation(self):
        t = np.arange(6000) / 200.0
        tone = np.sin(2 * np.pi * 5.0 * t)
        rec = RawRecording(channels={"X": tone}, sample_rate_hz=200.0)
        out = lowpass_and_resample(rec, default_policy())
        assert out.sample_rate_hz == 128.0
        n_out = len(out.channels["X"])
        assert n_out == pytest.approx(6000 * 128 / 200, abs=1)
        expected = np.sin(2 * np.pi * 5.0 * np.arange(n_out) / 128.0)
        body = slice(64, n_out - 64)
        rms_err = np.sqrt(np.mean((out.channels["X"][body] - expected[body]) ** 2))
        assert rms_err <= 0.05 * np.sqrt(0.5)

    def test_attenuation_spec(self):
        taps = design_lowpass(256.0, 40.0)
        w = np.fft.rfft(taps, 65536)
        freqs = np.linspace(0, 128, len(w))
        transition = min(0.2 * 40.0, 128.0 - 40.0)
        stop = np.abs(w[freqs >= 40.0 + transition])
        assert 20 * np.log10(stop.max()) <= -40.0


class TestStaging:
    def test_single_seizure_hand_worked(self):
        policy = default_policy()
        ann = [SeizureAnnotation(onset_s=7200.0, end_s=7260.0)]
        timeline = label_timeline(10000.0, ann, policy)
        assert timeline == [
            (0.0, 3600.0, Stage.INTERICTAL),
            (3600.0, 7200.0, Stage.PREICTAL),
            (7200.0, 7260.0, Stage.ICTAL),
            (7260.0, 7860.0, Stage.POSTICTAL),
            (7860.0, 10000.0, Stage.INTERICTAL),
        ]

    def test_overlap_precedence_points(self):
        policy = default_policy()
        ann = [
            SeizureAnnotation(onset_s=7200.0, end_s=7260.0),
            SeizureAnnotation(onset_s=9000.0, end_s=9030.0),
        ]
        # 7800 s is postictal of the first and preictal of the second:
        # postictal wins; the preictal resumes after the tail ends.
        assert stage_at(7800.0, ann, policy) is Stage.POSTICTAL
        assert stage_at(7861.0, ann, policy) is Stage.PREICTAL
        # Ictal interval is closed on both ends.
        assert stage_at(7200.0, ann, policy) is Stage.ICTAL
        assert stage_at(7260.0, ann, policy) is Stage.ICTAL
        assert stage_at(7260.5, ann, policy) is Stage.POSTICTAL

    def test_truncated_preictal_at_recording_start(self):
        policy = default_policy()
        ann = [SeizureAnnotation(onset_s=1800.0, end_s=1830.0)]
        timeline = label_timeline(4000.0, ann, policy)
        assert timeline[0] == (0.0, 1800.0, Stage.PREICTAL)

    def test_timeline_matches_brute_force_scan(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            duration = float(rng.integers(5000, 20000))
            n_seiz = int(rng.integers(0, 4))
            onsets = np.sort(rng.uniform(100, duration - 200, n_seiz))
            ann = []
            last_end = -1e9
            for onset in onsets:
                if onset <= last_end + 1.0:
                    continue
                end = onset + float(rng.uniform(10, 120))
                if end >= duration:
                    continue
                ann.append(SeizureAnnotation(onset_s=float(onset), end_s=end))
                last_end = end
            policy = default_policy(
                preictal_s=float(rng.choice([600.0, 1800.0, 3600.0])),
                postictal_s=float(rng.choice([300.0, 600.0])),
            )
            timeline = label_timeline(duration, ann, policy)
            # Pieces tile the recording with no same-stage neighbours.
            assert timeline[0][0] == 0.0
            assert timeline[-1][1] == duration
            for a, b in zip(timeline, timeline[1:]):
                assert a[1] == b[0]
                assert a[2] is not b[2]
            for t in np.arange(0.5, duration, 97.0):
                want = brute_force_stage(t, ann, policy)
                got = next(st for lo, hi, st in timeline if lo <= t < hi)
                assert got is want, f"t={t}"

    def test_annotation_validation(self):
        policy = default_policy()
        # Unordered annotations are sorted, not rejected.
        unordered = [
            SeizureAnnotation(onset_s=200.0, end_s=210.0),
            SeizureAnnotation(onset_s=100.0, end_s=110.0),
        ]
        timeline = label_timeline(1000.0, unordered, policy)
        ictal = [(lo, hi) for lo, hi, st in timeline if st is Stage.ICTAL]
        assert ictal == [(100.0, 110.0), (200.0, 210.0)]
        overlapping = [
            SeizureAnnotation(onset_s=100.0, end_s=210.0),
            SeizureAnnotation(onset_s=200.0, end_s=220.0),
        ]
        with pytest.raises(ValueError):
            label_timeline(1000.0, overlapping, policy)
        beyond = [SeizureAnnotation(onset_s=900.0, end_s=1100.0)]
        with pytest.raises(ValueError):
            label_timeline(1000.0, beyond, policy)


class TestSegmentation:
    def make_recording(self, duration_s, rate=128.0):
        n = int(duration_s * rate)
        x = np.random.default_rng(4).standard_normal(n)
        return RawRecording(channels={"X": x}, sample_rate_hz=rate, patient_id="p0")

    def test_no_segment_crosses_stage_boundary(self):
        policy = default_policy()
        rec = self.make_recording(12000.0)
        ann = [
            SeizureAnnotation(onset_s=5000.0, end_s=5050.0),
            SeizureAnnotation(onset_s=9800.0, end_s=9860.0),
        ]
        timeline = label_timeline(12000.0, ann, policy)
        segments = segment_and_balance(rec, timeline, policy)
        assert segments
        for seg in segments:
            lo, hi = seg.start_s, seg.start_s + policy.segment_s
            covering = [
                (a, b, st) for a, b, st in timeline if a <= lo + 1e-9 and hi <= b + 1e-9
            ]
            assert covering, f"segment [{lo}, {hi}) crosses a boundary"
            stage = covering[0][2]
            assert stage in (Stage.INTERICTAL, Stage.PREICTAL)
            assert seg.label == (1 if stage is Stage.PREICTAL else 0)
            assert len(seg.samples) == policy.segment_samples
            assert seg.patient_id == "p0"

    def test_interictal_stride_non_overlapping(self):
        policy = default_policy()
        rec = self.make_recording(6000.0)
        timeline = label_timeline(6000.0, [], policy)
        segments = segment_and_balance(rec, timeline, policy)
        starts = sorted(s.start_s for s in segments)
        assert np.all(np.diff(starts) >= policy.segment_s - 1e-9)
        assert len(segments) == int(6000.0 // policy.segment_s)
        assert all(s.label == 0 for s in segments)

    def test_stride_solver_balances_counts(self):
        # One 3600 s preictal span against 3600 interictal windows needs a
        # stride near half a segment; the solved count must not overshoot
        # the target by more than ~10%.
        policy = default_policy()
        stride = solve_preictal_stride([(0.0, 3600.0)], 3600, policy)
        length = policy.segment_samples
        span = int(3600.0 * policy.target_rate_hz)
        count = (span - length) // stride + 1
        assert count >= 3600
        assert count / 3600 <= 1.1
        # A one-larger stride would fall short, i.e. the stride is maximal.
        short = (span - length) // (stride + 1) + 1
        assert short < 3600

    def test_stride_floor_when_target_unreachable(self):
        policy = default_policy()
        length = policy.segment_samples
        floor = max(1, round(0.05 * length))
        span_s = 3 * policy.segment_s
        stride = solve_preictal_stride([(0.0, span_s)], 10**6, policy)
        assert stride == floor

    def test_balance_on_realistic_layout(self):
        policy = default_policy()
        rec = self.make_recording(14000.0)
        ann = [SeizureAnnotation(onset_s=9000.0, end_s=9060.0)]
        timeline = label_timeline(14000.0, ann, policy)
        segments = segment_and_balance(rec, timeline, policy)
        n_pre = sum(1 for s in segments if s.label == 1)
        n_inter = sum(1 for s in segments if s.label == 0)
        assert n_inter > 0 and n_pre > 0
        assert n_pre >= n_inter
        assert n_pre <= 1.1 * n_inter + 1

    def test_truncated_preictal_flagged(self):
        policy = default_policy()
        # Onset at 1000 s: the preictal window is clipped from 3600 s to 1000 s.
        rec = self.make_recording(5000.0)
        ann = [SeizureAnnotation(onset_s=1000.0, end_s=1030.0)]
        segments = segment_and_balance(
            rec, label_timeline(5000.0, ann, policy), policy
        )
        pre = [s for s in segments if s.label == 1]
        assert pre and all(s.truncated_preictal for s in pre)
        # A full-length preictal window carries no flag.
        rec2 = self.make_recording(9000.0)
        ann2 = [SeizureAnnotation(onset_s=5000.0, end_s=5030.0)]
        segments2 = segment_and_balance(
            rec2, label_timeline(9000.0, ann2, policy), policy
        )
        pre2 = [s for s in segments2 if s.label == 1]
        assert pre2 and not any(s.truncated_preictal for s in pre2)

    def test_emission_skips_postictal_closing_instant(self):
        # The postictal span is closed on the right, so the instant it ends
        # still belongs to it; the first window afterwards starts one sample
        # later, never on the boundary itself.
        policy = default_policy()
        rec = self.make_recording(4000.0)
        ann = [SeizureAnnotation(onset_s=60.0, end_s=90.0)]
        timeline = label_timeline(4000.0, ann, policy)
        segments = segment_and_balance(rec, timeline, policy)
        boundary = 90.0 + policy.postictal_s
        after = min(s.start_s for s in segments if s.start_s >= boundary - 1e-9)
        assert abs(after - (boundary + 1.0 / policy.target_rate_hz)) < 1e-12

    def test_multichannel_rejected(self):
        policy = default_policy()
        rec = RawRecording(
            channels={"A": np.zeros(512), "B": np.zeros(512)}, sample_rate_hz=128.0
        )
        with pytest.raises(ValueError):
            segment_and_balance(rec, label_timeline(4.0, [], policy), policy)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            default_policy(lowpass_hz=100.0)  # above the target Nyquist
        with pytest.raises(ValueError):
            default_policy(segment_s=0.0)
        with pytest.raises(ValueError):
            default_policy(preictal_s=-1.0)
        with pytest.raises(ValueError):
            default_policy(segment_s=1.7)  # 217.6 samples: not integral
