"""Synthetic federation generator: label balance, separability, heterogeneity."""

import numpy as np
import pytest

from fedeeg import metrics, model, synth
from fedeeg.data import split_dataset
from fedeeg.engine import TrainConfig, run_training
from fedeeg.synth import ClientProfile, FederationSpec, default_federation_spec


def fit_and_score(train, test, seed=0, rounds=40, eta=0.2):
    mcfg = model.ModelConfig(input_dim=train.d, hidden_dims=(16,), seed=seed)
    tcfg = TrainConfig(rounds=rounds, eta=eta, strategy="unweighted",
                       batch_size=64, rng_seed=seed)
    params = run_training([train], mcfg, tcfg).params
    scores = model.forward(params, mcfg, test.inputs)
    return metrics.accuracy(metrics.confusion_from_scores(scores, test.labels))


def locally_standardized(split):
    mu = split.train.inputs.mean()
    sd = split.train.inputs.std()
    return split.map_inputs(lambda x: (x - mu) / sd)


class TestProfiles:
    def test_split_sizes_follow_tenth_rule(self):
        p = ClientProfile.from_total("a", total=100)
        assert (p.n_train, p.n_test) == (80, 10)
        assert p.n_total == 100

    def test_odd_total(self):
        p = ClientProfile.from_total("a", total=57)
        assert p.n_test == 5
        assert p.n_train == 57 - 2 * 5

    def test_preset_ratio(self):
        spec = default_federation_spec(seed=0)
        totals = sorted(p.n_total for p in spec.profiles)
        assert max(totals) / min(totals) == pytest.approx(13.5, abs=0.5)
        assert len(spec.profiles) == 4

    def test_preset_scaling(self):
        small = default_federation_spec(seed=0, scale=0.1)
        full = default_federation_spec(seed=0)
        for s, f in zip(small.profiles, full.profiles):
            assert s.n_total == pytest.approx(0.1 * f.n_total, rel=0.05)
            assert s.name == f.name

    def test_bad_profile_rejected(self):
        with pytest.raises(ValueError):
            ClientProfile(name="x", n_train=0, n_test=1)
        with pytest.raises(ValueError):
            ClientProfile(name="x", n_train=10, n_test=1, preictal_frac=1.5)
        with pytest.raises(ValueError):
            ClientProfile(name="x", n_train=10, n_test=1, waveform_family="chirp")
        with pytest.raises(ValueError):
            ClientProfile(name="x", n_train=10, n_test=1, shared_sign=2)
        with pytest.raises(ValueError):
            ClientProfile(name="x", n_train=10, n_test=1, label_noise=0.5)
        with pytest.raises(ValueError):
            ClientProfile(name="x", n_train=10, n_test=1, label_noise=-0.1)


class TestGeneration:
    def test_deterministic(self):
        spec = default_federation_spec(seed=11, scale=0.02)
        a = synth.generate_federation(spec)
        b = synth.generate_federation(spec)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.train.inputs, sb.train.inputs)
            assert np.array_equal(sa.test.labels, sb.test.labels)

    def test_different_seeds_differ(self):
        a = synth.generate_federation(default_federation_spec(seed=1, scale=0.02))
        b = synth.generate_federation(default_federation_spec(seed=2, scale=0.02))
        assert not np.array_equal(a[0].train.inputs, b[0].train.inputs)

    def test_label_prevalence_within_binomial_noise(self):
        # Positive counts should land within 3 sigma of n * frac.
        profile = ClientProfile.from_total(
            "a", total=2000, preictal_frac=0.458, class_sep=1.0
        )
        ds = synth.generate_client(profile, d=64, seed=5)
        k = int(ds.labels.sum())
        mu = ds.n * 0.458
        sigma = np.sqrt(ds.n * 0.458 * 0.542)
        assert abs(k - mu) <= 3 * sigma

    def test_zero_separation_is_chance(self):
        profile = ClientProfile.from_total("a", total=3000, class_sep=0.0)
        split = split_dataset(
            synth.generate_client(profile, d=64, seed=3),
            n_val=profile.n_test, n_test=profile.n_test,
        )
        acc = fit_and_score(split.train, split.test, seed=0)
        assert 0.45 <= acc <= 0.55

    def test_positive_separation_learnable(self):
        profile = ClientProfile.from_total("a", total=1500, class_sep=3.0)
        split = split_dataset(
            synth.generate_client(profile, d=64, seed=3),
            n_val=profile.n_test, n_test=profile.n_test,
        )
        acc = fit_and_score(split.train, split.test, seed=0)
        assert acc >= 0.8

    def test_dataset_shape(self):
        profile = ClientProfile.from_total("a", total=120)
        ds = synth.generate_client(profile, d=48, seed=0)
        assert ds.inputs.shape == (120, 48)
        assert ds.labels.shape == (120,)
        assert set(np.unique(ds.labels)) <= {0, 1}

    def test_label_noise_hits_train_slice_only(self):
        clean = ClientProfile.from_total("a", total=4000, label_noise=0.0)
        noisy = ClientProfile.from_total("a", total=4000, label_noise=0.3)
        ds_clean = synth.generate_client(clean, d=32, seed=11)
        ds_noisy = synth.generate_client(noisy, d=32, seed=11)
        np.testing.assert_array_equal(ds_clean.inputs, ds_noisy.inputs)
        n_train = clean.n_train
        flipped = np.count_nonzero(
            ds_clean.labels[:n_train] != ds_noisy.labels[:n_train]
        )
        sigma = np.sqrt(n_train * 0.3 * 0.7)
        assert abs(flipped - 0.3 * n_train) <= 3 * sigma
        np.testing.assert_array_equal(
            ds_clean.labels[n_train:], ds_noisy.labels[n_train:]
        )

    def test_federation_split_sizes(self):
        spec = default_federation_spec(seed=4, scale=0.02)
        for profile, split in zip(spec.profiles, synth.generate_federation(spec)):
            assert split.train.n == profile.n_train
            assert split.val.n == profile.n_test
            assert split.test.n == profile.n_test
            assert split.name == profile.name


class TestHeterogeneity:
    def test_client_markers_do_not_transfer(self):
        # A model fit on one hospital should do poorly on another whose marker
        # band is disjoint and whose shared-slice sign is flipped.
        spec = default_federation_spec(seed=9, scale=0.05)
        fed = [locally_standardized(s) for s in synth.generate_federation(spec)]
        split_a, split_b = fed[0], fed[1]
        mcfg = model.ModelConfig(input_dim=split_a.train.d, hidden_dims=(16,), seed=1)
        tcfg = TrainConfig(rounds=40, eta=0.2, strategy="unweighted",
                           batch_size=64, rng_seed=1)
        params = run_training([split_a.train], mcfg, tcfg).params

        def acc_on(ds):
            scores = model.forward(params, mcfg, ds.inputs)
            return metrics.accuracy(metrics.confusion_from_scores(scores, ds.labels))

        assert acc_on(split_a.test) > 0.85
        assert acc_on(split_b.test) < 0.60

    def test_shared_slice_transfers_between_same_sign_clients(self):
        # Clients with the same shared-slice sign leak accuracy to each other
        # even though their private marker bands are disjoint.
        spec = default_federation_spec(seed=9, scale=0.05)
        fed = [locally_standardized(s) for s in synth.generate_federation(spec)]
        split_a, split_c = fed[0], fed[2]
        mcfg = model.ModelConfig(input_dim=split_a.train.d, hidden_dims=(16,), seed=1)
        tcfg = TrainConfig(rounds=40, eta=0.2, strategy="unweighted",
                           batch_size=64, rng_seed=1)
        params = run_training([split_a.train], mcfg, tcfg).params
        scores = model.forward(params, mcfg, split_c.test.inputs)
        acc = metrics.accuracy(metrics.confusion_from_scores(scores, split_c.test.labels))
        assert acc > 0.7

    def test_affine_distortion_applied(self):
        base = ClientProfile.from_total("a", total=200, feature_shift=0.0,
                                        feature_scale=1.0)
        warped = ClientProfile.from_total("a", total=200, feature_shift=3.0,
                                          feature_scale=2.0)
        s0 = synth.generate_client(base, d=32, seed=7)
        s1 = synth.generate_client(warped, d=32, seed=7)
        np.testing.assert_allclose(s1.inputs, 2.0 * s0.inputs + 3.0, atol=1e-10)
        np.testing.assert_array_equal(s0.labels, s1.labels)

    def test_duplicate_client_names_rejected(self):
        p = ClientProfile.from_total("same", total=100)
        with pytest.raises(ValueError):
            FederationSpec(profiles=(p, p), d=32, seed=0)

    def test_marker_is_unit_norm(self):
        profile = ClientProfile.from_total("a", total=100, marker_band=(12.0, 20.0))
        v = synth.client_marker(profile, d=256, seed=3)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)

    def test_shared_component_flips_sign(self):
        plus = ClientProfile.from_total("p", total=100, marker_band=(12.0, 20.0),
                                        shared_sign=1)
        minus = ClientProfile.from_total("m", total=100, marker_band=(44.0, 52.0),
                                         shared_sign=-1)
        shared = synth._shared_waveform(256)
        v_plus = synth.client_marker(plus, d=256, seed=1)
        v_minus = synth.client_marker(minus, d=256, seed=2)
        # Projections onto the shared waveform have opposite signs and a
        # magnitude near the configured conflict weight.
        proj_p = float(v_plus @ shared)
        proj_m = float(v_minus @ shared)
        assert proj_p > 0.2
        assert proj_m < -0.2
