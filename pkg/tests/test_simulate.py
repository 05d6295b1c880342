"""Simulator checks: construction bounds, moments, determinism."""

import dataclasses

import numpy as np
import pytest

from sthawkes import model as md
from sthawkes import simulate as sm
from sthawkes import tensors as tn
from sthawkes.errors import NumericalError


def small_cfg(**kw):
    base = dict(n1=2, n2=2, p=2, K=50, delta=0.5, alpha=1.0, seed=7)
    base.update(kw)
    return sm.SimConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            small_cfg(K=0)
        with pytest.raises(ValueError):
            small_cfg(delta=-1.0)
        with pytest.raises(ValueError):
            small_cfg(stability_target=1.0)
        with pytest.raises(ValueError):
            small_cfg(alpha=0.0)


class TestKernel:
    def test_deterministic(self):
        cfg = small_cfg()
        np.testing.assert_array_equal(
            sm.gen_rank1_kernel(cfg), sm.gen_rank1_kernel(cfg)
        )

    def test_envelope_bound(self):
        cfg = small_cfg(p=4, alpha=0.7)
        G = sm.gen_rank1_kernel(cfg)
        assert np.all(G >= 0)
        for k in range(4):
            assert G[:, :, k].max() <= 0.7 * np.exp(-0.7 * k)

    def test_multi_rank_at_most_one_per_slice(self):
        for seed in range(20):
            G = sm.gen_rank1_kernel(small_cfg(p=3, seed=seed))
            ranks = tn.multi_rank(G, 1e-10)
            assert np.all(ranks <= 1)
            assert ranks.sum() <= 3


class TestBaseIntensity:
    def test_deterministic_and_in_range(self):
        cfg = small_cfg()
        mu = sm.gen_base_intensity(cfg)
        np.testing.assert_array_equal(mu, sm.gen_base_intensity(cfg))
        assert np.all((mu >= 0) & (mu <= 1))

    def test_mean_close_to_half(self):
        cfg = small_cfg(n1=100, n2=100)
        mu = sm.gen_base_intensity(cfg)
        assert abs(mu.mean() - 0.5) < 0.02


class TestRescale:
    def test_hits_targets_exactly(self):
        cfg = small_cfg()
        params, rep = sm.rescale_params(
            sm.gen_base_intensity(cfg), sm.gen_rank1_kernel(cfg), cfg
        )
        assert cfg.delta * params.G.sum() == pytest.approx(
            cfg.stability_target, rel=1e-12
        )
        assert cfg.delta * params.mu.mean() == pytest.approx(
            cfg.mean_bin_rate, rel=1e-12
        )
        assert rep.g_scale > 0 and rep.mu_scale > 0

    def test_satisfying_input_scale_one(self):
        cfg = small_cfg()
        params, _ = sm.rescale_params(
            sm.gen_base_intensity(cfg), sm.gen_rank1_kernel(cfg), cfg
        )
        _, rep = sm.rescale_params(params.mu, params.G, cfg)
        assert rep.g_scale == pytest.approx(1.0, abs=1e-12)
        assert rep.mu_scale == pytest.approx(1.0, abs=1e-12)

    def test_zero_inputs_rejected(self):
        cfg = small_cfg()
        with pytest.raises(NumericalError):
            sm.rescale_params(np.ones((2, 2)), np.zeros((3, 3, 2)), cfg)
        with pytest.raises(NumericalError):
            sm.rescale_params(np.zeros((2, 2)), np.ones((3, 3, 2)), cfg)

    def test_subcritical_paths_stay_bounded(self):
        for seed in range(5):
            cfg = small_cfg(K=5000, seed=seed, stability_target=0.9)
            params, _ = sm.generate_truth(cfg)
            Z = sm.simulate(params, cfg)
            assert Z.counts.max() < 1000


class TestSimulate:
    def test_deterministic(self):
        cfg = small_cfg()
        params, _ = sm.generate_truth(cfg)
        Z1 = sm.simulate(params, cfg)
        Z2 = sm.simulate(params, cfg)
        np.testing.assert_array_equal(Z1.counts, Z2.counts)

    def test_pure_background_moments(self):
        cfg = small_cfg(K=10000, seed=3)
        mu = np.array([[0.8, 1.6], [2.4, 0.4]])
        params = md.HawkesParams(mu=mu, G=np.zeros((3, 3, 2)))
        Z = sm.simulate(params, cfg)
        means = Z.main.mean(axis=2)
        se = np.sqrt(cfg.delta * mu / cfg.K)
        assert np.all(np.abs(means - cfg.delta * mu) <= 3 * se)

    def test_zero_rate_is_absorbing(self):
        cfg = small_cfg()
        params = md.HawkesParams(mu=np.zeros((2, 2)), G=np.full((3, 3, 2), 0.3))
        Z = sm.simulate(params, cfg, initial=np.zeros((2, 2, 2)))
        assert not Z.counts.any()

    def test_bad_initial_rejected(self):
        cfg = small_cfg()
        params, _ = sm.generate_truth(cfg)
        with pytest.raises(ValueError):
            sm.simulate(params, cfg, initial=np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            sm.simulate(params, cfg, initial=np.full((2, 2, 2), -1))

    def test_conditional_mean_of_one_bin(self):
        cfg = small_cfg(K=30, seed=11)
        params, _ = sm.generate_truth(cfg)
        Z = sm.simulate(params, cfg)
        k = 17
        win = Z.window(k)
        lam = md.intensity_all(params, Z)[:, :, k]
        resim = dataclasses.replace(cfg, K=1)
        total = np.zeros((2, 2))
        n = 2000
        for s in range(n):
            one = sm.simulate(params, dataclasses.replace(resim, seed=s), initial=win)
            total += one.main[:, :, 0]
        target = cfg.delta * lam
        assert np.all(np.abs(total / n - target) <= 3 * np.sqrt(target / n))

    def test_truth_lands_in_its_feasible_set(self):
        for seed in (0, 1, 2):
            cfg = small_cfg(seed=seed, p=3)
            params, prov = sm.generate_truth(cfg)
            fs = sm.truth_feasible_set(params)
            assert params.in_box(fs)
            assert tn.tnn(params.G) <= fs.tnn_radius(2, 2, 3) + 1e-9
            assert prov["gamma"] == fs.gamma

    def test_excitation_raises_counts(self):
        # same background, one run with excitation and one without
        cfg = small_cfg(K=4000, seed=5)
        params, _ = sm.generate_truth(cfg)
        flat = md.HawkesParams(mu=params.mu, G=np.zeros_like(params.G))
        excited = sm.simulate(params, cfg).main.mean()
        background = sm.simulate(flat, cfg).main.mean()
        assert excited > background * 1.5

    def test_truth_fits_likelihood_better_than_no_excitation(self):
        wins = 0
        for seed in range(10):
            cfg = small_cfg(K=800, seed=seed)
            params, _ = sm.generate_truth(cfg)
            Z = sm.simulate(params, cfg)
            flat = md.HawkesParams(mu=params.mu, G=np.zeros_like(params.G))
            if md.neg_log_likelihood(params, Z) < md.neg_log_likelihood(flat, Z):
                wins += 1
        assert wins >= 8
