"""Particle filter: weighting, resampling, estimates, degeneracy handling."""

import numpy as np
import pytest

from stackpush import filter as pf
from stackpush.symbols import fluent, state
from stackpush.transitions import ConfigError

PRIOR = (0.8, 1.2)


def make_ps(n, seed=0, n_blocks=8):
    return pf.init_particles(n, PRIOR, seed=seed, n_blocks=n_blocks)


def test_init_uniform_weights():
    ps = make_ps(200)
    assert ps.n == 200
    assert np.allclose(ps.weights, 0.005)
    assert ps.sizes.shape == (200, 8)
    assert ps.sizes.min() >= 0.8 and ps.sizes.max() <= 1.2


def test_init_single_particle():
    ps = make_ps(1)
    assert ps.weights[0] == 1.0


def test_init_deterministic():
    a, b = make_ps(50, seed=7), make_ps(50, seed=7)
    assert np.array_equal(a.sizes, b.sizes)


def test_init_validates_n():
    with pytest.raises(ConfigError):
        make_ps(0)


def test_weigh_uniform_stays_uniform():
    ps = make_ps(20)
    s_real = state(fluent("is_in", "B1", "init"), fluent("hand_empty", "R"))
    out = pf.weigh(ps, s_real, [s_real] * 20)
    assert np.allclose(out.weights, 1 / 20)


def test_weigh_perfect_match_dominates():
    ps = make_ps(5)
    s_real = state(fluent("is_in", "B1", "init"), fluent("hand_empty", "R"))
    s_bad = state(fluent("is_in", "B1", "goal"), fluent("hand_empty", "R"))
    sims = [s_bad, s_bad, s_real, s_bad, s_bad]
    out = pf.weigh(ps, s_real, sims)
    assert np.argmax(out.weights) == 2
    assert out.weights[2] > out.weights[0]


def test_weigh_jaccard_arithmetic():
    a = state(fluent("hand_empty", "R"), fluent("is_in", "B1", "init"))
    b = state(fluent("hand_empty", "R"))
    assert pf.jaccard(a, b) == pytest.approx(0.5)
    ps = make_ps(2)
    out = pf.weigh(ps, a, [b, b])
    # factor 0.5 + 0.01 applied uniformly -> weights stay 0.5 each
    assert np.allclose(out.weights, 0.5)


def test_weigh_order_invariance():
    ps = make_ps(3)
    s1 = state(fluent("hand_empty", "R"), fluent("is_in", "B1", "init"),
               fluent("is_in", "B2", "init"))
    s2 = frozenset(sorted(s1, key=str))
    out1 = pf.weigh(ps, s1, [s1, s2, s1])
    assert np.allclose(out1.weights, 1 / 3)


def test_weigh_normalization_preserved():
    rng = np.random.default_rng(5)
    ps = make_ps(30)
    base = [fluent("hand_empty", "R"), fluent("is_in", "B1", "init"),
            fluent("is_in", "B2", "goal"), fluent("at_container", "B3", "C")]
    s_real = frozenset(base)
    for _ in range(20):
        sims = [frozenset(rng.choice(base, size=rng.integers(1, 4),
                                     replace=False).tolist())
                for _ in range(30)]
        ps = pf.weigh(ps, s_real, sims)
        assert abs(ps.weights.sum() - 1.0) < 1e-9


def test_resample_identity_when_ess_high():
    ps = make_ps(40)
    out = pf.resample(ps, mode="ess")
    assert out is ps


def test_resample_degenerate_copies_best():
    ps = make_ps(10, seed=3)
    w = np.full(10, 1e-9)
    w[4] = 1.0 - 9e-9
    ps = ps.replace(weights=w / w.sum())
    out = pf.resample(ps, mode="ess")
    spread = np.abs(out.sizes - ps.sizes[4]).max()
    assert spread < 6 * pf.JITTER_FRAC * 0.4  # copies of particle 4 + jitter
    assert np.allclose(out.weights, 0.1)


def test_resample_multiplicity_matches_weights():
    # weights {0.5, 0.25, 0.25} resampled to N=4: expected multiplicity
    # {2, 1, 1} per draw
    rng = np.random.default_rng(0)
    counts = np.zeros(3)
    trials = 4000
    for t in range(trials):
        idx = pf._systematic_indices(np.array([0.5, 0.25, 0.25]), rng, n_out=4)
        for i in idx:
            counts[i] += 1
    mult = counts / trials
    assert np.allclose(mult, [2.0, 1.0, 1.0], atol=0.05)


def test_resample_preserves_mean_within_jitter():
    ps = make_ps(400, seed=9)
    w = np.exp(-((ps.sizes[:, 0] - 1.05) ** 2) / 0.002)
    ps = ps.replace(weights=w / w.sum())
    before = pf.estimate(ps)[0]
    out = pf.resample(ps, mode="always")
    after = out.sizes[:, 0].mean()
    assert abs(after - before) < 0.02


def test_resample_always_mode():
    ps = make_ps(30)
    out = pf.resample(ps, mode="always")
    assert out is not ps
    assert np.allclose(out.weights, 1 / 30)


def test_resample_mode_validation():
    with pytest.raises(ConfigError):
        pf.resample(make_ps(4), mode="sometimes")


def test_estimate_identical_particles():
    ps = make_ps(7)
    sizes = np.tile(np.linspace(0.85, 1.15, 8), (7, 1))
    ps = ps.replace(sizes=sizes)
    assert np.allclose(pf.estimate(ps), sizes[0])


def test_estimate_two_particle_mean():
    ps = make_ps(2, n_blocks=1)
    ps = ps.replace(sizes=np.array([[0.9], [1.1]]),
                    weights=np.array([0.5, 0.5]))
    assert pf.estimate(ps)[0] == pytest.approx(1.0)


def test_ess_definition():
    ps = make_ps(4).replace(weights=np.array([0.25, 0.25, 0.25, 0.25]))
    assert pf.ess(ps) == pytest.approx(4.0)
    ps2 = ps.replace(weights=np.array([1.0, 0.0, 0.0, 0.0]))
    assert pf.ess(ps2) == pytest.approx(1.0)


def test_posterior_concentrates_under_consistent_evidence():
    # noise-free channel: particles whose first-block size sits in the
    # "agreeing" band keep matching the real outcome; spread must shrink
    rng = np.random.default_rng(2)
    ps = make_ps(120, seed=5, n_blocks=2)
    truth = 1.07
    s_match = state(fluent("hand_empty", "R"), fluent("is_in", "B1", "init"))
    s_diff = state(fluent("is_holding", "R", "B1"))
    variances = [pf.size_variance(ps)[0]]
    for _ in range(25):
        sims = [s_match if abs(ps.sizes[i, 0] - truth) < 0.05 else s_diff
                for i in range(ps.n)]
        ps = pf.weigh(ps, s_match, sims)
        ps = pf.resample(ps, mode="ess")
        variances.append(pf.size_variance(ps)[0])
    assert variances[-1] < 0.2 * variances[0]
    assert abs(pf.estimate(ps)[0] - truth) < 0.05


def test_diagnostics_csv(tmp_path):
    ps = make_ps(10, n_blocks=2)
    path = tmp_path / "diag.csv"
    pf.write_diagnostics(path, pf.diagnostics_row(ps, 0))
    pf.write_diagnostics(path, pf.diagnostics_row(ps, 1))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "episode,block,size_mean,size_var,ess"
    assert len(lines) == 5
