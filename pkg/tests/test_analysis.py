import itertools
import math

import numpy as np
import pytest

from fracdelay.analysis import (
    EnvelopeParams,
    LipschitzProbe,
    check_growth_bound,
    contraction_bound,
    estimate_lipschitz,
    fit_gronwall_K,
    gronwall_envelope,
    stability_harness,
    stabilization_time,
)
from fracdelay.model import (
    RhsField,
    ValidationError,
    constant_rhs,
    example_4_1_rhs,
    example_4_2_rhs,
    history_from_name,
    make_problem,
)
from fracdelay.solver import SolverConfig, solve

PAPER_PHIS_41 = ["sin", "cos", "neg_cos", "const:1.5"]


def direct_bound(l, a, b, t0, h):
    # independent evaluation with the stdlib gamma
    s = t0 + h
    return l * (s ** (a - 1) * math.exp(-b * s) / (b * math.gamma(a)) + s ** a / math.gamma(a + 1))


def test_contraction_bound_example_4_1():
    q = contraction_bound(0.5, 0.5, 1.0, 0.0, 1.0)
    expected = 0.5 * (math.exp(-1) / math.gamma(0.5) + 1 / math.gamma(1.5))
    assert q == pytest.approx(expected, rel=1e-13)
    assert q == pytest.approx(0.66797, abs=1e-5) and q < 1


def test_contraction_bound_linear_in_l():
    q = contraction_bound(0.5, 0.5, 1.0, 0.0, 1.0)
    assert contraction_bound(2.0, 0.5, 1.0, 0.0, 1.0) == pytest.approx(4 * q, rel=1e-14)
    assert contraction_bound(2.0, 0.5, 1.0, 0.0, 1.0) >= 1
    assert contraction_bound(1e-12, 0.5, 1.0, 0.0, 1.0) < 1e-11


@pytest.mark.parametrize("a, b, t0, h", [(0.3, 0.5, 0.0, 2.0), (0.9, 3.0, 1.0, 0.5), (0.5, 1.0, 2.0, 1.0)])
def test_contraction_bound_against_direct(a, b, t0, h):
    assert contraction_bound(0.7, a, b, t0, h) == pytest.approx(direct_bound(0.7, a, b, t0, h), rel=1e-12)


def test_contraction_bound_monotone():
    ls = np.linspace(0.01, 3, 50)
    qs = [contraction_bound(l, 0.5, 1.0, 0.0, 1.0) for l in ls]
    assert all(np.diff(qs) > 0)
    betas = np.linspace(0.1, 50, 100)
    qb = [contraction_bound(1.0, 0.5, b, 0.0, 1.0) for b in betas]
    assert all(np.diff(qb) <= 0)
    # only the exponential term vanishes; the near-field term is beta independent
    assert qb[-1] == pytest.approx(1.0 / math.gamma(1.5), rel=1e-15)


def test_contraction_bound_domain():
    with pytest.raises(ValidationError):
        contraction_bound(0.0, 0.5, 1.0, 0.0, 1.0)
    with pytest.raises(ValidationError):
        contraction_bound(1.0, 1.5, 1.0, 0.0, 1.0)


def test_envelope_trivial_cases():
    p = EnvelopeParams(0.0, 0.5, 3.0, 0.5, 1.0, 1.0)
    assert gronwall_envelope(p, 5.0) == 0.0
    p = EnvelopeParams(2.0, 0.5, 0.0, 0.5, 1.0, 1.0)
    t = np.linspace(1, 10, 7)
    assert np.allclose(gronwall_envelope(p, t), 2.0 * np.exp(-(t - 1.0)), rtol=1e-15)
    with pytest.raises(ValidationError):
        gronwall_envelope(p, 0.5)


def _ensemble(dt, T=10.0):
    p = make_problem(0.5, 1.0, 0.0, 1.0, example_4_1_rhs(), history_from_name("sin"))
    rep = stability_harness(p, [history_from_name(n) for n in PAPER_PHIS_41], SolverConfig(dt=dt, T=T))
    return p, rep


def test_fit_K_identical_and_zero_forcing():
    p = make_problem(0.5, 1.0, 0.0, 1.0, example_4_1_rhs(), math.sin)
    tr = solve(p, SolverConfig(dt=2.0 ** -5, T=5.0)).trajectory
    assert fit_gronwall_K(p, tr, tr) == 0.0
    p0 = make_problem(0.5, 1.0, 0.0, 1.0, constant_rhs(0.0), lambda t: 1.0)
    a = solve(p0, SolverConfig(dt=2.0 ** -5, T=5.0)).trajectory
    b = solve(p0.with_phi(lambda t: -0.5), SolverConfig(dt=2.0 ** -5, T=5.0)).trajectory
    assert fit_gronwall_K(p0, a, b, l=0.5) == 0.0


def test_fit_K_infinite_when_envelope_form_fails():
    # equal values at t0 but different histories: the envelope collapses to zero
    p = make_problem(0.5, 1.0, 0.0, 1.0, example_4_1_rhs(), lambda t: 1.0)
    a = solve(p, SolverConfig(dt=2.0 ** -5, T=4.0)).trajectory
    b = solve(p.with_phi(lambda t: 1.0 + 2.0 * t), SolverConfig(dt=2.0 ** -5, T=4.0)).trajectory
    assert fit_gronwall_K(p, a, b) == math.inf


def test_envelope_dominates_with_fitted_K():
    p, rep = _ensemble(2.0 ** -6)
    for a, b in itertools.combinations(PAPER_PHIS_41, 2):
        ta, tb = rep.trajectories[a], rep.trajectories[b]
        K = fit_gronwall_K(p, ta, tb)
        assert math.isfinite(K)
        t, ya = ta.forward()
        _, yb = tb.forward()
        mask = t >= 1.0
        env = gronwall_envelope(EnvelopeParams(ya[0] - yb[0], 0.5, K, 0.5, 1.0, 1.0), t[mask])
        assert np.all(np.abs(ya - yb)[mask] <= env)
        params = EnvelopeParams(1.0, 0.5, K, 0.5, 1.0, 1.0)
        assert gronwall_envelope(params, 100.0) < 1e-10


def test_fitted_K_regression_sin_cos():
    p, rep = _ensemble(2.0 ** -6)
    K = fit_gronwall_K(p, rep.trajectories["sin"], rep.trajectories["cos"])
    # value recorded from the dt = 2^-6, T = 10 run
    assert K == pytest.approx(0.2604, rel=0.2)


def test_estimate_lipschitz_examples():
    assert estimate_lipschitz(constant_rhs(4.0), LipschitzProbe(n_probes=500)) == 0.0
    assert estimate_lipschitz(example_4_1_rhs()) <= 0.5
    lin = RhsField(lambda t, seg: 2.0 * seg.value_at(-seg.h))
    assert 1.99 <= estimate_lipschitz(lin, LipschitzProbe(n_probes=2000)) <= 2.0


def test_estimate_lipschitz_is_seeded():
    probe = LipschitzProbe(n_probes=300, seed=5)
    assert estimate_lipschitz(example_4_2_rhs(), probe) == estimate_lipschitz(example_4_2_rhs(), probe)


def test_growth_bound_holds_for_example_4_2():
    f = example_4_2_rhs()
    assert check_growth_bound(f, *f.growth) <= 0.0
    # a bound that is too small gets flagged
    assert check_growth_bound(f, lambda t: 0.0, lambda t: 0.01) > 0.0


def test_harness_identical_members():
    p = make_problem(0.5, 1.0, 0.0, 1.0, example_4_1_rhs(), math.cos)
    phi = history_from_name("cos")
    rep = stability_harness(p, [phi, phi, phi], SolverConfig(dt=2.0 ** -5, T=5.0), eps_list=(1e-3, 0.5))
    assert np.all(rep.max_pairwise == 0.0)
    assert rep.T_of_eps == {1e-3: 0.0, 0.5: 0.0}
    assert rep.decay_fit is None


def test_harness_needs_two_members():
    p = make_problem(0.5, 1.0, 0.0, 1.0, example_4_1_rhs(), math.cos)
    with pytest.raises(ValidationError):
        stability_harness(p, [history_from_name("cos")], SolverConfig(dt=0.125, T=2.0))


def test_T_of_eps_nonincreasing():
    _, rep = _ensemble(2.0 ** -5)
    eps = sorted(rep.T_of_eps)
    Ts = [rep.T_of_eps[e] for e in eps]
    assert all(Ts[i] >= Ts[i + 1] for i in range(len(Ts) - 1))
    assert np.all(rep.pair_distances >= 0)


def test_stabilization_time_rules():
    t = np.arange(6.0)
    assert stabilization_time(t, np.array([3, 2, 1, 0.5, 0.2, 0.1]), 0.6) == 3.0
    assert stabilization_time(t, np.array([3, 2, 1, 0.5, 0.2, 0.7]), 0.6) == math.inf
    assert stabilization_time(t, np.array([0.5, 0.9, 0.1, 0.1, 0.1, 0.1]), 0.6) == 2.0


def test_decay_fit_recovers_exponential_rate():
    _, rep = _ensemble(2.0 ** -6)
    fit = rep.decay_fit
    assert fit is not None and 0.5 < fit.rho < 1.2
    assert fit.rms_log_error < 0.05


def test_harness_with_workers_matches_sequential():
    p = make_problem(0.5, 1.0, 0.0, 1.0, example_4_2_rhs(), math.cos)
    phis = [history_from_name(n) for n in ("linear", "cos", "neg_cos", "const:1.5")]
    cfg = SolverConfig(dt=2.0 ** -5, T=5.0)
    a = stability_harness(p, phis, cfg, workers=4)
    b = stability_harness(p, phis, cfg)
    assert np.array_equal(a.pair_distances, b.pair_distances)
