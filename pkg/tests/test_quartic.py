import math

import numpy as np
import pytest

from relayalloc import quartic, specfun
from relayalloc.quartic import (QuarticSolveError, constraint_power,
                                depressed_coeffs, kkt_power, marginal_power_arr,
                                pin_coeffs, problem, quartic_residual,
                                quartic_roots, solve_quartic,
                                stationarity_coeffs)
from relayalloc.rates import LOG2E
from relayalloc.specfun import FITTED_TABLE, exp_e1, rational_approx


def _random_instance(rng):
    d_sr = rng.uniform(0.05, 0.5)
    d_sd = rng.uniform(0.5, 1.5)
    d_rd = rng.uniform(0.1, 1.0)
    k_sr, k_sd, k_rd = d_sr**2, d_sd**2, d_rd**2
    P_s = rng.uniform(1.0, 5.0)
    row = specfun.select_coeffs(k_rd / rng.uniform(0.5, 8.0))
    return k_sr, k_sd, k_rd, P_s, row


# -- constraint power ----------------------------------------------------------

def test_constraint_power_refuses_equal_links():
    # k_sr = k_sd makes psi = beta: the relay cannot help
    row = FITTED_TABLE[0]
    assert constraint_power(0.25, 0.8, 0.8, 3.0, row) == 0.0


def test_constraint_power_strong_decode_link_is_unbounded():
    # psi far above the rational's ceiling: the constraint cannot bind and
    # callers clip the cap at the budget
    row = FITTED_TABLE[0]
    cap = constraint_power(0.25, 1e-4, 1.0, 5.0, row)
    assert math.isinf(cap)
    assert min(cap, 20.0) == 20.0


def test_constraint_power_round_trip(rng):
    # the returned power satisfies the approximated (re-anchored) constraint
    checked = 0
    for _ in range(400):
        k_sr, k_sd, k_rd, P_s, row = _random_instance(rng)
        psi = exp_e1(k_sr / P_s)
        beta = exp_e1(k_sd / P_s)
        cap = constraint_power(k_rd, k_sr, k_sd, P_s, row)
        if cap <= 0.0 or math.isinf(cap):
            continue
        s = P_s * k_rd / k_sd
        if abs(cap - s) < 1e-6 * s:
            continue  # collapsed onto the crossover point; equation is 0/0 there
        a, b, c = pin_coeffs(row, k_sd, P_s, beta)
        delta = k_rd / cap
        lhs = ((a * delta + b) / (c + delta) - beta) / (1.0 - s / cap)
        assert lhs == pytest.approx(psi - beta, abs=1e-6 * max(1.0, psi))
        checked += 1
    assert checked > 150


# -- legacy coefficient set ------------------------------------------------------

def test_depressed_lambda4_positive(rng):
    for _ in range(200):
        k_sr, k_sd, k_rd, P_s, row = _random_instance(rng)
        beta = exp_e1(k_sd / P_s)
        tau = 10 ** rng.uniform(-3, 1)
        l4 = depressed_coeffs(k_rd, k_sd, beta, row, tau)[3]
        assert l4 > 0.0


def test_depressed_coeffs_symmetric_users():
    row = FITTED_TABLE[0]
    beta = exp_e1(0.3)
    a = depressed_coeffs(0.2, 0.9, beta, row, 0.7)
    b = depressed_coeffs(0.2, 0.9, beta, row, 0.7)
    assert a == b


def test_depressed_root_satisfies_quartic(rng):
    for _ in range(200):
        k_sr, k_sd, k_rd, P_s, row = _random_instance(rng)
        beta = exp_e1(k_sd / P_s)
        tau = 10 ** rng.uniform(-3, 1)
        l = depressed_coeffs(k_rd, k_sd, beta, row, tau)
        r = solve_quartic(*l)
        assert quartic_residual(r, *l) < 1e-6


# -- quartic solver ----------------------------------------------------------------

def test_solve_quartic_factored_example():
    # (P-2)(P+1)(P^2+P+1) = P^4 - 2P^2 - 3P - 2; constant term is -lambda4
    assert solve_quartic(0.0, -2.0, -3.0, 2.0) == pytest.approx(2.0, abs=1e-10)


def test_solve_quartic_biquadratic():
    # P^4 - 5 P^2 - 4 = 0 -> P = sqrt((5 + sqrt(41))/2)
    expected = math.sqrt((5.0 + math.sqrt(41.0)) / 2.0)
    assert expected == pytest.approx(2.3877944046161983, abs=1e-12)
    assert solve_quartic(0.0, -5.0, 0.0, 4.0) == pytest.approx(expected, abs=1e-10)


def test_solve_quartic_no_positive_root():
    # (P+1)^4 = P^4 + 4P^3 + 6P^2 + 4P + 1 has no positive real root
    with pytest.raises(QuarticSolveError):
        solve_quartic(4.0, 6.0, 4.0, -1.0)


def test_solve_quartic_matches_companion_oracle(rng):
    for _ in range(300):
        k_sr, k_sd, k_rd, P_s, row = _random_instance(rng)
        beta = exp_e1(k_sd / P_s)
        tau = 10 ** rng.uniform(-3, 1)
        l = depressed_coeffs(k_rd, k_sd, beta, row, tau)
        r = solve_quartic(*l)
        roots = np.roots([1.0, l[0], l[1], l[2], -l[3]])
        real = roots.real[np.abs(roots.imag) <= 1e-9 * (1.0 + np.abs(roots.real))]
        pos = real[real > 0.0]
        assert len(pos) in (1, 3)          # Descartes with l4 > 0
        assert r == pytest.approx(pos.max(), rel=1e-8)


def test_quartic_roots_batched_matches_scalar(rng):
    l1 = rng.normal(size=6)
    l2 = rng.normal(size=6)
    l3 = rng.normal(size=6)
    l4 = rng.uniform(0.5, 3.0, size=6)
    batch = quartic_roots(l1, l2, l3, l4)
    for i in range(6):
        single = quartic_roots(float(l1[i]), float(l2[i]), float(l3[i]), float(l4[i]))
        assert np.allclose(sorted(batch[:, i], key=lambda z: (z.real, z.imag)),
                           sorted(single, key=lambda z: (z.real, z.imag)), atol=1e-8)


def test_quartic_roots_reconstruct_polynomial(rng):
    # product over roots of (P - r) must reproduce the coefficients
    for _ in range(50):
        l = [float(v) for v in rng.normal(size=3)] + [float(rng.uniform(0.2, 4.0))]
        r = quartic_roots(*l)
        assert np.isclose(r.sum().real, -l[0], atol=1e-6 * (1 + abs(l[0])))
        prod = np.prod(r).real
        assert np.isclose(prod, -l[3], atol=1e-6 * (1 + abs(l[3])))


# -- marginal power ------------------------------------------------------------------

def test_stationarity_matches_numeric_derivative(rng):
    # quartic roots of the marginal condition solve dR+/dP = tau numerically
    for _ in range(100):
        k_sr, k_sd, k_rd, P_s, row = _random_instance(rng)
        beta = exp_e1(k_sd / P_s)
        a, b, c = pin_coeffs(row, k_sd, P_s, beta)
        tau = 10 ** rng.uniform(-2.5, 0.0)
        P = marginal_power_arr(np.array([k_rd]), np.array([k_sd]), np.array([beta]),
                               np.array([a]), np.array([b]), np.array([c]),
                               tau, P_s)[0]
        if P <= 0.0:
            continue
        s = P_s * k_rd / k_sd

        def f(p):
            x = (a * (k_rd / p) + b) / (c + k_rd / p)
            return LOG2E * (x - beta) / (1.0 - s / p)

        h = 1e-6 * P
        deriv = (f(P + h) - f(P - h)) / (2.0 * h)
        assert deriv == pytest.approx(tau, rel=1e-4)


def test_kkt_power_monotone_in_tau(rng):
    for _ in range(40):
        k_sr, k_sd, k_rd, P_s, row = _random_instance(rng)
        beta = exp_e1(k_sd / P_s)
        taus = np.logspace(-3, 1, 40)
        vals = [kkt_power(k_rd, k_sd, beta, row, t, P_s) for t in taus]
        drops = np.diff(vals)
        assert np.all(drops <= 1e-9 * np.maximum(vals[:-1], 1.0))
        # strictly decreasing while positive
        pos = [v for v in vals if v > 0.0]
        assert all(b < a for a, b in zip(pos, pos[1:]))


def test_kkt_power_equal_channels_equal_powers():
    row = FITTED_TABLE[0]
    beta = exp_e1(0.2)
    assert kkt_power(0.25, 1.0, beta, row, 0.4, 5.0) == kkt_power(
        0.25, 1.0, beta, row, 0.4, 5.0)


def test_kkt_power_vanishes_for_large_tau(rng):
    for _ in range(20):
        k_sr, k_sd, k_rd, P_s, row = _random_instance(rng)
        beta = exp_e1(k_sd / P_s)
        assert kkt_power(k_rd, k_sd, beta, row, 1e4, P_s) == 0.0


def test_kkt_power_rejects_bad_tau():
    with pytest.raises(ValueError):
        kkt_power(0.25, 1.0, 1.0, FITTED_TABLE[0], 0.0, 5.0)


def test_pin_coeffs_interpolates_exactly():
    row = FITTED_TABLE[1]
    k_sd, P_s = 1.3, 4.0
    beta = exp_e1(k_sd / P_s)
    a, b, c = pin_coeffs(row, k_sd, P_s, beta)
    d_s = k_sd / P_s
    assert (a * d_s + b) / (c + d_s) == pytest.approx(beta, rel=1e-14)


def test_problem_assembly():
    row = FITTED_TABLE[0]
    p = problem(0.25, 0.09, 1.0, 5.0, row, 0.5)
    assert p.lambda4 > 0.0
    assert p.psi > p.beta
    assert p.coeffs is row
