import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vtcoord.analysis import (
    CertificateError,
    closed_loop_matrix,
    certify,
    det_formula,
    det_formula_weights,
    feasibility_margins,
    fit_decay_rate,
    fitted_envelope,
    gelfand_constant,
    h_max,
    h_max_closed_form,
    mode_matrices,
    mode_matrix,
    propagate_closed_loop,
    spectral_radius,
    trace_formula,
    zero_mode_rate,
)
from vtcoord.graph import build_topology, random_connected_topology, spectral_decomposition
from vtcoord.mission import GammaBounds
from vtcoord.solver import gains

K2 = spectral_decomposition(build_topology(2, "complete"))
G1 = gains(1.0, 1.0, 1.0, 0.1)


def brute_gelfand(Q, r, kmax):
    # every power up to kmax, no early exit
    best, M = 1.0, np.eye(2)
    for _ in range(kmax):
        M = M @ (Q / r)
        best = max(best, np.abs(M).sum(axis=1).max())
    return best


def test_k2_certificate_example():
    cert = certify(K2, G1, 0.1, nu=1.0)
    assert cert.valid
    rho_direct = np.abs(np.linalg.eigvals(mode_matrix(G1, 0.1, 2.0).q)).max()
    assert cert.rho[1] == pytest.approx(rho_direct, abs=1e-14)
    assert cert.rho[1] == pytest.approx(0.99503731, abs=1e-8)
    assert cert.q == pytest.approx(0.99005, abs=1e-5)
    # r_h = max(rho, exp(-0.1), q) + 1e-3
    assert cert.r_h == pytest.approx(0.9960373133551005, abs=1e-15)
    assert cert.C[1] == pytest.approx(brute_gelfand(mode_matrix(G1, 0.1, 2.0).q, cert.r_h, 3000), rel=1e-12)
    assert cert.C[1] == pytest.approx(10.317, abs=1e-3)
    assert math.isnan(cert.C[0])
    assert cert.to_json()["C"][0] is None


def test_zero_mode_structure():
    cert = certify(K2, G1, 0.1, nu=1.0)
    Q1 = mode_matrix(G1, 0.1, 0.0).q
    assert cert.P[1, 0] == 0.0 and cert.P[1, 1] == 0.0
    assert Q1[1, 1] == cert.q == zero_mode_rate(G1, 0.1)
    # Q1 = P + q F: the idempotent split of the zero mode
    np.testing.assert_allclose(cert.P + cert.q * cert.F, Q1, atol=1e-14)
    np.testing.assert_allclose(cert.P @ cert.P, cert.P, atol=1e-12)


def test_det_formula_in_weights_example():
    # printed form: (w3 + w1 h^4/4 (lam - 1)) / (w3 + w2 h^2 + w1 h^4 / 4)
    assert det_formula_weights((1, 1, 1), 0.1, 2.0) == pytest.approx(det_formula(G1, 0.1, 2.0), abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(w=st.tuples(*[st.floats(0.05, 50.0)] * 3), h=st.floats(0.001, 1.0), lam=st.floats(0.0, 2.0))
def test_trace_and_det_formulas(w, h, lam):
    g = gains(*w, h)
    Q = mode_matrix(g, h, lam).q
    direct_det = Q[0, 0] * Q[1, 1] - Q[0, 1] * Q[1, 0]
    assert det_formula(g, h, lam) == pytest.approx(direct_det, abs=1e-14)
    assert det_formula_weights(w, h, lam) == pytest.approx(direct_det, abs=1e-14)
    assert trace_formula(g, h, lam) == pytest.approx(np.trace(Q), abs=1e-14)
    assert spectral_radius(mode_matrix(g, h, lam)) == pytest.approx(np.abs(np.linalg.eigvals(Q)).max(), abs=1e-9)


def test_h_max_matches_closed_form():
    for w in [(1, 1, 1), (5, 5, 1), (2, 0.3, 7)]:
        hm = h_max(K2, w)
        assert hm == pytest.approx(h_max_closed_form(w), rel=1e-5)
    assert h_max_closed_form((1, 1, 1)) == pytest.approx(math.sqrt(2.0))


def test_certificate_invalid_above_h_max():
    h = 1.05 * h_max_closed_form((1, 1, 1))
    cert = certify(K2, gains(1, 1, 1, h), h, nu=1.0)
    assert not cert.valid
    assert cert.offending and cert.offending[0]["mode"] == 0
    assert "smaller h" in cert.message and "mode 0" in cert.message
    with pytest.raises(CertificateError):
        feasibility_margins(cert, GammaBounds(0.0, 2.0, 2.0), 0.0, 0.0)
    with pytest.raises(ValueError):
        certify(K2, G1, 0.1, nu=0.0)


def test_gelfand_early_exit_is_exact(rng):
    for _ in range(20):
        Q = rng.normal(scale=0.6, size=(2, 2))
        r = np.abs(np.linalg.eigvals(Q)).max() + 0.05
        assert gelfand_constant(Q, r) == pytest.approx(brute_gelfand(Q, r, 2000), rel=1e-12)


def test_closed_loop_spectrum_is_union_of_modes(rng):
    t = random_connected_topology(6, rng)
    sd = spectral_decomposition(t)
    g = gains(2.0, 1.0, 0.5, 0.2)
    A, _ = closed_loop_matrix(sd, g, 0.2)
    modal = np.concatenate([np.linalg.eigvals(m.q) for m in mode_matrices(g, 0.2, sd)])
    full = np.linalg.eigvals(A)
    np.testing.assert_allclose(np.sort_complex(np.round(full, 9)), np.sort_complex(np.round(modal, 9)), atol=1e-8)


def test_modal_coordinates_follow_mode_matrices(rng):
    sd = spectral_decomposition(random_connected_topology(5, rng))
    g = gains(1.0, 2.0, 1.0, 0.15)
    run = propagate_closed_loop(sd, g, 0.15, rng.normal(size=5), rng.normal(size=5) * 0.1, steps=40)
    mats = mode_matrices(g, 0.15, sd)
    for i, m in enumerate(mats):
        x = np.array([run.delta_modal[0, i], run.rate_modal[0, i]])
        for k in range(40):
            x = m.q @ x
        np.testing.assert_allclose(x, [run.delta_modal[40, i], run.rate_modal[40, i]], atol=1e-10)


def test_closed_loop_disturbance_injection():
    g = G1
    alpha = np.zeros((3, 2))
    alpha[0] = [0.1, -0.1]
    run = propagate_closed_loop(K2, g, 0.1, np.zeros(2), np.zeros(2), alpha=alpha, steps=3)
    np.testing.assert_allclose(run.delta[1], (0.5 * 0.01 * g.a - 1.0) * alpha[0])
    np.testing.assert_allclose(run.rate[1], g.a * 0.1 * alpha[0])
    with pytest.raises(ValueError):
        propagate_closed_loop(K2, g, 0.1, np.zeros(2), np.zeros(2), alpha=alpha, steps=5)


def test_consensus_value_is_preserved_without_disturbance():
    # K2 with zero initial rates: the average deviation stays put while the gap closes
    run = propagate_closed_loop(K2, G1, 0.1, np.array([0.0, 1.0]), np.zeros(2), steps=3000)
    assert abs(run.delta[-1, 0] - run.delta[-1, 1]) < 1e-5
    np.testing.assert_allclose(run.delta.mean(axis=1), 0.5, atol=1e-12)


def test_feasibility_margins_examples():
    cert = certify(K2, G1, 0.1, nu=1.0)
    gb = GammaBounds(0.0, 2.0, 2.0)
    m0 = feasibility_margins(cert, gb, d=0.0, init_norm=0.0)
    np.testing.assert_array_equal(m0.margin_u, m0.rhs_u)
    np.testing.assert_array_equal(m0.margin_rate, m0.rhs_rate)
    assert m0.valid and m0.rhs_rate.min() > 0
    # margins are affine in d with slope -a (S2 + 1)
    d = 1e-4
    m1 = feasibility_margins(cert, gb, d, 0.01)
    m2 = feasibility_margins(cert, gb, 2 * d, 0.01)
    slope = cert.gains.a * (m1.S2 + 1.0)
    np.testing.assert_allclose(m1.margin_u - m2.margin_u, slope * d, rtol=1e-9)
    np.testing.assert_allclose(m1.margin_rate - m2.margin_rate, slope * d, rtol=1e-9)
    # the intercepts zero the tighter condition
    R = min(m0.rhs_u.min(), m0.rhs_rate.min())
    assert cert.gains.a * m0.S1 * m0.nu_h == pytest.approx(R)
    assert cert.gains.a * (m0.S2 + 1.0) * m0.d_h == pytest.approx(R)
    nu_b, d_b = m0.certified_box
    assert feasibility_margins(cert, gb, 0.99 * d_b, 0.99 * nu_b).valid
    assert not feasibility_margins(cert, gb, 0.0, 1.01 * m0.nu_h).valid


def test_fit_decay_rate_recovers_geometric_rate():
    r = 0.97
    v = 3.0 * r ** np.arange(400)
    assert fit_decay_rate(v) == pytest.approx(math.log(r), abs=1e-12)
    assert fitted_envelope(v, r) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        fit_decay_rate(np.zeros(10))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 15))
def test_half_h_max_is_stable(seed, n):
    rng = np.random.default_rng(seed)
    sd = spectral_decomposition(random_connected_topology(n, rng))
    w = tuple(float(x) for x in np.exp(rng.uniform(-2, 2, 3)))
    h = 0.5 * h_max(sd, w)
    g = gains(*w, h)
    assert all(spectral_radius(m) < 1.0 for m in mode_matrices(g, h, sd)[1:])
    assert certify(sd, g, h, nu=1.0).valid
