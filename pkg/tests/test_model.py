import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robust_mcbf.errors import InvalidInput
from robust_mcbf.model import (ChannelSet, ErrorModel, Geometry, SystemConfig, dbm2watt,
                               generate_instance, instance_from_json, instance_to_json,
                               pathloss_amplitude, sample_ellipsoid, sinr, sinr_all, sinr_edge,
                               sinr_full_all, sinr_intra_full, validate_robustness, watt2dbm,
                               worst_case_quadratic)
from robust_mcbf.sdr import solve_robust

from conftest import crandn, rand_hermitian


# ---- units and config ------------------------------------------------------

def test_dbm_roundtrip():
    assert dbm2watt(30.0) == pytest.approx(1.0)
    assert watt2dbm(1e-3) == pytest.approx(0.0)


def test_default_noise_power():
    # -162 dBm/Hz over 10 MHz = -92 dBm
    cfg = SystemConfig.uniform(1, 1, 1, 0.0)
    assert watt2dbm(cfg.sigma2[0, 0]) == pytest.approx(-92.0)
    assert watt2dbm(cfg.p_max) == pytest.approx(46.0)


@pytest.mark.parametrize("kw", [dict(Nc=0, K=1, Nt=1), dict(Nc=1, K=1, Nt=0)])
def test_config_rejects_bad_dimensions(kw):
    with pytest.raises(InvalidInput):
        SystemConfig.uniform(kw["Nc"], kw["K"], kw["Nt"], 0.0)


def test_config_rejects_nonpositive_noise():
    with pytest.raises(InvalidInput):
        SystemConfig.uniform(1, 1, 1, 0.0, noise_w=0.0)


# ---- SINR ------------------------------------------------------------------

def _sys(Nc, K, Nt, sigma=1.0):
    return SystemConfig.uniform(Nc, K, Nt, 0.0, noise_w=sigma)


def test_sinr_single_user():
    h = np.array([1, 0], complex).reshape(1, 1, 1, 2)
    w = np.array([2, 0], complex).reshape(1, 1, 2)
    assert sinr(0, 0, w, h, 1.0) == pytest.approx(4.0)


def test_sinr_two_users_equal_interference():
    h = np.zeros((1, 1, 2, 2), complex)
    h[0, 0, :, 0] = 1
    w = np.zeros((1, 2, 2), complex)
    w[0, :, 0] = 1
    assert sinr(0, 0, w, h, 1.0) == pytest.approx(0.5)
    assert sinr(0, 1, w, h, 1.0) == pytest.approx(0.5)


def _sinr_loop(n, k, w, h, s2):
    # straight-line re-evaluation: signal over intra-cell + inter-cell + noise
    Nc, K, _ = w.shape
    sig = abs(np.vdot(h[n, n, k], w[n, k])) ** 2
    intra = sum(abs(np.vdot(h[n, n, k], w[n, i])) ** 2 for i in range(K) if i != k)
    inter = sum(abs(np.vdot(h[m, n, k], w[m, i])) ** 2
                for m in range(Nc) if m != n for i in range(K))
    return sig / (intra + inter + s2)


def test_sinr_matches_scalar_loop(rng):
    h = crandn(rng, 2, 2, 2, 4)
    w = crandn(rng, 2, 2, 4)
    s2 = 0.3
    vec = sinr_all(w, h, s2)
    for n in range(2):
        for k in range(2):
            ref = _sinr_loop(n, k, w, h, s2)
            assert abs(vec[n, k] - ref) <= 1e-12 * ref
            assert abs(sinr(n, k, w, h, s2) - ref) <= 1e-12 * ref


def test_sinr_dimension_mismatch():
    with pytest.raises(InvalidInput):
        sinr(0, 0, np.zeros((1, 1, 3)), np.zeros((1, 1, 1, 2)), 1.0)


@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi))
def test_sinr_common_phase_invariance(seed, phi):
    rng = np.random.default_rng(seed)
    h = crandn(rng, 2, 2, 2, 3)
    w = crandn(rng, 2, 2, 3)
    a = sinr_all(w, h, 0.5)
    b = sinr_all(w * np.exp(1j * phi), h, 0.5)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_edge_sinr_coherent_sum():
    Nc, Nt = 2, 3
    w = np.zeros((Nc, 0, Nt), complex)
    f = np.zeros((Nc, 1, Nt), complex)
    f[:, 0, 0] = 1
    g = np.zeros((Nc, 1, Nt), complex)
    g[:, 0, 0] = 1
    h = np.zeros((Nc, Nc, 0, Nt), complex)
    assert sinr_edge(0, w, f, h, g, 1.0) == pytest.approx(2.0)
    assert sinr_edge(0, w, np.zeros_like(f), h, g, 1.0) == 0.0


def test_edge_sinr_requires_edge_users():
    with pytest.raises(InvalidInput):
        sinr_edge(0, np.zeros((1, 1, 2)), np.zeros((1, 0, 2)), np.zeros((1, 1, 1, 2)),
                  np.zeros((1, 0, 2)), 1.0)


def test_full_sinr_matches_scalar_loop(rng):
    Nc, K, L, Nt = 3, 1, 2, 3
    h = crandn(rng, Nc, Nc, K, Nt)
    g = crandn(rng, Nc, L, Nt)
    w = crandn(rng, Nc, K, Nt)
    f = crandn(rng, Nc, L, Nt)
    s2, se = 0.2, np.array([0.3, 0.4])
    intra, edge = sinr_full_all(w, f, h, g, s2, se)
    for n in range(Nc):
        for k in range(K):
            sig = abs(np.vdot(h[n, n, k], w[n, k])) ** 2
            den = s2
            for m in range(Nc):
                for i in range(K):
                    if (m, i) != (n, k):
                        den += abs(np.vdot(h[m, n, k], w[m, i])) ** 2
                for j in range(L):
                    den += abs(np.vdot(h[m, n, k], f[m, j])) ** 2
            ref = sig / den
            assert abs(intra[n, k] - ref) <= 1e-12 * ref
            assert abs(sinr_intra_full(n, k, w, f, h, g, s2) - ref) <= 1e-12 * ref
    for l in range(L):
        num = sum(abs(np.vdot(g[m, l], f[m, l])) ** 2 for m in range(Nc))
        den = se[l]
        for m in range(Nc):
            den += sum(abs(np.vdot(g[m, l], w[m, i])) ** 2 for i in range(K))
            den += sum(abs(np.vdot(g[m, l], f[m, j])) ** 2 for j in range(L) if j != l)
        ref = num / den
        assert abs(edge[l] - ref) <= 1e-12 * ref
        assert abs(sinr_edge(l, w, f, h, g, se[l]) - ref) <= 1e-12 * ref


# ---- instance generation -----------------------------------------------------

def test_pathloss_pocket_calculator():
    # 10^(-(128.1 - 37.6)/20)
    assert pathloss_amplitude(0.1) == pytest.approx(2.985e-5, rel=1e-3)


def test_pathloss_rejects_nonpositive():
    with pytest.raises(InvalidInput):
        pathloss_amplitude(0.0)


def test_geometry_rejects_nonpositive():
    with pytest.raises(InvalidInput):
        Geometry(inter_bs_km=0.0)


def test_generation_deterministic():
    cfg = SystemConfig.uniform(3, 2, 4, 10.0)
    a, pa = generate_instance(cfg, seed=11)
    b, pb = generate_instance(cfg, seed=11)
    np.testing.assert_array_equal(a.h, b.h)
    np.testing.assert_array_equal(a.scale, b.scale)
    np.testing.assert_array_equal(pa.users, pb.users)
    c, _ = generate_instance(cfg, seed=12)
    assert not np.array_equal(a.h, c.h)


def test_unit_layout_scales():
    cfg = SystemConfig.uniform(2, 2, 4, 20.0)
    ch, _ = generate_instance(cfg, Geometry(layout="unit"), seed=0)
    np.testing.assert_array_equal(ch.scale, 1.0)


def test_hex_layout_min_distance_and_cell():
    cfg = SystemConfig.uniform(3, 3, 2, 10.0)
    geo = Geometry()
    ch, pl = generate_instance(cfg, geo, seed=5)
    d = np.linalg.norm(pl.users - pl.bs[:, None, :], axis=-1)
    assert np.all(d >= geo.min_dist_km)
    # each user is closer to its own BS than the half spacing along any axis
    assert np.all(d <= geo.inter_bs_km / np.sqrt(3) + 1e-12)
    # the large-scale factor reproduces the formula with the drawn distances
    dd = np.linalg.norm(pl.bs[:, None, None, :] - pl.users[None], axis=-1)
    psi_phi = ch.scale / pathloss_amplitude(dd)
    assert np.all(psi_phi > 0)


def test_small_scale_statistics():
    cfg = SystemConfig.uniform(4, 4, 8, 10.0)
    hs = np.concatenate([generate_instance(cfg, seed=s)[0].h.ravel() for s in range(20)])
    assert abs(np.mean(np.abs(hs) ** 2) - 1.0) < 0.05
    assert abs(np.mean(hs.real)) < 0.05 and abs(np.mean(hs.imag)) < 0.05


def test_channel_row_is_local():
    cfg = SystemConfig.uniform(3, 2, 4, 10.0)
    ch, _ = generate_instance(cfg, seed=1)
    r = ch.row(1)
    np.testing.assert_array_equal(r.h[0], ch.h[1])
    assert r.h.shape == (1, 3, 2, 4)


# ---- worst-case oracle -------------------------------------------------------

def test_wc_ball_min_max():
    h = np.array([1.0, 0, 0], complex)
    Q = np.eye(3) / 0.3 ** 2
    assert worst_case_quadratic(h, np.eye(3), Q, "min").value == pytest.approx(0.49, abs=1e-12)
    assert worst_case_quadratic(h, np.eye(3), Q, "max").value == pytest.approx(1.69, abs=1e-12)


def test_wc_rejects_indefinite_q():
    with pytest.raises(InvalidInput):
        worst_case_quadratic(np.ones(2), np.eye(2), np.diag([1.0, -1.0]))


def test_wc_dense_sampling_oracle():
    rng = np.random.default_rng(99)
    N = 3
    M = rand_hermitian(rng, N)
    h = crandn(rng, N)
    eps = 0.5
    Q = np.eye(N) / eps ** 2

    def values(e):
        return np.real(np.einsum("si,ij,sj->s", np.conj(h + e), M, h + e))

    def refine(e0, v0, sgn):
        # adaptive random search: 100k samples per stage in shrinking balls
        # around the incumbent, pulled back into the ellipsoid
        best_e, best_v = e0, sgn * v0
        for rad in (0.3, 0.1, 0.03, 0.01, 0.003):
            d = sample_ellipsoid(rng, Q / rad ** 2, 100_000, boundary_fraction=0.0)
            e = best_e + d
            r = np.sqrt(np.real(np.einsum("si,ij,sj->s", np.conj(e), Q, e)))
            e = e / np.maximum(r, 1.0)[:, None]
            v = sgn * values(e)
            i = v.argmin()
            if v[i] < best_v:
                best_e, best_v = e[i], v[i]
        return sgn * best_v

    e = sample_ellipsoid(rng, Q, 500_000, boundary_fraction=0.5)
    v = values(e)
    samples = {"min": refine(e[v.argmin()], v.min(), 1.0),
               "max": refine(e[v.argmax()], v.max(), -1.0)}
    for sense, best in samples.items():
        wc = worst_case_quadratic(h, M, Q, sense)
        # the attaining point is inside the ellipsoid and reproduces the value
        assert np.real(np.vdot(wc.e, Q @ wc.e)) <= 1 + 1e-9
        x = h + wc.e
        assert np.real(np.vdot(x, M @ x)) == pytest.approx(wc.value, abs=1e-10)
        if sense == "min":
            assert wc.value <= best + 1e-12
        else:
            assert wc.value >= best - 1e-12
        assert abs(wc.value - best) <= 1e-3 * max(1.0, abs(best))


def test_wc_hard_case():
    # M = -I with h = 0: every boundary point is optimal; multiplier sits at
    # the smallest eigenvalue
    N = 3
    wc = worst_case_quadratic(np.zeros(N), -np.eye(N), np.eye(N), "min")
    assert wc.value == pytest.approx(-1.0, abs=1e-12)
    assert np.linalg.norm(wc.e) == pytest.approx(1.0, abs=1e-12)


def test_wc_ellipsoidal_against_first_order_conditions(rng):
    N = 4
    M = rand_hermitian(rng, N)
    B = crandn(rng, N, N)
    Q = B @ B.conj().T + 0.5 * np.eye(N)
    h = crandn(rng, N)
    wc = worst_case_quadratic(h, M, Q, "min")
    x = h + wc.e
    # stationarity: M x + mu Q e = 0 with mu >= 0 and mu (1 - e'Qe) = 0
    g = M @ x
    Qe = Q @ wc.e
    mu = -np.real(np.vdot(Qe, g)) / np.real(np.vdot(Qe, Qe))
    assert mu >= -1e-9
    assert np.linalg.norm(g + mu * Qe) <= 1e-7 * max(1.0, np.linalg.norm(g))


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.sampled_from(["min", "max"]))
def test_wc_brackets_nominal(seed, eps, sense):
    rng = np.random.default_rng(seed)
    N = 3
    M = rand_hermitian(rng, N)
    h = crandn(rng, N)
    nominal = np.real(np.vdot(h, M @ h))
    v = worst_case_quadratic(h, M, np.eye(N) / eps ** 2, sense).value
    tol = 1e-9 * max(1.0, abs(nominal))
    assert (v <= nominal + tol) if sense == "min" else (v >= nominal - tol)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.floats(0.1, 0.99))
def test_wc_monotone_in_radius(seed, eps, shrink):
    rng = np.random.default_rng(seed)
    N = 3
    M = rand_hermitian(rng, N)
    h = crandn(rng, N)
    big, small = np.eye(N) / eps ** 2, np.eye(N) / (shrink * eps) ** 2
    tol = 1e-9 * max(1.0, np.abs(M).max() * (1 + np.linalg.norm(h)) ** 2)
    assert worst_case_quadratic(h, M, small, "min").value >= \
        worst_case_quadratic(h, M, big, "min").value - tol
    assert worst_case_quadratic(h, M, small, "max").value <= \
        worst_case_quadratic(h, M, big, "max").value + tol


def test_sample_ellipsoid_inside_and_boundary(rng):
    B = crandn(rng, 3, 3)
    Q = B @ B.conj().T + np.eye(3)
    e = sample_ellipsoid(rng, Q, 5000, boundary_fraction=0.2)
    r = np.real(np.einsum("si,ij,sj->s", np.conj(e), Q, e))
    assert np.all(r <= 1 + 1e-9)
    assert np.sum(np.abs(r - 1) < 1e-9) >= 1000


# ---- error model and validation ----------------------------------------------

def test_error_model_rejects_non_pd():
    em = ErrorModel.spherical(1, 1, 2, 0.1)
    Q = em.Q.copy()
    Q[0, 0, 0] = np.diag([1.0, -1.0])
    with pytest.raises(InvalidInput):
        ErrorModel(Q, em.exact, em.eps, em.Q_edge, em.exact_edge, em.eps_edge)


def test_zero_radius_marks_exact():
    em = ErrorModel.spherical(2, 1, 2, 0.0, 0.1)
    assert em.exact[0, 0, 0] and em.exact[1, 1, 0]
    assert not em.exact[0, 1, 0]


def test_validation_zero_radius_never_violates():
    cfg = SystemConfig.uniform(2, 2, 4, 10.0)
    ch, _ = generate_instance(cfg, seed=0)
    err = ErrorModel.spherical(2, 2, 4, 0.0)
    sol = solve_robust(cfg, ch, err)
    rep = validate_robustness(sol, cfg, ch, err, 2000, np.random.default_rng(0))
    assert rep.violation_rate == 0.0
    assert rep.worst_case_ok


def test_validation_needs_rank_one():
    cfg = SystemConfig.uniform(1, 1, 2, 0.0)
    from robust_mcbf.model import BeamformerSolution
    sol = BeamformerSolution(np.zeros((1, 1, 2, 2)), np.zeros((1, 0, 2, 2)))
    ch = ChannelSet(np.ones((1, 1, 1, 2), complex), np.ones((1, 1, 1)))
    with pytest.raises(InvalidInput):
        validate_robustness(sol, cfg, ch, ErrorModel.spherical(1, 1, 2, 0.1), 10)


def test_instance_json_roundtrip():
    cfg = SystemConfig.uniform(3, 1, 2, 5.0, L=2)
    ch, _ = generate_instance(cfg, Geometry(layout="edge"), seed=4)
    err = ErrorModel.spherical(3, 1, 2, 0.1, 0.2, L=2, eps_edge=0.05)
    doc = json.loads(json.dumps(instance_to_json(cfg, ch, err)))
    cfg2, ch2, err2 = instance_from_json(doc)
    np.testing.assert_array_equal(ch2.h, ch.h)
    np.testing.assert_array_equal(ch2.g, ch.g)
    np.testing.assert_array_equal(ch2.scale_g, ch.scale_g)
    np.testing.assert_array_equal(err2.Q_edge, err.Q_edge)
    np.testing.assert_array_equal(err2.eps, err.eps)
    np.testing.assert_array_equal(cfg2.gamma_edge, cfg.gamma_edge)
