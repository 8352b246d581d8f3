"""Centralized SDR formulations, rank-one extraction and tightness checks.

All formulations work in normalized units: every SINR constraint of user
``(n, k)`` is divided by its noise power, and powers are expressed in a
common ``power_unit`` (watts). With ``a = sqrt(power_unit) / sigma_nk`` the
normalized channel is ``a * scale * h`` and the error matrix ``Q / (a*scale)^2``.
ICI budgets ``t`` are therefore in units of the victim's noise power; they
are converted back to watts on extraction.
"""

from dataclasses import dataclass

import numpy as np

from .conic import ConicBuilder, congruence_basis, solve
from .conic.solver import OPTIMAL
from .errors import InvalidInput
from .model import BeamformerSolution, complex_to_json


@dataclass
class LinkData:
    """Normalized per-link data (see module docstring)."""

    h: np.ndarray
    Q: np.ndarray
    exact: np.ndarray
    g: np.ndarray
    Qg: np.ndarray
    exact_g: np.ndarray
    power_unit: float


def auto_power_unit(cfg, channels):
    """Mean single-user matched-filter power; a conditioning scale only."""
    K = cfg.K
    if K:
        n = np.arange(cfg.Nc)
        gain = np.sum(np.abs(channels.h[n, n]) ** 2, axis=-1) * channels.scale[n, n] ** 2
        vals = cfg.gamma * cfg.sigma2 / np.maximum(gain, 1e-300)
    else:
        gain = np.sum(np.sum(np.abs(channels.g) ** 2, axis=-1) * channels.scale_g ** 2, axis=0)
        vals = cfg.gamma_edge * cfg.sigma2_edge / np.maximum(gain, 1e-300)
    pu = float(np.mean(vals))
    return pu if np.isfinite(pu) and pu > 0 else 1.0


def normalize_links(cfg, channels, errors, power_unit=1.0):
    """Fold large-scale gains, noise powers and the power unit into the CSI.

    ``channels`` / ``errors`` may be full or a single BS row; the receiver
    axis (axis 1) is always complete.
    """
    pu = float(power_unit)
    if pu <= 0:
        raise InvalidInput("power unit must be positive")
    a = np.sqrt(pu / cfg.sigma2)[None] * channels.scale  # (M, Nc, K)
    ag = np.sqrt(pu / cfg.sigma2_edge)[None] * channels.scale_g  # (M, L)
    dead = a <= 0
    dead_g = ag <= 0
    safe = np.where(dead, 1.0, a)
    safe_g = np.where(dead_g, 1.0, ag)
    return LinkData(
        a[..., None] * channels.h, errors.Q / (safe ** 2)[..., None, None], errors.exact | dead,
        ag[..., None] * channels.g, errors.Q_edge / (safe_g ** 2)[..., None, None],
        errors.exact_edge | dead_g, pu)


def _lift(h, Q):
    """``[Q^{-1/2}; h^H]``.

    The S-lemma LMI ``[I; h^H] U [I; h^H]^H + diag(lam Q, -lam - r)`` is
    stored after the congruence ``diag(Q^{-1/2}, 1)``, i.e. in whitened
    error coordinates, where the multiplier enters as ``lam diag(I, -1)``.
    This keeps weak links (large normalized ``Q``) well conditioned.
    """
    q, V = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    P = (V / np.sqrt(q)) @ V.conj().T
    return np.vstack([P, h.conj()[None, :]])


def quad_coeffs(h):
    """Real vector ``c`` with ``h^H X h = c . params(X)``."""
    return np.real(congruence_basis(h.conj()[None, :])[:, 0, 0])


def _quad_terms(var, h, coef, terms):
    for i, v in zip(var.indices, coef * quad_coeffs(h)):
        terms[i] = terms.get(i, 0.0) + v
    return terms


def _lam_block(N):
    M = np.eye(N + 1)
    M[N, N] = -1.0
    return M


def _corner(N, value=1.0):
    M = np.zeros((N + 1, N + 1))
    M[N, N] = value
    return M


def add_signal_lmi(b, pos, neg, h, Q, exact, gamma, budget, name, rhs=1.0):
    """Worst-case constraint ``(h+e)^H U (h+e) >= sum(budget) + rhs``.

    ``U = pos / gamma - sum(neg)``; ``budget`` lists ``(index, coef)`` of
    scalar variables added on the right-hand side. Returns the index of the
    S-lemma multiplier or None for an exact link.
    """
    N = h.shape[0]
    if exact:
        terms = _quad_terms(pos, h, 1.0 / gamma, {})
        for v in neg:
            _quad_terms(v, h, -1.0, terms)
        for i, c in budget:
            terms[i] = terms.get(i, 0.0) - c
        b.add_nonneg(terms, -rhs, name)
        return None
    lam = int(b.scalars("lam:" + name)[0])
    b.add_nonneg({lam: 1.0}, 0.0, "lam>=0:" + name)
    T = _lift(h, Q)
    cong = [(pos, 1.0 / gamma, T)] + [(v, -1.0, T) for v in neg]
    scalar = [(lam, _lam_block(N))] + [(i, -c * _corner(N)) for i, c in budget]
    b.add_lmi(-rhs * _corner(N), congruence=cong, scalar=scalar, name=name)
    return lam


def add_leak_lmi(b, vars_, h, Q, exact, t_idx, name, t_const=0.0, t_coef=1.0):
    """Worst-case constraint ``(h+e)^H (sum vars) (h+e) <= t``.

    ``t`` is ``t_coef`` times the scalar variable ``t_idx``, or the constant
    ``t_const`` when ``t_idx`` is None.
    """
    N = h.shape[0]
    var_t = {} if t_idx is None else {t_idx: float(t_coef)}
    const = 0.0 if t_idx is not None else float(t_const)
    if exact:
        terms = dict(var_t)
        for v in vars_:
            _quad_terms(v, h, -1.0, terms)
        b.add_nonneg(terms, const, name)
        return None
    lam = int(b.scalars("lam:" + name)[0])
    b.add_nonneg({lam: 1.0}, 0.0, "lam>=0:" + name)
    T = _lift(h, Q)
    cong = [(v, -1.0, T) for v in vars_]
    scalar = [(lam, _lam_block(N))] + [(i, c * _corner(N)) for i, c in var_t.items()]
    b.add_lmi(_corner(N, const), congruence=cong, scalar=scalar, name=name)
    return lam


def add_psd(b, var):
    b.add_lmi(np.zeros((var.n, var.n)), congruence=[(var, 1.0, np.eye(var.n))],
              name="psd:" + var.name)


def _resolve_unit(cfg, channels, power_unit):
    return auto_power_unit(cfg, channels) if power_unit == "auto" else float(power_unit)


def build_nonrobust(cfg, channels, power_unit="auto"):
    """SDR of the perfect-CSI weighted power minimization."""
    channels.check(cfg)
    pu = _resolve_unit(cfg, channels, power_unit)
    a = np.sqrt(pu / cfg.sigma2)[None] * channels.scale
    h = a[..., None] * channels.h
    Nc, K = cfg.Nc, cfg.K
    b = ConicBuilder("nonrobust")
    W = [[b.hermitian_var(f"W[{n},{k}]", cfg.Nt) for k in range(K)] for n in range(Nc)]
    for n in range(Nc):
        for k in range(K):
            add_psd(b, W[n][k])
            b.add_objective({i: cfg.alpha[n] for i in W[n][k].trace_coeffs()})
    for n in range(Nc):
        for k in range(K):
            terms = _quad_terms(W[n][k], h[n, n, k], 1.0 / cfg.gamma[n, k], {})
            for m in range(Nc):
                for i in range(K):
                    if (m, i) != (n, k):
                        _quad_terms(W[m][i], h[m, n, k], -1.0, terms)
            b.add_nonneg(terms, -1.0, f"sinr[{n},{k}]")
    b.meta.update(kind="nonrobust", W=W, F=[[] for _ in range(Nc)], power_unit=pu,
                  lam={}, t={}, lam_edge={}, eta={})
    return b.build()


def build_robust_sdr(cfg, channels, errors, power_unit="auto"):
    """Worst-case robust SDR with S-lemma LMIs (intra-cell users only)."""
    if cfg.L:
        raise InvalidInput("use build_full_coord for cell-edge users")
    return _build_robust(cfg, channels, errors, power_unit, full=False)


def build_full_coord(cfg, channels, errors, power_unit="auto"):
    """Robust SDR with cell-edge users served jointly by all BSs."""
    if cfg.L < 1:
        raise InvalidInput("full coordination needs at least one cell-edge user")
    return _build_robust(cfg, channels, errors, power_unit, full=True)


def _build_robust(cfg, channels, errors, power_unit, full):
    channels.check(cfg)
    pu = _resolve_unit(cfg, channels, power_unit)
    ld = normalize_links(cfg, channels, errors, pu)
    Nc, K, L, Nt = cfg.Nc, cfg.K, cfg.L, cfg.Nt
    b = ConicBuilder("full_coord" if full else "robust")
    W = [[b.hermitian_var(f"W[{n},{k}]", Nt) for k in range(K)] for n in range(Nc)]
    F = [[b.hermitian_var(f"F[{n},{l}]", Nt) for l in range(L)] for n in range(Nc)]
    for n in range(Nc):
        for v in W[n] + F[n]:
            add_psd(b, v)
            b.add_objective({i: cfg.alpha[n] for i in v.trace_coeffs()})
    t = {}
    for m in range(Nc):
        for n in range(Nc):
            if m == n:
                continue
            for k in range(K):
                t[m, n, k] = int(b.scalars(f"t[{m},{n},{k}]")[0])
                b.add_nonneg({t[m, n, k]: 1.0}, 0.0, f"t>=0[{m},{n},{k}]")
    lam = {}
    for n in range(Nc):
        for k in range(K):
            neg = [W[n][i] for i in range(K) if i != k] + F[n]
            budget = [(t[m, n, k], 1.0) for m in range(Nc) if m != n]
            lam[n, n, k] = add_signal_lmi(b, W[n][k], neg, ld.h[n, n, k], ld.Q[n, n, k],
                                          ld.exact[n, n, k], cfg.gamma[n, k], budget,
                                          f"phi[{n},{k}]")
            for m in range(Nc):
                if m != n:
                    lam[m, n, k] = add_leak_lmi(b, W[m] + F[m], ld.h[m, n, k], ld.Q[m, n, k],
                                                ld.exact[m, n, k], t[m, n, k], f"psi[{m},{n},{k}]")
    eta, lam_e = {}, {}
    for l in range(L):
        for m in range(Nc):
            eta[m, l] = int(b.scalars(f"eta[{m},{l}]")[0])
            neg = W[m] + [F[m][j] for j in range(L) if j != l]
            lam_e[m, l] = add_signal_lmi(b, F[m][l], neg, ld.g[m, l], ld.Qg[m, l], ld.exact_g[m, l],
                                         cfg.gamma_edge[l], [(eta[m, l], 1.0)], f"edge[{m},{l}]",
                                         rhs=0.0)
        b.add_nonneg({eta[m, l]: 1.0 for m in range(Nc)}, -1.0, f"eta_sum[{l}]")
    b.meta.update(kind=b.name, W=W, F=F, power_unit=pu, lam=lam, t=t, lam_edge=lam_e, eta=eta)
    return b.build()


# --------------------------------------------------------------------------
# Extraction
# --------------------------------------------------------------------------

ZERO_TOL = 1e-9  # matrices below this fraction of the largest trace count as zero


@dataclass
class RankOne:
    """Outcome of a rank-one test: ``w`` is None when the test fails."""

    w: np.ndarray
    ratio: float
    ok: bool
    zero: bool = False


def extract_rank_one(W, rank_tol=1e-6, zero_tol=0.0):
    """Principal eigenvector of ``W`` if ``lambda_2 / lambda_1 <= rank_tol``.

    The vector is scaled by ``sqrt(lambda_1)`` and its largest-magnitude
    entry is made real positive. A matrix whose largest eigenvalue is at
    most ``zero_tol`` is reported as zero (``zero=True``, zero vector).
    """
    W = np.asarray(W, dtype=complex)
    W = 0.5 * (W + W.conj().T)
    ev, V = np.linalg.eigh(W)
    top = ev[-1]
    if top <= zero_tol or np.trace(W).real <= 0:
        return RankOne(np.zeros(W.shape[0], complex), 0.0, True, True)
    if ev[0] < -max(rank_tol, 1e-9) * top - zero_tol:
        raise InvalidInput(f"matrix is not PSD (min eigenvalue {ev[0]:.3g})")
    ratio = float(max(ev[-2], 0.0) / top) if W.shape[0] > 1 else 0.0
    if ratio > rank_tol:
        return RankOne(None, ratio, False)
    w = np.sqrt(top) * V[:, -1]
    j = np.argmax(np.abs(w))
    w = w * np.exp(-1j * np.angle(w[j]))
    return RankOne(w, ratio, True)


def extract_solution(cfg, problem, sol, rank_tol=1e-6):
    """Map a conic solution back to a :class:`BeamformerSolution` in watts."""
    meta = problem.meta
    pu = meta["power_unit"]
    Nc, K, L, Nt = cfg.Nc, cfg.K, cfg.L, cfg.Nt
    W = np.zeros((Nc, K, Nt, Nt), complex)
    F = np.zeros((Nc, L, Nt, Nt), complex)
    for n in range(Nc):
        for k, v in enumerate(meta["W"][n]):
            W[n, k] = pu * v.value(sol.x)
        for l, v in enumerate(meta["F"][n]):
            F[n, l] = pu * v.value(sol.x)
    t = np.full((Nc, Nc, K), np.nan)
    for (m, n, k), i in meta["t"].items():
        t[m, n, k] = sol.x[i] * cfg.sigma2[n, k]
    lam = np.full((Nc, Nc, K), np.nan)
    for key, i in meta["lam"].items():
        if i is not None:
            lam[key] = sol.x[i]
    lam_e = np.full((Nc, L), np.nan)
    eta = np.full((Nc, L), np.nan)
    for key, i in meta["lam_edge"].items():
        if i is not None:
            lam_e[key] = sol.x[i]
    for (m, l), i in meta["eta"].items():
        eta[m, l] = sol.x[i] * cfg.sigma2_edge[l]
    p = np.real(np.trace(W, axis1=-2, axis2=-1)).sum(axis=1) + \
        np.real(np.trace(F, axis1=-2, axis2=-1)).sum(axis=1)
    out = BeamformerSolution(W, F, lam=lam, lam_edge=lam_e, t=t, eta=eta,
                             objective=float(np.dot(cfg.alpha, p)), p=p, status=sol.status,
                             solver_iterations=sol.iterations)
    if sol.status != OPTIMAL:
        return out
    ratios = np.zeros((Nc, K))
    ratios_e = np.zeros((Nc, L))
    w = np.zeros((Nc, K, Nt), complex)
    f = np.zeros((Nc, L, Nt), complex)
    ok = True
    scale = max(np.real(np.trace(W, axis1=-2, axis2=-1)).max(initial=0.0),
                np.real(np.trace(F, axis1=-2, axis2=-1)).max(initial=0.0))
    for (arr, vecs, rat) in ((W, w, ratios), (F, f, ratios_e)):
        for idx in np.ndindex(*arr.shape[:2]):
            r = extract_rank_one(arr[idx], rank_tol, ZERO_TOL * scale)
            rat[idx] = r.ratio
            ok &= r.ok
            if r.ok:
                vecs[idx] = r.w
    out.eig_ratio, out.eig_ratio_edge = ratios, ratios_e
    if ok:
        out.w, out.f = w, f
    return out


def solve_problem(cfg, problem, rank_tol=1e-6, **solver_kw):
    return extract_solution(cfg, problem, solve(problem, **solver_kw), rank_tol)


def solve_nonrobust(cfg, channels, rank_tol=1e-6, power_unit="auto", **solver_kw):
    return solve_problem(cfg, build_nonrobust(cfg, channels, power_unit), rank_tol, **solver_kw)


def solve_robust(cfg, channels, errors, rank_tol=1e-6, power_unit="auto", **solver_kw):
    return solve_problem(cfg, build_robust_sdr(cfg, channels, errors, power_unit), rank_tol,
                         **solver_kw)


def solve_full_coord(cfg, channels, errors, rank_tol=1e-6, power_unit="auto", **solver_kw):
    return solve_problem(cfg, build_full_coord(cfg, channels, errors, power_unit), rank_tol,
                         **solver_kw)


def feasible(cfg, solution):
    """Optimal solver status and every BS within its power cap."""
    return solution.status == OPTIMAL and bool(np.max(solution.p) <= cfg.p_max)


# --------------------------------------------------------------------------
# Tightness conditions
# --------------------------------------------------------------------------

@dataclass
class Prop1Report:
    C1: bool
    C2: bool
    C3: bool
    details: dict

    @property
    def any(self):
        return self.C1 or self.C2 or self.C3


def check_prop1(cfg, errors, solution, channels=None):
    """Evaluate the sufficient conditions for a rank-one SDR optimum.

    C1: one user per cell. C2: every intra-cell link exact. C3: spherical
    errors with ``eps_nnk < sqrt(sigma2_nk alpha_n gamma_nk / f*)`` (and the
    analogous edge-user bound when ``L > 0``). When ``channels`` is given the
    radii are converted to the large-scale-scaled channel, in which the
    noise and power units of the bound are expressed. The existential clause
    on inter-cell radii is witnessed by the solved instance itself.
    """
    if solution.status != OPTIMAL:
        raise InvalidInput("tightness check needs an optimal solution")
    f = solution.objective
    if f <= 0:
        raise InvalidInput("optimal objective must be positive")
    n = np.arange(cfg.Nc)
    C1 = cfg.K == 1
    C2 = bool(np.all(errors.exact[n, n])) if cfg.K else True
    details = {"inter_radii": "feasibility-witnessed"}
    C3 = errors.spherical_model
    if C3:
        eps = np.where(errors.exact[n, n], 0.0, errors.eps[n, n])
        eps_e = np.where(errors.exact_edge, 0.0, errors.eps_edge)
        if channels is not None:
            eps = eps * channels.scale[n, n]
            eps_e = eps_e * channels.scale_g
        bound = np.sqrt(cfg.sigma2 * cfg.alpha[:, None] * cfg.gamma / f)
        bound_e = np.sqrt(cfg.alpha[:, None] * cfg.gamma_edge[None] * cfg.sigma2_edge[None] / f)
        details.update(eps_intra=eps, bound=bound, eps_edge=eps_e, bound_edge=bound_e)
        C3 = bool(np.all(eps < bound) and np.all(eps_e < bound_e))
    return Prop1Report(bool(C1), C2, C3, details)


def solution_to_json(solution):
    """JSON-ready dict in the instance interchange conventions."""
    def arr(x):
        return None if x is None else np.where(np.isnan(x), None, x).tolist()

    return {
        "W": complex_to_json(solution.W), "F": complex_to_json(solution.F),
        "w": None if solution.w is None else complex_to_json(solution.w),
        "f": None if solution.f is None else complex_to_json(solution.f),
        "lam": arr(solution.lam), "lam_edge": arr(solution.lam_edge),
        "t": arr(solution.t), "eta": arr(solution.eta),
        "p": arr(solution.p),
        "meta": {
            "objective": solution.objective, "status": solution.status,
            "eig_ratio": arr(solution.eig_ratio), "eig_ratio_edge": arr(solution.eig_ratio_edge),
            "iterations": solution.solver_iterations,
        },
    }


# --------------------------------------------------------------------------
# Independent soundness check
# --------------------------------------------------------------------------

@dataclass
class Soundness:
    """Noise-normalized slacks of the decomposed worst-case constraints.

    ``signal[n, k] = (min_e (h+e)^H U (h+e) - sum_m t_mnk - sigma2) / sigma2``,
    ``leak[m, n, k] = (t_mnk - max_e (h+e)^H S_m (h+e)) / sigma2_nk`` (NaN for
    ``m == n``) and ``edge[m, l] = (min_v (...) - eta_ml) / sigma2_l`` plus
    the coupling slack ``(sum_m eta_ml - sigma2_l) / sigma2_l``.
    """

    signal: np.ndarray
    leak: np.ndarray
    edge: np.ndarray
    coupling: np.ndarray

    @property
    def min_slack(self):
        vals = [a[np.isfinite(a)] for a in (self.signal, self.leak, self.edge, self.coupling)]
        vals = np.concatenate([v.ravel() for v in vals])
        return float(vals.min()) if vals.size else np.inf


def soundness_check(cfg, channels, errors, solution):
    """Re-verify a robust SDR solution with the exact worst-case oracle.

    Works on the matrices ``W``/``F`` and slacks ``t``/``eta`` directly, so
    it tests the S-lemma reformulation rather than the rank-one extraction.
    """
    from .model import _wc

    Nc, K, L = cfg.Nc, cfg.K, cfg.L
    Qs, Qe = errors.scaled(channels.scale, channels.scale_g)
    hh, gg = channels.effective()
    W, F, t = solution.W, solution.F, solution.t
    sig = np.zeros((Nc, K))
    leak = np.full((Nc, Nc, K), np.nan)
    for n in range(Nc):
        Fn = F[n].sum(axis=0)
        for k in range(K):
            U = W[n, k] / cfg.gamma[n, k] - (W[n].sum(axis=0) - W[n, k]) - Fn
            ts = sum(t[m, n, k] for m in range(Nc) if m != n)
            v = _wc(hh[n, n, k], U, Qs[n, n, k], errors.exact[n, n, k], "min")
            sig[n, k] = (v - ts - cfg.sigma2[n, k]) / cfg.sigma2[n, k]
            for m in range(Nc):
                if m != n:
                    S = W[m].sum(axis=0) + F[m].sum(axis=0)
                    v = _wc(hh[m, n, k], S, Qs[m, n, k], errors.exact[m, n, k], "max")
                    leak[m, n, k] = (t[m, n, k] - v) / cfg.sigma2[n, k]
    edge = np.zeros((Nc, L))
    coupling = np.zeros(L)
    for l in range(L):
        for m in range(Nc):
            U = F[m, l] / cfg.gamma_edge[l] - W[m].sum(axis=0) - (F[m].sum(axis=0) - F[m, l])
            v = _wc(gg[m, l], U, Qe[m, l], errors.exact_edge[m, l], "min")
            edge[m, l] = (v - solution.eta[m, l]) / cfg.sigma2_edge[l]
        coupling[l] = (solution.eta[:, l].sum() - cfg.sigma2_edge[l]) / cfg.sigma2_edge[l]
    return Soundness(sig, leak, edge, coupling)
