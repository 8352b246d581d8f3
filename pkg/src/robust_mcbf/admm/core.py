"""Distributed robust MCBF by ADMM over the ICI consensus variables.

Each BS ``n`` owns local copies ``t_n`` (incoming totals and outgoing
budgets) and its power ``p_n``; the global variables are the ICI vector
``t`` and the power targets ``rho``. Per round every BS solves its local
SDP, broadcasts ``t_n`` over the backhaul, and then every BS computes the
same global and dual updates from the gathered vectors.

Internally powers are in ``power_unit`` watts (see :mod:`robust_mcbf.sdr`)
and ``t`` in ``ici_unit`` times the victim user's noise power. Both units
only rescale the consensus variables; they balance the penalty between the
power and the ICI blocks.
"""

import csv
import dataclasses
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..backhaul import IciMessage, make_transport, round_bytes
from ..conic import ConicBuilder, solve
from ..conic.solver import INFEASIBLE, OPTIMAL
from ..errors import InvalidInput, SubproblemInfeasible
from ..model import BeamformerSolution
from ..sdr import add_leak_lmi, add_psd, add_signal_lmi, auto_power_unit, normalize_links
from .consensus import ConsensusMap

C0 = 1e-6


def penalty_schedule(q, c_q):
    """``c(q+1) = min(1, (q+1) c(q))``."""
    if q < 0:
        raise InvalidInput("iteration index must be nonnegative")
    return min(1.0, (q + 1) * c_q)


def backhaul_cost(Nc, K):
    """Real scalars exchanged per iteration: this scheme vs. per-link
    dual-decomposition exchange."""
    if Nc < 2:
        raise InvalidInput("backhaul cost needs at least two cells")
    ours = Nc * Nc * K
    base = 2 * Nc * (Nc - 1) * K
    return {"ours": ours, "baseline": base, "ratio": ours / base}


def auto_ici_unit(cfg, channels, power_unit):
    """Mean cross-cell interference, in noise powers, of an isotropic beam
    carrying ``power_unit`` watts: ``pu |h_mnk|^2 / (Nt sigma2_nk)``."""
    off = ~np.eye(cfg.Nc, dtype=bool)
    gain = np.sum(np.abs(channels.h) ** 2, axis=-1) * channels.scale ** 2  # (Nc, Nc, K)
    vals = power_unit * gain / (cfg.Nt * cfg.sigma2[None, :, :])
    tau = float(np.mean(vals[off]))
    return tau if np.isfinite(tau) and tau > 0 else 1.0


def normalized_accuracy(P_q, P_star):
    if P_star <= 0:
        raise InvalidInput("reference power must be positive")
    return abs(P_q - P_star) / P_star


@dataclass(frozen=True)
class AdmmState:
    """Iterate of the algorithm; replaced, never mutated, across rounds.

    ``t_loc[n]`` / ``nu[n]`` have length ``Nc K`` in local index order.
    """

    q: int
    c: float
    t: np.ndarray
    rho: np.ndarray
    t_loc: np.ndarray
    p: np.ndarray
    nu: np.ndarray
    mu: np.ndarray

    @classmethod
    def zeros(cls, Nc, K, c0=C0):
        d = Nc * (Nc - 1) * K
        return cls(0, c0, np.zeros(d), np.zeros(Nc), np.zeros((Nc, Nc * K)), np.zeros(Nc),
                   np.zeros((Nc, Nc * K)), np.zeros(Nc))


@dataclass
class LocalResult:
    status: str
    t_n: np.ndarray
    p_n: float
    W: np.ndarray
    lam: dict
    objective: float
    iterations: int


def _local_builder(cfg, name):
    b = ConicBuilder(name)
    W = [b.hermitian_var(f"W[{k}]", cfg.Nt) for k in range(cfg.K)]
    for v in W:
        add_psd(b, v)
    return b, W


def local_subproblem(n, state, cfg, channels_n, errors_n, cmap, power_unit=1.0, ici_unit=1.0,
                     **solver_kw):
    """Solve the augmented-Lagrangian step of BS ``n``.

    minimize ``alpha_n p - nu_n' t_n - mu_n p + c/2 ||E_n t - t_n||^2
    + c/2 (rho_n - p)^2`` over the robust feasible set of BS ``n`` with
    ``p = sum_k tr W_nk``. Only the channels ``channels_n`` from BS ``n`` to
    every user are used. The quadratic is an epigraph ``s >= ||v||^2``
    written as the PSD block ``[[s, v'], [v, I]]``.

    Raises
    ------
    SubproblemInfeasible
        If the robust constraints of BS ``n`` cannot be met for any ICI
        budget.
    """
    ix = cmap.index
    Nc, K = cfg.Nc, cfg.K
    if channels_n.h.shape[0] != 1:
        raise InvalidInput("local_subproblem takes the channels of one BS")
    ld = normalize_links(cfg, channels_n, errors_n, power_unit)
    b, W = _local_builder(cfg, f"local[{n}]")
    tl = b.scalars("t_n", ix.local_dim)
    for i in tl:
        b.add_nonneg({int(i): 1.0}, 0.0)
    lam = {}
    for k in range(K):
        neg = [W[i] for i in range(K) if i != k]
        lam[n, k] = add_signal_lmi(b, W[k], neg, ld.h[0, n, k], ld.Q[0, n, k], ld.exact[0, n, k],
                                   cfg.gamma[n, k], [(int(tl[k]), ici_unit)], f"phi[{k}]")
    for m in ix.others(n):
        for k in range(K):
            lam[m, k] = add_leak_lmi(b, W, ld.h[0, m, k], ld.Q[0, m, k], ld.exact[0, m, k],
                                     int(tl[ix.out_pos(n, m, k)]), f"psi[{m},{k}]",
                                     t_coef=ici_unit)
    ptr = np.concatenate([v.trace_coeffs() for v in W])
    alpha = cfg.alpha[n]
    obj = {int(i): alpha - state.mu[n] for i in ptr}
    for j, i in enumerate(tl):
        obj[int(i)] = obj.get(int(i), 0.0) - state.nu[n][j]
    c = state.c
    if c < 0:
        raise InvalidInput("penalty must be nonnegative")
    if c > 0:
        s = int(b.scalars("s")[0])
        obj[s] = c / 2
        target = cmap.apply_E(n, state.t)
        d = ix.local_dim + 1
        const = np.zeros((d + 1, d + 1))
        const[1:, 1:] = np.eye(d)
        const[0, 1:d] = const[1:d, 0] = target
        const[0, d] = const[d, 0] = state.rho[n]
        terms = [(s, _unit(d + 1, 0, 0))]
        for j, i in enumerate(tl):
            terms.append((int(i), -_unit(d + 1, 0, j + 1)))
        for i in ptr:
            terms.append((int(i), -_unit(d + 1, 0, d)))
        b.add_lmi(const, scalar=_merge(terms), name="penalty", real=True)
    b.add_objective(obj)
    prob = b.build()
    sol = solve(prob, **solver_kw)
    if sol.status == INFEASIBLE:
        raise SubproblemInfeasible(n, sol.status)
    Wv = np.array([v.value(sol.x) for v in W]) if sol.x is not None else None
    t_n = np.asarray(sol.x)[tl]
    p_n = float(np.sum(np.asarray(sol.x)[ptr]))
    lam_v = {key: (None if i is None else float(sol.x[i])) for key, i in lam.items()}
    return LocalResult(sol.status, t_n, p_n, Wv, lam_v, sol.pcost, sol.iterations)


def _unit(size, i, j):
    M = np.zeros((size, size))
    M[i, j] = M[j, i] = 1.0
    return M


def _merge(terms):
    out = {}
    for i, F in terms:
        out[i] = out.get(i, 0) + F
    return list(out.items())


def restore_feasibility(n, t, cfg, channels_n, errors_n, cmap, power_unit=1.0, ici_unit=1.0,
                        **solver_kw):
    """Per-BS minimum power with the ICI budgets frozen at the global ``t``.

    Returns a :class:`LocalResult`; ``status`` other than ``optimal`` means
    the budgets admit no beamformers at BS ``n``.
    """
    ix = cmap.index
    ld = normalize_links(cfg, channels_n, errors_n, power_unit)
    b, W = _local_builder(cfg, f"restore[{n}]")
    tarr = ix.to_array(t) * ici_unit
    lam = {}
    K = cfg.K
    for k in range(K):
        neg = [W[i] for i in range(K) if i != k]
        incoming = float(np.nansum(tarr[:, n, k]))
        lam[n, k] = add_signal_lmi(b, W[k], neg, ld.h[0, n, k], ld.Q[0, n, k], ld.exact[0, n, k],
                                   cfg.gamma[n, k], [], f"phi[{k}]", rhs=1.0 + incoming)
    for m in ix.others(n):
        for k in range(K):
            lam[m, k] = add_leak_lmi(b, W, ld.h[0, m, k], ld.Q[0, m, k], ld.exact[0, m, k], None,
                                     f"psi[{m},{k}]", t_const=tarr[n, m, k])
    ptr = np.concatenate([v.trace_coeffs() for v in W])
    b.add_objective({int(i): cfg.alpha[n] for i in ptr})
    sol = solve(b.build(), **solver_kw)
    if sol.status != OPTIMAL:
        return LocalResult(sol.status, None, np.nan, None, {}, np.nan, sol.iterations)
    Wv = np.array([v.value(sol.x) for v in W])
    lam_v = {key: (None if i is None else float(sol.x[i])) for key, i in lam.items()}
    return LocalResult(OPTIMAL, cmap.apply_E(n, t), float(np.sum(sol.x[ptr])), Wv, lam_v,
                       sol.pcost, sol.iterations)


def global_update(state, cmap, t_loc, p):
    """Consensus step from the gathered local variables.

    ``t = argmin_{t >= 0} sum_n ||E_n t - (t_n - nu_n / c)||^2`` (exact
    block nonnegative least squares) and ``rho_n = max(0, p_n - mu_n / c)``.
    """
    c = state.c
    if c <= 0:
        raise InvalidInput("penalty must be positive")
    t = cmap.nnls(np.asarray(t_loc) - state.nu / c)
    rho = np.maximum(0.0, np.asarray(p) - state.mu / c)
    return t, rho


def dual_update(state, cmap, t, rho, t_loc, p):
    """``nu_n += c (E_n t - t_n)``, ``mu_n += c (rho_n - p_n)``."""
    c = state.c
    nu = state.nu + c * (cmap.apply_stack_E(t) - np.asarray(t_loc))
    mu = state.mu + c * (np.asarray(rho) - np.asarray(p))
    return nu, mu


def primal_residual(cmap, t, rho, t_loc, p):
    r2 = np.sum((cmap.apply_stack_E(t) - t_loc) ** 2) + np.sum((rho - p) ** 2)
    return float(np.sqrt(r2))


@dataclass
class AdmmOptions:
    max_iters: int = 300
    residual_tol: float = 1e-4
    power_tol: float = 1e-4
    transport: object = None  # 'loopback' | 'tcp' | None (environment) | transport object
    power_unit: object = "auto"  # watts, or 'auto' (mean single-user matched-filter power)
    ici_unit: object = "auto"  # noise powers, or 'auto' (see auto_ici_unit)
    p_star: float = None
    restore: bool = True
    restore_retry: int = 10
    timeout: float = 60.0
    workers: int = None
    solver: dict = field(default_factory=dict)


@dataclass
class AdmmTrace:
    """Per-iteration record of a run (powers in watts)."""

    q: list = field(default_factory=list)
    c: list = field(default_factory=list)
    P: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)
    p: list = field(default_factory=list)
    bytes: list = field(default_factory=list)
    scalars: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    states: list = field(default_factory=list)
    final: AdmmState = None
    solution: BeamformerSolution = None
    restore_status: list = None
    stopped: str = ""
    p_star: float = None

    def to_csv(self, path):
        Nc = len(self.p[0]) if self.p else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "c", "P_W", "accuracy", "primal_residual", "dual_residual"]
                       + [f"p{n}_W" for n in range(Nc)] + ["bytes", "scalars"])
            for i in range(len(self.q)):
                acc = self.accuracy[i] if self.accuracy else ""
                w.writerow([self.q[i], repr(self.c[i]), repr(self.P[i]),
                            acc if acc == "" else repr(acc), repr(self.residual[i]),
                            repr(self.dual_residual[i])]
                           + [repr(v) for v in self.p[i]] + [self.bytes[i], self.scalars[i]])


class Agent:
    """BS ``n``: its own CSI row, a replica of the shared state, an endpoint."""

    def __init__(self, n, cfg, channels, errors, cmap, endpoint, opts):
        self.n = n
        self.cfg = cfg
        self.channels_n = channels.row(n)
        self.errors_n = errors.row(n)
        self.cmap = cmap
        self.endpoint = endpoint
        self.opts = opts
        self.state = AdmmState.zeros(cfg.Nc, cfg.K)
        self.last = None

    def local_step(self):
        res = local_subproblem(self.n, self.state, self.cfg, self.channels_n, self.errors_n,
                               self.cmap, self.opts.power_unit, self.opts.ici_unit,
                               **self.opts.solver)
        if res.status != OPTIMAL:
            raise SubproblemInfeasible(self.n, res.status,
                                       f"BS {self.n}: local subproblem {res.status} at q={self.state.q}")
        self.last = res
        self.endpoint.broadcast(IciMessage(self.state.q, self.n, res.t_n))
        return res

    def consensus_step(self, p_all):
        """Gather all ``t_m``, then the global, dual and penalty updates."""
        st = self.state
        msgs = self.endpoint.gather(st.q, range(self.cfg.Nc), self.opts.timeout)
        t_loc = np.stack([m.payload for m in msgs])
        # every agent only needs its own rho_n; p_all is used solely for the
        # replicated bookkeeping of mu and the telemetry
        t, rho = global_update(st, self.cmap, t_loc, p_all)
        nu, mu = dual_update(st, self.cmap, t, rho, t_loc, p_all)
        self.state = AdmmState(st.q + 1, penalty_schedule(st.q, st.c), t, rho, t_loc,
                               np.asarray(p_all, float), nu, mu)
        return self.state


def run(cfg, channels, errors, options=None):
    """Run the distributed algorithm from all-zero initialization.

    Returns an :class:`AdmmTrace`. With ``options.restore`` the final
    global ``t`` is frozen and every BS solves its restoration problem; if
    any BS fails and iterations remain, the run continues.
    """
    opts = options or AdmmOptions()
    if cfg.Nc < 2:
        raise InvalidInput("the distributed algorithm needs at least two cells; "
                           "use the centralized solver for one cell")
    if cfg.L:
        raise InvalidInput("the distributed algorithm covers intra-cell users only")
    channels.check(cfg)
    cmap = ConsensusMap(cfg.Nc, cfg.K)
    if opts.power_unit == "auto":
        opts = dataclasses.replace(opts, power_unit=auto_power_unit(cfg, channels))
    if opts.ici_unit == "auto":
        opts = dataclasses.replace(opts, ici_unit=auto_ici_unit(cfg, channels, opts.power_unit))
    own = not hasattr(opts.transport, "endpoint")
    transport = make_transport(opts.transport, cfg.Nc) if own else opts.transport
    agents = [Agent(n, cfg, channels, errors, cmap, transport.endpoint(n), opts)
              for n in range(cfg.Nc)]
    trace = AdmmTrace(p_star=opts.p_star)
    pu = opts.power_unit
    dim = cmap.index.local_dim * cfg.Nc + cfg.Nc
    pool = ThreadPoolExecutor(max_workers=opts.workers or cfg.Nc)
    retry_until = -1
    try:
        P_prev = None
        for q in range(opts.max_iters):
            state = agents[0].state
            results = list(pool.map(lambda a: a.local_step(), agents))
            p_all = np.array([r.p_n for r in results])
            new_states = list(pool.map(lambda a: a.consensus_step(p_all), agents))
            ns = new_states[0]
            for other in new_states[1:]:
                if not (np.array_equal(other.t, ns.t) and np.array_equal(other.nu, ns.nu)):
                    raise RuntimeError("agents diverged on the replicated state")
            r = primal_residual(cmap, ns.t, ns.rho, ns.t_loc, ns.p)
            dual_r = float(state.c * np.linalg.norm(
                np.concatenate([cmap.apply_stack_E(ns.t - state.t).ravel(), ns.rho - state.rho])))
            P = float(p_all.sum() * pu)
            trace.q.append(q)
            trace.c.append(state.c)
            trace.P.append(P)
            trace.residual.append(r)
            trace.dual_residual.append(dual_r)
            trace.p.append(p_all * pu)
            trace.bytes.append(transport.stats.bytes.get(q, 0))
            trace.scalars.append(transport.stats.scalars.get(q, 0))
            if opts.p_star:
                trace.accuracy.append(normalized_accuracy(P, opts.p_star))
            trace.states.append(ns)
            converged = (P_prev is not None and r / np.sqrt(dim) <= opts.residual_tol
                         and abs(P - P_prev) / max(P, 1e-300) <= opts.power_tol)
            P_prev = P
            last = q == opts.max_iters - 1
            if (converged and q >= retry_until) or last:
                if not opts.restore:
                    trace.stopped = "converged" if converged else "budget"
                    break
                sol, statuses = _restore_all(cfg, channels, errors, cmap, ns.t, opts)
                trace.restore_status = statuses
                trace.solution = sol
                if sol is not None:
                    trace.stopped = "converged" if converged else "budget"
                    break
                retry_until = q + opts.restore_retry
                if last:
                    trace.stopped = "budget-restore-failed"
        trace.final = agents[0].state
    finally:
        pool.shutdown()
        if own:
            transport.close()
    return trace


def _restore_all(cfg, channels, errors, cmap, t, opts):
    res = [restore_feasibility(n, t, cfg, channels.row(n), errors.row(n), cmap,
                               opts.power_unit, opts.ici_unit, **opts.solver)
           for n in range(cfg.Nc)]
    statuses = [r.status for r in res]
    if any(s != OPTIMAL for s in statuses):
        return None, statuses
    pu = opts.power_unit
    W = np.array([r.W for r in res]) * pu
    tarr = cmap.index.to_array(t) * opts.ici_unit * cfg.sigma2[None, :, :]
    lam = np.full((cfg.Nc, cfg.Nc, cfg.K), np.nan)
    for n, r in enumerate(res):
        for (m, k), v in r.lam.items():
            if v is not None:
                lam[n, m, k] = v  # transmitter n, receiver (m, k)
    p = np.real(np.trace(W, axis1=-2, axis2=-1)).sum(axis=1)
    sol = BeamformerSolution(W, np.zeros((cfg.Nc, 0, cfg.Nt, cfg.Nt), complex), lam=lam, t=tarr,
                             objective=float(cfg.alpha @ p), p=p, status=OPTIMAL)
    from ..sdr import ZERO_TOL, extract_rank_one
    scale = np.real(np.trace(W, axis1=-2, axis2=-1)).max()
    w = np.zeros((cfg.Nc, cfg.K, cfg.Nt), complex)
    ratios = np.zeros((cfg.Nc, cfg.K))
    ok = True
    for idx in np.ndindex(cfg.Nc, cfg.K):
        ro = extract_rank_one(W[idx], 1e-6, ZERO_TOL * scale)
        ratios[idx] = ro.ratio
        ok &= ro.ok
        if ro.ok:
            w[idx] = ro.w
    sol.eig_ratio = ratios
    sol.eig_ratio_edge = np.zeros((cfg.Nc, 0))
    sol.f = np.zeros((cfg.Nc, 0, cfg.Nt), complex)
    if ok:
        sol.w = w
    return sol, statuses
