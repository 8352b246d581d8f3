"""Primal-dual interior-point method for :class:`ConicProblem`.

Homogeneous self-dual embedding with Nesterov-Todd scaling and a
Mehrotra predictor-corrector, so infeasible and unbounded problems are
detected with Farkas-type certificates instead of diverging.

The Newton systems are reduced to the Schur complement
``G' (W'W)^{-1} G`` over the free variables, which is cheap for the LMI
problems in this package (a few hundred variables, blocks of size <= 40).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..errors import InvalidInput

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILURE = "numerical-failure"

STEP = 0.99
STALL = 20  # iterations without improvement of the best merit


@dataclass
class ConicSolution:
    """Solver output.

    ``x`` are the free variables, ``y`` the equality multipliers, ``s_lp``
    / ``z_lp`` the orthant slack and multiplier and ``s_blocks`` /
    ``z_blocks`` the PSD slacks and multipliers. For ``infeasible`` the
    multipliers hold the Farkas ray (``A'y + G'z = 0``, ``b'y + h'z = -1``);
    for ``unbounded`` ``x`` holds an improving ray (``c'x = -1``).
    """

    status: str
    x: np.ndarray
    y: np.ndarray
    s_lp: np.ndarray
    z_lp: np.ndarray
    s_blocks: list
    z_blocks: list
    pcost: float = np.nan
    dcost: float = np.nan
    gap: float = np.nan
    relgap: float = np.nan
    pres: float = np.nan
    dres: float = np.nan
    iterations: int = 0
    certificate_residual: float = np.nan
    history: list = field(default_factory=list)

    @property
    def optimal(self):
        return self.status == OPTIMAL


def _presolve(A, b, tol=1e-10):
    """Drop dependent equality rows.

    Returns ``(A_kept, b_kept, kept_rows, conflict_ray or None)``.
    """
    p = A.shape[0]
    if p == 0:
        return A, b, np.arange(0), None
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * max(1.0, d[0] if d.size else 0.0)))
    if rank == p:
        return A, b, np.arange(p), None
    keep = np.sort(piv[:rank])
    Ak, bk = A[keep], b[keep]
    # dependent rows must agree with the kept ones
    coef, *_ = np.linalg.lstsq(Ak.T, A.T, rcond=None)
    mismatch = b - coef.T @ bk
    if np.max(np.abs(mismatch)) > 1e3 * tol * max(1.0, np.max(np.abs(b))):
        U, sv, _ = np.linalg.svd(A)
        null = U[:, sv.size:] if sv.size < p else U[:, sv < tol * max(1.0, sv[0])]
        if null.shape[1] == 0:
            null = U[:, rank:]
        y = null @ (null.T @ b)
        y = -y / (b @ y)
        return Ak, bk, keep, y
    return Ak, bk, keep, None


class _Scaling:
    """NT scaling ``W`` and scaled point ``lam`` for all cones."""

    def __init__(self, w, lam_lp, R, lam_blocks):
        self.w = w
        self.lam_lp = lam_lp
        self.R = R
        self.lam = lam_blocks
        self.Rinv = [np.linalg.inv(r) for r in R]

    @staticmethod
    def nt_block(S, Z):
        Ls = np.linalg.cholesky(S)
        Lz = np.linalg.cholesky(Z)
        U, sv, Vt = np.linalg.svd(Lz.T @ Ls)
        R = Ls @ Vt.T / np.sqrt(sv)
        return R, sv

    @classmethod
    def from_points(cls, s_lp, z_lp, s_blocks, z_blocks):
        w = np.sqrt(s_lp / z_lp)
        lam_lp = np.sqrt(s_lp * z_lp)
        R, lam = [], []
        for S, Z in zip(s_blocks, z_blocks):
            r, l = cls.nt_block(S, Z)
            R.append(r)
            lam.append(l)
        return cls(w, lam_lp, R, lam)

    def updated(self, ds_lp, dz_lp, ds_blocks, dz_blocks, step):
        """Rescale after a step given in scaled coordinates."""
        sl = self.lam_lp + step * ds_lp
        zl = self.lam_lp + step * dz_lp
        w = self.w * np.sqrt(sl / zl)
        lam_lp = np.sqrt(sl * zl)
        R, lam = [], []
        for Rk, lk, dS, dZ in zip(self.R, self.lam, ds_blocks, dz_blocks):
            S = np.diag(lk) + step * dS
            Z = np.diag(lk) + step * dZ
            r, l = self.nt_block(0.5 * (S + S.T), 0.5 * (Z + Z.T))
            R.append(Rk @ r)
            lam.append(l)
        return _Scaling(w, lam_lp, R, lam)

    def s_point(self):
        return self.w * self.lam_lp, [(R * l) @ R.T for R, l in zip(self.R, self.lam)]

    def z_point(self):
        return self.lam_lp / self.w, [(Ri.T * l) @ Ri for Ri, l in zip(self.Rinv, self.lam)]

    def W_inv(self, zh_lp, zh_blocks):
        """Unscaled ``W^{-1} v``."""
        return zh_lp / self.w, [Ri.T @ Z @ Ri for Ri, Z in zip(self.Rinv, zh_blocks)]

    def W_t(self, v_lp, v_blocks):
        """``W' v`` (maps scaled quantities back to the s-space)."""
        return self.w * v_lp, [R @ V @ R.T for R, V in zip(self.R, v_blocks)]


def _sym_prod(lam, X):
    """``lam o X`` for diagonal ``lam``: (diag(lam) X + X diag(lam)) / 2."""
    return 0.5 * (lam[:, None] + lam[None, :]) * X


def _sym_div(lam, X):
    """Solve ``lam o U = X`` for ``U``."""
    return 2.0 * X / (lam[:, None] + lam[None, :])


def _max_step_lp(lam, d):
    ratio = d / lam
    mn = ratio.min(initial=np.inf)
    return np.inf if mn >= 0 else -1.0 / mn


def _max_step_psd(lam, D):
    isq = 1.0 / np.sqrt(lam)
    M = isq[:, None] * D * isq[None, :]
    mn = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
    return np.inf if mn >= 0 else -1.0 / mn


class _Kkt:
    """Factorization of the scaled KKT system for one iteration."""

    def __init__(self, prob, A, scaling):
        self.prob = prob
        self.A = A
        self.sc = scaling
        n = prob.n
        H = np.zeros((n, n))
        self.Gl_hat = prob.lp_G / scaling.w[:, None]
        H += self.Gl_hat.T @ self.Gl_hat
        self.Gh = []
        for blk, Ri in zip(prob.blocks, scaling.Rinv):
            k, m = len(blk.cols), blk.size
            # R^-1 g_i R^-T for every column as two flat GEMMs (g_i symmetric)
            y = (blk.g.reshape(k * m, m) @ Ri.T).reshape(k, m, m)
            ghf = (np.swapaxes(y, 1, 2).reshape(k * m, m) @ Ri.T).reshape(k, m * m)
            H[np.ix_(blk.cols, blk.cols)] += ghf @ ghf.T
            self.Gh.append(ghf)
        self.n = n
        self.p = A.shape[0]
        M = H + A.T @ A if self.p else H
        self.mode = "chol"
        try:
            self.cf = sla.cho_factor(M, lower=True, check_finite=False)
            if self.p:
                MiAt = sla.cho_solve(self.cf, A.T, check_finite=False)
                self.S = sla.cho_factor(A @ MiAt, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            self.mode = "lu"
            K = np.zeros((n + self.p, n + self.p))
            K[:n, :n] = H
            K[:n, n:] = A.T
            K[n:, :n] = A
            reg = 1e-14 * max(1.0, np.abs(H).max())
            K[:n, :n] += reg * np.eye(n)
            self.lu = sla.lu_factor(K, check_finite=False)

    def _solve_xy(self, r1, py):
        n, p = self.n, self.p
        if self.mode == "chol":
            if p:
                r1 = r1 + self.A.T @ py
                Mr = sla.cho_solve(self.cf, r1, check_finite=False)
                dy = sla.cho_solve(self.S, self.A @ Mr - py, check_finite=False)
                dx = Mr - sla.cho_solve(self.cf, self.A.T @ dy, check_finite=False)
                return dx, dy
            return sla.cho_solve(self.cf, r1, check_finite=False), np.zeros(0)
        sol = sla.lu_solve(self.lu, np.concatenate([r1, py]), check_finite=False)
        return sol[:n], sol[n:]

    def _once(self, px, py, pz_lp, pz_blocks):
        sc = self.sc
        pzh_lp = pz_lp / sc.w
        r1 = px + self.Gl_hat.T @ pzh_lp
        pzh = []
        for blk, Ri, ghf in zip(self.prob.blocks, sc.Rinv, self.Gh):
            P = Ri @ pz_blocks[len(pzh)] @ Ri.T
            pzh.append(P)
            r1[blk.cols] += ghf @ P.ravel()
        dx, dy = self._solve_xy(r1, py)
        dzh_lp = self.Gl_hat @ dx - pzh_lp
        dzh = []
        for blk, ghf, P in zip(self.prob.blocks, self.Gh, pzh):
            dzh.append((dx[blk.cols] @ ghf).reshape(blk.size, blk.size) - P)
        return dx, dy, dzh_lp, dzh

    def solve(self, px, py, pz_lp, pz_blocks, refine=1):
        """Solve ``[0 A' G'; A 0 0; G 0 -W'W] (dx, dy, dz) = (px, py, pz)``.

        Returns ``dx, dy`` and the scaled ``W dz``.
        """
        dx, dy, zl, zb = self._once(px, py, pz_lp, pz_blocks)
        for _ in range(refine):
            dz_lp, dz_b = self.sc.W_inv(zl, zb)
            ex = px - self.A.T @ dy - _Gt(self.prob, dz_lp, dz_b)
            ey = py - self.A @ dx
            gl, gb = _G(self.prob, dx)
            wl, wb = self.sc.W_t(zl, zb)
            ezl = pz_lp - (gl - wl)
            ezb = [P - (g - w) for P, g, w in zip(pz_blocks, gb, wb)]
            ddx, ddy, dzl, dzb = self._once(ex, ey, ezl, ezb)
            dx = dx + ddx
            dy = dy + ddy
            zl = zl + dzl
            zb = [a + b for a, b in zip(zb, dzb)]
        return dx, dy, zl, zb


def _G(prob, x):
    gl = prob.lp_G @ x
    gb = [np.tensordot(x[blk.cols], blk.g, axes=1) for blk in prob.blocks]
    return gl, gb


def _Gt(prob, z_lp, z_blocks):
    out = prob.lp_G.T @ z_lp
    for blk, Z in zip(prob.blocks, z_blocks):
        out[blk.cols] += blk.g.reshape(len(blk.cols), -1) @ Z.ravel()
    return out


def _gt_scale(prob, A, y, z_lp, z_blocks):
    """Sum of the norms of the separate contributions to ``A'y + G'z``."""
    tot = np.linalg.norm(A.T @ y) + np.linalg.norm(prob.lp_G.T @ z_lp)
    for blk, Z in zip(prob.blocks, z_blocks):
        tot += np.linalg.norm(blk.g.reshape(len(blk.cols), -1) @ Z.ravel())
    return tot


def _dot(al, ab, bl, bb):
    return float(al @ bl + sum(np.vdot(a, b) for a, b in zip(ab, bb)))


def _nrm(al, ab):
    return np.sqrt(_dot(al, ab, al, ab))


def _shift_interior(v_lp, v_blocks):
    """Shift a cone vector into the interior the way the standard starting
    point does: add ``(1 + t) e`` where ``t`` is the largest violation."""
    viol = -min([v_lp.min(initial=np.inf)] +
                [np.linalg.eigvalsh(V)[0] for V in v_blocks])
    nrm = _nrm(v_lp, v_blocks)
    if viol >= -1e-8 * max(nrm, 1.0):
        a = 1.0 + viol
        v_lp = v_lp + a
        v_blocks = [V + a * np.eye(V.shape[0]) for V in v_blocks]
    return v_lp, v_blocks


def solve(problem, gap_tol=1e-8, feas_tol=1e-8, max_iters=200, refine=1,
          record_history=False):
    """Solve a :class:`ConicProblem`.

    Parameters
    ----------
    problem : ConicProblem
    gap_tol : float
        Relative duality gap target.
    feas_tol : float
        Relative primal/dual residual target; also the certificate tolerance.
    max_iters : int
        Iteration cap; exceeding it returns ``numerical-failure`` with the
        best iterate seen.

    Returns
    -------
    ConicSolution
    """
    prob = problem
    n = prob.n
    if prob.c.shape != (n,) or prob.lp_G.shape[1:] != (n,):
        raise InvalidInput("inconsistent problem dimensions")
    p_orig = prob.A.shape[0]
    A, b, kept, conflict = _presolve(np.asarray(prob.A, float), np.asarray(prob.b, float))
    ml = prob.lp_h.shape[0]
    sizes = [blk.size for blk in prob.blocks]
    if conflict is not None:
        return ConicSolution(INFEASIBLE, np.zeros(n), conflict, np.zeros(ml), np.zeros(ml),
                             [np.zeros((k, k)) for k in sizes],
                             [np.zeros((k, k)) for k in sizes], certificate_residual=0.0)
    p = A.shape[0]
    c, h_lp = prob.c, prob.lp_h
    h_b = [blk.h for blk in prob.blocks]
    m_deg = prob.degree

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b))
    resz0 = max(1.0, _nrm(h_lp, h_b))

    ident = _Scaling(np.ones(ml), np.ones(ml), [np.eye(k) for k in sizes],
                     [np.ones(k) for k in sizes])
    kkt = _Kkt(prob, A, ident)
    x, _, zl, zb = kkt.solve(np.zeros(n), b, h_lp, h_b)
    s_lp, s_b = _shift_interior(-zl, [-Z for Z in zb])
    _, y, zl, zb = kkt.solve(-c, np.zeros(p), np.zeros(ml), [np.zeros((k, k)) for k in sizes])
    z_lp, z_b = _shift_interior(zl, zb)
    tau, kappa = 1.0, 1.0
    try:
        sc = _Scaling.from_points(s_lp, z_lp, s_b, z_b)
    except np.linalg.LinAlgError:
        return ConicSolution(FAILURE, x, y, s_lp, z_lp, s_b, z_b)

    history = []
    best = None
    status = FAILURE
    out = None
    for it in range(max_iters + 1):
        s_lp, s_b = sc.s_point()
        z_lp, z_b = sc.z_point()
        gl, gb = _G(prob, x)
        hrx = A.T @ y + _Gt(prob, z_lp, z_b)
        hry = A @ x
        hrz_lp = s_lp + gl
        hrz_b = [S + g for S, g in zip(s_b, gb)]
        rx = hrx + c * tau
        ry = b * tau - hry
        rz_lp = hrz_lp - h_lp * tau
        rz_b = [H - hh * tau for H, hh in zip(hrz_b, h_b)]
        cx = float(c @ x)
        by = float(b @ y)
        hz = _dot(h_lp, h_b, z_lp, z_b)
        rt = kappa + cx + by + hz
        sz = _dot(s_lp, s_b, z_lp, z_b)

        pcost = cx / tau
        dcost = -(by + hz) / tau
        gap = sz / tau ** 2
        denom = max(abs(pcost), abs(dcost))
        relgap = gap / denom if denom > 0 else np.inf
        pres = max(np.linalg.norm(ry) / resy0, _nrm(rz_lp, rz_b) / resz0) / tau
        # the dual residual is measured relative to the size of the separate
        # terms of A'y + G'z, which cancel to -c at the optimum
        nx = max(resx0, _gt_scale(prob, A, y, z_lp, z_b) / tau)
        dres = np.linalg.norm(rx) / nx / tau
        if record_history:
            history.append(dict(it=it, pcost=pcost, dcost=dcost, gap=gap, pres=pres,
                                dres=dres, tau=tau, kappa=kappa))
        merit = max(pres, dres, min(relgap, gap))
        if best is None or merit < best[0]:
            best_it = it
            best = (merit, x / tau, y / tau, s_lp / tau, z_lp / tau,
                    [S / tau for S in s_b], [Z / tau for Z in z_b],
                    pcost, dcost, gap, relgap, pres, dres)

        pinf = np.inf
        if hz + by < 0:
            pinf = np.linalg.norm(hrx) / resx0 / (-(hz + by))
        dinf = np.inf
        if cx < 0:
            dinf = max(np.linalg.norm(hry) / resy0, _nrm(hrz_lp, hrz_b) / resz0) / (-cx)

        if pres <= feas_tol and dres <= feas_tol and (relgap <= gap_tol or gap <= 1e-3 * gap_tol):
            status = OPTIMAL
            out = ConicSolution(OPTIMAL, x / tau, y / tau, s_lp / tau, z_lp / tau,
                                [S / tau for S in s_b], [Z / tau for Z in z_b],
                                pcost, dcost, gap, relgap, pres, dres, it)
            break
        if pinf <= feas_tol:
            t = -(hz + by)
            out = ConicSolution(INFEASIBLE, np.full(n, np.nan), y / t, np.full(ml, np.nan),
                                z_lp / t, [np.full_like(S, np.nan) for S in s_b],
                                [Z / t for Z in z_b], iterations=it, certificate_residual=pinf)
            status = INFEASIBLE
            break
        if dinf <= feas_tol:
            t = -cx
            out = ConicSolution(UNBOUNDED, x / t, np.full(p, np.nan), s_lp / t,
                                np.full(ml, np.nan), [S / t for S in s_b],
                                [np.full_like(Z, np.nan) for Z in z_b], iterations=it,
                                certificate_residual=dinf)
            status = UNBOUNDED
            break
        if it == max_iters or it - best_it > STALL:
            break

        try:
            kkt = _Kkt(prob, A, sc)
            x1, y1, z1l, z1b = kkt.solve(-c, b, h_lp, h_b, refine)
            d1l, d1b = sc.W_inv(z1l, z1b)
            den1 = float(c @ x1 + b @ y1) + _dot(h_lp, h_b, d1l, d1b) - kappa / tau
            mu = (float(sc.lam_lp @ sc.lam_lp) + sum(float(l @ l) for l in sc.lam)
                  + tau * kappa) / (m_deg + 1)
            sigma = 0.0
            aff = None
            for phase in (0, 1):
                rs_lp = -sc.lam_lp ** 2 + sigma * mu
                rs_b = [np.diag(-l ** 2 + sigma * mu) for l in sc.lam]
                rk = -tau * kappa + sigma * mu
                if aff is not None:
                    dsa_l, dza_l, dsa_b, dza_b, dta, dka = aff
                    rs_lp = rs_lp - dsa_l * dza_l
                    rs_b = [R - 0.5 * (a @ bb + bb @ a) for R, a, bb in zip(rs_b, dsa_b, dza_b)]
                    rk = rk - dta * dka
                ql = rs_lp / sc.lam_lp
                qb = [_sym_div(l, R) for l, R in zip(sc.lam, rs_b)]
                wql, wqb = sc.W_t(ql, qb)
                f = 1.0 - sigma
                bx = -f * rx
                by_ = -f * ry
                bzl = -f * rz_lp - wql
                bzb = [-f * R - Q for R, Q in zip(rz_b, wqb)]
                bt = -f * rt - rk / tau
                x2, y2, z2l, z2b = kkt.solve(bx, -by_, bzl, bzb, refine)
                d2l, d2b = sc.W_inv(z2l, z2b)
                dtau = (bt - float(c @ x2 + b @ y2) - _dot(h_lp, h_b, d2l, d2b)) / den1
                dx = x2 + dtau * x1
                dy = y2 + dtau * y1
                dzl = z2l + dtau * z1l
                dzb = [a + dtau * bb for a, bb in zip(z2b, z1b)]
                dsl = ql - dzl
                dsb = [Q - D for Q, D in zip(qb, dzb)]
                dkappa = (rk - kappa * dtau) / tau
                amax = min([_max_step_lp(sc.lam_lp, dsl), _max_step_lp(sc.lam_lp, dzl)]
                           + [_max_step_psd(l, D) for l, D in zip(sc.lam, dsb)]
                           + [_max_step_psd(l, D) for l, D in zip(sc.lam, dzb)]
                           + [np.inf if dtau >= 0 else -tau / dtau,
                              np.inf if dkappa >= 0 else -kappa / dkappa])
                if phase == 0:
                    sigma = (1.0 - min(1.0, amax)) ** 3
                    aff = (dsl, dzl, dsb, dzb, dtau, dkappa)
            step = min(1.0, STEP * amax)
            new_sc = sc.updated(dsl, dzl, dsb, dzb, step)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            break
        x = x + step * dx
        y = y + step * dy
        tau = tau + step * dtau
        kappa = kappa + step * dkappa
        sc = new_sc

    if out is None:
        (_, bx_, by_, bsl, bzl_, bsb, bzb_, pc, dc, gp, rg, pr, dr) = best
        out = ConicSolution(FAILURE, bx_, by_, bsl, bzl_, bsb, bzb_, pc, dc, gp, rg, pr, dr, it)
    out.history = history
    if A.shape[0] != p_orig:
        y_full = np.zeros(p_orig)
        y_full[kept] = out.y
        out.y = y_full
    return out
