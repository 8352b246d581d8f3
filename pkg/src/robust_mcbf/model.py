"""System model: configuration, channels, CSI-error ellipsoids, SINR.

Index conventions used throughout the package:

* ``h[m, n, k]`` is the presumed small-scale channel from BS ``m`` to user
  ``k`` of cell ``n`` (shape ``(Nc, Nc, K, Nt)``), ``scale[m, n, k]`` its
  large-scale amplitude. The true channel is ``scale * (h + e)``.
* ``g[m, l]`` / ``scale_g[m, l]`` are the same for cell-edge user ``l``.
* Beamformers ``w[n, k]`` (shape ``(Nc, K, Nt)``) and ``f[n, l]``.
* ``a^H b`` is ``np.vdot(a, b)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInput

NOISE_DBM_PER_HZ = -162.0
BANDWIDTH_HZ = 10e6


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


def dbm2watt(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def watt2dbm(x):
    return 10.0 * np.log10(x) + 30.0


@dataclass
class SystemConfig:
    """Network dimensions, targets and weights; linear units, powers in W."""

    Nc: int
    K: int
    Nt: int
    gamma: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    p_max: float = float(dbm2watt(46.0))
    L: int = 0
    gamma_edge: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma2_edge: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.gamma = np.broadcast_to(np.asarray(self.gamma, float), (self.Nc, self.K)).copy()
        self.sigma2 = np.broadcast_to(np.asarray(self.sigma2, float), (self.Nc, self.K)).copy()
        self.alpha = np.broadcast_to(np.asarray(self.alpha, float), (self.Nc,)).copy()
        self.gamma_edge = np.broadcast_to(np.asarray(self.gamma_edge, float), (self.L,)).copy()
        self.sigma2_edge = np.broadcast_to(np.asarray(self.sigma2_edge, float), (self.L,)).copy()
        if self.Nc < 1 or self.K < 0 or self.Nt < 1 or self.L < 0:
            raise InvalidInput(f"bad dimensions Nc={self.Nc} K={self.K} Nt={self.Nt} L={self.L}")
        for name in ("gamma", "sigma2", "alpha", "gamma_edge", "sigma2_edge"):
            if np.any(getattr(self, name) <= 0):
                raise InvalidInput(f"{name} must be positive")

    @classmethod
    def uniform(cls, Nc, K, Nt, gamma_db, noise_w=None, L=0, alpha=1.0, p_max_dbm=46.0):
        """Equal targets and noise for every user (the simulation setting)."""
        if noise_w is None:
            noise_w = float(dbm2watt(NOISE_DBM_PER_HZ + 10 * np.log10(BANDWIDTH_HZ)))
        g = float(db2lin(gamma_db))
        return cls(Nc, K, Nt, g, noise_w, alpha, float(dbm2watt(p_max_dbm)), L,
                   np.full(L, g), np.full(L, noise_w))


@dataclass
class ChannelSet:
    h: np.ndarray
    scale: np.ndarray
    g: np.ndarray = None
    scale_g: np.ndarray = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        self.scale = np.asarray(self.scale, dtype=float)
        Nc, _, K, Nt = self.h.shape
        if self.g is None:
            self.g = np.zeros((Nc, 0, Nt), dtype=complex)
            self.scale_g = np.zeros((Nc, 0))
        self.g = np.asarray(self.g, dtype=complex)
        self.scale_g = np.asarray(self.scale_g, dtype=float)
        if self.scale.shape != self.h.shape[:3] or self.scale_g.shape != self.g.shape[:2]:
            raise InvalidInput("scale shapes do not match channel shapes")
        if np.any(self.scale < 0) or np.any(self.scale_g < 0):
            raise InvalidInput("large-scale factors must be nonnegative")

    @property
    def Nc(self):
        return self.h.shape[0]

    @property
    def K(self):
        return self.h.shape[2]

    @property
    def Nt(self):
        return self.h.shape[3]

    @property
    def L(self):
        return self.g.shape[1]

    def effective(self):
        """Presumed channels including large-scale gains."""
        return self.scale[..., None] * self.h, self.scale_g[..., None] * self.g

    def row(self, n):
        """Channels known to BS ``n``: everything it transmits on."""
        return ChannelSet(self.h[n:n + 1], self.scale[n:n + 1], self.g[n:n + 1],
                          self.scale_g[n:n + 1])

    def check(self, cfg):
        if self.h.shape != (cfg.Nc, cfg.Nc, cfg.K, cfg.Nt) or self.g.shape != (cfg.Nc, cfg.L, cfg.Nt):
            raise InvalidInput(f"channel shapes {self.h.shape}/{self.g.shape} do not match config")


@dataclass
class ErrorModel:
    """Ellipsoids ``e^H Q e <= 1`` on the small-scale CSI of every link.

    ``eps`` holds the radius for spherical links (``Q = I / eps^2``) and NaN
    otherwise; ``exact`` marks links with no error at all.
    """

    Q: np.ndarray
    exact: np.ndarray
    eps: np.ndarray
    Q_edge: np.ndarray
    exact_edge: np.ndarray
    eps_edge: np.ndarray

    def __post_init__(self):
        for Q, ex in ((self.Q, self.exact), (self.Q_edge, self.exact_edge)):
            if Q.size == 0:
                continue
            Qn = Q[~ex]
            if Qn.size:
                if np.max(np.abs(Qn - np.conj(np.swapaxes(Qn, -1, -2)))) > 1e-9 * max(1.0, np.abs(Qn).max()):
                    raise InvalidInput("error matrices must be Hermitian")
                if np.min(np.linalg.eigvalsh(Qn)) <= 0:
                    raise InvalidInput("error matrices must be positive definite")

    @classmethod
    def spherical(cls, Nc, K, Nt, eps_intra, eps_inter=None, L=0, eps_edge=None):
        """Spherical model; a radius of 0 marks the link as exact."""
        eps_inter = eps_intra if eps_inter is None else eps_inter
        eps_edge = eps_intra if eps_edge is None else eps_edge
        eps = np.full((Nc, Nc, K), float(eps_inter))
        for n in range(Nc):
            eps[n, n, :] = eps_intra
        epse = np.broadcast_to(np.asarray(eps_edge, float), (Nc, L)).copy()
        return cls.from_radii(eps, epse, Nt)

    @classmethod
    def from_radii(cls, eps, eps_edge, Nt):
        eps = np.asarray(eps, float)
        eps_edge = np.asarray(eps_edge, float)
        if np.any(eps < 0) or np.any(eps_edge < 0):
            raise InvalidInput("error radii must be nonnegative")
        exact = eps == 0
        exact_e = eps_edge == 0
        eye = np.eye(Nt)
        with np.errstate(divide="ignore"):
            q = np.where(exact, 0.0, 1.0 / np.where(exact, 1.0, eps) ** 2)
            qe = np.where(exact_e, 0.0, 1.0 / np.where(exact_e, 1.0, eps_edge) ** 2)
        Q = q[..., None, None] * eye
        Qe = qe[..., None, None] * eye
        for arr, ex in ((Q, exact), (Qe, exact_e)):
            arr[ex] = eye
        return cls(Q.astype(complex), exact, eps, Qe.astype(complex), exact_e, eps_edge)

    @property
    def spherical_model(self):
        return not (np.any(np.isnan(self.eps)) or np.any(np.isnan(self.eps_edge)))

    def row(self, n):
        return ErrorModel(self.Q[n:n + 1], self.exact[n:n + 1], self.eps[n:n + 1],
                          self.Q_edge[n:n + 1], self.exact_edge[n:n + 1], self.eps_edge[n:n + 1])

    def scaled(self, scale, scale_g):
        """Error matrices for the large-scale-scaled channel ``scale * (h + e)``."""
        with np.errstate(divide="ignore"):
            s = np.where(scale > 0, 1.0 / np.where(scale > 0, scale, 1.0) ** 2, np.inf)
            sg = np.where(scale_g > 0, 1.0 / np.where(scale_g > 0, scale_g, 1.0) ** 2, np.inf)
        return self.Q * s[..., None, None], self.Q_edge * sg[..., None, None]


@dataclass
class BeamformerSolution:
    """Result of a beamforming design.

    Powers are in watts; ``t[m, n, k]`` is the worst-case ICI budget from
    BS ``m`` to user ``(n, k)`` in watts (NaN on the diagonal ``m == n``).
    ``w`` / ``f`` are None unless every matrix passed the rank-one test.
    """

    W: np.ndarray
    F: np.ndarray
    w: np.ndarray = None
    f: np.ndarray = None
    lam: np.ndarray = None
    lam_edge: np.ndarray = None
    t: np.ndarray = None
    eta: np.ndarray = None
    objective: float = np.nan
    p: np.ndarray = None
    status: str = ""
    eig_ratio: np.ndarray = None
    eig_ratio_edge: np.ndarray = None
    solver_iterations: int = 0

    @property
    def rank_one(self):
        return self.w is not None and (self.F.shape[1] == 0 or self.f is not None)


# --------------------------------------------------------------------------
# SINR
# --------------------------------------------------------------------------

def _gains(h, w):
    """``G[..., m, n, k, i] = |h[..., m, n, k]^H w[m, i]|^2``."""
    return np.abs(np.einsum("...mnkt,mit->...mnki", np.conj(h), w)) ** 2


def sinr_all(w, h, sigma2):
    """SINR of every intra-cell user, vectorized over leading sample axes.

    ``h`` has shape ``(..., Nc, Nc, K, Nt)``; returns ``(..., Nc, K)``.
    """
    w = np.asarray(w, complex)
    h = np.asarray(h, complex)
    if h.shape[-1] != w.shape[-1] or h.shape[-4] != w.shape[0] or h.shape[-2] != w.shape[1]:
        raise InvalidInput(f"beam shape {w.shape} does not match channel shape {h.shape}")
    G = _gains(h, w)
    Nc, K = w.shape[0], w.shape[1]
    n = np.arange(Nc)
    k = np.arange(K)
    sig = G[..., n[:, None], n[:, None], k[None, :], k[None, :]]
    total = G.sum(axis=(-4, -1))  # sum over tx cell m and stream i -> (..., n, k)
    return sig / (total - sig + sigma2)


def sinr(n, k, w, h, sigma2):
    """SINR of user ``k`` in cell ``n`` for beams ``w`` and true channels ``h``.

    ``sigma2`` is that user's noise power.
    """
    w = np.asarray(w, complex)
    h = np.asarray(h, complex)
    if h.ndim != 4 or w.ndim != 3 or h.shape[3] != w.shape[2] or h.shape[0] != w.shape[0] \
            or h.shape[2] != w.shape[1]:
        raise InvalidInput(f"beam shape {w.shape} does not match channel shape {h.shape}")
    if not (0 <= n < w.shape[0] and 0 <= k < w.shape[1]):
        raise InvalidInput("user index out of range")
    G = _gains(h, w)
    sig = G[n, n, k, k]
    return float(sig / (G[:, n, k, :].sum() - sig + sigma2))


def sinr_full_all(w, f, h, g, sigma2, sigma2_edge):
    """SINRs with cell-edge users served by every BS.

    Returns ``(intra (..., Nc, K), edge (..., L))``.
    """
    w = np.asarray(w, complex)
    f = np.asarray(f, complex)
    h = np.asarray(h, complex)
    g = np.asarray(g, complex)
    Nc, K = w.shape[:2]
    L = f.shape[1]
    if g.shape[-2] != L or f.shape[0] != Nc:
        raise InvalidInput("edge beam/channel shapes do not match")
    # intra-cell users
    Gw = _gains(h, w)
    n = np.arange(Nc)
    k = np.arange(K)
    sig = Gw[..., n[:, None], n[:, None], k[None, :], k[None, :]]
    inter_w = Gw.sum(axis=(-4, -1)) - sig
    Gf = _gains(h, f) if K else np.zeros(h.shape[:-1] + (L,))
    edge_int = Gf.sum(axis=(-4, -1))
    intra = sig / (inter_w + edge_int + sigma2)
    # edge users: |g[m,l]^H w[m,i]|^2 and |g[m,l]^H f[m,j]|^2
    gw = np.abs(np.einsum("...mlt,mit->...mli", np.conj(g), w)) ** 2
    gf = np.abs(np.einsum("...mlt,mjt->...mlj", np.conj(g), f)) ** 2
    ll = np.arange(L)
    num = gf[..., :, ll, ll].sum(axis=-2)
    den = gw.sum(axis=(-3, -1)) + gf.sum(axis=(-3, -1)) - num + sigma2_edge
    return intra, num / den


def sinr_edge(l, w, f, h, g, sigma2_edge):
    """SINR of cell-edge user ``l`` (numerator sums every BS's stream power)."""
    f = np.asarray(f)
    if f.ndim != 3 or f.shape[1] == 0:
        raise InvalidInput("no cell-edge users")
    if not 0 <= l < f.shape[1]:
        raise InvalidInput("edge user index out of range")
    s2 = np.ones(f.shape[1])
    s2[l] = sigma2_edge
    _, edge = sinr_full_all(w, f, h, g, 1.0, s2)
    return float(edge[l])


def sinr_intra_full(n, k, w, f, h, g, sigma2):
    """SINR of intra-cell user ``(n, k)`` when edge streams are present."""
    w = np.asarray(w)
    if not (0 <= n < w.shape[0] and 0 <= k < w.shape[1]):
        raise InvalidInput("user index out of range")
    L = np.asarray(f).shape[1]
    intra, _ = sinr_full_all(w, f, h, g, sigma2, np.ones(L))
    return float(intra[n, k])


# --------------------------------------------------------------------------
# Instance generation
# --------------------------------------------------------------------------

@dataclass
class Geometry:
    """Large-scale model parameters (distances in km)."""

    inter_bs_km: float = 0.5
    min_dist_km: float = 0.035
    shadow_db: float = 8.0
    antenna_gain_dbi: float = 15.0
    layout: str = "hex"  # hex | unit | edge
    intra_radius_km: float = 0.235

    def __post_init__(self):
        if self.inter_bs_km <= 0 or self.min_dist_km <= 0 or self.intra_radius_km <= 0:
            raise InvalidInput("distances must be positive")
        if self.layout not in ("hex", "unit", "edge"):
            raise InvalidInput(f"unknown layout {self.layout!r}")


def pathloss_amplitude(d_km):
    """``10^(-(128.1 + 37.6 log10 d) / 20)`` for ``d`` in km."""
    d = np.asarray(d_km, float)
    if np.any(d <= 0):
        raise InvalidInput("distances must be positive")
    return 10.0 ** (-(128.1 + 37.6 * np.log10(d)) / 20.0)


def bs_positions(Nc, spacing):
    """The ``Nc`` hexagonal-lattice sites closest to the origin."""
    r = int(np.ceil(np.sqrt(Nc))) + 2
    pts = []
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            p = np.array([a + 0.5 * b, b * np.sqrt(3) / 2]) * spacing
            ang = np.arctan2(p[1], p[0]) % (2 * np.pi)
            pts.append((round(np.hypot(*p) / spacing, 9), round(ang, 9), tuple(p)))
    pts.sort()
    return np.array([p for _, _, p in pts[:Nc]])


def _in_hexagon(p, inradius):
    dirs = np.array([[1, 0], [0.5, np.sqrt(3) / 2], [-0.5, np.sqrt(3) / 2]])
    return np.all(np.abs(p @ dirs.T) <= inradius, axis=-1)


def _drop_in_cell(rng, center, inradius, dmin):
    R = inradius * 2 / np.sqrt(3)
    while True:
        p = rng.uniform(-R, R, size=2)
        if _in_hexagon(p, inradius) and np.hypot(*p) >= dmin:
            return center + p


def _drop_in_disc(rng, center, radius, dmin):
    while True:
        p = rng.uniform(-radius, radius, size=2)
        if dmin <= np.hypot(*p) <= radius:
            return center + p


def _drop_edge(rng, bs, n, radius):
    """Uniform point inside the BS triangle, nearest to BS ``n`` and farther
    than ``radius`` from it."""
    lo, hi = bs.min(axis=0), bs.max(axis=0)
    a, b, c = bs[0], bs[1], bs[2]

    def inside(p):
        def cross(o, u, v):
            return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
        s = [cross(a, b, p), cross(b, c, p), cross(c, a, p)]
        return all(x >= 0 for x in s) or all(x <= 0 for x in s)

    while True:
        p = rng.uniform(lo, hi)
        d = np.hypot(*(bs - p).T)
        if inside(p) and np.argmin(d) == n and d[n] > radius:
            return p


@dataclass
class Placement:
    bs: np.ndarray
    users: np.ndarray
    edge: np.ndarray


def generate_instance(cfg, geometry=None, seed=0):
    """Draw presumed CSI and large-scale gains.

    Small-scale entries are i.i.d. CN(0, 1). With ``layout='unit'`` every
    large-scale factor is 1. With ``layout='edge'`` (three cells) the users
    of each cell are drawn inside the intra-cell disc, and the cell-edge
    users inside the BS triangle.

    Returns ``(ChannelSet, Placement)``; a pure function of the arguments.
    """
    geo = geometry or Geometry()
    rng = np.random.default_rng(seed)
    Nc, K, Nt, L = cfg.Nc, cfg.K, cfg.Nt, cfg.L
    shape_h = (Nc, Nc, K, Nt)
    h = (rng.standard_normal(shape_h) + 1j * rng.standard_normal(shape_h)) / np.sqrt(2)
    g = (rng.standard_normal((Nc, L, Nt)) + 1j * rng.standard_normal((Nc, L, Nt))) / np.sqrt(2)
    if geo.layout == "unit":
        return (ChannelSet(h, np.ones((Nc, Nc, K)), g, np.ones((Nc, L))),
                Placement(np.zeros((Nc, 2)), np.zeros((Nc, K, 2)), np.zeros((L, 2))))

    bs = bs_positions(Nc, geo.inter_bs_km)
    users = np.zeros((Nc, K, 2))
    edge = np.zeros((L, 2))
    if geo.layout == "hex":
        for n in range(Nc):
            for k in range(K):
                users[n, k] = _drop_in_cell(rng, bs[n], geo.inter_bs_km / 2, geo.min_dist_km)
        if L:
            raise InvalidInput("cell-edge users need layout='edge'")
    else:
        if Nc != 3:
            raise InvalidInput("the edge layout is defined for three cells")
        for n in range(Nc):
            for k in range(K):
                users[n, k] = _drop_in_disc(rng, bs[n], geo.intra_radius_km, geo.min_dist_km)
        for l in range(L):
            edge[l] = _drop_edge(rng, bs, l % Nc, geo.intra_radius_km)

    d = np.linalg.norm(bs[:, None, None, :] - users[None], axis=-1)  # (m, n, k)
    de = np.linalg.norm(bs[:, None, :] - edge[None], axis=-1)  # (m, l)
    psi = 10.0 ** (geo.shadow_db * rng.standard_normal(d.shape) / 20.0)
    psie = 10.0 ** (geo.shadow_db * rng.standard_normal(de.shape) / 20.0)
    phi = 10.0 ** (geo.antenna_gain_dbi / 20.0)
    scale = pathloss_amplitude(d) * psi * phi
    scale_g = pathloss_amplitude(de) * psie * phi if L else np.zeros((Nc, 0))
    return ChannelSet(h, scale, g, scale_g), Placement(bs, users, edge)


def generate_edge_pair(gamma_db, eps, seed=0, geometry=None, Nt=4, noise_w=None):
    """Matched instances for the fully-coordinated comparison.

    Returns ``(cfg_mcbf, ch_mcbf, err_mcbf, cfg_full, ch_full, err_full)``:
    the same three-cell drop, once with each edge user served by its own BS
    (``K=2``), once served jointly (``K=1, L=3``).
    """
    geo = geometry or Geometry(layout="edge")
    cfg_full = SystemConfig.uniform(3, 1, Nt, gamma_db, noise_w, L=3)
    ch_full, place = generate_instance(cfg_full, geo, seed)
    cfg_m = SystemConfig.uniform(3, 2, Nt, gamma_db, noise_w)
    h = np.concatenate([ch_full.h, ch_full.g[:, :, None, :]], axis=2)
    sc = np.concatenate([ch_full.scale, ch_full.scale_g[:, :, None]], axis=2)
    ch_m = ChannelSet(h, sc)
    err_full = ErrorModel.spherical(3, 1, Nt, eps, L=3, eps_edge=eps)
    err_m = ErrorModel.spherical(3, 2, Nt, eps)
    return cfg_m, ch_m, err_m, cfg_full, ch_full, err_full


# --------------------------------------------------------------------------
# Worst-case quadratic over an ellipsoid
# --------------------------------------------------------------------------

@dataclass
class WorstCase:
    value: float
    e: np.ndarray
    multiplier: float
    hard_case: bool = False


def _trs_min(A, b, c):
    """Exact minimizer of ``u^H A u + 2 Re(b^H u) + c`` over ``||u|| <= 1``.

    Returns ``(value, u, theta, hard)`` with ``(A + theta I) u = -b``,
    ``A + theta I >= 0`` and ``theta (1 - ||u||) = 0``.
    """
    s = max(np.linalg.norm(A, 2), np.linalg.norm(b))
    if s == 0:
        return float(c), np.zeros(A.shape[0], complex), 0.0, False
    val, u, theta, hard = _trs_unit(A / s, b / s, c / s)
    return val * s, u, theta * s, hard


def _trs_unit(A, b, c):
    """:func:`_trs_min` for data scaled to unit size."""
    a, V = np.linalg.eigh(A)
    beta = V.conj().T @ b
    tol = 1e-12
    bnorm = np.linalg.norm(beta)

    def value(u):
        return float(np.real(np.vdot(u, A @ u)) + 2 * np.real(np.vdot(b, u)) + c)

    a0 = a[0]
    if a0 > tol:
        u = -V @ (beta / a)
        if np.linalg.norm(u) <= 1.0:
            return value(u), u, 0.0, False
    theta_lo = max(0.0, -a0)
    low = (a - a0) <= tol
    small = np.abs(beta[low]) <= 1e-10 * max(bnorm, 1e-300) if bnorm > 0 else np.ones(low.sum(), bool)
    if np.all(small):
        # candidate hard case (or interior solution of a singular convex A)
        denom = a[~low] + theta_lo
        coeff = np.zeros_like(beta)
        coeff[~low] = beta[~low] / denom
        u0 = -V @ coeff
        r = np.linalg.norm(u0)
        if r <= 1.0:
            if theta_lo == 0.0:
                return value(u0), u0, 0.0, False
            tail = np.sqrt(max(0.0, 1.0 - r * r))
            u = u0 + tail * V[:, 0]
            return value(u), u, theta_lo, True

    def psi(theta):
        d = a + theta
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.sqrt(np.sum(np.abs(beta) ** 2 / d ** 2))
        if not np.isfinite(r) or r == 0:
            return -1.0 if not np.isfinite(r) else np.inf
        return 1.0 / r - 1.0

    lo = theta_lo
    hi = max(theta_lo, bnorm - a0) + 1.0
    while psi(hi) < 0:
        hi = 2 * hi + 1.0
    if psi(lo) >= 0:
        theta = lo
    else:
        theta = brentq(psi, lo, hi, xtol=1e-15 * max(1.0, hi), rtol=4 * np.finfo(float).eps,
                       maxiter=500)
    d = a + theta
    flat = d <= tol
    coeff = np.zeros_like(beta)
    coeff[~flat] = beta[~flat] / d[~flat]
    u = -V @ coeff
    nu = np.linalg.norm(u)
    hard = bool(flat.any())
    if hard and nu < 1.0:
        # (near) hard case: the multiplier sits at -a0, fill up along its eigenvector
        u = u + np.sqrt(1.0 - nu * nu) * V[:, 0]
    elif nu > 1.0:
        u = u / nu
    return value(u), u, theta, hard


def worst_case_quadratic(h_hat, M, Q, sense="min"):
    """Optimize ``(h + e)^H M (h + e)`` over ``e^H Q e <= 1``.

    Parameters
    ----------
    h_hat : (N,) complex
    M : (N, N) Hermitian
    Q : (N, N) Hermitian positive definite
    sense : {'min', 'max'}

    Returns
    -------
    WorstCase
        ``value``, an attaining error ``e``, and the multiplier of the
        whitened unit-ball constraint.
    """
    h_hat = np.asarray(h_hat, complex)
    M = np.asarray(M, complex)
    Q = np.asarray(Q, complex)
    N = h_hat.shape[0]
    if M.shape != (N, N) or Q.shape != (N, N):
        raise InvalidInput("dimension mismatch")
    if sense not in ("min", "max"):
        raise InvalidInput(f"sense must be 'min' or 'max', got {sense!r}")
    q, Vq = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    if q[0] <= 0:
        raise InvalidInput("Q must be positive definite")
    P = (Vq / np.sqrt(q)) @ Vq.conj().T  # Q^{-1/2}
    Ms = 0.5 * (M + M.conj().T)
    sgn = 1.0 if sense == "min" else -1.0
    A = sgn * (P @ Ms @ P)
    A = 0.5 * (A + A.conj().T)
    b = sgn * (P @ (Ms @ h_hat))
    c = sgn * float(np.real(np.vdot(h_hat, Ms @ h_hat)))
    val, u, theta, hard = _trs_min(A, b, c)
    return WorstCase(sgn * val, P @ u, theta, hard)


# --------------------------------------------------------------------------
# Monte Carlo robustness check
# --------------------------------------------------------------------------

def sample_ellipsoid(rng, Q, n_samples, boundary_fraction=0.2):
    """Uniform samples of ``e^H Q e <= 1`` with a quota forced onto the
    boundary. Returns ``(n_samples, N)``."""
    N = Q.shape[-1]
    z = rng.standard_normal((n_samples, 2 * N))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rng.uniform(size=n_samples) ** (1.0 / (2 * N))
    nb = int(round(boundary_fraction * n_samples))
    r[:nb] = 1.0
    u = (z[:, :N] + 1j * z[:, N:]) * r[:, None]
    q, V = np.linalg.eigh(Q)
    P = (V / np.sqrt(q)) @ V.conj().T
    return u @ P.T


@dataclass
class RobustnessReport:
    violation_rate: float
    min_achieved_sinr: float
    user_violation_rate: np.ndarray
    user_min_sinr: np.ndarray
    worst_case_margin: np.ndarray
    worst_case_ok: bool
    samples: np.ndarray = None
    edge_violation_rate: np.ndarray = None
    edge_min_sinr: np.ndarray = None
    edge_worst_case_margin: np.ndarray = None


def _draw_errors(rng, Q, exact, n_samples, boundary_fraction):
    shape = Q.shape[:-2]
    N = Q.shape[-1]
    out = np.zeros((n_samples,) + shape + (N,), dtype=complex)
    for idx in np.ndindex(*shape):
        if not exact[idx]:
            out[(slice(None),) + idx] = sample_ellipsoid(rng, Q[idx], n_samples, boundary_fraction)
    return out


def validate_robustness(solution, cfg, channels, errors, n_samples=10000, rng=None,
                        boundary_fraction=0.2, rel_tol=1e-6, keep_samples=False):
    """Empirical and exact worst-case check of a rank-one design.

    Draws ``n_samples`` independent error realizations per link, evaluates
    the achieved SINRs on ``scale * (h + e)`` and counts a violation when
    ``SINR < gamma * (1 - rel_tol)``. ``violation_rate`` is the fraction of
    draws in which at least one user is in outage. The worst-case margins
    come from :func:`worst_case_quadratic` applied to the decomposed
    constraints (signal-minus-intra-cell term minimized, each inter-cell
    term maximized), normalized by the noise power.
    """
    if solution.w is None or (cfg.L and solution.f is None):
        raise InvalidInput("validation needs extracted rank-one beamformers")
    rng = rng if rng is not None else np.random.default_rng()
    w = solution.w
    f = solution.f if cfg.L else np.zeros((cfg.Nc, 0, cfg.Nt), complex)
    e = _draw_errors(rng, errors.Q, errors.exact, n_samples, boundary_fraction)
    h = channels.scale[..., None] * (channels.h[None] + e)
    if cfg.L:
        v = _draw_errors(rng, errors.Q_edge, errors.exact_edge, n_samples, boundary_fraction)
        g = channels.scale_g[..., None] * (channels.g[None] + v)
        s, se = sinr_full_all(w, f, h, g, cfg.sigma2, cfg.sigma2_edge)
    else:
        s = sinr_all(w, h, cfg.sigma2)
        se = np.zeros((n_samples, 0))
    viol = s < cfg.gamma * (1 - rel_tol)
    viol_e = se < cfg.gamma_edge * (1 - rel_tol)
    any_v = viol.reshape(n_samples, -1).any(axis=1) | viol_e.any(axis=1)
    margin, margin_e = worst_case_margins(outer(w), outer(f), cfg, channels, errors)
    ok = bool(np.all(margin >= -rel_tol) and np.all(margin_e >= -rel_tol))
    mins = [s.min()] if s.size else []
    mins += [se.min()] if se.size else []
    return RobustnessReport(
        float(any_v.mean()), float(min(mins)), viol.mean(axis=0), s.min(axis=0), margin, ok,
        s if keep_samples else None, viol_e.mean(axis=0),
        se.min(axis=0) if se.size else np.zeros(0), margin_e)


def _wc(h, M, Q, exact, sense):
    if exact or not np.all(np.isfinite(Q)):
        return float(np.real(np.vdot(h, M @ h)))
    return worst_case_quadratic(h, M, Q, sense).value


def outer(w):
    """Stack of ``w w^H`` over the leading axes."""
    w = np.asarray(w, complex)
    return np.einsum("...i,...j->...ij", w, np.conj(w))


def worst_case_margins(WW, FF, cfg, channels, errors):
    """Noise-normalized exact worst-case slack of every SINR constraint.

    ``WW`` / ``FF`` are the transmit covariance stacks ``(Nc, K, Nt, Nt)`` and
    ``(Nc, L, Nt, Nt)``. For an intra-cell user the slack is
    ``min (h+e)^H U (h+e) - sum_m max (h+e)^H S_m (h+e) - sigma^2``, divided by
    ``sigma^2``. For an edge user: the sum over BSs of the minimized per-BS
    term, minus ``sigma^2``, normalized likewise.
    """
    Nc, K, L = cfg.Nc, cfg.K, cfg.L
    Qs, Qe = errors.scaled(channels.scale, channels.scale_g)
    hh, gg = channels.effective()
    WW = np.asarray(WW, complex)
    FF = np.asarray(FF, complex).reshape(Nc, L, cfg.Nt, cfg.Nt)
    margin = np.zeros((Nc, K))
    for n in range(Nc):
        Fn = FF[n].sum(axis=0)
        for k in range(K):
            U = WW[n, k] / cfg.gamma[n, k] - (WW[n].sum(axis=0) - WW[n, k]) - Fn
            lhs = _wc(hh[n, n, k], U, Qs[n, n, k], errors.exact[n, n, k], "min")
            ici = 0.0
            for m in range(Nc):
                if m != n:
                    S = WW[m].sum(axis=0) + FF[m].sum(axis=0)
                    ici += _wc(hh[m, n, k], S, Qs[m, n, k], errors.exact[m, n, k], "max")
            margin[n, k] = (lhs - ici - cfg.sigma2[n, k]) / cfg.sigma2[n, k]
    margin_e = np.zeros(L)
    for l in range(L):
        tot = 0.0
        for m in range(Nc):
            U = FF[m, l] / cfg.gamma_edge[l] - WW[m].sum(axis=0) - (FF[m].sum(axis=0) - FF[m, l])
            tot += _wc(gg[m, l], U, Qe[m, l], errors.exact_edge[m, l], "min")
        margin_e[l] = (tot - cfg.sigma2_edge[l]) / cfg.sigma2_edge[l]
    return margin, margin_e


# --------------------------------------------------------------------------
# JSON interchange
# --------------------------------------------------------------------------

def complex_to_json(a):
    """Nested lists with ``[re, im]`` leaves."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def complex_from_json(obj):
    arr = np.asarray(obj, dtype=float)
    if arr.shape[-1:] != (2,):
        raise InvalidInput("complex arrays are stored as [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _real_from_json(obj, shape):
    arr = np.asarray(obj, dtype=float)
    return arr.reshape(shape)


def instance_to_json(cfg, channels, errors):
    """JSON-ready dict holding a complete problem instance."""
    return {
        "config": {
            "Nc": cfg.Nc, "K": cfg.K, "Nt": cfg.Nt, "L": cfg.L,
            "gamma": cfg.gamma.tolist(), "sigma2": cfg.sigma2.tolist(),
            "alpha": cfg.alpha.tolist(), "p_max": cfg.p_max,
            "gamma_edge": cfg.gamma_edge.tolist(), "sigma2_edge": cfg.sigma2_edge.tolist(),
        },
        "channels": {
            "h": complex_to_json(channels.h), "scale": channels.scale.tolist(),
            "g": complex_to_json(channels.g), "scale_g": channels.scale_g.tolist(),
        },
        "errors": {
            "Q": complex_to_json(errors.Q), "exact": errors.exact.tolist(),
            "eps": np.where(np.isnan(errors.eps), -1.0, errors.eps).tolist(),
            "Q_edge": complex_to_json(errors.Q_edge), "exact_edge": errors.exact_edge.tolist(),
            "eps_edge": np.where(np.isnan(errors.eps_edge), -1.0, errors.eps_edge).tolist(),
        },
    }


def instance_from_json(doc):
    """Inverse of :func:`instance_to_json`; radii of -1 mean 'not spherical'."""
    c = doc["config"]
    cfg = SystemConfig(c["Nc"], c["K"], c["Nt"], c["gamma"], c["sigma2"], c["alpha"],
                       c["p_max"], c.get("L", 0), c.get("gamma_edge", []), c.get("sigma2_edge", []))
    Nc, K, Nt, L = cfg.Nc, cfg.K, cfg.Nt, cfg.L
    ch = doc["channels"]
    h = complex_from_json(ch["h"]).reshape(Nc, Nc, K, Nt)
    g = complex_from_json(ch["g"]).reshape(Nc, L, Nt) if L else None
    channels = ChannelSet(h, _real_from_json(ch["scale"], (Nc, Nc, K)), g,
                          _real_from_json(ch["scale_g"], (Nc, L)) if L else None)
    e = doc["errors"]
    eps = _real_from_json(e["eps"], (Nc, Nc, K))
    eps_e = _real_from_json(e["eps_edge"], (Nc, L))
    errors = ErrorModel(complex_from_json(e["Q"]).reshape(Nc, Nc, K, Nt, Nt),
                        np.asarray(e["exact"], bool).reshape(Nc, Nc, K),
                        np.where(eps < 0, np.nan, eps),
                        complex_from_json(e["Q_edge"]).reshape(Nc, L, Nt, Nt),
                        np.asarray(e["exact_edge"], bool).reshape(Nc, L),
                        np.where(eps_e < 0, np.nan, eps_e))
    channels.check(cfg)
    return cfg, channels, errors
