"""Index maps for the ICI consensus variables and the maps ``E_n``.

Global vector ``t`` (length ``Nc (Nc-1) K``): transmitter ``m`` major, then
receiving cell ``n != m`` ascending, then user ``k``. Local vector ``t_n``
(length ``Nc K``) of BS ``n``: the incoming totals ``T_n1..T_nK`` followed by
the outgoing budgets ``t_nmk`` for ``m != n`` ascending, then ``k``.
"""

import numpy as np

from ..errors import InvalidInput


class IciIndex:
    def __init__(self, Nc, K):
        if Nc < 2:
            raise InvalidInput("consensus needs at least two cells")
        if K < 1:
            raise InvalidInput("consensus needs at least one user per cell")
        self.Nc, self.K = Nc, K
        self.dim = Nc * (Nc - 1) * K
        self.local_dim = Nc * K
        self._g = np.full((Nc, Nc, K), -1, dtype=int)
        i = 0
        for m in range(Nc):
            for n in range(Nc):
                if n == m:
                    continue
                for k in range(K):
                    self._g[m, n, k] = i
                    i += 1

    def g(self, m, n, k):
        """Global position of ``t_mnk``."""
        if m == n:
            raise InvalidInput("no ICI variable for m == n")
        return int(self._g[m, n, k])

    def others(self, n):
        return [m for m in range(self.Nc) if m != n]

    def out_pos(self, n, m, k):
        """Local position of the outgoing budget ``t_nmk`` in ``t_n``."""
        j = self.others(n).index(m)
        return self.K + j * self.K + k

    def to_array(self, t):
        """Global vector -> ``(Nc, Nc, K)`` array with NaN on ``m == n``."""
        out = np.full((self.Nc, self.Nc, self.K), np.nan)
        mask = self._g >= 0
        out[mask] = np.asarray(t)[self._g[mask]]
        return out

    def from_array(self, arr):
        return np.asarray(arr)[self._g >= 0]


class ConsensusMap:
    """The 0/1 maps ``E_n`` and the structured pseudo-inverse."""

    def __init__(self, Nc, K):
        self.index = IciIndex(Nc, K)
        ix = self.index
        self.Nc, self.K = Nc, K
        # incoming rows: positions summed into T_nk; outgoing rows: single position
        self._in = np.array([[[ix.g(m, n, k) for m in ix.others(n)] for k in range(K)]
                             for n in range(Nc)])  # (Nc, K, Nc-1)
        self._out = np.array([[[ix.g(n, m, k) for k in range(K)] for m in ix.others(n)]
                              for n in range(Nc)]).reshape(Nc, (Nc - 1) * K)

    def dense(self, n):
        E = np.zeros((self.index.local_dim, self.index.dim))
        for k in range(self.K):
            E[k, self._in[n, k]] = 1.0
        E[np.arange(self.K, self.index.local_dim), self._out[n]] = 1.0
        return E

    def apply_E(self, n, t):
        t = np.asarray(t, float)
        return np.concatenate([t[self._in[n]].sum(axis=-1), t[self._out[n]]])

    def apply_stack_E(self, t):
        return np.stack([self.apply_E(n, t) for n in range(self.Nc)])

    def apply_Et(self, y):
        """``sum_n E_n^T y_n`` for ``y`` of shape ``(Nc, Nc K)``."""
        y = np.asarray(y, float)
        out = np.zeros(self.index.dim)
        for n in range(self.Nc):
            for k in range(self.K):
                out[self._in[n, k]] += y[n, k]
            out[self._out[n]] += y[n, self.K:]
        return out

    def apply_pinv(self, y):
        """``(E^T E)^{-1} E^T y``; each ``(Nc-1)``-block of ``E^T E`` is
        ``I + 11^T`` with inverse ``I - 11^T / Nc``."""
        v = self.apply_Et(y)
        blocks = self._in  # (Nc, K, Nc-1): the coupled positions per (n, k)
        out = v.copy()
        sums = v[blocks].sum(axis=-1, keepdims=True)
        out[blocks] = v[blocks] - sums / self.Nc
        return out

    def nnls(self, y):
        """``argmin_{t >= 0} sum_n ||E_n t - y_n||^2`` in closed form.

        Per ``(n, k)`` block the problem is ``min sum_m (x_m - o_m)^2 +
        (sum_m x_m - T)^2`` over ``x >= 0`` whose solution is
        ``x_m = max(0, o_m - theta)`` with ``theta = sum(x) - T``.
        """
        y = np.asarray(y, float)
        t = np.zeros(self.index.dim)
        ix = self.index
        for n in range(self.Nc):
            for k in range(self.K):
                pos = self._in[n, k]
                o = np.array([y[m, ix.out_pos(m, n, k)] for m in ix.others(n)])
                T = y[n, k]
                t[pos] = _block_nnls(o, T)
        return t


def _block_nnls(o, T):
    order = np.sort(o)[::-1]
    theta = -T  # empty active set
    if order[0] > theta:
        csum = np.cumsum(order)
        for j in range(1, len(o) + 1):
            theta = (csum[j - 1] - T) / (1 + j)
            if j == len(o) or order[j] <= theta:
                break
    return np.maximum(0.0, o - theta)


def build_consensus_map(Nc, K):
    return ConsensusMap(Nc, K)
