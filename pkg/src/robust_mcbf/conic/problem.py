"""Cone-LP problem container and a builder for LMI-structured SDPs.

Problems are stored in the standard form

    minimize    c' x
    subject to  G x + s = h,   A x = b,   s in K

where ``x`` holds the free scalar decision variables and the slack ``s``
ranges over a product of a nonnegative orthant and real symmetric PSD
blocks. Each PSD block is therefore an LMI ``h_k - sum_i x_i G_{k,i} >= 0``.
Complex Hermitian LMIs are stored through :func:`embed_hermitian`.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput
from .embed import embed_hermitian


@dataclass
class PsdBlock:
    """One real symmetric LMI block ``h - sum_{i in cols} x_i g[i] >= 0``."""

    size: int
    h: np.ndarray
    cols: np.ndarray
    g: np.ndarray
    name: str = ""


@dataclass
class HermitianVar:
    """A complex Hermitian matrix variable stored as ``n*n`` real scalars.

    Parameter order: the ``n`` diagonal entries, then real parts of the
    strict upper triangle (row-major), then the matching imaginary parts.
    """

    name: str
    n: int
    start: int

    @property
    def size(self):
        return self.n * self.n

    @property
    def slice(self):
        return slice(self.start, self.start + self.size)

    @property
    def indices(self):
        return np.arange(self.start, self.start + self.size)

    def trace_coeffs(self):
        """Indices of the diagonal parameters (each enters the trace with 1)."""
        return np.arange(self.start, self.start + self.n)

    def value(self, x):
        return params_to_hermitian(np.asarray(x)[self.slice], self.n)


def _upper_pairs(n):
    return np.triu_indices(n, k=1)


def params_to_hermitian(p, n):
    iu, ju = _upper_pairs(n)
    npair = len(iu)
    X = np.zeros((n, n), dtype=complex)
    X[np.arange(n), np.arange(n)] = p[:n]
    X[iu, ju] = p[n:n + npair] + 1j * p[n + npair:]
    X[ju, iu] = p[n:n + npair] - 1j * p[n + npair:]
    return X


def hermitian_to_params(X):
    X = np.asarray(X)
    n = X.shape[0]
    iu, ju = _upper_pairs(n)
    return np.concatenate([X.diagonal().real, X[iu, ju].real, X[iu, ju].imag])


def congruence_basis(T):
    """Return ``T E_i T^H`` for every Hermitian basis element ``E_i``.

    ``T`` is ``r x n``; the result has shape ``(n*n, r, r)`` in the
    parameter order of :class:`HermitianVar`.
    """
    T = np.asarray(T, dtype=complex)
    n = T.shape[1]
    iu, ju = _upper_pairs(n)
    ta = T.T  # columns as rows
    diag = ta[:, :, None] * ta[:, None, :].conj()
    ab = ta[iu][:, :, None] * ta[ju][:, None, :].conj()
    ba = np.conj(np.swapaxes(ab, 1, 2))
    return np.concatenate([diag, ab + ba, 1j * (ab - ba)], axis=0)


@dataclass
class ConicProblem:
    """Standard-form cone LP; see module docstring.

    ``groups`` maps a variable-group name to its index array and
    ``hermitian`` maps matrix-variable names to :class:`HermitianVar`.
    ``lp_names`` labels rows of the orthant block.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lp_G: np.ndarray
    lp_h: np.ndarray
    blocks: list
    groups: dict = field(default_factory=dict)
    hermitian: dict = field(default_factory=dict)
    lp_names: list = field(default_factory=list)
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.c.shape[0]

    @property
    def degree(self):
        return self.lp_h.shape[0] + sum(blk.size for blk in self.blocks)

    def value(self, x, name):
        """Value of a named group or Hermitian variable at ``x``."""
        if name in self.hermitian:
            return self.hermitian[name].value(x)
        idx = self.groups[name]
        return np.asarray(x)[idx]

    def block_value(self, x, k):
        """Slack matrix ``h - G x`` of PSD block ``k``."""
        blk = self.blocks[k]
        return blk.h - np.tensordot(np.asarray(x)[blk.cols], blk.g, axes=1)

    def scaled(self, kappa):
        """Copy with the objective multiplied by ``kappa``."""
        return ConicProblem(self.c * kappa, self.A, self.b, self.lp_G, self.lp_h,
                            self.blocks, self.groups, self.hermitian,
                            self.lp_names, self.name, self.meta)

    def permuted(self, order):
        """Copy with the PSD blocks reordered."""
        return ConicProblem(self.c, self.A, self.b, self.lp_G, self.lp_h,
                            [self.blocks[i] for i in order], self.groups,
                            self.hermitian, self.lp_names, self.name, self.meta)


class ConicBuilder:
    """Incrementally assemble a :class:`ConicProblem`.

    Linear expressions are ``dict[int, float]`` mapping variable index to
    coefficient.
    """

    def __init__(self, name=""):
        self.name = name
        self._n = 0
        self.groups = {}
        self.hermitian = {}
        self._obj = {}
        self._lp = []  # (name, terms, const) meaning const + terms.x >= 0
        self._eq = []  # (terms, rhs)
        self._blocks = []
        self.meta = {}

    @property
    def n(self):
        return self._n

    def scalars(self, name, count=1):
        idx = np.arange(self._n, self._n + count)
        self._n += count
        self.groups[name] = idx
        return idx

    def hermitian_var(self, name, n):
        var = HermitianVar(name, n, self._n)
        self._n += var.size
        self.hermitian[name] = var
        self.groups[name] = var.indices
        return var

    def add_objective(self, terms):
        for i, v in terms.items():
            self._obj[int(i)] = self._obj.get(int(i), 0.0) + float(v)

    def add_nonneg(self, terms, const=0.0, name=""):
        self._lp.append((name, dict(terms), float(const)))

    def add_eq(self, terms, rhs):
        self._eq.append((dict(terms), float(rhs)))

    def add_lmi(self, const, congruence=(), scalar=(), name="", real=False):
        """Add ``const + sum coef*T X T^H + sum x_i F_i >= 0``.

        Parameters
        ----------
        const : (r, r) array
            Hermitian (or real symmetric if ``real``) constant term.
        congruence : iterable of (HermitianVar, float, T)
            Matrix-variable terms; ``T`` is ``r x n``.
        scalar : iterable of (int, (r, r) array)
            Scalar-variable terms.
        real : bool
            Store a real symmetric block directly instead of embedding.
        """
        const = np.asarray(const)
        r = const.shape[0]
        cols = {}
        for var, coef, T in congruence:
            if real:
                raise InvalidInput("Hermitian variables need a complex LMI")
            T = np.asarray(T)
            if T.shape != (r, var.n):
                raise InvalidInput(f"congruence factor shape {T.shape} != {(r, var.n)}")
            mats = coef * congruence_basis(T)
            for j, i in enumerate(var.indices):
                cols[i] = cols.get(i, 0) + mats[j]
        for i, F in scalar:
            F = np.asarray(F)
            if F.shape != (r, r):
                raise InvalidInput(f"LMI term shape {F.shape} != {(r, r)}")
            cols[int(i)] = cols.get(int(i), 0) + F
        order = np.array(sorted(cols), dtype=int)
        if real:
            h = np.asarray(const, dtype=float)
            g = np.array([-np.asarray(cols[i], dtype=float) for i in order]).reshape(len(order), r, r)
            size = r
        else:
            h = embed_hermitian(const.astype(complex), check=False)
            stack = np.array([cols[i] for i in order], dtype=complex).reshape(len(order), r, r)
            g = -embed_hermitian(stack, check=False)
            size = 2 * r
        h = 0.5 * (h + h.T)
        g = 0.5 * (g + np.swapaxes(g, 1, 2))
        self._blocks.append(PsdBlock(size, h, order, g, name))

    def build(self):
        n = self._n
        c = np.zeros(n)
        for i, v in self._obj.items():
            c[i] = v
        ml = len(self._lp)
        lp_G = np.zeros((ml, n))
        lp_h = np.zeros(ml)
        for row, (_, terms, const) in enumerate(self._lp):
            lp_h[row] = const
            for i, v in terms.items():
                lp_G[row, i] -= v
        p = len(self._eq)
        A = np.zeros((p, n))
        b = np.zeros(p)
        for row, (terms, rhs) in enumerate(self._eq):
            b[row] = rhs
            for i, v in terms.items():
                A[row, i] += v
        return ConicProblem(c, A, b, lp_G, lp_h, list(self._blocks), dict(self.groups),
                            dict(self.hermitian), [nm for nm, _, _ in self._lp], self.name,
                            dict(self.meta))


def dump_problem(problem, fh):
    """Write a plain-text listing of ``problem`` in sparse triplet form.

    Lines: ``obj i value``; ``eq row i value`` / ``eqrhs row value``;
    ``lp row i value`` / ``lprhs row value``; for PSD block ``k``:
    ``blk k size name``, ``h k r c value`` and ``g k i r c value`` (upper
    triangle only).
    """
    w = fh.write
    w(f"# problem {problem.name} n={problem.n} eq={problem.A.shape[0]} "
      f"lp={problem.lp_h.shape[0]} psd={len(problem.blocks)}\n")
    for i in np.flatnonzero(problem.c):
        w(f"obj {i} {problem.c[i]:.17g}\n")
    for r, col in zip(*np.nonzero(problem.A)):
        w(f"eq {r} {col} {problem.A[r, col]:.17g}\n")
    for r, v in enumerate(problem.b):
        w(f"eqrhs {r} {v:.17g}\n")
    for r, col in zip(*np.nonzero(problem.lp_G)):
        w(f"lp {r} {col} {problem.lp_G[r, col]:.17g}\n")
    for r, v in enumerate(problem.lp_h):
        w(f"lprhs {r} {v:.17g}\n")
    for k, blk in enumerate(problem.blocks):
        w(f"blk {k} {blk.size} {blk.name or '-'}\n")
        iu = np.triu_indices(blk.size)
        for r, col in zip(*iu):
            if blk.h[r, col] != 0:
                w(f"h {k} {r} {col} {blk.h[r, col]:.17g}\n")
        for j, i in enumerate(blk.cols):
            gi = blk.g[j]
            for r, col in zip(*iu):
                if gi[r, col] != 0:
                    w(f"g {k} {i} {r} {col} {gi[r, col]:.17g}\n")
