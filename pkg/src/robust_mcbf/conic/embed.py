"""Real symmetric embedding of complex Hermitian matrices."""

import numpy as np

from ..errors import InvalidInput


def _check_hermitian(H, tol=1e-12):
    H = np.asarray(H)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise InvalidInput(f"expected square matrices, got shape {H.shape}")
    scale = max(1.0, float(np.max(np.abs(H))) if H.size else 1.0)
    if np.max(np.abs(H - np.conj(np.swapaxes(H, -1, -2))), initial=0.0) > tol * scale:
        raise InvalidInput("matrix is not Hermitian")
    return H


def embed_hermitian(H, check=True):
    """Map an n x n Hermitian matrix to the 2n x 2n real symmetric matrix
    ``[[Re H, -Im H], [Im H, Re H]]``.

    Works on stacks of matrices (leading batch dimensions). The embedding is
    linear, PSD-preserving, and every eigenvalue of ``H`` appears twice.
    """
    if check:
        H = _check_hermitian(H)
    H = np.asarray(H)
    re, im = H.real, H.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def extract_hermitian(S):
    """Inverse of :func:`embed_hermitian`.

    Averages the redundant copies, so it is also the orthogonal projection of
    an arbitrary real symmetric ``2n x 2n`` matrix onto the embedded subspace.
    """
    S = np.asarray(S, dtype=float)
    n2 = S.shape[-1]
    if n2 % 2:
        raise InvalidInput("embedded matrix must have even size")
    n = n2 // 2
    a, b = S[..., :n, :n], S[..., :n, n:]
    c, d = S[..., n:, :n], S[..., n:, n:]
    return 0.5 * (a + d) + 0.5j * (c - b)
