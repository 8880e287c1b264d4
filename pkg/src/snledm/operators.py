"""Linear maps between Gram matrices, Euclidean distance matrices, and their
vectorizations.

All operators act on dense symmetric matrices represented as numpy arrays.
The two fundamental maps are ``gram_to_edm`` (squared pairwise distances of a
configuration from its Gram matrix) and its Moore-Penrose inverse
``edm_to_gram``.  Exact adjoints are provided for every map so the
optimization code can rely on inner-product identities
``<op(B), D> == <B, adj(D)>`` holding to machine precision.

Vectorization uses the isometric convention: ``svec`` scales strict
upper-triangular entries by sqrt(2) so that ``|svec(S)| == |S|_F`` and
``<svec(A), svec(B)> == trace(A B)``.  Entries are listed in row-major order
of the upper triangle.  Rectangular matrices are vectorized column-major
(``mat_to_vec``/``vec_to_mat``), matching the usual vec operator.
"""

from __future__ import annotations

import numpy as np

SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# Core symmetric-matrix operators
# ---------------------------------------------------------------------------

def diag_outer_sum(B):
    """Matrix with entries ``B[i,i] + B[j,j]``.

    Also accepts a vector ``v``, in which case the result is
    ``v e^T + e v^T``.
    """
    B = np.asarray(B, dtype=float)
    d = np.diag(B) if B.ndim == 2 else B
    return d[:, None] + d[None, :]


def diag_outer_sum_adjoint(D):
    """Adjoint of ``diag_outer_sum``: the diagonal matrix ``2 Diag(D e)``."""
    D = np.asarray(D, dtype=float)
    return np.diag(2.0 * D.sum(axis=1))


def gram_to_edm(B):
    """Map a Gram matrix to squared pairwise distances.

    For ``B = P P^T`` the result has entries ``|p_i - p_j|^2``.  The image is
    always hollow (zero diagonal).
    """
    B = np.asarray(B, dtype=float)
    return diag_outer_sum(B) - 2.0 * B


def gram_to_edm_adjoint(D):
    """Adjoint of ``gram_to_edm``: ``2 (Diag(D e) - D)``.

    The result is centered (zero row sums) for any symmetric ``D``.
    """
    D = np.asarray(D, dtype=float)
    return 2.0 * (np.diag(D.sum(axis=1)) - D)


def off_diagonal(S):
    """Zero out the diagonal of ``S``."""
    S = np.asarray(S, dtype=float)
    return S - np.diag(np.diag(S))


def centering_projector(n):
    """The orthogonal projector ``I - (1/n) e e^T`` onto vectors summing to 0."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def edm_to_gram(D):
    """Moore-Penrose inverse of ``gram_to_edm``: ``-1/2 J offDiag(D) J``.

    Returns the centered Gram matrix of any configuration realizing the
    (hollow) squared-distance matrix ``D``.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    J = centering_projector(n)
    return -0.5 * (J @ off_diagonal(D) @ J)


# ---------------------------------------------------------------------------
# Symmetric vectorization
# ---------------------------------------------------------------------------

_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _triu(n):
    """Cached row-major upper-triangle indices and sqrt(2) scaling vector."""
    cached = _TRIU_CACHE.get(n)
    if cached is None:
        rows, cols = np.triu_indices(n)
        scale = np.where(rows == cols, 1.0, SQRT2)
        cached = (rows, cols, scale)
        _TRIU_CACHE[n] = cached
    return cached


def tri_number(n):
    """t(n) = n (n + 1) / 2, the length of svec of an order-n matrix."""
    return n * (n + 1) // 2


def svec_order(length):
    """Matrix order n with t(n) == length; raises if not a triangular number."""
    n = int((np.sqrt(8 * length + 1) - 1) / 2 + 0.5)
    if tri_number(n) != length:
        raise ValueError(f"length {length} is not a triangular number")
    return n


def svec(S):
    """Isometric vectorization of a symmetric matrix (upper triangle,
    row-major, off-diagonal entries scaled by sqrt(2))."""
    S = np.asarray(S, dtype=float)
    rows, cols, scale = _triu(S.shape[0])
    return S[rows, cols] * scale


def smat(v):
    """Inverse of ``svec``."""
    v = np.asarray(v, dtype=float)
    n = svec_order(v.shape[0])
    rows, cols, scale = _triu(n)
    S = np.zeros((n, n))
    S[rows, cols] = v / scale
    S[cols, rows] = S[rows, cols]
    return S


def mat_to_vec(M):
    """Column-stacking vectorization of a rectangular matrix."""
    return np.asarray(M, dtype=float).ravel(order="F")


def vec_to_mat(v, rows, cols):
    """Inverse of ``mat_to_vec`` for the given shape."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != rows * cols:
        raise ValueError(f"vector of length {v.shape[0]} is not {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


# ---------------------------------------------------------------------------
# Block extraction / embedding for partitioned symmetric matrices
# ---------------------------------------------------------------------------

def _block_slices(dims):
    offsets = np.concatenate(([0], np.cumsum(dims)))
    return [slice(offsets[i], offsets[i + 1]) for i in range(len(dims))]


def _check_block(i, dims):
    if not 1 <= i <= len(dims):
        raise IndexError(f"block index {i} out of range for {len(dims)} blocks")


def block_diag_part(S, i, dims):
    """Extract the i-th diagonal block (1-based) of ``S`` partitioned by ``dims``."""
    _check_block(i, dims)
    sl = _block_slices(dims)[i - 1]
    return np.asarray(S, dtype=float)[sl, sl].copy()


def block_diag_embed(T, i, dims):
    """Adjoint of ``block_diag_part``: embed ``T`` as the i-th diagonal block."""
    _check_block(i, dims)
    n = int(np.sum(dims))
    sl = _block_slices(dims)[i - 1]
    S = np.zeros((n, n))
    S[sl, sl] = T
    return S


def block_off_part(S, i, j, dims):
    """Extract off-diagonal block (i, j) of ``S`` scaled by sqrt(2).

    The scaling makes extraction/embedding an isometric adjoint pair on
    symmetric matrices.
    """
    _check_block(i, dims)
    _check_block(j, dims)
    if i == j:
        raise IndexError("off-diagonal block requires i != j")
    sls = _block_slices(dims)
    return SQRT2 * np.asarray(S, dtype=float)[sls[i - 1], sls[j - 1]]


def block_off_embed(J, i, j, dims):
    """Adjoint of ``block_off_part``: place ``J / sqrt(2)`` into block (i, j)
    and its transpose into block (j, i)."""
    _check_block(i, dims)
    _check_block(j, dims)
    if i == j:
        raise IndexError("off-diagonal block requires i != j")
    n = int(np.sum(dims))
    sls = _block_slices(dims)
    S = np.zeros((n, n))
    S[sls[i - 1], sls[j - 1]] = np.asarray(J, dtype=float) / SQRT2
    S[sls[j - 1], sls[i - 1]] = S[sls[i - 1], sls[j - 1]].T
    return S


# ---------------------------------------------------------------------------
# Sparse-pattern vectorization
# ---------------------------------------------------------------------------

class Pattern:
    """Fixed index set of upper-triangular positions of a 0/1 symmetric matrix.

    ``take``/``embed`` restrict ``svec``/``smat`` to those positions, so the
    pair is a partial isometry: ``embed(take(H o M)) == H o M`` and
    ``<take(S), take(T)> == <H o S, H o T>``.
    """

    def __init__(self, H):
        H = np.asarray(H)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("pattern matrix must be square")
        if not np.array_equal(H, H.T):
            raise ValueError("pattern matrix must be symmetric")
        vals = np.unique(H)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("pattern matrix must be 0/1")
        self.n = H.shape[0]
        rows, cols = np.nonzero(np.triu(H))
        self.rows = rows
        self.cols = cols
        self.scale = np.where(rows == cols, 1.0, SQRT2)
        self.size = rows.shape[0]

    def take(self, S):
        """Patterned entries of ``S`` with the svec scaling."""
        S = np.asarray(S, dtype=float)
        return S[self.rows, self.cols] * self.scale

    def embed(self, v):
        """Adjoint of ``take``: symmetric matrix supported on the pattern."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.size:
            raise ValueError(f"vector length {v.shape[0]} != pattern size {self.size}")
        S = np.zeros((self.n, self.n))
        S[self.rows, self.cols] = v / self.scale
        S[self.cols, self.rows] = S[self.rows, self.cols]
        return S

    def matrix(self):
        """The defining 0/1 matrix."""
        H = np.zeros((self.n, self.n))
        H[self.rows, self.cols] = 1.0
        H[self.cols, self.rows] = 1.0
        return H


def svec_pattern(H, S):
    """Patterned entries of ``S`` at the nonzero upper-triangular positions
    of the 0/1 matrix ``H`` (row-major order, svec scaling)."""
    return Pattern(H).take(S)


def smat_pattern(H, v):
    """Adjoint of ``svec_pattern``."""
    return Pattern(H).embed(v)
