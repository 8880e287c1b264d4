"""Facial reduction: congruence bases that project the semidefinite relaxation
onto the smallest face of the PSD cone containing the feasible set.

The anchor set always forms a clique with a rank-deficient Gram block, so
strict feasibility fails for the raw relaxation.  The fix is to write the
full Gram variable as ``Ybar = U Z U^T`` where ``U`` is block diagonal:
an identity block for free sensors, one basis block per declared sensor
clique, and a terminal block for the anchors (either the anchor matrix
itself or its left singular vectors).  Each sensor-clique block comes from
the eigenvectors of ``B + 2 e e^T`` where ``B`` is the centered Gram matrix
recovered from the clique's squared distances; the shift picks out the
maximum-rank point of the matching face, whose rank is at most r + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelError, PartialEdm
from .operators import edm_to_gram, gram_to_edm


class ReduceError(ValueError):
    """Invalid reduction input."""


class CliqueInconsistencyError(ReduceError):
    """Clique distances not realizable in the target dimension."""

    def __init__(self, message, tail):
        super().__init__(message)
        self.tail = np.asarray(tail)


def fix_eigvec_signs(V, tol=1e-12):
    """Deterministic sign convention: first nonzero component positive."""
    V = np.array(V, dtype=float)
    for k in range(V.shape[1]):
        col = V[:, k]
        nz = np.nonzero(np.abs(col) > tol)[0]
        if nz.size and col[nz[0]] < 0:
            V[:, k] = -col
    return V


@dataclass(frozen=True)
class CliqueSpec:
    """A set of nodes whose pairwise distances are all known."""

    nodes: tuple
    kind: str = "sensor"            # "sensor" or "anchor"

    def __post_init__(self):
        if self.kind not in ("sensor", "anchor"):
            raise ReduceError(f"unknown clique kind {self.kind!r}")
        if len(set(self.nodes)) != len(self.nodes):
            raise ReduceError("clique nodes must be distinct")


def anchor_face(a):
    """Compact SVD ``A = U diag(sigma) V^T`` of the centered anchor matrix.

    ``U`` spans the face of the anchor Gram block.  Raises on rank
    deficiency (a singular value below 1e-10 of the largest).
    """
    a = np.asarray(a, dtype=float)
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    if sigma[-1] <= 1e-10 * sigma[0]:
        raise ReduceError(
            f"anchor matrix is numerically rank deficient (sigma={sigma})")
    return u, sigma, vt.T


@dataclass(frozen=True)
class CliqueFace:
    """Face basis of one sensor clique.

    ``u`` has the clique size rows and ``r2 <= r + 1`` orthonormal columns;
    ``b`` is the centered clique Gram matrix and ``eigenvalues`` the full
    descending spectrum of the shifted matrix ``b + 2 e e^T``.
    """

    u: np.ndarray
    r2: int
    b: np.ndarray
    eigenvalues: np.ndarray


def clique_face(e2, r, keep_tol=1e-8, fail_tol=1e-4):
    """Face basis for a clique with squared-distance matrix ``e2``.

    Recovers the centered Gram matrix ``B``, shifts by ``2 e e^T`` to reach
    the maximum-rank point of the face, and keeps eigenvectors with
    eigenvalues above ``keep_tol`` times the largest.  A kept tail beyond
    r + 1 larger than ``fail_tol`` times the largest eigenvalue means the
    distances are not realizable in dimension r and is reported as an error;
    a smaller tail is truncated.
    """
    e2 = np.asarray(e2, dtype=float)
    p = e2.shape[0]
    if e2.shape != (p, p) or not np.allclose(e2, e2.T):
        raise ReduceError("clique distance matrix must be square symmetric")
    if np.any(np.diag(e2) != 0) or np.any(e2 < 0):
        raise ReduceError("clique distance matrix must be hollow and nonnegative")

    b = edm_to_gram(e2)
    bhat = b + 2.0 * np.ones((p, p))
    vals, vecs = np.linalg.eigh(bhat)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    lam_max = max(vals[0], np.finfo(float).tiny)

    b_vals = np.linalg.eigvalsh(b)
    if b_vals[0] < -fail_tol * lam_max:
        raise CliqueInconsistencyError(
            f"clique distances are not a Euclidean distance matrix "
            f"(Gram eigenvalue {b_vals[0]:.3e})", b_vals[b_vals < 0])

    kept = int(np.sum(vals > keep_tol * lam_max))
    if kept > r + 1:
        tail = vals[r + 1:kept]
        if np.any(tail > fail_tol * lam_max):
            raise CliqueInconsistencyError(
                f"clique not realizable in dimension {r}: shifted Gram has "
                f"{kept} significant eigenvalues (tail {tail})", tail)
        kept = r + 1
    r2 = max(kept, 1)
    u = fix_eigvec_signs(vecs[:, :r2])
    return CliqueFace(u=u, r2=r2, b=b, eigenvalues=vals)


@dataclass(frozen=True)
class FaceBasis:
    """Block-diagonal congruence realizing the minimal-face projection.

    Sensor part: identity on free sensors followed by one block per clique
    (all with orthonormal columns).  Terminal part: the anchor matrix ``A``
    ("a" form, terminal block of Z constrained to the identity) or its left
    singular vectors ("s" form, terminal block constrained to
    ``diag(sigma)^2``).
    """

    n_free: int
    clique_blocks: tuple
    anchor: np.ndarray
    u_anchor: np.ndarray
    sigma: np.ndarray
    v_anchor: np.ndarray
    terminal_kind: str = "a"

    def __post_init__(self):
        if self.terminal_kind not in ("a", "s"):
            raise ReduceError(f"unknown terminal kind {self.terminal_kind!r}")

    @property
    def r(self):
        return self.anchor.shape[1]

    @property
    def m(self):
        return self.anchor.shape[0]

    @property
    def n(self):
        return self.n_free + sum(u.shape[0] for u in self.clique_blocks)

    @property
    def q(self):
        """Columns of the sensor part (reduced sensor order)."""
        return self.n_free + sum(u.shape[1] for u in self.clique_blocks)

    @property
    def reduced_order(self):
        return self.q + self.r

    @property
    def total(self):
        return self.n + self.m

    def sensor_matrix(self):
        """The n x q block-diagonal sensor part."""
        f = np.zeros((self.n, self.q))
        row = col = 0
        f[:self.n_free, :self.n_free] = np.eye(self.n_free)
        row = col = self.n_free
        for u in self.clique_blocks:
            p, k = u.shape
            f[row:row + p, col:col + k] = u
            row += p
            col += k
        return f

    def terminal_matrix(self, kind=None):
        kind = kind or self.terminal_kind
        if kind == "a":
            return self.anchor
        return self.u_anchor

    def terminal_block_value(self, kind=None):
        """Required value of the last r x r diagonal block of Z."""
        kind = kind or self.terminal_kind
        if kind == "a":
            return np.eye(self.r)
        return np.diag(self.sigma ** 2)

    def matrix(self, kind=None):
        """The full (n + m) x (q + r) congruence matrix."""
        t = self.terminal_matrix(kind)
        out = np.zeros((self.total, self.reduced_order))
        out[:self.n, :self.q] = self.sensor_matrix()
        out[self.n:, self.q:] = t
        return out

    def assemble(self, z, kind=None):
        """Lift a reduced variable: ``Ybar = U Z U^T``."""
        u = self.matrix(kind)
        return u @ np.asarray(z, dtype=float) @ u.T

    def pullback(self, ybar, kind=None):
        """Least-squares reduced representation of a full Gram matrix."""
        u_pinv = np.linalg.pinv(self.matrix(kind))
        z = u_pinv @ np.asarray(ybar, dtype=float) @ u_pinv.T
        return 0.5 * (z + z.T)

    def transport(self, z, to_kind):
        """Map a reduced variable between the two terminal conventions.

        The congruence ``T = blkdiag(I, diag(sigma) V^T)`` satisfies
        ``U_a = U_s T``, so ``Z_s = T Z_a T^T`` represents the same lifted
        matrix.
        """
        z = np.asarray(z, dtype=float)
        sv = np.diag(self.sigma) @ self.v_anchor.T
        t = np.eye(self.reduced_order)
        if to_kind == "s":
            t[self.q:, self.q:] = sv
        elif to_kind == "a":
            t[self.q:, self.q:] = np.linalg.inv(sv)
        else:
            raise ReduceError(f"unknown terminal kind {to_kind!r}")
        return t @ z @ t.T

    def shift_interior(self, z, delta=2.0):
        """Add ``delta I`` to the sensor part of a reduced variable.

        Leaves the terminal block untouched, so a feasible point stays
        feasible while its Schur complement gains ``delta I``; this is the
        reduced-coordinates counterpart of the ``+ 2 e e^T`` shift used to
        build clique faces.
        """
        z = np.array(z, dtype=float)
        z[:self.q, :self.q] += delta * np.eye(self.q)
        return z


def compose_face(n_free, clique_faces, anchor, terminal_kind="a"):
    """Assemble the block-diagonal face for free sensors, cliques, anchors."""
    anchor = np.asarray(anchor, dtype=float)
    if n_free < 0:
        raise ReduceError("negative free-sensor count")
    u, sigma, v = anchor_face(anchor)
    return FaceBasis(
        n_free=n_free,
        clique_blocks=tuple(cf.u for cf in clique_faces),
        anchor=anchor, u_anchor=u, sigma=sigma, v_anchor=v,
        terminal_kind=terminal_kind,
    )


# ---------------------------------------------------------------------------
# Clique discovery and node ordering
# ---------------------------------------------------------------------------

def validate_clique(pe: PartialEdm, nodes):
    """Check that all pairwise distances among the sensor nodes are known."""
    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            i, j = nodes[a], nodes[b]
            if i >= pe.n or j >= pe.n:
                raise ReduceError(f"clique node {max(i, j)} is not a sensor")
            if pe.w[i, j] <= 0:
                raise ReduceError(f"clique pair ({i}, {j}) has no known distance")


def clique_submatrix(pe: PartialEdm, nodes):
    """The clique's squared-distance matrix in the listed node order."""
    validate_clique(pe, nodes)
    idx = np.asarray(nodes)
    return pe.e[np.ix_(idx, idx)].copy()


def find_sensor_cliques(pe: PartialEdm, min_size):
    """Greedy disjoint clique search in the sensor-sensor known-edge graph.

    Seeds at the unused node of highest degree (ties broken by lowest
    index), grows by the candidate adjacent to all current members with the
    highest degree.  Deterministic for fixed input; returns possibly empty
    list of cliques of at least ``min_size`` nodes, largest first.
    """
    n = pe.n
    adj = pe.w[:n, :n] > 0
    np.fill_diagonal(adj, False)
    degree = adj.sum(axis=1)
    used = np.zeros(n, dtype=bool)
    cliques = []
    for seed in sorted(range(n), key=lambda i: (-degree[i], i)):
        if used[seed]:
            continue
        members = [seed]
        candidates = set(np.nonzero(adj[seed] & ~used)[0].tolist())
        while candidates:
            best = min(candidates, key=lambda i: (-degree[i], i))
            members.append(best)
            candidates &= set(np.nonzero(adj[best])[0].tolist())
            candidates.discard(best)
            candidates -= set(np.nonzero(used)[0].tolist())
        if len(members) >= min_size:
            used[members] = True
            cliques.append(CliqueSpec(nodes=tuple(sorted(members)), kind="sensor"))
    cliques.sort(key=lambda c: (-len(c.nodes), c.nodes))
    return cliques


def permute_for_cliques(pe: PartialEdm, cliques):
    """Symmetric permutation placing free sensors first, then each clique's
    sensors contiguously, anchors last.

    Returns ``(pe_permuted, order, cliques_permuted)`` where ``order`` lists
    the original sensor index now sitting at each new position, so estimates
    are mapped back with ``X_orig[order] = X_new``.
    """
    n = pe.n
    in_clique = np.zeros(n, dtype=bool)
    for c in cliques:
        validate_clique(pe, c.nodes)
        if np.any(in_clique[list(c.nodes)]):
            raise ReduceError("cliques overlap")
        in_clique[list(c.nodes)] = True
    free = [i for i in range(n) if not in_clique[i]]
    order = list(free)
    new_cliques = []
    for c in cliques:
        start = len(order)
        order.extend(c.nodes)
        new_cliques.append(CliqueSpec(
            nodes=tuple(range(start, start + len(c.nodes))), kind=c.kind))
    order = np.asarray(order, dtype=int)

    full = np.concatenate([order, np.arange(n, pe.total)])
    remap = np.empty(pe.total, dtype=int)
    remap[full] = np.arange(pe.total)

    def conj(M):
        return M[np.ix_(full, full)].copy()

    pe_new = PartialEdm(
        e=conj(pe.e), w=conj(pe.w), h_u=conj(pe.h_u), u_b=conj(pe.u_b),
        h_l=conj(pe.h_l), l_b=conj(pe.l_b), n=pe.n, m=pe.m,
        sensor_edges=[(int(remap[i]), int(remap[j]), d) for i, j, d in pe.sensor_edges],
        anchor_edges=[(int(remap[i]), k, d) for i, k, d in pe.anchor_edges],
    )
    return pe_new, order, new_cliques
