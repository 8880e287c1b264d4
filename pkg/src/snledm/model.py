"""Problem data: localization instances, partial distance matrices, and file I/O.

An :class:`Instance` holds the generation ground truth (sensor and anchor
coordinates, centered so the anchors have zero mean) together with the
measured squared distances on the edges of the underlying graph.  A
:class:`PartialEdm` is the assembled matrix view used by the relaxations:
the squared-distance matrix ``E`` with a weight pattern ``W`` and optional
upper/lower bound patterns.

Generation follows a radio-range model: points are sampled uniformly in a
square, pairs within range become candidate edges, candidates are kept
independently with a given density, and the whole draw is retried with an
incremented seed until the graph (including the anchor clique) is connected.
Noise is multiplicative on distances: ``d~ = d (1 + sigma N(0,1))``, squared
into ``E``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import gram_to_edm

FORMAT_VERSION = 1
MAX_GENERATION_ATTEMPTS = 1000


class ModelError(ValueError):
    """Invalid instance data or parameters."""


@dataclass(frozen=True)
class Instance:
    """A localization problem with ground truth.

    Sensors are nodes ``0..n-1``, anchors ``n..n+m-1``.  ``x_true`` may be
    None for instances loaded without ground truth; all other fields are
    required.  ``translation`` records the shift applied to center the
    anchors, so estimates can be mapped back to the original frame.
    """

    r: int
    n: int
    m: int
    a: np.ndarray                   # m x r, centered anchor coordinates
    x_true: np.ndarray | None       # n x r or None
    translation: np.ndarray         # length r
    radio_range: float
    seed: int
    noise_sigma: float
    density: float = 1.0
    square_half_width: float = 1.0
    sensor_edges: list = field(default_factory=list)   # (i, j, squared dist)
    anchor_edges: list = field(default_factory=list)   # (i, k, squared dist), k anchor index
    cliques: list = field(default_factory=list)        # optional node lists
    upper_bounds: list = field(default_factory=list)   # (i, j, squared bound), global indices
    lower_bounds: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.n > self.m > self.r >= 1):
            raise ModelError(f"need n > m > r >= 1, got n={self.n} m={self.m} r={self.r}")
        a = np.asarray(self.a, dtype=float)
        if a.shape != (self.m, self.r):
            raise ModelError(f"anchor matrix has shape {a.shape}, expected {(self.m, self.r)}")
        if np.max(np.abs(a.sum(axis=0))) > 1e-12 * max(1.0, np.abs(a).max()):
            raise ModelError("anchors are not centered (column sums must vanish)")
        if np.linalg.matrix_rank(a) < self.r:
            raise ModelError("anchor matrix is rank deficient")
        if self.x_true is not None and np.asarray(self.x_true).shape != (self.n, self.r):
            raise ModelError("sensor matrix has wrong shape")

    @property
    def total(self):
        return self.n + self.m

    def points(self):
        """Stacked configuration [X; A]; requires ground truth."""
        if self.x_true is None:
            raise ModelError("instance has no ground-truth sensor positions")
        return np.vstack([self.x_true, self.a])


@dataclass(frozen=True)
class PartialEdm:
    """Partial squared-distance matrix with weight and bound patterns.

    ``e`` is hollow with zeros at unknown entries; the anchor-anchor block is
    always filled exactly from the anchor coordinates.  ``w`` is the weight
    matrix (1 on known edges and the anchor block by default).  ``h_u, u_b``
    and ``h_l, l_b`` are the optional upper/lower bound patterns and values.
    """

    e: np.ndarray
    w: np.ndarray
    h_u: np.ndarray
    u_b: np.ndarray
    h_l: np.ndarray
    l_b: np.ndarray
    n: int
    m: int
    sensor_edges: list
    anchor_edges: list

    def __post_init__(self):
        N = self.n + self.m
        for name in ("e", "w", "h_u", "u_b", "h_l", "l_b"):
            M = getattr(self, name)
            if M.shape != (N, N):
                raise ModelError(f"{name} has shape {M.shape}, expected {(N, N)}")
            if not np.allclose(M, M.T):
                raise ModelError(f"{name} is not symmetric")
        if np.any(np.diag(self.e) != 0):
            raise ModelError("E must be hollow")
        if np.any(self.e < 0):
            raise ModelError("E must be nonnegative")
        common = (self.h_u * self.h_l) != 0
        if np.any(self.l_b[common] > self.u_b[common]):
            raise ModelError("contradictory bounds: lower bound exceeds upper bound")

    @property
    def total(self):
        return self.n + self.m


@dataclass(frozen=True)
class DerivedConstants:
    """Data matrices with the known anchor-block contribution removed."""

    ebar: np.ndarray
    ubar: np.ndarray
    lbar: np.ndarray


def center_anchors(a_raw, x_raw):
    """Translate so the anchors have zero column means.

    Returns (a, x, translation) with ``a = a_raw - translation`` rowwise and
    the same shift applied to ``x_raw``.
    """
    a_raw = np.asarray(a_raw, dtype=float)
    x_raw = np.asarray(x_raw, dtype=float)
    if np.linalg.matrix_rank(a_raw - a_raw.mean(axis=0)) < a_raw.shape[1]:
        raise ModelError("anchor matrix is rank deficient after centering")
    translation = a_raw.mean(axis=0)
    return a_raw - translation, x_raw - translation, translation


def _connected(n_total, n_sensors, edges):
    """Union-find connectivity over sensors + one merged anchor component."""
    parent = list(range(n_total))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        parent[find(i)] = find(j)

    for k in range(n_sensors + 1, n_total):
        union(k, n_sensors)          # anchors form a clique
    for i, j in edges:
        union(i, j)
    root = find(0)
    return all(find(i) == root for i in range(n_total))


def _attempt(r, n, m, radio_range, density, noise_sigma, square_half_width,
             seed, attempt):
    # seeding on the (seed, attempt) pair keeps retries deterministic without
    # colliding with the first draw of the next seed
    rng = np.random.default_rng([seed, attempt])
    pts = rng.uniform(-square_half_width, square_half_width, size=(n + m, r))
    x_raw, a_raw = pts[:n], pts[n:]
    if np.linalg.matrix_rank(a_raw - a_raw.mean(axis=0)) < r:
        return None
    a, x, translation = center_anchors(a_raw, x_raw)
    p = np.vstack([x, a])

    sensor_edges, anchor_edges, plain = [], [], []
    for i in range(n):
        for j in range(i + 1, n + m):
            d = float(np.linalg.norm(p[i] - p[j]))
            if d > radio_range:
                continue
            if rng.uniform() > density:
                continue
            noisy = d * (1.0 + noise_sigma * rng.standard_normal())
            if j < n:
                sensor_edges.append((i, j, noisy * noisy))
            else:
                anchor_edges.append((i, j - n, noisy * noisy))
            plain.append((i, j))
    if not _connected(n + m, n, plain):
        return None
    return Instance(
        r=r, n=n, m=m, a=a, x_true=x, translation=translation,
        radio_range=radio_range, seed=seed, noise_sigma=noise_sigma,
        density=density, square_half_width=square_half_width,
        sensor_edges=sensor_edges, anchor_edges=anchor_edges,
    )


def generate(r, n, m, radio_range, density, noise_sigma, square_half_width, seed):
    """Generate a random connected instance.

    Resamples with an incremented attempt counter (up to 1000 attempts)
    until the graph of known edges, including the anchor clique, is
    connected.  The returned instance records the requested seed, so
    regeneration from it is reproducible.
    """
    if not (n > m > r >= 1):
        raise ModelError(f"need n > m > r >= 1, got n={n} m={m} r={r}")
    if radio_range <= 0:
        raise ModelError("radio range must be positive")
    if not 0 < density <= 1:
        raise ModelError("density must lie in (0, 1]")
    if noise_sigma < 0:
        raise ModelError("noise sigma must be nonnegative")
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        inst = _attempt(r, n, m, radio_range, density, noise_sigma,
                        square_half_width, seed, attempt)
        if inst is not None:
            return inst
    raise ModelError(
        f"connectivity unreachable at these parameters after "
        f"{MAX_GENERATION_ATTEMPTS} attempts (range {radio_range}, "
        f"density {density}, half-width {square_half_width})")


def build_partial_edm(inst: Instance) -> PartialEdm:
    """Assemble the matrix view of an instance.

    The anchor-anchor block of ``E`` is filled exactly from the anchor
    coordinates; weights are 1 on known edges and the anchor block.  Bounds
    come from the instance's optional bound lists.
    """
    n, m, N = inst.n, inst.m, inst.total
    e = np.zeros((N, N))
    w = np.zeros((N, N))
    for i, j, d2 in inst.sensor_edges:
        e[i, j] = e[j, i] = d2
        w[i, j] = w[j, i] = 1.0
    for i, k, d2 in inst.anchor_edges:
        j = n + k
        e[i, j] = e[j, i] = d2
        w[i, j] = w[j, i] = 1.0
    anchor_block = gram_to_edm(inst.a @ inst.a.T)
    e[n:, n:] = anchor_block
    w[n:, n:] = 1.0 - np.eye(m)

    h_u = np.zeros((N, N))
    u_b = np.zeros((N, N))
    for i, j, b in inst.upper_bounds:
        h_u[i, j] = h_u[j, i] = 1.0
        u_b[i, j] = u_b[j, i] = b
    h_l = np.zeros((N, N))
    l_b = np.zeros((N, N))
    for i, j, b in inst.lower_bounds:
        h_l[i, j] = h_l[j, i] = 1.0
        l_b[i, j] = l_b[j, i] = b

    return PartialEdm(e=e, w=w, h_u=h_u, u_b=u_b, h_l=h_l, l_b=l_b,
                      n=n, m=m, sensor_edges=list(inst.sensor_edges),
                      anchor_edges=list(inst.anchor_edges))


def derive_constants(pe: PartialEdm, a) -> DerivedConstants:
    """Remove the known anchor-block contribution from the data matrices.

    ``ebar = W o (E - K(anchor-block Gram))`` and analogously for the bound
    matrices, so the residual maps act on the unknown part only.
    """
    N = pe.total
    base = np.zeros((N, N))
    base[pe.n:, pe.n:] = np.asarray(a) @ np.asarray(a).T
    k_base = gram_to_edm(base)
    return DerivedConstants(
        ebar=pe.w * (pe.e - k_base),
        ubar=pe.h_u * (pe.u_b - k_base),
        lbar=pe.h_l * (pe.l_b - k_base),
    )


def fit_error(ybar, pe: PartialEdm):
    """Weighted distance-fit objective ``0.5 |W o (K(Ybar) - E)|_F^2``.

    Direct evaluation on the full Gram matrix; used as an independent check
    of the vectorized objective.
    """
    res = pe.w * (gram_to_edm(ybar) - pe.e)
    return 0.5 * float(np.sum(res * res))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _matrix_to_json(M):
    return None if M is None else np.asarray(M, dtype=float).tolist()


def save_instance(inst: Instance, path):
    """Write an instance as a JSON document (lossless round trip)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "r": inst.r, "n": inst.n, "m": inst.m,
        "anchors": _matrix_to_json(inst.a),
        "sensors_true": _matrix_to_json(inst.x_true),
        "translation": _matrix_to_json(inst.translation),
        "radio_range": inst.radio_range,
        "seed": inst.seed,
        "noise_sigma": inst.noise_sigma,
        "density": inst.density,
        "square_half_width": inst.square_half_width,
        "sensor_edges": [[int(i), int(j), float(d)] for i, j, d in inst.sensor_edges],
        "anchor_edges": [[int(i), int(k), float(d)] for i, k, d in inst.anchor_edges],
        "cliques": [[int(v) for v in c] for c in inst.cliques],
        "upper_bounds": [[int(i), int(j), float(b)] for i, j, b in inst.upper_bounds],
        "lower_bounds": [[int(i), int(j), float(b)] for i, j, b in inst.lower_bounds],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_instance(path) -> Instance:
    """Read an instance written by :func:`save_instance`, validating invariants."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed instance file {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    required = ["r", "n", "m", "anchors", "translation", "radio_range",
                "seed", "noise_sigma", "sensor_edges", "anchor_edges"]
    missing = [k for k in required if k not in doc]
    if missing:
        raise ModelError(f"instance file missing fields: {', '.join(missing)}")
    x_true = doc.get("sensors_true")
    return Instance(
        r=int(doc["r"]), n=int(doc["n"]), m=int(doc["m"]),
        a=np.asarray(doc["anchors"], dtype=float),
        x_true=None if x_true is None else np.asarray(x_true, dtype=float),
        translation=np.asarray(doc["translation"], dtype=float),
        radio_range=float(doc["radio_range"]),
        seed=int(doc["seed"]),
        noise_sigma=float(doc["noise_sigma"]),
        density=float(doc.get("density", 1.0)),
        square_half_width=float(doc.get("square_half_width", 1.0)),
        sensor_edges=[tuple(e) for e in doc["sensor_edges"]],
        anchor_edges=[tuple(e) for e in doc["anchor_edges"]],
        cliques=[list(c) for c in doc.get("cliques", [])],
        upper_bounds=[tuple(b) for b in doc.get("upper_bounds", [])],
        lower_bounds=[tuple(b) for b in doc.get("lower_bounds", [])],
    )


def with_bounds(inst: Instance, upper_bounds, lower_bounds) -> Instance:
    """Copy of an instance with bound lists attached."""
    return replace(inst, upper_bounds=list(upper_bounds), lower_bounds=list(lower_bounds))


def export_edm_csv(pe: PartialEdm, path):
    """Write the partial squared-distance matrix as CSV for inspection.

    Unknown entries (weight zero, off-diagonal) are left empty.
    """
    N = pe.total
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + [f"p{j}" for j in range(N)])
        for i in range(N):
            row = [f"p{i}"]
            for j in range(N):
                known = i == j or pe.w[i, j] > 0
                row.append(repr(float(pe.e[i, j])) if known else "")
            writer.writerow(row)
