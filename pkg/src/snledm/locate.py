"""Sensor-position extraction from a relaxation optimum, with error measures.

Two estimators are provided.  The direct method solves ``A X^T = Ybar_21``,
which uses only the anchor-sensor block of the optimal Gram matrix.  The
spectral method first takes the best rank-r approximation of the whole
matrix, factors it, and aligns the factor to the anchors with an orthogonal
Procrustes fit; it keeps the information in the sensor block that the direct
method discards.

Measures: ``m1`` is the weighted distance-fit norm with the estimated
anchors, ``m2`` the Frobenius distance of the sensor estimate from the
ground truth, and ``m3`` the fit norm with the true anchors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import PartialEdm
from .operators import gram_to_edm
from .reduce import fix_eigvec_signs
from .relax import recover_sensors_from_gram


class LocateError(ValueError):
    """Invalid extraction input."""


@dataclass
class LocalizationResult:
    x_est: np.ndarray
    a_est: np.ndarray
    method: int
    measure1: float
    measure2: float | None
    measure3: float
    info: dict = field(default_factory=dict)


def method1(ybar, a, anchor_tol=1e-6):
    """Direct estimate from the anchor-sensor block.

    Returns ``(X, rel_residual)`` where the residual reports consistency of
    the linear system ``A X^T = Ybar_21``.
    """
    ybar = np.asarray(ybar, dtype=float)
    a = np.asarray(a, dtype=float)
    m = a.shape[0]
    n = ybar.shape[0] - m
    block = ybar[n:, n:] - a @ a.T
    if np.linalg.norm(block) > anchor_tol * max(1.0, np.linalg.norm(a @ a.T)):
        raise LocateError("anchor block of the Gram matrix does not match the anchors")
    return recover_sensors_from_gram(ybar, a)


def method2(ybar, a, r, psd_tol=1e-8, tie_tol=1e-8):
    """Spectral estimate: rank-r truncation then Procrustes alignment.

    Eigenvalues are sorted descending with a deterministic eigenvector sign
    convention; negative eigenvalues of a numerically PSD input are clamped
    before the square root.  The rank-r factor is translated so its anchor
    rows have zero mean (the anchors are centered, so the fit is rotation
    only).  A tie at the rank-r cutoff is reported in the info dict (the
    result then depends on the tie-break).
    """
    ybar = np.asarray(ybar, dtype=float)
    a = np.asarray(a, dtype=float)
    m = a.shape[0]
    n = ybar.shape[0] - m
    vals, vecs = np.linalg.eigh(0.5 * (ybar + ybar.T))
    if vals[0] < -psd_tol * max(1.0, vals[-1]):
        raise LocateError(f"Gram matrix is not PSD within tolerance "
                          f"(lambda_min = {vals[0]:.3e})")
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    vecs = fix_eigvec_signs(vecs)

    info = {"eigenvalues": vals.copy()}
    if len(vals) > r and abs(vals[r - 1] - vals[r]) <= tie_tol * max(1.0, vals[0]):
        info["tie_at_cutoff"] = True

    top = np.clip(vals[:r], 0.0, None)
    p_hat = vecs[:, :r] * np.sqrt(top)[None, :]
    p_hat = p_hat - p_hat[n:].mean(axis=0)
    p1, p2 = p_hat[:n], p_hat[n:]

    u_q, _, vt_q = np.linalg.svd(p2.T @ a)
    q_hat = u_q @ vt_q
    info["q_hat"] = q_hat
    info["procrustes_residual"] = float(np.linalg.norm(p2 @ q_hat - a))
    return p1 @ q_hat, p2 @ q_hat, info


def measures(x_est, a_est, a_true, pe: PartialEdm, x_true=None):
    """(m1, m2, m3) for an estimate; m2 is None without ground truth."""
    x_est = np.asarray(x_est, dtype=float)
    a_est = np.asarray(a_est, dtype=float)
    m1 = fit_norm(x_est, a_est, pe)
    m3 = fit_norm(x_est, np.asarray(a_true, dtype=float), pe)
    m2 = None
    if x_true is not None:
        m2 = float(np.linalg.norm(x_est - np.asarray(x_true, dtype=float)))
    return m1, m2, m3


def fit_norm(x_est, a_est, pe: PartialEdm):
    """Weighted distance-fit norm ``|W o (K(P P^T) - E)|_F`` for P = [X; A]."""
    p = np.vstack([x_est, a_est])
    return float(np.linalg.norm(pe.w * (gram_to_edm(p @ p.T) - pe.e)))


def localize(ybar, a, r, pe: PartialEdm, x_true=None, method=2):
    """Run one extraction method and package it with its measures."""
    if method == 1:
        x_est, residual = method1(ybar, a)
        a_est = np.asarray(a, dtype=float)
        info = {"consistency_residual": residual}
    elif method == 2:
        x_est, a_est, info = method2(ybar, a, r)
    else:
        raise LocateError(f"unknown method {method!r}")
    m1, m2, m3 = measures(x_est, a_est, a, pe, x_true)
    return LocalizationResult(x_est=x_est, a_est=a_est, method=method,
                              measure1=m1, measure2=m2, measure3=m3, info=info)


def translate_back(points, translation):
    """Map centered-frame coordinates back to the original frame."""
    return np.asarray(points, dtype=float) + np.asarray(translation, dtype=float)


def results_csv(rows, path):
    """Write (instance id, method, m1, m2, m3) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("instance", "method", "m1", "m2", "m3"))
        for instance_id, method, m1, m2, m3 in rows:
            writer.writerow((instance_id, method, repr(float(m1)),
                             "" if m2 is None else repr(float(m2)),
                             repr(float(m3))))
