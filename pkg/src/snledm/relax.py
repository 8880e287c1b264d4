"""Semidefinite relaxations of the localization problem and their optimality
systems.

Two equivalent formulations of the weighted least-squares distance fit are
supported, both parameterized by the face basis from :mod:`snledm.reduce`:

* ``quadratic``: the sensor Gram block ``Y`` and coordinate block ``X`` are
  free, with the cone constraint kept in product form ``Y - X X^T >= 0``.
* ``linearized``: the same variables with the cone constraint written on the
  lifted matrix ``Z_s = [[I, X^T], [X, Y]] >= 0`` via a Schur complement, and
  the multiplier of that constraint kept as an explicit unknown.

Variables follow the isometric vectorization: ``x = sqrt(2) vec(X)`` and
``y = svec(Y)``.  The residual of the perturbed optimality system, its
Jacobian action, and the exact Jacobian adjoint are what the Gauss-Newton
solver consumes; the multiplier of the quadratic cone constraint is always
eliminated through the stationarity condition in ``y``, which leaves an
overdetermined bilinear system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DerivedConstants, PartialEdm, derive_constants
from .operators import (
    SQRT2,
    Pattern,
    gram_to_edm,
    gram_to_edm_adjoint,
    mat_to_vec,
    smat,
    svec,
    tri_number,
    vec_to_mat,
)
from .reduce import FaceBasis

KINDS = ("quadratic", "linearized")


class RelaxError(ValueError):
    """Inconsistent relaxation input."""


@dataclass
class PrimalDualPoint:
    """Primal block (x, y) and dual blocks for one formulation.

    ``lam_s`` is the explicit cone multiplier of the linearized formulation
    (a symmetric matrix of the reduced order); it is None for the quadratic
    formulation, whose multiplier is eliminated.
    """

    x: np.ndarray
    y: np.ndarray
    lam_u: np.ndarray
    lam_l: np.ndarray
    lam_s: np.ndarray | None = None

    def copy(self):
        return PrimalDualPoint(
            self.x.copy(), self.y.copy(), self.lam_u.copy(), self.lam_l.copy(),
            None if self.lam_s is None else self.lam_s.copy())


@dataclass
class Direction:
    """Increment with the same block structure as a point."""

    dx: np.ndarray
    dy: np.ndarray
    dlam_u: np.ndarray
    dlam_l: np.ndarray
    dlam_s: np.ndarray | None = None


@dataclass
class KktResidual:
    """Blocks of the perturbed optimality residual.

    ``ru``/``rl`` are the complementarity residuals on the bound patterns,
    ``rc`` the (nonsymmetric) cone complementarity block, ``rs`` the
    stationarity residual in ``x``.  The linearized formulation adds the
    stationarity residual in ``y`` as ``ry``; it is empty for the quadratic
    formulation, where that condition defines the eliminated multiplier.
    """

    ru: np.ndarray
    rl: np.ndarray
    rc: np.ndarray
    rs: np.ndarray
    ry: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def vector(self):
        return np.concatenate([
            self.ru, self.rl, mat_to_vec(self.rc), self.rs, self.ry])

    def norm(self):
        return float(np.linalg.norm(self.vector()))

    def block_norms(self):
        """Norms of (bound-upper, bound-lower, cone, stationarity) blocks."""
        return (
            float(np.linalg.norm(self.ru)),
            float(np.linalg.norm(self.rl)),
            float(np.linalg.norm(self.rc)),
            float(np.sqrt(np.linalg.norm(self.rs) ** 2
                          + np.linalg.norm(self.ry) ** 2)),
        )


class Formulation:
    """One relaxation instance: data, face, and the optimality-system maps."""

    def __init__(self, kind: str, pe: PartialEdm, face: FaceBasis,
                 constants: DerivedConstants | None = None):
        if kind not in KINDS:
            raise RelaxError(f"unknown formulation kind {kind!r}")
        if face.terminal_kind != "a":
            raise RelaxError("solver formulations use the 'a' terminal form")
        if face.n != pe.n or face.m != pe.m:
            raise RelaxError("face basis does not match the partial EDM")
        self.kind = kind
        self.pe = pe
        self.face = face
        self.constants = constants or derive_constants(pe, face.anchor)

        self.n = pe.n
        self.m = pe.m
        self.N = pe.total
        self.r = face.r
        self.q = face.q
        self.f_sensor = face.sensor_matrix()         # n x q
        self.a = face.anchor                         # m x r
        self.w = pe.w
        self.ebar = self.constants.ebar
        self.pat_u = Pattern(pe.h_u)
        self.pat_l = Pattern(pe.h_l)
        self.ubar_vec = self.pat_u.take(self.constants.ubar)
        self.lbar_vec = self.pat_l.take(self.constants.lbar)
        self.nz_u = self.pat_u.size
        self.nz_l = self.pat_l.size

    # -- dimensions ---------------------------------------------------------

    @property
    def order(self):
        """Order of the cone block (q for quadratic, q + r for linearized)."""
        return self.q if self.kind == "quadratic" else self.q + self.r

    @property
    def num_vars(self):
        base = self.q * self.r + tri_number(self.q) + self.nz_u + self.nz_l
        if self.kind == "linearized":
            base += tri_number(self.q + self.r)
        return base

    @property
    def num_eqs(self):
        base = self.nz_u + self.nz_l + self.order ** 2 + self.q * self.r
        if self.kind == "linearized":
            base += tri_number(self.q)
        return base

    def dims(self):
        return {"n": self.n, "m": self.m, "r": self.r, "q": self.q,
                "t_q": tri_number(self.q), "nz_u": self.nz_u, "nz_l": self.nz_l,
                "num_vars": self.num_vars, "num_eqs": self.num_eqs}

    # -- primal lift --------------------------------------------------------

    def mat_x(self, x):
        return vec_to_mat(x, self.q, self.r)

    def y_lift_x(self, mx):
        """Off-diagonal (anchor, sensor) contribution of the coordinate block."""
        g = self.a @ mx.T @ self.f_sensor.T          # m x n, equals sqrt(2) A X^T
        s = np.zeros((self.N, self.N))
        s[self.n:, :self.n] = g / SQRT2
        s[:self.n, self.n:] = s[self.n:, :self.n].T
        return s

    def y_lift_y(self, yhat):
        """Sensor-block contribution of the Gram variable."""
        s = np.zeros((self.N, self.N))
        s[:self.n, :self.n] = self.f_sensor @ yhat @ self.f_sensor.T
        return s

    def y_lift(self, x, y):
        return self.y_lift_x(self.mat_x(x)) + self.y_lift_y(smat(y))

    def ybar(self, x, y):
        """Full Gram matrix including the fixed anchor block."""
        out = self.y_lift(x, y)
        out[self.n:, self.n:] += self.a @ self.a.T
        return out

    def sensors_from_x(self, x):
        """Sensor coordinate estimates encoded by the variable ``x``."""
        return self.f_sensor @ (self.mat_x(x) / SQRT2)

    def point_from_configuration(self, x_sensors, ridge=0.0):
        """Variables representing a configuration, optionally pushed interior
        by adding ``ridge I`` to the reduced Gram block."""
        x_sensors = np.asarray(x_sensors, dtype=float)
        xhat = self.f_sensor.T @ x_sensors
        yhat = xhat @ xhat.T + ridge * np.eye(self.q)
        return SQRT2 * mat_to_vec(xhat), svec(yhat)

    # -- adjoint primitives -------------------------------------------------

    def adj_x(self, t):
        """Adjoint of ``y_lift_x`` composed with ``mat_x``."""
        return SQRT2 * mat_to_vec(self.f_sensor.T @ t[self.n:, :self.n].T @ self.a)

    def adj_y_mat(self, t):
        """Adjoint of ``y_lift_y`` (matrix-valued)."""
        return self.f_sensor.T @ t[:self.n, :self.n] @ self.f_sensor

    def kadj_x(self, t):
        """Adjoint of ``x -> K(y_lift_x(x))`` applied to a symmetric matrix."""
        return self.adj_x(gram_to_edm_adjoint(t))

    def kadj_y_mat(self, t):
        return self.adj_y_mat(gram_to_edm_adjoint(t))

    # -- objective / slacks -------------------------------------------------

    def k_of_lift(self, x, y):
        return gram_to_edm(self.y_lift(x, y))

    def residual_mat(self, x, y, k_lift=None):
        """Weighted distance residual ``W o K(lift) - Ebar``."""
        if k_lift is None:
            k_lift = self.k_of_lift(x, y)
        return self.w * k_lift - self.ebar

    def objective(self, x, y):
        res = self.residual_mat(x, y)
        return 0.5 * float(np.sum(res * res))

    def slack_vectors(self, k_lift):
        s_u = self.ubar_vec - self.pat_u.take(k_lift)
        s_l = self.pat_l.take(k_lift) - self.lbar_vec
        return s_u, s_l

    def cone_matrix(self, x, y):
        """The PSD slack: ``Y - X X^T`` or the lifted ``Z_s``."""
        mx = self.mat_x(x)
        yhat = smat(y)
        if self.kind == "quadratic":
            return yhat - 0.5 * mx @ mx.T
        return self._zs(mx, yhat)

    def _zs(self, mx, yhat):
        r, q = self.r, self.q
        zs = np.zeros((r + q, r + q))
        zs[:r, :r] = np.eye(r)
        zs[r:, :r] = mx / SQRT2
        zs[:r, r:] = zs[r:, :r].T
        zs[r:, r:] = yhat
        return zs

    def slacks(self, x, y):
        """(s_u, s_l, cone slack) at the primal point."""
        k_lift = self.k_of_lift(x, y)
        s_u, s_l = self.slack_vectors(k_lift)
        return s_u, s_l, self.cone_matrix(x, y)

    # -- dual quantities ----------------------------------------------------

    def multiplier_from_point(self, x, y, lam_u, lam_l):
        """Eliminated cone multiplier of the quadratic formulation.

        Solves the stationarity condition in ``y`` for the multiplier, which
        removes t(q) dual unknowns from the system.
        """
        res = self.residual_mat(x, y)
        t = self.w * res + self.pat_u.embed(lam_u) - self.pat_l.embed(lam_l)
        return self.kadj_y_mat(t)

    def stationarity_x(self, x, y, lam_u, lam_l, lam_mat):
        """Stationarity residual in ``x`` with the cone multiplier supplied."""
        res = self.residual_mat(x, y)
        t = self.w * res + self.pat_u.embed(lam_u) - self.pat_l.embed(lam_l)
        return self.kadj_x(t) + mat_to_vec(lam_mat @ self.mat_x(x))

    def dual_residual_x(self, x, y, lam_u, lam_l):
        """Stationarity residual in ``x`` with the multiplier eliminated."""
        lam_mat = self.multiplier_from_point(x, y, lam_u, lam_l)
        return self.stationarity_x(x, y, lam_u, lam_l, lam_mat)

    # -- point state --------------------------------------------------------

    def state(self, p: PrimalDualPoint):
        """Evaluate and cache everything the residual/Jacobian maps need."""
        mx = self.mat_x(p.x)
        yhat = smat(p.y)
        k_lift = gram_to_edm(self.y_lift_x(mx) + self.y_lift_y(yhat))
        res = self.w * k_lift - self.ebar
        s_u, s_l = self.slack_vectors(k_lift)
        if self.kind == "quadratic":
            lam_mat = self.kadj_y_mat(
                self.w * res + self.pat_u.embed(p.lam_u) - self.pat_l.embed(p.lam_l))
            cone = yhat - 0.5 * mx @ mx.T
        else:
            if p.lam_s is None:
                raise RelaxError("linearized point requires the cone multiplier")
            lam_mat = p.lam_s
            cone = self._zs(mx, yhat)
        return _State(point=p, mx=mx, yhat=yhat, k_lift=k_lift, res=res,
                      s_u=s_u, s_l=s_l, lam_mat=lam_mat, cone=cone)

    def complementarity(self, st):
        """(<lam_u, s_u>, <lam_l, s_l>, <multiplier, cone slack>)."""
        return (
            float(p_dot(st.point.lam_u, st.s_u)),
            float(p_dot(st.point.lam_l, st.s_l)),
            float(np.sum(st.lam_mat * st.cone)),
        )

    def relative_gap(self, st):
        obj = 0.5 * float(np.sum(st.res * st.res))
        return sum(self.complementarity(st)) / (1.0 + abs(obj)), obj

    # -- residual, Jacobian, adjoint ----------------------------------------

    def kkt_residual(self, st, mu):
        """Perturbed complementarity/stationarity residual at a state.

        ``mu`` is the triple of centering targets for the upper-bound,
        lower-bound, and cone blocks.
        """
        mu_u, mu_l, mu_c = mu
        p = st.point
        ru = p.lam_u * st.s_u - mu_u
        rl = p.lam_l * st.s_l - mu_l
        rc = st.lam_mat @ st.cone - mu_c * np.eye(self.order)
        t = self.w * st.res + self.pat_u.embed(p.lam_u) - self.pat_l.embed(p.lam_l)
        rs = self.kadj_x(t)
        if self.kind == "quadratic":
            rs = rs + mat_to_vec(st.lam_mat @ st.mx)
            ry = np.zeros(0)
        else:
            rs = rs - SQRT2 * mat_to_vec(st.lam_mat[self.r:, :self.r])
            ry = svec(self.kadj_y_mat(t) - st.lam_mat[self.r:, self.r:])
        return KktResidual(ru=ru, rl=rl, rc=rc, rs=rs, ry=ry)

    def kkt_residual_at(self, p: PrimalDualPoint, mu):
        return self.kkt_residual(self.state(p), mu)

    def apply_jacobian(self, st, d: Direction):
        """Directional derivative of the residual at a state."""
        p = st.point
        dmx = vec_to_mat(d.dx, self.q, self.r)
        dyhat = smat(d.dy)
        k_lift_d = gram_to_edm(self.y_lift_x(dmx) + self.y_lift_y(dyhat))
        dres = self.w * k_lift_d
        ds_u = -self.pat_u.take(k_lift_d)
        ds_l = self.pat_l.take(k_lift_d)
        ru = p.lam_u * ds_u + st.s_u * d.dlam_u
        rl = p.lam_l * ds_l + st.s_l * d.dlam_l

        dt = self.w * dres + self.pat_u.embed(d.dlam_u) - self.pat_l.embed(d.dlam_l)
        rs = self.kadj_x(dt)
        if self.kind == "quadratic":
            dlam_mat = self.kadj_y_mat(dt)
            dcone = dyhat - 0.5 * (st.mx @ dmx.T + dmx @ st.mx.T)
            rc = st.lam_mat @ dcone + dlam_mat @ st.cone
            rs = rs + mat_to_vec(dlam_mat @ st.mx) + mat_to_vec(st.lam_mat @ dmx)
            ry = np.zeros(0)
        else:
            dlam_mat = d.dlam_s
            dcone = np.zeros_like(st.cone)
            dcone[self.r:, :self.r] = dmx / SQRT2
            dcone[:self.r, self.r:] = dcone[self.r:, :self.r].T
            dcone[self.r:, self.r:] = dyhat
            rc = st.lam_mat @ dcone + dlam_mat @ st.cone
            rs = rs - SQRT2 * mat_to_vec(dlam_mat[self.r:, :self.r])
            ry = svec(self.kadj_y_mat(dt) - dlam_mat[self.r:, self.r:])
        return KktResidual(ru=ru, rl=rl, rc=rc, rs=rs, ry=ry)

    def apply_jacobian_adjoint(self, st, w: KktResidual):
        """Exact adjoint of :meth:`apply_jacobian` (same inner products)."""
        p = st.point
        r, q = self.r, self.q
        w3 = w.rc

        e1 = self.pat_u.embed(-p.lam_u * w.ru)
        e2 = self.pat_l.embed(p.lam_l * w.rl)
        ke1 = gram_to_edm_adjoint(e1)
        ke2 = gram_to_edm_adjoint(e2)
        gx = self.adj_x(ke1) + self.adj_x(ke2)
        gy_mat = self.adj_y_mat(ke1) + self.adj_y_mat(ke2)
        gu = st.s_u * w.ru
        gl = st.s_l * w.rl

        s3 = 0.5 * (st.lam_mat @ w3 + w3.T @ st.lam_mat)
        sz = 0.5 * (w3 @ st.cone + st.cone @ w3.T)

        if self.kind == "quadratic":
            mw4 = vec_to_mat(w.rs, q, self.r)
            sx = 0.5 * (mw4 @ st.mx.T + st.mx @ mw4.T)
            t_y = sz + sx
            g_t = gram_to_edm(self.y_lift_y(t_y))
            g_x4 = gram_to_edm(self.y_lift_x(mw4))
            for g in (g_t, g_x4):
                kg = gram_to_edm_adjoint(self.w * (self.w * g))
                gx = gx + self.adj_x(kg)
                gy_mat = gy_mat + self.adj_y_mat(kg)
            gx = gx - mat_to_vec(s3 @ st.mx) + mat_to_vec(st.lam_mat @ mw4)
            gy_mat = gy_mat + s3
            gu = gu + self.pat_u.take(g_t) + self.pat_u.take(g_x4)
            gl = gl - self.pat_l.take(g_t) - self.pat_l.take(g_x4)
            return Direction(dx=gx, dy=svec(gy_mat), dlam_u=gu, dlam_l=gl)

        # linearized: extra stationarity images w.ry (y) and cone multiplier slot
        mw4 = vec_to_mat(w.rs, q, self.r)
        t_y = smat(w.ry)
        g_t = gram_to_edm(self.y_lift_y(t_y))
        g_x4 = gram_to_edm(self.y_lift_x(mw4))
        for g in (g_t, g_x4):
            kg = gram_to_edm_adjoint(self.w * (self.w * g))
            gx = gx + self.adj_x(kg)
            gy_mat = gy_mat + self.adj_y_mat(kg)
        gu = gu + self.pat_u.take(g_t) + self.pat_u.take(g_x4)
        gl = gl - self.pat_l.take(g_t) - self.pat_l.take(g_x4)

        # cone block through the lifted slack
        gx = gx + SQRT2 * mat_to_vec(s3[r:, :r])
        gy_mat = gy_mat + s3[r:, r:]

        glam = 0.5 * (w3 @ st.cone + st.cone @ w3.T)
        glam = np.array(glam)
        glam[r:, :r] -= mw4 / SQRT2
        glam[:r, r:] -= mw4.T / SQRT2
        glam[r:, r:] -= t_y
        glam = 0.5 * (glam + glam.T)
        return Direction(dx=gx, dy=svec(gy_mat), dlam_u=gu, dlam_l=gl,
                         dlam_s=glam)

    # -- vector packing (for the least-squares solver) ------------------------

    def pack_direction(self, d: Direction):
        parts = [d.dx, d.dy, d.dlam_u, d.dlam_l]
        if self.kind == "linearized":
            parts.append(svec(d.dlam_s))
        return np.concatenate(parts)

    def unpack_direction(self, v):
        q, r = self.q, self.r
        sizes = [q * r, tri_number(q), self.nz_u, self.nz_l]
        if self.kind == "linearized":
            sizes.append(tri_number(q + r))
        offs = np.concatenate(([0], np.cumsum(sizes)))
        parts = [v[offs[i]:offs[i + 1]] for i in range(len(sizes))]
        dlam_s = smat(parts[4]) if self.kind == "linearized" else None
        return Direction(dx=parts[0], dy=parts[1], dlam_u=parts[2],
                         dlam_l=parts[3], dlam_s=dlam_s)

    def unpack_residual(self, v):
        k = self.order
        sizes = [self.nz_u, self.nz_l, k * k, self.q * self.r]
        if self.kind == "linearized":
            sizes.append(tri_number(self.q))
        offs = np.concatenate(([0], np.cumsum(sizes)))
        parts = [v[offs[i]:offs[i + 1]] for i in range(len(sizes))]
        ry = parts[4] if self.kind == "linearized" else np.zeros(0)
        return KktResidual(ru=parts[0], rl=parts[1],
                           rc=vec_to_mat(parts[2], k, k), rs=parts[3], ry=ry)

    def step(self, p: PrimalDualPoint, d: Direction, alpha):
        new = PrimalDualPoint(
            x=p.x + alpha * d.dx,
            y=p.y + alpha * d.dy,
            lam_u=p.lam_u + alpha * d.dlam_u,
            lam_l=p.lam_l + alpha * d.dlam_l,
            lam_s=None if p.lam_s is None else p.lam_s + alpha * d.dlam_s,
        )
        return new

    def data_norm(self):
        return float(np.linalg.norm(self.ebar)
                     + np.linalg.norm(self.ubar_vec)
                     + np.linalg.norm(self.lbar_vec))


@dataclass
class _State:
    point: PrimalDualPoint
    mx: np.ndarray
    yhat: np.ndarray
    k_lift: np.ndarray
    res: np.ndarray
    s_u: np.ndarray
    s_l: np.ndarray
    lam_mat: np.ndarray
    cone: np.ndarray


def p_dot(a, b):
    return np.dot(a, b) if a.size else 0.0


def recover_sensors_from_gram(ybar, a, tol=1e-8):
    """Solve ``A X^T = Ybar_21`` for the sensor coordinates.

    The system is consistent whenever ``Ybar`` is feasible with anchor block
    ``A A^T``; the returned relative residual reports any inconsistency.
    """
    ybar = np.asarray(ybar, dtype=float)
    a = np.asarray(a, dtype=float)
    m = a.shape[0]
    n = ybar.shape[0] - m
    y21 = ybar[n:, :n]
    xt = np.linalg.solve(a.T @ a, a.T @ y21)
    residual = float(np.linalg.norm(a @ xt - y21))
    rel = residual / max(tol, float(np.linalg.norm(y21)))
    return xt.T, rel
