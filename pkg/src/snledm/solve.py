"""Gauss-Newton primal-dual path following for the relaxation formulations.

Each iteration linearizes the perturbed optimality system and takes the
least-squares (Gauss-Newton) direction of the overdetermined linear system,
damped by a fraction-to-boundary rule that keeps the bound slacks and the
cone slack strictly interior.  Centering targets are a fixed fraction of the
current per-block average complementarity; once the relative duality gap is
small the solver crosses over to pure affine steps (zero targets, no
damping beyond the boundary rule).

The eliminated cone multiplier of the quadratic formulation is a derived
quantity and may start or travel outside the PSD cone; only the slack
blocks are forced interior, with the boundary rule applied to the
multiplier once it becomes definite.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lsmr

from .operators import smat, svec
from .relax import Direction, Formulation, PrimalDualPoint


class SolveError(RuntimeError):
    """Solver could not produce a usable iterate."""


@dataclass
class SolverConfig:
    gap_tol: float = 1e-10          # relative duality-gap stopping tolerance
    max_iter: int = 200
    sigma: float = 0.25             # centering fraction
    ftb: float = 0.95               # fraction-to-boundary factor
    # relative gap triggering the affine crossover; late enough that the
    # nonlinear cone slack of the quadratic formulation cannot be driven
    # through the boundary from a poorly centered iterate
    crossover_gap: float = 1e-6
    ls_tol: float = 1e-8            # inner least-squares tolerance
    dense_limit: int = 60           # n + m above which the iterative path is used

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if not 0 < self.ftb < 1:
            raise ValueError("ftb must lie in (0, 1)")
        if self.gap_tol <= 0 or self.crossover_gap <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    relgap: float
    norm_fu: float
    norm_fl: float
    norm_fc: float
    norm_fs: float
    alpha: float
    mu: float
    mode: str


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)

    COLUMNS = ("iter", "objective", "relgap", "normFu", "normFl", "normFc",
               "normFs", "alpha", "mu", "mode")

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def rows(self):
        for r in self.records:
            yield (r.iteration, r.objective, r.relgap, r.norm_fu, r.norm_fl,
                   r.norm_fc, r.norm_fs, r.alpha, r.mu, r.mode)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows():
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


@dataclass
class SolveResult:
    point: PrimalDualPoint
    trace: IterationTrace
    status: str                      # converged | maxIter | numericalFailure
    certificate: dict
    exterior_start: bool = False


# ---------------------------------------------------------------------------
# Starting point
# ---------------------------------------------------------------------------

def _beta_window(f: Formulation):
    """Admissible range for the Gram-scale beta so all bound slacks start
    strictly positive at x = 0, Y = beta I."""
    coeff = f.k_of_lift(np.zeros(f.q * f.r), svec(np.eye(f.q)))
    cu = f.pat_u.take(coeff)
    cl = f.pat_l.take(coeff)
    hi = np.inf
    lo = 0.0
    if cu.size:
        if np.any((cu <= 0) & (f.ubar_vec <= 0)):
            raise SolveError("contradictory bounds: no strictly feasible start "
                             "for an upper-bound entry")
        pos = cu > 0
        if np.any(pos):
            hi = float(np.min(f.ubar_vec[pos] / cu[pos]))
    if cl.size:
        if np.any((cl <= 0) & (f.lbar_vec >= 0)):
            raise SolveError("contradictory bounds: no strictly feasible start "
                             "for a lower-bound entry")
        pos = cl > 0
        if np.any(pos):
            lo = max(lo, float(np.max(f.lbar_vec[pos] / cl[pos])))
    if lo >= hi:
        raise SolveError(f"contradictory bounds: empty feasible window "
                         f"[{lo:.3e}, {hi:.3e}] for the starting scale")
    return lo, hi


def init_feasible(f: Formulation):
    """Strictly feasible start: x = 0, Y = beta I, unit bound multipliers.

    beta is chosen so every bound slack is positive, then increased while
    the eliminated multiplier of the quadratic formulation is not yet
    positive definite.  If no beta in the admissible window makes it
    definite, the solve starts exterior (multiplier outside the cone) and
    only the slack blocks are kept interior.
    """
    lo, hi = _beta_window(f)
    base = 2.0 * (1.0 + float(np.max(f.pe.e)))
    beta = min(max(base, lo * 1.01 if lo > 0 else base), hi * 0.99 if np.isfinite(hi) else base)
    if not lo < beta < hi:
        beta = np.sqrt(max(lo, 1e-8) * hi) if np.isfinite(hi) else max(base, 2.0 * lo)

    x0 = np.zeros(f.q * f.r)
    lam_u = np.ones(f.nz_u)
    lam_l = np.ones(f.nz_l)
    exterior = False

    if f.kind == "quadratic":
        chosen = None
        for _ in range(24):
            y0 = svec(beta * np.eye(f.q))
            lam = f.multiplier_from_point(x0, y0, lam_u, lam_l)
            if np.linalg.eigvalsh(lam)[0] > 0:
                chosen = y0
                break
            if 2.0 * beta >= hi:
                break
            beta *= 2.0
        if chosen is None:
            chosen = svec(beta * np.eye(f.q))
            exterior = True
        return PrimalDualPoint(x=x0, y=chosen, lam_u=lam_u, lam_l=lam_l), exterior

    y0 = svec(beta * np.eye(f.q))
    # scale the cone multiplier so the initial complementarity is comparable
    # to the objective, keeping the start on the central-path scale
    rho = max(1.0, f.objective(x0, y0) / (beta * (f.q + f.r)))
    lam_s = rho * np.eye(f.q + f.r)
    lam_s[:f.r, :f.r] *= beta
    return PrimalDualPoint(x=x0, y=y0, lam_u=lam_u, lam_l=lam_l, lam_s=lam_s), exterior


# ---------------------------------------------------------------------------
# Step length
# ---------------------------------------------------------------------------

def _vector_ratio(v, dv, ftb):
    """Largest alpha with v + alpha dv >= (1 - ftb) v for positive v."""
    if v.size == 0:
        return np.inf
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(ftb * v[neg] / (-dv[neg])))


def _matrix_ratio(z, dz, ftb):
    """Largest alpha with lambda_min(z + alpha dz) >= (1 - ftb) lambda_min(z)."""
    lam_min = float(np.linalg.eigvalsh(z)[0])
    if lam_min <= 0:
        return np.inf                      # block not interior: rule off
    c = z - (1.0 - ftb) * lam_min * np.eye(z.shape[0])
    try:
        vals = scipy.linalg.eigh(dz, c, eigvals_only=True)
        lo = float(vals[0])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return _matrix_ratio_bisect(c, dz)
    if lo >= 0:
        return np.inf
    return -1.0 / lo


def _matrix_ratio_bisect(c, dz, iters=60):
    hi = 1.0
    if np.linalg.eigvalsh(c + hi * dz)[0] >= 0:
        return np.inf
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.linalg.eigvalsh(c + mid * dz)[0] >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def step_length(f: Formulation, st, d: Direction, ftb):
    """Fraction-to-boundary step: keep bound slacks, their multipliers, and
    the cone slack strictly interior; also damp on the cone multiplier when
    it is currently definite."""
    p = st.point
    k_lift_d = f.k_of_lift(d.dx, d.dy)
    ds_u = -f.pat_u.take(k_lift_d)
    ds_l = f.pat_l.take(k_lift_d)

    alpha = min(
        1.0,
        _vector_ratio(st.s_u, ds_u, ftb),
        _vector_ratio(st.s_l, ds_l, ftb),
        _vector_ratio(p.lam_u, d.dlam_u, ftb),
        _vector_ratio(p.lam_l, d.dlam_l, ftb),
    )

    dmx = f.mat_x(d.dx)
    dyhat = smat(d.dy)
    if f.kind == "quadratic":
        dcone = dyhat - 0.5 * (st.mx @ dmx.T + dmx @ st.mx.T)
        dlam = f.kadj_y_mat(f.w * (f.w * k_lift_d)
                            + f.pat_u.embed(d.dlam_u) - f.pat_l.embed(d.dlam_l))
    else:
        dcone = np.zeros_like(st.cone)
        dcone[f.r:, :f.r] = dmx / np.sqrt(2.0)
        dcone[:f.r, f.r:] = dcone[f.r:, :f.r].T
        dcone[f.r:, f.r:] = dyhat
        dlam = d.dlam_s
    alpha = min(alpha, _matrix_ratio(st.cone, dcone, ftb))
    alpha = min(alpha, _matrix_ratio(st.lam_mat, dlam, ftb))

    if f.kind == "quadratic" and np.isfinite(alpha):
        # the true slack is quadratic in x, so the linearized ratio test can
        # overshoot; enforce the boundary rule on the actual slack
        floor = (1.0 - ftb) * float(np.linalg.eigvalsh(st.cone)[0])
        for _ in range(40):
            trial = f.cone_matrix(st.point.x + alpha * d.dx,
                                  st.point.y + alpha * d.dy)
            if float(np.linalg.eigvalsh(trial)[0]) >= floor:
                break
            alpha *= 0.5
    return alpha


# ---------------------------------------------------------------------------
# Gauss-Newton direction
# ---------------------------------------------------------------------------

def _materialize_jacobian(f: Formulation, st):
    nv = f.num_vars
    cols = np.empty((f.num_eqs, nv))
    basis = np.zeros(nv)
    for i in range(nv):
        basis[i] = 1.0
        cols[:, i] = f.apply_jacobian(st, f.unpack_direction(basis)).vector()
        basis[i] = 0.0
    return cols


def least_squares_min_norm(jac, rhs, rcond=None):
    """Minimum-norm least-squares solution with rank diagnostics."""
    sol, _, rank, singulars = np.linalg.lstsq(jac, rhs, rcond=rcond)
    return sol, rank, singulars


def gauss_newton_step(f: Formulation, st, mu, cfg: SolverConfig):
    """Direction minimizing the linearized residual norm.

    Dense orthogonal factorization at desk scale; an unpreconditioned
    LSMR on the operator actions above ``cfg.dense_limit``.  The adjoint
    action certifies the normal-equations residual of the computed step.
    """
    resid = f.kkt_residual(st, mu)
    rhs = -resid.vector()
    info = {}
    if f.N <= cfg.dense_limit:
        jac = _materialize_jacobian(f, st)
        sol, rank, singulars = least_squares_min_norm(jac, rhs)
        info["rank"] = int(rank)
        if rank < f.num_vars and singulars.size:
            info["smallest_singular_value"] = float(singulars.min())
    else:
        op = LinearOperator(
            shape=(f.num_eqs, f.num_vars),
            matvec=lambda v: f.apply_jacobian(st, f.unpack_direction(v)).vector(),
            rmatvec=lambda u: f.pack_direction(
                f.apply_jacobian_adjoint(st, f.unpack_residual(u))),
        )
        out = lsmr(op, rhs, atol=cfg.ls_tol, btol=cfg.ls_tol,
                   maxiter=10 * f.num_vars)
        sol = out[0]
        info["lsmr_istop"] = int(out[1])

    d = f.unpack_direction(sol)
    # certify the normal equations through the adjoint action
    lin = f.apply_jacobian(st, d)
    ne_resid = f.pack_direction(f.apply_jacobian_adjoint(
        st, f.unpack_residual(lin.vector() - rhs)))
    ne_ref = f.pack_direction(f.apply_jacobian_adjoint(st, resid))
    denom = max(float(np.linalg.norm(ne_ref)), 1e-300)
    info["normal_eq_rel_residual"] = float(np.linalg.norm(ne_resid)) / denom
    info["residual"] = resid
    return d, info


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

def _mu_targets(f: Formulation, comps, sigma, mu_prev):
    cu, cl, cc = comps
    mu_u = sigma * cu / f.nz_u if f.nz_u else 0.0
    mu_l = sigma * cl / f.nz_l if f.nz_l else 0.0
    mu_c = sigma * cc / f.order if cc > 0 else sigma * mu_prev
    return mu_u, mu_l, mu_c


def relative_gap(f: Formulation, p: PrimalDualPoint):
    """Aggregate complementarity over 1 + |objective|."""
    gap, _ = f.relative_gap(f.state(p))
    return gap


def certificate(f: Formulation, p: PrimalDualPoint):
    """Unperturbed residual norm and cone/sign margins at a point."""
    st = f.state(p)
    f0 = f.kkt_residual(st, (0.0, 0.0, 0.0))
    gap, obj = f.relative_gap(st)
    lam_min_cone = float(np.linalg.eigvalsh(st.cone)[0])
    lam_min_mult = float(np.linalg.eigvalsh(st.lam_mat)[0])
    return {
        "objective": obj,
        "relgap": gap,
        "norm_f0": f0.norm(),
        "block_norms_f0": f0.block_norms(),
        "data_norm": f.data_norm(),
        "min_slack_u": float(st.s_u.min()) if st.s_u.size else np.inf,
        "min_slack_l": float(st.s_l.min()) if st.s_l.size else np.inf,
        "min_lam_u": float(p.lam_u.min()) if p.lam_u.size else np.inf,
        "min_lam_l": float(p.lam_l.min()) if p.lam_l.size else np.inf,
        "lam_min_cone": lam_min_cone,
        "lam_min_multiplier": lam_min_mult,
    }


def solve(f: Formulation, cfg: SolverConfig | None = None) -> SolveResult:
    """Path-following loop with affine-scaling crossover.

    Stops when the relative duality gap falls below ``cfg.gap_tol`` (status
    ``converged``), the iteration budget runs out (``maxIter``), or the
    iterate degenerates (``numericalFailure``).
    """
    cfg = cfg or SolverConfig()
    point, exterior = init_feasible(f)
    trace = IterationTrace()
    status = "maxIter"
    affine = False
    mu_prev = 1.0
    stalls = 0

    for it in range(cfg.max_iter + 1):
        st = f.state(point)
        gap, obj = f.relative_gap(st)
        comps = f.complementarity(st)

        if not np.isfinite(gap) or not np.isfinite(obj):
            status = "numericalFailure"
            trace.append(TraceRecord(it, obj, gap, *(np.nan,) * 4, 0.0,
                                     0.0, "affine" if affine else "centering"))
            break

        if abs(gap) <= cfg.gap_tol:
            f0 = f.kkt_residual(st, (0.0, 0.0, 0.0))
            trace.append(TraceRecord(it, obj, gap, *f0.block_norms(), 0.0,
                                     0.0, "affine" if affine else "centering"))
            status = "converged"
            break
        if it == cfg.max_iter:
            break

        if not affine and abs(gap) < cfg.crossover_gap:
            affine = True
        if affine:
            mu = (0.0, 0.0, 0.0)
        else:
            mu = _mu_targets(f, comps, cfg.sigma, mu_prev)
            mu_prev = mu[2] / cfg.sigma if mu[2] > 0 else mu_prev

        try:
            d, info = gauss_newton_step(f, st, mu, cfg)
        except np.linalg.LinAlgError as exc:
            raise SolveError(f"least-squares step failed: {exc}") from exc
        if not np.isfinite(f.pack_direction(d)).all():
            status = "numericalFailure"
            break

        alpha = step_length(f, st, d, cfg.ftb)
        trace.append(TraceRecord(it, obj, gap, *info["residual"].block_norms(),
                                 alpha, mu[2], "affine" if affine else "centering"))
        if alpha <= 1e-12:
            stalls += 1
            if stalls >= 3:
                status = "numericalFailure"
                break
        else:
            stalls = 0
        point = f.step(point, d, alpha)

    cert = certificate(f, point)
    return SolveResult(point=point, trace=trace, status=status,
                       certificate=cert, exterior_start=exterior)
