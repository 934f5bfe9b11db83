"""Primal-dual interior-point solver for convex quadratic cone programs.

Programs have the shape

    minimize    0.5 x' Q x + c' x + const
    subject to  a_i' x <= b_i                      (structural rows, bounds)
                g_r' x >= d_r                      (linear goal rows)
                m_j' x_j - u_j ||L_j' x_j|| >= h_j (second-order cones, u_j > 0)

where x_j is the sub-vector of a cone's variables. Goal rows and cones are
the "goal-type" constraints: when the start point violates them (or holds
them with margin below 1) a single big-M slack variable s >= 0 relaxes all
of them at once and is driven to zero by a penalty term, so the iteration
always starts strictly feasible.

The method follows the classic generalized-logarithm-barrier scheme: the
modified KKT conditions perturb each complementarity product to 1/t, with
second-order-cone complementarity written through the Jordan (arrow) product
of the cone point and its dual equalling (1/t) e. The Newton system is
reduced so only one system in the primal step is solved per iteration; the
dual steps have closed forms. A single step length keeps every primal and
dual block strictly feasible. The path parameter t is set to a multiple of
the reciprocal of the largest complementarity product, and the iteration
stops when the maximum modified-KKT error drops below epsilon_rel times the
current objective magnitude (with a small absolute floor for zero-objective
optima).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics
from .errors import InvalidInputError, SingularSystemError
from .model import Instance, campaign_members, campaign_slices

__all__ = [
    "SocConstraint",
    "ConeProgram",
    "IpmSettings",
    "IpmResult",
    "solve",
    "initial_point",
    "kkt_residual",
    "compiled_rows",
    "allocation_seed_vector",
    "required_big_m_slack",
]

_SLACK_FEASIBLE_TOL = 1e-6
_FEASIBILITY_TOL = 1e-8
_STALL_WINDOW = 20
_MIN_STEP = 1e-13
_ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class SocConstraint:
    """mean' x_sub - scale * ||factor' x_sub|| >= threshold over var_idx."""

    var_idx: np.ndarray
    mean: np.ndarray
    factor: np.ndarray | None
    scale: float
    threshold: float

    def __post_init__(self) -> None:
        idx = np.asarray(self.var_idx, dtype=int)
        mean = np.asarray(self.mean, dtype=float)
        if idx.ndim != 1 or mean.shape != idx.shape:
            raise InvalidInputError("cone index and mean vectors must be 1-D and aligned")
        if self.scale < 0.0:
            raise InvalidInputError(f"cone scale must be non-negative, got {self.scale}")
        factor = self.factor
        if self.scale > 0.0:
            if factor is None:
                raise InvalidInputError("a cone with positive scale needs a factor matrix")
            factor = np.asarray(factor, dtype=float)
            if factor.shape != (idx.size, idx.size):
                raise InvalidInputError(
                    f"factor shape {factor.shape} incompatible with {idx.size} cone variables"
                )
        object.__setattr__(self, "var_idx", idx)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "factor", factor)


@dataclass(frozen=True)
class ConeProgram:
    """Immutable compiled program; use ConeProgram.build to construct."""

    num_vars: int
    quad: np.ndarray
    lin: np.ndarray
    const: float
    ineq_coeffs: np.ndarray   # (m, n): a' x <= b
    ineq_bounds: np.ndarray
    goal_coeffs: np.ndarray   # (r, n): g' x >= d, big-M aided
    goal_bounds: np.ndarray
    socs: tuple[SocConstraint, ...]
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(
        cls,
        num_vars: int,
        quad: np.ndarray | None = None,
        lin: np.ndarray | None = None,
        const: float = 0.0,
        ineqs: Sequence[tuple[np.ndarray, float]] = (),
        socs: Sequence[SocConstraint] = (),
        goal_ineqs: tuple[np.ndarray, np.ndarray] | None = None,
        lower: np.ndarray | None = None,
        upper: np.ndarray | None = None,
    ) -> "ConeProgram":
        n = int(num_vars)
        if n < 1:
            raise InvalidInputError("num_vars must be positive")
        quad_m = np.zeros((n, n)) if quad is None else np.asarray(quad, dtype=float)
        if quad_m.shape != (n, n):
            raise InvalidInputError(f"quad shape {quad_m.shape} != ({n}, {n})")
        if float(np.max(np.abs(quad_m - quad_m.T))) > 1e-12 * (1.0 + float(np.max(np.abs(quad_m)))):
            raise InvalidInputError("quadratic form must be symmetric")
        lin_v = np.zeros(n) if lin is None else np.asarray(lin, dtype=float)
        if lin_v.shape != (n,):
            raise InvalidInputError(f"lin shape {lin_v.shape} != ({n},)")
        if ineqs:
            a = np.asarray([np.asarray(row, dtype=float) for row, _ in ineqs])
            b = np.asarray([float(rhs) for _, rhs in ineqs])
            if a.shape[1] != n:
                raise InvalidInputError(f"inequality rows have {a.shape[1]} coefficients, expected {n}")
        else:
            a = np.zeros((0, n))
            b = np.zeros(0)
        # A cone with zero scale is a plain linear goal row.
        goal_rows: list[np.ndarray] = []
        goal_rhs: list[float] = []
        cone_list: list[SocConstraint] = []
        for soc in socs:
            if soc.scale == 0.0:
                row = np.zeros(n)
                row[soc.var_idx] = soc.mean
                goal_rows.append(row)
                goal_rhs.append(float(soc.threshold))
            else:
                cone_list.append(soc)
        g = np.asarray(goal_rows) if goal_rows else np.zeros((0, n))
        d = np.asarray(goal_rhs) if goal_rhs else np.zeros(0)
        if goal_ineqs is not None:
            g_extra = np.asarray(goal_ineqs[0], dtype=float).reshape(-1, n)
            d_extra = np.asarray(goal_ineqs[1], dtype=float).reshape(-1)
            if g_extra.shape[0] != d_extra.shape[0]:
                raise InvalidInputError("goal_ineqs matrix and rhs lengths differ")
            g = np.vstack([g, g_extra]) if g.size else g_extra
            d = np.concatenate([d, d_extra]) if d.size else d_extra
        lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        hi = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
        if lo.shape != (n,) or hi.shape != (n,):
            raise InvalidInputError("bounds must have one entry per variable")
        if np.any(lo >= hi):
            raise InvalidInputError("every lower bound must be strictly below its upper bound")
        return cls(
            num_vars=n, quad=quad_m, lin=lin_v, const=float(const),
            ineq_coeffs=a, ineq_bounds=b, goal_coeffs=g, goal_bounds=d,
            socs=tuple(cone_list), lower=lo, upper=hi,
        )

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quad @ x + self.lin @ x + self.const)


@dataclass(frozen=True)
class IpmSettings:
    epsilon_rel: float = 1e-9
    t_multiplier: float = 10.0
    max_iters: int = 200
    boundary_fraction: float = 0.99
    big_m: float = 1e7

    def __post_init__(self) -> None:
        if min(self.epsilon_rel, self.t_multiplier, self.boundary_fraction, self.big_m) <= 0:
            raise InvalidInputError("all interior-point settings must be positive")
        if self.max_iters <= 0:
            raise InvalidInputError("max_iters must be positive")
        if self.boundary_fraction >= 1.0:
            raise InvalidInputError("boundary_fraction must be below 1")


@dataclass(frozen=True)
class IpmResult:
    status: str  # optimal | infeasible | iteration_limit | numerical_failure
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    lin_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    soc_duals: tuple[np.ndarray, ...] = ()
    slack: float = 0.0
    t: float = 1.0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# Jordan (arrow) algebra helpers for second-order cones
# ---------------------------------------------------------------------------

def _arrow_product(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    out[0] = u @ v
    out[1:] = u[0] * v[1:] + v[0] * u[1:]
    return out


def _arrow_solve(z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve Arw(z) y = r for one vector or column-stacked matrix r."""
    z0 = z[0]
    zb = z[1:]
    det = z0 * z0 - zb @ zb
    if det <= 0.0 or z0 <= 0.0:
        raise SingularSystemError("arrow matrix is singular: point is not interior to its cone")
    if r.ndim == 1:
        y = np.empty_like(r)
        y[0] = (z0 * r[0] - zb @ r[1:]) / det
        y[1:] = (-r[0] * zb + (det * r[1:] + zb * (zb @ r[1:])) / z0) / det
        return y
    y = np.empty_like(r)
    y[0] = (z0 * r[0] - zb @ r[1:]) / det
    y[1:] = (-np.outer(zb, r[0]) + (det * r[1:] + np.outer(zb, zb @ r[1:])) / z0) / det
    return y


def _interior(z: np.ndarray) -> bool:
    return z[0] > 0.0 and z[0] * z[0] - float(z[1:] @ z[1:]) > 0.0


def _cone_boundary_step(z: np.ndarray, dz: np.ndarray) -> float:
    """Largest step keeping z + step * dz in the open second-order cone."""
    zb = z[1:]
    db = dz[1:]
    c0 = z[0] * z[0] - float(zb @ zb)
    b = 2.0 * (z[0] * dz[0] - float(zb @ db))
    a = dz[0] * dz[0] - float(db @ db)
    best = math.inf
    if a == 0.0:
        if b < 0.0:
            best = -c0 / b
    else:
        disc = b * b - 4.0 * a * c0
        if disc >= 0.0:
            sq = math.sqrt(disc)
            q = -0.5 * (b + math.copysign(sq, b)) if b != 0.0 else 0.5 * sq * (1 if a > 0 else -1)
            roots = []
            if q != 0.0:
                roots.extend((q / a, c0 / q))
            else:
                roots.append(0.0)
            pos = [r for r in roots if r > 0.0]
            if pos:
                best = min(pos)
    return best


def _positivity_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0.0
    if not np.any(neg):
        return math.inf
    return float(np.min(v[neg] / -dv[neg]))


# ---------------------------------------------------------------------------
# Row assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Rows:
    coeffs: np.ndarray      # (m, n) rows a' x <= b over the x variables only
    bounds: np.ndarray
    goal_mask: np.ndarray   # True for rows that the big-M slack relaxes
    cone_maps: tuple[tuple[np.ndarray, np.ndarray], ...]  # (G_j, offset_j): z_j = G_j x + offset_j


def _assemble(prog: ConeProgram) -> _Rows:
    n = prog.num_vars
    rows = [prog.ineq_coeffs]
    rhs = [prog.ineq_bounds]
    flags = [np.zeros(prog.ineq_coeffs.shape[0], dtype=bool)]
    bound_rows = []
    bound_rhs = []
    for i in range(n):
        if np.isfinite(prog.lower[i]):
            row = np.zeros(n)
            row[i] = -1.0
            bound_rows.append(row)
            bound_rhs.append(-prog.lower[i])
        if np.isfinite(prog.upper[i]):
            row = np.zeros(n)
            row[i] = 1.0
            bound_rows.append(row)
            bound_rhs.append(prog.upper[i])
    if bound_rows:
        rows.append(np.asarray(bound_rows))
        rhs.append(np.asarray(bound_rhs))
        flags.append(np.zeros(len(bound_rows), dtype=bool))
    if prog.goal_coeffs.shape[0]:
        rows.append(-prog.goal_coeffs)
        rhs.append(-prog.goal_bounds)
        flags.append(np.ones(prog.goal_coeffs.shape[0], dtype=bool))
    coeffs = np.vstack(rows) if rows else np.zeros((0, n))
    maps = []
    for soc in prog.socs:
        dim = soc.var_idx.size
        g = np.zeros((dim + 1, n))
        g[0, soc.var_idx] = soc.mean / soc.scale
        g[1:, soc.var_idx] = soc.factor.T
        offset = np.zeros(dim + 1)
        offset[0] = -soc.threshold / soc.scale
        maps.append((g, offset))
    return _Rows(
        coeffs=coeffs,
        bounds=np.concatenate(rhs) if rhs else np.zeros(0),
        goal_mask=np.concatenate(flags) if flags else np.zeros(0, dtype=bool),
        cone_maps=tuple(maps),
    )


def compiled_rows(prog: ConeProgram) -> tuple[np.ndarray, np.ndarray]:
    """All linear rows as a' x <= b: structural, bounds, then goal rows.

    This fixes the layout of IpmResult.lin_duals and the duals accepted by
    kkt_residual.
    """
    rows = _assemble(prog)
    return rows.coeffs, rows.bounds


def required_big_m_slack(prog: ConeProgram, x0: np.ndarray) -> float:
    """Smallest s >= 0 giving every goal-type constraint margin 1 at x0."""
    x0 = np.asarray(x0, dtype=float)
    worst = -math.inf
    if prog.goal_coeffs.shape[0]:
        worst = max(worst, float(np.max(prog.goal_bounds - prog.goal_coeffs @ x0)))
    for soc in prog.socs:
        sub = x0[soc.var_idx]
        lhs = float(soc.mean @ sub) - soc.scale * float(np.linalg.norm(soc.factor.T @ sub))
        worst = max(worst, soc.threshold - lhs)
    if worst == -math.inf:
        return 0.0
    return max(0.0, worst + 1.0)


def allocation_seed_vector(instance: Instance) -> np.ndarray:
    """Start allocation: goal-proportional spread, rescaled into the budget.

    Sets p_vk = g_k / (total expected supply targeted by k), then divides
    each viewer type's column by max(1, column sum + 1e-6) so the supply
    budget holds strictly.
    """
    members = campaign_members(instance)
    slices = campaign_slices(instance)
    x0 = np.zeros(instance.decision_count)
    for k, mem in enumerate(members):
        total = float(instance.mu[mem].sum())
        x0[slices[k]] = instance.goals[k] / total
    col_sums = np.zeros(instance.num_viewer_types)
    for k, mem in enumerate(members):
        col_sums[mem] += x0[slices[k]]
    scale = 1.0 / np.maximum(1.0, col_sums + 1e-6)
    for k, mem in enumerate(members):
        x0[slices[k]] *= scale[mem]
    return x0


def initial_point(prog: ConeProgram, instance_context: Instance) -> tuple[np.ndarray, float]:
    """Strictly feasible start for an instance-derived program.

    Returns the spread-and-rescaled allocation vector together with the
    big-M slack needed to cover the goal-type constraints with margin 1.
    """
    if prog.num_vars != instance_context.decision_count:
        raise InvalidInputError(
            f"program has {prog.num_vars} variables but the instance defines "
            f"{instance_context.decision_count} targeting pairs"
        )
    x0 = allocation_seed_vector(instance_context)
    return x0, required_big_m_slack(prog, x0)


def _default_start(prog: ConeProgram) -> np.ndarray:
    lo, hi = prog.lower, prog.upper
    x0 = np.zeros(prog.num_vars)
    both = np.isfinite(lo) & np.isfinite(hi)
    x0[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    x0[only_lo] = lo[only_lo] + 1.0
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x0[only_hi] = hi[only_hi] - 1.0
    return x0


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def solve(
    prog: ConeProgram,
    settings: IpmSettings | None = None,
    x0: np.ndarray | None = None,
    log_sink: Callable[[str], None] | None = None,
) -> IpmResult:
    """Minimize the program from a strictly feasible start.

    x0 must satisfy the structural rows and bounds strictly; goal rows and
    cones are covered by the internally added big-M slack when needed. When
    x0 is omitted a bounds-midpoint start is tried.
    """
    settings = settings or IpmSettings()
    n = prog.num_vars
    x_start = _default_start(prog) if x0 is None else np.asarray(x0, dtype=float)
    if x_start.shape != (n,):
        raise InvalidInputError(f"start point shape {x_start.shape} != ({n},)")
    rows = _assemble(prog)

    slack0 = required_big_m_slack(prog, x_start)
    use_slack = slack0 > 0.0
    nv = n + 1 if use_slack else n

    quad = np.zeros((nv, nv))
    quad[:n, :n] = prog.quad
    lin = np.zeros(nv)
    lin[:n] = prog.lin
    if use_slack:
        lin[n] = settings.big_m

    m = rows.coeffs.shape[0]
    a_mat = np.zeros((m + (1 if use_slack else 0), nv))
    a_mat[:m, :n] = rows.coeffs
    b_vec = np.concatenate([rows.bounds, [0.0]]) if use_slack else rows.bounds.copy()
    if use_slack:
        a_mat[:m, n][rows.goal_mask] = -1.0  # goal rows gain +slack on the lhs
        a_mat[m, n] = -1.0                   # slack >= 0
    cone_maps = []
    for (g, offset), soc in zip(rows.cone_maps, prog.socs):
        g_aug = np.zeros((g.shape[0], nv))
        g_aug[:, :n] = g
        if use_slack:
            g_aug[0, n] = 1.0 / soc.scale
        cone_maps.append((g_aug, offset))

    y = np.concatenate([x_start, [slack0]]) if use_slack else x_start.copy()
    s_lin = b_vec - a_mat @ y
    if s_lin.size and float(s_lin.min()) <= 0.0:
        raise InvalidInputError(
            "start point is not strictly feasible for the structural constraints "
            f"(worst slack {float(s_lin.min()):.3e})"
        )
    z_list = [g @ y + off for g, off in cone_maps]
    for z in z_list:
        if not _interior(z):
            raise InvalidInputError("start point is not strictly interior to a cone")

    if s_lin.size == 0 and not cone_maps:
        # Unconstrained quadratic: solve the normal equations directly.
        try:
            x_opt = numerics.solve_linear(prog.quad, -prog.lin)
        except SingularSystemError:
            return IpmResult("numerical_failure", x_start, prog.objective(x_start),
                             math.inf, 0)
        return IpmResult("optimal", x_opt, prog.objective(x_opt), 0.0, 0)

    lam = 1.0 / s_lin
    w_list = [_arrow_solve(z, _cone_identity(z.size)) for z in z_list]
    t_param = 1.0

    eye = np.eye(nv)
    status = "iteration_limit"
    err = math.inf
    iterations = 0
    step = 0.0
    slack_history: list[float] = []

    for it in range(settings.max_iters):
        products = lam * s_lin
        cone_products = [_arrow_product(z, w) for z, w in zip(z_list, w_list)]
        maxprod = float(products.max()) if products.size else 0.0
        for zw in cone_products:
            maxprod = max(maxprod, float(np.max(np.abs(zw))))
        t_param = max(t_param, settings.t_multiplier / max(maxprod, 1e-300))
        inv_t = 1.0 / t_param

        r_dual = quad @ y + lin + a_mat.T @ lam
        for (g, _), w in zip(cone_maps, w_list):
            r_dual -= g.T @ w
        comp_err = float(np.max(np.abs(products - inv_t))) if products.size else 0.0
        for zw in cone_products:
            target = np.zeros_like(zw)
            target[0] = inv_t
            comp_err = max(comp_err, float(np.max(np.abs(zw - target))))
        err = max(float(np.max(np.abs(r_dual))), comp_err)

        obj_pen = float(0.5 * y @ quad @ y + lin @ y + prog.const)
        stop_tol = max(settings.epsilon_rel * abs(obj_pen), _ABS_FLOOR)
        if log_sink is not None:
            log_sink(f"{it},{t_param:.6e},{obj_pen:.12e},{err:.6e},{step:.6e}")
        if err <= stop_tol:
            status = "optimal"
            break

        if use_slack:
            slack_val = float(y[n])
            slack_history.append(slack_val)
            if (
                slack_val > _SLACK_FEASIBLE_TOL
                and len(slack_history) > _STALL_WINDOW
                and slack_history[-_STALL_WINDOW - 1] - slack_val
                <= 1e-12 * max(1.0, slack_val)
            ):
                status = "infeasible"
                break

        # Reduced Newton system in the primal step only.
        ratio = lam / s_lin
        m_mat = quad + a_mat.T @ (a_mat * ratio[:, None])
        rhs = -r_dual - a_mat.T @ (inv_t / s_lin - lam)
        cone_h = []
        for (g, _), z, w, zw in zip(cone_maps, z_list, w_list, cone_products):
            arw_w_g = np.empty_like(g)
            arw_w_g[0] = w @ g
            arw_w_g[1:] = w[0] * g[1:] + np.outer(w[1:], g[0])
            h = _arrow_solve(z, arw_w_g)
            cone_h.append(h)
            m_mat += g.T @ h
            target = np.zeros_like(zw)
            target[0] = inv_t
            rhs += g.T @ _arrow_solve(z, target - zw)

        dy = None
        try:
            dy = numerics.solve_linear(m_mat, rhs)
        except SingularSystemError:
            reg = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(m_mat)))))
            try:
                dy = numerics.solve_linear(m_mat + reg * eye, rhs)
            except SingularSystemError:
                status = "numerical_failure"
                break
        if not np.all(np.isfinite(dy)):
            status = "numerical_failure"
            break

        a_dy = a_mat @ dy
        ds = -a_dy
        dlam = (inv_t - products) / s_lin + ratio * a_dy
        dw_list = []
        dz_list = []
        for (g, _), z, w, zw in zip(cone_maps, z_list, w_list, cone_products):
            dz = g @ dy
            target = np.zeros_like(zw)
            target[0] = inv_t
            dw = _arrow_solve(z, target - zw - _arrow_product(w, dz))
            dz_list.append(dz)
            dw_list.append(dw)

        alpha_max = min(_positivity_step(s_lin, ds), _positivity_step(lam, dlam))
        for z, dz in zip(z_list, dz_list):
            alpha_max = min(alpha_max, _cone_boundary_step(z, dz))
        for w, dw in zip(w_list, dw_list):
            alpha_max = min(alpha_max, _cone_boundary_step(w, dw))
        step = min(1.0, settings.boundary_fraction * alpha_max)
        if step < _MIN_STEP:
            status = "numerical_failure"
            break

        y = y + step * dy
        lam = lam + step * dlam
        w_list = [w + step * dw for w, dw in zip(w_list, dw_list)]
        s_lin = b_vec - a_mat @ y
        z_list = [g @ y + off for g, off in cone_maps]
        iterations = it + 1
        if s_lin.size and float(s_lin.min()) <= 0.0:
            status = "numerical_failure"
            break
        if any(not _interior(z) for z in z_list):
            status = "numerical_failure"
            break

    x = y[:n]
    slack_val = float(y[n]) if use_slack else 0.0
    if status == "optimal" and use_slack and slack_val > _SLACK_FEASIBLE_TOL:
        status = "infeasible"
    if status == "optimal":
        violation = _max_violation(prog, x)
        if violation > _FEASIBILITY_TOL:
            status = "numerical_failure"
    lin_duals = lam[:m] if s_lin.size else np.zeros(0)
    return IpmResult(
        status=status,
        x=x,
        objective=prog.objective(x),
        kkt_residual=err,
        iterations=iterations,
        lin_duals=np.asarray(lin_duals, dtype=float),
        soc_duals=tuple(np.asarray(w, dtype=float) for w in w_list),
        slack=slack_val,
        t=t_param,
    )


def _cone_identity(dim: int) -> np.ndarray:
    e = np.zeros(dim)
    e[0] = 1.0
    return e


def _max_violation(prog: ConeProgram, x: np.ndarray) -> float:
    rows = _assemble(prog)
    worst = 0.0
    if rows.coeffs.shape[0]:
        worst = max(worst, float(np.max(rows.coeffs @ x - rows.bounds)))
    for soc in prog.socs:
        sub = x[soc.var_idx]
        lhs = float(soc.mean @ sub) - soc.scale * float(np.linalg.norm(soc.factor.T @ sub))
        worst = max(worst, soc.threshold - lhs)
    return worst


def kkt_residual(
    prog: ConeProgram,
    x: np.ndarray,
    lin_duals: np.ndarray,
    soc_duals: Sequence[np.ndarray],
    t: float,
) -> float:
    """Maximum modified-KKT residual at (x, duals) for path parameter t.

    Covers stationarity, primal feasibility, and the perturbed
    complementarity blocks (linear products against 1/t; cone Jordan
    products against (1/t) e). Duals must be strictly inside their cones.
    """
    x = np.asarray(x, dtype=float)
    lin_duals = np.asarray(lin_duals, dtype=float)
    if t <= 0.0:
        raise InvalidInputError("path parameter t must be positive")
    rows = _assemble(prog)
    if lin_duals.shape != (rows.coeffs.shape[0],):
        raise InvalidInputError(
            f"expected {rows.coeffs.shape[0]} linear duals, got {lin_duals.shape}"
        )
    if len(soc_duals) != len(prog.socs):
        raise InvalidInputError(f"expected {len(prog.socs)} cone duals, got {len(soc_duals)}")
    if lin_duals.size and float(lin_duals.min()) <= 0.0:
        raise InvalidInputError("linear duals must be strictly positive")
    for w in soc_duals:
        if not _interior(np.asarray(w, dtype=float)):
            raise InvalidInputError("cone duals must be strictly interior")

    inv_t = 1.0 / t
    stat = prog.quad @ x + prog.lin + rows.coeffs.T @ lin_duals
    for (g, _), w in zip(rows.cone_maps, soc_duals):
        stat -= g.T @ np.asarray(w, dtype=float)
    worst = float(np.max(np.abs(stat))) if stat.size else 0.0

    s = rows.bounds - rows.coeffs @ x
    if s.size:
        worst = max(worst, float(np.max(-s)), float(np.max(np.abs(lin_duals * s - inv_t))))
    for (g, off), w in zip(rows.cone_maps, soc_duals):
        z = g @ x + off
        worst = max(worst, float(np.linalg.norm(z[1:]) - z[0]))
        zw = _arrow_product(z, np.asarray(w, dtype=float))
        target = np.zeros_like(zw)
        target[0] = inv_t
        worst = max(worst, float(np.max(np.abs(zw - target))))
    return max(worst, 0.0)
