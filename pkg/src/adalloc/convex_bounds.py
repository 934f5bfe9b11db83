"""Convex bounding programs for the joint chance-constrained allocation model.

Four parameterizations of one cone program give two lower and two upper
bounds on the true optimum:

  df_lower      per-campaign mean constraints  mu' p >= (1 - alpha) g
                (a relaxation valid for any supply distribution);
  df_upper      one-sided Chebyshev restriction with a per-campaign risk
                budget alpha_k, sum alpha_k <= alpha;
  normal_lower  per-campaign normal quantile constraints at level alpha;
  normal_upper  the same constraints at the per-campaign levels alpha_k.

Upper bounds can be tightened by iteratively measuring how much risk each
campaign actually uses at the current optimum, reclaiming the surplus, and
granting it to the campaigns whose constraints were binding; the objective
never increases along the way.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np

from . import ipm, numerics
from .errors import InvalidInputError
from .model import Instance, Allocation, campaign_members, campaign_slices
from .report import SolveReport

__all__ = [
    "BoundKind",
    "RiskBudget",
    "ca_parameters",
    "compile_ca",
    "solve_ca",
    "chebyshev_alpha_hat",
    "normal_alpha_hat",
    "refine_upper_bound",
]

# Budget entries are floored here when a campaign needs essentially no risk
# (deterministic surplus); keeps the cone scale parameter finite.
_ALPHA_FLOOR = 1e-12
_SLACK_TOL = 1e-10


class BoundKind(str, enum.Enum):
    DF_LOWER = "df_lower"
    DF_UPPER = "df_upper"
    NORMAL_LOWER = "normal_lower"
    NORMAL_UPPER = "normal_upper"

    @property
    def is_upper(self) -> bool:
        return self in (BoundKind.DF_UPPER, BoundKind.NORMAL_UPPER)


@dataclass(frozen=True)
class RiskBudget:
    """Per-campaign split alpha_k of the joint tolerance, sum <= joint_alpha."""

    alpha_k: np.ndarray
    joint_alpha: float

    def __post_init__(self) -> None:
        values = np.asarray(self.alpha_k, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise InvalidInputError("alpha_k must be a non-empty vector")
        if np.any(values <= 0.0) or np.any(values >= 0.5):
            raise InvalidInputError("every alpha_k must lie in (0, 0.5)")
        if float(values.sum()) > self.joint_alpha + 1e-12:
            raise InvalidInputError(
                f"risk budget sum {float(values.sum()):.12f} exceeds alpha {self.joint_alpha}"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "alpha_k", values)

    @classmethod
    def uniform(cls, instance: Instance) -> "RiskBudget":
        k = instance.num_campaigns
        return cls(alpha_k=np.full(k, instance.alpha / k), joint_alpha=instance.alpha)


def ca_parameters(
    kind: BoundKind,
    instance: Instance,
    budget: RiskBudget | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cone scale u_k and threshold h_k per campaign for the chosen bound."""
    kind = BoundKind(kind)
    alpha = instance.alpha
    goals = instance.goals
    if kind.is_upper:
        if budget is None:
            raise InvalidInputError(f"{kind.value} requires a per-campaign risk budget")
        if budget.alpha_k.size != instance.num_campaigns:
            raise InvalidInputError("risk budget length does not match the campaign count")
        alpha_k = budget.alpha_k
    if kind is BoundKind.DF_LOWER:
        u = np.zeros(instance.num_campaigns)
        h = (1.0 - alpha) * goals
    elif kind is BoundKind.DF_UPPER:
        u = np.sqrt((1.0 - alpha_k) / alpha_k)
        h = goals.copy()
    elif kind is BoundKind.NORMAL_LOWER:
        u = np.full(instance.num_campaigns, -numerics.norm_quantile(alpha))
        h = goals.copy()
    else:  # NORMAL_UPPER
        u = np.array([-numerics.norm_quantile(a) for a in alpha_k])
        h = goals.copy()
    if np.any(u < 0.0):
        raise InvalidInputError("cone scale must be non-negative; is alpha below 0.5?")
    return u, h


def variance_quadratic(instance: Instance) -> np.ndarray:
    """PSD matrix Q with 0.5 p'Qp = weighted within-campaign variance of p."""
    n = instance.decision_count
    q = np.zeros((n, n))
    for k, sl in enumerate(campaign_slices(instance)):
        d = sl.stop - sl.start
        w = float(instance.weights[k])
        if d == 0 or w == 0.0:
            continue
        block = (2.0 * w / d) * (np.eye(d) - np.full((d, d), 1.0 / d))
        q[sl, sl] += block
    return q


def budget_rows(instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Supply-budget rows: sum over campaigns of p_vk <= 1 for each viewer type."""
    n = instance.decision_count
    rows = np.zeros((instance.num_viewer_types, n))
    slices = campaign_slices(instance)
    for k, mem in enumerate(campaign_members(instance)):
        cols = np.arange(slices[k].start, slices[k].stop)
        rows[mem, cols] = 1.0
    return rows, np.ones(instance.num_viewer_types)


def compile_ca(instance: Instance, u: np.ndarray, h: np.ndarray) -> ipm.ConeProgram:
    """Cone program for the bound parameters (u, h).

    Supply data is pre-scaled by 1/max(goals) so constraint magnitudes are
    O(1); proportions and the objective are unaffected by the scaling.
    """
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    if u.shape != (instance.num_campaigns,) or h.shape != (instance.num_campaigns,):
        raise InvalidInputError("u and h must have one entry per campaign")
    beta = 1.0 / float(instance.goals.max())
    n = instance.decision_count
    slices = campaign_slices(instance)
    members = campaign_members(instance)
    socs = []
    for k in range(instance.num_campaigns):
        idx = np.arange(slices[k].start, slices[k].stop)
        mean = beta * instance.mu[members[k]]
        if u[k] == 0.0:
            factor = None
        else:
            sigma_k = instance.sigma[np.ix_(members[k], members[k])]
            factor = numerics.jittered_cholesky(beta * beta * sigma_k)
        socs.append(
            ipm.SocConstraint(
                var_idx=idx,
                mean=mean,
                factor=factor,
                scale=float(u[k]),
                threshold=float(beta * h[k]),
            )
        )
    a_rows, a_rhs = budget_rows(instance)
    return ipm.ConeProgram.build(
        num_vars=n,
        quad=variance_quadratic(instance),
        ineqs=list(zip(a_rows, a_rhs)),
        socs=socs,
        lower=np.zeros(n),
    )


def _report_from_result(
    instance: Instance,
    res: ipm.IpmResult,
    label: str,
    budget: RiskBudget | None,
    wall: float,
    note: str | None = None,
) -> SolveReport:
    allocation = None
    objective = None
    if res.status in ("optimal",):
        allocation = Allocation.from_vector(instance, res.x)
        objective = res.objective
    elif res.status == "infeasible" and note is None:
        note = (
            "no allocation satisfies this bound's constraint set; the conclusion "
            "holds only under this bound's distributional assumption"
        )
    return SolveReport(
        bound_kind=label,
        status=res.status,
        objective=objective,
        allocation=allocation,
        alpha_budget=None if budget is None else [float(a) for a in budget.alpha_k],
        iterations=res.iterations,
        wall_time_seconds=wall,
    )


def solve_ca(
    instance: Instance,
    kind: BoundKind,
    budget: RiskBudget | None = None,
    settings: ipm.IpmSettings | None = None,
    label: str | None = None,
) -> SolveReport:
    """Solve one bound program and wrap the outcome in a SolveReport."""
    kind = BoundKind(kind)
    u, h = ca_parameters(kind, instance, budget)
    prog = compile_ca(instance, u, h)
    x0, _ = ipm.initial_point(prog, instance)
    start = time.perf_counter()
    res = ipm.solve(prog, settings, x0)
    wall = time.perf_counter() - start
    return _report_from_result(instance, res, label or kind.value, budget, wall)


def chebyshev_alpha_hat(
    p_k: np.ndarray, sigma_k: np.ndarray, mu_k: np.ndarray, g_k: float
) -> float:
    """Smallest distribution-free risk level consistent with the point p_k.

    Uses the one-sided Chebyshev bound: risk <= var / (var + surplus^2)
    where surplus = mu' p - g must be strictly positive.
    """
    p_k = np.asarray(p_k, dtype=float)
    surplus = float(np.asarray(mu_k, dtype=float) @ p_k) - float(g_k)
    if surplus <= 0.0:
        raise InvalidInputError(
            f"mean surplus must be positive for the Chebyshev tightening, got {surplus:.3e}"
        )
    var = float(p_k @ np.asarray(sigma_k, dtype=float) @ p_k)
    if var <= 0.0:
        return 0.0
    return var / (var + surplus * surplus)


def normal_alpha_hat(
    p_k: np.ndarray, sigma_k: np.ndarray, mu_k: np.ndarray, g_k: float
) -> float:
    """Exact per-campaign shortfall probability under normal supply."""
    p_k = np.asarray(p_k, dtype=float)
    surplus = float(np.asarray(mu_k, dtype=float) @ p_k) - float(g_k)
    var = float(p_k @ np.asarray(sigma_k, dtype=float) @ p_k)
    if var <= 0.0:
        if surplus > 0.0:
            return 0.0
        raise InvalidInputError(
            "degenerate campaign with zero variance and no mean surplus"
        )
    return numerics.norm_cdf(-surplus / math.sqrt(var))


def _alpha_hat(kind: BoundKind, instance: Instance, allocation: Allocation) -> np.ndarray:
    members = campaign_members(instance)
    blocks = allocation.by_campaign(instance)
    out = np.empty(instance.num_campaigns)
    fn = chebyshev_alpha_hat if kind is BoundKind.DF_UPPER else normal_alpha_hat
    for k in range(instance.num_campaigns):
        sigma_k = instance.sigma[np.ix_(members[k], members[k])]
        try:
            out[k] = fn(blocks[k], sigma_k, instance.mu[members[k]], float(instance.goals[k]))
        except InvalidInputError:
            # No mean surplus at solver tolerance: the campaign needs its whole
            # budget, so it is never a source of slack.
            out[k] = 1.0
    return out


def refine_upper_bound(
    instance: Instance,
    kind: BoundKind,
    settings: ipm.IpmSettings | None = None,
    improvement_tol: float = 1e-6,
    max_rounds: int = 50,
) -> SolveReport:
    """Iteratively redistribute unused per-campaign risk for a tighter upper bound.

    Starts from the uniform split alpha/|K|. Each round measures the risk
    each campaign actually needs at the current optimum, tightens budgets
    with surplus down to that level, and shares the recovered slack equally
    among the campaigns whose constraints have been binding so far (the
    binding indicator persists across rounds). Stops when the objective
    improvement falls below improvement_tol relative or after max_rounds;
    the best (lowest-objective) iterate is returned with the full trace.
    """
    kind = BoundKind(kind)
    if not kind.is_upper:
        raise InvalidInputError(f"slack redistribution applies to upper bounds, not {kind.value}")
    nk = instance.num_campaigns
    start = time.perf_counter()

    alpha_k = np.full(nk, instance.alpha / nk)
    budget = RiskBudget(alpha_k=alpha_k, joint_alpha=instance.alpha)
    current = solve_ca(instance, kind, budget, settings)
    rounds = 1
    trace = [
        {
            "round": 1,
            "objective": current.objective,
            "alpha_k": [float(a) for a in alpha_k],
        }
    ]
    if not current.feasible:
        current.wall_time_seconds = time.perf_counter() - start
        current.bound_kind = f"{kind.value}_alg"
        current.trace = trace
        return current

    best = current
    tightened = np.zeros(nk, dtype=bool)
    z_old = math.inf
    z_cur = float(current.objective)
    warn_note: str | None = None

    while z_old - z_cur > improvement_tol * (1.0 + abs(z_cur)) and rounds < max_rounds:
        hats = _alpha_hat(kind, instance, current.allocation)
        slack = 0.0
        changed = False
        for k in range(nk):
            hat = max(float(hats[k]), _ALPHA_FLOOR)
            if alpha_k[k] - hat > _SLACK_TOL:
                slack += alpha_k[k] - hat
                alpha_k[k] = hat
                tightened[k] = True
                changed = True
        open_count = nk - int(tightened.sum())
        if slack > 0.0 and open_count > 0:
            alpha_k[~tightened] += slack / open_count
            changed = True
        if not changed:
            break
        budget = RiskBudget(alpha_k=alpha_k.copy(), joint_alpha=instance.alpha)
        z_old = z_cur
        nxt = solve_ca(instance, kind, budget, settings)
        rounds += 1
        if not nxt.feasible:
            warn_note = f"solver returned {nxt.status} at round {rounds}; kept best earlier iterate"
            break
        z_cur = float(nxt.objective)
        trace.append(
            {
                "round": rounds,
                "objective": z_cur,
                "alpha_k": [float(a) for a in alpha_k],
            }
        )
        current = nxt
        if best.objective is None or z_cur < best.objective:
            best = nxt

    best.bound_kind = f"{kind.value}_alg"
    best.trace = trace
    best.iterations = rounds
    best.wall_time_seconds = time.perf_counter() - start
    if warn_note is not None:
        best.status = "warning"
        best.note = warn_note
    return best
