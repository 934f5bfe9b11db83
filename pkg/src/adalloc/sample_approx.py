"""Scenario-based bounds: sampled goal constraints, branch-and-bound, and
the confidence machinery that certifies the resulting bounds.

The sampled program keeps the allocation objective and budget constraints
and requires every campaign goal to be met in at least ceil((1 - xi) N) of N
sampled supply scenarios, toggled by per-scenario binary indicators. Solved
exactly (branch-and-bound over the indicator relaxation) it gives a lower
bound on the true optimum with probability lb_confidence; its robust xi = 0
version is a convex program whose value is an upper bound with probability
ub_confidence.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ipm
from .errors import InvalidInputError, ParameterSearchError
from .model import Instance, Allocation, ScenarioSet, campaign_members, campaign_slices
from .numerics import binomial_tail_leq, log_choose
from .convex_bounds import variance_quadratic, budget_rows
from .report import SolveReport

__all__ = [
    "SaParams",
    "BnbNode",
    "lb_confidence",
    "ub_confidence",
    "choose_parameters",
    "solve_robust_sa",
    "solve_sa",
    "node_relax",
    "branch_select",
    "discard_budget",
    "required_scenarios",
]

# Guards against float dust in xi * n landing just below an integer.
_COUNT_EPS = 1e-9
_INTEGRALITY_TOL = 1e-6
_PRUNE_TOL = 1e-9
_DEFAULT_NODE_LIMIT = 10**6


def discard_budget(xi: float, n: int) -> int:
    """floor(xi * n): scenarios that may be left unfulfilled."""
    if not 0.0 <= xi < 1.0:
        raise InvalidInputError(f"xi must lie in [0, 1), got {xi}")
    return int(math.floor(xi * n + _COUNT_EPS))


def required_scenarios(xi: float, n: int) -> int:
    """ceil((1 - xi) * n), the number of scenarios that must be enforced."""
    return n - discard_budget(xi, n)


def lb_confidence(n: int, xi: float, alpha: float) -> float:
    """Probability that the sampled program's optimum is a true lower bound.

    Equals P(Binomial(n, alpha) <= floor(xi n)): the chance that the true
    optimal allocation violates at most the discard budget of the sampled
    scenarios and hence stays feasible in the sampled program.
    """
    n = int(n)
    if n < 1:
        raise InvalidInputError(f"scenario count must be positive, got {n}")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    return binomial_tail_leq(n, discard_budget(xi, n), alpha)


def ub_confidence(n: int, d: int, alpha: float) -> float:
    """Probability that the robust (xi = 0) optimum is a true upper bound.

    Equals 1 - C(n, d) (1 - alpha)^(n - d) with d the number of decision
    variables; computed in log space. May be negative (a vacuous bound) for
    small n, and is returned as-is in that case.
    """
    n = int(n)
    d = int(d)
    if d < 0 or n <= d:
        raise InvalidInputError(f"need n > d >= 0, got n={n}, d={d}")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    return 1.0 - math.exp(log_choose(n, d) + (n - d) * math.log1p(-alpha))


@dataclass(frozen=True)
class SaParams:
    """Scenario counts and discard fraction for the two sampled bounds."""

    n_lower: int
    xi: float
    n_upper: int
    target_confidence: float = 0.99

    def __post_init__(self) -> None:
        if self.n_lower < 1 or self.n_upper < 1:
            raise InvalidInputError("scenario counts must be positive")
        if not 0.0 <= self.xi < 1.0:
            raise InvalidInputError(f"xi must lie in [0, 1), got {self.xi}")
        if not 0.0 < self.target_confidence < 1.0:
            raise InvalidInputError("target confidence must lie in (0, 1)")

    def joint_confidence(self, alpha: float, decision_count: int) -> float:
        """Lower bound on P(both bounds bracket the true optimum)."""
        return (
            lb_confidence(self.n_lower, self.xi, alpha)
            + ub_confidence(self.n_upper, decision_count, alpha)
            - 1.0
        )

    def validate(self, alpha: float, decision_count: int) -> None:
        joint = self.joint_confidence(alpha, decision_count)
        if joint < self.target_confidence - 1e-12:
            raise InvalidInputError(
                f"parameters certify only {joint:.6f} < target {self.target_confidence}"
            )


def choose_parameters(
    alpha: float,
    d: int,
    target_confidence: float = 0.99,
    n_lower: int = 100,
    max_n: int = 10**7,
) -> SaParams:
    """Smallest scenario parameters meeting the joint confidence target.

    The failure budget is split evenly: each side must certify at least
    (1 + target)/2. The upper count is found by doubling then bisection;
    the discard count for the lower side by a linear scan.
    """
    if not 0.0 < alpha < 0.5:
        raise InvalidInputError(f"alpha must lie in (0, 0.5), got {alpha}")
    if d < 1:
        raise InvalidInputError(f"decision count must be positive, got {d}")
    if n_lower < 1:
        raise InvalidInputError("n_lower must be positive")
    side = 0.5 * (1.0 + target_confidence)

    lo = d + 1
    hi = lo
    while ub_confidence(hi, d, alpha) < side:
        hi *= 2
        if hi > max_n:
            raise ParameterSearchError(
                f"no scenario count up to {max_n} reaches the upper-bound target {side}"
            )
    while lo < hi:
        mid = (lo + hi) // 2
        if mid > d and ub_confidence(mid, d, alpha) >= side:
            hi = mid
        else:
            lo = mid + 1
    n_upper = hi

    m = None
    for cand in range(n_lower):
        if binomial_tail_leq(n_lower, cand, alpha) >= side:
            m = cand
            break
    if m is None:
        raise ParameterSearchError(
            f"no discard count below n_lower={n_lower} reaches the lower-bound target {side}"
        )
    params = SaParams(
        n_lower=n_lower,
        xi=m / n_lower,
        n_upper=n_upper,
        target_confidence=target_confidence,
    )
    params.validate(alpha, d)
    return params


# ---------------------------------------------------------------------------
# Program assembly
# ---------------------------------------------------------------------------

def _scenario_matrix(instance: Instance, scenarios: ScenarioSet | np.ndarray) -> np.ndarray:
    samples = scenarios.samples if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    if samples.ndim != 2 or samples.shape[1] != instance.num_viewer_types:
        raise InvalidInputError(
            f"scenario matrix shape {samples.shape} does not match "
            f"{instance.num_viewer_types} viewer types"
        )
    return np.asarray(samples, dtype=float)


@dataclass(frozen=True)
class BnbNode:
    """Branch state: scenario indicators pinned to one or zero."""

    fixed_one: frozenset[int]
    fixed_zero: frozenset[int]
    relaxation_bound: float = math.nan
    relaxation_solution: tuple[np.ndarray, np.ndarray] | None = None

    def check(self, n: int, xi: float) -> None:
        if self.fixed_one & self.fixed_zero:
            raise InvalidInputError("a scenario cannot be pinned to both one and zero")
        if len(self.fixed_one) > required_scenarios(xi, n):
            raise InvalidInputError("more scenarios pinned to one than the enforcement target")
        if len(self.fixed_zero) > discard_budget(xi, n):
            raise InvalidInputError("more scenarios pinned to zero than the discard budget")
        for i in self.fixed_one | self.fixed_zero:
            if not 0 <= i < n:
                raise InvalidInputError(f"scenario index {i} out of range for N={n}")


@dataclass(frozen=True)
class _NodeProgram:
    prog: ipm.ConeProgram
    x0: np.ndarray
    free: np.ndarray          # scenario indices carried as variables
    eliminated: int | None    # scenario index substituted by the count equality
    forced: dict[int, float]  # scenario indices with values implied at this node
    target_remaining: int     # enforced count among the non-pinned scenarios


def _compile_node(
    instance: Instance,
    samples: np.ndarray,
    xi: float,
    node: BnbNode,
) -> _NodeProgram | None:
    """Continuous relaxation at a node; None when the pinning is contradictory."""
    n_scen = samples.shape[0]
    node.check(n_scen, xi)
    target = required_scenarios(xi, n_scen)
    remaining = target - len(node.fixed_one)
    unfixed = sorted(set(range(n_scen)) - node.fixed_one - node.fixed_zero)
    if remaining < 0 or remaining > len(unfixed):
        return None

    beta = 1.0 / float(instance.goals.max())
    n_p = instance.decision_count
    members = campaign_members(instance)
    slices = campaign_slices(instance)
    goals_s = beta * instance.goals

    forced: dict[int, float] = {}
    if remaining == 0:
        forced = {i: 0.0 for i in unfixed}
        free: list[int] = []
        eliminated = None
    elif remaining == len(unfixed):
        forced = {i: 1.0 for i in unfixed}
        free = []
        eliminated = None
    else:
        eliminated = unfixed[-1]
        free = unfixed[:-1]

    def x_value(i: int) -> float | None:
        """Fixed/implied value of scenario i, or None when it is a variable."""
        if i in node.fixed_one:
            return 1.0
        if i in node.fixed_zero:
            return 0.0
        if i in forced:
            return forced[i]
        return None

    n_free = len(free)
    nv = n_p + n_free
    free_col = {i: n_p + j for j, i in enumerate(free)}

    goal_rows = []
    goal_rhs = []
    for i in range(n_scen):
        for k in range(instance.num_campaigns):
            row = np.zeros(nv)
            row[slices[k]] = beta * samples[i, members[k]]
            val = x_value(i)
            if val is not None:
                rhs = goals_s[k] * val
            elif i == eliminated:
                # x_i = remaining - sum(free), so the goal picks up +g_k per free var.
                for j in free:
                    row[free_col[j]] = goals_s[k]
                rhs = goals_s[k] * remaining
            else:
                row[free_col[i]] = -goals_s[k]
                rhs = 0.0
            goal_rows.append(row)
            goal_rhs.append(rhs)

    a_rows, a_rhs = budget_rows(instance)
    ineqs = [(np.concatenate([r, np.zeros(n_free)]), rhs) for r, rhs in zip(a_rows, a_rhs)]
    if eliminated is not None:
        # 0 <= x_eliminated <= 1 in terms of the free indicators.
        row = np.zeros(nv)
        row[n_p:] = 1.0
        ineqs.append((row.copy(), float(remaining)))
        ineqs.append((-row, float(1 - remaining)))

    quad = np.zeros((nv, nv))
    quad[:n_p, :n_p] = variance_quadratic(instance)
    lower = np.concatenate([np.zeros(n_p), np.zeros(n_free)])
    upper = np.concatenate([np.full(n_p, np.inf), np.ones(n_free)])

    prog = ipm.ConeProgram.build(
        num_vars=nv,
        quad=quad,
        ineqs=ineqs,
        goal_ineqs=(np.asarray(goal_rows), np.asarray(goal_rhs)),
        lower=lower,
        upper=upper,
    )
    x0 = np.empty(nv)
    x0[:n_p] = ipm.allocation_seed_vector(instance)
    if n_free:
        x0[n_p:] = remaining / (n_free + 1)
    return _NodeProgram(
        prog=prog, x0=x0, free=np.asarray(free, dtype=int),
        eliminated=eliminated, forced=forced, target_remaining=remaining,
    )


def _scenario_values(node: BnbNode, compiled: _NodeProgram, x: np.ndarray, n_scen: int) -> np.ndarray:
    """Full indicator vector implied by a relaxation solution."""
    vals = np.empty(n_scen)
    for i in node.fixed_one:
        vals[i] = 1.0
    for i in node.fixed_zero:
        vals[i] = 0.0
    for i, v in compiled.forced.items():
        vals[i] = v
    n_p = x.size - compiled.free.size
    for j, i in enumerate(compiled.free):
        vals[i] = x[n_p + j]
    if compiled.eliminated is not None:
        vals[compiled.eliminated] = compiled.target_remaining - float(
            x[n_p:].sum()
        )
    return vals


def node_relax(
    instance: Instance,
    scenarios: ScenarioSet | np.ndarray,
    xi: float,
    node: BnbNode,
    settings: ipm.IpmSettings | None = None,
) -> ipm.IpmResult:
    """Solve the continuous relaxation at one branch node."""
    samples = _scenario_matrix(instance, scenarios)
    compiled = _compile_node(instance, samples, xi, node)
    if compiled is None:
        return ipm.IpmResult(
            status="infeasible",
            x=np.zeros(instance.decision_count),
            objective=math.inf,
            kkt_residual=math.inf,
            iterations=0,
        )
    return ipm.solve(compiled.prog, settings, compiled.x0)


def branch_select(
    relax_solution: np.ndarray,
    x_values: np.ndarray,
    scenarios: ScenarioSet | np.ndarray,
    goals: np.ndarray,
    unfixed: list[int],
    instance: Instance,
) -> int:
    """Scenario whose worst campaign constraint is farthest from holding.

    Returns argmin over unfixed scenarios of min_k (served_k / g_k) at the
    relaxation allocation; ties break to the smallest scenario index.
    """
    if not unfixed:
        raise InvalidInputError("cannot branch with no unfixed scenarios")
    samples = _scenario_matrix(instance, scenarios)
    members = campaign_members(instance)
    slices = campaign_slices(instance)
    best_idx = -1
    best_ratio = math.inf
    for i in sorted(unfixed):
        worst = math.inf
        for k in range(instance.num_campaigns):
            served = float(samples[i, members[k]] @ relax_solution[slices[k]])
            worst = min(worst, served / float(goals[k]))
        if worst < best_ratio - 1e-15:
            best_ratio = worst
            best_idx = i
    return best_idx


def solve_robust_sa(
    instance: Instance,
    scenarios: ScenarioSet | np.ndarray,
    settings: ipm.IpmSettings | None = None,
    label: str = "sa_upper",
) -> SolveReport:
    """Convex program enforcing every sampled scenario (xi = 0)."""
    samples = _scenario_matrix(instance, scenarios)
    node = BnbNode(fixed_one=frozenset(range(samples.shape[0])), fixed_zero=frozenset())
    start = time.perf_counter()
    res = node_relax(instance, samples, 0.0, node, settings)
    wall = time.perf_counter() - start
    allocation = None
    objective = None
    note = None
    if res.status == "optimal":
        allocation = Allocation.from_vector(instance, res.x[: instance.decision_count])
        objective = res.objective
    elif res.status == "infeasible":
        note = "some sampled scenario cannot be covered by any in-budget allocation"
    seed = scenarios.seed if isinstance(scenarios, ScenarioSet) else None
    return SolveReport(
        bound_kind=label,
        status=res.status,
        objective=objective,
        allocation=allocation,
        iterations=res.iterations,
        wall_time_seconds=wall,
        seed=seed,
        note=note,
        extra={"scenario_count": int(samples.shape[0])},
    )


def solve_sa(
    instance: Instance,
    scenarios: ScenarioSet | np.ndarray,
    xi: float,
    settings: ipm.IpmSettings | None = None,
    node_limit: int = _DEFAULT_NODE_LIMIT,
    node_log: Callable[[str], None] | None = None,
    label: str = "sa_lower",
) -> SolveReport:
    """Exact optimum of the sampled program by best-first branch-and-bound.

    Nodes are explored in relaxation-bound order; branching follows the
    least-fulfilled-scenario rule, enqueueing the enforce child first. The
    result is proven optimal when the open list empties; hitting the node
    limit returns the incumbent flagged as unproven.
    """
    samples = _scenario_matrix(instance, scenarios)
    n_scen = samples.shape[0]
    if required_scenarios(xi, n_scen) < 1:
        raise InvalidInputError("the enforcement target must be at least one scenario")
    start = time.perf_counter()

    incumbent_obj = math.inf
    incumbent: tuple[np.ndarray, np.ndarray] | None = None
    heap: list[tuple[float, int, BnbNode]] = []
    counter = 0
    nodes_solved = 0
    proven = True

    def emit(node_id: int, parent: int, node: BnbNode, bound: float, status: str) -> None:
        if node_log is not None:
            f1 = " ".join(str(i) for i in sorted(node.fixed_one))
            f0 = " ".join(str(i) for i in sorted(node.fixed_zero))
            node_log(f"{node_id},{parent},{f1},{f0},{bound},{status}")

    def evaluate(node: BnbNode, parent: int) -> None:
        nonlocal counter, nodes_solved, incumbent_obj, incumbent
        compiled = _compile_node(instance, samples, xi, node)
        node_id = counter
        counter += 1
        if compiled is None:
            emit(node_id, parent, node, math.inf, "contradictory")
            return
        res = ipm.solve(compiled.prog, settings, compiled.x0)
        nodes_solved += 1
        if res.status == "infeasible":
            emit(node_id, parent, node, math.inf, "infeasible")
            return
        if res.status != "optimal":
            emit(node_id, parent, node, math.inf, res.status)
            raise InvalidInputError(
                f"relaxation solve failed with status {res.status} at node {node_id}"
            )
        bound = res.objective
        if bound >= incumbent_obj - _PRUNE_TOL:
            emit(node_id, parent, node, bound, "pruned")
            return
        p = res.x[: instance.decision_count]
        x_scen = _scenario_values(node, compiled, res.x, n_scen)
        frac = np.abs(x_scen - np.round(x_scen))
        if float(frac.max(initial=0.0)) <= _INTEGRALITY_TOL:
            rounded = np.round(x_scen)
            if int(rounded.sum()) == required_scenarios(xi, n_scen) and _verify_coverage(
                instance, samples, p, rounded
            ):
                if bound < incumbent_obj:
                    incumbent_obj = bound
                    incumbent = (p, rounded)
                emit(node_id, parent, node, bound, "incumbent")
                return
        emit(node_id, parent, node, bound, "open")
        heapq.heappush(
            heap,
            (
                bound,
                node_id,
                BnbNode(
                    fixed_one=node.fixed_one,
                    fixed_zero=node.fixed_zero,
                    relaxation_bound=bound,
                    relaxation_solution=(p, x_scen),
                ),
            ),
        )

    evaluate(BnbNode(fixed_one=frozenset(), fixed_zero=frozenset()), parent=-1)
    while heap:
        if counter > node_limit:
            proven = False
            break
        bound, node_id, node = heapq.heappop(heap)
        if bound >= incumbent_obj - _PRUNE_TOL:
            continue
        p, x_scen = node.relaxation_solution
        unfixed = sorted(set(range(n_scen)) - node.fixed_one - node.fixed_zero)
        j = branch_select(p, x_scen, samples, instance.goals, unfixed, instance)
        evaluate(
            BnbNode(fixed_one=node.fixed_one | {j}, fixed_zero=node.fixed_zero),
            parent=node_id,
        )
        evaluate(
            BnbNode(fixed_one=node.fixed_one, fixed_zero=node.fixed_zero | {j}),
            parent=node_id,
        )

    wall = time.perf_counter() - start
    seed = scenarios.seed if isinstance(scenarios, ScenarioSet) else None
    if incumbent is None:
        return SolveReport(
            bound_kind=label,
            status="infeasible",
            objective=None,
            allocation=None,
            iterations=nodes_solved,
            wall_time_seconds=wall,
            seed=seed,
            note="every scenario selection is infeasible",
            extra={"nodes": nodes_solved, "proven": proven, "xi": xi, "scenario_count": n_scen},
        )
    allocation = Allocation.from_vector(instance, incumbent[0])
    return SolveReport(
        bound_kind=label,
        status="optimal" if proven else "warning",
        objective=incumbent_obj,
        allocation=allocation,
        iterations=nodes_solved,
        wall_time_seconds=wall,
        seed=seed,
        note=None if proven else "node limit reached; incumbent not proven optimal",
        extra={
            "nodes": nodes_solved,
            "proven": proven,
            "xi": xi,
            "scenario_count": n_scen,
            "enforced": [int(i) for i in np.flatnonzero(incumbent[1] > 0.5)],
        },
    )


def _verify_coverage(
    instance: Instance, samples: np.ndarray, p: np.ndarray, x_scen: np.ndarray
) -> bool:
    """Rounded-indicator feasibility check at the relaxation allocation."""
    members = campaign_members(instance)
    slices = campaign_slices(instance)
    for i in np.flatnonzero(x_scen > 0.5):
        for k in range(instance.num_campaigns):
            served = float(samples[i, members[k]] @ p[slices[k]])
            if served < instance.goals[k] * (1.0 - 10 * _INTEGRALITY_TOL):
                return False
    return True
