"""Problem data model, random instance generation, and Monte Carlo evaluation.

An Instance describes one planning period for an ad network: viewer-type
supply moments (mu, sigma), campaign goals and weights, the campaign ->
viewer-type targeting matrix, and the joint un-fulfillment tolerance alpha.
An Allocation assigns each targeted (viewer type, campaign) pair the
proportion of that viewer type's supply given to the campaign, stored in
canonical order (campaign-major, viewer type ascending within a campaign).

Randomness is reproducible: every consumer derives its own generator from a
64-bit master seed plus a fixed stream label, so adding a new consumer never
perturbs the draws of existing ones.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numerics
from .errors import InvalidInputError

__all__ = [
    "Instance",
    "Allocation",
    "ScenarioSet",
    "FulfillmentEstimate",
    "GenSpec",
    "objective_value",
    "generate_instance",
    "random_correlation",
    "sample_supply",
    "estimate_fulfillment",
    "derive_rng",
    "targeting_pairs",
    "campaign_members",
    "instance_to_json",
    "instance_from_json",
    "write_scenario_csv",
    "read_scenario_csv",
]

_MASK64 = (1 << 64) - 1

# Stream labels for deriving independent substreams from one master seed.
STREAM_INSTANCE = 1
STREAM_SCENARIOS = 2
STREAM_EVALUATION = 3

# Fixed chunk size for Monte Carlo evaluation; results are independent of
# how chunks are distributed because each chunk seeds its own substream.
_EVAL_CHUNK = 16384


def derive_rng(seed: int, label: int, *extra: int) -> np.random.Generator:
    """Generator for substream `label` (and optional sub-indices) of `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(label, *extra))
    return np.random.default_rng(ss)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Instance:
    """One planning problem: supply moments, goals, targeting, risk tolerance."""

    num_viewer_types: int
    num_campaigns: int
    targeting: np.ndarray  # bool, shape (num_campaigns, num_viewer_types)
    mu: np.ndarray         # mean supply per viewer type
    sigma: np.ndarray      # supply covariance, shape (|V|, |V|)
    goals: np.ndarray      # ads to display, per campaign
    weights: np.ndarray    # campaign priority, per campaign
    alpha: float           # joint un-fulfillment tolerance, in (0, 0.5)

    def __post_init__(self) -> None:
        nv = int(self.num_viewer_types)
        nk = int(self.num_campaigns)
        if nv < 1 or nk < 1:
            raise InvalidInputError("num_viewer_types and num_campaigns must be positive")
        targeting = np.asarray(self.targeting, dtype=bool)
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        goals = np.asarray(self.goals, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if targeting.shape != (nk, nv):
            raise InvalidInputError(
                f"targeting shape {targeting.shape} != ({nk}, {nv})"
            )
        if mu.shape != (nv,):
            raise InvalidInputError(f"mu shape {mu.shape} != ({nv},)")
        if sigma.shape != (nv, nv):
            raise InvalidInputError(f"sigma shape {sigma.shape} != ({nv}, {nv})")
        if goals.shape != (nk,):
            raise InvalidInputError(f"goals shape {goals.shape} != ({nk},)")
        if weights.shape != (nk,):
            raise InvalidInputError(f"weights shape {weights.shape} != ({nk},)")
        if not np.all(targeting.any(axis=1)):
            raise InvalidInputError("every campaign must target at least one viewer type")
        if not np.all(targeting.any(axis=0)):
            raise InvalidInputError("every viewer type must be targeted by at least one campaign")
        if not np.all(mu > 0.0):
            raise InvalidInputError("mu must be strictly positive")
        if not np.all(goals > 0.0):
            raise InvalidInputError("goals must be strictly positive")
        if np.any(weights < 0.0):
            raise InvalidInputError("weights must be non-negative")
        if not 0.0 < float(self.alpha) < 0.5:
            raise InvalidInputError(
                f"alpha must lie in the open interval (0, 0.5), got {self.alpha}"
            )
        scale = 1.0 + float(np.max(np.abs(sigma)))
        if float(np.max(np.abs(sigma - sigma.T))) > 1e-12 * scale:
            raise InvalidInputError("sigma must be symmetric within 1e-12 relative tolerance")
        eig_floor = -1e-10 * max(float(np.trace(sigma)), 0.0) / nv
        min_eig = float(np.linalg.eigvalsh(sigma)[0])
        if min_eig < eig_floor:
            raise InvalidInputError(
                f"sigma has eigenvalue {min_eig:.3e} below the PSD floor {eig_floor:.3e}"
            )
        object.__setattr__(self, "num_viewer_types", nv)
        object.__setattr__(self, "num_campaigns", nk)
        object.__setattr__(self, "targeting", _freeze(targeting))
        object.__setattr__(self, "mu", _freeze(mu))
        object.__setattr__(self, "sigma", _freeze(sigma))
        object.__setattr__(self, "goals", _freeze(goals))
        object.__setattr__(self, "weights", _freeze(weights))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def decision_count(self) -> int:
        """Number of (viewer type, campaign) targeting pairs."""
        return int(self.targeting.sum())


def targeting_pairs(instance: Instance) -> tuple[tuple[int, int], ...]:
    """Canonical decision order: (v, k) campaign-major, viewer type ascending."""
    return tuple(
        (int(v), int(k))
        for k in range(instance.num_campaigns)
        for v in np.flatnonzero(instance.targeting[k])
    )


def campaign_members(instance: Instance) -> list[np.ndarray]:
    """Viewer-type indices targeted by each campaign, ascending."""
    return [np.flatnonzero(instance.targeting[k]) for k in range(instance.num_campaigns)]


def campaign_slices(instance: Instance) -> list[slice]:
    """Slice of the canonical decision vector owned by each campaign."""
    sizes = instance.targeting.sum(axis=1)
    stops = np.cumsum(sizes)
    starts = stops - sizes
    return [slice(int(a), int(b)) for a, b in zip(starts, stops)]


@dataclass(frozen=True)
class Allocation:
    """Decision vector p_vk over the targeting pairs, in canonical order."""

    pairs: tuple[tuple[int, int], ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.pairs),):
            raise InvalidInputError(
                f"allocation has {values.shape[0]} values for {len(self.pairs)} pairs"
            )
        if np.any(values < -1e-12):
            raise InvalidInputError(
                f"allocation proportions must be non-negative, min={values.min():.3e}"
            )
        values = np.maximum(values, 0.0)
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "pairs", tuple(self.pairs))

    @classmethod
    def from_vector(cls, instance: Instance, values: Sequence[float]) -> "Allocation":
        pairs = targeting_pairs(instance)
        alloc = cls(pairs=pairs, values=np.asarray(values, dtype=float))
        alloc.validate_against(instance)
        return alloc

    def validate_against(self, instance: Instance) -> None:
        if self.pairs != targeting_pairs(instance):
            raise InvalidInputError("allocation entries do not match the instance targeting")
        col_sums = np.zeros(instance.num_viewer_types)
        for (v, _k), val in zip(self.pairs, self.values):
            col_sums[v] += val
        worst = float(col_sums.max()) if col_sums.size else 0.0
        if worst > 1.0 + 1e-9:
            raise InvalidInputError(
                f"viewer-type budget exceeded: max proportion sum {worst:.12f} > 1"
            )

    def value(self, v: int, k: int) -> float:
        idx = self.pairs.index((v, k))
        return float(self.values[idx])

    def by_campaign(self, instance: Instance) -> list[np.ndarray]:
        """Per-campaign proportion vectors in viewer-type-ascending order."""
        return [self.values[s] for s in campaign_slices(instance)]


@dataclass(frozen=True)
class ScenarioSet:
    """Sampled supply vectors, one scenario per row, with their seed."""

    samples: np.ndarray
    seed: int | None
    distribution_tag: str = "multivariate_normal"

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise InvalidInputError(f"scenario matrix must be 2-D with N >= 1, got {samples.shape}")
        object.__setattr__(self, "samples", _freeze(samples))

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class FulfillmentEstimate:
    """Monte Carlo estimate of the probability that all campaigns are fulfilled."""

    successes: int
    trials: int
    point_estimate: float
    lower_confidence: float
    confidence_level: float

    def __post_init__(self) -> None:
        if self.trials <= 0:
            raise InvalidInputError("trials must be positive")
        if not 0 <= self.successes <= self.trials:
            raise InvalidInputError("successes must be in [0, trials]")
        if self.lower_confidence > self.point_estimate + 1e-15:
            raise InvalidInputError("lower confidence bound exceeds the point estimate")

    def to_json_dict(self) -> dict:
        return {
            "successes": self.successes,
            "trials": self.trials,
            "point_estimate": self.point_estimate,
            "lower_confidence": self.lower_confidence,
            "confidence_level": self.confidence_level,
        }


def objective_value(instance: Instance, allocation: Allocation) -> float:
    """Weighted within-campaign variance of allocation proportions.

    Returns sum_k (w_k/|V_k|) sum_{v in V_k} (p_vk - mean_k)^2 at natural
    scale; the x1000 readability factor is applied only at report emission.
    """
    allocation.validate_against(instance)
    total = 0.0
    blocks = allocation.by_campaign(instance)
    for k, block in enumerate(blocks):
        w = float(instance.weights[k])
        if block.size == 0 or w == 0.0:
            continue
        centered = block - block.mean()
        total += (w / block.size) * float(centered @ centered)
    return total


@dataclass(frozen=True)
class GenSpec:
    """Ranges for random test-problem generation."""

    k_range: tuple[int, int] = (5, 10)
    v_range: tuple[int, int] = (10, 20)
    targeting_density: float = 0.5
    mu_range: tuple[float, float] = (1000.0, 10000.0)
    variance_factor_range: tuple[float, float] = (0.25, 0.5)
    goal_factor_range: tuple[float, float] = (0.5, 0.75)
    weight: float = 1.0
    alpha: float = 0.1

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("k_range", self.k_range),
            ("v_range", self.v_range),
            ("mu_range", self.mu_range),
            ("variance_factor_range", self.variance_factor_range),
            ("goal_factor_range", self.goal_factor_range),
        ):
            if lo > hi:
                raise InvalidInputError(f"{name} is empty: {lo} > {hi}")
        if self.k_range[0] < 1 or self.v_range[0] < 1:
            raise InvalidInputError("campaign and viewer-type counts must be at least 1")
        if not 0.0 <= self.targeting_density <= 1.0:
            raise InvalidInputError("targeting_density must be in [0, 1]")
        if self.mu_range[0] <= 0.0:
            raise InvalidInputError("mu_range must be strictly positive")
        if self.goal_factor_range[0] <= 0.0:
            raise InvalidInputError("goal_factor_range must be strictly positive")
        if not 0.0 < self.alpha < 0.5:
            raise InvalidInputError("alpha must lie in (0, 0.5)")


def random_correlation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random Gram correlation matrix of unit vectors on the sphere.

    Each off-diagonal entry is computed once and mirrored, so the result is
    bitwise symmetric; the diagonal is exactly 1.
    """
    dim = int(dim)
    if dim < 1:
        raise InvalidInputError(f"dimension must be at least 1, got {dim}")
    raw = rng.standard_normal((dim, dim))
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms == 0.0):
        raise InvalidInputError("degenerate zero draw while sampling sphere directions")
    units = raw / norms[:, None]
    corr = np.eye(dim)
    for i in range(dim):
        for j in range(i + 1, dim):
            g = float(units[i] @ units[j])
            corr[i, j] = g
            corr[j, i] = g
    return corr


def generate_instance(gen_spec: GenSpec, rng_seed: int) -> Instance:
    """Random test problem drawn from the given ranges, reproducibly.

    Targeting is a Bernoulli matrix repaired so every campaign and viewer
    type is covered: empty rows are fixed first (ascending), then empty
    columns (ascending), each by setting one uniformly random cell.
    """
    rng = derive_rng(rng_seed, STREAM_INSTANCE)
    nk = int(rng.integers(gen_spec.k_range[0], gen_spec.k_range[1] + 1))
    nv = int(rng.integers(gen_spec.v_range[0], gen_spec.v_range[1] + 1))
    targeting = rng.random((nk, nv)) < gen_spec.targeting_density
    for k in range(nk):
        if not targeting[k].any():
            targeting[k, int(rng.integers(nv))] = True
    for v in range(nv):
        if not targeting[:, v].any():
            targeting[int(rng.integers(nk)), v] = True
    mu = rng.uniform(gen_spec.mu_range[0], gen_spec.mu_range[1], size=nv)
    var_factor = rng.uniform(*gen_spec.variance_factor_range, size=nv)
    variances = var_factor * mu
    corr = random_correlation(nv, rng)
    std = np.sqrt(variances)
    sigma = corr * np.outer(std, std)
    goal_factor = rng.uniform(*gen_spec.goal_factor_range, size=nk)
    per_type_share = mu / targeting.sum(axis=0)
    goals = np.array(
        [goal_factor[k] * per_type_share[targeting[k]].sum() for k in range(nk)]
    )
    weights = np.full(nk, gen_spec.weight, dtype=float)
    return Instance(
        num_viewer_types=nv,
        num_campaigns=nk,
        targeting=targeting,
        mu=mu,
        sigma=sigma,
        goals=goals,
        weights=weights,
        alpha=gen_spec.alpha,
    )


def sample_supply(instance: Instance, n: int, rng_seed: int) -> ScenarioSet:
    """n i.i.d. multivariate-normal supply draws mu + L z.

    Values are kept exactly as sampled; no truncation of negative supply.
    """
    n = int(n)
    if n < 1:
        raise InvalidInputError(f"scenario count must be positive, got {n}")
    factor = numerics.jittered_cholesky(instance.sigma)
    rng = derive_rng(rng_seed, STREAM_SCENARIOS)
    z = rng.standard_normal((n, instance.num_viewer_types))
    samples = instance.mu + z @ factor.T
    return ScenarioSet(samples=samples, seed=int(rng_seed) & _MASK64)


def fulfillment_successes(
    instance: Instance, allocation: Allocation, samples: np.ndarray
) -> int:
    """Count scenarios in which every campaign reaches its goal."""
    ok = np.ones(samples.shape[0], dtype=bool)
    blocks = allocation.by_campaign(instance)
    for k, members in enumerate(campaign_members(instance)):
        served = samples[:, members] @ blocks[k]
        ok &= served >= instance.goals[k]
    return int(ok.sum())


def estimate_fulfillment(
    instance: Instance,
    allocation: Allocation,
    trials: int = 100_000,
    confidence: float = 0.99,
    rng_seed: int = 0,
) -> FulfillmentEstimate:
    """Monte Carlo fulfillment probability with an exact one-sided lower bound.

    Scenario indicators are treated as a Bernoulli sample; the lower bound is
    the Clopper-Pearson bound at the given confidence. Scenarios are drawn in
    fixed-size chunks with per-chunk substreams, so the count is independent
    of how the chunks are scheduled.
    """
    trials = int(trials)
    if trials <= 0:
        raise InvalidInputError(f"trials must be positive, got {trials}")
    allocation.validate_against(instance)
    factor = numerics.jittered_cholesky(instance.sigma)
    members = campaign_members(instance)
    blocks = allocation.by_campaign(instance)
    successes = 0
    done = 0
    chunk_index = 0
    while done < trials:
        size = min(_EVAL_CHUNK, trials - done)
        rng = derive_rng(rng_seed, STREAM_EVALUATION, chunk_index)
        z = rng.standard_normal((size, instance.num_viewer_types))
        samples = instance.mu + z @ factor.T
        ok = np.ones(size, dtype=bool)
        for k in range(instance.num_campaigns):
            ok &= samples[:, members[k]] @ blocks[k] >= instance.goals[k]
        successes += int(ok.sum())
        done += size
        chunk_index += 1
    point = successes / trials
    lower = numerics.binomial_lower_confidence(successes, trials, confidence)
    return FulfillmentEstimate(
        successes=successes,
        trials=trials,
        point_estimate=point,
        lower_confidence=lower,
        confidence_level=confidence,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def instance_to_json(instance: Instance) -> str:
    doc = {
        "num_viewer_types": instance.num_viewer_types,
        "num_campaigns": instance.num_campaigns,
        "targeting": instance.targeting.astype(int).tolist(),
        "mu": instance.mu.tolist(),
        "sigma": instance.sigma.tolist(),
        "goals": instance.goals.tolist(),
        "weights": instance.weights.tolist(),
        "alpha": instance.alpha,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def instance_from_json(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(
            f"malformed instance JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    required = {
        "num_viewer_types", "num_campaigns", "targeting",
        "mu", "sigma", "goals", "weights", "alpha",
    }
    missing = required - doc.keys()
    if missing:
        raise InvalidInputError(f"instance JSON missing fields: {sorted(missing)}")
    return Instance(
        num_viewer_types=int(doc["num_viewer_types"]),
        num_campaigns=int(doc["num_campaigns"]),
        targeting=np.asarray(doc["targeting"], dtype=bool),
        mu=np.asarray(doc["mu"], dtype=float),
        sigma=np.asarray(doc["sigma"], dtype=float),
        goals=np.asarray(doc["goals"], dtype=float),
        weights=np.asarray(doc["weights"], dtype=float),
        alpha=float(doc["alpha"]),
    )


def write_scenario_csv(scenarios: ScenarioSet, path: str) -> None:
    """CSV export: one scenario per row, 17 significant digits."""
    nv = scenarios.samples.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"v{i}" for i in range(nv)])
        for row in scenarios.samples:
            writer.writerow([f"{x:.17g}" for x in row])


def read_scenario_csv(path: str, seed: int | None = None) -> ScenarioSet:
    """Load a scenario CSV produced by write_scenario_csv.

    The seed is not stored in the CSV; pass it explicitly if known,
    otherwise the set is marked as externally supplied (seed None).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or not header[0].startswith("v"):
            raise InvalidInputError(f"{path} does not look like a scenario CSV")
        rows = [[float(x) for x in row] for row in reader if row]
    if not rows:
        raise InvalidInputError(f"{path} contains no scenarios")
    return ScenarioSet(samples=np.asarray(rows, dtype=float), seed=seed)
