"""Solve reports: the common result record emitted by every bound solver."""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .errors import InvalidInputError
from .model import Allocation

__all__ = ["SolveReport", "validate_report_dict", "report_schema"]

_SCHEMA_CACHE: dict | None = None


def report_schema() -> dict:
    global _SCHEMA_CACHE
    if _SCHEMA_CACHE is None:
        text = (
            importlib.resources.files("adalloc.schemas")
            .joinpath("solve_report.schema.json")
            .read_text()
        )
        _SCHEMA_CACHE = json.loads(text)
    return _SCHEMA_CACHE


def validate_report_dict(doc: dict) -> None:
    try:
        jsonschema.validate(doc, report_schema())
    except jsonschema.ValidationError as exc:
        raise InvalidInputError(f"solve report fails its schema: {exc.message}") from exc


@dataclass
class SolveReport:
    """Outcome of one bound computation on one instance."""

    bound_kind: str
    status: str
    objective: float | None
    allocation: Allocation | None
    alpha_budget: list[float] | None = None
    iterations: int = 0
    wall_time_seconds: float | None = None
    pf_estimate: float | None = None
    pf_lower_confidence: float | None = None
    seed: int | None = None
    note: str | None = None
    trace: list[dict] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "warning")

    def to_json_dict(self, include_wall_time: bool = True) -> dict:
        doc = {
            "bound_kind": self.bound_kind,
            "status": self.status,
            "objective": self.objective,
            "objective_x1000": None if self.objective is None else 1000.0 * self.objective,
            "allocation": None
            if self.allocation is None
            else [float(v) for v in np.asarray(self.allocation.values)],
            "alpha_budget": None
            if self.alpha_budget is None
            else [float(a) for a in self.alpha_budget],
            "iterations": int(self.iterations),
            "pf_estimate": self.pf_estimate,
            "pf_lower_confidence": self.pf_lower_confidence,
            "seed": self.seed,
            "note": self.note,
            "trace": self.trace,
            "extra": self.extra or None,
        }
        if include_wall_time:
            doc["wall_time_seconds"] = self.wall_time_seconds
        validate_report_dict(doc)
        return doc

    def to_json(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_json_dict(include_wall_time), indent=2, sort_keys=True)
