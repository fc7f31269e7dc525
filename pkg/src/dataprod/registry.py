"""Tool registry: descriptors, declarative preconditions, metric impacts.

Preconditions are threshold rules over named snapshot quantities rather than
arbitrary code, so the UI can always display *why* a tool is inapplicable.
The registry is written at startup and read-only afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import DuplicateToolError, UnknownToolError, ValidationError
from .metrics import MetricsEngine
from .state import DataProductState, ScopeLevel


def _shared_join_patterns(state: DataProductState) -> float:
    counts: dict[str, int] = {}
    for qv in state.latest_queries():
        key = qv.analysis.join_pattern_key
        if key:
            counts[key] = counts.get(key, 0) + 1
    return float(sum(1 for c in counts.values() if c >= 2))


def _unclustered_with_sql(state: DataProductState) -> float:
    return float(sum(1 for qid in state.questions_with_sql() if qid not in state.topics))


QUANTITIES: dict[str, Callable[[DataProductState], float]] = {
    "table_count": lambda s: float(len(s.tables)),
    "question_count": lambda s: float(len(s.questions)),
    "questions_with_sql": lambda s: float(len(s.questions_with_sql())),
    "questions_without_sql": lambda s: float(len(s.questions_without_sql())),
    "view_count": lambda s: float(len(s.views)),
    "shared_join_patterns": _shared_join_patterns,
    "unclustered_questions_with_sql": _unclustered_with_sql,
}

_COMPARATORS: dict[str, Callable[[float, float], bool]] = {
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    "==": lambda a, b: a == b,
}


@dataclass(frozen=True)
class PreconditionRule:
    quantity: str
    comparator: str
    threshold: float

    def __post_init__(self):
        if self.quantity not in QUANTITIES:
            raise ValidationError(f"unknown precondition quantity {self.quantity!r}")
        if self.comparator not in _COMPARATORS:
            raise ValidationError(f"unknown comparator {self.comparator!r}")

    def holds(self, state: DataProductState) -> bool:
        return _COMPARATORS[self.comparator](QUANTITIES[self.quantity](state), self.threshold)

    def describe(self) -> str:
        return f"{self.quantity} {self.comparator} {self.threshold:g}"


@dataclass(frozen=True)
class ToolParam:
    name: str
    semantic_type: str  # "count" | "table_list" | ...
    required: bool = True
    minimum: Optional[float] = None
    maximum: Optional[float] = None


@dataclass(frozen=True)
class Impact:
    metric_id: str
    sign: str  # "increase" | "decrease" | "optimize"
    weight: float

    def __post_init__(self):
        if self.sign not in ("increase", "decrease", "optimize"):
            raise ValidationError(f"bad impact sign {self.sign!r}")
        if self.weight <= 0:
            raise ValidationError("impact weight must be positive")


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    input_params: tuple[ToolParam, ...]
    output_schema: tuple[str, ...]  # artifact kinds produced
    execution_context: ScopeLevel
    preconditions: tuple[PreconditionRule, ...]
    impacts: tuple[Impact, ...] = ()

    def to_catalog_entry(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "input_params": [
                {"name": p.name, "semantic_type": p.semantic_type,
                 "required": p.required, "minimum": p.minimum, "maximum": p.maximum}
                for p in self.input_params
            ],
            "output_schema": list(self.output_schema),
            "execution_context": self.execution_context.value,
            "preconditions": [p.describe() for p in self.preconditions],
            "impacts": [
                {"metric_id": i.metric_id, "sign": i.sign, "weight": i.weight}
                for i in self.impacts
            ],
        }


class ToolRegistry:
    def __init__(self, engine: MetricsEngine):
        self._engine = engine
        self._tools: dict[str, ToolDescriptor] = {}

    def register(self, descriptor: ToolDescriptor) -> None:
        if descriptor.name in self._tools:
            raise DuplicateToolError(f"tool {descriptor.name!r} already registered")
        for impact in descriptor.impacts:
            self._engine.definition(impact.metric_id)  # raises UnknownMetricError
        self._tools[descriptor.name] = descriptor

    def get(self, name: str) -> ToolDescriptor:
        try:
            return self._tools[name]
        except KeyError:
            raise UnknownToolError(f"tool {name!r} not registered") from None

    def all_tools(self) -> list[ToolDescriptor]:
        return list(self._tools.values())  # registration order (dict is ordered)

    def applicable_tools(self, state: DataProductState) -> list[ToolDescriptor]:
        """Tools whose every precondition holds, in registration order."""
        return [
            tool for tool in self._tools.values()
            if all(rule.holds(state) for rule in tool.preconditions)
        ]

    def failed_preconditions(self, state: DataProductState,
                             name: str) -> list[PreconditionRule]:
        return [rule for rule in self.get(name).preconditions if not rule.holds(state)]

    def catalog(self) -> list[dict]:
        return [tool.to_catalog_entry() for tool in self._tools.values()]


DIRECT_WEIGHT = 1.0
INDIRECT_WEIGHT = 0.5


def default_tool_descriptors() -> list[ToolDescriptor]:
    """The five baseline tools with their default precondition/impact table."""
    return [
        ToolDescriptor(
            name="question_generation",
            description=("Generates natural-language questions over the schema, "
                         "preferring uncovered tables."),
            input_params=(
                ToolParam("count", "count", minimum=1),
                ToolParam("priority_tables", "table_list", required=False),
            ),
            output_schema=("questions",),
            execution_context=ScopeLevel.DATABASE,
            preconditions=(PreconditionRule("table_count", ">=", 1),),
            impacts=(
                Impact("question_count", "increase", DIRECT_WEIGHT),
                Impact("table_coverage", "increase", INDIRECT_WEIGHT),
                Impact("column_coverage", "increase", INDIRECT_WEIGHT),
            ),
        ),
        ToolDescriptor(
            name="text_to_sql",
            description="Synthesizes executable SQL for questions that lack it.",
            input_params=(ToolParam("max_questions", "count", minimum=1),),
            output_schema=("query_versions", "answers"),
            execution_context=ScopeLevel.DATABASE,
            preconditions=(PreconditionRule("questions_without_sql", ">", 0),),
            impacts=(
                Impact("table_coverage", "increase", DIRECT_WEIGHT),
                Impact("column_coverage", "increase", DIRECT_WEIGHT),
                Impact("avg_query_length", "optimize", INDIRECT_WEIGHT),
                Impact("avg_query_complexity", "optimize", INDIRECT_WEIGHT),
                Impact("avg_exec_speed", "optimize", INDIRECT_WEIGHT),
            ),
        ),
        ToolDescriptor(
            name="followup_generation",
            description=("Chains follow-up questions onto answered ones, "
                         "extending their SQL."),
            input_params=(ToolParam("count", "count", minimum=1),),
            output_schema=("questions", "query_versions", "answers"),
            execution_context=ScopeLevel.DATABASE,
            preconditions=(PreconditionRule("questions_with_sql", ">", 0),),
            impacts=(
                Impact("question_count", "increase", DIRECT_WEIGHT),
                Impact("avg_query_length", "increase", DIRECT_WEIGHT),
            ),
        ),
        ToolDescriptor(
            name="view_creation",
            description=("Materializes shared join patterns as views and "
                         "rewrites the affected queries."),
            input_params=(ToolParam("max_views", "count", minimum=1),),
            output_schema=("views", "query_versions", "answers"),
            execution_context=ScopeLevel.DATABASE,
            preconditions=(PreconditionRule("shared_join_patterns", ">=", 1),),
            impacts=(
                Impact("avg_query_length", "decrease", DIRECT_WEIGHT),
                Impact("avg_query_complexity", "decrease", DIRECT_WEIGHT),
                Impact("table_coverage", "increase", INDIRECT_WEIGHT),
                Impact("column_coverage", "increase", INDIRECT_WEIGHT),
            ),
        ),
        ToolDescriptor(
            name="topic_mapping",
            description="Clusters answered questions into labeled topics.",
            input_params=(),
            output_schema=("topic_assignments",),
            execution_context=ScopeLevel.DATABASE,
            preconditions=(
                PreconditionRule("questions_with_sql", ">=", 10),
                PreconditionRule("unclustered_questions_with_sql", ">=", 1),
            ),
            impacts=(),  # organizational only; contributes nothing toward gaps
        ),
    ]


def build_default_registry(engine: MetricsEngine) -> ToolRegistry:
    registry = ToolRegistry(engine)
    for descriptor in default_tool_descriptors():
        registry.register(descriptor)
    return registry
