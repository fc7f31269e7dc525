"""Action selection and parameter calibration.

The planner scores every applicable tool by how much of the current contract
gap it is declared to move: ``score(tool) = Σ weight(tool, m) · gap(m)`` over
metrics where the tool's declared sign actually points toward the target
("optimize" always counts, "increase" only for maximized metrics, "decrease"
only for minimized ones). The argmax wins; ties fall back to registration
order, which keeps runs deterministic.

Calibration turns the selected tool into concrete parameters. The question
budget grows with the number of uncovered tables: 20 when ten or fewer need
attention, 80 when more than fifty do, interpolated linearly in between.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .metrics import Direction, GapVector, MetricsEngine
from .registry import ToolDescriptor, ToolRegistry
from .state import ContextScope, DataProductState

STAGNATION_EPSILON = 0.01
STAGNATION_DELTAS = 3
QUESTION_BATCH_MIN = 20
QUESTION_BATCH_MAX = 80
MAX_VIEWS_PER_RUN = 5
MAX_FOLLOWUPS_PER_RUN = 10


@dataclass(frozen=True)
class ActionProposal:
    tool_name: str
    target_scope: ContextScope
    parameters: dict
    expected_improvement: float
    rationale: str
    iteration: int

    def to_payload(self) -> dict:
        """Wire form; field names are part of the API contract."""
        return {
            "tool_name": self.tool_name,
            "target_scope": {
                "level": self.target_scope.level.value,
                "ids": list(self.target_scope.ids),
            },
            "parameters": dict(self.parameters),
            "expected_improvement": self.expected_improvement,
            "rationale": self.rationale,
            "iteration": self.iteration,
        }


@dataclass(frozen=True)
class PlannerVerdict:
    kind: str  # "propose" | "converged" | "manual_review"
    proposal: Optional[ActionProposal] = None
    reason: str = ""

    @staticmethod
    def propose(proposal: ActionProposal) -> "PlannerVerdict":
        return PlannerVerdict("propose", proposal=proposal)

    @staticmethod
    def converged() -> "PlannerVerdict":
        return PlannerVerdict("converged")

    @staticmethod
    def manual_review(reason: str) -> "PlannerVerdict":
        return PlannerVerdict("manual_review", reason=reason)


def uncovered_tables(state: DataProductState) -> list[str]:
    """Tables no latest query references, largest first."""
    covered: set[str] = set()
    for qv in state.latest_queries():
        covered.update(qv.analysis.referenced_tables)
    missing = [t for t in state.tables.values() if t.table_id not in covered]
    missing.sort(key=lambda t: (-t.row_count_estimate, t.table_id))
    return [t.table_id for t in missing]


def question_batch_size(n_uncovered: int) -> int:
    if n_uncovered > 50:
        return QUESTION_BATCH_MAX
    if n_uncovered <= 10:
        return QUESTION_BATCH_MIN
    return round(QUESTION_BATCH_MIN + 1.5 * (n_uncovered - 10))


def calibrate(tool_name: str, state: DataProductState, gap: GapVector) -> dict:
    """Concrete parameters for the selected tool on this snapshot."""
    if tool_name == "question_generation":
        missing = uncovered_tables(state)
        return {
            "count": question_batch_size(len(missing)),
            "priority_tables": missing,
        }
    if tool_name == "text_to_sql":
        return {"max_questions": len(state.questions_without_sql())}
    if tool_name == "view_creation":
        patterns: dict[str, int] = {}
        for qv in state.latest_queries():
            key = qv.analysis.join_pattern_key
            if key:
                patterns[key] = patterns.get(key, 0) + 1
        shared = sum(1 for c in patterns.values() if c >= 2)
        return {"max_views": min(MAX_VIEWS_PER_RUN, shared)}
    if tool_name == "followup_generation":
        return {"count": min(MAX_FOLLOWUPS_PER_RUN, len(state.questions_with_sql()))}
    return {}


def expected_improvement(tool: ToolDescriptor, gap: GapVector,
                         engine: MetricsEngine) -> float:
    """Gap-weighted score of a tool's declared impacts."""
    gaps = gap.by_metric()
    score = 0.0
    for impact in tool.impacts:
        g = gaps.get(impact.metric_id)
        if not g:
            continue
        direction = engine.definition(impact.metric_id).direction
        helps = (
            impact.sign == "optimize"
            or (impact.sign == "increase" and direction is Direction.MAXIMIZE)
            or (impact.sign == "decrease" and direction is Direction.MINIMIZE)
        )
        if helps:
            score += impact.weight * g
    return score


def detect_stagnation(history: Sequence[float],
                      epsilon: float = STAGNATION_EPSILON,
                      deltas: int = STAGNATION_DELTAS) -> bool:
    """True when the last ``deltas`` consecutive improvements are all below
    ``epsilon`` (diminishing returns)."""
    if len(history) < deltas + 1:
        return False
    recent = history[-(deltas + 1):]
    return all(recent[i] - recent[i + 1] < epsilon for i in range(deltas))


def _rationale(tool: ToolDescriptor, gap: GapVector, engine: MetricsEngine,
               score: float) -> str:
    gaps = gap.by_metric()
    worst = max(gap.entries, key=lambda e: e.normalized_gap)
    shown = "unknown" if worst.value is None else f"{worst.value:.4g}"
    touched = [i.metric_id for i in tool.impacts if gaps.get(i.metric_id)]
    return (
        f"{worst.metric_id} is {shown} vs target {worst.target:g} "
        f"(gap {worst.normalized_gap:.3f}); {tool.name} addresses "
        f"{', '.join(touched) if touched else 'no open gap directly'} "
        f"with expected improvement {score:.3f}"
    )


def plan(state: DataProductState, gap: GapVector, history: Sequence[float],
         engine: MetricsEngine, registry: ToolRegistry, iteration: int,
         suppressed: Iterable[tuple[str, str]] = (),
         epsilon: float = STAGNATION_EPSILON,
         deltas: int = STAGNATION_DELTAS) -> PlannerVerdict:
    """One planning decision: converge, flag diminishing returns, or propose
    the single highest-impact applicable action.

    ``suppressed`` is a set of (tool_name, scope key) pairs a human recently
    rejected; they are excluded from the candidate set.
    """
    if gap.total_gap == 0:
        return PlannerVerdict.converged()
    if detect_stagnation(history, epsilon, deltas):
        recent = ", ".join(f"{g:.4f}" for g in history[-(deltas + 1):])
        return PlannerVerdict.manual_review(
            f"diminishing returns: last total gaps [{recent}] improved by "
            f"less than {epsilon:g} per iteration")

    scope = ContextScope.database()
    blocked = set(suppressed)
    candidates = [
        tool for tool in registry.applicable_tools(state)
        if (tool.name, scope.key()) not in blocked
    ]
    if not candidates:
        return PlannerVerdict.manual_review("no applicable tool")

    best = None
    best_score = -1.0
    for tool in candidates:  # registration order; strict > keeps first on ties
        score = expected_improvement(tool, gap, engine)
        if score > best_score:
            best, best_score = tool, score
    assert best is not None
    proposal = ActionProposal(
        tool_name=best.name,
        target_scope=scope,
        parameters=calibrate(best.name, state, gap),
        expected_improvement=best_score,
        rationale=_rationale(best, gap, engine, best_score),
        iteration=iteration,
    )
    return PlannerVerdict.propose(proposal)
