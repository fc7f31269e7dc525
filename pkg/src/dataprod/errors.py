"""Exception hierarchy shared by every subsystem.

Each error carries a machine-readable ``code`` so the HTTP layer can surface
failures without string-matching messages.
"""

from __future__ import annotations


class DataProdError(Exception):
    """Base class for all domain errors."""

    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


# --- state-core ---

class DanglingReferenceError(DataProdError):
    code = "dangling_reference"


class DuplicateIdentifierError(DataProdError):
    code = "duplicate_identifier"


class UnknownQuestionError(DataProdError):
    code = "unknown_question"


# --- sql analysis ---

class SqlParseError(DataProdError):
    code = "sql_parse_error"


class UnresolvedIdentifierError(DataProdError):
    code = "unresolved_identifier"


class PatternMismatchError(DataProdError):
    code = "pattern_mismatch"


# --- metrics ---

class DuplicateMetricError(DataProdError):
    code = "duplicate_metric"


class UnknownMetricError(DataProdError):
    code = "unknown_metric"


class MissingValueError(DataProdError):
    code = "missing_value"


# --- tool registry / baseline tools ---

class DuplicateToolError(DataProdError):
    code = "duplicate_tool"


class UnknownToolError(DataProdError):
    code = "unknown_tool"


class ParameterBoundsError(DataProdError):
    code = "parameter_bounds"


class NoEligibleQuestionError(DataProdError):
    code = "no_eligible_question"


class NoParentAvailableError(DataProdError):
    code = "no_parent_available"


class NoSharedPatternError(DataProdError):
    code = "no_shared_pattern"


# --- connector ---

class DataSourceConnectionError(DataProdError):
    code = "connection_error"


class EmptySchemaError(DataProdError):
    code = "empty_schema"


class NameCollisionError(DataProdError):
    code = "name_collision"


# --- version store ---

class EmptyArtifactListError(DataProdError):
    code = "empty_artifact_list"


# --- orchestrator / api ---

class NoPendingApprovalError(DataProdError):
    code = "no_pending_approval"


class UnknownIterationError(DataProdError):
    code = "unknown_iteration"


class BusyError(DataProdError):
    code = "busy"


class InvalidTransitionError(DataProdError):
    code = "invalid_transition"


class NotConnectedError(DataProdError):
    code = "not_connected"


class NotFoundError(DataProdError):
    code = "not_found"


class ValidationError(DataProdError):
    code = "validation_error"
