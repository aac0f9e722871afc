"""
Custom exceptions for the embodied captioning lab.
"""

from typing import Optional


class EmbodiedCaptioningError(Exception):
    """Base exception for all errors raised by the package."""

    exit_code = 3

    def __init__(self, message: str, status_code: Optional[int] = None, details: Optional[dict] = None):
        self.message = message
        self.status_code = status_code
        self.details = details or {}
        super().__init__(self.message)

    def __str__(self):
        if self.status_code:
            return f"[{self.status_code}] {self.message}"
        return self.message


# Remote services


class RemoteServiceError(EmbodiedCaptioningError):
    """Base exception for failures of a remote captioner, embedder or LLM."""

    exit_code = 4


class AuthenticationError(RemoteServiceError):
    """Raised when the remote service rejects the credentials (401 Unauthorized)."""

    def __init__(self, message: str = "Authentication failed", status_code: int = 401, details: dict = None):
        super().__init__(message, status_code, details)


class ValidationError(RemoteServiceError):
    """Raised when the remote service rejects the request body (400 Bad Request)."""

    def __init__(self, message: str = "Validation error", status_code: int = 400, details: dict = None):
        super().__init__(message, status_code, details)


class NotFoundError(RemoteServiceError):
    """Raised when the remote endpoint does not exist (404 Not Found)."""

    def __init__(self, message: str = "Resource not found", status_code: int = 404, details: dict = None):
        super().__init__(message, status_code, details)


class APIError(RemoteServiceError):
    """Raised for remote server errors (5xx) and unexpected statuses."""

    def __init__(self, message: str = "API error occurred", status_code: int = 500, details: dict = None):
        super().__init__(message, status_code, details)


class TransportError(RemoteServiceError):
    """Raised when a request cannot be completed after all retries."""

    def __init__(self, message: str = "Transport failure", status_code: int = None, details: dict = None):
        super().__init__(message, status_code, details)


# Simulation and mapping


class GenerationError(EmbodiedCaptioningError):
    """Raised when a scene specification cannot be realised."""


class PoseError(EmbodiedCaptioningError):
    """Raised when the agent pose lies inside occupied space."""


class ContractError(EmbodiedCaptioningError):
    """Raised when an operation is called with inputs violating its preconditions."""


# Exploration


class NoPathError(EmbodiedCaptioningError):
    """Raised when the planner cannot reach the goal."""


class NoGoalError(EmbodiedCaptioningError):
    """Raised when a policy finds no reachable goal."""


class ExplorationComplete(EmbodiedCaptioningError):
    """Raised when no frontier is left to explore."""

    exit_code = 0


# Consensus, metrics and training


class ReplyParseError(EmbodiedCaptioningError):
    """Raised when an LLM reply holds no well-formed caption tag."""


class DegenerateCorpusError(EmbodiedCaptioningError):
    """Raised when CIDEr is requested on fewer than two instances."""


class EvaluationError(EmbodiedCaptioningError):
    """Raised when predictions and annotations share no instance."""


class EmptyDatasetError(EmbodiedCaptioningError):
    """Raised when fine-tuning is requested on an empty dataset."""


# Orchestration


class ConfigError(EmbodiedCaptioningError):
    """Raised when the run configuration is invalid."""

    exit_code = 2


class SchemaVersionError(EmbodiedCaptioningError):
    """Raised when an artifact header is missing or carries an unexpected version."""


class ReportError(EmbodiedCaptioningError):
    """Raised when manifests cannot be combined into one report."""


class PhaseError(EmbodiedCaptioningError):
    """Raised when a pipeline phase fails; carries the partial manifest."""

    exit_code = 3

    def __init__(self, message: str, phase: str, manifest=None, details: Optional[dict] = None):
        super().__init__(message, None, details)
        self.phase = phase
        self.manifest = manifest
