"""Structured error handling for moe-quant-bench

Every failure raised by the library is a QuantException carrying a
QuantError record with an error code, details and an optional hint. The
CLI maps error categories onto process exit codes.
"""

from __future__ import annotations

from datetime import datetime
from typing import Any, Dict, Optional, Type, TypeVar

from pydantic import BaseModel, Field


class QuantError(BaseModel):
    """Structured error data model

    Provides detailed error information with hints for resolution.
    """

    code: str = Field(description="Error code following the defined system")
    message: str = Field(description="User-friendly error message")
    details: Dict[str, Any] = Field(default_factory=dict, description="Additional error details")
    input_snapshot: Dict[str, Any] = Field(default_factory=dict, description="Input state at error time")
    hint: Optional[str] = Field(default=None, description="Hint for resolving the error")
    recoverable: bool = Field(default=False, description="Whether the error is recoverable")
    timestamp: datetime = Field(default_factory=datetime.now, description="When the error occurred")

    def __str__(self) -> str:
        msg = f"[{self.code}] {self.message}"
        if self.hint:
            msg += f"\nHint: {self.hint}"
        return msg


class ErrorCode:
    """Error code system"""

    # Input related errors
    INVALID_SPEC = "INVALID_SPEC"
    INVALID_ARGUMENT = "INVALID_ARGUMENT"
    INVALID_PLAN = "INVALID_PLAN"
    INVALID_ALPHA = "INVALID_ALPHA"
    TOKEN_OUT_OF_RANGE = "TOKEN_OUT_OF_RANGE"
    MISSING_USAGE = "MISSING_USAGE"
    CONTAINER_FORMAT = "CONTAINER_FORMAT"

    # Data related errors
    EMPTY_CALIBRATION = "EMPTY_CALIBRATION"
    EMPTY_TRACE = "EMPTY_TRACE"

    # Numerical errors
    NOT_POSITIVE_DEFINITE = "NOT_POSITIVE_DEFINITE"
    NOT_SYMMETRIC = "NOT_SYMMETRIC"
    ZERO_VECTOR = "ZERO_VECTOR"
    NON_FINITE = "NON_FINITE"
    QUANTIZATION_FAILED = "QUANTIZATION_FAILED"


INPUT_CODES = frozenset(
    {
        ErrorCode.INVALID_SPEC,
        ErrorCode.INVALID_ARGUMENT,
        ErrorCode.INVALID_PLAN,
        ErrorCode.INVALID_ALPHA,
        ErrorCode.TOKEN_OUT_OF_RANGE,
        ErrorCode.MISSING_USAGE,
        ErrorCode.CONTAINER_FORMAT,
        ErrorCode.EMPTY_CALIBRATION,
        ErrorCode.EMPTY_TRACE,
    }
)
NUMERICAL_CODES = frozenset(
    {
        ErrorCode.NOT_POSITIVE_DEFINITE,
        ErrorCode.NOT_SYMMETRIC,
        ErrorCode.ZERO_VECTOR,
        ErrorCode.NON_FINITE,
        ErrorCode.QUANTIZATION_FAILED,
    }
)

_E = TypeVar("_E", bound="QuantException")


class QuantException(Exception):
    """Exception wrapper for QuantError

    Subclasses fix the error code so callers can catch a specific
    condition (e.g. NotPositiveDefinite) while the structured record stays
    available on ``.error``.
    """

    code: str = ErrorCode.QUANTIZATION_FAILED
    recoverable: bool = False

    def __init__(self, error: QuantError):
        self.error = error
        super().__init__(str(error))

    @classmethod
    def from_error(cls: Type[_E], error: QuantError) -> _E:
        return cls(error)

    @classmethod
    def build(
        cls: Type[_E],
        message: str,
        *,
        details: Optional[Dict[str, Any]] = None,
        hint: Optional[str] = None,
        input_snapshot: Optional[Dict[str, Any]] = None,
    ) -> _E:
        error = QuantError(
            code=cls.code,
            message=message,
            details=details or {},
            input_snapshot=input_snapshot or {},
            hint=hint,
            recoverable=cls.recoverable,
        )
        return cls(error)


class InvalidSpec(QuantException):
    code = ErrorCode.INVALID_SPEC


class InvalidArgument(QuantException):
    code = ErrorCode.INVALID_ARGUMENT


class InvalidPlan(QuantException):
    code = ErrorCode.INVALID_PLAN


class InvalidAlpha(QuantException):
    code = ErrorCode.INVALID_ALPHA


class TokenOutOfRange(QuantException):
    code = ErrorCode.TOKEN_OUT_OF_RANGE


class MissingUsage(QuantException):
    code = ErrorCode.MISSING_USAGE


class ContainerFormatError(QuantException):
    code = ErrorCode.CONTAINER_FORMAT


class EmptyCalibration(QuantException):
    code = ErrorCode.EMPTY_CALIBRATION
    recoverable = True


class EmptyTrace(QuantException):
    code = ErrorCode.EMPTY_TRACE


class NotPositiveDefinite(QuantException):
    code = ErrorCode.NOT_POSITIVE_DEFINITE
    recoverable = True


class NotSymmetric(QuantException):
    code = ErrorCode.NOT_SYMMETRIC


class ZeroVector(QuantException):
    code = ErrorCode.ZERO_VECTOR


class NonFinite(QuantException):
    code = ErrorCode.NON_FINITE


def wrap_exception(
    e: Exception,
    code: str,
    *,
    weight_id: Optional[str] = None,
    inputs: Optional[Dict[str, Any]] = None,
) -> QuantException:
    """Wrap an exception as a QuantException, keeping the original code.

    When ``e`` is already a QuantException its class and code survive and
    the WeightId is added to the details, so the CLI can still report the
    right exit code together with the offending weight.
    """
    if isinstance(e, QuantException):
        details = dict(e.error.details)
        if weight_id is not None:
            details["weight_id"] = weight_id
        message = e.error.message if weight_id is None else f"{weight_id}: {e.error.message}"
        error = e.error.model_copy(update={"details": details, "message": message})
        return type(e)(error)
    details: Dict[str, Any] = {
        "exception_type": type(e).__name__,
        "exception_args": [str(a) for a in getattr(e, "args", [])],
    }
    if weight_id is not None:
        details["weight_id"] = weight_id
    error = QuantError(
        code=code,
        message=str(e) if weight_id is None else f"{weight_id}: {e}",
        details=details,
        input_snapshot=inputs or {},
        hint="See details for the original exception information",
        recoverable=False,
    )
    return QuantException(error)


def exit_code_for(e: BaseException) -> int:
    """CLI exit code: 2 for invalid input, 3 for numerical failure, 1 otherwise."""
    if isinstance(e, QuantException):
        if e.error.code in INPUT_CODES:
            return 2
        if e.error.code in NUMERICAL_CODES:
            return 3
    return 1
