"""
Custom exceptions for the manipulation primitives system.
Each exception class handles a specific type of error and carries the
error code and process exit code the command line reports for it.
"""

from typing import Optional, Any


EXIT_SUCCESS = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class PrimitiveSystemException(Exception):
    """Base exception for all manipulation primitives errors."""

    error_code: str = "E_INTERNAL"
    exit_code: int = 1

    def __init__(self, message: str, context: Optional[Any] = None):
        self.message = message
        self.context = context
        super().__init__(self.message)


# Usage errors

class UsageException(PrimitiveSystemException):
    """Exception for invalid command-line usage."""
    error_code = "E_USAGE"
    exit_code = EXIT_USAGE


class ArgumentException(UsageException):
    """Exception for invalid arguments passed to an operation."""
    error_code = "E_ARGUMENT"


class ConfigurationException(UsageException):
    """Exception for configuration related errors."""
    error_code = "E_CONFIG"


# Data errors

class DataException(PrimitiveSystemException):
    """Exception for malformed or unusable input data."""
    error_code = "E_DATA"
    exit_code = EXIT_DATA


class SchemaException(DataException):
    """Exception for a trial or profile file missing a required column."""
    error_code = "E_SCHEMA"


class OrderingException(DataException):
    """Exception for timestamps that are not strictly increasing."""
    error_code = "E_ORDER"


class NonFiniteValueException(DataException):
    """Exception for NaN or infinite sample values."""
    error_code = "E_NONFINITE"


class ValidationException(DataException):
    """Exception for data validation errors."""
    error_code = "E_VALIDATION"


class DegenerateLevelsException(DataException):
    """Exception when quantization levels cannot be derived from the training set."""
    error_code = "E_LEVELS"


class VocabularyException(DataException):
    """Exception for tokens outside the canonical primitive-feature grammar."""
    error_code = "E_VOCABULARY"


class MissingActionException(DataException):
    """Exception when a training split lacks one of the recognized actions."""
    error_code = "E_MISSING_ACTION"


class BankKindException(DataException):
    """Exception when a model bank is given inputs of the other kind (tokens vs raw frames)."""
    error_code = "E_BANK_KIND"


class FoldMismatchException(DataException):
    """Exception when two reports do not share the same fold structure."""
    error_code = "E_FOLDS"


class DataRepositoryException(DataException):
    """Exception for data persistence related errors."""
    error_code = "E_IO"


# Numeric / state errors

class NumericException(PrimitiveSystemException):
    """Exception for numerical failures during fitting or training."""
    error_code = "E_NUMERIC"
    exit_code = EXIT_NUMERIC


class IncompleteBankException(NumericException):
    """Exception when classifying with a model bank that misses actions."""
    error_code = "E_STATE"
