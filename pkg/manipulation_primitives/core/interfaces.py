"""
Core interfaces for the manipulation primitives system.
These define contracts that implementations must follow.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict

import numpy as np


class IProfileShape(ABC):
    """Interface for normalized bell-shaped speed profiles on tau in [0, 1]."""

    @abstractmethod
    def density(self, tau) -> np.ndarray:
        """Evaluate the unit-area speed density at tau."""
        pass

    @property
    @abstractmethod
    def peak_tau(self) -> float:
        """Location of the profile maximum."""
        pass

    @property
    @abstractmethod
    def peak_value(self) -> float:
        """Value of the profile maximum (the profile-peak constant)."""
        pass


class ISequenceModel(ABC):
    """Interface for per-action sequence models held in a model bank."""

    @property
    @abstractmethod
    def n_states(self) -> int:
        """Number of hidden states."""
        pass

    @abstractmethod
    def log_likelihood(self, observations: np.ndarray) -> float:
        """Marginal log-probability of one observation sequence."""
        pass

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """Parameters as plain lists for serialization."""
        pass
