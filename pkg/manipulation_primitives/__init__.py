"""
Manipulation Primitives
Recognition of manipulation actions from hand motion, pressure and bend
signals through primitive-feature token sequences and per-action HMMs.
"""

__version__ = "1.0.0"
__description__ = "Primitive-based manipulation action recognition with discrete and Gaussian HMMs"

from .core.interfaces import IProfileShape, ISequenceModel

from .core.entities import (
    ChannelGroup,
    PrimitiveFamily,
    Topology,
    Trial,
    Series,
    BellParams,
    BellInstance,
    LevelSet,
    Token,
    TokenSequence,
)

from .core.config import ConfigurationManager
from .providers.primitive_extractor import PrimitiveExtractor, extract_sequence
from .providers.model_bank import ActionModelBank, ModelTrainer
from .providers.action_synthesizer import ActionSynthesizer
from .providers.evaluator import Evaluator

__all__ = [
    # Interfaces
    'IProfileShape',
    'ISequenceModel',

    # Entities
    'ChannelGroup',
    'PrimitiveFamily',
    'Topology',
    'Trial',
    'Series',
    'BellParams',
    'BellInstance',
    'LevelSet',
    'Token',
    'TokenSequence',

    # Pipeline
    'ConfigurationManager',
    'PrimitiveExtractor',
    'extract_sequence',
    'ActionModelBank',
    'ModelTrainer',
    'ActionSynthesizer',
    'Evaluator',
]
