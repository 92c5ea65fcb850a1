"""
@module errors
@description Exception hierarchy shared by every rxnalign module
@version 0.1.0
@last_updated 2026-10-18
@status stable

Every exception carries a machine-readable ``category``; the command line
maps categories to exit codes (see ``EXIT_CODES``).
"""

from typing import Dict, Optional

EXIT_CODES: Dict[str, int] = {
    "internal": 1,
    "usage": 2,
    "input": 3,
    "config": 4,
    "checkpoint": 5,
    "numerics": 6,
}


class RxnAlignError(Exception):
    """Base class for all errors raised by rxnalign."""

    category = "internal"
    reason = "internal error"

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.category, 1)


class SmilesError(RxnAlignError):
    """A SMILES string could not be parsed."""

    category = "input"

    def __init__(
        self,
        message: str,
        text: str = "",
        position: Optional[int] = None,
        reason: str = "invalid smiles",
    ):
        self.reason = reason
        self.text = text
        self.position = position
        if position is not None:
            message = f"{message} at position {position}"
            if text:
                message = f"{message}: {text!r}"
        super().__init__(message)


class ReactionSmilesError(RxnAlignError):
    """A reaction SMILES does not have the reactants>reagents>products shape."""

    category = "input"
    reason = "invalid reaction"


class AlignmentError(RxnAlignError):
    """Reactant and product atoms cannot be aligned through their map numbers."""

    category = "input"

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ShapeError(RxnAlignError):
    """Tensor shapes are incompatible for the requested operation."""

    category = "numerics"


class MaskError(RxnAlignError):
    """A softmax row has every position masked out."""

    category = "numerics"


class TapeError(RxnAlignError):
    """The differentiation tape was misused (e.g. consumed twice)."""

    category = "numerics"


class TrainingDivergedError(RxnAlignError):
    """The training loss became non-finite."""

    category = "numerics"


class ConfigError(RxnAlignError):
    """A configuration file or value is invalid."""

    category = "config"


class CheckpointError(RxnAlignError):
    """A checkpoint is corrupted, truncated or written by an incompatible version."""

    category = "checkpoint"


class VocabularyError(RxnAlignError):
    """A token is outside the model vocabulary."""

    category = "input"


class DatasetError(RxnAlignError):
    """A dataset file is missing columns or cannot be read."""

    category = "input"
    reason = "invalid dataset"


class UsageError(RxnAlignError):
    """The command line could not be parsed."""

    category = "usage"
    reason = "invalid arguments"
