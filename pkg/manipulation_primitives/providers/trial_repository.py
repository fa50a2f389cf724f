"""
Trial Repository implementation.
Handles persistence of trials, dataset manifests, token-sequence files and
level files with pandas-backed CSV/TSV IO.
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..config import (
    TRIAL_COLUMNS, CSV_FLOAT_FORMAT, MANIFEST_FILE, TRIAL_META_SUFFIX, LEVELS_SUFFIX,
)
from ..core.entities import Trial, TokenSequence, LevelSet
from ..core.exceptions import (
    SchemaException, OrderingException, NonFiniteValueException, ValidationException,
    DataException, DataRepositoryException, PrimitiveSystemException,
)
from ..core.logging_service import LoggingService
from .signal_processor import infer_rate, merge_modalities

MANIFEST_COLUMNS = ("trial_id", "subject", "action", "seed", "split", "truth")


@dataclass(frozen=True)
class ManifestRow:
    """One dataset manifest entry."""
    trial_id: str
    subject: str
    action: str
    seed: int
    split: str
    truth: str  # ground-truth tokens in the canonical grammar, space separated


def _meta_path(path: Path) -> Path:
    return path.with_suffix(TRIAL_META_SUFFIX)


def read_metadata(path: Path) -> Dict[str, str]:
    """Parse a ``key=value`` sidecar file."""
    metadata: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = line.split("=", 1)
            metadata[key.strip()] = value.strip()
    return metadata


def load_trial(path, default_rate: float = 50.0) -> Trial:
    """
    Load a trial CSV (``t,vx,vy,vz,wx,wy,wz,F1..F18,b1..b8``) and its optional sidecar.

    Args:
        path: Trial CSV path
        default_rate: Rate assigned to single-frame trials

    Returns:
        Trial with frames in ascending t and the inferred rate

    Raises:
        SchemaException: If a required column is missing
        OrderingException: If t is not strictly increasing (first offending row)
        NonFiniteValueException: For NaN/inf values (row and column)
        ValidationException: For negative pressure or bend values
        DataRepositoryException: If the file cannot be read
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataRepositoryException(f"Trial file not found: {path}", {"path": str(path)})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataRepositoryException(f"Failed to read trial file {path}: {str(e)}", {"path": str(path)})

    for column in TRIAL_COLUMNS:
        if column not in frame.columns:
            raise SchemaException(f"{path}: missing column '{column}'", {"path": str(path), "column": column})
    if frame.empty:
        raise DataException(f"{path}: trial has no frames", {"path": str(path)})

    try:
        values = frame[list(TRIAL_COLUMNS)].to_numpy(dtype=float)
    except ValueError as e:
        raise NonFiniteValueException(f"{path}: non-numeric value: {str(e)}", {"path": str(path)})

    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFiniteValueException(
            f"{path}: non-finite value at row {row + 1}, column '{TRIAL_COLUMNS[col]}'",
            {"row": int(row + 1), "column": TRIAL_COLUMNS[col]})

    t = values[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0):
        row = int(np.argmax(steps <= 0)) + 2
        raise OrderingException(f"{path}: timestamps not strictly increasing at row {row}", {"row": row})

    channel_blocks = values[:, 1 + 6:]
    negative = channel_blocks < 0
    if negative.any():
        row, col = np.argwhere(negative)[0]
        raise ValidationException(
            f"{path}: negative sensor value at row {row + 1}, column '{TRIAL_COLUMNS[7 + col]}'",
            {"row": int(row + 1), "column": TRIAL_COLUMNS[7 + col]})

    metadata: Dict[str, str] = {}
    if _meta_path(path).exists():
        metadata = read_metadata(_meta_path(path))

    return Trial(
        id=metadata.get("id", path.stem),
        subject=metadata.get("subject", ""),
        action_label=metadata.get("action") or None,
        t=t,
        v=values[:, 1:4],
        w=values[:, 4:7],
        F=values[:, 7:25],
        b=values[:, 25:33],
        rate=infer_rate(t, default_rate),
    )


def write_trial(trial: Trial, path) -> None:
    """Write a trial CSV plus its ``.meta`` sidecar."""
    path = Path(path)
    data = np.column_stack([trial.t, trial.v, trial.w, trial.F, trial.b])
    frame = pd.DataFrame(data, columns=list(TRIAL_COLUMNS))
    try:
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, encoding="utf-8")
        with open(_meta_path(path), "w", encoding="utf-8") as f:
            f.write(f"id={trial.id}\nsubject={trial.subject}\naction={trial.action_label or ''}\n")
    except OSError as e:
        raise DataRepositoryException(f"Failed to write trial {path}: {str(e)}", {"path": str(path)})


def load_modalities(motion_path, pressure_path, bend_path, trial_id: str = "", subject: str = "",
                    action: Optional[str] = None, default_rate: float = 50.0) -> Trial:
    """Load per-modality CSV files with independent timestamps and merge them."""
    streams = []
    for path in (motion_path, pressure_path, bend_path):
        try:
            streams.append(pd.read_csv(path, encoding="utf-8"))
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataRepositoryException(f"Failed to read stream {path}: {str(e)}", {"path": str(path)})
    return merge_modalities(*streams, trial_id=trial_id or Path(pressure_path).stem,
                            subject=subject, action=action, default_rate=default_rate)


class TrialRepository:
    """
    Dataset repository.
    Handles the on-disk layout of a dataset directory and the text artifacts
    the pipeline exchanges between commands.
    """

    def __init__(self, root):
        """
        Initialize trial repository.

        Args:
            root: Dataset directory
        """
        self.root = Path(root)
        self.logger = LoggingService("repository")

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_FILE

    def trial_path(self, trial_id: str) -> Path:
        return self.root / f"{trial_id}.csv"

    def ensure_directory(self) -> None:
        try:
            os.makedirs(self.root, exist_ok=True)
        except OSError as e:
            raise DataRepositoryException(f"Cannot create directory {self.root}: {str(e)}", {"path": str(self.root)})
        if not os.access(self.root, os.W_OK):
            raise DataRepositoryException(f"Directory is not writable: {self.root}", {"path": str(self.root)})

    def save_trial(self, trial: Trial) -> Path:
        path = self.trial_path(trial.id)
        write_trial(trial, path)
        return path

    def load_trial(self, trial_id: str, default_rate: float = 50.0) -> Trial:
        return load_trial(self.trial_path(trial_id), default_rate)

    def write_manifest(self, rows: List[ManifestRow]) -> None:
        """Write ``manifest.tsv`` in row order."""
        lines = ["\t".join(MANIFEST_COLUMNS)]
        for row in rows:
            lines.append("\t".join([row.trial_id, row.subject, row.action, str(row.seed), row.split, row.truth]))
        self._write_text(self.manifest_path, "\n".join(lines) + "\n")
        self.logger.info(f"Manifest written with {len(rows)} trials", {"path": str(self.manifest_path)})

    def read_manifest(self) -> List[ManifestRow]:
        """
        Read ``manifest.tsv``.

        Raises:
            DataRepositoryException: If the manifest is missing or unreadable
            SchemaException: If a manifest column is missing
        """
        if not self.manifest_path.exists():
            raise DataRepositoryException(f"Manifest not found: {self.manifest_path}",
                                          {"path": str(self.manifest_path)})
        try:
            frame = pd.read_csv(self.manifest_path, sep="\t", dtype=str, keep_default_na=False,
                                encoding="utf-8")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataRepositoryException(f"Failed to read manifest {self.manifest_path}: {str(e)}")
        for column in MANIFEST_COLUMNS:
            if column not in frame.columns:
                raise SchemaException(f"{self.manifest_path}: missing column '{column}'")
        return [
            ManifestRow(r.trial_id, r.subject, r.action, int(r.seed), r.split, r.truth)
            for r in frame.itertuples(index=False)
        ]

    def load_dataset(self, default_rate: float = 50.0) -> List[Tuple[ManifestRow, Trial]]:
        """Load every trial listed in the manifest, in manifest order."""
        rows = self.read_manifest()
        if not rows:
            raise DataException(f"Dataset {self.root} lists no trials")
        loaded = []
        for row in rows:
            try:
                loaded.append((row, self.load_trial(row.trial_id, default_rate)))
            except PrimitiveSystemException:
                raise
            except Exception as e:
                self.logger.log_error(e, {"operation": "load_dataset", "trial": row.trial_id})
                raise DataRepositoryException(f"Failed to load trial {row.trial_id}: {str(e)}")
        return loaded

    @staticmethod
    def _write_text(path: Path, text: str) -> None:
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
        except OSError as e:
            raise DataRepositoryException(f"Failed to write {path}: {str(e)}", {"path": str(path)})


def write_sequences(sequences: List[TokenSequence], path) -> None:
    """Write token sequences in the canonical grammar, one trial per line."""
    text = "".join(seq.to_line() + "\n" for seq in sequences)
    TrialRepository._write_text(Path(path), text)


def read_sequences(path) -> List[TokenSequence]:
    """
    Read a canonical-grammar sequence file.

    Raises:
        DataRepositoryException: If the file cannot be read
        DataException: For lines without the ``id,subject,action<TAB>`` prefix
        VocabularyException: For tokens outside the grammar
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataRepositoryException(f"Failed to read sequences {path}: {str(e)}", {"path": str(path)})

    sequences = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataException(f"{path}:{line_no}: expected 'trial_id,subject,action<TAB>tokens'")
        header, body = line.split("\t", 1)
        parts = header.split(",")
        if len(parts) != 3:
            raise DataException(f"{path}:{line_no}: malformed header {header!r}")
        trial_id, subject, action = parts
        sequences.append(TokenSequence.from_names(body.split(), trial_id, subject, action or None))
    return sequences


def levels_path_for(sequences_path) -> Path:
    return Path(str(sequences_path) + LEVELS_SUFFIX)


def write_levels(force: LevelSet, bend: LevelSet, path) -> None:
    """Write both level sets as ``group.field = value`` lines."""
    lines = []
    for group, levels in (("force", force), ("bend", bend)):
        for key, value in levels.as_dict().items():
            lines.append(f"{group}.{key} = {value!r}")
    TrialRepository._write_text(Path(path), "\n".join(lines) + "\n")


def read_levels(path) -> Tuple[LevelSet, LevelSet]:
    """Read a levels file written by :func:`write_levels`."""
    path = Path(path)
    if not path.exists():
        raise DataRepositoryException(f"Levels file not found: {path}", {"path": str(path)})
    values = read_metadata(path)
    try:
        force = LevelSet(*(float(values[f"force.{k}"]) for k in ("A", "low", "mid", "high")))
        bend = LevelSet(*(float(values[f"bend.{k}"]) for k in ("A", "low", "mid", "high")))
    except KeyError as e:
        raise SchemaException(f"{path}: missing level {e}")
    return force, bend
