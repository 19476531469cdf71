"""Screening of critique texts written against a hidden score.

A critique must not reveal the score it was conditioned on. Leakage is
detected locally from the text; alignment and factuality checks are external
judgments wired in through :class:`CheckPlugin`.

Numbers are recognized in three scales:

* decimal fractions in [0, 1] (``0.61``, ``.55``);
* percentages, divided by 100 (``61%``, ``61 percent``);
* ``x out of N`` / ``x/N`` for N in {1, 5, 10, 100}, divided by N.

A number following a score word (``score``, ``rating``, ``rated``, ...) is
also tried at the 1, 10 and 100 scales.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

DEFAULT_TOLERANCE = 0.005

_NUM = r"(\d+(?:\.\d+)?|\.\d+)"

_PERCENT = re.compile(_NUM + r"\s*(?:%|per\s?cent\b)", re.I)
_OUT_OF = re.compile(_NUM + r"\s*(?:/|\bout\s+of\s+)\s*(100|10|5|1)(?![\d.]*\d)", re.I)
_DECIMAL = re.compile(r"(?<![\w./])(0?\.\d+|1\.0+)(?![\d%]|\s*/|\s*out\s+of)", re.I)
_KEYWORD = re.compile(
    r"\b(?:scores?|scored|rat(?:e|es|ed|ing|ings)|grades?|graded|verdict)\b"
    r"[^\w.]{0,3}(?:[a-z]+[^\w.]{1,3}){0,3}?" + _NUM,
    re.I,
)


@dataclass(frozen=True)
class CritiqueRecord:
    id: str
    critique: str
    hidden_score: float

    def __post_init__(self):
        if not self.critique or not self.critique.strip():
            raise ValueError(f"record {self.id!r}: critique is empty")
        if not 0.0 <= self.hidden_score <= 1.0:
            raise ValueError(f"record {self.id!r}: hidden_score {self.hidden_score} outside [0, 1]")


@dataclass(frozen=True)
class ErrorFlags:
    leak: bool = False
    align: bool = False
    fact: bool = False
    unscreened: tuple[str, ...] = ()

    @property
    def clean(self) -> bool:
        return not (self.leak or self.align or self.fact or self.unscreened)

    def to_dict(self) -> dict:
        return {"leak": self.leak, "align": self.align, "fact": self.fact, "unscreened": list(self.unscreened)}


@dataclass(frozen=True)
class CheckPlugin:
    """External judgment for one flag (``"align"`` or ``"fact"``)."""

    name: str
    flag: str
    evaluator: Callable[[CritiqueRecord], bool]

    def __post_init__(self):
        if self.flag not in ("align", "fact"):
            raise ValueError(f"plugin {self.name!r}: flag must be 'align' or 'fact', got {self.flag!r}")


def numeric_mentions(text: str) -> list[float]:
    """All candidate normalized score values found in ``text``."""
    values: list[float] = []
    for m in _PERCENT.finditer(text):
        values.append(float(m.group(1)) / 100.0)
    for m in _OUT_OF.finditer(text):
        values.append(float(m.group(1)) / float(m.group(2)))
    for m in _DECIMAL.finditer(text):
        values.append(float(m.group(1)))
    for m in _KEYWORD.finditer(text):
        v = float(m.group(1))
        values.extend(v / scale for scale in (1.0, 10.0, 100.0) if v <= scale)
    return [v for v in values if 0.0 <= v <= 1.0]


def detect_score_leakage(record: CritiqueRecord, tolerance: float = DEFAULT_TOLERANCE) -> bool:
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    # slack absorbs decimal round-off at the tolerance boundary
    return any(abs(v - record.hidden_score) <= tolerance + 1e-12 for v in numeric_mentions(record.critique))


def run_checks(
    record: CritiqueRecord,
    plugins: Sequence[CheckPlugin] = (),
    tolerance: float = DEFAULT_TOLERANCE,
) -> ErrorFlags:
    """Leakage is always checked; a flag with no plugin stays False.

    A plugin that raises leaves the record unscreened (and therefore
    rejected) rather than passing it.
    """
    leak = detect_score_leakage(record, tolerance)
    flags = {"align": False, "fact": False}
    failed = []
    for plugin in plugins:
        try:
            flags[plugin.flag] = flags[plugin.flag] or bool(plugin.evaluator(record))
        except Exception as exc:  # noqa: BLE001 - any evaluator failure
            failed.append(f"{plugin.name}: {type(exc).__name__}: {exc}")
    return ErrorFlags(leak=leak, align=flags["align"], fact=flags["fact"], unscreened=tuple(failed))


def filter_dataset(
    records: Iterable[CritiqueRecord],
    plugins: Sequence[CheckPlugin] = (),
    tolerance: float = DEFAULT_TOLERANCE,
) -> tuple[list[CritiqueRecord], list[tuple[CritiqueRecord, ErrorFlags]]]:
    """Split into kept records and rejected ``(record, flags)`` pairs, in input order."""
    kept: list[CritiqueRecord] = []
    rejected: list[tuple[CritiqueRecord, ErrorFlags]] = []
    for rec in records:
        flags = run_checks(rec, plugins, tolerance)
        if flags.clean:
            kept.append(rec)
        else:
            rejected.append((rec, flags))
    return kept, rejected


def load_critiques(path) -> list[CritiqueRecord]:
    out = []
    with Path(path).open() as fh:
        for n, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(CritiqueRecord(str(obj["id"]), obj["critique"], float(obj["hidden_score"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {n}: {exc}") from None
    return out


def write_kept(records: Iterable[CritiqueRecord], path) -> None:
    with Path(path).open("w") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "critique": r.critique, "hidden_score": r.hidden_score}) + "\n")


def write_rejected(rejected: Iterable[tuple[CritiqueRecord, ErrorFlags]], path) -> None:
    with Path(path).open("w") as fh:
        for r, flags in rejected:
            fh.write(json.dumps({"id": r.id, "hidden_score": r.hidden_score, **flags.to_dict()}) + "\n")
