"""Produce the fair test set: drop flagged test images, emit IDX + removal report."""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .idx import ImageSet, IdxTensor, serialize_idx
from .session import Verdict, read_verdict_log

FAIR_IMAGES_NAME = "fair-t10k-images-idx3-ubyte"
FAIR_LABELS_NAME = "fair-t10k-labels-idx1-ubyte"
REPORT_JSON_NAME = "removal-report.json"
REPORT_TEXT_NAME = "removal-report.txt"


def flagged_indices(verdicts: list[Verdict]) -> list[int]:
    """Sorted unique test indices judged similar (the removal set)."""
    return sorted({v.test_idx for v in verdicts if v.decision == "similar"})


def flagged_indices_from_log(log_path) -> list[int]:
    _, verdicts, _ = read_verdict_log(log_path)
    return flagged_indices(verdicts)


def percent_removed(total: int, original: int) -> str:
    if original == 0:
        return "0.00%"
    return f"{round(100.0 * total / original, 2):.2f}%"


@dataclass
class RemovalReport:
    per_class: dict[int, int]
    total_removed: int
    total_original: int
    percent: str
    provenance: list[tuple[int, int, float]]  # (test_idx, train_idx, distance)
    source_digests: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_class": {str(c): n for c, n in sorted(self.per_class.items())},
            "total_removed": self.total_removed,
            "total_original": self.total_original,
            "percent": self.percent,
            "provenance": [
                {"test_idx": t, "train_idx": x, "distance": d} for t, x, d in self.provenance
            ],
            "source_digests": self.source_digests,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RemovalReport":
        return cls(
            per_class={int(c): n for c, n in d["per_class"].items()},
            total_removed=d["total_removed"],
            total_original=d["total_original"],
            percent=d["percent"],
            provenance=[
                (p["test_idx"], p["train_idx"], p["distance"]) for p in d["provenance"]
            ],
            source_digests=d.get("source_digests", {}),
        )


def build_report(
    test_set: ImageSet,
    flagged: list[int],
    provenance: dict[int, tuple[int, float]] | None = None,
    source_digests: dict[str, str] | None = None,
) -> RemovalReport:
    flagged = sorted(set(int(i) for i in flagged))
    if flagged and (flagged[0] < 0 or flagged[-1] >= test_set.n):
        raise IndexError(f"flagged index outside 0..{test_set.n - 1}")
    per_class = {c: 0 for c in range(10)}
    for i in flagged:
        per_class[int(test_set.labels[i])] += 1
    prov = []
    for i in flagged:
        x, d = (provenance or {}).get(i, (-1, float("nan")))
        prov.append((i, int(x), float(d)))
    return RemovalReport(
        per_class=per_class,
        total_removed=len(flagged),
        total_original=test_set.n,
        percent=percent_removed(len(flagged), test_set.n),
        provenance=prov,
        source_digests=source_digests or {},
    )


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def emit_fair(
    test_set: ImageSet,
    flagged: list[int],
    out_dir,
    provenance: dict[int, tuple[int, float]] | None = None,
    source_digests: dict[str, str] | None = None,
    compress: bool = False,
) -> tuple[ImageSet, RemovalReport]:
    """Write the surviving test images/labels plus the removal report.

    Survivors keep their relative order; emission is atomic per file.
    """
    report = build_report(test_set, flagged, provenance, source_digests)
    flagged_set = {p[0] for p in report.provenance}
    if not flagged_set:
        warnings.warn("nothing flagged: fair set equals the original test set", stacklevel=2)
    keep = np.array([i for i in range(test_set.n) if i not in flagged_set], dtype=np.int64)
    fair = ImageSet(test_set.images[keep].copy(), test_set.labels[keep].copy())

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, tensor in [
        (FAIR_IMAGES_NAME, IdxTensor.from_array(fair.images)),
        (FAIR_LABELS_NAME, IdxTensor.from_array(fair.labels)),
    ]:
        _atomic_write(out_dir / name, serialize_idx(tensor))
        if compress:
            _atomic_write(out_dir / (name + ".gz"), serialize_idx(tensor, compress=True))
    _atomic_write(out_dir / REPORT_JSON_NAME, render_report_json(report).encode())
    _atomic_write(out_dir / REPORT_TEXT_NAME, render_report_text(report).encode())
    return fair, report


def render_report_json(report: RemovalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_report_json(text: str) -> RemovalReport:
    return RemovalReport.from_dict(json.loads(text))


def render_report_text(report: RemovalReport, bar_width: int = 40) -> str:
    """Deterministic text table with a per-class bar chart."""
    lines = ["class  removed  share", "-----  -------  -----"]
    peak = max(report.per_class.values(), default=0)
    for c in sorted(report.per_class):
        n = report.per_class[c]
        bar = "#" * (round(n / peak * bar_width) if peak else 0)
        lines.append(f"{c:>5}  {n:>7}  {bar}")
    lines.append("-----  -------")
    lines.append(f"total  {report.total_removed:>7} of {report.total_original} ({report.percent})")
    return "\n".join(lines) + "\n"
