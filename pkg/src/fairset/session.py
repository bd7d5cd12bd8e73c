"""Analyst review session: append-only verdict log with replayable state.

The log is the single source of truth. One JSON object per line; the first
line is a header carrying the ranking digest, so a session can never resume
against a different ranking. In-memory state is always the fold of the log,
and resuming after a crash truncates at most one partial trailing record.
"""

from __future__ import annotations

import fcntl
import json
import os
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConflictError,
    LockError,
    LogCorruptionError,
    SessionRankingMismatchError,
)
from .idx import ImageSet
from .similarity import AdvisorySignals, PairRanking, pair_signals

DECISIONS = ("similar", "distinct", "skip")
DISTINCT_TO_CLOSE = 20
LOG_SCHEMA_VERSION = 1
NUM_CLASSES = 10


@dataclass
class Verdict:
    seq: int
    ts: float
    test_idx: int
    train_idx: int
    class_label: int
    decision: str
    distance: float
    analyst: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "ts": self.ts,
                "test_idx": self.test_idx,
                "train_idx": self.train_idx,
                "class": self.class_label,
                "decision": self.decision,
                "distance": self.distance,
                "analyst": self.analyst,
            },
            sort_keys=True,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            seq=d["seq"],
            ts=d["ts"],
            test_idx=d["test_idx"],
            train_idx=d["train_idx"],
            class_label=d["class"],
            decision=d["decision"],
            distance=d["distance"],
            analyst=d["analyst"],
        )


@dataclass
class PairPresentation:
    test_idx: int
    train_idx: int
    distance: float
    class_label: int
    test_image: np.ndarray
    train_image: np.ndarray
    signals: AdvisorySignals
    progress: dict


def read_verdict_log(log_path) -> tuple[dict, list[Verdict], int]:
    """Parse a log into (header, verdicts, clean byte length).

    A partial trailing record (crash artifact) is dropped and excluded from the
    clean length; an unreadable record anywhere else is corruption.
    """
    data = open(log_path, "rb").read()
    lines = data.split(b"\n")
    newline_terminated = data.endswith(b"\n")
    if newline_terminated:
        lines = lines[:-1]
    if not lines or not lines[0]:
        raise LogCorruptionError("log has no header line", position=0)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise LogCorruptionError(f"unreadable header: {e}", position=0) from e
    if not newline_terminated and len(lines) == 1:
        raise LogCorruptionError("header line is incomplete", position=0)

    verdicts = []
    clean_len = len(lines[0]) + 1
    for i, line in enumerate(lines[1:], start=1):
        if i == len(lines) - 1 and not newline_terminated:
            break  # record without its newline was never acknowledged; drop it
        try:
            verdicts.append(Verdict.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise LogCorruptionError(f"unreadable log line: {e}", position=i) from e
        clean_len += len(line) + 1
    return header, verdicts, clean_len


class Session:
    """Single-writer review session over a ranking, resumable from its log."""

    def __init__(
        self,
        ranking: PairRanking,
        test_set: ImageSet,
        train_set: ImageSet,
        log_path,
        ranking_digest: str,
        dataset_name: str = "dataset",
        analyst: str = "analyst",
        class_order=None,
    ):
        self.ranking = ranking
        self.test_set = test_set
        self.train_set = train_set
        self.log_path = log_path
        self.ranking_digest = ranking_digest
        self.dataset_name = dataset_name
        self.analyst = analyst
        self.class_order = list(class_order) if class_order is not None else list(range(NUM_CLASSES))

        labels = test_set.labels
        self._candidates = {c: [] for c in self.class_order}
        for pos in range(len(ranking)):
            c = int(labels[ranking.test_idx[pos]])
            if c in self._candidates:
                self._candidates[c].append(pos)

        self.judged: dict[int, str] = {}
        self.counters = {c: {"similar": 0, "distinct": 0, "skip": 0} for c in self.class_order}
        self.seq = 0
        self._lock_fd = None
        self._log_fh = None

    # --- lifecycle -----------------------------------------------------------

    @classmethod
    def start_or_resume(cls, ranking, test_set, train_set, log_path, ranking_digest, **kw) -> "Session":
        session = cls(ranking, test_set, train_set, log_path, ranking_digest, **kw)
        session._acquire_lock()
        if os.path.exists(log_path) and os.path.getsize(log_path) > 0:
            try:
                header, verdicts, clean_len = read_verdict_log(log_path)
            except LogCorruptionError:
                session.close()
                raise
            if header.get("ranking_digest") != ranking_digest:
                session.close()
                raise SessionRankingMismatchError(
                    f"log {log_path} was recorded against ranking "
                    f"{header.get('ranking_digest')}, not {ranking_digest}"
                )
            if clean_len < os.path.getsize(log_path):
                warnings.warn(
                    f"truncating partial trailing record in {log_path}", stacklevel=2
                )
                with open(log_path, "r+b") as fh:
                    fh.truncate(clean_len)
            for v in verdicts:
                session._apply(v)
            session.seq = verdicts[-1].seq if verdicts else 0
        else:
            header = {
                "ranking_digest": ranking_digest,
                "dataset_name": session.dataset_name,
                "schema_version": LOG_SCHEMA_VERSION,
            }
            with open(log_path, "w") as fh:
                fh.write(json.dumps(header, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        session._log_fh = open(log_path, "a")
        return session

    def _acquire_lock(self):
        lock_path = str(self.log_path) + ".lock"
        fd = os.open(lock_path, os.O_CREAT | os.O_RDWR)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as e:
            os.close(fd)
            raise LockError(f"another session is writing {self.log_path}") from e
        self._lock_fd = fd

    def close(self):
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # --- state ----------------------------------------------------------------

    def _class_closed(self, c: int) -> bool:
        if self.counters[c]["distinct"] >= DISTINCT_TO_CLOSE:
            return True
        return all(int(self.ranking.test_idx[p]) in self.judged for p in self._candidates[c])

    def current_class(self) -> int | None:
        for c in self.class_order:
            if not self._class_closed(c):
                return c
        return None

    @property
    def complete(self) -> bool:
        return self.current_class() is None

    def _next_position(self) -> int | None:
        c = self.current_class()
        if c is None:
            return None
        for pos in self._candidates[c]:
            if int(self.ranking.test_idx[pos]) not in self.judged:
                return pos
        return None

    def next_pair(self) -> PairPresentation | None:
        """Lowest-distance unjudged pair in the current class; None when done."""
        pos = self._next_position()
        if pos is None:
            return None
        t = int(self.ranking.test_idx[pos])
        x = int(self.ranking.train_idx[pos])
        test_img = self.test_set.images[t]
        train_img = self.train_set.images[x]
        return PairPresentation(
            test_idx=t,
            train_idx=x,
            distance=float(self.ranking.distance[pos]),
            class_label=int(self.test_set.labels[t]),
            test_image=test_img,
            train_image=train_img,
            signals=pair_signals(test_img, train_img),
            progress=self.progress(),
        )

    def _apply(self, v: Verdict) -> None:
        self.judged[v.test_idx] = v.decision
        if v.class_label in self.counters:
            self.counters[v.class_label][v.decision] += 1

    def record_verdict(self, decision: str, test_idx: int | None = None, train_idx: int | None = None) -> dict:
        """Append a verdict for the currently presented pair, then update state.

        The write is flushed and fsynced before any in-memory mutation, so an
        acknowledged verdict is always durable and a failed one changes nothing.
        """
        if decision not in DECISIONS:
            raise ConflictError(f"unknown decision {decision!r}")
        pos = self._next_position()
        if pos is None:
            raise ConflictError("session is complete; nothing to judge")
        t = int(self.ranking.test_idx[pos])
        x = int(self.ranking.train_idx[pos])
        if test_idx is not None and (test_idx != t or (train_idx is not None and train_idx != x)):
            raise ConflictError(
                f"stale pair: submitted ({test_idx},{train_idx}), current ({t},{x})"
            )
        v = Verdict(
            seq=self.seq + 1,
            ts=time.time(),
            test_idx=t,
            train_idx=x,
            class_label=int(self.test_set.labels[t]),
            decision=decision,
            distance=float(self.ranking.distance[pos]),
            analyst=self.analyst,
        )
        self._log_fh.write(v.to_json() + "\n")
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())
        self.seq = v.seq
        self._apply(v)
        return self.progress()

    def progress(self) -> dict:
        classes = {}
        total = {"similar": 0, "distinct": 0, "skip": 0}
        closed = 0
        for c in self.class_order:
            counts = self.counters[c]
            is_closed = self._class_closed(c)
            closed += is_closed
            classes[c] = {
                **counts,
                "closed": is_closed,
                "candidates": len(self._candidates[c]),
            }
            for k in total:
                total[k] += counts[k]
        return {
            "classes": classes,
            "totals": total,
            "judged": len(self.judged),
            "fraction_complete": closed / len(self.class_order) if self.class_order else 1.0,
            "current_class": self.current_class(),
            "complete": self.complete,
        }
