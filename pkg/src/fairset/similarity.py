"""Rank every test image against its nearest training neighbor by feature distance.

Distances are squared Euclidean over L2-normalized embeddings (rank-equivalent
to cosine). The full 10,000 x 60,000 problem is evaluated in blocks so memory
stays bounded; the result is identical for any block size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, NumericError, ShapeError, VersionError

RANKING_MAGIC = b"FAIRRANK"
RANKING_VERSION = 1
FOREGROUND_THRESHOLD = 31


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (N, D) float32
    normalized: bool = False

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])


def l2_normalize(features: FeatureMatrix | np.ndarray) -> FeatureMatrix:
    """Scale each nonzero row to unit norm; all-zero rows stay zero."""
    values = features.values if isinstance(features, FeatureMatrix) else features
    if not np.all(np.isfinite(values)):
        raise NumericError("features contain non-finite values")
    norms = np.linalg.norm(values.astype(np.float64), axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    out = (values / safe).astype(np.float32)
    return FeatureMatrix(out, normalized=True)


def nearest_train_neighbors(
    test_features: FeatureMatrix,
    train_features: FeatureMatrix,
    block_test: int = 512,
    block_train: int = 16384,
) -> tuple[np.ndarray, np.ndarray]:
    """For each test row, the (train index, squared distance) of its nearest
    training row. Ties resolve to the smallest train index regardless of
    blocking, because later blocks only win on strictly smaller distance."""
    if not (test_features.normalized and train_features.normalized):
        raise ShapeError("both feature matrices must be L2-normalized first")
    if test_features.dim != train_features.dim:
        raise ShapeError(
            f"feature dims differ: {test_features.dim} vs {train_features.dim}"
        )
    test = test_features.values.astype(np.float64)
    train = train_features.values.astype(np.float64)
    n_test, n_train = test.shape[0], train.shape[0]

    best_idx = np.zeros(n_test, dtype=np.uint32)
    best_dist = np.full(n_test, np.inf, dtype=np.float64)
    test_sq = (test * test).sum(axis=1)
    train_sq = (train * train).sum(axis=1)

    for t0 in range(0, n_test, block_test):
        t1 = min(t0 + block_test, n_test)
        tblock = test[t0:t1]
        for x0 in range(0, n_train, block_train):
            x1 = min(x0 + block_train, n_train)
            # |a-b|^2 = |a|^2 + |b|^2 - 2ab, clamped against rounding
            d = test_sq[t0:t1, None] + train_sq[None, x0:x1] - 2.0 * (tblock @ train[x0:x1].T)
            np.maximum(d, 0.0, out=d)
            arg = d.argmin(axis=1)
            dmin = d[np.arange(t1 - t0), arg]
            better = dmin < best_dist[t0:t1]
            best_dist[t0:t1][better] = dmin[better]
            best_idx[t0:t1][better] = (arg[better] + x0).astype(np.uint32)
    return best_idx, best_dist


@dataclass
class PairRanking:
    """Global ascending-distance order of each test image's nearest train pair."""

    test_idx: np.ndarray  # (N,) uint32
    train_idx: np.ndarray  # (N,) uint32
    distance: np.ndarray  # (N,) float32
    test_features_digest: str = ""
    train_features_digest: str = ""

    def __len__(self) -> int:
        return int(self.test_idx.shape[0])


def rank_pairs(
    neighbor_idx: np.ndarray,
    neighbor_dist: np.ndarray,
    test_features_digest: str = "",
    train_features_digest: str = "",
) -> PairRanking:
    """Sort (test, train, distance) ascending by distance, ties by test then train."""
    n = neighbor_idx.shape[0]
    test_idx = np.arange(n, dtype=np.uint32)
    train_idx = neighbor_idx.astype(np.uint32)
    dist = neighbor_dist.astype(np.float32)
    # sort on the persisted f32 values so the stored order obeys its own invariant
    order = np.lexsort((train_idx, test_idx, dist))
    return PairRanking(
        test_idx[order],
        train_idx[order],
        dist[order],
        test_features_digest,
        train_features_digest,
    )


def encode_ranking(r: PairRanking) -> bytes:
    header = RANKING_MAGIC + struct.pack("<QQ", RANKING_VERSION, len(r))
    header += r.test_features_digest.encode().ljust(64, b"\0")
    header += r.train_features_digest.encode().ljust(64, b"\0")
    body = np.empty(len(r), dtype=[("t", "<u4"), ("x", "<u4"), ("d", "<f4")])
    body["t"], body["x"], body["d"] = r.test_idx, r.train_idx, r.distance
    return header + body.tobytes()


def decode_ranking(buf: bytes) -> PairRanking:
    if buf[:8] != RANKING_MAGIC:
        raise CorruptionError("ranking payload lacks magic")
    version, n = struct.unpack("<QQ", buf[8:24])
    if version != RANKING_VERSION:
        raise VersionError(f"ranking payload version {version}")
    td = buf[24:88].rstrip(b"\0").decode()
    xd = buf[88:152].rstrip(b"\0").decode()
    expect = 152 + n * 12
    if len(buf) != expect:
        raise CorruptionError(f"ranking payload is {len(buf)} bytes, expected {expect}")
    body = np.frombuffer(buf[152:], dtype=[("t", "<u4"), ("x", "<u4"), ("d", "<f4")])
    return PairRanking(
        body["t"].copy(), body["x"].copy(), body["d"].copy(), td, xd
    )


def ranking_to_csv(r: PairRanking) -> str:
    lines = ["test_idx,train_idx,distance"]
    for t, x, d in zip(r.test_idx, r.train_idx, r.distance):
        lines.append(f"{t},{x},{d:.9g}")
    return "\n".join(lines) + "\n"


# --- advisory signals --------------------------------------------------------

@dataclass
class AdvisorySignals:
    """Pixel-level hints mirroring what a reviewer checks; never decisions."""

    bbox_delta_px: int
    outline_agreement: float
    tone_delta: float
    mean_abs_pixel_diff: float

    def to_dict(self) -> dict:
        return {
            "bbox_delta_px": self.bbox_delta_px,
            "outline_agreement": round(self.outline_agreement, 4),
            "tone_delta": round(self.tone_delta, 2),
            "mean_abs_pixel_diff": round(self.mean_abs_pixel_diff, 2),
        }


def _bbox_size(mask: np.ndarray) -> tuple[int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return 0, 0
    return int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)


def pair_signals(
    test_image: np.ndarray, train_image: np.ndarray, threshold: int = FOREGROUND_THRESHOLD
) -> AdvisorySignals:
    """Compare two 28x28 grayscale images on size, outline, tone, raw pixels."""
    a = np.asarray(test_image, dtype=np.int64)
    b = np.asarray(train_image, dtype=np.int64)
    if a.shape != (28, 28) or b.shape != (28, 28):
        raise ShapeError(f"pair_signals expects 28x28 images, got {a.shape} and {b.shape}")
    fa, fb = a > threshold, b > threshold

    wa, ha = _bbox_size(fa)
    wb, hb = _bbox_size(fb)
    bbox_delta = max(abs(wa - wb), abs(ha - hb))

    union = int((fa | fb).sum())
    inter = int((fa & fb).sum())
    outline = inter / union if union else 1.0

    tone_a = float(a[fa].mean()) if fa.any() else 0.0
    tone_b = float(b[fb].mean()) if fb.any() else 0.0

    return AdvisorySignals(
        bbox_delta_px=bbox_delta,
        outline_agreement=outline,
        tone_delta=abs(tone_a - tone_b),
        mean_abs_pixel_diff=float(np.abs(a - b).mean()),
    )
