"""Analysis quantities: performance drop, transferability, angular spread
statistics, and angular-histogram / feature exports."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import encoder as enc


def _unit_rows(m: np.ndarray) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise angular distances between rows of a and rows of b."""
    return np.arccos(np.clip(_unit_rows(a) @ _unit_rows(b).T, -1.0, 1.0))


def performance_drop(a_w_per_session) -> float:
    """A_W at session 0 minus A_W at the final session (signed)."""
    vals = list(a_w_per_session)
    if len(vals) < 2:
        raise ValueError("performance drop needs at least 2 sessions")
    return float(vals[0] - vals[-1])


def transferability(params: enc.EncoderParams, base_prototypes: np.ndarray,
                    new_test_x: np.ndarray) -> float:
    """Mean nearest-base-prototype angle of new-class samples, normalized by
    the mean pairwise angle among base prototypes."""
    protos = np.atleast_2d(base_prototypes)
    if protos.shape[0] < 2:
        raise ValueError("transferability needs at least 2 base prototypes")
    new_test_x = np.atleast_2d(new_test_x)
    if new_test_x.shape[0] < 1:
        raise ValueError("transferability needs at least 1 new-class sample")
    z = np.atleast_2d(enc.embed(params, new_test_x))
    numerator = _angles(z, protos).min(axis=1).mean()
    pp = _angles(protos, protos)
    iu = np.triu_indices(protos.shape[0], k=1)
    denominator = pp[iu].mean()
    # arccos rounding noise can lift a truly zero angle to ~1e-8
    if denominator <= 1e-6:
        raise ValueError("all base prototypes coincide; denominator is zero")
    return float(numerator / denominator)


@dataclass
class SpreadStats:
    intra_spread: float | None
    inter_distance: float | None


def spread_stats(features: np.ndarray, labels, prototypes: np.ndarray,
                 prototype_class_ids) -> SpreadStats:
    """Intra: mean over classes of mean sample-to-prototype angle.
    Inter: mean pairwise prototype angle."""
    features = np.atleast_2d(features)
    labels = np.asarray(labels, dtype=np.int64)
    prototypes = np.atleast_2d(prototypes)
    ids = [int(c) for c in prototype_class_ids]

    per_class = []
    for row, c in enumerate(ids):
        fz = features[labels == c]
        if fz.shape[0] >= 1:
            per_class.append(_angles(fz, prototypes[row:row + 1])[:, 0].mean())
    intra = float(np.mean(per_class)) if per_class else None

    inter = None
    if prototypes.shape[0] >= 2:
        pp = _angles(prototypes, prototypes)
        iu = np.triu_indices(prototypes.shape[0], k=1)
        inter = float(pp[iu].mean())
    return SpreadStats(intra, inter)


def angular_histogram(features: np.ndarray, labels, bins: int):
    """Per-class counts of 2-D feature polar angles over [0, 2pi).

    Returns ``(edges, {class_id: counts})``; bins are half-open [lo, hi)
    with the angle 2pi folded to 0, so counts conserve sample counts.
    """
    features = np.atleast_2d(features)
    if features.shape[1] != 2:
        raise ValueError(f"angular histogram requires 2-D features, got d={features.shape[1]}")
    if bins < 4:
        raise ValueError("need at least 4 bins")
    labels = np.asarray(labels, dtype=np.int64)
    ang = np.mod(np.arctan2(features[:, 1], features[:, 0]), 2.0 * np.pi)
    width = 2.0 * np.pi / bins
    idx = np.minimum((ang / width).astype(int), bins - 1)
    edges = np.arange(bins + 1) * width
    counts = {}
    for c in np.unique(labels):
        counts[int(c)] = np.bincount(idx[labels == c], minlength=bins)
    return edges, counts


# ---------------------------------------------------------------------------
# CSV exports


def write_session_csv(path, rows) -> None:
    """One row per session: (session, a_b, a_n, a_w)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["session", "a_b", "a_n", "a_w"])
        for r in rows:
            w.writerow([r["session"], f"{r['a_b']:.6f}",
                        "" if r.get("a_n") is None else f"{r['a_n']:.6f}",
                        f"{r['a_w']:.6f}"])


def write_histogram_csv(path, edges, counts) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "bin_lo", "bin_hi", "count"])
        for c in sorted(counts):
            for b, n in enumerate(counts[c]):
                w.writerow([c, f"{edges[b]:.12f}", f"{edges[b + 1]:.12f}", int(n)])


def write_features_csv(path, features, labels) -> None:
    """Feature dump for external embedding/t-SNE tools."""
    features = np.atleast_2d(features)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "label"] + [f"f{i}" for i in range(features.shape[1])])
        for i, (lab, row) in enumerate(zip(labels, features)):
            w.writerow([i, int(lab)] + [repr(float(v)) for v in row])
