"""Distribution-level similarity between estimate sequences.

The statistic is the 1-D Wasserstein distance between the two sequences after
trimming a fraction Lambda from each tail; significance comes from a
two-sample permutation test.  For scalar sequences the sliced distance is the
plain 1-D distance, so :func:`sliced_wasserstein` only projects when given
multi-column samples.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import wasserstein_distance

MIN_SEQUENCE = 10


def _as_sample(a, name):
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    return a


def wasserstein_1d(a, b) -> float:
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(wasserstein_distance(a, b))


def sliced_wasserstein(a, b, n_projections: int = 50, seed: int = 0) -> float:
    """Average 1-D distance over random unit directions (identity for 1-D input)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1 or a.shape[1] == 1:
        return wasserstein_1d(a, b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples differ in dimension")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.mean([wasserstein_1d(a @ d, b @ d) for d in dirs]))


def quantile_restrict(sample, Lambda: float) -> np.ndarray:
    """Drop floor(Lambda * n) order statistics from each tail (original order kept)."""
    if not 0.0 < Lambda < 0.5:
        raise ValueError("Lambda must lie in (0, 0.5)")
    s = _as_sample(sample, "sample")
    k = int(np.floor(Lambda * s.size))
    if k == 0:
        return s.copy()
    order = np.argsort(s, kind="stable")
    keep = np.sort(order[k:s.size - k])
    return s[keep]


@dataclass
class SimilarityReport:
    distance: float
    p_value: float
    passed: bool
    alpha: float
    Lambda: float
    n_permutations: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _statistic(a, b, Lambda, scale):
    d = wasserstein_1d(quantile_restrict(a, Lambda), quantile_restrict(b, Lambda))
    return d / scale if scale > 0 else 0.0


def similarity_test(seqA, seqB, alpha: float = 0.05, Lambda: float = 0.05,
                    n_perm: int = 999, seed: int = 0, normalize: bool = True,
                    min_size: int = MIN_SEQUENCE) -> SimilarityReport:
    """Permutation test of "same distribution" on the trimmed 1-D Wasserstein statistic.

    The distance is divided by the standard deviation of the pooled sequences
    (when ``normalize``), which makes the test invariant to a common affine
    change of units.  p = (1 + #{permuted >= observed}) / (n_perm + 1).
    """
    a, b = _as_sample(seqA, "seqA"), _as_sample(seqB, "seqB")
    if a.size < min_size or b.size < min_size:
        raise ValueError(f"need at least {min_size} values per sequence")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    pooled = np.concatenate([a, b])
    scale = float(np.std(pooled)) if normalize else 1.0
    obs = _statistic(a, b, Lambda, scale)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(pooled)
        if _statistic(perm[:a.size], perm[a.size:], Lambda, scale) >= obs:
            hits += 1
    p = (1 + hits) / (n_perm + 1)
    return SimilarityReport(float(obs), float(p), bool(p > alpha), float(alpha), float(Lambda), int(n_perm))


def reports_to_json(rows) -> str:
    """Serialize a list of (label, SimilarityReport) pairs as JSON rows."""
    return json.dumps([{"label": k, **r.to_dict()} for k, r in rows], sort_keys=True, indent=1)
