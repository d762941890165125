"""Information-bottleneck apparatus: class covariance log-determinants, the
closed-form ratio lower bound with its applicability regime, and a neural
mutual-information estimator (Donsker-Varadhan bound)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc

DEFAULT_SHRINKAGE = 1e-6


class NotInLemmaRegimeError(ValueError):
    """The closed-form bound's negativity conditions do not hold."""


@dataclass
class CovarianceSummary:
    log_det_within: list[float]
    log_det_total: float
    class_ids: list[int]
    d: int
    n_classes: int
    shrinkage: float


def _shrunk_logdet(cov: np.ndarray, eps: float) -> float:
    """log-determinant of cov + eps*I via Cholesky (symmetric PD after shrinkage)."""
    shrunk = cov + eps * np.eye(cov.shape[0])
    chol = np.linalg.cholesky(shrunk)
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def covariances(features: np.ndarray, labels, shrinkage: float = DEFAULT_SHRINKAGE) -> CovarianceSummary:
    """Per-class and total sample covariances (ddof=1) of unit-norm features.

    Unit-sphere features make raw covariances rank-deficient, so a +eps*I
    shrinkage keeps the log-determinants finite.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n, d = features.shape
    class_ids = sorted(int(c) for c in np.unique(labels))
    if len(class_ids) < 2:
        raise ValueError("need at least 2 classes")
    if n <= d:
        warnings.warn(f"only {n} samples for d={d}; covariances are poorly conditioned",
                      stacklevel=2)
    within = []
    for c in class_ids:
        fz = features[labels == c]
        if fz.shape[0] < 2:
            raise ValueError(f"class {c} has {fz.shape[0]} samples; need at least 2")
        cov = np.cov(fz, rowvar=False, ddof=1)
        within.append(_shrunk_logdet(np.atleast_2d(cov), shrinkage))
    total = _shrunk_logdet(np.atleast_2d(np.cov(features, rowvar=False, ddof=1)), shrinkage)
    return CovarianceSummary(within, total, class_ids, d, len(class_ids), shrinkage)


def ib_lower_bound(summary: CovarianceSummary) -> float:
    """Closed-form lower bound 1 - num/den on the relevance/compression ratio.

    Valid only when both num = d*log(2*pi*e) + mean(log|Sigma_W|) and
    den = d*log(2*pi*e) + log|Sigma_T| are negative; otherwise the bound
    is inapplicable and the call is rejected.
    """
    base = summary.d * np.log(2.0 * np.pi * np.e)
    numerator = base + float(np.mean(summary.log_det_within))
    denominator = base + summary.log_det_total
    if numerator >= 0 or denominator >= 0:
        raise NotInLemmaRegimeError(
            f"negativity conditions violated (num={numerator:.4g}, den={denominator:.4g})")
    return float(1.0 - numerator / denominator)


# ---------------------------------------------------------------------------
# MINE


@dataclass
class MineConfig:
    """Statistics network is a 4-layer ReLU MLP ending in a scalar score."""

    hidden_width: int = 64
    iterations: int = 2000
    batch_size: int = 128
    lr: float = 1e-4
    seed: int = 0
    tail_fraction: float = 0.1

    def __post_init__(self):
        if self.iterations < 1 or self.hidden_width < 1:
            raise ValueError("iterations and hidden_width must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")


class _Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}
        self.t = 0

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        for i, (w, g) in enumerate(zip(arrays, grads)):
            m = self.m.get(i, np.zeros_like(w))
            v = self.v.get(i, np.zeros_like(w))
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self.m[i], self.v[i] = m, v
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            w -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _mlp_forward(x: np.ndarray, layers, tape: ad.Tape):
    n = x.shape[0]
    ones_col = ad.Tensor(np.ones((n, 1)))
    h = ad.Tensor(x)
    for i, (w, b) in enumerate(layers):
        h = ad.add(ad.matmul(h, w), ad.matmul(ones_col, b))
        if i < len(layers) - 1:
            h = ad.relu(h)
    return h


def _log_mean_exp(t: ad.Tensor) -> ad.Tensor:
    m = float(np.max(t.data))
    shifted = ad.sub(t, ad.Tensor(np.full(t.shape, m)))
    return ad.add(ad.log(ad.mean(ad.exp(shifted))), ad.Tensor(m))


def mine_estimate(a: np.ndarray, b: np.ndarray, config: MineConfig,
                  return_history: bool = False):
    """Donsker-Varadhan mutual-information estimate (nats) for paired samples.

    Marginal pairs come from within-batch shuffling of ``b``.  The reported
    estimate is the mean bound value over the final ``tail_fraction`` of
    iterations, clamped below at 0.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] != b.shape[0]:
        raise ValueError("paired sample counts differ")
    n = a.shape[0]
    if n < 2 * config.batch_size:
        raise ValueError(f"need at least {2 * config.batch_size} samples, got {n}")

    rng = np.random.default_rng(config.seed)
    in_dim = a.shape[1] + b.shape[1]
    w = config.hidden_width
    dims = [in_dim, w, w, w, 1]
    weights = [rng.normal(0.0, np.sqrt(2.0 / fi), size=(fi, fo))
               for fi, fo in zip(dims[:-1], dims[1:])]
    biases = [np.zeros((1, fo)) for fo in dims[1:]]
    opt = _Adam(config.lr)

    history = []
    for _ in range(config.iterations):
        idx = rng.choice(n, size=config.batch_size, replace=False)
        shuf = rng.permutation(config.batch_size)
        joint = np.concatenate([a[idx], b[idx]], axis=1)
        marg = np.concatenate([a[idx], b[idx][shuf]], axis=1)

        tape = ad.Tape()
        layers = [(ad.Tensor(wt, tape=tape), ad.Tensor(bt, tape=tape))
                  for wt, bt in zip(weights, biases)]
        t_joint = _mlp_forward(joint, layers, tape)
        t_marg = _mlp_forward(marg, layers, tape)
        dv = ad.sub(ad.mean(t_joint), _log_mean_exp(t_marg))
        if not np.isfinite(dv.item()):
            raise FloatingPointError("non-finite DV objective during MINE training")
        grads = ad.backward(ad.neg(dv))
        arrays = [arr for pair in zip(weights, biases) for arr in pair]
        garr = [grads[t] for pair in layers for t in pair]
        opt.step(arrays, garr)
        history.append(dv.item())

    tail = max(1, int(round(config.tail_fraction * config.iterations)))
    estimate = max(0.0, float(np.mean(history[-tail:])))
    return (estimate, history) if return_history else estimate


# ---------------------------------------------------------------------------
# IB plane


@dataclass
class IbPlanePoint:
    group: str
    i_xz: float
    i_yz: float
    closed_form_bound: float | None


def _one_hot(labels: np.ndarray, class_ids) -> np.ndarray:
    ids = {int(c): i for i, c in enumerate(class_ids)}
    out = np.zeros((len(labels), len(ids)))
    for row, lab in enumerate(labels):
        out[row, ids[int(lab)]] = 1.0
    return out


def ib_plane(params: enc.EncoderParams, x: np.ndarray, y: np.ndarray,
             base_classes, xz_config: MineConfig, yz_config: MineConfig,
             shrinkage: float = DEFAULT_SHRINKAGE) -> list[IbPlanePoint]:
    """(I(X;Z), I(Y;Z)) MINE estimates for base / new / whole class groups.

    The closed-form bound is attached per group when its regime conditions
    hold; otherwise it is None.
    """
    y = np.asarray(y, dtype=np.int64)
    base_classes = set(int(c) for c in base_classes)
    z = np.atleast_2d(enc.embed(params, x))
    groups = {
        "base": np.isin(y, sorted(base_classes)),
        "new": ~np.isin(y, sorted(base_classes)),
        "whole": np.ones(len(y), dtype=bool),
    }
    points = []
    for name, mask in groups.items():
        if not mask.any():
            continue
        xg, yg, zg = x[mask], y[mask], z[mask]
        class_ids = sorted(int(c) for c in np.unique(yg))
        i_xz = mine_estimate(xg, zg, xz_config)
        i_yz = mine_estimate(_one_hot(yg, class_ids), zg, yz_config)
        bound = None
        if len(class_ids) >= 2 and all((yg == c).sum() >= 2 for c in class_ids):
            try:
                bound = ib_lower_bound(covariances(zg, yg, shrinkage))
            except NotInLemmaRegimeError:
                bound = None
        points.append(IbPlanePoint(name, i_xz, i_yz, bound))
    return points
