"""Session state machine: base training, classifier replacement, frozen-encoder
incremental prototype accumulation, and nearest-prototype evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import encoder as enc
from .losses import LossConfig, total_loss


@dataclass
class FscilSplit:
    """Disjoint class sets per session; session 0 is the base session."""

    session_classes: list[list[int]]
    ways: int
    shots: int
    seed: int


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")


@dataclass
class PrototypeBank:
    """Per-class feature-average prototypes, appended across sessions.

    ``encoder_digest`` pins the encoder state at classifier-replacement time;
    incremental updates must use the identical (frozen) encoder.
    """

    class_ids: list[int]
    prototypes: np.ndarray
    counts: list[int]
    encoder_digest: bytes = b""

    def __post_init__(self):
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate class ids in prototype bank")
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.prototypes.setflags(write=False)

    def __len__(self) -> int:
        return len(self.class_ids)


@dataclass
class SessionEval:
    """Accuracy summary for one session's evaluation (percent units)."""

    a_b: float
    a_n: float | None
    a_w: float
    n_base: int
    n_new: int
    per_class: dict[int, float] = field(default_factory=dict)


def make_split(all_classes, base_count: int, ways: int, shots: int,
               n_incremental: int, seed: int) -> FscilSplit:
    """Deterministic disjoint class partition: one base set plus N-way sessions."""
    all_classes = [int(c) for c in all_classes]
    if len(set(all_classes)) != len(all_classes):
        raise ValueError("duplicate class ids")
    needed = base_count + n_incremental * ways
    if needed > len(all_classes):
        raise ValueError(
            f"split needs {needed} classes but only {len(all_classes)} available")
    if base_count < 2 or ways < 1 or shots < 1 or n_incremental < 0:
        raise ValueError("invalid split parameters")
    rng = np.random.default_rng(seed)
    order = [all_classes[i] for i in rng.permutation(len(all_classes))]
    sessions = [sorted(order[:base_count])]
    pos = base_count
    for _ in range(n_incremental):
        sessions.append(sorted(order[pos:pos + ways]))
        pos += ways
    return FscilSplit(sessions, ways, shots, seed)


def build_session_train_sets(split: FscilSplit, dataset: data_mod.Dataset,
                             seed: int) -> list[data_mod.Dataset]:
    """Session 0 keeps all base-class data; later sessions get K shots per class."""
    rng = np.random.default_rng(seed)
    out = [dataset.for_classes(split.session_classes[0])]
    if len(out[0]) == 0:
        raise ValueError("no training data for the base classes")
    for classes in split.session_classes[1:]:
        idx_parts = []
        for c in classes:
            cand = np.flatnonzero(dataset.y == c)
            if len(cand) < split.shots:
                raise ValueError(f"class {c} has {len(cand)} samples, needs {split.shots}")
            idx_parts.append(rng.choice(cand, size=split.shots, replace=False))
        out.append(dataset.subset(np.sort(np.concatenate(idx_parts))))
    return out


class _SgdNesterov:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.buffers: dict[int, np.ndarray] = {}

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        cfg = self.cfg
        for i, (w, g) in enumerate(zip(arrays, grads)):
            g = g + cfg.weight_decay * w
            buf = self.buffers.get(i)
            buf = g if buf is None else cfg.momentum * buf + g
            self.buffers[i] = buf
            upd = g + cfg.momentum * buf if cfg.nesterov else buf
            w -= lr * upd


def make_augment_fn(spec: data_mod.AugmentationSpec, image_side: int | None):
    """Batch augmentation callback with per-sample seed streams."""

    def fn(x_batch: np.ndarray, sample_ids, epoch: int) -> np.ndarray:
        return data_mod.augment_batch(x_batch, spec, epoch, sample_ids, image_side)

    return fn


@dataclass
class TrainResult:
    params: enc.EncoderParams
    classifier: np.ndarray
    class_ids: list[int]
    history: list[dict]


def train_base(params: enc.EncoderParams, x: np.ndarray, y: np.ndarray,
               loss_config: LossConfig, train_config: TrainConfig,
               augment_fn=None) -> tuple[enc.EncoderParams, np.ndarray, TrainResult]:
    """SGD over the combined objective on the base session.

    Returns ``(trained_params, classifier, result)``; the classifier rows are
    ordered by ascending class id (``result.class_ids``).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty base dataset")
    class_ids = sorted(int(c) for c in np.unique(y))
    if len(class_ids) < 2:
        raise ValueError("base session needs at least 2 classes")
    remap = {c: i for i, c in enumerate(class_ids)}
    y_idx = np.array([remap[int(v)] for v in y])

    params = params.copy()
    d = params.embedding_dim
    rng = np.random.default_rng(train_config.seed)
    classifier = rng.normal(size=(len(class_ids), d))
    classifier /= np.linalg.norm(classifier, axis=1, keepdims=True)

    if loss_config.lambda_ssc > 0 and augment_fn is None:
        raise ValueError("lambda_ssc > 0 requires an augmentation callback")

    opt = _SgdNesterov(train_config)
    milestones = sorted({int(train_config.epochs * 0.8), int(train_config.epochs * 0.9)})
    history: list[dict] = []
    n = len(x)
    for epoch in range(train_config.epochs):
        lr = train_config.lr
        for m in milestones:
            if epoch >= m and m > 0:
                lr *= train_config.decay_factor
        order = rng.permutation(n)
        epoch_terms: dict[str, float] = {}
        n_batches = 0
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            if len(idx) < 2:
                continue  # cosine pair terms need at least 2 samples
            xb, yb = x[idx], y_idx[idx]
            tape = ad.Tape()
            z, leaves = enc.embed_graph(params, xb, tape)
            phi = ad.Tensor(classifier, tape=tape)
            aug_z = None
            if loss_config.lambda_ssc > 0:
                xa = augment_fn(xb, idx, epoch)
                n_aug = xa.shape[0]
                ones_col = ad.Tensor(np.ones((n_aug, 1)))
                h = ad.Tensor(xa)
                for li, (w, b) in enumerate(leaves):
                    h = ad.add(ad.matmul(h, w), ad.matmul(ones_col, b))
                    if li < len(leaves) - 1:
                        h = ad.relu(h)
                aug_z = ad.row_normalize(h)
            loss, terms = total_loss(z, yb, phi, loss_config, aug_features=aug_z)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}: {terms}")
            grads = ad.backward(loss)
            arrays = [a for pair in zip(params.weights, params.biases) for a in pair]
            garr = [grads[t] for pair in leaves for t in pair]
            garr = [g.reshape(a.shape) for g, a in zip(garr, arrays)]
            opt.step(arrays + [classifier], garr + [grads[phi]], lr)
            for k, v in terms.items():
                epoch_terms[k] = epoch_terms.get(k, 0.0) + v
            n_batches += 1
        history.append({"epoch": epoch, "lr": lr,
                        **{k: v / max(n_batches, 1) for k, v in epoch_terms.items()}})
    result = TrainResult(params, classifier, class_ids, history)
    return params, classifier, result


def classify_with_weights(params: enc.EncoderParams, weights: np.ndarray,
                          class_ids, x: np.ndarray):
    """Cosine-argmax classification against arbitrary weight vectors."""
    z = np.atleast_2d(enc.embed(params, x))
    w = np.asarray(weights, dtype=np.float64)
    wn = w / np.linalg.norm(w, axis=1, keepdims=True)
    order = np.argsort(np.asarray(class_ids))
    scores = z @ wn[order].T
    ids_sorted = np.asarray(class_ids)[order]
    pred = ids_sorted[np.argmax(scores, axis=1)]  # first max = lowest class id
    return pred, scores, ids_sorted


def classifier_replace(params: enc.EncoderParams, x: np.ndarray, y: np.ndarray,
                       expected_classes=None) -> PrototypeBank:
    """Discard the trained classifier; build feature-average prototypes."""
    y = np.asarray(y, dtype=np.int64)
    present = set(int(c) for c in np.unique(y))
    if expected_classes is not None:
        missing = set(int(c) for c in expected_classes) - present
        if missing:
            raise ValueError(f"classes without samples: {sorted(missing)}")
    z = np.atleast_2d(enc.embed(params, x))
    ids, protos, counts = [], [], []
    for c in sorted(present):
        mask = y == c
        ids.append(c)
        protos.append(z[mask].mean(axis=0))
        counts.append(int(mask.sum()))
    return PrototypeBank(ids, np.array(protos), counts, params.fingerprint())


def incremental_update(bank: PrototypeBank, params: enc.EncoderParams,
                       x: np.ndarray, y: np.ndarray) -> PrototypeBank:
    """Append prototypes for a new session; existing entries stay bit-identical."""
    if params.fingerprint() != bank.encoder_digest:
        raise ValueError("encoder differs from the one frozen at classifier replacement")
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        return bank
    new_classes = sorted(set(int(c) for c in np.unique(y)))
    overlap = set(new_classes) & set(bank.class_ids)
    if overlap:
        raise ValueError(f"classes already in bank: {sorted(overlap)}")
    z = np.atleast_2d(enc.embed(params, x))
    ids = list(bank.class_ids)
    protos = [bank.prototypes]
    counts = list(bank.counts)
    for c in new_classes:
        mask = y == c
        ids.append(c)
        protos.append(z[mask].mean(axis=0)[None, :])
        counts.append(int(mask.sum()))
    return PrototypeBank(ids, np.concatenate(protos), counts, bank.encoder_digest)


def classify(params: enc.EncoderParams, bank: PrototypeBank, x: np.ndarray):
    """Nearest-prototype prediction; ties break to the lowest class id.

    For a single input vector returns ``(id, scores, class_ids)``; for a
    batch the first element is an array of ids.
    """
    if len(bank) == 0:
        raise ValueError("empty prototype bank")
    pred, scores, ids_sorted = classify_with_weights(
        params, bank.prototypes, bank.class_ids, x)
    if np.asarray(x).ndim == 1:
        return int(pred[0]), scores[0], ids_sorted
    return pred, scores, ids_sorted


def evaluate_session(params: enc.EncoderParams, bank: PrototypeBank,
                     test_x: np.ndarray, test_y: np.ndarray,
                     base_classes) -> SessionEval:
    """A_B / A_N / A_W (percent) over a test set restricted to seen classes."""
    test_y = np.asarray(test_y, dtype=np.int64)
    seen = set(bank.class_ids)
    unseen = set(int(c) for c in np.unique(test_y)) - seen
    if unseen:
        raise ValueError(f"test set contains unseen classes: {sorted(unseen)}")
    pred, _, _ = classify_with_weights(params, bank.prototypes, bank.class_ids, test_x)
    correct = pred == test_y
    base_classes = set(int(c) for c in base_classes)
    base_mask = np.isin(test_y, sorted(base_classes))
    n_base = int(base_mask.sum())
    n_new = int((~base_mask).sum())
    a_b = 100.0 * correct[base_mask].mean() if n_base else 0.0
    a_n = 100.0 * correct[~base_mask].mean() if n_new else None
    a_w = 100.0 * correct.mean()
    per_class = {int(c): 100.0 * correct[test_y == c].mean()
                 for c in np.unique(test_y)}
    return SessionEval(float(a_b), None if a_n is None else float(a_n),
                       float(a_w), n_base, n_new, per_class)
