"""Dataset provisioning: synthetic clusters, IDX ingestion, augmentation,
and rotated-class synthesis for hyperparameter validation."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; message carries the byte offset of the defect."""


@dataclass
class Dataset:
    """Row-major inputs with integer labels.

    ``image_side`` is set when inputs are flattened square single-channel
    images, which enables crop/flip/rotation augmentation.
    """

    x: np.ndarray
    y: np.ndarray
    image_side: int | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"inconsistent dataset shapes {self.x.shape} / {self.y.shape}")
        if self.image_side is not None and self.image_side ** 2 != self.x.shape[1]:
            raise ValueError("image_side does not match input length")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.image_side)

    def for_classes(self, classes) -> "Dataset":
        return self.subset(np.isin(self.y, np.asarray(list(classes))))


@dataclass
class AugmentationSpec:
    """Pad-crop + horizontal flip + additive Gaussian noise pipeline."""

    crop: tuple[int, int] | None = None  # (pad pixels, crop size)
    hflip_prob: float = 0.0
    noise_std: float = 0.0
    seed_stream: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must be in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def synth_gaussian_classes(n_classes: int, n_per_class: int, input_dim: int,
                           center_separation: float, cluster_std: float,
                           seed: int) -> Dataset:
    """Isotropic Gaussian clusters with centers on a sphere of the given radius."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_per_class < 1:
        raise ValueError("need at least 1 sample per class")
    if center_separation <= 0:
        raise ValueError("center_separation must be positive")
    if cluster_std < 0:
        raise ValueError("cluster_std must be nonnegative")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_classes, input_dim))
    centers = center_separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    xs, ys = [], []
    for c in range(n_classes):
        xs.append(centers[c] + cluster_std * rng.normal(size=(n_per_class, input_dim)))
        ys.append(np.full(n_per_class, c))
    return Dataset(np.concatenate(xs), np.concatenate(ys))


def _read_exact(f, n: int, path, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IdxFormatError(
            f"{path}: truncated while reading {what} at byte offset {f.tell() - len(buf)}")
    return buf


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair (big-endian), scaling pixels to [0, 1]."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad image magic 0x{magic:08x} at byte offset 0")
        payload = _read_exact(f, count * rows * cols, images_path, "image payload")
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x} at byte offset 0")
        labels = np.frombuffer(_read_exact(f, label_count, labels_path, "label payload"),
                               dtype=np.uint8)
    if count != label_count:
        raise IdxFormatError(
            f"image count {count} != label count {label_count} "
            f"({images_path} vs {labels_path})")
    x = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    return Dataset(x, labels.astype(np.int64),
                   image_side=rows if rows == cols else None)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset back to the IDX pair format (pixels rescaled to 0..255)."""
    if dataset.image_side is None:
        raise ValueError("only square-image datasets can be written as IDX")
    side = dataset.image_side
    pixels = np.clip(np.rint(dataset.x * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(dataset), side, side))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(dataset)))
        f.write(dataset.y.astype(np.uint8).tobytes())


def augment(sample: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator,
            image_side: int | None = None) -> np.ndarray:
    """One augmented view of a single sample vector; label is never touched."""
    out = np.array(sample, dtype=np.float64)
    is_image = image_side is not None
    if spec.crop is not None:
        if not is_image:
            raise ValueError("crop augmentation requires square-image data")
        pad, size = spec.crop
        img = out.reshape(image_side, image_side)
        padded = np.pad(img, pad)
        r = rng.integers(0, padded.shape[0] - size + 1)
        c = rng.integers(0, padded.shape[1] - size + 1)
        cropped = padded[r:r + size, c:c + size]
        if size != image_side:  # keep dimensionality fixed across a dataset
            full = np.zeros((image_side, image_side))
            full[:size, :size] = cropped
            cropped = full
        out = cropped.reshape(-1)
    if spec.hflip_prob > 0:
        if not is_image:
            raise ValueError("horizontal flip requires square-image data")
        if rng.random() < spec.hflip_prob:
            out = out.reshape(image_side, image_side)[:, ::-1].reshape(-1)
    if spec.noise_std > 0:
        out = out + rng.normal(0.0, spec.noise_std, size=out.shape)
        if is_image:
            out = np.clip(out, 0.0, 1.0)
    return out


def augment_batch(x: np.ndarray, spec: AugmentationSpec, base_seed: int,
                  sample_ids, image_side: int | None = None) -> np.ndarray:
    """Per-sample seed streams: result is independent of scheduling order."""
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    for row, sid in enumerate(sample_ids):
        rng = np.random.default_rng((spec.seed_stream, base_seed, int(sid)))
        out[row] = augment(x[row], spec, rng, image_side)
    return out


def rotate_class_synthesis(dataset: Dataset, source_class: int, degrees: int) -> Dataset:
    """Synthesize a new class by rotating one class's images by a 90-degree multiple.

    Rotation is an exact pixel permutation; the new samples get a fresh class
    id disjoint from the dataset's labels.
    """
    if dataset.image_side is None:
        raise ValueError("rotation requires square-image data")
    if degrees not in (90, 180, 270):
        raise ValueError(f"unsupported rotation {degrees}; use 90, 180 or 270")
    src = dataset.x[dataset.y == source_class]
    if src.shape[0] == 0:
        raise ValueError(f"no samples for class {source_class}")
    side = dataset.image_side
    k = degrees // 90
    imgs = src.reshape(-1, side, side)
    rotated = np.rot90(imgs, k=k, axes=(1, 2)).reshape(src.shape[0], -1)
    new_id = int(dataset.y.max()) + 1
    return Dataset(rotated.copy(), np.full(src.shape[0], new_id), image_side=side)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label"] + [f"x{i}" for i in range(dataset.x.shape[1])])
        for label, row in zip(dataset.y, dataset.x):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, image_side: int | None = None) -> Dataset:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    y = np.array([int(r[0]) for r in rows[1:]])
    x = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return Dataset(x, y, image_side)


def hyperparam_search(base_dataset: Dataset, candidate_configs, *,
                      encoder_dims, train_config, val_fraction: float = 0.2,
                      fake_sessions: int = 2, shots: int = 5, seed: int = 0):
    """Pick the loss config whose fake incremental run scores the best A_W.

    Fake new classes are synthesized by rotating base-class images (angles
    cycling 90/180/270, one rotated class per fake session); a held-out
    portion of the base data serves as validation.  Ties go to the first
    candidate.
    """
    from . import protocol

    candidates = list(candidate_configs)
    if not candidates:
        raise ValueError("need at least one candidate config")
    if base_dataset.image_side is None:
        raise ValueError("rotated-class validation requires square-image data")

    rng = np.random.default_rng(seed)
    n = len(base_dataset)
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val = base_dataset.subset(perm[:n_val])
    train = base_dataset.subset(perm[n_val:])

    base_classes = [int(c) for c in train.classes]
    angles = [90, 180, 270]
    fake_train, fake_test = [], []
    working = Dataset(train.x, train.y, train.image_side)
    for s in range(fake_sessions):
        src = base_classes[s % len(base_classes)]
        rotated = rotate_class_synthesis(working, src, angles[s % 3])
        idx = rng.permutation(len(rotated))
        fake_train.append(rotated.subset(idx[:shots]))
        fake_test.append(rotated.subset(idx[shots:shots + max(1, len(rotated) - shots)]))
        working = Dataset(np.concatenate([working.x, rotated.x]),
                          np.concatenate([working.y, rotated.y]), working.image_side)

    best_cfg, best_score = None, -np.inf
    for cfg in candidates:
        score = _score_candidate(train, val, fake_train, fake_test, cfg,
                                 encoder_dims, train_config, seed)
        if score > best_score:
            best_cfg, best_score = cfg, score
    return best_cfg


def _score_candidate(train, val, fake_train, fake_test, loss_config,
                     encoder_dims, train_config, seed) -> float:
    from . import encoder, protocol

    params = encoder.init_params(list(encoder_dims), seed)
    spec = AugmentationSpec(noise_std=0.05, seed_stream=seed)
    aug = protocol.make_augment_fn(spec, train.image_side)
    params, _, _ = protocol.train_base(params, train.x, train.y, loss_config,
                                       train_config, augment_fn=aug)
    bank = protocol.classifier_replace(params, train.x, train.y)
    for dt in fake_train:
        bank = protocol.incremental_update(bank, params, dt.x, dt.y)
    test_x = np.concatenate([val.x] + [t.x for t in fake_test])
    test_y = np.concatenate([val.y] + [t.y for t in fake_test])
    report = protocol.evaluate_session(params, bank, test_x, test_y,
                                       base_classes=set(int(c) for c in train.classes))
    return report.a_w
