"""Config-driven experiment driver: one run = dataset -> base training ->
classifier replacement -> incremental sessions -> metrics, repeated over
seeds, with JSON/CSV artifacts embedding the config hash."""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as data_mod
from . import encoder as enc
from . import ib as ib_mod
from . import metrics as metrics_mod
from . import protocol
from .losses import LossConfig
from .protocol import TrainConfig


@dataclass
class DatasetSpec:
    kind: str = "synthetic"  # "synthetic" or "idx"
    n_classes: int = 30
    n_train_per_class: int = 50
    n_test_per_class: int = 20
    input_dim: int = 16
    center_separation: float = 3.0
    cluster_std: float = 1.2
    # idx-only fields
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class SplitSpec:
    base_count: int = 20
    ways: int = 5
    shots: int = 5
    sessions: int = 2


@dataclass
class MetricToggles:
    transferability: bool = True
    spread: bool = True
    histogram: bool = False
    ib: bool = False


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    embedding_dim: int = 16
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricToggles = field(default_factory=MetricToggles)
    augment_noise_std: float = 0.1
    augment_crop_pad: int = 2  # 0 disables crop views on image data
    n_trials: int = 3
    master_seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        return ExperimentConfig(
            dataset=DatasetSpec(**doc.get("dataset", {})),
            split=SplitSpec(**doc.get("split", {})),
            hidden_dims=list(doc.get("hidden_dims", [64, 64])),
            embedding_dim=int(doc.get("embedding_dim", 16)),
            loss=LossConfig(**doc.get("loss", {})),
            train=TrainConfig(**doc.get("train", {})),
            metrics=MetricToggles(**doc.get("metrics", {})),
            augment_noise_std=float(doc.get("augment_noise_std", 0.1)),
            augment_crop_pad=int(doc.get("augment_crop_pad", 2)),
            n_trials=int(doc.get("n_trials", 3)),
            master_seed=int(doc.get("master_seed", 0)),
        )

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(json.loads(text))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


PRESETS = {
    "baseline": {"tau": 1.0 / 16.0, "lambda_ssc": 0.0, "lambda_inter": 0.0},
    "baseline_rs": {"tau": 1.0 / 32.0, "lambda_ssc": 0.1, "lambda_inter": 0.0},
    "closer": {"tau": 1.0 / 32.0, "lambda_ssc": 0.1, "lambda_inter": 1.0},
}


def preset_config(name: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """The three comparison arms are the same config one loss flag apart."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = base if base is not None else ExperimentConfig()
    cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, **PRESETS[name]))
    return cfg


class StageError(RuntimeError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _load_datasets(spec: DatasetSpec, seed: int):
    if spec.kind == "synthetic":
        per_class = spec.n_train_per_class + spec.n_test_per_class
        ds = data_mod.synth_gaussian_classes(
            spec.n_classes, per_class, spec.input_dim,
            spec.center_separation, spec.cluster_std, seed)
        train_idx, test_idx = [], []
        for c in ds.classes:
            rows = np.flatnonzero(ds.y == c)
            train_idx.append(rows[: spec.n_train_per_class])
            test_idx.append(rows[spec.n_train_per_class:])
        return ds.subset(np.concatenate(train_idx)), ds.subset(np.concatenate(test_idx))
    if spec.kind == "idx":
        train = data_mod.load_idx(spec.train_images, spec.train_labels)
        test = data_mod.load_idx(spec.test_images, spec.test_labels)
        return train, test
    raise ValueError(f"unknown dataset kind {spec.kind!r}")


@dataclass
class TrialResult:
    seed: int
    sessions: list[dict]
    pd: float | None
    a_b_before_cr: float
    a_b_after_cr: float
    t_value: float | None
    intra_spread: float | None
    inter_distance: float | None
    ib_points: list[dict] = field(default_factory=list)


def run_trial(config: ExperimentConfig, seed: int,
              collect_features: bool = False) -> TrialResult | tuple:
    """One seeded pass of the full protocol; deterministic given (config, seed)."""
    stage = "dataset"
    try:
        train_ds, test_ds = _load_datasets(config.dataset, seed)
        stage = "split"
        split = protocol.make_split(train_ds.classes, config.split.base_count,
                                    config.split.ways, config.split.shots,
                                    config.split.sessions, seed)
        session_train = protocol.build_session_train_sets(split, train_ds, seed)
        base_classes = set(split.session_classes[0])

        stage = "train_base"
        dims = [train_ds.x.shape[1]] + list(config.hidden_dims) + [config.embedding_dim]
        params = enc.init_params(dims, seed)
        spec = data_mod.AugmentationSpec(noise_std=config.augment_noise_std,
                                         seed_stream=seed)
        if train_ds.image_side is not None and config.augment_crop_pad > 0:
            side = train_ds.image_side
            spec = data_mod.AugmentationSpec(crop=(config.augment_crop_pad, side),
                                             noise_std=config.augment_noise_std,
                                             seed_stream=seed)
        aug = protocol.make_augment_fn(spec, train_ds.image_side)
        tc = dataclasses.replace(config.train, seed=seed)
        d0 = session_train[0]
        params, classifier, train_res = protocol.train_base(
            params, d0.x, d0.y, config.loss, tc, augment_fn=aug)

        stage = "classifier_replacement"
        base_test = test_ds.for_classes(base_classes)
        pred_bef, _, _ = protocol.classify_with_weights(
            params, classifier, train_res.class_ids, base_test.x)
        a_b_before = 100.0 * float(np.mean(pred_bef == base_test.y))
        bank = protocol.classifier_replace(params, d0.x, d0.y,
                                           expected_classes=base_classes)

        stage = "sessions"
        sessions = []
        seen = set(base_classes)
        ev0 = protocol.evaluate_session(params, bank, base_test.x, base_test.y,
                                        base_classes)
        a_b_after = ev0.a_b
        sessions.append({"session": 0, "a_b": ev0.a_b, "a_n": ev0.a_n, "a_w": ev0.a_w})
        for t, dt in enumerate(session_train[1:], start=1):
            bank = protocol.incremental_update(bank, params, dt.x, dt.y)
            seen |= set(split.session_classes[t])
            test_t = test_ds.for_classes(seen)
            ev = protocol.evaluate_session(params, bank, test_t.x, test_t.y,
                                           base_classes)
            sessions.append({"session": t, "a_b": ev.a_b, "a_n": ev.a_n, "a_w": ev.a_w})

        stage = "metrics"
        pd_val = (metrics_mod.performance_drop([s["a_w"] for s in sessions])
                  if len(sessions) >= 2 else None)
        n_base = len(base_classes)
        base_protos = bank.prototypes[:n_base]
        new_classes = sorted(set(int(c) for cs in split.session_classes[1:] for c in cs))
        new_test = test_ds.for_classes(new_classes) if new_classes else None
        t_value = None
        if config.metrics.transferability and new_test is not None and len(new_test):
            t_value = metrics_mod.transferability(params, base_protos, new_test.x)
        intra = inter = None
        feats = labels = None
        if config.metrics.spread or config.metrics.histogram or collect_features:
            feats = np.atleast_2d(enc.embed(params, test_ds.for_classes(seen).x))
            labels = test_ds.for_classes(seen).y
        if config.metrics.spread:
            ss = metrics_mod.spread_stats(
                np.atleast_2d(enc.embed(params, base_test.x)), base_test.y,
                base_protos, bank.class_ids[:n_base])
            intra, inter = ss.intra_spread, ss.inter_distance
        ib_points = []
        if config.metrics.ib:
            eval_ds = test_ds.for_classes(seen)
            base_mask = np.isin(eval_ds.y, sorted(base_classes))
            # the smallest evaluated group bounds the usable batch size
            n_eval = min(g for g in (int(base_mask.sum()),
                                     int((~base_mask).sum()),
                                     len(eval_ds)) if g > 0)
            bs = max(2, min(128, n_eval // 2))
            xz = ib_mod.MineConfig(hidden_width=128, iterations=2000, batch_size=bs, seed=seed)
            yz = ib_mod.MineConfig(hidden_width=64, iterations=2000, batch_size=bs, seed=seed)
            pts = ib_mod.ib_plane(params, eval_ds.x, eval_ds.y, base_classes, xz, yz)
            ib_points = [asdict(p) for p in pts]

        result = TrialResult(seed, sessions, pd_val, a_b_before, a_b_after,
                             t_value, intra, inter, ib_points)
        if collect_features:
            return result, {"params": params, "bank": bank, "features": feats,
                            "labels": labels, "test": test_ds, "seen": seen,
                            "base_classes": sorted(base_classes)}
        return result
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - re-raise with the failing stage named
        raise StageError(stage, e) from e


def _mean_std(values) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None}
    return {"mean": float(np.mean(vals)), "std": float(np.std(vals))}


def summarize_trials(trials: list[TrialResult]) -> dict:
    n_sessions = len(trials[0].sessions)
    sessions = []
    for s in range(n_sessions):
        sessions.append({
            "session": s,
            "a_b": _mean_std([t.sessions[s]["a_b"] for t in trials]),
            "a_n": _mean_std([t.sessions[s]["a_n"] for t in trials]),
            "a_w": _mean_std([t.sessions[s]["a_w"] for t in trials]),
        })
    return {
        "sessions": sessions,
        "pd": _mean_std([t.pd for t in trials]),
        "a_b_before_cr": _mean_std([t.a_b_before_cr for t in trials]),
        "a_b_after_cr": _mean_std([t.a_b_after_cr for t in trials]),
        "cr_drop": _mean_std([t.a_b_before_cr - t.a_b_after_cr for t in trials]),
        "t_value": _mean_std([t.t_value for t in trials]),
        "intra_spread": _mean_std([t.intra_spread for t in trials]),
        "inter_distance": _mean_std([t.inter_distance for t in trials]),
    }


def run(config: ExperimentConfig, out_dir: str) -> dict:
    """Execute all trials and write summary.json / sessions.csv / raw dump."""
    os.makedirs(out_dir, exist_ok=True)
    chash = config.config_hash()
    trials, last_extras = [], None
    for trial in range(config.n_trials):
        seed = config.master_seed + trial
        res = run_trial(config, seed, collect_features=True)
        result, extras = res
        trials.append(result)
        last_extras = extras
    summary = {
        "config_hash": chash,
        "master_seed": config.master_seed,
        "n_trials": config.n_trials,
        "aggregate": summarize_trials(trials),
        "trials": [asdict(t) for t in trials],
    }
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        f.write(config.to_json())
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    _write_sessions_csv(os.path.join(out_dir, "sessions.csv"), summary)
    np.savez(os.path.join(out_dir, "raw.npz"),
             features=last_extras["features"],
             labels=last_extras["labels"],
             prototypes=last_extras["bank"].prototypes,
             prototype_class_ids=np.array(last_extras["bank"].class_ids),
             test_x=last_extras["test"].for_classes(last_extras["seen"]).x,
             test_y=last_extras["test"].for_classes(last_extras["seen"]).y,
             base_classes=np.array(last_extras["base_classes"]))
    enc.save_params(last_extras["params"], os.path.join(out_dir, "encoder.json"))
    return summary


def _write_sessions_csv(path: str, summary: dict) -> None:
    lines = [f"# config_hash={summary['config_hash']} master_seed={summary['master_seed']}",
             "session,a_b,a_n,a_w"]
    for s in summary["aggregate"]["sessions"]:
        a_n = s["a_n"]["mean"]
        lines.append(f"{s['session']},{s['a_b']['mean']:.6f},"
                     f"{'' if a_n is None else f'{a_n:.6f}'},{s['a_w']['mean']:.6f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def ablate(base_config: ExperimentConfig, out_dir: str,
           low_tau: float = 1.0 / 32.0, base_tau: float = 1.0 / 16.0,
           lambda_ssc: float = 0.1, lambda_inter: float = 1.0) -> list[dict]:
    """2x2x2 grid over {low tau, contrastive term, inter-class term}."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for flags in itertools.product([False, True], repeat=3):
        lt, use_ssc, use_inter = flags
        loss = dataclasses.replace(
            base_config.loss,
            tau=low_tau if lt else base_tau,
            lambda_ssc=lambda_ssc if use_ssc else 0.0,
            lambda_inter=lambda_inter if use_inter else 0.0)
        cfg = dataclasses.replace(base_config, loss=loss)
        cell_dir = os.path.join(out_dir, f"lt{int(lt)}_ssc{int(use_ssc)}_inter{int(use_inter)}")
        summary = run(cfg, cell_dir)
        agg = summary["aggregate"]
        last = agg["sessions"][-1]
        rows.append({
            "low_tau": lt, "ssc": use_ssc, "inter": use_inter,
            "a_b": last["a_b"]["mean"],
            "a_n": last["a_n"]["mean"],
            "a_w": last["a_w"]["mean"],
            "pd": agg["pd"]["mean"],
        })
    rows.sort(key=lambda r: (r["low_tau"], r["ssc"], r["inter"]))
    with open(os.path.join(out_dir, "ablation.csv"), "w") as f:
        f.write("low_tau,ssc,inter,a_b,a_n,a_w,pd\n")
        for r in rows:
            f.write(f"{int(r['low_tau'])},{int(r['ssc'])},{int(r['inter'])},"
                    f"{r['a_b']:.6f},{r['a_n']:.6f},{r['a_w']:.6f},{r['pd']:.6f}\n")
    return rows


def export(run_dir: str, what: str) -> list[str]:
    """Write CSV artifacts from a completed run directory."""
    summary_path = os.path.join(run_dir, "summary.json")
    raw_path = os.path.join(run_dir, "raw.npz")
    if not (os.path.exists(summary_path) and os.path.exists(raw_path)):
        raise FileNotFoundError(f"{run_dir} does not contain a completed run")
    with open(summary_path) as f:
        summary = json.load(f)
    raw = np.load(raw_path)
    written = []
    if what == "metrics":
        rows = [{"session": s["session"], "a_b": s["a_b"]["mean"],
                 "a_n": s["a_n"]["mean"], "a_w": s["a_w"]["mean"]}
                for s in summary["aggregate"]["sessions"]]
        path = os.path.join(run_dir, "metrics.csv")
        metrics_mod.write_session_csv(path, rows)
        written.append(path)
    elif what == "histograms":
        feats = raw["features"]
        if feats.shape[1] != 2:
            raise ValueError(
                f"histogram export needs a d=2 run; this run has d={feats.shape[1]}")
        edges, counts = metrics_mod.angular_histogram(feats, raw["labels"], bins=36)
        path = os.path.join(run_dir, "histogram.csv")
        metrics_mod.write_histogram_csv(path, edges, counts)
        written.append(path)
    elif what == "features":
        path = os.path.join(run_dir, "features.csv")
        metrics_mod.write_features_csv(path, raw["features"], raw["labels"])
        written.append(path)
    elif what == "ib":
        points = []
        for t in summary["trials"]:
            points.extend(t.get("ib_points", []))
        path = os.path.join(run_dir, "ib_plane.csv")
        with open(path, "w") as f:
            f.write("group,i_xz,i_yz,closed_form_bound\n")
            for p in points:
                b = p["closed_form_bound"]
                f.write(f"{p['group']},{p['i_xz']:.6f},{p['i_yz']:.6f},"
                        f"{'' if b is None else f'{b:.6f}'}\n")
        written.append(path)
    else:
        raise ValueError(f"unknown export kind {what!r}")
    return written
