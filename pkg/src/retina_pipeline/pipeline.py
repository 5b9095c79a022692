"""The pipeline commands behind the CLI.

Each ``cmd_*`` function takes an :class:`ExperimentConfig`, writes its
outputs under ``paths.output_dir`` and records every file it wrote, with a
SHA-256, in ``artifacts.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import cascade as cascade_mod
from .augment import augment
from .config import ExperimentConfig
from .dataset import (
    TaskKind,
    class_distribution,
    load_manifest,
    oversample,
    read_split_csv,
    regroup_labels,
    split,
    write_split_csv,
)
from .errors import ConfigError, DataError, MissingFile, MissingImage, MissingNodeModel
from .imageops import preprocess, read_png, resize, write_png
from .metrics import evaluate, write_report, write_table_csv, TABLE_METRICS
from .modelkit import build_classifier, load_checkpoint, read_checkpoint_meta, save_checkpoint
from .trainer import ArraySplit, epoch_log_line, prepare_model, train

log = logging.getLogger(__name__)

ARTIFACTS_FILE = "artifacts.json"
SPLIT_NAMES = ("train", "val", "test")

# Published test-set results for the headline configurations, keyed by
# (task, backbone, optimizer). Used by ``report --reference`` for side-by-side deltas.
REFERENCE_RESULTS = {
    ("BINARY", "RESNET50", "ADAM"): (0.9659, 0.97, 0.97, 0.99, 0.99, 0.9659),
    ("BINARY", "VGG16", "ADAM"): (0.9503, 0.95, 0.95, 0.97, 0.98, 0.9502),
    ("BINARY", "VGG19", "ADAM"): (0.9517, 0.95, 0.95, 0.98, 0.98, 0.9487),
    ("BINARY", "INCEPTION_V3", "ADAM"): (0.8963, 0.89, 0.89, 0.94, 0.94, 0.892),
    ("BINARY", "RESNET50", "SGD"): (0.956, 0.95, 0.95, 0.99, 0.99, 0.953),
    ("BINARY", "VGG16", "SGD"): (0.9119, 0.91, 0.91, 0.97, 0.97, 0.9117),
    ("BINARY", "VGG19", "SGD"): (0.9219, 0.92, 0.92, 0.97, 0.97, 0.9219),
    ("BINARY", "INCEPTION_V3", "SGD"): (0.7827, 0.82, 0.79, 0.88, 0.93, 0.781),
    ("THREE", "INCEPTION_RESNET_V2", "ADAM"): (0.8814, 0.88, 0.88, 0.98, 0.97, 0.8827),
    ("FIVE", "INCEPTION_RESNET_V2", "ADAM"): (0.8502, 0.85, 0.85, 0.97, 0.97, 0.8495),
}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactLog:
    """Collects written files and merges them into ``artifacts.json``."""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)
        self.paths: list[Path] = []

    def add(self, *paths) -> None:
        self.paths.extend(Path(p) for p in paths)

    def _key(self, p: Path) -> str:
        try:
            return p.resolve().relative_to(self.output_dir.resolve()).as_posix()
        except ValueError:
            return str(p.resolve())

    def save(self) -> dict[str, str]:
        index_path = self.output_dir / ARTIFACTS_FILE
        index = json.loads(index_path.read_text()) if index_path.is_file() else {}
        for p in self.paths:
            index[self._key(p)] = sha256_file(p)
        index_path.parent.mkdir(parents=True, exist_ok=True)
        index_path.write_text(json.dumps(dict(sorted(index.items())), indent=2) + "\n", encoding="utf-8")
        return index


# ---------------------------------------------------------------- images


def _cache_path(cfg: ExperimentConfig, source: Path) -> Path:
    digest = sha256_file(source)[:12]
    return cfg.cache_dir / cfg.preprocess_key() / f"{source.stem}_{digest}.png"


def _preprocess_to(args) -> str:
    src, dst, pcfg = args
    write_png(preprocess(read_png(src), pcfg), dst)
    return str(dst)


def ensure_preprocessed(cfg: ExperimentConfig, sources: list[Path], jobs: int = 1) -> list[Path]:
    """Make sure every source image has a cached preprocessed copy; return paths written."""
    todo = []
    for src in sorted(set(sources)):
        if not src.is_file():
            raise MissingImage(src.stem, src)
        dst = _cache_path(cfg, src)
        if not dst.is_file():
            todo.append((src, dst, cfg.preprocess))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            written = list(pool.map(_preprocess_to, todo, chunksize=4))
    else:
        written = [_preprocess_to(t) for t in todo]
    return [Path(p) for p in written]


def source_image(cfg: ExperimentConfig, record) -> np.ndarray:
    """Preprocessed (or raw, if preprocessing is disabled) pixels of a record's source image."""
    path = record.image_path
    if not path.is_file():
        raise MissingImage(record.source, path)
    if not cfg.preprocess_enabled:
        return read_png(path)
    cached = _cache_path(cfg, path)
    if not cached.is_file():
        _preprocess_to((path, cached, cfg.preprocess))
    return read_png(cached)


def record_pixels(cfg: ExperimentConfig, record, size: int) -> np.ndarray:
    """Pixels fed to the model: source image, augmented if synthetic, at ``size`` x ``size``."""
    img = source_image(cfg, record)
    if img.shape[0] != img.shape[1]:
        img = resize(img, size)
    if record.synthetic:
        img = augment(img, cfg.augment(record.aug_seed))
    if img.shape[:2] != (size, size):
        img = resize(img, size)
    return img


def load_arrays(cfg: ExperimentConfig, records, size: int) -> ArraySplit:
    x = np.stack([record_pixels(cfg, r, size) for r in records]).astype(np.float32) / 255.0
    y = np.array([r.task_label for r in records], dtype=np.int64)
    return ArraySplit(x, y)


def warm_cache(cfg: ExperimentConfig, records, jobs: int = 1) -> list[Path]:
    """Preprocess the source images of ``records`` up front; returns the cache files created."""
    if not cfg.preprocess_enabled:
        return []
    return ensure_preprocessed(cfg, [r.image_path for r in records], jobs)


def load_splits(cfg: ExperimentConfig) -> dict[str, list]:
    out = {}
    for name in SPLIT_NAMES:
        path = cfg.splits_dir / f"{name}.csv"
        if not path.is_file():
            raise MissingFile(f"{path} missing; run 'prepare' first")
        out[name] = read_split_csv(path, cfg.image_dir)
    return out


# -------------------------------------------------------------- commands


def cmd_prepare(cfg: ExperimentConfig) -> dict:
    """Split the manifest, oversample the training split and write split CSVs."""
    records = load_manifest(cfg.manifest, cfg.image_dir)
    for r in records:
        if not r.image_path.is_file():
            raise MissingImage(r.id, r.image_path)
    task = cfg.task
    labelled = regroup_labels(records, task)
    s = cfg.split
    splits = split(labelled, float(s["test_frac"]), float(s["val_frac"]), cfg.seed, bool(s["stratified"]))
    balanced = oversample(splits.train, cfg.seed, task.class_count)

    arts = ArtifactLog(cfg.output_dir)
    for name, recs in (("train", balanced), ("val", splits.val), ("test", splits.test)):
        path = cfg.splits_dir / f"{name}.csv"
        write_split_csv(recs, path)
        arts.add(path)

    k = task.class_count
    columns = {
        "train_before": class_distribution(splits.train, k),
        "train_after": class_distribution(balanced, k),
        "val": class_distribution(splits.val, k),
        "test": class_distribution(splits.test, k),
    }
    dist_path = cfg.output_dir / "class_distribution.csv"
    with dist_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", *columns])
        for c in range(k):
            w.writerow([c, *(int(v[c]) for v in columns.values())])
    arts.add(dist_path)
    arts.save()
    return {name: v.tolist() for name, v in columns.items()}


def cmd_preprocess(cfg: ExperimentConfig, jobs: int = 1, materialize: bool = False) -> list[Path]:
    """Fill the preprocessed-image cache for every split record; optionally write augmented PNGs."""
    splits = load_splits(cfg)
    records = [r for recs in splits.values() for r in recs]
    written = ensure_preprocessed(cfg, [r.image_path for r in records if not r.synthetic], jobs)
    if materialize:
        size = cfg.preprocess.target_size
        out_dir = cfg.output_dir / "augmented"
        for r in splits["train"]:
            if r.synthetic:
                p = out_dir / f"{r.id}.png"
                write_png(record_pixels(cfg, r, size), p)
                written.append(p)
    arts = ArtifactLog(cfg.output_dir)
    arts.add(*written)
    arts.save()
    return written


def preprocess_directory(input_dir, output_dir, cfg: ExperimentConfig, jobs: int = 1) -> list[Path]:
    """Batch mode: preprocess every PNG in ``input_dir`` into ``output_dir`` under the same name."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not input_dir.is_dir():
        raise MissingFile(f"input directory not found: {input_dir}")
    todo = [(p, output_dir / p.name, cfg.preprocess) for p in sorted(input_dir.glob("*.png"))]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return [Path(p) for p in pool.map(_preprocess_to, todo, chunksize=4)]
    return [Path(_preprocess_to(t)) for t in todo]


def cmd_train(cfg: ExperimentConfig, resume_from=None, jobs: int = 1) -> dict:
    """Train on the prepared splits; write train_log.jsonl and the best checkpoint."""
    spec = cfg.model_spec()
    tcfg = cfg.train_config
    splits = load_splits(cfg)
    cached = warm_cache(cfg, splits["train"] + splits["val"], jobs)
    size = spec.backbone.input_size
    train_xy = load_arrays(cfg, splits["train"], size)
    val_xy = load_arrays(cfg, splits["val"], size)

    model = build_classifier(spec, seed=cfg.seed)
    if resume_from is not None:
        prev, _ = load_checkpoint(resume_from, extractor=model.extractor)
        if set(prev.params) != set(model.params):
            raise ConfigError(f"checkpoint {resume_from} does not match the configured model")
        model.params.load_from(prev.params)
    prepare_model(model, tcfg.phase, cfg.seed)
    log.info(
        "training %s/%s phase %s, %s lr=%g",
        spec.backbone.name.value,
        spec.task.name,
        tcfg.phase.phase.value,
        tcfg.optimizer.kind.value,
        tcfg.optimizer.learning_rate,
    )

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    log_path = cfg.output_dir / "train_log.jsonl"
    with log_path.open("w", encoding="utf-8") as fh:

        def on_epoch(rec):
            fh.write(epoch_log_line(rec) + "\n")
            fh.flush()
            log.info("epoch %d loss %.4f acc %.4f val %.4f", rec.epoch, rec.train_loss, rec.train_acc, rec.val_acc)

        result = train(model, train_xy, val_xy, tcfg, on_epoch)

    meta = {
        "seed": cfg.seed,
        "phase": tcfg.phase.phase.value,
        "optimizer": tcfg.optimizer.kind.value,
        "learning_rate": tcfg.optimizer.learning_rate,
        "best_epoch": result.best_epoch,
        "best_val_accuracy": result.best_val_accuracy,
        "stopped_early": result.stopped_early,
        "epochs_run": len(result.history),
    }
    npz, sidecar = save_checkpoint(cfg.output_dir / "checkpoint", model, **meta)
    arts = ArtifactLog(cfg.output_dir)
    arts.add(*cached, log_path, npz, sidecar)
    arts.save()
    return {**meta, "checkpoint": str(npz)}


def read_predictions(path, n_classes: int) -> dict[str, np.ndarray]:
    """Scores from ``id_code,score`` (binary) or ``id_code,p0,...,p{k-1}`` CSV files."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"predictions file not found: {path}")
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        width = 1 if n_classes == 2 else n_classes
        if header is None or len(header) != width + 1:
            raise DataError(f"{path}: expected id_code plus {width} score column(s)")
        for line, row in enumerate(reader, start=2):
            try:
                vals = np.array([float(v) for v in row[1:]])
            except ValueError:
                raise DataError(f"{path}: bad score at line {line}") from None
            out[row[0]] = vals[0] if width == 1 else vals
    return out


def _scores_from_predictions(pred: dict, records) -> np.ndarray:
    missing = [r.id for r in records if r.id not in pred]
    if missing:
        raise DataError(f"predictions missing for {len(missing)} test ids, e.g. {missing[0]!r}")
    return np.array([pred[r.id] for r in records])


def _model_scores(cfg: ExperimentConfig, checkpoint, records, task: TaskKind) -> tuple[np.ndarray, str]:
    """Scores and a column label for ``records`` from a checkpoint or predictions CSV."""
    checkpoint = Path(checkpoint)
    if checkpoint.suffix == ".csv":
        return _scores_from_predictions(read_predictions(checkpoint, task.class_count), records), checkpoint.stem
    meta = read_checkpoint_meta(checkpoint)
    if meta["model_spec"]["task"] != task.name:
        raise ConfigError(f"checkpoint {checkpoint} was trained for {meta['model_spec']['task']}, not {task.name}")
    model, _ = load_checkpoint(checkpoint)
    x = load_arrays(cfg, records, model.spec.backbone.input_size).x
    label = f"{model.spec.backbone.name.value}+{meta.get('optimizer', '?')}"
    return model.predict_scores(x), label


def cmd_evaluate(cfg: ExperimentConfig, checkpoint, jobs: int = 1) -> dict:
    """Evaluate a checkpoint (or predictions CSV) on the test split."""
    test = load_splits(cfg)["test"]
    cached = [] if Path(checkpoint).suffix == ".csv" else warm_cache(cfg, test, jobs)
    scores, label = _model_scores(cfg, checkpoint, test, cfg.task)
    report = evaluate(scores, [r.task_label for r in test], cfg.task)
    paths = write_report(report, cfg.output_dir / "eval", label)
    arts = ArtifactLog(cfg.output_dir)
    arts.add(*cached, *paths)
    arts.save()
    return report.table()


def cmd_cascade(cfg: ExperimentConfig, cascade_file, jobs: int = 1) -> dict:
    """Evaluate a tree of binary models as a five-grade classifier on the test split."""
    tree = cascade_mod.load_cascade(cascade_file)
    test = load_splits(cfg)["test"]
    for node in tree.nodes():
        ref = node.model_ref
        if ref is None:
            raise MissingNodeModel(node.id, "<no checkpoint given>")
        path = Path(ref)
        exists = path.is_file() if path.suffix == ".csv" else path.with_suffix(".json").is_file()
        if not exists:
            raise MissingNodeModel(node.id, path)
    needs_images = any(Path(n.model_ref).suffix != ".csv" for n in tree.nodes())
    cached = warm_cache(cfg, test, jobs) if needs_images else []
    node_scores = {
        node.id: _model_scores(cfg, node.model_ref, test, TaskKind.BINARY)[0] for node in tree.nodes()
    }
    probs = cascade_mod.path_probabilities(tree, node_scores)
    report = evaluate(probs, [r.grade for r in test], TaskKind.FIVE)
    paths = write_report(report, cfg.output_dir / "cascade", "cascade")
    arts = ArtifactLog(cfg.output_dir)
    arts.add(*cached, *paths)
    arts.save()
    return report.table()


def cmd_report(cfg: ExperimentConfig, reports, labels=None, reference=None) -> tuple[Path, list[str]]:
    """Combine report.json files into one metrics table; optionally diff against a reference row."""
    labels = list(labels or [])
    columns = {}
    for i, path in enumerate(reports):
        path = Path(path)
        if not path.is_file():
            raise MissingFile(f"report not found: {path}")
        table = json.loads(path.read_text(encoding="utf-8"))["table"]
        label = labels[i] if i < len(labels) else path.parent.parent.name or f"run{i}"
        columns[label] = table
    lines = []
    if reference is not None:
        key = tuple(part.upper().replace("-", "_") for part in reference.split("/"))
        if key not in REFERENCE_RESULTS:
            raise ConfigError(f"no reference row for {reference!r}; known: {['/'.join(k) for k in REFERENCE_RESULTS]}")
        ref = dict(zip(TABLE_METRICS, REFERENCE_RESULTS[key]))
        columns[f"reference {'/'.join(key)}"] = ref
        first = next(iter(columns.values()))
        lines.append(f"{'Metric':<20}{'run':>10}{'reference':>12}{'delta':>10}")
        for name in TABLE_METRICS:
            lines.append(f"{name:<20}{first[name]:>10.4f}{ref[name]:>12.4f}{first[name] - ref[name]:>+10.4f}")
    out = cfg.output_dir / "report" / "metrics_table.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table_csv(columns, out)
    arts = ArtifactLog(cfg.output_dir)
    arts.add(out)
    arts.save()
    return out, lines
