import csv
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from tqdm import tqdm

from imagecore import RasterImage, save_image

logger = logging.getLogger(__name__)

SYNTH_CLASSES = ('hstripes', 'vstripes', 'checker', 'noise')
STRIPE_PERIOD = 8
MAX_NOISE = 10


class ManifestError(ValueError):
    """Raised for malformed or unusable dataset manifests"""


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str
    label: str


class DatasetManifest(BaseModel):
    """Labelled image list; at least two classes, no repeated paths"""
    model_config = ConfigDict(frozen=True)

    entries: Tuple[ManifestEntry, ...]

    @model_validator(mode='after')
    def check_entries(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            duplicates = sorted(p for p, n in Counter(paths).items() if n > 1)
            raise ManifestError(f"Duplicate paths in manifest: {duplicates[:5]}")
        if len(self.classes) < 2:
            raise ManifestError(f"Manifest needs at least 2 classes, found {len(self.classes)}")
        return self

    @property
    def classes(self) -> List[str]:
        return sorted({e.label for e in self.entries})

    @property
    def paths(self) -> List[str]:
        return [e.path for e in self.entries]

    @property
    def labels(self) -> List[str]:
        return [e.label for e in self.entries]

    def __len__(self):
        return len(self.entries)


class EvalReport(BaseModel):
    micro_accuracy: float
    classes: List[str]
    confusion: List[List[int]]
    n_train: int
    n_test: int
    seed: int
    k: int


class RepeatedEvalSummary(BaseModel):
    mean_accuracy: float
    std_accuracy: float
    runs: List[EvalReport]


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Read a `path,label` CSV; relative image paths resolve against the manifest's directory"""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {'path', 'label'} <= set(reader.fieldnames):
                raise ManifestError(f"{path}: header must contain 'path' and 'label'")
            entries = []
            for row in reader:
                image_path = Path(row['path'])
                if not image_path.is_absolute():
                    image_path = path.parent / image_path
                entries.append(ManifestEntry(path=str(image_path), label=row['label']))
    except OSError as e:
        logger.error(f"Error reading manifest {path}: {str(e)}")
        raise
    return DatasetManifest(entries=tuple(entries))


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]):
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['path', 'label'])
        for entry in manifest.entries:
            entry_path = Path(entry.path)
            try:
                entry_path = entry_path.relative_to(path.parent)
            except ValueError:
                pass
            writer.writerow([entry_path.as_posix(), entry.label])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(manifest: DatasetManifest, test_fraction: float, seed: int) -> Tuple[DatasetManifest, DatasetManifest]:
    """Stratified seeded split into (train, test); each class sends round(count * test_fraction) entries to test.

    A side may end up without some class (or empty) for extreme fractions.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")

    by_class: Dict[str, List[ManifestEntry]] = {}
    for entry in manifest.entries:
        by_class.setdefault(entry.label, []).append(entry)

    rng = np.random.default_rng(seed)
    test_ids = set()
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            raise ManifestError(f"Class '{label}' has {len(members)} sample(s); at least 2 are needed to split")
        n_test = _round_half_up(len(members) * test_fraction)
        order = rng.permutation(len(members))
        test_ids.update(members[i].path for i in order[:n_test])

    train = tuple(e for e in manifest.entries if e.path not in test_ids)
    test = tuple(e for e in manifest.entries if e.path in test_ids)
    # either side may hold fewer than 2 classes
    return (DatasetManifest.model_construct(entries=train),
            DatasetManifest.model_construct(entries=test))


def _vote(labels: Sequence[str], distances: np.ndarray) -> str:
    """Majority label; ties go to the smaller mean distance, then the smaller label"""
    tally: Dict[str, List[float]] = {}
    for label, dist in zip(labels, distances):
        tally.setdefault(label, []).append(float(dist))
    return min(tally, key=lambda lab: (-len(tally[lab]), float(np.mean(tally[lab])), lab))


def knn_classify(train_X: np.ndarray, train_y: Sequence[str], query: np.ndarray, k: int = 5) -> str:
    """Label of a query by majority vote of its k Euclidean-nearest training vectors"""
    train_X = np.asarray(train_X, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if k < 1 or k > len(train_X):
        raise ValueError(f"k must lie in [1, {len(train_X)}], got {k}")
    if train_X.ndim != 2 or query.shape != (train_X.shape[1],):
        raise ValueError(f"dimension mismatch: training vectors {train_X.shape}, query {query.shape}")

    distances = np.sqrt(np.sum((train_X - query) ** 2, axis=1))
    nearest = np.argsort(distances, kind='stable')[:k]
    return _vote([train_y[i] for i in nearest], distances[nearest])


def knn_predict(train_X: np.ndarray, train_y: Sequence[str], queries: np.ndarray, k: int = 5) -> List[str]:
    return [knn_classify(train_X, train_y, q, k) for q in np.asarray(queries, dtype=np.float64)]


def micro_accuracy(predictions: Sequence[str], truth: Sequence[str]) -> float:
    """Pooled fraction of correct predictions"""
    if len(predictions) != len(truth):
        raise ValueError(f"length mismatch: {len(predictions)} predictions, {len(truth)} labels")
    if not truth:
        raise ValueError("at least one prediction is required")
    return sum(p == t for p, t in zip(predictions, truth)) / len(truth)


def confusion_matrix(predictions: Sequence[str], truth: Sequence[str], classes: Sequence[str]) -> List[List[int]]:
    """Rows are true classes, columns predicted classes"""
    index = {c: i for i, c in enumerate(classes)}
    matrix = [[0] * len(classes) for _ in classes]
    for p, t in zip(predictions, truth):
        matrix[index[t]][index[p]] += 1
    return matrix


def evaluate(features: Dict[str, np.ndarray], manifest: DatasetManifest, k: int = 5,
             test_fraction: float = 0.3, seed: int = 0,
             test_manifest: Optional[DatasetManifest] = None) -> EvalReport:
    """Split (unless a test manifest is given), classify with kNN and score.

    features maps image path to vector; entries without a vector are skipped.
    """
    if test_manifest is None:
        train, test = split(manifest, test_fraction, seed)
    else:
        train, test = manifest, test_manifest

    train_entries = [e for e in train.entries if e.path in features]
    test_entries = [e for e in test.entries if e.path in features]
    if not train_entries or not test_entries:
        raise ValueError("no extracted features on one side of the split")
    if k > len(train_entries):
        raise ValueError(f"k={k} exceeds the training set size {len(train_entries)}")

    train_X = np.stack([features[e.path] for e in train_entries])
    train_y = [e.label for e in train_entries]
    truth = [e.label for e in test_entries]
    predictions = knn_predict(train_X, train_y, np.stack([features[e.path] for e in test_entries]), k)

    classes = sorted(set(train_y) | set(truth) | set(predictions))
    report = EvalReport(
        micro_accuracy=micro_accuracy(predictions, truth),
        classes=classes,
        confusion=confusion_matrix(predictions, truth, classes),
        n_train=len(train_entries),
        n_test=len(test_entries),
        seed=seed,
        k=k,
    )
    logger.info(f"kNN (k={k}, seed={seed}): micro accuracy {report.micro_accuracy:.4f} "
                f"on {report.n_test} test images")
    return report


def evaluate_repeated(features: Dict[str, np.ndarray], manifest: DatasetManifest, k: int = 5,
                      test_fraction: float = 0.3, seed: int = 0, repeats: int = 1) -> RepeatedEvalSummary:
    """Repeat the random split with seeds seed, seed+1, ..."""
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    runs = [evaluate(features, manifest, k, test_fraction, seed + i) for i in range(repeats)]
    accuracies = np.array([r.micro_accuracy for r in runs])
    return RepeatedEvalSummary(mean_accuracy=float(accuracies.mean()),
                               std_accuracy=float(accuracies.std()),
                               runs=runs)


def _synth_image(kind: str, size: Tuple[int, int], rng: np.random.Generator, noise: int, bands: int) -> np.ndarray:
    """(h, w, bands) texture; bands share the pattern and get independent noise"""
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w]
    phase = int(rng.integers(0, STRIPE_PERIOD))
    half = STRIPE_PERIOD // 2
    if kind == 'hstripes':
        plane = np.where(((ys + phase) % STRIPE_PERIOD) < half, 200, 50)
    elif kind == 'vstripes':
        plane = np.where(((xs + phase) % STRIPE_PERIOD) < half, 200, 50)
    elif kind == 'checker':
        plane = np.where((((xs + phase) // half) + ((ys + phase) // half)) % 2 == 0, 200, 50)
    elif kind == 'noise':
        plane = rng.integers(0, 256, size=(h, w))
    else:
        raise ValueError(f"Unknown texture class: {kind}")
    image = np.repeat(plane[:, :, np.newaxis], bands, axis=2)
    if noise:
        image = image + rng.integers(-noise, noise + 1, size=(h, w, bands))
    return np.clip(image, 0, 255).astype(np.int64)


def synth_textures(classes: Sequence[str] = SYNTH_CLASSES, n_per_class: int = 30,
                   size: Tuple[int, int] = (128, 128), seed: int = 0,
                   out_dir: Union[str, Path] = 'synth', noise: int = MAX_NOISE,
                   bands: int = 1) -> DatasetManifest:
    """Write seeded synthetic texture PNGs plus manifest.csv and return the manifest"""
    if n_per_class < 2:
        raise ValueError(f"n_per_class must be at least 2, got {n_per_class}")
    if not 0 <= noise <= MAX_NOISE:
        raise ValueError(f"noise amplitude must lie in [0, {MAX_NOISE}], got {noise}")
    if bands not in (1, 3):
        raise ValueError(f"bands must be 1 or 3, got {bands}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for kind in tqdm(classes, desc="Generating textures", disable=None):
        for n in range(n_per_class):
            path = out_dir / f"{kind}_{n:03d}.png"
            save_image(RasterImage.from_array(_synth_image(kind, size, rng, noise, bands)), path)
            entries.append(ManifestEntry(path=str(path), label=kind))

    manifest = DatasetManifest(entries=tuple(entries))
    write_manifest(manifest, out_dir / 'manifest.csv')
    logger.info(f"Generated {len(entries)} images in {out_dir}")
    return manifest
