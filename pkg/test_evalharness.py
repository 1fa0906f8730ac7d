import numpy as np
import pytest

from descriptor import CNLBPExtractor, DescriptorConfig
from evalharness import (DatasetManifest, ManifestEntry, ManifestError, confusion_matrix, evaluate,
                         evaluate_repeated, knn_classify, knn_predict, load_manifest, micro_accuracy, split,
                         synth_textures, write_manifest)
from imagecore import load_image


def manifest_of(counts):
    entries = [ManifestEntry(path=f"{label}_{i}.png", label=label)
               for label, n in counts.items() for i in range(n)]
    return DatasetManifest(entries=tuple(entries))


def test_split_sizes_are_stratified():
    train, test = split(manifest_of({'a': 100, 'b': 100}), 0.3, seed=0)
    assert len(test) == 60 and len(train) == 140
    assert test.labels.count('a') == 30 and test.labels.count('b') == 30
    assert not set(train.paths) & set(test.paths)


def test_split_rounds_half_up():
    train, test = split(manifest_of({'a': 10, 'b': 3, 'c': 2}), 0.3, seed=1)
    assert test.labels.count('a') == 3
    assert test.labels.count('b') == 1
    assert test.labels.count('c') == 1 and train.labels.count('c') == 1
    train, test = split(manifest_of({'a': 5, 'b': 5}), 0.9, seed=1)
    assert train.labels.count('a') == 1


def test_split_small_fraction_can_empty_the_test_side():
    train, test = split(manifest_of({'a': 3, 'b': 3}), 0.1, seed=0)
    assert len(test) == 0 and len(train) == 6


def test_split_large_fraction_can_empty_the_train_side():
    train, test = split(manifest_of({'a': 10, 'b': 10}), 0.95, seed=0)
    assert len(train) == 0
    assert test.labels.count('a') == 10 and test.labels.count('b') == 10


def test_evaluate_rejects_an_empty_side():
    manifest = manifest_of({'a': 3, 'b': 3})
    features = {path: np.zeros(2) for path in manifest.paths}
    with pytest.raises(ValueError):
        evaluate(features, manifest, k=1, test_fraction=0.1)


def test_split_is_deterministic():
    manifest = manifest_of({'a': 20, 'b': 20})
    assert split(manifest, 0.3, 7)[1].paths == split(manifest, 0.3, 7)[1].paths
    assert split(manifest, 0.3, 7)[1].paths != split(manifest, 0.3, 8)[1].paths


def test_split_errors():
    with pytest.raises(ManifestError):
        split(manifest_of({'a': 5, 'b': 1}), 0.3, 0)
    with pytest.raises(ValueError):
        split(manifest_of({'a': 5, 'b': 5}), 1.0, 0)


def test_manifest_validation():
    with pytest.raises(ValueError):
        manifest_of({'a': 3})
    entry = ManifestEntry(path='x.png', label='a')
    with pytest.raises(ValueError):
        DatasetManifest(entries=(entry, entry, ManifestEntry(path='y.png', label='b')))


def test_manifest_round_trip(tmp_path):
    manifest = DatasetManifest(entries=(ManifestEntry(path=str(tmp_path / 'img' / 'a.png'), label='x'),
                                        ManifestEntry(path=str(tmp_path / 'b.png'), label='y')))
    write_manifest(manifest, tmp_path / 'manifest.csv')
    assert (tmp_path / 'manifest.csv').read_text().splitlines() == ['path,label', 'img/a.png,x', 'b.png,y']
    assert load_manifest(tmp_path / 'manifest.csv').entries == manifest.entries


def test_manifest_requires_header(tmp_path):
    (tmp_path / 'm.csv').write_text('file,class\na.png,x\n')
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / 'm.csv')


def test_knn_exact_match():
    train_X = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    assert knn_classify(train_X, ['a', 'b', 'c'], np.array([5.0, 5.0]), k=1) == 'c'


def test_knn_tie_breaks():
    train_X = np.array([[1.0], [-1.5], [3.0], [-3.0]])
    # a and b both get 2 votes; a has the smaller mean distance
    assert knn_classify(train_X, ['a', 'b', 'a', 'b'], np.array([0.0]), k=4) == 'a'
    # equal mean distance: smaller label wins
    train_X = np.array([[1.0], [-1.0]])
    assert knn_classify(train_X, ['z', 'y'], np.array([0.0]), k=2) == 'y'


def test_knn_argument_checks():
    train_X = np.zeros((3, 2))
    with pytest.raises(ValueError):
        knn_classify(train_X, ['a', 'b', 'c'], np.zeros(3), k=1)
    with pytest.raises(ValueError):
        knn_classify(train_X, ['a', 'b', 'c'], np.zeros(2), k=4)


def brute_force_knn(train_X, train_y, query, k):
    ranked = sorted(range(len(train_X)), key=lambda i: (float(np.sum((train_X[i] - query) ** 2)), i))[:k]
    votes = {}
    for i in ranked:
        votes[train_y[i]] = votes.get(train_y[i], 0) + 1
    best = max(votes.values())
    return [label for label, n in votes.items() if n == best]


def test_knn_matches_brute_force_on_clusters():
    rng = np.random.default_rng(0)
    centers = rng.normal(0, 5, size=(4, 6))
    labels = ['a', 'b', 'c', 'd']
    train_X = np.concatenate([c + rng.normal(0, 1, size=(25, 6)) for c in centers])
    train_y = [lab for lab in labels for _ in range(25)]
    queries = np.concatenate([c + rng.normal(0, 1, size=(10, 6)) for c in centers])
    predictions = knn_predict(train_X, train_y, queries, k=5)
    for query, predicted in zip(queries, predictions):
        assert predicted in brute_force_knn(train_X, train_y, query, 5)
    truth = [lab for lab in labels for _ in range(10)]
    assert micro_accuracy(predictions, truth) >= 0.9


def test_micro_accuracy_and_confusion():
    predictions = ['a', 'a', 'b', 'c']
    truth = ['a', 'b', 'b', 'c']
    assert micro_accuracy(predictions, truth) == 0.75
    matrix = confusion_matrix(predictions, truth, ['a', 'b', 'c'])
    assert matrix == [[1, 0, 0], [1, 1, 0], [0, 0, 1]]
    assert sum(matrix[i][i] for i in range(3)) == 3
    with pytest.raises(ValueError):
        micro_accuracy(['a'], ['a', 'b'])


def separable_features():
    manifest = manifest_of({'a': 10, 'b': 10})
    features = {e.path: np.array([0.0 if e.label == 'a' else 10.0, float(i)])
                for i, e in enumerate(manifest.entries)}
    return manifest, features


def test_evaluate_report():
    manifest, features = separable_features()
    report = evaluate(features, manifest, k=3, test_fraction=0.3, seed=4)
    assert report.micro_accuracy == 1.0
    assert (report.n_train, report.n_test) == (14, 6)
    assert report.classes == ['a', 'b']
    assert sum(map(sum, report.confusion)) == 6
    with pytest.raises(ValueError):
        evaluate(features, manifest, k=15)


def test_evaluate_with_fixed_test_manifest():
    manifest, features = separable_features()
    train = DatasetManifest(entries=manifest.entries[2:18])
    test = DatasetManifest(entries=manifest.entries[:2] + manifest.entries[18:])
    report = evaluate(features, train, k=1, test_manifest=test)
    assert report.n_test == 4 and report.micro_accuracy == 1.0


def test_evaluate_repeated():
    manifest, features = separable_features()
    summary = evaluate_repeated(features, manifest, k=3, seed=10, repeats=3)
    assert [run.seed for run in summary.runs] == [10, 11, 12]
    assert summary.mean_accuracy == 1.0 and summary.std_accuracy == 0.0
    with pytest.raises(ValueError):
        evaluate_repeated(features, manifest, repeats=0)


def test_synth_textures(tmp_path):
    manifest = synth_textures(n_per_class=3, size=(32, 24), seed=1, out_dir=tmp_path / 'a')
    assert len(manifest) == 12
    assert manifest.classes == ['checker', 'hstripes', 'noise', 'vstripes']
    img = load_image(manifest.paths[0])
    assert (img.width, img.height, img.bands) == (32, 24, 1)
    assert load_manifest(tmp_path / 'a' / 'manifest.csv').labels == manifest.labels

    again = synth_textures(n_per_class=3, size=(32, 24), seed=1, out_dir=tmp_path / 'b')
    for p, q in zip(manifest.paths, again.paths):
        assert np.array_equal(load_image(p).pixels, load_image(q).pixels)


def test_synth_without_noise_is_periodic(tmp_path):
    manifest = synth_textures(classes=('hstripes', 'vstripes'), n_per_class=2, size=(32, 32),
                              noise=0, bands=3, out_dir=tmp_path)
    for path, label in zip(manifest.paths, manifest.labels):
        pixels = load_image(path).pixels
        assert set(np.unique(pixels).tolist()) == {50, 200}
        assert np.array_equal(pixels[:, :, 0], pixels[:, :, 2])
        axis = 0 if label == 'hstripes' else 1
        assert np.array_equal(np.roll(pixels, 8, axis=axis), pixels)


def test_synth_argument_checks(tmp_path):
    with pytest.raises(ValueError):
        synth_textures(n_per_class=1, out_dir=tmp_path)
    with pytest.raises(ValueError):
        synth_textures(noise=11, out_dir=tmp_path)
    with pytest.raises(ValueError):
        synth_textures(classes=('waves', 'noise'), n_per_class=2, out_dir=tmp_path)


@pytest.mark.slow
def test_synthetic_benchmark_accuracy(tmp_path):
    manifest = synth_textures(n_per_class=30, size=(128, 128), seed=0, out_dir=tmp_path)
    extractor = CNLBPExtractor(DescriptorConfig())
    features = {path: extractor.extract_file(path).values for path in manifest.paths}
    report = evaluate(features, manifest, k=5, test_fraction=0.3, seed=0)
    assert report.micro_accuracy >= 0.95
