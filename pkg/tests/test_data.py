import numpy as np
import pytest

from dcasgd import data
from dcasgd.model import ModelSpec, predict_proba


def planted(spec, seed=0):
    return np.random.default_rng(seed).normal(size=spec.n)


def test_synthetic_is_deterministic_and_seed_sensitive():
    spec = ModelSpec.softmax(4, 3)
    w = planted(spec)
    a = data.generate_synthetic(4, 3, 100, w, 1.0, seed=7)
    b = data.generate_synthetic(4, 3, 100, w, 1.0, seed=7)
    c = data.generate_synthetic(4, 3, 100, w, 1.0, seed=8)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()
    assert np.array_equal(a.w_star, w)


def test_synthetic_label_frequencies_match_model():
    spec = ModelSpec.softmax(1, 2)
    w = np.array([0.0, 0.0])
    ds = data.generate_synthetic(1, 2, 20000, w, 1.0, seed=1)
    n1 = int(ds.y.sum())
    assert abs(n1 - 10000) < 5 * np.sqrt(20000 * 0.25)


def test_expected_label_frequency_for_planted_model():
    spec = ModelSpec.softmax(3, 4)
    w = planted(spec, 2)
    ds = data.generate_synthetic(3, 4, 40000, w, 1.0, seed=3)
    p = predict_proba(ds.X, w, spec).sum(axis=0)
    counts = np.bincount(ds.y, minlength=4)
    assert np.all(np.abs(counts - p) < 5 * np.sqrt(p))


def test_dataset_is_immutable_and_validated():
    ds = data.Dataset(np.zeros((3, 2)), [0, 1, 2], 3)
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((2, 2)), [0, 3], 3)
    with pytest.raises(ValueError):
        data.Dataset(np.full((1, 1), np.nan), [0], 2)
    with pytest.raises(ValueError):
        data.generate_synthetic(2, 2, 0, np.zeros(4), 1.0, 0)


def test_csv_round_trip(tmp_path):
    spec = ModelSpec.softmax(3, 4)
    ds = data.generate_synthetic(3, 4, 50, planted(spec), 1.0, seed=0)
    path = tmp_path / "d.csv"
    data.save_csv(ds, path)
    text = path.read_text().splitlines()
    assert text[0] == "x0,x1,x2,label"
    assert set(int(r.split(",")[-1]) for r in text[1:]) <= {1, 2, 3, 4}
    back = data.load_csv(path, 4)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert len(back.checksum) == 64
    path2 = tmp_path / "noheader.csv"
    data.save_csv(ds, path2, header=False)
    assert data.load_csv(path2, 4).fingerprint() == back.fingerprint()


@pytest.mark.parametrize("body, message", [
    ("1.0,2\n1.0,x\n", "row 2"),
    ("1.0,2\n1.0,2,3\n", "row 2: expected 2 columns"),
    ("1.0,0\n", "row 1: label 0 outside"),
    ("1.0,5\n", "label 5 outside"),
    ("", "no samples"),
    ("a,label\n", "no samples"),
])
def test_csv_errors_name_the_row(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError, match=message):
        data.load_csv(path, 4)


def test_repartition_covers_dataset_once():
    plan = data.repartition(103, 4, epoch=2, seed=9)
    allidx = np.concatenate(plan.assignment)
    assert sorted(allidx.tolist()) == list(range(103))
    sizes = [len(a) for a in plan.assignment]
    assert max(sizes) - min(sizes) <= 1 and sizes[0] >= sizes[-1]
    assert plan.epoch == 2


def test_repartition_is_seeded_and_changes_per_epoch():
    a = data.repartition(50, 3, 0, 1)
    b = data.repartition(50, 3, 0, 1)
    c = data.repartition(50, 3, 1, 1)
    assert all(np.array_equal(x, y) for x, y in zip(a.assignment, b.assignment))
    assert not all(np.array_equal(x, y) for x, y in zip(a.assignment, c.assignment))


def test_repartition_errors():
    with pytest.raises(ValueError, match="more workers"):
        data.repartition(3, 4, 0, 0)
    with pytest.raises(ValueError):
        data.repartition(3, 0, 0, 0)


def test_sample_and_subset():
    ds = data.Dataset(np.arange(6.0).reshape(3, 2), [0, 1, 0], 2)
    s = ds.sample(1)
    assert s.y == 1 and np.array_equal(s.x, [2.0, 3.0])
    sub = ds.subset([2, 0])
    assert sub.S == 2 and list(sub.y) == [0, 0]
