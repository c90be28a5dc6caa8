import json

import numpy as np
import pytest

from cardmil.data import (
    BagDataset,
    DatasetFormatError,
    Standardization,
    SynthConfig,
    apply_standardization,
    fit_standardization,
    generate,
    load,
    save,
    standardize,
)
from cardmil.model import NEGATIVE, POSITIVE, Bag


def _write(tmp_path, text, name="data.jsonl"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _record(bag_id="a", label=1, instances=((1.0, 2.0),)):
    return json.dumps({"id": bag_id, "label": label, "instances": [list(r) for r in instances]})


class TestLoadErrors:
    def test_invalid_json_cites_line(self, tmp_path):
        path = _write(tmp_path, "{not json\n", "broken.jsonl")
        with pytest.raises(DatasetFormatError) as err:
            load(path)
        assert str(err.value).startswith(f"{path}:1:")
        assert "invalid JSON" in str(err.value)

    def test_error_on_later_line(self, tmp_path):
        path = _write(tmp_path, _record("a") + "\n" + _record("b") + "\n[1, 2]\n")
        with pytest.raises(DatasetFormatError, match=":3:"):
            load(path)

    def test_non_object_line(self, tmp_path):
        path = _write(tmp_path, "[1, 2, 3]\n")
        with pytest.raises(DatasetFormatError, match="JSON object"):
            load(path)

    def test_missing_id(self, tmp_path):
        path = _write(tmp_path, json.dumps({"label": 1, "instances": [[1.0]]}) + "\n")
        with pytest.raises(DatasetFormatError, match="'id'"):
            load(path)

    def test_non_string_id(self, tmp_path):
        path = _write(tmp_path, json.dumps({"id": 7, "label": 1, "instances": [[1.0]]}) + "\n")
        with pytest.raises(DatasetFormatError, match="'id'"):
            load(path)

    def test_bad_label(self, tmp_path):
        path = _write(tmp_path, _record(label=2) + "\n")
        with pytest.raises(DatasetFormatError, match="label must be"):
            load(path)

    def test_string_label(self, tmp_path):
        path = _write(tmp_path, _record(label="pos") + "\n")
        with pytest.raises(DatasetFormatError, match="label must be"):
            load(path)

    def test_empty_instances(self, tmp_path):
        path = _write(tmp_path, json.dumps({"id": "a", "label": 1, "instances": []}) + "\n")
        with pytest.raises(DatasetFormatError, match="non-empty"):
            load(path)

    def test_ragged_instances(self, tmp_path):
        rec = json.dumps({"id": "a", "label": 1, "instances": [[1.0, 2.0], [3.0]]})
        with pytest.raises(DatasetFormatError, match="ragged"):
            load(_write(tmp_path, rec + "\n"))

    def test_nested_too_deep(self, tmp_path):
        rec = json.dumps({"id": "a", "label": 1, "instances": [[[1.0]]]})
        with pytest.raises(DatasetFormatError, match="flat list"):
            load(_write(tmp_path, rec + "\n"))

    def test_unknown_field(self, tmp_path):
        rec = json.dumps({"id": "a", "label": 1, "instances": [[1.0]], "extra": True})
        with pytest.raises(DatasetFormatError, match="unknown fields.*extra"):
            load(_write(tmp_path, rec + "\n"))

    def test_duplicate_id_cites_first_line(self, tmp_path):
        path = _write(tmp_path, _record("a") + "\n" + _record("a") + "\n")
        with pytest.raises(DatasetFormatError, match="first seen on line 1"):
            load(path)

    def test_dimension_mismatch(self, tmp_path):
        path = _write(
            tmp_path,
            _record("a", instances=((1.0, 2.0),)) + "\n" + _record("b", instances=((1.0,),)) + "\n",
        )
        with pytest.raises(DatasetFormatError, match="dimension 1, expected 2"):
            load(path)

    def test_empty_file(self, tmp_path):
        path = _write(tmp_path, "\n\n")
        with pytest.raises(DatasetFormatError, match="no bags"):
            load(path)

    def test_nonfinite_value(self, tmp_path):
        # json.dumps would emit Infinity; write it literally
        text = '{"id": "a", "label": 1, "instances": [[Infinity]]}\n'
        with pytest.raises(DatasetFormatError):
            load(_write(tmp_path, text))

    def test_error_string_format(self):
        err = DatasetFormatError("boom", "file.jsonl", 3)
        assert str(err) == "file.jsonl:3: boom"
        assert str(DatasetFormatError("boom", "file.jsonl")) == "file.jsonl: boom"


class TestRoundTrip:
    def test_bit_exact(self, tmp_path, rng):
        bags = []
        for i in range(5):
            m = int(rng.integers(1, 6))
            inst = rng.standard_normal((m, 3)) * 10.0 ** rng.integers(-8, 8)
            label = [POSITIVE, NEGATIVE, None][i % 3]
            bags.append(Bag(f"bag{i}", inst, label))
        ds = BagDataset(tuple(bags))
        path = tmp_path / "ds.jsonl"
        save(ds, path)
        back = load(path)
        assert back.ids == ds.ids
        assert back.labels == ds.labels
        for a, b in zip(back.bags, ds.bags):
            assert np.array_equal(a.instances, b.instances)

    def test_special_values(self, tmp_path):
        inst = np.array([[0.1, 1.0 / 3.0, 1e-300, -0.0, 12345678901234.5]])
        ds = BagDataset((Bag("x", inst, POSITIVE),))
        path = tmp_path / "s.jsonl"
        save(ds, path)
        got = load(path).bags[0].instances
        assert np.array_equal(got, inst)
        # negative zero survives as well
        assert np.signbit(got[0, 3])

    def test_absent_label_is_none(self, tmp_path):
        rec = json.dumps({"id": "a", "instances": [[1.0]]})
        ds = load(_write(tmp_path, rec + "\n"))
        assert ds.labels == [None]

    def test_null_label_is_none(self, tmp_path):
        ds = load(_write(tmp_path, _record(label=None) + "\n"))
        assert ds.labels == [None]

    def test_blank_lines_skipped(self, tmp_path):
        path = _write(tmp_path, "\n" + _record("a") + "\n\n" + _record("b") + "\n\n")
        assert load(path).ids == ("a", "b")

    def test_save_then_load_keeps_order(self, tmp_path):
        bags = tuple(Bag(f"z{9 - i}", np.ones((1, 2)), POSITIVE) for i in range(4))
        path = tmp_path / "o.jsonl"
        save(BagDataset(bags), path)
        assert load(path).ids == ("z9", "z8", "z7", "z6")


class TestBagDataset:
    def test_accessors(self, rng):
        bags = (
            Bag("a", rng.standard_normal((2, 3)), POSITIVE),
            Bag("b", rng.standard_normal((4, 3))),
        )
        ds = BagDataset(bags)
        assert len(ds) == 2
        assert ds.dimension == 3
        assert ds.ids == ("a", "b")
        assert ds.labels == [POSITIVE, None]
        assert [b.id for b in ds] == ["a", "b"]

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="at least one"):
            BagDataset(())

    def test_rejects_duplicates(self, rng):
        bags = (Bag("a", np.ones((1, 2))), Bag("a", np.zeros((1, 2))))
        with pytest.raises(ValueError, match="duplicate"):
            BagDataset(bags)

    def test_rejects_mixed_dimension(self):
        bags = (Bag("a", np.ones((1, 2))), Bag("b", np.ones((1, 3))))
        with pytest.raises(ValueError, match="dimension"):
            BagDataset(bags)


class TestStandardization:
    def test_constant_feature_maps_to_zero(self):
        inst = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
        ds = BagDataset((Bag("a", inst, POSITIVE),))
        (out,) = standardize(ds)
        np.testing.assert_array_equal(out.bags[0].instances[:, 0], 0.0)

    def test_train_statistics_only(self, rng):
        train = BagDataset((Bag("tr", rng.standard_normal((50, 2)) + 3.0, POSITIVE),))
        test = BagDataset((Bag("te", rng.standard_normal((5, 2)) - 1.0, NEGATIVE),))
        std = fit_standardization(train)
        out_train, out_test = standardize(train, test)
        want = std.transform(test.bags[0].instances)
        np.testing.assert_array_equal(out_test.bags[0].instances, want)
        # pooled train output is exactly centered
        pooled = out_train.bags[0].instances
        np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(pooled.std(axis=0), 1.0, rtol=1e-12)

    def test_idempotent_within_tolerance(self, rng):
        ds = BagDataset(
            tuple(Bag(f"b{i}", 4.0 * rng.standard_normal((6, 3)) + 2.0, POSITIVE) for i in range(4))
        )
        (once,) = standardize(ds)
        (twice,) = standardize(once)
        for a, b in zip(once.bags, twice.bags):
            np.testing.assert_allclose(a.instances, b.instances, atol=1e-12)

    def test_standardization_recorded(self, rng):
        ds = BagDataset((Bag("a", rng.standard_normal((3, 2)), POSITIVE),))
        (out,) = standardize(ds)
        assert isinstance(out.standardization, Standardization)
        assert ds.standardization is None

    def test_validation(self):
        with pytest.raises(ValueError, match="same length"):
            Standardization(np.zeros(2), np.ones(3))
        with pytest.raises(ValueError, match="positive"):
            Standardization(np.zeros(2), np.array([1.0, 0.0]))
        std = Standardization(np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            std.transform(np.ones((2, 3)))


class TestSynthConfig:
    def _base(self, **kw):
        defaults = dict(
            n_pos=2, n_neg=2, m_min=2, m_max=4, dimension=3,
            witness_rate=0.5, separation=2.0,
        )
        defaults.update(kw)
        return defaults

    def test_valid(self):
        SynthConfig(**self._base())

    @pytest.mark.parametrize(
        "kw",
        [
            {"n_pos": 0, "n_neg": 0},
            {"n_pos": -1},
            {"m_min": 0},
            {"m_min": 5, "m_max": 4},
            {"dimension": 0},
            {"witness_rate": 1.5},
            {"witness_rate": -0.1},
            {"clutter_rate": 2.0},
            {"separation": -1.0},
            {"separation": float("inf")},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**self._base(**kw))


class TestGenerate:
    def test_shapes_ids_and_labels(self):
        cfg = SynthConfig(
            n_pos=3, n_neg=2, m_min=2, m_max=5, dimension=4,
            witness_rate=0.5, separation=2.0, seed=1,
        )
        ds = generate(cfg)
        assert ds.ids == ("pos0000", "pos0001", "pos0002", "neg0000", "neg0001")
        assert ds.labels == [POSITIVE] * 3 + [NEGATIVE] * 2
        for bag in ds:
            assert 2 <= bag.size <= 5
            assert bag.dimension == 4

    def test_deterministic_bytes(self, tmp_path):
        cfg = SynthConfig(
            n_pos=4, n_neg=4, m_min=2, m_max=6, dimension=3,
            witness_rate=0.4, separation=3.0, clutter_rate=0.2, seed=9,
        )
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save(generate(cfg), p1)
        save(generate(cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()
        save(generate(SynthConfig(**{**cfg.__dict__, "seed": 10})), p2)
        assert p1.read_bytes() != p2.read_bytes()

    def test_truth_matches_witness_shift(self):
        cfg = SynthConfig(
            n_pos=50, n_neg=50, m_min=8, m_max=12, dimension=3,
            witness_rate=0.3, separation=5.0, seed=3,
        )
        ds = generate(cfg)
        flags, firsts = [], []
        for bag in ds.bags:
            truth = ds.truth[bag.id]
            assert truth.shape == (bag.size,)
            if bag.label == NEGATIVE:
                assert truth.sum() == 0
            flags.append(truth)
            firsts.append(bag.instances[:, 0])
        flags = np.concatenate([f for f, b in zip(flags, ds.bags) if b.label == POSITIVE])
        firsts = np.concatenate([x for x, b in zip(firsts, ds.bags) if b.label == POSITIVE])
        # witness indicator rate within 3 standard errors
        n = flags.size
        se = np.sqrt(0.3 * 0.7 / n)
        assert abs(flags.mean() - 0.3) <= 3.0 * se
        # flagged instances carry the shift, unflagged do not
        assert firsts[flags == 1].mean() == pytest.approx(5.0, abs=0.3)
        assert abs(firsts[flags == 0].mean()) <= 0.3

    def test_zero_witness_rate_removes_signal(self):
        cfg = SynthConfig(
            n_pos=80, n_neg=80, m_min=5, m_max=8, dimension=2,
            witness_rate=0.0, separation=6.0, seed=4,
        )
        ds = generate(cfg)
        pos = np.vstack([b.instances for b in ds.bags if b.label == POSITIVE])
        neg = np.vstack([b.instances for b in ds.bags if b.label == NEGATIVE])
        assert abs(pos.mean() - neg.mean()) < 0.1
        assert abs(pos.std() - neg.std()) < 0.1

    def test_clutter_shifts_negatives(self):
        cfg = SynthConfig(
            n_pos=2, n_neg=100, m_min=10, m_max=10, dimension=2,
            witness_rate=0.5, separation=4.0, clutter_rate=0.5, seed=5,
        )
        ds = generate(cfg)
        neg = np.vstack([b.instances for b in ds.bags if b.label == NEGATIVE])
        # half the negatives sit near +2 on the first axis
        assert neg[:, 0].mean() == pytest.approx(1.0, abs=0.15)

    def test_truth_not_serialized(self, tmp_path):
        cfg = SynthConfig(
            n_pos=2, n_neg=2, m_min=2, m_max=3, dimension=2,
            witness_rate=0.5, separation=2.0, seed=0,
        )
        ds = generate(cfg)
        assert ds.truth is not None
        path = tmp_path / "t.jsonl"
        save(ds, path)
        assert load(path).truth is None
        assert "truth" not in path.read_text()

    def test_truth_survives_standardization(self):
        cfg = SynthConfig(
            n_pos=2, n_neg=2, m_min=2, m_max=3, dimension=2,
            witness_rate=0.5, separation=2.0, seed=0,
        )
        ds = generate(cfg)
        (out,) = standardize(ds)
        assert out.truth is ds.truth

    def test_apply_standardization_keeps_labels(self, rng):
        ds = BagDataset((Bag("a", rng.standard_normal((3, 2)), NEGATIVE),))
        out = apply_standardization(ds, fit_standardization(ds))
        assert out.labels == [NEGATIVE]
