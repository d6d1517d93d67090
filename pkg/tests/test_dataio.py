import json

import numpy as np
import pytest

from dgz.dataio import (
    Dataset,
    SynthSpec,
    export_report,
    load_dataset_dir,
    parse_config_text,
    read_matrix,
    read_report_json,
    read_split,
    save_dataset,
    synth_dataset,
    write_curve,
    write_matrix,
    write_table,
)
from dgz.errors import ConfigError, ContractError, FormatError
from dgz.metrics import MetricsReport
from dgz.tensor_core import Rng


class TestMatrixFiles:
    def test_binary_round_trip(self, tmp_path, rng):
        m = rng.normal((5, 3)).astype(np.float32).astype(np.float64)
        p = tmp_path / "m.dgzm"
        write_matrix(p, m)
        assert np.array_equal(read_matrix(p), m)
        write_matrix(tmp_path / "again.dgzm", read_matrix(p))
        assert (tmp_path / "again.dgzm").read_bytes() == p.read_bytes()

    def test_header(self, tmp_path):
        p = tmp_path / "m.dgzm"
        write_matrix(p, [[1.0, 2.0, 3.0]])
        assert p.read_bytes()[:12] == b"DGZM" + np.array([1, 3], "<u4").tobytes()

    def test_csv_and_binary_agree(self, tmp_path, rng):
        m = rng.normal((4, 6))
        write_matrix(tmp_path / "m.csv", m)
        write_matrix(tmp_path / "m.dgzm", m)
        a, b = read_matrix(tmp_path / "m.csv"), read_matrix(tmp_path / "m.dgzm")
        assert np.array_equal(a, m)
        assert np.array_equal(a.astype(np.float32), b.astype(np.float32))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.dgzm"
        p.write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(FormatError) as err:
            read_matrix(p)
        assert err.value.field == "magic"

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.dgzm"
        write_matrix(p, np.ones((3, 3)))
        p.write_bytes(p.read_bytes()[:-1])
        with pytest.raises(FormatError):
            read_matrix(p)

    def test_ragged_csv(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(FormatError):
            read_matrix(p)


def tiny_dataset():
    return Dataset(
        features=np.arange(12.0).reshape(6, 2),
        labels=[0, 0, 1, 1, 2, 2],
        attributes=np.eye(3),
        seen_ids=[0, 1],
        unseen_ids=[2],
        train_seen=[0, 2],
        test_seen=[1, 3],
        test_unseen=[4, 5],
    )


class TestDataset:
    def test_round_trip(self, tmp_path, small_dataset):
        save_dataset(small_dataset, tmp_path / "d")
        back = load_dataset_dir(tmp_path / "d")
        assert np.array_equal(back.features, small_dataset.features.astype(np.float32))
        for name in ("labels", "seen_ids", "unseen_ids", "train_seen", "test_seen", "test_unseen"):
            assert np.array_equal(getattr(back, name), getattr(small_dataset, name))
        assert back.true_centers is not None

    def test_out_of_range_split_index(self, tmp_path):
        save_dataset(tiny_dataset(), tmp_path)
        doc = json.loads((tmp_path / "split.json").read_text())
        doc["test_unseen"] = [4, 99]
        (tmp_path / "split.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError) as err:
            load_dataset_dir(tmp_path)
        assert err.value.field == "test_unseen"

    def test_split_not_integers(self, tmp_path):
        save_dataset(tiny_dataset(), tmp_path)
        doc = json.loads((tmp_path / "split.json").read_text())
        doc["seen_ids"] = [0, "1"]
        (tmp_path / "split.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_split(tmp_path / "split.json")

    def test_class_count_mismatch(self, tmp_path):
        save_dataset(tiny_dataset(), tmp_path)
        write_matrix(tmp_path / "attributes.dgzm", np.eye(2))
        with pytest.raises(FormatError):
            load_dataset_dir(tmp_path)

    @pytest.mark.parametrize(
        "change, field",
        [
            ({"unseen_ids": [1, 2]}, "seen_ids"),
            ({"test_seen": [1, 2]}, "partitions"),
            ({"test_seen": [1], "test_unseen": [3, 5]}, "test_unseen"),
            ({"train_seen": [0, 4], "test_unseen": [5]}, "train_seen"),
            ({"labels": [0, 0, 1, 1, 2, 5]}, "labels"),
        ],
    )
    def test_invariants(self, change, field):
        base = dict(
            features=np.arange(12.0).reshape(6, 2), labels=[0, 0, 1, 1, 2, 2], attributes=np.eye(3),
            seen_ids=[0, 1], unseen_ids=[2], train_seen=[0, 2], test_seen=[1, 3], test_unseen=[4, 5],
        )
        base.update(change)
        with pytest.raises(FormatError) as err:
            Dataset(**base)
        assert err.value.field == field

    def test_subsample_train(self, small_dataset):
        sub = small_dataset.subsample_train(small_dataset.seen_ids[:3], 5, Rng(0))
        labels = small_dataset.labels[sub.train_seen]
        assert sorted(np.unique(labels, return_counts=True)[1].tolist()) == [5, 5, 5]
        with pytest.raises(ContractError):
            small_dataset.subsample_train(small_dataset.seen_ids[:1], 10_000, Rng(0))


class TestSynth:
    def test_zero_covariance(self):
        ds = synth_dataset(SynthSpec(n_seen=3, n_unseen=2, d_x=4, d_a=3, samples_per_class=10, cov_scale=0.0))
        assert np.array_equal(ds.features, ds.true_centers[ds.labels])

    def test_deterministic(self):
        spec = SynthSpec(n_seen=3, n_unseen=2, d_x=4, d_a=3, samples_per_class=10, seed=9)
        a, b = synth_dataset(spec), synth_dataset(spec)
        assert np.array_equal(a.features, b.features) and np.array_equal(a.unseen_ids, b.unseen_ids)

    def test_centers_within_tolerance(self):
        spec = SynthSpec(n_seen=4, n_unseen=2, d_x=6, d_a=3, samples_per_class=2000, seed=2)
        ds = synth_dataset(spec)
        sigma = np.sqrt(np.diag(ds.true_covariance))
        for c in range(ds.n_classes):
            emp = ds.features[ds.labels == c].mean(axis=0)
            assert np.all(np.abs(emp - ds.true_centers[c]) < 3 * sigma / np.sqrt(2000))

    def test_partitions(self, small_dataset):
        ds = small_dataset
        assert ds.seen_ids.size == 8 and ds.unseen_ids.size == 3
        total = ds.train_seen.size + ds.test_seen.size + ds.test_unseen.size
        assert total == ds.features.shape[0]

    def test_degenerate_spec(self):
        with pytest.raises(ContractError):
            synth_dataset(SynthSpec(n_unseen=0))
        with pytest.raises(ContractError):
            synth_dataset(SynthSpec(samples_per_class=1))


class TestConfigText:
    def test_parse(self):
        text = "# settings\ntau = 0.04\nsigma=0.08  # augmentation\n\ntau = 0.05\n"
        assert parse_config_text(text) == {"tau": "0.05", "sigma": "0.08"}

    def test_errors(self):
        with pytest.raises(ConfigError):
            parse_config_text("tau 0.04")
        with pytest.raises(ConfigError):
            parse_config_text("= 3")


class TestExport:
    def report(self):
        return MetricsReport(
            A_u=41.5, A_s=77.25, H=54.0, T1=44.0, cmmd=0.0123, A_is=80.0, A_iu=50.0,
            per_class={2: 40.0, 10: 43.0}, curves={"cls": {"epoch": [0, 1], "loss": [2.5, 1.25]}},
            meta={"dist_kind": "GEN"},
        )

    def test_round_trip(self, tmp_path):
        export_report(self.report(), tmp_path)
        assert read_report_json(tmp_path / "report.json") == self.report()

    def test_csv_schema(self, tmp_path):
        export_report(self.report(), tmp_path)
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "A_u,A_s,H,T1,cmmd,cacd,A_is,A_iu"
        assert lines[1] == "41.5,77.25,54.0,44.0,0.0123,,80.0,50.0"
        assert (tmp_path / "report_curve_cls.csv").read_text() == "epoch,loss\n0.0,2.5\n1.0,1.25\n"

    def test_byte_identical(self, tmp_path):
        a = export_report(self.report(), tmp_path / "a")
        b = export_report(self.report(), tmp_path / "b")
        for pa, pb in zip(a, b):
            assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_table(self, tmp_path):
        p = write_table(tmp_path / "t.csv", [("GEN", self.report())], "dist")
        assert open(p).read().splitlines()[0] == "dist,A_u,A_s,H,T1,cmmd,cacd,A_is,A_iu"

    def test_curve_lengths(self, tmp_path):
        with pytest.raises(ContractError):
            write_curve(tmp_path / "c.csv", {"a": [1], "b": [1, 2]})

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            export_report(self.report(), blocker / "sub")
