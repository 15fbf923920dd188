import json

import numpy as np
import pytest

from conftest import random_instance

from diverserank import dataio
from diverserank.types import MeasureParams, WeightVector


@pytest.fixture
def dataset(rng, tmp_path):
    queries = [random_instance(rng, n=5, query_id=f"q{i}") for i in range(3)]
    path = tmp_path / "data.jsonl"
    dataio.save_dataset(path, queries, channels=["c0", "c1"])
    return queries, path


class TestDatasetRoundTrip:
    def test_round_trip_preserves_everything(self, dataset):
        queries, path = dataset
        loaded, manifest = dataio.load_dataset(path)
        assert manifest.num_queries == 3
        assert manifest.channels == ["c0", "c1"]
        for orig, back in zip(queries, loaded):
            assert back.query_id == orig.query_id
            assert back.doc_ids() == orig.doc_ids()
            np.testing.assert_array_equal(back.relevance_matrix, orig.relevance_matrix)
            np.testing.assert_array_equal(back.pairwise, orig.pairwise)
            np.testing.assert_array_equal(back.judgments.probs, orig.judgments.probs)
            np.testing.assert_array_equal(back.judgments.rel, orig.judgments.rel)

    def test_save_is_byte_deterministic(self, dataset, tmp_path):
        queries, path = dataset
        again = tmp_path / "again.jsonl"
        dataio.save_dataset(again, queries, channels=["c0", "c1"])
        assert path.read_bytes() == again.read_bytes()

    def test_sparse_entries_materialize_symmetrically(self, tmp_path):
        manifest = {"format": dataio.DATASET_FORMAT, "version": 1,
                    "num_relevance_features": 1, "channels": ["c0"], "num_queries": 1}
        record = {
            "query_id": "q",
            "docs": [{"doc_id": "a", "relevance_features": [0.1]},
                     {"doc_id": "b", "relevance_features": [0.2]}],
            "subtopics": {"probs": [1.0], "rel": [[1, 0]]},
            "pairwise": [[0, 1, 0, 0.75]],
        }
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(manifest) + "\n" + json.dumps(record) + "\n")
        queries, _ = dataio.load_dataset(path)
        assert queries[0].pairwise[0, 1, 0] == 0.75
        assert queries[0].pairwise[1, 0, 0] == 0.75


class TestDatasetErrors:
    def write(self, tmp_path, manifest, records, suffix=""):
        path = tmp_path / "bad.jsonl"
        text = json.dumps(manifest) + "\n" + "".join(json.dumps(r) + "\n" for r in records) + suffix
        path.write_text(text)
        return path

    def good_manifest(self, n_queries=1):
        return {"format": dataio.DATASET_FORMAT, "version": 1,
                "num_relevance_features": 2, "channels": ["c0"], "num_queries": n_queries}

    def good_record(self):
        return {
            "query_id": "q0",
            "docs": [{"doc_id": "a", "relevance_features": [0.1, 0.2]}],
            "subtopics": {"probs": [1.0], "rel": [[1]]},
            "pairwise": [],
        }

    def test_feature_count_mismatch_names_query_and_line(self, tmp_path):
        record = self.good_record()
        record["docs"][0]["relevance_features"] = [0.1]
        path = self.write(tmp_path, self.good_manifest(), [record])
        with pytest.raises(dataio.DataFormatError) as err:
            dataio.load_dataset(path)
        message = str(err.value)
        assert "q0" in message and ":2" in message and "relevance_features" in message

    def test_trailing_garbage_rejected(self, tmp_path):
        path = self.write(tmp_path, self.good_manifest(), [self.good_record()], suffix="garbage\n")
        with pytest.raises(dataio.DataFormatError) as err:
            dataio.load_dataset(path)
        assert "trailing" in str(err.value)

    def test_wrong_format_marker_rejected(self, tmp_path):
        manifest = self.good_manifest()
        manifest["format"] = "something-else"
        path = self.write(tmp_path, manifest, [self.good_record()])
        with pytest.raises(dataio.DataFormatError):
            dataio.load_dataset(path)

    def test_bad_pairwise_indices_rejected(self, tmp_path):
        record = self.good_record()
        record["pairwise"] = [[0, 0, 0, 0.5]]
        path = self.write(tmp_path, self.good_manifest(), [record])
        with pytest.raises(dataio.DataFormatError):
            dataio.load_dataset(path)

    def test_invalid_instance_rejected(self, tmp_path):
        record = self.good_record()
        record["subtopics"]["probs"] = [0.7]
        path = self.write(tmp_path, self.good_manifest(), [record])
        with pytest.raises(dataio.DataFormatError) as err:
            dataio.load_dataset(path)
        assert "not normalized" in str(err.value)


class TestQrels:
    def test_parse_and_materialize(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text(
            "1 0 doc1 1\n"  # topic-level line: ignored
            "1 1 doc1 1\n"
            "1 2 doc7 1\n"
            "1 2 doc9 -2\n"  # negative judgment: not relevant
            "1 3 doc9 0\n"   # subtopic recorded even with no positives
            "2 1 doc1 2\n"
        )
        by_topic = dataio.parse_diversity_qrels(path)
        assert set(by_topic) == {"1", "2"}
        assert by_topic["1"][2] == {"doc7"}
        assert by_topic["1"][3] == set()
        judgments = dataio.judgments_from_qrels(by_topic["1"], ["doc1", "doc7", "docX"])
        np.testing.assert_allclose(judgments.probs, [1 / 3] * 3)
        np.testing.assert_array_equal(
            judgments.rel, [[1, 0, 0], [0, 1, 0], [0, 0, 0]]
        )

    def test_graded_judgments_binarized(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("1 2 doc7 3\n1 2 doc8 -2\n")
        by_topic = dataio.parse_diversity_qrels(path)
        assert by_topic["1"][2] == {"doc7"}

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("1 1 doc1 1\n1 1 doc2\n")
        with pytest.raises(dataio.DataFormatError) as err:
            dataio.parse_diversity_qrels(path)
        assert ":2" in str(err.value)


class TestModelFile:
    def metadata(self):
        return dataio.ModelMetadata(
            measure="err-ia", alpha=0.5, beta=0.5, cutoff=20,
            channels=["c0", "c1"], num_relevance_features=3,
            train_config={"C": 10.0}, dataset_sha256="abc",
        )

    def test_round_trip_exact(self, tmp_path):
        w = WeightVector(w_rel=[0.1, -0.25, 1e-17], w_div=[3.0, 0.0])
        path = tmp_path / "model.json"
        dataio.save_model(path, w, self.metadata())
        back, meta = dataio.load_model(path)
        np.testing.assert_array_equal(back.w_rel, w.w_rel)
        np.testing.assert_array_equal(back.w_div, w.w_div)
        assert meta.measure_params() == MeasureParams("err-ia", 0.5, 0.5, 20)

    def test_zero_weights_round_trip(self, tmp_path):
        w = WeightVector.zeros(3, 2)
        path = tmp_path / "model.json"
        dataio.save_model(path, w, self.metadata())
        back, _ = dataio.load_model(path)
        assert not back.flat().any()

    def test_channel_mismatch_raises(self):
        meta = self.metadata()
        manifest = dataio.DatasetManifest(num_relevance_features=3, channels=["c0", "renamed"], num_queries=1)
        with pytest.raises(dataio.CompatibilityError):
            dataio.check_model_compatibility(meta, manifest)

    def test_dimension_mismatch_raises(self):
        meta = self.metadata()
        manifest = dataio.DatasetManifest(num_relevance_features=5, channels=["c0", "c1"], num_queries=1)
        with pytest.raises(dataio.CompatibilityError):
            dataio.check_model_compatibility(meta, manifest)


class TestTargetsAndRuns:
    def test_targets_round_trip(self, tmp_path):
        params = MeasureParams("nrbp", alpha=0.4, beta=0.6, cutoff=7)
        path = tmp_path / "targets.jsonl"
        dataio.save_targets(path, [("q0", ["a", "b"], 1.5), ("q1", None, None)], params)
        targets, back_params = dataio.load_targets(path)
        assert back_params == params
        assert targets == {"q0": ["a", "b"], "q1": None}

    def test_run_round_trip_and_rank_check(self, tmp_path):
        path = tmp_path / "run.txt"
        dataio.write_run(path, [("q0", 1, "a", 0.5), ("q0", 2, "b", 0.25), ("q1", 1, "c", 1.0)])
        run = dataio.read_run(path)
        assert run == {"q0": [("a", 0.5), ("b", 0.25)], "q1": [("c", 1.0)]}
        path.write_text("q0 2 a 0.5\n")
        with pytest.raises(dataio.DataFormatError):
            dataio.read_run(path)

    def test_report_format(self, tmp_path):
        path = tmp_path / "report.tsv"
        dataio.write_report(path, ["name", "value"], [["row", 0.123456789]])
        assert path.read_text() == "name\tvalue\nrow\t0.123457\n"
