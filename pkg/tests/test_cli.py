import json

import pytest

from hmlmask.cli import main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    gen = root / "gen.json"
    gen.write_text(json.dumps({"n_samples": 160, "hierarchies": ["substrate", "relief", "bedforms"]}))
    cfg = root / "train.json"
    cfg.write_text(json.dumps({"epochs": 3, "warmup_to_peak_epoch": 1, "batch_size": 32, "hidden_dim": 16, "peak_lr": 1e-3, "start_end_lr": 1e-4}))
    assert main(["generate", str(gen), "--seed", "3", "--out", str(root / "data")]) == 0
    return root


def pipeline(ws, tag, capsys):
    d = ws / "data"
    hier = [d / "hierarchies" / f"{n}.txt" for n in ("substrate", "relief", "bedforms")]
    out = ws / tag
    out.mkdir()
    assert run(["train", d / "features.csv", d / "annotations.csv", *hier, "--config", ws / "train.json", "--seed", 1, "--split", d / "split.json", "--out", out / "m.ckpt", "--log", out / "log.jsonl"], capsys)[0] == 0
    assert run(["predict", out / "m.ckpt", d / "features.csv", "--split", d / "split.json", "--out", out / "p.jsonl"], capsys)[0] == 0
    assert run(["constrain", out / "p.jsonl", *hier, "--out", out / "b.jsonl"], capsys)[0] == 0
    assert run(["evaluate", out / "b.jsonl", d / "annotations.csv", *hier, "--report", out / "r.json", "--per-node", out / "n.csv"], capsys)[0] == 0
    assert run(["baseline", *hier, d / "annotations.csv", "--trials", 3, "--seed", 1, "--split", d / "split.json", "--report", out / "b.json"], capsys)[0] == 0
    return out


class TestCommands:
    def test_count_chain(self, tmp_path, capsys):
        f = tmp_path / "chain.txt"
        f.write_text("root > a > b\n")
        code, out, _ = run(["count", f, "--brute-force"], capsys)
        assert code == 0
        assert out.splitlines()[0] == "4"
        assert "agrees" in out

    def test_count_bundled(self, capsys):
        assert run(["count", "relief"], capsys)[1].strip() == str(1 + 2 * 2 * 2 * 5)

    def test_validate(self, capsys):
        code, out, _ = run(["validate", "bedforms"], capsys)
        assert code == 0
        assert "nodes: 7" in out
        assert "depth histogram: 0:1 1:4 2:2" in out

    def test_generate_outputs(self, workspace):
        d = workspace / "data"
        for name in ("features.csv", "annotations.csv", "ground_truth.csv", "split.json", "config.json"):
            assert (d / name).exists()
        split = json.loads((d / "split.json").read_text())
        assert sum(len(v) for v in split.values()) == 160

    def test_pipeline_is_byte_identical(self, workspace, capsys):
        a = pipeline(workspace, "a", capsys)
        b = pipeline(workspace, "b", capsys)
        for name in ("m.ckpt", "log.jsonl", "p.jsonl", "b.jsonl", "r.json", "n.csv", "b.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        report = json.loads((a / "r.json").read_text())
        assert report["schema_version"] == 1
        assert set(report) >= {"ap", "hml_ap", "singular_f1", "per_depth", "per_category", "per_node"}
        log = [json.loads(line) for line in (a / "log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [1, 2, 3]

    def test_evaluate_truth_is_perfect(self, workspace, tmp_path, capsys):
        """Predictions equal to the annotations score AP 1."""
        from hmlmask.annotations import read_annotation_csv
        from hmlmask.formats import write_predictions
        from hmlmask.hierarchy import load_hierarchy
        from hmlmask.model import Dataset
        import numpy as np

        d = workspace / "data"
        hier = [load_hierarchy(d / "hierarchies" / f"{n}.txt") for n in ("substrate", "relief", "bedforms")]
        anns = read_annotation_csv(d / "annotations.csv", hier)
        data = Dataset.from_annotations(np.zeros((len(anns), 0)), anns, hier)
        preds = {k: v.astype(float) for k, v in data.targets.items()}
        write_predictions(tmp_path / "p.jsonl", hier, [a.sample_id for a in anns], preds)
        code, out, _ = run(["evaluate", tmp_path / "p.jsonl", d / "annotations.csv", *[d / "hierarchies" / f"{n}.txt" for n in ("substrate", "relief", "bedforms")]], capsys)
        assert code == 0
        rep = json.loads(out)
        assert rep["ap"] == 1.0 and rep["hml_ap"] == 1.0 and rep["singular_f1"] == 1.0


class TestErrors:
    def test_missing_file(self, capsys):
        code, _, err = run(["count", "/nonexistent/tree.txt"], capsys)
        assert code == 2
        obj = json.loads(err)
        assert obj["error"] == "file-not-found"
        assert obj["file"] == "/nonexistent/tree.txt"

    def test_schema_mismatch_names_field(self, workspace, tmp_path, capsys):
        bad = tmp_path / "ann.csv"
        bad.write_text("sample_id,Substrate\ns000,Substrate\n")
        code, _, err = run(["baseline", "substrate", "relief", bad], capsys)
        obj = json.loads(err)
        assert code == 2 and obj["error"] == "schema-mismatch" and obj["field"] == "Relief" and obj["file"] == str(bad)

    def test_dimension_mismatch(self, workspace, tmp_path, capsys):
        p = tmp_path / "p.jsonl"
        p.write_text(json.dumps({"format": "hmlmask-predictions", "version": 1, "categories": [{"name": "Relief", "n_nodes": 5}]}) + "\n")
        code, _, err = run(["constrain", p, "relief", "--out", tmp_path / "o.jsonl"], capsys)
        obj = json.loads(err)
        assert code == 2 and obj["error"] == "dimension-mismatch" and obj["field"] == "Relief"

    def test_bad_train_config_key(self, workspace, tmp_path, capsys):
        d = workspace / "data"
        cfg = tmp_path / "c.json"
        cfg.write_text('{"learning_rate": 0.1}')
        code, _, err = run(["train", d / "features.csv", d / "annotations.csv", "substrate", "relief", "bedforms", "--config", cfg, "--out", tmp_path / "m"], capsys)
        assert code == 2 and json.loads(err)["field"] == "learning_rate"
