import math

import pytest

import cmt_search as cmt


def small_index():
    docs = [
        cmt.Document("d0", "Remdesivir trial", "in patients"),
        cmt.Document("d1", "trial of patients", "care"),
        cmt.Document("d2", "patients at home", ""),
    ]
    return cmt.InvertedIndex.build(docs)


def test_analyze_lowercases_and_splits():
    assert cmt.analyze("COVID-19 spread, in 2020") == ["covid", "19", "spread", "in", "2020"]
    assert "the" not in cmt.preprocess_query("the spread of the virus")


def test_single_document_bm25_score():
    index = cmt.InvertedIndex.build([cmt.Document("only", "coronavirus", "")])
    assert index.doc_count == 1
    assert index.score(["coronavirus"], "only") == pytest.approx(math.log(4 / 3), abs=1e-9)


def test_search_orders_by_score_then_id():
    hits = small_index().search(["trial", "patients"], k=3)
    assert [d for d, _ in hits] == ["d0", "d1", "d2"]
    scores = [s for _, s in hits]
    assert scores == sorted(scores, reverse=True)
    with pytest.raises(cmt.InvalidInput):
        small_index().score(["trial"], "missing")


def test_metrics_hand_values():
    assert cmt.ndcg_at_k(["d2", "d1", "d3"], {"d1": 2, "d2": 1}, 10) == pytest.approx(0.859719, abs=1e-6)
    assert cmt.precision_at_k(["a", "b"], {"a": 1}, 5) == pytest.approx(0.2)
    fused = cmt.reciprocal_rank_fusion([["x", "y"], ["x", "z"]])
    assert fused[0][0] == "x"
    assert fused[0][1] == pytest.approx(2 / 61, abs=1e-12)


def test_mask_count_and_subwords():
    assert cmt.mask_count(1) == 1
    assert cmt.mask_count(20) == 3
    vocab = cmt.train_subword_vocab(["remdesivir trial patients", "patients recover at home"], 60)
    assert vocab.piece(0) == "[MASK]"
    assert len(cmt.tokenize("remdesivir patients", vocab)) > 0


def test_pipeline_runs_on_the_fixture(tmp_path):
    cmt.make_fixture(tmp_path / "fx")
    fx = tmp_path / "fx"
    settings = {
        "corpus": str(fx / "corpus.jsonl"),
        "queries": str(fx / "queries.tsv"),
        "qrels": str(fx / "qrels.txt"),
        "work_dir": str(tmp_path / "work"),
        "vocab_size": "200",
        "dim": "16",
        "dense_epochs": "2",
        "dapt_epochs": "1",
        "triples": "10",
        "select_steps": "4",
        "select_batch": "4",
    }
    done = cmt.run_pipeline(settings, ["ingest", "index", "evaluate"])
    assert done == ["ingest", "index", "evaluate"]
    assert (tmp_path / "work" / "bm25.run").exists()
    assert (tmp_path / "work" / "report.jsonl").exists()
    with pytest.raises(cmt.ConfigError):
        cmt.run_pipeline({"k1": "-1"}, ["index"])
