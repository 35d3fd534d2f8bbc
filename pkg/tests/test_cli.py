import hashlib
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from tmrl import cli
from tmrl.config import load_config, read_manifest
from tmrl.encoder import TMRLModel, load_checkpoint
from tmrl.errors import ConfigError, InputFormatError, NumericError, TransportError
from tmrl.retrieval_eval import store_load
from tmrl.synthetic import build_benchmark
from tmrl.temporal_data import (
    HTTPGenerationClient,
    MockGenerationClient,
    augment_documents,
    parse_record,
    consistency_check,
)

FIGURE_DOC = ("Marie was born in Warsaw. In 1966 she moved to Paris. She studied there. "
              "In 1972 he shared the prize. He retired later.")


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def corpus(tmp_path):
    bm = build_benchmark(20, seed=4)
    write_jsonl(tmp_path / "corpus.jsonl", [{"docid": d, "text": t} for d, t in bm.documents])
    write_jsonl(tmp_path / "queries.jsonl", [{"qid": q, "text": t} for q, t in bm.queries])
    (tmp_path / "qrels.txt").write_text("".join(f"{q} 0 {d} {g}\n" for q, r in bm.qrels.items() for d, g in r.items()))
    return tmp_path


class TestConfig:
    def test_defaults_and_overrides(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[loss]\nalpha = 0.25\n[train]\nepochs = 2\n")
        cfg = load_config(ini, ["train.lr=0.5", "loss.M=8,16,32,64"])
        assert cfg.loss.alpha == 0.25 and cfg.train.epochs == 2 and cfg.train.lr == 0.5
        assert cfg.train.loss is cfg.loss and cfg.loss.M == (8, 16, 32, 64)

    @pytest.mark.parametrize("override", ["loss.nope=1", "what.x=1", "train.epochs=many", "lr=1",
                                          "model.d=32", "train.loss=1"])
    def test_bad_overrides(self, override):
        with pytest.raises(ConfigError):
            load_config(None, [override])

    def test_ini_round_trip(self, tmp_path):
        cfg = load_config(None, ["loss.alpha=0.25", "model.pooling=cls"])
        (tmp_path / "c.ini").write_text(cfg.to_ini())
        assert load_config(tmp_path / "c.ini") == cfg


class TestTag:
    def test_empty_input(self, tmp_path):
        (tmp_path / "in.jsonl").write_text("")
        assert cli.main(["tag", str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 0
        assert (tmp_path / "out.jsonl").read_text() == ""

    def test_sample_document(self, tmp_path):
        write_jsonl(tmp_path / "in.jsonl", [{"docid": 1, "text": FIGURE_DOC}])
        assert cli.main(["tag", str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 0
        (row,) = [json.loads(x) for x in (tmp_path / "out.jsonl").read_text().splitlines()]
        assert [s["text"] for s in row["spans"]] == ["In 1966", "In 1972"]

    def test_bad_line_skipped(self, tmp_path, capsys):
        (tmp_path / "in.jsonl").write_text('{"docid": 1}\nnot json\n{"docid": 2, "text": "In 1990 it rained."}\n')
        assert cli.main(["tag", str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 0
        assert len((tmp_path / "out.jsonl").read_text().splitlines()) == 1
        assert "skipped" in capsys.readouterr().err

    def test_unreadable_input_leaves_no_output(self, tmp_path):
        out = tmp_path / "out.jsonl"
        assert cli.main(["tag", str(tmp_path / "missing.jsonl"), str(out)]) == InputFormatError.exit_code
        assert list(tmp_path.iterdir()) == []


class TestAugment:
    def test_mock_mode(self, corpus, capsys):
        out = corpus / "recs.jsonl"
        before = digest(corpus / "corpus.jsonl")
        assert cli.main(["augment", str(corpus / "corpus.jsonl"), str(out), "--mock"]) == 0
        records = [parse_record(x) for x in out.read_text().splitlines()]
        assert len(records) == 20
        assert all(consistency_check(r) == [] for r in records)
        assert "consistency violations: 0" in capsys.readouterr().out
        assert digest(corpus / "corpus.jsonl") == before
        man = read_manifest(f"{out}.manifest")
        assert man["inputs"]["corpus"].endswith(before)

    def test_post_filter_failures_counted(self):
        mock = MockGenerationClient()

        class AnswerOnly:
            def complete(self, prompt):
                rec = json.loads(mock.complete(prompt))
                rec["positive_passages"] = [p for p in rec["positive_passages"]
                                            if p["temporal_query_type"] == "TemporalAnswer"]
                return json.dumps(rec) + "\n"

        records, report = augment_documents([(1, "In 1972 he shared the prize.")], AnswerOnly())
        assert records == [] and report.filter.records_dropped_few_queries == 1

    def test_endpoint_without_env(self, corpus, monkeypatch):
        monkeypatch.delenv("TMRL_GEN_ENDPOINT", raising=False)
        code = cli.main(["augment", str(corpus / "corpus.jsonl"), str(corpus / "o.jsonl"), "--endpoint"])
        assert code == ConfigError.exit_code
        assert not (corpus / "o.jsonl").exists()

    def test_live_endpoint_round_trip(self, tmp_path, monkeypatch):
        mock = MockGenerationClient()

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                out = json.dumps({"choices": [{"text": mock.complete(body["prompt"])}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            write_jsonl(tmp_path / "c.jsonl", [{"docid": 5, "text": "In 1972 he shared the prize."}])
            url = f"http://127.0.0.1:{server.server_port}/generate"
            monkeypatch.delenv("TMRL_GEN_ENDPOINT", raising=False)
            assert cli.main(["augment", str(tmp_path / "c.jsonl"), str(tmp_path / "o.jsonl"),
                             "--endpoint", url, "--jobs", "2"]) == 0
        finally:
            server.shutdown()
        (rec,) = [parse_record(x) for x in (tmp_path / "o.jsonl").read_text().splitlines()]
        assert consistency_check(rec) == []

    def test_unreachable_endpoint_fails_after_retries(self):
        client = HTTPGenerationClient("http://127.0.0.1:9/none", timeout=0.5, max_retries=2, backoff=0.0)
        with pytest.raises(TransportError, match="3 attempts"):
            client.complete("x")
        assert client.retries == 2


def _augment(corpus):
    out = corpus / "recs.jsonl"
    assert cli.main(["augment", str(corpus / "corpus.jsonl"), str(out)]) == 0
    return out


class TestTrainAndEvaluate:
    def test_pipeline(self, corpus):
        recs = _augment(corpus)
        run_dir = corpus / "run"
        assert cli.main(["train", str(recs), str(run_dir), "--set", "train.epochs=1",
                         "--set", "train.batch_size=8"]) == 0
        assert {p.name for p in run_dir.iterdir()} == {
            "checkpoint.merged.tmrl", "checkpoint.unmerged.tmrl", "config.ini", "loss_curve.csv", "manifest.ini"}
        ckpt = run_dir / "checkpoint.merged.tmrl"
        store = corpus / "store.tmre"
        assert cli.main(["embed", str(ckpt), str(corpus / "corpus.jsonl"), str(store), "--jobs", "2"]) == 0
        assert store_load(store).levels == (8, 16, 32, 64)

        out_csv = corpus / "sweep.csv"
        assert cli.main(["sweep", str(store), str(corpus / "queries.jsonl"), str(corpus / "qrels.txt"),
                         str(out_csv), "--checkpoint", str(ckpt)]) == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "m,ndcg@10,recall@100,n_queries" and len(lines) == 5

        run = corpus / "run.txt"
        assert cli.main(["search", str(store), str(corpus / "queries.jsonl"), "--checkpoint", str(ckpt),
                         "--m", "16", "--topk", "20", "--output", str(run)]) == 0
        assert cli.main(["eval", str(run), str(corpus / "qrels.txt")]) == 0
        assert (corpus / "run.txt.manifest").exists()

    def test_lr_zero_checkpoint_equals_initialization(self, corpus):
        recs = _augment(corpus)
        assert cli.main(["train", str(recs), str(corpus / "run"), "--set", "train.epochs=1",
                         "--set", "train.batch_size=8", "--set", "train.lr=0"]) == 0
        cfg = load_config(None)
        init = cli.build_model(cfg)
        got = load_checkpoint(corpus / "run" / "checkpoint.unmerged.tmrl")
        for name, arr in init.trainable().items():
            np.testing.assert_array_equal(got.trainable()[name], arr.astype(np.float32).astype(np.float64))

    def test_wide_config_echoed_in_manifest(self, corpus):
        recs = _augment(corpus)
        ini = corpus / "wide.ini"
        ini.write_text("[model]\nd = 128\n[loss]\nM = 64,128\nt = 64\nalpha = 0.25\nbeta = 0.1\ngamma = 0.1\n"
                       "[train]\nepochs = 1\nbatch_size = 8\n")
        assert cli.main(["train", str(recs), str(corpus / "run"), "--config", str(ini)]) == 0
        man = read_manifest(corpus / "run" / "manifest.ini")
        assert man["config"]["loss.t"] == "64" and man["config"]["loss.alpha"] == "0.25"
        assert man["config"]["loss.beta"] == "0.1" and man["config"]["loss.gamma"] == "0.1"
        assert man["run"]["seed"] == "0" and "sha256=" in man["inputs"]["data"]

    def test_train_is_reproducible_and_refuses_to_clobber(self, corpus):
        recs = _augment(corpus)
        args = ["--set", "train.epochs=1", "--set", "train.batch_size=8"]
        assert cli.main(["train", str(recs), str(corpus / "a")] + args) == 0
        assert cli.main(["train", str(recs), str(corpus / "b")] + args) == 0
        for name in ("checkpoint.unmerged.tmrl", "checkpoint.merged.tmrl", "loss_curve.csv"):
            assert digest(corpus / "a" / name) == digest(corpus / "b" / name)
        strip = lambda p: re.sub(r"(started|finished) = .*", "", p.read_text().replace(str(p.parent), "DIR"))
        assert strip(corpus / "a" / "manifest.ini") == strip(corpus / "b" / "manifest.ini")
        assert cli.main(["train", str(recs), str(corpus / "a")] + args) == ConfigError.exit_code

    def test_index_then_search_own_vector(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((30, 8))
        write_jsonl(tmp_path / "v.jsonl", [{"docid": i, "vector": list(x)} for i, x in enumerate(X)])
        write_jsonl(tmp_path / "q.jsonl", [{"qid": "q", "vector": list(X[11])}])
        assert cli.main(["index", str(tmp_path / "v.jsonl"), str(tmp_path / "s.tmre"), "--levels", "4,8"]) == 0
        assert cli.main(["search", str(tmp_path / "s.tmre"), str(tmp_path / "q.jsonl"), "--m", "8",
                         "--topk", "3", "--output", str(tmp_path / "run.txt")]) == 0
        first = (tmp_path / "run.txt").read_text().splitlines()[0].split()
        assert first[:3] == ["q", "11", "1"]
        (tmp_path / "qrels.txt").write_text("q 0 11 1\n")
        assert cli.main(["eval", str(tmp_path / "run.txt"), str(tmp_path / "qrels.txt")]) == 0

    def test_eval_prints_one_on_rank_one_fixture(self, tmp_path, capsys):
        (tmp_path / "run.txt").write_text("q1 d1 1 0.9 t\nq1 d2 2 0.1 t\n")
        (tmp_path / "qrels.txt").write_text("q1 0 d1 1\n")
        assert cli.main(["eval", str(tmp_path / "run.txt"), str(tmp_path / "qrels.txt")]) == 0
        assert "ndcg@10\t1.000000" in capsys.readouterr().out

    def test_search_level_too_large(self, tmp_path):
        write_jsonl(tmp_path / "v.jsonl", [{"docid": 0, "vector": [1.0, 0.0]}])
        assert cli.main(["index", str(tmp_path / "v.jsonl"), str(tmp_path / "s.tmre")]) == 0
        code = cli.main(["search", str(tmp_path / "s.tmre"), str(tmp_path / "v.jsonl"), "--m", "3"])
        assert code == InputFormatError.exit_code


class TestGradcheck:
    def test_default_config_passes(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_failure_exit_code(self, monkeypatch):
        from tmrl.numkit import GradCheckReport

        monkeypatch.setattr(cli, "grad_check_model",
                            lambda *a, **k: GradCheckReport(1.0, 1.0, 0, False, 1, "projector.W1[0,0]"))
        assert cli.main(["gradcheck", "--coords", "1"]) == NumericError.exit_code


def test_exit_codes_are_distinct():
    codes = [ConfigError.exit_code, InputFormatError.exit_code, NumericError.exit_code, TransportError.exit_code]
    assert len(set(codes)) == 4 and 0 not in codes and 1 not in codes


def test_jobs_does_not_change_outputs(corpus):
    for jobs in ("1", "3"):
        assert cli.main(["augment", str(corpus / "corpus.jsonl"), str(corpus / f"r{jobs}.jsonl"),
                         "--jobs", jobs]) == 0
    assert digest(corpus / "r1.jsonl") == digest(corpus / "r3.jsonl")
    ckpt = corpus / "model.tmrl"
    from tmrl.encoder import save_checkpoint
    save_checkpoint(cli.build_model(load_config(None)), ckpt)
    before = digest(corpus / "corpus.jsonl")
    for jobs in ("1", "4"):
        assert cli.main(["embed", str(ckpt), str(corpus / "corpus.jsonl"), str(corpus / f"s{jobs}.tmre"),
                         "--jobs", jobs]) == 0
    assert digest(corpus / "s1.tmre") == digest(corpus / "s4.tmre")
    assert digest(corpus / "corpus.jsonl") == before
    assert cli.main(["embed", str(ckpt), str(corpus / "corpus.jsonl"), str(corpus / "x.tmre"),
                     "--jobs", "0"]) == ConfigError.exit_code
