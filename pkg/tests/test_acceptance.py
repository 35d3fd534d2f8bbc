"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line in ``RESULTS``; the conftest terminal-summary hook prints them
after the run, and ``python tests/test_acceptance.py`` prints them directly.
"""

import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from helpers import toy_batch, toy_config, toy_model
from test_retrieval_eval import ndcg_oracle, scan_oracle
from test_temporal_data import _grid_intervals, allen_oracle
from tmrl import cli
from tmrl.benchmark import MAX_LOSS_RATIO, MIN_ALIGN_GAIN, MIN_NDCG_GAIN, run_benchmark
from tmrl.encoder import (
    EncoderConfig,
    TMRLModel,
    TokenSequence,
    encode,
    load_checkpoint,
    lora_forward,
    lora_merge,
    save_checkpoint,
)
from tmrl.errors import DigestMismatchError, FileFormatError, InputFormatError, TruncatedFileError
from tmrl.losses import ContrastiveBatch, LossConfig, infonce, linear_cka, tmrl_total
from tmrl.numkit import GRAD_RTOL
from tmrl.retrieval_eval import (
    EmbeddingStore,
    load_qrels,
    load_run,
    ndcg_at_k,
    recall_at_k,
    search,
    store_load,
    store_save,
    write_qrels,
    write_run,
)
from tmrl.synthetic import splitter_corpus
from tmrl.temporal_data import (
    AllenRelation,
    TemporalQueryType,
    allen_relation,
    consistency_check,
    parse_record,
    post_filter,
    split_passage,
    split_sentences,
    tag_temporal,
)
from tmrl.temporal_data.augment import MIN_DATED_QUERIES, is_ordinal
from tmrl.temporal_data.intervals import PROPER_RELATIONS
from tmrl.trainer import grad_check_model, perturb_adapters

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def _verdict(n, fn):
    """Run ``fn`` (returns detail string), record the outcome, re-raise on failure."""
    try:
        detail = fn()
    except Exception as exc:
        msg = str(exc).splitlines()[0] if str(exc) else ""
        record(n, False, f"{type(exc).__name__}: {msg}")
        raise
    record(n, True, detail)


def test_1_gradient_fidelity():
    def run():
        base = toy_config()
        lc = base.loss
        cases = {
            "infonce": LossConfig(M=(32,), t=8, tau=lc.tau, alpha=0, beta=0, gamma=0, k=lc.k),
            "mrl": replace(lc, alpha=0, beta=0, gamma=0),
            "temporal": replace(lc, weights=(0, 0, 0), alpha=1, beta=0, gamma=0),
            "distill": replace(lc, weights=(0, 0, 0), alpha=0, beta=1, gamma=0),
            "cka": replace(lc, weights=(0, 0, 0), alpha=0, beta=0, gamma=1),
            "combined": lc,
        }
        t0 = time.perf_counter()
        parts = []
        for i, (name, loss_cfg) in enumerate(cases.items()):
            cfg = replace(base, loss=loss_cfg)
            batch = toy_batch(cfg)
            assert len(batch.anchors) == 8 and all(len(n) == 2 for n in batch.negatives)
            rep = grad_check_model(toy_model(), batch, cfg, n_coords=200, seed=i)
            assert rep.n_checked >= 200, f"{name}: only {rep.n_checked} coordinates checked"
            assert rep.passed and rep.max_rel_error <= GRAD_RTOL, f"{name}: {rep}"
            parts.append(f"{name}={rep.max_rel_error:.1e}")
        elapsed = time.perf_counter() - t0
        assert elapsed < 60, f"took {elapsed:.1f}s"
        return f"max rel err {' '.join(parts)}; {elapsed:.1f}s"

    _verdict(1, run)


def test_2_analytic_anchors():
    def run():
        r = np.random.default_rng(0)
        q = r.standard_normal(16)
        v = infonce(q, q, q[None, :].copy(), 16, 0.05)
        assert abs(v - math.log(2)) <= 1e-9, v
        d = 16
        B, n = 6, 2
        kw = dict(anchors=r.standard_normal((B, d)), positives=r.standard_normal((B, d)),
                  negatives=r.standard_normal((B, n, d)), anchors_t=r.standard_normal((B, 4)),
                  positives_t=r.standard_normal((B, 4)), negatives_t=r.standard_normal((B, n, 4)))
        batch = ContrastiveBatch(**kw)
        zero = LossConfig(M=(4, 8, 16), t=4, alpha=0, beta=0, gamma=0, k=2)
        res = tmrl_total(batch, None, zero)
        assert res.total == res.components["mrl"], res.components
        full = tmrl_total(batch, None, LossConfig(M=(16,), t=4, alpha=0.3, beta=0.3, gamma=0.3, k=2))
        assert full.components["dist"] == 0 and full.components["cka"] == 0, full.components
        return f"ln2 err {abs(v - math.log(2)):.1e}; zero-weight total == mrl; single-level distill=cka=0"

    _verdict(2, run)


def test_3_cka_properties():
    def run():
        worst = 0.0
        for seed in range(20):
            r = np.random.default_rng(seed)
            X = r.standard_normal((12, 6))
            Q, _ = np.linalg.qr(r.standard_normal((6, 6)))
            s = float(r.uniform(0.1, 10))
            for val in (linear_cka(X, X), linear_cka(X, X @ Q), linear_cka(X, s * X), linear_cka(X @ Q, s * X)):
                worst = max(worst, abs(val - 1.0))
            Y = r.standard_normal((12, 4))
            base = linear_cka(X, Y)
            worst = max(worst, abs(linear_cka(X @ Q, Y) - base), abs(linear_cka(s * X, Y) - base))
        assert worst <= 1e-6, worst
        return f"20 matrices, max deviation {worst:.1e}"

    _verdict(3, run)


def test_4_allen_algebra():
    def run():
        t0 = time.perf_counter()
        ivs = _grid_intervals(6)
        exceptions = 0
        for a, b in itertools.product(ivs, ivs):
            rel = allen_relation(a, b)
            exceptions += allen_oracle(a, b) != {rel}
            exceptions += allen_relation(b, a) is not rel.converse
        pairs = {(r, r.converse) for r in PROPER_RELATIONS if r is not AllenRelation.EQUALS}
        assert len(pairs) == 12 and all(c.converse is r for r, c in pairs)
        assert AllenRelation.EQUALS.converse is AllenRelation.EQUALS
        elapsed = time.perf_counter() - t0
        assert exceptions == 0, f"{exceptions} exceptions"
        assert elapsed < 5, f"{elapsed:.2f}s"
        return f"{len(ivs) ** 2} pairs, 0 exceptions, {elapsed:.2f}s"

    _verdict(4, run)


def test_5_splitter_contract():
    def run():
        docs = splitter_corpus(500, seed=0)
        n_pass = n_multi = 0
        for _, text in docs:
            passages = split_passage(text)
            for p in passages:
                spans = tag_temporal(p.text)
                assert len(spans) == 1 and not spans[0].is_relative, p.text
            for a, b in split_sentences(text):
                sentence = text[a:b]
                if len(tag_temporal(sentence)) > 1:
                    n_multi += 1
                    assert not any(sentence in p.text for p in passages), sentence
            n_pass += len(passages)
        assert n_pass > 0 and n_multi > 0
        return f"{n_pass} passages all single-expression; {n_multi} multi-expression sentences absent"

    _verdict(5, run)


def test_6_augmentation_validity(tmp_path):
    def run():
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text("".join(json.dumps({"docid": d, "text": t}) + "\n" for d, t in splitter_corpus(100, seed=1)))
        out = tmp_path / "records.jsonl"
        assert cli.main(["augment", str(corpus), str(out), "--mock"]) == 0
        lines = out.read_text().splitlines()
        records = [parse_record(line) for line in lines]
        assert records, "no records"
        violations = sum(len(consistency_check(r)) for r in records)
        assert violations == 0, f"{violations} consistency violations"
        dated = (TemporalQueryType.EXPLICIT, TemporalQueryType.IMPLICIT)
        for rec in records:
            items = rec.positive_passages + rec.negative_passages
            assert not any(any(s.is_relative for s in tag_temporal(i.text)) for i in items)
            assert not any(is_ordinal(i.text) for i in items)
            assert sum(p.temporal_query_type in dated for p in rec.positive_passages) >= MIN_DATED_QUERIES
        again, rep = post_filter(records)
        assert again == records and rep.records_out == len(records)
        return f"{len(records)} records schema-valid, 0 violations, post-filter idempotent"

    _verdict(6, run)


def test_7_lora_merge_equivalence():
    def run():
        cfg = EncoderConfig(vocab_size=256, d=32, max_len=24, n_layers=2)
        model = perturb_adapters(TMRLModel.create(cfg, t=8, seed=3), 0.5, seed=4)
        r = np.random.default_rng(5)
        worst = 0.0
        for name, ad in model.adapters.items():
            W = model.params[name]
            X = r.standard_normal((50, W.shape[0]))
            worst = max(worst, float(np.abs(lora_forward(W, ad, X) - X @ lora_merge(W, ad)).max()))
        merged = model.merged()
        for _ in range(50):
            n = int(r.integers(1, cfg.max_len + 1))
            seq = TokenSequence(r.integers(0, cfg.vocab_size, n), [(0, 0)] * n)
            worst = max(worst, float(np.abs(encode(model.params, model.adapters, seq)
                                            - encode(merged.params, None, seq)).max()))
        assert worst <= 1e-6, worst
        return f"{len(model.adapters)} layers x 50 inputs + 50 sequences, max abs {worst:.1e}"

    _verdict(7, run)


def test_8_metric_and_search_oracles():
    def run():
        r = np.random.default_rng(8)
        worst = 0.0
        for _ in range(100):
            docs = [f"d{i}" for i in range(40)]
            qrels = {f"q{q}": {d: int(r.integers(0, 4)) for d in r.choice(docs, 10, replace=False)}
                     for q in range(4)}
            qrels["q0"][docs[0]] = 1
            run_ = {q: list(r.permutation(docs)[: int(r.integers(1, 40))]) for q in qrels}
            qs = [q for q in qrels if any(g > 0 for g in qrels[q].values())]
            ref_n = sum(ndcg_oracle(run_[q], qrels[q], 10) for q in qs) / len(qs)
            ref_r = sum(len({d for d, g in qrels[q].items() if g > 0} & set(run_[q][:100]))
                        / sum(g > 0 for g in qrels[q].values()) for q in qs) / len(qs)
            worst = max(worst, abs(ndcg_at_k(run_, qrels, 10) - ref_n), abs(recall_at_k(run_, qrels, 100) - ref_r))
        assert worst <= 1e-10, worst
        levels = (4, 8, 16)
        store = EmbeddingStore([str(i) for i in range(200)], r.standard_normal((200, 16)), levels)
        mismatches = 0
        for _ in range(10):
            q = r.standard_normal(16)
            for m in levels:
                got, ref = search(store, q, m, 200), scan_oracle(store, q, m, 200)
                mismatches += [d for d, _ in got] != [d for d, _ in ref]
        assert mismatches == 0, f"{mismatches} ranking mismatches"
        return f"100 instances, max metric diff {worst:.1e}; search == exhaustive scan at m={levels}"

    _verdict(8, run)


@pytest.fixture(scope="module")
def benchmark():
    return run_benchmark(seed=0)


def test_9_synthetic_benchmark(benchmark):
    res = benchmark
    m0 = min(res.cfg.loss.M)
    gain_n = res.ndcg(m0) - res.ndcg(m0, after=False)
    gain_a = res.align_after - res.align_before
    checks = {
        "a": (res.loss_ratio <= MAX_LOSS_RATIO, f"loss ratio {res.loss_ratio:.4f} (<= {MAX_LOSS_RATIO})"),
        "b": (gain_n >= MIN_NDCG_GAIN, f"nDCG@10 m={m0} {res.ndcg(m0, False):.4f}->{res.ndcg(m0):.4f} "
                                       f"(gain >= {MIN_NDCG_GAIN})"),
        "c": (gain_a >= MIN_ALIGN_GAIN, f"alignment {res.align_before:.4f}->{res.align_after:.4f} "
                                        f"(gain >= {MIN_ALIGN_GAIN})"),
        "time": (res.seconds < 300, f"train {res.seconds:.1f}s"),
    }
    ok = all(v for v, _ in checks.values())
    record(9, ok, "; ".join(f"({k}) {'ok' if v else 'MISS'} {msg}" for k, (v, msg) in checks.items()))
    for key, (v, msg) in checks.items():
        assert v, f"({key}) {msg}"


def test_10_persistence(tmp_path):
    def run():
        r = np.random.default_rng(10)
        store = EmbeddingStore([f"doc{i}" for i in range(25)], r.standard_normal((25, 8)), (4, 8))
        store_save(store, tmp_path / "s.tmre")
        back = store_load(tmp_path / "s.tmre")
        assert back.ids == store.ids and back.levels == store.levels
        assert np.array_equal(back.vectors, store.vectors.astype(np.float32))

        model = perturb_adapters(toy_model(perturb=False), 0.2, seed=1)
        save_checkpoint(model, tmp_path / "m.tmrl")
        loaded = load_checkpoint(tmp_path / "m.tmrl")
        for name, arr in model.trainable().items():
            assert np.array_equal(loaded.trainable()[name], arr.astype(np.float32).astype(np.float64)), name
        save_checkpoint(loaded, tmp_path / "m2.tmrl")
        assert (tmp_path / "m.tmrl").read_bytes() == (tmp_path / "m2.tmrl").read_bytes()

        qrels = {"q1": {"d1": 2, "d2": 0}, "q2": {"d9": 1}}
        write_qrels(tmp_path / "q.txt", qrels)
        assert load_qrels(tmp_path / "q.txt") == qrels
        run_ = {"q1": [("d2", 0.75), ("d1", float(r.standard_normal()))], "q2": [("d9", -0.5)]}
        write_run(tmp_path / "r.txt", run_)
        assert load_run(tmp_path / "r.txt") == run_

        caught = 0
        for path, loader in ((tmp_path / "s.tmre", store_load), (tmp_path / "m.tmrl", load_checkpoint)):
            data = path.read_bytes()
            bad = tmp_path / ("bad" + path.suffix)
            corrupt = [(bytes(data[:-40]) + bytes([data[-40] ^ 1]) + data[-39:], DigestMismatchError),
                       (data[:-3], TruncatedFileError), (b"XXXX" + data[4:], FileFormatError)]
            for blob, err in corrupt:
                bad.write_bytes(blob)
                with pytest.raises(err):
                    loader(bad)
                caught += 1
        (tmp_path / "bad.txt").write_text("q1 0 d1 x\n")
        with pytest.raises(InputFormatError):
            load_qrels(tmp_path / "bad.txt")
        with pytest.raises(InputFormatError):
            load_run(tmp_path / "bad.txt")
        return f"store/checkpoint/qrels/run exact; {caught + 2} corrupted controls raised the right error"

    _verdict(10, run)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
