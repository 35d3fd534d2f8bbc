"""Seeded end-to-end benchmark: train on twin-year passages, compare before and after."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import EncoderConfig, TMRLModel, encode, project_temporal, select_temporal_tokens
from .losses import LossConfig
from .numkit import prefix_cosine
from .retrieval_eval import EmbeddingStore, EvalReport, matryoshka_sweep
from .synthetic import SyntheticBenchmark, build_benchmark
from .temporal_data import MockGenerationClient, augment_documents, tag_temporal
from .trainer import TrainConfig, TrainResult, train, triplets_from_records

# Baseline measured once with seed 0 and the defaults below (untrained -> trained):
#   nDCG@10 at m=8: 0.2740 -> 0.5030, temporal alignment: -0.1672 -> 0.4100.
# The frozen thresholds are roughly half the measured gains.
MIN_NDCG_GAIN = 0.10
MIN_ALIGN_GAIN = 0.25
MAX_LOSS_RATIO = 0.5


def benchmark_config(seed: int = 0, **train_overrides) -> TrainConfig:
    loss = LossConfig(M=(8, 16, 32, 64), t=8, alpha=0.1, beta=0.1, gamma=0.1)
    return replace(TrainConfig(seed=seed, epochs=5, batch_size=16, n_neg=2, loss=loss), **train_overrides)


def temporal_alignment(model: TMRLModel, bm: SyntheticBenchmark, t: int) -> float:
    """Mean prefix cosine between each query's projected temporal vector and its passage's t-prefix."""
    P = model.embed([text for _, text in bm.documents])
    row = {docid: i for i, (docid, _) in enumerate(bm.documents)}
    vals = []
    for qid, text in bm.queries:
        docid = int(next(iter(bm.qrels[qid])))
        seq = model.tokenizer(text)
        spans = [(s.start, s.end) for s in tag_temporal(text)]
        rows = select_temporal_tokens(encode(model.params, model.adapters, seq), spans, seq, model.config.pooling)
        vals.append(prefix_cosine(project_temporal(model.projector, rows), P[row[docid]], t))
    return float(np.mean(vals))


def evaluate(model: TMRLModel, bm: SyntheticBenchmark, levels) -> EvalReport:
    store = EmbeddingStore([str(d) for d, _ in bm.documents], model.embed([t for _, t in bm.documents]), levels)
    Q = model.embed([q for _, q in bm.queries])
    return matryoshka_sweep(store, [q for q, _ in bm.queries], Q, bm.qrels, levels)


@dataclass
class BenchmarkResult:
    cfg: TrainConfig
    training: TrainResult
    before: EvalReport
    after: EvalReport
    align_before: float
    align_after: float
    seconds: float
    n_triplets: int
    extra: dict = field(default_factory=dict)

    @property
    def epoch_means(self) -> list[float]:
        return self.training.epoch_means()

    @property
    def loss_ratio(self) -> float:
        means = self.epoch_means
        return means[-1] / means[0]

    def ndcg(self, m: int, after: bool = True) -> float:
        return (self.after if after else self.before).by_level()[m].ndcg

    def summary(self) -> str:
        m0 = min(self.cfg.loss.M)
        lines = [
            f"triplets: {self.n_triplets}  steps: {len(self.training.curve)}  time: {self.seconds:.1f}s",
            "epoch mean loss: " + ", ".join(f"{x:.4f}" for x in self.epoch_means),
            f"final/first ratio: {self.loss_ratio:.4f} (target <= {MAX_LOSS_RATIO})",
            f"nDCG@10 at m={m0}: {self.ndcg(m0, False):.4f} -> {self.ndcg(m0):.4f}",
            f"temporal alignment: {self.align_before:.4f} -> {self.align_after:.4f}",
            "", "before training:", str(self.before), "", "after training:", str(self.after),
        ]
        return "\n".join(lines)


def run_benchmark(seed: int = 0, n_passages: int = 200, d: int = 64, outdir=None,
                  **train_overrides) -> BenchmarkResult:
    cfg = benchmark_config(seed, **train_overrides)
    bm = build_benchmark(n_passages, seed=seed)
    records, _ = augment_documents(bm.documents, MockGenerationClient())
    triplets = triplets_from_records(records)
    model = TMRLModel.create(EncoderConfig(d=d), t=cfg.loss.t, seed=seed)
    levels = cfg.loss.M
    before = evaluate(model, bm, levels)
    align0 = temporal_alignment(model, bm, cfg.loss.t)
    t0 = time.perf_counter()
    result = train(model, triplets, cfg, outdir)
    seconds = time.perf_counter() - t0
    trained = result.model
    after = evaluate(trained, bm, levels)
    align1 = temporal_alignment(trained, bm, cfg.loss.t)
    return BenchmarkResult(cfg, result, before, after, align0, align1, seconds, len(triplets))
