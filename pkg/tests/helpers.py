"""Shared toy fixtures: a d=32 encoder, t=8 projector and an augmented synthetic batch."""

from functools import lru_cache

from tmrl.encoder import EncoderConfig, TMRLModel
from tmrl.losses import LossConfig
from tmrl.synthetic import build_benchmark
from tmrl.temporal_data import MockGenerationClient, augment_documents
from tmrl.trainer import TrainConfig, make_batches, perturb_adapters, triplets_from_records


@lru_cache(maxsize=None)
def toy_triplets(n_passages: int = 40, seed: int = 0):
    bm = build_benchmark(n_passages, seed=seed)
    records, _ = augment_documents(bm.documents, MockGenerationClient())
    return tuple(triplets_from_records(records))


def toy_config(alpha=0.1, beta=0.1, gamma=0.1, **kw) -> TrainConfig:
    loss = LossConfig(M=(8, 16, 32), t=8, tau=0.05, alpha=alpha, beta=beta, gamma=gamma, k=4)
    base = dict(seed=0, epochs=1, batch_size=8, n_neg=2, lr=1e-3, loss=loss)
    base.update(kw)
    return TrainConfig(**base)


def toy_model(pooling="mean", seed=0, perturb=True) -> TMRLModel:
    cfg = EncoderConfig(vocab_size=512, d=32, max_len=32, n_layers=2, pooling=pooling)
    model = TMRLModel.create(cfg, t=8, seed=seed)
    return perturb_adapters(model, 0.1, seed + 11) if perturb else model


def toy_batch(cfg: TrainConfig):
    return make_batches(list(toy_triplets()), cfg)[0]
