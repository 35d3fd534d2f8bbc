"""Mini-batch training of the adapters and temporal projector."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import EncoderPass, TMRLModel, save_checkpoint, temporal_token_indices
from .errors import ConfigError, EmptyTemporalError, TrainingError
from .losses import ContrastiveBatch, LossConfig, LossResult, tmrl_total
from .numkit import FD_EPS, GRAD_ATOL_FLOOR, GRAD_RTOL, GradCheckReport, compare_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TextItem:
    """A text plus the character ranges of its temporal expressions."""

    text: str
    spans: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class TrainingTriplet:
    """An anchor passage, one positive query and the hard-negative queries.

    ``group`` identifies the source passage; anchors of the same group never
    serve as each other's in-batch negatives.
    """

    anchor: TextItem
    positive: TextItem
    negatives: tuple[TextItem, ...] = ()
    group: int = -1


def locate_spans(text: str, surfaces: Iterable[str]) -> tuple[tuple[int, int], ...]:
    """Character ranges of each surface string in ``text`` (first match, case-insensitive fallback)."""
    out = []
    lower = text.lower()
    for s in surfaces:
        if not s:
            continue
        i = text.find(s)
        if i < 0:
            i = lower.find(s.lower())
        if i >= 0:
            out.append((i, i + len(s)))
    return tuple(sorted(set(out)))


def triplets_from_records(records) -> list[TrainingTriplet]:
    """One passage-anchored triplet per positive query of every record."""
    out = []
    for rec in records:
        anchor = TextItem(rec.query, locate_spans(rec.query, rec.temporal))
        neg = tuple(TextItem(p.text, locate_spans(p.text, p.temporal)) for p in rec.negative_passages)
        for p in rec.positive_passages:
            out.append(TrainingTriplet(anchor, TextItem(p.text, locate_spans(p.text, p.temporal)), neg, rec.query_id))
    return out


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 5
    batch_size: int = 16
    n_neg: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    stop_grad_encoder: bool = False
    checkpoint_every: int = 0
    train_dropout: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if self.n_neg < 0:
            raise ConfigError("hard negatives per anchor must be >= 0")
        if not self.lr >= 0:
            raise ConfigError("learning rate must be non-negative")
        if self.weight_decay < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.adam_eps <= 0:
            raise ConfigError("invalid optimizer hyperparameters")

    def flat(self) -> dict:
        d = asdict(self)
        loss = d.pop("loss")
        d.update({f"loss.{k}": v for k, v in loss.items()})
        return d


@dataclass(frozen=True)
class Batch:
    anchors: tuple[TextItem, ...]
    positives: tuple[TextItem, ...]
    negatives: tuple[tuple[TextItem, ...], ...]
    groups: tuple[int, ...] = ()


def make_batches(triplets: Sequence[TrainingTriplet], cfg: TrainConfig, epoch: int = 0) -> list[Batch]:
    """Seeded shuffle into full batches; the final partial batch is dropped."""
    if len(triplets) < cfg.batch_size:
        raise ConfigError(f"{len(triplets)} triplets cannot fill a batch of {cfg.batch_size}")
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(triplets))
    batches = []
    for b in range(len(triplets) // cfg.batch_size):
        idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
        anchors, positives, negatives, groups = [], [], [], []
        for i in idx:
            tr = triplets[i]
            anchors.append(tr.anchor)
            positives.append(tr.positive)
            groups.append(tr.group if tr.group >= 0 else -1 - int(i))
            if cfg.n_neg == 0:
                negatives.append(())
                continue
            if not tr.negatives:
                raise ConfigError(f"triplet {tr.group} has no hard negatives but n_neg={cfg.n_neg}")
            replace = len(tr.negatives) < cfg.n_neg
            pick = rng.choice(len(tr.negatives), size=cfg.n_neg, replace=replace)
            negatives.append(tuple(tr.negatives[j] for j in pick))
        batches.append(Batch(tuple(anchors), tuple(positives), tuple(negatives), tuple(groups)))
    return batches


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
               cfg: TrainConfig) -> OptimizerState:
    """Decoupled weight decay followed by a bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name in sorted(grads):
        p, g = params[name], grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if cfg.weight_decay:
            p -= cfg.lr * cfg.weight_decay * p
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return state


# --------------------------------------------------------------------------
# batch loss through the model


@dataclass
class BatchOutput:
    result: LossResult
    grads: dict[str, np.ndarray]
    empty_temporal: int


def _temporal_rows(model: TMRLModel, seqs, items: Sequence[TextItem]):
    rows, owners, empties = [], [], 0
    mode = model.config.pooling
    for i, (seq, item) in enumerate(zip(seqs, items)):
        if not item.spans:
            empties += 1
            continue
        try:
            idx = temporal_token_indices(seq, item.spans, mode)
        except EmptyTemporalError:
            empties += 1
            continue
        rows.extend((i, j) for j in idx)
        owners.append(i)
    return rows, owners, empties


def batch_loss(model: TMRLModel, batch: Batch, cfg: TrainConfig, train: bool = False,
               rng: np.random.Generator | None = None, need_grad: bool = True) -> BatchOutput:
    """Encode a batch, evaluate the combined loss and backpropagate to trainables."""
    lc = cfg.loss
    B = len(batch.anchors)
    n = len(batch.negatives[0]) if batch.negatives else 0
    items = list(batch.anchors) + list(batch.positives) + [x for negs in batch.negatives for x in negs]
    seqs = model.tokenize([x.text for x in items])
    enc = EncoderPass(model.params, model.adapters, seqs, train=train, rng=rng)
    E = enc.pooled()
    d = E.shape[1]

    use_temporal = lc.alpha > 0 and model.projector is not None
    T = present = None
    proj_cache = rows = None
    empties = 0
    if use_temporal:
        rows, owners, empties = _temporal_rows(model, seqs, items)
        T = np.ones((len(items), lc.t))
        present = np.zeros(len(items), dtype=bool)
        if rows:
            H_rows = np.stack([enc.hidden[i, j] for i, j in rows])
            out, proj_cache = model.projector.forward(H_rows)
            seg = np.array([i for i, _ in rows])
            sums = np.zeros((len(items), out.shape[1]))
            np.add.at(sums, seg, out)
            counts = np.bincount(seg, minlength=len(items)).astype(np.float64)
            present = counts > 0
            T[present] = sums[present] / counts[present, None]
    kw = {}
    if use_temporal:
        kw = dict(
            anchors_t=T[:B], positives_t=T[B:2 * B], negatives_t=T[2 * B:].reshape(B, n, lc.t),
            anchors_t_present=present[:B], positives_t_present=present[B:2 * B],
            negatives_t_present=present[2 * B:].reshape(B, n),
        )
    groups = np.array(batch.groups) if batch.groups else None
    cb = ContrastiveBatch(E[:B], E[B:2 * B], E[2 * B:].reshape(B, n, d), groups=groups, **kw)
    res = tmrl_total(cb, None, lc)
    if not need_grad:
        return BatchOutput(res, {}, empties)

    g = res.grads
    dE = np.vstack([g["anchors"], g["positives"], g["negatives"].reshape(B * n, d)])
    dH = enc.pool_backward(dE)
    grads = {}
    if model.projector is not None:
        proj_grads = {k: np.zeros_like(v) for k, v in model.projector.arrays().items()}
    if use_temporal and rows:
        dT = np.zeros((len(items), lc.t))
        for key, sl in (("anchors_t", slice(0, B)), ("positives_t", slice(B, 2 * B)), ("negatives_t", slice(2 * B, None))):
            if g.get(key) is not None:
                dT[sl] = g[key].reshape(-1, lc.t)
        seg = np.array([i for i, _ in rows])
        counts = np.bincount(seg, minlength=len(items)).astype(np.float64)
        dout = dT[seg] / counts[seg, None]
        proj_grads, dH_rows = model.projector.backward(dout, proj_cache)
        if not cfg.stop_grad_encoder:
            for (i, j), dh in zip(rows, dH_rows):
                dH[i, j] += dh
    grads.update(enc.backward(dH))
    if model.projector is not None:
        grads.update({f"projector.{k}": v for k, v in proj_grads.items()})
    trainable = model.trainable()
    for name in trainable:
        grads.setdefault(name, np.zeros_like(trainable[name]))
    return BatchOutput(res, grads, empties)


# --------------------------------------------------------------------------
# training loop

CURVE_FIELDS = ("step", "epoch", "mrl", "temp", "dist", "cka", "total")


@dataclass
class TrainResult:
    model: TMRLModel
    curve: list[dict]
    empty_temporal: int
    checkpoints: dict[str, Path] = field(default_factory=dict)

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for row in self.curve:
            by_epoch.setdefault(row["epoch"], []).append(row["total"])
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CURVE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.curve:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text)
    os.replace(tmp, path)


def train(model: TMRLModel, triplets: Sequence[TrainingTriplet], cfg: TrainConfig,
          outdir: str | os.PathLike | None = None) -> TrainResult:
    """Optimize adapters and projector; the base encoder is never written."""
    if model.projector is not None and model.projector.t != cfg.loss.t:
        raise ConfigError(f"projector has t={model.projector.t}, loss config says t={cfg.loss.t}")
    if model.config.d != cfg.loss.d:
        raise ConfigError(f"encoder d={model.config.d} must equal max(M)={cfg.loss.d}")
    params = model.trainable()
    state = OptimizerState()
    drop_rng = np.random.default_rng([cfg.seed, 7919])
    curve: list[dict] = []
    empties = 0
    out = Path(outdir) if outdir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    checkpoints: dict[str, Path] = {}
    step = 0
    for epoch in range(cfg.epochs):
        for batch in make_batches(triplets, cfg, epoch):
            bo = batch_loss(model, batch, cfg, train=cfg.train_dropout, rng=drop_rng)
            comps = bo.result.components
            if not all(np.isfinite(v) for v in comps.values()):
                raise TrainingError(f"loss diverged at epoch {epoch} step {step}: {comps}")
            empties += bo.empty_temporal
            adamw_step(params, bo.grads, state, cfg)
            step += 1
            curve.append({"step": step, "epoch": epoch, **{k: float(comps[k]) for k in CURVE_FIELDS[2:]}})
        log.info("epoch %d mean loss %.6f", epoch, np.mean([r["total"] for r in curve if r["epoch"] == epoch]))
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            path = out / f"epoch{epoch + 1}.unmerged.tmrl"
            save_checkpoint(model, path)
            checkpoints[f"epoch{epoch + 1}"] = path
    result = TrainResult(model, curve, empties, checkpoints)
    if out is not None:
        checkpoints["unmerged"] = out / "checkpoint.unmerged.tmrl"
        checkpoints["merged"] = out / "checkpoint.merged.tmrl"
        save_checkpoint(model, checkpoints["unmerged"])
        save_checkpoint(model.merged(), checkpoints["merged"])
        _atomic_text(out / "loss_curve.csv", result.curve_csv())
    return result


# --------------------------------------------------------------------------
# parameter-level gradient check


def perturb_adapters(model: TMRLModel, scale: float = 0.1, seed: int = 0) -> TMRLModel:
    """Give every up-projection random entries so adapter gradients are non-trivial."""
    rng = np.random.default_rng(seed)
    for name in sorted(model.adapters):
        ad = model.adapters[name]
        ad.B[...] = scale * rng.standard_normal(ad.B.shape)
    return model


def grad_check_model(model: TMRLModel, batch: Batch, cfg: TrainConfig, n_coords: int = 200, seed: int = 0,
                     eps: float = FD_EPS, richardson: bool = False, rtol: float = GRAD_RTOL,
                     corrupt: tuple[str, int] | None = None) -> GradCheckReport:
    """Analytic parameter gradient of the combined loss against central differences.

    Coordinates are sampled uniformly over all trainable entries. A coordinate
    whose stencil changes the distillation loss's piecewise branch is skipped
    and replaced. ``corrupt=(name, flat_index)`` doubles that analytic entry,
    as a negative control, and forces it into the sample.
    """
    params = model.trainable()
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    base = batch_loss(model, batch, cfg, train=False)
    analytic = {k: v.copy() for k, v in base.grads.items()}
    if corrupt is not None:
        analytic[corrupt[0]].reshape(-1)[corrupt[1]] *= 2.0

    def evaluate() -> tuple[float, bytes]:
        r = batch_loss(model, batch, cfg, train=False, need_grad=False).result
        return r.total, r.signature

    steps = (eps / 2, eps) if richardson else (eps,)
    rng = np.random.default_rng(seed)
    order = rng.permutation(int(offsets[-1]))
    if corrupt is not None:
        forced = offsets[names.index(corrupt[0])] + corrupt[1]
        order = np.concatenate([[forced], order[order != forced]])
    a_vals, n_vals, labels = [], [], []
    skipped = 0
    for flat in order:
        if len(a_vals) >= n_coords:
            break
        bi = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, local = names[bi], int(flat - offsets[bi])
        arr = params[name].reshape(-1)
        orig = arr[local]
        est, smooth = [], True
        for h in steps:
            arr[local] = orig + h
            fp, sp = evaluate()
            arr[local] = orig - h
            fm, sm = evaluate()
            arr[local] = orig
            if sp != base.result.signature or sm != base.result.signature:
                smooth = False
                break
            est.append((fp - fm) / (2 * h))
        if not smooth:
            skipped += 1
            continue
        num = (4 * est[0] - est[1]) / 3 if richardson else est[0]
        a_vals.append(analytic[name].reshape(-1)[local])
        n_vals.append(num)
        idx = np.unravel_index(local, params[name].shape)
        labels.append(f"{name}[{','.join(str(int(i)) for i in idx)}]")
    report = compare_gradients(np.array(a_vals), np.array(n_vals), rtol, GRAD_ATOL_FLOOR, labels)
    return GradCheckReport(report.max_rel_error, report.max_abs_error, report.worst_index, report.passed,
                           report.n_checked, report.worst_name, skipped)
