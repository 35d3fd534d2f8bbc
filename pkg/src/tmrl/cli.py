"""Command-line entry point: ``tmrl <command> ...``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import retrieval_eval as rv
from .config import RunConfig, RunManifest, load_config
from .encoder import TMRLModel, load_checkpoint
from .errors import ConfigError, InputFormatError, NumericError, TMRLError
from .temporal_data import (
    HTTPGenerationClient,
    MockGenerationClient,
    SplitStats,
    augment_documents,
    parse_record,
    split_passage,
    tag_temporal,
)
from .trainer import grad_check_model, make_batches, perturb_adapters, train, triplets_from_records

log = logging.getLogger("tmrl")


# --------------------------------------------------------------------------
# io helpers


@contextlib.contextmanager
def atomic_output(path):
    """Yield a temporary sibling path; it replaces ``path`` only on success."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise ConfigError(f"output directory {path.parent} does not exist")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".part")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


@contextlib.contextmanager
def atomic_directory(path, force: bool = False):
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} exists and is not empty (use --force)")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}.", suffix=".part"))
    try:
        yield tmp
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def _open_input(path):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc.strerror}") from None


def read_jsonl(path, required: tuple[str, ...] = ()) -> list[tuple[int, dict]]:
    out = []
    with _open_input(path) as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputFormatError(f"{path}:{no}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or any(k not in obj for k in required):
                raise InputFormatError(f"{path}:{no}: expected an object with fields {list(required)}")
            out.append((no, obj))
    return out


def read_corpus(path) -> list[tuple[int, str]]:
    docs = []
    for no, obj in read_jsonl(path, ("docid", "text")):
        try:
            docid = int(obj["docid"])
        except (TypeError, ValueError):
            raise InputFormatError(f"{path}:{no}: docid must be an integer") from None
        if not isinstance(obj["text"], str):
            raise InputFormatError(f"{path}:{no}: text must be a string")
        docs.append((docid, obj["text"]))
    return docs


def read_records(path):
    records = []
    with _open_input(path) as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line))
            except ValueError as exc:
                raise InputFormatError(f"{path}:{no}: {exc}") from None
    return records


def read_vectors(path, key: str = "docid") -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    for no, obj in read_jsonl(path, (key, "vector")):
        vec = obj["vector"]
        if not isinstance(vec, list) or not vec or not all(isinstance(v, (int, float)) for v in vec):
            raise InputFormatError(f"{path}:{no}: vector must be a non-empty list of numbers")
        if rows and len(vec) != len(rows[0]):
            raise InputFormatError(f"{path}:{no}: vector has dim {len(vec)}, expected {len(rows[0])}")
        ids.append(str(obj[key]))
        rows.append(vec)
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), len(rows[0]) if rows else 0)


def _levels(arg: str | None, cfg: RunConfig, d: int | None = None) -> tuple[int, ...]:
    if arg:
        try:
            return tuple(int(x) for x in arg.split(","))
        except ValueError:
            raise ConfigError(f"--levels must be comma-separated integers, got {arg!r}") from None
    if d is not None and d != cfg.loss.d:
        return (d,)
    return cfg.loss.M


def _manifest(args, cfg: RunConfig | None = None) -> RunManifest:
    m = RunManifest(command=" ".join([args.command] + getattr(args, "_argv", [])))
    if cfg is not None:
        m.config = cfg.flat()
        m.seed = cfg.train.seed
    return m


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or [])


# --------------------------------------------------------------------------
# commands


def cmd_tag(args) -> int:
    fh = _open_input(args.input)
    errors = 0
    with fh, atomic_output(args.output) as tmp, open(tmp, "w", encoding="utf-8") as out:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docid, text = obj["docid"], obj["text"]
                if not isinstance(text, str):
                    raise TypeError("text must be a string")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                errors += 1
                print(f"{args.input}:{no}: skipped ({exc})", file=sys.stderr)
                continue
            spans = [{
                "text": s.text, "start": s.start, "end": s.end, "relative": s.is_relative,
                "interval": None if s.interval is None else [s.interval.start.isoformat(), s.interval.end.isoformat()],
            } for s in tag_temporal(text)]
            out.write(json.dumps({"docid": docid, "spans": spans}, ensure_ascii=False) + "\n")
    m = _manifest(args)
    m.add_input("input", args.input)
    m.add_output("output", args.output)
    m.extra["skipped_lines"] = str(errors)
    m.write(f"{args.output}.manifest")
    return 0


def cmd_split(args) -> int:
    docs = read_corpus(args.input)
    stats = SplitStats()
    with atomic_output(args.output) as tmp, open(tmp, "w", encoding="utf-8") as out:
        for docid, text in docs:
            for i, p in enumerate(split_passage(text, stats)):
                out.write(json.dumps({"docid": docid, "passage": i, "text": p.text, "temporal": [p.span.text]},
                                     ensure_ascii=False) + "\n")
    print(f"sentences: {stats.sentences}\npassages: {stats.passages}\n"
          f"discarded (multiple expressions): {stats.discarded_multi}\n"
          f"discarded (relative expression): {stats.discarded_relative}")
    m = _manifest(args)
    m.add_input("input", args.input)
    m.add_output("output", args.output)
    m.write(f"{args.output}.manifest")
    return 0


def cmd_augment(args) -> int:
    if args.endpoint is not None:
        if args.endpoint:
            os.environ.setdefault("TMRL_GEN_ENDPOINT", args.endpoint)
        client = HTTPGenerationClient.from_env()
    else:
        client = MockGenerationClient()
    docs = read_corpus(args.corpus)
    records, report = augment_documents(docs, client, jobs=args.jobs)
    with atomic_output(args.output) as tmp, open(tmp, "w", encoding="utf-8") as out:
        for rec in records:
            out.write(rec.to_json() + "\n")
    print(report)
    for v in report.violations:
        print(f"violation: {v}", file=sys.stderr)
    m = _manifest(args)
    m.config = {"client": "http" if args.endpoint is not None else "mock", "jobs": str(args.jobs)}
    m.add_input("corpus", args.corpus)
    m.add_output("output", args.output)
    m.extra.update({"records": str(len(records)), "violations": str(len(report.violations)),
                    "rejected_lines": str(len(report.rejected_lines))})
    m.write(f"{args.output}.manifest")
    return 0


def build_model(cfg: RunConfig) -> TMRLModel:
    mc = cfg.model
    return TMRLModel.create(mc.encoder(), cfg.loss.t, mc.lora_rank, mc.lora_scale, mc.lora_dropout, mc.seed)


def cmd_train(args) -> int:
    cfg = _config(args)
    records = read_records(args.data)
    triplets = triplets_from_records(records)
    model = build_model(cfg)
    with atomic_directory(args.outdir, args.force) as tmp:
        result = train(model, triplets, cfg.train, tmp)
        (tmp / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
        m = _manifest(args, cfg)
        m.add_input("data", args.data)
        for name, path in sorted(result.checkpoints.items()):
            m.add_output(name, path)
        m.add_output("loss_curve", tmp / "loss_curve.csv")
        means = result.epoch_means()
        m.extra.update({"steps": str(len(result.curve)), "triplets": str(len(triplets)),
                        "empty_temporal": str(result.empty_temporal),
                        "epoch_mean_total": ",".join(repr(x) for x in means)})
        manifest_text = m.render().replace(str(tmp), str(args.outdir))
        (tmp / "manifest.ini").write_text(manifest_text, encoding="utf-8")
    print(f"trained {len(result.curve)} steps; epoch mean loss: " + ", ".join(f"{x:.4f}" for x in means))
    print(f"wrote {args.outdir}")
    return 0


def _gradcheck_batch(cfg: RunConfig, data: str | None):
    if data:
        records = read_records(data)
    else:
        from .synthetic import build_benchmark

        bm = build_benchmark(max(2 * cfg.train.batch_size, 20), seed=cfg.train.seed)
        records, _ = augment_documents(bm.documents, MockGenerationClient())
    batches = make_batches(triplets_from_records(records), cfg.train)
    return batches[0]


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    model = perturb_adapters(build_model(cfg), 0.1, cfg.model.seed + 11)
    batch = _gradcheck_batch(cfg, args.data)
    report = grad_check_model(model, batch, cfg.train, n_coords=args.coords, seed=cfg.train.seed,
                              eps=args.eps, richardson=args.richardson)
    print(report)
    if args.manifest:
        m = _manifest(args, cfg)
        if args.data:
            m.add_input("data", args.data)
        m.extra.update({"passed": str(report.passed), "max_rel_error": repr(report.max_rel_error),
                        "worst": report.worst_name})
        m.write(args.manifest)
    if not report.passed:
        raise NumericError(f"gradient check failed at {report.worst_name}")
    return 0


def _embed_texts(model: TMRLModel, texts: list[str], jobs: int) -> np.ndarray:
    chunk = 64
    parts = [texts[i:i + chunk] for i in range(0, len(texts), chunk)]
    if jobs > 1 and len(parts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            embs = list(ex.map(model.embed, parts))
    else:
        embs = [model.embed(p) for p in parts]
    return np.vstack(embs) if embs else np.zeros((0, model.config.d))


def cmd_embed(args) -> int:
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    docs = read_corpus(args.corpus)
    vecs = _embed_texts(model, [t for _, t in docs], args.jobs)
    store = rv.EmbeddingStore([str(d) for d, _ in docs], vecs, _levels(args.levels, cfg, model.config.d))
    with atomic_output(args.output) as tmp:
        rv.store_save(store, tmp)
    m = _manifest(args, cfg)
    m.add_input("checkpoint", args.checkpoint)
    m.add_input("corpus", args.corpus)
    m.add_output("store", args.output)
    m.extra["store_digest"] = store.digest
    m.write(f"{args.output}.manifest")
    print(f"stored {store.n} x {store.d} embeddings, levels {','.join(map(str, store.levels))}")
    return 0


def cmd_index(args) -> int:
    cfg = _config(args)
    ids, vecs = read_vectors(args.vectors)
    store = rv.EmbeddingStore(ids, vecs, _levels(args.levels, cfg, vecs.shape[1] if len(ids) else None))
    with atomic_output(args.output) as tmp:
        rv.store_save(store, tmp)
    m = _manifest(args, cfg)
    m.add_input("vectors", args.vectors)
    m.add_output("store", args.output)
    m.extra["store_digest"] = store.digest
    m.write(f"{args.output}.manifest")
    print(f"indexed {store.n} vectors of dim {store.d}")
    return 0


def _query_vectors(path, checkpoint: str | None, jobs: int) -> tuple[list[str], np.ndarray]:
    rows = read_jsonl(path, ("qid",))
    if all("vector" in obj for _, obj in rows):
        return read_vectors(path, key="qid")
    if checkpoint is None:
        raise ConfigError("queries carry text but no --checkpoint was given to embed them")
    for no, obj in rows:
        if not isinstance(obj.get("text"), str):
            raise InputFormatError(f"{path}:{no}: query needs a 'text' string or a 'vector'")
    model = load_checkpoint(checkpoint)
    ids = [str(obj["qid"]) for _, obj in rows]
    return ids, _embed_texts(model, [obj["text"] for _, obj in rows], jobs)


def cmd_search(args) -> int:
    store = rv.store_load(args.store)
    qids, Q = _query_vectors(args.queries, args.checkpoint, args.jobs)
    m_level = args.m or store.d
    run, _ = rv.run_queries(store, qids, Q, m_level, args.topk, args.jobs)
    text = rv.format_run(run, args.tag)
    if args.output:
        with atomic_output(args.output) as tmp:
            tmp.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    manifest_path = f"{args.output}.manifest" if args.output else args.manifest
    if manifest_path:
        m = _manifest(args)
        m.config = {"m": str(m_level), "topk": str(args.topk)}
        m.add_input("store", args.store)
        m.add_input("queries", args.queries)
        if args.output:
            m.add_output("run", args.output)
        m.write(manifest_path)
    return 0


def cmd_eval(args) -> int:
    run = rv.load_run(args.run)
    qrels = rv.load_qrels(args.qrels)
    ndcg = rv.ndcg_at_k(run, qrels, args.k, args.linear_gain)
    recall = rv.recall_at_k(run, qrels, args.recall_k)
    n = sum(1 for q in qrels.values() if any(g > 0 for g in q.values()))
    print(f"ndcg@{args.k}\t{ndcg:.6f}\nrecall@{args.recall_k}\t{recall:.6f}\nqueries\t{n}")
    if args.manifest:
        m = _manifest(args)
        m.add_input("run", args.run)
        m.add_input("qrels", args.qrels)
        m.extra.update({f"ndcg@{args.k}": repr(ndcg), f"recall@{args.recall_k}": repr(recall)})
        m.write(args.manifest)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    store = rv.store_load(args.store)
    qids, Q = _query_vectors(args.queries, args.checkpoint, args.jobs)
    qrels = rv.load_qrels(args.qrels)
    levels = _levels(args.levels, cfg, store.d) if args.levels else store.levels
    report = rv.matryoshka_sweep(store, qids, Q, qrels, levels, cfg.eval.ndcg_k, cfg.eval.recall_k,
                                 cfg.eval.linear_gain, args.jobs)
    with atomic_output(args.output) as tmp:
        tmp.write_text(report.to_csv(), encoding="utf-8")
    print(report)
    m = _manifest(args, cfg)
    m.add_input("store", args.store)
    m.add_input("queries", args.queries)
    m.add_input("qrels", args.qrels)
    m.add_output("csv", args.output)
    m.write(f"{args.output}.manifest")
    return 0


# --------------------------------------------------------------------------
# parser


def _add_config(p):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a configuration value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmrl", description="Temporal Matryoshka embedding toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tag", help="tag temporal expressions per document")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("split", help="split documents into single-expression passages")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="split, generate, filter and validate training records")
    p.add_argument("corpus")
    p.add_argument("output")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--mock", action="store_true", help="deterministic offline generator (default)")
    mode.add_argument("--endpoint", nargs="?", const="", default=None,
                      help="live HTTP generator; URL from the argument or $TMRL_GEN_ENDPOINT")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train adapters and projector")
    p.add_argument("data", help="augmentation records (JSONL)")
    p.add_argument("outdir")
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    _add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full parameter gradient")
    p.add_argument("--data", help="augmentation records; default: synthetic benchmark subset")
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--richardson", action="store_true")
    p.add_argument("--manifest")
    _add_config(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("embed", help="embed a corpus into a store")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("output")
    p.add_argument("--levels")
    p.add_argument("--jobs", type=int, default=1)
    _add_config(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build a store from JSONL vectors")
    p.add_argument("vectors")
    p.add_argument("output")
    p.add_argument("--levels")
    _add_config(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="rank store documents for each query")
    p.add_argument("store")
    p.add_argument("queries", help="JSONL with qid and vector, or qid and text plus --checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--m", type=int)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--tag", default="tmrl")
    p.add_argument("--output")
    p.add_argument("--manifest")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score a run against qrels")
    p.add_argument("run")
    p.add_argument("qrels")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--recall-k", type=int, default=100)
    p.add_argument("--linear-gain", action="store_true")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="metrics at every truncation level")
    p.add_argument("store")
    p.add_argument("queries")
    p.add_argument("qrels")
    p.add_argument("output", help="CSV path")
    p.add_argument("--checkpoint")
    p.add_argument("--levels")
    p.add_argument("--jobs", type=int, default=1)
    _add_config(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv[1:]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return ConfigError.exit_code
    try:
        return args.func(args)
    except TMRLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputFormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
