"""Command-line entry point: prepare, train, predict, eval, and decomposer pretraining.

Every command reads one YAML config (``--config``) plus command-line
overrides and writes under the run's output directory. Outputs are keyed by
a content hash of their inputs, so rerunning a command over unchanged
inputs is a no-op unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from . import __version__
from .config import TrainingConfig
from .datamodel import (
    DatasetError,
    HopSupervision,
    MultiHopExample,
    derive_hop_labels,
    load_dataset,
    scan_dataset,
    write_dataset,
)
from .filter import OverlapScorer, RelevantContext, gold_recall, load_hyperlinks, select_context

log = logging.getLogger("stepwise_qa")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train_file: Optional[str] = None
    dev_file: Optional[str] = None
    format: str = "hotpot"
    hyperlinks: Optional[str] = None
    fold_overflow: bool = False  # fold chains longer than K into the final hop instead of failing
    scorer: str = "overlap"  # or a directory written by train-scorer
    backend: str = "tiny"
    backend_options: dict[str, Any] = field(default_factory=dict)
    generator: str = "stub"
    generator_model: Optional[str] = None
    answerer: str = "stub"
    answerer_model: Optional[str] = None
    bias_mitigation: bool = False
    flip_prob: float = 0.0
    max_steps: Optional[int] = None
    qg_corpus: Optional[str] = None
    qa_corpus: Optional[str] = None
    qg_base_model: str = "facebook/bart-large"
    qa_base_model: str = "bert-base-uncased"
    out: str = "runs/default"
    seed: int = 0
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        if self.format not in ("hotpot", "twowiki"):
            raise ConfigError(f"format must be hotpot or twowiki, got {self.format!r}")
        if self.backend == "toy":
            self.backend = "tiny"
        if self.backend not in ("tiny", "pretrained"):
            raise ConfigError(f"backend must be toy/tiny or pretrained, got {self.backend!r}")
        for name in ("generator", "answerer"):
            if getattr(self, name) not in ("stub", "pretrained"):
                raise ConfigError(f"{name} must be stub or pretrained")
        if self.backend == "pretrained" and "name_or_path" not in self.backend_options:
            raise ConfigError("the pretrained backend needs backend_options.name_or_path")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["training"] = self.training.to_dict()
        return d


def _set_path(d: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def load_config(path: Optional[str], overrides: list[str] = (), cli: Optional[dict[str, Any]] = None) -> RunConfig:
    """Read the YAML file, apply ``key=value`` overrides, then explicit CLI flags.

    Relative dataset paths resolve against the config file's directory.
    """
    raw: dict[str, Any] = {}
    base = Path.cwd()
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} not found")
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = p.resolve().parent
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        _set_path(raw, k.strip(), yaml.safe_load(v))
    for k, v in (cli or {}).items():
        if v is not None:
            raw[k] = v
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    training = dict(raw.pop("training", None) or {})
    fmt = raw.get("format", "hotpot")
    seed = raw.get("seed", 0)
    training.setdefault("seed", seed)
    try:
        raw["training"] = TrainingConfig.for_dataset(fmt, **training)
    except TypeError as e:
        raise ConfigError(f"bad training key: {e}") from e
    for key in ("train_file", "dev_file", "hyperlinks", "qg_corpus", "qa_corpus"):
        if raw.get(key):
            raw[key] = str((base / raw[key]) if not Path(raw[key]).is_absolute() else Path(raw[key]))
    scorer = raw.get("scorer")
    if scorer and scorer != "overlap" and not Path(scorer).is_absolute():
        raw["scorer"] = str(base / scorer)
    if raw.get("out") and not Path(raw["out"]).is_absolute() and path:
        raw["out"] = str(base / raw["out"])
    return RunConfig(**raw)


# -- hashing and caches ---------------------------------------------------------------


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(x for x in p.rglob("*") if x.is_file()) if p.is_dir() else [p]
    for f in files:
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def content_key(parts: dict[str, Any]) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:20]


def _read_meta(path: Path) -> dict[str, Any]:
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _splits(cfg: RunConfig) -> dict[str, str]:
    out = {}
    if cfg.train_file:
        out["train"] = cfg.train_file
    if cfg.dev_file:
        out["dev"] = cfg.dev_file
    if not out:
        raise ConfigError("config names neither train_file nor dev_file")
    for name, path in out.items():
        if not Path(path).exists():
            raise ConfigError(f"{name} file {path} does not exist")
    return out


def _scorer(cfg: RunConfig):
    if cfg.scorer == "overlap":
        return OverlapScorer()
    from .scorer import NeuralScorer

    return NeuralScorer.load(cfg.scorer)


def _prepare_key(cfg: RunConfig) -> str:
    parts = {
        "version": __version__,
        "format": cfg.format,
        "max_hops": cfg.training.max_hops,
        "files": {k: file_digest(v) for k, v in _splits(cfg).items()},
        "hyperlinks": file_digest(cfg.hyperlinks) if cfg.hyperlinks else None,
        "scorer": "overlap" if cfg.scorer == "overlap" else file_digest(cfg.scorer),
    }
    return content_key(parts)


def _prepare_dir(cfg: RunConfig) -> Path:
    return cfg.out_dir / "prepare"


# -- commands ----------------------------------------------------------------------


def cmd_prepare(cfg: RunConfig, force: bool = False) -> int:
    """Derive per-hop supervision and select each example's relevant context."""
    pdir = _prepare_dir(cfg)
    key = _prepare_key(cfg)
    meta_path = pdir / "meta.json"
    if not force and _read_meta(meta_path).get("key") == key:
        print(f"prepare: cache hit ({key}); nothing to do")
        return EXIT_OK
    scorer = _scorer(cfg)
    links = load_hyperlinks(cfg.hyperlinks) if cfg.hyperlinks else None
    failures: list[tuple[str, Optional[str], str]] = []
    results: dict[str, list[dict]] = {}
    summary: dict[str, Any] = {}
    for split, path in _splits(cfg).items():
        examples, errors = scan_dataset(path, cfg.format)
        failures += [(split, rid, msg) for rid, msg in errors]
        rows, kept, contexts = [], [], []
        for ex in examples:
            ctx = select_context(ex, scorer, cfg.format, links)
            row: dict[str, Any] = {"_id": ex.id, "context": ctx.source_indices}
            if split == "train":
                try:
                    row["supervision"] = derive_hop_labels(ex, cfg.training.max_hops, cfg.fold_overflow).to_json()
                except ValueError as e:
                    failures.append((split, ex.id, f"cannot derive hop supervision: {e}"))
                    continue
            rows.append(row)
            kept.append(ex)
            contexts.append(ctx)
        results[split] = rows
        with_gold = [(e, c) for e, c in zip(kept, contexts) if e.gold_supports]
        recall = gold_recall([e for e, _ in with_gold], [c for _, c in with_gold]) if with_gold else None
        summary[split] = {"examples": len(rows), "gold_recall": recall}
    if failures:
        for split, rid, msg in failures:
            print(f"prepare: {split}: invalid record {rid if rid is not None else '<no id>'}: {msg}", file=sys.stderr)
        print(f"prepare: {len(failures)} invalid record(s); nothing written", file=sys.stderr)
        return EXIT_ERROR
    for split, rows in results.items():
        _write_jsonl(pdir / f"{split}.jsonl", rows)
    _write_json(meta_path, {"key": key, "seed": cfg.seed, "summary": summary, "config": cfg.to_dict()})
    for split, s in summary.items():
        recall = "n/a" if s["gold_recall"] is None else f"{s['gold_recall']:.4f}"
        print(f"prepare: {split}: {s['examples']} examples, filter gold recall {recall}")
    return EXIT_OK


def _load_prepared(cfg: RunConfig, split: str) -> list[tuple[MultiHopExample, Optional[HopSupervision], RelevantContext]]:
    pdir = _prepare_dir(cfg)
    meta = _read_meta(pdir / "meta.json")
    if not meta:
        raise ConfigError(f"no prepared caches under {pdir}; run prepare first")
    if meta.get("key") != _prepare_key(cfg):
        raise ConfigError("prepared caches are stale for this config; rerun prepare")
    path = _splits(cfg).get(split)
    if path is None:
        raise ConfigError(f"config has no {split} file")
    examples = {ex.id: ex for ex in load_dataset(path, cfg.format)}
    out = []
    for row in _read_jsonl(pdir / f"{split}.jsonl"):
        ex = examples[row["_id"]]
        sup = HopSupervision.from_json(row["supervision"]) if "supervision" in row else None
        out.append((ex, sup, RelevantContext.from_indices(ex, row["context"])))
    return out


def _components(cfg: RunConfig):
    from .decomposer import make_answerer, make_generator

    return make_generator(cfg.generator, cfg.generator_model), make_answerer(cfg.answerer, cfg.answerer_model)


def _train_key(cfg: RunConfig) -> str:
    return content_key({
        "prepare": _prepare_key(cfg),
        "training": cfg.training.to_dict(),
        "backend": cfg.backend,
        "backend_options": cfg.backend_options,
        "generator": [cfg.generator, cfg.generator_model],
        "answerer": [cfg.answerer, cfg.answerer_model],
        "bias_mitigation": cfg.bias_mitigation,
        "flip_prob": cfg.flip_prob,
        "max_steps": cfg.max_steps,
    })


def cmd_train(cfg: RunConfig, force: bool = False, resume: bool = False, stop_after: Optional[int] = None) -> int:
    from .objective import (
        HopRecord,
        TrainingError,
        teacher_history,
        train,
        train_with_bias_mitigation,
    )

    ckpt = cfg.out_dir / "checkpoint"
    tdir = cfg.out_dir / "train"
    key = _train_key(cfg)
    run_meta = _read_meta(tdir / "run.json")
    if not force and not resume and run_meta.get("key") == key and run_meta.get("complete"):
        print(f"train: checkpoint {ckpt} is current ({key}); nothing to do")
        return EXIT_OK
    if resume and run_meta.get("key") not in (None, key):
        raise ConfigError("cannot resume: the config changed since the checkpoint was written")
    items = _load_prepared(cfg, "train")
    train_set = [(ex, sup, ctx) for ex, sup, ctx in items]
    generator, answerer = _components(cfg)
    opts = dict(cfg.backend_options)
    log_path = tdir / "loss_log.jsonl"
    hist_path = tdir / "histories.jsonl"
    tdir.mkdir(parents=True, exist_ok=True)
    if not resume and log_path.exists():
        log_path.unlink()
    try:
        if resume and hist_path.exists():
            histories = {
                r["_id"]: [HopRecord.from_json(h) for h in r["hops"]] for r in _read_jsonl(hist_path)
            }
            result = train(
                train_set, cfg.training, cfg.backend, generator=generator, answerer=answerer,
                histories=histories, backend_options=opts, log_path=log_path, checkpoint_dir=ckpt,
                resume=True, max_steps=cfg.max_steps, stop_after=stop_after,
            )
        elif cfg.bias_mitigation:
            mit = train_with_bias_mitigation(
                train_set, cfg.training, cfg.backend, generator=generator, answerer=answerer,
                backend_options=opts, log_path=log_path, checkpoint_dir=ckpt, flip_prob=cfg.flip_prob,
            )
            result, histories = mit.main, mit.histories
            _write_jsonl(tdir / "repredicted.jsonl", (
                {"_id": i, "hops": [sorted([list(p) for p in hop]) for hop in hops]}
                for i, hops in sorted(mit.repredicted.items())
            ))
            _write_jsonl(tdir / "qg_augmentation.jsonl", (a.to_json() for a in mit.augmentation))
        else:
            histories = {ex.id: teacher_history(ex, sup, generator, answerer) for ex, sup, _ in train_set}
            result = train(
                train_set, cfg.training, cfg.backend, generator=generator, answerer=answerer,
                histories=histories, backend_options=opts, log_path=log_path, checkpoint_dir=ckpt,
                max_steps=cfg.max_steps, stop_after=stop_after,
            )
    except TrainingError as e:
        print(f"train: aborted at step {e.step}: {e}", file=sys.stderr)
        print(json.dumps(e.diagnostics, default=str, sort_keys=True), file=sys.stderr)
        return EXIT_ERROR
    _write_jsonl(hist_path, ({"_id": i, "hops": [h.to_json() for h in hs]} for i, hs in sorted(histories.items())))
    complete = stop_after is None
    _write_json(tdir / "run.json", {"key": key, "seed": cfg.seed, "steps": result.steps, "complete": complete})
    last = result.log[-1]["total"] if result.log else float("nan")
    print(f"train: {result.steps} steps, last loss {last:.4f}, checkpoint {ckpt}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig, checkpoint: Optional[str] = None, split: Optional[str] = None,
                force: bool = False) -> int:
    from .pipeline import PipelineError, run_stepwise, write_predictions
    from .reader import load_checkpoint

    ckpt = Path(checkpoint) if checkpoint else cfg.out_dir / "checkpoint"
    if not (ckpt / "manifest.json").exists():
        print(f"predict: no checkpoint at {ckpt}", file=sys.stderr)
        return EXIT_ERROR
    split = split or ("dev" if cfg.dev_file else "train")
    pdir = cfg.out_dir / "predict"
    key = content_key({
        "checkpoint": file_digest(ckpt / "params.pt"),
        "prepare": _prepare_key(cfg),
        "split": split,
        "training": cfg.training.to_dict(),
        "generator": [cfg.generator, cfg.generator_model],
        "answerer": [cfg.answerer, cfg.answerer_model],
    })
    meta_path = pdir / f"{split}.meta.json"
    if not force and _read_meta(meta_path).get("key") == key:
        print(f"predict: outputs for {split} are current ({key}); nothing to do")
        return EXIT_OK
    params = load_checkpoint(ckpt)
    trained_k = params.config.get("max_hops")
    if trained_k is not None and trained_k != cfg.training.max_hops:
        raise ConfigError(f"checkpoint was trained with K={trained_k}, config has K={cfg.training.max_hops}")
    generator, answerer = _components(cfg)
    preds, traces, failed = [], [], []
    for ex, _, ctx in _load_prepared(cfg, split):
        try:
            p = run_stepwise(ex, ctx, params, generator, answerer, cfg.training)
        except PipelineError as e:
            log.error("predict: %s", e)
            failed.append(ex.id)
            traces.append({"_id": ex.id, "trace": [h.to_json() for h in e.partial_trace], "error": str(e)})
            continue
        preds.append(p)
        traces.append({"_id": ex.id, "trace": [h.to_json() for h in p.trace]})
    pdir.mkdir(parents=True, exist_ok=True)
    write_predictions(preds, pdir / f"{split}.predictions.json")
    _write_jsonl(pdir / f"{split}.traces.jsonl", traces)
    _write_json(meta_path, {"key": key, "seed": cfg.seed, "n": len(traces), "failed": failed})
    print(f"predict: {len(preds)}/{len(traces)} examples -> {pdir / f'{split}.predictions.json'}")
    if failed:
        print(f"predict: {len(failed)} example(s) failed: {', '.join(failed[:10])}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _load_buckets(spec: Optional[str], gold: list[MultiHopExample]) -> Optional[dict[str, str]]:
    if not spec:
        return None
    if spec in ("type", "level"):
        attr = "qtype" if spec == "type" else "level"
        return {ex.id: str(getattr(ex, attr)) for ex in gold if getattr(ex, attr) is not None}
    data = json.loads(Path(spec).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError(f"{spec}: buckets file must map example id to label")
    return {str(k): str(v) for k, v in data.items()}


def cmd_eval(predictions: str, gold: str, format: str = "hotpot", buckets: Optional[str] = None,
             out: Optional[str] = None) -> int:
    from .metrics import evaluate, load_predictions, write_report

    gold_set = load_dataset(gold, format)
    report = evaluate(load_predictions(predictions), gold_set, _load_buckets(buckets, gold_set))
    print(report.render())
    out_path = Path(out) if out else Path(predictions).with_name(Path(predictions).stem + ".report.json")
    write_report(report, out_path)
    return EXIT_OK


def cmd_pretrain_qg(cfg: RunConfig, corpus: Optional[str] = None, augmentation: Optional[str] = None,
                    force: bool = False) -> int:
    """Build generator pretraining pairs; fine-tune when the generator is pretrained."""
    from .decomposer import build_qg_pretraining, finetune_generator, load_simple_corpus

    corpus = corpus or cfg.qg_corpus
    if not corpus:
        raise ConfigError("pretrain-qg needs a simple-question corpus (--corpus or qg_corpus)")
    qdir = cfg.out_dir / "qg"
    aug = Path(augmentation) if augmentation else cfg.out_dir / "train" / "qg_augmentation.jsonl"
    key = content_key({
        "corpus": file_digest(corpus),
        "augmentation": file_digest(aug) if aug.exists() else None,
        "generator": cfg.generator,
        "base": cfg.qg_base_model,
        "seed": cfg.seed,
    })
    if not force and _read_meta(qdir / "meta.json").get("key") == key:
        print(f"pretrain-qg: {qdir} is current; nothing to do")
        return EXIT_OK
    pairs = build_qg_pretraining(load_simple_corpus(corpus))
    if aug.exists():
        extra = [(r["input"], r["target"]) for r in _read_jsonl(aug)]
        log.info("adding %d exposure-bias augmentation pairs", len(extra))
        pairs += extra
    _write_jsonl(qdir / "pairs.jsonl", ({"input": a, "target": b} for a, b in pairs))
    model_dir = None
    if cfg.generator == "pretrained":
        model_dir = str(finetune_generator(pairs, cfg.qg_base_model, qdir / "model", seed=cfg.seed))
    else:
        log.info("stub generator has no parameters; wrote pairs only")
    _write_json(qdir / "meta.json", {"key": key, "seed": cfg.seed, "pairs": len(pairs), "model": model_dir})
    print(f"pretrain-qg: {len(pairs)} pairs" + (f", model {model_dir}" if model_dir else ""))
    return EXIT_OK


def cmd_pretrain_qa(cfg: RunConfig, corpus: Optional[str] = None, force: bool = False) -> int:
    """Reduce the simple-question corpus to single sentences; fine-tune when pretrained."""
    from .decomposer import finetune_answerer, load_simple_corpus

    corpus = corpus or cfg.qa_corpus or cfg.qg_corpus
    if not corpus:
        raise ConfigError("pretrain-qa needs a simple-question corpus (--corpus or qa_corpus)")
    adir = cfg.out_dir / "qa"
    key = content_key({"corpus": file_digest(corpus), "answerer": cfg.answerer, "base": cfg.qa_base_model,
                       "seed": cfg.seed})
    if not force and _read_meta(adir / "meta.json").get("key") == key:
        print(f"pretrain-qa: {adir} is current; nothing to do")
        return EXIT_OK
    records = load_simple_corpus(corpus)
    _write_jsonl(adir / "records.jsonl", (asdict(r) for r in records))
    model_dir = None
    if cfg.answerer == "pretrained":
        model_dir = str(finetune_answerer(records, cfg.qa_base_model, adir / "model", seed=cfg.seed))
    else:
        log.info("stub answerer has no parameters; wrote records only")
    _write_json(adir / "meta.json", {"key": key, "seed": cfg.seed, "records": len(records), "model": model_dir})
    print(f"pretrain-qa: {len(records)} records" + (f", model {model_dir}" if model_dir else ""))
    return EXIT_OK


def cmd_train_scorer(cfg: RunConfig, epochs: int = 3, force: bool = False) -> int:
    from .scorer import train_scorer

    sdir = cfg.out_dir / "scorer"
    if not cfg.train_file:
        raise ConfigError("train-scorer needs train_file")
    key = content_key({"train": file_digest(cfg.train_file), "backend": cfg.backend,
                       "options": cfg.backend_options, "epochs": epochs, "seed": cfg.seed})
    if not force and _read_meta(sdir / "meta.json").get("key") == key:
        print(f"train-scorer: {sdir} is current; nothing to do")
        return EXIT_OK
    examples = load_dataset(cfg.train_file, cfg.format)
    scorer = train_scorer(examples, cfg.backend, epochs=epochs, seed=cfg.seed,
                          backend_options=dict(cfg.backend_options))
    scorer.save(sdir)
    _write_json(sdir / "meta.json", {"key": key, "seed": cfg.seed})
    print(f"train-scorer: saved to {sdir}; set scorer: {sdir} to use it")
    return EXIT_OK


def cmd_synth(out: str, n: int, seed: int, hops: int = 2, distractors: int = 2) -> int:
    from .synthetic import make_corpus

    write_dataset(make_corpus(n, seed=seed, hops=hops, n_distractors=distractors), out)
    print(f"synth: wrote {n} examples to {out}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. training.epochs=3")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--backend", choices=["toy", "tiny", "pretrained"])
    common.add_argument("--force", action="store_true", help="ignore content-hash caches")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stepwise-qa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="derive hop supervision and select contexts")
    t = sub.add_parser("train", parents=[common], help="train the reader")
    t.add_argument("--bias-mitigation", action="store_true", default=None)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-after", type=int, help="stop at this step, keeping the schedule for --resume")
    p = sub.add_parser("predict", parents=[common], help="run stepwise inference")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=["train", "dev"])
    e = sub.add_parser("eval", help="score a prediction file")
    e.add_argument("--predictions", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--format", default="hotpot", choices=["hotpot", "twowiki"])
    e.add_argument("--buckets", help="JSON file mapping id to label, or 'type' / 'level'")
    e.add_argument("--out", help="report path")
    e.add_argument("-v", "--verbose", action="store_true")
    g = sub.add_parser("pretrain-qg", parents=[common], help="pretrain the question generator")
    g.add_argument("--corpus")
    g.add_argument("--augmentation", help="extra (input, target) pairs in JSON lines")
    a = sub.add_parser("pretrain-qa", parents=[common], help="pretrain the single-hop answerer")
    a.add_argument("--corpus")
    s = sub.add_parser("train-scorer", parents=[common], help="train the paragraph relevance scorer")
    s.add_argument("--epochs", type=int, default=3)
    y = sub.add_parser("synth", help="write a synthetic multi-hop dataset")
    y.add_argument("--out", required=True)
    y.add_argument("-n", type=int, default=16)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--hops", type=int, default=2, choices=[2, 3])
    y.add_argument("--distractors", type=int, default=2)
    y.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "eval":
            return cmd_eval(args.predictions, args.gold, args.format, args.buckets, args.out)
        if args.command == "synth":
            return cmd_synth(args.out, args.n, args.seed, args.hops, args.distractors)
        flags = {"out": args.out, "seed": args.seed, "backend": args.backend}
        if args.command == "train":
            flags["bias_mitigation"] = args.bias_mitigation
        cfg = load_config(args.config, args.set, flags)
        if args.command == "prepare":
            return cmd_prepare(cfg, args.force)
        if args.command == "train":
            return cmd_train(cfg, args.force, args.resume, args.stop_after)
        if args.command == "predict":
            return cmd_predict(cfg, args.checkpoint, args.split, args.force)
        if args.command == "pretrain-qg":
            return cmd_pretrain_qg(cfg, args.corpus, args.augmentation, args.force)
        if args.command == "pretrain-qa":
            return cmd_pretrain_qa(cfg, args.corpus, args.force)
        if args.command == "train-scorer":
            return cmd_train_scorer(cfg, args.epochs, args.force)
    except (ConfigError, DatasetError, FileNotFoundError, ValueError) as e:
        print(f"{args.command}: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
