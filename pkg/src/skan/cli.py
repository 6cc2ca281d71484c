"""Command-line entry point: ``skan {synth,extract,train,eval,predict}``.

Settings come from an optional YAML file (``--config``) and are overridden by
flags; ``--set section.key=value`` reaches any field. The merged settings are
written to ``<output_dir>/config.yaml`` by every command that has an output
directory.

Environment variables:
    SKAN_LLM_API_KEY     credential for the remote extractor
    SKAN_EMBED_API_KEY   credential for the remote embedding service
    SKAN_NUMBA=0         use the pure-numpy attention kernels

Exit codes: 0 success, 1 metric assertion failed, 2 bad configuration,
3 I/O or transport failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .cache import ArtifactCache, atomic_write_text, cached_graphs, cached_triplets
from .client import TransportError
from .data import DatasetFormatError, SyntheticSpec, generate_synthetic, load_dataset, save_native
from .embedding import HashedEmbedding, RemoteEncoder
from .evaluation import evidence_ok_from_attention, make_report
from .extractor import LLMClient, parse_triplets
from .gnn import GnnConfig, PackedGraphs
from .graph import build_graph
from .pipeline import OracleExtractor, RemoteExtractor, extract_sample
from .verifier import (
    FEVER_LABELS,
    HOVER_LABELS,
    FusionMode,
    TrainConfig,
    Verifier,
    predict,
    train,
)

log = logging.getLogger("skan")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "data": {"train": None, "dev": None, "test": None, "format": "native_jsonl", "label_set": "hover"},
    "extractor": {
        "kind": "oracle",
        "base_url": None,
        "model": None,
        "path": "/v1/chat/completions",
        "temperature": 0.0,
        "timeout": 60.0,
        "max_in_flight": 4,
    },
    "embedding": {"kind": "hashed", "dim": 64, "seed": 42, "endpoint": None, "model": "deberta-v3-base"},
    "gnn": {"layers": 2, "heads": 8, "leaky_slope": 0.2, "n_max": 20},
    "train": {"learning_rate": 2e-4, "batch_size": 24, "epochs": 30, "seed": 7, "optimizer": "adam"},
    "mode": "full",
    "cache_dir": None,
    "output_dir": "runs/default",
}
LABEL_SETS = {"hover": HOVER_LABELS, "fever": FEVER_LABELS}


class ConfigError(ValueError):
    pass


class AssertionFailed(RuntimeError):
    pass


# -- configuration ---------------------------------------------------------------


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _set_path(cfg: dict, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = yaml.safe_load(raw)


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: top level must be a mapping")
        cfg = _merge(cfg, doc)
    flag_map = {
        "train_path": "data.train",
        "dev_path": "data.dev",
        "data_path": "data.test",
        "format": "data.format",
        "label_set": "data.label_set",
        "extractor": "extractor.kind",
        "mode": "mode",
        "seed": "train.seed",
        "epochs": "train.epochs",
        "batch_size": "train.batch_size",
        "lr": "train.learning_rate",
        "cache_dir": "cache_dir",
        "output_dir": "output_dir",
    }
    for attr, dotted in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            _set_path(cfg, dotted, json.dumps(val))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(cfg, k.strip(), v)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        FusionMode(cfg["mode"])
    except ValueError:
        raise ConfigError(f"unknown mode {cfg['mode']!r}; choose from {[m.value for m in FusionMode]}") from None
    if cfg["data"]["label_set"] not in LABEL_SETS:
        raise ConfigError(f"label_set must be one of {sorted(LABEL_SETS)}")
    if cfg["data"]["format"] not in ("native_jsonl", "fever_jsonl", "hover_jsonl"):
        raise ConfigError(f"unknown data format {cfg['data']['format']!r}")
    ex = cfg["extractor"]
    if ex["kind"] not in ("oracle", "remote"):
        raise ConfigError("extractor.kind must be 'oracle' or 'remote'")
    if ex["kind"] == "remote" and not (ex["base_url"] and ex["model"]):
        raise ConfigError("the remote extractor needs extractor.base_url and extractor.model")
    em = cfg["embedding"]
    if em["kind"] not in ("hashed", "remote"):
        raise ConfigError("embedding.kind must be 'hashed' or 'remote'")
    if em["kind"] == "remote" and not em["endpoint"]:
        raise ConfigError("the remote embedding needs embedding.endpoint")
    for section in ("extractor", "embedding"):
        if any("key" in k.lower() or "token" in k.lower() for k in cfg[section]):
            raise ConfigError("credentials are read from environment variables only")
    try:
        make_gnn_config(cfg)
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for split in ("train", "dev", "test"):
        p = cfg["data"][split]
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"data.{split}: no such file {p}")


def make_gnn_config(cfg: dict) -> GnnConfig:
    g = cfg["gnn"]
    if int(g["n_max"]) < 2:
        raise ValueError("gnn.n_max must be at least 2")
    d = int(cfg["embedding"]["dim"])
    return GnnConfig(layers=int(g["layers"]), heads=int(g["heads"]), dim_in=d, dim_hidden=d,
                     leaky_slope=float(g["leaky_slope"]))


def make_embedding(cfg: dict):
    em = cfg["embedding"]
    if em["kind"] == "hashed":
        return HashedEmbedding(int(em["dim"]), int(em["seed"]))
    return RemoteEncoder(em["endpoint"], int(em["dim"]), em["model"])


def make_extractor(cfg: dict):
    ex = cfg["extractor"]
    if ex["kind"] == "oracle":
        return OracleExtractor()
    client = LLMClient(ex["base_url"], ex["model"], path=ex["path"], temperature=float(ex["temperature"]),
                       timeout=float(ex["timeout"]), max_in_flight=int(ex["max_in_flight"]))
    return RemoteExtractor(client)


def echo_config(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.yaml", yaml.safe_dump(cfg, sort_keys=True))
    return out


# -- shared pipeline steps ----------------------------------------------------------


def _load(cfg: dict, split: str):
    path = cfg["data"][split]
    if path is None:
        raise ConfigError(f"data.{split} is required for this command")
    samples, _ = load_dataset(path, cfg["data"]["format"], LABEL_SETS[cfg["data"]["label_set"]])
    return samples


def _triplets(cfg: dict, samples, extractor):
    if cfg["cache_dir"]:
        out, _ = cached_triplets(samples, extractor, ArtifactCache(cfg["cache_dir"]))
        return out
    return [extract_sample(s, extractor) for s in samples]


def _graphs(cfg: dict, samples, extractor, embed):
    mode = FusionMode(cfg["mode"]).graph_mode
    n_max = int(cfg["gnn"]["n_max"])
    trips = [t[0] for t in _triplets(cfg, samples, extractor)]
    if cfg["cache_dir"]:
        graphs, _ = cached_graphs(samples, trips, extractor.fingerprint(), embed,
                                  ArtifactCache(cfg["cache_dir"]), n_max, mode)
        return graphs
    return [build_graph(s.claim, s.evidence_texts, t, embed, n_max, mode) for s, t in zip(samples, trips)]


def _label_ids(model_labels, samples):
    index = {lab: k for k, lab in enumerate(model_labels)}
    return [index[s.label] for s in samples]


# -- commands --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_samples=args.n_samples,
        hops=args.hops,
        entity_vocab_size=args.entity_vocab,
        relation_vocab_size=args.relation_vocab,
        seed=args.seed,
        distractor_evidence_per_sample=args.distractors,
        id_prefix=args.id_prefix,
    )
    samples = generate_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_native(samples, out)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = load_config(args)
    out = echo_config(cfg)
    extractor = make_extractor(cfg)
    report = {"extractor": extractor.fingerprint(), "splits": {}}
    for split in ("train", "dev", "test"):
        if cfg["data"][split] is None:
            continue
        samples = _load(cfg, split)
        results = [r for _, rs in _triplets(cfg, samples, extractor) for r in rs]
        failed = sum(bool(r.malformed_spans) and not r.triplets for r in results)
        report["splits"][split] = {
            "samples": len(samples),
            "texts": len(results),
            "triplets": sum(len(r.triplets) for r in results),
            "malformed_spans": sum(len(r.malformed_spans) for r in results),
            "texts_without_triplets": sum(not r.triplets for r in results),
            "parse_failure_rate": failed / len(results) if results else 0.0,
        }
    atomic_write_text(out / "extraction_report.json", json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = echo_config(cfg)
    tcfg = TrainConfig(**cfg["train"])
    labels = LABEL_SETS[cfg["data"]["label_set"]]
    extractor, embed = make_extractor(cfg), make_embedding(cfg)
    train_samples = _load(cfg, "train")
    gtrain = PackedGraphs(_graphs(cfg, train_samples, extractor, embed))
    dev = None
    if cfg["data"]["dev"] is not None:
        dev_samples = _load(cfg, "dev")
        dev = (PackedGraphs(_graphs(cfg, dev_samples, extractor, embed)), _label_ids(labels, dev_samples))
    model = Verifier(make_gnn_config(cfg), labels, cfg["mode"], tcfg.seed)

    log_path = out / "train_log.jsonl"
    tmp_log = log_path.with_name(log_path.name + ".tmp")
    with open(tmp_log, "w", encoding="utf-8") as fh:
        def sink(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()

        result = train(model, gtrain, _label_ids(labels, train_samples), tcfg, dev=dev,
                       sample_ids=[s.id for s in train_samples], log_sink=sink)
    tmp_log.replace(log_path)
    model.save(out / "checkpoint.json")
    last = result.log[-1]
    print(f"trained {tcfg.epochs} epochs; final loss {last['loss']:.4f} {last['metrics']}")
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return EXIT_OK


def _read_predictions(path) -> dict[str, str]:
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                preds[str(obj["id"])] = str(obj["label"])
    return preds


def cmd_eval(args) -> int:
    cfg = load_config(args)
    out = echo_config(cfg)
    labels = LABEL_SETS[cfg["data"]["label_set"]]
    samples = _load(cfg, "test")
    gold = [s.label for s in samples]
    extra = {}
    if args.predictions:
        table = _read_predictions(args.predictions)
        missing = [s.id for s in samples if s.id not in table]
        if missing:
            raise ConfigError(f"predictions missing for {len(missing)} samples, e.g. {missing[0]}")
        preds = [table[s.id] for s in samples]
        ok = [True] * len(samples)
        source = "annotation"
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --predictions")
        model = Verifier.load(args.checkpoint)
        cfg["mode"] = model.mode.value
        labels = model.labels
        graphs = _graphs(cfg, samples, make_extractor(cfg), make_embedding(cfg))
        preds, ok = [], []
        for s, g in zip(samples, graphs):
            p = predict(model, g)
            preds.append(p.label)
            if args.evidence_source == "annotation":
                ok.append(True)
            else:
                ok.append(evidence_ok_from_attention(list(p.evidence_attention), s.evidence_ids,
                                                     s.evidence_gold_ids, label=s.label))
        source = args.evidence_source
        extra["checkpoint"] = str(args.checkpoint)
    report = make_report(preds, gold, ok, labels, source, cfg)
    report.extra.update(extra)
    atomic_write_text(out / "eval_report.json", report.dumps())
    print(report.table())
    failures = []
    if args.assert_accuracy is not None and report.accuracy < args.assert_accuracy:
        failures.append(f"accuracy {report.accuracy:.4f} < {args.assert_accuracy}")
    if args.assert_fever is not None and report.fever_score < args.assert_fever:
        failures.append(f"fever_score {report.fever_score:.4f} < {args.assert_fever}")
    if failures:
        raise AssertionFailed("; ".join(failures))
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = load_config(args)
    model = Verifier.load(args.checkpoint)
    cfg["mode"] = model.mode.value
    embed = make_embedding(cfg)
    evidence = list(args.evidence or [])
    if args.triplets is not None:
        triplets, _ = parse_triplets(args.triplets)
    elif cfg["extractor"]["kind"] == "remote":
        from .data import Sample

        sample = Sample("predict", args.claim, [(str(k), t) for k, t in enumerate(evidence)], model.labels[0])
        triplets, _ = extract_sample(sample, make_extractor(cfg))
    else:
        triplets = []  # the oracle has no gold for free text
    g = build_graph(args.claim, evidence, triplets, embed, int(cfg["gnn"]["n_max"]),
                    FusionMode(cfg["mode"]).graph_mode)
    p = predict(model, g)
    doc = {
        "label": p.label,
        "probabilities": {lab: float(x) for lab, x in zip(model.labels, p.probs)},
        "evidence_attention": [float(x) for x in p.evidence_attention],
    }
    if args.explain:
        doc["graph"] = g.to_json() | {"diagnostics": g.diagnostics}
    print(json.dumps(doc, indent=2, ensure_ascii=False))
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any setting, e.g. gnn.heads=4")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--format", choices=["native_jsonl", "fever_jsonl", "hover_jsonl"])
    p.add_argument("--label-set", dest="label_set", choices=sorted(LABEL_SETS))
    p.add_argument("--extractor", choices=["oracle", "remote"])
    p.add_argument("--mode", help="full, no-ere, fully-connected, seq-att or concat")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skan", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS threads; 1 gives bitwise determinism")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic multi-hop corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, default=100)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--entity-vocab", type=int, default=3000)
    p.add_argument("--relation-vocab", type=int, default=20)
    p.add_argument("--distractors", type=int, default=1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--id-prefix", default="syn")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="run triplet extraction over the configured datasets")
    _common(p)
    p.add_argument("--train", dest="train_path")
    p.add_argument("--dev", dest="dev_path")
    p.add_argument("--data", dest="data_path")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="build graphs and train a verifier")
    _common(p)
    p.add_argument("--train", dest="train_path")
    p.add_argument("--dev", dest="dev_path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a predictions file")
    _common(p)
    p.add_argument("--data", dest="data_path")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="JSONL of {id, label}; skips the model")
    p.add_argument("--evidence-source", choices=["attention", "annotation"], default="attention",
                   help="rank evidence by attention, or trust the dataset's evidence as retrieved")
    p.add_argument("--assert-accuracy", type=float)
    p.add_argument("--assert-fever", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="verdict for one claim")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--claim", required=True)
    p.add_argument("--evidence", action="append", help="evidence text; repeat for several")
    p.add_argument("--triplets", help="triplets as '(head, relation, tail) ...' instead of extraction")
    p.add_argument("--explain", action="store_true", help="include the constructed graph")
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except AssertionFailed as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (DatasetFormatError, TransportError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
