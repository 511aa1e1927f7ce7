"""``wadcmsn`` command line: gen-synth, embed, train, eval, retrieve.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags (flags win). Unknown config keys are
rejected and every input path is checked before any computation starts.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, gen_synthetic, load_features, make_split, write_synthetic
from .errors import (CheckpointError, ConfigError, NumericError, ParseError, ShapeError,
                     ValidationError)
from .losses import ADVERSARIAL_MODES, LossWeights
from .model import Architecture
from .retrieval import (METRICS, build_index, encode, evaluate, retrieve,
                        write_codes_csv, write_rankings_csv)
from .semantics import MEASURES, SemanticTable, Taxonomy, TextEmbeddingTable, build_semantic_table
from .trainer import TrainConfig, checkpoint_load, checkpoint_manifest, checkpoint_save, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
SYNTH_KEYS = {f.name for f in fields(SyntheticSpec)}
PATH_KEYS = {"features", "taxonomy", "text", "semantic", "checkpoint", "out"}
OPTION_KEYS = {
    "measure", "grid", "code_dim", "combiner_steps",          # embed
    "validate", "no_wd", "no_cyc", "no_cls", "no_iml",        # train
    "metric", "k", "n", "map_by", "rankings", "codes",        # eval / retrieve
    "queries", "gallery",
}
KNOWN_KEYS = TRAIN_KEYS | SYNTH_KEYS | PATH_KEYS | OPTION_KEYS

DEFAULTS = {
    "gen-synth": {"seed": 0, "out": "."},
    "embed": {"seed": 0, "out": ".", "measure": "jc", "grid": False, "code_dim": 64,
              "combiner_steps": 2000},
    "train": {"seed": 0, "out": ".", "validate": False, "no_wd": False, "no_cyc": False,
              "no_cls": False, "no_iml": False},
    "eval": {"seed": 0, "out": ".", "metric": "euclidean", "k": 100, "n": None,
             "map_by": "class", "rankings": False, "codes": False},
    "retrieve": {"seed": 0, "out": ".", "k": 10, "metric": "euclidean", "gallery": "auto"},
}
REQUIRED_INPUTS = {
    "gen-synth": (),
    "embed": ("features", "taxonomy", "text"),
    "train": ("features", "semantic"),
    "eval": ("checkpoint", "features"),
    "retrieve": ("checkpoint", "features"),
}


# ---------------------------------------------------------------------------
# Settings


def load_config_file(path):
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = set(payload) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return payload


def resolve_settings(command, args):
    """Defaults <- config file <- flags."""
    settings = dict(DEFAULTS[command])
    flags = vars(args).copy()
    flags.pop("command", None)
    config_path = flags.pop("config", None)
    if config_path is not None:
        settings.update(load_config_file(config_path))
    settings.update(flags)
    return settings


def _input_paths(settings, command):
    missing = [k for k in REQUIRED_INPUTS[command] if not settings.get(k)]
    if missing:
        raise ConfigError(f"{command} needs {', '.join('--' + m for m in missing)}")
    paths = []
    for key in REQUIRED_INPUTS[command]:
        values = settings[key] if isinstance(settings[key], list) else [settings[key]]
        for v in values:
            p = Path(v)
            if not p.is_file():
                raise ConfigError(f"--{key}: no such file {v}")
            paths.append(p.resolve())
    return paths


def _outputs(settings, inputs, names):
    """Output paths inside ``out``; refuses to overwrite any input file."""
    out = Path(settings["out"])
    targets = [out / n for n in names]
    clash = [str(t) for t in targets if t.resolve() in inputs]
    if clash:
        raise ConfigError(f"refusing to overwrite input file(s) {clash}; choose another --out")
    out.mkdir(parents=True, exist_ok=True)
    return targets


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _split_from_file(path):
    records = load_features(path)
    if not records:
        raise ValidationError(f"{path}: no feature records")
    train_cls = {r.cls for r in records if r.split == "train"}
    test_cls = {r.cls for r in records if r.split == "test"}
    both = train_cls & test_cls
    if both:
        raise ValidationError(f"{path}: classes appear in both splits: {sorted(both)}")
    return make_split(records, test_cls)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_synth(settings):
    _input_paths(settings, "gen-synth")
    spec = SyntheticSpec(**{k: settings[k] for k in SYNTH_KEYS if k in settings})
    data = gen_synthetic(spec, seed=settings["seed"])
    paths = write_synthetic(data, settings["out"])
    written = [paths["features"], paths["taxonomy"], *paths["embeddings"]]
    for p in written:
        print(p)
    return written


def cmd_embed(settings):
    inputs = _input_paths(settings, "embed")
    texts = settings["text"] if isinstance(settings["text"], list) else [settings["text"]]
    if settings["grid"]:
        measures = list(MEASURES)
    else:
        if settings["measure"] not in MEASURES:
            raise ConfigError(f"--measure must be one of {MEASURES}")
        if len(texts) != 1:
            raise ConfigError("pass exactly one --text unless --grid is given")
        measures = [settings["measure"]]
    combos = [(t, m) for t in texts for m in measures]
    if settings["grid"]:
        names = [f"semantic_{Path(t).stem}_{m}.json" for t, m in combos]
        if len(set(names)) != len(names):
            raise ConfigError("--grid needs text files with distinct names")
    else:
        names = ["semantic.json"]
    targets = _outputs(settings, inputs, names)

    split = _split_from_file(settings["features"])
    tax = Taxonomy.load(settings["taxonomy"])
    classes = split.seen_classes + split.unseen_classes
    for (text_path, measure), target in zip(combos, targets):
        table, _ = build_semantic_table(
            classes, split.seen_classes, TextEmbeddingTable.load(text_path), tax, measure,
            code_dim=settings["code_dim"], steps=settings["combiner_steps"],
            seed=settings["seed"], text_source=Path(text_path).name)
        table.save(target)
        print(target)
    return targets


def _train_config(settings, feature_dim, code_dim):
    raw = {k: settings[k] for k in TRAIN_KEYS if k in settings}
    try:
        weights = vars(LossWeights(**raw.get("weights", {})))
        arch = dict(raw.get("architecture", {}))
        for flag, term in (("no_cyc", "cyc"), ("no_cls", "cls"), ("no_iml", "iml")):
            if settings[flag]:
                weights[term] = 0.0
        raw["weights"] = LossWeights(**weights)
        if settings["no_wd"]:
            raw["adversarial"] = "standard"
        if raw.get("adversarial", "wasserstein") not in ADVERSARIAL_MODES:
            raise ConfigError(f"adversarial must be one of {ADVERSARIAL_MODES}")
        for key, have in (("feature_dim", feature_dim), ("code_dim", code_dim)):
            if arch.setdefault(key, have) != have:
                raise ConfigError(f"architecture.{key}={arch[key]} but the data are {have}-D")
        raw["architecture"] = Architecture(**arch)
        return TrainConfig(**raw)
    except ConfigError:
        raise
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"bad training settings: {exc}") from exc


def cmd_train(settings):
    inputs = _input_paths(settings, "train")
    targets = _outputs(settings, inputs, ["checkpoint.ckpt", "train_log.json"])
    split = _split_from_file(settings["features"])
    semantic = SemanticTable.load(settings["semantic"])
    config = _train_config(settings, split.train[0].feature.size, semantic.code_dim)
    validation = None
    if settings["validate"]:
        validation = (split.records("test", "sketch"), split.records("test", "image"))
    bundle, log = train(split, semantic, config, validation)
    extra = {"train_config": config.as_dict(), "seen_classes": split.seen_classes,
             "semantic_provenance": semantic.provenance}
    checkpoint_save(bundle, targets[0], extra)
    log.save(targets[1])
    if log.iterations:
        first, last = log.iterations[0], log.iterations[-1]
        print(f"ps_total {first['ps_total']:.4f} (iter {first['iteration']}) -> "
              f"{last['ps_total']:.4f} (iter {last['iteration']})")
    for t in targets:
        print(t)
    return targets


def _load_for_eval(settings, command):
    inputs = _input_paths(settings, command)
    if settings["metric"] not in METRICS:
        raise ConfigError(f"--metric must be one of {METRICS}")
    bundle = checkpoint_load(settings["checkpoint"])
    records = load_features(settings["features"])
    dims = {r.feature.size for r in records}
    if dims and dims != {bundle.feature_dim}:
        raise ShapeError(f"checkpoint expects {bundle.feature_dim}-D features, "
                         f"{settings['features']} has {sorted(dims)}-D")
    return inputs, bundle, records


def cmd_eval(settings):
    if settings["map_by"] not in ("class", "query"):
        raise ConfigError("--map-by must be 'class' or 'query'")
    if settings["k"] < 1 or (settings["n"] is not None and settings["n"] < 1):
        raise ConfigError("k and n must be >= 1")
    inputs, bundle, records = _load_for_eval(settings, "eval")
    names = ["report.json"]
    if settings["rankings"]:
        names.append("rankings.csv")
    if settings["codes"]:
        names.append("codes.csv")
    targets = dict(zip(names, _outputs(settings, inputs, names)))
    sketches = [r for r in records if r.split == "test" and r.modality == "sketch"]
    images = [r for r in records if r.split == "test" and r.modality == "image"]
    if not sketches or not images:
        raise ValidationError(f"{settings['features']}: test split needs sketches and images")
    ev = evaluate(bundle, sketches, images, k=settings["k"], n=settings["n"],
                  metric=settings["metric"])
    echo = {
        "eval": {k: settings[k] for k in ("checkpoint", "features", "metric", "k", "n",
                                         "map_by", "seed")},
        "train": checkpoint_manifest(settings["checkpoint"])["extra"].get("train_config"),
    }
    report = ev.report(echo, settings["map_by"])
    _write_json(targets["report.json"], report)
    if "rankings.csv" in targets:
        write_rankings_csv(ev.rankings, targets["rankings.csv"])
    if "codes.csv" in targets:
        codes = np.vstack([encode(bundle.G_sk, sketches), encode(bundle.G_im, images)])
        write_codes_csv(sketches + images, codes, targets["codes.csv"])
    k = settings["k"]
    print(f"mAP {report['mAP']:.4f}  prec@{k} {report[f'prec@{k}']:.4f}  "
          f"queries {report['n_queries']}")
    for t in targets.values():
        print(t)
    return report


def cmd_retrieve(settings):
    queries = settings.get("queries") or []
    if not queries:
        raise ConfigError("retrieve needs at least one --query ID")
    if settings["k"] < 1:
        raise ConfigError("k must be >= 1")
    if settings["gallery"] not in GALLERIES:
        raise ConfigError(f"--gallery must be one of {GALLERIES}")
    inputs, bundle, records = _load_for_eval(settings, "retrieve")
    sketch_by_id = {r.id: r for r in records if r.modality == "sketch"}
    unknown = [q for q in queries if q not in sketch_by_id]
    if unknown:
        raise ConfigError(f"unknown query id(s) {unknown}; valid sketch ids: "
                          + ", ".join(sorted(sketch_by_id)))
    (target,) = _outputs(settings, inputs, ["retrieval.csv"])
    indexes, rankings = {}, []
    for q in queries:
        query = sketch_by_id[q]
        part = query.split if settings["gallery"] == "auto" else settings["gallery"]
        if part not in indexes:
            images = [r for r in records if r.modality == "image" and part in ("all", r.split)]
            if not images:
                raise ValidationError(f"no {part} images to search")
            indexes[part] = build_index(bundle, images)
        rankings.append(retrieve(bundle, indexes[part], query, k=settings["k"],
                                 metric=settings["metric"]))
    write_rankings_csv(rankings, target)
    for r in rankings:
        hits = int(np.count_nonzero(r.relevant))
        print(f"{r.query_id} ({r.query_class}): {hits}/{len(r.ids)} relevant in top {len(r.ids)}")
    print(target)
    return rankings


GALLERIES = ("auto", "test", "train", "all")

COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "embed": cmd_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
}


# ---------------------------------------------------------------------------
# Argument parsing


def _flag(parser, *names, **kw):
    """Options default to 'absent' so that only explicit flags override config."""
    parser.add_argument(*names, default=argparse.SUPPRESS, **kw)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wadcmsn",
        description="Zero-shot sketch-based image retrieval with Wasserstein "
                    "cross-modal semantic networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        _flag(p, "--config", metavar="PATH", help="JSON settings file (flags override it)")
        _flag(p, "--seed", type=int, metavar="N")
        _flag(p, "--out", metavar="DIR", help="output directory")
        return p

    p = command("gen-synth", "write a synthetic fixture (features, taxonomy, text vectors)")
    _flag(p, "--n-classes", dest="n_classes", type=int)
    _flag(p, "--n-seen", dest="n_seen", type=int)
    _flag(p, "--n-sketch", dest="n_sketch", type=int, help="sketches per class")
    _flag(p, "--n-image", dest="n_image", type=int, help="images per class")
    _flag(p, "--feature-dim", dest="feature_dim", type=int)
    _flag(p, "--text-dim", dest="text_dim", type=int)
    _flag(p, "--cluster-spread", dest="cluster_spread", type=float)
    _flag(p, "--text-sources", dest="n_text_sources", type=int,
          help="number of independent text-embedding files")

    p = command("embed", "build per-class semantic codes")
    _flag(p, "--features", metavar="PATH")
    _flag(p, "--taxonomy", metavar="PATH")
    _flag(p, "--text", metavar="PATH", action="append", help="repeatable")
    _flag(p, "--measure", choices=MEASURES)
    _flag(p, "--grid", action="store_true", help="every text file x every measure")
    _flag(p, "--code-dim", dest="code_dim", type=int)
    _flag(p, "--steps", dest="combiner_steps", type=int, help="combiner training steps")

    p = command("train", "train the networks")
    _flag(p, "--features", metavar="PATH")
    _flag(p, "--semantic", metavar="PATH")
    _flag(p, "--max-iter", dest="max_iterations", type=int)
    _flag(p, "--batch-size", dest="batch_size", type=int)
    _flag(p, "--lr", dest="learning_rate", type=float)
    _flag(p, "--n-critic", dest="n_critic", type=int)
    _flag(p, "--clip-c", dest="clip_c", type=float)
    _flag(p, "--dtype", choices=("float64", "float32"))
    _flag(p, "--log-every", dest="log_every", type=int)
    _flag(p, "--validate", action="store_true", help="per-epoch mAP on the test split")
    _flag(p, "--no-wd", dest="no_wd", action="store_true",
          help="plain (non-Wasserstein) adversarial loss, no clipping")
    _flag(p, "--no-cyc", dest="no_cyc", action="store_true")
    _flag(p, "--no-cls", dest="no_cls", action="store_true")
    _flag(p, "--no-iml", dest="no_iml", action="store_true")

    p = command("eval", "score a checkpoint on the test split")
    _flag(p, "--checkpoint", metavar="PATH")
    _flag(p, "--features", metavar="PATH")
    _flag(p, "--metric", choices=METRICS)
    _flag(p, "-k", "--k", dest="k", type=int, help="precision cutoff (default 100)")
    _flag(p, "--n", dest="n", type=int, help="AP cutoff (default: whole gallery)")
    _flag(p, "--map-by", dest="map_by", choices=("class", "query"))
    _flag(p, "--rankings", action="store_true", help="also write rankings.csv")
    _flag(p, "--codes", action="store_true", help="also write codes.csv")

    p = command("retrieve", "top-k gallery images for given sketch ids")
    _flag(p, "--checkpoint", metavar="PATH")
    _flag(p, "--features", metavar="PATH")
    _flag(p, "--query", dest="queries", action="append", metavar="ID")
    _flag(p, "-k", "--k", dest="k", type=int)
    _flag(p, "--metric", choices=METRICS)
    _flag(p, "--gallery", choices=GALLERIES,
          help="images searched; auto = the query's own split (default)")
    return parser


def run(argv=None):
    """Parse and dispatch; raises package errors instead of exiting."""
    args = build_parser().parse_args(argv)
    settings = resolve_settings(args.command, args)
    return COMMANDS[args.command](settings)


def main(argv=None):
    try:
        run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ValidationError, ShapeError, CheckpointError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
