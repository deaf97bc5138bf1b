"""Single command-line entry point.

Subcommands mirror the pipeline: ``learn`` writes a structure document,
``train`` fits weights for it, ``predict`` runs stochastic or simultaneous
inference, and the report subcommands (``eval-calibration``, ``eval-ood``,
``ablate``, ``sweep-structures``) write JSON plus CSV tables and render the
matching figures alongside unless ``--no-plots`` is given. Every output
document embeds the resolved configuration and a format version; all
randomness flows from ``--seed``. Exit codes: 0 success, 1 usage error,
2 data or contract error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__, evalharness, nnet, plotting, sampling, structure, uncertainty
from .data import DataError, derive_seed, discretize, load_csv, load_idx
from .graph import GraphError
from .nnet import NetworkError
from .structure import StructureError

DOCUMENT_VERSION = 1


class UsageError(Exception):
    pass


def _document(kind: str, config: dict, payload: dict) -> dict:
    return {
        "format": f"brainet-{kind}",
        "version": DOCUMENT_VERSION,
        "config": config,
        **payload,
    }


def _write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(rows, path, fields=None) -> None:
    if not rows:
        return
    fields = fields or list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def _load_dataset(args, labeled=False, path=None):
    path = str(path or args.data)
    if path.endswith((".idx", "-ubyte", ".idx3", ".idx1")):
        labels = getattr(args, "labels", None) if labeled else None
        return load_idx(path, labels_path=labels, bins=args.bins, strategy=args.discretize)
    label_column = getattr(args, "label_column", None) if labeled else None
    dataset = load_csv(path, label_column=label_column)
    if dataset.continuous.any():
        dataset = discretize(dataset, bins=args.bins, strategy=args.discretize)
    return dataset


def _resolved(args, skip=("func", "config")) -> dict:
    return {
        k: v for k, v in sorted(vars(args).items()) if k not in skip and not callable(v)
    }


def _add_data_flags(parser, labeled=True):
    parser.add_argument("--data", required=True, help="CSV or IDX input file")
    if labeled:
        parser.add_argument(
            "--label-column", help="label column name for CSV inputs"
        )
        parser.add_argument("--labels", help="IDX label file for image inputs")
    parser.add_argument("--bins", type=int, default=4, help="discretization bins")
    parser.add_argument(
        "--discretize",
        default="equal-frequency",
        choices=("equal-frequency", "threshold"),
        help="discretization strategy for continuous columns",
    )


def _add_structure_flags(parser):
    parser.add_argument("--s", type=int, default=2, help="bootstrap branches per site")
    parser.add_argument(
        "--ci-threshold", type=float, default=0.01, help="independence threshold (nats)"
    )
    parser.add_argument("--ess", type=float, default=1.0, help="equivalent sample size")
    parser.add_argument("--max-depth", type=int, default=4)
    parser.add_argument("--ci-method", default="cmi", choices=("cmi", "gtest"))
    parser.add_argument("--ci-log", help="JSON-lines audit log of independence decisions")


def _add_train_flags(parser):
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--width", type=int, default=32)
    parser.add_argument("--width-mult", type=float, default=1.0)
    parser.add_argument(
        "--loss", default="cross-entropy", choices=("cross-entropy", "gaussian-nll")
    )


def _add_predict_flags(parser):
    parser.add_argument(
        "--mode", default="stochastic", choices=("stochastic", "simultaneous")
    )
    parser.add_argument("--passes", type=int, default=15)
    parser.add_argument("--gamma", type=float, default=1.0)


def _settings_from(args) -> evalharness.HarnessSettings:
    return evalharness.HarnessSettings(
        s=args.s,
        ci_threshold=args.ci_threshold,
        ess=args.ess,
        max_depth=args.max_depth,
        bins=args.bins,
        width=args.width,
        width_mult=args.width_mult,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        loss=args.loss,
        passes=args.passes,
        gamma=args.gamma,
        seed=args.seed,
    )


# -- subcommands -------------------------------------------------------------


def cmd_learn(args) -> int:
    dataset = _load_dataset(args, labeled=True)
    config = structure.StructureConfig(
        s=args.s,
        threshold=args.ci_threshold,
        ess=args.ess,
        max_depth=args.max_depth,
        seed=args.seed,
        ci_method=args.ci_method,
    )
    log = open(args.ci_log, "w", encoding="utf-8") if args.ci_log else None
    try:
        result = structure.learn(dataset, config, ci_log=log)
    finally:
        if log is not None:
            log.close()
    doc = structure.structure_document(result)
    doc["config"] = {**doc["config"], **_resolved(args)}
    doc["trace"] = structure.measure_complexity(result.trace)
    _write_json(doc, args.out)
    if args.dump_cpdag:
        cpdag = structure.assemble_cpdag(result.root)
        _write_json(
            _document(
                "cpdag",
                _resolved(args),
                {"cpdag": cpdag.to_doc() if cpdag else None},
            ),
            args.dump_cpdag,
        )
    print(f"wrote {args.out}")
    return 0


def cmd_inspect(args) -> int:
    root, doc = structure.load_structure(args.infile)
    leaves = list(root.leaves())
    scores = [leaf.score for leaf in leaves]
    print(f"columns:            {len(doc.get('columns', []))}")
    print(f"leaf count:         {len(leaves)}")
    print(f"unique structures:  {structure.count_unique_structures(root)}")
    print(f"selection count:    {structure.selection_count(root)}")
    print(f"depth:              {root.depth()}")
    print(f"score range:        [{min(scores):.4f}, {max(scores):.4f}]")
    return 0


def _rebuild(root, meta):
    return nnet.build_network(
        root,
        head=meta["head"],
        class_count=meta["class_count"],
        width=meta["width"],
        width_mult=meta["width_mult"],
        seed=meta["seed"],
        input_width=meta["input_width"],
    )


def cmd_train(args) -> int:
    root, _doc = structure.load_structure(args.structure)
    dataset = _load_dataset(args, labeled=True)
    if dataset.labels is None:
        raise DataError("training requires labels (--label-column or --labels)")
    head = "gaussian" if args.loss == "gaussian-nll" else "softmax"
    meta = {
        "head": head,
        "class_count": dataset.class_count,
        "width": args.width,
        "width_mult": args.width_mult,
        "seed": args.seed,
        "input_width": dataset.n_cols,
        "loss": args.loss,
    }
    hierarchy = _rebuild(root, meta)
    history = nnet.train_network(
        hierarchy,
        root,
        dataset.features(),
        dataset.labels,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        loss=args.loss,
        seed=args.seed,
    )
    nnet.save_weights(hierarchy, args.out, meta={**meta, "config": _resolved(args)})
    print(f"wrote {args.out} (final training loss {history[-1]:.4f})")
    return 0


def _predict_batch(args, root, hierarchy, dataset):
    if args.mode == "stochastic":
        config = sampling.SamplingConfig(
            gamma=args.gamma, passes=args.passes, seed=args.seed
        )
        return sampling.stochastic_predict(
            hierarchy, root, dataset.features(), config, labels=dataset.labels
        )
    out = nnet.forward_simultaneous(hierarchy, dataset.features(), gamma=args.gamma)
    if hierarchy.head.kind == "softmax":
        per_pass = np.exp(out)[None]
        kind = "classification"
    else:
        per_pass = np.stack([out[:, 0], np.exp(out[:, 1])], axis=1)[None]
        kind = "regression"
    return uncertainty.PredictiveBatch(
        per_pass=per_pass, kind=kind, labels=dataset.labels
    )


def cmd_predict(args) -> int:
    root, _doc = structure.load_structure(args.structure)
    hierarchy = _rebuild(root, _load_meta(args.weights))
    nnet.load_weights(hierarchy, args.weights)
    dataset = _load_dataset(args, labeled=True)
    batch = _predict_batch(args, root, hierarchy, dataset)
    doc = _document(
        "predictions",
        _resolved(args),
        {"mean": batch.mean.tolist(), "passes": batch.passes, "kind": batch.kind},
    )
    _write_json(doc, args.out)
    if args.per_pass:
        with open(args.per_pass, "w", encoding="utf-8") as fh:
            for t in range(batch.passes):
                fh.write(json.dumps(batch.per_pass[t].tolist()) + "\n")
    print(f"wrote {args.out}")
    return 0


def _load_meta(weights_path):
    with np.load(weights_path) as archive:
        doc = json.loads(bytes(archive["__doc__"]).decode())
    if doc.get("format") != nnet.WEIGHTS_FORMAT:
        raise NetworkError(f"{weights_path} is not a weights checkpoint")
    return doc["meta"]


def cmd_eval_calibration(args) -> int:
    root, _doc = structure.load_structure(args.structure)
    meta = _load_meta(args.weights)
    hierarchy = _rebuild(root, meta)
    nnet.load_weights(hierarchy, args.weights)
    dataset = _load_dataset(args, labeled=True)
    if dataset.labels is None:
        raise DataError("calibration metrics need labels")
    batch = _predict_batch(args, root, hierarchy, dataset)
    metrics = {
        "nll": uncertainty.nll(batch),
        "error": uncertainty.error_rate(batch),
        "brier": uncertainty.brier(batch),
        "ece": uncertainty.ece(batch, bins=args.ece_bins),
    }
    doc = _document("calibration", _resolved(args), {"metrics": metrics})
    _write_json(doc, args.out)
    counts, conf, acc = uncertainty.reliability_bins(batch, bins=args.ece_bins)
    rows = [
        {"bin": i, "count": int(counts[i]), "confidence": conf[i], "accuracy": acc[i]}
        for i in range(len(counts))
    ]
    base = str(args.out).rsplit(".", 1)[0]
    _write_csv(rows, base + "_reliability.csv")
    if not args.no_plots:
        plotting.reliability_figure(counts, conf, acc, base + "_reliability.png")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_eval_ood(args) -> int:
    settings = _settings_from(args)
    if args.synthetic == "moons":
        doc_payload = evalharness.moons_ood_benchmark(settings)
    else:
        if not (args.train and args.id_test and args.ood_test):
            raise UsageError(
                "eval-ood needs --synthetic moons or all of --train/--id-test/--ood-test"
            )
        train = _load_dataset(args, labeled=True, path=args.train)
        id_test = _load_dataset(args, labeled=True, path=args.id_test)
        ood_test = _load_dataset(args, labeled=False, path=args.ood_test)
        doc_payload = evalharness.run_ood(train, id_test, ood_test, settings)
    doc = _document("ood", _resolved(args), {"results": doc_payload})
    out = args.out or "ood.json"
    _write_json(doc, out)
    rows = []
    for mode in ("stochastic", "simultaneous"):
        for name, metrics in sorted(doc_payload.get(mode, {}).items()):
            rows.append({"mode": mode, "score": name, **metrics})
    base = str(out).rsplit(".", 1)[0]
    _write_csv(rows, base + ".csv")
    if not args.no_plots:
        plotting.ood_figure(doc_payload, base + ".png")
    print(f"wrote {out}")
    return 0


def cmd_ablate(args) -> int:
    dataset = _load_dataset(args, labeled=True)
    if dataset.labels is None:
        raise DataError("the ablation needs labels")
    thresholds = [float(t) for t in args.thresholds.split(",")]
    settings = _settings_from(args)
    rows = evalharness.run_ablation(
        dataset, thresholds, settings, test_fraction=1.0 - args.split
    )
    doc = _document("ablation", _resolved(args), {"rows": rows})
    out = args.out or "ablation.json"
    _write_json(doc, out)
    base = str(out).rsplit(".", 1)[0]
    _write_csv(rows, base + ".csv")
    if not args.no_plots:
        plotting.ablation_figure(rows, base + ".png")
    print(f"wrote {out}")
    return 0


def cmd_sweep_structures(args) -> int:
    dataset = _load_dataset(args, labeled=True)
    sizes = [int(x) for x in args.sizes.split(",")]
    settings = _settings_from(args)
    rows = evalharness.run_unique_structures_sweep(
        dataset, sizes, settings, seeds=args.sweep_seeds
    )
    doc = _document("structure-sweep", _resolved(args), {"rows": rows})
    out = args.out or "sweep.json"
    _write_json(doc, out)
    base = str(out).rsplit(".", 1)[0]
    _write_csv(
        [{k: r[k] for k in ("train_size", "unique_structures", "std")} for r in rows],
        base + ".csv",
    )
    if not args.no_plots:
        plotting.structure_sweep_figure(rows, base + ".png")
    print(f"wrote {out}")
    return 0


def cmd_plot(args) -> int:
    with open(args.infile, encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.kind == "ablation":
        plotting.ablation_figure(doc["rows"], args.out)
    elif args.kind == "sweep":
        plotting.structure_sweep_figure(doc["rows"], args.out)
    elif args.kind == "ood":
        plotting.ood_figure(doc["results"], args.out)
    else:
        raise UsageError(f"unknown plot kind {args.kind!r}")
    print(f"wrote {args.out}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brainet",
        description="structure-hierarchy ensembles with posterior sub-network sampling",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("learn", help="learn a structure tree from data")
    _add_data_flags(p)
    _add_structure_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="structure JSON output")
    p.add_argument("--dump-cpdag", help="also write the assembled CPDAG")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("inspect", help="summarize a structure document")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train network weights for a structure")
    p.add_argument("--structure", required=True)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="weights checkpoint output (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="stochastic or simultaneous inference")
    p.add_argument("--structure", required=True)
    p.add_argument("--weights", required=True)
    _add_data_flags(p)
    _add_predict_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--per-pass", help="JSON-lines dump of per-pass outputs")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval-calibration", help="NLL / Brier / ECE / error report")
    p.add_argument("--structure", required=True)
    p.add_argument("--weights", required=True)
    _add_data_flags(p)
    _add_predict_flags(p)
    p.add_argument("--ece-bins", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_eval_calibration)

    p = sub.add_parser("eval-ood", help="out-of-distribution detection report")
    p.add_argument("--synthetic", choices=("moons",))
    p.add_argument("--train")
    p.add_argument("--id-test")
    p.add_argument("--ood-test")
    p.add_argument("--label-column")
    p.add_argument("--labels")
    p.add_argument("--bins", type=int, default=4)
    p.add_argument(
        "--discretize",
        default="equal-frequency",
        choices=("equal-frequency", "threshold"),
    )
    _add_structure_flags(p)
    _add_train_flags(p)
    _add_predict_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="ood.json")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_eval_ood)

    p = sub.add_parser("ablate", help="threshold ablation report")
    _add_data_flags(p)
    p.add_argument(
        "--thresholds",
        default="0,0.005,0.01,0.05",
        help="comma-separated independence thresholds; 0 is the stacked endpoint",
    )
    p.add_argument(
        "--split",
        type=float,
        default=0.8,
        help="training fraction of the internal train/test split",
    )
    _add_structure_flags(p)
    _add_train_flags(p)
    _add_predict_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="ablation.json")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-structures", help="unique structures vs training size")
    _add_data_flags(p)
    p.add_argument("--sizes", default="250,1000,4000", help="comma-separated sizes")
    p.add_argument("--sweep-seeds", type=int, default=5)
    _add_structure_flags(p)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--width-mult", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--loss", default="cross-entropy")
    p.add_argument("--passes", type=int, default=15)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sweep.json")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep_structures)

    p = sub.add_parser("plot", help="render figures from a report document")
    p.add_argument("--kind", required=True, choices=("ablation", "sweep", "ood"))
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)

    # a config file provides defaults; explicit flags win
    if "--config" in argv:
        i = argv.index("--config")
        try:
            config_path = argv[i + 1]
        except IndexError:
            print("--config needs a path", file=sys.stderr)
            return 1
        del argv[i : i + 2]
        try:
            with open(config_path, encoding="utf-8") as fh:
                defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read config file: {exc}", file=sys.stderr)
            return 2
        defaults = {k.replace("-", "_"): v for k, v in defaults.items()}
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sub in action.choices.values():
                    known = {a.dest for a in sub._actions}
                    sub.set_defaults(
                        **{k: v for k, v in defaults.items() if k in known}
                    )

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, GraphError, StructureError, NetworkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
