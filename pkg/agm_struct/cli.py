"""
Command line interface: synth, train, predict, eval, xval and report.

Exit codes: 0 success, 2 configuration or argument error, 3 dataset or model file error,
4 training aborted because too many inner solves failed, or an LP solver failed.
"""
import argparse
import logging
import sys
from pathlib import Path

from agm_struct.config import ExperimentConfig, GeneratorConfig, LossSpec, load_experiment_config, load_model
from agm_struct.data import bayes_risk, generate_synthetic, load_dataset, load_generator, save_dataset, save_generator
from agm_struct.exceptions import (
    AgmError,
    ConfigError,
    ConvergenceError,
    DatasetError,
    FeatureShapeError,
    LossSpecError,
    SolverError,
    TreeStructureError,
)
from agm_struct.experiment import (
    FittedModel,
    build_report,
    fit_model,
    parse_log,
    prediction_loss,
    run_experiment,
    write_report,
)
from agm_struct.losses import LOSS_KINDS, cost_sensitive_spec
from agm_struct.model_io import load_model_file, save_model

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


def _read_config(path):
    if path is None:
        return None
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return load_experiment_config(text)


def _override(model, **updates):
    """Re-validates a frozen config with the non-None updates applied."""
    data = model.model_dump()
    data.update({key: value for key, value in updates.items() if value is not None})
    return load_model(type(model), data)


def _metric(args, k):
    if args.metric == "cost_sensitive":
        return cost_sensitive_spec(k, args.cost_seed)
    return LossSpec(kind=args.metric, k=k, position_weighted=args.weighted)


def _fmt(value):
    return f"{value:.6f}"


def cmd_synth(args):
    cfg = GeneratorConfig()
    if args.config:
        cfg = load_generator(args.config)
    cfg = _override(cfg, k=args.k, symbols=args.symbols, n_instances=args.n_instances, min_length=args.min_length,
                    max_length=args.max_length, label_noise=args.label_noise,
                    emission_accuracy=args.emission_accuracy, seed=args.seed)
    dataset = generate_synthetic(cfg)
    save_dataset(dataset, args.out)
    save_generator(cfg, args.generator_out or str(args.out) + ".generator.json")
    print(f"wrote {len(dataset)} instances to {args.out}")
    return EXIT_OK


def cmd_train(args):
    data = load_dataset(args.data)
    spec = _metric(args, data.k)
    cfg = _read_config(args.config) or ExperimentConfig(metrics=[spec])
    if args.seed is not None:
        cfg = _override(cfg, seed=args.seed)
    lam = args.lam
    if lam is None:
        lam = {"agm": cfg.train.lam, "crf": cfg.crf.lam, "ssvm": cfg.ssvm.lam}[args.kind]
    fitted = fit_model(args.kind, data, spec, cfg, lam, seed=cfg.seed)
    save_model(fitted.to_saved(), args.out)
    print(f"saved {args.kind} model to {args.out}")
    return EXIT_OK


def _load_fitted(args):
    cfg = _read_config(getattr(args, "config", None))
    saved = load_model_file(args.model)
    return FittedModel.from_saved(saved, decoder=args.decoder, predict_cfg=cfg.predict if cfg else None)


def cmd_predict(args):
    model = _load_fitted(args)
    data = load_dataset(args.data)
    lines = []
    for inst in data.instances:
        prediction = model.predict(inst)
        if prediction.labels is not None:
            lines.append(" ".join(str(int(v)) for v in prediction.labels))
        else:
            lines.append(" | ".join(" ".join(_fmt(v) for v in row) for row in prediction.distributions))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args):
    model = _load_fitted(args)
    data = load_dataset(args.data)
    spec = model.spec if args.metric is None else _metric(args, data.k)
    total = 0.0
    weight = 0.0
    for inst in data.instances:
        total += inst.weight * prediction_loss(model.predict(inst), inst, spec)
        weight += inst.weight
    if weight == 0:
        raise DatasetError("evaluation dataset is empty")
    print(f"{spec.label()}\t{_fmt(total / weight)}")
    return EXIT_OK


def cmd_xval(args):
    cfg = _read_config(args.config)
    data = load_dataset(args.data)
    if cfg is None:
        cfg = ExperimentConfig(metrics=[LossSpec(kind="zero_one", k=data.k)])
    cfg = _override(cfg, seed=args.seed, workers=args.workers)
    bayes = None
    if args.generator:
        generator = load_generator(args.generator)
        bayes = {metric.label(): bayes_risk(generator, metric) for metric in cfg.metrics}
    report = run_experiment(cfg, data, bayes=bayes)
    write_report(report, args.out)
    sys.stdout.write(report.table)
    return EXIT_OK


def cmd_report(args):
    try:
        text = Path(args.log).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot read log {args.log}: {e}") from e
    report = build_report(parse_log(text), args.alpha)
    if args.out:
        Path(args.out).write_text(report.table, encoding="utf-8")
    sys.stdout.write(report.table)
    return EXIT_OK


def _add_metric_flags(parser, required=True):
    parser.add_argument("--metric", choices=LOSS_KINDS, default="zero_one" if required else None,
                        help="loss metric kind")
    parser.add_argument("--weighted", action="store_true", help="weight node i by 2i/(n+1)")
    parser.add_argument("--cost-seed", type=int, default=0, help="seed of the random cost-sensitive matrix")


def build_parser():
    parser = argparse.ArgumentParser(prog="agm-struct",
                                     description="Adversarial graphical models for tree-structured prediction.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic hidden ordinal chain dataset")
    p.add_argument("--config", help="generator JSON (as written next to a dataset)")
    p.add_argument("--k", type=int)
    p.add_argument("--symbols", type=int)
    p.add_argument("--n-instances", type=int)
    p.add_argument("--min-length", type=int)
    p.add_argument("--max-length", type=int)
    p.add_argument("--label-noise", type=float)
    p.add_argument("--emission-accuracy", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--generator-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model and save it")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("agm", "crf", "ssvm"), default="agm")
    _add_metric_flags(p)
    p.add_argument("--lam", type=float)
    p.add_argument("--config", help="experiment JSON supplying trainer settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("predict", cmd_predict, "decode a dataset with a saved model"),
                             ("eval", cmd_eval, "average loss of a saved model on a labeled dataset")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--decoder", choices=("map", "probabilistic"), default="map")
        p.add_argument("--config", help="experiment JSON supplying decoder settings")
        if name == "eval":
            _add_metric_flags(p, required=False)
        else:
            p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("xval", help="run a split/cross-validation experiment")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--generator", help="generator JSON; adds the exact Bayes risk column")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_xval)

    p = sub.add_parser("report", help="rebuild the table from a per-instance log")
    p.add_argument("--log", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LossSpecError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (DatasetError, FeatureShapeError, TreeStructureError) as e:
        logger.error("%s", e)
        return EXIT_DATA
    except ConvergenceError as e:
        logger.error("%s (%s)", e, e.diagnostics)
        return EXIT_CONVERGENCE
    except SolverError as e:
        logger.error("%s", e)
        return EXIT_CONVERGENCE
    except AgmError as e:
        logger.exception("unexpected failure: %s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
