"""mitoslice command line.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .config import ExperimentConfig
from .errors import ConfigError, MitosliceError
from .reporting import FORMATS

log = logging.getLogger("mitoslice")

CACHE_ENV = "MITOSLICE_CACHE"
COMMANDS = ("synth", "split", "train", "predict", "evaluate", "ablate", "report")


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mitoslice", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="experiment config JSON (defaults used if omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. --set train.epochs=2 (repeatable)")
        p.add_argument("-o", "--output-dir", help="shorthand for --set paths.output_dir=DIR")
        return p

    add("synth", "generate the synthetic train/test datasets")
    add("split", "write the stratified fold assignment")
    add("train", "train one checkpoint per fold")
    p = add("predict", "run the fold ensemble on a manifest")
    p.add_argument("--manifest", help="manifest to predict (default: the test manifest)")
    p.add_argument("--out", help="prediction CSV path")
    p = add("evaluate", "per-domain metrics from prediction CSVs")
    p.add_argument("--predictions", nargs="+", help="prediction CSV(s) (default: the run's predictions.csv)")
    p = add("ablate", "crop-ratio ablation on shared folds")
    p.add_argument("--ratios", type=float, nargs="+", help="crop ratios, first is the baseline")
    p = add("report", "re-emit metrics/ablation JSON artifacts")
    p.add_argument("inputs", nargs="+", help="metrics.json / ablation.json / cv_metrics.json files")
    p.add_argument("--format", choices=FORMATS, default="markdown")
    p.add_argument("--out-dir", help="directory for the emitted files")
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"paths.output_dir={args.output_dir}")
    return ExperimentConfig.load(args.config, overrides)


def run(args) -> int:
    if os.environ.get(CACHE_ENV):
        # pretrained weights are fetched through timm / huggingface hub
        os.environ.setdefault("HF_HOME", os.environ[CACHE_ENV])
        os.environ.setdefault("TORCH_HOME", os.environ[CACHE_ENV])

    cfg = _load_config(args)
    cmd = args.command
    if cmd == "synth":
        out = pipeline.run_synth(cfg)
        for name, m in out.items():
            n_nmf, n_amf = m.counts
            print(f"{name}: {len(m)} samples ({n_amf} AMF, {n_nmf} NMF) -> {m.root}")
    elif cmd == "split":
        a = pipeline.run_split(cfg)
        print(f"wrote {cfg.output_dir / 'folds.csv'} (k={a.k}, seed={a.seed})")
    elif cmd == "train":
        cfg.dump(cfg.output_dir / "config.json")
        doc = pipeline.run_train(cfg)
        ba = doc["aggregates"]["all_folds"]["balanced_accuracy"]
        sd = f" ± {ba['sd']:.4f}" if ba["sd"] is not None else ""
        print(f"trained {len(doc['rows'])} folds; CV balanced accuracy {ba['mean']:.4f}{sd}")
    elif cmd == "predict":
        path = pipeline.run_predict(cfg, args.manifest, args.out)
        print(f"wrote {path}")
    elif cmd == "evaluate":
        doc = pipeline.run_evaluate(cfg, args.predictions)
        overall = doc["rows"][-1]
        print(f"overall balanced accuracy {overall['balanced_accuracy']}")
    elif cmd == "ablate":
        if args.ratios is not None and len(args.ratios) < 2:
            raise ConfigError("ablate needs at least two --ratios")
        pipeline.run_ablate(cfg, args.ratios)
        print(f"wrote {cfg.output_dir / 'ablation.json'}")
    elif cmd == "report":
        for p in pipeline.run_report(args.inputs, args.format, args.out_dir):
            print(f"wrote {p}")
    return 0


def main(argv=None) -> int:
    args = get_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return run(args)
    except MitosliceError as exc:
        print(f"mitoslice {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"mitoslice {args.command}: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"mitoslice {args.command}: runtime failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
