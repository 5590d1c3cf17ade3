"""Full chain on synthetic data: synth, split, train, predict, evaluate.

    python3 scripts/run_desk_pipeline.py [--config configs/desk.json] [--set KEY=VALUE ...]
"""

import argparse
import logging
import time
from pathlib import Path

from mitoslice import pipeline
from mitoslice.config import ExperimentConfig
from mitoslice.reporting import render

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "desk.json")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = ExperimentConfig.load(args.config, args.overrides)
    t0 = time.perf_counter()
    pipeline.run_synth(cfg)
    pipeline.run_split(cfg)
    cv = pipeline.run_train(cfg)
    pipeline.run_predict(cfg)
    test = pipeline.run_evaluate(cfg)
    print(render(cv, "markdown"))
    print(render(test, "markdown"))
    print(f"artifacts in {cfg.output_dir}  ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
