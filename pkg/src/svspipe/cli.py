"""``svs-pipe`` command line entry point.

Exit status: 0 on success, 1 when a stage fails, 2 on a configuration error.
"""

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, StageFailed
from .pipeline import make_config, parse_config_text, run

EXIT_OK = 0
EXIT_STAGE_FAILED = 1
EXIT_CONFIG_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="svs-pipe", description="Run the singing voice synthesis recipe.")
    ap.add_argument("--stage", type=int, default=None)
    ap.add_argument("--stop-stage", type=int, default=None)
    ap.add_argument("--config", type=Path, default=None, help="flat 'key = value' file")
    ap.add_argument("--data-dir", type=Path, default=None)
    ap.add_argument("--work-dir", type=Path, default=None)
    ap.add_argument("--pitch-shift", type=int, default=None, help="semitones, |K| <= 12")
    ap.add_argument("--mixup-alpha", type=float, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args):
    values = {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        values.update(parse_config_text(text))
    overrides = {
        "stage": args.stage,
        "stop_stage": args.stop_stage,
        "data_dir": args.data_dir,
        "work_dir": args.work_dir,
        "pitch_shift": args.pitch_shift,
        "mixup_alpha": args.mixup_alpha,
        "seed": args.seed,
        "n_workers": args.workers,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return make_config(values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except ConfigError as exc:
        print(f"svs-pipe: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        return run(config)
    except StageFailed as exc:
        print(f"svs-pipe: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILED


if __name__ == "__main__":
    sys.exit(main())
