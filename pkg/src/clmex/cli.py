"""Command-line entry point: ``clmex <command> [flags]``.

Exit codes
----------
0  success
1  unexpected internal error
2  usage error (unknown flag, bad argument)
3  invalid configuration
4  missing input path
5  a verification or invariant check failed
6  training diverged (non-finite loss)

Logs go to stderr; artifacts go to ``--out`` (default ``$CLMEX_OUT/<command>``,
or ``runs/<command>`` when the variable is unset). Every output directory gets
``config.json`` (the resolved configuration) and ``VERSION`` before work starts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_CHECK_FAILED = 5
EXIT_DIVERGED = 6

OUT_ENV = "CLMEX_OUT"

log = logging.getLogger("clmex")


class MissingInputError(FileNotFoundError):
    pass


class CheckFailed(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# -- helpers ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def _load_run_config(args):
    from .training import RunConfig, load_config

    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for name in ("label_fraction",):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.downstream, name, value)
    return cfg.validate()


def _start(out: Path, echo: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    (out / "VERSION").write_text(f"clmex {__version__}\n")


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"input not found: {p}")
    return p


def _data(cfg):
    from .training import build_datasets

    if cfg.data.manifest is not None:
        _require(cfg.data.manifest)
    return build_datasets(cfg)


# -- commands ---------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    from .data import SyntheticConfig, write_synthetic_dataset

    try:
        views = tuple(int(v) for v in args.views.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--views must be comma-separated integers, got {args.views!r}") from None
    config = SyntheticConfig(subjects=args.subjects, sessions=args.sessions, expressions=args.expressions,
                             views=views, size=args.size, seed=args.seed if args.seed is not None else 7)
    config.validate()
    out = _out_dir(args)
    echo = {"command": "gen-synth", **{k: getattr(config, k) for k in ("subjects", "sessions", "expressions", "size", "seed")},
            "views": list(views)}
    _start(out, echo)
    path = write_synthetic_dataset(config, out)
    n = config.subjects * config.sessions * len(views)
    log.info("wrote %d records to %s", n, path)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .training import pretrain

    cfg = _load_run_config(args)
    out = _out_dir(args)
    _start(out, cfg.to_dict())
    _, train, _ = _data(cfg)
    resume = _require(args.resume) if args.resume else None
    _, report = pretrain(cfg, train, out_dir=out, resume_from=resume)
    log.info("view invariance %.3f -> %.3f", report.final_metrics["initial_view_invariance"],
             report.final_metrics["final_view_invariance"])
    return EXIT_OK


def cmd_downstream(args) -> int:
    from .eval import evaluate
    from .training import downstream_train, load_network

    cfg = _load_run_config(args)
    out = _out_dir(args)
    _start(out, cfg.to_dict())
    net, _ = load_network(_require(args.pretrained))
    _, train, test = _data(cfg)
    net, _ = downstream_train(net, train, cfg, out_dir=out)
    result = evaluate(net, test)
    (out / "eval.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    log.info("test accuracy %.3f", result.overall_accuracy)
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .eval import evaluate
    from .training import supervised_baseline

    cfg = _load_run_config(args)
    out = _out_dir(args)
    _start(out, cfg.to_dict())
    _, train, test = _data(cfg)
    net, _ = supervised_baseline(train, cfg, out_dir=out)
    result = evaluate(net, test)
    (out / "eval.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    log.info("test accuracy %.3f", result.overall_accuracy)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .eval import evaluate, write_confusion_csv
    from .training import load_network

    cfg = _load_run_config(args)
    out = _out_dir(args)
    _start(out, cfg.to_dict())
    net, _ = load_network(_require(args.checkpoint))
    _, _, test = _data(cfg)
    result = evaluate(net, test)
    (out / "eval.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    write_confusion_csv(result, test.expression_vocabulary, out / "confusion.csv")
    log.info("test accuracy %.3f over %d images", result.overall_accuracy, result.n_samples)
    return EXIT_OK


def cmd_study_views(args) -> int:
    from .eval import view_drop_study, write_csv
    from .training import load_network

    cfg = _load_run_config(args)
    out = _out_dir(args)
    _start(out, cfg.to_dict())
    clmex_net, _ = load_network(_require(args.clmex))
    base_net, _ = load_network(_require(args.baseline))
    _, _, test = _data(cfg)
    rows = view_drop_study(clmex_net, base_net, test)
    write_csv(rows, out / "view_drop.csv")
    for r in rows:
        log.info("angle %+4d  clmex drop %+.3f  baseline drop %+.3f", r["angle"], r["clmex_drop"], r["baseline_drop"])
    return EXIT_OK


def cmd_study_fractions(args) -> int:
    from .eval import DEFAULT_FRACTIONS, label_fraction_sweep, write_csv
    from .training import load_network

    cfg = _load_run_config(args)
    out = _out_dir(args)
    _start(out, cfg.to_dict())
    net, _ = load_network(_require(args.pretrained))
    _, train, test = _data(cfg)
    fractions = tuple(float(f) for f in args.fractions.split(",")) if args.fractions else DEFAULT_FRACTIONS
    rows = label_fraction_sweep(net, train, test, cfg, fractions, jobs=args.jobs)
    write_csv(rows, out / "label_fractions.csv")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    out = _out_dir(args)
    _start(out, {"command": "verify", "seed": args.seed or 0})
    results = run_all(args.seed or 0)
    for r in results:
        log.info("%s %s: %s", "PASS" if r.passed else "FAIL", r.name, r.detail)
    passed = sum(r.passed for r in results)
    summary = {"passed": passed, "failed": len(results) - passed,
               "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]}
    (out / "verify.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"verify: {passed} passed, {len(results) - passed} failed", file=sys.stderr)
    return EXIT_OK if passed == len(results) else EXIT_CHECK_FAILED


# -- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="TOML run configuration")
    shared.add_argument("--seed", type=int, help="override the configured seed")
    shared.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
    shared.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = _Parser(prog="clmex", description="Multi-view contrastive pre-training for expression recognition.")
    parser.add_argument("--version", action="version", version=f"clmex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", parents=[shared], help="write a synthetic multi-view dataset")
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--sessions", type=int, default=4)
    p.add_argument("--expressions", type=int, default=4)
    p.add_argument("--views", default="-90,-45,0,45,90", help="comma-separated angles in degrees")
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("pretrain", parents=[shared], help="contrastive pre-training")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("downstream", parents=[shared], help="linear probe then fine-tune from a pre-trained checkpoint")
    p.add_argument("--pretrained", required=True)
    p.add_argument("--label-fraction", type=float, dest="label_fraction")
    p.set_defaults(func=cmd_downstream)

    p = sub.add_parser("baseline", parents=[shared], help="supervised training from random init")
    p.add_argument("--label-fraction", type=float, dest="label_fraction")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", parents=[shared], help="single-view accuracy of a classifier checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study-views", parents=[shared], help="accuracy drop per view angle, both models")
    p.add_argument("--clmex", required=True, help="downstream classifier checkpoint")
    p.add_argument("--baseline", required=True, help="baseline classifier checkpoint")
    p.set_defaults(func=cmd_study_views)

    p = sub.add_parser("study-fractions", parents=[shared], help="accuracy versus label fraction, both models")
    p.add_argument("--pretrained", required=True)
    p.add_argument("--fractions", help="comma-separated fractions (default 1,0.75,0.5,0.25,0.1,0.05)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_study_fractions)

    p = sub.add_parser("verify", parents=[shared], help="gradient checks and loss-oracle suites")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    from .data import ManifestError, ManifestNotFoundError, SamplerError, SyntheticConfigError
    from .eval import EvaluationError
    from .tensor import CheckpointError
    from .training import ConfigError, DivergenceError, LabelSubsetError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SyntheticConfigError, LabelSubsetError, SamplerError) as exc:
        print(f"clmex: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except argparse.ArgumentTypeError as exc:
        print(f"clmex: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingInputError, ManifestNotFoundError) as exc:
        print(f"clmex: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ManifestError, CheckpointError, EvaluationError, CheckFailed) as exc:
        print(f"clmex: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except DivergenceError as exc:
        where = f" (last good checkpoint: {exc.last_good})" if exc.last_good else ""
        print(f"clmex: training diverged: {exc}{where}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
