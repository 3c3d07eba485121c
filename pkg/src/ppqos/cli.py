"""Command-line front end: dataset inspection, obfuscation, and sweeps.

Commands: stats, split, obfuscate, evaluate, sweep. Exit codes: 0 on
success, 1 on usage errors, 2 on data or runtime errors. Diagnostics go
to stderr; results go to the output stream or to files. An optional
"key = value" config file can supply any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import sys

from . import evaluation, obfuscation
from .dataset import (
    LoadError,
    SplitConfig,
    load_dense_matrix,
    load_triples,
    save_triples,
    split_by_density,
    stats,
)
from .evaluation import APPROACHES, ExperimentConfig, EvalReport, export_csv, run_experiment
from .factorization import TrainingError
from .obfuscation import ObfuscationConfig, obfuscate_matrix


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _canonical_approach(name: str) -> str:
    table = {a.lower(): a for a in APPROACHES}
    key = name.strip().lower()
    if key not in table:
        raise UsageError(f"unknown approach {name!r}; choose from {', '.join(APPROACHES)}")
    return table[key]


def _add_data_options(p):
    p.add_argument("--data", help="QoS matrix file")
    p.add_argument("--format", choices=("dense", "triples"), default=None,
                   help="input format (default dense)")
    p.add_argument("--sentinel", type=float, default=None,
                   help="missing-value sentinel in dense files (default -1)")
    p.add_argument("--config", help="key = value file supplying defaults for any flag")


def _load(args):
    if args.data is None:
        raise UsageError("--data is required")
    fmt = args.format or "dense"
    sentinel = -1.0 if args.sentinel is None else args.sentinel
    if fmt == "triples":
        return load_triples(args.data, missing_sentinel=sentinel)
    return load_dense_matrix(args.data, missing_sentinel=sentinel)


def build_parser() -> _Parser:
    parser = _Parser(prog="ppqos", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("stats", help="summarize a QoS matrix")
    _add_data_options(p)

    p = sub.add_parser("split", help="density-based train/test split")
    _add_data_options(p)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-out")
    p.add_argument("--test-out")

    p = sub.add_parser("obfuscate", help="normalize + perturb a matrix")
    _add_data_options(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--noise", choices=obfuscation.DISTRIBUTIONS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")

    for name in ("evaluate", "sweep"):
        p = sub.add_parser(name, help=f"run an accuracy {name}")
        _add_data_options(p)
        p.add_argument("--qos", choices=evaluation.QOS_KINDS, default=None)
        if name == "evaluate":
            p.add_argument("--approach")
            p.add_argument("--density", type=float)
            p.add_argument("--alpha", type=float)
            p.add_argument("--noise", choices=obfuscation.DISTRIBUTIONS, default=None)
        else:
            p.add_argument("--approaches", help="comma-separated approach names")
            p.add_argument("--densities", help="comma-separated densities")
            p.add_argument("--alphas", help="comma-separated noise scales")
            p.add_argument("--noises", help="comma-separated noise distributions")
        p.add_argument("--rounds", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--k", type=int, default=None, help="neighbor count")
        p.add_argument("--lam", type=float, default=None, help="user/service blend weight")
        p.add_argument("--d", type=int, default=None, help="latent rank")
        p.add_argument("--gamma", type=float, default=None, help="regularization")
        p.add_argument("--lr", type=float, default=None, help="initial learning rate")
        p.add_argument("--iters", type=int, default=None, help="max training iterations")
        p.add_argument("--jobs", type=int, default=None, help="parallel worker processes")
        p.add_argument("--timing", action="store_true", default=None,
                       help="include wall times in the report (breaks byte-reproducibility)")
        p.add_argument("--out", help="report CSV path")

    return parser


def _read_config_file(path) -> list[str]:
    """Turn "key = value" lines into argv fragments."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    out = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key or not value:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                out.append(flag)
        else:
            out.extend([flag, value])
    return out


def _parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required (stats, split, obfuscate, evaluate, sweep)")
    if getattr(args, "config", None):
        # Re-parse with the config file's flags injected ahead of the
        # explicit ones, so the command line always wins.
        injected = [argv[0]] + _read_config_file(args.config) + list(argv[1:])
        args = parser.parse_args(injected)
    return args


def _split_list(text, cast):
    return tuple(cast(part.strip()) for part in text.split(",") if part.strip())


def _experiment_config(args, sweep: bool) -> ExperimentConfig:
    params_overrides = {}
    for key, flag in (("k", args.k), ("lam", args.lam), ("d", args.d),
                      ("gamma", args.gamma), ("learning_rate", args.lr),
                      ("max_iters", args.iters)):
        if flag is not None:
            params_overrides[key] = flag

    if sweep:
        approaches = tuple(
            _canonical_approach(a) for a in (args.approaches or "").split(",") if a.strip()
        ) or APPROACHES
        densities = _split_list(args.densities, float) if args.densities else (0.1,)
        alphas = _split_list(args.alphas, float) if args.alphas else (0.5,)
        noises = _split_list(args.noises, str) if args.noises else ("uniform",)
    else:
        if not args.approach:
            raise UsageError("--approach is required")
        approaches = (_canonical_approach(args.approach),)
        densities = (args.density if args.density is not None else 0.1,)
        alphas = (args.alpha if args.alpha is not None else 0.5,)
        noises = (args.noise or "uniform",)

    try:
        return ExperimentConfig(
            qos_kind=args.qos or "response_time",
            approaches=approaches,
            densities=densities,
            alphas=alphas,
            distributions=noises,
            rounds=args.rounds if args.rounds is not None else 20,
            base_seed=args.seed if args.seed is not None else 1,
            params={a: dict(params_overrides) for a in approaches} if params_overrides else {},
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def print_table(report: EvalReport, fh=None) -> None:
    """Render aggregate MAE as approaches x densities, 3 decimals."""
    fh = fh or sys.stdout
    cfg = report.config
    agg = report.aggregates()
    sections = []
    if any(key[2] is None for key in agg):
        sections.append((None, None))
    for dist in cfg.distributions:
        for alpha in cfg.alphas:
            if any(key[2] == alpha and key[3] == dist for key in agg):
                sections.append((alpha, dist))

    width = max(len("approach"), max((len(a) for a in cfg.approaches), default=0)) + 2
    col = 9
    for alpha, dist in sections:
        if alpha is not None:
            fh.write(f"[alpha={alpha:g}, noise={dist}]\n")
        header = "approach".ljust(width) + "".join(
            f"{d:g}".rjust(col) for d in cfg.densities
        )
        fh.write(header + "\n")
        for approach in cfg.approaches:
            cells = []
            any_cell = False
            for density in cfg.densities:
                entry = agg.get((approach, density, alpha, dist))
                if entry is None:
                    cells.append("-".rjust(col))
                else:
                    any_cell = True
                    value = entry["mae"]
                    cells.append(("error" if value is None else f"{value:.3f}").rjust(col))
            if any_cell:
                fh.write(approach.ljust(width) + "".join(cells) + "\n")


def _cmd_stats(args) -> int:
    st = stats(_load(args))
    lo, hi = st.value_range
    sys.stdout.write(
        f"users {st.n_users}, services {st.n_services}, entries {st.n_entries}, "
        f"range {lo:g}~{hi:g}, mean {st.mean:.3f}, std {st.std:.3f}\n"
    )
    return 0


def _cmd_split(args) -> int:
    if args.density is None:
        raise UsageError("--density is required")
    if not args.train_out or not args.test_out:
        raise UsageError("--train-out and --test-out are required")
    matrix = _load(args)
    try:
        cfg = SplitConfig(density=args.density, seed=args.seed if args.seed is not None else 1)
    except ValueError as exc:
        raise UsageError(str(exc))
    train, test = split_by_density(matrix, cfg)
    save_triples(train, args.train_out)
    save_triples(test, args.test_out)
    sys.stdout.write(f"train {train.n_entries} entries, test {test.n_entries} entries\n")
    return 0


def _cmd_obfuscate(args) -> int:
    if args.alpha is None:
        raise UsageError("--alpha is required")
    if not args.out:
        raise UsageError("--out is required")
    matrix = _load(args)
    try:
        cfg = ObfuscationConfig(
            alpha=args.alpha,
            distribution=args.noise or "uniform",
            seed=args.seed if args.seed is not None else 1,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    obf, _secrets = obfuscate_matrix(matrix, cfg)  # secrets stay in memory only
    obfuscation.export_obfuscated(obf, args.out)
    sys.stdout.write(f"wrote {obf.n_entries} obfuscated entries to {args.out}\n")
    return 0


def _cmd_evaluate(args, sweep: bool) -> int:
    cfg = _experiment_config(args, sweep=sweep)
    data = _load(args)
    jobs = args.jobs if args.jobs is not None else 1
    report = run_experiment(cfg, data, jobs=jobs)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            export_csv(report, fh, include_timing=bool(args.timing))
    print_table(report)
    failures = [r for r in report.records if r.error]
    for rec in failures:
        sys.stderr.write(
            f"warning: {rec.approach} density={rec.density:g} round={rec.round}: {rec.error}\n"
        )
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = _parse(argv)
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command == "split":
            return _cmd_split(args)
        if args.command == "obfuscate":
            return _cmd_obfuscate(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args, sweep=False)
        if args.command == "sweep":
            return _cmd_evaluate(args, sweep=True)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (LoadError, TrainingError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
