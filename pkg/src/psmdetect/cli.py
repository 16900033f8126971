"""Command-line front end.

Exit codes: 0 success, 2 usage or I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import __version__, lapsvm, pipeline, synth
from .action_log import FormatError, build_index, load_action_log, write_action_log
from .causal_metrics import DEFAULT_ALPHA, view_stats, write_pair_stats
from .timedecay import (
    DAY,
    DecayConfig,
    extract_features,
    read_features,
    window_sequence,
    write_features,
)

log = logging.getLogger("psmdetect")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def read_config(path: str) -> dict[str, str]:
    """Flat ``key=value`` file; ``#`` starts a comment, dashes and
    underscores in keys are interchangeable."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _fractions(text: str) -> list[float]:
    vals = [float(v) for v in text.split(",") if v.strip()]
    return [v / 100.0 for v in vals]


def _add_model_opts(p):
    p.add_argument("--cl", type=float, default=0.6, help="labeled-loss penalty C_l")
    p.add_argument("--cr", type=float, default=0.2, help="manifold penalty C_r")
    p.add_argument("--kernel", choices=("linear", "gaussian"), default="linear")
    p.add_argument("--gamma", type=float, default=1.0, help="gaussian kernel width")
    p.add_argument("--graph", choices=("heat-kernel", "raw-distance"), default="heat-kernel")
    p.add_argument("--bandwidth", type=float, default=None,
                   help="heat-kernel bandwidth (default: median pairwise distance)")
    p.add_argument("--knn", type=int, default=10, help="neighbours kept per point; 0 keeps all")


def _add_data_opts(p):
    p.add_argument("--features", required=True, help="feature CSV from extract-features")
    p.add_argument("--labels", required=True, help="CSV user,label with label psm|normal")
    p.add_argument("--seed", type=int, default=7)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psmdetect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key=value file; flags override it")
        return p

    p = add("simulate", "generate a synthetic action log with planted PSM users")
    p.add_argument("--out", required=True, help="action-log CSV to write")
    p.add_argument("--truth", required=True, help="truth CSV user,label to write")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-users", type=int, default=1000)
    p.add_argument("--psm-fraction", type=float, default=0.24)
    p.add_argument("--n-messages", type=int, default=2000)
    p.add_argument("--viral-fraction", type=float, default=0.19)
    p.add_argument("--viral-size", default="50,150", help="min,max viral cascade size")
    p.add_argument("--normal-size", default="5,40", help="min,max normal cascade size")
    p.add_argument("--horizon", type=int, default=DAY)
    p.add_argument("--early-bias", type=float, default=6.0)
    p.set_defaults(func=cmd_simulate)

    p = add("extract-features", "compute time-decayed causality features")
    p.add_argument("--log", required=True, help="action-log CSV user,message,time")
    p.add_argument("--out", required=True, help="feature CSV to write")
    p.add_argument("--theta", type=int, default=100, help="viral threshold (distinct users)")
    p.add_argument("--phi", type=float, default=0.5, help="key-user fraction")
    p.add_argument("--delta", type=int, default=DAY, help="window length in seconds")
    p.add_argument("--sigma", type=float, default=None, help="decay rate per second (default 1/delta)")
    p.add_argument("--t0", type=int, default=None, help="interval start (default: first action)")
    p.add_argument("--t-end", type=int, default=None,
                   help="interval end 'now' (default: windows cover the last action)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="relative-likelihood guard")
    p.add_argument("--pairs-dump", default=None, help="write pair statistics of the full interval")
    p.set_defaults(func=cmd_extract)

    p = add("train", "train a Laplacian SVM and save it")
    _add_data_opts(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--unlabeled-frac", type=float, default=0.1)
    _add_model_opts(p)
    p.set_defaults(func=cmd_train)

    p = add("predict", "score users with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", default=None, help="CSV user,score,label (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = add("evaluate", "split, train, and report F1 on held-out users")
    _add_data_opts(p)
    p.add_argument("--unlabeled-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.5)
    _add_model_opts(p)
    p.set_defaults(func=cmd_evaluate)

    p = add("sweep", "evaluate over several unlabeled percentages")
    _add_data_opts(p)
    p.add_argument("--fractions", default="10,20,30,40,50", help="unlabeled percentages")
    p.add_argument("--test-frac", type=float, default=0.5)
    p.add_argument("--out", default=None, help="CSV fraction,f1 (default stdout)")
    _add_model_opts(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def _open_in(path: str):
    try:
        return open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _open_out(path: str | None):
    if path is None:
        return sys.stdout
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _load_dataset(args) -> tuple[pipeline.Dataset, np.ndarray]:
    with _open_in(args.features) as fh:
        feats = read_features(fh)
    with _open_in(args.labels) as fh:
        truth = synth.read_truth(fh)
    labels = {u: (1 if v == synth.PSM else -1) for u, v in truth.items()}
    data, extra = pipeline.Dataset.from_features(feats, labels)
    if len(data.users) == 0:
        raise UsageError("no feature row has a label")
    return data, extra


def _train_kwargs(args) -> dict:
    return dict(
        kernel=lapsvm.KernelSpec(args.kernel, args.gamma),
        graph=lapsvm.GraphSpec(args.graph, args.bandwidth, args.knn or None),
        c_l=args.cl,
        c_r=args.cr,
    )


def _pair(text: str) -> tuple[int, int]:
    lo, hi = (int(v) for v in text.split(","))
    return lo, hi


def cmd_simulate(args) -> int:
    cfg = synth.SynthConfig(
        seed=args.seed, n_users=args.n_users, psm_fraction=args.psm_fraction,
        n_messages=args.n_messages, viral_fraction=args.viral_fraction,
        viral_size_range=_pair(args.viral_size), normal_size_range=_pair(args.normal_size),
        horizon=args.horizon, early_bias=args.early_bias,
    )
    records, truth = synth.generate(cfg)
    with _open_out(args.out) as fh:
        write_action_log(records, fh)
    with _open_out(args.truth) as fh:
        synth.write_truth(truth, fh)
    print(f"records={len(records)}")
    print(f"users={cfg.n_users}")
    print(f"psm={cfg.n_psm}")
    print(f"suggested_theta={cfg.viral_threshold}")
    return EXIT_OK


def cmd_extract(args) -> int:
    with _open_in(args.log) as fh:
        records, skipped = load_action_log(fh)
    if skipped:
        log.warning("skipped %d malformed rows", skipped)
    index = build_index(records, args.theta, args.phi)
    if not index.cascades:
        raise UsageError("action log has no valid records")
    lo, hi = index.time_span()
    t0 = lo if args.t0 is None else args.t0
    if args.t_end is None:
        cfg = DecayConfig.covering(t0, hi, args.delta, args.sigma)
    else:
        sigma = 1.0 / args.delta if args.sigma is None else args.sigma
        cfg = DecayConfig(t0, args.t_end, args.delta, sigma)
    feats = extract_features(index, cfg, alpha=args.alpha)
    with _open_out(args.out) as fh:
        write_features(feats, fh)
    if args.pairs_dump:
        view = index.restrict(cfg.t0, cfg.t)
        with _open_out(args.pairs_dump) as fh:
            write_pair_stats(view_stats(view).pair_stats() if view.cascades else [], fh)
    print(f"records={len(records)}")
    print(f"skipped={skipped}")
    print(f"cascades={len(index)}")
    print(f"viral={len(index.viral_set)}")
    print(f"windows={len(window_sequence(cfg))}")
    print(f"users={len(feats)}")
    return EXIT_OK


def cmd_train(args) -> int:
    data, extra = _load_dataset(args)
    idx = np.arange(len(data.users))
    k = pipeline.mask_count(len(idx), args.unlabeled_frac)
    model = pipeline.train_masked(data, idx, k, args.seed, extra, **_train_kwargs(args))
    with _open_out(args.out) as fh:
        lapsvm.save_model(model, fh)
    print(f"labeled={len(idx) - k}")
    print(f"unlabeled={k + len(extra)}")
    return EXIT_OK


def cmd_predict(args) -> int:
    with _open_in(args.model) as fh:
        try:
            model = lapsvm.load_model(fh)
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad model file: {exc}") from None
    with _open_in(args.features) as fh:
        feats = read_features(fh)
    X = np.array([f.xi for f in feats]).reshape(len(feats), 4)
    scores = model.decision_function(X) if len(feats) else np.empty(0)
    out = _open_out(args.out)
    try:
        out.write("user,score,label\n")
        for f, s in zip(feats, scores):
            out.write(f"{f.user},{format(float(s), '.17g')},{synth.PSM if s > 0 else synth.NORMAL}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _report(res: pipeline.EvalResult) -> None:
    s = res.scores
    print(f"unlabeled_frac={res.unlabeled_frac}")
    print(f"n_labeled={res.n_labeled}")
    print(f"n_unlabeled={res.n_unlabeled}")
    print(f"n_test={res.n_test}")
    print(f"precision={s.precision:.6f}")
    print(f"recall={s.recall:.6f}")
    print(f"f1={s.f1:.6f}")
    print()
    print(f"{'metric':<10}{'value':>10}")
    for name, v in (("precision", s.precision), ("recall", s.recall), ("F1", s.f1)):
        print(f"{name:<10}{v:>10.4f}")
    print(f"confusion  tp={s.tp} fp={s.fp} fn={s.fn} tn={s.tn}")


def cmd_evaluate(args) -> int:
    data, extra = _load_dataset(args)
    res = pipeline.evaluate(data, args.unlabeled_frac, args.seed, args.test_frac, extra,
                            **_train_kwargs(args))
    _report(res)
    return EXIT_OK


def cmd_sweep(args) -> int:
    data, extra = _load_dataset(args)
    fracs = _fractions(args.fractions)
    results = pipeline.sweep(data, fracs, args.seed, args.test_frac, extra, **_train_kwargs(args))
    out = _open_out(args.out)
    try:
        out.write("fraction,f1\n")
        for r in results:
            out.write(f"{r.unlabeled_frac * 100:g},{r.scores.f1:.6f}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in sub.choices.values():
        dests = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, raw in values.items():
            act = dests.get(key)
            if act is None:
                continue
            val = act.type(raw) if act.type is not None else raw
            defaults[key] = val
            act.required = False
        sp.set_defaults(**defaults)
    known_keys = {a.dest for sp in sub.choices.values() for a in sp._actions}
    unknown = sorted(set(values) - known_keys)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"psmdetect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"psmdetect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream closed the pipe (e.g. `| head`); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except ArithmeticError as exc:
        print(f"psmdetect: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, FormatError, OSError, ValueError, KeyError) as exc:
        print(f"psmdetect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
