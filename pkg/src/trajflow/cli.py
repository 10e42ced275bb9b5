"""Command-line front end: data generation, training, prediction,
evaluation, ensembling, gradient checking, and figure emission.

Exit codes: 0 success, 2 bad flags or configuration, 3 I/O or data-file
failure, 4 numerical abort.  Errors print one machine-parseable line:
``error: <category>: <message>``.

Heavy imports happen inside the command handlers so --threads can pin the
BLAS thread environment before numpy loads.
"""

import argparse
import json
import os
import sys


class DataError(Exception):
    """A file was missing, unreadable, or failed validation."""


def _set_threads(n):
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)


def _load_corpus(path):
    from . import scenario as sc

    try:
        return sc.load_jsonl(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None


def _load_predictions(path):
    from . import predictions as pj

    try:
        return pj.load_predictions(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None


def _prepared(s):
    from . import scenario as sc

    return sc.filter_radius(sc.normalize(s))


# -- command handlers -----------------------------------------------------------


def _cmd_generate(args):
    from . import scenario as sc

    corpus = sc.generate_synthetic(args.seed, args.n, n_agents=args.agents, n_lanes=args.lanes)
    sc.save_jsonl(corpus, args.out)
    print(f"wrote {len(corpus)} scenarios to {args.out}")
    return 0


def _model_config(args):
    from . import model as tm

    return tm.ModelConfig(
        d=args.d,
        k=args.k,
        a_max=args.a_max,
        m_max=args.m_max,
        encoder_depth=args.encoder_depth,
        decoder_depth=args.decoder_depth,
        seed=args.seed,
        dtype=args.dtype,
    ).validate()


def _cmd_train(args):
    from . import augment as ag
    from . import model as tm
    from . import training as tt

    corpus = _load_corpus(args.data)
    model_cfg = _model_config(args)
    train_cfg = tt.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr0,
        val_fraction=args.val_fraction,
        seed=args.seed,
        augment=ag.AugmentConfig(seed=args.seed) if args.augment else None,
    ).validate()
    if args.mine:
        mining = tt.HardMiningConfig(
            subset_fraction=args.mine_subset,
            mined_fraction=args.mine_q,
            oversample_factor=args.mine_r,
        )
        result = tt.hard_mine(corpus, model_cfg, train_cfg, mining)
        print(f"mined {len(result.mined_ids)} scenarios: {','.join(result.mined_ids)}")
        corpus = result.sampling_list
    params, history = tt.train(corpus, model_cfg, train_cfg)
    tm.save_checkpoint(args.out, model_cfg, params)
    if args.history:
        tt.write_history_csv(args.history, history)
    last = history[-1]
    print(
        f"trained {len(history)} epochs, final loss {last['loss']:.4f}, "
        f"val brier-minFDE {last['val_brier_min_fde']:.4f}"
    )
    return 0


def _load_checkpoint(path, a_max=None, m_max=None):
    import dataclasses

    from . import model as tm

    try:
        cfg, _ = tm.load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    target = dataclasses.replace(
        cfg, a_max=a_max or cfg.a_max, m_max=m_max or cfg.m_max
    )
    return tm.load_checkpoint(path, target)


def _cmd_predict(args):
    from . import model as tm
    from . import predictions as pj

    corpus = _load_corpus(args.data)
    cfg, params = _load_checkpoint(args.ckpt, args.a_max, args.m_max)
    entries = {}
    for s in corpus:
        ns = _prepared(s)
        bundle = tm.forward(ns, cfg, params)
        t_h = bundle.h_pred.shape[0]
        entries[s.scenario_id] = (
            bundle.trajectories.data[:, t_h:, :2],
            bundle.scores.data,
        )
    pj.save_predictions(args.out, entries)
    print(f"wrote predictions for {len(entries)} scenarios to {args.out}")
    return 0


def _cmd_evaluate(args):
    from . import metrics as tmx
    from . import scenario as sc

    preds = _load_predictions(args.pred)
    gts = {}
    for s in _load_corpus(args.data):
        ns = _prepared(s)
        gts[s.scenario_id] = sc.target_future(ns)
    try:
        rows, means = tmx.evaluate_corpus(preds, gts)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    tmx.write_metrics_csv(args.out, rows, means)
    print(
        f"{len(rows)} scenarios: "
        + " ".join(f"{k}={means[k]:.4f}" for k in tmx.METRIC_NAMES)
    )
    return 0


def _cmd_ensemble(args):
    from . import ensemble as te

    try:
        te.mte(args.inputs, k=args.k, seed=args.seed, out_path=args.out)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    print(f"ensembled {len(args.inputs)} prediction files into {args.out}")
    return 0


def _cmd_gradcheck(args):
    from . import diagnostics

    worst = diagnostics.run_gradient_checks(args.seed, verbose=True)
    if worst > 1e-4:
        print(f"error: numeric: worst gradient error {worst:.3e} exceeds 1e-4")
        return 4
    print(f"all gradient checks passed, worst relative error {worst:.3e}")
    return 0


def _cmd_plot(args):
    from . import plotting

    pred_paths = [args.pred] + ([args.pred2] if args.pred2 else [])
    try:
        plotting.plot_prediction_file(
            args.data, pred_paths, args.scenario, args.out
        )
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    print(f"wrote {args.out}")
    return 0


# -- argument plumbing ------------------------------------------------------------


def _global_flags(parser, suppress):
    # the same three flags are accepted before or after the subcommand;
    # the subcommand copies use SUPPRESS so they never clobber global values
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument(
        "--seed", type=int, help="master random seed", **(kw or {"default": 0})
    )
    parser.add_argument(
        "--threads", type=int, help="BLAS thread cap", **(kw or {"default": 1})
    )
    parser.add_argument(
        "--config", help="JSON file overriding flags", **(kw or {"default": None})
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trajflow", description="trajectory forecasting pipeline"
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scenario corpus")
    _global_flags(p, suppress=True)
    p.add_argument("--n", type=int, required=True, help="number of scenarios")
    p.add_argument("--agents", type=int, default=8)
    p.add_argument("--lanes", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a model on a corpus")
    _global_flags(p, suppress=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="metric history CSV")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr0", type=float, default=2.5e-4)
    p.add_argument("--val-fraction", type=float, default=0.10)
    p.add_argument("--augment", action="store_true", help="enable augmentation")
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--a-max", type=int, default=32)
    p.add_argument("--m-max", type=int, default=128)
    p.add_argument("--encoder-depth", type=int, default=3)
    p.add_argument("--decoder-depth", type=int, default=2)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--mine", action="store_true", help="hard-mine before training")
    p.add_argument("--mine-subset", type=float, default=0.5)
    p.add_argument("--mine-q", type=float, default=0.25)
    p.add_argument("--mine-r", type=int, default=3)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="run a checkpoint over a corpus")
    _global_flags(p, suppress=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--a-max", type=int, default=None, help="evaluation agent capacity")
    p.add_argument("--m-max", type=int, default=None, help="evaluation map capacity")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against a corpus")
    _global_flags(p, suppress=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="metrics CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ensemble", help="fuse prediction files with K-means")
    _global_flags(p, suppress=True)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the tape")
    _global_flags(p, suppress=True)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("plot", help="render one scenario to SVG")
    _global_flags(p, suppress=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--pred2", default=None, help="second panel (e.g. ensembled)")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def _apply_config_file(args, parser):
    if not args.config:
        return
    try:
        with open(args.config) as fh:
            overrides = json.load(fh)
    except OSError as exc:
        raise DataError(str(exc)) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.config}: {exc}") from None
    if not isinstance(overrides, dict):
        parser.error(f"{args.config}: config must be a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest in ("func", "command", "config"):
            parser.error(f"{args.config}: unknown config key {key!r}")
        setattr(args, dest, value)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args, parser)
    except DataError as exc:
        print(f"error: io: {exc}")
        return 3
    except SystemExit as exc:  # argparse reports its own usage message
        return 2 if exc.code not in (0, None) else 0

    _set_threads(args.threads)
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config: {json.dumps(resolved, sort_keys=True, default=str)}", file=sys.stderr)

    from . import training as tt

    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: io: {exc}")
        return 3
    except FileNotFoundError as exc:
        print(f"error: io: {exc}")
        return 3
    except tt.NumericalAbort as exc:
        print(f"error: numeric: {exc}")
        return 4
    except ValueError as exc:
        print(f"error: usage: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
