"""Command-line front end: ``bbuap attack|evaluate|baseline|sweep|serve|toy``.

Exit codes: 0 success, 2 configuration error, 3 oracle error, 4 I/O error.
Every run writes ``run.json`` with the fully resolved configuration.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .attack import NONTARGETED, TARGETED, AttackAborted, AttackConfig, run_attack
from .dataio import DatasetError, load_dataset, load_uap, read_manifest, save_uap, stratified_sample, write_dataset
from .directions import DCT, DEFAULT_FD, PIXEL
from .metrics import evaluate_uap, random_baseline, size_sweep, write_sweep_csv
from .oracle import ModelFileError, OracleError, RemoteOracle, load_oracle_weights, save_oracle_weights
from .tensor import TensorError, norm_name, parse_norm, xi_from_zeta

log = logging.getLogger("bbuap")

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE, EXIT_IO = 0, 2, 3, 4
PROGRESS_EVERY = 100


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# ---------------------------------------------------------------- parsing

def _add_data(p, sampling=True):
    p.add_argument("--manifest", required=True, help="CSV with path,label columns")
    p.add_argument("--classes", help="comma-separated class names in oracle index order "
                                     "(default: sorted manifest labels)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--oracle-model", help="local model file")
    g.add_argument("--oracle-url", help="remote scoring endpoint")
    p.add_argument("--clip", dest="clip", action="store_true", default=True)
    p.add_argument("--no-clip", dest="clip", action="store_false")
    p.add_argument("--seed", type=int, default=0)
    if sampling:
        s = p.add_mutually_exclusive_group()
        s.add_argument("--sample-per-class", type=int)
        s.add_argument("--sample-total", type=int)


def _add_budget(p):
    b = p.add_mutually_exclusive_group(required=True)
    b.add_argument("--zeta", type=float, help="budget as a fraction of the mean image norm")
    b.add_argument("--xi", type=float, help="absolute budget")
    p.add_argument("--norm", choices=["1", "2", "inf"], default="2")


def _add_attack(p):
    p.add_argument("--mode", choices=[NONTARGETED, TARGETED], default=NONTARGETED)
    p.add_argument("--target", help="target class name or index")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--fd", type=float, default=DEFAULT_FD, help="fraction of low frequencies kept")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--directions", choices=[PIXEL, DCT], default=DCT)
    p.add_argument("--without-replacement", action="store_true")


def build_parser():
    parser = _Parser(prog="bbuap", description="Black-box universal adversarial perturbations.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-q", "--quiet", action="store_true", help="no progress output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("attack", help="fit a UAP on a sampled input set")
    _add_data(a)
    _add_budget(a)
    _add_attack(a)
    a.add_argument("--out-uap", required=True)
    a.add_argument("--out-trace")
    a.add_argument("--out-metrics")

    e = sub.add_parser("evaluate", help="score a saved UAP on a dataset")
    _add_data(e, sampling=False)
    e.add_argument("--uap", required=True)
    e.add_argument("--target", help="report targeted success for this class")
    e.add_argument("--out-metrics")

    b = sub.add_parser("baseline", help="random UAPs at the same budget")
    _add_data(b)
    _add_budget(b)
    b.add_argument("--target")
    b.add_argument("--trials", type=int, default=10)
    b.add_argument("--out-metrics")

    s = sub.add_parser("sweep", help="fooling rate against input set size")
    _add_data(s, sampling=False)
    _add_budget(s)
    _add_attack(s)
    s.add_argument("--sizes", required=True, help="comma-separated input set sizes")
    s.add_argument("--validation-size", type=int, default=100)
    s.add_argument("--out-csv", required=True)

    v = sub.add_parser("serve", help="serve a local model over HTTP")
    v.add_argument("--oracle-model", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)

    t = sub.add_parser("toy", help="write a toy dataset and model")
    t.add_argument("--preset", default="binary")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out-dir", required=True)
    return parser


# ---------------------------------------------------------------- helpers

def _class_table(args):
    if args.classes:
        return [c.strip() for c in args.classes.split(",") if c.strip()]
    return sorted({label for _, label in read_manifest(args.manifest)})


def _resolve_target(target, classes):
    if target is None:
        return None
    if target in classes:
        return classes.index(target)
    try:
        return int(target)
    except ValueError:
        raise ConfigError(f"unknown class {target!r}") from None


def _open_oracle(args, shape):
    if args.oracle_url:
        return RemoteOracle(args.oracle_url, shape)
    oracle = load_oracle_weights(args.oracle_model)
    if tuple(oracle.input_shape) != tuple(shape):
        raise ConfigError(f"shape mismatch: model expects {oracle.input_shape}, images are {shape}")
    return oracle


def _split(args, ds):
    """Input and held-out index arrays per the sampling flags."""
    if args.sample_per_class is None and args.sample_total is None:
        return np.arange(len(ds)), np.arange(0)
    return stratified_sample(ds.labels, per_class=args.sample_per_class, total=args.sample_total,
                             seed=args.seed, classes=ds.classes)


def _budget(args, X):
    p = parse_norm(args.norm)
    if args.xi is not None:
        if args.xi < 0:
            raise ConfigError("negative budget")
        return p, float(args.xi)
    if not args.zeta > 0:
        raise ConfigError("zeta must be positive")
    return p, xi_from_zeta(args.zeta, X, p)


def _attack_config(args, p, xi, target, trace_path=None):
    if args.mode == TARGETED and target is None:
        raise ConfigError("--mode targeted needs --target")
    if args.mode == NONTARGETED and target is not None:
        raise ConfigError("--target is only valid with --mode targeted")
    try:
        return AttackConfig(mode=args.mode, target=target, epsilon=args.epsilon, xi=xi, norm=p,
                            max_iterations=args.max_iters, directions=args.directions,
                            freq_fraction=args.fd, without_replacement=args.without_replacement,
                            seed=args.seed, clip=args.clip, trace_path=trace_path,
                            progress_every=0 if args.quiet else PROGRESS_EVERY)
    except (ValueError, TensorError) as exc:
        raise ConfigError(str(exc)) from None


def _write_json(path, obj):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(path, obj):
    if path:
        _write_json(path, obj)
    else:
        json.dump(obj, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _run_json_path(*paths):
    for p in paths:
        if p:
            return os.path.join(os.path.dirname(os.path.abspath(p)), "run.json")
    return os.path.abspath("run.json")


def _resolved(args, **extra):
    out = {k: v for k, v in vars(args).items()}
    out.update(extra)
    for k in ("manifest", "oracle_model", "out_uap", "out_trace", "out_metrics", "out_csv", "uap"):
        if out.get(k):
            out[k] = os.path.abspath(out[k])
    out["version"] = __version__
    return out


# ---------------------------------------------------------------- commands

def cmd_attack(args):
    classes = _class_table(args)
    ds = load_dataset(args.manifest, classes=classes)
    target = _resolve_target(args.target, classes)
    inputs, held = _split(args, ds)
    X, X_held = ds.images[inputs], ds.images[held]
    p, xi = _budget(args, X)
    cfg = _attack_config(args, p, xi, target, args.out_trace)
    _write_json(_run_json_path(args.out_uap), _resolved(
        args, classes=classes, xi=xi, target_index=target, attack=cfg.to_dict(),
        inputs=[int(i) for i in inputs], held_out=[int(i) for i in held]))
    oracle = _open_oracle(args, ds.shape)

    try:
        report = run_attack(oracle, X, cfg)
    except AttackAborted as exc:
        print(f"{exc} after {exc.report.iterations} iterations", file=sys.stderr)
        return EXIT_ORACLE

    meta = {"mode": cfg.mode, "target": target, "seed": cfg.seed, "queries": report.queries,
            "epsilon": cfg.epsilon, "directions": cfg.directions, "fd": cfg.freq_fraction,
            "iterations": report.iterations}
    save_uap(args.out_uap, report.delta, meta)

    metrics = {
        "attack": {"iterations": report.iterations, "accepted": report.accepted,
                   "queries": report.queries, "reason": report.reason,
                   "objective": report.objective, "success_rate": report.success_rate,
                   "xi": xi, "norm": norm_name(p), "delta_norm": report.delta.norm()},
        "input": evaluate_uap(oracle, X, report.delta, ds.labels[inputs], target, cfg.clip, classes),
        "held_out": (evaluate_uap(oracle, X_held, report.delta, ds.labels[held], target, cfg.clip, classes)
                     if len(held) else None),
        "classes": classes,
    }
    _emit(args.out_metrics, metrics)
    return EXIT_OK


def cmd_evaluate(args):
    classes = _class_table(args)
    ds = load_dataset(args.manifest, classes=classes)
    delta, meta = load_uap(args.uap)
    if delta.shape != ds.shape:
        raise ConfigError(f"shape mismatch: UAP is {delta.shape}, images are {ds.shape}")
    target = _resolve_target(args.target, classes)
    if target is None and meta.get("mode") == TARGETED:
        target = meta.get("target")
    _write_json(_run_json_path(args.out_metrics), _resolved(
        args, classes=classes, target_index=target, uap_meta=meta))
    oracle = _open_oracle(args, ds.shape)
    out = evaluate_uap(oracle, ds.images, delta, ds.labels, target, args.clip, classes)
    out["classes"] = classes
    out["delta_norm"] = delta.norm()
    _emit(args.out_metrics, out)
    return EXIT_OK


def cmd_baseline(args):
    classes = _class_table(args)
    ds = load_dataset(args.manifest, classes=classes)
    target = _resolve_target(args.target, classes)
    inputs, _ = _split(args, ds)
    X = ds.images[inputs]
    p, xi = _budget(args, X)
    if args.trials < 1:
        raise ConfigError("trials must be at least 1")
    _write_json(_run_json_path(args.out_metrics), _resolved(
        args, classes=classes, xi=xi, norm=norm_name(p), target_index=target))
    oracle = _open_oracle(args, ds.shape)
    out = random_baseline(oracle, X, ds.shape, p, xi, args.trials, args.seed, target, args.clip)
    out.update(xi=xi, norm=norm_name(p), n=int(X.shape[0]))
    _emit(args.out_metrics, out)
    return EXIT_OK


def cmd_sweep(args):
    classes = _class_table(args)
    ds = load_dataset(args.manifest, classes=classes)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad --sizes {args.sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise ConfigError("sizes must be positive")
    target = _resolve_target(args.target, classes)
    p, xi = _budget(args, ds.images)
    cfg = _attack_config(args, p, xi, target)
    _write_json(_run_json_path(args.out_csv), _resolved(
        args, classes=classes, xi=xi, target_index=target, attack=cfg.to_dict(), sizes=sizes))
    oracle = _open_oracle(args, ds.shape)
    try:
        rows = size_sweep(oracle, ds.images, sizes, args.validation_size, args.seed, cfg)
    except AttackAborted as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ORACLE
    write_sweep_csv(args.out_csv, rows)
    return EXIT_OK


def cmd_serve(args):
    from .server import OracleServer

    oracle = load_oracle_weights(args.oracle_model)
    server = OracleServer(oracle, args.host, args.port)
    print(f"serving {server.url}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_toy(args):
    from .toy import make_preset

    tp = make_preset(args.preset, seed=args.seed)
    manifest = write_dataset(args.out_dir, tp.images, tp.labels, tp.classes)
    model = os.path.join(args.out_dir, "model.bin")
    save_oracle_weights(model, tp.oracle)
    print(json.dumps({"manifest": manifest, "model": model, "classes": tp.classes}))
    return EXIT_OK


COMMANDS = {"attack": cmd_attack, "evaluate": cmd_evaluate, "baseline": cmd_baseline,
            "sweep": cmd_sweep, "serve": cmd_serve, "toy": cmd_toy}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"bbuap: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet and not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        msg, code = str(exc), EXIT_CONFIG
    except OracleError as exc:
        msg, code = str(exc), EXIT_ORACLE
    except (DatasetError, ModelFileError, OSError) as exc:
        msg, code = str(exc), EXIT_IO
    except TensorError as exc:
        # bad UAP files are I/O problems; everything else is a bad setting
        msg = str(exc)
        code = EXIT_IO if msg.startswith("invalid UAP file") else EXIT_CONFIG
    except ValueError as exc:
        msg, code = str(exc), EXIT_CONFIG
    print(f"bbuap: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
