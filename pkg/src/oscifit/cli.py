"""``oscifit`` command line: generation, training, fitting and experiments.

Every subcommand reads an optional JSON config (``--config``), lets flags
override it, and writes all artifacts plus ``config.json`` and
``manifest.json`` into ``--out``. Exit status: 0 success, 1 usage or config
error, 2 runtime failure.
"""

import argparse
import csv
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMAS, ConfigError, config_hash, dumps, validate_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    parser = _Parser(prog="oscifit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"oscifit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command, help=f"{command} (see README)")
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", required=True, help="output directory")
        for name, f in schema.items():
            kw = {"dest": name, "default": None}
            if f.kind == "bool":
                kw["action"] = argparse.BooleanOptionalAction
            elif f.kind == "int":
                kw["type"] = int
            elif f.kind == "float":
                kw["type"] = float
            p.add_argument(_flag(name), **kw)
    return parser


# ---------------------------------------------------------------- helpers


def _versions():
    import matplotlib

    out = {"oscifit": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "matplotlib": matplotlib.__version__}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        out["numba"] = None
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _say(msg):
    print(msg, flush=True)


def _dataset_seed(seed, s):
    return seed + 1000 * (s + 1)


def _load(path):
    from .model import load_model

    if not Path(path).is_file():
        raise RuntimeError(f"checkpoint: file not found: {path}")
    return load_model(path)


def _read_data(path):
    from .datafile import read_dataset

    if not Path(path).is_file():
        raise RuntimeError(f"data: file not found: {path}")
    return read_dataset(path)


# ---------------------------------------------------------------- commands


def cmd_generate(cfg, out):
    from .datafile import make_dataset

    ds = make_dataset(cfg["kinds"], cfg["n"], cfg["T"], cfg["seed"], out / "dataset.osc",
                      envelope_sidebands=cfg["envelope_sidebands"], fm_range=cfg["fm_range_override"])
    _say(f"wrote {len(ds)} records of length {ds.T} to {out / 'dataset.osc'}")
    return {"records": len(ds)}


def _arch(cfg, partial=False):
    from .model import ArchConfig

    return ArchConfig.for_profile(cfg["profile"], partial, cfg["T"])


def _train_config(cfg, beta=None):
    from .model import TrainConfig

    keys = ("epochs", "sets", "samples_per_set", "batch", "seed", "lr", "beta1", "beta2", "eps", "val_fraction")
    return TrainConfig(beta=cfg["beta"] if beta is None else beta, **{k: cfg[k] for k in keys})


def _write_history(path, history):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set_index", "mse_reg", "mse_dec", "weighted"])
        for h in history:
            w.writerow([h["set_index"], repr(h["mse_reg"]), repr(h["mse_dec"]), repr(h["weighted"])])


def cmd_train(cfg, out):
    from .datafile import generate_dataset
    from .model import auto_beta, build_model, save_model, train

    arch = _arch(cfg, cfg["partial"])
    if cfg["data"]:
        datasets = [_read_data(p) for p in cfg["data"]]
        for p, ds in zip(cfg["data"], datasets):
            if ds.T != arch.T:
                raise RuntimeError(f"data: {p} has T={ds.T} but the model expects T={arch.T}")
    else:
        datasets = [
            generate_dataset(cfg["kinds"], cfg["samples_per_set"], arch.T, _dataset_seed(cfg["seed"], s))
            for s in range(cfg["sets"])
        ]
    model = build_model(arch, cfg["seed"])
    beta = cfg["beta"]
    if cfg["auto_beta"]:
        ds = datasets[0]
        k = min(len(ds), 256)
        beta = auto_beta(model, ds.inputs()[:k], ds.signal_targets()[:k], ds.latent_targets(arch.latent_names)[:k])
        _say(f"auto beta = {beta:.6g}")
    tc = _train_config(cfg, beta)
    train(model, datasets, tc, checkpoint_dir=out / "checkpoints", progress=_say)
    save_model(out / "model.ndn", model)
    _write_history(out / "history.csv", model.history)
    last = model.history[-1]
    _say(f"final validation mse_reg={last['mse_reg']:.6g} mse_dec={last['mse_dec']:.6g}")
    return {"beta": beta, "final": last, "n_params": model.n_params()}


def cmd_predict(cfg, out):
    from .signalgen import decode_latents

    model = _load(cfg["checkpoint"])
    ds = _read_data(cfg["data"])
    if ds.T != model.arch.T:
        raise RuntimeError(f"data: T={ds.T} does not match checkpoint T={model.arch.T}")
    x = ds.inputs()
    sig, lat = model.predict(x)
    np.savez(out / "predictions.npz", denoised=sig, latents=lat)
    with (out / "latents.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "kind", "fc", "phi", "tau", "fm", "im", "sigma"])
        for i in range(len(ds)):
            kind = ds.params(i).kind
            p = decode_latents(lat[i], ds.T, kind, model.latent_names, clamp=None)
            w.writerow([i, kind.label] + [repr(v) for v in (p.fc, p.phi, p.tau, p.fm, p.im, p.sigma)])
    mse_dec = float(np.mean((sig.astype(np.float64) - ds.signal_targets(np.float64)) ** 2))
    mse_reg = float(np.mean((lat.astype(np.float64) - ds.latent_targets(model.latent_names, np.float64)) ** 2))
    _say(f"{len(ds)} samples: mse_reg={mse_reg:.6g} mse_dec={mse_dec:.6g}")
    return {"mse_reg": mse_reg, "mse_dec": mse_dec}


def cmd_fit(cfg, out):
    from .lsfit import FitOptions, FitProblem, default_bounds, lm_fit, write_fits_csv
    from .signalgen import TimeGrid, decode_latents

    ds = _read_data(cfg["data"])
    n = len(ds) if cfg["limit"] is None else min(cfg["limit"], len(ds))
    grid = TimeGrid(ds.T)
    options = FitOptions(max_iter=cfg["max_iter"])
    lat = None
    if cfg["init"] == "checkpoint":
        model = _load(cfg["checkpoint"])
        if model.arch.T != ds.T:
            raise RuntimeError(f"checkpoint: T={model.arch.T} does not match data T={ds.T}")
        _, lat = model.predict(ds.inputs()[:n])
    results = []
    for i in range(n):
        p = ds.params(i)
        init = p if lat is None else decode_latents(lat[i], ds.T, p.kind, model.latent_names, clamp=None)
        problem = FitProblem(p.kind, ds.noisy[i].astype(np.float64), grid, init,
                             default_bounds(p.kind, ds.T), options)
        results.append(lm_fit(problem))
    write_fits_csv(out / "fits.csv", results)
    conv = sum(r.converged for r in results) / n
    med = float(np.median([r.sse / ds.T for r in results]))
    _say(f"{n} fits: converged {conv:.1%}, median sse/T {med:.6g}")
    return {"n": n, "converged_fraction": conv, "median_sse_per_T": med}


def cmd_benchmark(cfg, out):
    from .harness import eval_am_noise_sweep, eval_benchmark, export

    model = _load(cfg["checkpoint"])
    if cfg["sweep"]:
        records = eval_am_noise_sweep(model, cfg["n"], cfg["seed"], cfg["exclude_sigma"])
    else:
        records = eval_benchmark(model, cfg["kind"], cfg["n"], cfg["seed"], cfg["exclude_sigma"])
    summary = export(records, out, "benchmark", title="am noise sweep" if cfg["sweep"] else cfg["kind"])
    for col in ("dnn_mse_dec", "fit_mse_dec", "dnn_mse_reg", "fit_mse_reg"):
        s = summary[col]
        _say(f"{col}: median {s['median']:.6g}, median over sigma in [1,2] {s['median_top_half']}")
    return {"n": len(records)}


def cmd_assisted(cfg, out):
    from .harness import assisted_fit, export

    model = _load(cfg["checkpoint"])
    report = assisted_fit(model, cfg["kind"], cfg["n"], cfg["seed"], cfg["epsilon"], cfg["floor"])
    export(report.records, out, "assisted", epsilon=cfg["epsilon"], title=f"assisted {cfg['kind']}")
    _say(f"agreement {report.agreement:.1%} over {len(report.records)} samples")
    return {"agreement": report.agreement}


def cmd_partial(cfg, out):
    from .harness import eval_partial, plot_partial

    report = eval_partial(_load(cfg["partial_checkpoint"]), _load(cfg["specialized_checkpoint"]),
                          cfg["n"], cfg["seed"])
    _write_json(out / "partial.json", {"n": report.n, "rows": {k: list(v) for k, v in report.rows.items()}})
    plot_partial(out / "partial.svg", report)
    for name, (a, b) in report.rows.items():
        _say(f"{name:>6}: partial {a if a is None else f'{a:.5g}'}  specialized {b:.5g}")
    return {"rows": len(report.rows)}


def cmd_beta_sweep(cfg, out):
    from .harness import beta_sweep, plot_beta_sweep

    histories = beta_sweep(cfg["betas"], _arch(cfg), _train_config(cfg), cfg["kinds"],
                           _dataset_seed(cfg["seed"], 0), cfg["seed"], out_dir=out, progress=_say)
    _write_json(out / "histories.json", {f"{b:g}": h for b, h in histories.items()})
    plot_beta_sweep(out / "beta_sweep.svg", histories)
    for b, h in histories.items():
        _say(f"beta={b:g}: final mse_reg={h[-1]['mse_reg']:.6g} mse_dec={h[-1]['mse_dec']:.6g}")
    return {"betas": list(histories)}


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "fit": cmd_fit,
    "benchmark": cmd_benchmark,
    "assisted": cmd_assisted,
    "partial": cmd_partial,
    "beta-sweep": cmd_beta_sweep,
}


def _limit_threads():
    value = os.environ.get("OSCIFIT_THREADS")
    if not value:
        return None
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"OSCIFIT_THREADS must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None):
    """Parse ``argv``, run one subcommand and return the exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
        cfg = validate_config(args.config, args.command, overrides)
        limiter = _limit_threads()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(dumps(cfg))
        result = COMMANDS[args.command](cfg, out)
        from .ndnet import backend

        manifest = {
            "command": args.command,
            "argv": argv,
            "config_hash": config_hash(args.command, cfg),
            "seed": cfg["seed"],
            "versions": _versions(),
            "kernel_backend": backend(),
            "threads": os.environ.get("OSCIFIT_THREADS"),
            "result": result,
        }
        _write_json(out / "manifest.json", manifest)
    except (RuntimeError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
