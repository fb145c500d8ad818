"""Experiments comparing the network with least-squares fits, plus their export."""

from ..datafile import generate_dataset
from ..model import TrainConfig, build_model, save_model, train
from .experiments import (
    EXPERIMENTS,
    AssistedReport,
    EvalRecord,
    ExperimentConfig,
    PartialReport,
    TruthStub,
    agreement,
    assisted_fit,
    eval_am_noise_sweep,
    eval_benchmark,
    eval_partial,
    make_test_pairs,
    sweep_pairs,
)
from .export import (
    CSV_SCHEMA,
    export,
    plot_beta_sweep,
    plot_losses,
    plot_partial,
    read_records_csv,
    summarize,
    write_records_csv,
    write_summary,
)

__all__ = [
    "EXPERIMENTS",
    "AssistedReport",
    "EvalRecord",
    "ExperimentConfig",
    "PartialReport",
    "TruthStub",
    "agreement",
    "assisted_fit",
    "eval_am_noise_sweep",
    "eval_benchmark",
    "eval_partial",
    "make_test_pairs",
    "sweep_pairs",
    "beta_sweep",
    "CSV_SCHEMA",
    "export",
    "plot_beta_sweep",
    "plot_losses",
    "plot_partial",
    "read_records_csv",
    "summarize",
    "write_records_csv",
    "write_summary",
]


def beta_sweep(betas, arch, cfg, kinds, data_seed, init_seed=0, out_dir=None, progress=None):
    """Train one network per β on identical data from identical initial weights.

    Returns ``{β: history}``. With ``out_dir`` each final model is saved as
    ``beta_<β>.ndn``.
    """
    datasets = [
        generate_dataset(kinds, cfg.samples_per_set, arch.T, data_seed + s) for s in range(cfg.sets)
    ]
    histories = {}
    for beta in betas:
        run_cfg = TrainConfig(**{**cfg.to_dict(), "beta": float(beta)})
        model = build_model(arch, init_seed)
        report = None if progress is None else (lambda msg, b=beta: progress(f"beta={b:g} {msg}"))
        train(model, datasets, run_cfg, progress=report)
        histories[float(beta)] = [dict(h) for h in model.history]
        if out_dir is not None:
            save_model(f"{out_dir}/beta_{float(beta):g}.ndn", model)
    return histories
