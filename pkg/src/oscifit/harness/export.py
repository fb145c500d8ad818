"""CSV, JSON and SVG output of evaluation records.

The CSV header is mandatory and fixed; its schema tag is stored in the JSON
summary under ``csv_schema``. SVG output is byte-stable for fixed inputs.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .experiments import EvalRecord

__all__ = [
    "CSV_SCHEMA",
    "SUMMARY_SCHEMA",
    "write_records_csv",
    "read_records_csv",
    "summarize",
    "write_summary",
    "plot_losses",
    "plot_partial",
    "plot_beta_sweep",
    "export",
]

CSV_SCHEMA = "oscifit.records/1"
SUMMARY_SCHEMA = "oscifit.summary/1"
FIELDS = EvalRecord.field_names()
_BOOL = {"fit_converged", "assisted_converged", "agree"}
_INT = {"sample_id"}
_STR = {"kind"}
LOSS_COLUMNS = ("dnn_mse_reg", "dnn_mse_dec", "fit_mse_reg", "fit_mse_dec", "assisted_mse_reg", "assisted_mse_dec")


def _fmt(name, value):
    if name in _BOOL:
        return "1" if value else "0"
    if name in _INT or name in _STR:
        return str(value)
    return repr(float(value))


def _parse(name, text):
    if name in _BOOL:
        return text == "1"
    if name in _INT:
        return int(text)
    if name in _STR:
        return text
    return float(text)


def write_records_csv(path, records):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for rec in records:
            w.writerow([_fmt(n, getattr(rec, n)) for n in FIELDS])
    return path


def read_records_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FIELDS:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        return [EvalRecord(**{n: _parse(n, v) for n, v in zip(FIELDS, row)}) for row in reader]


def _stat(values, fn):
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    return float(fn(arr)) if arr.size else None


def summarize(records, epsilon=None, partial=None):
    """Means and medians per loss column, plus the σ ∈ [1, 2] medians."""
    if not records:
        raise ValueError("no records to summarize")
    out = {"schema": SUMMARY_SCHEMA, "csv_schema": CSV_SCHEMA, "n": len(records)}
    top = [r for r in records if 1.0 <= r.sigma_true <= 2.0]
    out["n_top_half"] = len(top)
    for col in LOSS_COLUMNS:
        vals = [getattr(r, col) for r in records]
        out[col] = {
            "mean": _stat(vals, np.mean),
            "median": _stat(vals, np.median),
            "median_top_half": _stat([getattr(r, col) for r in top], np.median),
        }
    if any(not math.isnan(r.assisted_sse) for r in records):
        out["agreement"] = sum(r.agree for r in records) / len(records)
        out["agreement_epsilon"] = epsilon
    out["fit_converged_fraction"] = sum(r.fit_converged for r in records) / len(records)
    if partial is not None:
        out["partial"] = {"n": partial.n, "rows": {k: list(v) for k, v in partial.rows.items()}}
    return out


def write_summary(path, summary):
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "oscifit"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path):
    plt = _pyplot()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def plot_losses(path, records, title=""):
    """Regression and denoising losses against noise rank, log scale."""
    plt = _pyplot()
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    rank = np.arange(len(records))
    for ax, what in zip(axes, ("reg", "dec")):
        for src, style in (("dnn", "-"), ("fit", "--"), ("assisted", ":")):
            y = np.array([getattr(r, f"{src}_mse_{what}") for r in records], dtype=np.float64)
            if np.all(np.isnan(y)):
                continue
            ax.plot(rank, np.maximum(y, 1e-16), style, lw=0.8, label=src)
        ax.set_yscale("log")
        ax.set_ylabel(f"MSE {what}")
        ax.legend(loc="upper left", fontsize=8)
    axes[-1].set_xlabel("sample rank by noise level")
    if title:
        axes[0].set_title(title)
    return _save(fig, path)


def plot_partial(path, report):
    """Grouped RMSE bars of the partial and specialised networks."""
    plt = _pyplot()
    names = list(report.rows)
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7, 4))
    for off, col, label in ((-0.2, 0, "partial"), (0.2, 1, "specialized")):
        vals = [report.rows[n][col] for n in names]
        ax.bar(x + off, [np.nan if v is None else v for v in vals], width=0.4, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("RMSE (normalized)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_beta_sweep(path, histories):
    """Validation curves per β; ``histories`` maps β to a list of history dicts."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for beta in sorted(histories):
        h = histories[beta]
        idx = [e["set_index"] for e in h]
        axes[0].plot(idx, [e["mse_reg"] for e in h], marker="o", ms=3, label=f"β={beta:g}")
        axes[1].plot(idx, [e["mse_dec"] for e in h], marker="o", ms=3, label=f"β={beta:g}")
    for ax, name in zip(axes, ("MSE reg", "MSE dec")):
        ax.set_yscale("log")
        ax.set_xlabel("training sets seen")
        ax.set_ylabel(name)
    axes[1].legend(fontsize=8)
    return _save(fig, path)


def export(records, out_dir, stem="records", epsilon=None, partial=None, title=""):
    """Write ``<stem>.csv``, ``<stem>.summary.json`` and ``<stem>.svg``; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(out / f"{stem}.csv", records)
    summary = summarize(records, epsilon, partial)
    write_summary(out / f"{stem}.summary.json", summary)
    plot_losses(out / f"{stem}.svg", records, title)
    if partial is not None:
        plot_partial(out / f"{stem}.partial.svg", partial)
    return summary
