"""Benchmarks of a trained network against least-squares fits.

Every metric is computed in normalized space: series through the sample's own
min-max map, latents through :func:`~oscifit.signalgen.encode_latents`.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ..datafile import generate_sample
from ..lsfit import FitOptions, FitProblem, default_bounds, fit_to_clean, lm_fit
from ..rng import make_stream, sub_stream
from ..signalgen import (
    LATENT_FULL,
    LATENT_PARTIAL,
    ProcessKind,
    Ranges,
    TimeGrid,
    decode_latents,
    encode_latents,
    gen_am,
    sample_latents,
)

__all__ = [
    "EvalRecord",
    "ExperimentConfig",
    "AssistedReport",
    "PartialReport",
    "TruthStub",
    "make_test_pairs",
    "sweep_pairs",
    "eval_benchmark",
    "eval_am_noise_sweep",
    "assisted_fit",
    "eval_partial",
    "agreement",
]

EXPERIMENTS = ("benchmark_mono", "benchmark_am_noise_sweep", "assisted_fit", "partial")
NAN = float("nan")


@dataclass
class EvalRecord:
    sample_id: int
    kind: str
    sigma_true: float
    dnn_mse_reg: float = NAN
    dnn_mse_dec: float = NAN
    fit_mse_reg: float = NAN
    fit_mse_dec: float = NAN
    true_guess_sse: float = NAN
    fit_converged: bool = False
    assisted_sse: float = NAN
    assisted_mse_reg: float = NAN
    assisted_mse_dec: float = NAN
    assisted_converged: bool = False
    agree: bool = False

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class ExperimentConfig:
    experiment: str
    n_samples: int = 300
    seed: int = 12345
    checkpoint: str = None
    agreement_epsilon: float = 0.01
    out_dir: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.agreement_epsilon > 0:
            raise ValueError("agreement_epsilon must be > 0")


class TruthStub:
    """Stand-in predictor that answers with the exact targets of known samples.

    Lets the harness be checked against itself: regression error must come out
    zero and assisted fits must agree everywhere.
    """

    def __init__(self, pairs, latent_names=LATENT_FULL):
        self.latent_names = tuple(latent_names)
        self.T = len(pairs[0].clean)
        self._table = {}
        for pair in pairs:
            key = _key(pair.noisy_normalized)
            lat = encode_latents(pair.latents, self.T, self.latent_names, strict=False)
            self._table[key] = (pair.clean_normalized, lat)

    def predict(self, x):
        x = np.atleast_2d(x)
        try:
            rows = [self._table[_key(row)] for row in x]
        except KeyError:
            raise KeyError("TruthStub asked about a sample it was not built from") from None
        return np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows])


def _key(row):
    return np.asarray(row, dtype=np.float32).tobytes()


def _model_T(model):
    return model.arch.T if hasattr(model, "arch") else model.T


def make_test_pairs(kind, n, seed, T):
    """``n`` fresh samples of one process kind, float64 throughout."""
    kind = ProcessKind.parse(kind)
    grid = TimeGrid(T)
    ranges = Ranges.for_length(T)
    return [generate_sample([kind], i, grid, seed, ranges=ranges) for i in range(n)]


def sweep_pairs(n, seed, T):
    """One AM latent draw observed ``n`` times with σ rising linearly over [0, 2]."""
    grid = TimeGrid(T)
    base = sample_latents(ProcessKind.AM, make_stream(seed), T)
    sigmas = np.linspace(0.0, 2.0, n)
    return [gen_am(grid, base.replace(sigma=float(s)), sub_stream(seed, i)) for i, s in enumerate(sigmas)]


def _names(model, exclude_sigma):
    names = tuple(model.latent_names)
    if exclude_sigma:
        names = tuple(n for n in names if n != "sigma")
    return names


def _predict(model, pairs):
    x = np.stack([p.noisy_normalized for p in pairs]).astype(np.float32)
    sig, lat = model.predict(x)
    return np.asarray(sig, dtype=np.float64), np.asarray(lat, dtype=np.float64)


def _mse(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def _fit(pair, init, kind, options):
    grid = TimeGrid(len(pair.noisy))
    problem = FitProblem(kind, pair.noisy, grid, init, default_bounds(kind, grid.T), options)
    return lm_fit(problem)


def _fit_metrics(pair, result, names, keep, T):
    clean_fit = pair.norm.apply(fit_to_clean(result, TimeGrid(T)))
    truth = encode_latents(pair.latents, T, names, strict=False)
    est = encode_latents(result.params, T, names, strict=False)
    return _mse(est[keep], truth[keep]), _mse(clean_fit, pair.clean_normalized)


def _score(model, pairs, kind, exclude_sigma, fit_options):
    T = _model_T(model)
    names = tuple(model.latent_names)
    keep = np.array([n in _names(model, exclude_sigma) for n in names])
    sig, lat = _predict(model, pairs)
    records = []
    for i, pair in enumerate(pairs):
        truth = encode_latents(pair.latents, T, names, strict=False)
        rec = EvalRecord(
            sample_id=i,
            kind=ProcessKind.parse(pair.latents.kind).label,
            sigma_true=pair.latents.sigma,
            dnn_mse_reg=_mse(lat[i][keep], truth[keep]),
            dnn_mse_dec=_mse(sig[i], pair.clean_normalized),
        )
        res = _fit(pair, pair.latents, kind, fit_options)
        rec.true_guess_sse = res.sse
        rec.fit_converged = res.converged
        rec.fit_mse_reg, rec.fit_mse_dec = _fit_metrics(pair, res, names, keep, T)
        records.append((rec, res, lat[i]))
    return records


def _by_sigma(records):
    return sorted(records, key=lambda r: (r.sigma_true, r.sample_id))


def eval_benchmark(model, kind, n, seed, exclude_sigma=False, fit_options=None, pairs=None):
    """DNN versus true-guess LS fits on ``n`` fresh samples, sorted by σ."""
    kind = ProcessKind.parse(kind)
    pairs = pairs if pairs is not None else make_test_pairs(kind, n, seed, _model_T(model))
    scored = _score(model, pairs, kind, exclude_sigma, fit_options or FitOptions())
    return _by_sigma([rec for rec, _, _ in scored])


def eval_am_noise_sweep(model, n, seed, exclude_sigma=False, fit_options=None):
    pairs = sweep_pairs(n, seed, _model_T(model))
    return eval_benchmark(model, ProcessKind.AM, n, seed, exclude_sigma, fit_options, pairs=pairs)


def agreement(assisted_sse, true_sse, epsilon=0.01, floor=1e-9):
    return abs(assisted_sse - true_sse) <= epsilon * max(true_sse, floor)


@dataclass
class AssistedReport:
    records: list
    epsilon: float
    floor: float

    @property
    def agreement(self):
        return sum(r.agree for r in self.records) / len(self.records)


def assisted_fit(model, kind, n, seed, epsilon=0.01, floor=1e-9, exclude_sigma=False,
                 fit_options=None, pairs=None):
    """Fit each sample twice: from the decoded network prediction and from the truth.

    A sample agrees when the two final SSEs differ by at most
    ``epsilon·max(true_sse, floor)``.
    """
    kind = ProcessKind.parse(kind)
    T = _model_T(model)
    options = fit_options or FitOptions()
    pairs = pairs if pairs is not None else make_test_pairs(kind, n, seed, T)
    names = tuple(model.latent_names)
    keep = np.array([nm in _names(model, exclude_sigma) for nm in names])
    out = []
    for rec, true_res, lat in _score(model, pairs, kind, exclude_sigma, options):
        pair = pairs[rec.sample_id]
        init = decode_latents(lat, T, kind, names, clamp=None)
        res = _fit(pair, init, kind, options)
        rec.assisted_sse = res.sse
        rec.assisted_converged = res.converged
        rec.assisted_mse_reg, rec.assisted_mse_dec = _fit_metrics(pair, res, names, keep, T)
        rec.agree = agreement(res.sse, true_res.sse, epsilon, floor)
        out.append(rec)
    return AssistedReport(_by_sigma(out), epsilon, floor)


@dataclass
class PartialReport:
    """Per-latent RMSE (normalized space) of both networks on one AM test set.

    ``rows`` maps a row name to ``(partial, specialized)``; the partial column
    is ``None`` for latents that network does not regress.
    """

    rows: dict = field(default_factory=dict)
    n: int = 0

    def ratio(self, name):
        partial, spec = self.rows[name]
        return partial / spec


def _rmse(err):
    return float(math.sqrt(np.mean(np.square(err))))


def _latent_rmse(names, pred, truth):
    out = {}
    idx = {n: i for i, n in enumerate(names)}
    for name in ("fc", "tau", "sigma", "fm", "im"):
        if name in idx:
            out[name] = _rmse(pred[:, idx[name]] - truth[:, idx[name]])
    if "sin_phi" in idx:
        cols = [idx["sin_phi"], idx["cos_phi"]]
        out["phi"] = _rmse(pred[:, cols] - truth[:, cols])
    return out


def eval_partial(partial_model, specialized_model, n, seed):
    """Compare a 5-latent mixed-kind network with a 7-latent AM specialist on AM data."""
    if tuple(partial_model.latent_names) != LATENT_PARTIAL:
        raise ValueError(f"partial model must regress {LATENT_PARTIAL}, has {partial_model.latent_names}")
    if tuple(specialized_model.latent_names) != LATENT_FULL:
        raise ValueError(f"specialized model must regress {LATENT_FULL}")
    T = _model_T(partial_model)
    if _model_T(specialized_model) != T:
        raise ValueError("both models must share the series length")
    pairs = make_test_pairs(ProcessKind.AM, n, seed, T)
    clean = np.stack([p.clean_normalized for p in pairs])
    columns = {}
    for label, model in (("partial", partial_model), ("specialized", specialized_model)):
        sig, lat = _predict(model, pairs)
        truth = np.stack([encode_latents(p.latents, T, model.latent_names, strict=False) for p in pairs])
        stats = _latent_rmse(model.latent_names, lat, truth)
        stats["signal"] = _rmse(sig - clean)
        columns[label] = stats
    order = ["fc", "phi", "tau", "sigma", "fm", "im", "signal"]
    rows = {
        name: (columns["partial"].get(name), columns["specialized"].get(name))
        for name in order
        if name in columns["specialized"] or name in columns["partial"]
    }
    return PartialReport(rows, n)
