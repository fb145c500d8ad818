"""Levenberg-Marquardt fits of the noiseless generating models to noisy series.

The noise level is not a fit variable; the fitted model's residual RMS
(``sigma_hat``) stands in for it.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signalgen import TWO_PI, LatentParams, ProcessKind, Ranges, TimeGrid, clean_signal

__all__ = [
    "FREE_PARAMS",
    "FitOptions",
    "FitProblem",
    "FitResult",
    "BoundsError",
    "default_bounds",
    "residuals",
    "jacobian",
    "lm_fit",
    "fit_to_clean",
    "write_fits_csv",
    "read_fits_csv",
]

FREE_PARAMS = {
    ProcessKind.MONO: ("fc", "phi", "tau"),
    ProcessKind.AM: ("fc", "phi", "tau", "fm", "im"),
    ProcessKind.FM: ("fc", "phi", "tau", "fm", "im"),
}


class BoundsError(ValueError):
    pass


def default_bounds(kind, T, ranges=None, widen=0.2):
    """Sampling ranges widened by ``widen`` of their width (half per side).

    Lower bounds of Fc, τ and Fm never drop below half their nominal floor and
    Im stays non-negative. Phase is unbounded during the fit and wrapped after.
    """
    r = ranges or Ranges.for_length(T)
    out = {}
    for name in FREE_PARAMS[ProcessKind.parse(kind)]:
        if name == "phi":
            out[name] = (-math.inf, math.inf)
            continue
        lo, hi = getattr(r, name)
        pad = 0.5 * widen * (hi - lo)
        floor = 0.0 if name == "im" else 0.5 * lo
        out[name] = (max(lo - pad, floor), hi + pad)
    return out


@dataclass
class FitOptions:
    max_iter: int = 200
    ftol: float = 1e-10
    xtol: float = 1e-10
    sse_tol: float = 1e-20
    lambda0: float = 1e-3
    lambda_factor: float = 10.0
    lambda_singular: float = 1e8
    lambda_stall: float = 1e12
    envelope_sidebands: bool = True


@dataclass
class FitProblem:
    kind: ProcessKind
    series: np.ndarray
    grid: TimeGrid
    init: LatentParams
    bounds: dict = None
    options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        self.kind = ProcessKind.parse(self.kind)
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.shape != (self.grid.T,):
            raise ValueError(f"series length {self.series.shape} does not match T={self.grid.T}")
        if self.bounds is None:
            self.bounds = default_bounds(self.kind, self.grid.T)
        _check_bounds(self.kind, self.init, self.bounds)


@dataclass
class FitResult:
    params: LatentParams
    sse: float
    converged: bool
    iterations: int
    sigma_hat: float
    message: str = ""
    trace: list = field(default_factory=list)  # SSE at the start and after every accepted step


def _check_bounds(kind, p, bounds):
    for name in FREE_PARAMS[kind]:
        lo, hi = bounds[name]
        v = getattr(p, name)
        if not (lo <= v <= hi):
            raise BoundsError(f"{name}={v!r} outside fit bounds [{lo!r}, {hi!r}]")


def _with(p, kind, names, x):
    values = dict(zip(names, (float(v) for v in x)))
    if kind is ProcessKind.MONO:
        values.update(fm=0.0, im=0.0)
    return p.replace(kind=kind, **values)


def residuals(kind, params, series, grid, bounds=None, envelope_sidebands=True):
    """``series - model(params)`` over the grid; σ plays no part."""
    kind = ProcessKind.parse(kind)
    if bounds is not None:
        _check_bounds(kind, params, bounds)
    model = clean_signal(kind, params, grid.t, envelope_sidebands)
    return np.asarray(series, dtype=np.float64) - model


def _jacobian(fun, x, lo, hi, r0):
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = max(1e-7, 1e-7 * abs(x[j]))
        if x[j] + h > hi[j]:
            h = -h
        xh = x.copy()
        xh[j] += h
        J[:, j] = (fun(xh) - r0) / h
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("non-finite Jacobian entries")
    return J


def jacobian(kind, params, series, grid, bounds=None, envelope_sidebands=True):
    """Forward-difference Jacobian of the residuals, one column per free parameter.

    Steps are ``max(1e-7, 1e-7·|p|)``, taken backwards at an upper bound.
    """
    kind = ProcessKind.parse(kind)
    bounds = bounds or default_bounds(kind, grid.T)
    names = FREE_PARAMS[kind]
    x = np.array([getattr(params, n) for n in names])
    lo = np.array([bounds[n][0] for n in names])
    hi = np.array([bounds[n][1] for n in names])

    def fun(v):
        return residuals(kind, _with(params, kind, names, v), series, grid, None, envelope_sidebands)

    return _jacobian(fun, x, lo, hi, fun(x))


def lm_fit(problem):
    """Damped Gauss-Newton with Marquardt diagonal scaling.

    λ starts at ``lambda0`` and is multiplied by 10 on a rejected step, divided
    by 10 on an accepted one. Iteration stops once SSE falls below
    ``sse_tol·T``, the relative SSE decrease drops under ``ftol``, the relative
    step under ``xtol``, or after ``max_iter`` iterations. Normal equations that
    stay singular up to ``lambda_singular`` end the fit unconverged.
    """
    kind = problem.kind
    opt = problem.options
    names = FREE_PARAMS[kind]
    T = problem.grid.T
    lo = np.array([problem.bounds[n][0] for n in names])
    hi = np.array([problem.bounds[n][1] for n in names])
    base = problem.init

    def fun(v):
        model = clean_signal(kind, _with(base, kind, names, v), problem.grid.t, opt.envelope_sidebands)
        return problem.series - model

    x = np.array([getattr(base, n) for n in names], dtype=np.float64)
    r = fun(x)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("non-finite model values at the initial guess")
    sse = float(r @ r)
    trace = [sse]
    lam = opt.lambda0
    converged = False
    message = "max_iter reached"
    it = 0
    while it < opt.max_iter:
        if sse <= opt.sse_tol * T:
            converged, message = True, "sse below tolerance"
            break
        it += 1
        J = _jacobian(fun, x, lo, hi, r)
        A = J.T @ J
        g = J.T @ r
        d = np.diag(A).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        accepted = False
        while True:
            try:
                delta = np.linalg.solve(A + lam * np.diag(d), g)  # x_new = x - delta
            except np.linalg.LinAlgError:
                lam *= opt.lambda_factor
                if lam >= opt.lambda_singular:
                    return _result(kind, base, names, x, r, False, it, "singular normal equations", trace)
                continue
            x_new = np.clip(x - delta, lo, hi)
            r_new = fun(x_new)
            sse_new = float(r_new @ r_new)
            if math.isfinite(sse_new) and sse_new < sse:
                accepted = True
                lam = max(lam / opt.lambda_factor, 1e-300)
                break
            lam *= opt.lambda_factor
            if lam > opt.lambda_stall:
                break
        if not accepted:
            converged, message = True, "no further decrease"
            break
        step = x_new - x
        rel_dec = (sse - sse_new) / sse
        x, r, sse = x_new, r_new, sse_new
        trace.append(sse)
        if rel_dec < opt.ftol:
            converged, message = True, "relative sse decrease below ftol"
            break
        if np.linalg.norm(step / np.maximum(np.abs(x), 1e-12)) < opt.xtol:
            converged, message = True, "step below xtol"
            break
    return _result(kind, base, names, x, r, converged, it, message, trace)


def _result(kind, base, names, x, r, converged, it, message, trace):
    sse = float(r @ r)
    sigma_hat = math.sqrt(sse / r.size)
    p = _with(base, kind, names, x)
    phi = p.phi % TWO_PI
    if phi >= TWO_PI:
        phi = 0.0
    p = p.replace(phi=phi, sigma=sigma_hat)
    return FitResult(p, sse, converged, it, sigma_hat, message, trace)


def fit_to_clean(result, grid, envelope_sidebands=True):
    """Noiseless series regenerated from the fitted parameters."""
    p = result.params if isinstance(result, FitResult) else result
    return clean_signal(p.kind, p, grid.t, envelope_sidebands)


CSV_FIELDS = ["sample_id", "kind", "fc", "phi", "tau", "fm", "im", "sse", "converged", "iterations", "sigma_hat"]


def write_fits_csv(path, results, sample_ids=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for i, res in enumerate(results):
            p = res.params
            sid = sample_ids[i] if sample_ids is not None else i
            w.writerow(
                [sid, p.kind.label, repr(p.fc), repr(p.phi), repr(p.tau), repr(p.fm), repr(p.im),
                 repr(res.sse), int(res.converged), res.iterations, repr(res.sigma_hat)]
            )
    return path


def read_fits_csv(path):
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            kind = ProcessKind.parse(row["kind"])
            p = LatentParams(
                float(row["fc"]), float(row["phi"]), float(row["tau"]), float(row["fm"]),
                float(row["im"]), float(row["sigma_hat"]), kind,
            )
            rows.append(
                (int(row["sample_id"]),
                 FitResult(p, float(row["sse"]), bool(int(row["converged"])), int(row["iterations"]),
                           float(row["sigma_hat"])))
            )
    return rows
