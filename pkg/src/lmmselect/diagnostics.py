"""Batch-means ESS/MCSE, the relative standard deviation stopping rule and
posterior summaries of a chain trace."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import DesignConfig, poly_basis, rescale_time

MIN_WINDOW = 100
DEFAULT_THRESHOLD = 0.8772


@dataclass(frozen=True)
class FwsrConfig:
    epsilon: float = 0.124
    delta: float = 0.05

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def z_critical(delta):
    """Upper δ/2 standard-normal quantile."""
    return float(norm.isf(delta / 2.0))


def ess_target(cfg: FwsrConfig) -> float:
    """Effective sample size implied by the stopping rule, 4 z²/ε²."""
    z = z_critical(cfg.delta)
    return 4.0 * z * z / (cfg.epsilon * cfg.epsilon)


def batch_means_variance(x) -> float:
    """Non-overlapping batch-means estimate of the asymptotic variance.

    Batch size is ⌊√n⌋; trailing draws that do not fill a batch are dropped.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    bsize = int(math.isqrt(n))
    nbatch = n // bsize
    if nbatch < 2:
        raise ValueError("too few draws for batch means")
    means = x[: nbatch * bsize].reshape(nbatch, bsize).mean(axis=1)
    return float(bsize * np.var(means, ddof=1))


def ess(x) -> float:
    """n s² / σ̂²_BM. A constant column has ESS n by convention."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 10:
        raise ValueError("ESS needs at least 10 draws")
    s2 = float(np.var(x, ddof=1))
    if s2 == 0.0:
        return float(n)
    sigma2 = batch_means_variance(x)
    if sigma2 == 0.0:
        return math.inf
    return n * s2 / sigma2


def mcse(x) -> float:
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 10 or np.all(x == x[0]):
        return 0.0
    return math.sqrt(batch_means_variance(x) / n)


def fwsr_pass(x, cfg: FwsrConfig, n=None, min_window=MIN_WINDOW) -> bool:
    """Relative standard deviation fixed-width check for one scalar column.

    Passes when the full interval width ``2 z σ̂/√n`` plus ``1/n`` is at most
    ``ε s``; this is the form equivalent to ``ess(x) >= ess_target(cfg)``.
    A constant column passes once ``n`` itself reaches the ESS target.
    """
    x = np.asarray(x, dtype=float)
    if n is not None:
        x = x[:n]
    n = len(x)
    if n < max(min_window, 10):
        return False
    s = float(np.std(x, ddof=1))
    if s == 0.0:
        return n >= ess_target(cfg)
    half = z_critical(cfg.delta) * math.sqrt(batch_means_variance(x) / n)
    return 2.0 * half + 1.0 / n <= cfg.epsilon * s


@dataclass
class ParamSummary:
    name: str
    kind: str
    group: str | None
    degree: int | None
    mean: float
    mcse: float
    ci_lo: float
    ci_hi: float
    incl_prob: float | None = None
    incl_mcse: float | None = None


@dataclass
class PosteriorReport:
    group_labels: tuple
    w_degrees: tuple
    x_degrees: tuple
    n_draws: int
    rows: list
    alpha_mean: np.ndarray
    beta_mean: np.ndarray
    inclusion: np.ndarray
    inclusion_mcse: np.ndarray
    model_averaged_beta: bool = True
    extra: dict = field(default_factory=dict)

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _interval(x):
    lo, hi = np.quantile(x, [0.025, 0.975])
    return float(lo), float(hi)


def summarize(trace) -> PosteriorReport:
    """Posterior means, MCSEs, 95% equal-tailed intervals and inclusion
    probabilities. β summaries are model averaged: inactive draws count as 0."""
    draws = np.asarray(trace.draws, dtype=float)
    if len(draws) == 0:
        raise ValueError("empty trace")
    labels = tuple(trace.group_labels)
    G, px = len(labels), len(trace.x_degrees)
    rows = []
    alpha_mean = np.zeros(len(trace.w_degrees))
    for k, deg in enumerate(trace.w_degrees):
        x = draws[:, trace.col(f"alpha_{deg}")]
        alpha_mean[k] = x.mean()
        rows.append(ParamSummary(f"alpha_{deg}", "alpha", None, deg, float(x.mean()), mcse(x), *_interval(x)))
    inclusion = np.zeros((G, px))
    inclusion_mcse = np.zeros((G, px))
    beta_mean = np.zeros((G, px))
    for g, lab in enumerate(labels[:-1]):
        for j, deg in enumerate(trace.x_degrees):
            gam = draws[:, trace.col(f"gamma_{lab}_{deg}")]
            bet = draws[:, trace.col(f"beta_{lab}_{deg}")]
            inclusion[g, j] = gam.mean()
            inclusion_mcse[g, j] = mcse(gam)
            beta_mean[g, j] = bet.mean()
            rows.append(
                ParamSummary(
                    f"beta_{lab}_{deg}", "beta", lab, deg, float(bet.mean()), mcse(bet), *_interval(bet),
                    incl_prob=float(inclusion[g, j]), incl_mcse=float(inclusion_mcse[g, j]),
                )
            )
    for name in ("sigma2", "lambda_D"):
        x = draws[:, trace.col(name)]
        rows.append(ParamSummary(name, name, None, None, float(x.mean()), mcse(x), *_interval(x)))
    return PosteriorReport(
        group_labels=labels,
        w_degrees=tuple(trace.w_degrees),
        x_degrees=tuple(trace.x_degrees),
        n_draws=len(draws),
        rows=rows,
        alpha_mean=alpha_mean,
        beta_mean=beta_mean,
        inclusion=inclusion,
        inclusion_mcse=inclusion_mcse,
    )


def classify(report: PosteriorReport, threshold=DEFAULT_THRESHOLD) -> np.ndarray:
    """Flag (g, j) as significant when Pr(γ_gj = 1 | y) > threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return report.inclusion > threshold


def fitted_trajectories(report: PosteriorReport, config: DesignConfig, time_grid) -> dict:
    """Model-averaged mean curve per group on a raw-time grid."""
    t = rescale_time(time_grid, config)
    base = poly_basis(t, report.w_degrees) @ report.alpha_mean
    Xb = poly_basis(t, report.x_degrees)
    return {lab: base + Xb @ report.beta_mean[g] for g, lab in enumerate(report.group_labels)}


def pooled_summary(traces):
    """Summary over concatenated chains plus the per-chain inclusion spread.

    Pooled MCSEs combine per-chain MCSEs weighted by chain length.
    """
    reports = [summarize(t) for t in traces]
    sizes = np.array([r.n_draws for r in reports], dtype=float)
    w = sizes / sizes.sum()

    class _Stack:
        pass

    stack = _Stack()
    first = traces[0]
    stack.draws = np.concatenate([t.draws for t in traces])
    stack.group_labels = first.group_labels
    stack.w_degrees = first.w_degrees
    stack.x_degrees = first.x_degrees
    stack.col = first.col
    pooled = summarize(stack)
    for r in pooled.rows:
        per = [rep.row(r.name) for rep in reports]
        r.mcse = float(math.sqrt(sum((wc * p.mcse) ** 2 for wc, p in zip(w, per))))
        if r.incl_prob is not None:
            r.incl_mcse = float(math.sqrt(sum((wc * p.incl_mcse) ** 2 for wc, p in zip(w, per))))
    pooled.inclusion_mcse = np.sqrt(sum((wc * rep.inclusion_mcse) ** 2 for wc, rep in zip(w, reports)))
    incl = np.stack([rep.inclusion for rep in reports])
    pooled.extra["chain_inclusion"] = incl
    pooled.extra["chain_inclusion_spread"] = float(np.max(incl.max(axis=0) - incl.min(axis=0)))
    return pooled, reports


REPORT_COLUMNS = ["parameter", "mean", "mcse", "ci_lo", "ci_hi", "incl_prob", "incl_mcse", "significant"]


def _report_records(report, threshold):
    flags = classify(report, threshold)
    gpos = {lab: g for g, lab in enumerate(report.group_labels)}
    jpos = {deg: j for j, deg in enumerate(report.x_degrees)}
    for r in report.rows:
        sig = ""
        if r.kind == "beta":
            sig = "1" if flags[gpos[r.group], jpos[r.degree]] else "0"
        yield r, sig


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_csv_text(report: PosteriorReport, threshold=DEFAULT_THRESHOLD) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r, sig in _report_records(report, threshold):
        w.writerow([r.name, _fmt(r.mean), _fmt(r.mcse), _fmt(r.ci_lo), _fmt(r.ci_hi),
                    _fmt(r.incl_prob), _fmt(r.incl_mcse), sig])
    return buf.getvalue()


def format_table(report: PosteriorReport, threshold=DEFAULT_THRESHOLD) -> str:
    lines = [
        f"posterior summary over {report.n_draws} draws (beta model-averaged); "
        f"significance threshold Pr(gamma=1|y) > {threshold:g}",
        f"{'parameter':<16}{'mean':>12}{'mcse':>11}{'95% CI':>24}{'Pr(g=1|y)':>11}{'mcse':>11}  sig",
    ]
    for r, sig in _report_records(report, threshold):
        ci = f"({r.ci_lo:.3f}, {r.ci_hi:.3f})"
        incl = "" if r.incl_prob is None else f"{r.incl_prob:.3f}"
        incl_se = "" if r.incl_mcse is None else f"{r.incl_mcse:.2e}"
        mark = {"1": "*", "0": "", "": ""}[sig]
        lines.append(f"{r.name:<16}{r.mean:>12.4f}{r.mcse:>11.2e}{ci:>24}{incl:>11}{incl_se:>11}  {mark}")
    return "\n".join(lines) + "\n"


def trajectories_csv_text(curves: dict, time_grid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "t", "value"])
    for lab, vals in curves.items():
        for t, v in zip(time_grid, vals):
            w.writerow([lab, repr(float(t)), repr(float(v))])
    return buf.getvalue()
