"""Parameter state, hyperparameters and the joint posterior log-density.

The joint density here is written directly from the per-subject design
matrices. The samplers work from cached cross-products instead, so this
module is the reference they are checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .data import DesignSet
from .errors import DomainError, IdentifiabilityError, NumericalError
from .linalg import cholesky, logdet_from_chol, solve_spd

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HyperParams:
    """Prior hyperparameters.

    ``d1``/``d2`` are the Gamma shape/rate on λ_D, ``d3`` the prior mean of α,
    ``d4`` its scalar prior precision (covariance ``I/d4``) and ``pi`` the
    per-group prior inclusion probability, control last and equal to zero.
    """

    d1: float
    d2: float
    d3: np.ndarray
    d4: float
    pi: np.ndarray

    def __post_init__(self):
        self.d1 = float(self.d1)
        self.d2 = float(self.d2)
        self.d4 = float(self.d4)
        self.d3 = np.atleast_1d(np.asarray(self.d3, dtype=float))
        self.pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if not (self.d1 > 0 and self.d2 > 0 and self.d4 > 0):
            raise ValueError("d1, d2 and d4 must be positive")
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ValueError("prior inclusion probabilities must lie in [0, 1]")
        if len(self.pi) < 2 or self.pi[-1] != 0.0:
            raise ValueError("the control group's prior inclusion probability (last entry) must be 0")

    def to_text(self) -> str:
        fmt = lambda v: ", ".join(repr(float(x)) for x in v)
        return (
            f"d1 = {self.d1!r}\n"
            f"d2 = {self.d2!r}\n"
            f"d3 = {fmt(self.d3)}\n"
            f"d4 = {self.d4!r}\n"
            f"pi = {fmt(self.pi)}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "HyperParams":
        kv = parse_key_values(text)
        missing = {"d1", "d2", "d3", "d4", "pi"} - kv.keys()
        if missing:
            raise ValueError(f"missing hyperparameter keys: {', '.join(sorted(missing))}")
        return cls(
            d1=float(kv["d1"]),
            d2=float(kv["d2"]),
            d3=parse_float_list(kv["d3"]),
            d4=float(kv["d4"]),
            pi=parse_float_list(kv["pi"]),
        )

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_float_list(value) -> list:
    if isinstance(value, (list, tuple, np.ndarray)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def default_hyperparams(designs: DesignSet, pi_treatment=0.5, d1=0.001, d2=0.001, d4=0.01) -> HyperParams:
    """Vague defaults with ``d3`` from pooled OLS of the control group on W."""
    G = designs.n_groups
    ctrl = designs.members[G - 1]
    WtW = designs.stats["WtW"][ctrl].sum(axis=0)
    Wty = designs.stats["Wty"][ctrl].sum(axis=0)
    d3 = np.linalg.lstsq(WtW, Wty, rcond=None)[0]
    pi = np.full(G, float(pi_treatment))
    pi[-1] = 0.0
    return HyperParams(d1=d1, d2=d2, d3=d3, d4=d4, pi=pi)


@dataclass
class ChainState:
    """One full Gibbs state. ``beta[g]`` is aligned with ``active(g)``."""

    gamma: np.ndarray
    beta: list
    alpha: np.ndarray
    sigma2: float
    b: np.ndarray
    lambda_D: float

    def active(self, g):
        return np.flatnonzero(self.gamma[g])

    def copy(self) -> "ChainState":
        return ChainState(
            gamma=self.gamma.copy(),
            beta=[bg.copy() for bg in self.beta],
            alpha=self.alpha.copy(),
            sigma2=float(self.sigma2),
            b=self.b.copy(),
            lambda_D=float(self.lambda_D),
        )

    def beta_padded(self):
        out = np.zeros(self.gamma.shape)
        for g, bg in enumerate(self.beta):
            out[g, self.active(g)] = bg
        return out

    def check_invariants(self):
        if np.any(self.gamma[-1]):
            raise AssertionError("control-group indicators must be zero")
        for g, bg in enumerate(self.beta):
            if len(bg) != int(self.gamma[g].sum()):
                raise AssertionError(f"beta length mismatch in group {g}")
        if not (self.sigma2 > 0 and self.lambda_D > 0):
            raise AssertionError("variance parameters must be positive")


def initial_state(designs: DesignSet, hp: HyperParams) -> ChainState:
    """Baseline model: γ = 0, α = d3, b = 0, σ² = pooled response variance, λ_D = d1/d2."""
    G, p_x = designs.n_groups, designs.p_x
    return ChainState(
        gamma=np.zeros((G, p_x), dtype=np.int8),
        beta=[np.zeros(0) for _ in range(G)],
        alpha=hp.d3.copy(),
        sigma2=float(np.var(designs.y, ddof=1)) if designs.n_total > 1 else 1.0,
        b=np.zeros((designs.n_subjects, designs.p_z)),
        lambda_D=hp.d1 / hp.d2,
    )


@dataclass
class FractionalPriorStats:
    """Group ``g`` quantities restricted to the active columns ``active``.

    ``A = Σ (1/n_i) X_iᵀX_i``, ``B = Σ (1 + 1/n_i) X_iᵀX_i``,
    ``u = Σ (1/n_i) X_iᵀφ_i`` and ``w = Σ (1 + 1/n_i) X_iᵀφ_i`` with
    ``φ_i = y_i − W_iα − Z_ib_i``.
    """

    group: int
    active: np.ndarray
    A: np.ndarray
    B: np.ndarray
    u: np.ndarray
    w: np.ndarray
    chol_A: np.ndarray = field(default=None, repr=False)
    chol_B: np.ndarray = field(default=None, repr=False)


def _bernoulli_logmass(gamma_row, p):
    k = int(np.sum(gamma_row))
    m = len(gamma_row) - k
    if (k and p == 0.0) or (m and p == 1.0):
        return -math.inf
    out = 0.0
    if k:
        out += k * math.log(p)
    if m:
        out += m * math.log1p(-p)
    return out


def joint_log_density(state: ChainState, designs: DesignSet, hp: HyperParams) -> float:
    """Log joint posterior density up to a state-independent constant.

    Includes the Gaussian likelihood, the fractional prior on every group's
    active coefficients (with its normalizing constant), Bernoulli indicator
    masses, the Normal priors on α and b_i, the Gamma prior on λ_D and the
    improper ``1/σ²`` prior. Returns ``-inf`` for indicator configurations of
    zero prior mass.
    """
    s2, lam = float(state.sigma2), float(state.lambda_D)
    if not s2 > 0:
        raise DomainError(f"sigma2 must be positive, got {s2}")
    if not lam > 0:
        raise DomainError(f"lambda_D must be positive, got {lam}")

    G = designs.n_groups
    logp = 0.0
    for g in range(G):
        lb = _bernoulli_logmass(state.gamma[g], hp.pi[g])
        if lb == -math.inf:
            return -math.inf
        logp += lb

    alpha = state.alpha
    p_z = designs.p_z
    frac_xtx = [0.0] * G
    frac_xte = [0.0] * G
    for i in range(designs.n_subjects):
        g = designs.group_index[i]
        W, X, Z, y = designs.subject_matrices(i)
        act = state.active(g)
        Xg = X[:, act]
        bi = state.b[i]
        e = y - W @ alpha - Xg @ state.beta[g] - Z @ bi
        n_i = len(y)
        logp += -0.5 * n_i * (LOG_2PI + math.log(s2)) - 0.5 * float(e @ e) / s2
        logp += 0.5 * p_z * (math.log(lam) - LOG_2PI) - 0.5 * lam * float(bi @ bi)
        if len(act):
            frac_xtx[g] = frac_xtx[g] + (Xg.T @ Xg) / n_i
            frac_xte[g] = frac_xte[g] + (Xg.T @ e) / n_i

    for g in range(G):
        k = len(state.beta[g])
        if k == 0:
            continue
        A = np.asarray(frac_xtx[g])
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise IdentifiabilityError(designs.group_labels[g], state.active(g)) from None
        # β − β̂ = −A⁻¹ Σ (1/n_i) X_iᵀ e_i
        diff = -solve_spd(L, np.asarray(frac_xte[g]))
        logp += -0.5 * k * LOG_2PI + 0.5 * (logdet_from_chol(L) - k * math.log(s2))
        logp += -0.5 * float(diff @ A @ diff) / s2

    p_w = len(alpha)
    da = alpha - hp.d3
    logp += 0.5 * p_w * (math.log(hp.d4) - LOG_2PI) - 0.5 * hp.d4 * float(da @ da)
    logp += hp.d1 * math.log(hp.d2) - gammaln(hp.d1) + (hp.d1 - 1.0) * math.log(lam) - hp.d2 * lam
    logp += -math.log(s2)
    return float(logp)


def phi_cross(designs: DesignSet, state: ChainState):
    """Per-subject ``X_iᵀφ_i`` over all X columns, shape (n, p_X)."""
    st = designs.stats
    return st["Xty"] - st["XtW"] @ state.alpha - np.einsum("ijk,ik->ij", st["XtZ"], state.b)


def group_stats(g, active, designs: DesignSet, xtphi=None, state: ChainState | None = None) -> FractionalPriorStats:
    active = np.asarray(active, dtype=np.int64)
    if xtphi is None:
        xtphi = phi_cross(designs, state)
    st = designs.stats
    idx = np.ix_(active, active)
    A = st["A_group"][g][idx]
    B = A + st["C_group"][g][idx]
    u = (st["member_frac"][g] @ xtphi)[active]
    w = u + (st["member_ones"][g] @ xtphi)[active]
    return FractionalPriorStats(g, active, A, B, u, w)


def factor_group_stats(fs: FractionalPriorStats, designs: DesignSet) -> FractionalPriorStats:
    try:
        fs.chol_A = cholesky(fs.A)
        fs.chol_B = cholesky(fs.B)
    except NumericalError:
        raise IdentifiabilityError(designs.group_labels[fs.group], fs.active) from None
    return fs


def fractional_prior_moments(g, gamma_g, designs: DesignSet, state: ChainState):
    """Mean β̂_g(γ_g) and precision A_g/σ² of the fractional prior."""
    active = np.flatnonzero(np.asarray(gamma_g))
    if active.size == 0:
        raise ValueError("fractional prior needs at least one active column")
    fs = factor_group_stats(group_stats(g, active, designs, state=state), designs)
    mean = solve_spd(fs.chol_A, fs.u)
    return mean, fs.A / state.sigma2
