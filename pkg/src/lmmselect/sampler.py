"""Component-wise Gibbs sampler and chain driver.

One sweep updates, in order: every indicator γ_gj with β_g integrated out,
every group's β_g, α, σ², each b_i, then λ_D. All full conditionals are
derived from :func:`lmmselect.model.joint_log_density`; the ``*_conditional``
functions return the exact distribution each step draws from so tests can
compare them against the joint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics
from .data import Dataset, DesignConfig, DesignSet, build_designs
from .errors import IdentifiabilityError, NumericalError, TraceParseError
from .linalg import batched_cholesky, cholesky, logdet_from_chol, mvn_from_precision, quad_inv, solve_spd
from .model import (
    ChainState,
    HyperParams,
    default_hyperparams,
    factor_group_stats,
    group_stats,
    initial_state,
    phi_cross,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- step 1: γ

def _collapsed_group_term(g, active, designs, xtphi, sigma2):
    """β-integrated contribution of group g for active set ``active``.

    ½ log(|A|/|B|) − (uᵀA⁻¹u − wᵀB⁻¹w)/(2σ²); zero for the empty set.
    """
    if len(active) == 0:
        return 0.0
    fs = factor_group_stats(group_stats(g, active, designs, xtphi=xtphi), designs)
    logdet = 0.5 * (logdet_from_chol(fs.chol_A) - logdet_from_chol(fs.chol_B))
    quad = quad_inv(fs.chol_A, fs.u) - quad_inv(fs.chol_B, fs.w)
    return logdet - 0.5 * quad / sigma2


def gamma_site_log_probs(g, j, state, designs, hp, xtphi=None):
    """Normalized (log P(γ_gj=0), log P(γ_gj=1)) given α, b, σ² and γ_−(g,j)."""
    p = float(hp.pi[g])
    if p == 0.0:
        return 0.0, -math.inf
    if p == 1.0:
        return -math.inf, 0.0
    if xtphi is None:
        xtphi = phi_cross(designs, state)
    row = state.gamma[g].copy()
    row[j] = 0
    off = np.flatnonzero(row)
    row[j] = 1
    on = np.flatnonzero(row)
    l0 = math.log1p(-p) + _collapsed_group_term(g, off, designs, xtphi, state.sigma2)
    l1 = math.log(p) + _collapsed_group_term(g, on, designs, xtphi, state.sigma2)
    m = max(l0, l1)
    norm = m + math.log(math.exp(l0 - m) + math.exp(l1 - m))
    return l0 - norm, l1 - norm


def sample_gamma_site(g, j, state, designs, hp, rng, xtphi=None) -> int:
    _, l1 = gamma_site_log_probs(g, j, state, designs, hp, xtphi)
    u = rng.random()
    return int(u < math.exp(l1))


# ---------------------------------------------------------------- step 2: β

def beta_conditional(g, state, designs, xtphi=None):
    """(mean, precision) of β_g(γ_g), or ``None`` when γ_g is empty.

    Precision B_g/σ², mean B_g⁻¹ Σ (1 + 1/n_i) X_iᵀφ_i: the likelihood and
    the fractional prior centred at β̂_g both contribute.
    """
    active = state.active(g)
    if active.size == 0:
        return None
    if xtphi is None:
        xtphi = phi_cross(designs, state)
    fs = factor_group_stats(group_stats(g, active, designs, xtphi=xtphi), designs)
    return solve_spd(fs.chol_B, fs.w), fs.B / state.sigma2, fs


def sample_beta_group(g, state, designs, rng, xtphi=None):
    cond = beta_conditional(g, state, designs, xtphi)
    if cond is None:
        return np.zeros(0)
    mean, _, fs = cond
    L = fs.chol_B / math.sqrt(state.sigma2)
    return mvn_from_precision(mean, L, rng)


# ---------------------------------------------------------------- step 3: α

def alpha_conditional(state, designs, hp):
    """(mean, precision) of α given everything else."""
    st = designs.stats
    s2 = state.sigma2
    p_w = designs.p_w
    zb_x = np.einsum("ijk,ik->ij", st["XtZ"], state.b)
    zb_w = np.einsum("ijk,ik->ij", st["WtZ"], state.b)
    rhs = st["Wty"].sum(axis=0) - zb_w.sum(axis=0)
    prec = st["WtW_total"].copy()
    xth_frac = st["member_frac"] @ (st["Xty"] - zb_x)
    for g in range(designs.n_groups):
        act = state.active(g)
        if act.size == 0:
            continue
        beta = state.beta[g]
        rhs -= st["XtW_sum"][g][act].T @ beta
        A = st["A_group"][g][np.ix_(act, act)]
        try:
            L = cholesky(A)
        except NumericalError:
            raise IdentifiabilityError(designs.group_labels[g], act) from None
        M = st["XtW_frac"][g][act]
        q = xth_frac[g][act] - A @ beta
        T = solve_spd(L, M)
        prec += M.T @ T
        rhs += T.T @ q
    prec = prec / s2 + hp.d4 * np.eye(p_w)
    rhs = rhs / s2 + hp.d4 * hp.d3
    L = cholesky(prec)
    return solve_spd(L, rhs), prec, L


def sample_alpha(state, designs, hp, rng):
    mean, _, L = alpha_conditional(state, designs, hp)
    return mvn_from_precision(mean, L, rng)


# ---------------------------------------------------------------- step 4: σ²

def residuals(state, designs):
    """Stacked residuals y − Wα − X(γ)β − Zb over all observations."""
    rows = np.repeat(np.arange(designs.n_subjects), designs.n_obs)
    beta_rows = state.beta_padded()[designs.group_index][rows]
    e = designs.y - designs.W @ state.alpha
    e -= np.sum(designs.X * beta_rows, axis=1)
    e -= np.sum(designs.Z * state.b[rows], axis=1)
    return e


def _frac_residual_cross(g, act, state, designs, xtphi):
    """Σ_{i∈g} (1/n_i) X_iᵀe_i restricted to ``act``."""
    st = designs.stats
    A = st["A_group"][g][np.ix_(act, act)]
    return (st["member_frac"][g] @ xtphi)[act] - A @ state.beta[g], A


def sigma2_conditional(state, designs):
    """(shape, rate) of the Inverse-Gamma full conditional of σ²."""
    e = residuals(state, designs)
    quad = float(e @ e)
    xtphi = phi_cross(designs, state)
    n_active = 0
    for g in range(designs.n_groups):
        act = state.active(g)
        if act.size == 0:
            continue
        n_active += act.size
        s, A = _frac_residual_cross(g, act, state, designs, xtphi)
        try:
            L = cholesky(A)
        except NumericalError:
            raise IdentifiabilityError(designs.group_labels[g], act) from None
        # (β − β̂)ᵀ A (β − β̂) = sᵀ A⁻¹ s
        quad += quad_inv(L, s)
    shape = 0.5 * (designs.n_total + n_active)
    rate = 0.5 * quad
    if not rate > 0:
        raise NumericalError(f"non-positive Inverse-Gamma rate {rate!r} (shape {shape}, residual SS {float(e @ e)!r})")
    return shape, rate


def sample_sigma2(state, designs, rng):
    shape, rate = sigma2_conditional(state, designs)
    return rate / rng.gamma(shape)


# ---------------------------------------------------------------- step 5: b

def b_conditional(i, state, designs):
    """(mean, precision) of b_i given everything else, including the other
    subjects of its group through the fractional prior."""
    st = designs.stats
    g = designs.group_index[i]
    s2, lam = state.sigma2, state.lambda_D
    act = state.active(g)
    beta = state.beta[g]
    zh = st["Zty"][i] - st["WtZ"][i].T @ state.alpha - st["XtZ"][i][act].T @ beta
    prec = st["ZtZ"][i].copy()
    rhs = zh.copy()
    if act.size:
        xtphi = phi_cross(designs, state)
        s, A = _frac_residual_cross(g, act, state, designs, xtphi)
        L = cholesky(A)
        P = st["XtZ"][i][act] / designs.n_obs[i]
        c = s + P @ state.b[i]
        R = solve_spd(L, P).T
        prec += R @ P
        rhs += R @ c
    prec = prec / s2 + lam * np.eye(designs.p_z)
    rhs = rhs / s2
    L = cholesky(prec)
    return solve_spd(L, rhs), prec, L


def sample_b_subject(i, state, designs, rng):
    mean, _, L = b_conditional(i, state, designs)
    return mvn_from_precision(mean, L, rng)


def _solve_stack(M, v):
    return np.linalg.solve(M, v[..., None])[..., 0]


def sample_b_all(state, designs, rng, xtphi=None):
    """Sequential scan over all subjects, equivalent in distribution and RNG
    use to calling :func:`sample_b_subject` for i = 0..n−1 in order.

    Within a group with active indicators, each b_i conditions on the
    current b_j of its group-mates through a running k-vector; everything
    else is precomputed in batches.
    """
    st = designs.stats
    s2, lam = state.sigma2, state.lambda_D
    p_z = designs.p_z
    noise_all = rng.standard_normal((designs.n_subjects, p_z))
    if xtphi is None:
        xtphi = phi_cross(designs, state)
    b_new = state.b.copy()
    eye = np.eye(p_z)
    for g in range(designs.n_groups):
        idx = designs.members[g]
        act = state.active(g)
        beta = state.beta[g]
        zh = st["Zty"][idx] - np.einsum("ijk,j->ik", st["WtZ"][idx], state.alpha)
        zh -= np.einsum("ijk,j->ik", st["XtZ"][idx][:, act, :], beta)
        prec = st["ZtZ"][idx].copy()
        if act.size:
            s, A = _frac_residual_cross(g, act, state, designs, xtphi)
            LA = cholesky(A)
            P = st["XtZ"][idx][:, act, :] / designs.n_obs[idx][:, None, None]
            Ainv = solve_spd(LA, np.eye(act.size))
            R = np.einsum("imk,ml->ikl", P, Ainv)
            prec += R @ P
        prec = prec / s2 + lam * eye
        L = batched_cholesky(prec)
        noise = _solve_stack(np.swapaxes(L, -1, -2), noise_all[idx])
        base = _solve_stack(prec, zh / s2)
        if act.size == 0:
            b_new[idx] = base + noise
            continue
        K = np.linalg.solve(prec, R) / s2
        cur = s
        for r, i in enumerate(idx):
            c = cur + P[r] @ state.b[i]
            bi = base[r] + K[r] @ c + noise[r]
            b_new[i] = bi
            cur = c - P[r] @ bi
    return b_new


# ---------------------------------------------------------------- step 6: λ_D

def lambda_conditional(state, hp):
    """(shape, rate) of the Gamma full conditional of λ_D."""
    n, p_z = state.b.shape
    return n * p_z / 2.0 + hp.d1, 0.5 * float(np.sum(state.b * state.b)) + hp.d2


def sample_lambda(state, hp, rng):
    shape, rate = lambda_conditional(state, hp)
    return rng.gamma(shape) / rate


# ---------------------------------------------------------------- sweep

def gibbs_step(state: ChainState, designs: DesignSet, hp: HyperParams, rng) -> ChainState:
    new = state.copy()
    G = designs.n_groups
    xtphi = phi_cross(designs, new)
    for g in range(G - 1):
        for j in range(designs.p_x):
            new.gamma[g, j] = sample_gamma_site(g, j, new, designs, hp, rng, xtphi)
    for g in range(G - 1):
        new.beta[g] = sample_beta_group(g, new, designs, rng, xtphi)
    new.alpha = sample_alpha(new, designs, hp, rng)
    new.sigma2 = float(sample_sigma2(new, designs, rng))
    new.b = sample_b_all(new, designs, rng)
    new.lambda_D = float(sample_lambda(new, hp, rng))
    return new


# ---------------------------------------------------------------- driver

@dataclass(frozen=True)
class GibbsConfig:
    seed: int = 0
    max_iters: int = 200_000
    min_iters: int = 2_000
    check_interval: int = 500
    burn_in: int | None = None
    stream: int = 0
    monitor_beta: bool = True
    keep_b: bool = False

    def __post_init__(self):
        if not (self.max_iters > 0 and self.min_iters > 0 and self.check_interval > 0):
            raise ValueError("iteration counts must be positive")
        if self.min_iters < self.check_interval:
            raise ValueError("min_iters must be at least check_interval")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.burn_in is not None and not 0 <= self.burn_in < self.max_iters:
            raise ValueError("burn_in must lie in [0, max_iters)")

    @property
    def effective_burn_in(self):
        if self.burn_in is not None:
            return self.burn_in
        return min(self.min_iters // 10, self.max_iters - 1)

    def rng(self):
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))


def trace_columns(group_labels, w_degrees, x_degrees):
    cols = [f"gamma_{lab}_{d}" for lab in group_labels for d in x_degrees]
    cols += [f"beta_{lab}_{d}" for lab in group_labels for d in x_degrees]
    cols += [f"alpha_{d}" for d in w_degrees]
    return cols + ["sigma2", "lambda_D"]


@dataclass
class ChainTrace:
    group_labels: tuple
    w_degrees: tuple
    x_degrees: tuple
    draws: np.ndarray
    iterations: int = 0
    burn_in: int = 0
    converged: bool = False
    reason: str = ""
    seed: int = 0
    stream: int = 0
    config_hash: str = ""
    min_ess: float = float("nan")
    b_draws: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.group_labels = tuple(self.group_labels)
        self.w_degrees = tuple(int(d) for d in self.w_degrees)
        self.x_degrees = tuple(int(d) for d in self.x_degrees)
        self.columns = trace_columns(self.group_labels, self.w_degrees, self.x_degrees)
        self._index = {c: k for k, c in enumerate(self.columns)}

    def col(self, name):
        return self._index[name]

    def column(self, name):
        return self.draws[:, self._index[name]]

    @property
    def n_retained(self):
        return len(self.draws)

    def metadata(self):
        return {
            "seed": int(self.seed),
            "stream": int(self.stream),
            "iterations": int(self.iterations),
            "burn_in": int(self.burn_in),
            "retained": int(self.n_retained),
            "converged": bool(self.converged),
            "termination": self.reason,
            "min_ess": None if not math.isfinite(self.min_ess) else float(self.min_ess),
            "config_hash": self.config_hash,
            "group_labels": list(self.group_labels),
            "w_degrees": list(self.w_degrees),
            "x_degrees": list(self.x_degrees),
            **self.meta,
        }

    def save(self, path):
        """Write ``path`` (CSV) and ``path + '.json'`` (metadata)."""
        path = Path(path)
        ng = len(self.group_labels) * len(self.x_degrees)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.draws:
                cells = [str(int(v)) for v in row[:ng]] + [repr(float(v)) for v in row[ng:]]
                fh.write(",".join(cells) + "\n")
        Path(str(path) + ".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta_path = Path(str(path) + ".json")
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise TraceParseError(meta_path, 1, f"cannot read trace metadata ({exc})") from None
        labels, wd, xd = meta["group_labels"], meta["w_degrees"], meta["x_degrees"]
        expected = trace_columns(labels, wd, xd)
        rows = []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split(",")
            if header != expected:
                raise TraceParseError(path, 1, "header does not match metadata")
            for lineno, line in enumerate(fh, start=2):
                cells = line.rstrip("\n").split(",")
                if len(cells) != len(expected):
                    raise TraceParseError(path, lineno, f"expected {len(expected)} fields, got {len(cells)}")
                try:
                    rows.append([float(c) for c in cells])
                except ValueError:
                    raise TraceParseError(path, lineno, "non-numeric field") from None
        draws = np.array(rows, dtype=float).reshape(len(rows), len(expected))
        if meta.get("retained") is not None and meta["retained"] != len(draws):
            raise TraceParseError(path, len(draws) + 1, "row count differs from metadata")
        known = {"seed", "stream", "iterations", "burn_in", "retained", "converged", "termination",
                 "min_ess", "config_hash", "group_labels", "w_degrees", "x_degrees"}
        return cls(
            group_labels=labels, w_degrees=wd, x_degrees=xd, draws=draws,
            iterations=meta["iterations"], burn_in=meta["burn_in"], converged=meta["converged"],
            reason=meta["termination"], seed=meta["seed"], stream=meta.get("stream", 0),
            config_hash=meta["config_hash"],
            min_ess=float("nan") if meta.get("min_ess") is None else meta["min_ess"],
            meta={k: v for k, v in meta.items() if k not in known},
        )


def _record(state, row, ng):
    row[:ng] = state.gamma.ravel()
    row[ng:2 * ng] = state.beta_padded().ravel()
    p_w = len(state.alpha)
    row[2 * ng:2 * ng + p_w] = state.alpha
    row[-2] = state.sigma2
    row[-1] = state.lambda_D


def monitored_min_ess(draws, G, p_x, p_w, monitor_beta=True, min_window=diagnostics.MIN_WINDOW):
    """Smallest ESS over the monitored scalars (α, σ², λ_D, treatment γ and,
    optionally, treatment β over the draws where it is active)."""
    ng = G * p_x
    cols = [draws[:, c] for c in range(2 * ng, draws.shape[1])]
    for g in range(G - 1):
        for j in range(p_x):
            k = g * p_x + j
            gam = draws[:, k]
            cols.append(gam)
            if monitor_beta:
                on = draws[gam == 1, ng + k]
                if len(on) >= min_window:
                    cols.append(on)
    return min(diagnostics.ess(c) for c in cols)


def config_hash(designs, hp, gcfg, fwsr):
    payload = {
        "design": designs.config.as_dict(),
        "groups": list(designs.group_labels),
        "hyper": hp.to_text(),
        "gibbs": asdict(gcfg),
        "fwsr": asdict(fwsr),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def run_chain(data, config: DesignConfig | None = None, hp: HyperParams | None = None,
              gcfg: GibbsConfig | None = None, fwsr: diagnostics.FwsrConfig | None = None,
              progress=None) -> ChainTrace:
    """Run the sampler until every monitored scalar passes the stopping rule
    or ``max_iters`` is reached.

    ``data`` is a :class:`Dataset` (built with ``config``) or a ready
    :class:`DesignSet`. The stopping rule is evaluated on post-burn-in draws
    every ``check_interval`` iterations once ``min_iters`` have run.
    """
    gcfg = gcfg or GibbsConfig()
    fwsr = fwsr or diagnostics.FwsrConfig()
    if isinstance(data, Dataset):
        designs = build_designs(data, config or DesignConfig())
    else:
        designs = data
    hp = hp or default_hyperparams(designs)
    if len(hp.pi) != designs.n_groups or len(hp.d3) != designs.p_w:
        raise ValueError("hyperparameter dimensions do not match the design")
    rng = gcfg.rng()
    target = diagnostics.ess_target(fwsr)
    G, p_x, p_w = designs.n_groups, designs.p_x, designs.p_w
    ng = G * p_x
    ncol = 2 * ng + p_w + 2
    burn = gcfg.effective_burn_in

    buf = np.empty((min(gcfg.max_iters, 4096), ncol))
    b_buf = [] if gcfg.keep_b else None
    state = initial_state(designs, hp)
    kept = 0
    converged = False
    min_ess = float("nan")
    it = 0
    while it < gcfg.max_iters:
        state = gibbs_step(state, designs, hp, rng)
        it += 1
        if it > burn:
            if kept == len(buf):
                buf = np.concatenate([buf, np.empty((min(len(buf), gcfg.max_iters - kept), ncol))])
            _record(state, buf[kept], ng)
            if b_buf is not None:
                b_buf.append(state.b.copy())
            kept += 1
        if it >= gcfg.min_iters and it % gcfg.check_interval == 0:
            if kept >= diagnostics.MIN_WINDOW:
                draws = buf[:kept]
                min_ess = monitored_min_ess(draws, G, p_x, p_w, gcfg.monitor_beta)
                converged = all(_monitored_pass(draws, G, p_x, fwsr, gcfg.monitor_beta))
            msg = f"iteration {it}: min ESS {min_ess:.1f} (target {target:.1f})"
            log.info(msg)
            if progress is not None:
                progress(it, min_ess, target)
            if converged:
                break
    reason = "fwsr" if converged else "max_iters"
    trace = ChainTrace(
        group_labels=designs.group_labels,
        w_degrees=designs.config.w_degrees,
        x_degrees=designs.config.x_degrees,
        draws=buf[:kept].copy(),
        iterations=it,
        burn_in=min(burn, it),
        converged=converged,
        reason=reason,
        seed=gcfg.seed,
        stream=gcfg.stream,
        config_hash=config_hash(designs, hp, gcfg, fwsr),
        min_ess=min_ess,
        b_draws=None if b_buf is None else np.array(b_buf),
        meta={"ess_target": target, "epsilon": fwsr.epsilon, "delta": fwsr.delta,
              "design": designs.config.as_dict()},
    )
    return trace


def _monitored_pass(draws, G, p_x, fwsr, monitor_beta):
    ng = G * p_x
    for c in range(2 * ng, draws.shape[1]):
        yield diagnostics.fwsr_pass(draws[:, c], fwsr)
    for g in range(G - 1):
        for j in range(p_x):
            k = g * p_x + j
            gam = draws[:, k]
            yield diagnostics.fwsr_pass(gam, fwsr)
            if monitor_beta:
                on = draws[gam == 1, ng + k]
                if len(on) >= diagnostics.MIN_WINDOW:
                    yield diagnostics.fwsr_pass(on, fwsr)
