"""Synthetic treatment-versus-control longitudinal data."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, DesignConfig, Subject, poly_basis, rescale_time

STUDY_TIMES = (365, 395, 456, 517, 578, 639, 700, 760, 821, 882, 943, 1004, 1065, 1125, 1186)
STUDY_OFFSETS = (-2.0, -0.5, 0.0, 0.5, 2.0)


@dataclass(frozen=True)
class SimGroup:
    label: str
    n_subjects: int
    offsets: tuple  # one coefficient per X column


@dataclass(frozen=True)
class SimSpec:
    """Generating model y = Wα + Xβ_g + Zb_i + ε with b_i ~ N(0, lambda_inv·I).

    The control group is the last entry of ``groups`` and has zero offsets.
    ``retention`` optionally gives, per time point after the first, the
    probability that a subject still present is measured again; a subject
    that drops out is not observed afterwards.
    """

    alpha: tuple
    sigma2: float
    lambda_inv: float
    groups: tuple
    times: tuple
    time_offset: float = 365.0
    time_scale: float = 365.0
    w_degrees: tuple = (0, 1)
    x_degrees: tuple = (1,)
    z_degrees: tuple = (0, 1)
    seed: int = 0
    retention: tuple | None = None

    def __post_init__(self):
        if self.sigma2 < 0 or self.lambda_inv < 0:
            raise ValueError("variances must be non-negative")
        if len(self.groups) < 2:
            raise ValueError("need a control group and at least one treatment group")
        if len(self.alpha) != len(self.w_degrees):
            raise ValueError("alpha length must match w_degrees")
        for grp in self.groups:
            if grp.n_subjects < 1:
                raise ValueError(f"group {grp.label!r} needs at least one subject")
            if len(grp.offsets) != len(self.x_degrees):
                raise ValueError(f"group {grp.label!r}: offsets must match x_degrees")
        if any(o != 0 for o in self.groups[-1].offsets):
            raise ValueError("control-group offsets must be zero")
        if len({g.label for g in self.groups}) != len(self.groups):
            raise ValueError("duplicate group labels")
        if not self.times:
            raise ValueError("need at least one time point")
        if self.retention is not None and len(self.retention) != len(self.times) - 1:
            raise ValueError("retention needs one probability per time point after the first")

    @property
    def design_config(self):
        return DesignConfig(self.w_degrees, self.x_degrees, self.z_degrees, self.time_offset, self.time_scale)

    def as_dict(self):
        d = asdict(self)
        d["groups"] = [asdict(g) for g in self.groups]
        return d


def five_diet_spec(seed=0, offsets=STUDY_OFFSETS, n_treatment=36, n_control=297) -> SimSpec:
    """The two-parameter linear design with slope-only treatment effects."""
    groups = [SimGroup(str(k + 1), n_treatment, (float(o),)) for k, o in enumerate(offsets)]
    groups.append(SimGroup("99", n_control, (0.0,)))
    return SimSpec(
        alpha=(45.49, -5.75),
        sigma2=5.06,
        lambda_inv=1.0,
        groups=tuple(groups),
        times=STUDY_TIMES,
        seed=seed,
    )


def simulate_dataset(spec: SimSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    times = np.asarray(spec.times, dtype=float)
    t = rescale_time(times, spec.design_config)
    W = poly_basis(t, spec.w_degrees)
    X = poly_basis(t, spec.x_degrees)
    Z = poly_basis(t, spec.z_degrees)
    mean_w = W @ np.asarray(spec.alpha, dtype=float)
    sd_b = np.sqrt(spec.lambda_inv)
    sd_e = np.sqrt(spec.sigma2)
    subjects = []
    for grp in spec.groups:
        mean_g = mean_w + X @ np.asarray(grp.offsets, dtype=float)
        for k in range(grp.n_subjects):
            b = sd_b * rng.standard_normal(Z.shape[1])
            y = mean_g + Z @ b + sd_e * rng.standard_normal(len(times))
            keep = len(times)
            if spec.retention is not None:
                alive = rng.random(len(times) - 1) < np.asarray(spec.retention)
                dead = np.flatnonzero(~alive)
                if dead.size:
                    keep = int(dead[0]) + 1
            subjects.append(Subject(f"{grp.label}-{k + 1}", grp.label, times[:keep].copy(), y[:keep]))
    groups = tuple(g.label for g in spec.groups)
    return Dataset(groups, subjects)


def write_truth(spec: SimSpec, path):
    Path(path).write_text(json.dumps(spec.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_truth(path) -> SimSpec:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    groups = tuple(SimGroup(g["label"], g["n_subjects"], tuple(g["offsets"])) for g in d.pop("groups"))
    for key in ("alpha", "times", "w_degrees", "x_degrees", "z_degrees", "retention"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return SimSpec(groups=groups, **d)
