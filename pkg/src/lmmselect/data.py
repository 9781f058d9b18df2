"""Longitudinal datasets, time rescaling and per-subject design matrices.

A :class:`Dataset` stores subjects grouped into treatment groups plus one
control group, which is always the last entry of ``groups``.  A
:class:`DesignSet` holds the stacked polynomial design matrices and the
per-subject cross-product statistics the sampler consumes.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataValidationError,
    EmptyGroupError,
    IdentifiabilityError,
    MissingColumnError,
    NonNumericFieldError,
    SubjectGroupConflictError,
    UnknownControlGroupError,
)

DEFAULT_SCHEMA = {"subject": "subject", "group": "group", "time": "time", "response": "response"}


@dataclass(frozen=True)
class Subject:
    subject_id: str
    group: str
    times: np.ndarray
    responses: np.ndarray

    @property
    def n_obs(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class Dataset:
    """Subjects from G groups; ``groups[-1]`` is the control."""

    groups: tuple
    subjects: tuple

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(str(g) for g in self.groups))
        object.__setattr__(self, "subjects", tuple(self.subjects))
        self.validate()

    def validate(self):
        if len(self.groups) < 2:
            raise DataValidationError("need at least one treatment group and a control group")
        if len(set(self.groups)) != len(self.groups):
            raise DataValidationError("duplicate group labels")
        counts = {g: 0 for g in self.groups}
        seen = {}
        for s in self.subjects:
            if s.group not in counts:
                raise DataValidationError(f"subject {s.subject_id!r} has unknown group {s.group!r}")
            if s.subject_id in seen:
                if seen[s.subject_id] != s.group:
                    raise SubjectGroupConflictError(
                        f"subject in multiple groups: {s.subject_id!r} ({seen[s.subject_id]!r}, {s.group!r})"
                    )
                raise DataValidationError(f"duplicate subject entry {s.subject_id!r}")
            seen[s.subject_id] = s.group
            if s.n_obs < 1:
                raise DataValidationError(f"subject {s.subject_id!r} has no observations")
            if len(s.responses) != s.n_obs:
                raise DataValidationError(f"subject {s.subject_id!r}: times/responses length mismatch")
            if not (np.all(np.isfinite(s.times)) and np.all(np.isfinite(s.responses))):
                raise DataValidationError(f"subject {s.subject_id!r} has non-finite values")
            counts[s.group] += 1
        empty = [g for g, c in counts.items() if c == 0]
        if empty:
            raise EmptyGroupError(f"group(s) with zero subjects: {', '.join(empty)}")

    @property
    def control(self) -> str:
        return self.groups[-1]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_total(self) -> int:
        return int(sum(s.n_obs for s in self.subjects))

    def time_range(self):
        t = np.concatenate([s.times for s in self.subjects])
        return float(t.min()), float(t.max())


@dataclass(frozen=True)
class DesignConfig:
    """Polynomial bases for W (global), X (group differences) and Z (random).

    ``time_offset``/``time_scale`` left as ``None`` default to the observed
    minimum time and the observed range.
    """

    w_degrees: tuple = (0, 1)
    x_degrees: tuple = (1,)
    z_degrees: tuple = (0, 1)
    time_offset: float | None = None
    time_scale: float | None = None

    def __post_init__(self):
        for name in ("w_degrees", "x_degrees", "z_degrees"):
            degs = tuple(int(d) for d in getattr(self, name))
            if not degs:
                raise ValueError(f"{name} must be non-empty")
            if len(set(degs)) != len(degs):
                raise ValueError(f"{name} contains duplicates")
            if any(d < 0 for d in degs):
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, degs)
        if self.time_scale is not None and self.time_scale == 0:
            raise ValueError("time_scale must be non-zero")

    def resolved(self, data: Dataset) -> "DesignConfig":
        if self.time_offset is not None and self.time_scale is not None:
            return self
        lo, hi = data.time_range()
        offset = lo if self.time_offset is None else self.time_offset
        scale = self.time_scale
        if scale is None:
            scale = hi - lo if hi > lo else 1.0
        return DesignConfig(self.w_degrees, self.x_degrees, self.z_degrees, float(offset), float(scale))

    def as_dict(self):
        return {
            "w_degrees": list(self.w_degrees),
            "x_degrees": list(self.x_degrees),
            "z_degrees": list(self.z_degrees),
            "time_offset": self.time_offset,
            "time_scale": self.time_scale,
        }


def rescale_time(t_raw, config: DesignConfig):
    if config.time_offset is None or config.time_scale is None:
        raise ValueError("config has unresolved time rescaling; call DesignConfig.resolved first")
    return (np.asarray(t_raw, dtype=float) - config.time_offset) / config.time_scale


def poly_basis(t, degrees):
    t = np.asarray(t, dtype=float)
    return np.stack([t ** d for d in degrees], axis=-1)


def _segment_outer(A, B, starts):
    return np.add.reduceat(A[:, :, None] * B[:, None, :], starts, axis=0)


@dataclass
class DesignSet:
    """Stacked design matrices and per-subject sufficient statistics.

    Rows of ``W``, ``X``, ``Z`` and ``y`` are ordered subject by subject;
    subject ``i`` occupies rows ``starts[i]:starts[i + 1]``.
    """

    config: DesignConfig
    group_labels: tuple
    subject_ids: tuple
    group_index: np.ndarray
    n_obs: np.ndarray
    starts: np.ndarray
    y: np.ndarray
    W: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    stats: dict = field(repr=False)
    members: list = field(repr=False)

    @property
    def n_groups(self):
        return len(self.group_labels)

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @property
    def n_total(self):
        return len(self.y)

    @property
    def p_w(self):
        return self.W.shape[1]

    @property
    def p_x(self):
        return self.X.shape[1]

    @property
    def p_z(self):
        return self.Z.shape[1]

    def rows(self, i):
        return slice(self.starts[i], self.starts[i + 1])

    def subject_matrices(self, i):
        r = self.rows(i)
        return self.W[r], self.X[r], self.Z[r], self.y[r]

    def frac_gram(self, g):
        """Σ_{i∈g} (1/n_i) X_iᵀX_i over all X columns."""
        return self.stats["A_group"][g]

    def full_gram(self, g):
        """Σ_{i∈g} X_iᵀX_i over all X columns."""
        return self.stats["C_group"][g]


def build_designs(data: Dataset, config: DesignConfig) -> DesignSet:
    """Evaluate the polynomial bases at every subject's rescaled times."""
    config = config.resolved(data)
    labels = data.groups
    gpos = {g: k for k, g in enumerate(labels)}
    n_obs = np.array([s.n_obs for s in data.subjects], dtype=np.int64)
    t = rescale_time(np.concatenate([s.times for s in data.subjects]), config)
    y = np.concatenate([s.responses for s in data.subjects]).astype(float)
    return assemble_designs(
        config,
        labels,
        tuple(s.subject_id for s in data.subjects),
        np.array([gpos[s.group] for s in data.subjects], dtype=np.int64),
        n_obs,
        y,
        poly_basis(t, config.w_degrees),
        poly_basis(t, config.x_degrees),
        poly_basis(t, config.z_degrees),
    )


def assemble_designs(config, group_labels, subject_ids, group_index, n_obs, y, W, X, Z) -> DesignSet:
    """DesignSet from already-stacked matrices (rows grouped by subject)."""
    n_obs = np.asarray(n_obs, dtype=np.int64)
    group_index = np.asarray(group_index, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(n_obs)]).astype(np.int64)
    seg = starts[:-1]
    stats = {
        "WtW": _segment_outer(W, W, seg),
        "WtZ": _segment_outer(W, Z, seg),
        "XtX": _segment_outer(X, X, seg),
        "XtW": _segment_outer(X, W, seg),
        "XtZ": _segment_outer(X, Z, seg),
        "ZtZ": _segment_outer(Z, Z, seg),
        "Wty": np.add.reduceat(W * y[:, None], seg, axis=0),
        "Xty": np.add.reduceat(X * y[:, None], seg, axis=0),
        "Zty": np.add.reduceat(Z * y[:, None], seg, axis=0),
    }
    G = len(group_labels)
    n = len(n_obs)
    # (G, n) membership weights for group-wise sums.
    member_ones = np.zeros((G, n))
    member_ones[group_index, np.arange(n)] = 1.0
    member_frac = member_ones / n_obs[None, :]
    stats["member_ones"] = member_ones
    stats["member_frac"] = member_frac
    stats["A_group"] = np.einsum("gi,ijk->gjk", member_frac, stats["XtX"])
    stats["C_group"] = np.einsum("gi,ijk->gjk", member_ones, stats["XtX"])
    stats["XtW_frac"] = np.einsum("gi,ijk->gjk", member_frac, stats["XtW"])
    stats["XtW_sum"] = np.einsum("gi,ijk->gjk", member_ones, stats["XtW"])
    stats["WtW_total"] = stats["WtW"].sum(axis=0)
    members = [np.flatnonzero(group_index == g) for g in range(G)]
    for g, idx in enumerate(members):
        if idx.size == 0:
            raise EmptyGroupError(f"group {group_labels[g]!r} has zero subjects")

    designs = DesignSet(
        config=config,
        group_labels=tuple(group_labels),
        subject_ids=tuple(subject_ids),
        group_index=group_index,
        n_obs=n_obs,
        starts=starts,
        y=np.asarray(y, dtype=float),
        W=np.asarray(W, dtype=float),
        X=np.asarray(X, dtype=float),
        Z=np.asarray(Z, dtype=float),
        stats=stats,
        members=members,
    )
    check_identifiability(designs)
    return designs


def check_identifiability(designs: DesignSet):
    for g, label in enumerate(designs.group_labels):
        A = designs.frac_gram(g)
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise IdentifiabilityError(
                label, range(designs.p_x), "Σ (1/n_i) X_iᵀX_i is singular"
            ) from None
        if np.linalg.cond(A) > 1e12:
            raise IdentifiabilityError(label, range(designs.p_x), "Σ (1/n_i) X_iᵀX_i is numerically singular")


def _natural_key(label):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", label)]


def order_groups(labels, control=None):
    """Treatments in natural order, control last.

    Without an explicit ``control`` the lexicographically last label is used.
    """
    labels = sorted(set(labels))
    if control is None:
        control = max(labels)
    control = str(control)
    if control not in labels:
        raise UnknownControlGroupError(f"control group {control!r} not present (groups: {', '.join(labels)})")
    treatments = sorted((g for g in labels if g != control), key=_natural_key)
    return tuple(treatments) + (control,)


def load_csv(path, schema: Mapping[str, str] | None = None, control=None) -> Dataset:
    """Read a long-format CSV (one row per observation)."""
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update({k: v for k, v in schema.items() if v})
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in cols.values() if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing column(s): {', '.join(missing)}")
        group_of = {}
        obs = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            sid = row[cols["subject"]]
            grp = row[cols["group"]]
            try:
                t = float(row[cols["time"]])
                r = float(row[cols["response"]])
            except (TypeError, ValueError):
                raise NonNumericFieldError(f"{path}:{lineno}: non-numeric time or response") from None
            if not (math.isfinite(t) and math.isfinite(r)):
                raise NonNumericFieldError(f"{path}:{lineno}: non-finite time or response")
            if sid in group_of:
                if group_of[sid] != grp:
                    raise SubjectGroupConflictError(
                        f"{path}:{lineno}: subject in multiple groups: {sid!r} ({group_of[sid]!r}, {grp!r})"
                    )
            else:
                group_of[sid] = grp
                obs[sid] = []
                order.append(sid)
            obs[sid].append((t, r))
    if not order:
        raise DataValidationError(f"{path}: no data rows")
    groups = order_groups(group_of.values(), control)
    subjects = []
    for sid in order:
        arr = np.array(obs[sid], dtype=float)
        perm = np.argsort(arr[:, 0], kind="stable")
        subjects.append(Subject(sid, group_of[sid], arr[perm, 0], arr[perm, 1]))
    return Dataset(groups, subjects)


def save_csv(data: Dataset, path, schema: Mapping[str, str] | None = None):
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update({k: v for k, v in schema.items() if v})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([cols["subject"], cols["group"], cols["time"], cols["response"]])
        for s in data.subjects:
            for t, r in zip(s.times, s.responses):
                w.writerow([s.subject_id, s.group, repr(float(t)), repr(float(r))])


def make_dataset(records: Sequence, control=None) -> Dataset:
    """Build a Dataset from ``(subject_id, group, times, responses)`` tuples."""
    subjects = []
    for sid, grp, times, resp in records:
        times = np.asarray(times, dtype=float)
        resp = np.asarray(resp, dtype=float)
        perm = np.argsort(times, kind="stable")
        subjects.append(Subject(str(sid), str(grp), times[perm], resp[perm]))
    groups = order_groups([s.group for s in subjects], control)
    return Dataset(groups, subjects)
