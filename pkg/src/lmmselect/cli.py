"""Command-line interface: ``simulate``, ``fit`` and ``report``.

Exit codes: 0 converged/success, 2 usage, 3 data validation, 4
identifiability, 5 stopped at the iteration cap without passing the
stopping rule.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, diagnostics
from .data import DesignConfig, build_designs, load_csv, save_csv
from .errors import DataValidationError, IdentifiabilityError, TraceParseError, UnknownControlGroupError
from .model import HyperParams, default_hyperparams, parse_float_list, parse_key_values
from .sampler import ChainTrace, GibbsConfig, run_chain
from .simulate import STUDY_OFFSETS, STUDY_TIMES, SimGroup, SimSpec, five_diet_spec, simulate_dataset, write_truth

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IDENT, EXIT_CAP = 0, 2, 3, 4, 5

log = logging.getLogger("lmmselect")


class UsageError(Exception):
    pass


def _int_list(v):
    return [int(x) for x in str(v).split(",") if x.strip()]


# key -> (parser, default); None default means "derived"
FIT_KEYS = {
    "control": (str, None),
    "epsilon": (float, 0.124),
    "delta": (float, 0.05),
    "seed": (int, 0),
    "max_iters": (int, 200_000),
    "min_iters": (int, 2_000),
    "check_interval": (int, 500),
    "burn_in": (int, None),
    "threshold": (float, diagnostics.DEFAULT_THRESHOLD),
    "chains": (int, 1),
    "w_degrees": (_int_list, [0, 1]),
    "x_degrees": (_int_list, [1]),
    "z_degrees": (_int_list, [0, 1]),
    "time_offset": (float, None),
    "time_scale": (float, None),
    "pi": (parse_float_list, [0.5]),
    "d1": (float, 0.001),
    "d2": (float, 0.001),
    "d3": (parse_float_list, None),
    "d4": (float, 0.01),
    "grid_points": (int, 50),
    "subject_col": (str, "subject"),
    "group_col": (str, "group"),
    "time_col": (str, "time"),
    "response_col": (str, "response"),
}

STUDY_FIT_PRESET = {"time_offset": 365.0, "time_scale": 365.0, "epsilon": 0.124, "delta": 0.05,
             "d1": 0.001, "d2": 0.001, "pi": [0.5]}


@dataclass
class RunManifest:
    config: dict
    inputs: dict
    seed: int
    version: str = __version__
    results: dict = field(default_factory=dict)

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_settings(args, keys, presets=None):
    """Flags > config file > presets > defaults."""
    settings = {k: default for k, (_, default) in keys.items()}
    if presets:
        settings.update(presets)
    if getattr(args, "config", None):
        try:
            kv = parse_key_values(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        for raw_key, value in kv.items():
            key = raw_key.replace("-", "_")
            if key not in keys:
                continue
            if value in ("", "None"):
                settings[key] = None
                continue
            try:
                settings[key] = keys[key][0](value)
            except ValueError:
                raise UsageError(f"config key {raw_key!r}: bad value {value!r}") from None
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    return settings


def _settings_text(settings):
    lines = []
    for k in sorted(settings):
        v = settings[k]
        if isinstance(v, (list, tuple, np.ndarray)):
            v = ", ".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    if args.groups is not None and args.groups < 1:
        raise UsageError("--groups must be at least 1")
    offsets = args.offsets
    if args.paper_defaults:
        if offsets is not None or args.groups not in (None, len(STUDY_OFFSETS)):
            raise UsageError("--paper-defaults fixes the treatment groups; drop --groups/--offsets")
        spec = five_diet_spec(seed=args.seed)
    else:
        x_deg = args.x_degrees or [1]
        if offsets is None:
            n = args.groups if args.groups is not None else len(STUDY_OFFSETS)
            base = STUDY_OFFSETS if n == len(STUDY_OFFSETS) else np.linspace(-2.0, 2.0, n)
            offsets = [float(o) for o in base]
        if args.groups is not None and len(offsets) % args.groups:
            raise UsageError("--offsets must list one value per group (times the number of X columns)")
        n_groups = args.groups if args.groups is not None else len(offsets) // len(x_deg)
        if len(offsets) == n_groups:
            offsets = [[o] + [0.0] * (len(x_deg) - 1) for o in offsets]
        elif len(offsets) == n_groups * len(x_deg):
            offsets = [offsets[k * len(x_deg):(k + 1) * len(x_deg)] for k in range(n_groups)]
        else:
            raise UsageError("--offsets length does not match --groups and --x-degrees")
        groups = [SimGroup(str(k + 1), args.subjects_per_group, tuple(o)) for k, o in enumerate(offsets)]
        groups.append(SimGroup(args.control_label, args.control_subjects, (0.0,) * len(x_deg)))
        w_deg = args.w_degrees or [0, 1]
        alpha = args.alpha if args.alpha is not None else [45.49, -5.75]
        try:
            spec = SimSpec(
                alpha=tuple(alpha), sigma2=args.sigma2, lambda_inv=args.lambda_inv, groups=tuple(groups),
                times=tuple(args.times or STUDY_TIMES),
                time_offset=365.0 if args.time_offset is None else args.time_offset,
                time_scale=365.0 if args.time_scale is None else args.time_scale,
                w_degrees=tuple(w_deg), x_degrees=tuple(x_deg), z_degrees=tuple(args.z_degrees or [0, 1]),
                seed=args.seed, retention=None if args.retention is None else tuple(args.retention),
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    data = simulate_dataset(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(data, out)
    write_truth(spec, str(out) + ".truth.json")
    RunManifest(config={"command": "simulate", "spec": spec.as_dict()},
                inputs={}, seed=args.seed,
                results={"subjects": data.n_subjects, "rows": data.n_total,
                         "output_sha256": file_digest(out)}).write(str(out) + ".manifest.json")
    print(f"wrote {data.n_subjects} subjects ({data.n_total} rows) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- fit

def _build_hyper(settings, designs):
    hp = default_hyperparams(designs, d1=settings["d1"], d2=settings["d2"], d4=settings["d4"])
    G = designs.n_groups
    pi = list(settings["pi"])
    if len(pi) == 1:
        pi = pi * (G - 1) + [0.0]
    elif len(pi) == G - 1:
        pi = pi + [0.0]
    elif len(pi) != G:
        raise UsageError(f"--pi needs 1, {G - 1} or {G} values, got {len(pi)}")
    d3 = hp.d3 if settings["d3"] is None else np.asarray(settings["d3"], dtype=float)
    if len(d3) != designs.p_w:
        raise UsageError(f"d3 needs {designs.p_w} values")
    try:
        return HyperParams(d1=hp.d1, d2=hp.d2, d3=d3, d4=hp.d4, pi=pi)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _progress(chain):
    def report(it, min_ess, target):
        print(f"[chain {chain}] iteration {it}: min ESS {min_ess:.1f} / {target:.1f}", file=sys.stderr)
    return report


def cmd_fit(args):
    settings = resolve_settings(args, FIT_KEYS, STUDY_FIT_PRESET if args.paper_defaults else None)
    if settings["chains"] < 1:
        raise UsageError("--chains must be at least 1")
    schema = {k: settings[f"{k}_col"] for k in ("subject", "group", "time", "response")}
    data_path = Path(args.data)
    if not data_path.is_file():
        print(f"error: cannot read data file {data_path}", file=sys.stderr)
        return EXIT_DATA
    data = load_csv(data_path, schema, control=settings["control"])
    settings["control"] = data.control
    try:
        config = DesignConfig(settings["w_degrees"], settings["x_degrees"], settings["z_degrees"],
                              settings["time_offset"], settings["time_scale"])
        fwsr = diagnostics.FwsrConfig(settings["epsilon"], settings["delta"])
        if not 0.0 <= settings["threshold"] <= 1.0:
            raise ValueError("--threshold must lie in [0, 1]")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    designs = build_designs(data, config)
    config = designs.config
    settings["time_offset"], settings["time_scale"] = config.time_offset, config.time_scale
    hp = _build_hyper(settings, designs)
    settings["d3"], settings["pi"] = list(hp.d3), list(hp.pi)
    try:
        gcfgs = [
            GibbsConfig(seed=settings["seed"], max_iters=settings["max_iters"], min_iters=settings["min_iters"],
                        check_interval=settings["check_interval"], burn_in=settings["burn_in"], stream=c)
            for c in range(settings["chains"])
        ]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    settings["burn_in"] = gcfgs[0].effective_burn_in

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = lambda gc: run_chain(designs, hp=hp, gcfg=gc, fwsr=fwsr, progress=_progress(gc.stream))
    if len(gcfgs) == 1:
        traces = [runner(gcfgs[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(gcfgs)) as pool:
            traces = list(pool.map(runner, gcfgs))

    names = ["trace.csv"] if len(traces) == 1 else [f"trace_{c}.csv" for c in range(len(traces))]
    for name, tr in zip(names, traces):
        tr.meta["threshold"] = settings["threshold"]
        tr.save(out / name)
    if len(traces) == 1:
        report = diagnostics.summarize(traces[0])
        agreement = {}
    else:
        report, _ = diagnostics.pooled_summary(traces)
        agreement = {"chain_inclusion": report.extra["chain_inclusion"].tolist(),
                     "max_inclusion_spread": report.extra["chain_inclusion_spread"]}
    threshold = settings["threshold"]
    (out / "report.csv").write_text(diagnostics.report_csv_text(report, threshold), encoding="utf-8")
    lo, hi = data.time_range()
    grid = np.linspace(lo, hi, settings["grid_points"])
    curves = diagnostics.fitted_trajectories(report, config, grid)
    (out / "trajectories.csv").write_text(diagnostics.trajectories_csv_text(curves, grid), encoding="utf-8")
    sys.stdout.write(diagnostics.format_table(report, threshold))

    converged = all(t.converged for t in traces)
    (out / "run.cfg").write_text(_settings_text(settings), encoding="utf-8")
    RunManifest(
        config={"command": "fit", **{k: v for k, v in settings.items()}},
        inputs={data_path.name: file_digest(data_path)},
        seed=settings["seed"],
        results={"converged": converged, "iterations": [t.iterations for t in traces],
                 "config_hash": [t.config_hash for t in traces], **agreement},
    ).write(out / "manifest.json")
    if not converged:
        print("warning: iteration cap reached before the stopping rule passed", file=sys.stderr)
        return EXIT_CAP
    return EXIT_OK


# ---------------------------------------------------------------- report

def cmd_report(args):
    path = Path(args.path)
    if path.is_dir():
        files = sorted(path.glob("trace*.csv"))
        if not files:
            print(f"error: no trace files in {path}", file=sys.stderr)
            return EXIT_DATA
    else:
        files = [path]
    traces = [ChainTrace.load(f) for f in files]
    threshold = args.threshold
    if threshold is None:
        threshold = traces[0].meta.get("threshold", diagnostics.DEFAULT_THRESHOLD)
    if not 0.0 <= threshold <= 1.0:
        raise UsageError("--threshold must lie in [0, 1]")
    report = diagnostics.summarize(traces[0]) if len(traces) == 1 else diagnostics.pooled_summary(traces)[0]
    sys.stdout.write(diagnostics.format_table(report, threshold))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="lmmselect", description="Bayesian treatment-vs-control selection in LMMs")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def design_flags(sp):
        sp.add_argument("--w-degrees", type=_int_list)
        sp.add_argument("--x-degrees", type=_int_list)
        sp.add_argument("--z-degrees", type=_int_list)
        sp.add_argument("--time-offset", type=float)
        sp.add_argument("--time-scale", type=float)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--paper-defaults", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--groups", type=int, help="number of treatment groups")
    s.add_argument("--offsets", type=parse_float_list)
    s.add_argument("--subjects-per-group", type=int, default=36)
    s.add_argument("--control-subjects", type=int, default=297)
    s.add_argument("--control-label", default="99")
    s.add_argument("--alpha", type=parse_float_list)
    s.add_argument("--sigma2", type=float, default=5.06)
    s.add_argument("--lambda-inv", type=float, default=1.0)
    s.add_argument("--times", type=parse_float_list)
    s.add_argument("--retention", type=parse_float_list)
    design_flags(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the Gibbs sampler on a CSV dataset")
    f.add_argument("data")
    f.add_argument("--out", default="fit_out")
    f.add_argument("--config")
    f.add_argument("--paper-defaults", action="store_true")
    f.add_argument("--control")
    f.add_argument("--epsilon", type=float)
    f.add_argument("--delta", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--max-iters", type=int)
    f.add_argument("--min-iters", type=int)
    f.add_argument("--check-interval", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--threshold", type=float)
    f.add_argument("--chains", type=int)
    f.add_argument("--pi", type=parse_float_list)
    f.add_argument("--d1", type=float)
    f.add_argument("--d2", type=float)
    f.add_argument("--d4", type=float)
    f.add_argument("--grid-points", type=int)
    for col in ("subject", "group", "time", "response"):
        f.add_argument(f"--{col}-col")
    design_flags(f)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="summarize an existing trace")
    r.add_argument("path", help="fit output directory or trace CSV")
    r.add_argument("--threshold", type=float)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnknownControlGroupError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IdentifiabilityError as exc:
        print(f"identifiability error: {exc}", file=sys.stderr)
        return EXIT_IDENT
    except TraceParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataValidationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
