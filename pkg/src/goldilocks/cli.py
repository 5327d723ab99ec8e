"""Command-line entry point: ``goldilocks <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand writes
its outputs plus a ``manifest_<subcommand>.json`` run manifest (input
hashes, seed, package versions) into ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import econ, mc, panel as pn, plotting, rice_rf, sweep as sw, synth
from .errors import DataError
from .evi import METRICS, build_evi_table
from .flood import FloodSpec, FloodWindow, build_flood_table
from .scene import load_scene, validate_scene, write_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
GLOBAL_DEFAULTS = {"seed": 0, "threads": 0, "alpha": 0.05, "out": ".", "config": None}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _global_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed (default 0)")
    g.add_argument("--threads", type=_non_negative_int, default=argparse.SUPPRESS,
                   help="worker threads; 0 = all cores, 1 = sequential (default 0)")
    g.add_argument("--alpha", type=_alpha, default=argparse.SUPPRESS, help="significance level (default 0.05)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option defaults")


def _scene_inputs(p: argparse.ArgumentParser, seeds: bool = True) -> None:
    p.add_argument("--scene", help="scene manifest (default <out>/scene.json)")
    p.add_argument("--rice-mask", help="rice mask CSV (pixel_id, year, rice) overriding the scene's mask")
    if seeds:
        p.add_argument("--seeds", help="seed CSV (default <out>/seeds.csv)")
        p.add_argument("--seed-measure", choices=pn.SEED_MEASURES, default="sum")
        p.add_argument("--no-coastal", action="store_true", help="drop coastal districts")


def _spec_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--quantile", type=int, required=required, help="flood quantile level (5..95)")
    p.add_argument("--start", type=int, required=required, help="window start day")
    p.add_argument("--end", type=int, required=required, help="window end day")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="goldilocks", description="Flood-window specification analysis for stress-tolerant rice.")
    _global_flags(parser)
    parser.add_argument("--version", action="version", version=f"goldilocks {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        _global_flags(p)
        return p

    p = add("synth", "generate a synthetic scene, seed records, labels and ground truth")
    p.add_argument("--districts", type=_positive_int, default=64)
    p.add_argument("--pixels", type=_positive_int, default=8, help="pixels per district")
    p.add_argument("--years", type=_positive_int, default=20)
    p.add_argument("--planted-level", type=int, default=65)
    p.add_argument("--planted-window", type=int, nargs=2, default=(15, 20), metavar=("START", "END"))
    p.add_argument("--effect", type=float, default=0.03, help="planted EVI boost")
    p.add_argument("--noise-sd", type=float, default=0.02)
    p.add_argument("--decoy-share", type=float, default=0.0)
    p.add_argument("--label-districts", type=_positive_int, default=3)

    p = add("validate", "check a scene and report violations")
    p.add_argument("--scene", help="scene manifest (default <out>/scene.json)")

    p = add("rice", "rice classifier: cross-validate, train or predict")
    p.add_argument("action", choices=("cv", "train", "predict"))
    p.add_argument("--scene", help="scene manifest (default <out>/scene.json)")
    p.add_argument("--labels", help="labelled points CSV (default <out>/labels.csv)")
    p.add_argument("--model", help="model JSON for predict (default <out>/rice_model.json)")
    p.add_argument("--trees", type=_positive_int, default=1000)
    p.add_argument("--min-leaf", type=_positive_int, default=5)
    p.add_argument("--test-year", type=int, help="hold-out year (default: last labelled year)")
    p.add_argument("--year", type=int, action="append", help="year(s) to predict (default: all)")

    p = add("flood", "flood metric table for every candidate spec")
    _scene_inputs(p, seeds=False)
    p.add_argument("--all-specs", action="store_true", help="include empty specs in the long table")

    p = add("evi", "seasonal EVI metrics per district-year")
    _scene_inputs(p, seeds=False)
    p.add_argument("--min-coverage", type=float, default=0.5)

    p = add("panel", "assemble the district-year estimation panel")
    _scene_inputs(p)

    p = add("event", "event study on years since seed availability")
    _scene_inputs(p)
    p.add_argument("--outcome", choices=METRICS, default="evi_mean")
    p.add_argument("--lead", type=_positive_int, default=8)
    p.add_argument("--lag", type=_positive_int, default=10)

    for name, help_ in (("did", "post-2010 x flood-prone difference-in-differences"),
                        ("twfe", "seed x flood two-way fixed effects")):
        p = add(name, help_)
        _scene_inputs(p)
        _spec_flags(p)
        p.add_argument("--outcome", choices=METRICS, default="evi_mean")
        if name == "twfe":
            p.add_argument("--flood-form", choices=econ.FLOOD_FORMS, default="days")

    p = add("sweep", "regressions across all non-empty flood specs and outcomes")
    _scene_inputs(p)
    p.add_argument("--estimator", choices=("did", "twfe", "both"), default="twfe")
    p.add_argument("--outcome", choices=METRICS + ("all",), default="all")
    p.add_argument("--flood-form", choices=econ.FLOOD_FORMS, default="days")
    p.add_argument("--no-charts", action="store_true", help="skip the SVG charts")

    p = add("mc", "Monte Carlo sensitivity of the interaction regression")
    p.add_argument("--target", choices=mc.TARGETS + ("all",), default="all")
    p.add_argument("--reps", type=_positive_int, default=10_000)
    p.add_argument("--trial", help="trial CSV (default: synthetic trial from --seed)")
    return parser


# --------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Per-invocation context: options, inputs read and outputs written."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.info: dict = {}

    @property
    def threads(self) -> int:
        return self.args.threads or os.cpu_count() or 1

    def path(self, given: str | None, default: str) -> Path:
        return Path(given) if given else self.out / default

    def read(self, path: Path) -> Path:
        if not path.exists():
            raise DataError(f"input not found: {path}")
        self.inputs[path.name] = _sha256(path)
        return path

    def wrote(self, *paths: Path) -> None:
        self.outputs.extend(Path(p).name for p in paths)

    def csv(self, df: pd.DataFrame, name: str) -> Path:
        path = self.out / name
        df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
        self.wrote(path)
        return path

    def manifest(self) -> Path:
        args = {k: (Path(v).name if k in _PATH_ARGS and v else v) for k, v in sorted(vars(self.args).items())}
        args = {k: list(v) if isinstance(v, tuple) else v for k, v in args.items()}
        doc = {
            "command": self.args.command,
            "arguments": args,
            "seed": self.args.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(set(self.outputs)),
            "info": self.info,
            "versions": {
                "goldilocks": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "pandas": pd.__version__,
                "scipy": __import__("scipy").__version__,
                "matplotlib": __import__("matplotlib").__version__,
            },
        }
        path = self.out / f"manifest_{self.args.command}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        return path


_PATH_ARGS = {"out", "config", "scene", "seeds", "labels", "model", "trial", "rice_mask"}


def _scene(run: Run):
    scene = load_scene(run.read(run.path(run.args.scene, "scene.json")))
    mask_path = getattr(run.args, "rice_mask", None)
    if mask_path:
        scene = _apply_rice_mask(scene, pd.read_csv(run.read(Path(mask_path)), dtype={"pixel_id": str}))
    return scene


def _apply_rice_mask(scene, mask: pd.DataFrame):
    missing = {"pixel_id", "year", "rice"} - set(mask.columns)
    if missing:
        raise DataError(f"rice mask lacks columns {sorted(missing)}")
    full = scene.rice.copy() if scene.has_rice else np.zeros((scene.n_pixels, scene.calendar.n_years), bool)
    covered = np.zeros_like(full)
    pix = mask["pixel_id"].map(scene.pixel_index)
    if pix.isna().any():
        raise DataError("rice mask references unknown pixels")
    yi = mask["year"].astype(int).to_numpy() - int(scene.calendar.years[0])
    if (yi < 0).any() or (yi >= scene.calendar.n_years).any():
        raise DataError("rice mask references years outside the calendar")
    full[pix.to_numpy(int), yi] = mask["rice"].astype(bool).to_numpy()
    covered[pix.to_numpy(int), yi] = True
    if not scene.has_rice and not covered.all():
        raise DataError("rice mask does not cover every pixel-year and the scene has no mask to fall back on")
    return scene.with_rice(full)


def _panel(run: Run):
    scene = _scene(run)
    seeds = pn.read_seeds(run.read(run.path(run.args.seeds, "seeds.csv")))
    panel = pn.build_panel(scene, seeds, seed_measure=run.args.seed_measure)
    if run.args.no_coastal:
        panel = pn.filter_coastal(panel, scene.districts)
    run.info["panel_rows"] = len(panel.frame)
    run.info["dropped"] = panel.dropped
    return scene, panel


def _spec(args) -> FloodSpec:
    try:
        return FloodSpec(args.quantile, FloodWindow(args.start, args.end))
    except ValueError as exc:
        raise UsageError(f"goldilocks {args.command}: error: {exc}") from exc


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(run: Run) -> None:
    a = run.args
    lo = 2010
    cfg = synth.SynthConfig(
        n_districts=a.districts, pixels_per_district=a.pixels, n_years=a.years,
        planted_quantile_level=a.planted_level,
        planted_window=FloodWindow(*a.planted_window),
        treatment_effect=a.effect, noise_sd=a.noise_sd, decoy_share=a.decoy_share,
        seed_rollout_year_range=(lo, max(lo, 2002 + a.years - 2)), rng_seed=a.seed,
    )
    scene, truth = synth.synth_scene(cfg)
    manifest = write_scene(scene, run.out)
    run.wrote(manifest, run.out / "pixels.csv", run.out / "districts.csv")
    run.csv(synth.synth_seeds(cfg, truth), "seeds.csv")
    labels = synth.synth_labels(scene, cfg, districts=list(scene.district_ids[: a.label_districts]))
    run.csv(labels, "labels.csv")
    boost = sorted(truth.boost)
    doc = {
        "planted_spec": truth.planted_spec.label,
        "treatment_effect": cfg.treatment_effect,
        "rollout_year": truth.rollout_year,
        "boost": [[d, y] for d, y in boost],
    }
    path = run.out / "truth.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    run.wrote(path)
    cfg_doc = asdict(cfg)
    cfg_doc["planted_window"] = [cfg.planted_window.start_day, cfg.planted_window.end_day]
    run.info["config"] = cfg_doc
    print(f"wrote scene with {scene.n_pixels} pixels, {len(boost)} planted district-years to {run.out}")


def cmd_validate(run: Run) -> int:
    from .scene import load_scene_unchecked

    scene = load_scene_unchecked(run.read(run.path(run.args.scene, "scene.json")))
    report = validate_scene(scene)
    for line in report.lines():
        print(line)
    run.info["errors"], run.info["warnings"] = len(report.errors), len(report.warnings)
    print(f"{len(report.errors)} error(s), {len(report.warnings)} warning(s)")
    return EXIT_OK if report.ok else EXIT_DATA


def cmd_rice(run: Run) -> None:
    a = run.args
    scene = load_scene(run.read(run.path(a.scene, "scene.json")))
    cfg = rice_rf.RfConfig(n_trees=a.trees, min_leaf=a.min_leaf, rng_seed=a.seed, threads=run.threads)
    model_path = run.path(a.model, "rice_model.json")
    if a.action == "predict":
        doc = json.loads(run.read(model_path).read_text())
        models = [rice_rf.RfModel.from_dict(m) for m in doc["models"]]
        years = a.year or [int(y) for y in scene.calendar.years]
        mask = pd.concat([rice_rf.predict_scene(models, scene, y) for y in years], ignore_index=True)
        run.csv(mask, "rice_mask.csv")
        run.info["rice_share"] = float(mask["rice"].mean())
        print(f"predicted {len(mask)} pixel-years, rice share {mask['rice'].mean():.3f}")
        return
    labels = pd.read_csv(run.read(run.path(a.labels, "labels.csv")), dtype={"pixel_id": str})
    raw = rice_rf.raw_features(scene, labels)
    report = rice_rf.evaluate(raw, cfg, a.test_year)
    run.csv(report.to_frame(), "rice_accuracy.csv")
    print(report.to_frame().to_string(index=False))
    if a.action == "train":
        models = rice_rf.fold_models(raw, cfg)
        path = run.out / "rice_model.json"
        path.write_text(json.dumps({"models": [m.to_dict() for m in models]}, sort_keys=True) + "\n")
        run.wrote(path)
        print(f"saved {len(models)} fold models to {path.name}")


def cmd_flood(run: Run) -> None:
    scene = _scene(run)
    table = build_flood_table(scene)
    frame = table.to_frame()
    if not run.args.all_specs:
        frame = frame[frame["empty_spec"] == 0]
    run.csv(frame, "flood_metrics.csv")
    specs = pd.DataFrame(
        {
            "spec": [s.label for s in table.specs],
            "quantile_level": [s.quantile_level for s in table.specs],
            "start_day": [s.window.start_day for s in table.specs],
            "end_day": [s.window.end_day for s in table.specs],
            "empty": table.empty_spec.astype(int),
            "share_in_window": _share_in_window(table),
        }
    )
    run.csv(specs, "flood_specs.csv")
    run.info["nonempty_specs"] = int((~table.empty_spec).sum())
    print(f"{len(table.specs)} candidate specs, {int((~table.empty_spec).sum())} non-empty")


def _share_in_window(table) -> np.ndarray:
    ok = ~table.missing
    if not ok.any():
        return np.full(len(table.specs), np.nan)
    return table.in_window[ok].mean(axis=0)


def cmd_evi(run: Run) -> None:
    scene = _scene(run)
    run.csv(build_evi_table(scene, min_coverage=run.args.min_coverage), "evi_metrics.csv")
    print(f"EVI metrics for {len(scene.districts)} districts x {scene.calendar.n_years} years")


def cmd_panel(run: Run) -> None:
    _, panel = _panel(run)
    run.csv(panel.frame, "panel.csv")
    print(f"panel: {len(panel.frame)} rows; dropped {panel.dropped}")


def cmd_event(run: Run) -> None:
    a = run.args
    _, panel = _panel(run)
    es = econ.run_event_study(panel, a.outcome, j_lead=a.lead, j_lag=a.lag, alpha=a.alpha)
    run.csv(es.table, f"event_{a.outcome}.csv")
    svg = plotting.event_study_plot(es.table, run.out / f"event_{a.outcome}.svg", title=f"event study | {a.outcome}")
    run.wrote(svg)
    mean, lo, hi = es.post_mean(a.alpha)
    run.info.update(phi=es.phi, phi_se=es.phi_se, post_mean=[mean, lo, hi])
    print(es.table.to_string(index=False))
    print(f"flood control: {es.phi:.6g} (se {es.phi_se:.6g}); post-period mean {mean:.6g} [{lo:.6g}, {hi:.6g}]")


def _regression(run: Run, estimator: str) -> None:
    a = run.args
    spec = _spec(a)
    _, panel = _panel(run)
    if estimator == "did":
        res = econ.run_did(panel, a.outcome, spec)
    else:
        res = econ.run_twfe(panel, a.outcome, spec, a.flood_form)
    frame = res.to_frame(a.alpha)
    run.csv(frame, f"{estimator}_{a.outcome}_{spec.label}.csv")
    run.info.update(n_obs=res.n_obs, n_clusters=res.n_clusters)
    print(frame.to_string(index=False))


def cmd_did(run: Run) -> None:
    _regression(run, "did")


def cmd_twfe(run: Run) -> None:
    _regression(run, "twfe")


def cmd_sweep(run: Run) -> None:
    a = run.args
    _, panel = _panel(run)
    estimators = ("did", "twfe") if a.estimator == "both" else (a.estimator,)
    outcomes = METRICS if a.outcome == "all" else (a.outcome,)
    summary = []
    for est in estimators:
        for outcome in outcomes:
            res = sw.sweep(panel, est, outcome, alpha=a.alpha, flood_form=a.flood_form, threads=run.threads)
            summary.append(res.summary())
            if not res.entries:
                print(f"{est} {outcome}: no non-empty specs")
                continue
            if a.no_charts:
                run.csv(res.to_frame(), f"spec_{est}_{outcome}_{res.flood_form}.csv")
            else:
                run.wrote(*sw.emit_chart(res, run.out))
            c = res.counts
            print(f"{est} {outcome} ({res.flood_form}): {len(res.entries)} specs, "
                  f"{res.n_skipped_empty} empty; pos_sig {c['pos_sig']}, neg_sig {c['neg_sig']}, insig {c['insig']}")
    run.csv(pd.DataFrame(summary), "sweep_summary.csv")


def cmd_mc(run: Run) -> None:
    a = run.args
    if a.trial:
        data = mc.read_trial(run.read(Path(a.trial)))
    else:
        data = mc.synth_trial(mc.TrialConfig(rng_seed=a.seed))
        run.csv(data, "trial.csv")
    base = mc.base_regression(data)
    run.info["base_interaction"] = {"coef": base.beta, "se": base.beta_se, "p": base.beta_p}
    targets = mc.TARGETS if a.target == "all" else (a.target,)
    frames = {}
    for t in targets:
        res = mc.run_mc(data, mc.McConfig(target=t, reps=a.reps, alpha=a.alpha, rng_seed=a.seed))
        run.wrote(*res.write(run.out))
        frames[t] = res.to_frame()
        print(f"{t}: share significant " + " ".join(f"{s:.3f}" for s in res.share))
    run.wrote(plotting.mc_curves(frames, run.out / "mc_curves.svg", alpha=a.alpha))


COMMANDS = {
    "synth": cmd_synth, "validate": cmd_validate, "rice": cmd_rice, "flood": cmd_flood,
    "evi": cmd_evi, "panel": cmd_panel, "event": cmd_event, "did": cmd_did, "twfe": cmd_twfe,
    "sweep": cmd_sweep, "mc": cmd_mc,
}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = getattr(args, "config", None)
    if config:
        try:
            overrides = json.loads(Path(config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"goldilocks: error: cannot read config {config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError("goldilocks: error: config must be a JSON object")
        given = vars(args)
        known = set(given) | set(GLOBAL_DEFAULTS)
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise UsageError(f"goldilocks: error: unknown config keys {unknown}")
        # command-line values win; the config fills in the rest
        tokens = [t.split("=", 1)[0] for t in (argv if argv is not None else sys.argv[1:])]
        explicit = {k for k in given if _flag(k) in tokens}
        for k, v in overrides.items():
            if k not in explicit:
                setattr(args, k, v)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if not 0 < float(args.alpha) < 1:
        raise UsageError(f"goldilocks: error: alpha must lie in (0, 1), got {args.alpha}")
    return args


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    run = Run(args)
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code = COMMANDS[args.command](run)
        run.manifest()
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        print(f"goldilocks {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
