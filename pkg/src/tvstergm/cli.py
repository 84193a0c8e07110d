"""Command-line driver.

Configuration is a JSON object (``--config``). Values are resolved in this
order, later ones winning: built-in defaults, the config file, command-line
flags. Relative input paths in a config file are taken relative to the file.
Every command writes ``config.json`` (the resolved configuration) and
updates ``manifest.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ContractError, InputError, NumericalError, TvstergmError
from .netstats import DYAD_FIELDS, GOF_FIELDS, global_stats_matrix

logger = logging.getLogger("tvstergm")

DEFAULTS = {
    "edges": None, "monadic": None, "dyadic": None, "registry": None,
    "threshold": 0.0, "window": 1, "use_predecessors": False,
    "variant": "STERGM+RE", "covariates": list(DYAD_FIELDS), "term_kind": "time-varying", "terms": None,
    "intercept_kind": "constant",
    "vc_dimension": 65, "vc_degree": 2, "vc_penalty_order": 1,
    "re_dimension": 9, "re_degree": 2, "re_penalty_order": 1,
    "lambda_mode": "select", "lambdas": None,
    "eval_start": None, "eval_end": None, "train_window": 1,
    "n_sims": 1000, "seed": 0,
    "fpca_grid": 100, "fpca_components": 3, "perturbation_multiple": 2.0,
    "thresholds": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0], "widths": [1, 2, 3], "robustness_lambdas": "baseline",
}
PATH_KEYS = ("edges", "monadic", "dyadic", "registry")
FLOAT_FORMAT = "%.10g"
EXIT_CODES = {InputError: 1, ContractError: 2, NumericalError: 3}

HELP = __doc__ + """
exit status: 0 success, 1 input error, 2 contract violation, 3 numerical failure.
Errors are printed to stderr as one line: ``tvstergm: error[<code>]: <Kind>: <message>``.
"""


# ------------------------------------------------------------------ utilities

def _clean(obj):
    """Make ``obj`` strict-JSON serializable (non-finite floats become null)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=1, sort_keys=True, allow_nan=False) + "\n")
    return Path(path)


def write_csv(path, frame: pd.DataFrame):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return Path(path)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import matplotlib
    import scipy

    return {"tvstergm": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__, "matplotlib": matplotlib.__version__}


class Run:
    """Resolved configuration plus an output directory that tracks its files."""

    def __init__(self, config: dict, output: Path, jobs: int, base: Path):
        self.config = config
        self.output = output
        self.jobs = jobs
        self.base = base
        self.files: list[Path] = []
        self._panel = None
        output.mkdir(parents=True, exist_ok=True)

    def path(self, key):
        v = self.config.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base / p

    def out(self, *parts) -> Path:
        p = self.output.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    # ------------------------------------------------------------ model parts
    def spec(self):
        from .fitter import ModelSpec, Term

        c = self.config
        kw = {k: c[k] for k in ("intercept_kind", "vc_dimension", "vc_degree", "vc_penalty_order",
                                "re_dimension", "re_degree", "re_penalty_order")}
        if c.get("terms"):
            return ModelSpec(c["variant"], tuple(Term(*t) for t in c["terms"]), **kw)
        return ModelSpec.default(c["variant"], tuple(c["covariates"]), c["term_kind"], **kw)

    def lambdas(self):
        mode = self.config["lambda_mode"]
        if mode == "select":
            return "select"
        if mode == "fixed":
            lam = self.config.get("lambdas")
            if lam is None:
                raise InputError("lambda_mode 'fixed' needs 'lambdas'")
            return lam
        raise InputError(f"lambda_mode must be 'select' or 'fixed', got {mode!r}")

    def panel(self):
        if self._panel is None:
            from .netpanel import load_panel

            if not self.config.get("edges") or not self.config.get("monadic"):
                raise InputError("config needs at least 'edges' and 'monadic' input paths")
            for k in PATH_KEYS:
                p = self.path(k)
                if p is not None and not p.exists():
                    raise InputError(f"{k} file not found: {p}")
            self._panel = load_panel(self.path("edges"), self.path("monadic"), self.path("dyadic"),
                                     self.path("registry"), threshold=float(self.config["threshold"]),
                                     width=int(self.config["window"]),
                                     use_predecessors=bool(self.config["use_predecessors"]))
        return self._panel

    def model(self, fit_path=None):
        from .fitter import FittedModel

        p = Path(fit_path) if fit_path else self.output / "fit.json"
        if not p.exists():
            raise InputError(f"no fitted model at {p}; run 'fit' first")
        try:
            return FittedModel.from_dict(json.loads(p.read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"cannot read fitted model {p}: {exc}") from None

    def eval_range(self, panel):
        ps = panel.periods
        start = self.config["eval_start"]
        end = self.config["eval_end"]
        if len(ps) < 3:
            raise ContractError("insufficient horizon: need at least 3 periods")
        return (ps[1] if start is None else int(start)), (ps[-2] if end is None else int(end))

    # ------------------------------------------------------------- bookkeeping
    def finish(self):
        echo = {k: v for k, v in self.config.items()}
        cfg_path = self.out("config.json")
        write_json(cfg_path, echo)
        canonical = json.dumps(_clean(echo), sort_keys=True, separators=(",", ":"))
        man_path = self.output / "manifest.json"
        manifest = json.loads(man_path.read_text()) if man_path.exists() else {}
        outputs = manifest.get("outputs", {})
        for f in self.files:
            if f.exists():
                outputs[f.relative_to(self.output).as_posix()] = sha256(f)
        inputs = {}
        for k in PATH_KEYS:
            p = self.path(k)
            if p is not None and p.exists():
                inputs[k] = {"path": str(self.config[k]), "sha256": sha256(p)}
        manifest = {"config_sha256": hashlib.sha256(canonical.encode()).hexdigest(), "inputs": inputs,
                    "versions": _versions(), "outputs": dict(sorted(outputs.items()))}
        write_json(man_path, manifest)


# ------------------------------------------------------------------ commands

def cmd_synth(run: Run, args):
    from .synth import generate_synthetic

    fx = generate_synthetic(n_actors=args.n_actors, n_periods=args.n_periods, start=args.start_year,
                            seed=run.config["seed"])
    paths = fx.write(run.output / "data")
    for p in paths.values():
        run.files.append(Path(p))
    write_json(run.out("truth.json"), fx.truth.to_dict())
    for k, p in paths.items():
        run.config[k] = Path(p).relative_to(run.output).as_posix()
    run.base = run.output
    if "covariates" not in args.explicit:
        run.config["covariates"] = list(fx.truth.fit_terms)
    if "vc_dimension" not in args.explicit:
        run.config["vc_dimension"] = 10


def _ingest_tables(panel):
    from .transition import adjacency, build_transition

    rows, degs = [], []
    for k, p in enumerate(panel.periods):
        actors = tuple(sorted(panel.actors[p]))
        Y = adjacency(panel.edges[p], actors)
        g = global_stats_matrix(Y) if len(actors) >= 2 else None
        row = {"period": p, "n_actors": len(actors)}
        row.update({f: (getattr(g, f) if g else np.nan) for f in GOF_FIELDS})
        row["n_common"], row["n_formation"], row["n_persistence"] = 0, 0, 0
        if k > 0:
            try:
                tr = build_transition(panel, p)
                row["n_common"] = tr.n
                row["n_formation"] = int(tr.formation_mask.sum())
                row["n_persistence"] = int(tr.persistence_mask.sum())
            except ContractError:
                pass
        rows.append(row)
        outd, ind = Y.sum(axis=1), Y.sum(axis=0)
        degs += [(p, a, int(o), int(i)) for a, o, i in zip(actors, outd, ind)]
    return (pd.DataFrame(rows),
            pd.DataFrame(degs, columns=["period", "actor", "outdegree", "indegree"]))


def cmd_ingest(run: Run, args):
    panel = run.panel()
    summary, degrees = _ingest_tables(panel)
    write_csv(run.out("panel_summary.csv"), summary)
    write_csv(run.out("degrees.csv"), degrees)
    write_json(run.out("provenance.json"), dict(panel.provenance, periods=list(panel.periods)))


def cmd_fit(run: Run, args):
    from .fitter import fit_model

    spec = run.spec()
    model = fit_model(run.panel(), spec, lambdas=run.lambdas())
    model.provenance = {"threshold": run.config["threshold"], "window": run.config["window"]}
    write_json(run.out("fit.json"), model.to_dict())
    return model


def cmd_curves(run: Run, args, model=None):
    from .fitter import coefficient_table
    from .plots import plot_curves

    model = model or run.model(args.fit)
    lo, hi = model.time_range
    grid = np.arange(lo, hi + 1, model.width, dtype=float)
    table = coefficient_table(model, grid)
    write_csv(run.out("coefficients.csv"), table)
    for side in dict.fromkeys(table["side"]):
        plot_curves(table[table["side"] == side], run.out(f"curves_{side}.svg"), side)


def cmd_fpca(run: Run, args, model=None):
    from .fpca import discretize_curves, fpca
    from .plots import plot_perturbation

    model = model or run.model(args.fit)
    roles = [t.name for t in model.spec.terms if t.kind == "random-smooth"]
    if not roles:
        raise ContractError(f"{model.spec.variant} has no random smooth curves")
    registry = run.panel().registry if run.config.get("edges") else None
    for side, fit in model.fits.items():
        if fit is None:
            continue
        for role in roles:
            bundle = discretize_curves(model, role, side, n_grid=int(run.config["fpca_grid"]), registry=registry)
            m = min(int(run.config["fpca_components"]), len(bundle.actors), bundle.grid.size)
            res = fpca(bundle, m)
            sub = run.output / "fpca" / f"{side}_{role}"
            for p in res.write(sub):
                run.files.append(Path(p))
            plot_perturbation(res, run.out("fpca", f"{side}_{role}", "perturbation.svg"),
                              multiple=float(run.config["perturbation_multiple"]))


def cmd_evaluate(run: Run, args):
    from .evalsim import rolling_evaluation
    from .plots import plot_series

    panel = run.panel()
    start, end = run.eval_range(panel)
    res = rolling_evaluation(panel, run.spec(), start, end, lambdas=run.lambdas(),
                             window=int(run.config["train_window"]), jobs=run.jobs)
    table = res.table[["period", "side", "pr_auc", "roc_auc"]]
    write_csv(run.out("auc.csv"), table)
    write_json(run.out("evaluate_diagnostics.json"), res.diagnostics)
    long = table.melt(["period", "side"], var_name="measure", value_name="auc")
    long["curve"] = long["side"] + " " + long["measure"]
    plot_series(long, run.out("auc.svg"), "period", "auc", "curve")


def _simulate(run: Run):
    from .evalsim import rolling_simulation

    panel = run.panel()
    start, end = run.eval_range(panel)
    sims, diag = rolling_simulation(panel, run.spec(), start, end, n_sims=int(run.config["n_sims"]),
                                    seed=int(run.config["seed"]), lambdas=run.lambdas(),
                                    window=int(run.config["train_window"]), jobs=run.jobs)
    rows = []
    for period, sim in sorted(sims.items()):
        for r, Y in enumerate(sim.adjacency):
            rows.append((period, r) + global_stats_matrix(Y).as_tuple())
    table = pd.DataFrame(rows, columns=["period", "replicate"] + list(GOF_FIELDS))
    write_csv(run.out("simulations.csv"), table)
    write_json(run.out("simulate_diagnostics.json"), diag)
    return panel, sims


def cmd_simulate(run: Run, args):
    _simulate(run)


def cmd_gof(run: Run, args):
    from .evalsim import gof_compare
    from .plots import plot_gof

    panel, sims = _simulate(run)
    report = gof_compare(sims, panel)
    write_csv(run.out("gof.csv"), report.table)
    plot_gof(report.table, run.out("gof.svg"))


def cmd_robustness(run: Run, args):
    from .netpanel import ActorRegistry, load_covariates, load_edge_list, load_registry
    from .robustness import robustness_grid

    flows = load_edge_list(run.path("edges"))
    cov = load_covariates(run.path("monadic"), run.path("dyadic"))
    reg = load_registry(run.path("registry")) if run.config.get("registry") else ActorRegistry.from_covariates(cov)
    lam = run.config["robustness_lambdas"]
    if lam not in ("baseline", "select"):
        raise InputError("robustness_lambdas must be 'baseline' or 'select'")
    res = robustness_grid(flows, cov, reg, run.spec(), run.config["thresholds"], run.config["widths"], lam)
    write_csv(run.out("robustness_summary.csv"), res.summary)
    write_csv(run.out("robustness_coefficients.csv"), res.coefficients)
    write_csv(run.out("nesting.csv"), res.nesting)
    if not res.nested:
        raise ContractError("binarized edge sets are not nested across thresholds")


def cmd_pipeline(run: Run, args):
    cmd_ingest(run, args)
    model = cmd_fit(run, args)
    cmd_curves(run, args, model)
    if any(t.kind == "random-smooth" for t in model.spec.terms):
        cmd_fpca(run, args, model)
    cmd_evaluate(run, args)
    cmd_gof(run, args)


COMMANDS = {
    "synth": (cmd_synth, "write the standard synthetic fixture and a matching config"),
    "ingest": (cmd_ingest, "binarize the panel; write panel_summary.csv, degrees.csv"),
    "fit": (cmd_fit, "fit the model; write fit.json"),
    "curves": (cmd_curves, "coefficient curves from fit.json; write coefficients.csv and plots"),
    "fpca": (cmd_fpca, "FPCA of random curves from fit.json; write fpca/<side>_<role>/"),
    "evaluate": (cmd_evaluate, "rolling out-of-sample AUC; write auc.csv"),
    "simulate": (cmd_simulate, "rolling simulation; write simulations.csv"),
    "gof": (cmd_gof, "simulation goodness of fit; write simulations.csv, gof.csv"),
    "robustness": (cmd_robustness, "refit over thresholds and window widths"),
    "pipeline": (cmd_pipeline, "ingest, fit, curves, fpca, evaluate, gof"),
}


# ------------------------------------------------------------------- parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"usage: {message}")


def _csv_list(kind):
    def parse(s):
        return [kind(x) for x in s.split(",") if x.strip()]
    return parse


FLAGS = [
    # (flag, config key, type, help)
    ("--edges", "edges", str, "edge list CSV (period,sender,receiver,value)"),
    ("--monadic", "monadic", str, "monadic covariates CSV"),
    ("--dyadic", "dyadic", str, "dyadic covariates CSV"),
    ("--registry", "registry", str, "actor registry CSV"),
    ("--threshold", "threshold", float, "binarization threshold (edge iff value > threshold)"),
    ("--window", "window", int, "window width in periods"),
    ("--variant", "variant", str, "model variant name or number 1-7"),
    ("--covariates", "covariates", _csv_list(str), "comma-separated covariate list"),
    ("--term-kind", "term_kind", str, "constant | time-varying"),
    ("--vc-dimension", "vc_dimension", int, "basis dimension of varying coefficients"),
    ("--re-dimension", "re_dimension", int, "basis dimension of random curves"),
    ("--lambda-mode", "lambda_mode", str, "select | fixed"),
    ("--lambdas", "lambdas", float, "fixed smoothing parameter (all penalties)"),
    ("--eval-start", "eval_start", int, "first training period of rolling evaluation"),
    ("--eval-end", "eval_end", int, "last training period of rolling evaluation"),
    ("--n-sims", "n_sims", int, "simulation replicates per period"),
    ("--seed", "seed", int, "random seed"),
    ("--thresholds", "thresholds", _csv_list(float), "robustness thresholds"),
    ("--widths", "widths", _csv_list(int), "robustness window widths"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tvstergm", description=HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, doc) in COMMANDS.items():
        p = sub.add_parser(name, help=doc, description=doc + "\n\nprecedence: defaults < --config < flags",
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("-o", "--output", default=None, help="output directory (default: out)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")
        p.add_argument("--fit", default=None, help="fitted model JSON (default: <output>/fit.json)")
        for flag, key, kind, text in FLAGS:
            p.add_argument(flag, dest=key, type=kind, default=None, help=text)
        if name == "synth":
            p.add_argument("--n-actors", type=int, default=30)
            p.add_argument("--n-periods", type=int, default=40)
            p.add_argument("--start-year", type=int, default=1971)
    return parser


def resolve_config(args) -> tuple[dict, Path]:
    config = dict(DEFAULTS)
    base = Path.cwd()
    if args.config:
        p = Path(args.config)
        try:
            loaded = json.loads(p.read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {p}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {p} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
        if not isinstance(loaded, dict):
            raise InputError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        config.update(loaded)
        base = p.resolve().parent
    explicit = set()
    for _, key, _, _ in FLAGS:
        v = getattr(args, key, None)
        if v is not None:
            if key in PATH_KEYS:
                v = str(Path(v).resolve())
            if key == "lambdas":
                config["lambda_mode"] = "fixed"
            config[key] = v
            explicit.add(key)
    args.explicit = explicit
    return config, base


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="tvstergm: %(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        config, base = resolve_config(args)
        jobs = args.jobs or os.cpu_count() or 1
        if jobs < 1:
            raise InputError("--jobs must be positive")
        run = Run(config, Path(args.output or "out"), jobs, base)
        if args.command != "synth":
            run.spec()  # validate before any compute
        COMMANDS[args.command][0](run, args)
        run.finish()
        return 0
    except TvstergmError as exc:
        code = next((c for k, c in EXIT_CODES.items() if isinstance(exc, k)), 2)
        msg = " ".join(str(exc).split())
        print(f"tvstergm: error[{code}]: {type(exc).__name__}: {msg}", file=sys.stderr)
        return code
    except np.linalg.LinAlgError as exc:
        print(f"tvstergm: error[3]: NumericalError: {' '.join(str(exc).split())}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
