"""Command-line front end.

Subcommands ``force``, ``epsconv``, ``optimize``, ``scan`` and ``cases``.
Settings come from an optional TOML file (``--config``) and are overridden
by flags.  Exit status: 0 success, 1 usage or configuration error,
2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .costs import FORCE_METRICS, Objective, ObjectiveSpec
from .currents import CurrentPotential, current_from_potential, load_potential, save_potential
from .force import epsilon_scan, laplace_force
from .geometry import GeometryError, SurfaceFormatError, evaluate_grid, load_surface
from .magnetics import PlasmaBoundary
from .optimize import REFERENCE_CASES, OptimizerConfig, RunRecord, minimize, reference_cases, weight_scan
from .problems import BUNDLED_CASES, BUNDLED_G, data_path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("sheetforce")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    coil: str = ""
    plasma: str = ""
    target_field: Optional[str] = None
    potential: Optional[str] = None
    ntheta: int = 32
    nzeta: int = 32
    plasma_ntheta: Optional[int] = None
    plasma_nzeta: Optional[int] = None
    N: int = 4
    G: float = BUNDLED_G
    I: float = 0.0
    objective: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    output: str = "sheetforce_out"
    # scan / cases / epsconv settings
    weight: str = "lambda1"
    values: List[float] = field(default_factory=list)
    warm_start: bool = True
    weights: str = "reference"
    eps_over_h: List[float] = field(default_factory=lambda: [16, 8, 4, 2, 1, 0.5, 0.25])
    grids: List[int] = field(default_factory=lambda: [32])

    def validate(self):
        for name in ("coil", "plasma", "target_field", "potential"):
            path = getattr(self, name)
            if path and not Path(path).is_file():
                raise UsageError(f"{name} file not found: {path}")
        for name in ("ntheta", "nzeta", "plasma_ntheta", "plasma_nzeta"):
            n = getattr(self, name)
            if n is not None and n < 4:
                raise UsageError(f"{name} must be at least 4, got {n}")
        if any(n < 4 for n in self.grids):
            raise UsageError(f"grid sizes must be at least 4, got {self.grids}")
        if self.N < 0:
            raise UsageError(f"N must be non-negative, got {self.N}")
        if self.weights not in ("reference", "bundled"):
            raise UsageError(f"weights must be 'reference' or 'bundled', got {self.weights!r}")
        try:
            self.spec()
            self.optimizer_config()
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from None

    def spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(**self.objective)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.optimizer)

    def coil_path(self) -> str:
        return self.coil or str(data_path("winding_torus.txt"))

    def plasma_path(self) -> str:
        return self.plasma or str(data_path("plasma_ellipse.txt"))

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_SCALAR_KEYS = {f.name for f in fields(RunConfig)} - {"objective", "optimizer"}
_OBJECTIVE_KEYS = {f.name for f in fields(ObjectiveSpec)}
_OPTIMIZER_KEYS = {f.name for f in fields(OptimizerConfig)}
_SECTION_KEYS = {"surfaces", "grid", "current", "scan", "epsconv", "cases"}


def load_config(path) -> RunConfig:
    """Read a TOML run file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    flat = {}
    for key, value in data.items():
        if key == "objective" or key == "optimizer":
            known = _OBJECTIVE_KEYS if key == "objective" else _OPTIMIZER_KEYS
            bad = set(value) - known
            if bad:
                raise UsageError(f"{path}: unknown [{key}] keys {sorted(bad)}")
            flat[key] = dict(value)
        elif key in _SECTION_KEYS and isinstance(value, dict):
            for k, v in value.items():
                if k not in _SCALAR_KEYS:
                    raise UsageError(f"{path}: unknown key {k!r} in [{key}]")
                flat[k] = v
        elif key in _SCALAR_KEYS:
            flat[key] = value
        else:
            raise UsageError(f"{path}: unknown key {key!r}")
    for k in ("coil", "plasma", "target_field", "potential", "output"):
        if flat.get(k):
            flat[k] = str((path.parent / flat[k]).resolve()) if not Path(flat[k]).is_absolute() else flat[k]
    return RunConfig(**flat)


def build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    for name in _SCALAR_KEYS:
        value = getattr(args, name, None)
        if value is not None:
            over[name] = value
    cfg = replace(cfg, **over)
    obj = dict(cfg.objective)
    for name in _OBJECTIVE_KEYS:
        value = getattr(args, name, None)
        if value is not None:
            obj[name] = value
    opt = dict(cfg.optimizer)
    for name in _OPTIMIZER_KEYS:
        value = getattr(args, name, None)
        if value is not None:
            opt[name] = value
    cfg = replace(cfg, objective=obj, optimizer=opt)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# output helpers


class Writer:
    def __init__(self, cfg: RunConfig, root=None):
        self.root = Path(root or cfg.output)
        self.root.mkdir(parents=True, exist_ok=True)
        self.meta = {"version": __version__, "config_hash": cfg.digest()}

    def path(self, name) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# sheetforce {self.meta['version']} config {self.meta['config_hash']}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                values = [row[h] for h in header] if isinstance(row, dict) else row
                w.writerow([_fmt(v) for v in values])

    def json(self, name, payload):
        self.path(name).write_text(json.dumps({"meta": self.meta, **payload}, indent=1,
                                              default=_jsonable))

    def jsonl(self, name, records):
        with open(self.path(name), "w") as fh:
            for rec in records:
                fh.write(json.dumps({"meta": self.meta, **rec}, default=_jsonable) + "\n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return str(v)


def _surfaces(cfg: RunConfig, n_theta=None, n_zeta=None):
    coil = evaluate_grid(load_surface(cfg.coil_path()), n_theta or cfg.ntheta, n_zeta or cfg.nzeta)
    plasma = evaluate_grid(load_surface(cfg.plasma_path()),
                           cfg.plasma_ntheta or cfg.ntheta, cfg.plasma_nzeta or cfg.nzeta)
    target = None
    if cfg.target_field:
        target = np.loadtxt(cfg.target_field, delimiter=",", comments="#", ndmin=2)
        if target.size != plasma.n_theta * plasma.n_zeta:
            raise UsageError(f"target field has {target.size} values, plasma grid has "
                             f"{plasma.n_theta * plasma.n_zeta}")
        target = target.reshape(plasma.shape)
    return coil, PlasmaBoundary(plasma, target)


def _start(cfg: RunConfig) -> CurrentPotential:
    if cfg.potential:
        pot = load_potential(cfg.potential)
        if pot.N != cfg.N:
            log.info("using N=%d from %s", pot.N, cfg.potential)
        return pot
    return CurrentPotential.zeros(cfg.N, cfg.G, cfg.I)


def write_maps(out: Writer, prefix: str, coil, boundary, pot: CurrentPotential, spec: ObjectiveSpec):
    """Force, |j| and B·n maps plus a summary of their RMS/max values."""
    obj = Objective(coil, boundary, pot.N, spec, pot.G, pot.I)
    current = current_from_potential(coil, pot)
    force = laplace_force(coil, current, current, obj.force_op)
    mag = force.magnitude
    tan = np.linalg.norm(force.tangential_component, axis=-1)
    rows = []
    for i in range(coil.n_theta):
        for k in range(coil.n_zeta):
            rows.append([i, k, coil.theta[i], coil.zeta[k], *force.total[i, k],
                         force.normal_component[i, k], tan[i, k], mag[i, k]])
    out.csv(f"{prefix}force_map.csv",
            ["i_theta", "i_zeta", "theta", "zeta", "Fx", "Fy", "Fz", "F_normal", "F_tangential",
             "F_norm"], rows)
    jmag = np.linalg.norm(current.j, axis=-1)
    out.csv(f"{prefix}current_map.csv", ["i_theta", "i_zeta", "theta", "zeta", "j_norm"],
            [[i, k, coil.theta[i], coil.zeta[k], jmag[i, k]]
             for i in range(coil.n_theta) for k in range(coil.n_zeta)])
    bn = obj.field_op.residual(pot).reshape(boundary.grid.shape)
    pg = boundary.grid
    out.csv(f"{prefix}bn_map.csv", ["i_theta", "i_zeta", "theta", "zeta", "Bn_error"],
            [[i, k, pg.theta[i], pg.zeta[k], bn[i, k]]
             for i in range(pg.n_theta) for k in range(pg.n_zeta)])
    bd, _ = obj.evaluate(pot.coefficients, gradient=False)
    summary = bd.to_dict()
    summary.update(max_normal_force=float(np.abs(force.normal_component).max()),
                   max_tangential_force=float(tan.max()))
    out.json(f"{prefix}summary.json", {"summary": summary})
    return summary


def _write_record(out: Writer, prefix: str, rec: RunRecord, coil, boundary, spec):
    out.jsonl(f"{prefix}run.jsonl", [rec.to_dict()])
    save_potential(rec.potential, out.path(f"{prefix}potential.json"))
    return write_maps(out, prefix, coil, boundary, rec.potential, spec)


# ---------------------------------------------------------------------------
# subcommands


def cmd_force(cfg: RunConfig) -> int:
    if not cfg.potential:
        raise UsageError("force needs a current potential file (--potential)")
    coil, boundary = _surfaces(cfg)
    out = Writer(cfg)
    summary = write_maps(out, "", coil, boundary, load_potential(cfg.potential), cfg.spec())
    print(f"max |L| = {summary['max_force']:.6g} Pa, rms |L| = {summary['rms_force']:.6g} Pa; "
          f"maps written to {out.root}")
    return EXIT_OK


def cmd_epsconv(cfg: RunConfig) -> int:
    eps = [float(e) for e in cfg.eps_over_h]
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
        raise UsageError(f"eps_over_h must be non-empty and strictly descending, got {eps}")
    pot = load_potential(cfg.potential) if cfg.potential else CurrentPotential.zeros(cfg.N, cfg.G, cfg.I)
    surface = load_surface(cfg.coil_path())
    rows = []
    for n in cfg.grids:
        grid = evaluate_grid(surface, n, n)
        current = current_from_potential(grid, pot)
        for row in epsilon_scan(grid, current, current, [e * grid.spacing for e in eps]):
            row["grid"] = n
            rows.append(row)
            if row["flag"]:
                log.warning("grid %d, eps/h=%g flagged: %s", n, row["eps_over_h"], row["flag"])
    out = Writer(cfg)
    out.csv("epsconv.csv", ["grid", "epsilon", "eps_over_h", "mean_B", "rel_error", "flag"], rows)
    for row in rows:
        print(f"{row['grid']:4d}  eps/h={row['eps_over_h']:<8.4g} mean|B|={row['mean_B']:.5g} T  "
              f"rel err={row['rel_error']:.4g}{'  FLAGGED' if row['flag'] else ''}")
    return EXIT_OK


def _status(rec: RunRecord) -> int:
    return EXIT_NUMERIC if rec.termination in ("restoration_failed", "infeasible_start") else EXIT_OK


def cmd_optimize(cfg: RunConfig) -> int:
    coil, boundary = _surfaces(cfg)
    spec = cfg.spec()
    rec = minimize(coil, boundary, _start(cfg), spec, cfg.optimizer_config(), label="optimize")
    out = Writer(cfg)
    _write_record(out, "", rec, coil, boundary, spec)
    f = rec.final
    print(f"{rec.termination} after {rec.iterations} iterations: chi2={f['total']:.6g} "
          f"chi2_B={f['chi2_B']:.6g} max|L|={f['max_force']:.6g} Pa")
    return _status(rec)


def cmd_scan(cfg: RunConfig) -> int:
    if not cfg.values:
        raise UsageError("scan needs at least one weight value (--values)")
    if any(v < 0 for v in cfg.values):
        raise UsageError(f"weights must be non-negative, got {cfg.values}")
    coil, boundary = _surfaces(cfg)
    spec = cfg.spec()
    try:
        records, rows = weight_scan(coil, boundary, spec, cfg.weight, cfg.values, _start(cfg),
                                    cfg.optimizer_config(), warm_start=cfg.warm_start)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Writer(cfg)
    header = ["weight_name", "weight", "chi2_B", "chi2_j", "chi2_gradj", "chi2_F", "max_force",
              "rms_force", "max_normal_field_error", "termination"]
    out.csv("tradeoff.csv", header, [{h: r.get(h, float("nan")) for h in header} for r in rows])
    out.jsonl("runs.jsonl", [r.to_dict() for r in records if r is not None])
    for idx, rec in enumerate(records):
        if rec is not None:
            save_potential(rec.potential, out.path(f"point{idx}_potential.json"))
    for r in rows:
        print(f"{r['weight_name']}={r['weight']:<10.4g} chi2_B={r.get('chi2_B', float('nan')):.5g} "
              f"chi2_j={r.get('chi2_j', float('nan')):.5g} max|L|={r.get('max_force', float('nan')):.5g} "
              f"{r['termination']}")
    failed = any(r is None for r in records)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_cases(cfg: RunConfig) -> int:
    coil, boundary = _surfaces(cfg)
    cases = REFERENCE_CASES if cfg.weights == "reference" else BUNDLED_CASES
    records = reference_cases(coil, boundary, _start(cfg), cfg.optimizer_config(), cases=cases)
    out = Writer(cfg)
    rows = []
    for name, rec in records.items():
        summary = _write_record(out, f"{name}/", rec, coil, boundary, cases[name])
        rows.append({"case": name, "termination": rec.termination, **{
            k: summary[k] for k in ("chi2_B", "chi2_j", "chi2_F", "max_force", "rms_force",
                                    "max_normal_field_error")}})
        print(f"{name}: {rec.termination}, chi2_B={summary['chi2_B']:.5g}, "
              f"max|L|={summary['max_force']:.5g} Pa")
    out.csv("cases.csv", list(rows[0]), rows)
    return max(_status(r) for r in records.values())


COMMANDS = {"force": cmd_force, "epsconv": cmd_epsconv, "optimize": cmd_optimize,
            "scan": cmd_scan, "cases": cmd_cases}


def _common(p):
    g = p.add_argument_group("inputs")
    g.add_argument("--config", help="TOML run file; flags override its values")
    g.add_argument("--coil", help="winding surface file (default: bundled torus)")
    g.add_argument("--plasma", help="plasma boundary file (default: bundled plasma)")
    g.add_argument("--target-field", dest="target_field", help="CSV of B·n to cancel per plasma node")
    g.add_argument("--potential", help="current potential JSON (warm start / force input)")
    g.add_argument("--ntheta", type=int)
    g.add_argument("--nzeta", type=int)
    g.add_argument("--plasma-ntheta", dest="plasma_ntheta", type=int)
    g.add_argument("--plasma-nzeta", dest="plasma_nzeta", type=int)
    g.add_argument("-N", "--N", dest="N", type=int, help="harmonic order of the potential")
    g.add_argument("--G", type=float, help="net poloidal current (A)")
    g.add_argument("--I", type=float, help="net toroidal current (A)")
    g.add_argument("-o", "--output", help="output directory")
    w = p.add_argument_group("objective")
    w.add_argument("--lambda1", type=float)
    w.add_argument("--lambda2", type=float)
    w.add_argument("--gamma", type=float)
    w.add_argument("--metric", dest="force_metric", choices=FORCE_METRICS)
    w.add_argument("--p", type=int, help="exponent of the Lp force metric")
    w.add_argument("--c0", type=float)
    w.add_argument("--c1", type=float)
    o = p.add_argument_group("optimizer")
    o.add_argument("--max-iters", dest="max_iters", type=int)
    o.add_argument("--grad-tol", dest="grad_tol", type=float)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sheetforce", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, help="worker threads for force evaluation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("force", help="force, |j| and B·n maps of a given potential")
    _common(p)
    p = sub.add_parser("epsconv", help="ε-offset convergence study against the closed form")
    _common(p)
    p.add_argument("--eps-over-h", dest="eps_over_h", type=float, nargs="+",
                   help="offsets in units of the grid spacing, descending")
    p.add_argument("--grids", type=int, nargs="+", help="grid sizes n (n×n)")
    p = sub.add_parser("optimize", help="minimise the composite cost")
    _common(p)
    p = sub.add_parser("scan", help="trade-off scan over one weight")
    _common(p)
    p.add_argument("--weight", choices=("lambda1", "lambda2", "gamma"))
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--cold", dest="warm_start", action="store_false", default=None,
                   help="start every point from the initial potential")
    p = sub.add_parser("cases", help="run the four reference weight settings")
    _common(p)
    p.add_argument("--weights", choices=("reference", "bundled"),
                   help="reference weights or the ones rescaled for the bundled problem")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("sheetforce: error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        os.environ["SHEETFORCE_THREADS"] = str(args.threads)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, SurfaceFormatError) as exc:
        print(f"sheetforce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GeometryError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"sheetforce: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
