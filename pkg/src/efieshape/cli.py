"""Command-line driver: ``efieshape {tables,verify,assemble,gradient}``.

Settings come from (lowest to highest priority) built-in defaults, an
optional JSON ``--config`` file whose keys mirror the long flag names
(``{"n": [1, 3, 7], "omega": 2.0, "format": "text"}``), and the flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import shapederiv as sd
from .adjoint import ObjectiveSpec, build_state, gradient_adjoint, gradient_direct, gradient_fd
from .assembly import MaterialParams, PlaneWave, assemble_system
from .fixtures import FIXTURE_NAMES, default_perturbation, fixture
from .mesh import MeshError, ShapePerturbation, build_dofmap, load_mesh, plate_mesh
from .quadrature import SUPPORTED_N, dunavant_rule

COMMANDS = ("tables", "verify", "assemble", "gradient")
TABLE_FILES = ("derivative_sums", "relative_differences")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    mesh: str | None = None
    fixture: str | None = None
    n: tuple = SUPPORTED_N
    h: float = sd.FD_STEP
    omega: float = 1.0
    epsilon: float = 1.0
    mu: float = 1.0
    node: int | None = None
    tau: tuple | None = None
    out: str | None = None
    format: str = "csv"
    parallel: str = "on"
    objective: str = "quadratic-power"
    E0: tuple = (1.0, 0.0, 0.0)
    khat: tuple = (0.0, 0.0, -1.0)
    fd_step: float = 1e-6
    extras: dict = field(default_factory=dict)

    @property
    def params(self) -> MaterialParams:
        return MaterialParams(self.omega, self.epsilon, self.mu)

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.mesh and self.fixture:
            raise ConfigError("give either --mesh or --fixture, not both")
        if self.fixture is not None and self.fixture not in FIXTURE_NAMES:
            raise ConfigError(f"unknown fixture {self.fixture!r}; choose from {', '.join(FIXTURE_NAMES)}")
        bad = [n for n in self.n if n not in SUPPORTED_N]
        if not self.n or bad:
            raise ConfigError(f"--n must list supported rule sizes {SUPPORTED_N}, got {list(self.n)}")
        for name in ("h", "omega", "epsilon", "mu", "fd_step"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"--{name} must be a positive number, got {v!r}")
        if self.tau is not None:
            if len(self.tau) != 3 or not all(math.isfinite(t) for t in self.tau):
                raise ConfigError("--tau needs three finite components X,Y,Z")
            if not any(self.tau):
                raise ConfigError("--tau must be nonzero")
        if self.format not in ("csv", "text"):
            raise ConfigError("--format must be csv or text")
        if self.parallel not in ("on", "off"):
            raise ConfigError("--parallel must be on or off")
        if self.objective not in ("quadratic-power", "linear-functional"):
            raise ConfigError("--objective must be quadratic-power or linear-functional")
        if self.command == "tables" and self.mesh:
            raise ConfigError("tables runs on the built-in fixtures; use --fixture")
        if self.mesh:
            mesh = load_mesh(self.mesh)
            if mesh.nt == 0:
                raise ConfigError(f"mesh {self.mesh} has no triangles")
            if self.node is not None and not 0 <= self.node < mesh.nv:
                raise ConfigError(f"--node {self.node} out of range for {mesh.nv} vertices")
        return self


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _float_list(text):
    return tuple(float(v) for v in text.split(","))


def _int_list(text):
    return tuple(int(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="efieshape",
        description="EFIE shape derivatives: comparison tables, invariant checks, assembly and adjoint gradients.")
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--mesh", help="plain-text mesh file (nv nt / vertices / triangles)")
    src.add_argument("--fixture", help=f"built-in triangle pair: {', '.join(FIXTURE_NAMES)}")
    common.add_argument("--config", help="JSON file with default values for any flag")
    common.add_argument("--n", type=_int_list, help="comma-separated rule sizes (default 1,3,4,6,7,12,13,16)")
    common.add_argument("--h", type=float, help="finite-difference step (default 1e-8)")
    common.add_argument("--omega", type=float, help="angular frequency (default 1)")
    common.add_argument("--epsilon", type=float, help="permittivity (default 1)")
    common.add_argument("--mu", type=float, help="permeability (default 1)")
    common.add_argument("--node", type=int, help="perturbed vertex")
    common.add_argument("--tau", type=_float_list, help="perturbation direction X,Y,Z")
    common.add_argument("--out", help="output file (directory for tables)")
    common.add_argument("--format", choices=("csv", "text"))
    common.add_argument("--parallel", choices=("on", "off"))
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("tables", parents=[common],
                   help="analytical / AD / FD comparison of local matrix derivatives")
    verify = sub.add_parser("verify", parents=[common], help="run all invariant suites")
    verify.add_argument("--skew-subtraction", type=float, dest="skew",
                        help=argparse.SUPPRESS)  # test hook: corrupt the analytical path
    sub.add_parser("assemble", parents=[common], help="assemble A (and dA for --node/--tau)")
    grad = sub.add_parser("gradient", parents=[common], help="adjoint, direct and FD shape gradients")
    grad.add_argument("--objective", choices=("quadratic-power", "linear-functional"))
    grad.add_argument("--E0", type=_float_list, help="incident amplitude X,Y,Z (default 1,0,0)")
    grad.add_argument("--khat", type=_float_list, help="propagation direction (default 0,0,-1)")
    grad.add_argument("--fd-step", type=float, dest="fd_step", help="central FD step (default 1e-6)")
    return parser


_LIST_KEYS = {"n": int, "tau": float, "E0": float, "khat": float}


def config_from_args(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
        values.pop("command", None)
        if args.mesh or args.fixture:
            # the mesh source is one setting: a flag replaces either file key
            values.pop("mesh", None)
            values.pop("fixture", None)
    for key, val in vars(args).items():
        if key != "config" and val is not None:
            values[key] = val
    for key, kind in _LIST_KEYS.items():
        if key in values and values[key] is not None:
            raw = values[key]
            if isinstance(raw, str):
                raw = raw.split(",")
            values[key] = tuple(kind(v) for v in raw)
    known = {f for f in RunConfig.__dataclass_fields__ if f != "extras"}
    extras = {k: values.pop(k) for k in list(values) if k not in known}
    unknown = set(extras) - {"skew"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return RunConfig(extras=extras, **values).validate()


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.8e}"


def render(header, rows, fmt) -> str:
    """CSV or aligned text; refuses non-finite numbers."""
    for row in rows:
        for v in row:
            if isinstance(v, (float, np.floating)) and not math.isfinite(v):
                raise ValueError(f"non-finite value in output row {row}")
    cells = [[_fmt(v) for v in row] for row in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(cells)
        return buf.getvalue()
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _perturbation(cfg, fx):
    if cfg.node is None and cfg.tau is None:
        return default_perturbation(fx)
    node = fx.shared_node if cfg.node is None else cfg.node
    if not 0 <= node < fx.mesh.nv:
        raise ConfigError(f"--node {node} out of range for fixture {fx.name}")
    return ShapePerturbation(node, tuple(cfg.tau) if cfg.tau else default_perturbation(fx).tau)


def table_cell(name, n, cfg):
    """One (fixture, n) row: Im-sums of dA and relative Frobenius differences."""
    fx = fixture(name)
    pert = _perturbation(cfg, fx)
    rule = dunavant_rule(n)
    params = cfg.params
    an = sd.d_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule)
    ad = sd.ad_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule)
    fd = sd.fd_local_pair_matrix(fx.mesh, fx.p, fx.q, pert, params, rule, h=cfg.h)
    scale = np.linalg.norm(an)
    rel = [np.linalg.norm(b - an) / scale if scale else np.linalg.norm(b - an) for b in (ad, fd)]
    sums = [float(np.imag(m.sum())) for m in (an, ad, fd)]
    return (name, n, *sums), (name, n, *rel)


def cmd_tables(cfg: RunConfig) -> int:
    names = (cfg.fixture,) if cfg.fixture else FIXTURE_NAMES
    jobs = [(name, n) for name in names for n in cfg.n]
    if cfg.parallel == "on":
        with ThreadPoolExecutor() as pool:
            cells = list(pool.map(lambda j: table_cell(j[0], j[1], cfg), jobs))
    else:
        cells = [table_cell(name, n, cfg) for name, n in jobs]
    sums = render(("fixture", "n", "analytical", "ad", "fd"), [c[0] for c in cells], cfg.format)
    diffs = render(("fixture", "n", "ad", "fd"), [c[1] for c in cells], cfg.format)
    if cfg.out is None:
        sys.stdout.write("# Im sum of d/ds local pair matrix\n" + sums)
        sys.stdout.write("\n# relative Frobenius difference to analytical\n" + diffs)
    else:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        ext = "csv" if cfg.format == "csv" else "txt"
        for stem, text in zip(TABLE_FILES, (sums, diffs)):
            (out / f"{stem}.{ext}").write_text(text)
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    from . import verify

    skew = cfg.extras.get("skew")
    if skew is not None:
        with sd.skewed_subtraction(skew):
            checks = verify.run_all(cfg.n, cfg.params, cfg.h)
    else:
        checks = verify.run_all(cfg.n, cfg.params, cfg.h)
    report = "\n".join(c.line() for c in checks)
    failed = sum(not c.passed for c in checks)
    report += f"\n{len(checks) - failed}/{len(checks)} checks passed\n"
    _emit(report, cfg.out)
    if cfg.out is not None:
        sys.stdout.write(report)
    return 0 if failed == 0 else 1


def _load(cfg):
    if cfg.mesh:
        return load_mesh(cfg.mesh)
    if cfg.fixture:
        return fixture(cfg.fixture).mesh
    return plate_mesh()


def cmd_assemble(cfg: RunConfig) -> int:
    mesh = _load(cfg)
    dofmap = build_dofmap(mesh)
    if dofmap.ndof == 0:
        raise ConfigError("mesh has no interior edges (no degrees of freedom)")
    rule = dunavant_rule(max(cfg.n))
    A = assemble_system(mesh, dofmap, cfg.params, rule)
    header = ["row", "col", "A_re", "A_im"]
    cols = [A]
    if cfg.node is not None or cfg.tau is not None:
        node = 0 if cfg.node is None else cfg.node
        tau = cfg.tau or (0.0, 0.0, 1.0)
        dA = sd.d_assemble(mesh, dofmap, cfg.params, rule, ShapePerturbation(node, tau)).dA
        header += ["dA_re", "dA_im"]
        cols.append(dA)
    rows = []
    for i in range(dofmap.ndof):
        for j in range(dofmap.ndof):
            row = [i, j]
            for M in cols:
                row += [M[i, j].real, M[i, j].imag]
            rows.append(row)
    _emit(render(header, rows, cfg.format), cfg.out)
    return 0


def cmd_gradient(cfg: RunConfig) -> int:
    mesh = _load(cfg)
    dofmap = build_dofmap(mesh)
    if dofmap.ndof == 0:
        raise ConfigError("mesh has no interior edges (no degrees of freedom)")
    rule = dunavant_rule(max(cfg.n))
    wave = PlaneWave(cfg.E0, cfg.khat)
    state = build_state(mesh, cfg.params, rule, wave, dofmap)
    n = dofmap.ndof
    if cfg.objective == "quadratic-power":
        spec = ObjectiveSpec.quadratic_power(np.eye(n))
    else:
        spec = ObjectiveSpec.linear_functional(np.ones(n))
    nodes = range(mesh.nv) if cfg.node is None else [cfg.node]
    variables = [(m, a) for m in nodes for a in range(3)]
    adj = gradient_adjoint(state, spec, variables).dJ

    def rel(a, b):
        return abs(a - b) / abs(b) if b != 0 else abs(a - b)

    rows = []
    for (m, a), ga in zip(variables, adj):
        gd = gradient_direct(state, spec, (m, a))
        gf = gradient_fd(state, spec, (m, a), cfg.fd_step)
        rows.append((m, "xyz"[a], ga, gd, gf, rel(ga, gd), rel(ga, gf)))
    header = ("node", "axis", "dJ_adjoint", "dJ_direct", "dJ_fd", "rel_adjoint_direct", "rel_adjoint_fd")
    _emit(render(header, rows, cfg.format), cfg.out)
    return 0


_DISPATCH = {"tables": cmd_tables, "verify": cmd_verify, "assemble": cmd_assemble,
             "gradient": cmd_gradient}


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
        return _DISPATCH[cfg.command](cfg)
    except (ConfigError, MeshError) as exc:
        print(f"efieshape: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
