"""Command-line front end.

    multisym run <config.json> [--parallel] [--out DIR]
    multisym verify <config.json> [--out DIR]

Exit codes: 0 success, 1 verification failure, 2 config error, 3 numerical abort.
``TOOL_THREADS`` caps the number of worker threads.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .dynamics import SingularBlockError, assemble_jacobi_blocks, el_residual, solve_cauchy_lagrangian
from .green import APPLY, MAX_KERNEL_SIZE, green_causal_apply, materialize_kernel, write_kernel_csv
from .lattice import Grid, delta_source, write_section_csv
from .models import BUILTINS, ConvergenceError, get_model
from .peierls import (
    binomial_window,
    hamiltonian_vector_field,
    local_density,
    omega_duality_check,
    peierls_bracket,
    smeared_field,
    smeared_velocity,
)
from .symplectic import current_L, omega_all_slices
from .verification import background, run_verification

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
EXPERIMENT_TYPES = ("solve", "green", "omega", "bracket", "verify")
TOP_LEVEL_KEYS = {"model", "grid", "experiments", "output", "seed", "refinement"}

DENSITIES = {
    "half_square": lambda x, q, v: 0.5 * q[0] * q[0],
    "field_times_velocity": lambda x, q, v: q[0] * v[0][0],
    "half_gradient_square": lambda x, q, v: 0.5 * v[0][1] * v[0][1],
}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class NumericalAbort(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config parsing


def _line_of(text: str, token: str, occurrence: int = 0):
    """1-based line of the given occurrence of a quoted key, or None."""
    needle = f'"{token}"'
    pos = -1
    for _ in range(occurrence + 1):
        pos = text.find(needle, pos + 1)
        if pos < 0:
            return None
    return text.count("\n", 0, pos) + 1


class Config:
    def __init__(self, path: str):
        self.path = path
        try:
            self.text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}") from exc
        try:
            raw = json.loads(self.text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from exc
        if not isinstance(raw, dict):
            raise ConfigError("top level must be an object", 1)
        unknown = sorted(set(raw) - TOP_LEVEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level key {unknown[0]!r}", _line_of(self.text, unknown[0]))
        self.raw = raw
        self.model = self._model(raw.get("model"))
        self.grid = self._grid(raw.get("grid"))
        self.seed = self._int(raw.get("seed", 0), "seed", 0)
        self.output = raw.get("output", "out")
        if not isinstance(self.output, str):
            raise ConfigError("output must be a directory path", _line_of(self.text, "output"))
        self.refinement = self._refinement(raw.get("refinement", []))
        exps = raw.get("experiments", [])
        if not isinstance(exps, list):
            raise ConfigError("experiments must be a list", _line_of(self.text, "experiments"))
        self.experiments = [self._experiment(e, i) for i, e in enumerate(exps)]

    def _err(self, msg, key, occurrence=0):
        return ConfigError(msg, _line_of(self.text, key, occurrence))

    def _int(self, v, key, lo):
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            raise self._err(f"{key} must be an integer >= {lo}", key)
        return v

    def _model(self, m):
        if not isinstance(m, dict) or "name" not in m:
            raise self._err("model must be an object with a name", "model")
        name, params = m["name"], m.get("params", {})
        if name not in BUILTINS:
            raise self._err(f"unknown model {name!r}; choose from {', '.join(sorted(BUILTINS))}", "name")
        if not isinstance(params, dict):
            raise self._err("model params must be an object", "params")
        try:
            return get_model(name, params)
        except (TypeError, ValueError) as exc:
            raise self._err(f"bad parameters for model {name!r}: {exc}", "params") from exc

    def _grid(self, g):
        if not isinstance(g, dict):
            raise self._err("grid must be an object", "grid")
        for key in ("Nt", "Nx"):
            if key not in g:
                raise self._err(f"grid needs {key}", "grid")
        Nt, Nx = self._int(g["Nt"], "Nt", 5), self._int(g["Nx"], "Nx", 4)
        try:
            if "dt" in g or "dx" in g:
                return Grid(Nt, Nx, float(g["dt"]), float(g["dx"]))
            return Grid.periodic(Nt, Nx, float(g.get("length", 2 * math.pi)), float(g.get("cfl", 1.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise self._err(f"bad grid: {exc}", "grid") from exc

    def _refinement(self, r):
        if not isinstance(r, list) or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in r):
            raise self._err("refinement must be a list of positive integer scale factors", "refinement")
        return r

    def _experiment(self, e, i):
        line = _line_of(self.text, "type", i)
        if not isinstance(e, dict) or e.get("type") not in EXPERIMENT_TYPES:
            kind = e.get("type") if isinstance(e, dict) else e
            raise ConfigError(f"experiment {i}: type must be one of {', '.join(EXPERIMENT_TYPES)}, got {kind!r}", line)
        try:
            VALIDATORS[e["type"]](self, e)
        except ConfigError as exc:
            raise ConfigError(f"experiment {i} ({e['type']}): {exc}", exc.line or line) from exc
        return e

    # experiment validators -------------------------------------------------

    def check_modes(self, modes, key):
        if not isinstance(modes, list):
            raise self._err(f"{key} must be a list of modes", key)
        for m in modes:
            if not isinstance(m, dict):
                raise self._err(f"{key}: each mode must be an object", key)
            c = m.get("component", 0)
            if not isinstance(c, int) or not 0 <= c < self.model.k:
                raise self._err(f"{key}: component {c!r} outside 0..{self.model.k - 1}", key)

    def check_window(self, w, margin, key):
        if not isinstance(w, dict):
            raise self._err(f"{key} needs a window object", key)
        start, order = w.get("start"), w.get("order", 2)
        if not isinstance(start, int) or not isinstance(order, int) or order < 0:
            raise self._err(f"{key}: window start and order must be integers", key)
        if start < margin or start + order > self.grid.Nt - 1 - margin:
            raise self._err(f"{key}: window must stay {margin} layers away from both time ends", key)

    def check_functional(self, f, key):
        if not isinstance(f, dict):
            raise self._err(f"{key} must be an object", key)
        kind = f.get("kind")
        if kind in ("smeared_field", "smeared_velocity"):
            self.check_modes(f.get("modes", []), key)
            self.check_window(f.get("window"), 2 if kind == "smeared_field" else 3, key)
        elif kind == "local_density":
            if f.get("density") not in DENSITIES:
                raise self._err(f"{key}: density must be one of {', '.join(sorted(DENSITIES))}", key)
            self.check_window(f.get("window"), 3, key)
        else:
            raise self._err(f"{key}: unknown functional kind {kind!r}", key)


def _v_solve(cfg, e):
    cfg.check_modes(e.get("phi0", []), "phi0")
    cfg.check_modes(e.get("phidot0", []), "phidot0")


def _v_green(cfg, e):
    kind = e.get("kind", "retarded")
    if kind not in APPLY:
        raise cfg._err(f"kind must be one of {', '.join(APPLY)}", "kind")
    node = e.get("node", [cfg.grid.Nt // 2, cfg.grid.Nx // 2])
    if not (isinstance(node, list) and len(node) == 2 and all(isinstance(v, int) for v in node)):
        raise cfg._err("node must be [time_layer, space_index]", "node")
    if not 2 <= node[0] <= cfg.grid.Nt - 3 or not 0 <= node[1] < cfg.grid.Nx:
        raise cfg._err(f"node {node} outside the admissible source layers 2..{cfg.grid.Nt - 3}", "node")
    c = e.get("component", 0)
    if not isinstance(c, int) or not 0 <= c < cfg.model.k:
        raise cfg._err(f"component {c!r} outside 0..{cfg.model.k - 1}", "component")
    if e.get("kernel", False) and cfg.grid.Nt * cfg.grid.Nx * cfg.model.k > MAX_KERNEL_SIZE:
        raise cfg._err(f"kernel export limited to {MAX_KERNEL_SIZE} unknowns", "kernel")


def _v_omega(cfg, e):
    for key in ("u", "v"):
        if key in e:
            cfg.check_functional(e[key], key)


def _v_bracket(cfg, e):
    for key in ("F", "G"):
        if key not in e:
            raise cfg._err(f"bracket needs functional {key}", "bracket")
        cfg.check_functional(e[key], key)


def _v_verify(cfg, e):
    pass


VALIDATORS = {"solve": _v_solve, "green": _v_green, "omega": _v_omega, "bracket": _v_bracket, "verify": _v_verify}


# ---------------------------------------------------------------------------
# experiments


def _profile(grid: Grid, k: int, modes) -> np.ndarray:
    out = np.zeros((grid.Nx, k))
    for m in modes:
        out[:, m.get("component", 0)] += float(m.get("amplitude", 1.0)) * np.cos(
            float(m.get("wavenumber", 1.0)) * grid.x + float(m.get("phase", 0.0)))
    return out


def _functional(grid: Grid, k: int, desc: dict):
    w = desc["window"]
    window = binomial_window(grid, w["start"], w.get("order", 2))
    if desc["kind"] == "local_density":
        return local_density(grid, DENSITIES[desc["density"]], window, k)
    weight = _profile(grid, k, desc.get("modes", []))
    make = smeared_field if desc["kind"] == "smeared_field" else smeared_velocity
    return make(grid, weight, window)


def _background(ctx, e):
    if e.get("background", "default") == "zero":
        return np.zeros(ctx["grid"].shape + (ctx["model"].k,))
    return background(ctx["model"], ctx["grid"])


def run_solve(ctx, e, tag):
    g, model = ctx["grid"], ctx["model"]
    phi = solve_cauchy_lagrangian(model, g, _profile(g, model.k, e.get("phi0", [])),
                                  _profile(g, model.k, e.get("phidot0", [])))
    name = f"{tag}_phi.csv"
    write_section_csv(ctx["out"] / name, phi)
    res = el_residual(model, phi, g)
    return {"metrics": {"max_abs_field": float(np.max(np.abs(phi))),
                        "max_interior_el_residual": float(np.max(np.abs(res[1:-1])))},
            "files": [name]}


def run_green(ctx, e, tag):
    g, model = ctx["grid"], ctx["model"]
    blocks = assemble_jacobi_blocks(model, _background(ctx, e), g)
    kind = e.get("kind", "retarded")
    node = tuple(e.get("node", [g.Nt // 2, g.Nx // 2]))
    f = delta_source(g, node, e.get("component", 0), model.k)
    u = APPLY[kind](blocks, f)
    files = [f"{tag}_{kind}_response.csv"]
    write_section_csv(ctx["out"] / files[0], u)
    r = blocks.apply(u) - f
    rows = {"retarded": slice(0, g.Nt - 2), "advanced": slice(2, None), "causal": slice(2, g.Nt - 2)}[kind]
    if kind == "causal":
        r = blocks.apply(u)
    metrics = {"interior_residual": float(np.max(np.abs(r[rows]))) * g.dt * g.dx,
               "max_abs_response": float(np.max(np.abs(u)))}
    if e.get("kernel", False):
        K = materialize_kernel(blocks, kind, ctx["threads"])
        files.append(f"{tag}_{kind}_kernel.csv")
        write_kernel_csv(ctx["out"] / files[-1], K)
    return {"metrics": metrics, "files": files}


def run_omega(ctx, e, tag):
    g, model = ctx["grid"], ctx["model"]
    blocks = assemble_jacobi_blocks(model, _background(ctx, e), g)
    o = max(2, g.Nt // 4)
    c = g.Nt // 2 - o // 2
    default_u = {"kind": "smeared_field", "modes": [{"amplitude": 1.0}], "window": {"start": c, "order": o}}
    default_v = {"kind": "smeared_field", "modes": [{"amplitude": 1.0, "phase": 1.1}],
                 "window": {"start": c - 1, "order": o}}
    zero = np.zeros(g.shape + (model.k,))  # sources are linear functionals; the point does not matter
    u = green_causal_apply(blocks, _functional(g, model.k, e.get("u", default_u)).derivative(zero))
    v = green_causal_apply(blocks, _functional(g, model.k, e.get("v", default_v)).derivative(zero))
    om = omega_all_slices(current_L(blocks, u, v), g)
    name = f"{tag}_omega_slices.csv"
    with open(ctx["out"] / name, "w") as fh:
        fh.write("a,t,omega\n")
        for a, val in enumerate(om):
            fh.write(f"{a},{format(float(g.t[a]), '.17g')},{format(float(val), '.17g')}\n")
    inner = om[2:-2]
    scale = float(np.max(np.abs(inner)))
    return {"metrics": {"omega_mid": float(om[g.Nt // 2]),
                        "slice_deviation": float(inner.max() - inner.min()),
                        "relative_slice_deviation": float(inner.max() - inner.min()) / scale if scale > 0 else 0.0},
            "files": [name]}


def run_bracket(ctx, e, tag):
    g, model = ctx["grid"], ctx["model"]
    phi = _background(ctx, e)
    blocks = assemble_jacobi_blocks(model, phi, g)
    F = _functional(g, model.k, e["F"])
    G = _functional(g, model.k, e["G"])
    rep = peierls_bracket(model, phi, F, G, g, blocks)
    files = []
    if e.get("export_vector_field", False):
        files.append(f"{tag}_X_F.csv")
        write_section_csv(ctx["out"] / files[0], hamiltonian_vector_field(model, phi, F, g, blocks))
    metrics = {
        "value": rep.value,
        "minus_g_xf": rep.minus_g_xf,
        "double_convolution": rep.double_convolution,
        "formula_spread": rep.formula_spread,
        "antisymmetry_residual": rep.antisymmetry_residual,
        "omega_residual": rep.omega_residual,
        "omega_sign": rep.omega_sign,
        "scale": rep.scale,
    }
    if e.get("duality", True):
        dphi = green_causal_apply(blocks, G.derivative(phi))
        metrics["duality_residual"] = omega_duality_check(model, phi, F, dphi, g, blocks=blocks)["residual"]
    return {"metrics": metrics, "files": files}


def run_verify(ctx, e, tag):
    rep = run_verification(ctx["model"], ctx["grid"], ctx["seed"], ctx["refinement"])
    return {"metrics": rep, "passed": rep["passed"], "files": []}


RUNNERS = {"solve": run_solve, "green": run_green, "omega": run_omega, "bracket": run_bracket, "verify": run_verify}


# ---------------------------------------------------------------------------
# output


def _fmt(obj, indent=0):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_fmt(obj[k], indent + 1)}' for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(f"{pad}  {_fmt(v, indent + 1)}" for v in obj) + f"\n{pad}]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            txt = format(x, ".17g")
            return txt if any(c in txt for c in ".en") else txt + ".0"

        return json.dumps("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def dumps_report(report) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    return _fmt(report) + "\n"


def _threads() -> int:
    env = os.environ.get("TOOL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _context(cfg: Config, out: Path) -> dict:
    return {"model": cfg.model, "grid": cfg.grid, "seed": cfg.seed, "refinement": cfg.refinement,
            "out": out, "threads": _threads()}


def _grid_dict(g: Grid) -> dict:
    return {"Nt": g.Nt, "Nx": g.Nx, "dt": g.dt, "dx": g.dx}


def execute(cfg: Config, out: Path, parallel: bool = False) -> tuple[dict, int]:
    out.mkdir(parents=True, exist_ok=True)
    ctx = _context(cfg, out)

    def one(item):
        i, e = item
        tag = f"{i:02d}_{e['type']}"
        try:
            res = RUNNERS[e["type"]](ctx, e, tag)
        except (SingularBlockError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalAbort(f"experiment {i} ({e['type']}): {type(exc).__name__}: {exc}") from exc
        res["type"] = e["type"]
        return res

    items = list(enumerate(cfg.experiments))
    if parallel and len(items) > 1:
        with ThreadPoolExecutor(max_workers=min(len(items), ctx["threads"])) as ex:
            results = list(ex.map(one, items))
    else:
        results = [one(it) for it in items]
    report = {"model": {"name": cfg.model.name, "params": cfg.model.params},
              "grid": _grid_dict(cfg.grid), "seed": cfg.seed, "experiments": results}
    failed = any(r.get("passed") is False for r in results)
    (out / "report.json").write_text(dumps_report(report))
    return report, EXIT_FAIL if failed else EXIT_OK


def _print_verify(rep: dict, stream) -> None:
    for name, suite in rep["suites"].items():
        line = f"{name:12s} {suite['status']}"
        if suite["status"] == "skipped":
            line += f" ({suite['reason']})"
        else:
            bad = [c["name"] for c in suite["checks"] if not c["passed"]]
            if bad:
                line += ": " + "; ".join(bad)
        print(line, file=stream)
    for row in rep.get("convergence", {}).get("rows", []):
        extra = f" ratio {row['ratio']:.3f} order {row['order']:.3f}" if "ratio" in row else ""
        print(f"  refinement x{row['scale']}: {row['Nt']}x{row['Nx']} error {row['error']:.3e}{extra}", file=stream)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="multisym", description="Lattice covariant phase space experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiments listed in a config")
    p_run.add_argument("config")
    p_run.add_argument("--parallel", action="store_true", help="run independent experiments concurrently")
    p_run.add_argument("--out", help="output directory (overrides the config)")
    p_ver = sub.add_parser("verify", help="run every property suite on the configured model and grid")
    p_ver.add_argument("config")
    p_ver.add_argument("--out", help="output directory (overrides the config)")
    args = parser.parse_args(argv)

    try:
        cfg = Config(args.config)
    except ConfigError as exc:
        where = f"{args.config}:{exc.line}" if exc.line else args.config
        print(f"{where}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output)
    try:
        if args.command == "run":
            _, code = execute(cfg, out, args.parallel)
            return code
        out.mkdir(parents=True, exist_ok=True)
        rep = run_verification(cfg.model, cfg.grid, cfg.seed, cfg.refinement)
        (out / "report.json").write_text(dumps_report(rep))
        _print_verify(rep, sys.stdout)
        return EXIT_OK if rep["passed"] else EXIT_FAIL
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SingularBlockError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
