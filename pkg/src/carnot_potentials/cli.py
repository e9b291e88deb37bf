"""carnot-potentials: run identity experiments from JSON configs.

Exit codes: 0 passed, 1 residual above tolerance (or numerical failure),
2 bad config / parameter / precondition, 3 capability not available.
"""

from __future__ import annotations

import csv
import inspect
import io
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import geometry as geo
from . import identities as idn
from . import potentials as pot
from .errors import CapabilityError, CarnotError, ConfigError, GeometryError, ParameterError
from .functions import function_from_json
from .group import GroupSpec, build_group, builtin_spec

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_CAPABILITY = 0, 1, 2, 3
CSV_FIELDS = ["experiment", "residual", "tolerance", "passed", "nodes", "seconds"]
BUILTIN_LISTING = ["euclidean:1", "euclidean:2", "euclidean:3", "euclidean:4", "euclidean:5",
                   "heisenberg:1", "heisenberg:2", "heisenberg:3"]

# experiments that need the fundamental solution as first argument
_NEEDS_FS = {"mean_value_check", "representation_residual", "jump_relations_check",
             "kac_residual", "single_layer_continuity", "single_layer_pole",
             "iterated_kernel_check"}
_FUNCTION_PARAMS = {"u", "v", "f", "q"}
_FUNCTION_LISTS = {"fields", "phis"}
# malformed config values surface as KeyError/ValueError from the builders
_HANDLED = (CarnotError, KeyError, ValueError)


# ---------------------------------------------------------------------------
# config loading


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def load_group(ref, base_dir="."):
    if isinstance(ref, dict):
        return build_group(GroupSpec.from_json(ref))
    if not isinstance(ref, str):
        raise ConfigError(f"group must be a builtin name, a spec file or an inline spec, got {ref!r}")
    try:
        return build_group(builtin_spec(ref))
    except KeyError:
        pass
    path = Path(base_dir) / ref
    if not path.exists():
        raise ConfigError(f"group {ref!r} is neither a builtin nor an existing spec file")
    return build_group(GroupSpec.from_json(json.loads(path.read_text())))


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate_config(cfg), path.parent


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    kind = cfg.get("experiment")
    if kind not in idn.EXPERIMENTS:
        raise ConfigError(f"unknown experiment {kind!r}; see `describe experiments`")
    if "group" not in cfg:
        raise ConfigError("config needs a 'group'")
    if kind != "beta_calibration_check" and "domain" not in cfg:
        raise ConfigError("config needs a 'domain'")
    return cfg


def _points(val):
    arr = np.asarray(val, float)
    return arr


def build_call(cfg, base_dir=".", refine=0):
    """Translate a config into (function, args, kwargs)."""
    kind = cfg["experiment"]
    fn = idn.EXPERIMENTS[kind]
    group = load_group(cfg["group"], base_dir)
    params = dict(cfg.get("params", {}))
    args = []
    if kind == "beta_calibration_check":
        return fn, [group], {"tol": cfg.get("tolerances")}
    try:
        dom = geo.domain_from_json(cfg["domain"], group)
    except GeometryError as exc:
        raise ConfigError(f"bad domain: {exc}") from None
    if kind in _NEEDS_FS:
        args.append(pot.fundamental_solution_for(group, cfg.get("beta")))
    args.append(dom)
    kwargs = {}
    for key, val in params.items():
        if key in _FUNCTION_PARAMS:
            kwargs[key] = None if val is None else function_from_json(val, group)
        elif key in _FUNCTION_LISTS:
            kwargs[key] = [function_from_json(v, group) for v in val]
        elif key in ("x", "x0", "x0s"):
            kwargs[key] = _points(val)
        elif key == "dirichlet_part":
            kwargs[key] = idn.lower_half(int(val.get("axis", -1)), float(val.get("center", 0.0)))
        else:
            kwargs[key] = val
    if "seed" in cfg and "seed" in inspect.signature(fn).parameters:
        kwargs.setdefault("seed", int(cfg["seed"]))
    order = cfg.get("order")
    if order is not None or refine:
        base = int(order or (idn.jump_order(dom) if kind == "jump_relations_check" else dom.order))
        kwargs["order"] = base * 2 ** int(refine)
    if "levels" in cfg and "levels" in inspect.signature(fn).parameters:
        kwargs["levels"] = int(cfg["levels"])
    if cfg.get("tolerances") is not None:
        kwargs["tol"] = cfg["tolerances"]
    return fn, args, kwargs


def run_config(cfg, base_dir=".", tol_scale=1.0, refine=0):
    """-> (report, seconds). Raises CarnotError subclasses for the CLI to map."""
    t0 = time.perf_counter()
    fn, args, kwargs = build_call(cfg, base_dir, refine)
    try:
        report = fn(*args, tol_scale=tol_scale, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {cfg['experiment']}: {exc}") from None
    return report, time.perf_counter() - t0


def exit_code_for(exc):
    if isinstance(exc, (ConfigError, ParameterError, KeyError, ValueError)):
        return EXIT_CONFIG
    if isinstance(exc, CapabilityError):
        return EXIT_CAPABILITY
    return EXIT_FAIL


# ---------------------------------------------------------------------------
# outputs


def summary_row(name, report, seconds):
    if report is None:
        return {"experiment": name, "residual": "", "tolerance": "", "passed": False,
                "nodes": "", "seconds": f"{seconds:.3f}"}
    _, res, tol = report.worst()
    nodes = report.refinement_history[-1][0] if report.refinement_history else ""
    return {"experiment": name, "residual": f"{res:.6e}", "tolerance": f"{tol:.3e}",
            "passed": report.passed, "nodes": nodes, "seconds": f"{seconds:.3f}"}


def csv_text(rows, fields=CSV_FIELDS, header=True):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    if header:
        w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def convergence_text(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["resolution", "residual"])
    for n, r in report.refinement_history:
        w.writerow([n, repr(float(r))])
    return buf.getvalue()


def write_outputs(report, seconds, json_out=None, csv_out=None, name=None):
    name = name or report.experiment
    if json_out:
        atomic_write(json_out, dumps(report.to_json()))
        stem = Path(json_out)
        atomic_write(stem.with_suffix(".convergence.csv"), convergence_text(report))
        # wall-clock data lives in a sidecar so the report itself stays reproducible
        atomic_write(stem.with_suffix(".timing.json"),
                     dumps({"seconds": round(seconds, 3),
                            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}))
    if csv_out:
        atomic_write(csv_out, csv_text([summary_row(name, report, seconds)]))


# ---------------------------------------------------------------------------
# commands


@click.group()
def main():
    """Numerical checks of potential-theory identities on Carnot groups."""


@main.command()
@click.argument("config", type=click.Path())
@click.option("--tol-scale", type=float, default=1.0, help="Multiply every default tolerance.")
@click.option("--refine", type=int, default=0, help="Double the quadrature order N times.")
@click.option("--json-out", type=click.Path(), default=None, help="Report path (default: stdout).")
@click.option("--csv-out", type=click.Path(), default=None, help="One-row CSV summary.")
def run(config, tol_scale, refine, json_out, csv_out):
    """Run one experiment config."""
    try:
        cfg, base = load_config(config)
        outs = cfg.get("outputs", {})
        json_out = json_out or outs.get("json")
        csv_out = csv_out or outs.get("csv")
        report, secs = run_config(cfg, base, tol_scale, refine)
    except _HANDLED as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(exit_code_for(exc))
    write_outputs(report, secs, json_out, csv_out, cfg.get("id"))
    if not json_out:
        click.echo(dumps(report.to_json()), nl=False)
    name, res, tol = report.worst()
    click.echo(f"{report.experiment}: {'PASS' if report.passed else 'FAIL'} "
               f"(worst {name} = {res:.3e}, tol {tol:.1e}, {secs:.1f}s)", err=True)
    sys.exit(EXIT_PASS if report.passed else EXIT_FAIL)


def describe_data(what):
    if what == "groups":
        out = []
        for name in BUILTIN_LISTING:
            g = build_group(builtin_spec(name))
            out.append({"name": name, "N": g.N, "Q": g.Q, "strata": list(g.strata),
                        "gauge": g.spec.gauge is not None, "law": g.has_law})
        return out
    if what == "domains":
        return geo.DOMAIN_SCHEMAS
    if what == "experiments":
        out = {}
        for name, fn in idn.EXPERIMENTS.items():
            doc = (inspect.getdoc(fn) or "").split("\n")[0]
            params = [p for p in inspect.signature(fn).parameters
                      if p not in ("tol", "tol_scale")]
            out[name] = {"summary": doc, "parameters": params}
        return out
    raise ConfigError(f"cannot describe {what!r}")


@main.command()
@click.argument("what", type=click.Choice(["groups", "domains", "experiments"]))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def describe(what, as_json):
    """List builtin groups, domain kinds or experiments."""
    data = describe_data(what)
    if as_json:
        click.echo(dumps(data), nl=False)
        return
    if what == "groups":
        for g in data:
            click.echo(f"{g['name']:<14} N={g['N']:<3} Q={g['Q']:<3} strata={g['strata']} "
                       f"gauge={'yes' if g['gauge'] else 'no'}")
        click.echo("(any euclidean:n or heisenberg:n is accepted)")
    elif what == "domains":
        for k, schema in data.items():
            click.echo(f"{k}: " + ", ".join(f"{a}: {b}" for a, b in schema.items()))
    else:
        for k, d in data.items():
            click.echo(f"{k}({', '.join(d['parameters'])})\n    {d['summary']}")


def _suite_entry(i, entry, base):
    if isinstance(entry, str):
        cfg, cbase = load_config(Path(base) / entry)
        return cfg.get("id", Path(entry).stem), cfg, cbase
    cfg = validate_config(entry)
    return cfg.get("id", f"exp{i:03d}"), cfg, base


def run_suite(manifest, out_dir, workers=1, tol_scale=1.0, refine=0):
    """Run every config of a manifest; returns (rows, worst exit code)."""
    manifest = Path(manifest)
    data = json.loads(manifest.read_text())
    entries = data["configs"] if isinstance(data, dict) else data
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def job(arg):
        i, entry = arg
        name = f"exp{i:03d}"
        t0 = time.perf_counter()
        try:
            name, cfg, base = _suite_entry(i, entry, manifest.parent)
            report, secs = run_config(cfg, base, tol_scale, refine)
        except _HANDLED as exc:
            return name, None, time.perf_counter() - t0, exit_code_for(exc), f"{type(exc).__name__}: {exc}"
        code = EXIT_PASS if report.passed else EXIT_FAIL
        return name, report, secs, code, ""

    items = list(enumerate(entries))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, items))
    else:
        results = [job(it) for it in items]
    results.sort(key=lambda r: r[0])
    rows, timing, errors = [], {}, {}
    codes = []
    for name, report, secs, code, err in results:
        codes.append(code)
        timing[name] = round(secs, 3)
        if report is not None:
            atomic_write(out_dir / f"{name}.json", dumps(report.to_json()))
            atomic_write(out_dir / f"{name}.convergence.csv", convergence_text(report))
        else:
            errors[name] = err
        rows.append(summary_row(name, report, secs))
    # seconds vary between runs; the deterministic summary leaves them out
    atomic_write(out_dir / "summary.csv",
                 csv_text([{k: v for k, v in r.items() if k != "seconds"} for r in rows],
                          [f for f in CSV_FIELDS if f != "seconds"]))
    atomic_write(out_dir / "timing.csv", csv_text(rows))
    if errors:
        atomic_write(out_dir / "errors.json", dumps(errors))
    worst = EXIT_PASS
    for c in (EXIT_CONFIG, EXIT_CAPABILITY, EXIT_FAIL):
        if c in codes:
            worst = c
            break
    return rows, worst


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Output directory.")
@click.option("--workers", type=int, default=1, help="Thread pool size.")
@click.option("--tol-scale", type=float, default=1.0)
@click.option("--refine", type=int, default=0)
def suite(manifest, out_dir, workers, tol_scale, refine):
    """Run a manifest of configs and write one summary CSV."""
    try:
        rows, code = run_suite(manifest, out_dir, workers, tol_scale, refine)
    except (json.JSONDecodeError, KeyError) as exc:
        click.echo(f"error: bad manifest: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for r in rows:
        click.echo(f"{r['experiment']:<40} {'PASS' if r['passed'] else 'FAIL'} "
                   f"{r['residual']:>14} / {r['tolerance']:<10} {r['seconds']}s")
    sys.exit(code)


if __name__ == "__main__":
    main()
