"""Command line entry point: ``wildflow <command> [options]``.

Every command reads an optional INI config, writes its tables into ``--out``
and finishes with ``manifest.json``.  Exit codes: 0 success, 1 a check did
not pass, 2 bad configuration, 3 a pipeline stage failed.
"""

from __future__ import annotations

import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from . import io
from .io import ConfigError, Manifest, Option
from .perturb import StageError

log = logging.getLogger("wildflow")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2, 3


_COMMON_OPTIONS = (
    click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="INI file with run settings."),
    click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory."),
    click.option("--seed", type=int, default=None, help="Seed for random fields (overrides the config)."),
    click.option("--qmax", type=int, default=None, help="Largest level q (ledger commands)."),
    click.option("--grid", type=int, default=None, help="Grid points per axis (field commands)."),
)


def _common(fn: Callable) -> Callable:
    for opt in reversed(_COMMON_OPTIONS):
        fn = opt(fn)
    return fn


def _resolve(config: str | None, schema: list[Option], overrides: dict[str, Any]) -> dict:
    raw = io.read_config(config)
    opts = io.parse_options(raw, schema)
    for k, v in overrides.items():
        if v is not None:
            opts[k] = v
    return opts


def _out_dir(out: str | None, command: str) -> Path:
    p = Path(out) if out else Path("runs") / command
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("--out", f"cannot create {p}: {exc}") from exc
    return p


def _run(command: str, body: Callable[[], tuple[int, Manifest, Path]]) -> None:
    """Shared error handling; ``body`` returns the exit code, the manifest and where to write it."""
    try:
        code, man, out = body()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except StageError as exc:
        click.echo(f"stage '{exc.stage}' failed: {exc}", err=True)
        sys.exit(EXIT_STAGE)
    man.write(out)
    click.echo(f"{command}: {man.status}; outputs in {out}")
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Progress messages on stderr.")
@click.version_option(package_name="wildflow", prog_name="wildflow")
def main(verbose: bool) -> None:
    """Parameter ledger and spectral pipeline for wild hypodissipative flows."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)


# ---------------------------------------------------------------------------
# ledger


def _positive(x) -> bool:
    return x > 0


LEDGER_SCHEMA = [
    Option("beta", float, 0.2, check=lambda x: 0 < x < 1 / 3),
    Option("gamma", float, 0.3, check=lambda x: 0 < x < 1),
    Option("b", float, None, check=lambda x: x > 1),
    Option("sigma", float, None, check=_positive),
    Option("alpha", float, None, check=_positive),
    Option("log_a", float, None, check=_positive, doc="ln a; defaults to the certified a0"),
    Option("d", int, 3, check=lambda x: x >= 3),
    Option("T", float, 1.0, check=lambda x: x >= 1),
    Option("nu", float, 1.0, check=lambda x: 0 < x <= 1),
    Option("gate", float, math.log(10), check=_positive),
    Option("q_max", int, 40, check=lambda x: x >= 2),
]


def _exponents(opts: dict):
    from .schedule import ExponentSet, suggest_exponents

    extra = {k: opts[k] for k in ("d", "T", "nu")}
    given = [opts[k] is not None for k in ("b", "sigma", "alpha")]
    if all(given):
        return ExponentSet(opts["beta"], opts["gamma"], opts["b"], opts["sigma"], opts["alpha"], **extra), False
    if any(given):
        missing = [k for k, g in zip(("b", "sigma", "alpha"), given) if not g][0]
        raise ConfigError(missing, "give all of b, sigma, alpha or none of them")
    try:
        return suggest_exponents(opts["beta"], opts["gamma"], **extra), True
    except ValueError as exc:
        raise ConfigError("beta", str(exc)) from exc


def ledger_run(opts: dict, out: Path) -> tuple[int, dict, list[str]]:
    from .schedule import (
        beta1_window,
        box_dimension_estimate,
        check_ledger,
        compute_schedule,
        dimension_bound,
        find_a0,
        validate_exponents,
    )

    t0 = time.perf_counter()
    e, suggested = _exponents(opts)
    reps = validate_exponents(e)
    files = [io.write_csv(({"constraint": r.name, "margin": r.margin, "passed": r.passed, "detail": r.detail} for r in reps), out / "admissibility.csv").name]
    bad = [r.name for r in reps if not r.passed]
    if bad:
        raise ConfigError(bad[0], f"exponents are not admissible ({', '.join(bad)})")
    q_max = opts["q_max"]
    a0 = find_a0(e, q_max, opts["gate"])
    log_a = opts["log_a"] if opts["log_a"] is not None else a0
    s = compute_schedule(e.with_log_a(log_a), q_max)
    table = check_ledger(s, opts["gate"])
    margins = [{"q": q, "inequality": i, "log_margin": m} for q, i, m in table.rows]
    files.append(io.write_csv(margins, out / "margins.csv", ["q", "inequality", "log_margin"]).name)
    files.append(io.write_csv(s.to_rows(), out / "schedule.csv").name)
    traj = box_dimension_estimate(schedule=s)["trajectory"]
    D, target = dimension_bound(e)
    files.append(io.write_csv(({"q": q, "dimension_estimate": v, "bound": D} for q, v in traj.items()), out / "dimension.csv").name)
    lo, hi = beta1_window(e)
    certified = table.certified()
    summary = {
        **{k: v for k, v in e.as_dict().items() if k not in ("a", "log_a")},
        "suggested_exponents": suggested,
        "log_a0": a0,
        "log_a": log_a,
        "trick_N": table.trick_N,
        "min_margin": table.min_margin(),
        "failures": len(table.failures()),
        "certified": certified,
        "dimension_bound": D,
        "dimension_target": target,
        "beta1_low": lo,
        "beta1_high": hi,
    }
    files.append(io.write_jsonl([summary], out / "summary.jsonl").name)
    summary["seconds"] = time.perf_counter() - t0  # kept out of the file so reruns are byte-identical
    return (EXIT_OK if certified else EXIT_CHECK), summary, files


@main.command()
@_common
def ledger(config, out, seed, qmax, grid):
    """Certify the inequality ledger and write margins, schedule and dimension data."""

    def body():
        opts = _resolve(config, LEDGER_SCHEMA, {"q_max": qmax})
        o = _out_dir(out, "ledger")
        code, summary, files = ledger_run(opts, o)
        click.echo(f"ln a0 = {summary['log_a0']:.6g}, min log-margin {summary['min_margin']:.4g}, certified: {summary['certified']}")
        status = "ok" if code == EXIT_OK else "not certified"
        return code, Manifest("ledger", opts, seed, files, status, {"certified": summary["certified"], "seconds": summary["seconds"]}), o

    _run("ledger", body)


@main.command()
@_common
def dimension(config, out, seed, qmax, grid):
    """Dimension bound, its limit and the beta_1 window for one exponent set."""

    def body():
        from .schedule import beta1_window, dimension_bound

        opts = _resolve(config, LEDGER_SCHEMA, {"q_max": qmax})
        o = _out_dir(out, "dimension")
        e, _ = _exponents(opts)
        D, target = dimension_bound(e)
        lo, hi = beta1_window(e)
        rec = {"beta": e.beta, "b": e.b, "sigma": e.sigma, "alpha": e.alpha, "dimension_bound": D, "dimension_target": target, "beta1_low": lo, "beta1_high": hi}
        files = [io.write_jsonl([rec], o / "summary.jsonl").name]
        click.echo(f"dimension bound {D:.6g} (limit {target:.6g}); beta_1 in ({lo:.6g}, {hi:.6g})")
        return EXIT_OK, Manifest("dimension", opts, seed, files), o

    _run("dimension", body)


# ---------------------------------------------------------------------------
# field commands


OPERATORS_SCHEMA = [
    Option("n", int, 64, check=lambda x: x >= 8),
    Option("samples", int, 50, check=_positive),
    Option("tol", float, 1e-10, check=_positive),
    Option("seed", int, 0),
]


@main.command()
@_common
def operators(config, out, seed, qmax, grid):
    """Residuals of the Fourier operator identities on random fields."""

    def body():
        from .calculus import IDENTITIES, identity_suite

        opts = _resolve(config, OPERATORS_SCHEMA, {"n": grid, "seed": seed})
        o = _out_dir(out, "operators")
        rows = identity_suite(opts["n"], opts["samples"], opts["seed"])
        worst = {name: max(r["residual"] for r in rows if r["identity"] == name) for name in IDENTITIES}
        files = [io.write_csv(rows, o / "operators.csv", ["sample", "identity", "residual"]).name]
        files.append(io.write_jsonl([{"identity": k, "max_residual": v, "passed": v <= opts["tol"]} for k, v in worst.items()], o / "summary.jsonl").name)
        ok = all(v <= opts["tol"] for v in worst.values())
        for k, v in worst.items():
            click.echo(f"{k:20s} {v:.3e}")
        return (EXIT_OK if ok else EXIT_CHECK), Manifest("operators", opts, opts["seed"], files, "ok" if ok else "residual above tolerance", worst), o

    _run("operators", body)


MIKADO_SCHEMA = [
    Option("samples", int, 20, check=_positive),
    Option("K", int, 8, check=lambda x: x >= 4),
    Option("points", int, 2000, check=_positive),
    Option("moment_tol", float, 1e-8, check=_positive),
    Option("tol", float, 1e-10, check=_positive),
    Option("seed", int, 0),
]


@main.command("mikado-check")
@_common
def mikado_check(config, out, seed, qmax, grid):
    """Check the pipe-flow identities and save the Fourier table."""

    def body():
        from .mikado import MIKADO_PROPERTIES, build_direction_set, property_suite, save_table, tabulate_fourier

        opts = _resolve(config, MIKADO_SCHEMA, {"seed": seed})
        o = _out_dir(out, "mikado")
        kw = {"n_corrector": grid} if grid else {}
        rows = property_suite(opts["samples"], opts["seed"], K=opts["K"], points=opts["points"], **kw)
        worst = {p: max(r["residual"] for r in rows if r["property"] == p) for p in MIKADO_PROPERTIES}
        tol = {p: (opts["moment_tol"] if p.startswith("moment") else opts["tol"]) for p in MIKADO_PROPERTIES}
        files = [io.write_csv(rows, o / "mikado.csv", ["sample", "property", "residual"]).name]
        files.append(io.write_jsonl([{"property": p, "max_residual": worst[p], "tolerance": tol[p], "passed": worst[p] <= tol[p]} for p in MIKADO_PROPERTIES], o / "summary.jsonl").name)
        save_table(tabulate_fourier(build_direction_set(3), opts["K"]), o / "mikado_table.npz")
        files.append("mikado_table.npz")
        ok = all(worst[p] <= tol[p] for p in MIKADO_PROPERTIES)
        for p in MIKADO_PROPERTIES:
            click.echo(f"{p:18s} {worst[p]:.3e}")
        return (EXIT_OK if ok else EXIT_CHECK), Manifest("mikado-check", opts, opts["seed"], files, "ok" if ok else "residual above tolerance", worst), o

    _run("mikado-check", body)


@main.command()
@_common
def surrogate(config, out, seed, qmax, grid):
    """One full iteration step on a grid, with stage and invariant reports."""

    def body():
        from .surrogate import SurrogateConfig, run_surrogate

        raw = io.read_config(config)
        io.parse_options(raw, SurrogateConfig.schema())  # unknown keys are errors here
        cfg = SurrogateConfig.from_mapping(raw)
        if grid is not None:
            cfg = replace(cfg, n=grid)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        o = _out_dir(out, "surrogate")
        summary = run_surrogate(cfg, o, progress=log.info)
        ok = summary["sup_R_next"] < summary["sup_R_q"]
        click.echo(f"sup R_q = {summary['sup_R_q']:.4g}, sup R_(q+1) = {summary['sup_R_next']:.4g}, ratio {summary['ratio']:.4f}")
        opts = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
        notes = {"ratio": summary["ratio"], "stress_reduced": ok, **{f"check.{k}": v for k, v in summary["checks"].items()}}
        return (EXIT_OK if ok else EXIT_CHECK), Manifest("surrogate", opts, cfg.seed, summary["files"], "ok" if ok else "stress not reduced", notes), o

    _run("surrogate", body)


# ---------------------------------------------------------------------------
# report


REPORT_SCHEMA = [
    Option("gamma", float, None, check=lambda x: 0 < x < 0.5),
    Option("inv_p_points", int, 41, check=lambda x: x >= 2),
    Option("beta_tilde_points", int, 41, check=lambda x: x >= 2),
    Option("beta_points", int, 101, check=lambda x: x >= 2),
]


def beta_cap(gamma: float) -> float:
    """Largest Hölder exponent (exclusive) of the time-continuous solutions."""
    return min(1.0 - 2.0 * gamma, 1.0 / 3.0)


def admissible_beta(inv_p: float, beta_tilde: float, gamma: float) -> tuple[float, float] | None:
    """Open range of ``beta`` reaching ``(1/p, beta_tilde)`` through
    ``beta_tilde <= 1/(2p) + (1 - 3/(2p)) beta``; ``None`` when empty."""
    cap = beta_cap(gamma)
    slope = 1.0 - 1.5 * inv_p
    base = 0.5 * inv_p
    if abs(slope) < 1e-14:
        return (0.0, cap) if beta_tilde <= base + 1e-14 else None
    need = (beta_tilde - base) / slope
    lo, hi = (max(need, 0.0), cap) if slope > 0 else (0.0, min(need, cap))
    return (lo, hi) if lo < hi else None


def dimension_limit(beta: float) -> float:
    return (1.0 + beta) / (2.0 * (1.0 - beta))


def report_run(run_dir: Path, opts: dict) -> tuple[dict, list[str]]:
    """Write plot data into ``run_dir/report``; file names are relative to that directory."""
    man_path = run_dir / "manifest.json"
    if not run_dir.is_dir() or not man_path.is_file():
        raise ConfigError("--out", f"{run_dir} holds no run (manifest.json missing)")
    man = json.loads(man_path.read_text())
    gamma = opts["gamma"] if opts["gamma"] is not None else man["options"].get("gamma")
    if gamma is None:
        raise ConfigError("gamma", "not in the config and not recorded by the run")
    if not 0 < gamma < 0.5:
        raise ConfigError("gamma", f"needs 0 < gamma < 1/2 for a nonempty parameter region, got {gamma}")
    cap = beta_cap(gamma)
    rows = []
    for ip in np.linspace(0.0, 1.0, opts["inv_p_points"])[1:-1]:
        for bt in np.linspace(0.0, 1.0, opts["beta_tilde_points"]):
            rng_ = admissible_beta(float(ip), float(bt), gamma)
            rec = {"inv_p": float(ip), "beta_tilde": float(bt), "admissible": rng_ is not None}
            if rng_ is not None:
                rec.update(beta_low=rng_[0], beta_high=rng_[1], dimension=dimension_limit(rng_[0]))
            rows.append(rec)
    curve = [{"beta": float(b), "dimension": dimension_limit(float(b))} for b in np.linspace(0.0, cap, opts["beta_points"], endpoint=False)]
    rdir = run_dir / "report"
    rdir.mkdir(exist_ok=True)
    files = [
        io.write_csv(rows, rdir / "parameter_region.csv", ["inv_p", "beta_tilde", "admissible", "beta_low", "beta_high", "dimension"]).name,
        io.write_csv(curve, rdir / "dimension_curve.csv", ["beta", "dimension"]).name,
    ]
    summary = {"source_command": man["command"], "source_status": man["status"], "gamma": gamma, "beta_cap": cap, "admissible_points": sum(r["admissible"] for r in rows)}
    for k in ("certified", "ratio", "stress_reduced"):
        if k in man.get("notes", {}):
            summary[f"source_{k}"] = man["notes"][k]
    files.append(io.write_jsonl([summary], rdir / "summary.jsonl").name)
    return summary, files


@main.command()
@_common
def report(config, out, seed, qmax, grid):
    """Plot data (parameter region and dimension curve) for an existing run directory."""

    def body():
        if out is None:
            raise ConfigError("--out", "name the run directory to report on")
        opts = _resolve(config, REPORT_SCHEMA, {})
        run_dir = Path(out)
        summary, files = report_run(run_dir, opts)
        click.echo(f"{summary['admissible_points']} admissible grid points; beta < {summary['beta_cap']:.4g}")
        man = Manifest("report", {**opts, "run_dir": str(run_dir)}, seed, files, "ok", summary)
        # the source manifest stays untouched; this one sits next to the plot data
        return EXIT_OK, man, run_dir / "report"

    _run("report", body)


if __name__ == "__main__":  # pragma: no cover
    main()
