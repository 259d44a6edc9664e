"""Experiment orchestration and CSV emission.

Runs are described by a flat ``key = value`` config (frequencies in
MHz), resolved from defaults, an optional preset, an optional config
file, and command-line flags, in that order.  Every output directory
embeds the resolved config so a run can be repeated from its own
artifacts, and all CSV bytes are deterministic for a fixed seed, no
matter how many worker processes produced them.
"""

from __future__ import annotations

import argparse
import math
import multiprocessing
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .analytics import BatchStats, aggregate, p_success_analytic
from .model import TAU, PhysicalParams, derived_rates
from .protocol import (
    FAILURE_REASONS,
    ProtocolOutcome,
    run_protocol_one,
    run_protocol_two,
    sample_setup,
)
from .trajectory import trajectory_rng

OUTCOMES_HEADER = "index,success,failure_reason,epsilon,fidelity,n_clicks,total_time_us"
SUMMARY_HEADER = ("n_trajectories,n_success,p_success,ci_low,ci_high,"
                  "mean_fidelity,fidelity_stderr,"
                  + ",".join("n_" + r for r in FAILURE_REASONS))
SWEEP_HEADER = "axis,value,p_analytic,p_numeric,ci_low,ci_high,mean_fidelity,n_traj"


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved description of one run or sweep."""

    protocol: str = "one"
    model_level: str = "full"
    delta: float = 300.0
    delta_prime: float = 300.0
    omega: float = 25.0
    g: float = 25.0
    kappa: float = 0.05
    gamma: float = 0.1
    atoms_per_cavity: int = 1
    photon_cutoff: int = 1
    n_trajectories: int = 2000
    master_seed: int = 12345
    dt_us: float | None = None
    t_wait_over_kappa: float = 8.0
    sweep_axis: str | None = None
    sweep_grid: tuple[float, ...] | None = None
    jobs: int = 1
    out_dir: str = "out"


_FLOAT_FIELDS = {"delta", "delta_prime", "omega", "g", "kappa", "gamma",
                 "dt_us", "t_wait_over_kappa"}
_INT_FIELDS = {"atoms_per_cavity", "photon_cutoff", "n_trajectories",
               "master_seed", "jobs"}
_KNOWN_KEYS = {f.name for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _KNOWN_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        try:
            if key == "sweep_grid":
                values[key] = tuple(float(tok) for tok in val.split(","))
            elif key in _FLOAT_FIELDS:
                values[key] = float(val)
            elif key in _INT_FIELDS:
                values[key] = int(val)
            else:
                values[key] = val
        except ValueError:
            raise ValueError(f"config line {lineno}: bad value for {key!r}")
    return values


def render_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config_text` on the resolved config."""
    lines = ["# resolved configuration; reparse with the same precedence"]
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if f.name == "sweep_grid":
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def validate_config(cfg: RunConfig) -> PhysicalParams:
    """Check the cross-field rules and return the physical parameters."""
    if cfg.protocol not in ("one", "two"):
        raise ValueError("protocol must be 'one' or 'two'")
    if cfg.model_level not in ("full", "effective"):
        raise ValueError("model_level must be 'full' or 'effective'")
    if cfg.n_trajectories < 1:
        raise ValueError("n_trajectories must be at least 1")
    if not 0 <= cfg.master_seed < 2 ** 64:
        raise ValueError("master_seed must fit in 64 bits")
    if cfg.jobs < 1:
        raise ValueError("jobs must be at least 1")
    if cfg.dt_us is not None and cfg.dt_us <= 0.0:
        raise ValueError("dt_us must be positive")
    if cfg.t_wait_over_kappa <= 0.0:
        raise ValueError("t_wait_over_kappa must be positive")
    if (cfg.sweep_axis is None) != (cfg.sweep_grid is None):
        raise ValueError("sweep_axis and sweep_grid must be given together")
    if cfg.sweep_axis is not None:
        if cfg.sweep_axis not in ("alpha", "gamma"):
            raise ValueError("sweep_axis must be 'alpha' or 'gamma'")
        grid = cfg.sweep_grid
        if not grid:
            raise ValueError("sweep_grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("sweep_grid must be strictly increasing")
        if cfg.sweep_axis == "alpha" and grid[0] <= 0.0:
            raise ValueError("alpha values must be positive")
        if cfg.sweep_axis == "gamma" and grid[0] < 0.0:
            raise ValueError("gamma values must be non-negative")
    return PhysicalParams(
        delta=cfg.delta, delta_prime=cfg.delta_prime, omega=cfg.omega,
        g=cfg.g, kappa=cfg.kappa, gamma=cfg.gamma,
        atoms_per_cavity=cfg.atoms_per_cavity,
        photon_cutoff=cfg.photon_cutoff)


# ---------------------------------------------------------------- presets

_SYMMETRIC = dict(delta=300.0, delta_prime=300.0, omega=25.0, g=25.0,
                  kappa=0.05)
_REGISTER = dict(delta=1000.0, delta_prime=1000.9, omega=30.0, g=0.7,
                 kappa=0.001, gamma=0.1, atoms_per_cavity=3)

# fig4 and fig5 share one sweep: the success-rate and fidelity columns
# of sweep.csv are two views of the same data
_GAMMA_GRID = (0.0, 0.075, 0.15, 0.225, 0.3)

PRESETS: dict[str, dict] = {
    "fig3-point": dict(_SYMMETRIC, gamma=0.0, protocol="one",
                       model_level="effective", n_trajectories=2000),
    "fig3": dict(_SYMMETRIC, gamma=0.0, protocol="one",
                 model_level="effective", n_trajectories=2000,
                 sweep_axis="alpha",
                 sweep_grid=(0.01, 0.0575, 0.105, 0.1525, 0.2)),
    "fig4": dict(_SYMMETRIC, gamma=0.0, protocol="one", model_level="full",
                 n_trajectories=1000, sweep_axis="gamma",
                 sweep_grid=_GAMMA_GRID),
    "fig5": dict(_SYMMETRIC, gamma=0.0, protocol="one", model_level="full",
                 n_trajectories=1000, sweep_axis="gamma",
                 sweep_grid=_GAMMA_GRID),
    "paper-single": dict(_SYMMETRIC, gamma=0.1, protocol="one",
                         model_level="full", n_trajectories=20000),
    "paper-multi": dict(_REGISTER, protocol="two", model_level="full",
                        n_trajectories=1000),
}

PRESET_NOTES = {
    "fig3-point": "lossless single-pair run at the published operating point",
    "fig3": "success probability versus the loss ratio alpha, lossless",
    "fig4": "success probability versus spontaneous decay, full model",
    "fig5": "fidelity versus spontaneous decay (same sweep as fig4)",
    "paper-single": "published single-pair statistics, 20000 trajectories",
    "paper-multi": "published register statistics, 1000 trajectories",
}

for _name in list(PRESETS):
    _desk = dict(PRESETS[_name])
    _desk["n_trajectories"] = max(1, _desk["n_trajectories"] // 10)
    PRESETS[_name + "-desk"] = _desk
    PRESET_NOTES[_name + "-desk"] = PRESET_NOTES[_name] + ", 1/10 scale"


def resolve_config(preset: str | None = None, config_path: str | None = None,
                   **flags) -> RunConfig:
    """defaults < preset < config file < explicit flags."""
    merged: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; "
                             f"try: {', '.join(sorted(PRESETS))}")
        merged.update(PRESETS[preset])
    if config_path is not None:
        merged.update(parse_config_text(Path(config_path).read_text(
            encoding="utf-8")))
    merged.update({k: v for k, v in flags.items() if v is not None})
    if "sweep_grid" in merged and merged["sweep_grid"] is not None:
        merged["sweep_grid"] = tuple(merged["sweep_grid"])
    return RunConfig(**merged)


# ------------------------------------------------------------ batch runner

def _run_index(cfg: RunConfig, p: PhysicalParams, index: int) -> ProtocolOutcome:
    rng = trajectory_rng(cfg.master_seed, index)
    if cfg.protocol == "two":
        setup = sample_setup(p, rng)
        return run_protocol_two(p, setup, cfg.model_level, rng,
                                t_wait_over_kappa=cfg.t_wait_over_kappa,
                                dt_us=cfg.dt_us)
    return run_protocol_one(p, cfg.model_level, rng,
                            t_wait_over_kappa=cfg.t_wait_over_kappa,
                            dt_us=cfg.dt_us)


def _run_chunk(args) -> list:
    cfg, lo, hi = args
    p = validate_config(cfg)
    return [_run_index(cfg, p, i) for i in range(lo, hi)]


def run_batch(cfg: RunConfig) -> list[ProtocolOutcome]:
    """All trajectories of one configuration, ordered by index."""
    p = validate_config(cfg)
    n = cfg.n_trajectories
    if cfg.jobs <= 1 or n < 2:
        return [_run_index(cfg, p, i) for i in range(n)]
    step = math.ceil(n / cfg.jobs)
    chunks = [(cfg, lo, min(lo + step, n)) for lo in range(0, n, step)]
    with multiprocessing.Pool(processes=cfg.jobs) as pool:
        parts = pool.map(_run_chunk, chunks)
    return [o for part in parts for o in part]


# ------------------------------------------------------------ file output

def _opt(x) -> str:
    return "" if x is None else repr(x)


def write_outcomes_csv(path: Path, outcomes: list[ProtocolOutcome]):
    lines = [OUTCOMES_HEADER]
    for i, o in enumerate(outcomes):
        eps = "" if o.epsilon is None else str(o.epsilon)
        lines.append(f"{i},{int(o.success)},{o.failure_reason},{eps},"
                     f"{_opt(o.fidelity)},{len(o.click_times_us)},"
                     f"{o.total_time_us!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_summary_csv(path: Path, stats: BatchStats):
    counts = ",".join(str(stats.failure_breakdown[r]) for r in FAILURE_REASONS)
    row = (f"{stats.n_trajectories},{stats.n_success},{stats.p_success!r},"
           f"{stats.ci_low!r},{stats.ci_high!r},{_opt(stats.mean_fidelity)},"
           f"{_opt(stats.fidelity_stderr)},{counts}")
    path.write_text(SUMMARY_HEADER + "\n" + row + "\n",
                    encoding="utf-8", newline="\n")


def _g6(x) -> str:
    return "" if x is None else f"{x:.6g}"


def write_sweep_csv(path: Path, rows: list[dict]):
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(f"{r['axis']},{_g6(r['value'])},{_g6(r['p_analytic'])},"
                     f"{_g6(r['p_numeric'])},{_g6(r['ci_low'])},"
                     f"{_g6(r['ci_high'])},{_g6(r['mean_fidelity'])},"
                     f"{r['n_traj']}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_regime_report(path: Path, p: PhysicalParams):
    r = derived_rates(p)
    lines = [
        "# derived rates (rad/us) and pulse times (us)",
        f"z1 = {r.z1!r}",
        f"z2 = {r.z2!r}",
        f"z3 = {r.z3!r}",
        f"delta_r = {r.delta_r!r}",
        f"alpha = {r.alpha!r}",
        f"t3 = {r.t3!r}",
    ]
    if r.mapping_times_available():
        lines += [f"t1 = {r.t1!r}", f"t2 = {r.t2!r}"]
    lines.append("# hierarchy checks")
    for chk in r.regime:
        verdict = "ok  " if chk.satisfied else "WEAK"
        lines.append(f"{verdict} ratio={chk.ratio:.4g}  {chk.name}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _prepare_out(cfg: RunConfig, p: PhysicalParams) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(render_config(cfg), encoding="utf-8",
                                    newline="\n")
    write_regime_report(out / "regime.txt", p)
    return out


# -------------------------------------------------------------- commands

def cmd_run(cfg: RunConfig) -> int:
    if cfg.sweep_axis is not None:
        raise ValueError("config declares a sweep; use the sweep command")
    p = validate_config(cfg)
    out = _prepare_out(cfg, p)
    outcomes = run_batch(cfg)
    stats = aggregate(outcomes)
    write_outcomes_csv(out / "outcomes.csv", outcomes)
    write_summary_csv(out / "summary.csv", stats)
    mean_f = "-" if stats.mean_fidelity is None else f"{stats.mean_fidelity:.4f}"
    print(f"{stats.n_success}/{stats.n_trajectories} successes "
          f"(p={stats.p_success:.4f}, CI [{stats.ci_low:.4f}, "
          f"{stats.ci_high:.4f}]), mean fidelity {mean_f} -> {out}")
    return 0


def _sweep_point(cfg: RunConfig, value: float) -> RunConfig:
    if cfg.sweep_axis == "gamma":
        return replace(cfg, gamma=value, sweep_axis=None, sweep_grid=None)
    # alpha = kappa / z3 with z3 fixed by the other parameters, so the
    # grid value picks the cavity decay rate
    base = validate_config(replace(cfg, sweep_axis=None, sweep_grid=None))
    kappa = value * derived_rates(base).z3 / TAU
    return replace(cfg, kappa=kappa, sweep_axis=None, sweep_grid=None)


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.sweep_axis is None:
        raise ValueError("sweep needs sweep_axis and sweep_grid")
    p = validate_config(cfg)
    out = _prepare_out(cfg, p)
    rows = []
    for value in cfg.sweep_grid:
        stats = aggregate(run_batch(_sweep_point(cfg, value)))
        rows.append(dict(
            axis=cfg.sweep_axis, value=value,
            p_analytic=(p_success_analytic(value)
                        if cfg.sweep_axis == "alpha" else None),
            p_numeric=stats.p_success, ci_low=stats.ci_low,
            ci_high=stats.ci_high, mean_fidelity=stats.mean_fidelity,
            n_traj=stats.n_trajectories))
        print(f"{cfg.sweep_axis}={value:.6g}: p={stats.p_success:.4f}")
    write_sweep_csv(out / "sweep.csv", rows)
    print(f"sweep table -> {out / 'sweep.csv'}")
    return 0


def cmd_verify(list_only: bool = False) -> int:
    from . import acceptance  # deferred: acceptance drives this module

    if list_only:
        for name in acceptance.check_names():
            print(name)
        return 0
    results = acceptance.run_all(profile="desk")
    failed = 0
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        failed += not res.ok
        print(f"[{status}] {res.name} ({res.elapsed_s:.1f}s): {res.detail}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_presets() -> int:
    width = max(len(n) for n in PRESETS)
    for name in sorted(PRESETS):
        print(f"{name:<{width}}  {PRESET_NOTES[name]}")
    return 0


# ------------------------------------------------------------------ main

def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", metavar="PATH", help="key = value file")
    sub.add_argument("--preset", metavar="NAME",
                     help="named parameter bundle (see the presets command)")
    sub.add_argument("--seed", type=int, metavar="U64",
                     help="master seed for the trajectory streams")
    sub.add_argument("--jobs", type=int, metavar="N",
                     help="worker processes for the batch")
    sub.add_argument("--out", metavar="DIR", help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="atomlink",
        description="Monte-Carlo trajectory runs of the two-cavity "
                    "entanglement protocols")
    subs = parser.add_subparsers(dest="command", required=True)
    _add_common(subs.add_parser("run", help="one batch, fixed parameters"))
    _add_common(subs.add_parser("sweep", help="batch per grid point"))
    verify = subs.add_parser("verify", help="desk-scale acceptance checks")
    verify.add_argument("--list", action="store_true",
                        help="print check names without running")
    subs.add_parser("presets", help="list bundled parameter sets")

    args = parser.parse_args(argv)
    try:
        if args.command == "presets":
            return cmd_presets()
        if args.command == "verify":
            return cmd_verify(list_only=args.list)
        cfg = resolve_config(
            preset=args.preset, config_path=args.config,
            master_seed=args.seed, jobs=args.jobs, out_dir=args.out)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_sweep(cfg)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
