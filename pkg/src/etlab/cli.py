"""Command-line entry point.

Usage: etlab <macro|kinetic|compare|sweep|mms|audit> <config.json> [key=value ...]

The JSON configuration selects the grid, scheme parameters, initial data and
output location; dotted key=value arguments override individual fields. All
numeric tables are written as CSV with 17-significant-digit floats and LF
line endings, so identical configurations produce byte-identical outputs.

Exit codes: 0 success, 2 solver failure (fixed point or backoff exhausted),
3 configuration error.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .experiments import (
    PRESET_NAMES,
    SweepSpec,
    default_manufactured,
    initial_condition,
    kinetic_limit_study,
    mms_convergence,
    regularization_study,
    run_sweep,
)
from .grid import Grid1D, build_grid, integrate
from .kinetic import build_velocity_grid, run_kinetic
from .scheme import (
    SchemeParams,
    StepFailureError,
    Trajectory,
    budget_audit,
    entropy_audit,
    lyapunov_functional,
    make_initial_state,
    run_transient,
)
from .thermo import EntropicState, to_primitive

MODES = ("macro", "kinetic", "compare", "sweep", "mms", "audit")

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3


class ConfigError(ValueError):
    """Invalid configuration; carries the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RunConfig:
    mode: str = "macro"
    n_cells: int = 64
    length: float = 1.0
    scheme: SchemeParams = field(default_factory=SchemeParams)
    kinetic_eps: float = 0.1
    kinetic_eps_values: List[float] = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    v_max: float = 8.0
    n_v: int = 64
    preset: str = "gauss-bump"
    rho0: Optional[List[float]] = None
    theta0: Optional[List[float]] = None
    output_dir: str = "etlab_out"
    snapshot_stride: int = 10
    sweep_which: Optional[str] = None
    sweep_values: Optional[List[float]] = None
    sweep_varied: Optional[Dict[str, List[float]]] = None
    mms_resolutions: List[int] = field(default_factory=lambda: [16, 32, 64])

    def build_grid(self) -> Grid1D:
        return build_grid(self.n_cells, self.length)

    def initial_fields(self, grid: Grid1D):
        if self.rho0 is not None or self.theta0 is not None:
            if self.rho0 is None or self.theta0 is None:
                raise ConfigError("init", "rho0 and theta0 must be given together")
            rho0 = np.asarray(self.rho0, dtype=float)
            theta0 = np.asarray(self.theta0, dtype=float)
            if rho0.shape != (grid.n_cells,) or theta0.shape != (grid.n_cells,):
                raise ConfigError(
                    "init", f"explicit arrays must have length {grid.n_cells}"
                )
            if np.any(rho0 <= 0.0) or np.any(theta0 <= 0.0):
                raise ConfigError("init", "explicit arrays must be positive")
            return rho0, theta0
        return initial_condition(self.preset, grid)


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _get_section(doc: Dict[str, Any], name: str) -> Dict[str, Any]:
    section = doc.get(name, {})
    _expect(isinstance(section, dict), name, "must be an object")
    return section


_SCHEME_FIELDS = {
    "tau": float,
    "eps": float,
    "delta": float,
    "n_exp": float,
    "t_final": float,
    "fp_tol": float,
    "fp_max_iter": int,
    "fp_damping": float,
    "tau_backoff_limit": int,
    "inner_mode": str,
    "sigma_ramp": list,
    "edge_mean": str,
    "init_floor": float,
}


def parse_config(text: str) -> RunConfig:
    """Validate a JSON document into a RunConfig with defaults filled."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON: {exc}") from exc
    _expect(isinstance(doc, dict), "<document>", "top level must be an object")

    cfg = RunConfig()
    mode = doc.get("mode", cfg.mode)
    _expect(mode in MODES, "mode", f"must be one of {MODES}, got {mode!r}")
    cfg.mode = mode

    grid_sec = _get_section(doc, "grid")
    if "n_cells" in grid_sec:
        _expect(
            isinstance(grid_sec["n_cells"], int) and grid_sec["n_cells"] >= 3,
            "grid.n_cells",
            "must be an integer >= 3",
        )
        cfg.n_cells = grid_sec["n_cells"]
    if "length" in grid_sec:
        _expect(
            isinstance(grid_sec["length"], (int, float)) and grid_sec["length"] > 0,
            "grid.length",
            "must be a positive number",
        )
        cfg.length = float(grid_sec["length"])

    scheme_sec = _get_section(doc, "scheme")
    scheme_kwargs: Dict[str, Any] = {}
    for key, value in scheme_sec.items():
        _expect(key in _SCHEME_FIELDS, f"scheme.{key}", "unknown field")
        want = _SCHEME_FIELDS[key]
        if want is float:
            _expect(
                isinstance(value, (int, float)), f"scheme.{key}", "must be a number"
            )
            scheme_kwargs[key] = float(value)
        elif want is int:
            _expect(isinstance(value, int), f"scheme.{key}", "must be an integer")
            scheme_kwargs[key] = value
        else:
            scheme_kwargs[key] = value
    try:
        cfg.scheme = SchemeParams(**scheme_kwargs)
    except ValueError as exc:
        raise ConfigError("scheme", str(exc)) from exc

    kin = _get_section(doc, "kinetic")
    if "eps" in kin:
        eps = kin["eps"]
        if isinstance(eps, list):
            _expect(
                all(isinstance(v, (int, float)) and v > 0 for v in eps),
                "kinetic.eps",
                "values must be positive numbers",
            )
            cfg.kinetic_eps_values = [float(v) for v in eps]
            cfg.kinetic_eps = cfg.kinetic_eps_values[0]
        else:
            _expect(
                isinstance(eps, (int, float)) and eps > 0,
                "kinetic.eps",
                "must be positive",
            )
            cfg.kinetic_eps = float(eps)
    if "v_max" in kin:
        _expect(
            isinstance(kin["v_max"], (int, float)) and kin["v_max"] > 0,
            "kinetic.v_max",
            "must be positive",
        )
        cfg.v_max = float(kin["v_max"])
    if "n_v" in kin:
        _expect(
            isinstance(kin["n_v"], int) and kin["n_v"] >= 4,
            "kinetic.n_v",
            "must be an integer >= 4",
        )
        cfg.n_v = kin["n_v"]

    init = _get_section(doc, "init")
    if "preset" in init:
        _expect(
            init["preset"] in PRESET_NAMES,
            "init.preset",
            f"must be one of {PRESET_NAMES}",
        )
        cfg.preset = init["preset"]
    for key in ("rho0", "theta0"):
        if key in init:
            _expect(
                isinstance(init[key], list)
                and all(isinstance(v, (int, float)) for v in init[key]),
                f"init.{key}",
                "must be an array of numbers",
            )
            setattr(cfg, key, [float(v) for v in init[key]])

    out = _get_section(doc, "output")
    if "directory" in out:
        _expect(isinstance(out["directory"], str), "output.directory", "must be a string")
        cfg.output_dir = out["directory"]
    if "snapshot_stride" in out:
        _expect(
            isinstance(out["snapshot_stride"], int) and out["snapshot_stride"] >= 1,
            "output.snapshot_stride",
            "must be a positive integer",
        )
        cfg.snapshot_stride = out["snapshot_stride"]

    sweep = _get_section(doc, "sweep")
    if "which" in sweep:
        _expect(
            sweep["which"] in ("eps", "delta", "tau"),
            "sweep.which",
            "must be eps, delta, or tau",
        )
        cfg.sweep_which = sweep["which"]
    if "values" in sweep:
        _expect(
            isinstance(sweep["values"], list) and len(sweep["values"]) >= 2,
            "sweep.values",
            "must be an array of at least two numbers",
        )
        cfg.sweep_values = [float(v) for v in sweep["values"]]
    if "varied" in sweep:
        _expect(isinstance(sweep["varied"], dict), "sweep.varied", "must be an object")
        cfg.sweep_varied = {
            k: [float(v) for v in vs] for k, vs in sweep["varied"].items()
        }

    mms = _get_section(doc, "mms")
    if "resolutions" in mms:
        _expect(
            isinstance(mms["resolutions"], list)
            and all(isinstance(v, int) and v >= 3 for v in mms["resolutions"]),
            "mms.resolutions",
            "must be an array of integers >= 3",
        )
        cfg.mms_resolutions = list(mms["resolutions"])

    env_dir = os.environ.get("ETLAB_OUTPUT_DIR")
    if env_dir:
        cfg.output_dir = env_dir
    return cfg


def _apply_overrides(cfg: RunConfig, overrides: Sequence[str]) -> RunConfig:
    """Apply dotted key=value overrides on top of a parsed configuration."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        if parts[0] == "scheme" and len(parts) == 2:
            _expect(parts[1] in _SCHEME_FIELDS, key, "unknown scheme field")
            try:
                cfg.scheme = dataclasses.replace(cfg.scheme, **{parts[1]: value})
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from exc
        elif key == "grid.n_cells":
            _expect(isinstance(value, int) and value >= 3, key, "must be integer >= 3")
            cfg.n_cells = value
        elif key == "grid.length":
            _expect(isinstance(value, (int, float)) and value > 0, key, "must be > 0")
            cfg.length = float(value)
        elif key == "init.preset":
            _expect(value in PRESET_NAMES, key, f"must be one of {PRESET_NAMES}")
            cfg.preset = value
        elif key == "kinetic.eps":
            _expect(isinstance(value, (int, float)) and value > 0, key, "must be > 0")
            cfg.kinetic_eps = float(value)
        elif key == "kinetic.v_max":
            _expect(isinstance(value, (int, float)) and value > 0, key, "must be > 0")
            cfg.v_max = float(value)
        elif key == "kinetic.n_v":
            _expect(isinstance(value, int) and value >= 4, key, "must be integer >= 4")
            cfg.n_v = value
        elif key == "output.directory":
            cfg.output_dir = str(value)
        elif key == "output.snapshot_stride":
            _expect(isinstance(value, int) and value >= 1, key, "must be integer >= 1")
            cfg.snapshot_stride = value
        else:
            raise ConfigError(key, "unknown override path")
    return cfg


# ---------------------------------------------------------------------------
# writers / readers
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header: List[str], rows: List[List[float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _read_csv(path: Path) -> Dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        data = [
            [float(v) for v in line.strip().split(",")] for line in f if line.strip()
        ]
    cols = np.array(data, dtype=float).T if data else np.zeros((len(header), 0))
    return {name: cols[i] for i, name in enumerate(header)}


def _write_macro_outputs(
    out: Path, grid: Grid1D, traj: Trajectory, stride: int
) -> None:
    rows = []
    report_idx = 0
    t_acc = 0.0
    for k, t in enumerate(traj.times):
        mac = to_primitive(traj.states[k])
        entropy = lyapunov_functional(grid, traj.states[k])
        iters, diss = 0, 0.0
        if k > 0:
            while report_idx < len(traj.reports) and t_acc < t - 1e-12 * max(1.0, t):
                rep = traj.reports[report_idx]
                t_acc += rep.tau_used
                iters += rep.iterations
                diss += sum(rep.dissipation_terms.values())
                report_idx += 1
        rows.append(
            [
                t,
                integrate(grid, mac.rho),
                integrate(grid, mac.energy),
                entropy,
                diss,
                float(np.min(mac.theta)),
                float(np.max(mac.rho)),
                iters,
            ]
        )
    _write_csv(
        out / "trajectory.csv",
        ["t", "mass", "energy", "entropy", "diss_total", "min_theta", "max_rho", "fp_iters"],
        rows,
    )
    for k, state in enumerate(traj.states):
        if k % stride != 0 and k != len(traj.states) - 1:
            continue
        mac = to_primitive(state)
        _write_csv(
            out / f"snapshot_{k}.csv",
            ["x", "rho", "theta", "E", "phi", "w"],
            [
                [grid.cell_centers[i], mac.rho[i], mac.theta[i], mac.energy[i], state.phi[i], state.w[i]]
                for i in range(grid.n_cells)
            ],
        )


def _audit_records(traj: Trajectory) -> List[Dict[str, Any]]:
    records = []
    t = 0.0
    for k, rep in enumerate(traj.reports):
        t += rep.tau_used
        records.append(
            {
                "step": k + 1,
                "t": t,
                "tau_used": rep.tau_used,
                "iterations": rep.iterations,
                "residual": rep.residual,
                "mass_lhs": rep.mass_lhs,
                "mass_rhs": rep.mass_rhs,
                "mass_error": rep.budget.mass_error,
                "mass_pass": rep.budget.mass_pass,
                "energy_lhs": rep.energy_lhs,
                "energy_rhs": rep.energy_rhs,
                "energy_error": rep.budget.energy_error,
                "energy_pass": rep.budget.energy_pass,
                "entropy_before": rep.entropy_before,
                "entropy_after": rep.entropy_after,
                "entropy_slack": rep.entropy.slack,
                "entropy_violation": rep.entropy.violation,
                "entropy_pass": rep.entropy.passed,
                "edge_form_min": rep.entropy.edge_form_min,
                "dissipation": rep.dissipation_terms,
            }
        )
    return records


def _json_default(value: Any):
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _write_audits(out: Path, records: List[Dict[str, Any]]) -> None:
    payload = {
        "all_passed": bool(
            all(
                r["mass_pass"] and r["energy_pass"] and r["entropy_pass"]
                for r in records
            )
        ),
        "records": records,
    }
    with open(out / "audits.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _write_error_record(out: Optional[Path], kind: str, message: str) -> None:
    if out is None:
        return
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "error.json", "w", encoding="utf-8", newline="\n") as f:
            json.dump({"error": kind, "message": message}, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError:
        pass


# ---------------------------------------------------------------------------
# mode runners
# ---------------------------------------------------------------------------


def _run_macro(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    rho0, theta0 = cfg.initial_fields(grid)
    init = make_initial_state(rho0, theta0, floor=cfg.scheme.init_floor)
    traj = run_transient(grid, init, cfg.scheme)
    _write_macro_outputs(out, grid, traj, cfg.snapshot_stride)
    _write_audits(out, _audit_records(traj))
    return EXIT_OK


def _run_kinetic(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    rho0, theta0 = cfg.initial_fields(grid)
    vgrid = build_velocity_grid(v_max=cfg.v_max, n_v=cfg.n_v)
    run = run_kinetic(
        grid, vgrid, rho0, theta0, cfg.kinetic_eps, cfg.scheme.t_final
    )
    rows = [
        [
            run.times[i],
            integrate(grid, run.rho[i]),
            integrate(grid, run.theta_b[i] + run.kinetic_energy[i]),
            float(np.min(run.theta_b[i])),
            float(np.max(run.rho[i])),
        ]
        for i in range(len(run.times))
    ]
    _write_csv(
        out / "kinetic_trajectory.csv",
        ["t", "mass", "energy_total", "min_theta_b", "max_rho"],
        rows,
    )
    final = run.final_state
    rho, e_kin, flux = run.rho[-1], run.kinetic_energy[-1], run.mass_flux[-1]
    _write_csv(
        out / "kinetic_final.csv",
        ["x", "rho", "kinetic_energy", "theta_b", "mass_flux"],
        [
            [grid.cell_centers[i], rho[i], e_kin[i], final.theta_b[i], flux[i]]
            for i in range(grid.n_cells)
        ],
    )
    return EXIT_OK


def _run_compare(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    rho0, theta0 = cfg.initial_fields(grid)
    table = kinetic_limit_study(
        grid,
        rho0,
        theta0,
        cfg.kinetic_eps_values,
        cfg.scheme.t_final,
        v_max=cfg.v_max,
        n_v=cfg.n_v,
        tau_macro=cfg.scheme.tau,
    )
    table.write_csv(out / "table.csv")
    return EXIT_OK


def _run_sweep(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    if cfg.sweep_which is not None:
        if cfg.sweep_values is None:
            raise ConfigError("sweep.values", "required when sweep.which is set")
        rho0, theta0 = cfg.initial_fields(grid)
        init = make_initial_state(rho0, theta0, floor=cfg.scheme.init_floor)
        result = regularization_study(
            grid, init, cfg.scheme, cfg.sweep_which, cfg.sweep_values
        )
        result.table.write_csv(out / "table.csv")
        _write_csv(
            out / "drifts.csv",
            [cfg.sweep_which, "mass_drift", "energy_drift"],
            [
                [v, result.mass_drift[v], result.energy_drift[v]]
                for v in cfg.sweep_values
            ],
        )
        return EXIT_OK
    if cfg.sweep_varied is None:
        raise ConfigError("sweep", "needs either which/values or varied")
    spec = SweepSpec(base=cfg.scheme, varied=cfg.sweep_varied, preset=cfg.preset)
    results = run_sweep(grid, spec)
    names = sorted(cfg.sweep_varied)
    rows = []
    for combo, traj in results:
        mac0 = to_primitive(traj.states[0])
        mac1 = to_primitive(traj.states[-1])
        rows.append(
            [combo[n] for n in names]
            + [
                integrate(grid, mac1.rho) - integrate(grid, mac0.rho),
                integrate(grid, mac1.energy) - integrate(grid, mac0.energy),
                lyapunov_functional(grid, traj.states[-1]),
            ]
        )
    _write_csv(out / "sweep_summary.csv", names + ["mass_drift", "energy_drift", "entropy_final"], rows)
    return EXIT_OK


def _run_mms(cfg: RunConfig, out: Path) -> int:
    ms = default_manufactured(cfg.length)
    result = mms_convergence(cfg.mms_resolutions, ms, cfg.scheme, length=cfg.length)
    result.spatial.write_csv(out / "table.csv")
    result.temporal.write_csv(out / "table_temporal.csv")
    return EXIT_OK


def _run_audit(cfg: RunConfig, out: Path) -> int:
    """Re-audit a stored trajectory from its per-step snapshots."""
    traj_file = out / "trajectory.csv"
    if not traj_file.exists():
        raise ConfigError("output.directory", f"no trajectory.csv in {out}")
    columns = _read_csv(traj_file)
    times = columns["t"]
    states = []
    for k in range(len(times)):
        snap = out / f"snapshot_{k}.csv"
        if not snap.exists():
            raise ConfigError(
                "output.snapshot_stride",
                "audit mode needs snapshots at every step (snapshot_stride=1)",
            )
        cols = _read_csv(snap)
        states.append(EntropicState(phi=cols["phi"], w=cols["w"]))
    grid = build_grid(len(states[0].phi), cfg.length)
    records = []
    for k in range(1, len(states)):
        tau_k = float(times[k] - times[k - 1])
        p_k = dataclasses.replace(cfg.scheme, tau=tau_k)
        budget = budget_audit(grid, states[k - 1], states[k], p_k)
        entropy = entropy_audit(grid, states[k - 1], states[k], p_k)
        records.append(
            {
                "step": k,
                "t": float(times[k]),
                "tau_used": tau_k,
                "iterations": 0,
                "residual": float("nan"),
                "mass_lhs": budget.mass_lhs,
                "mass_rhs": budget.mass_rhs,
                "mass_error": budget.mass_error,
                "mass_pass": budget.mass_pass,
                "energy_lhs": budget.energy_lhs,
                "energy_rhs": budget.energy_rhs,
                "energy_error": budget.energy_error,
                "energy_pass": budget.energy_pass,
                "entropy_before": entropy.h_prev,
                "entropy_after": entropy.h_next,
                "entropy_slack": entropy.slack,
                "entropy_violation": entropy.violation,
                "entropy_pass": entropy.passed,
                "edge_form_min": entropy.edge_form_min,
                "dissipation": entropy.dissipation,
            }
        )
    _write_audits(out, records)
    return EXIT_OK


_RUNNERS = {
    "macro": _run_macro,
    "kinetic": _run_kinetic,
    "compare": _run_compare,
    "sweep": _run_sweep,
    "mms": _run_mms,
    "audit": _run_audit,
}


def main(argv: Sequence[str]) -> int:
    out: Optional[Path] = None
    try:
        if len(argv) < 2:
            raise ConfigError("<argv>", "usage: etlab <mode> <config.json> [key=value ...]")
        mode, config_path = argv[0], argv[1]
        if mode not in MODES:
            raise ConfigError("mode", f"unknown subcommand {mode!r}")
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("<config>", f"cannot read {config_path}: {exc}") from exc
        cfg = parse_config(text)
        cfg.mode = mode
        cfg = _apply_overrides(cfg, argv[2:])
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _RUNNERS[mode](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        _write_error_record(out, "config", str(exc))
        return EXIT_CONFIG
    except StepFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        _write_error_record(out, "solver", str(exc))
        return EXIT_SOLVER


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
