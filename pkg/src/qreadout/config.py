"""Flat key = value experiment configuration files.

One file describes one experiment campaign: the physical parameters (all
rates in units of the readout decay rate gamma), the numerics, the pulse
schedule, and the output location.  Values may be comma-separated lists
where a figure sweeps a parameter (mu for the readout modes, Gamma and
omega_q for the decay study, detector_efficiency and T for the
entanglement sweep).  Unknown keys are rejected so typos cannot silently
fall back to defaults, and validation reports every violation at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

MODES = ("readout-direct", "readout-decay", "readout-reflection", "entangle")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class ExperimentConfig:
    mode: str = ""
    # physics, in units of gamma
    mu: tuple[float, ...] = (5.0,)
    omega_rd: float = 2.0
    omega_q: tuple[float, ...] = ()
    Gamma: tuple[float, ...] = (0.0,)
    beta: float = 2.0
    detector_efficiency: tuple[float, ...] = (1.0,)
    delta: float = 0.0
    gamma: float = 1.0          # documentation only; the unit of rate
    # numerics
    dt: float = 1e-3
    T: tuple[float, ...] = (25.0,)
    n_traj: int = 2000
    seed: int = 0
    integrator: str = "euler"
    sample_every: int = 0       # 0 = auto (about 250 grid points)
    n_workers: int = 0          # 0 = auto (cpu count, capped)
    # schedule
    t_pi: tuple[float, ...] = (0.0,)
    compare_no_pulse: bool = False
    drive_off: float = -1.0     # entangle: <0 means T - relax_window
    relax_window: float = 5.0
    # outputs
    out_dir: str = "out"
    save_records: bool = False
    hist_time: float = -1.0     # readout: count-histogram snapshot time; <0 = T
    trace_count: int = 0        # entangle: runs with stored population traces

    def resolved_sample_every(self, T: float) -> int:
        if self.sample_every > 0:
            return self.sample_every
        return max(1, int(round(T / self.dt)) // 250)


_LIST_KEYS = {"mu", "omega_q", "Gamma", "detector_efficiency", "T", "t_pi"}
_BOOL_KEYS = {"compare_no_pulse", "save_records"}
_INT_KEYS = {"n_traj", "seed", "sample_every", "n_workers", "trace_count"}
_STR_KEYS = {"mode", "integrator", "out_dir"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError listing every violation."""
    cfg, errors = validate_config(text)
    if errors:
        raise ConfigError(errors)
    return cfg


def validate_config(text: str) -> tuple[ExperimentConfig | None, list[str]]:
    """Parse a config file body; returns (config, errors), config None on error."""
    known = {f.name for f in fields(ExperimentConfig)}
    raw: dict[str, str] = {}
    errors: list[str] = []
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {ln}: expected 'key = value', got {body!r}")
            continue
        key, val = (part.strip() for part in body.split("=", 1))
        if key not in known:
            errors.append(f"line {ln}: unknown key {key!r}")
            continue
        if key in raw:
            errors.append(f"line {ln}: duplicate key {key!r}")
            continue
        raw[key] = val

    cfg = ExperimentConfig()
    for key, val in raw.items():
        try:
            if key in _STR_KEYS:
                setattr(cfg, key, val)
            elif key in _BOOL_KEYS:
                if val.lower() not in ("true", "false"):
                    raise ValueError("expected true/false")
                setattr(cfg, key, val.lower() == "true")
            elif key in _INT_KEYS:
                setattr(cfg, key, int(val))
            elif key in _LIST_KEYS:
                setattr(cfg, key, tuple(float(v) for v in val.split(",") if v.strip() != ""))
            else:
                setattr(cfg, key, float(val))
        except ValueError as exc:
            errors.append(f"key {key!r}: cannot parse value {val!r} ({exc})")

    errors.extend(_semantic_errors(cfg))
    return (None, errors) if errors else (cfg, [])


def _semantic_errors(cfg: ExperimentConfig) -> list[str]:
    errs = []
    if cfg.mode == "":
        errs.append("mode is required")
    elif cfg.mode not in MODES:
        errs.append(f"mode must be one of {MODES}, got {cfg.mode!r}")
    for eta in cfg.detector_efficiency:
        if not 0.0 <= eta <= 1.0:
            errs.append(f"detector_efficiency outside [0,1]: {eta}")
    for name in ("mu", "omega_q", "Gamma", "T"):
        for v in getattr(cfg, name):
            if v < 0:
                errs.append(f"{name} must be non-negative, got {v}")
    if not cfg.T:
        errs.append("T must not be empty")
    if cfg.beta < 0:
        errs.append(f"beta must be non-negative, got {cfg.beta}")
    if cfg.omega_rd < 0:
        errs.append(f"omega_rd must be non-negative, got {cfg.omega_rd}")
    if cfg.gamma <= 0:
        errs.append(f"gamma must be positive, got {cfg.gamma}")
    if cfg.dt <= 0:
        errs.append(f"dt must be positive, got {cfg.dt}")
    if cfg.n_traj < 1:
        errs.append(f"n_traj must be at least 1, got {cfg.n_traj}")
    if cfg.integrator not in ("euler", "exact"):
        errs.append(f"integrator must be euler or exact, got {cfg.integrator!r}")
    if cfg.mode == "entangle":
        for T in cfg.T:
            off = cfg.drive_off if cfg.drive_off >= 0 else max(T - cfg.relax_window, 0.0)
            if off > T:
                errs.append(f"drive_off {off} exceeds T {T}")
    return errs
