"""Run configuration read from INI files.

All times in the file are in seconds and all lengths in metres except the
defect half-width, which is in coherence lengths. Conversion to solver units
happens in :mod:`lcmm.sim`.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import energy as en
from .mmpde import MONITOR_KINDS


@dataclass(frozen=True)
class MaterialProfile:
    S_eq: float = 0.65
    zeta: float = 4.06e-9
    C: float = 4.0e6
    b_ratio: float = 0.8
    delta_eps: float = 11.5
    eps_bar: float = 11.0
    gamma1: float = 0.0777
    e_flexo: float = 0.0

    def params(self) -> en.MaterialParams:
        return en.calibrate_profile(
            S_eq=self.S_eq, zeta=self.zeta, C=self.C, b_ratio=self.b_ratio, delta_eps=self.delta_eps,
            eps_bar=self.eps_bar, gamma1=self.gamma1, e_flexo=self.e_flexo,
        )


@dataclass(frozen=True)
class RunConfig:
    problem: str = "defect"
    # defect
    d_index: float = 0.5
    half_width: float = 10.0
    # pi-cell
    width: float = 2e-6
    thickness: float = 1e-6
    pretilt_deg: float = 6.0
    field_strength: float = 18e6
    perturb: bool = True
    perturb_deg: float = 1.0
    perturb_extent: float = 0.25
    # mesh
    nx: int = 10
    ny: int = 10
    # material
    material: MaterialProfile = field(default_factory=MaterialProfile)
    # monitor and MMPDE
    monitor_kind: str = "BM2b"
    tau: float = 3.6e-8
    m_exp: float = 3.0
    omega: float = 0.8
    smooth_sweeps: int = 2
    balance: str = "w"
    monitor_length: float = 0.0  # metres; 0 -> domain size
    scheme: str = "diffusion"
    # time stepping
    t_end: float = 2e-4
    dt0: float = 3.6e-10
    tol: float = 1e-3
    dt_min: float = 1e-16
    dt_max: float = 3.6e-6
    safety: float = 0.9
    shrink: float = 0.2
    grow: float = 2.0
    newton_tol: float = 1e-9
    newton_maxit: int = 25
    linear_tol: float = 1e-10
    # output
    out_dir: str = "out"
    snapshot_interval: float = 0.0  # seconds; 0 -> final snapshot only
    snapshot_format: str = "vtk"
    report_interval: float = 0.0  # defect-detection reports; 0 -> every snapshot
    # switches
    frozen_mesh: bool = False
    zero_field: bool = False
    threads: int = 1

    def __post_init__(self):
        validate_config(self)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    @property
    def n_elements(self) -> int:
        return 2 * self.nx * self.ny


def validate_config(c: RunConfig) -> None:
    if c.problem not in ("defect", "picell"):
        raise ValueError(f"unknown problem {c.problem!r}")
    if c.monitor_kind not in MONITOR_KINDS:
        raise ValueError(f"unknown monitor kind {c.monitor_kind!r}")
    if c.nx < 1 or c.ny < 1:
        raise ValueError("nx and ny must be >= 1")
    for name in ("tau", "t_end", "dt0", "dt_min", "dt_max", "width", "thickness", "half_width"):
        if not getattr(c, name) > 0:
            raise ValueError(f"{name} must be positive")
    if c.dt_min > c.dt_max:
        raise ValueError("dt_min must not exceed dt_max")
    if not 0 < c.omega < 1:
        raise ValueError("omega must lie in (0, 1)")
    if c.snapshot_format not in ("vtk", "csv"):
        raise ValueError("snapshot_format must be 'vtk' or 'csv'")
    if c.threads < 1:
        raise ValueError("threads must be >= 1")


_SECTIONS = {
    "problem": ("problem", "d_index", "half_width", "width", "thickness", "pretilt_deg", "field_strength",
                "perturb", "perturb_deg", "perturb_extent"),
    "mesh": ("nx", "ny"),
    "monitor": ("monitor_kind", "tau", "m_exp", "omega", "smooth_sweeps", "balance", "monitor_length", "scheme"),
    "time": ("t_end", "dt0", "tol", "dt_min", "dt_max", "safety", "shrink", "grow", "newton_tol",
             "newton_maxit", "linear_tol"),
    "output": ("out_dir", "snapshot_interval", "snapshot_format", "report_interval"),
    "run": ("frozen_mesh", "zero_field", "threads"),
}


def _convert(value: str, proto):
    if isinstance(proto, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(proto, int):
        return int(value)
    if isinstance(proto, float):
        return float(value)
    return value.strip()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"configuration file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # material keys such as S_eq are case sensitive
    cp.read(path)
    defaults = {f.name: f.default for f in fields(RunConfig) if f.name != "material"}
    kw = {}
    known = set()
    for sec, keys in _SECTIONS.items():
        if not cp.has_section(sec):
            continue
        for key, value in cp.items(sec):
            if key not in keys:
                raise ValueError(f"unknown key [{sec}] {key}")
            kw[key] = _convert(value, defaults[key])
        known.add(sec)
    mat = {}
    if cp.has_section("material"):
        proto = MaterialProfile()
        for key, value in cp.items("material"):
            if key == "profile":
                if value.strip().lower() not in ("5cb", "5cb-like"):
                    raise ValueError(f"unknown material profile {value!r}")
                continue
            if not hasattr(proto, key):
                raise ValueError(f"unknown key [material] {key}")
            mat[key] = float(value)
        known.add("material")
    extra = set(cp.sections()) - known - set(_SECTIONS)
    if extra:
        raise ValueError(f"unknown sections: {sorted(extra)}")
    return RunConfig(material=MaterialProfile(**mat), **kw)


def dump_config(c: RunConfig) -> str:
    lines = []
    for sec, keys in _SECTIONS.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {getattr(c, k)}" for k in keys]
        lines.append("")
    lines.append("[material]")
    lines.append("profile = 5cb")
    lines += [f"{f.name} = {getattr(c.material, f.name)}" for f in fields(MaterialProfile)]
    return "\n".join(lines) + "\n"
