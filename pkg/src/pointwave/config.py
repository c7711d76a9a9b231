"""
Configuration for pointwave experiments
All defaults, the experiment-file schema, and the loader
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from src.pointwave.errors import ConfigError, ParameterError
from src.pointwave.fdtd import BOUNDARIES, MAX_CFL
from src.pointwave.freewave import (
    BumpField,
    CauchyBundle,
    RadialBump,
    SeparableSource,
    TimePulse,
    offset_bundle,
    shell_bundle,
)
from src.pointwave.geometry import SHAPES, DomainSpec
from src.pointwave.newton import MATVEC_METHODS

ENV_PREFIX = "POINTWAVE_"

# ============================================================================
# DOMAIN
# ============================================================================

DEFAULT_SHAPE = "ball"
DEFAULT_RADIUS = 1.0

# ============================================================================
# DATA (radial C⁶ bumps, order 7)
# ============================================================================

DATA_FAMILIES = ("shell", "offset")
DEFAULT_FAMILY = "shell"
SHELL_INNER = 0.5           # ρ_min of the shipped shell data
SHELL_OUTER = 2.0
OFFSET_DISTANCE = 1.2       # bump center on the +z axis
OFFSET_RADIUS = 0.7
BUMP_ORDER = 7

# ============================================================================
# SPECTRAL
# ============================================================================

SPECTRAL_RESOLUTION = 16    # cells per diameter of Ω
SPECTRAL_MODES = 40         # eigenpairs computed before truncation
CAPTURED_MASS_DELTA = 0.01  # keep modes until Σc_k ≥ (1 − δ)|Ω|
EIGEN_TOL = 1e-10

# ============================================================================
# TIME
# ============================================================================

TIME_STEP = 0.005
HORIZON = 3.0
TAU = 0.0                   # > 0 selects T = ε^(−τ) per ε
SPHERE_ORDER = 47
RADIAL_ORDER = 64
ROUTE_TOLERANCE = 1e-3      # closed form vs Duhamel, relative sup-norm

# ============================================================================
# FDTD
# ============================================================================

FDTD_N_MIN = 8              # cells across diam(Ω_ε)
FDTD_CFL = 0.9
FDTD_MARGIN_CELLS = 4
SPONGE_WIDTH = 0.5
MEMORY_BUDGET_GB = 4.0

# ============================================================================
# COMPARISON / SWEEP
# ============================================================================

REGION_RADIUS = 1.5         # norms over |x| ≤ R_c
EXCLUSION_CELLS = 2         # default r_excl = 2 FDTD cells
TIME_SAMPLES = 6            # sup over t is taken on this many snapshot times
SWEEP_EPS = (0.3, 0.2, 0.15, 0.1)
OUTPUT_FORMATS = ("csv", "parquet")


@dataclass(frozen=True)
class DomainSettings:
    shape: str = DEFAULT_SHAPE
    radius: float = DEFAULT_RADIUS
    sides: Tuple[float, ...] = (1.0, 1.0, 1.0)
    semi_axes: Tuple[float, ...] = (1.0, 1.0, 1.0)
    center: Tuple[float, ...] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DataSettings:
    family: str = DEFAULT_FAMILY
    inner: float = SHELL_INNER
    outer: float = SHELL_OUTER
    distance: float = OFFSET_DISTANCE
    bump_radius: float = OFFSET_RADIUS
    order: int = BUMP_ORDER
    phi_amplitude: float = 1.0
    psi_amplitude: float = 0.0
    source_amplitude: float = 0.0
    source_duration: float = 1.0


@dataclass(frozen=True)
class SpectralSettings:
    resolution: int = SPECTRAL_RESOLUTION
    modes: int = SPECTRAL_MODES
    delta: float = CAPTURED_MASS_DELTA
    method: str = "auto"
    tol: float = EIGEN_TOL
    seed: int = 0


@dataclass(frozen=True)
class TimeSettings:
    dt: float = TIME_STEP
    horizon: float = HORIZON
    tau: float = TAU
    route: str = "duhamel-ode"
    sphere_order: int = SPHERE_ORDER
    radial_order: int = RADIAL_ORDER
    route_tolerance: float = ROUTE_TOLERANCE


@dataclass(frozen=True)
class FdtdSettings:
    h: float = 0.0              # 0 → largest spacing allowed by n_min
    n_min: int = FDTD_N_MIN
    cfl: float = FDTD_CFL
    boundary: str = "causal"
    sponge_width: float = SPONGE_WIDTH
    blend: bool = False
    margin_cells: int = FDTD_MARGIN_CELLS
    threads: int = 1
    memory_budget_gb: float = MEMORY_BUDGET_GB


@dataclass(frozen=True)
class CompareSettings:
    region_radius: float = REGION_RADIUS
    r_excl: float = 0.0         # 0 → EXCLUSION_CELLS × h_g
    samples: int = TIME_SAMPLES


@dataclass(frozen=True)
class SweepSettings:
    eps: Tuple[float, ...] = SWEEP_EPS


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "results"
    formats: Tuple[str, ...] = ("csv",)
    figure: bool = False


SECTIONS = {
    "domain": DomainSettings,
    "data": DataSettings,
    "spectral": SpectralSettings,
    "time": TimeSettings,
    "fdtd": FdtdSettings,
    "compare": CompareSettings,
    "sweep": SweepSettings,
    "output": OutputSettings,
}

# section -> key -> (type, default); the documented experiment-file schema
SCHEMA = {
    name: {f.name: (f.type, f.default) for f in fields(cls)}
    for name, cls in SECTIONS.items()
}

CHOICES = {
    ("domain", "shape"): SHAPES,
    ("data", "family"): DATA_FAMILIES,
    ("spectral", "method"): MATVEC_METHODS,
    ("time", "route"): ("closed-form", "duhamel-ode"),
    ("fdtd", "boundary"): BOUNDARIES,
    ("output", "formats"): OUTPUT_FORMATS,
}

def _scalar(typ: type, value: Any) -> Any:
    """value if it already has the YAML type matching typ, else ValueError"""
    if isinstance(value, bool) and typ is not bool:
        raise ValueError(value)
    if typ is float and isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, typ):
        return value
    raise ValueError(value)


def _checked(section: str, key: str, value: Any) -> Any:
    """Check a loaded value against the schema type of section.key"""
    typ, _ = SCHEMA[section][key]
    if typ in (bool, int, float, str):
        item, expected = typ, typ.__name__
    else:
        item = float if typ == Tuple[float, ...] else str
        expected = f"list of {item.__name__}"
    try:
        if item is typ:
            return _scalar(typ, value)
        # tuple types: a YAML list, or one scalar
        items = value if isinstance(value, (list, tuple)) else [value]
        return tuple(_scalar(item, v) for v in items)
    except ValueError:
        raise ConfigError(f"{section}.{key}: {value!r} is not a {expected}")


def _check_choice(section: str, key: str, value: Any) -> None:
    allowed = CHOICES.get((section, key))
    if allowed is None:
        return
    values = value if isinstance(value, tuple) else (value,)
    for v in values:
        if v not in allowed:
            raise ConfigError(f"{section}.{key}: '{v}' is not one of {', '.join(allowed)}")


# ============================================================================
# EXPERIMENT CONFIG
# ============================================================================

@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment: one artifact reproduces a run"""
    domain: DomainSettings = field(default_factory=DomainSettings)
    data: DataSettings = field(default_factory=DataSettings)
    spectral: SpectralSettings = field(default_factory=SpectralSettings)
    time: TimeSettings = field(default_factory=TimeSettings)
    fdtd: FdtdSettings = field(default_factory=FdtdSettings)
    compare: CompareSettings = field(default_factory=CompareSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_values(self, values: Mapping[str, Any]) -> "ExperimentConfig":
        """Copy with 'section.key' entries replaced (values checked against the schema types)"""
        sections = {name: asdict(getattr(self, name)) for name in SECTIONS}
        for dotted, raw in values.items():
            section, _, key = dotted.partition(".")
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"Unknown configuration key '{dotted}'")
            value = _checked(section, key, raw)
            _check_choice(section, key, value)
            sections[section][key] = value
        return replace(self, **{name: SECTIONS[name](**vals) for name, vals in sections.items()})

    # ------------------------------------------------------------------
    # Derived objects
    # ------------------------------------------------------------------

    def domain_spec(self) -> DomainSpec:
        d = self.domain
        return DomainSpec(shape=d.shape, radius=d.radius, sides=tuple(d.sides),
                          semi_axes=tuple(d.semi_axes), center=tuple(d.center))

    def bundle(self) -> CauchyBundle:
        """Cauchy data described by the data.section"""
        d = self.data
        source = None
        if d.source_amplitude != 0.0:
            if d.family == "shell":
                spatial = RadialBump.shell((0.0, 0.0, 0.0), d.inner, d.outer, 1.0, d.order)
            else:
                spatial = RadialBump.solid((0.0, 0.0, d.distance), d.bump_radius, 1.0, d.order)
            source = SeparableSource(TimePulse(d.source_amplitude, d.source_duration), BumpField((spatial,)))
        if d.family == "shell":
            return shell_bundle(d.inner, d.outer, d.phi_amplitude, d.psi_amplitude, d.order, source)
        return offset_bundle(d.distance, d.bump_radius, d.phi_amplitude, d.psi_amplitude, d.order, source)

    def horizon_for(self, eps: float) -> float:
        """T for one ε: fixed horizon, or ε^(−τ) when τ > 0"""
        if self.time.tau > 0.0:
            return float(eps ** (-self.time.tau))
        return self.time.horizon

    @staticmethod
    def implied_tau(eps: float, T: float) -> float:
        """τ = −ln T / ln ε"""
        return -math.log(T) / math.log(eps)

    def exclusion_radius(self, h_g: float) -> float:
        return self.compare.r_excl if self.compare.r_excl > 0.0 else EXCLUSION_CELLS * h_g

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        """Cross-section preconditions that can be checked without computing"""
        for key in ("sides", "semi_axes", "center"):
            if len(getattr(self.domain, key)) != 3:
                raise ConfigError(f"domain.{key}: expected a list of 3 numbers")
        spec = self.domain_spec()
        if not self.sweep.eps:
            raise ConfigError("sweep.eps: at least one ε is required")
        for eps in self.sweep.eps:
            if not 0.0 < eps < 1.0:
                raise ParameterError(f"sweep.eps: {eps} is outside (0, 1)")
        if self.spectral.resolution < 8:
            raise ParameterError(f"spectral.resolution must be ≥ 8, got {self.spectral.resolution}")
        if self.spectral.modes < 1:
            raise ParameterError(f"spectral.modes must be ≥ 1, got {self.spectral.modes}")
        if not 0.0 < self.spectral.delta < 1.0:
            raise ParameterError(f"spectral.delta must lie in (0, 1), got {self.spectral.delta}")
        if not 0.0 < self.fdtd.cfl <= MAX_CFL:
            raise ParameterError(f"fdtd.cfl must lie in (0, {MAX_CFL}], got {self.fdtd.cfl}")
        if self.fdtd.n_min < 1 or self.fdtd.threads < 1:
            raise ParameterError("fdtd.n_min and threads must be ≥ 1")
        if self.compare.samples < 1:
            raise ParameterError(f"compare.samples must be ≥ 1, got {self.compare.samples}")
        if self.compare.region_radius <= 0.0 or self.compare.r_excl < 0.0:
            raise ParameterError("compare.region_radius must be > 0 and r_excl ≥ 0")
        if self.time.horizon <= 0.0 or self.time.tau < 0.0:
            raise ParameterError("time.horizon must be > 0 and tau ≥ 0")

        data = self.bundle()
        if self.time.dt > data.rho_min / 8.0:
            raise ParameterError(
                f"time.dt={self.time.dt} does not resolve the wavefront; need dt ≤ ρ_min/8 = {data.rho_min / 8.0:.4g}"
            )
        if self.compare.region_radius <= self.exclusion_radius(spec.diameter * min(self.sweep.eps) / self.fdtd.n_min):
            raise ParameterError("compare.region_radius must exceed the exclusion radius")
        return self


def _read_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"Experiment file not found at: {path}\n"
            f"Please pass a YAML file such as configs/ball.yaml"
        )
    try:
        with open(path, encoding="utf-8") as handle:
            document = yaml.safe_load(handle)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}")

    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: expected a mapping of sections, got {type(document).__name__}")

    values = {}
    for section, entries in document.items():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section '{section}' (expected one of {', '.join(SCHEMA)})")
        if not isinstance(entries, dict):
            raise ConfigError(f"{path}: section '{section}' must be a mapping of keys")
        for key, value in entries.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section '{section}'")
            values[f"{section}.{key}"] = value
    return values


def _read_environ(environ: Mapping[str, str]) -> Dict[str, Any]:
    """
    POINTWAVE_<SECTION>_<KEY> variables; unknown names are rejected

    Each value is read as a YAML scalar or flow list, so
    POINTWAVE_SWEEP_EPS='[0.3, 0.1]' and POINTWAVE_OUTPUT_FIGURE=true work.
    """
    values = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"Environment variable {name} does not name a configuration key")
        try:
            values[f"{section}.{key}"] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"Environment variable {name}: {exc}")
    return values


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Resolve an experiment: defaults < file < environment < overrides

    Args:
        path: YAML experiment file (optional)
        overrides: {'section.key': value} applied last (CLI flags)
        environ: environment mapping, defaults to os.environ

    Returns:
        ExperimentConfig: validated configuration
    """
    cfg = ExperimentConfig()
    if path is not None:
        cfg = cfg.with_values(_read_file(path))
    cfg = cfg.with_values(_read_environ(os.environ if environ is None else environ))
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg.validate()
