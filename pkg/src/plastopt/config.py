"""Run configuration files and benchmark presets.

A configuration is a YAML mapping with one section per component::

    name: l_bracket_top
    units: {length: nondimensional, force: nondimensional, stress: nondimensional}
    problem: {geometry: l_bracket, resolution: 150, load_position: [1.0, 0.4], ...}
    material: {E_min: 0.001, E_max: 1000.0, ...}
    variant: {kind: max_end_compliance_vol_plastic, volume_fraction: 0.35, ...}
    schedule: {p_E0: 1.0, p_sy0: 0.5, step: 0.1, period: 10, ...}
    optimization: {max_cycles: 500, objective_scale: 100000.0, radius: 0.02, ...}
    solver: {tol: 1.0e-06, max_iter: 20, ...}
    mma: {move: 0.2, asy_init: 0.5, ...}
    output_dir: runs/l_bracket_top
    seed: 0

Every key is optional; missing keys take the defaults of the matching
dataclass. Unknown keys and invalid values are all reported together.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace

import yaml

from .fea import SolverOptions
from .material import MaterialParams
from .mesh import ConfigurationError, build_domain, distributed_right_edge
from .mma import MmaOptions
from .optimize import (ContinuationSchedule, DesignProblem, OptimizationConfig,
                       ProblemVariant)

REFERENCE_GAUSS = 4 * 14400  # Gauss points of the 150x150 L-bracket
DEFAULT_UNITS = {"length": "nondimensional", "force": "nondimensional",
                 "stress": "nondimensional"}
# void yield strain sy0_min / E_min = 0.1 keeps near-void elements elastic
VOID_YIELD_STRESS = 1e-4


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ProblemConfig:
    geometry: str = "l_bracket"
    resolution: object = 150  # int, or [nx, ny]
    load_position: object = None  # [x, y] or None for the geometry default
    spread: object = None  # loaded node count or None for the default
    u_p: float = 0.01
    half_ends: bool = True
    load: str = "strip"  # 'strip', or 'distributed' over the right edge (rectangle)
    symmetry_right: bool = False

    def __post_init__(self):
        # lists, not tuples, so the YAML round trip compares equal
        if isinstance(self.resolution, tuple):
            self.resolution = list(self.resolution)
        if isinstance(self.load_position, tuple):
            self.load_position = list(self.load_position)

    def build(self):
        res = self.resolution if isinstance(self.resolution, int) else tuple(self.resolution)
        pos = None if self.load_position is None else tuple(self.load_position)
        mesh, bc = build_domain(self.geometry, res, pos, spread=self.spread, u_p=self.u_p,
                                half_ends=self.half_ends, symmetry_right=self.symmetry_right)
        if self.load == "distributed":
            bc = distributed_right_edge(mesh, bc, self.half_ends)
        elif self.load != "strip":
            raise ConfigurationError(f"unknown load style {self.load!r}")
        return mesh, bc


@dataclass
class VariantConfig:
    kind: str = "max_end_compliance_vol_plastic"
    volume_fraction: float = 0.35
    plastic_budget: float = 1e-4
    # budget is quoted for this many Gauss points and scaled to the mesh; None disables
    budget_reference_gauss: object = REFERENCE_GAUSS
    compliance_bound: object = None

    def resolve(self, n_gauss: int) -> ProblemVariant:
        budget = self.plastic_budget
        if self.budget_reference_gauss:
            budget = budget * n_gauss / self.budget_reference_gauss
        return ProblemVariant(self.kind, self.volume_fraction, budget, self.compliance_bound)


@dataclass
class OptimizationSettings:
    max_cycles: int = 500
    objective_scale: float = 1e5
    change_tol: float = 1e-3
    max_failures: int = 5
    radius: float = 0.02
    eta: float = 0.5


SECTIONS = {
    "problem": ProblemConfig,
    "material": MaterialParams,
    "variant": VariantConfig,
    "schedule": ContinuationSchedule,
    "optimization": OptimizationSettings,
    "solver": SolverOptions,
    "mma": MmaOptions,
}
SCALARS = {"name": str, "output_dir": str, "seed": int}


@dataclass
class RunConfig:
    name: str = "run"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    material: MaterialParams = field(default_factory=lambda: MaterialParams(
        sy0_min=VOID_YIELD_STRESS))
    variant: VariantConfig = field(default_factory=VariantConfig)
    schedule: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    optimization: OptimizationSettings = field(default_factory=OptimizationSettings)
    solver: SolverOptions = field(default_factory=SolverOptions)
    mma: MmaOptions = field(default_factory=MmaOptions)
    output_dir: str = "runs/run"
    seed: int = 0  # reserved; no algorithm draws random numbers
    units: dict = field(default_factory=lambda: dict(DEFAULT_UNITS))

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        out = {"name": self.name, "units": dict(self.units)}
        for key in SECTIONS:
            out[key] = {k: _plain(v) for k, v in dataclasses.asdict(getattr(self, key)).items()}
        out["output_dir"] = self.output_dir
        out["seed"] = self.seed
        return out

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        errors = []
        if not isinstance(data, dict):
            raise ConfigError(["top level must be a mapping"])
        known = set(SECTIONS) | set(SCALARS) | {"units"}
        errors += [f"unknown key {k!r}" for k in data if k not in known]
        kwargs = {}
        for key, typ in SCALARS.items():
            if key in data:
                val = data[key]
                if not isinstance(val, typ) or isinstance(val, bool):
                    errors.append(f"{key}: expected {typ.__name__}, got {val!r}")
                else:
                    kwargs[key] = val
        units = data.get("units", DEFAULT_UNITS)
        if not isinstance(units, dict):
            errors.append("units: expected a mapping")
        else:
            bad = {k: v for k, v in units.items() if v != "nondimensional"}
            errors += [f"units.{k}: only 'nondimensional' is supported, got {v!r}"
                       for k, v in bad.items()]
            kwargs["units"] = {**DEFAULT_UNITS, **units}
        defaults = cls()
        broken = set()
        for key, typ in SECTIONS.items():
            sec = data.get(key, {}) or {}
            if not isinstance(sec, dict):
                errors.append(f"{key}: expected a mapping")
                broken.add(key)
                continue
            obj, errs = _build_section(key, typ, sec, getattr(defaults, key))
            errors += errs
            if obj is None:
                broken.add(key)
            else:
                kwargs[key] = obj
        cfg = cls(**kwargs)
        errors += cfg.check(skip=broken)
        if errors:
            raise ConfigError(errors)
        return cfg

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError([f"YAML parse error: {exc}"]) from exc
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.loads(fh.read())

    # -- checks and construction ----------------------------------------------
    def validate(self):
        """Raise ConfigError listing every problem found."""
        errors = self.check()
        if errors:
            raise ConfigError(errors)

    def check(self, skip=()) -> list:
        """Cross-field checks; sections named in ``skip`` already failed to parse."""
        errors = []
        mesh = None
        if "problem" not in skip:
            try:
                mesh, _ = self.problem.build()
            except (ConfigurationError, ValueError, TypeError) as exc:
                errors.append(f"problem: {exc}")
        if "variant" not in skip:
            try:
                self.variant.resolve(mesh.n_gauss if mesh is not None else REFERENCE_GAUSS)
            except (ValueError, TypeError) as exc:
                errors.append(f"variant: {exc}")
        o = self.optimization
        if o.max_cycles < 0:
            errors.append("optimization.max_cycles: must be nonnegative")
        if o.radius <= 0:
            errors.append("optimization.radius: must be positive")
        if not 0 < o.eta < 1:
            errors.append("optimization.eta: must lie in (0, 1)")
        if o.objective_scale <= 0:
            errors.append("optimization.objective_scale: must be positive")
        if o.max_failures < 0:
            errors.append("optimization.max_failures: must be nonnegative")
        if not 0 < self.mma.move <= 1:
            errors.append("mma.move: must lie in (0, 1]")
        if self.solver.tol <= 0:
            errors.append("solver.tol: must be positive")
        if self.schedule.p_E0 < self.schedule.p_sy0 or self.schedule.p_E_cap < self.schedule.p_sy_cap:
            errors.append("schedule: p_E must not fall below p_sy")
        return errors

    def optimization_config(self) -> OptimizationConfig:
        o = self.optimization
        return OptimizationConfig(max_cycles=o.max_cycles, schedule=self.schedule,
                                  objective_scale=o.objective_scale, change_tol=o.change_tol,
                                  max_failures=o.max_failures, radius=o.radius, eta=o.eta,
                                  solver=self.solver, mma=self.mma)

    def design_problem(self) -> DesignProblem:
        mesh, bc = self.problem.build()
        return DesignProblem(mesh, bc, self.material, self.variant.resolve(mesh.n_gauss),
                             self.optimization_config())


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _build_section(name, typ, values, default):
    errors = []
    names = {f.name for f in fields(typ)}
    errors += [f"{name}.{k}: unknown key" for k in values if k not in names]
    kw = {}
    for f in fields(typ):
        if f.name not in values:
            continue
        val = values[f.name]
        ref = getattr(default, f.name)
        # fields annotated ``object`` take several shapes and are checked on build
        ok, val = (True, val) if f.type == "object" else _coerce(val, ref)
        if not ok:
            errors.append(f"{name}.{f.name}: expected {type(ref).__name__}, got {values[f.name]!r}")
        else:
            kw[f.name] = val
    try:
        obj = replace(default, **kw)
    except (ValueError, TypeError) as exc:
        return None, errors + [f"{name}: {exc}"]
    # valid keys still build a section so cross-field checks can run
    return obj, errors


def _coerce(val, ref):
    """Check ``val`` against the type of its default ``ref``."""
    if ref is None:
        return True, val
    if isinstance(ref, bool):
        return isinstance(val, bool), val
    if isinstance(ref, float):
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            return True, float(val)
        return False, val
    if isinstance(ref, int):
        return isinstance(val, int) and not isinstance(val, bool), val
    if isinstance(ref, str):
        return isinstance(val, str), val
    return True, val


# -- presets -------------------------------------------------------------------
def benchmark(name: str, resolution=None, variant="max_end_compliance_vol_plastic") -> RunConfig:
    """Benchmark definitions at reference resolution, optionally rescaled.

    When ``resolution`` differs from the reference, the filter radius and the
    loaded-node count are scaled so both keep their size in elements.
    """
    presets = {
        "l_bracket_top": dict(geometry="l_bracket", res=150, pos=[1.0, 0.4], spread=10,
                              vf=0.35, radius=0.02),
        "l_bracket_mid": dict(geometry="l_bracket", res=150, pos=[1.0, 0.2], spread=5,
                              vf=0.4825, radius=0.02),
        "u_bracket": dict(geometry="u_bracket", res=100, pos=[2.0, 1.0], spread=10,
                          vf=0.40, radius=0.03),
    }
    if name not in presets:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(presets)}")
    p = presets[name]
    res = p["res"] if resolution is None else int(resolution)
    ratio = res / p["res"]
    spread = max(2, round(p["spread"] * ratio))
    radius = p["radius"] * p["res"] / res
    schedule = ContinuationSchedule()
    if name == "u_bracket":
        schedule = replace(schedule, p_E0=3.0, p_sy0=2.5)
    if variant == "min_volume_compliance_plastic":
        # hold moderate penalties while the compliance constraint becomes feasible
        schedule = replace(schedule, freeze_cycles=200)
    cfg = RunConfig(
        name=f"{name}_{variant}",
        problem=ProblemConfig(geometry=p["geometry"], resolution=res, load_position=p["pos"],
                              spread=spread),
        schedule=schedule,
        variant=VariantConfig(kind=variant, volume_fraction=p["vf"],
                              compliance_bound=3.8e-5 if variant.startswith("min_volume") else None),
        optimization=OptimizationSettings(radius=radius),
        output_dir=f"runs/{name}_{variant}",
    )
    cfg.validate()
    return cfg


def desk_scale(cfg: RunConfig, cycles: int = 150, compression: float = 10.0 / 3.0) -> RunConfig:
    """Shorten a run: fewer cycles and proportionally compressed schedules."""
    return replace(cfg, schedule=cfg.schedule.compressed(compression),
                   optimization=replace(cfg.optimization, max_cycles=cycles))
