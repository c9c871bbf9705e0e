"""Design loop: schedules, problem formulations and the MMA driver."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import AdjointFailure, FunctionalSpec, evaluate, sensitivities
from .fea import AnalysisFailure, AnalysisHistory, FEModel, SolverOptions, run_analysis
from .filters import DensityField, Parametrization
from .material import MaterialParams
from .mesh import BoundarySpec, Mesh
from .mma import MmaOptions, MmaState, mma_update

log = logging.getLogger(__name__)

VARIANTS = ("max_end_compliance_vol", "max_end_compliance_vol_plastic",
            "min_volume_compliance_plastic")

_TOL = 1e-9


@dataclass(frozen=True)
class ScheduleState:
    p_E: float
    p_sy: float
    beta: float


@dataclass(frozen=True)
class ContinuationSchedule:
    """Stepwise continuation of the penalty exponents and projection sharpness.

    Both exponents rise by ``step`` every ``period`` cycles up to their caps.
    ``beta`` is multiplied by ``beta_factor`` at the end of each period in
    which ``p_E >= beta_gate``. During the first ``freeze_cycles`` cycles the
    exponents are held at the freeze values and stepping resumes from there.
    """

    p_E0: float = 1.0
    p_sy0: float = 0.5
    step: float = 0.1
    period: int = 10
    p_E_cap: float = 5.0
    p_sy_cap: float = 4.5
    beta0: float = 1.0
    beta_factor: float = 1.1
    beta_period: int = 10
    beta_cap: float = 10.0
    beta_gate: float = 3.0
    freeze_cycles: int = 0
    freeze_p_E: float = 3.0
    freeze_p_sy: float = 2.5

    def __post_init__(self):
        if self.period < 1 or self.beta_period < 1:
            raise ValueError("schedule periods must be at least one cycle")
        if self.step < 0 or self.beta_factor < 1:
            raise ValueError("continuation must be nondecreasing")
        if self.freeze_cycles < 0:
            raise ValueError("freeze_cycles must be nonnegative")

    def penalties(self, cycle: int):
        if cycle < self.freeze_cycles:
            return self.freeze_p_E, self.freeze_p_sy
        if self.freeze_cycles:
            e0, s0, k = self.freeze_p_E, self.freeze_p_sy, cycle - self.freeze_cycles
        else:
            e0, s0, k = self.p_E0, self.p_sy0, cycle
        inc = self.step * (k // self.period)
        # rounding keeps 1.0 + 20 * 0.1 from landing just above 3.0
        return (min(self.p_E_cap, round(e0 + inc, 10)), min(self.p_sy_cap, round(s0 + inc, 10)))

    def beta(self, cycle: int) -> float:
        beta = self.beta0
        for b in range(self.beta_period, cycle + 1, self.beta_period):
            if self.penalties(b - 1)[0] >= self.beta_gate - _TOL:
                beta = min(self.beta_cap, beta * self.beta_factor)
        return beta

    def state(self, cycle: int) -> ScheduleState:
        p_E, p_sy = self.penalties(cycle)
        return ScheduleState(p_E, p_sy, self.beta(cycle))

    def settled(self, cycle: int) -> bool:
        """True once every continued parameter has stopped changing."""
        s = self.state(cycle)
        return (s.p_E >= self.p_E_cap - _TOL and s.p_sy >= self.p_sy_cap - _TOL
                and s.beta >= self.beta_cap * (1 - _TOL))

    def compressed(self, factor: float) -> "ContinuationSchedule":
        """Same schedule with periods and freeze window shortened by ``factor``."""
        return replace(self, period=max(1, round(self.period / factor)),
                       beta_period=max(1, round(self.beta_period / factor)),
                       freeze_cycles=round(self.freeze_cycles / factor))


@dataclass(frozen=True)
class ProblemVariant:
    """One of the three formulations.

    ``volume_fraction`` is g1* and ``plastic_budget`` g2*. The compliance
    bound is used only by the minimum-volume formulation.
    """

    kind: str
    volume_fraction: float = 0.35
    plastic_budget: float = 1e-4
    compliance_bound: float | None = None

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown problem variant {self.kind!r}")
        if not 0.0 < self.volume_fraction <= 1.0:
            raise ValueError("volume_fraction must lie in (0, 1]")
        if self.plastic_budget < 0:
            raise ValueError("plastic_budget must be nonnegative")
        if self.kind == "min_volume_compliance_plastic" and not self.compliance_bound:
            raise ValueError("minimum-volume runs need a positive compliance_bound")

    @property
    def constrains_plasticity(self) -> bool:
        return self.kind != "max_end_compliance_vol"

    @property
    def constraint_names(self):
        if self.kind == "max_end_compliance_vol":
            return ("volume",)
        if self.kind == "max_end_compliance_vol_plastic":
            return ("volume", "plastic_strain")
        return ("compliance", "plastic_strain")

    def initial_density(self) -> float:
        return 1.0 if self.kind == "min_volume_compliance_plastic" else self.volume_fraction


@dataclass
class DesignEvaluation:
    field: DensityField
    schedule: ScheduleState
    objective: float
    d_objective: np.ndarray
    constraints: np.ndarray
    d_constraints: np.ndarray
    end_compliance: float
    plastic_strain_sum: float
    volume_fraction: float
    volume_residual: float  # (sum v x̄) / (g1* V) - 1 for every formulation
    model: FEModel
    history: AnalysisHistory


class DesignEvaluationError(RuntimeError):
    pass


class OptimizationAborted(RuntimeError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class OptimizationConfig:
    max_cycles: int = 500
    schedule: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    objective_scale: float = 1e5
    change_tol: float = 1e-3
    max_failures: int = 5
    radius: float = 0.02
    eta: float = 0.5
    solver: SolverOptions = field(default_factory=SolverOptions)
    mma: MmaOptions = field(default_factory=MmaOptions)


@dataclass
class CycleRecord:
    cycle: int
    objective: float
    g1: float
    g2: float
    p_E: float
    p_sy: float
    beta: float
    change: float
    end_compliance: float
    plastic_strain_sum: float
    volume_fraction: float
    increments: int
    move: float
    retries: int

    FIELDS = ("cycle", "objective", "g1", "g2", "p_E", "p_sy", "beta", "change",
              "end_compliance", "plastic_strain_sum", "volume_fraction", "increments",
              "move", "retries")

    def row(self):
        return [getattr(self, k) for k in self.FIELDS]


@dataclass
class OptimizationResult:
    x: np.ndarray
    evaluation: DesignEvaluation | None
    records: list
    status: str
    audit: list = field(default_factory=list)  # (cycle, max |dx|, move used, min x, max x)

    @property
    def field(self) -> DensityField:
        return self.evaluation.field

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CycleRecord.FIELDS)
            for r in self.records:
                w.writerow(r.row())


class DesignProblem:
    """Binds geometry, material and formulation to evaluate designs."""

    def __init__(self, mesh: Mesh, bc: BoundarySpec, mat: MaterialParams,
                 variant: ProblemVariant, config: OptimizationConfig | None = None):
        self.mesh = mesh
        self.bc = bc
        self.mat = mat
        self.variant = variant
        self.config = config or OptimizationConfig()
        self.param = Parametrization(mesh, self.config.radius, self.config.eta)
        self.total_volume = mesh.n_elements * mesh.element_volume

    def evaluate(self, x, state: ScheduleState) -> DesignEvaluation:
        cfg = self.config
        var = self.variant
        fld = self.param.forward(x, state.beta)
        mat = self.mat.with_penalty(state.p_E, state.p_sy)
        try:
            model, hist = run_analysis(self.mesh, self.bc, fld.xbar, mat, "auto", cfg.solver)
            specs = [FunctionalSpec("end_compliance"), FunctionalSpec("plastic_strain_sum")]
            dg = sensitivities(model, hist, specs)
        except (AnalysisFailure, AdjointFailure) as exc:
            raise DesignEvaluationError(str(exc)) from exc
        g_ec = evaluate(model, hist, specs[0])
        kappa = evaluate(model, hist, specs[1])
        vol = self.mesh.element_volume * float(fld.xbar.sum()) / self.total_volume
        dvol = np.full(self.mesh.n_elements, self.mesh.element_volume / self.total_volume)
        vres = vol / var.volume_fraction - 1.0
        cons, dcons = [], []
        if var.kind == "min_volume_compliance_plastic":
            obj, dobj = vol, dvol
            c_star = var.compliance_bound
            # -g_ec is the end-compliance; require it to reach the bound
            cons.append(1.0 + g_ec / c_star)
            dcons.append(dg[0] / c_star)
        else:
            obj, dobj = cfg.objective_scale * g_ec, cfg.objective_scale * dg[0]
            cons.append(vres)
            dcons.append(dvol / var.volume_fraction)
        if var.constrains_plasticity:
            cons.append(kappa - var.plastic_budget)
            dcons.append(dg[1])
        chain = self.param.chain_rule
        ev = DesignEvaluation(
            field=fld, schedule=state, objective=float(obj), d_objective=chain(dobj, fld),
            constraints=np.array(cons), d_constraints=np.array([chain(d, fld) for d in dcons]),
            end_compliance=-g_ec, plastic_strain_sum=kappa, volume_fraction=vol,
            volume_residual=vres, model=model, history=hist)
        return ev


def optimize(problem: DesignProblem, x0=None, log_path=None, callback=None) -> OptimizationResult:
    """Run the design loop.

    Each cycle evaluates the current design under the schedule state of that
    cycle and takes one MMA step. A failed evaluation of the new design is
    retried from the previous design with the move limit halved.
    """
    cfg = problem.config
    n = problem.mesh.n_elements
    x = np.full(n, problem.variant.initial_density()) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (n,) or np.any(x < 0) or np.any(x > 1):
        raise ValueError("initial design must have one value in [0, 1] per element")
    mma = MmaState.box(n, options=cfg.mma)
    records: list[CycleRecord] = []
    audit = []
    result = OptimizationResult(x=x, evaluation=None, records=records, status="running",
                                audit=audit)
    try:
        ev = problem.evaluate(x, cfg.schedule.state(0))
    except DesignEvaluationError as exc:
        result.status = "aborted"
        raise OptimizationAborted(f"initial design could not be analysed: {exc}", result) from exc

    status = "max_cycles"
    for k in range(cfg.max_cycles):
        move = cfg.mma.move
        retries = 0
        while True:
            trial = copy.deepcopy(mma)
            trial.options = replace(cfg.mma, move=move)
            x_new = mma_update(x, ev.objective, ev.d_objective, ev.constraints,
                               ev.d_constraints, trial)
            audit.append((k, float(np.abs(x_new - x).max()), move, float(x_new.min()),
                          float(x_new.max())))
            try:
                ev_new = problem.evaluate(x_new, cfg.schedule.state(k + 1))
                break
            except DesignEvaluationError as exc:
                retries += 1
                log.warning("cycle %d: evaluation failed (%s); retrying with move %.3g",
                            k, exc, 0.5 * move)
                if retries > cfg.max_failures:
                    result.x, result.evaluation, result.status = x, ev, "aborted"
                    if log_path:
                        result.write_log(log_path)
                    raise OptimizationAborted(
                        f"{retries} consecutive evaluation failures at cycle {k}", result) from exc
                move *= 0.5
        trial.options = cfg.mma
        mma = trial
        change = float(np.abs(x_new - x).max())
        rec = _record(k, ev, problem.variant, change, move, retries)
        records.append(rec)
        log.info("cycle %d obj=%.6e g=%s p_E=%.2f p_sy=%.2f beta=%.3f change=%.3e", k,
                 ev.objective, np.array2string(ev.constraints, precision=4), rec.p_E, rec.p_sy,
                 rec.beta, change)
        if callback is not None:
            callback(rec, ev)
        x, ev = x_new, ev_new
        if change < cfg.change_tol and cfg.schedule.settled(k):
            status = "converged"
            break
    result.x, result.evaluation, result.status = x, ev, status
    records.append(_record(len(records), ev, problem.variant, 0.0, 0.0, 0))
    if log_path:
        result.write_log(log_path)
    return result


def _record(k, ev: DesignEvaluation, var: ProblemVariant, change, move, retries):
    g = ev.constraints
    s = ev.schedule
    if var.kind == "min_volume_compliance_plastic":
        g1, g2 = ev.volume_residual, g[1]
    else:
        g1 = g[0]
        g2 = g[1] if len(g) > 1 else ev.plastic_strain_sum - var.plastic_budget
    return CycleRecord(cycle=k, objective=ev.objective, g1=float(g1), g2=float(g2), p_E=s.p_E,
                       p_sy=s.p_sy, beta=s.beta, change=change,
                       end_compliance=ev.end_compliance,
                       plastic_strain_sum=ev.plastic_strain_sum,
                       volume_fraction=ev.volume_fraction, increments=ev.history.N, move=move,
                       retries=retries)


def scaled_plastic_budget(budget: float, n_gauss: int, reference_gauss: int = 4 * 14400) -> float:
    """Scale a plastic-strain budget from the reference mesh to ``n_gauss`` points."""
    return budget * n_gauss / reference_gauss

