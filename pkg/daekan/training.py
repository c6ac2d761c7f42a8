"""Physics-informed loss over collocation points and the L-BFGS training loop."""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from daekan import autodiff as ad
from daekan.autodiff import ADScalar, ComputationRecord, GradientVector
from daekan.bsplines import SplineGrid
from daekan.config import TrainingConfig
from daekan.dae_systems import DaeSystem, StateSample, get_system, residual
from daekan.networks import SolverPair, init_kan, init_mlp
from daekan.optimizer import Evaluation, TerminationStatus, minimize_lbfgs
from error_tracking import NonFiniteForwardError, NonFiniteLossError, NonFiniteValueError
from logging_config import get_logger
from monitoring import monitoring

logger = get_logger(__name__)

_NON_FINITE = (NonFiniteValueError, NonFiniteForwardError)


@dataclass(frozen=True)
class CollocationSet:
    initial_times: np.ndarray     # (N_i,)
    initial_states: np.ndarray    # (N_i, n_u + n_z)
    residual_times: np.ndarray    # (N_F,) ascending

    @property
    def n_initial(self) -> int:
        return len(self.initial_times)

    @property
    def n_residual(self) -> int:
        return len(self.residual_times)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    mse_f: float
    mse_i: float


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    loss_total: float
    mse_f: float
    mse_i: float
    grad_norm: float


@dataclass
class TrainingTrace:
    rows: List[TraceRow]
    final_parameters: np.ndarray
    wall_time: float
    status: TerminationStatus
    iterations: int = 0
    evaluations: int = 0
    best_losses: List[float] = field(default_factory=list)
    line_search_fallbacks: int = 0

    @property
    def final_loss(self) -> Optional[float]:
        return self.rows[-1].loss_total if self.rows else None


def sample_collocation(config: TrainingConfig, system: DaeSystem) -> CollocationSet:
    """Equally spaced residual points on ``[0, t_end]`` and ``N_i`` copies of the initial state."""
    residual_times = np.linspace(0.0, config.t_end, config.n_collocation)
    if config.n_collocation == 1:
        residual_times = np.array([0.0])
    initial_states = np.tile(np.asarray(system.initial_state, dtype=np.float64), (config.n_initial, 1))
    return CollocationSet(np.zeros(config.n_initial), initial_states, residual_times)


def network_seeds(seed: int) -> Tuple[int, int]:
    """Independent seeds of the differential and algebraic networks."""
    children = np.random.SeedSequence(seed).spawn(2)
    return tuple(int(child.generate_state(1)[0]) for child in children)


def build_pair(config: TrainingConfig, system: DaeSystem) -> SolverPair:
    differential_seed, algebraic_seed = network_seeds(config.seed)
    if config.net_kind == "mlp":
        widths = (1,) + tuple(config.mlp_hidden) + (system.n_variables,)
        return SolverPair(init_mlp(widths, differential_seed), None, system.n_u, system.n_z)
    grid = config.grid
    input_grid = SplineGrid(0.0, config.t_end, grid.intervals, grid.order)
    hidden_grid = SplineGrid(grid.hidden_min, grid.hidden_max, grid.intervals, grid.order)
    return SolverPair(
        init_kan(config.differential_shape, input_grid, differential_seed, hidden_grid),
        init_kan(config.algebraic_shape, input_grid, algebraic_seed, hidden_grid),
        system.n_u,
        system.n_z,
    )


def _squared_residual(pair: SolverPair, system: DaeSystem, form: int, t: ADScalar,
                      params: Optional[Sequence] = None) -> ADScalar:
    u, z = pair.forward(t, params)
    du = [ad.tangent_of(value) for value in u]
    terms = residual(system, form, StateSample(t, u, du, z))
    return ad.ad_sum([term * term for term in terms])


def _first_non_finite_point(pair: SolverPair, system: DaeSystem, form: int, times: np.ndarray) -> int:
    for index, t in enumerate(times):
        try:
            value = _squared_residual(pair, system, form, ADScalar(float(t), 1.0))
        except _NON_FINITE:
            return index
        if not ad.is_finite(value.primal):
            return index
    return -1


def loss(pair: SolverPair, system: DaeSystem, form: int,
         colloc: CollocationSet) -> Tuple[LossBreakdown, GradientVector]:
    """``MSE_F + MSE_i`` and its gradient over the parameters of both networks.

    The residual term and the initial-value term live in separate records;
    their gradients are added in that order.
    """
    try:
        with ComputationRecord() as record:
            params = pair.bind(record)
            t = ad.seed_input(record, colloc.residual_times)
            mse_f = ad.batch_mean(_squared_residual(pair, system, form, t, params))
            gradient_f = ad.backward(record, mse_f)
    except _NON_FINITE as e:
        index = _first_non_finite_point(pair, system, form, colloc.residual_times)
        raise NonFiniteLossError(f"Residual loss is not finite: {e}", index) from e

    try:
        with ComputationRecord() as record:
            params = pair.bind(record)
            t = ad.seed_input(record, colloc.initial_times)
            u, z = pair.forward(t, params)
            predicted = list(u) + list(z)
            errors = [(value - colloc.initial_states[:, k]) ** 2 for k, value in enumerate(predicted)]
            mse_i = ad.batch_mean(ad.ad_sum(errors))
            gradient_i = ad.backward(record, mse_i)
    except _NON_FINITE as e:
        raise NonFiniteLossError(f"Initial-value loss is not finite: {e}", 0) from e

    mse_f_value = float(mse_f.primal)
    mse_i_value = float(mse_i.primal)
    breakdown = LossBreakdown(mse_f_value + mse_i_value, mse_f_value, mse_i_value)
    if not np.isfinite(breakdown.total):
        raise NonFiniteLossError("Total loss is not finite", -1)
    return breakdown, gradient_f + gradient_i


LossFunction = Callable[[SolverPair], Tuple[LossBreakdown, GradientVector]]


def make_loss_function(system: DaeSystem, form: int, colloc: CollocationSet) -> LossFunction:
    def evaluate(pair: SolverPair) -> Tuple[LossBreakdown, GradientVector]:
        return loss(pair, system, form, colloc)
    return evaluate


def lbfgs_minimize(pair: SolverPair, loss_fn: LossFunction, config: TrainingConfig) -> TrainingTrace:
    """Train ``pair`` in place; returns the trace with the final parameters."""
    started = time.perf_counter()

    def objective(x: np.ndarray) -> Evaluation:
        pair.load_parameters(x)
        tick = time.perf_counter()
        breakdown, gradient = loss_fn(pair)
        monitoring.record_loss_evaluation(time.perf_counter() - tick, breakdown.total)
        return Evaluation(breakdown.total, gradient.values, breakdown)

    initial = pair.parameters()
    result = minimize_lbfgs(objective, initial, config.lbfgs, config.epochs, config.eval_every)
    pair.load_parameters(result.x)

    rows = [
        TraceRow(snap.iteration, snap.details.total, snap.details.mse_f, snap.details.mse_i, snap.grad_norm)
        for snap in result.snapshots
    ]
    return TrainingTrace(
        rows=rows,
        final_parameters=result.x.copy(),
        wall_time=time.perf_counter() - started,
        status=result.status,
        iterations=result.iterations,
        evaluations=result.evaluations,
        best_losses=result.best_values,
        line_search_fallbacks=result.line_search_fallbacks,
    )


def train(config: TrainingConfig, system: Optional[DaeSystem] = None) -> Tuple[TrainingTrace, SolverPair]:
    """Initialise the networks, sample collocation points and run L-BFGS."""
    system = system or get_system(config.system)
    pair = build_pair(config, system)
    colloc = sample_collocation(config, system)
    monitoring.reset_optimizer()
    logger.info("Training started", extra={
        "run": config.run_name,
        "parameters": pair.parameter_count,
        "collocation_points": colloc.n_residual,
        "epochs": config.epochs,
    })
    trace = lbfgs_minimize(pair, make_loss_function(system, config.index_form, colloc), config)
    logger.info("Training finished", extra={
        "run": config.run_name,
        "status": trace.status.value,
        "iterations": trace.iterations,
        "final_loss": trace.final_loss,
        "wall_time_seconds": round(trace.wall_time, 3),
    })
    return trace, pair
