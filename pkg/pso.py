# pso.py - bound-constrained particle swarm with counter-based random draws
import logging
import math
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, TextIO

import numpy as np

from config import SWARM_CONFIG

logger = logging.getLogger(__name__)

ProgressSink = Callable[[int, float, float], None]


@dataclass(frozen=True)
class SwarmConfig:
    swarm_size: int = SWARM_CONFIG["swarm_size"]
    iterations: int = SWARM_CONFIG["iterations"]
    w_start: float = SWARM_CONFIG["w_start"]
    w_end: float = SWARM_CONFIG["w_end"]
    c1: float = SWARM_CONFIG["c1"]
    c2: float = SWARM_CONFIG["c2"]
    v_max_fraction: float = SWARM_CONFIG["v_max_fraction"]
    seed: int = SWARM_CONFIG["seed"]
    stagnation_window: int = SWARM_CONFIG["stagnation_window"]  # 0 disables early stop

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError(f"swarm_size must be >= 2, got {self.swarm_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 < self.v_max_fraction <= 1:
            raise ValueError(f"v_max_fraction must lie in (0, 1], got {self.v_max_fraction}")
        if self.stagnation_window < 0:
            raise ValueError("stagnation_window must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    def inertia(self, iteration: int) -> float:
        """Linear schedule from w_start at iteration 1 to w_end at the last iteration"""
        if self.iterations == 1:
            return self.w_start
        t = (iteration - 1) / (self.iterations - 1)
        return self.w_start + (self.w_end - self.w_start) * t


@dataclass
class SwarmState:
    positions: np.ndarray  # (G, n)
    velocities: np.ndarray
    pbest_positions: np.ndarray
    pbest_costs: np.ndarray  # (G,)
    gbest_position: np.ndarray  # (n,)
    gbest_cost: float
    lower: np.ndarray
    upper: np.ndarray
    seed: int
    iteration: int = 0
    evaluations: int = 0


@dataclass
class OptimizationResult:
    best_position: np.ndarray
    best_cost: float
    history: List[float]  # best cost after each iteration
    initial_cost: float
    iterations: int
    evaluations: int
    stopped_early: bool
    elapsed_s: float
    seed: int = 0


def _draws(seed: int, particle: int, iteration: int, n: int) -> np.ndarray:
    """2n uniforms on [0, 1) owned by one (particle, iteration) pair"""
    bit_gen = np.random.Philox(key=seed, counter=[0, particle, iteration, 0])
    return np.random.Generator(bit_gen).random(2 * n)


def reflect_into_bounds(x: np.ndarray, v: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Mirror positions into [lower, upper]; velocity flips sign on an odd number of bounces"""
    width = upper - lower
    bounces = np.floor((x - lower) / width)
    offset = x - lower - bounces * width
    odd = np.mod(bounces, 2) != 0
    outside = (x < lower) | (x > upper)
    mirrored = np.where(odd, upper - offset, lower + offset)
    # offset is in [0, width) so the fold lands inside; the clip only absorbs float round-off
    x_new = np.clip(np.where(outside, mirrored, x), lower, upper)
    v_new = np.where(outside & odd, -v, v)
    return x_new, v_new


def _evaluate_all(
    evaluate: Callable[[np.ndarray], float], positions: np.ndarray, executor: Optional[Executor]
) -> np.ndarray:
    rows = [positions[i].copy() for i in range(positions.shape[0])]
    # map() preserves particle order, so results never depend on scheduling
    costs = list(executor.map(evaluate, rows)) if executor else [evaluate(r) for r in rows]
    costs = np.array(costs, dtype=float)
    return np.where(np.isnan(costs), math.inf, costs)


def initialize(
    evaluate: Callable[[np.ndarray], float],
    lower: np.ndarray,
    upper: np.ndarray,
    config: SwarmConfig,
    executor: Optional[Executor] = None,
    initial: Optional[np.ndarray] = None,
) -> SwarmState:
    n = lower.size
    v_max = config.v_max_fraction * (upper - lower)
    positions = np.empty((config.swarm_size, n))
    velocities = np.empty((config.swarm_size, n))
    for i in range(config.swarm_size):
        r = _draws(config.seed, i, 0, n)
        positions[i] = lower + r[:n] * (upper - lower)
        velocities[i] = (2.0 * r[n:] - 1.0) * v_max
    if initial is not None:
        positions[0] = np.clip(np.asarray(initial, dtype=float), lower, upper)

    costs = _evaluate_all(evaluate, positions, executor)
    g = int(np.argmin(costs))
    state = SwarmState(
        positions=positions,
        velocities=velocities,
        pbest_positions=positions.copy(),
        pbest_costs=costs.copy(),
        gbest_position=positions[g].copy(),
        gbest_cost=float(costs[g]),
        lower=lower,
        upper=upper,
        seed=config.seed,
        evaluations=config.swarm_size,
    )
    return state


def step(
    state: SwarmState,
    config: SwarmConfig,
    evaluate: Callable[[np.ndarray], float],
    executor: Optional[Executor] = None,
) -> SwarmState:
    """One velocity/position update, evaluation and best-so-far reduction"""
    iteration = state.iteration + 1
    G, n = state.positions.shape
    w = config.inertia(iteration)
    v_max = config.v_max_fraction * (state.upper - state.lower)

    r = np.stack([_draws(state.seed, i, iteration, n) for i in range(G)])
    r1, r2 = r[:, :n], r[:, n:]
    velocities = (
        w * state.velocities
        + config.c1 * r1 * (state.pbest_positions - state.positions)
        + config.c2 * r2 * (state.gbest_position[None, :] - state.positions)
    )
    velocities = np.clip(velocities, -v_max, v_max)
    positions, velocities = reflect_into_bounds(
        state.positions + velocities, velocities, state.lower, state.upper
    )

    costs = _evaluate_all(evaluate, positions, executor)
    improved = costs < state.pbest_costs
    pbest_positions = np.where(improved[:, None], positions, state.pbest_positions)
    pbest_costs = np.where(improved, costs, state.pbest_costs)

    # fixed index order: argmin returns the lowest particle index on ties
    g = int(np.argmin(pbest_costs))
    if pbest_costs[g] < state.gbest_cost:
        gbest_position, gbest_cost = pbest_positions[g].copy(), float(pbest_costs[g])
    else:
        gbest_position, gbest_cost = state.gbest_position, state.gbest_cost

    return replace(
        state,
        positions=positions,
        velocities=velocities,
        pbest_positions=pbest_positions,
        pbest_costs=pbest_costs,
        gbest_position=gbest_position,
        gbest_cost=gbest_cost,
        iteration=iteration,
        evaluations=state.evaluations + G,
    )


def csv_progress_sink(stream: TextIO) -> ProgressSink:
    """Progress records as `iteration,best_cost,elapsed_s` lines"""

    def sink(iteration: int, best_cost: float, elapsed_s: float) -> None:
        stream.write(f"{iteration},{best_cost!r},{elapsed_s:.6f}\n")
        stream.flush()

    return sink


def _check_bounds(lower, upper):
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    if lower.shape != upper.shape or lower.size == 0:
        raise ValueError("lower and upper bounds must be non-empty and of equal length")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("bounds must be finite")
    if not np.all(lower < upper):
        raise ValueError("every dimension needs lower < upper")
    return lower, upper


def optimize(
    evaluate: Callable[[np.ndarray], float],
    lower,
    upper,
    config: SwarmConfig,
    progress: Optional[ProgressSink] = None,
    threads: int = 1,
    initial: Optional[np.ndarray] = None,
) -> OptimizationResult:
    """Minimize `evaluate` over the box; identical results for any thread count"""
    lower, upper = _check_bounds(lower, upper)
    start = time.time()
    logger.info(
        f"PSO start: {lower.size} dims, G={config.swarm_size}, S={config.iterations}, "
        f"seed={config.seed}, threads={threads}"
    )

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        state = initialize(evaluate, lower, upper, config, executor, initial)
        initial_cost = state.gbest_cost
        history: List[float] = []
        since_improvement = 0
        stopped_early = False

        for _ in range(config.iterations):
            previous = state.gbest_cost
            state = step(state, config, evaluate, executor)
            history.append(state.gbest_cost)
            since_improvement = 0 if state.gbest_cost < previous else since_improvement + 1

            elapsed = time.time() - start
            if progress is not None:
                progress(state.iteration, state.gbest_cost, elapsed)
            if state.iteration % 100 == 0:
                logger.debug(f"PSO iteration {state.iteration}: best={state.gbest_cost:.6e}")

            if config.stagnation_window and since_improvement >= config.stagnation_window:
                stopped_early = True
                logger.info(
                    f"PSO stopped at iteration {state.iteration}: no improvement in "
                    f"{config.stagnation_window} iterations"
                )
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    elapsed = time.time() - start
    logger.info(
        f"PSO done: best={state.gbest_cost:.6e} after {state.iteration} iterations, "
        f"{state.evaluations} evaluations, {elapsed:.2f}s"
    )
    return OptimizationResult(
        best_position=state.gbest_position.copy(),
        best_cost=state.gbest_cost,
        history=history,
        initial_cost=initial_cost,
        iterations=state.iteration,
        evaluations=state.evaluations,
        stopped_early=stopped_early,
        elapsed_s=elapsed,
        seed=config.seed,
    )
