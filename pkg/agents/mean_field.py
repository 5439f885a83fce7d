"""
Mean-field machinery

- neighbor action averaging and the neighbor mean used by the ME branch
- the MF-Q action estimate (own observation + mean previous neighbor action)
- a numerical check of the second-order Taylor remainder dropped by the
  mean-field approximation
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from comm.topology import AgentTopology
from errors import ConfigurationError, RemainderBoundViolation

logger = logging.getLogger(__name__)


@dataclass
class MeanAction:
    """Average of neighbor one-hot actions; `isolated` marks the uniform fallback"""
    values: np.ndarray
    isolated: bool = False


def one_hot(action: int, num_actions: int) -> np.ndarray:
    if not 0 <= action < num_actions:
        raise ConfigurationError(f"Action {action} outside [0, {num_actions})")
    vector = np.zeros(num_actions, dtype=np.float64)
    vector[action] = 1.0
    return vector


def mean_action(neighbor_actions: Sequence[np.ndarray], num_actions: Optional[int] = None) -> MeanAction:
    """
    Elementwise mean of neighbor one-hot actions.

    An empty neighbor list yields the uniform distribution flagged as
    isolated; `num_actions` is required in that case.
    """
    if len(neighbor_actions) == 0:
        if num_actions is None:
            raise ConfigurationError("num_actions is required to build the mean action of an isolated agent")
        return MeanAction(values=np.full(num_actions, 1.0 / num_actions), isolated=True)

    stacked = np.asarray(neighbor_actions, dtype=np.float64)
    if stacked.ndim != 2:
        raise ConfigurationError(f"Neighbor actions must be equal-length vectors, got shape {stacked.shape}")
    if num_actions is not None and stacked.shape[1] != num_actions:
        raise ConfigurationError(f"Expected actions of length {num_actions}, got {stacked.shape[1]}")
    is_one_hot = np.all((stacked == 0.0) | (stacked == 1.0), axis=1) & (stacked.sum(axis=1) == 1.0)
    if not np.all(is_one_hot):
        raise ConfigurationError("Neighbor actions must be one-hot vectors")
    return MeanAction(values=stacked.mean(axis=0))


def neighbor_mean(topology: AgentTopology, values: np.ndarray) -> np.ndarray:
    """
    Average of neighbors' vectors for every agent.

    Args:
        values: [N, D] or [B, N, D]

    Returns:
        Same shape; isolated agents get the zero vector
    """
    matrix = topology.neighbor_mean_matrix()
    return np.einsum("ij,...jd->...id", matrix, np.asarray(values, dtype=np.float64))


def neighbor_mean_actions(topology: AgentTopology, actions: np.ndarray, num_actions: int) -> np.ndarray:
    """
    Mean of neighbors' one-hot actions for every agent.

    Args:
        actions: [N] or [B, N] integer actions; -1 marks "no action yet"
            (the start of an episode) and contributes the zero vector

    Returns:
        [..., N, num_actions]; isolated agents get the uniform vector
    """
    actions = np.asarray(actions, dtype=np.int64)
    encoded = np.zeros(actions.shape + (num_actions,), dtype=np.float64)
    valid = actions >= 0
    encoded[valid, actions[valid]] = 1.0
    means = neighbor_mean(topology, encoded)
    isolated = topology.isolated_agents()
    if isolated:
        means[..., isolated, :] = 1.0 / num_actions
    return means


def mfq_estimate_action(
    q_head: Callable[[np.ndarray, np.ndarray], np.ndarray],
    observation: np.ndarray,
    prev_neighbor_actions: Optional[Sequence[np.ndarray]],
    num_actions: int,
) -> int:
    """
    MF-Q estimate of an agent's current action.

    The Q-head receives the agent's own observation and the mean of its
    neighbors' previous one-hot actions; the estimate is the greedy action
    (lowest index on ties). Before any action has been taken
    (`prev_neighbor_actions` is None) the mean-action input is the zero vector.
    """
    if prev_neighbor_actions is None:
        mean = np.zeros(num_actions, dtype=np.float64)
    else:
        mean = mean_action(prev_neighbor_actions, num_actions).values
    q = np.asarray(q_head(np.asarray(observation, dtype=np.float64), mean), dtype=np.float64)
    if q.shape != (num_actions,):
        raise ConfigurationError(f"Q-head returned shape {q.shape}, expected ({num_actions},)")
    return int(np.argmax(q))


@dataclass
class QuadraticQ:
    """
    Quadratic pairwise Q over relaxed actions:

        Q(a) = c + g.a + 1/2 a.H.a

    H is symmetric with spectral norm <= m_smooth, so Q is m_smooth-smooth.
    """
    constant: float
    gradient: np.ndarray
    hessian: np.ndarray
    m_smooth: float

    @classmethod
    def random(cls, num_actions: int, m_smooth: float, rng: np.random.Generator) -> "QuadraticQ":
        raw = rng.normal(size=(num_actions, num_actions))
        sym = 0.5 * (raw + raw.T)
        norm = np.linalg.norm(sym, ord=2)
        scale = rng.uniform(0.1, 1.0) * m_smooth / norm if norm > 0 else 0.0
        return cls(
            constant=float(rng.normal()),
            gradient=rng.normal(size=num_actions),
            hessian=sym * scale,
            m_smooth=m_smooth,
        )

    @classmethod
    def linear(cls, num_actions: int, rng: np.random.Generator) -> "QuadraticQ":
        return cls(
            constant=float(rng.normal()),
            gradient=rng.normal(size=num_actions),
            hessian=np.zeros((num_actions, num_actions)),
            m_smooth=0.0,
        )

    @property
    def num_actions(self) -> int:
        return self.gradient.shape[0]

    def value(self, a: np.ndarray) -> float:
        return float(self.constant + self.gradient @ a + 0.5 * a @ self.hessian @ a)

    def grad(self, a: np.ndarray) -> np.ndarray:
        return self.gradient + self.hessian @ a


@dataclass
class RemainderReport:
    trials: int
    max_abs_remainder: float
    bound: float
    max_first_order: float
    max_taylor_error: float


def remainder_bound_check(
    q_fn: QuadraticQ,
    trials: int,
    rng: np.random.Generator,
    max_neighbors: int = 8,
    relaxed: bool = True,
    first_order_tol: float = 1e-12,
    taylor_tol: float = 1e-10,
) -> RemainderReport:
    """
    Check the mean-field expansion numerically on random neighborhoods.

    For each trial, neighbor actions a^k are drawn (simplex points when
    `relaxed`, otherwise one-hot corners) and split as a^k = mean + da^k.
    Verified per trial:
    - every remainder R_k = da^k.H.da^k satisfies |R_k| <= m_smooth*|da^k|^2 <= 2*m_smooth
    - the first-order term grad Q(mean) . sum_k da^k vanishes
    - mean_k Q(a^k) - Q(mean) == mean_k [grad Q(mean).da^k + R_k / 2]

    Raises RemainderBoundViolation with the offending configuration.
    """
    num_actions = q_fn.num_actions
    bound = 2.0 * q_fn.m_smooth
    report = RemainderReport(trials=trials, max_abs_remainder=0.0, bound=bound,
                             max_first_order=0.0, max_taylor_error=0.0)

    for trial in range(trials):
        count = int(rng.integers(1, max_neighbors + 1))
        if relaxed:
            actions = rng.dirichlet(np.ones(num_actions), size=count)
        else:
            actions = np.eye(num_actions)[rng.integers(0, num_actions, size=count)]
        mean = actions.mean(axis=0)
        deltas = actions - mean
        grad_at_mean = q_fn.grad(mean)

        remainders = np.einsum("ka,ab,kb->k", deltas, q_fn.hessian, deltas)
        squared_norms = np.einsum("ka,ka->k", deltas, deltas)
        first_order = float(grad_at_mean @ deltas.sum(axis=0))
        lhs = np.mean([q_fn.value(a) for a in actions]) - q_fn.value(mean)
        rhs = float(np.mean(deltas @ grad_at_mean + 0.5 * remainders))

        configuration = {"trial": trial, "actions": actions.tolist()}
        worst = float(np.max(np.abs(remainders)))
        slack = 1e-12 * max(1.0, q_fn.m_smooth)
        if np.any(np.abs(remainders) > q_fn.m_smooth * squared_norms + slack) or worst > bound + slack:
            raise RemainderBoundViolation(f"|R| = {worst} exceeds smoothness bound {bound}", configuration)
        if abs(first_order) > first_order_tol:
            raise RemainderBoundViolation(f"First-order term {first_order} does not vanish", configuration)
        if abs(lhs - rhs) > taylor_tol:
            raise RemainderBoundViolation(f"Taylor identity off by {abs(lhs - rhs)}", configuration)

        report.max_abs_remainder = max(report.max_abs_remainder, worst)
        report.max_first_order = max(report.max_first_order, abs(first_order))
        report.max_taylor_error = max(report.max_taylor_error, abs(lhs - rhs))

    logger.debug(f"Remainder check: {trials} trials, max |R| {report.max_abs_remainder:.3e} <= {bound:.3e}")
    return report
