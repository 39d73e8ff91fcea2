"""Closed-loop rollouts and the RMSE / Energy Error metrics."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError
from .model import ModelConfig, ModelParameters, predict_step
from .physics import LAYOUTS, ParticleState, SystemSpec, Trajectory, hamiltonian


def rollout(x1: ParticleState, params: ModelParameters, cfg: ModelConfig, T: int, dt_effective: float = 1.0) -> Trajectory:
    """Feed each prediction back in for ``T - 1`` steps.

    A non-finite prediction (or a degenerate graph) stops the rollout; the
    returned trajectory holds the finite prefix and ``diverged_at`` is the
    index of the first state that could not be produced.
    """
    if T < 2:
        raise ValueError(f"rollout needs T >= 2, got {T}")
    states = [x1.features]
    state = x1
    diverged = None
    for t in range(1, T):
        try:
            state = predict_step(state, params, cfg)
        except (NonFiniteError, ValueError, ZeroDivisionError):
            diverged = t
            break
        states.append(state.features)
    return Trajectory(x1.system, np.stack(states), dt_effective, diverged_at=diverged)


def constant_velocity_baseline(x1: ParticleState, T: int, dt_effective: float) -> Trajectory:
    """Positions advance by ``dt_effective * v_1`` per stamp; everything else frozen."""
    if T < 2:
        raise ValueError(f"baseline needs T >= 2, got {T}")
    lay = x1.layout
    c = slice(lay.coords[0], lay.coords[1] + 1)
    states = np.repeat(x1.features[None], T, axis=0)
    steps = np.arange(T, dtype=np.float64)[:, None, None]
    states[:, :, c] = x1.positions[None] + steps * (dt_effective * x1.velocities[None])
    return Trajectory(x1.system, states, dt_effective)


def _coords(traj: Trajectory) -> np.ndarray:
    c = LAYOUTS[traj.system].coords
    return traj.states[:, :, c[0] : c[1] + 1]


def squared_errors(predicted: list[Trajectory], truth: list[Trajectory]) -> list[float]:
    """Per-trajectory ``sum_{t>=2} ||X^c_t - Xhat^c_t||_F^2`` over the predicted prefix."""
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predicted vs {len(truth)} ground-truth trajectories")
    out = []
    for i, (p, g) in enumerate(zip(predicted, truth)):
        if p.n != g.n or len(p) > len(g) or (p.diverged_at is None and len(p) != len(g)):
            raise ValueError(f"trajectory {i}: predicted shape {p.states.shape} vs truth {g.states.shape}")
        diff = _coords(g)[1 : len(p)] - _coords(p)[1:]
        out.append(float(np.sum(diff * diff)))
    return out


def rmse(predicted: list[Trajectory], truth: list[Trajectory]) -> float:
    """Square root of the mean (over trajectories) summed squared coordinate error."""
    errs = squared_errors(predicted, truth)
    return math.sqrt(sum(errs) / len(errs))


def energy_errors(predicted: list[Trajectory], truth: list[Trajectory], spec: SystemSpec) -> list[float]:
    """Per-trajectory ``|H_1 - Hhat_T| / |H_1|`` (true first state vs predicted last state)."""
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predicted vs {len(truth)} ground-truth trajectories")
    out = []
    for i, (p, g) in enumerate(zip(predicted, truth)):
        h1 = hamiltonian(g[0], spec)
        if h1 == 0.0:
            raise ZeroDivisionError(f"trajectory {i}: initial Hamiltonian is zero")
        out.append(abs(h1 - hamiltonian(p[len(p) - 1], spec)) / abs(h1))
    return out


def energy_error(predicted: list[Trajectory], truth: list[Trajectory], spec: SystemSpec) -> float:
    errs = energy_errors(predicted, truth, spec)
    return sum(errs) / len(errs)


@dataclass
class TrajectoryResult:
    index: int
    squared_error: float
    energy_error: float
    steps: int
    diverged_at: int | None = None


@dataclass
class EvalReport:
    rmse: float
    energy_error: float
    trajectories: list[TrajectoryResult]
    config: dict = field(default_factory=dict)

    @property
    def diverged(self) -> int:
        return sum(r.diverged_at is not None for r in self.trajectories)

    @classmethod
    def from_results(cls, results: list[TrajectoryResult], config: dict) -> "EvalReport":
        n = len(results)
        return cls(
            rmse=math.sqrt(sum(r.squared_error for r in results) / n),
            energy_error=sum(r.energy_error for r in results) / n,
            trajectories=results,
            config=config,
        )

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "energy_error": self.energy_error,
            "n_trajectories": len(self.trajectories),
            "diverged": self.diverged,
            "config": self.config,
            "trajectories": [vars(r) for r in self.trajectories],
        }


def rollout_all(
    test: list[Trajectory], params: ModelParameters, cfg: ModelConfig, workers: int = 1
) -> list[Trajectory]:
    def one(traj):
        return rollout(traj[0], params, cfg, len(traj), traj.dt_effective)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, test))
    return [one(t) for t in test]


def evaluate(
    test: list[Trajectory],
    params: ModelParameters,
    cfg: ModelConfig,
    spec: SystemSpec,
    config: dict | None = None,
    workers: int = 1,
) -> EvalReport:
    """Roll out every test trajectory from its first state and score it."""
    preds = rollout_all(test, params, cfg, workers)
    sq = squared_errors(preds, test)
    en = energy_errors(preds, test, spec)
    results = [
        TrajectoryResult(i, s, e, len(p) - 1, p.diverged_at)
        for i, (p, s, e) in enumerate(zip(preds, sq, en))
    ]
    return EvalReport.from_results(results, dict(config or {}))
