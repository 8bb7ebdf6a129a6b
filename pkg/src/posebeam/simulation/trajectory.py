import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

DEFAULT_SNAPSHOTS = 250
DEFAULT_STEP_S = 0.02


class PoseState(enum.IntEnum):
    STILL = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2

    @property
    def direction(self) -> int:
        return {PoseState.STILL: 0, PoseState.TURN_LEFT: 1, PoseState.TURN_RIGHT: -1}[self]


def _default_transitions() -> np.ndarray:
    stay, move = 0.95, 0.025
    return np.array([[stay, move, move], [move, stay, move], [move, move, stay]])


@dataclass(frozen=True)
class PoseMarkovModel:
    """
    Three-state head-turn model.

    ``transition_matrix`` is row-stochastic and applies once per ``step_s``
    seconds. Turning speed is drawn uniformly from ``speed_range_rad_s`` every
    time a turn starts.
    """
    transition_matrix: np.ndarray = field(default_factory=_default_transitions)
    speed_range_rad_s: tuple[float, float] = (0.5, 2.5)
    initial_probs: tuple[float, float, float] = (0.6, 0.2, 0.2)
    step_s: float = DEFAULT_STEP_S

    def __post_init__(self):
        matrix = np.asarray(self.transition_matrix, dtype=np.float64)
        if matrix.shape != (3, 3):
            raise ValueError(f"transition matrix must be 3x3, got {matrix.shape}")
        if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition matrix rows must be non-negative and sum to 1")
        init = np.asarray(self.initial_probs, dtype=np.float64)
        if init.shape != (3,) or np.any(init < 0) or not np.isclose(init.sum(), 1.0, atol=1e-9):
            raise ValueError(f"initial probabilities must be 3 non-negative values summing to 1, got {self.initial_probs}")
        lo, hi = self.speed_range_rad_s
        if lo < 0 or hi < lo:
            raise ValueError(f"speed range must satisfy 0 <= lo <= hi, got {self.speed_range_rad_s}")
        if self.step_s <= 0:
            raise ValueError(f"step_s must be positive, got {self.step_s}")
        object.__setattr__(self, "transition_matrix", matrix)
        object.__setattr__(self, "speed_range_rad_s", (float(lo), float(hi)))
        object.__setattr__(self, "initial_probs", tuple(float(p) for p in init))

    def transitions_for(self, dt_s: float) -> np.ndarray:
        """Transition matrix for a snapshot spacing other than ``step_s``."""
        ratio = dt_s / self.step_s
        if np.isclose(ratio, round(ratio)) and round(ratio) >= 1:
            return np.linalg.matrix_power(self.transition_matrix, int(round(ratio)))
        scaled = np.real(linalg.fractional_matrix_power(self.transition_matrix, ratio))
        scaled = np.clip(scaled, 0.0, None)
        return scaled / scaled.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PoseTrajectory:
    """Array yaw at R snapshots evenly spread over the scene."""
    yaw_rad: np.ndarray
    duration_s: float

    def __post_init__(self):
        yaw = np.atleast_1d(np.asarray(self.yaw_rad, dtype=np.float64))
        if yaw.ndim != 1 or len(yaw) < 1:
            raise ValueError("trajectory needs at least one snapshot")
        if not np.all(np.isfinite(yaw)):
            raise ValueError("trajectory contains non-finite yaw")
        if self.duration_s <= 0:
            raise ValueError(f"duration must be positive, got {self.duration_s}")
        object.__setattr__(self, "yaw_rad", yaw)

    @classmethod
    def static(cls, yaw_rad: float, duration_s: float, num_snapshots: int = 1) -> "PoseTrajectory":
        return cls(np.full(num_snapshots, float(yaw_rad)), duration_s)

    @property
    def num_snapshots(self) -> int:
        return len(self.yaw_rad)

    @property
    def is_static(self) -> bool:
        return bool(np.all(self.yaw_rad == self.yaw_rad[0]))

    @property
    def yaw_range_rad(self) -> float:
        return float(self.yaw_rad.max() - self.yaw_rad.min())

    def to_dict(self) -> dict:
        return {"duration-s": self.duration_s, "yaw-rad": [float(y) for y in self.yaw_rad]}

    @classmethod
    def from_dict(cls, data: dict) -> "PoseTrajectory":
        return cls(np.asarray(data["yaw-rad"], dtype=np.float64), float(data["duration-s"]))


def sample_trajectory(model: PoseMarkovModel, duration_s: float, num_snapshots: int = DEFAULT_SNAPSHOTS,
                      rng_seed=None, initial_yaw_rad: float | None = None) -> PoseTrajectory:
    """
    Samples a yaw trajectory from the Markov pose model.

    Yaw integrates the current state's direction times its speed over the
    snapshot spacing, so it is continuous. The same seed yields the same
    trajectory bit for bit.
    """
    if num_snapshots < 1:
        raise ValueError(f"num_snapshots must be >= 1, got {num_snapshots}")
    rng = np.random.default_rng(rng_seed)
    dt = duration_s / num_snapshots
    transitions = model.transitions_for(dt)
    lo, hi = model.speed_range_rad_s

    yaw = np.empty(num_snapshots)
    yaw[0] = rng.uniform(0.0, 2.0 * np.pi) if initial_yaw_rad is None else initial_yaw_rad
    state = PoseState(int(rng.choice(3, p=model.initial_probs)))
    speed = rng.uniform(lo, hi)
    for r in range(1, num_snapshots):
        previous = state
        state = PoseState(int(rng.choice(3, p=transitions[state])))
        if state != previous and state != PoseState.STILL:
            speed = rng.uniform(lo, hi)
        yaw[r] = yaw[r - 1] + state.direction * speed * dt

    trajectory = PoseTrajectory(yaw, duration_s)
    logger.debug(f"Sampled trajectory: {num_snapshots} snapshots, yaw range {trajectory.yaw_range_rad:.3f} rad")
    return trajectory
