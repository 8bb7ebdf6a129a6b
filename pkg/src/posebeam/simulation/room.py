"""
Shoebox room impulse responses by the image-source method.

Image positions follow the lattice construction of a rectangular room: for a
lattice index r and parity p per axis, the image coordinate is
(1 - 2p)(x + 2rL) and it has |r + p| + |r| wall reflections along that axis.
Every reflection scales the amplitude by one frequency-independent reflection
coefficient derived from the room's T60 with Sabine's formula.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..models.signals import DEFAULT_SAMPLE_RATE

logger = logging.getLogger(__name__)

SPEED_OF_SOUND_M_S = 343.0
MAX_REFLECTION_ORDER = 12
DIMS_RANGE_M = (4.0, 8.0)
T60_RANGE_S = (0.25, 0.75)


class SimulationError(ValueError):
    def __init__(self, details: str):
        self.details = details
        super().__init__(f"Invalid room simulation: {details}")


def _vec3(value, name: str) -> tuple[float, float, float]:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise SimulationError(f"{name} must be a finite 3-vector, got {value!r}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class RoomSpec:
    """
    Shoebox room with its sources and the array centre.

    ``absorption`` overrides the Sabine-derived wall absorption (1.0 gives a free
    field); ``max_order`` overrides the derived reflection order.
    """
    dims_m: tuple[float, float, float]
    t60_s: float
    source_positions_m: tuple[tuple[float, float, float], ...]
    array_center_m: tuple[float, float, float]
    absorption: float | None = None
    max_order: int | None = None

    def __post_init__(self):
        dims = _vec3(self.dims_m, "dims_m")
        object.__setattr__(self, "dims_m", dims)
        object.__setattr__(self, "array_center_m", _vec3(self.array_center_m, "array_center_m"))
        object.__setattr__(self, "source_positions_m",
                           tuple(_vec3(p, f"source {i}") for i, p in enumerate(self.source_positions_m)))

        lo, hi = DIMS_RANGE_M
        if any(d < lo or d > hi for d in dims):
            raise SimulationError(f"room dimensions {dims} outside [{lo}, {hi}] m")
        lo, hi = T60_RANGE_S
        if not lo <= self.t60_s <= hi:
            raise SimulationError(f"T60 {self.t60_s} s outside [{lo}, {hi}] s")
        if self.absorption is not None and not 0.0 <= self.absorption <= 1.0:
            raise SimulationError(f"absorption {self.absorption} outside [0, 1]")
        if self.max_order is not None and self.max_order < 0:
            raise SimulationError(f"max_order must be non-negative, got {self.max_order}")
        if not self.source_positions_m:
            raise SimulationError("room has no sources")
        for i, p in enumerate(self.source_positions_m):
            if not self.contains(p):
                raise SimulationError(f"source {i} at {p} is not strictly inside the room {dims}")
        if not self.contains(self.array_center_m):
            raise SimulationError(f"array centre {self.array_center_m} is not strictly inside the room {dims}")

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p > 0.0) and np.all(p < np.asarray(self.dims_m)))

    @property
    def volume_m3(self) -> float:
        x, y, z = self.dims_m
        return x * y * z

    @property
    def surface_m2(self) -> float:
        x, y, z = self.dims_m
        return 2.0 * (x * y + y * z + x * z)

    def reflection_order(self) -> int:
        if self.max_order is not None:
            return self.max_order
        if self.absorption == 1.0:
            return 0
        order = math.ceil(self.t60_s * SPEED_OF_SOUND_M_S / min(self.dims_m))
        return min(order, MAX_REFLECTION_ORDER)

    def reflection_coefficient(self) -> float:
        """Pressure amplitude kept per wall reflection."""
        if self.absorption is not None:
            return math.sqrt(1.0 - self.absorption)
        return math.exp(-0.5 * sabine_absorption(self.dims_m, self.t60_s))

    def num_taps(self, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> int:
        if self.absorption == 1.0 or self.reflection_order() == 0:
            # Free field: long enough for the furthest direct path.
            return int(math.ceil(math.dist((0, 0, 0), self.dims_m) / SPEED_OF_SOUND_M_S * sample_rate_hz)) + 1
        return int(math.ceil(self.t60_s * sample_rate_hz))

    def to_dict(self) -> dict:
        data = {
            "dims-m": list(self.dims_m),
            "t60-s": self.t60_s,
            "source-positions-m": [list(p) for p in self.source_positions_m],
            "array-center-m": list(self.array_center_m),
        }
        if self.absorption is not None:
            data["absorption"] = self.absorption
        if self.max_order is not None:
            data["max-order"] = self.max_order
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RoomSpec":
        try:
            return cls(dims_m=data["dims-m"], t60_s=float(data["t60-s"]),
                       source_positions_m=data["source-positions-m"],
                       array_center_m=data["array-center-m"],
                       absorption=data.get("absorption"), max_order=data.get("max-order"))
        except KeyError as e:
            raise SimulationError(f"room record is missing key {e}") from e


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone offsets [M, 3] from the array centre, in metres."""
    mic_offsets_m: np.ndarray = field(default_factory=lambda: circular_offsets(6, 0.07))

    def __post_init__(self):
        offsets = np.asarray(self.mic_offsets_m, dtype=np.float64)
        if offsets.ndim != 2 or offsets.shape[1] != 3 or offsets.shape[0] < 1:
            raise SimulationError(f"mic offsets must be [M, 3], got {offsets.shape}")
        object.__setattr__(self, "mic_offsets_m", offsets)

    @classmethod
    def circular(cls, num_mics: int = 6, diameter_m: float = 0.07) -> "ArrayGeometry":
        return cls(circular_offsets(num_mics, diameter_m))

    @property
    def num_mics(self) -> int:
        return self.mic_offsets_m.shape[0]

    def positions(self, center_m, yaw_rad: float) -> np.ndarray:
        """Absolute mic positions [M, 3] after rotating the array about the vertical axis."""
        c, s = math.cos(yaw_rad), math.sin(yaw_rad)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return np.asarray(center_m, dtype=np.float64) + self.mic_offsets_m @ rotation.T


def circular_offsets(num_mics: int, diameter_m: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_mics) / num_mics
    radius = diameter_m / 2.0
    return np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(num_mics)], axis=1)


def sabine_absorption(dims_m, t60_s: float, c: float = SPEED_OF_SOUND_M_S) -> float:
    """Mean wall absorption exponent reaching ``t60_s`` under Sabine's formula."""
    x, y, z = dims_m
    volume = x * y * z
    surface = 2.0 * (x * y + y * z + x * z)
    return 24.0 * math.log(10.0) * volume / (c * surface * t60_s)


def _image_sources(room: RoomSpec, source_pos: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Image positions [I, 3] and per-image reflection counts [I]."""
    lattice = np.array(list(itertools.product(range(-order, order + 1), repeat=3)), dtype=np.float64)
    parity = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.float64)
    dims = np.asarray(room.dims_m)

    r = np.repeat(lattice, len(parity), axis=0)
    p = np.tile(parity, (len(lattice), 1))
    positions = (1.0 - 2.0 * p) * (source_pos + 2.0 * r * dims)
    reflections = (np.abs(r + p) + np.abs(r)).sum(axis=1)
    return positions, reflections


def simulate_rirs(room: RoomSpec, geom: ArrayGeometry, yaws_rad, source_idx: int,
                  sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """
    Impulse responses [R, M, taps] of one source for every array yaw in ``yaws_rad``.

    Each distinct yaw is simulated once. Image delays are rounded to whole samples.

    Raises:
        SimulationError: unknown source or a microphone outside the room.
    """
    if not 0 <= source_idx < len(room.source_positions_m):
        raise SimulationError(f"source index {source_idx} out of range for {len(room.source_positions_m)} sources")

    yaws = np.atleast_1d(np.asarray(yaws_rad, dtype=np.float64))
    taps = room.num_taps(sample_rate_hz)
    beta = room.reflection_coefficient()
    order = room.reflection_order()

    images, reflections = _image_sources(room, np.asarray(room.source_positions_m[source_idx]), order)
    max_dist = taps * SPEED_OF_SOUND_M_S / sample_rate_hz + np.abs(geom.mic_offsets_m).max() * 2.0
    reach = np.linalg.norm(images - np.asarray(room.array_center_m), axis=1) <= max_dist
    images, reflections = images[reach], reflections[reach]
    gains = beta ** reflections
    logger.debug(f"Source {source_idx}: {len(images)} images at order {order}, beta={beta:.3f}, taps={taps}")

    unique_yaws, inverse = np.unique(yaws, return_inverse=True)
    unique_rirs = np.zeros((len(unique_yaws), geom.num_mics, taps))
    for u, yaw in enumerate(unique_yaws):
        mics = geom.positions(room.array_center_m, float(yaw))
        if not all(room.contains(m) for m in mics):
            raise SimulationError(f"microphone outside the room at yaw {yaw:.3f} rad")
        for m, mic in enumerate(mics):
            dist = np.linalg.norm(images - mic, axis=1)
            delay = np.rint(dist / SPEED_OF_SOUND_M_S * sample_rate_hz).astype(np.int64)
            valid = delay < taps
            amplitude = gains[valid] / (4.0 * np.pi * np.maximum(dist[valid], 1e-3))
            unique_rirs[u, m] = np.bincount(delay[valid], weights=amplitude, minlength=taps)
    return unique_rirs[inverse]


def simulate_rir(room: RoomSpec, geom: ArrayGeometry, yaw: float, source_idx: int,
                 sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Impulse responses [M, taps] of one source for a single array yaw."""
    return simulate_rirs(room, geom, [yaw], source_idx, sample_rate_hz)[0]


def direct_path_delay(room: RoomSpec, geom: ArrayGeometry, yaw: float, source_idx: int, mic: int = 0,
                      sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> int:
    """Whole-sample direct-path delay from a source to one microphone."""
    mic_pos = geom.positions(room.array_center_m, yaw)[mic]
    dist = math.dist(room.source_positions_m[source_idx], mic_pos)
    return int(round(dist / SPEED_OF_SOUND_M_S * sample_rate_hz))


def energy_decay_curve_db(rir: np.ndarray) -> np.ndarray:
    """Schroeder backward-integrated energy, normalised to 0 dB at t = 0."""
    energy = np.cumsum(np.asarray(rir, dtype=np.float64)[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def estimate_t60(rir: np.ndarray, sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
                 fit_range_db: tuple[float, float] = (-5.0, -25.0)) -> float:
    """
    Broadband T60 from a line fit to the decay curve, extrapolated to -60 dB.

    The fit starts at the direct path so propagation delay does not count as decay.
    """
    rir = np.asarray(rir, dtype=np.float64)
    onset = int(np.argmax(np.abs(rir)))
    edc = energy_decay_curve_db(rir[onset:])
    upper, lower = fit_range_db
    span = np.nonzero((edc <= upper) & (edc >= lower))[0]
    if len(span) < 2:
        raise SimulationError(f"decay curve never spans {upper} to {lower} dB")
    t = span / sample_rate_hz
    slope, _ = np.polyfit(t, edc[span], 1)
    if slope >= 0:
        raise SimulationError("decay curve does not decay")
    return float(-60.0 / slope)
