"""Synthetic multipath channel model.

Synthesizes complex channel transfer function (CTF) sweeps as a superposition
of multipath components, and derives the frequency coherence function (FCF,
the complex autocorrelation of the CTF across frequency shifts) and the
wideband received signal strength (RSS) from them.

All operations are pure functions of their inputs; randomness enters only
through explicit integer seeds, hashed with a fixed-width digest so streams
are reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

TWO_PI = 2.0 * math.pi

#: dB value reported for an all-zero sweep instead of -inf.
DEFAULT_RSS_FLOOR_DB = -150.0

#: Side length (cm) of the spatial cell within which realizations share their
#: large-scale structure (path count, delays, amplitudes). Positions inside
#: one cell differ only through their per-position phase draws.
DEFAULT_STRUCTURE_CELL_CM = 100.0

#: Canonical environment labels, ordered from most to least cluttered.
ENV_LABELS = ("Lab", "NarrowCorridor", "Lobby", "SportsHall")

_DB_TO_LN_AMP = math.log(10.0) / 20.0


@dataclass(frozen=True)
class MultipathComponent:
    """One propagation path: linear amplitude gain, delay in seconds, phase in radians."""

    amplitude: float
    delay_s: float
    phase_rad: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.amplitude) and self.amplitude >= 0.0):
            raise ValidationError(f"amplitude must be finite and >= 0, got {self.amplitude}")
        if not (math.isfinite(self.delay_s) and self.delay_s >= 0.0):
            raise ValidationError(f"delay must be finite and >= 0, got {self.delay_s}")
        if not math.isfinite(self.phase_rad):
            raise ValidationError(f"phase must be finite, got {self.phase_rad}")


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """The multipath parameter set at one spatial point (at least one path)."""

    components: tuple[MultipathComponent, ...]

    def __post_init__(self) -> None:
        if len(self.components) < 1:
            raise ValidationError("a channel realization needs at least one multipath component")

    def __len__(self) -> int:
        return len(self.components)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (amplitudes, delays, phases) as float64 arrays."""
        a = np.array([c.amplitude for c in self.components], dtype=np.float64)
        tau = np.array([c.delay_s for c in self.components], dtype=np.float64)
        theta = np.array([c.phase_rad for c in self.components], dtype=np.float64)
        return a, tau, theta


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform frequency sampling: point i = center - span/2 + i * span/(n_points - 1)."""

    center_hz: float = 2.4e9
    span_hz: float = 100e6
    n_points: int = 64

    def __post_init__(self) -> None:
        if not (math.isfinite(self.center_hz) and self.center_hz > 0.0):
            raise ValidationError(f"center_hz must be positive, got {self.center_hz}")
        if not (math.isfinite(self.span_hz) and self.span_hz > 0.0):
            raise ValidationError(f"span_hz must be positive, got {self.span_hz}")
        if self.n_points < 2:
            raise ValidationError(f"n_points must be >= 2, got {self.n_points}")

    @property
    def delta_hz(self) -> float:
        """Spacing between adjacent frequency points."""
        return self.span_hz / (self.n_points - 1)

    def frequencies(self) -> np.ndarray:
        start = self.center_hz - self.span_hz / 2.0
        return start + np.arange(self.n_points, dtype=np.float64) * self.delta_hz


@dataclass(frozen=True, eq=False)
class CtfSweep:
    """Complex channel transfer function sampled on a frequency grid."""

    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.complex128)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or len(values) != self.grid.n_points:
            raise ValidationError(
                f"sweep length {values.shape} does not match grid n_points={self.grid.n_points}"
            )
        if not np.all(np.isfinite(values.real)) or not np.all(np.isfinite(values.imag)):
            raise ValidationError("CTF sweep contains non-finite values")


@dataclass(frozen=True, eq=False)
class FcfSweep:
    """Complex autocorrelation of a CTF over frequency shifts (lag 0 first)."""

    lags_hz: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        lags = np.asarray(self.lags_hz, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.complex128)
        object.__setattr__(self, "lags_hz", lags)
        object.__setattr__(self, "values", values)
        if lags.ndim != 1 or values.ndim != 1 or len(lags) != len(values):
            raise ValidationError("FCF lags and values must be 1-D and equally long")
        if len(lags) < 1 or lags[0] != 0.0:
            raise ValidationError("FCF lags must start at 0")
        if not np.all(np.isfinite(values.real)) or not np.all(np.isfinite(values.imag)):
            raise ValidationError("FCF sweep contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)

    def validate(self, rel_tol: float = 1e-9) -> None:
        """Check the autocorrelation invariants.

        Lag 0 must be real (imaginary part within ``rel_tol`` relative) and
        non-negative, and no lag may exceed it in magnitude (within the same
        tolerance). The magnitude bound is a property of autocorrelations of
        multipath sweeps at moderate lags; the per-lag overlap normalization
        used by :func:`compute_fcf` does not guarantee it for arbitrary
        hand-crafted sequences, so it is checked here rather than at
        construction.
        """
        r0 = self.values[0]
        scale = abs(r0)
        if abs(r0.imag) > rel_tol * max(scale, 1e-300):
            raise ValidationError(f"FCF at lag 0 is not real: {r0!r}")
        if r0.real < 0.0:
            raise ValidationError(f"FCF at lag 0 is negative: {r0!r}")
        bound = r0.real * (1.0 + rel_tol)
        mags = np.abs(self.values)
        if np.any(mags > bound):
            worst = int(np.argmax(mags))
            raise ValidationError(
                f"FCF magnitude exceeds lag-0 value at lag index {worst}: "
                f"{mags[worst]!r} > {r0.real!r}"
            )


@dataclass(frozen=True)
class EnvironmentProfile:
    """Parametric stand-in for one indoor environment class.

    ``multipath_count_range`` is an inclusive [low, high] interval for the
    number of paths, ``delay_spread_s`` the mean of the exponential delay
    distribution, ``los_power_ratio`` the amplitude scale applied to the
    earliest path, ``amplitude_decay_s`` the exponential decay constant of
    amplitude versus delay, and ``shadow_sigma_db`` the standard deviation of
    the per-cell lognormal gain that makes wideband power vary across space.
    ``phase_offset_rad`` sets how far one position's phases deviate from its
    cell's shared base phases; ``phase_jitter_rad`` sets the per-observation
    phase perturbation between repeated measurements at one position.
    """

    label: str
    multipath_count_range: tuple[int, int]
    delay_spread_s: float
    los_power_ratio: float
    amplitude_decay_s: float
    shadow_sigma_db: float = 8.0
    phase_offset_rad: float = 0.04
    phase_jitter_rad: float = 0.01

    def __post_init__(self) -> None:
        lo, hi = self.multipath_count_range
        if lo < 1 or hi < lo:
            raise ValidationError(
                f"multipath count range must satisfy 1 <= low <= high, got [{lo}, {hi}]"
            )
        if not self.delay_spread_s > 0.0:
            raise ValidationError("delay_spread_s must be positive")
        if self.los_power_ratio < 0.0:
            raise ValidationError("los_power_ratio must be non-negative")
        if not self.amplitude_decay_s > 0.0:
            raise ValidationError("amplitude_decay_s must be positive")
        if self.shadow_sigma_db < 0.0:
            raise ValidationError("shadow_sigma_db must be non-negative")
        if self.phase_offset_rad < 0.0:
            raise ValidationError("phase_offset_rad must be non-negative")
        if self.phase_jitter_rad < 0.0:
            raise ValidationError("phase_jitter_rad must be non-negative")


def default_profiles() -> dict[str, EnvironmentProfile]:
    """Built-in profiles preserving the clutter ordering Lab > NarrowCorridor > Lobby > SportsHall."""
    profiles = (
        EnvironmentProfile("Lab", (15, 25), 80e-9, 0.5, 120e-9),
        EnvironmentProfile("NarrowCorridor", (8, 14), 50e-9, 1.5, 100e-9),
        EnvironmentProfile("Lobby", (4, 8), 30e-9, 3.0, 80e-9),
        EnvironmentProfile("SportsHall", (2, 5), 15e-9, 6.0, 60e-9),
    )
    return {p.label: p for p in profiles}


def digest_seed(*parts: int | float | str) -> int:
    """Hash a mixed tuple of ints, floats, and strings into a 128-bit seed.

    Floats contribute their exact IEEE-754 bits, so the result is identical
    across platforms and runs.
    """
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, str):
            h.update(b"s")
            h.update(part.encode("utf-8"))
        elif isinstance(part, (bool, np.bool_)):
            raise TypeError("booleans are ambiguous seed material")
        elif isinstance(part, (int, np.integer)):
            h.update(b"i")
            h.update(int(part).to_bytes(32, "little", signed=True))
        elif isinstance(part, (float, np.floating)):
            h.update(b"f")
            h.update(struct.pack("<d", float(part)))
        else:
            raise TypeError(f"unsupported seed part type {type(part)!r}")
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def seeded_rng(*parts: int | float | str) -> np.random.Generator:
    return np.random.default_rng(digest_seed(*parts))


def synth_ctf(realization: ChannelRealization, grid: FrequencyGrid) -> CtfSweep:
    """Evaluate the multipath superposition H(f) = sum_l a_l exp(-j(2 pi f tau_l - theta_l))."""
    f = grid.frequencies()
    a, tau, theta = realization.arrays()
    phase = np.outer(f, tau) * TWO_PI - theta[None, :]
    values = (a[None, :] * np.exp(-1j * phase)).sum(axis=1)
    return CtfSweep(grid=grid, values=values)


def compute_fcf(ctf: CtfSweep, max_lag: int) -> FcfSweep:
    """Discrete autocorrelation of a CTF over frequency-bin lags 0..max_lag.

    Each lag is averaged over its valid overlap:
    R[m] = (1/(N-m)) * sum_n H[n] * conj(H[n+m]), giving an unbiased per-lag
    estimate with no circular wraparound. Lag m corresponds to a frequency
    shift of m * delta_f.
    """
    n = ctf.grid.n_points
    if not 0 <= max_lag < n:
        raise ValidationError(f"max_lag must be in [0, {n - 1}], got {max_lag}")
    h = ctf.values
    values = np.empty(max_lag + 1, dtype=np.complex128)
    for m in range(max_lag + 1):
        overlap = h[: n - m] * np.conj(h[m:])
        values[m] = overlap.mean()
    lags = np.arange(max_lag + 1, dtype=np.float64) * ctf.grid.delta_hz
    return FcfSweep(lags_hz=lags, values=values)


def compute_rss(ctf: CtfSweep, floor_db: float = DEFAULT_RSS_FLOOR_DB) -> float:
    """Wideband average power in dB: 10 log10(mean |H|^2), floored for all-zero sweeps."""
    power = float(np.mean(np.abs(ctf.values) ** 2))
    if power <= 0.0:
        return floor_db
    return 10.0 * math.log10(power)


def apply_awgn(ctf: CtfSweep, snr_db: float, seed: int) -> CtfSweep:
    """Add complex Gaussian noise at the given SNR relative to the sweep's mean power."""
    power = float(np.mean(np.abs(ctf.values) ** 2))
    if power <= 0.0:
        return ctf
    noise_power = power / (10.0 ** (snr_db / 10.0))
    rng = seeded_rng("awgn", int(seed))
    scale = math.sqrt(noise_power / 2.0)
    noise = rng.normal(0.0, scale, ctf.grid.n_points) + 1j * rng.normal(
        0.0, scale, ctf.grid.n_points
    )
    return CtfSweep(grid=ctf.grid, values=ctf.values + noise)


def draw_realization(
    profile: EnvironmentProfile,
    position_cm: tuple[float, float],
    seed: int,
    *,
    phase_salt: int = 0,
    structure_cell_cm: float = DEFAULT_STRUCTURE_CELL_CM,
) -> ChannelRealization:
    """Draw a multipath realization for one position, deterministically.

    The large-scale structure (path count, delays, amplitudes, per-cell
    shadowing gain) and the base phases are keyed on the spatial cell
    containing ``position_cm``, so nearby positions share them; each exact
    position then differs by its own phase offsets (``phase_offset_rad``).
    ``phase_salt`` re-perturbs the phases by a seeded draw of magnitude
    ``phase_jitter_rad``, modeling repeated observations of a static channel:
    structure and position identity hold, the observation varies.
    """
    x, y = float(position_cm[0]), float(position_cm[1])
    cell_x = math.floor(x / structure_cell_cm)
    cell_y = math.floor(y / structure_cell_cm)
    srng = seeded_rng("structure", int(seed), profile.label, cell_x, cell_y)

    lo, hi = profile.multipath_count_range
    count = int(srng.integers(lo, hi + 1))
    delays = np.sort(srng.exponential(profile.delay_spread_s, size=count))
    ray_gains = srng.rayleigh(scale=math.sqrt(0.5), size=count)
    shadow = math.exp(srng.normal(0.0, profile.shadow_sigma_db) * _DB_TO_LN_AMP)
    amplitudes = shadow * ray_gains * np.exp(-delays / profile.amplitude_decay_s)
    amplitudes[0] *= profile.los_power_ratio

    brng = seeded_rng("phase-base", int(seed), profile.label, cell_x, cell_y)
    phases = brng.uniform(0.0, TWO_PI, size=count)
    orng = seeded_rng("phase-offset", int(seed), profile.label, x, y)
    phases = phases + orng.normal(0.0, profile.phase_offset_rad, size=count)
    jrng = seeded_rng("phase-jitter", int(seed), profile.label, x, y, int(phase_salt))
    phases = np.mod(phases + jrng.normal(0.0, profile.phase_jitter_rad, size=count), TWO_PI)

    components = tuple(
        MultipathComponent(float(a), float(t), float(p))
        for a, t, p in zip(amplitudes, delays, phases)
    )
    return ChannelRealization(components)
