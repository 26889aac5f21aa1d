"""Desk-scale synthetic substitute for the 12-hour sensor recordings.

Each channel follows first-order dynamics toward a concentration-dependent
plateau: reading(t) = base_c + sum_g S[c,g] * conc_g * (1 - exp(-dt/tau_c))
plus Gaussian noise, where dt is the time since the current setpoint phase
began. Channels get distinct sensitivities and time constants, so the
cross-channel trajectory encodes both elapsed time and concentration. The
emitted setpoint columns are exact, which makes downstream segmentation
ground-truthed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .graph import N_SENSORS
from .ingest import RawStream


@dataclass
class SensorParams:
    """Per-channel baseline, per-gas sensitivity, and response time constant."""

    base: np.ndarray  # (16,)
    sens: np.ndarray  # (16, 2)
    tau: np.ndarray  # (16,) seconds

    @classmethod
    def from_seed(cls, seed: int, conc_scale=(533.33, 20.0)) -> "SensorParams":
        """Draw plausible parameters; sensitivities are scaled so both gases
        produce responses of comparable magnitude at full concentration."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        base = rng.uniform(8.0, 16.0, N_SENSORS)
        full_scale = rng.uniform(5.0, 30.0, (N_SENSORS, 2))
        sens = full_scale / np.asarray(conc_scale)
        tau = rng.uniform(2.0, 20.0, N_SENSORS)
        return cls(base=base, sens=sens, tau=tau)


def synth_stream(schedule, group: str = "co_ethylene", sample_rate: float = 100.0,
                 noise: float = 0.0, seed: int = 0,
                 params: SensorParams | None = None) -> RawStream:
    """Generate a RawStream from a list of (conc_a, conc_b, duration_s) phases."""
    if not schedule:
        raise DomainError("schedule must contain at least one phase")
    if params is None:
        params = SensorParams.from_seed(seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    times, concs, sensors = [], [], []
    t0 = 0.0
    for ca, cb, dur in schedule:
        if dur <= 0:
            raise DomainError(f"phase duration must be positive, got {dur}")
        rows = int(round(dur * sample_rate))
        if rows < 1:
            raise DomainError(f"phase of {dur}s yields no rows at {sample_rate} Hz")
        dt = np.arange(rows) / sample_rate
        rise = 1.0 - np.exp(-dt[:, None] / params.tau[None, :])  # (rows, 16)
        response = (params.sens[:, 0] * ca + params.sens[:, 1] * cb) * rise
        block = params.base[None, :] + response
        if noise > 0:
            block = block + rng.normal(0.0, noise, block.shape)
        times.append(t0 + dt)
        concs.append(np.broadcast_to([ca, cb], (rows, 2)))
        sensors.append(block)
        t0 += rows / sample_rate
    return RawStream(
        time=np.concatenate(times),
        conc=np.concatenate(concs).astype(np.float64),
        sensors=np.concatenate(sensors),
        group=group,
        source="synthetic",
    ).validate()


def make_schedule(n_segments: int = 240, seed: int = 0,
                  conc_range_a=(80.0, 533.33), conc_range_b=(3.0, 20.0),
                  dur_range_s=(1, 120), air_range_s=(4, 10)):
    """Random exposure schedule cycling the three composition classes.

    Durations are whole seconds drawn log-uniformly, so segment lengths
    span short transients to near-plateau exposures. Every exposure is
    preceded by an air phase (the baseline source), and the stream ends
    in air.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    lo, hi = np.log(dur_range_s[0]), np.log(dur_range_s[1] + 1)
    schedule = []
    for i in range(n_segments):
        air = int(rng.integers(air_range_s[0], air_range_s[1] + 1))
        schedule.append((0.0, 0.0, float(air)))
        kind = ("A", "B", "A+B")[i % 3]
        ca = float(rng.uniform(*conc_range_a)) if "A" in kind else 0.0
        cb = float(rng.uniform(*conc_range_b)) if kind in ("B", "A+B") else 0.0
        dur = float(min(int(np.exp(rng.uniform(lo, hi))), dur_range_s[1]))
        schedule.append((ca, cb, dur))
    schedule.append((0.0, 0.0, float(air_range_s[0])))
    return schedule


def write_stream(stream: RawStream, path):
    """Write a RawStream as 19-column whitespace-delimited text."""
    table = np.column_stack([stream.time, stream.conc, stream.sensors])
    np.savetxt(path, table, fmt="%.6f")
    return path
