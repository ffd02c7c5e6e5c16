"""Synthetic test-rig data: excitation, ground-truth simulation, sensor model, CSV.

The simulated rig has effects the friction-parameterized model lacks:
direction-dependent cart friction, a first-order lag between commanded and
applied force, quadratic air drag on the pole and end stops on the track.
The default effect sizes and noise levels are choices of this package, not
measured values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import dynamics as dyn
from .exceptions import DatasetError, InvalidArgument, NumericFailure
from .integrator import rk4_step_components

__all__ = [
    "CHANNELS",
    "RigConfig",
    "Dataset",
    "Trajectory",
    "excitation_signal",
    "simulate_rig",
    "sensor_model",
    "dataset_stats",
    "format_stats",
    "read_csv",
    "write_csv",
    "generate_dataset",
    "exact_dataset",
]

CHANNELS = ("x", "phi", "x_dot", "phi_dot")
COLUMNS = ("t",) + CHANNELS + ("u",)


@dataclass(frozen=True)
class RigConfig:
    """Ground-truth rig effects and sensor noise.

    ``operator_kp`` and ``operator_kd`` add a weak centering feedback to the
    excitation, standing in for a person keeping the cart away from the end
    stops; set both to zero for a purely open-loop excitation.
    """

    base: dyn.PhysicalParams = field(default_factory=dyn.PhysicalParams)
    mu_c_pos: float = 0.08
    mu_c_neg: float = 0.02
    actuator_tau: float = 0.01
    drag_coeff: float = 5e-5
    noise_x: float = 0.0003
    noise_phi: float = 0.0005
    track_half_length: float = 0.3
    inner_step: float = 0.002
    sample_rate: float = 50.0
    operator_kp: float = 5.0
    operator_kd: float = 1.0

    def __post_init__(self):
        if isinstance(self.base, dict):
            object.__setattr__(self, "base", dyn.PhysicalParams.from_dict(self.base))
        for name in (
            "mu_c_pos", "mu_c_neg", "actuator_tau", "drag_coeff", "noise_x", "noise_phi",
            "operator_kp", "operator_kd",
        ):
            if not getattr(self, name) >= 0:
                raise InvalidArgument(f"{name} must be >= 0")
        if not self.track_half_length > 0:
            raise InvalidArgument("track_half_length must be positive")
        if not (self.inner_step > 0 and self.sample_rate > 0):
            raise InvalidArgument("inner_step and sample_rate must be positive")
        ratio = 1.0 / (self.sample_rate * self.inner_step)
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise InvalidArgument(
                f"inner_step {self.inner_step} must divide the sample interval {1 / self.sample_rate}"
            )

    @property
    def substeps(self):
        return int(round(1.0 / (self.sample_rate * self.inner_step)))

    @classmethod
    def ideal(cls, base=None, **kw):
        """A rig with no effects beyond the baseline model and no noise."""
        base = base or dyn.PhysicalParams()
        opts = dict(
            base=base,
            mu_c_pos=base.mu_c,
            mu_c_neg=base.mu_c,
            actuator_tau=0.0,
            drag_coeff=0.0,
            noise_x=0.0,
            noise_phi=0.0,
            track_half_length=1e9,
        )
        opts.update(kw)
        return cls(**opts)

    @classmethod
    def demanding(cls, base=None, **kw):
        """Milder friction asymmetry, slower actuator, ten times the noise, open loop."""
        opts = dict(
            mu_c_pos=0.050,
            mu_c_neg=0.033,
            actuator_tau=0.04,
            noise_x=0.002,
            noise_phi=0.005,
            operator_kp=0.0,
            operator_kd=0.0,
        )
        if base is not None:
            opts["base"] = base
        opts.update(kw)
        return cls(**opts)

    def replace(self, **changes):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return RigConfig(**d)

    def to_dict(self):
        d = asdict(self)
        d["base"] = self.base.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown rig option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class Trajectory:
    """States at the sample instants; ``u[n]`` is held from ``t[n]`` to ``t[n+1]``."""

    t: np.ndarray
    states: np.ndarray
    u: np.ndarray


@dataclass
class Dataset:
    sample_rate: float
    t: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    x_dot: np.ndarray
    phi_dot: np.ndarray
    u: np.ndarray
    provenance: str = "external"

    def __post_init__(self):
        for name in COLUMNS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.t.shape[0]
        if any(getattr(self, c).shape != (n,) for c in COLUMNS):
            raise DatasetError("all channels must be 1-d and of equal length")
        if not self.sample_rate > 0:
            raise DatasetError("sample_rate must be positive")
        if n > 1:
            dt = np.diff(self.t)
            if not np.allclose(dt, 1.0 / self.sample_rate, rtol=1e-6, atol=1e-9):
                bad = int(np.argmax(np.abs(dt - 1.0 / self.sample_rate)))
                raise DatasetError(
                    f"timestamps must be strictly increasing with spacing {1 / self.sample_rate:g} s;"
                    f" samples {bad} and {bad + 1} are {dt[bad]:g} s apart"
                )

    def __len__(self):
        return self.t.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.provenance == other.provenance
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in COLUMNS)
        )

    @property
    def states(self):
        return np.stack([self.x, self.phi, self.x_dot, self.phi_dot], axis=-1)

    def slice(self, start, stop):
        return Dataset(self.sample_rate, *(getattr(self, c)[start:stop] for c in COLUMNS), self.provenance)

    def transitions(self, horizon=1):
        """Arrays (states (N,4), controls (N,H), targets (N,H,4)) of contiguous windows."""
        n = len(self) - horizon
        if n < 1:
            raise InvalidArgument(f"dataset of {len(self)} samples has no {horizon}-step transitions")
        s = self.states
        idx = np.arange(n)[:, None] + np.arange(horizon)[None, :]
        return s[:n].copy(), self.u[idx], s[idx + 1]

    def channel(self, name):
        return getattr(self, name)


# ---------------------------------------------------------------------------
# generation


def excitation_signal(duration, sample_rate=50.0, amplitude=1.0, seed=0):
    """Random piecewise-constant force held 0.1-0.5 s per level, 3-sample smoothed."""
    if not duration > 0:
        raise InvalidArgument(f"duration must be positive, got {duration}")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE1C]))
    raw = np.empty(n)
    pos = 0
    while pos < n:
        hold = max(1, int(round(rng.uniform(0.1, 0.5) * sample_rate)))
        raw[pos : pos + hold] = rng.uniform(-amplitude, amplitude)
        pos += hold
    padded = np.concatenate([np.full(2, raw[0]), raw])
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


# Below this speed the rig's cart friction is off. Without the dead band,
# roundoff-sized velocities switch on the full Coulomb force and an explicit
# integrator chatters around rest.
STICK_SPEED = 1e-12


def _rig_rhs(cfg):
    p = cfg.base
    m_tot_g = p.derived.m_tot * p.g
    tau = cfg.actuator_tau

    def f(t, z, u):
        x_dot, phi_dot = z[2], z[3]
        s = float(x_dot > STICK_SPEED) - float(x_dot < -STICK_SPEED)
        mu = cfg.mu_c_pos if s > 0 else cfg.mu_c_neg
        force = z[4] if tau > 0 else u
        q = (
            force - m_tot_g * mu * s,
            -p.mu_p * phi_dot - cfg.drag_coeff * phi_dot * abs(phi_dot),
        )
        x_dd, phi_dd = dyn.acceleration(p, z, q)
        lag = (u - z[4]) / tau if tau > 0 else 0.0
        return (x_dot, phi_dot, x_dd, phi_dd, lag)

    return f


def simulate_rig(cfg, controls, z0, seed=0):
    """Integrate the rig with RK4 at ``cfg.inner_step`` and sample every interval.

    ``seed`` is accepted for interface symmetry; the rig dynamics themselves are
    deterministic.
    """
    controls = np.asarray(controls, dtype=np.float64)
    f = _rig_rhs(cfg)
    h = cfg.inner_step
    dt = 1.0 / cfg.sample_rate
    limit = cfg.track_half_length
    z = tuple(float(v) for v in z0) + (0.0,)
    out = np.empty((controls.shape[0], 4))
    applied = np.empty(controls.shape[0])
    kp, kd = cfg.operator_kp, cfg.operator_kd
    for n, u in enumerate(controls.tolist()):
        out[n] = z[:4]
        if kp or kd:
            u = u - kp * z[0] - kd * z[2]
        applied[n] = u
        for k in range(cfg.substeps):
            t = n * dt + k * h
            z = rk4_step_components(f, t, z, u, h)
            if not all(math.isfinite(v) for v in z):
                raise NumericFailure(f"rig simulation diverged at t={t + h:g} s", where=t + h)
            if abs(z[0]) > limit:
                x = math.copysign(limit, z[0])
                x_dot = 0.0 if z[2] * x > 0 else z[2]
                z = (x, z[1], x_dot, z[3], z[4])
    t = np.arange(controls.shape[0]) * dt
    return Trajectory(t, out, applied)


def sensor_model(truth, cfg, seed=0):
    """Noisy positions, backward-difference velocities, angle wrapped to [0, 2pi)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E75]))
    n = truth.states.shape[0]
    x = truth.states[:, 0] + (rng.normal(0.0, cfg.noise_x, n) if cfg.noise_x > 0 else 0.0)
    phi = truth.states[:, 1] + (rng.normal(0.0, cfg.noise_phi, n) if cfg.noise_phi > 0 else 0.0)
    x_dot = np.zeros(n)
    phi_dot = np.zeros(n)
    x_dot[1:] = np.diff(x) * cfg.sample_rate
    phi_dot[1:] = np.diff(phi) * cfg.sample_rate
    return Dataset(
        cfg.sample_rate,
        np.arange(n) / cfg.sample_rate,
        x,
        np.remainder(phi, 2.0 * np.pi),
        x_dot,
        phi_dot,
        truth.u,
    )


def exact_dataset(truth, sample_rate):
    """A dataset holding the true states of ``truth`` (perfect sensors)."""
    s = truth.states
    return Dataset(sample_rate, truth.t, s[:, 0], s[:, 1], s[:, 2], s[:, 3], truth.u, "exact states")


def config_hash(payload):
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def generate_dataset(cfg, duration=480.0, amplitude=1.0, seed=0, z0=(0.0, math.pi, 0.0, 0.0)):
    """Excitation, rig simulation and sensor model in one call."""
    controls = excitation_signal(duration, cfg.sample_rate, amplitude, seed)
    truth = simulate_rig(cfg, controls, z0, seed)
    d = sensor_model(truth, cfg, seed)
    d.provenance = "synthetic rig " + config_hash(
        {"rig": cfg.to_dict(), "duration": duration, "amplitude": amplitude, "seed": seed, "z0": list(z0)}
    )
    return d


# ---------------------------------------------------------------------------
# statistics and files


def dataset_stats(d):
    """Population (mean, std, min, max) for each state channel."""
    if len(d) == 0:
        raise InvalidArgument("statistics of an empty dataset")
    out = {}
    for c in CHANNELS + ("u",):
        v = d.channel(c)
        out[c] = (float(v.mean()), float(v.std()), float(v.min()), float(v.max()))
    return out


_UNITS = {"x": "x (m)", "phi": "phi (rad)", "x_dot": "x_dot (m/s)", "phi_dot": "phi_dot (rad/s)", "u": "u (N)"}


def format_stats(d, stats=None):
    stats = stats or dataset_stats(d)
    lines = [
        f"Sample rate  {d.sample_rate:g} Hz",
        f"Samples      {len(d):,}",
        f"{'':18}{'Mean':>9}{'STD.':>9}{'Min':>10}{'Max':>10}",
    ]
    for c, (mu, sd, lo, hi) in stats.items():
        lines.append(f"{_UNITS[c]:18}{mu:9.3f}{sd:9.3f}{lo:10.3f}{hi:10.3f}")
    return "\n".join(lines)


def write_csv(d, path):
    with open(path, "w", newline="") as f:
        f.write(f"# sample_rate: {d.sample_rate!r}\n")
        for line in str(d.provenance).splitlines() or [""]:
            f.write(f"# provenance: {line}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        cols = [d.channel(c) for c in COLUMNS]
        for row in zip(*cols):
            w.writerow([format(v, ".17g") for v in row])


def read_csv(path):
    sample_rate = None
    provenance = []
    header = None
    rows = []
    with open(path, newline="") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                key, _, value = stripped[1:].partition(":")
                key, value = key.strip(), value.strip()
                if key == "sample_rate":
                    try:
                        sample_rate = float(value)
                    except ValueError:
                        raise DatasetError(f"bad sample_rate {value!r}", lineno) from None
                elif key == "provenance":
                    provenance.append(value)
                continue
            cells = [c.strip() for c in stripped.split(",")]
            if header is None:
                missing = [c for c in COLUMNS if c not in cells]
                if missing:
                    raise DatasetError(f"missing column(s): {', '.join(missing)}", lineno)
                header = cells
                continue
            if len(cells) != len(header):
                raise DatasetError(f"expected {len(header)} fields, found {len(cells)}", lineno)
            try:
                rows.append([float(c) for c in cells])
            except ValueError as e:
                raise DatasetError(f"unparseable value ({e})", lineno) from None
    if header is None:
        raise DatasetError("no header row; expected " + ",".join(COLUMNS))
    if not rows:
        raise DatasetError("no data rows")
    table = np.array(rows)
    cols = {c: table[:, header.index(c)] for c in COLUMNS}
    if sample_rate is None:
        if len(rows) < 2:
            raise DatasetError("cannot infer the sample rate from a single row")
        sample_rate = 1.0 / float(np.median(np.diff(cols["t"])))
    return Dataset(sample_rate, *(cols[c] for c in COLUMNS), "\n".join(provenance) or "external")
