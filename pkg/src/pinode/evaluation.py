"""Multi-step rollout comparison and windowed absolute-error statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import CHANNELS
from .diffcore import MLPParams
from .dynamics import PhysicalParams, hybrid_rhs, pure_ode_rhs
from .exceptions import InvalidArgument
from .integrator import rollout

__all__ = [
    "ErrorSummary",
    "RolloutComparison",
    "as_rhs",
    "rollout_compare",
    "window_starts",
    "windowed_errors",
    "fit_normal",
    "format_error_table",
    "emit_plot_data",
    "read_plot_data",
]


def as_rhs(p, model):
    """Turn a model description into a derivative function.

    ``MLPParams`` gives the hybrid model on ``p`` (5 inputs: raw angle, 6 inputs:
    cos/sin of the angle); ``PhysicalParams`` the
    friction-parameterized model with those constants; callables pass through.
    """
    if isinstance(model, MLPParams):
        return hybrid_rhs(p, model, "raw" if model.layer_sizes[0] == 5 else "embedded")
    if isinstance(model, PhysicalParams):
        return pure_ode_rhs(model)
    if callable(model):
        return model
    raise InvalidArgument(f"cannot build a forward model from {type(model).__name__}")


def _angle_error(a, b):
    d = np.remainder(a - b, 2.0 * math.pi)
    return np.minimum(d, 2.0 * math.pi - d)


def _abs_errors(pred, measured):
    err = np.abs(pred - measured)
    err[..., 1] = _angle_error(pred[..., 1], measured[..., 1])
    return err


@dataclass
class RolloutComparison:
    start_index: int
    steps: int
    t: np.ndarray
    trajectories: dict  # name -> (steps + 1, 4); "measured" holds the data slice


def rollout_compare(p, models, dataset, start_index, steps):
    """Roll every model out from the measured state at ``start_index``."""
    if start_index < 0 or steps < 0 or start_index + steps >= len(dataset):
        raise InvalidArgument(
            f"window [{start_index}, {start_index + steps}] outside dataset of {len(dataset)} samples"
        )
    h = 1.0 / dataset.sample_rate
    states = dataset.states
    measured = states[start_index : start_index + steps + 1]
    trajectories = {"measured": measured}
    for name, model in dict(models).items():
        if steps == 0:
            trajectories[name] = measured[:1].copy()
            continue
        f = as_rhs(p, model)
        trajectories[name] = rollout(f, states[start_index], dataset.u[start_index : start_index + steps], h)
    t = dataset.t[start_index : start_index + steps + 1] - dataset.t[start_index]
    return RolloutComparison(start_index, steps, t, trajectories)


def fit_normal(errors):
    """Sample mean and sample standard deviation (n - 1 denominator)."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size < 2:
        raise InvalidArgument("fitting a normal distribution needs at least two values")
    return float(errors.mean()), float(errors.std(ddof=1))


@dataclass
class ErrorSummary:
    errors: dict
    fits: dict
    window: int
    count: int
    mode: str = "terminal"
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def mean(self, channel):
        return self.fits[channel][0]

    def to_dict(self):
        return {
            "window": self.window,
            "count": self.count,
            "mode": self.mode,
            "fits": {c: {"mu": mu, "sigma": sd} for c, (mu, sd) in self.fits.items()},
        }


def window_starts(n_samples, window, count, seed=0, tiled=False):
    """Start indices for ``count`` windows of ``window`` steps.

    Random starts are drawn on the grid of disjoint windows without replacement
    when the data holds enough of them, otherwise uniformly with replacement.
    """
    last = n_samples - 1 - window  # largest valid start
    if window < 1 or count < 1:
        raise InvalidArgument("window and count must be >= 1")
    if last < 0:
        raise InvalidArgument(f"dataset of {n_samples} samples is shorter than one {window}-step window")
    slots = (n_samples - 1) // window
    if tiled:
        if slots < count:
            raise InvalidArgument(f"only {slots} tiled windows fit, {count} requested")
        return np.arange(count) * window
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    if slots >= count:
        return np.sort(rng.choice(slots, size=count, replace=False)) * window
    return np.sort(rng.integers(0, last + 1, size=count))


def windowed_errors(p, model, dataset, window=30, count=1000, seed=0, mode="terminal", tiled=False):
    """Absolute errors of ``window``-step rollouts started from measured states.

    ``mode="terminal"`` keeps the error at the last step of each window;
    ``mode="pooled"`` keeps every step of every window.
    """
    if mode not in ("terminal", "pooled"):
        raise InvalidArgument(f"mode must be 'terminal' or 'pooled', got {mode!r}")
    starts = window_starts(len(dataset), window, count, seed, tiled)
    states = dataset.states
    idx = starts[None, :] + np.arange(window + 1)[:, None]  # (window + 1, count)
    controls = dataset.u[idx[:-1]]
    pred = rollout(as_rhs(p, model), states[starts], controls, 1.0 / dataset.sample_rate)
    err = _abs_errors(pred, states[idx])
    sel = err[-1] if mode == "terminal" else err[1:].reshape(-1, 4)
    errors = {c: sel[:, i].copy() for i, c in enumerate(CHANNELS)}
    fits = {c: fit_normal(v) if v.size >= 2 else (float(v.mean()), 0.0) for c, v in errors.items()}
    return ErrorSummary(errors, fits, window, count, mode, starts)


def format_error_table(summaries):
    """Per-channel (mu, sigma) for several models side by side."""
    names = list(summaries)
    head = f"{'channel':10}" + "".join(f"{n + ' mu':>16}{n + ' sigma':>16}" for n in names)
    lines = [head]
    for c in CHANNELS:
        row = f"{c:10}"
        for n in names:
            mu, sd = summaries[n].fits[c]
            row += f"{mu:16.6g}{sd:16.6g}"
        lines.append(row)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# plot data


def _rows(results):
    if results is None:
        return [], {}
    if isinstance(results, RolloutComparison):
        rows = []
        for name, traj in results.trajectories.items():
            for i, c in enumerate(CHANNELS):
                rows.extend((f"{name}/{c}", k, float(v)) for k, v in enumerate(traj[:, i]))
        meta = {"kind": "rollout", "start_index": results.start_index, "steps": results.steps}
        return rows, meta
    results = dict(results)
    rows, meta = [], {"kind": "errors", "models": {}}
    for name, summary in results.items():
        meta["models"][name] = summary.to_dict()
        for c in CHANNELS:
            rows.extend((f"{name}/{c}", k, float(v)) for k, v in enumerate(summary.errors[c]))
    if not results:
        meta = {"kind": "empty"}
    return rows, meta


def emit_plot_data(results, path, fmt="csv"):
    """Write a long-format table (series, step_or_bin, value) with a metadata header."""
    rows, meta = _rows(results)
    if fmt == "json":
        with open(path, "w") as f:
            json.dump(
                {
                    "metadata": meta,
                    "columns": ["series", "step_or_bin", "value"],
                    "rows": [list(r) for r in rows],
                },
                f,
            )
    elif fmt == "csv":
        with open(path, "w", newline="") as f:
            f.write(f"# metadata: {json.dumps(meta, sort_keys=True)}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["series", "step_or_bin", "value"])
            for s, k, v in rows:
                w.writerow([s, k, format(v, ".17g")])
    else:
        raise InvalidArgument(f"format must be 'csv' or 'json', got {fmt!r}")


def read_plot_data(path):
    """Parse an emitted plot-data file back into (metadata, {series: array})."""
    with open(path) as f:
        text = f.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        meta, rows = doc["metadata"], [tuple(r) for r in doc["rows"]]
    else:
        meta, rows = {}, []
        lines = text.splitlines()
        for line in lines:
            if line.startswith("# metadata:"):
                meta = json.loads(line.split(":", 1)[1])
        body = [line for line in lines if line and not line.startswith("#")]
        for s, k, v in list(csv.reader(body))[1:]:
            rows.append((s, int(k), float(v)))
    series = {}
    for s, k, v in rows:
        series.setdefault(s, []).append((int(k), float(v)))
    return meta, {s: np.array([v for _, v in sorted(kv)]) for s, kv in series.items()}
