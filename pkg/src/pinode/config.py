"""Run configuration: defaults, TOML files and command-line overrides.

Precedence is flags over file over defaults. Every random stream used by a
run is derived from the single run seed, one child per stream name, so the
streams never share generator state.
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields

import numpy as np
import tomli

from .datagen import RigConfig
from .dynamics import PhysicalParams
from .exceptions import InvalidArgument
from .training import LossWeights, TrainConfig

__all__ = ["DEFAULTS", "RunConfig", "derive_seed", "parse_override"]

STREAMS = ("datagen", "init", "train", "evaluation", "gradcheck")

DEFAULTS = {
    "seed": 0,
    "physical": PhysicalParams().to_dict(),
    "rig": {
        **{k: v for k, v in RigConfig().to_dict().items() if k != "base"},
        "duration": 480.0,
        "amplitude": 1.0,
    },
    "network": {
        "layer_sizes": [5, 50, 50, 50, 1],
        "output_scale": 10.0,
        "angle_input": "raw",
    },
    "training": {
        "learning_rate": 1e-3,
        "batch_size": 128,
        "epochs": 100,
        "horizon": 1,
        "lambda_q": [1.0, 1.0],
        "lambda_qdot": [1.0, 1.0],
    },
    "evaluation": {
        "window": 30,
        "count": 1000,
        "seed": -1,  # -1: derive from the run seed
        "mode": "terminal",
        "tiled": False,
        "rollout_start": 0,
        "rollout_steps": 500,
        "format": "csv",
    },
    "paths": {
        "dataset": "data/benchmark.csv",
        "model": "out/model.json",
        "reports": "out",
    },
}


def derive_seed(run_seed, stream):
    """Independent 32-bit seed for a named stream of the run."""
    if stream not in STREAMS:
        raise InvalidArgument(f"unknown random stream {stream!r}")
    ss = np.random.SeedSequence(int(run_seed), spawn_key=(STREAMS.index(stream),))
    return int(ss.generate_state(1)[0])


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}{key}"
        if key not in base:
            raise InvalidArgument(f"unknown configuration key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidArgument(f"{path!r} is a section, got a value")
            out[key] = _merge(base[key], value, path + ".")
        else:
            if isinstance(value, dict):
                raise InvalidArgument(f"{path!r} is a value, got a section")
            out[key] = value
    return out


def parse_override(text):
    """``section.key=value`` to a nested dict; the value is read as TOML."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise InvalidArgument(f"override must look like section.key=value, got {text!r}")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()  # bare strings such as embedded or pooled
    out = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


class RunConfig:
    """Resolved configuration of one run, with typed views per module."""

    def __init__(self, data=None):
        self.data = _merge(DEFAULTS, data or {})
        self.validate()

    @classmethod
    def from_sources(cls, path=None, overrides=(), seed=None):
        data = {}
        if path is not None:
            try:
                with open(path, "rb") as f:
                    data = tomli.load(f)
            except OSError as e:
                raise InvalidArgument(f"cannot read config {path}: {e.strerror}") from None
            except tomli.TOMLDecodeError as e:
                raise InvalidArgument(f"config {path}: {e}") from None
        data = _merge(DEFAULTS, data)
        for text in overrides:
            data = _merge(data, parse_override(text))
        if seed is not None:
            data["seed"] = seed
        return cls(data)

    def validate(self):
        self.physical
        self.rig
        self.train_config
        net = self.data["network"]
        sizes = net["layer_sizes"]
        if not isinstance(sizes, list) or len(sizes) < 2 or not all(isinstance(n, int) and n > 0 for n in sizes):
            raise InvalidArgument(f"network.layer_sizes must be a list of positive ints, got {sizes!r}")
        if net["angle_input"] not in ("raw", "embedded"):
            raise InvalidArgument("network.angle_input must be 'raw' or 'embedded'")
        want = 5 if net["angle_input"] == "raw" else 6
        if sizes[0] != want or sizes[-1] != 1:
            raise InvalidArgument(f"network.layer_sizes must start with {want} and end with 1, got {sizes}")
        if not net["output_scale"] > 0:
            raise InvalidArgument("network.output_scale must be positive")
        ev = self.data["evaluation"]
        if ev["mode"] not in ("terminal", "pooled"):
            raise InvalidArgument("evaluation.mode must be 'terminal' or 'pooled'")
        if ev["format"] not in ("csv", "json"):
            raise InvalidArgument("evaluation.format must be 'csv' or 'json'")
        if ev["window"] < 1 or ev["count"] < 1:
            raise InvalidArgument("evaluation.window and evaluation.count must be >= 1")
        if not isinstance(self.data["seed"], int) or self.data["seed"] < 0:
            raise InvalidArgument("seed must be a non-negative integer")
        rig = self.data["rig"]
        if not rig["duration"] > 0:
            raise InvalidArgument(f"rig.duration must be positive, got {rig['duration']}")
        if not rig["amplitude"] >= 0:
            raise InvalidArgument("rig.amplitude must be >= 0")

    @property
    def seed(self):
        return self.data["seed"]

    def stream_seed(self, stream):
        if stream == "evaluation" and self.data["evaluation"]["seed"] >= 0:
            return int(self.data["evaluation"]["seed"])
        return derive_seed(self.seed, stream)

    @property
    def physical(self):
        return PhysicalParams.from_dict(self.data["physical"])

    @property
    def rig(self):
        opts = {k: v for k, v in self.data["rig"].items() if k not in ("duration", "amplitude")}
        known = {f.name for f in fields(RigConfig)}
        unknown = set(opts) - known
        if unknown:
            raise InvalidArgument(f"unknown rig option(s): {sorted(unknown)}")
        return RigConfig(base=self.physical, **opts)

    @property
    def train_config(self):
        t = self.data["training"]
        return TrainConfig(
            learning_rate=float(t["learning_rate"]),
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            seed=self.stream_seed("train"),
            horizon=t["horizon"],
            loss_weights=LossWeights(tuple(t["lambda_q"]), tuple(t["lambda_qdot"])),
        )

    @property
    def network(self):
        return self.data["network"]

    @property
    def evaluation(self):
        return self.data["evaluation"]

    @property
    def paths(self):
        return self.data["paths"]

    def to_dict(self):
        return copy.deepcopy(self.data)

    def to_json(self):
        return json.dumps(self.data, sort_keys=True)
