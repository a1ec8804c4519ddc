"""Run configuration: a JSON document validated against a flat schema.

Unknown keys are rejected with a nearest-key suggestion; defaults are
filled per command so a parsed config always round-trips losslessly.
"""

import difflib
import json
from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["RunConfig", "SCHEMA", "COMMANDS", "parse_config", "config_from_dict"]

SCHEMA_VERSION = 1

COMMANDS = (
    "resolvent-scan",
    "envelope-check",
    "pseudospectrum",
    "airy-corrector",
    "nonslip-decompose",
    "evolve-linear",
    "rayleigh-damping",
    "evolve-nonlinear",
    "threshold-probe",
    "selftest",
)

# key -> (type, default); None default means command-dependent/optional
SCHEMA = {
    "schema_version": (int, SCHEMA_VERSION),
    "command": (str, None),
    "bc": (str, "navier-slip"),
    "k": (list, [1, 0]),
    "nu": (float, 1e-3),
    "nu_list": (list, [1e-2, 1e-3, 1e-4, 1e-5]),
    "viscosity": (float, None),              # alias for nu
    "lambda_min": (float, -0.5),
    "lambda_max": (float, 1.5),
    "lambda_step": (float, 0.005),
    "lambda": (float, 0.5),
    "n": (int, 129),
    "in_norm": (str, "L2"),
    "out_quantity": (str, "W"),
    "out_norm": (str, "L2"),
    "eps_shift": (float, 0.0),
    "nu_exponent": (float, 0.5),
    "lambda_exponent": (float, 2.0 / 3.0),
    "proposition_id": (str, "gain-scaling"),
    "re_min": (float, -0.5),
    "re_max": (float, 1.5),
    "im_min": (float, -0.5),
    "im_max": (float, 0.5),
    "grid_points": (int, 21),
    "kind": (str, "local-h"),
    "T": (float, None),
    "dt": (float, None),
    "c_weight": (float, None),
    "K1": (int, 8),
    "K3": (int, 8),
    "shape": (str, "streamwise-rolls"),
    "amplitude": (float, None),
    "a_lo": (float, None),
    "a_hi": (float, None),
    "seed": (int, 0),
    "output_dir": (str, "."),
}


@dataclass
class RunConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def _suggest(key):
    hit = difflib.get_close_matches(key, SCHEMA.keys(), n=1, cutoff=0.6)
    return f"; nearest valid key: {hit[0]!r}" if hit else ""


def config_from_dict(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}{_suggest(key)}")
    cmd = raw.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(
            f"command must be one of {COMMANDS}, got {cmd!r}"
        )
    data = {}
    for key, (typ, default) in SCHEMA.items():
        if key in raw:
            val = raw[key]
            if typ is float and isinstance(val, int):
                val = float(val)
            if not isinstance(val, typ):
                raise ConfigError(f"key {key!r} expects {typ.__name__}, got {val!r}")
            data[key] = val
        elif default is not None:
            data[key] = default
    if "viscosity" in data:
        data["nu"] = float(data.pop("viscosity"))
    data["schema_version"] = SCHEMA_VERSION
    if "k" in data:
        k = data["k"]
        if len(k) != 2:
            raise ConfigError(f"key 'k' expects a pair, got {k!r}")
        data["k"] = [int(k[0]), int(k[1])]
    return RunConfig(data)


def parse_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON (line {err.lineno}): {err.msg}") from err
    return config_from_dict(raw)
