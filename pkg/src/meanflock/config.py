"""Flat key = value experiment configuration with a strict schema.

The format is deliberately primitive so configs diff cleanly and every run
is auditable: one ``key = value`` pair per line, ``#`` comments, no
sections, no nesting. Unknown keys, bad types, and missing required keys are
all rejected before any computation starts, with the offending line quoted.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Optional

from .errors import ConfigError

EXPERIMENT_KINDS = (
    "simulate",
    "flocking",
    "weakform",
    "cauchy",
    "chaos",
    "comparison",
    "transport-check",
)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.split(",") if tok.strip()]


_PARSERS = {
    "int": int,
    "float": float,
    "str": str.strip,
    "bool": _parse_bool,
    "int_list": _parse_int_list,
}


@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: Any = None
    required: bool = False
    choices: Optional[tuple] = None
    help: str = ""


SCHEMA: dict[str, Key] = {
    k.name: k
    for k in [
        Key("experiment", "str", required=True, choices=EXPERIMENT_KINDS,
            help="experiment kind"),
        Key("model", "str", required=True, help="kernel model name, see `meanflock models`"),
        Key("output_dir", "str", required=True, help="artifact directory"),
        # model parameters
        Key("half_dim", "int", default=1, help="d for position-velocity models"),
        Key("dim", "int", default=1, help="state dimension for generic models"),
        Key("lambda", "float", default=1.0, help="psi amplitude"),
        Key("gamma", "float", default=1.0, help="psi decay exponent"),
        Key("phi_lambda", "float", default=0.0, help="phi amplitude"),
        Key("phi_gamma", "float", default=0.0, help="phi decay exponent"),
        Key("trunc_radius", "float", help="velocity truncation radius"),
        Key("trunc_margin", "float", help="velocity truncation smoothing margin"),
        Key("sigma_scale", "float", default=0.1, help="individual noise amplitude"),
        Key("drift_value", "float", default=1.0, help="constant/linear kernel coefficient"),
        # discretization
        Key("n_particles", "int", default=8),
        Key("t_final", "float", default=1.0),
        Key("dt", "float", default=0.01),
        Key("scheme", "str", default="euler_ito",
            choices=("euler_ito", "heun_stratonovich")),
        Key("s1_convention", "str", default="half_both",
            choices=("half_both", "paper_literal")),
        Key("master_seed", "int", default=0),
        Key("record_stride", "int", default=1),
        Key("blowup_norm", "float", default=1e6),
        # initial conditions
        Key("init_kind", "str", default="gaussian", choices=("gaussian", "uniform")),
        Key("init_position_scale", "float", default=1.0),
        Key("init_velocity_scale", "float", default=1.0),
        Key("init_scale", "float", default=1.0, help="scale for generic-model states"),
        # Monte-Carlo ensemble
        Key("seeds", "int_list", help="explicit master seeds"),
        Key("n_seeds", "int", help="derive seeds master_seed .. master_seed+n-1"),
        # diagnostics knobs
        Key("rate_tolerance", "float", default=0.25, help="flocking rate slack"),
        Key("fit_start_fraction", "float", default=0.1),
        Key("psi_window", "float", help="compact width for psi_m; observed if absent"),
        Key("n_checkpoints", "int", default=8),
        Key("mean_band", "float", default=4.0, help="martingale-mean band in SEs"),
        Key("var_band", "float", default=5.0, help="variance-match band in SEs"),
        Key("tf_center", "float", default=0.0, help="test-function center"),
        Key("tf_radius", "float", default=2.0, help="test-function radius/width"),
        Key("sizes", "int_list", help="decreasing doubled sizes for cauchy"),
        Key("wasserstein_p", "float", default=2.0),
        Key("n_list", "int_list", help="system sizes for chaos"),
        Key("ref_n", "int", help="chaos reference size (default 8x largest)"),
        Key("n_resamples", "int", default=64),
        Key("radius", "float", default=50.0, help="stopping radius for comparison"),
        Key("comparison_shift", "float", default=0.5,
            help="offset applied to the second initial measure"),
        Key("residual_tolerance", "float", default=1e-10,
            help="transport identity threshold"),
        Key("write_trajectories", "bool", help="force CSV dumps on or off"),
    ]
}

_REQUIRED_BY_KIND = {
    "cauchy": ("sizes",),
    "chaos": ("n_list",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict
    text: str

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def kind(self) -> str:
        return self.values["experiment"]

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def seeds(self) -> list[int]:
        if self.values.get("seeds") is not None:
            return list(self.values["seeds"])
        if self.values.get("n_seeds") is not None:
            base = self.values["master_seed"]
            return [base + i for i in range(self.values["n_seeds"])]
        return [self.values["master_seed"]]


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, Any] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        name, raw_value = (part.strip() for part in line.split("=", 1))
        if name not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key '{name}'")
        if name in values:
            raise ConfigError(f"line {lineno}: duplicate key '{name}'")
        key = SCHEMA[name]
        try:
            value = _PARSERS[key.kind](raw_value)
        except ValueError as exc:
            raise ConfigError(
                f"line {lineno}: field '{name}' expects {key.kind}: {exc}"
            ) from exc
        if key.choices is not None and value not in key.choices:
            raise ConfigError(
                f"line {lineno}: field '{name}' must be one of {key.choices}, got {value!r}"
            )
        values[name] = value

    for key in SCHEMA.values():
        if key.required and key.name not in values:
            raise ConfigError(f"missing required key '{key.name}'")
        if key.name not in values:
            values[key.name] = key.default

    kind = values["experiment"]
    for needed in _REQUIRED_BY_KIND.get(kind, ()):
        if values.get(needed) is None:
            raise ConfigError(f"experiment '{kind}' requires key '{needed}'")
    if values["dt"] <= 0:
        raise ConfigError("field 'dt' must be positive")
    if values["t_final"] <= 0:
        raise ConfigError("field 't_final' must be positive")
    if (values.get("trunc_radius") is None) != (values.get("trunc_margin") is None):
        raise ConfigError("trunc_radius and trunc_margin must be given together")
    return ExperimentConfig(values=values, text=text)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def schema_lines() -> list[str]:
    out = []
    for key in SCHEMA.values():
        parts = [f"{key.name} ({key.kind})"]
        if key.required:
            parts.append("required")
        elif key.default is not None:
            parts.append(f"default={key.default}")
        if key.choices:
            parts.append("choices=" + "|".join(str(c) for c in key.choices))
        if key.help:
            parts.append(key.help)
        out.append("  ".join(parts))
    return out
