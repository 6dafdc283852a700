"""Experiment configuration: validation, TOML input and output.

Precedence for scalar overrides is command-line flags, then environment
variables (``DAMPWAVE_OUTPUT_DIR``, ``DAMPWAVE_WORKERS``), then the file,
then the defaults below.
"""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Any, Literal

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

KINDS = (
    "spectrum", "scan", "evolve", "avg-estimate", "theorem31",
    "ehrenfest", "mollify", "gcc", "mix-scan", "diag-suite",
)
FAMILIES = ("constant", "zero", "bump", "strip", "hoelder", "cosine", "table")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ManifoldSpec(_Strict):
    kind: Literal["circle", "torus2"] = "circle"
    K: int = Field(16, ge=1, le=512)


class DampingSpec(_Strict):
    family: str = "constant"
    params: dict[str, Any] = Field(default_factory=lambda: {"c": 1.0})

    @field_validator("family")
    @classmethod
    def _family(cls, v: str) -> str:
        if v not in FAMILIES:
            raise ValueError(f"unknown family {v!r}; choose from {', '.join(FAMILIES)}")
        return v


def _positive_grid(v: list[float]) -> list[float]:
    if not v:
        raise ValueError("grid must not be empty")
    if any(not (x > 0 and math.isfinite(x)) for x in v):
        raise ValueError("grid values must be positive and finite")
    return v


def _h_grid(v: list[float]) -> list[float]:
    _positive_grid(v)
    if any(x >= 1 for x in v):
        raise ValueError("h values must lie in (0, 1)")
    return v


class SpectrumParams(_Strict):
    pass


class ScanParams(_Strict):
    s_max: float | None = Field(None, gt=0)
    n: int = Field(401, ge=3, le=200_000)
    refine: bool = False


class EvolveParams(_Strict):
    T: float = Field(20.0, gt=0, le=1e4)
    n_states: int = Field(10, ge=1, le=1000)


class AvgEstimateParams(_Strict):
    eps: float = Field(0.1, gt=0, lt=1)
    T_grid: list[float] = Field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0, 64.0])
    weight: Literal["ramp", "bump", "psi_min"] = "psi_min"
    L: float = Field(2.0, gt=1)
    n_tau: int = Field(200, ge=3, le=20_000)
    scan_points: int = Field(401, ge=3, le=200_000)

    @field_validator("T_grid")
    @classmethod
    def _tg(cls, v):
        return _positive_grid(v)


class Theorem31Params(_Strict):
    h_grid: list[float] = Field(default_factory=lambda: [0.125, 0.0625])
    eps: float = Field(0.25, gt=0, lt=1)
    T: float = Field(4.0, gt=0)
    variants: list[Literal["averaged", "pointwise", "pointwise-opt"]] = Field(
        default_factory=lambda: ["averaged", "pointwise-opt"]
    )
    weight: Literal["bump", "psi_min"] = "psi_min"
    L: float = Field(2.0, gt=1)
    theta: float = Field(1.0, gt=0)
    delta: float = Field(0.5, gt=0, lt=1)

    @field_validator("h_grid")
    @classmethod
    def _hg(cls, v):
        return _h_grid(v)


class EhrenfestParams(_Strict):
    h_grid: list[float] = Field(default_factory=lambda: [0.125, 0.0625])
    mu: float = Field(1.0, gt=0)
    eps: float = Field(0.25, gt=0, lt=1)
    rho: float = Field(0.0, ge=0, lt=0.5)
    nu: float = Field(0.0, ge=0, lt=0.5)
    delta: float = Field(0.5, gt=0, lt=1)
    x0: list[float] = Field(default_factory=lambda: [0.0, 0.0])
    xi0: list[float] = Field(default_factory=lambda: [0.0, 1.0])
    K_rule: Literal["auto", "fixed"] = "auto"

    @field_validator("h_grid")
    @classmethod
    def _hg(cls, v):
        return _h_grid(v)

    @model_validator(mode="after")
    def _unit(self):
        if len(self.x0) != len(self.xi0):
            raise ValueError("x0 and xi0 must have the same length")
        if not math.isclose(math.hypot(*self.xi0), 1.0, rel_tol=1e-12):
            raise ValueError("xi0 must be a unit covector")
        return self


class MollifyParams(_Strict):
    eps_grid: list[float] = Field(default_factory=lambda: [2.0**-k for k in range(3, 9)])
    level_scale: float = Field(2.0, gt=0)
    grid: int | None = Field(None, ge=64, le=2**20)

    @field_validator("eps_grid")
    @classmethod
    def _eg(cls, v):
        _h_grid(v)
        return v


class GCCParams(_Strict):
    T: float = Field(20.0, gt=0)
    n_x: int = Field(64, ge=1, le=4096)
    n_theta: int = Field(256, ge=1, le=65536)


class MixScanParams(_Strict):
    levels: list[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6])


class DiagSuiteParams(_Strict):
    h_grid: list[float] = Field(default_factory=lambda: [0.125, 0.0625, 0.03125])
    t: float = Field(1.0, gt=0)
    nu: float = Field(0.0, ge=0, lt=0.5)

    @field_validator("h_grid")
    @classmethod
    def _hg(cls, v):
        return _h_grid(v)


PARAM_MODELS = {
    "spectrum": SpectrumParams,
    "scan": ScanParams,
    "evolve": EvolveParams,
    "avg-estimate": AvgEstimateParams,
    "theorem31": Theorem31Params,
    "ehrenfest": EhrenfestParams,
    "mollify": MollifyParams,
    "gcc": GCCParams,
    "mix-scan": MixScanParams,
    "diag-suite": DiagSuiteParams,
}


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    manifold: ManifoldSpec = Field(default_factory=ManifoldSpec)
    damping: DampingSpec = Field(default_factory=DampingSpec)
    m: float = Field(1.0, ge=0)
    params: dict[str, Any] = Field(default_factory=dict)
    output_dir: str = "results"
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1, le=256)

    @model_validator(mode="after")
    def _params(self):
        model = PARAM_MODELS[self.kind]
        # normalise to the validated form so the echo lists every default
        self.params = model.model_validate(self.params).model_dump()
        if self.kind == "ehrenfest" and self.manifold.kind != "torus2" and len(self.params["xi0"]) == 2:
            raise ValueError("ehrenfest on the circle needs one-dimensional x0 and xi0")
        return self

    def typed_params(self):
        return PARAM_MODELS[self.kind].model_validate(self.params)


class ConfigError(ValueError):
    """Invalid configuration; the message lists the failing field paths."""


def describe_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "\n".join(lines)


def validate(data: dict) -> ExperimentConfig:
    kind = data.get("kind") if isinstance(data, dict) else None
    if kind in PARAM_MODELS and isinstance(data.get("params", {}), dict):
        try:
            PARAM_MODELS[kind].model_validate(data.get("params", {}))
        except ValidationError as err:
            msg = describe_errors(err)
            raise ConfigError("\n".join("params." + line for line in msg.splitlines())) from None
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(describe_errors(err)) from None


def load(path: str | Path) -> dict:
    """Raw mapping from a TOML file (validation is separate)."""
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from None


def apply_overrides(data: dict, flags: dict, env: dict | None = None) -> dict:
    """Merge environment and flag overrides into a raw mapping.

    ``flags`` maps dotted paths (``"manifold.K"``, ``"params.T"``) to
    values; ``None`` values are ignored.
    """
    env = os.environ if env is None else env
    out = _deep_copy(data)
    if env.get("DAMPWAVE_OUTPUT_DIR"):
        out["output_dir"] = env["DAMPWAVE_OUTPUT_DIR"]
    if env.get("DAMPWAVE_WORKERS"):
        try:
            out["workers"] = int(env["DAMPWAVE_WORKERS"])
        except ValueError:
            raise ConfigError("DAMPWAVE_WORKERS: not an integer") from None
    for key, value in flags.items():
        if value is None:
            continue
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def _deep_copy(d):
    if isinstance(d, dict):
        return {k: _deep_copy(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_deep_copy(v) for v in d]
    return d


# ------------------------------------------------------------ TOML output


def _toml_key(k: str) -> str:
    if k and all(c.isalnum() or c in "-_" for c in k):
        return k
    return _toml_str(k)


def _toml_str(s: str) -> str:
    esc = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{esc}"'


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return _toml_str(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{_toml_key(k)} = {_toml_value(x)}" for k, x in v.items()) + "}"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dumps(data: dict) -> str:
    """Serialise a mapping to TOML; ``None`` entries are omitted."""
    lines: list[str] = []
    tables: list[tuple[str, dict]] = []
    for k, v in data.items():
        if v is None:
            continue
        if isinstance(v, dict):
            tables.append((_toml_key(k), v))
        else:
            lines.append(f"{_toml_key(k)} = {_toml_value(v)}")
    while tables:
        name, tbl = tables.pop(0)
        lines.append("")
        lines.append(f"[{name}]")
        for k, v in tbl.items():
            if v is None:
                continue
            if isinstance(v, dict) and v and all(isinstance(x, dict) for x in v.values()):
                tables.append((f"{name}.{_toml_key(k)}", v))
            else:
                lines.append(f"{_toml_key(k)} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def to_toml(cfg: ExperimentConfig) -> str:
    return dumps(cfg.model_dump())


def from_toml(text: str) -> ExperimentConfig:
    return validate(tomli.loads(text))
