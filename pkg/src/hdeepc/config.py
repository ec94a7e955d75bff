"""Scenario configuration schema (five blocks: plant, controller, loop, partition, output)."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from hdeepc.errors import ConfigInvalid


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MatrixSpec(_Block):
    """Dense matrix with explicit shape."""

    rows: int
    cols: int
    data: list[list[float]]

    @model_validator(mode="after")
    def _shape(self):
        if len(self.data) != self.rows or any(len(r) != self.cols for r in self.data):
            raise ValueError(f"matrix data does not match declared shape {self.rows}x{self.cols}")
        return self

    def array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=float).reshape(self.rows, self.cols)


class TimeVaryingSpec(_Block):
    sd: float = 0.1
    rows: list[int] = []


class DisturbanceSpec(_Block):
    channel: int = 1
    sd: float = 1.0
    window: int = 10


class PlantBlock(_Block):
    builtin: Literal["bess_1a", "bess_1b", "bess_1c", "coupled8", "file"]
    tau_q: Optional[float] = None
    eta: Optional[float] = None
    a: float = 0.9
    b: float = 0.2
    x0: Optional[list[float]] = None
    outputs: Literal["triple", "full"] = "triple"
    model_seed: int = 7
    time_varying: Optional[TimeVaryingSpec] = None
    disturbance: Optional[DisturbanceSpec] = None
    A: Optional[MatrixSpec] = None
    B: Optional[MatrixSpec] = None
    C: Optional[MatrixSpec] = None
    D: Optional[MatrixSpec] = None
    matrix_file: Optional[str] = None

    @model_validator(mode="after")
    def _file(self):
        if self.builtin == "file" and self.matrix_file is None and (self.A is None or self.B is None or self.C is None):
            raise ValueError("file plants need matrix_file or inline A, B, C")
        if self.eta is not None and not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.tau_q is not None and self.tau_q <= 0:
            raise ValueError("tau_q must be positive")
        return self


class BoxSpec(_Block):
    lower: list[Optional[float]]
    upper: list[Optional[float]]

    @model_validator(mode="after")
    def _order(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper need the same length")
        for lo, hi in zip(self.lower, self.upper):
            if lo is not None and hi is not None and lo > hi:
                raise ValueError("lower bound exceeds upper bound")
        return self

    def arrays(self):
        lo = np.array([-np.inf if v is None else v for v in self.lower], dtype=float)
        hi = np.array([np.inf if v is None else v for v in self.upper], dtype=float)
        return lo, hi


class ScpBlock(_Block):
    max_iters: int = 20
    tol: float = 1e-6
    trust_region: Optional[float] = None


class ControllerBlock(_Block):
    variant: Literal["MPC", "DeePC", "HDeePC", "HDeePC_Condensed", "DeePC_Condensed", "NL_HDeePC"]
    N: int
    T_ini: int
    T: int
    Q: list[float]
    R: list[float]
    lambda_g: float = 0.0
    lambda_y: float = 0.0
    g_norm: Literal["L1", "L2sq"] = "L2sq"
    slack_norm: Literal["L1", "L2sq"] = "L2sq"
    slack: bool = False
    u_box: Optional[BoxSpec] = None
    y_box: Optional[BoxSpec] = None
    excitation_scale: Union[float, list[float]] = 1.0
    model_knowledge: Literal["exact", "nominal"] = "exact"
    scp: ScpBlock = ScpBlock()
    eps: float = 1e-8
    max_iter: int = 50000

    @field_validator("N", "T_ini", "T")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("lambda_g", "lambda_y")
    @classmethod
    def _nonneg(cls, v):
        if not np.isfinite(v) or v < 0:
            raise ValueError("must be finite and nonnegative")
        return v


class NoiseBlock(_Block):
    kind: Literal["Gaussian", "Uniform", "None"] = "None"
    scale: Union[float, list[float]] = 0.0


class ObserverBlock(_Block):
    gain: Optional[MatrixSpec] = None
    q: float = 1.0
    r: float = 1e-2
    x_hat0: Optional[list[float]] = None


class LoopBlock(_Block):
    steps: int
    s: int = 1
    noise: NoiseBlock = NoiseBlock()
    seeds: list[int] = [0]
    reference: Union[list[float], list[list[float]]] = []
    state_source: Literal["FullMeasurement", "Observer"] = "FullMeasurement"
    observer: Optional[ObserverBlock] = None
    warm_fill: Literal["excitation", "zeros"] = "excitation"
    warm_scale: Union[float, list[float]] = 1.0
    failure_policy: Literal["hold", "abort"] = "hold"

    @field_validator("steps")
    @classmethod
    def _steps(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v


class PartitionBlock(_Block):
    n_kappa: int = 0
    kappa_outputs: list[int] = []
    known_states: Optional[list[int]] = None
    A_y: Optional[MatrixSpec] = None
    C_y: Optional[MatrixSpec] = None


class OutputBlock(_Block):
    dir: str = "out"
    prefix: str = "run"


class ScenarioConfig(_Block):
    plant: PlantBlock
    controller: ControllerBlock
    loop: LoopBlock
    partition: PartitionBlock = PartitionBlock()
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _cross(self):
        c = self.controller
        if not 1 <= self.loop.s <= max(c.N - 1, 1):
            raise ValueError("loop.s must lie in [1, N-1]")
        if len(c.Q) < 1 or len(c.R) < 1:
            raise ValueError("Q and R diagonals must be non-empty")
        if any(v <= 0 for v in c.R):
            raise ValueError("R diagonal must be positive")
        if any(v < 0 for v in c.Q):
            raise ValueError("Q diagonal must be nonnegative")
        return self


def _offending_key(err: ValidationError) -> str:
    first = err.errors()[0]
    loc = [str(p) for p in first.get("loc", ())]
    return ".".join(loc) if loc else "config"


def parse_config(data: dict, source: str = "<config>") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{source}: top level must be a mapping", "config")
    for block in ("plant", "controller", "loop"):
        if block not in data:
            raise ConfigInvalid(f"{source}: missing required block '{block}'", block)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        key = _offending_key(exc)
        raise ConfigInvalid(f"{source}: invalid value at '{key}': {exc.errors()[0]['msg']}", key) from exc


def load_config(path) -> ScenarioConfig:
    """Read and validate a YAML (or JSON) scenario file. I/O errors propagate as OSError."""
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: not valid YAML ({exc})", "config") from exc
    return parse_config(data, str(path))


def shipped_configs() -> dict[str, Path]:
    root = Path(__file__).parent / "configs"
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}
