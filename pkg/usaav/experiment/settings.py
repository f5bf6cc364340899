"""Experiment configuration: JSON documents loaded into frozen dataclasses.

Top-level keys: scenario, models, n, seeds, beta, d, sim, kernel,
output_dir, plus the scenario parameters listed on `ExperimentConfig`.
Anything else is rejected.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from usaav.config import (
    DEFAULT_BETA,
    DEFAULT_BIAS_ELL,
    DEFAULT_BIAS_EPS,
    DEFAULT_BIAS_LAMBDA,
    DEFAULT_CIRCLE_RESIDUAL,
    DEFAULT_CLUSTER_RADIUS,
    DEFAULT_CURVE_DIAMETER,
    DEFAULT_DIM,
    DEFAULT_DIRAC_GAP,
    DEFAULT_DOBRUSHIN_MODEL,
    DEFAULT_DOBRUSHIN_N_LIST,
    DEFAULT_DOBRUSHIN_N_MAX,
    DEFAULT_DOBRUSHIN_SEEDS,
    DEFAULT_DOBRUSHIN_T,
    DEFAULT_EXP2_N,
    DEFAULT_EXP2_SCENARIOS,
    DEFAULT_EXP2_T_FINAL,
    DEFAULT_K_PR,
    DEFAULT_M_PER_AUX,
    DEFAULT_METASTAB_BETAS,
    DEFAULT_METASTAB_K,
    DEFAULT_METASTAB_R0,
    DEFAULT_METASTAB_SIGMA0,
    DEFAULT_METASTAB_SIZE,
    DEFAULT_METASTAB_T_FINAL,
    DEFAULT_N_LIST,
    DEFAULT_OMEGA,
    DEFAULT_OUTPUT_PATH,
    DEFAULT_PHASE_AMPLITUDE,
    DEFAULT_PHASE_FREQUENCY,
    DEFAULT_PHASE_RATE,
    DEFAULT_PLANE,
    DEFAULT_PLATEAU_MIN_DURATION,
    DEFAULT_SEEDS,
    DEFAULT_TOEPLITZ_M,
    DEFAULT_WORKERS,
)
from usaav.core.dynamics import SimConfig
from usaav.core.kernels import (
    BiasSpec,
    KernelFamily,
    KernelSpec,
    PhaseField,
    validate_toeplitz,
)
from usaav.core.sphere_geometry import RotationPlane
from usaav.errors import ConfigError, KernelError

logger = logging.getLogger(__name__)

SCENARIOS = ("exp1", "exp2", "dobrushin", "metastab", "single")

# model name -> kernel family
MODELS = {
    "baseline": KernelFamily.BASELINE,
    "distance_bias": KernelFamily.DISTANCE_BIAS,
    "rope": KernelFamily.ROPE,
    "phase_field": KernelFamily.PHASE_FIELD,
    "toeplitz": KernelFamily.TOEPLITZ_LINEAR,
    "prompt": KernelFamily.PROMPT_GAUGE,
}

EXP1_MODELS = ("baseline", "rope", "prompt")

# fields an exp1/single cell depends on beyond its (model, n, seed)
CELL_FIELDS = ("beta", "d", "sim", "kernel")


@dataclass(frozen=True)
class KernelSettings:
    """Kernel parameters shared by every model of an experiment."""

    omega: float = DEFAULT_OMEGA
    plane: Tuple[int, int] = DEFAULT_PLANE
    bias_kind: str = "gaussian_torus"
    bias_lambda: float = DEFAULT_BIAS_LAMBDA
    bias_eps: float = DEFAULT_BIAS_EPS
    bias_ell: float = DEFAULT_BIAS_ELL
    phase_rate: float = DEFAULT_PHASE_RATE
    phase_amplitude: float = DEFAULT_PHASE_AMPLITUDE
    phase_frequency: float = DEFAULT_PHASE_FREQUENCY
    toeplitz: Dict[int, float] = field(
        default_factory=lambda: {DEFAULT_TOEPLITZ_M: 0.5,
                                 -DEFAULT_TOEPLITZ_M: 0.5}
    )
    m_per_aux: int = DEFAULT_M_PER_AUX
    k_pr: int = DEFAULT_K_PR

    def __post_init__(self) -> None:
        if len(self.plane) != 2 or self.plane[0] == self.plane[1]:
            raise ConfigError(f"Error: invalid plane {self.plane}.")
        if self.m_per_aux < 1 or self.k_pr < 1:
            raise ConfigError("Error: m_per_aux and k_pr must be >= 1.")
        try:
            toeplitz = validate_toeplitz(self.toeplitz)
            self.bias()
        except KernelError as e:
            raise ConfigError(str(e)) from e
        object.__setattr__(self, "plane", tuple(self.plane))
        object.__setattr__(self, "toeplitz", toeplitz)

    def bias(self) -> BiasSpec:
        return BiasSpec(
            self.bias_kind, lam=self.bias_lambda, eps=self.bias_eps,
            ell=self.bias_ell,
        )

    def phase_field(self) -> PhaseField:
        return PhaseField.sinusoidal(
            self.phase_rate, self.phase_amplitude, self.phase_frequency
        )

    def spec(self, model: str, beta: float) -> KernelSpec:
        """KernelSpec of one named model."""
        if model not in MODELS:
            raise ConfigError(
                f"Error: unknown model '{model}', expected one of "
                f"{sorted(MODELS)}."
            )
        family = MODELS[model]
        try:
            return KernelSpec(
                family,
                beta=beta,
                omega=self.omega,
                plane=RotationPlane(*self.plane),
                bias=self.bias()
                if family is KernelFamily.DISTANCE_BIAS else None,
                phase_field=self.phase_field()
                if family is KernelFamily.PHASE_FIELD else None,
                toeplitz_coeffs=self.toeplitz
                if family is KernelFamily.TOEPLITZ_LINEAR else None,
            )
        except KernelError as e:
            raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "exp1"
    models: Tuple[str, ...] = EXP1_MODELS
    n: Tuple[int, ...] = tuple(DEFAULT_N_LIST)
    seeds: int = DEFAULT_SEEDS
    beta: float = DEFAULT_BETA
    d: int = DEFAULT_DIM
    sim: SimConfig = field(default_factory=SimConfig)
    kernel: KernelSettings = field(default_factory=KernelSettings)
    output_dir: str = DEFAULT_OUTPUT_PATH
    workers: int = DEFAULT_WORKERS
    # exp2
    exp2_scenarios: Tuple[str, ...] = tuple(DEFAULT_EXP2_SCENARIOS)
    dirac_gap: float = DEFAULT_DIRAC_GAP
    circle_residual: float = DEFAULT_CIRCLE_RESIDUAL
    curve_diameter: float = DEFAULT_CURVE_DIAMETER
    cluster_radius: float = DEFAULT_CLUSTER_RADIUS
    # dobrushin
    n_max: int = DEFAULT_DOBRUSHIN_N_MAX
    # metastab
    betas: Tuple[float, ...] = tuple(DEFAULT_METASTAB_BETAS)
    clusters: int = DEFAULT_METASTAB_K
    cluster_size: int = DEFAULT_METASTAB_SIZE
    sigma0: float = DEFAULT_METASTAB_SIGMA0
    r0: float = DEFAULT_METASTAB_R0
    plateau_min: float = DEFAULT_PLATEAU_MIN_DURATION

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"Error: unknown scenario '{self.scenario}', expected one "
                f"of {list(SCENARIOS)}."
            )
        for model in self.models:
            if model not in MODELS:
                raise ConfigError(f"Error: unknown model '{model}'.")
        if self.seeds < 1:
            raise ConfigError(f"Error: seeds must be >= 1, got {self.seeds}.")
        if not self.n or min(self.n) < 1:
            raise ConfigError(f"Error: invalid n list {self.n}.")
        if not self.beta > 0:
            raise ConfigError(f"Error: beta must be > 0, got {self.beta}.")
        if self.d < 2:
            raise ConfigError(f"Error: d must be >= 2, got {self.d}.")
        if max(self.kernel.plane) >= self.d:
            raise ConfigError(
                f"Error: plane {self.kernel.plane} does not fit d={self.d}."
            )
        if self.workers < 1:
            raise ConfigError("Error: workers must be >= 1.")
        if self.scenario == "dobrushin":
            if list(self.n) != sorted(set(self.n)):
                raise ConfigError(
                    "Error: dobrushin n list must be strictly increasing."
                )
            if self.n_max < max(self.n):
                raise ConfigError("Error: n_max is below the n list.")
        if self.scenario == "exp1":
            for n in self.n:
                if n % self.kernel.m_per_aux:
                    raise ConfigError(
                        f"Error: n={n} is not a multiple of m_per_aux="
                        f"{self.kernel.m_per_aux}."
                    )
        if not self.betas or min(self.betas) <= 0:
            raise ConfigError(f"Error: invalid beta list {self.betas}.")

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["kernel"]["toeplitz"] = {
            str(m): c for m, c in sorted(self.kernel.toeplitz.items())
        }
        return out

    @property
    def config_hash(self) -> str:
        encoded = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(encoded.encode("utf-8")).hexdigest()

    @property
    def cell_hash(self) -> str:
        """Hash of the fields that change a single cell's output; the cell
        grid (models, n, seeds) and the runtime options are left out."""
        data = self.to_dict()
        cell = {key: data[key] for key in CELL_FIELDS}
        encoded = json.dumps(cell, sort_keys=True)
        return hashlib.sha256(encoded.encode("utf-8")).hexdigest()


def default_config(scenario: str = "exp1") -> ExperimentConfig:
    """Defaults of each scenario before any file or flag is applied."""
    if scenario == "exp2":
        return ExperimentConfig(
            scenario="exp2", models=(), n=(DEFAULT_EXP2_N,), seeds=1,
            sim=SimConfig(t_final=DEFAULT_EXP2_T_FINAL),
        )
    if scenario == "dobrushin":
        return ExperimentConfig(
            scenario="dobrushin", models=(DEFAULT_DOBRUSHIN_MODEL,),
            n=tuple(DEFAULT_DOBRUSHIN_N_LIST), seeds=DEFAULT_DOBRUSHIN_SEEDS,
            sim=SimConfig(t_final=DEFAULT_DOBRUSHIN_T, early_stop=False),
        )
    if scenario == "metastab":
        return ExperimentConfig(
            scenario="metastab", models=("distance_bias",), seeds=1,
            kernel=KernelSettings(bias_kind="exp_decay"),
            sim=SimConfig(t_final=DEFAULT_METASTAB_T_FINAL, early_stop=False),
        )
    if scenario == "single":
        return ExperimentConfig(
            scenario="single", models=("baseline",), n=(64,), seeds=1
        )
    if scenario == "exp1":
        return ExperimentConfig(scenario="exp1")
    raise ConfigError(
        f"Error: unknown scenario '{scenario}', expected one of "
        f"{list(SCENARIOS)}."
    )


_TUPLE_FIELDS = ("models", "n", "exp2_scenarios", "betas")


def _check_keys(section: str, data: Dict[str, Any], cls) -> None:
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"Error: unknown {section} keys {unknown}.")


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Builds an ExperimentConfig from a parsed JSON document.

    Keys that are absent keep the defaults of the document's scenario.
    """
    if not isinstance(data, dict):
        raise ConfigError("Error: config must be a JSON object.")
    data = dict(data)
    _check_keys("top-level", data, ExperimentConfig)
    base = default_config(data.get("scenario", "exp1"))
    sim_data = data.pop("sim", None) or {}
    _check_keys("sim", sim_data, SimConfig)
    kernel_data = dict(data.pop("kernel", None) or {})
    _check_keys("kernel", kernel_data, KernelSettings)
    try:
        if "toeplitz" in kernel_data:
            kernel_data["toeplitz"] = {
                int(m): float(c) for m, c in kernel_data["toeplitz"].items()
            }
        if "plane" in kernel_data:
            kernel_data["plane"] = tuple(kernel_data["plane"])
        for key in _TUPLE_FIELDS:
            if key in data:
                value = data[key]
                data[key] = tuple(
                    value if isinstance(value, (list, tuple)) else [value]
                )
        return replace(
            base,
            sim=replace(base.sim, **sim_data),
            kernel=replace(base.kernel, **kernel_data),
            **data,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f"Error: invalid config value ({e}).") from e


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"Error: config file {path} does not exist.")
    with open(path, "r") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Error: {path} is not valid JSON ({e}).")
    logger.info("Loaded config %s", path)
    return config_from_dict(data)


def apply_overrides(
    cfg: ExperimentConfig,
    n: Optional[List[int]] = None,
    beta: Optional[float] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    dt: Optional[float] = None,
    t_final: Optional[float] = None,
    model: Optional[List[str]] = None,
    scenario: Optional[List[str]] = None,
    workers: Optional[int] = None,
    seeds: Optional[int] = None,
) -> ExperimentConfig:
    """Command-line values replace the file values they name.

    `scenario` selects Exp2 scenarios; `seed` sets the master seed.
    """
    changes: Dict[str, Any] = {}
    sim_changes: Dict[str, Any] = {}
    if n is not None:
        changes["n"] = tuple(n)
    if beta is not None:
        changes["beta"] = beta
    if out is not None:
        changes["output_dir"] = out
    if model is not None:
        changes["models"] = tuple(model)
    if scenario is not None:
        changes["exp2_scenarios"] = tuple(scenario)
    if workers is not None:
        changes["workers"] = workers
    if seeds is not None:
        changes["seeds"] = seeds
    if seed is not None:
        sim_changes["seed"] = seed
    if dt is not None:
        sim_changes["dt"] = dt
    if t_final is not None:
        sim_changes["t_final"] = t_final
        sim_changes["snapshot_every"] = min(cfg.sim.snapshot_every, t_final)
    try:
        if sim_changes:
            changes["sim"] = replace(cfg.sim, **sim_changes)
        return replace(cfg, **changes) if changes else cfg
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Error: invalid override ({e}).") from e
