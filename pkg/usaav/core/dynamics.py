"""Finite-particle integrator for the projected ascent flow

    dx_i/dt = P_{x_i}^perp [ (1/n) sum_j grad_x h((x_i, xi_i), (x_j, xi_j)) ]

with frozen auxiliary labels, plus energy and energy-production
diagnostics.
"""

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from usaav.config import (
    ASCENT_TOL,
    DEFAULT_BLOCK_ROWS,
    DEFAULT_DT,
    DEFAULT_MASTER_SEED,
    DEFAULT_SNAPSHOT_EVERY,
    DEFAULT_STOP_REL_TOL,
    DEFAULT_STOP_WINDOW,
    DEFAULT_T_FINAL,
    UNIT_NORM_TOL,
)
from usaav.core.kernels import (
    AuxLabel,
    Kernel,
    KernelSpec,
    LabelArrays,
    NoLabel,
    Position,
    Prompt,
    build_kernel,
    label_arrays,
)
from usaav.core.sphere_geometry import normalize_rows, project_tangent
from usaav.errors import (
    ConfigError,
    DimensionError,
    GeometryError,
    NumericalAbort,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """n paired (content, label) states on S^{d-1}.

    `states` is a read-only (n, d) array whose rows are unit vectors.
    """

    states: np.ndarray
    labels: Tuple[AuxLabel, ...]

    def __post_init__(self) -> None:
        X = np.array(self.states, dtype=float)
        if X.ndim != 2 or X.shape[1] < 2 or X.shape[0] < 1:
            raise DimensionError(
                f"Error: states must have shape (n >= 1, d >= 2), got "
                f"{X.shape}."
            )
        labels = tuple(self.labels)
        if len(labels) != X.shape[0]:
            raise DimensionError(
                f"Error: {len(labels)} labels for {X.shape[0]} states."
            )
        deviation = np.max(np.abs(np.linalg.norm(X, axis=1) - 1.0))
        if not deviation <= UNIT_NORM_TOL:
            raise GeometryError(
                f"Error: states are not unit vectors (max deviation "
                f"{deviation:.3e})."
            )
        X.setflags(write=False)
        object.__setattr__(self, "states", X)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_array(
        cls, X: np.ndarray, labels: Optional[Sequence[AuxLabel]] = None
    ) -> "ParticleSystem":
        """Builds a system after renormalizing the rows of X."""
        X = normalize_rows(np.asarray(X, dtype=float))
        if labels is None:
            labels = [NoLabel()] * X.shape[0]
        return cls(X, tuple(labels))

    @property
    def n(self) -> int:
        return int(self.states.shape[0])

    @property
    def dim(self) -> int:
        return int(self.states.shape[1])

    @cached_property
    def aux(self) -> LabelArrays:
        return label_arrays(self.labels, self.dim)

    def with_states(self, X: np.ndarray) -> "ParticleSystem":
        """Same labels, new states (labels are never modified)."""
        return ParticleSystem(X, self.labels)

    def subset(self, index: Sequence[int]) -> "ParticleSystem":
        idx = list(index)
        return ParticleSystem(
            self.states[idx], tuple(self.labels[i] for i in idx)
        )

    def permuted(self, perm: Sequence[int]) -> "ParticleSystem":
        return self.subset(perm)


@dataclass(frozen=True)
class SimConfig:
    dt: float = DEFAULT_DT
    t_final: float = DEFAULT_T_FINAL
    snapshot_every: float = DEFAULT_SNAPSHOT_EVERY
    stop_window: float = DEFAULT_STOP_WINDOW
    stop_rel_tol: float = DEFAULT_STOP_REL_TOL
    seed: int = DEFAULT_MASTER_SEED
    record_states: bool = False
    early_stop: bool = True

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigError(f"Error: dt must be > 0, got {self.dt}.")
        if not self.dt <= self.snapshot_every <= self.t_final:
            raise ConfigError(
                "Error: need dt <= snapshot_every <= t_final, got "
                f"{self.dt}, {self.snapshot_every}, {self.t_final}."
            )
        if not (self.stop_window > 0 and self.stop_rel_tol > 0):
            raise ConfigError("Error: stop tolerances must be > 0.")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def snapshot_stride(self) -> int:
        return max(1, int(round(self.snapshot_every / self.dt)))

    @property
    def window_steps(self) -> int:
        return max(1, math.ceil(self.stop_window / self.dt - 1e-9))


@dataclass
class TrajectoryRecord:
    """Snapshots of one run: energies, productions, metric rows and,
    optionally, full states."""

    times: List[float] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    production: List[float] = field(default_factory=list)
    metrics: List[Dict[str, Optional[float]]] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    labels: Tuple[AuxLabel, ...] = ()
    step_energy: List[float] = field(default_factory=list)
    ascent_violations: int = 0
    stop_time: Optional[float] = None

    @property
    def final_system(self) -> Optional[ParticleSystem]:
        if not self.states:
            return None
        return ParticleSystem(self.states[-1], self.labels)

    def metric(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if row.get(name) is None else row[name]
             for row in self.metrics],
            dtype=float,
        )

    def to_frame(
        self, columns: Optional[Sequence[str]] = None
    ) -> pd.DataFrame:
        """Table with header time, energy, production, <metric columns>."""
        df = pd.DataFrame(
            {
                "time": self.times,
                "energy": self.energy,
                "production": self.production,
            }
        )
        metric_df = pd.DataFrame(self.metrics)
        if columns is not None:
            metric_df = metric_df.reindex(columns=list(columns))
        if not metric_df.empty:
            df = pd.concat([df, metric_df.astype(float)], axis=1)
        return df


class ForceField:
    """Velocity and energy evaluation for one (kernel, labels) pair.

    Rows are processed in fixed blocks of `block_rows`; each block reads
    the whole state array and writes its own output rows, so the result
    does not depend on how many workers share the blocks.
    """

    def __init__(
        self,
        kernel: KernelSpec,
        labels: LabelArrays,
        workers: int = 1,
        block_rows: int = DEFAULT_BLOCK_ROWS,
    ) -> None:
        self.kernel: Kernel = build_kernel(kernel)
        self.aux = labels
        self.kernel.check_labels(labels)
        self.block_rows = block_rows
        self.workers = max(1, int(workers))
        self._pool: Optional[ThreadPoolExecutor] = None
        if self.workers > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> "ForceField":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def evaluate(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (row sums of h_ij, tangent velocities v_i)."""
        n = X.shape[0]
        Q = self.kernel.prepare(X, self.aux)
        blocks = [
            slice(start, min(start + self.block_rows, n))
            for start in range(0, n, self.block_rows)
        ]
        row_sums = np.empty(n)
        forces = np.empty_like(X)

        def run(rows: slice) -> None:
            H, F = self.kernel.block(Q, self.aux, rows)
            row_sums[rows] = H.sum(axis=1)
            forces[rows] = F

        if self._pool is None or len(blocks) == 1:
            for rows in blocks:
                run(rows)
        else:
            list(self._pool.map(run, blocks))
        return row_sums, project_tangent(X, forces)

    def velocity(self, X: np.ndarray) -> np.ndarray:
        return self.evaluate(X)[1]


def energy_from_rows(row_sums: np.ndarray) -> float:
    n = row_sums.size
    return float(np.sum(row_sums)) / (2.0 * n * n)


def production_from_velocity(V: np.ndarray) -> float:
    return float(np.mean(np.sum(V * V, axis=1)))


def velocity_field(
    sys: ParticleSystem, k: KernelSpec, workers: int = 1
) -> np.ndarray:
    """v_i = P_{x_i}^perp (1/n) sum_j grad_x h(z_i, z_j), self term
    included. Returned as an (n, d) array of tangent vectors."""
    with ForceField(k, sys.aux, workers) as ff:
        return ff.velocity(sys.states)


def energy(sys: ParticleSystem, k: KernelSpec) -> float:
    """(1 / 2n^2) sum_{i,j} h(z_i, z_j), diagonal included."""
    with ForceField(k, sys.aux) as ff:
        return energy_from_rows(ff.evaluate(sys.states)[0])


def energy_production(sys: ParticleSystem, k: KernelSpec) -> float:
    """(1/n) sum_i |v_i|^2, the time derivative of the energy."""
    return production_from_velocity(velocity_field(sys, k))


def heun_step(
    X: np.ndarray,
    velocity: Callable[[np.ndarray], np.ndarray],
    dt: float,
    k1: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Projected Heun step with renormalization after both stages."""
    if k1 is None:
        k1 = velocity(X)
    provisional = normalize_rows(X + dt * k1)
    k2 = velocity(provisional)
    return normalize_rows(X + 0.5 * dt * (k1 + k2))


def step_rk2(
    sys: ParticleSystem, k: KernelSpec, dt: float, workers: int = 1
) -> ParticleSystem:
    if not dt > 0:
        raise ConfigError(f"Error: dt must be > 0, got {dt}.")
    with ForceField(k, sys.aux, workers) as ff:
        return sys.with_states(heun_step(sys.states, ff.velocity, dt))


Observer = Callable[[ParticleSystem], Dict[str, Optional[float]]]


def _check_finite(X: np.ndarray, step: int, t: float) -> None:
    if not np.all(np.isfinite(X)):
        bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
        raise NumericalAbort(
            f"Error: non-finite states at step {step} (t={t:.6g}), "
            f"particles {bad[:10].tolist()}.",
            step=step,
            time=t,
        )


def integrate(
    X0: np.ndarray,
    evaluate: Callable[[np.ndarray], Tuple[float, np.ndarray, float]],
    cfg: SimConfig,
    observe: Callable[[np.ndarray], Dict[str, Optional[float]]],
    record: TrajectoryRecord,
) -> np.ndarray:
    """Shared driver for full and reduced systems.

    `evaluate(X)` returns (energy, velocity, production) at X. The first
    stage of every step reuses the evaluation that produced the energy of
    the current state.
    """
    stride = cfg.snapshot_stride
    window: deque = deque(maxlen=cfg.window_steps + 1)
    X = X0
    e_now, v_now, p_now = evaluate(X)
    for step in range(cfg.n_steps + 1):
        t = step * cfg.dt
        _check_finite(v_now, step, t)
        record.step_energy.append(e_now)
        window.append(e_now)
        if len(record.step_energy) > 1:
            e_prev = record.step_energy[-2]
            if e_now < e_prev - ASCENT_TOL * (1.0 + abs(e_prev)):
                record.ascent_violations += 1
                logger.warning(
                    "Energy decreased at step %d: %.17g -> %.17g",
                    step, e_prev, e_now,
                )
        stop = False
        if cfg.early_stop and len(window) == window.maxlen:
            base = window[0]
            increment = (e_now - base) / max(abs(base), 1e-300)
            stop = increment < cfg.stop_rel_tol
        last = step == cfg.n_steps or stop
        if step % stride == 0 or last:
            record.times.append(t)
            record.energy.append(e_now)
            record.production.append(p_now)
            record.metrics.append(observe(X))
            if cfg.record_states or last:
                record.states.append(np.array(X, copy=True))
            logger.debug("t=%.4f energy=%.17g", t, e_now)
        if last:
            if stop:
                record.stop_time = t
                logger.info("Energy plateau reached, stopping at t=%.4f", t)
            break
        X_next = heun_step(X, lambda Y: evaluate(Y)[1], cfg.dt, k1=v_now)
        _check_finite(X_next, step, t)
        X = X_next
        e_now, v_now, p_now = evaluate(X)
    return X


def simulate(
    sys: ParticleSystem,
    k: KernelSpec,
    cfg: SimConfig,
    observer: Optional[Observer] = None,
    workers: int = 1,
) -> TrajectoryRecord:
    """Integrates to cfg.t_final or until the energy plateaus.

    Snapshots are taken every cfg.snapshot_every time units and at the
    final step; the final state is always kept in `states`.
    """
    record = TrajectoryRecord(labels=sys.labels)

    def observe(X: np.ndarray) -> Dict[str, Optional[float]]:
        if observer is None:
            return {}
        return observer(sys.with_states(X))

    with ForceField(k, sys.aux, workers) as ff:

        def evaluate(X: np.ndarray) -> Tuple[float, np.ndarray, float]:
            rows, V = ff.evaluate(X)
            return energy_from_rows(rows), V, production_from_velocity(V)

        integrate(sys.states, evaluate, cfg, observe, record)
    if record.ascent_violations:
        logger.warning(
            "%d energy ascent violations in this run",
            record.ascent_violations,
        )
    return record


def label_kind(label: AuxLabel) -> str:
    return label.kind


def label_value(label: AuxLabel) -> float:
    if isinstance(label, Position):
        return label.s
    if isinstance(label, Prompt):
        return float(label.index)
    return float("nan")
