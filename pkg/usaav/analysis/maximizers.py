"""Closed-form energy maximizers and variational checks.

Orbit constructions (RoPE orbits, phase-field orbits, Toeplitz frequency
paths, prompt gauges) saturate the analytic energy ceiling; `diracize`
improves a discrete joint law by replacing conditionals with point
masses; the residual and perturbation helpers check optimality.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from usaav.config import (
    DEFAULT_DIRACIZE_MAX_SWEEPS,
    DEFAULT_PERTURB_MAGNITUDE,
    DEFAULT_PERTURB_TRIALS,
    DEFAULT_MASTER_SEED,
)
from usaav.core.dynamics import ParticleSystem, energy, velocity_field
from usaav.core.kernels import (
    AuxLabel,
    KernelSpec,
    PhaseField,
    Position,
    Prompt,
    ToeplitzCoeffs,
    build_kernel,
    label_arrays,
    toeplitz_spectrum,
)
from usaav.core.sphere_geometry import (
    OrthogonalGauge,
    RotationPlane,
    VectorLike,
    as_array,
    householder_gauge,
    normalize_rows,
    project_tangent,
)
from usaav.errors import DimensionError, GeometryError, KernelError

logger = logging.getLogger(__name__)


class OrbitKind(Enum):
    ROPE_ORBIT = "rope_orbit"
    PHASE_FIELD = "phase_field"
    TOEPLITZ_CIRCLE = "toeplitz_circle"
    CONSTANT = "constant"


@dataclass(frozen=True, eq=False)
class OrbitPath:
    """A path s -> x(s) on the sphere, evaluated on arrays of positions."""

    kind: OrbitKind
    sample_fn: Callable[[np.ndarray], np.ndarray]
    params: Dict[str, object] = field(default_factory=dict)

    def __call__(self, s) -> np.ndarray:
        """(L, d) array of path points at the positions `s`."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return normalize_rows(self.sample_fn(s))


def _unit(u: VectorLike) -> np.ndarray:
    ua = np.array(as_array(u), dtype=float)
    norm = np.linalg.norm(ua)
    if abs(norm - 1.0) > 1e-12:
        raise GeometryError(f"Error: |u| = {norm}, expected a unit vector.")
    return ua


def constant_path(u: VectorLike) -> OrbitPath:
    ua = _unit(u)
    return OrbitPath(
        OrbitKind.CONSTANT,
        lambda s: np.tile(ua, (s.size, 1)),
        {"u": ua.tolist()},
    )


def rope_orbit(
    u: VectorLike, omega: float, plane: Optional[RotationPlane] = None
) -> OrbitPath:
    """s -> R_{-omega s} u, which maximizes the RoPE energy."""
    ua = _unit(u)
    plane = plane or RotationPlane()
    plane.validate(ua.size)
    return OrbitPath(
        OrbitKind.ROPE_ORBIT,
        lambda s: plane.rotate(np.tile(ua, (s.size, 1)), -omega * s),
        {"u": ua.tolist(), "omega": omega},
    )


def phase_field_orbit(
    u: VectorLike, psi: PhaseField, plane: Optional[RotationPlane] = None
) -> OrbitPath:
    """s -> R_{psi(s)} u, which maximizes the phase-field energy."""
    ua = _unit(u)
    plane = plane or RotationPlane()
    plane.validate(ua.size)
    return OrbitPath(
        OrbitKind.PHASE_FIELD,
        lambda s: plane.rotate(np.tile(ua, (s.size, 1)), psi(s)),
        {"u": ua.tolist()},
    )


def target_phase_field(
    quantile: Callable[[np.ndarray], np.ndarray], check_points: int = 4097
) -> PhaseField:
    """Phase field psi = quantile of a circular law on the angle [0, 2 pi).

    Pushing uniform positions through s -> R_{psi(s)} u realizes the law
    exactly. The quantile must be non-decreasing; this is checked on a
    uniform grid of `check_points` positions.
    """
    grid = np.linspace(0.0, 1.0, check_points)
    values = np.asarray(quantile(grid), dtype=float)
    if values.shape != grid.shape or not np.all(np.isfinite(values)):
        raise KernelError("Error: quantile must return finite angles.")
    if np.any(np.diff(values) < 0):
        bad = int(np.argmax(np.diff(values) < 0))
        raise KernelError(
            f"Error: quantile is not monotone near s={grid[bad]:.6g}."
        )
    return PhaseField(grid, values, exact=quantile)


def discrete_circular_quantile(
    angles: Sequence[float], weights: Optional[Sequence[float]] = None
) -> Callable[[np.ndarray], np.ndarray]:
    """Right-continuous quantile of a law with atoms at `angles`."""
    a = np.asarray(angles, dtype=float)
    order = np.argsort(a, kind="stable")
    a = a[order]
    if weights is None:
        w = np.full(a.size, 1.0 / a.size)
    else:
        w = np.asarray(weights, dtype=float)[order]
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise KernelError("Error: atom weights must be a probability.")
    cumulative = np.cumsum(w)

    def quantile(s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(cumulative, np.asarray(s), side="right")
        return a[np.minimum(idx, a.size - 1)]

    return quantile


def position_grid(L: int, m: int = 1) -> np.ndarray:
    """s_l = (l - 1) / L for l = 1..L, each repeated m times."""
    if L < 1 or m < 1:
        raise DimensionError(f"Error: need L, m >= 1, got L={L}, m={m}.")
    return np.repeat(np.arange(L) / L, m)


def sample_orbit(path: OrbitPath, L: int, m: int = 1) -> ParticleSystem:
    s = position_grid(L, m)
    labels = tuple(Position(float(v)) for v in s)
    return ParticleSystem(path(s), labels)


def prompt_gauge_family(
    targets: Sequence[VectorLike], u: VectorLike
) -> List[OrthogonalGauge]:
    """Householder gauges Psi_p with Psi_p u = G(p), one per prompt."""
    ua = _unit(u)
    return [householder_gauge(ua, _unit(g)) for g in targets]


def prompt_system(
    targets: Sequence[VectorLike], u: VectorLike, m: int = 1,
    phases: Optional[Sequence[float]] = None,
) -> ParticleSystem:
    """m particles per prompt, placed at x = Psi(z) u."""
    gauges = prompt_gauge_family(targets, u)
    L = len(gauges)
    if phases is None:
        phases = [2 * math.pi * p / L for p in range(L)]
    labels: List[AuxLabel] = []
    states = []
    for p, gauge in enumerate(gauges):
        x = gauge.matrix @ _unit(u)
        for _ in range(m):
            labels.append(Prompt(p + 1, float(phases[p]), gauge))
            states.append(x)
    return ParticleSystem.from_array(np.array(states), labels)


def best_frequency(coeffs: ToeplitzCoeffs) -> int:
    """argmax c_hat(m) over |m| <= M_max with unlisted frequencies at zero;
    ties go to the smallest |m|, then to m >= 0."""
    spectrum = toeplitz_spectrum(coeffs)
    top = max(spectrum.values())
    winners = [m for m, c in spectrum.items() if c == top]
    return min(winners, key=lambda m: (abs(m), m < 0))


def toeplitz_max_path(
    coeffs: ToeplitzCoeffs, d: int = 3
) -> Tuple[int, OrbitPath]:
    m_star = best_frequency(coeffs)
    if d < 2:
        raise DimensionError(f"Error: need d >= 2, got {d}.")
    if m_star == 0:
        return m_star, constant_path(np.eye(d)[0])

    def circle(s: np.ndarray) -> np.ndarray:
        out = np.zeros((s.size, d))
        out[:, 0] = np.cos(2 * np.pi * m_star * s)
        out[:, 1] = np.sin(2 * np.pi * m_star * s)
        return out

    return m_star, OrbitPath(
        OrbitKind.TOEPLITZ_CIRCLE, circle, {"m_star": m_star}
    )


def energy_ceiling(beta: float, sup_b: float = 1.0) -> float:
    if not beta > 0:
        raise KernelError(f"Error: beta must be > 0, got {beta}.")
    return sup_b * math.exp(beta) / (2.0 * beta)


def projected_gradient_residual(sys: ParticleSystem, k: KernelSpec) -> float:
    """max_i |P_{x_i}^perp F_i|, the first-order optimality residual."""
    V = velocity_field(sys, k)
    return float(np.max(np.linalg.norm(V, axis=1)))


def perturbation_sweep(
    sys: ParticleSystem,
    k: KernelSpec,
    trials: int = DEFAULT_PERTURB_TRIALS,
    magnitude: float = DEFAULT_PERTURB_MAGNITUDE,
    seed: int = DEFAULT_MASTER_SEED,
) -> np.ndarray:
    """Energy change under random tangent perturbations of every particle.

    Each trial draws from its own stream spawned from `seed`, so trials can
    be evaluated in any order.

    Returns:
        np.ndarray: E(perturbed) - E(sys) for each trial.
    """
    base = energy(sys, k)
    deltas = np.empty(trials)
    for t, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.default_rng(child)
        noise = project_tangent(
            sys.states, rng.standard_normal(sys.states.shape)
        )
        noise = magnitude * normalize_rows(noise)
        moved = sys.with_states(normalize_rows(sys.states + noise))
        deltas[t] = energy(moved, k) - base
    logger.debug(
        "Perturbation sweep: %d trials, max delta %.3e", trials, deltas.max()
    )
    return deltas


def path_energy(path: OrbitPath, k: KernelSpec, L: int) -> float:
    return energy(sample_orbit(path, L), k)


def constant_path_dominates(
    k: KernelSpec, candidates: Sequence[OrbitPath], L: int = 64,
    tol: float = 1e-12,
) -> Tuple[bool, Dict[str, float]]:
    """Compares a constant path with each candidate under `k`.

    For a nonnegative distance-bias kernel a constant path attains the
    largest sampled energy.
    """
    d = len(candidates[0](np.zeros(1))[0]) if candidates else 3
    const = path_energy(constant_path(np.eye(d)[-1]), k, L)
    energies = {"constant": const}
    dominates = True
    for i, path in enumerate(candidates):
        e = path_energy(path, k, L)
        energies[f"{path.kind.value}_{i}"] = e
        if e > const + tol:
            dominates = False
    return dominates, energies


# --- discrete joint laws


@dataclass(frozen=True, eq=False)
class DiscreteJointLaw:
    """Finitely supported law rho(d xi) mu^xi(dx).

    Auxiliary point a carries weight `aux_weights[a]`, a grid
    `grids[a]` of shape (G_a, d) and conditional weights
    `conditionals[a]` of shape (G_a,).
    """

    aux: Tuple[AuxLabel, ...]
    aux_weights: np.ndarray
    grids: Tuple[np.ndarray, ...]
    conditionals: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        A = len(self.aux)
        if not (len(self.grids) == len(self.conditionals) == A) or A == 0:
            raise DimensionError(
                "Error: aux, grids and conditionals must be nonempty and "
                "of equal length."
            )
        w = np.asarray(self.aux_weights, dtype=float)
        if w.shape != (A,) or abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise GeometryError("Error: aux weights must be a probability.")
        dims = set()
        for a, (grid, cond) in enumerate(zip(self.grids, self.conditionals)):
            if grid.ndim != 2 or grid.shape[0] == 0:
                raise GeometryError(f"Error: grid {a} is empty.")
            dims.add(grid.shape[1])
            if cond.shape != (grid.shape[0],) or np.any(cond < 0):
                raise GeometryError(f"Error: bad conditional at {a}.")
            if abs(cond.sum() - 1.0) > 1e-12:
                raise GeometryError(
                    f"Error: conditional {a} sums to {cond.sum()}."
                )
        if len(dims) != 1:
            raise DimensionError("Error: grids have different dimensions.")

    @property
    def offsets(self) -> np.ndarray:
        sizes = [g.shape[0] for g in self.grids]
        return np.concatenate([[0], np.cumsum(sizes)])

    def point_weights(self) -> np.ndarray:
        return np.concatenate(
            [w * c for w, c in zip(self.aux_weights, self.conditionals)]
        )

    def with_conditional(self, a: int, cond: np.ndarray) -> "DiscreteJointLaw":
        conds = list(self.conditionals)
        conds[a] = cond
        return DiscreteJointLaw(
            self.aux, self.aux_weights, self.grids, tuple(conds)
        )

    def is_dirac(self, a: int) -> bool:
        return int(np.count_nonzero(self.conditionals[a])) == 1


def _interaction_matrix(law: DiscreteJointLaw, k: KernelSpec) -> np.ndarray:
    X = np.vstack(law.grids)
    labels = [
        lab for lab, g in zip(law.aux, law.grids) for _ in range(g.shape[0])
    ]
    aux = label_arrays(labels, X.shape[1])
    return build_kernel(k).pair_matrix(normalize_rows(X), aux)


def joint_law_energy(
    law: DiscreteJointLaw, k: KernelSpec,
    H: Optional[np.ndarray] = None,
) -> float:
    """(1/2) sum over pairs of grid points of p_i p_j h_ij."""
    if H is None:
        H = _interaction_matrix(law, k)
    p = law.point_weights()
    return 0.5 * float(p @ H @ p)


def dirac_candidates(
    law: DiscreteJointLaw, H: np.ndarray, a: int
) -> np.ndarray:
    """Energy of the law after replacing conditional a by each point mass,
    up to a constant shared by all candidates.

    Phi_a(x) = (1/2) w_a^2 h(x, x) + w_a sum_{b != a} w_b E_b[h(x, .)].
    """
    off = law.offsets
    block = slice(off[a], off[a + 1])
    p = law.point_weights()
    p_others = p.copy()
    p_others[block] = 0.0
    w = float(law.aux_weights[a])
    external = H[block] @ p_others
    return 0.5 * w * w * np.diag(H[block, block]) + w * external


def diracize(
    law: DiscreteJointLaw,
    k: KernelSpec,
    max_sweeps: int = DEFAULT_DIRACIZE_MAX_SWEEPS,
) -> DiscreteJointLaw:
    """Coordinate ascent over conditionals towards point masses.

    Each auxiliary point in turn receives the point mass with the largest
    potential Phi_a (lowest grid index on ties). The energy after placing
    that point mass equals Phi_a(x) plus a term that does not depend on x,
    so ranking by Phi_a is ranking by exact energy; the exact energies are
    then compared to accept the move. A spread conditional is replaced
    whenever that does not lower the energy; a point mass moves only on a
    strict improvement. Sweeps repeat until nothing changes, so the result
    is a coordinate-wise maximum among Dirac assignments.
    """
    H = _interaction_matrix(law, k)
    current = law
    e_now = joint_law_energy(current, k, H)
    for sweep in range(max_sweeps):
        changed = False
        for a in range(len(current.aux)):
            phi = dirac_candidates(current, H, a)
            best = int(np.argmax(phi))
            cond = np.zeros_like(current.conditionals[a])
            cond[best] = 1.0
            if np.array_equal(cond, current.conditionals[a]):
                continue
            trial = current.with_conditional(a, cond)
            e_trial = joint_law_energy(trial, k, H)
            if current.is_dirac(a):
                accept = e_trial > e_now
            else:
                accept = e_trial >= e_now
            if accept:
                current, e_now, changed = trial, e_trial, True
            elif not current.is_dirac(a):
                logger.warning(
                    "Point mass at aux %d would lower the energy; "
                    "conditional kept", a,
                )
        if not changed:
            logger.debug("diracize converged after %d sweeps", sweep + 1)
            return current
    logger.warning("diracize stopped after %d sweeps", max_sweeps)
    return current
