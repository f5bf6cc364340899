"""Scalar diagnostics of particle snapshots: collapse and gauge gaps,
conditional diameter, relative energy gap, cluster statistics and the
empirical 1-Wasserstein distance."""

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from usaav.config import CLUSTER_MEAN_TOL
from usaav.core.dynamics import ParticleSystem, energy
from usaav.core.kernels import (
    KernelFamily,
    KernelSpec,
    Position,
    Prompt,
    build_kernel,
    label_key,
    toeplitz_spectrum,
    torus_distance,
)
from usaav.core.sphere_geometry import pairwise_angles
from usaav.errors import DimensionError, GeometryError, KernelError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "g_x", "g_q", "d_cond", "delta_e", "delta_max", "theta_min", "w1"
)

Partition = Sequence[Sequence[int]]


@dataclass
class MetricRow:
    g_x: float
    g_q: Optional[float] = None
    d_cond: Optional[float] = None
    delta_e: Optional[float] = None
    delta_max: Optional[float] = None
    theta_min: Optional[float] = None
    w1: Optional[float] = None
    diameters: Optional[List[float]] = None
    center_angles: Optional[List[List[float]]] = None

    def scalars(self) -> Dict[str, Optional[float]]:
        """The fixed CSV columns; list-valued fields are left out."""
        row = asdict(self)
        return {name: row[name] for name in METRIC_COLUMNS}


def _gap(X: np.ndarray) -> float:
    n = X.shape[0]
    if n < 2:
        raise DimensionError(f"Error: collapse gap needs n >= 2, got {n}.")
    # sum_{i != j} <x_i, x_j> = |sum_i x_i|^2 - sum_i |x_i|^2
    total = X.sum(axis=0)
    off_diagonal = float(total @ total) - float(np.sum(X * X))
    return 1.0 - off_diagonal / (n * (n - 1))


def collapse_gap(sys: ParticleSystem) -> float:
    """1 - mean off-diagonal inner product of the content states."""
    return _gap(sys.states)


def gauge_frame(sys: ParticleSystem, k: KernelSpec) -> np.ndarray:
    """Gauge variables q_i of `sys` under the kernel `k`.

    Raises:
        KernelError: unlabeled particles, or a kernel without a gauge
            frame (Toeplitz).
    """
    if "none" in sys.aux.kinds:
        raise KernelError("Error: gauge frame of unlabeled particles.")
    kernel = build_kernel(k)
    if k.family is not KernelFamily.BASELINE:
        kernel.check_labels(sys.aux)
    return kernel.gauge_frame(sys.states, sys.aux)


def gauge_gap(sys: ParticleSystem, k: KernelSpec) -> float:
    return _gap(gauge_frame(sys, k))


def conditional_diameter(sys: ParticleSystem) -> float:
    """Largest geodesic diameter among groups of equal labels."""
    groups: Dict[tuple, List[int]] = defaultdict(list)
    for i, label in enumerate(sys.labels):
        groups[label_key(label)].append(i)
    diameter = 0.0
    for members in groups.values():
        if len(members) < 2:
            continue
        angles = pairwise_angles(sys.states[members])
        diameter = max(diameter, float(angles.max()))
    return diameter


def relative_energy_gap(e_now: float, beta: float, sup_b: float) -> float:
    e_max = sup_b * math.exp(beta) / (2.0 * beta)
    if not e_max > 0:
        raise KernelError(f"Error: energy ceiling {e_max} is not positive.")
    return (e_max - e_now) / e_max


def kernel_energy_ceiling(k: KernelSpec) -> float:
    """Analytic maximum of the discrete energy for the kernel `k`.

    Exponential families: sup_b e^beta / (2 beta). Toeplitz kernels:
    max_m c_hat(m) / 2 over |m| <= M_max, never below the zero of an
    unlisted frequency.
    """
    if k.family is KernelFamily.TOEPLITZ_LINEAR:
        spectrum = toeplitz_spectrum(k.toeplitz_coeffs)  # type: ignore
        return 0.5 * max(spectrum.values())
    return k.sup_b * math.exp(k.beta) / (2.0 * k.beta)


def kernel_energy_gap(e_now: float, k: KernelSpec) -> float:
    """Relative distance to the ceiling; absolute when a Toeplitz ceiling
    is zero."""
    if k.family is KernelFamily.TOEPLITZ_LINEAR:
        e_max = kernel_energy_ceiling(k)
        if e_max == 0.0:
            return -e_now
        return (e_max - e_now) / e_max
    return relative_energy_gap(e_now, k.beta, k.sup_b)


@dataclass
class ClusterStats:
    diameters: np.ndarray
    centers: np.ndarray
    angles: np.ndarray

    @property
    def delta_max(self) -> float:
        return float(self.diameters.max())

    @property
    def theta_min(self) -> float:
        K = self.angles.shape[0]
        if K < 2:
            return math.pi
        return float(self.angles[~np.eye(K, dtype=bool)].min())


def check_partition(partition: Partition, n: int) -> List[List[int]]:
    parts = [list(p) for p in partition]
    if any(len(p) == 0 for p in parts):
        raise GeometryError("Error: partition contains an empty cluster.")
    flat = sorted(i for p in parts for i in p)
    if flat != list(range(n)):
        raise GeometryError(
            f"Error: partition does not cover 0..{n - 1} disjointly."
        )
    return parts


def cluster_centers(X: np.ndarray, partition: Partition) -> np.ndarray:
    centers = []
    for p, members in enumerate(partition):
        mean = X[list(members)].mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm <= CLUSTER_MEAN_TOL:
            raise GeometryError(
                f"Error: cluster {p} has a vanishing mean, its center is "
                f"undefined."
            )
        centers.append(mean / norm)
    return np.array(centers)


def cluster_stats(sys: ParticleSystem, partition: Partition) -> ClusterStats:
    """Diameters, normalized centers and center angles of the clusters."""
    parts = check_partition(partition, sys.n)
    X = sys.states
    diameters = np.array(
        [float(pairwise_angles(X[p]).max()) for p in parts]
    )
    centers = cluster_centers(X, parts)
    angles = pairwise_angles(centers)
    np.fill_diagonal(angles, 0.0)
    # exact symmetry regardless of roundoff in the Gram matrix
    angles = np.triu(angles) + np.triu(angles, 1).T
    return ClusterStats(diameters, centers, angles)


def _label_distance(a, b, periodic: bool) -> float:
    if isinstance(a, Position) and isinstance(b, Position):
        if periodic:
            return float(torus_distance(a.s, b.s))
        return abs(a.s - b.s)
    if isinstance(a, Prompt) and isinstance(b, Prompt):
        return 0.0 if a.index == b.index else 1.0
    return 0.0 if a.kind == b.kind else 1.0


def label_cost(
    sysA: ParticleSystem, sysB: ParticleSystem, periodic: bool = False
) -> np.ndarray:
    """n x n matrix of auxiliary distances d_A(xi_i, zeta_j)."""
    kinds = sysA.aux.kinds | sysB.aux.kinds
    if kinds == {"position"}:
        s = sysA.aux.positions[:, None]
        t = sysB.aux.positions[None, :]
        return torus_distance(s, t) if periodic else np.abs(s - t)
    if kinds == {"prompt"}:
        return (
            sysA.aux.indices[:, None] != sysB.aux.indices[None, :]
        ).astype(float)
    if kinds == {"none"}:
        return np.zeros((sysA.n, sysB.n))
    return np.array(
        [[_label_distance(a, b, periodic) for b in sysB.labels]
         for a in sysA.labels]
    )


def empirical_w1(
    sysA: ParticleSystem, sysB: ParticleSystem, periodic: bool = False
) -> float:
    """Exact W1 between two equal-size empirical laws under
    d((x, xi), (y, zeta)) = |x - y| + d_A(xi, zeta).

    Args:
        sysA (ParticleSystem): First cloud.
        sysB (ParticleSystem): Second cloud, same particle count.
        periodic (bool): Use the torus distance between positions.

    Returns:
        float: The optimal-assignment cost divided by n.
    """
    if sysA.n != sysB.n:
        raise DimensionError(
            f"Error: W1 needs equal particle counts, got {sysA.n} and "
            f"{sysB.n}."
        )
    if sysA.dim != sysB.dim:
        raise DimensionError(
            f"Error: dimension mismatch ({sysA.dim} vs {sysB.dim})."
        )
    cost = cdist(sysA.states, sysB.states) + label_cost(sysA, sysB, periodic)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum()) / sysA.n


def metric_row(
    sys: ParticleSystem,
    k: KernelSpec,
    energy: Optional[float] = None,
    partition: Optional[Partition] = None,
) -> MetricRow:
    """Every metric that applies to `sys` under `k`."""
    row = MetricRow(g_x=collapse_gap(sys))
    if "none" not in sys.aux.kinds:
        try:
            row.g_q = gauge_gap(sys, k)
        except KernelError:
            row.g_q = None
        row.d_cond = conditional_diameter(sys)
    if energy is not None:
        row.delta_e = kernel_energy_gap(energy, k)
    if partition is not None:
        stats = cluster_stats(sys, partition)
        row.diameters = stats.diameters.tolist()
        row.center_angles = stats.angles.tolist()
        row.delta_max = stats.delta_max
        row.theta_min = stats.theta_min
    return row


def make_observer(k: KernelSpec, partition: Optional[Partition] = None):
    """Observer for `simulate`: one scalar metric row per snapshot."""
    def observe(sys: ParticleSystem) -> Dict[str, Optional[float]]:
        return metric_row(sys, k, energy(sys, k), partition).scalars()

    return observe
