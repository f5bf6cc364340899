"""Clustered initial data, coarse-grained couplings, the reduced K-point
flow and merger-time measurements for the two-time-scale picture of a
distance-bias system: fast contraction of each cluster, a long trapped
plateau, then slow merging of cluster centers."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress

from usaav.config import (
    DEFAULT_METASTAB_R0,
    DEFAULT_METASTAB_SIGMA0,
    DEFAULT_PLATEAU_MIN_DURATION,
    UNIT_NORM_TOL,
)
from usaav.analysis.metrics import (
    Partition,
    check_partition,
    cluster_centers,
    cluster_stats,
)
from usaav.core.dynamics import (
    ParticleSystem,
    SimConfig,
    TrajectoryRecord,
    integrate,
    simulate,
)
from usaav.core.kernels import (
    BiasSpec,
    KernelFamily,
    KernelSpec,
    Position,
)
from usaav.core.sphere_geometry import (
    exp_map,
    normalize_rows,
    pairwise_angles,
    project_tangent,
    tangent_basis,
)
from usaav.errors import DimensionError, GeometryError, KernelError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClusterSpec:
    """K clusters: centers, cap radius r0, sizes and separation sigma0.

    sigma0 is accepted up to pi/2; values of pi/4 and above fall outside
    the regime of the trapping estimates and are logged.
    """

    centers: np.ndarray
    sizes: Tuple[int, ...]
    r0: float = DEFAULT_METASTAB_R0
    sigma0: float = DEFAULT_METASTAB_SIGMA0

    def __post_init__(self) -> None:
        C = np.array(self.centers, dtype=float)
        if C.ndim != 2 or C.shape[0] < 2 or C.shape[1] < 2:
            raise DimensionError(
                f"Error: need K >= 2 centers in d >= 2, got {C.shape}."
            )
        if np.max(np.abs(np.linalg.norm(C, axis=1) - 1.0)) > UNIT_NORM_TOL:
            raise GeometryError(
                "Error: cluster centers must be unit vectors."
            )
        sizes = tuple(int(v) for v in self.sizes)
        if len(sizes) != C.shape[0] or min(sizes) < 1:
            raise DimensionError(
                f"Error: need one positive size per center, got {sizes}."
            )
        if not 0.0 <= self.r0 < 0.25:
            raise GeometryError(f"Error: r0={self.r0} outside [0, 1/4).")
        if not 0.0 < self.sigma0 <= math.pi / 2:
            raise GeometryError(
                f"Error: sigma0={self.sigma0} outside (0, pi/2]."
            )
        if self.sigma0 >= math.pi / 4:
            logger.info(
                "sigma0=%.4f is at least pi/4; trapping estimates are "
                "only indicative", self.sigma0,
            )
        angles = pairwise_angles(C)
        min_angle = float(angles[~np.eye(C.shape[0], dtype=bool)].min())
        if min_angle < 2 * self.sigma0 - 1e-12:
            raise GeometryError(
                f"Error: centers {min_angle:.6f} rad apart, need at least "
                f"2 sigma0 = {2 * self.sigma0:.6f}."
            )
        C.setflags(write=False)
        object.__setattr__(self, "centers", C)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def equatorial(
        cls, K: int, size: int, r0: float = DEFAULT_METASTAB_R0,
        sigma0: float = DEFAULT_METASTAB_SIGMA0, d: int = 3,
    ) -> "ClusterSpec":
        """K centers evenly spaced on the circle of the first two axes."""
        phi = 2 * np.pi * np.arange(K) / K
        centers = np.zeros((K, d))
        centers[:, 0] = np.cos(phi)
        centers[:, 1] = np.sin(phi)
        return cls(centers, (size,) * K, r0, sigma0)

    @property
    def K(self) -> int:
        return int(self.centers.shape[0])

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def partition(self) -> List[List[int]]:
        bounds = np.concatenate([[0], np.cumsum(self.sizes)])
        return [
            list(range(bounds[p], bounds[p + 1])) for p in range(self.K)
        ]


def sample_cap(
    center: np.ndarray, radius: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    """`count` points uniform on the geodesic cap of `radius` at `center`.

    Candidates are uniform on the tangent ball and accepted with weight
    (sin r / r)^(d - 2), the Jacobian of the exponential map.
    """
    d = center.size
    if radius == 0.0:
        return np.tile(center, (count, 1))
    basis = tangent_basis(center)
    out = np.empty((count, d))
    filled = 0
    while filled < count:
        direction = rng.standard_normal(d - 1)
        direction /= np.linalg.norm(direction)
        rho = radius * rng.random() ** (1.0 / (d - 1))
        weight = (math.sin(rho) / rho) ** (d - 2) if rho > 0 else 1.0
        if rng.random() > weight:
            continue
        out[filled] = exp_map(center, rho * (direction @ basis))
        filled += 1
    return normalize_rows(out)


def clustered_init(spec: ClusterSpec, rng_seed: int) -> ParticleSystem:
    """Particles in caps of radius r0 around the centers, with positional
    labels s_i = i / n laid out cluster by cluster."""
    rng = np.random.default_rng(rng_seed)
    blocks = [
        sample_cap(c, spec.r0, size, rng)
        for c, size in zip(spec.centers, spec.sizes)
    ]
    X = np.vstack(blocks)
    n = X.shape[0]
    labels = tuple(Position((i + 1) / n) for i in range(n))
    sys = ParticleSystem(X, labels)
    for p, members in enumerate(spec.partition):
        cos = np.clip(X[members] @ spec.centers[p], -1.0, 1.0)
        if np.arccos(cos).max() > spec.r0 + 1e-12:
            raise GeometryError(f"Error: cluster {p} left its cap.")
    return sys


@dataclass(frozen=True)
class CoarseCouplings:
    W: np.ndarray
    w: np.ndarray
    B_par: float
    B_cross: float
    Lambda: float
    lambda_cross: float

    def beta_threshold(self, sigma0: float, r: float) -> float:
        """Smallest beta for which the trapping estimate applies."""
        if self.B_cross == 0.0:
            return 0.0
        return math.log(8 * self.B_cross / (self.B_par * r)) / (
            1.0 - math.cos(sigma0)
        )


def coarse_couplings(b: np.ndarray, partition: Partition) -> CoarseCouplings:
    """Cluster averages W_pq of the bias matrix and the intra/cross
    coupling strengths.

    Args:
        b (np.ndarray): Symmetric nonnegative (n, n) bias matrix b_ij.
        partition (Partition): Disjoint clusters covering 0..n-1.

    Returns:
        CoarseCouplings: W, cluster weights w_p = n_p / n, B_par, B_cross,
        Lambda = max_p sum_q w_q W_pq and
        lambda_cross = min_{p != q} (w_q W_pq + w_p W_qp).
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if b.shape != (n, n):
        raise DimensionError(f"Error: bias matrix has shape {b.shape}.")
    if np.any(b < 0):
        raise KernelError("Error: bias matrix must be nonnegative.")
    parts = check_partition(partition, n)
    K = len(parts)
    W = np.empty((K, K))
    w = np.array([len(p) / n for p in parts])
    for p, Cp in enumerate(parts):
        for q, Cq in enumerate(parts):
            W[p, q] = b[np.ix_(Cp, Cq)].mean()
    B_par = min(
        float(b[np.ix_(Cp, Cp)].sum(axis=1).min()) / n for Cp in parts
    )
    B_cross = 0.0
    lambda_cross = math.inf
    for p, Cp in enumerate(parts):
        for q, Cq in enumerate(parts):
            if p == q:
                continue
            B_cross = max(
                B_cross, float(b[np.ix_(Cp, Cq)].sum(axis=1).max()) / n
            )
            lambda_cross = min(lambda_cross, w[q] * W[p, q] + w[p] * W[q, p])
    Lambda = float(np.max(W @ w))
    return CoarseCouplings(W, w, B_par, B_cross, Lambda, float(lambda_cross))


def bias_matrix(sys: ParticleSystem, bias: BiasSpec) -> np.ndarray:
    s = sys.aux.positions
    return np.asarray(bias(s[:, None], s[None, :]), dtype=float)


def reduced_energy(U: np.ndarray, c: CoarseCouplings, beta: float) -> float:
    E = np.exp(beta * (U @ U.T))
    return float(c.w @ (c.W * E) @ c.w) / (2.0 * beta)


def reduced_velocity(
    U: np.ndarray, c: CoarseCouplings, beta: float
) -> np.ndarray:
    E = np.exp(beta * (U @ U.T))
    return project_tangent(U, ((c.W * E) * c.w[None, :]) @ U)


def reduced_flow(
    centers: np.ndarray, couplings: CoarseCouplings, beta: float,
    cfg: SimConfig,
) -> TrajectoryRecord:
    """Integrates the K-point flow
    du_p/dt = P_{u_p}^perp sum_q w_q W_pq exp(beta <u_p, u_q>) u_q
    with the same projected Heun scheme as the particle system."""
    U0 = normalize_rows(np.array(centers, dtype=float))
    K = U0.shape[0]
    if couplings.W.shape != (K, K):
        raise DimensionError(
            f"Error: {K} centers for couplings of size {couplings.W.shape}."
        )
    record = TrajectoryRecord()

    def evaluate(U: np.ndarray) -> Tuple[float, np.ndarray, float]:
        V = reduced_velocity(U, couplings, beta)
        production = float(couplings.w @ np.sum(V * V, axis=1))
        return reduced_energy(U, couplings, beta), V, production

    def observe(U: np.ndarray) -> Dict[str, Optional[float]]:
        if K < 2:
            return {"theta_min": math.pi}
        angles = pairwise_angles(U)
        return {"theta_min": float(angles[~np.eye(K, dtype=bool)].min())}

    integrate(U0, evaluate, cfg, observe, record)
    return record


def detect_merger(
    trajectory: TrajectoryRecord, angle_threshold: float
) -> Optional[float]:
    """First snapshot time at which min_{p != q} Theta_pq < threshold."""
    theta = trajectory.metric("theta_min")
    hits = np.flatnonzero(theta < angle_threshold)
    if hits.size == 0:
        return None
    return trajectory.times[int(hits[0])]


def center_trajectory(
    record: TrajectoryRecord, partition: Partition
) -> np.ndarray:
    """(snapshots, K, d) cluster centers of a run recorded with states."""
    if len(record.states) != len(record.times):
        raise DimensionError(
            "Error: center trajectory needs record_states=True."
        )
    return np.array([cluster_centers(X, partition) for X in record.states])


def cluster_observer(partition: Partition):
    def observe(sys: ParticleSystem) -> Dict[str, Optional[float]]:
        stats = cluster_stats(sys, partition)
        return {"delta_max": stats.delta_max, "theta_min": stats.theta_min}

    return observe


@dataclass
class BetaReport:
    beta: float
    T_f: Optional[float]
    T_m: Optional[float]
    t_merge: Optional[float]
    trapped: bool
    certificate: bool
    max_center_deviation: Optional[float]
    fitted_C: Optional[float]
    reduced_energy_final: Optional[float]
    delta_gap: Optional[float]
    B_par: float
    B_cross: float
    beta_threshold: float


def trapping_window(
    record: TrajectoryRecord, r: float, sigma0: float
) -> Tuple[Optional[float], Optional[float], bool]:
    """(T_f, T_m, certificate) from the recorded cluster metrics.

    T_f is the first snapshot with max_p Delta_p < 2r; T_m the first
    snapshot after T_f where some Delta_p > 2r or some Theta_pq < sigma0.
    The certificate checks every snapshot in [T_f, T_m).
    """
    times = np.asarray(record.times)
    delta = record.metric("delta_max")
    theta = record.metric("theta_min")
    formed = np.flatnonzero(delta < 2 * r)
    if formed.size == 0:
        return None, None, False
    f = int(formed[0])
    violated = np.flatnonzero((delta[f:] > 2 * r) | (theta[f:] < sigma0))
    end = f + int(violated[0]) if violated.size else times.size
    T_m = float(times[end]) if violated.size else None
    window = slice(f, end)
    certificate = bool(
        np.all(delta[window] <= 2 * r) and np.all(theta[window] >= sigma0)
    )
    return float(times[f]), T_m, certificate


def run_beta(
    spec: ClusterSpec,
    bias: BiasSpec,
    beta: float,
    cfg: SimConfig,
    seed: int,
    r: Optional[float] = None,
    merge_threshold: Optional[float] = None,
    plateau_min: float = DEFAULT_PLATEAU_MIN_DURATION,
) -> Tuple[BetaReport, TrajectoryRecord]:
    """Full simulation and reduced-flow comparison at one beta."""
    r = spec.sigma0 / 8 if r is None else r
    merge_threshold = (
        spec.sigma0 / 2 if merge_threshold is None else merge_threshold
    )
    kernel = KernelSpec(KernelFamily.DISTANCE_BIAS, beta=beta, bias=bias)
    sys0 = clustered_init(spec, seed)
    partition = spec.partition
    couplings = coarse_couplings(bias_matrix(sys0, bias), partition)
    run_cfg = replace(cfg, early_stop=False, record_states=True)
    logger.info("Metastability run at beta=%.3g (n=%d)", beta, sys0.n)
    record = simulate(sys0, kernel, run_cfg, cluster_observer(partition))

    T_f, T_m, certificate = trapping_window(record, r, spec.sigma0)
    t_end = record.times[-1]
    trapped = T_f is not None and (
        (T_m if T_m is not None else t_end) - T_f >= plateau_min
    )
    t_merge = detect_merger(record, merge_threshold)

    deviation = fitted_C = e_reduced = delta_gap = None
    if T_f is not None:
        centers = center_trajectory(record, partition)
        times = np.asarray(record.times)
        f = int(np.searchsorted(times, T_f))
        stop = T_m if T_m is not None else t_end
        span = stop - T_f
        theta_f = pairwise_angles(centers[f])
        delta_gap = float(
            np.min((1.0 - np.cos(theta_f))[~np.eye(spec.K, dtype=bool)])
        )
        if span >= cfg.snapshot_every:
            reduced_cfg = SimConfig(
                dt=cfg.dt, t_final=span, snapshot_every=cfg.snapshot_every,
                early_stop=False, record_states=True,
            )
            reduced = reduced_flow(centers[f], couplings, beta, reduced_cfg)
            count = min(len(reduced.states), times.size - f)
            full = centers[f:f + count]
            red = np.array(reduced.states[:count])
            deviation = float(np.max(np.linalg.norm(full - red, axis=-1)))
            scale = r + math.exp(-beta * (1.0 - math.cos(spec.sigma0)))
            fitted_C = deviation / scale
            e_reduced = reduced.energy[-1]
    report = BetaReport(
        beta=beta, T_f=T_f, T_m=T_m, t_merge=t_merge, trapped=trapped,
        certificate=certificate, max_center_deviation=deviation,
        fitted_C=fitted_C, reduced_energy_final=e_reduced,
        delta_gap=delta_gap, B_par=couplings.B_par,
        B_cross=couplings.B_cross,
        beta_threshold=couplings.beta_threshold(spec.sigma0, r),
    )
    logger.info(
        "beta=%.3g: T_f=%s T_m=%s t_merge=%s", beta, T_f, T_m, t_merge
    )
    return report, record


def _run_beta_task(args) -> BetaReport:
    return run_beta(*args)[0]


@dataclass
class MergerScaling:
    slope: Optional[float]
    intercept: Optional[float]
    r_value: Optional[float]
    exponent_sigma0: float
    exponent_gap: Optional[float]
    ratio_sigma0: Optional[float]
    ratio_gap: Optional[float]


def merger_scaling(
    reports: Sequence[BetaReport], sigma0: float
) -> MergerScaling:
    """Regression of log t_merge on beta, compared with both candidate
    exponents 1 - cos(sigma0) and the mean initial gap delta_gap."""
    pairs = [
        (r.beta, r.t_merge) for r in reports
        if r.t_merge is not None and r.t_merge > 0
    ]
    gaps = [r.delta_gap for r in reports if r.delta_gap is not None]
    exponent_sigma0 = 1.0 - math.cos(sigma0)
    exponent_gap = float(np.mean(gaps)) if gaps else None
    if len(pairs) < 2:
        logger.warning("Fewer than two mergers observed; no regression")
        return MergerScaling(
            None, None, None, exponent_sigma0, exponent_gap, None, None
        )
    betas, times = zip(*pairs)
    fit = linregress(betas, np.log(times))
    slope = float(fit.slope)
    return MergerScaling(
        slope=slope,
        intercept=float(fit.intercept),
        r_value=float(fit.rvalue),
        exponent_sigma0=exponent_sigma0,
        exponent_gap=exponent_gap,
        ratio_sigma0=slope / exponent_sigma0,
        ratio_gap=slope / exponent_gap if exponent_gap else None,
    )


@dataclass
class MetastabilityReport:
    reports: List[BetaReport]
    scaling: MergerScaling

    def to_dict(self) -> Dict[str, object]:
        return {
            "betas": [asdict(r) for r in self.reports],
            "scaling": asdict(self.scaling),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.reports])


def metastability_report(
    spec: ClusterSpec,
    kernel: KernelSpec,
    beta_list: Sequence[float],
    cfg: SimConfig,
    seed: Optional[int] = None,
    workers: int = 1,
    plateau_min: float = DEFAULT_PLATEAU_MIN_DURATION,
) -> MetastabilityReport:
    """Runs one full simulation per beta and collects the time scales.

    `kernel` supplies the bias; its own beta is replaced by each entry of
    `beta_list`. Runs are independent and may execute in parallel.
    """
    if kernel.family is not KernelFamily.DISTANCE_BIAS:
        raise KernelError(
            "Error: metastability needs a distance-bias kernel, got "
            f"{kernel.family.value}."
        )
    seed = cfg.seed if seed is None else seed
    tasks = [
        (spec, kernel.bias, float(beta), cfg, seed, None, None, plateau_min)
        for beta in beta_list
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_beta_task, tasks))
    else:
        reports = [_run_beta_task(t) for t in tasks]
    return MetastabilityReport(reports, merger_scaling(reports, spec.sigma0))
