"""Experiment drivers: the anti-collapse comparison (exp1), the six
limiting-shape scenarios (exp2), the nested-sample convergence trend
(dobrushin), the metastability beta sweep, single runs and maximizer
reports.

Every cell draws its initial data from counter-based streams keyed by
(master seed, scenario, ..., particle index), so any cell can be re-run in
isolation and reproduces its files bit for bit.
"""

import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.linalg import svd
from scipy.spatial.distance import squareform

from usaav.analysis.maximizers import (
    discrete_circular_quantile,
    energy_ceiling,
    perturbation_sweep,
    phase_field_orbit,
    position_grid,
    projected_gradient_residual,
    prompt_system,
    rope_orbit,
    sample_orbit,
    target_phase_field,
    toeplitz_max_path,
)
from usaav.analysis.metastability import ClusterSpec, metastability_report
from usaav.analysis.metrics import (
    collapse_gap,
    conditional_diameter,
    empirical_w1,
    gauge_frame,
    kernel_energy_ceiling,
    make_observer,
)
from usaav.core.dynamics import ParticleSystem, energy, simulate
from usaav.core.kernels import (
    AuxLabel,
    KernelFamily,
    KernelSpec,
    Position,
    Prompt,
)
from usaav.core.sphere_geometry import (
    OrthogonalGauge,
    RotationPlane,
    geodesic_angle,
    householder_gauge,
    normalize_rows,
    pairwise_angles,
)
from usaav.errors import ConfigError, GeometryError
from usaav.experiment.persistence import (
    AGGREGATE_FILE,
    CELL_FILE,
    FINAL_STATES_FILE,
    TRAJECTORY_FILE,
    aggregate,
    read_cell_hash,
    read_trajectory,
    write_cell_marker,
    write_csv,
    write_final_states,
    write_json,
    write_manifest,
    write_trajectory,
)
from usaav.experiment.settings import ExperimentConfig

logger = logging.getLogger(__name__)

EXP2_MODELS = {
    "baseline": "baseline",
    "distance_bias": "distance_bias",
    "toeplitz": "toeplitz",
    "rope": "rope",
    "generalized_rope": "phase_field",
    "prompt": "prompt",
}


# --- random streams


def stream_key(*parts) -> Tuple[int, ...]:
    """Integer spawn key; strings are mapped through SHA-256."""
    key = []
    for part in parts:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            key.append(int.from_bytes(digest[:4], "big"))
        else:
            key.append(int(part))
    return tuple(key)


def particle_rng(master_seed: int, *key) -> np.random.Generator:
    seq = np.random.SeedSequence(master_seed, spawn_key=stream_key(*key))
    return np.random.default_rng(seq)


def uniform_cloud(master_seed: int, n: int, d: int, *key) -> np.ndarray:
    """n uniform points on S^{d-1}, particle i from its own stream."""
    rows = [
        particle_rng(master_seed, *key, i).standard_normal(d)
        for i in range(n)
    ]
    return normalize_rows(np.array(rows))


# --- initial systems


def exp1_labels(cfg: ExperimentConfig, model: str, n: int) -> List[AuxLabel]:
    """Grid positions for baseline/RoPE, one prompt per position for the
    prompt model with phase theta_l = 2 pi (l - 1) / L and gauge
    R_{theta_l}."""
    m = cfg.kernel.m_per_aux
    L = n // m
    if L * m != n:
        raise ConfigError(f"Error: n={n} not a multiple of m={m}.")
    if model != "prompt":
        return [Position(float(s)) for s in position_grid(L, m)]
    plane = RotationPlane(*cfg.kernel.plane)
    labels: List[AuxLabel] = []
    for ell in range(L):
        theta = 2 * math.pi * ell / L
        gauge = OrthogonalGauge.rotation(theta, cfg.d, plane)
        labels.extend([Prompt(ell + 1, theta, gauge)] * m)
    return labels


def exp1_initial_system(
    cfg: ExperimentConfig, model: str, n: int, seed_index: int
) -> ParticleSystem:
    """States built from a gauge-frame cloud shared by all models of the
    same (n, seed): x = q (baseline), R_{-omega s} q (RoPE), Psi q
    (prompt)."""
    Q = uniform_cloud(cfg.sim.seed, n, cfg.d, "exp1", n, seed_index)
    labels = exp1_labels(cfg, model, n)
    if model == "baseline":
        X = Q
    elif model == "rope":
        s = np.array([lab.s for lab in labels])  # type: ignore[union-attr]
        plane = RotationPlane(*cfg.kernel.plane)
        X = plane.rotate(Q, -cfg.kernel.omega * s)
    elif model == "prompt":
        G = np.array([lab.gauge.matrix for lab in labels])  # type: ignore
        X = np.einsum("nij,nj->ni", G, Q)
    else:
        raise ConfigError(
            f"Error: exp1 models are baseline, rope and prompt, got "
            f"'{model}'."
        )
    return ParticleSystem.from_array(X, labels)


def prompt_targets(k_pr: int, d: int) -> np.ndarray:
    """k_pr points evenly spaced on the equator of the first two axes."""
    phi = 2 * np.pi * np.arange(k_pr) / k_pr
    G = np.zeros((k_pr, d))
    G[:, 0] = np.cos(phi)
    G[:, 1] = np.sin(phi)
    return G


def exp2_prompt_gauges(cfg: ExperimentConfig) -> List[OrthogonalGauge]:
    u_ref = np.eye(cfg.d)[-1]
    return [
        householder_gauge(u_ref, g)
        for g in prompt_targets(cfg.kernel.k_pr, cfg.d)
    ]


def exp2_initial_system(
    cfg: ExperimentConfig, scenario: str, n: int
) -> ParticleSystem:
    """Uniform random states shared by every scenario, with labels on a
    deterministic grid: positions s_l = (l - 1) / L repeated m_per_aux
    times, or k_pr prompts in equal blocks.

    Positions are not drawn at random, so the RoPE and Toeplitz limits
    sample their orbits evenly.
    """
    X = uniform_cloud(cfg.sim.seed, n, cfg.d, "exp2", n)
    if scenario == "prompt":
        gauges = exp2_prompt_gauges(cfg)
        K = len(gauges)
        labels: List[AuxLabel] = []
        for i in range(n):
            p = i * K // n
            labels.append(Prompt(p + 1, 2 * math.pi * p / K, gauges[p]))
        return ParticleSystem(X, tuple(labels))
    m = cfg.kernel.m_per_aux
    s = position_grid(n // m, m) if n % m == 0 else position_grid(n)
    return ParticleSystem(X, tuple(Position(float(v)) for v in s))


# --- cells


@dataclass(frozen=True)
class Cell:
    scenario: str
    model: str
    n: int
    seed_index: int

    @property
    def name(self) -> str:
        return (
            f"{self.scenario}-{self.model}-n{self.n}-seed{self.seed_index:03d}"
        )


def cell_dir(root: str, cell: Cell) -> str:
    return os.path.join(root, "runs", cell.name)


def cell_complete(root: str, cell: Cell, cell_hash: str) -> bool:
    """Outputs present, readable and written under the same cell
    parameters."""
    path = cell_dir(root, cell)
    if read_cell_hash(path) != cell_hash:
        return False
    if read_trajectory(os.path.join(path, TRAJECTORY_FILE)) is None:
        return False
    return os.path.exists(os.path.join(path, FINAL_STATES_FILE))


def run_cell(cfg: ExperimentConfig, cell: Cell, root: str) -> str:
    """Integrates one exp1/single cell and writes its two CSV files and
    the marker."""
    sys0 = exp1_initial_system(cfg, cell.model, cell.n, cell.seed_index)
    k = cfg.kernel.spec(cell.model, cfg.beta)
    logger.info("Running cell %s", cell.name)
    record = simulate(sys0, k, cfg.sim, make_observer(k))
    path = cell_dir(root, cell)
    write_trajectory(record, os.path.join(path, TRAJECTORY_FILE))
    write_final_states(
        record.final_system, os.path.join(path, FINAL_STATES_FILE)
    )
    write_cell_marker(path, cfg.cell_hash, **asdict(cell))
    return path


def _run_cell_task(args) -> str:
    return run_cell(*args)


def run_cells(
    cfg: ExperimentConfig, cells: Sequence[Cell], root: str
) -> List[Cell]:
    """Runs every incomplete cell; complete cells are skipped, cells with
    unreadable or stale output are re-run."""
    todo = []
    for cell in cells:
        if cell_complete(root, cell, cfg.cell_hash):
            logger.info("Skipping complete cell %s", cell.name)
            continue
        if os.path.exists(cell_dir(root, cell)):
            logger.warning("Re-running incomplete cell %s", cell.name)
        todo.append(cell)
    tasks = [(cfg, cell, root) for cell in todo]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(_run_cell_task, tasks))
    else:
        for task in tasks:
            _run_cell_task(task)
    return todo


def cell_outputs(cells: Sequence[Cell]) -> List[str]:
    """Output paths of the given cells plus the aggregate, relative to the
    scenario root."""
    files = [AGGREGATE_FILE]
    for cell in cells:
        for name in (TRAJECTORY_FILE, FINAL_STATES_FILE, CELL_FILE):
            files.append(f"runs/{cell.name}/{name}")
    return files


def snapshot_grid(cfg: ExperimentConfig) -> np.ndarray:
    sim = cfg.sim
    steps = np.arange(0, sim.n_steps + 1, sim.snapshot_stride)
    if steps[-1] != sim.n_steps:
        steps = np.append(steps, sim.n_steps)
    return steps * sim.dt


def extend_to_grid(df: pd.DataFrame, grid: np.ndarray) -> pd.DataFrame:
    """Carries the last snapshot of an early-stopped run forward."""
    base = pd.DataFrame({"time": grid})
    return pd.merge_asof(
        base, df.sort_values("time"), on="time", direction="backward"
    )


def run_exp1(cfg: ExperimentConfig) -> Dict[str, Any]:
    """All (model, n, seed) cells, the aggregate table and the manifest.

    Returns:
        dict: Output root, cell count, the aggregate path and the final
        means per (model, n).
    """
    root = os.path.join(cfg.output_dir, "exp1")
    cells = [
        Cell("exp1", model, n, seed)
        for model in cfg.models
        for n in cfg.n
        for seed in range(cfg.seeds)
    ]
    ran = run_cells(cfg, cells, root)
    grid = snapshot_grid(cfg)
    frames = {}
    for cell in cells:
        df = read_trajectory(
            os.path.join(cell_dir(root, cell), TRAJECTORY_FILE)
        )
        if df is None:
            raise GeometryError(f"Error: cell {cell.name} has no output.")
        frames[(cell.model, cell.n, cell.seed_index)] = extend_to_grid(
            df, grid
        )
    table = aggregate(frames, keys=("model", "n"))
    write_csv(table, os.path.join(root, AGGREGATE_FILE))
    write_manifest(root, cfg.config_hash, files=cell_outputs(cells))
    final = table[table["time"] == grid[-1]]
    summary = {
        "root": root,
        "cells": len(cells),
        "ran": len(ran),
        "aggregate": os.path.join(root, AGGREGATE_FILE),
        "final": final.to_dict(orient="records"),
    }
    logger.info("exp1 finished: %d cells (%d run)", len(cells), len(ran))
    return summary


def run_single(cfg: ExperimentConfig) -> Dict[str, Any]:
    """One cell per model for the first n and seed 0."""
    root = os.path.join(cfg.output_dir, "simulate")
    cells = [Cell("single", model, cfg.n[0], 0) for model in cfg.models]
    for cell in cells:
        run_cell(cfg, cell, root)
    write_manifest(root, cfg.config_hash)
    return {
        "root": root,
        "trajectories": [
            os.path.join(cell_dir(root, c), TRAJECTORY_FILE) for c in cells
        ],
    }


# --- exp2 classification


@dataclass
class ShapeReport:
    scenario: str
    shape: str
    g_x: float
    d_cond: float
    energy: float
    ceiling: float
    clusters: int
    plane_residual: Optional[float] = None
    circle_radius: Optional[float] = None
    target_distance: Optional[float] = None
    design_target_distance: Optional[float] = None
    notes: List[str] = field(default_factory=list)


def angular_clusters(X: np.ndarray, radius: float) -> np.ndarray:
    """Single-linkage labels of the points, cut at angular `radius`."""
    if X.shape[0] < 2:
        return np.ones(X.shape[0], dtype=int)
    A = pairwise_angles(X)
    np.fill_diagonal(A, 0.0)
    A = 0.5 * (A + A.T)
    Z = linkage(squareform(A, checks=False), method="single")
    return fcluster(Z, t=radius, criterion="distance")


def circle_fit(X: np.ndarray) -> Tuple[float, float]:
    """Plane fit through the centroid and radius residual.

    Returns the largest deviation of a point from the fitted circle
    (distance off the plane or off the mean radius) and that radius.
    """
    c = X.mean(axis=0)
    Y = X - c
    _, _, vt = svd(Y, full_matrices=False)
    normal = vt[-1]
    height = Y @ normal
    in_plane = Y - np.outer(height, normal)
    r = np.linalg.norm(in_plane, axis=1)
    radius = float(r.mean())
    residual = float(max(np.abs(height).max(), np.abs(r - radius).max()))
    return residual, radius


def well_separated(X: np.ndarray, labels: np.ndarray, radius: float) -> bool:
    ids = np.unique(labels)
    if ids.size < 2:
        return False
    centers = normalize_rows(
        np.array([X[labels == i].mean(axis=0) for i in ids])
    )
    A = pairwise_angles(centers)
    return bool(A[~np.eye(ids.size, dtype=bool)].min() > 4 * radius)


def classify(
    sys: ParticleSystem, k: KernelSpec, cfg: ExperimentConfig,
    scenario: str = "",
) -> ShapeReport:
    """Dirac, multi-cluster, circle-like, curve, or unclassified."""
    X = sys.states
    g_x = collapse_gap(sys)
    d_cond = conditional_diameter(sys)
    labels = angular_clusters(X, cfg.cluster_radius)
    residual, radius = circle_fit(X)
    report = ShapeReport(
        scenario=scenario, shape="unclassified", g_x=g_x, d_cond=d_cond,
        energy=energy(sys, k), ceiling=kernel_energy_ceiling(k),
        clusters=int(np.unique(labels).size), plane_residual=residual,
        circle_radius=radius,
    )
    if g_x < cfg.dirac_gap:
        report.shape = "dirac"
    elif well_separated(X, labels, cfg.cluster_radius):
        report.shape = "multi-cluster"
    elif residual < cfg.circle_residual:
        report.shape = "circle-like"
        if radius > 1.0 - cfg.circle_residual:
            report.notes.append("great circle")
        else:
            report.notes.append("latitude circle")
    elif d_cond < cfg.curve_diameter:
        report.shape = "curve"
    else:
        logger.warning(
            "Scenario %s unclassified (g_x=%.3g, residual=%.3g, d_cond=%.3g)",
            scenario, g_x, residual, d_cond,
        )
    return report


def prompt_target_distance(
    sys: ParticleSystem, k: KernelSpec, gauges: Sequence[OrthogonalGauge],
    radius: float,
) -> Tuple[float, float]:
    """Largest angle between a found cluster center and its prompt target.

    Targets are Psi_p u_bar with u_bar the normalized mean gauge-frame
    state; the second value uses the design targets Psi_p e_d instead.
    """
    Q = gauge_frame(sys, k)
    u_bar = Q.mean(axis=0)
    u_bar /= np.linalg.norm(u_bar)
    e_ref = np.eye(sys.dim)[-1]
    labels = angular_clusters(sys.states, radius)
    worst = worst_design = 0.0
    for cid in np.unique(labels):
        members = np.flatnonzero(labels == cid)
        center = sys.states[members].mean(axis=0)
        center /= np.linalg.norm(center)
        p = sys.labels[members[0]].index - 1  # type: ignore[union-attr]
        target = gauges[p].matrix @ u_bar
        worst = max(worst, geodesic_angle(center, target))
        worst_design = max(
            worst_design, geodesic_angle(center, gauges[p].matrix @ e_ref)
        )
    return worst, worst_design


def run_exp2(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Final states and the classification report for each scenario."""
    root = os.path.join(cfg.output_dir, "exp2")
    n = cfg.n[0]
    reports = []
    for scenario in cfg.exp2_scenarios:
        if scenario not in EXP2_MODELS:
            raise ConfigError(
                f"Error: unknown exp2 scenario '{scenario}', expected one "
                f"of {sorted(EXP2_MODELS)}."
            )
        k = cfg.kernel.spec(EXP2_MODELS[scenario], cfg.beta)
        sys0 = exp2_initial_system(cfg, scenario, n)
        logger.info("exp2 scenario %s (n=%d)", scenario, n)
        record = simulate(sys0, k, cfg.sim, make_observer(k))
        final = record.final_system
        path = os.path.join(root, "runs", scenario)
        write_trajectory(record, os.path.join(path, TRAJECTORY_FILE))
        write_final_states(final, os.path.join(path, FINAL_STATES_FILE))
        report = classify(final, k, cfg, scenario)
        if scenario == "prompt":
            report.target_distance, report.design_target_distance = (
                prompt_target_distance(
                    final, k, exp2_prompt_gauges(cfg), cfg.cluster_radius
                )
            )
        if k.family is KernelFamily.TOEPLITZ_LINEAR:
            m_star, _ = toeplitz_max_path(k.toeplitz_coeffs, cfg.d)
            report.notes.append(f"m_star={m_star}")
        logger.info("Scenario %s classified %s", scenario, report.shape)
        reports.append(report)
    classification = {r.scenario: asdict(r) for r in reports}
    write_json(classification, os.path.join(root, "classification.json"))
    write_manifest(root, cfg.config_hash)
    return {
        "root": root,
        "shapes": {r.scenario: r.shape for r in reports},
    }


# --- nested convergence


def nested_system(
    cfg: ExperimentConfig, n: int, seed_index: int
) -> ParticleSystem:
    """First n particles of the seed's reference sample: uniform positions
    in (0, 1] and uniform states, one stream per particle."""
    states, labels = [], []
    for i in range(n):
        rng = particle_rng(cfg.sim.seed, "dobrushin", seed_index, i)
        labels.append(Position(1.0 - rng.random()))
        states.append(rng.standard_normal(cfg.d))
    return ParticleSystem.from_array(np.array(states), labels)


def replicate(sys: ParticleSystem, times: int) -> ParticleSystem:
    """Each particle repeated `times` times; the empirical law is kept."""
    idx = np.repeat(np.arange(sys.n), times)
    return sys.subset(idx)


def w1_path(
    small: List[np.ndarray], large: List[np.ndarray],
    sys_small: ParticleSystem, sys_large: ParticleSystem, periodic: bool,
) -> np.ndarray:
    """W1 at every common snapshot, after replication to the lcm size."""
    size = math.lcm(sys_small.n, sys_large.n)
    a, b = size // sys_small.n, size // sys_large.n
    count = min(len(small), len(large))
    out = np.empty(count)
    for t in range(count):
        A = replicate(sys_small.with_states(small[t]), a)
        B = replicate(sys_large.with_states(large[t]), b)
        out[t] = empirical_w1(A, B, periodic=periodic)
    return out


def run_dobrushin(cfg: ExperimentConfig) -> Dict[str, Any]:
    """sup over snapshots of W1(mu^(n), mu^(n_max)) per n and seed."""
    root = os.path.join(cfg.output_dir, "dobrushin")
    model = cfg.models[0] if cfg.models else "rope"
    k = cfg.kernel.spec(model, cfg.beta)
    sim = replace(cfg.sim, early_stop=False, record_states=True)
    rows = []
    for seed in range(cfg.seeds):
        ref0 = nested_system(cfg, cfg.n_max, seed)
        ref = simulate(ref0, k, sim)
        for n in cfg.n:
            sys0 = nested_system(cfg, n, seed)
            run = ref if n == cfg.n_max else simulate(sys0, k, sim)
            w1 = w1_path(run.states, ref.states, sys0, ref0, k.periodic)
            rows.append(
                {
                    "n": n,
                    "seed": seed,
                    "sup_w1": float(w1.max()),
                    "w1_t0": float(w1[0]),
                }
            )
        logger.info("dobrushin seed %d done", seed)
    per_seed = pd.DataFrame(rows)
    grouped = per_seed.groupby("n", sort=True)
    table = pd.DataFrame(
        {
            "sup_w1_mean": grouped["sup_w1"].mean(),
            "sup_w1_sem": grouped["sup_w1"].sem(ddof=1),
            "w1_t0_mean": grouped["w1_t0"].mean(),
            "seeds": grouped.size(),
        }
    ).reset_index()
    write_csv(per_seed, os.path.join(root, "w1_by_seed.csv"))
    write_csv(table, os.path.join(root, "w1_table.csv"))
    write_manifest(root, cfg.config_hash)
    return {"root": root, "table": table.to_dict(orient="records")}


# --- metastability


def metastab_spec(cfg: ExperimentConfig) -> ClusterSpec:
    return ClusterSpec.equatorial(
        cfg.clusters, cfg.cluster_size, cfg.r0, cfg.sigma0, cfg.d
    )


def run_metastab(cfg: ExperimentConfig) -> Dict[str, Any]:
    root = os.path.join(cfg.output_dir, "metastab")
    spec = metastab_spec(cfg)
    k = cfg.kernel.spec("distance_bias", cfg.beta)
    report = metastability_report(
        spec, k, cfg.betas, cfg.sim, seed=cfg.sim.seed, workers=cfg.workers,
        plateau_min=cfg.plateau_min,
    )
    write_json(report.to_dict(), os.path.join(root, "report.json"))
    write_csv(report.to_frame(), os.path.join(root, "report.csv"))
    write_manifest(root, cfg.config_hash)
    return {"root": root, "scaling": asdict(report.scaling)}


# --- maximizers

MAXIMIZER_KINDS = ("rope", "phase_field", "prompt", "toeplitz", "quantile")


def maximizer_system(
    cfg: ExperimentConfig, kind: str, n: int
) -> Tuple[ParticleSystem, KernelSpec]:
    """A constructed maximizer and the kernel it maximizes."""
    d = cfg.d
    u = np.eye(d)[0]
    plane = RotationPlane(*cfg.kernel.plane)
    if kind == "rope":
        k = cfg.kernel.spec("rope", cfg.beta)
        return sample_orbit(rope_orbit(u, k.omega, plane), n), k
    if kind == "phase_field":
        k = cfg.kernel.spec("phase_field", cfg.beta)
        path = phase_field_orbit(u, k.phase_field, plane)  # type: ignore
        return sample_orbit(path, n), k
    if kind == "quantile":
        # two equal atoms at angles 0 and pi
        psi = target_phase_field(discrete_circular_quantile([0.0, math.pi]))
        k = KernelSpec(
            KernelFamily.PHASE_FIELD, beta=cfg.beta, plane=plane,
            phase_field=psi,
        )
        return sample_orbit(phase_field_orbit(u, psi, plane), n), k
    if kind == "prompt":
        k = cfg.kernel.spec("prompt", cfg.beta)
        targets = prompt_targets(cfg.kernel.k_pr, d)
        m = max(1, n // len(targets))
        return prompt_system(targets, np.eye(d)[-1], m=m), k
    if kind == "toeplitz":
        k = cfg.kernel.spec("toeplitz", cfg.beta)
        _, path = toeplitz_max_path(k.toeplitz_coeffs, d)  # type: ignore
        return sample_orbit(path, n), k
    raise ConfigError(
        f"Error: unknown maximizer '{kind}', expected one of "
        f"{list(MAXIMIZER_KINDS)}."
    )


def run_maximizer(
    cfg: ExperimentConfig, kind: str, trials: int = 100
) -> Dict[str, Any]:
    """Sampled maximizer CSV plus its energy/residual report."""
    root = os.path.join(cfg.output_dir, "maximizer", kind)
    sys, k = maximizer_system(cfg, kind, cfg.n[0])
    e = energy(sys, k)
    ceiling = (
        kernel_energy_ceiling(k)
        if k.family is KernelFamily.TOEPLITZ_LINEAR
        else energy_ceiling(k.beta, k.sup_b)
    )
    deltas = perturbation_sweep(sys, k, trials=trials, seed=cfg.sim.seed)
    report = {
        "kind": kind,
        "n": sys.n,
        "beta": k.beta,
        "energy": e,
        "ceiling": ceiling,
        "ceiling_gap": ceiling - e,
        "residual": projected_gradient_residual(sys, k),
        "perturbation_trials": trials,
        "max_perturbation_delta": float(deltas.max()) if trials else None,
    }
    write_final_states(sys, os.path.join(root, "states.csv"))
    write_json(report, os.path.join(root, "report.json"))
    write_manifest(root, cfg.config_hash)
    return report


RUNNERS = {
    "exp1": run_exp1,
    "exp2": run_exp2,
    "dobrushin": run_dobrushin,
    "metastab": run_metastab,
    "single": run_single,
}
