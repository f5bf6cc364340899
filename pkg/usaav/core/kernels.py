"""Regular interaction kernels h((x, xi), (y, zeta)) and their content
gradients.

Every family is available twice: as scalar evaluators on one pair of
tokens (`eval_*`, `grad_x`) and as a vectorized `Kernel` that produces a
block of interaction rows and mean ambient forces for the integrator.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import (
    Callable, Dict, FrozenSet, Mapping, Optional, Sequence, Tuple, Union
)

import numpy as np

from usaav.config import (
    DEFAULT_BETA,
    DEFAULT_OMEGA,
    DEFAULT_PHASE_AMPLITUDE,
    DEFAULT_PHASE_FREQUENCY,
    DEFAULT_PHASE_GRID,
    DEFAULT_PHASE_RATE,
    DEFAULT_TOEPLITZ_MAX_FREQ,
    PROMPT_GAUGE_TOL,
)
from usaav.core.sphere_geometry import (
    OrthogonalGauge,
    RotationPlane,
    VectorLike,
    as_array,
)
from usaav.errors import DimensionError, KernelError


# --- auxiliary labels


@dataclass(frozen=True)
class NoLabel:
    kind = "none"


@dataclass(frozen=True)
class Position:
    """Positional label s. The value 0 is admitted as the torus
    representative of 1 so that the grid (l - 1) / L is representable."""

    s: float
    kind = "position"

    def __post_init__(self) -> None:
        if not 0.0 <= self.s <= 1.0:
            raise KernelError(f"Error: position {self.s} outside (0, 1].")


@dataclass(frozen=True, eq=False)
class Prompt:
    """Prompt label: identity, phase and orthogonal gauge Psi(z)."""

    index: int
    phase: float
    gauge: OrthogonalGauge
    kind = "prompt"


AuxLabel = Union[NoLabel, Position, Prompt]


def label_key(label: AuxLabel) -> Tuple:
    """Grouping key: particles with equal keys share an auxiliary value."""
    if isinstance(label, Position):
        return ("position", label.s)
    if isinstance(label, Prompt):
        return ("prompt", label.index)
    return ("none",)


@dataclass(frozen=True, eq=False)
class LabelArrays:
    """Column view of a label list, built once per particle system."""

    kinds: FrozenSet[str]
    positions: np.ndarray
    indices: np.ndarray
    gauges: Optional[np.ndarray]

    @property
    def n(self) -> int:
        return int(self.positions.size)


def label_arrays(labels: Sequence[AuxLabel], d: int) -> LabelArrays:
    n = len(labels)
    positions = np.full(n, np.nan)
    indices = np.full(n, -1, dtype=int)
    gauges = None
    if any(isinstance(lab, Prompt) for lab in labels):
        gauges = np.zeros((n, d, d))
    for i, lab in enumerate(labels):
        if isinstance(lab, Position):
            positions[i] = lab.s
        elif isinstance(lab, Prompt):
            if lab.gauge.dim != d:
                raise DimensionError(
                    f"Error: prompt gauge of dimension {lab.gauge.dim} "
                    f"used with d={d}."
                )
            indices[i] = lab.index
            gauges[i] = lab.gauge.matrix  # type: ignore[index]
    kinds = frozenset(lab.kind for lab in labels)
    return LabelArrays(kinds, positions, indices, gauges)


# --- positional ingredients


def torus_distance(s, t):
    """min(|s - t|, 1 - |s - t|), elementwise."""
    diff = np.abs(np.asarray(s, dtype=float) - np.asarray(t, dtype=float))
    diff = np.mod(diff, 1.0)
    return np.minimum(diff, 1.0 - diff)


@dataclass(frozen=True)
class BiasSpec:
    """Nonnegative positional bias b(s, t).

    kind "exp_decay": b = exp(-lam |s - t|).
    kind "gaussian_torus": b = eps + exp(-dist_T(s, t)^2 / (2 ell^2)).
    """

    kind: str = "exp_decay"
    lam: float = 1.0
    eps: float = 0.0
    ell: float = 0.1

    def __post_init__(self) -> None:
        if self.kind == "exp_decay":
            if self.lam <= 0:
                raise KernelError(
                    f"Error: lambda must be > 0, got {self.lam}."
                )
        elif self.kind == "gaussian_torus":
            if self.eps < 0 or self.ell <= 0:
                raise KernelError(
                    f"Error: need eps >= 0 and ell > 0, got eps={self.eps}, "
                    f"ell={self.ell}."
                )
        else:
            raise KernelError(f"Error: unknown bias kind '{self.kind}'.")

    def __call__(self, s, t):
        if self.kind == "exp_decay":
            diff = np.abs(np.asarray(s, dtype=float) - np.asarray(t, float))
            return np.exp(-self.lam * diff)
        dist = torus_distance(s, t)
        return self.eps + np.exp(-(dist**2) / (2.0 * self.ell**2))

    @property
    def sup(self) -> float:
        return 1.0 if self.kind == "exp_decay" else 1.0 + self.eps

    @property
    def periodic(self) -> bool:
        return self.kind == "gaussian_torus"


@dataclass(frozen=True, eq=False)
class PhaseField:
    """Phase field psi on I, sampled on a grid and linearly interpolated.

    `exact`, when set, is evaluated instead of the grid (used for fields
    with closed forms or jumps, such as quantile functions).
    """

    knots: np.ndarray
    values: np.ndarray
    exact: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def sampled(
        cls, fn: Callable[[np.ndarray], np.ndarray],
        num: int = DEFAULT_PHASE_GRID,
    ) -> "PhaseField":
        knots = np.linspace(0.0, 1.0, num)
        return cls(knots, np.asarray(fn(knots), dtype=float))

    @classmethod
    def from_function(
        cls, fn: Callable[[np.ndarray], np.ndarray],
        num: int = DEFAULT_PHASE_GRID,
    ) -> "PhaseField":
        field_ = cls.sampled(fn, num)
        return cls(field_.knots, field_.values, exact=fn)

    @classmethod
    def linear(cls, rate: float, offset: float = 0.0) -> "PhaseField":
        """psi(s) = offset + rate * s; psi(s) = -omega s recovers RoPE."""
        return cls.from_function(lambda s: offset + rate * np.asarray(s), 2)

    @classmethod
    def sinusoidal(
        cls,
        rate: float = DEFAULT_PHASE_RATE,
        amplitude: float = DEFAULT_PHASE_AMPLITUDE,
        frequency: float = DEFAULT_PHASE_FREQUENCY,
        num: int = DEFAULT_PHASE_GRID,
    ) -> "PhaseField":
        """psi(s) = -(rate s + amplitude sin(2 pi frequency s))."""

        def alpha(s: np.ndarray) -> np.ndarray:
            s = np.asarray(s, dtype=float)
            return -(rate * s + amplitude * np.sin(2 * np.pi * frequency * s))

        return cls.sampled(alpha, num)

    def __call__(self, s):
        if self.exact is not None:
            return self.exact(np.asarray(s, dtype=float))
        return np.interp(s, self.knots, self.values)


def wrap_angle(angle: float) -> float:
    """Representative of angle mod 2 pi in (-pi, pi]."""
    r = math.remainder(float(angle), 2 * math.pi)
    return math.pi if r == -math.pi else r


def phase_offset(psi: PhaseField, s: float, t: float) -> float:
    """g(s, t) = -(psi(t) - psi(s)) mod 2 pi."""
    return wrap_angle(-(float(psi(t)) - float(psi(s))))


ToeplitzCoeffs = Mapping[int, float]


def validate_toeplitz(coeffs: ToeplitzCoeffs) -> Dict[int, float]:
    out = {int(m): float(c) for m, c in coeffs.items()}
    if not out:
        raise KernelError("Error: Toeplitz coefficients are empty.")
    for m, c in out.items():
        if abs(m) > DEFAULT_TOEPLITZ_MAX_FREQ:
            raise KernelError(
                f"Error: frequency {m} exceeds |m| <= "
                f"{DEFAULT_TOEPLITZ_MAX_FREQ}."
            )
        if not math.isfinite(c):
            raise KernelError(f"Error: coefficient c({m}) is not finite.")
        if out.get(-m, 0.0) != c:
            raise KernelError(
                f"Error: coefficients must be symmetric, c({m})={c} but "
                f"c({-m})={out.get(-m, 0.0)}."
            )
    return out


def toeplitz_spectrum(coeffs: ToeplitzCoeffs) -> Dict[int, float]:
    """c_hat(m) for every |m| <= M_max; frequencies not given are zero."""
    given = validate_toeplitz(coeffs)
    M = DEFAULT_TOEPLITZ_MAX_FREQ
    return {m: given.get(m, 0.0) for m in range(-M, M + 1)}


def toeplitz_profile(coeffs: ToeplitzCoeffs, delta):
    """c(delta) = sum_m c_hat(m) cos(2 pi m delta)."""
    delta = np.asarray(delta, dtype=float)
    total = np.zeros_like(delta)
    for m in sorted(coeffs):
        total = total + coeffs[m] * np.cos(2 * np.pi * m * delta)
    return total


# --- kernel description


class KernelFamily(Enum):
    BASELINE = "baseline"
    DISTANCE_BIAS = "distance_bias"
    ROPE = "rope"
    PHASE_FIELD = "phase_field"
    TOEPLITZ_LINEAR = "toeplitz_linear"
    PROMPT_GAUGE = "prompt_gauge"


EXPONENTIAL_FAMILIES = frozenset(
    {
        KernelFamily.BASELINE,
        KernelFamily.DISTANCE_BIAS,
        KernelFamily.ROPE,
        KernelFamily.PHASE_FIELD,
        KernelFamily.PROMPT_GAUGE,
    }
)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Closed description of one kernel family and its parameters."""

    family: KernelFamily
    beta: float = DEFAULT_BETA
    omega: float = DEFAULT_OMEGA
    plane: RotationPlane = field(default_factory=RotationPlane)
    bias: Optional[BiasSpec] = None
    phase_field: Optional[PhaseField] = None
    toeplitz_coeffs: Optional[ToeplitzCoeffs] = None

    def __post_init__(self) -> None:
        if not isinstance(self.family, KernelFamily):
            raise KernelError(f"Error: unknown family {self.family!r}.")
        if not self.beta > 0:
            raise KernelError(f"Error: beta must be > 0, got {self.beta}.")
        if self.family is KernelFamily.DISTANCE_BIAS and self.bias is None:
            raise KernelError("Error: distance-bias kernel needs a bias.")
        if (
            self.family is KernelFamily.PHASE_FIELD
            and self.phase_field is None
        ):
            raise KernelError("Error: phase-field kernel needs a field.")
        if self.family is KernelFamily.TOEPLITZ_LINEAR:
            if self.toeplitz_coeffs is None:
                raise KernelError("Error: Toeplitz kernel needs coefficients.")
            object.__setattr__(
                self, "toeplitz_coeffs",
                validate_toeplitz(self.toeplitz_coeffs),
            )

    @property
    def exponential(self) -> bool:
        return self.family in EXPONENTIAL_FAMILIES

    @property
    def sup_b(self) -> float:
        """Supremum of the positional weight multiplying the content part."""
        if self.family is KernelFamily.DISTANCE_BIAS:
            return self.bias.sup  # type: ignore[union-attr]
        if self.family is KernelFamily.TOEPLITZ_LINEAR:
            coeffs = self.toeplitz_coeffs or {}
            return float(sum(abs(c) for c in coeffs.values()))
        return 1.0

    @property
    def periodic(self) -> bool:
        if self.family is KernelFamily.DISTANCE_BIAS:
            return self.bias.periodic  # type: ignore[union-attr]
        if self.family is KernelFamily.ROPE:
            ratio = self.omega / (2 * math.pi)
            return abs(ratio - round(ratio)) < 1e-12
        return self.family is KernelFamily.TOEPLITZ_LINEAR


# --- scalar evaluators


def _pair(x: VectorLike, y: VectorLike) -> Tuple[np.ndarray, np.ndarray]:
    xa, ya = as_array(x), as_array(y)
    if xa.shape != ya.shape:
        raise DimensionError(
            f"Error: dimension mismatch ({xa.shape} vs {ya.shape})."
        )
    return xa, ya


def eval_baseline(x: VectorLike, y: VectorLike, beta: float) -> float:
    xa, ya = _pair(x, y)
    return math.exp(beta * float(np.dot(xa, ya))) / beta


def eval_rope(
    x: VectorLike, s: float, y: VectorLike, t: float, beta: float,
    omega: float, plane: Optional[RotationPlane] = None,
) -> float:
    xa, ya = _pair(x, y)
    ry = (plane or RotationPlane()).rotate(ya, omega * (t - s))
    return math.exp(beta * float(np.dot(xa, ry))) / beta


def eval_distance_bias(
    x: VectorLike, s: float, y: VectorLike, t: float, beta: float,
    bias: BiasSpec,
) -> float:
    return float(bias(s, t)) * eval_baseline(x, y, beta)


def eval_phase_field(
    x: VectorLike, s: float, y: VectorLike, t: float, beta: float,
    psi: PhaseField, plane: Optional[RotationPlane] = None,
) -> float:
    xa, ya = _pair(x, y)
    ry = (plane or RotationPlane()).rotate(ya, phase_offset(psi, s, t))
    return math.exp(beta * float(np.dot(xa, ry))) / beta


def eval_toeplitz_linear(
    x: VectorLike, s: float, y: VectorLike, t: float,
    coeffs: ToeplitzCoeffs,
) -> float:
    xa, ya = _pair(x, y)
    return float(toeplitz_profile(coeffs, t - s)) * float(np.dot(xa, ya))


def _gauge_matrix(z: Union[Prompt, OrthogonalGauge]) -> np.ndarray:
    gauge = z.gauge if isinstance(z, Prompt) else z
    if gauge.residual() > PROMPT_GAUGE_TOL:
        raise KernelError(
            f"Error: prompt gauge is not orthogonal (residual "
            f"{gauge.residual():.3e})."
        )
    return gauge.matrix


def eval_prompt_gauge(
    x: VectorLike, z: Union[Prompt, OrthogonalGauge],
    y: VectorLike, w: Union[Prompt, OrthogonalGauge], beta: float,
) -> float:
    xa, ya = _pair(x, y)
    gz, gw = _gauge_matrix(z), _gauge_matrix(w)
    inner = float(np.dot(gz.T @ xa, gw.T @ ya))
    return math.exp(beta * inner) / beta


Token = Tuple[VectorLike, AuxLabel]


def _position(label: AuxLabel) -> float:
    if not isinstance(label, Position):
        raise KernelError(
            f"Error: kernel needs positional labels, got {label.kind}."
        )
    return label.s


def _prompt(label: AuxLabel) -> Prompt:
    if not isinstance(label, Prompt):
        raise KernelError(
            f"Error: kernel needs prompt labels, got {label.kind}."
        )
    return label


def evaluate(kernel: KernelSpec, z: Token, w: Token) -> float:
    """h(z, w) for any kernel family."""
    (x, xi), (y, zeta) = z, w
    fam = kernel.family
    if fam is KernelFamily.BASELINE:
        return eval_baseline(x, y, kernel.beta)
    if fam is KernelFamily.DISTANCE_BIAS:
        return eval_distance_bias(
            x, _position(xi), y, _position(zeta), kernel.beta,
            kernel.bias,  # type: ignore[arg-type]
        )
    if fam is KernelFamily.ROPE:
        return eval_rope(
            x, _position(xi), y, _position(zeta), kernel.beta,
            kernel.omega, kernel.plane,
        )
    if fam is KernelFamily.PHASE_FIELD:
        return eval_phase_field(
            x, _position(xi), y, _position(zeta), kernel.beta,
            kernel.phase_field, kernel.plane,  # type: ignore[arg-type]
        )
    if fam is KernelFamily.TOEPLITZ_LINEAR:
        return eval_toeplitz_linear(
            x, _position(xi), y, _position(zeta),
            kernel.toeplitz_coeffs,  # type: ignore[arg-type]
        )
    if fam is KernelFamily.PROMPT_GAUGE:
        return eval_prompt_gauge(
            x, _prompt(xi), y, _prompt(zeta), kernel.beta
        )
    raise KernelError(f"Error: unsupported kernel family {fam}.")


def grad_x(kernel: KernelSpec, z: Token, w: Token) -> np.ndarray:
    """Ambient gradient of h(z, w) in the content of z (no projection)."""
    (x, xi), (y, zeta) = z, w
    xa, ya = _pair(x, y)
    fam = kernel.family
    beta = kernel.beta
    if fam is KernelFamily.TOEPLITZ_LINEAR:
        c = toeplitz_profile(
            kernel.toeplitz_coeffs, _position(zeta) - _position(xi)
        )
        return float(c) * ya
    if fam is KernelFamily.BASELINE:
        target, weight = ya, 1.0
    elif fam is KernelFamily.DISTANCE_BIAS:
        target = ya
        weight = float(kernel.bias(_position(xi), _position(zeta)))
    elif fam is KernelFamily.ROPE:
        angle = kernel.omega * (_position(zeta) - _position(xi))
        target, weight = kernel.plane.rotate(ya, angle), 1.0
    elif fam is KernelFamily.PHASE_FIELD:
        angle = phase_offset(
            kernel.phase_field, _position(xi), _position(zeta)
        )
        target, weight = kernel.plane.rotate(ya, angle), 1.0
    elif fam is KernelFamily.PROMPT_GAUGE:
        gz = _gauge_matrix(_prompt(xi))
        gw = _gauge_matrix(_prompt(zeta))
        target, weight = gz @ (gw.T @ ya), 1.0
    else:
        raise KernelError(f"Error: unsupported kernel family {fam}.")
    return weight * math.exp(beta * float(np.dot(xa, target))) * target


# --- vectorized kernels


class Kernel:
    """Vectorized evaluation of one kernel family on a particle cloud.

    `prepare` maps the states into the frame in which interactions are
    computed; `block` returns, for the rows `rows`, the interaction values
    h_ij (shape (b, n)) and the mean ambient forces
    (1/n) sum_j grad_x h_ij (shape (b, d)).
    """

    requires: Optional[str] = None

    def __init__(self, spec: KernelSpec) -> None:
        self.spec = spec
        self.beta = spec.beta

    def check_labels(self, aux: LabelArrays) -> None:
        if self.requires is None:
            return
        if aux.kinds != {self.requires}:
            raise KernelError(
                f"Error: {self.spec.family.value} kernel needs "
                f"'{self.requires}' labels on every particle, got "
                f"{sorted(aux.kinds)}."
            )

    def prepare(self, X: np.ndarray, aux: LabelArrays) -> np.ndarray:
        return X

    def gauge_frame(self, X: np.ndarray, aux: LabelArrays) -> np.ndarray:
        """Gauge variables q_i in which the kernel becomes the baseline."""
        return self.prepare(X, aux)

    def block(
        self, Q: np.ndarray, aux: LabelArrays, rows: slice
    ) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def pair_matrix(self, X: np.ndarray, aux: LabelArrays) -> np.ndarray:
        self.check_labels(aux)
        H, _ = self.block(self.prepare(X, aux), aux, slice(0, X.shape[0]))
        return H


class ExponentialKernel(Kernel):
    """beta^-1 w_ij exp(beta <q_i, q_j>) in a per-particle gauge frame."""

    def weights(self, aux: LabelArrays, rows: slice) -> Optional[np.ndarray]:
        return None

    def from_gauge(
        self, F: np.ndarray, aux: LabelArrays, rows: slice
    ) -> np.ndarray:
        return F

    def block(self, Q, aux, rows):
        n = Q.shape[0]
        E = np.exp(self.beta * (Q[rows] @ Q.T))
        W = self.weights(aux, rows)
        if W is not None:
            E = W * E
        F = (E @ Q) / n
        return E / self.beta, self.from_gauge(F, aux, rows)


class BaselineKernel(ExponentialKernel):
    pass


class DistanceBiasKernel(ExponentialKernel):
    requires = "position"

    def weights(self, aux, rows):
        s = aux.positions
        return self.spec.bias(s[rows, None], s[None, :])  # type: ignore


class RopeKernel(ExponentialKernel):
    requires = "position"

    def prepare(self, X, aux):
        return self.spec.plane.rotate(X, self.spec.omega * aux.positions)

    def from_gauge(self, F, aux, rows):
        return self.spec.plane.rotate(
            F, -self.spec.omega * aux.positions[rows]
        )


class PhaseFieldKernel(ExponentialKernel):
    requires = "position"

    def prepare(self, X, aux):
        psi = self.spec.phase_field(aux.positions)  # type: ignore[misc]
        return self.spec.plane.rotate(X, -psi)

    def from_gauge(self, F, aux, rows):
        psi = self.spec.phase_field(aux.positions[rows])  # type: ignore
        return self.spec.plane.rotate(F, psi)


class PromptGaugeKernel(ExponentialKernel):
    requires = "prompt"

    def check_labels(self, aux):
        super().check_labels(aux)
        G = aux.gauges
        d = G.shape[-1]  # type: ignore[union-attr]
        gram = np.einsum("nki,nkj->nij", G, G) - np.eye(d)
        residual = np.linalg.norm(gram, axis=(1, 2))
        if residual.max() > PROMPT_GAUGE_TOL:
            worst = int(np.argmax(residual))
            raise KernelError(
                f"Error: prompt gauge of particle {worst} is not orthogonal "
                f"(residual {residual[worst]:.3e})."
            )

    def prepare(self, X, aux):
        return np.einsum("nji,nj->ni", aux.gauges, X)

    def from_gauge(self, F, aux, rows):
        return np.einsum("nij,nj->ni", aux.gauges[rows], F)


class ToeplitzLinearKernel(Kernel):
    """c(s_j - s_i) <x_i, x_j>; it has no gauge frame."""

    requires = "position"

    def gauge_frame(self, X, aux):
        raise KernelError("Error: Toeplitz kernels have no gauge frame.")

    def block(self, Q, aux, rows):
        n = Q.shape[0]
        s = aux.positions
        C = toeplitz_profile(
            self.spec.toeplitz_coeffs, s[None, :] - s[rows, None]
        )
        H = C * (Q[rows] @ Q.T)
        return H, (C @ Q) / n


_KERNELS = {
    KernelFamily.BASELINE: BaselineKernel,
    KernelFamily.DISTANCE_BIAS: DistanceBiasKernel,
    KernelFamily.ROPE: RopeKernel,
    KernelFamily.PHASE_FIELD: PhaseFieldKernel,
    KernelFamily.TOEPLITZ_LINEAR: ToeplitzLinearKernel,
    KernelFamily.PROMPT_GAUGE: PromptGaugeKernel,
}


def build_kernel(spec: KernelSpec) -> Kernel:
    try:
        return _KERNELS[spec.family](spec)
    except KeyError:
        raise KernelError(f"Error: unsupported kernel family {spec.family}.")
