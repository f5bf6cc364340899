import itertools
import math
import unittest

import numpy as np

from usaav.analysis.maximizers import (
    DiscreteJointLaw,
    OrbitKind,
    best_frequency,
    constant_path,
    constant_path_dominates,
    diracize,
    discrete_circular_quantile,
    energy_ceiling,
    joint_law_energy,
    path_energy,
    perturbation_sweep,
    phase_field_orbit,
    position_grid,
    projected_gradient_residual,
    prompt_gauge_family,
    prompt_system,
    rope_orbit,
    sample_orbit,
    target_phase_field,
    toeplitz_max_path,
)
from usaav.core.dynamics import ParticleSystem, energy
from usaav.core.kernels import (
    BiasSpec,
    KernelFamily,
    KernelSpec,
    NoLabel,
    PhaseField,
    Position,
)
from usaav.core.sphere_geometry import fibonacci_sphere, uniform_sphere
from usaav.errors import DimensionError, GeometryError, KernelError

E0 = np.array([1.0, 0.0, 0.0])


class TestOrbits(unittest.TestCase):
    def test_rope_orbit_saturates_ceiling(self):
        beta = 1.5
        k = KernelSpec(KernelFamily.ROPE, beta=beta)
        sys = sample_orbit(rope_orbit(E0, k.omega), 32)
        self.assertAlmostEqual(
            energy(sys, k), energy_ceiling(beta), places=12
        )
        self.assertLess(projected_gradient_residual(sys, k), 1e-12)

    def test_phase_field_orbit_saturates_ceiling(self):
        psi = PhaseField.sinusoidal()
        k = KernelSpec(KernelFamily.PHASE_FIELD, beta=1.0, phase_field=psi)
        sys = sample_orbit(phase_field_orbit(E0, psi), 16, m=2)
        self.assertEqual(sys.n, 32)
        self.assertAlmostEqual(energy(sys, k), energy_ceiling(1.0), places=12)

    def test_orbit_needs_unit_vector(self):
        with self.assertRaises(GeometryError):
            rope_orbit([1.0, 1.0, 0.0], 1.0)

    def test_constant_path(self):
        path = constant_path(E0)
        self.assertIs(path.kind, OrbitKind.CONSTANT)
        np.testing.assert_array_equal(path([0.1, 0.9]), [E0, E0])

    def test_position_grid(self):
        np.testing.assert_allclose(
            position_grid(4, 2), [0, 0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75]
        )
        with self.assertRaises(DimensionError):
            position_grid(0)


class TestQuantiles(unittest.TestCase):
    def test_discrete_quantile(self):
        q = discrete_circular_quantile([math.pi, 0.0])
        np.testing.assert_allclose(
            q(np.array([0.0, 0.3, 0.5, 0.9, 1.0])),
            [0.0, 0.0, math.pi, math.pi, math.pi],
        )

    def test_weighted_quantile(self):
        q = discrete_circular_quantile([0.0, 1.0], weights=[0.25, 0.75])
        np.testing.assert_allclose(q(np.array([0.2, 0.3])), [0.0, 1.0])
        with self.assertRaises(KernelError):
            discrete_circular_quantile([0.0, 1.0], weights=[0.5, 0.6])

    def test_target_phase_field_realizes_law(self):
        psi = target_phase_field(discrete_circular_quantile([0.0, math.pi]))
        k = KernelSpec(KernelFamily.PHASE_FIELD, phase_field=psi)
        sys = sample_orbit(phase_field_orbit(E0, psi), 8)
        np.testing.assert_allclose(sys.states[:4], np.tile(E0, (4, 1)))
        np.testing.assert_allclose(
            sys.states[4:], np.tile(-E0, (4, 1)), atol=1e-15
        )
        self.assertAlmostEqual(energy(sys, k), energy_ceiling(1.0))

    def test_non_monotone_quantile_rejected(self):
        with self.assertRaises(KernelError):
            target_phase_field(lambda s: -s)


class TestPrompts(unittest.TestCase):
    def test_gauge_family_sends_reference_to_targets(self):
        targets = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
        u = np.array([0.0, 0.0, 1.0])
        gauges = prompt_gauge_family(targets, u)
        self.assertEqual(len(gauges), 2)
        for gauge, target in zip(gauges, targets):
            np.testing.assert_allclose(gauge.matrix @ u, target, atol=1e-15)
            self.assertLess(gauge.residual(), 1e-12)

    def test_prompt_system_hits_targets(self):
        targets = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        u = np.array([0.0, 0.0, 1.0])
        sys = prompt_system(targets, u, m=3)
        self.assertEqual(sys.n, 6)
        np.testing.assert_allclose(sys.states[:3], np.tile(targets[0], (3, 1)))
        np.testing.assert_allclose(sys.states[3:], np.tile(targets[1], (3, 1)))
        self.assertEqual(sys.labels[4].index, 2)
        k = KernelSpec(KernelFamily.PROMPT_GAUGE, beta=2.0)
        self.assertAlmostEqual(energy(sys, k), energy_ceiling(2.0))


class TestToeplitz(unittest.TestCase):
    def test_best_frequency(self):
        self.assertEqual(best_frequency({1: 0.5, -1: 0.5}), 1)
        self.assertEqual(best_frequency({0: 0.3, 2: 0.3, -2: 0.3}), 0)
        self.assertEqual(
            best_frequency({2: 0.4, -2: 0.4, 1: 0.4, -1: 0.4}), 1
        )
        self.assertEqual(best_frequency({3: 0.6, -3: 0.6, 0: 0.1}), 3)

    def test_max_path_energy(self):
        coeffs = {1: 0.5, -1: 0.5}
        k = KernelSpec(KernelFamily.TOEPLITZ_LINEAR, toeplitz_coeffs=coeffs)
        m_star, path = toeplitz_max_path(coeffs)
        self.assertEqual(m_star, 1)
        self.assertIs(path.kind, OrbitKind.TOEPLITZ_CIRCLE)
        self.assertAlmostEqual(path_energy(path, k, 64), 0.25, places=12)

    def test_zero_frequency_is_constant(self):
        m_star, path = toeplitz_max_path({0: 1.0, 1: 0.2, -1: 0.2})
        self.assertEqual(m_star, 0)
        self.assertIs(path.kind, OrbitKind.CONSTANT)

    def test_negative_coefficients_prefer_constant_path(self):
        coeffs = {1: -0.5, -1: -0.5}
        k = KernelSpec(KernelFamily.TOEPLITZ_LINEAR, toeplitz_coeffs=coeffs)
        m_star, path = toeplitz_max_path(coeffs)
        self.assertEqual(m_star, 0)
        self.assertIs(path.kind, OrbitKind.CONSTANT)
        self.assertAlmostEqual(path_energy(path, k, 32), 0.0, places=12)
        self.assertEqual(best_frequency({0: -1.0}), 1)
        self.assertEqual(best_frequency({0: -1.0, 1: 0.2, -1: 0.2}), 1)

    def test_random_configurations_never_beat_best_frequency(self):
        rng = np.random.default_rng(21)
        L = 16
        labels = tuple(Position(float(s)) for s in position_grid(L))
        for coeffs in (
            {0: 0.1, 1: 0.3, -1: 0.3, 2: 0.5, -2: 0.5},
            {1: -0.5, -1: -0.5},
        ):
            k = KernelSpec(
                KernelFamily.TOEPLITZ_LINEAR, toeplitz_coeffs=coeffs
            )
            _, path = toeplitz_max_path(coeffs)
            best = path_energy(path, k, L)
            for _ in range(50):
                sys = ParticleSystem(uniform_sphere(L, 3, rng), labels)
                self.assertLessEqual(energy(sys, k), best + 1e-12)
            for m in range(-3, 4):
                circle = sample_orbit(rope_orbit(E0, 2 * math.pi * m), L)
                self.assertLessEqual(energy(circle, k), best + 1e-12)


class TestOptimalityChecks(unittest.TestCase):
    def test_energy_ceiling(self):
        self.assertAlmostEqual(energy_ceiling(1.0, 2.0), math.exp(1.0))
        with self.assertRaises(KernelError):
            energy_ceiling(0.0)

    def test_perturbations_do_not_raise_energy(self):
        k = KernelSpec(KernelFamily.ROPE, beta=1.0)
        sys = sample_orbit(rope_orbit(E0, k.omega), 16)
        deltas = perturbation_sweep(sys, k, trials=20, seed=3)
        self.assertEqual(deltas.shape, (20,))
        self.assertTrue(np.all(deltas <= 1e-12))
        again = perturbation_sweep(sys, k, trials=20, seed=3)
        np.testing.assert_array_equal(deltas, again)

    def test_constant_path_dominates_with_bias(self):
        k = KernelSpec(
            KernelFamily.DISTANCE_BIAS,
            bias=BiasSpec("gaussian_torus", eps=0.02, ell=0.1),
        )
        dominates, energies = constant_path_dominates(
            k, [rope_orbit(E0, 2 * math.pi)], L=32
        )
        self.assertTrue(dominates)
        self.assertGreater(energies["constant"], energies["rope_orbit_0"])


class TestDiracize(unittest.TestCase):
    def test_law_validation(self):
        grid = fibonacci_sphere(4)
        with self.assertRaises(GeometryError):
            DiscreteJointLaw(
                (NoLabel(),), np.array([1.0]), (grid,),
                (np.array([0.5, 0.5, 0.5, 0.5]),),
            )
        with self.assertRaises(DimensionError):
            DiscreteJointLaw((NoLabel(),), np.array([1.0]), (), ())

    def test_empirical_law_energy_matches_particles(self):
        n = 6
        X = uniform_sphere(n, 3, np.random.default_rng(8))
        labels = tuple(Position(float(s)) for s in np.arange(n) / n)
        law = DiscreteJointLaw(
            labels, np.full(n, 1.0 / n), tuple(x[None, :] for x in X),
            tuple(np.ones(1) for _ in range(n)),
        )
        k = KernelSpec(KernelFamily.ROPE, beta=1.2)
        self.assertAlmostEqual(
            joint_law_energy(law, k), energy(ParticleSystem(X, labels), k)
        )

    def test_diracize_collapses_baseline(self):
        beta = 1.0
        grid = fibonacci_sphere(16)
        uniform = np.full(16, 1.0 / 16)
        law = DiscreteJointLaw(
            (NoLabel(), NoLabel()), np.array([0.5, 0.5]), (grid, grid),
            (uniform, uniform),
        )
        k = KernelSpec(KernelFamily.BASELINE, beta=beta)
        before = joint_law_energy(law, k)
        result = diracize(law, k)
        self.assertTrue(result.is_dirac(0) and result.is_dirac(1))
        after = joint_law_energy(result, k)
        self.assertGreaterEqual(after, before)
        self.assertAlmostEqual(after, energy_ceiling(beta), places=12)
        self.assertEqual(
            int(np.argmax(result.conditionals[0])),
            int(np.argmax(result.conditionals[1])),
        )

    def test_diracize_against_exhaustive_assignments(self):
        rng = np.random.default_rng(5)
        k = KernelSpec(KernelFamily.ROPE, beta=1.3)
        G = 4
        for _ in range(10):
            labels = (Position(0.2), Position(0.5), Position(0.9))
            law = DiscreteJointLaw(
                labels, rng.dirichlet(np.ones(3)),
                tuple(uniform_sphere(G, 3, rng) for _ in labels),
                tuple(rng.dirichlet(np.ones(G)) for _ in labels),
            )
            start = joint_law_energy(law, k)
            result = diracize(law, k)
            self.assertTrue(all(result.is_dirac(a) for a in range(3)))
            found = joint_law_energy(result, k)
            self.assertGreaterEqual(found, start - 1e-12)

            def dirac_energy(choice):
                conds = tuple(np.eye(G)[c] for c in choice)
                return joint_law_energy(
                    DiscreteJointLaw(
                        law.aux, law.aux_weights, law.grids, conds
                    ),
                    k,
                )

            best = max(
                dirac_energy(choice)
                for choice in itertools.product(range(G), repeat=3)
            )
            self.assertGreaterEqual(best, start - 1e-12)
            self.assertLessEqual(found, best + 1e-12)
            chosen = [int(np.argmax(c)) for c in result.conditionals]
            for a in range(3):
                for g in range(G):
                    swap = list(chosen)
                    swap[a] = g
                    self.assertLessEqual(dirac_energy(swap), found + 1e-12)


if __name__ == "__main__":
    unittest.main()
