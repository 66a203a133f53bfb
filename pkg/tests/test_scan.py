"""Translation scans, symmetry-error maps, and the two-route identity."""

import numpy as np
import pytest

from symmvmc import scan, systems
from symmvmc.ansatz import (Ansatz, initial_ansatz, perturb_asymmetric,
                            plane_wave_basis)
from symmvmc.groups import Configuration, Isometry, close_group
from symmvmc.stats import report_json
from symmvmc.symmetrize import SymmetrizedWavefunction

TWO_PI = 2.0 * np.pi


def constant_2d():
    return Ansatz(plane_wave_basis(2, 0), 1, 0, [[[1.0]]],
                  np.zeros((1, 1, 0)))


def mirror_group_1d():
    return close_group([Isometry([[-1.0]], [0.0])], max_order=2)


class LogSine:
    """One electron, log|psi|^2 = offset + amplitude * sin(2 pi x)."""

    n_up = 1
    n_down = 0
    dim = 1

    def __init__(self, amplitude, offset=0.0):
        self.amplitude = float(amplitude)
        self.offset = float(offset)

    def evaluate_batch(self, positions, spins, **want):
        x = np.asarray(positions)[:, 0, 0]
        log_sq = self.offset + self.amplitude * np.sin(TWO_PI * x)
        return {"log_abs": 0.5 * log_sq, "sign": np.ones_like(x)}


class WindowNode:
    """Uniform except for a dead window on [0.4, 0.6)."""

    n_up = 1
    n_down = 0
    dim = 1

    def evaluate_batch(self, positions, spins, **want):
        x = np.asarray(positions)[:, 0, 0]
        dead = (x >= 0.4) & (x < 0.6)
        return {
            "log_abs": np.where(dead, -np.inf, 0.0),
            "sign": np.where(dead, 0.0, 1.0),
        }


class TestSymmetricConfiguration:
    def test_center_seed_is_a_fixed_point(self):
        _, group, _ = systems.square_system()
        base = scan.symmetric_configuration(group, [[0.5, 0.5]], spins=[1])
        assert base.positions.shape == (1, 2)

    def test_generic_seed_expands_to_full_orbit(self):
        _, group, _ = systems.square_system()
        base = scan.symmetric_configuration(group, [[0.25, 0.25]])
        assert len(base.positions) == 4
        as_set = {tuple(np.round(p, 12)) for p in base.positions}
        assert as_set == {(0.25, 0.25), (0.75, 0.25), (0.75, 0.75),
                          (0.25, 0.75)}

    def test_orbit_base_passes_scan_gate(self):
        _, group, _ = systems.square_system()
        base = scan.symmetric_configuration(group, [[0.25, 0.25]],
                                            spins=[1])
        grid = scan.scan(initial_ansatz(2, 2, 4, 0, seed=0), group, base,
                         resolution=11)
        assert grid.resolution == 11
        assert grid.values.shape == (11, 11)

    def test_spin_count_mismatch_rejected(self):
        _, group, _ = systems.square_system()
        with pytest.raises(ValueError, match="spin"):
            scan.symmetric_configuration(group, [[0.5, 0.5]], spins=[1, -1])


class TestScan:
    def test_constant_wavefunction_gives_flat_grid(self):
        _, group, _ = systems.square_system()
        base = scan.symmetric_configuration(group, [[0.5, 0.5]])
        grid = scan.scan(constant_2d(), group, base, resolution=13)
        assert grid.values.shape == (13, 13)
        assert np.max(np.abs(grid.values - grid.values[0, 0])) == 0.0
        assert grid.node_count == 0

    def test_asymmetric_base_rejected_with_rotation_named(self):
        _, group, _ = systems.square_system()
        bad = Configuration([[0.3, 0.5]], [1])
        with pytest.raises(ValueError, match=r"not symmetric under"):
            scan.scan(constant_2d(), group, bad, resolution=11)

    def test_resolution_floor(self):
        _, group, _ = systems.square_system()
        base = scan.symmetric_configuration(group, [[0.5, 0.5]])
        with pytest.raises(ValueError, match="resolution"):
            scan.scan(constant_2d(), group, base, resolution=1)

    def test_nodes_become_nan_and_are_counted(self):
        group = mirror_group_1d()
        base = Configuration([[0.0]], [1])
        grid = scan.scan(WindowNode(), group, base, resolution=10)
        assert grid.node_count == 2
        assert np.isnan(grid.values[4]) and np.isnan(grid.values[5])
        assert np.all(np.isfinite(np.delete(grid.values, [4, 5])))


class TestSymmetryError:
    def setup_method(self):
        self.h, self.group, _ = systems.square_system()
        self.base = scan.symmetric_configuration(self.group, [[0.5, 0.5]])
        self.perturbed = perturb_asymmetric(
            initial_ansatz(2, 2, 1, 0, seed=1, noise=0.1), self.group, 0.2,
            seed=0)

    def test_invariant_wavefunction_error_below_tolerance(self):
        pa = SymmetrizedWavefunction(self.perturbed, "ga",
                                     subset=list(self.group))
        grid = scan.scan(pa, self.group, self.base, resolution=41)
        summary = scan.symmetry_error(grid)
        assert summary.max_error <= 1e-9
        assert scan.satisfied_relations(grid) == 8

    def test_broken_symmetry_is_visible(self):
        grid = scan.scan(self.perturbed, self.group, self.base,
                         resolution=41)
        summary = scan.symmetry_error(grid)
        assert summary.max_error >= 1e-2
        assert summary.mean_error > 0.0

    def test_trivial_group_gives_zero_map(self):
        grid = scan.scan(self.perturbed, self.group, self.base,
                         resolution=21)
        identity_only = [g for g in grid.g_tilde
                         if np.array_equal(np.asarray(g.rotation),
                                           np.eye(2))]
        summary = scan.symmetry_error(grid, g_tilde=identity_only)
        assert summary.max_error == 0.0
        assert np.nanmax(summary.error_map) == 0.0

    def test_injected_sine_asymmetry_reaches_twice_amplitude(self):
        amplitude = 0.35
        group = mirror_group_1d()
        base = Configuration([[0.0]], [1])
        grid = scan.scan(LogSine(amplitude), group, base, resolution=101)
        summary = scan.symmetry_error(grid)
        assert abs(summary.max_error - 2.0 * amplitude) \
            <= 0.1 * 2.0 * amplitude

    def test_node_pairs_skipped_and_counted(self):
        group = mirror_group_1d()
        base = Configuration([[0.0]], [1])
        grid = scan.scan(WindowNode(), group, base, resolution=10)
        summary = scan.symmetry_error(grid)
        # t = 0.4 and 0.5 are nodes; their mirror images 0.6 and 0.5 give
        # one dropped finite-to-node pair (0.6 -> 0.4)
        assert summary.skipped == 1
        assert np.isnan(summary.error_map[4])
        assert summary.max_error == 0.0

    def test_incommensurate_translation_rejected(self):
        group = mirror_group_1d()
        base = Configuration([[0.0]], [1])
        grid = scan.scan(LogSine(0.1), group, base, resolution=41)
        with pytest.raises(ValueError, match="commensurate"):
            scan.symmetry_error(grid,
                                g_tilde=[Isometry([[1.0]], [0.3])])

    def test_commensurate_shift_detects_periodicity_break(self):
        group = mirror_group_1d()
        base = Configuration([[0.0]], [1])
        grid = scan.scan(LogSine(0.2), group, base, resolution=40)
        shift = scan.symmetry_error(grid,
                                    g_tilde=[Isometry([[1.0]], [0.5])])
        # sin flips sign under a half-cell shift: error = |2 A sin|
        assert shift.max_error == pytest.approx(0.4, abs=1e-9)


class TestFullVersusPartialSymmetry:
    def test_full_orbit_base_satisfies_more_relations(self):
        _, group, _ = systems.square_system()
        mirror_only = close_group(
            [Isometry([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])], max_order=2)
        # one electron keeps the averaged surface free of the cancellation
        # nodes a multi-row determinant average sweeps across the scan plane
        psi = SymmetrizedWavefunction(
            initial_ansatz(2, 2, 1, 0, seed=2, noise=0.1), "ga",
            subset=list(group))

        full_base = scan.symmetric_configuration(group, [[0.5, 0.5]])
        partial_base = Configuration([[0.0, 0.3]], [1])
        full_grid = scan.scan(psi, group, full_base, resolution=20)
        partial_grid = scan.scan(psi, mirror_only, partial_base,
                                 resolution=20)
        full_count = scan.satisfied_relations(full_grid)
        partial_count = scan.satisfied_relations(
            partial_grid, g_tilde=full_grid.g_tilde)
        assert full_count == 8
        # identity plus the mirror that fixes the anchor, nothing else
        assert partial_count == 2


class TestIdentitySpotCheck:
    def test_identity_holds_for_plain_and_averaged(self):
        _, group, _ = systems.square_system()
        base = scan.symmetric_configuration(group, [[0.25, 0.25]])
        perturbed = perturb_asymmetric(
            initial_ansatz(2, 2, 4, 0, seed=1, noise=0.1), group, 0.2,
            seed=0)
        averaged = SymmetrizedWavefunction(perturbed, "ga",
                                           subset=list(group))
        t = np.random.default_rng(3).random((9, 2))
        for psi in (perturbed, averaged):
            lhs, rhs = scan.identity_spot_check(psi, group, base, t)
            assert np.nanmax(np.abs(lhs - rhs)) <= 1e-12

    def test_one_dimensional_chain_rotations(self):
        _, group, _ = systems.chain_system()
        base = Configuration([[0.0]], [1])
        psi = LogSine(0.4, offset=0.3)
        t = np.linspace(0.05, 0.95, 11)[:, None]
        lhs, rhs = scan.identity_spot_check(psi, group, base, t)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


class TestOutputs:
    def test_csv_layout_and_determinism(self):
        group = mirror_group_1d()
        base = Configuration([[0.0]], [1])
        grid = scan.scan(LogSine(0.2), group, base, resolution=8)
        text = scan.scan_csv(grid)
        lines = text.strip().split("\n")
        assert lines[0] == "# axes=0"
        assert lines[1] == "# resolution=8"
        assert lines[4] == "t0,log_psi_sq"
        assert len(lines) == 5 + 8
        again = scan.scan_csv(scan.scan(LogSine(0.2), group, base,
                                        resolution=8))
        assert text == again

    def test_csv_records_nodes_as_nan(self):
        group = mirror_group_1d()
        base = Configuration([[0.0]], [1])
        text = scan.scan_csv(scan.scan(WindowNode(), group, base,
                                       resolution=10))
        assert "0.4,nan" in text

    def test_report_is_json_serializable_and_deterministic(self):
        _, group, _ = systems.square_system()
        base = scan.symmetric_configuration(group, [[0.5, 0.5]])
        a = initial_ansatz(2, 2, 1, 0, seed=4, noise=0.1)
        grid = scan.scan(a, group, base, resolution=21)
        report = scan.scan_report(grid)
        assert report["resolution"] == 21
        assert report["group_order"] == 8
        assert 0 <= report["satisfied_relations"] <= 8
        assert report_json(report) == report_json(
            scan.scan_report(scan.scan(a, group, base, resolution=21)))
