import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import binom

from fastghz import (CapacityError, DickeSpace, DickeVector, HusimiGrid, SpinCoherentParams,
                     build_collective_ops, dicke_state, husimi, husimi_difference, spin_coherent)
from fastghz.dicke import MAX_QUBITS

from oracles import dense_collective


def random_state(n, rng):
    v = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
    return DickeVector(DickeSpace(n), v / np.linalg.norm(v))


class TestSpace:
    def test_dim(self):
        assert DickeSpace(7).dim == 8

    def test_limit_supports_2048(self):
        assert MAX_QUBITS >= 2048
        assert DickeSpace(2048).dim == 2049

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            DickeSpace(MAX_QUBITS + 1)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            DickeSpace(0)

    def test_amplitudes_read_only(self):
        v = dicke_state(DickeSpace(3), 1)
        with pytest.raises(ValueError):
            v.amplitudes[0] = 1.0

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            DickeVector(DickeSpace(3), np.ones(3))


class TestCollectiveOperators:
    def test_single_qubit_x(self):
        ops = build_collective_ops(DickeSpace(1))
        np.testing.assert_array_equal(ops.dense("X"), [[0, 1], [1, 0]])

    def test_z_eigenvalue(self):
        ops = build_collective_ops(DickeSpace(4))
        assert ops.dense("Z")[1, 1] == 2

    @pytest.mark.parametrize("n", [1, 2, 3, 7, 16, 33, 64])
    def test_casimir(self, n):
        ops = build_collective_ops(DickeSpace(n))
        x, y, z = (ops.dense(k) for k in "XYZ")
        c = x @ x + y @ y + z @ z
        target = n * (n + 2)
        assert np.abs(c - target * np.eye(n + 1)).max() <= 1e-10 * target

    @pytest.mark.parametrize("n", [1, 4, 9, 32])
    def test_commutators(self, n):
        ops = build_collective_ops(DickeSpace(n))
        x, y, z = (ops.dense(k) for k in "XYZ")
        scale = n * n
        for a, b, c in ((x, y, z), (y, z, x), (z, x, y)):
            assert np.abs(a @ b - b @ a - 2j * c).max() <= 1e-12 * scale

    @pytest.mark.parametrize("n", [1, 6, 25])
    def test_hermitian_and_oracle(self, n):
        ops = build_collective_ops(DickeSpace(n))
        for name, ref in zip("XYZ", dense_collective(n)):
            m = ops.dense(name)
            assert np.abs(m - m.conj().T).max() <= 1e-14
            np.testing.assert_allclose(m, ref, atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 5, 12])
    def test_h_tat_is_xy_plus_yx(self, n):
        ops = build_collective_ops(DickeSpace(n))
        x, y = ops.dense("X"), ops.dense("Y")
        np.testing.assert_allclose(ops.dense("h_tat"), x @ y + y @ x, atol=1e-12)
        np.testing.assert_allclose(ops.dense("z_squared"), ops.dense("Z") @ ops.dense("Z"))

    def test_banded_storage(self):
        ops = build_collective_ops(DickeSpace(10))
        assert sorted(ops.X.offsets) == [-1, 1]
        assert sorted(ops.h_tat.offsets) == [-2, 2]
        assert list(ops.Z.offsets) == [0]

    def test_unknown_dense_name(self):
        with pytest.raises(ValueError):
            build_collective_ops(DickeSpace(2)).dense("W")


class TestDickeState:
    def test_basis_vectors(self):
        space = DickeSpace(8)
        np.testing.assert_array_equal(dicke_state(space, 0).amplitudes, np.eye(9)[0])
        np.testing.assert_array_equal(dicke_state(space, 8).amplitudes, np.eye(9)[8])

    @pytest.mark.parametrize("k", [-1, 9])
    def test_out_of_range(self, k):
        with pytest.raises(ValueError):
            dicke_state(DickeSpace(8), k)


class TestSpinCoherent:
    def test_north_pole(self):
        space = DickeSpace(10)
        v = spin_coherent(space, SpinCoherentParams(0.0))
        np.testing.assert_allclose(v.amplitudes, dicke_state(space, 0).amplitudes, atol=1e-15)

    def test_south_pole_phase(self):
        space = DickeSpace(10)
        v = spin_coherent(space, SpinCoherentParams(math.pi))
        np.testing.assert_allclose(v.amplitudes, dicke_state(space, 10).amplitudes, atol=1e-15)

    def test_equator_two_qubits(self):
        v = spin_coherent(DickeSpace(2), SpinCoherentParams(math.pi / 2))
        np.testing.assert_allclose(v.probabilities(), [0.25, 0.5, 0.25], atol=1e-15)

    @pytest.mark.parametrize("n", [1, 17, 256, 1024])
    @pytest.mark.parametrize("polar", [0.3, 1.4, 2.9])
    def test_binomial_pmf_in_log_space(self, n, polar):
        v = spin_coherent(DickeSpace(n), SpinCoherentParams(polar, 0.7))
        p = v.probabilities()
        exact = binom.logpmf(np.arange(n + 1), n, math.sin(polar / 2) ** 2)
        mask = p > 1e-280
        assert np.all(np.isfinite(p))
        assert np.abs(np.log(p[mask]) - exact[mask]).max() < 1e-10 * max(1.0, np.abs(exact[mask]).max())
        assert abs(v.norm() - 1) < 1e-12

    @pytest.mark.parametrize("bad", [(-0.1, 0.0), (3.2, 0.0), (1.0, -0.1), (1.0, 2 * math.pi)])
    def test_invalid_angles(self, bad):
        with pytest.raises(ValueError):
            SpinCoherentParams(*bad)

    def test_matches_single_qubit_product(self):
        # N=3 product state projected onto the symmetric basis
        polar, az = 1.1, 2.3
        q = np.array([math.cos(polar / 2), math.sin(polar / 2) * np.exp(1j * az)])
        full = np.kron(np.kron(q, q), q)
        dicke = [full[0], math.sqrt(3) * full[1], math.sqrt(3) * full[3], full[7]]
        v = spin_coherent(DickeSpace(3), SpinCoherentParams(polar, az))
        np.testing.assert_allclose(v.amplitudes, dicke, atol=1e-14)


class TestHusimi:
    def test_pole_maximum(self):
        n = 20
        q = husimi(dicke_state(DickeSpace(n), 0), (65, 128))
        assert q.argmax()[0] == 0.0
        assert q.values.max() == pytest.approx((n + 1) / (4 * math.pi), rel=1e-12)
        assert q.normalization == pytest.approx((n + 1) / (4 * math.pi))

    @pytest.mark.parametrize("n", [1, 8, 64])
    def test_integral_at_declared_resolution(self, n, rng):
        q = husimi(random_state(n, rng), (256, 512))
        assert q.values.min() >= 0
        assert q.integral() == pytest.approx(1.0, abs=1e-3)

    @given(st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
    def test_integral_exact_when_resolved(self, n, seed):
        state = random_state(n, np.random.default_rng(seed))
        q = husimi(state, (n + 2, n + 2))
        assert q.integral() == pytest.approx(1.0, abs=1e-12)

    def test_ghz_peaks(self):
        n = 32
        space = DickeSpace(n)
        ghz = DickeVector(space, (np.eye(n + 1)[0] + np.eye(n + 1)[n]) / math.sqrt(2))
        q = husimi(ghz, (129, 64))
        peak = (n + 1) / (8 * math.pi)
        assert q.values[0].max() == pytest.approx(peak, rel=0.01)
        assert q.values[-1].max() == pytest.approx(peak, rel=0.01)

    def test_grid_matches_direct_overlap(self, rng):
        state = random_state(9, rng)
        q = husimi(state, (7, 5))
        for j in (0, 3, 6):
            for m in (0, 2, 4):
                coh = spin_coherent(state.space, SpinCoherentParams(q.polar[j], q.azimuth[m]))
                direct = (10 / (4 * math.pi)) * abs(coh.overlap(state)) ** 2
                assert q.values[j, m] == pytest.approx(direct, abs=1e-13)

    def test_zero_resolution(self):
        with pytest.raises(ValueError):
            husimi(dicke_state(DickeSpace(2), 0), (0, 0))

    def test_difference_is_signed(self):
        space = DickeSpace(6)
        d = husimi_difference(dicke_state(space, 0), dicke_state(space, 6), (33, 16), (0.5, 0.5))
        assert d.values[0].max() > 0 > d.values[-1].min()
        assert d.integral() == pytest.approx(0.0, abs=1e-12)

    def test_csv_roundtrip(self, tmp_path, rng):
        q = husimi(random_state(5, rng), (9, 8))
        path = tmp_path / "q.csv"
        q.to_csv(path, meta="hash=abc")
        lines = path.read_text().splitlines()
        assert lines[0] == "# hash=abc"
        assert lines[1] == "polar,azimuth,Q"
        data = np.loadtxt(path, delimiter=",", skiprows=2)
        assert data.shape == (72, 3)
        np.testing.assert_array_equal(data[:, 2], q.values.reshape(-1))

    def test_binary_roundtrip(self, tmp_path, rng):
        q = husimi(random_state(5, rng), (9, 8))
        blob = q.to_bytes()
        assert blob[:4] == b"HUSQ"
        assert len(blob) == 16 + 8 * 72
        back = HusimiGrid.from_bytes(blob)
        np.testing.assert_array_equal(back.values, q.values)
        assert back.n_qubits == 5
        q.to_binary(tmp_path / "q.husq")
        np.testing.assert_array_equal(HusimiGrid.from_binary(tmp_path / "q.husq").values, q.values)

    def test_binary_bad_magic(self):
        with pytest.raises(ValueError):
            HusimiGrid.from_bytes(b"XXXX" + bytes(12))
