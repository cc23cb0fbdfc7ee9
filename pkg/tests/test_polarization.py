import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threestage.polarization import (
    ALGEBRA_TOL,
    TRIG_TOL,
    IDENTITY_MUELLER,
    JonesOperator,
    JonesVector,
    MuellerMatrix,
    NotNormalizedError,
    NotUnitaryError,
    StokesVector,
    apply_mueller,
    compose_mueller,
    half_wave_plate_jones,
    half_wave_plate_mueller,
    jones_to_mueller,
    jones_to_stokes,
    linear_angle,
    linear_polarizer_mueller,
    linear_state,
    rotation_operator,
    same_ray,
    stokes_to_jones,
)

H = StokesVector(1.0, 1.0, 0.0, 0.0)
angles = st.floats(-720.0, 720.0, allow_nan=False)


def random_jones(rng):
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return JonesVector.from_array(v / np.linalg.norm(v))


def random_unitary(rng):
    z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / abs(np.diag(r)))


def stokes_by_projection(v: JonesVector) -> np.ndarray:
    """Independent oracle: Stokes parameters as differences of analyzer intensities."""
    a = v.array

    def power(e):
        e = np.asarray(e, dtype=complex) / np.linalg.norm(e)
        return abs(np.vdot(e, a)) ** 2

    s0 = power([1, 0]) + power([0, 1])
    return np.array(
        [
            s0,
            power([1, 0]) - power([0, 1]),
            power([1, 1]) - power([1, -1]),
            power([1, 1j]) - power([1, -1j]),
        ]
    )


def mueller_from_responses(u: np.ndarray) -> np.ndarray:
    """Independent oracle: solve for M from its action on four pure input states."""
    inputs = [np.array([1, 0]), np.array([0, 1]), np.array([1, 1]) / math.sqrt(2), np.array([1, 1j]) / math.sqrt(2)]
    s_in = np.array([stokes_by_projection(JonesVector.from_array(v)) for v in inputs]).T
    s_out = np.array([stokes_by_projection(JonesVector.from_array(u @ v)) for v in inputs]).T
    return s_out @ np.linalg.inv(s_in)


# rotation operator


def test_rotation_zero_is_identity():
    assert np.array_equal(rotation_operator(0).matrix, np.eye(2))


def test_rotation_quarter_turn_maps_h_to_v_exactly():
    out = rotation_operator(90) @ JonesVector(1, 0)
    assert out == JonesVector(0, 1)


def test_rotation_composition():
    lhs = rotation_operator(33.7) @ rotation_operator(-120.2)
    assert lhs.allclose(rotation_operator(33.7 - 120.2), ALGEBRA_TOL)


def test_rotation_matrix_layout():
    c, s = math.cos(math.radians(25)), math.sin(math.radians(25))
    np.testing.assert_allclose(rotation_operator(25).matrix, [[c, -s], [s, c]], atol=ALGEBRA_TOL)


@given(angles)
def test_rotation_is_unitary(theta):
    m = rotation_operator(theta).matrix
    assert np.max(np.abs(m.conj().T @ m - np.eye(2))) <= ALGEBRA_TOL


# half-wave plate


def test_hwp_mueller_at_zero():
    np.testing.assert_array_equal(half_wave_plate_mueller(0).matrix, np.diag([1, 1, -1, -1]))


def test_hwp_mueller_at_45():
    expected = [[1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 1, 0], [0, 0, 0, -1]]
    np.testing.assert_array_equal(half_wave_plate_mueller(45).matrix, expected)


def test_hwp_mueller_entries_follow_four_m():
    m = 17.0
    c, s = math.cos(math.radians(4 * m)), math.sin(math.radians(4 * m))
    expected = [[1, 0, 0, 0], [0, c, s, 0], [0, s, -c, 0], [0, 0, 0, -1]]
    np.testing.assert_allclose(half_wave_plate_mueller(m).matrix, expected, atol=ALGEBRA_TOL)


@pytest.mark.parametrize("m", np.linspace(0, 360, 37))
def test_hwp_mueller_twice_is_identity(m):
    rng = np.random.default_rng(int(m))
    s = jones_to_stokes(random_jones(rng), 2.5)
    hw = half_wave_plate_mueller(m)
    assert apply_mueller(hw, apply_mueller(hw, s)).allclose(s, ALGEBRA_TOL)
    np.testing.assert_allclose(hw.matrix @ hw.matrix, np.eye(4), atol=ALGEBRA_TOL)


def test_hwp_jones_fixed_points():
    np.testing.assert_array_equal(half_wave_plate_jones(0).matrix, [[1, 0], [0, -1]])
    np.testing.assert_array_equal(half_wave_plate_jones(45).matrix, [[0, 1], [1, 0]])


@pytest.mark.parametrize("m", range(0, 360, 10))
def test_hwp_jones_induces_hwp_mueller(m):
    got = jones_to_mueller(half_wave_plate_jones(m))
    assert got.allclose(half_wave_plate_mueller(m), ALGEBRA_TOL)
    np.testing.assert_allclose(mueller_from_responses(half_wave_plate_jones(m).matrix), got.matrix, atol=1e-9)


def test_hwp_reflects_linear_angle():
    out = half_wave_plate_jones(30) @ linear_state(10)
    assert same_ray(out, linear_state(50))


@given(angles, st.floats(0.0, 180.0))
def test_hwp_preserves_intensity(m, a):
    s = jones_to_stokes(linear_state(a), 0.7)
    assert apply_mueller(half_wave_plate_mueller(m), s).s0 == s.s0


# polarizer


def test_polarizer_aligned_and_crossed():
    assert apply_mueller(linear_polarizer_mueller(0), H).s0 == pytest.approx(1.0, abs=ALGEBRA_TOL)
    assert apply_mueller(linear_polarizer_mueller(90), H).s0 == pytest.approx(0.0, abs=ALGEBRA_TOL)


def test_polarizer_malus_at_30():
    s = jones_to_stokes(linear_state(30))
    # cos^2(30 deg)
    assert apply_mueller(linear_polarizer_mueller(0), s).s0 == pytest.approx(0.75, abs=TRIG_TOL)


@given(st.floats(0, 360), st.floats(0, 360))
def test_polarizer_malus_law(alpha, axis):
    s = jones_to_stokes(linear_state(alpha))
    out = apply_mueller(linear_polarizer_mueller(axis), s)
    assert out.s0 == pytest.approx(math.cos(math.radians(alpha - axis)) ** 2, abs=TRIG_TOL)
    assert out.is_physical()


# apply / compose


def test_apply_identity():
    s = StokesVector(2.0, 0.3, -0.4, 0.5)
    assert apply_mueller(IDENTITY_MUELLER, s) == s


def test_hwp_zero_on_horizontal():
    assert apply_mueller(half_wave_plate_mueller(0), H) == H


def test_hwp_22_5_turns_horizontal_diagonal():
    assert apply_mueller(half_wave_plate_mueller(22.5), H).allclose(StokesVector(1, 0, 1, 0), ALGEBRA_TOL)


def test_compose_is_beam_order():
    a, b = half_wave_plate_mueller(10), linear_polarizer_mueller(0)
    np.testing.assert_array_equal(compose_mueller(a, b).matrix, b.matrix @ a.matrix)
    np.testing.assert_array_equal((b @ a).matrix, b.matrix @ a.matrix)


def test_mueller_shape_checked():
    with pytest.raises(ValueError):
        MuellerMatrix(np.eye(3))


# Jones <-> Stokes


def test_stokes_of_basis_states():
    assert jones_to_stokes(JonesVector(1, 0)) == StokesVector(1, 1, 0, 0)
    assert jones_to_stokes(JonesVector(0, 1)) == StokesVector(1, -1, 0, 0)


def test_stokes_of_diagonal():
    r = 1 / math.sqrt(2)
    assert jones_to_stokes(JonesVector(r, r)).allclose(StokesVector(1, 0, 1, 0), ALGEBRA_TOL)


def test_stokes_intensity_scales():
    assert jones_to_stokes(JonesVector(1, 0), 3.0) == StokesVector(3, 3, 0, 0)


def test_stokes_rejects_unnormalized():
    with pytest.raises(NotNormalizedError):
        jones_to_stokes(JonesVector(1, 1))
    with pytest.raises(ValueError):
        jones_to_stokes(JonesVector(1, 0), -1.0)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_stokes_matches_projection_oracle(seed):
    v = random_jones(np.random.default_rng(seed))
    s = jones_to_stokes(v)
    np.testing.assert_allclose(s.array, stokes_by_projection(v), atol=1e-12)
    assert s.degree_of_polarization == pytest.approx(1.0, abs=ALGEBRA_TOL)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_stokes_to_jones_round_trip(seed):
    v = random_jones(np.random.default_rng(seed))
    back = stokes_to_jones(jones_to_stokes(v))
    assert same_ray(back, v, TRIG_TOL)
    assert back.c0.imag == 0 and back.c0.real >= 0


def test_stokes_to_jones_vertical_and_unpolarized():
    assert stokes_to_jones(StokesVector(2, -2, 0, 0)) == JonesVector(0, 1)
    with pytest.raises(ValueError):
        stokes_to_jones(StokesVector(1, 0, 0, 0))
    with pytest.raises(ValueError):
        stokes_to_jones(StokesVector(0, 0, 0, 0))


# Jones -> Mueller


def test_jones_to_mueller_identity():
    assert jones_to_mueller(JonesOperator(np.eye(2))).allclose(IDENTITY_MUELLER)


def test_rotation_mueller_rotates_by_double_angle():
    c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
    expected = np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1]])
    got = jones_to_mueller(rotation_operator(15)).matrix
    np.testing.assert_allclose(got, expected, atol=ALGEBRA_TOL)
    np.testing.assert_allclose(mueller_from_responses(rotation_operator(15).matrix), expected, atol=1e-9)


def test_jones_to_mueller_hwp_30():
    assert jones_to_mueller(half_wave_plate_jones(30)).allclose(half_wave_plate_mueller(30))


def test_jones_to_mueller_rejects_non_unitary():
    with pytest.raises(NotUnitaryError):
        jones_to_mueller(np.array([[1, 1], [0, 1]]))
    with pytest.raises(NotUnitaryError):
        JonesOperator(np.array([[2, 0], [0, 1]]))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_calculus_consistency_random(seed):
    rng = np.random.default_rng(seed)
    u = JonesOperator(random_unitary(rng))
    v = random_jones(rng)
    lhs = jones_to_stokes(u @ v)
    rhs = apply_mueller(jones_to_mueller(u), jones_to_stokes(v))
    assert lhs.allclose(rhs, ALGEBRA_TOL)


@pytest.mark.parametrize("angle", np.arange(0, 360, 10))
def test_calculus_consistency_elements(angle):
    for u in (rotation_operator(angle), half_wave_plate_jones(angle)):
        for a in (0, 45, 90, angle / 3):
            v = linear_state(a)
            lhs = jones_to_stokes(u @ v)
            rhs = apply_mueller(jones_to_mueller(u), jones_to_stokes(v))
            assert lhs.allclose(rhs, ALGEBRA_TOL)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_unitaries_preserve_inner_products(seed):
    rng = np.random.default_rng(seed)
    u = JonesOperator(random_unitary(rng))
    a, b = random_jones(rng), random_jones(rng)
    assert abs((u @ a).inner(u @ b) - a.inner(b)) <= ALGEBRA_TOL


# helpers


def test_linear_state_and_angle():
    assert linear_state(0) == JonesVector(1, 0)
    assert linear_state(90) == JonesVector(0, 1)
    assert linear_angle(linear_state(120)) == pytest.approx(120.0, abs=TRIG_TOL)
    assert linear_angle(linear_state(300)) == pytest.approx(120.0, abs=TRIG_TOL)


def test_same_ray_ignores_global_phase():
    v = linear_state(33)
    w = JonesVector.from_array(np.exp(0.7j) * v.array)
    assert same_ray(v, w)
    assert not same_ray(v, linear_state(34))
    assert not same_ray(linear_state(0), linear_state(90))


def test_stokes_physical_check():
    assert StokesVector(1, 0.6, 0.8, 0).is_physical()
    assert not StokesVector(1, 1, 1, 0).is_physical()
    assert StokesVector(2, 1, 0, 0).degree_of_polarization == 0.5
