import numpy as np
import pytest

from ph_shape.exceptions import PhShapeError, SingularMassError
from ph_shape.mechanics import (
    MechanicalSystem,
    PhaseState,
    acrobot,
    cart_pole,
    compute_E,
    fd_inv_mass_jacobian,
    make_system,
    open_loop_rhs,
    partition_matrix,
    register_system,
    system_from_dict,
)


def constant_mass_system(grad=(0.0, 0.0)):
    M = np.array([[3.0, 1.0], [1.0, 2.0]])
    return MechanicalSystem(
        n=2, m=1, mass=lambda q: M, potential=lambda q: 0.0,
        potential_grad=lambda q: np.asarray(grad, dtype=float), name="const",
    )


def fd_grad_T(sys, q, p, h=1e-6):
    g = np.zeros(sys.n)
    for k in range(sys.n):
        e = np.zeros(sys.n)
        e[k] = h
        g[k] = (sys.kinetic_energy(q + e, p) - sys.kinetic_energy(q - e, p)) / (2 * h)
    return g


# --- open_loop_rhs ---------------------------------------------------------------

def test_cart_pole_equilibrium_at_rest():
    sys = cart_pole()
    qd, pd = open_loop_rhs(sys, PhaseState([0, 0], [0, 0]), [0.0])
    assert np.array_equal(qd, [0, 0]) and np.allclose(pd, 0, atol=0)


def test_cart_pole_velocity_from_inverse_mass():
    # M(0) = [[2, 1], [1, 1]] has inverse [[1, -1], [-1, 2]]
    qd, _ = open_loop_rhs(cart_pole(), PhaseState([0, 0], [1, 0]), [0.0])
    assert np.allclose(qd, [1, -1], atol=1e-15)


def test_constant_mass_momentum_rate_is_input():
    sys = constant_mass_system()
    _, pd = open_loop_rhs(sys, PhaseState([0.3, -1.2], [0.7, 2.0]), [1.5])
    assert np.allclose(pd, [1.5, 0.0], atol=1e-15)


def test_open_loop_rejects_wrong_input_length():
    with pytest.raises(ValueError):
        open_loop_rhs(cart_pole(), PhaseState([0, 0], [0, 0]), [0.0, 1.0])


def test_singular_mass_names_configuration():
    # cart-pole with m_c = 0 is singular at q2 = 0
    sys = cart_pole(m_c=0.0)
    with pytest.raises(SingularMassError) as err:
        open_loop_rhs(sys, PhaseState([0, 0], [1, 0]), [0.0])
    assert "q=[0.0, 0.0]" in str(err.value)


def test_generic_inverse_rejects_ill_conditioned_mass():
    sys = MechanicalSystem(n=2, m=1, mass=lambda q: np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]]),
                           potential=lambda q: 0.0, potential_grad=lambda q: np.zeros(2))
    with pytest.raises(SingularMassError):
        sys.inv_mass(np.zeros(2))


# --- compute_E -------------------------------------------------------------------

def test_E_zero_for_constant_mass():
    E = compute_E(constant_mass_system(), PhaseState([0.4, 1.0], [2.0, -1.0]))
    assert np.array_equal(E, np.zeros((2, 2)))


def test_E_zero_for_cart_pole_upright():
    sys = cart_pole()
    E = compute_E(sys, PhaseState([0, 0], [1.3, -0.4]))
    assert np.max(np.abs(E)) < 1e-15
    # the finite-difference Jacobian agrees that every entry vanishes at q2 = 0
    assert np.max(np.abs(fd_inv_mass_jacobian(sys, np.zeros(2)))) < 1e-9


def test_E_identity_cart_pole_point():
    sys = cart_pole()
    q, p = np.array([0.0, 0.3]), np.array([1.0, 1.0])
    lhs = compute_E(sys, PhaseState(q, p)) @ sys.inv_mass(q) @ p
    ref = fd_grad_T(sys, q, p)
    assert np.linalg.norm(lhs - ref) <= 1e-6 * np.linalg.norm(ref)


@pytest.mark.parametrize("factory", [cart_pole, acrobot])
def test_E_identity_random(factory):
    sys = factory()
    rng = np.random.default_rng(1)
    for _ in range(200):
        q, p = rng.uniform(-np.pi, np.pi, 2), rng.normal(size=2)
        lhs = compute_E(sys, PhaseState(q, p)) @ sys.inv_mass(q) @ p
        assert np.linalg.norm(lhs - fd_grad_T(sys, q, p)) <= 1e-5 * (1 + p @ p)


# --- partition_matrix ------------------------------------------------------------

def test_partition_index_selection():
    sys = cart_pole()
    part = partition_matrix(sys, [[1.0, 2.0], [3.0, 4.0]], with_b12=True)
    assert (part.b11, part.b21, part.b22, part.b12) == (1.0, 3.0, 4.0, 2.0)


def test_partition_cart_pole_inverse_mass():
    sys = cart_pole()
    part = partition_matrix(sys, sys.inv_mass(np.zeros(2)))
    assert np.allclose([part.b11[0, 0], part.b21[0, 0], part.b22[0, 0]], [1, -1, 2], atol=1e-15)


def test_partition_identity():
    part = partition_matrix(cart_pole(), np.eye(2))
    assert part.b11 == 1 and part.b21 == 0 and part.b22 == 1


def test_partition_roundtrip_bit_exact():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(2, 2))
    A = A + A.T
    assert np.array_equal(partition_matrix(cart_pole(), A).assemble(), A)
    B = rng.normal(size=(2, 2))
    assert np.array_equal(partition_matrix(cart_pole(), B, with_b12=True).assemble(), B)


def test_partition_dimension_mismatch():
    with pytest.raises(ValueError):
        partition_matrix(cart_pole(), np.eye(3))


# --- system invariants -------------------------------------------------------------

@pytest.mark.parametrize("factory", [cart_pole, acrobot])
def test_inverse_mass_jacobian_matches_finite_differences(factory):
    sys = factory()
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = rng.uniform(-np.pi, np.pi, 2)
        ana = sys.inv_mass_jacobian(q)
        fd = fd_inv_mass_jacobian(sys, q)
        assert np.max(np.abs(ana - fd)) <= 1e-5 * max(1.0, np.max(np.abs(ana)))


@pytest.mark.parametrize("factory", [cart_pole, acrobot])
def test_mass_symmetric_positive_definite(factory):
    sys = factory()
    for q2 in np.linspace(-np.pi, np.pi, 41):
        q = np.array([0.2, q2]) if factory is cart_pole else np.array([q2, 0.2])
        assert sys.check_mass(q) > 0
        assert np.allclose(sys.inv_mass(q), np.linalg.inv(sys.mass(q)), atol=1e-12)


def test_fd_fallback_used_without_analytic_jacobian():
    base = cart_pole()
    sys = MechanicalSystem(n=2, m=1, mass=base.mass, potential=base.potential,
                           potential_grad=base.potential_grad, mass_coord=1)
    q = np.array([0.0, 0.7])
    assert np.max(np.abs(sys.inv_mass_jacobian(q) - base.inv_mass_jacobian(q))) < 1e-8


def test_registry_and_json_definition():
    sys = system_from_dict({"system": "cart-pole", "params": {"m_c": 1.0, "m_p": 1.0, "l": 1.0, "g": 9.8}})
    assert np.allclose(sys.mass(np.zeros(2)), [[2, 1], [1, 1]])
    ac = system_from_dict({"system": "acrobot", "params": {"c1": 2.3333, "c2": 5.3333, "c3": 2.0,
                                                          "c4": 3.0, "c5": 2.0, "g": 9.8}})
    assert ac.mass_coord == 0 and ac.n == 2
    with pytest.raises(PhShapeError):
        make_system("cart-pole", {"mass": 1.0})
    with pytest.raises(PhShapeError):
        make_system("double-cart")


def test_register_user_system():
    register_system("toy-const", lambda k=1.0: constant_mass_system((0.0, k)), {"k": 1.0})
    sys = make_system("toy-const", {"k": 2.0})
    assert np.allclose(sys.potential_grad(np.zeros(2)), [0.0, 2.0])


def test_dimension_validation():
    with pytest.raises(ValueError):
        MechanicalSystem(n=2, m=2, mass=np.eye, potential=lambda q: 0.0, potential_grad=lambda q: q)
    with pytest.raises(ValueError):
        PhaseState([0, 0], [0])
    with pytest.raises(ValueError):
        PhaseState([np.nan, 0], [0, 0])
