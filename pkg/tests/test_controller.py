import numpy as np
import pytest

from conftest import random_states
from ph_shape import controller as ctl
from ph_shape.exceptions import DomainError
from ph_shape.matching import AddedMassState, compute_D, compute_Y, constant, eval_Vd, integrate_ke, integrate_potential
from ph_shape.mechanics import MechanicalSystem, PhaseState, open_loop_rhs


@pytest.fixture(scope="module")
def const_ctrl():
    M = np.array([[3.0, 1.0], [1.0, 2.0]])
    sys = MechanicalSystem(n=2, m=1, mass=lambda q: M, potential=lambda q: 0.0,
                           potential_grad=lambda q: np.zeros(2), mass_coord=1, name="const")
    table = integrate_ke(sys, constant(0.5), AddedMassState(0.0, 0.5, 0.2, 1.0), (-1.0, 1.0), dq=1e-2)
    pot = integrate_potential(sys, table, "single", {"V_m": 0.0}, 1.0, "inv_beta1")
    return ctl.ShapedController(sys, table, pot, 1.0)


def both(request):
    return [request.getfixturevalue("cp_ctrl"), request.getfixturevalue("ac_ctrl")]


# --- J and J2 ----------------------------------------------------------------------

def test_constant_masses_give_zero_structure(const_ctrl):
    for q, p in random_states(const_ctrl, 10, seed=1):
        assert np.max(np.abs(ctl.assemble_J(const_ctrl, q, p))) == 0.0
        assert np.max(np.abs(ctl.assemble_J2(const_ctrl, q, p))) == 0.0


def test_J_skew_cart_pole_example(cp_ctrl):
    J = ctl.assemble_J(cp_ctrl, [0.0, 0.2], [0.5, -0.3])
    assert np.max(np.abs(J + J.T)) <= 1e-10
    assert np.max(np.abs(J)) > 0


def test_J_and_J2_skew_random(request):
    for ctrl in both(request):
        for q, p in random_states(ctrl, 100, seed=2):
            for A in (ctl.assemble_J(ctrl, q, p), ctl.assemble_J2(ctrl, q, p)):
                assert np.max(np.abs(A + A.T)) <= 1e-10


def test_J_closes_kinetic_matching(request):
    for ctrl in both(request):
        sys = ctrl.sys
        for q, p in random_states(ctrl, 200, seed=3):
            Ma, dma = ctrl.mass_table.evaluate(q[sys.mass_coord])
            Y, _ = compute_Y(sys, Ma, dma, q, p)
            D = compute_D(sys, Ma, q)
            J = ctl.assemble_J(ctrl, q, p)
            assert np.max(np.abs(D @ (-Y + J))) <= 1e-8 * (1 + p @ p)


# --- control law -------------------------------------------------------------------

def test_control_vanishes_at_equilibrium(cp_ctrl, ac_ctrl):
    for ctrl in (cp_ctrl, ac_ctrl):
        assert np.max(np.abs(ctl.control_law(ctrl, np.zeros(2), np.zeros(2), [0.0]))) <= 1e-12


def test_dual_path_example(cp_ctrl):
    q, p = np.array([0.0, 0.2]), np.array([0.1, 0.1])
    a = ctl.control_law(cp_ctrl, q, p)
    b = ctl.control_law_split(cp_ctrl, q, p)
    assert np.max(np.abs(a - b)) <= 1e-9


def test_dual_path_random(request):
    for ctrl in both(request):
        for q, p in random_states(ctrl, 200, seed=4):
            a = ctl.control_law(ctrl, q, p, [0.3])
            assert np.all(np.isfinite(a))
            assert np.max(np.abs(a - ctl.control_law_split(ctrl, q, p, [0.3]))) <= 1e-9 * max(1.0, np.max(np.abs(a)))


def test_input_passes_through(cp_ctrl):
    q, p = np.array([0.1, -0.1]), np.array([0.2, 0.3])
    assert ctl.control_law(cp_ctrl, q, p, [1.5]) - ctl.control_law(cp_ctrl, q, p) == pytest.approx([1.5], abs=1e-12)


def test_out_of_domain_is_an_error(cp_ctrl):
    with pytest.raises(DomainError):
        ctl.control_law(cp_ctrl, [0.0, 0.6], [0.0, 0.0])


# --- damping -----------------------------------------------------------------------

def test_damping_examples(cp_ctrl):
    assert np.array_equal(ctl.damping(cp_ctrl, [0.0, 0.1], [0.0, 0.0]), [0.0])
    assert ctl.damping(cp_ctrl, [0.0, 0.0], [1.0, 0.0]) == pytest.approx([-5.0], abs=1e-12)


def test_damping_extracts_power(request):
    for ctrl in both(request):
        for q, p in random_states(ctrl, 50, seed=5):
            assert ctl.damping(ctrl, q, p) @ ctl.passive_output(ctrl, q, p) <= 0


def test_kd_validation(cp_ctrl):
    with pytest.raises(ValueError):
        cp_ctrl.with_kd(-1.0)
    with pytest.raises(ValueError):
        cp_ctrl.with_kd(np.eye(2))
    assert cp_ctrl.with_kd(0.0).kd.shape == (1, 1)


# --- reduced closed loop -------------------------------------------------------------

def test_reduced_dynamics_at_equilibrium(cp_ctrl):
    qd, pd = ctl.reduced_dynamics(cp_ctrl, np.zeros(2), np.zeros(2))
    assert np.max(np.abs(qd)) == 0.0 and np.max(np.abs(pd)) <= 1e-12


def test_plant_under_control_matches_reduced_dynamics(request):
    for ctrl in both(request):
        for q, p in random_states(ctrl, 200, seed=6):
            v = ctl.damping(ctrl, q, p)
            u = ctl.control_law(ctrl, q, p, v)
            a = np.concatenate(open_loop_rhs(ctrl.sys, PhaseState(q, p), u))
            b = np.concatenate(ctl.reduced_dynamics(ctrl, q, p, v))
            assert np.max(np.abs(a - b)) <= 1e-8 * max(1.0, np.max(np.abs(a)))


def test_energy_rate_chain_rule(request):
    for ctrl in both(request):
        sys = ctrl.sys
        k = sys.mass_coord
        for q, p in random_states(ctrl, 100, seed=7):
            Ma, dma = ctrl.mass_table.evaluate(q[k])
            grad_q = sys.kinetic_energy_grad(q, p) + eval_Vd(ctrl.potential, q)[1]
            grad_q[k] += 0.5 * p @ dma @ p
            grad_p = (sys.inv_mass(q) + Ma) @ p
            qd, pd = ctl.reduced_dynamics(ctrl, q, p, ctl.damping(ctrl, q, p))
            y = ctl.passive_output(ctrl, q, p)
            rate = grad_q @ qd + grad_p @ pd
            assert rate == pytest.approx(-y @ ctrl.kd @ y, abs=1e-9 * max(1.0, abs(rate)))
            assert rate <= 1e-9


def test_energy_at_origin(cp_ctrl):
    assert ctl.closed_loop_energy(cp_ctrl, np.zeros(2), np.zeros(2)) == eval_Vd(cp_ctrl.potential, np.zeros(2))[0]


# --- dynamic controller ----------------------------------------------------------------

def test_controller_state_validation():
    with pytest.raises(ValueError):
        ctl.CbIControllerState([0.0, np.inf], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        ctl.CbIControllerState([0.0], [0.0, 0.0], [0.0, 0.0])
    cs = ctl.CbIControllerState.on_manifold([1.0, 2.0], [3.0, 4.0], offset=([0.1, 0], [0, 0], [0, -1]))
    assert np.array_equal(cs.as_vector(), [1.1, 2.0, 1.0, 2.0, 3.0, 3.0])


def test_controller_matrix_dissipative(request):
    for ctrl in both(request):
        for q, p in random_states(ctrl, 50, seed=8):
            K = ctl.controller_matrix(ctrl, ctl.CbIControllerState.on_manifold(q, p))
            assert np.linalg.eigvalsh(0.5 * (K + K.T))[-1] <= 1e-9
            n = ctrl.sys.n
            assert np.max(np.abs(K[4 * n:, 4 * n:])) == 0.0


def test_controller_on_manifold_tracks_plant_velocity(request):
    for ctrl in both(request):
        for q, p in random_states(ctrl, 30, seed=9):
            cs = ctl.CbIControllerState.on_manifold(q, p)
            vel = ctrl.sys.inv_mass(q) @ p
            dcs, _, _ = ctl.cbi_controller_dynamics(ctrl, cs, vel, [0.4])
            assert np.max(np.abs(dcs.q_a1 - vel)) <= 1e-12
            assert np.max(np.abs(dcs.q_a2 - vel)) <= 1e-10 * max(1.0, np.max(np.abs(vel)))


def test_controller_gradient_first_block(cp_ctrl):
    cs = ctl.CbIControllerState([0.3, 0.1], [0.0, 0.1], [0.2, 0.2])
    g1, _, _ = ctl.controller_gradient(cp_ctrl, cs)
    assert np.array_equal(g1, -np.asarray(cp_ctrl.sys.potential_grad(cs.q_a1)))


def test_controller_gradient_finite_differences(cp_ctrl):
    cs = ctl.CbIControllerState([0.3, 0.1], [-0.2, 0.15], [0.2, -0.4])
    x = cs.as_vector()
    h = 1e-6
    fd = np.zeros(6)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        fd[k] = (ctl.controller_hamiltonian(cp_ctrl, ctl.CbIControllerState.from_vector(x + e))
                 - ctl.controller_hamiltonian(cp_ctrl, ctl.CbIControllerState.from_vector(x - e))) / (2 * h)
    assert np.max(np.abs(np.concatenate(ctl.controller_gradient(cp_ctrl, cs)) - fd)) <= 1e-6


def test_interconnection_reproduces_static_feedback(request):
    for ctrl in both(request):
        for q, p in random_states(ctrl, 100, seed=10):
            cs = ctl.CbIControllerState.on_manifold(q, p)
            qd, pd, dcs, u, y_c2 = ctl.interconnected_rhs(ctrl, q, p, cs)
            v = ctl.damping(ctrl, q, p)
            ref = ctl.control_law(ctrl, q, p, v)
            assert np.max(np.abs(u - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))
            assert np.max(np.abs(y_c2 - ctl.passive_output(ctrl, q, p))) <= 1e-10 * (1 + np.abs(p).sum())
            # the Casimir is preserved: controller states move with the plant
            assert np.max(np.abs(dcs.q_a1 - qd)) <= 1e-12
            assert np.max(np.abs(dcs.q_a2 - qd)) <= 1e-10 * (1 + np.abs(qd).sum())
            assert np.max(np.abs(dcs.p_a - pd)) <= 1e-8 * (1 + np.abs(pd).sum())
