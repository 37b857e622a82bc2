import numpy as np
import pytest

from qsslab.dae import (JacobianBundle, assemble_jacobian, assemble_residuals, finite_difference_jacobian,
                        inverse_condition, schur_complement)
from qsslab.errors import EvaluationError, SingularityError, StructureError
from qsslab.model import ToySystem


def square_system():
    return ToySystem({"x": ["x"]}, lambda w, zd: np.array([w[0] ** 2]),
                     lambda w, zd: np.array([[2 * w[0]]]), [3.0])


def test_fd_derivative_of_square():
    J = finite_difference_jacobian(square_system(), (np.array([3.0]), np.zeros(0)), step=1e-5)
    assert J.matrix[0, 0] == pytest.approx(6.0, abs=1e-8)


def test_fd_second_order_convergence():
    s = ToySystem({"x": ["x"]}, lambda w, zd: np.array([np.sin(w[0])]),
                  lambda w, zd: np.array([[np.cos(w[0])]]), [0.7])
    exact = np.cos(0.7)
    errs = [abs(finite_difference_jacobian(s, (np.array([0.7]), np.zeros(0)), step=h).matrix[0, 0] - exact)
            for h in (1e-2, 5e-3)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)


def test_initialized_residuals_small(sys9, sys14):
    for system in (sys9, sys14):
        assert assemble_residuals(system, system.initial_state()).max_norm <= 1e-8


def test_residual_partition_sizes(sys9):
    r = assemble_residuals(sys9, sys9.initial_state())
    lay = sys9.layout
    assert (r.h_c_part.size, r.f_part.size, r.g_part.size) == (lay.nz, lay.nx, lay.ny)
    assert r.stacked.size == lay.n


def test_block_shapes(sys14):
    J = assemble_jacobian(sys14, sys14.initial_state())
    lay = sys14.layout
    assert J.D_x_g.shape == (lay.ny, lay.nx)
    assert J.D_y_f.shape == (lay.nx, lay.ny)
    assert J.D_zc_hc.shape == (lay.nz, lay.nz)
    assert J.fast_block.shape == (lay.nx + lay.ny,) * 2


def test_analytic_matches_fd_near_initial_state(sys14):
    rng = np.random.default_rng(5)
    s0 = sys14.initial_state()
    for _ in range(3):
        w = s0.w + 1e-3 * rng.standard_normal(s0.w.size)
        Ja = assemble_jacobian(sys14, (w, s0.zd)).matrix
        Jf = finite_difference_jacobian(sys14, (w, s0.zd)).matrix
        np.testing.assert_allclose(Ja, Jf, rtol=1e-6, atol=1e-6)


def test_schur_hand_example():
    J = JacobianBundle.from_blocks([[-1.0]], [[1.0]], [[2.0]], [[-1.0]])
    np.testing.assert_allclose(schur_complement(J), [[1.0]])


def test_schur_decoupled_equals_dxf():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    J = JacobianBundle.from_blocks(A, np.zeros((3, 2)), rng.normal(size=(2, 3)), np.eye(2))
    np.testing.assert_array_equal(schur_complement(J), A)


def test_schur_singular_dyg():
    J = JacobianBundle.from_blocks([[-1.0]], [[1.0, 0.0]], [[1.0], [1.0]], [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularityError):
        schur_complement(J)


def test_inverse_condition_edges():
    assert inverse_condition(np.eye(3)) == 1.0
    assert inverse_condition(np.zeros((2, 2))) == 0.0
    assert inverse_condition(np.zeros((0, 0))) == 1.0


def test_nonfinite_residual_names_variable():
    s = ToySystem({"x": ["a", "b"]}, lambda w, zd: np.array([0.0, np.nan]),
                  lambda w, zd: np.eye(2), [0.0, 0.0])
    with pytest.raises(EvaluationError, match="b"):
        assemble_residuals(s, s.initial_state())


def test_wrong_size_rejected(sys9):
    with pytest.raises(StructureError):
        assemble_residuals(sys9, (np.zeros(4), sys9.initial_state().zd))
