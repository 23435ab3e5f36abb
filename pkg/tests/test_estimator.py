import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ph_shape import EnergyShapingController
from ph_shape import controller as ctl
from ph_shape.config import bundled_config_path


@pytest.fixture(scope="module")
def fitted():
    return EnergyShapingController.from_config(bundled_config_path("cartpole")).fit()


def test_params_round_trip():
    est = EnergyShapingController(kappa=3.0, kd=2.0)
    params = est.get_params()
    assert params["kappa"] == 3.0 and params["kd"] == 2.0
    est.set_params(kappa=4.0)
    twin = clone(est)
    assert twin.get_params()["kappa"] == 4.0 and twin is not est


def test_from_config_matches_bundled_values():
    est = EnergyShapingController.from_config(bundled_config_path("acrobot"))
    assert est.system == "acrobot" and est.kappa == 250.0 and est.ansatz == "trig"
    assert est.free_function["kind"] == "target_Md"


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        EnergyShapingController().predict(np.zeros((1, 4)))


def test_predict_and_transform_shapes(fitted):
    X = np.array([[0.0, 0.0, 0.0, 0.0], [0.1, -0.2, 0.3, 0.1], [0.0, 0.1, -0.5, 0.2]])
    u = fitted.predict(X)
    H = fitted.transform(X)
    assert u.shape == (3, 1) and H.shape == (3, 1)
    assert np.max(np.abs(u[0])) <= 1e-12
    c = fitted.controller_
    q, p = X[1, :2], X[1, 2:]
    assert u[1] == pytest.approx(ctl.control_law(c, q, p, ctl.damping(c, q, p)), abs=1e-15)
    assert H[1, 0] == ctl.closed_loop_energy(c, q, p)


def test_predict_rejects_wrong_width(fitted):
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((2, 3)))


def test_fit_matches_pipeline(fitted, cp_ctrl):
    assert np.array_equal(fitted.controller_.mass_table.ma, cp_ctrl.mass_table.ma)
    assert fitted.n_features_in_ == 4


def test_check_save_and_reload(tmp_path, fitted):
    assert fitted.check().passed
    fitted.save(tmp_path)
    back = EnergyShapingController.from_package(tmp_path)
    X = np.array([[0.05, 0.1, 0.2, -0.3]])
    assert np.array_equal(back.predict(X), fitted.predict(X))
