import math
from fractions import Fraction

import numpy as np
import pytest

from sbrl import certify, library, synth
from sbrl.dynamics import (ControlledSystem, DisturbanceEnsemble,
                           GeneralSystem, LinearSystem)
from sbrl.errors import ConfigurationError, PreconditionError
from sbrl.noise import ExpectationScheme, point_mass_noise
from sbrl.storage import CustomStorage, DomainBox, QuadraticStorage

CF = ExpectationScheme(mode="closed-form")
MC8 = ExpectationScheme(samples=8, seed=3)


def deterministic_general_plant():
    """x+ = 0.5 x + u + v with z = u; noise enters nowhere."""
    return GeneralSystem(
        1, 1, 1,
        F=lambda k, x, u, v, w: np.array([0.5 * x[0] + u[0] + v[0]]),
        m=lambda k, x, u, v: np.array([u[0]]),
        noise=point_mass_noise(0.0, 1),
    )


def integrator_plant():
    """x+ = x + u with z = (x; u); disturbance channel absent."""
    return ControlledSystem(
        1, 1, 1,
        f=lambda x, u, w: np.array([x[0] + u[0]]),
        g=lambda x, w: np.zeros((1, 1)),
        m=lambda x, u: np.array([x[0], u[0]]),
        m1=lambda x: np.zeros((0, 1)),
        noise=point_mass_noise(0.0, 1),
        f_parts=lambda x, u: (np.array([x[0] + u[0]]), [np.zeros(1)]),
    )


def worked_saddle(gamma):
    return synth.SaddleData(
        alpha=lambda x: np.array([0.0]),
        eta=lambda x: np.array([-0.5 * x[0]]),
        M=[[8.0]], N=[[4.0]], gamma=gamma,
    )


def eig2x2(m):
    # closed-form eigenvalues of a symmetric 2x2, as an independent oracle
    tr, det = m[0][0] + m[1][1], m[0][0] * m[1][1] - m[0][1] * m[1][0]
    disc = math.sqrt(tr * tr - 4.0 * det)
    return (tr - disc) / 2.0, (tr + disc) / 2.0


# ------------------------------------------------------------ closed loop

def test_zero_law_reproduces_open_loop():
    plant = library.example2_plant()
    loop = synth.closed_loop(plant, synth.FeedbackLaw.zero(2))
    x = np.array([0.7, -1.2, 0.4])
    v = np.array([0.3, -0.1])
    w = plant.noise.sample(5, 1)[0]
    x_open, z_open = plant.step(x, np.zeros(2), v, w)
    x_loop, z_loop = loop.step(x, v, w)
    assert np.allclose(x_open, x_loop, atol=0)
    assert np.allclose(z_open, z_loop, atol=0)


def test_builtin_law_values():
    law = library.example2_law()
    u = law(np.array([1.0, 1.0, 1.0]))
    assert u[0] == pytest.approx(-(1.0 / 24.0) * (1.0 + math.cos(1.0)), rel=1e-12)
    assert u[1] == pytest.approx(-0.75, abs=1e-15)
    assert law.spec()["u1_coef"] == pytest.approx(1.0 / 24.0, rel=1e-12)


def test_linear_gain_composition():
    A = np.array([[0.9, 0.2], [0.0, 0.7]])
    Bu = np.array([[0.0], [1.0]])
    plant = ControlledSystem(
        2, 1, 1,
        f=lambda x, u, w: A @ x + Bu @ u,
        g=lambda x, w: np.zeros((2, 1)),
        m=lambda x, u: np.array([x[0]]),
        m1=lambda x: np.zeros((0, 1)),
        noise=point_mass_noise(0.0, 1),
    )
    K = np.array([[-0.3, -0.5]])
    loop = synth.closed_loop(plant, synth.FeedbackLaw.linear_gain(K))
    x = np.array([1.0, -2.0])
    x_next, _ = loop.step(x, np.zeros(1), np.zeros(1))
    assert np.allclose(x_next, (A + Bu @ K) @ x, atol=1e-15)


def test_closed_loop_dimension_mismatch():
    plant = library.example2_plant()
    with pytest.raises(ConfigurationError):
        synth.closed_loop(plant, synth.FeedbackLaw.zero(3))


# -------------------------------------------------------- design functional

def test_h_design_zero_at_origin():
    plant = library.example2_plant()
    V = library.example2_storage()
    est = synth.h_design(V, plant, np.zeros(3), np.zeros(2),
                         library.EXAMPLE2_BETA, CF)
    assert est.value == 0.0


def test_h_design_under_builtin_law_nonpositive():
    plant = library.example2_plant()
    V = library.example2_storage()
    law = library.example2_law()
    x = np.array([1.0, 1.0, 1.0])
    mc = ExpectationScheme(samples=100_000, seed=41)
    est = synth.h_design(V, plant, x, law(x), library.EXAMPLE2_BETA, mc)
    assert est.value <= 3.0 * est.std_error


def test_h_design_law_improves_on_zero_control():
    plant = library.example2_plant()
    V = library.example2_storage()
    law = library.example2_law()
    x = np.array([0.0, 2.0, 0.0])
    with_law = synth.h_design(V, plant, x, law(x), library.EXAMPLE2_BETA, CF)
    without = synth.h_design(V, plant, x, np.zeros(2), library.EXAMPLE2_BETA, CF)
    assert with_law.value <= without.value + 1e-12


# -------------------------------------------------------------- controller

def test_certify_controller_example2():
    plant = library.example2_plant()
    cert = synth.certify_controller(
        plant, library.example2_law(), library.example2_storage(),
        library.EXAMPLE2_BETA, 0.75,
        DomainBox((-2.0,) * 3, (2.0,) * 3, ("grid", 5)),
        ExpectationScheme(samples=20_000, seed=6))
    assert cert.status == "certified"
    expected_g = library.EXAMPLE2_BETA / (library.EXAMPLE2_BETA - 1.0) / 16.0
    assert cert.provenance["g_beta_sup"] == pytest.approx(expected_g, abs=1e-12)


def test_certify_controller_tight_gamma_falsified():
    plant = library.example2_plant()
    cert = synth.certify_controller(
        plant, library.example2_law(), library.example2_storage(),
        library.EXAMPLE2_BETA, math.sqrt(0.40),
        DomainBox((-2.0,) * 3, (2.0,) * 3, ("grid", 3)),
        ExpectationScheme(samples=5_000, seed=6))
    assert cert.status == "falsified"


def test_certify_controller_zero_plant_any_gamma():
    plant = ControlledSystem(
        1, 1, 1,
        f=lambda x, u, w: np.zeros(1),
        g=lambda x, w: np.zeros((1, 1)),
        m=lambda x, u: np.zeros(1),
        m1=lambda x: np.zeros((0, 1)),
        noise=point_mass_noise(0.0, 1),
        f_parts=lambda x, u: (np.zeros(1), [np.zeros(1)]),
        g_parts=lambda x: (np.zeros((1, 1)), [np.zeros((1, 1))]),
    )
    for gamma in (0.05, 1.0, 50.0):
        cert = synth.certify_controller(
            plant, synth.FeedbackLaw.zero(1), QuadraticStorage([[1.0]]),
            2.0, gamma, DomainBox((-3.0,), (3.0,), ("grid", 11)), CF)
        assert cert.status == "certified"


def test_controller_certificate_matches_external_check_on_loop():
    plant = library.example2_plant()
    law = library.example2_law()
    V = library.example2_storage()
    box = DomainBox((-2.0,) * 3, (2.0,) * 3, ("grid", 3))
    scheme = ExpectationScheme(samples=4_000, seed=9)
    via_controller = synth.certify_controller(
        plant, law, V, library.EXAMPLE2_BETA, 0.75, box, scheme)
    via_loop = certify.check_external(
        synth.closed_loop(plant, law), V, library.EXAMPLE2_BETA, 0.75,
        box, scheme)
    assert via_controller.status == via_loop.status
    assert via_controller.worst_margin == via_loop.worst_margin
    assert (via_controller.provenance["g_beta_sup"]
            == via_loop.provenance["g_beta_sup"])


# -------------------------------------------------------------- argmin

def test_argmin_improve_matches_quadratic_minimiser():
    plant = integrator_plant()
    V = QuadraticStorage([[1.0]])
    # h(u) = 2 (x + u)^2 + u^2 has the unique minimiser u = -2x/3
    for x0 in (1.5, -0.8, 0.0):
        u = synth.argmin_improve(plant, V, 2.0, np.array([x0]), [0.0], CF)
        assert u[0] == pytest.approx(-2.0 * x0 / 3.0, abs=1e-4)


def test_argmin_improve_idempotent_at_optimum():
    plant = integrator_plant()
    V = QuadraticStorage([[1.0]])
    x0 = 1.5
    u_star = -2.0 * x0 / 3.0
    u = synth.argmin_improve(plant, V, 2.0, np.array([x0]), [u_star], CF)
    assert u[0] == pytest.approx(u_star, abs=1e-4)


def test_argmin_improve_never_worse_than_builtin_law():
    plant = library.example2_plant()
    V = library.example2_storage()
    law = library.example2_law()
    x = np.array([1.0, 0.0, 1.0])
    u = synth.argmin_improve(plant, V, library.EXAMPLE2_BETA, x, law(x), CF)
    h_found = synth.h_design(V, plant, x, u, library.EXAMPLE2_BETA, CF)
    h_law = synth.h_design(V, plant, x, law(x), library.EXAMPLE2_BETA, CF)
    assert h_found.value <= h_law.value + 1e-6


# ----------------------------------------------------------- general tier

def test_h_k_general_worked_value():
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    est = synth.h_k_general(V, plant, [1.0], [0.0], [0.0], 0, MC8)
    assert est.value == pytest.approx(0.25 - 1.0, abs=1e-12)


def test_h_k_general_zero_at_origin():
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    est = synth.h_k_general(V, plant, [0.0], [0.0], [0.0], 0, MC8)
    assert est.value == 0.0


def test_h_k_general_time_varying_storage():
    plant = deterministic_general_plant()

    def V_seq(k):
        scale = 1.0 + 2.0 ** (-k)
        return CustomStorage(lambda x, s=scale: s * float(x[0] ** 2), 1)

    h0_val = synth.h_k_general(V_seq, plant, [1.0], [0.0], [0.0], 0, MC8)
    h1_val = synth.h_k_general(V_seq, plant, [1.0], [0.0], [0.0], 1, MC8)
    # direct oracle: V_{k+1}(0.5) - V_k(1)
    expect_0 = 1.5 * 0.25 - 2.0
    expect_1 = 1.25 * 0.25 - 1.5
    assert h0_val.value == pytest.approx(expect_0, abs=1e-12)
    assert h1_val.value == pytest.approx(expect_1, abs=1e-12)
    assert h1_val.value - h0_val.value == pytest.approx(expect_1 - expect_0,
                                                        abs=1e-12)


def test_certify_controller_general_gamma3():
    # oracle: the quadratic form matrix [[-0.75, 0.5], [0.5, -8]] is negative
    lo, hi = eig2x2([[-0.75, 0.5], [0.5, -8.0]])
    assert hi < 0 and lo < 0
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    box = DomainBox((-3.0,), (3.0,), ("grid", 7))
    vbox = DomainBox((-3.0,), (3.0,), ("grid", 7))
    cert = synth.certify_controller_general(
        plant, lambda x: np.array([0.0]), V, 3.0, box, vbox, MC8)
    assert cert.status == "certified"


def test_certify_controller_general_gamma04_falsified():
    lo, hi = eig2x2([[-0.75, 0.5], [0.5, 0.84]])
    assert hi > 0  # indefinite form: a violating (x, v) exists
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    box = DomainBox((-3.0,), (3.0,), ("grid", 7))
    vbox = DomainBox((-3.0,), (3.0,), ("grid", 7))
    cert = synth.certify_controller_general(
        plant, lambda x: np.array([0.0]), V, 0.4, box, vbox, MC8)
    assert cert.status == "falsified"
    assert cert.witness is not None


def test_certify_controller_general_zero_plant():
    plant = GeneralSystem(
        1, 1, 1,
        F=lambda k, x, u, v, w: np.zeros(1),
        m=lambda k, x, u, v: np.zeros(1),
        noise=point_mass_noise(0.0, 1),
    )
    V = QuadraticStorage([[1.0]])
    box = DomainBox((-1.0,), (1.0,), ("grid", 5))
    for gamma in (0.01, 10.0):
        cert = synth.certify_controller_general(
            plant, lambda x: np.array([0.0]), V, gamma, box, box, MC8)
        assert cert.status == "certified"


# ----------------------------------------------------------- saddle data

def test_saddle_functional_worked_values():
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    saddle = worked_saddle(3.0)
    for x in (1.0, -1.0, 2.0, -2.0):
        est = synth.saddle_functional(plant, saddle, V, [x], 0, MC8)
        assert est.value == pytest.approx(-0.1 * x * x, abs=1e-10)


def test_taylor_certify_worked_instance():
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    box = DomainBox((-2.0,), (2.0,), ("grid", 9))
    cert = synth.taylor_certify(plant, worked_saddle(3.0), V, box, MC8)
    assert cert.status == "certified"


def test_taylor_certify_falsifies_small_gamma():
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    box = DomainBox((-2.0,), (2.0,), ("grid", 9))
    cert = synth.taylor_certify(plant, worked_saddle(2.1), V, box, MC8)
    assert cert.status == "falsified"


def test_taylor_hessian_domination_margin():
    # Hessian of H in (u, v) is [[4, 2], [2, 2]]; blockdiag(8, 4) dominates
    dom_lo, dom_hi = eig2x2([[4 - 8, 2], [2, 2 - 4]])
    assert dom_hi < 0
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    fn = lambda p: synth.h_k_general(  # noqa: E731
        V, plant, [1.0], [p[0]], [p[1]], 0, MC8).value
    hess = synth.central_hessian(fn, np.array([0.0, -0.5]), 1e-3)
    assert np.allclose(hess, [[4.0, 2.0], [2.0, 2.0]], atol=1e-6)


def test_saddle_conditions_hold_with_equality_at_origin():
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    saddle = worked_saddle(3.0)
    est = synth.saddle_functional(plant, saddle, V, [0.0], 0, MC8)
    assert est.value == 0.0
    fn = lambda p: synth.h_k_general(  # noqa: E731
        V, plant, [0.0], [p[0]], [p[1]], 0, MC8).value
    grad = synth.central_gradient(fn, np.array([0.0, 0.0]), 1e-4)
    assert np.allclose(grad, 0.0, atol=1e-9)


def test_saddle_data_requires_gamma_gap():
    with pytest.raises(PreconditionError):
        synth.SaddleData(alpha=lambda x: np.zeros(1), eta=lambda x: np.zeros(1),
                         M=[[1.0]], N=[[4.0]], gamma=2.0)  # gamma^2 = N


def test_stationarity_richardson_order():
    # central differences on a smooth non-quadratic functional show order >= 1.9
    plant = GeneralSystem(
        1, 1, 1,
        F=lambda k, x, u, v, w: np.array([0.5 * x[0] + math.sin(u[0]) + v[0]]),
        m=lambda k, x, u, v: np.array([u[0]]),
        noise=point_mass_noise(0.0, 1),
    )
    V = QuadraticStorage([[1.0]])
    fn = lambda p: synth.h_k_general(  # noqa: E731
        V, plant, [0.7], [p[0]], [p[1]], 0, MC8).value
    p0 = np.array([0.3, -0.2])
    steps = [2e-3, 1e-3, 5e-4]
    grads = [synth.central_gradient(fn, p0, h)[0] for h in steps]
    num = abs(grads[0] - grads[1])
    den = abs(grads[1] - grads[2])
    order = math.log2(num / den)
    assert order >= 1.9


def test_taylor_gain_consistency_on_worked_instance():
    # taylor-certified law: the closed loop under alpha = 0 never violates gamma
    plant = deterministic_general_plant()
    V = QuadraticStorage([[1.0]])
    box = DomainBox((-2.0,), (2.0,), ("grid", 5))
    cert = synth.taylor_certify(plant, worked_saddle(3.0), V, box, MC8)
    assert cert.certified
    from sbrl.dynamics import AffineSystem
    loop = AffineSystem(
        1, 1,
        f=lambda x, w: np.array([0.5 * x[0]]),
        g=lambda x, w: np.array([[1.0]]),
        m=lambda x: np.zeros(1),
        m1=lambda x: np.zeros((0, 1)),
        noise=point_mass_noise(0.0, 1),
    )
    ens = DisturbanceEnsemble.white(1, std=1.0)
    rep = certify.empirical_gain(loop, ens, 60, 40, 9.0, seed=13)
    assert rep.verdict == "consistent"


# ------------------------------------------------------ exact identities

def test_example2_rational_identities():
    p = Fraction(1, 16)
    beta_cubed = Fraction(8, 5)
    assert Fraction(5, 12) * p * beta_cubed + Fraction(1, 48) - p == 0
    assert 5 * 8 ** 3 * beta_cubed == 4096
    assert 4096 > 3645 == 5 * 9 ** 3
    coef = beta_cubed * p / (4 * beta_cubed * p + 2)
    assert coef == Fraction(1, 24)


def test_closed_loop_usable_by_linear_certifier():
    # a linear controlled plant closed with a gain is again linear-checkable
    A = np.array([[0.9]])
    Bu = np.array([[1.0]])
    K = np.array([[-0.5]])
    plant = ControlledSystem(
        1, 1, 1,
        f=lambda x, u, w: A @ x + Bu @ u,
        g=lambda x, w: np.array([[1.0]]),
        m=lambda x, u: np.array([0.5 * x[0]]),
        m1=lambda x: np.zeros((0, 1)),
        noise=point_mass_noise(0.0, 1),
        f_parts=lambda x, u: (A @ x + Bu @ u, [np.zeros(1)]),
        g_parts=lambda x: (np.array([[1.0]]), [np.zeros((1, 1))]),
    )
    loop = synth.closed_loop(plant, synth.FeedbackLaw.linear_gain(K))
    V = QuadraticStorage([[1.0]])
    box = DomainBox((-4.0,), (4.0,), ("grid", 17))
    cert = certify.check_internal(loop, V, 1.0, box, CF)
    assert cert.status == "certified"
    lin = LinearSystem(A + Bu @ K, [[0.0]], [[1.0]], [[0.5]], [[0.0]])
    ref = certify.linear_internal(lin, [[1.0]])
    assert ref.status == "certified"
