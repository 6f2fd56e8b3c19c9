"""Built-in benchmark systems, storage candidates and feedback laws.

Two nonlinear benchmarks ship with the toolkit:

* ``example1`` -- the scalar system x+ = a x + b cos(x) w v with output
  (c x; c1 v).  The drift ignores the noise, which multiplies the
  disturbance channel only; the storage family is V = p x^2.

* ``example2`` -- a three-state controlled system driven by five
  independent uniform coefficients, with a two-channel control, a constant
  gain matrix feeding states 1 and 3, a mixed quadratic/quartic separable
  storage V = p1 x1^2 + p2 x2^4 + p3 x3^2 and an explicit stabilising law.

Both declare affine-in-noise structure and vectorised evaluators, so the
exact expectation paths and fast Monte Carlo sweeps apply.  The linear
tier is built directly from config matrices.
"""

import numpy as np

from .dynamics import (AffineSystem, ControlledSystem, DisturbanceEnsemble,
                       DisturbancePolicy, LinearSystem)
from .errors import ConfigurationError
from .noise import NoiseModel, Uniform, gaussian_noise
from .storage import QuadraticStorage, SeparableStorage
from .synth import FeedbackLaw

EXAMPLE2_BETA = (8.0 / 5.0) ** (1.0 / 3.0)
EXAMPLE2_P = 1.0 / 16.0
EXAMPLE2_GAMMA = 0.75


def example1_system(a=0.99, b=0.01, c=0.2, c1=0.2, noise=None) -> AffineSystem:
    """Scalar benchmark: x+ = a x + b cos(x) w v, z = (c x; c1 v), |a| < 1.

    The driving noise is not fixed by the benchmark beyond E[w] = 0 and
    E[w^2] = 1; the default is standard gaussian.
    """
    if abs(a) >= 1:
        raise ConfigurationError("example1 requires |a| < 1")
    noise = noise if noise is not None else gaussian_noise(0.0, 1.0, 1)

    def f(x, w):
        return np.array([a * x[0]])

    def g(x, w):
        return np.array([[b * np.cos(x[0]) * np.atleast_1d(w)[0]]])

    return AffineSystem(
        1, 1,
        f=f, g=g,
        m=lambda x: np.array([c * x[0]]),
        m1=lambda x: np.array([[c1]]),
        noise=noise,
        f_parts=lambda x: (np.array([a * x[0]]), [np.zeros(1)]),
        g_parts=lambda x: (np.zeros((1, 1)),
                           [np.array([[b * np.cos(x[0])]])]),
        f_batch=lambda x, omegas: np.full((np.atleast_2d(omegas).shape[0], 1),
                                          a * x[0]),
        gv_batch=lambda x, v, omegas: (b * np.cos(x[0]) * v[0])
        * np.atleast_2d(omegas)[:, :1],
        g_batch=lambda x, omegas: (b * np.cos(x[0]))
        * np.atleast_2d(omegas)[:, :1, None],
        name="example1",
    )


def example1_storage(p=4.0) -> QuadraticStorage:
    return QuadraticStorage([[p]])


def example1_ensembles():
    """The two default disturbance families for the scalar benchmark.

    A decaying-envelope sinusoid with per-member random amplitude, plus an
    i.i.d. gaussian ensemble; both have finite energy on any horizon.
    """
    return {
        "decaying-sine": DisturbanceEnsemble.decaying_sine(
            1, decay=0.98, freqs=[0.3], phases=[0.0], amp_range=(0.5, 1.5)),
        "white": DisturbanceEnsemble.white(1, std=0.5),
    }


_E2_NOISE = NoiseModel((
    Uniform(0.0, 1.0),
    Uniform(-0.5, 0.5),
    Uniform(0.0, 1.0),
    Uniform(0.0, 1.0),
    Uniform(0.0, 1.0),
))

_E2_G = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])


def _saturation(t):
    return t / (1.0 + np.abs(t))


def example2_plant() -> ControlledSystem:
    """Three-state controlled benchmark driven by five uniform coefficients."""

    def f(x, u, w):
        w = np.asarray(w, dtype=float)
        s3 = _saturation(x[2])
        return np.array([
            w[0] * x[0] + w[1] * x[1] ** 2 + u[0],
            w[2] * x[1] + w[3] * s3 + u[1],
            w[4] * x[2] * np.cos(x[1]) + u[0],
        ])

    def f_parts(x, u):
        s3 = _saturation(x[2])
        F0 = np.array([u[0], u[1], u[0]])
        return F0, [
            np.array([x[0], 0.0, 0.0]),
            np.array([x[1] ** 2, 0.0, 0.0]),
            np.array([0.0, x[1], 0.0]),
            np.array([0.0, s3, 0.0]),
            np.array([0.0, 0.0, x[2] * np.cos(x[1])]),
        ]

    def f_batch(x, u, omegas):
        omegas = np.atleast_2d(omegas)
        s3 = _saturation(x[2])
        out = np.empty((omegas.shape[0], 3))
        out[:, 0] = omegas[:, 0] * x[0] + omegas[:, 1] * x[1] ** 2 + u[0]
        out[:, 1] = omegas[:, 2] * x[1] + omegas[:, 3] * s3 + u[1]
        out[:, 2] = omegas[:, 4] * x[2] * np.cos(x[1]) + u[0]
        return out

    def m(x, u):
        return np.array([
            0.1 * x[0] + 0.1 * x[2] * np.cos(x[1]),
            x[1] ** 2 / 7.0,
            u[0],
        ])

    return ControlledSystem(
        3, 2, 2,
        f=f,
        g=lambda x, w: _E2_G,
        m=m,
        m1=lambda x: np.zeros((0, 2)),
        noise=_E2_NOISE,
        f_parts=f_parts,
        g_parts=lambda x: (_E2_G, [np.zeros((3, 2))] * 5),
        f_batch=f_batch,
        gv_batch=lambda x, v, omegas: np.broadcast_to(
            _E2_G @ v, (np.atleast_2d(omegas).shape[0], 3)).copy(),
        g_batch=lambda x, omegas: np.broadcast_to(
            _E2_G, (np.atleast_2d(omegas).shape[0], 3, 2)),
        name="example2",
    )


def example2_storage(p1=EXAMPLE2_P, p2=EXAMPLE2_P, p3=EXAMPLE2_P) -> SeparableStorage:
    return SeparableStorage((p1, p2, p3), (2, 4, 2))


def example2_law(beta=EXAMPLE2_BETA, p=EXAMPLE2_P) -> FeedbackLaw:
    """The explicit stabilising law for the three-state benchmark.

    u1 = -(b^3 p / (4 b^3 p + 2)) (x1 + x3 cos x2) completes the square in
    the first channel; u2 = -(x2 + x3/(1+|x3|)) / 2 centres the quartic
    channel.  With b^3 = 8/5 and p = 1/16 the first coefficient is exactly
    1/24.
    """
    b3p = beta ** 3 * p
    coef = b3p / (4.0 * b3p + 2.0)

    def fn(x, k):
        return np.array([
            -coef * (x[0] + x[2] * np.cos(x[1])),
            -0.5 * (x[1] + _saturation(x[2])),
        ])

    return FeedbackLaw(fn, 2, kind="builtin-example2",
                       spec={"kind": "builtin-example2",
                             "beta": beta, "p": p, "u1_coef": coef})


def example2_ensemble():
    """Default two-channel disturbance family for the closed-loop runs."""
    return DisturbanceEnsemble.decaying_sine(
        2, decay=0.98, freqs=[0.3, 0.37], phases=[0.0, 0.9],
        amp_range=(0.5, 1.5))


def linear_from_config(block) -> LinearSystem:
    need = {"A", "A0", "B", "C", "D"}
    missing = need - set(block)
    if missing:
        raise ConfigurationError(f"linear block missing {sorted(missing)}")
    noise = None
    if "noise" in block:
        noise = NoiseModel.from_spec(block["noise"])
    return LinearSystem(block["A"], block["A0"], block["B"], block["C"],
                        block["D"], noise=noise)


def noise_from_config(block) -> NoiseModel:
    return NoiseModel.from_spec(block)


def system_from_config(block, noise=None):
    """Resolve a config system block to (system, tier_name).

    ``noise`` is an optional NoiseModel from the top-level noise block; it
    overrides the default driving noise where the benchmark leaves it open.
    """
    if "builtin" in block:
        name = block["builtin"]
        if name == "example1":
            params = dict(block.get("params", {}))
            return example1_system(**params, noise=noise), "affine"
        if name == "example2":
            if noise is not None:
                raise ConfigurationError(
                    "noise: example2's driving noise is part of the benchmark"
                )
            return example2_plant(), "controlled"
        raise ConfigurationError(f"system.builtin: unknown builtin {name!r}")
    if "linear" in block:
        if noise is not None and "noise" in block["linear"]:
            raise ConfigurationError("noise: specified both at top level and "
                                     "inside system.linear")
        sys_lin = linear_from_config(block["linear"])
        if noise is not None:
            sys_lin = LinearSystem(sys_lin.A, sys_lin.A0, sys_lin.B,
                                   sys_lin.C, sys_lin.D, noise=noise)
        return sys_lin, "linear"
    raise ConfigurationError("system: expected 'builtin' or 'linear'")


def storage_from_config(block):
    if "builtin" in block:
        name = block["builtin"]
        if name == "example1":
            return example1_storage(float(block.get("p", 4.0)))
        if name == "example2":
            return example2_storage()
        raise ConfigurationError(f"storage.builtin: unknown builtin {name!r}")
    if "quadratic" in block:
        return QuadraticStorage(block["quadratic"]["P"])
    if "separable" in block:
        return SeparableStorage(block["separable"]["p"], block["separable"]["d"])
    raise ConfigurationError(
        "storage: expected 'quadratic', 'separable' or 'builtin'"
    )


def law_from_config(block) -> FeedbackLaw:
    if "builtin" in block:
        if block["builtin"] == "example2":
            return example2_law(
                beta=float(block.get("beta", EXAMPLE2_BETA)),
                p=float(block.get("p", EXAMPLE2_P)),
            )
        raise ConfigurationError(f"law.builtin: unknown builtin {block['builtin']!r}")
    if "linear_gain" in block:
        return FeedbackLaw.linear_gain(block["linear_gain"]["K"])
    if "zero" in block:
        return FeedbackLaw.zero(int(block["zero"]))
    raise ConfigurationError("law: expected 'builtin', 'linear_gain' or 'zero'")


def ensemble_from_config(block, n_v) -> DisturbanceEnsemble:
    kind = block.get("kind")
    if kind == "decaying-sine":
        return DisturbanceEnsemble.decaying_sine(
            n_v,
            decay=float(block.get("decay", 0.98)),
            freqs=block.get("freqs"),
            phases=block.get("phases"),
            amp_range=tuple(block.get("amp_range", (0.5, 1.5))),
        )
    if kind == "white":
        return DisturbanceEnsemble.white(n_v, std=float(block.get("std", 0.5)))
    if kind == "zero":
        return DisturbanceEnsemble.fixed(DisturbancePolicy.zero(n_v))
    if kind == "recorded":
        return DisturbanceEnsemble.fixed(
            DisturbancePolicy.recorded(block["values"]))
    if kind == "impulse":
        return DisturbanceEnsemble.fixed(
            DisturbancePolicy.impulse(int(block["step"]), block["vector"]))
    raise ConfigurationError(f"ensemble.disturbance.kind: unknown kind {kind!r}")
