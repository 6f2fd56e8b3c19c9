"""State-feedback laws, closed loops and controller certificates.

Substituting a feedback law into the controlled tier yields a first-class
disturbance-driven system, so every stability check applies unchanged to
the closed loop.  The time-invariant design functional

  H(V(x), u, b) = (1/b) E[V(b f(x,u,w))] - V(x) + |m(x,u)|^2

is the controlled analogue of H1; a law alpha certifies whenever
H(V(x), alpha(x), b) <= 0 and G_b(V(x)) <= gamma^2 over the sampled box.
The general time-varying certificate checks
H_k(x, alpha_k(x), v) - gamma^2 |v|^2 <= 0 jointly over (x, v, k), and the
second-order route verifies supplied saddle data (alpha, eta, M, N) by
finite-difference stationarity, Hessian domination and the completed
square functional.
"""

from dataclasses import dataclass

import numpy as np

from .certificates import Certificate, MarginSweep
from .certify import check_external, expected_value_of
from .dynamics import AffineSystem, ControlledSystem, GeneralSystem
from .errors import ConfigurationError, PreconditionError
from .noise import Estimate, derive_seed, expect, hash_point
from .storage import DomainBox, StorageFunction


class FeedbackLaw:
    """State-feedback map u = alpha(x, k); time invariant unless k is used."""

    def __init__(self, fn, n_u, kind="custom", spec=None):
        self._fn = fn
        self.n_u = int(n_u)
        self.kind = kind
        self._spec = spec or {"kind": kind}

    def __call__(self, x, k=0):
        return np.atleast_1d(np.asarray(self._fn(np.asarray(x, dtype=float), k),
                                        dtype=float))

    def spec(self):
        return dict(self._spec)

    @staticmethod
    def zero(n_u):
        z = np.zeros(n_u)
        return FeedbackLaw(lambda x, k: z, n_u, kind="zero")

    @staticmethod
    def linear_gain(K):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        return FeedbackLaw(lambda x, k: K @ x, K.shape[0], kind="linear-gain",
                           spec={"kind": "linear-gain", "K": K.tolist()})

    @staticmethod
    def custom(fn, n_u, label="custom"):
        return FeedbackLaw(lambda x, k: fn(x), n_u, kind=label)


def closed_loop(plant: ControlledSystem, law: FeedbackLaw) -> AffineSystem:
    """Fold u = alpha(x) into the plant, yielding the disturbance-driven loop."""
    if not isinstance(plant, ControlledSystem):
        raise ConfigurationError("closed_loop needs a controlled-tier plant")
    u0 = law(np.zeros(plant.n))
    if u0.shape != (plant.n_u,):
        raise ConfigurationError(
            f"law returns shape {u0.shape}, plant expects ({plant.n_u},)"
        )

    def alpha(x):
        return law(x, 0)

    f_parts = None
    if plant.f_parts is not None:
        def f_parts(x):
            return plant.f_parts(x, alpha(x))

    f_batch = None
    if plant.f_batch is not None:
        def f_batch(x, omegas):
            return plant.f_batch(x, alpha(x), omegas)

    return AffineSystem(
        plant.n, plant.n_v,
        f=lambda x, w: plant.f(x, alpha(x), w),
        g=plant.g,
        m=lambda x: plant.m(x, alpha(x)),
        m1=plant.m1,
        noise=plant.noise,
        f_parts=f_parts,
        g_parts=plant.g_parts,
        f_batch=f_batch,
        gv_batch=plant.gv_batch,
        g_batch=plant.g_batch,
        name=f"{plant.name or 'plant'}<{law.kind}>",
    )


def h_design(V, plant: ControlledSystem, x, u, beta, scheme) -> Estimate:
    """Design functional H(V(x), u, beta) at a candidate control value."""
    if beta <= 1.0:
        raise ConfigurationError(f"beta must exceed 1, got {beta}")
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))

    parts_fn = None
    if plant.f_parts is not None:
        def parts_fn():
            F0, Fs = plant.f_parts(x, u)
            return (np.asarray(F0, dtype=float),
                    [np.asarray(c, dtype=float) for c in Fs])

    def batch_fn(draws):
        if plant.f_batch is not None:
            return np.asarray(plant.f_batch(x, u, draws), dtype=float)
        return np.stack([np.asarray(plant.f(x, u, w), dtype=float)
                         for w in draws])

    ev = expected_value_of(V, plant.noise, scheme, parts_fn, batch_fn, scale=beta)
    m = np.atleast_1d(np.asarray(plant.m(x, u), dtype=float))
    return Estimate(ev.value / beta - V.evaluate(x) + float(m @ m),
                    ev.std_error / beta)


def certify_controller(plant, law, V, beta, gamma, domain: DomainBox,
                       scheme, v_search=None) -> Certificate:
    """Certify a law via the closed loop's external-stability check.

    By construction this returns exactly the statuses and margins of
    check_external on closed_loop(plant, law) with the same seeds.
    """
    loop = closed_loop(plant, law)
    cert = check_external(loop, V, beta, gamma, domain, scheme, v_search)
    cert.notes.append(f"controller certificate for law '{law.kind}'")
    return cert


def argmin_improve(plant, V, beta, x, u0, scheme, step=0.5, shrink_tol=1e-6,
                   max_iter=500) -> np.ndarray:
    """Pointwise compass search decreasing the design functional in u.

    A derivative-free heuristic: evaluates H with common random numbers
    (one derived seed for the whole search) and only ever accepts strict
    improvements, so the result is never worse than u0 on that estimate.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u0, dtype=float)).copy()
    fixed = scheme.with_seed(derive_seed(scheme.seed, hash_point(np.concatenate([x, u]))))

    def value(uu):
        return h_design(V, plant, x, uu, beta, fixed).value

    best = value(u)
    n_u = u.shape[0]
    for _ in range(max_iter):
        if step < shrink_tol:
            break
        improved = False
        for i in range(n_u):
            for sign in (1.0, -1.0):
                trial = u.copy()
                trial[i] += sign * step
                val = value(trial)
                if val < best:
                    u, best = trial, val
                    improved = True
        if not improved:
            step *= 0.5
    return u


def _indexed(items, what):
    items = list(items)

    def at(k):
        if k >= len(items):
            raise ConfigurationError(
                f"{what} sequence has {len(items)} entries, index {k} requested"
            )
        return items[k]

    return at


def _storage_sequence(obj):
    """StorageFunction -> constant; list -> indexed; callable -> k-indexed."""
    if isinstance(obj, StorageFunction):
        return lambda k: obj
    if isinstance(obj, (list, tuple)):
        return _indexed(obj, "storage")
    if callable(obj):
        return obj
    raise ConfigurationError(f"cannot interpret {obj!r} as a storage sequence")


def _map_sequence(obj, what):
    """list -> indexed maps; any callable -> the same map for every k."""
    if isinstance(obj, (list, tuple)):
        return _indexed(obj, what)
    if callable(obj):
        return lambda k: obj
    raise ConfigurationError(f"cannot interpret {obj!r} as a {what} sequence")


def h_k_general(V_seq, plant: GeneralSystem, x, u, v, k, scheme) -> Estimate:
    """Time-varying functional H_k = E[V_{k+1}(F_k(x,u,v,w))] - V_k(x) + |m_k|^2."""
    if not isinstance(plant, GeneralSystem):
        raise ConfigurationError("h_k_general needs the general tier")
    V_of = _storage_sequence(V_seq)
    Vk, Vk1 = V_of(k), V_of(k + 1)
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))

    def integrand(draws):
        return Vk1.evaluate_batch(plant.transition_batch(k, x, u, v, draws))

    if scheme.mode == "closed-form":
        raise ConfigurationError(
            "the general tier declares no noise structure; use monte-carlo "
            "(a point-mass noise model makes it exact)"
        )
    ev = expect(plant.noise, scheme, integrand)
    z = np.atleast_1d(np.asarray(plant.m(k, x, u, v), dtype=float))
    return Estimate(ev.value - Vk.evaluate(x) + float(z @ z), ev.std_error)


def certify_controller_general(plant, alpha_seq, V_seq, gamma,
                               domain: DomainBox, v_box: DomainBox, scheme,
                               k_window=1) -> Certificate:
    """Sampled check of H_k(x, alpha_k(x), v) - gamma^2 |v|^2 <= 0.

    Jointly sweeps the state box, the disturbance box and time indices
    k < k_window.  Certification makes alpha an attenuating feedback on the
    sampled scope; internal stability is reported separately.
    """
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    alpha_of = _map_sequence(alpha_seq, "law")
    V_of = _storage_sequence(V_seq)
    for k in range(k_window + 1):
        v0 = V_of(k).evaluate(np.zeros(plant.n))
        if abs(v0) > 1e-12:
            raise PreconditionError(f"V_{k}(0) = {v0:g}, expected 0")
    gamma_sq = gamma * gamma
    sweep = MarginSweep(
        "H_k(x, alpha_k(x), v) - gamma^2 |v|^2 <= 0",
        f"{domain.label()} x v:{v_box.label()} x k<{k_window}",
        {"scheme": scheme.spec(), "gamma_sq": gamma_sq},
    )
    for k in range(k_window):
        for x in domain.points():
            alpha_k = alpha_of(k)
            u = np.atleast_1d(np.asarray(alpha_k(x), dtype=float))
            for v in v_box.points():
                pt = np.concatenate([x, v, [k]])
                est = h_k_general(V_seq, plant, x, u, v, k,
                                  scheme.with_seed(derive_seed(scheme.seed,
                                                               hash_point(pt))))
                margin = est.value - gamma_sq * float(v @ v)
                sweep.add(margin, std_error=est.std_error,
                          scale=abs(est.value) + gamma_sq * float(v @ v),
                          point=pt, info={"k": k})
    return sweep.finalize(notes=[
        "certified only on the sampled (x, v, k) scope",
        "internal stability of the loop is a separate check",
    ])


@dataclass
class SaddleData:
    """Stationary maps and Hessian dominators for the second-order theorem."""

    alpha: object          # x -> u
    eta: object            # x -> v (worst-case disturbance map)
    M: np.ndarray          # symmetric positive definite, n_u x n_u
    N: np.ndarray          # symmetric, n_v x n_v, gamma^2 I - N > 0
    gamma: float

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.N = np.atleast_2d(np.asarray(self.N, dtype=float))
        if np.max(np.abs(self.M - self.M.T)) > 1e-12 * (1 + np.max(np.abs(self.M))):
            raise ConfigurationError("M must be symmetric")
        if np.linalg.eigvalsh(self.M)[0] <= 0:
            raise ConfigurationError("M must be positive definite")
        if np.max(np.abs(self.N - self.N.T)) > 1e-12 * (1 + np.max(np.abs(self.N))):
            raise ConfigurationError("N must be symmetric")
        gap = np.linalg.eigvalsh(self.gamma ** 2 * np.eye(self.N.shape[0]) - self.N)
        if gap[0] <= 0:
            raise PreconditionError(
                f"gamma^2 I - N must be positive definite (min eig {gap[0]:g})"
            )


def square_completion_matrix(saddle: SaddleData):
    """N + N (gamma^2 I - N)^{-1} N' from the completed disturbance square."""
    n_v = saddle.N.shape[0]
    gap = saddle.gamma ** 2 * np.eye(n_v) - saddle.N
    return saddle.N + saddle.N @ np.linalg.solve(gap, saddle.N.T)


def saddle_functional(plant, saddle: SaddleData, V_seq, x, k, scheme) -> Estimate:
    """Completed-square functional H_k(x, alpha, eta) + (1/2) eta' W eta."""
    alpha_k = _map_sequence(saddle.alpha, "alpha")(k)
    eta_k = _map_sequence(saddle.eta, "eta")(k)
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(alpha_k(x), dtype=float))
    v = np.atleast_1d(np.asarray(eta_k(x), dtype=float))
    W = square_completion_matrix(saddle)
    est = h_k_general(V_seq, plant, x, u, v, k, scheme)
    return Estimate(est.value + 0.5 * float(v @ W @ v), est.std_error)


def central_gradient(fn, p0, rel_step):
    p0 = np.asarray(p0, dtype=float)
    grad = np.zeros_like(p0)
    for i in range(p0.shape[0]):
        h = rel_step * (1.0 + abs(p0[i]))
        if h < 1e-12:
            raise FloatingPointError("finite-difference step underflow")
        e = np.zeros_like(p0)
        e[i] = h
        grad[i] = (fn(p0 + e) - fn(p0 - e)) / (2.0 * h)
    return grad


def central_hessian(fn, p0, rel_step):
    p0 = np.asarray(p0, dtype=float)
    d = p0.shape[0]
    hs = np.array([rel_step * (1.0 + abs(p0[i])) for i in range(d)])
    if np.any(hs < 1e-12):
        raise FloatingPointError("finite-difference step underflow")
    H = np.zeros((d, d))
    f0 = fn(p0)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hs[i]
        H[i, i] = (fn(p0 + ei) - 2.0 * f0 + fn(p0 - ei)) / hs[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = hs[j]
            H[i, j] = H[j, i] = (
                fn(p0 + ei + ej) - fn(p0 + ei - ej)
                - fn(p0 - ei + ej) + fn(p0 - ei - ej)
            ) / (4.0 * hs[i] * hs[j])
    return H


def taylor_certify(plant, saddle: SaddleData, V_seq, domain: DomainBox,
                   scheme, k_window=1, stationarity_tol=1e-4,
                   grad_step=1e-4, hess_step=1e-3, hessian_reps=16,
                   u_box=None, v_box=None) -> Certificate:
    """Verify supplied saddle data for the second-order design theorem.

    Three sampled sub-checks per (x, k):
      (i)   finite-difference gradients of H_k in (u, v) vanish at
            (alpha(x), eta(x)) within stationarity_tol;
      (ii)  the finite-difference (u, v) Hessian is dominated by
            blockdiag(M, N) at the sampled points (and gamma^2 I - N > 0,
            enforced at construction);
      (iii) H_k(x, alpha, eta) + (1/2) eta' [N + N (gamma^2 I - N)^{-1} N'] eta
            stays nonpositive.

    Stochastic plants average each Hessian stencil value over
    ``hessian_reps`` derived Monte Carlo replications with common random
    numbers across stencil points.
    """
    if not isinstance(plant, GeneralSystem):
        raise ConfigurationError("taylor_certify needs the general tier")
    alpha_of = _map_sequence(saddle.alpha, "alpha")
    eta_of = _map_sequence(saddle.eta, "eta")
    n_v = plant.n_v
    gap = saddle.gamma ** 2 * np.eye(n_v) - saddle.N
    cond = np.linalg.cond(gap)
    W = square_completion_matrix(saddle)
    blk = np.block([
        [saddle.M, np.zeros((plant.n_u, n_v))],
        [np.zeros((n_v, plant.n_u)), saddle.N],
    ])
    sweep = MarginSweep(
        "saddle stationarity, Hessian domination, completed-square <= 0",
        f"{domain.label()} x k<{k_window}",
        {"scheme": scheme.spec(), "gamma": saddle.gamma,
         "stationarity_tol": stationarity_tol,
         "inverse_condition_number": float(cond)},
    )
    underflow = False
    for k in range(k_window):
        alpha_k, eta_k = alpha_of(k), eta_of(k)
        for x in domain.points():
            u_star = np.atleast_1d(np.asarray(alpha_k(x), dtype=float))
            v_star = np.atleast_1d(np.asarray(eta_k(x), dtype=float))
            base_seed = derive_seed(scheme.seed,
                                    hash_point(np.concatenate([x, [k]])))

            def H_at(uv, reps=1):
                u, v = uv[: plant.n_u], uv[plant.n_u:]
                total = 0.0
                for r in range(reps):
                    total += h_k_general(
                        V_seq, plant, x, u, v, k,
                        scheme.with_seed(derive_seed(base_seed, r)),
                    ).value
                return total / reps

            p0 = np.concatenate([u_star, v_star])
            try:
                grad = central_gradient(lambda p: H_at(p), p0, grad_step)
            except FloatingPointError:
                underflow = True
                break
            gu = float(np.linalg.norm(grad[: plant.n_u]))
            gv = float(np.linalg.norm(grad[plant.n_u:]))
            sweep.add(gu - stationarity_tol, point=x,
                      info={"check": "stationarity_u", "norm": gu, "k": k})
            sweep.add(gv - stationarity_tol, point=x,
                      info={"check": "stationarity_v", "norm": gv, "k": k})

            uv_points = [p0]
            if u_box is not None and v_box is not None:
                uv_points = [np.concatenate([u, v])
                             for u in u_box.points() for v in v_box.points()]
            for uv in uv_points:
                try:
                    hess = central_hessian(
                        lambda p: H_at(p, reps=hessian_reps), uv, hess_step)
                except FloatingPointError:
                    underflow = True
                    break
                dom = np.linalg.eigvalsh(0.5 * (hess + hess.T) - blk)[-1]
                sweep.add(dom, point=x,
                          info={"check": "hessian_domination", "k": k,
                                "uv": uv.tolist()},
                          scale=float(np.linalg.norm(blk, 2)))
            if underflow:
                break

            est = h_k_general(V_seq, plant, x, u_star, v_star, k,
                              scheme.with_seed(derive_seed(base_seed, 0)))
            script = est.value + 0.5 * float(v_star @ W @ v_star)
            sweep.add(script, std_error=est.std_error, point=x,
                      scale=abs(est.value) + abs(0.5 * float(v_star @ W @ v_star)),
                      info={"check": "completed_square", "k": k})
        if underflow:
            break
    notes = ["finite-difference verification on the sampled scope"]
    if underflow:
        notes.append("finite-difference step underflow; scope incomplete")
    return sweep.finalize(notes=notes, force_inconclusive=underflow)
