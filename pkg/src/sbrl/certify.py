"""Certificate functionals and stability checks.

Implements the one-step difference functionals used throughout the
analysis:

  delta_v V(x) = E[V(f(x,w) + g(x,w) v)] - V(x)
  H0(V(x))     = delta_0 V(x) + |m(x)|^2
  H1(V(x),b)   = (1/b) E[V(b f(x,w))] - V(x) + |m(x)|^2          (b > 1)
  G_b(V(x))    = sup_{v != 0} {((b-1)/b) E[V((b/(b-1)) g(x,w) v)] / |v|^2
                               + |m1(x) v|^2 / |v|^2}
  G0(V)        = sup_{v != 0} (E[V(g(0,w) v)] + |m1(0) v|^2) / |v|^2

on top of which sit the internal/external stability checks, the gamma-star
upper-bound search, the algebraic linear-case checks, and the empirical
gain falsifier.  All quantities come back as Estimate(value, std_error);
expectations follow the caller's ExpectationScheme, so a Monte Carlo and a
closed-form route through the same functional stay genuinely independent.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .certificates import Certificate, MarginSweep, base_tolerance
from .dynamics import (AffineSystem, ControlledSystem, LinearSystem,
                       energy_ratio, simulate_ensemble)
from .errors import ConfigurationError, DivergenceError, PreconditionError
from .noise import (Estimate, derive_seed, expect, expected_affine_power,
                    expected_gram, expected_quad_form, hash_point)
from .storage import (DomainBox, QuadraticStorage, SeparableStorage,
                      quad_bound)


def eig_tolerance(X) -> float:
    """Tolerance for symmetric eigenvalue checks: 1e-9 * (1 + ||X||)."""
    return 1e-9 * (1.0 + float(np.linalg.norm(X, 2)))


def sym_eig_max(X) -> float:
    """Largest eigenvalue of the symmetrised matrix (X + X') / 2."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(np.linalg.eigvalsh(0.5 * (X + X.T))[-1])


def _as_affine(system) -> AffineSystem:
    if isinstance(system, LinearSystem):
        return system.as_affine()
    if isinstance(system, AffineSystem):
        return system
    raise ConfigurationError(
        f"expected an affine or linear system, got {type(system).__name__}"
    )


def _gain_view(system):
    """The disturbance channel (g, m1) is tier independent: the controlled
    tier is accepted as-is for the gain functionals."""
    if isinstance(system, LinearSystem):
        return system.as_affine()
    if isinstance(system, (AffineSystem, ControlledSystem)):
        return system
    raise ConfigurationError(
        f"expected a system with a disturbance gain, got {type(system).__name__}"
    )


def _closed_form_expectation(V, noise, c0, cs, scale):
    """Exact E[V(scale * (c0 + sum_d cs[d] w_d))] for quadratic/separable V."""
    if isinstance(V, QuadraticStorage):
        return expected_quad_form(
            V.P, scale * np.asarray(c0, dtype=float),
            [scale * np.asarray(c, dtype=float) for c in cs], noise,
        )
    if isinstance(V, SeparableStorage):
        if max(V.d) > 4:
            raise ConfigurationError(
                "closed-form path supports separable powers <= 4"
            )
        c0 = np.asarray(c0, dtype=float)
        total = 0.0
        for i, (p, d) in enumerate(zip(V.p, V.d)):
            total += p * expected_affine_power(
                scale * c0[i], [scale * np.asarray(c, dtype=float)[i] for c in cs],
                d, noise,
            )
        return total
    raise ConfigurationError(
        "closed-form expectation needs a quadratic or separable storage"
    )


def expected_value_of(V, noise, scheme, parts_fn, batch_fn, scale=1.0) -> Estimate:
    """E[V(scale * y(w))] where y is given by structure and/or a batch map.

    ``parts_fn() -> (c0, [c_d])`` declares y(w) = c0 + sum_d c_d w_d for the
    exact path (may be None); ``batch_fn(draws) -> (N, n)`` evaluates y row
    wise for the Monte Carlo path.
    """
    if scheme.mode == "closed-form":
        if parts_fn is None:
            raise ConfigurationError(
                "closed-form expectation needs a declared affine-in-noise "
                "structure; use a monte-carlo scheme instead"
            )
        c0, cs = parts_fn()
        return Estimate(_closed_form_expectation(V, noise, c0, cs, scale))

    def integrand(draws):
        return V.evaluate_batch(scale * batch_fn(draws))

    return expect(noise, scheme, integrand)


def expected_storage(V, system, x, scheme, scale=1.0, v=None) -> Estimate:
    """E[V(scale * (f(x,w) + g(x,w) v))] under the given scheme."""
    x = np.asarray(x, dtype=float)
    use_v = v is not None and np.any(np.asarray(v) != 0.0)

    parts_fn = None
    if system.f_parts is not None and (not use_v or system.g_parts is not None):
        def parts_fn():
            F0, Fs = system.f_parts(x)
            c0 = np.asarray(F0, dtype=float)
            cs = [np.asarray(c, dtype=float) for c in Fs]
            if use_v:
                G0, Gs = system.g_parts(x)
                vv = np.asarray(v, dtype=float)
                c0 = c0 + np.asarray(G0, dtype=float) @ vv
                cs = [c + np.asarray(G, dtype=float) @ vv
                      for c, G in zip(cs, Gs)]
            return c0, cs

    def batch_fn(draws):
        y = system.drift_batch(x, draws)
        if use_v:
            y = y + system.gain_times_v_batch(x, np.asarray(v, dtype=float), draws)
        return y

    return expected_value_of(V, system.noise, scheme, parts_fn, batch_fn, scale)


def delta_v(V, system, x, v, scheme) -> Estimate:
    """One-step expected change of V along the disturbed dynamics."""
    system = _as_affine(system)
    ev = expected_storage(V, system, x, scheme, scale=1.0, v=v)
    return Estimate(ev.value - V.evaluate(x), ev.std_error)


def h0(V, system, x, scheme) -> Estimate:
    """Internal-stability functional: delta_0 V(x) + |m(x)|^2."""
    system = _as_affine(system)
    dv = delta_v(V, system, x, np.zeros(system.n_v), scheme)
    m = np.atleast_1d(np.asarray(system.m(np.asarray(x, dtype=float)), dtype=float))
    return Estimate(dv.value + float(m @ m), dv.std_error)


def h1(V, system, x, beta, scheme) -> Estimate:
    """Convexity-split internal functional (1/b) E[V(b f)] - V + |m|^2."""
    if beta <= 1.0:
        raise ConfigurationError(f"beta must exceed 1, got {beta}")
    system = _as_affine(system)
    ev = expected_storage(V, system, x, scheme, scale=beta)
    x = np.asarray(x, dtype=float)
    m = np.atleast_1d(np.asarray(system.m(x), dtype=float))
    value = ev.value / beta - V.evaluate(x) + float(m @ m)
    return Estimate(value, ev.std_error / beta)


def _m1_gram(system, x):
    M1 = np.atleast_2d(np.asarray(system.m1(np.asarray(x, dtype=float)), dtype=float))
    if M1.size == 0:
        return np.zeros((system.n_v, system.n_v))
    return M1.T @ M1


def _gram_estimate(system, x, P, scheme):
    """E[g(x,w)' P g(x,w)] with an entrywise standard-error matrix."""
    if scheme.mode == "closed-form":
        if system.g_parts is None:
            raise ConfigurationError("closed-form gram needs g_parts")
        G0, Gs = system.g_parts(np.asarray(x, dtype=float))
        return expected_gram(P, G0, Gs, system.noise), 0.0
    draws = system.noise.sample(scheme.seed, scheme.samples, scheme.antithetic)
    gs = system.gain_batch(np.asarray(x, dtype=float), draws)
    grams = np.einsum("kij,il,klm->kjm", gs, np.asarray(P, dtype=float), gs)
    mean = grams.mean(axis=0)
    n = grams.shape[0]
    if n < 2:
        return mean, 0.0
    se = grams.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, float(np.linalg.norm(se, 2))


def _default_v_search(n_v):
    return ("sphere", 64, (0.5, 1.0, 2.0), 0)


def _sphere_directions(n_v, count, seed):
    rng = np.random.default_rng(int(seed))
    dirs = rng.standard_normal((count, n_v))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    axes = np.concatenate([np.eye(n_v), -np.eye(n_v)])
    return np.concatenate([axes, dirs])


def g_beta(V, system, x, beta, scheme, v_search=None) -> Estimate:
    """Disturbance-channel gain functional G_beta(V(x)).

    Quadratic storage takes the exact Rayleigh-quotient path
    lambda_max((b/(b-1)) E[g'Pg] + m1'm1).  Separable storage is exact when
    the gain matrix is noise free and only feeds quadratic coordinates (the
    supremum is infinite when a higher-power coordinate is excited).  All
    other candidates fall back to sphere sampling, which yields a lower
    bound on the supremum and is flagged as such.
    """
    if beta <= 1.0:
        raise ConfigurationError(f"beta must exceed 1, got {beta}")
    system = _gain_view(system)
    x = np.asarray(x, dtype=float)
    c = beta / (beta - 1.0)
    m1m1 = _m1_gram(system, x)

    if isinstance(V, QuadraticStorage):
        gram, gram_se = _gram_estimate(system, x, V.P, scheme)
        M = c * gram + m1m1
        return Estimate(sym_eig_max(M), c * gram_se)

    if isinstance(V, SeparableStorage) and system.g_parts is not None:
        G0, Gs = system.g_parts(x)
        G0 = np.atleast_2d(np.asarray(G0, dtype=float))
        if all(np.allclose(np.asarray(G, dtype=float), 0.0) for G in Gs):
            quad_rows = np.array([d == 2 for d in V.d])
            if np.any(np.abs(G0[~quad_rows]) > 0.0):
                # a power-4 coordinate is excited: V grows faster than |v|^2
                return Estimate(np.inf, 0.0)
            P2 = np.diag([p if d == 2 else 0.0 for p, d in zip(V.p, V.d)])
            M = c * (G0.T @ P2 @ G0) + m1m1
            return Estimate(sym_eig_max(M), 0.0)

    spec = v_search if v_search is not None else _default_v_search(system.n_v)
    if spec[0] != "sphere":
        raise ConfigurationError(f"unknown v-search spec {spec!r}")
    _, count, radii, seed = spec
    best = Estimate(-np.inf, 0.0, lower_bound_only=True)
    for direction in _sphere_directions(system.n_v, count, seed):
        for r in radii:
            vv = r * direction
            # objective: ((b-1)/b) E[V(c g v)] / |v|^2 + |m1 v|^2 / |v|^2
            ev = _expected_gain_term(V, system, x, vv, c, scheme)
            obj = (ev.value / c + float(vv @ m1m1 @ vv)) / (r * r)
            if obj > best.value:
                best = Estimate(obj, ev.std_error / (c * r * r),
                                lower_bound_only=True)
    return best


def _expected_gain_term(V, system, x, v, scale, scheme) -> Estimate:
    """E[V(scale * g(x,w) v)] for the sampled G_beta / G0 paths."""
    if scheme.mode == "closed-form":
        if system.g_parts is None:
            raise ConfigurationError("closed-form gain term needs g_parts")
        G0, Gs = system.g_parts(np.asarray(x, dtype=float))
        vv = np.asarray(v, dtype=float)
        c0 = np.asarray(G0, dtype=float) @ vv
        cs = [np.asarray(G, dtype=float) @ vv for G in Gs]
        return Estimate(_closed_form_expectation(V, system.noise, c0, cs, scale))

    def integrand(draws):
        y = system.gain_times_v_batch(np.asarray(x, dtype=float),
                                      np.asarray(v, dtype=float), draws)
        return V.evaluate_batch(scale * y)

    return expect(system.noise, scheme, integrand)


def g0(V, system, scheme, v_search=None) -> Estimate:
    """Origin gain functional G0(V) from the necessity direction."""
    system = _gain_view(system)
    zero = np.zeros(system.n)
    m1m1 = _m1_gram(system, zero)

    if isinstance(V, QuadraticStorage):
        gram, gram_se = _gram_estimate(system, zero, V.P, scheme)
        return Estimate(sym_eig_max(gram + m1m1), gram_se)

    if isinstance(V, SeparableStorage) and system.g_parts is not None:
        G0, Gs = system.g_parts(zero)
        G0 = np.atleast_2d(np.asarray(G0, dtype=float))
        if all(np.allclose(np.asarray(G, dtype=float), 0.0) for G in Gs):
            quad_rows = np.array([d == 2 for d in V.d])
            if np.any(np.abs(G0[~quad_rows]) > 0.0):
                return Estimate(np.inf, 0.0)
            P2 = np.diag([p if d == 2 else 0.0 for p, d in zip(V.p, V.d)])
            return Estimate(sym_eig_max(G0.T @ P2 @ G0 + m1m1), 0.0)

    spec = v_search if v_search is not None else _default_v_search(system.n_v)
    _, count, radii, seed = spec
    best = Estimate(-np.inf, 0.0, lower_bound_only=True)
    for direction in _sphere_directions(system.n_v, count, seed):
        for r in radii:
            vv = r * direction
            ev = _expected_gain_term(V, system, zero, vv, 1.0, scheme)
            obj = (ev.value + float(vv @ m1m1 @ vv)) / (r * r)
            if obj > best.value:
                best = Estimate(obj, ev.std_error / (r * r), lower_bound_only=True)
    return best


def _point_scheme(scheme, x):
    """Derive a per-point seed so sweeps are order independent."""
    if scheme.mode == "closed-form":
        return scheme
    return scheme.with_seed(derive_seed(scheme.seed, hash_point(x)))


def check_internal(system, V, c2, domain: DomainBox, scheme) -> Certificate:
    """Internal-stability certificate: V <= c2 |x|^2 and H0(V) <= 0 sampled.

    Goes inconclusive instead of certifying when the growth-bound ratio is
    still rising at the box boundary, since the claim cannot be
    extrapolated outside the sampled domain.
    """
    if c2 <= 0:
        raise ConfigurationError("c2 must be positive")
    system = _as_affine(system)
    qb = quad_bound(V, domain)
    sweep = MarginSweep(
        "V(x) <= c2 |x|^2 and H0(V(x)) <= 0",
        domain.label(),
        {"scheme": scheme.spec(), "c2": c2, "quad_bound": qb.to_dict()},
    )
    for x in domain.points():
        vx = V.evaluate(x)
        nx2 = float(x @ x)
        sweep.add(vx - c2 * nx2, scale=max(abs(vx), c2 * nx2),
                  point=x, info={"inequality": "growth"})
        est = h0(V, system, x, _point_scheme(scheme, x))
        m = np.atleast_1d(np.asarray(system.m(x), dtype=float))
        sweep.add(est.value, std_error=est.std_error,
                  scale=abs(est.value) + vx + float(m @ m),
                  point=x, info={"inequality": "H0"})
    notes = []
    force = False
    if qb.boundary_attained:
        force = True
        notes.append(
            "growth-bound ratio attains its maximum on the box boundary; "
            "the c2 claim does not extrapolate beyond the sampled domain"
        )
    notes.append(f"certified only on {domain.label()}")
    return sweep.finalize(notes=notes, force_inconclusive=force)


def check_external(system, V, beta, gamma, domain: DomainBox, scheme,
                   v_search=None) -> Certificate:
    """External-stability certificate: H1 <= 0 and G_beta <= gamma^2 sampled.

    Requires a storage candidate that carries a convexity claim (run
    storage.check_convex first for custom candidates) and V(0) = 0.
    Certification is scoped to the sampled box; when it holds together with
    a quadratic growth bound, internal stability follows as well and a note
    records that.
    """
    if beta <= 1.0:
        raise ConfigurationError("beta must exceed 1")
    if gamma <= 0.0:
        raise ConfigurationError("gamma must be positive")
    if not V.claims_convex:
        raise PreconditionError(
            "external-stability check needs a convexity-certified storage; "
            "run check_convex and set claims_convex first"
        )
    v0 = V.evaluate(np.zeros(V.dim))
    if abs(v0) > 1e-12:
        raise PreconditionError(f"V(0) = {v0:g}, expected 0")
    system = _as_affine(system)
    gamma_sq = gamma * gamma
    sweep = MarginSweep(
        "H1(V(x),beta) <= 0 and G_beta(V(x)) <= gamma^2",
        domain.label(),
        {"scheme": scheme.spec(), "beta": beta, "gamma_sq": gamma_sq},
    )
    lower_bound_used = False
    g_sup = -np.inf
    h1_worst = -np.inf
    for x in domain.points():
        pt_scheme = _point_scheme(scheme, x)
        est1 = h1(V, system, x, beta, pt_scheme)
        m = np.atleast_1d(np.asarray(system.m(x), dtype=float))
        h1_worst = max(h1_worst, est1.value)
        sweep.add(est1.value, std_error=est1.std_error,
                  scale=abs(est1.value) + V.evaluate(x) + float(m @ m),
                  point=x, info={"inequality": "H1"})
        estg = g_beta(V, system, x, beta, pt_scheme, v_search)
        g_sup = max(g_sup, estg.value)
        if estg.lower_bound_only:
            lower_bound_used = True
        sweep.add(estg.value - gamma_sq, std_error=estg.std_error,
                  scale=max(abs(estg.value), gamma_sq),
                  point=x, info={"inequality": "G_beta"})
    notes = [f"certified only on {domain.label()}"]
    force = False
    if lower_bound_used:
        force = True
        notes.append(
            "G_beta evaluated by sphere sampling (lower bound on the "
            "supremum); cannot certify the upper-bound claim"
        )
    if isinstance(V, QuadraticStorage):
        notes.append(
            f"V <= {V.lambda_max:g} |x|^2, so certification also implies "
            "internal stability on this domain"
        )
    cert = sweep.finalize(notes=notes, force_inconclusive=force)
    cert.provenance["g_beta_sup"] = float(g_sup)
    cert.provenance["h1_worst"] = float(h1_worst)
    return cert


@dataclass
class GammaStarResult:
    """Outcome of the gamma-star grid search (upper bound on the gain)."""

    status: str
    gamma_star_sq: float | None
    beta: float | None
    params: object
    sup_point: list | None
    candidates_checked: int
    feasible_count: int
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "status": self.status,
            "gamma_star_sq": self.gamma_star_sq,
            "beta": self.beta,
            "params": self.params,
            "sup_point": self.sup_point,
            "candidates_checked": self.candidates_checked,
            "feasible_count": self.feasible_count,
            "notes": list(self.notes),
        }


def gamma_star_search(system, candidates, beta_grid, domain: DomainBox,
                      scheme, v_search=None) -> GammaStarResult:
    """Minimise the sampled sup of G_beta over (beta, V) with H1 feasible.

    ``candidates`` is a finite family of (params, StorageFunction) pairs.
    Feasibility means the sampled H1 margins all stay below tolerance.
    Ties are broken towards the smallest beta.  The returned value is an
    upper bound on the squared gain, scoped to the sampled domain.
    """
    system = _as_affine(system)
    points = domain.points()
    best = None
    checked = 0
    feasible = 0
    lower_bound_used = False
    for beta in sorted(float(b) for b in beta_grid):
        if beta <= 1.0:
            continue
        for params, V in candidates:
            checked += 1
            ok = True
            for x in points:
                est = h1(V, system, x, beta, _point_scheme(scheme, x))
                m = np.atleast_1d(np.asarray(system.m(x), dtype=float))
                tol = base_tolerance(abs(est.value) + V.evaluate(x) + float(m @ m))
                if est.value > tol:
                    ok = False
                    break
            if not ok:
                continue
            feasible += 1
            sup_val = -np.inf
            sup_pt = None
            for x in points:
                estg = g_beta(V, system, x, beta, _point_scheme(scheme, x), v_search)
                if estg.lower_bound_only:
                    lower_bound_used = True
                if estg.value > sup_val:
                    sup_val = estg.value
                    sup_pt = x
            if best is None or sup_val < best[0] - 1e-15:
                best = (sup_val, beta, params, sup_pt)
    if best is None:
        return GammaStarResult(
            status="infeasible", gamma_star_sq=None, beta=None, params=None,
            sup_point=None, candidates_checked=checked, feasible_count=0,
            notes=["no (beta, V) candidate satisfied the sampled H1 inequality"],
        )
    notes = [f"upper bound on the squared l2-gain, scoped to {domain.label()}"]
    if lower_bound_used:
        notes.append("sampled v-supremum used; value may understate G_beta")
    return GammaStarResult(
        status="ok",
        gamma_star_sq=float(best[0]),
        beta=float(best[1]),
        params=best[2],
        sup_point=None if best[3] is None else [float(t) for t in best[3]],
        candidates_checked=checked,
        feasible_count=feasible,
        notes=notes,
    )


@dataclass
class EnvelopeTable:
    """Empirical C1/C2 ratio envelopes over a beta grid."""

    rows: list                  # (beta, c1_hat, c2_hat)
    c1_at_one: float
    c1_at_one_below_one: bool
    beta0: float | None

    def to_dict(self):
        return {
            "rows": [[b, c1, c2] for b, c1, c2 in self.rows],
            "c1_at_one": self.c1_at_one,
            "c1_at_one_below_one": self.c1_at_one_below_one,
            "beta0": self.beta0,
        }


def estimate_c1_c2(system, Vbar, beta_grid, domain: DomainBox, scheme,
                   exclude_below=1e-8) -> EnvelopeTable:
    """Sampled envelopes of the ratio E[Vbar(beta f(x,w))] / Vbar(x).

    C1-hat is the sampled sup, C2-hat the sampled inf; samples with
    Vbar(x) <= exclude_below are dropped.  Also reports whether
    C1-hat(1) < 1 and the first grid beta > 1 with beta - C1-hat(beta) > 0.
    """
    system = _as_affine(system)
    points = [x for x in domain.points() if Vbar.evaluate(x) > exclude_below]
    if not points:
        raise ConfigurationError("no samples with Vbar(x) above the exclusion level")

    def envelope(beta):
        ratios = []
        for x in points:
            ev = expected_storage(Vbar, system, x, _point_scheme(scheme, x),
                                  scale=beta)
            ratios.append(ev.value / Vbar.evaluate(x))
        return float(max(ratios)), float(min(ratios))

    c1_at_one, _ = envelope(1.0 + 0.0)
    rows = []
    beta0 = None
    for beta in sorted(float(b) for b in beta_grid):
        c1_hat, c2_hat = envelope(beta)
        rows.append((beta, c1_hat, c2_hat))
        if beta0 is None and beta > 1.0 and beta - c1_hat > 0.0:
            beta0 = beta
    return EnvelopeTable(
        rows=rows,
        c1_at_one=c1_at_one,
        c1_at_one_below_one=bool(c1_at_one < 1.0),
        beta0=beta0,
    )


def derive_p0_q0_gamma0(C1, C2, beta0, c2, sigma_max_g, sigma_max_m1):
    """Scaling constants turning a constructed storage into a gain certificate.

    q0 = C1(b0)(1 - C2(1)) / (b0 - C1(b0)),  p0 = q0 b0 / C1(b0),
    gamma0^2 = c2 b0^2 sigma_max_g / (b0 - 1) + sigma_max_m1.
    """
    if beta0 <= 1.0:
        raise ConfigurationError(f"beta0 must exceed 1, got {beta0}")
    c1_b0 = float(C1(beta0))
    c2_1 = float(C2(1.0))
    if beta0 - c1_b0 <= 0.0:
        raise ConfigurationError(
            f"need beta0 - C1(beta0) > 0, got {beta0} - {c1_b0:g}"
        )
    if c2_1 >= 1.0:
        raise ConfigurationError(f"need C2(1) < 1, got {c2_1:g}")
    if c1_b0 <= 0.0:
        raise ConfigurationError(f"need C1(beta0) > 0, got {c1_b0:g}")
    q0 = c1_b0 * (1.0 - c2_1) / (beta0 - c1_b0)
    p0 = q0 * beta0 / c1_b0
    gamma0_sq = c2 * beta0 ** 2 * sigma_max_g / (beta0 - 1.0) + sigma_max_m1
    return q0, p0, gamma0_sq


def _require_spd(P, what="P"):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] != P.shape[1] or np.max(np.abs(P - P.T)) > 1e-10 * (1 + np.max(np.abs(P))):
        raise PreconditionError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise PreconditionError(f"{what} must be positive definite")
    return 0.5 * (P + P.T)


def linear_internal(linsys: LinearSystem, P) -> Certificate:
    """Exact linear internal-stability test A'PA + A0'PA0 - P + C'C <= 0."""
    if isinstance(P, QuadraticStorage):
        P = P.P
    P = _require_spd(P)
    A, A0, C = linsys.A, linsys.A0, linsys.C
    L = A.T @ P @ A + A0.T @ P @ A0 - P + C.T @ C
    margin = sym_eig_max(L)
    tol = eig_tolerance(L)
    status = "certified" if margin <= tol else "falsified"
    witness = None
    if status == "falsified":
        eigvals, eigvecs = np.linalg.eigh(0.5 * (L + L.T))
        witness = {"direction": eigvecs[:, -1].tolist(), "margin": margin}
    return Certificate(
        status=status,
        inequality="A'PA + A0'PA0 - P + C'C <= 0",
        domain="matrix inequality (exact eigenvalue check)",
        worst_margin=margin,
        witness=witness,
        provenance={"P": P.tolist(), "tolerance_rule": "1e-9*(1+||X||)"},
        tolerance=tol,
        notes=[],
    )


@dataclass
class LinearBRLReport:
    """Bounded-real verification record for the linear tier."""

    status: str
    P: np.ndarray | None
    beta: float | None
    gamma_sq: float
    eq_gain_margin: float | None       # (b^2/(b-1)) B'PB + D'D - gamma^2 I
    eq_internal_margin: float | None   # b (A'PA + A0'PA0) - P + C'C
    sigma_bar: float
    sigma_min: float
    beta0_interval: tuple | None
    p0: float | None
    notes: list = field(default_factory=list)

    @property
    def certified(self):
        return self.status == "certified"

    def to_dict(self):
        return {
            "status": self.status,
            "P": None if self.P is None else np.asarray(self.P).tolist(),
            "beta": self.beta,
            "gamma_sq": self.gamma_sq,
            "eq_gain_margin": self.eq_gain_margin,
            "eq_internal_margin": self.eq_internal_margin,
            "sigma_bar": self.sigma_bar,
            "sigma_min": self.sigma_min,
            "beta0_interval": None if self.beta0_interval is None
            else list(self.beta0_interval),
            "p0": self.p0,
            "notes": list(self.notes),
        }


def _structure_diagnostics(linsys):
    S = linsys.A.T @ linsys.A + linsys.A0.T @ linsys.A0
    eigs = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(eigs[-1]), float(eigs[0])


def _construction_p0(beta, sigma_bar, sigma_min):
    """Storage scaling from the envelope construction, C_i(b) = sigma_i b^2."""
    denom = beta - sigma_bar * beta * beta
    if denom <= 0.0:
        return None
    return beta * (1.0 - sigma_min) / denom


def linear_brl(linsys: LinearSystem, P, beta, gamma_sq) -> LinearBRLReport:
    """Verify the two linear bounded-real inequalities by eigenvalue margins.

    Gain inequality:     (b^2/(b-1)) B'PB + D'D <= gamma^2 I
    Internal inequality: b (A'PA + A0'PA0) - P + C'C <= 0
    """
    if isinstance(P, QuadraticStorage):
        P = P.P
    P = _require_spd(P)
    if beta <= 1.0:
        raise ConfigurationError("beta must exceed 1")
    A, A0, B, C, D = linsys.A, linsys.A0, linsys.B, linsys.C, linsys.D
    eq35 = (beta ** 2 / (beta - 1.0)) * (B.T @ P @ B) + D.T @ D \
        - gamma_sq * np.eye(linsys.n_v)
    eq36 = beta * (A.T @ P @ A + A0.T @ P @ A0) - P + C.T @ C
    m35 = sym_eig_max(eq35)
    m36 = sym_eig_max(eq36)
    ok = m35 <= eig_tolerance(eq35) and m36 <= eig_tolerance(eq36)
    sigma_bar, sigma_min = _structure_diagnostics(linsys)
    interval = (1.0, 1.0 / sigma_bar) if sigma_bar < 1.0 else None
    p0 = None
    if interval is not None and interval[0] < beta < interval[1]:
        p0 = _construction_p0(beta, sigma_bar, sigma_min)
    return LinearBRLReport(
        status="certified" if ok else "falsified",
        P=P, beta=float(beta), gamma_sq=float(gamma_sq),
        eq_gain_margin=m35, eq_internal_margin=m36,
        sigma_bar=sigma_bar, sigma_min=sigma_min,
        beta0_interval=interval, p0=p0,
        notes=[],
    )


def series_storage_matrix(linsys: LinearSystem, rhs=None, tol=1e-14,
                          max_terms=100_000):
    """Truncated series solution of A'XA + A0'XA0 - X + rhs = 0.

    This is the linear instance of the constructive storage function: the
    sum of iterated adjoint applications of the noise-averaged transition
    to rhs (default C'C).  Requires sigma_bar(A'A + A0'A0) < 1 for
    convergence.
    """
    sigma_bar, _ = _structure_diagnostics(linsys)
    if sigma_bar >= 1.0:
        raise ConfigurationError(
            f"series diverges: sigma_bar(A'A + A0'A0) = {sigma_bar:g} >= 1"
        )
    A, A0, C = linsys.A, linsys.A0, linsys.C
    term = C.T @ C if rhs is None else np.asarray(rhs, dtype=float)
    total = term.copy()
    for _ in range(max_terms):
        term = A.T @ term @ A + A0.T @ term @ A0
        total += term
        if np.linalg.norm(term, 2) <= tol * (1.0 + np.linalg.norm(total, 2)):
            break
    return 0.5 * (total + total.T)


def _pencil_max(numerator, denominator):
    """lambda_max of the symmetric pencil (numerator, denominator > 0)."""
    L = np.linalg.cholesky(denominator)
    M = np.linalg.solve(L, np.linalg.solve(L, numerator.T).T)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def linear_brl_search(linsys: LinearSystem, gamma_sq, beta_grid=None,
                      grid_size=40, slack=1e-2) -> LinearBRLReport:
    """Constructive bounded-real search: series storage scaled per beta.

    Builds the series matrix for C'C + slack*I (the slack keeps the
    internal inequality strictly feasible so a scaling exists even when
    C'C is rank deficient), then for each beta in a log-spaced grid inside
    the admissible interval picks the smallest scaling p with
    p (Pbar - beta T(Pbar)) >= C'C, which is the exact feasibility
    threshold of the internal inequality, and returns the first (P, beta)
    that also passes the gain inequality.  Betas are tried in order of
    increasing gain factor beta^2/(beta-1), so the least demanding
    candidate goes first.
    """
    sigma_bar, sigma_min = _structure_diagnostics(linsys)
    base = LinearBRLReport(
        status="inconclusive", P=None, beta=None, gamma_sq=float(gamma_sq),
        eq_gain_margin=None, eq_internal_margin=None,
        sigma_bar=sigma_bar, sigma_min=sigma_min,
        beta0_interval=(1.0, 1.0 / sigma_bar) if sigma_bar < 1.0 else None,
        p0=None, notes=[],
    )
    if sigma_bar >= 1.0:
        base.notes.append(
            f"structural contraction fails: sigma_bar = {sigma_bar:g} >= 1"
        )
        return base
    CtC = linsys.C.T @ linsys.C
    eps = slack * (1.0 + np.linalg.norm(CtC, 2))
    Pbar = series_storage_matrix(linsys, rhs=CtC + eps * np.eye(linsys.n))
    T = linsys.A.T @ Pbar @ linsys.A + linsys.A0.T @ Pbar @ linsys.A0
    rho_max = _pencil_max(T, Pbar)
    if rho_max >= 1.0:
        base.notes.append(f"ratio envelope rho_max = {rho_max:g} >= 1")
        return base
    cap = 1.0 / rho_max
    if beta_grid is None:
        beta_grid = 1.0 + (cap - 1.0) * np.geomspace(1e-4, 0.9999, grid_size)
    best = None
    ordered = sorted((float(b) for b in beta_grid),
                     key=lambda b: b * b / (b - 1.0) if b > 1.0 else np.inf)
    for beta in ordered:
        if not 1.0 < beta < cap:
            continue
        S = Pbar - beta * T
        if np.linalg.eigvalsh(S)[0] <= 0.0:
            continue
        p0 = max(_pencil_max(CtC, S), 1e-12)
        rep = linear_brl(linsys, p0 * Pbar, beta, gamma_sq)
        rep.p0 = p0
        rep.notes.append(
            "P = p0 * (series storage of C'C + slack I); p0 is the minimal "
            "scaling satisfying the internal inequality at this beta"
        )
        if rep.certified:
            return rep
        key = max(rep.eq_gain_margin, rep.eq_internal_margin)
        if best is None or key < best[0]:
            best = (key, rep)
    if best is not None:
        rep = best[1]
        rep.status = "inconclusive"
        rep.notes.append("no grid beta certified; closest margins reported")
        return rep
    base.notes.append("no admissible beta in the grid")
    return base


@dataclass
class GainReport:
    """Empirical l2-gain ensemble record (a falsifier, never a proof)."""

    count: int
    ratios: list
    max_ratio: float | None
    mean_energy_ratio: float
    ratio_std_error: float
    gamma_sq: float
    verdict: str
    seed: int
    horizon: int
    diverged: int = 0
    ensemble_spec: dict = field(default_factory=dict)

    @property
    def consistent(self):
        return self.verdict == "consistent"

    def to_dict(self):
        return {
            "count": self.count,
            "ratios": [None if r is None else float(r) for r in self.ratios],
            "max_ratio": self.max_ratio,
            "mean_energy_ratio": self.mean_energy_ratio,
            "ratio_std_error": self.ratio_std_error,
            "gamma_sq": self.gamma_sq,
            "verdict": self.verdict,
            "seed": self.seed,
            "horizon": self.horizon,
            "diverged": self.diverged,
            "ensemble_spec": dict(self.ensemble_spec),
        }


def empirical_gain(system, ensemble, horizon, count, gamma_sq, seed,
                   policy_u=None, threads=1) -> GainReport:
    """Seeded Monte Carlo falsification of a claimed squared gain.

    Simulates ``count`` disturbance realisations from the zero initial
    state and compares the ensemble energy ratio against gamma_sq.  The
    empirical ratio is a lower bound on the true squared gain, so
    "consistent" corroborates but never proves the claim; "violated" means
    the mean ratio exceeds gamma_sq by more than four standard errors.
    """
    if horizon < 1 or count < 1:
        raise ConfigurationError("horizon and count must be >= 1")
    if isinstance(system, LinearSystem):
        system = system.as_affine()
    x0 = np.zeros(system.n)
    results = simulate_ensemble(system, x0, ensemble, horizon, count, seed,
                                policy_u=policy_u, threads=threads)
    z_energy = np.zeros(count)
    v_energy = np.zeros(count)
    diverged = 0
    ratios = []
    for i, res in enumerate(results):
        if isinstance(res, DivergenceError):
            diverged += 1
            traj = res.trajectory
            z_energy[i] = traj.total_output_energy() if traj is not None else np.inf
            v_energy[i] = traj.total_disturbance_energy() if traj is not None else 0.0
            ratios.append(None)
            continue
        z_energy[i] = res.total_output_energy()
        v_energy[i] = res.total_disturbance_energy()
        ratios.append(energy_ratio(res))
    if np.all(v_energy == 0.0):
        raise ConfigurationError("disturbance ensemble has zero energy everywhere")
    mean_ratio = float(z_energy.sum() / v_energy.sum())
    # ratio-estimator standard error: std(z_i - R v_i) / (mean(v) sqrt(N))
    resid = z_energy - mean_ratio * v_energy
    se = 0.0
    if count >= 2:
        se = float(resid.std(ddof=1) / (v_energy.mean() * math.sqrt(count)))
    finite_ratios = [r for r in ratios if r is not None]
    max_ratio = max(finite_ratios) if finite_ratios else None
    violated = diverged > 0 or mean_ratio > gamma_sq + 4.0 * se
    return GainReport(
        count=count,
        ratios=ratios,
        max_ratio=max_ratio,
        mean_energy_ratio=mean_ratio,
        ratio_std_error=se,
        gamma_sq=float(gamma_sq),
        verdict="violated" if violated else "consistent",
        seed=int(seed),
        horizon=int(horizon),
        diverged=diverged,
        ensemble_spec=ensemble.spec(),
    )


def dissipation_profile(system, V, gamma_sq, ensemble, horizon, count, seed,
                        policy_u=None):
    """Per-step ensemble means of V(x+) - V(x) + |z|^2 - gamma^2 |v|^2.

    For a certified (V, beta, gamma) tuple the supply-rate inequality makes
    every step's mean nonpositive up to Monte Carlo error.  Returns
    (means, standard_errors), each of length ``horizon``.
    """
    if isinstance(system, LinearSystem):
        system = system.as_affine()
    x0 = np.zeros(system.n)
    results = simulate_ensemble(system, x0, ensemble, horizon, count, seed,
                                policy_u=policy_u)
    D = np.empty((count, horizon))
    for i, res in enumerate(results):
        if isinstance(res, DivergenceError):
            raise res
        vals = V.evaluate_batch(res.states)
        D[i] = np.diff(vals) + res.z_sq - gamma_sq * res.v_sq
    means = D.mean(axis=0)
    ses = D.std(axis=0, ddof=1) / math.sqrt(count) if count >= 2 \
        else np.zeros(horizon)
    return means, ses
