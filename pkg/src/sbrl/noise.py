"""i.i.d. driving noise and the expectation engine.

The driving sequence is a d-dimensional i.i.d. process whose coordinates are
mutually independent, each drawn from one of four elementary distributions
(uniform, gaussian, point mass, rademacher).  Expectations E[phi(omega)] are
evaluated either by seeded Monte Carlo or, for integrands declared as
polynomials in omega of total degree <= 4, exactly from raw moments.

All randomness is reproducible: sampling is a pure function of
(model, seed, count) and sub-streams are derived with a splitmix64 hash so
that ensemble results do not depend on evaluation order or worker count.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EvaluationError

_MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """One splitmix64 mixing step (unsigned 64-bit)."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(seed: int, index: int) -> int:
    """Sub-seed for stream ``index``, independent of evaluation order."""
    return splitmix64((int(seed) & _MASK64) ^ splitmix64(int(index) & _MASK64))


def hash_point(x) -> int:
    """Stable 64-bit hash of a float vector, for per-point sub-seeding."""
    buf = np.ascontiguousarray(np.asarray(x, dtype=float)).tobytes()
    return int.from_bytes(hashlib.blake2b(buf, digest_size=8).digest(), "big")


class _Distribution:
    """One scalar noise coordinate: sampling, mirroring and raw moments."""

    def moment(self, k: int) -> float:
        raise NotImplementedError

    def draw(self, rng, count):
        raise NotImplementedError

    def mirror(self, values):
        """Antithetic reflection about the distribution's symmetry point."""
        raise NotImplementedError

    def spec(self):
        raise NotImplementedError


class Uniform(_Distribution):
    def __init__(self, lo, hi):
        if not lo < hi:
            raise ConfigurationError(f"uniform requires lo < hi, got [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)

    def moment(self, k):
        if k == 0:
            return 1.0
        return (self.hi ** (k + 1) - self.lo ** (k + 1)) / ((k + 1) * (self.hi - self.lo))

    def draw(self, rng, count):
        return rng.uniform(self.lo, self.hi, count)

    def mirror(self, values):
        return (self.lo + self.hi) - values

    def spec(self):
        return {"uniform": [self.lo, self.hi]}


class Gaussian(_Distribution):
    def __init__(self, mean, variance):
        if variance < 0:
            raise ConfigurationError(f"gaussian requires variance >= 0, got {variance}")
        self.mean = float(mean)
        self.variance = float(variance)

    def moment(self, k):
        mu, s2 = self.mean, self.variance
        if k == 0:
            return 1.0
        if k == 1:
            return mu
        if k == 2:
            return mu * mu + s2
        if k == 3:
            return mu ** 3 + 3 * mu * s2
        if k == 4:
            return mu ** 4 + 6 * mu * mu * s2 + 3 * s2 * s2
        raise ConfigurationError(f"gaussian raw moment of order {k} not supported")

    def draw(self, rng, count):
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(count)

    def mirror(self, values):
        return 2.0 * self.mean - values

    def spec(self):
        return {"gaussian": [self.mean, self.variance]}


class PointMass(_Distribution):
    def __init__(self, value):
        self.value = float(value)

    def moment(self, k):
        return self.value ** k

    def draw(self, rng, count):
        return np.full(count, self.value)

    def mirror(self, values):
        return values

    def spec(self):
        return {"point_mass": self.value}


class Rademacher(_Distribution):
    def moment(self, k):
        return 1.0 if k % 2 == 0 else 0.0

    def draw(self, rng, count):
        return rng.integers(0, 2, count) * 2.0 - 1.0

    def mirror(self, values):
        return -values

    def spec(self):
        return "rademacher"


def _parse_component(entry):
    if entry == "rademacher":
        return Rademacher()
    if isinstance(entry, dict) and len(entry) == 1:
        kind, params = next(iter(entry.items()))
        if kind == "uniform":
            return Uniform(*params)
        if kind == "gaussian":
            return Gaussian(*params)
        if kind == "point_mass":
            return PointMass(params)
        if kind == "rademacher":
            return Rademacher()
    raise ConfigurationError(f"unknown noise component spec: {entry!r}")


@dataclass(frozen=True)
class NoiseModel:
    """Distribution of one step's noise vector omega_k (independent coords)."""

    components: tuple

    def __post_init__(self):
        if len(self.components) == 0:
            raise ConfigurationError("noise model needs at least one component")
        for c in self.components:
            if not isinstance(c, _Distribution):
                raise ConfigurationError(f"not a distribution: {c!r}")

    @property
    def dim(self) -> int:
        return len(self.components)

    def moment(self, coord: int, k: int) -> float:
        return self.components[coord].moment(k)

    def mean_vector(self):
        return np.array([c.moment(1) for c in self.components])

    def sample(self, seed: int, count: int, antithetic: bool = False):
        """Draw ``count`` i.i.d. vectors as a (count, dim) matrix.

        Deterministic in (model, seed, count, antithetic).  Antithetic mode
        draws ceil(count/2) vectors and mirrors each about its coordinate
        symmetry point.
        """
        if count < 1:
            raise ConfigurationError(f"count must be >= 1, got {count}")
        rng = np.random.default_rng(int(seed) & _MASK64)
        if not antithetic:
            cols = [c.draw(rng, count) for c in self.components]
            return np.column_stack(cols)
        half = (count + 1) // 2
        cols = [c.draw(rng, half) for c in self.components]
        base = np.column_stack(cols)
        return np.concatenate([base, self.mirror(base)], axis=0)[:count]

    def mirror(self, draws):
        """Reflect draws about each coordinate's symmetry point."""
        return np.column_stack(
            [c.mirror(draws[:, j]) for j, c in enumerate(self.components)]
        )

    def spec(self):
        return {"dim": self.dim, "components": [c.spec() for c in self.components]}

    @staticmethod
    def from_spec(block):
        comps = tuple(_parse_component(e) for e in block["components"])
        if "dim" in block and int(block["dim"]) != len(comps):
            raise ConfigurationError(
                f"noise.dim = {block['dim']} but {len(comps)} components given"
            )
        return NoiseModel(comps)


def gaussian_noise(mean=0.0, variance=1.0, dim=1) -> NoiseModel:
    return NoiseModel(tuple(Gaussian(mean, variance) for _ in range(dim)))


def point_mass_noise(value=0.0, dim=1) -> NoiseModel:
    return NoiseModel(tuple(PointMass(value) for _ in range(dim)))


@dataclass(frozen=True)
class ExpectationScheme:
    """How E[.] is evaluated: seeded Monte Carlo or exact moments."""

    mode: str = "monte-carlo"
    samples: int = 10_000
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if self.mode not in ("monte-carlo", "closed-form"):
            raise ConfigurationError(f"unknown expectation mode {self.mode!r}")
        if self.mode == "monte-carlo" and self.samples < 1:
            raise ConfigurationError("monte-carlo needs samples >= 1")

    def with_seed(self, seed: int) -> "ExpectationScheme":
        return ExpectationScheme(self.mode, self.samples, int(seed) & _MASK64, self.antithetic)

    def spec(self):
        return {
            "mode": self.mode,
            "samples": self.samples,
            "seed": self.seed,
            "antithetic": self.antithetic,
        }


CLOSED_FORM = ExpectationScheme(mode="closed-form")


@dataclass(frozen=True)
class Estimate:
    """A scalar estimate with its standard error (0 for exact paths).

    ``lower_bound_only`` marks values that bound the true quantity from
    below (sampled suprema); such values can falsify but never certify an
    upper-bound claim.
    """

    value: float
    std_error: float = 0.0
    lower_bound_only: bool = False

    def __float__(self):
        return self.value


MAX_POLY_DEGREE = 4


class OmegaPolynomial:
    """Polynomial in the noise coordinates, as {exponent tuple: coefficient}.

    Doubles as a vectorised Monte Carlo integrand, so the same object can be
    pushed through both expectation routes.
    """

    def __init__(self, dim: int, terms):
        self.dim = int(dim)
        clean = {}
        for exps, coef in dict(terms).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.dim or any(e < 0 for e in exps):
                raise ConfigurationError(f"bad exponent tuple {exps}")
            clean[exps] = clean.get(exps, 0.0) + float(coef)
        self.terms = clean

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __call__(self, draws):
        draws = np.asarray(draws, dtype=float)
        out = np.zeros(draws.shape[0])
        for exps, coef in self.terms.items():
            term = np.full(draws.shape[0], coef)
            for j, e in enumerate(exps):
                if e:
                    term = term * draws[:, j] ** e
            out += term
        return out

    def expectation(self, noise: NoiseModel) -> float:
        if self.degree > MAX_POLY_DEGREE:
            raise ConfigurationError(
                f"closed-form mode supports degree <= {MAX_POLY_DEGREE}, "
                f"got {self.degree}"
            )
        total = 0.0
        for exps, coef in self.terms.items():
            prod = coef
            for j, e in enumerate(exps):
                if e:
                    prod *= noise.moment(j, e)
            total += prod
        return total


def expect(noise: NoiseModel, scheme: ExpectationScheme, integrand) -> Estimate:
    """Evaluate E[integrand(omega)] under the given scheme.

    Monte Carlo integrands receive the full (N, dim) draw matrix and must
    return an (N,) vector.  Closed-form mode requires an OmegaPolynomial.
    """
    if scheme.mode == "closed-form":
        if not isinstance(integrand, OmegaPolynomial):
            raise ConfigurationError(
                "closed-form expectation needs a declared polynomial integrand"
            )
        return Estimate(integrand.expectation(noise), 0.0)

    if scheme.antithetic:
        # antithetic estimator: average each (draw, mirrored draw) pair first,
        # which keeps odd integrands at exactly zero and reduces variance
        half = (scheme.samples + 1) // 2
        base = noise.sample(scheme.seed, half)
        vals = 0.5 * (_eval_integrand(integrand, base)
                      + _eval_integrand(integrand, noise.mirror(base)))
    else:
        vals = _eval_integrand(integrand,
                               noise.sample(scheme.seed, scheme.samples))
    n = vals.shape[0]
    se = 0.0 if n < 2 else float(vals.std(ddof=1) / math.sqrt(n))
    return Estimate(float(vals.mean()), se)


def _eval_integrand(integrand, draws):
    vals = np.asarray(integrand(draws), dtype=float)
    if vals.shape != (draws.shape[0],):
        raise ConfigurationError(
            f"integrand returned shape {vals.shape}, expected ({draws.shape[0]},)"
        )
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise EvaluationError(
            f"integrand non-finite at sample {i}", point=draws[i].copy()
        )
    return vals


def _compositions(total, parts):
    """All tuples of ``parts`` nonnegative ints summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def _multinomial(k, exps):
    num = math.factorial(k)
    for e in exps:
        num //= math.factorial(e)
    return num


def expected_affine_power(c0: float, coeffs, power: int, noise: NoiseModel) -> float:
    """Exact E[(c0 + sum_j coeffs[j] * omega_j)^power] for power <= 4."""
    if power > MAX_POLY_DEGREE:
        raise ConfigurationError(f"power {power} exceeds {MAX_POLY_DEGREE}")
    coeffs = np.asarray(coeffs, dtype=float)
    d = noise.dim
    if coeffs.shape != (d,):
        raise ConfigurationError(f"need {d} coefficients, got {coeffs.shape}")
    total = 0.0
    for exps in _compositions(power, d + 1):
        e0, erest = exps[0], exps[1:]
        term = _multinomial(power, exps) * c0 ** e0
        for j, e in enumerate(erest):
            if e:
                term *= coeffs[j] ** e * noise.moment(j, e)
        total += term
    return total


def expected_quad_form(P, c0, cs, noise: NoiseModel) -> float:
    """Exact E[y^T P y] for y = c0 + sum_j cs[j] * omega_j."""
    P = np.asarray(P, dtype=float)
    c0 = np.asarray(c0, dtype=float)
    d = noise.dim
    if len(cs) != d:
        raise ConfigurationError(f"need {d} direction vectors, got {len(cs)}")
    m1 = [noise.moment(j, 1) for j in range(d)]
    m2 = [noise.moment(j, 2) for j in range(d)]
    total = float(c0 @ P @ c0)
    for j in range(d):
        cj = np.asarray(cs[j], dtype=float)
        total += m1[j] * float(c0 @ P @ cj + cj @ P @ c0)
        total += m2[j] * float(cj @ P @ cj)
        for i in range(j):
            ci = np.asarray(cs[i], dtype=float)
            total += m1[i] * m1[j] * float(ci @ P @ cj + cj @ P @ ci)
    return total


def expected_gram(P, G0, Gs, noise: NoiseModel):
    """Exact E[g^T P g] for g = G0 + sum_j Gs[j] * omega_j (matrix valued)."""
    P = np.asarray(P, dtype=float)
    G0 = np.asarray(G0, dtype=float)
    d = noise.dim
    if len(Gs) != d:
        raise ConfigurationError(f"need {d} matrix parts, got {len(Gs)}")
    m1 = [noise.moment(j, 1) for j in range(d)]
    m2 = [noise.moment(j, 2) for j in range(d)]
    total = G0.T @ P @ G0
    for j in range(d):
        Gj = np.asarray(Gs[j], dtype=float)
        total = total + m1[j] * (G0.T @ P @ Gj + Gj.T @ P @ G0)
        total = total + m2[j] * (Gj.T @ P @ Gj)
        for i in range(j):
            Gi = np.asarray(Gs[i], dtype=float)
            total = total + m1[i] * m1[j] * (Gi.T @ P @ Gj + Gj.T @ P @ Gi)
    return total
