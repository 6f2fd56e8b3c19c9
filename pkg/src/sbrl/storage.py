"""Candidate storage functions and their structural checks.

Three candidate forms are supported: quadratic x'Px with P symmetric
positive definite, separable sums of positive-weighted even powers, and
arbitrary user scalar fields.  Convexity and h-convexity are checked by
sampled quarter/mid/three-quarter-point inequalities so that non-smooth
candidates are admissible; the quadratic growth bound V(x) <= c2 |x|^2 is
probed by ratio sampling with an exact eigenvalue path for quadratics.

The constructive storage function sums expected squared output norms along
zero-disturbance trajectories, truncated at a configurable horizon with a
tail-mass diagnostic.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .certificates import Certificate, MarginSweep
from .dynamics import DisturbancePolicy, simulate
from .errors import ConfigurationError, EvaluationError
from .noise import derive_seed, hash_point

NEAR_ZERO_RADIUS = 1e-9
DEFAULT_CONSTRUCTION_HORIZON = 400


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned sampling box with a declared sampling plan.

    ``plan`` is ("grid", points_per_axis) or ("random", count, seed).
    The underlying inequalities quantify over all of R^n; every certificate
    in this toolkit is scoped to a box like this one.
    """

    lo: tuple
    hi: tuple
    plan: tuple = ("grid", 11)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi):
            raise ConfigurationError("lo and hi must have the same length")
        for a, b in zip(lo, hi):
            if not a < b:
                raise ConfigurationError(f"need lo < hi per axis, got [{a}, {b}]")
        if self.plan[0] == "grid":
            if int(self.plan[1]) < 1:
                raise ConfigurationError("grid needs >= 1 point per axis")
            if int(self.plan[1]) ** len(lo) > 2_000_000:
                raise ConfigurationError("grid plan exceeds 2e6 samples")
        elif self.plan[0] == "random":
            if int(self.plan[1]) < 1:
                raise ConfigurationError("random plan needs count >= 1")
        else:
            raise ConfigurationError(f"unknown sampling plan {self.plan!r}")

    @property
    def dim(self):
        return len(self.lo)

    def points(self):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if self.plan[0] == "grid":
            ppa = int(self.plan[1])
            axes = [np.linspace(lo[j], hi[j], ppa) for j in range(self.dim)]
            return np.array(list(itertools.product(*axes)))
        count, seed = int(self.plan[1]), int(self.plan[2])
        rng = np.random.default_rng(seed)
        return rng.uniform(lo, hi, size=(count, self.dim))

    def random_points(self, count, seed):
        rng = np.random.default_rng(int(seed))
        return rng.uniform(np.asarray(self.lo), np.asarray(self.hi),
                           size=(count, self.dim))

    def on_boundary(self, x, frac=1e-9):
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        span = hi - lo
        return bool(np.any((x - lo) <= frac * span) or np.any((hi - x) <= frac * span))

    def label(self):
        box = " x ".join(f"[{a:g},{b:g}]" for a, b in zip(self.lo, self.hi))
        if self.plan[0] == "grid":
            return f"{box} grid({self.plan[1]}/axis)"
        return f"{box} random(n={self.plan[1]}, seed={self.plan[2]})"

    def spec(self):
        out = {"lo": list(self.lo), "hi": list(self.hi)}
        if self.plan[0] == "grid":
            out["grid"] = int(self.plan[1])
        else:
            out["random"] = {"count": int(self.plan[1]), "seed": int(self.plan[2])}
        return out

    @staticmethod
    def from_spec(block):
        if "grid" in block:
            plan = ("grid", int(block["grid"]))
        elif "random" in block:
            plan = ("random", int(block["random"]["count"]), int(block["random"].get("seed", 0)))
        else:
            plan = ("grid", 11)
        return DomainBox(tuple(block["lo"]), tuple(block["hi"]), plan)


class StorageFunction:
    """Base candidate V with convexity / V(0)=0 metadata."""

    form = "custom"

    def __init__(self, dim, claims_convex=False, claims_V0_zero=True):
        self.dim = int(dim)
        self.claims_convex = bool(claims_convex)
        self.claims_V0_zero = bool(claims_V0_zero)

    def evaluate(self, x) -> float:
        raise NotImplementedError

    def evaluate_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.evaluate(x) for x in X])

    def evaluate_with_error(self, x):
        return self.evaluate(x), 0.0

    def describe(self):
        return self.form


class QuadraticStorage(StorageFunction):
    """V(x) = x' P x, P symmetric positive definite."""

    form = "quadratic"

    def __init__(self, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ConfigurationError("P must be square")
        if np.max(np.abs(P - P.T)) > 1e-10 * (1.0 + np.max(np.abs(P))):
            raise ConfigurationError("P must be symmetric")
        eigs = np.linalg.eigvalsh(P)
        if eigs[0] <= 0:
            raise ConfigurationError(f"P must be positive definite, min eig {eigs[0]:g}")
        self.P = 0.5 * (P + P.T)
        self.lambda_max = float(eigs[-1])
        super().__init__(P.shape[0], claims_convex=True, claims_V0_zero=True)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def evaluate_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.einsum("ni,ij,nj->n", X, self.P, X)

    def describe(self):
        return f"quadratic(P {self.P.shape[0]}x{self.P.shape[0]})"


class SeparableStorage(StorageFunction):
    """V(x) = sum_i p_i * x_i^{d_i}, p_i > 0 and d_i even integers >= 2."""

    form = "separable"

    def __init__(self, p, d):
        p = tuple(float(v) for v in p)
        d = tuple(int(v) for v in d)
        if len(p) != len(d):
            raise ConfigurationError("p and d must have the same length")
        if any(v <= 0 for v in p):
            raise ConfigurationError("all weights p_i must be positive")
        if any(e < 2 or e % 2 for e in d):
            raise ConfigurationError("all powers d_i must be even integers >= 2")
        self.p = p
        self.d = d
        super().__init__(len(p), claims_convex=True, claims_V0_zero=True)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return float(sum(pi * x[i] ** di for i, (pi, di) in enumerate(zip(self.p, self.d))))

    def evaluate_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for i, (pi, di) in enumerate(zip(self.p, self.d)):
            out += pi * X[:, i] ** di
        return out

    def describe(self):
        return f"separable(p={list(self.p)}, d={list(self.d)})"


class CustomStorage(StorageFunction):
    """User-supplied scalar field, optionally with a vectorised evaluator."""

    form = "custom"

    def __init__(self, fn, dim, batch_fn=None, claims_convex=False,
                 claims_V0_zero=True, label="custom"):
        super().__init__(dim, claims_convex, claims_V0_zero)
        self._fn = fn
        self._batch_fn = batch_fn
        self.label = label
        if claims_V0_zero:
            v0 = float(fn(np.zeros(dim)))
            if abs(v0) > 1e-12:
                raise ConfigurationError(f"V(0) = {v0:g}, expected 0")

    def evaluate(self, x):
        val = float(self._fn(np.asarray(x, dtype=float)))
        if not np.isfinite(val):
            raise EvaluationError("storage candidate returned a non-finite value",
                                  point=np.asarray(x, dtype=float))
        return val

    def evaluate_batch(self, X):
        if self._batch_fn is not None:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            return np.asarray(self._batch_fn(X), dtype=float)
        return super().evaluate_batch(X)

    def describe(self):
        return self.label


@dataclass
class StorageProbe:
    value: float
    std_error: float
    tail_mass: float
    tail_ok: bool


class EstimatedStorage(StorageFunction):
    """Monte Carlo estimator of the constructive storage function.

    V(x) is the truncated sum over k = 0..K of E |m(x_k)|^2 along
    zero-disturbance trajectories started at x.  Each evaluation derives
    its sub-seed from (seed, hash(x)), so concurrent use is deterministic
    and order-independent.  A non-decaying tail (final-quarter mass above
    10% of the total) flags possible internal instability.
    """

    form = "estimated"

    def __init__(self, system, horizon, ensemble, seed):
        if horizon < 1 or ensemble < 1:
            raise ConfigurationError("horizon and ensemble must be >= 1")
        super().__init__(system.n, claims_convex=False, claims_V0_zero=True)
        self.system = system
        self.horizon = int(horizon)
        self.ensemble = int(ensemble)
        self.seed = int(seed)

    def probe(self, x) -> StorageProbe:
        x = np.asarray(x, dtype=float)
        sub = derive_seed(self.seed, hash_point(x))
        K = self.horizon
        zero_v = DisturbancePolicy.zero(self.system.n_v)
        totals = np.empty(self.ensemble)
        profile = np.zeros(K + 1)
        for i in range(self.ensemble):
            traj = simulate(self.system, x, zero_v, K, derive_seed(sub, i))
            m_sq = np.array(
                [float(np.sum(np.atleast_1d(self.system.m(s)) ** 2))
                 for s in traj.states]
            )
            totals[i] = m_sq.sum()
            profile += m_sq
        profile /= self.ensemble
        value = float(totals.mean())
        se = 0.0 if self.ensemble < 2 else float(totals.std(ddof=1) / np.sqrt(self.ensemble))
        total = profile.sum()
        tail = profile[(3 * (K + 1)) // 4:].sum()
        tail_mass = 0.0 if total == 0.0 else float(tail / total)
        return StorageProbe(value, se, tail_mass, tail_mass <= 0.10)

    def evaluate(self, x):
        return self.probe(x).value

    def evaluate_with_error(self, x):
        p = self.probe(x)
        return p.value, p.std_error

    def describe(self):
        return (f"estimated(K={self.horizon}, N={self.ensemble}, "
                f"seed={self.seed}, system={self.system.name or 'anon'})")


def construct_storage(system, horizon=DEFAULT_CONSTRUCTION_HORIZON,
                      ensemble=32, seed=0) -> EstimatedStorage:
    """Estimator-backed storage candidate for an internally stable system."""
    return EstimatedStorage(system, horizon, ensemble, seed)


_ALPHAS = (0.25, 0.5, 0.75)


def _midpoint_sweep(eval_fn, box, pairs, seed, inequality, provenance, slack):
    """Shared quarter/mid/three-quarter-point convexity sweep.

    ``eval_fn(x) -> (value, std_error)``; margin is
    f(a x + (1-a) y) - a f(x) - (1-a) f(y) which must stay <= 0.
    """
    if pairs < 1:
        raise ConfigurationError("pairs must be >= 1")
    xs = box.random_points(pairs, seed)
    ys = box.random_points(pairs, derive_seed(seed, 1))
    prov = dict(provenance)
    prov["noise_slack"] = slack
    sweep = MarginSweep(inequality, box.label(), prov)
    for x, y in zip(xs, ys):
        fx, sx = eval_fn(x)
        fy, sy = eval_fn(y)
        for a in _ALPHAS:
            mid = a * x + (1.0 - a) * y
            fm, sm = eval_fn(mid)
            rhs = a * fx + (1.0 - a) * fy
            se = sm + a * sx + (1.0 - a) * sy
            sweep.add(
                fm - rhs,
                std_error=se,
                scale=max(abs(fm), abs(rhs)),
                point=mid,
                info={"x": x, "y": y, "alpha": a, "lhs": fm, "rhs": rhs},
                extra_slack=3.0 * se if slack == "auto" else float(slack),
            )
    return sweep.finalize()


def check_convex(V: StorageFunction, box: DomainBox, pairs: int, seed: int,
                 noise_slack=0.0) -> Certificate:
    """Sampled midpoint convexity check for a storage candidate.

    ``noise_slack`` widens the accept band for estimator-backed candidates;
    "auto" uses three propagated standard errors per sample.
    """
    prov = {"check": "convexity", "pairs": pairs, "seed": seed,
            "alphas": list(_ALPHAS), "storage": V.describe()}
    return _midpoint_sweep(V.evaluate_with_error, box, pairs, seed,
                           "V(ax+(1-a)y) <= a V(x) + (1-a) V(y)", prov, noise_slack)


def check_h_convex(map_fn, box: DomainBox, pairs: int, seed: int) -> Certificate:
    """Sampled h-convexity of a vector field, h(y) = |y|^2.

    Certifies midpoint convexity of x -> |map_fn(x)|^2.  For the structural
    assumption on outputs, pass m(.) and, per sampled noise value w,
    x -> m(f(x, w)).
    """

    def eval_sq(x):
        y = np.atleast_1d(np.asarray(map_fn(np.asarray(x, dtype=float)), dtype=float))
        if not np.all(np.isfinite(y)):
            raise EvaluationError("map returned non-finite value", point=x)
        return float(y @ y), 0.0

    prov = {"check": "h-convexity", "pairs": pairs, "seed": seed,
            "alphas": list(_ALPHAS)}
    return _midpoint_sweep(eval_sq, box, pairs, seed,
                           "|map(ax+(1-a)y)|^2 <= a |map(x)|^2 + (1-a) |map(y)|^2",
                           prov, 0.0)


@dataclass
class QuadBoundReport:
    """Smallest sampled constant with V(x) <= c2 |x|^2 over the box."""

    c2: float
    witness: np.ndarray | None
    boundary_attained: bool
    exact: bool

    def to_dict(self):
        return {
            "c2": self.c2,
            "witness": None if self.witness is None else list(self.witness),
            "boundary_attained": self.boundary_attained,
            "exact": self.exact,
        }


def quad_bound(V: StorageFunction, box: DomainBox) -> QuadBoundReport:
    """Probe the quadratic growth constant c2 = sup V(x)/|x|^2.

    Quadratic candidates take the exact eigenvalue path.  For sampled
    candidates the report flags when the maximising sample sits on the box
    boundary, i.e. the ratio may still be growing outside the box.
    """
    if isinstance(V, QuadraticStorage):
        return QuadBoundReport(V.lambda_max, None, False, True)
    pts = box.points()
    norms_sq = np.einsum("ij,ij->i", pts, pts)
    keep = norms_sq >= NEAR_ZERO_RADIUS ** 2
    pts = pts[keep]
    norms_sq = norms_sq[keep]
    if pts.shape[0] == 0:
        raise ConfigurationError("no samples outside the near-zero exclusion ball")
    ratios = V.evaluate_batch(pts) / norms_sq
    i = int(np.argmax(ratios))
    witness = pts[i]
    return QuadBoundReport(
        c2=float(max(ratios[i], 0.0)),
        witness=witness.copy(),
        boundary_attained=box.on_boundary(witness),
        exact=False,
    )
