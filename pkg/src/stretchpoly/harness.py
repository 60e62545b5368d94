"""Quenched experiments: the s_n series, half-space conditioning, mixingale
profiles, quenched CLT ratios and LLN tails.

Conditioning is always on a half-space algebra ``A_m``, generated by the
potentials at ``{x : x_1 <= floor(m |v|)}``.  Exact conditional expectations
come from :mod:`stretchpoly.disorder`.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .disorder import (
    Algebra,
    PathFamily,
    conditional_value,
    enumerate_conditional,
    enumerate_product,
    expect_product,
    f_family,
    f_family_upto,
    product,
    sample_conditional,
    t_family,
    union,
)
from .environment import Environment, derive_seed, parse_law, sample_environment
from .errors import CapacityError, ValidationError
from .exactenum import enumerate_basic, enumeration_cap
from .polymer import ConeSpec
from .transfer import char_ratio, dp_sweep
from .validation import check_beta, check_dims, check_nonneg_int, check_vector

MAX_FREE_SITES = 24


# ---------------------------------------------------------------------------
# half-space algebras and dependence regions


class HalfSpaceAlgebra(Algebra):
    """Potentials on ``{x : x_1 <= floor(m * speed)}``.

    ``speed`` is ``|v|``; the continuum level ``m |v|`` is rounded down to the
    lattice.  Levels are nested: ``A_m`` is contained in ``A_{m+1}``.

    Parameters
    ----------
    m : int or float
        Level.  ``math.inf`` gives the full algebra, ``-math.inf`` the trivial one.
    speed : float
        Norm of the drift, ``|v| >= 0``.
    """

    def __init__(self, m, speed):
        if speed < 0 or not math.isfinite(speed):
            raise ValidationError(f"speed must be finite and >= 0, got {speed}")
        self.m = m
        self.speed = float(speed)
        if math.isinf(m):
            self.threshold = m
        else:
            self.threshold = math.floor(m * self.speed)
        super().__init__(lambda p: p[:, 0] <= self.threshold, f"H(m={m}, x1<={self.threshold})")

    @classmethod
    def full(cls, speed=1.0):
        return cls(math.inf, speed)

    @classmethod
    def trivial(cls, speed=1.0):
        return cls(-math.inf, speed)


def dependence_region(u, w, cone):
    """Lattice points of ``(u + Y) & (w - Y)``, sorted lexicographically.

    Every cone-confined path from ``u`` to ``w`` stays in this set, so its
    weight depends only on the potentials there.
    """
    u = np.asarray(u, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    if not (cone.contains((w - u)[None, :])[0]):
        return np.zeros((0, len(u)), dtype=np.int64)
    axis = cone.axis
    R = int(math.ceil(float((w - u) @ axis) / cone.delta + 1e-9))
    D = len(u)
    grid = np.indices((2 * R + 1,) * D).reshape(D, -1).T - R + u
    keep = cone.contains(grid - u) & cone.contains(w - grid)
    pts = grid[keep]
    return pts[np.lexsort(pts.T[::-1])]


# ---------------------------------------------------------------------------
# results


@dataclass
class SeriesResult:
    """A named series with uncertainties and the inputs that reproduce it."""

    experiment: str
    n: np.ndarray
    values: np.ndarray
    err: np.ndarray = None
    seeds: tuple = ()
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "experiment": self.experiment,
            "n": self.n,
            "values": self.values,
            "err": self.err,
            "seeds": list(self.seeds),
            "params": self.params,
        }
        out.update(self.extra)
        return out


# ---------------------------------------------------------------------------
# s_n series


def _annealed_lambda(law, cone, h, beta, M, model):
    if model is not None:
        return float(model.lambda_)
    from .renewal import RenewalModel

    f = enumerate_basic(law, cone, h, beta, 0.0, M, dims=cone.dims)[1]
    return RenewalModel().fit(f).lambda_


def s_series(env, law, cone, h, beta, model=None, N=None, M=None):
    """Partial sums ``s_n = 1 + sum_{l<=n} Z_l`` of the quenched expansion.

    ``Z_l = sum_x t^w_{x,l} (F^{theta_x w} - Fbar)`` with ``F`` the
    ``lambda``-shifted irreducible mass up to length ``M`` and ``Fbar`` its
    annealed value from the same enumeration.  ``t`` and ``f`` come from
    exhaustive enumeration; there is no DP fallback, so lengths beyond the
    enumeration cap raise :class:`CapacityError`.

    Returns a :class:`SeriesResult` whose ``extra["companion"]`` holds
    ``kappa0 * t^w_n``, the quantity ``s_n`` should track.
    """
    if not isinstance(env, Environment):
        raise ValidationError("s_series needs an Environment")
    law = parse_law(law)
    D = env.dims
    cap = enumeration_cap(D)
    N = cap if N is None else check_nonneg_int(N, "N", minimum=1)
    M = cap if M is None else check_nonneg_int(M, "M", minimum=1)
    if max(N, M) > cap:
        raise CapacityError(
            f"s_series enumerates exactly; N={N}, M={M} exceed the D={D} cap {cap}",
            parameter="N" if N > cap else "M",
            limit=cap,
        )
    hv = check_vector(h, D)
    beta = check_beta(beta)
    lam = _annealed_lambda(law, cone, hv, beta, cap, model)
    kappa0 = float(model.kappa0_) if model is not None else math.nan
    t, f = enumerate_basic(env, cone, hv, beta, lam, max(N, M))
    fbar = enumerate_basic(law, cone, hv, beta, lam, M, dims=D)[1]
    Fbar = float(sum(fbar.total(m) for m in range(1, M + 1)))
    cache = {}
    Z = np.zeros(N + 1)
    for ell in range(N + 1):
        pts, w = t.weights(ell)
        acc = 0.0
        for x, tx in zip(pts, w):
            if tx == 0:
                continue
            key = tuple(int(c) for c in x)
            if key not in cache:
                fa = f.anchored(key)
                cache[key] = float(sum(fa.total(m) for m in range(1, M + 1)))
            acc += tx * (cache[key] - Fbar)
        Z[ell] = acc
    s = 1.0 + np.cumsum(Z)
    tn = np.array([t.total(n) for n in range(N + 1)])
    return SeriesResult(
        "s_series",
        np.arange(N + 1),
        s,
        None,
        (env.seed,),
        {"law": law.spec(), "h": hv, "beta": beta, "delta": cone.delta, "lambda": lam, "M": M, "N": N},
        {"Z": Z, "t_n": tn, "companion": kappa0 * tn, "Fbar": Fbar},
    )


# ---------------------------------------------------------------------------
# conditional expectations of irreducible weights


@dataclass(frozen=True)
class CondExpectation:
    value: float
    stderr: float
    mode: str
    free_sites: int
    frozen_sites: int

    def to_dict(self):
        return dict(self.__dict__)


def cond_expect_f(x, target, algebra, env, law, beta, h, cone, lam=0.0, mode="exact",
                  n_samples=2000, seed=0, cap=MAX_FREE_SITES):
    """``E(f_{y,m} seen from x | A)`` evaluated at ``env``.

    Parameters
    ----------
    x : array_like
        Anchor.
    target : tuple
        ``(y, m)``: displacement and length of the irreducible piece.
    algebra : Algebra
        Conditioning algebra, typically a :class:`HalfSpaceAlgebra`.
    mode : {"exact", "factorized", "mc"}
        ``exact`` sums over all configurations of the free sites of the
        dependence region ``D(x, x+y)`` (at most ``cap`` of them, otherwise
        :class:`CapacityError`); ``factorized`` uses the site-by-site closed
        form and has no cap; ``mc`` resamples the free sites.
    """
    law = parse_law(law)
    x = np.asarray(x, dtype=np.int64)
    y, m = target
    y = np.asarray(y, dtype=np.int64)
    fam = f_family(x, x + y, int(m), cone, h, lam)
    region = dependence_region(x, x + y, cone)
    region = region[np.any(region != x, axis=1)]
    frozen = algebra.contains(region)
    n_free, n_frozen = int((~frozen).sum()), int(frozen.sum())
    if fam.size == 0:
        return CondExpectation(0.0, 0.0, mode, n_free, n_frozen)
    if mode == "exact":
        if n_free > cap:
            raise CapacityError(
                f"{n_free} free sites in the dependence region exceed the cap {cap}; use mode='mc'",
                parameter="free_sites",
                limit=cap,
            )
        val = enumerate_conditional(fam, law, beta, algebra, env, cap=cap)
        return CondExpectation(val, 0.0, mode, n_free, n_frozen)
    if mode == "factorized":
        return CondExpectation(conditional_value(fam, law, beta, algebra, env), 0.0, mode, n_free, n_frozen)
    if mode == "mc":
        rng = np.random.default_rng(seed)
        val, err = sample_conditional(fam, law, beta, algebra, env, n_samples, rng)
        return CondExpectation(val, err, mode, n_free, n_frozen)
    raise ValidationError(f"unknown mode {mode!r}; use 'exact', 'factorized' or 'mc'")


def tower_residual(x, target, algebra, law, beta, h, cone, lam=0.0, cap=MAX_FREE_SITES):
    """``|E[E(f | A)] - fbar|`` with the outer average over every frozen configuration."""
    x = np.asarray(x, dtype=np.int64)
    y, m = target
    fam = f_family(x, x + np.asarray(y, dtype=np.int64), int(m), cone, h, lam)
    if fam.size == 0:
        return 0.0
    outer = enumerate_product([fam], law, beta, algebra, cap=cap)
    return abs(outer - expect_product([fam], law, beta))


# ---------------------------------------------------------------------------
# mixingale profiles


@dataclass(frozen=True, eq=False)
class Statistic:
    """``Z = Y - c T`` as path families; all weights are polynomial in the site factors."""

    Y: PathFamily
    T: PathFamily
    c: float
    name: str
    inner: np.ndarray = field(repr=False, default=None)

    def family(self):
        """``Z`` as a single family with signed coefficients."""
        neg = PathFamily(-self.c * self.T.coef, self.T.sites, self.T.L)
        return union([self.Y, neg])

    @property
    def inner_sites(self):
        """Sites whose potentials move the centred factor (``E(Z | A) = 0`` if none is in ``A``)."""
        return self.Y.sites if self.inner is None else self.inner


def sinai_statistic(ell, M, law, beta, h, cone, lam):
    """``Z_l = sum_x t_{x,l} (F^{theta_x}_{<=M} - Fbar_{<=M})`` from the origin."""
    D = cone.dims
    origin = np.zeros(D, dtype=np.int64)
    T = t_family(origin, None, ell, cone, h, lam)
    ends = np.unique(_endpoints(ell, cone, origin), axis=0) if ell > 0 else origin[None, :]
    pieces, inner = [], []
    for x in ends:
        tx = t_family(origin, x, ell, cone, h, lam) if ell > 0 else PathFamily.empty(D)
        fx = f_family_upto(x, M, cone, h, lam)
        pieces.append(product(tx, fx))
        inner.append(fx.sites)
    Y = union(pieces)
    c = expect_product([f_family_upto(origin, M, cone, h, lam)], law, beta)
    return Statistic(Y, T, c, f"sinai(l={ell},M={M})", np.unique(np.concatenate(inner), axis=0))


def f_statistic(x, target, law, beta, h, cone, lam):
    """``Z = f_{y,m}(theta_x) - fbar_{y,m}``."""
    x = np.asarray(x, dtype=np.int64)
    y, m = target
    fam = f_family(x, x + np.asarray(y, dtype=np.int64), int(m), cone, h, lam)
    T = PathFamily.empty(len(x))
    c = expect_product([fam], law, beta)
    return Statistic(fam, T, c, f"f(y={tuple(y)},m={m})", fam.sites)


def _endpoints(ell, cone, origin):
    from .exactenum import confined_paths

    return confined_paths(cone.dims, ell, cone).endpoints + origin


@dataclass
class MixingaleProfile:
    ell: int
    k: np.ndarray
    backward: np.ndarray  # E[(E(Z_l | A_{l-k}))^2]
    forward: np.ndarray  # E[(Z_l - E(Z_l | A_{l+k}))^2]
    variance: float
    exponent_backward: float
    exponent_forward: float
    mode: str
    params: dict = field(default_factory=dict)

    def non_increasing(self, tol=0.0):
        b = np.all(np.diff(self.backward) <= tol)
        f = np.all(np.diff(self.forward) <= tol)
        return bool(b and f)

    def to_dict(self):
        return dict(self.__dict__)


def _decay_exponent(k, vals):
    """Slope of ``log value`` against ``log(1 + k)`` over the positive entries (NaN if < 2)."""
    k = np.asarray(k, dtype=float)
    vals = np.asarray(vals, dtype=float)
    ok = vals > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log1p(k[ok]), np.log(vals[ok]), 1)[0])


def _second_moment(stat, law, beta, algebra):
    """``E[(E(Z | A))^2]`` exactly; exactly 0 when ``A`` misses the centred factor."""
    if not algebra.contains(stat.inner_sites).any():
        return 0.0
    Z = stat.family()
    return max(0.0, expect_product([Z, Z], law, beta, algebra))


def mixingale_profile(ell, ks, law, beta, h, cone, speed, lam=0.0, M=None, statistic=None,
                      mode="exact", n_env=30, seed=0):
    """Conditional second moments of ``Z_l`` against half-space distance ``k``.

    ``backward[k] = E[(E(Z_l | A_{l-k}))^2]`` and
    ``forward[k] = E[(Z_l - E(Z_l | A_{l+k}))^2]``.  ``mode="exact"`` takes the
    disorder expectation in closed form; ``mode="ensemble"`` averages the
    exact conditional values over ``n_env`` sampled environments.
    The fitted exponents are slopes in ``log(1 + k)``.
    """
    law = parse_law(law)
    beta = check_beta(beta)
    ks = np.asarray(sorted({check_nonneg_int(k, "k") for k in np.atleast_1d(ks)}), dtype=int)
    D = cone.dims
    hv = check_vector(h, D)
    M = min(4, enumeration_cap(D)) if M is None else M
    stat = sinai_statistic(ell, M, law, beta, hv, cone, lam) if statistic is None else statistic
    if beta == 0 or law.is_linear:
        # no disorder: Z vanishes identically
        zeros = np.zeros(len(ks))
        return MixingaleProfile(ell, ks, zeros, zeros.copy(), 0.0, math.nan, math.nan, mode,
                                {"law": law.spec(), "beta": beta, "speed": speed, "M": M})
    full = Algebra.full()
    if mode == "exact":
        var = _second_moment(stat, law, beta, full)
        back = np.array([_second_moment(stat, law, beta, HalfSpaceAlgebra(ell - k, speed)) for k in ks])
        fwd = []
        Zsites = stat.family().sites
        for k in ks:
            alg = HalfSpaceAlgebra(ell + k, speed)
            if alg.contains(Zsites).all():
                fwd.append(0.0)
            else:
                fwd.append(max(0.0, var - _second_moment(stat, law, beta, alg)))
        fwd = np.array(fwd)
    elif mode == "ensemble":
        Z = stat.family()
        R = int(np.abs(Z.sites).max()) if len(Z.sites) else 1
        envs = [sample_environment(law, D, R, derive_seed(seed, i)) for i in range(n_env)]
        zval = np.array([conditional_value(Z, law, beta, full, e) for e in envs])
        var = float(np.mean(zval**2))
        back, fwd = [], []
        for k in ks:
            a = HalfSpaceAlgebra(ell - k, speed)
            if a.contains(stat.inner_sites).any():
                back.append(float(np.mean([conditional_value(Z, law, beta, a, e) ** 2 for e in envs])))
            else:
                back.append(0.0)
            b = HalfSpaceAlgebra(ell + k, speed)
            if b.contains(Z.sites).all():
                fwd.append(0.0)
            else:
                cv = np.array([conditional_value(Z, law, beta, b, e) for e in envs])
                fwd.append(float(np.mean((zval - cv) ** 2)))
        back, fwd = np.array(back), np.array(fwd)
    else:
        raise ValidationError(f"unknown mode {mode!r}; use 'exact' or 'ensemble'")
    return MixingaleProfile(
        ell, ks, back, fwd, float(var), _decay_exponent(ks, back), _decay_exponent(ks, fwd), mode,
        {"law": law.spec(), "beta": beta, "speed": speed, "M": M, "statistic": stat.name,
         "n_env": n_env if mode == "ensemble" else None, "seed": seed},
    )


# ---------------------------------------------------------------------------
# ensemble statistics from quenched DP slices


def _env_slice_stats(args):
    law, dims, seed, h, beta, ns, alphas, v, eps = args
    env = sample_environment(law, dims, max(ns), seed)
    out = []
    for sl in dp_sweep(env, h, beta, ns):
        rec = {"n": sl.n, "log_total": sl.log_total()}
        if not np.isfinite(rec["log_total"]):
            rec.update(ratios=None, mean=None, second=None, tails=None)
            out.append(rec)
            continue
        p = sl.normalized()
        x = sl.points.astype(float)
        rec["mean"] = p @ x
        rec["second"] = (x * p[:, None]).T @ x
        if alphas is not None:
            root = math.sqrt(sl.n)
            rec["ratios"] = np.array([char_ratio(sl, a / root, v) for a in alphas])
        if eps is not None:
            dev = np.linalg.norm(x / sl.n - v, axis=1)
            rec["tails"] = np.array([float(p[dev > e].sum()) for e in eps])
        out.append(rec)
    return out


def ensemble_slice_stats(law, dims, h, beta, ns, n_env, seed, alphas=None, v=None, eps=None, jobs=1):
    """Per-environment summaries of DP slices at lengths ``ns``.

    Environment ``i`` uses seed ``derive_seed(seed, i)``; rows come back in
    environment order whatever ``jobs`` is.  Each record holds the log
    partition function, the endpoint mean and second moment, characteristic
    ratios at ``alpha / sqrt(n)`` and LLN tail masses when requested.
    """
    law = parse_law(law)
    dims = check_dims(dims)
    hv = check_vector(h, dims)
    ns = sorted({check_nonneg_int(n, "n", minimum=1) for n in np.atleast_1d(ns)})
    vv = None if v is None else check_vector(v, dims, "v")
    al = None if alphas is None else [check_vector(a, dims, "alpha") for a in alphas]
    tasks = [(law, dims, derive_seed(seed, i), hv, beta, ns, al, vv, eps) for i in range(n_env)]
    if jobs and jobs > 1 and n_env > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_env_slice_stats, tasks))
    return [_env_slice_stats(t) for t in tasks]


def pooled_moments(records, index):
    """Endpoint mean and covariance of the ensemble-averaged measure at ``records[*][index]``."""
    recs = [r[index] for r in records if r[index]["mean"] is not None]
    logs = np.array([r["log_total"] for r in recs])
    w = np.exp(logs - logs.max())
    w /= w.sum()
    mean = sum(wi * r["mean"] for wi, r in zip(w, recs))
    second = sum(wi * r["second"] for wi, r in zip(w, recs))
    return mean, second - np.outer(mean, mean)


@dataclass
class CLTResult:
    n: np.ndarray
    alphas: np.ndarray
    ratios: np.ndarray = field(repr=False)  # (n_env, len(n), len(alphas)) complex
    gaussian: np.ndarray = field(repr=False)  # (len(alphas),)
    median_deviation: np.ndarray = None  # (len(n),)
    iqr_deviation: np.ndarray = None
    median_ratio: np.ndarray = None  # (len(n), len(alphas)) complex
    v: np.ndarray = None
    Sigma: np.ndarray = None
    n_env: int = 0
    seed: int = 0
    skipped: int = 0

    def to_dict(self):
        return {
            "n": self.n,
            "alphas": self.alphas,
            "gaussian": self.gaussian,
            "median_deviation": self.median_deviation,
            "iqr_deviation": self.iqr_deviation,
            "median_ratio_re": self.median_ratio.real,
            "median_ratio_im": self.median_ratio.imag,
            "v": self.v,
            "Sigma": self.Sigma,
            "n_env": self.n_env,
            "seed": self.seed,
            "skipped": self.skipped,
        }


def _iqr(a, axis=0):
    q1, q3 = np.percentile(a, [25, 75], axis=axis)
    return q3 - q1


def quenched_clt(law, dims, h, beta, ns, alphas, n_env, seed, v=None, Sigma=None, model=None,
                 jobs=1, records=None):
    """Quenched characteristic ratios ``S_n(alpha/sqrt n) / S_n(0)`` over an ensemble.

    Centring ``v`` and covariance ``Sigma`` come from, in order: explicit
    arguments, a fitted :class:`~stretchpoly.renewal.RenewalModel`, or the
    pooled (annealed) endpoint moments at the largest ``n``.  The per-env
    deviation is ``max_alpha |ratio - exp(-alpha.Sigma.alpha / 2)|``;
    median and IQR are taken over environments with non-zero mass.
    """
    dims = check_dims(dims)
    ns = sorted({check_nonneg_int(n, "n", minimum=1) for n in np.atleast_1d(ns)})
    al = np.array([check_vector(a, dims, "alpha") for a in alphas])
    if v is None and model is not None:
        v, Sigma = model.v_, model.Sigma_
    if v is None or Sigma is None:
        if records is None:
            records = ensemble_slice_stats(law, dims, h, beta, ns, n_env, seed, jobs=jobs)
        mean, cov = pooled_moments(records, len(ns) - 1)
        v = mean / ns[-1] if v is None else v
        Sigma = cov / ns[-1] if Sigma is None else Sigma
    v = np.asarray(v, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    recs = ensemble_slice_stats(law, dims, h, beta, ns, n_env, seed, alphas=al, v=v, jobs=jobs)
    gauss = np.exp(-0.5 * np.einsum("ai,ij,aj->a", al, Sigma, al))
    alive = [r for r in recs if all(x["ratios"] is not None for x in r)]
    ratios = np.array([[x["ratios"] for x in r] for r in alive]).reshape(len(alive), len(ns), len(al))
    dev = np.abs(ratios - gauss[None, None, :]).max(axis=2)
    med_ratio = np.median(ratios.real, axis=0) + 1j * np.median(ratios.imag, axis=0)
    return CLTResult(np.array(ns), al, ratios, gauss, np.median(dev, axis=0), _iqr(dev), med_ratio,
                     v, Sigma, n_env, seed, n_env - len(alive))


@dataclass
class LLNResult:
    n: np.ndarray
    eps: np.ndarray
    tails: np.ndarray = field(repr=False)  # (n_env, len(n), len(eps))
    mean_tail: np.ndarray = None
    median_tail: np.ndarray = None
    v: np.ndarray = None
    n_env: int = 0
    seed: int = 0

    def to_dict(self):
        return {
            "n": self.n,
            "eps": self.eps,
            "mean_tail": self.mean_tail,
            "median_tail": self.median_tail,
            "v": self.v,
            "n_env": self.n_env,
            "seed": self.seed,
        }


def empirical_lln(law, dims, h, beta, ns, eps, n_env, seed, v, jobs=1):
    """Quenched tail masses ``Q^w_n(|X/n - v| > eps)`` per environment.

    ``eps`` is a fixed list of radii (no vanishing sequence is constructed).
    Environments with zero mass are dropped.
    """
    dims = check_dims(dims)
    ns = sorted({check_nonneg_int(n, "n", minimum=1) for n in np.atleast_1d(ns)})
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(eps <= 0):
        raise ValidationError("eps must be positive")
    vv = check_vector(v, dims, "v")
    recs = ensemble_slice_stats(law, dims, h, beta, ns, n_env, seed, v=vv, eps=eps, jobs=jobs)
    alive = [r for r in recs if all(x["tails"] is not None for x in r)]
    tails = np.array([[x["tails"] for x in r] for r in alive]).reshape(len(alive), len(ns), len(eps))
    return LLNResult(np.array(ns), eps, tails, tails.mean(axis=0), np.median(tails, axis=0), vv, n_env, seed)


def tilted_walk_tail(h, n, eps, v, dims):
    """Exact ``P(|X/n - v| > eps)`` for the tilted simple walk, by convolution (beta = 0 oracle)."""
    from .exactenum import unit_steps

    hv = check_vector(h, dims)
    vv = check_vector(v, dims, "v")
    steps = unit_steps(dims)
    p = np.exp(steps @ hv)
    p /= p.sum()
    side = 2 * n + 1
    dist = np.zeros((side,) * dims)
    dist[(n,) * dims] = 1.0
    for _ in range(n):
        new = np.zeros_like(dist)
        for e, pe in zip(steps, p):
            new += pe * np.roll(dist, tuple(int(c) for c in e), axis=tuple(range(dims)))
        dist = new
    grid = np.indices(dist.shape).reshape(dims, -1).T - n
    dev = np.linalg.norm(grid / n - vv, axis=1)
    flat = dist.reshape(-1)
    return np.array([float(flat[dev > e].sum()) for e in np.atleast_1d(eps)])
