"""Transfer-operator recursions for quenched partition functions at large n.

The recursion is

    Q_k(x) = w(x) (2D)^-1 sum_e g_e Q_{k-1}(x - e),   Q_0 = delta_0,

with site factor ``w(x) = exp(-beta V(x))`` (0 on traps when ``beta > 0``)
and step gains ``g_e = exp(h.e)`` when the tilt is folded in, ``g_e = 1``
otherwise.  Step ``k`` only touches the sites with ``|x|_1 <= k``.

Annealed values at large n come from averaging quenched runs over
independent environments (:func:`mc_annealed`); the annealed interaction is
not Markovian.  The exception is a law with linear ``phi_beta`` (or
``beta = 0``), where :func:`cone_dp_t` runs a Markov recursion restricted to
the cone-confinement region of each endpoint.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .environment import Environment, derive_seed, parse_law, phi_table, sample_environment
from .errors import BoxError, NumericalError, ValidationError
from .exactenum import KIND_T, WeightTable, enumerate_Q, enumeration_cap
from .io import csv_text
from .validation import check_beta, check_dims, check_nonneg_int, check_vector

LOG_THRESHOLD = 64


@dataclass(frozen=True, eq=False)
class EndpointSlice:
    """Endpoint weights ``Q_n(x)`` on a set of lattice sites.

    ``points`` is ``(P, D)``; exactly one of ``values`` (linear) and
    ``log_values`` is set.  ``tilted`` records whether ``exp(h.x)`` is
    included.
    """

    n: int
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(default=None, repr=False)
    log_values: np.ndarray = field(default=None, repr=False)
    h: tuple = None
    beta: float = 0.0
    tilted: bool = True
    seed: int = None
    leaked_bound: float = 0.0

    @property
    def dims(self):
        return self.points.shape[1]

    @property
    def is_log(self):
        return self.values is None

    def coords(self):
        return self.points

    def log_array(self):
        if self.values is not None:
            with np.errstate(divide="ignore"):
                return np.log(self.values)
        return self.log_values

    def linear(self):
        return self.values if self.values is not None else np.exp(self.log_values)

    def log_total(self):
        la = self.log_array()
        top = la.max() if la.size else -np.inf
        if not np.isfinite(top):
            return -math.inf
        return float(top + math.log(np.exp(la - top).sum()))

    def total(self):
        if self.values is not None:
            return float(self.values.sum())
        return math.exp(self.log_total())

    def normalized(self):
        """Probability weights (sum 1); all zeros if the slice is empty."""
        la = self.log_array()
        top = la.max() if la.size else -np.inf
        if not np.isfinite(top):
            return np.zeros(la.shape)
        w = np.exp(la - top)
        return w / w.sum()

    def value(self, x):
        hit = np.all(self.points == np.asarray(x), axis=1)
        return float(self.linear()[hit].sum())

    def to_dense(self, radius=None):
        """Dense array over the L-infinity ball of ``radius`` (default ``n``)."""
        radius = self.n if radius is None else radius
        out = np.zeros((2 * radius + 1,) * self.dims)
        vals = self.linear()
        keep = vals != 0
        pts = self.points[keep]
        if len(pts) and np.abs(pts).max() > radius:
            raise BoxError("slice support exceeds the requested radius")
        out[tuple((pts + radius).T)] = vals[keep]
        return out

    def with_tilt(self, h=None):
        """Fold ``exp(h.x)`` into an untilted slice."""
        if self.tilted:
            return self
        hv = np.asarray(self.h if h is None else h, dtype=float)
        la = self.log_array() + self.points @ hv
        return EndpointSlice(self.n, self.points, None, la, tuple(hv), self.beta, True, self.seed,
                             self.leaked_bound)

    def moments(self):
        """Mean and covariance of the endpoint under the normalized slice."""
        p = self.normalized()
        x = self.points.astype(float)
        mean = p @ x
        c = x - mean
        return mean, (c * p[:, None]).T @ c

    def metadata(self):
        return {
            "n": self.n,
            "dims": self.dims,
            "sites": int(len(self.points)),
            "h": list(self.h) if self.h is not None else None,
            "beta": self.beta,
            "tilted": self.tilted,
            "seed": self.seed,
            "log_space": self.is_log,
            "leaked_bound": self.leaked_bound,
        }

    def to_csv(self):
        """Columns ``x1..xD, value`` for the non-zero sites, lexicographic order."""
        vals = self.linear()
        keep = vals > 0
        pts, vals = self.points[keep], vals[keep]
        order = np.lexsort(pts.T[::-1]) if len(pts) else np.zeros(0, dtype=int)
        cols = [f"x{i + 1}" for i in range(self.dims)] + ["value"]
        rows = ([*map(int, p), float(v)] for p, v in zip(pts[order], vals[order]))
        return csv_text(cols, rows)


def _site_factor(env, beta, radius):
    """``exp(-beta V)`` on the L-infinity ball of ``radius`` (0 on traps when beta > 0)."""
    v = env.centered(radius)
    if beta == 0:
        return np.ones(v.shape)
    traps = np.isinf(v)
    return np.where(traps, 0.0, np.exp(-beta * np.where(traps, 0.0, v)))


def _gains(h, dims, fold):
    plus = np.exp(h) if fold else np.ones(dims)
    minus = np.exp(-h) if fold else np.ones(dims)
    return plus / (2 * dims), minus / (2 * dims)


def _axis_slice(ndim, axis, sl):
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def _propagate(q, plus, minus):
    """One step of the walk on a dense array, padded by one layer."""
    p = np.pad(q, 1)
    out = np.zeros_like(p)
    D = q.ndim
    for i in range(D):
        out[_axis_slice(D, i, slice(1, None))] += plus[i] * p[_axis_slice(D, i, slice(None, -1))]
        out[_axis_slice(D, i, slice(None, -1))] += minus[i] * p[_axis_slice(D, i, slice(1, None))]
    return out


@lru_cache(maxsize=8)
def _l1_ball(dims, radius):
    """Sites with ``|x|_1 <= radius`` and, per axis, the index of ``x - e_i`` / ``x + e_i``.

    Sites are ordered by ``|x|_1`` so the first ``ball_size(k)`` rows form the
    ball of radius ``k``.  Missing neighbours point at the sentinel row ``P``.
    """
    ax = np.arange(-radius, radius + 1)
    cube = np.stack(np.meshgrid(*([ax] * dims), indexing="ij"), axis=-1).reshape(-1, dims)
    l1 = np.abs(cube).sum(axis=1)
    order = np.argsort(l1[l1 <= radius], kind="stable")
    pts = cube[l1 <= radius][order]
    side = 2 * radius + 1
    index = np.full(side**dims, len(pts), dtype=np.int64)
    index[np.ravel_multi_index(tuple((pts + radius).T), (side,) * dims)] = np.arange(len(pts))
    src_minus, src_plus = [], []
    for i in range(dims):
        for sign, dest in ((-1, src_minus), (1, src_plus)):
            nb = pts.copy()
            nb[:, i] += sign
            ok = np.abs(nb).sum(axis=1) <= radius
            out = np.full(len(pts), len(pts), dtype=np.int64)
            out[ok] = index[np.ravel_multi_index(tuple((nb[ok] + radius).T), (side,) * dims)]
            dest.append(out)
    sizes = np.searchsorted(np.abs(pts).sum(axis=1), np.arange(radius + 1), side="right")
    pts.setflags(write=False)
    return pts, tuple(src_minus), tuple(src_plus), sizes


def _check_env(env, n):
    if not isinstance(env, Environment):
        raise ValidationError("a quenched DP needs an Environment")
    if env.radius < n:
        raise BoxError(f"n={n} needs box radius >= {n}, have {env.radius}")


def dp_sweep(env, h, beta, n_values, fold_tilt=True, log_space=None, threshold=LOG_THRESHOLD):
    """Run the recursion once and yield an :class:`EndpointSlice` at each requested n.

    Step ``k`` updates the sites with ``|x|_1 <= k`` only.  ``log_space=None``
    switches to logarithms after ``threshold`` steps; ``True``/``False`` force
    one representation throughout.
    """
    beta = check_beta(beta)
    hv = check_vector(h, env.dims)
    wanted = sorted({check_nonneg_int(n, "n") for n in np.atleast_1d(n_values)})
    if not wanted:
        return
    n_max = wanted[-1]
    _check_env(env, n_max)
    D = env.dims
    pts, src_minus, src_plus, sizes = _l1_ball(D, n_max)
    P = len(pts)
    w = _site_factor(env, beta, n_max)[tuple((pts + n_max).T)]
    plus, minus = _gains(hv, D, fold_tilt)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
        lplus, lminus = np.log(plus), np.log(minus)
    use_log = bool(log_space)
    # one extra sentinel row that stays zero (or -inf)
    q = np.zeros(P + 1)
    q[0] = 1.0
    if use_log:
        with np.errstate(divide="ignore"):
            q = np.log(q)
    k = 0
    for target in wanted:
        while k < target:
            k += 1
            if not use_log and log_space is None and k > threshold:
                with np.errstate(divide="ignore"):
                    q = np.log(q)
                use_log = True
            m = sizes[k]
            new = np.full(P + 1, -np.inf) if use_log else np.zeros(P + 1)
            if use_log:
                acc = np.full(m, -np.inf)
                with np.errstate(invalid="ignore"):
                    for i in range(D):
                        acc = np.logaddexp(acc, lplus[i] + q[src_minus[i][:m]])
                        acc = np.logaddexp(acc, lminus[i] + q[src_plus[i][:m]])
                new[:m] = acc + lw[:m]
            else:
                acc = np.zeros(m)
                for i in range(D):
                    acc += plus[i] * q[src_minus[i][:m]]
                    acc += minus[i] * q[src_plus[i][:m]]
                new[:m] = acc * w[:m]
            q = new
        m = sizes[k]
        common = dict(h=tuple(hv), beta=beta, tilted=fold_tilt, seed=env.seed)
        block = np.array(pts[:m])
        if use_log:
            yield EndpointSlice(k, block, None, q[:m].copy(), **common)
        else:
            yield EndpointSlice(k, block, q[:m].copy(), None, **common)


def dp_quenched(env, h, beta, n, fold_tilt=True, log_space=None, threshold=LOG_THRESHOLD, window=None):
    """Endpoint slice of ``Q_n(x)`` in a fixed environment.

    With ``fold_tilt=False`` the slice holds the untilted ``Q_n(x)``; fold it
    afterwards with :meth:`EndpointSlice.with_tilt`.  ``window`` is a list of
    ``(lo, hi)`` bounds per axis; mass pushed outside is dropped and an upper
    bound on its contribution, relative to the returned total, is stored in
    ``leaked_bound``.
    """
    if window is not None:
        return _dp_windowed(env, h, beta, n, window, fold_tilt)
    return next(iter(dp_sweep(env, h, beta, [n], fold_tilt, log_space, threshold)))


def _dp_windowed(env, h, beta, n, window, fold_tilt):
    beta = check_beta(beta)
    hv = check_vector(h, env.dims)
    n = check_nonneg_int(n, "n")
    D = env.dims
    bounds = [(int(lo), int(hi)) for lo, hi in window]
    if len(bounds) != D:
        raise ValidationError("window needs one (lo, hi) pair per axis")
    for lo, hi in bounds:
        if not lo <= 0 <= hi:
            raise ValidationError(f"window {bounds} does not contain the origin")
        if max(-lo, hi) > env.radius:
            raise BoxError(f"window {bounds} leaves the box of radius {env.radius}")
    r = env.radius
    sl = tuple(slice(lo + r, hi + r + 1) for lo, hi in bounds)
    w = _site_factor(env, beta, r)[sl]
    plus, minus = _gains(hv, D, fold_tilt)
    growth = float((plus.sum() + minus.sum()) * w.max()) if w.size else 0.0
    q = np.zeros(w.shape)
    q[tuple(-lo for lo, _ in bounds)] = 1.0
    leaked = 0.0
    for k in range(1, n + 1):
        out = np.zeros_like(q)
        lost = 0.0
        for i in range(D):
            hi = _axis_slice(D, i, slice(1, None))
            lo = _axis_slice(D, i, slice(None, -1))
            out[hi] += plus[i] * q[lo]
            out[lo] += minus[i] * q[hi]
            lost += plus[i] * q[_axis_slice(D, i, slice(-1, None))].sum()
            lost += minus[i] * q[_axis_slice(D, i, slice(0, 1))].sum()
        leaked += lost * growth ** (n - k)
        q = out * w
    total = q.sum()
    bound = leaked / total if total > 0 else (math.inf if leaked > 0 else 0.0)
    axes = [np.arange(lo, hi + 1) for lo, hi in bounds]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, D)
    return EndpointSlice(n, pts, q.reshape(-1), None, tuple(hv), beta, fold_tilt, env.seed, float(bound))


def dp_log_totals(env, h, beta, n):
    """``log Q_k(h)`` for ``k = 0..n`` from a single sweep with the tilt folded in."""
    n = check_nonneg_int(n, "n")
    return np.array([s.log_total() for s in dp_sweep(env, h, beta, range(n + 1))])


def char_sum(slice_, alpha, v):
    """``sum_z Q(z) exp(i alpha.(z - n v))`` over the slice."""
    D = slice_.dims
    a = check_vector(alpha, D, "alpha")
    vv = check_vector(v, D, "v")
    phase = np.exp(1j * ((slice_.points - slice_.n * vv) @ a))
    if not slice_.is_log:
        return complex((slice_.values * phase).sum())
    la = slice_.log_values
    top = la.max() if la.size else -np.inf
    if not np.isfinite(top):
        return 0j
    return complex(math.exp(top) * (np.exp(la - top) * phase).sum())


def char_ratio(slice_, alpha, v):
    """``char_sum(alpha) / char_sum(0)``, computed without overflow."""
    D = slice_.dims
    a = check_vector(alpha, D, "alpha")
    vv = check_vector(v, D, "v")
    p = slice_.normalized()
    if not p.any():
        raise NumericalError("empty slice: total mass is zero")
    phase = np.exp(1j * ((slice_.points - slice_.n * vv) @ a))
    return complex((p * phase).sum())


# ---------------------------------------------------------------------------
# Monte Carlo disorder averages


def _env_log_totals(args):
    law, dims, radius, seed, h, beta, n = args
    env = sample_environment(law, dims, radius, seed)
    return dp_log_totals(env, h, beta, n)


def ensemble_log_totals(law, dims, h, beta, n, n_env, seed, jobs=1):
    """``log Q_k^omega(h)``, ``k = 0..n``, for environments ``derive_seed(seed, i)``.

    Row ``i`` always belongs to environment ``i`` whatever ``jobs`` is.
    """
    law = parse_law(law)
    dims = check_dims(dims)
    hv = check_vector(h, dims)
    tasks = [(law, dims, max(n, 1), derive_seed(seed, i), hv, beta, n) for i in range(n_env)]
    if jobs and jobs > 1 and n_env > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_env_log_totals, tasks))
    else:
        rows = [_env_log_totals(t) for t in tasks]
    return np.array(rows)


@dataclass(frozen=True)
class AnnealedEstimate:
    n: int
    estimate: float
    stderr: float
    n_env: int
    seed: int
    values: tuple = field(repr=False, default=())

    def to_dict(self):
        return {
            "n": self.n,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "n_env": self.n_env,
            "seed": self.seed,
        }


def mc_annealed(law, h, beta, n, n_env, seed, dims=None, jobs=1):
    """Sample mean and standard error of ``Q_n^omega(h)`` over ``n_env`` environments."""
    law = parse_law(law)
    hv = np.atleast_1d(np.asarray(h, dtype=float))
    dims = check_dims(dims if dims is not None else len(hv))
    n_env = check_nonneg_int(n_env, "n_env", minimum=2)
    n = check_nonneg_int(n, "n")
    logs = ensemble_log_totals(law, dims, h, beta, n, n_env, seed, jobs)[:, n]
    vals = np.exp(logs)
    est = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(n_env))
    return AnnealedEstimate(n, est, err, n_env, seed, tuple(float(v) for v in vals))


def annealed_denominators(law, h, beta, N, dims, n_env=None, seed=0, jobs=1):
    """``(value, stderr)`` of ``Q_n(h)``, ``n = 0..N``.

    Exact enumeration when ``N`` is within the enumeration cap, otherwise the
    ensemble mean of quenched sweeps (``n_env`` environments).
    """
    law = parse_law(law)
    if N <= enumeration_cap(dims):
        tab = enumerate_Q(law, h, beta, N, dims=dims)
        vals = np.array([tab.partition_function(n) for n in range(N + 1)])
        return vals, np.zeros(N + 1)
    if n_env is None:
        raise ValidationError(f"N={N} exceeds the enumeration cap; pass n_env for a Monte Carlo estimate")
    ens = np.exp(ensemble_log_totals(law, dims, h, beta, N, n_env, seed, jobs))
    return ens.mean(axis=0), ens.std(axis=0, ddof=1) / math.sqrt(n_env)


@dataclass(frozen=True)
class RatioSeries:
    n: np.ndarray
    W: np.ndarray
    err: np.ndarray
    zero: bool
    seed: int

    def to_dict(self):
        return {"n": self.n, "W": self.W, "err": self.err, "zero": self.zero, "seed": self.seed}


def ratio_series(env, law, h, beta, N, denominators=None, n_env=None, seed=0):
    """``W_n = Q_n^omega(h) / Q_n(h)`` for ``n = 1..N`` with propagated errors.

    ``denominators`` is an optional ``(values, stderr)`` pair indexed by n.
    ``zero`` is set when ``W`` vanishes, e.g. a blocked origin.
    """
    law = parse_law(law)
    if denominators is None:
        denominators = annealed_denominators(law, h, beta, N, env.dims, n_env, seed)
    den, den_err = (np.asarray(a, dtype=float) for a in denominators)
    if len(den) <= N:
        raise ValidationError(f"need denominators for n = 0..{N}")
    den, den_err = den[1 : N + 1], den_err[1 : N + 1]
    if np.any(den <= 0):
        raise NumericalError("annealed partition function is zero; the ratio is undefined")
    num = np.exp(dp_log_totals(env, h, beta, N)[1:])
    W = num / den
    err = W * den_err / den
    return RatioSeries(np.arange(1, N + 1), W, err, bool(np.any(W == 0)), env.seed)


# ---------------------------------------------------------------------------
# cone-confined ensembles by per-endpoint recursion


def _markov_factor(source, beta, dims, cone, radius, anchor):
    if isinstance(source, Environment):
        a = np.zeros(dims, dtype=np.int64) if anchor is None else np.asarray(anchor, dtype=np.int64)
        need = int(np.abs(a).max()) + radius
        if need > source.radius:
            raise BoxError(f"anchor {tuple(a)} needs box radius {need}, have {source.radius}")
        r = source.radius
        sl = tuple(slice(c + r - radius, c + r + radius + 1) for c in a)
        return _site_factor(source, beta, r)[sl]
    law = parse_law(source)
    phi = phi_table(law, beta, 4)
    if not np.allclose(phi[1:], phi[1] * np.arange(1, 5), rtol=1e-13, atol=0):
        raise ValidationError("annealed cone recursion needs a linear phi_beta (deterministic law or beta = 0)")
    return np.full((2 * radius + 1,) * dims, math.exp(-phi[1]))


def cone_dp_t(source, cone, h, beta, N, dims=None, anchor=None):
    """Cone-confined table ``t_{x,n}`` for ``n <= N`` without path enumeration.

    For each endpoint ``x`` a walk is run inside ``(0 + Y) cap (x - Y)``,
    killed on returning to its start and on touching ``x`` early.  Valid for
    quenched sources and for laws with linear ``phi_beta``.  Entries are
    tilted (``q_h``) and unshifted, as from ``enumerate_basic``.
    """
    dims = source.dims if isinstance(source, Environment) else check_dims(dims or cone.dims)
    if cone.dims != dims:
        raise ValidationError("cone and source dimensions differ")
    beta = check_beta(beta)
    N = check_nonneg_int(N, "N", minimum=1)
    hv = check_vector(h, dims)
    w = _markov_factor(source, beta, dims, cone, N, anchor)
    plus, minus = _gains(hv, dims, True)
    ax = np.arange(-N, N + 1)
    grid = np.stack(np.meshgrid(*([ax] * dims), indexing="ij"), axis=-1)
    fwd = cone.contains(grid)
    l1 = np.abs(grid).sum(axis=-1)
    targets = grid[fwd & (l1 >= 1) & (l1 <= N)]
    unit = cone.axis / np.linalg.norm(cone.axis)
    data = {0: (np.zeros((1, dims), dtype=np.int64), np.ones(1))}
    found = {n: ([], []) for n in range(1, N + 1)}
    for x in targets:
        L = int(np.abs(x).sum())
        r = min(N, int(math.ceil(float(x @ unit) / cone.delta)) + 1)
        core = tuple(slice(N - r, N + r + 1) for _ in range(dims))
        region = fwd[core] & cone.contains(x - grid[core])
        region[(r,) * dims] = True
        wx = w[core] * region
        q = np.zeros(region.shape)
        q[(r,) * dims] = 1.0
        tgt = tuple(int(c) + r for c in x)
        start = (r,) * dims
        for n in range(1, N + 1):
            s = _propagate(q, plus, minus)[(slice(1, -1),) * dims] * wx
            s[start] = 0.0
            if n >= L and (n - L) % 2 == 0:
                val = s[tgt]
                if val > 0:
                    found[n][0].append(x)
                    found[n][1].append(val)
            s[tgt] = 0.0
            q = s
    for n, (pts, vals) in found.items():
        if pts:
            order = np.lexsort(np.asarray(pts).T[::-1])
            data[n] = (np.asarray(pts, dtype=np.int64)[order], np.asarray(vals)[order])
        else:
            data[n] = (np.zeros((0, dims), dtype=np.int64), np.zeros(0))
    flavor = "quenched" if isinstance(source, Environment) else "annealed"
    src = source if isinstance(source, Environment) else parse_law(source)
    a = None if anchor is None else tuple(int(c) for c in anchor)
    return WeightTable(KIND_T, flavor, src, dims, tuple(hv), beta, data, cone, 0.0, a, note="cone-dp")


__all__ = [
    "EndpointSlice",
    "AnnealedEstimate",
    "RatioSeries",
    "dp_sweep",
    "dp_quenched",
    "dp_log_totals",
    "char_sum",
    "char_ratio",
    "ensemble_log_totals",
    "mc_annealed",
    "annealed_denominators",
    "ratio_series",
    "cone_dp_t",
]
