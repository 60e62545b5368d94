"""Exhaustive enumeration of short paths: partition functions and basic-ensemble tables.

Path geometry (vertex arrays, local-time histograms, cone-confinement and
irreducibility) depends only on ``(dims, n, cone)`` and is computed once
and cached.  Weights for a particular environment or law are then a
vectorised gather over that geometry.  Paths are grown one step at a time
for every prefix simultaneously; cone-confined ensembles prune any prefix
that leaves the forward cone.
"""

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .environment import Environment, PotentialLaw, parse_law, phi_table
from .errors import BoxError, CapacityError, ValidationError
from .io import csv_text
from .polymer import ConeSpec, break_point_mask, confined_mask
from .validation import check_beta, check_dims, check_nonneg_int, check_vector

ENUMERATION_CAPS = {2: 10, 3: 7, 4: 6, 5: 5}

KIND_Q = "partition"
KIND_T = "full_t"
KIND_F = "irreducible_f"

_CHUNK = 1 << 16


def enumeration_cap(dims):
    return ENUMERATION_CAPS[check_dims(dims)]


def _check_cap(dims, n_max, cap=None):
    cap = enumeration_cap(dims) if cap is None else cap
    if n_max > cap:
        raise CapacityError(
            f"n_max={n_max} exceeds the enumeration cap {cap} for dims={dims}",
            parameter="n_max",
            limit=cap,
        )


def unit_steps(dims):
    """The 2D unit vectors in the order +e1, -e1, +e2, -e2, ..."""
    out = np.zeros((2 * dims, dims), dtype=np.int16)
    for i in range(dims):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out


@dataclass(frozen=True, eq=False)
class PathGeometry:
    """All paths of one length in one ensemble, anchored at the origin."""

    n: int
    verts: np.ndarray  # (P, n+1, D) int16

    @property
    def count(self):
        return self.verts.shape[0]

    @property
    def dims(self):
        return self.verts.shape[2]

    @property
    def endpoints(self):
        return self.verts[:, -1, :].astype(np.int64)

    def local_time_histogram(self):
        """``H[p, l]`` = number of sites visited exactly ``l`` times at steps ``1..n``."""
        return _histogram(self.verts, self.n)

    def sites(self):
        """Visited sites at steps ``1..n`` as ``(P, n, D)`` int64."""
        return self.verts[:, 1:, :].astype(np.int64)


def _histogram(verts, n):
    P = verts.shape[0]
    hist = np.zeros((P, n + 1), dtype=np.int32)
    if n == 0 or P == 0:
        return hist
    span = 2 * n + 1
    codes = np.zeros((P, n), dtype=np.int64)
    for d in range(verts.shape[2]):
        codes = codes * span + (verts[:, 1:, d].astype(np.int64) + n)
    s = np.sort(codes, axis=1)
    idx = np.broadcast_to(np.arange(n), (P, n))
    starts = np.ones((P, n), dtype=bool)
    starts[:, 1:] = s[:, 1:] != s[:, :-1]
    start_idx = np.maximum.accumulate(np.where(starts, idx, 0), axis=1)
    ends = np.ones((P, n), dtype=bool)
    ends[:, :-1] = starts[:, 1:]
    lengths = (idx - start_idx + 1)[ends]
    rows = np.broadcast_to(np.arange(P)[:, None], (P, n))[ends]
    flat = np.bincount(rows * (n + 1) + lengths, minlength=P * (n + 1))
    return flat.reshape(P, n + 1).astype(np.int32)


def _grow(verts, steps, cone):
    """Extend every prefix by every unit step, keeping forward-cone prefixes."""
    P, m, D = verts.shape
    new_last = verts[:, -1, None, :] + steps[None, :, :]
    grown = np.concatenate(
        [np.repeat(verts, len(steps), axis=0), new_last.reshape(-1, 1, D)], axis=1
    )
    if cone is not None:
        last = grown[:, -1, :]
        keep = cone.contains(last)
        if cone.simple_ends:
            keep &= np.any(last != 0, axis=1)
        grown = grown[keep]
    return grown


@lru_cache(maxsize=32)
def _levels(dims, n_max, cone):
    steps = unit_steps(dims)
    verts = np.zeros((1, 1, dims), dtype=np.int16)
    out = [verts]
    for _ in range(n_max):
        verts = _grow(verts, steps, cone)
        out.append(verts)
    return tuple(out)


def all_paths(dims, n):
    """Every path of length ``n`` from the origin, ``(2D)^n`` of them."""
    _check_cap(dims, n)
    return PathGeometry(n, _levels(dims, n, None)[n])


@lru_cache(maxsize=64)
def confined_paths(dims, n, cone):
    """Cone-confined paths of length ``n`` from the origin."""
    _check_cap(dims, n)
    if n == 0:
        return PathGeometry(0, np.zeros((1, 1, dims), dtype=np.int16))
    pref = _levels(dims, n, cone)[n]
    keep = np.zeros(pref.shape[0], dtype=bool)
    for a in range(0, pref.shape[0], _CHUNK):
        keep[a : a + _CHUNK] = confined_mask(pref[a : a + _CHUNK], cone)
    return PathGeometry(n, np.ascontiguousarray(pref[keep]))


@lru_cache(maxsize=64)
def irreducible_paths(dims, n, cone):
    """Irreducible cone-confined paths of length ``n >= 1``."""
    conf = confined_paths(dims, n, cone)
    keep = np.zeros(conf.count, dtype=bool)
    chunk = max(1, _CHUNK // max(1, (n + 1) ** 2 // 4))
    for a in range(0, conf.count, chunk):
        keep[a : a + chunk] = ~break_point_mask(conf.verts[a : a + chunk], cone).any(axis=1)
    return PathGeometry(n, np.ascontiguousarray(conf.verts[keep]))


# ---------------------------------------------------------------------------
# weights


def _source_dims(source, dims):
    if isinstance(source, Environment):
        if dims is not None and dims != source.dims:
            raise ValidationError("dims disagrees with the environment")
        return source.dims
    if dims is None:
        raise ValidationError("dims is required with an annealed (law) source")
    return check_dims(dims)


def path_log_weights(geom, source, h, beta, anchor=None):
    """Log of ``q_h`` for every path in ``geom`` (``-inf`` for trapped paths).

    ``source`` is an Environment (quenched; the paths are translated to
    start at ``anchor``) or a PotentialLaw (annealed).
    """
    n = geom.n
    D = geom.dims
    tilt = geom.endpoints @ h - n * math.log(2 * D)
    if n == 0:
        return tilt.astype(float)
    if isinstance(source, Environment):
        a = np.zeros(D, dtype=np.int64) if anchor is None else np.asarray(anchor, dtype=np.int64)
        need = int(np.abs(a).max() + n) if a.size else n
        if need > source.radius:
            raise BoxError(
                f"anchor {tuple(a)} with length {n} needs box radius {need}, have {source.radius}"
            )
        out = np.empty(geom.count)
        for s in range(0, geom.count, _CHUNK):
            v = source.gather(geom.sites()[s : s + _CHUNK] + a)
            traps = np.isinf(v)
            energy = beta * np.where(traps, 0.0, v).sum(axis=1)
            block = tilt[s : s + _CHUNK] - energy
            if beta > 0:
                block = np.where(traps.any(axis=1), -np.inf, block)
            out[s : s + _CHUNK] = block
        return out
    phi = phi_table(source, beta, n)
    return tilt - geom.local_time_histogram() @ phi


def _aggregate(points, weights):
    """Sum weights over equal endpoints; rows sorted lexicographically."""
    if len(points) == 0:
        D = points.shape[1] if points.ndim == 2 else 0
        return np.zeros((0, D), dtype=np.int64), np.zeros(0)
    uniq, inv = np.unique(points, axis=0, return_inverse=True)
    return uniq.astype(np.int64), np.bincount(inv.reshape(-1), weights=weights, minlength=len(uniq))


def _table_data(geoms, source, h, beta, anchor=None):
    data = {}
    for g in geoms:
        w = np.exp(path_log_weights(g, source, h, beta, anchor))
        pts = g.endpoints
        keep = w > 0
        data[g.n] = _aggregate(pts[keep], w[keep])
    return data


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Weights indexed by endpoint ``x`` and length ``n``.

    Raw weights are stored; ``lambda_shift`` multiplies entries of length
    ``n`` by ``exp(-lambda_shift * n)`` when they are read.  Partition
    tables (``kind == 'partition'``) hold the untilted ``Q_n(x)``; basic
    tables hold the tilted ``q_h`` sums.
    """

    kind: str
    flavor: str
    source: object
    dims: int
    h: tuple
    beta: float
    data: dict = field(repr=False)
    cone: ConeSpec = None
    lambda_shift: float = 0.0
    anchor: tuple = None
    note: str = ""

    @property
    def n_max(self):
        return max(self.data) if self.data else -1

    def lengths(self):
        return sorted(self.data)

    def weights(self, n):
        """``(points, weights)`` at length ``n`` with the lambda shift applied."""
        if n not in self.data:
            return np.zeros((0, self.dims), dtype=np.int64), np.zeros(0)
        pts, w = self.data[n]
        return pts, w * math.exp(-self.lambda_shift * n)

    def get(self, x, n):
        pts, w = self.weights(n)
        hit = np.all(pts == np.asarray(x), axis=1)
        return float(w[hit].sum())

    def total(self, n):
        return float(self.weights(n)[1].sum())

    def totals(self):
        return np.array([self.total(n) for n in range(self.n_max + 1)])

    def tilted_total(self, n, z):
        """``sum_x exp(z.x) w_{x,n}`` for a real or complex vector ``z``."""
        pts, w = self.weights(n)
        return complex((w * np.exp(pts @ np.asarray(z))).sum())

    def partition_function(self, n, h=None):
        """``Q_n(h) = sum_x exp(h.x) Q_n(x)`` for partition tables."""
        if self.kind != KIND_Q:
            raise ValidationError("partition_function applies to partition tables")
        hv = np.asarray(self.h if h is None else check_vector(h, self.dims))
        pts, w = self.weights(n)
        return float((w * np.exp(pts @ hv)).sum())

    def entries(self):
        out = {}
        for n in self.lengths():
            pts, w = self.weights(n)
            for p, v in zip(pts, w):
                out[(tuple(int(c) for c in p), n)] = float(v)
        return out

    def shifted(self, lam):
        return replace(self, lambda_shift=float(lam))

    def params(self):
        return (
            self.kind,
            self.flavor,
            self.dims,
            self.h,
            self.beta,
            self.cone,
            self.lambda_shift,
        )

    def same_source(self, other):
        if self.flavor != other.flavor:
            return False
        if self.flavor == "annealed":
            return self.source == other.source
        return self.source is other.source or self.source == other.source

    def anchored(self, x):
        """The same ensemble started at ``x`` (shifted environment for quenched tables)."""
        x = tuple(int(c) for c in x)
        if self.flavor == "annealed" or not any(x):
            return self
        geoms = _geometries(self.kind, self.dims, self.n_max, self.cone)
        data = _table_data(geoms, self.source, np.asarray(self.h), self.beta, anchor=x)
        return replace(self, data=data, anchor=x)

    def to_dense(self, n, radius=None):
        radius = n if radius is None else radius
        out = np.zeros((2 * radius + 1,) * self.dims)
        pts, w = self.weights(n)
        if len(pts):
            if np.abs(pts).max() > radius:
                raise BoxError("table support exceeds the requested radius")
            np.add.at(out, tuple((pts + radius).T), w)
        return out

    def header(self):
        src = self.source.spec() if isinstance(self.source, PotentialLaw) else (
            f"env(seed={self.source.seed},radius={self.source.radius},law={self.source.law.spec()})"
        )
        items = [
            f"kind={self.kind}",
            f"flavor={self.flavor}",
            f"source={src}",
            f"dims={self.dims}",
            "h=" + ";".join(repr(c) for c in self.h),
            f"beta={self.beta!r}",
            f"lambda_shift={self.lambda_shift!r}",
        ]
        if self.cone is not None:
            items.append(f"delta={self.cone.delta!r}")
            items.append(f"simple_ends={self.cone.simple_ends}")
        return items

    def to_csv(self):
        """Columns ``n, x1..xD, weight`` (lambda shift applied); metadata as comments."""
        cols = ["n"] + [f"x{i + 1}" for i in range(self.dims)] + ["weight"]
        rows = []
        for n in self.lengths():
            pts, w = self.weights(n)
            rows.extend([n, *map(int, p), float(v)] for p, v in zip(pts, w))
        return csv_text(cols, rows, [" ".join(self.header())])


def _geometries(kind, dims, n_max, cone):
    if kind == KIND_Q:
        return [PathGeometry(n, _levels(dims, n, None)[n]) for n in range(n_max + 1)]
    if kind == KIND_T:
        return [confined_paths(dims, n, cone) for n in range(n_max + 1)]
    return [irreducible_paths(dims, n, cone) for n in range(1, n_max + 1)]


def _flavor(source):
    return "quenched" if isinstance(source, Environment) else "annealed"


def enumerate_Q(source, h, beta, n_max, dims=None):
    """Exact partition functions ``Q_n(x)`` for ``n <= n_max`` by full enumeration.

    ``source`` is an :class:`Environment` (quenched) or a law / law spec
    (annealed, requires ``dims``).  ``table.partition_function(n)`` gives
    ``Q_n(h)``.
    """
    if not isinstance(source, Environment):
        source = parse_law(source)
    dims = _source_dims(source, dims)
    beta = check_beta(beta)
    n_max = check_nonneg_int(n_max, "n_max")
    _check_cap(dims, n_max)
    hv = check_vector(h, dims)
    geoms = _geometries(KIND_Q, dims, n_max, None)
    data = _table_data(geoms, source, np.zeros(dims), beta)
    return WeightTable(KIND_Q, _flavor(source), source, dims, tuple(hv), beta, data)


def enumerate_basic(source, cone, h, beta, lam, n_max, dims=None):
    """Cone-confined (t) and irreducible (f) tables up to length ``n_max``.

    Entries are ``exp(-lam n) * sum q_h(gamma)``; ``t`` includes ``t_{0,0} = 1``.
    """
    if not isinstance(source, Environment):
        source = parse_law(source)
    dims = _source_dims(source, dims if dims is not None else cone.dims)
    if cone.dims != dims:
        raise ValidationError("cone and source dimensions differ")
    beta = check_beta(beta)
    n_max = check_nonneg_int(n_max, "n_max", minimum=1)
    _check_cap(dims, n_max)
    hv = check_vector(h, dims)
    flavor = _flavor(source)
    t_data = _table_data(_geometries(KIND_T, dims, n_max, cone), source, hv, beta)
    f_data = _table_data(_geometries(KIND_F, dims, n_max, cone), source, hv, beta)
    t = WeightTable(KIND_T, flavor, source, dims, tuple(hv), beta, t_data, cone, float(lam))
    f = WeightTable(KIND_F, flavor, source, dims, tuple(hv), beta, f_data, cone, float(lam))
    return t, f


def verify_renewal(t, f, n):
    """Largest ``|t_{z,n} - sum_{m<n} sum_x t_{x,m} f^{(x)}_{z-x,n-m}|`` over ``z``.

    Quenched ``f`` is re-evaluated in the environment seen from each anchor ``x``.
    """
    if t.kind != KIND_T or f.kind != KIND_F:
        raise ValidationError("verify_renewal needs a t-table and an f-table")
    if (t.flavor, t.dims, t.h, t.beta, t.cone, t.lambda_shift) != (
        f.flavor,
        f.dims,
        f.h,
        f.beta,
        f.cone,
        f.lambda_shift,
    ) or not t.same_source(f):
        raise ValidationError("t and f tables were built with different parameters")
    if n < 1 or n > min(t.n_max, f.n_max):
        raise ValidationError(f"n={n} outside the tabulated range")
    D = t.dims
    side = 2 * n + 1
    acc = np.zeros((side,) * D)
    anchored = {}
    for m in range(n):
        pts, tw = t.weights(m)
        for x, tx in zip(pts, tw):
            if tx == 0:
                continue
            key = tuple(int(c) for c in x)
            if key not in anchored:
                anchored[key] = f.anchored(key)
            ys, fw = anchored[key].weights(n - m)
            if len(ys):
                np.add.at(acc, tuple((ys + x + n).T), tx * fw)
    target = t.to_dense(n, n)
    return float(np.abs(target - acc).max())


def irreducible_from_confined(t):
    """Recover the irreducible table from a translation-invariant t-table.

    Inverts ``t_n = sum_{m=1}^{n} f_m * t_{n-m}`` length by length.  The
    spatial convolution is diagonal in Fourier space, so on a grid of side
    ``2N+1`` (large enough that nothing wraps) each frequency obeys a scalar
    renewal equation.  Entries outside ``|x|_1 <= n`` with the right parity,
    or outside the cone, are structurally zero and dropped.
    """
    if t.kind != KIND_T or t.flavor != "annealed":
        raise ValidationError("deconvolution needs an annealed t-table")
    N = t.n_max
    D = t.dims
    axes = tuple(range(1, D + 1))
    dense = np.stack([t.to_dense(n, N) for n in range(N + 1)])
    That = np.fft.fftn(np.fft.ifftshift(dense, axes=axes), axes=axes)
    Fhat = np.zeros_like(That)
    for n in range(1, N + 1):
        acc = That[n].copy()
        for m in range(1, n):
            acc -= That[m] * Fhat[n - m]
        Fhat[n] = acc
    dense_f = np.fft.fftshift(np.fft.ifftn(Fhat, axes=axes).real, axes=axes)
    grid = np.stack(np.meshgrid(*([np.arange(-N, N + 1)] * D), indexing="ij"), axis=-1)
    l1 = np.abs(grid).sum(axis=-1)
    inside = t.cone.contains(grid) if t.cone is not None else np.ones(l1.shape, dtype=bool)
    data = {}
    for n in range(1, N + 1):
        mask = inside & (l1 <= n) & (l1 % 2 == n % 2) & (dense_f[n] > 0)
        data[n] = (grid[mask].astype(np.int64), dense_f[n][mask])
    return replace(t, kind=KIND_F, data=data, note="deconvolved")
