"""Random potential fields on a finite box of Z^D and the annealed one-site potential.

Site values are a pure function of ``(seed, coordinates)`` through a
counter-based hash, so any sub-box can be regenerated independently and
in any order.  ``inf`` marks a trap.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .validation import check_beta, check_dims, check_nonneg_int

KINDS = ("deterministic", "bernoulli_trap", "two_point", "exponential")
_SPEC_NAMES = {
    "det": "deterministic",
    "bernoulli": "bernoulli_trap",
    "twopoint": "two_point",
    "exp": "exponential",
}
_SPEC_PREFIX = {v: k for k, v in _SPEC_NAMES.items()}
_PARAM_ORDER = {
    "deterministic": ("v",),
    "bernoulli_trap": ("p",),
    "two_point": ("v0", "v1", "p"),
    "exponential": ("rate",),
}

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class PotentialLaw:
    """Law of the i.i.d. non-negative site potential.

    Use the named constructors rather than building instances by hand.
    ``two_point`` puts mass ``p`` on ``v1`` and ``1 - p`` on ``v0``.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown law kind {self.kind!r}")
        names = _PARAM_ORDER[self.kind]
        if len(self.params) != len(names):
            raise ValidationError(f"{self.kind} expects parameters {names}")
        p = dict(zip(names, self.params))
        if self.kind == "deterministic":
            if not (0 <= p["v"] < math.inf):
                raise ValidationError("deterministic law needs a finite v >= 0")
        elif self.kind == "bernoulli_trap":
            if not (0 <= p["p"] < 1):
                raise ValidationError("bernoulli_trap needs p_inf in [0, 1)")
        elif self.kind == "two_point":
            if not (p["v0"] >= 0 and p["v1"] >= 0 and 0 <= p["p"] <= 1):
                raise ValidationError("two_point needs v0, v1 >= 0 and p in [0, 1]")
            if math.isinf(p["v0"]):
                raise ValidationError("two_point: v0 must be finite (put the trap on v1)")
            if math.isinf(p["v1"]) and p["p"] == 1:
                raise ValidationError("two_point law must give V < inf with positive probability")
        elif self.kind == "exponential":
            if not (0 < p["rate"] < math.inf):
                raise ValidationError("exponential law needs a positive finite rate")

    @classmethod
    def deterministic(cls, v0):
        return cls("deterministic", (float(v0),))

    @classmethod
    def bernoulli_trap(cls, p_inf):
        return cls("bernoulli_trap", (float(p_inf),))

    @classmethod
    def two_point(cls, v0, v1, p):
        return cls("two_point", (float(v0), float(v1), float(p)))

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", (float(rate),))

    def __getitem__(self, name):
        return dict(zip(_PARAM_ORDER[self.kind], self.params))[name]

    @property
    def is_normalized(self):
        """True when 0 lies in the support of V."""
        if self.kind == "deterministic":
            return self.params[0] == 0.0
        if self.kind == "two_point":
            v0, v1, p = self.params
            return (v0 == 0.0 and p < 1) or (v1 == 0.0 and p > 0)
        return True

    @property
    def has_traps(self):
        if self.kind == "bernoulli_trap":
            return self.params[0] > 0
        if self.kind == "two_point":
            return math.isinf(self.params[1]) and self.params[2] > 0
        return False

    @property
    def is_linear(self):
        """True when phi_beta(l) is linear in l for every beta (no disorder)."""
        if self.kind == "deterministic":
            return True
        return self.support() is not None and len(self.support()[0]) == 1

    def support(self):
        """Finite support as ``(values, probs)`` or None for continuous laws.

        Atoms of zero probability are dropped.
        """
        if self.kind == "deterministic":
            vals, probs = [self.params[0]], [1.0]
        elif self.kind == "bernoulli_trap":
            p = self.params[0]
            vals, probs = [0.0, math.inf], [1.0 - p, p]
        elif self.kind == "two_point":
            v0, v1, p = self.params
            vals, probs = [v0, v1], [1.0 - p, p]
        else:
            return None
        keep = [i for i, q in enumerate(probs) if q > 0]
        return np.array([vals[i] for i in keep]), np.array([probs[i] for i in keep])

    def sample_from_uniform(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "deterministic":
            return np.full(u.shape, self.params[0])
        if self.kind == "bernoulli_trap":
            return np.where(u < self.params[0], math.inf, 0.0)
        if self.kind == "two_point":
            v0, v1, p = self.params
            return np.where(u < p, v1, v0)
        return -np.log1p(-u) / self.params[0]

    def spec(self):
        names = _PARAM_ORDER[self.kind]
        body = ",".join(f"{k}={_fmt(v)}" for k, v in zip(names, self.params))
        return f"{_SPEC_PREFIX[self.kind]}:{body}"

    def __str__(self):
        return self.spec()


def _fmt(v):
    return "inf" if math.isinf(v) else repr(float(v))


def parse_law(text):
    """Parse the one-token law grammar, e.g. ``bernoulli:p=0.1``.

    >>> parse_law("twopoint:v0=0,v1=2,p=0.3").params
    (0.0, 2.0, 0.3)
    """
    if isinstance(text, PotentialLaw):
        return text
    try:
        prefix, _, body = text.strip().partition(":")
        kind = _SPEC_NAMES[prefix]
        given = {}
        for item in filter(None, body.split(",")):
            key, _, val = item.partition("=")
            given[key.strip()] = float(val)
    except (KeyError, ValueError, AttributeError):
        raise ValidationError(
            f"cannot parse law spec {text!r}; expected e.g. 'bernoulli:p=0.1', 'det:v=1.0', "
            "'exp:rate=1.0', 'twopoint:v0=0,v1=2,p=0.3'"
        ) from None
    names = _PARAM_ORDER[kind]
    if set(given) != set(names):
        raise ValidationError(f"law {prefix!r} needs parameters {', '.join(names)}; got {sorted(given)}")
    return PotentialLaw(kind, tuple(given[k] for k in names))


def phi_beta(law, beta, ell):
    """Annealed one-site potential ``-log E exp(-beta * ell * V)``.

    ``ell`` may be an integer or an integer array; the result has its shape.
    At ``beta = 0`` traps do not bite (``0 * inf`` is taken as 0).
    """
    beta = check_beta(beta)
    ell = np.asarray(ell, dtype=float)
    s = beta * ell
    if law.kind == "deterministic":
        out = s * law.params[0]
    elif law.kind == "bernoulli_trap":
        p = law.params[0]
        out = np.where(s > 0, -math.log1p(-p), 0.0) + 0.0 * s
    elif law.kind == "two_point":
        v0, v1, p = law.params
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.log1p(-p) - _times(s, v0) if p < 1 else np.full(s.shape, -np.inf)
            b = math.log(p) - _times(s, v1) if p > 0 else np.full(s.shape, -np.inf)
        out = -np.logaddexp(a, b)
    else:
        out = np.log1p(s / law.params[0])
    out = out + 0.0  # normalise -0.0
    return float(out) if out.ndim == 0 else out


def _times(s, v):
    """``s * v`` with ``0 * inf = 0``."""
    if math.isinf(v):
        return np.where(s > 0, math.inf, 0.0)
    return s * v


def phi_table(law, beta, max_ell):
    """``phi_beta(l)`` for ``l = 0..max_ell`` with ``phi(0) = 0``."""
    ells = np.arange(max_ell + 1)
    out = np.atleast_1d(phi_beta(law, beta, ells)).astype(float)
    out[0] = 0.0
    return out


def check_attractivity(law, beta, L):
    """Return every violation of ``0 < phi(l) <= phi(l+m) <= phi(l) + phi(m)``.

    Pairs ``1 <= l, m <= L`` are scanned.  Strict positivity is skipped when
    ``beta == 0``.  An empty list means the law is attractive up to ``L``.
    Comparisons carry a relative slack of 1e-12 against round-off.
    """
    beta = check_beta(beta)
    L = check_nonneg_int(L, "L", minimum=2)
    phi = phi_table(law, beta, 2 * L)
    violations = []
    for ell in range(1, L + 1):
        if beta > 0 and not phi[ell] > 0:
            violations.append(("positive", ell, None, float(phi[ell])))
    for ell in range(1, L + 1):
        for m in range(1, L + 1):
            a, b, c = phi[ell], phi[ell + m], phi[ell] + phi[m]
            tol = 1e-12 * max(1.0, abs(c))
            if b < a - tol:
                violations.append(("monotone", ell, m, float(b - a)))
            if b > c + tol:
                violations.append(("subadditive", ell, m, float(b - c)))
    return violations


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed, coords):
    """Uniform(0,1) numbers attached to lattice sites.

    ``coords`` is an integer array of shape ``(..., D)``.  The value at a
    site depends only on ``seed`` and that site.
    """
    coords = np.asarray(coords, dtype=np.int64)
    with np.errstate(over="ignore"):
        h = _mix64(np.full(coords.shape[:-1], np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) + _GOLDEN)
        for i in range(coords.shape[-1]):
            c = coords[..., i].astype(np.uint64)
            h = _mix64(h ^ (c + _GOLDEN * np.uint64(i + 1)))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _grid_uniforms(seed, radius, dims):
    """``site_uniforms`` over the whole box, hashing one axis at a time by broadcasting."""
    axis = np.arange(-radius, radius + 1, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        for i in range(dims):
            shape = [1] * dims
            shape[i] = -1
            h = _mix64(h ^ (axis.reshape(shape) + _GOLDEN * np.uint64(i + 1)))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True, eq=False)
class Environment:
    """One realisation of the potential on the box ``|x|_inf <= radius``.

    ``values`` is a read-only array of shape ``(2r+1,) * dims`` indexed so
    that site ``x`` lives at ``values[x + r]``.
    """

    dims: int
    radius: int
    values: np.ndarray = field(repr=False)
    law: PotentialLaw
    seed: int

    def __post_init__(self):
        self.values.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.radius == other.radius
            and self.law == other.law
            and self.seed == other.seed
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.dims, self.radius, self.law, self.seed))

    def contains(self, x):
        return all(abs(int(c)) <= self.radius for c in x)

    def __getitem__(self, x):
        if len(x) != self.dims or not self.contains(x):
            raise KeyError(f"site {tuple(x)} outside box of radius {self.radius}")
        return float(self.values[tuple(int(c) + self.radius for c in x)])

    def value(self, x):
        return self[x]

    def gather(self, points):
        """Values at an integer array of points with shape ``(..., D)``."""
        pts = np.asarray(points) + self.radius
        if pts.size and (pts.min() < 0 or pts.max() > 2 * self.radius):
            raise IndexError("points outside the environment box")
        return self.values[tuple(np.moveaxis(pts, -1, 0))]

    def centered(self, radius):
        """Sub-array for the box ``|x|_inf <= radius`` (a view)."""
        if radius > self.radius:
            raise IndexError(f"requested radius {radius} > box radius {self.radius}")
        lo, hi = self.radius - radius, self.radius + radius + 1
        return self.values[(slice(lo, hi),) * self.dims]

    def sites(self):
        rng = range(-self.radius, self.radius + 1)
        return itertools.product(rng, repeat=self.dims)

    def trap_fraction(self):
        return float(np.isinf(self.values).mean())

    def origin_blocked(self):
        """True when every neighbour of the origin is a trap."""
        out = True
        for i in range(self.dims):
            for s in (1, -1):
                e = [0] * self.dims
                e[i] = s
                out &= math.isinf(self[e])
        return out

    def header(self):
        return (
            f"POLYENV v1 dims={self.dims} radius={self.radius} "
            f"law={self.law.spec()} seed={self.seed}"
        )

    def to_text(self):
        lines = [self.header()]
        flat = self.values.reshape(-1)
        for site, v in zip(self.sites(), flat):
            lines.append(" ".join(map(str, site)) + " " + _fmt(v))
        return "\n".join(lines) + "\n"

    def save(self, path):
        from .io import atomic_write_text

        atomic_write_text(path, self.to_text())

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("POLYENV v1 "):
            raise ValidationError("not a POLYENV v1 file")
        fields = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        try:
            dims = int(fields["dims"])
            radius = int(fields["radius"])
            law = parse_law(fields["law"])
            seed = int(fields["seed"])
        except KeyError as exc:
            raise ValidationError(f"POLYENV header lacks {exc}") from None
        side = 2 * radius + 1
        body = lines[1:]
        if len(body) != side**dims:
            raise ValidationError(f"expected {side ** dims} site lines, found {len(body)}")
        values = np.empty(side**dims)
        for i, (site, line) in enumerate(zip(itertools.product(range(-radius, radius + 1), repeat=dims), body)):
            toks = line.split()
            if tuple(int(t) for t in toks[:-1]) != site:
                raise ValidationError(f"line {i + 2}: sites must be in lexicographic order")
            values[i] = float(toks[-1])
        return cls(dims, radius, values.reshape((side,) * dims), law, seed)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def sample_environment(law, dims, box_radius, seed):
    """Draw the i.i.d. field on ``|x|_inf <= box_radius``.

    Deterministic in all arguments; a larger box agrees with a smaller one
    on their common sites.
    """
    law = parse_law(law)
    dims = check_dims(dims)
    box_radius = check_nonneg_int(box_radius, "box_radius", minimum=1)
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    values = law.sample_from_uniform(_grid_uniforms(seed, box_radius, dims))
    return Environment(dims, box_radius, np.ascontiguousarray(values, dtype=float), law, seed)


def derive_seed(seed, index):
    """Independent 64-bit child seed for ensemble member ``index``."""
    with np.errstate(over="ignore"):
        h = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ (_GOLDEN * np.uint64(index + 1)))
        h = _mix64(h + np.uint64(index))
    return int(h)
