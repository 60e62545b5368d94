"""Nearest-neighbour paths, their weights, cone geometry and irreducible splitting.

Conventions that the renewal structure depends on:

* the potential is collected at vertices ``1..n``; the starting vertex never
  contributes;
* cone membership is the closed condition ``x.h >= delta |x| |h|`` with
  Euclidean norms;
* with ``simple_ends=True`` (the default) a cone-confined path may not
  return to its first vertex nor touch its last vertex early, which makes
  consecutive irreducible pieces share no potential site.
"""

import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .environment import phi_table
from .errors import BoxError, ValidationError
from .validation import check_beta, check_delta, check_dims, check_vector


@dataclass(frozen=True)
class PolymerPath:
    """A path given by its steps.

    Steps are signed axis labels: ``+1`` is ``+e1``, ``-2`` is ``-e2``.
    ``start`` defaults to the origin.
    """

    steps: tuple
    dims: int
    start: tuple = None

    def __post_init__(self):
        check_dims(self.dims)
        steps = tuple(int(s) for s in self.steps)
        for s in steps:
            if s == 0 or abs(s) > self.dims:
                raise ValidationError(f"invalid step {s:+d} in dimension {self.dims}")
        object.__setattr__(self, "steps", steps)
        start = (0,) * self.dims if self.start is None else tuple(int(c) for c in self.start)
        if len(start) != self.dims:
            raise ValidationError("start point has the wrong dimension")
        object.__setattr__(self, "start", start)

    @classmethod
    def from_vertices(cls, vertices):
        verts = np.asarray(vertices, dtype=np.int64)
        diffs = np.diff(verts, axis=0)
        if diffs.size and not np.all(np.abs(diffs).sum(axis=1) == 1):
            raise ValidationError("consecutive vertices must differ by one unit step")
        steps = [int(np.flatnonzero(d)[0] + 1) * int(d[np.flatnonzero(d)[0]]) for d in diffs]
        return cls(tuple(steps), verts.shape[1], tuple(verts[0]))

    @cached_property
    def vertices(self):
        moves = np.zeros((len(self.steps) + 1, self.dims), dtype=np.int64)
        for i, s in enumerate(self.steps):
            moves[i + 1, abs(s) - 1] = 1 if s > 0 else -1
        out = np.cumsum(moves, axis=0) + np.asarray(self.start)
        out.setflags(write=False)
        return out

    def __len__(self):
        return len(self.steps)

    @property
    def length(self):
        return len(self.steps)

    @property
    def end(self):
        return tuple(int(c) for c in self.vertices[-1])

    @property
    def extension(self):
        return self.vertices[-1] - self.vertices[0]

    def shifted(self, start):
        return PolymerPath(self.steps, self.dims, tuple(start))

    def concat(self, other):
        """Append ``other`` (translated to start at this path's end)."""
        return PolymerPath(self.steps + other.steps, self.dims, self.start)

    def literal(self):
        return ",".join(f"{s:+d}" for s in self.steps)

    def __str__(self):
        return self.literal() or "(empty)"


def parse_path(text, dims):
    """Path from the literal syntax ``+1,-2,+1``."""
    text = text.strip()
    if not text:
        return PolymerPath((), dims)
    try:
        steps = tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise ValidationError(f"cannot parse path literal {text!r}") from None
    return PolymerPath(steps, dims)


def local_times(path, include_origin=False):
    """Visit counts of ``path``; the starting vertex is counted only on request."""
    verts = path.vertices if include_origin else path.vertices[1:]
    return Counter(tuple(int(c) for c in v) for v in verts)


def Phi(law, beta, *paths):
    """Annealed interaction ``sum_x phi_beta(sum_i l_{gamma_i}(x))`` of several paths."""
    total = Counter()
    for p in paths:
        total.update(local_times(p))
    if not total:
        return 0.0
    phi = phi_table(law, beta, max(total.values()))
    return float(sum(phi[c] for c in total.values()))


def quenched_weight(path, env, h, beta):
    """``exp(h.X - beta * sum_{i>=1} V(gamma_i)) (2D)^-n``; exactly 0 on a trap."""
    beta = check_beta(beta)
    h = check_vector(h, path.dims)
    verts = path.vertices[1:]
    if verts.size and np.abs(verts).max() > env.radius:
        raise BoxError(f"path leaves the environment box of radius {env.radius}")
    if env.dims != path.dims:
        raise ValidationError("path and environment dimensions differ")
    v = env.gather(verts) if len(verts) else np.zeros(0)
    traps = np.isinf(v)
    if beta > 0 and traps.any():
        return 0.0
    energy = beta * float(v[~traps].sum())
    n = path.length
    return math.exp(float(h @ path.extension) - energy) * (2 * path.dims) ** (-n)


def annealed_weight(path, law, h, beta):
    """``exp(h.X - Phi_beta(gamma)) (2D)^-n``, the disorder average of the quenched weight."""
    h = check_vector(h, path.dims)
    n = path.length
    return math.exp(float(h @ path.extension) - Phi(law, beta, path)) * (2 * path.dims) ** (-n)


@dataclass(frozen=True)
class ConeSpec:
    """The closed cone ``{x : x.h >= delta |x| |h|}``."""

    h: tuple
    delta: float
    simple_ends: bool = True

    def __post_init__(self):
        h = tuple(float(c) for c in np.atleast_1d(self.h))
        dims = check_dims(len(h))
        if not any(h):
            raise ValidationError("cone axis h must be non-zero")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "delta", check_delta(self.delta, dims))

    @classmethod
    def make(cls, h, dims=None, delta=None, simple_ends=True):
        """Cone around ``h``; a scalar ``h`` means ``h * e1``; ``delta`` defaults to ``1/(2 sqrt D)``."""
        if dims is None:
            dims = len(np.atleast_1d(h))
        hv = check_vector(h, dims)
        if delta is None:
            delta = 0.5 / math.sqrt(dims)
        return cls(tuple(hv), delta, simple_ends)

    @property
    def dims(self):
        return len(self.h)

    @cached_property
    def axis(self):
        return np.asarray(self.h)

    @cached_property
    def _scaled(self):
        return self.delta * float(np.linalg.norm(self.axis))

    def contains(self, x):
        """Vectorised membership test over the last axis of ``x``."""
        x = np.asarray(x, dtype=float)
        dot = x @ self.axis
        rhs = self._scaled * np.sqrt((x * x).sum(axis=-1))
        return dot >= rhs - 1e-12 * (1.0 + rhs)

    def lattice_directions(self):
        out = []
        for i in range(self.dims):
            for s in (1, -1):
                e = np.zeros(self.dims)
                e[i] = s
                if self.contains(e):
                    out.append(s * (i + 1))
        return out


def in_cone(x, cone):
    return bool(cone.contains(x))


def confined_mask(verts, cone):
    """Cone-confinement test for a batch of vertex arrays of shape ``(P, n+1, D)``."""
    verts = np.asarray(verts)
    rel = verts - verts[:, :1]
    back = verts[:, -1:] - verts
    ok = cone.contains(rel).all(axis=1) & cone.contains(back).all(axis=1)
    if cone.simple_ends and verts.shape[1] > 1:
        ok &= np.any(rel[:, 1:] != 0, axis=2).all(axis=1)
        ok &= np.any(back[:, :-1] != 0, axis=2).all(axis=1)
    return ok


def break_point_mask(verts, cone):
    """Boolean ``(P, n+1)``: entry ``k`` marks an interior break point of path ``p``.

    ``k`` is a break point when every earlier vertex lies in ``gamma_k - Y``
    and every later one in ``gamma_k + Y`` (and, with simple ends, no other
    vertex coincides with ``gamma_k``).
    """
    verts = np.asarray(verts)
    P, m, _ = verts.shape
    out = np.zeros((P, m), dtype=bool)
    if m < 3:
        return out
    # diff[p, j, k] = gamma_k - gamma_j
    diff = verts[:, None, :, :] - verts[:, :, None, :]
    forward = cone.contains(diff)  # gamma_k in gamma_j + Y
    idx = np.arange(m)
    before = idx[:, None] < idx[None, :]  # j < k
    after = idx[:, None] > idx[None, :]  # j > k
    ok_before = np.where(before[None], forward, True).all(axis=1)
    ok_after = np.where(after[None], np.swapaxes(forward, 1, 2), True).all(axis=1)
    out = ok_before & ok_after
    if cone.simple_ends:
        same = ~np.any(diff != 0, axis=3)
        same[:, idx, idx] = False
        out &= ~same.any(axis=1)
    out[:, 0] = False
    out[:, -1] = False
    return out


def is_cone_confined(path, cone):
    return bool(confined_mask(path.vertices[None], cone)[0])


def break_points(path, cone):
    return [int(k) for k in np.flatnonzero(break_point_mask(path.vertices[None], cone)[0])]


def is_irreducible(path, cone):
    return path.length >= 1 and is_cone_confined(path, cone) and not break_points(path, cone)


def irreducible_split(path, cone):
    """Split a cone-confined path at all of its break points.

    The pieces are irreducible and concatenate back to ``path``.
    """
    if not is_cone_confined(path, cone):
        raise ValidationError(f"path {path} is not cone-confined")
    cuts = [0] + break_points(path, cone) + [path.length]
    verts = path.vertices
    return [
        PolymerPath(path.steps[a:b], path.dims, tuple(int(c) for c in verts[a]))
        for a, b in zip(cuts[:-1], cuts[1:])
    ]
