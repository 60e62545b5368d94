"""Exact disorder averages of products of path-weight sums.

Every quantity handled here has the form

    E[ prod_g E(Y_g | A) ],   Y_g = sum_p c_p exp(-beta sum_s l_p(s) V(s)),

with ``A`` generated by the potentials on a set of sites.  Because the
potentials are i.i.d., the expectation factorises site by site: a site in
``A`` contributes ``exp(-phi(sum_g l_g(s)))`` and a site outside contributes
``prod_g exp(-phi(l_g(s)))``.  :func:`expect_product` evaluates that formula;
:func:`enumerate_product` computes the same number by brute force over all
potential configurations (finite-support laws, few sites) and serves as the
oracle.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment, parse_law, phi_table
from .errors import BoxError, CapacityError, ValidationError
from .exactenum import confined_paths, irreducible_paths

MAX_FREE_SITES = 24
_COMBO_CHUNK = 1 << 18
_CFG_CHUNK = 1 << 12


@dataclass(frozen=True, eq=False)
class PathFamily:
    """A weighted set of paths and their local times.

    ``coef[p]`` is the deterministic part of the weight of path ``p``
    (tilt, ``(2D)^-n`` and any ``exp(-lambda n)``), ``sites`` is the sorted
    union of sites visited at steps ``1..n`` and ``L[p, k]`` the number of
    visits of path ``p`` to ``sites[k]``.
    """

    coef: np.ndarray = field(repr=False)
    sites: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.coef)

    @property
    def dims(self):
        return self.sites.shape[1]

    @classmethod
    def empty(cls, dims):
        return cls(np.ones(1), np.zeros((0, dims), dtype=np.int64), np.zeros((1, 0), dtype=np.int64))

    def total(self):
        """Sum of the weights with every potential set to zero."""
        return float(self.coef.sum())


def family_from_vertices(verts, h, lam=0.0):
    """Family from a vertex array ``(P, n+1, D)`` (absolute coordinates)."""
    verts = np.asarray(verts, dtype=np.int64)
    P, m, D = verts.shape
    n = m - 1
    if P == 0:
        return PathFamily(np.zeros(0), np.zeros((0, D), dtype=np.int64), np.zeros((0, 0), dtype=np.int64))
    h = np.asarray(h, dtype=float)
    disp = verts[:, -1] - verts[:, 0]
    coef = np.exp(disp @ h - n * (math.log(2 * D) + lam))
    visited = verts[:, 1:].reshape(-1, D)
    if n == 0:
        return PathFamily(coef, np.zeros((0, D), dtype=np.int64), np.zeros((P, 0), dtype=np.int64))
    sites, inv = np.unique(visited, axis=0, return_inverse=True)
    rows = np.repeat(np.arange(P), n)
    L = np.zeros((P, len(sites)), dtype=np.int64)
    np.add.at(L, (rows, inv.reshape(-1)), 1)
    return PathFamily(coef, sites, L)


def _select(geom, anchor, end):
    verts = geom.verts.astype(np.int64) + np.asarray(anchor, dtype=np.int64)
    if end is None:
        return verts
    keep = np.all(verts[:, -1] == np.asarray(end, dtype=np.int64), axis=1)
    return verts[keep]


def t_family(start, end, n, cone, h, lam=0.0):
    """Cone-confined paths of length ``n`` from ``start`` to ``end`` (``end=None``: any end)."""
    geom = confined_paths(cone.dims, n, cone)
    return family_from_vertices(_select(geom, start, end), h, lam)


def f_family(start, end, n, cone, h, lam=0.0):
    """Irreducible paths of length ``n`` from ``start`` to ``end`` (``end=None``: any end)."""
    geom = irreducible_paths(cone.dims, n, cone)
    return family_from_vertices(_select(geom, start, end), h, lam)


def f_family_upto(start, M, cone, h, lam=0.0):
    """All irreducible paths from ``start`` with lengths ``1..M``, as one family."""
    fams = [f_family(start, None, m, cone, h, lam) for m in range(1, M + 1)]
    return union(fams)


def _align(families):
    """Common site list and the local-time matrices re-indexed onto it."""
    dims = families[0].dims
    allsites = [f.sites for f in families if len(f.sites)]
    if not allsites:
        return np.zeros((0, dims), dtype=np.int64), [np.zeros((f.size, 0), dtype=np.int64) for f in families]
    sites = np.unique(np.concatenate(allsites), axis=0)
    out = []
    for f in families:
        Lf = np.zeros((f.size, len(sites)), dtype=np.int64)
        if len(f.sites):
            idx = _index_of(sites, f.sites)
            Lf[:, idx] = f.L
        out.append(Lf)
    return sites, out


def _index_of(sites, query):
    """Row index in ``sites`` (sorted, unique) of each row of ``query``."""
    lo = sites.min(axis=0)
    span = sites.max(axis=0) - lo + 1
    span = np.maximum(span, query.max(axis=0) - lo + 1)
    key_s = np.ravel_multi_index(tuple((sites - lo).T), tuple(span))
    key_q = np.ravel_multi_index(tuple((query - lo).T), tuple(span))
    order = np.argsort(key_s)
    pos = np.searchsorted(key_s[order], key_q)
    return order[pos]


def union(families):
    """Disjoint union: the family whose weight sum is the sum of the parts."""
    families = [f for f in families if f.size]
    if not families:
        raise ValidationError("union of empty families")
    sites, Ls = _align(families)
    return PathFamily(np.concatenate([f.coef for f in families]), sites, np.concatenate(Ls))


def product(a, b):
    """Product of two weight sums: every pair of paths, local times added."""
    sites, (La, Lb) = _align([a, b])
    coef = (a.coef[:, None] * b.coef[None, :]).reshape(-1)
    L = (La[:, None, :] + Lb[None, :, :]).reshape(len(coef), len(sites))
    return PathFamily(coef, sites, L)


def scaled(fam, c):
    return PathFamily(fam.coef * c, fam.sites, fam.L)


class Algebra:
    """Sigma-algebra generated by the potentials on a set of sites.

    ``predicate(points)`` returns a boolean array over rows of ``points``.
    """

    def __init__(self, predicate, label="custom"):
        self._pred = predicate
        self.label = label

    def contains(self, points):
        points = np.asarray(points)
        if points.size == 0:
            return np.zeros(len(points), dtype=bool)
        return np.asarray(self._pred(points), dtype=bool)

    @classmethod
    def full(cls):
        return cls(lambda p: np.ones(len(p), dtype=bool), "full")

    @classmethod
    def trivial(cls):
        return cls(lambda p: np.zeros(len(p), dtype=bool), "trivial")

    @classmethod
    def sites(cls, sites):
        keyset = {tuple(int(c) for c in s) for s in sites}
        return cls(lambda p: np.array([tuple(int(c) for c in r) in keyset for r in p], dtype=bool), "sites")

    def __repr__(self):
        return f"Algebra({self.label})"


def _phi(law, beta, Lmax):
    return phi_table(parse_law(law), beta, max(int(Lmax), 1))


def expect_product(groups, law, beta, algebra=None):
    """``E[prod_g E(Y_g | A)]`` in closed form.

    ``groups`` is a list of families, one per conditional factor; pass the
    product of two families as one group when both sit inside the same
    conditional expectation.  ``algebra=None`` means the full algebra (plain
    ``E[prod_g Y_g]``).
    """
    algebra = Algebra.full() if algebra is None else algebra
    sites, Ls = _align(groups)
    frozen = algebra.contains(sites)
    Lmax = sum(int(L.max()) if L.size else 0 for L in Ls)
    phi = _phi(law, beta, Lmax)
    free = ~frozen
    # per-path coefficient times its free-site factor; frozen local times kept apart
    pre = [g.coef * np.exp(-phi[L[:, free]].sum(axis=1)) for g, L in zip(groups, Ls)]
    fz = [L[:, frozen] for L in Ls]
    head_c, head_L = pre[0], fz[0]
    for c, Lg in zip(pre[1:-1], fz[1:-1]):
        head_c = (head_c[:, None] * c[None, :]).reshape(-1)
        head_L = (head_L[:, None, :] + Lg[None, :, :]).reshape(len(head_c), head_L.shape[1])
    if len(groups) == 1:
        return float((head_c * np.exp(-phi[head_L].sum(axis=1))).sum())
    tail_c, tail_L = pre[-1], fz[-1]
    step = max(1, _COMBO_CHUNK // max(1, len(tail_c)))
    total = 0.0
    for a in range(0, len(head_c), step):
        c = (head_c[a : a + step, None] * tail_c[None, :]).reshape(-1)
        L = (head_L[a : a + step, None, :] + tail_L[None, :, :]).reshape(len(c), head_L.shape[1])
        total += float((c * np.exp(-phi[L].sum(axis=1))).sum())
    return total


def conditional_value(fam, law, beta, algebra, env):
    """``E(Y | A)`` evaluated at the environment ``env`` (frozen sites read from it)."""
    if not isinstance(env, Environment):
        raise ValidationError("conditional_value needs an Environment for the frozen sites")
    frozen = algebra.contains(fam.sites)
    phi = _phi(law, beta, fam.L.max() if fam.L.size else 1)
    w = fam.coef * np.exp(-phi[fam.L[:, ~frozen]].sum(axis=1))
    if frozen.any():
        pts = fam.sites[frozen]
        if np.abs(pts).max() > env.radius:
            raise BoxError("frozen sites leave the environment box")
        V = env.gather(pts)
        w = w * _weights_factor(fam.L[:, frozen], V[None, :], beta)[0]
    return float(w.sum())


def enumerate_product(groups, law, beta, algebra=None, order=None, cap=MAX_FREE_SITES):
    """Brute-force ``E[prod_g E(Y_g | A)]`` over every potential configuration.

    Needs a finite-support law and at most ``cap`` sites in total.  ``order``
    permutes the site enumeration order (the result must not depend on it).
    """
    law = parse_law(law)
    sup = law.support()
    if sup is None:
        raise ValidationError("exhaustive disorder enumeration needs a finite-support law")
    vals, probs = sup
    algebra = Algebra.full() if algebra is None else algebra
    sites, Ls = _align(groups)
    K = len(sites)
    if K > cap:
        raise CapacityError(f"{K} sites exceed the exhaustive-enumeration cap {cap}", parameter="sites", limit=cap)
    perm = np.arange(K) if order is None else np.asarray(order)
    if sorted(perm.tolist()) != list(range(K)):
        raise ValidationError("order must be a permutation of the site indices")
    sites = sites[perm]
    Ls = [L[:, perm] for L in Ls]
    frozen = algebra.contains(sites)
    fi, ui = np.flatnonzero(frozen), np.flatnonzero(~frozen)
    S = len(vals)
    cfg_f = _configs(S, len(fi))
    cfg_u = _configs(S, len(ui))
    pf = np.prod(probs[cfg_f], axis=1)
    pu = np.prod(probs[cfg_u], axis=1)
    result = 0.0
    for a, cf in enumerate(cfg_f):
        prod = 1.0
        for g, L in zip(groups, Ls):
            cond = 0.0
            for b in range(0, len(cfg_u), _CFG_CHUNK):
                cu = cfg_u[b : b + _CFG_CHUNK]
                V = np.empty((len(cu), K))
                V[:, fi] = vals[cf]
                V[:, ui] = vals[cu]
                cond += float(pu[b : b + _CFG_CHUNK] @ _weights_at(g.coef, L, V, beta))
            prod *= cond
        result += pf[a] * prod
    return result


def _configs(S, k):
    """All ``S**k`` value-index assignments of ``k`` sites, one per row."""
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.indices((S,) * k).reshape(k, -1).T


def _weights_factor(L, V, beta):
    """``exp(-beta sum_s L_ps V_s)`` per configuration row of ``V`` and path ``p``; 0 on traps."""
    if beta == 0:
        return np.ones((len(V), len(L)))
    traps = np.isinf(V)
    energy = np.where(traps, 0.0, V) @ L.T
    blocked = (traps.astype(np.int64) @ (L > 0).T.astype(np.int64)) > 0
    return np.where(blocked, 0.0, np.exp(-beta * energy))


def _weights_at(coef, L, V, beta):
    """``sum_p coef_p exp(-beta sum_s L_ps V_s)`` for each configuration row of ``V``."""
    if beta == 0:
        return np.full(len(V), coef.sum())
    return _weights_factor(L, V, beta) @ coef


def _frozen_values(fam, algebra, env):
    frozen = algebra.contains(fam.sites)
    V = np.zeros(len(fam.sites))
    if frozen.any():
        pts = fam.sites[frozen]
        if np.abs(pts).max() > env.radius:
            raise BoxError("frozen sites leave the environment box")
        V[frozen] = env.gather(pts)
    return frozen, V


def enumerate_conditional(fam, law, beta, algebra, env, cap=MAX_FREE_SITES):
    """``E(Y | A)`` at ``env`` by summing over every configuration of the free sites."""
    law = parse_law(law)
    sup = law.support()
    if sup is None:
        raise ValidationError("exhaustive disorder enumeration needs a finite-support law")
    vals, probs = sup
    frozen, V0 = _frozen_values(fam, algebra, env)
    ui = np.flatnonzero(~frozen)
    if len(ui) > cap:
        raise CapacityError(f"{len(ui)} free sites exceed the exhaustive-enumeration cap {cap}",
                            parameter="free_sites", limit=cap)
    cfg = _configs(len(vals), len(ui))
    pu = np.prod(probs[cfg], axis=1)
    out = 0.0
    for b in range(0, len(cfg), _CFG_CHUNK):
        V = np.tile(V0, (len(cfg[b : b + _CFG_CHUNK]), 1))
        V[:, ui] = vals[cfg[b : b + _CFG_CHUNK]]
        out += float(pu[b : b + _CFG_CHUNK] @ _weights_at(fam.coef, fam.L, V, beta))
    return out


def sample_conditional(fam, law, beta, algebra, env, n_samples, rng):
    """Monte Carlo ``E(Y | A)`` at ``env``: resample the free sites; returns ``(mean, stderr)``."""
    law = parse_law(law)
    frozen, V0 = _frozen_values(fam, algebra, env)
    ui = np.flatnonzero(~frozen)
    V = np.tile(V0, (n_samples, 1))
    V[:, ui] = law.sample_from_uniform(rng.random((n_samples, len(ui))))
    y = _weights_at(fam.coef, fam.L, V, beta)
    err = float(y.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.nan
    return float(y.mean()), err
