"""Two-replica quantities: interaction defects, attractivity bounds,
factorisation over disjoint dependence regions and second moments of t.

All disorder averages are exact (:mod:`stretchpoly.disorder`).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .disorder import (
    PathFamily,
    expect_product,
    f_family,
    product,
    t_family,
    union,
)
from .environment import parse_law, phi_table
from .exactenum import confined_paths, unit_steps
from .harness import dependence_region
from .io import csv_text
from .polymer import PolymerPath, local_times
from .validation import check_beta, check_vector


# ---------------------------------------------------------------------------
# path-level inequalities


def _phi(law, beta, counts):
    top = max(counts, default=1)
    return phi_table(parse_law(law), check_beta(beta), max(top, 1))


def interaction_defect(gamma, gamma_prime, law, beta):
    """``Phi(gamma) + Phi(gamma') - Phi(gamma, gamma')``, the replica coupling exponent.

    Summed over shared sites only, so disjoint supports give exactly 0.
    Non-negative for any attractive law.
    """
    law = parse_law(law)
    a, b = local_times(gamma), local_times(gamma_prime)
    shared = a.keys() & b.keys()
    if not shared or law.is_linear:
        return 0.0
    phi = _phi(law, beta, [a[s] + b[s] for s in shared])
    return float(sum(phi[a[s]] + phi[b[s]] - phi[a[s] + b[s]] for s in sorted(shared)))


def _Phi_counts(phi, counts):
    return sum(phi[c] for c in counts.values())


def last_step_bound_check(gamma, gamma_prime, eta, eta_prime, law, beta):
    """Slack of ``{Phi(g,g',e,e') - Phi(g,g')} + {(m+m') phi(1) - Phi(e) - Phi(e')}``.

    ``eta`` and ``eta_prime`` are translated to start at the ends of
    ``gamma`` and ``gamma_prime``.  Both brackets are non-negative for an
    attractive law; a linear law gives exactly 0.
    """
    law = parse_law(law)
    eta = eta.shifted(gamma.end)
    eta_prime = eta_prime.shifted(gamma_prime.end)
    if law.is_linear or beta == 0:
        return 0.0
    g2 = local_times(gamma) + local_times(gamma_prime)
    e1, e2 = local_times(eta), local_times(eta_prime)
    g4 = g2 + e1 + e2
    phi = _phi(law, beta, list(g4.values()) + [1])
    m, mp = eta.length, eta_prime.length
    first = sum(phi[g4[s]] - phi[g2.get(s, 0)] for s in sorted(g4))
    second = (m + mp) * phi[1] - _Phi_counts(phi, e1) - _Phi_counts(phi, e2)
    return float(first + second)


@dataclass(frozen=True)
class ReplicaPair:
    """Two paths in a shared environment law."""

    gamma: PolymerPath
    gamma_prime: PolymerPath
    law: object
    beta: float
    h: tuple = None
    cone: object = None

    def defect(self):
        return interaction_defect(self.gamma, self.gamma_prime, self.law, self.beta)

    def coupling_factor(self):
        """``exp(defect)``: the ratio of the joint annealed weight to the product of the single ones."""
        return math.exp(self.defect())


def random_path(rng, dims, n, h=None):
    """A walk of length ``n`` from the origin; steps tilted by ``exp(h.e)`` when ``h`` is given."""
    steps = unit_steps(dims)
    if h is None:
        p = np.full(len(steps), 1.0 / len(steps))
    else:
        p = np.exp(steps @ check_vector(h, dims))
        p /= p.sum()
    idx = rng.choice(len(steps), size=n, p=p)
    labels = [int(np.flatnonzero(e)[0] + 1) * int(e.sum()) for e in steps]
    return PolymerPath(tuple(labels[i] for i in idx), dims)


@dataclass
class DefectMoment:
    mean: float
    stderr: float
    n_pairs: int
    exponent: float
    seed: int

    def to_dict(self):
        return dict(self.__dict__)


def defect_moment(law, beta, dims, n, n_pairs, seed, h=None, exponent=1.0):
    """Sample mean of ``exp(exponent * defect)`` over independent walk pairs of length ``n``."""
    rng = np.random.default_rng(seed)
    vals = np.array([
        math.exp(exponent * interaction_defect(random_path(rng, dims, n, h), random_path(rng, dims, n, h),
                                               law, beta))
        for _ in range(n_pairs)
    ])
    err = float(vals.std(ddof=1) / math.sqrt(n_pairs)) if n_pairs > 1 else math.nan
    return DefectMoment(float(vals.mean()), err, n_pairs, exponent, seed)


# ---------------------------------------------------------------------------
# four-path expectations


def _centred(fam, law, beta):
    """``f - E f`` as a family with a constant (site-free) term."""
    mean = expect_product([fam], law, beta)
    const = PathFamily(np.array([-mean]), np.zeros((0, fam.dims), dtype=np.int64),
                       np.zeros((1, 0), dtype=np.int64))
    return union([fam, const]) if fam.size else const


def _quartet(x, y, xp, yp, ell, m, mp, cone, h, lam):
    D = cone.dims
    origin = np.zeros(D, dtype=np.int64)
    x, y, xp, yp = (np.asarray(a, dtype=np.int64) for a in (x, y, xp, yp))
    tt = product(t_family(origin, x, ell, cone, h, lam), t_family(origin, xp, ell, cone, h, lam))
    f = f_family(x, y, m, cone, h, lam)
    fp = f_family(xp, yp, mp, cone, h, lam)
    return tt, f, fp


def regions_disjoint(x, y, xp, yp, cone):
    """True when ``D(x, y)`` and ``D(x', y')`` share no lattice point."""
    a = {tuple(p) for p in dependence_region(x, y, cone).tolist()}
    b = {tuple(p) for p in dependence_region(xp, yp, cone).tolist()}
    return not (a & b)


@dataclass(frozen=True)
class FactorizationResult:
    value: float
    disjoint: bool
    empty: bool

    def to_dict(self):
        return dict(self.__dict__)


def factorization_check(x, y, x_prime, y_prime, ell, m, m_prime, law, beta, algebra, h, cone, lam=0.0):
    """``E[t t' E(f - fbar | A) E(f' - fbar' | A)]`` with the region-disjointness flag.

    ``t`` runs from the origin to ``x`` (and ``x'``) in ``ell`` steps, ``f``
    from ``x`` to ``y`` in ``m`` steps.  Under disjointness the value vanishes.
    """
    law = parse_law(law)
    tt, f, fp = _quartet(x, y, x_prime, y_prime, ell, m, m_prime, cone, h, lam)
    disjoint = regions_disjoint(x, y, x_prime, y_prime, cone)
    if tt.size == 0 or f.size == 0 or fp.size == 0:
        return FactorizationResult(0.0, disjoint, True)
    val = expect_product([tt, _centred(f, law, beta), _centred(fp, law, beta)], law, beta, algebra)
    return FactorizationResult(float(val), disjoint, False)


def conditional_monotonicity_check(x, y, x_prime, y_prime, ell, m, m_prime, law, beta, algebra, h, cone,
                                   lam=0.0):
    """``(E[t t' E(f|A) E(f'|A)], E[t t' f f'])``; the first never exceeds the second."""
    law = parse_law(law)
    tt, f, fp = _quartet(x, y, x_prime, y_prime, ell, m, m_prime, cone, h, lam)
    if tt.size == 0 or f.size == 0 or fp.size == 0:
        return 0.0, 0.0
    lhs = expect_product([tt, f, fp], law, beta, algebra)
    rhs = expect_product([tt, f, fp], law, beta)
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# second moments of t


@dataclass
class SecondMomentProfile:
    """``E[t_x t_x']`` against ``t̄_x t̄_x'`` over all endpoint pairs, ``ell = 1..ell_max``."""

    rows: list = field(repr=False)  # (ell, x, x', E[tt'], tbar_x tbar_x')
    fit: dict = None
    min_ratio: float = math.nan
    violations: int = 0

    def to_csv(self):
        header = ["ell", "x", "x_prime", "second_moment", "product_of_means", "ratio"]
        body = [[r[0], " ".join(map(str, r[1])), " ".join(map(str, r[2])), r[3], r[4], r[3] / r[4]]
                for r in self.rows]
        return csv_text(header, body)

    def to_dict(self):
        return {"fit": self.fit, "min_ratio": self.min_ratio, "violations": self.violations,
                "pairs": len(self.rows)}


def second_moment_profile(law, h, beta, cone, ell_max, v=None, lam=0.0, tol=1e-12):
    """Exact second moments of the cone-confined weights from the origin.

    The fit regresses ``log E[t t']`` on ``1``, ``log ell`` and
    ``q = (|x - ell v|^2 + |x' - ell v|^2) / ell``; the ``log ell``
    coefficient is ``-(D - rho)`` and the ``q`` coefficient ``-c2``.
    ``violations`` counts pairs with ``E[tt'] < t̄ t̄' (1 - tol)``.
    """
    law = parse_law(law)
    D = cone.dims
    hv = check_vector(h, D)
    origin = np.zeros(D, dtype=np.int64)
    rows = []
    for ell in range(1, ell_max + 1):
        ends = np.unique(confined_paths(D, ell, cone).endpoints, axis=0)
        fams = [t_family(origin, x, ell, cone, hv, lam) for x in ends]
        means = [expect_product([f], law, beta) for f in fams]
        for i in range(len(ends)):
            for j in range(i, len(ends)):
                e2 = expect_product([product(fams[i], fams[j])], law, beta)
                rows.append((ell, tuple(map(int, ends[i])), tuple(map(int, ends[j])), e2, means[i] * means[j]))
    ratio = np.array([r[3] / r[4] for r in rows])
    violations = int(np.sum(np.array([r[3] for r in rows]) < np.array([r[4] for r in rows]) * (1 - tol)))
    fit = None
    if v is not None:
        fit = _gaussian_fit(rows, np.asarray(v, dtype=float), D)
    return SecondMomentProfile(rows, fit, float(ratio.min()), violations)


def _gaussian_fit(rows, v, D):
    ell = np.array([r[0] for r in rows], dtype=float)
    x = np.array([r[1] for r in rows], dtype=float)
    xp = np.array([r[2] for r in rows], dtype=float)
    y = np.log([r[3] for r in rows])
    q = (np.sum((x - ell[:, None] * v) ** 2, axis=1) + np.sum((xp - ell[:, None] * v) ** 2, axis=1)) / ell
    A = np.column_stack([np.ones_like(ell), np.log(ell), q])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return {"log_c1": float(coef[0]), "rho": float(D + coef[1]), "c2": float(-coef[2]), "r2": r2,
            "rho_below_1_12": bool(D + coef[1] < 1.0 / 12)}


def cases_to_csv(cases):
    """Case records (dicts with the same keys) as CSV; columns in first-seen key order."""
    keys = []
    for c in cases:
        keys.extend(k for k in c if k not in keys)
    return csv_text(keys, ([c.get(k) for k in keys] for c in cases))


__all__ = [
    "ReplicaPair",
    "interaction_defect",
    "last_step_bound_check",
    "factorization_check",
    "conditional_monotonicity_check",
    "second_moment_profile",
    "defect_moment",
    "random_path",
    "regions_disjoint",
    "random_geometry",
    "cases_to_csv",
]


def random_geometry(rng, cone, ell_max, m_max):
    """A random admissible ``(x, y, x', y', ell, m, m')``: every family involved is non-empty."""
    from .exactenum import irreducible_paths

    D = cone.dims
    ell = int(rng.integers(0, ell_max + 1))
    ends = confined_paths(D, ell, cone).endpoints
    x, xp = ends[rng.integers(len(ends))], ends[rng.integers(len(ends))]
    out = [ell]
    pieces = []
    for anchor in (x, xp):
        m = int(rng.integers(1, m_max + 1))
        while irreducible_paths(D, m, cone).count == 0:
            m = int(rng.integers(1, m_max + 1))
        fe = irreducible_paths(D, m, cone).endpoints
        pieces.append((anchor + fe[rng.integers(len(fe))], m))
    (y, m), (yp, mp) = pieces
    return tuple(map(int, x)), tuple(map(int, y)), tuple(map(int, xp)), tuple(map(int, yp)), ell, m, mp
