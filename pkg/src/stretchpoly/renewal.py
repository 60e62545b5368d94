"""Renewal analysis of the annealed irreducible law.

Given raw irreducible weights ``F_{x,n}`` (tilted, unshifted), the shift
``lambda`` normalises them into a probability law ``f_{x,n} = exp(-lambda n)
F_{x,n}`` on steps ``(x, n)``.  Everything else follows from that law:

* ``mu(z)`` solves ``sum f_{x,n} exp(z.x - mu n) = 1``;
* ``v = E[x] / E[n]`` and ``Sigma = E[(x - n v)(x - n v)^T] / E[n]`` are the
  gradient and Hessian of ``mu`` at 0 (implicit differentiation);
* ``kappa(0) = E[n]`` and ``t_n -> 1 / kappa(0)`` by the renewal theorem.

Sums are truncated at the largest tabulated length ``N``; the fitted tail
rate ``nu`` of ``sum_{m >= n} f_m`` gives the reported bound ``exp(-nu N)``.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import lambertw
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import DomainError, NumericalError, ValidationError
from .exactenum import KIND_F, WeightTable, enumerate_basic, irreducible_from_confined
from .environment import parse_law
from .io import dumps
from .polymer import ConeSpec
from .validation import check_nonneg_int

BISECTION_TOL = 1e-6


def _raw_totals(F, N=None):
    """``F_n = sum_x F_{x,n}`` as an array indexed by ``n = 0..N``."""
    if isinstance(F, WeightTable):
        if F.kind != KIND_F:
            raise ValidationError("expected an irreducible (f) table")
        top = F.n_max if N is None else min(N, F.n_max)
        out = np.zeros(top + 1)
        for n in range(1, top + 1):
            if n in F.data:
                out[n] = F.data[n][1].sum()
        return out
    arr = np.asarray(F, dtype=float)
    if arr.ndim != 1:
        raise ValidationError("raw totals must be one-dimensional")
    if np.any(arr < 0):
        raise ValidationError("raw weights must be non-negative")
    return arr if N is None else arr[: N + 1]


def fit_tail_rate(fbar):
    """Exponential decay rate ``nu`` of the per-length masses ``f_n``.

    Least-squares slope of ``log f_n`` over the last third of the lengths
    with ``f_n > 0``.  For geometric tails this is also the rate of the tail
    mass ``sum_{m >= n} f_m``; fitting the tail mass of a truncated table
    directly is biased upward by the cutoff.  Returns ``nan`` when fewer
    than two points remain or the slope is not negative.
    """
    f = np.asarray(fbar, dtype=float)
    ns = np.arange(len(f))
    ok = (ns >= 1) & (f > 0)
    ns, f = ns[ok], f[ok]
    if len(ns) < 2:
        return math.nan
    start = ns[0] + (2 * (ns[-1] - ns[0])) // 3
    sel = ns >= start
    if sel.sum() < 2:
        sel = ns >= ns[-2]
    slope = np.polyfit(ns[sel], np.log(f[sel]), 1)[0]
    return float(-slope) if slope < 0 else math.nan


@dataclass(frozen=True)
class LambdaSolution:
    lam: float
    residual: float
    nu_hat: float
    horizon: int
    iterations: int

    @property
    def truncation_bound(self):
        if not np.isfinite(self.nu_hat):
            return math.inf
        return math.exp(-self.nu_hat * self.horizon)

    def to_dict(self):
        return {
            "lambda": self.lam,
            "residual": self.residual,
            "nu_hat": self.nu_hat,
            "horizon": self.horizon,
            "truncation_bound": self.truncation_bound,
            "iterations": self.iterations,
        }


def solve_lambda(F, N=None, tol=1e-12):
    """Root of ``G(lambda) = sum_{n <= N} exp(-lambda n) F_n = 1``.

    Bisection on ``[0, max_n log(F_n)/n + 1]`` (extended downward while
    ``G < 1`` at the left end) to width 1e-6, then Newton to ``|G - 1| <= tol``.
    """
    tot = _raw_totals(F, N)
    ns = np.arange(len(tot))
    pos = (ns >= 1) & (tot > 0)
    if not pos.any():
        raise NumericalError("all raw irreducible weights vanish: no root of G(lambda) = 1")
    horizon = int(ns[pos].max())

    def G(lam):
        return float((tot[pos] * np.exp(-lam * ns[pos])).sum())

    hi = float(np.max(np.log(tot[pos]) / ns[pos])) + 1.0
    lo = 0.0
    steps = 0
    while G(lo) < 1.0:
        lo = -1.0 if lo == 0 else 2 * lo
        steps += 1
        if steps > 60:
            raise NumericalError("no sign change of G(lambda) - 1 in the search bracket")
    if lo > hi:
        hi = lo + 1.0
    if G(hi) > 1.0:
        raise NumericalError("no sign change of G(lambda) - 1 in the search bracket")
    it = 0
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if G(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        it += 1
    lam = 0.5 * (lo + hi)
    for _ in range(50):
        terms = tot[pos] * np.exp(-lam * ns[pos])
        g = terms.sum() - 1.0
        if abs(g) <= tol:
            break
        lam += g / (ns[pos] * terms).sum()
        it += 1
    resid = abs(G(lam) - 1.0)
    if resid > max(tol, 1e-10):
        raise NumericalError(f"Newton iteration for lambda stalled at |G-1| = {resid:.3e}")
    fbar = tot * np.exp(-lam * ns)
    fbar[0] = 0.0
    return LambdaSolution(float(lam), float(resid), fit_tail_rate(fbar), horizon, it)


@dataclass(frozen=True, eq=False)
class IrreducibleLaw:
    """A normalised irreducible law flattened to arrays.

    ``X`` is ``(M, D)`` steps, ``L`` their lengths and ``W`` their weights.
    """

    dims: int
    X: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    lam: float = 0.0
    nu_hat: float = math.nan
    horizon: int = 0
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_table(cls, F, lam, nu_hat=math.nan, provenance=None):
        """Flatten a raw f-table, applying ``exp(-lam n)``.

        The weights are divided by their sum so the law is normalised to the
        last bit; ``mu(0) = 0`` is then the exact root.  The pre-division
        mass is kept in ``provenance['raw_mass']``.
        """
        xs, ls, ws = [], [], []
        for n in F.lengths():
            pts, w = F.data[n]
            if len(pts):
                xs.append(pts)
                ls.append(np.full(len(pts), n))
                ws.append(w * math.exp(-lam * n))
        X = np.concatenate(xs).astype(float)
        L = np.concatenate(ls).astype(float)
        W = np.concatenate(ws)
        raw_mass = float(W.sum())
        W = W / raw_mass
        prov = {"source": F.header(), "lambda": float(lam), "raw_mass": raw_mass}
        prov.update(provenance or {})
        return cls(F.dims, X, L, W, float(lam), float(nu_hat), int(L.max()), prov)

    @classmethod
    def from_arrays(cls, X, L, W, lam=0.0, nu_hat=math.nan, provenance=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        L = np.asarray(L, dtype=float)
        W = np.asarray(W, dtype=float)
        if not (len(X) == len(L) == len(W)):
            raise ValidationError("X, L and W must have the same length")
        if np.any(L < 1) or np.any(W < 0):
            raise ValidationError("lengths must be >= 1 and weights non-negative")
        return cls(X.shape[1], X, L, W, float(lam), float(nu_hat), int(L.max()), dict(provenance or {}))

    def totals(self):
        """``f_n`` for ``n = 0..horizon``."""
        return np.bincount(self.L.astype(int), weights=self.W, minlength=self.horizon + 1)

    def mass(self):
        return float(self.W.sum())

    @property
    def truncation_bound(self):
        return math.exp(-self.nu_hat * self.horizon) if np.isfinite(self.nu_hat) else math.inf

    def char_totals(self, theta):
        """``F_m(theta) = sum_x f_{x,m} exp(i theta.x)`` for ``m = 0..horizon``."""
        th = np.asarray(theta, dtype=float)
        terms = self.W * np.exp(1j * (self.X @ th))
        out = np.zeros(self.horizon + 1, dtype=complex)
        np.add.at(out, self.L.astype(int), terms)
        return out

    def dense(self, n, radius):
        """``f_{., n}`` as a dense array over the L-infinity ball of ``radius``."""
        out = np.zeros((2 * radius + 1,) * self.dims)
        sel = self.L == n
        if sel.any():
            idx = tuple((self.X[sel].astype(int) + radius).T)
            np.add.at(out, idx, self.W[sel])
        return out


def _check_z(z, dims):
    z = np.atleast_1d(np.asarray(z))
    if z.shape != (dims,):
        raise ValidationError(f"z must have {dims} components")
    if np.iscomplexobj(z):
        if np.any(z.real != 0) and np.any(z.imag != 0):
            raise ValidationError("complex z is supported on the imaginary axis only")
        if np.any(z.imag != 0):
            return z.imag.astype(float), True
        return z.real.astype(float), False
    return z.astype(float), False


def _tilted_tail_rate(law, weights):
    per_n = np.bincount(law.L.astype(int), weights=np.abs(weights), minlength=law.horizon + 1)
    return fit_tail_rate(per_n)


def mu_of_z(law, z):
    """``mu(z)`` for real ``z`` or purely imaginary ``z`` (pass a complex vector).

    Raises :class:`DomainError` when the tilted tail no longer decays (the
    truncated defining sum has lost its margin) or the complex Newton
    iteration escapes.
    """
    zz, imaginary = _check_z(z, law.dims)
    if not np.any(zz):
        return 0.0 if not imaginary else 0j
    if not imaginary:
        expo = law.X @ zz
        ratios = expo / law.L

        def H(mu):
            return float((law.W * np.exp(expo - mu * law.L)).sum()) - 1.0

        lo, hi = float(ratios.min()), float(ratios.max())
        if H(lo) * H(hi) > 0:
            lo, hi = lo - 1.0, hi + 1.0
        mu = brentq(H, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        for _ in range(3):
            terms = law.W * np.exp(expo - mu * law.L)
            g = terms.sum() - 1.0
            d = (law.L * terms).sum()
            if d <= 0:
                break
            mu += g / d
        if np.isfinite(law.nu_hat):
            rate = _tilted_tail_rate(law, law.W * np.exp(expo - mu * law.L))
            if not rate > 0:
                raise DomainError(f"z={zz.tolist()} is outside the region where the truncated sum decays")
        return float(mu)
    phase = 1j * (law.X @ zz)
    v = (law.W @ law.X) / (law.W @ law.L)
    mu = complex(1j * (zz @ v))
    for _ in range(100):
        terms = law.W * np.exp(phase - mu * law.L)
        g = terms.sum() - 1.0
        d = -(law.L * terms).sum()
        if d == 0:
            break
        step = g / d
        mu -= step
        if not np.isfinite(mu) or abs(mu) > 10 * (1 + abs(zz).sum()):
            raise DomainError(f"complex root for z=i{zz.tolist()} escaped")
        if abs(step) < 1e-15 * (1 + abs(mu)):
            break
    terms = law.W * np.exp(phase - mu * law.L)
    if abs(terms.sum() - 1.0) > 1e-10:
        raise DomainError(f"complex root for z=i{zz.tolist()} did not converge")
    if np.isfinite(law.nu_hat):
        rate = _tilted_tail_rate(law, terms)
        if not rate > 0:
            raise DomainError(f"z=i{zz.tolist()} is outside the region where the truncated sum decays")
    return complex(mu)


@dataclass(frozen=True)
class SpeedDiffusivity:
    v: np.ndarray
    Sigma: np.ndarray
    kappa0: float
    singular: bool
    eigenvalues: np.ndarray

    def __iter__(self):
        return iter((self.v, self.Sigma, self.kappa0))


def speed_and_diffusivity(law, rcond=1e-12):
    """``v = E[x]/E[n]``, ``Sigma = E[(x-nv)(x-nv)^T]/E[n]``, ``kappa0 = E[n]``.

    ``singular`` flags a Hessian with an eigenvalue below ``rcond`` times the
    largest one.
    """
    mass = law.mass()
    En = float(law.W @ law.L) / mass
    Ex = (law.W @ law.X) / mass
    v = Ex / En
    c = law.X - law.L[:, None] * v
    Sigma = (c * law.W[:, None]).T @ c / mass / En
    Sigma = 0.5 * (Sigma + Sigma.T)
    eig = np.linalg.eigvalsh(Sigma)
    singular = bool(eig.min() <= rcond * max(eig.max(), 0.0)) if eig.size else True
    return SpeedDiffusivity(v, Sigma, En, singular, eig)


def _fd_hessian(law, step):
    D = law.dims
    E = np.eye(D) * step
    hess = np.zeros((D, D))
    for i in range(D):
        for j in range(D):
            hess[i, j] = (
                mu_of_z(law, E[i] + E[j])
                - mu_of_z(law, E[i] - E[j])
                - mu_of_z(law, -E[i] + E[j])
                + mu_of_z(law, -E[i] - E[j])
            ) / (4 * step * step)
    return hess


def finite_difference_derivatives(law, step=1e-4, hessian_step=1e-3):
    """Central differences of ``mu`` at 0: gradient and Hessian.

    The Hessian uses one Richardson step (``hessian_step`` and half of it),
    which removes the leading ``O(step^2)`` error.
    """
    D = law.dims
    E = np.eye(D) * step
    grad = np.array([(mu_of_z(law, E[i]) - mu_of_z(law, -E[i])) / (2 * step) for i in range(D)])
    coarse = _fd_hessian(law, hessian_step)
    fine = _fd_hessian(law, hessian_step / 2)
    return grad, (4 * fine - coarse) / 3


@dataclass(frozen=True)
class RenewalMass:
    tbar: np.ndarray
    error: np.ndarray
    kappa0: float
    decay_rate: float

    def to_dict(self):
        return {"tbar": self.tbar, "error": self.error, "kappa0": self.kappa0, "decay_rate": self.decay_rate}


def renewal_sequence(fbar, n):
    """``t_k = sum_{m=1}^{k} f_m t_{k-m}``, ``t_0 = 1``, for ``k = 0..n`` (real or complex ``f``)."""
    f = np.asarray(fbar)
    t = np.zeros(n + 1, dtype=f.dtype if np.iscomplexobj(f) else float)
    t[0] = 1.0
    top = len(f) - 1
    for k in range(1, n + 1):
        m = np.arange(1, min(k, top) + 1)
        t[k] = (f[m] * t[k - m]).sum()
    return t


def renewal_mass(law, n):
    """Scalar renewal ``t_n`` with ``|t_n kappa0 - 1|`` and its fitted decay rate.

    The step masses are renormalised to sum exactly to one first so the
    error is not dominated by the root-solve residual.
    """
    n = check_nonneg_int(n, "n", minimum=1)
    f = law.totals()
    f = f / f.sum()
    tb = renewal_sequence(f, n)
    kappa0 = float((np.arange(len(f)) * f).sum())
    err = np.abs(tb * kappa0 - 1.0)
    ks = np.arange(n + 1)
    # points at the round-off floor carry no information about the rate
    ok = (ks >= 1) & (err > 1e-12)
    rate = math.nan
    if ok.sum() >= 2:
        slope = np.polyfit(ks[ok], np.log(err[ok]), 1)[0]
        rate = float(-slope)
    return RenewalMass(tb, err, kappa0, rate)


@dataclass(frozen=True)
class CLTCheck:
    alphas: np.ndarray
    ns: np.ndarray
    deviation: np.ndarray  # (len(alphas), len(ns))
    values: np.ndarray = field(repr=False)  # complex S_n(alpha/sqrt n)
    slopes: np.ndarray = None
    decreasing: np.ndarray = None

    def to_dict(self):
        return {
            "alphas": self.alphas,
            "ns": self.ns,
            "deviation": self.deviation,
            "slopes": self.slopes,
            "decreasing": self.decreasing,
        }


def annealed_clt_check(law, alphas, ns, v=None, Sigma=None, kappa0=None):
    """``|kappa0 S_n(alpha/sqrt n) - exp(-alpha.Sigma alpha / 2)|`` on a grid.

    ``S_n(theta) = exp(-i theta.v n) T_n(theta)`` where ``T`` solves the scalar
    renewal with step transform ``F_m(theta)``.  Slopes are log-log fits of
    the deviation against ``n``.
    """
    sd = speed_and_diffusivity(law)
    v = sd.v if v is None else np.asarray(v, dtype=float)
    Sigma = sd.Sigma if Sigma is None else np.asarray(Sigma, dtype=float)
    kappa0 = sd.kappa0 if kappa0 is None else float(kappa0)
    A = np.atleast_2d(np.asarray(alphas, dtype=float))
    ns = np.asarray(ns, dtype=int)
    dev = np.zeros((len(A), len(ns)))
    vals = np.zeros((len(A), len(ns)), dtype=complex)
    for i, a in enumerate(A):
        target = math.exp(-0.5 * float(a @ Sigma @ a))
        for j, n in enumerate(ns):
            theta = a / math.sqrt(n)
            T = renewal_sequence(law.char_totals(theta), int(n))[-1]
            S = np.exp(-1j * n * float(theta @ v)) * T
            vals[i, j] = S
            dev[i, j] = abs(kappa0 * S - target)
    slopes = np.full(len(A), math.nan)
    if len(ns) >= 2:
        for i in range(len(A)):
            if np.all(dev[i] > 0):
                slopes[i] = np.polyfit(np.log(ns), np.log(dev[i]), 1)[0]
    decreasing = np.all(np.diff(dev, axis=1) < 0, axis=1)
    return CLTCheck(A, ns, dev, vals, slopes, decreasing)


def lattice_tbar(law, n_max):
    """``t_{x,n}`` for ``n <= n_max`` by the lattice renewal convolution.

    Returns dense arrays over the L-infinity ball of radius ``n_max``.  The
    convolution is carried out as explicit shifted sums over the support of
    ``f``, so entries are exact non-negative sums (no FFT round-off).
    """
    n_max = check_nonneg_int(n_max, "n_max", minimum=1)
    D = law.dims
    R = n_max
    side = 2 * R + 1
    out = [np.zeros((side,) * D) for _ in range(n_max + 1)]
    out[0][(R,) * D] = 1.0
    steps = {}
    for x, m, w in zip(law.X.astype(int), law.L.astype(int), law.W):
        if m <= n_max and w > 0:
            steps.setdefault(m, []).append((tuple(x), w))
    for n in range(1, n_max + 1):
        acc = out[n]
        for m, items in steps.items():
            if m > n:
                continue
            src = out[n - m]
            for y, w in items:
                dst_sl, src_sl = [], []
                for c in y:
                    if c >= 0:
                        dst_sl.append(slice(c, side))
                        src_sl.append(slice(0, side - c))
                    else:
                        dst_sl.append(slice(0, side + c))
                        src_sl.append(slice(-c, side))
                acc[tuple(dst_sl)] += w * src[tuple(src_sl)]
    return out


@dataclass(frozen=True)
class LocalBound:
    c: float
    argmin: tuple
    entries: int

    def to_dict(self):
        return {"c": self.c, "argmin": list(self.argmin), "entries": self.entries}


def local_bound_check(tbar, v, n_range=None):
    """Largest ``c`` with ``t_{x,n} <= exp(-c |x - nv|^2 / n) / (c n^{D/2})`` on the table.

    ``tbar`` is the list from :func:`lattice_tbar`.  For one entry the
    admissible ``c`` satisfy ``c exp(c r) <= K`` with ``r = |x-nv|^2/n`` and
    ``K = 1/(n^{D/2} t)``, so the largest is ``W(r K)/r`` (Lambert W), or ``K``
    at ``r = 0``.  Zero entries impose nothing.
    """
    R = (tbar[0].shape[0] - 1) // 2
    D = tbar[0].ndim
    v = np.asarray(v, dtype=float)
    grid = np.stack(np.meshgrid(*([np.arange(-R, R + 1)] * D), indexing="ij"), axis=-1)
    lo, hi = (1, len(tbar) - 1) if n_range is None else n_range
    best, where, count = math.inf, None, 0
    for n in range(max(1, lo), min(hi, len(tbar) - 1) + 1):
        t = tbar[n]
        mask = t > 0
        if not mask.any():
            continue
        x = grid[mask]
        tv = t[mask]
        r = ((x - n * v) ** 2).sum(axis=1) / n
        K = 1.0 / (n ** (D / 2) * tv)
        c = np.where(r > 0, lambertw(r * K).real / np.where(r > 0, r, 1.0), K)
        k = int(np.argmin(c))
        count += int(mask.sum())
        if c[k] < best:
            best, where = float(c[k]), (tuple(int(a) for a in x[k]), n)
    return LocalBound(best, where, count)


# ---------------------------------------------------------------------------
# estimator


class RenewalModel(BaseEstimator):
    """Fit the annealed renewal quantities from a raw irreducible table.

    Parameters
    ----------
    horizon : int, optional
        Truncation length ``N``; defaults to the table's largest length.
    tol : float
        Target ``|G(lambda) - 1|`` for the root solve.

    Attributes
    ----------
    lambda_, law_, v_, Sigma_, kappa0_, nu_hat_, truncation_bound_, sigma_singular_
    """

    def __init__(self, horizon=None, tol=1e-12):
        self.horizon = horizon
        self.tol = tol

    def fit(self, X, y=None):
        if not isinstance(X, WeightTable) or X.kind != KIND_F:
            raise ValidationError("RenewalModel.fit expects a raw irreducible WeightTable")
        if X.lambda_shift != 0:
            X = X.shifted(0.0)
        sol = solve_lambda(X, self.horizon, self.tol)
        table = X
        if self.horizon is not None and self.horizon < X.n_max:
            from dataclasses import replace

            table = replace(X, data={n: d for n, d in X.data.items() if n <= self.horizon})
        law = IrreducibleLaw.from_table(table, sol.lam, sol.nu_hat)
        sd = speed_and_diffusivity(law)
        self.table_ = table
        self.solution_ = sol
        self.lambda_ = sol.lam
        self.law_ = law
        self.nu_hat_ = sol.nu_hat
        self.horizon_ = sol.horizon
        self.truncation_bound_ = sol.truncation_bound
        self.v_ = sd.v
        self.Sigma_ = sd.Sigma
        self.kappa0_ = sd.kappa0
        self.sigma_singular_ = sd.singular
        return self

    def mu(self, z):
        check_is_fitted(self, "law_")
        return mu_of_z(self.law_, z)

    def predict(self, n):
        """Annealed renewal mass ``t_n`` for each requested length."""
        check_is_fitted(self, "law_")
        ns = np.atleast_1d(np.asarray(n, dtype=int))
        seq = renewal_sequence(self.law_.totals(), int(ns.max()))
        return seq[ns]

    def to_dict(self):
        check_is_fitted(self, "law_")
        return {
            "lambda": self.lambda_,
            "v": self.v_,
            "Sigma": self.Sigma_,
            "kappa0": self.kappa0_,
            "nu_hat": self.nu_hat_,
            "horizon": self.horizon_,
            "truncation_bound": self.truncation_bound_,
            "sigma_singular": self.sigma_singular_,
            "lambda_residual": self.solution_.residual,
            "provenance": self.law_.provenance,
        }

    def to_json(self):
        return dumps(self.to_dict())

    @classmethod
    def summary_from_json(cls, text):
        return json.loads(text)


def irreducible_table(law, dims, h, beta, N, cone=None, method="enumerate"):
    """Raw annealed irreducible table by enumeration or by the cone recursion.

    ``method="cone-dp"`` runs :func:`stretchpoly.transfer.cone_dp_t` and
    deconvolves; it needs a linear ``phi_beta`` but reaches much larger ``N``.
    """
    law = parse_law(law)
    cone = ConeSpec.make(h, dims=dims) if cone is None else cone
    if method == "enumerate":
        return enumerate_basic(law, cone, h, beta, 0.0, N, dims=dims)[1]
    if method == "cone-dp":
        from .transfer import cone_dp_t

        return irreducible_from_confined(cone_dp_t(law, cone, h, beta, N, dims=dims))
    raise ValidationError(f"unknown method {method!r}; use 'enumerate' or 'cone-dp'")


def fit_renewal(law, dims, h, beta, N, cone=None, method="enumerate"):
    """Convenience: build the raw table and fit a :class:`RenewalModel`."""
    return RenewalModel().fit(irreducible_table(law, dims, h, beta, N, cone, method))
