"""Polyconvex, frame-indifferent stored energies and the mixture ansatz.

Each phase energy is an isotropic polyconvex core evaluated at the elastic
part ``G = F U^{-1}`` of the deformation gradient::

    W_a(F) = mu_a |G|^2 + c1 |G|^p + c2 (det G)^r
             + c3 |G|^(2q) / (det G)^q - c4_a log det G - w0

with ``w0 = c1 2^(p/2) + c2 + c3 2^q`` the value of the non-``mu`` terms at
``G = I``, so ``W_a(R U_a) = 2 mu_a`` for every rotation ``R``.  The
component vector ``z in R^h`` mixes ``h + 1`` phase energies::

    W(F, z) = sum_i z_i^+ W_i(F) + (1 - sum_i z_i)^+ W_{h+1}(F)

``W = +inf`` whenever ``det F <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import det_cof


@dataclass(frozen=True, eq=False)
class StoredEnergySpec:
    mu: np.ndarray
    prestrain: np.ndarray
    c1: float = 0.1
    c2: float = 0.5
    c3: float = 0.5
    c4: np.ndarray | float = 0.0
    p: float = 4.0
    r: float = 2.0
    q: float = 2.0
    _inv: np.ndarray = field(init=False, repr=False)
    _detU: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        U = np.asarray(self.prestrain, dtype=float).reshape(len(mu), 2, 2)
        c4 = np.broadcast_to(np.asarray(self.c4, dtype=float), mu.shape).copy()
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "prestrain", U)
        object.__setattr__(self, "c4", c4)
        if len(mu) < 2:
            raise ValueError("need at least two phase energies (h >= 1)")
        if not np.allclose(U, np.swapaxes(U, -1, -2)):
            raise ValueError("prestrain matrices must be symmetric")
        detU = np.linalg.det(U)
        if np.any(detU <= 0):
            raise ValueError("prestrain matrices must have positive determinant")
        if min(self.c1, self.c2, self.c3) <= 0 or np.any(c4 < 0) or np.any(mu < 0):
            raise ValueError("c1, c2, c3 must be positive; c4 and mu nonnegative")
        if not (self.p >= 2 and self.r > 1 and self.q > 1):
            raise ValueError("exponents must satisfy p >= 2, r > 1, q > 1")
        object.__setattr__(self, "_inv", np.linalg.inv(U))
        object.__setattr__(self, "_detU", detU)

    @classmethod
    def stationary(cls, mu, prestrain, c1=0.1, c2=0.5, c3=0.5, p=4.0, r=2.0, q=2.0):
        """Choose ``c4_a`` so that ``F = U_a`` is a stress-free state of
        ``W_a``; the distortion term is already stationary at conformal
        ``G``."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        c4 = 2.0 * mu + p * c1 * 2.0 ** ((p - 2) / 2) + r * c2
        return cls(mu, prestrain, c1, c2, c3, c4, p, r, q)

    @property
    def h(self) -> int:
        return len(self.mu) - 1

    @property
    def w0(self) -> float:
        return self.c1 * 2.0 ** (self.p / 2) + self.c2 + self.c3 * 2.0**self.q

    def well_minimum(self, alpha: int) -> float:
        """``W_alpha`` at ``F = R U_alpha``."""
        return 2.0 * float(self.mu[alpha])

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "prestrain": self.prestrain.tolist(),
            "c1": self.c1, "c2": self.c2, "c3": self.c3,
            "c4": self.c4.tolist(),
            "p": self.p, "r": self.r, "q": self.q,
        }

    # -- phase energies ----------------------------------------------
    def _elastic(self, F, alpha):
        G = F @ self._inv[alpha]
        detG = det_cof(F)[0] / self._detU[alpha]
        return G, detG

    def phase_energy(self, F, alpha: int):
        F = np.asarray(F, dtype=float)
        G, detG = self._elastic(F, alpha)
        ok = detG > 0
        t = np.where(ok, detG, 1.0)
        g2 = np.sum(G**2, axis=(-2, -1))
        val = (
            self.mu[alpha] * g2
            + self.c1 * g2 ** (self.p / 2)
            + self.c2 * t**self.r
            + self.c3 * (g2 / t) ** self.q
            - self.c4[alpha] * np.log(t)
            - self.w0
        )
        return np.where(ok, val, np.inf)

    def phase_energy_grad(self, F, alpha: int):
        F = np.asarray(F, dtype=float)
        G, detG = self._elastic(F, alpha)
        if np.any(detG <= 0):
            raise ValueError("dW/dF undefined for det F <= 0")
        _, cofG = det_cof(G)
        g2 = np.sum(G**2, axis=(-2, -1))[..., None, None]
        t = detG[..., None, None]
        K = g2 / t
        dG = (
            2.0 * self.mu[alpha] * G
            + self.c1 * self.p * g2 ** (self.p / 2 - 1) * G
            + self.c2 * self.r * t ** (self.r - 1) * cofG
            + self.c3 * self.q * K ** (self.q - 1) * (2.0 * G / t - g2 / t**2 * cofG)
            - self.c4[alpha] * cofG / t
        )
        return dG @ self._inv[alpha].T

    # -- mixture -------------------------------------------------------
    def weights(self, z):
        """Mixture weights (..., h+1) and their derivative signs."""
        z = np.asarray(z, dtype=float)
        rest = 1.0 - np.sum(z, axis=-1, keepdims=True)
        w = np.concatenate([np.maximum(z, 0.0), np.maximum(rest, 0.0)], axis=-1)
        return w


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def eval_W(spec: StoredEnergySpec, F, z):
    """Mixture energy; ``+inf`` where ``det F <= 0``."""
    F = np.asarray(F, dtype=float)
    z = np.asarray(z, dtype=float)
    _check_finite(F, z)
    w = spec.weights(z)
    det = det_cof(F)[0]
    out = np.zeros(np.broadcast_shapes(F.shape[:-2], z.shape[:-1]))
    for a in range(spec.h + 1):
        wa = w[..., a]
        # zero weight must not turn an infinite phase energy into nan
        ea = spec.phase_energy(F, a)
        out = out + np.where(wa > 0, wa * np.where(np.isfinite(ea), ea, 0.0), 0.0)
    out = np.where(det > 0, out, np.inf)
    return float(out) if out.ndim == 0 else out


def dW_dF(spec: StoredEnergySpec, F, z):
    F = np.asarray(F, dtype=float)
    z = np.asarray(z, dtype=float)
    _check_finite(F, z)
    w = spec.weights(z)
    out = 0.0
    for a in range(spec.h + 1):
        out = out + w[..., a, None, None] * spec.phase_energy_grad(F, a)
    return out


def dW_dz(spec: StoredEnergySpec, F, z):
    """Derivative in ``z`` of the piecewise-linear mixture (one-sided at
    the kinks, taking the branch with positive weight)."""
    F = np.asarray(F, dtype=float)
    z = np.asarray(z, dtype=float)
    energies = np.stack([spec.phase_energy(F, a) for a in range(spec.h + 1)], axis=-1)
    rest = 1.0 - np.sum(z, axis=-1, keepdims=True)
    pos = (z > 0).astype(float)
    rest_pos = (rest > 0).astype(float)
    return pos * energies[..., :-1] - rest_pos * energies[..., -1:]


def frame_indifference_check(spec: StoredEnergySpec, samples: int = 1000, seed: int = 0,
                             rotation=None) -> float:
    """Largest ``|W(RF, z) - W(F, z)|`` over random states."""
    rng = np.random.default_rng(seed)
    F = random_positive_F(rng, samples)
    z = rng.uniform(-0.5, 1.5, size=(samples, spec.h))
    if rotation is None:
        theta = rng.uniform(0, 2 * np.pi, samples)
        c, s = np.cos(theta), np.sin(theta)
        Rm = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    else:
        Rm = np.broadcast_to(np.asarray(rotation, dtype=float), (samples, 2, 2))
    return float(np.max(np.abs(eval_W(spec, Rm @ F, z) - eval_W(spec, F, z))))


def random_positive_F(rng, n, det_range=(0.3, 3.0), stretch=(0.5, 2.0)):
    """Random 2x2 matrices ``R1 diag(s1, s2) R2`` with bounded anisotropy
    and determinant drawn from ``det_range``."""
    def rot(theta):
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

    a = rng.uniform(*stretch, size=n)
    det = rng.uniform(*det_range, size=n)
    sv = np.zeros((n, 2, 2))
    sv[:, 0, 0] = a * np.sqrt(det)
    sv[:, 1, 1] = np.sqrt(det) / a
    return rot(rng.uniform(0, 2 * np.pi, n)) @ sv @ rot(rng.uniform(0, 2 * np.pi, n))


def coercivity_constant(spec: StoredEnergySpec, R: float) -> float:
    """A constant ``C`` with ``W >= C (|F|^p + det^r + |F|^4/det^2...) - 1/C``
    for all ``|z| <= R``.

    Per phase, ``|G| >= |F| / |U|_op`` and ``det G = det F / det U``; half of
    the ``c2`` term absorbs the log barrier.  The mixture weights sum to at
    least 1 and at most ``S = 1 + 2 sqrt(h) R``, so ``C`` is divided by ``S``.
    """
    consts = []
    lows = []
    for a in range(spec.h + 1):
        kappa = np.linalg.norm(spec.prestrain[a], 2)
        dU = spec._detU[a]
        A1 = spec.c1 * kappa ** (-spec.p)
        A2 = 0.5 * spec.c2 * dU ** (-spec.r)
        A3 = spec.c3 * (dU / kappa**2) ** spec.q
        c4 = spec.c4[a]
        m = 0.0 if c4 == 0 else (c4 / spec.r) * (1.0 - np.log(2.0 * c4 / (spec.c2 * spec.r)))
        consts.append(min(A1, A2, A3))
        lows.append(m - spec.w0)
    C = min(consts)
    deficit = max(-min(lows), 1e-12)
    C = min(C, 1.0 / deficit)
    S = 1.0 + 2.0 * np.sqrt(spec.h) * R
    return C / S


def coercivity_check(spec: StoredEnergySpec, samples: int = 10_000, R: float = 1.5,
                     seed: int = 0, F=None, z=None) -> float:
    """Smallest ``W - (C (|F|^p + det^r + |F|^(2q)/det^q) - 1/C)``."""
    rng = np.random.default_rng(seed)
    if F is None:
        F = random_positive_F(rng, samples, det_range=(1e-6, 5.0))
    if z is None:
        z = rng.normal(size=(len(F), spec.h))
        z *= (rng.uniform(0, R, len(F)) / np.maximum(np.linalg.norm(z, axis=1), 1e-12))[:, None]
    F = np.asarray(F, dtype=float).reshape(-1, 2, 2)
    z = np.asarray(z, dtype=float).reshape(-1, spec.h)
    C = coercivity_constant(spec, R)
    det = np.linalg.det(F)
    f2 = np.sum(F**2, axis=(-2, -1))
    bound = C * (f2 ** (spec.p / 2) + det**spec.r + (f2 / det) ** spec.q) - 1.0 / C
    return float(np.min(eval_W(spec, F, z) - bound))


def convexity_checks(spec: StoredEnergySpec, samples: int = 1000, seed: int = 0) -> dict:
    """Midpoint convexity of each term on random segments in (F, det)
    space, with ``det`` treated as an independent positive variable.

    Returns the worst ``f(mid) - (f(a) + f(b)) / 2`` per term (<= 0 when
    convex, up to round-off).
    """
    rng = np.random.default_rng(seed)
    Fa = rng.normal(size=(samples, 2, 2))
    Fb = rng.normal(size=(samples, 2, 2))
    ta = rng.uniform(0.05, 3.0, samples)
    tb = rng.uniform(0.05, 3.0, samples)
    Uinv = spec._inv[-1]

    def fro2(F):
        return np.sum((F @ Uinv) ** 2, axis=(-2, -1))

    terms = {
        "mu": lambda F, t: fro2(F),
        "power_p": lambda F, t: fro2(F) ** (spec.p / 2),
        "det_r": lambda F, t: t**spec.r,
        "distortion": lambda F, t: (fro2(F) / t) ** spec.q,
        "log_barrier": lambda F, t: -np.log(t),
    }
    out = {}
    for name, f in terms.items():
        mid = f(0.5 * (Fa + Fb), 0.5 * (ta + tb))
        gap = mid - 0.5 * (f(Fa, ta) + f(Fb, tb))
        scale = np.maximum(1.0, np.abs(mid))
        out[name] = float(np.max(gap / scale))
    return out
