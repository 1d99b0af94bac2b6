"""Transceiver designers: SVD, CBD, GMD and GP-CBD, plus power allocation.

A design maps a channel ``H`` to a precoder ``F = P Phi^(1/2)``, a
post-processor ``Q^H`` and the real equivalent channel seen by the detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .detect import Constellation
from .linalg import (
    BidiagonalReal,
    Decomposition,
    as_matrix,
    assemble_permuted,
    givens_pair,
    gmd,
    householder_bidiagonalize,
    svd,
)

__all__ = [
    "NU_DEFAULT",
    "SIGMA_FLOOR",
    "NoiseModel",
    "PairingPlan",
    "PowerAllocation",
    "TransceiverDesign",
    "gap_function",
    "theorem2_diagonals",
    "compute_pairing",
    "clamp_singular_values",
    "condition_ratio",
    "threshold_root",
    "design_svd_mmse",
    "design_cbd",
    "design_gmd",
    "design_gp_cbd",
    "design",
    "waterfilling",
    "mercury_waterfilling",
    "qam_mmse",
    "SCHEME_NAMES",
    "POWER_POLICIES",
]

NU_DEFAULT = 1.7
SIGMA_FLOOR = 1e-12
LN2 = math.log(2.0)

# CLI name -> decomposition tag
SCHEME_NAMES = {"svd": "SVD", "cbd": "CBD", "gmd": "GMD", "gpcbd": "GP-CBD"}
POWER_POLICIES = {"uniform": "Uniform", "wf": "WaterFilling", "mwf": "MercuryWF"}


@dataclass(frozen=True)
class NoiseModel:
    sigma2_z: float

    def __post_init__(self):
        if not self.sigma2_z > 0 or not math.isfinite(self.sigma2_z):
            raise ValueError(f"noise power must be positive and finite, got {self.sigma2_z}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "NoiseModel":
        return cls(10.0 ** (-float(snr_db) / 10.0))

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(1.0 / self.sigma2_z)


@dataclass(frozen=True)
class PairingPlan:
    """Output of the cutoff search: 1-based ``pairs`` (hi, lo) and ``singletons``."""

    cutoff_n: int
    pairs: tuple[tuple[int, int], ...]
    singletons: tuple[int, ...]

    def __post_init__(self):
        seen = [i for p in self.pairs for i in p] + list(self.singletons)
        n_s = len(seen)
        if sorted(seen) != list(range(1, n_s + 1)):
            raise ValueError(f"pairs and singletons must partition 1..{n_s}: {seen}")
        if not 0 <= self.cutoff_n <= n_s:
            raise ValueError(f"cutoff {self.cutoff_n} outside [0, {n_s}]")
        for i, j in self.pairs:
            if not i < j <= self.cutoff_n:
                raise ValueError(f"pair {(i, j)} must satisfy i < j <= N={self.cutoff_n}")

    @classmethod
    def from_cutoff(cls, n: int, n_s: int) -> "PairingPlan":
        pairs = tuple((k, n - k + 1) for k in range(1, n // 2 + 1))
        used = {i for p in pairs for i in p}
        singles = tuple(i for i in range(1, n_s + 1) if i not in used)
        return cls(n, pairs, singles)

    @property
    def n_s(self) -> int:
        return 2 * len(self.pairs) + len(self.singletons)


@dataclass(frozen=True)
class PowerAllocation:
    phi: np.ndarray
    policy: str = "Uniform"
    quadrature_ok: bool = True

    @classmethod
    def uniform(cls, n_s: int) -> "PowerAllocation":
        return cls(np.ones(n_s), "Uniform")


@dataclass(frozen=True)
class TransceiverDesign:
    decomposition: Decomposition
    power: PowerAllocation
    scheme: str
    eccn: float
    noise: NoiseModel
    mu_per_pair: tuple[float, ...] = ()
    plan: Optional[PairingPlan] = None
    floor_clamped: bool = False

    @property
    def n_s(self) -> int:
        return self.decomposition.n_s

    @property
    def b(self) -> Optional[BidiagonalReal]:
        return self.decomposition.b

    def effective(self) -> BidiagonalReal:
        """Equivalent channel including power loading, ``B Phi^(1/2)``."""
        if self.decomposition.b is None:
            raise ValueError(f"{self.scheme} design has no bidiagonal equivalent channel")
        return self.decomposition.b.scale_columns(np.sqrt(self.power.phi))

    def precoder(self) -> np.ndarray:
        return self.decomposition.p * np.sqrt(self.power.phi)[None, :]

    def postprocessor(self) -> np.ndarray:
        """``Q^H`` restricted to the ``N_s`` streams."""
        return self.decomposition.q[:, : self.n_s].conj().T

    def post_snr(self) -> np.ndarray:
        """Per-layer post-processing SNR ``B_ii^2 phi_i / sigma2_z``."""
        return self.decomposition.diag**2 * self.power.phi / self.noise.sigma2_z


def clamp_singular_values(sigma) -> tuple[np.ndarray, bool]:
    """Raise entries below ``SIGMA_FLOOR * max`` to that floor; report whether any moved."""
    s = np.asarray(sigma, dtype=float)
    if s.size == 0 or s.max() <= 0:
        return s.copy(), False
    floor = SIGMA_FLOOR * s.max()
    return np.maximum(s, floor), bool(np.any(s < floor))


def condition_ratio(diag) -> tuple[float, bool]:
    d, clamped = clamp_singular_values(np.abs(diag))
    if d.max() <= 0:
        return 1.0, clamped
    return float(d.max() / d.min()), clamped


def gap_function(x, mu):
    """``log2(1 + e^-x) + log2(1 + e^(-mu/x))`` evaluated without overflow."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(x <= 0) or np.any(mu <= 0):
        raise ValueError("gap function needs x > 0 and mu > 0")
    g = (np.logaddexp(0.0, -x) + np.logaddexp(0.0, -mu / x)) / LN2
    return float(g) if g.ndim == 0 else g


def threshold_root() -> float:
    """Root ``t`` of ``e^t - (1 + e^t) / t = 0``; ``t^2`` is where the stationary point turns minimum."""
    return brentq(lambda t: math.exp(t) - (1.0 + math.exp(t)) / t, 0.5, 5.0, xtol=1e-15)


def _pair_mu(lam_a: float, lam_b: float, sigma2: float, d2: float) -> float:
    return (d2 * lam_a**2 / sigma2) * (d2 * lam_b**2 / sigma2)


def _golden_min(f, a: float, b: float, tol: float) -> float:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def theorem2_diagonals(lambda_hi: float, lambda_lo: float, noise: NoiseModel, c: Constellation,
                       nu: float = NU_DEFAULT) -> tuple[float, float]:
    """Diagonal entries ``(b11, b22)`` of the rotated 2x2 block for one pair.

    Equal diagonals ``sqrt(lambda_hi * lambda_lo)`` when the pair is well
    conditioned (``mu >= nu``); otherwise a 1-D search of the gap function over
    ``x = b11^2 d2_min / sigma2`` in ``[sqrt(mu), lambda_hi^2 d2_min / sigma2]``.
    """
    hi, lo = float(lambda_hi), float(lambda_lo)
    if not (hi >= lo > 0):
        raise ValueError(f"need lambda_hi >= lambda_lo > 0, got ({hi}, {lo})")
    prod = hi * lo
    if hi == lo:
        return hi, lo
    s2, d2 = noise.sigma2_z, c.d2_min
    mu = _pair_mu(hi, lo, s2, d2)
    if mu >= nu:
        g = math.sqrt(prod)
        return g, g
    x_lo, x_hi = math.sqrt(mu), hi**2 * d2 / s2
    span = x_hi - x_lo
    if span <= 0:
        g = math.sqrt(prod)
        return g, g
    grid = np.geomspace(x_lo, x_hi, 1025)
    vals = gap_function(grid, mu)
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    x_star = _golden_min(lambda x: gap_function(x, mu), a, b, 1e-9 * span)
    # golden section never evaluates the bracket ends; keep them if they win
    cands = [x_star, grid[k]]
    x_star = min(cands, key=lambda x: gap_function(x, mu))
    b11 = math.sqrt(x_star * s2 / d2)
    b11 = min(max(b11, math.sqrt(prod)), hi)
    return b11, prod / b11


def compute_pairing(sigma, noise: NoiseModel, c: Constellation, nu: float = NU_DEFAULT) -> PairingPlan:
    """Cutoff ``N`` = (first ``m`` with ``mu(lambda_1, lambda_m) < nu``) - 1, paired as ``(n, N-n+1)``.

    If no ``m`` breaks the loop every subchannel is kept (``N = N_s``).
    """
    s, _ = clamp_singular_values(sigma)
    if s.size > 1 and np.any(np.diff(s) > 0):
        raise ValueError("singular values must be sorted descending")
    n_s = s.size
    n = n_s
    for m in range(1, n_s + 1):
        if _pair_mu(s[0], s[m - 1], noise.sigma2_z, c.d2_min) < nu:
            n = m - 1
            break
    return PairingPlan.from_cutoff(n, n_s)


def _allocate(policy: str, gains, noise: NoiseModel, c: Optional[Constellation]) -> PowerAllocation:
    gains = np.asarray(gains, dtype=float)
    n_s = gains.size
    key = policy.lower()
    if key in ("uniform", "Uniform".lower()):
        return PowerAllocation.uniform(n_s)
    if key in ("wf", "waterfilling"):
        return waterfilling(gains, noise, float(n_s))
    if key in ("mwf", "mercurywf"):
        if c is None:
            raise ValueError("mercury water-filling needs the constellation")
        return mercury_waterfilling(gains, noise, c, float(n_s))
    raise ValueError(f"unknown power policy {policy!r}")


def _finish(dec: Decomposition, scheme: str, noise, c, power, mu=(), plan=None, clamped=False):
    pa = _allocate(power, dec.diag, noise, c)
    eccn, clamped_diag = condition_ratio(dec.diag)
    return TransceiverDesign(dec, pa, scheme, eccn, noise, tuple(mu), plan, clamped or clamped_diag)


def design_svd_mmse(h, noise: NoiseModel, c: Optional[Constellation] = None, power: str = "uniform") -> TransceiverDesign:
    f = svd(h)
    b = BidiagonalReal.diagonal(f.sigma)
    dec = Decomposition(q=f.u, p=f.v, scheme="SVD", b=b, sigma=f.sigma)
    return _finish(dec, "SVD", noise, c, power)


def design_cbd(h, noise: NoiseModel, c: Optional[Constellation] = None, power: str = "uniform") -> TransceiverDesign:
    return _finish(householder_bidiagonalize(h), "CBD", noise, c, power)


def design_gmd(h, noise: NoiseModel, c: Optional[Constellation] = None, power: str = "uniform") -> TransceiverDesign:
    return _finish(gmd(h), "GMD", noise, c, power)


def design_gp_cbd(h, noise: NoiseModel, c: Constellation, power: str = "uniform",
                  nu: float = NU_DEFAULT) -> TransceiverDesign:
    """GP-CBD: pair eigen-subchannels, rotate each pair into a 2x2 bidiagonal block."""
    a = as_matrix(h)
    f = svd(a)
    n_s = f.n_s
    plan = compute_pairing(f.sigma, noise, c, nu)
    u_t, lam_t, v_t = assemble_permuted(f, plan)
    q = u_t.copy()
    p = v_t.copy()
    diag = lam_t.astype(float).copy()
    sup = np.zeros(n_s - 1)
    mus = []
    for t, _ in enumerate(plan.pairs):
        k = 2 * t
        hi, lo = lam_t[k], lam_t[k + 1]
        mus.append(_pair_mu(hi, lo, noise.sigma2_z, c.d2_min))
        b11, _ = theorem2_diagonals(hi, lo, noise, c, nu)
        g_left, g_right, blk = givens_pair(hi, lo, b11)
        idx = [k, k + 1]
        q[:, idx] = u_t[:, idx] @ g_left.T
        p[:, idx] = v_t[:, idx] @ g_right
        diag[idx] = blk.diag
        sup[k] = blk.superdiag[0]
    bounds = tuple(i for i in range(n_s - 1) if sup[i] == 0.0)
    b = BidiagonalReal(diag, sup, bounds)
    _, clamped = clamp_singular_values(f.sigma)
    dec = Decomposition(q=q, p=p, scheme="GP-CBD", b=b, sigma=f.sigma)
    return _finish(dec, "GP-CBD", noise, c, power, mus, plan, clamped)


def design(scheme: str, h, noise: NoiseModel, c: Constellation, power: str = "uniform",
           nu: float = NU_DEFAULT) -> TransceiverDesign:
    """Dispatch on a CLI scheme name (``svd``, ``cbd``, ``gmd``, ``gpcbd``)."""
    key = scheme.lower()
    if key == "svd":
        return design_svd_mmse(h, noise, c, power)
    if key == "cbd":
        return design_cbd(h, noise, c, power)
    if key == "gmd":
        return design_gmd(h, noise, c, power)
    if key == "gpcbd":
        return design_gp_cbd(h, noise, c, power, nu)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(SCHEME_NAMES)}")


# --- power allocation -------------------------------------------------------

def waterfilling(sigma, noise: NoiseModel, total: float) -> PowerAllocation:
    """Classic water-filling ``phi_i = max(0, w - sigma2 / lambda_i^2)`` with ``sum phi = total``."""
    lam = np.asarray(sigma, dtype=float)
    if total <= 0:
        raise ValueError("total power must be positive")
    if not np.any(lam > 0):
        raise ValueError("water-filling needs at least one positive gain")
    with np.errstate(divide="ignore"):
        inv = np.where(lam > 0, noise.sigma2_z / lam**2, np.inf)

    def spent(w):
        return float(np.sum(np.clip(w - inv, 0.0, None)))

    lo, hi = float(np.min(inv)), float(np.min(inv)) + total
    for _ in range(200):
        w = 0.5 * (lo + hi)
        if spent(w) < total:
            lo = w
        else:
            hi = w
        if hi - lo <= 1e-15 * hi:
            break
    w = 0.5 * (lo + hi)
    phi = np.clip(w - inv, 0.0, None)
    phi *= total / phi.sum()
    return PowerAllocation(phi, "WaterFilling")


_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_hermite(n: int):
    if n not in _GH_CACHE:
        x, w = np.polynomial.hermite.hermgauss(n)
        _GH_CACHE[n] = (x, w / math.sqrt(math.pi))
    return _GH_CACHE[n]


def qam_mmse(snr, c: Constellation, nodes: int = 63):
    """MMSE of unit-energy square QAM in complex AWGN at linear ``snr``.

    Computed per real dimension (PAM with energy 1/2, noise variance
    ``1 / (2 snr)``); ``mmse(0) = 1``.  See :func:`log_qam_mmse` for the rule.
    """
    vals = np.array([math.exp(_log_mmse_with_rule(float(s), c, nodes)[0])
                     for s in np.atleast_1d(np.asarray(snr, dtype=float))])
    return vals if vals.size > 1 else float(vals[0])


def _qam_mmse_gh(snr, c: Constellation, nodes: int):
    snr = np.atleast_1d(np.asarray(snr, dtype=float))
    x, w = _gauss_hermite(nodes)
    pam = c.pam
    out = np.ones_like(snr)
    pos = snr > 0
    if np.any(pos):
        sd = np.sqrt(1.0 / (2.0 * snr[pos]))  # per-dimension noise std
        # y = a + sqrt(2) sd x, for every snr, transmitted level a, node x
        y = pam[None, :, None] + math.sqrt(2.0) * sd[:, None, None] * x[None, None, :]
        logit = -((y[..., None] - pam) ** 2) / (2.0 * sd[:, None, None, None] ** 2)
        logit -= logit.max(axis=-1, keepdims=True)
        wts = np.exp(logit)
        est = (wts @ pam) / wts.sum(axis=-1)
        err = (pam[None, :, None] - est) ** 2
        mse_dim = np.einsum("sak,k->s", err, w) / pam.size
        out[pos] = 2.0 * mse_dim
    return out if out.size > 1 else float(out[0])


_GH_RTOL = 1e-8


def _boundary_panels(half: float, sd: float, nodes: int):
    """Gauss-Legendre nodes/log-weights for ``|n|`` in ``[0, half + 40 sd]``.

    Panels are graded geometrically away from ``|n| = half``, starting at the
    width ``min(sd, sd^2 / half)`` of the posterior transition there.
    """
    h = min(sd, sd * sd / half)
    reach = 40.0 * sd
    offs = [0.0]
    t = h / 8.0
    while t < reach:
        offs.append(t)
        t *= 2.0
    offs.append(reach)
    offs = np.array(offs)
    edges = np.unique(np.clip(np.concatenate([half - offs[::-1], half + offs]), 0.0, None))
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    left, right = edges[:-1], edges[1:]
    half_w = 0.5 * (right - left)
    n = (half_w[:, None] * xg[None, :] + 0.5 * (left + right)[:, None]).reshape(-1)
    lw = np.log((half_w[:, None] * wg[None, :]).reshape(-1))
    return n, lw


def _log_qam_mmse_tail(snr: float, c: Constellation, nodes: int = 16) -> float:
    """``log mmse`` by integrating the noise around the decision boundaries.

    For every level and noise sign the estimation error is integrated over
    ``|n| <= half + 40 sd`` on panels refined toward the boundary ``|n| = half``,
    where the error switches on.  Sums stay in the log domain so values far
    below ``1e-300`` remain usable.
    """
    pam = c.pam
    half = 0.5 * (pam[1] - pam[0])
    sd = math.sqrt(1.0 / (2.0 * snr))
    mag, lw = _boundary_panels(half, sd, nodes)
    n = np.concatenate([-mag, mag])
    lw = np.concatenate([lw, lw])
    lpdf = -(n**2) / (2.0 * sd * sd) - math.log(math.sqrt(2.0 * math.pi) * sd)
    terms = []
    for a in pam:
        logw = -(((a + n)[:, None] - pam[None, :]) ** 2) / (2.0 * sd * sd)
        dist = pam - a
        ldist = np.log(np.abs(np.where(dist != 0, dist, 1.0)))
        lp = np.logaddexp.reduce(np.where(dist > 0, logw + ldist, -np.inf), axis=1)
        ln = np.logaddexp.reduce(np.where(dist < 0, logw + ldist, -np.inf), axis=1)
        big, small = np.maximum(lp, ln), np.minimum(lp, ln)
        with np.errstate(divide="ignore", invalid="ignore"):
            ldiff = big + np.log1p(-np.exp(small - big))
        lerr2 = 2.0 * (ldiff - np.logaddexp.reduce(logw, axis=1))
        terms.append(np.logaddexp.reduce(lw + lpdf + lerr2))
    return math.log(2.0) + float(np.logaddexp.reduce(np.array(terms))) - math.log(pam.size)


def _log_mmse_with_rule(snr: float, c: Constellation, nodes: int = 63) -> tuple[float, str]:
    if snr <= 0:
        return 0.0, "gh"
    v = _qam_mmse_gh(snr, c, nodes)
    ref = _qam_mmse_gh(snr, c, 2 * nodes + 1)
    if v > 0 and abs(v - ref) <= _GH_RTOL * ref:
        return math.log(v), "gh"
    return _log_qam_mmse_tail(snr, c), "tail"


def log_qam_mmse(snr: float, c: Constellation, nodes: int = 63) -> float:
    """``log`` of the QAM MMSE.

    Uses the ``nodes``-point Gauss-Hermite value when a rule of twice the order
    agrees to 1e-8, and the boundary-split Gauss-Legendre rule otherwise
    (high SNR, where Gauss-Hermite misses the narrow error region).
    """
    return _log_mmse_with_rule(snr, c, nodes)[0]


def _mmse_inverse(log_target: float, c: Constellation, nodes: int) -> float:
    """SNR at which ``log mmse`` equals ``log_target`` (0 for targets >= 0)."""
    if log_target >= 0.0:
        return 0.0
    f = lambda u: log_qam_mmse(math.exp(u), c, nodes) - log_target
    lo, hi = -30.0, 0.0
    while f(hi) > 0:
        lo, hi = hi, hi + 4.0
        if hi > 690.0:
            raise ArithmeticError("mmse inverse did not bracket")
    if f(lo) < 0:
        return 0.0
    return math.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-13))


def mercury_waterfilling(sigma, noise: NoiseModel, c: Constellation, total: float,
                         nodes: int = 63) -> PowerAllocation:
    """Mercury water-filling for square QAM inputs.

    Active streams satisfy ``mmse(phi_i g_i) = eta / g_i`` with
    ``g_i = lambda_i^2 / sigma2``; streams with ``g_i <= eta`` get no power.
    ``eta`` is solved for so that ``sum phi = total``.
    """
    lam = np.asarray(sigma, dtype=float)
    if total <= 0:
        raise ValueError("total power must be positive")
    g = lam**2 / noise.sigma2_z
    if not np.any(g > 0):
        raise ValueError("mercury water-filling needs at least one positive gain")

    def powers(log_eta):
        phi = np.zeros_like(g)
        for i, gi in enumerate(g):
            if gi > 0 and math.log(gi) > log_eta:
                phi[i] = _mmse_inverse(log_eta - math.log(gi), c, nodes) / gi
        return phi

    def spent(log_eta):
        return float(np.sum(powers(log_eta)))

    hi = math.log(float(g.max()))
    step = 1.0
    lo = hi - step
    while spent(lo) < total:
        step *= 2.0
        lo, hi = hi - step, lo
        if step > 1e6:
            raise ArithmeticError("mercury water-filling could not bracket the water level")
    log_eta = brentq(lambda le: spent(le) - total, lo, hi, xtol=1e-13, rtol=1e-15)
    phi = powers(log_eta)
    err = abs(phi.sum() - total)
    phi *= total / phi.sum()
    # independent higher-order check of whichever rule produced each stream's mmse
    ok = err <= 1e-6 * total
    for p_i, g_i in zip(phi, g):
        if p_i <= 0:
            continue
        val, rule = _log_mmse_with_rule(p_i * g_i, c, nodes)
        check = (math.log(_qam_mmse_gh(p_i * g_i, c, 4 * nodes + 3)) if rule == "gh"
                 else _log_qam_mmse_tail(p_i * g_i, c, nodes=32))
        ok = ok and abs(val - check) <= 1e-6
    return PowerAllocation(phi, "MercuryWF", ok)
