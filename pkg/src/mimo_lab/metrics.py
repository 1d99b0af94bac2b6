"""ECCN, Monte-Carlo BICM rates, the closed-form lower bound and an exact MI oracle.

Rates are in bits per channel use (numerically equal to bits/s/Hz at unit
bandwidth and symbol rate).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .channel import ChannelModel, complex_gaussian, draw, trial_rng
from .detect import Constellation, bcjr_bidiagonal, clamp_llr, map_bits, maxlog_llr
from .linalg import BidiagonalReal, as_matrix
from .schemes import NU_DEFAULT, SCHEME_NAMES, NoiseModel, TransceiverDesign, condition_ratio, design

__all__ = [
    "EccnReport",
    "RateEstimate",
    "EccnSummary",
    "eccn",
    "bit_rate_terms",
    "rate_monte_carlo",
    "rate_lower_bound",
    "bicm_mi_exact",
    "sweep",
    "parallel_map",
    "RATE_SCHEMES",
]

LN2 = math.log(2.0)
DEMODS = ("bcjr", "maxlog")
# GMD has no receiver chain; it only enters ECCN and bound comparisons
RATE_SCHEMES = ("svd", "cbd", "gpcbd")

# sub-stream labels for trial_rng(seed, stream, trial)
_STREAM_CHANNEL = 0
_STREAM_BITS = 1
_STREAM_NOISE = 2


@dataclass(frozen=True)
class EccnReport:
    eccn: float
    diag_max: float
    diag_min: float
    per_layer_post_snr: Optional[np.ndarray] = None
    floor_clamped: bool = False


@dataclass(frozen=True)
class RateEstimate:
    bits_per_channel_use: float
    std_error: float
    trials: int
    snr_db: float
    scheme: str
    eccn_mean: float = float("nan")
    negative_terms: int = 0  # per-bit contributions below 0 (possible for max-log LLRs)

    @property
    def rate(self) -> float:
        return self.bits_per_channel_use


@dataclass(frozen=True)
class EccnSummary:
    scheme: str
    snr_db: float
    eccn_mean: float
    eccn_p50: float
    eccn_p95: float
    trials: int


def eccn(b, phi=None, noise: Optional[NoiseModel] = None) -> EccnReport:
    """``max_i B_ii / min_i B_ii`` of an equivalent channel.

    ``b`` may be a :class:`BidiagonalReal`, a :class:`TransceiverDesign`
    (triangular GMD designs included) or a plain diagonal.  The per-layer
    post-processing SNR ``B_ii^2 phi_i / sigma2_z`` is filled in when a noise
    model is known.
    """
    if isinstance(b, TransceiverDesign):
        phi = b.power.phi if phi is None else phi
        noise = b.noise if noise is None else noise
        d = b.decomposition.diag
    elif isinstance(b, BidiagonalReal):
        d = b.diag
    else:
        d = np.asarray(b, dtype=float).reshape(-1)
    d = np.abs(np.asarray(d, dtype=float))
    if d.size == 0 or np.any(d <= 0):
        raise ValueError("ECCN needs strictly positive diagonal entries")
    ratio, clamped = condition_ratio(d)
    snr = None
    if noise is not None:
        p = np.ones_like(d) if phi is None else np.asarray(phi, dtype=float)
        snr = d**2 * p / noise.sigma2_z
    return EccnReport(ratio, float(d.max()), float(d.min()), snr, clamped)


def bit_rate_terms(llr, bits) -> np.ndarray:
    """Per-bit ``1 - log2(1 + e^((1 - 2c) L))`` for LLRs ``L = log P(1)/P(0)``."""
    llr = clamp_llr(np.asarray(llr, dtype=float))
    sign = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    return 1.0 - np.logaddexp(0.0, sign * llr) / LN2


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map over a thread pool; ``workers <= 1`` runs inline.

    Results come back in input order, so downstream reductions do not depend
    on the pool size.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _channel_for(channel, seed: int, trial: int) -> np.ndarray:
    if isinstance(channel, ChannelModel):
        return draw(channel, seed, _STREAM_CHANNEL, trial).h
    return as_matrix(channel)


def _mean_and_se(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def _rate_trial(scheme, channel, c, noise, demod, seed, power, nu, uses, trial):
    h = _channel_for(channel, seed, trial)
    d = design(scheme, h, noise, c, power, nu)
    b = d.effective()
    n_s = b.n
    bits = trial_rng(seed, _STREAM_BITS, trial).integers(0, 2, size=(uses, n_s * c.q_m), dtype=np.int8)
    s = map_bits(bits.reshape(-1), c).reshape(uses, n_s)
    z = complex_gaussian(trial_rng(seed, _STREAM_NOISE, trial), (uses, n_s)) * math.sqrt(noise.sigma2_z)
    y = s @ b.dense().T + z
    demodulate = bcjr_bidiagonal if demod == "bcjr" else maxlog_llr
    terms = bit_rate_terms(demodulate(b, y, noise.sigma2_z, c), bits)
    return math.fsum(terms.reshape(-1)) / uses, d.eccn, int(np.count_nonzero(terms < 0))


def rate_monte_carlo(scheme: str, channel: Union[ChannelModel, np.ndarray], c: Constellation, noise: NoiseModel,
                     trials: int, demod: str = "bcjr", seed: int = 0, power: str = "uniform",
                     nu: float = NU_DEFAULT, uses_per_trial: int = 32, workers: int = 1) -> RateEstimate:
    """Ergodic BICM rate ``sum_k (1 - E log2(1 + e^((1 - 2 c_k) L_k)))``.

    Each trial draws ``H`` (or reuses a fixed matrix), designs the transceiver,
    sends ``uses_per_trial`` random symbol vectors through ``B Phi^(1/2)`` plus
    ``CN(0, sigma2_z)`` noise and scores the demodulator LLRs.  Channel, bits
    and unit-variance noise are keyed by ``(seed, trial)``, so different
    schemes and SNR points see the same random numbers.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if demod not in DEMODS:
        raise ValueError(f"demod must be one of {DEMODS}, got {demod!r}")
    if scheme.lower() not in RATE_SCHEMES:
        raise ValueError(f"rate is defined for {RATE_SCHEMES}, got {scheme!r}")
    if uses_per_trial < 1:
        raise ValueError("uses_per_trial must be >= 1")
    run = lambda t: _rate_trial(scheme, channel, c, noise, demod, seed, power, nu, uses_per_trial, t)
    results = parallel_map(run, range(trials), workers)
    rate, se = _mean_and_se([r[0] for r in results])
    eccn_mean = math.fsum(r[1] for r in results) / trials
    negatives = sum(r[2] for r in results)
    return RateEstimate(rate, se, trials, noise.snr_db, SCHEME_NAMES[scheme.lower()], eccn_mean, negatives)


def _column_norms2(b) -> np.ndarray:
    if isinstance(b, TransceiverDesign):
        dec = b.decomposition
        mat = dec.r if dec.b is None else dec.b.dense()
        return np.sum(np.abs(mat) ** 2, axis=0) * b.power.phi
    if isinstance(b, BidiagonalReal):
        sup = np.concatenate([[0.0], b.superdiag])
        return b.diag**2 + sup**2
    return np.sum(np.abs(as_matrix(b)) ** 2, axis=0)


def rate_lower_bound(b, c: Constellation, noise: NoiseModel) -> float:
    """Closed-form bound ``Q_m sum_i (1 - log2(1 + exp(-d2_min ||b_i||^2 / sigma2_z)))``.

    ``b`` is the equivalent channel (bidiagonal, a design including its power
    loading, or any matrix whose columns are the per-stream gains).
    """
    norms = _column_norms2(b)
    x = c.d2_min * norms / noise.sigma2_z
    per_stream = 1.0 - np.logaddexp(0.0, -x) / LN2
    return float(c.q_m * math.fsum(per_stream))


def _noise_nodes(n_r: int, sigma2: float, nodes: int):
    x, w = np.polynomial.hermite.hermgauss(nodes)
    w = w / math.sqrt(math.pi)  # E over N(0, 1/2)
    grid = np.array(list(product(range(nodes), repeat=2 * n_r)))
    xs = x[grid] * math.sqrt(sigma2)
    z = xs[:, :n_r] + 1j * xs[:, n_r:]
    return z, np.prod(w[grid], axis=1)


def bicm_mi_exact(h_small, c: Constellation, noise: NoiseModel, quad_nodes: int = 24,
                  max_points: int = 2**24, mc_samples: int = 1 << 16, seed: int = 0) -> float:
    """Exact BICM mutual information ``sum_k I(c_k; y)`` of ``y = H s + z`` for tiny systems.

    The noise expectation uses a tensor Gauss-Hermite rule when
    ``nodes^(2 N_r) * M^(2 N_s)`` stays below ``max_points``; otherwise it falls
    back to ``mc_samples`` seeded Monte-Carlo draws per transmitted vector.
    Intended as a test oracle (``M^N_s <= 2^12``).
    """
    h = as_matrix(h_small)
    n_r, n_s = h.shape
    hyp = c.m**n_s
    if hyp > 2**12:
        raise ValueError(f"M^N_s = {hyp} too large for the exact oracle")
    words = np.array(list(product(range(c.m), repeat=n_s)))
    means = c.points()[words] @ h.T  # (hyp, n_r)
    shifts = np.arange(c.q_m - 1, -1, -1)
    bits = ((words[:, :, None] >> shifts) & 1).reshape(hyp, -1).astype(bool)
    if quad_nodes ** (2 * n_r) * hyp * hyp <= max_points:
        z, w = _noise_nodes(n_r, noise.sigma2_z, quad_nodes)
    else:
        z = complex_gaussian(trial_rng(seed, 0), (mc_samples, n_r)) * math.sqrt(noise.sigma2_z)
        w = np.full(mc_samples, 1.0 / mc_samples)
    total = []
    for i0 in range(hyp):
        y = means[i0] + z
        metric = -np.sum(np.abs(y[:, None, :] - means[None, :, :]) ** 2, axis=2) / noise.sigma2_z
        acc = np.zeros(z.shape[0])
        for k in range(bits.shape[1]):
            llr = np.logaddexp.reduce(metric[:, bits[:, k]], axis=1) - np.logaddexp.reduce(metric[:, ~bits[:, k]], axis=1)
            sign = -1.0 if bits[i0, k] else 1.0
            acc += 1.0 - np.logaddexp(0.0, sign * llr) / LN2
        total.append(float(np.dot(w, acc)))
    return math.fsum(total) / hyp


def _eccn_trial(scheme, channel, c, noise, seed, power, nu, trial):
    h = _channel_for(channel, seed, trial)
    return design(scheme, h, noise, c, power, nu).eccn


def sweep(schemes: Sequence[str], snr_grid_db: Iterable[float], channel, c: Constellation, trials: int,
          seed: int = 0, kind: str = "rate", demod: str = "bcjr", power: str = "uniform",
          nu: float = NU_DEFAULT, uses_per_trial: int = 32, workers: int = 1) -> list:
    """One row per ``(scheme, snr)``: :class:`RateEstimate` for ``kind="rate"``, :class:`EccnSummary` for ``"eccn"``.

    Deterministic in ``seed``; every point reuses the same channel draws.
    """
    names = [s.lower() for s in schemes]
    if len(set(names)) != len(names):
        dup = sorted({s for s in names if names.count(s) > 1})
        raise ValueError(f"duplicate scheme names: {dup}")
    allowed = RATE_SCHEMES if kind == "rate" else tuple(SCHEME_NAMES)
    for s in names:
        if s not in allowed:
            raise ValueError(f"scheme {s!r} not valid for a {kind} sweep; expected one of {list(allowed)}")
    if kind not in ("rate", "eccn"):
        raise ValueError(f"unknown sweep kind {kind!r}")
    rows = []
    for s in names:
        for snr in snr_grid_db:
            noise = NoiseModel.from_snr_db(snr)
            if kind == "rate":
                rows.append(rate_monte_carlo(s, channel, c, noise, trials, demod, seed, power, nu,
                                             uses_per_trial, workers))
            else:
                vals = np.array(parallel_map(lambda t: _eccn_trial(s, channel, c, noise, seed, power, nu, t),
                                             range(trials), workers))
                rows.append(EccnSummary(SCHEME_NAMES[s], float(snr), math.fsum(vals) / vals.size,
                                        float(np.percentile(vals, 50)), float(np.percentile(vals, 95)), trials))
    return rows
