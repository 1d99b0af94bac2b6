"""Soft demodulation over real bidiagonal equivalent channels.

Label conventions (fixed, tests pin them):

* Per real dimension the ``sqrt(M)`` PAM levels are indexed ``j = 0 .. sqrt(M)-1``
  from most negative to most positive; level ``j`` carries the binary-reflected
  Gray label ``j ^ (j >> 1)``, written MSB first.
* A QAM symbol carries ``Q_m`` bits: the first ``Q_m/2`` select the in-phase
  level, the last ``Q_m/2`` the quadrature level.  The all-zero word is
  therefore ``(-1 - 1j) * (sqrt(M) - 1) * a`` with ``a`` the PAM scale.
* LLRs are natural-log ``log P(c=1|y) / P(c=0|y)``; bit ``k`` of stream ``i``
  sits at index ``i * Q_m + k``.

Because the equivalent channel ``B`` is real, the in-phase and quadrature
observations are demodulated on two copies of the same ``sqrt(M)``-state
trellis.  Layer ``l`` of the trellis holds ``s_l``; observation ``y_l`` depends
on ``(s_l, s_{l+1})`` through ``B[l, l]`` and ``B[l, l+1]``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np

from .linalg import BidiagonalReal

__all__ = [
    "LLR_CLAMP",
    "Constellation",
    "build_constellation",
    "map_bits",
    "demap_hard",
    "bcjr_bidiagonal",
    "maxlog_llr",
    "awgn_demapper",
    "bruteforce_llr",
    "clamp_llr",
]

LLR_CLAMP = 60.0


@dataclass(frozen=True)
class Constellation:
    m: int
    q_m: int
    pam: np.ndarray
    labels: np.ndarray  # Gray label of each PAM level, shape (sqrt(M),)
    d2_min: float

    @property
    def levels_per_dim(self) -> int:
        return self.pam.size

    @property
    def bits_per_dim(self) -> int:
        return self.q_m // 2

    def label_bits(self) -> np.ndarray:
        """``(sqrt(M), Q_m/2)`` array: bit ``b`` (MSB first) of each level's label."""
        q = self.bits_per_dim
        shifts = np.arange(q - 1, -1, -1)
        return (self.labels[:, None] >> shifts[None, :]) & 1

    def points(self) -> np.ndarray:
        """All ``M`` symbols in label order (word value ``0 .. M-1``)."""
        words = np.arange(self.m)
        return map_bits(((words[:, None] >> np.arange(self.q_m - 1, -1, -1)) & 1).reshape(-1), self)


def build_constellation(m: int) -> Constellation:
    """Square Gray-mapped ``M``-QAM with unit average energy."""
    m = int(m)
    q_m = int(round(np.log2(m))) if m > 1 else 0
    if m < 4 or 2**q_m != m or q_m % 2:
        raise ValueError(f"square QAM order must be 4**k, got {m}")
    side = 1 << (q_m // 2)
    scale = np.sqrt(3.0 / (2.0 * (m - 1)))
    pam = scale * np.arange(-side + 1, side, 2, dtype=float)
    j = np.arange(side)
    labels = j ^ (j >> 1)
    return Constellation(m=m, q_m=q_m, pam=pam, labels=labels, d2_min=6.0 / (m - 1))


def _level_of_label(c: Constellation) -> np.ndarray:
    inv = np.empty_like(c.labels)
    inv[c.labels] = np.arange(c.labels.size)
    return inv


def map_bits(bits, c: Constellation) -> np.ndarray:
    """Gray-map a bit sequence (length divisible by ``Q_m``) to QAM symbols."""
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    if bits.size % c.q_m:
        raise ValueError(f"bit count {bits.size} not divisible by Q_m={c.q_m}")
    q = c.bits_per_dim
    weights = 1 << np.arange(q - 1, -1, -1)
    grouped = bits.reshape(-1, 2, q)
    words = grouped @ weights
    idx = _level_of_label(c)[words]
    return c.pam[idx[:, 0]] + 1j * c.pam[idx[:, 1]]


def demap_hard(symbols, c: Constellation) -> np.ndarray:
    """Nearest-level decision per dimension, returned as bits."""
    s = np.asarray(symbols).reshape(-1)
    out = []
    lb = c.label_bits()
    for part in (s.real, s.imag):
        j = np.argmin(np.abs(part[:, None] - c.pam[None, :]), axis=1)
        out.append(lb[j])
    return np.concatenate(out, axis=1).reshape(-1)


def clamp_llr(llr, limit: float = LLR_CLAMP) -> np.ndarray:
    return np.clip(llr, -limit, limit)


def _reduce(x, axis, maxlog: bool):
    if maxlog:
        return np.max(x, axis=axis)
    return np.logaddexp.reduce(x, axis=axis)


def _bits_from_levels(logpost: np.ndarray, c: Constellation, maxlog: bool) -> np.ndarray:
    """Per-level log posteriors ``(..., sqrt(M))`` -> bit LLRs ``(..., Q_m/2)``."""
    lb = c.label_bits().astype(bool)
    out = np.empty(logpost.shape[:-1] + (lb.shape[1],))
    for b in range(lb.shape[1]):
        one = logpost[..., lb[:, b]]
        zero = logpost[..., ~lb[:, b]]
        out[..., b] = _reduce(one, -1, maxlog) - _reduce(zero, -1, maxlog)
    return out


def _chain_posteriors(d, e, y, sigma2, pam, maxlog, counter=None):
    """Forward-backward over one block.

    ``d``: (n,) diagonal, ``e``: (n-1,) superdiagonal, ``y``: (R, n) real
    observations.  Returns ``(R, n, L)`` unnormalized log posteriors of each
    layer's level.
    """
    r, n = y.shape
    lv = pam.size
    # branch metrics m[l][r, i, j] for (s_l = i, s_{l+1} = j)
    branch = []
    for l in range(n - 1):
        mu = d[l] * pam[:, None] + e[l] * pam[None, :]
        branch.append(-((y[:, l, None, None] - mu[None]) ** 2) / sigma2)
    last = -((y[:, n - 1, None] - d[n - 1] * pam[None, :]) ** 2) / sigma2
    if counter is not None:
        counter["branch_metrics"] += r * (n - 1) * lv * lv
        counter["node_metrics"] += r * lv

    alpha = [np.zeros((r, lv))]
    for l in range(n - 1):
        a = _reduce(alpha[-1][:, :, None] + branch[l], 1, maxlog)
        alpha.append(a - a.max(axis=1, keepdims=True))
    beta = [None] * n
    beta[n - 1] = last
    for l in range(n - 2, -1, -1):
        bt = _reduce(branch[l] + beta[l + 1][:, None, :], 2, maxlog)
        beta[l] = bt - bt.max(axis=1, keepdims=True)
    return np.stack([alpha[l] + beta[l] for l in range(n)], axis=1)


def _split_iq(y) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=complex)
    single = y.ndim == 1
    y2 = y[None] if single else y
    return np.concatenate([y2.real, y2.imag], axis=0), single


def _assemble(bits_iq: np.ndarray, t: int, single: bool) -> np.ndarray:
    """``(2T, n, q)`` I-rows then Q-rows -> ``(T, n * Q_m)`` in the documented layout."""
    bi, bq = bits_iq[:t], bits_iq[t:]
    out = np.concatenate([bi, bq], axis=2).reshape(t, -1)
    return out[0] if single else out


def _trellis_llr(b: BidiagonalReal, y, sigma2_z, c: Constellation, maxlog: bool, counter: Optional[Counter]):
    yr, single = _split_iq(y)
    if yr.shape[1] != b.n:
        raise ValueError(f"observation length {yr.shape[1]} does not match N_s={b.n}")
    t = yr.shape[0] // 2
    logpost = np.empty(yr.shape + (c.levels_per_dim,))
    for start, stop in b.blocks():
        logpost[:, start:stop] = _chain_posteriors(
            b.diag[start:stop], b.superdiag[start : stop - 1], yr[:, start:stop], sigma2_z, c.pam, maxlog, counter
        )
    return _assemble(_bits_from_levels(logpost, c, maxlog), t, single)


def bcjr_bidiagonal(b: BidiagonalReal, y, sigma2_z: float, c: Constellation, counter: Optional[Counter] = None):
    """Exact a-posteriori bit LLRs for ``y = B s + z``, ``z ~ CN(0, sigma2_z I)``.

    ``y`` may be a single received vector ``(N_s,)`` or a batch ``(T, N_s)``.
    Independent blocks of ``b`` are processed as separate short trellises.
    ``counter`` (a :class:`collections.Counter`) accumulates ``branch_metrics``
    (state-transition metrics) and ``node_metrics`` (terminal-layer metrics).
    """
    return _trellis_llr(b, y, sigma2_z, c, False, counter)


def maxlog_llr(b: BidiagonalReal, y, sigma2_z: float, c: Constellation, counter: Optional[Counter] = None):
    """Max-log LLRs ``(min_{X^0} ||y-Bs||^2 - min_{X^1} ||y-Bs||^2) / sigma2_z`` by min-sum passes."""
    return _trellis_llr(b, y, sigma2_z, c, True, counter)


def awgn_demapper(gain, y_i, sigma2_z: float, c: Constellation) -> np.ndarray:
    """Exact per-stream LLRs for ``y_i = gain * s + z`` (``Q_m`` values, or ``(..., Q_m)``)."""
    y = np.asarray(y_i, dtype=complex)
    g = np.asarray(gain, dtype=float)
    out = []
    for part in (y.real, y.imag):
        lp = -((part[..., None] - g[..., None] * c.pam) ** 2) / sigma2_z
        out.append(_bits_from_levels(lp, c, False))
    return np.concatenate(out, axis=-1)


def bruteforce_llr(b_full, y, sigma2_z: float, c: Constellation, maxlog: bool = False, max_hypotheses: int = 2**20):
    """Reference LLRs by enumerating all ``M^N_s`` transmit vectors.

    Works for any complex ``N_r x N_s`` channel; meant for tests only.
    """
    h = np.asarray(b_full, dtype=complex)
    y = np.asarray(y, dtype=complex).reshape(-1)
    n_s = h.shape[1]
    if c.m**n_s > max_hypotheses:
        raise ValueError(f"M^N_s = {c.m}^{n_s} exceeds the enumeration guard {max_hypotheses}")
    pts = c.points()
    words = np.array(list(product(range(c.m), repeat=n_s)))  # (M^N_s, N_s)
    s = pts[words]
    metric = -np.sum(np.abs(y[None, :] - s @ h.T) ** 2, axis=1) / sigma2_z
    shifts = np.arange(c.q_m - 1, -1, -1)
    bits = ((words[:, :, None] >> shifts) & 1).reshape(words.shape[0], -1).astype(bool)
    out = np.empty(bits.shape[1])
    for k in range(bits.shape[1]):
        out[k] = _reduce(metric[bits[:, k]], 0, maxlog) - _reduce(metric[~bits[:, k]], 0, maxlog)
    return out
