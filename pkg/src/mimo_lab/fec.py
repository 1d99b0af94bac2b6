"""Coded BER harness: K=7 convolutional code, soft Viterbi, random interleaver, frame loop.

Stands in for a standards LDPC stack; only relative BER between transceivers
is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelModel, complex_gaussian, draw, trial_rng
from .detect import Constellation, bcjr_bidiagonal, build_constellation, clamp_llr, map_bits, maxlog_llr
from .metrics import RATE_SCHEMES, parallel_map
from .schemes import NU_DEFAULT, SCHEME_NAMES, NoiseModel, design

__all__ = [
    "CodeSpec",
    "FrameConfig",
    "BerConfig",
    "BerReport",
    "conv_encode",
    "puncture",
    "depuncture",
    "viterbi_soft_decode",
    "interleaver",
    "interleave",
    "deinterleave",
    "run_frame",
    "ber_run",
]

# 802.11-style pattern for rate 3/4: rows are the two generator outputs, columns time
PUNCTURE_3_4 = np.array([[1, 1, 0], [1, 0, 1]], dtype=bool)

_STREAM_CHANNEL = 0
_STREAM_INFO = 1
_STREAM_NOISE = 2
_STREAM_PAD = 3


def _gf2_gcd(a: int, b: int) -> int:
    while b:
        while a and a.bit_length() >= b.bit_length():
            a ^= b << (a.bit_length() - b.bit_length())
        a, b = b, a
    return a


@dataclass(frozen=True)
class CodeSpec:
    constraint_length: int = 7
    generators: tuple[int, ...] = (0o133, 0o171)
    rate: str = "1/2"

    def __post_init__(self):
        k = self.constraint_length
        if len(self.generators) != 2:
            raise ValueError("only rate-1/2 mother codes (two generators) are supported")
        for g in self.generators:
            if not 0 < g < (1 << k) or not (g >> (k - 1)) & 1:
                raise ValueError(f"generator {oct(g)} must have degree exactly K-1={k - 1}")
        if _gf2_gcd(*self.generators) != 1:
            raise ValueError(f"generators {[oct(g) for g in self.generators]} are not coprime (catastrophic code)")
        if self.rate not in ("1/2", "3/4"):
            raise ValueError(f"rate must be '1/2' or '3/4', got {self.rate!r}")

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    @property
    def pattern(self) -> Optional[np.ndarray]:
        return PUNCTURE_3_4 if self.rate == "3/4" else None

    def taps(self) -> np.ndarray:
        """``(2, K)`` tap matrix; column ``d`` multiplies the input delayed by ``d``."""
        k = self.constraint_length
        return np.array([[(g >> (k - 1 - d)) & 1 for d in range(k)] for g in self.generators], dtype=np.int64)

    def mother_length(self, n_info: int) -> int:
        return 2 * (n_info + self.memory)

    def coded_length(self, n_info: int) -> int:
        n = self.mother_length(n_info)
        if self.pattern is None:
            return n
        steps = n_info + self.memory
        period = self.pattern.shape[1]
        if steps % period:
            raise ValueError(f"terminated length {steps} is not a multiple of the puncturing period {period}")
        return steps // period * int(self.pattern.sum())


@dataclass(frozen=True)
class FrameConfig:
    info_bits_per_frame: int
    interleaver_seed: int = 0

    @classmethod
    def desk_default(cls, q_m: int, interleaver_seed: int = 0) -> "FrameConfig":
        return cls(1248 * q_m, interleaver_seed)

    def __post_init__(self):
        if self.info_bits_per_frame < 1:
            raise ValueError("frames need at least one information bit")


def conv_encode(bits, code: CodeSpec = CodeSpec()) -> np.ndarray:
    """Zero-terminated encoding, outputs interleaved ``(c0[0], c1[0], c0[1], ...)``, punctured if the code asks."""
    u = np.asarray(bits, dtype=np.int64).reshape(-1)
    if u.size < 1:
        raise ValueError("input length must be >= 1")
    out = np.stack([np.convolve(u, t) % 2 for t in code.taps()], axis=1).reshape(-1).astype(np.int8)
    return puncture(out, code)


def puncture(coded, code: CodeSpec) -> np.ndarray:
    coded = np.asarray(coded)
    if code.pattern is None:
        return coded
    keep = np.tile(code.pattern.T.reshape(-1), coded.size // code.pattern.size)
    return coded[keep]


def depuncture(llrs, code: CodeSpec, n_info: int) -> np.ndarray:
    """Re-insert zero LLRs at punctured positions."""
    llrs = np.asarray(llrs, dtype=float)
    if code.pattern is None:
        return llrs
    full = np.zeros(code.mother_length(n_info))
    keep = np.tile(code.pattern.T.reshape(-1), full.size // code.pattern.size)
    full[keep] = llrs
    return full


def _trellis(code: CodeSpec):
    """Predecessors and their output bits for every next state.

    State = last ``K-1`` inputs, newest in the top bit.  From state ``s`` input
    ``b`` goes to ``(b << (K-2)) | (s >> 1)``.
    """
    m = code.memory
    ns = np.arange(code.n_states)
    b = ns >> (m - 1)
    prev = np.stack([((ns << 1) & (code.n_states - 1)) | d for d in (0, 1)], axis=1)  # (S, 2)
    reg = (b[:, None] << m) | prev
    outs = np.stack([np.vectorize(lambda r, g=g: bin(r & g).count("1") & 1)(reg) for g in code.generators], axis=2)
    return prev, outs.astype(float)  # (S, 2), (S, 2, 2)


def viterbi_soft_decode(llrs, code: CodeSpec = CodeSpec(), n_info: Optional[int] = None) -> np.ndarray:
    """Maximum-likelihood path for LLRs ``L = log P(1)/P(0)`` of the (punctured) coded bits.

    Path metric is ``sum c_k L_k``.  Equal metrics keep the predecessor whose
    dropped bit is 0, so all-zero LLRs decode to all-zero bits.
    """
    llrs = np.asarray(llrs, dtype=float).reshape(-1)
    if n_info is None:
        if code.pattern is not None:
            raise ValueError("punctured decoding needs n_info")
        n_info = llrs.size // 2 - code.memory
    full = depuncture(llrs, code, n_info).reshape(-1, 2)
    steps = full.shape[0]
    if steps != n_info + code.memory:
        raise ValueError(f"got {steps} trellis steps, expected {n_info + code.memory}")
    prev, outs = _trellis(code)
    metric = np.full(code.n_states, -np.inf)
    metric[0] = 0.0
    choice = np.empty((steps, code.n_states), dtype=np.int8)
    rows = np.arange(code.n_states)
    for t in range(steps):
        cand = metric[prev] + outs @ full[t]  # (S, 2)
        pick = (cand[:, 1] > cand[:, 0]).astype(np.int8)
        choice[t] = pick
        metric = cand[rows, pick]
    state = 0  # zero tail
    bits = np.empty(steps, dtype=np.int8)
    top = code.memory - 1
    for t in range(steps - 1, -1, -1):
        bits[t] = state >> top
        state = prev[state, choice[t, state]]
    return bits[:n_info]


def interleaver(n: int, seed: int) -> np.ndarray:
    """Seeded uniform permutation of ``range(n)`` (Fisher-Yates via numpy)."""
    return trial_rng(seed).permutation(n)


def interleave(x, seed: int) -> np.ndarray:
    x = np.asarray(x)
    return x[interleaver(x.shape[0], seed)]


def deinterleave(x, seed: int) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty_like(x)
    out[interleaver(x.shape[0], seed)] = x
    return out


@dataclass(frozen=True)
class BerReport:
    snr_db: float
    scheme: str
    frames: int
    bit_errors: int
    ber: float
    frame_errors: int
    fer: float


@dataclass(frozen=True)
class BerConfig:
    channel: ChannelModel
    schemes: tuple[str, ...]
    m: int
    snr_grid_db: tuple[float, ...]
    code: CodeSpec = CodeSpec()
    info_bits_per_frame: Optional[int] = None  # default 1248 * Q_m
    interleaver_seed: int = 0
    max_frames: int = 1000
    min_errors: int = 100
    seed: int = 0
    demod: str = "bcjr"
    power: str = "uniform"
    nu: float = NU_DEFAULT
    noiseless: bool = False

    def __post_init__(self):
        names = [s.lower() for s in self.schemes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate scheme names in {list(self.schemes)}")
        for s in names:
            if s not in RATE_SCHEMES:
                raise ValueError(f"scheme {s!r} has no receiver chain; expected one of {list(RATE_SCHEMES)}")
        if self.demod not in ("bcjr", "maxlog"):
            raise ValueError(f"demod must be 'bcjr' or 'maxlog', got {self.demod!r}")
        if self.max_frames < 1 or self.min_errors < 1:
            raise ValueError("max_frames and min_errors must be >= 1")
        build_constellation(self.m)

    def frame(self) -> FrameConfig:
        c = build_constellation(self.m)
        n = self.info_bits_per_frame or 1248 * c.q_m
        return FrameConfig(n, self.interleaver_seed)


def run_frame(scheme: str, cfg: BerConfig, noise: NoiseModel, frame: int) -> tuple[int, bool]:
    """One frame through encode, interleave, map, ``F``, ``H``, ``Q^H``, demodulate, deinterleave, decode.

    Returns ``(bit_errors, frame_error)``.  ``H``, info bits and unit noise
    depend only on ``(cfg.seed, frame)``.
    """
    c = build_constellation(cfg.m)
    fc = cfg.frame()
    n_info = fc.info_bits_per_frame
    h = draw(cfg.channel, cfg.seed, _STREAM_CHANNEL, frame).h
    d = design(scheme, h, noise, c, cfg.power, cfg.nu)
    n_s = d.n_s
    info = trial_rng(cfg.seed, _STREAM_INFO, frame).integers(0, 2, n_info, dtype=np.int8)
    coded = interleave(conv_encode(info, cfg.code), fc.interleaver_seed)
    per_use = n_s * c.q_m
    n_uses = -(-coded.size // per_use)
    pad = trial_rng(cfg.seed, _STREAM_PAD, frame).integers(0, 2, n_uses * per_use - coded.size, dtype=np.int8)
    s = map_bits(np.concatenate([coded, pad]), c).reshape(n_uses, n_s)
    x = s @ d.precoder().T  # (uses, N_t)
    y = x @ h.T
    if not cfg.noiseless:
        y = y + complex_gaussian(trial_rng(cfg.seed, _STREAM_NOISE, frame), y.shape) * math.sqrt(noise.sigma2_z)
    r = y @ d.postprocessor().T  # Q^H y, (uses, N_s)
    demodulate = bcjr_bidiagonal if cfg.demod == "bcjr" else maxlog_llr
    llr = clamp_llr(demodulate(d.effective(), r, noise.sigma2_z, c)).reshape(-1)[: coded.size]
    decoded = viterbi_soft_decode(deinterleave(llr, fc.interleaver_seed), cfg.code, n_info)
    errors = int(np.count_nonzero(decoded != info))
    return errors, errors > 0


def ber_run(cfg: BerConfig, workers: int = 1) -> list[BerReport]:
    """BER per ``(scheme, snr)``, stopping at ``min_errors`` bit errors or ``max_frames``.

    Frames are evaluated in batches of ``workers`` but consumed in index order,
    so the stopping point and the counts do not depend on ``workers``.
    """
    n_info = cfg.frame().info_bits_per_frame
    cfg.code.coded_length(n_info)  # validates the puncturing period
    reports = []
    for scheme in cfg.schemes:
        for snr in cfg.snr_grid_db:
            noise = NoiseModel.from_snr_db(snr)
            frames = bit_errors = frame_errors = 0
            batch = max(1, workers)
            while frames < cfg.max_frames and bit_errors < cfg.min_errors:
                idx = range(frames, min(frames + batch, cfg.max_frames))
                for e, fe in parallel_map(lambda k: run_frame(scheme, cfg, noise, k), idx, workers):
                    frames += 1
                    bit_errors += e
                    frame_errors += int(fe)
                    if bit_errors >= cfg.min_errors:
                        break
            reports.append(BerReport(float(snr), SCHEME_NAMES[scheme.lower()], frames, bit_errors,
                                     bit_errors / (frames * n_info), frame_errors, frame_errors / frames))
    return reports
