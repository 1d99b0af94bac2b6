"""Dense complex factorizations used by the transceiver designers.

Every factorization of ``H`` (``N_r x N_t``) is returned in the form
``H = Q @ E @ P^H`` where ``Q`` is ``N_r x N_r`` unitary, ``P`` is
``N_t x N_s`` with orthonormal columns, ``N_s = min(N_r, N_t)`` and ``E`` is
an ``N_r x N_s`` real matrix whose top ``N_s x N_s`` block is the equivalent
channel (bidiagonal, diagonal or, for GMD, upper triangular) and whose
remaining rows are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "NumericalFailure",
    "SVDFactors",
    "BidiagonalReal",
    "Decomposition",
    "as_matrix",
    "svd",
    "householder_bidiagonalize",
    "givens_pair",
    "assemble_permuted",
    "gmd",
    "reconstruction_residual",
    "orthonormality_error",
    "majorization_gaps",
]

SCHEMES = ("SVD", "CBD", "GMD", "GP-CBD")


class NumericalFailure(ArithmeticError):
    """A factorization did not converge or met a degenerate input it cannot handle."""


def as_matrix(h) -> np.ndarray:
    """Validate and copy ``h`` into a 2-D complex128 array."""
    a = np.array(h, dtype=np.complex128, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


@dataclass(frozen=True)
class SVDFactors:
    u: np.ndarray  # N_r x N_r
    sigma: np.ndarray  # N_s, descending
    v: np.ndarray  # N_t x N_s

    @property
    def n_s(self) -> int:
        return self.sigma.size


@dataclass(frozen=True)
class BidiagonalReal:
    """Real upper-bidiagonal ``N_s x N_s`` matrix stored as two bands.

    ``block_boundaries`` lists superdiagonal positions ``i`` (0-based,
    coupling layer ``i`` to ``i + 1``) that are structurally zero, so the
    matrix splits into independent blocks there.
    """

    diag: np.ndarray
    superdiag: np.ndarray
    block_boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float).reshape(-1)
        e = np.asarray(self.superdiag, dtype=float).reshape(-1)
        if d.size < 1:
            raise ValueError("bidiagonal matrix needs at least one diagonal entry")
        if e.size != d.size - 1:
            raise ValueError(f"superdiag must have {d.size - 1} entries, got {e.size}")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("bidiagonal entries must be finite")
        bounds = tuple(sorted(int(i) for i in self.block_boundaries))
        for i in bounds:
            if not 0 <= i < e.size:
                raise ValueError(f"block boundary {i} out of range")
            if e[i] != 0.0:
                raise ValueError(f"superdiag[{i}] must be exactly zero at a block boundary")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "superdiag", e)
        object.__setattr__(self, "block_boundaries", bounds)

    @property
    def n(self) -> int:
        return self.diag.size

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.superdiag, 1)

    def blocks(self) -> list[tuple[int, int]]:
        """Half-open layer ranges ``[start, stop)`` of the independent blocks."""
        cuts = [0] + [i + 1 for i in self.block_boundaries] + [self.n]
        return [(a, b) for a, b in zip(cuts[:-1], cuts[1:])]

    def scale_columns(self, w) -> "BidiagonalReal":
        """Return ``B @ diag(w)``; used for ``B Phi^(1/2)``."""
        w = np.asarray(w, dtype=float)
        return BidiagonalReal(self.diag * w, self.superdiag * w[1:], self.block_boundaries)

    @classmethod
    def diagonal(cls, d) -> "BidiagonalReal":
        d = np.asarray(d, dtype=float)
        return cls(d, np.zeros(d.size - 1), tuple(range(d.size - 1)))


@dataclass(frozen=True)
class Decomposition:
    """``H = q @ E @ p^H`` with ``E`` the equivalent real channel.

    For SVD, CBD and GP-CBD ``b`` holds the bidiagonal equivalent channel.
    GMD produces a full upper-triangular ``r`` instead and leaves ``b`` unset.
    """

    q: np.ndarray
    p: np.ndarray
    scheme: str
    b: Optional[BidiagonalReal] = None
    r: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme tag {self.scheme!r}")
        if (self.b is None) == (self.r is None):
            raise ValueError("exactly one of b or r must be given")

    @property
    def n_s(self) -> int:
        return self.p.shape[1]

    def equivalent(self) -> np.ndarray:
        """Dense ``N_s x N_s`` real equivalent channel."""
        return self.b.dense() if self.b is not None else self.r

    @property
    def diag(self) -> np.ndarray:
        return self.b.diag if self.b is not None else np.diag(self.r).copy()

    def expand(self) -> np.ndarray:
        out = np.zeros((self.q.shape[0], self.n_s))
        out[: self.n_s] = self.equivalent()
        return out

    def reconstruct(self) -> np.ndarray:
        return self.q @ self.expand() @ self.p.conj().T


def reconstruction_residual(h, dec: Decomposition) -> float:
    h = np.asarray(h)
    nh = np.linalg.norm(h)
    err = np.linalg.norm(dec.reconstruct() - h)
    return float(err / nh) if nh > 0 else float(err)


def orthonormality_error(a) -> float:
    """``||A^H A - I||_F`` for a matrix expected to have orthonormal columns."""
    a = np.asarray(a)
    return float(np.linalg.norm(a.conj().T @ a - np.eye(a.shape[1])))


def majorization_gaps(diag, sigma) -> np.ndarray:
    """Log-domain prefix gaps ``sum log sigma_i - sum log |d|_[i]`` (sorted desc).

    All entries are non-negative for a valid triangular factorization and the
    last one is zero (Weyl's product inequalities).
    """
    d = np.sort(np.abs(np.asarray(diag, dtype=float)))[::-1]
    s = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore"):
        return np.cumsum(np.log(s)) - np.cumsum(np.log(d))


def svd(h) -> SVDFactors:
    """Economy SVD with full left factor, singular values descending.

    Backed by LAPACK (``gesdd``); failures to converge surface as
    :class:`NumericalFailure`.
    """
    a = as_matrix(h)
    n_s = min(a.shape)
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    s = s[:n_s]
    if np.any(np.diff(s) > 0):
        raise NumericalFailure("singular values not sorted descending")
    return SVDFactors(u=u, sigma=s, v=vh[:n_s].conj().T)


def _reflector(x: np.ndarray) -> tuple[np.ndarray, float, complex]:
    """Householder vector ``v`` (``v[0] = 1``) and ``beta`` mapping ``x`` to ``alpha e1``.

    ``(I - beta v v^H) x = alpha e1`` with ``|alpha| = ||x||`` and ``alpha``
    carrying the opposite phase of ``x[0]`` for stability.
    """
    norm = np.linalg.norm(x)
    v = np.zeros_like(x)
    v[0] = 1.0
    if norm == 0.0 or not np.any(x[1:]):
        return v, 0.0, x[0]
    x0 = x[0]
    phase = x0 / abs(x0) if x0 != 0 else 1.0
    alpha = -phase * norm
    w = x.copy()
    w[0] = x0 - alpha
    w = w / w[0]
    beta = 2.0 / np.real(np.vdot(w, w))
    return w, beta, alpha


def _bidiagonalize_square_or_tall(a: np.ndarray):
    """Golub-Kahan Householder bidiagonalization of ``a`` (``m x n``, ``m >= n``).

    Returns ``(q, d, e, p)`` with ``a = q @ [bidiag(d, e); 0] @ p^H``, ``d >= 0``,
    ``e >= 0`` real.
    """
    m, n = a.shape
    b = a.copy()
    q = np.eye(m, dtype=complex)
    p = np.eye(n, dtype=complex)
    for j in range(n):
        v, beta, _ = _reflector(b[j:, j])
        if beta:
            b[j:, j:] -= beta * np.outer(v, v.conj() @ b[j:, j:])
            q[:, j:] -= beta * np.outer(q[:, j:] @ v, v.conj())
        # rotate the phase of row j so b[j, j] is real non-negative
        t = b[j, j]
        if t != 0:
            ph = t / abs(t)
            b[j, j:] *= np.conj(ph)
            q[:, j] *= ph
        b[j, j] = abs(b[j, j])
        if j < n - 1:
            row = b[j, j + 1 :].conj()
            v, beta, _ = _reflector(row)
            if beta:
                b[j:, j + 1 :] -= beta * np.outer(b[j:, j + 1 :] @ v, v.conj())
                p[:, j + 1 :] -= beta * np.outer(p[:, j + 1 :] @ v, v.conj())
            t = b[j, j + 1]
            if t != 0:
                ph = t / abs(t)
                b[j:, j + 1] *= np.conj(ph)
                p[:, j + 1] *= np.conj(ph)
            b[j, j + 1] = abs(b[j, j + 1])
    d = np.real(np.diag(b)).copy()
    e = np.real(np.diag(b, 1)).copy() if n > 1 else np.zeros(0)
    return q, d, e, p


def householder_bidiagonalize(h) -> Decomposition:
    """CBD: ``H = Q B P^H`` with ``B`` real, non-negative upper bidiagonal.

    Wide channels (``N_r < N_t``) are first compressed by an LQ step so the
    bidiagonal factor is square.
    """
    a = as_matrix(h)
    n_r, n_t = a.shape
    if not np.any(a):
        n_s = min(n_r, n_t)
        b = BidiagonalReal(np.zeros(n_s), np.zeros(n_s - 1))
        return Decomposition(q=np.eye(n_r, dtype=complex), p=np.eye(n_t, n_s, dtype=complex), scheme="CBD", b=b)
    if n_r >= n_t:
        q, d, e, p = _bidiagonalize_square_or_tall(a)
    else:
        # H = L Z^H with L = R^H square (n_r x n_r)
        z, r = np.linalg.qr(a.conj().T)
        q, d, e, p_sq = _bidiagonalize_square_or_tall(r.conj().T)
        p = z @ p_sq
    return Decomposition(q=q, p=p, scheme="CBD", b=BidiagonalReal(d, e))


def givens_pair(lambda_hi: float, lambda_lo: float, b11_target: float, tol: float = 1e-12):
    """Rotate ``diag(lambda_hi, lambda_lo)`` into ``[[b11, m], [0, b22]]``.

    Returns ``(g_left, g_right, block)`` with
    ``g_left @ diag(lambda_hi, lambda_lo) @ g_right == block.dense()``,
    ``b22 = lambda_hi * lambda_lo / b11`` and ``m = s c (lambda_hi^2 - lambda_lo^2) / b11 >= 0``.
    """
    hi, lo, b11 = float(lambda_hi), float(lambda_lo), float(b11_target)
    if not lo > 0 or hi < lo:
        raise ValueError(f"need lambda_hi >= lambda_lo > 0, got ({hi}, {lo})")
    if hi == lo:
        if abs(b11 - hi) > tol * hi:
            raise ValueError("with equal singular values b11 must equal them")
        block = BidiagonalReal(np.array([hi, lo]), np.array([0.0]), (0,))
        return np.eye(2), np.eye(2), block
    geo = np.sqrt(hi * lo)
    if b11 > hi * (1 + tol) or b11 < geo * (1 - tol):
        raise ValueError(f"b11_target={b11} outside feasible [{geo}, {hi}]")
    b11 = min(max(b11, geo), hi)
    c2 = (b11**2 - lo**2) / (hi**2 - lo**2)
    c2 = min(max(c2, 0.0), 1.0)
    c = np.sqrt(c2)
    s = np.sqrt(1.0 - c2)
    m = s * c * (hi**2 - lo**2) / b11
    g_left = np.array([[c * hi, -s * lo], [s * lo, c * hi]]) / b11
    g_right = np.array([[c, s], [-s, c]])
    sup = np.array([m])
    bounds = (0,) if m == 0.0 else ()
    block = BidiagonalReal(np.array([b11, hi * lo / b11]), sup, bounds)
    return g_left, g_right, block


def assemble_permuted(factors: SVDFactors, plan):
    """Reorder singular triplets so each pair ``(i, j)`` is adjacent (hi, lo).

    ``plan`` provides ``pairs`` and ``singletons`` with 1-based indices.
    Returns ``(u_tilde, lambda_tilde, v_tilde)`` with
    ``u_tilde diag(lambda_tilde) v_tilde^H == U diag(sigma) V^H``.
    """
    order = permutation_order(plan, factors.n_s)
    u_t = factors.u.copy()
    u_t[:, : factors.n_s] = factors.u[:, order]
    return u_t, factors.sigma[order].copy(), factors.v[:, order].copy()


def permutation_order(plan, n_s: int) -> np.ndarray:
    """0-based source index for each position of the permuted singular values."""
    seq: list[int] = []
    for i, j in plan.pairs:
        seq += [i, j]
    seq += list(plan.singletons)
    if sorted(seq) != list(range(1, n_s + 1)):
        raise ValueError(f"pairing plan is not a permutation of 1..{n_s}: {seq}")
    return np.asarray(seq, dtype=int) - 1


def gmd(h, rel_tol: float = 1e-12) -> Decomposition:
    """Geometric mean decomposition ``H = Q R P^H`` with equal ``R`` diagonals.

    Starts from the SVD and repeatedly merges the largest remaining diagonal
    above the geometric mean with one below it by a pair of 2x2 rotations,
    fixing one diagonal entry per step.
    """
    a = as_matrix(h)
    f = svd(a)
    n = f.n_s
    lam = f.sigma
    if lam[-1] <= rel_tol * lam[0]:
        raise NumericalFailure("GMD requires a full-rank channel (zero singular value)")
    target = float(np.exp(np.mean(np.log(lam))))
    r = np.diag(lam.astype(float))
    q = f.u.copy()
    p = f.v.copy()
    for k in range(n - 1):
        # bring the remaining diagonal pair straddling the target to positions k, k+1
        tail = np.diag(r)[k:]
        above = k + int(np.argmax(tail))
        below = k + int(np.argmin(tail))
        if tail.max() - tail.min() <= rel_tol * target:
            continue
        if below == k:  # the first swap moves it
            below = above
        for src, dst in ((above, k), (below, k + 1)):
            if src != dst:
                perm = np.arange(n)
                perm[[src, dst]] = perm[[dst, src]]
                r = r[np.ix_(perm, perm)]
                q[:, :n] = q[:, perm]
                p = p[:, perm]
        d1, d2 = r[k, k], r[k + 1, k + 1]
        c2 = (target**2 - d2**2) / (d1**2 - d2**2)
        c = np.sqrt(min(max(c2, 0.0), 1.0))
        s = np.sqrt(1.0 - c * c)
        g_right = np.array([[c, -s], [s, c]])
        x = np.array([[d1, 0.0], [0.0, d2]]) @ g_right
        # left rotation zeroing the (2,1) entry of x
        col = x[:, 0]
        nrm = np.hypot(col[0], col[1])
        g_left = np.array([[col[0], col[1]], [-col[1], col[0]]]) / nrm
        idx = [k, k + 1]
        r[:, idx] = r[:, idx] @ g_right
        r[idx, :] = g_left @ r[idx, :]
        r[k + 1, k] = 0.0
        p[:, idx] = p[:, idx] @ g_right
        q[:, idx] = q[:, idx] @ g_left.T
        if r[k, k] < 0:
            r[k, :] *= -1
            q[:, k] *= -1
    return Decomposition(q=q, p=p, scheme="GMD", r=r, sigma=lam)
