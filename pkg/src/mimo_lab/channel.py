"""Channel ensembles, seeding and the plain-text matrix file format."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .linalg import as_matrix

__all__ = [
    "ChannelModel",
    "ChannelRealization",
    "ChannelFileError",
    "PRESETS",
    "trial_rng",
    "draw",
    "save",
    "load",
    "save_matrix",
    "load_matrix",
    "exponential_correlation",
]

KINDS = ("Rayleigh", "KroneckerCorrelated", "FromFile")


class ChannelFileError(ValueError):
    """Malformed or unreadable matrix file; ``line`` is 1-based (0 if not line-specific)."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ChannelModel:
    kind: str
    n_r: int
    n_t: int
    rho_tx: float = 0.0
    rho_rx: float = 0.0
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.n_r < 1 or self.n_t < 1:
            raise ValueError("antenna counts must be >= 1")
        for name in ("rho_tx", "rho_rx"):
            rho = getattr(self, name)
            if not 0.0 <= rho < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {rho}")
        if self.kind == "FromFile" and not self.path:
            raise ValueError("FromFile channel needs a path")

    @classmethod
    def rayleigh(cls, n_r: int, n_t: int) -> "ChannelModel":
        return cls("Rayleigh", n_r, n_t)

    @classmethod
    def kronecker(cls, n_r: int, n_t: int, rho_tx: float, rho_rx: Optional[float] = None) -> "ChannelModel":
        return cls("KroneckerCorrelated", n_r, n_t, rho_tx, rho_tx if rho_rx is None else rho_rx)


# name -> (kind, rho); the 0.95 preset stands in for strongly correlated CDL arrays
PRESETS = {
    "rayleigh": ("Rayleigh", 0.0),
    "kron095": ("KroneckerCorrelated", 0.95),
}


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    seed: int
    model: ChannelModel


def trial_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, *index)``.

    Counter-based and keyed, so trial ``i`` gets the same stream regardless of
    which worker runs it or in what order.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))


def exponential_correlation(n: int, rho: float) -> np.ndarray:
    k = np.arange(n)
    return rho ** np.abs(k[:, None] - k[None, :])


def _sqrtm_psd(r: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(r)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples: independent N(0, 1/2) real and imaginary parts."""
    x = rng.standard_normal(tuple(shape) + (2,))
    return (x[..., 0] + 1j * x[..., 1]) * np.sqrt(0.5)


def draw(model: ChannelModel, seed: int, *index: int) -> ChannelRealization:
    """Draw one channel matrix; identical ``(model, seed, index)`` gives identical ``H``."""
    if model.kind == "FromFile":
        real = load(model.path)
        if real.h.shape != (model.n_r, model.n_t):
            raise ChannelFileError(model.path, 1, f"expected {model.n_r}x{model.n_t}, file holds {real.h.shape}")
        return ChannelRealization(real.h, int(seed), model)
    rng = trial_rng(seed, *index)
    w = complex_gaussian(rng, (model.n_r, model.n_t))
    if model.kind == "KroneckerCorrelated":
        if model.rho_rx > 0:
            w = _sqrtm_psd(exponential_correlation(model.n_r, model.rho_rx)) @ w
        if model.rho_tx > 0:
            w = w @ _sqrtm_psd(exponential_correlation(model.n_t, model.rho_tx))
    return ChannelRealization(w, int(seed), model)


def save_matrix(h, path) -> None:
    """Write ``rows,cols`` then one ``re,im`` line per entry (row-major, 17 digits).

    The file is written to a temporary sibling and renamed into place.
    """
    a = as_matrix(h)
    lines = [f"{a.shape[0]},{a.shape[1]}"]
    lines += [f"{z.real:.17g},{z.imag:.17g}" for z in a.reshape(-1)]
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_matrix(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ChannelFileError(path, 0, f"cannot read file ({exc.strerror})") from exc
    lines = text.splitlines()
    if not lines:
        raise ChannelFileError(path, 1, "empty file, expected header 'rows,cols'")
    try:
        rows, cols = (int(t) for t in lines[0].split(","))
    except ValueError:
        raise ChannelFileError(path, 1, f"malformed header {lines[0]!r}, expected 'rows,cols'") from None
    if rows < 1 or cols < 1:
        raise ChannelFileError(path, 1, f"non-positive dimensions {rows}x{cols}")
    body = [ln for ln in lines[1:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != rows * cols:
        raise ChannelFileError(path, min(len(body) + 2, rows * cols + 2),
                               f"expected {rows * cols} entry lines, found {len(body)}")
    out = np.empty(rows * cols, dtype=complex)
    for k, ln in enumerate(body):
        try:
            re_s, im_s = ln.split(",")
            out[k] = complex(float(re_s), float(im_s))
        except ValueError:
            raise ChannelFileError(path, k + 2, f"malformed entry {ln!r}, expected 're,im'") from None
        if not np.isfinite(out[k]):
            raise ChannelFileError(path, k + 2, "non-finite entry")
    return out.reshape(rows, cols)


def save(ch: ChannelRealization, path) -> None:
    save_matrix(ch.h, path)


def load(path) -> ChannelRealization:
    h = load_matrix(path)
    return ChannelRealization(h, 0, ChannelModel("FromFile", h.shape[0], h.shape[1], path=str(path)))
