"""Command-line experiment driver.

``mimo-lab {decompose,eccn,rate,ber} --config cfg.json --out DIR [--plot] [--threads N] [--seed S]``

Exit status: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .channel import PRESETS, ChannelFileError, ChannelModel, load_matrix
from .detect import build_constellation
from .fec import BerConfig, CodeSpec, ber_run
from .linalg import NumericalFailure, reconstruction_residual
from .metrics import RATE_SCHEMES, EccnSummary, RateEstimate, sweep
from .schemes import NU_DEFAULT, POWER_POLICIES, SCHEME_NAMES, NoiseModel, design

COMMANDS = ("decompose", "eccn", "rate", "ber")
ENV_THREADS = "MIMO_LAB_THREADS"

RATE_HEADER = "scheme,snr_db,rate,std_err,trials,eccn_mean"
ECCN_HEADER = "scheme,snr_db,eccn_mean,eccn_p50,eccn_p95"
BER_HEADER = "scheme,snr_db,frames,bit_errors,ber,frame_errors,fer"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


# key -> (expected python types, default); None default means required for the commands that use it
_KEYS: dict[str, tuple[tuple[type, ...], Any]] = {
    "command": ((str,), None),
    "channel": ((str,), "rayleigh"),
    "n_r": ((int,), 8),
    "n_t": ((int,), 8),
    "rho": ((int, float), None),
    "channel_path": ((str,), None),
    "schemes": ((list,), ["svd", "cbd", "gpcbd"]),
    "constellation": ((int,), 16),
    "snr_grid_db": ((list,), [0.0, 10.0, 20.0]),
    "trials": ((int,), 100),
    "uses_per_trial": ((int,), 32),
    "frames": ((int,), 1000),
    "min_errors": ((int,), 100),
    "info_bits_per_frame": ((int,), None),
    "code_rate": ((str,), "1/2"),
    "interleaver_seed": ((int,), 0),
    "master_seed": ((int,), 0),
    "power": ((str,), "uniform"),
    "nu_threshold": ((int, float), NU_DEFAULT),
    "demod": ((str,), "bcjr"),
    "output": ((str,), None),
    "plot_output": ((str,), None),
    "matrix_path": ((str,), None),
    "scheme": ((str,), "gpcbd"),
    "snr_db": ((int, float), 30.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    channel: ChannelModel
    schemes: tuple[str, ...]
    m: int
    snr_grid_db: tuple[float, ...]
    trials: int = 100
    uses_per_trial: int = 32
    frames: int = 1000
    min_errors: int = 100
    info_bits_per_frame: Optional[int] = None
    code_rate: str = "1/2"
    interleaver_seed: int = 0
    master_seed: int = 0
    power: str = "uniform"
    nu_threshold: float = NU_DEFAULT
    demod: str = "bcjr"
    output: Optional[str] = None
    plot_output: Optional[str] = None
    matrix_path: Optional[str] = None
    scheme: str = "gpcbd"
    snr_db: float = 30.0

    @classmethod
    def from_dict(cls, raw: dict, command: str) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        for key, value in raw.items():
            if key not in _KEYS:
                raise ConfigError(key, "unknown key")
            types = _KEYS[key][0]
            if isinstance(value, bool) or not isinstance(value, types):
                raise ConfigError(key, f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")
        get = lambda k: raw.get(k, _KEYS[k][1])
        if "command" in raw and raw["command"] != command:
            raise ConfigError("command", f"config is for {raw['command']!r}, invoked as {command!r}")

        channel = _channel_from(raw, get)
        allowed = RATE_SCHEMES if command in ("rate", "ber") else tuple(SCHEME_NAMES)
        schemes = get("schemes")
        for s in schemes:
            if not isinstance(s, str) or s.lower() not in allowed:
                raise ConfigError("schemes", f"unknown or unsupported scheme {s!r} for {command}; expected {list(allowed)}")
        low = [s.lower() for s in schemes]
        if len(set(low)) != len(low):
            raise ConfigError("schemes", f"duplicate scheme names in {schemes}")
        if get("scheme").lower() not in SCHEME_NAMES:
            raise ConfigError("scheme", f"unknown scheme {get('scheme')!r}; expected {list(SCHEME_NAMES)}")
        try:
            build_constellation(get("constellation"))
        except ValueError as exc:
            raise ConfigError("constellation", str(exc)) from None
        grid = get("snr_grid_db")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in grid):
            raise ConfigError("snr_grid_db", "entries must be numbers")
        for k in ("trials", "uses_per_trial", "frames", "min_errors"):
            if get(k) < 1:
                raise ConfigError(k, "must be >= 1")
        if get("info_bits_per_frame") is not None and get("info_bits_per_frame") < 1:
            raise ConfigError("info_bits_per_frame", "must be >= 1")
        if get("power").lower() not in POWER_POLICIES:
            raise ConfigError("power", f"unknown policy {get('power')!r}; expected {list(POWER_POLICIES)}")
        if get("demod") not in ("bcjr", "maxlog"):
            raise ConfigError("demod", f"expected 'bcjr' or 'maxlog', got {get('demod')!r}")
        if get("code_rate") not in ("1/2", "3/4"):
            raise ConfigError("code_rate", f"expected '1/2' or '3/4', got {get('code_rate')!r}")
        if not get("nu_threshold") > 0:
            raise ConfigError("nu_threshold", "must be positive")
        if get("master_seed") < 0 or get("interleaver_seed") < 0:
            raise ConfigError("master_seed", "seeds must be non-negative")
        return cls(
            command=command,
            channel=channel,
            schemes=tuple(low),
            m=get("constellation"),
            snr_grid_db=tuple(float(v) for v in grid),
            trials=get("trials"),
            uses_per_trial=get("uses_per_trial"),
            frames=get("frames"),
            min_errors=get("min_errors"),
            info_bits_per_frame=get("info_bits_per_frame"),
            code_rate=get("code_rate"),
            interleaver_seed=get("interleaver_seed"),
            master_seed=get("master_seed"),
            power=get("power").lower(),
            nu_threshold=float(get("nu_threshold")),
            demod=get("demod"),
            output=get("output"),
            plot_output=get("plot_output"),
            matrix_path=get("matrix_path"),
            scheme=get("scheme").lower(),
            snr_db=float(get("snr_db")),
        )


def _channel_from(raw: dict, get) -> ChannelModel:
    name = get("channel")
    n_r, n_t = get("n_r"), get("n_t")
    if n_r < 1 or n_t < 1:
        raise ConfigError("n_r" if n_r < 1 else "n_t", "antenna counts must be >= 1")
    if name == "file":
        path = get("channel_path")
        if not path:
            raise ConfigError("channel_path", "required when channel is 'file'")
        try:
            h = load_matrix(path)
        except ChannelFileError as exc:
            raise ConfigError("channel_path", str(exc)) from None
        return ChannelModel("FromFile", h.shape[0], h.shape[1], path=path)
    if name not in PRESETS:
        raise ConfigError("channel", f"unknown preset {name!r}; expected {sorted(PRESETS) + ['file']}")
    kind, rho = PRESETS[name]
    if raw.get("rho") is not None:
        if kind != "KroneckerCorrelated":
            raise ConfigError("rho", f"preset {name!r} takes no correlation")
        rho = float(raw["rho"])
    try:
        return ChannelModel(kind, n_r, n_t, rho, rho)
    except ValueError as exc:
        raise ConfigError("rho", str(exc)) from None


# --- output -----------------------------------------------------------------

def atomic_write(path, data: bytes) -> None:
    """Write to a temporary sibling, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x: float) -> str:
    return format(float(x), ".12g")


def rows_to_csv(rows: Sequence, kind: str) -> str:
    out = io.StringIO()
    if kind == "rate":
        out.write(RATE_HEADER + "\n")
        for r in rows:
            out.write(",".join([r.scheme, _num(r.snr_db), _num(r.rate), _num(r.std_error), str(r.trials),
                                _num(r.eccn_mean)]) + "\n")
    elif kind == "eccn":
        out.write(ECCN_HEADER + "\n")
        for r in rows:
            out.write(",".join([r.scheme, _num(r.snr_db), _num(r.eccn_mean), _num(r.eccn_p50), _num(r.eccn_p95)]) + "\n")
    else:
        out.write(BER_HEADER + "\n")
        for r in rows:
            out.write(",".join([r.scheme, _num(r.snr_db), str(r.frames), str(r.bit_errors), _num(r.ber),
                                str(r.frame_errors), _num(r.fer)]) + "\n")
    return out.getvalue()


def plot_svg(rows: Sequence, kind: str) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ykey = {"rate": ("rate", "Rate (bits per channel use)"), "eccn": ("eccn_mean", "Mean ECCN"),
            "ber": ("ber", "BER")}[kind]
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme in dict.fromkeys(r.scheme for r in rows):
        pts = [(r.snr_db, getattr(r, ykey[0])) for r in rows if r.scheme == scheme]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=scheme)
    if kind in ("eccn", "ber"):
        ax.set_yscale("log")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel(ykey[1])
    ax.grid(True, alpha=0.3)
    ax.legend()
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "mimo-lab"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


# --- commands ---------------------------------------------------------------

def resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(ENV_THREADS, f"expected an integer, got {env!r}") from None
    return os.cpu_count() or 1


def run_sweep(cfg: ExperimentConfig, threads: int) -> list:
    c = build_constellation(cfg.m)
    if cfg.command == "ber":
        bc = BerConfig(cfg.channel, cfg.schemes, cfg.m, cfg.snr_grid_db, CodeSpec(rate=cfg.code_rate),
                       cfg.info_bits_per_frame, cfg.interleaver_seed, cfg.frames, cfg.min_errors, cfg.master_seed,
                       cfg.demod, cfg.power, cfg.nu_threshold)
        return ber_run(bc, workers=threads)
    return sweep(cfg.schemes, cfg.snr_grid_db, cfg.channel, c, cfg.trials, cfg.master_seed, cfg.command,
                 cfg.demod, cfg.power, cfg.nu_threshold, cfg.uses_per_trial, threads)


def decompose_report(h, scheme: str, snr_db: float, m: int, nu: float = NU_DEFAULT, power: str = "uniform") -> str:
    c = build_constellation(m)
    d = design(scheme, h, NoiseModel.from_snr_db(snr_db), c, power, nu)
    dec = d.decomposition
    fmt = lambda v: "[" + ", ".join(format(float(x), ".10g") for x in v) + "]"
    lines = [f"scheme: {d.scheme}", f"snr_db: {snr_db:g}", f"M: {m}"]
    if dec.b is not None:
        lines += [f"B diag: {fmt(dec.b.diag)}", f"B superdiag: {fmt(dec.b.superdiag)}"]
    else:
        lines += [f"R diag: {fmt(dec.diag)}"]
    lines.append(f"ECCN: {d.eccn:.10g}")
    if d.plan is not None:
        lines.append(f"cutoff N: {d.plan.cutoff_n}")
        lines.append("pairs: " + (", ".join(f"({i},{j})" for i, j in d.plan.pairs) or "none"))
        lines.append("singletons: " + (", ".join(str(i) for i in d.plan.singletons) or "none"))
        lines.append(f"mu per pair: {fmt(d.mu_per_pair)}")
    lines.append(f"power: {d.power.policy} {fmt(d.power.phi)}")
    if d.floor_clamped:
        lines.append("warning: singular values clamped at the floor")
    lines.append(f"reconstruction residual: {reconstruction_residual(h, dec):.3e}")
    return "\n".join(lines) + "\n"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimo-lab", description="GP-CBD transceiver experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config (flat keys)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--plot", action="store_true", help="also write an SVG chart")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (fallback ${ENV_THREADS}, then CPU count)")
    p.add_argument("--seed", type=int, default=None, help="master seed, overrides the config")
    p.add_argument("--matrix", help="decompose: channel matrix file")
    p.add_argument("--scheme", help="decompose: scheme name")
    p.add_argument("--snr-db", type=float, help="decompose: SNR in dB")
    p.add_argument("--m", type=int, help="decompose: constellation order")
    return p


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path} ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _run(args) -> int:
    raw = _load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        raw = {**raw, "master_seed": args.seed}
    if args.command == "decompose":
        overrides = {"matrix_path": args.matrix, "scheme": args.scheme, "snr_db": args.snr_db, "constellation": args.m}
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    cfg = ExperimentConfig.from_dict(raw, args.command)
    threads = resolve_threads(args.threads)
    out = Path(args.out)

    if cfg.command == "decompose":
        if not cfg.matrix_path:
            raise ConfigError("matrix_path", "decompose needs a matrix file (--matrix)")
        try:
            h = load_matrix(cfg.matrix_path)
        except ChannelFileError as exc:
            raise ConfigError("matrix_path", str(exc)) from None
        report = decompose_report(h, cfg.scheme, cfg.snr_db, cfg.m, cfg.nu_threshold, cfg.power)
        sys.stdout.write(report)
        if cfg.output:
            atomic_write(out / cfg.output, report.encode())
        return 0

    rows = run_sweep(cfg, threads)
    csv_name = cfg.output or f"{cfg.command}.csv"
    atomic_write(out / csv_name, rows_to_csv(rows, cfg.command).encode())
    if args.plot:
        atomic_write(out / (cfg.plot_output or f"{cfg.command}.svg"), plot_svg(rows, cfg.command))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage line
        return 2 if exc.code else 0
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"mimo-lab: config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"mimo-lab: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
