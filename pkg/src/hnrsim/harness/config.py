"""Experiment configuration files.

A config is a flat ``key = value`` text file; ``#`` starts a comment and
unknown keys are rejected.  Lists are comma separated.  A bare name such as
``toy`` resolves to ``<config dir>/toy.cfg`` where the config dir is
``$HNRSIM_CONFIG_DIR`` if set, else the configs shipped with the package.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .. import fec
from ..channel import ChannelSpec
from ..hnr.model import HnrConfig
from ..link import FrameLayout
from ..phy import CONSTELLATIONS, GridSpec, constellation
from ..snr import SNR_MODES

CONFIG_DIR_ENV = "HNRSIM_CONFIG_DIR"
PACKAGE_CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
RECEIVERS = ("baseline", "perfect_csi", "hnr")


class ConfigError(ValueError):
    pass


def config_dir() -> Path:
    env = os.environ.get(CONFIG_DIR_ENV)
    return Path(env) if env else PACKAGE_CONFIG_DIR


def resolve_config_path(name_or_path: str | os.PathLike) -> Path:
    p = Path(name_or_path)
    if p.suffix == ".cfg" or p.exists() or len(p.parts) > 1:
        return p
    return config_dir() / f"{p.name}.cfg"


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    constellation: str = "qam64"
    code: str = "peg:1024:3:6:0"
    bp_iters: int = 10
    pilot_seed: int = 0
    receiver: str = "baseline"
    snr_db: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    snr_mode: str = "esn0"
    frames: int = 100
    noiseless: bool = False
    seed: int = 0
    scale: float = 1e-3
    hnr: HnrConfig = field(default_factory=HnrConfig)
    batch_size: int = 32
    train_snr_min: float = 0.0
    train_snr_max: float = 12.0
    val_frames: int = 64
    val_every: int = 100
    out: str = "results"
    checkpoint: str = ""
    base_dir: str = "."

    def __post_init__(self):
        if not self.snr_db:
            raise ConfigError("snr_db must list at least one SNR point")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.constellation not in CONSTELLATIONS:
            raise ConfigError(f"unknown constellation {self.constellation!r}")
        if self.receiver not in RECEIVERS:
            raise ConfigError(f"unknown receiver {self.receiver!r}; choose from {RECEIVERS}")
        if self.snr_mode not in SNR_MODES:
            raise ConfigError(f"unknown snr_mode {self.snr_mode!r}")
        if self.scale <= 0 or self.batch_size < 1:
            raise ConfigError("scale and batch_size must be positive")

    def pcm(self) -> fec.ParityCheckMatrix | None:
        return resolve_code(self.code, Path(self.base_dir))

    def layout(self) -> FrameLayout:
        return FrameLayout(self.grid, constellation(self.constellation), self.pcm(),
                           self.pilot_seed)

    def out_path(self, name: str) -> Path:
        return Path(self.out) / name

    def checkpoint_path(self) -> Path | None:
        return Path(self.checkpoint) if self.checkpoint else None

    def override(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def resolve_code(code: str, base_dir: Path = Path(".")) -> fec.ParityCheckMatrix | None:
    """``none`` (bypass), ``hamming74``, ``peg:n:dv:dc[:seed]`` or an alist path."""
    c = code.strip()
    if c.lower() == "none":
        return None
    if c.lower() == "hamming74":
        return fec.hamming74()
    if c.lower().startswith("peg:"):
        try:
            nums = [int(v) for v in c.split(":")[1:]]
        except ValueError:
            raise ConfigError(f"bad PEG code spec {code!r}") from None
        if len(nums) not in (3, 4):
            raise ConfigError("PEG code spec is peg:n:dv:dc[:seed]")
        return fec.build_regular_ldpc(*nums)
    path = Path(c)
    if not path.is_absolute():
        path = base_dir / path
    try:
        return fec.load_alist(path.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read alist file {path}: {err}") from None


# ----------------------------------------------------------------- parsing

def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


# key -> (section, field, parser, scale to internal units)
_GRID = {"fft_size": int, "guard_left": int, "guard_right": int, "num_symbols": int,
         "pilot_symbols": _ints, "dc_null": _bool}
_CHANNEL = {"channel": ("model", str, 1.0), "delay_spread_ns": ("delay_spread", float, 1e-9),
            "speed_min_kmh": ("speed_min", float, 1.0), "speed_max_kmh": ("speed_max", float, 1.0),
            "carrier_ghz": ("carrier_freq", float, 1e9),
            "subcarrier_spacing_khz": ("subcarrier_spacing", float, 1e3),
            "num_rx": ("num_rx", int, 1.0), "num_taps": ("num_taps", int, 1.0)}
_HNR = {f.name: (_bool if f.type in ("bool", bool) else int) for f in fields(HnrConfig)}
_TOP = {"constellation": str, "code": str, "bp_iters": int, "pilot_seed": int, "receiver": str,
        "snr_db": _floats, "snr_mode": str, "frames": int, "noiseless": _bool, "seed": int,
        "scale": float, "batch_size": int, "train_snr_min": float, "train_snr_max": float,
        "val_frames": int, "val_every": int, "out": str, "checkpoint": str}


def parse_config(text: str, base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None,
                                   comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from None
    grid, chan, hnr, top = {}, {}, {}, {}
    for key, raw in cp["config"].items():
        try:
            if key in _GRID:
                grid[key] = _GRID[key](raw)
            elif key in _CHANNEL:
                name, conv, mult = _CHANNEL[key]
                val = conv(raw.strip())
                chan[name] = val * mult if mult != 1.0 else val
            elif key in _HNR:
                hnr[key] = _HNR[key](raw)
            elif key in _TOP:
                top[key] = _TOP[key](raw.strip()) if _TOP[key] is not str else raw.strip()
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {err}") from None
    try:
        return ExperimentConfig(grid=GridSpec(**grid), channel=ChannelSpec(**chan),
                                hnr=HnrConfig(**hnr), base_dir=str(base_dir), **top)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None


def load_config(name_or_path: str | os.PathLike) -> ExperimentConfig:
    path = resolve_config_path(name_or_path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text, base_dir=path.parent)
