"""Payload round trips: send arbitrary bytes through the link and score the
reconstruction as 8-bit samples (MSE, RMSE, PSNR, optional L1 map)."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..seeding import derive_seed
from .config import ExperimentConfig
from .sweep import frame_noise_var, make_receiver, simulate_frame

PSNR_CAP_DB = 100.0
PSNR_CAP_MSE = 255.0 ** 2 * 1e-10


@dataclass(frozen=True)
class PayloadReport:
    byte_count: int
    padded_bits: int
    frames: int
    ber: float
    mse: float
    rmse: float
    psnr_db: float
    l1_map: str | None = None


def bytes_to_bits(data: bytes) -> np.ndarray:
    """Most-significant bit first."""
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def pad_bits(bits, block: int) -> np.ndarray:
    """Zero-pad to a whole number of ``block``-bit frames (at least one frame)."""
    b = np.asarray(bits, dtype=np.uint8)
    frames = max(1, -(-b.size // block))
    return np.concatenate([b, np.zeros(frames * block - b.size, dtype=np.uint8)])


def strip_bits(bits, length: int) -> np.ndarray:
    return np.asarray(bits)[:length]


def psnr(mse: float) -> float:
    if mse < PSNR_CAP_MSE:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0 ** 2 / mse))


def distortion(original: bytes, received: bytes) -> tuple[float, float, float]:
    """(MSE, RMSE, PSNR) over 8-bit samples."""
    a = np.frombuffer(bytes(original), dtype=np.uint8).astype(np.float64)
    b = np.frombuffer(bytes(received), dtype=np.uint8).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError("original and received payloads differ in length")
    mse = float(np.mean((a - b) ** 2)) if a.size else 0.0
    return mse, math.sqrt(mse), psnr(mse)


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    head = data.split(maxsplit=4)
    if head[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(head[1]), int(head[2]), int(head[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(head[4][: w * h], dtype=np.uint8).reshape(h, w)


def l1_map(original: bytes, received: bytes, shape: tuple[int, int, int]) -> np.ndarray:
    """Per-pixel |difference| (mean over channels, rounded) as an 8-bit image."""
    w, h, c = shape
    a = np.frombuffer(bytes(original), dtype=np.uint8).astype(np.int16).reshape(h, w, c)
    b = np.frombuffer(bytes(received), dtype=np.uint8).astype(np.int16).reshape(h, w, c)
    return np.rint(np.abs(a - b).mean(axis=-1)).astype(np.uint8)


def run_payload(data: bytes, cfg: ExperimentConfig, snr_db: float | None = None,
                image_shape: tuple[int, int, int] | None = None,
                l1_path: str | os.PathLike | None = None, checkpoint=None) -> PayloadReport:
    """Send ``data`` frame by frame with ``cfg.receiver`` at ``snr_db`` (default:
    the config's first SNR point).  ``image_shape`` is (width, height, channels)."""
    data = bytes(data)
    if not data:
        raise ValueError("payload is empty")
    if image_shape is not None and int(np.prod(image_shape)) != len(data):
        raise ValueError(f"image shape {image_shape} needs {int(np.prod(image_shape))} bytes, "
                         f"payload has {len(data)}")
    snr = cfg.snr_db[0] if snr_db is None else snr_db
    layout = cfg.layout()
    receiver = make_receiver(cfg, layout, checkpoint)
    nv = frame_noise_var(cfg, snr, layout)
    bits = bytes_to_bits(data)
    padded = pad_bits(bits, layout.info_bits)
    blocks = padded.reshape(-1, layout.info_bits)
    out = np.empty_like(blocks)
    for i, block in enumerate(blocks):
        frame = simulate_frame(layout, cfg.channel, nv, derive_seed(cfg.seed, "payload", i), block)
        out[i] = receiver(frame).info
    got = strip_bits(out.reshape(-1), bits.size)
    received = bits_to_bytes(got)
    mse, rmse, p = distortion(data, received)
    map_path = None
    if image_shape is not None and l1_path is not None:
        write_pgm(l1_path, l1_map(data, received, image_shape))
        map_path = str(l1_path)
    ber = float(np.mean(got != bits))
    return PayloadReport(len(data), padded.size, blocks.shape[0], ber, mse, rmse, p, map_path)


# ------------------------------------------------------- synthetic payloads

def synthetic_image(width: int = 32, height: int = 32) -> tuple[bytes, tuple[int, int, int]]:
    """Deterministic 8-bit grayscale test card: diagonal ramp with a checker
    overlay and a dark disc, covering the full 0..255 range."""
    y, x = np.mgrid[0:height, 0:width]
    ramp = (x + y) * 255.0 / max(width + height - 2, 1)
    checker = np.where(((x // 4) + (y // 4)) % 2 == 0, 24.0, -24.0)
    disc = (x - width / 2) ** 2 + (y - height / 2) ** 2 < (min(width, height) / 4) ** 2
    img = np.clip(ramp + checker, 0, 255)
    img[disc] = 0
    return img.astype(np.uint8).tobytes(), (width, height, 1)


def audio_tone(seconds: float = 0.05, rate: int = 8000, freq: float = 440.0) -> bytes:
    """Unsigned 8-bit PCM sine tone."""
    t = np.arange(int(round(seconds * rate))) / rate
    return np.rint(127.5 + 127.5 * np.sin(2 * np.pi * freq * t)).astype(np.uint8).tobytes()
