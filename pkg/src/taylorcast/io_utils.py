"""Deterministic artifact writers: CSV reports and binary PGM/PPM images."""

from __future__ import annotations

import numpy as np


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    """Comma-separated, header row, '.' decimals, LF endings, %.10g floats."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def quantize_frame(frame: np.ndarray) -> np.ndarray:
    """[0,1] floats to u8 with round-half-even."""
    return np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str, frame: np.ndarray) -> None:
    """Binary PGM (P5) of a grayscale frame [H, W] or [1, H, W]."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        if frame.shape[0] != 1:
            raise ValueError(f"PGM needs one channel, got {frame.shape[0]}")
        frame = frame[0]
    if frame.ndim != 2:
        raise ValueError(f"expected [H, W] grayscale frame, got shape {frame.shape}")
    data = quantize_frame(frame)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.shape[1]} {frame.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_ppm(path: str, frame: np.ndarray) -> None:
    """Binary PPM (P6) of an RGB frame [3, H, W]."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] RGB frame, got shape {frame.shape}")
    data = quantize_frame(np.moveaxis(frame, 0, 2))
    with open(path, "wb") as fh:
        fh.write(f"P6\n{frame.shape[2]} {frame.shape[1]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Inverse of write_pgm (values back in [0, 1])."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM: {magic!r}")
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        raw = fh.read(width * height)
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width).astype(np.float64) / maxval
