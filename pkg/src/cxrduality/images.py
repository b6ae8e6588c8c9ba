"""Binary PGM masks plus float32 rasters stored beside a key=value sidecar."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .volume import VolumeFormatError, read_meta, write_meta


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.dtype != np.uint8:
        raise ValueError(f"PGM writer expects uint8, got {img.dtype}")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise VolumeFormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise VolumeFormatError(f"{path}: only 8-bit PGM is supported")
    payload = data[pos + 1 : pos + 1 + w * h]
    if len(payload) != w * h:
        raise VolumeFormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) > 0


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


def _strip(path) -> Path:
    path = Path(path)
    if path.suffix in (".raw", ".meta"):
        path = Path(str(path)[: -len(path.suffix)])
    return path


def save_float_image(path, values: np.ndarray, **meta) -> None:
    """``<path>.raw`` float32 LE rows top to bottom, plus a key=value sidecar."""
    stem = _strip(path)
    h, w = values.shape
    Path(f"{stem}.raw").write_bytes(np.ascontiguousarray(values, dtype="<f4").tobytes())
    write_meta(Path(f"{stem}.meta"), {"width": w, "height": h, "dtype": "float32le", **meta})


def load_float_image(path) -> tuple[np.ndarray, dict]:
    stem = _strip(path)
    meta = read_meta(Path(f"{stem}.meta"))
    w, h = int(meta["width"]), int(meta["height"])
    payload = Path(f"{stem}.raw").read_bytes()
    if len(payload) != 4 * w * h:
        raise VolumeFormatError(f"{stem}.raw: size does not match {w}x{h}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64), meta


def save_heatmap_stack(path, maps: np.ndarray) -> None:
    maps = np.asarray(maps)
    if maps.ndim == 2:
        maps = maps[None]
    count, h, w = maps.shape
    stem = _strip(path)
    Path(f"{stem}.raw").write_bytes(np.ascontiguousarray(maps, dtype="<f4").tobytes())
    write_meta(Path(f"{stem}.meta"), {"count": count, "width": w, "height": h, "dtype": "float32le"})


def load_heatmap_stack(path) -> np.ndarray:
    """Returns a float64 array of shape (count, height, width)."""
    stem = _strip(path)
    meta = read_meta(Path(f"{stem}.meta"))
    try:
        count, w, h = int(meta["count"]), int(meta["width"]), int(meta["height"])
    except (KeyError, ValueError) as exc:
        raise VolumeFormatError(f"bad heatmap sidecar {stem}.meta: {exc}") from exc
    raw = Path(f"{stem}.raw")
    if not raw.exists():
        raise VolumeFormatError(f"missing heatmap payload {raw}")
    payload = raw.read_bytes()
    if len(payload) != 4 * count * w * h:
        raise VolumeFormatError(f"{raw}: size does not match {count}x{h}x{w}")
    return np.frombuffer(payload, dtype="<f4").reshape(count, h, w).astype(np.float64)
