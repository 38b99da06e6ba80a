"""8-bit PNG (via Pillow) and PPM image files; arrays are float ``(H, W, 3)`` in [0, 1]."""
import os

import numpy as np


class ImageFormatError(ValueError):
    pass


def to_uint8(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _ppm_tokens(data):
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[i:j].decode("ascii"))
        i = j
    return tokens, i + 1


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    (magic, w, h, maxval), pos = _ppm_tokens(data)
    w, h, maxval = int(w), int(h), int(maxval)
    if magic == "P3":
        vals = np.array(data[pos:].split(), dtype=np.int64)
    elif magic == "P6":
        dt = np.uint8 if maxval < 256 else np.dtype(">u2")
        vals = np.frombuffer(data[pos:], dtype=dt).astype(np.int64)
    else:
        raise ImageFormatError(f"{path}: unsupported PPM magic {magic!r}")
    if vals.size != w * h * 3:
        raise ImageFormatError(f"{path}: expected {w * h * 3} samples, found {vals.size}")
    return vals.reshape(h, w, 3).astype(np.float64) / maxval


def write_ppm(path, img):
    u8 = to_uint8(img)
    h, w = u8.shape[:2]
    with open(path, "w") as f:
        f.write(f"P3\n{w} {h}\n255\n")
        for row in u8:
            f.write(" ".join(str(v) for v in row.ravel()) + "\n")


def read_image(path):
    ext = os.path.splitext(path)[1].lower()
    if ext in (".ppm", ".pnm"):
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_image(path, img):
    ext = os.path.splitext(path)[1].lower()
    if ext in (".ppm", ".pnm"):
        write_ppm(path, img)
        return
    from PIL import Image

    Image.fromarray(to_uint8(img), "RGB").save(path)
