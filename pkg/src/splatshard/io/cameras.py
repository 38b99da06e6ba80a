"""Camera list JSON: ``{"images": [{name, width, height, fx, fy, cx, cy, qvec, tvec}]}``.

``qvec`` (w, x, y, z) and ``tvec`` give the world-to-camera transform
``x_cam = R(qvec) x_world + tvec``; camera axes are x right, y down, z forward.
"""
import json
import numbers

import numpy as np

from ..splat import Camera


class CameraSchemaError(ValueError):
    pass


FIELDS = ("name", "width", "height", "fx", "fy", "cx", "cy", "qvec", "tvec")


def _number(entry, key, path, integer=False):
    if key not in entry:
        raise CameraSchemaError(f"{path}.{key}: missing field")
    v = entry[key]
    if isinstance(v, bool) or not isinstance(v, numbers.Real):
        raise CameraSchemaError(f"{path}.{key}: expected a number, got {type(v).__name__}")
    if integer and (int(v) != v or v <= 0):
        raise CameraSchemaError(f"{path}.{key}: expected a positive integer")
    return int(v) if integer else float(v)


def _vector(entry, key, n, path):
    if key not in entry:
        raise CameraSchemaError(f"{path}.{key}: missing field")
    v = entry[key]
    if not isinstance(v, list) or len(v) != n:
        raise CameraSchemaError(f"{path}.{key}: expected a list of {n} numbers")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, numbers.Real):
            raise CameraSchemaError(f"{path}.{key}[{i}]: expected a number")
    return np.asarray(v, dtype=np.float64)


def camera_from_dict(entry, path="images[0]"):
    if not isinstance(entry, dict):
        raise CameraSchemaError(f"{path}: expected an object")
    name = entry.get("name", "")
    if not isinstance(name, str):
        raise CameraSchemaError(f"{path}.name: expected a string")
    w = _number(entry, "width", path, integer=True)
    h = _number(entry, "height", path, integer=True)
    fx, fy, cx, cy = (_number(entry, k, path) for k in ("fx", "fy", "cx", "cy"))
    q = _vector(entry, "qvec", 4, path)
    t = _vector(entry, "tvec", 3, path)
    if np.linalg.norm(q) == 0:
        raise CameraSchemaError(f"{path}.qvec: zero quaternion")
    try:
        return Camera(w, h, fx, fy, cx, cy, q / np.linalg.norm(q), t, name)
    except ValueError as exc:
        raise CameraSchemaError(f"{path}: {exc}") from None


def camera_to_dict(cam: Camera):
    return {"name": cam.name, "width": cam.width, "height": cam.height, "fx": cam.fx, "fy": cam.fy,
            "cx": cam.cx, "cy": cam.cy, "qvec": [float(v) for v in cam.q_wc],
            "tvec": [float(v) for v in cam.t_wc]}


def parse_cameras(doc):
    if not isinstance(doc, dict) or "images" not in doc:
        raise CameraSchemaError("images: missing field")
    if not isinstance(doc["images"], list):
        raise CameraSchemaError("images: expected a list")
    return [camera_from_dict(e, f"images[{i}]") for i, e in enumerate(doc["images"])]


def load_cameras(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise CameraSchemaError(f"{path}: invalid JSON: {exc}") from None
    return parse_cameras(doc)


def save_cameras(path, cameras):
    with open(path, "w") as f:
        json.dump({"images": [camera_to_dict(c) for c in cameras]}, f, indent=1)
        f.write("\n")
