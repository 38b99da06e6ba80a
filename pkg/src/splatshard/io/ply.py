"""PLY reader/writer for point clouds and splat checkpoints.

Splat checkpoints use the widespread Gaussian-splatting property layout:
``x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`` as float32,
with ``f_rest`` stored channel-major (all red coefficients, then green, blue).
"""
from dataclasses import dataclass

import numpy as np

from ..sh import degree_from_coeffs
from ..splat import SplatSet


class PlyError(ValueError):
    pass


class UnsupportedFormatError(PlyError):
    pass


TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) in [0, 1]

    def __len__(self):
        return len(self.points)


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype str) or (name, ("list", count_type, item_type))


def _parse_header(f, path):
    lines = []
    line_no = 0
    while True:
        raw = f.readline()
        line_no += 1
        if not raw:
            raise PlyError(f"{path}: line {line_no}: unexpected end of file in header")
        line = raw.decode("ascii", errors="replace").strip()
        lines.append((line_no, line))
        if line == "end_header":
            break
    if not lines or lines[0][1] != "ply":
        raise PlyError(f"{path}: line 1: missing 'ply' magic")
    fmt = None
    elements = []
    for no, line in lines[1:-1]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) != 3:
                raise PlyError(f"{path}: line {no}: malformed format line")
            fmt = parts[1]
            if fmt == "binary_big_endian":
                raise UnsupportedFormatError(f"{path}: line {no}: big-endian PLY is not supported")
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyError(f"{path}: line {no}: unknown format {fmt!r}")
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyError(f"{path}: line {no}: malformed element line")
            elements.append(_Element(parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise PlyError(f"{path}: line {no}: property before any element")
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in TYPES or parts[3] not in TYPES:
                    raise PlyError(f"{path}: line {no}: unknown list type")
                elements[-1].props.append((parts[4], ("list", TYPES[parts[2]], TYPES[parts[3]])))
            elif len(parts) == 3 and parts[1] in TYPES:
                elements[-1].props.append((parts[2], TYPES[parts[1]]))
            else:
                raise PlyError(f"{path}: line {no}: malformed property line")
        else:
            raise PlyError(f"{path}: line {no}: unknown header keyword {parts[0]!r}")
    if fmt is None:
        raise PlyError(f"{path}: line {lines[-1][0]}: missing format line")
    return fmt, elements


def _read_binary_element(f, el, path):
    if any(isinstance(t, tuple) for _, t in el.props):
        if el.name == "vertex":
            raise PlyError(f"{path}: list properties in vertex element are not supported")
        # skip list elements row by row
        for _ in range(el.count):
            for _, t in el.props:
                if isinstance(t, tuple):
                    cdt = np.dtype("<" + t[1])
                    n = int(np.frombuffer(f.read(cdt.itemsize), cdt)[0])
                    f.read(n * np.dtype(t[2]).itemsize)
                else:
                    f.read(np.dtype(t).itemsize)
        return None
    dt = np.dtype([(n, "<" + t) for n, t in el.props])
    buf = f.read(dt.itemsize * el.count)
    if len(buf) != dt.itemsize * el.count:
        raise PlyError(f"{path}: truncated {el.name} data")
    return np.frombuffer(buf, dtype=dt)


def _read_ascii_element(lines, el, path, start_line):
    if any(isinstance(t, tuple) for _, t in el.props):
        if el.name == "vertex":
            raise PlyError(f"{path}: list properties in vertex element are not supported")
        return None, el.count
    dt = np.dtype([(n, t) for n, t in el.props])
    out = np.zeros(el.count, dtype=dt)
    for i in range(el.count):
        if i >= len(lines):
            raise PlyError(f"{path}: line {start_line + i}: missing {el.name} row")
        vals = lines[i].split()
        if len(vals) != len(el.props):
            raise PlyError(f"{path}: line {start_line + i}: expected {len(el.props)} values, got {len(vals)}")
        try:
            out[i] = tuple(float(v) if dt[j].kind == "f" else int(v) for j, v in enumerate(vals))
        except ValueError:
            raise PlyError(f"{path}: line {start_line + i}: bad number") from None
    return out, el.count


def read_vertices(path):
    """Raw vertex records as a structured array."""
    with open(path, "rb") as f:
        fmt, elements = _parse_header(f, path)
        header_lines = None
        if fmt == "ascii":
            pos = f.tell()
            f.seek(0)
            header_lines = f.read(pos).count(b"\n")
            body = f.read().decode("ascii").splitlines()
            line = 0
            for el in elements:
                data, used = _read_ascii_element(body[line:], el, path, header_lines + line + 1)
                if el.name == "vertex":
                    return data
                line += used
        else:
            for el in elements:
                data = _read_binary_element(f, el, path)
                if el.name == "vertex":
                    return data
    raise PlyError(f"{path}: no vertex element")


def is_splat_file(names):
    return {"x", "y", "z", "f_dc_0", "opacity", "scale_0", "rot_0"} <= set(names)


def load_ply(path, mode="auto"):
    """Load a point cloud (``PointCloud``) or a splat checkpoint (``SplatSet``).

    ``mode`` is ``"points"``, ``"splats"`` or ``"auto"`` (splats when the
    checkpoint properties are present).
    """
    v = read_vertices(path)
    names = v.dtype.names or ()
    for axis in "xyz":
        if axis not in names:
            raise PlyError(f"{path}: vertex element lacks property {axis!r}")
    if mode == "splats" or (mode == "auto" and is_splat_file(names)):
        return _to_splats(v, path)
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    if {"red", "green", "blue"} <= set(names):
        cols = np.stack([v["red"], v["green"], v["blue"]], axis=1)
        if cols.dtype.kind in "ui":
            cols = cols.astype(np.float64) / float(np.iinfo(cols.dtype).max)
        cols = cols.astype(np.float64)
    else:
        cols = np.full((len(pts), 3), 0.5)
    return PointCloud(pts, cols)


def _to_splats(v, path):
    names = v.dtype.names
    if not is_splat_file(names):
        raise PlyError(f"{path}: not a splat checkpoint (missing opacity/scale/rot/f_dc properties)")
    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    if n_rest % 3:
        raise PlyError(f"{path}: f_rest count {n_rest} is not a multiple of 3")
    ncoef = n_rest // 3 + 1
    degree_from_coeffs(ncoef)  # raises for non-square counts
    N = len(v)
    col = lambda n: np.asarray(v[n], dtype=np.float64)
    sh = np.zeros((N, ncoef, 3))
    for c in range(3):
        sh[:, 0, c] = col(f"f_dc_{c}")
        for j in range(ncoef - 1):
            sh[:, j + 1, c] = col(f"f_rest_{c * (ncoef - 1) + j}")
    ids = np.asarray(v["id"], dtype=np.int64) if "id" in names else np.arange(N, dtype=np.int64)
    return SplatSet(
        ids,
        np.stack([col("x"), col("y"), col("z")], axis=1),
        np.stack([col(f"scale_{i}") for i in range(3)], axis=1),
        np.stack([col(f"rot_{i}") for i in range(4)], axis=1),
        col("opacity"),
        sh,
    )


def _header(fmt, n, props, comment=None):
    lines = ["ply", f"format {fmt} 1.0"]
    if comment:
        lines.append(f"comment {comment}")
    lines.append(f"element vertex {n}")
    inv = {"f4": "float", "f8": "double", "u1": "uchar", "i4": "int", "i8": "int"}
    lines += [f"property {inv[t]} {name}" for name, t in props]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _write(path, columns, fmt):
    props = [(n, a.dtype.str[1:]) for n, a in columns]
    n = len(columns[0][1]) if columns else 0
    with open(path, "wb") as f:
        f.write(_header(fmt, n, props))
        if fmt == "binary_little_endian":
            rec = np.zeros(n, dtype=[(name, "<" + t) for name, t in props])
            for name, a in columns:
                rec[name] = a
            f.write(rec.tobytes())
        else:
            for i in range(n):
                f.write((" ".join(repr(a[i].item()) for _, a in columns) + "\n").encode("ascii"))


def splat_columns(splats: SplatSet):
    s = splats
    N = len(s)
    f4 = lambda a: np.asarray(a, dtype=np.float32)
    cols = [("x", f4(s.mu[:, 0])), ("y", f4(s.mu[:, 1])), ("z", f4(s.mu[:, 2]))]
    cols += [(n, np.zeros(N, np.float32)) for n in ("nx", "ny", "nz")]
    cols += [(f"f_dc_{c}", f4(s.sh[:, 0, c])) for c in range(3)]
    rest = s.sh[:, 1:, :].transpose(0, 2, 1).reshape(N, -1)
    cols += [(f"f_rest_{j}", f4(rest[:, j])) for j in range(rest.shape[1])]
    cols.append(("opacity", f4(s.opacity_logit)))
    cols += [(f"scale_{i}", f4(s.log_scale[:, i])) for i in range(3)]
    cols += [(f"rot_{i}", f4(s.rotation[:, i])) for i in range(4)]
    if not np.array_equal(s.ids, np.arange(N)):
        cols.append(("id", np.asarray(s.ids, dtype=np.int32)))
    return cols


def save_splats_ply(path, splats: SplatSet, binary=True):
    """Write a splat checkpoint (float32 parameters)."""
    _write(path, splat_columns(splats), "binary_little_endian" if binary else "ascii")


def save_points_ply(path, points, colors=None, binary=True):
    pts = np.asarray(points, dtype=np.float32)
    cols = [("x", pts[:, 0]), ("y", pts[:, 1]), ("z", pts[:, 2])]
    if colors is not None:
        c8 = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
        cols += [("red", c8[:, 0]), ("green", c8[:, 1]), ("blue", c8[:, 2])]
    _write(path, cols, "binary_little_endian" if binary else "ascii")


def save_ply(path, obj, binary=True):
    if isinstance(obj, SplatSet):
        save_splats_ply(path, obj, binary)
    else:
        save_points_ply(path, obj.points, obj.colors, binary)
