"""Manager <-> worker messages and their binary wire format.

Frame layout (all little-endian)::

    u32  body length (bytes after this field)
    u8   protocol version
    u8   message type
    ...  payload

Payload primitives: ``u8``/``u32``/``i64``/``f64`` scalars, strings as
``u32 length + utf-8``, arrays as ``u8 dtype code, u8 ndim, u32 shape[ndim]``
followed by row-major data.  FORMATS.md / PROTOCOL.md document the
per-message field order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..partition import HalfSpace, Subspace
from ..splat import Camera, SplatSet
from .core import PartialImage

VERSION = 1

DTYPE_CODES = {1: np.float32, 2: np.float64, 3: np.int64, 4: np.int32, 5: np.uint8}
CODE_OF = {np.dtype(v): k for k, v in DTYPE_CODES.items()}


class ProtocolError(RuntimeError):
    pass


# --- messages ---------------------------------------------------------------

@dataclass
class RenderTask:
    view_id: int
    epoch: int
    camera: Camera
    dtype: str = "float32"
    stop_T: float = 0.0
    gate: bool = True
    keep: bool = False  # retain forward state for a following BackwardTask


@dataclass
class PartialResult:
    image: PartialImage
    stats: dict = field(default_factory=dict)


@dataclass
class BackwardTask:
    view_id: int
    grad_C: np.ndarray
    grad_T: np.ndarray


@dataclass
class GradSync:
    ids: np.ndarray
    grads: dict


@dataclass
class Step:
    step: int
    lrs: dict
    sync: bool = False


@dataclass
class Repartition:
    epoch: int
    k: int
    subspace: Subspace
    splats: SplatSet
    opt_state: dict
    opt_step: int
    shared_ids: np.ndarray


@dataclass
class Snapshot:
    k: int
    epoch: int
    splats: SplatSet
    opt_state: dict
    opt_step: int


@dataclass
class Checkpoint:
    path: str = ""


@dataclass
class Shutdown:
    pass


@dataclass
class Ack:
    of: int
    ref: int = 0
    info: dict = field(default_factory=dict)


@dataclass
class ErrorReply:
    message: str


@dataclass
class EdgeQuery:
    """Ask a worker for the splats whose reach is no longer inside its own subspace."""


@dataclass
class EdgeSplats:
    k: int
    splats: SplatSet
    opt_state: dict


@dataclass
class AddSplats:
    """Extend a worker's subset (ids it already holds are ignored) and replace its shared-id list."""

    splats: SplatSet
    opt_state: dict
    shared_ids: np.ndarray


TYPE_IDS = {
    RenderTask: 1, PartialResult: 2, BackwardTask: 3, GradSync: 4, Repartition: 5,
    Checkpoint: 6, Shutdown: 7, Ack: 8, Step: 9, Snapshot: 10, ErrorReply: 11,
    EdgeQuery: 12, EdgeSplats: 13, AddSplats: 14,
}
TYPES = {v: k for k, v in TYPE_IDS.items()}


# --- primitives -------------------------------------------------------------

class _Writer:
    def __init__(self):
        self.parts = []
        self.map_bytes = 0

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def i64(self, v):
        self.parts.append(struct.pack("<q", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", v))

    def str(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def json(self, obj):
        self.str(json.dumps(obj, sort_keys=True))

    def array(self, a, is_map=False):
        a = np.ascontiguousarray(a)
        code = CODE_OF.get(a.dtype)
        if code is None:
            raise ProtocolError(f"unsupported array dtype {a.dtype}")
        self.u8(code)
        self.u8(a.ndim)
        for s in a.shape:
            self.u32(s)
        data = a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
        self.parts.append(data)
        if is_map:
            self.map_bytes += len(data)


class _Reader:
    def __init__(self, buf, pos=0):
        self.buf = memoryview(buf)
        self.pos = pos
        self.map_bytes = 0

    def _take(self, n):
        if self.pos + n > len(self.buf):
            raise ProtocolError("truncated frame")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def u32(self):
        return struct.unpack("<I", self._take(4))[0]

    def i64(self):
        return struct.unpack("<q", self._take(8))[0]

    def f64(self):
        return struct.unpack("<d", self._take(8))[0]

    def str(self):
        return bytes(self._take(self.u32())).decode("utf-8")

    def json(self):
        return json.loads(self.str())

    def array(self, is_map=False):
        code = self.u8()
        if code not in DTYPE_CODES:
            raise ProtocolError(f"unknown dtype code {code}")
        dt = np.dtype(DTYPE_CODES[code]).newbyteorder("<")
        ndim = self.u8()
        shape = tuple(self.u32() for _ in range(ndim))
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = self._take(n)
        if is_map:
            self.map_bytes += n
        return np.frombuffer(data, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def _w_camera(w, c: Camera):
    w.u32(c.width)
    w.u32(c.height)
    for v in (c.fx, c.fy, c.cx, c.cy, *c.q_wc, *c.t_wc):
        w.f64(float(v))


def _r_camera(r):
    width, height = r.u32(), r.u32()
    vals = [r.f64() for _ in range(11)]
    return Camera(width, height, *vals[:4], vals[4:8], vals[8:11])


def _w_splats(w, s: SplatSet):
    w.array(s.ids)
    w.array(s.mu)
    w.array(s.log_scale)
    w.array(s.rotation)
    w.array(s.opacity_logit)
    w.array(s.sh)


def _r_splats(r):
    return SplatSet(*(r.array() for _ in range(6)))


def _w_dict(w, d):
    w.u32(len(d))
    for key in sorted(d):
        w.str(key)
        w.array(d[key])


def _r_dict(r):
    return {r.str(): r.array() for _ in range(r.u32())}


def _w_subspace(w, s: Subspace):
    w.u32(s.k)
    w.u32(len(s.planes))
    for p in s.planes:
        for v in (*p.n, p.d):
            w.f64(float(v))
        w.u8(1 if p.closed else 0)
    w.array(np.asarray(s.aabb, dtype=np.float64))


def _r_subspace(r):
    k = r.u32()
    planes = []
    for _ in range(r.u32()):
        n = (r.f64(), r.f64(), r.f64())
        d = r.f64()
        planes.append(HalfSpace(n, d, bool(r.u8())))
    return Subspace(k, planes, r.array())


# --- frames -----------------------------------------------------------------

def encode(msg):
    """Serialize ``msg`` into one frame; returns ``(frame_bytes, map_payload_bytes)``."""
    w = _Writer()
    w.u8(VERSION)
    w.u8(TYPE_IDS[type(msg)])
    if isinstance(msg, RenderTask):
        w.i64(msg.view_id)
        w.i64(msg.epoch)
        _w_camera(w, msg.camera)
        w.str(msg.dtype)
        w.f64(msg.stop_T)
        w.u8(int(msg.gate))
        w.u8(int(msg.keep))
    elif isinstance(msg, PartialResult):
        im = msg.image
        w.u32(im.k)
        w.i64(im.view_id)
        w.array(im.C, is_map=True)
        w.array(im.T, is_map=True)
        w.json(msg.stats)
    elif isinstance(msg, BackwardTask):
        w.i64(msg.view_id)
        w.array(msg.grad_C, is_map=True)
        w.array(msg.grad_T, is_map=True)
    elif isinstance(msg, GradSync):
        w.array(np.asarray(msg.ids, dtype=np.int64))
        _w_dict(w, msg.grads)
    elif isinstance(msg, Step):
        w.i64(msg.step)
        w.json(msg.lrs)
        w.u8(int(msg.sync))
    elif isinstance(msg, Repartition):
        w.i64(msg.epoch)
        w.u32(msg.k)
        _w_subspace(w, msg.subspace)
        _w_splats(w, msg.splats)
        _w_dict(w, msg.opt_state)
        w.i64(msg.opt_step)
        w.array(np.asarray(msg.shared_ids, dtype=np.int64))
    elif isinstance(msg, Snapshot):
        w.u32(msg.k)
        w.i64(msg.epoch)
        _w_splats(w, msg.splats)
        _w_dict(w, msg.opt_state)
        w.i64(msg.opt_step)
    elif isinstance(msg, Checkpoint):
        w.str(msg.path)
    elif isinstance(msg, Shutdown):
        pass
    elif isinstance(msg, Ack):
        w.u8(msg.of)
        w.i64(msg.ref)
        w.json(msg.info)
    elif isinstance(msg, ErrorReply):
        w.str(msg.message)
    elif isinstance(msg, EdgeQuery):
        pass
    elif isinstance(msg, EdgeSplats):
        w.u32(msg.k)
        _w_splats(w, msg.splats)
        _w_dict(w, msg.opt_state)
    elif isinstance(msg, AddSplats):
        _w_splats(w, msg.splats)
        _w_dict(w, msg.opt_state)
        w.array(np.asarray(msg.shared_ids, dtype=np.int64))
    body = b"".join(w.parts)
    return struct.pack("<I", len(body)) + body, w.map_bytes


def decode(frame):
    """Inverse of :func:`encode`; returns ``(message, map_payload_bytes)``."""
    if len(frame) < 6:
        raise ProtocolError("frame too short")
    (length,) = struct.unpack_from("<I", frame, 0)
    if length != len(frame) - 4:
        raise ProtocolError(f"length prefix {length} does not match frame body {len(frame) - 4}")
    r = _Reader(frame, 4)
    version = r.u8()
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    tid = r.u8()
    if tid not in TYPES:
        raise ProtocolError(f"unknown message type {tid}")
    cls = TYPES[tid]
    if cls is RenderTask:
        view_id, epoch = r.i64(), r.i64()
        msg = RenderTask(view_id, epoch, _r_camera(r), r.str(), r.f64(), bool(r.u8()), bool(r.u8()))
    elif cls is PartialResult:
        k, view_id = r.u32(), r.i64()
        C = r.array(is_map=True)
        T = r.array(is_map=True)
        msg = PartialResult(PartialImage(k, view_id, C, T), r.json())
    elif cls is BackwardTask:
        view_id = r.i64()
        msg = BackwardTask(view_id, r.array(is_map=True), r.array(is_map=True))
    elif cls is GradSync:
        msg = GradSync(r.array(), _r_dict(r))
    elif cls is Step:
        msg = Step(r.i64(), r.json(), bool(r.u8()))
    elif cls is Repartition:
        epoch, k = r.i64(), r.u32()
        msg = Repartition(epoch, k, _r_subspace(r), _r_splats(r), _r_dict(r), r.i64(), r.array())
    elif cls is Snapshot:
        k, epoch = r.u32(), r.i64()
        msg = Snapshot(k, epoch, _r_splats(r), _r_dict(r), r.i64())
    elif cls is Checkpoint:
        msg = Checkpoint(r.str())
    elif cls is Shutdown:
        msg = Shutdown()
    elif cls is Ack:
        msg = Ack(r.u8(), r.i64(), r.json())
    elif cls is ErrorReply:
        msg = ErrorReply(r.str())
    elif cls is EdgeQuery:
        msg = EdgeQuery()
    elif cls is EdgeSplats:
        msg = EdgeSplats(r.u32(), _r_splats(r), _r_dict(r))
    else:
        msg = AddSplats(_r_splats(r), _r_dict(r), r.array())
    if r.pos != len(frame):
        raise ProtocolError(f"{len(frame) - r.pos} trailing bytes in frame")
    return msg, r.map_bytes
