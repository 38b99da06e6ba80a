"""Distributed rendering: per-subset partials, ordered merge, manager and workers."""
from .core import (
    EpochMismatchError, MissingPartialError, PartialImage, WorkerState, merge, merge_backward,
    partial_backward, partial_render, pixel_orders, render_distributed,
)
from .manager import Manager, ViewResult, run_manager
from .protocol import ProtocolError
from .transport import WorkerTimeoutError
