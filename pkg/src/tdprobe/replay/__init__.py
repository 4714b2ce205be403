"""Record-and-replay client and server with a client-id keyed side channel."""

from .client import data_port_for, register, run_back_to_back, run_replay_client
from .protocol import Kind, ReplayRequest, ReplayResult
from .server import ReplayServer, SessionRecord, load_trace_dir, make_trace_store, run_replay_server

__all__ = [
    "Kind",
    "ReplayRequest",
    "ReplayResult",
    "ReplayServer",
    "SessionRecord",
    "data_port_for",
    "load_trace_dir",
    "make_trace_store",
    "register",
    "run_back_to_back",
    "run_replay_client",
    "run_replay_server",
]
