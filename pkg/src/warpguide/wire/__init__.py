"""Binary protocol for serving denoisers out of process.

Server fixtures and the serving loop live in ``warpguide.wire.server``; it
is not re-exported here so that ``python -m warpguide.wire.server`` runs
without the package import shadowing the module execution.
"""

from .client import (
    StdioStream,
    TcpStream,
    WireDenoiser,
    WireSession,
    WireStream,
    connect_denoiser,
    handshake,
    open_stream,
    read_message,
    remote_denoise,
    remote_vjp,
    write_message,
)
from .protocol import (
    HEADER_SIZE,
    MAGIC,
    MAX_PAYLOAD,
    VERSION,
    Capabilities,
    Opcode,
    ProtocolError,
    RemoteError,
    TensorFrame,
)

__all__ = [
    "HEADER_SIZE",
    "MAGIC",
    "MAX_PAYLOAD",
    "VERSION",
    "Capabilities",
    "Opcode",
    "ProtocolError",
    "RemoteError",
    "TensorFrame",
    "StdioStream",
    "TcpStream",
    "WireDenoiser",
    "WireSession",
    "WireStream",
    "connect_denoiser",
    "handshake",
    "open_stream",
    "read_message",
    "remote_denoise",
    "remote_vjp",
    "write_message",
]
