"""Client side of the line-based regression bridge protocol.

The protocol is UTF-8, newline-delimited, tab-separated fields, floats
printed as shortest round-trip decimals:

    client -> server:  CTX <n_rows> <n_feat>   (then n_rows lines: n_feat features + 1 label)
                       QRY <m_rows>            (then m_rows lines: n_feat features)
                       PING
                       INFO
                       QUIT
    server -> client:  OK <m_rows>             (then m_rows lines of one float;
                                                OK 0 acknowledges a CTX)
                       PONG
                       INFO <text>
                       ERR <code> <message>    (codes: BADDIM, BADNUM, INTERNAL)

A CTX establishes the session context; subsequent QRYs reuse it until the
next CTX. Endpoints: ``tcp:HOST:PORT`` connects a stream socket;
``stdio:COMMAND`` spawns the command and talks over its stdin/stdout.
"""

from __future__ import annotations

import shlex
import socket
import subprocess
from typing import Optional

import numpy as np


class BridgeError(Exception):
    """Base class for bridge client failures."""


class BridgeUnreachableError(BridgeError):
    """Endpoint could not be reached or the peer went away."""


class BridgeProtocolError(BridgeError):
    """Peer sent something outside the protocol grammar."""


class BridgeDimensionError(BridgeError):
    """Peer rejected feature dimensions (ERR BADDIM)."""


def format_float(x: float) -> str:
    """Shortest decimal that round-trips to the same float64."""
    return repr(float(x))


class BridgeClient:
    """One protocol session over a socket or a spawned subprocess.

    Not thread-safe: a single request is in flight at a time and callers
    must not share a live connection across threads.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._proc: Optional[subprocess.Popen] = None
        self._reader = None
        self._writer = None

    # -- transport -----------------------------------------------------
    def connect(self) -> None:
        if self._reader is not None:
            return
        if self.endpoint.startswith("tcp:"):
            try:
                _, host, port = self.endpoint.split(":", 2)
                self._sock = socket.create_connection((host, int(port)), timeout=self.timeout)
            except (OSError, ValueError) as exc:
                raise BridgeUnreachableError(f"cannot connect to {self.endpoint}: {exc}") from exc
            fh = self._sock.makefile("rwb")
            self._reader = fh
            self._writer = fh
        elif self.endpoint.startswith("stdio:"):
            cmd = shlex.split(self.endpoint[len("stdio:"):])
            if not cmd:
                raise BridgeUnreachableError("empty stdio command")
            try:
                self._proc = subprocess.Popen(
                    cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                )
            except OSError as exc:
                raise BridgeUnreachableError(f"cannot spawn {cmd!r}: {exc}") from exc
            self._reader = self._proc.stdout
            self._writer = self._proc.stdin
        else:
            raise BridgeUnreachableError(f"unsupported endpoint {self.endpoint!r}")

    def close(self) -> None:
        if self._writer is not None:
            try:
                self._send_line("QUIT")
            except BridgeError:
                pass
        for closer in (self._reader, self._writer, self._sock):
            if closer is not None:
                try:
                    closer.close()
                except OSError:
                    pass
        if self._proc is not None:
            self._proc.wait(timeout=5)
        self._sock = self._proc = self._reader = self._writer = None

    def _send_line(self, line: str) -> None:
        try:
            self._writer.write((line + "\n").encode("utf-8"))
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise BridgeUnreachableError(f"peer went away: {exc}") from exc

    def _flush(self) -> None:
        try:
            self._writer.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise BridgeUnreachableError(f"peer went away: {exc}") from exc

    def _recv_line(self) -> str:
        try:
            raw = self._reader.readline()
        except OSError as exc:
            raise BridgeUnreachableError(f"read failed: {exc}") from exc
        if not raw:
            raise BridgeUnreachableError("connection closed by peer")
        return raw.decode("utf-8").rstrip("\n")

    # -- protocol ------------------------------------------------------
    def _expect_ok(self, n_expected: Optional[int] = None) -> np.ndarray:
        line = self._recv_line()
        parts = line.split("\t")
        if parts[0] == "ERR":
            code = parts[1] if len(parts) > 1 else "?"
            msg = parts[2] if len(parts) > 2 else ""
            if code == "BADDIM":
                raise BridgeDimensionError(msg)
            raise BridgeProtocolError(f"{code}: {msg}")
        if parts[0] != "OK" or len(parts) != 2:
            raise BridgeProtocolError(f"malformed reply {line!r}")
        try:
            m = int(parts[1])
        except ValueError as exc:
            raise BridgeProtocolError(f"malformed reply {line!r}") from exc
        if n_expected is not None and m != n_expected:
            raise BridgeProtocolError(f"expected {n_expected} rows, peer sent {m}")
        out = np.empty(m)
        for i in range(m):
            value = self._recv_line()
            try:
                out[i] = float(value)
            except ValueError as exc:
                raise BridgeProtocolError(f"unparseable float {value!r}") from exc
        return out

    def ping(self) -> None:
        self.connect()
        self._send_line("PING")
        self._flush()
        reply = self._recv_line()
        if reply != "PONG":
            raise BridgeProtocolError(f"expected PONG, got {reply!r}")

    def info(self) -> str:
        self.connect()
        self._send_line("INFO")
        self._flush()
        reply = self._recv_line()
        if not reply.startswith("INFO"):
            raise BridgeProtocolError(f"expected INFO reply, got {reply!r}")
        return reply[4:].lstrip("\t ")

    def set_context(self, features: np.ndarray, labels: np.ndarray) -> None:
        self.connect()
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=float)
        self._send_line(f"CTX\t{features.shape[0]}\t{features.shape[1]}")
        for row, y in zip(features, labels):
            self._send_line("\t".join(format_float(v) for v in row) + "\t" + format_float(y))
        self._flush()
        self._expect_ok(0)

    def query(self, features: np.ndarray) -> np.ndarray:
        self.connect()
        features = np.asarray(features, dtype=float)
        self._send_line(f"QRY\t{features.shape[0]}")
        for row in features:
            self._send_line("\t".join(format_float(v) for v in row))
        self._flush()
        return self._expect_ok(features.shape[0])
