"""Transports: TCP socket server and stdio pipe, one session per connection."""

from __future__ import annotations

import socket
import socketserver
import sys
import threading

from .protocol import Session


def _line_iter(fh):
    for raw in fh:
        yield raw.decode("utf-8") if isinstance(raw, bytes) else raw


def serve_stdio(model, stdin=None, stdout=None) -> None:
    """Run one session over stdin/stdout until QUIT or EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = Session(model)
    lines = iter(stdin)
    for line in lines:
        for reply in session.handle(line, lines):
            stdout.write(reply + "\n")
        stdout.flush()
        if session.closed:
            break


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = Session(self.server.bridge_model_factory())
        lines = _line_iter(self.rfile)
        for line in lines:
            for reply in session.handle(line, lines):
                self.wfile.write((reply + "\n").encode("utf-8"))
            self.wfile.flush()
            if session.closed:
                return


class BridgeServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server; the model handle is shared read-only."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, model):
        super().__init__(address, _Handler)
        # each connection gets its own Session; the model itself is stateless
        self.bridge_model_factory = lambda: model


def serve(endpoint: str, model) -> None:
    """Serve forever on ``tcp:HOST:PORT``, or over stdio for ``stdio:``."""
    if endpoint.startswith("stdio"):
        serve_stdio(model)
        return
    if endpoint.startswith("tcp:"):
        _, host, port = endpoint.split(":", 2)
        server = BridgeServer((host, int(port)), model)
        with server:
            server.serve_forever()
        return
    raise ValueError(f"unsupported endpoint {endpoint!r}")


def start_background(host: str, port: int, model) -> BridgeServer:
    """Spawn a TCP server on a daemon thread; caller shuts it down."""
    server = BridgeServer((host, port), model)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
