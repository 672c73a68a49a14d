"""Transport-agnostic session handler for the bridge line protocol.

The protocol is UTF-8, newline-delimited, tab-separated fields, floats
printed as shortest round-trip decimals:

    client -> server:  CTX <n_rows> <n_feat>   then n_rows lines (n_feat features + 1 label)
                       QRY <m_rows>            then m_rows lines (n_feat features)
                       PING / INFO / QUIT
    server -> client:  OK <m_rows>  (+ m_rows label lines; OK 0 acknowledges CTX)
                       PONG
                       INFO <text>
                       ERR <code> <message>    codes: BADDIM BADNUM INTERNAL

A CTX replaces the session context atomically; QRY before any CTX is a
dimension error. A malformed block yields exactly one ERR: the remaining
announced payload lines are consumed silently so the session stays in
sync and recoverable.
"""

from __future__ import annotations

from typing import Iterator, List, Optional

import numpy as np

from .models import ModelError


def format_float(x: float) -> str:
    return repr(float(x))


class Session:
    """One client session: feed lines in, collect reply lines out."""

    def __init__(self, model):
        self.model = model
        self.context_x: Optional[np.ndarray] = None
        self.context_y: Optional[np.ndarray] = None
        self.closed = False

    # -- helpers ---------------------------------------------------------
    @staticmethod
    def _parse_counts(parts: List[str], expected: int):
        if len(parts) != expected:
            raise _Err("BADDIM", "wrong field count in header")
        try:
            counts = [int(p) for p in parts[1:]]
        except ValueError as exc:
            raise _Err("BADNUM", "unparseable count") from exc
        if any(c < 0 for c in counts):
            raise _Err("BADDIM", "negative count")
        return counts

    @staticmethod
    def _parse_row(line: str, width: int) -> np.ndarray:
        parts = line.split("\t")
        if len(parts) != width:
            raise _Err("BADDIM", f"expected {width} fields, got {len(parts)}")
        try:
            return np.array([float(p) for p in parts], dtype=float)
        except ValueError as exc:
            raise _Err("BADNUM", "unparseable float") from exc

    def _drain(self, lines: Iterator[str], n: int) -> None:
        for _ in range(n):
            if next(lines, None) is None:
                break

    # -- command handlers --------------------------------------------------
    def handle(self, line: str, lines: Iterator[str]) -> List[str]:
        """Process one command line, pulling payload rows from ``lines``."""
        parts = line.rstrip("\n").split("\t")
        cmd = parts[0]
        try:
            if cmd == "PING":
                return ["PONG"]
            if cmd == "INFO":
                return [f"INFO\t{self.model.info}"]
            if cmd == "QUIT":
                self.closed = True
                return []
            if cmd == "CTX":
                return self._handle_ctx(parts, lines)
            if cmd == "QRY":
                return self._handle_qry(parts, lines)
            raise _Err("INTERNAL", f"unknown command {cmd!r}")
        except _Err as err:
            return [f"ERR\t{err.code}\t{err.message}"]

    def _handle_ctx(self, parts: List[str], lines: Iterator[str]) -> List[str]:
        n_rows, n_feat = self._parse_counts(parts, 3)
        if n_rows < 1 or n_feat < 1:
            raise _Err("BADDIM", "context must have at least one row and feature")
        rows = np.empty((n_rows, n_feat + 1))
        for i in range(n_rows):
            raw = next(lines, None)
            if raw is None:
                raise _Err("BADDIM", "context truncated")
            try:
                rows[i] = self._parse_row(raw.rstrip("\n"), n_feat + 1)
            except _Err:
                self._drain(lines, n_rows - i - 1)
                raise
        # replace atomically only once every row parsed
        self.context_x = rows[:, :n_feat].copy()
        self.context_y = rows[:, n_feat].copy()
        return ["OK\t0"]

    def _handle_qry(self, parts: List[str], lines: Iterator[str]) -> List[str]:
        (m_rows,) = self._parse_counts(parts, 2)
        if self.context_x is None:
            self._drain(lines, m_rows)
            raise _Err("BADDIM", "no context established")
        queries = np.empty((m_rows, self.context_x.shape[1]))
        for i in range(m_rows):
            raw = next(lines, None)
            if raw is None:
                raise _Err("BADDIM", "query truncated")
            try:
                queries[i] = self._parse_row(raw.rstrip("\n"), self.context_x.shape[1])
            except _Err:
                self._drain(lines, m_rows - i - 1)
                raise
        try:
            preds = self.model.predict(self.context_x, self.context_y, queries)
        except ModelError as exc:
            raise _Err("INTERNAL", str(exc)) from exc
        return [f"OK\t{m_rows}"] + [format_float(v) for v in preds]


class _Err(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}")


def run_session(model, lines: Iterator[str]) -> Iterator[str]:
    """Drive a whole session over an iterator of input lines."""
    session = Session(model)
    for line in lines:
        for reply in session.handle(line, lines):
            yield reply
        if session.closed:
            return
