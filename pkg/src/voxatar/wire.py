"""Guidance wire protocol: newline-delimited JSON over a stream.

Normative schema (docs/wire_protocol.md):

Request  {"v": 1, "id": <str>, "width": W, "height": H, "t": <int>,
          "alpha_bar": <float>, "prompt": <str>,
          "z_t": <base64 of little-endian f32, row-major, RGB interleaved>,
          "condition_labels": <base64 of u8, row-major> or null,
          "cfg_scale": <float>}
Response {"v": 1, "id": <str>, "eps_hat": <base64 f32, same layout>}
      or {"v": 1, "id": <str>, "error": <str>}

One request in flight per connection; the id of a response must echo the
request. Arrays are H*W*3 (z_t, eps_hat) or H*W (condition_labels).
"""

from __future__ import annotations

import base64
import json
import selectors
import shlex
import socket
import subprocess

import numpy as np

from .errors import GuidanceUnavailableError, InvalidInputError, ProtocolError
from .guidance import GuidanceOracle

PROTOCOL_VERSION = 1


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str, shape: tuple) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ProtocolError(f"payload holds {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape)


def encode_u8(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype=np.uint8).tobytes()).decode("ascii")


def decode_u8(payload: str, shape: tuple) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    if len(raw) != int(np.prod(shape)):
        raise ProtocolError("condition payload size mismatch")
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape)


def build_request(req_id: str, z_t: np.ndarray, t: int, alpha_bar: float,
                  prompt: str, condition_labels: np.ndarray | None,
                  cfg_scale: float) -> dict:
    h, w, c = z_t.shape
    if c != 3:
        raise InvalidInputError("z_t must be RGB")
    return {
        "v": PROTOCOL_VERSION,
        "id": req_id,
        "width": int(w),
        "height": int(h),
        "t": int(t),
        "alpha_bar": float(alpha_bar),
        "prompt": str(prompt),
        "z_t": encode_f32(z_t),
        "condition_labels": None if condition_labels is None else encode_u8(condition_labels),
        "cfg_scale": float(cfg_scale),
    }


def parse_response(msg: dict, req_id: str, shape: tuple) -> np.ndarray:
    if not isinstance(msg, dict):
        raise ProtocolError("response is not a JSON object")
    if msg.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported response version {msg.get('v')!r}")
    if msg.get("id") != req_id:
        raise ProtocolError(f"response id {msg.get('id')!r} does not echo {req_id!r}")
    if "error" in msg:
        raise GuidanceUnavailableError(f"oracle error: {msg['error']}")
    if "eps_hat" not in msg:
        raise ProtocolError("response carries neither eps_hat nor error")
    eps_hat = decode_f32(msg["eps_hat"], shape).astype(np.float64)
    if not np.all(np.isfinite(eps_hat)):
        raise ProtocolError("eps_hat contains non-finite values")
    return eps_hat


class _Channel:
    """Line-framed JSON over a socket or a subprocess's stdio."""

    def __init__(self, endpoint: str, timeout: float):
        self.timeout = timeout
        self.proc = None
        self.sock = None
        if endpoint.startswith("tcp:"):
            host, _, port = endpoint[4:].rpartition(":")
            try:
                self.sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                                     timeout=timeout)
            except OSError as exc:
                raise GuidanceUnavailableError(f"cannot connect to {endpoint}: {exc}") from exc
            self.sock.settimeout(timeout)
            self.reader = self.sock.makefile("rb")
            self.writer = self.sock.makefile("wb")
        elif endpoint.startswith("stdio:"):
            cmd = shlex.split(endpoint[6:])
            if not cmd:
                raise InvalidInputError("empty stdio endpoint command")
            try:
                self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE,
                                             stdout=subprocess.PIPE)
            except OSError as exc:
                raise GuidanceUnavailableError(f"cannot spawn {cmd[0]!r}: {exc}") from exc
            self.reader = self.proc.stdout
            self.writer = self.proc.stdin
        else:
            raise InvalidInputError(
                f"endpoint must start with 'tcp:' or 'stdio:', got {endpoint!r}")

    def round_trip(self, obj: dict) -> dict:
        line = json.dumps(obj).encode() + b"\n"
        try:
            self.writer.write(line)
            self.writer.flush()
            reply = self._read_line()
        except (OSError, ValueError) as exc:
            raise GuidanceUnavailableError(f"wire transport failed: {exc}") from exc
        if not reply:
            raise GuidanceUnavailableError("oracle closed the connection")
        try:
            return json.loads(reply)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"response is not valid JSON: {exc}") from exc

    def _read_line(self) -> bytes:
        if self.proc is not None:
            # poll the pipe so a stuck child cannot hang the optimizer
            sel = selectors.DefaultSelector()
            sel.register(self.reader, selectors.EVENT_READ)
            ready = sel.select(self.timeout)
            sel.close()
            if not ready:
                raise GuidanceUnavailableError(
                    f"oracle did not answer within {self.timeout}s")
        return self.reader.readline()

    def close(self):
        for fh in (getattr(self, "writer", None), getattr(self, "reader", None)):
            try:
                if fh is not None:
                    fh.close()
            except OSError:
                pass
        if self.sock is not None:
            self.sock.close()
        if self.proc is not None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


def validate_request(msg: dict) -> tuple[np.ndarray, int, float]:
    """Shared request validation: returns (z_t as f64 (H,W,3), t, alpha_bar).

    Raises ProtocolError on schema violations (callers turn that into an
    error response carrying the request id when one is present)."""
    if not isinstance(msg, dict):
        raise ProtocolError("request is not a JSON object")
    if msg.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {msg.get('v')!r}")
    for key in ("id", "width", "height", "t", "alpha_bar", "z_t"):
        if key not in msg:
            raise ProtocolError(f"request missing field {key!r}")
    w, h = int(msg["width"]), int(msg["height"])
    if w < 1 or h < 1:
        raise ProtocolError("width/height must be positive")
    ab = float(msg["alpha_bar"])
    if not 0 < ab <= 1:
        raise ProtocolError(f"alpha_bar {ab} outside (0, 1]")
    z = decode_f32(msg["z_t"], (h, w, 3)).astype(np.float64)
    if msg.get("condition_labels") is not None:
        decode_u8(msg["condition_labels"], (h, w))
    return z, int(msg["t"]), ab


class InProcessEchoServer:
    """Loopback TCP server used by tests and the serve-selftest command.

    Implements the echo-target oracle (the point-mass noise predictor for a
    fixed image) over the wire protocol; this is the primary-side protocol
    fake, not the reference bridge.
    """

    def __init__(self, x_star: np.ndarray):
        import threading

        self.x_star = np.asarray(x_star, dtype=np.float64)
        self._server = socket.create_server(("127.0.0.1", 0))
        self.port = self._server.getsockname()[1]
        self.endpoint = f"tcp:127.0.0.1:{self.port}"
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        self._server.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            with conn:
                reader = conn.makefile("rb")
                writer = conn.makefile("wb")
                for line in reader:
                    if not line.strip():
                        continue
                    writer.write(json.dumps(self._handle(line)).encode() + b"\n")
                    writer.flush()
                    if self._stop.is_set():
                        break

    def _handle(self, line: bytes) -> dict:
        req_id = None
        try:
            msg = json.loads(line)
            req_id = msg.get("id") if isinstance(msg, dict) else None
            z, _t, ab = validate_request(msg)
            if z.shape != self.x_star.shape:
                raise ProtocolError(
                    f"request resolution {z.shape} does not match target")
            eps_hat = (z - np.sqrt(ab) * self.x_star) / np.sqrt(1.0 - ab)
            return {"v": PROTOCOL_VERSION, "id": req_id, "eps_hat": encode_f32(eps_hat)}
        except (json.JSONDecodeError, ProtocolError, ValueError) as exc:
            return {"v": PROTOCOL_VERSION, "id": req_id, "error": str(exc)}

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2)
        self._server.close()


class WireOracleClient(GuidanceOracle):
    """GuidanceOracle proxying predict_noise over the wire protocol."""

    def __init__(self, endpoint: str, schedule=None, timeout: float = 30.0,
                 cfg_scale: float = 7.5):
        from .guidance import NoiseSchedule

        self.endpoint = endpoint
        self.schedule = schedule or NoiseSchedule.cosine()
        self.cfg_scale = cfg_scale
        self.timeout = timeout
        self._channel = _Channel(endpoint, timeout)
        self._counter = 0

    def predict_noise(self, z_t, t, condition, prompt):
        z_t = np.asarray(z_t, dtype=np.float64)
        self._counter += 1
        req_id = f"q{self._counter}"
        labels = None if condition is None else condition.labels
        req = build_request(req_id, z_t, t,
                            alpha_bar=float(self.schedule.alpha_bar[t]),
                            prompt=prompt, condition_labels=labels,
                            cfg_scale=self.cfg_scale)
        reply = self._channel.round_trip(req)
        return parse_response(reply, req_id, z_t.shape)

    def close(self):
        self._channel.close()
