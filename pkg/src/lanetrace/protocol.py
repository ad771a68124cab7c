"""Wire protocol client for external next-vertex predictors.

A learned model runs as a child process speaking length-prefixed JSON
messages over its stdin/stdout: a 4-byte little-endian length header
followed by a UTF-8 JSON body. The ROI tensor travels base64-encoded as
row-major little-endian float32, so payloads are bit-exact.

Message flow: one ``hello``/``hello_ack`` handshake pinning the protocol
version and ROI dimensions, then one ``predict`` request per agent step,
answered by a ``prediction`` carrying up to the configured number of
vertices ``{x, y, p}`` (ROI-center-relative pixels and a validity
probability). Responses correlate by ``step_id``; stale responses are
skipped. Failures surface as distinct errors that the tracer maps to
instance termination, never run termination.
"""

from __future__ import annotations

import base64
import json
import select
import struct
import subprocess
import time
import zlib

import numpy as np

from .predictors import PredictedVertex, PredictorError, PredictorOutput

PROTOCOL_VERSION = 1


class ProtocolTimeout(PredictorError):
    """The external predictor did not answer within the deadline."""


class MalformedResponse(PredictorError):
    """The external predictor sent something the protocol forbids."""


class DimensionMismatch(PredictorError):
    """ROI dimensions differ from what the handshake pinned."""


def write_message(stream, obj):
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    stream.write(struct.pack("<I", len(body)) + body)
    stream.flush()


def read_message(stream):
    header = stream.read(4)
    if len(header) < 4:
        raise EOFError("stream closed")
    (length,) = struct.unpack("<I", header)
    body = stream.read(length)
    if len(body) < length:
        raise EOFError("stream closed mid-message")
    return json.loads(body.decode("utf-8"))


def encode_roi(roi):
    data = np.ascontiguousarray(roi, dtype="<f4").tobytes()
    return base64.b64encode(data).decode("ascii"), zlib.adler32(data)


def decode_roi(payload, shape):
    data = base64.b64decode(payload.encode("ascii"))
    return np.frombuffer(data, dtype="<f4").reshape(shape)


class ExternalPredictor:
    """Child-process predictor session: one process, one request in flight.

    ``command`` is the argv of the predictor executable. The handshake runs
    at construction; ROI channel count and size are pinned there and every
    later request must match them.
    """

    def __init__(self, command, roi_channels, roi_size, n_max=8,
                 theta_valid=0.5, timeout=5.0, handshake_timeout=15.0,
                 run_id="run"):
        self.command = list(command)
        self.roi_channels = roi_channels
        self.roi_size = roi_size
        self.n_max = n_max
        self.theta_valid = theta_valid
        self.timeout = timeout
        self.run_id = run_id
        self.step_id = 0
        self.last_response = None
        try:
            self.proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise PredictorError(f"cannot start predictor: {exc}") from exc
        write_message(self.proc.stdin, {
            "type": "hello", "version": PROTOCOL_VERSION,
            "roi_channels": roi_channels, "roi_size": roi_size,
            "run_id": run_id,
        })
        # process startup latency should not count against the step deadline
        ack = self._read_with_deadline(handshake_timeout)
        if ack.get("type") != "hello_ack" or ack.get("version") != PROTOCOL_VERSION:
            self.close()
            raise MalformedResponse(f"bad handshake: {ack}")

    def _read_with_deadline(self, timeout=None):
        timeout = self.timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        fd = self.proc.stdout.fileno()
        buf = b""
        need = 4
        length = None
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProtocolTimeout(f"no response within {timeout:.1f}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = self.proc.stdout.read1(65536)
            if not chunk:
                raise MalformedResponse("predictor closed its stdout")
            buf += chunk
            if length is None and len(buf) >= 4:
                (length,) = struct.unpack("<I", buf[:4])
                need = 4 + length
            if length is not None and len(buf) >= need:
                try:
                    return json.loads(buf[4:need].decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise MalformedResponse(f"undecodable message: {exc}")

    def predict(self, roi, ctx=None):
        roi = np.asarray(roi)
        if roi.shape != (self.roi_channels, self.roi_size, self.roi_size):
            raise DimensionMismatch(
                f"ROI shape {roi.shape} does not match handshake "
                f"({self.roi_channels}, {self.roi_size}, {self.roi_size})")
        self.step_id += 1
        payload, _ = encode_roi(roi)
        try:
            write_message(self.proc.stdin, {
                "type": "predict", "run_id": self.run_id,
                "step_id": self.step_id,
                "shape": [int(s) for s in roi.shape], "dtype": "<f4",
                "data": payload, "theta_valid": self.theta_valid,
                "n_max": self.n_max,
            })
        except (BrokenPipeError, OSError) as exc:
            raise MalformedResponse(f"predictor pipe broken: {exc}") from exc
        while True:
            msg = self._read_with_deadline()
            if msg.get("type") != "prediction":
                raise MalformedResponse(f"unexpected message type: {msg.get('type')}")
            if msg.get("step_id") == self.step_id:
                break
            if msg.get("step_id", 0) > self.step_id:
                raise MalformedResponse("response from the future")
            # stale response from an aborted step: skip it
        self.last_response = msg
        vertices = msg.get("vertices")
        if not isinstance(vertices, list):
            raise MalformedResponse("missing vertex list")
        out = []
        for v in vertices:
            try:
                out.append(PredictedVertex(float(v["x"]), float(v["y"]),
                                           float(v["p"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponse(f"bad vertex entry: {v}") from exc
        output = PredictorOutput(out)
        try:
            output.validate(self.roi_size / 2.0, self.n_max)
        except ValueError as exc:
            raise MalformedResponse(str(exc)) from exc
        return output

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
