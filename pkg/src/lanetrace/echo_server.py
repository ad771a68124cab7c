"""Reference external predictor speaking the wire protocol.

Bundled for protocol conformance testing and as a starting point for real
predictor integrations. Modes:

  echo       answer each request with one vertex derived deterministically
             from the step id, echoing an adler32 of the decoded payload
             (the default; lets a client verify bit-exact transport)
  fixed      always answer with one configurable vertex
  badprob    answer with an out-of-range probability (validation fault)
  malformed  answer with a non-prediction message (framing fault)
  sleepy     never answer requests (timeout fault)
  flaky      behave like `fixed` but exit abruptly after N requests

Run as ``python -m lanetrace.echo_server [mode] [options]``.
"""

from __future__ import annotations

import argparse
import base64
import json
import struct
import sys
import time
import zlib

PROTOCOL_VERSION = 1


def _read(stream):
    header = stream.read(4)
    if len(header) < 4:
        return None
    (length,) = struct.unpack("<I", header)
    body = stream.read(length)
    if len(body) < length:
        return None
    return json.loads(body.decode("utf-8"))


def _write(stream, obj):
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    stream.write(struct.pack("<I", len(body)) + body)
    stream.flush()


def echo_vertex(step_id):
    """Deterministic vertex for a step id (stays inside a 64 px ROI)."""
    dx = float((step_id * 7) % 17 - 8)
    dy = float((step_id * 5) % 13 - 6)
    return {"x": dx, "y": dy, "p": 0.9}


def serve(mode="echo", dx=8.0, dy=0.0, p=0.9, fail_after=0,
          stdin=None, stdout=None):
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    hello = _read(stdin)
    if hello is None or hello.get("type") != "hello":
        return 1
    _write(stdout, {"type": "hello_ack", "version": PROTOCOL_VERSION})
    served = 0
    while True:
        msg = _read(stdin)
        if msg is None:
            return 0
        if msg.get("type") != "predict":
            continue
        served += 1
        if mode == "sleepy":
            time.sleep(3600.0)
            continue
        if mode == "flaky" and served > fail_after:
            return 2  # drop the connection mid-run
        if mode == "malformed":
            _write(stdout, {"type": "surprise", "step_id": msg["step_id"]})
            continue
        step_id = msg["step_id"]
        if mode == "badprob":
            vertices = [{"x": 1.0, "y": 0.0, "p": 1.2}]
        elif mode == "fixed":
            vertices = [{"x": dx, "y": dy, "p": p}]
        else:
            vertices = [echo_vertex(step_id)]
        reply = {"type": "prediction", "step_id": step_id,
                 "vertices": vertices}
        if mode == "echo":
            data = base64.b64decode(msg["data"].encode("ascii"))
            reply["payload_crc"] = zlib.adler32(data)
        _write(stdout, reply)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("mode", nargs="?", default="echo",
                        choices=["echo", "fixed", "badprob", "malformed",
                                 "sleepy", "flaky"])
    parser.add_argument("--dx", type=float, default=8.0)
    parser.add_argument("--dy", type=float, default=0.0)
    parser.add_argument("--p", type=float, default=0.9)
    parser.add_argument("--fail-after", type=int, default=3)
    args = parser.parse_args(argv)
    return serve(args.mode, args.dx, args.dy, args.p, args.fail_after)


if __name__ == "__main__":
    sys.exit(main())
