"""Protocol endpoint: newline-delimited JSON over stdio or TCP.

One request object per line; one response object per line, scores aligned
with the request's candidates, natural log, 9 significant digits.
"""

import json
import socketserver
import sys

from .model import ScoringModel


def _round9(x):
    return float(f"{x:.9g}")


def handle_line(model, line):
    request = json.loads(line)
    request_id = int(request["request_id"])
    mode = request.get("mode") or model.config.default_mode
    context = tuple(request.get("context") or ())
    candidates = list(request["candidates"])
    if not candidates:
        raise ValueError(f"request {request_id}: empty candidate list")
    scores = model.score(mode, context, candidates)
    return json.dumps(
        {"request_id": request_id, "scores": [_round9(s) for s in scores]}
    )


def serve_stdio(config, stdin=None, stdout=None):
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    model = ScoringModel(config)
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(handle_line(model, line) + "\n")
        stdout.flush()
    if model.truncated_inputs:
        print(
            f"warning: left-truncated context on {model.truncated_inputs} inputs",
            file=sys.stderr,
        )


def serve_tcp(config, host, port):
    model = ScoringModel(config)

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8")
                if not line.strip():
                    continue
                response = handle_line(model, line)
                self.wfile.write((response + "\n").encode("utf-8"))
                self.wfile.flush()

    with socketserver.ThreadingTCPServer((host, port), Handler) as server:
        server.serve_forever()
