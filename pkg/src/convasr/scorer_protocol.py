"""Boundary to secondary language models.

Wire protocol: newline-delimited UTF-8 JSON messages, one request and one
response object per line, over a child-process pipe or a TCP stream.

    {"request_id": 7, "mode": "mlm_pll", "context": ["..."], "candidates": ["..."]}
    {"request_id": 7, "scores": [-12.25, -9.5]}

Scores are natural-log values serialized with 9 significant digits.
Responses may arrive out of order; they are matched by request_id.  A replay
log (request line followed by its response line) makes reranking and the
gamma grid search reproducible offline with zero scorer re-invocation.
"""

import json
import math
import socket
import subprocess
import threading
from dataclasses import dataclass, field

from .errors import ScorerError
from .ngram_lm import LN10
from .rescoring import SCORER_MODES

_NINE = "{:.9g}"


def _round9(x):
    return float(_NINE.format(float(x)))


@dataclass(frozen=True)
class ScoreRequest:
    request_id: int
    mode: str
    context: tuple
    candidates: tuple

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.mode not in SCORER_MODES:
            raise ScorerError(f"unknown mode {self.mode!r}", self.request_id)
        if not self.candidates:
            raise ScorerError("empty candidate list", self.request_id)

    def to_line(self):
        return json.dumps(
            {
                "request_id": self.request_id,
                "mode": self.mode,
                "context": list(self.context),
                "candidates": list(self.candidates),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_line(cls, line):
        try:
            obj = json.loads(line)
            return cls(
                request_id=int(obj["request_id"]),
                mode=obj["mode"],
                context=tuple(obj["context"]),
                candidates=tuple(obj["candidates"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScorerError(f"malformed request line: {exc}") from exc


@dataclass(frozen=True)
class ScoreResponse:
    request_id: int
    scores: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "scores", tuple(_round9(s) for s in self.scores)
        )

    def to_line(self):
        return json.dumps(
            {"request_id": self.request_id, "scores": list(self.scores)}
        )

    @classmethod
    def from_line(cls, line):
        try:
            obj = json.loads(line)
            return cls(
                request_id=int(obj["request_id"]),
                scores=tuple(float(s) for s in obj["scores"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScorerError(f"malformed response line: {exc}") from exc


def validate_response(request, response):
    if response.request_id != request.request_id:
        raise ScorerError(
            f"response id {response.request_id} for request {request.request_id}",
            request.request_id,
        )
    if len(response.scores) != len(request.candidates):
        raise ScorerError(
            f"{len(response.scores)} scores for {len(request.candidates)} candidates",
            request.request_id,
        )
    if any(not math.isfinite(s) for s in response.scores):
        raise ScorerError("non-finite score", request.request_id)
    return response


def score(scorer, request):
    """Issue one request and validate the aligned response."""
    return validate_response(request, scorer.score_batch(request))


def mlm_pll_aggregate(token_log_probs):
    """Pseudo-log-likelihood: sum of per-position masked log-probabilities."""
    probs = list(token_log_probs)
    if not probs:
        raise ScorerError("pseudo-log-likelihood of an empty sequence")
    if any(p > 0 for p in probs):
        raise ScorerError("masked log-probabilities must be <= 0")
    return float(sum(probs))


# ----------------------------------------------------------------------
# built-in scorers
# ----------------------------------------------------------------------


class NGramScorer:
    """Reference scorer: full-sentence n-gram log-probability (natural log).

    The conversational context is ignored; an n-gram model has no use for it.
    """

    def __init__(self, model):
        self.model = model

    def score_batch(self, request):
        scores = [
            self.model.sentence_log_prob(text) * LN10 for text in request.candidates
        ]
        return ScoreResponse(request_id=request.request_id, scores=scores)


class ConstantScorer:
    """Returns the same score for every candidate (mock)."""

    def __init__(self, value=0.0):
        self.value = value

    def score_batch(self, request):
        return ScoreResponse(
            request_id=request.request_id,
            scores=[self.value] * len(request.candidates),
        )


class FunctionScorer:
    """Scores each candidate with fn(context, text) (mock/testing)."""

    def __init__(self, fn):
        self.fn = fn

    def score_batch(self, request):
        scores = [self.fn(request.context, text) for text in request.candidates]
        return ScoreResponse(request_id=request.request_id, scores=scores)


class ScoreCache:
    """Caches scores by (mode, context, candidate) around another scorer.

    Makes the gamma grid search a pure post-processing step: repeated
    requests never re-invoke the backing scorer.
    """

    def __init__(self, scorer):
        self.scorer = scorer
        self._cache = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def score_batch(self, request):
        keyed = [
            (request.mode, request.context, text) for text in request.candidates
        ]
        with self._lock:
            missing = [k for k in keyed if k not in self._cache]
        if missing:
            texts = []
            seen = set()
            for k in missing:
                if k[2] not in seen:
                    seen.add(k[2])
                    texts.append(k[2])
            sub = ScoreRequest(
                request_id=request.request_id,
                mode=request.mode,
                context=request.context,
                candidates=tuple(texts),
            )
            resp = validate_response(sub, self.scorer.score_batch(sub))
            with self._lock:
                for text, value in zip(sub.candidates, resp.scores):
                    self._cache[(request.mode, request.context, text)] = value
                self.misses += len(texts)
        with self._lock:
            self.hits += len(keyed) - len(missing)
            scores = [self._cache[k] for k in keyed]
        return ScoreResponse(request_id=request.request_id, scores=scores)


class RecordingScorer:
    """Tees every request/response line pair into a replay log file."""

    def __init__(self, scorer, path):
        self.scorer = scorer
        self._fh = open(path, "w", encoding="utf-8")

    def score_batch(self, request):
        response = validate_response(request, self.scorer.score_batch(request))
        self._fh.write(request.to_line() + "\n")
        self._fh.write(response.to_line() + "\n")
        self._fh.flush()
        return response

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _replay_key(request):
    return (request.mode, request.context, request.candidates)


class ReplayScorer:
    """Serves recorded scores from a replay log; offline deterministic reruns."""

    def __init__(self, path):
        self._table = {}
        try:
            with open(path, encoding="utf-8") as fh:
                lines = [line for line in fh if line.strip()]
        except OSError as exc:
            raise ScorerError(f"cannot read replay log {path}: {exc}") from exc
        if len(lines) % 2:
            raise ScorerError(f"replay log {path} has an odd number of lines")
        for i in range(0, len(lines), 2):
            req = ScoreRequest.from_line(lines[i])
            resp = validate_response(req, ScoreResponse.from_line(lines[i + 1]))
            self._table[_replay_key(req)] = resp.scores

    def __len__(self):
        return len(self._table)

    def score_batch(self, request):
        scores = self._table.get(_replay_key(request))
        if scores is None:
            raise ScorerError("request not present in replay log", request.request_id)
        return ScoreResponse(request_id=request.request_id, scores=scores)


# ----------------------------------------------------------------------
# transports
# ----------------------------------------------------------------------


class _LineTransport:
    """Pipelined line transport with request_id matching."""

    max_inflight = 32

    def _send(self, line):
        raise NotImplementedError

    def _recv(self):
        raise NotImplementedError

    def __init__(self):
        self._pending = {}

    def score_many(self, requests):
        """Score a list of requests with up to max_inflight in flight."""
        responses = {}
        queue = list(requests)
        inflight = {}
        qi = 0
        while qi < len(queue) or inflight:
            while qi < len(queue) and len(inflight) < self.max_inflight:
                req = queue[qi]
                qi += 1
                self._send(req.to_line())
                inflight[req.request_id] = req
            line = self._recv()
            if not line:
                raise ScorerError("scorer endpoint closed the stream")
            resp = ScoreResponse.from_line(line)
            req = inflight.pop(resp.request_id, None)
            if req is None:
                raise ScorerError(f"unexpected response id {resp.request_id}")
            responses[resp.request_id] = validate_response(req, resp)
        return [responses[r.request_id] for r in requests]

    def score_batch(self, request):
        return self.score_many([request])[0]


class ProcessScorer(_LineTransport):
    """Scorer served by a child process over stdin/stdout."""

    def __init__(self, argv, max_inflight=32):
        super().__init__()
        self.max_inflight = max_inflight
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise ScorerError(f"cannot start scorer process: {exc}") from exc

    def _send(self, line):
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ScorerError(f"scorer process pipe failed: {exc}") from exc

    def _recv(self):
        return self._proc.stdout.readline().rstrip("\n")

    def close(self):
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TcpScorer(_LineTransport):
    """Scorer reached over a TCP host:port line stream."""

    def __init__(self, host, port, max_inflight=32, timeout=60.0):
        super().__init__()
        self.max_inflight = max_inflight
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ScorerError(f"cannot connect to scorer at {host}:{port}: {exc}")
        self._rfile = self._sock.makefile("r", encoding="utf-8")
        self._wfile = self._sock.makefile("w", encoding="utf-8")

    def _send(self, line):
        self._wfile.write(line + "\n")
        self._wfile.flush()

    def _recv(self):
        return self._rfile.readline().rstrip("\n")

    def close(self):
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_scorer(endpoint, max_inflight=32):
    """Endpoint syntax: ``tcp:host:port`` or a shell-split command line."""
    if endpoint.startswith("tcp:"):
        _, host, port = endpoint.split(":")
        return TcpScorer(host, int(port), max_inflight=max_inflight)
    import shlex

    return ProcessScorer(shlex.split(endpoint), max_inflight=max_inflight)


# ----------------------------------------------------------------------
# pairwise evaluation (text-only disambiguation accuracy)
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class PairwiseEvalResult:
    accuracy: float
    true_positive_rate: float
    true_negative_rate: float
    sample_count: int
    ties: int = 0


def evaluate_pairwise(scorer, samples, mode="classifier"):
    """Accuracy of identifying the better candidate in (context, pos, neg) pairs.

    Both candidates start from a flat prior; the prediction is the
    higher-scored one.  Each pair contributes one positive and one negative
    decision; ties count as incorrect in both directions.
    """
    tp = tn = fp = fn = ties = 0
    request_id = 0
    for sample in samples:
        if hasattr(sample, "context"):
            context = tuple(sample.context)
            pos, neg = sample.positive, sample.negative
            flip = getattr(sample, "flip", False)
        else:
            context, pos, neg = sample[0], sample[1], sample[2]
            context = tuple(context)
            flip = sample[3] if len(sample) > 3 else False
        candidates = (neg, pos) if flip else (pos, neg)
        request_id += 1
        request = ScoreRequest(
            request_id=request_id, mode=mode, context=context, candidates=candidates
        )
        response = score(scorer, request)
        s = dict(zip(candidates, response.scores))
        s_pos, s_neg = s[pos], s[neg]
        if s_pos > s_neg:
            tp += 1
            tn += 1
        elif s_pos < s_neg:
            fn += 1
            fp += 1
        else:
            ties += 1
            fn += 1
            fp += 1
    total = tp + tn + fp + fn
    if total == 0:
        raise ScorerError("no pairwise samples to evaluate")
    return PairwiseEvalResult(
        accuracy=(tp + tn) / total,
        true_positive_rate=tp / (tp + fn) if tp + fn else 0.0,
        true_negative_rate=tn / (tn + fp) if tn + fp else 0.0,
        sample_count=request_id,
        ties=ties,
    )
