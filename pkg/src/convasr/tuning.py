"""Two-stage hyperparameter optimization.

Stage 1: uniform random search over the shallow-fusion weights (alpha, beta),
re-decoding the evaluation set per trial and minimizing the summed word edit
distance of either the top beam candidate or the oracle candidate.

Stage 2: grid search over the rescoring interpolation weight gamma on cached
scorer scores, minimizing total WER; ties resolve to the smaller gamma.
Test-split results must always use the evaluation-set argmin; the pipeline
never exposes a test-tuned path.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .ctc_decoder import beam_search
from .errors import ConfigError, DecodeError, ScorerError
from .metrics import word_edit_distance
from .rescoring import oracle_select, top_candidate

OBJECTIVES = ("top1_wed", "oracle_wed")


@dataclass
class TuneResult:
    best_params: dict
    best_objective: float
    trials: list  # (params, objective or None, status)
    seed: int | None = None
    curve: list | None = None  # (gamma, wer) pairs for grid searches


def random_search_beam(
    eval_items,
    base_cfg,
    objective="top1_wed",
    trials=64,
    alpha_range=(0.0, 5.0),
    beta_range=(0.0, 5.0),
    seed=0,
):
    """Uniform random search over (alpha, beta) on an evaluation set.

    `eval_items` is a sequence of (LogitMatrix, reference text).  Failed
    trials (decode errors) are recorded and excluded from the argmin.
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}")
    if trials < 1:
        raise ConfigError("need at least one trial")
    for lo, hi in (alpha_range, beta_range):
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ConfigError("parameter ranges must be finite with lo <= hi")

    rng = np.random.default_rng(seed)
    trial_rows = []
    best = None
    for trial in range(trials):
        alpha = float(rng.uniform(*alpha_range))
        beta = float(rng.uniform(*beta_range))
        params = {"alpha": alpha, "beta": beta}
        cfg = replace(base_cfg, alpha=alpha, beta=beta)
        try:
            total = 0
            for z, reference in eval_items:
                nbest = beam_search(z, cfg)
                cand = (
                    top_candidate(nbest)
                    if objective == "top1_wed"
                    else oracle_select(nbest, reference)
                )
                total += word_edit_distance(reference, cand.text)
        except DecodeError as exc:
            trial_rows.append((params, None, f"failed: {exc}"))
            continue
        trial_rows.append((params, float(total), "ok"))
        if best is None or total < best[1]:
            best = (params, total)
    if best is None:
        raise ConfigError("all tuning trials failed")
    return TuneResult(
        best_params=best[0],
        best_objective=float(best[1]),
        trials=trial_rows,
        seed=seed,
    )


def grid_search_gamma(entries, lo=0.0, hi=0.5, step=0.001, standardize=False):
    """Grid search over gamma on cached scores; minimizes total WER.

    `entries` is a sequence of (NBestList, reference text, scores mapping).
    Returns a TuneResult whose ``curve`` holds every (gamma, wer) grid point.
    """
    n_points = int(round((hi - lo) / step)) + 1
    gammas = np.linspace(lo, hi, n_points)

    per_utt = []
    total_words = 0
    for nbest, reference, scores in entries:
        cands = sorted(nbest.candidates, key=lambda c: c.rank)
        missing = [c.text for c in cands if c.text not in scores]
        if missing:
            raise ScorerError(
                f"{nbest.utterance_id}: missing cached score for {missing[0]!r}"
            )
        logbs = np.array([c.log_bs for c in cands])
        sc = np.array([float(scores[c.text]) for c in cands])
        if standardize and len(sc):
            sc = sc - sc.mean()
        wed = np.array([word_edit_distance(reference, c.text) for c in cands])
        per_utt.append((logbs, sc, wed))
        total_words += len(reference.split())
    if total_words == 0:
        raise ConfigError("evaluation references contain no words")

    edits = np.zeros(n_points, dtype=np.int64)
    for logbs, sc, wed in per_utt:
        combined = np.outer(1.0 - gammas, logbs) + np.outer(gammas, sc)
        picks = np.argmax(combined, axis=1)  # first max = lowest original rank
        edits += wed[picks]
    wers = edits / total_words
    best_idx = int(np.argmin(wers))  # first minimum = smallest gamma
    curve = [(float(g), float(w)) for g, w in zip(gammas, wers)]
    return TuneResult(
        best_params={"gamma": float(gammas[best_idx])},
        best_objective=float(wers[best_idx]),
        trials=[({"gamma": g}, w, "ok") for g, w in curve],
        curve=curve,
    )


def write_trials_csv(result, path):
    params = sorted({k for p, _, _ in result.trials for k in p})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", *params, "objective", "status"])
        for i, (p, obj, status) in enumerate(result.trials):
            row = [i] + [f"{p.get(k, ''):.9g}" for k in params]
            row.append("" if obj is None else f"{obj:.9g}")
            row.append(status)
            writer.writerow(row)


def write_curve_csv(curve, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma", "wer"])
        for gamma, wer in curve:
            writer.writerow([f"{gamma:.9g}", f"{wer:.9g}"])
