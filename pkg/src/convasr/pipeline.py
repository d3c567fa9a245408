"""Pipeline stages behind the command-line surface.

Each stage is a pure function of its inputs plus the seeds recorded in the
configuration; artifacts are reproducible byte-for-byte.  A manifest is
written next to every command's outputs recording the configuration hash and
the SHA-256 of every input and output file.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import (
    corpus as corpus_mod,
    ctc_decoder,
    metrics,
    ngram_lm,
    rescoring,
    scorer_protocol,
    synthdata,
    taskgen,
    trie_vocab,
    tuning,
)
from .errors import ConfigError, ConvasrError, IntegrityError

SCORER_ENV = "CONVASR_SCORER"

CONTEXT_PRESETS = {"none": 0, "short": 2, "long": 5}


@dataclass
class PipelineConfig:
    corpus: str = ""
    logit_dir: str = ""
    vocabulary: str = ""
    lm: str = ""
    output_dir: str = "out"
    seed: int | None = None
    noise: float = 0.3
    lm_order: int = 2
    lm_prune: str = "default"
    beam_width: int = 1024
    alpha: float = 0.0
    beta: float = 0.0
    char_bonus: bool = False
    gamma: float = 0.0
    scorer_mode: str = "mlm_pll"
    standardize: bool = False
    scorer: str = ""
    context: str = "short"
    context_source: str = "ground_truth"  # or "decoded"
    workers: int = 1
    tune_trials: int = 64
    alpha_range: str = "0,5"
    beta_range: str = "0,5"
    grid_lo: float = 0.0
    grid_hi: float = 0.5
    grid_step: float = 0.001
    synth_train: int = 60
    synth_eval: int = 34
    synth_test: int = 24

    def context_k(self):
        if self.context in CONTEXT_PRESETS:
            return CONTEXT_PRESETS[self.context]
        try:
            k = int(self.context)
        except ValueError:
            raise ConfigError(
                f"context must be none/short/long or an integer, got {self.context!r}"
            )
        if k < 0:
            raise ConfigError("context length must be >= 0")
        return k

    def parsed_range(self, name):
        raw = getattr(self, name)
        try:
            lo, hi = (float(x) for x in raw.split(","))
        except ValueError:
            raise ConfigError(f"{name} must be 'lo,hi', got {raw!r}")
        return lo, hi


_BOOL_KEYS = {"char_bonus", "standardize"}
_INT_KEYS = {
    "seed",
    "lm_order",
    "beam_width",
    "workers",
    "tune_trials",
    "synth_train",
    "synth_eval",
    "synth_test",
}
_FLOAT_KEYS = {"noise", "alpha", "beta", "gamma", "grid_lo", "grid_hi", "grid_step"}


def load_config(path, overrides=()):
    """Parse a key=value config file plus command-line overrides."""
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                problems.append(f"line {lineno}: expected 'key = value'")
                continue
            key, value = (part.strip() for part in text.split("=", 1))
            if key not in known:
                problems.append(f"line {lineno}: unknown key {key!r}")
                continue
            values[key] = value
    for item in overrides:
        if "=" not in item:
            problems.append(f"override {item!r}: expected key=value")
            continue
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in known:
            problems.append(f"override: unknown key {key!r}")
            continue
        values[key] = value

    cfg = PipelineConfig()
    for key, value in values.items():
        try:
            if key in _BOOL_KEYS:
                parsed = value.strip().lower() in ("1", "true", "yes")
            elif key in _INT_KEYS:
                parsed = int(value)
            elif key in _FLOAT_KEYS:
                parsed = float(value)
            else:
                parsed = value
        except ValueError:
            problems.append(f"key {key!r}: cannot parse {value!r}")
            continue
        setattr(cfg, key, parsed)
    if cfg.seed is None:
        problems.append("mandatory key 'seed' is missing")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def require_paths(cfg, *names):
    problems = []
    for name in names:
        path = getattr(cfg, name)
        if not path:
            problems.append(f"config key {name!r} is required for this command")
        elif not os.path.exists(path):
            problems.append(f"{name} path {path!r} does not exist")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))


# ----------------------------------------------------------------------
# manifests
# ----------------------------------------------------------------------


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(output_dir, command, cfg, inputs, outputs, extra=None):
    cfg_json = json.dumps(
        {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)},
        sort_keys=True,
    )
    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "seed": cfg.seed,
        "inputs": {os.path.basename(p): _sha256(p) for p in sorted(set(inputs))},
        "outputs": {os.path.basename(p): _sha256(p) for p in sorted(set(outputs))},
    }
    if extra:
        manifest["extra"] = extra
    path = os.path.join(output_dir, f"{command}.manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ----------------------------------------------------------------------
# shared loading helpers
# ----------------------------------------------------------------------


def split_utterances(conversations, split):
    out = []
    for conv in sorted(conversations, key=lambda c: c.id):
        if conv.split == split:
            out.extend(conv.utterances)
    return out


def load_beam_assets(cfg):
    """Vocabulary trie plus the fusion LM named in the config (if any)."""
    require_paths(cfg, "vocabulary")
    trie = trie_vocab.build(corpus_mod.load_vocabulary(cfg.vocabulary))
    lm = None
    if cfg.lm:
        require_paths(cfg, "lm")
        lm = ngram_lm.load_arpa(cfg.lm)
    return trie, lm


def beam_config(cfg, trie, lm):
    return ctc_decoder.BeamConfig(
        beam_width=cfg.beam_width,
        alpha=cfg.alpha,
        beta=cfg.beta,
        lm=lm,
        trie=trie,
        char_bonus=cfg.char_bonus,
    )


def read_split_logits(cfg, utterances):
    require_paths(cfg, "logit_dir")
    out = []
    for utt in utterances:
        path = os.path.join(cfg.logit_dir, f"{utt.id}.ctcl")
        if not os.path.exists(path):
            raise IntegrityError(
                f"missing logit file {path}; run the synth (or your acoustic "
                "model export) step first"
            )
        out.append(corpus_mod.read_logits(path, utterance_id=utt.id))
    return out


def make_scorer(cfg, request_mode=None):
    """Scorer from config/environment: built-in n-gram, replay, or endpoint."""
    endpoint = os.environ.get(SCORER_ENV, "") or cfg.scorer
    if not endpoint:
        raise ConfigError(
            "no scorer configured: set the 'scorer' key or CONVASR_SCORER"
        )
    if endpoint.startswith("ngram:"):
        model = ngram_lm.load_arpa(endpoint[len("ngram:"):])
        return scorer_protocol.NGramScorer(model)
    if endpoint.startswith("replay:"):
        return scorer_protocol.ReplayScorer(endpoint[len("replay:"):])
    return scorer_protocol.open_scorer(endpoint)


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------


def stage_synth(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    logit_dir = os.path.join(cfg.output_dir, "logits")
    os.makedirs(logit_dir, exist_ok=True)
    conversations = synthdata.make_corpus(
        n_train=cfg.synth_train,
        n_eval=cfg.synth_eval,
        n_test=cfg.synth_test,
        seed=cfg.seed,
    )
    corpus_path = os.path.join(cfg.output_dir, "corpus.tsv")
    corpus_mod.save_corpus(conversations, corpus_path)
    vocab_path = os.path.join(cfg.output_dir, "vocabulary.txt")
    train_words = {
        w for t in synthdata.training_texts(conversations) for w in t.split()
    }
    corpus_mod.save_vocabulary(train_words, vocab_path)
    logits = synthdata.make_logits(conversations, noise=cfg.noise, seed=cfg.seed)
    paths = []
    for utt_id in sorted(logits):
        path = os.path.join(logit_dir, f"{utt_id}.ctcl")
        corpus_mod.write_logits(logits[utt_id], path)
        paths.append(path)
    outputs = [corpus_path, vocab_path] + paths
    write_manifest(cfg.output_dir, "synth", cfg, [], outputs)
    return corpus_path, vocab_path, logit_dir


def stage_train_lm(cfg, order=None, out_path=None):
    require_paths(cfg, "corpus")
    order = order or cfg.lm_order
    conversations = corpus_mod.load_corpus(cfg.corpus, split_filter="train")
    texts = [u.text for c in conversations for u in c.utterances]
    if cfg.lm_prune == "default":
        prune = ngram_lm.PruneConfig.default(order)
    elif cfg.lm_prune == "none":
        prune = ngram_lm.PruneConfig.none(order)
    else:
        prune = ngram_lm.PruneConfig([int(x) for x in cfg.lm_prune.split(",")])
    model = ngram_lm.train_from_texts(texts, order, prune)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out_path = out_path or os.path.join(cfg.output_dir, f"lm{order}.arpa")
    ngram_lm.save_arpa(model, out_path)
    write_manifest(
        cfg.output_dir, f"train-lm-{order}", cfg, [cfg.corpus], [out_path]
    )
    return out_path


def _decode_one(args):
    z, cfg_beam = args
    return ctc_decoder.beam_search(z, cfg_beam)


def stage_decode(cfg, split):
    require_paths(cfg, "corpus")
    conversations = corpus_mod.load_corpus(cfg.corpus, split_filter=split)
    utterances = split_utterances(conversations, split)
    trie, lm = load_beam_assets(cfg)
    cfg_beam = beam_config(cfg, trie, lm)
    matrices = read_split_logits(cfg, utterances)

    if cfg.workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(cfg.workers) as pool:
            nbests = pool.map(
                _decode_one, [(z, cfg_beam) for z in matrices], chunksize=8
            )
    else:
        nbests = [ctc_decoder.beam_search(z, cfg_beam) for z in matrices]

    os.makedirs(cfg.output_dir, exist_ok=True)
    out_path = os.path.join(cfg.output_dir, f"nbest_{split}.tsv")
    ctc_decoder.write_nbest(nbests, out_path)
    inputs = [cfg.corpus, cfg.vocabulary] + (
        [cfg.lm] if cfg.lm else []
    )
    write_manifest(cfg.output_dir, f"decode-{split}", cfg, inputs, [out_path])
    return out_path, nbests, utterances


def contexts_for(cfg, conversations, utterances, decoded=None):
    """Context windows per utterance; `decoded` maps utterance ids to
    decoder outputs for inference-time context instead of ground truth."""
    k = cfg.context_k()
    by_id = {c.id: c for c in conversations}
    out = {}
    for utt in utterances:
        conv = by_id[utt.conversation_id]
        out[utt.id] = corpus_mod.context_window(
            conv, utt.index, k, use_decoded=decoded
        )
    return out


def collect_scores(scorer, nbests, contexts, mode, record_path=None):
    """Score every unique candidate of every list; returns per-utterance maps."""
    cache = scorer_protocol.ScoreCache(scorer)
    target = cache
    recording = None
    if record_path is not None:
        recording = scorer_protocol.RecordingScorer(cache, record_path)
        target = recording
    score_maps = {}
    request_id = 0
    try:
        for nbest in nbests:
            context = tuple(contexts[nbest.utterance_id].utterances)
            request_id += 1
            request = scorer_protocol.ScoreRequest(
                request_id=request_id,
                mode="mlm_pll",
                context=context,
                candidates=tuple(c.text for c in nbest.candidates),
            )
            response = scorer_protocol.score(target, request)
            score_maps[nbest.utterance_id] = dict(
                zip(request.candidates, response.scores)
            )
    finally:
        if recording is not None:
            recording.close()
    return score_maps


def stage_rescore(cfg, split, nbest_path=None, gamma=None):
    require_paths(cfg, "corpus")
    gamma = cfg.gamma if gamma is None else gamma
    conversations = corpus_mod.load_corpus(cfg.corpus, split_filter=split)
    utterances = split_utterances(conversations, split)
    nbest_path = nbest_path or os.path.join(cfg.output_dir, f"nbest_{split}.tsv")
    if not os.path.exists(nbest_path):
        raise IntegrityError(
            f"missing n-best file {nbest_path}; run the decode command first"
        )
    nbests = ctc_decoder.read_nbest(nbest_path)
    decoded = None
    if cfg.context_source == "decoded":
        decoded = {
            nb.utterance_id: rescoring.top_candidate(nb).text for nb in nbests
        }
    elif cfg.context_source != "ground_truth":
        raise ConfigError(
            f"context_source must be ground_truth or decoded, "
            f"got {cfg.context_source!r}"
        )
    contexts = contexts_for(cfg, conversations, utterances, decoded=decoded)
    scorer = make_scorer(cfg)
    replay_path = os.path.join(cfg.output_dir, f"replay_{split}.log")
    os.makedirs(cfg.output_dir, exist_ok=True)
    score_maps = collect_scores(
        scorer, nbests, contexts, cfg.scorer_mode, record_path=replay_path
    )
    rescored = [
        rescoring.interpolate(
            nb, score_maps[nb.utterance_id], gamma, standardize=cfg.standardize
        )
        for nb in nbests
    ]
    out_path = os.path.join(cfg.output_dir, f"rescored_{split}.tsv")
    ctc_decoder.write_nbest(rescored, out_path, gamma=gamma)
    write_manifest(
        cfg.output_dir,
        f"rescore-{split}",
        cfg,
        [cfg.corpus, nbest_path],
        [out_path, replay_path],
        extra={"gamma": gamma},
    )
    return out_path, rescored


def references_for(conversations, nbests):
    refs = {}
    for conv in conversations:
        for utt in conv.utterances:
            refs[utt.id] = utt.text
    missing = [nb.utterance_id for nb in nbests if nb.utterance_id not in refs]
    if missing:
        raise IntegrityError(f"no reference for utterance {missing[0]}")
    return refs


def stage_eval(cfg, split, which="top", nbest_path=None, gamma=None):
    """WER report for top / rescored / oracle hypotheses of a split."""
    require_paths(cfg, "corpus")
    conversations = corpus_mod.load_corpus(cfg.corpus, split_filter=split)
    default_file = "rescored" if which == "rescored" else "nbest"
    nbest_path = nbest_path or os.path.join(
        cfg.output_dir, f"{default_file}_{split}.tsv"
    )
    if not os.path.exists(nbest_path):
        producer = "rescore" if which == "rescored" else "decode"
        raise IntegrityError(
            f"missing n-best file {nbest_path}; run the {producer} command first"
        )
    nbests = ctc_decoder.read_nbest(nbest_path)
    refs = references_for(conversations, nbests)
    pairs = []
    for nb in nbests:
        ref = refs[nb.utterance_id]
        if which == "top":
            hyp = rescoring.top_candidate(nb).text
        elif which == "oracle":
            hyp = rescoring.oracle_select(nb, ref).text
        elif which == "rescored":
            g = cfg.gamma if gamma is None else gamma
            scores = {c.text: c.rescorer_score for c in nb.candidates}
            if any(v is None for v in scores.values()):
                raise IntegrityError(
                    f"{nb.utterance_id}: n-best file carries no rescorer scores"
                )
            hyp = rescoring.rescored_top(nb, scores, g, standardize=False).text
        else:
            raise ConfigError(f"unknown eval target {which!r}")
        pairs.append(metrics.EvalPair(ref, hyp, allow_empty_reference=True))
    report = metrics.binned_wer(pairs)
    os.makedirs(cfg.output_dir, exist_ok=True)
    kv_path = os.path.join(cfg.output_dir, f"eval_{which}_{split}.txt")
    csv_path = os.path.join(cfg.output_dir, f"eval_{which}_{split}_bins.csv")
    metrics.write_report_kv(report, kv_path)
    metrics.write_report_csv(report, csv_path)
    write_manifest(
        cfg.output_dir,
        f"eval-{which}-{split}",
        cfg,
        [cfg.corpus, nbest_path],
        [kv_path, csv_path],
        extra={"wer": report.wer},
    )
    return report


def stage_tune_beam(cfg, objective="top1_wed"):
    """Random search for (alpha, beta); runs on the eval split only."""
    split = "eval"
    require_paths(cfg, "corpus")
    conversations = corpus_mod.load_corpus(cfg.corpus, split_filter=split)
    utterances = split_utterances(conversations, split)
    trie, lm = load_beam_assets(cfg)
    cfg_beam = beam_config(cfg, trie, lm)
    matrices = read_split_logits(cfg, utterances)
    items = [(z, utt.text) for z, utt in zip(matrices, utterances)]
    result = tuning.random_search_beam(
        items,
        cfg_beam,
        objective=objective,
        trials=cfg.tune_trials,
        alpha_range=cfg.parsed_range("alpha_range"),
        beta_range=cfg.parsed_range("beta_range"),
        seed=cfg.seed,
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    out_path = os.path.join(cfg.output_dir, f"tune_beam_{objective}.csv")
    tuning.write_trials_csv(result, out_path)
    write_manifest(
        cfg.output_dir,
        f"tune-beam-{objective}",
        cfg,
        [cfg.corpus],
        [out_path],
        extra={"best": result.best_params, "objective": result.best_objective},
    )
    return result


def stage_tune_gamma(cfg, rescored_path=None):
    """Grid search for gamma on the eval split's cached scores."""
    split = "eval"
    require_paths(cfg, "corpus")
    conversations = corpus_mod.load_corpus(cfg.corpus, split_filter=split)
    rescored_path = rescored_path or os.path.join(
        cfg.output_dir, f"rescored_{split}.tsv"
    )
    if not os.path.exists(rescored_path):
        raise IntegrityError(
            f"missing rescored file {rescored_path}; run the rescore command first"
        )
    nbests = ctc_decoder.read_nbest(rescored_path)
    refs = references_for(conversations, nbests)
    entries = []
    for nb in nbests:
        scores = {c.text: c.rescorer_score for c in nb.candidates}
        if any(v is None for v in scores.values()):
            raise IntegrityError(
                f"{nb.utterance_id}: rescored file carries no scorer scores"
            )
        entries.append((nb, refs[nb.utterance_id], scores))
    result = tuning.grid_search_gamma(
        entries,
        lo=cfg.grid_lo,
        hi=cfg.grid_hi,
        step=cfg.grid_step,
        standardize=cfg.standardize,
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    curve_path = os.path.join(cfg.output_dir, "gamma_curve.csv")
    tuning.write_curve_csv(result.curve, curve_path)
    write_manifest(
        cfg.output_dir,
        "tune-gamma",
        cfg,
        [cfg.corpus, rescored_path],
        [curve_path],
        extra={"best": result.best_params, "objective": result.best_objective},
    )
    return result


def tuned_gamma(cfg):
    """The eval-split argmin gamma recorded by tune-gamma, if available.

    Reported test-split results must use the evaluation-set optimum; this is
    the only gamma source the report stage accepts besides the config value.
    """
    manifest_path = os.path.join(cfg.output_dir, "tune-gamma.manifest.json")
    if not os.path.exists(manifest_path):
        return None
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return manifest.get("extra", {}).get("best", {}).get("gamma")


def stage_report(cfg, split):
    """Baseline/oracle/rescored WERs and the recovery rate for one split."""
    base = stage_eval(cfg, split, which="top")
    oracle = stage_eval(cfg, split, which="oracle")
    gamma = tuned_gamma(cfg)
    try:
        rescored = stage_eval(cfg, split, which="rescored", gamma=gamma)
    except ConvasrError:
        rescored = None
    summary = {
        "split": split,
        "baseline_wer": base.wer,
        "oracle_wer": oracle.wer,
    }
    if rescored is not None:
        summary["rescored_wer"] = rescored.wer
        summary["gamma"] = cfg.gamma if gamma is None else gamma
        if base.wer > oracle.wer:
            summary["recovery_rate"] = metrics.werr(
                base.wer, rescored.wer, oracle.wer
            )
    out_path = os.path.join(cfg.output_dir, f"report_{split}.txt")
    with open(out_path, "w", encoding="utf-8") as fh:
        for key, value in summary.items():
            value = f"{value:.9g}" if isinstance(value, float) else value
            fh.write(f"{key}\t{value}\n")
    write_manifest(cfg.output_dir, f"report-{split}", cfg, [cfg.corpus], [out_path])
    return summary


def stage_gen_tasks(cfg, kind, split="train", nbest_path=None):
    require_paths(cfg, "corpus")
    conversations = corpus_mod.load_corpus(cfg.corpus, split_filter=split)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out_path = os.path.join(cfg.output_dir, f"tasks_{kind}_{split}.jsonl")
    inputs = [cfg.corpus]
    dropped = 0
    if kind == "cnsp":
        samples = taskgen.gen_cnsp(conversations, seed=cfg.seed)
    elif kind in ("disambiguation", "disambiguation_gt", "pairwise"):
        utterances = split_utterances(conversations, split)
        nbest_path = nbest_path or os.path.join(
            cfg.output_dir, f"nbest_{split}.tsv"
        )
        if not os.path.exists(nbest_path):
            raise IntegrityError(
                f"missing n-best file {nbest_path}; run the decode command first"
            )
        inputs.append(nbest_path)
        nbests = ctc_decoder.read_nbest(nbest_path)
        refs = references_for(conversations, nbests)
        contexts = contexts_for(cfg, conversations, utterances)
        sets = [
            (nb, refs[nb.utterance_id], contexts[nb.utterance_id]) for nb in nbests
        ]
        if kind == "pairwise":
            samples, dropped = taskgen.gen_pairwise_eval(sets, seed=cfg.seed)
        else:
            target = "ground_truth" if kind.endswith("_gt") else "oracle"
            samples, dropped = taskgen.gen_disambiguation(
                sets, target=target, seed=cfg.seed
            )
    else:
        raise ConfigError(f"unknown task kind {kind!r}")
    taskgen.write_samples(samples, out_path)
    write_manifest(
        cfg.output_dir,
        f"gen-tasks-{kind}-{split}",
        cfg,
        inputs,
        [out_path],
        extra={"samples": len(samples), "dropped_groups": dropped},
    )
    return out_path, samples
