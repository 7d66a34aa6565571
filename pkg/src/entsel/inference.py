"""Option scoring, label selection, majority voting, and cost accounting.

Pairwise scoring runs one forward pass per option; parallel scoring chunks
the option list and runs one pass per chunk, so its ledger shows ceil(n/k)
passes. All scoring here is eval-mode (no dropout, no autodiff tape).
Same-shape layouts are executed as fused groups for speed; the ledger still
counts one pass per layout.
"""

import json
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .encoder import classify_pairs_batch, encode_batch, score_options_batch
from .errors import DataError
from .pairing import chunk_options, make_parallel_pair, make_te_pair


class ScoredOption(NamedTuple):
    index: int
    score: float


@dataclass
class CostLedger:
    forward_passes: int = 0
    tokens_processed: int = 0
    wall_seconds: float = 0.0

    def count(self, n_tokens):
        self.forward_passes += 1
        self.tokens_processed += n_tokens

    def merge(self, other):
        self.forward_passes += other.forward_passes
        self.tokens_processed += other.tokens_processed
        self.wall_seconds += other.wall_seconds


@dataclass
class ParadigmConfig:
    """How to score and select at inference time."""

    mode: str  # te | context | parallel
    k: int = None  # chunk size for parallel scoring
    tau: float = 0.5  # multi-label threshold
    candidates: dict = None  # instance id -> option indices; None = full space

    def __post_init__(self):
        if self.mode not in ("te", "context", "parallel"):
            raise DataError(f"unknown paradigm mode {self.mode!r}")
        if self.mode == "parallel" and (self.k is None or self.k < 1):
            raise DataError("parallel scoring needs k >= 1")


def _entail_probs(model, layouts):
    """p(entail) per layout, computed in same-length fused groups."""
    groups = {}
    for pos, lay in enumerate(layouts):
        groups.setdefault(len(lay.ids), []).append(pos)
    out = [0.0] * len(layouts)
    for length in sorted(groups):
        members = groups[length]
        ids = np.array([layouts[p].ids for p in members], dtype=np.int64)
        reps = encode_batch(model, ids, train_mode=False)
        probs = classify_pairs_batch(model, reps, len(members), length)
        for row, pos in enumerate(members):
            out[pos] = float(probs.data[row, 0])
    return out


def _span_scores(model, layouts):
    """Per-option score rows for parallel layouts, fused by (length, spans)."""
    groups = {}
    for pos, lay in enumerate(layouts):
        groups.setdefault((len(lay.ids), lay.option_spans), []).append(pos)
    out = [None] * len(layouts)
    for key in sorted(groups):
        length, spans = key
        members = groups[key]
        ids = np.array([layouts[p].ids for p in members], dtype=np.int64)
        reps = encode_batch(model, ids, train_mode=False)
        smat = score_options_batch(model, reps, len(members), length, spans)
        for row, pos in enumerate(members):
            out[pos] = smat.data[row]
    return out


def score_pairwise(model, instance, option_indices, mode, space, vocab):
    """One (P, H) forward pass per option; score = entailment probability.

    Pairwise and contextualized models share this inference path: no
    competing context is appended at inference time.
    """
    if mode not in ("te", "context"):
        raise DataError(f"pairwise scoring mode must be te or context, got {mode!r}")
    ledger = CostLedger()
    t0 = time.perf_counter()
    layouts = [make_te_pair(instance, idx, space, vocab, model.config.max_len)
               for idx in option_indices]
    entail = _entail_probs(model, layouts)
    for lay in layouts:
        ledger.count(len(lay.ids))
    scored = [ScoredOption(idx, p) for idx, p in zip(option_indices, entail)]
    ledger.wall_seconds = time.perf_counter() - t0
    return scored, ledger


def score_parallel(model, instance, option_indices, k, space, vocab):
    """Chunked multi-hypothesis scoring: one forward pass per ceil(n/k) chunk."""
    if k < 1:
        raise DataError("k must be >= 1")
    ledger = CostLedger()
    scored = []
    t0 = time.perf_counter()
    layouts = [make_parallel_pair(instance, chunk, space, vocab, model.config.max_len)
               for chunk in chunk_options(option_indices, k)]
    rows = _span_scores(model, layouts)
    for lay, row in zip(layouts, rows):
        scored.extend(ScoredOption(i, float(s)) for i, s in zip(lay.option_indices, row))
        ledger.count(len(lay.ids))
    ledger.wall_seconds = time.perf_counter() - t0
    return scored, ledger


def select_single(scored):
    """Highest-scoring option index; exact ties go to the smallest index."""
    if not scored:
        raise DataError("cannot select from an empty score list")
    return min(scored, key=lambda so: (-so.score, so.index)).index


def select_multi(scored, tau):
    """All option indices scoring strictly above tau; may be empty."""
    if not 0.0 < tau < 1.0:
        raise DataError("tau must lie in (0, 1)")
    return {so.index for so in scored if so.score > tau}


def tally_votes(winners, mean_scores):
    """Most-voted option; ties break to higher mean score, then smaller index."""
    counts = Counter(winners)
    return min(counts, key=lambda i: (-counts[i], -mean_scores[i], i))


def majority_vote(model, instance, option_indices, k, rounds, rng, space, vocab):
    """Parallel-score `rounds` shuffled orders of one option set and vote.

    Each round's argmax casts one vote; the option set itself is fixed and
    only its order is reshuffled.
    """
    if rounds < 1:
        raise DataError("rounds must be >= 1")
    base = list(option_indices)
    winners = []
    sums = {i: 0.0 for i in base}
    for _ in range(rounds):
        order = [base[j] for j in rng.permutation(len(base))]
        scored, _ = score_parallel(model, instance, order, k, space, vocab)
        winners.append(select_single(scored))
        for so in scored:
            sums[so.index] += so.score
    means = {i: s / rounds for i, s in sums.items()}
    return tally_votes(winners, means)


def example_averaged_prf(predictions, golds):
    """Example-averaged precision/recall with F1 of the averaged P and R.

    Precision averages over instances with at least one prediction; recall
    averages over all instances.
    """
    p_terms, r_terms = [], []
    for pred, gold in zip(predictions, golds):
        pred, gold = set(pred), set(gold)
        if pred:
            p_terms.append(len(pred & gold) / len(pred))
        r_terms.append(len(pred & gold) / len(gold) if gold else 1.0)
    precision = sum(p_terms) / len(p_terms) if p_terms else 0.0
    recall = sum(r_terms) / len(r_terms) if r_terms else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalResult:
    metrics: dict
    predictions: list = field(default_factory=list)
    ledger: CostLedger = field(default_factory=CostLedger)


def _instance_options(instance, space, cfg):
    if cfg.candidates is not None:
        return list(cfg.candidates[instance.id])
    return list(range(len(space)))


def _score_instance(model, instance, options, cfg, space, vocab):
    if cfg.mode == "parallel":
        return score_parallel(model, instance, options, cfg.k, space, vocab)
    return score_pairwise(model, instance, options, cfg.mode, space, vocab)


def evaluate(model, instances, space, vocab, cfg, multi_label=False):
    """Score a dataset and compute accuracy (single) or example P/R/F1 (multi)."""
    ledger = CostLedger()
    predictions = []
    correct = 0
    multi_preds, multi_golds = [], []
    for inst in instances:
        options = _instance_options(inst, space, cfg)
        scored, inst_ledger = _score_instance(model, inst, options, cfg, space, vocab)
        ledger.merge(inst_ledger)
        gold = sorted(inst.gold)
        if multi_label:
            pred = sorted(select_multi(scored, cfg.tau))
            multi_preds.append(pred)
            multi_golds.append(gold)
        else:
            pred = select_single(scored)
            correct += int(pred in inst.gold)
        predictions.append({"id": inst.id,
                            "scores": [[so.index, so.score] for so in scored],
                            "prediction": pred, "gold": gold})
    n = len(instances)
    if multi_label:
        precision, recall, f1 = example_averaged_prf(multi_preds, multi_golds)
        metrics = {"precision": precision, "recall": recall, "f1": f1, "n": n}
    else:
        metrics = {"accuracy": correct / n if n else 0.0, "n": n}
    return EvalResult(metrics=metrics, predictions=predictions, ledger=ledger)


def write_predictions(path, result):
    """JSON-lines dump: one {id, scores, prediction, gold} record per instance."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in result.predictions:
            rec = dict(rec)
            if isinstance(rec["prediction"], (set, frozenset)):
                rec["prediction"] = sorted(rec["prediction"])
            fh.write(json.dumps(rec) + "\n")


@dataclass
class BenchRow:
    paradigm: str
    n: int
    k: int
    passes_per_case: float
    tokens_per_case: float
    seconds_per_case: float
    rep_seconds: list = field(default_factory=list)


def bench(model, instances, space, vocab, configs, repetitions=3, warmup=2):
    """Time each paradigm config over the dataset; median of >=3 repetitions.

    Forward-pass and token counts come from a single counted pass and are
    exact; wall-clock excludes the warmup passes.
    """
    if repetitions < 3:
        raise DataError("bench needs at least 3 timed repetitions")
    rows = []
    for cfg in configs:
        n_options = len(_instance_options(instances[0], space, cfg))
        counted = CostLedger()
        for inst in instances[:max(1, warmup)]:
            options = _instance_options(inst, space, cfg)
            _score_instance(model, inst, options, cfg, space, vocab)
        for inst in instances:
            options = _instance_options(inst, space, cfg)
            _, led = _score_instance(model, inst, options, cfg, space, vocab)
            counted.merge(led)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for inst in instances:
                options = _instance_options(inst, space, cfg)
                _score_instance(model, inst, options, cfg, space, vocab)
            times.append(time.perf_counter() - t0)
        n_cases = len(instances)
        rows.append(BenchRow(paradigm=cfg.mode, n=n_options,
                             k=cfg.k if cfg.mode == "parallel" else 1,
                             passes_per_case=counted.forward_passes / n_cases,
                             tokens_per_case=counted.tokens_processed / n_cases,
                             seconds_per_case=statistics.median(times) / n_cases,
                             rep_seconds=times))
    return rows


def write_bench_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("paradigm,n,k,passes,tokens,seconds_per_case\n")
        for r in rows:
            fh.write(f"{r.paradigm},{r.n},{r.k},{r.passes_per_case:g},"
                     f"{r.tokens_per_case:g},{r.seconds_per_case:.6g}\n")
