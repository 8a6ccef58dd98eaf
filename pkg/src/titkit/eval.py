"""Measurement: corpus BLEU, character error rate, parameter counts, latency.

BLEU is computed over characters because the toy languages have no word
segmentation; scores are therefore not comparable with word-level BLEU on
natural corpora. No smoothing by default, add-one smoothing on orders 2..4
behind a flag for very short sentences.
"""

import math
import time
from collections import Counter

MAX_ORDER = 4

TIT_INFERENCE_COMPONENTS = ("tps", "image_encoder", "shared_encoder", "target_decoder", "target_head")


def _ngram_counts(chars, n):
    return Counter(tuple(chars[i : i + n]) for i in range(len(chars) - n + 1))


def corpus_bleu(hypotheses, references, smooth=False):
    """Corpus-level BLEU-4 over characters, in [0, 100].

    Geometric mean of modified n-gram precisions times the brevity penalty;
    returns 0 when any precision is 0 (unless smoothing is enabled).
    """
    hypotheses = list(hypotheses)
    references = list(references)
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise ValueError("empty corpus")
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_chars = 0
    ref_chars = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_chars += len(hyp)
        ref_chars += len(ref)
        for n in range(1, MAX_ORDER + 1):
            counts = _ngram_counts(hyp, n)
            if not counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            total[n - 1] += len(hyp) - n + 1
            for gram, count in counts.items():
                correct[n - 1] += min(count, ref_counts.get(gram, 0))
    if hyp_chars == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, MAX_ORDER + 1):
        c, t = correct[n - 1], total[n - 1]
        if smooth and n > 1:
            c += 1
            t += 1
        if c == 0 or t == 0:
            return 0.0
        log_sum += math.log(c / t)
    brevity = 1.0 if hyp_chars > ref_chars else math.exp(1.0 - ref_chars / hyp_chars)
    return 100.0 * brevity * math.exp(log_sum / MAX_ORDER)


def cer(hypothesis, reference):
    """Unit-cost Levenshtein distance divided by reference length."""
    if not reference:
        raise ValueError("empty reference")
    previous = list(range(len(reference) + 1))
    for i, h in enumerate(hypothesis, start=1):
        current = [i]
        for j, r in enumerate(reference, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (h != r)))
        previous = current
    return previous[-1] / len(reference)


def count_parameters(model, grouping="component"):
    """Trainable parameter counts. grouping 'component' lists each piece of
    the bundle plus a deduplicated total; 'total' gives only the total."""
    total = sum(p.numel() for p in model.parameters() if p.requires_grad)
    if grouping == "total":
        return {"total": total}
    if grouping != "component":
        raise ValueError("grouping must be 'component' or 'total'")
    table = {}
    for name, module in model.component_modules().items():
        table[name] = sum(p.numel() for p in module.parameters() if p.requires_grad)
    table["total"] = total
    return table


def inference_parameter_total(model, components=TIT_INFERENCE_COMPONENTS):
    """Parameters actually loaded at translation inference (training-only
    branches such as auxiliary decoders excluded)."""
    table = count_parameters(model)
    return sum(table[c] for c in components if c in table)


def parameter_reduction(e2e_model, ocr_model, mt_model):
    """Deployment-size comparison: one end-to-end model vs a recognizer plus
    a translator. Returns counts and the percentage saved."""
    e2e_total = inference_parameter_total(e2e_model)
    cascade_total = count_parameters(ocr_model)["total"] + count_parameters(mt_model)["total"]
    return {
        "e2e_total": e2e_total,
        "cascade_total": cascade_total,
        "reduction_pct": 100.0 * (1.0 - e2e_total / cascade_total),
    }


def _percentile(sorted_values, q):
    idx = max(math.ceil(q * len(sorted_values)) - 1, 0)
    return sorted_values[idx]


def benchmark_decode(pipeline, examples, repeats=1, warmup=3):
    """Per-example wall-clock latency of a decode callable.

    pipeline is called once per example; the first `warmup` calls are
    excluded. Returns mean/median/p95 milliseconds over examples x repeats.
    """
    examples = list(examples)
    if not examples or repeats < 1:
        raise ValueError("empty benchmark")
    for ex in examples[: min(warmup, len(examples))]:
        pipeline(ex)
    times = []
    for _ in range(repeats):
        for ex in examples:
            t0 = time.perf_counter()
            pipeline(ex)
            times.append((time.perf_counter() - t0) * 1000.0)
    times.sort()
    return {
        "mean_ms": sum(times) / len(times),
        "p50_ms": _percentile(times, 0.5),
        "p95_ms": _percentile(times, 0.95),
        "n": len(times),
    }
