"""Command-line front end.

Subcommands: ``analyze`` (per-token orthography/phonology report),
``features`` (pairwise 8-bit feature tensor), ``diagnose`` (dataset-level
linguistic diagnostics), ``attention`` (forward pass + gradient-check report
on a small instance), ``score`` (caption metrics).

Data goes to stdout (or ``--out``); progress and warnings go to stderr.
Exit codes: 0 success, 1 analysis error (empty corpus, unusable input),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import diagnostics, metrics
from .dataset_io import ParseError, Report, load_dataset, save_report
from .fusion import (
    DualStreamInput,
    FusionModel,
    GraphConfig,
    dual_stream_fuse,
    gradient_check,
    hash_embedding,
    init_dual_stream_weights,
    NodeSet,
)
from .phono_features import FEATURE_NAMES, analyze_token, build_tensor
from .syllable import load_inventory

PROG = "phonotext"


def _emit(report: Report, fmt: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(report.render(fmt))
    else:
        save_report(report, out, fmt)
        print(f"wrote {out}", file=sys.stderr)


def _read_tokens(args) -> list[str]:
    if args.tokens:
        return list(args.tokens)
    stream = sys.stdin if args.input in (None, "-") else open(args.input, encoding="utf-8")
    with stream if stream is not sys.stdin else _nullcontext(stream) as fh:
        return [line.strip() for line in fh if line.strip()]


class _nullcontext:
    def __init__(self, value):
        self.value = value

    def __enter__(self):
        return self.value

    def __exit__(self, *exc):
        return False


# ---------------------------------------------------------------------------
# analyze

def cmd_analyze(args) -> int:
    inventory = load_inventory(args.inventory) if args.inventory else None
    tokens = _read_tokens(args)
    report = Report(title="token analysis")
    table = report.table(
        "tokens",
        ["token", "vietnamese", "tone", "tone_class", "base", "full_base", "onset", "medial", "nucleus", "coda", "rhyme"],
    )
    for token in tokens:
        info = analyze_token(token, inventory)
        if info.vietnamese:
            syl = info.syllable
            table.add(
                token, True, info.tone.name.lower(), info.tone_class.value, info.base,
                diagnostics._full_base(token), syl.onset, syl.medial, syl.nucleus, syl.coda, syl.rhyme,
            )
        else:
            table.add(token, False, "", "", "", diagnostics._full_base(token), "", "", "", "", "")
    _emit(report, args.format, args.out)
    return 0


# ---------------------------------------------------------------------------
# features

def cmd_features(args) -> int:
    inventory = load_inventory(args.inventory) if args.inventory else None
    tokens = _read_tokens(args)
    if not tokens:
        print("no tokens to analyze", file=sys.stderr)
        return 1
    tensor = build_tensor(tokens, inventory)
    report = Report(title="pairwise phonological features")
    table = report.table("pairs", ["i", "j", "token_i", "token_j", *FEATURE_NAMES])
    n = tensor.token_count
    for i in range(n):
        for j in range(n):
            table.add(i, j, tokens[i], tokens[j], *(int(v) for v in tensor.array[i, j]))
    _emit(report, args.format, args.out)
    return 0


# ---------------------------------------------------------------------------
# diagnose

def _caption_vocabulary(records) -> Counter:
    vocab: Counter = Counter()
    for record in records:
        for caption in record.captions:
            vocab.update(metrics.syllable_tokenize(caption.caption))
    return vocab


def cmd_diagnose(args) -> int:
    stopwords = diagnostics.load_stopwords(args.stopwords) if args.stopwords else None
    try:
        records = load_dataset(args.dataset, ocr_path=args.ocr, strict=args.strict)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = Report(title="dataset diagnostics")

    vocab = _caption_vocabulary(records)
    try:
        rate, groups = diagnostics.collision_rate(vocab)
    except diagnostics.EmptyVocabulary:
        rate, groups = 0.0, []
        report.notes.append("collision analysis skipped: no Vietnamese words in caption vocabulary")
    summary = report.table("collision_summary", ["vietnamese_words", "collision_groups", "words_in_collision", "collision_rate"])
    vn_count = sum(1 for w in vocab if diagnostics.is_vietnamese(w))
    summary.add(vn_count, len(groups), sum(g.size for g in groups), rate)
    top = report.table("top_collision_groups", ["base", "size", "total_frequency", "danger_score", "members"])
    for g in groups[:20]:
        top.add(g.base, g.size, g.total_frequency, g.danger_score, "|".join(g.members))

    has_ocr = any(record.ocr_tokens for record in records)
    if not has_ocr:
        report.notes.append("divergence analysis skipped: no OCR sidecar loaded")
        print("notice: no OCR tokens; divergence analysis skipped", file=sys.stderr)
    else:
        table = diagnostics.divergence_analysis(records)
        div = report.table("divergence_by_confidence", ["stratum", "matches", "divergences", "rate"])
        for name in diagnostics.STRATA:
            s = table.strata[name]
            div.add(name, s.matches, s.divergences, s.rate)
        div.add("overall", table.overall.matches, table.overall.divergences, table.overall.rate)

        labeled = []
        for rec in table.records:
            if rec.agrees:
                continue
            try:
                labeled.append((rec.caption_token, rec.ocr_token, diagnostics.classify_error(rec.caption_token, rec.ocr_token)))
            except diagnostics.NotComparable:
                continue
        tax = report.table("error_taxonomy", ["type", "count"])
        counts = Counter()
        for _, _, label in labeled:
            counts.update(label.types)
            if label.compound:
                counts["compound"] += 1
        for key in [*diagnostics.ERROR_TYPES, "compound"]:
            tax.add(key, counts.get(key, 0))
        cm = diagnostics.confusion_matrices(labeled)
        tone_t = report.table("tone_confusion", ["reference", *cm.tone_labels])
        for i, row_label in enumerate(cm.tone_labels):
            tone_t.add(row_label, *(int(v) for v in cm.tone[i]))
        vow_t = report.table("vowel_confusion", ["reference", "ocr", "count"])
        for i, a in enumerate(cm.vowel_labels):
            for j, b in enumerate(cm.vowel_labels):
                if cm.vowel[i, j]:
                    vow_t.add(a, b, int(cm.vowel[i, j]))
        dd_t = report.table("dd_confusion", ["direction", "count"])
        dd_t.add("d->đ", int(cm.dd[0, 1]))
        dd_t.add("đ->d", int(cm.dd[1, 0]))

        usage_counts: Counter = Counter()
        coverage_by_cat: dict[str, list[float]] = {}
        coverages: list[float] = []
        for record in records:
            for ci in range(len(record.captions)):
                try:
                    label = diagnostics.usage_taxonomy(record, ci, stopwords)
                except diagnostics.NoValidOcrTokens:
                    continue
                usage_counts[label.category] += 1
                coverage_by_cat.setdefault(label.category, []).append(label.coverage)
                coverages.append(label.coverage)
        usage_t = report.table("usage_taxonomy", ["category", "captions", "share", "mean_coverage"])
        total = sum(usage_counts.values())
        for category in diagnostics.USAGE_CATEGORIES:
            n = usage_counts.get(category, 0)
            mean_cov = sum(coverage_by_cat.get(category, [])) / n if n else 0.0
            usage_t.add(category, n, n / total if total else 0.0, mean_cov)
        cov_t = report.table("coverage", ["captions", "mean", "median"])
        if coverages:
            ordered = sorted(coverages)
            mid = len(ordered) // 2
            median = ordered[mid] if len(ordered) % 2 else (ordered[mid - 1] + ordered[mid]) / 2
            cov_t.add(len(coverages), sum(coverages) / len(coverages), median)
        else:
            cov_t.add(0, 0.0, 0.0)

        copy_counts = diagnostics.copy_statistics(records)
        copy_t = report.table("copy_classification", ["label", "tokens", "share"])
        total_tokens = sum(copy_counts.values())
        for label in ("exact-copy", "base-form-copy", "generated"):
            n = copy_counts.get(label, 0)
            copy_t.add(label, n, n / total_tokens if total_tokens else 0.0)

    _emit(report, args.format, args.out)
    return 0


# ---------------------------------------------------------------------------
# attention

def _load_config(path: str | None) -> GraphConfig:
    if path is None:
        return GraphConfig.desk()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if "edge_types" in raw:
        raw["edge_types"] = tuple(raw["edge_types"])
    return GraphConfig(**raw)


def cmd_attention(args) -> int:
    try:
        instance = json.loads(Path(args.instance).read_text(encoding="utf-8"))
        tokens = list(instance["tokens"])
        boxes = [list(map(float, b)) for b in instance["boxes"]]
        confidences = [float(c) for c in instance["confidences"]]
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: bad instance file: {exc}", file=sys.stderr)
        return 2
    if not (len(tokens) == len(boxes) == len(confidences)):
        print("error: tokens/boxes/confidences lengths differ", file=sys.stderr)
        return 2
    config = _load_config(args.config)
    seed = args.seed
    d = config.model_dim

    # deterministic stand-ins for the external feature providers
    rec = np.stack([hash_embedding(f"rec:{t}", 64, seed) for t in tokens])
    det = np.stack([hash_embedding(f"det:{t}", 64, seed) for t in tokens])
    ling = np.stack([hash_embedding(f"ling:{t}", 128, seed) for t in tokens])
    ds_weights = init_dual_stream_weights(64, 128, d, seed=seed)
    t_features = dual_stream_fuse(DualStreamInput(rec, det, ling), ds_weights)

    v_boxes = instance.get("visual_boxes") or [[0.5, 0.5, 1.0, 1.0]]
    v_features = np.stack([hash_embedding(f"vis:{i}", d, seed) for i in range(len(v_boxes))])
    nodes = NodeSet(v_features=v_features, t_features=t_features, v_boxes=v_boxes,
                    t_boxes=boxes, confidences=confidences)
    phono = build_tensor(tokens).array.astype(np.float64)

    model = FusionModel(config, seed=seed, bias_output_scale=args.bias_scale)
    report = Report(title="attention forward pass")
    info = report.table("instance", ["tokens", "visual_nodes", "layers", "heads", "model_dim", "edge_types"])
    info.add(len(tokens), len(v_boxes), config.layers, config.heads, config.model_dim, ",".join(config.edge_types))

    from .fusion import _EDGE_ROLES, attention_scores, spatial_feature_matrix

    model.forward(nodes, phono)
    edge_caches, _, _ = model._cache[0][0]
    box_sets = {"V": nodes.v_boxes, "T": nodes.t_boxes}
    for edge, cache in edge_caches.items():
        q, k = cache[2], cache[3]
        tgt, src = _EDGE_ROLES[edge]
        ew = model.weights.layers[0].edges[edge]
        scores = attention_scores(
            q, k,
            spatial=spatial_feature_matrix(box_sets[tgt], box_sets[src]) if config.use_spatial_bias else None,
            spatial_mlp=ew.spatial,
            phono=phono if edge == "T->T" and config.use_phono_bias else None,
            phono_mlp=model.weights.layers[0].phono,
        )
        table = report.table(f"scores_{edge.replace('->', '_to_')}", ["head", "query", *[f"k{j}" for j in range(k.shape[1])]])
        for h in range(config.heads):
            for qi in range(scores.shape[1]):
                table.add(h, qi, *[float(v) for v in scores[h, qi]])

    if not args.no_grad_check:
        print("running gradient check...", file=sys.stderr)
        rep = gradient_check(nodes, config, phono=phono, seed=seed, bias_output_scale=args.bias_scale or 0.1)
        g = report.table("gradient_check", ["parameter", "max_rel_error"])
        for name in sorted(rep.per_param):
            g.add(name, rep.per_param[name])
        g.add("OVERALL", rep.max_rel_error)
    _emit(report, args.format, args.out)
    return 0


# ---------------------------------------------------------------------------
# score

def _load_candidates(path: str) -> dict[str, str]:
    cands: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'image_id<TAB>caption'")
            image_id, caption = line.split("\t", 1)
            cands[image_id] = caption
    return cands


def cmd_score(args) -> int:
    scale = 10.0 if args.scale == "x10" else 1.0
    try:
        candidates = _load_candidates(args.candidates)
        records = load_dataset(args.references, strict=args.strict)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    references = {r.image_id: [c.caption for c in r.captions] for r in records}
    references = {i: refs for i, refs in references.items() if i in candidates}
    report = Report(title="caption metrics")
    try:
        if args.all_tokenizers:
            result = metrics.sensitivity_harness(candidates, references, scale=scale)
            table = report.table("scores", ["tokenizer", "corpus_size", "bleu1", "bleu4", "rouge_l", "cider"])
            for name, rep in result.reports.items():
                table.add(name, rep.corpus_size, rep.bleu1, rep.bleu4, rep.rouge_l, rep.cider)
            deltas = report.table("deltas", ["metric", "max_abs_difference"])
            for metric_name, delta in result.deltas.items():
                deltas.add(metric_name, delta)
        else:
            rep = metrics.score_corpus(candidates, references, tokenizer=args.tokenizer, scale=scale)
            table = report.table("scores", ["tokenizer", "corpus_size", "bleu1", "bleu4", "rouge_l", "cider"])
            table.add(rep.tokenizer, rep.corpus_size, rep.bleu1, rep.bleu4, rep.rouge_l, rep.cider)
    except metrics.EmptyCorpus as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _emit(report, args.format, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=["table", "delimited", "document"], default="table")
        p.add_argument("--out", help="write the report to this path instead of stdout")

    p = sub.add_parser("analyze", help="per-token orthography and syllable analysis")
    p.add_argument("tokens", nargs="*", help="tokens to analyze (default: read --input or stdin)")
    p.add_argument("--input", help="file with one token per line ('-' = stdin)")
    p.add_argument("--inventory", help="override the bundled syllable inventory file")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("features", help="pairwise phonological feature tensor")
    p.add_argument("tokens", nargs="*")
    p.add_argument("--input", help="file with one token per line ('-' = stdin)")
    p.add_argument("--inventory")
    common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("diagnose", help="dataset-level linguistic diagnostics")
    p.add_argument("dataset", help="dataset JSON file")
    p.add_argument("--ocr", help="OCR sidecar (JSONL)")
    p.add_argument("--stopwords", help="override the bundled stopword list")
    p.add_argument("--strict", action="store_true", help="enforce caption id/count constraints")
    common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("attention", help="forward pass + gradient check on a small instance")
    p.add_argument("instance", help="instance JSON: tokens, boxes, confidences[, visual_boxes]")
    p.add_argument("--config", help="GraphConfig overrides as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias-scale", type=float, default=0.1, help="bias-MLP output scale (0 = neutral start)")
    p.add_argument("--no-grad-check", action="store_true")
    common(p)
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("score", help="caption metrics against dataset references")
    p.add_argument("candidates", help="file of image_id<TAB>caption lines")
    p.add_argument("references", help="dataset JSON with reference captions")
    p.add_argument("--tokenizer", choices=sorted(metrics.TOKENIZERS), default="syllable")
    p.add_argument("--all-tokenizers", action="store_true")
    p.add_argument("--scale", choices=["x1", "x10"], default="x10", help="CIDEr scale convention")
    p.add_argument("--strict", action="store_true")
    common(p)
    p.set_defaults(func=cmd_score)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (diagnostics.EmptyVocabulary, diagnostics.NoValidOcrTokens, metrics.EmptyCorpus, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
