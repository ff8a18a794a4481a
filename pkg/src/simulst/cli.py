"""Command line entry point: ``simulst <command> [options]``.

Commands: simulate, eval, bench, masks, gradcheck, loss, equiv.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench as bench_mod
from . import checks
from .config import ModelConfig
from .decoder import InterleavedLayout, Vocabulary, build_consistency_mask
from .encoder import build_blockwise_mask, load_stream_manifest
from .errors import SimulSTError
from .losses import (
    Stage2MaskSpec,
    WordAlignment,
    build_stage2_mask,
    group_words,
    masked_ce,
    masked_ce_and_grad,
    waco_loss,
    waco_loss_and_grad,
)
from .metrics import bleu_lite, delays_from_log, laal
from .model import build_model
from .streaming import Clock, PolicyConfig, SessionEventLog, run_policy
from .tensor_core import finite_diff_grad, float64_mode
from .weights import load_weights

FORMAT_VERSION = 1


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _write_json(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def default_vocab(cfg: ModelConfig) -> Vocabulary:
    # random toy weights almost never emit the separator, so default to 1 token = 1 word
    return Vocabulary(cfg.vocab_size, one_token_per_word=True)


def _load_model(args):
    cfg = ModelConfig.from_json(args.model_config) if args.model_config else ModelConfig()
    vocab = Vocabulary.from_json(args.vocab) if args.vocab else default_vocab(cfg)
    params = load_weights(args.weights) if args.weights else None
    return build_model(cfg, seed=args.seed, vocab=vocab, params=params)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    model = _load_model(args)
    settings = {}
    if args.session_config:
        with open(args.session_config) as fh:
            settings = json.load(fh)
    clock_settings = settings.pop("clock", {})
    for key, flag in (("kind", "policy"), ("k", "k"), ("n", "n"),
                      ("segment_ms", "segment_ms"), ("max_tokens_per_write", "max_tokens")):
        value = getattr(args, flag)
        if value is not None:
            settings[key] = value
    cfg = PolicyConfig.from_dict(settings)

    mode = args.clock or clock_settings.get("mode", "simulated")
    if mode == "real":
        clock = Clock.real()
    elif "rates" in clock_settings:
        clock = Clock.simulated(clock_settings["rates"])
    else:
        rate = args.ms_per_mmac if args.ms_per_mmac is not None else clock_settings.get("ms_per_mmac", 1.0)
        clock = Clock.uniform(rate)

    if args.stream:
        stream = load_stream_manifest(args.stream)
        if stream["segment_samples"] != model.cfg.segment_samples:
            raise SimulSTError(f"stream segments hold {stream['segment_samples']} samples, "
                               f"model expects {model.cfg.segment_samples}")
        segments = stream["segments"]
    else:
        rng = np.random.default_rng(args.seed + 1)
        segments = [rng.standard_normal(model.cfg.segment_samples) for _ in range(args.segments)]

    result = run_policy(model, segments, cfg, clock)
    result.log.save(args.log_out)
    translation = {
        "format_version": FORMAT_VERSION,
        "tokens": [int(t) for t in result.tokens],
        "words": model.vocab.words(result.tokens),
        "word_count": model.vocab.count_words(result.tokens),
        "segments": len(result.log.reads),
        "source_ms": len(segments) * cfg.segment_ms,
        "truncated": result.truncated,
    }
    _write_json(translation, args.translation_out)
    return 0


def _reference_words(path, vocab):
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return text.split()
    tokens = data["tokens"] if isinstance(data, dict) else data
    if tokens and all(isinstance(t, int) for t in tokens):
        return vocab.words(tokens)
    return [str(t) for t in tokens]


def cmd_eval(args) -> int:
    log = SessionEventLog.load(args.log)
    vocab = Vocabulary.from_json(args.vocab) if args.vocab else default_vocab(ModelConfig())
    source_ms = None
    if args.translation:
        with open(args.translation) as fh:
            translation = json.load(fh)
        tokens = translation["tokens"]
        source_ms = translation.get("source_ms")
    else:
        tokens = [t for ev in log.writes for t in ev.tokens]
    hyp_words = vocab.words(tokens)
    ref_words = _reference_words(args.reference, vocab) if args.reference else None
    profile = delays_from_log(log, ref_len=len(ref_words) if ref_words is not None else None,
                              source_ms=source_ms)
    have_words = profile.hyp_len > 0
    metrics = {
        "format_version": FORMAT_VERSION,
        "bleu_lite": bleu_lite(hyp_words, ref_words) if ref_words else None,
        "laal_ms": laal(profile, "nca") if have_words else None,
        "laal_ca_ms": laal(profile, "ca") if have_words else None,
        "words": profile.hyp_len,
        "segments": len(log.reads),
        "T_ms": profile.source_ms,
    }
    _write_json(metrics, args.out)
    return 0


def cmd_bench(args) -> int:
    cfg = ModelConfig.from_json(args.model_config) if args.model_config else ModelConfig()
    clock = Clock.real() if args.clock == "real" else Clock.uniform(args.ms_per_mmac)
    variants = args.variants.split(",") if args.variants else bench_mod.VARIANTS
    records = bench_mod.bench_scaling(cfg, args.segments, variants, clock, args.seed, args.k, args.n)
    text = bench_mod.records_to_csv(records)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def cmd_masks(args) -> int:
    if args.blockwise:
        mask = build_blockwise_mask(args.len, args.block)
    elif args.consistency:
        mask = build_consistency_mask(InterleavedLayout.parse(args.layout))
    else:
        mask = build_stage2_mask(Stage2MaskSpec(_ints(args.segment_sizes), _ints(args.groups), args.k, args.n))
    for row in mask:
        print(" ".join("1" if v else "0" for v in row))
    return 0


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    with float64_mode():
        ws = rng.standard_normal((args.words, args.dim))
        wt = rng.standard_normal((args.words, args.dim))
        _, gs, gt = waco_loss_and_grad(ws, wt, args.tau)
        waco_err = max(
            _rel_err(gs, finite_diff_grad(lambda x: waco_loss(x, wt, args.tau), ws)),
            _rel_err(gt, finite_diff_grad(lambda x: waco_loss(ws, x, args.tau), wt)),
        )
        logits = rng.standard_normal((args.words, args.vocab_size))
        targets = rng.integers(args.vocab_size, size=args.words)
        _, g = masked_ce_and_grad(logits, targets)
        ce_err = _rel_err(g, finite_diff_grad(lambda x: masked_ce(x, targets), logits))
    ok = waco_err <= 1e-3 and ce_err <= 1e-3
    _write_json({"format_version": FORMAT_VERSION, "waco_rel_err": waco_err,
                 "masked_ce_rel_err": ce_err, "pass": ok}, None)
    return 0 if ok else 1


def cmd_loss(args) -> int:
    alignment = WordAlignment.from_json(args.alignment)
    if args.embeddings:
        tensors = load_weights(args.embeddings)
        speech, text = tensors["speech"], tensors["text"]
    else:
        rng = np.random.default_rng(args.seed)
        speech = rng.standard_normal((max(e for _, e in alignment.speech_ranges()), args.dim))
        text = rng.standard_normal((max(e for _, e in alignment.text_ranges()), args.dim))
    ws = group_words(speech, alignment.speech_ranges())
    wt = group_words(text, alignment.text_ranges())
    _write_json({"format_version": FORMAT_VERSION, "words": len(alignment),
                 "waco_loss": waco_loss(ws, wt, args.tau)}, None)
    return 0


def cmd_equiv(args) -> int:
    worst = checks.run_suite(args.seed, args.trials)
    ok = all(v <= args.tol for v in worst.values())
    _write_json({"format_version": FORMAT_VERSION, "max_deviation": worst,
                 "tolerance": args.tol, "pass": ok}, None)
    return 0 if ok else 1


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _model_args(p):
    p.add_argument("--seed", type=int, default=0, help="weight / synthetic stream seed")
    p.add_argument("--weights", help="weight manifest JSON (random toy weights if omitted)")
    p.add_argument("--model-config", help="ModelConfig JSON")
    p.add_argument("--vocab", help="vocabulary JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulst", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a policy session and write its event log")
    _model_args(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--stream", help="stream manifest JSON")
    src.add_argument("--segments", type=int, default=4, help="number of synthetic random segments")
    p.add_argument("--session-config", help="JSON with policy fields and an optional 'clock' object")
    p.add_argument("--policy", choices=["wait_k_stride_n", "hold_n"])
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--segment-ms", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--clock", choices=["simulated", "real"])
    p.add_argument("--ms-per-mmac", type=float, help="simulated cost per million MACs")
    p.add_argument("--log-out", required=True, help="event log JSONL output")
    p.add_argument("--translation-out", default="-", help="translation JSON output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="latency and quality metrics from an event log")
    p.add_argument("--log", required=True)
    p.add_argument("--translation")
    p.add_argument("--reference", help="reference as whitespace text or JSON token list")
    p.add_argument("--vocab")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-step cost of incremental vs recompute variants (CSV)")
    p.add_argument("--segments", type=int, default=32)
    p.add_argument("--variants", help="comma-separated subset of " + ",".join(bench_mod.VARIANTS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--clock", choices=["simulated", "real"], default="real")
    p.add_argument("--ms-per-mmac", type=float, default=1.0)
    p.add_argument("--model-config")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("masks", help="print an attention mask as a 0/1 grid")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--blockwise", action="store_true")
    kind.add_argument("--consistency", action="store_true")
    kind.add_argument("--stage2", action="store_true")
    p.add_argument("--len", type=int, default=4)
    p.add_argument("--block", type=int, default=2)
    p.add_argument("--layout", default="S2,T1", help="e.g. S2,T1,S1")
    p.add_argument("--segment-sizes", default="2,2")
    p.add_argument("--groups", default="0,0,1,1", help="word group of each text row")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--n", type=int, default=2)
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--words", type=int, default=3)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--vocab-size", type=int, default=8)
    p.add_argument("--tau", type=float, default=0.2)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("loss", help="word-aligned contrastive loss for an alignment file")
    p.add_argument("--alignment", required=True)
    p.add_argument("--embeddings", help="tensor manifest holding 'speech' and 'text' matrices")
    p.add_argument("--dim", type=int, default=8, help="width of random embeddings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=0.2)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("equiv", help="incremental-vs-full equivalence suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_equiv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SimulSTError, OSError, KeyError) as exc:
        print(f"simulst {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
