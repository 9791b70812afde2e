"""Command-line entry point: ``brepseq <subcommand> ...``.

Every artifact written here carries ``{"config_hash", "version"}`` so that
outputs from different layouts cannot be combined by accident, and every
random choice is derived from a recorded seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .codebook import Codebook, RestartConfig, solid_latents, train_codebook, utilization
from .config import Config, load_config
from .detokenizer import evaluate_sequence
from .errors import BrepError, HashMismatch, UsageError
from .generator import SamplerConfig, fit_ngram, generate_batch
from .generator.checkpoint import checkpoint_bytes, checkpoint_from_bytes
from .ingestion import generate_dataset, load_dataset, parse_kind_mix, read_solid
from .metrics import EvalReport, evaluate, format_table, sample_points, sequence_hash
from .sequencer import (EDGE_STRATEGIES, FACE_STRATEGIES, VocabLayout, read_token_file,
                        tokenize_solid, write_token_file)

DEFAULT_MIX = "box:0.4,n_prism:0.4,l_bracket:0.2"
SKIP_JSON = {"manifest.json", "validity.json", "report.json"}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def derive_seed(base: int, i: int) -> int:
    """Independent per-item seed, stable under reordering of the work pool."""
    return int(np.random.SeedSequence([base, i]).generate_state(1)[0])


def _stamp(cfg: Config, **extra) -> dict:
    return {"config_hash": cfg.hash(), "version": __version__, **extra}


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _pmap(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _located(exc: BrepError, where) -> BrepError:
    """Same error kind, message prefixed with the offending input."""
    try:
        return type(exc)(f"{where}: {exc}")
    except TypeError:
        return BrepError(f"{where}: {type(exc).__name__}: {exc}")


def _required(value, cfg: Config, key: str, flag: str):
    value = value or cfg.paths.get(key)
    if not value:
        raise UsageError(f"{flag} is required (or set paths.{key} in the config)")
    return value


def _load_codebook(path, layout: VocabLayout) -> Codebook:
    cb = Codebook.load(path)
    if cb.size != layout.n_geo:
        raise HashMismatch(f"{path}: codebook has {cb.size} codewords but the layout expects N_geo={layout.n_geo}")
    return cb


def _check_codebook(sidecar: dict, cb: Codebook, where) -> None:
    want = sidecar.get("codebook_hash")
    if want is not None and want != cb.content_hash():
        raise HashMismatch(f"{where}: made with codebook {want}, given {cb.content_hash()}")


def _solid_files(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return [f for f in sorted(p.glob("*.json")) if f.name not in SKIP_JSON]
    return [p]


def _read_solids(path, n_max):
    p = Path(path)
    if (p / "manifest.json").exists() or p.name == "manifest.json":
        return load_dataset(p, n_max)
    out = []
    for f in _solid_files(p):
        try:
            out.append(read_solid(f, n_max))
        except BrepError as exc:
            raise _located(exc, f) from None
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_dataset(args, cfg: Config) -> int:
    out = _required(args.out, cfg, "data", "--out")
    seed = cfg.seed("dataset") if args.seed is None else args.seed
    manifest = generate_dataset(out, args.count, parse_kind_mix(args.kind_mix), seed, args.jitter, _stamp(cfg))
    print(f"wrote {len(manifest.entries)} solids to {out}")
    return 0


def cmd_train_codebook(args, cfg: Config) -> int:
    data = _required(args.data, cfg, "data", "--data")
    out = _required(args.out, cfg, "codebook", "--out")
    seed = cfg.seed("codebook") if args.seed is None else args.seed
    latents = solid_latents(_read_solids(data, cfg.n_max))
    restart = RestartConfig(enabled=not args.no_restart)
    cb = train_codebook(latents, n_geo=cfg.N_geo, epochs=args.epochs, restart=restart, seed=seed)
    cb.meta.update(_stamp(cfg, epochs=args.epochs, seed=seed, restart=restart.enabled, n_patches=len(latents)))
    cb.save(out)
    print(f"codebook N_geo={cb.size} max_error={cb.max_error:.6g} utilization={utilization(cb, latents):.3f}")
    return 0


def _tokenize_one(item, cb, layout, face_strategy, edge_strategy, conditional):
    i, path, solid, seed = item
    try:
        return tokenize_solid(solid, cb, layout, face_strategy, seed, edge_strategy=edge_strategy,
                              conditional=conditional)
    except BrepError as exc:
        raise _located(exc, path) from None


def cmd_tokenize(args, cfg: Config) -> int:
    layout = cfg.layout
    cb = _load_codebook(_required(args.codebook, cfg, "codebook", "--codebook"), layout)
    files = _solid_files(args.input)
    solids = _read_solids(args.input, cfg.n_max)
    base = cfg.seed("tokenize") if args.seed is None else args.seed
    items = [(i, f, s, derive_seed(base, i)) for i, (f, s) in enumerate(zip(files, solids))]
    fn = partial(_tokenize_one, cb=cb, layout=layout, face_strategy=cfg.face_strategy,
                 edge_strategy=cfg.edge_strategy, conditional=args.conditional)
    seqs = _pmap(fn, items, args.workers)
    write_token_file(args.out, seqs, layout, _stamp(cfg, codebook_hash=cb.content_hash(), seed=base))
    print(f"wrote {len(seqs)} sequences to {args.out}")
    return 0


def _evaluate_one(tokens, cb, layout, tau):
    return evaluate_sequence(tokens, cb, layout, tau)


def cmd_detokenize(args, cfg: Config) -> int:
    layout = cfg.layout
    cb = _load_codebook(_required(args.codebook, cfg, "codebook", "--codebook"), layout)
    seqs, sidecar = read_token_file(args.input, layout)
    _check_codebook(sidecar, cb, args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _pmap(partial(_evaluate_one, cb=cb, layout=layout, tau=cfg.tau_merge), seqs, args.workers)
    reports = []
    for i, (model, rep) in enumerate(results):
        entry = {"index": i, **rep.to_dict()}
        if model is not None:
            name = f"recon_{i:05d}.json"
            doc = dict(model.to_dict(), meta=_stamp(cfg, source=str(args.input), index=i))
            (out / name).write_text(json.dumps(doc, sort_keys=True))
            entry["file"] = name
        reports.append(entry)
    n_valid = sum(r["valid"] for r in reports)
    summary = {"n": len(reports), "n_valid": n_valid,
               "valid_percent": 100.0 * n_valid / len(reports) if reports else 0.0}
    (out / "validity.json").write_text(_dump({"meta": _stamp(cfg), "summary": summary, "sequences": reports}))
    print(f"{n_valid}/{len(reports)} sequences valid")
    return 0


def _transformer_config(args, vocab_size):
    from .generator.transformer import TransformerConfig
    return TransformerConfig(vocab_size, layers=args.layers, heads=args.heads, d=args.d, ff=args.ff,
                             t_max=args.t_max, lr=args.lr, optimizer=args.optimizer, batch_size=args.batch_size)


def cmd_train_model(args, cfg: Config) -> int:
    layout = cfg.layout
    seqs, sidecar = read_token_file(args.tokens, layout)
    seed = cfg.seed("model") if args.seed is None else args.seed
    meta = _stamp(cfg, layout=layout.to_dict(), layout_hash=layout.hash(), seed=seed,
                  codebook_hash=sidecar.get("codebook_hash"))
    if args.kind == "ngram":
        model = fit_ngram(seqs, order=args.order, vocab_size=layout.vocab_size, alpha=args.alpha,
                          end_token=layout.end, max_len=cfg.max_len)
        log = []
    else:
        import torch
        from .generator.transformer import train_transformer
        torch.set_num_threads(1)
        log = []
        model, _ = train_transformer(_transformer_config(args, layout.vocab_size), seqs, args.epochs, seed,
                                     end_token=layout.end, log=log.append)
    Path(args.out).write_bytes(checkpoint_bytes(model, meta))
    if args.log:
        # tokens_per_sec is wall-clock; everything else in the log is reproducible
        Path(args.log).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in log))
    print(f"trained {args.kind} model on {len(seqs)} sequences")
    return 0


def _load_model(path):
    model, header = checkpoint_from_bytes(Path(path).read_bytes())
    meta = header.get("meta", {})
    if "layout" not in meta:
        raise HashMismatch(f"{path}: checkpoint does not record its vocabulary layout")
    layout = VocabLayout(**meta["layout"])
    if layout.hash() != meta.get("layout_hash"):
        raise HashMismatch(f"{path}: stored layout hash does not match its layout")
    return model, layout, meta


def cmd_sample(args, cfg: Config) -> int:
    model_path = _required(args.model, cfg, "model", "--model")
    model, layout, meta = _load_model(model_path)
    if layout.hash() != cfg.layout.hash():
        raise HashMismatch(f"{model_path}: model layout {layout.hash()} != config layout {cfg.layout.hash()}")
    if args.class_label is None:
        prompt = [layout.start]
    else:
        if not 0 <= args.class_label < layout.n_classes:
            raise UsageError(f"--class-label must lie in [0, {layout.n_classes})")
        prompt = [layout.class_token(args.class_label)]
    seed = cfg.seed("sample") if args.seed is None else args.seed
    p = cfg.top_p if args.p is None else args.p
    if hasattr(model, "net"):
        import torch
        torch.set_num_threads(1)
    scfg = SamplerConfig(p=p, max_len=args.max_len or cfg.max_len, seed=seed)
    seqs = generate_batch(model, [prompt] * args.count, scfg)
    model_hash = hashlib.sha256(Path(model_path).read_bytes()).hexdigest()[:16]
    write_token_file(args.out, seqs, layout,
                     _stamp(cfg, model_hash=model_hash, p=p, seed=seed, codebook_hash=meta.get("codebook_hash"),
                            class_label=args.class_label))
    capped = sum(s.max_len_reached for s in seqs)
    print(f"wrote {len(seqs)} samples to {args.out} ({capped} hit max_len)")
    return 0


def _clouds_from_solids(solids, n_points, seed):
    return [sample_points(s, n_points, derive_seed(seed, i)) for i, s in enumerate(solids)]


def _gather(path, cfg: Config, cb, n_points, seed):
    """Point clouds (and token sequences, if ``path`` is a token file) for evaluation."""
    p = Path(path)
    if p.is_file() and p.suffix == ".tok":
        if cb is None:
            raise UsageError(f"{path}: decoding token files needs --codebook")
        seqs, sidecar = read_token_file(p, cfg.layout)
        _check_codebook(sidecar, cb, path)
        models = [evaluate_sequence(s, cb, cfg.layout, cfg.tau_merge)[0] for s in seqs]
        clouds = []
        for i, m in enumerate(models):
            if m is None:
                continue
            try:
                clouds.append(sample_points(m, n_points, derive_seed(seed, i)))
            except BrepError:
                continue
        return clouds, seqs
    return _clouds_from_solids(_read_solids(p, cfg.n_max), n_points, seed), None


def cmd_eval(args, cfg: Config) -> int:
    layout = cfg.layout
    cb = _load_codebook(args.codebook, layout) if args.codebook else None
    gen_clouds, gen_seqs = _gather(args.gen, cfg, cb, args.n_points, args.seed)
    ref_clouds, _ = _gather(args.ref, cfg, cb, args.n_points, args.seed)
    train_hashes = None
    if args.train:
        train_seqs, _ = read_token_file(args.train, layout)
        train_hashes = {sequence_hash(s, layout) for s in train_seqs}
    n_generated = len(gen_seqs) if gen_seqs is not None else len(gen_clouds)
    report = evaluate(gen_clouds, ref_clouds, gen_seqs, train_hashes, cb, layout, cfg.tau_merge, n_generated)
    print(format_table({Path(args.gen).name or str(args.gen): report}), end="")
    if args.out:
        doc = dict(json.loads(report.to_json()), meta=_stamp(cfg, gen=str(args.gen), ref=str(args.ref)))
        Path(args.out).write_text(_dump(doc))
    return 0


def run_ordering(solids, cb: Codebook, layout: VocabLayout, face_strategy: str, edge_strategy: str, *,
                 seed: int, count: int, p: float, order: int, n_points: int, tau_merge: float,
                 ref_clouds, max_len: int = 1024) -> EvalReport:
    """Tokenize under one ordering, fit an n-gram, sample, and score against the reference clouds."""
    seqs = [tokenize_solid(s, cb, layout, face_strategy, derive_seed(seed, i), edge_strategy=edge_strategy).tokens
            for i, s in enumerate(solids)]
    model = fit_ngram(seqs, order=order, vocab_size=layout.vocab_size, end_token=layout.end, max_len=max_len)
    gen = [s.tokens for s in generate_batch(model, [[layout.start]] * count, SamplerConfig(p, max_len, seed))]
    clouds = []
    for i, toks in enumerate(gen):
        m = evaluate_sequence(toks, cb, layout, tau_merge)[0]
        if m is None:
            continue
        try:
            clouds.append(sample_points(m, n_points, derive_seed(seed, i)))
        except BrepError:
            continue
    train_hashes = {sequence_hash(s, layout) for s in seqs}
    return evaluate(clouds, ref_clouds, gen, train_hashes, cb, layout, tau_merge, len(gen))


def cmd_ablate_ordering(args, cfg: Config) -> int:
    layout = cfg.layout
    cb = _load_codebook(_required(args.codebook, cfg, "codebook", "--codebook"), layout)
    solids = _read_solids(_required(args.data, cfg, "data", "--data"), cfg.n_max)
    ref = _read_solids(args.ref, cfg.n_max) if args.ref else solids
    ref_clouds = _clouds_from_solids(ref, args.n_points, args.seed)
    run = partial(run_ordering, solids, cb, layout, seed=args.seed, count=args.count, p=args.p, order=args.order,
                  n_points=args.n_points, tau_merge=cfg.tau_merge, ref_clouds=ref_clouds, max_len=cfg.max_len)
    face_rows = {f: run(f, "MAX-IDX-A") for f in FACE_STRATEGIES}
    edge_rows = {e: face_rows["DFS"] if e == "MAX-IDX-A" else run("DFS", e) for e in EDGE_STRATEGIES}
    text = ("Face ordering (edges MAX-IDX-A)\n\n" + format_table(face_rows)
            + "\nEdge ordering (faces DFS)\n\n" + format_table(edge_rows))
    print(text, end="")
    if args.out:
        doc = {"meta": _stamp(cfg, seed=args.seed, p=args.p, count=args.count, order=args.order),
               "face": {k: json.loads(v.to_json()) for k, v in face_rows.items()},
               "edge": {k: json.loads(v.to_json()) for k, v in edge_rows.items()},
               "table": text}
        Path(args.out).write_text(_dump(doc))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: $BREPSEQ_CONFIG)")
    common.add_argument("--L", type=int, dest="L", help="position quantization levels")
    common.add_argument("--n-geo", type=int, dest="N_geo", help="codebook size")
    common.add_argument("--n-max", type=int, dest="n_max", help="maximum face count / index vocabulary")
    common.add_argument("--n-classes", type=int, dest="n_classes")
    common.add_argument("--face-strategy", choices=FACE_STRATEGIES, dest="face_strategy")
    common.add_argument("--edge-strategy", choices=EDGE_STRATEGIES, dest="edge_strategy")
    common.add_argument("--tau-merge", type=float, dest="tau_merge")
    common.add_argument("--workers", type=int, default=1, help="worker processes for per-item work")

    parser = argparse.ArgumentParser(prog="brepseq", description="B-rep token sequences: codec, models, metrics.")
    parser.add_argument("--version", action="version", version=f"brepseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", parents=[common], help="write a procedural solid corpus")
    p.add_argument("--kind-mix", default=DEFAULT_MIX)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--jitter", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train-codebook", parents=[common], help="fit the geometry codebook")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-restart", action="store_true", help="disable dead-codeword restarts")
    p.set_defaults(func=cmd_train_codebook)

    p = sub.add_parser("tokenize", parents=[common], help="solids to token sequences")
    p.add_argument("--in", dest="input", required=True, help="solid JSON file or directory")
    p.add_argument("--codebook")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--conditional", action="store_true", help="start with the class token instead of START")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", parents=[common], help="token sequences to solids plus validity")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--codebook")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("train-model", parents=[common], help="fit a next-token model")
    p.add_argument("--tokens", required=True)
    p.add_argument("--kind", choices=("ngram", "transformer"), default="ngram")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="JSON-lines training log")
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--ff", type=int, default=256)
    p.add_argument("--t-max", type=int, default=1024)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_train_model)

    p = sub.add_parser("sample", parents=[common], help="nucleus-sample token sequences")
    p.add_argument("--model")
    p.add_argument("--p", type=float)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--class-label", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="COV/MMD/JSD and CAD metrics")
    p.add_argument("--gen", required=True, help="solid directory or .tok file")
    p.add_argument("--ref", required=True, help="solid directory or .tok file")
    p.add_argument("--codebook", help="needed when --gen/--ref are token files")
    p.add_argument("--train", help="training .tok file for novelty")
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="EvalReport JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-ordering", parents=[common], help="face/edge ordering comparison tables")
    p.add_argument("--data")
    p.add_argument("--codebook")
    p.add_argument("--ref")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--n-points", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate_ordering)
    return parser


OVERRIDES = ("L", "N_geo", "n_max", "n_classes", "face_strategy", "edge_strategy", "tau_merge")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).replace(**{k: getattr(args, k) for k in OVERRIDES})
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"brepseq {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (BrepError, OSError, ValueError) as exc:
        print(f"brepseq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
