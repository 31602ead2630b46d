"""Command-line entry point: ``msmcvq <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .config import load_config, validate_config
from .dsp import mel_cepstral_distortion
from .errors import ToolkitError
from .losses import run_gradcheck_suite
from .metrics import corpus_error_rate, frechet_distance, gaussian_stats, tokenize
from .synth import SyntheticSpec, gen_synthetic

logger = logging.getLogger("msmcvq")

GRADCHECK_TOLERANCE = 1e-5


def _emit(name: str, value: float) -> None:
    print(f"{name}\t{round(value, 6) + 0.0:.6f}")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        raw = cfg.to_dict()
        raw["seed"] = args.seed
        cfg = validate_config(raw)
    return cfg


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        num_clusters=args.clusters,
        cluster_std=args.std,
        dim=args.dim,
        frames_per_utterance=args.frames,
        num_utterances=args.utterances,
        seed=args.seed if args.seed is not None else 0,
        mode=args.mode,
        segment_multiple=args.segment_multiple,
    )
    corpus = gen_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, u in enumerate(corpus.utterances):
        io.write_feature_file(out / f"utt{i:04d}{pipeline.FEATURE_SUFFIX}", u)
    manifest = {"spec": spec.__dict__ | {"frequencies": list(spec.frequencies), "amplitudes": list(spec.amplitudes)}}
    if corpus.centers is not None:
        from .dsp import FeatureSequence

        io.write_feature_file(out / "centers.emb", FeatureSequence(corpus.centers, 1.0, "embedding"))
        manifest["labels"] = {f"utt{i:04d}": lab.tolist() for i, lab in enumerate(corpus.labels)}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True) + "\n")
    print(f"wrote {len(corpus.utterances)} utterances to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.reseed_dead:
        raw = cfg.to_dict()
        raw["ema"]["reseed_dead"] = True
        cfg = validate_config(raw)
    files = pipeline.list_inputs([args.corpus], pipeline.FEATURE_SUFFIX)
    utts = [io.read_feature_file(p) for p in files]
    report = pipeline.train(cfg, utts, args.out)
    _emit("bits_per_frame", report["bits_per_frame"])
    _emit("l_vq", report["l_vq"])
    _emit("l_ms", report["l_ms"])
    _emit("l_a", report["associate"]["l_a"])
    return 0


def _artifacts(args):
    cfg = load_config(args.config) if args.config else None
    return pipeline.Artifacts.load(args.artifacts, cfg)


def cmd_encode(args) -> int:
    art = _artifacts(args)
    paths = pipeline.encode_files(art, pipeline.list_inputs(args.inputs, pipeline.FEATURE_SUFFIX), args.out)
    print(f"encoded {len(paths)} files")
    return 0


def cmd_decode(args) -> int:
    art = _artifacts(args)
    paths = pipeline.decode_files(art, pipeline.list_inputs(args.inputs, pipeline.TOKEN_SUFFIX), args.out)
    print(f"decoded {len(paths)} files")
    return 0


def cmd_compress(args) -> int:
    art = _artifacts(args)
    for dst, rep in pipeline.compress_files(art, pipeline.list_inputs(args.inputs, pipeline.TOKEN_SUFFIX), args.out):
        print(f"{dst.stem}\tratio\t{rep['ratio']:.6f}")
    return 0


def cmd_reconstruct(args) -> int:
    art = _artifacts(args)
    inputs = pipeline.list_inputs(args.inputs, pipeline.CODE_SUFFIX)
    results = pipeline.reconstruct_files(art, inputs, args.out, args.reference, args.teacher_forcing)
    for dst, l_rec in results:
        if l_rec is not None:
            print(f"{dst.stem}\tl_rec\t{l_rec:.6f}")
    return 0


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def cmd_eval(args) -> int:
    if args.metric == "fd":
        a = gaussian_stats(io.read_feature_file(args.a))
        b = gaussian_stats(io.read_feature_file(args.b))
        _emit("fd", frechet_distance(a, b, args.scale))
    elif args.metric == "er":
        refs, hyps = _read_lines(args.a), _read_lines(args.b)
        if len(refs) != len(hyps):
            raise ToolkitError(f"{len(refs)} reference lines vs {len(hyps)} hypothesis lines")
        pairs = [(tokenize(r, args.unit), tokenize(h, args.unit)) for r, h in zip(refs, hyps)]
        _emit("cer" if args.unit == "char" else "per", corpus_error_rate(pairs))
    else:
        _emit("mcd", mel_cepstral_distortion(io.read_feature_file(args.a), io.read_feature_file(args.b)))
    return 0


def cmd_stats(args) -> int:
    art = _artifacts(args)
    msmcrs = [io.read_msmcr(p, art.books) for p in pipeline.list_inputs(args.inputs, pipeline.TOKEN_SUFFIX)]
    for i, heads in enumerate(pipeline.token_stats(art, msmcrs)):
        for h, st in enumerate(heads):
            _emit(f"stage{i + 1}.head{h}.perplexity", st.perplexity)
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_gradcheck_suite(args.points, args.h, args.seed or 0)
    worst = 0.0
    for name in sorted(reports):
        print(reports[name].line())
        worst = max(worst, reports[name].max_rel_error)
    return 0 if worst < GRADCHECK_TOLERANCE else 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML pipeline config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="msmcvq", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic feature corpus")
    p.add_argument("out")
    p.add_argument("--mode", choices=("gmm", "sine"), default="gmm")
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--std", type=float, default=0.01)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--utterances", type=int, default=50)
    p.add_argument("--segment-multiple", type=int, default=1, help="label runs are multiples of this many frames")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="fit codebooks, decoder and associate model")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--reseed-dead", action="store_true")
    p.set_defaults(func=cmd_train)

    for verb, func, helptext in (
        ("encode", cmd_encode, "feature files -> token files"),
        ("decode", cmd_decode, "token files -> feature files"),
        ("compress", cmd_compress, "token files -> compact codes"),
        ("reconstruct", cmd_reconstruct, "compact codes -> token files"),
        ("stats", cmd_stats, "codebook usage of token files"),
    ):
        p = sub.add_parser(verb, parents=[common], help=helptext)
        p.add_argument("inputs", nargs="+")
        p.add_argument("--artifacts", required=True)
        if verb != "stats":
            p.add_argument("--out", required=True)
        if verb == "reconstruct":
            p.add_argument("--reference", help="directory of ground-truth token files")
            p.add_argument("--teacher-forcing", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="objective metrics")
    p.add_argument("metric", choices=("fd", "er", "mcd"))
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--unit", choices=("char", "token"), default="char")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every loss")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
