"""Command-line entry point.

Verbs: gen-data, train-toy, explain, eval, sweep, inspect-model. Flags may
also come from a JSON config file (--config) whose keys mirror the long flag
names; explicit flags win. Exit codes: 0 ok, 2 usage/validation, 3 I/O,
4 internal failure.
"""

import argparse
import json
import os
import sys
import time

from . import ppm
from .datasets import gen_synthetic, load_manifest
from .errors import (
    CorruptModelError,
    FormatError,
    InvalidArgumentError,
    UcagError,
)
from .explainers import ExplainerSpec, METHODS, explain
from .metrics import (
    METRIC_NAMES,
    PerturbationConfig,
    evaluate_manifest,
    resolution_sweep,
)
from .network import load_weights, save_weights, forward, _header_dict
from .pipeline import UcagParams, ucag_explain
from .training import train_toy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INTERNAL = 4


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            raise InvalidArgumentError(
                f"--{name} is required (flag or config file); "
                f"see 'ucag {args.command} --help'"
            )


def _add_ucag_flags(p):
    p.add_argument("--method", default="gradcam", choices=METHODS)
    p.add_argument("--layer", default=None, help="CAM target layer id")
    p.add_argument("--epsilon", type=float, default=1e-6, help="relevance stabilizer")
    p.add_argument("--rho", type=float, default=0.555, help="patch size ratio")
    p.add_argument("--n", type=int, default=6, help="patches per axis")
    p.add_argument("--alpha", type=float, default=2.6, help="patch upscale factor")


def _build_parser():
    parser = argparse.ArgumentParser(prog="ucag", description=__doc__)
    parser.add_argument("--config", default=None, help="JSON file of default flag values")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = commands["gen-data"] = sub.add_parser(
        "gen-data", help="generate a planted-pattern dataset"
    )
    p.add_argument("--classes", type=int, help="number of classes (required)")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--size", type=int, default=64, help="square image side")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")

    p = commands["train-toy"] = sub.add_parser("train-toy", help="train the toy classifier")
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="toy.ucagnet")

    p = commands["explain"] = sub.add_parser("explain", help="render saliency for one image")
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--class-index", type=int, default=None,
                   help="target class (default: predicted)")
    p.add_argument("--ucag", action=argparse.BooleanOptionalAction, default=True,
                   help="run the unfold-and-conquer pipeline (--no-ucag = base only)")
    _add_ucag_flags(p)
    p.add_argument("--out-dir", default=".")

    p = commands["eval"] = sub.add_parser(
        "eval", help="score a manifest with base and UCAG maps"
    )
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--metrics", default=",".join(METRIC_NAMES),
                   help="comma list: " + ",".join(METRIC_NAMES))
    p.add_argument("--step-fraction", type=float, default=0.01)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel samples (default: cpu count; env UCAG_WORKERS wins)")
    _add_ucag_flags(p)
    p.add_argument("--out-dir", default=".")

    p = commands["sweep"] = sub.add_parser(
        "sweep", help="deletion/insertion vs input upscale factor"
    )
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--scales", default="1,1.5,2", help="comma list of upscale factors")
    p.add_argument("--limit", type=int, default=None, help="max samples to use")
    p.add_argument("--step-fraction", type=float, default=0.01)
    _add_ucag_flags(p)
    p.add_argument("--out", default="sweep.csv")

    p = commands["inspect-model"] = sub.add_parser(
        "inspect-model", help="print a weight file's header"
    )
    p.add_argument("--model")
    return parser, commands


def _apply_config(commands, argv):
    # Pre-scan for --config; its values become subcommand defaults, so flags
    # given on the command line still win.
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config) as f:
        try:
            values = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"{known.config}: invalid JSON ({e})") from e
    if not isinstance(values, dict):
        raise InvalidArgumentError(f"{known.config}: config must be a JSON object")
    normalized = {k.replace("-", "_"): v for k, v in values.items()}
    for sub in commands.values():
        dests = {a.dest for a in sub._actions}
        sub.set_defaults(**{k: v for k, v in normalized.items() if k in dests})


def _spec_and_params(args):
    spec = ExplainerSpec(method=args.method, layer=args.layer, epsilon=args.epsilon)
    params = UcagParams(rho=args.rho, n=args.n, alpha=args.alpha, explainer=spec)
    return spec, params


def _workers(args):
    env = os.environ.get("UCAG_WORKERS")
    if env is not None:
        return max(1, int(env))
    if args.workers is not None:
        return max(1, args.workers)
    return os.cpu_count() or 1


def _cmd_gen_data(args):
    _require(args, "classes")
    gen_synthetic(
        args.out,
        classes=args.classes,
        per_class=args.per_class,
        image_hw=(args.size, args.size),
        noise=args.noise,
        seed=args.seed,
    )
    path = os.path.join(args.out, "manifest.json")
    print(f"wrote {args.classes * args.per_class} images; manifest: {path}")
    return EXIT_OK


def _cmd_train(args):
    _require(args, "manifest")
    manifest = load_manifest(args.manifest)
    net = train_toy(
        manifest,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        batch_size=args.batch_size,
        progress=print,
    )
    save_weights(net, args.out)
    print(f"final train accuracy: {net.metadata['final_train_accuracy']:.4f}")
    print(f"weights: {args.out}")
    return EXIT_OK


def _cmd_explain(args):
    _require(args, "model", "image")
    net = load_weights(args.model)
    image = ppm.read_ppm(args.image)
    tensor = ppm.to_tensor(image)
    if args.class_index is None:
        class_k = int(forward(net, tensor[None]).logits.argmax())
    else:
        class_k = args.class_index
    spec, params = _spec_and_params(args)
    start = time.perf_counter()
    if args.ucag:
        smap = ucag_explain(net, params, tensor, class_k)
    else:
        smap = explain(spec, net, tensor, class_k)
    elapsed = time.perf_counter() - start

    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    solo = os.path.join(args.out_dir, f"{stem}_saliency.ppm")
    overlay = os.path.join(args.out_dir, f"{stem}_overlay.ppm")
    ppm.write_ppm(ppm.render_heatmap(smap, "solo"), solo)
    ppm.write_ppm(ppm.render_heatmap(smap, "overlay", base=image), overlay)

    diag = {
        "class_index": class_k,
        "method": spec.method,
        "ucag": bool(args.ucag),
        "timing_s": elapsed,
    }
    if smap.diagnostics:
        diag["weights"] = smap.diagnostics["weights"].tolist()
        diag["patch_logits"] = smap.diagnostics["patch_logits"].tolist()
        diag["offsets"] = [list(o) for o in smap.diagnostics["offsets"]]
        diag["grid"] = {k: list(v) if isinstance(v, tuple) else v
                        for k, v in smap.diagnostics["grid"].items()}
    diag_path = os.path.join(args.out_dir, f"{stem}_diagnostics.json")
    with open(diag_path, "w") as f:
        json.dump(diag, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"wrote {solo}, {overlay}, {diag_path}")
    return EXIT_OK


def _cmd_eval(args):
    _require(args, "model", "manifest")
    net = load_weights(args.model)
    manifest = load_manifest(args.manifest)
    metrics = tuple(m for m in args.metrics.split(",") if m)
    spec, params = _spec_and_params(args)
    cfg = PerturbationConfig(step_fraction=args.step_fraction)
    start = time.perf_counter()
    records, summary = evaluate_manifest(
        net, manifest, spec=spec, params=params, metrics=metrics,
        cfg=cfg, workers=_workers(args),
    )
    elapsed = time.perf_counter() - start

    os.makedirs(args.out_dir, exist_ok=True)
    report = os.path.join(args.out_dir, "report.jsonl")
    with open(report, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True))
            f.write("\n")
    summary["timing_s"] = elapsed
    summary_path = os.path.join(args.out_dir, "summary.json")
    with open(summary_path, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"wrote {report} and {summary_path} ({elapsed:.1f}s)")
    for variant, means in summary["variants"].items():
        pretty = "  ".join(f"{k}={v:.4f}" for k, v in sorted(means.items()))
        print(f"{variant}: {pretty}")
    return EXIT_OK


def _cmd_sweep(args):
    _require(args, "model", "manifest")
    net = load_weights(args.model)
    manifest = load_manifest(args.manifest)
    scales = [float(s) for s in args.scales.split(",") if s]
    if not scales:
        raise InvalidArgumentError("scale list is empty")
    spec, _ = _spec_and_params(args)
    entries = manifest.entries[: args.limit] if args.limit else manifest.entries
    samples = [
        (ppm.to_tensor(ppm.read_ppm(manifest.image_path(e))), e.label) for e in entries
    ]
    cfg = PerturbationConfig(step_fraction=args.step_fraction)
    rows = resolution_sweep(net, spec, samples, scales, cfg)
    with open(args.out, "w") as f:
        f.write("alpha,deletion_auc,insertion_auc\n")
        for alpha, d, i in rows:
            f.write(f"{alpha:g},{d:.12g},{i:.12g}\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_inspect(args):
    _require(args, "model")
    net = load_weights(args.model)
    print(json.dumps(_header_dict(net), indent=1, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-toy": _cmd_train,
    "explain": _cmd_explain,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "inspect-model": _cmd_inspect,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = _build_parser()
    try:
        _apply_config(commands, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except InvalidArgumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, CorruptModelError, json.JSONDecodeError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except UcagError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
