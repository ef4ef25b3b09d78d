"""Command line interface: ``lowra <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from . import fileformat as ff
from .assigner import assign_precisions
from .codebook import Codebook
from .errors import ConfigError, InfeasibleBudgetError, LowraError, ShapeError
from .lloydmax import DEFAULT_LLOYD_ITERS, MseTable, build_mse_table
from .lowrank import DEFAULT_LOFTQ_STEPS, loftq_init, pissa_init
from .memory import DEFAULT_RANK, MODEL_DIMS, estimate_memory, split_bits
from .pipeline import PipelineConfig, format_report, run_pipeline
from .quantizer import ChannelQuantizer, QuantizedLayer
from .taskadapt import BinMembership, FixedGradientOracle, WeightedMseLoss, refine_codepoints
from .tensor import DEFAULT_BLOCK_SIZE, channel_std_stats

log = logging.getLogger("lowra")


# -- argument helpers -------------------------------------------------------

def precision_list(text: str) -> Tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad precision list {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("precision list is empty")
    return values


def shape_arg(text: str) -> Tuple[int, int]:
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}")
    return rows, cols


def named_path(text: str) -> Tuple[str, Path]:
    """``name=path`` or ``path`` (name taken from the file stem)."""
    if "=" in text:
        name, path = text.split("=", 1)
        return name, Path(path)
    return Path(text).stem, Path(text)


def load_named(specs) -> List[Tuple[str, np.ndarray]]:
    return [(name, ff.read_matrix(path)) for name, path in specs]


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def book_to_json(book: Codebook):
    return [[float(v) for v in book.mappings], [float(v) for v in book.thresholds]]


def book_from_json(precision: int, entry) -> Codebook:
    m, t = entry
    return Codebook(precision, np.array(m, dtype=np.float32), np.array(t, dtype=np.float32))


def load_maps(path) -> dict:
    doc = json.loads(Path(path).read_text())
    layers = {}
    for entry in doc["layers"]:
        books = {int(p): [book_from_json(int(p), e) for e in lst] for p, lst in entry["codebooks"].items()}
        table = MseTable(tuple(doc["precisions"]), np.array(entry["mse"]), np.full(entry["rows"], entry["cols"]))
        layers[entry["name"]] = (table, books)
    return {"block_size": doc["block_size"], "precisions": tuple(doc["precisions"]), "layers": layers}


def load_assignment(path) -> Dict[str, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    return {e["name"]: np.array(e["bits"], dtype=np.int64) for e in doc["layers"]}


def layers_by_name(layers: List[QuantizedLayer]) -> Dict[str, QuantizedLayer]:
    return {l.name: l for l in layers}


def quantizer_for(layer: QuantizedLayer) -> ChannelQuantizer:
    return ChannelQuantizer(layer.codebooks, layer.block_size)


# -- subcommands -------------------------------------------------------------

def cmd_fit_maps(args):
    named = load_named(args.tensors)
    doc = {"block_size": args.block_size, "lloyd_iters": args.lloyd_iters,
           "precisions": list(args.precisions), "weight_power": args.weight_power, "layers": []}
    for name, w in named:
        table, books = build_mse_table(w, args.precisions, args.block_size, args.lloyd_iters, args.weight_power)
        doc["layers"].append({
            "name": name, "rows": w.shape[0], "cols": w.shape[1],
            "mse": table.mse.tolist(),
            "codebooks": {str(p): [book_to_json(b) for b in bs] for p, bs in books.items()},
        })
        print(f"{name}: {w.shape[0]}x{w.shape[1]} mean MSE "
              + ", ".join(f"{p}-bit {table.column(p).mean():.6g}" for p in table.precisions))
    write_json(args.output, doc)
    return 0


def cmd_assign(args):
    maps = load_maps(args.maps)
    names = list(maps["layers"])
    table = MseTable.concat([maps["layers"][n][0] for n in names])
    allowed = args.precisions
    result = assign_precisions(table, args.bpp, allowed, args.clusters_per_group, args.seed)
    bits = split_bits([(n, maps["layers"][n][0].channels, 0) for n in names], result.bits)
    summary = result.summary()
    doc = {"summary": summary, "layers": [{"name": n, "bits": b.tolist()} for n, b in zip(names, bits)]}
    write_json(args.output, doc)
    print(f"status: {result.status}")
    print(f"achieved bpp {result.achieved_bpp:.6f} (budget {result.budget} bits, used {result.bits_used})")
    print(f"total SSE {result.total_sse:.6g}")
    return 0


def cmd_quantize(args):
    named = load_named(args.tensors)
    maps = load_maps(args.maps) if args.maps else None
    assignment = load_assignment(args.assignment) if args.assignment else None
    block_size = maps["block_size"] if maps else args.block_size
    layers = []
    for name, w in named:
        bits = assignment[name] if assignment else np.full(w.shape[0], args.precision)
        if bits.shape != (w.shape[0],):
            raise ShapeError(f"assignment for {name} has {bits.size} entries, matrix has {w.shape[0]} rows")
        if maps:
            books = maps["layers"][name][1]
        else:
            _, books = build_mse_table(w, sorted(set(bits.tolist())), block_size, args.lloyd_iters)
        quantizer = ChannelQuantizer([books[int(b)][i] for i, b in enumerate(bits)], block_size)
        layers.append(quantizer.quantize(w, name))
    ff.write_container(args.output, layers)
    print(f"wrote {len(layers)} layer(s) to {args.output}")
    return 0


def cmd_dequantize(args):
    layers = ff.read_container(args.container)
    if args.layer is None:
        if len(layers) != 1:
            raise ConfigError(f"container has {len(layers)} layers; pick one with --layer")
        layer = layers[0]
    else:
        by_name = layers_by_name(layers)
        if args.layer not in by_name:
            raise ConfigError(f"no layer named {args.layer!r}")
        layer = by_name[args.layer]
    out = layer.dequantize()
    if args.with_adapters and layer.factors is not None:
        out = (out.astype(np.float64) + layer.factors.product()).astype(np.float32)
    ff.write_tensor(args.output, out)
    print(f"wrote {layer.name} {out.shape[0]}x{out.shape[1]} to {args.output}")
    return 0


def cmd_init_lowrank(args):
    layers = layers_by_name(ff.read_container(args.container))
    out = []
    for name, w in load_named(args.tensors):
        if name not in layers:
            raise ConfigError(f"container has no layer {name!r}")
        quantizer = quantizer_for(layers[name])
        if args.method == "loftq":
            layer, _, report = loftq_init(w, quantizer, args.rank, args.loftq_steps, name=name)
        else:
            layer, _, report = pissa_init(w, quantizer, args.rank, name=name)
        out.append(layer)
        trail = ", ".join(f"{r:.6g}" for r in report.residuals)
        print(f"{name}: {args.method} rank {args.rank} residual trajectory [{trail}]")
        for note in report.warnings:
            print(f"  warning: {note}")
    ff.write_container(args.output, out)
    return 0


def _refine_layer(layer: QuantizedLayer, w: np.ndarray, grads, steps: int, step_size):
    state = layer.state
    scale = state.expand().astype(np.float64)
    target = w.astype(np.float64)
    if layer.factors is not None:
        target = target - layer.factors.product()
    books, moved = [], 0
    for i, book in enumerate(layer.codebooks):
        membership = BinMembership(layer.codes(i).codes.astype(np.int64), book.levels)
        a = scale[i]
        if grads is None:
            base = WeightedMseLoss(target[i])
        else:
            base = FixedGradientOracle(grads[i])

        def oracle(q_norm, base=base, a=a):
            loss, g = base(q_norm * a)
            return loss, g * a

        if step_size == "auto":
            # curvature of codepoint j is 2 * sum_{i in B_j} a_i^2 / n
            curv = np.bincount(membership.bins, weights=a * a, minlength=book.levels) * 2.0 / a.size
            eta = 1.0 / (2.0 * curv.max()) if curv.max() > 0 else 1.0
        else:
            eta = float(step_size)
        res = refine_codepoints(None, book.thresholds, book.mappings, oracle, eta, steps, membership=membership)
        new = Codebook(book.precision, res.mappings.astype(np.float32), book.thresholds)
        moved += int(not np.array_equal(new.mappings, book.mappings))
        books.append(new)
    refined = QuantizedLayer(layer.name, layer.rows, layer.cols, layer.block_size, books,
                             layer.absmax, layer.packed, layer.factors)
    return refined, moved


def cmd_refine_maps(args):
    layers = ff.read_container(args.container)
    tensors = dict(load_named(args.tensors))
    grads = dict(load_named(args.grads)) if args.grads else {}
    out = []
    for layer in layers:
        if layer.name not in tensors:
            out.append(layer)
            continue
        w = tensors[layer.name]
        g = grads.get(layer.name)
        if g is not None and g.shape != w.shape:
            raise ShapeError(f"gradient tensor for {layer.name} has shape {g.shape}, expected {w.shape}")
        refined, moved = _refine_layer(layer, w, g, args.steps, args.step_size)
        before = float(((layer.dequantize() - w) ** 2).mean())
        after = float(((refined.dequantize() - w) ** 2).mean())
        print(f"{layer.name}: refined {moved}/{layer.rows} codebooks, reconstruction MSE {before:.6g} -> {after:.6g}")
        out.append(refined)
    ff.write_container(args.output, out)
    return 0


def cmd_estimate_mem(args):
    if args.container:
        layers = ff.read_container(args.container)
        dims = [(l.name, l.rows, l.cols) for l in layers]
        bits = [l.precisions for l in layers]
        block_size = layers[0].block_size if layers else args.block_size
    else:
        if args.model:
            dims = MODEL_DIMS[args.model]()
        elif args.dims:
            dims = [(f"layer{i}", r, c) for i, (r, c) in enumerate(args.dims)]
        else:
            raise ConfigError("give --model, --dims or --container")
        bits = [args.precision] * len(dims)
        block_size = args.block_size
    report = estimate_memory(dims, bits, rank=args.rank, mode=args.mode, block_size=block_size)
    if args.json:
        print(json.dumps({k: v for k, v in report.to_dict().items() if k != "layers"}, indent=2))
    else:
        print(report.format())
    return 0


def cmd_inspect(args):
    layers = ff.read_container(args.container)
    rows = []
    for l in layers:
        counts = {int(p): int((l.precisions == p).sum()) for p in np.unique(l.precisions)}
        rows.append({
            "name": l.name, "rows": l.rows, "cols": l.cols, "block_size": l.block_size,
            "bpp": l.code_bits / (l.rows * l.cols), "precisions": counts,
            "payload_bytes": l.payload_bytes,
            "rank": None if l.factors is None else l.factors.rank,
        })
    if args.json:
        print(json.dumps({"layers": rows}, indent=2))
        return 0
    print(f"{args.container}: {len(layers)} layer(s)")
    for r in rows:
        prec = ", ".join(f"{p}-bit x{n}" for p, n in sorted(r["precisions"].items()))
        rank = "-" if r["rank"] is None else r["rank"]
        print(f"  {r['name']:<24} {r['rows']}x{r['cols']} block {r['block_size']} bpp {r['bpp']:.4f} "
              f"[{prec}] payload {r['payload_bytes']} B rank {rank}")
    return 0


def cmd_pipeline(args):
    config = PipelineConfig(
        target_bpp=args.bpp, precisions=args.precisions, block_size=args.block_size,
        lloyd_iters=args.lloyd_iters, clusters_per_group=args.clusters_per_group,
        rank=args.rank, loftq_steps=args.loftq_steps, init_method=args.method, seed=args.seed,
        weight_power=args.weight_power,
    )
    result = run_pipeline(load_named(args.tensors), config)
    ff.write_container(args.output, result.layers)
    if args.report:
        write_json(args.report, result.report)
    print(format_report(result.report))
    return 0


def cmd_std_stats(args):
    for name, w in load_named(args.tensors):
        print(f"{name}:")
        print("  " + channel_std_stats(w).format().replace("\n", "\n  "))
    return 0


def cmd_import_raw(args):
    rows, cols = args.shape
    raw = np.fromfile(args.input, dtype="<f4")
    if raw.size != rows * cols:
        raise ShapeError(f"{args.input} holds {raw.size} float32 values, expected {rows * cols}")
    ff.write_tensor(args.output, raw.reshape(rows, cols))
    return 0


# -- parser ------------------------------------------------------------------

def _common(p, *, bpp=False, rank=False):
    p.add_argument("--precisions", type=precision_list, default=None, help="comma list, e.g. 1,2,4")
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--lloyd-iters", type=int, default=DEFAULT_LLOYD_ITERS)
    p.add_argument("--clusters-per-group", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-power", type=int, choices=(1, 2), default=1,
                   help="Lloyd-Max sample weight is absmax**power")
    if bpp:
        p.add_argument("--bpp", type=float, required=True, help="target bits per parameter")
    if rank:
        p.add_argument("--rank", type=int, default=0)
        p.add_argument("--loftq-steps", type=int, default=DEFAULT_LOFTQ_STEPS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowra", description="Mixed-precision quantization of LoRA base weights")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-maps", help="learn per-channel codebooks and the MSE table")
    p.add_argument("tensors", nargs="+", type=named_path)
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p.set_defaults(func=cmd_fit_maps, default_precisions=(1, 2, 4))

    p = sub.add_parser("assign", help="assign per-channel precisions under a bit budget")
    p.add_argument("maps", help="JSON written by fit-maps")
    p.add_argument("-o", "--output", required=True)
    _common(p, bpp=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("quantize", help="quantize tensors into a container")
    p.add_argument("tensors", nargs="+", type=named_path)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--maps")
    p.add_argument("--assignment")
    p.add_argument("--precision", type=int, default=4, help="uniform precision without --assignment")
    _common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="decode one container layer to a tensor file")
    p.add_argument("container")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--layer")
    p.add_argument("--with-adapters", action="store_true", help="add L1 @ L2 to the decoded weight")
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("init-lowrank", help="attach LoftQ or PiSSA adapter factors")
    p.add_argument("container")
    p.add_argument("tensors", nargs="+", type=named_path)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--method", choices=("loftq", "pissa"), default="loftq")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--loftq-steps", type=int, default=DEFAULT_LOFTQ_STEPS)
    p.set_defaults(func=cmd_init_lowrank)

    p = sub.add_parser("refine-maps", help="refine codepoints with thresholds held fixed")
    p.add_argument("container")
    p.add_argument("tensors", nargs="+", type=named_path, help="original weights per layer")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--grads", nargs="*", type=named_path, help="per-element dL/dW tensors (LWT1)")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--step-size", default="auto")
    p.set_defaults(func=cmd_refine_maps)

    p = sub.add_parser("estimate-mem", help="estimate memory of quantized linear layers")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", choices=sorted(MODEL_DIMS))
    src.add_argument("--dims", type=lambda s: [shape_arg(x) for x in s.split(",")])
    src.add_argument("--container")
    p.add_argument("--precision", type=int, default=4)
    p.add_argument("--rank", type=int, default=DEFAULT_RANK)
    p.add_argument("--mode", choices=("inference", "finetune"), default="inference")
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_estimate_mem)

    p = sub.add_parser("inspect", help="summarize a container")
    p.add_argument("container")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("pipeline", help="fit, assign, quantize and initialize adapters in one go")
    p.add_argument("tensors", nargs="+", type=named_path)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--method", choices=("loftq", "pissa"), default="loftq")
    _common(p, bpp=True, rank=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("std-stats", help="output vs input channel standard deviations")
    p.add_argument("tensors", nargs="+", type=named_path)
    p.set_defaults(func=cmd_std_stats)

    p = sub.add_parser("import-raw", help="wrap a raw row-major float32 dump as an LWT1 tensor")
    p.add_argument("input")
    p.add_argument("--shape", type=shape_arg, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_import_raw)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "precisions", "unset") is None and hasattr(args, "default_precisions"):
        args.precisions = args.default_precisions
    try:
        return args.func(args)
    except InfeasibleBudgetError as exc:
        print(f"error: infeasible budget: {exc}", file=sys.stderr)
        return 3
    except (LowraError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
