"""Command-line interface.

Subcommands::

    tuckervid compress   MODEL WEIGHTS --ranks auto|FILE --out-prefix P
    tuckervid flops      MODEL [--weights BLOB] [--ranks auto|FILE]
    tuckervid bench      MODEL_A WEIGHTS_A MODEL_B WEIGHTS_B [--runs N] ...
    tuckervid verify     MODEL_A WEIGHTS_A MODEL_B WEIGHTS_B [--tol T] ...
    tuckervid make-reference --out-prefix P [--seed N] [--small]

Models are referenced by an explicit manifest/blob file pair; there is no
environment-variable configuration.  Exit codes: 0 success, 1 verification
failure, 2 input error.  ``--json PATH`` (``-`` for stdout) additionally
emits line-delimited JSON records.

A rank-override file has one line per layer: ``NAME RS RT`` forces
Tucker-2 at those ranks, ``NAME R`` forces Tucker-1, ``NAME auto`` keeps
the stock strategy with VBMF ranks, ``NAME skip`` disables compression of
that layer.  Layers not mentioned follow the stock plan.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import bench_forward
from .compress import CompressionPlan, PlanEntry, compress_network, default_plan
from .cost import report
from .modelio import ModelIOError, load_model, save_model
from .network import NetworkSpec, forward
from .reference import reference_network, small_reference_network, write_ranks_file

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INPUT_ERROR = 2


class InputError(Exception):
    """User-facing input problem; maps to exit code 2."""


def _emit_records(path: str | None, records: list[dict]) -> None:
    if path is None:
        return
    text = "\n".join(json.dumps(r) for r in records) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _load(manifest: str, blob: str | None):
    try:
        return load_model(manifest, blob)
    except (OSError, ModelIOError) as exc:
        raise InputError(str(exc)) from exc


def _parse_ranks_file(path: str) -> dict[str, object]:
    overrides: dict[str, object] = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise InputError(str(exc)) from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        name, args = parts[0], parts[1:]
        if name in overrides:
            raise InputError(f"{path}:{lineno}: duplicate entry for layer {name!r}")
        if args == ["auto"]:
            overrides[name] = "auto"
        elif args == ["skip"]:
            overrides[name] = "skip"
        elif len(args) in (1, 2):
            try:
                overrides[name] = tuple(int(a) for a in args)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: ranks must be integers: {raw!r}") from exc
        else:
            raise InputError(f"{path}:{lineno}: expected 'NAME R', 'NAME RS RT', "
                             f"'NAME auto' or 'NAME skip', got {raw!r}")
    return overrides


def _build_plan(net: NetworkSpec, ranks_arg: str) -> CompressionPlan:
    plan = default_plan(net)
    if ranks_arg == "auto":
        return plan
    overrides = _parse_ranks_file(ranks_arg)
    known = {layer.name for layer in net.layers}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise InputError(f"ranks file references unknown layers: {unknown}")
    entries = []
    for entry in plan.entries:
        override = overrides.get(entry.layer)
        if override is None or override == "auto":
            entries.append(entry)
        elif override == "skip":
            entries.append(PlanEntry(layer=entry.layer, strategy="skip"))
        else:
            strategy = "tucker2" if len(override) == 2 else "tucker1"
            entries.append(PlanEntry(layer=entry.layer, strategy=strategy, ranks=override))
    return CompressionPlan(entries)


def _load_input(args, net: NetworkSpec) -> np.ndarray:
    if args.input is not None:
        try:
            x = np.load(args.input)
        except (OSError, ValueError) as exc:
            raise InputError(f"{args.input}: {exc}") from exc
        if tuple(x.shape) != net.input_shape:
            raise InputError(
                f"{args.input}: input shape {tuple(x.shape)} != model input {net.input_shape}"
            )
        return np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(args.seed)
    return rng.standard_normal(net.input_shape)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_compress(args) -> int:
    net = _load(args.model, args.weights)
    plan = _build_plan(net, args.ranks)
    try:
        compressed, record = compress_network(net, plan, max_iters=args.max_iters, tol=args.tol)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    manifest_out = f"{args.out_prefix}.model.json"
    blob_out = f"{args.out_prefix}.weights.bin"
    record_out = f"{args.out_prefix}.record.json"
    save_model(compressed, manifest_out, blob_out)
    with open(record_out, "w") as fh:
        json.dump(record.to_dict(), fh, indent=2)
        fh.write("\n")

    rep = report(net, compressed)
    print(rep.format_text())
    print()
    for outcome in record.layers:
        if outcome.applied == "skip" and outcome.planned == "skip":
            continue
        note = " (downgraded: no gain)" if outcome.downgraded else ""
        ranks = ",".join(str(r) for r in outcome.ranks) if outcome.ranks else "-"
        print(
            f"{outcome.name}: {outcome.planned} -> {outcome.applied}{note} "
            f"ranks={ranks} params {outcome.params_before} -> {outcome.params_after}"
        )
    print(f"\nwrote {manifest_out}, {blob_out}, {record_out}")
    records = rep.to_records()
    records.extend({"record": "compression", **o.to_dict()} for o in record.layers)
    _emit_records(args.json, records)
    return EXIT_OK


def cmd_flops(args) -> int:
    net = _load(args.model, args.weights)
    if args.ranks is None:
        rep = report(net, net)
    else:
        if args.ranks == "auto" and args.weights is None:
            raise InputError("--ranks auto needs --weights (VBMF reads the actual kernels)")
        plan = _build_plan(net, args.ranks)
        try:
            compressed, _ = compress_network(net, plan)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        rep = report(net, compressed)
    print(rep.format_text())
    print(
        f"\ntotals: params x{rep.total_param_ratio:.2f}, "
        f"flops x{rep.total_flops_ratio:.2f} (2*mults+bias convention), "
        f"mults x{rep.total_mults_ratio:.2f}"
    )
    _emit_records(args.json, rep.to_records())
    return EXIT_OK


def cmd_bench(args) -> int:
    net_a = _load(args.model_a, args.weights_a)
    net_b = _load(args.model_b, args.weights_b)
    if net_a.input_shape != net_b.input_shape:
        raise InputError(
            f"input shapes differ: {net_a.input_shape} vs {net_b.input_shape}"
        )
    x = _load_input(args, net_a)
    timing_a = bench_forward(net_a, x, runs=args.runs, warmup=args.warmup,
                             single_thread=args.single_thread)
    timing_b = bench_forward(net_b, x, runs=args.runs, warmup=args.warmup,
                             single_thread=args.single_thread)
    try:
        rep = report(net_a, net_b, timings=(timing_a, timing_b))
        print(rep.format_text())
        records = rep.to_records()
    except ValueError:
        # Models whose layers do not correspond still get raw timings.
        records = []
    ratio = timing_a.total_mean_ms / timing_b.total_mean_ms
    print(
        f"\ntotal: {timing_a.total_mean_ms:.2f} +- {timing_a.total_std_ms:.2f} ms  ->  "
        f"{timing_b.total_mean_ms:.2f} +- {timing_b.total_std_ms:.2f} ms   "
        f"observed speed-up x{ratio:.2f} ({args.runs} runs, {args.warmup} warmup, "
        f"{'single-thread' if args.single_thread else 'default threads'})"
    )
    print("note: observed speed-up is hardware-dependent and is reported, not asserted")
    records.append({"record": "timing", "model": "a", **timing_a.to_dict()})
    records.append({"record": "timing", "model": "b", **timing_b.to_dict()})
    records.append({"record": "speedup", "observed": ratio})
    _emit_records(args.json, records)
    return EXIT_OK


def cmd_verify(args) -> int:
    net_a = _load(args.model_a, args.weights_a)
    net_b = _load(args.model_b, args.weights_b)
    if net_a.input_shape != net_b.input_shape:
        raise InputError(
            f"input shapes differ: {net_a.input_shape} vs {net_b.input_shape}"
        )
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.inputs):
        x = rng.standard_normal(net_a.input_shape)
        ya = forward(net_a, x)
        yb = forward(net_b, x)
        if ya.shape != yb.shape:
            raise InputError(f"output shapes differ: {ya.shape} vs {yb.shape}")
        scale = max(float(np.linalg.norm(ya)), np.finfo(np.float64).tiny)
        worst = max(worst, float(np.linalg.norm(ya - yb)) / scale)
    ok = worst <= args.tol
    print(f"max relative output error over {args.inputs} inputs: {worst:.3e} "
          f"(tolerance {args.tol:.1e}) -> {'PASS' if ok else 'FAIL'}")
    _emit_records(args.json, [{
        "record": "verify", "max_relative_error": worst,
        "tolerance": args.tol, "inputs": args.inputs, "seed": args.seed,
        "pass": ok,
    }])
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_make_reference(args) -> int:
    net = small_reference_network(args.seed) if args.small else reference_network(args.seed)
    manifest_out = f"{args.out_prefix}.model.json"
    blob_out = f"{args.out_prefix}.weights.bin"
    ranks_out = f"{args.out_prefix}.ranks"
    save_model(net, manifest_out, blob_out)
    write_ranks_file(ranks_out)
    print(f"wrote {manifest_out}, {blob_out}, {ranks_out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tuckervid",
        description="Tucker compression of 3D-convolutional networks: "
                    "compress, count costs, benchmark, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="decompose and rewrite a network")
    p.add_argument("model", help="input model manifest (JSON)")
    p.add_argument("weights", help="input weight blob")
    p.add_argument("--ranks", default="auto",
                   help="'auto' (VBMF) or a rank-override file (default: auto)")
    p.add_argument("--out-prefix", required=True,
                   help="write OUT.model.json, OUT.weights.bin, OUT.record.json")
    p.add_argument("--max-iters", type=int, default=50, help="HOOI sweep limit")
    p.add_argument("--tol", type=float, default=1e-8, help="HOOI relative fit tolerance")
    p.add_argument("--json", help="also write line-delimited JSON records (- for stdout)")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("flops", help="closed-form parameter/FLOP report")
    p.add_argument("model", help="model manifest (JSON)")
    p.add_argument("--weights", help="weight blob (needed for --ranks auto)")
    p.add_argument("--ranks", help="'auto' or a rank-override file; omit to report the "
                                   "model by itself")
    p.add_argument("--json", help="also write line-delimited JSON records (- for stdout)")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="wall-clock comparison of two models")
    p.add_argument("model_a", help="first model manifest")
    p.add_argument("weights_a", help="first model weight blob")
    p.add_argument("model_b", help="second model manifest")
    p.add_argument("weights_b", help="second model weight blob")
    p.add_argument("--runs", type=int, default=500, help="measured passes (default 500)")
    p.add_argument("--warmup", type=int, default=10, help="excluded warmup passes (default 10)")
    p.add_argument("--single-thread", action="store_true",
                   help="pin BLAS pools to one thread during measurement")
    p.add_argument("--seed", type=int, default=0, help="seed for the random input clip")
    p.add_argument("--input", help="read the input clip from a .npy file instead")
    p.add_argument("--json", help="also write line-delimited JSON records (- for stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="compare the outputs of two models")
    p.add_argument("model_a", help="first model manifest")
    p.add_argument("weights_a", help="first model weight blob")
    p.add_argument("model_b", help="second model manifest")
    p.add_argument("weights_b", help="second model weight blob")
    p.add_argument("--inputs", type=int, default=10, help="number of random probes (default 10)")
    p.add_argument("--seed", type=int, default=0, help="probe RNG seed")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="max allowed relative output error (default 1e-6)")
    p.add_argument("--json", help="also write line-delimited JSON records (- for stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("make-reference",
                       help="emit the bundled reference model and its rank file")
    p.add_argument("--out-prefix", required=True,
                   help="write OUT.model.json, OUT.weights.bin, OUT.ranks")
    p.add_argument("--seed", type=int, default=0, help="weight RNG seed")
    p.add_argument("--small", action="store_true", help="reduced-size variant")
    p.set_defaults(func=cmd_make_reference)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
