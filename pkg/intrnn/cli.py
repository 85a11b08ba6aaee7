"""Command line interface.

    intrnn init       write a randomly initialised float model
    intrnn calibrate  gather stage ranges of a float model over data
    intrnn convert    turn a float model and its ranges into an integer model
    intrnn run        write the integer logits of input sequences
    intrnn bench      time float and integer inference
    intrnn pwl        dump a PWL approximation and its error

Exit codes: 0 success, 1 usage, 2 unreadable or missing files, 3 invalid
models, data or settings. Failures print a single line to stderr.
"""
import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from intrnn.errors import InputError, IntRnnError
from intrnn.fileio import read_json, write_json
from intrnn.pwl import build_pwl, dump_rows, max_abs_error, output_qparams
from intrnn.quant_core import compute_qparams
from intrnn.runtime import (ConvertConfig, FloatModel, IntegerModel, StageTable, calibrate,
                            convert, load, save)
from intrnn.runtime.model import STACKABLE

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INVALID = 3
BENCH_COLUMNS = ("config", "mean_ms", "iters_per_sec", "speedup")
#: One row per input grid value; max_error repeats the table-wide error of the real form.
PWL_COLUMNS = ("pieces", "q", "real_in", "real_out", "int_out", "piece", "max_error")


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_token_sequences(path):
    """Token id sequences of a text file.

    Ids are separated by whitespace or newlines; a blank line ends a
    sequence. A file without ids gives no sequences.

    Raises:
        InputError: if an entry is not an integer.
    """
    sequences, current = [], []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                if current:
                    sequences.append(np.array(current, dtype=np.int64))
                    current = []
                continue
            try:
                current.extend(int(token) for token in line.split())
            except ValueError:
                raise InputError("{}:{}: token ids must be integers".format(path, number))
    if current:
        sequences.append(np.array(current, dtype=np.int64))
    return sequences


def read_feature_frames(path, dim):
    """One sequence of little-endian float32 frames of width dim, none for an empty file."""
    data = np.fromfile(path, dtype="<f4")
    if data.size == 0:
        return []
    if data.size % dim:
        raise InputError("{} does not hold whole frames of {} values".format(path, dim))
    return [data.reshape(-1, dim).astype(np.float64)]


def read_inputs(paths, model, features, required=True):
    """Sequences of every input file.

    Raises:
        InputError: for the wrong input format, or when required and no file
            holds a sequence.
    """
    if features != (model.input_kind == "features"):
        raise InputError("the model takes {}; select the matching input format".format(
            model.input_kind))
    sequences = []
    for path in paths:
        if features:
            sequences.extend(read_feature_frames(path, model.input_dim))
        else:
            sequences.extend(read_token_sequences(path))
    if required and not sequences:
        raise InputError("no input sequences in {}".format(", ".join(paths)))
    return sequences


def _load(path, expected):
    model = load(path)
    if not isinstance(model, expected):
        raise InputError("{} does not hold a{} model".format(
            path, "n integer" if expected is IntegerModel else " float"))
    return model


def cmd_init(args):
    kinds = tuple(kind.strip() for kind in args.layers.split(",") if kind.strip())
    model = FloatModel.random(kinds, vocab=args.vocab, embed=args.embed, hidden=args.hidden,
                              features=args.features, classes=args.classes, m_att=args.m_att,
                              rng=args.seed, scale=args.scale)
    save(model, args.out)
    print("wrote {} ({} parameters)".format(args.out, model.parameter_count()))


def cmd_calibrate(args):
    model = _load(args.model, FloatModel)
    config = ConvertConfig(cell_bits=args.cell_bits, gate_bits=args.gate_bits)
    # Empty data reaches calibrate, which reports the unobserved stages.
    stages = calibrate(model, read_inputs(args.data, model, args.features, required=False),
                       config)
    write_json(args.out, {"stages": stages.to_dict(), "config": config.to_dict()})
    print("wrote {} ({} stages)".format(args.out, len(stages)))


def cmd_convert(args):
    model = _load(args.model, FloatModel)
    document = read_json(args.qparams)
    stages = StageTable.from_dict(document.get("stages", {}))
    calibrated = document.get("config", {})
    config = ConvertConfig(pieces=args.pieces, exp_pieces=args.exp_pieces or args.pieces,
                           cell_bits=args.cell_bits or calibrated.get("cell_bits", 16),
                           gate_bits=args.gate_bits or calibrated.get("gate_bits", 8))
    integer_model = convert(model, stages, config)
    save(integer_model, args.out)
    report = integer_model.size_report()
    print("wrote {}: {} float bytes -> {} integer bytes ({:.2f}x)".format(
        args.out, report["float_bytes"], report["integer_bytes"], report["ratio"]))


def cmd_run(args):
    model = _load(args.model, IntegerModel)
    sequences = read_inputs(args.input, model, args.features)
    with open(args.out, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["sequence", "step"] + ["logit_{}".format(i) for i in range(model.classes)])
        for index, sequence in enumerate(sequences):
            if args.fakequant:
                logits = model.run_fakequant(sequence)
            else:
                logits = model.run(sequence, float_activations=args.float_activations)
            for step, row in enumerate(logits):
                writer.writerow([index, step] + [int(value) for value in row])
    print("wrote {} ({} sequences)".format(args.out, len(sequences)))


@dataclass
class BenchReport(object):
    """Mean latency of each configuration and its speedup over float.

    Attributes:
        rows (list): (config, mean_ms, iters_per_sec, speedup) tuples, the
            float reference first.
        warmup (int): untimed runs per configuration.
        iters (int): timed runs per configuration.
    """
    warmup: int
    iters: int
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if self.iters < 1:
            raise InputError("bench needs at least one timed iteration")
        if self.warmup < 0:
            raise InputError("warmup runs cannot be negative")

    def add(self, config, seconds):
        """Records a configuration's per-run timings."""
        mean_ms = 1000.0 * float(np.mean(seconds))
        reference = self.rows[0][1] if self.rows else mean_ms
        self.rows.append((config, mean_ms, 1000.0 / mean_ms if mean_ms else float("inf"),
                          reference / mean_ms if mean_ms else float("inf")))

    def write_csv(self, f):
        writer = csv.writer(f)
        writer.writerow(BENCH_COLUMNS)
        for config, mean_ms, iters_per_sec, speedup in self.rows:
            writer.writerow([config, "{:.4f}".format(mean_ms), "{:.2f}".format(iters_per_sec),
                             "{:.3f}".format(speedup)])

    def __str__(self):
        lines = ["{} warmup, {} timed runs".format(self.warmup, self.iters)]
        lines.extend("{:<14} {:>10.3f} ms {:>10.2f} it/s {:>6.2f}x".format(*row)
                     for row in self.rows)
        return "\n".join(lines)


def time_runs(function, inputs, warmup, iters):
    for _ in range(warmup):
        function(inputs)
    seconds = []
    for _ in range(iters):
        start = time.perf_counter()
        function(inputs)
        seconds.append(time.perf_counter() - start)
    return seconds


def bench(model, seq_len=128, warmup=5, iters=100, rng=None):
    """Times the float reference, the integer model and the integer model
    with float activations on one random input sequence.

    Returns:
        BenchReport: rows float, irnn_pwl and irnn_no_qact.
    """
    report = BenchReport(warmup, iters)
    rng = np.random.default_rng(rng)
    if seq_len < 1:
        raise InputError("bench needs a sequence of at least one step")
    if model.input_kind == "tokens":
        inputs = rng.integers(0, model.input_dim, seq_len)
    else:
        inputs = rng.standard_normal((seq_len, model.input_dim))
    float_model = model.float_model()
    configs = (("float", float_model.forward),
               ("irnn_pwl", model.run),
               ("irnn_no_qact", lambda xs: model.run(xs, float_activations=True)))
    for name, function in configs:
        report.add(name, time_runs(function, inputs, warmup, iters))
        logger.info("bench %s: %.3f ms", name, report.rows[-1][1])
    return report


def cmd_bench(args):
    model = _load(args.model, IntegerModel)
    report = bench(model, args.seq_len, args.warmup, args.iters, args.seed)
    print(report)
    if args.out:
        with open(args.out, 'w', newline='', encoding='utf-8') as f:
            report.write_csv(f)
    else:
        report.write_csv(sys.stdout)


def cmd_pwl(args):
    low, high = args.range
    in_qp = compute_qparams(low, high, args.bits)
    out_qp = output_qparams(args.function, in_qp)
    with open(args.out, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(PWL_COLUMNS)
        for pieces in args.pieces:
            table = build_pwl(args.function, in_qp, out_qp, pieces)
            error = max_abs_error(table)
            for row in dump_rows(table):
                writer.writerow((pieces,) + tuple(row) + (repr(error),))
            print("pieces={} max_abs_error={:.6g} pwl_bytes={} lut_bytes={}".format(
                pieces, error, table.memory_bytes(), table.lut_bytes()))


def build_parser():
    parser = _Parser(prog="intrnn", description="Integer-only recurrent network tools.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    init = commands.add_parser("init", help="write a random float model")
    init.add_argument("--out", required=True)
    init.add_argument("--layers", default="lstm",
                      help="comma separated kinds from {}".format(", ".join(STACKABLE)))
    init.add_argument("--vocab", type=int, default=32)
    init.add_argument("--embed", type=int, default=16)
    init.add_argument("--hidden", type=int, default=16)
    init.add_argument("--features", type=int, default=None,
                      help="frame width; makes a feature-input model")
    init.add_argument("--classes", type=int, default=None)
    init.add_argument("--m-att", type=int, default=8)
    init.add_argument("--scale", type=float, default=0.3)
    init.add_argument("--seed", type=int, default=0)
    init.set_defaults(func=cmd_init)

    calib = commands.add_parser("calibrate", help="gather stage ranges")
    calib.add_argument("--model", required=True)
    calib.add_argument("--data", required=True, nargs="+")
    calib.add_argument("--out", required=True)
    calib.add_argument("--features", action="store_true",
                       help="inputs are float32 frames instead of token ids")
    calib.add_argument("--cell-bits", type=int, choices=(8, 16), default=16)
    calib.add_argument("--gate-bits", type=int, choices=(8, 16), default=8)
    calib.set_defaults(func=cmd_calibrate)

    conv = commands.add_parser("convert", help="build an integer model")
    conv.add_argument("--model", required=True)
    conv.add_argument("--qparams", required=True)
    conv.add_argument("--out", required=True)
    conv.add_argument("--pieces", type=int, default=32)
    conv.add_argument("--exp-pieces", type=int, default=None)
    conv.add_argument("--cell-bits", type=int, choices=(8, 16), default=None,
                      help="defaults to the calibrated width")
    conv.add_argument("--gate-bits", type=int, choices=(8, 16), default=None)
    conv.set_defaults(func=cmd_convert)

    run = commands.add_parser("run", help="write integer logits")
    run.add_argument("--model", required=True)
    run.add_argument("--input", required=True, nargs="+")
    run.add_argument("--out", required=True)
    run.add_argument("--features", action="store_true")
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--float-activations", action="store_true",
                      help="evaluate nonlinearities in floating point")
    mode.add_argument("--fakequant", action="store_true",
                      help="run the exact fake-quantization oracle")
    run.set_defaults(func=cmd_run)

    ben = commands.add_parser("bench", help="time float and integer inference")
    ben.add_argument("--model", required=True)
    ben.add_argument("--seq-len", type=int, default=128)
    ben.add_argument("--warmup", type=int, default=5)
    ben.add_argument("--iters", type=int, default=100)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--out", default=None, help="CSV path, stdout by default")
    ben.set_defaults(func=cmd_bench)

    pwl = commands.add_parser("pwl", help="dump a PWL approximation")
    pwl.add_argument("--function", choices=("tanh", "sigmoid", "exp", "identity"),
                     default="tanh")
    pwl.add_argument("--range", type=float, nargs=2, default=(-4.0, 4.0),
                     metavar=("MIN", "MAX"))
    pwl.add_argument("--bits", type=int, choices=(8, 16), default=8)
    pwl.add_argument("--pieces", type=int, nargs="+", default=[32])
    pwl.add_argument("--out", required=True)
    pwl.set_defaults(func=cmd_pwl)
    return parser


def configure_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    """Entry point of the intrnn command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write("intrnn: {}\n".format(e))
        return EXIT_USAGE
    configure_logging(args.verbose)
    try:
        args.func(args)
    except IntRnnError as e:
        sys.stderr.write("intrnn: {}\n".format(e))
        return EXIT_INVALID
    except (IOError, OSError) as e:
        sys.stderr.write("intrnn: {}\n".format(e))
        return EXIT_IO
    return 0
