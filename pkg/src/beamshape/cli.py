"""Command-line interface.

Subcommands: channel (generate/dump fixtures), shape (codebooks only),
evaluate (codebook + channel -> SER), run (full pipeline), sweep (vary one
config field over a list).  Exit codes: 0 success, 2 config validation
failure, 3 shaping failure for every method, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from . import channel as chanmod
from . import experiment, jsonio, linkeval, shaping
from .errors import ConfigValidationError, ShapingFailureError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SHAPING = 3
EXIT_IO = 4


def _parse_geometry(text: str) -> tuple:
    w1, w2 = text.lower().split("x")
    return int(w1), int(w2)


def _cmd_channel(args) -> int:
    paths = chanmod.sample_paths(args.seed, args.paths)
    tx = chanmod.ArrayGeometry(*_parse_geometry(args.tx), args.spacing)
    rx = chanmod.ArrayGeometry(*_parse_geometry(args.rx), args.spacing)
    if args.carriers > 1:
        chan = chanmod.assemble_ofdm_channel(paths, tx, rx, args.carriers)
    else:
        chan = chanmod.assemble_channel(paths, tx, rx)
    chan = chanmod.ChannelRealization(
        subcarriers=chan.subcarriers, seed=args.seed, paths=paths
    )
    chanmod.save_channel(chan, args.out)
    print(f"wrote {args.out} ({chan.n_r}x{chan.n_t}, {chan.n_subcarriers} carrier(s))")
    return EXIT_OK


def _load_config(args) -> experiment.ExperimentConfig:
    doc = jsonio.load_json(args.config)
    if args.out_dir:
        doc["out_dir"] = args.out_dir
    return experiment.parse_config(doc, seed_override=args.seed)


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    report = experiment.run_experiment(cfg)
    ok = [r for r in report.method_rows if not r.failed]
    if not ok:
        print("all shaping methods failed", file=sys.stderr)
        return EXIT_SHAPING
    print(f"report written to {cfg.out_dir} (hash {report.config_hash[:12]})")
    return EXIT_OK


def _cmd_shape(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    channels = experiment._load_channels(cfg)
    any_ok = False
    rows = []
    for method in cfg.methods:
        for cid, chan in channels:
            analog = experiment.build_analog_codebook(cfg, chan)
            try:
                book = experiment.shape_method(cfg, chan, analog, method, seed_keys=(cid,))
            except ShapingFailureError as exc:
                print(f"{method} ch{cid}: failed ({exc})", file=sys.stderr)
                continue
            any_ok = True
            path = out_dir / f"codebook_{method}_ch{cid}.json"
            shaping.save_codebook(book, path)
            rows.append([method, cid, book.achieved_d_min])
            print(f"{method} ch{cid}: d_min {book.achieved_d_min:.6f} -> {path}")
    if not any_ok:
        return EXIT_SHAPING
    jsonio.write_csv(out_dir / "dmin.csv", ["method", "channel_id", "d_min"], rows)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    book = shaping.load_codebook(args.codebook)
    chan = chanmod.load_channel(args.channel)
    cfg = linkeval.EvalConfig(
        snr_db_list=tuple(args.snr), trials=args.trials, seed=args.seed or 0
    )
    curve = linkeval.monte_carlo_ser(book, chan.h, cfg)
    rows = []
    for snr_db, ser, trials, errors in curve.points:
        bound = linkeval.ser_union_bound(book, chan.h, linkeval.snr_db_to_linear(snr_db))
        rows.append([book.method, snr_db, trials, errors, float(ser), bound])
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "ser.csv"
    jsonio.write_csv(path, ["method", "snr_db", "trials", "errors", "ser", "union_bound"], rows)
    print(f"wrote {path}")
    return EXIT_OK


def _set_field(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _cmd_sweep(args) -> int:
    base = jsonio.load_json(args.config)
    values = json.loads(args.values)
    base_out = Path(args.out_dir or base.get("out_dir", "out"))
    worst = EXIT_OK
    for value in values:
        doc = copy.deepcopy(base)
        _set_field(doc, args.field, value)
        doc["out_dir"] = str(base_out / f"{args.field.replace('.', '_')}={value}")
        cfg = experiment.parse_config(doc, seed_override=args.seed)
        report = experiment.run_experiment(cfg)
        ok = [r for r in report.method_rows if not r.failed]
        print(f"{args.field}={value}: {'ok' if ok else 'ALL FAILED'} -> {doc['out_dir']}")
        if not ok:
            worst = EXIT_SHAPING
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamshape", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel", help="generate a channel fixture file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paths", type=int, default=3)
    p.add_argument("--tx", default="4x4", help="transmit UPA as W1xW2")
    p.add_argument("--rx", default="2x2", help="receive UPA as W1xW2")
    p.add_argument("--spacing", type=float, default=0.5)
    p.add_argument("--carriers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_channel)

    for name, fn in (("run", _cmd_run), ("shape", _cmd_shape)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="evaluate a saved codebook on a saved channel")
    p.add_argument("--codebook", required=True)
    p.add_argument("--channel", required=True)
    p.add_argument("--snr", type=float, nargs="+", required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="re-run a config varying one field")
    p.add_argument("--config", required=True)
    p.add_argument("--field", required=True, help="dotted config path, e.g. eval.dac_bits")
    p.add_argument("--values", required=True, help="JSON list of values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except ShapingFailureError as exc:
        print(f"shaping failure: {exc}", file=sys.stderr)
        return EXIT_SHAPING
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
