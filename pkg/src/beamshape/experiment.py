"""Configuration-driven experiment runner: channel -> precoding -> shaping ->
evaluation, emitting byte-reproducible CSV/JSON artifacts.

One JSON document describes one experiment.  Re-running an identical config
reproduces every CSV artifact byte for byte: all randomness is derived from
seeds in the config, rows are emitted in a fixed order, and floats are
serialized with 17 significant digits.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import channel as chanmod
from . import jsonio, linkeval, precoding, shaping
from .channel import mix_seed
from .errors import ConfigValidationError, NotComputedError, ShapingFailureError
from .linkeval import EvalConfig
from .qcqp import SolverConfig

METHOD_IDS = {name: i for i, name in enumerate(shaping.METHODS)}
CHANNEL_KINDS = ("sampled", "fixture", "ofdm")

# namespace tags for derived seeds
_SEED_CHANNEL, _SEED_SOLVER, _SEED_EVAL, _SEED_CSI = 101, 202, 303, 404


def _near_square(n: int) -> tuple:
    w = int(math.isqrt(n))
    while n % w:
        w -= 1
    return (w, n // w)


@dataclass(frozen=True)
class SystemSpec:
    n_t: int
    n_r: int
    n_rf: int
    n_bits: int
    l_paths: int
    tx_geometry: tuple | None = None
    rx_geometry: tuple | None = None
    spacing: float = 0.5

    def tx(self) -> chanmod.ArrayGeometry:
        w1, w2 = self.tx_geometry or _near_square(self.n_t)
        return chanmod.ArrayGeometry(w1, w2, self.spacing)

    def rx(self) -> chanmod.ArrayGeometry:
        w1, w2 = self.rx_geometry or _near_square(self.n_r)
        return chanmod.ArrayGeometry(w1, w2, self.spacing)


@dataclass(frozen=True)
class ChannelSourceSpec:
    kind: str
    seed: int | None = None
    count: int = 1
    path: str | None = None
    k_carriers: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemSpec
    structure: str
    methods: tuple
    channel_source: ChannelSourceSpec
    solver: SolverConfig
    eval: EvalConfig | None = None
    candidate_cap: int = shaping.DEFAULT_CANDIDATE_CAP
    criterion: str = "mmed"
    criterion_snr_db: float | None = None
    receiver_n_rf_r: int | None = None
    seed: int = 0
    out_dir: str = "out"


@dataclass
class MethodRow:
    method: str
    channel_id: int
    d_min: float
    allocation: tuple
    iterations: int
    wall_time: float
    failed: bool = False


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    master_seed: int
    versions: dict
    method_rows: list
    ser_rows: list  # (method, snr_db, trials, errors, ser, union_bound)
    cdf_rows: list  # (method, channel_id, d_min)
    failures: list


# ---------------------------------------------------------------------------
# Config parsing / validation


def _check(violations, ok, message):
    if not ok:
        violations.append(message)
    return ok


def parse_config(doc: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Build a validated ExperimentConfig; collects every violation at once."""
    violations: list[str] = []
    sys_doc = doc.get("system") or {}
    for key in ("n_t", "n_r", "n_rf", "n_bits", "l_paths"):
        _check(violations, isinstance(sys_doc.get(key), int), f"system.{key}: integer required")
    system = None
    if not violations:
        system = SystemSpec(
            n_t=sys_doc["n_t"],
            n_r=sys_doc["n_r"],
            n_rf=sys_doc["n_rf"],
            n_bits=sys_doc["n_bits"],
            l_paths=sys_doc["l_paths"],
            tx_geometry=tuple(sys_doc["tx_geometry"]) if sys_doc.get("tx_geometry") else None,
            rx_geometry=tuple(sys_doc["rx_geometry"]) if sys_doc.get("rx_geometry") else None,
            spacing=float(sys_doc.get("spacing", 0.5)),
        )
        _check(violations, system.n_bits >= 1, "system.n_bits: must be >= 1")
        _check(violations, system.l_paths >= 1, "system.l_paths: must be >= 1")
        _check(violations, system.n_rf >= 1, "system.n_rf: must be >= 1")
        tx = system.tx_geometry or _near_square(system.n_t)
        rx = system.rx_geometry or _near_square(system.n_r)
        _check(violations, tx[0] * tx[1] == system.n_t, "system.tx_geometry: w1*w2 must equal n_t")
        _check(violations, rx[0] * rx[1] == system.n_r, "system.rx_geometry: w1*w2 must equal n_r")

    structure = doc.get("structure", precoding.FULLY_CONNECTED)
    structure = {"fch": precoding.FULLY_CONNECTED, "pch": precoding.PARTIALLY_CONNECTED}.get(
        structure, structure
    )
    _check(violations, structure in precoding.STRUCTURES, f"structure: unknown {structure!r}")

    methods = tuple(doc.get("methods") or ())
    _check(violations, len(methods) > 0, "methods: must be nonempty")
    for m in methods:
        _check(violations, m in shaping.METHODS, f"methods: unknown method {m!r}")

    criterion = doc.get("criterion", "mmed")
    _check(violations, criterion in shaping.CRITERIA, f"criterion: unknown {criterion!r}")
    criterion_snr_db = doc.get("criterion_snr_db")
    if criterion != "mmed":
        _check(violations, criterion_snr_db is not None, "criterion_snr_db: required for mser/mmi")

    seed = int(seed_override if seed_override is not None else doc.get("seed", 0))

    src_doc = doc.get("channel_source") or {}
    kind = src_doc.get("kind")
    _check(violations, kind in CHANNEL_KINDS, f"channel_source.kind: unknown {kind!r}")
    source = ChannelSourceSpec(
        kind=kind or "sampled",
        seed=src_doc.get("seed", mix_seed(seed, _SEED_CHANNEL)),
        count=int(src_doc.get("count", 1)),
        path=src_doc.get("path"),
        k_carriers=src_doc.get("k_carriers"),
    )
    if kind == "fixture":
        _check(
            violations,
            source.path is not None and Path(source.path).is_file(),
            f"channel_source.path: fixture file not found ({source.path})",
        )
    if kind == "ofdm":
        _check(violations, isinstance(source.k_carriers, int) and source.k_carriers >= 1,
               "channel_source.k_carriers: positive integer required")
    if kind == "sampled":
        _check(violations, source.count >= 1, "channel_source.count: must be >= 1")

    solver_doc = doc.get("solver") or {}
    try:
        solver = SolverConfig(
            max_iters=int(solver_doc.get("max_iters", 5000)),
            tol=float(solver_doc.get("tol", 1e-6)),
            restarts=int(solver_doc.get("restarts", 8)),
            seed=int(solver_doc.get("seed", mix_seed(seed, _SEED_SOLVER))),
            smoothing_schedule=tuple(solver_doc.get("smoothing_schedule", (10.0, 3.0, 1.0, 0.3, 0.1))),
        )
    except ValueError as exc:
        violations.append(f"solver: {exc}")
        solver = SolverConfig()

    eval_cfg = None
    if doc.get("eval") is not None:
        eval_doc = doc["eval"]
        try:
            eval_cfg = EvalConfig(
                snr_db_list=tuple(eval_doc.get("snr_db_list", ())),
                trials=int(eval_doc.get("trials", 1000)),
                seed=int(eval_doc.get("seed", mix_seed(seed, _SEED_EVAL))),
                dac_bits=eval_doc.get("dac_bits"),
                csi_eta=eval_doc.get("csi_eta"),
            )
        except ValueError as exc:
            violations.append(f"eval: {exc}")

    candidate_cap = int(doc.get("candidate_cap", shaping.DEFAULT_CANDIDATE_CAP))
    _check(violations, candidate_cap >= 1, "candidate_cap: must be >= 1")

    receiver = doc.get("receiver") or {}
    receiver_n_rf_r = receiver.get("n_rf_r") if isinstance(receiver, dict) else None
    if receiver_n_rf_r is not None and system is not None:
        _check(violations, 1 <= receiver_n_rf_r <= system.n_r,
               "receiver.n_rf_r: outside [1, n_r]")
        _check(violations, kind != "ofdm", "receiver: not supported with ofdm channels")

    # ubmss feasibility is structural: the generic channel rank is
    # min(n_r, n_t, l_paths), so K and K_hat are known up front.
    if system is not None and "ubmss" in methods and not violations:
        m = min(system.n_r, system.n_t, system.l_paths)
        if system.n_rf <= m:
            k = math.comb(m, system.n_rf)
            k_hat = 2 ** int(math.floor(math.log2(k))) if k >= 1 else 0
            n = 2**system.n_bits
            _check(violations, k_hat >= 1 and n % k_hat == 0,
                   f"methods: ubmss needs 2^floor(log2 K)={k_hat} to divide N={n}")
        else:
            violations.append(f"system.n_rf: exceeds generic channel rank {m}")

    if violations:
        raise ConfigValidationError(violations)
    return ExperimentConfig(
        system=system,
        structure=structure,
        methods=methods,
        channel_source=source,
        solver=solver,
        eval=eval_cfg,
        candidate_cap=candidate_cap,
        criterion=criterion,
        criterion_snr_db=criterion_snr_db,
        receiver_n_rf_r=receiver_n_rf_r,
        seed=seed,
        out_dir=doc.get("out_dir", "out"),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "system": {
            "n_t": cfg.system.n_t,
            "n_r": cfg.system.n_r,
            "n_rf": cfg.system.n_rf,
            "n_bits": cfg.system.n_bits,
            "l_paths": cfg.system.l_paths,
            "tx_geometry": list(cfg.system.tx_geometry) if cfg.system.tx_geometry else None,
            "rx_geometry": list(cfg.system.rx_geometry) if cfg.system.rx_geometry else None,
            "spacing": cfg.system.spacing,
        },
        "structure": cfg.structure,
        "methods": list(cfg.methods),
        "criterion": cfg.criterion,
        "criterion_snr_db": cfg.criterion_snr_db,
        "channel_source": {
            "kind": cfg.channel_source.kind,
            "seed": cfg.channel_source.seed,
            "count": cfg.channel_source.count,
            "path": cfg.channel_source.path,
            "k_carriers": cfg.channel_source.k_carriers,
        },
        "solver": {
            "max_iters": cfg.solver.max_iters,
            "tol": cfg.solver.tol,
            "restarts": cfg.solver.restarts,
            "seed": cfg.solver.seed,
            "smoothing_schedule": list(cfg.solver.smoothing_schedule),
        },
        "eval": None,
        "candidate_cap": cfg.candidate_cap,
        "receiver": {"n_rf_r": cfg.receiver_n_rf_r} if cfg.receiver_n_rf_r else None,
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
    }
    if cfg.eval is not None:
        doc["eval"] = {
            "snr_db_list": list(cfg.eval.snr_db_list),
            "trials": cfg.eval.trials,
            "seed": cfg.eval.seed,
            "dac_bits": cfg.eval.dac_bits,
            "csi_eta": cfg.eval.csi_eta,
        }
    return doc


def config_hash(cfg: ExperimentConfig) -> str:
    doc = config_to_dict(cfg)
    doc.pop("out_dir", None)
    canon = json.dumps(doc, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Channel preparation


def _load_channels(cfg: ExperimentConfig) -> list:
    """List of (channel_id, ChannelRealization for design/eval)."""
    src = cfg.channel_source
    sys_ = cfg.system
    if src.kind == "sampled":
        out = []
        for i in range(src.count):
            paths = chanmod.sample_paths(mix_seed(src.seed, i), sys_.l_paths)
            out.append((i, chanmod.assemble_channel(paths, sys_.tx(), sys_.rx())))
        return out
    if src.kind == "fixture":
        return [(0, chanmod.load_channel(src.path))]
    paths = chanmod.sample_paths(src.seed, sys_.l_paths)
    ofdm = chanmod.assemble_ofdm_channel(paths, sys_.tx(), sys_.rx(), src.k_carriers)
    return [(k, chanmod.ChannelRealization(subcarriers=(ofdm.subcarriers[k],), paths=paths))
            for k in range(ofdm.n_subcarriers)]


def _dictionary_for(cfg: ExperimentConfig, chan) -> np.ndarray | None:
    if cfg.structure != precoding.FULLY_CONNECTED:
        return None
    extra = None
    if chan.paths is not None:
        extra = list(zip(chan.paths.aod_elevation, chan.paths.aod_azimuth))
    return precoding.response_dictionary(cfg.system.tx(), extra_angles=extra)


def build_analog_codebook(cfg: ExperimentConfig, chan) -> precoding.AnalogCodebook:
    sub = precoding.enumerate_subspaces(chan, cfg.system.n_rf)
    return precoding.factorize_subspaces(sub, cfg.structure, _dictionary_for(cfg, chan))


def build_shared_analog_codebooks(cfg: ExperimentConfig, channels: list) -> list:
    """Per-carrier codebooks sharing one analog precoder per beamspace."""
    subs = [precoding.enumerate_subspaces(chan, cfg.system.n_rf) for _, chan in channels]
    k_count = len(subs[0])
    if any(len(s) != k_count for s in subs):
        raise ShapingFailureError("subcarrier ranks disagree; cannot share analog precoders")
    dictionary = _dictionary_for(cfg, channels[0][1])
    shared, per_carrier_bb, _ = [], [[] for _ in channels], []
    for k in range(k_count):
        bases = [s.bases[k] for s in subs]
        f_rf, f_bbs, _resid = precoding.broadband_shared_analog(bases, cfg.structure, dictionary)
        shared.append(f_rf)
        for c, f_bb in enumerate(f_bbs):
            per_carrier_bb[c].append(f_bb)
    return [
        precoding.AnalogCodebook(
            analog=tuple(shared),
            structure=cfg.structure,
            companion_digital=tuple(per_carrier_bb[c]),
            residuals=tuple(0.0 for _ in shared),
        )
        for c in range(len(channels))
    ]


# ---------------------------------------------------------------------------
# Shaping and evaluation


def shape_method(
    cfg: ExperimentConfig, chan, analog, method: str, *, seed_keys=(), warm_vectors=None
) -> shaping.ShapingCodebook:
    solver = replace(cfg.solver, seed=mix_seed(cfg.solver.seed, METHOD_IDS[method], *seed_keys))
    kwargs = {}
    if cfg.criterion != "mmed":
        kwargs = {
            "criterion": cfg.criterion,
            "snr": linkeval.snr_db_to_linear(cfg.criterion_snr_db),
        }
    n_bits = cfg.system.n_bits
    if method == "fdss":
        return shaping.fdss(chan, n_bits, solver, warm_vectors=warm_vectors, **kwargs)
    if method == "joss":
        return shaping.joss(chan, analog, n_bits, solver, **kwargs)
    if method in ("fpss", "dpss"):
        allocations = shaping.enumerate_allocations(2**n_bits, len(analog), cfg.candidate_cap)
        candidates = shaping.build_candidate_sets(allocations, analog.n_rf)
        fn = shaping.fpss if method == "fpss" else shaping.dpss
        return fn(chan, analog, n_bits, candidates, solver, **kwargs)
    return shaping.baseline(chan, analog, n_bits, method, candidate_cap=cfg.candidate_cap)


def _design_channel(cfg: ExperimentConfig, chan, channel_id: int, snr_idx: int | None):
    """Channel used for shaping; adds the CSI error when configured."""
    if cfg.eval is None or not cfg.eval.csi_eta:
        return chan
    snr_idx = 0 if snr_idx is None else snr_idx
    rho = linkeval.snr_db_to_linear(cfg.eval.snr_db_list[snr_idx])
    noise_var = 1.0 / rho
    seed = mix_seed(cfg.eval.seed, _SEED_CSI, channel_id, snr_idx)
    return chanmod.inject_csi_error(chan, cfg.eval.csi_eta, noise_var, seed)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Execute the full pipeline and (optionally) write all artifacts."""
    channels = _load_channels(cfg)
    if cfg.channel_source.kind == "ofdm":
        codebooks = build_shared_analog_codebooks(cfg, channels)
        analog_by_channel = dict(zip([cid for cid, _ in channels], codebooks))
    else:
        analog_by_channel = {
            cid: build_analog_codebook(cfg, chan) for cid, chan in channels
        }

    if cfg.receiver_n_rf_r is not None:
        effective = {}
        for cid, chan in channels:
            rx_dict = precoding.response_dictionary(cfg.system.rx())
            _, eff = precoding.design_hybrid_combiner(chan, cfg.receiver_n_rf_r, rx_dict)
            effective[cid] = chanmod.ChannelRealization(subcarriers=(eff,), paths=chan.paths)
        channels = [(cid, effective[cid]) for cid, _ in channels]
        analog_by_channel = {cid: build_analog_codebook(cfg, chan) for cid, chan in channels}

    method_rows: list[MethodRow] = []
    ser_acc: dict = {}
    cdf_rows: list = []
    failures: list = []

    # fdss runs last so it can seed its multi-start with the best hybrid
    # codebook of the same channel (any hybrid codebook is fully-digital
    # feasible, which keeps the bound above the constrained methods).
    ordered_methods = sorted(cfg.methods, key=lambda m: (m == "fdss", METHOD_IDS[m]))
    best_hybrid: dict = {}

    for method in ordered_methods:
        for cid, chan in channels:
            analog = analog_by_channel[cid]
            if cfg.eval is not None and cfg.eval.csi_eta:
                # imperfect-CSI protocol: one design per SNR point
                self_rows = _run_csi_protocol(cfg, chan, analog, method, cid, ser_acc, failures)
                method_rows.extend(self_rows)
                continue
            t0 = time.perf_counter()
            warm = best_hybrid.get(cid)[1] if (method == "fdss" and cid in best_hybrid) else None
            try:
                book = shape_method(cfg, chan, analog, method, seed_keys=(cid,), warm_vectors=warm)
            except ShapingFailureError as exc:
                failures.append((method, cid, str(exc)))
                method_rows.append(MethodRow(method, cid, float("nan"), (), 0, 0.0, failed=True))
                continue
            if method != "fdss":
                prev = best_hybrid.get(cid)
                if prev is None or book.achieved_d_min > prev[0]:
                    best_hybrid[cid] = (book.achieved_d_min, book.vectors)
            wall = time.perf_counter() - t0
            method_rows.append(
                MethodRow(method, cid, book.achieved_d_min, book.allocation_sizes,
                          book.solver_iterations, wall)
            )
            cdf_rows.append((method, cid, book.achieved_d_min))
            if cfg.eval is not None:
                if cfg.eval.dac_bits:
                    book = linkeval.quantize_dac(book, cfg.eval.dac_bits)
                ecfg = replace(cfg.eval, seed=mix_seed(cfg.eval.seed, cid, METHOD_IDS[method]))
                curve = linkeval.monte_carlo_ser(book, chan.h, ecfg)
                for s_idx, (snr_db, _, trials, errs) in enumerate(curve.points):
                    bound = linkeval.ser_union_bound(
                        book, chan.h, linkeval.snr_db_to_linear(snr_db)
                    )
                    key = (method, snr_db)
                    agg = ser_acc.setdefault(key, [0, 0, 0.0, 0])
                    agg[0] += trials
                    agg[1] += errs
                    agg[2] += bound
                    agg[3] += 1

    method_rows.sort(key=lambda r: (METHOD_IDS[r.method], r.channel_id))
    cdf_rows.sort(key=lambda r: (METHOD_IDS[r[0]], r[2], r[1]))
    ser_rows = []
    for method in cfg.methods:
        snrs = sorted({snr for (m, snr) in ser_acc if m == method})
        for snr_db in snrs:
            trials, errs, bound_sum, n_ch = ser_acc[(method, snr_db)]
            ser_rows.append(
                (method, snr_db, trials, errs, errs / trials, bound_sum / n_ch)
            )

    report = ExperimentReport(
        config=config_to_dict(cfg),
        config_hash=config_hash(cfg),
        master_seed=cfg.seed,
        versions={"beamshape": __version__, "numpy": np.__version__},
        method_rows=method_rows,
        ser_rows=ser_rows,
        cdf_rows=cdf_rows,
        failures=failures,
    )
    if write:
        write_artifacts(report, Path(cfg.out_dir))
    return report


def _run_csi_protocol(cfg, chan, analog, method, cid, ser_acc, failures):
    """Design on the impaired channel per SNR point, evaluate on the true one."""
    rows = []
    for s_idx, snr_db in enumerate(cfg.eval.snr_db_list):
        design_chan = _design_channel(cfg, chan, cid, s_idx)
        design_analog = build_analog_codebook(cfg, design_chan)
        t0 = time.perf_counter()
        try:
            book = shape_method(cfg, design_chan, design_analog, method,
                                seed_keys=(cid, s_idx))
        except ShapingFailureError as exc:
            failures.append((method, cid, str(exc)))
            rows.append(MethodRow(method, cid, float("nan"), (), 0, 0.0, failed=True))
            continue
        wall = time.perf_counter() - t0
        d_true = shaping.min_distance(book, chan.h)
        rows.append(MethodRow(method, cid, d_true, book.allocation_sizes,
                              book.solver_iterations, wall))
        if cfg.eval.dac_bits:
            book = linkeval.quantize_dac(book, cfg.eval.dac_bits)
        ecfg = EvalConfig(snr_db_list=(snr_db,), trials=cfg.eval.trials,
                          seed=mix_seed(cfg.eval.seed, cid, METHOD_IDS[method], s_idx))
        curve = linkeval.monte_carlo_ser(book, chan.h, ecfg)
        (snr_db_out, _, trials, errs) = curve.points[0]
        bound = linkeval.ser_union_bound(book, chan.h, linkeval.snr_db_to_linear(snr_db_out))
        agg = ser_acc.setdefault((method, snr_db_out), [0, 0, 0.0, 0])
        agg[0] += trials
        agg[1] += errs
        agg[2] += bound
        agg[3] += 1
    return rows


# ---------------------------------------------------------------------------
# Artifacts


def emit_plotdata(report: ExperimentReport, kind: str, out_dir) -> list:
    """Write the CSV behind one figure family; returns the file list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "ser":
        if not report.ser_rows:
            raise NotComputedError("no SER table in this report")
        path = out_dir / "ser.csv"
        jsonio.write_csv(
            path,
            ["method", "snr_db", "trials", "errors", "ser", "union_bound"],
            [list(r) for r in report.ser_rows],
        )
        return [path]
    if kind == "cdf":
        if not report.cdf_rows:
            raise NotComputedError("no CDF table in this report")
        path = out_dir / "cdf.csv"
        jsonio.write_csv(path, ["method", "channel_id", "d_min"], [list(r) for r in report.cdf_rows])
        return [path]
    if kind == "dmin_bar":
        rows = {}
        for r in report.method_rows:
            if not r.failed:
                rows.setdefault(r.method, []).append(r.d_min)
        if not rows:
            raise NotComputedError("no d_min table in this report")
        path = out_dir / "dmin_bar.csv"
        table = [
            [m, float(np.median(v)), float(np.mean(v)), len(v)]
            for m, v in sorted(rows.items(), key=lambda kv: METHOD_IDS[kv[0]])
        ]
        jsonio.write_csv(path, ["method", "median_d_min", "mean_d_min", "n_channels"], table)
        return [path]
    raise NotComputedError(f"unknown plot kind {kind!r}")


def write_artifacts(report: ExperimentReport, out_dir: Path) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    doc = {
        "config": report.config,
        "config_hash": report.config_hash,
        "master_seed": report.master_seed,
        "versions": report.versions,
        "methods": [
            {
                "method": r.method,
                "channel_id": r.channel_id,
                "d_min": r.d_min,
                "allocation": list(r.allocation),
                "iterations": r.iterations,
                "wall_time": r.wall_time,
                "failed": r.failed,
            }
            for r in report.method_rows
        ],
        "failures": [list(f) for f in report.failures],
    }
    path = out_dir / "report.json"
    jsonio.dump_json(doc, path)
    written.append(path)
    for kind in ("ser", "cdf", "dmin_bar"):
        try:
            written.extend(emit_plotdata(report, kind, out_dir))
        except NotComputedError:
            pass
    return written
