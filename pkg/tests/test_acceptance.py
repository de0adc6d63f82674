"""Acceptance gate: one test per criterion, run with `pytest -v`.

Each test prints the measured quantities it gates on, so a verbose run
shows one pass/fail line per criterion plus the numbers behind it.
"""

import time

import numpy as np
import pytest

from beamshape import channel as ch
from beamshape import experiment as ex
from beamshape import linkeval as le
from beamshape import precoding as pc
from beamshape import qcqp
from beamshape import shaping as sh

from test_qcqp import _polar_grid_min_power, _rand_psd, _random_instance


def _report(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"CRITERION {criterion}: {status} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def test_criterion_01_reformulation_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for layout in ("joss", "fpss", "dpss", "fdss"):
        for _ in range(200):
            n = int(2 ** rng.integers(1, 4))  # N in {2, 4, 8}
            n_t = int(rng.integers(2, 9))
            n_r = int(rng.integers(1, 5))
            n_rf = int(rng.integers(1, 3))
            inst, vectors_of, h = _random_instance(
                layout, rng, n=n, n_t=n_t, n_r=n_r, n_rf=n_rf
            )
            z = rng.standard_normal(inst.dim) + 1j * rng.standard_normal(inst.dim)
            x = vectors_of(z)
            scale = np.linalg.norm(h) ** 2 * np.linalg.norm(z) ** 2
            for p, (i, j) in enumerate(inst.pair_index):
                direct = np.linalg.norm(h @ (x[i] - x[j])) ** 2
                quad = np.real(np.vdot(z, inst.forms[p] @ z))
                worst = max(worst, abs(direct - quad) / scale)
    elapsed = time.perf_counter() - t0
    _report(
        1,
        worst <= 1e-9 and elapsed < 10,
        f"reformulation worst relative error {worst:.2e} over 4x200 instances "
        f"({elapsed:.1f}s < 10s)",
    )


def test_criterion_02_trace_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        um = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        vm = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        lhs = np.trace(np.diag(u) @ um @ np.diag(v) @ vm.conj().T)
        rhs = u @ (um * vm.conj()) @ v
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    elapsed = time.perf_counter() - t0
    _report(
        2,
        worst <= 1e-10 and elapsed < 1,
        f"trace identity worst relative error {worst:.2e} over 1000 draws ({elapsed:.2f}s < 1s)",
    )


def test_criterion_03_solver_sanity():
    t0 = time.perf_counter()
    inst = qcqp.build_fdss_forms(np.array([[1.0 + 0j]]), 2)
    cfg = qcqp.SolverConfig(seed=3)
    p1 = qcqp.solve_min_power(inst, 1.0, cfg).power
    p2 = qcqp.solve_min_power(inst, 2.0, cfg).power
    scalar_ok = abs(p1 - 0.5) <= 1e-6 and abs(p2 - 2.0) <= 1e-6

    cfg2 = qcqp.SolverConfig(seed=0, restarts=8)
    hits = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        forms = np.array([_rand_psd(2, rng), _rand_psd(2, rng)])
        small = qcqp.QcqpInstance(
            forms=forms, dim=2, layout="fdss", pair_index=((0, 1), (0, 2))
        )
        res = qcqp.solve_min_power(small, 1.0, cfg2)
        oracle = _polar_grid_min_power(forms)
        hits += abs(res.power - oracle) <= 0.02 * oracle
    elapsed = time.perf_counter() - t0
    _report(
        3,
        scalar_ok and hits >= 95 and elapsed < 30,
        f"scalar powers ({p1:.6f}, {p2:.6f}), grid-oracle hits {hits}/100 "
        f"({elapsed:.1f}s < 30s)",
    )


def test_criterion_04_fdss_closed_form():
    t0 = time.perf_counter()
    cfg = qcqp.SolverConfig(seed=0, restarts=4, tol=1e-9)
    ok = 0
    for trial in range(20):
        paths = ch.sample_paths(200 + trial, 3)
        chan = ch.assemble_channel(paths, ch.ArrayGeometry(2, 2), ch.ArrayGeometry(2, 2))
        book = sh.fdss(chan, 1, cfg)
        s1 = chan.svd()[1][0]
        anti = np.linalg.norm(book.vectors[0] + book.vectors[1])
        anti_ok = anti <= 1e-3 * np.linalg.norm(book.vectors[0])
        d_ok = abs(book.achieved_d_min - 2 * s1) <= 0.01 * 2 * s1
        ok += d_ok and anti_ok
    elapsed = time.perf_counter() - t0
    _report(
        4,
        ok == 20 and elapsed < 30,
        f"two-codeword closed form matched on {ok}/20 channels ({elapsed:.1f}s < 30s)",
    )


def test_criterion_05_constant_channel(constant_channel):
    t0 = time.perf_counter()
    chan = constant_channel
    sub = pc.enumerate_subspaces(chan, 2)
    k = len(sub)
    cfg = qcqp.SolverConfig(seed=11, restarts=8)
    allocs = sh.enumerate_allocations(8, k, 64)
    cands = sh.build_candidate_sets(allocs, 2)
    dic = pc.response_dictionary(ch.ArrayGeometry(2, 2))

    results = {}
    for tag, mode, dictionary in (
        ("fch", pc.FULLY_CONNECTED, dic),
        ("pch", pc.PARTIALLY_CONNECTED, None),
    ):
        analog = pc.factorize_subspaces(sub, mode, dictionary)
        results[tag] = {
            "joss": sh.joss(chan, analog, 3, cfg).achieved_d_min,
            "fpss": sh.fpss(chan, analog, 3, cands, cfg).achieved_d_min,
            "dpss": sh.dpss(chan, analog, 3, cands, cfg).achieved_d_min,
        }
    best_hybrid_d = max(max(r.values()) for r in results.values())
    # the fully-digital bound is seeded with the strongest hybrid codebook,
    # which is itself fully-digital feasible
    analog_fch = pc.factorize_subspaces(sub, pc.FULLY_CONNECTED, dic)
    best_book = max(
        (sh.joss(chan, analog_fch, 3, cfg), sh.fpss(chan, analog_fch, 3, cands, cfg)),
        key=lambda b: b.achieved_d_min,
    )
    d_fdss = sh.fdss(
        chan, 3, qcqp.SolverConfig(seed=11, restarts=16), warm_vectors=best_book.vectors
    ).achieved_d_min

    fch = results["fch"]
    checks = {
        "joss_near_fdss": abs(fch["joss"] - d_fdss) <= 0.05 * d_fdss,
        "fpss_near_fdss": abs(fch["fpss"] - d_fdss) <= 0.05 * d_fdss,
        "dpss_gap": 0.80 * fch["joss"] <= fch["dpss"] <= 0.95 * fch["joss"],
        "fdss_is_bound": d_fdss >= best_hybrid_d * (1 - 1e-9),
    }
    for m in ("joss", "fpss", "dpss"):
        lo, hi = sorted((results["fch"][m], results["pch"][m]))
        checks[f"{m}_structures_close"] = (hi - lo) <= 0.05 * hi
    elapsed = time.perf_counter() - t0
    _report(
        5,
        all(checks.values()) and elapsed < 300,
        f"fdss {d_fdss:.4f} fch {fch} pch {results['pch']} "
        f"checks {checks} ({elapsed:.0f}s < 300s)",
    )


def test_criterion_06_ensemble_ordering(ensemble_1642):
    t0 = time.perf_counter()
    methods = ("joss", "fpss", "dpss", "amss", "ubmss")
    d = {m: np.array([e["books"][m].achieved_d_min for e in ensemble_1642]) for m in methods}
    medians = [float(np.median(d[m])) for m in methods]
    order_ok = all(a >= b for a, b in zip(medians, medians[1:]))

    dominance_ok = True
    for e in ensemble_1642:
        best_unref = max(
            sh._normalized_d_min(
                sh._unrefined_vectors(list(e["analog"].analog), c)[0], e["channel"].h, 1.0
            )
            for c in e["candidates"]
        )
        dominance_ok &= e["books"]["fpss"].achieved_d_min >= best_unref
        dominance_ok &= e["books"]["dpss"].achieved_d_min >= best_unref
    elapsed = time.perf_counter() - t0
    _report(
        6,
        order_ok and dominance_ok and elapsed < 1800,
        f"median d_min {dict(zip(methods, np.round(medians, 4)))}, "
        f"refinement dominance on all 50 channels: {dominance_ok} ({elapsed:.0f}s < 1800s)",
    )


def test_criterion_07_ser_consistency(ensemble_1642):
    t0 = time.perf_counter()
    snrs = (0.0, 5.0, 10.0, 15.0, 20.0)
    bound_ok = True
    for e in ensemble_1642[:5]:
        for m in ("joss", "ubmss"):
            book = e["books"][m]
            cfg = le.EvalConfig(snr_db_list=snrs, trials=10000, seed=7)
            curve = le.monte_carlo_ser(book, e["channel"].h, cfg)
            for snr_db, ser, trials, _ in curve.points:
                bound = le.ser_union_bound(book, e["channel"].h, le.snr_db_to_linear(snr_db))
                sigma = np.sqrt(max(ser * (1 - ser), 1e-12) / trials)
                bound_ok &= ser <= bound + 3 * sigma

    wins = 0
    for i, e in enumerate(ensemble_1642):
        cfg = le.EvalConfig(snr_db_list=(20.0,), trials=10000, seed=ch.mix_seed(13, i))
        s_joss = le.monte_carlo_ser(e["books"]["joss"], e["channel"].h, cfg).points[0][1]
        s_ubm = le.monte_carlo_ser(e["books"]["ubmss"], e["channel"].h, cfg).points[0][1]
        wins += s_joss <= s_ubm
    elapsed = time.perf_counter() - t0
    _report(
        7,
        bound_ok and wins >= 45 and elapsed < 1800,
        f"union bound respected: {bound_ok}, joss<=ubmss wins {wins}/50 "
        f"({elapsed:.0f}s < 1800s)",
    )


def test_criterion_08_mi_mser_limits():
    t0 = time.perf_counter()
    vecs = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]).reshape(-1, 1) / np.sqrt(2)
    book = sh.ShapingCodebook(
        vectors=vecs, labels=tuple((0, i) for i in range(4)),
        power_budget=1.0, method="fdss",
    )
    h1 = np.array([[1.0 + 0j]])
    mi0 = le.mi_lower_bound(book, h1, 0.0, 1)
    mi_cap = np.log2(4) + 1 * (1 - np.log2(np.e))
    mi_hi = le.mi_lower_bound(book, h1, 1e6, 1)
    ub0 = le.ser_union_bound(book, h1, 0.0)

    cfg = qcqp.SolverConfig(seed=3, restarts=8)
    rho_20db = 100.0
    ratios = []
    for i in range(10):
        paths = ch.sample_paths(ch.mix_seed(777, i), 3)
        chan = ch.assemble_channel(paths, ch.ArrayGeometry(2, 1), ch.ArrayGeometry(2, 1))
        mmed = sh.fdss(chan, 2, cfg)
        mser = sh.fdss(chan, 2, cfg, criterion="mser", snr=rho_20db)
        ratios.append(mser.achieved_d_min / mmed.achieved_d_min)
    elapsed = time.perf_counter() - t0
    checks = {
        "mi_zero": abs(mi0 - (1 - np.log2(np.e))) <= 1e-12,
        "mi_saturates": abs(mi_hi - mi_cap) <= 1e-6,
        "union_zero": ub0 == (4 - 1) / 2,
        "mser_tracks_mmed": all(r >= 0.95 for r in ratios),
    }
    _report(
        8,
        all(checks.values()) and elapsed < 600,
        f"mi(0)={mi0:.6f}, mi(1e6) err {abs(mi_hi - mi_cap):.1e}, union(0)={ub0}, "
        f"mser/mmed min ratio {min(ratios):.4f} ({elapsed:.0f}s < 600s)",
    )


def test_criterion_09_ofdm_extension():
    t0 = time.perf_counter()
    doc = {
        "system": {"n_t": 16, "n_r": 9, "n_rf": 2, "n_bits": 3, "l_paths": 3},
        "structure": "fch",
        "methods": ["fpss"],
        "channel_source": {"kind": "ofdm", "seed": 5, "k_carriers": 16},
        "solver": {"seed": 2, "restarts": 4, "max_iters": 3000},
        "candidate_cap": 16,
        "seed": 0,
        "out_dir": "unused",
    }
    cfg = ex.parse_config(doc)
    report = ex.run_experiment(cfg, write=False)
    shaped = [r for r in report.method_rows if not r.failed]
    all_shaped = len(shaped) == 16

    # inverse-DFT path recovery on the same channel draw
    paths = ch.sample_paths(5, 3)
    tx, rx = ch.ArrayGeometry(4, 4), ch.ArrayGeometry(3, 3)
    ofdm = ch.assemble_ofdm_channel(paths, tx, rx, 16)
    stack = np.array(ofdm.subcarriers)
    worst = 0.0
    for l in (1, 2, 3):
        phases = np.exp(2j * np.pi * l * np.arange(16) / 16)
        rec = np.tensordot(phases, stack, axes=1) / 16
        f_r = ch.array_response(rx, paths.aoa_elevation[l - 1], paths.aoa_azimuth[l - 1])
        f_t = ch.array_response(tx, paths.aod_elevation[l - 1], paths.aod_azimuth[l - 1])
        term = paths.gains[l - 1] * np.outer(f_r, f_t.conj()) / np.sqrt(3)
        worst = max(worst, np.linalg.norm(rec - term))

    channels = ex._load_channels(cfg)
    books = ex.build_shared_analog_codebooks(cfg, channels)
    shared_ok = all(
        np.array_equal(books[0].analog[k], books[c].analog[k])
        for c in range(len(books))
        for k in range(len(books[0].analog))
    )
    elapsed = time.perf_counter() - t0
    _report(
        9,
        all_shaped and worst <= 1e-10 and shared_ok and elapsed < 1200,
        f"shaped {len(shaped)}/16 carriers, dft recovery err {worst:.1e}, "
        f"shared analog bitwise identical: {shared_ok} ({elapsed:.0f}s < 1200s)",
    )


def test_criterion_10_impairment_trends(ensemble_1642):
    t0 = time.perf_counter()
    tx = ch.ArrayGeometry(4, 4)
    cfg = qcqp.SolverConfig(seed=17, restarts=4, max_iters=3000)
    snrs = (5.0, 10.0, 15.0)
    eta = 0.1
    csi_ok = True
    for i in range(2):
        entry = ensemble_1642[i]
        chan, analog, cands = entry["channel"], entry["analog"], entry["candidates"]
        dic = pc.response_dictionary(
            tx, extra_angles=list(zip(chan.paths.aod_elevation, chan.paths.aod_azimuth))
        )
        for method in ("fpss", "ubmss"):
            for snr_db in snrs:
                noise_var = 1.0 / le.snr_db_to_linear(snr_db)
                him = ch.inject_csi_error(chan, eta, noise_var, ch.mix_seed(1, i))
                sub_i = pc.enumerate_subspaces(him, 2)
                analog_i = pc.factorize_subspaces(sub_i, pc.FULLY_CONNECTED, dic)
                if method == "fpss":
                    b_imp = sh.fpss(him, analog_i, 3, cands, cfg)
                    b_cln = entry["books"]["fpss"]
                else:
                    b_imp = sh.baseline(him, analog_i, 3, "ubmss")
                    b_cln = entry["books"]["ubmss"]
                e = le.EvalConfig(snr_db_list=(snr_db,), trials=20000, seed=7)
                s_imp = le.monte_carlo_ser(b_imp, chan.h, e).points[0][1]
                s_cln = le.monte_carlo_ser(b_cln, chan.h, e).points[0][1]
                slack = 3 * np.sqrt(
                    (s_imp * (1 - s_imp) + s_cln * (1 - s_cln)) / 20000 + 1e-12
                )
                csi_ok &= s_imp >= s_cln - slack

    book = ensemble_1642[0]["books"]["joss"]
    h = ensemble_1642[0]["channel"].h
    sers = {}
    for bits in (3, 4, 5):
        qbook = le.quantize_dac(book, bits)
        e = le.EvalConfig(snr_db_list=(14.0,), trials=20000, seed=21)
        sers[bits] = le.monte_carlo_ser(qbook, h, e).points[0][1]
    slack = 3 * np.sqrt(max(s * (1 - s) for s in sers.values()) / 20000)
    dac_ok = sers[5] <= sers[4] + slack and sers[4] <= sers[3] + slack
    elapsed = time.perf_counter() - t0
    _report(
        10,
        csi_ok and dac_ok and elapsed < 1200,
        f"csi eta=0.1 never better than perfect: {csi_ok}, "
        f"dac ser 3/4/5-bit {sers[3]:.4f}/{sers[4]:.4f}/{sers[5]:.4f} ({elapsed:.0f}s < 1200s)",
    )


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    doc = {
        "system": {"n_t": 16, "n_r": 4, "n_rf": 2, "n_bits": 3, "l_paths": 3},
        "structure": "fch",
        "methods": ["fpss", "ubmss"],
        "channel_source": {"kind": "sampled", "seed": 9, "count": 2},
        "solver": {"seed": 2, "restarts": 4, "max_iters": 2000},
        "eval": {"snr_db_list": [0.0, 10.0, 20.0], "trials": 2000, "seed": 33},
        "candidate_cap": 16,
        "seed": 0,
        "out_dir": str(tmp_path / "a"),
    }
    ex.run_experiment(ex.parse_config(doc))
    doc["out_dir"] = str(tmp_path / "b")
    ex.run_experiment(ex.parse_config(doc))
    identical = all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        for f in ("ser.csv", "cdf.csv", "dmin_bar.csv")
    )
    elapsed = time.perf_counter() - t0
    _report(
        11,
        identical,
        f"re-run reproduces every CSV artifact byte-for-byte: {identical} ({elapsed:.0f}s)",
    )
