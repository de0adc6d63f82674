import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from beamshape import channel as ch
from beamshape import precoding as pc
from beamshape import qcqp
from beamshape import shaping as sh
from beamshape.errors import DegenerateCodebookError

from conftest import desk_stack

CFG = qcqp.SolverConfig(seed=1, restarts=4, max_iters=3000)


def scalar_book(values, method="fdss", power=None):
    vecs = np.array(values, dtype=complex).reshape(-1, 1)
    p = power if power is not None else float(np.mean(np.abs(vecs) ** 2))
    return sh.ShapingCodebook(
        vectors=vecs, labels=tuple((0, i) for i in range(len(vecs))),
        power_budget=p, method=method,
    )


class TestConstellations:
    @pytest.mark.parametrize("order", [1, 2, 4, 8, 16, 32])
    def test_unit_average_energy(self, order):
        pts = sh.qam_constellation(order)
        assert len(pts) == order
        if order > 1:
            assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, rel=1e-12)

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            sh.qam_constellation(3)

    @pytest.mark.parametrize("order,n_rf", [(1, 2), (2, 2), (4, 2), (8, 2), (8, 3)])
    def test_product_sets(self, order, n_rf):
        vecs, tag = sh.product_constellation(order, n_rf)
        assert vecs.shape == (order, n_rf)
        assert np.mean(np.sum(np.abs(vecs) ** 2, axis=1)) == pytest.approx(1.0, rel=1e-12)

    def test_mixed_orders_largest_first(self):
        _, tag = sh.product_constellation(8, 2)
        assert tag == "4x2"


class TestMinDistanceAndPower:
    def test_antipodal_scalars(self):
        book = scalar_book([1.0, -1.0])
        assert sh.min_distance(book, np.array([[1.0]])) == pytest.approx(2.0)

    def test_duplicate_codeword(self):
        book = scalar_book([1.0, 1.0, -1.0, -1.0])
        assert sh.min_distance(book, np.array([[1.0]])) == 0.0

    def test_channel_scaling_linear(self, small_channel):
        rng = np.random.default_rng(0)
        vecs = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        book = sh.ShapingCodebook(vectors=vecs, labels=tuple((0, i) for i in range(4)),
                                  power_budget=1.0, method="fdss")
        d1 = sh.min_distance(book, small_channel.h)
        d3 = sh.min_distance(book, 3.0 * small_channel.h)
        assert d3 == pytest.approx(3.0 * d1, rel=1e-12)

    def test_single_codeword_rejected(self):
        book = scalar_book([1.0])
        with pytest.raises(ValueError):
            sh.min_distance(book, np.array([[1.0]]))

    def test_normalize_idempotent(self):
        book = scalar_book([1.0, -1.0])
        out = sh.normalize_power(book, 1.0)
        assert np.max(np.abs(out.vectors - book.vectors)) <= 1e-15

    def test_normalize_scales_vectors(self):
        book = scalar_book([1.0, -1.0])
        out = sh.normalize_power(book, 4.0)
        assert np.allclose(out.vectors, 2.0 * book.vectors)

    def test_normalize_exact_power(self):
        rng = np.random.default_rng(5)
        vecs = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
        book = sh.ShapingCodebook(vectors=vecs, labels=tuple((0, i) for i in range(8)),
                                  power_budget=0.0, method="fdss")
        out = sh.normalize_power(book, 2.5)
        assert np.mean(np.sum(np.abs(out.vectors) ** 2, axis=1)) == pytest.approx(2.5, abs=1e-12)

    def test_normalize_scales_d_min(self, small_channel):
        book = scalar_book([1.0, -1.0, 1j, -1j])
        h = small_channel.h[:, :1]
        d_before = sh.min_distance(book, h)
        out = sh.normalize_power(book, 4.0)
        assert sh.min_distance(out, h) == pytest.approx(2.0 * d_before, rel=1e-12)

    def test_zero_book_rejected(self):
        book = scalar_book([0.0, 0.0], power=1.0)
        with pytest.raises(DegenerateCodebookError):
            sh.normalize_power(book, 1.0)


def brute_force_allocations(n_total, k_spaces):
    powers = [0] + [2**i for i in range(n_total.bit_length())]
    out = set()
    for combo in itertools.product(powers, repeat=k_spaces):
        if sum(combo) == n_total:
            out.add(combo)
    return out


class TestEnumerateAllocations:
    def test_exhaustive_small(self):
        got = sh.enumerate_allocations(4, 2, 1000)
        assert {a.sizes for a in got} == brute_force_allocations(4, 2)
        assert {a.sizes for a in got} == {(4, 0), (0, 4), (2, 2)}

    @pytest.mark.parametrize("n,k", [(8, 3), (4, 4), (16, 2)])
    def test_matches_brute_force(self, n, k):
        got = {a.sizes for a in sh.enumerate_allocations(n, k, 100000)}
        assert got == brute_force_allocations(n, k)

    def test_cap_contract(self):
        got = sh.enumerate_allocations(64, 10, 256)
        assert len(got) == 256
        assert got[0].sizes == (64,) + (0,) * 9

    def test_all_sum_to_n(self):
        for alloc in sh.enumerate_allocations(16, 4, 200):
            assert sum(alloc.sizes) == 16

    def test_uniform_allocation_forced(self):
        got = sh.enumerate_allocations(64, 10, 8)
        uniform = tuple(8 if k < 8 else 0 for k in range(10))
        assert uniform in {a.sizes for a in got}

    def test_power_of_two_required(self):
        with pytest.raises(ValueError):
            sh.enumerate_allocations(6, 2, 10)


class TestJoss:
    def test_single_beamspace(self, small_channel):
        _, analog = desk_stack(small_channel, tx_geom=ch.ArrayGeometry(2, 2))
        one = pc.AnalogCodebook(analog=analog.analog[:1], structure=analog.structure,
                                companion_digital=analog.companion_digital[:1],
                                residuals=analog.residuals[:1])
        book = sh.joss(small_channel, one, 2, CFG)
        assert book.allocation_sizes == (4,)
        assert all(k == 0 for k, _ in book.labels)

    def test_extension_step_count(self, small_channel, monkeypatch):
        _, analog = desk_stack(small_channel, tx_geom=ch.ArrayGeometry(2, 2))
        calls = []
        original = qcqp.build_joss_forms
        monkeypatch.setattr(qcqp, "build_joss_forms", lambda h, p: calls.append(len(p)) or original(h, p))
        sh.joss(small_channel, analog, 2, CFG)
        k = len(analog.analog)
        # K^2 seed solves at size 2, then K per extension step for t = 3..N
        assert calls.count(2) == k * k
        assert calls.count(3) == k and calls.count(4) == k
        assert max(calls) == 4

    def test_two_codewords_reach_closed_form(self, constant_channel):
        blk = ch.ChannelRealization(subcarriers=(constant_channel.h[:2, :2],))
        sub = pc.enumerate_subspaces(blk, 1)
        dic = pc.response_dictionary(ch.ArrayGeometry(2, 1))
        analog = pc.factorize_subspaces(sub, pc.FULLY_CONNECTED, dic)
        cfg = qcqp.SolverConfig(seed=1, restarts=8, tol=1e-9)
        book = sh.joss(blk, analog, 1, cfg)
        s1 = np.linalg.svd(blk.h, compute_uv=False)[0]
        assert book.achieved_d_min >= 0.98 * 2 * s1

    def test_unit_power_and_label_consistency(self, small_channel):
        _, analog = desk_stack(small_channel, tx_geom=ch.ArrayGeometry(2, 2))
        book = sh.joss(small_channel, analog, 2, CFG)
        assert np.mean(np.sum(np.abs(book.vectors) ** 2, axis=1)) == pytest.approx(1.0, abs=1e-12)
        assert sum(book.allocation_sizes) == 4
        for x, (k, _) in zip(book.vectors, book.labels):
            f = analog.analog[k]
            coeff, *_ = np.linalg.lstsq(f, x, rcond=None)
            assert np.linalg.norm(f @ coeff - x) <= 1e-10 * max(np.linalg.norm(x), 1e-30)


class TestRefinement:
    def test_fpss_dominates_warm_start(self, small_channel):
        _, analog = desk_stack(small_channel, tx_geom=ch.ArrayGeometry(2, 2))
        allocs = sh.enumerate_allocations(4, len(analog.analog), 16)
        cands = sh.build_candidate_sets(allocs, 2)
        book = sh.fpss(small_channel, analog, 2, cands, CFG)
        best_unref = max(
            sh._normalized_d_min(sh._unrefined_vectors(list(analog.analog), c)[0],
                                 small_channel.h, 1.0)
            for c in cands
        )
        assert book.achieved_d_min >= best_unref

    def test_dpss_dominates_warm_start(self, small_channel):
        _, analog = desk_stack(small_channel, tx_geom=ch.ArrayGeometry(2, 2))
        allocs = sh.enumerate_allocations(4, len(analog.analog), 16)
        cands = sh.build_candidate_sets(allocs, 2)
        book = sh.dpss(small_channel, analog, 2, cands, CFG)
        best_unref = max(
            sh._normalized_d_min(sh._unrefined_vectors(list(analog.analog), c)[0],
                                 small_channel.h, 1.0)
            for c in cands
        )
        assert book.achieved_d_min >= best_unref

    def test_single_rf_chain_fpss_equals_dpss(self):
        paths = ch.sample_paths(31, 3)
        chan = ch.assemble_channel(paths, ch.ArrayGeometry(2, 2), ch.ArrayGeometry(2, 2))
        sub = pc.enumerate_subspaces(chan, 1)
        dic = pc.response_dictionary(ch.ArrayGeometry(2, 2))
        analog = pc.factorize_subspaces(sub, pc.FULLY_CONNECTED, dic)
        allocs = sh.enumerate_allocations(4, len(analog.analog), 16)
        cands = sh.build_candidate_sets(allocs, 1)
        a = sh.fpss(chan, analog, 2, cands, CFG)
        b = sh.dpss(chan, analog, 2, cands, CFG)
        assert np.allclose(a.vectors, b.vectors)
        assert a.achieved_d_min == pytest.approx(b.achieved_d_min, rel=1e-12)

    def test_label_reconstruction(self, small_channel):
        _, analog = desk_stack(small_channel, tx_geom=ch.ArrayGeometry(2, 2))
        allocs = sh.enumerate_allocations(4, len(analog.analog), 8)
        cands = sh.build_candidate_sets(allocs, 2)
        book = sh.fpss(small_channel, analog, 2, cands, CFG)
        assert sum(book.allocation_sizes) == 4


class TestFdss:
    def test_two_codeword_closed_form(self, small_channel):
        cfg = qcqp.SolverConfig(seed=2, restarts=4, tol=1e-9)
        book = sh.fdss(small_channel, 1, cfg)
        s1 = small_channel.svd()[1][0]
        assert abs(book.achieved_d_min - 2 * s1) <= 0.01 * 2 * s1
        assert np.linalg.norm(book.vectors[0] + book.vectors[1]) <= 1e-3 * np.linalg.norm(book.vectors[0])

    def test_identity_channel(self):
        chan = ch.ChannelRealization(subcarriers=(np.eye(2, dtype=complex),))
        book = sh.fdss(chan, 1, qcqp.SolverConfig(seed=2, restarts=4, tol=1e-9))
        assert book.achieved_d_min == pytest.approx(2.0, rel=0.01)

    def test_four_point_scalar_channel(self):
        # best 4-point complex constellation at unit average power: the
        # square/rhombus packings tie at spacing sqrt(2), beating any
        # one-dimensional arrangement (2*sqrt(2)/sqrt(5) ~ 1.265)
        chan = ch.ChannelRealization(subcarriers=(np.array([[1.0 + 0j]]),))
        book = sh.fdss(chan, 2, qcqp.SolverConfig(seed=2, restarts=16, tol=1e-9))
        assert book.achieved_d_min == pytest.approx(np.sqrt(2.0), rel=0.02)
        assert book.achieved_d_min > 2 * np.sqrt(2.0 / 5.0)


class TestBaselines:
    def _stack(self, chan):
        return desk_stack(chan, tx_geom=ch.ArrayGeometry(2, 2))

    def test_bbss_uses_strongest_beamspace(self, small_channel):
        _, analog = self._stack(small_channel)
        book = sh.baseline(small_channel, analog, 3, "bbss")
        assert all(k == 0 for k, _ in book.labels)
        assert len(book) == 8

    def test_ubmss_khat_from_ten_precoders(self, small_channel):
        rng = np.random.default_rng(3)
        precoders = tuple(np.exp(1j * rng.uniform(0, 2 * np.pi, (4, 2))) / 2.0 for _ in range(10))
        analog = pc.AnalogCodebook(analog=precoders, structure=pc.FULLY_CONNECTED,
                                   companion_digital=tuple(np.eye(2, dtype=complex),) * 10,
                                   residuals=(0.0,) * 10)
        book = sh.baseline(small_channel, analog, 3, "ubmss")
        used = sorted({k for k, _ in book.labels})
        assert used == list(range(8))  # 2^floor(log2 10) = 8 beamspaces

    def test_ubmss_divisibility(self, small_channel):
        # K_hat = 4 precoders cannot split N = 2 codewords evenly
        rng = np.random.default_rng(4)
        precoders = tuple(np.exp(1j * rng.uniform(0, 2 * np.pi, (4, 2))) / 2.0 for _ in range(4))
        analog4 = pc.AnalogCodebook(analog=precoders, structure=pc.FULLY_CONNECTED,
                                    companion_digital=tuple(np.eye(2, dtype=complex),) * 4,
                                    residuals=(0.0,) * 4)
        with pytest.raises(ValueError):
            sh.baseline(small_channel, analog4, 1, "ubmss")

    def test_amss_beats_ubmss(self, small_channel):
        _, analog = self._stack(small_channel)
        am = sh.baseline(small_channel, analog, 3, "amss")
        ub = sh.baseline(small_channel, analog, 3, "ubmss")
        assert am.achieved_d_min >= ub.achieved_d_min

    def test_fpss_with_amss_winner_dominates(self, small_channel):
        _, analog = self._stack(small_channel)
        am = sh.baseline(small_channel, analog, 3, "amss")
        winner = sh.SymbolAllocation(am.allocation_sizes + (0,) * (len(analog.analog) - len(am.allocation_sizes)))
        cands = sh.build_candidate_sets([winner], analog.n_rf)
        book = sh.fpss(small_channel, analog, 3, cands, CFG)
        assert book.achieved_d_min >= am.achieved_d_min


class TestSerialization:
    def test_roundtrip(self, tmp_path, small_channel):
        _, analog = desk_stack(small_channel, tx_geom=ch.ArrayGeometry(2, 2))
        book = sh.baseline(small_channel, analog, 2, "bbss")
        path = tmp_path / "book.json"
        sh.save_codebook(book, path)

        back = sh.load_codebook(path)
        assert np.array_equal(back.vectors, book.vectors)
        assert back.labels == book.labels
        assert back.method == "bbss"
        assert back.power_budget == book.power_budget
