import hypothesis
import numpy as np
import pytest

from beamshape import channel as ch
from beamshape import precoding as pc
from beamshape import qcqp
from beamshape import shaping as sh

hypothesis.settings.register_profile(
    "default", max_examples=50, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def constant_channel():
    return ch.constant_channel_4x4()


@pytest.fixture(scope="session")
def small_channel():
    paths = ch.sample_paths(7, 3)
    return ch.assemble_channel(paths, ch.ArrayGeometry(2, 2), ch.ArrayGeometry(2, 2))


def desk_stack(chan, structure=pc.FULLY_CONNECTED, n_rf=2, tx_geom=None, extra_aod=True):
    """Subspaces + analog codebook for a channel, the way the runner builds them."""
    sub = pc.enumerate_subspaces(chan, n_rf)
    dictionary = None
    if structure == pc.FULLY_CONNECTED:
        geom = tx_geom or ch.ArrayGeometry(*_square(chan.n_t))
        extra = None
        if extra_aod and chan.paths is not None:
            extra = list(zip(chan.paths.aod_elevation, chan.paths.aod_azimuth))
        dictionary = pc.response_dictionary(geom, extra_angles=extra)
    return sub, pc.factorize_subspaces(sub, structure, dictionary)


def _square(n):
    w = int(np.sqrt(n))
    while n % w:
        w -= 1
    return w, n // w


@pytest.fixture(scope="session")
def ensemble_1642():
    """50 seeded (16,4,2,3,3) channels with books for all five methods.

    Shared by the ensemble-ordering, SER-consistency, and impairment
    acceptance criteria so the heavy shaping happens once per session.
    """
    tx, rx = ch.ArrayGeometry(4, 4), ch.ArrayGeometry(2, 2)
    cfg = qcqp.SolverConfig(seed=17, restarts=4, max_iters=3000)
    out = []
    for i in range(50):
        paths = ch.sample_paths(ch.mix_seed(99, i), 3)
        chan = ch.assemble_channel(paths, tx, rx)
        sub = pc.enumerate_subspaces(chan, 2)
        dic = pc.response_dictionary(
            tx, extra_angles=list(zip(paths.aod_elevation, paths.aod_azimuth))
        )
        analog = pc.factorize_subspaces(sub, pc.FULLY_CONNECTED, dic)
        allocs = sh.enumerate_allocations(8, len(sub), 64)
        cands = sh.build_candidate_sets(allocs, 2)
        books = {
            "joss": sh.joss(chan, analog, 3, cfg),
            "fpss": sh.fpss(chan, analog, 3, cands, cfg),
            "dpss": sh.dpss(chan, analog, 3, cands, cfg),
            "amss": sh.baseline(chan, analog, 3, "amss"),
            "ubmss": sh.baseline(chan, analog, 3, "ubmss"),
        }
        out.append({"channel": chan, "analog": analog, "candidates": cands, "books": books})
    return out
