"""Beamspace enumeration from the channel SVD and hybrid precoder factorization.

The right singular vectors of the channel span the useful transmit
directions; every N_RF-subset of them is one addressable beamspace.  Each
beamspace basis is approximated by a unit-modulus analog precoder times a
small digital matrix, either with a greedy matching pursuit over array
response atoms (fully connected) or by per-subarray phase extraction
(partially connected).
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import jsonio
from .channel import ArrayGeometry, ChannelRealization, array_response
from .errors import InfeasibleRankError, MissingDictionaryError

FULLY_CONNECTED = "fully_connected"
PARTIALLY_CONNECTED = "partially_connected"
STRUCTURES = (FULLY_CONNECTED, PARTIALLY_CONNECTED)


@dataclass(frozen=True)
class SubspaceSet:
    """All C(m, N_RF) singular-vector subsets, strongest energy first."""

    bases: tuple
    index_tuples: tuple
    energies: tuple

    def __len__(self) -> int:
        return len(self.bases)


@dataclass(frozen=True)
class AnalogCodebook:
    """Unit-modulus analog precoders plus their companion digital matrices."""

    analog: tuple
    structure: str
    companion_digital: tuple
    residuals: tuple

    def __len__(self) -> int:
        return len(self.analog)

    @property
    def n_rf(self) -> int:
        return self.analog[0].shape[1]


@dataclass(frozen=True)
class HybridCombiner:
    w_rf: np.ndarray
    w_bb: np.ndarray


class HybridFactorization(NamedTuple):
    f_rf: np.ndarray
    f_bb: np.ndarray
    residual: float


class BroadbandFactorization(NamedTuple):
    f_rf: np.ndarray
    f_bb_per_carrier: list
    residuals: list


def enumerate_subspaces(chan: ChannelRealization, n_rf: int, carrier: int = 0) -> SubspaceSet:
    """Each basis stacks one N_RF-subset of right singular vectors.

    Bases are ordered by descending sum of the associated singular values,
    ties broken by the lexicographic order of the index tuples.
    """
    u, s, v = chan.svd(carrier)
    m = len(s)
    if not 1 <= n_rf <= m:
        raise InfeasibleRankError(f"n_rf {n_rf} outside [1, channel rank {m}]")
    entries = []
    for combo in itertools.combinations(range(m), n_rf):
        energy = float(s[list(combo)].sum())
        entries.append((-energy, combo))
    entries.sort()
    bases = tuple(v[:, list(c)].copy() for _, c in entries)
    return SubspaceSet(
        bases=bases,
        index_tuples=tuple(c for _, c in entries),
        energies=tuple(-e for e, _ in entries),
    )


_DICT_CACHE: dict = {}
_DICT_LOCK = threading.Lock()


def response_dictionary(
    geom: ArrayGeometry,
    grid_theta: int = 8,
    grid_phi: int = 16,
    extra_angles: Sequence[tuple] | None = None,
) -> np.ndarray:
    """Array-response atoms on a uniform angle grid, plus optional exact angles.

    Elevations sit at grid-cell centers of [0, pi) so the azimuth-degenerate
    boresight is avoided; azimuths tile [0, 2*pi) uniformly.  The grid part
    is memoized per geometry behind a lock.
    """
    key = (geom.w1, geom.w2, geom.spacing_over_lambda, grid_theta, grid_phi)
    with _DICT_LOCK:
        grid = _DICT_CACHE.get(key)
    if grid is None:
        thetas = np.pi * (np.arange(grid_theta) + 0.5) / grid_theta
        phis = 2 * np.pi * np.arange(grid_phi) / grid_phi
        cols = [array_response(geom, t, p) for t in thetas for p in phis]
        grid = np.column_stack(cols)
        grid.setflags(write=False)
        with _DICT_LOCK:
            _DICT_CACHE[key] = grid
    if not extra_angles:
        return grid
    extra = np.column_stack([array_response(geom, t, p) for t, p in extra_angles])
    return np.hstack([grid, extra])


def _greedy_atoms(target: np.ndarray, atoms: np.ndarray, n_cols: int):
    """Greedy matching pursuit: n_cols distinct atoms, least-squares re-fit.

    The atom with the largest residual correlation energy wins each round;
    already-selected atoms are masked out so the selection stays distinct
    even when the residual collapses early.
    """
    n_atoms = atoms.shape[1]
    if n_cols > n_atoms:
        raise MissingDictionaryError(f"need {n_cols} atoms, dictionary has {n_atoms}")
    selected: list[int] = []
    residual = target
    coef = np.zeros((0, target.shape[1]), dtype=complex)
    for _ in range(n_cols):
        energy = np.abs(atoms.conj().T @ residual) ** 2
        score = energy.sum(axis=1)
        if selected:
            score[selected] = -1.0
        selected.append(int(np.argmax(score)))
        chosen = atoms[:, selected]
        coef, *_ = np.linalg.lstsq(chosen, target, rcond=None)
        residual = target - chosen @ coef
    return selected, coef


def _unit_modulus(col: np.ndarray, magnitude: float) -> np.ndarray:
    return magnitude * np.exp(1j * np.angle(col))


def decompose_hybrid(
    basis: np.ndarray,
    mode: str,
    dictionary: np.ndarray | None = None,
) -> HybridFactorization:
    """Factor a subspace basis into F_RF (unit-modulus) times F_BB.

    F_BB is rescaled so ||F_RF @ F_BB||_F equals ||basis||_F exactly; the
    residual reported is ||basis - F_RF @ F_BB||_F after that rescale.
    """
    basis = np.asarray(basis, dtype=complex)
    n_t, n_rf = basis.shape
    if mode == FULLY_CONNECTED:
        if dictionary is None or np.asarray(dictionary).size == 0:
            raise MissingDictionaryError("fully-connected factorization needs response atoms")
        atoms = np.asarray(dictionary, dtype=complex)
        selected, _ = _greedy_atoms(basis, atoms, n_rf)
        mag = 1.0 / np.sqrt(n_t)
        f_rf = np.column_stack([_unit_modulus(atoms[:, j], mag) for j in selected])
    elif mode == PARTIALLY_CONNECTED:
        if n_t % n_rf != 0:
            raise ValueError(f"partially connected needs n_rf {n_rf} to divide n_t {n_t}")
        rows = n_t // n_rf
        mag = np.sqrt(n_rf / n_t)
        f_rf = np.zeros((n_t, n_rf), dtype=complex)
        for k in range(n_rf):
            block = slice(k * rows, (k + 1) * rows)
            # phases of the block's principal direction (reduces to the
            # column's own phases when the block has a single column)
            u, _, _ = np.linalg.svd(basis[block, :])
            f_rf[block, k] = _unit_modulus(u[:, 0], mag)
    else:
        raise ValueError(f"unknown structure {mode!r}")
    f_bb, *_ = np.linalg.lstsq(f_rf, basis, rcond=None)
    prod_norm = np.linalg.norm(f_rf @ f_bb)
    if prod_norm > 0:
        f_bb = f_bb * (np.linalg.norm(basis) / prod_norm)
    residual = float(np.linalg.norm(basis - f_rf @ f_bb))
    return HybridFactorization(f_rf=f_rf, f_bb=f_bb, residual=residual)


def factorize_subspaces(
    subspaces: SubspaceSet,
    mode: str,
    dictionary: np.ndarray | None = None,
) -> AnalogCodebook:
    """Factor every subspace basis; keeps the subspace (energy) ordering."""
    facts = [decompose_hybrid(b, mode, dictionary) for b in subspaces.bases]
    return AnalogCodebook(
        analog=tuple(f.f_rf for f in facts),
        structure=mode,
        companion_digital=tuple(f.f_bb for f in facts),
        residuals=tuple(f.residual for f in facts),
    )


def broadband_shared_analog(
    bases_per_carrier: Sequence[np.ndarray],
    mode: str,
    dictionary: np.ndarray | None = None,
) -> BroadbandFactorization:
    """One analog precoder for all carriers, per-carrier digital precoders.

    The analog part is chosen on the horizontally stacked bases (greedy atom
    selection for the fully-connected case, first-carrier phase extraction
    for the partially-connected one); each digital precoder then solves its
    own least squares and is rescaled to its carrier's Frobenius equality.
    """
    bases = [np.asarray(b, dtype=complex) for b in bases_per_carrier]
    if not bases:
        raise ValueError("no carrier bases supplied")
    shape = bases[0].shape
    if any(b.shape != shape for b in bases):
        raise ValueError("carrier bases must share dimensions")
    if len(bases) == 1:
        f = decompose_hybrid(bases[0], mode, dictionary)
        return BroadbandFactorization(f.f_rf, [f.f_bb], [f.residual])
    n_t, n_rf = shape
    if mode == FULLY_CONNECTED:
        if dictionary is None or np.asarray(dictionary).size == 0:
            raise MissingDictionaryError("fully-connected factorization needs response atoms")
        atoms = np.asarray(dictionary, dtype=complex)
        stacked = np.hstack(bases)
        selected, _ = _greedy_atoms(stacked, atoms, n_rf)
        mag = 1.0 / np.sqrt(n_t)
        f_rf = np.column_stack([_unit_modulus(atoms[:, j], mag) for j in selected])
    elif mode == PARTIALLY_CONNECTED:
        f_rf = decompose_hybrid(bases[0], mode, dictionary).f_rf
    else:
        raise ValueError(f"unknown structure {mode!r}")
    f_bbs, residuals = [], []
    for b in bases:
        f_bb, *_ = np.linalg.lstsq(f_rf, b, rcond=None)
        prod_norm = np.linalg.norm(f_rf @ f_bb)
        if prod_norm > 0:
            f_bb = f_bb * (np.linalg.norm(b) / prod_norm)
        f_bbs.append(f_bb)
        residuals.append(float(np.linalg.norm(b - f_rf @ f_bb)))
    return BroadbandFactorization(f_rf, f_bbs, residuals)


def codebook_to_json_dict(book: AnalogCodebook) -> dict:
    """Same complex-matrix wire format as channels, plus the structure tag."""
    return {
        "structure": book.structure,
        "analog": [jsonio.complex_to_pairs(f) for f in book.analog],
        "companion_digital": [jsonio.complex_to_pairs(f) for f in book.companion_digital],
        "residuals": [float(r) for r in book.residuals],
    }


def codebook_from_json_dict(doc: dict) -> AnalogCodebook:
    return AnalogCodebook(
        analog=tuple(jsonio.pairs_to_complex(f) for f in doc["analog"]),
        structure=doc["structure"],
        companion_digital=tuple(jsonio.pairs_to_complex(f) for f in doc["companion_digital"]),
        residuals=tuple(doc["residuals"]),
    )


def save_analog_codebook(book: AnalogCodebook, path) -> None:
    jsonio.dump_json(codebook_to_json_dict(book), path)


def load_analog_codebook(path) -> AnalogCodebook:
    return codebook_from_json_dict(jsonio.load_json(path))


def design_hybrid_combiner(
    chan: ChannelRealization,
    n_rf_r: int,
    dictionary: np.ndarray,
) -> tuple[HybridCombiner, np.ndarray]:
    """Hybrid receive combiner for the top left singular directions.

    Factors the leading n_rf_r left singular vectors into a unit-modulus
    analog combiner and a digital combiner, then returns the effective
    channel W_BB^H W_RF^H H.  The combiner is scaled to unit spectral norm
    so effective pairwise distances never exceed the full-channel ones.
    """
    h = chan.h
    n_r = h.shape[0]
    if not 1 <= n_rf_r <= n_r:
        raise ValueError(f"n_rf_r {n_rf_r} outside [1, {n_r}]")
    u_full, _, _ = np.linalg.svd(h, full_matrices=True)
    w_target = u_full[:, :n_rf_r]
    if dictionary is None or np.asarray(dictionary).size == 0:
        raise MissingDictionaryError("combiner design needs receive response atoms")
    atoms = np.asarray(dictionary, dtype=complex)
    selected, _ = _greedy_atoms(w_target, atoms, n_rf_r)
    mag = 1.0 / np.sqrt(n_r)
    w_rf = np.column_stack([_unit_modulus(atoms[:, j], mag) for j in selected])
    w_bb, *_ = np.linalg.lstsq(w_rf, w_target, rcond=None)
    spectral = np.linalg.svd(w_rf @ w_bb, compute_uv=False)[0]
    if spectral > 0:
        w_bb = w_bb / spectral
    effective = w_bb.conj().T @ w_rf.conj().T @ h
    return HybridCombiner(w_rf=w_rf, w_bb=w_bb), effective
