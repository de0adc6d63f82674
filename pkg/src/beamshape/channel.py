"""Sparse mmWave MIMO channels: UPA responses, path sampling, OFDM, impairments.

Channels are sums of L rank-one path contributions between uniform planar
arrays.  All sampling is a pure function of (seed, arguments); realizations
are immutable after construction and carry a per-subcarrier SVD cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import jsonio
from .errors import InvalidGeometryError

RANK_REL_TOL = 1e-9


def mix_seed(*keys) -> int:
    """Derive a child seed deterministically from integer keys."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array: w1 horizontal x w2 vertical elements."""

    w1: int
    w2: int
    spacing_over_lambda: float = 0.5

    def __post_init__(self):
        if self.w1 < 1 or self.w2 < 1:
            raise InvalidGeometryError(f"non-positive UPA dimensions ({self.w1}, {self.w2})")
        if self.spacing_over_lambda <= 0:
            raise InvalidGeometryError(f"non-positive element spacing {self.spacing_over_lambda}")

    @property
    def n_elements(self) -> int:
        return self.w1 * self.w2


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PathSet:
    """Gains and angles of the L propagation paths of one realization."""

    gains: np.ndarray
    aoa_elevation: np.ndarray
    aoa_azimuth: np.ndarray
    aod_elevation: np.ndarray
    aod_azimuth: np.ndarray

    def __post_init__(self):
        n = len(self.gains)
        if n < 1:
            raise ValueError("a PathSet needs at least one path")
        for name in ("aoa_elevation", "aoa_azimuth", "aod_elevation", "aod_azimuth"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match the gain count {n}")
        for name in ("aoa_elevation", "aod_elevation"):
            el = getattr(self, name)
            if np.any(el < 0) or np.any(el >= np.pi):
                raise ValueError(f"{name} outside [0, pi)")
        for name in ("aoa_azimuth", "aod_azimuth"):
            az = getattr(self, name)
            if np.any(az < 0) or np.any(az >= 2 * np.pi):
                raise ValueError(f"{name} outside [0, 2*pi)")
        for name in ("gains", "aoa_elevation", "aoa_azimuth", "aod_elevation", "aod_azimuth"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    def __len__(self) -> int:
        return len(self.gains)


@dataclass(frozen=True)
class ChannelRealization:
    """One channel draw: per-subcarrier matrices plus a truncated SVD cache.

    Narrowband channels hold a single subcarrier; ``h`` is that matrix.
    The cache keeps only singular triplets above RANK_REL_TOL relative to
    the largest singular value, which defines the numerical rank.
    """

    subcarriers: tuple
    seed: int | None = None
    paths: PathSet | None = None
    svds: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if not self.subcarriers:
            raise ValueError("a channel needs at least one subcarrier matrix")
        mats = tuple(_readonly(np.array(m, dtype=complex)) for m in self.subcarriers)
        object.__setattr__(self, "subcarriers", mats)
        if not self.svds:
            object.__setattr__(self, "svds", tuple(_truncated_svd(m) for m in mats))

    @property
    def h(self) -> np.ndarray:
        return self.subcarriers[0]

    @property
    def n_r(self) -> int:
        return self.subcarriers[0].shape[0]

    @property
    def n_t(self) -> int:
        return self.subcarriers[0].shape[1]

    @property
    def n_subcarriers(self) -> int:
        return len(self.subcarriers)

    @property
    def ranks(self) -> tuple:
        return tuple(len(s) for _, s, _ in self.svds)

    @property
    def rank(self) -> int:
        return self.ranks[0]

    def svd(self, carrier: int = 0):
        """(U, singular values, V) of one subcarrier, truncated to rank m."""
        u, s, vh = self.svds[carrier]
        return u, s, vh.conj().T


def _truncated_svd(h: np.ndarray):
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    if s[0] == 0:
        m = 1
    else:
        m = int(np.sum(s > RANK_REL_TOL * s[0]))
        m = max(m, 1)
    return _readonly(u[:, :m]), _readonly(s[:m]), _readonly(vh[:m, :])


def array_response(geom: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
    """UPA response vector at elevation theta, azimuth phi.

    Entry (x, y) is exp(j*2*pi*(d/lambda)*(x*sin(phi)*sin(theta) + y*cos(theta)))
    scaled by 1/sqrt(w1*w2).  Enumeration is x-major: the flat index is
    x*w2 + y with x the horizontal and y the vertical element index.
    """
    if not (0 <= theta < np.pi):
        raise ValueError(f"theta {theta} outside [0, pi)")
    if not (0 <= phi < 2 * np.pi):
        raise ValueError(f"phi {phi} outside [0, 2*pi)")
    x = np.arange(geom.w1)
    y = np.arange(geom.w2)
    phase = 2 * np.pi * geom.spacing_over_lambda * (
        x[:, None] * np.sin(phi) * np.sin(theta) + y[None, :] * np.cos(theta)
    )
    resp = np.exp(1j * phase) / np.sqrt(geom.n_elements)
    return resp.reshape(-1)


def sample_paths(rng_seed: int, l_count: int) -> PathSet:
    """Draw L paths: CN(0,1) gains, uniform angles. Same seed, same paths."""
    if l_count < 1:
        raise ValueError(f"need at least one path, got {l_count}")
    rng = np.random.default_rng(rng_seed)
    gains = (rng.standard_normal(l_count) + 1j * rng.standard_normal(l_count)) / np.sqrt(2.0)
    return PathSet(
        gains=gains,
        aoa_elevation=rng.uniform(0.0, np.pi, l_count),
        aoa_azimuth=rng.uniform(0.0, 2 * np.pi, l_count),
        aod_elevation=rng.uniform(0.0, np.pi, l_count),
        aod_azimuth=rng.uniform(0.0, 2 * np.pi, l_count),
    )


def _path_terms(paths: PathSet, tx: ArrayGeometry, rx: ArrayGeometry) -> np.ndarray:
    """Rank-one matrices alpha_l * f_r * f_t^H, one per path, without 1/sqrt(L)."""
    terms = []
    for l in range(len(paths)):
        f_r = array_response(rx, paths.aoa_elevation[l], paths.aoa_azimuth[l])
        f_t = array_response(tx, paths.aod_elevation[l], paths.aod_azimuth[l])
        terms.append(paths.gains[l] * np.outer(f_r, f_t.conj()))
    return np.array(terms)


def assemble_channel(paths: PathSet, tx: ArrayGeometry, rx: ArrayGeometry) -> ChannelRealization:
    """Narrowband channel H = (1/sqrt(L)) * sum_l alpha_l f_r f_t^H."""
    terms = _path_terms(paths, tx, rx)
    h = terms.sum(axis=0) / np.sqrt(len(paths))
    return ChannelRealization(subcarriers=(h,), paths=paths)


def assemble_ofdm_channel(
    paths: PathSet, tx: ArrayGeometry, rx: ArrayGeometry, k_carriers: int
) -> ChannelRealization:
    """Per-subcarrier channels with tap phases exp(-j*2*pi*l*k/K), l = 1..L.

    Requires k_carriers >= L so the per-path phase sequences stay orthogonal
    across the DFT and each tap is resolvable.
    """
    if k_carriers < 1:
        raise ValueError(f"need at least one subcarrier, got {k_carriers}")
    big_l = len(paths)
    if k_carriers < big_l:
        raise ValueError(f"k_carriers {k_carriers} < path count {big_l}: taps unresolvable")
    terms = _path_terms(paths, tx, rx)
    l_idx = np.arange(1, big_l + 1)
    mats = []
    for k in range(k_carriers):
        phases = np.exp(-2j * np.pi * l_idx * k / k_carriers)
        mats.append(np.tensordot(phases, terms, axes=1) / np.sqrt(big_l))
    return ChannelRealization(subcarriers=tuple(mats), paths=paths)


def inject_csi_error(
    chan: ChannelRealization, eta: float, noise_var: float, rng_seed: int
) -> ChannelRealization:
    """Additive imperfect-CSI model: H + H_e with per-entry variance eta*noise_var."""
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    if noise_var <= 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    if eta == 0:
        return chan
    rng = np.random.default_rng(rng_seed)
    sigma = np.sqrt(eta * noise_var / 2.0)
    mats = []
    for h in chan.subcarriers:
        err = sigma * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
        mats.append(h + err)
    return ChannelRealization(subcarriers=tuple(mats), seed=chan.seed, paths=chan.paths)


# ---------------------------------------------------------------------------
# Serialization: {"n_r", "n_t", "subcarriers", "seed", "paths"} with complex
# numbers as [re, im] pairs.

def to_json_dict(chan: ChannelRealization) -> dict:
    doc = {
        "n_r": chan.n_r,
        "n_t": chan.n_t,
        "subcarriers": [jsonio.complex_to_pairs(m) for m in chan.subcarriers],
        "seed": chan.seed,
        "paths": None,
    }
    if chan.paths is not None:
        doc["paths"] = [
            {
                "gain": [float(g.real), float(g.imag)],
                "aoa_elevation": float(t),
                "aoa_azimuth": float(p),
                "aod_elevation": float(tt),
                "aod_azimuth": float(pp),
            }
            for g, t, p, tt, pp in zip(
                chan.paths.gains,
                chan.paths.aoa_elevation,
                chan.paths.aoa_azimuth,
                chan.paths.aod_elevation,
                chan.paths.aod_azimuth,
            )
        ]
    return doc


def from_json_dict(doc: dict) -> ChannelRealization:
    mats = tuple(jsonio.pairs_to_complex(m) for m in doc["subcarriers"])
    paths = None
    if doc.get("paths"):
        rows = doc["paths"]
        paths = PathSet(
            gains=np.array([r["gain"][0] + 1j * r["gain"][1] for r in rows]),
            aoa_elevation=np.array([r["aoa_elevation"] for r in rows]),
            aoa_azimuth=np.array([r["aoa_azimuth"] for r in rows]),
            aod_elevation=np.array([r["aod_elevation"] for r in rows]),
            aod_azimuth=np.array([r["aod_azimuth"] for r in rows]),
        )
    return ChannelRealization(subcarriers=mats, seed=doc.get("seed"), paths=paths)


def save_channel(chan: ChannelRealization, path) -> None:
    jsonio.dump_json(to_json_dict(chan), path)


def load_channel(path) -> ChannelRealization:
    return from_json_dict(jsonio.load_json(path))


def constant_channel_4x4() -> ChannelRealization:
    """The fixed 4x4 benchmark channel shipped with the package."""
    ref = resources.files("beamshape").joinpath("fixtures/constant_channel_4x4.json")
    with resources.as_file(ref) as path:
        return load_channel(path)
