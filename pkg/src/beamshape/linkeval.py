"""Link-level evaluation: ML detection, Monte-Carlo SER, analytic bounds,
minimum-distance ensembles, and transmit-side impairments.

SNR follows rho = P / sigma^2 with P the codebook's average power, so a
unit-power codebook at rho_dB sees noise variance 10^(-rho_dB/10).  Every
trial derives its own generator from (seed, snr index, trial index), which
makes results independent of batching or worker count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, mix_seed
from .errors import ShapingFailureError
from .shaping import ShapingCodebook, min_distance, normalize_power

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    snr_db_list: tuple
    trials: int
    seed: int
    dac_bits: int | None = None
    csi_eta: float | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_db_list:
            raise ValueError("snr_db_list must be nonempty")
        object.__setattr__(self, "snr_db_list", tuple(float(s) for s in self.snr_db_list))


@dataclass
class SerCurve:
    method: str
    points: list  # (snr_db, ser, trials, errors)
    bound_points: list | None = None


def snr_db_to_linear(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def ml_detect(y: np.ndarray, h: np.ndarray, book: ShapingCodebook) -> int:
    """Maximum-likelihood index: argmin ||y - H x_i||, ties to the lowest index."""
    received = book.vectors @ h.T
    dists = np.linalg.norm(received - y[None, :], axis=1)
    return int(np.argmin(dists))


def _trial_randomness(seed: int, snr_idx: int, trials: int, n: int, n_r: int):
    """Per-trial codeword indices and unit-variance complex noise."""
    indices = np.empty(trials, dtype=int)
    noise = np.empty((trials, n_r), dtype=complex)
    for t in range(trials):
        rng = np.random.default_rng(mix_seed(seed, snr_idx, t))
        indices[t] = rng.integers(n)
        noise[t] = rng.standard_normal(n_r) + 1j * rng.standard_normal(n_r)
    return indices, noise


def monte_carlo_ser(book: ShapingCodebook, h: np.ndarray, cfg: EvalConfig) -> SerCurve:
    """Symbol error rate under ML detection, one point per configured SNR."""
    received = book.vectors @ h.T  # (N, N_r)
    n, n_r = received.shape
    sq_norms = np.sum(np.abs(received) ** 2, axis=1)
    points = []
    for s_idx, snr_db in enumerate(cfg.snr_db_list):
        rho = snr_db_to_linear(snr_db)
        sigma2 = book.power_budget / rho
        indices, noise = _trial_randomness(cfg.seed, s_idx, cfg.trials, n, n_r)
        y = received[indices] + np.sqrt(sigma2 / 2.0) * noise
        # argmin_i ||y - r_i||^2 via the expanded inner product
        cross = np.real(y @ received.conj().T)
        metric = sq_norms[None, :] - 2.0 * cross
        detected = np.argmin(metric, axis=1)
        errors = int(np.sum(detected != indices))
        points.append((float(snr_db), errors / cfg.trials, cfg.trials, errors))
    return SerCurve(method=book.method, points=points)


def _pair_distances_sq(book: ShapingCodebook, h: np.ndarray) -> np.ndarray:
    received = book.vectors @ np.asarray(h).T
    diffs = received[:, None, :] - received[None, :, :]
    d2 = np.sum(np.abs(diffs) ** 2, axis=2)
    iu = np.triu_indices(len(received), k=1)
    return d2[iu]


def ser_union_bound(book: ShapingCodebook, h: np.ndarray, rho: float) -> float:
    """Pairwise union bound on the ML symbol error rate at linear SNR rho."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    d2 = _pair_distances_sq(book, h)
    n = len(book)
    return float(np.exp(-rho * d2 / 4.0).sum() / n)


def mi_lower_bound(book: ShapingCodebook, h: np.ndarray, rho: float, n_r: int) -> float:
    """Mutual-information lower bound for equiprobable codewords."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    n = len(book)
    received = book.vectors @ np.asarray(h).T
    diffs = received[:, None, :] - received[None, :, :]
    d2 = np.sum(np.abs(diffs) ** 2, axis=2)
    inner = np.exp(-rho * d2 / 2.0)
    np.fill_diagonal(inner, 0.0)
    s_i = 1.0 + inner.sum(axis=1)
    return float(np.log2(n) + n_r * (1.0 - np.log2(np.e)) - np.log2(s_i).mean())


def min_distance_cdf(channel_ensemble: list, method_runner) -> list:
    """Empirical CDF of the achieved minimum distance over an ensemble.

    ``method_runner(chan)`` returns a ShapingCodebook; shaping failures are
    counted, logged, and omitted from the CDF.
    """
    if not channel_ensemble:
        raise ValueError("channel ensemble must be nonempty")
    d_mins, failures = [], 0
    for chan in channel_ensemble:
        try:
            book = method_runner(chan)
        except ShapingFailureError:
            failures += 1
            continue
        d_mins.append(min_distance(book, chan.h))
    if failures:
        logger.warning("min_distance_cdf: %d/%d shaping runs failed", failures, len(channel_ensemble))
    d_mins.sort()
    n = len(d_mins)
    return [(d, (i + 1) / n) for i, d in enumerate(d_mins)]


def quantize_dac(book: ShapingCodebook, bits: int) -> ShapingCodebook:
    """Uniform mid-rise quantization of the I and Q rails of every entry.

    Clips at three times the RMS component level, then renormalizes back to
    the original power budget.
    """
    if bits < 1:
        raise ValueError(f"dac bits must be >= 1, got {bits}")
    comps = np.concatenate([book.vectors.real.ravel(), book.vectors.imag.ravel()])
    sigma = float(np.sqrt(np.mean(comps**2)))
    if sigma == 0:
        raise ValueError("cannot quantize an all-zero codebook")
    step = 6.0 * sigma / (2**bits)
    limit = 3.0 * sigma - step / 2.0

    def q(v):
        return np.clip(step * (np.floor(v / step) + 0.5), -limit, limit)

    quantized = q(book.vectors.real) + 1j * q(book.vectors.imag)
    out = ShapingCodebook(
        vectors=quantized,
        labels=book.labels,
        power_budget=book.power_budget,
        method=book.method,
        solver_iterations=book.solver_iterations,
    )
    return normalize_power(out, book.power_budget)
