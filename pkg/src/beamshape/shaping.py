"""Transmit codebook construction: joint recursion, precoder refinement,
fully-digital bound, and fixed-constellation baselines.

All methods emit a ShapingCodebook of N = 2^n transmit vectors labelled by
(beamspace index, symbol index) and normalized to an exact average power.
The refinement methods (fpss/dpss) warm-start the solver at the unrefined
candidate, so their minimum distance can only improve on it.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import jsonio, qcqp
from .channel import ChannelRealization
from .errors import DegenerateCodebookError, ShapingFailureError
from .precoding import AnalogCodebook
from .qcqp import SolverConfig

DEFAULT_CANDIDATE_CAP = 64

METHODS = ("joss", "fpss", "dpss", "fdss", "bbss", "ubmss", "amss")
CRITERIA = ("mmed", "mser", "mmi")


@dataclass(frozen=True)
class SymbolAllocation:
    """Symbol-set sizes per beamspace; they must sum to the codebook size."""

    sizes: tuple

    def __post_init__(self):
        if any(s < 0 for s in self.sizes):
            raise ValueError("allocation sizes must be nonnegative")

    @property
    def total(self) -> int:
        return int(sum(self.sizes))


@dataclass(frozen=True)
class CandidateSymbolSets:
    """Unprecoded per-beamspace symbol-vector sets, unit average energy each."""

    per_beamspace: tuple
    constellation_tags: tuple

    @property
    def allocation(self) -> SymbolAllocation:
        return SymbolAllocation(tuple(len(s) for s in self.per_beamspace))


@dataclass(frozen=True)
class ShapingCodebook:
    vectors: np.ndarray  # (N, N_t)
    labels: tuple  # (beamspace k, symbol l) per codeword
    power_budget: float
    method: str
    achieved_d_min: float = 0.0
    solver_iterations: int = 0

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=complex)
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def allocation_sizes(self) -> tuple:
        k_max = max(k for k, _ in self.labels)
        sizes = [0] * (k_max + 1)
        for k, _ in self.labels:
            sizes[k] += 1
        return tuple(sizes)


# ---------------------------------------------------------------------------
# Constellations


def qam_constellation(order: int) -> np.ndarray:
    """Unit-average-energy QAM points in a fixed deterministic order.

    Order 1 is the unit symbol, order 2 is BPSK; larger powers of two use a
    rectangular grid (square when the order is an even power of two), rows
    scanned real-major.
    """
    if order < 1 or order & (order - 1):
        raise ValueError(f"constellation order must be a power of two, got {order}")
    if order == 1:
        return np.array([1.0 + 0.0j])
    if order == 2:
        return np.array([1.0 + 0.0j, -1.0 + 0.0j])
    bits = order.bit_length() - 1
    w_re = 2 ** ((bits + 1) // 2)
    w_im = 2 ** (bits // 2)
    re = np.arange(w_re) * 2.0 - (w_re - 1)
    im = np.arange(w_im) * 2.0 - (w_im - 1)
    pts = (re[:, None] + 1j * im[None, :]).reshape(-1)
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def _split_order(order: int, n_streams: int) -> list:
    """Spread log2(order) bits over streams, larger orders first."""
    bits = order.bit_length() - 1
    base, extra = divmod(bits, n_streams)
    return [2 ** (base + (1 if j < extra else 0)) for j in range(n_streams)]


def product_constellation(order: int, n_streams: int) -> tuple[np.ndarray, str]:
    """Per-stream QAM product set of the given size, unit average vector energy.

    When the order is not a perfect n_streams-th power the per-stream orders
    are mixed, with the largest order on the first (strongest) stream.
    """
    orders = _split_order(order, n_streams)
    streams = [qam_constellation(m) for m in orders]
    vectors = np.array([list(combo) for combo in itertools.product(*streams)])
    vectors = vectors / np.sqrt(n_streams)
    tag = "x".join(str(m) for m in orders)
    return vectors, tag


def build_candidate_sets(
    allocations: list, n_rf: int
) -> list[CandidateSymbolSets]:
    """Fixed-QAM candidate sets for every allocation, in allocation order."""
    out = []
    for alloc in allocations:
        sets, tags = [], []
        for size in alloc.sizes:
            if size == 0:
                sets.append(np.zeros((0, n_rf), dtype=complex))
                tags.append("-")
            else:
                vecs, tag = product_constellation(size, n_rf)
                sets.append(vecs)
                tags.append(tag)
        out.append(CandidateSymbolSets(per_beamspace=tuple(sets), constellation_tags=tuple(tags)))
    return out


# ---------------------------------------------------------------------------
# Codebook basics


def min_distance_vectors(vectors: np.ndarray, h: np.ndarray) -> float:
    received = np.asarray(vectors) @ np.asarray(h).T  # (N, N_r)
    n = len(received)
    if n < 2:
        raise ValueError("need at least two codewords")
    diffs = received[:, None, :] - received[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    iu = np.triu_indices(n, k=1)
    return float(dists[iu].min())


def min_distance(book: ShapingCodebook, h: np.ndarray) -> float:
    """Smallest pairwise distance among the noise-free received vectors."""
    return min_distance_vectors(book.vectors, h)


def normalize_power(book: ShapingCodebook, p: float) -> ShapingCodebook:
    """Scale all vectors so the average codeword energy equals p exactly."""
    if p <= 0:
        raise ValueError("target power must be positive")
    current = float(np.mean(np.sum(np.abs(book.vectors) ** 2, axis=1)))
    if current == 0:
        raise DegenerateCodebookError("cannot normalize an all-zero codebook")
    scale = np.sqrt(p / current)
    return ShapingCodebook(
        vectors=book.vectors * scale,
        labels=book.labels,
        power_budget=p,
        method=book.method,
        achieved_d_min=book.achieved_d_min * scale,
        solver_iterations=book.solver_iterations,
    )


# ---------------------------------------------------------------------------
# Allocation enumeration


def _powers_of_two_up_to(n: int) -> list:
    out, p = [], 1
    while p <= n:
        out.append(p)
        p *= 2
    return out


def enumerate_allocations(n_total: int, k_spaces: int, cap: int) -> list[SymbolAllocation]:
    """Top allocations of N over K beamspaces, nonzero parts powers of two.

    Ordered by the energy heuristic sum_k n_k * 2^-k (stronger beamspaces
    carry larger sets first), lazily enumerated best-first and truncated to
    ``cap``.  The single-beamspace allocation always ranks first; the
    uniform allocation over 2^floor(log2 K) beamspaces is forced into the
    result when it exists.
    """
    if n_total < 1 or n_total & (n_total - 1):
        raise ValueError(f"n_total must be a power of two, got {n_total}")
    if k_spaces < 1:
        raise ValueError("k_spaces must be >= 1")
    if cap < 1:
        raise ValueError("cap must be >= 1")

    # Best-first search over partial assignments with an optimistic bound
    # (everything remaining placed at the next slot).
    results: list[tuple] = []
    heap = [(-(n_total * 1.0), (), n_total)]
    while heap and len(results) < cap:
        neg_priority, prefix, remaining = heapq.heappop(heap)
        k = len(prefix)
        if k == k_spaces:
            if remaining == 0:
                results.append(prefix)
            continue
        slots_left = k_spaces - k
        choices = [0] + _powers_of_two_up_to(remaining)
        for n_k in choices:
            rest = remaining - n_k
            if slots_left == 1 and rest != 0:
                continue
            score = sum(p * 2.0**-i for i, p in enumerate(prefix)) + n_k * 2.0**-k
            bound = score + rest * 2.0 ** -(k + 1)
            heapq.heappush(heap, (-bound, prefix + (n_k,), rest))

    allocations = [SymbolAllocation(r) for r in results]
    k_hat = 2 ** int(np.floor(np.log2(k_spaces)))
    if n_total % k_hat == 0 and n_total >= k_hat:
        uniform = tuple(
            n_total // k_hat if k < k_hat else 0 for k in range(k_spaces)
        )
        if uniform not in results:
            if len(allocations) >= cap:
                allocations[-1] = SymbolAllocation(uniform)
            else:
                allocations.append(SymbolAllocation(uniform))
    return allocations


# ---------------------------------------------------------------------------
# Solver dispatch shared by the shaping methods


def _refine(inst, cfg, criterion, snr, n_r, warm_start):
    """Run the criterion's solver in the transmit-power metric.

    The instance is whitened by its power metric first, so the solver's
    Euclidean power is the actual total transmit energy; the returned z is
    mapped back to the layout's coordinates.  Returns (result, score) with
    higher scores better for every criterion.
    """
    solve_inst, s = qcqp.whiten_by_power_metric(inst)
    warm = warm_start
    if s is not None and warm_start is not None:
        warm = qcqp.project_to_whitened(s, np.asarray(warm_start, dtype=complex))
    if criterion == "mmed":
        res = qcqp.solve_min_power(solve_inst, 1.0, cfg, warm_start=warm)
        score = -res.power if res.converged else -np.inf
    elif criterion == "mser":
        budget = inst.n_codewords
        res = qcqp.solve_mser(solve_inst, snr, budget, cfg, warm_start=warm)
        score = -res.objective if res.converged else -np.inf
    elif criterion == "mmi":
        budget = inst.n_codewords
        res = qcqp.solve_mmi(solve_inst, snr, n_r, budget, cfg, warm_start=warm)
        score = res.objective if res.converged else -np.inf
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    if s is not None:
        res = qcqp.SolverResult(
            z=s @ res.z,
            power=res.power,
            min_form_value=res.min_form_value,
            iterations=res.iterations,
            converged=res.converged,
            objective=res.objective,
        )
    return res, score


def _require_criterion_args(criterion, snr):
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    if criterion != "mmed" and (snr is None or snr <= 0):
        raise ValueError(f"criterion {criterion!r} needs a positive design SNR")


# ---------------------------------------------------------------------------
# JOSS: recursive joint optimization


def joss(
    chan: ChannelRealization,
    analog: AnalogCodebook,
    n_bits: int,
    cfg: SolverConfig,
    *,
    criterion: str = "mmed",
    snr: float | None = None,
    power: float = 1.0,
) -> ShapingCodebook:
    """Grow the codebook one codeword at a time, re-solving the joint program.

    The two-codeword stage searches all ordered precoder pairs; each later
    stage extends the winning precoder sequence by every candidate precoder
    and keeps the extension with the best solved objective (ties go to the
    lowest precoder index).
    """
    _require_criterion_args(criterion, snr)
    n = 2**n_bits
    if n < 2:
        raise ValueError("need n_bits >= 1")
    h = chan.h
    n_r = h.shape[0]
    precoders = analog.analog
    k_count = len(precoders)

    def solve_sequence(seq, stage, cand_idx):
        inst = qcqp.build_joss_forms(h, [precoders[k] for k in seq])
        cfg_c = qcqp.per_candidate_config(cfg, stage, cand_idx)
        return _refine(inst, cfg_c, criterion, snr, n_r, None)

    best_seq, best_res, best_score = None, None, -np.inf
    for idx, (a, b) in enumerate(itertools.product(range(k_count), repeat=2)):
        res, score = solve_sequence((a, b), 2, idx)
        if score > best_score:
            best_seq, best_res, best_score = (a, b), res, score
    if best_res is None or not best_res.converged:
        raise ShapingFailureError("no feasible two-codeword seed", partial=best_seq)

    iterations = best_res.iterations
    for t in range(3, n + 1):
        stage_seq, stage_res, stage_score = None, None, -np.inf
        for k in range(k_count):
            res, score = solve_sequence(best_seq + (k,), t, k)
            iterations += res.iterations
            if score > stage_score:
                stage_seq, stage_res, stage_score = best_seq + (k,), res, score
        if stage_res is None or not stage_res.converged:
            raise ShapingFailureError(
                f"no feasible extension at codebook size {t}", partial=best_seq
            )
        best_seq, best_res = stage_seq, stage_res

    n_rf = analog.n_rf
    z = best_res.z
    vectors = np.array(
        [precoders[k] @ z[i * n_rf : (i + 1) * n_rf] for i, k in enumerate(best_seq)]
    )
    counts: dict = {}
    labels = []
    for k in best_seq:
        labels.append((k, counts.get(k, 0)))
        counts[k] = counts.get(k, 0) + 1
    book = ShapingCodebook(
        vectors=vectors,
        labels=tuple(labels),
        power_budget=power,
        method="joss",
        solver_iterations=iterations,
    )
    book = normalize_power(book, power)
    return _with_d_min(book, h)


def _with_d_min(book: ShapingCodebook, h: np.ndarray) -> ShapingCodebook:
    return ShapingCodebook(
        vectors=book.vectors,
        labels=book.labels,
        power_budget=book.power_budget,
        method=book.method,
        achieved_d_min=min_distance(book, h),
        solver_iterations=book.solver_iterations,
    )


# ---------------------------------------------------------------------------
# FPSS / DPSS: candidate refinement


def _fpss_warm_start(k_spaces: int, n_rf: int, candidate: CandidateSymbolSets) -> np.ndarray:
    """Identity digital precoders on the populated beamspaces."""
    q = np.zeros(k_spaces * n_rf * n_rf, dtype=complex)
    eye = np.eye(n_rf, dtype=complex).T.reshape(-1)  # vec column-major
    block = n_rf * n_rf
    for k, sym_set in enumerate(candidate.per_beamspace):
        if len(sym_set):
            q[k * block : (k + 1) * block] = eye
    return q


def _dpss_warm_start(k_spaces: int, n_rf: int, candidate: CandidateSymbolSets) -> np.ndarray:
    q = np.zeros(k_spaces * n_rf, dtype=complex)
    for k, sym_set in enumerate(candidate.per_beamspace):
        if len(sym_set):
            q[k * n_rf : (k + 1) * n_rf] = 1.0
    return q


def _fpss_vectors(analog, z, labels, candidate):
    n_rf = analog[0].shape[1]
    block = n_rf * n_rf
    vectors = []
    for k, l in labels:
        f_bb = z[k * block : (k + 1) * block].reshape(n_rf, n_rf).T  # unvec column-major
        s = candidate.per_beamspace[k][l]
        vectors.append(analog[k] @ f_bb @ s)
    return np.array(vectors)


def _dpss_vectors(analog, z, labels, candidate):
    n_rf = analog[0].shape[1]
    vectors = []
    for k, l in labels:
        d = z[k * n_rf : (k + 1) * n_rf]
        s = candidate.per_beamspace[k][l]
        vectors.append(analog[k] @ (d * s))
    return np.array(vectors)


def _unrefined_vectors(precoders, candidate: CandidateSymbolSets):
    """Candidate codebook through the analog precoders alone (identity digital)."""
    vectors, labels = [], []
    for k, sym_set in enumerate(candidate.per_beamspace):
        for l, s in enumerate(sym_set):
            vectors.append(precoders[k] @ s)
            labels.append((k, l))
    return np.array(vectors), tuple(labels)


def _normalized_d_min(vectors: np.ndarray, h: np.ndarray, power: float) -> float:
    current = float(np.mean(np.sum(np.abs(vectors) ** 2, axis=1)))
    if current == 0:
        return 0.0
    return min_distance_vectors(vectors * np.sqrt(power / current), h)


def _candidate_refinement(
    chan, analog, n_bits, candidates, cfg, method, criterion, snr, power
):
    _require_criterion_args(criterion, snr)
    if not candidates:
        raise ValueError("need at least one candidate symbol-set collection")
    n = 2**n_bits
    h = chan.h
    n_r = h.shape[0]
    precoders = list(analog.analog)
    k_spaces = len(precoders)
    n_rf = analog.n_rf
    build = qcqp.build_fpss_forms if method == "fpss" else qcqp.build_dpss_forms
    warm_fn = _fpss_warm_start if method == "fpss" else _dpss_warm_start
    vec_fn = _fpss_vectors if method == "fpss" else _dpss_vectors

    best = None  # (normalized d_min, vectors, labels)
    iterations = 0
    for c_idx, cand in enumerate(candidates):
        if cand.allocation.total != n:
            raise ValueError(
                f"candidate {c_idx} allocates {cand.allocation.total} symbols, expected {n}"
            )
        inst, labels = build(h, precoders, cand.per_beamspace)
        warm = warm_fn(k_spaces, n_rf, cand)
        cfg_c = qcqp.per_candidate_config(cfg, c_idx)
        res, _ = _refine(inst, cfg_c, criterion, snr, n_r, warm)
        iterations += res.iterations
        # Keep the better of the refined and unrefined codebooks under the
        # criterion, so refinement can never lose to its own starting point.
        unref_vectors, unref_labels = _unrefined_vectors(precoders, cand)
        entries = [(unref_vectors, unref_labels)]
        if res.converged:
            entries.append((vec_fn(precoders, res.z, labels, cand), tuple(labels)))
        for vectors, labs in entries:
            if criterion == "mmed":
                score = _normalized_d_min(vectors, h, power)
            elif criterion == "mser":
                score = -_criterion_objective("mser", vectors, h, power, snr, n_r)
            else:
                score = _criterion_objective("mmi", vectors, h, power, snr, n_r)
            if best is None or score > best[0]:
                best = (score, vectors, labs)
    if best is None:
        raise ShapingFailureError(f"{method}: no candidate produced a feasible codebook")
    _, vectors, labels = best
    book = ShapingCodebook(
        vectors=vectors,
        labels=labels,
        power_budget=power,
        method=method,
        solver_iterations=iterations,
    )
    book = normalize_power(book, power)
    return _with_d_min(book, h)


def _criterion_objective(criterion, vectors, h, power, snr, n_r):
    """Evaluate the smooth design objectives on a power-normalized codebook."""
    current = float(np.mean(np.sum(np.abs(vectors) ** 2, axis=1)))
    if current == 0:
        return np.inf if criterion == "mser" else -np.inf
    scaled = vectors * np.sqrt(power / current)
    received = scaled @ h.T
    diffs = received[:, None, :] - received[None, :, :]
    d2 = np.sum(np.abs(diffs) ** 2, axis=2)
    iu = np.triu_indices(len(scaled), k=1)
    if criterion == "mser":
        return float(np.exp(-snr * d2[iu] / 4.0).sum() / len(scaled))
    inner = np.exp(-snr * d2 / 2.0)
    np.fill_diagonal(inner, 0.0)
    s_i = 1.0 + inner.sum(axis=1)
    n = len(scaled)
    return float(np.log2(n) + n_r * (1.0 - np.log2(np.e)) - np.log2(s_i).mean())


def fpss(
    chan: ChannelRealization,
    analog: AnalogCodebook,
    n_bits: int,
    candidates: list,
    cfg: SolverConfig,
    *,
    criterion: str = "mmed",
    snr: float | None = None,
    power: float = 1.0,
) -> ShapingCodebook:
    """Refine fixed candidate sets with one full digital precoder per beamspace."""
    return _candidate_refinement(
        chan, analog, n_bits, candidates, cfg, "fpss", criterion, snr, power
    )


def dpss(
    chan: ChannelRealization,
    analog: AnalogCodebook,
    n_bits: int,
    candidates: list,
    cfg: SolverConfig,
    *,
    criterion: str = "mmed",
    snr: float | None = None,
    power: float = 1.0,
) -> ShapingCodebook:
    """Refine fixed candidate sets with one diagonal precoder per beamspace."""
    return _candidate_refinement(
        chan, analog, n_bits, candidates, cfg, "dpss", criterion, snr, power
    )


# ---------------------------------------------------------------------------
# FDSS: unconstrained transmit vectors (the performance bound)


def fdss(
    chan: ChannelRealization,
    n_bits: int,
    cfg: SolverConfig,
    *,
    criterion: str = "mmed",
    snr: float | None = None,
    power: float = 1.0,
    warm_vectors: np.ndarray | None = None,
) -> ShapingCodebook:
    """Shape the N transmit vectors directly, without any hybrid structure.

    ``warm_vectors`` optionally seeds the multi-start with an existing
    codebook (any hybrid codebook is a feasible fully-digital one).
    """
    _require_criterion_args(criterion, snr)
    n = 2**n_bits
    h = chan.h
    n_r, n_t = h.shape
    inst = qcqp.build_fdss_forms(h, n)
    warm = None
    if warm_vectors is not None:
        warm = np.asarray(warm_vectors, dtype=complex).reshape(-1)
    res, _ = _refine(inst, cfg, criterion, snr, n_r, warm)
    if not res.converged:
        raise ShapingFailureError("fdss: solver found no feasible point")
    vectors = res.z.reshape(n, n_t)
    book = ShapingCodebook(
        vectors=vectors,
        labels=tuple((0, i) for i in range(n)),
        power_budget=power,
        method="fdss",
        solver_iterations=res.iterations,
    )
    book = normalize_power(book, power)
    return _with_d_min(book, h)


# ---------------------------------------------------------------------------
# Baselines


def baseline(
    chan: ChannelRealization,
    analog: AnalogCodebook,
    n_bits: int,
    mode: str,
    *,
    power: float = 1.0,
    candidate_cap: int = DEFAULT_CANDIDATE_CAP,
) -> ShapingCodebook:
    """Fixed-constellation baselines.

    bbss: product QAM on the strongest beamspace through its companion
    digital precoder.  ubmss: equal-size product QAM over the strongest
    2^floor(log2 K) beamspaces, analog precoders only.  amss: best
    enumerated power-of-two allocation with fixed QAM sets, analog
    precoders only (so it is exactly the best unrefined candidate).
    """
    n = 2**n_bits
    h = chan.h
    precoders = list(analog.analog)
    k_count = len(precoders)
    n_rf = analog.n_rf
    if mode == "bbss":
        sym, _ = product_constellation(n, n_rf)
        eff = precoders[0] @ analog.companion_digital[0]
        vectors = np.array([eff @ s for s in sym])
        labels = tuple((0, l) for l in range(n))
    elif mode == "ubmss":
        k_hat = 2 ** int(np.floor(np.log2(k_count)))
        if n % k_hat != 0:
            raise ValueError(f"ubmss needs {k_hat} to divide codebook size {n}")
        per = n // k_hat
        sym, _ = product_constellation(per, n_rf)
        vectors, labels = [], []
        for k in range(k_hat):
            for l, s in enumerate(sym):
                vectors.append(precoders[k] @ s)
                labels.append((k, l))
        vectors = np.array(vectors)
        labels = tuple(labels)
    elif mode == "amss":
        allocations = enumerate_allocations(n, k_count, candidate_cap)
        candidates = build_candidate_sets(allocations, n_rf)
        best = None
        for cand in candidates:
            stacked, labs = _unrefined_vectors(precoders, cand)
            d = _normalized_d_min(stacked, h, power)
            if d > 0 and (best is None or d > best[0]):
                best = (d, stacked, labs)
        if best is None:
            raise ShapingFailureError("amss: every allocation produced a degenerate codebook")
        vectors, labels = best[1], best[2]
    else:
        raise ValueError(f"unknown baseline mode {mode!r}")
    book = ShapingCodebook(
        vectors=np.asarray(vectors), labels=labels, power_budget=power, method=mode
    )
    book = normalize_power(book, power)
    return _with_d_min(book, h)


# ---------------------------------------------------------------------------
# Serialization: {"method", "n_bits", "power", "vectors", "labels",
# "d_min_design"} with complex numbers as [re, im].


def to_json_dict(book: ShapingCodebook) -> dict:
    n = len(book)
    return {
        "method": book.method,
        "n_bits": int(np.log2(n)),
        "power": book.power_budget,
        "vectors": jsonio.complex_to_pairs(book.vectors),
        "labels": [list(l) for l in book.labels],
        "d_min_design": book.achieved_d_min,
    }


def from_json_dict(doc: dict) -> ShapingCodebook:
    return ShapingCodebook(
        vectors=jsonio.pairs_to_complex(doc["vectors"]),
        labels=tuple(tuple(l) for l in doc["labels"]),
        power_budget=float(doc["power"]),
        method=doc["method"],
        achieved_d_min=float(doc.get("d_min_design", 0.0)),
    )


def save_codebook(book: ShapingCodebook, path) -> None:
    jsonio.dump_json(to_json_dict(book), path)


def load_codebook(path) -> ShapingCodebook:
    return from_json_dict(jsonio.load_json(path))
