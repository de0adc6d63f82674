"""Pairwise-distance quadratic forms and the max-min / SER / MI solvers.

Every shaping layout rewrites the received pairwise distance as a Hermitian
quadratic form z^H Z_p z of one flat variable vector z.  The construction is
the same for all layouts: with R the Gram matrix of the layout's stacked
mixing matrix through the channel and delta the difference of two selector
vectors,

    Z_p = R  *  outer(conj(delta), delta)     (elementwise product)

which is Hermitian PSD by the Schur product theorem.  Layouts differ only
in the mixing matrix and the selectors:

    joss:  G = per-codeword analog precoders, selectors g_i kron ones(N_RF)
    fpss:  W = each precoder repeated N_RF times, selectors pick a beamspace
           block holding s kron ones(N_RF); q stacks vec(F_BB) column-major
    dpss:  W_hat = the K precoders side by side, selectors g_k kron s
    fdss:  identity mixing; z stacks the transmit vectors themselves

The min-power solver is a multi-start projected gradient ascent of the
smallest form value on the unit sphere, smoothed by an annealed softmin.
Accepted iterates only ever improve, restarts are independently seeded, and
every candidate (including a user warm start) competes on the final scaled
power, so a feasible warm start can never be worsened.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import jsonio
from .channel import mix_seed

LAYOUTS = ("joss", "fpss", "dpss", "fdss")


@dataclass(frozen=True)
class QcqpInstance:
    """Hermitian PSD forms, one per unordered codeword pair.

    ``power_metric``, when present, is the PSD matrix M with
    sum_i ||x_i||^2 = z^H M z; it lets callers rephrase the program in a
    whitened variable whose Euclidean norm is the true transmit power.
    """

    forms: np.ndarray  # (n_pairs, dim, dim)
    dim: int
    layout: str
    pair_index: tuple
    power_metric: np.ndarray | None = None

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.forms.shape != (len(self.pair_index), self.dim, self.dim):
            raise ValueError("forms shape disagrees with pair count and dim")

    @property
    def n_codewords(self) -> int:
        return 1 + max(max(i, j) for i, j in self.pair_index)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    tol: float = 1e-6
    restarts: int = 8
    seed: int = 0
    smoothing_schedule: tuple = (10.0, 3.0, 1.0, 0.3, 0.1)
    step_rule: str = "backtracking"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_rule != "backtracking":
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if any(t <= 0 for t in self.smoothing_schedule):
            raise ValueError("smoothing temperatures must be positive")


@dataclass
class SolverResult:
    z: np.ndarray
    power: float
    min_form_value: float
    iterations: int
    converged: bool
    objective: float | None = None
    trace: list | None = None


# ---------------------------------------------------------------------------
# Form construction


def _gram(h: np.ndarray, mixing: np.ndarray) -> np.ndarray:
    hm = h @ mixing
    r = hm.conj().T @ hm
    return 0.5 * (r + r.conj().T)


def _power_metric(mixing: np.ndarray, selectors: np.ndarray) -> np.ndarray:
    """M with sum_i ||mixing @ (z * e_i)||^2 = z^H M z."""
    gram = mixing.conj().T @ mixing
    gram = 0.5 * (gram + gram.conj().T)
    m = np.zeros_like(gram)
    for e in selectors:
        m += gram * np.outer(e.conj(), e)
    return m


def _pair_forms(r: np.ndarray, selectors: np.ndarray, layout: str, metric=None) -> QcqpInstance:
    n = selectors.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    forms = np.empty((len(pairs), r.shape[0], r.shape[1]), dtype=complex)
    for p, (i, j) in enumerate(pairs):
        delta = selectors[i] - selectors[j]
        forms[p] = r * np.outer(delta.conj(), delta)
    forms.setflags(write=False)
    return QcqpInstance(
        forms=forms, dim=r.shape[0], layout=layout, pair_index=tuple(pairs),
        power_metric=metric,
    )


def build_joss_forms(h: np.ndarray, precoders: Sequence[np.ndarray]) -> QcqpInstance:
    """Forms over the stacked precoded symbol vectors, dim = N * N_RF."""
    n = len(precoders)
    n_rf = precoders[0].shape[1]
    g = np.hstack(list(precoders))
    selectors = np.kron(np.eye(n), np.ones(n_rf))
    return _pair_forms(_gram(h, g), selectors, "joss", _power_metric(g, selectors))


def build_fpss_forms(
    h: np.ndarray,
    analog: Sequence[np.ndarray],
    candidate_sets: Sequence[np.ndarray],
) -> tuple[QcqpInstance, list]:
    """Forms over the stacked full digital precoders, dim = K * N_RF^2.

    Block k of the variable holds vec(F_BB^k) stacked column-major, so the
    selector for symbol s is kron(s, ones(N_RF)) inside its beamspace block.
    Returns the instance plus (beamspace, symbol) labels in codeword order.
    """
    k_spaces = len(analog)
    n_rf = analog[0].shape[1]
    w = np.hstack([np.hstack([f] * n_rf) for f in analog])
    selectors, labels = [], []
    block = n_rf * n_rf
    for k, sym_set in enumerate(candidate_sets):
        for l, s in enumerate(np.reshape(sym_set, (-1, n_rf))):
            e = np.zeros(k_spaces * block, dtype=complex)
            e[k * block : (k + 1) * block] = np.kron(s, np.ones(n_rf))
            selectors.append(e)
            labels.append((k, l))
    selectors = np.array(selectors)
    inst = _pair_forms(_gram(h, w), selectors, "fpss", _power_metric(w, selectors))
    return inst, labels


def build_dpss_forms(
    h: np.ndarray,
    analog: Sequence[np.ndarray],
    candidate_sets: Sequence[np.ndarray],
) -> tuple[QcqpInstance, list]:
    """Forms over the stacked diagonal precoder entries, dim = K * N_RF."""
    k_spaces = len(analog)
    n_rf = analog[0].shape[1]
    w = np.hstack(list(analog))
    selectors, labels = [], []
    for k, sym_set in enumerate(candidate_sets):
        for l, s in enumerate(np.reshape(sym_set, (-1, n_rf))):
            e = np.zeros(k_spaces * n_rf, dtype=complex)
            e[k * n_rf : (k + 1) * n_rf] = s
            selectors.append(e)
            labels.append((k, l))
    selectors = np.array(selectors)
    inst = _pair_forms(_gram(h, w), selectors, "dpss", _power_metric(w, selectors))
    return inst, labels


def build_fdss_forms(h: np.ndarray, n_codewords: int) -> QcqpInstance:
    """Forms over the stacked transmit vectors themselves, dim = N * N_t."""
    n_t = h.shape[1]
    r = _gram(h, np.eye(n_t))
    big_r = np.tile(r, (n_codewords, n_codewords))
    selectors = np.kron(np.eye(n_codewords), np.ones(n_t))
    return _pair_forms(big_r, selectors, "fdss")


def whiten_by_power_metric(inst: QcqpInstance):
    """Rewrite the program in a variable whose norm is the transmit power.

    With M = inst.power_metric (sum_i ||x_i||^2 = z^H M z) and M's thin
    eigenfactor S = Q_r diag(lam_r)^(-1/2), the substitution z = S y turns
    every form into S^H Z S while y^H y becomes the total transmit energy.
    Directions in M's null space carry no transmit power and no distance,
    so dropping them is exact.  Returns (reduced instance, S); S is None
    when the instance has no metric (z already is the transmit stack).
    """
    if inst.power_metric is None:
        return inst, None
    lam, q = np.linalg.eigh(inst.power_metric)
    keep = lam > 1e-12 * max(lam[-1], 1e-300)
    s = q[:, keep] / np.sqrt(lam[keep])
    forms = np.einsum("ai,pab,bj->pij", s.conj(), inst.forms, s)
    forms = 0.5 * (forms + forms.conj().swapaxes(1, 2))
    reduced = QcqpInstance(
        forms=forms, dim=int(keep.sum()), layout=inst.layout, pair_index=inst.pair_index
    )
    return reduced, s


def project_to_whitened(s: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Map an original-coordinate warm start into the whitened variable.

    Uses the metric's eigenfactor left inverse; components in the dropped
    null space never influenced the codebook, so the round trip preserves
    the transmit vectors exactly.
    """
    # s = Q_r diag(lam_r)^(-1/2)  =>  left inverse is diag(lam_r)^(1/2) Q_r^H
    gram = s.conj().T @ s  # = diag(1/lam_r)
    return np.linalg.solve(gram, s.conj().T @ z)


def build_distance_forms(chan, layout: str, **layout_args) -> QcqpInstance:
    """Dispatch on layout; ``chan`` is a ChannelRealization or a plain matrix."""
    h = chan.h if hasattr(chan, "h") else np.asarray(chan, dtype=complex)
    if layout == "joss":
        return build_joss_forms(h, layout_args["precoders"])
    if layout == "fpss":
        return build_fpss_forms(h, layout_args["analog"], layout_args["candidate_sets"])[0]
    if layout == "dpss":
        return build_dpss_forms(h, layout_args["analog"], layout_args["candidate_sets"])[0]
    if layout == "fdss":
        return build_fdss_forms(h, layout_args["n_codewords"])
    raise ValueError(f"unknown layout {layout!r}")


# ---------------------------------------------------------------------------
# Solvers


def _form_values(forms: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fz = forms @ z
    v = np.maximum(np.real(fz @ z.conj()), 0.0)
    return v, fz


def _support_mask(forms: np.ndarray) -> np.ndarray:
    """Components touched by at least one form; the rest must stay zero."""
    diag = np.abs(np.diagonal(forms, axis1=1, axis2=2))
    return diag.max(axis=0) > 0


def _ascend(forms, z, objective, budget, tol, trace=None):
    """Projected gradient ascent on the unit sphere with backtracking.

    ``objective(v)`` returns (value, pair weights); the ascent direction is
    sum_p w_p Z_p z projected tangent to the sphere.  Only improving steps
    are accepted.  Returns the final iterate, the best min-form value seen
    with its iterate, and the number of objective evaluations used.
    """
    v, fz = _form_values(forms, z)
    f, w = objective(v)
    best_min, best_z = float(v.min()), z
    evals = 1
    alpha = 0.5
    while evals < budget:
        g = w @ fz
        g = g - np.vdot(z, g) * z
        gn = np.linalg.norm(g)
        if gn <= 1e-14 * max(1.0, abs(f)):
            break
        direction = g / gn
        accepted = False
        step = alpha
        while step > 1e-13 and evals < budget:
            z_new = z + step * direction
            z_new = z_new / np.linalg.norm(z_new)
            v_new, fz_new = _form_values(forms, z_new)
            f_new, w_new = objective(v_new)
            evals += 1
            if f_new > f + 1e-4 * step * gn:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        gain = f_new - f
        z, v, fz, f, w = z_new, v_new, fz_new, f_new, w_new
        mn = float(v.min())
        if mn > best_min:
            best_min, best_z = mn, z
        if trace is not None:
            trace.append((len(trace), float(f), mn))
        alpha = min(step * 2.0, 1.0)
        if gain <= tol * max(abs(f), 1e-300):
            break
    return z, best_min, best_z, evals


def _softmin_objective(temperature: float):
    def objective(v):
        m = v.min()
        e = np.exp(-(v - m) / temperature)
        s = e.sum()
        return m - temperature * np.log(s), e / s

    return objective


def _starts(inst: QcqpInstance, cfg: SolverConfig, warm_start):
    mask = _support_mask(inst.forms)
    out = []
    if warm_start is not None:
        z0 = np.asarray(warm_start, dtype=complex) * mask
        norm = np.linalg.norm(z0)
        if norm > 0:
            out.append(z0 / norm)
    for r in range(cfg.restarts):
        rng = np.random.default_rng(mix_seed(cfg.seed, r))
        z0 = (rng.standard_normal(inst.dim) + 1j * rng.standard_normal(inst.dim)) * mask
        norm = np.linalg.norm(z0)
        if norm > 0:
            out.append(z0 / norm)
    return out


def solve_min_power(
    inst: QcqpInstance,
    d_target: float,
    cfg: SolverConfig,
    warm_start: np.ndarray | None = None,
    record_trace: bool = False,
) -> SolverResult:
    """Minimize z^H z subject to z^H Z_p z >= d_target^2 for every pair.

    Maximizes the smallest form value on the unit sphere through an annealed
    softmin, then scales the best direction to meet the target exactly.  The
    returned power never exceeds a feasible warm start's, restarts are
    deterministic, and ties are broken toward the earlier candidate.
    """
    if d_target <= 0:
        raise ValueError("d_target must be positive")
    forms = inst.forms
    trace: list | None = [] if record_trace else None
    # Two fixed sharpening stages follow the configured schedule: the
    # max-min optimum usually sits on a constraint intersection that the
    # last configured temperature still smooths over.
    schedule = tuple(cfg.smoothing_schedule) + (0.03, 0.01)
    best_min, best_z, total_evals = -1.0, None, 0
    for z0 in _starts(inst, cfg, warm_start):
        v0, _ = _form_values(forms, z0)
        cand_min, cand_z = float(v0.min()), z0
        z = z0
        budget = cfg.max_iters
        for t_rel in schedule:
            if budget <= 0:
                break
            v, _ = _form_values(forms, z)
            scale = float(v.min())
            if scale <= 0:
                scale = max(float(v.mean()), 1e-30)
            z, stage_min, stage_z, used = _ascend(
                forms, z, _softmin_objective(t_rel * scale), budget, cfg.tol, trace
            )
            budget -= used
            total_evals += used
            if stage_min > cand_min:
                cand_min, cand_z = stage_min, stage_z
        if cand_min > best_min:
            best_min, best_z = cand_min, cand_z
    if best_z is None or best_min <= 0:
        z_out = best_z if best_z is not None else np.zeros(inst.dim, dtype=complex)
        v_out, _ = _form_values(forms, z_out)
        return SolverResult(
            z=z_out,
            power=float(np.vdot(z_out, z_out).real),
            min_form_value=float(v_out.min()),
            iterations=total_evals,
            converged=False,
            trace=trace,
        )
    z_out = best_z * (d_target / np.sqrt(best_min))
    v_out, _ = _form_values(forms, z_out)
    power = float(np.vdot(z_out, z_out).real)
    return SolverResult(
        z=z_out,
        power=power,
        min_form_value=float(v_out.min()),
        iterations=total_evals,
        converged=True,
        trace=trace,
    )


def _solve_on_sphere(inst, cfg, warm_start, objective_builder):
    """Shared multi-start driver for the smooth SER / MI criteria."""
    forms = inst.forms
    best_f, best_z, total_evals = -np.inf, None, 0
    for z0 in _starts(inst, cfg, warm_start):
        z, _, _, used = _ascend(forms, z0, objective_builder, cfg.max_iters, cfg.tol)
        total_evals += used
        v, _ = _form_values(forms, z)
        f, _ = objective_builder(v)
        if f > best_f:
            best_f, best_z = f, z
    if best_z is None:
        best_z = np.zeros(inst.dim, dtype=complex)
    return best_f, best_z, total_evals


def solve_mser(
    inst: QcqpInstance,
    rho: float,
    power_budget: float,
    cfg: SolverConfig,
    warm_start: np.ndarray | None = None,
) -> SolverResult:
    """Minimize the pairwise-error exponential sum at SNR rho on the power ball.

    Works in the log domain (the objective is the negated log-sum of
    exp(-rho * v_p / 4) terms), which keeps gradients alive deep in the
    high-SNR regime.  Accepted iterates are monotone in the true objective.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if power_budget <= 0:
        raise ValueError("power_budget must be positive")
    n = inst.n_codewords

    def objective(v_unit):
        a = rho * power_budget * v_unit / 4.0
        m = a.min()
        e = np.exp(-(a - m))
        s = e.sum()
        f = m - np.log(s)
        return f, (rho * power_budget / 4.0) * (e / s)

    best_f, best_z, evals = _solve_on_sphere(inst, cfg, warm_start, objective)
    z_out = best_z * np.sqrt(power_budget)
    v, _ = _form_values(inst.forms, z_out)
    mean_exp = float(np.exp(-rho * v / 4.0).sum() / n)
    return SolverResult(
        z=z_out,
        power=float(np.vdot(z_out, z_out).real),
        min_form_value=float(v.min()),
        iterations=evals,
        converged=best_z is not None,
        objective=mean_exp,
    )


def mser_objective_value(inst: QcqpInstance, z: np.ndarray, rho: float) -> float:
    """Average pairwise error bound (1/2N) sum_{i != i'} exp(-rho v / 4)."""
    v, _ = _form_values(inst.forms, np.asarray(z, dtype=complex))
    return float(np.exp(-rho * v / 4.0).sum() / inst.n_codewords)


def mmi_objective_value(inst: QcqpInstance, z: np.ndarray, rho: float, n_r: int) -> float:
    """Mutual-information lower bound evaluated from the pair form values."""
    n = inst.n_codewords
    v, _ = _form_values(inst.forms, np.asarray(z, dtype=complex))
    s_i = np.ones(n)
    for p, (i, j) in enumerate(inst.pair_index):
        term = np.exp(-rho * v[p] / 2.0)
        s_i[i] += term
        s_i[j] += term
    return float(np.log2(n) + n_r * (1.0 - np.log2(np.e)) - np.log2(s_i).mean())


def solve_mmi(
    inst: QcqpInstance,
    rho: float,
    n_r: int,
    power_budget: float,
    cfg: SolverConfig,
    warm_start: np.ndarray | None = None,
) -> SolverResult:
    """Maximize the mutual-information lower bound on the power ball."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if power_budget <= 0:
        raise ValueError("power_budget must be positive")
    n = inst.n_codewords
    pair_i = np.array([i for i, _ in inst.pair_index])
    pair_j = np.array([j for _, j in inst.pair_index])

    def objective(v_unit):
        terms = np.exp(-rho * power_budget * v_unit / 2.0)
        s_i = np.ones(n)
        np.add.at(s_i, pair_i, terms)
        np.add.at(s_i, pair_j, terms)
        f = np.log2(n) + n_r * (1.0 - np.log2(np.e)) - np.log2(s_i).mean()
        weights = terms * (1.0 / s_i[pair_i] + 1.0 / s_i[pair_j])
        weights *= rho * power_budget / (2.0 * n * np.log(2.0))
        return f, weights

    best_f, best_z, evals = _solve_on_sphere(inst, cfg, warm_start, objective)
    z_out = best_z * np.sqrt(power_budget)
    v, _ = _form_values(inst.forms, z_out)
    return SolverResult(
        z=z_out,
        power=float(np.vdot(z_out, z_out).real),
        min_form_value=float(v.min()),
        iterations=evals,
        converged=best_z is not None,
        objective=mmi_objective_value(inst, z_out, rho, n_r),
    )


def per_candidate_config(cfg: SolverConfig, *keys) -> SolverConfig:
    """Derive a config whose seed mixes in the candidate coordinates."""
    return replace(cfg, seed=mix_seed(cfg.seed, *keys))


# ---------------------------------------------------------------------------
# Debug export


def instance_to_json_dict(inst: QcqpInstance) -> dict:
    return {
        "layout": inst.layout,
        "dim": inst.dim,
        "pair_index": [list(p) for p in inst.pair_index],
        "forms": [jsonio.complex_to_pairs(f) for f in inst.forms],
    }


def write_trace_csv(trace: list, path) -> None:
    jsonio.write_csv(path, ["iter", "objective", "min_form"], [list(r) for r in trace])
