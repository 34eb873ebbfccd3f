"""Entropy-regularized optimal transport between pixel feature sets.

Solves ``min_pi <C, pi> + eps * sum_ij pi_ij log pi_ij`` over couplings with
prescribed marginals, the strictly convex relaxation whose optimum is the
Sinkhorn fixed point ``pi = diag(u) exp(-C / eps) diag(v)``. Note the sign
convention: the objective *subtracts* Shannon entropy, so larger ``eps``
yields blurrier couplings and ``eps -> 0`` recovers exact transport.

The default path iterates in the log domain, which is immune to the
underflow that raw squared-distance costs cause at ``eps = 0.1``. A dense
kernel mode is available as an opt-in fast path for well-scaled costs.

For instances of at most ``CANONICAL_REDUCTION_LIMIT`` entries the inner
log-sum-exp reductions sort their addends before summing. The sum then
depends only on the multiset of values, which makes the solver exactly
equivariant under row or column permutations of the cost matrix. Larger
instances use plain vectorized reductions for throughput.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import (
    ConvergenceWarning,
    DimensionError,
    InputError,
    NumericalError,
    SizeError,
    ValidationError,
)

# Largest n*m for which reductions are order-canonical (sorted before summing).
CANONICAL_REDUCTION_LIMIT = 250_000

# Chunk size (in matrix entries) for streaming reductions over large costs.
_CHUNK_ENTRIES = 20_000_000

ORACLE_MAX_ENTRIES = 64


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver settings.

    `epsilon` weighs the entropy term, `tolerance` bounds the L-infinity
    marginal violation at which iteration stops. `normalize_cost` divides
    the cost matrix by its maximum before solving (this rescales the
    effective epsilon, so it is explicit and echoed in score metadata).
    `anderson_memory` > 0 enables Anderson acceleration of the potential
    updates, which pays off in stiff small-epsilon regimes.
    """

    epsilon: float = 0.1
    max_iterations: int = 1000
    tolerance: float = 1e-6
    log_domain: bool = True
    normalize_cost: bool = False
    anderson_memory: int = 0

    def __post_init__(self) -> None:
        if not (self.epsilon > 0):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.tolerance > 0):
            raise ValidationError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.anderson_memory < 0:
            raise ValidationError(f"anderson_memory must be >= 0, got {self.anderson_memory}")


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise squared-Euclidean costs, float64, all entries >= 0."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"cost matrix must be 2-D, got shape {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class CouplingMatrix:
    """A transport plan with its marginals and solve diagnostics.

    `marginal_violation` is the largest deviation of the realized row or
    column sums from the prescribed marginals, measured on `values` itself.
    `violation_history` records the violation seen at the start of each
    iteration (diagnostic; empty for oracle-produced plans).
    """

    values: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool = True
    iterations: int = 0
    marginal_violation: float = 0.0
    violation_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        row = np.ascontiguousarray(self.row_marginal, dtype=np.float64)
        col = np.ascontiguousarray(self.col_marginal, dtype=np.float64)
        if values.ndim != 2 or values.shape != (row.size, col.size):
            raise ValidationError(
                f"coupling shape {values.shape} does not match marginals ({row.size}, {col.size})"
            )
        if values.size and float(values.min()) < 0.0:
            raise ValidationError(f"coupling has negative entry {float(values.min())}")
        total = float(values.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"coupling mass {total} deviates from 1 by more than 1e-9")
        for arr in (values, row, col):
            arr.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_marginal", row)
        object.__setattr__(self, "col_marginal", col)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _as_cost_array(cost: CostMatrix | np.ndarray) -> np.ndarray:
    if isinstance(cost, CostMatrix):
        return cost.values
    arr = np.ascontiguousarray(cost, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"cost matrix must be 2-D, got shape {arr.shape}")
    return arr


def compute_cost_matrix(
    source_features: np.ndarray, target_features: np.ndarray
) -> CostMatrix:
    """Squared L2 distances between all source/target feature pairs.

    Differences are accumulated in float64. Identical vectors yield an
    exact zero because the entry is a sum of squared elementwise
    differences, never a catastrophic cancellation.
    """
    src = np.asarray(source_features)
    tgt = np.asarray(target_features)
    if src.ndim != 2 or tgt.ndim != 2:
        raise DimensionError(
            f"feature arrays must be 2-D [P, C], got {src.shape} and {tgt.shape}"
        )
    if src.shape[1] != tgt.shape[1]:
        raise DimensionError(
            f"channel mismatch: source has {src.shape[1]}, target has {tgt.shape[1]}"
        )
    ns, c = src.shape
    nt = tgt.shape[0]
    src64 = src.astype(np.float64, copy=False)
    tgt64 = tgt.astype(np.float64, copy=False)
    out = np.empty((ns, nt), dtype=np.float64)
    rows = max(1, _CHUNK_ENTRIES // max(1, nt * c))
    for i0 in range(0, ns, rows):
        diff = src64[i0 : i0 + rows, None, :] - tgt64[None, :, :]
        np.einsum("ijk,ijk->ij", diff, diff, out=out[i0 : i0 + rows])
    np.maximum(out, 0.0, out=out)
    return CostMatrix(values=out)


# ---------------------------------------------------------------------------
# log-domain reductions


def _lse_cols(m_cost: np.ndarray, eps: float, add: np.ndarray, canonical: bool) -> np.ndarray:
    """logsumexp over rows of (-cost/eps + add[:, None]), one value per column."""
    n, m = m_cost.shape
    out = np.empty(m, dtype=np.float64)
    cols = max(1, _CHUNK_ENTRIES // max(1, n))
    for j0 in range(0, m, cols):
        t = m_cost[:, j0 : j0 + cols] / (-eps)
        t += add[:, None]
        mx = t.max(axis=0)
        t -= mx[None, :]
        np.exp(t, out=t)
        if canonical:
            t = np.sort(t, axis=0)
        out[j0 : j0 + cols] = mx + np.log(t.sum(axis=0))
    return out


def _lse_rows(m_cost: np.ndarray, eps: float, add: np.ndarray, canonical: bool) -> np.ndarray:
    """logsumexp over columns of (-cost/eps + add[None, :]), one value per row."""
    n, m = m_cost.shape
    out = np.empty(n, dtype=np.float64)
    rows = max(1, _CHUNK_ENTRIES // max(1, m))
    for i0 in range(0, n, rows):
        t = m_cost[i0 : i0 + rows] / (-eps)
        t += add[None, :]
        mx = t.max(axis=1)
        t -= mx[:, None]
        np.exp(t, out=t)
        if canonical:
            t = np.sort(t, axis=1)
        out[i0 : i0 + rows] = mx + np.log(t.sum(axis=1))
    return out


def _materialize_plan(m_cost: np.ndarray, eps: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    n, m = m_cost.shape
    plan = np.empty((n, m), dtype=np.float64)
    rows = max(1, _CHUNK_ENTRIES // max(1, m))
    for i0 in range(0, n, rows):
        t = m_cost[i0 : i0 + rows] / (-eps)
        t += u[i0 : i0 + rows, None]
        t += v[None, :]
        np.exp(t, out=plan[i0 : i0 + rows])
    return plan


def _final_violation(plan: np.ndarray, a: np.ndarray, b: np.ndarray, canonical: bool) -> float:
    row_sums = plan.sum(axis=1)
    if canonical:
        col_sums = np.sort(plan, axis=0).sum(axis=0)
    else:
        col_sums = plan.sum(axis=0)
    return float(max(np.abs(row_sums - a).max(), np.abs(col_sums - b).max()))


def _sinkhorn_log_plain(
    m_cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    config: SinkhornConfig,
    canonical: bool,
) -> tuple[np.ndarray, bool, int, list[float]]:
    eps = config.epsilon
    with np.errstate(divide="ignore"):
        loga = np.log(a)
        logb = np.log(b)
    u = np.zeros(a.size, dtype=np.float64)
    v = np.zeros(b.size, dtype=np.float64)
    violations: list[float] = []
    converged = False
    iterations = 0
    while iterations < config.max_iterations:
        s = _lse_cols(m_cost, eps, u, canonical)
        if iterations > 0:
            # after each round the row sums are exact by construction, so the
            # column sums of the current plan decide convergence; they come
            # free from the s just computed
            viol = float(np.abs(np.exp(v + s) - b).max())
            violations.append(viol)
            if viol <= config.tolerance:
                converged = True
                break
        v = logb - s
        u = loga - _lse_rows(m_cost, eps, v, canonical)
        iterations += 1
    plan = _materialize_plan(m_cost, eps, u, v)
    return plan, converged, iterations, violations


def _sinkhorn_log_anderson(
    m_cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    config: SinkhornConfig,
    canonical: bool,
) -> tuple[np.ndarray, bool, int, list[float]]:
    """Log-domain iterations with safeguarded Anderson acceleration.

    Each evaluation of the full update map costs one iteration. Trial
    extrapolations are kept only while their residual stays controlled;
    a plain finishing round restores exact row marginals at the end.
    """
    eps = config.epsilon
    with np.errstate(divide="ignore"):
        loga = np.log(a)
        logb = np.log(b)
    memory = config.anderson_memory
    u = np.zeros(a.size, dtype=np.float64)
    v_state: np.ndarray | None = None
    t_state: np.ndarray | None = None
    violations: list[float] = []
    iterations = 0

    def g_eval(point: np.ndarray) -> tuple[np.ndarray, float]:
        """One full update from `point`; also reports the marginal violation
        of the plan formed by `point` with the pre-update potentials."""
        nonlocal v_state, t_state, iterations
        s = _lse_cols(m_cost, eps, point, canonical)
        if v_state is None:
            viol = math.inf
        else:
            # wild extrapolation candidates may overflow exp; inf is the
            # right verdict for them
            with np.errstate(over="ignore"):
                viol = float(np.abs(np.exp(v_state + s) - b).max())
                viol = max(viol, float(np.abs(np.exp(point + t_state) - a).max()))
            violations.append(viol)
        v_state = logb - s
        t_state = _lse_rows(m_cost, eps, v_state, canonical)
        iterations += 1
        return loga - t_state, viol

    history_x: list[np.ndarray] = []
    history_f: list[np.ndarray] = []
    converged = False
    while iterations < config.max_iterations:
        u_next, viol = g_eval(u)
        if viol <= config.tolerance:
            converged = True
            break
        residual = u_next - u
        history_x.append(u)
        history_f.append(residual)
        if len(history_x) > memory + 1:
            history_x.pop(0)
            history_f.pop(0)
        if len(history_f) >= 2 and iterations < config.max_iterations:
            d_f = np.stack(
                [history_f[i + 1] - history_f[i] for i in range(len(history_f) - 1)], axis=1
            )
            d_x = np.stack(
                [history_x[i + 1] - history_x[i] for i in range(len(history_x) - 1)], axis=1
            )
            gamma, *_ = np.linalg.lstsq(d_f, residual, rcond=None)
            candidate = u + residual - (d_x + d_f) @ gamma
            if np.isfinite(candidate).all():
                cand_next, cand_viol = g_eval(candidate)
                if cand_viol <= config.tolerance:
                    u = candidate
                    converged = True
                    break
                cand_residual = cand_next - candidate
                if float(np.linalg.norm(cand_residual)) <= 2.0 * float(np.linalg.norm(residual)):
                    history_x.append(candidate)
                    history_f.append(cand_residual)
                    if len(history_x) > memory + 1:
                        history_x.pop(0)
                        history_f.pop(0)
                    u = cand_next
                    continue
                # extrapolation overshot: forget the history and fall through
                # to the plain update
                history_x.clear()
                history_f.clear()
        u = u_next
    # one plain finishing round: exact row marginals regardless of how the
    # accelerated iterates drifted
    v = logb - _lse_cols(m_cost, eps, u, canonical)
    u = loga - _lse_rows(m_cost, eps, v, canonical)
    iterations += 1
    plan = _materialize_plan(m_cost, eps, u, v)
    return plan, converged, iterations, violations


def _sinkhorn_log(
    m_cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    config: SinkhornConfig,
    canonical: bool,
) -> tuple[np.ndarray, bool, int, list[float]]:
    if config.anderson_memory:
        return _sinkhorn_log_anderson(m_cost, a, b, config, canonical)
    return _sinkhorn_log_plain(m_cost, a, b, config, canonical)


def _sinkhorn_dense(
    m_cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    config: SinkhornConfig,
) -> tuple[np.ndarray, bool, int, list[float]]:
    kernel = np.exp(m_cost / (-config.epsilon))
    if not np.isfinite(kernel).all():
        raise NumericalError("kernel overflow in dense mode; retry with log_domain=True")
    if (kernel.sum(axis=1) == 0.0).any() or (kernel.sum(axis=0) == 0.0).any():
        raise NumericalError(
            "kernel underflowed to zero rows or columns in dense mode; retry with log_domain=True"
        )
    u = np.ones(a.size, dtype=np.float64)
    v = np.ones(b.size, dtype=np.float64)
    violations: list[float] = []
    converged = False
    iterations = 0
    while iterations < config.max_iterations:
        ktu = kernel.T @ u
        if iterations > 0:
            viol = float(np.abs(v * ktu - b).max())
            violations.append(viol)
            if viol <= config.tolerance:
                converged = True
                break
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            v = b / ktu
            kv = kernel @ v
            u = a / kv
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise NumericalError(
                "scaling vectors overflowed in dense mode; retry with log_domain=True"
            )
        iterations += 1
    plan = (u[:, None] * kernel) * v[None, :]
    return plan, converged, iterations, violations


def sinkhorn(
    cost: CostMatrix | np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    config: SinkhornConfig | None = None,
) -> CouplingMatrix:
    """Solve entropy-regularized transport between histograms `a` and `b`.

    Returns the coupling whose marginal violation is at most
    ``config.tolerance``, or the final iterate with ``converged=False``
    (and a :class:`ConvergenceWarning`) after ``config.max_iterations``.
    Output is deterministic for fixed inputs.
    """
    config = config or SinkhornConfig()
    m_cost = _as_cost_array(cost)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or m_cost.shape != (a.size, b.size):
        raise DimensionError(
            f"cost shape {m_cost.shape} does not match marginals ({a.size}, {b.size})"
        )
    if not np.isfinite(m_cost).all():
        raise InputError("cost matrix has non-finite entries")
    if (a < 0).any() or (b < 0).any():
        raise ValidationError("marginals must be nonnegative")
    if abs(float(a.sum()) - 1.0) > 1e-9 or abs(float(b.sum()) - 1.0) > 1e-9:
        raise ValidationError("marginals must each sum to 1 within 1e-9")
    if config.normalize_cost:
        top = float(m_cost.max()) if m_cost.size else 0.0
        if top > 0:
            m_cost = m_cost / top
    canonical = m_cost.size <= CANONICAL_REDUCTION_LIMIT
    if config.log_domain:
        plan, converged, iterations, violations = _sinkhorn_log(m_cost, a, b, config, canonical)
    else:
        plan, converged, iterations, violations = _sinkhorn_dense(m_cost, a, b, config)
    final_violation = _final_violation(plan, a, b, canonical)
    if config.log_domain and config.anderson_memory:
        # the finishing round moved the iterate; judge convergence on the plan itself
        converged = final_violation <= config.tolerance
    if not converged:
        warnings.warn(
            f"sinkhorn stopped after {iterations} iterations with marginal violation "
            f"{final_violation:.3e} (tolerance {config.tolerance:.1e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return CouplingMatrix(
        values=plan,
        row_marginal=a,
        col_marginal=b,
        converged=converged,
        iterations=iterations,
        marginal_violation=final_violation,
        violation_history=tuple(violations),
    )


def transport_cost(cost: CostMatrix | np.ndarray, coupling: CouplingMatrix | np.ndarray) -> float:
    """Total transport cost ``sum_ij c_ij pi_ij`` (entropy term excluded)."""
    m_cost = _as_cost_array(cost)
    plan = coupling.values if isinstance(coupling, CouplingMatrix) else np.asarray(coupling, dtype=np.float64)
    if m_cost.shape != plan.shape:
        raise DimensionError(f"cost shape {m_cost.shape} != coupling shape {plan.shape}")
    return float(np.vdot(m_cost, plan))


def exact_ot_oracle(
    cost: CostMatrix | np.ndarray, a: np.ndarray, b: np.ndarray
) -> CouplingMatrix:
    """Exact unregularized transport plan for desk-scale instances.

    Solves the transportation linear program directly; the plan's cost
    lower-bounds the cost of every feasible coupling. Limited to
    ``n * m <= 64`` entries.
    """
    m_cost = _as_cost_array(cost)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n, m = m_cost.shape
    if (a.size, b.size) != (n, m):
        raise DimensionError(
            f"cost shape {m_cost.shape} does not match marginals ({a.size}, {b.size})"
        )
    if n * m > ORACLE_MAX_ENTRIES:
        raise SizeError(
            f"oracle handles at most {ORACLE_MAX_ENTRIES} entries, got {n}x{m}"
        )
    if abs(float(a.sum()) - 1.0) > 1e-9 or abs(float(b.sum()) - 1.0) > 1e-9:
        raise ValidationError("marginals must each sum to 1 within 1e-9")
    rows = []
    for i in range(n):
        coeff = np.zeros((n, m))
        coeff[i, :] = 1.0
        rows.append(coeff.ravel())
    for j in range(m):
        coeff = np.zeros((n, m))
        coeff[:, j] = 1.0
        rows.append(coeff.ravel())
    # drop the final (redundant) balance constraint for full row rank
    a_eq = np.asarray(rows)[:-1]
    b_eq = np.concatenate([a, b])[:-1]
    result = linprog(m_cost.ravel(), A_eq=a_eq, b_eq=b_eq, method="highs")
    if not result.success:
        raise NumericalError(f"exact transport LP failed: {result.message}")
    plan = np.clip(result.x.reshape(n, m), 0.0, None)
    violation = float(
        max(np.abs(plan.sum(axis=1) - a).max(), np.abs(plan.sum(axis=0) - b).max())
    )
    return CouplingMatrix(
        values=plan,
        row_marginal=a,
        col_marginal=b,
        converged=True,
        iterations=0,
        marginal_violation=violation,
    )
