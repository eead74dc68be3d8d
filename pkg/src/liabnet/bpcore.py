"""Message passing over the degree-constraint factor graph.

Each bank contributes two function nodes, one for its residual credit (row)
and one for its residual debt (column); each unknown entry is a binary
variable attached to exactly two factors.  A factor with residual strength
rho requires at least r = floor(rho) + 1 incident links (0 for zero
residual), because entries are capped at 1.

The fixed point of the cavity equations yields link marginals, the mean
link density, and a Bethe estimate of the fugacity-weighted log-count of
admissible supports.  A support ensemble at fugacity z puts weight
z^(number of links) on every support whose degrees satisfy all factors.

Messages are updated at an internal per-factor weight zeta = sqrt(z).
Each link is shared by two factors, so weighting both factor sums by
zeta^m charges zeta^2 = z per link, which reproduces the z^(links)
ensemble; running the same equations with z in place of zeta would charge
z^2 per link (checked against exhaustive enumeration in the tests).

The limits z -> 0 (sparsest admissible graphs) and z -> infinity (complete
graph) are selected by passing z = 0.0 or z = math.inf and use exact
closed forms, never extreme floats.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .netcore import ReducedProblem

__all__ = [
    "LocallyInfeasible",
    "FactorGraph",
    "BPOptions",
    "MessageSet",
    "EntropyPoint",
    "EntropyCurve",
    "build_factor_graph",
    "node_weights",
    "bp_fixed_point",
    "link_marginals",
    "mean_density",
    "bethe_entropy",
    "sigma_curve",
    "calibrate_fugacity",
    "write_entropy_csv",
    "read_entropy_csv",
    "BPState",
    "make_state",
    "run_sweeps",
    "state_marginals",
    "required_degrees",
]

logger = logging.getLogger(__name__)

# Residuals at or below this are treated as exactly zero (no links required).
ZERO_RESIDUAL_ATOL = 1e-9


class LocallyInfeasible(ValueError):
    """Some factor requires more links than it has slots."""

    def __init__(self, labels: tuple[str, ...]):
        super().__init__(f"locally infeasible factors: {', '.join(labels)}")
        self.labels = labels


def required_degrees(residuals: np.ndarray) -> np.ndarray:
    """Minimum link counts: 0 at zero residual, floor(residual) + 1 otherwise.

    The +1 is strict: a residual exactly equal to an integer still demands
    one more link than that integer, matching a strict step-function cost.
    """
    residuals = np.asarray(residuals, dtype=float)
    r = np.floor(residuals).astype(int) + 1
    r[residuals <= ZERO_RESIDUAL_ATOL] = 0
    return r


@dataclass(frozen=True)
class FactorGraph:
    """Padded-array view of the 2N-factor, M-variable constraint graph.

    Factor f < n is bank f's row (credit) side; factor n + j is bank j's
    column (debt) side.  slot_var[f, s] is the variable in slot s of factor
    f (-1 pads), and var_slot_row/var_slot_col give each variable's slot
    position inside its two factors.
    """

    n: int
    unknown: tuple[tuple[int, int], ...]
    k: np.ndarray
    r: np.ndarray
    residual: np.ndarray
    slot_var: np.ndarray
    slot_valid: np.ndarray
    var_slot_row: np.ndarray
    var_slot_col: np.ndarray
    var_row_factor: np.ndarray
    var_col_factor: np.ndarray
    infeasible_factors: tuple[str, ...]

    @property
    def m_total(self) -> int:
        return len(self.unknown)

    @property
    def n_factors(self) -> int:
        return 2 * self.n

    @property
    def max_degree(self) -> int:
        return self.slot_var.shape[1]

    def factor_label(self, f: int) -> str:
        return f"out:{f}" if f < self.n else f"in:{f - self.n}"


def build_factor_graph(p: ReducedProblem, strict: bool = True) -> FactorGraph:
    """Assemble the factor graph for a reduced problem.

    Args:
        p: unknown entries plus residual strengths.
        strict: raise LocallyInfeasible when some factor needs more links
            than it has slots; pass False to get the graph with the
            offending factors recorded instead.

    Raises:
        LocallyInfeasible: in strict mode, naming the offending banks.
    """
    n = p.n
    m = p.m
    residual = np.concatenate([p.res_out, p.res_in])
    r = required_degrees(residual)
    neighbor_lists: list[list[int]] = [[] for _ in range(2 * n)]
    for e, (i, j) in enumerate(p.unknown):
        neighbor_lists[i].append(e)
        neighbor_lists[n + j].append(e)
    k = np.array([len(lst) for lst in neighbor_lists], dtype=int)
    kmax = max(1, int(k.max(initial=0)))
    slot_var = np.full((2 * n, kmax), -1, dtype=int)
    slot_valid = np.zeros((2 * n, kmax), dtype=bool)
    var_slot_row = np.zeros(m, dtype=int)
    var_slot_col = np.zeros(m, dtype=int)
    for f, lst in enumerate(neighbor_lists):
        for s, e in enumerate(lst):
            slot_var[f, s] = e
            slot_valid[f, s] = True
            if f < n:
                var_slot_row[e] = s
            else:
                var_slot_col[e] = s
    bad = tuple(
        (f"out:{f}" if f < n else f"in:{f - n}")
        for f in range(2 * n)
        if r[f] > k[f]
    )
    if bad and strict:
        raise LocallyInfeasible(bad)
    var_row_factor = np.array([i for i, _ in p.unknown], dtype=int).reshape(m)
    var_col_factor = np.array([n + j for _, j in p.unknown], dtype=int).reshape(m)
    arrays = (
        k,
        r,
        residual,
        slot_var,
        slot_valid,
        var_slot_row,
        var_slot_col,
        var_row_factor,
        var_col_factor,
    )
    for arr in arrays:
        arr.setflags(write=False)
    return FactorGraph(
        n=n,
        unknown=p.unknown,
        k=k,
        r=r,
        residual=residual,
        slot_var=slot_var,
        slot_valid=slot_valid,
        var_slot_row=var_slot_row,
        var_slot_col=var_slot_col,
        var_row_factor=var_row_factor,
        var_col_factor=var_col_factor,
        infeasible_factors=bad,
    )


@dataclass(frozen=True)
class BPOptions:
    tol: float = 1e-10
    max_sweeps: int = 1000
    damping: float = 0.5
    init: float = 0.5

    def __post_init__(self) -> None:
        if not 0 <= self.damping < 1:
            raise ValueError("damping must be in [0, 1)")
        if not 0 < self.init < 1:
            raise ValueError("init must be strictly inside (0, 1)")


@dataclass(frozen=True)
class MessageSet:
    """Converged (or last) directed messages.

    mu_row[e] is the message from e's row factor toward its column factor;
    mu_col[e] the reverse.  z is the user-facing fugacity.
    """

    z: float
    mu_row: np.ndarray
    mu_col: np.ndarray
    converged: bool
    sweeps: int
    residual: float

    def mu(self, factor: int, variable: int, g: FactorGraph) -> float:
        """Message from the given factor along the given variable."""
        if factor < g.n:
            return float(self.mu_row[variable])
        return float(self.mu_col[variable])


def node_weights(incoming: Sequence[float], m_max: int) -> np.ndarray:
    """Probabilities V^0..V^m_max that exactly m of the incoming links are on.

    Computed by the one-link-at-a-time recursion
    V^m_{S} = (1 - mu) V^m_{S minus b} + mu V^{m-1}_{S minus b}.
    """
    mus = np.asarray(incoming, dtype=float)
    if np.any((mus < 0) | (mus > 1)):
        raise ValueError("messages must lie in [0, 1]")
    v = np.zeros(m_max + 1)
    v[0] = 1.0
    for mu in mus:
        prev = v.copy()
        v *= 1.0 - mu
        v[1:] += mu * prev[:-1]
    return v


# ---------------------------------------------------------------------------
# Vectorized sweep machinery

MODE_FINITE = "finite"
MODE_SPARSE = "sparse"  # z -> 0 limit
MODE_DENSE = "dense"  # z -> infinity limit


def _mode_of(z: float) -> tuple[str, float]:
    if z == 0.0:
        return MODE_SPARSE, 0.0
    if math.isinf(z):
        return MODE_DENSE, 0.0
    if not z > 0:
        raise ValueError("fugacity must be positive (or the 0 / inf sentinels)")
    # Internal per-factor weight: zeta = sqrt(z), so the two factor sides
    # of a link jointly charge z per link.
    return MODE_FINITE, 0.5 * math.log(z)


@dataclass
class BPState:
    """Mutable message-passing state; owned by one fixed-point run.

    The decimation driver pins variables by setting active to False and
    forcing both messages to 0 (an exact removal in the V recursion),
    adjusting residual/r/k_eff as links are committed.
    """

    g: FactorGraph
    z: float
    mode: str
    log_zeta: float
    mu_row: np.ndarray
    mu_col: np.ndarray
    active: np.ndarray
    residual: np.ndarray
    r: np.ndarray
    k_eff: np.ndarray
    degenerate: int = 0


def make_state(g: FactorGraph, z: float, init: float = 0.5) -> BPState:
    mode, log_zeta = _mode_of(z)
    m = g.m_total
    return BPState(
        g=g,
        z=z,
        mode=mode,
        log_zeta=log_zeta,
        mu_row=np.full(m, init),
        mu_col=np.full(m, init),
        active=np.ones(m, dtype=bool),
        residual=np.array(g.residual),
        r=np.array(g.r),
        k_eff=np.array(g.k),
    )


def _incoming(state: BPState) -> np.ndarray:
    """(F, K) matrix of messages arriving at each factor slot; 0 on pads."""
    g = state.g
    safe = np.where(g.slot_valid, g.slot_var, 0)
    is_row = np.arange(g.n_factors)[:, None] < g.n
    inc = np.where(is_row, state.mu_col[safe], state.mu_row[safe])
    inc[~g.slot_valid] = 0.0
    return inc


def _full_weights(inc: np.ndarray) -> np.ndarray:
    """(F, K+1) degree distribution V^m over each factor's full slot set."""
    fcount, kmax = inc.shape
    v = np.zeros((fcount, kmax + 1))
    v[:, 0] = 1.0
    for t in range(kmax):
        mu_t = inc[:, t][:, None]
        shifted = np.empty_like(v)
        shifted[:, 0] = 0.0
        shifted[:, 1:] = v[:, :-1]
        v = v * (1.0 - mu_t) + shifted * mu_t
    return v


def _cavity_weights(inc: np.ndarray, v_full: np.ndarray) -> np.ndarray:
    """(F, K, K+1) cavity distributions: v_full with one slot peeled off.

    Uses the forward division recursion where the peeled message is < 0.5
    and the backward one otherwise, so the per-step error amplification
    factor never exceeds 1.  The last coefficient column is zero padding
    (a cavity set of K-1 slots has degree at most K-1).
    """
    fcount, kmax = inc.shape
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        fwd = np.zeros((fcount, kmax, kmax + 1))
        one_minus = 1.0 - inc
        fwd[:, :, 0] = v_full[:, 0][:, None] / one_minus
        for m in range(1, kmax):
            fwd[:, :, m] = (v_full[:, m][:, None] - inc * fwd[:, :, m - 1]) / one_minus
        bwd = np.zeros((fcount, kmax, kmax + 1))
        bwd[:, :, kmax - 1] = v_full[:, kmax][:, None] / inc
        for m in range(kmax - 2, -1, -1):
            bwd[:, :, m] = (v_full[:, m + 1][:, None] - one_minus * bwd[:, :, m + 1]) / inc
    use_fwd = (inc < 0.5)[:, :, None]
    cav = np.where(use_fwd, fwd, bwd)
    cav = np.nan_to_num(cav, nan=0.0, posinf=0.0, neginf=0.0)
    np.clip(cav, 0.0, None, out=cav)
    sums = cav.sum(axis=2, keepdims=True)
    np.divide(cav, sums, out=cav, where=sums > 0)
    return cav


def _logsumexp_last(arr: np.ndarray) -> np.ndarray:
    mx = arr.max(axis=-1)
    finite = np.isfinite(mx)
    out = np.full(mx.shape, -np.inf)
    if np.any(finite):
        shifted = np.exp(arr[finite] - mx[finite][..., None])
        out[finite] = mx[finite] + np.log(shifted.sum(axis=-1))
    return out


def _slot_messages(state: BPState, cav: np.ndarray) -> np.ndarray:
    """(F, K) fresh outgoing messages given cavity weights per slot."""
    g = state.g
    fcount, kmax = g.n_factors, g.max_degree
    r = state.r[:, None]
    if state.mode == MODE_DENSE:
        return np.ones((fcount, kmax))
    if state.mode == MODE_SPARSE:
        # mu = V^{r-1} / (V^{r-1} + V^r); the r = 0 convention zeroes the
        # numerator, so unneeded links vanish in the sparsest limit.
        idx = np.broadcast_to(r[..., None], (fcount, kmax, 1))
        v_r = np.take_along_axis(cav, np.minimum(idx, kmax), axis=2)[:, :, 0]
        r_prev = np.maximum(r - 1, 0)
        idx_prev = np.broadcast_to(r_prev[..., None], (fcount, kmax, 1))
        v_prev = np.take_along_axis(cav, idx_prev, axis=2)[:, :, 0]
        v_prev = np.where(r > 0, v_prev, 0.0)
        den = v_prev + v_r
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(den > 0, v_prev / den, 0.5)
        state.degenerate += int(np.count_nonzero((den <= 0) & g.slot_valid))
        return mu
    with np.errstate(divide="ignore"):
        log_cav = np.where(cav > 0, np.log(np.maximum(cav, 1e-300)), -np.inf)
    mrange = np.arange(kmax + 1)
    terms = log_cav + state.log_zeta * mrange
    terms = np.where(mrange[None, None, :] >= r[..., None], terms, -np.inf)
    log_w = _logsumexp_last(terms)  # log sum_{m >= r} zeta^m V^m
    r_prev = np.maximum(r - 1, 0)
    idx_prev = np.broadcast_to(r_prev[..., None], (fcount, kmax, 1))
    log_a = np.take_along_axis(log_cav, idx_prev, axis=2)[:, :, 0] + state.log_zeta * r
    log_a = np.where(r > 0, log_a, -np.inf)
    log_num = np.logaddexp(log_a, state.log_zeta + log_w)
    log_den = np.logaddexp(log_num, log_w)
    with np.errstate(invalid="ignore"):
        mu = np.exp(log_num - log_den)
    bad = ~np.isfinite(mu)
    if np.any(bad & state.g.slot_valid):
        state.degenerate += int(np.count_nonzero(bad & state.g.slot_valid))
    mu = np.where(bad, 0.5, mu)
    return mu


def _sweep(state: BPState, damping: float) -> float:
    """One synchronous update of every message; returns the max change."""
    g = state.g
    inc = _incoming(state)
    v_full = _full_weights(inc)
    cav = _cavity_weights(inc, v_full)
    msg = _slot_messages(state, cav)
    np.clip(msg, 0.0, 1.0, out=msg)
    fresh_row = msg[g.var_row_factor, g.var_slot_row]
    fresh_col = msg[g.var_col_factor, g.var_slot_col]
    new_row = damping * state.mu_row + (1.0 - damping) * fresh_row
    new_col = damping * state.mu_col + (1.0 - damping) * fresh_col
    act = state.active
    delta = 0.0
    if np.any(act):
        delta = max(
            float(np.max(np.abs(new_row[act] - state.mu_row[act]))),
            float(np.max(np.abs(new_col[act] - state.mu_col[act]))),
        )
    state.mu_row[act] = new_row[act]
    state.mu_col[act] = new_col[act]
    return delta


def run_sweeps(state: BPState, opts: BPOptions) -> tuple[bool, int, float]:
    """Iterate synchronous sweeps until the max message change is below tol."""
    if state.g.m_total == 0 or not np.any(state.active):
        return True, 0, 0.0
    if state.mode == MODE_DENSE:
        state.mu_row[state.active] = 1.0
        state.mu_col[state.active] = 1.0
        return True, 1, 0.0
    delta = math.inf
    for sweep in range(1, opts.max_sweeps + 1):
        delta = _sweep(state, opts.damping)
        lo = min(state.mu_row.min(initial=1.0), state.mu_col.min(initial=1.0))
        hi = max(state.mu_row.max(initial=0.0), state.mu_col.max(initial=0.0))
        assert lo >= -1e-12 and hi <= 1 + 1e-12, "message left [0, 1]"
        if delta < opts.tol:
            return True, sweep, delta
    return False, opts.max_sweeps, delta


def bp_fixed_point(
    g: FactorGraph,
    z: float,
    opts: BPOptions = BPOptions(),
    init: MessageSet | None = None,
) -> MessageSet:
    """Run message passing to a fixed point at fugacity z.

    Args:
        g: factor graph (must be locally feasible).
        z: fugacity; 0.0 selects the sparsest-graph limit equations and
            math.inf the complete-graph limit.
        opts: tolerance, sweep cap, damping, and initial message value.
        init: optional warm-start messages from a previous run.

    Returns:
        MessageSet with converged flag, sweep count, and final residual;
        a non-converged run returns the last messages rather than raising.
    """
    if g.infeasible_factors:
        raise LocallyInfeasible(g.infeasible_factors)
    state = make_state(g, z, init=opts.init)
    if init is not None:
        state.mu_row[:] = init.mu_row
        state.mu_col[:] = init.mu_col
    converged, sweeps, resid = run_sweeps(state, opts)
    if not converged:
        logger.warning(
            "message passing not converged at z=%g: residual %.3e after %d sweeps",
            z,
            resid,
            sweeps,
        )
    mu_row = state.mu_row.copy()
    mu_col = state.mu_col.copy()
    mu_row.setflags(write=False)
    mu_col.setflags(write=False)
    return MessageSet(
        z=z,
        mu_row=mu_row,
        mu_col=mu_col,
        converged=converged,
        sweeps=sweeps,
        residual=resid,
    )


def state_marginals(mu_row: np.ndarray, mu_col: np.ndarray) -> tuple[np.ndarray, int]:
    """Link presence probabilities from the two directed messages per variable."""
    num = mu_row * mu_col
    den = num + (1.0 - mu_row) * (1.0 - mu_col)
    degenerate = int(np.count_nonzero(den <= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(den > 0, num / den, 0.5)
    return np.clip(p, 0.0, 1.0), degenerate


def link_marginals(m: MessageSet) -> np.ndarray:
    """Per-variable probability that the link is present, aligned with U."""
    p, degenerate = state_marginals(m.mu_row, m.mu_col)
    if degenerate:
        logger.warning("%d degenerate link marginals set to 0.5", degenerate)
    return p


def mean_density(p_map: Sequence[float]) -> float:
    """Mean sparsity of the marginal ensemble: 1 - mean link probability."""
    p = np.asarray(p_map, dtype=float)
    if p.size == 0:
        raise ValueError("no marginals given")
    return float(1.0 - p.mean())


def bethe_entropy(g: FactorGraph, m: MessageSet, z: float) -> float:
    """Per-variable log of the fugacity-weighted admissible-support count.

    Factor terms carry the zeta^m weights consistent with the message
    equations; at z = 1 this is the plain log-count, so a fully forced
    instance scores exactly 0 there.  Returns -inf (with a log record)
    when some variable's messages are contradictory.
    """
    mode, log_zeta = _mode_of(z)
    if mode != MODE_FINITE:
        raise ValueError("entropy is defined for finite positive z only")
    if g.m_total == 0:
        return 0.0
    state = make_state(g, z)
    state.mu_row[:] = m.mu_row
    state.mu_col[:] = m.mu_col
    inc = _incoming(state)
    v_full = _full_weights(inc)
    with np.errstate(divide="ignore"):
        log_v = np.where(v_full > 0, np.log(np.maximum(v_full, 1e-300)), -np.inf)
    mrange = np.arange(g.max_degree + 1)
    terms = log_v + log_zeta * mrange
    in_window = (mrange[None, :] >= g.r[:, None]) & (mrange[None, :] <= g.k[:, None])
    terms = np.where(in_window, terms, -np.inf)
    factor_terms = _logsumexp_last(terms)
    live = g.k > 0
    if not np.all(np.isfinite(factor_terms[live])):
        logger.warning("contradictory factor in entropy evaluation")
        return float("-inf")
    edge = m.mu_row * m.mu_col + (1.0 - m.mu_row) * (1.0 - m.mu_col)
    if np.any(edge <= 0):
        logger.warning(
            "%d contradictory variables in entropy evaluation",
            int(np.count_nonzero(edge <= 0)),
        )
        return float("-inf")
    total = float(factor_terms[live].sum()) - float(np.log(edge).sum())
    return total / g.m_total


@dataclass(frozen=True)
class EntropyPoint:
    z: float
    lambda_hat: float
    entropy: float
    sigma: float
    converged: bool


@dataclass(frozen=True)
class EntropyCurve:
    """Per-fugacity summary: density, weighted entropy S, and Sigma.

    Sigma(lambda_hat) = S(z) - (1 - lambda_hat) log z is the log-count of
    admissible supports at the typical density selected by z.
    """

    points: tuple[EntropyPoint, ...]


def sigma_curve(g: FactorGraph, z_grid: Sequence[float], opts: BPOptions = BPOptions()) -> EntropyCurve:
    """Evaluate density and entropies over a sorted positive fugacity grid.

    math.inf is allowed as an endpoint (complete graph: density 1, a single
    configuration, Sigma = 0).  Non-converged points are flagged and the
    curve continues.
    """
    zs = list(z_grid)
    if any(z <= 0 for z in zs):
        raise ValueError("fugacity grid must be strictly positive")
    if sorted(zs) != zs:
        raise ValueError("fugacity grid must be sorted ascending")
    points = []
    for z in zs:
        if math.isinf(z):
            points.append(EntropyPoint(z, 0.0, math.inf, 0.0, True))
            continue
        msgs = bp_fixed_point(g, z, opts)
        lam = mean_density(link_marginals(msgs))
        s = bethe_entropy(g, msgs, z)
        sigma = s - (1.0 - lam) * math.log(z)
        points.append(EntropyPoint(z, lam, s, sigma, msgs.converged))
    return EntropyCurve(tuple(points))


def calibrate_fugacity(
    g: FactorGraph,
    target_lambda: float,
    opts: BPOptions = BPOptions(),
    z_lo: float = 1e-4,
    z_hi: float = 1e4,
    tol: float = 5e-3,
    max_iter: int = 60,
) -> tuple[float, float]:
    """Find z whose mean density matches a target sparsity, by bisection.

    lambda_hat(z) is non-increasing in z, so log-space bisection applies.
    Returns the endpoint when the target is outside the reachable range.
    """
    if not 0 <= target_lambda <= 1:
        raise ValueError("target sparsity must be in [0, 1]")

    def density(z: float) -> float:
        return mean_density(link_marginals(bp_fixed_point(g, z, opts)))

    lam_lo = density(z_lo)
    if lam_lo <= target_lambda + tol:
        return z_lo, lam_lo
    lam_hi = density(z_hi)
    if lam_hi >= target_lambda - tol:
        return z_hi, lam_hi
    lo, hi = math.log(z_lo), math.log(z_hi)
    z, lam = z_lo, lam_lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        z = math.exp(mid)
        lam = density(z)
        if abs(lam - target_lambda) <= tol:
            return z, lam
        if lam > target_lambda:
            lo = mid
        else:
            hi = mid
    return z, lam


def _fmt(x: float) -> str:
    return repr(float(x))


def write_entropy_csv(path: str, curve: EntropyCurve) -> None:
    lines = ["z,lambda_hat,S,Sigma,converged"]
    for pt in curve.points:
        lines.append(
            ",".join(
                [
                    _fmt(pt.z),
                    _fmt(pt.lambda_hat),
                    _fmt(pt.entropy),
                    _fmt(pt.sigma),
                    "true" if pt.converged else "false",
                ]
            )
        )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_entropy_csv(path: str) -> EntropyCurve:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "z,lambda_hat,S,Sigma,converged":
            raise ValueError(f"unrecognized entropy header: {header!r}")
        points = []
        for line in fh:
            if not line.strip():
                continue
            z, lam, s, sigma, conv = line.strip().split(",")
            points.append(
                EntropyPoint(float(z), float(lam), float(s), float(sigma), conv == "true")
            )
    return EntropyCurve(tuple(points))
