"""Synthetic credit-network generators with seeded, reproducible draws.

Two interbank ensembles are provided: independent uniform entries and
heavy-tailed shifted-Pareto entries with density p(x) proportional to
(b + x)^(-mu-1), mean b/(mu-1).  Each off-diagonal slot is empty with
probability 1 - link_prob, independently of everything else.

Draw order is part of the reproducibility contract: from a fresh
generator seeded with spec.seed, the n*n presence mask is drawn first
(row-major), then the n*n entry values (row-major; diagonal and masked
draws are consumed and discarded), then the capitals.  Optional economy
closure re-routes every bank's net position through bank 0 so that each
bank's row and column sums match; bank 0 balances automatically because
the net positions sum to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contagion import CapitalVector
from .netcore import LiabilityMatrix

__all__ = [
    "EnsembleSpec",
    "gen_uniform",
    "gen_powerlaw",
    "generate",
    "assign_capital",
    "spec_from_dict",
    "spec_to_dict",
]

KINDS = ("uniform", "powerlaw")


@dataclass(frozen=True)
class EnsembleSpec:
    """Parameters of one synthetic network draw.

    link_prob is the probability that an off-diagonal slot carries a
    positive entry (the complement of the ensemble sparsity).  capital is
    either a single constant or a (low, high) range for independent
    uniform capitals.  closure adds the balancing bank 0.
    """

    kind: str
    n: int
    link_prob: float
    b: float = 0.01
    mu: float = 2.0
    capital: float | tuple[float, float] = 0.3
    seed: int = 0
    closure: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.n < 2:
            raise ValueError("need at least two banks")
        if not 0.0 <= self.link_prob <= 1.0:
            raise ValueError("link_prob must be in [0, 1]")
        if not self.b > 0:
            raise ValueError("scale b must be positive")
        if not self.mu > 1:
            raise ValueError("tail exponent mu must exceed 1 for a finite mean")
        if isinstance(self.capital, tuple):
            lo, hi = self.capital
            if lo > hi:
                raise ValueError("capital range must have low <= high")
            if lo < 0:
                raise ValueError("capitals must be nonnegative")
        elif self.capital < 0:
            raise ValueError("capitals must be nonnegative")

    @property
    def sparsity(self) -> float:
        return 1.0 - self.link_prob


def assign_capital(spec: EnsembleSpec, rng: np.random.Generator) -> CapitalVector:
    """Constant or uniform-range capitals, independent of the matrix draw."""
    if isinstance(spec.capital, tuple):
        lo, hi = spec.capital
        c = lo + (hi - lo) * rng.random(spec.n)
    else:
        c = np.full(spec.n, float(spec.capital))
    return CapitalVector(c)


def _close_economy(entries: np.ndarray) -> None:
    """Route each bank's net position through bank 0 so row sums equal
    column sums everywhere; operates in place on the entries array."""
    entries[0, :] = 0.0
    entries[:, 0] = 0.0
    net = entries.sum(axis=1) - entries.sum(axis=0)
    lenders = net > 0
    borrowers = net < 0
    entries[0, lenders] = net[lenders]
    entries[borrowers, 0] = -net[borrowers]


def _masked_matrix(spec: EnsembleSpec, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    entries = np.where(mask, values, 0.0)
    np.fill_diagonal(entries, 0.0)
    if spec.closure:
        _close_economy(entries)
    return entries


def gen_uniform(spec: EnsembleSpec) -> tuple[LiabilityMatrix, CapitalVector]:
    """Entries uniform in [0, 1] on present links.

    Returns the matrix and capitals from a single seeded stream; identical
    specs reproduce identical outputs bit for bit.
    """
    if spec.kind != "uniform":
        raise ValueError("spec.kind must be 'uniform'")
    rng = np.random.default_rng(spec.seed)
    mask = rng.random((spec.n, spec.n)) < spec.link_prob
    values = rng.random((spec.n, spec.n))
    entries = _masked_matrix(spec, values, mask)
    return LiabilityMatrix(entries), assign_capital(spec, rng)


def gen_powerlaw(spec: EnsembleSpec) -> tuple[LiabilityMatrix, CapitalVector]:
    """Entries from the shifted-Pareto law on present links.

    Values come from the inverse CDF x = b * (u^(-1/mu) - 1) with u uniform
    on (0, 1], so F(x) = 1 - (b / (b + x))^mu.  No truncation is applied;
    arbitrarily large entries are legitimate and are typically disclosed
    by the observation threshold downstream.
    """
    if spec.kind != "powerlaw":
        raise ValueError("spec.kind must be 'powerlaw'")
    rng = np.random.default_rng(spec.seed)
    mask = rng.random((spec.n, spec.n)) < spec.link_prob
    u = 1.0 - rng.random((spec.n, spec.n))
    values = spec.b * (u ** (-1.0 / spec.mu) - 1.0)
    entries = _masked_matrix(spec, values, mask)
    return LiabilityMatrix(entries), assign_capital(spec, rng)


def generate(spec: EnsembleSpec) -> tuple[LiabilityMatrix, CapitalVector]:
    """Dispatch on spec.kind."""
    if spec.kind == "uniform":
        return gen_uniform(spec)
    return gen_powerlaw(spec)


def spec_to_dict(spec: EnsembleSpec) -> dict:
    cap = spec.capital
    return {
        "kind": spec.kind,
        "n": spec.n,
        "link_prob": spec.link_prob,
        "b": spec.b,
        "mu": spec.mu,
        "capital": list(cap) if isinstance(cap, tuple) else cap,
        "seed": spec.seed,
        "closure": spec.closure,
    }


def spec_from_dict(d: dict) -> EnsembleSpec:
    """Build a spec from parsed JSON; unknown keys are rejected."""
    allowed = {"kind", "n", "link_prob", "b", "mu", "capital", "seed", "closure"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown ensemble fields: {sorted(extra)}")
    if "kind" not in d or "n" not in d or "link_prob" not in d:
        raise ValueError("ensemble config needs at least kind, n, link_prob")
    kwargs = dict(d)
    cap = kwargs.get("capital")
    if isinstance(cap, (list, tuple)):
        if len(cap) != 2:
            raise ValueError("capital range must be a [low, high] pair")
        kwargs["capital"] = (float(cap[0]), float(cap[1]))
    return EnsembleSpec(**kwargs)
