"""Truncated dynamics, the coupled pair, and closed-form error bounds.

The truncated network forbids a neuron to fire while it already has ``n``
spikes in its memory window.  Driving the full and the truncated network
with the same candidate stream couples them exactly; the fraction of time
their states differ estimates the total-variation distance between their
stationary laws, which the closed-form ``truncation_bound`` dominates at a
super-exponential rate in ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, NetworkConfig, PlasticState, WindowState, firing_rate
from .sim import _Process, _unit_edges, candidate_stream

__all__ = [
    "CouplingStats",
    "truncated_rate",
    "simulate_coupled",
    "truncation_bound",
    "density_bound",
]


def truncated_rate(
    state: WindowState,
    cfg: NetworkConfig,
    i: int,
    n: int,
    weights: PlasticState | None = None,
) -> float:
    """Firing rate of neuron ``i`` under truncation at level ``n``: the full
    rate while the neuron has fewer than ``n`` window spikes, else 0."""
    if n < 1:
        raise ConfigError(f"truncation level must be >= 1, got {n}")
    if state.count(cfg.neuron_unit(i)) >= n:
        return 0.0
    return firing_rate(state, cfg, i, weights)


def _union_measure(
    diffs: list[np.ndarray], theta: float, horizon: float
) -> tuple[float, int, int, list[float]]:
    """Lebesgue measure of the union of [d, d+theta) over all per-unit
    symmetric-difference spike times, clipped to [0, horizon].

    Returns (total length, split count, merge count, per-interval lengths as
    (start, end) pairs flattened for batching).  The coupled states differ
    at time t exactly when some unit's window contents differ, i.e. when
    some symmetric-difference spike d satisfies d <= t < d + theta.
    """
    starts = np.sort(np.concatenate([d for d in diffs if len(d)] or [np.zeros(0)]))
    if len(starts) == 0:
        return 0.0, 0, 0, []
    total = 0.0
    intervals: list[float] = []
    cur_lo = None
    cur_hi = None
    n_splits = 0
    n_merges = 0
    for d in starts:
        lo, hi = d, d + theta
        if cur_hi is not None and lo <= cur_hi:
            cur_hi = max(cur_hi, hi)
            continue
        if cur_hi is not None:
            a, b = max(cur_lo, 0.0), min(cur_hi, horizon)
            if b > a:
                total += b - a
                intervals.extend((a, b))
                n_splits += 1
                if cur_hi <= horizon:
                    n_merges += 1
        cur_lo, cur_hi = lo, hi
    a, b = max(cur_lo, 0.0), min(cur_hi, horizon)
    if b > a:
        total += b - a
        intervals.extend((a, b))
        n_splits += 1
        if cur_hi <= horizon:
            n_merges += 1
    return total, n_splits, n_merges, intervals


@dataclass(frozen=True)
class CouplingStats:
    """Outcome of one coupled (full, truncated) run over K memory windows."""

    n: int
    blocks: int
    theta: float
    mismatch_time: float
    p_estimate: float
    sigma: float
    splits: int
    merges: int

    def __post_init__(self):
        assert 0.0 <= self.mismatch_time <= self.theta * self.blocks + 1e-9
        assert 0.0 <= self.p_estimate <= 1.0


def simulate_coupled(
    cfg: NetworkConfig,
    n: int,
    blocks: int,
    seed,
    *,
    truncate_sources: bool = False,
    n_batches: int = 40,
) -> CouplingStats:
    """Run the full and the n-truncated network from a common empty start on
    the same candidate stream and measure how long their states differ.

    The mismatch time is computed exactly from the event logs (the state
    difference is a union of intervals [d, d+theta) over spikes accepted by
    only one of the two processes), so the estimate of the stationary
    disagreement probability carries no time-discretization error.
    """
    if n < 1:
        raise ConfigError(f"truncation level must be >= 1, got {n}")
    if blocks < 1:
        raise ConfigError(f"need at least one block, got {blocks}")
    cfg.validate()
    horizon = cfg.theta * blocks
    full = _Process(cfg)
    trunc = _Process(cfg, trunc_n=n, truncate_sources=truncate_sources)
    total = cfg.total_rate_bound
    edges = _unit_edges(cfg)
    lefts = np.concatenate(([0.0], edges[:-1]))
    if total > 0:
        for t, v in candidate_stream(total, seed):
            if t > horizon:
                break
            unit = int(np.searchsorted(edges, v, side="left"))
            off = v - lefts[unit]
            if full.accepts(t, unit, off):
                full.fire(t, unit)
            if trunc.accepts(t, unit, off):
                trunc.fire(t, unit)
    diffs = []
    for u in range(cfg.n_units):
        a = np.asarray(full.spikes[u])
        b = np.asarray(trunc.spikes[u])
        diffs.append(np.setxor1d(a, b))
    mismatch, splits, merges, intervals = _union_measure(diffs, cfg.theta, horizon)
    p = mismatch / horizon
    # batch-means sigma over contiguous stretches of blocks
    b_count = max(2, min(n_batches, blocks))
    edges_t = np.linspace(0.0, horizon, b_count + 1)
    per_batch = np.zeros(b_count)
    iv = np.asarray(intervals).reshape(-1, 2) if intervals else np.zeros((0, 2))
    for lo, hi in iv:
        i0 = int(np.searchsorted(edges_t, lo, side="right") - 1)
        i1 = int(np.searchsorted(edges_t, hi, side="left"))
        for j in range(max(i0, 0), min(i1, b_count)):
            per_batch[j] += max(0.0, min(hi, edges_t[j + 1]) - max(lo, edges_t[j]))
    per_batch /= horizon / b_count
    sigma = float(np.std(per_batch, ddof=1) / math.sqrt(b_count))
    return CouplingStats(
        n=n,
        blocks=blocks,
        theta=cfg.theta,
        mismatch_time=mismatch,
        p_estimate=p,
        sigma=sigma,
        splits=splits,
        merges=merges,
    )


def truncation_bound(cfg: NetworkConfig, n: int) -> float:
    """Closed-form bound on the total-variation distance between the
    stationary laws of the full and the n-truncated network:

        C * n^{-(n+1)/2} * exp(alpha * n)

    with C = (2N/sqrt(pi)) * exp(theta * (total source rate + total neuron
    rate bound)) and alpha = (1 + ln(theta * max neuron rate bound)) / 2.
    """
    if n < 1:
        raise ConfigError(f"truncation level must be >= 1, got {n}")
    if cfg.n_neurons == 0:
        return 0.0
    sig_bar = max(cfg.rate_bounds)
    c = (2.0 * cfg.n_neurons / math.sqrt(math.pi)) * math.exp(
        cfg.theta * (cfg.total_source_rate + sum(cfg.rate_bounds))
    )
    alpha = 0.5 * (1.0 + math.log(cfg.theta * sig_bar))
    return c * n ** (-(n + 1) / 2.0) * math.exp(alpha * n)


def density_bound(
    cfg: NetworkConfig, m_counts: tuple[int, ...], n_counts: tuple[int, ...]
) -> float:
    """Upper bound on the stationary density on the component with ``m_counts``
    source window spikes and ``n_counts`` neuron window spikes:

        (prod_k rho_k^{m_k}) * (prod_i sbar_i^{n_i}) * exp(-theta * sum_k rho_k)
    """
    if len(m_counts) != cfg.n_sources or len(n_counts) != cfg.n_neurons:
        raise ConfigError("component index does not match the network shape")
    if any(m < 0 for m in m_counts) or any(k < 0 for k in n_counts):
        raise ConfigError("component counts must be >= 0")
    value = math.exp(-cfg.theta * cfg.total_source_rate)
    for rho, m in zip(cfg.source_rates, m_counts):
        value *= rho**m
    for sbar, k in zip(cfg.rate_bounds, n_counts):
        value *= sbar**k
    return value
