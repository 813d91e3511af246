"""Exact trajectory simulation by thinning, and empirical stationary estimators.

Candidate events come from a homogeneous Poisson stream whose rate is the
sum of all source rates and neuron rate bounds.  Each candidate carries a
height uniform on the total rate interval; the height selects the unit (the
interval is partitioned into one sub-interval per source and one per neuron,
of widths equal to their rates/bounds) and doubles as the thinning variable:
a neuron candidate is accepted iff its offset inside the neuron's
sub-interval does not exceed the neuron's current rate.  Source candidates
are always accepted.  Processes driven by the same candidate stream are
exactly coupled, which is what the merge diagnostics and the truncated-pair
coupling rely on.

Randomness is a counter-based Philox stream: candidate ``m`` consumes the
uniform pair ``(2m, 2m+1)``, so a candidate is a pure function of
``(seed, m)`` and identical seeds give bit-identical event logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    NetworkConfig,
    PlasticityConfig,
    PlasticState,
    StateError,
    WindowState,
    firing_rate,
    stdp_update,
)

__all__ = [
    "EventLog",
    "ComponentMassEstimate",
    "ConditionalDensity",
    "MergeCurve",
    "candidate_stream",
    "simulate",
    "estimate_component_masses",
    "estimate_density_1d",
    "ergodicity_diagnostic",
    "merge_bound",
]

KIND_SOURCE = 0
KIND_NEURON = 1


def candidate_stream(total_rate: float, seed, block: int = 4096):
    """Yield (time, height) candidates of a Poisson stream of ``total_rate``.

    ``seed`` may be an int or a numpy SeedSequence.  Heights are uniform on
    (0, total_rate].
    """
    if not (total_rate > 0.0 and math.isfinite(total_rate)):
        raise ConfigError(f"total candidate rate must be positive and finite, got {total_rate}")
    rng = np.random.Generator(np.random.Philox(seed))
    t = 0.0
    while True:
        u = rng.random((block, 2))
        gaps = -np.log1p(-u[:, 0]) / total_rate
        heights = total_rate * (1.0 - u[:, 1])
        for g, v in zip(gaps, heights):
            t += g
            yield t, v


class _Process:
    """Mutable per-trajectory bookkeeping shared by all simulation loops.

    Window contents are always derived from recorded spike times (never from
    repeated age subtraction), so two processes that accepted the same
    events are in exactly equal states, floats included.
    """

    def __init__(
        self,
        cfg: NetworkConfig,
        initial: WindowState | None = None,
        pcfg: PlasticityConfig | None = None,
        initial_plastic: PlasticState | None = None,
        trunc_n: int | None = None,
        truncate_sources: bool = False,
    ):
        if trunc_n is not None and trunc_n < 1:
            raise ConfigError(f"truncation level must be >= 1, got {trunc_n}")
        self.cfg = cfg
        self.pcfg = pcfg
        self.trunc_n = trunc_n
        self.truncate_sources = truncate_sources
        if pcfg is not None:
            pcfg.validate_against(cfg)
            self.plastic = (initial_plastic or PlasticState.initial(pcfg)).materialize(cfg)
        else:
            self.plastic = None
        init = initial if initial is not None else cfg.empty_state()
        if len(init.ages) != cfg.n_units or init.theta != cfg.theta:
            raise ConfigError("initial state does not match the network shape")
        # Spikes are stored as times; an initial age x corresponds to a
        # virtual spike at time x - theta <= 0.
        self.spikes: list[list[float]] = [
            [x - cfg.theta for x in reversed(vec)] for vec in init.ages
        ]
        self._win = [0] * cfg.n_units  # index of oldest spike still in window
        self.events_t: list[float] = []
        self.events_u: list[int] = []

    def _prune(self, t: float) -> None:
        theta = self.cfg.theta
        for u, times in enumerate(self.spikes):
            i = self._win[u]
            while i < len(times) and theta - (t - times[i]) <= 0.0:
                i += 1
            self._win[u] = i

    def state_at(self, t: float) -> WindowState:
        """Window state at time t (exclusive of any spike after t)."""
        self._prune(t)
        theta = self.cfg.theta
        ages = []
        for u, times in enumerate(self.spikes):
            vec = []
            prev = math.inf
            for ts in reversed(times[self._win[u]:]):
                a = theta - (t - ts)
                if a < prev:  # guard against float ties between distinct spikes
                    vec.append(a)
                    prev = a
            ages.append(tuple(vec))
        return WindowState(theta, tuple(ages))

    def window_times(self, t: float) -> tuple[tuple[float, ...], ...]:
        """Spike times still visible at t, per unit (exact equality key)."""
        self._prune(t)
        return tuple(tuple(times[self._win[u]:]) for u, times in enumerate(self.spikes))

    def rate(self, unit: int, t: float, state: WindowState | None = None) -> float:
        cfg = self.cfg
        if unit < cfg.n_sources:
            if self.truncate_sources and self.trunc_n is not None:
                self._prune(t)
                if len(self.spikes[unit]) - self._win[unit] >= self.trunc_n:
                    return 0.0
            return cfg.source_rates[unit]
        if state is None:
            state = self.state_at(t)
        i = unit - cfg.n_sources
        if self.trunc_n is not None and state.count(unit) >= self.trunc_n:
            return 0.0
        return firing_rate(state, cfg, i, self.plastic)

    def accepts(self, t: float, unit: int, offset: float) -> bool:
        """Thinning decision for a candidate of ``unit`` with height offset."""
        if unit < self.cfg.n_sources:
            return self.rate(unit, t) > 0.0 if self.truncate_sources else True
        return offset <= self.rate(unit, t)

    def fire(self, t: float, unit: int) -> None:
        times = self.spikes[unit]
        if times and times[-1] == t:
            return  # float tie with the unit's previous spike: drop (measure zero)
        if self.pcfg is not None:
            self.plastic = stdp_update(
                self.plastic, self.pcfg, self.state_at(t), self.cfg, unit
            ).materialize(self.cfg)
        times.append(t)
        self.events_t.append(t)
        self.events_u.append(unit)


def _unit_edges(cfg: NetworkConfig) -> np.ndarray:
    widths = list(cfg.source_rates) + list(cfg.rate_bounds)
    return np.cumsum(widths)


@dataclass(frozen=True)
class EventLog:
    """Ordered accepted events of one simulation run."""

    theta: float
    horizon: float
    seed: int
    n_sources: int
    n_neurons: int
    times: np.ndarray
    units: np.ndarray
    kinds: np.ndarray
    final_state: WindowState
    final_plastic: PlasticState | None = None

    def __len__(self) -> int:
        return len(self.times)

    def unit_times(self, u: int) -> np.ndarray:
        return self.times[self.units == u]

    def count(self, u: int | None = None) -> int:
        if u is None:
            return len(self.times)
        return int(np.sum(self.units == u))


def simulate(
    cfg: NetworkConfig,
    T: float,
    seed,
    *,
    pcfg: PlasticityConfig | None = None,
    initial: WindowState | None = None,
    initial_plastic: PlasticState | None = None,
    trunc_n: int | None = None,
    truncate_sources: bool = False,
) -> EventLog:
    """Simulate the network on [0, T] and return its event log.

    Deterministic given (cfg, seed): rerunning yields a bit-identical log.
    ``trunc_n`` simulates the truncated dynamics in which a neuron's rate is
    zero whenever it already has ``trunc_n`` window spikes.
    """
    if T < 0:
        raise ConfigError(f"horizon must be >= 0, got {T}")
    cfg.validate()
    proc = _Process(cfg, initial, pcfg, initial_plastic, trunc_n, truncate_sources)
    total = cfg.total_rate_bound
    if T > 0 and total > 0:
        edges = _unit_edges(cfg)
        lefts = np.concatenate(([0.0], edges[:-1]))
        for t, v in candidate_stream(total, seed):
            if t > T:
                break
            unit = int(np.searchsorted(edges, v, side="left"))
            if proc.accepts(t, unit, v - lefts[unit]):
                proc.fire(t, unit)
    kinds = np.where(np.asarray(proc.events_u) < cfg.n_sources, KIND_SOURCE, KIND_NEURON)
    return EventLog(
        theta=cfg.theta,
        horizon=T,
        seed=seed if isinstance(seed, int) else -1,
        n_sources=cfg.n_sources,
        n_neurons=cfg.n_neurons,
        times=np.asarray(proc.events_t, dtype=float),
        units=np.asarray(proc.events_u, dtype=np.int64),
        kinds=kinds.astype(np.int8) if len(proc.events_u) else np.zeros(0, dtype=np.int8),
        final_state=proc.state_at(T),
        final_plastic=proc.plastic,
    )


# ---------------------------------------------------------------------------
# Empirical estimators
# ---------------------------------------------------------------------------


def _sample_times(T: float, burn_in: float, stride: float) -> np.ndarray:
    if not (stride > 0.0 and math.isfinite(stride)):
        raise ConfigError(f"sampling stride must be positive, got {stride}")
    if not burn_in < T:
        raise ConfigError(f"burn-in {burn_in} must be smaller than horizon {T}")
    n = int(math.floor((T - burn_in) / stride)) + 1
    return burn_in + stride * np.arange(n)


def window_counts(log: EventLog, sample_times: np.ndarray) -> np.ndarray:
    """Per-unit window spike counts at each sample time: (samples, units)."""
    n_units = log.n_sources + log.n_neurons
    out = np.empty((len(sample_times), n_units), dtype=np.int64)
    for u in range(n_units):
        tu = log.unit_times(u)
        lo = np.searchsorted(tu, sample_times - log.theta, side="right")
        hi = np.searchsorted(tu, sample_times, side="right")
        out[:, u] = hi - lo
    return out


def _batch_sigma(values: np.ndarray, n_batches: int) -> float:
    """Standard error of the mean of a correlated series, by batch means."""
    n = len(values)
    b = max(2, min(n_batches, n // 2))
    m = (n // b) * b
    batches = values[:m].reshape(b, -1).mean(axis=1)
    return float(np.std(batches, ddof=1) / math.sqrt(b))


def _ratio_batch_sigma(numer: np.ndarray, denom: np.ndarray, n_batches: int) -> float:
    """Standard error of sum(numer)/sum(denom) from per-batch ratios."""
    n = len(numer)
    b = max(2, min(n_batches, n // 2))
    m = (n // b) * b
    ns = numer[:m].reshape(b, -1).sum(axis=1)
    ds = denom[:m].reshape(b, -1).sum(axis=1)
    ok = ds > 0
    if ok.sum() < 2:
        return float("inf")
    ratios = ns[ok] / ds[ok]
    return float(np.std(ratios, ddof=1) / math.sqrt(ok.sum()))


@dataclass(frozen=True)
class ComponentMassEstimate:
    """Empirical stationary mass per state-space component.

    A component is the tuple of per-unit window spike counts.  Components
    whose total count exceeds ``cap`` are aggregated into ``overflow_mass``.
    Sigmas are batch-means standard errors (valid under the time correlation
    of the sampled trajectory).
    """

    masses: dict[tuple[int, ...], float]
    sigmas: dict[tuple[int, ...], float]
    overflow_mass: float
    n_samples: int
    burn_in: float
    stride: float
    cap: int

    def mass(self, comp: tuple[int, ...]) -> float:
        return self.masses.get(tuple(comp), 0.0)

    def sigma(self, comp: tuple[int, ...]) -> float:
        return self.sigmas.get(tuple(comp), 0.0)

    def total(self) -> float:
        return float(sum(self.masses.values()) + self.overflow_mass)


def estimate_component_masses(
    cfg: NetworkConfig,
    T: float,
    burn_in: float,
    seed,
    *,
    stride: float | None = None,
    pcfg: PlasticityConfig | None = None,
    trunc_n: int | None = None,
    cap: int = 64,
    n_batches: int = 100,
) -> ComponentMassEstimate:
    """Tabulate component occupancy along a trajectory sampled on a grid.

    Samples are taken at burn_in + j*stride (stride defaults to theta/4);
    ergodicity makes the table converge to the stationary component masses.
    """
    stride = cfg.theta / 4.0 if stride is None else stride
    log = simulate(cfg, T, seed, pcfg=pcfg, trunc_n=trunc_n)
    ts = _sample_times(T, burn_in, stride)
    counts = window_counts(log, ts)
    totals = counts.sum(axis=1)
    over = totals > cap
    n = len(ts)
    masses: dict[tuple[int, ...], float] = {}
    sigmas: dict[tuple[int, ...], float] = {}
    if np.any(~over):
        comps, inverse = np.unique(counts[~over], axis=0, return_inverse=True)
        idx_ok = np.flatnonzero(~over)
        for c, comp in enumerate(comps):
            indicator = np.zeros(n)
            indicator[idx_ok[inverse == c]] = 1.0
            key = tuple(int(x) for x in comp)
            masses[key] = float(indicator.mean())
            sigmas[key] = _batch_sigma(indicator, n_batches)
    return ComponentMassEstimate(
        masses=masses,
        sigmas=sigmas,
        overflow_mass=float(np.mean(over)),
        n_samples=n,
        burn_in=burn_in,
        stride=stride,
        cap=cap,
    )


@dataclass(frozen=True)
class ConditionalDensity:
    """Histogram of the age coordinate on a one-spike component.

    ``cond_mass`` is the age histogram conditional on the component being
    occupied (sums to 1); ``density`` is the unconditional estimate of the
    stationary density on the component: bin mass / bin width.
    """

    unit: int
    edges: np.ndarray
    cond_mass: np.ndarray
    cond_sigma: np.ndarray
    density: np.ndarray
    density_sigma: np.ndarray
    component_mass: float
    n_conditional: int
    n_samples: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def estimate_density_1d(
    cfg: NetworkConfig,
    unit: int,
    T: float,
    burn_in: float,
    seed,
    *,
    bins: int = 20,
    stride: float | None = None,
    pcfg: PlasticityConfig | None = None,
    trunc_n: int | None = None,
    n_batches: int = 100,
) -> ConditionalDensity:
    """Estimate the stationary density on the component where ``unit`` holds
    exactly one window spike and every other unit holds none."""
    stride = cfg.theta / 4.0 if stride is None else stride
    log = simulate(cfg, T, seed, pcfg=pcfg, trunc_n=trunc_n)
    ts = _sample_times(T, burn_in, stride)
    counts = window_counts(log, ts)
    want = np.zeros(counts.shape[1], dtype=np.int64)
    want[unit] = 1
    sel = np.all(counts == want, axis=1)
    n_cond = int(sel.sum())
    if n_cond == 0:
        raise StateError(f"no samples found on the single-spike component of unit {unit}")
    tu = log.unit_times(unit)
    s = ts[sel]
    idx = np.searchsorted(tu, s, side="right") - 1
    age = log.theta - (s - tu[idx])  # time-to-expiry of the single window spike
    width = log.theta / bins
    bin_idx = np.clip(np.floor(age / width).astype(int), 0, bins - 1)
    n = len(ts)
    cond_mass = np.zeros(bins)
    cond_sigma = np.zeros(bins)
    density = np.zeros(bins)
    density_sigma = np.zeros(bins)
    sel_idx = np.flatnonzero(sel)
    denom = np.zeros(n)
    denom[sel_idx] = 1.0
    for b in range(bins):
        indicator = np.zeros(n)
        indicator[sel_idx[bin_idx == b]] = 1.0
        share = float(indicator.mean())
        density[b] = share / width
        density_sigma[b] = _batch_sigma(indicator, n_batches) / width
        cond_mass[b] = share * n / n_cond
        cond_sigma[b] = _ratio_batch_sigma(indicator, denom, n_batches)
    edges = width * np.arange(bins + 1)
    return ConditionalDensity(
        unit=unit,
        edges=edges,
        cond_mass=cond_mass,
        cond_sigma=cond_sigma,
        density=density,
        density_sigma=density_sigma,
        component_mass=n_cond / n,
        n_conditional=n_cond,
        n_samples=n,
    )


# ---------------------------------------------------------------------------
# Coupling-based ergodicity diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MergeCurve:
    """Fraction of coupled replications not yet merged at each grid time.

    The fraction upper-bounds the total-variation distance between the laws
    of the two initial conditions at each time.
    """

    times: np.ndarray
    fraction: np.ndarray
    sigma: np.ndarray
    replications: int


def merge_bound(cfg: NetworkConfig, times: np.ndarray) -> np.ndarray:
    """Geometric no-silent-window bound dominating the merge curve."""
    gamma = cfg.total_rate_bound
    q = math.exp(-gamma * cfg.theta)
    return (1.0 - q) ** np.floor(np.asarray(times, dtype=float) / cfg.theta)


def ergodicity_diagnostic(
    cfg: NetworkConfig,
    init_a: WindowState,
    init_b: WindowState,
    t_grid: np.ndarray,
    replications: int,
    seed,
    *,
    trunc_n: int | None = None,
) -> MergeCurve:
    """Drive two copies of the network from different initial states with the
    same candidate stream and report the fraction not yet merged over time.

    Restricted to static weights: with common candidates the two window
    processes coincide forever once equal, so per replication the merge
    indicator is monotone and the reported curve is non-increasing.
    """
    cfg.validate()
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if len(t_grid) == 0:
        raise ConfigError("t_grid must be non-empty")
    total = cfg.total_rate_bound
    edges = _unit_edges(cfg)
    lefts = np.concatenate(([0.0], edges[:-1]))
    horizon = float(t_grid[-1])
    merged_flags = np.zeros((replications, len(t_grid)), dtype=bool)
    streams = np.random.SeedSequence(seed).spawn(replications)
    for r in range(replications):
        pa = _Process(cfg, initial=init_a, trunc_n=trunc_n)
        pb = _Process(cfg, initial=init_b, trunc_n=trunc_n)
        g = 0
        merged = False

        def check_until(t_next: float):
            nonlocal g, merged
            while g < len(t_grid) and t_grid[g] <= t_next:
                if not merged:
                    merged = pa.window_times(t_grid[g]) == pb.window_times(t_grid[g])
                merged_flags[r, g] = merged
                g += 1

        for t, v in candidate_stream(total, streams[r]):
            if t > horizon:
                break
            check_until(t)
            if merged:
                merged_flags[r, g:] = True
                g = len(t_grid)
                break
            unit = int(np.searchsorted(edges, v, side="left"))
            off = v - lefts[unit]
            if pa.accepts(t, unit, off):
                pa.fire(t, unit)
            if pb.accepts(t, unit, off):
                pb.fire(t, unit)
        check_until(horizon)
    fraction = 1.0 - merged_flags.mean(axis=0)
    sigma = np.sqrt(fraction * (1.0 - fraction) / replications)
    return MergeCurve(times=t_grid, fraction=fraction, sigma=sigma, replications=replications)
