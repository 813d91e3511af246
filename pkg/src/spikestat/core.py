"""State representation, drift, spike updates and firing rates.

A network holds M external sources and N neurons.  The state of every unit
is the vector of times-to-expiry of its spikes still visible in the sliding
memory window of length ``theta``: strictly decreasing values in
``(0, theta]``, most recent spike first.  Drift is plain subtraction (all
ages decay at unit rate), a spike prepends ``theta``, and an age reaching 0
drops out of the vector.

Two weight regimes are supported: static weight matrices, and discrete-level
spike-timing dependent plasticity where each plastic connection carries an
ordered level set and a lookup table from signed pre/post spike lags to
target levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Activation",
    "Kernel",
    "Refractory",
    "WindowState",
    "NetworkConfig",
    "LagRule",
    "SynapseRule",
    "PlasticityConfig",
    "PlasticState",
    "ConfigError",
    "StateError",
    "synaptic_influx",
    "firing_rate",
    "advance",
    "apply_spike",
    "stdp_update",
]


class ConfigError(ValueError):
    """Raised when a network or plasticity configuration is invalid."""


class StateError(ValueError):
    """Raised when a window state violates its invariants."""


# ---------------------------------------------------------------------------
# Named function catalogs.  Configurations select these by kind + parameters
# so every experiment is reproducible from its config file alone.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """Bounded non-decreasing map from synaptic influx to firing intensity.

    Kinds:
      - ``constant``: always ``hi`` (set ``lo == hi``).
      - ``linear``: ``clip(intercept + slope*x, lo, hi)``.
      - ``logistic``: ``lo + (hi-lo)/(1+exp(-gain*(x-center)))``.

    ``lo`` and ``hi`` are the declared bounds; ``lo > 0`` is required so a
    non-refractory neuron always has positive rate.
    """

    kind: str
    lo: float
    hi: float
    slope: float = 1.0
    intercept: float = 0.0
    gain: float = 1.0
    center: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "logistic"):
            raise ConfigError(f"unknown activation kind {self.kind!r}")
        if not (0.0 < self.lo <= self.hi < math.inf):
            raise ConfigError(
                f"activation bounds must satisfy 0 < lo <= hi < inf, got ({self.lo}, {self.hi})"
            )
        if self.kind == "constant" and self.lo != self.hi:
            raise ConfigError("constant activation requires lo == hi")
        if self.kind == "linear" and self.slope < 0:
            raise ConfigError("linear activation must be non-decreasing (slope >= 0)")
        if self.kind == "logistic" and self.gain < 0:
            raise ConfigError("logistic activation must be non-decreasing (gain >= 0)")

    def __call__(self, x: float) -> float:
        if self.kind == "constant":
            return self.hi
        if self.kind == "linear":
            return min(max(self.intercept + self.slope * x, self.lo), self.hi)
        # logistic
        z = self.gain * (x - self.center)
        if z >= 0:
            s = 1.0 / (1.0 + math.exp(-z))
        else:
            e = math.exp(z)
            s = e / (1.0 + e)
        return self.lo + (self.hi - self.lo) * s

    @classmethod
    def constant(cls, value: float) -> "Activation":
        return cls("constant", lo=value, hi=value)


@dataclass(frozen=True)
class Kernel:
    """Post-synaptic response kernel supported on ``[0, theta]``.

    Kinds (``t`` is time since the spike):
      - ``constant``: ``amplitude`` on ``[0, theta]``.
      - ``linear``: ``slope * t`` on ``[0, theta]``.
      - ``triangle``: rises linearly to ``amplitude`` at ``peak * theta``,
        falls back to 0 at ``theta``.
      - ``bump``: smooth compactly-supported bump
        ``amplitude * exp(1 - 1/(1 - u^2))`` with ``u = 2t/theta - 1``.

    Every kind evaluates to exactly 0 outside ``[0, theta]``.
    """

    kind: str
    amplitude: float = 1.0
    slope: float = 1.0
    peak: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "triangle", "bump"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.amplitude < 0 or self.slope < 0:
            raise ConfigError("kernel amplitude/slope must be >= 0")
        if self.kind == "triangle" and not (0.0 < self.peak < 1.0):
            raise ConfigError("triangle kernel peak must lie strictly inside (0, 1)")

    def __call__(self, t: float, theta: float) -> float:
        if t < 0.0 or t > theta:
            return 0.0
        if self.kind == "constant":
            return self.amplitude
        if self.kind == "linear":
            return self.slope * t
        if self.kind == "triangle":
            tp = self.peak * theta
            if t <= tp:
                return self.amplitude * t / tp
            return self.amplitude * (theta - t) / (theta - tp)
        # bump
        u = 2.0 * t / theta - 1.0
        if abs(u) >= 1.0:
            return 0.0
        return self.amplitude * math.exp(1.0 - 1.0 / (1.0 - u * u))


@dataclass(frozen=True)
class Refractory:
    """Multiplier in [0, 1] suppressing firing after a neuron's own spike.

    ``none`` is identically 1.  ``hard`` is 0 on ``(0, delta]`` and 1
    elsewhere (the indicator of elapsed time being outside the absolute
    refractory period).  Both satisfy r(s) = 1 for s >= theta.
    """

    kind: str
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "hard"):
            raise ConfigError(f"unknown refractory kind {self.kind!r}")
        if self.kind == "hard" and self.delta <= 0.0:
            raise ConfigError("hard refractory requires delta > 0")

    def __call__(self, s: float) -> float:
        if self.kind == "none":
            return 1.0
        return 0.0 if 0.0 < s <= self.delta else 1.0


# ---------------------------------------------------------------------------
# Window state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowState:
    """Times-to-expiry of all window spikes, one tuple per unit.

    Units are indexed sources first (0..M-1) then neurons (M..M+N-1).
    Each per-unit tuple is strictly decreasing with values in
    ``(0, theta]``; an empty tuple means no spikes in the window.
    """

    theta: float
    ages: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not (self.theta > 0.0 and math.isfinite(self.theta)):
            raise StateError(f"theta must be positive and finite, got {self.theta}")
        for u, vec in enumerate(self.ages):
            prev = self.theta
            for j, x in enumerate(vec):
                if not (0.0 < x <= self.theta):
                    raise StateError(
                        f"unit {u} age[{j}]={x} outside (0, {self.theta}]"
                    )
                if j > 0 and x >= prev:
                    raise StateError(
                        f"unit {u} ages not strictly decreasing at index {j}"
                    )
                prev = x

    @classmethod
    def empty(cls, theta: float, n_units: int) -> "WindowState":
        return cls(theta, tuple(() for _ in range(n_units)))

    def count(self, u: int) -> int:
        """Number of window spikes of unit ``u``."""
        return len(self.ages[u])

    def counts(self) -> tuple[int, ...]:
        """Component index: per-unit window spike counts."""
        return tuple(len(v) for v in self.ages)


def advance(state: WindowState, dt: float) -> WindowState:
    """Let all ages decay by ``dt``; spikes reaching age <= 0 leave the window."""
    if dt < 0.0:
        raise StateError(f"cannot advance by negative dt={dt}")
    if dt == 0.0:
        return state
    new = tuple(
        tuple(x - dt for x in vec if x - dt > 0.0) for vec in state.ages
    )
    return WindowState(state.theta, new)


def apply_spike(state: WindowState, u: int) -> WindowState:
    """Record a spike of unit ``u`` now: its vector becomes (theta, old ages...)."""
    vec = state.ages[u]
    if vec and vec[0] >= state.theta:
        raise StateError(
            f"unit {u} already holds a spike at age theta; simultaneous spikes are not representable"
        )
    new = list(state.ages)
    new[u] = (state.theta,) + vec
    return WindowState(state.theta, tuple(new))


# ---------------------------------------------------------------------------
# Network configuration (static weights)
# ---------------------------------------------------------------------------


def _as_matrix(x, n_rows: int, n_cols: int, name: str) -> np.ndarray:
    a = np.zeros((n_rows, n_cols)) if x is None else np.asarray(x, dtype=float)
    if a.shape != (n_rows, n_cols):
        raise ConfigError(f"{name} must have shape ({n_rows}, {n_cols}), got {a.shape}")
    return a


@dataclass(frozen=True)
class NetworkConfig:
    """Static description of a network: rates, activations, kernels, weights.

    ``source_kernels[i][k]`` shapes the effect of source k on neuron i and
    ``recurrent_kernels[i][j]`` of neuron j on neuron i; ``None`` entries
    mean no connection (equivalently weight 0).  Weight matrices
    ``w_sources`` (N x M) and ``w_recurrent`` (N x N) hold the static
    weights used when no plastic state is supplied.
    """

    theta: float
    source_rates: tuple[float, ...]
    activations: tuple[Activation, ...]
    background: tuple[float, ...]
    refractory: Refractory = Refractory("none")
    source_kernels: tuple[tuple[Kernel | None, ...], ...] = ()
    recurrent_kernels: tuple[tuple[Kernel | None, ...], ...] = ()
    w_sources: np.ndarray | None = None
    w_recurrent: np.ndarray | None = None

    def __post_init__(self):
        if not (self.theta > 0.0 and math.isfinite(self.theta)):
            raise ConfigError(f"theta must be positive and finite, got {self.theta}")
        for k, r in enumerate(self.source_rates):
            if not (r > 0.0 and math.isfinite(r)):
                raise ConfigError(f"source {k} rate must be positive and finite, got {r}")
        if len(self.background) != self.n_neurons:
            raise ConfigError("background must have one entry per neuron")
        if self.refractory.kind == "hard" and self.refractory.delta >= self.theta:
            raise ConfigError("hard refractory delta must be < theta")
        m, n = self.n_sources, self.n_neurons
        sk = self.source_kernels or tuple(tuple(None for _ in range(m)) for _ in range(n))
        rk = self.recurrent_kernels or tuple(tuple(None for _ in range(n)) for _ in range(n))
        if len(sk) != n or any(len(row) != m for row in sk):
            raise ConfigError(f"source_kernels must be {n} x {m}")
        if len(rk) != n or any(len(row) != n for row in rk):
            raise ConfigError(f"recurrent_kernels must be {n} x {n}")
        object.__setattr__(self, "source_kernels", sk)
        object.__setattr__(self, "recurrent_kernels", rk)
        ws = _as_matrix(self.w_sources, n, m, "w_sources")
        wr = _as_matrix(self.w_recurrent, n, n, "w_recurrent")
        ws.setflags(write=False)
        wr.setflags(write=False)
        object.__setattr__(self, "w_sources", ws)
        object.__setattr__(self, "w_recurrent", wr)

    # -- structural helpers -------------------------------------------------

    @property
    def n_sources(self) -> int:
        return len(self.source_rates)

    @property
    def n_neurons(self) -> int:
        return len(self.activations)

    @property
    def n_units(self) -> int:
        return self.n_sources + self.n_neurons

    def neuron_unit(self, i: int) -> int:
        """Global unit index of neuron i."""
        return self.n_sources + i

    @property
    def rate_bounds(self) -> tuple[float, ...]:
        """Declared upper bounds on the neuron firing rates."""
        return tuple(a.hi for a in self.activations)

    @property
    def total_source_rate(self) -> float:
        return float(sum(self.source_rates))

    @property
    def total_rate_bound(self) -> float:
        """Total candidate rate: sum of source rates plus neuron rate bounds."""
        return self.total_source_rate + float(sum(self.rate_bounds))

    @property
    def rate_cap(self) -> float:
        """Largest single-unit rate: max over source rates and neuron bounds."""
        return max(list(self.source_rates) + list(self.rate_bounds))

    def empty_state(self) -> WindowState:
        return WindowState.empty(self.theta, self.n_units)

    def validate(self, grid: int = 64) -> None:
        """Sample activations and kernels to check declared bounds hold.

        Raises ConfigError on a violation.  Kernels are additionally probed
        just outside [0, theta] where they must vanish exactly.
        """
        xs = np.linspace(-50.0, 50.0, grid)
        for i, a in enumerate(self.activations):
            vals = [a(x) for x in xs]
            if min(vals) < a.lo - 1e-12 or max(vals) > a.hi + 1e-12:
                raise ConfigError(f"activation {i} violates its declared bounds")
        ts = np.linspace(0.0, self.theta, grid)
        for rows in (self.source_kernels, self.recurrent_kernels):
            for row in rows:
                for ker in row:
                    if ker is None:
                        continue
                    if any(ker(t, self.theta) < 0.0 for t in ts):
                        raise ConfigError("kernel takes a negative value")
                    if ker(-1e-9, self.theta) != 0.0 or ker(self.theta + 1e-9, self.theta) != 0.0:
                        raise ConfigError("kernel does not vanish outside [0, theta]")
        if not math.isfinite(self.total_rate_bound):
            raise ConfigError("total rate bound is not finite")


# ---------------------------------------------------------------------------
# Discrete-level plasticity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LagRule:
    """One lag interval ``(lo, hi]`` with a per-level target lookup.

    ``targets[m-1]`` is the 1-based target level applied when the current
    level is ``m`` and the signed lag falls inside the interval.  The lag
    convention is (pre-synaptic spike time) - (post-synaptic spike time):
    negative lags mean the pre spike came first.
    """

    lo: float
    hi: float
    targets: tuple[int, ...]

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"lag interval requires lo < hi, got ({self.lo}, {self.hi}]")


@dataclass(frozen=True)
class SynapseRule:
    """Level set and lag rules of one plastic connection.

    ``post`` is always a neuron index; ``pre`` is a source index when
    ``pre_is_source`` else a neuron index.
    """

    post: int
    pre: int
    pre_is_source: bool
    levels: tuple[float, ...]
    rules: tuple[LagRule, ...]
    initial_level: int = 1

    def __post_init__(self):
        L = len(self.levels)
        if L == 0:
            raise ConfigError("a plastic connection needs at least one level")
        if any(self.levels[i] > self.levels[i + 1] for i in range(L - 1)):
            raise ConfigError("levels must be non-decreasing")
        if not 1 <= self.initial_level <= L:
            raise ConfigError(f"initial_level {self.initial_level} outside 1..{L}")
        ivals = sorted((r.lo, r.hi) for r in self.rules)
        for (a0, b0), (a1, b1) in zip(ivals, ivals[1:]):
            if a1 < b0:
                raise ConfigError(f"lag intervals ({a0},{b0}] and ({a1},{b1}] overlap")
        for r in self.rules:
            if len(r.targets) != L:
                raise ConfigError("each lag rule needs one target per level")
            if any(not 1 <= d <= L for d in r.targets):
                raise ConfigError("lag rule target outside 1..L")

    def lookup(self, lag: float, level: int) -> int:
        """Target level for a signed lag, or the unchanged level."""
        for r in self.rules:
            if r.lo < lag <= r.hi:
                return r.targets[level - 1]
        return level

    @property
    def window(self) -> float:
        """Half-width of the learning window covered by the rules."""
        return max((max(abs(r.lo), abs(r.hi)) for r in self.rules), default=0.0)


@dataclass(frozen=True)
class PlasticityConfig:
    """All plastic connections of a Model II network."""

    connections: tuple[SynapseRule, ...]

    def validate_against(self, cfg: NetworkConfig) -> None:
        seen = set()
        for c, syn in enumerate(self.connections):
            if not 0 <= syn.post < cfg.n_neurons:
                raise ConfigError(f"plastic connection {c}: post neuron {syn.post} out of range")
            hi = cfg.n_sources if syn.pre_is_source else cfg.n_neurons
            if not 0 <= syn.pre < hi:
                raise ConfigError(f"plastic connection {c}: pre unit {syn.pre} out of range")
            key = (syn.post, syn.pre, syn.pre_is_source)
            if key in seen:
                raise ConfigError(f"plastic connection {c} duplicates {key}")
            seen.add(key)
            if syn.window >= cfg.theta:
                raise ConfigError(
                    f"plastic connection {c}: learning window {syn.window} must be < theta"
                )


@dataclass(frozen=True)
class PlasticState:
    """Current discrete level of every plastic connection.

    ``levels[c]`` is the 1-based level of ``pcfg.connections[c]``.  The
    resolved weight matrices are materialized once at construction so rate
    evaluation does not depend on whether weights are static or plastic.
    """

    pcfg: PlasticityConfig
    levels: tuple[int, ...]
    w_sources: np.ndarray = field(init=False, repr=False, compare=False)
    w_recurrent: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.levels) != len(self.pcfg.connections):
            raise ConfigError("one level per plastic connection required")
        for lv, syn in zip(self.levels, self.pcfg.connections):
            if not 1 <= lv <= len(syn.levels):
                raise ConfigError(f"level {lv} outside 1..{len(syn.levels)}")
        object.__setattr__(self, "w_sources", None)
        object.__setattr__(self, "w_recurrent", None)

    @classmethod
    def initial(cls, pcfg: PlasticityConfig) -> "PlasticState":
        return cls(pcfg, tuple(s.initial_level for s in pcfg.connections))

    def materialize(self, cfg: NetworkConfig) -> "PlasticState":
        """Resolve weight matrices: static weights overridden by level values."""
        ws = np.array(cfg.w_sources)
        wr = np.array(cfg.w_recurrent)
        for lv, syn in zip(self.levels, self.pcfg.connections):
            value = syn.levels[lv - 1]
            if syn.pre_is_source:
                ws[syn.post, syn.pre] = value
            else:
                wr[syn.post, syn.pre] = value
        ws.setflags(write=False)
        wr.setflags(write=False)
        object.__setattr__(self, "w_sources", ws)
        object.__setattr__(self, "w_recurrent", wr)
        return self


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------


def _weights(cfg: NetworkConfig, weights: PlasticState | None) -> tuple[np.ndarray, np.ndarray]:
    if weights is None:
        return cfg.w_sources, cfg.w_recurrent
    if weights.w_sources is None:
        weights.materialize(cfg)
    return weights.w_sources, weights.w_recurrent


def synaptic_influx(
    state: WindowState, cfg: NetworkConfig, i: int, weights: PlasticState | None = None
) -> float:
    """Total synaptic influx of neuron ``i``: background plus kernel sums.

    Each window spike of age-to-expiry x contributes kernel(theta - x),
    i.e. the kernel evaluated at the elapsed time since the spike.
    """
    if not 0 <= i < cfg.n_neurons:
        raise IndexError(f"neuron index {i} out of range 0..{cfg.n_neurons - 1}")
    ws, wr = _weights(cfg, weights)
    theta = cfg.theta
    total = cfg.background[i]
    for k in range(cfg.n_sources):
        w = ws[i, k]
        ker = cfg.source_kernels[i][k]
        if w == 0.0 or ker is None:
            continue
        for x in state.ages[k]:
            total += w * ker(theta - x, theta)
    off = cfg.n_sources
    for j in range(cfg.n_neurons):
        w = wr[i, j]
        ker = cfg.recurrent_kernels[i][j]
        if w == 0.0 or ker is None:
            continue
        for x in state.ages[off + j]:
            total += w * ker(theta - x, theta)
    return total


def firing_rate(
    state: WindowState, cfg: NetworkConfig, i: int, weights: PlasticState | None = None
) -> float:
    """Instantaneous firing rate of neuron ``i``: activation(influx) * refractory.

    The refractory multiplier is evaluated at the elapsed time since the
    neuron's own last spike; with an empty window it is r(theta) = 1.
    """
    own = state.ages[cfg.neuron_unit(i)]
    elapsed = cfg.theta - own[0] if own else cfg.theta
    r = cfg.refractory(elapsed)
    if r == 0.0:
        return 0.0
    return cfg.activations[i](synaptic_influx(state, cfg, i, weights)) * r


# ---------------------------------------------------------------------------
# STDP update
# ---------------------------------------------------------------------------


def stdp_update(
    plastic: PlasticState,
    pcfg: PlasticityConfig,
    state: WindowState,
    cfg: NetworkConfig,
    u: int,
) -> PlasticState:
    """Apply the plasticity rule for a spike of unit ``u`` happening now.

    Must be called on the state *before* the spike is recorded, so the
    counterpart's most recent spike is read from the pre-spike window.  The
    signed lag of a connection incident to ``u`` is the elapsed time since
    the counterpart's last spike, positive when the firing unit is the pre
    side and negative when it is the post side; the connection's lag rules
    may then move its level.  Connections without a counterpart spike in
    the window, and connections not incident to ``u``, are left unchanged.
    A feedback connection (post == pre == u) is updated in both roles, post
    role first.
    """
    new_levels = list(plastic.levels)
    changed = False
    off = cfg.n_sources
    for c, syn in enumerate(pcfg.connections):
        pre_unit = syn.pre if syn.pre_is_source else off + syn.pre
        post_unit = off + syn.post
        for firing_is_post in (True, False):
            if firing_is_post and u != post_unit:
                continue
            if not firing_is_post and u != pre_unit:
                continue
            counterpart = pre_unit if firing_is_post else post_unit
            ages = state.ages[counterpart]
            if not ages:
                continue  # no counterpart spike in window: lag undefined
            elapsed = cfg.theta - ages[0]
            lag = -elapsed if firing_is_post else elapsed
            target = syn.lookup(lag, new_levels[c])
            if target != new_levels[c]:
                new_levels[c] = target
                changed = True
    if not changed:
        return plastic
    return PlasticState(plastic.pcfg, tuple(new_levels))
