"""Grid Markov chain: discretized network dynamics and their stationary law.

Time and state are discretized on a grid of resolution ``q`` (step
``h = 1/q`` of the memory window).  Per step, every source spikes with
probability ``h * rate`` and every neuron with probability ``h * rate(state)``
independently; otherwise its age vector shifts down by ``h``.  The
stationary distribution of this finite chain converges weakly to the
stationary law of the continuous network as ``q`` grows, which makes it the
third computational route next to simulation and the closed forms.

Grid ages are stored as integer multiples of ``h`` (per unit: strictly
decreasing tuples of ints in ``1..q``), so state identity is exact.  The
window length is normalized to 1 inside this module; configurations with a
different window length are rescaled on entry (one grid step is
``theta / q`` physical time) and densities are rescaled on exit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import ConfigError, NetworkConfig, WindowState, firing_rate

__all__ = [
    "GridChain",
    "ChainEmbedding",
    "ChainSizeError",
    "shift_op",
    "spike_op",
    "grid_to_state",
    "transition_row",
    "precursors",
    "precursor_prob",
    "enumerate_states",
    "stationary",
    "dense_stationary",
    "balance_residual",
    "embed",
    "export_chain",
]

UnitGrid = tuple[int, ...]
GridState = tuple[UnitGrid, ...]


class ChainSizeError(RuntimeError):
    """Raised when state enumeration exceeds its explicit cap."""


def shift_op(xi: UnitGrid) -> UnitGrid:
    """One no-spike step: all ages drop by one grid unit, zeros drop out."""
    return tuple(k - 1 for k in xi if k >= 2)


def spike_op(xi: UnitGrid, q: int) -> UnitGrid:
    """One spike step: prepend a full-window age, shift the rest down."""
    return (tuple([q] + [k - 1 for k in xi if k >= 2]))[:q]


def _check_unit(xi: UnitGrid, q: int) -> None:
    prev = q + 1
    for k in xi:
        if not (1 <= k <= q):
            raise ConfigError(f"grid age {k} outside 1..{q}")
        if k >= prev:
            raise ConfigError(f"grid ages not strictly decreasing: {xi}")
        prev = k


def grid_to_state(zeta: GridState, cfg: NetworkConfig, q: int) -> WindowState:
    """Embed a grid state into the continuous state space (physical ages)."""
    step = cfg.theta / q
    return WindowState(cfg.theta, tuple(tuple(k * step for k in xi) for xi in zeta))


def _spike_probs(
    zeta: GridState, cfg: NetworkConfig, q: int, trunc_n: int | None
) -> list[float]:
    """Per-unit one-step spike probabilities at ``zeta``; validates them."""
    step = cfg.theta / q
    state = grid_to_state(zeta, cfg, q)
    probs: list[float] = []
    for k, rho in enumerate(cfg.source_rates):
        p = rho * step
        if p > 1.0:
            raise ConfigError(
                f"one-step spike probability {p:.6g} > 1 for source {k}: "
                f"the grid requires rate * theta / q <= 1; increase q"
            )
        probs.append(p)
    for i in range(cfg.n_neurons):
        rate = firing_rate(state, cfg, i)
        if trunc_n is not None and state.count(cfg.neuron_unit(i)) >= trunc_n:
            rate = 0.0
        p = rate * step
        if p > 1.0:
            raise ConfigError(
                f"one-step spike probability {p:.6g} > 1 for neuron {i}: "
                f"the grid requires rate * theta / q <= 1; increase q"
            )
        probs.append(p)
    return probs


def transition_row(
    zeta: GridState, cfg: NetworkConfig, q: int, trunc_n: int | None = None
) -> list[tuple[GridState, float]]:
    """Successor states of ``zeta`` with their probabilities.

    Units spike independently, so the row is the product of per-unit
    two-outcome kernels; entries with probability 0 are dropped and the
    remaining probabilities sum to 1.
    """
    for xi in zeta:
        _check_unit(xi, q)
    probs = _spike_probs(zeta, cfg, q, trunc_n)
    per_unit: list[list[tuple[UnitGrid, float]]] = []
    for xi, p in zip(zeta, probs):
        outcomes = []
        if p < 1.0:
            outcomes.append((shift_op(xi), 1.0 - p))
        if p > 0.0:
            outcomes.append((spike_op(xi, q), p))
        per_unit.append(outcomes)
    row = []
    for combo in itertools.product(*per_unit):
        states = tuple(c[0] for c in combo)
        prob = math.prod(c[1] for c in combo)
        row.append((states, prob))
    return row


def _unit_precursors(xi: UnitGrid, q: int) -> tuple[UnitGrid, UnitGrid]:
    """The two candidate predecessors of a unit vector: without and with an
    age that expired during the step."""
    if xi and xi[0] == q:
        base = tuple(k + 1 for k in xi[1:])
    else:
        base = tuple(k + 1 for k in xi)
    return base, base + (1,)


def precursors(zeta: GridState, q: int) -> list[GridState]:
    """All possible immediate predecessors of ``zeta``.

    One per choice, for every unit, of whether a spike expired during the
    step; whether the step itself was a spike is determined by ``zeta``
    (a unit spiked iff its head age is full).  Always 2^(units) states.
    """
    for xi in zeta:
        _check_unit(xi, q)
    options = [_unit_precursors(xi, q) for xi in zeta]
    return [tuple(choice) for choice in itertools.product(*options)]


def precursor_prob(
    v: GridState, zeta: GridState, cfg: NetworkConfig, q: int, trunc_n: int | None = None
) -> float:
    """One-step transition probability from precursor ``v`` to ``zeta``.

    Evaluated directly from the balance-system formula: each unit
    contributes its spike probability at ``v`` if its head in ``zeta`` is
    full, else its no-spike probability.
    """
    probs = _spike_probs(v, cfg, q, trunc_n)
    out = 1.0
    for xi, p in zip(zeta, probs):
        spiked = bool(xi) and xi[0] == q
        out *= p if spiked else (1.0 - p)
    return out


@dataclass
class GridChain:
    """Enumerated reachable states and sparse transition structure."""

    cfg: NetworkConfig
    q: int
    trunc_n: int | None
    states: list[GridState]
    index: dict[GridState, int]
    transitions: sp.csr_matrix = field(repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def step(self) -> float:
        """Physical length of one grid cell."""
        return self.cfg.theta / self.q


def enumerate_states(
    cfg: NetworkConfig, q: int, trunc_n: int | None = None, cap: int = 500_000
) -> GridChain:
    """Breadth-first closure of the transition support from the empty state.

    Raises ChainSizeError when more than ``cap`` states are reached.
    Refractoriness and truncation keep the reachable set far below the
    2^q-per-unit worst case.
    """
    if q < 1:
        raise ConfigError(f"grid resolution must be >= 1, got {q}")
    cfg.validate()
    zero: GridState = tuple(() for _ in range(cfg.n_units))
    index: dict[GridState, int] = {zero: 0}
    states: list[GridState] = [zero]
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    frontier = [zero]
    while frontier:
        nxt = []
        for zeta in frontier:
            i = index[zeta]
            for succ, p in transition_row(zeta, cfg, q, trunc_n):
                j = index.get(succ)
                if j is None:
                    if len(states) >= cap:
                        raise ChainSizeError(
                            f"reachable state count exceeded cap={cap} at q={q}"
                        )
                    j = len(states)
                    index[succ] = j
                    states.append(succ)
                    nxt.append(succ)
                rows.append(i)
                cols.append(j)
                vals.append(p)
        frontier = nxt
    n = len(states)
    transitions = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    row_sums = np.asarray(transitions.sum(axis=1)).ravel()
    if np.max(np.abs(row_sums - 1.0)) > 1e-12:
        raise RuntimeError("transition rows do not sum to 1")
    return GridChain(cfg=cfg, q=q, trunc_n=trunc_n, states=states, index=index, transitions=transitions)


def stationary(
    chain: GridChain, tol: float = 1e-13, max_iter: int = 1_000_000
) -> np.ndarray:
    """Stationary vector by damped power iteration.

    Iterates pi <- 0.5 * (pi + pi P), which kills periodicity artifacts; the
    successive-iterate stopping rule at ``tol`` guarantees the fixed-point
    residual ||pi P - pi||_inf <= 2 * tol.  Verifies non-negativity,
    normalization and the residual before returning.
    """
    P = chain.transitions
    n = chain.n_states
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + pi @ P)
        nxt /= nxt.sum()
        diff = float(np.max(np.abs(nxt - pi)))
        pi = nxt
        if diff < tol:
            break
    else:
        raise RuntimeError(f"power iteration did not converge within {max_iter} iterations")
    residual = float(np.max(np.abs(pi @ P - pi)))
    if residual > 2.0 * tol:
        raise RuntimeError(f"stationary residual {residual} exceeds tolerance")
    if float(pi.min()) < -1e-13:
        raise RuntimeError("stationary vector has a negative entry")
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def dense_stationary(chain: GridChain) -> np.ndarray:
    """Stationary vector by a direct dense linear solve (small chains only)."""
    n = chain.n_states
    A = chain.transitions.toarray().T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    return pi / pi.sum()


def balance_residual(chain: GridChain, pi: np.ndarray) -> float:
    """Entrywise residual of the precursor balance system.

    For every state the stationary mass must equal the inflow summed over
    its 2^(units) precursors; computed through ``precursors`` and
    ``precursor_prob`` rather than the stored matrix, so it cross-checks the
    transition structure.
    """
    worst = 0.0
    for zeta, i in chain.index.items():
        inflow = 0.0
        for v in precursors(zeta, chain.q):
            j = chain.index.get(v)
            if j is None:
                continue  # unreachable precursor carries no stationary mass
            inflow += pi[j] * precursor_prob(v, zeta, chain.cfg, chain.q, chain.trunc_n)
        worst = max(worst, abs(pi[i] - inflow))
    return worst


# ---------------------------------------------------------------------------
# Embedding into the continuous state space
# ---------------------------------------------------------------------------


@dataclass
class ChainEmbedding:
    """Push-forward of the grid stationary law to the continuous space.

    ``component_masses`` maps per-unit window-count tuples to probability.
    ``cells`` maps a component to (physical ages, density, is_boundary)
    records, density being cell mass divided by the cell volume
    ``(theta/q)^dim``; cells adjacent to a diagonal face of the simplex are
    flagged as boundary cells and their aggregate mass is also reported per
    component in ``boundary_mass``.
    """

    theta: float
    q: int
    component_masses: dict[tuple[int, ...], float]
    boundary_mass: dict[tuple[int, ...], float]
    cells: dict[tuple[int, ...], list[tuple[tuple[float, ...], float, bool]]]

    @property
    def silent_mass(self) -> float:
        zero = tuple(0 for _ in next(iter(self.component_masses)))
        return self.component_masses.get(zero, 0.0)

    def mean_total_count(self) -> float:
        return float(sum(mass * sum(comp) for comp, mass in self.component_masses.items()))

    def mass(self, comp: tuple[int, ...]) -> float:
        return self.component_masses.get(tuple(comp), 0.0)


def embed(chain: GridChain, pi: np.ndarray) -> ChainEmbedding:
    """Aggregate the stationary vector into component masses and per-cell
    densities comparable with simulation histograms and closed forms."""
    h = chain.step
    comp_masses: dict[tuple[int, ...], float] = {}
    boundary: dict[tuple[int, ...], float] = {}
    cells: dict[tuple[int, ...], list[tuple[tuple[float, ...], float, bool]]] = {}
    for zeta, i in chain.index.items():
        mass = float(pi[i])
        comp = tuple(len(xi) for xi in zeta)
        dim = sum(comp)
        comp_masses[comp] = comp_masses.get(comp, 0.0) + mass
        is_boundary = any(
            xi[j] - xi[j + 1] == 1 for xi in zeta for j in range(len(xi) - 1)
        )
        if is_boundary:
            boundary[comp] = boundary.get(comp, 0.0) + mass
        ages = tuple(k * h for xi in zeta for k in xi)
        density = mass / h**dim if dim else mass
        cells.setdefault(comp, []).append((ages, density, is_boundary))
    return ChainEmbedding(
        theta=chain.cfg.theta,
        q=chain.q,
        component_masses=comp_masses,
        boundary_mass=boundary,
        cells=cells,
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _format_state(zeta: GridState) -> str:
    return ";".join(",".join(str(k) for k in xi) if xi else "-" for xi in zeta)


def export_chain(chain: GridChain, fh) -> None:
    """Write the chain as a state legend plus (row, col, prob) triplets.

    The format is line-oriented text: comment headers, then one
    ``state <index> <ages>`` line per state (unit vectors separated by ';',
    grid ages by ',', '-' for an empty unit), then one ``<row> <col> <prob>``
    line per transition.
    """
    P = chain.transitions.tocoo()
    fh.write(
        f"# grid chain q={chain.q} theta={chain.cfg.theta!r} "
        f"sources={chain.cfg.n_sources} neurons={chain.cfg.n_neurons} "
        f"trunc={chain.trunc_n if chain.trunc_n is not None else '-'}\n"
    )
    fh.write(f"# states={chain.n_states} nnz={P.nnz}\n")
    for i, zeta in enumerate(chain.states):
        fh.write(f"state {i} {_format_state(zeta)}\n")
    for i, j, p in zip(P.row, P.col, P.data):
        fh.write(f"{i} {j} {float(p)!r}\n")
