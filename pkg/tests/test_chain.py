import io
import itertools
import math

import numpy as np
import pytest

from spikestat.chain import (
    ChainSizeError,
    balance_residual,
    dense_stationary,
    embed,
    enumerate_states,
    export_chain,
    grid_to_state,
    precursor_prob,
    precursors,
    shift_op,
    spike_op,
    stationary,
    transition_row,
)
from spikestat.core import Activation, ConfigError, NetworkConfig


def single_source(rho: float, theta: float = 1.0) -> NetworkConfig:
    return NetworkConfig(theta=theta, source_rates=(rho,), activations=(), background=())


def all_unit_vectors(q: int):
    """Every strictly decreasing tuple over 1..q (the full per-unit state set)."""
    out = []
    for r in range(q + 1):
        for comb in itertools.combinations(range(q, 0, -1), r):
            out.append(tuple(comb))
    return out


# ---------------------------------------------------------------------------
# elementary operators
# ---------------------------------------------------------------------------


def test_spike_on_empty():
    assert spike_op((), 4) == (4,)


def test_spike_on_full_state_is_identity():
    # q=2: U(1.0, 0.5) = (1.0, 0.5)
    assert spike_op((2, 1), 2) == (2, 1)


def test_shift_expires_minimal_age():
    assert shift_op((1,)) == ()
    assert shift_op((3, 1)) == (2,)


def test_grid_to_state_physical_ages():
    cfg = single_source(0.5, theta=2.0)
    st = grid_to_state(((4, 1),), cfg, 4)
    assert st.ages == ((2.0, 0.5),)


# ---------------------------------------------------------------------------
# transition rows
# ---------------------------------------------------------------------------


def test_transition_row_single_source_hand_computed():
    # q=2, rho=0.4: from (0.5, 0) spike prob 0.2 -> successors (0,0) and (1,0)
    cfg = single_source(0.4)
    row = dict(transition_row(((1,),), cfg, 2))
    assert row[((),)] == pytest.approx(0.8)
    assert row[((2,),)] == pytest.approx(0.2)
    assert len(row) == 2


def test_transition_row_boundary_probability_one():
    # q=1, rho=1, h=1: every step spikes; (1) is absorbing
    cfg = single_source(1.0)
    row = dict(transition_row(((1,),), cfg, 1))
    assert row == {((1,),): pytest.approx(1.0)}


def test_transition_row_rejects_excessive_rate():
    cfg = single_source(1.2)
    with pytest.raises(ConfigError, match="source 0"):
        transition_row(((),), cfg, 1)


def test_transition_rows_sum_to_one_random_states(rng, cfg_pair):
    q = 5
    units = all_unit_vectors(q)
    for _ in range(1000):
        zeta = (units[rng.integers(len(units))], units[rng.integers(len(units))])
        row = transition_row(zeta, cfg_pair, q)
        assert sum(p for _, p in row) == pytest.approx(1.0, abs=1e-12)
        assert all(p >= 0.0 for _, p in row)


# ---------------------------------------------------------------------------
# precursors: oracle by exhaustive inversion of the forward map
# ---------------------------------------------------------------------------


def brute_force_precursors(zeta, cfg, q, trunc_n=None):
    units = all_unit_vectors(q)
    n_units = cfg.n_units
    preds = set()
    for cand in itertools.product(units, repeat=n_units):
        for succ, p in transition_row(cand, cfg, q, trunc_n):
            if succ == zeta and p > 0.0:
                preds.add(cand)
    return preds


def test_precursors_match_exhaustive_inversion_q2():
    cfg = single_source(0.4)
    for zeta in [((),), ((1,),), ((2,),), ((2, 1),)]:
        expected = brute_force_precursors(zeta, cfg, 2)
        got = set(precursors(zeta, 2))
        assert expected <= got  # every true predecessor is returned
        # returned precursors reach zeta with exactly the stated probability
        for v in got:
            p = precursor_prob(v, zeta, cfg, 2)
            forward = dict(transition_row(v, cfg, 2)).get(zeta, 0.0)
            assert p == pytest.approx(forward, abs=1e-15)


def test_precursors_of_head_full_state_include_spiking_shorter_state():
    # target (1.0, 0.5) at q=2 is reached by a spike from (1.0) and from
    # itself; exhaustive inversion confirms both
    cfg = single_source(0.4)
    got = set(precursors(((2, 1),), 2))
    assert got == {((2,),), ((2, 1),)}
    assert got == brute_force_precursors(((2, 1),), cfg, 2)


def test_precursors_of_zero_state_q1():
    assert set(precursors(((),), 1)) == {((),), ((1,),)}


def test_precursor_count_is_two_to_the_units(cfg_pair):
    zeta = ((3, 1), (4,))
    ps = precursors(zeta, 4)
    assert len(ps) == 2 ** cfg_pair.n_units
    assert len(set(ps)) == len(ps)


def test_every_precursor_reaches_target_with_positive_probability(rng):
    cfg = single_source(0.3)
    units = all_unit_vectors(3)
    for _ in range(50):
        zeta = (units[rng.integers(len(units))],)
        for v in precursors(zeta, 3):
            forward = dict(transition_row(v, cfg, 3)).get(zeta, 0.0)
            assert forward > 0.0


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


def test_enumerate_two_states_q1():
    ch = enumerate_states(single_source(0.5), 1)
    assert set(ch.states) == {((),), ((1,),)}


def test_enumerate_four_states_q2():
    ch = enumerate_states(single_source(0.4), 2)
    assert set(ch.states) == {((),), ((1,),), ((2,),), ((2, 1),)}


def test_enumerate_respects_power_bound(cfg_pair):
    q = 4
    ch = enumerate_states(cfg_pair, q)
    assert ch.n_states <= (2**q) ** cfg_pair.n_units


def test_enumerate_cap_error():
    with pytest.raises(ChainSizeError, match="cap=10"):
        enumerate_states(single_source(0.5), 8, cap=10)


# ---------------------------------------------------------------------------
# stationary solves
# ---------------------------------------------------------------------------


def test_stationary_two_state_hand_solution():
    # q=1, rho=0.5: P = [[.5,.5],[.5,.5]] on {(0),(1)} -> pi = (1/2, 1/2)
    ch = enumerate_states(single_source(0.5), 1)
    pi = stationary(ch)
    assert np.allclose(pi, [0.5, 0.5], atol=1e-13)


def test_stationary_fixed_point_and_balance(cfg_pair):
    ch = enumerate_states(cfg_pair, 4, trunc_n=2)
    pi = stationary(ch)
    assert float(np.max(np.abs(pi @ ch.transitions - pi))) <= 1e-12
    assert balance_residual(ch, pi) <= 1e-12
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert pi.min() >= 0.0


def test_stationary_matches_dense_solve(cfg_pair, cfg_feedback):
    for cfg, q, tn in ((cfg_pair, 4, 2), (cfg_feedback, 16, 2), (single_source(0.7), 6, None)):
        ch = enumerate_states(cfg, q, trunc_n=tn)
        assert ch.n_states <= 2000
        pi = stationary(ch)
        pid = dense_stationary(ch)
        assert float(np.sum(np.abs(pi - pid))) <= 1e-10


def test_stationary_invariant_under_source_relabeling():
    cfg = NetworkConfig(theta=1.0, source_rates=(0.6, 0.6), activations=(), background=())
    ch = enumerate_states(cfg, 3)
    pi = stationary(ch)
    for zeta, i in ch.index.items():
        swapped = (zeta[1], zeta[0])
        assert pi[i] == pytest.approx(pi[ch.index[swapped]], abs=1e-12)


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------


def test_embed_total_mass_one(cfg_pair):
    ch = enumerate_states(cfg_pair, 4, trunc_n=2)
    emb = embed(ch, stationary(ch))
    assert sum(emb.component_masses.values()) == pytest.approx(1.0, abs=1e-12)


def test_embed_component_masses_approach_poisson_window_law():
    # exact oracle: the limiting law of the window count is Poisson(rho)
    rho = 1.0
    errors = []
    for q in (4, 8, 16):
        ch = enumerate_states(single_source(rho), q)
        emb = embed(ch, stationary(ch))
        worst = max(
            abs(emb.mass((m,)) - math.exp(-rho) * rho**m / math.factorial(m))
            for m in range(4)
        )
        errors.append(worst)
    assert errors[2] < errors[1] < errors[0]


def test_embed_silent_mass_converges_to_closed_form(cfg_feedback):
    # closed form for the capped feedback neuron at constant rate 1: 0.4
    errors = []
    for q in (4, 8, 16):
        ch = enumerate_states(cfg_feedback, q, trunc_n=2)
        emb = embed(ch, stationary(ch))
        errors.append(abs(emb.silent_mass - 0.4))
    assert errors[2] < errors[1] < errors[0]


def test_embed_mean_window_count_converges(cfg_feedback):
    # bounded continuous test statistic: mean total window count; exact limit
    # for the capped feedback neuron is 0.4*1 + 0.2*2 = 0.8
    errors = []
    for q in (4, 8, 16):
        ch = enumerate_states(cfg_feedback, q, trunc_n=2)
        emb = embed(ch, stationary(ch))
        errors.append(abs(emb.mean_total_count() - 0.8))
    assert errors[2] < errors[1] < errors[0]


def test_embed_density_cells_near_flat_closed_form(cfg_feedback):
    # one-spike density of the reference feedback neuron is flat at 0.4; the
    # grid density converges to it as O(h): at q=16 cells sit within 0.1
    ch = enumerate_states(cfg_feedback, 16, trunc_n=2)
    emb = embed(ch, stationary(ch))
    cells = emb.cells[(1,)]
    assert len(cells) == 16
    for ages, value, boundary in cells:
        assert value == pytest.approx(0.4, abs=0.1)


def test_theta_rescaling_matches_normalized_chain():
    # theta=2 with rate 0.75 must reproduce the theta=1, rate=1.5 chain
    a = enumerate_states(single_source(1.5, theta=1.0), 8)
    b = enumerate_states(single_source(0.75, theta=2.0), 8)
    pa, pb = stationary(a), stationary(b)
    assert set(a.index) == set(b.index)
    for zeta, i in a.index.items():
        assert pa[i] == pytest.approx(pb[b.index[zeta]], abs=1e-12)
    emb = embed(b, pb)
    ages = sorted(c[0][0] for c in emb.cells[(1,)])
    assert ages[0] == pytest.approx(0.25)  # physical cell coordinates
    assert ages[-1] == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def test_export_round_trips_the_matrix(cfg_pair):
    ch = enumerate_states(cfg_pair, 3, trunc_n=2)
    buf = io.StringIO()
    export_chain(ch, buf)
    text = buf.getvalue().splitlines()
    legend = {}
    triplets = []
    for line in text:
        if line.startswith("#"):
            continue
        if line.startswith("state "):
            _, idx, repr_ = line.split(" ", 2)
            legend[int(idx)] = repr_
        else:
            i, j, p = line.split()
            triplets.append((int(i), int(j), float(p)))
    assert len(legend) == ch.n_states
    dense = np.zeros((ch.n_states, ch.n_states))
    for i, j, p in triplets:
        dense[i, j] = p
    assert np.allclose(dense, ch.transitions.toarray(), atol=0)
    # legend encodes per-unit ages: spot-check the zero state
    assert legend[0] == "-;-"
