"""Configuration files, suite runner, output serialization and the CLI.

Experiments are described by a JSON document with an explicit schema version
so every run is reproducible from its config alone.  The runner dispatches
to the library modules and writes line-oriented text artifacts; every output
file starts with provenance headers carrying the config hash and the seed.
The ``verify`` suite runs the cross-route comparisons (simulation vs grid
chain vs closed form plus the theorem bounds) and emits a pass/fail table;
its exit status is nonzero iff any check fails.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytic, chain as chain_mod, sim, trunc
from .core import (
    Activation,
    ConfigError,
    Kernel,
    LagRule,
    NetworkConfig,
    PlasticityConfig,
    Refractory,
    SynapseRule,
    WindowState,
)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "save_config",
    "config_hash",
    "run_suite",
    "main",
]

SCHEMA_VERSION = 1
SUITES = ("simulate", "couple", "chain", "analytic", "verify")


# ---------------------------------------------------------------------------
# Config parsing with field-path errors
# ---------------------------------------------------------------------------


_REQUIRED = object()


def _get(d: dict, key: str, path: str, types, default=_REQUIRED):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    if key not in d:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    v = d[key]
    wants_float = types is float or (isinstance(types, tuple) and float in types)
    if wants_float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, types):
        raise ConfigError(f"{path}.{key}: expected {types}, got {type(v).__name__}")
    return v


def _check_keys(d: dict, allowed: set[str], path: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{path}: unknown field(s) {sorted(extra)}")


def _parse_activation(d: dict, path: str) -> Activation:
    kind = _get(d, "kind", path, str)
    if kind == "constant":
        _check_keys(d, {"kind", "value"}, path)
        return Activation.constant(_get(d, "value", path, float))
    if kind == "linear":
        _check_keys(d, {"kind", "lo", "hi", "slope", "intercept"}, path)
        return Activation(
            "linear",
            lo=_get(d, "lo", path, float),
            hi=_get(d, "hi", path, float),
            slope=_get(d, "slope", path, float, 1.0),
            intercept=_get(d, "intercept", path, float, 0.0),
        )
    if kind == "logistic":
        _check_keys(d, {"kind", "lo", "hi", "gain", "center"}, path)
        return Activation(
            "logistic",
            lo=_get(d, "lo", path, float),
            hi=_get(d, "hi", path, float),
            gain=_get(d, "gain", path, float, 1.0),
            center=_get(d, "center", path, float, 0.0),
        )
    raise ConfigError(f"{path}.kind: unknown activation kind {kind!r}")


def _activation_dict(a: Activation) -> dict:
    if a.kind == "constant":
        return {"kind": "constant", "value": a.hi}
    if a.kind == "linear":
        return {"kind": "linear", "lo": a.lo, "hi": a.hi, "slope": a.slope, "intercept": a.intercept}
    return {"kind": "logistic", "lo": a.lo, "hi": a.hi, "gain": a.gain, "center": a.center}


def _parse_kernel(d: dict, path: str) -> Kernel:
    kind = _get(d, "kind", path, str)
    if kind == "constant":
        _check_keys(d, {"kind", "amplitude"}, path)
        return Kernel("constant", amplitude=_get(d, "amplitude", path, float, 1.0))
    if kind == "linear":
        _check_keys(d, {"kind", "slope"}, path)
        return Kernel("linear", slope=_get(d, "slope", path, float, 1.0))
    if kind == "triangle":
        _check_keys(d, {"kind", "amplitude", "peak"}, path)
        return Kernel(
            "triangle",
            amplitude=_get(d, "amplitude", path, float, 1.0),
            peak=_get(d, "peak", path, float, 0.5),
        )
    if kind == "bump":
        _check_keys(d, {"kind", "amplitude"}, path)
        return Kernel("bump", amplitude=_get(d, "amplitude", path, float, 1.0))
    raise ConfigError(f"{path}.kind: unknown kernel kind {kind!r}")


def _kernel_dict(k: Kernel) -> dict:
    if k.kind == "constant":
        return {"kind": "constant", "amplitude": k.amplitude}
    if k.kind == "linear":
        return {"kind": "linear", "slope": k.slope}
    if k.kind == "triangle":
        return {"kind": "triangle", "amplitude": k.amplitude, "peak": k.peak}
    return {"kind": "bump", "amplitude": k.amplitude}


def _parse_unit_ref(s: str, path: str, n_sources: int, n_neurons: int) -> tuple[bool, int]:
    """Parse 'source:K' / 'neuron:J' (1-based) into (is_source, 0-based index)."""
    if not isinstance(s, str) or ":" not in s:
        raise ConfigError(f"{path}: expected 'source:K' or 'neuron:J', got {s!r}")
    kind, _, num = s.partition(":")
    try:
        idx = int(num) - 1
    except ValueError:
        raise ConfigError(f"{path}: bad unit number in {s!r}") from None
    if kind == "source":
        if not 0 <= idx < n_sources:
            raise ConfigError(f"{path}: source index {num} outside 1..{n_sources}")
        return True, idx
    if kind == "neuron":
        if not 0 <= idx < n_neurons:
            raise ConfigError(f"{path}: neuron index {num} outside 1..{n_neurons}")
        return False, idx
    raise ConfigError(f"{path}: unit kind must be 'source' or 'neuron', got {kind!r}")


@dataclass(frozen=True)
class RunBlock:
    horizon: float = 10_000.0
    burn_in: float = 50.0
    seed: int = 1
    stride: float | None = None  # defaults to theta / 4
    replications: int = 200
    bins: int = 20
    diag_horizon: float = 40.0


@dataclass(frozen=True)
class CoupleBlock:
    levels: tuple[int, ...] = (2, 3, 4, 5)
    blocks: int = 20_000


@dataclass(frozen=True)
class ChainBlock:
    q: int = 8
    q_list: tuple[int, ...] = (4, 8, 16)
    state_cap: int = 500_000


@dataclass(frozen=True)
class AnalyticBlock:
    step: float = 1e-3
    n_max: int = 12
    gamma: dict | None = None  # shot-noise jump rate spec, e.g. {"kind": "constant", "value": 1.2}


@dataclass
class ExperimentConfig:
    """Validated experiment description with all defaults filled in."""

    network: NetworkConfig
    pcfg: PlasticityConfig | None
    truncation: int | None
    run: RunBlock
    couple: CoupleBlock
    chain: ChainBlock
    analytic: AnalyticBlock
    _network_dict: dict = field(repr=False)
    _plasticity_dict: dict | None = field(repr=False)

    def to_dict(self) -> dict:
        d = {
            "schema": SCHEMA_VERSION,
            "network": self._network_dict,
            "truncation": self.truncation,
            "run": {
                "horizon": self.run.horizon,
                "burn_in": self.run.burn_in,
                "seed": self.run.seed,
                "stride": self.run.stride,
                "replications": self.run.replications,
                "bins": self.run.bins,
                "diag_horizon": self.run.diag_horizon,
            },
            "couple": {"levels": list(self.couple.levels), "blocks": self.couple.blocks},
            "chain": {
                "q": self.chain.q,
                "q_list": list(self.chain.q_list),
                "state_cap": self.chain.state_cap,
            },
            "analytic": {
                "step": self.analytic.step,
                "n_max": self.analytic.n_max,
                "gamma": self.analytic.gamma,
            },
        }
        if self._plasticity_dict is not None:
            d["plasticity"] = self._plasticity_dict
        return d

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()

    def is_feedback_example(self) -> bool:
        """One feedback neuron, no sources, two-spike truncation: the network
        whose stationary density has a closed form."""
        return (
            self.network.n_sources == 0
            and self.network.n_neurons == 1
            and self.truncation == 2
            and self.network.refractory.kind == "none"
        )

    def feedback_rate(self):
        """Rate of the feedback neuron as a function of the age of its single
        window spike (age 0 doubles as the empty state, by continuity)."""
        cfg = self.network

        def rate(age: float) -> float:
            if age <= 0.0:
                return cfg.activations[0](cfg.background[0])
            state = WindowState(cfg.theta, ((min(age, cfg.theta),),))
            return trunc.truncated_rate(state, cfg, 0, self.truncation or 10**9)

        return rate


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a raw config document and fill defaults."""
    _check_keys(
        doc,
        {"schema", "network", "plasticity", "truncation", "run", "couple", "chain", "analytic"},
        "config",
    )
    schema = _get(doc, "schema", "config", int)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"config.schema: unsupported version {schema} (expected {SCHEMA_VERSION})")
    nd = _get(doc, "network", "config", dict)
    _check_keys(nd, {"theta", "sources", "neurons", "refractory", "connections"}, "config.network")
    theta = _get(nd, "theta", "config.network", float, 1.0)
    sources = _get(nd, "sources", "config.network", list, [])
    neurons = _get(nd, "neurons", "config.network", list, [])
    rates = []
    for k, s in enumerate(sources):
        path = f"config.network.sources[{k}]"
        _check_keys(s, {"rate"}, path)
        rates.append(_get(s, "rate", path, float))
    acts, backgrounds = [], []
    for j, nrn in enumerate(neurons):
        path = f"config.network.neurons[{j}]"
        _check_keys(nrn, {"activation", "background"}, path)
        acts.append(_parse_activation(_get(nrn, "activation", path, dict), path + ".activation"))
        backgrounds.append(_get(nrn, "background", path, float, 0.0))
    refr_d = _get(nd, "refractory", "config.network", dict, {"kind": "none"})
    kind = _get(refr_d, "kind", "config.network.refractory", str)
    if kind == "none":
        refr = Refractory("none")
    elif kind == "hard":
        refr = Refractory("hard", delta=_get(refr_d, "delta", "config.network.refractory", float))
    else:
        raise ConfigError(f"config.network.refractory.kind: unknown kind {kind!r}")
    m, n = len(rates), len(acts)
    src_k = [[None] * m for _ in range(n)]
    rec_k = [[None] * n for _ in range(n)]
    ws = np.zeros((n, m))
    wr = np.zeros((n, n))
    conns = _get(nd, "connections", "config.network", list, [])
    for c, cd in enumerate(conns):
        path = f"config.network.connections[{c}]"
        _check_keys(cd, {"pre", "post", "weight", "kernel"}, path)
        is_src, pre = _parse_unit_ref(_get(cd, "pre", path, str), path + ".pre", m, n)
        post = _get(cd, "post", path, int) - 1
        if not 0 <= post < n:
            raise ConfigError(f"{path}.post: neuron index outside 1..{n}")
        w = _get(cd, "weight", path, float)
        ker = _parse_kernel(_get(cd, "kernel", path, dict), path + ".kernel")
        if is_src:
            src_k[post][pre] = ker
            ws[post, pre] = w
        else:
            rec_k[post][pre] = ker
            wr[post, pre] = w
    try:
        network = NetworkConfig(
            theta=theta,
            source_rates=tuple(rates),
            activations=tuple(acts),
            background=tuple(backgrounds),
            refractory=refr,
            source_kernels=tuple(tuple(r) for r in src_k),
            recurrent_kernels=tuple(tuple(r) for r in rec_k),
            w_sources=ws,
            w_recurrent=wr,
        )
        network.validate()
    except ConfigError as e:
        raise ConfigError(f"config.network: {e}") from None

    pcfg = None
    pd = doc.get("plasticity")
    plasticity_dict = None
    if pd is not None:
        _check_keys(pd, {"connections"}, "config.plasticity")
        rules = []
        for c, cd in enumerate(_get(pd, "connections", "config.plasticity", list)):
            path = f"config.plasticity.connections[{c}]"
            _check_keys(cd, {"pre", "post", "levels", "rules", "initial_level"}, path)
            is_src, pre = _parse_unit_ref(_get(cd, "pre", path, str), path + ".pre", m, n)
            post = _get(cd, "post", path, int) - 1
            if not 0 <= post < n:
                raise ConfigError(f"{path}.post: neuron index outside 1..{n}")
            levels = tuple(float(x) for x in _get(cd, "levels", path, list))
            lag_rules = []
            for r, rd in enumerate(_get(cd, "rules", path, list)):
                rpath = f"{path}.rules[{r}]"
                _check_keys(rd, {"interval", "targets"}, rpath)
                iv = _get(rd, "interval", rpath, list)
                if len(iv) != 2:
                    raise ConfigError(f"{rpath}.interval: expected [lo, hi]")
                targets = tuple(int(x) for x in _get(rd, "targets", rpath, list))
                lag_rules.append(LagRule(float(iv[0]), float(iv[1]), targets))
            try:
                rules.append(
                    SynapseRule(
                        post=post,
                        pre=pre,
                        pre_is_source=is_src,
                        levels=levels,
                        rules=tuple(lag_rules),
                        initial_level=_get(cd, "initial_level", path, int, 1),
                    )
                )
            except ConfigError as e:
                raise ConfigError(f"{path}: {e}") from None
        pcfg = PlasticityConfig(tuple(rules))
        try:
            pcfg.validate_against(network)
        except ConfigError as e:
            raise ConfigError(f"config.plasticity: {e}") from None
        plasticity_dict = pd

    truncation = doc.get("truncation")
    if truncation is not None and (not isinstance(truncation, int) or truncation < 1):
        raise ConfigError(f"config.truncation: expected an integer >= 1, got {truncation!r}")

    rd = _get(doc, "run", "config", dict, {})
    _check_keys(rd, {"horizon", "burn_in", "seed", "stride", "replications", "bins", "diag_horizon"}, "config.run")
    run = RunBlock(
        horizon=_get(rd, "horizon", "config.run", float, RunBlock.horizon),
        burn_in=_get(rd, "burn_in", "config.run", float, RunBlock.burn_in),
        seed=_get(rd, "seed", "config.run", int, RunBlock.seed),
        stride=_get(rd, "stride", "config.run", (float, type(None)), None),
        replications=_get(rd, "replications", "config.run", int, RunBlock.replications),
        bins=_get(rd, "bins", "config.run", int, RunBlock.bins),
        diag_horizon=_get(rd, "diag_horizon", "config.run", float, RunBlock.diag_horizon),
    )
    if not run.burn_in < run.horizon:
        raise ConfigError("config.run.burn_in: must be smaller than config.run.horizon")
    if run.bins < 2:
        raise ConfigError("config.run.bins: need at least 2 bins")

    cd = _get(doc, "couple", "config", dict, {})
    _check_keys(cd, {"levels", "blocks"}, "config.couple")
    couple = CoupleBlock(
        levels=tuple(int(x) for x in _get(cd, "levels", "config.couple", list, list(CoupleBlock.levels))),
        blocks=_get(cd, "blocks", "config.couple", int, CoupleBlock.blocks),
    )
    if any(x < 1 for x in couple.levels):
        raise ConfigError("config.couple.levels: truncation levels must be >= 1")

    hd = _get(doc, "chain", "config", dict, {})
    _check_keys(hd, {"q", "q_list", "state_cap"}, "config.chain")
    chainb = ChainBlock(
        q=_get(hd, "q", "config.chain", int, ChainBlock.q),
        q_list=tuple(int(x) for x in _get(hd, "q_list", "config.chain", list, list(ChainBlock.q_list))),
        state_cap=_get(hd, "state_cap", "config.chain", int, ChainBlock.state_cap),
    )
    # grid-transition precondition: per step, every unit's spike probability
    # rate * theta / q must not exceed 1 for any grid this config names
    for q in {chainb.q, *chainb.q_list}:
        if q < 1:
            raise ConfigError("config.chain: grid resolutions must be >= 1")
        step = network.theta / q
        for k, rho in enumerate(network.source_rates):
            if rho * step > 1.0:
                raise ConfigError(
                    f"config.chain: source {k + 1} spike probability per grid step is "
                    f"{rho * step:.6g} > 1 at q={q}; one-step spike probabilities must be <= 1 "
                    f"(raise q to at least {math.ceil(rho * network.theta)})"
                )
        for i, hi in enumerate(network.rate_bounds):
            if hi * step > 1.0:
                raise ConfigError(
                    f"config.chain: neuron {i + 1} spike probability per grid step can reach "
                    f"{hi * step:.6g} > 1 at q={q}; one-step spike probabilities must be <= 1 "
                    f"(raise q to at least {math.ceil(hi * network.theta)})"
                )

    ad = _get(doc, "analytic", "config", dict, {})
    _check_keys(ad, {"step", "n_max", "gamma"}, "config.analytic")
    gamma = ad.get("gamma")
    if gamma is not None:
        _check_keys(gamma, {"kind", "value"}, "config.analytic.gamma")
        if _get(gamma, "kind", "config.analytic.gamma", str) != "constant":
            raise ConfigError("config.analytic.gamma.kind: only 'constant' is supported")
        _get(gamma, "value", "config.analytic.gamma", float)
    analyticb = AnalyticBlock(
        step=_get(ad, "step", "config.analytic", float, AnalyticBlock.step),
        n_max=_get(ad, "n_max", "config.analytic", int, AnalyticBlock.n_max),
        gamma=gamma,
    )

    network_dict = {
        "theta": theta,
        "sources": [{"rate": r} for r in rates],
        "neurons": [
            {"activation": _activation_dict(a), "background": b}
            for a, b in zip(acts, backgrounds)
        ],
        "refractory": {"kind": "none"} if refr.kind == "none" else {"kind": "hard", "delta": refr.delta},
        "connections": [
            {
                "pre": ("source:" if is_src else "neuron:") + str(pre + 1),
                "post": post + 1,
                "weight": float((ws if is_src else wr)[post, pre]),
                "kernel": _kernel_dict((src_k if is_src else rec_k)[post][pre]),
            }
            for is_src, pre, post in [
                (True, k, i) for i in range(n) for k in range(m) if src_k[i][k] is not None
            ]
            + [(False, j, i) for i in range(n) for j in range(n) if rec_k[i][j] is not None]
        ],
    }
    return ExperimentConfig(
        network=network,
        pcfg=pcfg,
        truncation=truncation,
        run=run,
        couple=couple,
        chain=chainb,
        analytic=analyticb,
        _network_dict=network_dict,
        _plasticity_dict=plasticity_dict,
    )


def load_config(path) -> ExperimentConfig:
    """Load, validate and default-fill a JSON experiment config."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: not valid JSON: {e}") from None
    return parse_config(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------


def _header(cfg: ExperimentConfig, seed: int, **extra) -> str:
    lines = [f"# config_hash={config_hash(cfg)}", f"# seed={seed}", f"# schema={SCHEMA_VERSION}"]
    for k, v in extra.items():
        lines.append(f"# {k}={v}")
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_events(path, log: sim.EventLog, cfg: ExperimentConfig, seed: int) -> None:
    """Events as (time, unit, kind) rows; kind is source-spike/neuron-spike."""
    with open(path, "w") as fh:
        fh.write(_header(cfg, seed, columns="time unit kind"))
        for t, u, k in zip(log.times, log.units, log.kinds):
            kind = "source-spike" if k == sim.KIND_SOURCE else "neuron-spike"
            fh.write(f"{t!r} {u} {kind}\n")


def write_table(path, rows, cfg: ExperimentConfig, seed: int, columns: str, **extra) -> None:
    """Delimited (coordinate..., value) rows with provenance headers."""
    with open(path, "w") as fh:
        fh.write(_header(cfg, seed, columns=columns, **extra))
        for row in rows:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def write_summary(path, summary: dict, cfg: ExperimentConfig, seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(_header(cfg, seed))
        for k, v in summary.items():
            fh.write(f"{k} = {_fmt(v)}\n")


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def _suite_simulate(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    net, run = cfg.network, cfg.run
    log = sim.simulate(net, run.horizon, seed, pcfg=cfg.pcfg, trunc_n=cfg.truncation)
    write_events(out / "events.txt", log, cfg, seed)
    summary = {"suite": "simulate", "events": len(log), "horizon": run.horizon}
    est = sim.estimate_component_masses(
        net, run.horizon, run.burn_in, seed,
        stride=run.stride, pcfg=cfg.pcfg, trunc_n=cfg.truncation,
    )
    rows = [comp + (mass, est.sigmas[comp]) for comp, mass in sorted(est.masses.items())]
    write_table(
        out / "component_masses.txt", rows, cfg, seed,
        columns="counts-per-unit... mass sigma",
        samples=est.n_samples, burn_in=est.burn_in, stride=est.stride,
    )
    summary["mass_total"] = est.total()
    summary["overflow_mass"] = est.overflow_mass
    for u in range(net.n_units):
        try:
            dens = sim.estimate_density_1d(
                net, u, run.horizon, run.burn_in, seed,
                bins=run.bins, stride=run.stride, pcfg=cfg.pcfg, trunc_n=cfg.truncation,
            )
        except Exception:
            continue  # component never observed: nothing to tabulate
        rows = [
            (c, d, s)
            for c, d, s in zip(dens.centers, dens.density, dens.density_sigma)
        ]
        write_table(
            out / f"density_unit{u}.txt", rows, cfg, seed,
            columns="age density sigma",
            component_mass=dens.component_mass, bins=run.bins,
        )
        summary[f"unit{u}_single_spike_mass"] = dens.component_mass
    return summary


def _suite_couple(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    net, cpl = cfg.network, cfg.couple
    summary: dict = {"suite": "couple", "blocks": cpl.blocks}
    rows = []
    ok = True
    for n in cpl.levels:
        stats = trunc.simulate_coupled(net, n, cpl.blocks, seed)
        bound = trunc.truncation_bound(net, n)
        within = stats.p_estimate <= bound + 3.0 * stats.sigma
        ok &= within
        rows.append((n, stats.p_estimate, stats.sigma, bound, stats.splits, stats.merges, within))
        summary[f"p_{n}"] = stats.p_estimate
        summary[f"sigma_{n}"] = stats.sigma
        summary[f"bound_{n}"] = bound
    write_table(
        out / "coupling.txt", rows, cfg, seed,
        columns="n p_estimate sigma bound splits merges within_bound",
    )
    summary["within_bounds"] = ok
    return summary


def _suite_chain(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    net, cb = cfg.network, cfg.chain
    ch = chain_mod.enumerate_states(net, cb.q, trunc_n=cfg.truncation, cap=cb.state_cap)
    pi = chain_mod.stationary(ch)
    resid = float(np.max(np.abs(pi @ ch.transitions - pi)))
    bal = chain_mod.balance_residual(ch, pi)
    emb = chain_mod.embed(ch, pi)
    with open(out / f"chain_q{cb.q}.txt", "w") as fh:
        fh.write(_header(cfg, seed))
        chain_mod.export_chain(ch, fh)
    rows = [comp + (mass,) for comp, mass in sorted(emb.component_masses.items())]
    write_table(
        out / f"chain_masses_q{cb.q}.txt", rows, cfg, seed,
        columns="counts-per-unit... mass", q=cb.q, states=ch.n_states,
    )
    dens_rows = []
    for comp in sorted(emb.cells):
        for ages, density, boundary in sorted(emb.cells[comp]):
            dens_rows.append(tuple(ages) + (density, boundary))
    write_table(
        out / f"chain_density_q{cb.q}.txt", dens_rows, cfg, seed,
        columns="ages... density boundary_cell", q=cb.q,
        cell=net.theta / cb.q,
    )
    return {
        "suite": "chain",
        "q": cb.q,
        "states": ch.n_states,
        "fixed_point_residual": resid,
        "balance_residual": bal,
        "silent_mass": emb.silent_mass,
        "mean_window_count": emb.mean_total_count(),
    }


def _suite_analytic(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    ab = cfg.analytic
    summary: dict = {"suite": "analytic"}
    did = False
    if cfg.is_feedback_example():
        did = True
        rate = cfg.feedback_rate()
        dens = analytic.example1_density(rate, step=ab.step)
        psi0, m1, m2 = dens.component_masses()
        rows = list(zip(dens.grid, dens.psi1))
        write_table(
            out / "analytic_feedback_psi1.txt", rows, cfg, seed,
            columns="age density", step=ab.step, normalization=dens.psi0,
        )
        est = analytic.FeedbackEstimate(
            theta=dens.grid, psi0=dens.psi0, psi1=dens.psi1,
            psi2_boundary=dens.psi2_boundary(dens.grid),
        )
        report = analytic.stationary_equation_residual(est, rate)
        summary.update(
            psi0=psi0, one_spike_mass=m1, two_spike_mass=m2,
            total_mass=psi0 + m1 + m2,
            symmetry_defect=dens.symmetry_defect(),
            ode_residual_max=report.ode_max,
            empty_balance_residual=abs(report.empty_balance),
            boundary_residual=abs(report.boundary),
        )
    if ab.gamma is not None:
        did = True
        gval = float(ab.gamma["value"])
        dens2 = analytic.example2_density(gval, n_max=ab.n_max, step=ab.step)
        ys = np.linspace(ab.step, ab.n_max + 1.0, 2000)
        rows = list(zip(ys, dens2.pdf(ys)))
        write_table(
            out / "analytic_shotnoise_density.txt", rows, cfg, seed,
            columns="value density", step=ab.step, n_max=ab.n_max,
            normalization=dens2.norm, tail_bound=dens2.tail_bound,
        )
        resid = analytic.example2_balance_residual(dens2, gval, np.linspace(0.01, 5.0, 500))
        summary["shotnoise_balance_residual_max"] = float(np.max(np.abs(resid)))
        summary["shotnoise_tail_bound"] = dens2.tail_bound
    if not did:
        raise ConfigError(
            "analytic suite needs a feedback-shaped network (no sources, one neuron, "
            "truncation 2) or an analytic.gamma block"
        )
    return summary


def _feedback_estimate_from_sim(cfg: ExperimentConfig, seed: int):
    """Histogram-based FeedbackEstimate for the feedback network."""
    net, run = cfg.network, cfg.run
    est = sim.estimate_component_masses(
        net, run.horizon, run.burn_in, seed, stride=run.stride, trunc_n=cfg.truncation
    )
    dens = sim.estimate_density_1d(
        net, 0, run.horizon, run.burn_in, seed,
        bins=run.bins, stride=run.stride, trunc_n=cfg.truncation,
    )
    return est, dens


def _suite_verify(cfg: ExperimentConfig, out: Path, seed: int, quiet: bool) -> dict:
    """Cross-route acceptance comparisons; pass/fail per check."""
    checks: list[tuple[str, float, float, bool]] = []  # name, value, tolerance, ok

    def check(name: str, value: float, tol: float, ok=None):
        ok = (value <= tol) if ok is None else bool(ok)
        checks.append((name, float(value), float(tol), ok))
        if not quiet:
            print(f"  {'PASS' if ok else 'FAIL'}  {name}: value={value:.3e} tol={tol:.3e}")

    net = cfg.network
    if cfg.is_feedback_example():
        rate = cfg.feedback_rate()
        dens = analytic.example1_density(rate, step=cfg.analytic.step)
        psi0, m1, m2 = dens.component_masses()
        check("analytic_total_mass_error", abs(psi0 + m1 + m2 - 1.0), 1e-10)
        check("analytic_symmetry_defect", dens.symmetry_defect(), 1e-8)
        resid = analytic.example1_ode_residual(dens, rate)
        check("analytic_ode_residual", float(np.max(np.abs(resid))), 1e-6)

        est, hist = _feedback_estimate_from_sim(cfg, seed)
        for comp, target in (((0,), psi0), ((1,), m1), ((2,), m2)):
            diff = abs(est.mass(comp) - target)
            check(f"sim_mass_{comp[0]}_vs_analytic", diff, 3.0 * est.sigma(comp) + 1e-12)
        psi1_bins = dens.psi1_at(hist.centers)
        worst = float(np.max(np.abs(hist.density - psi1_bins) / np.maximum(hist.density_sigma, 1e-300)))
        check("sim_density_vs_analytic_3sigma", worst, 3.0)
        bound1 = trunc.density_bound(net, (), (1,))
        worst_cell = float(np.max(hist.density - 3.0 * hist.density_sigma))
        check("density_bound_one_spike", worst_cell, bound1)

        errors = []
        for q in sorted(cfg.chain.q_list):
            ch = chain_mod.enumerate_states(net, q, trunc_n=cfg.truncation, cap=cfg.chain.state_cap)
            pi = chain_mod.stationary(ch)
            check(f"chain_q{q}_fixed_point", float(np.max(np.abs(pi @ ch.transitions - pi))), 1e-12)
            check(f"chain_q{q}_balance", chain_mod.balance_residual(ch, pi), 1e-12)
            if ch.n_states <= 2000:
                pid = chain_mod.dense_stationary(ch)
                check(f"chain_q{q}_dense_agree", float(np.sum(np.abs(pi - pid))), 1e-10)
            errors.append(abs(chain_mod.embed(ch, pi).silent_mass - psi0))
        dec = all(errors[i + 1] < errors[i] for i in range(len(errors) - 1))
        check("chain_silent_error_decreasing", errors[-1], errors[0], ok=dec)

        init_b = WindowState(net.theta, ((net.theta, net.theta / 2.0),))
        grid = np.arange(0.0, cfg.run.diag_horizon + 1e-9, net.theta)
        curve = sim.ergodicity_diagnostic(
            net, net.empty_state(), init_b, grid, cfg.run.replications, seed, trunc_n=cfg.truncation
        )
        bound = sim.merge_bound(net, grid)
        check("merge_curve_nonincreasing", 0.0, 0.0, ok=bool(np.all(np.diff(curve.fraction) <= 1e-12)))
        dom = bool(np.all(curve.fraction <= bound + 3.0 * curve.sigma + 1e-12))
        check("merge_curve_dominated", float(np.max(curve.fraction - bound)), 0.1, ok=dom)
        check("merge_curve_final", float(curve.fraction[-1]), 0.05)
        write_table(
            out / "merge_curve.txt",
            list(zip(curve.times, curve.fraction, curve.sigma, bound)),
            cfg, seed, columns="time fraction sigma bound",
        )

        prev = math.inf
        for n in cfg.couple.levels:
            stats = trunc.simulate_coupled(net, n, cfg.couple.blocks, seed)
            b = trunc.truncation_bound(net, n)
            check(f"coupling_p{n}_bound", stats.p_estimate, b + 3.0 * stats.sigma)
            check(f"coupling_p{n}_decreasing", stats.p_estimate, prev, ok=stats.p_estimate <= prev)
            prev = stats.p_estimate
    else:
        est = sim.estimate_component_masses(
            net, cfg.run.horizon, cfg.run.burn_in, seed, stride=cfg.run.stride,
            pcfg=cfg.pcfg, trunc_n=cfg.truncation,
        )
        check("mass_total_error", abs(est.total() - 1.0), 1e-12)
        empty = tuple(0 for _ in range(net.n_units))
        floor = math.exp(-net.theta * net.total_rate_bound)
        check(
            "silent_mass_floor", floor - est.mass(empty), 3.0 * est.sigma(empty),
        )
        for u in range(net.n_units):
            try:
                hist = sim.estimate_density_1d(
                    net, u, cfg.run.horizon, cfg.run.burn_in, seed,
                    bins=cfg.run.bins, stride=cfg.run.stride,
                    pcfg=cfg.pcfg, trunc_n=cfg.truncation,
                )
            except Exception:
                continue
            e_u = tuple(1 if v == u else 0 for v in range(net.n_units))
            b = trunc.density_bound(net, e_u[: net.n_sources], e_u[net.n_sources:])
            worst = float(np.max(hist.density - 3.0 * hist.density_sigma))
            check(f"density_bound_unit{u}", worst, b)
        ch = chain_mod.enumerate_states(net, cfg.chain.q, trunc_n=cfg.truncation, cap=cfg.chain.state_cap)
        pi = chain_mod.stationary(ch)
        check("chain_fixed_point", float(np.max(np.abs(pi @ ch.transitions - pi))), 1e-12)
        check("chain_balance", chain_mod.balance_residual(ch, pi), 1e-12)
        if ch.n_states <= 2000:
            pid = chain_mod.dense_stationary(ch)
            check("chain_dense_agree", float(np.sum(np.abs(pi - pid))), 1e-10)

    # determinism: identical config+seed must produce byte-identical artifacts
    d1, d2 = out / "_det1", out / "_det2"
    d1.mkdir(exist_ok=True)
    d2.mkdir(exist_ok=True)
    _suite_simulate(cfg, d1, seed)
    _suite_simulate(cfg, d2, seed)
    same = all(
        (d1 / p.name).read_bytes() == (d2 / p.name).read_bytes()
        for p in sorted(d1.iterdir())
    )
    check("determinism_byte_identical", 0.0, 0.0, ok=same)

    ok_all = all(c[3] for c in checks)
    write_table(
        out / "verify_checks.txt",
        [(name, value, tol, ok) for name, value, tol, ok in checks],
        cfg, seed, columns="check value tolerance pass",
    )
    summary = {"suite": "verify", "checks": len(checks), "passed": sum(c[3] for c in checks)}
    summary["all_passed"] = ok_all
    return summary


def run_suite(
    cfg: ExperimentConfig, suite: str, out_dir, seed: int | None = None, quiet: bool = False
) -> tuple[dict, bool]:
    """Run one suite; returns (summary, ok).  Artifacts land in ``out_dir``."""
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {SUITES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.run.seed if seed is None else seed
    if not quiet:
        print(f"[{suite}] config {config_hash(cfg)} seed {seed} -> {out}")
    if suite == "simulate":
        summary = _suite_simulate(cfg, out, seed)
    elif suite == "couple":
        summary = _suite_couple(cfg, out, seed)
    elif suite == "chain":
        summary = _suite_chain(cfg, out, seed)
    elif suite == "analytic":
        summary = _suite_analytic(cfg, out, seed)
    else:
        summary = _suite_verify(cfg, out, seed, quiet)
    ok = bool(summary.get("all_passed", summary.get("within_bounds", True)))
    summary["ok"] = ok
    write_summary(out / f"{suite}_summary.txt", summary, cfg, seed)
    if not quiet:
        print(f"[{suite}] {'ok' if ok else 'FAILED'}; summary in {out / (suite + '_summary.txt')}")
    return summary, ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spikestat",
        description="Stationary analysis of bounded-memory Poisson spiking networks",
    )
    sub = parser.add_subparsers(dest="suite", required=True)
    for name, doc in (
        ("simulate", "simulate a trajectory and tabulate stationary estimates"),
        ("couple", "couple the full and truncated networks and check the bound"),
        ("chain", "solve the grid Markov chain and embed its stationary law"),
        ("analytic", "evaluate the closed-form stationary densities"),
        ("verify", "run all cross-route acceptance comparisons"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config.run.seed")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        _, ok = run_suite(cfg, args.suite, args.out, seed=args.seed, quiet=args.quiet)
    except (ConfigError, chain_mod.ChainSizeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
