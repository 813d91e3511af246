import json
from pathlib import Path

import pytest

from spikestat.chain import ChainSizeError
from spikestat.core import ConfigError
from spikestat.harness import (
    SUITES,
    config_hash,
    load_config,
    main,
    parse_config,
    run_suite,
    save_config,
)


def minimal_source_doc(**overrides) -> dict:
    doc = {
        "schema": 1,
        "network": {
            "theta": 1.0,
            "sources": [{"rate": 1.5}],
            "neurons": [],
            "connections": [],
        },
        "run": {"horizon": 400.0, "burn_in": 10.0, "seed": 1},
        "chain": {"q": 4, "q_list": [2, 4]},
    }
    doc.update(overrides)
    return doc


def feedback_doc(**run_overrides) -> dict:
    run = {"horizon": 3000.0, "burn_in": 20.0, "seed": 1, "replications": 60,
           "bins": 10, "diag_horizon": 30.0}
    run.update(run_overrides)
    return {
        "schema": 1,
        "network": {
            "theta": 1.0,
            "sources": [],
            "neurons": [{"activation": {"kind": "constant", "value": 1.0}, "background": 0.0}],
            "connections": [],
        },
        "truncation": 2,
        "run": run,
        "couple": {"levels": [2, 3], "blocks": 4000},
        "chain": {"q": 8, "q_list": [4, 8]},
    }


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------


def test_minimal_config_fills_defaults():
    cfg = parse_config(minimal_source_doc())
    assert cfg.run.stride is None
    assert cfg.run.replications == 200
    assert cfg.analytic.step == 1e-3
    assert cfg.couple.levels == (2, 3, 4, 5)
    d = cfg.to_dict()
    assert d["run"]["burn_in"] == 10.0
    assert d["analytic"]["n_max"] == 12


def test_roundtrip_identity(tmp_path):
    cfg = parse_config(feedback_doc())
    p = tmp_path / "cfg.json"
    save_config(cfg, p)
    cfg2 = load_config(p)
    assert cfg == cfg2
    assert config_hash(cfg) == config_hash(cfg2)


def test_missing_field_names_path():
    doc = minimal_source_doc()
    del doc["network"]["theta"]
    doc["network"]["sources"][0] = {}
    with pytest.raises(ConfigError, match=r"config\.network\.sources\[0\]\.rate"):
        parse_config(doc)


def test_unknown_field_rejected():
    doc = minimal_source_doc()
    doc["network"]["typo_field"] = 1
    with pytest.raises(ConfigError, match="typo_field"):
        parse_config(doc)


def test_grid_precondition_rejected_with_remedy():
    doc = minimal_source_doc()
    doc["network"]["sources"][0]["rate"] = 1.2
    doc["chain"] = {"q": 1, "q_list": [1]}
    with pytest.raises(ConfigError, match=r"1\.2 > 1.*raise q to at least 2"):
        parse_config(doc)


def test_bad_unit_reference():
    doc = minimal_source_doc()
    doc["network"]["connections"] = [
        {"pre": "source:2", "post": 1, "weight": 1.0, "kernel": {"kind": "constant"}}
    ]
    with pytest.raises(ConfigError, match=r"connections\[0\]\.pre"):
        parse_config(doc)


def test_schema_version_checked():
    with pytest.raises(ConfigError, match="schema"):
        parse_config(minimal_source_doc(schema=99))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")


def test_load_config_invalid_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)


def test_plasticity_block_parses():
    doc = {
        "schema": 1,
        "network": {
            "theta": 1.0,
            "sources": [{"rate": 1.0}],
            "neurons": [{"activation": {"kind": "constant", "value": 0.8}, "background": 0.0}],
            "connections": [
                {"pre": "source:1", "post": 1, "weight": 1.0, "kernel": {"kind": "constant"}}
            ],
        },
        "plasticity": {
            "connections": [
                {
                    "pre": "source:1",
                    "post": 1,
                    "levels": [0.5, 2.0],
                    "rules": [{"interval": [-0.1, 0.0], "targets": [2, 2]}],
                }
            ]
        },
        "run": {"horizon": 100.0, "burn_in": 5.0, "seed": 1},
    }
    cfg = parse_config(doc)
    assert cfg.pcfg is not None
    assert cfg.pcfg.connections[0].levels == (0.5, 2.0)
    assert cfg == parse_config(json.loads(json.dumps(cfg.to_dict())))


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def test_simulate_suite_writes_provenance(tmp_path):
    cfg = parse_config(minimal_source_doc())
    summary, ok = run_suite(cfg, "simulate", tmp_path, quiet=True)
    assert ok
    for name in ("events.txt", "component_masses.txt", "simulate_summary.txt"):
        text = (tmp_path / name).read_text()
        assert text.startswith(f"# config_hash={config_hash(cfg)}\n# seed=1\n")
    assert summary["mass_total"] == pytest.approx(1.0, abs=1e-12)


def test_artifacts_byte_identical_across_reruns(tmp_path):
    cfg = parse_config(minimal_source_doc())
    a, b = tmp_path / "a", tmp_path / "b"
    run_suite(cfg, "simulate", a, quiet=True)
    run_suite(cfg, "simulate", b, quiet=True)
    for p in sorted(a.iterdir()):
        assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_seed_override_changes_events(tmp_path):
    cfg = parse_config(minimal_source_doc())
    a, b = tmp_path / "a", tmp_path / "b"
    run_suite(cfg, "simulate", a, quiet=True)
    run_suite(cfg, "simulate", b, seed=2, quiet=True)
    assert a.joinpath("events.txt").read_bytes() != b.joinpath("events.txt").read_bytes()


def test_chain_suite_reports_residuals(tmp_path):
    cfg = parse_config(feedback_doc())
    summary, ok = run_suite(cfg, "chain", tmp_path, quiet=True)
    assert ok
    assert summary["fixed_point_residual"] <= 1e-12
    assert summary["balance_residual"] <= 1e-12
    assert (tmp_path / "chain_q8.txt").exists()


def test_chain_suite_cap_error(tmp_path):
    cfg = parse_config(minimal_source_doc(chain={"q": 10, "q_list": [10], "state_cap": 50}))
    with pytest.raises(ChainSizeError, match="cap=50"):
        run_suite(cfg, "chain", tmp_path, quiet=True)


def test_couple_suite_within_bounds(tmp_path):
    cfg = parse_config(feedback_doc())
    summary, ok = run_suite(cfg, "couple", tmp_path, quiet=True)
    assert ok and summary["within_bounds"]
    assert (tmp_path / "coupling.txt").exists()


def test_analytic_suite_feedback(tmp_path):
    cfg = parse_config(feedback_doc())
    summary, ok = run_suite(cfg, "analytic", tmp_path, quiet=True)
    assert ok
    assert summary["psi0"] == pytest.approx(0.4, abs=1e-10)
    assert (tmp_path / "analytic_feedback_psi1.txt").exists()


def test_analytic_suite_shotnoise(tmp_path):
    doc = minimal_source_doc()
    doc["analytic"] = {"gamma": {"kind": "constant", "value": 1.2}, "n_max": 12, "step": 1e-3}
    cfg = parse_config(doc)
    summary, ok = run_suite(cfg, "analytic", tmp_path, quiet=True)
    assert ok
    assert summary["shotnoise_balance_residual_max"] <= 1e-6
    header = (tmp_path / "analytic_shotnoise_density.txt").read_text().splitlines()[:8]
    assert any("normalization=" in line for line in header)


def test_analytic_suite_requires_supported_shape(tmp_path):
    cfg = parse_config(minimal_source_doc())
    with pytest.raises(ConfigError, match="analytic suite"):
        run_suite(cfg, "analytic", tmp_path, quiet=True)


def test_verify_suite_passes_on_reduced_reference(tmp_path):
    cfg = parse_config(feedback_doc())
    summary, ok = run_suite(cfg, "verify", tmp_path, quiet=True)
    assert ok, (tmp_path / "verify_checks.txt").read_text()
    assert summary["passed"] == summary["checks"]


def test_verify_suite_generic_config(tmp_path):
    cfg = parse_config(minimal_source_doc())
    summary, ok = run_suite(cfg, "verify", tmp_path, quiet=True)
    assert ok


def test_unknown_suite_rejected(tmp_path):
    cfg = parse_config(minimal_source_doc())
    with pytest.raises(ConfigError, match="unknown suite"):
        run_suite(cfg, "frobnicate", tmp_path)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_simulate_ok(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(minimal_source_doc()))
    rc = main(["simulate", "--config", str(p), "--out", str(tmp_path / "out"), "--quiet"])
    assert rc == 0
    assert (tmp_path / "out" / "events.txt").exists()


def test_cli_bad_config_exit_code(tmp_path):
    p = tmp_path / "cfg.json"
    doc = minimal_source_doc()
    doc["network"]["sources"][0]["rate"] = -1.0
    p.write_text(json.dumps(doc))
    rc = main(["simulate", "--config", str(p), "--out", str(tmp_path / "out"), "--quiet"])
    assert rc == 2


def test_cli_all_suites_listed():
    assert set(SUITES) == {"simulate", "couple", "chain", "analytic", "verify"}
