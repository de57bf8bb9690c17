import re
from dataclasses import replace

import numpy as np
import pytest

from safeproj.env import Composition, evaluate_return
from safeproj.errors import ConfigError
from safeproj.harness import (
    RUNLOG_HEADER,
    default_config_text,
    parse_config,
    run_section5,
    validate_config,
)


def edited(**changes):
    """Default config text with ``section__key=value`` lines replaced."""
    pending = {tuple(k.split("__")): v for k, v in changes.items()}
    out, current = [], None
    for line in default_config_text().splitlines():
        m = re.match(r"\[(\w+)\]", line)
        if m:
            current = m.group(1)
        key = line.split(" =")[0]
        if (current, key) in pending:
            line = f"{key} = {pending.pop((current, key))}"
        out.append(line)
    assert not pending, pending
    return "\n".join(out) + "\n"


def dropped(section, key):
    out, current = [], None
    for line in default_config_text().splitlines():
        m = re.match(r"\[(\w+)\]", line)
        if m:
            current = m.group(1)
        if current == section and line.startswith(f"{key} ="):
            continue
        out.append(line)
    return "\n".join(out)


SHORT = dict(learning__batches=2, learning__episode_length=5, learning__episodes_per_batch=2,
             evaluation__horizon=20, evaluation__episodes=2)


def test_default_config_parses():
    cfg = parse_config(default_config_text())
    assert cfg.batches == 30 and cfg.episode_length == 20 and cfg.horizon == 10
    assert cfg.gamma == 0.9 and cfg.x0 == (0.0, 1.0)
    assert cfg.model_error == pytest.approx(np.linalg.norm(cfg.plant.A - cfg.A_hat, 2))


def test_missing_sigma_is_named():
    with pytest.raises(ConfigError) as err:
        parse_config(dropped("policy", "sigma"), "exp.ini")
    assert any("policy.sigma" in e and "missing" in e for e in err.value.errors)


def test_negative_horizon_is_named_with_its_line():
    text = edited(model__horizon=-3)
    line = 1 + text.splitlines().index("horizon = -3")
    with pytest.raises(ConfigError) as err:
        parse_config(text, "exp.ini")
    assert any(e.startswith(f"exp.ini:{line}: model.horizon") for e in err.value.errors)


def test_all_problems_reported_together():
    text = edited(learning__gamma=1.5, policy__sigma=0, cost__x_ref="1, 2, 3")
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    joined = "\n".join(err.value.errors)
    assert "learning.gamma" in joined and "policy.sigma" in joined and "cost.x_ref" in joined


def test_unknown_keys_and_sections():
    text = default_config_text() + "\n[extra]\nfoo = 1\n"
    text = text.replace("[plant]\n", "[plant]\nangel_deg = 3\n")
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    joined = "\n".join(err.value.errors)
    assert "unknown section [extra]" in joined and "plant.angel_deg" in joined


def test_unsafe_start_and_tube_precheck():
    with pytest.raises(ConfigError, match="outside the safe set"):
        parse_config(edited(learning__x0="0, 1.5"))
    with pytest.raises(ConfigError) as err:
        parse_config(edited(model__tube_norm="open_loop_inf"))
    assert "tube" in err.value.errors[0]


def test_model_error_below_mismatch_is_rejected():
    with pytest.raises(ConfigError, match="mismatch"):
        parse_config(edited(model__model_error=0.0))
    cfg = parse_config(edited(model__model_error=0.0, model__check_tube_bound="false"))
    assert cfg.model_error == 0.0


def test_validate_echoes_manifest(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(default_config_text())
    cfg = validate_config(path)
    manifest = cfg.to_ini()
    assert "[manifest]" in manifest and "code_version" in manifest
    assert "model_error = 0.1355" in manifest


def test_validate_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="no such file"):
        validate_config(tmp_path / "absent.ini")


def test_manifest_round_trip():
    cfg = parse_config(default_config_text())
    again = parse_config(cfg.to_ini())
    assert again == cfg
    assert again.to_ini() == cfg.to_ini()


@pytest.fixture(scope="module")
def short_cfg():
    return parse_config(edited(**SHORT))


def test_zero_step_keeps_theta(short_cfg):
    cfg = replace(short_cfg, step_size=0.0)
    log = run_section5(cfg)
    assert len(log.rows) == 2
    for row in log.rows:
        np.testing.assert_array_equal(row.theta, log.theta0)
        # common random numbers: the same policy gives the same estimate
        assert row.J == log.J0
        assert row.J_normalized == 1.0


def test_short_run_is_reproducible(short_cfg, tmp_path):
    a = run_section5(short_cfg)
    b = run_section5(short_cfg)
    assert a.runlog_csv() == b.runlog_csv()
    files = a.write(tmp_path)
    assert files == ["manifest.ini", "runlog.csv", "summary.csv", "trajectory_first.csv", "trajectory_last.csv"]
    header = (tmp_path / "runlog.csv").read_text().splitlines()[0]
    assert header.split(",") == RUNLOG_HEADER
    assert a.ok and a.safety_violations == 0
    assert len((tmp_path / "trajectory_last.csv").read_text().splitlines()) == 1 + 5 * 2


def test_seed_changes_the_run(short_cfg):
    a = run_section5(short_cfg)
    b = run_section5(replace(short_cfg, seed=1))
    assert a.runlog_csv() != b.runlog_csv()


def test_noise_free_small_sigma_matches_deterministic_rollout():
    cfg = parse_config(edited(plant__noise="false", policy__sigma="1e-9", **SHORT))
    log = run_section5(replace(cfg, batches=1))
    det = evaluate_return(cfg.plant, Composition(cfg.policy, cfg.tube(), stochastic=False), np.array(cfg.x0),
                          cfg.gamma, cfg.eval_horizon, 1, cfg.eval_seed)
    assert log.J0 == pytest.approx(det.mean, abs=1e-6)
