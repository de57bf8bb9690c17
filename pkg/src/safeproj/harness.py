"""Experiment configuration and the tube-MPC actor-critic learning run.

A run directory holds ``manifest.ini`` (the fully resolved configuration,
loadable as a config), ``runlog.csv``, ``summary.csv`` and the transition
logs of the first and last learning batch.
"""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import List

import numpy as np

from . import __version__
from .critic import lstd_compatible_advantage, lstd_v
from .env import Composition, PlantModel, evaluate_return, rollout_batch, stack_transitions, transitions_to_csv
from .errors import ConfigError, SafeProjError, TubeInfeasible
from .policy import AffinePolicy, GaussianPolicy, ascend, stoch_policy_gradient_corrected
from .tube_mpc import TUBE_NORMS, StageCost, build_tube, one_step_error_bound, rotation
from .optim import solve_dare

log = logging.getLogger(__name__)

SAFETY_TOL = 1e-9


def _vec(n):
    return ("vector", n)


# (section, key) -> (type, default); default None means required
SCHEMA = {
    ("plant", "angle_deg"): (float, 20.0),
    ("plant", "noise_variance"): (float, 0.1),
    ("plant", "noise_radius"): (float, 0.1),
    ("plant", "noise"): (bool, True),
    ("model", "angle_deg"): (float, 25.0),
    ("model", "scale"): (float, 1.1),
    ("model", "horizon"): (int, 10),
    ("model", "tube_norm"): (str, "closed_loop_2"),
    ("model", "model_error"): ("auto_float", "auto"),
    ("model", "check_tube_bound"): (bool, True),
    ("cost", "x_ref"): (_vec(2), None),
    ("cost", "u_ref"): (_vec(2), None),
    ("cost", "x_weight"): (float, 1e-2),
    ("cost", "u_weight"): (float, 1.0),
    ("policy", "u_hat_ref"): (_vec(2), None),
    ("policy", "x_hat_ref"): (_vec(2), None),
    ("policy", "K"): (_vec(4), None),
    ("policy", "sigma"): (float, None),
    ("learning", "gamma"): (float, 0.9),
    ("learning", "batches"): (int, 30),
    ("learning", "episode_length"): (int, 20),
    ("learning", "episodes_per_batch"): (int, 1),
    ("learning", "step_size"): (float, None),
    ("learning", "x0"): (_vec(2), (0.0, 1.0)),
    ("evaluation", "horizon"): (int, 200),
    ("evaluation", "episodes"): (int, 10),
    ("evaluation", "seed"): (int, 12345),
    ("run", "seed"): (int, 0),
    ("run", "output_dir"): (str, "runs/default"),
}
PASSIVE_SECTIONS = {"manifest"}


@dataclass(frozen=True)
class ExperimentConfig:
    plant_angle_deg: float
    noise_variance: float
    noise_radius: float
    noise: bool
    model_angle_deg: float
    model_scale: float
    horizon: int
    tube_norm: str
    model_error: float
    check_tube_bound: bool
    x_ref: tuple
    u_ref: tuple
    x_weight: float
    u_weight: float
    u_hat_ref: tuple
    x_hat_ref: tuple
    K: tuple
    sigma: float
    gamma: float
    batches: int
    episode_length: int
    episodes_per_batch: int
    step_size: float
    x0: tuple
    eval_horizon: int
    eval_episodes: int
    eval_seed: int
    seed: int
    output_dir: str

    # field name -> (section, key)
    @staticmethod
    def layout():
        names = [f.name for f in fields(ExperimentConfig)]
        assert len(names) == len(SCHEMA)
        return dict(zip(names, SCHEMA.keys()))

    @property
    def cost(self):
        return StageCost(np.array(self.x_ref), np.array(self.u_ref), self.x_weight, self.u_weight)

    @property
    def plant(self):
        return PlantModel(self.cost, self.plant_angle_deg, self.noise_variance, self.noise_radius, self.noise)

    @property
    def A_hat(self):
        return self.model_scale * rotation(self.model_angle_deg)

    @property
    def policy(self):
        return GaussianPolicy(AffinePolicy(self.u_hat_ref, self.x_hat_ref, np.reshape(self.K, (2, 2))), self.sigma)

    def tube(self):
        A_hat, B = self.A_hat, np.eye(2)
        K_S = solve_dare(A_hat, B, np.eye(2), np.eye(2))
        return build_tube(A_hat, B, K_S, self.horizon, self.gamma, self.noise_radius, self.cost,
                          tube_norm=self.tube_norm, model_error=self.model_error)

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for name, (section, key) in self.layout().items():
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, key, _format(getattr(self, name)))
        cp.add_section("manifest")
        cp.set("manifest", "code_version", __version__)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(e)) for e in v)
    return str(v)


def _key_lines(text):
    """(section, key) -> 1-based line number, and section -> line number."""
    keys, sections, section = {}, {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            sections.setdefault(section, no)
            continue
        m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            keys[(section, m.group(1).strip())] = no
    return keys, sections


def _parse_value(kind, raw):
    if kind is float:
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind is int:
        return int(raw)
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected true or false")
    if kind is str:
        return raw.strip()
    if kind == "auto_float":
        return "auto" if raw.strip().lower() == "auto" else _parse_value(float, raw)
    _, n = kind
    parts = [p for p in re.split(r"[,\s]+", raw.strip()) if p]
    if len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {len(parts)}")
    vals = tuple(float(p) for p in parts)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("must be finite")
    return vals


def parse_config(text, source="<config>") -> ExperimentConfig:
    """Parse and validate config text; raises ConfigError listing every problem."""
    errors: List[str] = []
    lines, section_lines = _key_lines(text)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None

    def where(section, key=None):
        no = lines.get((section, key)) if key else section_lines.get(section)
        return f"{source}:{no}" if no else source

    known = {s for s, _ in SCHEMA} | PASSIVE_SECTIONS
    for s in cp.sections():
        if s not in known:
            errors.append(f"{where(s)}: unknown section [{s}]")
            continue
        if s in PASSIVE_SECTIONS:
            continue
        for k in cp[s]:
            if (s, k) not in SCHEMA:
                errors.append(f"{where(s, k)}: unknown key {s}.{k}")

    values = {}
    for name, (section, key) in ExperimentConfig.layout().items():
        kind, default = SCHEMA[(section, key)]
        if cp.has_option(section, key):
            try:
                values[name] = _parse_value(kind, cp.get(section, key))
            except ValueError as exc:
                errors.append(f"{where(section, key)}: {section}.{key}: {exc}")
        elif default is None:
            errors.append(f"{where(section)}: missing required key {section}.{key}")
        else:
            values[name] = default

    def bad(name, msg):
        section, key = ExperimentConfig.layout()[name]
        errors.append(f"{where(section, key)}: {section}.{key}: {msg}")

    positive = ("noise_variance", "noise_radius", "model_scale", "sigma", "horizon", "batches",
                "episode_length", "episodes_per_batch", "eval_horizon", "eval_episodes")
    for name in positive:
        if name in values and not values[name] > 0:
            bad(name, "must be positive")
    if "step_size" in values and values["step_size"] < 0:
        bad("step_size", "must be nonnegative")
    if "gamma" in values and not 0.0 < values["gamma"] < 1.0:
        bad("gamma", "must lie in (0, 1)")
    if "tube_norm" in values and values["tube_norm"] not in TUBE_NORMS:
        bad("tube_norm", f"must be one of {', '.join(TUBE_NORMS)}")
    if "x0" in values and float(np.dot(values["x0"], values["x0"])) > 1.0 + SAFETY_TOL:
        bad("x0", "initial state lies outside the safe set x'x <= 1")

    needed = ("plant_angle_deg", "model_angle_deg", "model_scale", "noise_radius")
    if all(n in values for n in needed):
        A_true = rotation(values["plant_angle_deg"])
        A_hat = values["model_scale"] * rotation(values["model_angle_deg"])
        mismatch = one_step_error_bound(A_true, A_hat, 0.0)
        if values.get("model_error") == "auto":
            values["model_error"] = mismatch
        elif "model_error" in values:
            if values["model_error"] < 0:
                bad("model_error", "must be nonnegative")
            elif values.get("check_tube_bound", True) and values["model_error"] < mismatch - 1e-12:
                bad("model_error", f"tube does not cover the plant/model mismatch {mismatch!r}; "
                                   "raise it or set check_tube_bound = false")

    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(**values)
    try:
        cfg.tube()
    except (TubeInfeasible, SafeProjError, ValueError) as exc:
        raise ConfigError([f"{where('model')}: tube construction failed: {exc}"]) from None
    return cfg


def validate_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such file"])
    return parse_config(path.read_text(), str(path))


def default_config_text():
    from importlib.resources import files
    return files("safeproj").joinpath("data/default.ini").read_text()


# -- run ----------------------------------------------------------------------

THETA_NAMES = ["u_hat_ref1", "u_hat_ref2", "x_hat_ref1", "x_hat_ref2", "K11", "K12", "K21", "K22"]
RUNLOG_HEADER = ["batch", *THETA_NAMES, "grad_norm", "J", "J_se", "J_normalized",
                 "safety_violations", "plan_violations", "dropped"]


@dataclass(frozen=True)
class BatchRecord:
    batch: int
    theta: np.ndarray
    grad_norm: float
    J: float
    J_se: float
    J_normalized: float
    safety_violations: int
    plan_violations: int
    dropped: int


@dataclass(frozen=True)
class RunLog:
    config: ExperimentConfig
    J0: float
    J0_se: float
    theta0: np.ndarray
    rows: tuple
    first_batch: tuple
    last_batch: tuple
    max_state_norm_sq: float

    @property
    def safety_violations(self):
        return sum(r.safety_violations for r in self.rows)

    @property
    def plan_violations(self):
        return sum(r.plan_violations for r in self.rows)

    @property
    def normalized_J(self):
        return np.array([r.J_normalized for r in self.rows])

    @property
    def ok(self):
        return self.safety_violations == 0 and self.plan_violations == 0

    def runlog_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUNLOG_HEADER)
        for r in self.rows:
            w.writerow([r.batch, *map(repr, map(float, r.theta)), repr(r.grad_norm), repr(r.J), repr(r.J_se),
                        repr(r.J_normalized), r.safety_violations, r.plan_violations, r.dropped])
        return buf.getvalue()

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerow(["J0", repr(self.J0)])
        w.writerow(["J0_se", repr(self.J0_se)])
        w.writerow(["J_final_normalized", repr(self.rows[-1].J_normalized) if self.rows else "nan"])
        w.writerow(["safety_violations", self.safety_violations])
        w.writerow(["plan_violations", self.plan_violations])
        w.writerow(["max_state_norm_sq", repr(self.max_state_norm_sq)])
        return buf.getvalue()

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "manifest.ini": self.config.to_ini(),
            "runlog.csv": self.runlog_csv(),
            "summary.csv": self.summary_csv(),
            "trajectory_first.csv": transitions_to_csv(self.first_batch),
            "trajectory_last.csv": transitions_to_csv(self.last_batch),
        }
        for name, text in files.items():
            (out / name).write_text(text)
        return sorted(files)


class BatchFailure(SafeProjError):
    def __init__(self, batch, cause):
        super().__init__(f"batch {batch}: {type(cause).__name__}: {cause}")
        self.batch = batch
        self.cause = cause


def run_section5(cfg: ExperimentConfig, progress=None) -> RunLog:
    """Stochastic actor-critic through the tube-MPC projection.

    Per batch: roll out the current policy, fit the quadratic value function
    and the compatible advantage, step theta against the score-function
    gradient, then evaluate J of the new policy with common random numbers.
    """
    plant, tube, policy = cfg.plant, cfg.tube(), cfg.policy
    x0 = np.array(cfg.x0)

    def evaluate(pol):
        est = evaluate_return(plant, Composition(pol, tube), x0, cfg.gamma, cfg.eval_horizon,
                              cfg.eval_episodes, cfg.eval_seed)
        return est

    theta0 = policy.theta
    base = evaluate(policy)
    rows, first, last = [], (), ()
    worst = base.max_state_norm_sq
    for k in range(1, cfg.batches + 1):
        try:
            episodes = rollout_batch(plant, Composition(policy, tube), x0, cfg.episode_length, cfg.seed,
                                     cfg.episodes_per_batch, first_episode=(k - 1) * cfg.episodes_per_batch)
            transitions = [t for ep in episodes for t in ep]
            data = stack_transitions(transitions)
            states = np.vstack([data["x"], data["x_next"]])
            norms = np.sum(states ** 2, axis=1)
            unsafe = int(np.sum(norms > 1.0 + SAFETY_TOL))
            plan_bad = sum(1 for t in transitions if not t.plan_ok)
            value = lstd_v(data["x"], data["cost"], data["x_next"], cfg.gamma)
            critic = lstd_compatible_advantage(data["x"], data["u_s"], data["cost"], data["x_next"], value,
                                               policy, cfg.gamma)
            scores = policy.score_batch(data["x"], data["u_s"])
            estimate = stoch_policy_gradient_corrected(policy, data["x"], data["u_s"], data["u"],
                                                       scores @ critic.advantage_weights)
            policy = policy.with_theta(ascend(policy.theta, estimate, cfg.step_size))
            est = evaluate(policy)
            unsafe += int(est.max_state_norm_sq > 1.0 + SAFETY_TOL)
        except SafeProjError as exc:
            raise BatchFailure(k, exc) from exc
        worst = max(worst, float(norms.max()), est.max_state_norm_sq)
        J_norm = est.mean / base.mean if base.mean != 0 else float("nan")
        rows.append(BatchRecord(k, policy.theta, float(np.linalg.norm(estimate.gradient)), est.mean,
                                est.stderr, J_norm, unsafe, plan_bad, estimate.dropped))
        if k == 1:
            first = tuple(transitions)
        last = tuple(transitions)
        if progress:
            progress(rows[-1])
        log.info("batch %d J=%.6g normalized=%.4f", k, est.mean, J_norm)
    return RunLog(cfg, base.mean, base.stderr, theta0, tuple(rows), first, last, worst)
