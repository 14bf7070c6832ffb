"""Campaign front end: configs, sweeps, Monte Carlo runs, CSV output.

The CLI (installed as ``nfloc``) exposes five subcommands:

* ``bounds``: error-bound sweep over one scenario variable.
* ``estimate``: Monte Carlo estimation campaign with RMSE aggregates.
* ``doppler-study``: joint versus Doppler-only bounds on one scenario.
* ``verify``: recompute aggregates from the raw trial file and compare.
* ``scenario-gen``: write a config file populated with the defaults.

Scenario configs are TOML documents with the sections shown below (all
keys optional; omitted ones take the reference defaults)::

    [seed]
    value = 20260818

    [anchors]
    count = 5
    radius_m = 50.0
    speed_mps = 10.0
    clock_offset_range_s = 1e-09
    frequency_offset_range_hz = 100.0
    velocity_mode = "constant"      # or "per_slot"

    [receiver]
    speed_mps = 5.0

    [array]
    num_elements = 100
    # element_spacing_m = 0.15      # default: half the carrier wavelength

    [slots]
    count = 2
    spacing_s = 0.5

    [waveform]
    kind = "raised_cosine"
    carrier_hz = 1e9
    bandwidth_hz = 5e8
    rolloff = 0.25
    amplitude = 1.0

    [noise]
    snr_db = 10.0
    # noise_psd = 1e-21             # overrides snr_db when set
    pathloss_exponent = 1.0
    doppler_energy_scaling = false

    [sweep]
    variable = "num_elements"
    values = [100, 200, 300, 400]
    trials_per_point = 1
    mode = "bounds_only"

    [solver]
    # any SolverConfig field, e.g. max_outer_iters = 500

Outputs are CSV only; every row carries the config hash and a seed so it
can be reproduced in isolation.  Wall-clock time is reported on stderr
and kept out of the CSVs, which are bitwise-deterministic for a given
config, seed, and code version (regardless of worker count).

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure, 3 every sweep point came out non-localizable.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .channel import SPEED_OF_LIGHT, StateModel, build_channel
from .errors import (
    ConfigurationError,
    ContractViolation,
    InitializerFailure,
    NflocError,
)
from .estimator import SolverConfig, refine
from .fisher import bounds_for_scenario
from .initializer import initialize
from .measurement import noise_floor_from_crlb, sample
from .scenario import (
    ArraySpec,
    NoiseConfig,
    ScenarioConfig,
    SlotPlan,
    reference_scenario,
)

__all__ = [
    "SweepSpec",
    "CampaignResult",
    "load_config",
    "config_digest",
    "scenario_from_config",
    "apply_sweep_value",
    "run_bounds_sweep",
    "run_estimation_campaign",
    "run_doppler_only_study",
    "write_csv",
    "main",
]

SCHEMA_VERSION = "nfloc-csv-1"
CODE_VERSION = "0.1.0"

SWEEP_VARIABLES = (
    "num_elements",
    "carrier_frequency",
    "slot_spacing",
    "num_anchors",
    "num_slots",
    "snr",
)
SWEEP_MODES = ("bounds_only", "full_estimation", "doppler_only", "delay_only")
_FIM_MODE = {
    "bounds_only": "joint",
    "full_estimation": "joint",
    "doppler_only": "doppler_only",
    "delay_only": "delay_only",
}

# per-trial measurement seeds are shared across sweep points (common
# random numbers), derived from the campaign seed with a fixed stride
_TRIAL_SEED_STRIDE = 1000003

DEFAULT_CONFIG = {
    "seed": {"value": 20260818},
    "anchors": {
        "count": 5,
        "radius_m": 50.0,
        "speed_mps": 10.0,
        "clock_offset_range_s": 1e-9,
        "frequency_offset_range_hz": 100.0,
        "velocity_mode": "constant",
    },
    "receiver": {"speed_mps": 5.0},
    "array": {"num_elements": 100},
    "slots": {"count": 2, "spacing_s": 0.5},
    "waveform": {
        "kind": "raised_cosine",
        "carrier_hz": 1e9,
        "bandwidth_hz": 5e8,
        "rolloff": 0.25,
        "amplitude": 1.0,
    },
    "noise": {
        "snr_db": 10.0,
        "pathloss_exponent": 1.0,
        "doppler_energy_scaling": False,
    },
}


@dataclasses.dataclass(frozen=True)
class SweepSpec:
    """One experiment grid: which knob to vary and how to evaluate it."""

    variable: str
    values: tuple
    trials_per_point: int = 1
    mode: str = "bounds_only"

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigurationError(
                f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.variable!r}"
            )
        if self.mode not in SWEEP_MODES:
            raise ConfigurationError(
                f"sweep mode must be one of {SWEEP_MODES}, got {self.mode!r}"
            )
        values = tuple(self.values)
        if not values:
            raise ConfigurationError("sweep values must be non-empty")
        if any(values[i] >= values[i + 1] for i in range(len(values) - 1)):
            raise ConfigurationError("sweep values must be strictly increasing")
        object.__setattr__(self, "values", values)
        if self.trials_per_point < 1:
            raise ConfigurationError("trials_per_point must be at least 1")


@dataclasses.dataclass(frozen=True)
class CampaignResult:
    """Everything one campaign produced, before/after CSV serialization.

    ``points`` holds one dict per sweep point; ``trials`` the raw
    per-trial rows (estimation campaigns only).  ``wall_time`` is kept
    here for reporting and deliberately never written into the CSVs so
    outputs stay bitwise-deterministic.
    """

    sweep: SweepSpec
    points: tuple
    trials: tuple
    config_hash: str
    seed: int
    code_version: str = CODE_VERSION
    wall_time: float = 0.0

    @property
    def all_non_localizable(self) -> bool:
        flags = [p.get("localizable") for p in self.points if "localizable" in p]
        return bool(flags) and not any(flags)


# ---------------------------------------------------------------------------
# Config handling


def _merge(base: dict, extra: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    """Parse a TOML config and apply ``section.key=value`` overrides."""
    cfg = {k: dict(v) for k, v in DEFAULT_CONFIG.items()}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                parsed = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid TOML: {exc}")
        cfg = _merge(cfg, parsed)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(
                f"override must look like section.key=value, got {item!r}"
            )
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            raise ConfigurationError(f"override value {raw!r} is not a TOML literal")
        cfg = _merge(cfg, {section.strip(): {key.strip(): value}})
    return cfg


def config_digest(cfg: dict) -> str:
    """Short stable hash of the fully resolved config."""
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _section(cfg: dict, name: str, known: tuple) -> dict:
    raw = cfg.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config section [{name}] must be a table")
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} in config section [{name}]"
        )
    return raw


def scenario_from_config(cfg: dict, min_anchors=None, min_slots=None) -> ScenarioConfig:
    """Build the scenario a config describes.

    ``min_anchors`` / ``min_slots`` let sweep drivers realize the anchor
    constellation at the largest swept size so smaller points are exact
    prefixes of it (common random numbers across the sweep).
    """
    seed_tab = _section(cfg, "seed", ("value",))
    anchors = _section(
        cfg,
        "anchors",
        (
            "count",
            "radius_m",
            "speed_mps",
            "clock_offset_range_s",
            "frequency_offset_range_hz",
            "velocity_mode",
        ),
    )
    receiver = _section(cfg, "receiver", ("speed_mps",))
    array_tab = _section(cfg, "array", ("num_elements", "element_spacing_m"))
    slots = _section(cfg, "slots", ("count", "spacing_s"))
    waveform = _section(
        cfg, "waveform", ("kind", "carrier_hz", "bandwidth_hz", "rolloff", "amplitude")
    )
    noise = _section(
        cfg, "noise", ("snr_db", "noise_psd", "pathloss_exponent", "doppler_energy_scaling")
    )
    kind = waveform.get("kind", "raised_cosine")
    if kind != "raised_cosine":
        raise ConfigurationError(f"only raised_cosine waveforms are supported, got {kind!r}")

    num_anchors = int(anchors.get("count", 5))
    if min_anchors is not None:
        num_anchors = max(num_anchors, int(min_anchors))
    num_slots = int(slots.get("count", 2))
    if min_slots is not None:
        num_slots = max(num_slots, int(min_slots))

    scenario = reference_scenario(
        seed=int(seed_tab.get("value", 20260818)),
        num_anchors=num_anchors,
        num_elements=int(array_tab.get("num_elements", 100)),
        num_slots=num_slots,
        slot_spacing=float(slots.get("spacing_s", 0.5)),
        carrier_hz=float(waveform.get("carrier_hz", 1e9)),
        bandwidth_hz=float(waveform.get("bandwidth_hz", 5e8)),
        rolloff=float(waveform.get("rolloff", 0.25)),
        amplitude=float(waveform.get("amplitude", 1.0)),
        target_snr_db=float(noise.get("snr_db", 10.0)),
        anchor_radius=float(anchors.get("radius_m", 50.0)),
        anchor_speed=float(anchors.get("speed_mps", 10.0)),
        receiver_speed=float(receiver.get("speed_mps", 5.0)),
        clock_offset_range=float(anchors.get("clock_offset_range_s", 1e-9)),
        freq_offset_range=float(anchors.get("frequency_offset_range_hz", 100.0)),
        element_spacing=(
            float(array_tab["element_spacing_m"])
            if "element_spacing_m" in array_tab
            else None
        ),
        anchor_velocity_mode=str(anchors.get("velocity_mode", "constant")),
        pathloss_exponent=float(noise.get("pathloss_exponent", 1.0)),
    )
    replacements = {}
    if "noise_psd" in noise:
        replacements["noise"] = NoiseConfig(
            target_snr_db=None,
            noise_psd=float(noise["noise_psd"]),
            pathloss_exponent=float(noise.get("pathloss_exponent", 1.0)),
            doppler_energy_scaling=bool(noise.get("doppler_energy_scaling", False)),
        )
    elif bool(noise.get("doppler_energy_scaling", False)):
        replacements["noise"] = dataclasses.replace(
            scenario.noise, doppler_energy_scaling=True
        )
    if replacements:
        scenario = dataclasses.replace(scenario, **replacements)
    return scenario


def sweep_spec_from_config(cfg: dict) -> SweepSpec:
    sweep = _section(cfg, "sweep", ("variable", "values", "trials_per_point", "mode"))
    if "variable" not in sweep or "values" not in sweep:
        raise ConfigurationError(
            "a sweep needs [sweep] variable and values (config or CLI flags)"
        )
    return SweepSpec(
        variable=str(sweep["variable"]),
        values=tuple(sweep["values"]),
        trials_per_point=int(sweep.get("trials_per_point", 1)),
        mode=str(sweep.get("mode", "bounds_only")),
    )


def solver_from_config(cfg: dict) -> SolverConfig:
    known = tuple(f.name for f in dataclasses.fields(SolverConfig))
    solver = _section(cfg, "solver", known)
    kwargs = dict(solver)
    if "block_order" in kwargs:
        kwargs["block_order"] = tuple(kwargs["block_order"])
    return SolverConfig(**kwargs)


# ---------------------------------------------------------------------------
# Sweep realization


def apply_sweep_value(base: ScenarioConfig, variable: str, value) -> ScenarioConfig:
    """Derive the scenario for one sweep point from the base scenario.

    The base must already be large enough for anchor/slot sweeps (the
    config loader handles that); smaller points reuse a prefix of the
    same anchors so sweep curves are not confounded by redrawn geometry.
    When the carrier is swept, element spacing is re-derived as half the
    new wavelength.
    """
    if variable == "num_elements":
        array = dataclasses.replace(base.array, num_elements=int(value))
        return dataclasses.replace(base, array=array)
    if variable == "carrier_frequency":
        waveform = dataclasses.replace(base.waveform, carrier_frequency=float(value))
        spacing = SPEED_OF_LIGHT / float(value) / 2.0
        array = dataclasses.replace(base.array, element_spacing=spacing)
        return dataclasses.replace(base, waveform=waveform, array=array)
    if variable == "slot_spacing":
        plan = SlotPlan(num_slots=base.plan.num_slots, slot_spacing=float(value))
        return dataclasses.replace(base, plan=plan)
    if variable == "num_anchors":
        count = int(value)
        if count > base.num_anchors:
            raise ConfigurationError(
                f"base scenario has {base.num_anchors} anchors, sweep needs {count}"
            )
        return dataclasses.replace(base, anchors=base.anchors[:count])
    if variable == "num_slots":
        count = int(value)
        plan = SlotPlan(num_slots=count, slot_spacing=base.plan.slot_spacing)
        return dataclasses.replace(base, plan=plan)
    if variable == "snr":
        noise = NoiseConfig(
            target_snr_db=float(value),
            noise_psd=None,
            pathloss_exponent=base.noise.pathloss_exponent,
            doppler_energy_scaling=base.noise.doppler_energy_scaling,
        )
        return dataclasses.replace(base, noise=noise)
    raise ConfigurationError(f"unknown sweep variable {variable!r}")


def base_scenario_for_sweep(cfg: dict, spec: SweepSpec) -> ScenarioConfig:
    min_anchors = max(int(v) for v in spec.values) if spec.variable == "num_anchors" else None
    min_slots = max(int(v) for v in spec.values) if spec.variable == "num_slots" else None
    return scenario_from_config(cfg, min_anchors=min_anchors, min_slots=min_slots)


# ---------------------------------------------------------------------------
# Campaign drivers


def _bounds_point(args):
    scenario, variable, value, fim_mode = args
    report = bounds_for_scenario(scenario, mode=fim_mode)
    return {
        "sweep_variable": variable,
        "sweep_value": value,
        "mode": fim_mode,
        "localizable": report.localizable,
        "rank": report.rank_kappa1,
        "peb": report.peb,
        "veb": report.veb,
        "oeb": report.oeb,
        "condition_number": report.condition_number,
    }


def _run_pool(task, jobs, workers):
    """Run ``task`` over ``jobs`` preserving job order in the results."""
    if workers <= 1 or len(jobs) <= 1:
        return [task(job) for job in jobs]
    results = {}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(task, job): idx for idx, job in enumerate(jobs)}
        for future, idx in futures.items():
            results[idx] = future.result()
    return [results[idx] for idx in range(len(jobs))]


def run_bounds_sweep(spec: SweepSpec, base: ScenarioConfig, config_hash="-",
                     workers: int = 1) -> CampaignResult:
    """Error bounds at every sweep point; non-localizable points get
    infinite bounds rather than raising."""
    started = time.monotonic()
    fim_mode = _FIM_MODE[spec.mode]
    jobs = [
        (apply_sweep_value(base, spec.variable, value), spec.variable, value, fim_mode)
        for value in spec.values
    ]
    points = _run_pool(_bounds_point, jobs, workers)
    for row in points:
        row["config_hash"] = config_hash
        row["seed"] = base.seed
    return CampaignResult(
        sweep=spec,
        points=tuple(points),
        trials=(),
        config_hash=config_hash,
        seed=base.seed,
        wall_time=time.monotonic() - started,
    )


def _estimation_trial(args):
    channel, variable, value, trial, meas_seed, solver = args
    scenario = channel.scenario
    sigmas = noise_floor_from_crlb(channel)
    meas = sample(channel, sigmas, seed=meas_seed)
    model = StateModel.from_channel(channel)
    row = {
        "sweep_variable": variable,
        "sweep_value": value,
        "trial": trial,
        "seed": meas_seed,
        "init_failed": False,
        "converged": False,
        "iterations": 0,
        "stop_reason": "",
        "cost": float("nan"),
        "err_p": float("nan"),
        "err_v": float("nan"),
        "err_o": float("nan"),
    }
    try:
        init = initialize(meas, model)
    except InitializerFailure:
        row["init_failed"] = True
        return row
    est = refine(init, meas, model, solver)
    truth = scenario.receiver
    row["converged"] = est.converged
    row["iterations"] = est.iteration
    row["stop_reason"] = est.stop_reason
    row["cost"] = est.cost
    row["err_p"] = float(np.linalg.norm(est.position0 - truth.position0))
    row["err_v"] = float(np.linalg.norm(est.velocity - truth.velocity))
    row["err_o"] = float(np.linalg.norm(est.orientation - truth.orientation))
    return row


def run_estimation_campaign(spec: SweepSpec, base: ScenarioConfig, config_hash="-",
                            workers: int = 1,
                            solver: SolverConfig = None) -> CampaignResult:
    """Monte Carlo estimation at every sweep point.

    Trial noise seeds depend only on the campaign seed and the trial
    index, so every sweep point sees the same noise draws (common random
    numbers).  Initializer failures are excluded from the RMSE but count
    against the convergence rate.
    """
    if spec.mode != "full_estimation":
        raise ConfigurationError("estimation campaigns need mode=full_estimation")
    solver = solver or SolverConfig()
    started = time.monotonic()

    jobs = []
    scenarios = []
    for value in spec.values:
        scenario = apply_sweep_value(base, spec.variable, value)
        scenarios.append(scenario)
        channel = build_channel(scenario)
        for trial in range(1, spec.trials_per_point + 1):
            meas_seed = base.seed + _TRIAL_SEED_STRIDE * trial
            jobs.append((channel, spec.variable, value, trial, meas_seed, solver))
    trials = _run_pool(_estimation_trial, jobs, workers)
    for row in trials:
        row["config_hash"] = config_hash

    points = []
    for value, scenario in zip(spec.values, scenarios):
        rows = [r for r in trials if r["sweep_value"] == value]
        ok = [r for r in rows if not r["init_failed"]]
        converged = sum(1 for r in rows if r["converged"])
        report = bounds_for_scenario(scenario, mode="joint")

        def rmse(key):
            if not ok:
                return float("nan")
            return float(np.sqrt(np.mean([r[key] ** 2 for r in ok])))

        points.append(
            {
                "config_hash": config_hash,
                "seed": base.seed,
                "sweep_variable": spec.variable,
                "sweep_value": value,
                "mode": spec.mode,
                "trials": len(rows),
                "init_failures": len(rows) - len(ok),
                "converged_trials": converged,
                "convergence_rate": converged / len(rows),
                "rmse_p": rmse("err_p"),
                "rmse_v": rmse("err_v"),
                "rmse_o": rmse("err_o"),
                "peb": report.peb,
                "veb": report.veb,
                "oeb": report.oeb,
                "localizable": report.localizable,
            }
        )
    return CampaignResult(
        sweep=spec,
        points=tuple(points),
        trials=tuple(trials),
        config_hash=config_hash,
        seed=base.seed,
        wall_time=time.monotonic() - started,
    )


def run_doppler_only_study(base: ScenarioConfig, config_hash="-") -> CampaignResult:
    """Joint versus Doppler-only bounds on one scenario, plus their ratio."""
    started = time.monotonic()
    joint = bounds_for_scenario(base, mode="joint")
    doppler = bounds_for_scenario(base, mode="doppler_only")
    rows = []
    for name, report in (("joint", joint), ("doppler_only", doppler)):
        rows.append(
            {
                "config_hash": config_hash,
                "seed": base.seed,
                "mode": name,
                "localizable": report.localizable,
                "rank": report.rank_kappa1,
                "peb": report.peb,
                "veb": report.veb,
                "oeb": report.oeb,
            }
        )
    rows.append(
        {
            "config_hash": config_hash,
            "seed": base.seed,
            "mode": "ratio",
            "localizable": joint.localizable and doppler.localizable,
            "rank": min(joint.rank_kappa1, doppler.rank_kappa1),
            "peb": doppler.peb / joint.peb,
            "veb": doppler.veb / joint.veb,
            "oeb": doppler.oeb / joint.oeb,
        }
    )
    spec = SweepSpec(variable="snr", values=(0,), mode="doppler_only")
    return CampaignResult(
        sweep=spec,
        points=tuple(rows),
        trials=(),
        config_hash=config_hash,
        seed=base.seed,
        wall_time=time.monotonic() - started,
    )


# ---------------------------------------------------------------------------
# CSV plumbing


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, fieldnames, rows, config_hash, seed):
    """Write rows with a schema-versioned header comment.

    All floats are serialized with ``repr`` (shortest round-trip form)
    so files are bitwise-reproducible and parse back exactly.
    """
    lines = [
        f"# schema={SCHEMA_VERSION} version={CODE_VERSION}",
        f"# config_hash={config_hash} seed={seed}",
        ",".join(fieldnames),
    ]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(name, "")) for name in fieldnames))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Parse a file written by :func:`write_csv`.

    Returns (meta, fieldnames, rows) with every cell kept as its string
    form; callers convert what they need.
    """
    meta = {}
    fieldnames = None
    rows = []
    with open(path, "r") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        key, _, value = token.partition("=")
                        meta[key] = value
                continue
            if fieldnames is None:
                fieldnames = line.split(",")
                continue
            rows.append(dict(zip(fieldnames, line.split(","))))
    if fieldnames is None:
        raise ConfigurationError(f"{path} has no header row")
    return meta, fieldnames, rows


BOUNDS_FIELDS = (
    "config_hash",
    "seed",
    "sweep_variable",
    "sweep_value",
    "mode",
    "localizable",
    "rank",
    "peb",
    "veb",
    "oeb",
    "condition_number",
)
ESTIMATION_FIELDS = (
    "config_hash",
    "seed",
    "sweep_variable",
    "sweep_value",
    "mode",
    "trials",
    "init_failures",
    "converged_trials",
    "convergence_rate",
    "rmse_p",
    "rmse_v",
    "rmse_o",
    "peb",
    "veb",
    "oeb",
    "localizable",
)
TRIAL_FIELDS = (
    "config_hash",
    "seed",
    "sweep_variable",
    "sweep_value",
    "trial",
    "init_failed",
    "converged",
    "iterations",
    "stop_reason",
    "cost",
    "err_p",
    "err_v",
    "err_o",
)
DOPPLER_FIELDS = (
    "config_hash",
    "seed",
    "mode",
    "localizable",
    "rank",
    "peb",
    "veb",
    "oeb",
)


def verify_outputs(out_dir) -> list:
    """Recompute estimation aggregates from the raw trial file.

    Returns a list of mismatch descriptions (empty when everything
    checks out).  Aggregates are recomputed from the parsed trial rows
    and re-serialized with the writer's formatter, so agreement is
    bitwise.
    """
    est_path = os.path.join(out_dir, "estimation.csv")
    trial_path = os.path.join(out_dir, "trials.csv")
    for path in (est_path, trial_path):
        if not os.path.exists(path):
            raise ConfigurationError(f"missing {path}; run `nfloc estimate` first")
    _, _, points = read_csv(est_path)
    _, _, trials = read_csv(trial_path)
    problems = []
    for point in points:
        value = point["sweep_value"]
        rows = [t for t in trials if t["sweep_value"] == value]
        ok = [t for t in rows if t["init_failed"] == "false"]
        converged = sum(1 for t in rows if t["converged"] == "true")
        expect = {
            "trials": str(len(rows)),
            "init_failures": str(len(rows) - len(ok)),
            "converged_trials": str(converged),
            "convergence_rate": _format_cell(converged / len(rows)) if rows else "nan",
        }
        for key in ("rmse_p", "rmse_v", "rmse_o"):
            err = key.replace("rmse", "err")
            if ok:
                vals = [float(t[err]) ** 2 for t in ok]
                expect[key] = _format_cell(float(np.sqrt(np.mean(vals))))
            else:
                expect[key] = "nan"
        for key, want in expect.items():
            if point.get(key) != want:
                problems.append(
                    f"sweep_value={value}: {key} is {point.get(key)!r}, recomputed {want!r}"
                )
    return problems


# ---------------------------------------------------------------------------
# CLI


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(sub):
    sub.add_argument("--config", help="TOML scenario config (defaults used if omitted)")
    sub.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config key (repeatable, value is a TOML literal)",
    )
    sub.add_argument("--out", default=".", help="output directory (default: cwd)")


def _add_sweep_flags(sub):
    sub.add_argument("--variable", choices=SWEEP_VARIABLES, help="sweep variable")
    sub.add_argument("--values", help="comma-separated sweep values")
    sub.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    sub.add_argument("--workers", type=int, default=1, help="worker processes")


def _parse_values(text: str) -> tuple:
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            out.append(int(chunk))
        except ValueError:
            try:
                out.append(float(chunk))
            except ValueError:
                raise ConfigurationError(f"sweep value {chunk!r} is not a number")
    return tuple(out)


def _resolve_sweep(args, cfg, default_mode) -> SweepSpec:
    sweep_tab = dict(cfg.get("sweep", {}))
    if args.variable:
        sweep_tab["variable"] = args.variable
    if args.values:
        sweep_tab["values"] = list(_parse_values(args.values))
    if args.trials is not None:
        sweep_tab["trials_per_point"] = args.trials
    sweep_tab.setdefault("mode", default_mode)
    if getattr(args, "mode", None):
        sweep_tab["mode"] = args.mode
    merged = dict(cfg)
    merged["sweep"] = sweep_tab
    return sweep_spec_from_config(merged)


def build_parser() -> _Parser:
    parser = _Parser(prog="nfloc", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    bounds = subs.add_parser("bounds", help="error-bound sweep")
    _add_common(bounds)
    _add_sweep_flags(bounds)
    bounds.add_argument(
        "--mode",
        choices=("bounds_only", "delay_only", "doppler_only"),
        help="measurement mode for the bound (default bounds_only)",
    )

    estimate = subs.add_parser("estimate", help="Monte Carlo estimation campaign")
    _add_common(estimate)
    _add_sweep_flags(estimate)

    doppler = subs.add_parser("doppler-study", help="joint vs Doppler-only bounds")
    _add_common(doppler)

    verify = subs.add_parser("verify", help="recheck aggregates against raw trials")
    verify.add_argument("--out", default=".", help="directory holding the CSVs")

    gen = subs.add_parser("scenario-gen", help="write a default config file")
    gen.add_argument("--seed", type=int, help="seed to bake into the config")
    gen.add_argument("--out", default=".", help="output directory (default: cwd)")
    return parser


def _scenario_gen_text(seed=None) -> str:
    cfg = {k: dict(v) for k, v in DEFAULT_CONFIG.items()}
    if seed is not None:
        cfg["seed"]["value"] = int(seed)
    lines = []
    for section, table in cfg.items():
        lines.append(f"[{section}]")
        for key, value in table.items():
            if isinstance(value, bool):
                lines.append(f"{key} = {'true' if value else 'false'}")
            elif isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            else:
                lines.append(f"{key} = {value!r}")
        lines.append("")
    return "\n".join(lines)


def _cmd_bounds(args) -> int:
    cfg = load_config(args.config, args.set)
    spec = _resolve_sweep(args, cfg, default_mode="bounds_only")
    if spec.mode == "full_estimation":
        raise ConfigurationError("use `nfloc estimate` for full_estimation sweeps")
    base = base_scenario_for_sweep(cfg, spec)
    result = run_bounds_sweep(spec, base, config_digest(cfg), workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "bounds.csv")
    write_csv(path, BOUNDS_FIELDS, result.points, result.config_hash, result.seed)
    print(f"wrote {path} ({len(result.points)} points)", file=sys.stderr)
    print(f"wall_time={result.wall_time:.2f}s", file=sys.stderr)
    return 3 if result.all_non_localizable else 0


def _cmd_estimate(args) -> int:
    cfg = load_config(args.config, args.set)
    args.mode = None
    spec = _resolve_sweep(args, cfg, default_mode="full_estimation")
    if spec.mode != "full_estimation":
        raise ConfigurationError("`nfloc estimate` runs full_estimation sweeps only")
    base = base_scenario_for_sweep(cfg, spec)
    solver = solver_from_config(cfg)
    result = run_estimation_campaign(
        spec, base, config_digest(cfg), workers=args.workers, solver=solver
    )
    os.makedirs(args.out, exist_ok=True)
    est_path = os.path.join(args.out, "estimation.csv")
    trial_path = os.path.join(args.out, "trials.csv")
    write_csv(est_path, ESTIMATION_FIELDS, result.points, result.config_hash, result.seed)
    write_csv(trial_path, TRIAL_FIELDS, result.trials, result.config_hash, result.seed)
    print(f"wrote {est_path} and {trial_path}", file=sys.stderr)
    print(f"wall_time={result.wall_time:.2f}s", file=sys.stderr)
    return 3 if result.all_non_localizable else 0


def _cmd_doppler_study(args) -> int:
    cfg = load_config(args.config, args.set)
    base = scenario_from_config(cfg)
    result = run_doppler_only_study(base, config_digest(cfg))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "doppler_study.csv")
    write_csv(path, DOPPLER_FIELDS, result.points, result.config_hash, result.seed)
    print(f"wrote {path}", file=sys.stderr)
    print(f"wall_time={result.wall_time:.2f}s", file=sys.stderr)
    non_local = [p for p in result.points if p["mode"] != "ratio" and not p["localizable"]]
    return 3 if len(non_local) == 2 else 0


def _cmd_verify(args) -> int:
    problems = verify_outputs(args.out)
    if problems:
        for line in problems:
            print(f"mismatch: {line}", file=sys.stderr)
        return 2
    print("aggregates match raw trials", file=sys.stderr)
    return 0


def _cmd_scenario_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "scenario.toml")
    with open(path, "w", newline="\n") as fh:
        fh.write(_scenario_gen_text(args.seed))
    print(f"wrote {path}", file=sys.stderr)
    return 0


_COMMANDS = {
    "bounds": _cmd_bounds,
    "estimate": _cmd_estimate,
    "doppler-study": _cmd_doppler_study,
    "verify": _cmd_verify,
    "scenario-gen": _cmd_scenario_gen,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, ContractViolation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (NflocError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
