"""Acceptance gate: ten end-to-end checks, one test per criterion.

Each test prints a single ``[criterion NN] PASS`` line with its key
measurements once every assertion has held (visible with ``pytest -s``
or in the captured output); a failure shows up as the test failing.  The
numeric gates and time budgets are fixed here on purpose: they are the
contract this package is accepted against, not tuning knobs.
"""

import dataclasses
import time

import numpy as np
import pytest
from numpy.linalg import eigvalsh, norm, pinv

from nfloc.channel import StateModel, build_channel
from nfloc.estimator import refine
from nfloc.fisher import (
    assemble_channel_fim,
    bounds_for_scenario,
    channel_map_gradients,
    efim,
    full_information,
    jacobian,
    localizability,
)
from nfloc.harness import (
    BOUNDS_FIELDS,
    ESTIMATION_FIELDS,
    TRIAL_FIELDS,
    SweepSpec,
    base_scenario_for_sweep,
    load_config,
    run_bounds_sweep,
    run_estimation_campaign,
    write_csv,
)
from nfloc.initializer import initialize
from nfloc.measurement import MeasurementSet, noise_floor_from_crlb
from nfloc.scenario import reference_scenario

GRADIENT_SCENARIOS = 20
GRADIENT_BUDGET_S = 10.0
FIM_BUDGET_S = 30.0
LOCALIZABILITY_BUDGET_S = 10.0
TREND_BUDGET_S = 300.0
CAMPAIGN_BUDGET_S = 1800.0
RECOVERY_BUDGET_S = 60.0
INFO_EQUALITY_TOL = 1e-8
ANNIHILATION_TOL = 1e-10
RMSE_BOUND_FACTOR = 2.0
RECOVERY_TOL = 1e-6


def exact_measurements(channel):
    sigma_tau, sigma_doppler = noise_floor_from_crlb(channel)
    return MeasurementSet(
        delay_meas=channel.tables.delay.copy(),
        doppler_meas=channel.tables.doppler.copy(),
        sigma_tau=sigma_tau,
        sigma_doppler=sigma_doppler,
        seed=0,
    )


def motion_efim(scenario):
    channel = build_channel(scenario)
    fim = assemble_channel_fim(channel)
    jac = jacobian(channel.geometry, scenario.waveform, scenario.noise.pathloss_exponent)
    return efim(fim, jac), fim, jac, channel


def test_criterion_01_analytic_gradients_match_finite_differences():
    """Analytic channel-map gradients agree with numerical differentiation.

    Richardson-extrapolated central differences over twenty seeded
    scenarios; every gradient column of every map must agree to a
    relative 1e-5 of that map's gradient scale (absolute floor 1e-8).
    """
    started = time.monotonic()
    worst = 0.0
    for seed in range(1, GRADIENT_SCENARIOS + 1):
        scenario = reference_scenario(
            num_anchors=3, num_elements=4, num_slots=2, seed=seed,
            anchor_velocity_mode="distinct",
        )
        channel = build_channel(scenario)
        model = StateModel.from_channel(channel)
        waveform = scenario.waveform
        truth = scenario.receiver
        grads = channel_map_gradients(
            channel.geometry, waveform.carrier_frequency, waveform.wavelength,
            scenario.noise.pathloss_exponent,
        )
        zeros = np.zeros(scenario.num_anchors)
        scales = {
            name: max(float(np.abs(getattr(grads, name)).max()), 1e-300)
            for name in ("delay", "doppler", "gain")
        }

        def maps_at(column, h):
            bump = [np.zeros(3), np.zeros(3), np.zeros(3)]
            bump[column // 3][column % 3] = h
            dp, dv, ds = bump
            plus = model.maps(truth.position0 + dp, truth.velocity + dv,
                              truth.orientation + ds, zeros, zeros)
            minus = model.maps(truth.position0 - dp, truth.velocity - dv,
                               truth.orientation - ds, zeros, zeros)
            return plus, minus

        base_steps = [0.5] * 3 + [0.5] * 3 + [0.1] * 3
        for column in range(9):
            h = base_steps[column]
            plus1, minus1 = maps_at(column, h)
            plus2, minus2 = maps_at(column, h / 2.0)
            for name in ("delay", "doppler", "gain"):
                coarse = (getattr(plus1, name) - getattr(minus1, name)) / (2.0 * h)
                fine = (getattr(plus2, name) - getattr(minus2, name)) / h
                fd = (4.0 * fine - coarse) / 3.0
                err = float(np.abs(fd - getattr(grads, name)[..., column]).max())
                gate = max(1e-5 * scales[name], 1e-8)
                assert err <= gate, (
                    f"seed {seed}, map {name}, column {column}: "
                    f"fd error {err:.3e} exceeds {gate:.3e}"
                )
                worst = max(worst, err / gate)
    elapsed = time.monotonic() - started
    assert elapsed < GRADIENT_BUDGET_S
    print(f"[criterion 01] PASS worst_gate_ratio={worst:.3e} "
          f"scenarios={GRADIENT_SCENARIOS} elapsed={elapsed:.2f}s")


def test_criterion_02_fim_is_symmetric_psd_and_schur_matches_dense():
    """Assembled information is symmetric PSD and the folded reduction is
    exact: the sparse per-anchor Schur complement equals a dense
    computation on the full stacked matrix to a relative 1e-8."""
    started = time.monotonic()
    scenarios = {
        "defaults": reference_scenario(),
        "well_conditioned": reference_scenario(
            num_anchors=6, num_elements=5, num_slots=3, carrier_hz=1e8,
            bandwidth_hz=5e7, anchor_radius=30.0, anchor_speed=30.0,
            receiver_speed=15.0,
        ),
    }
    rel_errs = {}
    for label, scenario in scenarios.items():
        res, fim, jac, _ = motion_efim(scenario)
        for b in range(1, scenario.num_anchors + 1):
            mat = fim.anchor_matrix(b)
            assert norm(mat - mat.T) <= 1e-12 * norm(mat)
            vals = eigvalsh(mat)
            assert vals.min() >= -1e-9 * vals.max()
        assert norm(res.matrix - res.matrix.T) <= 1e-12 * norm(res.matrix)

        full = full_information(fim, jac)
        top, cross, nuis = full[:9, :9], full[:9, 9:], full[9:, 9:]
        d = np.sqrt(np.abs(np.diag(nuis)))
        d[d == 0.0] = 1.0
        cross_scaled = cross / d[None, :]
        dense = top - cross_scaled @ pinv(
            nuis / d[:, None] / d[None, :], rcond=1e-12
        ) @ cross_scaled.T
        rel = norm(res.matrix - dense) / norm(dense)
        assert rel <= INFO_EQUALITY_TOL, f"{label}: dense mismatch {rel:.3e}"
        rel_errs[label] = rel
    elapsed = time.monotonic() - started
    assert elapsed < FIM_BUDGET_S
    detail = " ".join(f"{k}={v:.2e}" for k, v in rel_errs.items())
    print(f"[criterion 02] PASS schur_vs_dense {detail} elapsed={elapsed:.2f}s")


def test_criterion_03_constrained_bound_contract():
    """The constrained bound annihilates the orientation axis, its block
    traces define the reported bounds, and bounds are finite exactly when
    the scenario is localizable."""
    scenario = reference_scenario()
    report = bounds_for_scenario(scenario)
    assert report.localizable and report.rank_kappa1 == 8
    assert np.isfinite(report.peb) and np.isfinite(report.veb) and np.isfinite(report.oeb)
    assert report.peb_sq == pytest.approx(np.trace(report.ccrb[0:3, 0:3]), rel=1e-12)
    assert report.veb_sq == pytest.approx(np.trace(report.ccrb[3:6, 3:6]), rel=1e-12)
    assert report.oeb_sq == pytest.approx(np.trace(report.ccrb[6:9, 6:9]), rel=1e-12)
    vals = eigvalsh(report.ccrb)
    assert vals.min() >= -1e-9 * vals.max()
    ori_block = report.ccrb[6:9, 6:9]
    residual = norm(ori_block @ scenario.receiver.orientation)
    assert residual <= ANNIHILATION_TOL * norm(ori_block)

    broken = bounds_for_scenario(reference_scenario(num_anchors=2, num_slots=1))
    assert not broken.localizable
    assert np.isinf(broken.peb) and np.isinf(broken.veb) and np.isinf(broken.oeb)
    print(f"[criterion 03] PASS annihilation={residual / norm(ori_block):.2e} "
          f"peb={report.peb:.4f} veb={report.veb:.4f} oeb={report.oeb:.6f}")


def test_criterion_04_localizability_verdicts():
    """Rank of the tangent-reduced information decides localizability for
    six canonical configurations."""
    started = time.monotonic()
    cases = (
        (dict(num_anchors=3, num_slots=1), 8, True),
        (dict(num_anchors=2, num_slots=2), 8, True),
        (dict(num_anchors=1, num_slots=4, anchor_velocity_mode="constant"), 5, False),
        (dict(num_anchors=1, num_slots=4, anchor_velocity_mode="distinct"), 8, True),
        (dict(num_anchors=2, num_slots=1), 7, False),
        (dict(num_anchors=1, num_slots=1), 4, False),
    )
    seen = []
    for kwargs, want_rank, want_flag in cases:
        report = localizability(reference_scenario(**kwargs))
        assert report.rank == want_rank, (kwargs, report.rank)
        assert report.localizable is want_flag, (kwargs, report.localizable)
        seen.append(report.rank)
    elapsed = time.monotonic() - started
    assert elapsed < LOCALIZABILITY_BUDGET_S
    print(f"[criterion 04] PASS ranks={seen} elapsed={elapsed:.2f}s")


def test_criterion_05_single_snapshot_delay_only_has_no_velocity_information():
    """With one slot, delay-only measurements carry exactly zero velocity
    information, while the joint mode retains some through Doppler."""
    scenario = reference_scenario(num_anchors=5, num_slots=1)
    channel = build_channel(scenario)
    delay_fim = assemble_channel_fim(channel, mode="delay_only")
    delay_jac = jacobian(channel.geometry, scenario.waveform, mode="delay_only")
    delay_matrix = efim(delay_fim, delay_jac).matrix
    np.testing.assert_array_equal(delay_matrix[3:6, :], 0.0)
    np.testing.assert_array_equal(delay_matrix[:, 3:6], 0.0)

    joint_matrix = efim(
        assemble_channel_fim(channel),
        jacobian(channel.geometry, scenario.waveform),
    ).matrix
    joint_strength = norm(joint_matrix[3:6, 3:6])
    assert joint_strength > 0.0
    print(f"[criterion 05] PASS delay_only_velocity_block=0 "
          f"joint_velocity_norm={joint_strength:.3e}")


def test_criterion_06_doppler_only_bounds_are_orders_of_magnitude_looser():
    """Doppler-only localization stays full rank on the reference scenario
    but every bound degrades by more than a factor of ten."""
    scenario = reference_scenario()
    joint = bounds_for_scenario(scenario, mode="joint")
    doppler = bounds_for_scenario(scenario, mode="doppler_only")
    assert joint.localizable and doppler.localizable
    ratios = {
        "peb": doppler.peb / joint.peb,
        "veb": doppler.veb / joint.veb,
        "oeb": doppler.oeb / joint.oeb,
    }
    for name, ratio in ratios.items():
        assert ratio > 10.0, f"{name} ratio {ratio:.1f}"
    detail = " ".join(f"{k}x{v:.0f}" for k, v in ratios.items())
    print(f"[criterion 06] PASS {detail}")


def trend_rows(overrides, variable, values):
    cfg = load_config(None, overrides)
    spec = SweepSpec(variable, tuple(values))
    base = base_scenario_for_sweep(cfg, spec)
    result = run_bounds_sweep(spec, base)
    assert all(p["localizable"] for p in result.points)
    return result.points


def assert_non_increasing(points, which):
    series = [p[which] for p in points]
    for prev, cur in zip(series, series[1:]):
        assert cur <= prev, f"{which} rose along the sweep: {series}"
    return series


def test_criterion_07_bounds_improve_along_resource_sweeps():
    """More elements, higher carriers, and wider slot spacing all improve
    every bound on the default-seed scenario."""
    started = time.monotonic()

    element_points = trend_rows([], "num_elements", (100, 200, 300, 400))
    carrier_points = trend_rows([], "carrier_frequency", (1e9, 3e9, 1e10, 3e10))
    slot_points = trend_rows(
        ["waveform.carrier_hz=1e10", "anchors.count=3"],
        "slot_spacing",
        (0.2, 0.5, 0.8, 1.1, 1.4, 1.7, 2.0),
    )
    for which in ("peb", "veb", "oeb"):
        assert_non_increasing(element_points, which)
        assert_non_increasing(carrier_points, which)
        assert_non_increasing(slot_points, which)
    elapsed = time.monotonic() - started
    assert elapsed < TREND_BUDGET_S
    peb_span = (element_points[0]["peb"], element_points[-1]["peb"])
    print(f"[criterion 07] PASS elements_peb {peb_span[0]:.4f}->{peb_span[1]:.4f} "
          f"carrier+slot sweeps non-increasing elapsed={elapsed:.1f}s")


def test_criterion_08_monte_carlo_rmse_tracks_the_bounds():
    """A 200-trial campaign across SNR stays within twice the bound per
    block and the RMSE-to-bound ratio improves with SNR."""
    started = time.monotonic()
    cfg = load_config(None, ["array.num_elements=50"])
    spec = SweepSpec(
        "snr", (0.0, 5.0, 10.0, 15.0, 20.0),
        trials_per_point=200, mode="full_estimation",
    )
    base = base_scenario_for_sweep(cfg, spec)
    result = run_estimation_campaign(spec, base)
    ratios = {"p": [], "v": [], "o": []}
    for point in result.points:
        assert point["localizable"]
        assert point["init_failures"] == 0
        assert point["convergence_rate"] >= 0.95
        for short, rmse_key, bound_key in (
            ("p", "rmse_p", "peb"), ("v", "rmse_v", "veb"), ("o", "rmse_o", "oeb"),
        ):
            ratio = point[rmse_key] / point[bound_key]
            assert ratio <= RMSE_BOUND_FACTOR, (
                f"snr={point['sweep_value']}: {rmse_key}/{bound_key}={ratio:.3f}"
            )
            ratios[short].append(ratio)
    # common random numbers make the ratio curves smooth; they must end
    # below where they started and never jump upward materially
    for short, series in ratios.items():
        assert series[-1] < series[0], f"{short} ratio did not improve: {series}"
        for prev, cur in zip(series, series[1:]):
            assert cur <= prev + 0.02, f"{short} ratio rose: {series}"
    elapsed = time.monotonic() - started
    assert elapsed < CAMPAIGN_BUDGET_S
    ends = {k: (v[0], v[-1]) for k, v in ratios.items()}
    detail = " ".join(f"{k}:{a:.3f}->{b:.3f}" for k, (a, b) in ends.items())
    print(f"[criterion 08] PASS {detail} trials=200 elapsed={elapsed:.1f}s")


def test_criterion_09_pipeline_recovers_truth_from_noise_free_data():
    """On noise-free measurements with no offsets, the geometric
    initializer plus refinement reproduces the exact motion state."""
    started = time.monotonic()
    scenario = reference_scenario(
        seed=11, num_anchors=5, num_elements=50, num_slots=2,
        clock_offset_range=0.0, freq_offset_range=0.0,
    )
    channel = build_channel(scenario)
    meas = exact_measurements(channel)
    model = StateModel.from_channel(channel)
    est = refine(initialize(meas, model), meas, model)
    truth = scenario.receiver
    err_p = norm(est.position0 - truth.position0)
    err_v = norm(est.velocity - truth.velocity)
    err_o = norm(est.orientation - truth.orientation)
    assert est.converged
    assert err_p < RECOVERY_TOL
    assert err_v < RECOVERY_TOL
    assert err_o < RECOVERY_TOL
    elapsed = time.monotonic() - started
    assert elapsed < RECOVERY_BUDGET_S
    print(f"[criterion 09] PASS err_p={err_p:.2e} err_v={err_v:.2e} "
          f"err_o={err_o:.2e} elapsed={elapsed:.2f}s")


def test_criterion_10_outputs_are_bitwise_deterministic(tmp_path):
    """Identical configs produce byte-identical CSVs across repeated runs
    and across worker counts."""
    cfg = load_config(None, ["anchors.count=4", "array.num_elements=6"])
    bounds_spec = SweepSpec("num_anchors", (2, 3, 4))
    bounds_base = base_scenario_for_sweep(cfg, bounds_spec)
    est_spec = SweepSpec("snr", (5.0, 10.0), trials_per_point=2, mode="full_estimation")
    est_base = base_scenario_for_sweep(cfg, est_spec)

    outputs = {}
    for tag, workers in (("first", 1), ("second", 1), ("parallel", 2)):
        sub = tmp_path / tag
        sub.mkdir()
        bounds = run_bounds_sweep(bounds_spec, bounds_base, "h", workers=workers)
        write_csv(str(sub / "bounds.csv"), BOUNDS_FIELDS, bounds.points, "h",
                  bounds_base.seed)
        campaign = run_estimation_campaign(est_spec, est_base, "h", workers=workers)
        write_csv(str(sub / "estimation.csv"), ESTIMATION_FIELDS, campaign.points,
                  "h", est_base.seed)
        write_csv(str(sub / "trials.csv"), TRIAL_FIELDS, campaign.trials, "h",
                  est_base.seed)
        outputs[tag] = {
            name: (sub / name).read_bytes()
            for name in ("bounds.csv", "estimation.csv", "trials.csv")
        }
    for name in ("bounds.csv", "estimation.csv", "trials.csv"):
        assert outputs["first"][name] == outputs["second"][name], f"{name} rerun drifted"
        assert outputs["first"][name] == outputs["parallel"][name], (
            f"{name} depends on worker count"
        )
    sizes = {k: len(v) for k, v in outputs["first"].items()}
    print(f"[criterion 10] PASS identical_bytes across reruns and workers "
          f"sizes={sizes}")
