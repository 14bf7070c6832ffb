"""Geometry construction: element placement, anchor tracks, Fresnel check."""

import numpy as np
import pytest

from nfloc.errors import ContractViolation, DegenerateGeometryError
from nfloc.scenario import (
    Anchor,
    ArraySpec,
    ReceiverTruth,
    ScenarioConfig,
    SlotPlan,
    build_geometry,
    element_position,
    element_positions,
    fresnel_check,
    place_anchors,
    reference_scenario,
)

Z_AXIS = np.array([0.0, 0.0, 1.0])


def make_receiver(position0=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0), orientation=Z_AXIS):
    return ReceiverTruth(position0=position0, velocity=velocity, orientation=orientation)


class TestElementPosition:
    def test_reference_element_first_slot_is_position0(self):
        rec = make_receiver(position0=(3.0, -2.0, 7.0), velocity=(1.0, 0.0, 0.0))
        array = ArraySpec(num_elements=5, element_spacing=0.2)
        plan = SlotPlan(num_slots=3, slot_spacing=0.5)
        np.testing.assert_array_equal(
            element_position(rec, array, plan, u=array.reference_index, k=1),
            np.array([3.0, -2.0, 7.0]),
        )

    def test_pure_array_offset(self):
        rec = make_receiver(orientation=(1.0, 0.0, 0.0))
        array = ArraySpec(num_elements=5, element_spacing=0.15)
        plan = SlotPlan(num_slots=1, slot_spacing=0.5)
        # two elements past the reference: offset 2 * 0.15 m along the axis
        got = element_position(rec, array, plan, u=array.reference_index + 2, k=1)
        np.testing.assert_allclose(got, [0.30, 0.0, 0.0], rtol=0, atol=1e-15)

    def test_pure_translation(self):
        rec = make_receiver(velocity=(5.0, 0.0, 0.0))
        array = ArraySpec(num_elements=5, element_spacing=0.15)
        plan = SlotPlan(num_slots=3, slot_spacing=0.5)
        got = element_position(rec, array, plan, u=array.reference_index, k=3)
        np.testing.assert_allclose(got, [5.0, 0.0, 0.0], rtol=0, atol=1e-15)

    def test_index_out_of_range(self):
        rec = make_receiver()
        array = ArraySpec(num_elements=4, element_spacing=0.1)
        plan = SlotPlan(num_slots=2, slot_spacing=0.5)
        with pytest.raises(ContractViolation):
            element_position(rec, array, plan, u=5, k=1)
        with pytest.raises(ContractViolation):
            element_position(rec, array, plan, u=1, k=3)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_consecutive_elements_collinear(self, seed):
        rng = np.random.default_rng(seed)
        ori = rng.standard_normal(3)
        ori /= np.linalg.norm(ori)
        rec = make_receiver(
            position0=rng.standard_normal(3),
            velocity=rng.standard_normal(3),
            orientation=ori,
        )
        array = ArraySpec(num_elements=16, element_spacing=0.15)
        plan = SlotPlan(num_slots=3, slot_spacing=0.25)
        pos = element_positions(rec, array, plan)
        diffs = np.diff(pos, axis=1)
        np.testing.assert_allclose(
            diffs,
            np.broadcast_to(0.15 * ori, diffs.shape),
            rtol=0,
            atol=1e-12,
        )


class TestAnchor:
    def test_constant_velocity_track(self):
        anchor = Anchor(initial_position=(10.0, 0.0, 0.0), velocity_per_slot=(2.0, 0.0, 0.0))
        plan = SlotPlan(num_slots=1, slot_spacing=0.5)
        np.testing.assert_array_equal(anchor.positions(plan), [[10.0, 0.0, 0.0]])

        anchor4 = Anchor(
            initial_position=(10.0, 0.0, 0.0),
            velocity_per_slot=np.tile([2.0, 0.0, 0.0], (4, 1)),
        )
        plan4 = SlotPlan(num_slots=4, slot_spacing=0.5)
        expect = np.array([10.0, 0.0, 0.0]) + np.outer(
            np.arange(4) * 0.5, [2.0, 0.0, 0.0]
        )
        np.testing.assert_allclose(anchor4.positions(plan4), expect, rtol=0, atol=1e-12)

    def test_too_few_slot_velocities(self):
        anchor = Anchor(initial_position=(1.0, 0, 0), velocity_per_slot=np.zeros((2, 3)))
        with pytest.raises(ContractViolation):
            anchor.positions(SlotPlan(num_slots=3, slot_spacing=0.5))

    def test_extra_slot_velocities_are_allowed(self):
        # a prefix of a longer velocity schedule is usable with a shorter plan
        anchor = Anchor(initial_position=(1.0, 0, 0), velocity_per_slot=np.zeros((4, 3)))
        assert anchor.positions(SlotPlan(num_slots=2, slot_spacing=0.5)).shape == (2, 3)

    def test_nonfinite_velocity_rejected(self):
        with pytest.raises(ContractViolation):
            Anchor(initial_position=(1.0, 0, 0), velocity_per_slot=(np.nan, 0.0, 0.0))


class TestBuildGeometry:
    def test_unit_direction_points_anchor_to_element(self):
        geom = build_geometry(
            [Anchor(initial_position=(100.0, 0.0, 0.0), velocity_per_slot=np.zeros((1, 3)))],
            make_receiver(),
            ArraySpec(num_elements=2, element_spacing=0.15),
            SlotPlan(num_slots=1, slot_spacing=0.5),
        )
        assert geom.distance[0, 0, 0] == pytest.approx(100.0, abs=1e-12)
        np.testing.assert_allclose(geom.unit_dir[0, 0, 0], [-1.0, 0.0, 0.0], atol=1e-15)

    def test_relative_velocity_is_anchor_minus_receiver(self):
        geom = build_geometry(
            [Anchor(initial_position=(50.0, 0.0, 0.0), velocity_per_slot=(10.0, 0.0, 0.0))],
            make_receiver(velocity=(5.0, 0.0, 0.0)),
            ArraySpec(num_elements=2, element_spacing=0.15),
            SlotPlan(num_slots=1, slot_spacing=0.5),
        )
        np.testing.assert_array_equal(
            geom.rel_velocity[0, 0, 0], np.array([5.0, 0.0, 0.0])
        )

    @pytest.mark.parametrize("seed", [11, 12])
    def test_distances_match_direct_norms(self, seed):
        scenario = reference_scenario(seed=seed, num_anchors=4, num_elements=6, num_slots=3)
        geom = build_geometry(
            scenario.anchors, scenario.receiver, scenario.array, scenario.plan
        )
        elem = element_positions(scenario.receiver, scenario.array, scenario.plan)
        for b, anchor in enumerate(scenario.anchors):
            track = anchor.positions(scenario.plan)
            for k in range(scenario.plan.num_slots):
                direct = np.linalg.norm(elem[k] - track[k], axis=-1)
                np.testing.assert_allclose(geom.distance[b, k], direct, rtol=1e-14)

    def test_positive_distances_everywhere(self, ref_channel):
        assert np.all(ref_channel.geometry.distance > 0)

    def test_construction_is_deterministic(self, small_scenario):
        a = build_geometry(
            small_scenario.anchors,
            small_scenario.receiver,
            small_scenario.array,
            small_scenario.plan,
        )
        b = build_geometry(
            small_scenario.anchors,
            small_scenario.receiver,
            small_scenario.array,
            small_scenario.plan,
        )
        np.testing.assert_array_equal(a.distance, b.distance)
        np.testing.assert_array_equal(a.unit_dir, b.unit_dir)
        np.testing.assert_array_equal(a.rel_velocity, b.rel_velocity)

    def test_coincident_anchor_and_element_raises(self):
        with pytest.raises(DegenerateGeometryError):
            build_geometry(
                [Anchor(initial_position=(0.0, 0.0, 0.0), velocity_per_slot=np.zeros((1, 3)))],
                make_receiver(),
                ArraySpec(num_elements=2, element_spacing=0.15),
                SlotPlan(num_slots=1, slot_spacing=0.5),
            )


class TestFresnelCheck:
    def test_fifty_meters_is_below_lower_bound_for_big_aperture(self):
        # aperture 15 m at 3 cm wavelength: lower bound ~ 208 m, so 50 m is
        # inside the reactive zone, not the Fresnel region
        array = ArraySpec(num_elements=101, element_spacing=0.15)
        geom = build_geometry(
            [Anchor(initial_position=(0.0, 50.0, 0.0), velocity_per_slot=np.zeros((1, 3)))],
            make_receiver(orientation=(1.0, 0.0, 0.0)),
            array,
            SlotPlan(num_slots=1, slot_spacing=0.5),
        )
        report = fresnel_check(array, 0.03, geom)
        assert report.lower_bound == pytest.approx(0.62 * np.sqrt(15.0**3 / 0.03))
        assert report.upper_bound == pytest.approx(2.0 * 15.0**2 / 0.03)
        assert report.lower_bound > 60.0
        assert report.fraction_inside == 0.0

    def test_boundary_distance_counts_as_outside(self):
        array = ArraySpec(num_elements=2, element_spacing=1.0)
        geom = build_geometry(
            [Anchor(initial_position=(200.0, 0.0, 0.0), velocity_per_slot=np.zeros((1, 3)))],
            make_receiver(),
            array,
            SlotPlan(num_slots=1, slot_spacing=0.5),
        )
        # pick the wavelength that puts the far (Fraunhofer) boundary exactly
        # at the reference-element distance: 2 D^2 / wl = 200
        wl = 2.0 * array.aperture**2 / 200.0
        report = fresnel_check(array, wl, geom)
        assert not report.inside[0, 0, 0]

    def test_far_anchor_is_outside(self):
        array = ArraySpec(num_elements=8, element_spacing=0.15)
        geom = build_geometry(
            [Anchor(initial_position=(1e9, 0.0, 0.0), velocity_per_slot=np.zeros((1, 3)))],
            make_receiver(),
            array,
            SlotPlan(num_slots=1, slot_spacing=0.5),
        )
        assert fresnel_check(array, 0.3, geom).fraction_inside == 0.0


class TestSpecsValidation:
    def test_array_spec_rejects_bad_inputs(self):
        with pytest.raises(ContractViolation):
            ArraySpec(num_elements=1, element_spacing=0.1)
        with pytest.raises(ContractViolation):
            ArraySpec(num_elements=4, element_spacing=0.0)
        with pytest.raises(ContractViolation):
            ArraySpec(num_elements=4, element_spacing=0.1, reference_index=5)

    def test_element_offsets_and_aperture(self):
        array = ArraySpec(num_elements=4, element_spacing=0.5, reference_index=1)
        np.testing.assert_array_equal(array.element_offsets(), [0.0, 0.5, 1.0, 1.5])
        assert array.aperture == pytest.approx(1.5)

    def test_slot_plan_rejects_bad_inputs(self):
        with pytest.raises(ContractViolation):
            SlotPlan(num_slots=0, slot_spacing=0.5)
        with pytest.raises(ContractViolation):
            SlotPlan(num_slots=2, slot_spacing=0.0)
        np.testing.assert_array_equal(
            SlotPlan(num_slots=3, slot_spacing=0.5).slot_offsets(), [0.0, 0.5, 1.0]
        )

    def test_receiver_orientation_must_be_unit(self):
        with pytest.raises(ContractViolation):
            ReceiverTruth(position0=np.zeros(3), velocity=np.zeros(3), orientation=(0, 0, 2.0))

    def test_scenario_rejects_short_anchor_schedules(self):
        scenario = reference_scenario(num_anchors=2, num_slots=2, seed=1)
        with pytest.raises(ContractViolation):
            ScenarioConfig(
                anchors=scenario.anchors,
                receiver=scenario.receiver,
                array=scenario.array,
                plan=SlotPlan(num_slots=3, slot_spacing=0.5),
                waveform=scenario.waveform,
                noise=scenario.noise,
            )


class TestPlaceAnchors:
    def test_within_radius_and_at_speed(self):
        plan = SlotPlan(num_slots=2, slot_spacing=0.5)
        anchors = place_anchors(
            8, plan, center=(1.0, 2.0, 3.0), radius=50.0, speed=10.0, seed=3
        )
        for anchor in anchors:
            assert np.linalg.norm(anchor.initial_position - [1.0, 2.0, 3.0]) <= 50.0
            np.testing.assert_allclose(
                np.linalg.norm(anchor.velocity_per_slot, axis=1), 10.0, rtol=1e-12
            )

    def test_distinct_mode_varies_direction_per_slot(self):
        plan = SlotPlan(num_slots=3, slot_spacing=0.5)
        (anchor,) = place_anchors(
            1, plan, center=np.zeros(3), radius=50.0, speed=10.0, seed=4,
            velocity_mode="distinct",
        )
        vel = anchor.velocity_per_slot
        assert not np.allclose(vel[0], vel[1])

    def test_same_seed_prefix_property(self):
        plan = SlotPlan(num_slots=2, slot_spacing=0.5)
        kwargs = dict(center=np.zeros(3), radius=50.0, speed=10.0, seed=9,
                      clock_offset_range=1e-9, freq_offset_range=100.0)
        three = place_anchors(3, plan, **kwargs)
        five = place_anchors(5, plan, **kwargs)
        for a, b in zip(three, five):
            np.testing.assert_array_equal(a.initial_position, b.initial_position)
            np.testing.assert_array_equal(a.velocity_per_slot, b.velocity_per_slot)
            assert a.clock_offset == b.clock_offset
            assert a.frequency_offset == b.frequency_offset

    def test_offset_ranges_respected(self):
        plan = SlotPlan(num_slots=1, slot_spacing=0.5)
        anchors = place_anchors(
            16, plan, center=np.zeros(3), radius=50.0, speed=10.0, seed=5,
            clock_offset_range=1e-9, freq_offset_range=100.0,
        )
        clocks = np.array([a.clock_offset for a in anchors])
        freqs = np.array([a.frequency_offset for a in anchors])
        assert np.all(np.abs(clocks) <= 1e-9)
        assert np.all(np.abs(freqs) <= 100.0)
        assert clocks.std() > 0 and freqs.std() > 0


class TestReferenceScenario:
    def test_same_seed_reproduces_anchors(self):
        a = reference_scenario(seed=21)
        b = reference_scenario(seed=21)
        assert a.num_anchors == b.num_anchors
        for x, y in zip(a.anchors, b.anchors):
            np.testing.assert_array_equal(x.initial_position, y.initial_position)
        np.testing.assert_array_equal(a.receiver.velocity, b.receiver.velocity)

    def test_default_shape_and_speeds(self, ref_scenario):
        assert ref_scenario.num_anchors == 5
        assert ref_scenario.array.num_elements == 100
        assert ref_scenario.plan.num_slots == 2
        assert np.linalg.norm(ref_scenario.receiver.velocity) == pytest.approx(5.0)
        assert np.linalg.norm(ref_scenario.receiver.orientation) == pytest.approx(1.0)
        # element spacing defaults to half the carrier wavelength
        wl = ref_scenario.waveform.wavelength
        assert ref_scenario.array.element_spacing == pytest.approx(wl / 2.0)

    def test_offset_accessors(self, ref_scenario):
        clocks = ref_scenario.clock_offsets()
        freqs = ref_scenario.frequency_offsets()
        assert clocks.shape == (5,) and freqs.shape == (5,)
        assert np.all(np.abs(clocks) <= 1.0e-9)
        assert np.all(np.abs(freqs) <= 100.0)

    def test_velocity_mode_validation(self):
        with pytest.raises(ContractViolation):
            reference_scenario(anchor_velocity_mode="wobbly")
