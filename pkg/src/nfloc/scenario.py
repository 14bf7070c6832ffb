"""Scenario geometry and kinematics for a moving uniform linear array.

A scenario couples a set of moving, unsynchronized anchors with a receiver
that carries a uniform linear array (ULA) through a handful of observation
slots.  Everything downstream (channel tables, information matrices, the
estimator) consumes the `GeometryTable` built here, so the conventions are
fixed once and for all in this module:

* slots are numbered ``k = 1..num_slots`` and slot 1 is the initial state;
* elements are numbered ``u = 1..num_elements`` with a configurable
  reference element ``U``; element ``u`` sits at ``(u - U) * spacing``
  along the array orientation;
* line-of-sight unit vectors point from the anchor to the element.

Arrays are stored 0-based in ``[anchor, slot, element]`` order; the public
single-entry helpers take the 1-based indices used in the conventions
above and validate them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation, DegenerateGeometryError
from .waveform import Waveform

__all__ = [
    "Anchor",
    "ReceiverTruth",
    "ArraySpec",
    "SlotPlan",
    "GeometryTable",
    "FresnelReport",
    "NoiseConfig",
    "ScenarioConfig",
    "element_position",
    "element_positions",
    "build_geometry",
    "geometry_from_state",
    "fresnel_check",
    "place_anchors",
    "reference_scenario",
]

#: Anchor/element separations below this are rejected as degenerate (meters).
MIN_SEPARATION_M = 1e-6


def _as_vector3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ContractViolation(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} must be finite, got {arr}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Anchor:
    """A transmitting anchor with known kinematics and unknown offsets.

    Attributes:
        initial_position: position at slot 1, meters.
        velocity_per_slot: (num_slots, 3) velocity during each slot, m/s.
            For rectilinear motion every row is identical.
        clock_offset: transmit clock offset against the receiver, seconds.
        frequency_offset: carrier frequency offset, Hz.
    """

    initial_position: np.ndarray
    velocity_per_slot: np.ndarray
    clock_offset: float = 0.0
    frequency_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "initial_position", _as_vector3(self.initial_position, "initial_position")
        )
        vel = np.asarray(self.velocity_per_slot, dtype=float)
        if vel.ndim == 1:
            vel = vel.reshape(1, 3)
        if vel.ndim != 2 or vel.shape[1] != 3 or vel.shape[0] < 1:
            raise ContractViolation(
                f"velocity_per_slot must be (num_slots, 3), got shape {vel.shape}"
            )
        if not np.all(np.isfinite(vel)):
            raise ContractViolation("velocity_per_slot must be finite")
        vel.flags.writeable = False
        object.__setattr__(self, "velocity_per_slot", vel)
        if not np.isfinite(self.clock_offset) or not np.isfinite(self.frequency_offset):
            raise ContractViolation("anchor offsets must be finite")

    @property
    def num_slots_known(self) -> int:
        return self.velocity_per_slot.shape[0]

    def positions(self, plan: "SlotPlan") -> np.ndarray:
        """Anchor position at each slot, shape (num_slots, 3).

        Positions accrue slot by slot from the per-slot velocities, which
        reduces to ``p0 + (k-1) * dt * v`` when the velocity is constant.
        """
        if self.num_slots_known < plan.num_slots:
            raise ContractViolation(
                f"anchor knows {self.num_slots_known} slot velocities, "
                f"plan needs {plan.num_slots}"
            )
        vel = self.velocity_per_slot[: plan.num_slots]
        steps = np.vstack([np.zeros(3), vel[:-1] * plan.slot_spacing])
        return self.initial_position + np.cumsum(steps, axis=0)

    def velocities(self, plan: "SlotPlan") -> np.ndarray:
        """Anchor velocity at each slot, shape (num_slots, 3)."""
        if self.num_slots_known < plan.num_slots:
            raise ContractViolation(
                f"anchor knows {self.num_slots_known} slot velocities, "
                f"plan needs {plan.num_slots}"
            )
        return self.velocity_per_slot[: plan.num_slots]


@dataclass(frozen=True)
class ReceiverTruth:
    """Ground-truth receiver motion state.

    Attributes:
        position0: reference-element position at slot 1, meters.
        velocity: receiver velocity (shared by all elements), m/s.
        orientation: unit vector along the array axis.
    """

    position0: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position0", _as_vector3(self.position0, "position0"))
        object.__setattr__(self, "velocity", _as_vector3(self.velocity, "velocity"))
        ori = _as_vector3(self.orientation, "orientation")
        norm = float(np.linalg.norm(ori))
        if abs(norm - 1.0) > 1e-12:
            raise ContractViolation(f"orientation must be unit norm, |s|={norm!r}")
        object.__setattr__(self, "orientation", ori)


@dataclass(frozen=True)
class ArraySpec:
    """Uniform linear array layout.

    ``reference_index`` is 1-based; the reference element is the point whose
    position and velocity make up the first six motion-state entries.
    """

    num_elements: int
    element_spacing: float
    reference_index: int = 1

    def __post_init__(self):
        if self.num_elements < 2:
            raise ContractViolation("num_elements must be at least 2")
        if not self.element_spacing > 0:
            raise ContractViolation("element_spacing must be positive")
        if not 1 <= self.reference_index <= self.num_elements:
            raise ContractViolation(
                f"reference_index {self.reference_index} outside 1..{self.num_elements}"
            )

    @property
    def aperture(self) -> float:
        """End-to-end array length in meters."""
        return (self.num_elements - 1) * self.element_spacing

    def element_offsets(self) -> np.ndarray:
        """Signed element offsets ``(u - U) * spacing`` in meters, shape (num_elements,)."""
        idx = np.arange(1, self.num_elements + 1)
        return (idx - self.reference_index) * self.element_spacing


@dataclass(frozen=True)
class SlotPlan:
    """Observation slot timing: ``num_slots`` snapshots ``slot_spacing`` apart."""

    num_slots: int
    slot_spacing: float

    def __post_init__(self):
        if self.num_slots < 1:
            raise ContractViolation("num_slots must be at least 1")
        if not self.slot_spacing > 0:
            raise ContractViolation("slot_spacing must be positive")

    def slot_offsets(self) -> np.ndarray:
        """Elapsed time ``(k - 1) * dt`` per slot, shape (num_slots,)."""
        return np.arange(self.num_slots) * self.slot_spacing


@dataclass(frozen=True)
class GeometryTable:
    """Dense geometry tables for one scenario realization.

    All arrays are indexed ``[anchor, slot, element]`` (0-based) with a
    trailing axis of 3 for vectors.  ``unit_dir`` points from the anchor to
    the element; ``rel_velocity`` is anchor velocity minus receiver velocity.
    """

    element_pos: np.ndarray  # (num_slots, num_elements, 3)
    anchor_pos: np.ndarray  # (num_anchors, num_slots, 3)
    anchor_vel: np.ndarray  # (num_anchors, num_slots, 3)
    distance: np.ndarray  # (num_anchors, num_slots, num_elements)
    unit_dir: np.ndarray  # (num_anchors, num_slots, num_elements, 3)
    rel_velocity: np.ndarray  # (num_anchors, num_slots, num_elements, 3)
    array: ArraySpec
    plan: SlotPlan

    @property
    def num_anchors(self) -> int:
        return self.distance.shape[0]

    @property
    def num_slots(self) -> int:
        return self.distance.shape[1]

    @property
    def num_elements(self) -> int:
        return self.distance.shape[2]


def element_positions(receiver: ReceiverTruth, array: ArraySpec, plan: SlotPlan) -> np.ndarray:
    """Element positions for every slot, shape (num_slots, num_elements, 3)."""
    return _element_positions_raw(
        receiver.position0, receiver.velocity, receiver.orientation, array, plan
    )


def _element_positions_raw(position0, velocity, orientation, array, plan) -> np.ndarray:
    position0 = np.asarray(position0, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    orientation = np.asarray(orientation, dtype=float)
    t = plan.slot_offsets()[:, None, None]  # (K,1,1)
    offs = array.element_offsets()[None, :, None]  # (1,U,1)
    return position0[None, None, :] + t * velocity[None, None, :] + offs * orientation[None, None, :]


def element_position(
    receiver: ReceiverTruth, array: ArraySpec, plan: SlotPlan, u: int, k: int
) -> np.ndarray:
    """Position of element ``u`` at slot ``k`` (both 1-based)."""
    if not 1 <= u <= array.num_elements:
        raise ContractViolation(f"element index {u} outside 1..{array.num_elements}")
    if not 1 <= k <= plan.num_slots:
        raise ContractViolation(f"slot index {k} outside 1..{plan.num_slots}")
    return element_positions(receiver, array, plan)[k - 1, u - 1]


def build_geometry(
    anchors: Sequence[Anchor],
    receiver: ReceiverTruth,
    array: ArraySpec,
    plan: SlotPlan,
) -> GeometryTable:
    """Assemble the full geometry table for a scenario.

    Raises:
        DegenerateGeometryError: if any anchor/element separation falls
            below ``MIN_SEPARATION_M``.
        ContractViolation: if an anchor lacks velocities for the plan.
    """
    if len(anchors) < 1:
        raise ContractViolation("at least one anchor is required")
    anchor_pos = np.stack([a.positions(plan) for a in anchors])  # (B,K,3)
    anchor_vel = np.stack([a.velocities(plan) for a in anchors])  # (B,K,3)
    elem = element_positions(receiver, array, plan)  # (K,U,3)
    return _geometry_tables(elem, anchor_pos, anchor_vel, receiver.velocity, array, plan)


def geometry_from_state(
    position0,
    velocity,
    orientation,
    anchor_pos: np.ndarray,
    anchor_vel: np.ndarray,
    array: ArraySpec,
    plan: SlotPlan,
) -> GeometryTable:
    """Geometry table for an arbitrary candidate receiver state.

    Unlike `build_geometry` this skips receiver validation (the candidate
    orientation may be slightly off the unit sphere during numerical
    differentiation) and reuses precomputed anchor tracks.
    """
    elem = _element_positions_raw(position0, velocity, orientation, array, plan)
    return _geometry_tables(
        elem, anchor_pos, anchor_vel, np.asarray(velocity, dtype=float), array, plan
    )


def _geometry_tables(elem, anchor_pos, anchor_vel, receiver_velocity, array, plan):
    sep = elem[None, :, :, :] - anchor_pos[:, :, None, :]  # (B,K,U,3)
    dist = np.linalg.norm(sep, axis=-1)  # (B,K,U)
    if np.any(dist < MIN_SEPARATION_M):
        b, k, u = np.unravel_index(int(np.argmin(dist)), dist.shape)
        raise DegenerateGeometryError(
            f"anchor {b + 1} and element {u + 1} at slot {k + 1} are "
            f"{dist[b, k, u]:.3e} m apart (< {MIN_SEPARATION_M} m)"
        )
    unit_dir = sep / dist[..., None]
    rel_vel = anchor_vel[:, :, None, :] - receiver_velocity[None, None, None, :]
    rel_vel = np.broadcast_to(rel_vel, sep.shape).copy()
    return GeometryTable(
        element_pos=elem,
        anchor_pos=anchor_pos,
        anchor_vel=anchor_vel,
        distance=dist,
        unit_dir=unit_dir,
        rel_velocity=rel_vel,
        array=array,
        plan=plan,
    )


@dataclass(frozen=True)
class FresnelReport:
    """Per-entry verdicts for the radiating near-field (Fresnel) region."""

    lower_bound: float
    upper_bound: float
    inside: np.ndarray  # (B,K,U) bool
    fraction_inside: float


def fresnel_check(array: ArraySpec, wavelength: float, geometry: GeometryTable) -> FresnelReport:
    """Check which anchor/element separations fall in the Fresnel region.

    The region is ``0.62 * sqrt(D^3 / wl) < d < 2 * D^2 / wl`` with ``D`` the
    array aperture; both inequalities are strict, so a distance exactly on
    either boundary counts as outside.
    """
    if not wavelength > 0:
        raise ContractViolation("wavelength must be positive")
    aperture = array.aperture
    lower = 0.62 * np.sqrt(aperture**3 / wavelength)
    upper = 2.0 * aperture**2 / wavelength
    inside = (geometry.distance > lower) & (geometry.distance < upper)
    return FresnelReport(
        lower_bound=float(lower),
        upper_bound=float(upper),
        inside=inside,
        fraction_inside=float(np.mean(inside)),
    )


def place_anchors(
    num_anchors: int,
    plan: SlotPlan,
    *,
    center,
    radius: float,
    speed: float,
    seed: int,
    velocity_mode: str = "constant",
    clock_offset_range: float = 0.0,
    freq_offset_range: float = 0.0,
) -> list[Anchor]:
    """Draw anchors uniformly inside a sphere, with random motion directions.

    Offsets are drawn uniformly from ``[-range, +range]``.  With
    ``velocity_mode="distinct"`` each slot gets an independent direction
    (same speed), which is the stress case for single-anchor observability.
    Deterministic for a given seed.
    """
    if num_anchors < 1:
        raise ContractViolation("num_anchors must be at least 1")
    if velocity_mode not in ("constant", "distinct"):
        raise ContractViolation(f"unknown velocity_mode {velocity_mode!r}")
    center = _as_vector3(center, "center")
    rng = np.random.default_rng(seed)
    anchors = []
    for _ in range(num_anchors):
        direction = _random_unit(rng)
        r = radius * rng.uniform() ** (1.0 / 3.0)
        pos = center + r * direction
        if velocity_mode == "constant":
            vel = np.tile(speed * _random_unit(rng), (plan.num_slots, 1))
        else:
            vel = np.stack([speed * _random_unit(rng) for _ in range(plan.num_slots)])
        delta = rng.uniform(-clock_offset_range, clock_offset_range) if clock_offset_range else 0.0
        eps = rng.uniform(-freq_offset_range, freq_offset_range) if freq_offset_range else 0.0
        anchors.append(
            Anchor(
                initial_position=pos,
                velocity_per_slot=vel,
                clock_offset=float(delta),
                frequency_offset=float(eps),
            )
        )
    return anchors


def _random_unit(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    n = np.linalg.norm(v)
    while n < 1e-12:  # pragma: no cover - vanishing probability
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
    return v / n


@dataclass(frozen=True)
class NoiseConfig:
    """Receiver noise settings.

    Exactly one of ``target_snr_db`` (noise floor solved so the median
    reference-element SNR hits the target) or ``noise_psd`` must be set.
    ``doppler_energy_scaling`` switches the Doppler information entry to
    include the symbol energy factor; the default keeps the plain form.
    """

    target_snr_db: float | None = 10.0
    noise_psd: float | None = None
    pathloss_exponent: float = 1.0
    doppler_energy_scaling: bool = False

    def __post_init__(self):
        if (self.target_snr_db is None) == (self.noise_psd is None):
            raise ContractViolation(
                "exactly one of target_snr_db / noise_psd must be given"
            )
        if self.noise_psd is not None and not self.noise_psd > 0:
            raise ContractViolation("noise_psd must be positive")
        if self.pathloss_exponent <= 0:
            raise ContractViolation("pathloss_exponent must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully specified scenario: inputs for every downstream stage."""

    anchors: tuple[Anchor, ...]
    receiver: ReceiverTruth
    array: ArraySpec
    plan: SlotPlan
    waveform: Waveform
    noise: NoiseConfig
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))
        if len(self.anchors) < 1:
            raise ContractViolation("scenario needs at least one anchor")
        for i, a in enumerate(self.anchors):
            if a.num_slots_known < self.plan.num_slots:
                raise ContractViolation(
                    f"anchor {i + 1} has velocities for {a.num_slots_known} slots, "
                    f"plan needs {self.plan.num_slots}"
                )

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    def clock_offsets(self) -> np.ndarray:
        return np.array([a.clock_offset for a in self.anchors])

    def frequency_offsets(self) -> np.ndarray:
        return np.array([a.frequency_offset for a in self.anchors])


def reference_scenario(
    *,
    seed: int = 20260818,
    num_anchors: int = 5,
    num_elements: int = 100,
    num_slots: int = 2,
    slot_spacing: float = 0.5,
    carrier_hz: float = 1.0e9,
    bandwidth_hz: float = 5.0e8,
    rolloff: float = 0.25,
    amplitude: float = 1.0,
    target_snr_db: float = 10.0,
    anchor_radius: float = 50.0,
    anchor_speed: float = 10.0,
    receiver_speed: float = 5.0,
    clock_offset_range: float = 1.0e-9,
    freq_offset_range: float = 100.0,
    element_spacing: float | None = None,
    anchor_velocity_mode: str = "constant",
    pathloss_exponent: float = 1.0,
) -> ScenarioConfig:
    """Build the default evaluation scenario.

    Anchors are drawn uniformly inside a sphere centered on the middle of
    the array; receiver and anchor headings are random but seeded.  Element
    spacing defaults to half the carrier wavelength.
    """
    from .channel import SPEED_OF_LIGHT  # local import to avoid a cycle

    wavelength = SPEED_OF_LIGHT / carrier_hz
    spacing = wavelength / 2.0 if element_spacing is None else element_spacing
    array = ArraySpec(num_elements=num_elements, element_spacing=spacing, reference_index=1)
    plan = SlotPlan(num_slots=num_slots, slot_spacing=slot_spacing)

    rng = np.random.default_rng(seed)
    orientation = _random_unit(rng)
    velocity = receiver_speed * _random_unit(rng)
    receiver = ReceiverTruth(position0=np.zeros(3), velocity=velocity, orientation=orientation)

    # Sphere center sits at the array midpoint so the aperture is centered
    # in the anchor cloud.
    mid_offset = ((num_elements + 1) / 2.0 - array.reference_index) * spacing
    center = receiver.position0 + mid_offset * orientation

    anchors = place_anchors(
        num_anchors,
        plan,
        center=center,
        radius=anchor_radius,
        speed=anchor_speed,
        seed=int(rng.integers(0, 2**63 - 1)),
        velocity_mode=anchor_velocity_mode,
        clock_offset_range=clock_offset_range,
        freq_offset_range=freq_offset_range,
    )

    wf = Waveform(
        kind="raised_cosine",
        rolloff=rolloff,
        zero_crossing_time=(1.0 + rolloff) / bandwidth_hz,
        carrier_frequency=carrier_hz,
        amplitude=amplitude,
    )
    noise = NoiseConfig(
        target_snr_db=target_snr_db,
        noise_psd=None,
        pathloss_exponent=pathloss_exponent,
    )
    return ScenarioConfig(
        anchors=tuple(anchors),
        receiver=receiver,
        array=array,
        plan=plan,
        waveform=wf,
        noise=noise,
        seed=seed,
    )
