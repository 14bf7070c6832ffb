"""Geometric initializer: crude motion-state estimates from raw measurements.

The pipeline fixes the positions of a small set of array elements by
multilateration of delay measurements, reads the array axis off
consecutive fixes, recovers velocity from the motion of the fixes (or a
Doppler least-squares fit when only one slot exists), back-propagates to
the reference element position, and finally absorbs per-anchor residual
means as offset estimates.  Output quality is deliberately crude: its only
job is to land inside the basin of the likelihood refiner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import SPEED_OF_LIGHT, StateModel
from .errors import ContractViolation, InitializerFailure
from .measurement import MeasurementSet

_SINGULARITY_RATIO = 1e-10


@dataclass(frozen=True)
class InitializerConfig:
    index_count: int = 8
    max_clock_offset: float = 1e-5  # s, plausibility clamp
    max_frequency_offset: float = 1e4  # Hz
    offset_rounds: int = 2
    fallback_grid_points: int = 7
    fallback_grid_levels: int = 4

    def __post_init__(self):
        if self.index_count < 2:
            raise ContractViolation("index_count must be at least 2")
        if self.offset_rounds < 1:
            raise ContractViolation("offset_rounds must be at least 1")


@dataclass(frozen=True)
class InitEstimate:
    """Hand-off bundle for the likelihood refiner."""

    position0: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray
    clock_offsets: np.ndarray  # (B,)
    frequency_offsets: np.ndarray  # (B,)
    element_fixes: dict = field(default_factory=dict)  # (u, k) -> 3-vector
    index_set: tuple = ()

    def __post_init__(self):
        n = np.linalg.norm(self.orientation)
        if not np.isclose(n, 1.0, rtol=0, atol=1e-9):
            raise ContractViolation(f"orientation must be unit norm, got {n!r}")
        vals = np.concatenate(
            [self.position0, self.velocity, self.clock_offsets, self.frequency_offsets]
        )
        if not np.all(np.isfinite(vals)):
            raise ContractViolation("initializer output must be finite")


def default_index_set(num_elements: int, count: int = 8) -> tuple:
    """Up to ``count`` equally spaced 1-based element indices."""
    idx = np.unique(np.round(np.linspace(1, num_elements, min(count, num_elements))).astype(int))
    return tuple(int(i) for i in idx)


def tdoa_element_fix(delays: np.ndarray, anchor_positions: np.ndarray) -> np.ndarray:
    """Element position from delay differences against the first anchor.

    Differencing removes the shared measurement epoch; per-anchor clock
    biases survive as range errors and are left for the refiner.  With
    five or more anchors the linearized system is solved least-squares;
    with exactly four it is solved along the one-parameter family plus the
    range-consistency quadratic, keeping the root nearer the anchor
    centroid (the receiver operates inside the deployment region).
    """
    delays = np.asarray(delays, dtype=float)
    anchors = np.asarray(anchor_positions, dtype=float)
    nb = delays.shape[0]
    if anchors.shape != (nb, 3):
        raise ContractViolation("anchor positions must be (num_anchors, 3)")
    if nb < 4:
        raise InitializerFailure(
            "element fix requires at least four anchors",
            diagnostics={"num_anchors": nb},
        )
    ranges = SPEED_OF_LIGHT * delays
    a0 = anchors[0]
    dr = ranges[1:] - ranges[0]
    lhs_p = 2.0 * (anchors[1:] - a0)  # (nb-1, 3)
    rhs = (
        np.sum(anchors[1:] ** 2, axis=1)
        - np.sum(a0**2)
        - dr**2
    )
    if nb >= 5:
        a_mat = np.column_stack([lhs_p, 2.0 * dr])
        sv = np.linalg.svd(a_mat, compute_uv=False)
        if sv[-1] < _SINGULARITY_RATIO * sv[0]:
            raise InitializerFailure(
                "rank-deficient multilateration system",
                diagnostics={
                    "condition": float(sv[0] / max(sv[-1], 1e-300)),
                    "singular_values": sv.tolist(),
                },
            )
        sol, *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
        return sol[:3]

    # nb == 4: express position affinely in the unknown reference range,
    # then enforce consistency ||p - a0|| = d0
    m = lhs_p  # (3, 3)
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] < _SINGULARITY_RATIO * sv[0]:
        raise InitializerFailure(
            "coplanar anchors: four-anchor fix is singular",
            diagnostics={"condition": float(sv[0] / max(sv[-1], 1e-300))},
        )
    base = np.linalg.solve(m, rhs)
    slope = np.linalg.solve(m, -2.0 * dr)
    # ||base + slope*d0 - a0||^2 = d0^2
    diff = base - a0
    qa = float(slope @ slope) - 1.0
    qb = 2.0 * float(diff @ slope)
    qc = float(diff @ diff)
    roots = np.roots([qa, qb, qc]) if abs(qa) > 1e-14 else np.array([-qc / qb])
    real = [float(r.real) for r in roots if abs(r.imag) < 1e-6 * max(1.0, abs(r.real))]
    candidates = [r for r in real if r > 0]
    if not candidates:
        # noise pushed the discriminant negative; use the vertex of the parabola
        candidates = [max(-qb / (2.0 * qa), 1.0)] if abs(qa) > 1e-14 else [1.0]
    centroid = anchors.mean(axis=0)
    best = min(candidates, key=lambda d0: float(np.sum((base + slope * d0 - centroid) ** 2)))
    return base + slope * best


def orientation_init(fixes: dict, index_set: tuple, num_slots: int) -> np.ndarray:
    """Array axis from consecutive element fixes, averaged over slots.

    The consecutive differences telescope, so the average is the
    first-to-last fix displacement per slot; normalizing yields a unit
    axis whose sign follows ascending element index.
    """
    if len(index_set) < 2:
        raise ContractViolation("orientation needs at least two fixed elements")
    acc = np.zeros(3)
    scale = 1.0 / (num_slots * len(index_set))
    for k in range(1, num_slots + 1):
        for prev, cur in zip(index_set[:-1], index_set[1:]):
            acc += (fixes[(cur, k)] - fixes[(prev, k)]) * scale
    norm = np.linalg.norm(acc)
    if norm < 1e-12:
        raise InitializerFailure(
            "degenerate element fixes: zero-norm orientation average",
            diagnostics={"norm": float(norm)},
        )
    return acc / norm


def velocity_init(
    fixes: dict,
    index_set: tuple,
    model: StateModel,
    doppler_meas: np.ndarray,
) -> np.ndarray:
    """Receiver velocity from fix motion, or Doppler LS for a single slot.

    The single-slot branch solves unit_dir . v = anchor_vel . unit_dir -
    c (1 - doppler / carrier) over anchors and fixed elements; frequency
    offsets bias this fit, which is why it is reserved for the case with
    no slot-to-slot motion to difference.
    """
    plan = model.plan
    nk = plan.num_slots
    if nk >= 2:
        offs = plan.slot_offsets()
        acc = np.zeros(3)
        count = 0
        for k in range(2, nk + 1):
            dt = offs[k - 1] - offs[k - 2]
            for u in index_set:
                acc += (fixes[(u, k)] - fixes[(u, k - 1)]) / dt
                count += 1
        return acc / count

    rows = []
    rhs = []
    fc = model.carrier_hz
    for bi in range(model.anchor_pos.shape[0]):
        a_pos = model.anchor_pos[bi, 0]
        a_vel = model.anchor_vel[bi, 0]
        for u in index_set:
            p = fixes[(u, 1)]
            sep = p - a_pos
            dist = np.linalg.norm(sep)
            if dist < 1e-9:
                continue
            unit = sep / dist
            fd = doppler_meas[bi, 0, u - 1]
            rows.append(unit)
            rhs.append(float(a_vel @ unit) - SPEED_OF_LIGHT * (1.0 - fd / fc))
    a_mat = np.asarray(rows)
    sv = np.linalg.svd(a_mat, compute_uv=False)
    if sv.size < 3 or sv[-1] < _SINGULARITY_RATIO * sv[0]:
        raise InitializerFailure(
            "Doppler velocity fit is singular; line-of-sight spread too small",
            diagnostics={"singular_values": sv.tolist()},
        )
    sol, *_ = np.linalg.lstsq(a_mat, np.asarray(rhs), rcond=None)
    return sol


def position_init(
    fixes: dict,
    index_set: tuple,
    velocity: np.ndarray,
    orientation: np.ndarray,
    model: StateModel,
) -> np.ndarray:
    """Reference-element position by undoing motion and array offsets."""
    plan = model.plan
    offs = plan.slot_offsets()
    elem_offs = model.array.element_offsets()
    acc = np.zeros(3)
    count = 0
    for k in range(1, plan.num_slots + 1):
        for u in index_set:
            acc += fixes[(u, k)] - offs[k - 1] * velocity - elem_offs[u - 1] * orientation
            count += 1
    return acc / count


def offset_init(
    meas: MeasurementSet,
    model: StateModel,
    position: np.ndarray,
    velocity: np.ndarray,
    orientation: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor mean residuals of delay and Doppler at the init state."""
    nb = model.anchor_pos.shape[0]
    tables = model.maps(position, velocity, orientation, np.zeros(nb), np.zeros(nb))
    clock = np.mean(meas.delay_meas - tables.delay, axis=(1, 2))
    freq = np.mean(meas.doppler_meas - tables.doppler, axis=(1, 2))
    return clock, freq


def _fallback_grid_init(
    meas: MeasurementSet, model: StateModel, cfg: InitializerConfig
) -> InitEstimate:
    """Coarse position-only fallback for fewer than four anchors.

    Grid-plus-refine over the reference element position against raw
    ranges at the reference element; velocity starts at zero and
    orientation at a fixed axis.  No accuracy claim: this exists so small
    test scenarios have something to hand the refiner.
    """
    ref = model.array.reference_index - 1
    ranges = SPEED_OF_LIGHT * meas.delay_meas[:, :, ref]  # (B, K)
    anchors = model.anchor_pos  # (B, K, 3)
    center = anchors.mean(axis=(0, 1))
    radius = max(float(np.max(np.linalg.norm(anchors - center, axis=-1))), 1.0)

    def cost(p):
        d = np.linalg.norm(anchors - p, axis=-1)
        return float(np.sum((ranges - d) ** 2))

    best = center.copy()
    span = radius
    npts = cfg.fallback_grid_points
    for _ in range(cfg.fallback_grid_levels):
        axes = [np.linspace(-span, span, npts) + best[i] for i in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        costs = [cost(p) for p in grid]
        best = grid[int(np.argmin(costs))]
        span = 2.0 * span / (npts - 1)
    orientation = np.array([1.0, 0.0, 0.0])
    clock, freq = offset_init(meas, model, best, np.zeros(3), orientation)
    return InitEstimate(
        position0=best,
        velocity=np.zeros(3),
        orientation=orientation,
        clock_offsets=np.clip(clock, -cfg.max_clock_offset, cfg.max_clock_offset),
        frequency_offsets=np.clip(freq, -cfg.max_frequency_offset, cfg.max_frequency_offset),
        element_fixes={},
        index_set=(),
    )


def initialize(
    meas: MeasurementSet,
    model: StateModel,
    index_set: tuple | None = None,
    cfg: InitializerConfig | None = None,
) -> InitEstimate:
    """Full geometric initialization from one measurement set."""
    cfg = cfg or InitializerConfig()
    nb, nk, nu = meas.delay_meas.shape
    if nb < 4:
        return _fallback_grid_init(meas, model, cfg)
    idx = tuple(index_set) if index_set else default_index_set(nu, cfg.index_count)
    if len(idx) < 2:
        raise ContractViolation("index set must contain at least two elements")
    if any(not 1 <= u <= nu for u in idx):
        raise ContractViolation(f"index set {idx} outside 1..{nu}")

    # Per-anchor clock biases survive the cross-anchor differencing and
    # distort the element fixes, so alternate between the geometric pass
    # and the offset estimate, feeding offset-corrected measurements back
    # in.  The true state is a fixed point: with exact measurements the
    # first pass already lands there.
    clock = np.zeros(nb)
    freq = np.zeros(nb)
    for _ in range(cfg.offset_rounds):
        delay_corr = meas.delay_meas - clock[:, None, None]
        doppler_corr = meas.doppler_meas - freq[:, None, None]
        fixes = {}
        for k in range(1, nk + 1):
            for u in idx:
                fixes[(u, k)] = tdoa_element_fix(
                    delay_corr[:, k - 1, u - 1], model.anchor_pos[:, k - 1, :]
                )
        orientation = orientation_init(fixes, idx, nk)
        velocity = velocity_init(fixes, idx, model, doppler_corr)
        position = position_init(fixes, idx, velocity, orientation, model)
        clock, freq = offset_init(meas, model, position, velocity, orientation)
    return InitEstimate(
        position0=position,
        velocity=velocity,
        orientation=orientation,
        clock_offsets=np.clip(clock, -cfg.max_clock_offset, cfg.max_clock_offset),
        frequency_offsets=np.clip(freq, -cfg.max_frequency_offset, cfg.max_frequency_offset),
        element_fixes=fixes,
        index_set=idx,
    )
