"""Maximum-likelihood refinement of the full motion state.

Block-coordinate descent over four parameter groups: receiver position,
velocity, the per-anchor clock/frequency offsets (updated jointly), and
the array orientation.  The first three groups use backtracking line
searches in Euclidean space; orientation lives on the unit sphere and is
updated by projected gradient steps followed by a retraction, so the
iterate never leaves the sphere.

The objective is the weighted least-squares cost of the delay and
Doppler residuals, which is the negative log likelihood for Gaussian
measurement noise with known standard deviations.  The noise levels are
taken from the measurement set (known-weights ML); they are never
re-estimated during refinement.
"""

from dataclasses import dataclass, replace

import numpy as np

from .channel import StateModel
from .errors import ContractViolation, EstimatorFailure
from .fisher import channel_map_gradients
from .initializer import InitEstimate
from .measurement import MeasurementSet

__all__ = [
    "EstimateState",
    "SolverConfig",
    "Objective",
    "cost",
    "block_gradient",
    "riemannian_project",
    "riemannian_retract",
    "riemannian_step",
    "refine",
    "refine_multistart",
    "BLOCKS",
]

BLOCKS = ("position", "velocity", "offsets", "orientation")

_UNIT_NORM_TOL = 1e-10


@dataclass(frozen=True)
class EstimateState:
    """A refined motion-state estimate plus solver bookkeeping.

    ``stop_reason`` is one of ``"cost_tol"`` (relative cost decrease
    stayed below tolerance), ``"step_tol"`` (every block's line search
    underflowed), or ``"max_iters"``.
    """

    position0: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray
    clock_offsets: np.ndarray
    frequency_offsets: np.ndarray
    cost: float
    iteration: int
    converged: bool
    stop_reason: str

    def __post_init__(self):
        for name in ("position0", "velocity", "orientation"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (3,):
                raise ContractViolation(f"{name} must be a 3-vector, got {arr.shape}")
            object.__setattr__(self, name, arr)
        norm = float(np.linalg.norm(self.orientation))
        if abs(norm - 1.0) > _UNIT_NORM_TOL:
            raise ContractViolation(f"orientation must be unit norm, got {norm!r}")
        for name in ("clock_offsets", "frequency_offsets"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ContractViolation(f"{name} must be a 1-d array")
            object.__setattr__(self, name, arr)
        if self.clock_offsets.shape != self.frequency_offsets.shape:
            raise ContractViolation("offset arrays must have matching length")
        if self.stop_reason not in ("cost_tol", "step_tol", "max_iters"):
            raise ContractViolation(f"unknown stop_reason {self.stop_reason!r}")


@dataclass(frozen=True)
class SolverConfig:
    """Line-search and stopping parameters for :func:`refine`.

    Per-block initial steps carry the block's own units (meters, meters
    per second, seconds, hertz, and a dimensionless tangent magnitude
    for orientation).  The offsets block searches along a direction
    scaled by the inverse of its diagonal Hessian, so its step parameter
    is a dimensionless multiplier; ``clock_step`` and ``frequency_step``
    bound the first trial move per offset family.  A line search
    underflows once its trial step drops below ``step_tolerance`` times
    the block's configured initial step.
    """

    max_outer_iters: int = 500
    cost_tolerance: float = 1e-10
    cost_tolerance_streak: int = 3
    step_tolerance: float = 1e-12
    position_step: float = 1.0
    velocity_step: float = 0.5
    clock_step: float = 1e-7
    frequency_step: float = 10.0
    orientation_step: float = 0.05
    backtrack: float = 0.5
    armijo: float = 1e-4
    block_order: tuple = BLOCKS
    profile_offsets: bool = True
    restarts: int = 0

    def __post_init__(self):
        positive = (
            "cost_tolerance",
            "step_tolerance",
            "position_step",
            "velocity_step",
            "clock_step",
            "frequency_step",
            "orientation_step",
        )
        for name in positive:
            if not float(getattr(self, name)) > 0.0:
                raise ContractViolation(f"{name} must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ContractViolation("backtrack factor must lie in (0, 1)")
        if not 0.0 < self.armijo < 1.0:
            raise ContractViolation("armijo constant must lie in (0, 1)")
        if self.max_outer_iters < 0:
            raise ContractViolation("max_outer_iters must be non-negative")
        if self.cost_tolerance_streak < 1:
            raise ContractViolation("cost_tolerance_streak must be at least 1")
        if sorted(self.block_order) != sorted(BLOCKS):
            raise ContractViolation(
                f"block_order must be a permutation of {BLOCKS}, got {self.block_order}"
            )


class Objective:
    """Weighted least-squares cost of delay/Doppler residuals.

    Holds the known context (anchor tracks, array, slot plan, carrier)
    and the measurements; candidate states are passed per call.  Any
    candidate whose channel maps come out non-finite (an element sitting
    on top of an anchor, for instance) is priced at ``+inf`` so line
    searches reject it.
    """

    def __init__(self, meas: MeasurementSet, model: StateModel):
        self.model = model
        self.delay_meas = meas.delay_meas
        self.doppler_meas = meas.doppler_meas
        self.inv_var_tau = 1.0 / meas.sigma_tau**2
        self.inv_var_dop = 1.0 / meas.sigma_doppler**2
        self.num_anchors = meas.delay_meas.shape[0]
        # triples per anchor; the offsets sub-Hessian is this count times
        # the corresponding inverse variance
        self.triples_per_anchor = meas.delay_meas.shape[1] * meas.delay_meas.shape[2]

    def residuals(self, position, velocity, orientation, clock, freq):
        """Model-minus-measurement residual tables, shape (B, K, U) each."""
        with np.errstate(all="ignore"):
            tables = self.model.maps(position, velocity, orientation, clock, freq)
        return tables.delay - self.delay_meas, tables.doppler - self.doppler_meas

    def cost(self, position, velocity, orientation, clock, freq) -> float:
        r_tau, r_dop = self.residuals(position, velocity, orientation, clock, freq)
        value = 0.5 * (
            self.inv_var_tau * float(np.sum(r_tau * r_tau))
            + self.inv_var_dop * float(np.sum(r_dop * r_dop))
        )
        if not np.isfinite(value):
            return float("inf")
        return value

    def gradient(self, block: str, position, velocity, orientation, clock, freq):
        """Analytic gradient of the cost with respect to one block."""
        grad, _ = self.gradient_and_curvature(
            block, position, velocity, orientation, clock, freq
        )
        return grad

    def gradient_and_curvature(self, block: str, position, velocity, orientation,
                               clock, freq):
        """Gradient plus the Gauss-Newton normal matrix for one block.

        For the motion blocks the second return value is the 3x3 matrix
        ``sum_i w_i J_i J_i^T`` over all weighted residual rows, the
        curvature model a least-squares line search wants.  For the
        offsets block the cost is exactly quadratic and the matrix is
        the exact (diagonal) Hessian.
        """
        if block not in BLOCKS:
            raise ContractViolation(f"unknown block {block!r}")
        r_tau, r_dop = self.residuals(position, velocity, orientation, clock, freq)
        w_tau = self.inv_var_tau * r_tau
        w_dop = self.inv_var_dop * r_dop
        if block == "offsets":
            grad = np.concatenate([w_tau.sum(axis=(1, 2)), w_dop.sum(axis=(1, 2))])
            return grad, np.diag(self.offsets_hessian_diag())
        geometry = self.model.geometry(position, velocity, orientation)
        grads = channel_map_gradients(
            geometry,
            self.model.carrier_hz,
            self.model.wavelength,
            self.model.pathloss_exponent,
        )
        sl = {"position": slice(0, 3), "velocity": slice(3, 6), "orientation": slice(6, 9)}
        j_tau = grads.delay[..., sl[block]]
        j_dop = grads.doppler[..., sl[block]]
        grad = np.einsum("bku,bkui->i", w_tau, j_tau) + np.einsum(
            "bku,bkui->i", w_dop, j_dop
        )
        normal = self.inv_var_tau * np.einsum("bkui,bkuj->ij", j_tau, j_tau)
        normal += self.inv_var_dop * np.einsum("bkui,bkuj->ij", j_dop, j_dop)
        return grad, normal

    def offsets_hessian_diag(self):
        """Diagonal of the (exact) Hessian over [clock offsets, frequency offsets]."""
        n = self.triples_per_anchor
        return np.concatenate(
            [
                np.full(self.num_anchors, n * self.inv_var_tau),
                np.full(self.num_anchors, n * self.inv_var_dop),
            ]
        )

    def optimal_offsets(self, position, velocity, orientation):
        """Closed-form offsets minimizing the cost at fixed motion parameters.

        The offsets enter the maps additively, one per anchor and
        family, so the minimizer is the per-anchor mean of the
        measurement-minus-base residuals.
        """
        r_tau, r_dop = self.residuals(
            position, velocity, orientation,
            np.zeros(self.num_anchors), np.zeros(self.num_anchors),
        )
        return -r_tau.mean(axis=(1, 2)), -r_dop.mean(axis=(1, 2))

    def profiled_cost(self, position, velocity, orientation) -> float:
        """Joint cost with the offsets concentrated out."""
        r_tau, r_dop = self.residuals(
            position, velocity, orientation,
            np.zeros(self.num_anchors), np.zeros(self.num_anchors),
        )
        r_tau = r_tau - r_tau.mean(axis=(1, 2), keepdims=True)
        r_dop = r_dop - r_dop.mean(axis=(1, 2), keepdims=True)
        value = 0.5 * (
            self.inv_var_tau * float(np.sum(r_tau * r_tau))
            + self.inv_var_dop * float(np.sum(r_dop * r_dop))
        )
        if not np.isfinite(value):
            return float("inf")
        return value

    def profiled_gradient_and_curvature(self, block: str, position, velocity,
                                        orientation):
        """Gradient and Gauss-Newton matrix of the concentrated cost.

        Both the residuals and the Jacobian rows are centered per anchor
        (per measurement family), which is exactly the chain rule
        through the closed-form offset minimizers.
        """
        if block not in ("position", "velocity", "orientation"):
            raise ContractViolation(f"no profiled gradient for block {block!r}")
        r_tau, r_dop = self.residuals(
            position, velocity, orientation,
            np.zeros(self.num_anchors), np.zeros(self.num_anchors),
        )
        r_tau = r_tau - r_tau.mean(axis=(1, 2), keepdims=True)
        r_dop = r_dop - r_dop.mean(axis=(1, 2), keepdims=True)
        w_tau = self.inv_var_tau * r_tau
        w_dop = self.inv_var_dop * r_dop
        geometry = self.model.geometry(position, velocity, orientation)
        grads = channel_map_gradients(
            geometry,
            self.model.carrier_hz,
            self.model.wavelength,
            self.model.pathloss_exponent,
        )
        sl = {"position": slice(0, 3), "velocity": slice(3, 6), "orientation": slice(6, 9)}
        j_tau = grads.delay[..., sl[block]]
        j_dop = grads.doppler[..., sl[block]]
        j_tau = j_tau - j_tau.mean(axis=(1, 2), keepdims=True)
        j_dop = j_dop - j_dop.mean(axis=(1, 2), keepdims=True)
        grad = np.einsum("bku,bkui->i", w_tau, j_tau) + np.einsum(
            "bku,bkui->i", w_dop, j_dop
        )
        normal = self.inv_var_tau * np.einsum("bkui,bkuj->ij", j_tau, j_tau)
        normal += self.inv_var_dop * np.einsum("bkui,bkuj->ij", j_dop, j_dop)
        return grad, normal


def cost(state, meas: MeasurementSet, model: StateModel) -> float:
    """Negative log likelihood (up to a constant) of ``state`` given ``meas``."""
    return Objective(meas, model).cost(
        state.position0,
        state.velocity,
        state.orientation,
        state.clock_offsets,
        state.frequency_offsets,
    )


def block_gradient(state, meas: MeasurementSet, model: StateModel, block: str):
    """Gradient of the cost with respect to one parameter block.

    Blocks are ``position`` / ``velocity`` / ``orientation`` (3-vectors)
    and ``offsets`` (length 2 B, clock offsets first).
    """
    return Objective(meas, model).gradient(
        block,
        state.position0,
        state.velocity,
        state.orientation,
        state.clock_offsets,
        state.frequency_offsets,
    )


def riemannian_project(point, vector):
    """Project ``vector`` onto the tangent space of the sphere at ``point``."""
    point = np.asarray(point, dtype=float)
    vector = np.asarray(vector, dtype=float)
    return vector - float(point @ vector) * point


def riemannian_retract(point, tangent):
    """Map a tangent step back onto the unit sphere.

    Uses the projective retraction (x + u) / sqrt(1 + ||u||^2), exact to
    floating point for unit ``point`` and tangent ``u``; the result is
    renormalized to keep accumulated rounding off the iterate.
    """
    point = np.asarray(point, dtype=float)
    tangent = np.asarray(tangent, dtype=float)
    out = (point + tangent) / np.sqrt(1.0 + float(tangent @ tangent))
    return out / np.linalg.norm(out)


def _armijo(eval_cost, base_cost, slope, step, floor, cfg: SolverConfig):
    """Backtracking line search.

    Returns ``(step, cost)`` for the first trial step satisfying the
    Armijo decrease condition, or ``(None, base_cost)`` if the step
    underflows ``floor`` first.  ``slope`` is the directional derivative
    along the search direction and must be negative.
    """
    t = step
    while t >= floor:
        trial = eval_cost(t)
        if trial <= base_cost + cfg.armijo * t * slope:
            return t, trial
        t *= cfg.backtrack
    return None, base_cost


def riemannian_step(state, gradient, meas: MeasurementSet, model: StateModel,
                    cfg: SolverConfig = None, step: float = None):
    """One Armijo-backtracked projected-gradient update of the orientation.

    Returns the new orientation (the input orientation, unchanged, when
    the projected gradient vanishes or the line search underflows).
    """
    cfg = cfg or SolverConfig()
    step = cfg.orientation_step if step is None else float(step)
    obj = Objective(meas, model)
    args = (state.position0, state.velocity, state.clock_offsets, state.frequency_offsets)
    orientation = np.asarray(state.orientation, dtype=float)

    tangent = riemannian_project(orientation, np.asarray(gradient, dtype=float))
    norm = float(np.linalg.norm(tangent))
    if norm == 0.0:
        return orientation
    direction = -tangent / norm

    def eval_cost(t):
        cand = riemannian_retract(orientation, t * direction)
        return obj.cost(args[0], args[1], cand, args[2], args[3])

    base = obj.cost(args[0], args[1], orientation, args[2], args[3])
    floor = cfg.step_tolerance * cfg.orientation_step
    accepted, _ = _armijo(eval_cost, base, -norm, step, floor, cfg)
    if accepted is None:
        return orientation
    return riemannian_retract(orientation, accepted * direction)


def _newton_direction(gradient, normal):
    """Curvature-scaled descent direction, or None when unusable.

    Solves the (ridge-stabilized) normal equations of the block's
    Gauss-Newton model.  Curvature scaling matters here for rate, and
    for the offsets block it is mandatory for correctness: the raw
    offsets gradient mixes 1/sigma_tau^2 and 1/sigma_doppler^2 weights
    whose ratio is astronomical, so an unscaled direction would never
    move the frequency family.  Callers fall back to steepest descent
    when the solve fails or the result is not a descent direction.
    """
    n = gradient.size
    trace = float(np.trace(normal))
    ridge = 1e-12 * (trace / n if trace > 0.0 else 1.0)
    try:
        direction = np.linalg.solve(normal + ridge * np.eye(n), -gradient)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(direction)) or float(gradient @ direction) >= 0.0:
        return None
    return direction


def _tangent_newton_direction(orientation, tangent_gradient, normal):
    """Newton-model direction restricted to the sphere's tangent plane."""
    proj = np.eye(3) - np.outer(orientation, orientation)
    stiffener = max(float(np.trace(normal)), 1.0)
    mat = proj @ normal @ proj + stiffener * np.outer(orientation, orientation)
    try:
        direction = np.linalg.solve(mat, -tangent_gradient)
    except np.linalg.LinAlgError:
        return None
    direction = riemannian_project(orientation, direction)
    if not np.all(np.isfinite(direction)) or float(tangent_gradient @ direction) >= 0.0:
        return None
    return direction


def refine(init: InitEstimate, meas: MeasurementSet, model: StateModel,
           cfg: SolverConfig = None) -> EstimateState:
    """Block-coordinate descent from an initializer hand-off.

    Cycles through ``cfg.block_order`` (default position, velocity,
    offsets, orientation), running one backtracking line search per
    block per outer iteration.  Stops when the relative cost decrease
    stays below ``cost_tolerance`` for ``cost_tolerance_streak``
    consecutive outer iterations, when every block's search underflows,
    or at ``max_outer_iters``.

    With ``cfg.profile_offsets`` (the default) the motion blocks search
    the concentrated cost, with the per-anchor offsets held at their
    closed-form optimum for every trial point, and the offsets block
    simply re-reads that optimum.  The alternative (literal alternation
    between motion blocks and an offsets line search) is retained behind
    the flag, but it inherits the classic coordinate-descent failure on
    this model: a clock offset and a radial position shift move the
    delay table in nearly the same way, so the alternation crawls along
    the near-collinear valley and can exhaust the iteration budget
    without converging.  Concentrating the offsets removes the valley
    while leaving the minimizer unchanged.
    """
    cfg = cfg or SolverConfig()
    obj = Objective(meas, model)

    position = np.array(init.position0, dtype=float)
    velocity = np.array(init.velocity, dtype=float)
    orientation = np.array(init.orientation, dtype=float)
    orientation /= np.linalg.norm(orientation)
    clock = np.array(init.clock_offsets, dtype=float)
    freq = np.array(init.frequency_offsets, dtype=float)

    current = obj.cost(position, velocity, orientation, clock, freq)
    if not np.isfinite(current):
        raise EstimatorFailure(
            "initial state has non-finite cost",
            diagnostics={"position0": position, "velocity": velocity},
        )

    def snapshot(iteration, converged, reason):
        return EstimateState(
            position0=position.copy(),
            velocity=velocity.copy(),
            orientation=orientation.copy(),
            clock_offsets=clock.copy(),
            frequency_offsets=freq.copy(),
            cost=current,
            iteration=iteration,
            converged=converged,
            stop_reason=reason,
        )

    if cfg.max_outer_iters == 0:
        return snapshot(0, False, "max_iters")

    if cfg.profile_offsets:
        clock, freq = obj.optimal_offsets(position, velocity, orientation)
        current = obj.profiled_cost(position, velocity, orientation)

    # dimensionless line-search memory per block; a full curvature-model
    # step is t = 1, and memory only shrinks the first trial after a
    # backtrack-heavy iteration
    steps = {name: 1.0 for name in BLOCKS}
    move_caps = {
        "position": cfg.position_step,
        "velocity": cfg.velocity_step,
        "orientation": cfg.orientation_step,
    }
    streak = 0
    iteration = 0
    reason = "max_iters"
    converged = False

    for iteration in range(1, cfg.max_outer_iters + 1):
        previous = current
        moved = False
        for block in cfg.block_order:
            if cfg.profile_offsets and block == "offsets":
                # held at the closed-form optimum by the motion updates
                clock, freq = obj.optimal_offsets(position, velocity, orientation)
                continue
            if cfg.profile_offsets:
                gradient, normal = obj.profiled_gradient_and_curvature(
                    block, position, velocity, orientation
                )
            else:
                gradient, normal = obj.gradient_and_curvature(
                    block, position, velocity, orientation, clock, freq
                )

            if block == "orientation":
                gradient = riemannian_project(orientation, gradient)
            norm = float(np.linalg.norm(gradient))
            if norm == 0.0:
                continue
            if block == "orientation":
                direction = _tangent_newton_direction(orientation, gradient, normal)
            else:
                direction = _newton_direction(gradient, normal)
            if direction is None:
                direction = -gradient / norm
            slope = float(gradient @ direction)

            def motion_cost(p, v, s):
                if cfg.profile_offsets:
                    return obj.profiled_cost(p, v, s)
                return obj.cost(p, v, s, clock, freq)

            # cap the first trial so one block move never exceeds its
            # configured scale (per offset family for the joint block)
            if block == "offsets":
                nb = clock.size
                cap = steps[block]
                max_clock = float(np.max(np.abs(direction[:nb])))
                max_freq = float(np.max(np.abs(direction[nb:])))
                if max_clock > 0.0:
                    cap = min(cap, cfg.clock_step / max_clock)
                if max_freq > 0.0:
                    cap = min(cap, cfg.frequency_step / max_freq)

                def eval_cost(t, d=direction, n=nb):
                    return obj.cost(
                        position, velocity, orientation, clock + t * d[:n], freq + t * d[n:]
                    )

            elif block == "orientation":
                cap = min(steps[block], move_caps[block] / float(np.linalg.norm(direction)))

                def eval_cost(t, d=direction, x=orientation):
                    return motion_cost(position, velocity, riemannian_retract(x, t * d))

            else:
                cap = min(steps[block], move_caps[block] / float(np.linalg.norm(direction)))
                base = position if block == "position" else velocity

                def eval_cost(t, d=direction, x=base, which=block):
                    if which == "position":
                        return motion_cost(x + t * d, velocity, orientation)
                    return motion_cost(position, x + t * d, orientation)

            accepted, new_cost = _armijo(
                eval_cost, current, slope, cap, cfg.step_tolerance, cfg
            )
            if accepted is None:
                continue
            if block == "position":
                position = position + accepted * direction
            elif block == "velocity":
                velocity = velocity + accepted * direction
            elif block == "offsets":
                clock = clock + accepted * direction[:nb]
                freq = freq + accepted * direction[nb:]
            else:
                orientation = riemannian_retract(orientation, accepted * direction)
            if cfg.profile_offsets:
                clock, freq = obj.optimal_offsets(position, velocity, orientation)

            if new_cost > current:
                raise EstimatorFailure(
                    "line search accepted an ascent step",
                    diagnostics={"block": block, "cost": new_cost, "previous": current},
                )
            current = new_cost
            steps[block] = min(1.0, 2.0 * accepted)
            moved = True

        drop = (previous - current) / max(previous, np.finfo(float).tiny)
        streak = streak + 1 if drop < cfg.cost_tolerance else 0
        if streak >= cfg.cost_tolerance_streak:
            reason, converged = "cost_tol", True
            break
        if not moved:
            reason, converged = "step_tol", True
            break

    return snapshot(iteration, converged, reason)


def refine_multistart(init: InitEstimate, meas: MeasurementSet, model: StateModel,
                      cfg: SolverConfig = None, seed: int = 0,
                      position_jitter: float = 0.5, velocity_jitter: float = 0.25,
                      orientation_jitter: float = 0.02) -> EstimateState:
    """Refine from the hand-off plus ``cfg.restarts`` jittered copies.

    Returns the lowest-cost result.  With the default ``restarts=0``
    this is exactly :func:`refine`.
    """
    cfg = cfg or SolverConfig()
    best = refine(init, meas, model, cfg)
    if cfg.restarts <= 0:
        return best
    rng = np.random.default_rng(seed)
    for _ in range(cfg.restarts):
        orientation = init.orientation + orientation_jitter * rng.standard_normal(3)
        orientation /= np.linalg.norm(orientation)
        jittered = replace(
            init,
            position0=init.position0 + position_jitter * rng.standard_normal(3),
            velocity=init.velocity + velocity_jitter * rng.standard_normal(3),
            orientation=orientation,
        )
        candidate = refine(jittered, meas, model, cfg)
        if candidate.cost < best.cost:
            best = candidate
    return best
