"""Information bounds for the nine-dimensional motion state.

The chain runs: per-triple information entries over (delay, Doppler, gain)
-> per-anchor channel-space matrices with clock/frequency offset couplings
-> transform into motion-state coordinates -> Schur elimination of the
nuisance parameters -> constrained error bounds on the unit-norm
orientation manifold.

Layout conventions used throughout:

* motion state: ``[position(3), velocity(3), orientation(3)]`` (9 rows);
* triples are flattened row-major over ``(slot, element)``, ``M = K * U``;
* per-anchor channel vector in ``joint`` mode:
  ``[delays(M), dopplers(M), gains(M), clock_offset, frequency_offset]``.

``delay_only`` drops the Doppler group and the frequency offset;
``doppler_only`` drops the delay group and the clock offset (a clock bias
is unobservable without delay measurements).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import SPEED_OF_LIGHT, Channel
from .errors import ContractViolation
from .scenario import GeometryTable, ScenarioConfig
from .waveform import Waveform, WaveformStats

PINV_REL_THRESHOLD = 1e-12
RANK_REL_THRESHOLD = 1e-10

MODES = ("joint", "delay_only", "doppler_only")
# indices into the per-triple 3x3 block (delay, doppler, gain) kept per mode
_MODE_MEAS = {"joint": (0, 1, 2), "delay_only": (0, 2), "doppler_only": (1, 2)}
# offset parameters present per mode
_MODE_OFFSETS = {
    "joint": ("clock_offset", "frequency_offset"),
    "delay_only": ("clock_offset",),
    "doppler_only": ("frequency_offset",),
}
NUISANCE_ALL = frozenset({"clock_offset", "frequency_offset", "gain"})


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ContractViolation(f"unknown measurement mode {mode!r}; pick from {MODES}")


# ---------------------------------------------------------------------------
# Per-triple information entries


@dataclass(frozen=True)
class TripleEntries:
    """All pairwise information entries for one (anchor, slot, element).

    ``delay_delay`` splits into three printed terms whose relative size is
    worth inspecting: the received-carrier term is larger than the
    bandwidth term by orders of magnitude at typical settings.
    """

    delay_delay: float
    doppler_doppler: float
    gain_gain: float
    gain_delay: float
    delay_doppler: float
    gain_doppler: float  # identically zero
    delay_carrier_term: float
    delay_bandwidth_term: float
    delay_cross_term: float

    def block(self) -> np.ndarray:
        """Symmetric 3x3 block ordered (delay, doppler, gain)."""
        return np.array(
            [
                [self.delay_delay, self.delay_doppler, self.gain_delay],
                [self.delay_doppler, self.doppler_doppler, self.gain_doppler],
                [self.gain_delay, self.gain_doppler, self.gain_gain],
            ]
        )


def triple_blocks(channel: Channel) -> np.ndarray:
    """Per-triple 3x3 information blocks, shape (B, K, U, 3, 3).

    Block order is (delay, doppler, gain).  The Doppler entry optionally
    carries the symbol-energy factor behind the scenario's
    ``doppler_energy_scaling`` switch; the default matches the plain form.
    """
    st = channel.stats
    n0 = channel.noise_psd
    gain = channel.tables.gain
    fd = channel.tables.doppler
    energy = st.symbol_energy
    fc = channel.scenario.waveform.carrier_frequency

    common = 8.0 * np.pi**2 * gain**2 / n0
    f_tt = common * energy * (fd**2 + st.effective_bandwidth**2 + fd * st.baseband_carrier_correlation)
    f_ff = common * st.effective_duration**2
    if channel.scenario.noise.doppler_energy_scaling:
        f_ff = f_ff * energy
    snr = gain**2 * energy / n0
    f_bb = snr / (4.0 * np.pi**2 * gain**2)
    f_bt = -2.0 * np.abs(gain) * st.derivative_correlation / n0
    f_tf = common * fc * fd * st.temporal_centroid
    f_bf = np.zeros_like(gain)

    out = np.empty(gain.shape + (3, 3))
    out[..., 0, 0] = f_tt
    out[..., 1, 1] = f_ff
    out[..., 2, 2] = f_bb
    out[..., 0, 1] = out[..., 1, 0] = f_tf
    out[..., 0, 2] = out[..., 2, 0] = f_bt
    out[..., 1, 2] = out[..., 2, 1] = f_bf
    return out


def fim_entries(channel: Channel, b: int, u: int, k: int) -> TripleEntries:
    """Information entries for anchor ``b``, element ``u``, slot ``k`` (1-based)."""
    g = channel.geometry
    if not (1 <= b <= g.num_anchors and 1 <= u <= g.num_elements and 1 <= k <= g.num_slots):
        raise ContractViolation(f"triple ({b}, {u}, {k}) outside the scenario tables")
    st = channel.stats
    blk = triple_blocks(channel)[b - 1, k - 1, u - 1]
    gain = channel.tables.gain[b - 1, k - 1, u - 1]
    fd = channel.tables.doppler[b - 1, k - 1, u - 1]
    scale = 8.0 * np.pi**2 * gain**2 * st.symbol_energy / channel.noise_psd
    return TripleEntries(
        delay_delay=float(blk[0, 0]),
        doppler_doppler=float(blk[1, 1]),
        gain_gain=float(blk[2, 2]),
        gain_delay=float(blk[0, 2]),
        delay_doppler=float(blk[0, 1]),
        gain_doppler=0.0,
        delay_carrier_term=float(scale * fd**2),
        delay_bandwidth_term=float(scale * st.effective_bandwidth**2),
        delay_cross_term=float(scale * fd * st.baseband_carrier_correlation),
    )


# ---------------------------------------------------------------------------
# Channel-space FIM


@dataclass(frozen=True)
class ChannelFim:
    """Per-triple blocks plus offset couplings, block-diagonal over anchors."""

    blocks: np.ndarray  # (B, K, U, 3, 3)
    mode: str = "joint"

    def __post_init__(self):
        _check_mode(self.mode)

    @property
    def num_anchors(self) -> int:
        return self.blocks.shape[0]

    @property
    def triples_per_anchor(self) -> int:
        return self.blocks.shape[1] * self.blocks.shape[2]

    def anchor_dim(self) -> int:
        meas = _MODE_MEAS[self.mode]
        return len(meas) * self.triples_per_anchor + len(_MODE_OFFSETS[self.mode])

    def anchor_matrix(self, b: int) -> np.ndarray:
        """Dense channel-space FIM for anchor ``b`` (1-based).

        The offset rows and columns are sums of the matching delay or
        Doppler rows, so the matrix is an exact congruence of the
        block-diagonal per-triple core and stays positive semidefinite.
        """
        meas = _MODE_MEAS[self.mode]
        offsets = _MODE_OFFSETS[self.mode]
        m = self.triples_per_anchor
        g = len(meas)
        flat = self.blocks[b - 1].reshape(m, 3, 3)

        dim = g * m + len(offsets)
        out = np.zeros((dim, dim))
        for i, mi in enumerate(meas):
            for j, mj in enumerate(meas):
                idx = np.arange(m)
                out[i * m + idx, j * m + idx] = flat[:, mi, mj]
        for oi, name in enumerate(offsets):
            # clock offset couples through delay rows, frequency through Doppler
            src = 0 if name == "clock_offset" else 1
            row = g * m + oi
            for j, mj in enumerate(meas):
                vals = flat[:, src, mj]
                out[row, j * m : (j + 1) * m] = vals
                out[j * m : (j + 1) * m, row] = vals
            for oj, other in enumerate(offsets):
                src2 = 0 if other == "clock_offset" else 1
                out[row, g * m + oj] = flat[:, src, src2].sum()
        return out


def assemble_channel_fim(channel: Channel, mode: str = "joint") -> ChannelFim:
    _check_mode(mode)
    return ChannelFim(blocks=triple_blocks(channel), mode=mode)


# ---------------------------------------------------------------------------
# Gradients of the channel maps and the transform Jacobian


@dataclass(frozen=True)
class MapGradients:
    """Motion-state gradients of the three channel maps.

    Arrays have shape (B, K, U, 9); the last axis orders
    [position(3), velocity(3), orientation(3)].
    """

    delay: np.ndarray
    doppler: np.ndarray
    gain: np.ndarray


def channel_map_gradients(
    geometry: GeometryTable,
    carrier_hz: float,
    wavelength: float,
    pathloss_exponent: float = 1.0,
    orientation_offset: str = "model",
) -> MapGradients:
    """Analytic gradients of delay, Doppler, and gain maps.

    ``orientation_offset`` selects the element-offset factor in the
    orientation columns: ``"model"`` uses the signed offset from the
    reference element (consistent with the geometry the maps evaluate,
    and the default); ``"legacy_edge"`` counts from the first element in
    half-wavelength units, kept only for comparison studies.
    """
    if orientation_offset not in ("model", "legacy_edge"):
        raise ContractViolation(
            f"orientation_offset must be 'model' or 'legacy_edge', got {orientation_offset!r}"
        )
    fc = carrier_hz
    c = SPEED_OF_LIGHT
    unit = geometry.unit_dir  # (B,K,U,3)
    dist = geometry.distance[..., None]  # (B,K,U,1)
    rel = geometry.rel_velocity  # (B,K,U,3)
    t_k = geometry.plan.slot_offsets()[None, :, None, None]  # (1,K,1,1)
    if orientation_offset == "model":
        e_u = geometry.array.element_offsets()[None, None, :, None]
    else:
        lam_half = wavelength / 2.0
        e_u = (np.arange(geometry.num_elements) * lam_half)[None, None, :, None]

    # delay map: distance / c (+ clock offset, constant in the motion state)
    d_tau_p = unit / c
    d_tau_v = t_k * d_tau_p
    d_tau_s = e_u * d_tau_p

    # Doppler map: fc * (1 - rel.unit/c) + offset.  The radial projector
    # (I - unit unit^T) appears wherever the unit vector moves with the state.
    radial = np.sum(rel * unit, axis=-1, keepdims=True)
    proj_rel = (rel - unit * radial) / dist  # (I - uu^T) rel / d
    d_fd_p = -(fc / c) * proj_rel
    d_fd_v = (fc / c) * (unit - t_k * proj_rel)
    d_fd_s = -(fc / c) * e_u * proj_rel

    # gain map: wavelength * d^-alpha / (4 pi)
    alpha = pathloss_exponent
    gain = wavelength * np.asarray(geometry.distance) ** (-alpha) / (4.0 * np.pi)
    d_beta_common = -alpha * (gain[..., None] / dist) * unit
    d_beta_p = d_beta_common
    d_beta_v = t_k * d_beta_common
    d_beta_s = e_u * d_beta_common

    return MapGradients(
        delay=np.concatenate([d_tau_p, d_tau_v, d_tau_s], axis=-1),
        doppler=np.concatenate([d_fd_p, d_fd_v, d_fd_s], axis=-1),
        gain=np.concatenate([d_beta_p, d_beta_v, d_beta_s], axis=-1),
    )


@dataclass(frozen=True)
class TransformJacobian:
    """Derivatives of the channel vector with respect to the full state.

    The full state stacks ``[motion(9), clock offsets(B), frequency
    offsets(B), gains(B*M)]``.  ``full_matrix`` lays rows out in that
    order against the concatenated per-anchor channel vectors.
    """

    gradients: MapGradients
    mode: str = "joint"

    def __post_init__(self):
        _check_mode(self.mode)

    @property
    def num_anchors(self) -> int:
        return self.gradients.delay.shape[0]

    @property
    def triples_per_anchor(self) -> int:
        return self.gradients.delay.shape[1] * self.gradients.delay.shape[2]

    def state_dim(self) -> int:
        b, m = self.num_anchors, self.triples_per_anchor
        return 9 + 2 * b + b * m

    def channel_dim(self) -> int:
        meas = _MODE_MEAS[self.mode]
        return self.num_anchors * (len(meas) * self.triples_per_anchor + len(_MODE_OFFSETS[self.mode]))

    def state_labels(self) -> list[str]:
        labels = [
            "pos_x", "pos_y", "pos_z",
            "vel_x", "vel_y", "vel_z",
            "ori_x", "ori_y", "ori_z",
        ]
        b, m = self.num_anchors, self.triples_per_anchor
        labels += [f"clock_offset[{i + 1}]" for i in range(b)]
        labels += [f"frequency_offset[{i + 1}]" for i in range(b)]
        labels += [f"gain[{i + 1},{j + 1}]" for i in range(b) for j in range(m)]
        return labels

    def channel_labels(self) -> list[str]:
        meas = _MODE_MEAS[self.mode]
        names = {0: "delay", 1: "doppler", 2: "gain"}
        labels: list[str] = []
        for bi in range(self.num_anchors):
            for mi in meas:
                labels += [f"{names[mi]}[{bi + 1},{j + 1}]" for j in range(self.triples_per_anchor)]
            labels += [f"{o}[{bi + 1}]" for o in _MODE_OFFSETS[self.mode]]
        return labels

    def anchor_block(self, b: int) -> np.ndarray:
        """Jacobian block for anchor ``b`` (1-based).

        Rows: [motion(9), this anchor's clock offset, frequency offset,
        gains(M)].  Columns follow the per-anchor channel layout.
        """
        meas = _MODE_MEAS[self.mode]
        offsets = _MODE_OFFSETS[self.mode]
        m = self.triples_per_anchor
        g = len(meas)
        rows = 9 + 2 + m
        out = np.zeros((rows, g * m + len(offsets)))
        grads = {
            0: self.gradients.delay[b - 1].reshape(m, 9),
            1: self.gradients.doppler[b - 1].reshape(m, 9),
            2: self.gradients.gain[b - 1].reshape(m, 9),
        }
        for j, mj in enumerate(meas):
            out[0:9, j * m : (j + 1) * m] = grads[mj].T
            if mj == 0:
                out[9, j * m : (j + 1) * m] = 1.0  # d delay / d clock offset
            if mj == 1:
                out[10, j * m : (j + 1) * m] = 1.0  # d doppler / d frequency offset
            if mj == 2:
                out[11 : 11 + m, j * m : (j + 1) * m] = np.eye(m)
        for oi, name in enumerate(offsets):
            out[9 if name == "clock_offset" else 10, g * m + oi] = 1.0
        return out

    def full_matrix(self) -> np.ndarray:
        """Dense (state_dim x channel_dim) Jacobian across all anchors."""
        bcount, m = self.num_anchors, self.triples_per_anchor
        out = np.zeros((self.state_dim(), self.channel_dim()))
        width = self.anchor_dim_cols()
        for bi in range(bcount):
            blk = self.anchor_block(bi + 1)
            cols = slice(bi * width, (bi + 1) * width)
            out[0:9, cols] = blk[0:9]
            out[9 + bi, cols] = blk[9]
            out[9 + bcount + bi, cols] = blk[10]
            gain_rows = slice(9 + 2 * bcount + bi * m, 9 + 2 * bcount + (bi + 1) * m)
            out[gain_rows, cols] = blk[11:]
        return out

    def anchor_dim_cols(self) -> int:
        meas = _MODE_MEAS[self.mode]
        return len(meas) * self.triples_per_anchor + len(_MODE_OFFSETS[self.mode])

    def audit(self) -> dict:
        """Structural validation of the full Jacobian.

        Checks that every channel symbol carries exactly one unit
        derivative from its own nuisance parameter (offsets via their sum
        rows, gains via the identity block) and that no column is empty.
        Returns counters for reporting; raises on violation.
        """
        full = self.full_matrix()
        labels_s = self.state_labels()
        labels_c = self.channel_labels()
        if full.shape != (len(labels_s), len(labels_c)):
            raise ContractViolation("jacobian shape disagrees with its labels")
        bcount, m = self.num_anchors, self.triples_per_anchor
        checked = 0
        for j, lab in enumerate(labels_c):
            col = full[:, j]
            if not np.any(col != 0.0):
                raise ContractViolation(f"channel symbol {lab} has an all-zero derivative column")
            kind = lab.split("[")[0]
            own_rows = np.zeros(len(labels_s), dtype=bool)
            if kind in ("delay", "clock_offset"):
                anchor = int(lab.split("[")[1].split(",")[0].rstrip("]"))
                own_rows[9 + anchor - 1] = True
            elif kind in ("doppler", "frequency_offset"):
                anchor = int(lab.split("[")[1].split(",")[0].rstrip("]"))
                own_rows[9 + bcount + anchor - 1] = True
            elif kind == "gain":
                anchor, trip = lab.rstrip("]").split("[")[1].split(",")
                own_rows[9 + 2 * bcount + (int(anchor) - 1) * m + int(trip) - 1] = True
            hits = np.nonzero(col[9:] == 1.0)[0] + 9
            if hits.size != 1 or not own_rows[hits[0]]:
                raise ContractViolation(
                    f"channel symbol {lab} should carry exactly one unit nuisance derivative"
                )
            checked += 1
        return {"columns_checked": checked, "state_dim": len(labels_s), "channel_dim": len(labels_c)}


def jacobian(
    geometry: GeometryTable,
    waveform: Waveform,
    pathloss_exponent: float = 1.0,
    mode: str = "joint",
    orientation_offset: str = "model",
) -> TransformJacobian:
    grads = channel_map_gradients(
        geometry,
        waveform.carrier_frequency,
        waveform.wavelength,
        pathloss_exponent,
        orientation_offset,
    )
    return TransformJacobian(gradients=grads, mode=mode)


# ---------------------------------------------------------------------------
# Equivalent FIM for the motion block


def _equilibrated_pinv(mat: np.ndarray, rel_threshold: float = PINV_REL_THRESHOLD):
    """Pseudo-inverse after symmetric diagonal scaling.

    Mixed SI units put the diagonal across tens of orders of magnitude;
    scaling by 1/sqrt(diag) keeps the eigendecomposition honest.  Returns
    (pinv, rank).
    """
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return mat.copy(), 0
    d = np.sqrt(np.abs(np.diag(mat)))
    d[d == 0.0] = 1.0
    scaled = mat / d[:, None] / d[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (scaled + scaled.T))
    cutoff = rel_threshold * max(vals.max(), 0.0)
    inv_vals = np.where(vals > cutoff, 1.0 / np.where(vals > cutoff, vals, 1.0), 0.0)
    pinv_scaled = (vecs * inv_vals) @ vecs.T
    rank = int(np.count_nonzero(vals > cutoff))
    return pinv_scaled / d[:, None] / d[None, :], rank


@dataclass(frozen=True)
class EfimResult:
    """Motion-block equivalent FIM and per-anchor bookkeeping."""

    matrix: np.ndarray  # (9, 9)
    per_anchor: np.ndarray  # (B, 9, 9) additive contributions
    mode: str
    nuisance: frozenset
    offset_ranks: tuple  # per-anchor rank of the offset nuisance block


def _anchor_group_matrices(channel_fim: ChannelFim, jac: TransformJacobian, b: int):
    """Folded per-group derivative rows for anchor ``b`` (1-based).

    Returns (groups, blocks) where ``groups`` maps measurement index ->
    (11, M) folded derivative matrix over rows [motion(9), clock, freq]
    and ``blocks`` is the (M, 3, 3) per-triple core.  Offset rows carry
    the factor 2 coming from the channel vector listing each offset both
    inside every delay/Doppler entry and as its own symbol; a diagonal
    row scaling of the nuisance block drops out of the Schur complement,
    so the motion-block result is unaffected.
    """
    m = channel_fim.triples_per_anchor
    blocks = channel_fim.blocks[b - 1].reshape(m, 3, 3)
    groups = {}
    for mi in _MODE_MEAS[channel_fim.mode]:
        grad = {
            0: jac.gradients.delay,
            1: jac.gradients.doppler,
            2: jac.gradients.gain,
        }[mi][b - 1].reshape(m, 9)
        rows = np.zeros((11, m))
        rows[0:9] = grad.T
        if mi == 0:
            rows[9] = 2.0
        elif mi == 1:
            rows[10] = 2.0
        groups[mi] = rows
    return groups, blocks


def _anchor_terms(channel_fim: ChannelFim, jac: TransformJacobian, b: int):
    """K (11x11), gain coupling W (11, M), gain diagonal g (M,) for anchor b."""
    groups, blocks = _anchor_group_matrices(channel_fim, jac, b)
    meas = _MODE_MEAS[channel_fim.mode]
    k11 = np.zeros((11, 11))
    for mi in meas:
        for mj in meas:
            w = blocks[:, mi, mj]
            k11 += (groups[mi] * w) @ groups[mj].T
    k11 = 0.5 * (k11 + k11.T)
    gain_diag = blocks[:, 2, 2]
    coupling = np.zeros((11, blocks.shape[0]))
    for mi in meas:
        coupling += groups[mi] * blocks[:, mi, 2]
    return k11, coupling, gain_diag


def efim(
    channel_fim: ChannelFim,
    jac: TransformJacobian,
    nuisance: frozenset | set | tuple | None = None,
) -> EfimResult:
    """Equivalent FIM for the motion block after nuisance elimination.

    ``nuisance`` names the parameters treated as unknown, from
    {"clock_offset", "frequency_offset", "gain"}; ``None`` means all of
    them (restricted to what the mode observes).  Parameters not listed
    are treated as known and contribute their information directly.
    """
    if channel_fim.mode != jac.mode:
        raise ContractViolation(
            f"channel FIM mode {channel_fim.mode!r} and jacobian mode {jac.mode!r} disagree"
        )
    if nuisance is None:
        nuisance = NUISANCE_ALL
    nuisance = frozenset(nuisance)
    unknown = nuisance - NUISANCE_ALL
    if unknown:
        raise ContractViolation(f"unknown nuisance names: {sorted(unknown)}")
    offsets_present = [o for o in _MODE_OFFSETS[channel_fim.mode] if o in nuisance]
    offset_rows = [9 if o == "clock_offset" else 10 for o in offsets_present]

    bcount = channel_fim.num_anchors
    per_anchor = np.zeros((bcount, 9, 9))
    ranks = []
    for bi in range(1, bcount + 1):
        k11, coupling, gain_diag = _anchor_terms(channel_fim, jac, bi)
        if "gain" in nuisance:
            # gains touch disjoint triples, so their block is diagonal and
            # the Schur term is a weighted outer-product sum
            k11 = k11 - (coupling / gain_diag) @ coupling.T
            k11 = 0.5 * (k11 + k11.T)
        keep = list(range(9)) + offset_rows
        sub = k11[np.ix_(keep, keep)]
        a = sub[0:9, 0:9]
        if offset_rows:
            bmat = sub[0:9, 9:]
            dmat = sub[9:, 9:]
            dinv, rank = _equilibrated_pinv(dmat)
            contrib = a - bmat @ dinv @ bmat.T
            ranks.append(rank)
        else:
            contrib = a
            ranks.append(0)
        per_anchor[bi - 1] = 0.5 * (contrib + contrib.T)
    total = per_anchor.sum(axis=0)
    return EfimResult(
        matrix=0.5 * (total + total.T),
        per_anchor=per_anchor,
        mode=channel_fim.mode,
        nuisance=nuisance,
        offset_ranks=tuple(ranks),
    )


def full_information(channel_fim: ChannelFim, jac: TransformJacobian) -> np.ndarray:
    """Dense FIM over the full state [motion, offsets, gains].

    Reference path for the information-equality check; quadratic in the
    channel dimension, so keep it to small scenarios.
    """
    t = jac.full_matrix()
    dim_c = jac.channel_dim()
    j_eta = np.zeros((dim_c, dim_c))
    width = jac.anchor_dim_cols()
    for bi in range(channel_fim.num_anchors):
        j_eta[bi * width : (bi + 1) * width, bi * width : (bi + 1) * width] = (
            channel_fim.anchor_matrix(bi + 1)
        )
    full = t @ j_eta @ t.T
    return 0.5 * (full + full.T)


# ---------------------------------------------------------------------------
# Constrained bounds on the unit-orientation manifold


def tangent_basis(orientation: np.ndarray) -> np.ndarray:
    """Orthonormal 9x8 basis of the constraint tangent space.

    The unit-norm constraint on the orientation has gradient
    [0(6), 2*orientation]; the basis keeps the six position/velocity axes
    and completes the orientation block with two Householder-derived
    vectors orthogonal to the orientation.  Deterministic in the input.
    """
    s = np.asarray(orientation, dtype=float)
    if s.shape != (3,):
        raise ContractViolation("orientation must be a 3-vector")
    norm = np.linalg.norm(s)
    if not math.isclose(norm, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ContractViolation(f"orientation must be unit norm, got {norm!r}")
    s = s / norm
    # reflect e_axis -> s where axis picks the most stable Householder vector
    axis = int(np.argmax(np.abs(s)))
    e = np.zeros(3)
    e[axis] = math.copysign(1.0, s[axis])
    w = s - e
    wn = np.linalg.norm(w)
    if wn < 1e-12:
        h = np.eye(3)
    else:
        w = w / wn
        h = np.eye(3) - 2.0 * np.outer(w, w)
    # columns of h other than `axis` are orthonormal and orthogonal to s
    tang = [h[:, i] for i in range(3) if i != axis]
    u = np.zeros((9, 8))
    u[0:6, 0:6] = np.eye(6)
    u[6:9, 6] = tang[0]
    u[6:9, 7] = tang[1]
    return u


@dataclass(frozen=True)
class BoundReport:
    """Constrained error bounds for one scenario and mode."""

    efim_kappa1: np.ndarray  # (9, 9)
    ccrb: np.ndarray  # (9, 9)
    peb: float
    veb: float
    oeb: float
    peb_sq: float
    veb_sq: float
    oeb_sq: float
    rank_kappa1: int
    condition_number: float
    localizable: bool
    mode: str = "joint"
    tangent_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(8))


def ccrb(
    efim_matrix: np.ndarray,
    orientation: np.ndarray,
    mode: str = "joint",
    rank_threshold: float = RANK_REL_THRESHOLD,
) -> BoundReport:
    """Constrained bound from a motion-block EFIM.

    Projects onto the unit-norm constraint tangent space, inverts there,
    and lifts back; the orientation block of the result is singular along
    the orientation itself.  A rank-deficient projection marks the
    scenario not localizable and reports infinite bounds.
    """
    j = np.asarray(efim_matrix, dtype=float)
    if j.shape != (9, 9):
        raise ContractViolation("EFIM must be 9x9")
    u = tangent_basis(orientation)
    proj = u.T @ j @ u
    proj = 0.5 * (proj + proj.T)

    d = np.sqrt(np.abs(np.diag(proj)))
    d[d == 0.0] = 1.0
    scaled = proj / d[:, None] / d[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (scaled + scaled.T))
    vmax = max(vals.max(), 0.0)
    rank = int(np.count_nonzero(vals > rank_threshold * vmax)) if vmax > 0 else 0
    localizable = rank == 8

    inv_cut = PINV_REL_THRESHOLD * vmax
    inv_vals = np.where(vals > inv_cut, 1.0 / np.where(vals > inv_cut, vals, 1.0), 0.0)
    pinv_scaled = (vecs * inv_vals) @ vecs.T
    proj_inv = pinv_scaled / d[:, None] / d[None, :]
    cov = u @ proj_inv @ u.T
    cov = 0.5 * (cov + cov.T)

    if localizable:
        peb_sq = float(np.trace(cov[0:3, 0:3]))
        veb_sq = float(np.trace(cov[3:6, 3:6]))
        oeb_sq = float(np.trace(cov[6:9, 6:9]))
        peb, veb, oeb = math.sqrt(peb_sq), math.sqrt(veb_sq), math.sqrt(oeb_sq)
        cond = float(vals.max() / vals[vals > inv_cut].min())
    else:
        peb_sq = veb_sq = oeb_sq = math.inf
        peb = veb = oeb = math.inf
        cond = math.inf

    # eigenvalues of the unscaled projection, for diagnostics
    raw_vals = np.linalg.eigvalsh(proj)
    return BoundReport(
        efim_kappa1=j,
        ccrb=cov,
        peb=peb,
        veb=veb,
        oeb=oeb,
        peb_sq=peb_sq,
        veb_sq=veb_sq,
        oeb_sq=oeb_sq,
        rank_kappa1=rank,
        condition_number=cond,
        localizable=localizable,
        mode=mode,
        tangent_eigenvalues=raw_vals,
    )


@dataclass(frozen=True)
class LocalizabilityReport:
    rank: int
    localizable: bool
    eigenvalues: np.ndarray
    mode: str


def localizability(
    scenario: ScenarioConfig,
    mode: str = "joint",
    nuisance: frozenset | None = None,
) -> LocalizabilityReport:
    """Numerical rank of the tangent-projected EFIM for a scenario."""
    from .channel import build_channel

    channel = build_channel(scenario)
    cf = assemble_channel_fim(channel, mode)
    jac = jacobian(
        channel.geometry,
        scenario.waveform,
        scenario.noise.pathloss_exponent,
        mode,
    )
    res = efim(cf, jac, nuisance)
    u = tangent_basis(scenario.receiver.orientation)
    proj = u.T @ res.matrix @ u
    d = np.sqrt(np.abs(np.diag(proj)))
    d[d == 0.0] = 1.0
    scaled = proj / d[:, None] / d[None, :]
    vals = np.linalg.eigvalsh(0.5 * (scaled + scaled.T))
    vmax = max(vals.max(), 0.0)
    rank = int(np.count_nonzero(vals > RANK_REL_THRESHOLD * vmax)) if vmax > 0 else 0
    return LocalizabilityReport(
        rank=rank,
        localizable=rank == 8,
        eigenvalues=vals,
        mode=mode,
    )


def bounds_for_scenario(
    scenario: ScenarioConfig,
    mode: str = "joint",
    nuisance: frozenset | None = None,
) -> BoundReport:
    """Convenience chain: scenario -> channel -> EFIM -> constrained bound."""
    from .channel import build_channel

    channel = build_channel(scenario)
    cf = assemble_channel_fim(channel, mode)
    jac = jacobian(
        channel.geometry,
        scenario.waveform,
        scenario.noise.pathloss_exponent,
        mode,
    )
    res = efim(cf, jac, nuisance)
    return ccrb(res.matrix, scenario.receiver.orientation, mode)
