"""Monte Carlo wavefunction engine.

A trajectory is a sequence of :class:`Segment` objects, each carrying a
non-Hermitian generator, a duration and the jump channels active during
that stretch.  Between jumps the state follows exp(-i H t); a jump fires
when the squared norm decays through a uniform random threshold, after
which the state collapses through one channel (picked proportionally to
its weight), is renormalized and the threshold is redrawn.

The survival clock is continuous across segments: a segment that ends
without a jump returns a rescaled threshold (``carry_target``) that the
caller feeds into the next segment.  Zero-duration segments consume no
random numbers, which keeps trajectory streams reproducible when a
protocol inserts degenerate waits.

Generators are joint-space matrices or (cavity A, cavity B) pairs.  The
pair form is preferred: the Hamiltonian never couples the cavities, so a
step is two small matrix products on the state reshaped to
(cavity_dim, cavity_dim) instead of one large product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import statespace as ss
from .model import ATOM_LOSS, JumpChannel

# relative tolerance on the per-step squared-norm decrease; conditional
# evolution can only lose norm, so anything above this is a broken generator
MONOTONE_TOL = 1e-12

# bisection stops once the bracket's squared norms differ by less than this
# (the state entering a segment is normalized, so this is a relative figure)
JUMP_NORM_TOL = 1e-10

_EIG_ATTR = "_trajectory_eig_factors"
_MISSING = object()


def trajectory_rng(master_seed: int, traj_index: int) -> np.random.Generator:
    """Independent, reproducible random stream for one trajectory.

    Streams are derived by spawn key, not by offsetting the seed, so any
    partition of trajectory indices over worker processes produces
    bit-identical results.
    """
    if traj_index < 0:
        raise ValueError("trajectory index must be non-negative")
    seq = np.random.SeedSequence(master_seed, spawn_key=(traj_index,))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class JumpEvent:
    """One collapse, at ``time_us`` after the start of its segment."""

    time_us: float
    channel: JumpChannel

    @property
    def epsilon(self) -> int | None:
        """Detector sign of the click; None for an undetected loss."""
        return self.channel.epsilon


@dataclass(frozen=True)
class SegmentResult:
    state: ss.StateVector  # normalized
    events: tuple
    t_end_us: float  # duration, or the early-stop time
    carry_target: float | None  # threshold to pass to the next segment
    stopped_early: bool


@dataclass
class Segment:
    """A stretch of conditional evolution under one generator.

    ``generator`` is a joint-scope DenseOperator or an (A, B) pair of
    cavity-scope ones.  ``dt_us`` is a target step size; the actual step
    divides the duration exactly.  ``until_click`` stops the segment at
    the first jump of any kind (used for detection windows).
    """

    generator: object
    duration_us: float
    channels: tuple = ()
    until_click: bool = False
    dt_us: float | None = None
    label: str = ""
    _prop: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.generator, ss.DenseOperator):
            if self.generator.scope != "joint":
                raise ss.DimensionError(
                    "a single generator must be joint-scope; pass an (A, B) pair")
        else:
            op_a, op_b = self.generator
            if (op_a.scope, op_b.scope) != ("A", "B"):
                raise ss.DimensionError("generator pair must have scopes ('A', 'B')")
            if op_a.layout != op_b.layout:
                raise ss.DimensionError("generator pair layouts differ")
        self.channels = tuple(self.channels)
        lay = self.layout
        for ch in self.channels:
            if ch.layout != lay:
                raise ss.DimensionError("jump channel layout mismatch")
        if not (math.isfinite(self.duration_us) and self.duration_us >= 0):
            raise ValueError("segment duration must be finite and non-negative")
        if self.dt_us is not None and not self.dt_us > 0:
            raise ValueError("dt_us must be positive")

    @property
    def layout(self) -> ss.SpaceLayout:
        if isinstance(self.generator, ss.DenseOperator):
            return self.generator.layout
        return self.generator[0].layout

    def propagators(self) -> "_SegmentPropagators":
        if self._prop is None:
            self._prop = _SegmentPropagators(self)
        return self._prop


def _eig_factors(op: ss.DenseOperator):
    """Diagonalization of a generator, memoized on the operator.

    Returns (V, w, V^-1) or None when the matrix is too far from
    diagonalizable for the reconstruction to be trusted; callers then
    fall back to a fresh expm per requested time.
    """
    cached = getattr(op, _EIG_ATTR, _MISSING)
    if cached is not _MISSING:
        return cached
    h = op.matrix
    try:
        w, v = scipy.linalg.eig(h)
        vinv = scipy.linalg.inv(v)
        err = np.abs((v * w) @ vinv - h).max()
        scale = max(np.abs(h).max(), 1.0)
        factors = (v, w, vinv) if err <= 1e-11 * scale else None
    except scipy.linalg.LinAlgError:
        factors = None
    object.__setattr__(op, _EIG_ATTR, factors)
    return factors


def _propagator_matrix(op: ss.DenseOperator, t_us: float) -> np.ndarray:
    factors = _eig_factors(op)
    if factors is None:
        return scipy.linalg.expm(-1j * op.matrix * t_us)
    v, w, vinv = factors
    return (v * np.exp(-1j * w * t_us)) @ vinv


class _SegmentPropagators:
    """Step propagators for one segment, built once and reused."""

    def __init__(self, seg: Segment):
        duration = seg.duration_us
        dt_target = seg.dt_us if seg.dt_us is not None else duration / 2000.0
        self.n_steps = max(1, math.ceil(duration / dt_target - 1e-9))
        self.dt = duration / self.n_steps
        gen = seg.generator
        if isinstance(gen, ss.DenseOperator):
            self.pair = None
            self.joint = gen
            self.u_step = _propagator_matrix(gen, self.dt)
            self.eig_pair = None
        else:
            self.pair = gen
            self.joint = None
            self.u_step_a = _propagator_matrix(gen[0], self.dt)
            # transposed once so the B-side apply is a plain product
            self.u_step_b_t = _propagator_matrix(gen[1], self.dt).T.copy()
            fa, fb = _eig_factors(gen[0]), _eig_factors(gen[1])
            self.eig_pair = (fa, fb) if fa is not None and fb is not None else None

    def step(self, psi: np.ndarray) -> np.ndarray:
        """One grid step; ``psi`` is the (cavity_dim, cavity_dim) matrix form."""
        if self.pair is None:
            return (self.u_step @ psi.reshape(-1)).reshape(psi.shape)
        return (self.u_step_a @ psi) @ self.u_step_b_t

    def advance(self, psi: np.ndarray, tau: float) -> np.ndarray:
        """Propagate ``psi`` by an arbitrary non-negative time."""
        if tau == 0.0:
            return psi
        if tau == self.dt:
            return self.step(psi)
        if self.pair is None:
            u = _propagator_matrix(self.joint, tau)
            return (u @ psi.reshape(-1)).reshape(psi.shape)
        ua = _propagator_matrix(self.pair[0], tau)
        ub = _propagator_matrix(self.pair[1], tau)
        return (ua @ psi) @ ub.T


def _norm2(psi: np.ndarray) -> float:
    return float(np.vdot(psi, psi).real)


def _sweep_loop(prop, psi, k_from, target, norm_here, on_step, n_events):
    """Step from grid index k_from until the threshold is crossed or the
    segment ends.

    Returns (k, psi, norm_here, psi_next, n2_next) where a crossing lies
    in the step k -> k+1 (psi_next, n2_next are the crossed grid state),
    or psi_next is None when the end was reached jump-free.
    """
    k = k_from
    while k < prop.n_steps:
        psi_next = prop.step(psi)
        n2 = _norm2(psi_next)
        _check_monotone(n2, norm_here)
        if n2 <= target:
            return k, psi, norm_here, psi_next, n2
        psi, norm_here = psi_next, n2
        k += 1
        if on_step is not None:
            on_step(k * prop.dt, n2, n_events)
    return k, psi, norm_here, None, 0.0


def _sweep_batch(prop, psi, k_from, target, norm_here):
    """Same contract as _sweep_loop, but evaluates whole blocks of grid
    states at once in the generators' eigenbases.  The grid, the crossing
    test and all tolerances are identical; only the evaluation order
    differs.
    """
    (va, wa, via), (vb, wb, vib) = prop.eig_pair
    d = psi.shape[0]
    vbt = vb.T
    step_phase = np.exp(-1j * prop.dt * (wa[:, None] + wb[None, :]))
    chunk = max(16, min(prop.n_steps, 500_000 // (d * d)))
    k = k_from
    while k < prop.n_steps:
        m = min(chunk, prop.n_steps - k)
        powers = np.cumprod(
            np.broadcast_to(step_phase, (m, d, d)), axis=0)
        phi = via @ psi @ vib.T
        states = np.matmul(np.matmul(va, powers * phi), vbt)
        n2s = np.einsum("kab,kab->k", states, states.conj()).real
        prev = np.concatenate(([norm_here], n2s[:-1]))
        bad = n2s > prev * (1.0 + MONOTONE_TOL)
        if bad.any():
            j = int(np.argmax(bad))
            _check_monotone(n2s[j], prev[j])
        crossed = n2s <= target
        if crossed.any():
            j = int(np.argmax(crossed))
            psi_prev = psi if j == 0 else states[j - 1]
            n2_prev = norm_here if j == 0 else float(n2s[j - 1])
            return k + j, psi_prev, n2_prev, states[j], float(n2s[j])
        k += m
        psi, norm_here = states[-1], float(n2s[-1])
    return k, psi, norm_here, None, 0.0


def _check_monotone(n2_new: float, n2_old: float):
    if n2_new > n2_old * (1.0 + MONOTONE_TOL):
        raise RuntimeError(
            f"squared norm increased from {n2_old!r} to {n2_new!r}; "
            "the generator is not purely damping")


def _bisect_crossing(prop, psi_lo, tau_span, n2_lo, psi_hi, n2_hi, target):
    """Locate the threshold crossing inside (0, tau_span] from psi_lo.

    Returns (tau, psi, n2) on the crossed side (n2 <= target).
    """
    lo, hi = 0.0, tau_span
    for _ in range(200):
        if n2_lo - n2_hi <= JUMP_NORM_TOL or hi - lo <= 1e-16 * tau_span:
            break
        mid = 0.5 * (lo + hi)
        psi_mid = prop.advance(psi_lo, mid)
        n2_mid = _norm2(psi_mid)
        if n2_mid > target:
            lo, n2_lo = mid, n2_mid
        else:
            hi, psi_hi, n2_hi = mid, psi_mid, n2_mid
    return hi, psi_hi, n2_hi


def _collapse(channels, psi, rng):
    """Pick a channel with probability proportional to its weight and apply it.

    Returns (channel, normalized post-jump state).  Consumes exactly one
    uniform draw.
    """
    if not channels:
        raise RuntimeError("jump threshold crossed but the segment has no channels")
    collapsed = [ch.apply_to_matrix(psi) for ch in channels]
    weights = np.array([_norm2(c) for c in collapsed])
    total = weights.sum()
    if not total > 0:
        raise RuntimeError("all jump channels have zero weight at the jump time")
    u = rng.random() * total
    acc = 0.0
    pick = len(channels) - 1
    for j, w in enumerate(weights):
        acc += w
        if u < acc:
            pick = j
            break
    return channels[pick], collapsed[pick] / math.sqrt(weights[pick])


def evolve_segment(state, seg: Segment, rng, target=None, on_step=None) -> SegmentResult:
    """Run one segment of a trajectory.

    ``state`` must be normalized.  ``target`` is the pending survival
    threshold carried from the previous segment (None means no threshold
    has been drawn yet; one is drawn here unless the segment has zero
    duration).  ``on_step`` is an optional callback
    ``(t_us, squared_norm, n_jumps_so_far)`` invoked at grid points,
    useful for monitoring norm decay.
    """
    lay = seg.layout
    if state.layout != lay:
        raise ss.DimensionError("state layout does not match the segment")
    if seg.duration_us == 0.0:
        return SegmentResult(state, (), 0.0, target, False)
    d = lay.cavity_dim
    psi = state.amplitudes.reshape(d, d)
    if abs(_norm2(psi) - 1.0) > 1e-8:
        raise ValueError("evolve_segment expects a normalized state")
    if target is None:
        target = rng.random()

    prop = seg.propagators()
    dt, n_steps = prop.dt, prop.n_steps
    # the batched sweep needs diagonalizable cavity generators and has no
    # per-step hook; otherwise walk the grid one step at a time
    use_batch = prop.eig_pair is not None and on_step is None
    events = []
    norm_here = 1.0  # squared norm since the last renormalization
    k = 0
    while k < n_steps:
        if use_batch:
            k, psi, norm_here, psi_next, n2 = _sweep_batch(
                prop, psi, k, target, norm_here)
        else:
            k, psi, norm_here, psi_next, n2 = _sweep_loop(
                prop, psi, k, target, norm_here, on_step, len(events))
        if psi_next is None:
            break

        # one or more jumps inside the step k -> k+1
        t_lo, t_hi = k * dt, (k + 1) * dt
        tau_span = dt
        while True:
            tau_j, psi_j, _ = _bisect_crossing(
                prop, psi, tau_span, norm_here, psi_next, n2, target)
            t_jump = t_lo + tau_j
            channel, psi = _collapse(seg.channels, psi_j, rng)
            target = rng.random()
            norm_here = 1.0
            events.append(JumpEvent(t_jump, channel))
            if seg.until_click or channel.kind == ATOM_LOSS:
                out = ss.StateVector(lay, psi.reshape(-1))
                return SegmentResult(out, tuple(events), t_jump, target, True)
            tau_rest = t_hi - t_jump
            if tau_rest <= 0.0:
                break
            psi_next = prop.advance(psi, tau_rest)
            n2 = _norm2(psi_next)
            _check_monotone(n2, norm_here)
            if n2 > target:
                psi, norm_here = psi_next, n2
                break
            t_lo, tau_span = t_jump, tau_rest
        k += 1
        if on_step is not None:
            on_step(k * dt, norm_here, len(events))

    carry = target / norm_here
    out = ss.StateVector(lay, psi.reshape(-1) / math.sqrt(norm_here))
    return SegmentResult(out, tuple(events), seg.duration_us, carry, False)


def propagate_segment(state, seg: Segment) -> ss.StateVector:
    """Deterministic no-jump propagation over a whole segment.

    Returns the unnormalized conditional state; its squared norm is the
    probability that the segment passes without any jump.
    """
    lay = seg.layout
    if state.layout != lay:
        raise ss.DimensionError("state layout does not match the segment")
    if seg.duration_us == 0.0:
        return state
    d = lay.cavity_dim
    psi = state.amplitudes.reshape(d, d)
    prop = seg.propagators()
    n2_prev = _norm2(psi)
    for _ in range(prop.n_steps):
        psi = prop.step(psi)
        n2 = _norm2(psi)
        _check_monotone(n2, n2_prev)
        n2_prev = n2
    return ss.StateVector(lay, psi.reshape(-1))


def expectation_norm_decay(state, seg: Segment) -> float:
    """Fraction of the squared norm that survives the whole segment.

    Deterministic companion to :func:`evolve_segment`: propagates the
    conditional state over the full duration and returns
    ||U psi||^2 / ||psi||^2, i.e. the no-jump probability when the
    channel sum rule holds.
    """
    n2_in = _norm2(state.amplitudes)
    if n2_in <= 1e-24:
        raise ValueError("state is numerically null")
    out = propagate_segment(state, seg)
    return _norm2(out.amplitudes) / n2_in


def channel_balance_residual(generator, channels) -> float:
    """Mismatch between the generator's damping and the channel weights.

    For the unravelling to conserve probability, i(H - H^dag) must equal
    sum_j C_j^dag C_j.  Small joint spaces are checked entrywise; large
    ones through a fixed set of random probe states.  Returns the largest
    absolute residual found.
    """
    if isinstance(generator, ss.DenseOperator):
        lay = generator.layout
        h_joint = generator.matrix
        pair = None
    else:
        pair = generator
        lay = pair[0].layout
        h_joint = None

    if lay.joint_dim <= 512:
        if h_joint is None:
            h_joint = (ss.embed_cavity(pair[0].matrix, "A", lay)
                       + ss.embed_cavity(pair[1].matrix, "B", lay))
        damping = 1j * (h_joint - h_joint.conj().T)
        total = np.zeros_like(damping)
        for ch in channels:
            c = ch.joint_operator().matrix
            total += c.conj().T @ c
        return float(np.abs(damping - total).max())

    # probe path: compare <v| i(H - H^dag) |v> = -2 Im <v|H|v> with
    # sum_j ||C_j v||^2 on fixed random states
    probe_rng = np.random.default_rng(0)
    d = lay.cavity_dim
    worst = 0.0
    for _ in range(16):
        v = probe_rng.normal(size=(d, d)) + 1j * probe_rng.normal(size=(d, d))
        v /= math.sqrt(_norm2(v))
        if pair is None:
            hv = (h_joint @ v.reshape(-1)).reshape(d, d)
        else:
            hv = pair[0].matrix @ v + v @ pair[1].matrix.T
        lhs = -2.0 * complex(np.vdot(v, hv)).imag
        rhs = sum(_norm2(ch.apply_to_matrix(v)) for ch in channels)
        worst = max(worst, abs(lhs - rhs))
    return worst
