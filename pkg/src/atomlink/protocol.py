"""The two entangling protocols, run one trajectory at a time.

Both protocols drive one atom in each of two distant cavities, route the
leaked cavity fields onto a beam splitter and condition on a single
detector click.  The click erases the which-cavity information, so the
atoms are projected onto a Bell pair whose sign is the detector parity.

The single-pair protocol works at the symmetric operating point (equal
Rabi rate and coupling, equal detunings) where exact mapping pulse times
exist:

  (i)   both lasers on for t1: maps |1> to a cavity photon,
  (ii)  lasers off: wait for exactly one click,
  (iii) both lasers on for t2: maps the surviving photon back,
  (iv)  flip the sign of |1> in cavity A when the minus detector fired.

The register protocol entangles one designated atom per cavity while
spectator atoms sit in the same cavities.  Spectators in |0> Stark-shift
the cavity field, so the surviving branch accumulates a phase that
depends on the spectator populations and on when the click happened.
The second mapping laser is therefore delayed by the time returned by
:func:`phase_delay`, which winds the branch phase back to +1 instead of
applying any correction operator.

Trajectory outcomes are immutable records; batches are aggregated in
:mod:`atomlink.analytics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import statespace as ss
from .model import (
    ATOM_LOSS,
    DerivedRates,
    PhysicalParams,
    derived_rates,
    detector_channels,
    hamiltonian_cavity_builder,
    jump_channels,
)
from .trajectory import Segment, evolve_segment

FAILURE_NONE = "none"
FAILURE_TWO_PHOTONS = "two_photons"
FAILURE_CLICK_IN_STAGE3 = "click_in_stage3"
FAILURE_SPONTANEOUS = "spontaneous_emission"
FAILURE_TIMEOUT = "wait_timeout"

#: every reason a trajectory can end with, successful runs included
FAILURE_REASONS = (FAILURE_NONE, FAILURE_TWO_PHOTONS, FAILURE_CLICK_IN_STAGE3,
                   FAILURE_SPONTANEOUS, FAILURE_TIMEOUT)

#: wait stages give up after this many cavity lifetimes (survival ~ e^-16)
DEFAULT_WAIT_OVER_KAPPA = 8.0


@dataclass(frozen=True)
class ProtocolOutcome:
    """What one trajectory produced.

    ``click_times_us`` lists every detector click in protocol time (not
    stage-local time); losses are not clicks.  ``fidelity`` is reported
    for successful runs only, failures count toward 1 - P_success and
    carry None.
    """

    success: bool
    failure_reason: str
    epsilon: int | None
    fidelity: float | None
    click_times_us: tuple
    total_time_us: float

    def __post_init__(self):
        if self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")
        if self.success != (self.failure_reason == FAILURE_NONE):
            raise ValueError("success flag and failure_reason disagree")
        if self.success:
            if self.fidelity is None:
                raise ValueError("successful runs must report a fidelity")
            if len(self.click_times_us) != 1:
                raise ValueError("success requires exactly one detector click")
        elif self.fidelity is not None:
            raise ValueError("failed runs carry no fidelity")


def _base3(index: int, n_digits: int) -> tuple:
    digits = []
    for _ in range(n_digits):
        index, d = divmod(index, 3)
        digits.append(d)
    return tuple(reversed(digits))


def _check_spectators(phi, n0: int, tag: str) -> int:
    """Validate one cavity's spectator amplitudes; returns the atom count."""
    v = np.asarray(phi, dtype=complex)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"phi_{tag} must be a non-empty vector")
    count, dim = 0, 1
    while dim < v.size:
        dim *= 3
        count += 1
    if dim != v.size:
        raise ValueError(f"phi_{tag} length must be a power of 3")
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError(f"phi_{tag} must be normalized")
    if not 0 <= n0 <= count:
        raise ValueError(f"n0_{tag} must lie in [0, {count}]")
    for idx in np.flatnonzero(np.abs(v) > 0.0):
        levels = _base3(int(idx), count)
        if any(lv > 1 for lv in levels):
            raise ValueError(f"phi_{tag} spectators may only occupy levels 0 and 1")
        if levels.count(0) != n0:
            raise ValueError(
                f"phi_{tag} has a branch with {levels.count(0)} atoms in |0>, "
                f"inconsistent with n0_{tag}={n0}")
    return count


@dataclass(frozen=True)
class MultiAtomSetup:
    """Which atom is entangled and what the rest of the register holds.

    ``phi_a``/``phi_b`` are amplitude tuples over the spectator atoms of
    each cavity, base-3 indexed with the lowest-numbered spectator most
    significant; a cavity with no spectators uses the trivial ``(1.0,)``.
    Every spectator branch must occupy levels {0, 1} and hold exactly
    ``n0`` atoms in |0>, because the laser-delay phase bookkeeping is
    defined only for a sharp |0> count.
    """

    designated_a: int = 0
    designated_b: int = 0
    phi_a: tuple = (1.0,)
    phi_b: tuple = (1.0,)
    n0_a: int = 0
    n0_b: int = 0

    def __post_init__(self):
        if self.designated_a < 0 or self.designated_b < 0:
            raise ValueError("designated atom index cannot be negative")
        _check_spectators(self.phi_a, self.n0_a, "a")
        _check_spectators(self.phi_b, self.n0_b, "b")


#: spectator register of a cavity holding a single atom
SINGLE_ATOM_SETUP = MultiAtomSetup()


def sample_setup(p: PhysicalParams, rng: np.random.Generator,
                 designated_a: int = 0, designated_b: int = 0) -> MultiAtomSetup:
    """Draw a random spectator configuration for each cavity.

    Per cavity, the number of spectators in |0> is uniform over the
    possible counts, then the amplitudes are uniform on the unit sphere
    of that fixed-count sector (basis configurations get amplitude 1
    without spending draws).  Draw order is n0_a, amplitudes_a, n0_b,
    amplitudes_b, so batches are reproducible."""
    spectators = p.atoms_per_cavity - 1

    def one_cavity():
        n0 = int(rng.integers(0, spectators + 1))
        sector = [i for i in range(3 ** spectators)
                  if max(_base3(i, spectators), default=0) <= 1
                  and _base3(i, spectators).count(0) == n0]
        amp = np.zeros(3 ** spectators, dtype=complex)
        if len(sector) == 1:
            amp[sector[0]] = 1.0
        else:
            raw = rng.standard_normal(2 * len(sector))
            c = raw[0::2] + 1j * raw[1::2]
            amp[sector] = c / np.linalg.norm(c)
        return tuple(amp), n0

    phi_a, n0_a = one_cavity()
    phi_b, n0_b = one_cavity()
    return MultiAtomSetup(designated_a, designated_b, phi_a, phi_b, n0_a, n0_b)


def _cavity_vector(layout: ss.SpaceLayout, designated: int, level: int,
                   phi, photons: int) -> np.ndarray:
    """One cavity's amplitudes: designated atom at ``level``, spectators in phi."""
    v = np.asarray(phi, dtype=complex)
    spectator_sites = [s for s in range(layout.atoms_per_cavity) if s != designated]
    out = np.zeros(layout.cavity_dim, dtype=complex)
    for idx in np.flatnonzero(np.abs(v) > 0.0):
        branch = _base3(int(idx), len(spectator_sites))
        levels = [0] * layout.atoms_per_cavity
        levels[designated] = level
        for site, lv in zip(spectator_sites, branch):
            levels[site] = lv
        out[layout.cavity_index(tuple(levels), photons)] += v[idx]
    return out


def initial_register_state(layout: ss.SpaceLayout,
                           setup: MultiAtomSetup) -> ss.StateVector:
    """Both designated atoms in |1>, spectators in phi, no photons."""
    va = _cavity_vector(layout, setup.designated_a, 1, setup.phi_a, 0)
    vb = _cavity_vector(layout, setup.designated_b, 1, setup.phi_b, 0)
    return ss.product_state(layout, va, vb)


# ---------------------------------------------------------------- fidelity

#: Bell pair (|0>_A|1>_B + |1>_A|0>_B)/sqrt(2) over the 9-dim two-atom basis
_BELL_PAIR = np.zeros(ss.LEVELS ** 2)
_BELL_PAIR[1] = _BELL_PAIR[3] = 1.0 / math.sqrt(2.0)


def target_state(layout: ss.SpaceLayout) -> ss.StateVector:
    """Bell pair of the two single atoms with both cavities empty."""
    if layout.atoms_per_cavity != 1:
        raise ValueError(
            "the pure Bell target exists only for one atom per cavity; "
            "registers are scored through reduced_pair_density")
    amp = np.zeros(layout.joint_dim, dtype=complex)
    amp[layout.joint_index((0,), 0, (1,), 0)] = 1.0 / math.sqrt(2.0)
    amp[layout.joint_index((1,), 0, (0,), 0)] = 1.0 / math.sqrt(2.0)
    return ss.StateVector(layout, amp)


def reduced_pair_density(state: ss.StateVector, site_a: int = 0,
                         site_b: int = 0) -> np.ndarray:
    """Density matrix of one atom per cavity with everything else traced out.

    Basis: (level_A, level_B) pairs, level_A most significant, 9 states.
    """
    lay = state.layout
    n = lay.atoms_per_cavity
    if not (0 <= site_a < n and 0 <= site_b < n):
        raise ValueError("atom site out of range")
    dims = ([ss.LEVELS] * n + [lay.mode_dim]) * 2
    tensor = state.amplitudes.reshape(dims)
    tensor = np.moveaxis(tensor, (site_a, n + 1 + site_b), (0, 1))
    kept = tensor.reshape(ss.LEVELS ** 2, -1)
    return kept @ kept.conj().T


def fidelity(final: ss.StateVector, setup: MultiAtomSetup | None = None) -> float:
    """Overlap of the trajectory's end state with the Bell target.

    Without a setup this is the pure overlap |<Bell, vacuum|psi>|^2 used
    by the single-pair protocol; residual photon or excited-level
    amplitude directly lowers it.  With a setup the two designated atoms
    are scored through their reduced density matrix, tracing out modes,
    spectators and excited levels.
    """
    if abs(ss.norm(final) - 1.0) > 1e-8:
        raise ValueError("fidelity expects a normalized state")
    if setup is None:
        return float(abs(ss.inner(target_state(final.layout), final)) ** 2)
    rho = reduced_pair_density(final, setup.designated_a, setup.designated_b)
    return float(np.real(_BELL_PAIR @ rho @ _BELL_PAIR))


# ------------------------------------------------------- segment plumbing

def _dt(stage_duration: float, p: PhysicalParams,
        override: float | None = None) -> float:
    # at least 2000 samples per stage, and never more than 5% of the
    # fastest damping time per step
    if override is not None:
        return min(override, stage_duration)
    kappa_eff = max(p.kappa_ang, p.gamma_ang)
    return min(stage_duration / 2000.0, 0.05 / kappa_eff)


@lru_cache(maxsize=None)
def _generator_pair(p: PhysicalParams, model_level: str, lasers: tuple,
                    driven: tuple) -> tuple:
    build = hamiltonian_cavity_builder(model_level)
    return (build(p, "A", lasers[0], driven[0]),
            build(p, "B", lasers[1], driven[1]))


@lru_cache(maxsize=None)
def _active_channels(p: PhysicalParams, model_level: str) -> tuple:
    chans = jump_channels(p)
    if model_level == "effective":
        # the adiabatic generator carries no emission damping, so only
        # the detector channels keep the norm bookkeeping balanced
        return detector_channels(chans)
    return chans


@lru_cache(maxsize=None)
def _pulse_and_wait_segments(p: PhysicalParams, model_level: str, driven: tuple,
                             pulse_us: float, t_wait_over_kappa: float,
                             dt_us: float | None = None) -> tuple:
    """(illumination pulse, detection wait) shared across trajectories."""
    chans = _active_channels(p, model_level)
    on = _generator_pair(p, model_level, (True, True), driven)
    off = _generator_pair(p, model_level, (False, False), driven)
    t_wait = t_wait_over_kappa / p.kappa_ang
    return (
        Segment(on, pulse_us, chans, dt_us=_dt(pulse_us, p, dt_us),
                label="illumination"),
        Segment(off, t_wait, chans, until_click=True,
                dt_us=_dt(t_wait, p, dt_us), label="detection wait"),
    )


@lru_cache(maxsize=None)
def _storage_segment(p: PhysicalParams, model_level: str,
                     dt_us: float | None = None) -> Segment:
    chans = _active_channels(p, model_level)
    on = _generator_pair(p, model_level, (True, True), (0, 0))
    t2 = derived_rates(p).t2
    return Segment(on, t2, chans, dt_us=_dt(t2, p, dt_us),
                   label="storage pulse")


def _staggered_storage_segments(p: PhysicalParams, model_level: str,
                                driven: tuple, t_phi: float,
                                dt_us: float | None = None) -> list:
    """Mapping stage with the cavity-B laser delayed by t_phi.

    Split at every laser switch; each piece inherits the step size of
    the whole stage so the grid density does not depend on t_phi.
    """
    r = derived_rates(p)
    chans = _active_channels(p, model_level)
    total = r.t3 + t_phi
    dt = _dt(total, p, dt_us)
    marks = sorted({0.0, t_phi, r.t3, total})
    pieces = []
    for lo, hi in zip(marks, marks[1:]):
        if hi - lo <= 1e-15 * total:
            continue
        mid = 0.5 * (lo + hi)
        lasers = (mid < r.t3, t_phi <= mid)
        gen = _generator_pair(p, model_level, lasers, driven)
        pieces.append(Segment(gen, hi - lo, chans, dt_us=dt,
                              label=f"storage lasers {lasers}"))
    return pieces


def _check_model_level(model_level: str):
    if model_level not in ("full", "effective"):
        raise ValueError(f"unknown model level {model_level!r}")


def _failed(reason: str, epsilon, clicks, t_us: float) -> ProtocolOutcome:
    return ProtocolOutcome(False, reason, epsilon, None, tuple(clicks), t_us)


# ------------------------------------------------------------- protocols

def run_protocol_one(p: PhysicalParams, model_level: str,
                     rng: np.random.Generator, *,
                     t_wait_over_kappa: float = DEFAULT_WAIT_OVER_KAPPA,
                     dt_us: float | None = None) -> ProtocolOutcome:
    """One trajectory of the single-pair protocol.

    Starts from |1>|1> with empty cavities.  Stage (i) illuminates both
    atoms for t1; a single click there just records the detector parity
    and the pulse still completes.  With no click, stage (ii) waits for
    one.  Stage (iii) runs the t2 storage pulse, which must stay dark.
    Stage (iv) flips the sign of |1> in cavity A when the minus detector
    fired.  Fidelity is the pure overlap with the Bell target.
    """
    _check_model_level(model_level)
    if p.atoms_per_cavity != 1:
        raise ValueError("the single-pair protocol needs exactly one atom "
                         "per cavity; use run_protocol_two for registers")
    r = derived_rates(p)
    if not r.mapping_times_available():
        raise ValueError("mapping pulses exist only at the symmetric point "
                         "(omega == g and delta == delta_prime)")
    lay = p.layout()
    seg_pulse, seg_wait = _pulse_and_wait_segments(
        p, model_level, (0, 0), r.t1, t_wait_over_kappa, dt_us)

    state = ss.basis_state(lay, (1,), 0, (1,), 0)
    clicks: list = []
    epsilon = None
    t_now = 0.0

    # (i) map |1> onto the cavity fields
    res = evolve_segment(state, seg_pulse, rng)
    for ev in res.events:
        t_abs = t_now + ev.time_us
        if ev.channel.kind == ATOM_LOSS:
            return _failed(FAILURE_SPONTANEOUS, epsilon, clicks, t_abs)
        clicks.append(t_abs)
        if epsilon is None:
            epsilon = ev.epsilon
        else:
            return _failed(FAILURE_TWO_PHOTONS, epsilon, clicks, t_abs)
    state, target = res.state, res.carry_target
    t_now += res.t_end_us

    # (ii) wait for the click unless stage (i) already delivered it
    if epsilon is None:
        res = evolve_segment(state, seg_wait, rng, target=target)
        if not res.events:
            return _failed(FAILURE_TIMEOUT, None, clicks,
                           t_now + seg_wait.duration_us)
        ev = res.events[0]
        t_abs = t_now + ev.time_us
        if ev.channel.kind == ATOM_LOSS:
            return _failed(FAILURE_SPONTANEOUS, None, clicks, t_abs)
        clicks.append(t_abs)
        epsilon = ev.epsilon
        state, target = res.state, res.carry_target
        t_now += res.t_end_us

    # (iii) map the surviving excitation back; any click here means the
    # photon escaped instead of being stored
    res = evolve_segment(state, _storage_segment(p, model_level, dt_us), rng,
                         target=target)
    for ev in res.events:
        t_abs = t_now + ev.time_us
        if ev.channel.kind == ATOM_LOSS:
            return _failed(FAILURE_SPONTANEOUS, epsilon, clicks, t_abs)
        clicks.append(t_abs)
        return _failed(FAILURE_CLICK_IN_STAGE3, epsilon, clicks, t_abs)
    state = res.state
    t_now += res.t_end_us

    # (iv) the minus detector prepared the odd Bell pair; undo the sign
    if epsilon == -1:
        state = _sign_flip(lay).apply(state)
    return ProtocolOutcome(True, FAILURE_NONE, epsilon, fidelity(state),
                           tuple(clicks), t_now)


@lru_cache(maxsize=None)
def _sign_flip(layout: ss.SpaceLayout) -> ss.DenseOperator:
    return ss.lift(np.diag([1.0, -1.0, 1.0]), ("A", 0), layout)


def phase_delay(epsilon: int, t_j: float | None, rates: DerivedRates,
                setup: MultiAtomSetup) -> float:
    """Delay of the cavity-B storage laser that resets the branch phase.

    The surviving branch reaches the storage stage carrying the detector
    sign and the spectator Stark phase accumulated over the illumination
    pulse: half of (n0_a - n0_b) * z2 per unit time, integrated over
    2*t3 - t_j when the click fell at t_j inside the pulse, or over t3
    when it arrived during the wait (``t_j=None``).  Delaying the B
    laser rotates the branch at delta_r per unit time, so the smallest
    nonnegative delay with delta_r * t_phi matching the accumulated
    phase (mod 2 pi) restores a +1 branch sign.
    """
    if epsilon not in (1, -1):
        raise ValueError("epsilon must be +1 or -1")
    if t_j is not None and not 0.0 <= t_j <= rates.t3 * (1 + 1e-12):
        raise ValueError("stage-(i) click time must lie within the pulse")
    span = rates.t3 if t_j is None else 2.0 * rates.t3 - t_j
    arg = 0.5 * (setup.n0_a - setup.n0_b) * rates.z2 * span
    if epsilon == -1:
        arg += math.pi
    arg = math.fmod(arg, 2.0 * math.pi)
    if arg < 0.0:
        arg += 2.0 * math.pi
    if arg >= 2.0 * math.pi - 1e-12:
        arg = 0.0
    if arg == 0.0:
        return 0.0
    if rates.delta_r <= 0.0:
        raise ValueError("a laser delay can only unwind the branch phase "
                         "when delta_prime exceeds delta")
    return arg / rates.delta_r


def run_protocol_two(p: PhysicalParams, setup: MultiAtomSetup,
                     model_level: str, rng: np.random.Generator, *,
                     t_wait_over_kappa: float = DEFAULT_WAIT_OVER_KAPPA,
                     dt_us: float | None = None) -> ProtocolOutcome:
    """One trajectory of the register protocol.

    The designated atom of each cavity starts in |1> next to its
    spectators.  Stage (i) illuminates the designated atoms for t3,
    stage (ii) waits for the click if needed, stage (iii) runs the t3
    storage pulse with the cavity-B laser delayed by the phase-resetting
    time from :func:`phase_delay`.  Fidelity is the Bell projection of
    the designated atoms' reduced state.
    """
    _check_model_level(model_level)
    r = derived_rates(p)
    if abs(r.delta_r - r.z1) > 1e-6 * abs(r.z1):
        raise ValueError(
            "the branch phases close only when the laser Stark shift matches "
            "the cavity-laser detuning difference (delta_prime - delta == "
            "omega^2/delta); adjust delta_prime")
    spectators = p.atoms_per_cavity - 1
    if len(setup.phi_a) != 3 ** spectators or len(setup.phi_b) != 3 ** spectators:
        raise ValueError(f"spectator amplitudes must have length "
                         f"{3 ** spectators} for {p.atoms_per_cavity} atoms per cavity")
    if max(setup.designated_a, setup.designated_b) >= p.atoms_per_cavity:
        raise ValueError("designated atom index out of range")

    lay = p.layout()
    driven = (setup.designated_a, setup.designated_b)
    seg_pulse, seg_wait = _pulse_and_wait_segments(
        p, model_level, driven, r.t3, t_wait_over_kappa, dt_us)

    state = initial_register_state(lay, setup)
    clicks: list = []
    epsilon = None
    t_click_in_pulse = None
    t_now = 0.0

    # (i) excite the designated atoms; a click only records its time,
    # the pulse still runs to the end
    res = evolve_segment(state, seg_pulse, rng)
    for ev in res.events:
        t_abs = t_now + ev.time_us
        if ev.channel.kind == ATOM_LOSS:
            return _failed(FAILURE_SPONTANEOUS, epsilon, clicks, t_abs)
        clicks.append(t_abs)
        if epsilon is None:
            epsilon, t_click_in_pulse = ev.epsilon, ev.time_us
        else:
            return _failed(FAILURE_TWO_PHOTONS, epsilon, clicks, t_abs)
    state, target = res.state, res.carry_target
    t_now += res.t_end_us

    # (ii) wait for the photon to leave if it has not already
    if epsilon is None:
        res = evolve_segment(state, seg_wait, rng, target=target)
        if not res.events:
            return _failed(FAILURE_TIMEOUT, None, clicks,
                           t_now + seg_wait.duration_us)
        ev = res.events[0]
        t_abs = t_now + ev.time_us
        if ev.channel.kind == ATOM_LOSS:
            return _failed(FAILURE_SPONTANEOUS, None, clicks, t_abs)
        clicks.append(t_abs)
        epsilon = ev.epsilon
        state, target = res.state, res.carry_target
        t_now += res.t_end_us

    # (iii) store, with the B laser held back to unwind the branch phase
    t_phi = phase_delay(epsilon, t_click_in_pulse, r, setup)
    for piece in _staggered_storage_segments(p, model_level, driven, t_phi,
                                             dt_us):
        res = evolve_segment(state, piece, rng, target=target)
        for ev in res.events:
            t_abs = t_now + ev.time_us
            if ev.channel.kind == ATOM_LOSS:
                return _failed(FAILURE_SPONTANEOUS, epsilon, clicks, t_abs)
            clicks.append(t_abs)
            return _failed(FAILURE_CLICK_IN_STAGE3, epsilon, clicks, t_abs)
        state, target = res.state, res.carry_target
        t_now += res.t_end_us

    return ProtocolOutcome(True, FAILURE_NONE, epsilon,
                           fidelity(state, setup), tuple(clicks), t_now)
