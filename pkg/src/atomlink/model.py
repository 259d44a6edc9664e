"""Physical model of the two driven cavity-QED systems.

Holds the experiment parameters, the derived Raman rates and pulse
times, the conditional (non-Hermitian) Hamiltonians at full and
adiabatically eliminated level of detail, and the jump channels seen by
the photodetectors behind the beam splitter.

Unit convention: parameters are entered in MHz following the usual
spectroscopic shorthand (a value nu stands for the angular frequency
2*pi*nu).  Everything downstream of ``PhysicalParams`` works in angular
units, rad/us, and times in us.

Level scheme per atom: |0> and |1> are the stable ground levels, |2> is
the excited level.  The classical laser drives |1> <-> |2> with Rabi
rate omega at detuning delta; the cavity mode couples |0> <-> |2> with
rate g at detuning delta_prime.  Photons leaking from both cavities
interfere on a beam splitter, so the detectors see the symmetric and
antisymmetric combinations of the two cavity fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import statespace as ss

TAU = 2.0 * math.pi

DETECTOR_PLUS = "detector_plus"
DETECTOR_MINUS = "detector_minus"
ATOM_LOSS = "atom_loss"

#: ratio above which a hierarchy assumption counts as satisfied
REGIME_FACTOR = 10.0


@dataclass(frozen=True)
class PhysicalParams:
    """Experiment parameters in MHz (see module docstring for units).

    Attributes:
        delta: laser detuning from the |1> -> |2> transition.
        delta_prime: cavity detuning from the |0> -> |2> transition.
        omega: laser Rabi rate.
        g: atom-cavity coupling rate.
        kappa: cavity field decay rate.
        gamma: excited-level amplitude decay rate (0 disables loss).
        atoms_per_cavity: total atoms held in each cavity.
        photon_cutoff: photon-number truncation of each cavity mode.
    """

    delta: float
    delta_prime: float
    omega: float
    g: float
    kappa: float
    gamma: float = 0.0
    atoms_per_cavity: int = 1
    photon_cutoff: int = 1

    def __post_init__(self):
        for name in ("delta", "delta_prime", "omega", "g", "kappa", "gamma"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite number")
        if self.delta <= 0 or self.delta_prime <= 0:
            raise ValueError("detunings must be positive in this dispersive model")
        if self.omega <= 0 or self.g <= 0:
            raise ValueError("omega and g must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive (the detectors watch the cavity decay)")
        if self.gamma < 0:
            raise ValueError("gamma cannot be negative")
        if self.atoms_per_cavity < 1:
            raise ValueError("need at least one atom per cavity")
        if self.photon_cutoff < 1:
            raise ValueError("photon cutoff must be at least 1")

    # angular-frequency views, rad/us
    @property
    def delta_ang(self) -> float:
        return TAU * self.delta

    @property
    def delta_prime_ang(self) -> float:
        return TAU * self.delta_prime

    @property
    def omega_ang(self) -> float:
        return TAU * self.omega

    @property
    def g_ang(self) -> float:
        return TAU * self.g

    @property
    def kappa_ang(self) -> float:
        return TAU * self.kappa

    @property
    def gamma_ang(self) -> float:
        return TAU * self.gamma

    def layout(self) -> ss.SpaceLayout:
        return ss.SpaceLayout(self.atoms_per_cavity, self.photon_cutoff)


@dataclass(frozen=True)
class RegimeCheck:
    """One hierarchy assumption with its measured ratio."""

    name: str
    ratio: float
    satisfied: bool


@dataclass(frozen=True)
class DerivedRates:
    """Raman rates and pulse times implied by the parameters.

    Angular rates in rad/us, times in us.  ``z``, ``omega_kappa``,
    ``t1`` and ``t2`` are only defined for the symmetric single-photon
    mapping (omega == g and delta == delta_prime) and are None
    otherwise.  ``alpha`` is the dimensionless loss ratio kappa/z3 that
    controls the analytic success probability.
    """

    z1: float
    z2: float
    z3: float
    delta_r: float
    alpha: float
    t3: float
    z: float | None = None
    omega_kappa: float | None = None
    t1: float | None = None
    t2: float | None = None
    regime: tuple = field(default=())

    def mapping_times_available(self) -> bool:
        return self.t1 is not None


def _close(a: float, b: float, rel: float = 1e-12) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def derived_rates(p: PhysicalParams) -> DerivedRates:
    """Second-order rates, pulse times, and a report on the regime assumptions."""
    z1 = p.omega_ang ** 2 / p.delta_ang
    z2 = p.g_ang ** 2 / p.delta_prime_ang
    z3 = 0.5 * p.omega_ang * p.g_ang * (1.0 / p.delta_prime_ang + 1.0 / p.delta_ang)
    delta_r = p.delta_prime_ang - p.delta_ang
    alpha = p.kappa_ang / z3
    t3 = math.pi / (2.0 * z3)

    z = omega_kappa = t1 = t2 = None
    if _close(p.omega, p.g) and _close(p.delta, p.delta_prime):
        z = z1
        disc = 4.0 * z * z - p.kappa_ang ** 2
        if disc <= 0:
            raise ValueError(
                "2z <= kappa: the photon leaks faster than the mapping oscillates, "
                "no mapping pulse exists")
        omega_kappa = math.sqrt(disc)
        theta = math.atan2(omega_kappa, p.kappa_ang)
        t1 = (2.0 / omega_kappa) * (math.pi - theta)
        t2 = (2.0 / omega_kappa) * theta

    def ratio_check(name, num, den):
        r = math.inf if den == 0 else num / den
        return RegimeCheck(name, r, r >= REGIME_FACTOR)

    checks = [
        ratio_check("laser detuning dominates Rabi rate (delta >> omega)",
                    p.delta, p.omega),
        ratio_check("cavity detuning dominates coupling (delta_prime >> g)",
                    p.delta_prime, p.g),
        ratio_check("excited level barely decays within a detuning period (delta >> gamma)",
                    p.delta, p.gamma),
        ratio_check("mapping beats photon loss (z3 >> kappa)",
                    z3, p.kappa_ang),
        ratio_check("photon extraction beats residual excited-level loss "
                    "(kappa >> gamma*(omega/delta)^2)",
                    p.kappa_ang, p.gamma_ang * (p.omega / p.delta) ** 2),
    ]
    if p.atoms_per_cavity > 1:
        checks.append(ratio_check("addressing beats collective coupling (omega >> g)",
                                  p.omega, p.g))
        mismatch = abs(delta_r - z1) / max(abs(z1), 1e-300)
        checks.append(RegimeCheck(
            "laser Stark shift compensates the Raman detuning (delta_r == z1)",
            mismatch, mismatch <= 1e-6))

    return DerivedRates(z1=z1, z2=z2, z3=z3, delta_r=delta_r, alpha=alpha, t3=t3,
                        z=z, omega_kappa=omega_kappa, t1=t1, t2=t2,
                        regime=tuple(checks))


def _validate_driven(p: PhysicalParams, driven_atom: int):
    if not 0 <= driven_atom < p.atoms_per_cavity:
        raise ValueError(f"driven atom index {driven_atom} out of range")


def full_hamiltonian_cavity(p: PhysicalParams, cavity: str, laser_on: bool,
                            driven_atom: int = 0) -> ss.DenseOperator:
    """Conditional Hamiltonian of one cavity, full three-level detail.

    Includes the non-Hermitian damping of both the cavity field and the
    excited level.  Only the driven atom sees the laser, and only when
    ``laser_on``; the cavity coupling g acts on every atom at all times.
    """
    _validate_driven(p, driven_atom)
    lay = p.layout()
    a = ss.mode_annihilator(lay)
    n = ss.mode_number(lay)
    h = -1j * p.kappa_ang * ss.embed_slots({ss.MODE: n}, lay)
    for k in range(p.atoms_per_cavity):
        h = h + (p.delta_ang - 1j * p.gamma_ang) * ss.embed_slots({k: ss.atom_op(2, 2)}, lay)
        h = h - (p.delta_prime_ang - p.delta_ang) * ss.embed_slots({k: ss.atom_op(0, 0)}, lay)
        h = h + p.g_ang * (ss.embed_slots({ss.MODE: a, k: ss.atom_op(2, 0)}, lay)
                           + ss.embed_slots({ss.MODE: a.conj().T, k: ss.atom_op(0, 2)}, lay))
        if laser_on and k == driven_atom:
            h = h + p.omega_ang * (ss.embed_slots({k: ss.atom_op(2, 1)}, lay)
                                   + ss.embed_slots({k: ss.atom_op(1, 2)}, lay))
    return ss.DenseOperator(lay, h, cavity)


def effective_hamiltonian_cavity(p: PhysicalParams, cavity: str, laser_on: bool,
                                 driven_atom: int = 0) -> ss.DenseOperator:
    """One cavity after adiabatic elimination of the excited level.

    The laser Stark shift z1 and the Raman exchange z3 act only on the
    driven atom while the laser is on; the photon-conditioned Stark
    shift z2 acts on every atom in |0> whenever a photon is present.
    The excited level stays in the basis but is left completely
    uncoupled, and the only damping is the cavity decay.
    """
    _validate_driven(p, driven_atom)
    r = derived_rates(p)
    lay = p.layout()
    a = ss.mode_annihilator(lay)
    n = ss.mode_number(lay)
    h = -1j * p.kappa_ang * ss.embed_slots({ss.MODE: n}, lay)
    for k in range(p.atoms_per_cavity):
        h = h - r.delta_r * ss.embed_slots({k: ss.atom_op(0, 0)}, lay)
        h = h - r.z2 * ss.embed_slots({ss.MODE: n, k: ss.atom_op(0, 0)}, lay)
        if laser_on and k == driven_atom:
            h = h - r.z1 * ss.embed_slots({k: ss.atom_op(1, 1)}, lay)
            h = h - r.z3 * (ss.embed_slots({ss.MODE: a, k: ss.atom_op(1, 0)}, lay)
                            + ss.embed_slots({ss.MODE: a.conj().T, k: ss.atom_op(0, 1)}, lay))
    return ss.DenseOperator(lay, h, cavity)


def _joint(builder, p, lasers, driven_atoms):
    la = builder(p, "A", lasers[0], driven_atoms[0])
    lb = builder(p, "B", lasers[1], driven_atoms[1])
    lay = p.layout()
    return ss.DenseOperator(
        lay,
        ss.embed_cavity(la.matrix, "A", lay) + ss.embed_cavity(lb.matrix, "B", lay))


def full_hamiltonian(p: PhysicalParams, lasers=(True, True),
                     driven_atoms=(0, 0)) -> ss.DenseOperator:
    """Joint conditional Hamiltonian, full detail, both cavities.

    ``lasers`` switches the drive per cavity.  The Hamiltonian never
    couples the cavities; the joint operator is the sum of the two
    embedded cavity blocks.
    """
    return _joint(full_hamiltonian_cavity, p, lasers, driven_atoms)


def effective_hamiltonian(p: PhysicalParams, lasers=(True, True),
                          driven_atoms=(0, 0)) -> ss.DenseOperator:
    """Joint conditional Hamiltonian after adiabatic elimination."""
    return _joint(effective_hamiltonian_cavity, p, lasers, driven_atoms)


def hamiltonian_cavity_builder(model_level: str):
    """Dispatch 'full' or 'effective' to the per-cavity builder."""
    if model_level == "full":
        return full_hamiltonian_cavity
    if model_level == "effective":
        return effective_hamiltonian_cavity
    raise ValueError(f"unknown model level {model_level!r}")


@dataclass(frozen=True, eq=False)
class JumpChannel:
    """One collapse operator of the unravelled master equation.

    The operator is stored as a sum of one-sided cavity terms,
    ``sum_i coeff_i * (L_i embedded in cavity_i)``, which is what the
    trajectory engine applies; the dense joint matrix is only
    materialized on demand (it is large for the multi-atom layout).
    """

    kind: str
    layout: ss.SpaceLayout
    terms: tuple  # ((cavity, matrix over one cavity's basis), ...) with coeffs folded in
    cavity: str | None = None
    atom_index: int | None = None

    def __post_init__(self):
        if self.kind not in (DETECTOR_PLUS, DETECTOR_MINUS, ATOM_LOSS):
            raise ValueError(f"unknown jump kind {self.kind!r}")
        d = self.layout.cavity_dim
        for cav, m in self.terms:
            if cav not in ss.CAVITIES or np.asarray(m).shape != (d, d):
                raise ss.DimensionError("malformed jump term")

    @property
    def epsilon(self) -> int | None:
        """Detector parity recorded by a click of this channel."""
        if self.kind == DETECTOR_PLUS:
            return +1
        if self.kind == DETECTOR_MINUS:
            return -1
        return None

    def apply_to_matrix(self, psi: np.ndarray) -> np.ndarray:
        """Apply to a joint state reshaped as (cavity_dim, cavity_dim)."""
        out = np.zeros_like(psi)
        for cav, m in self.terms:
            if cav == "A":
                out += m @ psi
            else:
                out += psi @ m.T
        return out

    def joint_operator(self) -> ss.DenseOperator:
        """Dense joint matrix; avoid for the multi-atom layout."""
        total = np.zeros((self.layout.joint_dim,) * 2, dtype=complex)
        for cav, m in self.terms:
            total += ss.embed_cavity(m, cav, self.layout)
        return ss.DenseOperator(self.layout, total)

    def describe(self) -> str:
        if self.kind == ATOM_LOSS:
            return f"{self.kind}({self.cavity}{self.atom_index})"
        return self.kind


def jump_channels(p: PhysicalParams) -> tuple:
    """Collapse operators: two detector channels, then per-atom loss channels.

    The beam splitter maps the two leaking cavity fields onto
    sqrt(kappa)*(a_A + a_B) and sqrt(kappa)*(a_A - a_B).  Spontaneous
    emission from the excited level is modelled as sqrt(2*gamma)|0><2|
    per atom (present only when gamma > 0); together the channels
    reproduce exactly twice the anti-Hermitian damping of the full
    Hamiltonian.
    """
    lay = p.layout()
    a_local = ss.embed_slots({ss.MODE: ss.mode_annihilator(lay)}, lay)
    rk = math.sqrt(p.kappa_ang)
    channels = [
        JumpChannel(DETECTOR_PLUS, lay, (("A", rk * a_local), ("B", rk * a_local))),
        JumpChannel(DETECTOR_MINUS, lay, (("A", rk * a_local), ("B", -rk * a_local))),
    ]
    if p.gamma > 0:
        rg = math.sqrt(2.0 * p.gamma_ang)
        for cav in ss.CAVITIES:
            for k in range(p.atoms_per_cavity):
                low = rg * ss.embed_slots({k: ss.atom_op(0, 2)}, lay)
                channels.append(JumpChannel(ATOM_LOSS, lay, ((cav, low),),
                                            cavity=cav, atom_index=k))
    return tuple(channels)


def detector_channels(channels) -> tuple:
    return tuple(c for c in channels if c.kind in (DETECTOR_PLUS, DETECTOR_MINUS))
