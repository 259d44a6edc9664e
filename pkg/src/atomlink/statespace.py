"""Tensor-product state space for two lossy driven cavities.

Two cavities, labelled A and B, each hold a fixed number of three-level
atoms (levels 0, 1, 2) and a single photon mode truncated at a
configurable occupation.  This module owns the basis convention, the
dense operator and state containers, embedding of local operators into
the joint space, and matrix-exponential propagators for the
non-Hermitian generators used elsewhere.

Basis convention (bit-exact, relied on by tests and serialization):
within one cavity the atoms come first in ascending site order, most
significant first, and the photon number is the least significant
digit.  Cavity A is more significant than cavity B.  For one atom per
cavity and photon cutoff 1 the cavity dimension is 6 and the joint
dimension 36; the joint index of ``|level_a, n_a; level_b, n_b>`` is
``(2*level_a + n_a)*6 + 2*level_b + n_b``.

All frequencies used by callers are angular (rad/us); this module is
agnostic and only multiplies matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.linalg

LEVELS = 3
CAVITIES = ("A", "B")

#: slot identifier for the photon mode of a cavity
MODE = "mode"

Site = tuple  # (cavity, atom index or MODE)


class DimensionError(ValueError):
    """Operator or state shape incompatible with the layout."""


@dataclass(frozen=True)
class SpaceLayout:
    """Shape of the two-cavity Hilbert space.

    Attributes:
        atoms_per_cavity: number of three-level atoms in each cavity.
        photon_cutoff: largest photon number kept in each cavity mode.
    """

    atoms_per_cavity: int = 1
    photon_cutoff: int = 1

    def __post_init__(self):
        if self.atoms_per_cavity < 1:
            raise ValueError("need at least one atom per cavity")
        if self.photon_cutoff < 1:
            raise ValueError("photon cutoff must be at least 1")

    @property
    def mode_dim(self) -> int:
        return self.photon_cutoff + 1

    @property
    def cavity_dim(self) -> int:
        return LEVELS ** self.atoms_per_cavity * self.mode_dim

    @property
    def joint_dim(self) -> int:
        return self.cavity_dim ** 2

    def slots(self) -> tuple:
        """Per-cavity slot order: atoms by site index, then the mode."""
        return tuple(range(self.atoms_per_cavity)) + (MODE,)

    def slot_dim(self, slot) -> int:
        return self.mode_dim if slot == MODE else LEVELS

    def cavity_index(self, levels: Sequence[int], photons: int) -> int:
        """Basis index within one cavity for given atom levels and photon number."""
        if len(levels) != self.atoms_per_cavity:
            raise DimensionError("wrong number of atom levels")
        idx = 0
        for lv in levels:
            if not 0 <= lv < LEVELS:
                raise ValueError(f"atom level {lv} out of range")
            idx = idx * LEVELS + lv
        if not 0 <= photons <= self.photon_cutoff:
            raise ValueError(f"photon number {photons} out of range")
        return idx * self.mode_dim + photons

    def joint_index(self, levels_a, photons_a, levels_b, photons_b) -> int:
        return (self.cavity_index(levels_a, photons_a) * self.cavity_dim
                + self.cavity_index(levels_b, photons_b))

    def joint_labels(self, index: int):
        """Inverse of joint_index.

        Returns ``(levels_a, photons_a, levels_b, photons_b)`` with the
        levels as tuples.
        """
        if not 0 <= index < self.joint_dim:
            raise ValueError("joint index out of range")
        idx_a, idx_b = divmod(index, self.cavity_dim)
        out = []
        for idx in (idx_a, idx_b):
            idx, n = divmod(idx, self.mode_dim)
            levels = []
            for _ in range(self.atoms_per_cavity):
                idx, lv = divmod(idx, LEVELS)
                levels.append(lv)
            out.append(tuple(reversed(levels)))
            out.append(n)
        return tuple(out)


def _as_matrix(op) -> np.ndarray:
    if isinstance(op, DenseOperator):
        return op.matrix
    return np.asarray(op, dtype=complex)


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense complex matrix over the joint basis or one cavity's basis.

    ``scope`` is "joint" for the full two-cavity space, or "A"/"B" for an
    operator living on a single cavity (used to keep the large multi-atom
    joint space out of memory; the two cavities are only ever coupled by
    jump operators, never by the Hamiltonian).
    """

    layout: SpaceLayout
    matrix: np.ndarray
    scope: str = "joint"

    def __post_init__(self):
        if self.scope not in ("joint", "A", "B"):
            raise ValueError(f"unknown scope {self.scope!r}")
        mat = np.ascontiguousarray(np.asarray(self.matrix, dtype=complex))
        dim = self.layout.joint_dim if self.scope == "joint" else self.layout.cavity_dim
        if mat.shape != (dim, dim):
            raise DimensionError(
                f"matrix shape {mat.shape} does not match {self.scope} dim {dim}")
        if not np.all(np.isfinite(mat.view(float))):
            raise ValueError("operator entries must be finite")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dag(self) -> "DenseOperator":
        return DenseOperator(self.layout, self.matrix.conj().T, self.scope)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        scale = max(np.abs(self.matrix).max(), 1.0)
        return np.abs(self.matrix - self.matrix.conj().T).max() <= tol * scale

    def _check_compatible(self, other: "DenseOperator"):
        if self.layout != other.layout or self.scope != other.scope:
            raise DimensionError("operators live on different spaces")

    def __add__(self, other: "DenseOperator") -> "DenseOperator":
        self._check_compatible(other)
        return DenseOperator(self.layout, self.matrix + other.matrix, self.scope)

    def __sub__(self, other: "DenseOperator") -> "DenseOperator":
        self._check_compatible(other)
        return DenseOperator(self.layout, self.matrix - other.matrix, self.scope)

    def __mul__(self, scalar) -> "DenseOperator":
        return DenseOperator(self.layout, self.matrix * complex(scalar), self.scope)

    __rmul__ = __mul__

    def __neg__(self) -> "DenseOperator":
        return self * (-1.0)

    def __matmul__(self, other: "DenseOperator") -> "DenseOperator":
        self._check_compatible(other)
        return DenseOperator(self.layout, self.matrix @ other.matrix, self.scope)

    def apply(self, state: "StateVector") -> "StateVector":
        if self.scope != "joint":
            raise DimensionError("only joint-scope operators act on joint states")
        if state.layout != self.layout:
            raise DimensionError("state layout mismatch")
        return StateVector(self.layout, self.matrix @ state.amplitudes)


def identity(layout: SpaceLayout, scope: str = "joint") -> DenseOperator:
    dim = layout.joint_dim if scope == "joint" else layout.cavity_dim
    return DenseOperator(layout, np.eye(dim, dtype=complex), scope)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Immutable amplitude vector over the joint basis."""

    layout: SpaceLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.ascontiguousarray(np.asarray(self.amplitudes, dtype=complex))
        if amp.shape != (self.layout.joint_dim,):
            raise DimensionError(
                f"amplitude shape {amp.shape} does not match joint dim "
                f"{self.layout.joint_dim}")
        if not np.all(np.isfinite(amp.view(float))):
            raise ValueError("amplitudes must be finite")
        amp.flags.writeable = False
        object.__setattr__(self, "amplitudes", amp)


def basis_state(layout: SpaceLayout, levels_a, photons_a, levels_b, photons_b) -> StateVector:
    amp = np.zeros(layout.joint_dim, dtype=complex)
    amp[layout.joint_index(levels_a, photons_a, levels_b, photons_b)] = 1.0
    return StateVector(layout, amp)


def product_state(layout: SpaceLayout, cavity_a: np.ndarray, cavity_b: np.ndarray) -> StateVector:
    """Joint state from one amplitude vector per cavity."""
    a = np.asarray(cavity_a, dtype=complex)
    b = np.asarray(cavity_b, dtype=complex)
    if a.shape != (layout.cavity_dim,) or b.shape != (layout.cavity_dim,):
        raise DimensionError("cavity vector has wrong dimension")
    return StateVector(layout, np.kron(a, b))


def inner(bra: StateVector, ket: StateVector) -> complex:
    """Hermitian inner product <bra|ket> (conjugate-linear in the first slot)."""
    if bra.layout != ket.layout:
        raise DimensionError("states live on different layouts")
    return complex(np.vdot(bra.amplitudes, ket.amplitudes))


def norm(state: StateVector) -> float:
    return float(np.linalg.norm(state.amplitudes))


def normalize(state: StateVector) -> StateVector:
    n = norm(state)
    if n < 1e-150:
        raise ValueError("cannot normalize a numerically null vector")
    return StateVector(state.layout, state.amplitudes / n)


def embed_in_cavity(local: np.ndarray, slot, layout: SpaceLayout) -> np.ndarray:
    """Embed a single-slot matrix into one cavity's basis by Kronecker products."""
    local = np.asarray(local, dtype=complex)
    want = layout.slot_dim(slot)
    if local.shape != (want, want):
        raise DimensionError(
            f"local operator shape {local.shape} does not fit slot {slot!r}")
    out = np.eye(1, dtype=complex)
    for s in layout.slots():
        out = np.kron(out, local if s == slot else np.eye(layout.slot_dim(s), dtype=complex))
    return out


def embed_slots(slot_matrices: dict, layout: SpaceLayout) -> np.ndarray:
    """Embed a product of single-slot operators into one cavity's basis.

    ``slot_matrices`` maps slot (atom index or MODE) to its local matrix;
    slots not listed get the identity.  Used for mixed atom-photon terms
    such as the Raman coupling.
    """
    out = np.eye(1, dtype=complex)
    for s in layout.slots():
        if s in slot_matrices:
            local = np.asarray(slot_matrices[s], dtype=complex)
            want = layout.slot_dim(s)
            if local.shape != (want, want):
                raise DimensionError(
                    f"local operator shape {local.shape} does not fit slot {s!r}")
        else:
            local = np.eye(layout.slot_dim(s), dtype=complex)
        out = np.kron(out, local)
    return out


def embed_cavity(cavity_matrix: np.ndarray, cavity: str, layout: SpaceLayout) -> np.ndarray:
    """Embed a cavity-local matrix into the joint basis (A is more significant)."""
    cavity_matrix = np.asarray(cavity_matrix, dtype=complex)
    d = layout.cavity_dim
    if cavity_matrix.shape != (d, d):
        raise DimensionError("cavity matrix has wrong dimension")
    eye = np.eye(d, dtype=complex)
    if cavity == "A":
        return np.kron(cavity_matrix, eye)
    if cavity == "B":
        return np.kron(eye, cavity_matrix)
    raise ValueError(f"unknown cavity {cavity!r}")


def lift(local_op, site: Site, layout: SpaceLayout) -> DenseOperator:
    """Lift a single-site operator to the joint space.

    ``site`` is a pair ``(cavity, slot)`` where cavity is "A" or "B" and
    slot is an atom index or ``MODE``.  ``local_op`` may be a plain array
    of the slot dimension or anything with a ``matrix`` attribute.
    """
    try:
        cavity, slot = site
    except (TypeError, ValueError):
        raise ValueError(f"site must be (cavity, slot), got {site!r}") from None
    if cavity not in CAVITIES:
        raise ValueError(f"unknown cavity {cavity!r}")
    if slot != MODE and slot not in range(layout.atoms_per_cavity):
        raise ValueError(f"unknown slot {slot!r}")
    local = _as_matrix(local_op)
    joint = embed_cavity(embed_in_cavity(local, slot, layout), cavity, layout)
    return DenseOperator(layout, joint, "joint")


def atom_op(i: int, j: int) -> np.ndarray:
    """Single-atom flip |i><j| on the three-level basis."""
    if not (0 <= i < LEVELS and 0 <= j < LEVELS):
        raise ValueError("atom level out of range")
    m = np.zeros((LEVELS, LEVELS), dtype=complex)
    m[i, j] = 1.0
    return m


def mode_annihilator(layout: SpaceLayout) -> np.ndarray:
    """Photon annihilation operator on the truncated mode basis."""
    d = layout.mode_dim
    m = np.zeros((d, d), dtype=complex)
    for n in range(1, d):
        m[n - 1, n] = np.sqrt(n)
    return m


def mode_number(layout: SpaceLayout) -> np.ndarray:
    return np.diag(np.arange(layout.mode_dim, dtype=complex))


def propagator(generator: DenseOperator, t: float) -> DenseOperator:
    """Time evolution operator exp(-i * generator * t).

    The generator may be non-Hermitian; the propagator is then
    contractive rather than unitary.
    """
    if not np.isfinite(t) or t < 0:
        raise ValueError("propagation time must be finite and non-negative")
    u = scipy.linalg.expm(-1j * generator.matrix * t)
    return DenseOperator(generator.layout, u, generator.scope)


def propagator_power_series(generator: DenseOperator, t: float,
                            tol: float = 1e-16, max_terms: int = 400) -> DenseOperator:
    """Reference propagator from a scaled and squared Taylor series.

    Independent of the library matrix exponential; used to cross-check
    it.  Slow, intended for small matrices in tests.
    """
    if not np.isfinite(t) or t < 0:
        raise ValueError("propagation time must be finite and non-negative")
    a = -1j * generator.matrix * t
    scale = np.abs(a).sum(axis=1).max()  # infinity norm
    squarings = max(0, int(np.ceil(np.log2(max(scale, 1e-300)))) + 1) if scale > 0.5 else 0
    b = a / (2 ** squarings)
    acc = np.eye(b.shape[0], dtype=complex)
    term = np.eye(b.shape[0], dtype=complex)
    for k in range(1, max_terms + 1):
        term = term @ b / k
        acc = acc + term
        if np.abs(term).max() <= tol * max(np.abs(acc).max(), 1.0):
            break
    else:
        raise RuntimeError("power series did not converge")
    for _ in range(squarings):
        acc = acc @ acc
    return DenseOperator(generator.layout, acc, generator.scope)
