"""Tensor-product state space over two-level atoms and truncated cavity modes.

Conventions (normative for all file output):

* Atom basis order is ``[g, e]`` with ``g=0``, ``e=1``.
* A cavity mode with cutoff ``c`` has basis ``|0>..|c>`` (dimension ``c+1``).
* Basis indexing is row-major with site 0 most significant::

      index = sum_j occ_j * prod_{l>j} dim_l

* States carry value semantics: every operation returns a new
  ``StateVector``; inputs are never mutated.

Subnormalized vectors (squared norm < 1) are legal and represent
conditional no-jump branches; their squared norm is the probability of
the conditioning event.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

NUMERIC_SLACK = 1e-12
DUMP_AMPLITUDE_FLOOR = 1e-14

G, E = 0, 1  # atom basis labels


class HilbertError(Exception):
    """Base class for state-space errors."""


class OutOfRangeOccupation(HilbertError):
    pass


class DimensionMismatch(HilbertError):
    pass


class TruncationOverflow(HilbertError):
    """A creation operator would push amplitude past a mode's cutoff."""


class NotAnAtomSite(HilbertError):
    pass


class NotACavityModeSite(HilbertError):
    pass


class LayoutMismatch(HilbertError):
    pass


class SiteKind(enum.Enum):
    ATOM = "atom"
    CAVITY_MODE = "cavity_mode"


@dataclass(frozen=True)
class SiteSpec:
    """One tensor factor: a two-level atom or a photon-number-truncated mode."""

    kind: SiteKind
    cutoff: int = 1

    def __post_init__(self):
        if self.kind is SiteKind.CAVITY_MODE and self.cutoff < 1:
            raise ValueError("cavity mode cutoff must be >= 1")

    @property
    def dim(self) -> int:
        if self.kind is SiteKind.ATOM:
            return 2
        return self.cutoff + 1


def atom_site() -> SiteSpec:
    return SiteSpec(SiteKind.ATOM)


def mode_site(cutoff: int = 1) -> SiteSpec:
    return SiteSpec(SiteKind.CAVITY_MODE, cutoff)


@dataclass(frozen=True)
class SystemLayout:
    """Ordered list of sites.

    Protocol layouts put atom sites first in party order (Alice = site 0,
    Bob = site 1, further receivers next), then cavity A, then cavity B.
    """

    sites: tuple[SiteSpec, ...]

    def __post_init__(self):
        if not self.sites:
            raise ValueError("layout must contain at least one site")

    @cached_property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.sites)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        # suffix products: stride of site j is prod of dims of sites > j
        out = [1] * len(self.dims)
        for j in range(len(self.dims) - 2, -1, -1):
            out[j] = out[j + 1] * self.dims[j + 1]
        return tuple(out)

    @cached_property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    @cached_property
    def atom_sites(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sites) if s.kind is SiteKind.ATOM)

    @cached_property
    def mode_sites(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sites) if s.kind is SiteKind.CAVITY_MODE)

    def index_of(self, occupations: Sequence[int]) -> int:
        if len(occupations) != len(self.sites):
            raise DimensionMismatch(
                f"expected {len(self.sites)} occupations, got {len(occupations)}"
            )
        idx = 0
        for occ, d, stride in zip(occupations, self.dims, self.strides):
            if not 0 <= occ < d:
                raise OutOfRangeOccupation(f"occupation {occ} out of range for dim {d}")
            idx += occ * stride
        return idx

    def occupations_of(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.dim:
            raise OutOfRangeOccupation(f"index {index} out of range for dim {self.dim}")
        occ = []
        for stride, d in zip(self.strides, self.dims):
            q, index = divmod(index, stride)
            occ.append(q)
        return tuple(occ)

    def site_kind(self, site: int) -> SiteKind:
        return self.sites[site].kind


def dimension(layout: SystemLayout) -> int:
    """Total Hilbert-space dimension (product of site dimensions)."""
    return layout.dim


@dataclass(frozen=True)
class StateVector:
    """Complex amplitude vector over a layout's basis.

    Amplitudes must be finite; squared norm of physical states lies in
    ``[0, 1 + NUMERIC_SLACK]`` (checked by :meth:`assert_physical`, not by
    the constructor, so that operator images like ``H|psi>`` remain
    representable).
    """

    layout: SystemLayout
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.layout.dim,):
            raise DimensionMismatch(
                f"amplitude vector of length {amps.shape} does not match layout dim {self.layout.dim}"
            )
        if not np.all(np.isfinite(amps.view(np.float64))):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "amplitudes", amps)

    def copy(self) -> "StateVector":
        return StateVector(self.layout, self.amplitudes.copy())

    def assert_physical(self) -> "StateVector":
        n2 = norm_sq(self)
        if n2 > 1.0 + NUMERIC_SLACK:
            raise ValueError(f"squared norm {n2} exceeds 1 + slack")
        return self


def basis_state(layout: SystemLayout, occupations: Sequence[int]) -> StateVector:
    """Unit vector on one occupation tuple."""
    amps = np.zeros(layout.dim, dtype=np.complex128)
    amps[layout.index_of(occupations)] = 1.0
    return StateVector(layout, amps)


def zero_state(layout: SystemLayout) -> StateVector:
    return StateVector(layout, np.zeros(layout.dim, dtype=np.complex128))


def norm_sq(state: StateVector) -> float:
    return float(np.real(np.vdot(state.amplitudes, state.amplitudes)))


def inner(a: StateVector, b: StateVector) -> complex:
    """Hermitian inner product <a|b>."""
    if a.layout != b.layout:
        raise LayoutMismatch("states live on different layouts")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def apply_site_operator(state: StateVector, site: int, matrix: np.ndarray) -> StateVector:
    """Apply a single-site operator: ``(I x ... x M x ... x I)|state>``."""
    dims = state.layout.dims
    if not 0 <= site < len(dims):
        raise DimensionMismatch(f"site {site} out of range")
    m = np.asarray(matrix, dtype=np.complex128)
    d = dims[site]
    if m.shape != (d, d):
        raise DimensionMismatch(f"matrix shape {m.shape} does not match site dim {d}")
    left = int(np.prod(dims[:site], dtype=np.int64))
    right = int(np.prod(dims[site + 1 :], dtype=np.int64))
    a = state.amplitudes.reshape(left, d, right)
    out = np.einsum("ij,ljr->lir", m, a)
    return StateVector(state.layout, out.reshape(-1))


def annihilation_matrix(dim: int) -> np.ndarray:
    """Truncated ``a``: maps ``|n> -> sqrt(n)|n-1>``."""
    m = np.zeros((dim, dim), dtype=np.complex128)
    for n in range(1, dim):
        m[n - 1, n] = np.sqrt(n)
    return m


def creation_matrix(dim: int) -> np.ndarray:
    """Truncated ``a^dag`` within the cutoff; see :func:`apply_creation`."""
    return annihilation_matrix(dim).conj().T


def apply_annihilation(state: StateVector, site: int) -> StateVector:
    if state.layout.site_kind(site) is not SiteKind.CAVITY_MODE:
        raise NotACavityModeSite(f"site {site} is not a cavity mode")
    return apply_site_operator(state, site, annihilation_matrix(state.layout.dims[site]))


def apply_creation(state: StateVector, site: int) -> StateVector:
    """Apply ``a^dag``; raises :class:`TruncationOverflow` if amplitude
    at the top Fock level would leave the truncated space."""
    if state.layout.site_kind(site) is not SiteKind.CAVITY_MODE:
        raise NotACavityModeSite(f"site {site} is not a cavity mode")
    d = state.layout.dims[site]
    if _top_level_weight(state, site) > NUMERIC_SLACK:
        raise TruncationOverflow(f"creation on site {site} would exceed cutoff {d - 1}")
    return apply_site_operator(state, site, creation_matrix(d))


def _top_level_weight(state: StateVector, site: int) -> float:
    dims = state.layout.dims
    left = int(np.prod(dims[:site], dtype=np.int64))
    right = int(np.prod(dims[site + 1 :], dtype=np.int64))
    a = state.amplitudes.reshape(left, dims[site], right)
    return float(np.sum(np.abs(a[:, -1, :]) ** 2))


class Message(enum.Enum):
    """Two-classical-bit payload and its encoding operation on Alice's atom."""

    I = "I"
    X = "X"
    IY = "iY"
    Z = "Z"

    @property
    def bits(self) -> tuple[int, int]:
        return _MESSAGE_BITS[self]

    @classmethod
    def from_bits(cls, bits: tuple[int, int]) -> "Message":
        return _BITS_MESSAGE[bits]

    @classmethod
    def from_name(cls, name: str) -> "Message":
        for m in cls:
            if m.value == name:
                return m
        raise ValueError(f"unknown message {name!r}; expected one of I, X, iY, Z")


_MESSAGE_BITS = {Message.I: (0, 0), Message.X: (0, 1), Message.IY: (1, 0), Message.Z: (1, 1)}
_BITS_MESSAGE = {v: k for k, v in _MESSAGE_BITS.items()}

MESSAGES = (Message.I, Message.X, Message.IY, Message.Z)

# Encoding matrices in the [g, e] basis. X swaps g<->e; Z flips the sign
# of g; iY is the composition flip-then-sign, fixed so that applying it to
# the GHZ state yields (|gee>-|egg>)/sqrt(2) with a leading plus sign.
_PAULI = {
    Message.I: np.eye(2, dtype=np.complex128),
    Message.X: np.array([[0, 1], [1, 0]], dtype=np.complex128),
    Message.Z: np.array([[-1, 0], [0, 1]], dtype=np.complex128),
    Message.IY: np.array([[0, 1], [-1, 0]], dtype=np.complex128),
}


def pauli_matrix(message: Message) -> np.ndarray:
    return _PAULI[message].copy()


def pauli_encode(state: StateVector, atom_site: int, message: Message) -> StateVector:
    """Apply the 2-bit encoding operation to one atom."""
    if state.layout.site_kind(atom_site) is not SiteKind.ATOM:
        raise NotAnAtomSite(f"site {atom_site} is not an atom")
    return apply_site_operator(state, atom_site, _PAULI[message])


def dump_state(state: StateVector) -> str:
    """Debug dump: ``index<TAB>occupation-tuple<TAB>re<TAB>im`` per line,
    amplitudes below 1e-14 omitted, indices ascending."""
    lines = []
    for idx in range(state.layout.dim):
        amp = state.amplitudes[idx]
        if abs(amp) < DUMP_AMPLITUDE_FLOOR:
            continue
        occ = ",".join(str(o) for o in state.layout.occupations_of(idx))
        lines.append(f"{idx}\t{occ}\t{float(amp.real)!r}\t{float(amp.imag)!r}")
    return "\n".join(lines)
