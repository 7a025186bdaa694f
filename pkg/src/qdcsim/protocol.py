"""End-to-end secure dense-coding pipeline.

One round: share an (N+1)-party GHZ state (plus two vacuum cavities),
branch into a security-check round with probability ``p_check``, otherwise
encode two classical bits on Alice's atom, map Alice's and Bob's atomic
excitations onto their cavities by simultaneous conditional evolution,
rotate the remaining receivers' atoms, and discriminate the two-mode
photonic state at a 50/50 beam splitter via Monte-Carlo wavefunction
trajectories (jump channels ``(a_A +- a_B)``, detectors D+/D-).

Photonic Bell-like states:

    psi_pm = (|01> pm |10>) / sqrt(2)
    phi_pm = (beta^2 |11> pm |00>) / sqrt(beta^4 + 1)

A single D+/D- click identifies psi+/psi-; the phi pair is not resolvable
by click counting, so those messages abort unless the idealized
photon-number-resolving mode is enabled, which performs an oracle
discrimination in the full four-state basis.

``k == 0`` is treated as the ideal-extraction limit of the detection
window: every photon present is eventually detected, with click times
drawn uniformly over the window (the k -> 0+ limit of the truncated
exponential arrival law).
"""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import hilbert
from .dynamics import PhysicalParams, evolve_conditional, transfer_time
from .hilbert import (
    G,
    E,
    Message,
    MESSAGES,
    SiteKind,
    StateVector,
    SystemLayout,
    apply_site_operator,
    atom_site,
    mode_site,
    norm_sq,
    pauli_encode,
)

CHANNEL_PLUS = "D+"
CHANNEL_MINUS = "D-"
DARK_PLUS = "darkD+"
DARK_MINUS = "darkD-"

PSI_PLUS = "psi+"
PSI_MINUS = "psi-"
PHI_PLUS = "phi+"
PHI_MINUS = "phi-"
BELL_LABELS = (PSI_PLUS, PSI_MINUS, PHI_PLUS, PHI_MINUS)

_TIE_RTOL = 1e-9
_SUPPORT_TOL = 1e-10


class UnexpectedPhotonSupport(hilbert.HilbertError):
    """State has weight outside the two-mode {00,01,10,11} subspace."""


@dataclass(frozen=True)
class DetectorModel:
    """Threshold detector pair: registration efficiency and per-window dark
    count probability (at most one dark event per detector per window)."""

    efficiency: float = 1.0
    dark_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValueError("dark_prob must lie in [0, 1)")


@dataclass(frozen=True)
class RoundConfig:
    """Knobs for one protocol round / batch.

    ``t_map=None`` resolves to the transfer time t* of ``params``.
    ``success_convention`` selects which reading of the analytic success
    probability :func:`success_probability_formula` reports.
    """

    params: PhysicalParams
    t_window: float
    n_receivers: int = 2
    p_check: float = 0.0
    t_map: float | None = None
    detector: DetectorModel = DetectorModel()
    success_convention: str = "survival"
    ideal_pnr: bool = False
    cutoff: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_receivers < 2:
            raise ValueError("n_receivers must be >= 2")
        if not 0.0 <= self.p_check <= 1.0:
            raise ValueError("p_check must lie in [0, 1]")
        if not self.t_window > 0:
            raise ValueError("t_window must be positive")
        if self.t_map is not None and not self.t_map > 0:
            raise ValueError("t_map must be positive")
        if self.success_convention not in ("survival", "integrated"):
            raise ValueError("success_convention must be 'survival' or 'integrated'")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")

    @property
    def n_parties(self) -> int:
        return self.n_receivers + 1


@dataclass(frozen=True)
class DetectionRecord:
    """Timestamped detector events within one window, times ascending.

    Dark channels are simulator ground truth; the receiver observes only
    which detector fired.
    """

    events: tuple[tuple[float, str], ...]
    window: float

    def counts(self) -> tuple[int, int]:
        """Observable click counts (n_plus, n_minus), darks included."""
        n_plus = sum(1 for _, ch in self.events if ch in (CHANNEL_PLUS, DARK_PLUS))
        n_minus = sum(1 for _, ch in self.events if ch in (CHANNEL_MINUS, DARK_MINUS))
        return n_plus, n_minus

    def has_real_click(self) -> bool:
        return any(ch in (CHANNEL_PLUS, CHANNEL_MINUS) for _, ch in self.events)


@dataclass(frozen=True)
class WindowResult:
    record: DetectionRecord
    state: StateVector
    jumped: bool
    photon_survived: bool


@dataclass(frozen=True)
class RoundOutcome:
    mode: str  # "check" | "encode"
    sent: Message | None = None
    receiver_bits: str | None = None
    detection: DetectionRecord | None = None
    decoded: Message | None = None  # None = abort in encode mode
    bell_label: str | None = None  # ideal-PNR mode only
    check_conclusive: bool | None = None
    check_passed: bool | None = None
    check_bases: str | None = None
    real_click: bool = False
    photon_survived: bool = False


@dataclass
class BatchStats:
    n_rounds: int
    n_encode: int
    n_check: int
    success_rate: float
    abort_rate: float
    confusion: list[list[int]]  # rows I,X,iY,Z; cols I,X,iY,Z,Abort
    check_pass_rate: float | None
    psi_click_rate: float | None
    psi_survival_rate: float | None
    wall_time_s: float


# ---------------------------------------------------------------------------
# layout and deterministic pipeline


def layout_for(n_parties: int, cutoff: int = 1) -> SystemLayout:
    """Atoms in party order (Alice, Bob, further receivers), then cavities A, B."""
    sites = tuple([atom_site()] * n_parties) + (mode_site(cutoff), mode_site(cutoff))
    return SystemLayout(sites)


def prepare_ghz(n_parties: int, cutoff: int = 1) -> StateVector:
    """(|e..e> + |g..g>)/sqrt(2) on the atoms, cavities in vacuum."""
    if n_parties < 2:
        raise ValueError("n_parties must be >= 2")
    layout = layout_for(n_parties, cutoff)
    amps = np.zeros(layout.dim, dtype=np.complex128)
    amps[layout.index_of((E,) * n_parties + (0, 0))] = 1.0 / math.sqrt(2.0)
    amps[layout.index_of((G,) * n_parties + (0, 0))] = 1.0 / math.sqrt(2.0)
    return StateVector(layout, amps)


def resolve_t_map(config: RoundConfig) -> float:
    return config.t_map if config.t_map is not None else _transfer_time_cached(config.params)


@lru_cache(maxsize=None)
def _transfer_time_cached(params: PhysicalParams) -> float:
    return transfer_time(params)


def map_to_cavities(state: StateVector, config: RoundConfig) -> StateVector:
    """Simultaneous conditional evolution of (Alice atom, cavity A) and
    (Bob atom, cavity B) for ``t_map``.

    At the default ``t_map = t*`` this sends |e> -> beta|g>|1> and leaves
    |g> dark on each pair, so both mapped atoms end in |g>, disentangled
    from the (A, B, remaining receivers) subsystem.
    """
    layout = state.layout
    if abs(norm_sq(state) - 1.0) > 1e-9:
        raise ValueError("map_to_cavities expects a normalized input state")
    mode_a, mode_b = layout.mode_sites[0], layout.mode_sites[1]
    for m in (mode_a, mode_b):
        if _occupied_weight(state, m) > 1e-12:
            raise ValueError("cavities must start in vacuum")
    t = resolve_t_map(config)
    dt = min(0.005 / max(config.params.delta_eff, config.params.k, 1e-300), t / 400.0)
    return evolve_conditional(state, [(0, mode_a), (1, mode_b)], config.params, t, dt)


def _occupied_weight(state: StateVector, site: int) -> float:
    dims = state.layout.dims
    left = int(np.prod(dims[:site], dtype=np.int64))
    right = int(np.prod(dims[site + 1 :], dtype=np.int64))
    a = state.amplitudes.reshape(left, dims[site], right)
    return float(np.sum(np.abs(a[:, 1:, :]) ** 2))


_ROTATION = np.array([[-1, 1], [1, 1]], dtype=np.complex128) / math.sqrt(2.0)
# |e> -> (|e>+|g>)/sqrt2, |g> -> (|e>-|g>)/sqrt2; involution (R^2 = I).


def receiver_rotation(state: StateVector, atom_index: int) -> StateVector:
    """Classical-field pulse rotating one receiver atom before readout."""
    if state.layout.site_kind(atom_index) is not SiteKind.ATOM:
        raise hilbert.NotAnAtomSite(f"site {atom_index} is not an atom")
    return apply_site_operator(state, atom_index, _ROTATION)


def rotated_receiver_sites(layout: SystemLayout) -> tuple[int, ...]:
    """All receivers except the flying-qubit holder (Bob, atom 1)."""
    return tuple(i for i in layout.atom_sites if i >= 2)


@lru_cache(maxsize=None)
def pipeline_state(config: RoundConfig, message: Message) -> StateVector:
    """Deterministic state entering the detection window for one message."""
    state = prepare_ghz(config.n_parties, config.cutoff)
    state = pauli_encode(state, 0, message)
    state = map_to_cavities(state, config)
    for site in rotated_receiver_sites(state.layout):
        state = receiver_rotation(state, site)
    state.amplitudes.flags.writeable = False
    return state


def pipeline_beta(config: RoundConfig) -> float:
    from .dynamics import alpha_beta

    return alpha_beta(config.params, resolve_t_map(config))[1]


# ---------------------------------------------------------------------------
# layout bookkeeping caches


@dataclass(frozen=True)
class _LayoutInfo:
    photon_numbers: np.ndarray  # total photons per basis index
    bit_codes: np.ndarray  # packed rotated-receiver bits per basis index
    bit_strings: tuple[str, ...]  # code -> "eg..." string
    mode_a: int
    mode_b: int
    receiver_sites: tuple[int, ...]
    # annihilation action per mode as gather arrays: dst <- coef * src
    ann_a: tuple[np.ndarray, np.ndarray, np.ndarray]
    ann_b: tuple[np.ndarray, np.ndarray, np.ndarray]


def _annihilation_action(layout: SystemLayout, site: int):
    src, dst, coef = [], [], []
    stride = layout.strides[site]
    for idx in range(layout.dim):
        occ = layout.occupations_of(idx)[site]
        if occ >= 1:
            src.append(idx)
            dst.append(idx - stride)
            coef.append(math.sqrt(occ))
    arrays = (
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(coef, dtype=np.float64),
    )
    for a in arrays:
        a.flags.writeable = False
    return arrays


@lru_cache(maxsize=None)
def _layout_info(layout: SystemLayout) -> _LayoutInfo:
    receivers = rotated_receiver_sites(layout)
    mode_a, mode_b = layout.mode_sites[0], layout.mode_sites[1]
    n = np.zeros(layout.dim, dtype=np.int64)
    codes = np.zeros(layout.dim, dtype=np.int64)
    for idx in range(layout.dim):
        occ = layout.occupations_of(idx)
        n[idx] = sum(occ[m] for m in layout.mode_sites)
        code = 0
        for site in receivers:
            code = (code << 1) | occ[site]
        codes[idx] = code
    m = len(receivers)
    strings = tuple(
        "".join("e" if (code >> (m - 1 - j)) & 1 else "g" for j in range(m))
        for code in range(2**m)
    )
    n.flags.writeable = False
    codes.flags.writeable = False
    return _LayoutInfo(
        n, codes, strings, mode_a, mode_b, receivers,
        _annihilation_action(layout, mode_a), _annihilation_action(layout, mode_b),
    )


def all_bit_strings(config: RoundConfig) -> tuple[str, ...]:
    return _layout_info(layout_for(config.n_parties, config.cutoff)).bit_strings


# ---------------------------------------------------------------------------
# photonic Bell decomposition


def _beamsplitter_raw(info: _LayoutInfo, amps: np.ndarray, sign: int) -> np.ndarray:
    src_a, dst_a, coef_a = info.ann_a
    src_b, dst_b, coef_b = info.ann_b
    out = np.zeros_like(amps)
    out[dst_a] += coef_a * amps[src_a]
    out[dst_b] += sign * coef_b * amps[src_b]
    out /= math.sqrt(2.0)
    return out


def _beamsplitter_apply(state: StateVector, sign: int) -> StateVector:
    """(a_A + sign * a_B)/sqrt(2) |state> (unscaled beam-splitter channel)."""
    info = _layout_info(state.layout)
    return StateVector(state.layout, _beamsplitter_raw(info, state.amplitudes, sign))


def jump_apply(state: StateVector, sign: int, k: float) -> StateVector:
    """Collapse operator C_pm = sqrt(2k) (a_A pm a_B)/sqrt(2).

    The sqrt(2k) scale makes ``sum C^dag C = 2k (n_A + n_B)``, matching the
    no-jump norm decay of one ``-i k a^dag a`` term per cavity.
    """
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    out = _beamsplitter_apply(state, sign)
    return StateVector(state.layout, math.sqrt(2.0 * k) * out.amplitudes)


@dataclass(frozen=True)
class _SectorData:
    """Two-mode amplitudes grouped by rotated-receiver bit string.

    Requires every atom outside the rotated receivers to sit in |g| and the
    photonic support inside {00,01,10,11}.
    """

    a00: dict[str, complex]
    a01: dict[str, complex]
    a10: dict[str, complex]
    a11: dict[str, complex]


def _sector_split(state: StateVector) -> _SectorData:
    layout = state.layout
    info = _layout_info(layout)
    fixed_atoms = tuple(i for i in layout.atom_sites if i not in info.receiver_sites)
    a = {key: {} for key in ("a00", "a01", "a10", "a11")}
    stray = 0.0
    for idx in np.flatnonzero(np.abs(state.amplitudes) > 0):
        amp = complex(state.amplitudes[idx])
        occ = layout.occupations_of(int(idx))
        na, nb = occ[info.mode_a], occ[info.mode_b]
        if na > 1 or nb > 1:
            stray += abs(amp) ** 2
            continue
        if any(occ[s] != G for s in fixed_atoms):
            if abs(amp) ** 2 > _SUPPORT_TOL:
                raise ValueError(
                    "mapped atoms retain excitation; pipeline states require t_map = t*"
                )
            continue
        bits = info.bit_strings[info.bit_codes[idx]]
        key = f"a{na}{nb}"
        a[key][bits] = a[key].get(bits, 0.0) + amp
    if stray > _SUPPORT_TOL:
        raise UnexpectedPhotonSupport(
            f"weight {stray:.3e} outside the four two-mode basis states"
        )
    return _SectorData(a["a00"], a["a01"], a["a10"], a["a11"])


def bell_weights(
    state: StateVector, config: RoundConfig
) -> dict[tuple[str, str], float]:
    """Expansion weights of a pipeline state in the photonic Bell-like basis,
    jointly with the rotated receivers' bit strings.

    The phi basis depends on beta(t_map) and is non-orthogonal for k > 0;
    weights are squared expansion coefficients, so they total norm_sq(state).
    """
    sectors = _sector_split(state)
    beta = pipeline_beta(config)
    beta2 = beta * beta
    if beta2 < 1e-30:
        raise ValueError("beta(t_map) vanishes; phi basis is degenerate")
    norm_phi = math.sqrt(beta2 * beta2 + 1.0)
    weights: dict[tuple[str, str], float] = {}
    for bits in all_bit_strings(config):
        a00 = sectors.a00.get(bits, 0.0)
        a01 = sectors.a01.get(bits, 0.0)
        a10 = sectors.a10.get(bits, 0.0)
        a11 = sectors.a11.get(bits, 0.0)
        psi_p = (a01 + a10) / math.sqrt(2.0)
        psi_m = (a01 - a10) / math.sqrt(2.0)
        phi_p = norm_phi * (a11 / beta2 + a00) / 2.0
        phi_m = norm_phi * (a11 / beta2 - a00) / 2.0
        weights[(PSI_PLUS, bits)] = abs(psi_p) ** 2
        weights[(PSI_MINUS, bits)] = abs(psi_m) ** 2
        weights[(PHI_PLUS, bits)] = abs(phi_p) ** 2
        weights[(PHI_MINUS, bits)] = abs(phi_m) ** 2
    return weights


# ---------------------------------------------------------------------------
# Monte-Carlo wavefunction detection window


def _nojump_crossing(
    sector_norms: np.ndarray, k: float, u: float, t_max: float
) -> float | None:
    """First t in (0, t_max] where the no-jump squared norm hits u.

    The norm is sum_n P_n x^n with x = exp(-2kt); for photon sectors up to
    n = 2 this is a quadratic in x, otherwise bisection.
    """
    n_max = len(sector_norms) - 1
    x_end = math.exp(-2.0 * k * t_max)
    norm_end = sum(p * x_end**n for n, p in enumerate(sector_norms))
    if norm_end >= u:
        return None
    if n_max <= 2:
        p0 = sector_norms[0]
        p1 = sector_norms[1] if n_max >= 1 else 0.0
        p2 = sector_norms[2] if n_max >= 2 else 0.0
        if p2 < 1e-300:
            x = (u - p0) / p1
        else:
            disc = p1 * p1 - 4.0 * p2 * (p0 - u)
            x = (-p1 + math.sqrt(max(disc, 0.0))) / (2.0 * p2)
        x = min(max(x, x_end), 1.0)
        return -math.log(x) / (2.0 * k)
    lo, hi = 0.0, t_max
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = sum(p * math.exp(-2.0 * k * n * mid) for n, p in enumerate(sector_norms))
        if val > u:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * t_max:
            break
    return 0.5 * (lo + hi)


def simulate_window(
    state: StateVector, config: RoundConfig, rng: np.random.Generator
) -> WindowResult:
    """Unravel the detection window for one trajectory.

    Draw u uniform; evolve the pure-decay no-jump state until its squared
    norm reaches u or the window elapses; on a jump pick the channel with
    probability proportional to <C_pm^dag C_pm>, apply it, and register a
    click with probability eta.  After each jump the state is renormalized
    and a fresh u is drawn.  Dark counts are superimposed per detector.

    For single-photon states the registered-click probability by time t is
    eta * (1 - exp(-2kt)) * (one-photon weight).
    """
    info = _layout_info(state.layout)
    psi, events, jumped, photon_survived = _window_raw(
        info, state.amplitudes.copy(), config, rng
    )
    record = DetectionRecord(tuple(events), config.t_window)
    return WindowResult(record, StateVector(state.layout, psi), jumped, photon_survived)


def _window_raw(
    info: _LayoutInfo, psi: np.ndarray, config: RoundConfig, rng: np.random.Generator
) -> tuple[np.ndarray, list, bool, bool]:
    k = config.params.k
    eta = config.detector.efficiency
    window = config.t_window
    n_vec = info.photon_numbers
    n_max = int(n_vec.max())

    events: list[tuple[float, str]] = []
    t = 0.0
    jumped = False
    photon_survived = False

    while True:
        sector_norms = np.bincount(n_vec, weights=np.abs(psi) ** 2, minlength=n_max + 1)
        total = float(sector_norms.sum())
        if total <= 1e-300:
            break
        u = rng.random()
        if u >= total:
            break
        if k == 0.0:
            # Ideal-extraction limit: photons always leave by window end,
            # arrival times uniform over the remaining window.
            photon_weight = total - float(sector_norms[0])
            if u >= photon_weight:
                break
            t_jump = t + rng.random() * (window - t)
        else:
            dt_jump = _nojump_crossing(sector_norms, k, u, window - t)
            if dt_jump is None:
                if not jumped:
                    photon_survived = bool(total - float(sector_norms[0]) > 1e-12)
                break
            t_jump = t + dt_jump
            psi = psi * np.exp(-k * n_vec * dt_jump)
        t = t_jump
        plus = _beamsplitter_raw(info, psi, +1)
        minus = _beamsplitter_raw(info, psi, -1)
        r_plus = float(np.real(np.vdot(plus, plus)))
        r_minus = float(np.real(np.vdot(minus, minus)))
        if r_plus + r_minus <= 0.0:
            break
        if rng.random() * (r_plus + r_minus) < r_plus:
            psi, channel, rate = plus, CHANNEL_PLUS, r_plus
        else:
            psi, channel, rate = minus, CHANNEL_MINUS, r_minus
        psi = psi / math.sqrt(rate)
        jumped = True
        if rng.random() < eta:
            events.append((t, channel))

    if k > 0.0:
        psi = psi * np.exp(-k * n_vec * (window - t))

    p_dc = config.detector.dark_prob
    for dark_channel in (DARK_PLUS, DARK_MINUS):
        if p_dc > 0.0 and rng.random() < p_dc:
            events.append((rng.random() * window, dark_channel))

    events.sort(key=lambda ev: ev[0])
    return psi, events, jumped, photon_survived


def sample_receiver_bits(
    state: StateVector, rng: np.random.Generator
) -> str:
    """Measure the rotated receivers' atoms in the computational basis.

    Sampled from the (normalized) given state; a numerically empty state
    yields uniform bits (lost-photon rounds leave receivers uncorrelated).
    """
    return _sample_bits_raw(_layout_info(state.layout), state.amplitudes, rng)


def _sample_bits_raw(
    info: _LayoutInfo, amps: np.ndarray, rng: np.random.Generator
) -> str:
    m = len(info.receiver_sites)
    weights = np.abs(amps) ** 2
    total = float(weights.sum())
    if total <= 1e-30:
        code = int(rng.integers(0, 2**m)) if m else 0
        return info.bit_strings[code]
    probs = np.bincount(info.bit_codes, weights=weights, minlength=2**m)
    code = int(np.searchsorted(np.cumsum(probs), rng.random() * total, side="right"))
    code = min(code, 2**m - 1)
    return info.bit_strings[code]


# ---------------------------------------------------------------------------
# analytic outcome model (decode tables, likelihoods, posteriors)


def _window_q(config: RoundConfig) -> float:
    """Per-photon probability of a jump within the window."""
    k = config.params.k
    if k == 0.0:
        return 1.0
    return 1.0 - math.exp(-2.0 * k * config.t_window)


@lru_cache(maxsize=None)
def outcome_distribution(
    config: RoundConfig, message: Message
) -> dict[tuple[tuple[int, int], str], float]:
    """Exact joint distribution of (observable click counts, receiver bits)
    for one message under the trajectory model, dark counts included.

    Sector bookkeeping (vacuum / psi+- / two-photon) is exact for pipeline
    states, whose photon sectors never superpose across a jump.
    """
    state = pipeline_state(config, message)
    sectors = _sector_split(state)
    eta = config.detector.efficiency
    p_dc = config.detector.dark_prob
    q = _window_q(config)
    s1 = 1.0 - q  # single-photon no-jump weight factor exp(-2kT)
    s2 = s1 * s1

    bit_strings = all_bit_strings(config)
    m = len(bit_strings)

    w0, wp, wm, w2 = {}, {}, {}, {}
    for bits in bit_strings:
        a01 = sectors.a01.get(bits, 0.0)
        a10 = sectors.a10.get(bits, 0.0)
        w0[bits] = abs(sectors.a00.get(bits, 0.0)) ** 2
        wp[bits] = abs((a01 + a10) / math.sqrt(2.0)) ** 2
        wm[bits] = abs((a01 - a10) / math.sqrt(2.0)) ** 2
        w2[bits] = abs(sectors.a11.get(bits, 0.0)) ** 2

    total_weight = sum(w0.values()) + sum(wp.values()) + sum(wm.values()) + sum(w2.values())
    deficit = max(0.0, 1.0 - total_weight)

    real: dict[tuple[tuple[int, int], str], float] = {}

    def add(counts: tuple[int, int], bits: str, p: float):
        if p > 0.0:
            key = (counts, bits)
            real[key] = real.get(key, 0.0) + p

    nojump = {
        bits: w0[bits] + (wp[bits] + wm[bits]) * s1 + w2[bits] * s2 for bits in bit_strings
    }
    n_t = sum(nojump.values())
    # No-jump residuals plus the transfer-loss deficit: no real clicks; bits
    # follow the residual state (uniform when it is numerically empty).
    for bits in bit_strings:
        share = nojump[bits] / n_t if n_t > 1e-300 else 1.0 / m
        add((0, 0), bits, nojump[bits] if n_t > 1e-300 else 0.0)
        add((0, 0), bits, deficit * share)

    for bits in bit_strings:
        # single-photon sectors: one jump with prob q, registered with eta
        add((1, 0), bits, wp[bits] * q * eta)
        add((0, 0), bits, wp[bits] * q * (1.0 - eta))
        add((0, 1), bits, wm[bits] * q * eta)
        add((0, 0), bits, wm[bits] * q * (1.0 - eta))
        # two-photon sector: jumps ~ Binom(2, q); all jumps share one sign
        # (the surviving single-photon state is the matching psi_pm), sign
        # +/- equiprobable; registrations independent with eta
        w = w2[bits]
        p_j1 = 2.0 * q * (1.0 - q)
        p_j2 = q * q
        add((0, 0), bits, w * p_j1 * (1.0 - eta))
        add((1, 0), bits, w * p_j1 * eta * 0.5)
        add((0, 1), bits, w * p_j1 * eta * 0.5)
        add((0, 0), bits, w * p_j2 * (1.0 - eta) ** 2)
        add((1, 0), bits, w * p_j2 * 2.0 * eta * (1.0 - eta) * 0.5)
        add((0, 1), bits, w * p_j2 * 2.0 * eta * (1.0 - eta) * 0.5)
        add((2, 0), bits, w * p_j2 * eta * eta * 0.5)
        add((0, 2), bits, w * p_j2 * eta * eta * 0.5)

    if p_dc == 0.0:
        return real
    out: dict[tuple[tuple[int, int], str], float] = {}
    dark = ((0, (1.0 - p_dc)), (1, p_dc))
    for ((r_plus, r_minus), bits), p in real.items():
        for d_plus, pd_plus in dark:
            for d_minus, pd_minus in dark:
                key = ((r_plus + d_plus, r_minus + d_minus), bits)
                out[key] = out.get(key, 0.0) + p * pd_plus * pd_minus
    return out


def _argmax_message(likelihoods: dict[Message, float]) -> Message | None:
    best = max(likelihoods.values())
    if best <= 1e-300:
        return None
    winners = [m for m in MESSAGES if likelihoods[m] >= best * (1.0 - _TIE_RTOL)]
    return winners[0] if len(winners) == 1 else None


@lru_cache(maxsize=None)
def build_decode_table(config: RoundConfig) -> dict[tuple[str, str], Message | None]:
    """Maximum-likelihood decode table, generated mechanically from the
    deterministic pipeline.

    Honest mode keys: (D+ | D- | none, receiver bits) from the psi-branch
    weights; ties and unsupported outcomes map to None (abort).  Ideal-PNR
    mode keys: (Bell label, receiver bits) over the full four-state basis.
    """
    weights = {msg: bell_weights(pipeline_state(config, msg), config) for msg in MESSAGES}
    table: dict[tuple[str, str], Message | None] = {}
    if config.ideal_pnr:
        for label in BELL_LABELS:
            for bits in all_bit_strings(config):
                table[(label, bits)] = _argmax_message(
                    {m: weights[m][(label, bits)] for m in MESSAGES}
                )
        return table
    for channel, label in ((CHANNEL_PLUS, PSI_PLUS), (CHANNEL_MINUS, PSI_MINUS)):
        for bits in all_bit_strings(config):
            table[(channel, bits)] = _argmax_message(
                {m: weights[m][(label, bits)] for m in MESSAGES}
            )
    for bits in all_bit_strings(config):
        table[("none", bits)] = None
    return table


@lru_cache(maxsize=None)
def _ml_lookup(config: RoundConfig) -> dict[tuple[tuple[int, int], str], Message | None]:
    dists = {m: outcome_distribution(config, m) for m in MESSAGES}
    keys = set()
    for d in dists.values():
        keys.update(d.keys())
    return {
        key: _argmax_message({m: dists[m].get(key, 0.0) for m in MESSAGES}) for key in keys
    }


def decode(config: RoundConfig, counts: tuple[int, int], bits: str) -> Message | None:
    """Decode one window: single-click windows go through the decode table;
    multi-click windows fall back to exact maximum likelihood; irreducible
    ties abort."""
    table = build_decode_table(config)
    n_plus, n_minus = counts
    if n_plus + n_minus == 0:
        return None
    if (n_plus, n_minus) == (1, 0):
        return table[(CHANNEL_PLUS, bits)]
    if (n_plus, n_minus) == (0, 1):
        return table[(CHANNEL_MINUS, bits)]
    return _ml_lookup(config).get((counts, bits))


# ---------------------------------------------------------------------------
# GHZ parity check rounds (protocol step 2)

_BASIS_ROTATIONS = {
    # rows are the target-basis bras; computational outcome 0 maps to +1
    "x": np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2.0),
    "y": np.array([[1, -1j], [1, 1j]], dtype=np.complex128) / math.sqrt(2.0),
}


def measure_atom(
    state: StateVector, site: int, rng: np.random.Generator, basis: str = "z"
) -> tuple[int, StateVector]:
    """Projective measurement of one atom; returns (occupation outcome,
    collapsed renormalized state).  Basis 'x'/'y' measures the respective
    Pauli; the returned outcome 0 corresponds to eigenvalue +1."""
    if state.layout.site_kind(site) is not SiteKind.ATOM:
        raise hilbert.NotAnAtomSite(f"site {site} is not an atom")
    work = state if basis == "z" else apply_site_operator(state, site, _BASIS_ROTATIONS[basis])
    dims = work.layout.dims
    left = int(np.prod(dims[:site], dtype=np.int64))
    right = int(np.prod(dims[site + 1 :], dtype=np.int64))
    shaped = work.amplitudes.reshape(left, 2, right)
    p0 = float(np.sum(np.abs(shaped[:, 0, :]) ** 2))
    total = float(np.sum(np.abs(shaped) ** 2))
    outcome = 0 if rng.random() * total < p0 else 1
    collapsed = np.zeros_like(shaped)
    collapsed[:, outcome, :] = shaped[:, outcome, :]
    norm = math.sqrt(p0 if outcome == 0 else total - p0)
    collapsed = collapsed / norm
    out = StateVector(work.layout, collapsed.reshape(-1))
    if basis != "z":
        out = apply_site_operator(out, site, _BASIS_ROTATIONS[basis].conj().T)
    return outcome, out


def ghz_expected_parity(n_y: int) -> int | None:
    """Expected product of x/y outcomes on a GHZ state; None = inconclusive."""
    if n_y % 2 == 1:
        return None
    return +1 if n_y % 4 == 0 else -1


@dataclass(frozen=True)
class _CheckContext:
    layout: SystemLayout  # atoms-only layout used for check rounds
    ghz: np.ndarray
    rotations: tuple[np.ndarray, ...]  # joint x/y rotation per basis combo
    bases: tuple[str, ...]  # combo index -> "xyx..." string
    parity: np.ndarray  # outcome index -> product of +-1 outcomes
    expected: tuple[int | None, ...]  # combo index -> expected parity


@lru_cache(maxsize=None)
def _check_context(n_parties: int) -> _CheckContext:
    layout = SystemLayout((atom_site(),) * n_parties)
    ghz = np.zeros(layout.dim, dtype=np.complex128)
    ghz[0] = ghz[-1] = 1.0 / math.sqrt(2.0)
    ghz.flags.writeable = False
    rotations = []
    bases = []
    expected = []
    for combo in range(2**n_parties):
        names = ["y" if (combo >> (n_parties - 1 - j)) & 1 else "x" for j in range(n_parties)]
        u = np.array([[1.0]], dtype=np.complex128)
        for b in names:
            u = np.kron(u, _BASIS_ROTATIONS[b])
        u.flags.writeable = False
        rotations.append(u)
        bases.append("".join(names))
        expected.append(ghz_expected_parity(names.count("y")))
    parity = np.array(
        [1 - 2 * (bin(i).count("1") % 2) for i in range(layout.dim)], dtype=np.int64
    )
    parity.flags.writeable = False
    return _CheckContext(layout, ghz, tuple(rotations), tuple(bases), parity, tuple(expected))


def run_check_round(
    config: RoundConfig,
    rng: np.random.Generator,
    tamper: Callable[[StateVector, np.random.Generator], StateVector] | None = None,
) -> RoundOutcome:
    """One security-check round: every party measures its atom in a random
    x/y basis; conclusive basis multisets must reproduce the GHZ parity.

    Check rounds live on an atoms-only layout (the cavities stay in vacuum
    and never participate)."""
    ctx = _check_context(config.n_parties)
    amps = ctx.ghz
    if tamper is not None:
        amps = tamper(StateVector(ctx.layout, amps.copy()), rng).amplitudes
    combo = 0
    for _ in range(config.n_parties):
        combo = (combo << 1) | int(rng.integers(0, 2))
    rotated = ctx.rotations[combo] @ amps
    probs = np.abs(rotated) ** 2
    total = float(probs.sum())
    outcome = int(np.searchsorted(np.cumsum(probs), rng.random() * total, side="right"))
    outcome = min(outcome, ctx.layout.dim - 1)
    product = int(ctx.parity[outcome])
    expected = ctx.expected[combo]
    conclusive = expected is not None
    passed = bool(product == expected) if conclusive else True
    return RoundOutcome(
        mode="check",
        check_conclusive=conclusive,
        check_passed=passed,
        check_bases=ctx.bases[combo],
    )


# ---------------------------------------------------------------------------
# rounds and batches


def round_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream per (seed, round index)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _RoundStreams:
    """Cheap per-round Philox streams, bit-identical to :func:`round_rng`.

    Reuses one bit generator and rewrites its (key, counter) state per
    round, avoiding the OS-entropy draw hidden in Philox construction.
    Not thread-safe: each worker chunk owns one instance.
    """

    def __init__(self, seed: int):
        self._bg = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self._state = self._bg.state
        self._state["state"]["key"][0] = seed & 0xFFFFFFFFFFFFFFFF
        self._seed = seed

    def rng(self, index: int) -> np.random.Generator:
        st = self._state
        st["state"]["counter"][:] = 0
        st["state"]["key"][1] = index & 0xFFFFFFFFFFFFFFFF
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bg.state = st
        return np.random.Generator(self._bg)


def _sample_ideal_pnr(
    config: RoundConfig, message: Message, rng: np.random.Generator
) -> tuple[str | None, str | None]:
    """Oracle four-state discrimination: sample (Bell label, bits) with the
    exact branch weights; remaining probability mass is a lost round."""
    weights = bell_weights(pipeline_state(config, message), config)
    u = rng.random()
    acc = 0.0
    for label in BELL_LABELS:
        for bits in all_bit_strings(config):
            acc += weights[(label, bits)]
            if u < acc:
                return label, bits
    return None, None


def _encode_round(
    config: RoundConfig, sent: Message, rng: np.random.Generator
) -> RoundOutcome:
    state = pipeline_state(config, sent)

    if config.ideal_pnr:
        label, bits = _sample_ideal_pnr(config, sent, rng)
        if label is None:
            info = _layout_info(state.layout)
            bits = info.bit_strings[int(rng.integers(0, len(info.bit_strings)))]
            decoded = None
        else:
            decoded = build_decode_table(config)[(label, bits)]
        record = DetectionRecord((), config.t_window)
        return RoundOutcome(
            mode="encode",
            sent=sent,
            receiver_bits=bits,
            detection=record,
            decoded=decoded,
            bell_label=label,
        )

    info = _layout_info(state.layout)
    psi, events, jumped, photon_survived = _window_raw(
        info, state.amplitudes.copy(), config, rng
    )
    record = DetectionRecord(tuple(events), config.t_window)
    bits = _sample_bits_raw(info, psi, rng)
    decoded = decode(config, record.counts(), bits)
    return RoundOutcome(
        mode="encode",
        sent=sent,
        receiver_bits=bits,
        detection=record,
        decoded=decoded,
        real_click=record.has_real_click(),
        photon_survived=photon_survived,
    )


def run_round(
    config: RoundConfig,
    message: Message | str = "random",
    rng: np.random.Generator | None = None,
) -> RoundOutcome:
    """One full protocol round (check branch with probability p_check,
    otherwise encode/transfer/detect/decode)."""
    if rng is None:
        rng = round_rng(config.seed, 0)
    if rng.random() < config.p_check:
        return run_check_round(config, rng)
    if message == "random":
        sent = MESSAGES[int(rng.integers(0, 4))]
    elif isinstance(message, Message):
        sent = message
    else:
        sent = Message.from_name(str(message))
    return _encode_round(config, sent, rng)


_MSG_INDEX = {m: i for i, m in enumerate(MESSAGES)}


def _run_chunk(
    config: RoundConfig,
    seed: int,
    start: int,
    stop: int,
    messages: tuple[Message, ...],
    keep_outcomes: bool = False,
) -> dict:
    confusion = np.zeros((4, 5), dtype=np.int64)
    n_check = check_pass = check_concl = 0
    psi_rounds = psi_clicks = psi_survived = 0
    outcomes = []
    streams = _RoundStreams(seed)
    for i in range(start, stop):
        rng = streams.rng(i)
        if rng.random() < config.p_check:
            out = run_check_round(config, rng)
            n_check += 1
            if out.check_conclusive:
                check_concl += 1
                check_pass += int(out.check_passed)
        else:
            sent = messages[int(rng.integers(0, len(messages)))]
            out = _encode_round(config, sent, rng)
            col = 4 if out.decoded is None else _MSG_INDEX[out.decoded]
            confusion[_MSG_INDEX[sent], col] += 1
            if sent in (Message.X, Message.IY):
                psi_rounds += 1
                psi_clicks += int(out.real_click)
                psi_survived += int(out.photon_survived)
        if keep_outcomes:
            outcomes.append(out)
    return {
        "confusion": confusion,
        "n_check": n_check,
        "check_pass": check_pass,
        "check_concl": check_concl,
        "psi_rounds": psi_rounds,
        "psi_clicks": psi_clicks,
        "psi_survived": psi_survived,
        "outcomes": outcomes,
    }


def run_batch(
    config: RoundConfig,
    n_rounds: int,
    seed: int | None = None,
    threads: int = 1,
    messages: Sequence[Message] | None = None,
    on_round: Callable[[int, RoundOutcome], None] | None = None,
) -> BatchStats:
    """Run many rounds with per-round counter-based random streams.

    Output is a pure function of (config, n_rounds, seed, messages): chunks
    may run on any number of threads, aggregation happens in fixed round
    order.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if seed is None:
        seed = config.seed
    msgs = tuple(messages) if messages is not None else MESSAGES
    # warm the per-config caches before branching into threads
    for m in msgs:
        outcome_distribution(config, m)
    build_decode_table(config)

    t0 = time.perf_counter()
    chunk = 2048
    bounds = [(s, min(s + chunk, n_rounds)) for s in range(0, n_rounds, chunk)]
    keep = on_round is not None
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(lambda b: _run_chunk(config, seed, b[0], b[1], msgs, keep), bounds)
            )
    else:
        results = [_run_chunk(config, seed, lo, hi, msgs, keep) for lo, hi in bounds]

    confusion = np.zeros((4, 5), dtype=np.int64)
    n_check = check_pass = check_concl = 0
    psi_rounds = psi_clicks = psi_survived = 0
    for (lo, _), res in zip(bounds, results):
        confusion += res["confusion"]
        n_check += res["n_check"]
        check_pass += res["check_pass"]
        check_concl += res["check_concl"]
        psi_rounds += res["psi_rounds"]
        psi_clicks += res["psi_clicks"]
        psi_survived += res["psi_survived"]
        if on_round is not None:
            for j, out in enumerate(res["outcomes"]):
                on_round(lo + j, out)
    wall = time.perf_counter() - t0

    n_encode = n_rounds - n_check
    correct = int(sum(confusion[i, i] for i in range(4)))
    aborts = int(confusion[:, 4].sum())
    return BatchStats(
        n_rounds=n_rounds,
        n_encode=n_encode,
        n_check=n_check,
        success_rate=correct / n_encode if n_encode else 0.0,
        abort_rate=aborts / n_encode if n_encode else 0.0,
        confusion=confusion.tolist(),
        check_pass_rate=check_pass / check_concl if check_concl else None,
        psi_click_rate=psi_clicks / psi_rounds if psi_rounds else None,
        psi_survival_rate=psi_survived / psi_rounds if psi_rounds else None,
        wall_time_s=wall,
    )


def success_probability_formula(config: RoundConfig) -> float:
    """Analytic success probability beta^2 * f(2k t_window): the 'survival'
    convention reads the exponential as photon survival, 'integrated' as the
    probability the photon has been emitted (and detected) in the window."""
    beta = pipeline_beta(config)
    decay = math.exp(-2.0 * config.params.k * config.t_window)
    if config.success_convention == "survival":
        return beta * beta * decay
    return beta * beta * (1.0 - decay)


def run_sweep(
    config: RoundConfig,
    t_windows: Sequence[float],
    n_rounds: int,
    seed: int | None = None,
    threads: int = 1,
) -> list[dict]:
    """Detection-window sweep: both analytic conventions next to the
    Monte-Carlo click-rate estimate for a fixed psi-branch message."""
    if not t_windows:
        raise ValueError("sweep grid must be nonempty")
    rows = []
    for t_w in t_windows:
        cfg = dataclasses.replace(config, t_window=float(t_w))
        stats = run_batch(cfg, n_rounds, seed=seed, threads=threads, messages=(Message.X,))
        p = stats.psi_click_rate if stats.psi_click_rate is not None else 0.0
        n = stats.n_encode
        rows.append(
            {
                "t_window": float(t_w),
                "formula_survival": success_probability_formula(
                    dataclasses.replace(cfg, success_convention="survival")
                ),
                "formula_integrated": success_probability_formula(
                    dataclasses.replace(cfg, success_convention="integrated")
                ),
                "mc_estimate": p,
                "mc_stderr": math.sqrt(p * (1.0 - p) / n) if n else 0.0,
            }
        )
    return rows
