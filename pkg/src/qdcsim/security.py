"""Quantitative security analysis.

Three layers:

* exact Bayesian posteriors over the four messages for partial views
  (who sees the detectors, who sees which receiver atoms), computed by
  enumeration from the analytic outcome distribution -- no sampling;
* Monte-Carlo guessing games ("cheat experiments") whose empirical rates
  must converge to the posterior-optimal rates;
* the GHZ x/y parity check of protocol step 2, with intercept-resend
  eavesdropper models and both exact and Monte-Carlo detection rates.

Guessing games use uniform message priors and maximum-posterior guessing;
ties are broken uniformly at random among the tied messages (enumerated in
fixed message order, so the random stream is reproducible).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import protocol
from .hilbert import HilbertError, Message, MESSAGES, StateVector
from .protocol import RoundConfig


class InconsistentObservation(HilbertError):
    """Observation has zero likelihood under every message."""


@dataclass(frozen=True)
class ViewSpec:
    """Who knows what: detector outcomes and/or a subset of receiver atoms."""

    sees_clicks: bool
    sees_bits: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sees_bits", tuple(sorted(self.sees_bits)))


@dataclass(frozen=True)
class Observation:
    """Concrete coordinates for a view: click counts (n_plus, n_minus) if
    visible, and (receiver site, bit) pairs for visible atoms."""

    clicks: tuple[int, int] | None = None
    bits: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(sorted(self.bits)))


@dataclass(frozen=True)
class EveModel:
    """Intercept-resend attack models.

    ``intercept_resend_atom`` measures one GHZ atom (z or x basis) during
    distribution and forwards the collapsed state; it is caught by the
    parity check.  ``intercept_resend_photon`` measures cavity A's photon
    number before the window, destroying psi+- coherence; it is caught by
    decode-statistic anomalies in encode rounds.
    """

    strategy: str = "none"
    basis: str | None = None
    target: int = 0

    def __post_init__(self):
        if self.strategy not in ("none", "intercept_resend_atom", "intercept_resend_photon"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "intercept_resend_atom" and self.basis not in ("z", "x"):
            raise ValueError("atom intercept-resend requires basis 'z' or 'x'")


@dataclass
class CheatResult:
    n_rounds: int
    n_clicked: int
    rate_all: float
    rate_given_click: float | None
    stderr_all: float
    stderr_given_click: float | None


@dataclass
class EveResult:
    n_rounds: int
    conclusive_rounds: int
    violations: int
    detection_rate: float | None
    stderr: float | None


# ---------------------------------------------------------------------------
# exact posteriors


def _site_positions(config: RoundConfig) -> dict[int, int]:
    layout = protocol.layout_for(config.n_parties, config.cutoff)
    return {site: pos for pos, site in enumerate(protocol.rotated_receiver_sites(layout))}


def _consistent(obs: Observation, counts: tuple[int, int], bits: str,
                positions: dict[int, int]) -> bool:
    if obs.clicks is not None and obs.clicks != counts:
        return False
    for site, bit in obs.bits:
        if bits[positions[site]] != bit:
            return False
    return True


def observation_likelihoods(
    obs: Observation, config: RoundConfig,
    messages: Sequence[Message] = MESSAGES,
) -> dict[Message, float]:
    """P(observation | message), marginalized over unobserved coordinates."""
    positions = _site_positions(config)
    for site, _ in obs.bits:
        if site not in positions:
            raise ValueError(f"site {site} is not a rotated receiver atom")
    out = {}
    for m in messages:
        dist = protocol.outcome_distribution(config, m)
        out[m] = sum(
            p for (counts, bits), p in dist.items()
            if _consistent(obs, counts, bits, positions)
        )
    return out


def exact_posterior(
    view: ViewSpec, observed: Observation, config: RoundConfig,
    messages: Sequence[Message] = MESSAGES,
) -> dict[Message, float]:
    """Uniform-prior posterior over messages given a view's observation."""
    if view.sees_clicks != (observed.clicks is not None):
        raise ValueError("observation does not match the view's click visibility")
    seen = {site for site, _ in observed.bits}
    if seen != set(view.sees_bits):
        raise ValueError("observation does not match the view's visible atoms")
    likes = observation_likelihoods(observed, config, messages)
    total = sum(likes.values())
    if total <= 1e-300:
        raise InconsistentObservation(f"observation {observed} impossible for all messages")
    return {m: likes[m] / total for m in messages}


def _project(view: ViewSpec, counts: tuple[int, int], bits: str,
             positions: dict[int, int]) -> Observation:
    return Observation(
        clicks=counts if view.sees_clicks else None,
        bits=tuple((site, bits[positions[site]]) for site in view.sees_bits),
    )


def view_distribution(
    view: ViewSpec, config: RoundConfig, messages: Sequence[Message] = MESSAGES,
) -> dict[Observation, dict[Message, float]]:
    """Joint P(observation, message) under a uniform prior on ``messages``."""
    positions = _site_positions(config)
    prior = 1.0 / len(messages)
    joint: dict[Observation, dict[Message, float]] = {}
    for m in messages:
        for (counts, bits), p in protocol.outcome_distribution(config, m).items():
            obs = _project(view, counts, bits, positions)
            joint.setdefault(obs, {msg: 0.0 for msg in messages})[m] += prior * p
    return joint


def optimal_guess_rate(
    view: ViewSpec, config: RoundConfig,
    messages: Sequence[Message] = MESSAGES, given_click: bool = False,
) -> float:
    """Best achievable guess rate for the view (maximum-posterior strategy),
    optionally conditioned on at least one observable click."""
    joint = view_distribution(view, config, messages)
    if given_click and not view.sees_clicks:
        raise ValueError("cannot condition on clicks for a view that cannot see them")
    num = den = 0.0
    for obs, per_message in joint.items():
        if given_click and sum(obs.clicks) == 0:
            continue
        num += max(per_message.values())
        den += sum(per_message.values())
    return num / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# Monte-Carlo guessing game


def _guess(posterior: dict[Message, float], rng: np.random.Generator) -> Message:
    best = max(posterior.values())
    tied = [m for m in posterior if posterior[m] >= best * (1.0 - 1e-12)]
    if len(tied) == 1:
        return tied[0]
    return tied[int(rng.integers(0, len(tied)))]


def cheat_experiment(
    cheater: ViewSpec,
    config: RoundConfig,
    n_rounds: int,
    seed: int,
    messages: Sequence[Message] = MESSAGES,
) -> CheatResult:
    """Guessing game: honest encode rounds, the cheater guesses from its
    partial view via maximum posterior."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    positions = _site_positions(config)
    posteriors = {
        obs: {m: p / max(sum(per.values()), 1e-300) for m, p in per.items()}
        for obs, per in view_distribution(cheater, config, messages).items()
    }
    cfg = dataclasses.replace(config, p_check=0.0)
    msgs = tuple(messages)
    hits_all = hits_click = n_click = 0
    streams = protocol._RoundStreams(seed)
    for i in range(n_rounds):
        rng = streams.rng(i)
        sent = msgs[int(rng.integers(0, len(msgs)))]
        out = protocol.run_round(cfg, sent, rng)
        counts = out.detection.counts()
        obs = _project(cheater, counts, out.receiver_bits, positions)
        posterior = posteriors.get(obs)
        if posterior is None:  # unmodeled fluke outcome: guess blind
            posterior = {m: 1.0 / len(msgs) for m in msgs}
        guess = _guess(posterior, rng)
        hit = int(guess == sent)
        hits_all += hit
        if sum(counts) > 0:
            n_click += 1
            hits_click += hit
    rate_all = hits_all / n_rounds
    result_click = hits_click / n_click if n_click else None
    return CheatResult(
        n_rounds=n_rounds,
        n_clicked=n_click,
        rate_all=rate_all,
        rate_given_click=result_click,
        stderr_all=math.sqrt(max(rate_all * (1 - rate_all), 0.0) / n_rounds),
        stderr_given_click=(
            math.sqrt(max(result_click * (1 - result_click), 0.0) / n_click)
            if n_click else None
        ),
    )


# ---------------------------------------------------------------------------
# eavesdropping


def _atom_tamper(eve: EveModel):
    def tamper(state: StateVector, rng: np.random.Generator) -> StateVector:
        _, collapsed = protocol.measure_atom(state, eve.target, rng, eve.basis)
        return collapsed

    return tamper


def _measure_mode_fock(
    state: StateVector, site: int, rng: np.random.Generator
) -> StateVector:
    """Projective photon-number measurement on one mode (collapse, renormalize)."""
    dims = state.layout.dims
    left = int(np.prod(dims[:site], dtype=np.int64))
    right = int(np.prod(dims[site + 1 :], dtype=np.int64))
    shaped = state.amplitudes.reshape(left, dims[site], right)
    probs = np.array([float(np.sum(np.abs(shaped[:, n, :]) ** 2)) for n in range(dims[site])])
    total = probs.sum()
    u = rng.random() * total
    outcome = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    outcome = min(outcome, dims[site] - 1)
    collapsed = np.zeros_like(shaped)
    collapsed[:, outcome, :] = shaped[:, outcome, :] / math.sqrt(probs[outcome])
    return StateVector(state.layout, collapsed.reshape(-1))


def eavesdrop_experiment(
    eve: EveModel, config: RoundConfig, n_check_rounds: int, seed: int
) -> EveResult:
    """Detection statistics against one eavesdropper model.

    Atom attacks are probed by GHZ parity-check rounds; the photon attack by
    encode rounds with known messages, where a wrong (non-abort) decode
    counts as a violation.
    """
    if n_check_rounds < 1:
        raise ValueError("n_check_rounds must be >= 1")
    conclusive = violations = 0
    if eve.strategy == "intercept_resend_photon":
        cfg = dataclasses.replace(config, p_check=0.0)
        layout = protocol.layout_for(config.n_parties, config.cutoff)
        info_mode_a = layout.mode_sites[0]
        psi_messages = (Message.X, Message.IY)
        streams = protocol._RoundStreams(seed)
        for i in range(n_check_rounds):
            rng = streams.rng(i)
            sent = psi_messages[int(rng.integers(0, 2))]
            state = protocol.pipeline_state(cfg, sent)
            state = _measure_mode_fock(state, info_mode_a, rng)
            window = protocol.simulate_window(state, cfg, rng)
            bits = protocol.sample_receiver_bits(window.state, rng)
            decoded = protocol.decode(cfg, window.record.counts(), bits)
            if decoded is not None:
                conclusive += 1
                violations += int(decoded != sent)
    else:
        tamper = None if eve.strategy == "none" else _atom_tamper(eve)
        streams = protocol._RoundStreams(seed)
        for i in range(n_check_rounds):
            rng = streams.rng(i)
            out = protocol.run_check_round(config, rng, tamper=tamper)
            if out.check_conclusive:
                conclusive += 1
                violations += int(not out.check_passed)
    rate = violations / conclusive if conclusive else None
    stderr = (
        math.sqrt(max(rate * (1 - rate), 0.0) / conclusive) if conclusive else None
    )
    return EveResult(n_check_rounds, conclusive, violations, rate, stderr)


def exact_eve_detection_rate(eve: EveModel, n_parties: int = 3) -> float:
    """Exact parity-check detection rate for atom attacks, by enumerating the
    post-attack ensemble over all basis combinations."""
    if eve.strategy == "intercept_resend_photon":
        raise ValueError("photon attack detection is estimated by Monte Carlo only")
    dim = 2**n_parties
    ghz = np.zeros(dim, dtype=np.complex128)
    ghz[0] = ghz[-1] = 1.0 / math.sqrt(2.0)

    if eve.strategy == "none":
        branches = [(1.0, ghz)]
    else:
        target = eve.target
        if eve.basis == "z":
            vecs = (np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        else:
            vecs = (
                np.array([1.0, 1.0]) / math.sqrt(2.0),
                np.array([1.0, -1.0]) / math.sqrt(2.0),
            )
        branches = []
        for v in vecs:
            proj = _single_site_projector(v, target, n_parties)
            post = proj @ ghz
            p = float(np.real(np.vdot(post, post)))
            if p > 1e-15:
                branches.append((p, post / math.sqrt(p)))

    rot = {
        "x": np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2.0),
        "y": np.array([[1, -1j], [1, 1j]], dtype=np.complex128) / math.sqrt(2.0),
    }
    parity = np.array(
        [1 - 2 * (bin(i).count("1") % 2) for i in range(dim)], dtype=np.int64
    )
    combo_prob = 0.5**n_parties

    viol = concl = 0.0
    for combo in range(2**n_parties):
        bases = ["y" if (combo >> j) & 1 else "x" for j in range(n_parties)]
        expected = protocol.ghz_expected_parity(bases.count("y"))
        if expected is None:
            continue
        concl += combo_prob
        u = np.array([[1.0]], dtype=np.complex128)
        for b in bases:
            u = np.kron(u, rot[b])
        for p_branch, state in branches:
            amps = u @ state
            p_violation = float(np.sum(np.abs(amps[parity != expected]) ** 2))
            viol += combo_prob * p_branch * p_violation
    return viol / concl


def _single_site_projector(vec: np.ndarray, site: int, n: int) -> np.ndarray:
    proj = np.outer(vec, vec.conj())
    op = np.array([[1.0]], dtype=np.complex128)
    for j in range(n):
        op = np.kron(op, proj if j == site else np.eye(2))
    return op


# ---------------------------------------------------------------------------
# summary used by the CLI


def standard_views(config: RoundConfig) -> dict[str, ViewSpec]:
    layout = protocol.layout_for(config.n_parties, config.cutoff)
    receivers = protocol.rotated_receiver_sites(layout)
    return {
        "bob_alone": ViewSpec(sees_clicks=True, sees_bits=()),
        "charlie_alone": ViewSpec(sees_clicks=False, sees_bits=receivers[:1]),
        "collaboration": ViewSpec(sees_clicks=True, sees_bits=receivers),
    }


def security_summary(
    config: RoundConfig, n_rounds: int, seed: int, eve: EveModel | None = None
) -> dict:
    """Headline rates: Bob alone (given a click), Charlie alone, full
    collaboration (given a click), the derived composite 1 - charlie_alone,
    and eavesdropper detection for the chosen attack."""
    views = standard_views(config)
    bob = cheat_experiment(views["bob_alone"], config, n_rounds, seed)
    charlie = cheat_experiment(views["charlie_alone"], config, n_rounds, seed + 1)
    collab = cheat_experiment(views["collaboration"], config, n_rounds, seed + 2)
    eve = eve if eve is not None else EveModel("intercept_resend_atom", basis="z", target=0)
    eve_result = eavesdrop_experiment(eve, config, n_rounds, seed + 3)
    return {
        "bob_alone": bob.rate_given_click,
        "bob_alone_stderr": bob.stderr_given_click,
        "charlie_alone": charlie.rate_all,
        "charlie_alone_stderr": charlie.stderr_all,
        "collaboration": collab.rate_given_click,
        "collaboration_stderr": collab.stderr_given_click,
        "composite_bob": 1.0 - charlie.rate_all,
        "eve_strategy": eve.strategy + (f"_{eve.basis}" if eve.basis else ""),
        "eve_detection_rate": eve_result.detection_rate,
        "eve_detection_stderr": eve_result.stderr,
        "eve_conclusive_rounds": eve_result.conclusive_rounds,
    }
