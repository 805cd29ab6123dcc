"""Channel-to-link allocation scoring and exhaustive optimization.

score() predicts per-link metrics analytically (no Monte Carlo) from the
same ingredients the stream simulation uses: per-channel flux and state,
per-node efficiency and darks, and the accidental-window mixing model.
optimize() enumerates every assignment of each channel to one of the
required links or to none, which is cheap at desk scale (4^8 candidates
for eight channels and three links).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .photonics import (
    SourceModel,
    effective_state,
    mix_states,
    rotate_idler,
    rotate_signal,
)
from .qstate import LinkMetrics, TwoQubitState, bell_state, fidelity, log_negativity
from .spectrum import Allocation, Link, canonical_link, link_name, logical_mesh

OBJECTIVE_KINDS = ("balance_rates", "max_avg_fidelity", "max_total_ebits")


@dataclass(frozen=True)
class Objective:
    kind: str
    constraints: tuple[Link, ...]
    reserve: frozenset[int] = frozenset()
    min_rate_per_s: float = 10.0

    def __post_init__(self) -> None:
        if self.kind not in OBJECTIVE_KINDS:
            raise ValidationError(f"unknown objective kind {self.kind!r}")
        links = tuple(sorted(canonical_link(*l) for l in self.constraints))
        if not links:
            raise ValidationError("objective needs at least one constrained link")
        if len(set(links)) != len(links):
            raise ValidationError("duplicate constrained links")
        object.__setattr__(self, "constraints", links)
        object.__setattr__(self, "reserve", frozenset(int(c) for c in self.reserve))


@dataclass(frozen=True)
class ScoreModel:
    """Scenario parameters the analytic predictor needs: the source tables
    plus per-node combined efficiency, dark rate, and residual polarization
    misalignment."""

    source: SourceModel
    node_efficiency: dict[str, float]
    node_dark_per_s: dict[str, float] = field(default_factory=dict)
    node_misalignment_rad: dict[str, float] = field(default_factory=dict)
    window_s: float = 15e-9
    pairing_efficiency: float = 1.0
    include_accidentals: bool = True

    def __post_init__(self) -> None:
        for node, eta in self.node_efficiency.items():
            if not 0 < eta <= 1:
                raise ValidationError(f"node {node} efficiency {eta} outside (0, 1]")

    def nodes(self) -> list[str]:
        return sorted(self.node_efficiency)

    def efficiency(self, node: str) -> float:
        try:
            return self.node_efficiency[node]
        except KeyError:
            raise ValidationError(f"unknown node {node!r}") from None

    def dark(self, node: str) -> float:
        return self.node_dark_per_s.get(node, 0.0)

    def misalignment(self, node: str) -> float:
        return self.node_misalignment_rad.get(node, 0.0)

    def link_efficiency(self, link: Link) -> float:
        x, y = canonical_link(*link)
        return self.efficiency(x) * self.efficiency(y) * self.pairing_efficiency

    def link_state(self, link: Link, channel: int) -> TwoQubitState:
        """Channel state as seen on a link: source rotation plus the two
        nodes' residual misalignments (signal arm at the smaller node)."""
        x, y = canonical_link(*link)
        state = self.source.channel_state(channel)
        state = rotate_signal(state, self.misalignment(x))
        return rotate_idler(state, self.misalignment(y))


def predict_link(model: ScoreModel, link: Link, channels: Iterable[int]) -> LinkMetrics:
    """Analytic metrics for one link carrying the given channel pairs."""
    chans = sorted(int(c) for c in channels)
    if not chans:
        raise ValidationError(f"link {link_name(link)} has no channels to score")
    x, y = canonical_link(*link)
    true_rates = [model.source.flux(n) * model.link_efficiency(link) for n in chans]
    total_true = float(sum(true_rates))
    if model.include_accidentals:
        singles_x = sum(model.source.flux(n) * model.efficiency(x) for n in chans) + model.dark(x)
        singles_y = sum(model.source.flux(n) * model.efficiency(y) for n in chans) + model.dark(y)
        accidental = singles_x * singles_y * model.window_s
    else:
        accidental = 0.0
    mixed = mix_states([model.link_state(link, n) for n in chans], true_rates)
    eff = effective_state(mixed, total_true, accidental)
    f = fidelity(eff, bell_state("psi+"))
    en = log_negativity(eff)
    return LinkMetrics(
        fidelity=f,
        log_negativity=en,
        coincidence_rate=total_true + accidental,
    )


def score(alloc: Allocation, model: ScoreModel) -> dict[Link, LinkMetrics]:
    """Predicted metrics for every link of an allocation."""
    if alloc.pair_count != model.source.pair_count:
        raise ValidationError(
            f"allocation covers {alloc.pair_count} channel pairs, "
            f"source has {model.source.pair_count}"
        )
    return {
        link: predict_link(model, link, chans)
        for link, chans in sorted(alloc.channels.items())
    }


def _rate_table(model: ScoreModel, links: Sequence[Link]) -> np.ndarray:
    """True pair rate of channel n on link l, shape (pair_count, len(links))."""
    flux = np.array(model.source.flux_per_s)
    eff = np.array([model.link_efficiency(l) for l in links])
    return flux[:, None] * eff[None, :]


def _fidelity_table(model: ScoreModel, links: Sequence[Link]) -> np.ndarray:
    """Fidelity of channel n's state as seen on link l."""
    target = bell_state("psi+")
    out = np.zeros((model.source.pair_count, len(links)))
    for j, link in enumerate(links):
        for n in range(1, model.source.pair_count + 1):
            out[n - 1, j] = fidelity(model.link_state(link, n), target)
    return out


def _enumerate_assignments(
    pair_count: int, n_links: int, reserve: frozenset[int]
) -> np.ndarray:
    """All per-channel choices as an int array (candidates, pair_count);
    entries are link indices, n_links meaning unassigned."""
    choices = [
        np.array([n_links]) if (n + 1) in reserve else np.arange(n_links + 1)
        for n in range(pair_count)
    ]
    grids = np.meshgrid(*choices, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def optimize(objective: Objective, model: ScoreModel) -> Allocation:
    """Exhaustive search for the best allocation under an objective.

    Ties break toward fewer channels used, then toward the lexicographically
    smallest per-channel assignment (link names, with 'unassigned' sorting
    last).
    """
    pair_count = model.source.pair_count
    if pair_count > 12:
        raise ValidationError("exhaustive search is bounded at 12 channel pairs")
    links = list(objective.constraints)
    mesh = logical_mesh(max(2, len(model.nodes())))
    known = {canonical_link(a, b) for a, b in mesh} | {
        canonical_link(a, b)
        for a in model.node_efficiency
        for b in model.node_efficiency
        if a != b
    }
    for link in links:
        if link not in known:
            raise ValidationError(f"constrained link {link_name(link)} has unknown nodes")
    bad_reserve = [c for c in objective.reserve if not 1 <= c <= pair_count]
    if bad_reserve:
        raise ValidationError(f"reserved channels {bad_reserve} out of range")
    if pair_count - len(objective.reserve) < len(links):
        raise ValidationError("infeasible: fewer assignable channels than required links")

    assignments = _enumerate_assignments(pair_count, len(links), objective.reserve)
    n_links = len(links)
    one_hot = assignments[:, :, None] == np.arange(n_links)[None, None, :]
    rate_nl = _rate_table(model, links)
    link_rates = np.einsum("knl,nl->kl", one_hot, rate_nl)

    feasible = (link_rates > 0).all(axis=1)
    if not feasible.any():
        raise ValidationError("no feasible assignment satisfies the constraints")

    if objective.kind == "balance_rates":
        with np.errstate(divide="ignore", invalid="ignore"):
            value = link_rates.max(axis=1) / link_rates.min(axis=1)
        value[~feasible] = np.inf
        better_is_lower = True
    elif objective.kind == "max_avg_fidelity":
        fid_nl = _fidelity_table(model, links)
        num = np.einsum("knl,nl->kl", one_hot, rate_nl * fid_nl)
        with np.errstate(divide="ignore", invalid="ignore"):
            link_fid = np.where(link_rates > 0, num / np.where(link_rates > 0, link_rates, 1), 0.0)
        value = link_fid.mean(axis=1)
        floor_ok = (link_rates >= objective.min_rate_per_s).all(axis=1)
        feasible = feasible & floor_ok
        if not feasible.any():
            raise ValidationError(
                f"no assignment keeps every required link above "
                f"{objective.min_rate_per_s}/s"
            )
        value[~feasible] = -np.inf
        better_is_lower = False
    else:  # max_total_ebits
        en, acc = _batched_link_entanglement(model, links, assignments, one_hot, rate_nl)
        value = np.where(feasible, (en * (link_rates + acc)).sum(axis=1), -np.inf)
        better_is_lower = False

    used = (assignments < n_links).sum(axis=1)
    ordered_value = value if better_is_lower else -value
    # lexicographic key: assignment as link names, unassigned sorting last
    order = np.lexsort(
        tuple(assignments[:, n] for n in range(pair_count - 1, -1, -1))
        + (used, ordered_value)
    )
    best = order[0]
    if not feasible[best]:
        raise ValidationError("no feasible assignment satisfies the constraints")
    channels = {
        link: frozenset(
            int(n + 1) for n in np.flatnonzero(assignments[best, :] == j)
        )
        for j, link in enumerate(links)
    }
    return Allocation(channels, pair_count)


def _batched_link_entanglement(
    model: ScoreModel,
    links: Sequence[Link],
    assignments: np.ndarray,
    one_hot: np.ndarray,
    rate_nl: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Log-negativity and accidental rate of every (assignment, link),
    computed as one batched eigenvalue problem."""
    pair_count = model.source.pair_count
    states = np.zeros((pair_count, len(links), 4, 4), dtype=complex)
    for j, link in enumerate(links):
        for n in range(1, pair_count + 1):
            states[n - 1, j] = model.link_state(link, n).matrix
    contrib = rate_nl[:, :, None, None] * states
    weighted = np.einsum("knl,nlij->klij", one_hot, contrib)
    total_true = np.einsum("knl,nl->kl", one_hot, rate_nl)
    if model.include_accidentals:
        flux = np.array(model.source.flux_per_s)
        eta_x = np.array([model.efficiency(l[0]) for l in links])
        eta_y = np.array([model.efficiency(l[1]) for l in links])
        dark_x = np.array([model.dark(l[0]) for l in links])
        dark_y = np.array([model.dark(l[1]) for l in links])
        singles_x = np.einsum("knl,nl->kl", one_hot, flux[:, None] * eta_x[None, :]) + dark_x
        singles_y = np.einsum("knl,nl->kl", one_hot, flux[:, None] * eta_y[None, :]) + dark_y
        acc = singles_x * singles_y * model.window_s
    else:
        acc = np.zeros_like(total_true)
    total = total_true + acc
    safe = np.where(total > 0, total, 1.0)
    rho = (weighted + acc[..., None, None] * np.eye(4) / 4.0) / safe[..., None, None]
    pt = rho.reshape(*rho.shape[:-2], 2, 2, 2, 2)
    pt = np.swapaxes(pt, -3, -1)  # transpose qubit 2
    pt = pt.reshape(*rho.shape)
    eigs = np.linalg.eigvalsh(pt)
    trace_norm = np.abs(eigs).sum(axis=-1)
    en = np.where(total_true + acc > 0, np.maximum(0.0, np.log2(np.maximum(trace_norm, 1e-300))), 0.0)
    return en, acc


def balance_ratio(alloc: Allocation, model: ScoreModel) -> float:
    """max/min predicted pair rate over the allocation's links (the
    balance_rates objective value)."""
    rates = []
    for link, chans in alloc.channels.items():
        if not chans:
            raise ValidationError(f"link {link_name(link)} has no channels")
        rates.append(sum(model.source.flux(n) for n in chans) * model.link_efficiency(link))
    return max(rates) / min(rates)


def random_feasible_allocation(
    links: Sequence[Link],
    pair_count: int,
    rng: np.random.Generator,
    reserve: frozenset[int] = frozenset(),
) -> Allocation:
    """Uniform random assignment with every link non-empty, for optimizer
    spot checks."""
    links = [canonical_link(*l) for l in links]
    assignable = [n for n in range(1, pair_count + 1) if n not in reserve]
    if len(assignable) < len(links):
        raise ValidationError("not enough channels to cover the links")
    while True:
        choice = rng.integers(0, len(links) + 1, size=len(assignable))
        channels = {
            link: frozenset(
                int(c) for c, pick in zip(assignable, choice) if pick == j
            )
            for j, link in enumerate(links)
        }
        if all(channels[l] for l in links):
            return Allocation(channels, pair_count)
