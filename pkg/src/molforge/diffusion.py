"""Discrete-diffusion kernel over categorical graph tokens.

Forward chain: q(x^t | x^0) = Cat(x^t; p = x^0 Q̄^t) with Q̄^t the cumulative
product of per-step transition matrices. Reverse sampling runs the analytic
posterior q(x^{t-1} | x^t, x^0) under a pluggable denoiser that predicts a
distribution over x^0, mixed through the posterior rather than sampled first.
Guidance sharpens conditional denoiser output against an unconditional pass
in log space.

All randomness flows through numpy Generators seeded per call; identical
seeds give bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import (
    BadDistribution,
    DecodeError,
    DenoiserContract,
    DimensionMismatch,
    InvalidGraph,
    TimestepOutOfRange,
    ZeroMass,
)
from .molgraph import Atom, MolecularGraph, check_valence, implicit_hydrogens

_ROW_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step corruption rates beta_t, t = 1..T (index 0 = t=1)."""

    betas: tuple[float, ...]
    family: str = "custom"

    def __post_init__(self):
        if len(self.betas) < 1:
            raise BadDistribution("schedule needs at least one step")
        for b in self.betas:
            if not (0.0 <= b < 1.0):
                raise BadDistribution(f"beta {b} outside [0, 1)")
        if self.family in ("linear", "cosine"):
            bars = self.alpha_bars
            if any(b2 >= b1 for b1, b2 in zip(bars, bars[1:])):
                raise BadDistribution("alpha-bar must be strictly decreasing")
            if bars[-1] > 0.01:
                raise BadDistribution(
                    f"default schedules must reach alpha_bar <= 0.01, got {bars[-1]:g}"
                )

    @property
    def total_steps(self) -> int:
        return len(self.betas)

    @property
    def alpha_bars(self) -> tuple[float, ...]:
        out = []
        acc = 1.0
        for b in self.betas:
            acc *= 1.0 - b
            out.append(acc)
        return tuple(out)


def linear_schedule(T: int, beta_min: float = 1e-3, beta_max: float = 0.5) -> NoiseSchedule:
    if T < 1:
        raise BadDistribution("T must be >= 1")
    if T == 1:
        return NoiseSchedule((beta_max,), "linear")
    betas = [beta_min + (beta_max - beta_min) * i / (T - 1) for i in range(T)]
    return NoiseSchedule(tuple(betas), "linear")


def cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    """Betas from the squared-cosine alpha-bar curve, clipped to [0, 0.999]."""
    if T < 1:
        raise BadDistribution("T must be >= 1")

    def f(u: float) -> float:
        return math.cos((u + s) / (1 + s) * math.pi / 2) ** 2

    f0 = f(0.0)
    betas = []
    prev = 1.0
    for t in range(1, T + 1):
        bar = f(t / T) / f0
        betas.append(min(0.999, max(0.0, 1.0 - bar / prev)))
        prev = bar
    return NoiseSchedule(tuple(betas), "cosine")


class TransitionModel:
    """Immutable stack of per-step and cumulative transition matrices."""

    def __init__(self, Q: np.ndarray, family: str, stationary: np.ndarray):
        self.Q = Q  # [T, F, F]
        self.family = family
        self.stationary = stationary
        T = Q.shape[0]
        F = Q.shape[1]
        Qbar = np.empty_like(Q)
        acc = np.eye(F)
        for t in range(T):
            acc = acc @ Q[t]
            Qbar[t] = acc
        self.Qbar = Qbar
        self._check()
        self.Q.setflags(write=False)
        self.Qbar.setflags(write=False)

    def _check(self) -> None:
        for name, stack in (("Q", self.Q), ("Qbar", self.Qbar)):
            if np.any(stack < -_ROW_TOL):
                raise BadDistribution(f"{name} has negative entries")
            rows = stack.sum(axis=2)
            if np.any(np.abs(rows - 1.0) > _ROW_TOL):
                raise BadDistribution(f"{name} rows do not sum to 1")
        # Chapman-Kolmogorov: Qbar^t = Qbar^{t-1} Q^t
        for t in range(1, self.Q.shape[0]):
            delta = np.abs(self.Qbar[t] - self.Qbar[t - 1] @ self.Q[t])
            if delta.max() > _ROW_TOL:
                raise BadDistribution("cumulative products inconsistent")

    @property
    def total_steps(self) -> int:
        return int(self.Q.shape[0])

    @property
    def n_categories(self) -> int:
        return int(self.Q.shape[1])

    def step_matrix(self, t: int) -> np.ndarray:
        """Q^t for 1-based t."""
        if not (1 <= t <= self.total_steps):
            raise TimestepOutOfRange(f"t={t} outside 1..{self.total_steps}")
        return self.Q[t - 1]

    def cumulative(self, t: int) -> np.ndarray:
        """Q̄^t for 0-based-friendly t: t=0 gives the identity."""
        if t == 0:
            return np.eye(self.n_categories)
        if not (1 <= t <= self.total_steps):
            raise TimestepOutOfRange(f"t={t} outside 0..{self.total_steps}")
        return self.Qbar[t - 1]


def build_transition(
    schedule: NoiseSchedule,
    family: str,
    F: int,
    stationary: Optional[Sequence[float]] = None,
) -> TransitionModel:
    """uniform: Q^t = (1-b)I + (b/F) 11'; marginal: Q^t = (1-b)I + b 1 m'."""
    if F < 2:
        raise BadDistribution("need at least two categories")
    if family == "uniform":
        m = np.full(F, 1.0 / F)
    elif family == "marginal":
        if stationary is None:
            raise BadDistribution("marginal family needs a stationary distribution")
        m = np.asarray(stationary, dtype=float)
        if m.shape != (F,) or np.any(m <= 0) or abs(m.sum() - 1.0) > 1e-9:
            raise BadDistribution("stationary must be positive and sum to 1")
    else:
        raise BadDistribution(f"unknown transition family {family!r}")
    T = schedule.total_steps
    eye = np.eye(F)
    Q = np.empty((T, F, F))
    for t, b in enumerate(schedule.betas):
        Q[t] = (1.0 - b) * eye + b * np.outer(np.ones(F), m)
    return TransitionModel(Q, family, m)


def transition_from_matrices(Q_steps: Sequence[np.ndarray], family: str = "custom") -> TransitionModel:
    """Arbitrary per-step stochastic matrices (used by oracles and tests)."""
    Q = np.stack([np.asarray(q, dtype=float) for q in Q_steps])
    F = Q.shape[1]
    return TransitionModel(Q, family, np.full(F, 1.0 / F))


def _check_one_hot(x: np.ndarray) -> None:
    if x.ndim != 2:
        raise BadDistribution("expected a 2-D token matrix")
    if not np.all((x == 0) | (x == 1)) or not np.all(x.sum(axis=1) == 1):
        raise BadDistribution("rows must be one-hot")


def forward_sample(
    x0: np.ndarray, t: int, model: TransitionModel, rng_seed: int
) -> np.ndarray:
    """Draw x^t ~ Cat(x^0 Q̄^t) independently per token row."""
    x0 = np.asarray(x0, dtype=float)
    _check_one_hot(x0)
    if not (1 <= t <= model.total_steps):
        raise TimestepOutOfRange(f"t={t} outside 1..{model.total_steps}")
    probs = x0 @ model.cumulative(t)
    rng = np.random.default_rng(rng_seed)
    out = np.zeros_like(x0)
    ks = _sample_rows(rng, probs)
    out[np.arange(len(ks)), ks] = 1.0
    return out


def _posterior_batch(
    xt: np.ndarray, x0: np.ndarray, t: int, model: TransitionModel
) -> np.ndarray:
    """Vectorized mixture posterior over token rows; xt one-hot [n, F],
    x0 distributions [n, F] -> posterior rows [n, F]."""
    left = xt @ model.step_matrix(t).T  # [n, F]
    Qbar_prev = model.cumulative(t - 1)  # [F, F]
    # U[i, k, :] = left[i, :] * Qbar_prev[k, :]
    U = left[:, None, :] * Qbar_prev[None, :, :]
    norms = U.sum(axis=2)  # [n, k]
    bad = (norms <= 0.0) & (x0 > 0.0)
    if np.any(bad):
        raise ZeroMass("posterior has no mass; inconsistent xt/x0/t")
    safe = np.where(norms > 0.0, norms, 1.0)
    out = np.einsum("nk,nkf->nf", x0 / safe, U)
    totals = out.sum(axis=1, keepdims=True)
    if np.any(totals <= 0.0):
        raise ZeroMass("posterior mixture has no mass")
    return out / totals


def _sample_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row via inverse CDF; a single rng call."""
    cum = np.cumsum(probs, axis=1)
    cum /= cum[:, -1:]
    u = rng.random((probs.shape[0], 1))
    return (u > cum).sum(axis=1)


def posterior(
    xt_row: np.ndarray, x0_row: np.ndarray, t: int, model: TransitionModel
) -> np.ndarray:
    """q(x^{t-1} | x^t, x^0) ∝ (x^t (Q^t)') ⊙ (x^0 Q̄^{t-1}).

    When x0_row is a distribution, the result is the x0-weighted mixture of
    one-hot posteriors (not the formula applied to the soft row; the two
    differ because normalization happens inside the mixture).
    """
    xt_row = np.asarray(xt_row, dtype=float)
    x0_row = np.asarray(x0_row, dtype=float)
    F = model.n_categories
    if xt_row.shape != (F,) or x0_row.shape != (F,):
        raise DimensionMismatch("row length does not match category count")
    left = xt_row @ model.step_matrix(t).T
    Qbar_prev = model.cumulative(t - 1)
    hard = np.flatnonzero(x0_row)
    if hard.size == 1 and x0_row[hard[0]] == 1.0:
        unnorm = left * Qbar_prev[hard[0]]
        total = unnorm.sum()
        if total <= 0.0:
            raise ZeroMass("posterior has no mass; inconsistent xt/x0/t")
        return unnorm / total
    # mixture over candidate x0 categories
    out = np.zeros(F)
    for k in np.flatnonzero(x0_row > 0.0):
        unnorm = left * Qbar_prev[k]
        total = unnorm.sum()
        if total <= 0.0:
            raise ZeroMass("posterior has no mass; inconsistent xt/x0/t")
        out += x0_row[k] * (unnorm / total)
    s = out.sum()
    if s <= 0.0:
        raise ZeroMass("posterior mixture has no mass")
    return out / s


@dataclass(frozen=True)
class ConditionVector:
    """Independently nullable condition slots; None means dropped."""

    categorical: dict = field(default_factory=dict)  # name -> one-hot index or None
    continuous: dict = field(default_factory=dict)  # name -> float or None
    text: Optional[np.ndarray] = None

    def is_null(self) -> bool:
        return (
            not any(v is not None for v in self.categorical.values())
            and not any(v is not None for v in self.continuous.values())
            and self.text is None
        )


UNCONDITIONAL = ConditionVector()


class Denoiser(Protocol):
    def __call__(
        self, xt: np.ndarray, t: int, conditions: ConditionVector
    ) -> np.ndarray: ...


def _guided(p_cond: np.ndarray, p_uncond: np.ndarray, w: float) -> np.ndarray:
    """normalize(exp((1+w) log p_cond - w log p_uncond)) rowwise."""
    if w == 0.0:
        return p_cond
    tiny = 1e-300
    logp = (1.0 + w) * np.log(p_cond + tiny) - w * np.log(p_uncond + tiny)
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def _check_denoiser_rows(p: np.ndarray, F: int) -> None:
    if p.ndim != 2 or p.shape[1] != F:
        raise DenoiserContract("denoiser output has wrong shape")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise DenoiserContract("denoiser rows must be normalized distributions")


def reverse_step(
    xt: np.ndarray,
    t: int,
    model: TransitionModel,
    denoiser: Denoiser,
    conditions: ConditionVector = UNCONDITIONAL,
    guidance_w: float = 0.0,
    rng_seed: int = 0,
) -> np.ndarray:
    """One reverse transition x^t -> x^{t-1}, marginalizing the denoiser's
    x^0 distribution through the analytic posterior."""
    xt = np.asarray(xt, dtype=float)
    _check_one_hot(xt)
    p_cond = np.asarray(denoiser(xt, t, conditions), dtype=float)
    F = model.n_categories
    _check_denoiser_rows(p_cond, F)
    if guidance_w != 0.0 and not conditions.is_null():
        p_uncond = np.asarray(denoiser(xt, t, UNCONDITIONAL), dtype=float)
        _check_denoiser_rows(p_uncond, F)
        p_hat = _guided(p_cond, p_uncond, guidance_w)
    else:
        p_hat = p_cond
    rng = np.random.default_rng(rng_seed)
    post = _posterior_batch(xt, p_hat, t, model)
    ks = _sample_rows(rng, post)
    out = np.zeros_like(xt)
    out[np.arange(len(ks)), ks] = 1.0
    return out


# -- graph tokenization -------------------------------------------------

# category tables for the decoded molecule alphabet
NODE_CATEGORIES = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "*")
EDGE_CATEGORIES = (0.0, 1.0, 1.5, 2.0, 3.0)  # 0 = no bond


@dataclass(frozen=True)
class GraphTokenization:
    """Layout: per node, F_V node categories then N_G edge blocks of F_E."""

    F_V: int = len(NODE_CATEGORIES)
    F_E: int = len(EDGE_CATEGORIES)
    N_G: int = 16

    @property
    def F(self) -> int:
        return self.F_V + self.N_G * self.F_E

    def edge_slice(self, j: int) -> slice:
        return slice(self.F_V + j * self.F_E, self.F_V + (j + 1) * self.F_E)


@dataclass(frozen=True)
class GraphTokens:
    """Separated one-hot factors of a tokenized graph."""

    nodes: np.ndarray  # [n, F_V]
    edges: np.ndarray  # [n, N_G, F_E], symmetric in the first two axes
    layout: GraphTokenization

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    def as_matrix(self) -> np.ndarray:
        """Concatenated per-node token rows [n, F]."""
        n = self.n_nodes
        return np.concatenate([self.nodes, self.edges.reshape(n, -1)], axis=1)


def tokenize_graph(g: MolecularGraph, layout: GraphTokenization) -> GraphTokens:
    n = len(g)
    if n > layout.N_G:
        raise DimensionMismatch(f"graph has {n} atoms, layout allows {layout.N_G}")
    nodes = np.zeros((n, layout.F_V))
    for i, a in enumerate(g.atoms):
        try:
            nodes[i, NODE_CATEGORIES.index(a.element)] = 1.0
        except ValueError as exc:
            raise DecodeError(f"element {a.element} not in the token alphabet") from exc
    edges = np.zeros((n, layout.N_G, layout.F_E))
    edges[:, :, 0] = 1.0  # default: no bond
    for i in range(n):
        edges[i, i, 0] = 1.0
    for b in g.bonds:
        k = EDGE_CATEGORIES.index(b.order)
        edges[b.i, b.j, :] = 0.0
        edges[b.i, b.j, k] = 1.0
        edges[b.j, b.i, :] = 0.0
        edges[b.j, b.i, k] = 1.0
    return GraphTokens(nodes, edges, layout)


def decode_tokens(
    tokens: GraphTokens, edge_scores: Optional[np.ndarray] = None
) -> MolecularGraph:
    """Tokens back to a graph. Asymmetric edge blocks are reconciled by the
    tie-break rule: higher pre-sampling probability mass wins, ties go to the
    lower category index. edge_scores[i, j, k] carries that mass; without it,
    disagreement falls back to the lower category index directly.
    """
    n = tokens.n_nodes
    atoms = []
    for i in range(n):
        row = tokens.nodes[i]
        k = int(np.argmax(row))
        if row.sum() != 1.0 or row[k] != 1.0:
            raise DecodeError(f"node row {i} is not one-hot")
        el = NODE_CATEGORIES[k]
        atoms.append(Atom(el, aromatic=False, explicit_h=0))
    pairs: dict[tuple[int, int], float] = {}
    aromatic_atoms = set()
    for i in range(n):
        for j in range(i + 1, n):
            ki = int(np.argmax(tokens.edges[i, j]))
            kj = int(np.argmax(tokens.edges[j, i]))
            if ki == kj:
                k = ki
            elif edge_scores is not None:
                si = float(edge_scores[i, j, ki])
                sj = float(edge_scores[j, i, kj])
                if si > sj:
                    k = ki
                elif sj > si:
                    k = kj
                else:
                    k = min(ki, kj)
            else:
                k = min(ki, kj)
            order = EDGE_CATEGORIES[k]
            if order:
                pairs[(i, j)] = order
                if order == 1.5:
                    aromatic_atoms.update((i, j))
    orders_by_atom: dict[int, list[float]] = {i: [] for i in range(n)}
    for (i, j), order in pairs.items():
        orders_by_atom[i].append(order)
        orders_by_atom[j].append(order)
    # the token alphabet carries no hydrogen counts; saturate each atom to
    # its default valence so decoded molecules share canonical keys with
    # parsed SMILES (over-valent atoms get 0 and stay invalid)
    final_atoms = []
    for i, a in enumerate(atoms):
        aromatic = i in aromatic_atoms and a.element != "*"
        h = implicit_hydrogens(a.element, aromatic, orders_by_atom[i])
        final_atoms.append(Atom(a.element, 0, aromatic, h))
    bonds = [(i, j, order) for (i, j), order in pairs.items()]
    return MolecularGraph(final_atoms, bonds)


@dataclass
class SampleResult:
    """Decoded sample; graph is None when decoding hit a structural
    violation (counts as invalid, never a crash)."""

    graph: Optional[MolecularGraph]
    valid: bool
    violations: tuple


class GraphDenoiser(Protocol):
    """Full-graph denoiser: returns (node x0 probs [n, F_V],
    edge x0 probs [n, N_G, F_E])."""

    def __call__(
        self, tokens: GraphTokens, t: int, conditions: ConditionVector
    ) -> tuple[np.ndarray, np.ndarray]: ...


def sample_graph(
    conditions: ConditionVector,
    node_model: TransitionModel,
    edge_model: TransitionModel,
    denoiser: GraphDenoiser,
    n_nodes: int,
    layout: GraphTokenization,
    guidance_w: float = 0.0,
    rng_seed: int = 0,
) -> SampleResult:
    """Full reverse loop from stationary noise to a decoded molecule.

    Node tokens and the upper-triangle edge tokens each follow their own
    transition model over a shared timestep range; edge blocks are mirrored
    every step so the working state stays symmetric.
    """
    if n_nodes < 1 or n_nodes > layout.N_G:
        raise DimensionMismatch(f"n_nodes must be in 1..{layout.N_G}")
    if node_model.total_steps != edge_model.total_steps:
        raise DimensionMismatch("node and edge models must share T")
    if node_model.n_categories != layout.F_V or edge_model.n_categories != layout.F_E:
        raise DimensionMismatch("model category counts do not match the layout")
    T = node_model.total_steps
    rng = np.random.default_rng(rng_seed)
    n = n_nodes
    iu, ju = np.triu_indices(n, k=1)  # upper-triangle pair lists

    def one_hot(ks: np.ndarray, F: int) -> np.ndarray:
        out = np.zeros((len(ks), F))
        out[np.arange(len(ks)), ks] = 1.0
        return out

    nodes = one_hot(
        _sample_rows(rng, np.tile(node_model.stationary, (n, 1))), layout.F_V
    )
    pair_state = one_hot(
        _sample_rows(rng, np.tile(edge_model.stationary, (len(iu), 1))), layout.F_E
    )

    def expand_edges(pairs: np.ndarray) -> np.ndarray:
        edges = np.zeros((n, layout.N_G, layout.F_E))
        edges[:, :, 0] = 1.0
        edges[iu, ju] = pairs
        edges[ju, iu] = pairs
        return edges

    pair_scores = np.zeros_like(pair_state)
    for t in range(T, 0, -1):
        state = GraphTokens(nodes, expand_edges(pair_state), layout)
        pn_c, pe_c = denoiser(state, t, conditions)
        pn_c = np.asarray(pn_c, dtype=float)
        pe_c = np.asarray(pe_c, dtype=float)
        _check_denoiser_rows(pn_c, layout.F_V)
        _check_denoiser_rows(pe_c.reshape(-1, layout.F_E), layout.F_E)
        if guidance_w != 0.0 and not conditions.is_null():
            pn_u, pe_u = denoiser(state, t, UNCONDITIONAL)
            pn_c = _guided(pn_c, np.asarray(pn_u, dtype=float), guidance_w)
            pe_flat = _guided(
                pe_c.reshape(-1, layout.F_E),
                np.asarray(pe_u, dtype=float).reshape(-1, layout.F_E),
                guidance_w,
            )
            pe_c = pe_flat.reshape(pe_c.shape)
        # the denoiser sees the full [n, N_G, F_E] block; average the two
        # mirror entries so asymmetric denoisers still yield one pair law
        pair_p = 0.5 * (pe_c[iu, ju] + pe_c[ju, iu])
        node_post = _posterior_batch(nodes, pn_c, t, node_model)
        nodes = one_hot(_sample_rows(rng, node_post), layout.F_V)
        pair_post = _posterior_batch(pair_state, pair_p, t, edge_model)
        pair_state = one_hot(_sample_rows(rng, pair_post), layout.F_E)
        pair_scores = pair_post

    tokens = GraphTokens(nodes, expand_edges(pair_state), layout)
    edge_scores = np.zeros((n, layout.N_G, layout.F_E))
    edge_scores[iu, ju] = pair_scores
    edge_scores[ju, iu] = pair_scores
    try:
        graph = decode_tokens(tokens, edge_scores)
    except InvalidGraph as exc:
        return SampleResult(None, False, ((-1, str(exc)),))
    report = check_valence(graph)
    return SampleResult(graph, report.valid, report.violations)


# -- reference denoisers -------------------------------------------------


class OracleDenoiser:
    """Always answers with a planted target's true tokens (as one-hot)."""

    def __init__(self, target: GraphTokens):
        self.target = target

    def __call__(self, tokens, t, conditions):
        n = self.target.n_nodes
        return self.target.nodes.copy(), self.target.edges.copy()


class UniformDenoiser:
    """Maximum-entropy denoiser; useful for fuzzing the decode path."""

    def __init__(self, layout: GraphTokenization):
        self.layout = layout

    def __call__(self, tokens, t, conditions):
        n = tokens.n_nodes
        nodes = np.full((n, self.layout.F_V), 1.0 / self.layout.F_V)
        edges = np.full((n, self.layout.N_G, self.layout.F_E), 1.0 / self.layout.F_E)
        return nodes, edges


class RowOracleDenoiser:
    """Flat-matrix analogue of OracleDenoiser for reverse_step tests."""

    def __init__(self, x0: np.ndarray):
        self.x0 = np.asarray(x0, dtype=float)

    def __call__(self, xt, t, conditions):
        return self.x0.copy()
