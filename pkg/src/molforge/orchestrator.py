"""Interleaved text/graph generation state machine.

A session consumes tokens from a pluggable language model. Ordinary tokens
accumulate as text; trigger tokens hand control to the graph modules: a
design trigger collects eight query vectors and runs the diffusion sampler,
a retro trigger runs the synthesis planner. Module results come back into
the stream as molecule / reaction elements, and failures fall back to plain
LM text, so a session always terminates with a well-formed transcript.

States: Text, DesignQuery, Designing, RetroQuery, Retro, Callback. End
tokens arriving outside their state are recorded as protocol violations and
dropped rather than raised, because the LM side of the interface is
untrusted by construction.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .chemio import write_smiles
from .diffusion import ConditionVector, SampleResult
from .errors import DimensionMismatch, MolforgeError, ProtocolViolation
from .molgraph import MolecularGraph, morgan_fingerprint
from .retro import Failure, Route, plan


@dataclass(frozen=True)
class TokenVocabulary:
    design_start: str = "<design_start>"
    design_body: str = "<design_body>"
    design_end: str = "<design_end>"
    retro_start: str = "<retro_start>"
    retro_body: str = "<retro_body>"
    retro_end: str = "<retro_end>"
    molecule: str = "<molecule>"
    callback_start: str = "<callback_start>"
    callback_end: str = "<callback_end>"

    def __post_init__(self):
        if len(self.special()) != 9:
            raise ProtocolViolation("vocabulary needs nine distinct special tokens")

    def special(self) -> frozenset:
        return frozenset(
            (
                self.design_start, self.design_body, self.design_end,
                self.retro_start, self.retro_body, self.retro_end,
                self.molecule, self.callback_start, self.callback_end,
            )
        )


N_QUERY_TOKENS = 8


class LanguageModel(Protocol):
    """Two views of one autoregressive model: next_token advances generation
    (None = stream end); hidden reads the state for the last consumed token
    without advancing."""

    def next_token(self, history: Sequence[str], embeddings: dict) -> Optional[dict]: ...

    def hidden(self, history: Sequence[str], embeddings: dict) -> np.ndarray: ...


class ScriptedLM:
    """Deterministic fixture LM: emits a fixed token list; hidden vectors
    come from a position-keyed table (zeros elsewhere). Records the
    embedding maps it was shown, so tests can spy on the feedback path."""

    def __init__(self, tokens: Sequence[str], hidden: Optional[dict] = None, dim: int = 4):
        self.script = list(tokens)
        self.hidden_table = {
            int(k): np.asarray(v, dtype=float) for k, v in (hidden or {}).items()
        }
        self.dim = dim
        self.pos = 0
        self.seen_embeddings: list[dict] = []

    @classmethod
    def from_json(cls, doc: dict) -> "ScriptedLM":
        return cls(doc["tokens"], doc.get("hidden"), dim=int(doc.get("dim", 4)))

    def next_token(self, history, embeddings) -> Optional[dict]:
        self.seen_embeddings.append(dict(embeddings))
        if self.pos >= len(self.script):
            return None
        token = self.script[self.pos]
        self.pos += 1
        return {token: 1.0}

    def hidden(self, history, embeddings) -> np.ndarray:
        position = len(history) - 1
        vec = self.hidden_table.get(position)
        if vec is not None:
            return vec
        return np.zeros(self.dim)


class FingerprintEncoder:
    """Default graph encoder: Morgan bits folded through a fixed seeded
    random projection; a deterministic, information-bearing stand-in for a
    learned encoder."""

    def __init__(self, dim: int = 256, n_bits: int = 2048, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.matrix = rng.standard_normal((n_bits, dim)) / np.sqrt(n_bits)
        self.n_bits = n_bits

    def __call__(self, graph: MolecularGraph) -> np.ndarray:
        fp = morgan_fingerprint(graph, radius=2, n_bits=self.n_bits)
        dense = np.zeros(self.n_bits)
        dense[list(fp.bits)] = 1.0
        return dense @ self.matrix


@dataclass(frozen=True)
class AffineProjection:
    weight: np.ndarray  # [in_dim, out_dim]
    bias: np.ndarray  # [out_dim]

    @classmethod
    def identity(cls, dim: int) -> "AffineProjection":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def seeded(cls, in_dim: int, out_dim: int, seed: int = 0) -> "AffineProjection":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)
        return cls(w, np.zeros(out_dim))

    def __call__(self, vec: np.ndarray) -> np.ndarray:
        if vec.shape != (self.weight.shape[0],):
            raise DimensionMismatch(
                f"projection expects dim {self.weight.shape[0]}, got {vec.shape}"
            )
        return vec @ self.weight + self.bias


def query_condition(
    vectors: Sequence[np.ndarray], projection: Optional[AffineProjection] = None
) -> np.ndarray:
    """Mean of the eight query-state hidden vectors, then the configured
    affine map into condition space."""
    if len(vectors) != N_QUERY_TOKENS:
        raise DimensionMismatch(f"need exactly {N_QUERY_TOKENS} vectors, got {len(vectors)}")
    arrs = [np.asarray(v, dtype=float) for v in vectors]
    dim = arrs[0].shape
    if len(dim) != 1 or any(a.shape != dim for a in arrs):
        raise DimensionMismatch("query vectors must share one dimension")
    mean = np.mean(arrs, axis=0)
    if projection is None:
        return mean
    return projection(mean)


_PROPERTY_RE = re.compile(
    r"([A-Za-z_][A-Za-z0-9_]*)\s*:\s*"
    r"([-+]?\d+\.\d+(?:[eE][-+]?\d+)?|[-+]?\d+|yes|no|true|false)\b",
    re.IGNORECASE,
)

_BOOL_WORDS = {"yes": 1, "true": 1, "no": 0, "false": 0}


def extract_conditions(question: str) -> tuple[dict[str, int], dict[str, float]]:
    """Pull 'name: value' annotations out of a benchmark question; floats go
    to the continuous slots, ints and yes/no words to the categorical ones."""
    categorical: dict[str, int] = {}
    continuous: dict[str, float] = {}
    for name, raw in _PROPERTY_RE.findall(question):
        low = raw.lower()
        if low in _BOOL_WORDS:
            categorical[name] = _BOOL_WORDS[low]
        elif re.fullmatch(r"[-+]?\d+", raw):
            categorical[name] = int(raw)
        else:
            continuous[name] = float(raw)
    return categorical, continuous


# -- session -----------------------------------------------------------------

TEXT = "Text"
DESIGN_QUERY = "DesignQuery"
DESIGNING = "Designing"
RETRO_QUERY = "RetroQuery"
RETRO = "Retro"
CALLBACK = "Callback"


@dataclass
class Element:
    kind: str  # text | molecule | reaction | callback | failure
    payload: object


class GenerationSession:
    def __init__(
        self,
        vocab: Optional[TokenVocabulary] = None,
        projection: Optional[AffineProjection] = None,
        question: str = "",
    ):
        self.vocab = vocab or TokenVocabulary()
        self.projection = projection
        self.state = TEXT
        self.history: list[str] = []
        self.elements: list[Element] = []
        self.query_vectors: list[np.ndarray] = []
        self.violations: list[str] = []
        self.molecule_embeddings: dict[int, np.ndarray] = {}
        self.designed_molecule: Optional[MolecularGraph] = None
        self.route: Optional[Route] = None
        self.finished = False
        self.categorical, self.continuous = extract_conditions(question)

    # transcript ------------------------------------------------------------

    def append_text(self, token: str) -> None:
        # merge adjacent word tokens into one running text element
        if self.elements and self.elements[-1].kind == "text":
            self.elements[-1].payload = f"{self.elements[-1].payload} {token}"
        else:
            self.elements.append(Element("text", token))

    def transcript(self) -> list[dict]:
        return [{"kind": e.kind, "payload": e.payload} for e in self.elements]

    def transcript_json(self) -> str:
        return json.dumps(self.transcript())

    def text_since_last_molecule(self) -> str:
        parts: list[str] = []
        for e in reversed(self.elements):
            if e.kind == "molecule":
                break
            if e.kind == "text":
                parts.append(str(e.payload))
        return " ".join(reversed(parts))

    def record_violation(self, token: str, why: str) -> None:
        self.violations.append(f"{token}: {why}")

    # low-level moves ---------------------------------------------------------

    def _collect_query_vectors(self, lm: LanguageModel, body_token: str) -> None:
        self.query_vectors = []
        for _ in range(N_QUERY_TOKENS):
            self.history.append(body_token)
            vec = lm.hidden(self.history, self.molecule_embeddings)
            self.query_vectors.append(np.asarray(vec, dtype=float))


def _pick(dist: dict) -> str:
    # greedy with a deterministic tie-break
    return max(dist.items(), key=lambda kv: (kv[1], kv[0]))[0]


def step(session: GenerationSession, lm: LanguageModel) -> GenerationSession:
    """Advance one token in the Text state. Trigger tokens flip the state and
    auto-collect the eight query vectors; misplaced special tokens are
    recorded and dropped."""
    if session.finished:
        raise ProtocolViolation("session already finished")
    if session.state != TEXT:
        raise ProtocolViolation(f"step() only advances the Text state, not {session.state}")
    v = session.vocab
    dist = lm.next_token(session.history, session.molecule_embeddings)
    if dist is None:
        session.finished = True
        return session
    token = _pick(dist)
    if token == v.design_start:
        session.history.append(token)
        session.state = DESIGN_QUERY
        session._collect_query_vectors(lm, v.design_body)
    elif token == v.retro_start:
        session.history.append(token)
        session.state = RETRO_QUERY
        session._collect_query_vectors(lm, v.retro_body)
    elif token in v.special():
        session.record_violation(token, f"not expected in state {session.state}")
    else:
        session.history.append(token)
        session.append_text(token)
    return session


def _callback_segment(session: GenerationSession, lm: LanguageModel, max_tokens: int) -> None:
    """LM free text between callback delimiters; closes on callback_end or
    stream end."""
    v = session.vocab
    session.state = CALLBACK
    session.history.append(v.callback_start)
    words: list[str] = []
    for _ in range(max_tokens):
        dist = lm.next_token(session.history, session.molecule_embeddings)
        if dist is None:
            break
        token = _pick(dist)
        if token == v.callback_end:
            break
        if token in v.special():
            session.record_violation(token, "not expected inside callback")
            continue
        session.history.append(token)
        words.append(token)
    session.history.append(v.callback_end)
    session.elements.append(Element("callback", " ".join(words)))
    session.state = TEXT


DesignSampler = Callable[[ConditionVector], SampleResult]


def run_design(
    session: GenerationSession,
    lm: LanguageModel,
    sampler: DesignSampler,
    encoder: Callable[[MolecularGraph], np.ndarray],
    retries: int = 3,
    max_callback_tokens: int = 100,
) -> GenerationSession:
    """Fire the molecular-design module: condition from the collected query
    vectors plus host-parsed property slots, then up to `retries` sampler
    attempts; failure falls back to an LM callback segment."""
    if session.state != DESIGN_QUERY or len(session.query_vectors) != N_QUERY_TOKENS:
        raise ProtocolViolation("run_design needs DesignQuery state with 8 vectors")
    v = session.vocab
    session.state = DESIGNING
    text_vec = query_condition(session.query_vectors, session.projection)
    condition = ConditionVector(
        categorical=dict(session.categorical),
        continuous=dict(session.continuous),
        text=text_vec,
    )
    result: Optional[SampleResult] = None
    for _ in range(retries):
        try:
            result = sampler(condition)
        except MolforgeError as exc:
            session.record_violation(v.design_body, f"sampler error: {exc}")
            result = None
            continue
        if result.valid:
            break
    if result is not None and result.valid and result.graph is not None:
        graph = result.graph
        session.designed_molecule = graph
        session.history.append(v.molecule)
        session.molecule_embeddings[len(session.history) - 1] = encoder(graph)
        session.elements.append(Element("molecule", {"smiles": write_smiles(graph)}))
        session.history.append(v.design_end)
        session.state = TEXT
    else:
        _callback_segment(session, lm, max_callback_tokens)
    return session


class LMChoiceHeuristic:
    """Heuristic provider that asks the LM a five-choice question and reads
    the probabilities of the choice tokens A-E from its distribution."""

    CHOICES = ("A", "B", "C", "D", "E")

    def __init__(self, lm: LanguageModel):
        self.lm = lm

    def __call__(self, target: str, step: int, template=None, reactants=None):
        prompt = [
            "estimate", "remaining", "steps", "for", target,
            "at", "step", str(step),
            "template", str(template) if template else "none",
            "reactants", *(reactants or ["none"]),
        ]
        dist = self.lm.next_token(prompt, {}) or {}
        raw = [max(float(dist.get(c, 0.0)), 0.0) for c in self.CHOICES]
        total = sum(raw)
        if total <= 0.0:
            return (0.2,) * 5
        return tuple(x / total for x in raw)


def run_retro(
    session: GenerationSession,
    lm: LanguageModel,
    *,
    stock,
    predictor,
    heuristic=None,
    templates_db=None,
    k: int = 50,
    max_iterations: int = 300,
    max_seconds: float = 30.0,
    target: Optional[MolecularGraph] = None,
    max_fallback_tokens: int = 50,
) -> GenerationSession:
    """Fire the retrosynthesis module for the designed (or host-provided)
    target; a solved route lands as text + reaction elements root-to-leaf,
    a Failure as a machine-readable marker plus LM fallback text."""
    if session.state != RETRO_QUERY:
        raise ProtocolViolation("run_retro needs RetroQuery state")
    v = session.vocab
    target = target if target is not None else session.designed_molecule
    if target is None:
        raise ProtocolViolation("no target molecule for retrosynthesis")
    session.state = RETRO
    heuristic = heuristic or LMChoiceHeuristic(lm)
    context = session.text_since_last_molecule()
    try:
        result = plan(
            target, stock, predictor, heuristic,
            templates_db=templates_db, k=k,
            max_iterations=max_iterations, max_seconds=max_seconds,
            context=context,
        )
    except MolforgeError as exc:
        result = Failure("predictor_error", {"message": str(exc)})
    if isinstance(result, Route):
        session.route = result
        if result.reaction is None:
            session.append_text(f"target {result.smiles} is available from stock")
        else:
            for n, node in enumerate(_route_steps(result), start=1):
                rxn = node.reaction
                reactant_smiles = [r.smiles for r in rxn.reactants]
                session.append_text(
                    f"step {n}: {node.smiles} from {' + '.join(reactant_smiles)}"
                    f" via {rxn.template_id}"
                )
                session.elements.append(
                    Element(
                        "reaction",
                        {
                            "template_id": rxn.template_id,
                            "prob": rxn.prob,
                            "cost": rxn.cost,
                            "product": node.smiles,
                            "reactants": reactant_smiles,
                        },
                    )
                )
    else:
        session.elements.append(
            Element("failure", {"reason": result.reason, "stats": dict(result.stats)})
        )
        words: list[str] = []
        for _ in range(max_fallback_tokens):
            dist = lm.next_token(session.history, session.molecule_embeddings)
            if dist is None:
                break
            token = _pick(dist)
            if token == v.retro_end or token in v.special():
                break
            session.history.append(token)
            words.append(token)
        if words:
            session.append_text(" ".join(words))
    session.history.append(v.retro_end)
    session.state = TEXT
    return session


def _route_steps(route: Route) -> list[Route]:
    """Reaction-bearing nodes in root-to-leaf (preorder) order."""
    out: list[Route] = []
    stack = [route]
    while stack:
        node = stack.pop()
        if node.reaction is not None:
            out.append(node)
            stack.extend(reversed(node.reaction.reactants))
    return out


def run_session(
    session: GenerationSession,
    lm: LanguageModel,
    *,
    sampler: Optional[DesignSampler] = None,
    encoder: Optional[Callable] = None,
    retro_kit: Optional[dict] = None,
    retries: int = 3,
    max_steps: int = 10_000,
) -> GenerationSession:
    """Drive a session to completion: step through text, fire modules on
    triggers. Missing module kits degrade to callback/failure paths."""
    encoder = encoder or FingerprintEncoder()
    for _ in range(max_steps):
        if session.finished:
            break
        if session.state == TEXT:
            step(session, lm)
        elif session.state == DESIGN_QUERY:
            if sampler is None:
                _callback_segment(session, lm, 100)
            else:
                run_design(session, lm, sampler, encoder, retries=retries)
        elif session.state == RETRO_QUERY:
            if retro_kit is None or (
                session.designed_molecule is None and "target" not in retro_kit
            ):
                session.elements.append(
                    Element("failure", {"reason": "no_retro_kit", "stats": {}})
                )
                session.history.append(session.vocab.retro_end)
                session.state = TEXT
            else:
                run_retro(session, lm, **retro_kit)
        else:  # states Designing/Retro/Callback never persist between calls
            raise ProtocolViolation(f"session stuck in state {session.state}")
    return session
