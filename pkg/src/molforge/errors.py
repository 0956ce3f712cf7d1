"""Exception types shared across the package."""


class MolforgeError(Exception):
    """Base class for all package errors."""


class InvalidGraph(MolforgeError):
    """A molecular graph violates structural invariants."""


class LengthMismatch(MolforgeError):
    """Fingerprints of different length/radius were combined."""


class ParseError(MolforgeError):
    """Positioned syntax error in SMILES/pattern input."""

    def __init__(self, position, reason):
        self.position = position
        self.reason = reason
        super().__init__(f"at position {position}: {reason}")


class UnsupportedFeature(ParseError):
    """Input uses a construct outside the supported subset."""


class BadDistribution(MolforgeError):
    """A probability vector is malformed (negative mass, wrong sum, wrong length)."""


class TimestepOutOfRange(MolforgeError):
    """Diffusion timestep outside [1, T]."""


class ZeroMass(MolforgeError):
    """Posterior product has no probability mass; inputs are inconsistent."""


class DenoiserContract(MolforgeError):
    """A denoiser returned rows that are not probability distributions."""


class DecodeError(MolforgeError):
    """Token-to-graph decoding hit an irreconcilable conflict."""


class TemplateUnsupported(MolforgeError):
    """A template uses constructs outside the rewrite semantics."""


class MatchBudgetExceeded(MolforgeError):
    """Subgraph matching exceeded its node-expansion cap."""


class PredictorUnavailable(MolforgeError):
    """The one-step predictor (or wire peer) failed to answer."""


class EmptyFrontier(MolforgeError):
    """Selection requested from an empty frontier."""


class InconsistentTree(MolforgeError):
    """A solved subtree failed validation; indicates a planner bug."""


class DimensionMismatch(MolforgeError):
    """Vector dimensions disagree."""


class ProtocolViolation(MolforgeError):
    """A token arrived that the generation state machine cannot accept."""


class UndefinedMetric(MolforgeError):
    """A metric is undefined for the given inputs (e.g. a class is absent)."""


class EmptyList(MolforgeError):
    """An aggregate metric was asked of an empty list."""


class ConfigError(MolforgeError):
    """Engine configuration file is malformed or inconsistent."""
