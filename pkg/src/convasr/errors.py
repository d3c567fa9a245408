"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: usage/config problems -> 1,
data errors -> 2, scorer transport errors -> 3.
"""


class ConvasrError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ConvasrError):
    """Invalid configuration value or missing required setting."""


class CorpusFormatError(ConvasrError):
    """Malformed corpus, logit, vocabulary or n-best file."""


class IntegrityError(ConvasrError):
    """Structurally inconsistent data (duplicate keys, bad indices)."""


class AlphabetError(ConvasrError):
    """Token or character outside the configured alphabet."""


class VocabularyError(ConvasrError):
    """Invalid decoding-vocabulary word."""


class TrainingError(ConvasrError):
    """Language-model estimation cannot proceed (e.g. empty corpus)."""


class ArpaFormatError(CorpusFormatError):
    """Malformed ARPA file."""


class DecodeError(ConvasrError):
    """Beam search failed (e.g. the beam emptied mid-utterance)."""


class MetricError(ConvasrError):
    """Undefined metric value (zero reference words, degenerate beam)."""


class ScorerError(ConvasrError):
    """External-scorer transport or contract failure."""

    def __init__(self, message, request_id=None):
        super().__init__(message)
        self.request_id = request_id


class GenerationError(ConvasrError):
    """Training-task generation cannot satisfy its constraints."""
