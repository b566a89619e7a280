"""Exception hierarchy shared by every pipeline stage."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


# corpus
class ParseError(PipelineError):
    pass


class ValidationError(PipelineError):
    pass


# slicer
class UnbalancedBraces(PipelineError):
    pass


class NoDeclarationsFound(PipelineError):
    pass


class UnknownFunction(PipelineError):
    pass


# embedding / binary files
class EmptyInput(PipelineError):
    def __init__(self, message: str, code: str | None = None):
        super().__init__(message if code is None else f"[{code}] {message}")
        self.code = code


class MissingEmbedding(PipelineError):
    pass


class FormatError(PipelineError):
    pass


# dcn
class ShapeMismatch(PipelineError):
    pass


class AllKeysMasked(PipelineError):
    pass


class EmptySequence(PipelineError):
    pass


class DomainError(PipelineError):
    pass


class MissingCorpusEmbeddings(PipelineError):
    pass


class EmptyDataset(PipelineError):
    pass


class NonFiniteLoss(PipelineError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigMismatch(PipelineError):
    pass


class DegenerateLabels(PipelineError):
    pass


# orchestrator
class LlmTransportError(PipelineError):
    pass


class TranscriptMiss(PipelineError):
    pass


class MalformedVerdict(PipelineError):
    pass


class FingerprintMismatch(PipelineError):
    pass


# evalkit
class IdMismatch(PipelineError):
    pass
