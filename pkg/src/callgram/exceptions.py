class CallgramError(Exception):
    """Base class for all errors raised by callgram."""


class ReportParseError(CallgramError, ValueError):
    """A behavior report is not valid JSON."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(CallgramError, ValueError):
    """A document is valid JSON but lacks required structure."""


class EmptyTraceError(CallgramError, ValueError):
    """A report yielded no API calls."""


class VocabularyError(CallgramError, ValueError):
    """Vocabulary is empty or does not match the data/model it is used with."""


class ConfigError(CallgramError, ValueError):
    """Invalid generator, mutation or experiment configuration."""
