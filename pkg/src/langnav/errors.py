"""Exception types shared across the package.

Every error carries a stable machine-readable ``code`` (the class name) so the
command line tool can print ``error[<code>]: <message>`` on stderr and scripts
can grep for it.
"""

from __future__ import annotations


class LangNavError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class UsageError(LangNavError):
    """Bad invocation: unknown flags, missing files, malformed config."""


# --- language ---------------------------------------------------------------

class EmptyInstruction(LangNavError):
    pass


class UnknownWord(LangNavError):
    def __init__(self, word: str):
        super().__init__(f"word not in lexicon: {word!r}")
        self.word = word


class ParseFailure(LangNavError):
    pass


class InvalidVocabulary(LangNavError):
    pass


class EmptyCorpus(LangNavError):
    pass


class ModelNotFound(LangNavError):
    pass


# --- estimation -------------------------------------------------------------

class InvalidCovariance(LangNavError):
    pass


class SelfLoop(LangNavError):
    pass


class SingularSystem(LangNavError):
    pass


class UnknownLabel(LangNavError):
    pass


class MergeRefused(LangNavError):
    pass


class WeightCollapse(LangNavError):
    pass


class PlacementFailure(LangNavError):
    pass


# --- planning / execution ---------------------------------------------------

class NoPath(LangNavError):
    pass


class PathBlocked(LangNavError):
    pass


class DimensionError(LangNavError):
    pass


# --- results / artifacts ----------------------------------------------------

class ParseError(LangNavError):
    """A results or config artifact does not match its documented schema."""

