"""Exception hierarchy.

Errors split three ways so the CLI can map them onto stable exit codes:
configuration problems (2), bad input data (3), and everything else (4).
"""


class AuditError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(AuditError):
    """The audit was set up incorrectly."""


class DataError(AuditError, ValueError):
    """Input data failed validation."""


class LengthMismatch(DataError):
    pass


class OutOfRange(DataError):
    def __init__(self, trait, value):
        super().__init__(f"value {value!r} outside the range of trait {trait!r}")
        self.trait = trait
        self.value = value


class SimplexViolation(DataError):
    def __init__(self, total, expected):
        super().__init__(f"values sum to {total!r}, expected {expected!r}")
        self.total = total
        self.expected = expected


class SchemaMismatch(DataError):
    pass


class EmptyIntersection(DataError):
    pass


class TooFewSamples(DataError):
    pass


class TooFewPairs(TooFewSamples):
    pass


class AllZeroDifferences(DataError):
    """Every paired difference is zero; there is nothing to rank."""


class ShapeMismatch(DataError):
    pass


class InvalidPValue(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyDistribution(ConfigError):
    pass


class MissingColumn(DataError):
    pass


class MissingSubjectColumn(MissingColumn):
    pass


class BadNumber(DataError):
    def __init__(self, line, detail=""):
        super().__init__(f"line {line}: bad number {detail}".rstrip())
        self.line = line


class DuplicateSubject(DataError):
    def __init__(self, line, subject_id=None):
        super().__init__(f"line {line}: duplicate subject_id {subject_id!r}")
        self.line = line
        self.subject_id = subject_id


class ValidationFailed(DataError):
    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems)
        super().__init__(f"{len(self.problems)} invalid row(s): {lines}")


class InvalidAlpha(ConfigError, ValueError):
    pass


class ZeroTests(ConfigError, ValueError):
    pass


class UnknownAttribute(ConfigError):
    pass


class UnknownFacet(ConfigError):
    pass


class UnknownScenario(ConfigError):
    pass


class InconsistentFamily(AuditError):
    """Correction family size disagrees with the tests actually performed."""
