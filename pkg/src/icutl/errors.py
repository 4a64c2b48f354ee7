"""Exception types shared across the package."""


class IcutlError(Exception):
    """Base class for all package-specific errors."""


# --- ingestion ---------------------------------------------------------------


class MissingTable(IcutlError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing table: {name}")


class SchemaMismatch(IcutlError):
    def __init__(self, table, column):
        self.table = table
        self.column = column
        super().__init__(f"table {table!r}: bad or missing column {column!r}")


class ParseError(IcutlError):
    def __init__(self, table, line, detail=""):
        self.table = table
        self.line = line
        super().__init__(f"table {table!r} line {line}: unparseable value{': ' + detail if detail else ''}")


class ReferentialViolation(IcutlError):
    def __init__(self, table, row, reason):
        self.table = table
        self.row = row
        self.reason = reason
        super().__init__(f"table {table!r} row {row}: {reason}")


class UnknownAdmission(IcutlError):
    def __init__(self, hadm_id):
        self.hadm_id = hadm_id
        super().__init__(f"unknown hadm_id: {hadm_id}")


class UnknownSubject(IcutlError):
    def __init__(self, subject_id):
        self.subject_id = subject_id
        super().__init__(f"unknown subject_id: {subject_id}")


class UnknownStay(IcutlError):
    def __init__(self, icustay_id):
        self.icustay_id = icustay_id
        super().__init__(f"unknown icustay_id: {icustay_id}")


# --- cohort filters -----------------------------------------------------------


class NegativeAge(IcutlError):
    pass


class InvalidRange(IcutlError):
    pass


# --- feature extraction -------------------------------------------------------


class InvalidHorizon(IcutlError):
    pass


class StayTooShort(IcutlError):
    pass


class EmptyInput(IcutlError):
    pass


# --- modeling -----------------------------------------------------------------


class SingleClass(IcutlError):
    pass


class DimensionMismatch(IcutlError):
    pass


class SchemaViolation(IcutlError):
    pass


class NotConvergedWarning(UserWarning):
    """Optimizer hit its iteration cap; the best iterate is still returned."""


# --- metrics ------------------------------------------------------------------


class TooFew(IcutlError):
    pass


class DomainError(IcutlError):
    pass


# --- synthetic data -----------------------------------------------------------


class IoError(IcutlError):
    pass
