"""
Observational data model: (W, A, Y) tables, term-based model specifications,
design-matrix construction and CSV ingestion.
"""
import io
import logging
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DataFormatError,
    FormulaError,
    MissingColumnError,
    TreatmentValueError,
    ValidationError,
)

logger = logging.getLogger(__name__)

TREATMENT_SYMBOL = "A"
FAMILIES = ("linear", "logistic")


class ObservationTable:
    """
    n observations of covariates W, binary treatment A and real outcome Y.

    Instances are immutable: arrays are flagged read-only and the covariate
    frame is only handed out as a copy.
    """

    def __init__(self, covariates, treatment, outcome, treatment_name="A", outcome_name="Y"):
        if not isinstance(covariates, pd.DataFrame):
            covariates = pd.DataFrame(covariates)
        names = [str(c) for c in covariates.columns]
        if any(not name for name in names):
            raise ValidationError("Covariate column names must be nonempty")
        if len(set(names)) != len(names):
            raise ValidationError(f"Covariate column names must be unique: {names}")
        if treatment_name in names or outcome_name in names or treatment_name == outcome_name:
            raise ValidationError("Treatment, outcome and covariate names must be distinct")

        treatment = np.asarray(treatment, dtype=float).ravel()
        outcome = np.asarray(outcome, dtype=float).ravel()
        n = len(treatment)
        if n < 2:
            raise ValidationError(f"A table needs at least 2 rows, got {n}")
        if len(outcome) != n or len(covariates) != n:
            raise ValidationError(
                f"Column lengths differ: treatment {n}, outcome {len(outcome)}, covariates {len(covariates)}"
            )

        values = covariates.to_numpy(dtype=float, copy=True)
        for label, block in (("covariates", values), ("treatment", treatment), ("outcome", outcome)):
            if not np.all(np.isfinite(block)):
                raise DataFormatError(f"Missing or non-finite values in {label}")
        bad = np.flatnonzero((treatment != 0.0) & (treatment != 1.0))
        if bad.size:
            raise TreatmentValueError(int(bad[0]) + 1, treatment[bad[0]], treatment_name)

        values.setflags(write=False)
        treatment.setflags(write=False)
        outcome.setflags(write=False)
        self._values = values
        self._names = tuple(names)
        self._index = {name: j for j, name in enumerate(names)}
        self.treatment = treatment
        self.outcome = outcome
        self.treatment_name = treatment_name
        self.outcome_name = outcome_name

    @property
    def n(self):
        return len(self.treatment)

    @property
    def covariate_names(self):
        return self._names

    @property
    def covariate_matrix(self):
        """Read-only n×d array of covariates in column order."""
        return self._values

    def column(self, name):
        if name not in self._index:
            raise MissingColumnError(name, "covariates")
        return self._values[:, self._index[name]]

    def covariate_frame(self):
        return pd.DataFrame(np.array(self._values), columns=list(self._names))

    def to_frame(self):
        df = self.covariate_frame()
        df[self.treatment_name] = np.array(self.treatment)
        df[self.outcome_name] = np.array(self.outcome)
        return df

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"ObservationTable(n={self.n}, covariates={list(self._names)})"


@dataclass(frozen=True)
class Term:
    """Product of covariates, optionally multiplied by the treatment."""

    factors: tuple = ()
    treated: bool = False

    @property
    def is_intercept(self):
        return not self.factors and not self.treated

    @property
    def name(self):
        parts = ([TREATMENT_SYMBOL] if self.treated else []) + list(self.factors)
        return "*".join(parts) if parts else "1"


INTERCEPT = Term()


@dataclass(frozen=True)
class ModelSpec:
    """
    Ordered terms plus a family. The intercept, when present, is column 0.
    """

    terms: tuple
    family: str = "linear"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"Unknown family '{self.family}', expected one of {FAMILIES}")
        terms = tuple(self.terms)
        if not terms:
            raise FormulaError("A model needs at least one term")
        intercepts = [i for i, t in enumerate(terms) if t.is_intercept]
        if len(intercepts) > 1:
            raise FormulaError("At most one intercept is allowed")
        if intercepts and intercepts[0] != 0:
            terms = (INTERCEPT,) + tuple(t for t in terms if not t.is_intercept)
        keys = [(frozenset(t.factors), t.treated) for t in terms]
        if len(set(keys)) != len(keys):
            raise FormulaError(f"Duplicate terms in model: {[t.name for t in terms]}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_terms(cls, terms, family="linear", intercept=True):
        terms = [t if isinstance(t, Term) else _term_from_names(t) for t in terms]
        terms = [t for t in terms if not t.is_intercept]
        if intercept:
            terms = [INTERCEPT] + terms
        return cls(tuple(terms), family)

    @property
    def term_names(self):
        return [t.name for t in self.terms]

    @property
    def has_intercept(self):
        return bool(self.terms) and self.terms[0].is_intercept

    @property
    def uses_treatment(self):
        return any(t.treated for t in self.terms)

    @property
    def covariates(self):
        seen = []
        for t in self.terms:
            for name in t.factors:
                if name not in seen:
                    seen.append(name)
        return seen

    def formula(self):
        return " + ".join(self.term_names)

    def __len__(self):
        return len(self.terms)


def _term_from_names(names):
    if isinstance(names, str):
        names = [names]
    names = list(names)
    treated = TREATMENT_SYMBOL in names
    factors = tuple(n for n in names if n not in (TREATMENT_SYMBOL, "1"))
    return Term(factors, treated)


_TOKEN = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def _signed_chunks(text):
    """Split on ``+`` and ``-``; a leading ``-`` is allowed for ``-1 + ...``."""
    pieces = [p.strip() for p in re.split(r"([+-])", str(text))]
    chunks = []
    sign = "+"
    for i, piece in enumerate(pieces):
        if i % 2:
            sign = piece
            continue
        if not piece:
            if i == 0 and len(pieces) > 1 and pieces[1] == "-":
                continue
            raise FormulaError(f"Empty term in formula '{text}'")
        chunks.append((sign, piece))
    return chunks


def parse_formula(text, family="linear"):
    """
    Parse ``1 + A + X + V1*V2*V3 + A*V1`` into a ModelSpec.

    The intercept is implied; a ``0`` term or ``- 1`` removes it.
    """
    if text is None or not str(text).strip():
        raise FormulaError("Empty formula")
    intercept = True
    terms = []
    for sign, chunk in _signed_chunks(text):
        if sign == "-":
            if chunk != "1":
                raise FormulaError(f"Only the intercept can be removed with '-', got '- {chunk}' in '{text}'")
            intercept = False
            continue
        if chunk == "1":
            continue
        if chunk == "0":
            intercept = False
            continue
        factors = [f.strip() for f in chunk.split("*")]
        for f in factors:
            if not _TOKEN.match(f):
                raise FormulaError(f"Bad token '{f}' in formula '{text}'")
        if len(set(factors)) != len(factors):
            raise FormulaError(f"Repeated factor in term '{chunk}'")
        terms.append(_term_from_names(factors))
    return ModelSpec.from_terms(terms, family=family, intercept=intercept)


def validate_spec(table, spec):
    """Raise MissingColumnError for the first covariate the table lacks."""
    for name in spec.covariates:
        if name not in table.covariate_names:
            raise MissingColumnError(name, "covariates")


def build_design(table, spec, a_override=None):
    """
    One column per term in spec order.

    With ``a_override`` set to 0 or 1, every treated term uses that value in
    place of the observed treatment (Q̄(a, W) evaluation).
    """
    validate_spec(table, spec)
    if a_override is not None and a_override not in (0, 1):
        raise ValidationError(f"a_override must be 0 or 1, got {a_override!r}")
    n = table.n
    if a_override is None:
        a = np.asarray(table.treatment, dtype=float)
    else:
        a = np.full(n, float(a_override))
    X = np.empty((n, len(spec.terms)))
    for j, term in enumerate(spec.terms):
        col = np.ones(n)
        for name in term.factors:
            col = col * table.column(name)
        if term.treated:
            col = col * a
        X[:, j] = col
    return X


@dataclass(frozen=True)
class EmCandidateSet:
    """Ordered candidate effect modifiers V = (V(1), ..., V(p))."""

    names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if not names:
            raise ValidationError("At least one candidate effect modifier is required")
        if len(set(names)) != len(names):
            raise ValidationError(f"Candidate names must be unique: {list(names)}")
        object.__setattr__(self, "names", names)

    @property
    def p(self):
        return len(self.names)

    def validate(self, table):
        for name in self.names:
            if name not in table.covariate_names:
                raise MissingColumnError(name, "covariates")

    def matrix(self, table):
        self.validate(table)
        return np.column_stack([table.column(name) for name in self.names])


class Preprocessor:
    """
    Turns a raw CSV frame into a validated ObservationTable.
    """

    def __init__(self, treatment_name, outcome_name):
        self.treatment_name = treatment_name
        self.outcome_name = outcome_name
        self.required_columns = [treatment_name, outcome_name]

    def clean_data(self, df):
        df = df.copy()
        df.columns = [str(c).strip() for c in df.columns]

        missing_cols = [col for col in self.required_columns if col not in df.columns]
        if missing_cols:
            raise MissingColumnError(missing_cols[0], "CSV header")
        if any(c == "" for c in df.columns):
            raise ValidationError("CSV header contains an empty column name")
        if len(set(df.columns)) != len(df.columns):
            raise ValidationError(f"CSV header contains duplicate names: {list(df.columns)}")

        numeric = {}
        for col in df.columns:
            numeric[col] = self._parse_column(df[col], col)
        frame = pd.DataFrame(numeric, index=df.index)

        treatment = frame[self.treatment_name].to_numpy()
        bad = np.flatnonzero((treatment != 0.0) & (treatment != 1.0))
        if bad.size:
            row = int(bad[0]) + 1
            raise TreatmentValueError(row, df[self.treatment_name].iloc[bad[0]], self.treatment_name)

        covariates = frame.drop(columns=self.required_columns)
        return ObservationTable(
            covariates,
            treatment,
            frame[self.outcome_name].to_numpy(),
            treatment_name=self.treatment_name,
            outcome_name=self.outcome_name,
        )

    def _parse_column(self, series, column):
        """Decimal reals only; rows are numbered from 1 after the header."""
        text = series.astype(str).str.strip()
        values = pd.to_numeric(text.where(text != ""), errors="coerce")
        bad = values.isna().to_numpy() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            cell = series.iloc[i]
            kind = "Missing value" if text.iloc[i] == "" else f"Unparseable value {cell!r}"
            raise DataFormatError(f"{kind} in row {i + 1}, column '{column}'", row=i + 1, column=column)
        return values.to_numpy(dtype=float)


_PARSER_LINE = re.compile(r"line (\d+)")


def _read_text(source):
    """Whole file as text; rows are counted from 1 after the header."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        row = data[:exc.start].count(b"\n")
        where = f"row {row}" if row else "the header"
        raise DataFormatError(f"CSV is not valid UTF-8 (byte {exc.start}, {where})", row=row or None)


def load_csv(path, treatment_name, outcome_name):
    """Read a UTF-8 CSV with header into a validated ObservationTable."""
    text = _read_text(path)
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"CSV file '{path}' is empty")
    except pd.errors.ParserError as exc:
        match = _PARSER_LINE.search(str(exc))
        row = int(match.group(1)) - 1 if match else None
        where = f" in row {row}" if row else ""
        raise DataFormatError(f"Malformed CSV{where}: {str(exc).strip()}", row=row)
    if df.shape[0] == 0:
        raise DataFormatError(f"CSV file '{path}' has a header but no rows")
    table = Preprocessor(treatment_name, outcome_name).clean_data(df)
    logger.info(f"Loaded {table.n} rows with {len(table.covariate_names)} covariates from {path}")
    return table


def write_csv(table, path):
    """Write covariates, then treatment, then outcome; floats use shortest repr."""
    table.to_frame().to_csv(path, index=False, encoding="utf-8")
