import json
import logging
import math
import os

import pandas as pd

from .errors import DataFormatError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ["variable", "mean_beta", "pct_sel", "pct_cov", "fcr", "failed_reps"]
TABLE_HEADER = ["mean_beta", "%sel", "%cov", "FCR"]
# reports are compared byte for byte across thread counts
DIGITS = 10


# =========================================================
# 0) VALUE HELPERS
# =========================================================
def _clean(value):
    if value is None:
        return None
    value = float(value)
    if not math.isfinite(value):
        return None
    return round(value, DIGITS)


def _fmt(value, spec):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return format(value, spec)


# =========================================================
# 1) SIMULATION REPORTS -> DICT / CSV / JSON
# =========================================================
def report_to_dict(report):
    """Serializable view of a SimulationReport; wall-clock is left out."""
    return {
        "schema": SCHEMA_VERSION,
        "config": report.config.to_dict(),
        "completed_reps": int(report.completed_reps),
        "failed_reps": int(report.failed_reps),
        "fcr": _clean(report.fcr),
        "variables": [
            {
                "variable": v.variable,
                "mean_beta": _clean(v.mean_beta),
                "pct_sel": _clean(v.pct_sel),
                "pct_cov": _clean(v.pct_cov),
            }
            for v in report.variables
        ],
    }


def report_frame(report):
    data = report_to_dict(report)
    rows = [
        {**v, "fcr": data["fcr"], "failed_reps": data["failed_reps"]}
        for v in data["variables"]
    ]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(report, path):
    report_frame(report).to_csv(path, index=False, encoding="utf-8")


# =========================================================
# 2) LOADING WITH SCHEMA CHECKS
# =========================================================
def _frame_from_json(data, path):
    if not isinstance(data, dict) or data.get("schema") != SCHEMA_VERSION:
        raise DataFormatError(f"'{path}' is not a schema-{SCHEMA_VERSION} simulation report")
    variables = data.get("variables")
    if not isinstance(variables, list) or not variables:
        raise DataFormatError(f"'{path}' has no variable rows")
    frame = pd.DataFrame(variables)
    missing = [c for c in ("variable", "mean_beta", "pct_sel", "pct_cov") if c not in frame.columns]
    if missing:
        raise DataFormatError(f"'{path}' lacks report fields {missing}")
    frame["fcr"] = data.get("fcr")
    frame["failed_reps"] = data.get("failed_reps", 0)
    return frame[CSV_COLUMNS]


def load_report(path):
    """Read a report written by write_json or write_csv into a CSV-shaped frame."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise DataFormatError(f"Report file '{path}' is empty")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"Report file '{path}' is not valid JSON: {exc}")
        return _frame_from_json(data, path)
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"Report file '{path}' is not a readable CSV: {exc}")
    if list(frame.columns) != CSV_COLUMNS:
        raise DataFormatError(f"'{path}' columns {list(frame.columns)} do not match {CSV_COLUMNS}")
    if frame.empty:
        raise DataFormatError(f"'{path}' has no variable rows")
    return frame


# =========================================================
# 3) FIXED-WIDTH TEXT TABLE
# =========================================================
def _cell(token, text):
    return text.ljust(len(token))


def render_table(frames, labels=None):
    """
    Side-by-side text table, one column group per report. FCR is shown once
    per report, on its first row, scaled by 100.
    """
    if not frames:
        return ""
    labels = labels or [f"report {k + 1}" for k in range(len(frames))]
    names = []
    for frame in frames:
        for name in frame["variable"]:
            if name not in names:
                names.append(name)
    width = max([4] + [len(str(n)) for n in names])
    group = "  ".join(TABLE_HEADER)
    lines = []
    if len(frames) > 1:
        lines.append(" " * (width + 2) + "  ".join(str(lbl)[: len(group)].ljust(len(group)) for lbl in labels).rstrip())
    lines.append("Coef".ljust(width) + "  " + "  ".join([group] * len(frames)))
    for i, name in enumerate(names):
        parts = []
        for frame in frames:
            match = frame[frame["variable"] == name]
            if match.empty:
                row = {"mean_beta": None, "pct_sel": None, "pct_cov": None}
            else:
                row = match.iloc[0].to_dict()
            fcr = frame["fcr"].iloc[0] if i == 0 else None
            fcr = None if fcr is None or pd.isna(fcr) else 100.0 * float(fcr)
            cells = [
                _cell("mean_beta", _fmt(_nan_none(row["mean_beta"]), ".3f")),
                _cell("%sel", _fmt(_nan_none(row["pct_sel"]), ".0f")),
                _cell("%cov", _fmt(_nan_none(row["pct_cov"]), ".0f")),
                _cell("FCR", _fmt(fcr, ".0f") if i == 0 else ""),
            ]
            parts.append("  ".join(cells))
        lines.append((str(name).ljust(width) + "  " + "  ".join(parts)).rstrip())
    return "\n".join(lines) + "\n"


def _nan_none(value):
    if value is None:
        return None
    try:
        return None if pd.isna(value) else float(value)
    except TypeError:
        return None


# =========================================================
# 4) SINGLE-DATASET FIT RESULTS
# =========================================================
def fit_result_to_dict(result, config=None, naive=None):
    """JSON document for one run of the selection pipeline."""
    fit = result.fit
    out = {
        "schema": SCHEMA_VERSION,
        "selected": fit.selected,
        "beta0": fit.beta0,
        "coefficients": dict(zip(fit.names, (float(b) for b in fit.beta))),
        "fit": fit.to_dict(),
        "intervals": [iv.to_dict() for iv in result.intervals],
        "nuisance": result.nuisance.summary(result.pseudo),
        "config": config or {},
    }
    if naive is not None:
        out["naive"] = {
            name: {"estimate": e.estimate, "se": e.se, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi, "p_value": e.p_value}
            for name, e in naive.items()
        }
    return _json_safe(out)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "item"):
        return _json_safe(obj.item())
    return obj


# =========================================================
# 5) REPORT GENERATOR
# =========================================================
class ReportGenerator:

    def generate_report(self, report, output_path):
        """Write a simulation report as JSON or CSV, chosen by file extension."""
        ext = os.path.splitext(output_path)[1].lower()
        if ext == ".json":
            write_json(report, output_path)
        elif ext == ".csv":
            write_csv(report, output_path)
        else:
            raise DataFormatError(f"Unsupported report extension '{ext}' (use .csv or .json)")
        logger.info(f"Report written to {output_path}")
        return output_path

    def render(self, paths):
        frames = [load_report(p) for p in paths]
        return render_table(frames, [os.path.basename(p) for p in paths])
