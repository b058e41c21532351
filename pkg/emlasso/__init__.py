"""Doubly robust adaptive-LASSO discovery of effect modifiers."""
from .emselect import CvConfig, EmFit, PipelineOptions, PipelineResult, estimate_cate, run_pipeline
from .errors import EmLassoError, NumericalError, PipelineError, ValidationError
from .hal import HalSpec
from .tabular import EmCandidateSet, ModelSpec, ObservationTable, load_csv, parse_formula

__version__ = "0.1.0"
