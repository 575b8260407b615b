"""Python access to the mcki library: scorers, router objective, calibration
and a synthetic end-to-end run."""

from ._mcki import (
    CaseFileError,
    ConfigError,
    calibrate_threshold,
    contrastive_loss,
    lcs_length,
    load_case_ids,
    overall_sequential,
    overall_single,
    render_report,
    rouge_l,
    synthetic_run,
    tokenize,
    write_fixtures,
)

__all__ = [
    "CaseFileError",
    "ConfigError",
    "calibrate_threshold",
    "contrastive_loss",
    "lcs_length",
    "load_case_ids",
    "overall_sequential",
    "overall_single",
    "render_report",
    "rouge_l",
    "synthetic_run",
    "tokenize",
    "write_fixtures",
]
