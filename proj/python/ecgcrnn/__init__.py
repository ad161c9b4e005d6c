"""ECG rhythm classification with a convolutional-recurrent network."""

import json

from ._core import (
    Error,
    Model,
    bandpass_sos,
    cinc_score,
    count_params,
    extract_windows,
    filtfilt,
    load_mat_record,
    magnitude_response,
    max_windows,
    preprocess,
    resample,
    run_cli,
    standardize,
)
from ._core import metrics_report as _metrics_report
from ._core import replay as _replay

CLASSES = ("N", "A", "O", "~")


def metrics_report(pred, truth):
    """Confusion matrix and per-class metrics as a dict."""
    return json.loads(_metrics_report(list(pred), list(truth)))


def replay(samples, fs, model, frame_size=4096, session="replay"):
    """Streaming predictions for an int16 signal, one dict per group."""
    text = _replay(list(samples), fs, model, frame_size, session)
    return [json.loads(line) for line in text.splitlines()]


__all__ = [
    "CLASSES",
    "Error",
    "Model",
    "bandpass_sos",
    "cinc_score",
    "count_params",
    "extract_windows",
    "filtfilt",
    "load_mat_record",
    "magnitude_response",
    "max_windows",
    "metrics_report",
    "preprocess",
    "replay",
    "resample",
    "run_cli",
    "standardize",
]
