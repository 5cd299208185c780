# Copyright 2026 The mlsgm Authors
# SPDX-License-Identifier: Apache-2.0
"""Multi-label recognition by instance-label graph matching."""

from mlsgm._core import (
    ConfigError,
    DataError,
    asymmetric_focal,
    average_precision,
    decode_tensor,
    drop_labels,
    encode_tensor,
    evaluate,
    gradient_check,
    load_tensor,
    localize,
    max_pool,
    partial_bce,
    run,
    save_tensor,
    synth_dataset,
    weighted_bce,
)

__all__ = [
    "ConfigError",
    "DataError",
    "asymmetric_focal",
    "average_precision",
    "decode_tensor",
    "drop_labels",
    "encode_tensor",
    "evaluate",
    "gradient_check",
    "load_tensor",
    "localize",
    "max_pool",
    "partial_bce",
    "run",
    "save_tensor",
    "synth_dataset",
    "weighted_bce",
]
