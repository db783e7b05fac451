#
# Copyright 2026 The mvcot Authors.
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Multi-view prototype co-training of time-series encoders."""

import json

from ._core import (
    DataError,
    Error,
    IoError,
    Model,
    NumericError,
    auroc_macro,
    cot_loss,
    cross_view_prototypes,
    generate_synthetic,
    instance_loss,
    kmeans,
    linear_probe,
    load_dataset,
    magnitude_spectrum,
    moving_average_update,
    nmi,
    restore,
    write_dataset,
)
from . import _core


def train(x, y=None, config=None, labeled_fraction=None):
    """Train both view encoders on series ``x`` of shape [n, length(, channels)].

    ``config`` is a dict with the same keys as the ``train`` section of a CLI
    config file; missing keys keep their defaults. Passing ``labeled_fraction``
    switches to semi-supervised training and requires ``y``.
    """
    return _core._train(x, y, json.dumps(config or {}), labeled_fraction)


__all__ = [
    "DataError", "Error", "IoError", "Model", "NumericError", "auroc_macro", "cot_loss",
    "cross_view_prototypes", "generate_synthetic", "instance_loss", "kmeans", "linear_probe",
    "load_dataset", "magnitude_spectrum", "moving_average_update", "nmi", "restore", "train",
    "write_dataset",
]
