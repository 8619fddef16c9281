"""Upstream embedders as seen by the separator.

Each upstream maps a batch of raw enrollment inputs to embeddings
``[batch, D]`` (utterance) or ``[batch, Te, D]`` (frame):

* ``FbankUpstream``   precomputed FBANK vectors / frames, no parameters
* ``DVectorUpstream`` log-mel features through a d-vector model
* ``LayeredUpstream`` multi-layer frame stacks through a learnable weighted sum
"""

from __future__ import annotations

import numpy as np

from ..autograd import Tensor, no_grad
from ..autograd.nn import Module
from ..embedders.dvector import DVectorModel
from ..embedders.layered import LayerWeights
from ..errors import ShapeError


class Upstream(Module):
    # layer weights are fitted by the downstream loss even when the upstream is frozen
    always_trainable = False

    def __init__(self, level: str):
        self.level = level
        self.frozen = True

    def trainable_parameters(self):
        return self.parameters() if (not self.frozen or self.always_trainable) else []


class FbankUpstream(Upstream):
    def forward(self, enroll) -> Tensor:
        arr = np.asarray(enroll)
        want = 2 if self.level == "utterance" else 3
        if arr.ndim != want:
            raise ShapeError(f"{self.level}-level FBANK enrollment must be {want}-D, got {arr.shape}")
        return Tensor(arr)


class DVectorUpstream(Upstream):
    def __init__(self, model: DVectorModel, level: str):
        super().__init__(level)
        self.model = model

    def forward(self, enroll) -> Tensor:
        if self.frozen:
            with no_grad():
                return self.model(enroll, self.level)
        return self.model(enroll, self.level)


class LayeredUpstream(Upstream):
    always_trainable = True

    def __init__(self, weights: LayerWeights, level: str):
        super().__init__(level)
        self.weights = weights

    def forward(self, enroll) -> Tensor:
        return self.weights(enroll, self.level)
