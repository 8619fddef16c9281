from __future__ import annotations

from ..autograd import Tensor, ops
from ..embedders.base import EnrollmentEmbedding
from ..errors import ContractError, ShapeError


def concat_condition(encoder_out: Tensor, utt_embedding) -> Tensor:
    """Tile an utterance embedding over time and append it to every frame.

    ``encoder_out`` is ``[Tm, N]`` or ``[batch, Tm, N]``; the embedding is
    ``[E]`` or ``[batch, E]`` to match. Output width is ``N + E``.
    """
    if isinstance(utt_embedding, EnrollmentEmbedding):
        if utt_embedding.kind != "utterance":
            raise ContractError("concat conditioning needs an utterance-level embedding; "
                                "frame-level embeddings go through the MCA block")
        utt_embedding = Tensor(utt_embedding.values, dtype=encoder_out.dtype)
    if utt_embedding.ndim != encoder_out.ndim - 1:
        raise ContractError(f"concat conditioning got embedding {utt_embedding.shape} for encoder output "
                            f"{encoder_out.shape}; frame-level embeddings go through the MCA block")
    if encoder_out.ndim == 3 and utt_embedding.shape[0] != encoder_out.shape[0]:
        raise ShapeError(f"batch mismatch: encoder {encoder_out.shape} vs embedding {utt_embedding.shape}")
    emb = ops.reshape(utt_embedding, utt_embedding.shape[:-1] + (1, utt_embedding.shape[-1]))
    tiled = ops.broadcast_to(emb, encoder_out.shape[:-1] + (utt_embedding.shape[-1],))
    return ops.concat([encoder_out, tiled], axis=-1)
