from typing import Dict, List, Tuple

import numpy as np

from ..autodiff.functional import embedding, linear, softmax
from ..autodiff.graph import ParamSpec
from ..autodiff.tensor import Tensor
from ..base.base_models import AttentionModelBase
from ..commons import constants as C


class HierarchicalAttentionClient(AttentionModelBase):
    """Two-level attention document classifier (word attention, then sentence attention).

    Each level encodes its inputs with a tanh projection, scores them against a
    learned context vector and pools with the softmax weights."""
    kind = "hierarchical"
    group_names = C.HIERARCHICAL_GROUPS

    def param_specs(self) -> List[ParamSpec]:
        c = self.config
        d = c.embed_dim
        return [
            ParamSpec("embedding", (c.vocab_size, d), C.OTHER_GROUP, d),
            ParamSpec("word_enc_w", (d, d), C.OTHER_GROUP, d),
            ParamSpec("word_enc_b", (d,), C.OTHER_GROUP, d),
            ParamSpec("word_att_w", (d, d), "word_attention", d),
            ParamSpec("word_att_b", (d,), "word_attention", d),
            ParamSpec("word_context", (d, 1), "word_attention", d),
            ParamSpec("sent_enc_w", (d, d), C.OTHER_GROUP, d),
            ParamSpec("sent_enc_b", (d,), C.OTHER_GROUP, d),
            ParamSpec("sent_att_w", (d, d), "sentence_attention", d),
            ParamSpec("sent_att_b", (d,), "sentence_attention", d),
            ParamSpec("sent_context", (d, 1), "sentence_attention", d),
            ParamSpec("cls_w", (d, c.classes), C.OTHER_GROUP, d),
            ParamSpec("cls_b", (c.classes,), C.OTHER_GROUP, d),
        ]

    def input_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {"tokens": (self.config.sents_per_doc, self.config.words_per_sent)}

    def forward(self, p: Dict[str, Tensor], inputs: Dict[str, np.ndarray]) -> Tuple[Tensor, Dict[str, Tensor]]:
        tokens = np.asarray(inputs["tokens"])
        b, s, w = tokens.shape
        h = linear(embedding(p["embedding"], tokens), p["word_enc_w"], p["word_enc_b"]).tanh()
        u = linear(h, p["word_att_w"], p["word_att_b"]).tanh()
        word_weights = softmax((u @ p["word_context"]).reshape(b, s, w))
        sentences = (word_weights.reshape(b, s, w, 1) * h).sum(axis=2)

        hs = linear(sentences, p["sent_enc_w"], p["sent_enc_b"]).tanh()
        us = linear(hs, p["sent_att_w"], p["sent_att_b"]).tanh()
        sent_weights = softmax((us @ p["sent_context"]).reshape(b, s))
        document = (sent_weights.reshape(b, s, 1) * hs).sum(axis=1)

        logits = linear(document, p["cls_w"], p["cls_b"])
        return logits, {"word_attention": word_weights, "sentence_attention": sent_weights}


class SelfAttentionClient(AttentionModelBase):
    """One transformer encoder block (multi-head self-attention, tanh feed-forward) with mean pooling."""
    kind = "selfattn"
    group_names = C.SELFATTN_GROUPS

    @property
    def head_dim(self) -> int:
        return self.config.embed_dim // self.config.heads

    def param_specs(self) -> List[ParamSpec]:
        c = self.config
        d = c.embed_dim
        groups = {"q": "query_proj", "k": "key_proj", "v": "value_proj"}
        return [
            ParamSpec("embedding", (c.vocab_size, d), C.OTHER_GROUP, d),
            ParamSpec("position", (c.seq_len, d), C.OTHER_GROUP, d),
            *self._projection_specs("attn", d, groups),
            ParamSpec("attn_wo", (d, d), "output_proj", d),
            ParamSpec("attn_bo", (d,), "output_proj", d),
            ParamSpec("ffn_w", (d, d), C.OTHER_GROUP, d),
            ParamSpec("ffn_b", (d,), C.OTHER_GROUP, d),
            ParamSpec("cls_w", (d, c.classes), C.OTHER_GROUP, d),
            ParamSpec("cls_b", (c.classes,), C.OTHER_GROUP, d),
        ]

    def input_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {"tokens": (self.config.seq_len,)}

    def forward(self, p: Dict[str, Tensor], inputs: Dict[str, np.ndarray]) -> Tuple[Tensor, Dict[str, Tensor]]:
        x = embedding(p["embedding"], np.asarray(inputs["tokens"])) + p["position"]
        context, weights = self._attend(x, x, p, "attn", self.config.heads)
        h = x + linear(context, p["attn_wo"], p["attn_bo"])
        h = h + linear(h, p["ffn_w"], p["ffn_b"]).tanh()
        logits = linear(h.mean(axis=1), p["cls_w"], p["cls_b"])
        return logits, {"self_attention": weights}


class CrossAttentionClient(AttentionModelBase):
    """Two token streams, each with self-attention, fused by cross-attention from stream a to stream b."""
    kind = "crossattn"
    group_names = C.CROSSATTN_GROUPS

    def param_specs(self) -> List[ParamSpec]:
        c = self.config
        d = c.embed_dim
        return [
            ParamSpec("embedding_a", (c.vocab_size, d), C.OTHER_GROUP, d),
            ParamSpec("embedding_b", (c.vocab_size, d), C.OTHER_GROUP, d),
            ParamSpec("position_a", (c.seq_len, d), C.OTHER_GROUP, d),
            ParamSpec("position_b", (c.stream_b_len, d), C.OTHER_GROUP, d),
            *self._projection_specs("sa", d, dict.fromkeys("qkv", "stream_a_attention")),
            *self._projection_specs("sb", d, dict.fromkeys("qkv", "stream_b_attention")),
            *self._projection_specs("cx", d, dict.fromkeys("qkv", "cross_attention")),
            ParamSpec("cls_w", (d, c.classes), C.OTHER_GROUP, d),
            ParamSpec("cls_b", (c.classes,), C.OTHER_GROUP, d),
        ]

    def input_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {"tokens_a": (self.config.seq_len,), "tokens_b": (self.config.stream_b_len,)}

    def forward(self, p: Dict[str, Tensor], inputs: Dict[str, np.ndarray]) -> Tuple[Tensor, Dict[str, Tensor]]:
        heads = self.config.heads
        xa = embedding(p["embedding_a"], np.asarray(inputs["tokens_a"])) + p["position_a"]
        xb = embedding(p["embedding_b"], np.asarray(inputs["tokens_b"])) + p["position_b"]
        ca, wa = self._attend(xa, xa, p, "sa", heads)
        cb, wb = self._attend(xb, xb, p, "sb", heads)
        ha, hb = xa + ca, xb + cb
        cc, wc = self._attend(ha, hb, p, "cx", heads)
        pooled = (ha + cc).mean(axis=1) + hb.mean(axis=1)
        logits = linear(pooled, p["cls_w"], p["cls_b"])
        return logits, {"stream_a_attention": wa, "stream_b_attention": wb, "cross_attention": wc}
