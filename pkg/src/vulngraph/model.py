"""The network: token embedding, residual graph convolution, fused heads.

Layout per forward pass (n = number of non-PAD positions when callers
crop to the active block, or the full 512 otherwise):

    ids (n,)            -> embedding lookup       -> H0 (n x embed_dim)
    H0 @ W_in                                     -> H  (n x gcn_dim)
    per layer:  H <- H + relu(A_hat @ H @ W_layer)        (residual)
    pooled_graph = masked mean of final H                  (1 x gcn_dim)
    pooled_embed = masked mean of H0, projected by W_in    (1 x gcn_dim)
    fused = embed_weight * pooled_embed + graph_weight * pooled_graph
    class_logits = fused @ W_cls + b_cls                   (1 x classes)
    loc_pred     = sigmoid(fused @ W_loc + b_loc)          (1 x 2)

The residual is identity-shaped because the only dimension change
(embed_dim -> gcn_dim) happens in a single input projection before the
first graph layer. The embedding table is a trainable stand-in for a
pretrained encoder; since ``pooled_embed`` is a masked mean it is
order-invariant over the payload, an accepted desk-scale limitation.

``loc_pred`` regresses normalized line fractions: the target for line L
in an N-line function is (L - 0.5) / N, so the loss does not scale with
function length. ``denormalize_lines`` inverts that mapping.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from . import tensor
from .tensor import Matrix, Parameter


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 768
    gcn_dim: int = 512
    gcn_layers: int = 2
    num_classes: int = 11  # benign + ten weakness classes; 2 in binary mode
    embed_weight: float = 0.5
    graph_weight: float = 0.5

    def __post_init__(self) -> None:
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover the reserved ids")
        for name in ("embed_dim", "gcn_dim", "gcn_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        _check_fusion(self.embed_weight, self.graph_weight)

    def to_text(self) -> str:
        lines = [f"{k}={getattr(self, k)}" for k in (
            "vocab_size", "embed_dim", "gcn_dim", "gcn_layers",
            "num_classes", "embed_weight", "graph_weight")]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        try:
            return cls(
                vocab_size=int(values["vocab_size"]),
                embed_dim=int(values["embed_dim"]),
                gcn_dim=int(values["gcn_dim"]),
                gcn_layers=int(values["gcn_layers"]),
                num_classes=int(values["num_classes"]),
                embed_weight=float(values["embed_weight"]),
                graph_weight=float(values["graph_weight"]),
            )
        except KeyError as exc:
            raise ConfigError(f"model config missing key {exc}") from exc


def _check_fusion(embed_weight: float, graph_weight: float) -> None:
    if embed_weight < 0.0 or graph_weight < 0.0:
        raise ConfigError("fusion weights must be non-negative")
    if abs(embed_weight + graph_weight - 1.0) > 1e-9:
        raise ConfigError(
            f"fusion weights must sum to 1, got "
            f"{embed_weight} + {graph_weight}"
        )


def fuse(pooled_embed: Matrix, pooled_graph: Matrix,
         embed_weight: float, graph_weight: float) -> Matrix:
    """Convex combination of the two pooled feature paths."""
    _check_fusion(embed_weight, graph_weight)
    return tensor.add(tensor.scale(pooled_embed, embed_weight),
                      tensor.scale(pooled_graph, graph_weight))


@dataclass
class Forward:
    """Live computation-graph nodes from one forward pass."""

    class_logits: Matrix
    loc_pred: Matrix
    pooled_embed: Matrix
    pooled_graph: Matrix
    fused: Matrix


@dataclass(frozen=True)
class ForwardOutput:
    """Detached forward results for inference."""

    class_logits: np.ndarray
    loc_pred: tuple[float, float]
    pooled_embed: np.ndarray
    pooled_graph: np.ndarray
    fused: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        z = self.class_logits - self.class_logits.max()
        e = np.exp(z)
        return e / e.sum()

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.class_logits))


class VulnModel:
    """Residual graph-convolutional classifier/localizer over token graphs."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.frozen = False
        rng = np.random.default_rng(seed)
        self.embedding = Parameter(
            tensor.embedding_init(config.vocab_size, config.embed_dim, rng),
            "embedding")
        self.input_proj = Parameter(
            tensor.glorot_uniform(config.embed_dim, config.gcn_dim, rng),
            "input_proj")
        self.gcn_weights = [
            Parameter(tensor.glorot_uniform(config.gcn_dim, config.gcn_dim, rng),
                      f"gcn_{layer}")
            for layer in range(config.gcn_layers)
        ]
        self.cls_weight = Parameter(
            tensor.glorot_uniform(config.gcn_dim, config.num_classes, rng),
            "cls_weight")
        self.cls_bias = Parameter(tensor.zeros(1, config.num_classes), "cls_bias")
        self.loc_weight = Parameter(
            tensor.glorot_uniform(config.gcn_dim, 2, rng), "loc_weight")
        self.loc_bias = Parameter(tensor.zeros(1, 2), "loc_bias")

    def parameters(self) -> list[Parameter]:
        return [self.embedding, self.input_proj, *self.gcn_weights,
                self.cls_weight, self.cls_bias, self.loc_weight, self.loc_bias]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> "VulnModel":
        self.frozen = True
        return self

    # -- forward pieces ------------------------------------------------------

    def embed(self, ids: Sequence[int] | np.ndarray) -> Matrix:
        """Embedding rows for a sequence of token ids."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ShapeError(
                f"token id out of range [0, {self.config.vocab_size})"
            )
        return tensor.gather_rows(self.embedding.value, ids)

    def gcn_forward(self, token_embeddings: Matrix, adjacency: np.ndarray,
                    mask: np.ndarray) -> tuple[Matrix, Matrix]:
        """Project, run the residual graph layers, pool the non-PAD rows.

        Returns (final per-token features, pooled graph feature row).
        """
        n = token_embeddings.rows
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.shape != (n, n):
            raise ShapeError(
                f"adjacency {adjacency.shape} does not match {n} tokens"
            )
        operator = Matrix(adjacency)
        h = tensor.matmul(token_embeddings, self.input_proj.value)
        for weight in self.gcn_weights:
            mixed = tensor.matmul(tensor.matmul(operator, h), weight.value)
            h = tensor.add(h, tensor.relu(mixed))
        return h, tensor.mean_rows(h, mask)

    def pooled_embedding(self, token_embeddings: Matrix,
                         mask: np.ndarray) -> Matrix:
        """Masked mean of the raw embeddings, projected into graph space.

        Shares the input projection with the graph path so both pooled
        features live in the same space.
        """
        return tensor.matmul(tensor.mean_rows(token_embeddings, mask),
                             self.input_proj.value)

    def heads(self, fused: Matrix) -> tuple[Matrix, Matrix]:
        """Class logits (index 0 = benign) and sigmoid line fractions."""
        class_logits = tensor.add(
            tensor.matmul(fused, self.cls_weight.value), self.cls_bias.value)
        loc_pred = tensor.sigmoid(tensor.add(
            tensor.matmul(fused, self.loc_weight.value), self.loc_bias.value))
        return class_logits, loc_pred

    # -- full passes ----------------------------------------------------------

    def forward_nodes(self, ids: np.ndarray, adjacency: np.ndarray,
                      mask: np.ndarray,
                      occlude: Sequence[int] | None = None,
                      occlusion_baseline: str = "pad",
                      fusion: tuple[float, float] | None = None) -> Forward:
        """One forward pass returning live graph nodes.

        ``occlude`` replaces the listed positions' embedding inputs with
        the padding embedding (baseline "pad") or with zeros ("zero").
        ``fusion`` overrides the configured mixing weights.
        """
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        if occlude is not None and occlusion_baseline == "pad":
            ids = ids.copy()
            ids[np.asarray(occlude, dtype=np.int64)] = 0
        token_embeddings = self.embed(ids)
        if occlude is not None and occlusion_baseline == "zero":
            keep = np.ones((ids.size, self.config.embed_dim))
            keep[np.asarray(occlude, dtype=np.int64), :] = 0.0
            token_embeddings = tensor.mul(token_embeddings, Matrix(keep))
        elif occlude is not None and occlusion_baseline != "pad":
            raise ConfigError(
                f"unknown occlusion baseline {occlusion_baseline!r}"
            )
        _, pooled_graph = self.gcn_forward(token_embeddings, adjacency, mask)
        pooled_embed = self.pooled_embedding(token_embeddings, mask)
        embed_w, graph_w = fusion if fusion is not None else (
            self.config.embed_weight, self.config.graph_weight)
        fused = fuse(pooled_embed, pooled_graph, embed_w, graph_w)
        class_logits, loc_pred = self.heads(fused)
        return Forward(class_logits=class_logits, loc_pred=loc_pred,
                       pooled_embed=pooled_embed, pooled_graph=pooled_graph,
                       fused=fused)

    def forward(self, ids: np.ndarray, adjacency: np.ndarray, mask: np.ndarray,
                occlude: Sequence[int] | None = None,
                occlusion_baseline: str = "pad",
                fusion: tuple[float, float] | None = None) -> ForwardOutput:
        """Inference pass with detached outputs."""
        nodes = self.forward_nodes(ids, adjacency, mask, occlude=occlude,
                                   occlusion_baseline=occlusion_baseline,
                                   fusion=fusion)
        return ForwardOutput(
            class_logits=nodes.class_logits.data[0].copy(),
            loc_pred=(float(nodes.loc_pred.data[0, 0]),
                      float(nodes.loc_pred.data[0, 1])),
            pooled_embed=nodes.pooled_embed.data[0].copy(),
            pooled_graph=nodes.pooled_graph.data[0].copy(),
            fused=nodes.fused.data[0].copy(),
        )

    def class_probabilities(self, ids: np.ndarray, adjacency: np.ndarray,
                            mask: np.ndarray,
                            occlude: Sequence[int] | None = None,
                            occlusion_baseline: str = "pad") -> np.ndarray:
        return self.forward(ids, adjacency, mask, occlude=occlude,
                            occlusion_baseline=occlusion_baseline).probabilities

    # -- persistence -----------------------------------------------------------

    def save_npz(self, path: str | Path) -> None:
        tensor.save_params(path, self.parameters())

    def load_values(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise ConfigError(f"checkpoint missing parameter {p.name!r}")
            if arrays[p.name].shape != p.shape:
                raise ConfigError(
                    f"checkpoint parameter {p.name!r} has shape "
                    f"{arrays[p.name].shape}, expected {p.shape}"
                )
            p.value.data[...] = arrays[p.name]

    @classmethod
    def load_npz(cls, path: str | Path, config: ModelConfig) -> "VulnModel":
        model = cls(config, seed=0)
        model.load_values(tensor.load_params(path))
        return model.freeze()

    def with_fusion(self, embed_weight: float, graph_weight: float) -> "VulnModel":
        """Same parameters, different mixing weights (shares storage)."""
        clone = VulnModel.__new__(VulnModel)
        clone.config = replace(self.config, embed_weight=embed_weight,
                               graph_weight=graph_weight)
        clone.frozen = self.frozen
        clone.embedding = self.embedding
        clone.input_proj = self.input_proj
        clone.gcn_weights = self.gcn_weights
        clone.cls_weight = self.cls_weight
        clone.cls_bias = self.cls_bias
        clone.loc_weight = self.loc_weight
        clone.loc_bias = self.loc_bias
        return clone


def denormalize_lines(loc_pred: tuple[float, float],
                      line_count: int) -> tuple[int, int]:
    """Map normalized (start, end) fractions back to 1-based line numbers.

    Inverts target = (line - 0.5) / line_count with round-half-even,
    clamps into [1, line_count], and swaps if rounding inverted the pair.
    """
    if line_count < 1:
        raise ConfigError(f"line_count must be >= 1, got {line_count}")

    def to_line(fraction: float) -> int:
        return min(max(round(fraction * line_count + 0.5), 1), line_count)

    start, end = to_line(loc_pred[0]), to_line(loc_pred[1])
    if start > end:
        start, end = end, start
    return start, end


def normalize_line_range(start: int, end: int,
                         line_count: int) -> tuple[float, float]:
    """Training targets for an inclusive 1-based line range."""
    return ((start - 0.5) / line_count, (end - 0.5) / line_count)
