import random
import time
from dataclasses import dataclass

import numpy as np
import pytest

from vulngraph.corpus import default_catalog, split
from vulngraph.lexer import Vocabulary, build_vocab, tokenize
from vulngraph.model import ModelConfig, VulnModel
from vulngraph.objectives import FocalConfig
from vulngraph.semgraph import build_graph
from vulngraph.synth import PlantedTruth, make_toy_corpus
from vulngraph.trainer import TrainConfig, train

DESK_MODEL = dict(embed_dim=64, gcn_dim=48, gcn_layers=2, num_classes=11)
DESK_TRAIN = dict(epochs=200, learning_rate=1e-3, batch_size=8, seed=7)


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def ranks(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1)
        buckets: dict[float, list[int]] = {}
        for i, val in enumerate(v):
            buckets.setdefault(float(val), []).append(i)
        for idxs in buckets.values():
            if len(idxs) > 1:
                mean_rank = float(np.mean([r[i] for i in idxs]))
                for i in idxs:
                    r[i] = mean_rank
        return r

    rx = ranks(x) - (len(x) + 1) / 2
    ry = ranks(y) - (len(y) + 1) / 2
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    if denom == 0:
        return 1.0
    return float((rx * ry).sum() / denom)


def fuzz_snippet(rng: random.Random) -> str:
    """Small balanced C-ish function exercising all edge families."""
    names = ["a", "b", "c", "idx", "buf", "ptr", "len_v", "tmp"]
    lines = ["int fn(int a, char *buf) {"]
    for _ in range(rng.randint(1, 8)):
        kind = rng.randrange(7)
        n1, n2 = rng.choice(names), rng.choice(names)
        if kind == 0:
            lines.append(f"    int {n1} = {rng.randint(0, 99)};")
        elif kind == 1:
            lines.append(f"    {n1} = {n2} + {rng.randint(1, 9)};")
        elif kind == 2:
            lines.append(f"    if ({n1} > {rng.randint(0, 9)}) {{ {n2} = 0; }}")
        elif kind == 3:
            lines.append(f"    while ({n1} < 10) {{ {n1} = {n1} + 1; }}")
        elif kind == 4:
            lines.append(f"    strcpy({n1}, {n2});")
        elif kind == 5:
            lines.append(f"    {n1}[{n2}] = 0;")
        else:
            lines.append(f"    /* note {n1} */ *{n1} = {n2}; // trailing")
    lines.append("    return a;")
    lines.append("}")
    return "\n".join(lines)


def tiny_model_inputs(source: str, seed: int = 0, num_classes: int = 5,
                      embed_dim: int = 10, gcn_dim: int = 8):
    """A frozen fresh model plus cropped model inputs for one snippet."""
    from vulngraph.lexer import encode

    stream = tokenize(source)
    vocab = build_vocab([source])
    graph = build_graph(stream)
    active = stream.content_len
    ids = np.asarray(encode(stream, vocab), dtype=np.int64)[:active]
    adjacency = graph.adjacency[:active, :active].copy()
    mask = np.ones(active, dtype=bool)
    config = ModelConfig(vocab_size=len(vocab), embed_dim=embed_dim,
                         gcn_dim=gcn_dim, num_classes=num_classes)
    model = VulnModel(config, seed=seed).freeze()
    return model, stream, graph, vocab, ids, adjacency, mask


@dataclass
class ToyRun:
    records: list
    truth: dict[str, PlantedTruth]
    split: object
    model: VulnModel
    vocab: Vocabulary
    log: list
    elapsed_seconds: float


@pytest.fixture(scope="session")
def toy_run() -> ToyRun:
    """Train the desk-scale model once on the synthetic corpus."""
    records, truth = make_toy_corpus(seed=0)
    dataset_split = split(records, seed=7)
    model_cfg = ModelConfig(vocab_size=4, **DESK_MODEL)
    train_cfg = TrainConfig(focal=FocalConfig(alpha=0.25, delta=2.0),
                            **DESK_TRAIN)
    started = time.time()
    result = train(records, dataset_split, model_cfg, train_cfg)
    elapsed = time.time() - started
    return ToyRun(records=records, truth=truth, split=dataset_split,
                  model=result.model, vocab=result.vocab, log=result.log,
                  elapsed_seconds=elapsed)


@pytest.fixture()
def catalog():
    return default_catalog()
