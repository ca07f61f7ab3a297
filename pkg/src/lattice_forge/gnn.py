"""Graph-level message-passing regressor for the effective modulus.

Layer shapes:
    node embed   3 -> 5   prelu
    edge embed   7 -> 5   prelu
    update 1     message 15 -> 10 selu, node 15 -> 10 selu
    update 2     message 25 -> 10 selu, node 20 -> 10 selu
    mean pooling over nodes, head 10 -> 1 linear

Each undirected strut becomes two directed messages. The message into node j
along (i -> j) sees [h_i | h_j | e_ij], where e_ij embeds the edge features with
the sender's coordinates first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import DimensionMismatch, IsolatedNode
from .lattice import Lattice
from .neural import DenseLayer, StandardScaler

NODE_FEATS = 3
EDGE_FEATS = 7
EMBED = 5
HIDDEN = 10

# (name, n_in, n_out, activation)
LAYER_SHAPES = (
    ("node_embed", NODE_FEATS, EMBED, "prelu"),
    ("edge_embed", EDGE_FEATS, EMBED, "prelu"),
    ("update1.message", 2 * EMBED + EMBED, HIDDEN, "selu"),
    ("update1.node", EMBED + HIDDEN, HIDDEN, "selu"),
    ("update2.message", 2 * HIDDEN + EMBED, HIDDEN, "selu"),
    ("update2.node", HIDDEN + HIDDEN, HIDDEN, "selu"),
    ("head", HIDDEN, 1, "linear"),
)


def closed_form_param_count() -> int:
    total = 0
    for _, n_in, n_out, act in LAYER_SHAPES:
        total += n_in * n_out + n_out + (n_out if act == "prelu" else 0)
    return total


@dataclass
class GraphSample:
    node_feats: np.ndarray  # (n_j, 3)
    edge_feats: np.ndarray  # (n_e, 7): endpoint 0 xyz, endpoint 1 xyz, length
    edges: np.ndarray  # (n_e, 2), i < j
    target: float | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_feats)

    def directed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, features) for both directions of every edge."""
        e = self.edge_feats
        rev = np.concatenate([e[:, 3:6], e[:, 0:3], e[:, 6:7]], axis=1)
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        return src, dst, np.concatenate([e, rev], axis=0)


def build_graph_sample(lattice: Lattice, label: float | None = None) -> GraphSample:
    edges = np.sort(lattice.edges, axis=1)
    p0, p1 = lattice.nodes[edges[:, 0]], lattice.nodes[edges[:, 1]]
    length = np.linalg.norm(p1 - p0, axis=1)
    feats = np.concatenate([p0, p1, length[:, None]], axis=1)
    return GraphSample(lattice.nodes.copy(), feats, edges, None if label is None else float(label))


@dataclass
class GraphBatch:
    """Disjoint union of scaled graphs."""

    x: np.ndarray  # (N, 3)
    e: np.ndarray  # (M, 7) directed
    src: np.ndarray  # (M,)
    dst: np.ndarray  # (M,)
    scatter_src: sp.csr_matrix  # (N, M) one-hot, adjoint of x[src]
    scatter_dst: sp.csr_matrix  # (N, M)
    aggregate: sp.csr_matrix  # (N, M) mean of incoming messages
    aggregate_t: sp.csr_matrix  # (M, N)
    pool: sp.csr_matrix  # (B, N)
    pool_t: sp.csr_matrix  # (N, B)
    y: np.ndarray | None = None  # scaled targets (B,)


@dataclass
class PreparedGraph:
    """One graph with scaled features; directed edges sorted by receiving node."""

    x: np.ndarray
    e: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    y: float | None = None

    def __post_init__(self):
        n = len(self.x)
        order = np.argsort(self.dst, kind="stable")
        self.e, self.src, self.dst = self.e[order], self.src[order], self.dst[order]
        self.indeg = np.bincount(self.dst, minlength=n)
        self.outdeg = np.bincount(self.src, minlength=n)
        self.by_src = np.argsort(self.src, kind="stable")


def _csr(data, indices, indptr, shape) -> sp.csr_matrix:
    return sp.csr_matrix((data, indices, indptr), shape=shape, copy=False)


def collate(graphs: list[PreparedGraph]) -> GraphBatch:
    """Disjoint union; every sparse operator is assembled directly in CSR form."""
    sizes = np.array([len(g.x) for g in graphs])
    n_edges = np.array([len(g.dst) for g in graphs])
    node_off = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    edge_off = np.concatenate([[0], np.cumsum(n_edges)[:-1]])
    n, m, b = int(sizes.sum()), int(n_edges.sum()), len(graphs)
    src = np.concatenate([g.src + o for g, o in zip(graphs, node_off)])
    dst = np.concatenate([g.dst + o for g, o in zip(graphs, node_off)])
    indeg = np.concatenate([g.indeg for g in graphs])
    if np.any(indeg == 0):
        raise IsolatedNode(f"node {int(np.flatnonzero(indeg == 0)[0])} has no incident edge")
    outdeg = np.concatenate([g.outdeg for g in graphs])
    by_src = np.concatenate([g.by_src + o for g, o in zip(graphs, edge_off)])
    in_ptr = np.concatenate([[0], np.cumsum(indeg)])
    out_ptr = np.concatenate([[0], np.cumsum(outdeg)])
    w_edge = np.repeat(1.0 / indeg, indeg)
    w_node = np.repeat(1.0 / sizes, sizes)
    ones = np.ones(m)
    ys = [g.y for g in graphs]
    return GraphBatch(
        x=np.concatenate([g.x for g in graphs]),
        e=np.concatenate([g.e for g in graphs]),
        src=src,
        dst=dst,
        scatter_src=_csr(ones, by_src, out_ptr, (n, m)),
        scatter_dst=_csr(ones, np.arange(m), in_ptr, (n, m)),
        aggregate=_csr(w_edge, np.arange(m), in_ptr, (n, m)),
        aggregate_t=_csr(w_edge, dst, np.arange(m + 1), (m, n)),
        pool=_csr(w_node, np.arange(n), np.concatenate([[0], np.cumsum(sizes)]), (b, n)),
        pool_t=_csr(w_node, np.repeat(np.arange(b), sizes), np.arange(n + 1), (n, b)),
        y=None if any(y is None for y in ys) else np.array(ys, dtype=float),
    )


class GnnModel:
    def __init__(self, layers: dict[str, DenseLayer], node_scaler: StandardScaler | None = None,
                 edge_scaler: StandardScaler | None = None, y_scaler: StandardScaler | None = None):
        self.layers = layers
        self.node_scaler = node_scaler or StandardScaler(np.zeros(NODE_FEATS), np.ones(NODE_FEATS))
        self.edge_scaler = edge_scaler or StandardScaler(np.zeros(EDGE_FEATS), np.ones(EDGE_FEATS))
        self.y_scaler = y_scaler or StandardScaler(np.zeros(1), np.ones(1))

    @classmethod
    def init(cls, seed: int = 0) -> "GnnModel":
        rng = np.random.default_rng(seed)
        return cls({name: DenseLayer.init(i, o, act, rng) for name, i, o, act in LAYER_SHAPES})

    # --- parameters -----------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        p = {}
        for name, layer in self.layers.items():
            p.update(layer.params(name))
        return p

    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def fit_scalers(self, samples: list[GraphSample]) -> None:
        self.node_scaler = StandardScaler().fit(np.concatenate([s.node_feats for s in samples]))
        self.edge_scaler = StandardScaler().fit(np.concatenate([s.directed()[2] for s in samples]))
        self.y_scaler = StandardScaler().fit(np.array([[s.target] for s in samples], dtype=float))

    # --- batching -------------------------------------------------------

    def prepare(self, sample: GraphSample, with_target: bool = True) -> PreparedGraph:
        if sample.node_feats.shape[1:] != (NODE_FEATS,) or sample.edge_feats.shape[1:] != (EDGE_FEATS,):
            raise DimensionMismatch("graph features have the wrong width")
        src, dst, e = sample.directed()
        y = None
        if with_target:
            y = float(self.y_scaler.transform(np.array([[sample.target]], dtype=float))[0, 0])
        return PreparedGraph(self.node_scaler.transform(sample.node_feats), self.edge_scaler.transform(e), src, dst, y)

    def make_batch(self, samples: list[GraphSample], with_target: bool = True) -> GraphBatch:
        return collate([self.prepare(s, with_target) for s in samples])

    # --- forward --------------------------------------------------------

    def embed(self, p: dict[str, ad.Var], batch: GraphBatch) -> tuple[ad.Var, ad.Var]:
        h = self.layers["node_embed"].apply(ad.Var(batch.x), p, "node_embed")
        e = self.layers["edge_embed"].apply(ad.Var(batch.e), p, "edge_embed")
        return h, e

    def graph_update(self, p: dict[str, ad.Var], h: ad.Var, e: ad.Var, batch: GraphBatch, stage: int) -> ad.Var:
        if stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        prefix = f"update{stage}"
        width = h.value.shape[1]
        layer = self.layers[f"{prefix}.message"]
        if layer.n_in != 2 * width + e.value.shape[1]:
            raise DimensionMismatch(f"{prefix}: message expects {layer.n_in} inputs")
        # dense([h_src | h_dst | e]) computed as per-node projections gathered onto edges
        W = p[f"{prefix}.message.W"]
        from_src = ad.linear(h, ad.columns(W, 0, width))
        from_dst = ad.linear(h, ad.columns(W, width, 2 * width))
        from_edge = ad.linear(e, ad.columns(W, 2 * width, layer.n_in), p[f"{prefix}.message.b"])
        msg = ad.selu(ad.add(ad.gather(from_src, batch.src, batch.scatter_src),
                             ad.gather(from_dst, batch.dst, batch.scatter_dst), from_edge))
        mean = ad.spmm(batch.aggregate, msg, batch.aggregate_t)
        return self.layers[f"{prefix}.node"].apply(ad.concat([h, mean]), p, f"{prefix}.node")

    def forward(self, p: dict[str, ad.Var], batch: GraphBatch) -> ad.Var:
        """Scaled prediction per graph, shape (B, 1)."""
        h, e = self.embed(p, batch)
        h = self.graph_update(p, h, e, batch, 1)
        h = self.graph_update(p, h, e, batch, 2)
        pooled = ad.spmm(batch.pool, h, batch.pool_t)
        return self.layers["head"].apply(pooled, p, "head")

    def loss(self, p: dict[str, ad.Var], batch: GraphBatch) -> ad.Var:
        return ad.mse(self.forward(p, batch), batch.y)

    def predict(self, samples: list[GraphSample] | GraphSample, batch_size: int = 256) -> np.ndarray:
        """Predictions in physical units (Pa)."""
        if isinstance(samples, GraphSample):
            samples = [samples]
        p = {k: ad.Var(v) for k, v in self.parameters().items()}
        out = []
        for start in range(0, len(samples), batch_size):
            batch = self.make_batch(samples[start:start + batch_size], with_target=False)
            out.append(self.forward(p, batch).value.ravel())
        z = np.concatenate(out) if out else np.zeros(0)
        return self.y_scaler.inverse_transform(z[:, None]).ravel()

    # --- audit / io -----------------------------------------------------

    def architecture(self) -> list[dict]:
        rows = []
        for name, n_in, n_out, act in LAYER_SHAPES:
            layer = self.layers[name]
            rows.append({"layer": name, "in": layer.n_in, "out": layer.n_out,
                         "activation": act, "params": layer.n_params()})
        return rows

    def to_dict(self) -> dict:
        return {
            "type": "gnn",
            "layers": {k: v.to_dict() for k, v in self.layers.items()},
            "node_scaler": self.node_scaler.to_dict(),
            "edge_scaler": self.edge_scaler.to_dict(),
            "y_scaler": self.y_scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GnnModel":
        return cls(
            {k: DenseLayer.from_dict(v) for k, v in d["layers"].items()},
            StandardScaler.from_dict(d["node_scaler"]),
            StandardScaler.from_dict(d["edge_scaler"]),
            StandardScaler.from_dict(d["y_scaler"]),
        )


class GraphData:
    """Training view over labeled graphs for ``neural.fit``; features are scaled once."""

    def __init__(self, model: GnnModel, samples: list[GraphSample]):
        self.graphs = [model.prepare(s) for s in samples]
        self._full: GraphBatch | None = None

    def __len__(self):
        return len(self.graphs)

    def batch(self, idx) -> GraphBatch:
        idx = np.asarray(idx)
        if len(idx) == len(self.graphs) and np.array_equal(idx, np.arange(len(idx))):
            # the full set is evaluated every epoch for validation
            if self._full is None:
                self._full = collate(self.graphs)
            return self._full
        return collate([self.graphs[i] for i in idx])
