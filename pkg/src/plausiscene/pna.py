"""Graph discriminator: 4 PNA convolution layers, add-pool, MLP head.

Each PNA layer computes one message per directed edge, combines incoming
messages with four aggregators (mean, max, min, std), rescales the result
with three degree-dependent scalers (identity, amplification, attenuation),
and feeds the concatenation through an update layer with ReLU. The pooled
node embeddings pass through a 3-layer head ending in a sigmoid, so the
output is a plausibility score in (0, 1): real scenes are labeled 1,
predicted/corrupted scenes 0.

Backward passes return exact gradients for the weights and for the node and
edge features; the latter drive scene refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, MissingCache, ShapeMismatch
from .neural import (
    LinearLayer,
    linear_backward,
    linear_forward,
    load_weight_file,
    relu,
    relu_backward,
    save_weight_file,
    sigmoid,
    sigmoid_backward,
)

AGGREGATORS = ("mean", "max", "min", "std")
SCALERS = ("identity", "amplification", "attenuation")
STD_EPS = 1e-12


@dataclass
class PnaConfig:
    in_dim: int = 24
    edge_dim: int = 172
    hidden: int = 64
    layers: int = 4
    delta: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.hidden < 2:
            raise ValueError("hidden must be >= 2")
        if self.layers < 1:
            raise ValueError("need at least one conv layer")


@dataclass
class PnaLayer:
    message: LinearLayer
    update: LinearLayer


def aggregate(messages: np.ndarray, h: int | None = None) -> np.ndarray:
    """[mean | max | min | std] over a (k, h) message stack, shape (4h,).

    std is the population standard deviation per component with the radicand
    clamped at zero. An empty stack (isolated node) aggregates to zeros.
    """
    if messages is None or len(messages) == 0:
        if h is None:
            raise ValueError("need h to aggregate an empty message set")
        return np.zeros(4 * h)
    m = np.asarray(messages, dtype=float)
    mean = m.mean(axis=0)
    var = np.maximum(np.mean(m * m, axis=0) - mean * mean, 0.0)
    return np.concatenate([mean, m.max(axis=0), m.min(axis=0), np.sqrt(var)])


def scale_factors(degree: int, delta: float) -> tuple[float, float]:
    """(amplification, attenuation) factors for a node of the given in-degree."""
    log_d = np.log(degree + 1.0)
    amp = log_d / delta
    att = delta / log_d if degree > 0 else 0.0
    return float(amp), float(att)


def scale(agg: np.ndarray, degree: int, delta: float) -> np.ndarray:
    """[agg | agg * amplification | agg * attenuation], shape (12h,)."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    amp, att = scale_factors(degree, delta)
    return np.concatenate([agg, agg * amp, agg * att])


def compute_delta(graphs) -> float:
    """Mean of log(in-degree + 1) over every node of the training graphs."""
    if not graphs:
        raise EmptyDataset("delta needs at least one training graph")
    values = []
    for g in graphs:
        degrees = np.bincount(g.edge_index[:, 1], minlength=g.num_nodes) if g.num_edges else np.zeros(g.num_nodes, dtype=int)
        values.append(np.log(degrees + 1.0))
    return float(np.concatenate(values).mean())


def _rows_by_dst(edge_index: np.ndarray, num_nodes: int) -> list[np.ndarray]:
    dst = edge_index[:, 1] if len(edge_index) else np.zeros(0, dtype=int)
    return [np.flatnonzero(dst == i) for i in range(num_nodes)]


def _layer_forward(graph, layer: PnaLayer, h_in: np.ndarray, delta: float, rows=None):
    """One PNA layer with cache; returns (h_out, cache)."""
    p, d_in = h_in.shape
    hid = layer.message.out_dim
    if rows is None:
        rows = _rows_by_dst(graph.edge_index, p)

    if graph.num_edges:
        src = graph.edge_index[:, 0]
        dst = graph.edge_index[:, 1]
        x_msg = np.concatenate([h_in[dst], h_in[src], graph.edge_features], axis=1)
        msg = linear_forward(layer.message, x_msg)
    else:
        x_msg = np.zeros((0, 2 * d_in + graph.edge_features.shape[1]))
        msg = np.zeros((0, hid))

    scaled = np.empty((p, 12 * hid))
    stats = []
    for i in range(p):
        mi = msg[rows[i]]
        k = len(mi)
        if k:
            mean = mi.mean(axis=0)
            var = np.maximum(np.mean(mi * mi, axis=0) - mean * mean, 0.0)
            std = np.sqrt(var)
            agg = np.concatenate([mean, mi.max(axis=0), mi.min(axis=0), std])
            amax = mi.argmax(axis=0)
            amin = mi.argmin(axis=0)
        else:
            mean = std = None
            agg = np.zeros(4 * hid)
            amax = amin = None
        amp, att = scale_factors(k, delta)
        scaled[i] = np.concatenate([agg, agg * amp, agg * att])
        stats.append((k, mean, std, amax, amin, amp, att))

    x_upd = np.concatenate([h_in, scaled], axis=1)
    pre = linear_forward(layer.update, x_upd)
    h_out = relu(pre)
    cache = {
        "h_in": h_in,
        "x_msg": x_msg,
        "msg": msg,
        "rows": rows,
        "stats": stats,
        "x_upd": x_upd,
        "pre": pre,
        "hid": hid,
        "d_in": d_in,
    }
    return h_out, cache


def pna_layer_forward(graph, layer: PnaLayer, node_embeddings_in: np.ndarray, delta: float) -> np.ndarray:
    """Public single-layer forward (no cache)."""
    out, _ = _layer_forward(graph, layer, np.asarray(node_embeddings_in, dtype=float), delta)
    return out


def _layer_backward(graph, layer: PnaLayer, cache: dict, grad_out: np.ndarray):
    """Backward through one PNA layer.

    Returns (grad_h_in, grad_edge_features, grad_message_layer, grad_update_layer).
    """
    p = grad_out.shape[0]
    hid = cache["hid"]
    d_in = cache["d_in"]

    g_pre = relu_backward(cache["pre"], grad_out)
    g_x_upd, g_uw, g_ub = linear_backward(layer.update, cache["x_upd"], g_pre)
    g_h = g_x_upd[:, :d_in].copy()
    g_scaled = g_x_upd[:, d_in:]

    msg = cache["msg"]
    g_msg = np.zeros_like(msg)
    cols = np.arange(hid)
    for i in range(p):
        k, mean, std, amax, amin, amp, att = cache["stats"][i]
        if k == 0:
            continue
        gs = g_scaled[i]
        g_agg = gs[: 4 * hid] + amp * gs[4 * hid : 8 * hid] + att * gs[8 * hid :]
        g_mean = g_agg[:hid]
        g_max = g_agg[hid : 2 * hid]
        g_min = g_agg[2 * hid : 3 * hid]
        g_std = g_agg[3 * hid :]
        rows_i = cache["rows"][i]
        block = np.zeros((k, hid))
        block += g_mean / k
        block[amax, cols] += g_max
        block[amin, cols] += g_min
        safe = std > STD_EPS
        if np.any(safe):
            mi = msg[rows_i]
            coef = np.where(safe, g_std / (k * np.where(safe, std, 1.0)), 0.0)
            block += (mi - mean) * coef
        g_msg[rows_i] += block

    g_edge = np.zeros_like(graph.edge_features)
    if graph.num_edges:
        g_x_msg, g_mw, g_mb = linear_backward(layer.message, cache["x_msg"], g_msg)
        dst = graph.edge_index[:, 1]
        src = graph.edge_index[:, 0]
        np.add.at(g_h, dst, g_x_msg[:, :d_in])
        np.add.at(g_h, src, g_x_msg[:, d_in : 2 * d_in])
        g_edge = g_x_msg[:, 2 * d_in :]
    else:
        g_mw = np.zeros_like(layer.message.weights)
        g_mb = np.zeros_like(layer.message.bias)

    return g_h, g_edge, (g_mw, g_mb), (g_uw, g_ub)


class Discriminator:
    """PNA scene-graph discriminator with explicit forward/backward passes.

    Forward with frozen weights is pure and thread-safe; backward consumes a
    per-call cache returned by ``forward_with_cache``. Training mutates the
    parameter arrays in place through ``parameters()``.
    """

    def __init__(self, config: PnaConfig, convs: list[PnaLayer], head: list[LinearLayer], trained: bool = False):
        self.config = config
        self.convs = convs
        self.head = head
        self.trained = trained

    @classmethod
    def init(cls, config: PnaConfig, seed: int = 0) -> "Discriminator":
        rng = np.random.default_rng(seed)
        convs = []
        d_in = config.in_dim
        for _ in range(config.layers):
            message = LinearLayer.init(2 * d_in + config.edge_dim, config.hidden, rng)
            update = LinearLayer.init(d_in + 12 * config.hidden, config.hidden, rng)
            convs.append(PnaLayer(message, update))
            d_in = config.hidden
        half = config.hidden // 2
        head = [
            LinearLayer.init(config.hidden, config.hidden, rng),
            LinearLayer.init(config.hidden, half, rng),
            LinearLayer.init(half, 1, rng),
        ]
        return cls(config, convs, head)

    def parameters(self) -> dict:
        """Live parameter views in declaration order (the file order)."""
        params = {}
        for l, conv in enumerate(self.convs):
            params[f"conv{l}.message.weights"] = conv.message.weights
            params[f"conv{l}.message.bias"] = conv.message.bias
            params[f"conv{l}.update.weights"] = conv.update.weights
            params[f"conv{l}.update.bias"] = conv.update.bias
        for i, layer in enumerate(self.head):
            params[f"head{i}.weights"] = layer.weights
            params[f"head{i}.bias"] = layer.bias
        return params

    def _check_graph(self, graph) -> None:
        if graph.node_features.ndim != 2 or graph.node_features.shape[1] != self.config.in_dim:
            raise ShapeMismatch(
                f"node features {graph.node_features.shape} != in_dim {self.config.in_dim}"
            )
        if graph.num_edges and graph.edge_features.shape[1] != self.config.edge_dim:
            raise ShapeMismatch(
                f"edge features {graph.edge_features.shape} != edge_dim {self.config.edge_dim}"
            )

    def forward_with_cache(self, graph) -> tuple[float, dict]:
        self._check_graph(graph)
        rows = _rows_by_dst(graph.edge_index, graph.num_nodes)
        h = np.asarray(graph.node_features, dtype=float)
        layer_caches = []
        for conv in self.convs:
            h, cache = _layer_forward(graph, conv, h, self.config.delta, rows=rows)
            layer_caches.append(cache)

        pooled = h.sum(axis=0, keepdims=True)  # global add-pool
        head_inputs = []
        z = pooled
        for i, layer in enumerate(self.head):
            head_inputs.append(z)
            z = linear_forward(layer, z)
            if i < len(self.head) - 1:
                z = relu(z)
        p = float(sigmoid(z)[0, 0])
        cache = {
            "graph": graph,
            "layers": layer_caches,
            "num_nodes": h.shape[0],
            "head_inputs": head_inputs,
            "p": p,
        }
        return p, cache

    def forward(self, graph) -> float:
        """Plausibility score in (0, 1)."""
        p, _ = self.forward_with_cache(graph)
        return p

    def backward(self, cache: dict, upstream: float = 1.0):
        """Gradients of upstream * output w.r.t. weights, node and edge features.

        Returns (weight_grads, node_feature_grads, edge_feature_grads).
        """
        if not isinstance(cache, dict) or "layers" not in cache:
            raise MissingCache("backward needs the cache from forward_with_cache")
        graph = cache["graph"]
        p = cache["p"]
        grads: dict = {}

        g = np.array([[sigmoid_backward(p, upstream)]])
        for i in range(len(self.head) - 1, -1, -1):
            x = cache["head_inputs"][i]
            g, gw, gb = linear_backward(self.head[i], x, g)
            grads[f"head{i}.weights"] = gw
            grads[f"head{i}.bias"] = gb
            if i > 0:
                # x is the post-relu output of layer i-1; its sign pattern
                # matches the pre-activation, which is all relu needs.
                g = g * (x > 0.0)

        g_nodes = np.repeat(g, cache["num_nodes"], axis=0)  # add-pool backward

        g_edges_total = np.zeros_like(graph.edge_features)
        for l in range(len(self.convs) - 1, -1, -1):
            g_nodes, g_edge, (g_mw, g_mb), (g_uw, g_ub) = _layer_backward(
                graph, self.convs[l], cache["layers"][l], g_nodes
            )
            g_edges_total += g_edge
            grads[f"conv{l}.message.weights"] = g_mw
            grads[f"conv{l}.message.bias"] = g_mb
            grads[f"conv{l}.update.weights"] = g_uw
            grads[f"conv{l}.update.bias"] = g_ub

        return grads, g_nodes, g_edges_total

    def save(self, path) -> None:
        cfg = self.config
        dims = (cfg.in_dim, cfg.edge_dim, cfg.hidden, cfg.layers)
        save_weight_file(path, dims, cfg.delta, list(self.parameters().values()))

    @classmethod
    def load(cls, path) -> "Discriminator":
        dims, delta, flat = load_weight_file(path)
        config = PnaConfig(in_dim=dims[0], edge_dim=dims[1], hidden=dims[2], layers=dims[3], delta=delta)
        disc = cls.init(config, seed=0)
        offset = 0
        for key, param in disc.parameters().items():
            block = flat[offset : offset + param.size]
            if block.size != param.size:
                raise ShapeMismatch(f"weights file too short at {key}")
            param[...] = block.reshape(param.shape)
            offset += param.size
        if offset != flat.size:
            raise ShapeMismatch(f"weights file has {flat.size - offset} extra values")
        disc.trained = True
        return disc
