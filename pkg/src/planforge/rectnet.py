"""Graph-attention room-rectangle regression.

A stack of seven single-head attention layers (widths 8 -> 128 -> 256 -> 512
-> 256 -> 128 -> 64 -> 4) updates node embeddings over the hybrid graph's
symmetrized edges; room-node outputs pass through a sigmoid and decode to
axis-aligned rectangles by rescaling and corner sorting.  Boundary-node
outputs are computed but never supervised or read.

Everything runs in float64: graphs are tiny, and neighbor aggregation in a
position-canonical order makes node-id permutations bit-exact no-ops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .plangraph import HybridGraph, build_graph_for_plan, node_features
from .synthdata import Sample, apply_augment, draw_augment_params

GNN_WIDTHS = (8, 128, 256, 512, 256, 128, 64, 4)
DROPOUT_P = 0.1


class RectNetError(RuntimeError):
    pass


class AttnLayer:
    """Single-head attention over in-neighborhoods.

    out_v = act( sum_u alpha_vu * W value_u + b ),
    alpha_vu = softmax_u( (q_v . k_u) / sqrt(d_attn) ).
    """

    def __init__(self, d_in, d_out, activation="relu", rng=None,
                 dtype=np.float64):
        rng = rng or nn.stream(0, "init/attn")
        self.d_in, self.d_out = d_in, d_out
        self.activation = activation
        bound = 1.0 / math.sqrt(d_in)

        def init(shape):
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        self.params = {
            "wq": init((d_in, d_out)), "bq": init((d_out,)),
            "wk": init((d_in, d_out)), "bk": init((d_out,)),
            "wv": init((d_in, d_out)), "bv": init((d_out,)),
            "w": init((d_out, d_out)) * math.sqrt(d_in / d_out), "b": init((d_out,)),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def named_params(self, prefix=""):
        for k, v in self.params.items():
            yield f"{prefix}{k}", v

    def named_grads(self, prefix=""):
        for k, v in self.grads.items():
            yield f"{prefix}{k}", v

    def state_arrays(self):
        return dict(self.params)

    def forward(self, h, neighbors, train=False):
        p = self.params
        q = h @ p["wq"] + p["bq"]
        k = h @ p["wk"] + p["bk"]
        v = h @ p["wv"] + p["bv"]
        scale = 1.0 / math.sqrt(self.d_out)
        n = h.shape[0]
        msg = np.zeros((n, self.d_out), dtype=h.dtype)
        alphas, idx_list = [], []
        for node in range(n):
            idx = neighbors[node] if neighbors[node] else [node]  # self-loop fallback
            logits = (k[idx] @ q[node]) * scale
            logits -= logits.max()
            e = np.exp(logits)
            a = e / e.sum()
            msg[node] = a @ v[idx]
            alphas.append(a)
            idx_list.append(idx)
        pre = msg @ p["w"] + p["b"]
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        self._cache = (h, q, k, v, msg, pre, alphas, idx_list)
        return out

    def backward(self, gout):
        h, q, k, v, msg, pre, alphas, idx_list = self._cache
        p, g = self.params, self.grads
        scale = 1.0 / math.sqrt(self.d_out)
        if self.activation == "relu":
            gout = gout * (pre > 0.0)
        g["w"] += msg.T @ gout
        g["b"] += gout.sum(axis=0)
        gmsg = gout @ p["w"].T

        n = h.shape[0]
        gq = np.zeros_like(q)
        gk = np.zeros_like(k)
        gv = np.zeros_like(v)
        for node in range(n):
            idx = idx_list[node]
            a = alphas[node]
            gm = gmsg[node]
            gv[idx] += np.outer(a, gm)
            ga = v[idx] @ gm
            gs = a * (ga - float(a @ ga))
            gq[node] += (gs @ k[idx]) * scale
            gk[idx] += np.outer(gs, q[node]) * scale

        g["wq"] += h.T @ gq
        g["bq"] += gq.sum(axis=0)
        g["wk"] += h.T @ gk
        g["bk"] += gk.sum(axis=0)
        g["wv"] += h.T @ gv
        g["bv"] += gv.sum(axis=0)
        return gq @ p["wq"].T + gk @ p["wk"].T + gv @ p["wv"].T

    def attention_rows(self, h, neighbors):
        """Attention weight vectors per node (diagnostic/verification)."""
        self.forward(h, neighbors, train=False)
        return self._cache[6]


class RectNet:
    """Seven attention layers with relu+dropout between them; the final layer
    is linear and the stack output passes through a sigmoid."""

    def __init__(self, widths=GNN_WIDTHS, dropout=DROPOUT_P, seed=0):
        self.widths = tuple(widths)
        rng = nn.stream(seed, "init/rectnet")
        self.layers = []
        for i in range(len(self.widths) - 1):
            last = i == len(self.widths) - 2
            self.layers.append(AttnLayer(self.widths[i], self.widths[i + 1],
                                         activation="none" if last else "relu",
                                         rng=rng))
        self.dropouts = [nn.Dropout(dropout, rng=nn.stream(seed, f"dropout/gnn{i}"))
                         for i in range(len(self.layers) - 1)]
        self.seed = seed

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self):
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(prefix=f"layer{i}.")

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            yield from layer.named_grads(prefix=f"layer{i}.")

    def forward_all(self, g: HybridGraph, train=False, features=None):
        """Sigmoid outputs for every node, [n_nodes, 4]."""
        h = node_features(g) if features is None else features
        neighbors = g.in_neighbors()
        self._sig = None
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, neighbors, train=train)
            if i < len(self.dropouts):
                h = self.dropouts[i].forward(h, train=train)
        out = 1.0 / (1.0 + np.exp(-h))
        self._sig = out
        return out

    def backward_all(self, gout):
        sig = self._sig
        gh = gout * sig * (1.0 - sig)
        for i in reversed(range(len(self.layers))):
            if i < len(self.dropouts):
                gh = self.dropouts[i].backward(gh)
            gh = self.layers[i].backward(gh)
        return gh

    def forward_rooms(self, g: HybridGraph, train=False):
        """[n_rooms, 4] in [0, 1]; boundary outputs discarded."""
        out = self.forward_all(g, train=train)
        return out[g.room_ids]

    def state_arrays(self):
        arrays = {}
        for name, arr in self.named_params():
            arrays[name] = arr
        return arrays

    def save(self, path):
        arrays = dict(self.state_arrays())
        arrays["__cfg.widths"] = np.array(self.widths, dtype=np.float32)
        nn.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> "RectNet":
        arrays = nn.load_arrays(path)
        widths = tuple(int(w) for w in arrays.pop("__cfg.widths"))
        model = cls(widths=widths)
        params = dict(model.named_params())
        for key, value in arrays.items():
            params[key][...] = value.reshape(params[key].shape)
        return model


def decode_rects(outputs) -> list:
    """[n, 4] sigmoid outputs -> rects: rescale by 255, sort each coordinate
    pair, inflate zero-extent pairs to a 1 px minimum."""
    rects = []
    arr = np.atleast_2d(np.asarray(outputs, dtype=float)) * 255.0
    for x1, y1, x2, y2 in arr:
        if x1 > x2:
            x1, x2 = x2, x1
        if y1 > y2:
            y1, y2 = y2, y1
        if x2 - x1 < 1.0:
            cx = (x1 + x2) / 2.0
            x1, x2 = cx - 0.5, cx + 0.5
        if y2 - y1 < 1.0:
            cy = (y1 + y2) / 2.0
            y1, y2 = cy - 0.5, cy + 0.5
        rects.append((float(x1), float(y1), float(x2), float(y2)))
    return rects


# -- training -----------------------------------------------------------------


@dataclass
class TrainBConfig:
    epochs: int = 200
    batch_graphs: int = 8
    lr: float = 1e-4
    min_lr: float = 0.0
    t0: int = 10
    tmult: int = 2
    weight_decay: float = 1e-4
    seed: int = 0
    jitter: bool = True
    spacing_m: float = 5.0
    k_bnd: int = 5
    k_room: int = 2
    log_every: int = 0


@dataclass
class GraphExample:
    graph: HybridGraph
    features: np.ndarray
    targets: np.ndarray  # [n_rooms, 4] normalized sorted corners


def graph_example_from_sample(s: Sample, cfg: TrainBConfig,
                              jitter_seed: int) -> GraphExample:
    """Training example: graph over (optionally jittered) centers, targets are
    the exact normalized room corners."""
    inp = s
    if cfg.jitter:
        rng = nn.stream(jitter_seed, "stageB/jitter")
        params = draw_augment_params(rng, "stageB", n_centers=len(s.centers))
        params = type(params)(center_jitter=params.center_jitter)  # jitter only
        inp = apply_augment(s, params)
    graph = build_graph_for_plan(inp.envelope, inp.door, inp.centers,
                                 spacing_m=cfg.spacing_m,
                                 scale_m_per_px=s.scale_m_per_px(),
                                 k_bnd=cfg.k_bnd, k_room=cfg.k_room)
    targets = np.array([[r[0], r[1], r[2], r[3]] for r, _ in inp.rooms],
                       dtype=float) / 255.0
    return GraphExample(graph=graph, features=node_features(graph),
                        targets=targets)


def build_graph_dataset(samples, cfg: TrainBConfig) -> list:
    return [graph_example_from_sample(s, cfg, jitter_seed=cfg.seed * 7919 + i)
            for i, s in enumerate(samples)]


def room_loss_and_grad(model: RectNet, ex: GraphExample, train=False):
    """MSE over room-node outputs only; returns (loss, n_rooms)."""
    out = model.forward_all(ex.graph, train=train, features=ex.features)
    room_ids = ex.graph.room_ids
    diff = out[room_ids] - ex.targets
    loss = float(np.mean(diff * diff))
    if train:
        gout = np.zeros_like(out)
        gout[room_ids] = (2.0 / diff.size) * diff
        model.backward_all(gout)
    return loss, len(room_ids)


def train_stage_b(model: RectNet, samples, cfg: TrainBConfig = TrainBConfig()):
    """AdamW over per-graph accumulated gradients; loss curve returned."""
    dataset = build_graph_dataset(samples, cfg)
    params = dict(model.named_params())
    grads = dict(model.named_grads())
    opt = nn.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    schedule = nn.WarmRestartSchedule(cfg.lr, cfg.min_lr, cfg.t0, cfg.tmult)
    shuffle = nn.stream(cfg.seed, "train/stageB/shuffle")

    curve = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(len(dataset))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_graphs):
            batch = [dataset[i] for i in order[start:start + cfg.batch_graphs]]
            model.zero_grad()
            losses = [room_loss_and_grad(model, ex, train=True)[0] for ex in batch]
            loss = float(np.mean(losses))
            if not np.isfinite(loss):
                raise RectNetError("loss diverged (NaN)")
            for garr in grads.values():
                garr /= len(batch)
            opt.step(grads, lr=schedule.lr_at(epoch + start / len(order)))
            epoch_loss += loss
            n_batches += 1
        curve.append(epoch_loss / max(1, n_batches))
    return curve


def mean_corner_error_px(model: RectNet, dataset) -> float:
    """Mean Euclidean distance between predicted and true rect corners, px."""
    errs = []
    for ex in dataset:
        out = model.forward_all(ex.graph, features=ex.features)[ex.graph.room_ids]
        pred = np.asarray(decode_rects(out))
        true = ex.targets * 255.0
        d1 = np.hypot(pred[:, 0] - true[:, 0], pred[:, 1] - true[:, 1])
        d2 = np.hypot(pred[:, 2] - true[:, 2], pred[:, 3] - true[:, 3])
        errs.extend(d1)
        errs.extend(d2)
    return float(np.mean(errs))
