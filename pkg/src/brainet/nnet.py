"""Dense-network hierarchy built from a structure tree, plus its numeric engine.

Every tree leaf becomes a gather layer that slices its variables out of the
input matrix. Every branch of an internal node becomes a group of dense
layers inside that node's container: layer i of branch t reads ancestor
sub-hierarchy i and the branch's descendant sub-hierarchy (a branch without
ancestors keeps a single layer over the descendant so every group of one
container produces the same width and branch activations stay combinable).
The head reads the root's output: under a selection it sees the chosen
group, in simultaneous mode the score-weighted combination of all groups.

All numerics are float64. Layers compute affine -> batchnorm -> ReLU; heads
are linear (log-softmax for classification, mean/log-variance for
regression). Training runs reverse-mode differentiation over the selected
subgraph and Adam with a fixed step; parameters of unselected branches stay
untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import derive_seed
from .structure import StructureNode

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
WEIGHTS_FORMAT = "brainet-weights"
WEIGHTS_VERSION = 1


class NetworkError(ValueError):
    """Violated hierarchy contract (widths, selections, losses)."""


class NonFiniteLossError(NetworkError):
    """Loss became NaN or infinite during a training step."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


@dataclass(frozen=True)
class SubNetworkSelection:
    """One branch index per container plus the selected sub-network's score."""

    choices: dict
    total_score: float


@dataclass(frozen=True)
class GatherSpec:
    columns: tuple
    score: float


@dataclass(frozen=True)
class LayerSpec:
    layer_id: str
    width: int
    container_id: str
    branch_index: int
    incoming: tuple  # refs: ("gather"|"layer"|"site", id)


@dataclass(frozen=True)
class ContainerSpec:
    site_id: str
    groups: tuple  # per branch t: tuple of layer ids
    children: tuple  # per branch t: tuple of child refs (ancestors..., descendant)
    scores: tuple  # per branch t: sum of leaf scores beneath the branch


@dataclass(frozen=True)
class HeadSpec:
    kind: str  # "softmax" | "gaussian"
    class_count: int | None
    incoming: tuple


class Hierarchy:
    """Layer containers, gather layers, connectivity, and the weight store."""

    def __init__(
        self,
        gathers,
        layers,
        containers,
        head,
        input_width,
        bn_momentum=BN_MOMENTUM,
        bn_eps=BN_EPS,
    ):
        self.gathers = gathers
        self.layers = layers
        self.containers = containers
        self.head = head
        self.input_width = input_width
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.params = {}
        self.bn_stats = {}

    def width_of(self, ref) -> int:
        kind, rid = ref
        if kind == "gather":
            return len(self.gathers[rid].columns)
        if kind == "layer":
            return self.layers[rid].width
        if kind == "site":
            group = self.containers[rid].groups[0]
            return sum(self.layers[lid].width for lid in group)
        raise NetworkError(f"unknown ref kind {kind!r}")

    def head_width(self) -> int:
        return (
            self.head.class_count if self.head.kind == "softmax" else 2
        )

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())


def _leaf_score_sum(node: StructureNode) -> float:
    return sum(leaf.score for leaf in node.leaves())


def build_network(
    root: StructureNode,
    head: str = "softmax",
    class_count: int | None = None,
    width: int = 32,
    width_mult: float = 1.0,
    width_policy=None,
    seed: int = 0,
    input_width: int | None = None,
    bn_momentum: float = BN_MOMENTUM,
    bn_eps: float = BN_EPS,
) -> Hierarchy:
    """Translate a structure tree into an initialized network hierarchy.

    ``width_policy(depth, fan_in)`` maps a container site to its group width
    (the branch's layers split it as evenly as possible); the default is the
    constant ``width * width_mult``. ``fan_in`` is the widest branch input at
    that site. Weight init is fan-in-scaled Gaussian from the run seed.
    """
    if head == "softmax":
        if not class_count or class_count < 2:
            raise NetworkError("softmax head needs a class count >= 2")
    elif head == "gaussian":
        class_count = None
    else:
        raise NetworkError(f"unknown head kind {head!r}")
    policy = width_policy or (
        lambda depth, fan_in: max(1, int(round(width * width_mult)))
    )

    gathers, layers, containers = {}, {}, {}

    def build(node: StructureNode, depth: int):
        if node.is_leaf:
            gathers[node.node_id] = GatherSpec(
                columns=tuple(sorted(node.variables)), score=float(node.score)
            )
            return ("gather", node.node_id), len(node.variables)

        built = []
        for branch in node.branches:
            anc = [build(a, depth + 1) for a in branch.ancestors]
            desc_ref, desc_w = build(branch.descendant, depth + 1)
            fan_in = sum(w for _, w in anc) + desc_w
            built.append((branch, anc, desc_ref, fan_in))

        # every branch group of one site must share the same total width so
        # their activations stay combinable and interchangeable at the site
        total = max(1, policy(depth, max(b[3] for b in built)))
        total = max(total, max(len(b[1]) for b in built))
        groups, children, scores = [], [], []
        for branch, anc, desc_ref, _ in built:
            k = len(anc)
            group_layers = []
            if k == 0:
                widths = [total]
                sources = [(desc_ref,)]
            else:
                base, rem = divmod(total, k)
                widths = [base + (1 if i < rem else 0) for i in range(k)]
                sources = [(anc[i][0], desc_ref) for i in range(k)]
            for i, (w, incoming) in enumerate(zip(widths, sources)):
                lid = f"{branch.container_id}/L{i}"
                layers[lid] = LayerSpec(
                    layer_id=lid,
                    width=w,
                    container_id=node.node_id,
                    branch_index=branch.index,
                    incoming=incoming,
                )
                group_layers.append(lid)
            groups.append(tuple(group_layers))
            children.append(tuple(r for r, _ in anc) + (desc_ref,))
            scores.append(
                sum(_leaf_score_sum(c) for c in branch.children())
            )
        containers[node.node_id] = ContainerSpec(
            site_id=node.node_id,
            groups=tuple(groups),
            children=tuple(children),
            scores=tuple(scores),
        )
        return ("site", node.node_id), total

    root_ref, _root_w = build(root, 0)

    if input_width is None:
        input_width = 1 + max(
            (c for g in gathers.values() for c in g.columns), default=0
        )
    hierarchy = Hierarchy(
        gathers=gathers,
        layers=layers,
        containers=containers,
        head=HeadSpec(kind=head, class_count=class_count, incoming=root_ref),
        input_width=input_width,
        bn_momentum=bn_momentum,
        bn_eps=bn_eps,
    )
    _init_params(hierarchy, seed)
    return hierarchy


def _init_params(h: Hierarchy, seed: int) -> None:
    rng = np.random.default_rng(derive_seed(seed, "weight-init"))
    for lid in sorted(h.layers):
        spec = h.layers[lid]
        fan_in = sum(h.width_of(ref) for ref in spec.incoming)
        std = np.sqrt(2.0 / max(fan_in, 1))
        for ref in spec.incoming:
            key = f"w|{lid}|{ref[0]}:{ref[1]}"
            h.params[key] = rng.normal(0.0, std, size=(h.width_of(ref), spec.width))
        h.params[f"b|{lid}"] = np.zeros(spec.width)
        h.params[f"bng|{lid}"] = np.ones(spec.width)
        h.params[f"bnb|{lid}"] = np.zeros(spec.width)
        h.bn_stats[lid] = {
            "mean": np.zeros(spec.width),
            "var": np.ones(spec.width),
        }
    fan_in = h.width_of(h.head.incoming)
    std = np.sqrt(1.0 / max(fan_in, 1))
    kind, rid = h.head.incoming
    h.params[f"w|head|{kind}:{rid}"] = rng.normal(
        0.0, std, size=(fan_in, h.head_width())
    )
    h.params["b|head"] = np.zeros(h.head_width())


# -- forward / backward ------------------------------------------------------


def _site_weights(h: Hierarchy, gamma: float):
    """Per-site Boltzmann weights from recursively aggregated branch scores.

    A branch's aggregate is the sum of its children's aggregates; a site's
    aggregate is the weight-averaged branch aggregate, so scores propagate
    leaves-to-head exactly like the recursive activation average.
    """
    agg_memo, weights = {}, {}

    def aggregate(ref):
        if ref in agg_memo:
            return agg_memo[ref]
        kind, rid = ref
        if kind == "gather":
            value = h.gathers[rid].score
        else:
            spec = h.containers[rid]
            branch_aggs = np.array(
                [sum(aggregate(c) for c in children) for children in spec.children]
            )
            w = _softmax(branch_aggs / gamma)
            weights[rid] = w
            value = float(w @ branch_aggs)
        agg_memo[ref] = value
        return value

    aggregate(h.head.incoming)
    return weights


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def _check_input(h: Hierarchy, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] < h.input_width:
        raise NetworkError(
            f"input batch of width {batch.shape[-1]} does not cover the "
            f"{h.input_width} gathered columns"
        )
    return batch


def _run_layer(h, lid, inputs, mode, update_running, cache=None):
    """affine -> batchnorm -> relu; optionally records intermediates."""
    spec = h.layers[lid]
    z = np.broadcast_to(
        h.params[f"b|{lid}"], (inputs[0].shape[0], spec.width)
    ).copy()
    for ref, x in zip(spec.incoming, inputs):
        z += x @ h.params[f"w|{lid}|{ref[0]}:{ref[1]}"]
    if mode == "train":
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        if update_running:
            stats = h.bn_stats[lid]
            m = h.bn_momentum
            stats["mean"] = m * stats["mean"] + (1 - m) * mu
            stats["var"] = m * stats["var"] + (1 - m) * var
    else:
        mu = h.bn_stats[lid]["mean"]
        var = h.bn_stats[lid]["var"]
    inv = 1.0 / np.sqrt(var + h.bn_eps)
    xhat = (z - mu) * inv
    pre = h.params[f"bng|{lid}"] * xhat + h.params[f"bnb|{lid}"]
    act = np.maximum(pre, 0.0)
    if cache is not None:
        cache[lid] = {"z": z, "mu": mu, "inv": inv, "xhat": xhat, "act": act}
    return act


def _evaluate(h, X, mode, update_running, site_value, cache=None, order=None):
    """Shared evaluation driver; ``site_value`` resolves container outputs.

    ``cache`` records per-layer batchnorm intermediates and ``order`` the
    topological finish order, both needed only for the backward pass.
    """
    values = {}

    def eval_ref(ref):
        if ref in values:
            return values[ref]
        kind, rid = ref
        if kind == "gather":
            value = X[:, list(h.gathers[rid].columns)]
        elif kind == "layer":
            spec = h.layers[rid]
            inputs = [eval_ref(r) for r in spec.incoming]
            value = _run_layer(h, rid, inputs, mode, update_running, cache)
        elif kind == "site":
            value = site_value(rid, eval_ref)
        else:
            raise NetworkError(f"unknown ref kind {kind!r}")
        values[ref] = value
        if order is not None:
            order.append(ref)
        return value

    a = eval_ref(h.head.incoming)
    kind, rid = h.head.incoming
    out = a @ h.params[f"w|head|{kind}:{rid}"] + h.params["b|head"]
    if h.head.kind == "softmax":
        out = out - _logsumexp_rows(out)
    return out, values


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))


def _selected_site_value(h: Hierarchy, selection: SubNetworkSelection):
    def site_value(site_id, eval_ref):
        if site_id not in selection.choices:
            raise NetworkError(f"selection has no branch choice for {site_id!r}")
        group = h.containers[site_id].groups[selection.choices[site_id]]
        return np.concatenate([eval_ref(("layer", lid)) for lid in group], axis=1)

    return site_value


def forward(
    h: Hierarchy,
    selection: SubNetworkSelection,
    input_batch,
    mode: str = "eval",
    update_running: bool | None = None,
) -> np.ndarray:
    """Run the selected sub-network; class log-probabilities or (mean, logvar)."""
    if mode not in ("train", "eval"):
        raise NetworkError(f"unknown mode {mode!r}")
    X = _check_input(h, input_batch)
    if update_running is None:
        update_running = mode == "train"
    out, _ = _evaluate(
        h, X, mode, update_running, _selected_site_value(h, selection)
    )
    return out


def forward_simultaneous(
    h: Hierarchy, input_batch, gamma: float = 1.0
) -> np.ndarray:
    """Single pass combining every branch group with its Boltzmann weight."""
    if gamma <= 0:
        raise NetworkError("gamma must be positive; use argmax selection for the limit")
    X = _check_input(h, input_batch)
    weights = _site_weights(h, gamma)

    def site_value(site_id, eval_ref):
        spec = h.containers[site_id]
        w = weights[site_id]
        value = None
        for t, group in enumerate(spec.groups):
            group_val = np.concatenate(
                [eval_ref(("layer", lid)) for lid in group], axis=1
            )
            value = w[t] * group_val if value is None else value + w[t] * group_val
        return value

    out, _ = _evaluate(h, X, "eval", False, site_value)
    return out


def argmax_selection(h: Hierarchy) -> SubNetworkSelection:
    """Per-container argmax over the same aggregates simultaneous mode uses."""
    agg_memo = {}
    choices = {}

    def aggregate(ref):
        if ref in agg_memo:
            return agg_memo[ref]
        kind, rid = ref
        if kind == "gather":
            value = h.gathers[rid].score
        else:
            spec = h.containers[rid]
            branch_aggs = [
                sum(aggregate(c) for c in children) for children in spec.children
            ]
            t = int(np.argmax(branch_aggs))
            choices[rid] = t
            value = branch_aggs[t]
        agg_memo[ref] = value
        return value

    total = aggregate(h.head.incoming)
    reachable = {}

    def collect(ref):
        kind, rid = ref
        if kind != "site":
            return
        t = choices[rid]
        reachable[rid] = t
        for child in h.containers[rid].children[t]:
            collect(child)

    collect(h.head.incoming)
    return SubNetworkSelection(choices=reachable, total_score=float(total))


def uniform_selection(root: StructureNode, rng) -> SubNetworkSelection:
    """Uniform branch choice per container along the chosen paths (training mode)."""
    choices = {}
    total = 0.0

    def visit(node):
        nonlocal total
        if node.is_leaf:
            total += node.score
            return
        t = int(rng.integers(0, len(node.branches)))
        choices[node.node_id] = t
        for child in node.branches[t].children():
            visit(child)

    visit(root)
    return SubNetworkSelection(choices=choices, total_score=total)


# -- training ---------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam moments; parameters off the selected subgraph keep theirs."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict) -> None:
        for key, g in grads.items():
            t = self.steps.get(key, 0) + 1
            self.steps[key] = t
            m = self.m.get(key)
            if m is None:
                m = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            self.m[key], self.v[key] = m, v
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            params[key] = params[key] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def loss_and_gradients(
    h: Hierarchy,
    selection: SubNetworkSelection,
    input_batch,
    targets,
    loss: str = "cross-entropy",
    update_running: bool = False,
):
    """Loss plus reverse-mode gradients for every parameter on the selection."""
    X = _check_input(h, input_batch)
    targets = np.asarray(targets)
    cache = {}
    order = []

    site_value = _selected_site_value(h, selection)
    out, values = _evaluate(
        h, X, "train", update_running, site_value, cache=cache, order=order
    )

    n = X.shape[0]
    if loss == "cross-entropy":
        if h.head.kind != "softmax":
            raise NetworkError("cross-entropy needs a softmax head")
        y = targets.astype(np.int64)
        loss_value = float(-out[np.arange(n), y].mean())
        probs = np.exp(out)
        dout = probs.copy()
        dout[np.arange(n), y] -= 1.0
        dout /= n
    elif loss == "gaussian-nll":
        if h.head.kind != "gaussian":
            raise NetworkError("gaussian-nll needs a gaussian head")
        y = targets.astype(np.float64)
        mu, logvar = out[:, 0], out[:, 1]
        inv_var = np.exp(-logvar)
        sq = (y - mu) ** 2
        loss_value = float(
            0.5 * (np.log(2 * np.pi) + logvar + sq * inv_var).mean()
        )
        dout = np.empty_like(out)
        dout[:, 0] = (mu - y) * inv_var / n
        dout[:, 1] = 0.5 * (1.0 - sq * inv_var) / n
    else:
        raise NetworkError(f"unknown loss {loss!r}")
    if not np.isfinite(loss_value):
        raise NonFiniteLossError(f"loss is not finite ({loss_value})")

    grads = {}
    gval = {ref: None for ref in order}

    def add_grad(ref, g):
        gval[ref] = g if gval[ref] is None else gval[ref] + g

    kind, rid = h.head.incoming
    head_key = f"w|head|{kind}:{rid}"
    a = values[h.head.incoming]
    grads[head_key] = a.T @ dout
    grads["b|head"] = dout.sum(axis=0)
    add_grad(h.head.incoming, dout @ h.params[head_key].T)

    for ref in reversed(order):
        g = gval[ref]
        if g is None:
            continue
        kind, rid = ref
        if kind == "gather":
            continue
        if kind == "site":
            group = h.containers[rid].groups[selection.choices[rid]]
            offset = 0
            for lid in group:
                w = h.layers[lid].width
                add_grad(("layer", lid), g[:, offset : offset + w])
                offset += w
            continue
        # layer: relu -> batchnorm -> affine
        spec = h.layers[rid]
        c = cache[rid]
        g = g * (c["act"] > 0)
        gamma = h.params[f"bng|{rid}"]
        grads[f"bng|{rid}"] = (g * c["xhat"]).sum(axis=0)
        grads[f"bnb|{rid}"] = g.sum(axis=0)
        dxhat = g * gamma
        nb = g.shape[0]
        zc = c["z"] - c["mu"]
        dvar = (dxhat * zc).sum(axis=0) * (-0.5) * c["inv"] ** 3
        dmu = -(dxhat.sum(axis=0)) * c["inv"]
        dz = dxhat * c["inv"] + (2.0 / nb) * dvar * zc + dmu / nb
        grads[f"b|{rid}"] = dz.sum(axis=0)
        for src in spec.incoming:
            wkey = f"w|{rid}|{src[0]}:{src[1]}"
            grads[wkey] = values[src].T @ dz
            add_grad(src, dz @ h.params[wkey].T)
    return loss_value, grads, out


def train_step(
    h: Hierarchy,
    selection: SubNetworkSelection,
    input_batch,
    targets,
    loss: str = "cross-entropy",
    optimizer: AdamState | None = None,
    lr: float = 1e-3,
) -> float:
    """One uniform-selection training step: backprop plus an Adam update."""
    if optimizer is None:
        optimizer = AdamState(lr=lr)
    loss_value, grads, _ = loss_and_gradients(
        h, selection, input_batch, targets, loss=loss, update_running=True
    )
    optimizer.update(h.params, grads)
    return loss_value


def train_network(
    h: Hierarchy,
    root: StructureNode,
    features: np.ndarray,
    targets: np.ndarray,
    epochs: int = 10,
    lr: float = 1e-3,
    batch_size: int = 64,
    loss: str = "cross-entropy",
    seed: int = 0,
) -> list:
    """Mini-batch training loop; one uniformly sampled sub-network per step."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets)
    if y.shape[0] != X.shape[0]:
        raise NetworkError("features and targets disagree on the row count")
    n = X.shape[0]
    opt = AdamState(lr=lr)
    rng_sel = np.random.default_rng(derive_seed(seed, "train-select"))
    rng_shuffle = np.random.default_rng(derive_seed(seed, "train-shuffle"))
    history = []
    for epoch in range(epochs):
        perm = rng_shuffle.permutation(n)
        epoch_loss, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            selection = uniform_selection(root, rng_sel)
            try:
                value = train_step(
                    h, selection, X[idx], y[idx], loss=loss, optimizer=opt
                )
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(
                    f"epoch {epoch}, batch {batches}: {exc}", batch_index=batches
                ) from exc
            epoch_loss += value
            batches += 1
        history.append(epoch_loss / max(batches, 1))
    return history


# -- checkpointing -----------------------------------------------------------


def save_weights(h: Hierarchy, path, meta: dict | None = None) -> None:
    """Bit-exact float64 checkpoint of parameters and batchnorm statistics."""
    arrays = {f"p|{k}": v for k, v in h.params.items()}
    for lid, stats in h.bn_stats.items():
        arrays[f"s|{lid}|mean"] = stats["mean"]
        arrays[f"s|{lid}|var"] = stats["var"]
    doc = {"format": WEIGHTS_FORMAT, "version": WEIGHTS_VERSION}
    if meta:
        doc["meta"] = meta
    arrays["__doc__"] = np.frombuffer(
        json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_weights(h: Hierarchy, path) -> dict:
    """Restore a checkpoint into a structurally matching hierarchy; returns meta."""
    with np.load(path) as archive:
        doc = json.loads(bytes(archive["__doc__"]).decode())
        if doc.get("format") != WEIGHTS_FORMAT:
            raise NetworkError(f"{path} is not a weights checkpoint")
        for key in h.params:
            stored = f"p|{key}"
            if stored not in archive:
                raise NetworkError(f"checkpoint misses parameter {key!r}")
            if archive[stored].shape != h.params[key].shape:
                raise NetworkError(f"checkpoint shape mismatch for {key!r}")
            h.params[key] = archive[stored].astype(np.float64)
        for lid in h.bn_stats:
            for stat in ("mean", "var"):
                stored = f"s|{lid}|{stat}"
                if stored not in archive:
                    raise NetworkError(f"checkpoint misses statistics for {lid!r}")
                h.bn_stats[lid][stat] = archive[stored].astype(np.float64)
    return doc.get("meta", {})
