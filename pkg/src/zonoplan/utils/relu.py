"""
Exact ReLU computation graph for the signed distance between zonotopes.

The graph evaluates, for every boundary segment of every buffered obstacle:
    t_hat = <c - a, b - a> / |b - a|^2       (affine in c)
    t*    = min(max(t_hat, 0), 1)             (two ReLU layers)
    d     = |c - (a + (b - a) t*)|            (Norm layer)
then the per-obstacle minimum through trees of min gadgets, the per-obstacle sign, and the
minimum over obstacles. All weights are fixed by construction; the only input is c.

Width counts the units of the widest nonlinear layer; depth counts nonlinear layers
(ReLU and Norm) on the input-output path.
"""

from __future__ import annotations
import json
import math

import numpy as np

from zonoplan.utils.zonotope import Zonotope, enumerate_vertices, CONTAINS_TOL
from zonoplan.utils.distance import buffered_obstacle

########################### VARIABLES & ERRORS ################################
# -----------------------------------------------------------------------------
# Pair gadgets: out = ReLU(W_IN @ [x, y]) @ W_OUT
MIN_IN = np.array([[1., 1.], [1., -1.], [-1., 1.], [-1., -1.]])
MIN_OUT = np.array([0.5, -0.5, -0.5, -0.5])
MAX_IN = np.array([[1., 1.], [-1., -1.], [-1., 1.], [1., -1.]])
MAX_OUT = np.array([0.5, -0.5, 0.5, 0.5])
# ReLU slopes at 0 making the first operand the active branch on ties
MIN_KINKS = np.array([1., 0., 1., 0.])
MAX_KINKS = np.array([1., 0., 0., 1.])
# Exact identity through ReLUs: x = ReLU(x) - ReLU(-x)
PASS_IN = np.array([[1.], [-1.]])
PASS_OUT = np.array([1., -1.])
PASS_KINKS = np.array([1., 0.])
# Norm gradient guard
NORM_TOL = 1e-12

################################## LAYERS ######################################
# -----------------------------------------------------------------------------
class AffineLayer():
    """
    y = W x + b, with a shared weight (out, in) or one weight per batch element (B, out, in).
    Sums are accumulated input by input in a fixed order, so a batch element gives the same bits
    whatever the batch size.
    """
    kind = "affine"

    def __init__(self, weight, bias) -> None:
        self.weight = np.asarray(weight, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        if self.weight.ndim not in (2, 3):
            raise ValueError("Affine weights must be (out, in) or (batch, out, in)")
        if self.bias.shape[-1] != self.weight.shape[-2]:
            raise ValueError(
                f"Affine bias ({self.bias.shape[-1]}) does not match the weight rows ({self.weight.shape[-2]})"
            )
        # Columns with a nonzero entry, in order
        self._columns = [i for i in range(self.n_in) if np.any(self.weight[..., i] != 0)]

    @property
    def n_in(self) -> int:
        return self.weight.shape[-1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[-2]

    @property
    def batched(self) -> bool:
        return self.weight.ndim == 3

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.bias, (x.shape[0], self.n_out)).copy()
        for i in self._columns:
            out += self.weight[..., i] * x[:, i, None]
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad_in = np.zeros((grad.shape[0], self.n_in))
        for o in range(self.n_out):
            grad_in += self.weight[..., o, :] * grad[:, o, None]
        return grad_in
# ------------------------------------------------


class ReluLayer():
    """Elementwise ReLU; `kinks` are the slopes used at 0 (first-branch subgradient)."""
    kind = "relu"

    def __init__(self, kinks) -> None:
        self.kinks = np.asarray(kinks, dtype=float)
        self._pre = None

    @property
    def width(self) -> int:
        return self.kinks.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._pre = x
        return np.maximum(x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        slope = np.where(self._pre > 0, 1.0, np.where(self._pre == 0, self.kinks, 0.0))
        return grad * slope
# ------------------------------------------------


class NormLayer():
    """Euclidean norms of consecutive pairs: (B, 2n) -> (B, n)"""
    kind = "norm"

    def __init__(self, width: int) -> None:
        self.width = width
        self._pre = self._out = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._pre = x.reshape(x.shape[0], self.width, 2)
        self._out = np.hypot(self._pre[..., 0], self._pre[..., 1])
        return self._out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        safe = np.where(self._out < NORM_TOL, 1.0, self._out)
        unit = np.where((self._out < NORM_TOL)[..., None], 0.0, self._pre / safe[..., None])
        return (unit * grad[..., None]).reshape(grad.shape[0], 2 * self.width)
# ------------------------------------------------

############################## GENERIC GRAPH ###################################
# -----------------------------------------------------------------------------
class ReluGraph():
    """
    Layered computation graph. Forward evaluates a batch of inputs (B, n_in);
    backward accumulates adjoints from the scalar output back to the inputs.
    A graph instance keeps forward activations and must not be shared between concurrent evaluations.
    """

    def __init__(self, layers: list) -> None:
        self.layers = list(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if self._n_out(prev) != self._n_in(nxt):
                raise ValueError(
                    f"Layer dimensions do not chain: {prev.kind} -> {self._n_out(prev)}, "
                    f"{nxt.kind} <- {self._n_in(nxt)}"
                )

    @staticmethod
    def _n_in(layer) -> int:
        if layer.kind == "affine":
            return layer.n_in
        return 2 * layer.width if layer.kind == "norm" else layer.width

    @staticmethod
    def _n_out(layer) -> int:
        return layer.n_out if layer.kind == "affine" else layer.width

    @property
    def width(self) -> int:
        """Widest nonlinear layer"""
        return max([layer.width for layer in self.layers if layer.kind != "affine"], default=0)

    @property
    def depth(self) -> int:
        """Number of nonlinear layers"""
        return sum(layer.kind != "affine" for layer in self.layers)

    def forward(self, x) -> np.ndarray:
        """Returns the outputs (B, n_out)"""
        out = np.atleast_2d(np.asarray(x, dtype=float))
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward(self, grad_out) -> np.ndarray:
        """Adjoint of the inputs for the last forward pass, given the output adjoint (B, n_out)"""
        grad = np.atleast_2d(np.asarray(grad_out, dtype=float))
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "depth": self.depth,
            "layers": [
                {"kind": layer.kind, "shape": list(layer.weight.shape)} if layer.kind == "affine"
                else {"kind": layer.kind, "width": layer.width}
                for layer in self.layers
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=4)
# ------------------------------------------------

############################### MIN / MAX TREES ################################
# -----------------------------------------------------------------------------
def _gadget(x: float, y: float, w_in: np.ndarray, w_out: np.ndarray) -> float:
    return float(np.maximum(w_in @ np.array([x, y], dtype=float), 0.0) @ w_out)

# -----------------------------------------------------------------------------
def relu_min_pair(x: float, y: float) -> float:
    """min(x, y) through the width-4 ReLU gadget"""
    return _gadget(x, y, MIN_IN, MIN_OUT)

# -----------------------------------------------------------------------------
def relu_max_pair(x: float, y: float) -> float:
    """max(x, y) through the width-4 ReLU gadget"""
    return _gadget(x, y, MAX_IN, MAX_OUT)

# -----------------------------------------------------------------------------
def _tree_levels(groups: list, n_in: int, maximum=False) -> list:
    """
    Layers reducing each group of input indices to one value with pair gadgets.
    Groups are reduced level by level in parallel; an odd element (or an already reduced group)
    passes through the identity. Output order follows the group order.
    """
    w_in, w_out, kinks = (MAX_IN, MAX_OUT, MAX_KINKS) if maximum else (MIN_IN, MIN_OUT, MIN_KINKS)
    layers = []
    while any(len(group) > 1 for group in groups):
        pre_rows, pre_kinks, post_rows = [], [], []
        new_groups = []
        for group in groups:
            new_group = []
            for k in range(0, len(group), 2):
                pair = group[k:k + 2]
                start = len(pre_rows)
                if len(pair) == 2:
                    for row in w_in:
                        line = np.zeros(n_in)
                        line[pair[0]], line[pair[1]] = row
                        pre_rows.append(line)
                    pre_kinks.extend(kinks)
                    post_rows.append((start, w_out))
                else:
                    for row in PASS_IN:
                        line = np.zeros(n_in)
                        line[pair[0]] = row[0]
                        pre_rows.append(line)
                    pre_kinks.extend(PASS_KINKS)
                    post_rows.append((start, PASS_OUT))
                new_group.append(len(post_rows) - 1)
            new_groups.append(new_group)
        width = len(pre_rows)
        post = np.zeros((len(post_rows), width))
        for o, (start, weights) in enumerate(post_rows):
            post[o, start:start + len(weights)] = weights
        layers += [
            AffineLayer(np.array(pre_rows), np.zeros(width)),
            ReluLayer(pre_kinks),
            AffineLayer(post, np.zeros(len(post_rows))),
        ]
        groups, n_in = new_groups, len(post_rows)
    return layers

# -----------------------------------------------------------------------------
def min_tree_graph(n: int, maximum=False) -> ReluGraph:
    """ReLU graph computing the minimum (maximum) of `n` inputs"""
    if n < 1:
        raise ValueError("A min/max tree needs at least one value")
    layers = _tree_levels([list(range(n))], n, maximum=maximum)
    if not layers:
        layers = [AffineLayer(np.eye(1), np.zeros(1))]
    return ReluGraph(layers)

# -----------------------------------------------------------------------------
def relu_min_tree(values: list) -> float:
    """Exact minimum of `values` through a balanced tree of min gadgets"""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("Cannot take the minimum of an empty list")
    return float(min_tree_graph(values.size).forward(values[None, :])[0, 0])

# -----------------------------------------------------------------------------
def relu_max_tree(values: list) -> float:
    """Exact maximum of `values` through a balanced tree of max gadgets"""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("Cannot take the maximum of an empty list")
    return float(min_tree_graph(values.size, maximum=True).forward(values[None, :])[0, 0])

# -----------------------------------------------------------------------------
def tree_bounds(n: int) -> tuple:
    """(width, depth) bounds for a min/max tree of n values"""
    return 4 * math.ceil(n / 2), 2 * int(math.floor(math.log2(n)))

# -----------------------------------------------------------------------------
def sdf_bounds(n: int) -> tuple:
    """(width, depth) bounds for a signed-distance graph over n segments"""
    width, depth = tree_bounds(n)
    return width + 8, depth + 4

############################ SIGNED-DISTANCE GRAPH #############################
# -----------------------------------------------------------------------------
class SdfGraph(ReluGraph):
    """
    Signed-distance graph of a zonotope against fixed obstacles, as a function of its center.

    Layers:
        affine (per graph)  c -> [t_hat (N), c, -c]
        relu                t = max(t_hat, 0), c+, c-
        affine              [t, t - 1, c+, c-]
        relu                t* = ReLU(t) - ReLU(t - 1)
        affine (per graph)  residuals c - a - d t* (2N)
        norm                segment distances (N)
        per-obstacle min trees
        affine (per call)   sign of each obstacle
        min tree over obstacles

    The sign of an obstacle is -1 when the center lies in the buffered obstacle. It is decided
    geometrically on each forward pass and enters the graph as a diagonal affine layer.
    """

    def __init__(self, layers: list, sign_index: int, boundaries: list, signature: tuple) -> None:
        super().__init__(layers)
        self.sign_index = sign_index
        # Per obstacle: (starts, edges), both (B, N_i, 2) with B = 1 for a single graph
        self.boundaries = boundaries
        self.signature = signature

    @property
    def n_segments(self) -> int:
        return int(sum(self.signature))

    @property
    def n_obstacles(self) -> int:
        return len(self.signature)

    def signs(self, c: np.ndarray) -> np.ndarray:
        """(B, n_obstacles) signs for the centers (B, 2)"""
        signs = np.ones((c.shape[0], self.n_obstacles))
        for i, (starts, edges) in enumerate(self.boundaries):
            # Segments have no interior
            if starts.shape[1] <= 2:
                continue
            rel = c[:, None, :] - starts
            cross = edges[..., 0] * rel[..., 1] - edges[..., 1] * rel[..., 0]
            signs[np.all(cross >= -CONTAINS_TOL, axis=1), i] = -1.0
        return signs

    def forward(self, x) -> np.ndarray:
        c = np.atleast_2d(np.asarray(x, dtype=float))
        n = self.n_obstacles
        weight = np.zeros((c.shape[0], n, n))
        weight[:, np.arange(n), np.arange(n)] = self.signs(c)
        self.layers[self.sign_index] = AffineLayer(weight, np.zeros(n))
        return super().forward(c)

    def audit(self) -> tuple:
        """
        Returns (width, depth).
        Raises RuntimeError if the graph exceeds its width or depth bound.
        """
        max_width, max_depth = sdf_bounds(self.n_segments)
        if self.width > max_width or self.depth > max_depth:
            raise RuntimeError(
                f"Signed-distance graph over {self.n_segments} segments has width {self.width} "
                f"(bound {max_width}) and depth {self.depth} (bound {max_depth})"
            )
        return self.width, self.depth

    def to_dict(self) -> dict:
        return {"n_segments": self.n_segments, "signature": list(self.signature), **super().to_dict()}
# ------------------------------------------------

# -----------------------------------------------------------------------------
def _segment_layers(starts: np.ndarray, ends: np.ndarray) -> tuple:
    """Per-graph affine layers computing t_hat and the residuals for the segments (N, 2)"""
    n = starts.shape[0]
    d = ends - starts
    length2 = np.einsum("ij,ij->i", d, d)
    if np.any(length2 == 0):
        raise ValueError("Buffered obstacles must not have degenerate boundary segments")
    w = d / length2[:, None]
    first = np.zeros((n + 4, 2))
    first[:n] = w
    first[n:] = np.vstack([np.eye(2), -np.eye(2)])
    first_bias = np.concatenate([-np.einsum("ij,ij->i", starts, w), np.zeros(4)])
    residual = np.zeros((2 * n, 2 * n + 4))
    for l in range(n):
        for k in range(2):
            row = 2 * l + k
            residual[row, 2 * n + k] = 1.0
            residual[row, 2 * n + 2 + k] = -1.0
            residual[row, l] = -d[l, k]
            residual[row, n + l] = d[l, k]
    return AffineLayer(first, first_bias), AffineLayer(residual, -starts.reshape(-1))

# -----------------------------------------------------------------------------
def _clamp_layers(n: int) -> tuple:
    """Shared layers of the clamp: ReLU, [t, t - 1, c+, c-], ReLU"""
    relu1 = ReluLayer(np.concatenate([np.ones(n), PASS_KINKS.repeat(2)]))
    lift = np.zeros((2 * n + 4, n + 4))
    lift[:n, :n] = np.eye(n)
    lift[n:2 * n, :n] = np.eye(n)
    lift[2 * n:, n:] = np.eye(4)
    bias = np.concatenate([np.zeros(n), -np.ones(n), np.zeros(4)])
    relu2 = ReluLayer(np.concatenate([np.ones(n), np.zeros(n), PASS_KINKS.repeat(2)]))
    return relu1, AffineLayer(lift, bias), relu2

# -----------------------------------------------------------------------------
def build_sdf_graph(z: Zonotope, obstacles: list) -> SdfGraph:
    """
    Builds the signed-distance graph between zonotopes shaped like `z` (its center is the input)
    and `obstacles`. Each obstacle is buffered by the generators of `z`.

    Raises ValueError if `obstacles` is empty or if a buffered obstacle is a point.
    """
    if not obstacles:
        raise ValueError("Signed distance needs at least one obstacle: no obstacles were given")
    polygons = []
    for i, o in enumerate(obstacles):
        buffered = buffered_obstacle(z, o)
        if buffered.m == 0:
            raise ValueError(f"Buffered obstacle {i} is a point: it has no boundary segments")
        polygons.append(enumerate_vertices(buffered))
    signature = tuple(len(poly) for poly in polygons)
    boundaries = []
    for poly in polygons:
        starts, ends = poly.segments()
        boundaries.append((starts[None], (ends - starts)[None]))
    starts = np.vstack([poly.segments()[0] for poly in polygons])
    ends = np.vstack([poly.segments()[1] for poly in polygons])
    n = starts.shape[0]

    first, residual = _segment_layers(starts, ends)
    relu1, lift, relu2 = _clamp_layers(n)
    layers = [first, relu1, lift, relu2, residual, NormLayer(n)]
    # Per-obstacle minima over consecutive segment blocks
    offsets = np.cumsum((0,) + signature)
    layers += _tree_levels([list(range(a, b)) for a, b in zip(offsets[:-1], offsets[1:])], n)
    sign_index = len(layers)
    layers.append(AffineLayer(np.eye(len(polygons)), np.zeros(len(polygons))))
    layers += _tree_levels([list(range(len(polygons)))], len(polygons))
    return SdfGraph(layers, sign_index, boundaries, signature)

# -----------------------------------------------------------------------------
def stack_sdf_graphs(graphs: list) -> SdfGraph:
    """
    Stacks graphs with the same signature into one batched graph whose element b is graphs[b].
    Raises ValueError on mismatched signatures.
    """
    first = graphs[0]
    if any(g.signature != first.signature for g in graphs):
        raise ValueError("Only graphs with the same obstacle vertex counts can be stacked")
    # Shared layers are copied so that the stacked graph keeps its own activations
    layers = [ReluLayer(layer.kinks) if layer.kind == "relu" else
              NormLayer(layer.width) if layer.kind == "norm" else layer
              for layer in first.layers]
    # Layers depending on the obstacle geometry
    for index in (0, 4):
        layers[index] = AffineLayer(
            np.stack([g.layers[index].weight for g in graphs]),
            np.stack([g.layers[index].bias for g in graphs]),
        )
    boundaries = [
        (np.concatenate([g.boundaries[i][0] for g in graphs]),
         np.concatenate([g.boundaries[i][1] for g in graphs]))
        for i in range(first.n_obstacles)
    ]
    return SdfGraph(layers, first.sign_index, boundaries, first.signature)

# -----------------------------------------------------------------------------
def forward_backward(graph: SdfGraph, centers, jacobians=None) -> tuple:
    """
    Evaluates the graph at `centers` (B, 2) and returns (values (B,), gradients).
    Gradients are w.r.t. the center (B, 2), or w.r.t. the parameters when the Jacobians
    dc/dp (B, 2, n_p) are given.
    """
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    values = graph.forward(c)[:, 0]
    grads = graph.backward(np.ones((c.shape[0], 1)))
    if jacobians is not None:
        grads = np.einsum("bk,bkp->bp", grads, np.asarray(jacobians, dtype=float).reshape(c.shape[0], 2, -1))
    return values, grads

# -----------------------------------------------------------------------------
class GraphBatch():
    """
    Graphs grouped by signature and stacked once, evaluated as few batched passes.
    Element b of every evaluation is graph b at center b; results do not depend on the batching.
    """

    def __init__(self, graphs: list) -> None:
        self.size = len(graphs)
        groups = {}
        for b, g in enumerate(graphs):
            groups.setdefault(g.signature, []).append(b)
        self.groups = [
            (np.array(indices), stack_sdf_graphs([graphs[b] for b in indices]))
            for indices in groups.values()
        ]

    def evaluate(self, centers, jacobians=None, gradients: bool = True) -> tuple:
        """Returns (values (B,), gradients (B, 2 or n_p) or None)"""
        c = np.atleast_2d(np.asarray(centers, dtype=float))
        values = np.zeros(self.size)
        grads = None
        if gradients:
            n_grad = 2 if jacobians is None else np.asarray(jacobians).shape[-1]
            grads = np.zeros((self.size, n_grad))
        for indices, graph in self.groups:
            if not gradients:
                values[indices] = graph.forward(c[indices])[:, 0]
                continue
            jac = None if jacobians is None else np.asarray(jacobians, dtype=float)[indices]
            values[indices], grads[indices] = forward_backward(graph, c[indices], jac)
        return values, grads
# ------------------------------------------------

# -----------------------------------------------------------------------------
def batch_forward_backward(graphs: list, centers, jacobians=None) -> tuple:
    """Evaluates graphs[b] at centers[b] for every b, batching graphs by signature."""
    return GraphBatch(graphs).evaluate(centers, jacobians)
