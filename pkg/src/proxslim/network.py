"""Layer descriptors, the sequential network container, and forward/loss.

A ``Network`` is an immutable ordered list of layer descriptors plus the
bookkeeping that ties flat parameter vectors to layers:

* ``w_slices``: every trainable parameter except the batch-norm scales
  (conv kernels and biases, batch-norm shifts, linear weights and
  biases) lives in one flat vector ``w``; each entry maps a string key
  like ``"2.beta"`` to its slice and shape.
* ``gamma_slices``: the batch-norm scales live in a separate flat
  vector ``gamma``; each batch-norm layer owns a contiguous slice.
* ``channel_registry``: global gamma index -> (layer index, channel).

Running statistics for batch norm share the gamma layout: position i of
``running_mean``/``running_var`` belongs to the same (layer, channel)
as gamma[i].
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError, TopologyError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class Conv2d:
    out_channels: int
    kernel: int
    padding: int = 0
    bias: bool = True


@dataclass(frozen=True)
class BatchNorm:
    """Per-channel scale/shift normalization; the scales are the gamma
    entries that the optimizer sparsifies."""

    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM


@dataclass(frozen=True)
class Activation:
    kind: str = "softplus"  # softplus | relu
    sharpness: float = 10.0  # softplus steepness c


@dataclass(frozen=True)
class Pool:
    kind: str = "softmax"  # softmax | max | avg
    window: int = 2
    sharpness: float = 10.0  # softmax sharpness c


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Linear:
    out_features: int
    bias: bool = True


@dataclass(frozen=True)
class Dataset:
    """Inputs of shape (N, C, H, W) and integer labels of shape (N,)."""

    x: np.ndarray
    y: np.ndarray
    classes: int

    def __post_init__(self):
        if self.x.ndim != 4 or self.y.shape != (self.x.shape[0],):
            raise ShapeError("dataset needs x (N,C,H,W) and y (N,)")
        if len(self.y) < 1:
            raise ContractError("dataset must be nonempty")
        if self.y.min() < 0 or self.y.max() >= self.classes:
            raise ContractError(f"label out of range for {self.classes} classes")

    @property
    def n(self):
        return len(self.y)


class Network:
    """Immutable sequential network with flat parameter layout.

    Parameters
    ----------
    layers : sequence of layer descriptors
    in_shape : (C, H, W) of a single input sample

    Shapes are walked at construction; incompatible layers raise
    ``ShapeError`` immediately.  Conv-followed-by-BN adjacency is NOT
    required here (stub architectures are legal); it is enforced by
    ``validate_slimmable`` at training/pruning entry.
    """

    def __init__(self, layers, in_shape):
        self.layers = tuple(layers)
        self.in_shape = tuple(int(d) for d in in_shape)
        if len(self.in_shape) != 3:
            raise ShapeError(f"in_shape must be (C,H,W), got {self.in_shape}")

        self.w_slices = {}  # key -> (slice, shape)
        self.w_order = []  # keys in layout order
        self.init_fans = {}  # key -> fan_in, or None for zero init
        self.gamma_slices = {}  # layer idx -> slice
        self.out_shapes = []  # per layer, shape after the layer (sample dims)
        self.channel_registry = []  # gamma index -> (layer idx, channel)

        w_pos = 0
        g_pos = 0
        cur = self.in_shape
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d):
                if len(cur) != 3:
                    raise ShapeError(f"layer {idx}: conv needs (C,H,W), got {cur}")
                c, h, w = cur
                ho = h + 2 * layer.padding - layer.kernel + 1
                wo = w + 2 * layer.padding - layer.kernel + 1
                if ho < 1 or wo < 1:
                    raise ShapeError(
                        f"layer {idx}: kernel {layer.kernel} too large for {cur}"
                    )
                shape = (layer.out_channels, c, layer.kernel, layer.kernel)
                w_pos = self._add_w(f"{idx}.w", shape, w_pos, c * layer.kernel**2)
                if layer.bias:
                    w_pos = self._add_w(
                        f"{idx}.b", (layer.out_channels,), w_pos, c * layer.kernel**2
                    )
                cur = (layer.out_channels, ho, wo)
            elif isinstance(layer, BatchNorm):
                if len(cur) != 3:
                    raise ShapeError(f"layer {idx}: batchnorm needs (C,H,W), got {cur}")
                c = cur[0]
                self.gamma_slices[idx] = slice(g_pos, g_pos + c)
                self.channel_registry.extend((idx, ch) for ch in range(c))
                g_pos += c
                w_pos = self._add_w(f"{idx}.beta", (c,), w_pos, None)
            elif isinstance(layer, Activation):
                if layer.kind not in ("softplus", "relu"):
                    raise ContractError(f"unknown activation {layer.kind!r}")
            elif isinstance(layer, Pool):
                if layer.kind not in ("softmax", "max", "avg"):
                    raise ContractError(f"unknown pool {layer.kind!r}")
                if len(cur) != 3:
                    raise ShapeError(f"layer {idx}: pool needs (C,H,W), got {cur}")
                c, h, w = cur
                if h % layer.window or w % layer.window:
                    raise ShapeError(
                        f"layer {idx}: window {layer.window} does not divide {h}x{w}"
                    )
                cur = (c, h // layer.window, w // layer.window)
            elif isinstance(layer, Flatten):
                cur = (int(np.prod(cur)),)
            elif isinstance(layer, Linear):
                if len(cur) != 1:
                    raise ShapeError(f"layer {idx}: linear needs flat input, got {cur}")
                shape = (cur[0], layer.out_features)
                w_pos = self._add_w(f"{idx}.w", shape, w_pos, cur[0])
                if layer.bias:
                    w_pos = self._add_w(f"{idx}.b", (layer.out_features,), w_pos, cur[0])
                cur = (layer.out_features,)
            else:
                raise ContractError(f"unknown layer descriptor {layer!r}")
            self.out_shapes.append(cur)

        # stub architectures may end anywhere; training needs flat logits
        self.class_count = cur[0] if len(cur) == 1 else None
        self.w_size = w_pos
        self.gamma_size = g_pos

    def _add_w(self, key, shape, pos, fan_in):
        n = int(np.prod(shape))
        self.w_slices[key] = (slice(pos, pos + n), tuple(shape))
        self.w_order.append(key)
        self.init_fans[key] = fan_in
        return pos + n

    # -- layout helpers ----------------------------------------------------

    def unpack_w(self, w, key):
        sl, shape = self.w_slices[key]
        return w[sl].reshape(shape)

    def leaves(self, w, gamma):
        """Split flat parameter vectors into per-entry leaf Tensors."""
        if w.shape != (self.w_size,):
            raise ShapeError(f"w has shape {w.shape}, expected ({self.w_size},)")
        if gamma.shape != (self.gamma_size,):
            raise ShapeError(
                f"gamma has shape {gamma.shape}, expected ({self.gamma_size},)"
            )
        lv = {}
        for key in self.w_order:
            sl, shape = self.w_slices[key]
            lv[key] = T.Tensor(w[sl].reshape(shape))
        for idx, sl in self.gamma_slices.items():
            lv[f"{idx}.gamma"] = T.Tensor(gamma[sl])
        return lv

    def pack_grads(self, grads, lv):
        """Gather leaf gradients back into flat (grad_w, grad_gamma)."""
        gw = np.zeros(self.w_size)
        for key in self.w_order:
            sl, shape = self.w_slices[key]
            gw[sl] = grads[lv[key]].ravel()
        gg = np.zeros(self.gamma_size)
        for idx, sl in self.gamma_slices.items():
            gg[sl] = grads[lv[f"{idx}.gamma"]]
        return gw, gg

    # -- forward -----------------------------------------------------------

    def forward(
        self,
        lv,
        x,
        *,
        training,
        running_mean=None,
        running_var=None,
        update_running=False,
    ):
        """Run the network on a batch Tensor, returning the logits Tensor.

        In train mode batch norm uses mini-batch statistics (biased
        variance); in eval mode it uses the supplied running
        statistics.  With ``update_running`` the running arrays are
        updated in place by exponential moving average.
        """
        cur = x
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d):
                b = lv.get(f"{idx}.b")
                cur = T.conv2d(cur, lv[f"{idx}.w"], b, padding=layer.padding)
            elif isinstance(layer, BatchNorm):
                cur = self._bn(
                    idx, layer, lv, cur, training, running_mean, running_var,
                    update_running,
                )
            elif isinstance(layer, Activation):
                if layer.kind == "relu":
                    cur = T.relu(cur)
                else:
                    cur = T.softplus(cur, layer.sharpness)
            elif isinstance(layer, Pool):
                if layer.kind == "max":
                    cur = T.max_pool(cur, layer.window)
                elif layer.kind == "avg":
                    cur = T.avg_pool(cur, layer.window)
                else:
                    cur = T.softmax_pool(cur, layer.window, layer.sharpness)
            elif isinstance(layer, Flatten):
                batch = cur.shape[0]
                cur = T.reshape(cur, (batch, cur.size // batch))
            elif isinstance(layer, Linear):
                cur = T.matmul(cur, lv[f"{idx}.w"])
                if layer.bias:
                    cur = T.add(cur, lv[f"{idx}.b"])
        return cur

    def _bn(self, idx, layer, lv, cur, training, rmean, rvar, update_running):
        c = cur.shape[1]
        sl = self.gamma_slices[idx]
        if sl.stop - sl.start != c:
            raise ShapeError(
                f"layer {idx}: batchnorm expects {sl.stop - sl.start} channels, got {c}"
            )
        g = T.reshape(lv[f"{idx}.gamma"], (1, c, 1, 1))
        beta = T.reshape(lv[f"{idx}.beta"], (1, c, 1, 1))
        if training:
            b, _, h, w = cur.shape
            if b * h * w < 2:
                raise ContractError(
                    f"layer {idx}: batch statistics need at least 2 values per channel"
                )
            mu = T.tensor_mean(cur, (0, 2, 3), keepdims=True)
            d = T.sub(cur, mu)
            var = T.tensor_mean(T.mul(d, d), (0, 2, 3), keepdims=True)
            if update_running:
                m = layer.momentum
                rmean[sl] = (1.0 - m) * rmean[sl] + m * mu.data.ravel()
                rvar[sl] = (1.0 - m) * rvar[sl] + m * var.data.ravel()
            xhat = T.div(d, T.sqrt(T.add(var, layer.eps)))
        else:
            if rmean is None or rvar is None:
                raise ContractError("eval-mode batch norm needs running statistics")
            mu = T.Tensor(rmean[sl].reshape(1, c, 1, 1))
            sd = T.Tensor(np.sqrt(rvar[sl] + layer.eps).reshape(1, c, 1, 1))
            xhat = T.div(T.sub(cur, mu), sd)
        return T.add(T.mul(xhat, g), beta)


def bn_forward(layer, z, gamma, beta, mode, running_mean=None, running_var=None,
               update_running=False):
    """Standalone batch-norm forward on a raw array (single layer).

    Thin wrapper used by unit tests; training code goes through
    ``Network.forward``.  ``mode`` is "train" or "eval".
    """
    c = z.shape[1]
    net = Network([BatchNorm(eps=layer.eps, momentum=layer.momentum)],
                  (c, z.shape[2], z.shape[3]))
    lv = {"0.gamma": T.Tensor(gamma), "0.beta": T.Tensor(beta)}
    rm = running_mean if running_mean is not None else np.zeros(c)
    rv = running_var if running_var is not None else np.ones(c)
    out = net._bn(
        0, net.layers[0], lv, T.Tensor(z), mode == "train", rm, rv, update_running
    )
    return out.data


# ---------------------------------------------------------------------------
# loss entry points


def forward_logits(net, w, gamma, x, *, training=False, running_mean=None,
                   running_var=None, update_running=False):
    """Untaped forward pass; returns the logits as a plain array."""
    lv = net.leaves(w, gamma)
    out = net.forward(
        lv,
        T.Tensor(x),
        training=training,
        running_mean=running_mean,
        running_var=running_var,
        update_running=update_running,
    )
    return out.data


def loss_and_grads(net, w, gamma, x, y, *, training=True, running_mean=None,
                   running_var=None, update_running=False):
    """One taped forward/backward; returns (loss, grad_w, grad_gamma)."""
    with T.Tape() as tape:
        lv = net.leaves(w, gamma)
        logits = net.forward(
            lv,
            T.Tensor(x),
            training=training,
            running_mean=running_mean,
            running_var=running_var,
            update_running=update_running,
        )
        loss = T.cross_entropy_mean(logits, y)
    grads = T.backward(tape, loss)
    gw, gg = net.pack_grads(grads, lv)
    return float(loss.data), gw, gg


def loss_full_batch(net, w, gamma, data, *, training=True, running_mean=None,
                    running_var=None):
    """Mean cross-entropy over the whole dataset, deterministic."""
    lv = net.leaves(w, gamma)
    logits = net.forward(
        lv,
        T.Tensor(data.x),
        training=training,
        running_mean=running_mean,
        running_var=running_var,
    )
    return float(T.cross_entropy_mean(logits, data.y).data)


def evaluate(net, state, data):
    """Eval-mode top-1 accuracy and mean loss using running statistics."""
    logits = forward_logits(
        net,
        state.w,
        state.gamma,
        data.x,
        training=False,
        running_mean=state.running_mean,
        running_var=state.running_var,
    )
    acc = float((logits.argmax(axis=1) == data.y).mean())
    loss = float(T.cross_entropy_mean(T.Tensor(logits), data.y).data)
    return acc, loss


def validate_slimmable(net):
    """Require every conv to be immediately followed by batch norm.

    Channel selection and exact pruning rely on this adjacency; stub
    architectures that skip it can still be built and evaluated.
    """
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, Conv2d):
            nxt = net.layers[idx + 1] if idx + 1 < len(net.layers) else None
            if not isinstance(nxt, BatchNorm):
                raise TopologyError(
                    f"layer {idx}: conv must be immediately followed by batch norm"
                )
    if not net.gamma_slices:
        raise TopologyError("network has no batch-norm layers to slim")


def tiny_vgg(in_shape=(3, 14, 14), classes=4, widths=(8, 16), activation="softplus",
             pool="softmax", sharpness=10.0):
    """Reference two-block architecture: conv-BN-act-pool twice, then linear."""
    layers = []
    for width in widths:
        layers += [
            Conv2d(width, 3, padding=0),
            BatchNorm(),
            Activation(activation, sharpness),
            Pool(pool, 2, sharpness),
        ]
    layers += [Flatten(), Linear(classes)]
    return Network(layers, in_shape)


# descriptor (de)serialization for checkpoints

_LAYER_KINDS = {
    "conv": Conv2d,
    "batchnorm": BatchNorm,
    "activation": Activation,
    "pool": Pool,
    "flatten": Flatten,
    "linear": Linear,
}
_KIND_NAMES = {v: k for k, v in _LAYER_KINDS.items()}


def to_manifest(net):
    rows = []
    for layer in net.layers:
        # "layer" tags the class; layer fields (which include their own
        # "kind" for activations and pools) follow unprefixed.
        d = {"layer": _KIND_NAMES[type(layer)]}
        for field in layer.__dataclass_fields__:
            d[field] = getattr(layer, field)
        rows.append(d)
    return {"in_shape": list(net.in_shape), "layers": rows}


def from_manifest(manifest):
    layers = []
    for row in manifest["layers"]:
        row = dict(row)
        cls = _LAYER_KINDS[row.pop("layer")]
        layers.append(cls(**row))
    return Network(layers, tuple(manifest["in_shape"]))
