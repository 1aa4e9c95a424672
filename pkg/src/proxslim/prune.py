"""Channel removal for networks with exactly-zero batch-norm scales.

A channel whose scale is exactly 0.0 outputs the constant shift beta_i
regardless of its input, so it can be removed if that constant is
accounted for: the constant passes unchanged through activations (as
act(beta_i)) and pooling, and its contribution to the next weighted
layer folds into that layer's bias.  Selection is by exact equality
with zero; an epsilon override exists only for analyzing baselines that
merely drive scales near zero (their compact networks are then only
approximately equivalent).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, PruneRefusedError, TopologyError
from .network import (
    Activation,
    BatchNorm,
    Conv2d,
    Flatten,
    Linear,
    Network,
    Pool,
    forward_logits,
    validate_slimmable,
)
from .optim import ModelState

__all__ = [
    "select_channels",
    "prune_network",
    "count_params_flops",
    "masked_inference",
    "PruneReport",
    "build_prune_report",
    "ParamsFlops",
]


def select_channels(net, state, epsilon=None):
    """Keep-masks per batch-norm layer: pruned iff the scale is exactly
    0.0 (or |scale| <= epsilon when analyzing inexact baselines).

    Raises PruneRefusedError when a layer would lose every channel.
    """
    masks = {}
    for idx, sl in net.gamma_slices.items():
        g = state.gamma[sl]
        keep = np.abs(g) > epsilon if epsilon is not None else g != 0.0
        if not keep.any():
            raise PruneRefusedError(
                f"layer {idx}: every channel scale is zero; pruning would "
                "leave the layer empty",
                layer=idx,
            )
        masks[idx] = keep
    return masks


def _act_constant(layer, values):
    """act(values) using the same stable formulas as the forward pass."""
    if layer.kind == "relu":
        return np.maximum(values, 0.0)
    z = layer.sharpness * values
    return (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / layer.sharpness


def prune_network(net, state, masks):
    """Rebuild a compact network without the masked-out channels.

    Returns (compact Network, compact ModelState).  Dropped channels'
    constant values are absorbed into the bias of the next weighted
    layer, so on sequential nets the compact output matches the
    original (bitwise when the constants are exactly zero, to float
    rounding otherwise).  Constants still pending at the end of the
    network are discarded with the channels that carried them.
    """
    layers2 = []
    w_parts = []  # new flat-w fragments in layout order
    gamma_parts, xi_parts, rmean_parts, rvar_parts = [], [], [], []

    c_in = net.in_shape[0]
    keep = np.ones(c_in, dtype=bool)  # kept channels of the current tensor
    const = np.zeros(c_in)  # constant carried by dropped channels
    spatial = net.in_shape[1:]

    for idx, layer in enumerate(net.layers):
        if isinstance(layer, Conv2d):
            w4 = net.unpack_w(state.w, f"{idx}.w").copy()
            co = layer.out_channels
            b = (
                net.unpack_w(state.w, f"{idx}.b").copy()
                if layer.bias
                else np.zeros(co)
            )
            dropped = ~keep
            if dropped.any():
                consts = const[dropped]
                if np.any(consts != 0.0) and layer.padding != 0:
                    raise TopologyError(
                        f"layer {idx}: cannot absorb a nonzero constant into a "
                        "padded convolution (padding mixes it with zeros at "
                        "the borders); use masked_inference instead"
                    )
                b = b + np.einsum("ocij,c->o", w4[:, dropped], consts)
            keep_out = masks.get(idx + 1, np.ones(co, dtype=bool))
            w_new = w4[keep_out][:, keep]
            need_bias = layer.bias or np.any(b != 0.0)
            layers2.append(
                Conv2d(int(keep_out.sum()), layer.kernel, layer.padding, need_bias)
            )
            w_parts.append(w_new.ravel())
            if need_bias:
                w_parts.append(b[keep_out])
            keep = keep_out
            const = np.zeros(co)
            h, w_dim = spatial
            spatial = (
                h + 2 * layer.padding - layer.kernel + 1,
                w_dim + 2 * layer.padding - layer.kernel + 1,
            )
        elif isinstance(layer, BatchNorm):
            sl = net.gamma_slices[idx]
            beta = net.unpack_w(state.w, f"{idx}.beta")
            mask = masks.get(idx, np.ones(sl.stop - sl.start, dtype=bool))
            if mask.shape != (sl.stop - sl.start,):
                raise ContractError(f"layer {idx}: mask has the wrong length")
            const = np.where(mask, 0.0, beta)
            keep = mask
            layers2.append(BatchNorm(layer.eps, layer.momentum))
            w_parts.append(beta[mask])
            gamma_parts.append(state.gamma[sl][mask])
            xi_parts.append(state.xi[sl][mask])
            rmean_parts.append(state.running_mean[sl][mask])
            rvar_parts.append(state.running_var[sl][mask])
        elif isinstance(layer, Activation):
            const = np.where(keep, 0.0, _act_constant(layer, const))
            layers2.append(layer)
        elif isinstance(layer, Pool):
            # any pool of a constant window is that constant
            layers2.append(layer)
            spatial = (spatial[0] // layer.window, spatial[1] // layer.window)
        elif isinstance(layer, Flatten):
            area = int(spatial[0] * spatial[1]) if spatial else 1
            keep = np.repeat(keep, area)
            const = np.repeat(const, area)
            spatial = ()
            layers2.append(layer)
        elif isinstance(layer, Linear):
            w2 = net.unpack_w(state.w, f"{idx}.w").copy()
            b = (
                net.unpack_w(state.w, f"{idx}.b").copy()
                if layer.bias
                else np.zeros(layer.out_features)
            )
            dropped = ~keep
            if dropped.any():
                b = b + const[dropped] @ w2[dropped]
            need_bias = layer.bias or np.any(b != 0.0)
            layers2.append(Linear(layer.out_features, need_bias))
            w_parts.append(w2[keep].ravel())
            if need_bias:
                w_parts.append(b)
            keep = np.ones(layer.out_features, dtype=bool)
            const = np.zeros(layer.out_features)

    net2 = Network(layers2, net.in_shape)

    def cat(parts, size):
        return np.concatenate(parts) if parts else np.zeros(size)

    w_flat = cat(w_parts, net2.w_size)
    if w_flat.shape != (net2.w_size,):
        raise ContractError(
            f"compact layout mismatch: packed {w_flat.shape[0]} weights, "
            f"network expects {net2.w_size}"
        )
    state2 = ModelState(
        w=w_flat,
        gamma=cat(gamma_parts, net2.gamma_size),
        xi=cat(xi_parts, net2.gamma_size),
        running_mean=cat(rmean_parts, net2.gamma_size),
        running_var=cat(rvar_parts, net2.gamma_size),
    )
    return net2, state2


@dataclass(frozen=True)
class ParamsFlops:
    """Per-sample cost model: trainable parameter count, multiply-
    accumulate count, and elementwise op count (norm/act/pool),
    reported separately."""

    params: int
    macs: int
    elementwise: int
    per_layer: tuple


def count_params_flops(net):
    rows = []
    params = macs = elementwise = 0
    cur = net.in_shape
    for idx, layer in enumerate(net.layers):
        p = m = e = 0
        if isinstance(layer, Conv2d):
            c = cur[0]
            out = net.out_shapes[idx]
            k2 = layer.kernel**2
            p = layer.out_channels * c * k2 + (layer.out_channels if layer.bias else 0)
            m = layer.out_channels * c * k2 * out[1] * out[2]
        elif isinstance(layer, BatchNorm):
            p = 2 * cur[0]
            e = int(np.prod(cur))
        elif isinstance(layer, (Activation, Pool)):
            e = int(np.prod(cur))
        elif isinstance(layer, Linear):
            p = cur[0] * layer.out_features + (
                layer.out_features if layer.bias else 0
            )
            m = cur[0] * layer.out_features
        rows.append(
            {
                "layer": idx,
                "kind": type(layer).__name__.lower(),
                "params": p,
                "macs": m,
                "elementwise": e,
                "out_shape": list(net.out_shapes[idx]),
            }
        )
        params += p
        macs += m
        elementwise += e
        cur = net.out_shapes[idx]
    return ParamsFlops(params, macs, elementwise, tuple(rows))


def masked_inference(net, state, masks, x):
    """Reference oracle: run the original network with the masked-out
    scales forced to zero (a no-op when selection used exact zeros)."""
    gamma = state.gamma.copy()
    for idx, mask in masks.items():
        sl = net.gamma_slices[idx]
        entries = gamma[sl]
        entries[~mask] = 0.0
        gamma[sl] = entries
    return forward_logits(
        net,
        state.w,
        gamma,
        x,
        training=False,
        running_mean=state.running_mean,
        running_var=state.running_var,
    )


@dataclass(frozen=True)
class PruneReport:
    channels_total: int
    channels_pruned: int
    channels_pct: float
    params_before: int
    params_after: int
    params_pct: float
    macs_before: int
    macs_after: int
    macs_pct: float
    per_layer: tuple  # (layer idx, channels before, channels after)
    max_abs_output_diff: float
    argmax_agreement: float
    accuracy_before: float
    accuracy_after: float

    def rows(self):
        """Flat key/value rows for report serialization."""
        out = {
            "channels_total": self.channels_total,
            "channels_pruned": self.channels_pruned,
            "channels_pct": self.channels_pct,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "params_pct": self.params_pct,
            "macs_before": self.macs_before,
            "macs_after": self.macs_after,
            "macs_pct": self.macs_pct,
            "max_abs_output_diff": self.max_abs_output_diff,
            "argmax_agreement": self.argmax_agreement,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
        }
        return out


def _pct(before, after):
    return 1.0 - after / before if before else 0.0


def build_prune_report(
    net, state, masks, net2, state2, data=None, n_random=100, seed=0
):
    """Compression statistics plus the output-equivalence check.

    The equivalence check compares the compact network against
    masked_inference on ``n_random`` standard-normal inputs; accuracy
    and argmax agreement are computed on ``data`` when provided.
    """
    validate_slimmable(net)
    before = count_params_flops(net)
    after = count_params_flops(net2)
    per_layer = []
    for idx, sl in net.gamma_slices.items():
        total = sl.stop - sl.start
        kept = int(masks[idx].sum()) if idx in masks else total
        per_layer.append((idx, total, kept))
    channels_total = net.gamma_size
    channels_pruned = channels_total - sum(k for _, _, k in per_layer)

    diff = 0.0
    agree = 1.0
    acc_before = acc_after = float("nan")
    if net.class_count is not None:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 9)))
        xr = rng.normal(size=(n_random, *net.in_shape))
        ref = masked_inference(net, state, masks, xr)
        got = forward_logits(
            net2,
            state2.w,
            state2.gamma,
            xr,
            training=False,
            running_mean=state2.running_mean,
            running_var=state2.running_var,
        )
        diff = float(np.max(np.abs(ref - got)))
        if data is not None:
            lb = forward_logits(
                net, state.w, state.gamma, data.x, training=False,
                running_mean=state.running_mean, running_var=state.running_var,
            )
            la = forward_logits(
                net2, state2.w, state2.gamma, data.x, training=False,
                running_mean=state2.running_mean, running_var=state2.running_var,
            )
            pb, pa = lb.argmax(axis=1), la.argmax(axis=1)
            agree = float((pb == pa).mean())
            acc_before = float((pb == data.y).mean())
            acc_after = float((pa == data.y).mean())

    return PruneReport(
        channels_total=channels_total,
        channels_pruned=channels_pruned,
        channels_pct=_pct(channels_total, channels_total - channels_pruned),
        params_before=before.params,
        params_after=after.params,
        params_pct=_pct(before.params, after.params),
        macs_before=before.macs,
        macs_after=after.macs,
        macs_pct=_pct(before.macs, after.macs),
        per_layer=tuple(per_layer),
        max_abs_output_diff=diff,
        argmax_agreement=agree,
        accuracy_before=acc_before,
        accuracy_after=acc_after,
    )
