"""Training algorithms: the proximal channel-slimming scheme, the
subgradient baseline, and plain fine-tuning.

One epoch of the proximal scheme runs, per mini-batch,

    W     <- W - (1/alpha) * grad_W
    gamma <- ca * gamma + cb * xi - step * grad_gamma

with ca = alpha/(alpha+beta), cb = beta/(alpha+beta),
step = 1/(alpha+beta), both gradients evaluated at the batch's starting
point; then once per epoch the auxiliary vector gets the shrinkage step

    xi <- S(ca * xi + cb * gamma, lam * step)

where S is the soft-threshold operator.  The coefficient arrangement is
deliberate: with beta = 0 it degenerates bitwise to plain gradient
descent (ca becomes exactly 1.0 and cb exactly 0.0), which the reduction
sanity check relies on.

Mini-batch order is a seeded permutation drawn per (seed, epoch), so a
run can resume from a checkpoint bit-exactly without serializing
generator internals.  Full-batch mode (batch_size >= N) uses the
natural sample order, keeping the per-epoch loss a fixed deterministic
function of the parameters.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, NumericError
from .network import loss_and_grads

__all__ = [
    "Hyperparams",
    "ModelState",
    "default_alpha_schedule",
    "alpha_for_epoch",
    "init_state",
    "soft_threshold",
    "proximal_epoch",
    "subgradient_epoch",
    "fine_tune",
    "batch_indices",
]


def rng_for(seed, *key):
    """Deterministic generator for a (seed, purpose...) tuple."""
    entropy = (int(seed),) + tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class Hyperparams:
    """Optimization constants; alpha is the reciprocal learning rate."""

    lam: float = 0.0045
    beta: float = 100.0
    alpha: float = 10.0
    epochs: int = 160
    batch_size: int = 16
    variant: str = "plain"  # plain | momentum
    momentum: float = 0.9
    weight_decay: float = 0.0
    xi_every_batch: bool = False
    alpha_schedule: tuple = None  # ((first_epoch, alpha), ...) or None

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ContractError("lam and beta must be nonnegative")
        if self.alpha <= 0:
            raise ContractError("alpha must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.variant not in ("plain", "momentum"):
            raise ContractError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must be in [0, 1)")
        if self.alpha_schedule is not None:
            sched = tuple((int(e), float(a)) for e, a in self.alpha_schedule)
            if not sched or sched[0][0] != 0:
                raise ContractError("alpha schedule must start at epoch 0")
            if any(a <= 0 for _, a in sched):
                raise ContractError("every scheduled alpha must be positive")
            if list(sched) != sorted(sched):
                raise ContractError("alpha schedule epochs must be increasing")
            object.__setattr__(self, "alpha_schedule", sched)

    def schedule(self):
        if self.alpha_schedule is not None:
            return self.alpha_schedule
        return default_alpha_schedule(self.alpha, self.epochs)


def default_alpha_schedule(alpha0, epochs):
    """Tenfold alpha increases at 50% and 75% of the run (the learning
    rate drops by 10 at those milestones)."""
    sched = [(0, float(alpha0))]
    for frac, factor in ((0.5, 10.0), (0.75, 100.0)):
        e = int(np.ceil(frac * epochs))
        if 0 < e < epochs:
            sched.append((e, alpha0 * factor))
    return tuple(sched)


def alpha_for_epoch(schedule, epoch):
    alpha = schedule[0][1]
    for start, a in schedule:
        if epoch >= start:
            alpha = a
    return alpha


@dataclass
class ModelState:
    """Z = (w, gamma, xi) plus batch-norm running statistics and, for
    the momentum variant, velocity buffers."""

    w: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    vel_w: np.ndarray = None
    vel_gamma: np.ndarray = None

    def copy(self):
        return ModelState(
            w=self.w.copy(),
            gamma=self.gamma.copy(),
            xi=self.xi.copy(),
            running_mean=self.running_mean.copy(),
            running_var=self.running_var.copy(),
            vel_w=None if self.vel_w is None else self.vel_w.copy(),
            vel_gamma=None if self.vel_gamma is None else self.vel_gamma.copy(),
        )

    def z_blocks(self):
        return self.w, self.gamma, self.xi


def init_state(net, seed):
    """Seeded initialization: fan-in-scaled uniform weights, zero
    batch-norm shifts, every gamma exactly 0.5, xi uniform on
    [0.47, 0.50]."""
    rng = rng_for(seed, 0)
    w = np.zeros(net.w_size)
    for key in net.w_order:
        sl, shape = net.w_slices[key]
        fan = net.init_fans[key]
        if fan is not None:
            bound = 1.0 / np.sqrt(fan)
            w[sl] = rng.uniform(-bound, bound, sl.stop - sl.start)
    gamma = np.full(net.gamma_size, 0.5)
    xi = rng.uniform(0.47, 0.50, net.gamma_size)
    return ModelState(
        w=w,
        gamma=gamma,
        xi=xi,
        running_mean=np.zeros(net.gamma_size),
        running_var=np.ones(net.gamma_size),
    )


def soft_threshold(x, t):
    """Elementwise shrinkage sign(x)*max(0, |x|-t); entries with
    |x| <= t come out exactly +0.0."""
    if t < 0:
        raise ContractError("soft_threshold needs a nonnegative threshold")
    x = np.asarray(x, dtype=np.float64)
    mag = np.abs(x)
    return np.where(mag <= t, 0.0, np.sign(x) * (mag - t))


def batch_indices(n, batch_size, seed, epoch):
    """Mini-batch index lists for one epoch; full batch keeps natural
    order, otherwise a seeded per-epoch permutation is split."""
    if batch_size >= n:
        return [np.arange(n)]
    perm = rng_for(seed, 1, epoch).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _grads_checked(net, state, x, y, epoch, batch, update_running):
    try:
        loss, gw, gg = loss_and_grads(
            net,
            state.w,
            state.gamma,
            x,
            y,
            training=True,
            running_mean=state.running_mean,
            running_var=state.running_var,
            update_running=update_running,
        )
    except NumericError as e:
        raise NumericError(str(e), epoch=epoch, batch=batch) from None
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", epoch=epoch, batch=batch)
    return loss, gw, gg


def prox_coefficients(alpha, beta):
    """(ca, cb, step, lr): the gamma-update mixing weights, the shared
    1/(alpha+beta) step, and the 1/alpha weight step."""
    denom = alpha + beta
    return alpha / denom, beta / denom, 1.0 / denom, 1.0 / alpha


def apply_w_step(state, gw, hp, lr):
    """W <- W - lr * g, with optional momentum buffer and weight decay."""
    if hp.weight_decay:
        gw = gw + hp.weight_decay * state.w
    if hp.variant == "momentum":
        if state.vel_w is None:
            state.vel_w = np.zeros_like(state.w)
        state.vel_w = hp.momentum * state.vel_w + gw
        gw = state.vel_w
    state.w = state.w - lr * gw


def apply_gamma_prox_step(state, gg, hp, ca, cb, step):
    """gamma <- ca*gamma + cb*xi - step*g (momentum applies to g only)."""
    if hp.variant == "momentum":
        if state.vel_gamma is None:
            state.vel_gamma = np.zeros_like(state.gamma)
        state.vel_gamma = hp.momentum * state.vel_gamma + gg
        gg = state.vel_gamma
    state.gamma = ca * state.gamma + cb * state.xi - step * gg


def apply_xi_step(state, lam, ca, cb, step):
    """xi <- S(ca*xi + cb*gamma, lam*step); the proximal half-step."""
    state.xi = soft_threshold(ca * state.xi + cb * state.gamma, lam * step)


def proximal_epoch(net, state, data, hp, epoch, seed):
    """One epoch of the proximal scheme, mutating ``state`` in place.

    Per mini-batch, W and gamma take their linearized steps using
    gradients from the batch's starting point; the xi shrinkage runs
    once at epoch end (or per batch with ``hp.xi_every_batch``).
    Returns (state, mean batch loss).
    """
    alpha = alpha_for_epoch(hp.schedule(), epoch)
    ca, cb, step, lr = prox_coefficients(alpha, hp.beta)
    losses = []
    for bi, idx in enumerate(batch_indices(data.n, hp.batch_size, seed, epoch)):
        loss, gw, gg = _grads_checked(
            net, state, data.x[idx], data.y[idx], epoch, bi, update_running=True
        )
        losses.append(loss)
        apply_w_step(state, gw, hp, lr)
        apply_gamma_prox_step(state, gg, hp, ca, cb, step)
        if hp.xi_every_batch:
            apply_xi_step(state, hp.lam, ca, cb, step)
    if not hp.xi_every_batch:
        apply_xi_step(state, hp.lam, ca, cb, step)
    return state, float(np.mean(losses))


def subgradient_epoch(net, state, data, lam, delta, epoch, seed, batch_size=None):
    """Baseline: subgradient descent on the l1-regularized objective.

    W <- W - delta*grad_W;  gamma <- gamma - delta*(grad_gamma + lam*s)
    with s = sign(gamma), zero at gamma = 0.  Produces near-zero but
    (generically) never exactly-zero scales.
    """
    if delta <= 0:
        raise ContractError("subgradient step size must be positive")
    bs = batch_size if batch_size is not None else data.n
    losses = []
    for bi, idx in enumerate(batch_indices(data.n, bs, seed, epoch)):
        loss, gw, gg = _grads_checked(
            net, state, data.x[idx], data.y[idx], epoch, bi, update_running=True
        )
        losses.append(loss)
        if lam:
            gg = gg + lam * np.sign(state.gamma)
        state.w = state.w - delta * gw
        state.gamma = state.gamma - delta * gg
    return state, float(np.mean(losses))


def fine_tune(net, state, data, hp, epochs, seed, on_epoch=None):
    """Retrain without the sparsity machinery: plain (or momentum) SGD
    on W and gamma jointly, xi untouched, step 1/alpha per schedule.

    Returns (new state, per-epoch mean losses); ``on_epoch`` is called
    as on_epoch(epoch, state, loss) after each epoch.
    """
    state = state.copy()
    ft = replace(hp, lam=0.0, variant=hp.variant)
    sched = ft.schedule()
    history = []
    for epoch in range(epochs):
        lr = 1.0 / alpha_for_epoch(sched, epoch)
        losses = []
        for bi, idx in enumerate(batch_indices(data.n, ft.batch_size, seed, epoch)):
            loss, gw, gg = _grads_checked(
                net, state, data.x[idx], data.y[idx], epoch, bi, update_running=True
            )
            losses.append(loss)
            apply_w_step(state, gw, ft, lr)
            if ft.variant == "momentum":
                if state.vel_gamma is None:
                    state.vel_gamma = np.zeros_like(state.gamma)
                state.vel_gamma = ft.momentum * state.vel_gamma + gg
                gg = state.vel_gamma
            state.gamma = state.gamma - lr * gg
        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, state, mean_loss)
    return state, history
