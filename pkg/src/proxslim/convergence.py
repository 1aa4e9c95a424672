"""Numerical certification of the optimizer's descent theory.

All checks run on deterministic full-batch trajectories, where one
epoch is exactly one update of (W, gamma, xi) and the mean loss is a
fixed smooth function of the parameters.  Certified per epoch:

* sufficient decrease,
    F(Z+) - F(Z) <= ((L_est - alpha)/2) * ||Z+ - Z||^2,
  where F(W, gamma, xi) = data loss + lam*||xi||_1
  + (beta/2)*||gamma - xi||^2;
* relative error: an explicit subgradient w of F at Z+, assembled from
  the update's first-order structure, satisfies
    ||w|| <= (3*alpha + 2*L_est + beta) * ||Z+ - Z||.

L_est is a sampled local estimate of the gradient Lipschitz constant,
kept honest during a run by folding in the secant ratio of every step
taken (a true lower bound on the constant over the visited segment).
A trailing-window monitor turns small steps plus small subgradients
into a converged/not-converged verdict.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ModeError
from .network import loss_and_grads, loss_full_batch, validate_slimmable
from .optim import (
    Hyperparams,
    alpha_for_epoch,
    apply_gamma_prox_step,
    apply_w_step,
    apply_xi_step,
    init_state,
    prox_coefficients,
    rng_for,
)

__all__ = [
    "EpochDiagnostics",
    "RunDiagnostics",
    "objective_value",
    "full_batch_grads",
    "estimate_lipschitz",
    "subgradient_parts",
    "step_subgradient",
    "check_sufficient_decrease",
    "check_relative_error",
    "critical_point_monitor",
    "fd_gradient_check",
    "run_certified",
]


@dataclass(frozen=True)
class EpochDiagnostics:
    """One certified epoch: objective value at the epoch start, step
    size, Lipschitz estimate, both sides of the decrease inequality,
    the subgradient norm with its bound, and the exact-zero count."""

    epoch: int
    F_value: float
    step_norm_sq: float
    L_estimate: float
    decrease_lhs: float  # F(Z+) - F(Z)
    decrease_rhs: float  # ((L_est - alpha)/2) * step_norm_sq
    subgrad_norm: float  # ||w|| at Z+
    subgrad_bound: float  # (3*alpha + 2*L_est + beta) * step_norm
    zero_gamma_count: int


@dataclass(frozen=True)
class RunDiagnostics:
    """A diagnostics stream plus the run facts the checks depend on."""

    deterministic: bool
    alpha: float
    beta: float
    lam: float
    L_init: float
    rows: tuple

    def __len__(self):
        return len(self.rows)


def objective_value(net, state, data, lam, beta):
    """F(Z) = full-batch data loss + lam*||xi||_1
    + (beta/2)*||gamma - xi||^2."""
    loss = loss_full_batch(net, state.w, state.gamma, data, training=True)
    return _objective_from_loss(loss, state, lam, beta)


def _objective_from_loss(loss, state, lam, beta):
    d = state.gamma - state.xi
    return loss + lam * np.abs(state.xi).sum() + 0.5 * beta * float(d @ d)


def full_batch_grads(net, state, data, *, update_running=False):
    """(loss, grad_w, grad_gamma) of the full-batch data loss."""
    return loss_and_grads(
        net,
        state.w,
        state.gamma,
        data.x,
        data.y,
        training=True,
        running_mean=state.running_mean,
        running_var=state.running_var,
        update_running=update_running,
    )


def estimate_lipschitz(net, state, data, samples=20, radius=1e-2, seed=0):
    """Sampled local estimate of the gradient Lipschitz constant.

    Takes secant ratios ||grad(Z + t*d) - grad(Z)|| / t for unit
    directions d over (W, gamma): the current gradient direction first
    (the direction a descent step actually moves), then random ones.
    Always a lower bound on the true local constant; consumers add
    margin on top.
    """
    if samples < 1 or radius <= 0:
        raise ContractError("need samples >= 1 and radius > 0")
    _, gw0, gg0 = full_batch_grads(net, state, data)
    base = np.concatenate([gw0, gg0])
    nw = net.w_size
    rng = rng_for(seed, 2)
    best = 0.0
    for k in range(samples):
        if k == 0 and np.linalg.norm(base) > 0:
            d = base / np.linalg.norm(base)
        else:
            d = rng.normal(size=base.size)
            d /= np.linalg.norm(d)
        t = radius * (1.0 if k == 0 else rng.uniform(0.25, 1.0))
        probe = state.copy()
        probe.w = state.w + t * d[:nw]
        probe.gamma = state.gamma + t * d[nw:]
        _, gw1, gg1 = full_batch_grads(net, probe, data)
        dz = math.hypot(
            np.linalg.norm(probe.w - state.w), np.linalg.norm(probe.gamma - state.gamma)
        )
        dg = math.hypot(np.linalg.norm(gw1 - gw0), np.linalg.norm(gg1 - gg0))
        if dz > 0:
            best = max(best, dg / dz)
    return best


def subgradient_parts(z_old, z_new, g_old, g_new, alpha, beta):
    """Explicit subgradient of F at the new iterate.

    With (dW, dG, dX) the block steps and g the full-batch gradients,

        w1 = grad_W(new) - grad_W(old) - alpha*dW
        w2 = grad_gamma(new) - grad_gamma(old) - alpha*dG - beta*dX
        w3 = -alpha*dX

    The first-order conditions of the W/gamma/xi updates make this a
    member of the subdifferential of F at the new point; the l1
    subgradient at zero entries cancels out of the algebra entirely.
    Returns (w1, w2, w3, combined euclidean norm).
    """
    w_old, gamma_old, xi_old = z_old
    w_new, gamma_new, xi_new = z_new
    if w_old.shape != w_new.shape or gamma_old.shape != gamma_new.shape:
        raise ContractError("state shapes disagree between epochs")
    dW = w_new - w_old
    dG = gamma_new - gamma_old
    dX = xi_new - xi_old
    w1 = g_new[0] - g_old[0] - alpha * dW
    w2 = g_new[1] - g_old[1] - alpha * dG - beta * dX
    w3 = -alpha * dX
    norm = math.sqrt(float(w1 @ w1) + float(w2 @ w2) + float(w3 @ w3))
    return w1, w2, w3, norm


def step_subgradient(net, state_old, state_new, data, alpha, beta, L_est=None):
    """Standalone relative-error check between two consecutive states.

    Returns (w1, w2, w3, norm, bound); bound is None without L_est.
    """
    g_old = full_batch_grads(net, state_old, data)[1:]
    g_new = full_batch_grads(net, state_new, data)[1:]
    w1, w2, w3, norm = subgradient_parts(
        state_old.z_blocks(), state_new.z_blocks(), g_old, g_new, alpha, beta
    )
    bound = None
    if L_est is not None:
        step = _step_norm(state_old, state_new)
        bound = (3.0 * alpha + 2.0 * L_est + beta) * step
    return w1, w2, w3, norm, bound


def _step_norm(state_old, state_new):
    return math.sqrt(
        float(np.sum((state_new.w - state_old.w) ** 2))
        + float(np.sum((state_new.gamma - state_old.gamma) ** 2))
        + float(np.sum((state_new.xi - state_old.xi) ** 2))
    )


@dataclass(frozen=True)
class DecreaseReport:
    residuals: tuple  # per epoch: lhs - rhs
    tolerances: tuple  # per epoch: tol_scale * (1 + |F|)
    violations: tuple  # epochs where residual > tolerance

    @property
    def ok(self):
        return not self.violations


def check_sufficient_decrease(diags, tol_scale=1e-8):
    """Flag epochs where the decrease inequality fails beyond a
    relative tolerance; refuses stochastic streams."""
    if not diags.deterministic:
        raise ModeError(
            "sufficient decrease is only certified for deterministic "
            "full-batch runs (stochastic gradients break the inequality)"
        )
    residuals, tols, bad = [], [], []
    for row in diags.rows:
        tol = tol_scale * (1.0 + abs(row.F_value))
        r = row.decrease_lhs - row.decrease_rhs
        residuals.append(r)
        tols.append(tol)
        if r > tol:
            bad.append(row.epoch)
    return DecreaseReport(tuple(residuals), tuple(tols), tuple(bad))


@dataclass(frozen=True)
class RelativeErrorReport:
    margins: tuple  # per epoch: bound - norm (negative = violated)
    violations: tuple

    @property
    def ok(self):
        return not self.violations


def check_relative_error(diags):
    """Flag epochs where the subgradient norm exceeds its bound."""
    if not diags.deterministic:
        raise ModeError(
            "the relative-error bound is only certified for deterministic "
            "full-batch runs"
        )
    margins, bad = [], []
    for row in diags.rows:
        margins.append(row.subgrad_bound - row.subgrad_norm)
        if row.subgrad_norm > row.subgrad_bound:
            bad.append(row.epoch)
    return RelativeErrorReport(tuple(margins), tuple(bad))


@dataclass(frozen=True)
class Verdict:
    converged: bool
    window: int
    max_step_tail: float
    max_subgrad_tail: float
    F_limit: float


def critical_point_monitor(diags, window=10, step_tol=1e-5, subgrad_tol=1e-4):
    """Converged when every epoch of the trailing window has both a
    small step and a small subgradient."""
    if len(diags.rows) < window:
        return Verdict(False, window, math.inf, math.inf, math.nan)
    tail = diags.rows[-window:]
    max_step = max(math.sqrt(row.step_norm_sq) for row in tail)
    max_sub = max(row.subgrad_norm for row in tail)
    last = diags.rows[-1]
    f_limit = last.F_value + last.decrease_lhs
    ok = max_step < step_tol and max_sub < subgrad_tol
    return Verdict(ok, window, max_step, max_sub, f_limit)


def fd_gradient_check(net, state, data, probes=200, h=1e-6, seed=0):
    """Worst relative error of the analytic gradient against central
    differences along random coordinates of (W, gamma).

    For networks with kinked pieces (relu, max pooling) a probe is
    rejected when halving h changes the difference quotient materially,
    which is the numerical signature of straddling a kink.
    """
    if probes < 1:
        raise ContractError("need at least one probe")
    _, gw, gg = full_batch_grads(net, state, data)
    analytic = np.concatenate([gw, gg])
    nw = net.w_size
    nonsmooth = any(
        getattr(layer, "kind", None) in ("relu", "max") for layer in net.layers
    )

    def loss_at(i, delta):
        w = state.w
        gamma = state.gamma
        if i < nw:
            w = w.copy()
            w[i] += delta
        else:
            gamma = gamma.copy()
            gamma[i - nw] += delta
        return loss_full_batch(net, w, gamma, data, training=True)

    rng = rng_for(seed, 3)
    worst = 0.0
    done = 0
    attempts = 0
    while done < probes and attempts < 20 * probes:
        attempts += 1
        i = int(rng.integers(0, analytic.size))
        fd = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h)
        if nonsmooth:
            fd2 = (loss_at(i, h / 2) - loss_at(i, -h / 2)) / h
            if abs(fd - fd2) > 0.1 * max(abs(fd), abs(fd2), 1e-3):
                continue  # kink straddled; resample
        rel = abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]), 1e-3)
        worst = max(worst, rel)
        done += 1
    if done < probes:
        raise ContractError("too many probes rejected near kinks")
    return worst


def run_certified(
    net,
    data,
    hp,
    seed,
    *,
    max_epochs=2000,
    min_epochs=None,
    window=10,
    step_tol=1e-5,
    subgrad_tol=1e-4,
    lipschitz_samples=20,
    lipschitz_radius=1e-2,
    alpha_factor=10.0,
    stop_when_converged=True,
    state=None,
    on_epoch=None,
):
    """Deterministic full-batch run with per-epoch certification.

    alpha is pinned to alpha_factor times the initial Lipschitz
    estimate (constant for the whole run) and every epoch records an
    EpochDiagnostics row.  One epoch is one full-batch update, so the
    gradient at the new point doubles as the next epoch's step
    gradient: certification costs one extra forward pass per epoch,
    nothing more.

    Returns (state, RunDiagnostics, Verdict).
    """
    validate_slimmable(net)
    if hp.variant != "plain" or hp.weight_decay:
        raise ModeError(
            "certification requires plain SGD with weight decay off "
            "(the descent inequalities assume the unmodified updates)"
        )
    if min_epochs is None:
        min_epochs = window
    if state is None:
        state = init_state(net, seed)
    L0 = estimate_lipschitz(
        net, state, data, lipschitz_samples, lipschitz_radius, seed
    )
    if L0 <= 0:
        raise ContractError("Lipschitz estimate is zero; nothing to certify")
    alpha = alpha_factor * L0
    hp_run = Hyperparams(
        lam=hp.lam,
        beta=hp.beta,
        alpha=alpha,
        epochs=max_epochs,
        batch_size=data.n,
        variant="plain",
        alpha_schedule=((0, alpha),),
    )
    ca, cb, step, lr = prox_coefficients(alpha, hp_run.beta)

    loss, gw, gg = full_batch_grads(net, state, data, update_running=True)
    F_prev = _objective_from_loss(loss, state, hp_run.lam, hp_run.beta)
    L_run = L0
    rows = []
    for epoch in range(max_epochs):
        w0 = state.w.copy()
        gamma0 = state.gamma.copy()
        xi0 = state.xi.copy()
        apply_w_step(state, gw, hp_run, lr)
        apply_gamma_prox_step(state, gg, hp_run, ca, cb, step)
        apply_xi_step(state, hp_run.lam, ca, cb, step)

        loss1, gw1, gg1 = full_batch_grads(net, state, data, update_running=True)
        dW = state.w - w0
        dG = state.gamma - gamma0
        dX = state.xi - xi0
        wg_sq = float(dW @ dW) + float(dG @ dG)
        step_sq = wg_sq + float(dX @ dX)
        if wg_sq > 0:
            dg = math.hypot(np.linalg.norm(gw1 - gw), np.linalg.norm(gg1 - gg))
            L_run = max(L_run, dg / math.sqrt(wg_sq))
        F_new = _objective_from_loss(loss1, state, hp_run.lam, hp_run.beta)
        _, _, _, w_norm = subgradient_parts(
            (w0, gamma0, xi0),
            (state.w, state.gamma, state.xi),
            (gw, gg),
            (gw1, gg1),
            alpha,
            hp_run.beta,
        )
        row = EpochDiagnostics(
            epoch=epoch,
            F_value=F_prev,
            step_norm_sq=step_sq,
            L_estimate=L_run,
            decrease_lhs=F_new - F_prev,
            decrease_rhs=0.5 * (L_run - alpha) * step_sq,
            subgrad_norm=w_norm,
            subgrad_bound=(3.0 * alpha + 2.0 * L_run + hp_run.beta)
            * math.sqrt(step_sq),
            zero_gamma_count=int(np.count_nonzero(state.gamma == 0.0)),
        )
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        F_prev = F_new
        gw, gg = gw1, gg1

        if stop_when_converged and epoch + 1 >= max(min_epochs, window):
            tail = rows[-window:]
            if all(
                math.sqrt(r.step_norm_sq) < step_tol and r.subgrad_norm < subgrad_tol
                for r in tail
            ):
                break

    diags = RunDiagnostics(
        deterministic=True,
        alpha=alpha,
        beta=hp_run.beta,
        lam=hp_run.lam,
        L_init=L0,
        rows=tuple(rows),
    )
    verdict = critical_point_monitor(diags, window, step_tol, subgrad_tol)
    return state, diags, verdict
