"""End-to-end acceptance suite: one test per advertised guarantee.

Every test exercises the public API at the stated tolerance and records
a one-line PASS/FAIL verdict that the conftest hook prints in the
terminal summary.  The two expensive runs are session fixtures:

* ``slim_run``: a relu/max-pool sparsification run (a kill phase with a
  strong l1 weight and per-batch shrinkage, then a gentle tuning phase
  that recovers accuracy) plus its plain-subgradient baseline trained
  with the same schedule.
* ``cert_run``: a deterministic full-batch certification run on a
  conflicting-label dataset.  Duplicated inputs with disagreeing labels
  pin a finite interior optimum (the cross-entropy of separable data
  has none), so the run genuinely reaches the convergence tolerances.
"""

import math
import time

import numpy as np
import pytest

import oracles
from acceptance_report import record
from proxslim import (
    Conv2d,
    Dataset,
    Flatten,
    Hyperparams,
    Linear,
    Network,
    alpha_for_epoch,
    build_prune_report,
    check_relative_error,
    check_sufficient_decrease,
    count_params_flops,
    evaluate,
    fd_gradient_check,
    gen_synthetic,
    init_state,
    proximal_epoch,
    prune_network,
    run_certified,
    select_channels,
    soft_threshold,
    step_subgradient,
    subgradient_epoch,
    tiny_vgg,
)


# -- shared runs -------------------------------------------------------------


@pytest.fixture(scope="session")
def slim_run():
    data = gen_synthetic(4, 24, dims=(3, 14, 14), seed=11)
    net = tiny_vgg(in_shape=(3, 14, 14), classes=4, widths=(8, 16),
                   activation="relu", pool="max")
    kill = Hyperparams(lam=1.2, beta=100.0, alpha=10.0, epochs=180,
                       batch_size=16, xi_every_batch=True,
                       alpha_schedule=((0, 10.0),))
    tune = Hyperparams(lam=0.05, beta=100.0, alpha=10.0, epochs=80,
                       batch_size=16, xi_every_batch=True,
                       alpha_schedule=((0, 10.0), (40, 100.0)))

    t0 = time.time()
    state = init_state(net, 1)
    for hp, seed in ((kill, 1), (tune, 2)):
        for epoch in range(hp.epochs):
            state, _ = proximal_epoch(net, state, data, hp, epoch, seed=seed)

    baseline = init_state(net, 1)
    for hp, seed in ((kill, 1), (tune, 2)):
        for epoch in range(hp.epochs):
            delta = 1.0 / alpha_for_epoch(hp.schedule(), epoch)
            baseline, _ = subgradient_epoch(
                net, baseline, data, hp.lam, delta, epoch, seed=seed,
                batch_size=hp.batch_size,
            )
    elapsed = time.time() - t0
    return {
        "net": net,
        "data": data,
        "state": state,
        "baseline": baseline,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="session")
def cert_run():
    rng = np.random.default_rng(np.random.SeedSequence((5, 7)))
    base = rng.normal(size=(2, 1, 10, 10))
    data = Dataset(x=np.concatenate([base, base]),
                   y=np.array([0, 0, 1, 1]), classes=2)
    net = tiny_vgg(in_shape=(1, 10, 10), classes=2, widths=(1, 2),
                   activation="softplus", pool="softmax", sharpness=2.0)
    hp = Hyperparams(lam=0.01, beta=100.0, alpha=10.0, variant="plain")
    t0 = time.time()
    state, diags, verdict = run_certified(
        net, data, hp, seed=7, max_epochs=30000, min_epochs=120, window=10)
    elapsed = time.time() - t0
    return {
        "net": net,
        "data": data,
        "state": state,
        "diags": diags,
        "verdict": verdict,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="session")
def plateau_run():
    """A wider certified run that has not yet converged; the per-epoch
    inequalities must hold all the same."""
    rng = np.random.default_rng(np.random.SeedSequence((5, 7)))
    base = rng.normal(size=(8, 2, 10, 10))
    data = Dataset(x=np.concatenate([base, base]),
                   y=np.array([0] * 8 + [1] * 8), classes=2)
    net = tiny_vgg(in_shape=(2, 10, 10), classes=2, widths=(2, 3),
                   activation="softplus", pool="softmax", sharpness=4.0)
    hp = Hyperparams(lam=0.002, beta=50.0, alpha=10.0, variant="plain")
    state, diags, verdict = run_certified(
        net, data, hp, seed=7, max_epochs=400, min_epochs=120, window=10)
    return {"net": net, "data": data, "diags": diags}


def _prune_report(run, seed=5):
    masks = select_channels(run["net"], run["state"])
    net2, state2 = prune_network(run["net"], run["state"], masks)
    report = build_prune_report(
        run["net"], run["state"], masks, net2, state2,
        data=run["data"], n_random=100, seed=seed,
    )
    return masks, report


# -- criteria ----------------------------------------------------------------


def test_criterion_01_exact_zero_scales(slim_run):
    gamma = slim_run["state"].gamma
    zeros = int(np.count_nonzero(gamma == 0.0))
    frac = zeros / gamma.size
    bzeros = int(np.count_nonzero(slim_run["baseline"].gamma == 0.0))
    acc, _ = evaluate(slim_run["net"], slim_run["state"], slim_run["data"])
    elapsed = slim_run["elapsed"]
    ok = frac >= 0.30 and bzeros == 0 and elapsed <= 600.0
    record(1, ok,
           f"{zeros}/{gamma.size} scales bit-exact 0.0 ({frac:.0%} >= 30%), "
           f"baseline {bzeros}, accuracy {acc:.2f}, {elapsed:.0f}s <= 600s")
    assert frac >= 0.30
    assert bzeros == 0
    assert elapsed <= 600.0


def test_criterion_02_sufficient_decrease(cert_run, plateau_run):
    worst = -math.inf
    epochs = 0
    for run in (cert_run, plateau_run):
        diags = run["diags"]
        dec = check_sufficient_decrease(diags, tol_scale=1e-8)
        assert dec.ok, f"decrease violations at epochs {dec.violations}"
        worst = max(worst, max(r - t for r, t in
                               zip(dec.residuals, dec.tolerances)))
        epochs += len(diags)
    diags = cert_run["diags"]
    alpha_tied = diags.alpha == 10.0 * diags.L_init
    elapsed = cert_run["elapsed"]
    ok = alpha_tied and len(diags) >= 100 and elapsed <= 900.0
    record(2, ok,
           f"decrease inequality holds for all {epochs} epochs "
           f"(worst residual-tolerance {worst:.2e}), alpha = 10 x L "
           f"= {diags.alpha:.3f}, {elapsed:.0f}s <= 900s")
    assert alpha_tied
    assert len(diags) >= 100
    assert elapsed <= 900.0


def test_criterion_03_relative_error_bound(cert_run, plateau_run):
    margin = math.inf
    epochs = 0
    for run in (cert_run, plateau_run):
        rel = check_relative_error(run["diags"])
        assert rel.ok, f"bound violations at epochs {rel.violations}"
        margin = min(margin, min(rel.margins))
        epochs += len(run["diags"])

    # the xi block of the subgradient must be exactly -alpha * (xi step)
    net = plateau_run["net"]
    data = plateau_run["data"]
    alpha, beta = 20.0, 50.0
    hp = Hyperparams(lam=0.002, beta=beta, alpha=alpha, epochs=5,
                     batch_size=data.n, alpha_schedule=((0, alpha),))
    state = init_state(net, 3)
    bitwise = True
    for epoch in range(5):
        old = state.copy()
        state, _ = proximal_epoch(net, state, data, hp, epoch, seed=3)
        _, _, w3, _, _ = step_subgradient(net, old, state, data, alpha, beta)
        expect = -alpha * (state.xi - old.xi)
        bitwise = bitwise and w3.tobytes() == expect.tobytes()

    ok = bitwise and margin >= 0.0
    record(3, ok,
           f"subgradient norm within bound for all {epochs} epochs "
           f"(min margin {margin:.2e}), xi block bitwise-equal to "
           f"-alpha x step over 5 epochs: {bitwise}")
    assert bitwise
    assert margin >= 0.0


def test_criterion_04_convergence_verdict(cert_run):
    v = cert_run["verdict"]
    n = len(cert_run["diags"])
    ok = v.converged and v.max_step_tail < 1e-5 and v.max_subgrad_tail < 1e-4
    record(4, ok,
           f"converged after {n} epochs: trailing-{v.window} max step "
           f"{v.max_step_tail:.2e} < 1e-5, max subgradient "
           f"{v.max_subgrad_tail:.2e} < 1e-4, F -> {v.F_limit:.6f}")
    assert v.converged
    assert v.max_step_tail < 1e-5
    assert v.max_subgrad_tail < 1e-4


def test_criterion_05_prune_equivalence(slim_run):
    masks, report = _prune_report(slim_run)
    ok = report.max_abs_output_diff <= 1e-9 and report.argmax_agreement == 1.0
    record(5, ok,
           f"{report.channels_pruned}/{report.channels_total} channels "
           f"removed, max |logit diff| {report.max_abs_output_diff:.2e} "
           f"<= 1e-9 on 100 random inputs, argmax agreement "
           f"{report.argmax_agreement:.0%}")
    assert report.max_abs_output_diff <= 1e-9
    assert report.argmax_agreement == 1.0


def test_criterion_06_gradient_check():
    data = gen_synthetic(2, 4, dims=(2, 10, 10), seed=9)
    worsts = {}
    for name, act, pool in (("smooth", "softplus", "softmax"),
                            ("kinked", "relu", "max")):
        net = tiny_vgg(in_shape=(2, 10, 10), classes=2, widths=(2, 3),
                       activation=act, pool=pool, sharpness=6.0)
        state = init_state(net, 5)
        worsts[name] = fd_gradient_check(net, state, data, probes=200, seed=1)
    ok = all(w <= 1e-4 for w in worsts.values())
    record(6, ok,
           f"worst relative gradient error over 200 probes: "
           f"smooth {worsts['smooth']:.2e}, relu/max {worsts['kinked']:.2e} "
           f"(both <= 1e-4)")
    for name, worst in worsts.items():
        assert worst <= 1e-4, f"{name}: {worst}"


def test_criterion_07_shrinkage_is_exact_minimizer():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        v = float(rng.uniform(-2.0, 2.0))
        lam = float(rng.uniform(0.0, 2.0))
        weight = float(rng.uniform(0.5, 120.0))
        got = float(soft_threshold(np.array([v]), lam / weight)[0])
        ref = oracles.shrink_bruteforce(v, lam, weight)
        worst = max(worst, abs(got - ref))
    ok = worst <= 1e-5
    record(7, ok,
           f"soft threshold vs 1e-5-grid brute-force minimizer on 1000 "
           f"random instances: max deviation {worst:.2e} <= 1e-5")
    assert worst <= 1e-5


def test_criterion_08_xi_update_is_optimal():
    data = gen_synthetic(3, 8, dims=(2, 10, 10), seed=21)
    net = tiny_vgg(in_shape=(2, 10, 10), classes=3, widths=(2, 3),
                   activation="softplus", pool="softmax", sharpness=8.0)
    lam, alpha, beta = 0.02, 10.0, 60.0
    hp = Hyperparams(lam=lam, beta=beta, alpha=alpha, epochs=50,
                     batch_size=8, alpha_schedule=((0, alpha),))
    state = init_state(net, 4)

    def objective(m, anchor, gamma):
        return (lam * np.abs(m).sum(axis=-1)
                + 0.5 * alpha * ((m - anchor) ** 2).sum(axis=-1)
                + 0.5 * beta * ((gamma - m) ** 2).sum(axis=-1))

    worst_margin = math.inf
    beaten = True
    for epoch in range(50):
        anchor = state.xi.copy()
        state, _ = proximal_epoch(net, state, data, hp, epoch, seed=4)
        gamma, xi = state.gamma, state.xi
        j_new = float(objective(xi, anchor, gamma))

        rng = np.random.default_rng(np.random.SeedSequence((88, epoch)))
        centers = rng.choice(
            np.stack([xi, anchor, gamma, np.zeros_like(xi)]), size=10000)
        scales = 10.0 ** rng.uniform(-6.0, 0.0, size=(10000, 1))
        cands = centers + scales * rng.normal(size=(10000, xi.size))
        j_best = float(objective(cands, anchor, gamma).min())

        margin = j_best - j_new
        worst_margin = min(worst_margin, margin)
        beaten = beaten and j_new <= j_best + 1e-12 * (1.0 + abs(j_new))
    ok = beaten
    record(8, ok,
           f"per-epoch xi update beats 10000 random candidates in each of "
           f"50 epochs (smallest winning margin {worst_margin:.2e})")
    assert beaten


def test_criterion_09_reduction_to_plain_descent():
    data = gen_synthetic(2, 6, dims=(2, 10, 10), seed=13)
    net = tiny_vgg(in_shape=(2, 10, 10), classes=2, widths=(2, 3),
                   activation="softplus", pool="softmax")
    hp = Hyperparams(lam=0.0, beta=0.0, alpha=10.0, epochs=20, batch_size=4)
    prox = init_state(net, 8)
    plain = init_state(net, 8)
    losses_equal = True
    for epoch in range(20):
        prox, lp = proximal_epoch(net, prox, data, hp, epoch, seed=8)
        delta = 1.0 / alpha_for_epoch(hp.schedule(), epoch)
        plain, lb = subgradient_epoch(net, plain, data, 0.0, delta, epoch,
                                      seed=8, batch_size=hp.batch_size)
        losses_equal = losses_equal and lp == lb
    same = all(
        getattr(prox, f).tobytes() == getattr(plain, f).tobytes()
        for f in ("w", "gamma", "xi", "running_mean", "running_var")
    )
    ok = losses_equal and same
    record(9, ok,
           f"with lam = beta = 0 the proximal run reproduces plain SGD "
           f"bitwise over 20 epochs (losses equal: {losses_equal}, "
           f"states identical: {same})")
    assert losses_equal
    assert same


def test_criterion_10_cost_model_and_report(slim_run):
    stubs = (
        (Network([Flatten(), Linear(5)], (1, 2, 5)), oracles.STUB_LINEAR),
        (Network([Conv2d(8, 3)], (3, 10, 10)), oracles.STUB_CONV),
        (Network([Conv2d(4, 3), Flatten(), Linear(3)], (2, 6, 6)),
         oracles.STUB_MIXED),
    )
    counts_ok = True
    got = []
    for net, want in stubs:
        pf = count_params_flops(net)
        counts_ok = (counts_ok and pf.params == want["params"]
                     and pf.macs == want["macs"])
        got.append(f"{pf.params}p/{pf.macs}m")

    _, report = _prune_report(slim_run)
    ident = max(
        abs(report.channels_pct
            - report.channels_pruned / report.channels_total),
        abs(report.params_pct - (1.0 - report.params_after
                                 / report.params_before)),
        abs(report.macs_pct - (1.0 - report.macs_after
                               / report.macs_before)),
    )
    ok = counts_ok and ident <= 1e-12
    record(10, ok,
           f"params/MACs exact on 3 reference nets ({', '.join(got)}), "
           f"report percentage identities off by {ident:.1e} <= 1e-12")
    assert counts_ok
    assert ident <= 1e-12
