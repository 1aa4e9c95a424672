"""Command-line front end.

Verbs: gen-data, train, certify, prune, eval, finetune, sweep.  Exit
codes: 0 success, 1 usage/contract problems, 2 numeric failure,
3 certification violation, 4 refused prune.  Artifacts (logs, reports,
checkpoints) are byte-deterministic for a given config and seed;
wall-clock timing goes to the console only.
"""

import argparse
import itertools
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from . import convergence, report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    build_config,
    hyperparams_from,
    network_from,
    parse_config_file,
    render_config,
)
from .data import gen_synthetic, load_csv, load_idx, load_pnsd, save_pnsd
from .errors import (
    CertificationError,
    ModeError,
    NumericError,
    ProxslimError,
    PruneRefusedError,
    UsageError,
)
from .network import evaluate, validate_slimmable
from .optim import (
    alpha_for_epoch,
    init_state,
    proximal_epoch,
    subgradient_epoch,
    fine_tune,
)
from .prune import build_prune_report, prune_network, select_channels


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--data", help="dataset file (.pnsd, .csv, or IDX images)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--lambda", dest="lam", type=float, help="l1 weight")
    p.add_argument("--beta", type=float, help="quadratic penalty weight")
    p.add_argument("--alpha", type=float, help="reciprocal learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("stochastic", "deterministic-fullbatch"))
    p.add_argument("--variant", choices=("plain", "momentum", "baseline"))
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--xi-every-batch", dest="xi_every_batch",
                   action="store_const", const=True)
    p.add_argument("--activation", choices=("softplus", "relu"))
    p.add_argument("--pool", choices=("softmax", "max", "avg"))
    p.add_argument("--sharpness", type=float)
    p.add_argument("--widths", help="conv widths, e.g. 8,16")
    p.add_argument("--arch")
    p.add_argument("--diagnostics", action="store_const", const=True,
                   help="log the penalized objective each epoch")


def build_parser():
    top = _Parser(prog="proxslim",
                  description="proximal channel slimming for small CNNs")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="write a synthetic dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", dest="per_class", type=int, default=100)
    p.add_argument("--dims", default="3,14,14", help="C,H,W")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.35)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run proximal (or baseline) training")
    _add_config_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("certify", help="full-batch run with per-epoch checks")
    _add_config_flags(p)
    p.add_argument("--min-epochs", dest="min_epochs", type=int, default=100)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--step-tol", dest="step_tol", type=float, default=1e-5)
    p.add_argument("--subgrad-tol", dest="subgrad_tol", type=float, default=1e-4)
    p.add_argument("--alpha-factor", dest="alpha_factor", type=float, default=10.0)
    p.add_argument("--lipschitz-samples", dest="l_samples", type=int, default=20)
    p.add_argument("--lipschitz-radius", dest="l_radius", type=float, default=1e-2)

    p = sub.add_parser("prune", help="remove zero-scale channels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=None,
                   help="near-zero threshold for analyzing baselines "
                   "(default: exact zeros only)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="accuracy and loss of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")

    p = sub.add_parser("finetune", help="retrain without the sparsity terms")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="run a grid of training configs")
    _add_config_flags(p)
    p.add_argument("--grid", required=True,
                   help="semicolon-separated key=v1,v2 lists")
    return top


_CONFIG_KEYS = (
    "data out lam beta alpha epochs batch_size seed mode variant momentum "
    "weight_decay xi_every_batch activation pool sharpness widths arch "
    "diagnostics"
).split()


def _config_from(args):
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    cfg = build_config(file_values, overrides)
    if not cfg.data:
        raise UsageError("no dataset given (--data or data= in the config)")
    return cfg


def load_dataset(path):
    if path.endswith(".csv"):
        raise UsageError("CSV needs dims; use the library loader load_csv")
    if path.endswith(".idx") or path.endswith("-ubyte"):
        raise UsageError("IDX needs an image/label pair; use load_idx")
    return load_pnsd(path)


def _echo_config(cfg, out_dir):
    text = render_config(cfg)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)


def cmd_gen_data(args):
    dims = tuple(int(p) for p in args.dims.replace("x", ",").split(","))
    if len(dims) != 3:
        raise UsageError(f"--dims must be C,H,W, got {args.dims!r}")
    data = gen_synthetic(args.classes, args.per_class, dims, args.seed, args.noise)
    save_pnsd(args.out, data)
    print(f"wrote {data.n} samples ({args.classes} classes, "
          f"{dims[0]}x{dims[1]}x{dims[2]}) to {args.out}")
    return 0


def run_training(cfg, out_dir):
    """Shared train driver; returns a summary dict (also used by sweep)."""
    data = load_dataset(cfg.data)
    net = network_from(cfg, data.x.shape[1:], data.classes)
    validate_slimmable(net)
    hp = hyperparams_from(cfg)
    if cfg.mode == "deterministic-fullbatch":
        hp = replace(hp, batch_size=data.n)
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(cfg, out_dir)

    state = init_state(net, cfg.seed)
    start_epoch = 0
    algorithm = "subgradient" if cfg.variant == "baseline" else "proximal"
    rows = []
    ck_path = os.path.join(out_dir, "checkpoint.pnsc")
    try:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.perf_counter()
            if algorithm == "subgradient":
                delta = 1.0 / alpha_for_epoch(hp.schedule(), epoch)
                state, loss = subgradient_epoch(
                    net, state, data, hp.lam, delta, epoch, cfg.seed,
                    batch_size=hp.batch_size,
                )
            else:
                state, loss = proximal_epoch(net, state, data, hp, epoch, cfg.seed)
            wall = time.perf_counter() - t0
            row = {
                "epoch": epoch,
                "loss": loss,
                "zero_gamma": int(np.count_nonzero(state.gamma == 0.0)),
            }
            if cfg.diagnostics:
                row["F"] = convergence.objective_value(
                    net, state, data, hp.lam, hp.beta
                )
            rows.append(row)
            print(f"epoch {epoch}: loss {loss:.6f} "
                  f"zero_gamma {row['zero_gamma']} ({wall * 1e3:.0f} ms)")
    except NumericError:
        save_checkpoint(ck_path, net, state, hp, len(rows), cfg.seed,
                        extra={"algorithm": algorithm, "aborted": True})
        if rows:
            report.write_report(os.path.join(out_dir, "train_log"), rows)
        raise
    save_checkpoint(ck_path, net, state, hp, cfg.epochs, cfg.seed,
                    extra={"algorithm": algorithm})
    if rows:
        report.write_report(os.path.join(out_dir, "train_log"), rows)
    acc, mean_loss = evaluate(net, state, data)
    summary = {
        "epochs": cfg.epochs,
        "final_loss": rows[-1]["loss"] if rows else None,
        "zero_gamma": int(np.count_nonzero(state.gamma == 0.0)),
        "train_accuracy": acc,
        "checkpoint": ck_path,
    }
    return summary


def cmd_train(args):
    cfg = _config_from(args)
    if args.resume:
        return _resume_training(args, cfg)
    summary = run_training(cfg, cfg.out)
    print(f"done: train accuracy {summary['train_accuracy']:.4f}, "
          f"{summary['zero_gamma']} exact-zero scales")
    return 0


def _resume_training(args, cfg):
    ck = load_checkpoint(args.resume)
    data = load_dataset(cfg.data)
    net = ck.net
    hp = ck.hp
    state = ck.state
    algorithm = ck.extra.get("algorithm", "proximal")
    out_dir = cfg.out
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    epochs = cfg.epochs
    for epoch in range(ck.epoch, epochs):
        if algorithm == "subgradient":
            delta = 1.0 / alpha_for_epoch(hp.schedule(), epoch)
            state, loss = subgradient_epoch(
                net, state, data, hp.lam, delta, epoch, ck.seed,
                batch_size=hp.batch_size,
            )
        else:
            state, loss = proximal_epoch(net, state, data, hp, epoch, ck.seed)
        rows.append({
            "epoch": epoch,
            "loss": loss,
            "zero_gamma": int(np.count_nonzero(state.gamma == 0.0)),
        })
        print(f"epoch {epoch}: loss {loss:.6f}")
    save_checkpoint(os.path.join(out_dir, "checkpoint.pnsc"),
                    net, state, hp, epochs, ck.seed,
                    extra={"algorithm": algorithm})
    if rows:
        report.write_report(os.path.join(out_dir, "train_log"), rows)
    return 0


def cmd_certify(args):
    cfg = _config_from(args)
    if cfg.mode != "deterministic-fullbatch":
        raise UsageError(
            "certify requires mode = deterministic-fullbatch "
            "(the checked inequalities assume exact gradients)"
        )
    if cfg.variant == "baseline":
        raise UsageError("certify applies to the proximal scheme only")
    data = load_dataset(cfg.data)
    net = network_from(cfg, data.x.shape[1:], data.classes)
    hp = hyperparams_from(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    _echo_config(cfg, cfg.out)

    t0 = time.perf_counter()
    state, diags, verdict = convergence.run_certified(
        net, data, hp, cfg.seed,
        max_epochs=cfg.epochs,
        min_epochs=args.min_epochs,
        window=args.window,
        step_tol=args.step_tol,
        subgrad_tol=args.subgrad_tol,
        lipschitz_samples=args.l_samples,
        lipschitz_radius=args.l_radius,
        alpha_factor=args.alpha_factor,
    )
    wall = time.perf_counter() - t0
    rows = [asdict(r) for r in diags.rows]
    report.write_report(os.path.join(cfg.out, "diagnostics"), rows)
    decrease = convergence.check_sufficient_decrease(diags)
    relative = convergence.check_relative_error(diags)
    summary = {
        "alpha": diags.alpha,
        "L_init": diags.L_init,
        "epochs_run": len(diags),
        "decrease_violations": len(decrease.violations),
        "relative_error_violations": len(relative.violations),
        "converged": verdict.converged,
        "max_step_tail": verdict.max_step_tail,
        "max_subgrad_tail": verdict.max_subgrad_tail,
        "F_limit": verdict.F_limit,
    }
    report.write_report(os.path.join(cfg.out, "certification"), [summary])
    save_checkpoint(os.path.join(cfg.out, "checkpoint.pnsc"),
                    net, state, replace(hp, alpha=diags.alpha),
                    len(diags), cfg.seed, extra={"algorithm": "proximal"})
    print(f"certified {len(diags)} epochs in {wall:.1f}s: "
          f"{summary['decrease_violations']} decrease violations, "
          f"{summary['relative_error_violations']} bound violations, "
          f"converged={verdict.converged}")
    if decrease.violations or relative.violations:
        raise CertificationError(
            f"certification failed: {len(decrease.violations)} sufficient-"
            f"decrease and {len(relative.violations)} relative-error "
            f"violations (see {cfg.out}/diagnostics.txt)"
        )
    return 0


def cmd_prune(args):
    ck = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    masks = select_channels(ck.net, ck.state, epsilon=args.epsilon)
    net2, state2 = prune_network(ck.net, ck.state, masks)
    rep = build_prune_report(ck.net, ck.state, masks, net2, state2, data,
                             seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    report.write_report(os.path.join(args.out, "prune"), [rep.rows()])
    layer_rows = [
        {"layer": idx, "channels_before": b, "channels_after": a}
        for idx, b, a in rep.per_layer
    ]
    report.write_report(os.path.join(args.out, "prune_layers"), layer_rows)
    save_checkpoint(os.path.join(args.out, "compact.pnsc"),
                    net2, state2, ck.hp, ck.epoch, ck.seed,
                    extra={"algorithm": ck.extra.get("algorithm", "proximal"),
                           "pruned": True})
    print(f"pruned {rep.channels_pruned}/{rep.channels_total} channels "
          f"({100 * rep.channels_pct:.1f}%), params {rep.params_before} -> "
          f"{rep.params_after}, max output diff {rep.max_abs_output_diff:.3g}")
    return 0


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    acc, loss = evaluate(ck.net, ck.state, data)
    print(f"accuracy {acc:.4f}  loss {loss:.6f}  ({data.n} samples)")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.write_report(os.path.join(args.out, "eval"),
                            [{"accuracy": acc, "loss": loss, "n": data.n}])
    return 0


def cmd_finetune(args):
    ck = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    seed = args.seed if args.seed is not None else ck.seed
    rows = []

    def log(epoch, state, loss):
        acc, _ = evaluate(ck.net, state, data)
        rows.append({"epoch": epoch, "loss": loss, "accuracy": acc})
        print(f"epoch {epoch}: loss {loss:.6f} accuracy {acc:.4f}")

    state, _ = fine_tune(ck.net, ck.state, data, ck.hp, args.epochs, seed,
                         on_epoch=log)
    os.makedirs(args.out, exist_ok=True)
    report.write_report(os.path.join(args.out, "finetune_log"), rows)
    save_checkpoint(os.path.join(args.out, "checkpoint.pnsc"),
                    ck.net, state, ck.hp, args.epochs, seed,
                    extra={"algorithm": "finetune"})
    return 0


def _parse_grid(text):
    axes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, values = part.partition("=")
        if not values:
            raise UsageError(f"--grid entry {part!r} needs key=v1,v2,...")
        axes.append([(key.strip(), v.strip()) for v in values.split(",")])
    if not axes:
        raise UsageError("--grid is empty")
    return [dict(combo) for combo in itertools.product(*axes)]


def cmd_sweep(args):
    cfg = _config_from(args)
    combos = _parse_grid(args.grid)
    os.makedirs(cfg.out, exist_ok=True)
    threads = max(1, int(os.environ.get("PROXSLIM_THREADS", "1")))

    def one(i_combo):
        i, combo = i_combo
        tag = "_".join(f"{k}-{v}" for k, v in sorted(combo.items()))
        sub_out = os.path.join(cfg.out, f"run{i:03d}_{tag}")
        sub_cfg = build_config(
            {**{k: v for k, v in asdict(cfg).items() if k != "out"}},
            {**combo, "out": sub_out},
        )
        summary = run_training(sub_cfg, sub_out)
        return {"run": i, **combo, **{
            k: summary[k] for k in ("final_loss", "zero_gamma", "train_accuracy")
        }}

    jobs = list(enumerate(combos))
    if threads == 1:
        results = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, jobs))
    report.write_report(os.path.join(cfg.out, "sweep"), results)
    print(f"swept {len(results)} configs -> {cfg.out}/sweep.txt")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "certify": cmd_certify,
    "prune": cmd_prune,
    "eval": cmd_eval,
    "finetune": cmd_finetune,
    "sweep": cmd_sweep,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    except CertificationError as e:
        print(f"certification violation: {e}", file=sys.stderr)
        return 3
    except PruneRefusedError as e:
        print(f"prune refused: {e}", file=sys.stderr)
        return 4
    except ModeError as e:
        print(f"mode error: {e}", file=sys.stderr)
        return 1
    except ProxslimError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
