"""Command line front end: train / eval / traverse / report.

``train`` accepts a flat JSON config file plus per-flag overrides; every
flag corresponds to one config key. The data directory falls back to the
``GCVAE_DATA_DIR`` environment variable when neither the config nor the
flag provides one.
"""

import argparse
import os
import sys

from . import harness, model
from .errors import ContractError, GcvaeError

DATA_DIR_ENV = "GCVAE_DATA_DIR"


def _parse_sigma(text):
    if text is None or text == "median":
        return text
    return float(text)


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON config file; flags override its keys")
    p.add_argument("--variant", help="objective variant (elbo, beta_vae, control_vae, "
                                     "info_vae, gcvae1, gcvae2, gcvae3)")
    p.add_argument("--dataset", choices=harness.DATASETS)
    p.add_argument("--data-dir")
    p.add_argument("--subsample-n", type=int)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--arch", choices=(model.ARCH_MLP, model.ARCH_CONV64))
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--target-recon", type=float)
    p.add_argument("--target-kl", type=float)
    p.add_argument("--target-corr", type=float)
    p.add_argument("--kp", type=float)
    p.add_argument("--ki", type=float)
    p.add_argument("--sigma-k", type=_parse_sigma,
                   help='kernel bandwidth: a number or "median" (default sqrt(k))')
    p.add_argument("--eps-reg", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--stop-eps-a", type=float)
    p.add_argument("--stop-eps-b", type=float)
    p.add_argument("--warmup", type=int)


_TRAIN_KEY_MAP = {
    "variant": "variant", "dataset": "dataset", "data_dir": "data_dir",
    "subsample_n": "subsample_n", "data_seed": "data_seed", "arch": "arch",
    "latent_dim": "latent_dim", "batch_size": "batch_size", "lr": "lr",
    "max_steps": "max_steps", "seed": "seed", "target_recon": "target_recon",
    "target_kl": "target_kl", "target_corr": "target_corr", "kp": "kp", "ki": "ki",
    "sigma_k": "sigma_k", "eps_reg": "eps_reg", "out_dir": "out_dir",
    "stop_eps_a": "stopping_eps_a", "stop_eps_b": "stopping_eps_b",
    "warmup": "stopping_warmup",
}


def _build_config(args) -> harness.RunConfig:
    flat = {}
    if args.config:
        flat.update(harness.RunConfig.load(args.config).to_flat())
    for attr, key in _TRAIN_KEY_MAP.items():
        value = getattr(args, attr)
        if value is not None:
            flat[key] = value
    if args.no_early_stop:
        flat["stopping_enabled"] = False
    if not flat.get("data_dir") and os.environ.get(DATA_DIR_ENV):
        flat["data_dir"] = os.environ[DATA_DIR_ENV]
    if "variant" not in flat:
        raise ContractError("a variant is required (flag --variant or config key)")
    return harness.RunConfig.from_flat(flat)


def _cmd_train(args) -> int:
    config = _build_config(args)
    log = harness.train(config)
    stopped = f"stopped early at step {log.stopped_at}" if log.stopped_at \
        else f"ran all {log.steps_run} steps"
    final = log.history[-1]
    print(f"{config.variant}: {stopped}")
    print(f"final: recon/px={final['recon']:.6f} kl={final['kl']:.6f} "
          f"corr={final['corr']:.6f} weights=({final['alpha']:.4f}, "
          f"{final['beta']:.4f}, {final['gamma']:.4f})")
    if log.metrics is not None:
        print(f"metrics: mig={log.metrics['mig']:.4f} jemmig={log.metrics['jemmig']:.4f} "
              f"modularity={log.metrics['modularity']:.4f}")
    print(f"artifacts in {config.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    params = model.load_params(args.checkpoint)
    data_dir = args.data_dir or os.environ.get(DATA_DIR_ENV)
    probe = harness.RunConfig(variant="elbo", dataset=args.dataset, data_dir=data_dir,
                              subsample_n=args.subsample_n, data_seed=args.data_seed,
                              latent_dim=params.latent_dim, arch=params.arch)
    ds = harness._resolve_dataset(probe)
    metrics = harness.eval_metrics(params, ds, bins=args.bins, max_n=args.max_n,
                                   seed=args.seed)
    metrics["variant"] = args.variant
    for key in ("variant", "n_eval", "mig", "jemmig", "modularity", "recon", "kl"):
        print(f"{key}: {metrics[key]}")
    if args.out_dir:
        harness.write_metrics(args.out_dir, metrics)
    return 0


def _cmd_traverse(args) -> int:
    params = model.load_params(args.checkpoint)
    img = harness.traverse(params, dim=args.dim, out_path=args.out, steps=args.steps,
                           rows=args.rows, span=args.span, seed=args.seed)
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]})")
    return 0


def _cmd_report(args) -> int:
    table, csv_text, missing = harness.report(args.run_dirs)
    print(table)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(csv_text)
    if missing:
        print("missing metrics for: " + ", ".join(missing), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcvae",
                                     description="Variational objective training laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one variant and write run artifacts")
    _add_train_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", choices=harness.DATASETS, default="synth")
    p_eval.add_argument("--data-dir")
    p_eval.add_argument("--subsample-n", type=int)
    p_eval.add_argument("--data-seed", type=int, default=0)
    p_eval.add_argument("--bins", type=int, default=20)
    p_eval.add_argument("--max-n", type=int, default=10000)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--variant", default="unlabeled",
                        help="variant label recorded in the metrics row")
    p_eval.add_argument("--out-dir", help="also write metrics.csv/metrics.txt here")
    p_eval.set_defaults(func=_cmd_eval)

    p_trav = sub.add_parser("traverse", help="render a latent traversal grid as PGM")
    p_trav.add_argument("--checkpoint", required=True)
    p_trav.add_argument("--dim", type=int, required=True)
    p_trav.add_argument("--out", default="traverse.pgm")
    p_trav.add_argument("--steps", type=int, default=8)
    p_trav.add_argument("--rows", type=int, default=8)
    p_trav.add_argument("--range", type=float, default=3.0, dest="span", metavar="RANGE",
                        help="sweep the chosen coordinate over [-range, +range]")
    p_trav.add_argument("--seed", type=int, default=0)
    p_trav.set_defaults(func=_cmd_traverse)

    p_rep = sub.add_parser("report", help="tabulate metrics across run directories")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--csv", help="also write the merged rows as CSV here")
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GcvaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
