"""Command-line surface: generate | train | eval | count | inspect-alpha | sweep.

Every command that takes --out writes its artifacts plus a run manifest
into that directory, refuses a non-empty directory unless --overwrite is
passed, and resolves relative dataset paths in configs against the config
file's own directory. Exit codes: 0 success, 1 usage/configuration error,
2 numerical failure (training aborted on non-finite values).
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import (
    DATA_KEYS,
    GENERATE_KEYS,
    RUN_KEYS,
    as_int,
    as_str,
    check_known_keys,
    format_config,
    load_config,
    network_config_from,
    network_config_to_mapping,
    save_config,
    train_config_from,
)
from .data import SyntheticSceneSpec, generate_dataset, load_dataset
from .errors import NumericalError, SgnetError, UsageError
from .evaluation import alpha_histogram, count_costs, evaluate_network
from .manifest import RunManifest
from .network import AGGREGATION_MODES, Network, NetworkConfig, build
from .sgt import load_checkpoint
from .training import train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(raw):
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="sgnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sgnet {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate", help="write a synthetic stick-figure dataset",
                       parents=[], add_help=True)
    p.add_argument("--config", help="key=value file with generate settings")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--num-samples", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--keypoints", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a network from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", help="optional report output directory")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="parameter and FLOP accounting for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="optional report output directory")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("inspect-alpha", help="dump gate values from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="optional output directory for CSVs")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_inspect_alpha)

    p = sub.add_parser("sweep", help="cost table over a (width, stacks) grid")
    p.add_argument("--widths", type=_int_list, default=[16, 32, 64, 128])
    p.add_argument("--stacks", type=_int_list, default=[1, 2, 4])
    p.add_argument("--input-size", type=int, default=256)
    p.add_argument("--keypoints", type=int, default=16)
    p.add_argument("--aggregation", choices=AGGREGATION_MODES, default="concat_conv")
    p.add_argument("--out", help="optional output directory")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def _prepare_out(path, overwrite):
    if os.path.isdir(path) and os.listdir(path) and not overwrite:
        raise UsageError(f"output directory {path!r} is not empty (pass --overwrite)")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path!r}: {exc}") from exc


def _resolve_data_path(value, config_path):
    if os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(config_path)), value))


def cmd_generate(args) -> int:
    mapping = load_config(args.config) if args.config else {}
    if args.config:
        check_known_keys(mapping, GENERATE_KEYS, source=args.config)

    def pick(flag, key, default):
        return flag if flag is not None else as_int(mapping, key, default, args.config or "<cli>")

    noise = args.noise
    if noise is None:
        noise = float(mapping.get("noise", 0.08))
    spec = SyntheticSceneSpec(
        num_samples=pick(args.num_samples, "num_samples", 100),
        image_size=pick(args.image_size, "image_size", 64),
        keypoints=pick(args.keypoints, "keypoints", 4),
        noise=noise,
        seed=pick(args.seed, "seed", 0),
    )
    _prepare_out(args.out, args.overwrite)
    manifest = RunManifest.begin("generate", spec.seed, args.out,
                                 config_path=args.config or "",
                                 config={"num_samples": spec.num_samples,
                                         "image_size": spec.image_size,
                                         "keypoints": spec.keypoints,
                                         "noise": spec.noise,
                                         "seed": spec.seed})
    try:
        generate_dataset(spec, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write dataset under {args.out!r}: {exc}") from exc
    manifest.finish().save(os.path.join(args.out, "run_manifest.json"))
    print(f"wrote {spec.num_samples} samples ({spec.image_size}px, K={spec.keypoints}) "
          f"to {args.out}")
    return 0


def cmd_train(args) -> int:
    mapping = load_config(args.config)
    check_known_keys(mapping, RUN_KEYS, source=args.config)
    net_cfg = network_config_from(mapping, source=args.config)
    train_cfg = train_config_from(mapping, source=args.config, seed_override=args.seed)
    train_dir = _resolve_data_path(as_str(mapping, "train_data", source=args.config),
                                   args.config)
    val_dir = _resolve_data_path(as_str(mapping, "val_data", source=args.config),
                                 args.config)
    train_data = load_dataset(train_dir)
    val_data = load_dataset(val_dir)

    _prepare_out(args.out, args.overwrite)
    manifest = RunManifest.begin("train", train_cfg.seed, args.out,
                                 config_path=args.config, config=dict(mapping))
    net = build(net_cfg, seed=train_cfg.seed)
    meta = {"network": network_config_to_mapping(net_cfg), "seed": train_cfg.seed}
    log = train(net, train_data, train_cfg, val_data,
                out_dir=args.out, log_fn=print, checkpoint_meta=meta)
    log.save(os.path.join(args.out, "training_log.csv"))
    resolved = dict(mapping)
    resolved.update(network_config_to_mapping(net_cfg))
    resolved["seed"] = str(train_cfg.seed)
    resolved["train_data"] = train_dir
    resolved["val_data"] = val_dir
    save_config(os.path.join(args.out, "config_resolved.cfg"), resolved)
    manifest.finish().save(os.path.join(args.out, "run_manifest.json"))
    print(f"final val_pckh {log.final_val_pckh!r}; artifacts in {args.out}")
    return 0


def _load_network(checkpoint_path):
    arrays, meta = load_checkpoint(checkpoint_path, with_meta=True)
    net_cfg = network_config_from(meta.get("network", {}), source="checkpoint meta")
    net = Network(net_cfg)
    net.load_state_arrays(arrays)
    return net, net_cfg


def cmd_eval(args) -> int:
    net, net_cfg = _load_network(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluate_network(net, dataset, batch_size=args.batch_size, tau=args.tau)
    sys.stdout.write(report.to_csv())
    if args.out:
        _prepare_out(args.out, args.overwrite)
        manifest = RunManifest.begin("eval", 0, args.out,
                                     config={"checkpoint": args.checkpoint,
                                             "data": args.data, "tau": args.tau})
        with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
            fh.write(report.to_csv())
        manifest.finish().save(os.path.join(args.out, "run_manifest.json"))
    return 0


def _cost_table(rows):
    """Aligned text table: params / stacks / FLOPs under both conventions / PCKh."""
    header = ("# parameters", "# stacks", "width", "FLOPs (MAC=1)", "FLOPs (MAC=2)", "PCKh")
    body = []
    for cfg, report in rows:
        body.append((
            f"{report.total_params:,}",
            str(cfg.stacks),
            str(cfg.width),
            f"{report.total_flops_mac1:.3e}",
            f"{report.total_flops_mac2:.3e}",
            "-",
        ))
    widths = [max(len(header[i]), *(len(row[i]) for row in body)) for i in range(len(header))]
    lines = ["  ".join(header[i].rjust(widths[i]) for i in range(len(header)))]
    for row in body:
        lines.append("  ".join(row[i].rjust(widths[i]) for i in range(len(header))))
    return "\n".join(lines) + "\n"


def cmd_count(args) -> int:
    mapping = load_config(args.config)
    check_known_keys(mapping, RUN_KEYS, source=args.config)
    net_cfg = network_config_from(mapping, source=args.config)
    report = count_costs(net_cfg, batch=args.batch)
    sys.stdout.write(_cost_table([(net_cfg, report)]))
    sys.stdout.write(report.to_csv())
    if args.out:
        _prepare_out(args.out, args.overwrite)
        manifest = RunManifest.begin("count", 0, args.out,
                                     config_path=args.config, config=dict(mapping))
        with open(os.path.join(args.out, "cost_report.csv"), "w") as fh:
            fh.write(report.to_csv())
        with open(os.path.join(args.out, "cost_table.txt"), "w") as fh:
            fh.write(_cost_table([(net_cfg, report)]))
        manifest.finish().save(os.path.join(args.out, "run_manifest.json"))
    return 0


def cmd_inspect_alpha(args) -> int:
    net, _ = _load_network(args.checkpoint)
    snapshot = net.alpha_snapshot()
    lines = ["block,mode,channel,value"]
    for entry in snapshot:
        for channel, value in enumerate(np.ravel(entry["values"])):
            lines.append(f"{entry['block']},{entry['mode']},{channel},{float(value)!r}")
    alpha_csv = "\n".join(lines) + "\n"
    values, hist_csv = alpha_histogram(net)
    near_zero = float(np.mean((values >= -0.1) & (values <= 0.1)))
    print(f"{values.size} gate values across {len(snapshot)} blocks; "
          f"{100 * near_zero:.1f}% within [-0.1, 0.1]")
    if args.out:
        _prepare_out(args.out, args.overwrite)
        manifest = RunManifest.begin("inspect-alpha", 0, args.out,
                                     config={"checkpoint": args.checkpoint})
        with open(os.path.join(args.out, "alpha.csv"), "w") as fh:
            fh.write(alpha_csv)
        with open(os.path.join(args.out, "alpha_histogram.csv"), "w") as fh:
            fh.write(hist_csv)
        manifest.finish().save(os.path.join(args.out, "run_manifest.json"))
    else:
        sys.stdout.write(alpha_csv)
    return 0


def cmd_sweep(args) -> int:
    rows = []
    for stacks in args.stacks:
        for width in args.widths:
            cfg = NetworkConfig(stacks=stacks, width=width, keypoints=args.keypoints,
                                input_size=args.input_size, aggregation=args.aggregation)
            rows.append((cfg, count_costs(cfg)))
    rows.sort(key=lambda item: item[1].total_params)
    table = _cost_table(rows)
    sys.stdout.write(table)
    if args.out:
        _prepare_out(args.out, args.overwrite)
        manifest = RunManifest.begin("sweep", 0, args.out,
                                     config={"widths": args.widths, "stacks": args.stacks,
                                             "input_size": args.input_size,
                                             "keypoints": args.keypoints,
                                             "aggregation": args.aggregation})
        with open(os.path.join(args.out, "sweep_table.txt"), "w") as fh:
            fh.write(table)
        lines = ["params,stacks,width,flops_mac1,flops_mac2"]
        for cfg, report in rows:
            lines.append(f"{report.total_params},{cfg.stacks},{cfg.width},"
                         f"{report.total_flops_mac1},{report.total_flops_mac2}")
        with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        manifest.finish().save(os.path.join(args.out, "run_manifest.json"))
    return 0


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError("missing command (try: sgnet --help)")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except SgnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
