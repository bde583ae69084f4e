"""Command line entry point: ``edgecache <command> [options]``.

Commands
--------
gen          generate, solve and encode instances into a directory
train        fit one classifier per flow row on a ``gen`` directory
solve        run one policy on a stored instance, print the outcome JSON
eval         compare all policies on fresh test sets, write CSV and table
export-milp  write the linearized model of an instance in LP format
render       write the feature image of an instance as PGM

Options may also come from a JSON file given with ``--config``; flags on
the command line win.  The seed falls back to ``$EDGECACHE_SEED``, then 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cnn, evalkit, policies
from .cost import DEFAULT_GAMMA
from .encoder import FeatureImage, encode
from .milp_export import export_milp
from .netmodel import Instance, dumps, generate_topology, load_instance

log = logging.getLogger("edgecache")

POLICY_CHOICES = ("benchmark", "pure-cnn", "cnn-rmilp", "cnn-hcls", "gca")
TABLE2_TOPOLOGY_SEED = 1


class CliError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _delta(text):
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"delta must lie in [0, 1), got {text}")
    return v


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with default option values")
    common.add_argument("--seed", type=int, help="random seed (default $EDGECACHE_SEED or 0)")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    weights = argparse.ArgumentParser(add_help=False)
    weights.add_argument("--alpha", type=_nonneg, help="caching cost weight (default 1)")
    weights.add_argument("--beta", type=_nonneg, help="transmission cost weight (default 1)")

    decode = argparse.ArgumentParser(add_help=False)
    decode.add_argument("--delta", type=_delta, help="probability threshold (default 0.001)")
    decode.add_argument("--gamma", type=_nonneg, help="penalty weight (default 100)")

    jobs = argparse.ArgumentParser(add_help=False)
    jobs.add_argument("--jobs", type=_positive_int, help="worker processes (default 1)")

    p = argparse.ArgumentParser(prog="edgecache", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common, weights], help="generate a labeled dataset")
    g.add_argument("--flows", type=_positive_int, help="flows per instance (default 5)")
    g.add_argument("--count", type=_positive_int, help="number of instances (default 64)")
    g.add_argument("--topology-seed", type=int,
                   help=f"seed of the network (default {TABLE2_TOPOLOGY_SEED})")

    t = sub.add_parser("train", parents=[common, jobs], help="train the classifiers")
    t.add_argument("--data", type=Path, required=True, help="directory written by gen")
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--batch-size", type=_positive_int)
    t.add_argument("--validation", type=int, help="instances held out for validation loss")

    s = sub.add_parser("solve", parents=[common, weights, decode],
                       help="run one policy on an instance")
    s.add_argument("instance", type=Path)
    s.add_argument("--policy", choices=POLICY_CHOICES)
    s.add_argument("--models", type=Path, help="model file written by train")

    e = sub.add_parser("eval", parents=[common, weights, decode, jobs],
                       help="compare the policies")
    e.add_argument("--models", type=Path, help="model file written by train")
    e.add_argument("--flows", type=_positive_int, nargs="+", help="flow counts (default 5)")
    e.add_argument("--count", type=_positive_int, help="test instances per flow count")
    e.add_argument("--policy", choices=POLICY_CHOICES, nargs="+", help="policies to run")
    e.add_argument("--topology-seed", type=int)

    m = sub.add_parser("export-milp", parents=[common], help="write the LP model")
    m.add_argument("instance", type=Path)
    m.add_argument("--mask", type=Path, help="JSON K x E 0/1 candidate mask")

    r = sub.add_parser("render", parents=[common], help="write the feature image as PGM")
    r.add_argument("instance", type=Path)
    return p


DEFAULTS = {
    "seed": None, "out": None, "alpha": None, "beta": None, "delta": policies.DEFAULT_DELTA,
    "gamma": DEFAULT_GAMMA, "jobs": 1, "flows": None, "count": None,
    "topology_seed": TABLE2_TOPOLOGY_SEED, "epochs": 30, "learning_rate": 1e-3,
    "batch_size": 64, "validation": 0, "policy": None, "models": None, "mask": None,
}


def resolve_config(args, environ=os.environ):
    """Merge defaults, the ``--config`` file and flags (in rising priority)."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(args.config.read_text())
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise CliError(f"config file {args.config} must hold a JSON object")
    out = {}
    for key, value in vars(args).items():
        if key in ("config", "verbose"):
            continue
        if value is None:
            value = cfg.get(key, DEFAULTS.get(key))
        out[key] = value
    if out.get("seed") is None:
        env = environ.get("EDGECACHE_SEED")
        try:
            out["seed"] = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise CliError(f"EDGECACHE_SEED must be an integer, got {env!r}") from exc
    for key in ("out", "data", "models", "mask", "instance"):
        if out.get(key) is not None:
            out[key] = Path(out[key])
    return out


def _log_config(cfg):
    log.info("config %s", json.dumps({k: str(v) if isinstance(v, Path) else v
                                      for k, v in sorted(cfg.items())}))


def _write(path, data):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read(path):
    try:
        return path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _instance(cfg):
    inst = load_instance(_read(cfg["instance"]))
    alpha = cfg["alpha"] if cfg.get("alpha") is not None else inst.alpha
    beta = cfg["beta"] if cfg.get("beta") is not None else inst.beta
    if (alpha, beta) != (inst.alpha, inst.beta):
        inst = Instance(inst.topology, inst.s, inst.b, inst.p, inst.w, inst.c, alpha, beta)
    return inst


def _weights(cfg):
    return (1.0 if cfg["alpha"] is None else cfg["alpha"],
            1.0 if cfg["beta"] is None else cfg["beta"])


def _models(cfg, required=True):
    if cfg.get("models") is None:
        if required:
            raise CliError("this policy needs --models (a file written by train)")
        return None
    try:
        return cnn.load_models(cfg["models"])
    except OSError as exc:
        raise CliError(f"cannot read {cfg['models']}: {exc.strerror or exc}") from exc


# -- commands --------------------------------------------------------------------

def cmd_gen(cfg):
    out = cfg["out"] or Path("data")
    flows = cfg["flows"] or 5
    count = cfg["count"] or 64
    topo = generate_topology(cfg["topology_seed"])
    insts, sols, skipped = evalkit.solved_instances(cfg["seed"], topo, flows, count,
                                                    *_weights(cfg))
    _write(out / "topology.json", dumps(topo) + "\n")
    for i, (inst, sol) in enumerate(zip(insts, sols)):
        _write(out / "instances" / f"{i:05d}.json", dumps(inst) + "\n")
        _write(out / "labels" / f"{i:05d}.json", json.dumps(sol.to_dict(), sort_keys=True) + "\n")
        _write(out / "images" / f"{i:05d}.json", encode(inst).to_json() + "\n")
    _write(out / "manifest.json", json.dumps({"count": count, "flows": flows, "seed": cfg["seed"],
                                              "topology_seed": cfg["topology_seed"],
                                              "resampled": skipped}, indent=1) + "\n")
    print(f"wrote {count} instances with {flows} flows to {out} ({skipped} resampled)")
    return 0


def _load_dataset(root):
    files = sorted((root / "instances").glob("*.json"))
    if not files:
        raise CliError(f"no instances under {root / 'instances'}; run gen first")
    insts, images, labels = [], [], []
    for f in files:
        insts.append(load_instance(_read(f)))
        images.append(FeatureImage.from_json(_read(root / "images" / f.name)))
        labels.append(json.loads(_read(root / "labels" / f.name))["x"])
    return cnn.LabeledDataset(images, np.array(labels), insts)


def cmd_train(cfg):
    data = _load_dataset(cfg["data"])
    if data.labels.shape[1] != 5:
        log.warning("training on %d-row images; the cascade expects 5", data.labels.shape[1])
    config = cnn.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                             learning_rate=cfg["learning_rate"], seed=cfg["seed"])
    n_val = int(cfg["validation"])
    if not 0 <= n_val < len(data):
        raise CliError(f"--validation must lie in [0, {len(data)})")
    order = np.random.default_rng(cfg["seed"]).permutation(len(data))
    train_set, val_set = data.subset(order[n_val:]), data.subset(order[:n_val])
    results = cnn.train_ensemble(train_set, config, val_set if n_val else None, cfg["jobs"])
    out = cfg["out"] or Path("models.json")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        cnn.save_models([r.model for r in results], out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror or exc}") from exc
    lines = ["flow,epoch,train_loss,val_loss"]
    for r in results:
        for i, tl in enumerate(r.train_loss):
            vl = repr(r.val_loss[i]) if i < len(r.val_loss) else ""
            lines.append(f"{r.flow_index},{i + 1},{tl!r},{vl}")
    _write(out.with_suffix(".loss.csv"), "\n".join(lines) + "\n")
    print(f"wrote {len(results)} models to {out}")
    return 0


def cmd_solve(cfg):
    inst = _instance(cfg)
    name = cfg["policy"] or "benchmark"
    needs_models = name not in ("benchmark", "gca")
    outcome = policies.run_policy(name, inst, _models(cfg, needs_models), cfg["delta"],
                                  cfg["gamma"])
    text = json.dumps(outcome.to_dict(), indent=1)
    if cfg["out"]:
        _write(cfg["out"], text + "\n")
    else:
        print(text)
    return 0


def cmd_eval(cfg):
    topo = generate_topology(cfg["topology_seed"])
    alpha, beta = _weights(cfg)
    names = tuple(cfg["policy"] or POLICY_CHOICES)
    models = _models(cfg, required=any(n not in ("benchmark", "gca") for n in names))
    reports = evalkit.run_comparison(
        cfg["seed"], topo, models, flows_list=cfg["flows"] or [5],
        count=cfg["count"] or evalkit.DESK_TEST_SIZE, names=names, delta=cfg["delta"],
        gamma=cfg["gamma"], jobs=cfg["jobs"], alpha=alpha, beta=beta)
    table = evalkit.render_table(reports)
    out = cfg["out"] or Path("results")
    _write(out / "comparison.csv", evalkit.to_csv(reports))
    _write(out / "comparison.txt", table)
    print(table, end="")
    bad = [r.num_flows for r in reports if r.policy == "benchmark" and r.feasible_ratio < 1]
    if bad:
        print(f"benchmark feasible ratio below 100% for |K| = {bad}", file=sys.stderr)
        return 1
    return 0


def cmd_export_milp(cfg):
    inst = _instance(cfg)
    mask = None
    if cfg.get("mask") is not None:
        mask = np.array(json.loads(_read(cfg["mask"])))
    text = export_milp(inst, mask=mask)
    if cfg["out"]:
        _write(cfg["out"], text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_render(cfg):
    inst = _instance(cfg)
    out = cfg["out"] or cfg["instance"].with_suffix(".pgm")
    _write(out, encode(inst).to_pgm())
    print(f"wrote {out}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "solve": cmd_solve, "eval": cmd_eval,
            "export-milp": cmd_export_milp, "render": cmd_render}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        _log_config(cfg)
        return COMMANDS[args.command](cfg)
    except (CliError, ValueError) as exc:
        print(f"edgecache {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
