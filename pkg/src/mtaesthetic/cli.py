"""Command-line interface: ``mtaesthetic {gen,train,eval,analyze,gradcheck}``.

Every option can also be given in a flat ``key=value`` file passed with
``--config``. Precedence, lowest first: built-in default, config file,
command-line flag. Keys unknown to the command are rejected.

Exit codes: 0 success, 2 configuration or data error, 3 training abort,
4 checkpoint/dataset incompatibility, 5 gradient check failure.
"""
import argparse
from dataclasses import dataclass
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, analysis, network, training
from .config import parse_bool, parse_kv_file
from .data import DatasetManifest, SyntheticSpec, generate_synthetic, ingest, labeled, make_split, persist
from .data.augment import crop_batch
from .errors import (
    CheckpointError,
    ConfigError,
    InputError,
    MTAestheticError,
    NumericalError,
)

EXIT_GRADCHECK = 5

log = logging.getLogger("mtaesthetic")


def _floats(text):
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none", "epoch") else int(text)


@dataclass(frozen=True)
class Opt:
    key: str
    type: object
    default: object
    help: str
    choices: tuple = None

    @property
    def flag(self):
        return "--" + self.key.replace("_", "-")

    def convert(self, raw, source):
        if raw is None or not isinstance(raw, str):
            return raw
        try:
            value = parse_bool(raw) if self.type is bool else self.type(raw)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{source}: bad value for {self.key}: {exc}") from None
        if self.choices and value not in self.choices:
            raise ConfigError(f"{source}: {self.key} must be one of {self.choices}, got {value!r}")
        return value


GEN_OPTS = (
    Opt("out", str, None, "output directory for the dataset files"),
    Opt("n", int, 5000, "number of records"),
    Opt("m", int, 8, "number of semantic attributes"),
    Opt("image_size", int, 20, "stored image side in pixels"),
    Opt("crop_size", int, 16, "network input side the codes must survive"),
    Opt("plan", _floats, None, "comma list of P(high | attribute); default cycles 0.9,0.1,0.85,0.15,0.7,0.3,0.5,0.5"),
    Opt("noise", float, SyntheticSpec.noise, "per-pixel Gaussian noise"),
    Opt("cue_strength", float, SyntheticSpec.cue_strength, "strength of the global aesthetic cue"),
    Opt("patch", int, None, "attribute patch side (default 3 * image_size // 10)"),
    Opt("jitter", float, SyntheticSpec.jitter, "appearance variation of attribute patches, in [0, 1]"),
    Opt("two_tag_fraction", float, 0.0, "fraction of records with a second tag"),
    Opt("attributes", _names, None, "comma list of attribute names (default attr00, attr01, ...)"),
    Opt("midpoint", float, 5.0, "score midpoint"),
    Opt("delta", float, 0.0, "training label margin written to the manifest"),
    Opt("split_seed", int, 0, "seed of the train/test partition"),
    Opt("split_fractions", _floats, (0.8, 0.2), "train,test fractions"),
    Opt("seed", int, 0, "generator seed"),
)

TRAIN_OPTS = (
    Opt("data", str, None, "dataset manifest"),
    Opt("out", str, None, "output directory"),
    Opt("variant", str, "mtcnn1", "architecture variant", network.VARIANTS),
    Opt("scale", str, "small", "architecture size preset", network.SCALES),
    Opt("lambda_mode", str, "strategy", "semantic weight policy: strategy is 1/M (2/M for enhanced)",
        ("strategy", "zero", "one-over-m", "two-over-m", "one", "early-stop", "fixed")),
    Opt("lam", float, None, "semantic weight for lambda_mode=fixed"),
    Opt("mu", float, None, "prior mean of lambda (default 1/M)"),
    Opt("patience", int, 2, "early-stop patience in epochs"),
    Opt("delta", float, None, "training label margin (default: the manifest's)"),
    Opt("relationship", bool, False, "learn the task covariance"),
    Opt("include_aux", bool, False, "also cover the auxiliary head with the covariance (enhanced only)"),
    Opt("omega_every", _opt_int, None, "covariance update interval in steps (default: once per epoch)"),
    Opt("omega_ridge", float, training.TrainConfig.omega_ridge, "covariance ridge, relative to mean squared column norm of W"),
    Opt("epochs", int, 20, "training epochs"),
    Opt("lr", float, 0.02, "initial learning rate"),
    Opt("lr_decay", float, 0.1, "step decay factor"),
    Opt("lr_decay_every", int, 0, "epochs between decays (0: two thirds of the run, once)"),
    Opt("momentum", float, 0.9, "SGD momentum"),
    Opt("batch_size", int, 64, "minibatch size"),
    Opt("gamma_theta", float, 1e-4, "L2 weight on the shared trunk"),
    Opt("gamma_w", float, 1e-4, "L2 weight on the heads"),
    Opt("gamma_omega", float, 1e-3, "weight of the covariance penalty"),
    Opt("seed", int, 0, "seed for initialization and batch order"),
    Opt("finetune", str, None, "checkpoint to finetune on aesthetic labels only"),
    Opt("train_limit", int, 0, "use only the first K training records (0: all)"),
    Opt("log_every", int, 10, "steps between rows of losses.csv"),
)

EVAL_OPTS = (
    Opt("checkpoint", str, None, "checkpoint file"),
    Opt("data", str, None, "dataset manifest"),
    Opt("split", str, "test", "records to score", ("test", "train", "all")),
    Opt("out", str, None, "also write the metrics to this file"),
)

ANALYZE_OPTS = (
    Opt("omega", str, None, "square covariance CSV with a header of subtask names"),
    Opt("out", str, None, "correlation CSV path (default: correlation.csv next to the input)"),
    Opt("top_k", int, 5, "pairs listed per sign"),
)

GRADCHECK_OPTS = (
    Opt("variants", _names, network.VARIANTS, "comma list of variants"),
    Opt("relationship", str, "both", "covariance term setting", ("on", "off", "both")),
    Opt("scale", str, "desk", "architecture size preset", network.SCALES),
    Opt("m", int, 8, "number of attributes"),
    Opt("batch", int, 2, "samples per check (at most 4)"),
    Opt("coords", int, 16, "coordinates probed per tensor"),
    Opt("tol", float, 1e-4, "pass threshold on max relative error"),
    Opt("seed", int, 0, "seed"),
)

COMMANDS = {
    "gen": (GEN_OPTS, "generate a synthetic dataset with planted correlations"),
    "train": (TRAIN_OPTS, "train (or finetune) a network"),
    "eval": (EVAL_OPTS, "score a checkpoint on a dataset"),
    "analyze": (ANALYZE_OPTS, "correlations from a learned task covariance"),
    "gradcheck": (GRADCHECK_OPTS, "finite-difference check of all gradients"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mtaesthetic", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (opts, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value file; flags override its keys")
        for o in opts:
            text = f"{o.help} (default: {o.default if not isinstance(o.default, tuple) else ','.join(map(str, o.default))})"
            if o.type is bool:
                p.add_argument(o.flag, dest=o.key, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=text)
            else:
                p.add_argument(o.flag, dest=o.key, default=argparse.SUPPRESS, choices=o.choices,
                               type=str if o.choices is None else o.type, metavar=o.key.upper(), help=text)
    return parser


def resolve(opts, args):
    """Merge defaults, the config file and flags into one settings dict."""
    values = {o.key: o.default for o in opts}
    table = {o.key: o for o in opts}
    path = getattr(args, "config", None)
    if path:
        from_file = parse_kv_file(path)
        unknown = sorted(set(from_file) - set(table))
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) {unknown}")
        for k, raw in from_file.items():
            values[k] = table[k].convert(raw, path)
    for k in table:
        if k in vars(args):
            values[k] = table[k].convert(vars(args)[k], "command line")
    return values


def _require(values, *keys):
    missing = [k for k in keys if values.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


# -- gen ---------------------------------------------------------------------


def cmd_gen(v, out=sys.stdout):
    _require(v, "out")
    spec = SyntheticSpec(
        n=v["n"], m=v["m"], image_size=v["image_size"], crop_size=v["crop_size"], plan=v["plan"],
        noise=v["noise"], cue_strength=v["cue_strength"], two_tag_fraction=v["two_tag_fraction"],
        midpoint=v["midpoint"], seed=v["seed"], attribute_names=v["attributes"],
        patch=v["patch"], jitter=v["jitter"],
    )
    dataset, truth = generate_synthetic(spec)
    path = persist(dataset, v["out"], plan=truth.plan, midpoint=v["midpoint"], delta=v["delta"],
                   split_seed=v["split_seed"], split_fractions=tuple(v["split_fractions"]))
    high = int(np.sum(dataset.scores > v["midpoint"]))
    low = int(np.sum(dataset.scores < v["midpoint"]))
    print(f"wrote {path}", file=out)
    print(f"N={len(dataset)} M={dataset.n_attributes} high={high} low={low} "
          f"discarded_at_midpoint={len(dataset) - high - low}", file=out)
    return 0


# -- train -------------------------------------------------------------------


def policy_from(v, m):
    mode = v["lambda_mode"]
    if mode == "fixed":
        if v["lam"] is None:
            raise ConfigError("lambda_mode=fixed needs --lam")
        return training.BalancePolicy("fixed_lambda", v["lam"], v["mu"], v["patience"])
    if v["lam"] is not None:
        raise ConfigError("--lam is only used with lambda_mode=fixed")
    table = {
        "strategy": ("fixed_lambda", None),
        "zero": ("none", None),
        "one-over-m": ("fixed_lambda", 1.0 / m),
        "two-over-m": ("fixed_lambda", 2.0 / m),
        "one": ("equal", None),
        "early-stop": ("early_stop", None),
    }
    kind, lam = table[mode]
    return training.BalancePolicy(kind, lam, v["mu"], v["patience"])


def load_split(manifest_path, delta=None):
    man = DatasetManifest.load(manifest_path)
    dataset = ingest(man)
    d = man.delta if delta is None else delta
    train_set, test_set = make_split(dataset, man.midpoint, d, man.split_seed, man.split_fractions)
    return man, dataset, train_set, test_set


def cmd_train(v, out=sys.stdout):
    _require(v, "data", "out")
    man, dataset, train_set, test_set = load_split(v["data"], v["delta"])
    if v["train_limit"]:
        train_set = train_set.subset(np.arange(min(v["train_limit"], len(train_set))))
    m = dataset.n_attributes
    if v["finetune"]:
        arch = network.read_checkpoint(v["finetune"])[0]
    else:
        arch = network.ArchitectureConfig.preset(v["variant"], v["scale"], 2, m)
    if arch.input_shape[0] > dataset.image_shape[0] or arch.input_shape[1] > dataset.image_shape[1]:
        raise ConfigError(
            f"{arch.input_shape[:2]} network input is larger than the {dataset.image_shape[:2]} images"
        )
    epochs = v["epochs"]
    cfg = training.TrainConfig(
        architecture=arch,
        policy=policy_from(v, m),
        relationship=v["relationship"],
        omega_include_aux=v["include_aux"],
        omega_every=v["omega_every"],
        omega_ridge=v["omega_ridge"],
        lr=v["lr"],
        lr_decay=v["lr_decay"],
        lr_decay_every=v["lr_decay_every"] or max(1, (2 * epochs) // 3),
        momentum=v["momentum"],
        batch_size=v["batch_size"],
        epochs=epochs,
        gamma_theta=v["gamma_theta"],
        gamma_w=v["gamma_w"],
        gamma_omega=v["gamma_omega"],
        seed=v["seed"],
        log_every=v["log_every"],
    )
    os.makedirs(v["out"], exist_ok=True)
    if v["finetune"]:
        result = training.finetune(v["finetune"], train_set.without_semantics(), cfg, test_set)
    else:
        result = training.train(cfg, train_set, test_set)
    result.report.attributes = tuple(dataset.attributes)
    rep = result.report
    network.save_checkpoint(os.path.join(v["out"], "checkpoint.mtc"), arch, result.params,
                            {"input_mean": [float(x) for x in result.input_mean],
                             "attributes": list(dataset.attributes)})
    rep.write_csv(os.path.join(v["out"], "report.csv"))
    rep.write_loss_csv(os.path.join(v["out"], "losses.csv"))
    if rep.omega is not None:
        training.write_square_csv(os.path.join(v["out"], "omega.csv"), rep.subtasks, rep.omega)
        training.write_square_csv(os.path.join(v["out"], "correlation.csv"), rep.subtasks, rep.correlation)
        rep.write_omega_log(os.path.join(v["out"], "omega_updates.csv"))
    last = rep.rows[-1] if rep.rows else {}
    print(f"trained {arch.variant} for {epochs} epochs on {len(train_set)} records; lambda={last.get('lambda', 0.0)!r}", file=out)
    if "eval_accuracy" in last:
        print(f"test accuracy {last['eval_accuracy']:.4f} on {len(test_set)} records", file=out)
    if rep.frozen_epoch is not None:
        print(f"semantic task frozen after epoch {rep.frozen_epoch}", file=out)
    print(f"artifacts in {v['out']}", file=out)
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(v, out=sys.stdout):
    _require(v, "checkpoint", "data")
    graph, params, meta = network.load_checkpoint(v["checkpoint"])
    man = DatasetManifest.load(v["data"])
    dataset = ingest(man)
    arch = graph.config
    names = meta.get("attributes")
    if dataset.n_attributes != arch.n_attributes or (names and tuple(names) != dataset.attributes):
        raise CheckpointError(
            f"checkpoint was trained on attributes {names or arch.n_attributes} but the dataset has "
            f"{list(dataset.attributes)}"
        )
    if arch.input_shape[0] > dataset.image_shape[0] or arch.input_shape[1] > dataset.image_shape[1]:
        raise CheckpointError(f"checkpoint input {arch.input_shape[:2]} exceeds images {dataset.image_shape[:2]}")
    if "input_mean" not in meta:
        raise CheckpointError("checkpoint carries no input mean")
    if v["split"] == "all":
        part = labeled(dataset, np.arange(len(dataset)), man.midpoint, 0.0)
    else:
        train_set, test_set = make_split(dataset, man.midpoint, man.delta, man.split_seed, man.split_fractions)
        part = test_set if v["split"] == "test" else train_set
    metrics = training.evaluate(graph, params, part, np.asarray(meta["input_mean"]))
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    out.write(text)
    if v["out"]:
        with open(v["out"], "w") as fh:
            fh.write(text)
    return 0


# -- analyze -----------------------------------------------------------------


def cmd_analyze(v, out=sys.stdout):
    _require(v, "omega")
    names, omega = training.read_square_csv(v["omega"])
    try:
        corr = analysis.correlation_from_covariance(omega)
    except NumericalError as exc:
        raise InputError(f"{v['omega']}: {exc}") from None
    dest = v["out"] or os.path.join(os.path.dirname(os.path.abspath(v["omega"])), "correlation.csv")
    training.write_square_csv(dest, names, corr)
    positive, negative = analysis.ranked_pairs(names, corr, v["top_k"])
    print(f"wrote {dest}", file=out)
    print("most positive:", file=out)
    for a, b, c in positive:
        print(f"  {a} ~ {b}: {c:+.4f}", file=out)
    print("most negative:", file=out)
    for a, b, c in negative:
        print(f"  {a} ~ {b}: {c:+.4f}", file=out)
    return 0


# -- gradcheck ---------------------------------------------------------------


def cmd_gradcheck(v, out=sys.stdout, grad_hook=None):
    rng = np.random.default_rng(v["seed"])
    settings = {"on": (True,), "off": (False,), "both": (False, True)}[v["relationship"]]
    if not 1 <= v["batch"] <= 4:
        raise ConfigError("gradcheck batch must hold 1 to 4 samples")
    failures = []
    start = time.perf_counter()
    for variant in v["variants"]:
        arch = network.ArchitectureConfig.preset(variant, v["scale"], 2, v["m"])
        images = rng.integers(0, 256, size=(v["batch"], *arch.input_shape)).astype(np.uint8)
        x = crop_batch(images, arch.input_shape[:2], None, np.full(3, 0.5))
        y = rng.integers(0, 2, size=v["batch"])
        z = (rng.random((v["batch"], v["m"])) < 0.3).astype(np.float64)
        for rel in settings:
            rep = training.gradient_check(arch, (x, y, z), relationship=rel, seed=v["seed"],
                                          coords=v["coords"], grad_hook=grad_hook)
            ok = rep.passed(v["tol"])
            print(f"{variant:9s} relationship={'on ' if rel else 'off'} max_rel_err={rep.max_error:.3e} "
                  f"worst={rep.worst} checked={rep.n_checked} {'PASS' if ok else 'FAIL'}", file=out)
            if not ok:
                failures.append((variant, rel, rep))
    print(f"elapsed {time.perf_counter() - start:.1f}s", file=out)
    if failures:
        worst = max(failures, key=lambda f: f[2].max_error)
        print(f"gradient check failed in {len(failures)} configuration(s); worst parameter "
              f"{worst[2].worst} ({worst[0]}, relationship={'on' if worst[1] else 'off'}) "
              f"with relative error {worst[2].max_error:.3e}", file=sys.stderr)
        return EXIT_GRADCHECK
    return 0


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
            "gradcheck": cmd_gradcheck}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve(COMMANDS[args.command][0], args)
        return HANDLERS[args.command](values, out=sys.stdout)
    except MTAestheticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
