"""SGD training with alternating task-covariance updates.

One run alternates two blocks:

1. momentum SGD on all network weights with the task covariance fixed;
2. the closed-form covariance update from the current task matrix
   (every ``omega_every`` steps, by default once per epoch).

The covariance starts at ``I / (C + M)``.
"""
from dataclasses import dataclass, field, replace
import csv
import logging

import numpy as np

from . import network
from .data.augment import channel_mean, crop_batch
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateSubtaskError,
    InputError,
    NumericalError,
    TrainingAborted,
)
from .linalg import covariance_to_correlation, psd_sqrt, sym_inverse
from .objectives import BREAKDOWN_FIELDS, LossBreakdown, LossWeights, total_loss

log = logging.getLogger(__name__)

POLICY_MODES = ("fixed_lambda", "equal", "none", "early_stop")


@dataclass(frozen=True)
class BalancePolicy:
    """How the semantic-loss weight lambda is set over a run.

    ``fixed_lambda`` with ``lam=None`` uses 1/M (2/M for the enhanced
    variant). ``early_stop`` trains with lambda = 1 until the semantic loss
    plateaus, then with lambda = 0.
    """

    mode: str = "fixed_lambda"
    lam: float = None
    mu: float = None
    patience: int = 2
    rel_tol: float = 1e-3

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ConfigError(f"unknown balance mode {self.mode!r}; choose from {POLICY_MODES}")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.patience < 1:
            raise ConfigError("early-stop patience must be at least 1")

    def initial_lambda(self, m, variant="mtcnn1"):
        if self.mode == "none":
            return 0.0
        if self.mode in ("equal", "early_stop"):
            return 1.0
        if self.lam is not None:
            return float(self.lam)
        return (2.0 if variant == "enhanced" else 1.0) / m

    def prior_mean(self, m):
        return 1.0 / m if self.mu is None else float(self.mu)


@dataclass(frozen=True)
class TrainConfig:
    architecture: network.ArchitectureConfig
    policy: BalancePolicy = BalancePolicy()
    relationship: bool = False
    omega_include_aux: bool = False
    omega_every: int = None
    omega_ridge: float = 1e-2  # relative to the mean squared column norm of W
    lr: float = 0.01
    lr_decay: float = 0.1
    lr_decay_every: int = 0
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 10
    gamma_theta: float = 1e-4
    gamma_w: float = 1e-4
    gamma_omega: float = 1e-3
    seed: int = 0
    mask_semantic: bool = False
    log_every: int = 10

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr and batch_size must be positive, epochs nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.omega_every is not None and self.omega_every < 1:
            raise ConfigError("omega update interval must be at least 1 step")
        if min(self.gamma_theta, self.gamma_w, self.gamma_omega, self.omega_ridge) < 0:
            raise ConfigError("regularization weights must be nonnegative")
        if self.omega_include_aux and self.architecture.variant != "enhanced":
            raise ConfigError("omega_include_aux needs the enhanced variant")

    def learning_rate(self, epoch):
        if self.lr_decay_every <= 0:
            return self.lr
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


# -- task covariance ---------------------------------------------------------


@dataclass(frozen=True)
class TaskCovariance:
    """Unit-trace PSD covariance over subtasks, with its estimation ridge."""

    omega: np.ndarray
    ridge: float = 0.0

    @classmethod
    def uniform(cls, k):
        return cls(np.eye(k) / k)

    @property
    def order(self):
        return self.omega.shape[0]

    def inverse(self):
        return sym_inverse(self.omega)

    def correlation(self):
        return covariance_to_correlation(self.omega)


def update_omega(w, ridge=0.0):
    """Closed-form covariance for a fixed task matrix ``w`` (d x K).

    Minimizes ``trace(W Omega^-1 W^T)`` over unit-trace PSD ``Omega``; the
    minimizer is ``(W^T W)^{1/2}`` scaled to unit trace.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or not np.all(np.isfinite(w)):
        raise InputError("task matrix must be a finite 2-D array")
    if not np.any(w):
        raise DegenerateSubtaskError(-1, 0.0) from None
    gram = w.T @ w
    gram = 0.5 * (gram + gram.T) + ridge * np.eye(gram.shape[0])
    root = psd_sqrt(gram)
    return TaskCovariance(root / np.trace(root), ridge)


def omega_objective(w, omega, ridge=0.0):
    """Covariance subproblem ``trace((W^T W + ridge I) Omega^-1)``.

    With ``ridge = 0`` this is the relationship penalty itself; with a ridge
    it is the objective :func:`update_omega` minimizes exactly.
    """
    gram = np.asarray(w).T @ np.asarray(w) + ridge * np.eye(np.asarray(w).shape[1])
    return float(np.sum(gram * sym_inverse(omega, 0.0)))


def relative_ridge(w, scale):
    """``scale`` times the mean squared column norm of ``w``."""
    w = np.asarray(w)
    return scale * float(np.sum(w * w)) / w.shape[1]


def subtask_names(n_classes, attributes, include_aux=False):
    if n_classes == 2:
        aes = ["aesthetic_low", "aesthetic_high"]
    else:
        aes = [f"aesthetic_c{i}" for i in range(n_classes)]
    names = (["aux_" + a for a in aes] if include_aux else []) + aes
    return names + list(attributes)


# -- early stopping ----------------------------------------------------------

CONTINUE, FREEZE = "continue", "freeze"


def early_stop_monitor(history, patience, rel_tol=1e-3):
    """Freeze the semantic task once its loss stops improving.

    Freezes when the relative drop over the last ``patience`` epochs is
    below ``rel_tol``.
    """
    if not len(history):
        raise InputError("early-stop monitor needs at least one loss value")
    if len(history) <= patience:
        return CONTINUE
    ref, now = history[-1 - patience], history[-1]
    improvement = (ref - now) / max(abs(ref), 1e-300)
    return FREEZE if improvement < rel_tol else CONTINUE


# -- metrics -----------------------------------------------------------------


def average_precision(scores, labels):
    """Non-interpolated AP; NaN when there are no positives."""
    labels = np.asarray(labels).astype(bool)
    n_pos = labels.sum()
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-np.asarray(scores), kind="stable")
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].sum() / n_pos)


def predict(graph, params, images, input_mean, batch_size=256):
    """Center-crop logits for a uint8 image stack."""
    crop_hw = graph.config.input_shape[:2]
    out = {"aesthetic": [], "semantic": []}
    for start in range(0, len(images), batch_size):
        x = crop_batch(images[start : start + batch_size], crop_hw, None, input_mean)
        tr = network.forward(graph, params, x)
        out["aesthetic"].append(tr.aesthetic)
        out["semantic"].append(tr.semantic)
    return {k: np.concatenate(v) if v else np.empty((0, 0)) for k, v in out.items()}


def evaluate(graph, params, data, input_mean, batch_size=256):
    """Aesthetic accuracy overall and per tag, plus semantic average precision."""
    if len(data) == 0:
        raise InputError("cannot evaluate on an empty set")
    logits = predict(graph, params, data.images, input_mean, batch_size)
    pred = logits["aesthetic"].argmax(axis=1)
    correct = pred == data.y
    result = {"n": int(len(data)), "accuracy": float(correct.mean()), "per_attribute": {}, "semantic_ap": {}}
    if data.z is not None:
        if data.z.shape[1] != graph.config.n_attributes:
            raise InputError("dataset attribute count does not match the network")
        for j, name in enumerate(data.attributes):
            has = data.z[:, j] == 1
            result["per_attribute"][name] = {
                "count": int(has.sum()),
                "accuracy": float(correct[has].mean()) if has.any() else float("nan"),
            }
            result["semantic_ap"][name] = average_precision(logits["semantic"][:, j], data.z[:, j])
        aps = [v for v in result["semantic_ap"].values() if not np.isnan(v)]
        result["mean_ap"] = float(np.mean(aps)) if aps else float("nan")
    return result


# -- report ------------------------------------------------------------------


@dataclass
class TrainReport:
    attributes: tuple
    rows: list = field(default_factory=list)
    loss_rows: list = field(default_factory=list)
    omega_log: list = field(default_factory=list)
    omega: np.ndarray = None
    correlation: np.ndarray = None
    subtasks: list = None
    frozen_epoch: int = None

    def columns(self):
        cols = ["epoch", "lambda", "lr", *BREAKDOWN_FIELDS, "train_accuracy", "train_mean_ap"]
        cols += [f"ap_{a}" for a in self.attributes]
        if self.rows and "eval_accuracy" in self.rows[0]:
            cols += ["eval_accuracy", "eval_mean_ap"]
        return cols

    def write_csv(self, path):
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(cols)
            for row in self.rows:
                out.writerow([_fmt(row.get(c, "")) for c in cols])

    def write_loss_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["step", "epoch", "lambda", *BREAKDOWN_FIELDS])
            for row in self.loss_rows:
                out.writerow([_fmt(v) for v in row])

    def write_omega_log(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["step", "objective_before", "objective_after"])
            for row in self.omega_log:
                out.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_square_csv(path, names, matrix):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(names)
        for row in np.asarray(matrix):
            out.writerow([repr(float(v)) for v in row])


def read_square_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise InputError(f"{path}: expected a header row and at least one matrix row")
    names = [n.strip() for n in rows[0]]
    try:
        mat = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if mat.ndim != 2 or mat.shape != (len(names), len(names)):
        raise InputError(f"{path}: matrix is not square with {len(names)} named columns")
    return names, mat


# -- training loop -----------------------------------------------------------


@dataclass
class TrainResult:
    graph: network.LayerGraph
    params: network.ParamStore
    report: TrainReport
    input_mean: np.ndarray
    covariance: TaskCovariance = None

    def meta(self):
        return {"input_mean": [float(v) for v in self.input_mean],
                "attributes": list(self.report.attributes)}

    def save(self, path):
        network.save_checkpoint(path, self.graph.config, self.params, self.meta())


def _sgd_update(params, velocity, extra_grads, lr, momentum):
    for name, p in params.params.items():
        g = params.grads[name] + extra_grads[name]
        v = velocity[name]
        v *= momentum
        v -= lr * g
        p += v


def train(config, train_set, eval_set=None, init=None):
    """Train a network; returns a :class:`TrainResult`.

    Parameters
    ----------
    config : TrainConfig
    train_set, eval_set : LabeledSet
        ``eval_set`` is scored (center crops) after every epoch if given.
    init : (graph, params, input_mean) or None
        Start from these weights instead of a fresh draw. ``input_mean=None``
        recomputes the channel mean on ``train_set``.
    """
    arch = config.architecture
    if len(train_set) == 0:
        raise InputError("training set is empty")
    z_all = None if config.mask_semantic else train_set.z
    if z_all is not None and z_all.shape[1] != arch.n_attributes:
        raise InputError(
            f"dataset has {z_all.shape[1]} semantic attributes but the network expects {arch.n_attributes}"
        )
    if train_set.y.min() < 0 or train_set.y.max() >= arch.n_classes:
        raise InputError("aesthetic labels out of range for the network")

    if init is None:
        graph, params = network.build(arch, config.seed)
        input_mean = channel_mean(train_set.images)
    else:
        graph, params, input_mean = init
        params = params.copy()
        if input_mean is None:
            input_mean = channel_mean(train_set.images)
    input_mean = np.asarray(input_mean, dtype=np.float64)

    m = arch.n_attributes
    lam = config.policy.initial_lambda(m, arch.variant)
    if config.mask_semantic:
        lam = 0.0
    mu = config.policy.prior_mean(m)
    attrs = tuple(train_set.attributes) if train_set.z is not None else tuple(f"attr{i:02d}" for i in range(m))
    report = TrainReport(attributes=attrs)
    names = subtask_names(arch.n_classes, attrs, config.omega_include_aux)

    cov = omega_inv = None
    if config.relationship:
        cov = TaskCovariance.uniform(len(names))
        omega_inv = cov.inverse()

    rng = np.random.default_rng([config.seed, 1])
    velocity = {k: np.zeros_like(v) for k, v in params.params.items()}
    crop_hw = arch.input_shape[:2]
    n = len(train_set)
    steps_per_epoch = -(-n // config.batch_size)
    omega_every = config.omega_every or steps_per_epoch
    sem_history = []
    frozen = False
    step = 0

    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        order = rng.permutation(n)
        breakdowns, weights_seen = [], []
        aes_logits, sem_logits, ys = [], [], []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = crop_batch(train_set.images[idx], crop_hw, rng, input_mean)
            y = train_set.y[idx]
            z = None if z_all is None else z_all[idx]
            weights = LossWeights(lam, mu, config.gamma_theta, config.gamma_w, config.gamma_omega)
            try:
                trace = network.forward(graph, params, x)
                bd, ograds, rgrads = total_loss(
                    trace, y, z, params, weights, omega_inv, config.relationship, config.omega_include_aux
                )
            except NumericalError as exc:
                raise TrainingAborted(f"step {step} (epoch {epoch}): {exc}") from exc
            if not np.isfinite(bd.total):
                raise TrainingAborted(f"non-finite loss {bd.total} at step {step} (epoch {epoch})")
            network.backward(graph, params, trace, ograds)
            _sgd_update(params, velocity, rgrads, lr, config.momentum)
            step += 1
            breakdowns.append(bd)
            aes_logits.append(trace.aesthetic)
            sem_logits.append(trace.semantic)
            ys.append(y)
            if config.log_every and step % config.log_every == 0:
                report.loss_rows.append([step, epoch, lam, *bd.as_row()])
            if config.relationship and step % omega_every == 0:
                w = params.task_matrix(config.omega_include_aux)
                ridge = relative_ridge(w, config.omega_ridge)
                try:
                    before = omega_objective(w, cov.omega, ridge)
                    cov = update_omega(w, ridge)
                    after = omega_objective(w, cov.omega, ridge)
                except NumericalError as exc:
                    raise TrainingAborted(f"covariance update at step {step}: {exc}") from exc
                omega_inv = cov.inverse()
                report.omega_log.append((step, before, after))

        mean_bd = LossBreakdown.mean(breakdowns)
        y_ep = np.concatenate(ys)
        row = {"epoch": epoch, "lambda": lam, "lr": lr, **mean_bd.to_dict()}
        row["train_accuracy"] = float((np.concatenate(aes_logits).argmax(axis=1) == y_ep).mean())
        if z_all is not None:
            z_ep = z_all[order]
            s_ep = np.concatenate(sem_logits)
            aps = [average_precision(s_ep[:, j], z_ep[:, j]) for j in range(m)]
            for a, ap in zip(attrs, aps):
                row[f"ap_{a}"] = ap
            valid = [a for a in aps if not np.isnan(a)]
            row["train_mean_ap"] = float(np.mean(valid)) if valid else float("nan")
        if eval_set is not None:
            ev = evaluate(graph, params, eval_set, input_mean)
            row["eval_accuracy"] = ev["accuracy"]
            row["eval_mean_ap"] = ev.get("mean_ap", float("nan"))
        report.rows.append(row)
        log.info("epoch %d lambda %.4g loss %.4f acc %.4f", epoch, lam, mean_bd.total, row["train_accuracy"])

        if config.policy.mode == "early_stop" and not frozen and z_all is not None:
            sem_history.append(mean_bd.semantic_bce)
            if early_stop_monitor(sem_history, config.policy.patience, config.policy.rel_tol) == FREEZE:
                frozen = True
                report.frozen_epoch = epoch
                lam = 0.0

    if cov is not None:
        report.omega = cov.omega
        report.correlation = cov.correlation()
        report.subtasks = names
    return TrainResult(graph, params, report, input_mean, cov)


def finetune(checkpoint, train_set, config, eval_set=None):
    """Continue training a checkpoint on aesthetic labels only.

    ``checkpoint`` is a path or a :class:`TrainResult`. The semantic loss is
    masked, so the semantic head moves only under weight decay. The
    checkpoint's input mean is kept so the pretrained filters see inputs on
    the scale they were fit to.
    """
    if isinstance(checkpoint, TrainResult):
        src_graph, src_params, mean = checkpoint.graph, checkpoint.params, checkpoint.input_mean
    else:
        src_graph, src_params, meta = network.load_checkpoint(checkpoint)
        mean = meta.get("input_mean")
    if src_graph.config != config.architecture:
        _, params = network.build(config.architecture, config.seed)
        network.load_into(params, src_params.params)  # raises with the mismatch list
        raise CheckpointError("checkpoint architecture differs from the configured one")
    cfg = replace(config, mask_semantic=True, relationship=False)
    return train(cfg, train_set, eval_set, init=(src_graph, src_params, mean))


# -- gradient check ----------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict  # parameter name -> max relative error over checked coordinates
    n_checked: int
    n_resampled: int

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst(self):
        return max(self.errors, key=self.errors.get) if self.errors else None

    def passed(self, tol=1e-4):
        return self.max_error < tol


def relative_error(analytic, numeric, floor=1e-8):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _same_region(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def gradient_check(arch, batch, *, relationship=False, weights=None, params=None, omega=None,
                   include_aux=False, seed=0, eps=1e-4, coords=16, floor=1e-8, grad_hook=None):
    """Compare analytic gradients of the total loss with central differences.

    Parameters
    ----------
    arch : ArchitectureConfig
    batch : (images, y, z)
        A few (at most 4) preprocessed crops and their labels.
    weights : LossWeights, optional
        Defaults to the fixed-lambda strategy for the variant.
    params : ParamStore, optional
        Weights to check at; drawn from ``seed`` when omitted. Values are
        restored bit-exactly afterwards.
    omega : array, optional
        Task covariance for the relationship term; a random feasible one is
        drawn when omitted.
    coords : int
        Coordinates probed per tensor: half at the largest analytic
        gradients, the rest uniformly at random.
    grad_hook : callable, optional
        ``hook(grads) -> grads`` applied to the analytic gradients; tests use
        it to corrupt them deliberately.

    A probe whose +/- perturbation changes a ReLU mask or pooling argmax
    straddles a kink, where the difference quotient is not a derivative; it
    is replaced by another coordinate of the same tensor.
    """
    images, y, z = batch
    if len(y) > 4:
        raise InputError("gradient check expects at most 4 samples")
    rng = np.random.default_rng([seed, 2])
    if params is None:
        graph, params = network.build(arch, seed)
    else:
        graph = network.LayerGraph(arch)
    if weights is None:
        lam = BalancePolicy().initial_lambda(arch.n_attributes, arch.variant)
        weights = LossWeights(lam, 1.0 / arch.n_attributes)
    omega_inv = None
    if relationship:
        if omega is None:
            k = arch.n_classes + arch.n_attributes + (arch.n_classes if include_aux else 0)
            a = rng.standard_normal((k, k))
            omega = a @ a.T + k * np.eye(k)
            omega /= np.trace(omega)
        omega_inv = sym_inverse(omega)

    def loss_at():
        tr = network.forward(graph, params, images)
        bd = total_loss(tr, y, z, params, weights, omega_inv, relationship, include_aux)[0]
        return bd.total, tr

    trace = network.forward(graph, params, images)
    _, ograds, rgrads = total_loss(trace, y, z, params, weights, omega_inv, relationship, include_aux)
    network.backward(graph, params, trace, ograds)
    analytic = {k: params.grads[k] + rgrads[k] for k in params}
    if grad_hook is not None:
        analytic = grad_hook(analytic)
    base_sig = trace.signature()

    errors, checked, resampled = {}, 0, 0
    for name in params:
        p, g = params[name], analytic[name]
        flat = p.reshape(-1)
        top = np.argsort(-np.abs(g.reshape(-1)), kind="stable")[: max(1, coords // 2)]
        pool = [int(i) for i in rng.permutation(flat.size) if i not in set(top.tolist())]
        queue = [int(i) for i in top] + pool
        want = min(coords, flat.size)
        worst, done = 0.0, 0
        for i in queue:
            if done == want:
                break
            old = flat[i]
            flat[i] = old + eps
            f_plus, tr_plus = loss_at()
            flat[i] = old - eps
            f_minus, tr_minus = loss_at()
            flat[i] = old
            if not (_same_region(base_sig, tr_plus.signature()) and _same_region(base_sig, tr_minus.signature())):
                resampled += 1
                continue
            numeric = (f_plus - f_minus) / (2 * eps)
            worst = max(worst, relative_error(float(g.reshape(-1)[i]), numeric, floor))
            done += 1
        errors[name] = worst
        checked += done
    params.zero_grad()
    return GradCheckReport(errors, checked, resampled)
