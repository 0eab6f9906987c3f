"""Loss terms of the joint aesthetic/semantic objective and their gradients.

Per-sample losses are averaged over the batch. The semantic term sums its
``M`` binary cross-entropies per sample before averaging, which is why a
weight of ``1/M`` puts it on the same per-sample scale as the single
softmax term.
"""
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, InputError
from .linalg import sym_inverse

BREAKDOWN_FIELDS = (
    "aesthetic_ce", "semantic_bce", "aux_aesthetic_ce", "reg_theta", "reg_w",
    "reg_lambda", "relationship", "total",
)


@dataclass
class LossBreakdown:
    aesthetic_ce: float = 0.0
    semantic_bce: float = 0.0
    aux_aesthetic_ce: float = 0.0
    reg_theta: float = 0.0
    reg_w: float = 0.0
    reg_lambda: float = 0.0
    relationship: float = 0.0
    total: float = 0.0

    def as_row(self):
        return [getattr(self, f) for f in BREAKDOWN_FIELDS]

    @classmethod
    def mean(cls, items):
        items = list(items)
        if not items:
            return cls()
        return cls(**{f.name: float(np.mean([getattr(b, f.name) for b in items])) for f in fields(cls)})

    to_dict = asdict


def softmax_ce(logits, label):
    """Softmax cross-entropy for one sample: ``(loss, d loss / d logits)``."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[-1]:
        raise InputError(f"label {label} out of range for {z.shape[-1]} classes")
    loss, grad = softmax_ce_batch(z[None, :], np.array([label]))
    return float(loss[0]), grad[0]


def softmax_ce_batch(logits, labels):
    """Per-sample losses (N,) and gradients (N, C) for integer ``labels``."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= c):
        raise InputError("aesthetic labels must be integers in [0, C)")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = logsum - shifted[rows, labels]
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad


def _check_binary(z):
    z = np.asarray(z, dtype=np.float64)
    if not np.all((z == 0.0) | (z == 1.0)):
        raise InputError("semantic labels must be 0 or 1")
    return z


def semantic_bce(logits, z):
    """Summed sigmoid cross-entropy over attributes for one sample."""
    loss, grad = semantic_bce_batch(np.asarray(logits, dtype=np.float64)[None, :], np.asarray(z)[None, :])
    return float(loss[0]), grad[0]


def semantic_bce_batch(logits, z):
    """Per-sample summed BCE (N,) and gradients (N, M).

    Uses ``log(1 + exp(-|l|))`` so saturated logits neither overflow nor
    lose the small tail.
    """
    z = _check_binary(z)
    if z.shape != logits.shape:
        raise InputError(f"semantic label shape {z.shape} != logits {logits.shape}")
    per = np.maximum(logits, 0.0) - logits * z + np.log1p(np.exp(-np.abs(logits)))
    e = np.exp(-np.abs(logits))
    sig = np.where(logits >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return per.sum(axis=1), sig - z


def l2_terms(params, gamma_theta=1.0, gamma_w=1.0):
    """Sum-of-squares penalties on the trunk and on every head group.

    Returns ``(reg_theta, reg_w, grads)`` where ``grads`` maps parameter names
    to the gradient of ``gamma_theta * reg_theta + gamma_w * reg_w``.
    """
    reg_theta = reg_w = 0.0
    grads = {}
    for name in params:
        p = params[name]
        sq = float(np.sum(p * p))
        if params.groups[name] == "trunk":
            reg_theta += sq
            grads[name] = 2.0 * gamma_theta * p
        else:
            reg_w += sq
            grads[name] = 2.0 * gamma_w * p
    return reg_theta, reg_w, grads


def relationship_term(w, omega_inv):
    """``trace(W Omega^-1 W^T)`` and its gradient ``2 W Omega^-1``.

    ``omega_inv`` is the (already ridge-regularized) inverse covariance.
    """
    w = np.asarray(w, dtype=np.float64)
    omega_inv = np.asarray(omega_inv, dtype=np.float64)
    if omega_inv.shape != (w.shape[1], w.shape[1]):
        raise InputError(f"task matrix has {w.shape[1]} columns but covariance is {omega_inv.shape}")
    wo = w @ omega_inv
    return float(np.sum(wo * w)), 2.0 * wo


def relationship_value(w, omega, ridge=None):
    return relationship_term(w, sym_inverse(omega, ridge))[0]


def lambda_prior(lam, mu):
    return (lam - mu) ** 2


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the joint objective for one step."""

    lam: float
    mu: float
    gamma_theta: float = 1e-4
    gamma_w: float = 1e-4
    gamma_omega: float = 1e-3


def total_loss(trace, y, z, params, weights, omega_inv=None, relationship=False,
               include_aux=False):
    """Evaluate the objective on one batch.

    Parameters
    ----------
    trace : ForwardTrace
        Output of :func:`mtaesthetic.network.forward` for the batch.
    y : int array (N,)
        Aesthetic class indices.
    z : 0/1 array (N, M) or None
        Semantic labels; ``None`` masks the semantic term entirely.
    omega_inv : array or None
        Inverse task covariance, required when ``relationship`` is true.

    Returns
    -------
    breakdown : LossBreakdown
    output_grads : dict
        Gradients w.r.t. each head's logits, for :func:`network.backward`.
    param_grads : dict
        Gradients of the regularizers, to be added to the backward result.
    """
    if relationship and omega_inv is None:
        raise ConfigError("relationship learning is enabled but no task covariance was given")
    n = trace.batch_size
    bd = LossBreakdown()
    out = {}
    ce, g = softmax_ce_batch(trace.aesthetic, y)
    bd.aesthetic_ce = float(ce.mean())
    out["aesthetic"] = g / n
    if trace.aux is not None:
        ce, g = softmax_ce_batch(trace.aux, y)
        bd.aux_aesthetic_ce = float(ce.mean())
        out["aux"] = g / n
    if z is not None:
        bce, g = semantic_bce_batch(trace.semantic, z)
        bd.semantic_bce = float(bce.mean())
        if weights.lam != 0.0:
            out["semantic"] = weights.lam * g / n
    bd.reg_theta, bd.reg_w, pgrads = l2_terms(params, weights.gamma_theta, weights.gamma_w)
    bd.reg_lambda = lambda_prior(weights.lam, weights.mu)
    if relationship:
        w = params.task_matrix(include_aux)
        bd.relationship, gw = relationship_term(w, omega_inv)
        _add_task_grad(params, pgrads, weights.gamma_omega * gw, include_aux)
    bd.total = (
        bd.aesthetic_ce
        + weights.lam * bd.semantic_bce
        + bd.aux_aesthetic_ce
        + weights.gamma_theta * bd.reg_theta
        + weights.gamma_w * bd.reg_w
        + bd.reg_lambda
        + weights.gamma_omega * bd.relationship
    )
    return bd, out, pgrads


def _add_task_grad(params, pgrads, grad, include_aux):
    start = 0
    for name in params.task_weight_names(include_aux):
        width = params[name].shape[1]
        pgrads[name] = pgrads[name] + grad[:, start : start + width]
        start += width
