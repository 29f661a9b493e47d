"""Risk-averting loss criteria and their exact first-order derivatives.

Everything here is a pure function of a vector of nonnegative per-sample
losses ``c`` (cross-entropy or squared error, the criteria do not care)
and a parameter bundle (lam, p, a, q).  The convexified criteria are

    rae(c)   = mean_i exp(lam**p * c_i)                  (unbounded, overflows)
    nrae(c)  = (1/lam**p) * log rae(c)                   (log-sum-exp form, stable)
    anrat(c) = nrae(c) + a * lam**(-q)                   (penalty resists lam -> 0)

The gradient of nrae with respect to the weights factors through the
per-sample losses as sum_i w_i * grad(c_i), where w_i is a softmax over
lam**p * c_i; `sample_weights` computes exactly those factors and the
network module consumes them in a single weighted backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Training-state floor for lam.  The pure functions below accept any lam > 0
# (the small-lam limit is itself a tested property); the trainer clamps its
# lam state to this floor after every update.
LAMBDA_MIN = 1e-3

# Feasibility cap for the raw exponential criterion: exp(500) ~ 7e216 leaves
# headroom for the batch sum inside double range.
EXP_CAP = 500.0

# Network output probabilities are clamped to [PROB_EPS, 1 - PROB_EPS]
# before any log, so per-sample losses are always finite; for classification
# losses -log(PROB_EPS) is a hard ceiling on any c_i.
PROB_EPS = 1e-12
MAX_CLAMPED_LOSS = -float(np.log(PROB_EPS))

LOSS_MODES = ("binary-ce", "categorical-ce", "squared")


class OverflowRiskError(ArithmeticError):
    """Raw RAE would overflow; the caller must stay on the NRAE path."""


class NumericDomainError(ArithmeticError):
    """An input or probe produced a non-finite value."""


@dataclass(frozen=True)
class CriterionParams:
    """Scalar state of the convexified criteria: lam applied as lam**p,
    plus the penalty weight a and penalty index q of the adaptive loss."""

    lam: float
    p: int = 1
    a: float = 0.0
    q: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0.0):
            raise ValueError(f"lam must be positive and finite, got {self.lam}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"p must be an integer >= 1, got {self.p}")
        if int(self.q) != self.q or self.q < 1:
            raise ValueError(f"q must be an integer >= 1, got {self.q}")
        if not (np.isfinite(self.a) and self.a >= 0.0):
            raise ValueError(f"a must be >= 0, got {self.a}")

    @property
    def scale(self) -> float:
        """lam**p, the factor multiplying every per-sample loss."""
        return float(self.lam) ** int(self.p)


@dataclass
class LossReport:
    """One criterion evaluation on a batch: the criterion value, the plain
    mean of the per-sample losses, the softmax sample weights that form the
    weight gradient, and (adaptive criterion only) the lam derivative.
    max_loss is the largest per-sample loss, kept for feasibility checks."""

    criterion_value: float
    ce_value: float
    sample_weights: np.ndarray
    lambda_grad: float | None = None
    max_loss: float = 0.0


def _check_losses(losses) -> np.ndarray:
    c = np.asarray(losses, dtype=float)
    if c.ndim != 1 or c.size < 1:
        raise ValueError("losses must be a non-empty 1-D vector")
    if not np.all(np.isfinite(c)):
        raise NumericDomainError("losses contain non-finite entries")
    if np.any(c < 0):
        raise ValueError("per-sample losses must be nonnegative")
    return c


def per_sample_loss(prediction, target, mode: str) -> float:
    """Nonnegative base loss of a single prediction.

    binary-ce:      prediction is P(y=1), target in {0, 1}
    categorical-ce: prediction is a probability vector, target a class index
    squared:        prediction and target are reals
    """
    if mode == "binary-ce":
        f = float(np.asarray(prediction))
        if not np.isfinite(f):
            raise NumericDomainError(f"non-finite prediction {f}")
        if not (0.0 <= f <= 1.0):
            raise ValueError(f"binary-ce prediction must lie in [0, 1], got {f}")
        y = int(target)
        if y not in (0, 1):
            raise ValueError(f"binary-ce target must be 0 or 1, got {target}")
        f = min(max(f, PROB_EPS), 1.0 - PROB_EPS)
        return -(y * np.log(f) + (1 - y) * np.log(1.0 - f))
    if mode == "categorical-ce":
        f = np.asarray(prediction, dtype=float)
        if f.ndim != 1:
            raise ValueError("categorical-ce prediction must be a vector")
        if not np.all(np.isfinite(f)):
            raise NumericDomainError("non-finite prediction vector")
        if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-6:
            raise ValueError("categorical-ce prediction must be a probability vector")
        y = int(target)
        if not 0 <= y < f.size:
            raise ValueError(f"class index {target} out of range for {f.size} classes")
        return -np.log(min(max(f[y], PROB_EPS), 1.0 - PROB_EPS))
    if mode == "squared":
        f = float(np.asarray(prediction))
        y = float(target)
        if not (np.isfinite(f) and np.isfinite(y)):
            raise NumericDomainError("non-finite prediction or target")
        return (f - y) ** 2
    raise ValueError(f"unknown loss mode {mode!r} (expected one of {LOSS_MODES})")


def rae(losses, params: CriterionParams) -> float:
    """Mean of exp(lam**p * c_i).  Refuses to evaluate when the largest
    exponent exceeds EXP_CAP; callers must use `nrae` in that regime."""
    c = _check_losses(losses)
    s = params.scale
    zmax = s * float(c.max())
    if zmax > EXP_CAP:
        raise OverflowRiskError(
            f"lam**p * max(c) = {zmax:.6g} exceeds cap {EXP_CAP:g}; use nrae"
        )
    return float(np.mean(np.exp(s * c)))


def nrae(losses, params: CriterionParams) -> float:
    """(1/lam**p) * log rae, computed as a log-sum-exp so it is finite for
    arbitrarily large lam**p * c_i.  Bounded between mean(c) and max(c).

    Evaluated relative to the mean loss: nrae = mean(c) + corr/s with
    corr = log mean(exp(s*(c - mean))).  For small exponents corr is taken
    through expm1/log1p, otherwise the 1/s factor would amplify the
    cancellation in log(1 - eps) and poison finite-difference oracles.
    """
    c = _check_losses(losses)
    s = params.scale
    cbar = float(c.mean())
    z = s * (c - cbar)
    zmax = float(z.max())
    if zmax <= 50.0:
        corr = float(np.log1p(np.mean(np.expm1(z))))
    else:
        corr = zmax + float(np.log(np.mean(np.exp(z - zmax))))
    return cbar + corr / s


def sample_weights(losses, params: CriterionParams) -> np.ndarray:
    """Softmax over lam**p * c_i: the per-sample factors whose weighted sum
    of loss gradients is the full criterion gradient with respect to W."""
    c = _check_losses(losses)
    z = params.scale * c
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def anrat_loss(losses, params: CriterionParams) -> float:
    """nrae plus the penalty a * lam**(-q) that resists lam collapsing."""
    return nrae(losses, params) + params.a * float(params.lam) ** (-params.q)


def anrat_grad_lambda(losses, params: CriterionParams) -> float:
    """Exact derivative of `anrat_loss` with respect to lam:

        (p/lam) * (sum_i w_i c_i - nrae) - a*q*lam**(-q-1)

    The first term is the gap between the exponentially weighted mean loss
    and the criterion, hence always >= 0.
    """
    c = _check_losses(losses)
    w = sample_weights(c, params)
    lam, p, a, q = float(params.lam), int(params.p), float(params.a), int(params.q)
    gap = float(np.dot(w, c)) - nrae(c, params)
    return (p / lam) * gap - a * q * lam ** (-q - 1)


def approx_grad_lambda(losses, params: CriterionParams) -> float:
    """Diagnostic-only coarse lam gradient (p/lam) * (mean(c) - nrae).
    Training always uses `anrat_grad_lambda`; this can disagree with it in
    sign when one sample dominates the batch."""
    c = _check_losses(losses)
    return (params.p / float(params.lam)) * (float(c.mean()) - nrae(c, params))


def evaluate_criterion(losses, kind: str, params: CriterionParams) -> LossReport:
    """Evaluate one criterion kind ('ce' | 'rae' | 'nrae' | 'anrat') on a
    loss vector, bundling the value, the plain CE mean, the gradient
    weights, and (anrat) the lam derivative."""
    c = _check_losses(losses)
    ce = float(c.mean())
    cmax = float(c.max())
    if kind == "ce":
        w = np.full(c.size, 1.0 / c.size)
        return LossReport(ce, ce, w, max_loss=cmax)
    if kind == "rae":
        return LossReport(rae(c, params), ce, sample_weights(c, params), max_loss=cmax)
    if kind == "nrae":
        return LossReport(nrae(c, params), ce, sample_weights(c, params), max_loss=cmax)
    if kind == "anrat":
        return LossReport(
            anrat_loss(c, params),
            ce,
            sample_weights(c, params),
            lambda_grad=anrat_grad_lambda(c, params),
            max_loss=cmax,
        )
    raise ValueError(f"unknown criterion kind {kind!r}")
