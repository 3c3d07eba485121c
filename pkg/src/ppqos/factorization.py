"""Matrix-factorization predictors trained by batch gradient descent.

Two models share one optimizer:

* PMF fits raw QoS values as inner products of latent user and service
  factors with L2 regularization.
* P-PMF fits obfuscated (normalized + noised) values and adds a
  per-service bias, which absorbs what normalization moved out of the
  data; user bias and global offset are handled by the normalization
  itself and stay out of the model.

The optimizer is deterministic batch gradient descent with backtracking:
a step is accepted only if the loss decreases, otherwise the learning
rate is halved and the step retried; after an accepted step the rate
recovers by 5% up to its initial value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import QosMatrix
from .obfuscation import ObfuscatedMatrix


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss (divergent config)."""


@dataclass(frozen=True)
class TrainConfig:
    """Rank, regularization, and optimizer settings."""

    d: int = 10
    gamma: float = 12.0
    learning_rate: float = 0.01
    max_iters: int = 500
    rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass
class FactorModel:
    """Latent factors U (d x n_users), S (d x n_services), service biases b."""

    U: np.ndarray
    S: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.S.ndim != 2 or self.b.ndim != 1:
            raise ValueError("U and S must be 2-D, b 1-D")
        if self.U.shape[0] != self.S.shape[0]:
            raise ValueError("U and S must share the latent dimension")
        if self.b.shape[0] != self.S.shape[1]:
            raise ValueError("b must have one bias per service")
        for arr in (self.U, self.S, self.b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")

    @property
    def d(self) -> int:
        return self.U.shape[0]

    @property
    def n_users(self) -> int:
        return self.U.shape[1]

    @property
    def n_services(self) -> int:
        return self.S.shape[1]


def init_model(n_users: int, m_services: int, cfg: TrainConfig) -> FactorModel:
    """Gaussian(0, 0.1) factors, zero biases; deterministic given cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    return FactorModel(
        U=rng.normal(0.0, 0.1, (cfg.d, n_users)),
        S=rng.normal(0.0, 0.1, (cfg.d, m_services)),
        b=np.zeros(m_services),
    )


def _observed(matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    uu, ss = np.nonzero(matrix.mask)
    return uu, ss, matrix.values[uu, ss]


def _errors(b, U, S, uu, ss, r) -> np.ndarray:
    """Residuals b_s + U_u.S_s - value over the observed cells."""
    return b[ss] + np.einsum("dn,dn->n", U[:, uu], S[:, ss]) - r


def loss_ppmf(model: FactorModel, rp: ObfuscatedMatrix, gamma: float) -> float:
    """Half squared error over observed cells plus L2 terms (incl. biases)."""
    uu, ss, r = _observed(rp)
    e = _errors(model.b, model.U, model.S, uu, ss, r)
    reg = (model.b @ model.b) + np.sum(model.U * model.U) + np.sum(model.S * model.S)
    return float(0.5 * (e @ e) + 0.5 * gamma * reg)


def grad_ppmf(model: FactorModel, rp: ObfuscatedMatrix, gamma: float):
    """Analytic gradients of loss_ppmf w.r.t. (b, U, S)."""
    uu, ss, r = _observed(rp)
    return _grad_biased(model.b, model.U, model.S, uu, ss, r, gamma)


def _grad_biased(b, U, S, uu, ss, r, gamma):
    d, n = U.shape
    m = S.shape[1]
    e = _errors(b, U, S, uu, ss, r)
    gb = np.bincount(ss, weights=e, minlength=m) + gamma * b
    gU = np.empty_like(U)
    gS = np.empty_like(S)
    Se = S[:, ss] * e
    Ue = U[:, uu] * e
    for j in range(d):
        gU[j] = np.bincount(uu, weights=Se[j], minlength=n)
        gS[j] = np.bincount(ss, weights=Ue[j], minlength=m)
    gU += gamma * U
    gS += gamma * S
    return gb, gU, gS


def loss_pmf(model: FactorModel, R: QosMatrix, gamma: float) -> float:
    """Bias-free loss on raw data: half squared error plus factor L2."""
    uu, ss, r = _observed(R)
    e = np.einsum("dn,dn->n", model.U[:, uu], model.S[:, ss]) - r
    reg = np.sum(model.U * model.U) + np.sum(model.S * model.S)
    return float(0.5 * (e @ e) + 0.5 * gamma * reg)


def grad_pmf(model: FactorModel, R: QosMatrix, gamma: float):
    """Analytic gradients of loss_pmf w.r.t. (U, S)."""
    uu, ss, r = _observed(R)
    d, n = model.U.shape
    m = model.S.shape[1]
    e = np.einsum("dn,dn->n", model.U[:, uu], model.S[:, ss]) - r
    gU = np.empty_like(model.U)
    gS = np.empty_like(model.S)
    Se = model.S[:, ss] * e
    Ue = model.U[:, uu] * e
    for j in range(d):
        gU[j] = np.bincount(uu, weights=Se[j], minlength=n)
        gS[j] = np.bincount(ss, weights=Ue[j], minlength=m)
    gU += gamma * model.U
    gS += gamma * model.S
    return gU, gS


def _descend(params, loss_fn, grad_fn, cfg: TrainConfig, on_iteration=None):
    """Backtracking batch gradient descent over a tuple of arrays.

    Accepts a step only when it strictly decreases the loss; halves the
    rate on failure (at most 30 times per iteration), regrows it by 1.05x
    after success, capped at the configured rate. Stops on relative loss
    change <= rel_tol or max_iters. Overflow inside a loss evaluation is
    not an error by itself: it surfaces as a non-finite loss and is either
    backtracked away or reported as a TrainingError.
    """
    lr = cfg.learning_rate
    with np.errstate(over="ignore", invalid="ignore"):
        return _descend_inner(params, loss_fn, grad_fn, cfg, lr, on_iteration)


def _descend_inner(params, loss_fn, grad_fn, cfg, lr, on_iteration):
    loss = loss_fn(params)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss at initialization: {loss}")
    if on_iteration is not None:
        on_iteration(0, loss)
    for it in range(1, cfg.max_iters + 1):
        grads = grad_fn(params)
        accepted = False
        trial_loss = np.inf
        for _ in range(31):  # initial attempt plus up to 30 halvings
            trial = tuple(p - lr * g for p, g in zip(params, grads))
            trial_loss = loss_fn(trial)
            if np.isfinite(trial_loss) and trial_loss < loss:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            if not np.isfinite(trial_loss):
                raise TrainingError("loss not finite after 30 step halvings")
            break  # no descent direction progress left at any usable rate
        rel_change = (loss - trial_loss) / max(abs(loss), 1e-300)
        params, loss = trial, trial_loss
        if on_iteration is not None:
            on_iteration(it, loss)
        lr = min(lr * 1.05, cfg.learning_rate)
        if rel_change <= cfg.rel_tol:
            break
    return params, loss


def train_ppmf(rp: ObfuscatedMatrix, cfg: TrainConfig, on_iteration=None) -> FactorModel:
    """Fit the biased model to an obfuscated matrix.

    The training closures evaluate residuals through dense matmuls (cheap
    at this scale and much faster than per-entry gathers); unobserved
    cells are zeroed out of the error before it contributes anywhere.
    """
    if rp.n_entries == 0:
        raise ValueError("cannot train on an empty matrix")
    V0 = np.nan_to_num(rp.values)
    unobserved = ~rp.mask
    model = init_model(rp.n_users, rp.n_services, cfg)

    def masked_error(b, U, S):
        err = b[None, :] + U.T @ S - V0
        err[unobserved] = 0.0
        return err

    def loss_fn(params):
        b, U, S = params
        err = masked_error(b, U, S)
        reg = (b @ b) + np.sum(U * U) + np.sum(S * S)
        return float(0.5 * np.vdot(err, err) + 0.5 * cfg.gamma * reg)

    def grad_fn(params):
        b, U, S = params
        err = masked_error(b, U, S)
        gb = err.sum(axis=0) + cfg.gamma * b
        gU = S @ err.T + cfg.gamma * U
        gS = U @ err + cfg.gamma * S
        return gb, gU, gS

    (b, U, S), _ = _descend((model.b, model.U, model.S), loss_fn, grad_fn, cfg, on_iteration)
    return FactorModel(U=U, S=S, b=b)


def train_pmf(R: QosMatrix, cfg: TrainConfig, on_iteration=None) -> FactorModel:
    """Fit the bias-free model to raw QoS values."""
    if R.n_entries == 0:
        raise ValueError("cannot train on an empty matrix")
    V0 = np.nan_to_num(R.values)
    unobserved = ~R.mask
    model = init_model(R.n_users, R.n_services, cfg)

    def masked_error(U, S):
        err = U.T @ S - V0
        err[unobserved] = 0.0
        return err

    def loss_fn(params):
        U, S = params
        err = masked_error(U, S)
        reg = np.sum(U * U) + np.sum(S * S)
        return float(0.5 * np.vdot(err, err) + 0.5 * cfg.gamma * reg)

    def grad_fn(params):
        U, S = params
        err = masked_error(U, S)
        gU = S @ err.T + cfg.gamma * U
        gS = U @ err + cfg.gamma * S
        return gU, gS

    (U, S), _ = _descend((model.U, model.S), loss_fn, grad_fn, cfg, on_iteration)
    return FactorModel(U=U, S=S, b=np.zeros(R.n_services))


def predict_ppmf(model: FactorModel, u: int, s: int) -> float:
    """Normalized-space prediction b_s + U_u.S_s for one cell."""
    if not (0 <= u < model.n_users and 0 <= s < model.n_services):
        raise IndexError(f"cell ({u}, {s}) out of range")
    return float(model.b[s] + model.U[:, u] @ model.S[:, s])


def predict_pmf(model: FactorModel, u: int, s: int) -> float:
    """Raw-space prediction U_u.S_s for one cell, clamped at 0."""
    if not (0 <= u < model.n_users and 0 <= s < model.n_services):
        raise IndexError(f"cell ({u}, {s}) out of range")
    return float(max(0.0, model.U[:, u] @ model.S[:, s]))


def predict_matrix_ppmf(model: FactorModel) -> np.ndarray:
    """Normalized-space predictions for every cell."""
    return model.b[None, :] + model.U.T @ model.S


def predict_matrix_pmf(model: FactorModel) -> np.ndarray:
    """Raw-space predictions for every cell, clamped at 0."""
    return np.maximum(model.U.T @ model.S, 0.0)


def save_model(model: FactorModel, path) -> None:
    """Write a checkpoint: "n m d" header, then b, U, S rows in decimal text."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{model.n_users} {model.n_services} {model.d}\n")
        fh.write(" ".join(repr(x) for x in model.b.tolist()) + "\n")
        for row in model.U:
            fh.write(" ".join(repr(x) for x in row.tolist()) + "\n")
        for row in model.S:
            fh.write(" ".join(repr(x) for x in row.tolist()) + "\n")


def load_model(path) -> FactorModel:
    """Read a checkpoint written by save_model."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty checkpoint")
    try:
        n, m, d = (int(x) for x in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: bad checkpoint header") from exc
    if len(lines) != 1 + 1 + 2 * d:
        raise ValueError(f"{path}: expected {1 + 2 * d} data rows")
    b = np.asarray(lines[1].split(), dtype=np.float64)
    U = np.asarray([line.split() for line in lines[2 : 2 + d]], dtype=np.float64)
    S = np.asarray([line.split() for line in lines[2 + d : 2 + 2 * d]], dtype=np.float64)
    if b.shape != (m,) or U.shape != (d, n) or S.shape != (d, m):
        raise ValueError(f"{path}: checkpoint shapes do not match header")
    return FactorModel(U=U, S=S, b=b)
