"""Distributional multilayer perceptrons trained with Gaussian likelihoods.

The network maps a standardized 151-feature day vector to 48 outputs,
read as 24 means and 24 log variances (clamped to [-20, 20] before
exponentiation).  Hidden layers use ReLU, He initialization and optional
inverted dropout; the output layer is linear with Glorot initialization;
biases start at zero.  Training is mini-batch Adam on the Gaussian
negative log-likelihood plus an L2 penalty on the weight matrices, with
early stopping on validation loss and best-parameter restore.

Uncertainty variants reuse the same machinery: deep ensembles stack the
Gaussian heads of independently trained nets into an equal-weight
mixture, and MC dropout keeps masks live at inference, one mixture
component per stochastic pass.  Dropout nets train with a single
stochastic forward per step and are validated with the mixture
likelihood over a fixed set of mask seeds so epoch losses stay
comparable.

Everything here is plain numpy with hand-written backprop; gradients of
both losses are exact and are checked against finite differences in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from probcast.distribution import equal_weight_mixture
from probcast.errors import ConfigError, DataError, NumericalError

N_INPUTS = 151
N_TARGET_HOURS = 24
N_OUTPUTS = 48
HIDDEN_UNITS = 1024
N_HIDDEN_LAYERS = 2
LOGVAR_CLAMP = 20.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LOG2PI = float(np.log(2.0 * np.pi))

LEARNING_RATE_RANGE = (1e-5, 1e-1)
L2_RANGE = (1e-5, 1e-1)
DROPOUT_RANGE = (0.01, 0.9)


@dataclass
class MlpParams:
    """Weights and biases, one entry per layer, input side first."""

    weights: list
    biases: list
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("weights and biases must pair up layer by layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {l}: bias shape {b.shape} does not match weight {w.shape}")
            if l > 0 and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ConfigError(f"layer {l}: fan-in does not chain from previous layer")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DataError(f"layer {l}: non-finite parameters")

    @property
    def architecture(self) -> tuple:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def norm(self) -> float:
        sq = sum(float((w**2).sum()) for w in self.weights)
        sq += sum(float((b**2).sum()) for b in self.biases)
        return float(np.sqrt(sq))


def init_mlp(
    seed: int,
    *,
    n_inputs: int = N_INPUTS,
    hidden_units: int = HIDDEN_UNITS,
    n_hidden: int = N_HIDDEN_LAYERS,
    n_outputs: int = N_OUTPUTS,
) -> MlpParams:
    """He-initialized hidden layers, Glorot output layer, zero biases."""
    if n_hidden < 1 or hidden_units < 1:
        raise ConfigError("need at least one hidden layer with at least one unit")
    rng = np.random.default_rng(seed)
    sizes = [n_inputs] + [hidden_units] * n_hidden + [n_outputs]
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        if l < len(sizes) - 2:
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, seed)


def dropout_masks(params: MlpParams, n_rows: int, rate: float, seed) -> list:
    """Inverted-scaling keep masks for each hidden activation."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    masks = []
    for w in params.weights[:-1]:
        keep = rng.random((n_rows, w.shape[1])) >= rate
        masks.append(keep / (1.0 - rate))
    return masks


def _forward_full(params: MlpParams, x: np.ndarray, masks):
    """Batch forward pass keeping everything backprop needs."""
    a = x
    inputs, pre_acts = [], []
    for l in range(params.n_hidden):
        inputs.append(a)
        z = a @ params.weights[l] + params.biases[l]
        pre_acts.append(z)
        a = np.maximum(z, 0.0)
        if masks is not None:
            a = a * masks[l]
    inputs.append(a)
    out = a @ params.weights[-1] + params.biases[-1]
    raw_logvar = out[:, N_TARGET_HOURS:]
    mu = out[:, :N_TARGET_HOURS]
    logvar = np.clip(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    cache = (inputs, pre_acts, masks, raw_logvar)
    return mu, logvar, cache


def _backward_full(params: MlpParams, cache, dmu, dlogvar):
    """Parameter gradients given loss gradients at the two heads."""
    inputs, pre_acts, masks, raw_logvar = cache
    pass_through = (np.abs(raw_logvar) <= LOGVAR_CLAMP).astype(float)
    dout = np.concatenate([dmu, dlogvar * pass_through], axis=1)
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    grads_w[-1] = inputs[-1].T @ dout
    grads_b[-1] = dout.sum(axis=0)
    da = dout @ params.weights[-1].T
    for l in range(params.n_hidden - 1, -1, -1):
        if masks is not None:
            da = da * masks[l]
        dz = da * (pre_acts[l] > 0.0)
        grads_w[l] = inputs[l].T @ dz
        grads_b[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ params.weights[l].T
    return grads_w, grads_b


def forward(params: MlpParams, x: np.ndarray, dropout=None):
    """(mu, logvar) heads for one day vector or a batch of them.

    dropout, when given, is a (rate, mask_seed) pair; masks are redrawn
    deterministically from the seed, one row per input row.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite network input")
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != params.weights[0].shape[0]:
        raise DataError(f"input width {xb.shape[1]} does not match network {params.architecture}")
    masks = None
    if dropout is not None:
        rate, mask_seed = dropout
        masks = dropout_masks(params, xb.shape[0], rate, mask_seed)
    mu, logvar, _ = _forward_full(params, xb, masks)
    if single:
        return mu[0], logvar[0]
    return mu, logvar


def predict_gaussian(params: MlpParams, x: np.ndarray):
    """Per-hour (mu, sigma) with sigma = exp(logvar / 2)."""
    mu, logvar = forward(params, x)
    return mu, np.exp(0.5 * logvar)


def nll_gaussian(mu, logvar, y) -> float:
    """Gaussian negative log-likelihood summed over all cells."""
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    y = np.asarray(y, dtype=float)
    err2 = (y - mu) ** 2
    return float(np.sum(0.5 * logvar + 0.5 * err2 * np.exp(-logvar) + 0.5 * LOG2PI))


def _nll_gaussian_head_grads(mu, logvar, y):
    inv_var = np.exp(-logvar)
    dmu = -(y - mu) * inv_var
    dlogvar = 0.5 - 0.5 * (y - mu) ** 2 * inv_var
    return dmu, dlogvar


def nll_gaussian_param_grads(params: MlpParams, x, y, masks=None):
    """Loss and exact parameter gradients of the summed Gaussian NLL."""
    x = np.asarray(x, dtype=float).reshape(-1, params.weights[0].shape[0])
    y = np.asarray(y, dtype=float).reshape(x.shape[0], -1)
    mu, logvar, cache = _forward_full(params, x, masks)
    loss = nll_gaussian(mu, logvar, y)
    dmu, dlogvar = _nll_gaussian_head_grads(mu, logvar, y)
    return loss, _backward_full(params, cache, dmu, dlogvar)


def gm_nll(mus, sigmas, y, weights=None) -> float:
    """Equal-weight Gaussian-mixture NLL, components on the last axis.

    Computed as -sum_i logsumexp_j(log w_j + log phi(y_i; mu_ij, s_ij)).
    """
    mus = np.asarray(mus, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    y = np.asarray(y, dtype=float)
    if mus.shape != sigmas.shape or mus.shape[:-1] != y.shape:
        raise DataError("component arrays must share shape, y matching all but the last axis")
    if np.any(sigmas <= 0):
        raise DataError("component sigmas must be positive")
    n_comp = mus.shape[-1]
    if weights is None:
        log_w = np.full(n_comp, -np.log(n_comp))
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n_comp,) or np.any(weights < 0):
            raise DataError("weights must be non-negative, one per component")
        with np.errstate(divide="ignore"):
            log_w = np.log(weights)
    z = (y[..., None] - mus) / sigmas
    log_phi = -0.5 * z**2 - np.log(sigmas) - 0.5 * LOG2PI
    return float(-np.sum(logsumexp(log_phi + log_w, axis=-1)))


def _gm_head_grads(mus, logvars, y):
    """Head gradients of the mixture NLL via component responsibilities."""
    inv_var = np.exp(-logvars)
    diff = y[..., None] - mus
    log_phi = -0.5 * diff**2 * inv_var - 0.5 * logvars - 0.5 * LOG2PI
    log_phi_max = np.max(log_phi, axis=-1, keepdims=True)
    resp = np.exp(log_phi - log_phi_max)
    resp /= resp.sum(axis=-1, keepdims=True)
    dmu = -resp * diff * inv_var
    dlogvar = resp * (0.5 - 0.5 * diff**2 * inv_var)
    return dmu, dlogvar


def mc_gm_loss_and_grads(params: MlpParams, x, y, rate: float, mask_seeds):
    """Mixture NLL over dropout passes, with exact parameter gradients.

    One component per pass; the mask seeds pin every pass so the loss is
    a deterministic, differentiable function of the parameters.  Head
    gradients are split by responsibility and backpropagated through
    each pass's masked network, then summed.
    """
    x = np.asarray(x, dtype=float).reshape(-1, params.weights[0].shape[0])
    y = np.asarray(y, dtype=float).reshape(x.shape[0], -1)
    passes = len(mask_seeds)
    if passes < 1:
        raise ConfigError("need at least one pass")
    mus = np.empty((x.shape[0], y.shape[1], passes))
    logvars = np.empty_like(mus)
    caches = []
    for j, seed in enumerate(mask_seeds):
        masks = dropout_masks(params, x.shape[0], rate, seed)
        mu, logvar, cache = _forward_full(params, x, masks)
        mus[:, :, j] = mu
        logvars[:, :, j] = logvar
        caches.append(cache)
    loss = gm_nll(mus, np.exp(0.5 * logvars), y)
    dmu, dlogvar = _gm_head_grads(mus, logvars, y)
    grads_w = [np.zeros_like(w) for w in params.weights]
    grads_b = [np.zeros_like(b) for b in params.biases]
    for j in range(passes):
        gw, gb = _backward_full(params, caches[j], dmu[:, :, j], dlogvar[:, :, j])
        for l in range(len(grads_w)):
            grads_w[l] += gw[l]
            grads_b[l] += gb[l]
    return loss, (grads_w, grads_b)


@dataclass
class TrainConfig:
    """Hyperparameters; ranges follow the tuning table."""

    learning_rate: float = 1e-3
    l2: float = 1e-4
    dropout_rate: float = 0.0
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 100
    seed: int = 0
    hidden_units: int = HIDDEN_UNITS
    n_hidden: int = N_HIDDEN_LAYERS
    val_passes: int = 10

    def __post_init__(self):
        lo, hi = LEARNING_RATE_RANGE
        if not lo <= self.learning_rate <= hi:
            raise ConfigError(f"learning_rate {self.learning_rate} outside [{lo}, {hi}]")
        lo, hi = L2_RANGE
        if not lo <= self.l2 <= hi:
            raise ConfigError(f"l2 {self.l2} outside [{lo}, {hi}]")
        if self.dropout_rate != 0.0:
            lo, hi = DROPOUT_RANGE
            if not lo <= self.dropout_rate <= hi:
                raise ConfigError(f"dropout_rate {self.dropout_rate} outside [{lo}, {hi}]")
        if min(self.batch_size, self.max_epochs, self.patience, self.val_passes) < 1:
            raise ConfigError("batch_size, max_epochs, patience, val_passes must be positive")
        if self.hidden_units < 1 or self.n_hidden < 1:
            raise ConfigError("network size must be positive")


@dataclass
class TrainingData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __post_init__(self):
        self.x_train = np.asarray(self.x_train, dtype=float)
        self.y_train = np.asarray(self.y_train, dtype=float)
        self.x_val = np.asarray(self.x_val, dtype=float)
        self.y_val = np.asarray(self.y_val, dtype=float)
        if self.x_train.shape[0] == 0 or self.x_val.shape[0] == 0:
            raise DataError("train and validation splits must be non-empty")
        if self.x_train.shape[0] != self.y_train.shape[0] or self.x_val.shape[0] != self.y_val.shape[0]:
            raise DataError("feature and target row counts differ")
        for a in (self.x_train, self.y_train, self.x_val, self.y_val):
            if not np.all(np.isfinite(a)):
                raise DataError("training data must be finite")


class _Adam:
    def __init__(self, params: MlpParams, lr: float):
        self.lr = lr
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in params.weights]
        self.v_w = [np.zeros_like(w) for w in params.weights]
        self.m_b = [np.zeros_like(b) for b in params.biases]
        self.v_b = [np.zeros_like(b) for b in params.biases]

    def step(self, params: MlpParams, grads_w, grads_b):
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for l in range(len(params.weights)):
            for value, grad, m, v in (
                (params.weights[l], grads_w[l], self.m_w[l], self.v_w[l]),
                (params.biases[l], grads_b[l], self.m_b[l], self.v_b[l]),
            ):
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * grad
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * grad**2
                value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def _validation_loss(params, cfg, x_val, y_val, val_mask_seeds) -> float:
    """Per-row validation loss; mixture likelihood for dropout nets."""
    if cfg.dropout_rate == 0.0:
        mu, logvar, _ = _forward_full(params, x_val, None)
        return nll_gaussian(mu, logvar, y_val) / x_val.shape[0]
    mus = np.empty((x_val.shape[0], y_val.shape[1], len(val_mask_seeds)))
    sigmas = np.empty_like(mus)
    for j, seed in enumerate(val_mask_seeds):
        masks = dropout_masks(params, x_val.shape[0], cfg.dropout_rate, seed)
        mu, logvar, _ = _forward_full(params, x_val, masks)
        mus[:, :, j] = mu
        sigmas[:, :, j] = np.exp(0.5 * logvar)
    return gm_nll(mus, sigmas, y_val) / x_val.shape[0]


def train(data: TrainingData, config: TrainConfig, *, return_history: bool = False):
    """Mini-batch Adam with early stopping on validation loss.

    Returns the parameters of the best validation epoch.  Dropout nets
    use one stochastic forward per training step and a fixed-seed
    mixture likelihood for validation, so runs are reproducible per
    seed.  Raises NumericalError, naming the epoch, if the validation
    loss turns non-finite.
    """
    if not isinstance(data, TrainingData):
        data = TrainingData(*data)
    root = np.random.SeedSequence(config.seed)
    init_seed, shuffle_seed, mask_seed, val_seed = (int(s) for s in root.generate_state(4))
    params = init_mlp(
        init_seed,
        n_inputs=data.x_train.shape[1],
        hidden_units=config.hidden_units,
        n_hidden=config.n_hidden,
        n_outputs=2 * data.y_train.shape[1],
    )
    params.seed = config.seed
    shuffle_rng = np.random.default_rng(shuffle_seed)
    mask_rng = np.random.default_rng(mask_seed)
    val_mask_seeds = [
        int(s) for s in np.random.SeedSequence(val_seed).generate_state(config.val_passes)
    ]
    optimizer = _Adam(params, config.learning_rate)
    n = data.x_train.shape[0]
    best_val = np.inf
    best_params = params.copy()
    best_epoch = 0
    since_best = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            xb = data.x_train[rows]
            yb = data.y_train[rows]
            masks = None
            if config.dropout_rate > 0.0:
                masks = dropout_masks(params, xb.shape[0], config.dropout_rate, mask_rng)
            mu, logvar, cache = _forward_full(params, xb, masks)
            dmu, dlogvar = _nll_gaussian_head_grads(mu, logvar, yb)
            scale = 1.0 / xb.shape[0]
            grads_w, grads_b = _backward_full(params, cache, dmu * scale, dlogvar * scale)
            for l in range(len(grads_w)):
                grads_w[l] += config.l2 * params.weights[l]
            optimizer.step(params, grads_w, grads_b)
        val = _validation_loss(params, config, data.x_val, data.y_val, val_mask_seeds)
        history.append(val)
        if not np.isfinite(val):
            raise NumericalError(f"validation loss diverged at epoch {epoch}")
        if val < best_val:
            best_val = val
            best_params = params.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    if return_history:
        return best_params, {"val_loss": history, "best_epoch": best_epoch, "best_val": best_val}
    return best_params


def train_ensemble(data: TrainingData, config: TrainConfig, n_members: int):
    """Independently seeded training runs for a deep ensemble."""
    if n_members < 1:
        raise ConfigError("ensemble needs at least one member")
    seeds = np.random.SeedSequence(config.seed).generate_state(n_members)
    return [train(data, replace(config, seed=int(s))) for s in seeds]


def ensemble_forward(members, x):
    """Stacked Gaussian heads of every member: (..., n_members, 24) each."""
    if not members:
        raise ConfigError("empty member list")
    mus, sigmas = zip(*(predict_gaussian(m, x) for m in members))
    return np.stack(mus, axis=-2), np.stack(sigmas, axis=-2)


def ensemble_predict(members, x) -> list:
    """24 equal-weight mixtures for one day vector, one per hour."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("ensemble_predict takes a single day vector")
    mus, sigmas = ensemble_forward(members, x)
    return [equal_weight_mixture(mus[:, h], sigmas[:, h]) for h in range(N_TARGET_HOURS)]


def mc_dropout_forward(params: MlpParams, x, passes: int, rate: float, seed: int):
    """Stacked heads over stochastic passes: (..., passes, 24) each."""
    if passes < 1:
        raise ConfigError("passes must be positive")
    if not 0.0 < rate < 1.0:
        raise ConfigError(f"dropout rate must be in (0, 1), got {rate}")
    pass_seeds = np.random.SeedSequence(seed).generate_state(passes)
    mus, sigmas = zip(
        *(forward_sigma(params, x, dropout=(rate, int(s))) for s in pass_seeds)
    )
    return np.stack(mus, axis=-2), np.stack(sigmas, axis=-2)


def forward_sigma(params, x, dropout=None):
    mu, logvar = forward(params, x, dropout=dropout)
    return mu, np.exp(0.5 * logvar)


def mc_dropout_predict(params: MlpParams, x, passes: int = 10, rate: float = 0.1, seed: int = 0):
    """24 equal-weight mixtures from live-dropout passes on one day."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("mc_dropout_predict takes a single day vector")
    mus, sigmas = mc_dropout_forward(params, x, passes, rate, seed)
    return [equal_weight_mixture(mus[:, h], sigmas[:, h]) for h in range(N_TARGET_HOURS)]


def save_mlp(params: MlpParams, path) -> None:
    payload = {"seed": np.array(params.seed), "n_layers": np.array(len(params.weights))}
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"w{l}"] = w
        payload[f"b{l}"] = b
    np.savez(path, **payload)


def load_mlp(path) -> MlpParams:
    with np.load(path) as archive:
        n_layers = int(archive["n_layers"])
        weights = [archive[f"w{l}"] for l in range(n_layers)]
        biases = [archive[f"b{l}"] for l in range(n_layers)]
        seed = int(archive["seed"])
    return MlpParams(weights, biases, seed)


def pack_params(params: MlpParams) -> np.ndarray:
    """Flat view for finite-difference checks: per layer, W then b."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def unpack_like(vector: np.ndarray, template: MlpParams) -> MlpParams:
    vector = np.asarray(vector, dtype=float)
    weights, biases = [], []
    pos = 0
    for w, b in zip(template.weights, template.biases):
        weights.append(vector[pos : pos + w.size].reshape(w.shape).copy())
        pos += w.size
        biases.append(vector[pos : pos + b.size].copy())
        pos += b.size
    if pos != vector.size:
        raise ConfigError(f"vector has {vector.size} entries, template needs {pos}")
    return MlpParams(weights, biases, template.seed)


def random_search(
    data: TrainingData,
    n_trials: int = 200,
    *,
    seed: int = 0,
    runs_per_trial: int = 3,
    dropout: bool = False,
    base: TrainConfig | None = None,
):
    """Seeded random hyperparameter search.

    Learning rate and L2 are drawn log-uniformly over their ranges, the
    dropout rate uniformly over its range when requested.  Each trial
    averages the best validation loss of runs_per_trial independently
    seeded runs; the lowest average wins.  Returns (best config,
    history) with one record per trial.
    """
    if n_trials < 1 or runs_per_trial < 1:
        raise ConfigError("n_trials and runs_per_trial must be positive")
    base = base if base is not None else TrainConfig()
    rng = np.random.default_rng(seed)
    run_seeds = np.random.SeedSequence(seed).generate_state(n_trials * runs_per_trial)
    history = []
    best_cfg, best_loss = None, np.inf
    for trial in range(n_trials):
        lr = float(np.exp(rng.uniform(*np.log(LEARNING_RATE_RANGE))))
        l2 = float(np.exp(rng.uniform(*np.log(L2_RANGE))))
        rate = float(rng.uniform(*DROPOUT_RANGE)) if dropout else 0.0
        losses = []
        for r in range(runs_per_trial):
            cfg = replace(
                base,
                learning_rate=lr,
                l2=l2,
                dropout_rate=rate,
                seed=int(run_seeds[trial * runs_per_trial + r]),
            )
            _, info = train(data, cfg, return_history=True)
            losses.append(info["best_val"])
        avg = float(np.mean(losses))
        history.append({"learning_rate": lr, "l2": l2, "dropout_rate": rate, "val_loss": avg})
        if avg < best_loss:
            best_loss = avg
            best_cfg = replace(base, learning_rate=lr, l2=l2, dropout_rate=rate)
    return best_cfg, history
