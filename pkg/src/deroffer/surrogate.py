"""MILP-representable value-function surrogate.

Architecture: per-hour tokens for the first-stage commitment and for the
availability realization run through two small ReLU encoders, are sum-pooled
into fixed-width embeddings, and a value head maps the concatenated
embeddings to the predicted cost c(omega)'x + recourse.  Sum pooling over
canonically sorted tokens makes the encoders exactly permutation invariant,
bitwise.  Training is plain momentum gradient descent on z-scored features
and labels; labels always come from exact recourse LP solves.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import backends
from .compact import CompactProblem, build_compact, recourse_lp
from .uncertainty import BudgetedUncertaintySet

CHECKPOINT_VERSION = 1

X_FEATURES = (
    "commitment",
    "price",
    "revenue",
    "cleared_sum",
    "cleared_max",
    "capacity",
    "load",
    "hour_sin",
    "hour_cos",
)
XI_FEATURES = (
    "availability",
    "deviation_cap",
    "nominal",
    "deficit",
    "coupling_sum",
    "hour_sin",
    "hour_cos",
)


class TrainingDivergedError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# tokens
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class XTokenContext:
    """Everything the commitment tokens need from one (or a blended) scenario."""

    cleared: sp.csr_matrix  # T x n clearing indicators (fractional if blended)
    prices: np.ndarray  # per-hour day-ahead price
    q_max: np.ndarray
    load: np.ndarray

    @staticmethod
    def from_compact(compact: CompactProblem) -> "XTokenContext":
        loads = _loads_from_rows(compact)
        return XTokenContext(
            cleared=compact.cleared,
            prices=compact.trajectory,
            q_max=compact.q_max,
            load=loads,
        )

    @staticmethod
    def from_compacts(compacts) -> "XTokenContext":
        """Expectation-blended context used by the MILP encodings."""
        total = sum(c.weight for c in compacts)
        cleared = sum((c.weight / total) * c.cleared for c in compacts)
        prices = sum((c.weight / total) * c.trajectory for c in compacts)
        return XTokenContext(
            cleared=sp.csr_matrix(cleared),
            prices=prices,
            q_max=compacts[0].q_max,
            load=_loads_from_rows(compacts[0]),
        )

    @property
    def horizon(self) -> int:
        return self.prices.size


def _loads_from_rows(compact: CompactProblem) -> np.ndarray:
    rows = [i for i, f in enumerate(compact.row_families) if f == "rt_lo"]
    return compact.g[rows]


def _hour_angles(T: int) -> tuple[np.ndarray, np.ndarray]:
    ang = 2.0 * np.pi * np.arange(T) / max(T, 1)
    return np.sin(ang), np.cos(ang)


def tokenize_x(context, x) -> np.ndarray:
    """One token per hourly commitment; order carries no meaning.

    The recourse polyhedron couples to x only through the cleared quantity
    per hour, so that quantity is the token value; the remaining features
    are objective weights, constraint-coefficient aggregates, and positional
    encodings.
    """
    if isinstance(context, CompactProblem):
        context = XTokenContext.from_compact(context)
    x = np.asarray(x, dtype=float)
    q = context.cleared @ x
    T = context.horizon
    sin, cos = _hour_angles(T)
    cleared_dense = np.asarray(context.cleared.todense())
    tokens = np.column_stack(
        [
            q,
            context.prices,
            context.prices * q,
            cleared_dense.sum(axis=1),
            cleared_dense.max(axis=1, initial=0.0),
            context.q_max,
            context.load,
            sin,
            cos,
        ]
    )
    return tokens


def tokenize_xi(uncertainty: BudgetedUncertaintySet, xi) -> np.ndarray:
    """One token per uncertain hour: value, set geometry, position."""
    xi = np.asarray(xi, dtype=float)
    T = uncertainty.dim
    sin, cos = _hour_angles(T)
    coupling = -np.ones(T)  # availability enters one recourse row per hour
    tokens = np.column_stack(
        [
            xi,
            uncertainty.xi_hat,
            uncertainty.xi_bar,
            uncertainty.xi_bar - xi,
            coupling,
            sin,
            cos,
        ]
    )
    return tokens


def canonical_order(tokens: np.ndarray) -> np.ndarray:
    """Deterministic token order: lexicographic over the feature columns."""
    keys = tuple(tokens[:, j] for j in range(tokens.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


def canonicalize(tokens: np.ndarray) -> np.ndarray:
    return tokens[canonical_order(tokens)]


# ----------------------------------------------------------------------
# networks
# ----------------------------------------------------------------------

@dataclass
class MlpParams:
    """Dense ReLU MLP: hidden layers ReLU, output identity."""

    weights: list  # weights[i]: (out_i, in_i)
    biases: list

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def validate(self):
        for i in range(len(self.weights) - 1):
            if self.weights[i + 1].shape[1] != self.weights[i].shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")
        for W, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
            if b.shape != (W.shape[0],):
                raise ValueError("bias length must match layer output width")


def init_mlp(widths, rng) -> MlpParams:
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases)


@dataclass
class SurrogateModel:
    phi_x: MlpParams
    phi_xi: MlpParams
    phi_value: MlpParams
    x_mean: np.ndarray
    x_scale: np.ndarray
    xi_mean: np.ndarray
    xi_scale: np.ndarray
    label_mean: float
    label_scale: float

    def __post_init__(self):
        self.phi_x.validate()
        self.phi_xi.validate()
        self.phi_value.validate()
        ex = self.phi_x.weights[-1].shape[0]
        exi = self.phi_xi.weights[-1].shape[0]
        if ex != exi:
            raise ValueError("embedding widths must match")
        if self.phi_value.weights[0].shape[1] != 2 * ex:
            raise ValueError("value head input must be twice the embedding width")

    @property
    def embedding_width(self) -> int:
        return self.phi_x.weights[-1].shape[0]

    def schema_hash(self) -> str:
        payload = json.dumps(
            {
                "x_features": X_FEATURES,
                "xi_features": XI_FEATURES,
                "x_widths": self.phi_x.widths,
                "xi_widths": self.phi_xi.widths,
                "value_widths": self.phi_value.widths,
            }
        )
        return hashlib.sha1(payload.encode()).hexdigest()[:16]


def normalize_tokens(tokens, mean, scale) -> np.ndarray:
    return (tokens - mean) / scale


def embed(model: SurrogateModel, tokens: np.ndarray, which: str) -> np.ndarray:
    """Sum-pooled encoder output; exactly permutation invariant.

    Tokens are sorted canonically before summation so invariance holds in
    floating point, not just mathematically.  An empty token set embeds to
    the all-zero pooled vector.
    """
    if which == "x":
        net, mean, scale = model.phi_x, model.x_mean, model.x_scale
    elif which == "xi":
        net, mean, scale = model.phi_xi, model.xi_mean, model.xi_scale
    else:
        raise ValueError("which must be 'x' or 'xi'")
    tokens = np.asarray(tokens, dtype=float)
    if tokens.ndim != 2 or (tokens.size and tokens.shape[1] != mean.size):
        raise ValueError(
            f"{which} tokens must be (count, {mean.size}), got {tokens.shape}"
        )
    if tokens.shape[0] == 0:
        return np.zeros(model.embedding_width)
    tokens = canonicalize(tokens)
    per_token = net.forward(normalize_tokens(tokens, mean, scale))
    out = np.zeros(model.embedding_width)
    for row in per_token:  # fixed-order summation for bitwise reproducibility
        out = out + row
    return out


def forward_value(model: SurrogateModel, x_tokens, xi_tokens) -> float:
    """Predicted c(omega)'x + recourse cost, in dollars."""
    ex = embed(model, x_tokens, "x")
    exi = embed(model, xi_tokens, "xi")
    raw = model.phi_value.forward(np.concatenate([ex, exi]))
    return float(raw[0] * model.label_scale + model.label_mean)


# ----------------------------------------------------------------------
# dataset
# ----------------------------------------------------------------------

@dataclass
class LabeledDataset:
    x_tokens: np.ndarray  # (N, T, fx), canonicalized
    xi_tokens: np.ndarray  # (N, T, fxi), canonicalized
    labels: np.ndarray  # exact LP optima ($), includes the c(omega)'x term
    is_validation: np.ndarray  # bool per record
    x_raw: np.ndarray  # (N, n)
    xi_raw: np.ndarray  # (N, p)
    scenario_index: np.ndarray  # (N,)

    @property
    def size(self) -> int:
        return self.labels.size

    def split(self, which: str) -> "LabeledDataset":
        mask = self.is_validation if which == "validation" else ~self.is_validation
        return LabeledDataset(
            x_tokens=self.x_tokens[mask],
            xi_tokens=self.xi_tokens[mask],
            labels=self.labels[mask],
            is_validation=self.is_validation[mask],
            x_raw=self.x_raw[mask],
            xi_raw=self.xi_raw[mask],
            scenario_index=self.scenario_index[mask],
        )


def _record_in_validation(seed: int, index: int, val_share: float = 0.2) -> bool:
    digest = hashlib.sha1(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:4], "big") / 2**32 < val_share


def sample_first_stage(instance, rng) -> np.ndarray:
    """Uniform draw from X: an independent Dirichlet simplex per hour."""
    parts = []
    for t, grid in enumerate(instance.price_grid):
        k = grid.size
        gamma = rng.gamma(1.0, 1.0, k + 1)
        parts.append(instance.q_max[t] * gamma[:k] / gamma.sum())
    return np.concatenate(parts)


def sample_xi(uncertainty: BudgetedUncertaintySet, rng, extreme: bool) -> np.ndarray:
    support = uncertainty.support()
    z = np.zeros(uncertainty.dim)
    if support.size:
        if extreme:
            budget = int(rng.integers(0, min(uncertainty.gamma, support.size) + 1))
            chosen = rng.choice(support, size=budget, replace=False)
            z[chosen] = 1.0
        else:
            z[support] = rng.uniform(0.0, 1.0, support.size)
            total = z.sum()
            if total > uncertainty.gamma:
                z *= uncertainty.gamma / total
            z *= rng.uniform(0.0, 1.0)
    return uncertainty.realization(z)


def generate_dataset(
    instance,
    scenarios,
    n_x: int = 5,
    n_xi_per_x: int = 20,
    seed: int = 0,
    backend=None,
) -> LabeledDataset:
    """Exact-labeled (x, xi) samples across the scenario trajectories.

    For every trajectory: ``n_x`` first-stage decisions drawn uniformly from
    X, each paired with ``n_xi_per_x`` realizations (half vertices, half
    interior).  Labels are c(omega)'x plus the exact recourse optimum; the
    80/20 train/validation split keys on a stable record hash.  Labeling is
    record-independent, so it parallelizes trivially if ever needed.
    """
    if n_x <= 0 or n_xi_per_x <= 0:
        raise ValueError("sample counts must be positive")
    backend = backend or backends.default_backend()
    if instance.uncertainty is None:
        raise ValueError("instance carries no uncertainty set")
    uncertainty = instance.uncertainty
    rng = np.random.default_rng(seed)

    xt, xit, labels, xraws, xiraws, scen_idx = [], [], [], [], [], []
    for w in range(scenarios.count):
        compact = build_compact(instance, scenarios.trajectories[w])
        ctx = XTokenContext.from_compact(compact)
        for _ in range(n_x):
            x = sample_first_stage(instance, rng)
            x_tok = canonicalize(tokenize_x(ctx, x))
            cost_x = compact.first_stage_cost(x)
            for j in range(n_xi_per_x):
                xi = sample_xi(uncertainty, rng, extreme=(j % 2 == 0))
                try:
                    sol = recourse_lp(compact, x, xi, backend=backend)
                except Exception as exc:
                    raise RuntimeError(
                        "labeling LP failed for x="
                        + np.array2string(x, precision=6)
                        + " xi="
                        + np.array2string(xi, precision=6)
                    ) from exc
                xt.append(x_tok)
                xit.append(canonicalize(tokenize_xi(uncertainty, xi)))
                labels.append(cost_x + sol.objective)
                xraws.append(x)
                xiraws.append(xi)
                scen_idx.append(w)

    n = len(labels)
    is_val = np.array([_record_in_validation(seed, i) for i in range(n)])
    return LabeledDataset(
        x_tokens=np.stack(xt),
        xi_tokens=np.stack(xit),
        labels=np.asarray(labels),
        is_validation=is_val,
        x_raw=np.stack(xraws),
        xi_raw=np.stack(xiraws),
        scenario_index=np.asarray(scen_idx),
    )


def verify_labels(dataset, instance, scenarios, fraction=0.01, seed=0, backend=None):
    """Re-solve a sample of labels through a permuted model; returns max error.

    The permutation reorders recourse variables, forcing a different pivot
    path while leaving the optimum unchanged, so it is an independent check
    of every label it touches.
    """
    backend = backend or backends.default_backend()
    rng = np.random.default_rng(seed)
    n = dataset.size
    count = max(1, int(np.ceil(fraction * n)))
    picks = rng.choice(n, size=min(count, n), replace=False)
    worst = 0.0
    compacts = {}
    for i in picks:
        w = int(dataset.scenario_index[i])
        if w not in compacts:
            compacts[w] = build_compact(instance, scenarios.trajectories[w])
        compact = compacts[w]
        perm = rng.permutation(compact.m)
        model = compact.recourse_template().clone_with_rhs(
            compact.recourse_rhs(dataset.x_raw[i], dataset.xi_raw[i])
        )
        permuted = _permute_model_columns(model, perm)
        out = backend.solve(permuted)
        if not out.is_optimal:
            raise RuntimeError("verification LP failed")
        redo = out.objective + compact.first_stage_cost(dataset.x_raw[i])
        worst = max(worst, abs(redo - dataset.labels[i]) / (1.0 + abs(dataset.labels[i])))
    return worst


def _permute_model_columns(model, perm):
    from .linmodel import GE, INF, LinearModel

    inv = np.argsort(perm)
    permuted = LinearModel(sense=model.sense)
    obj = model.obj_array()[perm]
    lb = model.lb_array()[perm]
    ub = model.ub_array()[perm]
    for j in range(model.num_vars):
        permuted.add_var(lb=lb[j], ub=ub[j], obj=obj[j])
    A = model.matrix().tocsc()[:, perm].tocsr()
    permuted.add_rows_bulk(A, model.row_sense, model.rhs_array())
    return permuted


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

@dataclass
class SurrogateConfig:
    x_widths: tuple = (64, 8)
    xi_widths: tuple = (64, 8)
    value_widths: tuple = (8,)

    def build(self, fx: int, fxi: int, rng) -> tuple[MlpParams, MlpParams, MlpParams]:
        # the trainer's backprop is written for one hidden layer per net
        if len(self.x_widths) != 2 or len(self.xi_widths) != 2 or len(self.value_widths) != 1:
            raise ValueError(
                "training supports [hidden, embedding] encoders and a "
                "single-hidden-layer value head"
            )
        if self.x_widths[-1] != self.xi_widths[-1]:
            raise ValueError("encoder embedding widths must match")
        emb = self.x_widths[-1]
        phi_x = init_mlp([fx, *self.x_widths], rng)
        phi_xi = init_mlp([fxi, *self.xi_widths], rng)
        phi_value = init_mlp([2 * emb, *self.value_widths, 1], rng)
        return phi_x, phi_xi, phi_value


@dataclass
class TrainConfig:
    epochs: int = 500
    validate_every: int = 10
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    arch: SurrogateConfig = field(default_factory=SurrogateConfig)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = np.inf


def _norm_stats(arr, axis):
    mean = arr.mean(axis=axis)
    scale = arr.std(axis=axis)
    return mean, np.where(scale < 1e-12, 1.0, scale)


def _forward_batch(params, xb, xib):
    (W1x, b1x, W2x, b2x, W1s, b1s, W2s, b2s, W1v, b1v, W2v, b2v) = params
    ax = xb @ W1x.T + b1x
    hx = np.maximum(ax, 0.0)
    px = (hx @ W2x.T + b2x).sum(axis=1)
    as_ = xib @ W1s.T + b1s
    hs = np.maximum(as_, 0.0)
    ps = (hs @ W2s.T + b2s).sum(axis=1)
    u = np.concatenate([px, ps], axis=1)
    av = u @ W1v.T + b1v
    hv = np.maximum(av, 0.0)
    out = hv @ W2v.T + b2v
    cache = (xb, ax, hx, xib, as_, hs, u, av, hv)
    return out[:, 0], cache


def _backward_batch(params, cache, dout):
    (W1x, b1x, W2x, b2x, W1s, b1s, W2s, b2s, W1v, b1v, W2v, b2v) = params
    xb, ax, hx, xib, as_, hs, u, av, hv = cache
    B = dout.size
    dout = dout[:, None]
    gW2v = dout.T @ hv
    gb2v = dout.sum(axis=0)
    dhv = dout @ W2v
    dav = dhv * (av > 0)
    gW1v = dav.T @ u
    gb1v = dav.sum(axis=0)
    du = dav @ W1v
    e = W2x.shape[0]
    dpx, dps = du[:, :e], du[:, e:]
    # pooled sums broadcast back over tokens
    dex = np.repeat(dpx[:, None, :], xb.shape[1], axis=1)
    des = np.repeat(dps[:, None, :], xib.shape[1], axis=1)
    gW2x = np.einsum("bte,btk->ek", dex, hx)
    gb2x = dex.sum(axis=(0, 1))
    dhx = np.einsum("bte,ek->btk", dex, W2x)
    dax = dhx * (ax > 0)
    gW1x = np.einsum("btk,btf->kf", dax, xb)
    gb1x = dax.sum(axis=(0, 1))
    gW2s = np.einsum("bte,btk->ek", des, hs)
    gb2s = des.sum(axis=(0, 1))
    dhs = np.einsum("bte,ek->btk", des, W2s)
    das = dhs * (as_ > 0)
    gW1s = np.einsum("btk,btf->kf", das, xib)
    gb1s = das.sum(axis=(0, 1))
    return (gW1x, gb1x, gW2x, gb2x, gW1s, gb1s, gW2s, gb2s, gW1v, gb1v, gW2v, gb2v)


def _params_of(phi_x, phi_xi, phi_value):
    return (
        phi_x.weights[0], phi_x.biases[0], phi_x.weights[1], phi_x.biases[1],
        phi_xi.weights[0], phi_xi.biases[0], phi_xi.weights[1], phi_xi.biases[1],
        phi_value.weights[0], phi_value.biases[0], phi_value.weights[1], phi_value.biases[1],
    )


def loss_and_grads(params, xb, xib, yb):
    """Mean-squared error on normalized labels plus its exact gradient."""
    pred, cache = _forward_batch(params, xb, xib)
    resid = pred - yb
    loss = float(np.mean(resid**2))
    dout = (2.0 / yb.size) * resid
    grads = _backward_batch(params, cache, dout)
    return loss, grads


def train(dataset: LabeledDataset, config: TrainConfig | None = None):
    """Momentum gradient descent; returns (model, history).

    The checkpoint with the smallest mean-absolute validation error (in
    dollars) wins.  Deterministic for a fixed seed: initialization, batch
    shuffles, and summation order are all seeded or fixed.
    """
    config = config or TrainConfig()
    train_split = dataset.split("train")
    val_split = dataset.split("validation")
    if train_split.size == 0 or val_split.size == 0:
        raise ValueError("both dataset splits must be nonempty")

    rng = np.random.default_rng(config.seed)
    fx = dataset.x_tokens.shape[2]
    fxi = dataset.xi_tokens.shape[2]
    phi_x, phi_xi, phi_value = config.arch.build(fx, fxi, rng)

    x_mean, x_scale = _norm_stats(
        train_split.x_tokens.reshape(-1, fx), axis=0
    )
    xi_mean, xi_scale = _norm_stats(
        train_split.xi_tokens.reshape(-1, fxi), axis=0
    )
    y_mean, y_scale = _norm_stats(train_split.labels, axis=0)
    y_scale = float(y_scale) if y_scale > 1e-12 else 1.0
    y_mean = float(y_mean)

    xb_all = (train_split.x_tokens - x_mean) / x_scale
    xib_all = (train_split.xi_tokens - xi_mean) / xi_scale
    yb_all = (train_split.labels - y_mean) / y_scale
    xv = (val_split.x_tokens - x_mean) / x_scale
    xiv = (val_split.xi_tokens - xi_mean) / xi_scale
    yv = (val_split.labels - y_mean) / y_scale

    params = list(_params_of(phi_x, phi_xi, phi_value))
    velocity = [np.zeros_like(p) for p in params]
    history = TrainHistory()
    best_params = [p.copy() for p in params]

    n = train_split.size
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(
                tuple(params), xb_all[idx], xib_all[idx], yb_all[idx]
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}; "
                    f"lr={config.learning_rate}, batch={config.batch_size}"
                )
            epoch_loss += loss * idx.size
            for i, g in enumerate(grads):
                velocity[i] = config.momentum * velocity[i] - config.learning_rate * g
                params[i] = params[i] + velocity[i]
        if epoch % config.validate_every == 0 or epoch == config.epochs:
            pred_val, _ = _forward_batch(tuple(params), xv, xiv)
            val_mse = float(np.mean((pred_val - yv) ** 2))
            val_mae = float(np.mean(np.abs(pred_val - yv))) * y_scale
            history.epochs.append(epoch)
            history.train_mse.append(epoch_loss / n)
            history.val_mse.append(val_mse)
            history.val_mae.append(val_mae)
            if val_mae < history.best_val_mae:
                history.best_val_mae = val_mae
                history.best_epoch = epoch
                best_params = [p.copy() for p in params]

    (W1x, b1x, W2x, b2x, W1s, b1s, W2s, b2s, W1v, b1v, W2v, b2v) = best_params
    model = SurrogateModel(
        phi_x=MlpParams(weights=[W1x, W2x], biases=[b1x, b2x]),
        phi_xi=MlpParams(weights=[W1s, W2s], biases=[b1s, b2s]),
        phi_value=MlpParams(weights=[W1v, W2v], biases=[b1v, b2v]),
        x_mean=x_mean,
        x_scale=x_scale,
        xi_mean=xi_mean,
        xi_scale=xi_scale,
        label_mean=y_mean,
        label_scale=y_scale,
    )
    return model, history


def validation_report(model: SurrogateModel, dataset: LabeledDataset) -> dict:
    """MAE/MSE and normalized mean relative error on the validation split."""
    val = dataset.split("validation")
    preds = np.array(
        [forward_value(model, val.x_tokens[i], val.xi_tokens[i]) for i in range(val.size)]
    )
    err = preds - val.labels
    return {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mean_relative_error": float(
            np.mean(np.abs(err)) / max(np.mean(np.abs(val.labels)), 1e-12)
        ),
        "count": int(val.size),
    }


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------

def save_model(model: SurrogateModel, path) -> None:
    header = json.dumps(
        {
            "version": CHECKPOINT_VERSION,
            "schema_hash": model.schema_hash(),
            "x_widths": model.phi_x.widths,
            "xi_widths": model.phi_xi.widths,
            "value_widths": model.phi_value.widths,
        }
    )
    arrays = {"header": np.frombuffer(header.encode(), dtype=np.uint8)}
    for name, net in (("x", model.phi_x), ("xi", model.phi_xi), ("v", model.phi_value)):
        for i, (W, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}_W{i}"] = W
            arrays[f"{name}_b{i}"] = b
    arrays["x_mean"] = model.x_mean
    arrays["x_scale"] = model.x_scale
    arrays["xi_mean"] = model.xi_mean
    arrays["xi_scale"] = model.xi_scale
    arrays["label_stats"] = np.array([model.label_mean, model.label_scale])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> SurrogateModel:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")

        def net(prefix, n_layers):
            return MlpParams(
                weights=[data[f"{prefix}_W{i}"] for i in range(n_layers)],
                biases=[data[f"{prefix}_b{i}"] for i in range(n_layers)],
            )

        model = SurrogateModel(
            phi_x=net("x", len(header["x_widths"]) - 1),
            phi_xi=net("xi", len(header["xi_widths"]) - 1),
            phi_value=net("v", len(header["value_widths"]) - 1),
            x_mean=data["x_mean"],
            x_scale=data["x_scale"],
            xi_mean=data["xi_mean"],
            xi_scale=data["xi_scale"],
            label_mean=float(data["label_stats"][0]),
            label_scale=float(data["label_stats"][1]),
        )
    if model.schema_hash() != header["schema_hash"]:
        raise ValueError("checkpoint schema hash does not match this build")
    return model


def save_dataset_csv(dataset: LabeledDataset, path) -> None:
    """Columnar CSV: one row per record, token features flattened."""
    N, T, fx = dataset.x_tokens.shape
    fxi = dataset.xi_tokens.shape[2]
    cols = ["label", "is_validation", "scenario_index"]
    cols += [f"x_t{t}_{name}" for t in range(T) for name in X_FEATURES[:fx]]
    cols += [f"xi_t{t}_{name}" for t in range(T) for name in XI_FEATURES[:fxi]]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(N):
            row = [f"{dataset.labels[i]:.12g}", str(int(dataset.is_validation[i])),
                   str(int(dataset.scenario_index[i]))]
            row += [f"{v:.12g}" for v in dataset.x_tokens[i].ravel()]
            row += [f"{v:.12g}" for v in dataset.xi_tokens[i].ravel()]
            fh.write(",".join(row) + "\n")
