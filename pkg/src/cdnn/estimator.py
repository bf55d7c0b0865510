"""Two-stage controlled training for individual treatment effects.

Stage 1 regresses the outcome on covariates alone: the treatment input edges
are pinned to exactly zero, so the network learns the marginal outcome map
g(x) and its hidden layers learn a covariate encoding. Stage 2 introduces the
treatment in one of two ways:

* explicit_residual: a freshly initialized network regresses the stage-1
  residual y - g(x) on (x, t);
* freezing: the stage-1 network is reused with its first-layer covariate
  encoding frozen (weights and bias), deeper weights warm-started, and small
  random trainable treatment edges; it regresses the observed outcome y.

Either way the per-unit effect is the stage-2 prediction difference between
t=1 and t=0, averaged over an ensemble of members trained on separate
train/validation splits.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .data import Dataset
from .errors import ConfigError, DegenerateTreatmentError, ShapeError

VARIANTS = ("explicit_residual", "freezing")
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class CdnnConfig:
    """Architecture and training settings shared by both stages."""

    hidden_widths: tuple = (64, 64, 64)
    activation: str = "swish"
    concat_inputs: bool = False
    optimizer: str = "adaptive_moment"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 64
    patience: int = 25
    validation_fraction: float = 0.3
    ensemble_size: int = 3
    treatment_scale: float = 1e-2
    freeze_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ConfigError("ensemble size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation fraction must lie in [0, 1)")
        if self.freeze_depth < 1:
            raise ConfigError("freeze depth must be >= 1")
        if self.optimizer not in nn.OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.activation not in nn.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class Stage1Model:
    """Outcome model trained without treatment information."""

    network: nn.Network
    training_log: nn.TrainingLog

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        preds, _ = self.network.forward_batch(X, np.zeros(X.shape[0]))
        return preds

    def treatment_edges_zero(self):
        return all(np.all(w == 0.0) for _, w in self.network.treatment_weights())


@dataclass
class ResidualDataset:
    """A dataset paired with stage-1 residuals y - g(x)."""

    base: Dataset
    residuals: np.ndarray

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=float)
        if self.residuals.shape != (len(self.base),):
            raise ShapeError("residual vector length != dataset length")
        if not np.all(np.isfinite(self.residuals)):
            raise ShapeError("non-finite residuals")

    def __len__(self):
        return len(self.base)


@dataclass
class Stage2Model:
    """Treatment-aware model; predicts residuals or outcomes per variant."""

    variant: str
    network: nn.Network
    mask: nn.FreezeMask
    target_kind: str
    training_log: nn.TrainingLog

    def predict(self, X, t):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        preds, _ = self.network.forward_batch(X, np.full(X.shape[0], float(t)))
        return preds

    def ite(self, X):
        return self.predict(X, 1) - self.predict(X, 0)


@dataclass
class CdnnEstimator:
    """Ensemble of (stage 1, stage 2) pairs from separate train/val splits."""

    members: list
    variant: str
    config: CdnnConfig


def _as_arrays(data):
    return data.x, data.t.astype(float), data.y


def _member_rng(config, member, stream):
    ss = np.random.SeedSequence([int(config.seed), int(member), int(stream)])
    return np.random.default_rng(ss)


def _carve_validation(data, config, rng):
    n = len(data)
    n_val = int(np.floor(config.validation_fraction * n))
    if n_val == 0:
        return data, None
    perm = rng.permutation(n)
    return data.subset(perm[n_val:]), data.subset(perm[:n_val])


def _require_both_arms(data, context):
    treated, control = data.arm_counts()
    if treated == 0 or control == 0:
        raise DegenerateTreatmentError(f"{context}: both treatment arms are required")


def fit_stage1(data, config, validation=None, seed_stream=0):
    """Train the covariate-only outcome model.

    Treatment edges are initialized to exactly zero and frozen, so predictions
    cannot depend on the treatment input. With validation=None a validation
    part is carved from `data` per config.validation_fraction.
    """
    if len(data) < 2:
        raise ShapeError("need at least 2 samples")
    rng = _member_rng(config, seed_stream, 1)
    if validation is None:
        data, validation = _carve_validation(data, config, rng)
    net = nn.Network.build(
        data.d,
        config.hidden_widths,
        activation=config.activation,
        concat_inputs=config.concat_inputs,
        treatment_scale=0.0,
        rng=rng,
    )
    mask = nn.FreezeMask.none(net).freeze_treatment_edges(net)
    X, T, Y = _as_arrays(data)
    val = None if validation is None else _as_arrays(validation)
    log = nn.fit_network(
        net,
        mask,
        X,
        T,
        Y,
        rng=rng,
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        epochs=config.epochs,
        batch_size=config.batch_size,
        patience=config.patience,
        validation=val,
    )
    model = Stage1Model(net, log)
    assert model.treatment_edges_zero(), "treatment edges moved during stage 1"
    return model


def compute_residuals(model, data):
    """Residuals y - g(x) of a trained stage-1 model."""
    return ResidualDataset(data, data.y - model.predict(data.x))


def fit_stage2_explicit(residuals, config, validation=None, seed_stream=0):
    """Regress the stage-1 residual on (x, t) with a fresh network.

    All weights are re-initialized; treatment edges start at small random
    values and are trainable. validation, when given, is a ResidualDataset.
    """
    data = residuals.base
    _require_both_arms(data, "explicit-residual stage 2")
    rng = _member_rng(config, seed_stream, 2)
    if validation is None and config.validation_fraction > 0:
        n = len(data)
        n_val = int(np.floor(config.validation_fraction * n))
        perm = rng.permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        validation = ResidualDataset(data.subset(val_idx), residuals.residuals[val_idx])
        residuals = ResidualDataset(data.subset(train_idx), residuals.residuals[train_idx])
        data = residuals.base
    net = nn.Network.build(
        data.d,
        config.hidden_widths,
        activation=config.activation,
        concat_inputs=config.concat_inputs,
        treatment_scale=config.treatment_scale,
        rng=rng,
    )
    mask = nn.FreezeMask.none(net)
    val = None
    if validation is not None:
        val = (validation.base.x, validation.base.t.astype(float), validation.residuals)
    log = nn.fit_network(
        net,
        mask,
        data.x,
        data.t.astype(float),
        residuals.residuals,
        rng=rng,
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        epochs=config.epochs,
        batch_size=config.batch_size,
        patience=config.patience,
        validation=val,
    )
    return Stage2Model("explicit_residual", net, mask, "residual", log)


def fit_stage2_freezing(stage1, data, config, validation=None, seed_stream=0):
    """Reuse the stage-1 network with the covariate encoding frozen.

    The first-layer covariate weight block and bias are copied bitwise and
    frozen, deeper weights warm-start from stage 1 and stay trainable up to
    config.freeze_depth, and treatment edges are re-drawn small-random and
    trainable. The regression target is the observed outcome.

    With concat_inputs enabled (off by default) the raw covariates reach
    deeper layers alongside the frozen encoding; those re-injection weights
    warm-start and stay trainable, so prefer the default wiring when the
    frozen encoding should be the only covariate path.
    """
    _require_both_arms(data, "freezing stage 2")
    if stage1.network.covariate_width != data.d:
        raise ConfigError(
            f"stage-1 network expects {stage1.network.covariate_width} covariates, "
            f"data has {data.d}"
        )
    rng = _member_rng(config, seed_stream, 2)
    if validation is None:
        data, validation = _carve_validation(data, config, rng)

    net = stage1.network.clone()
    for i, _ in net.treatment_weights():
        row = net.treatment_input_row(i)
        draws = rng.uniform(-1.0, 1.0, size=net.layers[i].output_width)
        net.params[2 * i][row, :] = config.treatment_scale * draws

    mask = nn.FreezeMask.none(net).freeze_input_encoder(net)
    for layer in range(1, min(config.freeze_depth, net.n_layers - 1)):
        mask.freeze_layer(net, layer)

    X, T, Y = _as_arrays(data)
    val = None if validation is None else _as_arrays(validation)
    log = nn.fit_network(
        net,
        mask,
        X,
        T,
        Y,
        rng=rng,
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        epochs=config.epochs,
        batch_size=config.batch_size,
        patience=config.patience,
        validation=val,
    )
    return Stage2Model("freezing", net, mask, "outcome", log)


def fit(data, variant, config):
    """Train the full ensemble: k separate train/validation splits, two
    stages each."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    _require_both_arms(data, "fit")
    members = []
    for member in range(config.ensemble_size):
        try:
            rng = _member_rng(config, member, 0)
            train, validation = _carve_validation(data, config, rng)
            stage1 = fit_stage1(train, config, validation=validation, seed_stream=member)
            if variant == "explicit_residual":
                res_train = compute_residuals(stage1, train)
                res_val = None if validation is None else compute_residuals(stage1, validation)
                stage2 = fit_stage2_explicit(
                    res_train, config, validation=res_val, seed_stream=member
                )
            else:
                stage2 = fit_stage2_freezing(
                    stage1, train, config, validation=validation, seed_stream=member
                )
        except Exception as err:
            raise type(err)(f"ensemble member {member}: {err}") from err
        members.append((stage1, stage2))
    return CdnnEstimator(members, variant, config)


def predict_ite(estimator, x):
    """Per-unit effect: stage-2 scored at t=1 minus t=0, ensemble-averaged.

    Accepts one covariate vector (returns a float) or a matrix (returns an
    array).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    total = np.zeros(X.shape[0])
    for _, stage2 in estimator.members:
        total += stage2.ite(X)
    out = total / len(estimator.members)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# checkpointing


def _network_meta(net):
    return {
        "layers": [[s.input_width, s.output_width, s.activation] for s in net.layers],
        "covariate_width": net.covariate_width,
        "concat_inputs": net.concat_inputs,
    }


def save_checkpoint(estimator, path):
    """Serialize the ensemble to a single .npz file; round-trips bitwise."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "variant": estimator.variant,
        "config": asdict(estimator.config),
        "members": len(estimator.members),
        "stage1": [],
        "stage2": [],
    }
    arrays = {}
    for m, (s1, s2) in enumerate(estimator.members):
        meta["stage1"].append(_network_meta(s1.network))
        meta["stage2"].append({**_network_meta(s2.network), "target_kind": s2.target_kind})
        for k, p in enumerate(s1.network.params):
            arrays[f"m{m}.s1.p{k}"] = p
        for k, p in enumerate(s2.network.params):
            arrays[f"m{m}.s2.p{k}"] = p
        for k, mk in enumerate(s2.mask.arrays):
            arrays[f"m{m}.s2.mask{k}"] = mk
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)
    return path


def _rebuild_network(meta, params):
    layers = [nn.LayerSpec(i, o, a) for i, o, a in meta["layers"]]
    return nn.Network(layers, params, meta["covariate_width"], meta["concat_inputs"])


def load_checkpoint(path):
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {meta.get('format')!r}")
        cfg = meta["config"]
        cfg["hidden_widths"] = tuple(cfg["hidden_widths"])
        config = CdnnConfig(**cfg)
        members = []
        for m in range(meta["members"]):
            p1 = [blob[f"m{m}.s1.p{k}"] for k in range(2 * len(meta["stage1"][m]["layers"]))]
            net1 = _rebuild_network(meta["stage1"][m], p1)
            p2 = [blob[f"m{m}.s2.p{k}"] for k in range(2 * len(meta["stage2"][m]["layers"]))]
            net2 = _rebuild_network(meta["stage2"][m], p2)
            mask = nn.FreezeMask([blob[f"m{m}.s2.mask{k}"] for k in range(len(p2))])
            stage1 = Stage1Model(net1, nn.TrainingLog())
            stage2 = Stage2Model(
                meta["variant"], net2, mask, meta["stage2"][m]["target_kind"], nn.TrainingLog()
            )
            members.append((stage1, stage2))
    return CdnnEstimator(members, meta["variant"], config)
