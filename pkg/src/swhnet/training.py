"""Optimization loop: decoupled-weight-decay Adam, epoch-level validation,
early stopping on the average per-channel validation RMSE, and eval-mode
prediction.

The best checkpoint (lowest average validation RMSE across the four
channels) is returned, not the last; training is reproducible given the
seed since batch shuffling and dropout consume one explicit generator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamBag, count_params  # noqa: F401  (count_params re-exported)
from .config import TrainConfig
from .errors import ConfigError, ContractError
from .model import WaveHeightModel, batch_loss

HISTORY_FIELDS = ("epoch", "train_loss", "val_rmse_ch1", "val_rmse_ch2",
                  "val_rmse_ch3", "val_rmse_ch4", "val_rmse_avg")


@dataclass
class ModelDataset:
    """Model-ready arrays: DDM stacks, standardized APs, reference SWH."""

    ddms: np.ndarray        # (n, 4, 3, W, H)
    aps: np.ndarray         # (n, 4, K_ap), standardized
    refs: np.ndarray        # (n, 4)
    timestamps: np.ndarray  # (n,)
    lats: np.ndarray        # (n, 4) raw specular latitudes
    lons: np.ndarray        # (n, 4)

    def __len__(self) -> int:
        return self.refs.shape[0]


def to_model_dataset(samples, stats: dict, use_wind: bool) -> ModelDataset:
    """Convert canonical samples into standardized model-ready arrays.

    With use_wind the wind column is appended before standardization;
    samples lacking wind speed then raise a config error.
    """
    from .pipeline import standardize_ap  # local import to avoid a cycle

    n = len(samples)
    if n == 0:
        shape = (0, 4, 3, 1, 1)
        return ModelDataset(ddms=np.zeros(shape), aps=np.zeros((0, 4, 9 + int(use_wind))),
                            refs=np.zeros((0, 4)), timestamps=np.zeros(0),
                            lats=np.zeros((0, 4)), lons=np.zeros((0, 4)))
    w, h = samples[0].channels[0].ddms.shape[1:]
    k = 9 + int(use_wind)
    ddms = np.zeros((n, 4, 3, w, h))
    aps = np.zeros((n, 4, k))
    refs = np.zeros((n, 4))
    timestamps = np.zeros(n)
    lats = np.zeros((n, 4))
    lons = np.zeros((n, 4))
    for i, s in enumerate(samples):
        timestamps[i] = s.timestamp
        for c, ch in enumerate(s.channels):
            ddms[i, c] = ch.ddms
            vec = list(ch.aps)
            if use_wind:
                if ch.wind_speed is None:
                    raise ConfigError("use_wind=true but the dataset has no wind_speed column")
                vec.append(ch.wind_speed)
            aps[i, c] = vec
            refs[i, c] = ch.swh_ref
            lats[i, c] = ch.sp_lat
            lons[i, c] = ch.sp_lon
    aps = standardize_ap(aps, stats)
    return ModelDataset(ddms=ddms, aps=aps, refs=refs, timestamps=timestamps, lats=lats, lons=lons)


@dataclass
class CheckpointMeta:
    epoch: int
    val_rmse: list[float]
    val_rmse_avg: float
    config_hash: str = ""

    def __post_init__(self):
        expected = float(np.mean(self.val_rmse))
        if abs(self.val_rmse_avg - expected) > 1e-12:
            raise ContractError("val_rmse_avg must equal the mean of the channel RMSEs")


@dataclass
class TrainResult:
    history: list[dict]
    best_state: dict[str, np.ndarray]
    best_meta: CheckpointMeta
    stopped_epoch: int


class AdamW:
    """Adam with decoupled weight decay.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """

    def __init__(self, bag: ParamBag, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.bag = bag
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in bag.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in bag.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.bag.items():
            g = p.grad
            if g is None:
                raise ContractError(f"adamw step with missing gradient for {name}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.tensor.data -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)


class EarlyStopper:
    """Track the best metric; signal stop after `patience` epochs without
    strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, value: float, epoch: int) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience


def predict(model: WaveHeightModel, dataset: ModelDataset) -> np.ndarray:
    """Deterministic eval-mode predictions, shape (n, 4)."""
    if dataset.aps.shape[0] and dataset.aps.shape[2] != model.cfg.k_ap:
        raise ConfigError(
            f"dataset has {dataset.aps.shape[2]} AP columns but the model expects "
            f"{model.cfg.k_ap} (use_wind={model.cfg.use_wind})"
        )
    out = np.zeros((len(dataset), 4))
    for i in range(len(dataset)):
        out[i] = model.predict_sample(dataset.ddms[i], dataset.aps[i])
    return out


def validation_rmse(model: WaveHeightModel, dataset: ModelDataset) -> np.ndarray:
    preds = predict(model, dataset)
    return np.sqrt(np.mean((preds - dataset.refs) ** 2, axis=0))


def train(model: WaveHeightModel, train_set: ModelDataset, val_set: ModelDataset,
          tcfg: TrainConfig, config_hash: str = "", log=None,
          max_steps: int | None = None) -> TrainResult:
    """Run the optimization loop and return history plus the best checkpoint.

    `max_steps` optionally caps the total number of optimizer steps
    (used by the desk-scale overfit checks); epochs still delimit
    validation points.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ContractError("train() requires non-empty train and validation sets")
    opt = AdamW(model.bag, lr=tcfg.lr, weight_decay=tcfg.weight_decay,
                beta1=tcfg.adam_beta1, beta2=tcfg.adam_beta2, eps=tcfg.adam_eps)
    rng = np.random.default_rng([tcfg.seed, 1])
    stopper = EarlyStopper(tcfg.patience)
    history: list[dict] = []
    best_state = model.bag.state_arrays()
    best_meta = None
    steps_done = 0

    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            if max_steps is not None and steps_done >= max_steps:
                break
            chunk = order[start:start + tcfg.batch_size]
            model.bag.zero_grad()
            preds = [model.forward(train_set.ddms[i], train_set.aps[i], train=True, rng=rng)
                     for i in chunk]
            loss = batch_loss(preds, train_set.refs[chunk], tcfg.delta)
            loss.backward()
            opt.step()
            steps_done += 1
            epoch_loss += loss.item() * len(chunk)
        train_loss = epoch_loss / len(order)
        rmse = validation_rmse(model, val_set)
        avg = float(rmse.mean())
        history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_rmse_ch1": float(rmse[0]),
            "val_rmse_ch2": float(rmse[1]),
            "val_rmse_ch3": float(rmse[2]),
            "val_rmse_ch4": float(rmse[3]),
            "val_rmse_avg": avg,
        })
        if log is not None:
            log(f"epoch {epoch}: train_loss={train_loss:.6f} val_rmse_avg={avg:.6f}")
        improved, stop = stopper.update(avg, epoch)
        if improved:
            best_state = model.bag.state_arrays()
            best_meta = CheckpointMeta(epoch=epoch, val_rmse=[float(r) for r in rmse],
                                       val_rmse_avg=avg, config_hash=config_hash)
        if stop or (max_steps is not None and steps_done >= max_steps):
            break

    if best_meta is None:  # no epoch improved on +inf is impossible, but stay safe
        raise ContractError("training produced no validation measurements")
    model.bag.load_state_arrays(best_state)
    return TrainResult(history=history, best_state=best_state,
                       best_meta=best_meta, stopped_epoch=history[-1]["epoch"])


def write_history(path: str, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in HISTORY_FIELDS})
