"""Noise-prediction training: MSE on sampled noise with AdamW, per-seed
determinism, best-validation checkpointing, and a finite-difference
gradient audit.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .diffusion import NoiseSchedule, cosine_schedule, forward_noise
from .unet import ConditionalUNet1D

__all__ = [
    "PolicyConfig",
    "Checkpoint",
    "build_model",
    "train",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "make_predictor",
]

_DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class PolicyConfig:
    """Training-time parameters; keys follow the experiment-table symbols."""

    lr: float = 1e-4
    wd: float = 1e-6
    t_o_p: int = 1
    t_o_f: int = 1
    t_p: int = 8
    k: int = 128
    schedule_s: float = 0.008
    channels: tuple[int, int] = (32, 64)
    kernel: int = 5
    groups: int = 8
    temb_dim: int = 64
    cond_dim: int = 128
    batch_size: int = 256
    epochs: int = 240
    val_fraction: float = 0.1
    dtype: str = "float64"
    ema: bool = False
    ema_decay: float = 0.999
    num_threads: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.t_o_p < 1 or self.t_o_f < 0 or self.t_p < 1 or self.k < 1:
            raise ValueError("horizons must satisfy t_o_p>=1, t_o_f>=0, t_p>=1, k>=1")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def obs_dim(self) -> int:
        return 9 * self.t_o_p + 6 * self.t_o_f

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: PolicyConfig
    norm_stats_hash: str
    best_val_loss: float
    best_epoch: int
    history: np.ndarray  # (epochs, 3): epoch, train_mse, val_mse


def build_model(config: PolicyConfig) -> ConditionalUNet1D:
    torch.manual_seed(config.seed)
    model = ConditionalUNet1D(
        action_dim=9,
        obs_dim=config.obs_dim,
        channels=config.channels,
        kernel=config.kernel,
        groups=config.groups,
        temb_dim=config.temb_dim,
        cond_dim=config.cond_dim,
    )
    return model.to(_DTYPES[config.dtype])


def _mse(model, obs_t, ak_t, k_t, eps_t) -> torch.Tensor:
    return torch.mean((model(ak_t, obs_t, k_t) - eps_t) ** 2)


def train(
    train_obs: np.ndarray,
    train_actions: np.ndarray,
    val_obs: np.ndarray,
    val_actions: np.ndarray,
    config: PolicyConfig,
    norm_stats_hash: str = "",
) -> Checkpoint:
    """Minimize E||eps - eps_theta(O, A^k, k)||^2 and keep the best-val epoch.

    Noising steps are drawn uniformly from [1, K] per sample. Validation
    uses a noise draw fixed at startup so the per-epoch comparison is
    well-conditioned. Fully deterministic for a given (data, config).
    """
    if len(train_obs) == 0:
        raise ValueError("empty training set")
    torch.set_num_threads(config.num_threads)
    torch.use_deterministic_algorithms(True)
    dtype = _DTYPES[config.dtype]
    rng = np.random.default_rng(config.seed)
    model = build_model(config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.wd)
    schedule = cosine_schedule(config.k, config.schedule_s)

    if len(val_obs) == 0:
        val_obs, val_actions = train_obs, train_actions
    val_k = rng.integers(1, config.k + 1, size=len(val_obs))
    val_eps = rng.standard_normal(val_actions.shape)
    val_ak = forward_noise(val_actions, val_k[:, None, None], val_eps, schedule)
    val_t = tuple(
        torch.as_tensor(v, dtype=dtype) for v in (val_obs, val_ak, val_eps)
    ) + (torch.as_tensor(val_k),)

    ema_params = (
        {n: p.detach().clone() for n, p in model.named_parameters()} if config.ema else None
    )

    n = len(train_obs)
    best_val = np.inf
    best_epoch = -1
    best_state: dict[str, np.ndarray] = {}
    history = np.zeros((config.epochs, 3))
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            a0 = train_actions[idx]
            k_b = rng.integers(1, config.k + 1, size=len(idx))
            eps = rng.standard_normal(a0.shape)
            ak = forward_noise(a0, k_b[:, None, None], eps, schedule)
            loss = _mse(
                model,
                torch.as_tensor(train_obs[idx], dtype=dtype),
                torch.as_tensor(ak, dtype=dtype),
                torch.as_tensor(k_b),
                torch.as_tensor(eps, dtype=dtype),
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if ema_params is not None:
                with torch.no_grad():
                    for name, p in model.named_parameters():
                        ema_params[name].mul_(config.ema_decay).add_(
                            p, alpha=1.0 - config.ema_decay
                        )
            loss_val = float(loss.detach())
            if not np.isfinite(loss_val):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {n_batches} "
                    f"(lr={config.lr}, dtype={config.dtype})"
                )
            epoch_loss += loss_val
            n_batches += 1

        eval_model = model
        swapped = None
        if ema_params is not None:
            swapped = {n_: p.detach().clone() for n_, p in model.named_parameters()}
            with torch.no_grad():
                for name, p in model.named_parameters():
                    p.copy_(ema_params[name])
        with torch.no_grad():
            val_loss = float(_mse(eval_model, val_t[0], val_t[1], val_t[3], val_t[2]))
        if not np.isfinite(val_loss):
            raise RuntimeError(f"non-finite validation loss at epoch {epoch}")
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {
                name: p.detach().cpu().numpy().copy() for name, p in model.named_parameters()
            }
        if swapped is not None:
            with torch.no_grad():
                for name, p in model.named_parameters():
                    p.copy_(swapped[name])
        history[epoch] = (epoch, epoch_loss / max(n_batches, 1), val_loss)

    return Checkpoint(
        params=best_state,
        config=config,
        norm_stats_hash=norm_stats_hash,
        best_val_loss=best_val,
        best_epoch=best_epoch,
        history=history,
    )


def grad_check(
    model: ConditionalUNet1D,
    obs: np.ndarray,
    actions: np.ndarray,
    schedule: NoiseSchedule,
    probe_count: int = 50,
    rng: np.random.Generator | None = None,
    h: float = 1e-5,
) -> float:
    """Central finite differences vs the analytic gradient of the MSE loss.

    Probes ``probe_count`` randomly chosen parameter entries; returns the
    maximum relative error. Requires a double-precision model.
    """
    rng = rng or np.random.default_rng(0)
    if next(model.parameters()).dtype != torch.float64:
        raise ValueError("grad_check requires a float64 model")
    k_b = rng.integers(1, schedule.K + 1, size=len(obs))
    eps = rng.standard_normal(actions.shape)
    ak = forward_noise(actions, k_b[:, None, None], eps, schedule)
    obs_t = torch.as_tensor(obs, dtype=torch.float64)
    ak_t = torch.as_tensor(ak, dtype=torch.float64)
    eps_t = torch.as_tensor(eps, dtype=torch.float64)
    k_t = torch.as_tensor(k_b)

    model.zero_grad()
    loss = _mse(model, obs_t, ak_t, k_t, eps_t)
    loss.backward()

    params = [p for p in model.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    cumulative = np.cumsum(sizes)
    total = int(cumulative[-1])
    picks = rng.choice(total, size=min(probe_count, total), replace=False)

    max_err = 0.0
    with torch.no_grad():
        for flat in picks:
            pi = int(np.searchsorted(cumulative, flat, side="right"))
            local = int(flat - (cumulative[pi - 1] if pi > 0 else 0))
            p = params[pi]
            view = p.view(-1)
            analytic = float(p.grad.view(-1)[local])
            orig = float(view[local])
            view[local] = orig + h
            loss_plus = float(_mse(model, obs_t, ak_t, k_t, eps_t))
            view[local] = orig - h
            loss_minus = float(_mse(model, obs_t, ak_t, k_t, eps_t))
            view[local] = orig
            fd = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(abs(fd), abs(analytic))
            err = abs(fd - analytic) if denom < 1e-7 else abs(fd - analytic) / denom
            max_err = max(max_err, err)
    return max_err


def save_checkpoint(cp: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    meta = {
        "config": cp.config.to_dict(),
        "norm_stats_hash": cp.norm_stats_hash,
        "best_val_loss": cp.best_val_loss,
        "best_epoch": cp.best_epoch,
    }
    arrays = {f"param.{name}": arr for name, arr in cp.params.items()}
    np.savez(
        path,
        __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        __history__=cp.history,
        **arrays,
    )
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {
            key[len("param.") :]: data[key] for key in data.files if key.startswith("param.")
        }
        history = data["__history__"]
    return Checkpoint(
        params=params,
        config=PolicyConfig.from_dict(meta["config"]),
        norm_stats_hash=meta["norm_stats_hash"],
        best_val_loss=meta["best_val_loss"],
        best_epoch=meta["best_epoch"],
        history=history,
    )


def model_from_checkpoint(cp: Checkpoint) -> ConditionalUNet1D:
    model = build_model(cp.config)
    state = {name: torch.as_tensor(arr) for name, arr in cp.params.items()}
    model.load_state_dict(state)
    model.eval()
    return model


def make_predictor(model: ConditionalUNet1D, obs: np.ndarray):
    """Bind a model and one observation into a ``predict(a_k, k)`` callable
    usable with :func:`tenon.diffusion.ddim_sample` (single sequence).
    """
    dtype = next(model.parameters()).dtype
    obs_t = torch.as_tensor(np.asarray(obs)[None, :], dtype=dtype)

    def predict(a_k: np.ndarray, k: int) -> np.ndarray:
        with torch.no_grad():
            ak_t = torch.as_tensor(a_k[None], dtype=dtype)
            out = model(ak_t, obs_t, torch.as_tensor([k]))
        return out[0].cpu().numpy().astype(np.float64)

    return predict
