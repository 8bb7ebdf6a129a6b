import logging
import math

import numpy as np
import torch

from .params import ModelParams

logger = logging.getLogger(__name__)

DEFAULT_LR = 3e-4
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8
DEFAULT_CLIP_NORM = 5.0


class NumericFailureError(ArithmeticError):
    def __init__(self, details: str, *, param_name: str | None = None, epoch: int | None = None,
                 step: int | None = None):
        self.details = details
        self.param_name = param_name
        self.epoch = epoch
        self.step = step
        context = ", ".join(f"{k}={v}" for k, v in (("parameter", param_name), ("epoch", epoch), ("step", step))
                            if v is not None)
        super().__init__(f"Numeric failure: {details}" + (f" ({context})" if context else ""))


def backward(loss: torch.Tensor) -> None:
    """
    Reverse-mode accumulation from a scalar loss into every leaf's ``.grad``.

    The graph is freed afterwards; rebuild it for another pass.
    """
    if loss.numel() != 1 or loss.dim() > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.reshape(()).backward()


class AdamState:
    """
    Adam moments and step count for one ModelParams, with global-norm clipping.

    The moments live in ``torch.optim.Adam``; ``to_entries`` / ``load_entries``
    move them through the weights file format so a resumed run continues with
    bit-identical optimizer state.
    """

    def __init__(self, params: ModelParams, lr: float = DEFAULT_LR, betas=DEFAULT_BETAS, eps: float = DEFAULT_EPS,
                 clip_norm: float = DEFAULT_CLIP_NORM):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {clip_norm}")
        self.params = params
        self.clip_norm = clip_norm
        self.optimizer = torch.optim.Adam(params.parameters(), lr=lr, betas=tuple(betas), eps=eps)

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    @property
    def step_count(self) -> int:
        states = [self.optimizer.state[p] for p in self.params.parameters() if p in self.optimizer.state]
        return int(states[0]["step"]) if states else 0

    def moments(self, name: str) -> tuple[torch.Tensor, torch.Tensor]:
        p = self.params.named()[name]
        state = self.optimizer.state.get(p)
        if not state:
            return torch.zeros_like(p), torch.zeros_like(p)
        return state["exp_avg"], state["exp_avg_sq"]

    def to_entries(self, prefix: str = "adam/") -> dict[str, np.ndarray]:
        entries = {f"{prefix}step": np.array(self.step_count, dtype=np.int64)}
        for name in self.params.named():
            first, second = self.moments(name)
            entries[f"{prefix}exp_avg/{name}"] = first.detach().cpu().numpy().copy()
            entries[f"{prefix}exp_avg_sq/{name}"] = second.detach().cpu().numpy().copy()
        return entries

    def load_entries(self, entries: dict[str, np.ndarray], prefix: str = "adam/") -> None:
        step = int(entries[f"{prefix}step"])
        state_dict = self.optimizer.state_dict()
        state_dict["state"] = {}
        if step > 0:
            for index, (name, p) in enumerate(self.params.named().items()):
                state_dict["state"][index] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": torch.as_tensor(np.array(entries[f"{prefix}exp_avg/{name}"]), dtype=p.dtype),
                    "exp_avg_sq": torch.as_tensor(np.array(entries[f"{prefix}exp_avg_sq/{name}"]), dtype=p.dtype),
                }
        self.optimizer.load_state_dict(state_dict)


def grad_norm(params: ModelParams) -> float:
    grads = [p.grad for p in params.parameters() if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads])))


def adam_step(params: ModelParams, state: AdamState) -> float:
    """
    Clips gradients to ``state.clip_norm`` by global norm and applies one Adam update.

    Returns:
        The gradient norm before clipping.

    Raises:
        NumericFailureError: a gradient holds NaN or infinity; names the parameter.
    """
    for name, p in params.named().items():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericFailureError("non-finite gradient", param_name=name)
    with torch.no_grad():
        if math.isinf(state.clip_norm):
            norm = grad_norm(params)
        else:
            norm = float(torch.nn.utils.clip_grad_norm_(params.parameters(), state.clip_norm))
        state.optimizer.step()
    logger.debug(f"Adam step {state.step_count}: grad norm {norm:.4g}")
    return norm
