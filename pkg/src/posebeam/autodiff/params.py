import hashlib
import logging
import pathlib

import numpy as np
import torch

from ..utils.models import WeightsNotAvailableError, ensure_loaded, write_weights

logger = logging.getLogger(__name__)


class ModelParams:
    """
    Named parameter store over a torch module.

    Names are the module's dotted parameter names (``lstm.weight_ih_l0``,
    ``f_info.0.weight``...). The architecture dictionary travels with the
    weights so a file can be rebuilt into the right module.
    """

    def __init__(self, module: torch.nn.Module, architecture: dict | None = None):
        self.module = module
        self.architecture = dict(architecture or {})

    def named(self) -> dict[str, torch.nn.Parameter]:
        return dict(self.module.named_parameters())

    def parameters(self) -> list[torch.nn.Parameter]:
        return list(self.module.parameters())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def storage_mb(self) -> float:
        return sum(p.numel() * p.element_size() for p in self.module.parameters()) / 1e6

    def zero_grad(self) -> None:
        for p in self.module.parameters():
            p.grad = None

    def to_entries(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: p.detach().cpu().numpy().copy() for name, p in self.module.named_parameters()}

    def load_entries(self, entries: dict[str, np.ndarray], prefix: str = "", source: str = "<entries>") -> None:
        """Copies matching entries into the parameters; names and shapes must agree exactly."""
        named = self.named()
        expected = {prefix + n for n in named}
        present = {k for k in entries if k.startswith(prefix)} if prefix else set(entries)
        missing = sorted(expected - present)
        if missing:
            raise WeightsNotAvailableError(source, f"missing entries: {', '.join(missing[:5])}")
        with torch.no_grad():
            for name, p in named.items():
                value = entries[prefix + name]
                if tuple(value.shape) != tuple(p.shape):
                    raise WeightsNotAvailableError(
                        source, f"entry '{prefix + name}' has shape {tuple(value.shape)}, expected {tuple(p.shape)}")
                p.copy_(torch.as_tensor(np.array(value), dtype=p.dtype))

    def digest(self) -> str:
        """SHA-256 over names and raw parameter bytes."""
        sha = hashlib.sha256()
        for name, p in sorted(self.module.named_parameters()):
            sha.update(name.encode("utf-8"))
            sha.update(p.detach().cpu().contiguous().numpy().tobytes())
        return sha.hexdigest()

    def save(self, path) -> None:
        architecture = dict(self.architecture, **{"parameter-count": self.parameter_count()})
        write_weights(path, self.to_entries(), architecture)

    def load(self, path) -> None:
        entries, architecture = ensure_loaded(path)
        for key, value in self.architecture.items():
            if key in architecture and architecture[key] != value:
                raise WeightsNotAvailableError(str(path), f"architecture '{key}' is {architecture[key]!r}, "
                                                          f"model expects {value!r}")
        self.load_entries(entries, source=str(pathlib.Path(path)))
        logger.info(f"Loaded {self.parameter_count()} parameters from {path}")

    def __repr__(self):
        return f"<ModelParams(module={type(self.module).__name__}, count={self.parameter_count()})>"
