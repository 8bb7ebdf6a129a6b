import torch

from ..autodiff.ops import hermitian, outer

VARIANTS = ("rank1", "cholesky", "arbitrary")


def rank1_update(prev_inv: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """prev + phi phi^H; PSD in, PSD out."""
    return prev_inv + outer(phi)


def rank1_accumulate(phis: torch.Tensor, init: torch.Tensor) -> torch.Tensor:
    """
    Runs rank1_update over time in one pass.

    Args:
        phis: complex vectors [..., T, F, M], time on axis -3.
        init: starting matrix, broadcastable to [..., T, F, M, M] (usually eps * I).

    Returns:
        [..., T, F, M, M] where entry t = init + sum of phi phi^H over frames <= t.
    """
    return torch.cumsum(outer(phis), dim=-4) + init


def cholesky_structure(raw: torch.Tensor) -> torch.Tensor:
    """Zeroes entries above the diagonal and replaces the diagonal by its modulus."""
    strict_lower = torch.tril(raw, diagonal=-1)
    diag = torch.diagonal(raw, dim1=-2, dim2=-1).abs().to(raw.dtype)
    return strict_lower + torch.diag_embed(diag)


def cholesky_product(factor: torch.Tensor) -> torch.Tensor:
    return factor @ hermitian(factor)


def arbitrary_structure(raw: torch.Tensor) -> torch.Tensor:
    """Identity: any structure of the estimate is left to the network."""
    return raw


def structure_matrices(variant: str, raw: torch.Tensor) -> torch.Tensor:
    """Square head outputs [..., M, M] to covariance-domain matrices."""
    if variant == "cholesky":
        return cholesky_product(cholesky_structure(raw))
    if variant == "arbitrary":
        return arbitrary_structure(raw)
    raise ValueError(f"variant '{variant}' does not emit square outputs")
