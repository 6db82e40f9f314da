"""Training losses and the feature crossing used for cross-reconstruction.

A training sample is a quadruple of views ``(x11, x12, x21, x22)``: two
source patches and the same transform applied to each.  In batched tensors
the views sit on axis 1 in that order, so a batch has shape
``B x 4 x 3 x H x W``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ShapeError

log = logging.getLogger(__name__)

VIEWS = ("11", "12", "21", "22")
# position of the crossed content source for each view: c~11 = c12, c~12 = c11, ...
SHUFFLE_INDEX = (1, 0, 3, 2)

LOG_COLUMNS = ("step", "l_self", "l_cross", "l_c_nce", "l_a_nce", "total", "lr")


def _same_shape(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


def charbonnier(x: torch.Tensor, y: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """sqrt(||x - y||^2 + eps^2) with the norm taken over each whole C x H x W image.

    Leading dimensions are treated as batch dimensions and kept.
    """
    _same_shape(x, y)
    sq = (x - y).pow(2).flatten(start_dim=max(x.dim() - 3, 0)).sum(dim=-1)
    return torch.sqrt(sq + eps * eps)


def frequency_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """L1 norm of the difference of unnormalised 2-D DFTs, summed over channels."""
    _same_shape(x, y)
    spec = torch.fft.fft2(x - y, norm="backward")
    return spec.abs().flatten(start_dim=max(x.dim() - 3, 0)).sum(dim=-1)


def recon_loss(x, y, lambda_f: float = 0.1, eps: float = 1e-3) -> torch.Tensor:
    return charbonnier(x, y, eps) + lambda_f * frequency_loss(x, y)


def mix_appearance(a11, a12, a21, a22):
    """Cross appearance by adding or removing the other image's transform delta."""
    if not (a11.shape == a12.shape == a21.shape == a22.shape):
        raise ShapeError("appearance vectors must share one shape")
    d1 = a12 - a11
    d2 = a22 - a21
    return a12 - d2, a11 + d2, a22 - d1, a21 + d1


def replace_appearance(a11, a12, a21, a22):
    """Baseline crossing that swaps whole appearance vectors between images."""
    return a21, a22, a11, a12


def shuffle_content(c11, c12, c21, c22):
    return c12, c11, c22, c21


def cross_recon_targets() -> dict[str, str]:
    """Each crossed prediction y~ij is scored against the original view xij."""
    return {v: v for v in VIEWS}


def info_nce(q: torch.Tensor, k_pos: torch.Tensor, negatives: torch.Tensor | None = None,
             tau: float = 0.2, normalize: bool = True) -> torch.Tensor:
    """-log softmax probability of the positive key for one query.

    ``negatives`` is a K x D tensor (K may be 0 or ``None``).
    """
    if q.shape != k_pos.shape:
        raise ShapeError("query and positive key differ in shape")
    keys = k_pos[None]
    if negatives is not None and len(negatives):
        if negatives.shape[-1] != q.shape[-1]:
            raise ShapeError("negatives have the wrong dimension")
        keys = torch.cat([keys, negatives], dim=0)
    if normalize:
        q = F.normalize(q, dim=-1)
        keys = F.normalize(keys, dim=-1)
    logits = keys @ q / tau
    return -torch.log_softmax(logits, dim=0)[0]


def symmetric_info_nce(queries: torch.Tensor, keys: torch.Tensor, tau: float = 0.2,
                       normalize: bool = True) -> torch.Tensor:
    """Batched symmetric InfoNCE: row ``i`` of ``keys`` is the positive for row
    ``i`` of ``queries`` and every other row is a negative."""
    if queries.shape != keys.shape:
        raise ShapeError("queries and keys differ in shape")
    if normalize:
        queries = F.normalize(queries, dim=-1, eps=1e-12)
        keys = F.normalize(keys, dim=-1, eps=1e-12)
    logits = queries @ keys.T / tau
    target = torch.arange(len(queries), device=queries.device)
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))


def contrastive_pairs(content: list[torch.Tensor], appearance: torch.Tensor):
    """Build query/key sets for the two contrastive terms.

    ``content`` holds the per-block maps for all views, each shaped
    ``B x 4 x C x h x w``; ``appearance`` is ``B x 4 x D``.  The content
    query of a sample is the pooled deepest map of (x11, x21) concatenated,
    its key the same for (x12, x22).  The appearance pair is (da1, da2).
    """
    pooled = content[-1].mean(dim=(-2, -1))
    cq = torch.cat([pooled[:, 0], pooled[:, 2]], dim=-1)
    ck = torch.cat([pooled[:, 1], pooled[:, 3]], dim=-1)
    aq = appearance[:, 1] - appearance[:, 0]
    ak = appearance[:, 3] - appearance[:, 2]
    return (cq, ck), (aq, ak)


@dataclass
class LossBreakdown:
    l_self: torch.Tensor
    l_cross: torch.Tensor
    l_c_nce: torch.Tensor
    l_a_nce: torch.Tensor
    total: torch.Tensor
    hyper: dict = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_self", "l_cross", "l_c_nce", "l_a_nce", "total")}

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values().values())

    def csv_row(self, step: int, lr: float) -> str:
        v = self.values()
        cells = [str(step)] + [repr(v[k]) for k in LOG_COLUMNS[1:-1]] + [repr(float(lr))]
        return ",".join(cells)


def forward_views(model, batch: torch.Tensor):
    """Encode all four views of every sample; returns per-view tensors."""
    if batch.dim() != 5 or batch.shape[1] != 4:
        raise ShapeError(f"expected B x 4 x 3 x H x W batch, got {tuple(batch.shape)}")
    b = batch.shape[0]
    flat = batch.flatten(0, 1)
    content = model.encode_content(flat)
    appearance = model.encode_appearance(flat)
    content = [c.unflatten(0, (b, 4)) for c in content]
    return content, appearance.unflatten(0, (b, 4))


def total_loss(model, batch: torch.Tensor, lambda_f: float = 0.1, beta: float = 0.5,
               tau: float = 0.2, eps: float = 1e-3, crossing: str = "mixing") -> LossBreakdown:
    """Full objective for one batch of quadruples.

    Reconstruction terms are summed over the four views and averaged over
    the batch; the contrastive terms are batch means and are skipped (zero)
    for a batch of one.
    """
    b = batch.shape[0]
    content, appearance = forward_views(model, batch)
    flat_c = [c.flatten(0, 1) for c in content]
    flat_x = batch.flatten(0, 1)

    y_self = model.decode(flat_c, appearance.flatten(0, 1))
    l_self = recon_loss(flat_x, y_self, lambda_f, eps).view(b, 4).sum(dim=1).mean()

    cross_fn = mix_appearance if crossing == "mixing" else replace_appearance
    a_t = torch.stack(cross_fn(*appearance.unbind(dim=1)), dim=1)
    c_t = [c[:, list(SHUFFLE_INDEX)].flatten(0, 1) for c in content]
    y_cross = model.decode(c_t, a_t.flatten(0, 1))
    l_cross = recon_loss(flat_x, y_cross, lambda_f, eps).view(b, 4).sum(dim=1).mean()

    zero = l_self.new_zeros(())
    if b >= 2:
        (cq, ck), (aq, ak) = contrastive_pairs(content, appearance)
        l_c = symmetric_info_nce(cq, ck, tau)
        l_a = symmetric_info_nce(aq, ak, tau)
    else:
        log.warning("batch of one: contrastive terms skipped")
        l_c = l_a = zero
    total = (l_self + l_cross) + beta * (l_c + l_a)
    return LossBreakdown(l_self, l_cross, l_c, l_a, total,
                         dict(lambda_f=lambda_f, beta=beta, tau=tau, eps=eps))
