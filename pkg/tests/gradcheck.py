"""Finite-difference check of the full training objective."""

import numpy as np
import torch

from disque.network import DualHeadUNet, NetConfig, parameter_groups
from disque.objective import total_loss
from disque.synthetic import colorful_corpus
from disque.trainer import TrainConfig, build_batch


def gradient_check(size: int = 64, per_group: int = 5, seed: int = 0, h: float = 1e-5,
                   min_grad: float = 1e-3):
    """Relative errors between analytic and central-difference gradients.

    The loss is of order 1e4, so float64 roundoff in a difference quotient
    is about 1e-16 * 1e4 / h.  Entries are drawn at random among those whose
    analytic gradient exceeds ``min_grad``, where a relative error of 1e-3 is
    well above that floor.  Returns a dict
    mapping parameter group -> list of (name, index, analytic, numeric,
    rel_error).
    """
    torch.manual_seed(seed)
    model = DualHeadUNet(NetConfig.toy(size)).double()
    cfg = TrainConfig.desk(batch_size=2, patch_size=size, net=NetConfig.toy(size),
                           kinds=["MeanShift", "GaussianBlur", "HSVSaturate"])
    batch = build_batch(colorful_corpus(4, seed=seed), cfg, 0, "SDR")[0].double()

    def loss():
        return float(total_loss(model, batch).total.detach())

    model.zero_grad()
    total_loss(model, batch).total.backward()
    rng = np.random.default_rng(seed)
    out = {}
    for group, params in parameter_groups(model).items():
        candidates = [(name, p, idx) for name, p in params
                      for idx in zip(*np.nonzero(p.grad.abs().numpy() > min_grad))]
        rows = []
        for k in rng.choice(len(candidates), size=per_group, replace=False):
            name, p, idx = candidates[int(k)]
            idx = tuple(int(i) for i in idx)
            analytic = float(p.grad[idx])
            orig = float(p.detach()[idx])

            vals = []
            with torch.no_grad():
                for v in (orig + h, orig - h):
                    p[idx] = v
                    vals.append(loss())
                p[idx] = orig
            numeric = (vals[0] - vals[1]) / (2 * h)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
            rows.append((name, idx, analytic, numeric, rel))
        out[group] = rows
    return out
