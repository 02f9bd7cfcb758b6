"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .model import ModelConfig, ModelParams
from .pipeline import PreparedSample
from .training import TrainingTriple, triple_loss

GRADCHECK_CONFIG = ModelConfig(embed_dim=12, hidden=8, lstm_layers=1, dropout=0.0,
                               max_query_len=4, max_doc_len=6, init_range=0.1)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Largest absolute discrepancy relative to the gradient's magnitude.

    max|a - n| / max(max|a|, max|n|). Scaling by the whole array rather than
    each entry keeps entries near zero, where central differences carry only
    cancellation noise, from dominating. Gradients that are identically
    negligible on both sides (below ``floor``) compare as absolute error.
    """
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)))
    return diff / scale if scale >= floor else diff


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` with respect to every entry of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


@dataclass
class GradcheckRow:
    name: str
    size: int
    max_rel_error: float
    max_abs_grad: float


def check_loss_gradients(params: ModelParams, loss_fn: Callable[[ModelParams], T.Tensor],
                         h: float = 1e-5) -> list[GradcheckRow]:
    """Compare tape gradients of ``loss_fn(params)`` against central differences, per parameter."""
    plist = list(params)
    with T.Tape() as tape:
        loss = loss_fn(params)
    analytic = T.backward(tape, loss, plist)
    rows = []
    for (name, tensor), grad in zip(params.tensors.items(), analytic):
        numeric = numeric_gradient(lambda: loss_fn(params).item(), tensor.data, h)
        rows.append(GradcheckRow(name, tensor.data.size,
                                 relative_error(grad, numeric),
                                 float(np.abs(grad).max())))
    return rows


def random_instance(cfg: ModelConfig, rng: np.random.Generator, n_passages: int = 2
                    ) -> PreparedSample:
    """A labeled query with random bank vectors at the configured maximum lengths."""
    def vecs(length):
        return rng.normal(0.0, 1.0, size=(3, cfg.embed_dim, length))

    passages = [vecs(int(rng.integers(1, cfg.max_doc_len + 1))) for _ in range(n_passages)]
    passages[0] = vecs(cfg.max_doc_len)
    return PreparedSample("gradcheck", vecs(cfg.max_query_len), passages,
                          rng.normal(size=(n_passages, cfg.feature_count)), 0)


def run_gradcheck(cfg: ModelConfig = GRADCHECK_CONFIG, seed: int = 0,
                  h: float = 1e-5) -> list[GradcheckRow]:
    rng = np.random.default_rng(seed)
    params = ModelParams.init(cfg, rng)
    sample = random_instance(cfg, rng)
    triple = TrainingTriple(0, 0, 1, True)
    return check_loss_gradients(params, lambda p: triple_loss(sample, triple, p), h)


def format_table(rows: list[GradcheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'parameter':<{width}}  {'size':>6}  {'max_rel_err':>12}  {'max|grad|':>10}"]
    lines += [f"{r.name:<{width}}  {r.size:>6}  {r.max_rel_error:>12.3e}  {r.max_abs_grad:>10.3e}"
              for r in rows]
    return "\n".join(lines)
