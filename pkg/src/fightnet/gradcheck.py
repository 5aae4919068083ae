"""Central finite-difference verification of explicit backward passes.

A *subject* is anything exposing ``params``/``grads`` dicts, ``zero_grads()``,
``forward(x)`` and ``backward(grad_y) -> grad_x``: layers, recurrent cells and
whole models all qualify. The scalar objective is ``sum(g * forward(x))`` for
a fixed random projection ``g``, or the mean BCE loss for models when labels
are given.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .train import bce_loss


class UnsupportedSubject(TypeError):
    pass


@dataclass
class GradCheckReport:
    max_error: float
    worst: str
    errors: dict[str, float]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error <= tol


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _require(subject):
    for attr in ("params", "grads", "forward", "backward", "zero_grads"):
        if not hasattr(subject, attr):
            raise UnsupportedSubject(f"{type(subject).__name__} has no {attr}")


def grad_check(subject, x, eps: float = 1e-3, seed: int = 0, labels=None,
               max_coords: int | None = None, check_input: bool = True) -> GradCheckReport:
    """Compare analytic gradients of ``subject`` against central differences.

    All parameters and the input must be float64. ``max_coords`` limits how
    many randomly chosen coordinates per tensor are perturbed (``None`` = all).
    """
    _require(subject)
    x = np.array(x, dtype=np.float64, copy=True)
    for name, p in subject.params.items():
        if p.dtype != np.float64:
            raise ValueError(f"gradient checks need float64 parameters; {name} is {p.dtype}")
    # separate stream so the projection never coincides with an input drawn from `seed`
    rng = np.random.Generator(np.random.PCG64([seed, 0x6772]))

    y0 = subject.forward(x)
    if labels is not None:
        labels = np.asarray(labels)

        def objective(out):
            return float(bce_loss(out, labels)[0].mean())

        def upstream(out):
            return bce_loss(out, labels)[1] / out.shape[0]
    else:
        proj = rng.standard_normal(np.shape(y0))

        def objective(out):
            return float(np.sum(proj * out))

        def upstream(out):
            return proj

    subject.zero_grads()
    out = subject.forward(x)
    try:
        gx = subject.backward(upstream(out))
    except NotImplementedError as exc:
        raise UnsupportedSubject(f"{type(subject).__name__} has no backward pass") from exc
    analytic = {name: g.copy() for name, g in subject.grads.items()}

    targets = [(name, subject.params[name]) for name in subject.params]
    if check_input:
        analytic["input"] = np.asarray(gx)
        targets.append(("input", x))

    errors = {}
    for name, arr in targets:
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for j, idx in enumerate(coords):
            old = flat[idx]
            flat[idx] = old + eps
            fp = objective(subject.forward(x))
            flat[idx] = old - eps
            fm = objective(subject.forward(x))
            flat[idx] = old
            numeric[j] = (fp - fm) / (2 * eps)
        errors[name] = relative_error(analytic[name].reshape(-1)[coords], numeric)

    worst = max(errors, key=errors.get)
    return GradCheckReport(errors[worst], worst, errors)
