from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(f: Callable[[], Tensor] | Callable[..., Tensor], inputs: Tensor | Sequence[Tensor],
               eps: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None, call_with_inputs: bool | None = None) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``f`` returns a scalar Tensor. It is called as ``f(*inputs)`` when
    ``call_with_inputs`` is true (the default if ``inputs`` is a single
    tensor passed positionally), otherwise as ``f()`` with ``inputs`` being
    tensors it closes over (e.g. model parameters). The input arrays are
    perturbed in place and restored.

    Returns max over checked coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    single = isinstance(inputs, Tensor)
    tensors = [inputs] if single else list(inputs)
    if call_with_inputs is None:
        call_with_inputs = single

    def evaluate() -> Tensor:
        return f(*tensors) if call_with_inputs else f()

    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = evaluate()
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    coords = [(ti, ci) for ti, t in enumerate(tensors) for ci in range(t.data.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst = 0.0
    with no_grad():
        for ti, ci in coords:
            flat = tensors[ti].data.reshape(-1)
            orig = flat[ci]
            flat[ci] = orig + eps
            up = evaluate().item()
            flat[ci] = orig - eps
            down = evaluate().item()
            flat[ci] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[ti].reshape(-1)[ci]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    for t in tensors:
        t.grad = None
    return worst
