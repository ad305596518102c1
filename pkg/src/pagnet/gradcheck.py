"""Finite-difference verification of reverse-mode gradients.

Audits run in 64-bit: central differences with step h have a rounding
floor around machine_eps/h, which float32 cannot clear at the 1e-5
tolerances used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor, backward

DEFAULT_STEP = 1e-6
DEFAULT_TOL = 1e-5
# Elements whose gradients sit below this floor are compared absolutely;
# central differences cannot resolve them to a relative tolerance.
ERROR_FLOOR = 1e-4


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = ERROR_FLOOR) -> float:
    """max over elements of |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))


@dataclass
class GradcheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradcheckReport:
    tol: float
    entries: list[GradcheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def worst(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def format(self) -> str:
        lines = [f"gradient audit (tol {self.tol:g})"]
        for e in self.entries:
            status = "ok" if e.passed else "FAIL"
            lines.append(f"  {e.name:<32s} max rel err {e.max_rel_err:.3e}  {status}")
        lines.append(f"  => {'PASS' if self.passed else 'FAIL'} (worst {self.worst:.3e})")
        return "\n".join(lines)


def finite_difference(build_loss: Callable[[], Tensor], param: Tensor, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of the scalar program w.r.t. one tensor.

    Re-evaluates ``build_loss`` (run without a tape) twice per element,
    perturbing ``param.data`` in place.
    """
    base = param.data
    fd = np.zeros_like(base)
    flat = base.reshape(-1)
    fd_flat = fd.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = build_loss().item()
        flat[i] = keep - h
        down = build_loss().item()
        flat[i] = keep
        fd_flat[i] = (up - down) / (2.0 * h)
    return fd


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
    floor: float = ERROR_FLOOR,
) -> GradcheckReport:
    """Compare tape gradients with central finite differences per parameter.

    ``build_loss`` must rebuild the same scalar program on every call
    (including any randomness, which must be frozen). All parameters must
    be float64.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient audits run in 64-bit; parameter {name!r} is {p.dtype}")
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradcheckReport(tol=tol)
    for name, p in params.items():
        fd = finite_difference(build_loss, p, h=h)
        err = relative_error(analytic[name], fd, floor=floor)
        report.entries.append(GradcheckEntry(name=name, max_rel_err=err, passed=err < tol))
    return report
