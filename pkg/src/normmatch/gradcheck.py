"""Central-finite-difference gradient checking.

The contract: ``forward(params)`` returns a scalar loss and, as a side
effect, accumulates analytic gradients into the store (which the checker
zeroes beforehand). The checker then perturbs sampled coordinates of every
trainable parameter by +-eps and compares the analytic entries against
central differences. All evaluation happens in 64-bit precision; finite
differences are not trustworthy in 32-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ParamReport", "grad_check", "all_passed"]


@dataclass
class ParamReport:
    name: str
    max_rel_err: float
    coords_checked: int
    passed: bool
    failure: str | None = None

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.failure})" if self.failure else ""
        return (
            f"{status} {self.name}: max rel err {self.max_rel_err:.3e}"
            f" over {self.coords_checked} coords{extra}"
        )


def grad_check(
    forward,
    params,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int = 32,
    rng: np.random.Generator | None = None,
) -> list[ParamReport]:
    """Compare analytic gradients with central differences.

    For each trainable parameter, checks a random subset of coordinates
    (all of them when the parameter has at most ``max_coords`` entries).
    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8) with
    n = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if rng is None:
        rng = np.random.default_rng(0)

    params.zero_grads()
    base = float(forward(params))
    if not np.isfinite(base):
        return [
            ParamReport(name, np.inf, 0, False, "non-finite forward value")
            for name in params.trainable_names()
        ]
    analytic = {n: params.grad(n).copy() for n in params.trainable_names()}

    reports = []
    for name in params.trainable_names():
        flat = params.value(name).reshape(-1)
        n_entries = flat.size
        if n_entries <= max_coords:
            idxs = np.arange(n_entries)
        else:
            idxs = np.sort(rng.choice(n_entries, size=max_coords, replace=False))

        a_flat = analytic[name].reshape(-1)
        max_err = 0.0
        failure = None
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            params.zero_grads()
            f_plus = float(forward(params))
            flat[i] = orig - eps
            params.zero_grads()
            f_minus = float(forward(params))
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                failure = "non-finite forward value"
                break
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_err = max(max_err, rel)
        passed = failure is None and max_err < tol
        reports.append(ParamReport(name, max_err, len(idxs), passed, failure))

    # Leave the store in the analytically differentiated state.
    params.zero_grads()
    for name, g in analytic.items():
        params.add_grad(name, g)
    return reports


def all_passed(reports) -> bool:
    return all(r.passed for r in reports)
