"""Central-finite-difference verification of analytic gradients."""

import numpy as np

__all__ = ["GradCheckReport", "gradient_check"]


class GradCheckReport:
    """Per-parameter worst relative error between analytic and numeric
    gradients."""

    def __init__(self, per_param, step):
        self.per_param = per_param
        self.step = step

    @property
    def max_rel_err(self):
        return max(self.per_param.values()) if self.per_param else 0.0

    def passed(self, tolerance):
        return self.max_rel_err < tolerance

    def render(self):
        width = max((len(n) for n in self.per_param), default=4)
        lines = [f"{name:<{width}}  {err:.3e}" for name, err in sorted(self.per_param.items())]
        lines.append(f"{'max':<{width}}  {self.max_rel_err:.3e}")
        return "\n".join(lines)


def gradient_check(loss_fn, store, step=1e-5):
    """Check every scalar in ``store`` by central differences.

    ``loss_fn(grad)`` must return the scalar loss, re-running the full
    forward pass against the store's current parameter values; with
    ``grad=True`` it must also accumulate analytic gradients into the store.
    It has to be deterministic (fix any dropout masks or seeds).
    """
    store.zero_grads()
    loss = loss_fn(grad=True)
    if not np.isfinite(loss):
        raise ValueError(f"loss is not finite: {loss}")
    analytic = {name: store.grad(name).copy() for name in store.names()}
    store.zero_grads()

    per_param = {}
    for name in store.names():
        flat = store[name].ravel()
        ana = analytic[name].ravel()
        worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            lp = loss_fn(grad=False)
            flat[idx] = orig - step
            lm = loss_fn(grad=False)
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * step)
            rel = abs(ana[idx] - numeric) / max(abs(ana[idx]), abs(numeric), 1e-8)
            worst = max(worst, rel)
        per_param[name] = worst
    return GradCheckReport(per_param, step)
