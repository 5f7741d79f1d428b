"""Finite-difference verification of every analytic gradient in the package."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .losses import (
    CostMatrix,
    SeesawState,
    cross_entropy,
    rwwce_loss,
    seesaw_loss,
    seesaw_weights,
)
from .prior_model import (
    PriorMlp,
    PrototypeMatrix,
    _forward,
    loc_loss,
    pack_grads,
    pack_params,
    unpack_params,
)

DEFAULT_STEP = 1e-6
DEFAULT_TOL = 1e-4
LOSS_NAMES = ("ce", "seesaw", "rwwce", "loc")


def central_difference(
    fn: Callable[[np.ndarray], float], x0: np.ndarray, step: float = DEFAULT_STEP
) -> np.ndarray:
    """Two-sided numerical gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.empty_like(x0)
    for i in range(x0.size):
        bumped = x0.copy()
        bumped[i] = x0[i] + step
        hi = fn(bumped)
        bumped[i] = x0[i] - step
        lo = fn(bumped)
        grad[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.abs(analytic).max()), float(np.abs(numeric).max()))
    return float(np.abs(analytic - numeric).max()) / scale


@dataclass
class GradCheckResult:
    loss: str
    trials: int
    max_rel_err: float
    tolerance: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _check_ce(rng: np.random.Generator, step: float) -> float:
    c = int(rng.integers(2, 8))
    z = rng.normal(0.0, 2.0, c)
    y = int(rng.integers(c))
    analytic = cross_entropy(z, y).grad
    numeric = central_difference(lambda v: cross_entropy(v, y).value, z, step)
    return relative_error(analytic, numeric)


def _check_seesaw(rng: np.random.Generator, step: float) -> float:
    c = int(rng.integers(2, 8))
    z = rng.normal(0.0, 2.0, c)
    y = int(rng.integers(c))
    counts = rng.integers(0, 20, c)
    state = SeesawState(counts, p=float(rng.uniform(0, 1.5)), q=float(rng.uniform(0, 3)))
    # compensation depends on the logits; freeze it at the center point so
    # the finite difference sees the same stop-gradient loss surface
    pinned = seesaw_weights(z, y, state)
    analytic = seesaw_loss(z, y, state, weights=pinned).grad
    numeric = central_difference(
        lambda v: seesaw_loss(v, y, state, weights=pinned).value, z, step
    )
    return relative_error(analytic, numeric)


def _check_rwwce(rng: np.random.Generator, step: float) -> float:
    c = int(rng.integers(2, 8))
    z = rng.normal(0.0, 2.0, c)
    y = int(rng.integers(c))
    cost = rng.uniform(0.0, 3.0, (c, c))
    np.fill_diagonal(cost, 0.0)
    cost_m = CostMatrix(cost)
    fn_weight = rng.uniform(0.5, 3.0, c)
    analytic = rwwce_loss(z, y, cost_m, fn_weight).grad
    numeric = central_difference(
        lambda v: rwwce_loss(v, y, cost_m, fn_weight).value, z, step
    )
    return relative_error(analytic, numeric)


def _loc_instance(rng: np.random.Generator):
    """Random small prior-loss instance where finite differences are valid.

    Resamples away from ReLU kinks and from affinities saturated enough to
    hit the probability clamp, where the loss goes flat but the exact
    gradient does not.
    """
    for _ in range(50):
        d_in = int(rng.integers(2, 6))
        hidden = int(rng.integers(2, 7))
        d_out = int(rng.integers(2, 7))
        c = int(rng.integers(1, 8))
        model = PriorMlp.create(
            d_in, hidden, d_out,
            dropout_rate=0.3 if rng.random() < 0.5 else 0.0,
            seed=int(rng.integers(2**31)),
        )
        # He init on tiny nets is too small to stay clear of kinks; rescale
        for name in ("w1", "w2", "w3"):
            setattr(model, name, getattr(model, name) * 2.0)
        model.b1 = rng.normal(0.0, 0.5, hidden)
        model.b2 = rng.normal(0.0, 0.5, hidden)
        proto = rng.standard_normal((d_out, c))
        proto /= np.linalg.norm(proto, axis=0, keepdims=True)
        prototypes = PrototypeMatrix(proto)
        x = rng.normal(0.0, 1.0, d_in)
        r = rng.normal(0.0, 1.0, d_in)
        y = int(rng.integers(c))
        lam = float(rng.uniform(0.5, 5.0))
        masks = None
        if model.dropout_rate > 0.0:
            mx = model.draw_masks(1)
            mr = model.draw_masks(1)
            masks = (mx[0], mx[1], mr[0], mr[1])
        margin, peak = _fd_margins(model, x, r, masks, proto)
        # peak < 10 keeps 1 - sigmoid(u) well away from cancellation, which
        # would otherwise swamp the finite-difference quotient
        if margin > 1e-4 and peak < 10.0:
            return model, x, r, y, prototypes, lam, masks
    raise RuntimeError("could not sample a finite-difference-safe instance")


def _fd_margins(model: PriorMlp, x, r, masks, proto) -> tuple[float, float]:
    """(distance to the nearest ReLU kink, largest |affinity|) at the center."""
    margin = np.inf
    peak = 0.0
    for vec, m in ((x, None if masks is None else masks[:2]),
                   (r, None if masks is None else masks[2:])):
        out, cache = _forward(model, vec.reshape(1, -1), m)
        _, z1, _, z2, _, _ = cache
        margin = min(margin, float(np.abs(z1).min()), float(np.abs(z2).min()))
        peak = max(peak, float(np.abs(out @ proto).max()))
    return margin, peak


def _check_loc(rng: np.random.Generator, step: float) -> float:
    model, x, r, y, prototypes, lam, masks = _loc_instance(rng)
    analytic = pack_grads(loc_loss(model, x, r, prototypes, y, lam, masks).grads)
    probe = copy.deepcopy(model)

    def fn(flat: np.ndarray) -> float:
        unpack_params(probe, flat)
        return loc_loss(probe, x, r, prototypes, y, lam, masks).value

    numeric = central_difference(fn, pack_params(model), step)
    return relative_error(analytic, numeric)


_CHECKS = {
    "ce": _check_ce,
    "seesaw": _check_seesaw,
    "rwwce": _check_rwwce,
    "loc": _check_loc,
}


def check_loss(
    name: str,
    trials: int = 20,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOL,
) -> GradCheckResult:
    if name not in _CHECKS:
        raise ValueError(f"unknown loss {name!r}, expected one of {LOSS_NAMES}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        worst = max(worst, _CHECKS[name](rng, step))
    return GradCheckResult(loss=name, trials=trials, max_rel_err=worst, tolerance=tolerance)


def run_checks(
    names=None, trials: int = 20, seed: int = 0
) -> list[GradCheckResult]:
    return [check_loss(n, trials=trials, seed=seed) for n in (names or LOSS_NAMES)]
