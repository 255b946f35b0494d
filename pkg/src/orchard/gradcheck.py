"""Central finite-difference verification of layer gradients.

The scalar loss is a fixed random projection of the layer output, so every
output coordinate contributes and gradients are generically nonzero. Layers
run in their native float32; losses are reduced in float64 to keep the
difference quotient clean at h=1e-2.

Relu kinks and max-pool ties have no gradient, so a difference quotient
across one is meaningless. Every network here is piecewise linear in any
single coordinate, which gives a sharp detector: on a kink-free interval
the forward and backward one-sided quotients agree to rounding noise,
while a crossing makes them differ by exactly twice the error it induces
in the central difference. Coordinates whose interval shows a crossing are
excluded from the comparison. If a point is degenerate (a unit sitting on
a kink makes a large fraction of coordinates cross), the whole check moves
to the next deterministic candidate point.

Error-budget arithmetic: quotient noise is about eps32*|loss|/h ~ 2e-5 and
an undetected crossing biases the quotient by at most KINK_TOL/2 = 3e-5,
so with the 0.05 relative-error floor both stay under the 1e-3 tolerance;
gradients larger than the floor are compared in truly relative terms.
"""

import numpy as np

from .errors import OrchardError

H_STEP = 1e-2
# relative error floors at this denominator: gradients smaller than the
# floor are held to an absolute tolerance of floor * rel_tol instead
REL_FLOOR = 5e-2
# one-sided quotients disagreeing by more than this flag a kink inside the
# interval; undetected crossings then bias the quotient by <= KINK_TOL/2
KINK_TOL = 6e-5
# a point where more than this fraction of coordinates cross a kink is
# degenerate: retry at the next candidate point
MAX_EXCLUDED_FRACTION = 0.3
SEED_STRIDE = 7919


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return np.abs(a - n) / denom


def _loss(layer, x, proj):
    out = layer.forward(x)
    if not np.isfinite(out).all():
        raise OrchardError("gradient_check: non-finite value in forward output")
    return float(np.dot(out.ravel().astype(np.float64), proj))


def _numeric_grad(layer, x, proj, target, f0):
    """Central differences per element of `target`, plus a mask of the
    coordinates whose +-h interval is kink-free."""
    grad = np.zeros(target.size, dtype=np.float64)
    smooth = np.ones(target.size, dtype=bool)
    flat = target.reshape(-1)
    h = np.float32(H_STEP)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        x_plus = float(flat[i])
        f_plus = _loss(layer, x, proj)
        flat[i] = orig - h
        x_minus = float(flat[i])
        f_minus = _loss(layer, x, proj)
        flat[i] = orig
        # use the steps actually applied after f32 rounding
        grad[i] = (f_plus - f_minus) / (x_plus - x_minus)
        forward_q = (f_plus - f0) / (x_plus - float(orig))
        backward_q = (f0 - f_minus) / (float(orig) - x_minus)
        smooth[i] = abs(forward_q - backward_q) <= KINK_TOL
    return grad.reshape(target.shape), smooth.reshape(target.shape)


def _setup_point(layer, input_shapes, seed, init_scale):
    """Draw the input(s) and fill parameters from one seeded rng."""
    rng = np.random.default_rng(seed)
    multi = isinstance(input_shapes, list)
    shapes = input_shapes if multi else [input_shapes]
    xs = [rng.standard_normal(s).astype(np.float32) for s in shapes]
    x = xs if multi else xs[0]
    for _, p in sorted(layer.named_params()):
        p[...] = (rng.standard_normal(p.shape) * init_scale).astype(np.float32)
    return rng, xs, x, multi


def _check_once(layer, input_shapes, seed, init_scale):
    rng, xs, x, multi = _setup_point(layer, input_shapes, seed, init_scale)
    out = layer.forward(x)
    # unit-scale projection keeps the loss O(1) regardless of output size;
    # rounded through f32 so analytic and numeric sides see identical weights
    proj = (
        (rng.standard_normal(out.size) / np.sqrt(out.size))
        .astype(np.float32)
        .astype(np.float64)
    )

    analytic_inputs = layer.backward(proj.reshape(out.shape).astype(np.float32))
    if not multi:
        analytic_inputs = [analytic_inputs]
    for g in analytic_inputs:
        if not np.isfinite(np.asarray(g)).all():
            raise OrchardError("gradient_check: non-finite analytic input gradient")
    analytic_params = dict(layer.named_grads())

    f0 = _loss(layer, x, proj)
    targets = list(zip(xs, analytic_inputs))
    targets += [(p, analytic_params[name]) for name, p in layer.named_params()]

    worst = 0.0
    checked = 0
    excluded = 0
    for target, analytic in targets:
        numeric, smooth = _numeric_grad(layer, x, proj, target, f0)
        errs = relative_error(analytic, numeric)
        checked += int(smooth.sum())
        excluded += int((~smooth).sum())
        if smooth.any():
            worst = max(worst, float(errs[smooth].max()))
    return worst, checked, excluded


def gradient_check(layer, input_shapes, seed, init_scale=0.5, details=False, max_tries=8):
    """Worst relative error between analytic gradients and central
    differences, over the input(s) and every parameter.

    input_shapes is one shape tuple, or a list of shape tuples for layers
    taking a list input (concat, residual add). Zero-initialized parameters
    are filled from the seeded rng first. With details=True also returns
    (checked, excluded) coordinate counts.
    """
    last = None
    for attempt in range(max_tries):
        worst, checked, excluded = _check_once(
            layer, input_shapes, seed + SEED_STRIDE * attempt, init_scale
        )
        last = (worst, checked, excluded)
        if checked > 0 and excluded <= MAX_EXCLUDED_FRACTION * (checked + excluded):
            return (worst, checked, excluded) if details else worst
    raise OrchardError(
        f"gradient_check: no usable point in {max_tries} tries "
        f"(last: worst={last[0]:.2e}, checked={last[1]}, excluded={last[2]})"
    )
