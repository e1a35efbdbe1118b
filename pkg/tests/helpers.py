"""Shared oracles for gradient and model tests."""
import numpy as np

from cmnrec import autodiff as ad
from cmnrec.autodiff import Tape, Tensor


def gradient_error(build, params, eps=1e-5, coords=None):
    """Max relative error between tape gradients and central differences.

    ``build`` maps a dict of Tensors to a scalar Tensor.
    """
    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in params.items()}
    grads = ad.backward(build(leaves), list(leaves.values()))
    numeric = ad.finite_difference_gradient(
        lambda p: build({k: Tensor(v) for k, v in p.items()}).value, params, eps, coords
    )
    worst = 0.0
    for k, t in leaves.items():
        n = numeric[k]
        sel = ~np.isnan(n)
        worst = max(worst, ad.relative_error(grads[t][sel], n[sel]))
    return worst


def weighted(out, rng):
    """Scalarize with fixed random weights so no direction is degenerate."""
    return ad.sum_(out * rng.standard_normal(out.shape))


def primitive_cases():
    """kind -> (param factory(rng), build(tensors, rng) -> scalar)."""
    n = lambda rng, *s: rng.standard_normal(s)
    ids = np.array([0, 2, 2, 4])
    return {
        "matmul": (lambda r: {"a": n(r, 2, 3, 4), "b": n(r, 4, 2)}, lambda t, r: weighted(ad.matmul(t["a"], t["b"]), r)),
        "add": (lambda r: {"a": n(r, 3, 4), "b": n(r, 4)}, lambda t, r: weighted(t["a"] + t["b"], r)),
        "subtract": (lambda r: {"a": n(r, 3, 1), "b": n(r, 3, 4)}, lambda t, r: weighted(t["a"] - t["b"], r)),
        "multiply": (lambda r: {"a": n(r, 3, 4), "b": n(r, 1, 4)}, lambda t, r: weighted(t["a"] * t["b"], r)),
        "divide": (
            lambda r: {"a": n(r, 3, 4), "b": np.abs(n(r, 3, 1)) + 0.5},
            lambda t, r: weighted(t["a"] / t["b"], r),
        ),
        "concat": (lambda r: {"a": n(r, 2, 3), "b": n(r, 2, 2)}, lambda t, r: weighted(ad.concat(t["a"], t["b"]), r)),
        "slice": (lambda r: {"a": n(r, 3, 5)}, lambda t, r: weighted(ad.slice_(t["a"], 1, 4), r)),
        "stack": (lambda r: {"a": n(r, 3), "b": n(r, 3)}, lambda t, r: weighted(ad.stack([t["a"], t["b"]], axis=-2), r)),
        "reshape": (lambda r: {"a": n(r, 2, 6)}, lambda t, r: weighted(ad.reshape(t["a"], (3, 4)), r)),
        "tanh": (lambda r: {"a": n(r, 3, 4)}, lambda t, r: weighted(ad.tanh(t["a"]), r)),
        "sigmoid": (lambda r: {"a": n(r, 3, 4)}, lambda t, r: weighted(ad.sigmoid(t["a"]), r)),
        "softplus": (lambda r: {"a": n(r, 3, 4)}, lambda t, r: weighted(ad.softplus(t["a"]), r)),
        "softmax": (lambda r: {"a": n(r, 3, 4)}, lambda t, r: weighted(ad.softmax(t["a"]), r)),
        "norm": (lambda r: {"a": n(r, 3, 4)}, lambda t, r: weighted(ad.norm(t["a"], keepdims=True), r)),
        "scale": (lambda r: {"a": n(r, 3, 4)}, lambda t, r: weighted(ad.scale(t["a"], -2.5), r)),
        "sum": (lambda r: {"a": n(r, 3, 4)}, lambda t, r: weighted(ad.sum_(t["a"], axis=0, keepdims=True), r)),
        "gather": (lambda r: {"a": n(r, 5, 3)}, lambda t, r: weighted(ad.gather(t["a"], ids, padding_idx=0), r)),
        "cross_entropy": (
            lambda r: {"a": n(r, 2, 3, 5)},
            lambda t, r: ad.cross_entropy(t["a"], np.array([[1, 4, 0], [2, 2, 3]]), np.array([[1, 1, 0], [1, 0, 1]], bool)),
        ),
    }


def check_primitive(kind, seed):
    make, build = primitive_cases()[kind]
    params = make(np.random.default_rng(seed))
    # the scalarizing weights must be identical across every evaluation
    return gradient_error(lambda t: build(t, np.random.default_rng(10_000 + seed)), params)


GRAD_CONFIG = dict(n_items=10, seq_len=6, embed_dim=4, hidden_dim=8, n_slots=2, slot_dim=4, attn_dim=3)


def model_gradient_error(config, seed, n_coords=60):
    """Relative error of the full-model loss gradient on random coordinates
    plus one random directional derivative over all parameters."""
    from cmnrec import CmnRec

    rng = np.random.default_rng(seed)
    model = CmnRec(config, seed=seed)
    ids = rng.integers(1, config.n_items + 1, size=(2, config.seq_len))
    ids[1, :2] = 0  # exercise padding

    def build(t):
        return model.loss(ids, None, t)[0]

    names = list(model.params)
    flat = [(k, idx) for k in names for idx in np.ndindex(model.params[k].shape)]
    pick = {k: [] for k in names}
    for k in names:  # at least one coordinate per tensor
        pick[k].append(tuple(rng.integers(0, s) for s in model.params[k].shape))
    for j in rng.choice(len(flat), size=n_coords, replace=False):
        k, idx = flat[j]
        pick[k].append(idx)
    err = gradient_error(build, model.params, coords=pick)

    tape = Tape()
    leaves = model.bind(tape)
    grads = ad.backward(model.loss(ids, tape, leaves)[0], list(leaves.values()))
    direction = {k: rng.standard_normal(v.shape) for k, v in model.params.items()}
    analytic = sum(float(np.sum(grads[leaves[k]] * direction[k])) for k in names)
    eps = 1e-5

    def at(sign):
        p = {k: Tensor(v + sign * eps * direction[k]) for k, v in model.params.items()}
        return float(model.loss(ids, None, p)[0].value)

    numeric = (at(1) - at(-1)) / (2 * eps)
    return max(err, abs(analytic - numeric) / max(1.0, abs(analytic)))
