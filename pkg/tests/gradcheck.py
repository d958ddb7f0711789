"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from keygen2vec.autodiff import Graph, backward, zero_grad


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f() / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def check_grads(loss_fn, params, h: float = 1e-5) -> dict[str, float]:
    """Relative error per parameter between backward() and finite differences.

    ``loss_fn()`` must build and return a scalar Tensor; it is called inside a
    Graph for the analytic pass and outside one for the numeric passes.
    """
    params = dict(params)
    zero_grad(params.values())
    with Graph() as g:
        loss = loss_fn()
    backward(g, loss)
    errors = {}
    for name, p in params.items():
        num = numeric_grad(lambda: loss_fn().item(), p.data, h)
        errors[name] = rel_error(p.grad, num)
    return errors
