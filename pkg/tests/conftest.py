import numpy as np
import pytest

from stylepoint.autodiff import Tape, Tensor, precision


def max_rel_err(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-3) -> float:
    """max |a - r| normalized by the largest reference magnitude (floored)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    scale = max(np.abs(reference).max(), floor)
    return float(np.abs(analytic - reference).max() / scale)


def check_grad(build_loss, arrays: dict, h: float = 1e-4, tol: float = 1e-3,
               max_entries: int = 64, seed: int = 0):
    """Compare tape gradients against central finite differences.

    ``build_loss(tensors)`` maps {name: Tensor} to a scalar Tensor. Large
    tensors are probed on a fixed random subset of entries. Both the
    analytic and FD passes run through the same op code in float64 (the
    usual gradcheck discipline), so the check verifies the backward rules
    without float32 forward roundoff masquerading as gradient error.
    """
    with precision(np.float64):
        tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        with Tape() as tape:
            loss = build_loss(tensors)
            grads = tape.backward(loss)

        def eval_loss() -> float:
            return build_loss({k: Tensor(t.data) for k, t in tensors.items()}).item()

        rng = np.random.default_rng(seed)
        failures = {}
        for name, t in tensors.items():
            g_analytic = grads.get(t)
            assert g_analytic is not None, f"no gradient recorded for {name}"
            flat = t.data.reshape(-1)
            n = flat.size
            entries = np.arange(n) if n <= max_entries else \
                np.sort(rng.choice(n, size=max_entries, replace=False))
            g_fd = np.zeros(len(entries))
            for out_i, i in enumerate(entries):
                orig = flat[i]
                flat[i] = orig + h
                up = eval_loss()
                flat[i] = orig - h
                down = eval_loss()
                flat[i] = orig
                g_fd[out_i] = (up - down) / (2 * h)
            err = max_rel_err(g_analytic.reshape(-1)[entries], g_fd)
            if err > tol:
                failures[name] = err
        assert not failures, f"finite-difference mismatch: {failures}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
