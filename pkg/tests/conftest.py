import numpy as np
import pytest

from fscil_lab import autodiff as ad


def numerical_gradients(build, values, h=1e-6):
    """Central-difference gradients of build(*values) w.r.t. every array.

    ``build`` receives plain numpy arrays and must return a float; it is
    re-evaluated from scratch for every perturbation, so this oracle is
    independent of the reverse-mode path it checks.
    """
    values = [np.array(v, dtype=np.float64) for v in values]
    grads = []
    for k, v in enumerate(values):
        g = np.zeros_like(v)
        it = np.nditer(v, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            vp = [x.copy() for x in values]
            vm = [x.copy() for x in values]
            vp[k][idx] += h
            vm[k][idx] -= h
            g[idx] = (build(*vp) - build(*vm)) / (2 * h)
        grads.append(g)
    return grads


def gradcheck(graph_build, values, rtol=1e-5, atol=1e-8, h=1e-6):
    """Compare reverse-mode gradients against the finite-difference oracle.

    ``graph_build`` takes leaf Tensors and returns a scalar loss Tensor.
    """
    tape = ad.Tape()
    leaves = [ad.Tensor(np.array(v, dtype=np.float64), tape=tape) for v in values]
    loss = graph_build(*leaves)
    grads = ad.backward(loss)

    def scalar_build(*arrs):
        t = ad.Tape()
        ls = [ad.Tensor(a, tape=t) for a in arrs]
        return graph_build(*ls).item()

    numeric = numerical_gradients(scalar_build, values, h=h)
    for leaf, num in zip(leaves, numeric):
        got = grads[leaf].reshape(num.shape)
        np.testing.assert_allclose(got, num, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
