import numpy as np

from stockcast import tensor as F


def param_fd_check(param, forward_loss, eps=1e-5, n_coords=5, tol=1e-4):
    """Central-difference check on a few coordinates of one parameter tensor.

    `forward_loss` must be a zero-argument callable returning a fresh scalar
    loss Tensor; it is re-run for every probe, so it has to be deterministic
    (eval-mode dropout, 64-bit precision).
    """
    with F.Tape() as tape:
        loss = forward_loss()
    F.backward(loss, tape)
    analytic = param.grad.copy().reshape(-1)
    flat = param.data.reshape(-1)
    coords = np.random.default_rng(0).choice(flat.size, size=min(n_coords, flat.size), replace=False)
    for ci in coords:
        orig = flat[ci]
        flat[ci] = orig + eps
        fp = forward_loss().item()
        flat[ci] = orig - eps
        fm = forward_loss().item()
        flat[ci] = orig
        numeric = (fp - fm) / (2 * eps)
        rel = abs(analytic[ci] - numeric) / max(1.0, abs(numeric))
        assert rel < tol, f"param grad mismatch at coord {ci}: rel err {rel}"
