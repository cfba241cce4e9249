"""Finite-difference oracles shared by unit and acceptance tests."""

import numpy as np

from rtmemu import nn


def _pattern(model, X):
    _, _, pre = nn.forward_cache(model, X)
    return np.concatenate([(z > 0).ravel() for z in pre[:-1]])


def _loss(model, X, t, loss):
    r = nn.forward_cache(model, X)[0] - t
    return np.mean(r * r) if loss == "mse" else np.mean(np.abs(r))


def fd_gradient_check(model, X, t, loss="mse", h=1e-5):
    """Max relative error of ``nn.backward`` against central differences.

    Parameters whose +/-h perturbation changes the ReLU activation pattern
    (i.e. crosses a kink) are excluded; for MAE, perturbations that flip the
    sign of any residual are excluded too. Returns ``(max_rel_err, n_excluded)``.
    """
    grads, _ = nn.backward(model, X, t, loss)
    base = _pattern(model, X)
    base_sign = np.sign(nn.forward_cache(model, X)[0] - t)
    worst, excluded = 0.0, 0
    for p, g in zip(model.params(), grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            vals, same = [], True
            for s in (+1, -1):
                p[idx] = orig + s * h
                same &= np.array_equal(_pattern(model, X), base)
                if loss == "mae":
                    same &= np.array_equal(np.sign(nn.forward_cache(model, X)[0] - t), base_sign)
                vals.append(_loss(model, X, t, loss))
            p[idx] = orig
            if not same:
                excluded += 1
                continue
            fd = (vals[0] - vals[1]) / (2 * h)
            a = g[idx]
            denom = max(abs(a), abs(fd))
            if denom < 1e-10:
                continue
            worst = max(worst, abs(a - fd) / denom)
    return worst, excluded


def fd_input_jacobian(model, x, h=1e-5):
    """Central-difference input gradient; ``ok`` is False if a perturbation crosses a kink."""
    base = _pattern(model, x[None, :])
    fd = np.empty_like(x)
    ok = True
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        ok &= np.array_equal(_pattern(model, (x + e)[None, :]), base)
        ok &= np.array_equal(_pattern(model, (x - e)[None, :]), base)
        fd[j] = (nn.forward(model, x + e) - nn.forward(model, x - e)) / (2 * h)
    return fd, bool(ok)


# acceptance verdicts, printed by the terminal-summary hook in conftest
ACCEPTANCE: list[str] = []


def record(criterion, ok, detail: str):
    """Log one acceptance verdict; ``ok`` may be None for report-only lines."""
    tag = "INFO" if ok is None else ("PASS" if ok else "FAIL")
    line = f"criterion {criterion}: {tag} - {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok
