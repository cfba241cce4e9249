"""Surface reflectance retrieval through the emulator's analytic Jacobians.

Two modes:

* known atmosphere: channels decouple, so each channel is a scalar root find
  ``y_hat_i(rho) = y_obs_i`` solved by safeguarded Newton (bisection fallback)
  on [0, 0.9].
* joint: Levenberg-Marquardt over the four atmospheric parameters plus a
  Legendre expansion of the reflectance in normalized wavelength.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from . import emulator as emu
from .oracle import RHO_S_BOUNDS, STATE_FIELDS
from .sampling import N_ATM, StateRanges

RHO_LO, RHO_HI = RHO_S_BOUNDS


class RetrievalAborted(RuntimeError):
    pass


@dataclass
class RetrievalConfig:
    tol: float = 1e-8
    max_iters: int = 100
    basis_order: int = 6
    damping: float = 1e-3
    step_floor: float = 1e-12
    ranges: StateRanges = field(default_factory=StateRanges)

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.basis_order < 1:
            raise ValueError("max_iters and basis_order must be >= 1")


@dataclass
class RetrievalResult:
    rho_s_hat: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    history: list = field(default_factory=list)
    state_hat: np.ndarray | None = None
    coeffs: np.ndarray | None = None
    flags: list = field(default_factory=list)
    channel_converged: np.ndarray | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        d = {
            "rho_s_hat": self.rho_s_hat.tolist(),
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "history": list(self.history),
            "flags": list(self.flags),
            "reason": self.reason,
        }
        if self.state_hat is not None:
            d["state_hat"] = dict(zip(STATE_FIELDS, self.state_hat.tolist()))
            d["coeffs"] = self.coeffs.tolist()
        return d


def invert_reflectance(y_obs, state, F: emu.EmulatorModel, cfg: RetrievalConfig | None = None
                       ) -> RetrievalResult:
    """Per-channel inversion for surface reflectance with the atmosphere known.

    Each channel is bracketed on [0, 0.9]. A channel whose observation lies
    below the emulated value at rho=0 (the path-reflectance floor) is clamped
    to 0 and flagged ``below_floor``; one above the value at 0.9 is clamped and
    flagged ``above_range``. Channels never interact.
    """
    cfg = cfg or RetrievalConfig()
    y = np.asarray(y_obs, dtype=float).ravel()
    if y.size != F.k:
        raise ValueError(f"observation has {y.size} channels, emulator has {F.k}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observation contains non-finite values")
    x = state.as_array() if hasattr(state, "as_array") else np.asarray(state, dtype=float)
    xs = x[None, :]

    def f(rho):
        return emu.predict_batch(F, xs, rho[None, :])[0] - y

    def f_and_df(rho):
        _, d = emu.jacobian_batch(F, xs, rho[None, :])
        return f(rho), d[0]

    k = F.k
    lo = np.full(k, RHO_LO)
    hi = np.full(k, RHO_HI)
    f_lo, f_hi = f(lo), f(hi)
    flags = ["ok"] * k
    rho = np.full(k, np.nan)
    done = np.zeros(k, dtype=bool)
    for i in range(k):
        if f_lo[i] >= 0:
            rho[i], done[i] = RHO_LO, True
            if f_lo[i] > cfg.tol:
                flags[i] = "below_floor"
        elif f_hi[i] <= 0:
            rho[i], done[i] = RHO_HI, True
            if -f_hi[i] > cfg.tol:
                flags[i] = "above_range"
    # linear interpolation inside the bracket as the starting point
    start = lo - f_lo * (hi - lo) / np.where(f_hi != f_lo, f_hi - f_lo, 1.0)
    rho = np.where(done, rho, np.clip(start, lo, hi))

    history = []
    it = 0
    for it in range(1, cfg.max_iters + 1):
        r, d = f_and_df(rho)
        history.append(float(np.linalg.norm(np.where(done & (np.array(flags) != "ok"), 0.0, r))))
        active = ~done & (np.abs(r) > cfg.tol)
        done |= ~done & (np.abs(r) <= cfg.tol)
        if not active.any():
            break
        # shrink the bracket around the root
        lo = np.where(active & (r < 0), rho, lo)
        hi = np.where(active & (r > 0), rho, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = rho - r / d
        ok = (d > 0) & np.isfinite(newton) & (newton > lo) & (newton < hi)
        step = np.where(ok, newton, 0.5 * (lo + hi))
        # bracket collapsed to float resolution: accept
        collapsed = active & (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(hi)))
        done |= collapsed
        rho = np.where(active & ~collapsed, step, rho)

    r = f(rho)
    ch_conv = (np.abs(r) <= cfg.tol) | (np.array(flags) != "ok") | done
    for i in np.flatnonzero(~ch_conv):
        flags[i] = "not_converged"
    resid = np.where(np.array(flags) == "ok", r, 0.0)
    return RetrievalResult(
        rho_s_hat=np.clip(rho, RHO_LO, RHO_HI), iterations=it,
        residual_norm=float(np.linalg.norm(resid)), converged=bool(ch_conv.all()),
        history=history, flags=flags, channel_converged=ch_conv,
        reason="all channels solved" if ch_conv.all() else "some channels failed",
    )


def legendre_basis(lambdas, order: int) -> np.ndarray:
    """k x order matrix of Legendre polynomials in wavelength mapped to [-1, 1]."""
    lam = np.asarray(lambdas, dtype=float)
    span = lam.max() - lam.min()
    t = np.zeros_like(lam) if span == 0 else 2.0 * (lam - lam.min()) / span - 1.0
    return legendre.legvander(t, order - 1)


def fit_coeffs(rho_s, basis: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(basis, np.asarray(rho_s, dtype=float), rcond=None)[0]


def _emulator_model(F: emu.EmulatorModel, basis: np.ndarray):
    """Packed-parameter forward model returning (prediction, Jacobian)."""

    def model(x):
        state, coeffs = x[:N_ATM], x[N_ATM:]
        raw = basis @ coeffs
        rho = np.clip(raw, RHO_LO, RHO_HI)
        pred = emu.predict_batch(F, state[None, :], rho[None, :])[0]
        J_atm, J_diag = emu.jacobian_batch(F, state[None, :], rho[None, :])
        inside = (raw >= RHO_LO) & (raw <= RHO_HI)
        J = np.hstack([J_atm[0], (J_diag[0] * inside)[:, None] * basis])
        return pred, J

    return model


def residual_and_gradient(x_packed, y_obs, F, basis=None):
    """Residual r = F(x) - y_obs, gradient J^T r and Gauss-Newton matrix J^T J.

    ``F`` is an EmulatorModel (with ``basis`` the Legendre matrix) or any
    callable mapping packed parameters to ``(prediction, jacobian)``.
    """
    x = np.asarray(x_packed, dtype=float)
    model = F if callable(F) else _emulator_model(F, basis)
    pred, J = model(x)
    r = pred - np.asarray(y_obs, dtype=float)
    return r, J.T @ r, J.T @ J


def _project(x, lo, hi):
    return np.clip(x, lo, hi)


def invert_joint(y_obs, F: emu.EmulatorModel, cfg: RetrievalConfig | None = None, init=None
                 ) -> RetrievalResult:
    """Damped least squares for atmosphere and smooth reflectance together.

    Minimizes 0.5 ||F(x) - y_obs||^2. Steps are projected onto the state
    ranges; a step is accepted only if it lowers the residual norm, after which
    the damping is divided by 10, otherwise multiplied by 10. Reaching
    ``max_iters`` returns ``converged=False`` rather than raising.
    """
    cfg = cfg or RetrievalConfig()
    y = np.asarray(y_obs, dtype=float).ravel()
    P = cfg.basis_order
    if y.size != F.k:
        raise ValueError(f"observation has {y.size} channels, emulator has {F.k}")
    if F.k <= N_ATM + P:
        raise ValueError(f"joint mode needs k > {N_ATM + P} channels, emulator has {F.k}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observation contains non-finite values")
    basis = legendre_basis(F.grid.lambdas, P)
    model = _emulator_model(F, basis)

    lo_s, hi_s = (np.array(v) for v in zip(*[getattr(cfg.ranges, f) for f in STATE_FIELDS]))
    lo = np.concatenate([lo_s, np.full(P, -np.inf)])
    hi = np.concatenate([hi_s, np.full(P, np.inf)])
    if init is None:
        c0 = fit_coeffs(np.full(F.k, 0.5 * sum(cfg.ranges.rho_s)), basis)
        init = np.concatenate([0.5 * (lo_s + hi_s), c0])
    x = _project(np.asarray(init, dtype=float).copy(), lo, hi)

    r, g, A = residual_and_gradient(x, y, model)
    cost = float(np.linalg.norm(r))
    history = [cost]
    lam = cfg.damping
    converged, reason = cost <= cfg.tol, "tolerance" if cost <= cfg.tol else ""
    it = 0
    while not converged and it < cfg.max_iters:
        it += 1
        accepted = False
        while lam <= 1e16:
            diag = np.maximum(np.diag(A), 1e-12)
            try:
                step = -np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = _project(x + step, lo, hi)
            dx = x_new - x
            if np.linalg.norm(dx) <= cfg.step_floor * (1.0 + np.linalg.norm(x)):
                break
            r_new, g_new, A_new = residual_and_gradient(x_new, y, model)
            cost_new = float(np.linalg.norm(r_new))
            if not np.isfinite(cost_new):
                raise RetrievalAborted(f"non-finite residual at iteration {it}")
            if cost_new < cost:
                x, r, g, A, cost = x_new, r_new, g_new, A_new, cost_new
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        history.append(cost)
        if cost <= cfg.tol:
            converged, reason = True, "tolerance"
        elif not accepted:
            converged, reason = True, "step floor"
    if not converged:
        reason = "max_iters"

    raw = basis @ x[N_ATM:]
    return RetrievalResult(
        rho_s_hat=np.clip(raw, RHO_LO, RHO_HI), iterations=it, residual_norm=cost,
        converged=converged, history=history, state_hat=x[:N_ATM].copy(),
        coeffs=x[N_ATM:].copy(), reason=reason,
    )


def add_noise(y, sigma: float, seed: int):
    """Seeded Gaussian noise for robustness experiments."""
    y = np.asarray(y, dtype=float)
    if sigma <= 0:
        return y.copy()
    return y + np.random.default_rng(seed).normal(0.0, sigma, size=y.shape)
