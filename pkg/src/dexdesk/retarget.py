"""Keyvector hand-pose retargeting.

Human hand observations arrive as six landmarks (palm plus five fingertips).
Fifteen "keyvectors" are formed from them: the five palm-to-fingertip
vectors followed by the ten fingertip-pair vectors in lexicographic finger
order. The robot-side keyvectors come from forward kinematics, and the
retargeting solve minimizes

    E(q) = sum_i sqrt(|v_i_human - c_i * v_i_robot(q)|^2 + eps) - 15 sqrt(eps)

over the actuated joint angles q, a smoothed sum of residual norms (the
sqrt(eps) offset keeps the minimum value at zero). The solver is damped
gradient descent with backtracking and projection onto the joint-limit box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, RetargetDiverged
from .hands import HandFrames, HandModel, fk_points, forward_kinematics, point_jacobians

N_KEYVECTORS = 15
_PAIRS = [(a, b) for a in range(5) for b in range(a + 1, 5)]


@dataclass(frozen=True)
class HumanHandObs:
    """Palm and fingertip landmark positions in meters (any common frame)."""

    palm_position: np.ndarray
    fingertip_positions: np.ndarray  # (5, 3)

    def __post_init__(self):
        palm = np.asarray(self.palm_position, dtype=np.float64).reshape(3)
        tips = np.asarray(self.fingertip_positions, dtype=np.float64).reshape(5, 3)
        if not (np.all(np.isfinite(palm)) and np.all(np.isfinite(tips))):
            raise ContractViolation("hand landmarks must be finite")
        if np.linalg.norm(tips - palm, axis=1).max() > 0.5:
            raise ContractViolation("fingertip more than 0.5 m from palm; not a hand")
        object.__setattr__(self, "palm_position", palm)
        object.__setattr__(self, "fingertip_positions", tips)


@dataclass(frozen=True)
class KeyvectorSet:
    """The 15 vectors: 5 palm->tip, then the 10 tip pairs (0,1),(0,2),...,(3,4)."""

    vectors: np.ndarray  # (15, 3)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64).reshape(N_KEYVECTORS, 3).copy()
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)


@dataclass(frozen=True)
class RetargetConfig:
    scales: np.ndarray = field(default_factory=lambda: np.ones(N_KEYVECTORS))
    smoothing_eps: float = 1e-8  # meters^2
    max_iters: int = 300
    step_tol: float = 1e-8
    init_step: float = 0.05
    use_analytic_gradient: bool = True

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float64).reshape(N_KEYVECTORS).copy()
        if np.any(scales <= 0):
            raise ContractViolation("keyvector scales must be positive")
        if self.smoothing_eps <= 0:
            raise ContractViolation("smoothing_eps must be positive")
        scales.flags.writeable = False
        object.__setattr__(self, "scales", scales)


def keyvectors_from_points(palm: np.ndarray, tips: np.ndarray) -> KeyvectorSet:
    vs = np.empty((N_KEYVECTORS, 3))
    vs[:5] = tips - palm
    for i, (a, b) in enumerate(_PAIRS):
        vs[5 + i] = tips[b] - tips[a]
    return KeyvectorSet(vs)


def compute_keyvectors(frames: HandFrames) -> KeyvectorSet:
    tips = np.stack([t.translation for t in frames.tips])
    return keyvectors_from_points(frames.palm.translation, tips)


def human_keyvectors(obs: HumanHandObs) -> KeyvectorSet:
    return keyvectors_from_points(obs.palm_position, obs.fingertip_positions)


def energy(kv_h: KeyvectorSet, kv_r: KeyvectorSet, cfg: RetargetConfig) -> float:
    """Smoothed sum of keyvector mismatch norms; zero iff v_h = c * v_r."""
    resid = kv_h.vectors - cfg.scales[:, None] * kv_r.vectors
    s = np.einsum("ij,ij->i", resid, resid)
    eps = cfg.smoothing_eps
    return float(np.sum(np.sqrt(s + eps) - np.sqrt(eps)))


def energy_and_gradient(
    model: HandModel, kv_h: KeyvectorSet, dof: np.ndarray, cfg: RetargetConfig
) -> tuple[float, np.ndarray]:
    """Energy plus its analytic gradient w.r.t. the actuated dof.

    Keyvector Jacobians are differences of the palm/fingertip position
    Jacobians, so dE/dq assembles directly from :func:`point_jacobians`.
    """
    palm, tips = fk_points(model, dof)
    kv_r = keyvectors_from_points(palm, tips)
    jac = point_jacobians(model, dof)  # (6, 3, D): palm, tips 0..4
    kv_jac = np.empty((N_KEYVECTORS, 3, model.dof))
    kv_jac[:5] = jac[1:] - jac[0]
    for i, (a, b) in enumerate(_PAIRS):
        kv_jac[5 + i] = jac[1 + b] - jac[1 + a]

    resid = kv_h.vectors - cfg.scales[:, None] * kv_r.vectors
    s = np.einsum("ij,ij->i", resid, resid)
    denom = np.sqrt(s + cfg.smoothing_eps)
    e = float(np.sum(denom - np.sqrt(cfg.smoothing_eps)))
    # d/dq sqrt(s+eps) = (resid . d resid/dq) / sqrt(s+eps), d resid/dq = -c * kv_jac
    weights = -cfg.scales / denom
    grad = np.einsum("i,ij,ijk->k", weights, resid, kv_jac)
    return e, grad


def energy_gradient_fd(
    model: HandModel, kv_h: KeyvectorSet, dof: np.ndarray, cfg: RetargetConfig,
    h: float = 1e-6,
) -> np.ndarray:
    """Central finite-difference gradient (reference path)."""
    dof = np.asarray(dof, dtype=np.float64)
    grad = np.zeros_like(dof)
    for i in range(dof.size):
        hi = dof.copy()
        lo = dof.copy()
        hi[i] += h
        lo[i] -= h
        e_hi = energy(kv_h, keyvectors_from_points(*fk_points(model, hi)), cfg)
        e_lo = energy(kv_h, keyvectors_from_points(*fk_points(model, lo)), cfg)
        grad[i] = (e_hi - e_lo) / (2 * h)
    return grad


@dataclass
class RetargetResult:
    dof: np.ndarray
    energy: float
    iterations: int
    energy_trace: list[float]


def solve_retarget(
    model: HandModel,
    human: HumanHandObs,
    q_init: np.ndarray,
    cfg: RetargetConfig | None = None,
) -> RetargetResult:
    """Minimize the keyvector energy from ``q_init``.

    Damped gradient descent: each iterate proposes q - step * grad projected
    onto the joint-limit box, halving the step until the energy decreases
    (and growing it again after accepted steps). Terminates when the
    accepted step moves less than ``step_tol`` or after ``max_iters``.
    Deterministic for fixed inputs.
    """
    cfg = cfg or RetargetConfig()
    kv_h = human_keyvectors(human)
    q = model.clamp(np.asarray(q_init, dtype=np.float64).reshape(model.dof))

    def grad_at(qq):
        if cfg.use_analytic_gradient:
            return energy_and_gradient(model, kv_h, qq, cfg)
        e = energy(kv_h, keyvectors_from_points(*fk_points(model, qq)), cfg)
        return e, energy_gradient_fd(model, kv_h, qq, cfg)

    e, grad = grad_at(q)
    if not np.isfinite(e):
        raise RetargetDiverged(f"initial energy is not finite: {e}")

    trace = [e]
    step = cfg.init_step
    prev_q = prev_grad = None
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        # spectral (Barzilai-Borwein) trial length, kept monotone by backtracking
        if prev_q is not None:
            dq = q - prev_q
            dg = grad - prev_grad
            denom = float(dq @ dg)
            if denom > 1e-18:
                step = min(max(float(dq @ dq) / denom, 1e-7), 50.0)
        accepted = False
        for _ in range(50):
            cand = model.clamp(q - step * grad)
            e_cand = energy(kv_h, keyvectors_from_points(*fk_points(model, cand)), cfg)
            if not np.isfinite(e_cand):
                raise RetargetDiverged("energy became non-finite during line search")
            if e_cand < e:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        moved = float(np.abs(cand - q).max())
        prev_q, prev_grad = q, grad
        q = cand
        e, grad = grad_at(q)
        trace.append(e)
        if moved < cfg.step_tol:
            break
    return RetargetResult(dof=q, energy=e, iterations=iters, energy_trace=trace)
