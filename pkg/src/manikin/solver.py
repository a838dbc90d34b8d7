"""Numerical engines: dynamics recursion, hybrid partitioned solve, integration, IK.

All dynamics go through one recursive Newton-Euler pass (:func:`rnea`).  The
mass matrix is that pass applied to unit accelerations with zero velocity and
gravity; the bias vector ``c(q, qd) + g(q)`` is the pass with zero
acceleration.
"""
from __future__ import annotations

import enum
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonPositiveDt, SingularMass, ValidationError
from .model import (
    Hand,
    State,
    _check_q,
    chain_dofs,
    chain_reach,
    clamp_to_limits,
    center_of_mass,
    kinematics,
    left_jacobian_dot,
    log_so3,
    jacobian,
)

GRAVITY = np.array([0.0, 0.0, -9.81])


def _skews(v):
    """Stack of cross-product matrices for an (n, 3) array."""
    S = np.zeros((len(v), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -v[:, 2], v[:, 1]
    S[:, 1, 0], S[:, 1, 2] = v[:, 2], -v[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -v[:, 1], v[:, 0]
    return S


def _cross(a, b):
    """Row-wise cross product on the last axis (broadcasting)."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack((a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0), axis=-1)


def rnea(sk, kin, qdd, base_acc, qd=None):
    """Recursive Newton-Euler over a batch of acceleration columns.

    ``qdd`` is (m, dof) and ``base_acc`` (m, 3) is an extra linear acceleration
    of the world frame (pass ``-gravity`` to include gravity).  Velocity
    ``qd`` is shared by every column.  Returns generalized forces (m, dof).

    The outward and inward passes are written as sums over the tree with the
    skeleton's ancestor matrix ``S`` (``S[k, i] = 1`` when link k is on the
    path to link i): outward quantities accumulate along ancestors
    (``S.T @ x``), inward ones over descendants (``S @ x``).
    """
    qdd = np.atleast_2d(qdd)
    m = qdd.shape[0]
    nl, n = len(sk.links), sk.n_joints
    S = sk.subtree
    parent, jdof = sk.parent, sk.joint_dof
    root = sk.order[0]
    has = jdof >= 0
    par = np.where(has, parent, root)
    z = kin.z                                   # zero row for the root
    r = np.where(has[:, None], kin.p - kin.p[par], 0.0)
    qdd_j = np.zeros((nl, m))
    qdd_j[has] = qdd[:, jdof[has]].T

    def down(x):
        """Accumulate per-link increments from the root outward."""
        return (S.T @ x.reshape(nl, -1)).reshape(x.shape)

    def up(x):
        """Sum per-link quantities over each subtree."""
        return (S @ x.reshape(nl, -1)).reshape(x.shape)

    A0 = np.asarray(base_acc, dtype=float).reshape(m, 3).copy()
    WD0 = np.zeros((m, 3))
    vel = qd is not None and np.any(qd)
    if sk.free_flyer:
        A0 += qdd[:, n:n + 3]
        WD0 = qdd[:, n + 3:n + 6] @ kin.Jl.T
    WD = WD0[None] + down(qdd_j[:, :, None] * z[:, None, :])
    A = A0[None] + down(WD[par] @ _skews(r))

    if vel:
        w0 = np.zeros(3)
        wdb0 = np.zeros(3)
        if sk.free_flyer:
            dphi = qd[n + 3:n + 6]
            w0 = kin.Jl @ dphi
            wdb0 = left_jacobian_dot(kin.phi, dphi) @ dphi
        qd_j = np.where(has, qd[np.maximum(jdof, 0)], 0.0)
        w = w0 + down(qd_j[:, None] * z)
        wp = w[par]
        wdb = wdb0 + down(qd_j[:, None] * _cross(wp, z))
        inc = _cross(wdb[par], r) + _cross(wp, _cross(wp, r))
        ab = down(np.where(has[:, None], inc, 0.0))

    rho = np.einsum("lij,lj->li", kin.R, sk.coms)
    Iw = kin.R @ sk.inertias @ kin.R.transpose(0, 2, 1)
    Ac = A + WD @ _skews(rho)
    Nn = WD @ Iw.transpose(0, 2, 1)
    if vel:
        Iww = np.einsum("lij,lj->li", Iw, w)
        Ac += (ab + _cross(wdb, rho) + _cross(w, _cross(w, rho)))[:, None, :]
        Nn += (np.einsum("lij,lj->li", Iw, wdb) + _cross(w, Iww))[:, None, :]
    F = sk.masses[:, None, None] * Ac
    c = kin.p + rho
    # moments about the world origin, summed over subtrees, then shifted to each joint
    Fs = up(F)
    Ns = up(Nn - F @ _skews(c)) + Fs @ _skews(kin.p)

    tau = np.zeros((m, sk.dof))
    tau[:, jdof[has]] = np.einsum("lmj,lj->ml", Ns[has], z[has])
    if sk.free_flyer:
        tau[:, n:n + 3] = Fs[root]
        tau[:, n + 3:n + 6] = Ns[root] @ kin.Jl
    return tau


# --------------------------------------------------------------------------
# Cached per-configuration terms
# --------------------------------------------------------------------------

_CACHE_SIZE = 8
_cache = OrderedDict()
_cache_lock = threading.Lock()


def _readonly(a):
    a.flags.writeable = False
    return a


def _cached(kind, sk, arrays, compute):
    key = (kind, id(sk)) + tuple(np.ascontiguousarray(a).tobytes() for a in arrays)
    with _cache_lock:
        hit = _cache.get(key)
        if hit is not None and hit[0] is sk:
            _cache.move_to_end(key)
            return hit[1]
    value = compute()
    with _cache_lock:
        _cache[key] = (sk, value)
        if len(_cache) > _CACHE_SIZE:
            _cache.popitem(last=False)
    return value


def _check_state(sk, s):
    q = _check_q(sk, s.q)
    qd = _check_q(sk, s.qd, "qd")
    return q, qd


def _inertia_and_gravity(sk, q):
    """One batched pass: unit-acceleration columns plus a default-gravity column."""
    def compute():
        kin = kinematics(sk, q)
        qdd = np.vstack([np.eye(sk.dof), np.zeros((1, sk.dof))])
        base = np.zeros((sk.dof + 1, 3))
        base[-1] = -GRAVITY
        cols = rnea(sk, kin, qdd, base)
        M = cols[:-1]
        return _readonly(0.5 * (M + M.T)), _readonly(cols[-1].copy())

    return _cached("Mg", sk, (q,), compute)


def mass_matrix(sk, q):
    """Joint-space inertia ``M(q)``, one recursion column per unit acceleration."""
    return _inertia_and_gravity(sk, _check_q(sk, q))[0]


def bias_forces(sk, q, qd, gravity=GRAVITY):
    """``c(q, qd) + g(q)``: the recursion at zero acceleration."""
    q = _check_q(sk, q)
    qd = _check_q(sk, qd, "qd")
    g = np.asarray(gravity, dtype=float)

    def compute():
        kin = kinematics(sk, q)
        return _readonly(rnea(sk, kin, np.zeros((1, sk.dof)), -g[None, :], qd)[0])

    return _cached("b", sk, (q, qd, g), compute)


def gravity_torques(sk, q, gravity=GRAVITY):
    """``g(q)``, the generalized gravity force."""
    q = _check_q(sk, q)
    g = np.asarray(gravity, dtype=float)
    if np.array_equal(g, GRAVITY):
        return _inertia_and_gravity(sk, q)[1]
    return bias_forces(sk, q, np.zeros(sk.dof), g)


def _cholesky(M):
    try:
        return scipy.linalg.cho_factor(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularMass(f"mass matrix is not positive definite: {exc}") from None


def _spd_solve(M, rhs):
    return scipy.linalg.cho_solve(_cholesky(M), rhs)


def forward_dynamics(sk, s, tau, gravity=GRAVITY):
    q, qd = _check_state(sk, s)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (sk.dof,):
        raise DimensionMismatch(f"tau has length {tau.size}, dof is {sk.dof}")
    M = mass_matrix(sk, q)
    b = bias_forces(sk, q, qd, gravity)
    return _spd_solve(M, tau - b)


def inverse_dynamics(sk, s, qdd, gravity=GRAVITY):
    q, qd = _check_state(sk, s)
    qdd = np.asarray(qdd, dtype=float)
    if qdd.shape != (sk.dof,):
        raise DimensionMismatch(f"qdd has length {qdd.size}, dof is {sk.dof}")
    kin = kinematics(sk, q)
    g = np.asarray(gravity, dtype=float)
    return rnea(sk, kin, qdd[None, :], -g[None, :], qd)[0]


# --------------------------------------------------------------------------
# Hybrid kinematic / dynamic solve
# --------------------------------------------------------------------------

@dataclass
class HybridPartition:
    """Prescribed accelerations on ``prescribed`` (K); torques on the rest (D).

    ``applied_torques`` is ordered like ``free``.
    """
    prescribed: np.ndarray
    prescribed_acc: np.ndarray
    free: np.ndarray
    applied_torques: np.ndarray

    def __post_init__(self):
        self.prescribed = np.asarray(self.prescribed, dtype=int).reshape(-1)
        self.prescribed_acc = np.asarray(self.prescribed_acc, dtype=float).reshape(-1)
        self.free = np.asarray(self.free, dtype=int).reshape(-1)
        self.applied_torques = np.asarray(self.applied_torques, dtype=float).reshape(-1)
        if self.prescribed.size != self.prescribed_acc.size:
            raise DimensionMismatch("one prescribed acceleration per prescribed index")
        if self.free.size != self.applied_torques.size:
            raise DimensionMismatch("one applied torque per free index")

    @classmethod
    def build(cls, dof, prescribed=None, torques=None):
        """From a ``{index: qdd}`` mapping and a full-length torque vector."""
        prescribed = dict(prescribed or {})
        K = np.array(sorted(prescribed), dtype=int)
        D = np.array([i for i in range(dof) if i not in prescribed], dtype=int)
        tau = np.zeros(dof) if torques is None else np.asarray(torques, dtype=float)
        return cls(K, [prescribed[k] for k in K], D, tau[D])

    def validate(self, dof):
        K, D = set(self.prescribed.tolist()), set(self.free.tolist())
        if K & D or K | D != set(range(dof)) or len(K) != self.prescribed.size or len(D) != self.free.size:
            raise ValidationError("partition must split the dofs into disjoint prescribed/free sets")


def hybrid_solve(sk, s, part, gravity=GRAVITY):
    """Solve the free accelerations given prescribed ones.

    Returns ``(qdd, constraint_torques)``; the torques are ordered like
    ``part.prescribed`` and are what the kinematic subsystem implicitly exerts.
    """
    q, qd = _check_state(sk, s)
    part.validate(sk.dof)
    M = mass_matrix(sk, q)
    b = bias_forces(sk, q, qd, gravity)
    K, D = part.prescribed, part.free
    if K.size == 0:
        return _spd_solve(M, part.applied_torques - b), np.zeros(0)
    qdd = np.zeros(sk.dof)
    qdd[K] = part.prescribed_acc
    if D.size:
        rhs = part.applied_torques - b[D] - M[np.ix_(D, K)] @ part.prescribed_acc
        qdd[D] = _spd_solve(M[np.ix_(D, D)], rhs)
    tau_K = M[K, :] @ qdd + b[K]
    return qdd, tau_K


# --------------------------------------------------------------------------
# Integration and energy
# --------------------------------------------------------------------------

def limit_impulse(sk, q, qd, idx):
    """Velocities after an inelastic stop of the joints ``idx``.

    The stop is the generalized impulse on ``idx`` alone that zeroes their
    velocity; the other coordinates respond through the inertia, so kinetic
    energy never increases.  Zeroing the entries directly can add energy on
    a floating or strongly coupled body.
    """
    idx = np.asarray(idx, dtype=int)
    qd = np.array(qd, dtype=float)
    try:
        c = _cholesky(mass_matrix(sk, q))
    except SingularMass:
        qd[idx] = 0.0
        return qd
    E = np.zeros((sk.dof, idx.size))
    E[idx, np.arange(idx.size)] = 1.0
    MinvE = scipy.linalg.cho_solve(c, E)
    lam = np.linalg.solve(MinvE[idx], qd[idx])
    qd = qd - MinvE @ lam
    qd[idx] = 0.0
    return qd


def step(s, qdd, dt, sk=None):
    """Semi-implicit Euler; with a skeleton, clamp limits and stop clamped joints."""
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    qdd = np.asarray(qdd, dtype=float)
    if qdd.shape != s.q.shape:
        raise DimensionMismatch(f"qdd has length {qdd.size}, state has {s.q.size}")
    qd = s.qd + qdd * dt
    q = s.q + qd * dt
    if sk is not None:
        n = sk.n_joints
        lo, hi = sk.lower, sk.upper
        hit = (q[:n] < lo) | (q[:n] > hi)
        if np.any(hit):
            q[:n] = np.minimum(np.maximum(q[:n], lo), hi)
            qd = limit_impulse(sk, q, qd, np.flatnonzero(hit))
    return State(q, qd, s.time + dt)


def kinetic_energy(sk, s):
    return 0.5 * s.qd @ mass_matrix(sk, s.q) @ s.qd


def potential_energy(sk, q, gravity=GRAVITY):
    return -sk.total_mass * float(np.asarray(gravity) @ center_of_mass(sk, q))


def mechanical_energy(sk, s, gravity=GRAVITY):
    return kinetic_energy(sk, s) + potential_energy(sk, s.q, gravity)


# --------------------------------------------------------------------------
# Inverse kinematics
# --------------------------------------------------------------------------

class IkStatus(enum.Enum):
    Converged = "Converged"
    MaxIters = "MaxIters"
    Unreachable = "Unreachable"


@dataclass
class IkProblem:
    end_effector: Hand
    target: np.ndarray
    damping: float = 0.05
    tol: float = 1e-4
    max_iters: int = 200
    step_scale: float = 1.0
    target_rotation: np.ndarray | None = None
    dofs: tuple | None = None     # chain dofs; default: joints on the root path
    best_effort: bool = True      # iterate even when the target is out of reach
    max_error: float | None = 0.2  # per-iteration cap on the position error (m); None: no cap
    limit_weighting: bool = False  # weighted least-norm steps that slow joints nearing a limit

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        if not self.damping > 0 or not self.tol > 0 or self.max_iters < 1:
            raise ValidationError("IK needs damping > 0, tol > 0 and max_iters >= 1")
        if not 0 < self.step_scale <= 1:
            raise ValidationError("step_scale must lie in (0, 1]")
        if self.max_error is not None and not self.max_error > 0:
            raise ValidationError("max_error must be positive or None")


@dataclass
class IkResult:
    q: np.ndarray
    status: IkStatus
    residual: float
    iters: int
    history: list = field(default_factory=list, repr=False)


def _ik_error(sk, q, prob):
    kin = kinematics(sk, q)
    i = sk.link_idx(prob.end_effector.link)
    x = kin.R[i] @ prob.end_effector.point + kin.p[i]
    e = prob.target - x
    if prob.target_rotation is not None:
        e = np.concatenate([e, log_so3(prob.target_rotation @ kin.R[i].T)])
    return e, kin


def dls_step(J, e, damping):
    """Damped least squares: ``J^T (J J^T + lambda^2 I)^-1 e``."""
    JJt = J @ J.T
    JJt[np.diag_indices_from(JJt)] += damping * damping
    return J.T @ np.linalg.solve(JJt, e)


def limit_weights(q, lo, hi, dq):
    """Joint weights ``1 + |dH/dq|`` for joints moving toward a limit, else 1.

    ``H = sum (hi - lo)^2 / (4 (hi - q)(q - lo))`` is the usual joint-limit
    performance criterion; it is 1 at mid-range and infinite at a limit.
    """
    span = hi - lo
    a, b = np.maximum(hi - q, 1e-9), np.maximum(q - lo, 1e-9)
    g = span * span * (2.0 * q - hi - lo) / (4.0 * a * a * b * b)
    toward = g * dq > 0
    return np.where(toward, 1.0 + np.abs(g), 1.0)


def weighted_dls_step(J, e, damping, w):
    """``W^-1 J^T (J W^-1 J^T + lambda^2 I)^-1 e`` for diagonal weights ``w``."""
    Jw = J / w
    JJt = Jw @ J.T
    JJt[np.diag_indices_from(JJt)] += damping * damping
    return Jw.T @ np.linalg.solve(JJt, e)


def solve_ik(sk, q0, prob):
    q = clamp_to_limits(sk, _check_q(sk, q0, "q0"))
    ee = prob.end_effector
    dofs = list(prob.dofs) if prob.dofs is not None else list(chain_dofs(sk, ee.link))
    rows = 6 if prob.target_rotation is not None else 3
    e, kin = _ik_error(sk, q, prob)
    r = float(np.linalg.norm(e))
    history = [r]

    unreachable = False
    if dofs:
        base, reach = chain_reach(sk, ee.link, ee.point, dofs, kin)
        unreachable = float(np.linalg.norm(prob.target - base)) > reach + prob.tol
    elif r > prob.tol:
        unreachable = True
    if unreachable and not prob.best_effort:
        return IkResult(q, IkStatus.Unreachable, r, 0, history)

    iters = 0
    for iters in range(prob.max_iters):
        if r <= prob.tol:
            break
        J = jacobian(sk, q, ee.link, ee.point, kin=kin)
        J = (J if rows == 6 else J[:3])[:, dofs]
        # far from the target a full step can fold the chain into a limit;
        # capping the error keeps the tip near the straight task-space path
        ec = e
        if prob.max_error is not None:
            n = float(np.linalg.norm(e[:3]))
            if n > prob.max_error:
                ec = e.copy()
                ec[:3] *= prob.max_error / n
        dq = dls_step(J, ec, prob.damping)
        if prob.limit_weighting:
            w = limit_weights(q[dofs], sk.lower[dofs], sk.upper[dofs], dq)
            if np.any(w > 1.0):
                dq = weighted_dls_step(J, ec, prob.damping, w)
            # stay strictly inside: no joint covers more than half its gap to a limit
            gap = np.where(dq > 0, sk.upper[dofs] - q[dofs], q[dofs] - sk.lower[dofs])
            moving = np.abs(dq) > 0
            if np.any(moving):
                frac = np.min(0.5 * gap[moving] / np.abs(dq[moving]))
                if frac < 1.0:
                    dq = dq * frac
        scale = prob.step_scale
        while True:
            qn = q.copy()
            qn[dofs] += scale * dq
            qn = clamp_to_limits(sk, qn)
            en, kin_n = _ik_error(sk, qn, prob)
            rn = float(np.linalg.norm(en))
            if rn <= r:
                break
            scale *= 0.5
            if scale < 1e-10:
                qn = None
                break
        if qn is None:
            break
        q, e, kin, r = qn, en, kin_n, rn
        history.append(r)
    else:
        iters = prob.max_iters

    if unreachable:
        status = IkStatus.Unreachable
    elif r <= prob.tol:
        status = IkStatus.Converged
    else:
        status = IkStatus.MaxIters
    return IkResult(q, status, r, iters, history)
