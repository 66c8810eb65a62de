"""Serial-chain rigid-body dynamics with compliant joints.

Implements every term of

    M(q) qdd + C(q, qd) qd + D qd + K q + g(q) = B u

for a chain of rigid segments connected by revolute (1-DOF) or ball (3-DOF)
joints. Ball joints are parameterized by intrinsic XYZ rotation angles and
unrolled internally into three chained elementary rotations, so q stays a
plain real vector and all recursions are single-DOF.

Conventions: the base sits at the world origin; each link frame has its
origin at the link's joint and the link extends along local -z, so q = 0 is
a straight chain hanging along gravity. The inertia matrix comes from the
composite-rigid-body recursion and the bias forces from recursive
Newton-Euler passes, both evaluated in world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

GRAVITY_DEFAULT = (0.0, 0.0, -9.81)
COND_LIMIT = 1e12


class IllConditioned(RuntimeError):
    """The inertia matrix is numerically singular; the model is broken."""


@dataclass(frozen=True)
class Link:
    """One rigid segment: mass [kg], COM offset [m] in the link frame,
    diagonal rotational inertia about the COM [kg m^2], and length [m]."""

    mass: float
    com: tuple[float, float, float]
    inertia: tuple[float, float, float]
    length: float


@dataclass(frozen=True)
class Joint:
    """Joint preceding a link: 'revolute' with a unit axis, or 'ball'."""

    kind: str
    axis: tuple[float, float, float] | None = None

    @property
    def dofs(self) -> int:
        return 1 if self.kind == "revolute" else 3


@dataclass(frozen=True)
class RobotState:
    """Joint positions [rad], velocities [rad/s], and time [s]."""

    q: np.ndarray
    dq: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "dq", np.asarray(self.dq, dtype=float))
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.dq))):
            raise ValueError("state entries must be finite")


@dataclass(frozen=True)
class DynamicsTerms:
    """The dynamics quintuple at one state: inertia matrix plus the four
    generalized-force vectors (Coriolis, damping, stiffness, gravity)."""

    M: np.ndarray
    c_vec: np.ndarray
    d_vec: np.ndarray
    k_vec: np.ndarray
    g_vec: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return self.c_vec + self.d_vec + self.k_vec + self.g_vec


_BALL_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
              np.array([0.0, 0.0, 1.0]))


@dataclass(frozen=True)
class RobotModel:
    """Immutable description of a serial-chain robot.

    B maps the m inputs to joint torques; u_min/u_max bound the inputs.
    K_s and D_s are constant diagonal joint stiffness and damping. task_dim
    selects the controlled end-effector coordinates: 2 for planar (x, z),
    3 for spatial.
    """

    name: str
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    K_s: np.ndarray
    D_s: np.ndarray
    B: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    task_dim: int
    gravity: tuple[float, float, float] = GRAVITY_DEFAULT
    ee_offset: tuple[float, float, float] | None = None

    def __post_init__(self):
        for name in ("K_s", "D_s", "B", "u_min", "u_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        self.validate()

    def validate(self):
        if len(self.links) != len(self.joints):
            raise ValueError("need one joint per link")
        n = self.n
        if self.K_s.shape != (n,) or self.D_s.shape != (n,):
            raise ValueError(f"K_s and D_s must have {n} entries")
        if np.any(self.K_s < 0.0) or np.any(self.D_s < 0.0):
            raise ValueError("stiffness and damping must be nonnegative")
        if any(link.mass <= 0.0 for link in self.links):
            raise ValueError("link masses must be positive")
        if any(link.length <= 0.0 for link in self.links):
            raise ValueError("link lengths must be positive")
        if self.B.ndim != 2 or self.B.shape[0] != n:
            raise ValueError(f"B must be {n}xM, got {self.B.shape}")
        m = self.m
        if m > n:
            raise ValueError("more inputs than degrees of freedom")
        if np.linalg.matrix_rank(self.B) < m:
            raise ValueError("B must have full column rank")
        if self.u_min.shape != (m,) or self.u_max.shape != (m,):
            raise ValueError(f"input bounds must have {m} entries")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be strictly below u_max")
        if self.task_dim not in (2, 3):
            raise ValueError("task_dim must be 2 or 3")
        for joint in self.joints:
            if joint.kind not in ("revolute", "ball"):
                raise ValueError(f"unknown joint kind {joint.kind!r}")
            if joint.kind == "revolute":
                ax = np.asarray(joint.axis, dtype=float)
                if ax.shape != (3,) or not np.isclose(np.linalg.norm(ax), 1.0, atol=1e-9):
                    raise ValueError("revolute joints need a unit 3-vector axis")

    @property
    def n(self) -> int:
        return sum(j.dofs for j in self.joints)

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def L(self) -> float:
        return float(sum(link.length for link in self.links))

    @cached_property
    def _chain(self) -> "_CompiledChain":
        return _compile_chain(self)

    def rest_state(self) -> RobotState:
        return RobotState(q=np.zeros(self.n), dq=np.zeros(self.n), t=0.0)


@dataclass(frozen=True)
class _CompiledChain:
    """Per-elementary-DOF arrays driving the vectorized recursions."""

    offsets: np.ndarray        # (n, 3) translation from parent element, parent frame
    axes: np.ndarray           # (n, 3) local rotation axis
    mass: np.ndarray           # (n,)   body mass attached to this element (0 for
                               #        intermediate ball-rotation frames)
    com_local: np.ndarray      # (n, 3)
    inertia_local: np.ndarray  # (n, 3) diagonal about COM
    ee_local: np.ndarray       # (3,)  end-effector point in last element frame
    gravity: np.ndarray        # (3,)


def _compile_chain(model: RobotModel) -> _CompiledChain:
    offsets, axes, mass, com, inertia = [], [], [], [], []
    prev_tip = np.zeros(3)
    for link, joint in zip(model.links, model.joints):
        sub_axes = ([np.asarray(joint.axis, dtype=float)] if joint.kind == "revolute"
                    else list(_BALL_AXES))
        for k, ax in enumerate(sub_axes):
            offsets.append(prev_tip if k == 0 else np.zeros(3))
            axes.append(ax)
            last = k == len(sub_axes) - 1
            mass.append(link.mass if last else 0.0)
            com.append(np.asarray(link.com, dtype=float) if last else np.zeros(3))
            inertia.append(np.asarray(link.inertia, dtype=float) if last else np.zeros(3))
        prev_tip = np.array([0.0, 0.0, -link.length])
    ee = (np.asarray(model.ee_offset, dtype=float) if model.ee_offset is not None
          else prev_tip)
    return _CompiledChain(
        offsets=np.array(offsets), axes=np.array(axes), mass=np.array(mass),
        com_local=np.array(com), inertia_local=np.array(inertia),
        ee_local=ee, gravity=np.asarray(model.gravity, dtype=float))


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise 3-vector cross product; much cheaper than np.cross for the
    small stacked arrays used throughout the recursions."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    v = 1.0 - c
    return np.array([
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
    ])


@dataclass
class ChainPose:
    """World-frame kinematics of every elementary DOF at a configuration."""

    axes_w: np.ndarray    # (n, 3) joint axes
    origins: np.ndarray   # (n, 3) joint origins
    rot: np.ndarray       # (n, 3, 3) frame orientations
    com_w: np.ndarray     # (n, 3) body COM positions
    inertia_w: np.ndarray  # (n, 3, 3) body inertias about COM
    mass: np.ndarray
    ee: np.ndarray        # (3,) end-effector position
    gravity: np.ndarray
    offsets_w: np.ndarray = field(default=None)  # (n, 3) origin[k] - origin[k-1]


def chain_pose(model: RobotModel, q: np.ndarray) -> ChainPose:
    """Forward pass: world placement of every element at configuration q."""
    ch = model._chain
    n = ch.axes.shape[0]
    axes_w = np.empty((n, 3))
    origins = np.empty((n, 3))
    rot = np.empty((n, 3, 3))
    r = np.eye(3)
    p = np.zeros(3)
    for k in range(n):
        p = p + r @ ch.offsets[k]
        axes_w[k] = r @ ch.axes[k]
        r = r @ _rodrigues(ch.axes[k], q[k])
        origins[k] = p
        rot[k] = r
    com_w = origins + np.einsum("kij,kj->ki", rot, ch.com_local)
    inertia_w = np.einsum("kij,kj,klj->kil", rot, ch.inertia_local, rot)
    ee = origins[-1] + rot[-1] @ ch.ee_local
    offsets_w = np.diff(origins, axis=0, prepend=np.zeros((1, 3)))
    return ChainPose(axes_w=axes_w, origins=origins, rot=rot, com_w=com_w,
                     inertia_w=inertia_w, mass=ch.mass, ee=ee,
                     gravity=ch.gravity, offsets_w=offsets_w)


@dataclass
class ChainMotion:
    """World-frame velocity pass at (q, dq), with zero joint acceleration."""

    omega: np.ndarray       # (n, 3) link angular velocities
    domega: np.ndarray      # (n, 3) angular accelerations for qdd = 0
    v_origin: np.ndarray    # (n, 3) joint-origin velocities
    a_origin: np.ndarray    # (n, 3) joint-origin accelerations for qdd = 0
    v_com: np.ndarray       # (n, 3)
    a_com: np.ndarray       # (n, 3)


def chain_motion(pose: ChainPose, dq: np.ndarray) -> ChainMotion:
    spin = pose.axes_w * dq[:, None]
    omega = np.cumsum(spin, axis=0)
    omega_prev = omega - spin
    domega = np.cumsum(cross3(omega_prev, spin), axis=0)
    domega_prev = domega - cross3(omega_prev, spin)

    d = pose.offsets_w
    v_origin = np.cumsum(cross3(omega_prev, d), axis=0)
    a_origin = np.cumsum(
        cross3(domega_prev, d) + cross3(omega_prev, cross3(omega_prev, d)),
        axis=0)

    arm = pose.com_w - pose.origins
    v_com = v_origin + cross3(omega, arm)
    a_com = a_origin + cross3(domega, arm) + cross3(omega, cross3(omega, arm))
    return ChainMotion(omega=omega, domega=domega, v_origin=v_origin,
                       a_origin=a_origin, v_com=v_com, a_com=a_com)


def _skew(v: np.ndarray) -> np.ndarray:
    """Stacked skew matrices for an (n, 3) array."""
    n = v.shape[0]
    s = np.zeros((n, 3, 3))
    s[:, 0, 1] = -v[:, 2]
    s[:, 0, 2] = v[:, 1]
    s[:, 1, 0] = v[:, 2]
    s[:, 1, 2] = -v[:, 0]
    s[:, 2, 0] = -v[:, 1]
    s[:, 2, 1] = v[:, 0]
    return s


def _mass_matrix_from_pose(pose: ChainPose) -> np.ndarray:
    n = pose.axes_w.shape[0]
    s_motion = np.hstack([pose.axes_w, cross3(pose.origins, pose.axes_w)])

    cx = _skew(pose.com_w)
    m = pose.mass[:, None, None]
    spatial = np.zeros((n, 6, 6))
    spatial[:, :3, :3] = pose.inertia_w + m * np.einsum("kij,klj->kil", cx, cx)
    spatial[:, :3, 3:] = m * cx
    spatial[:, 3:, :3] = -m * cx
    spatial[:, 3:, 3:] = m * np.eye(3)

    composite = np.cumsum(spatial[::-1], axis=0)[::-1]
    f = np.einsum("kij,kj->ki", composite, s_motion)
    full = f @ s_motion.T
    mass = np.tril(full) + np.tril(full, -1).T
    return mass


def mass_matrix(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Joint-space inertia matrix via the composite-rigid-body recursion."""
    return _mass_matrix_from_pose(chain_pose(model, np.asarray(q, dtype=float)))


def _inverse_dynamics_zero_qdd(pose: ChainPose, motion: ChainMotion | None,
                               with_gravity: bool) -> np.ndarray:
    """Joint torques from Newton-Euler with qdd = 0.

    With motion=None the chain is at rest and only gravity loads appear.
    """
    if motion is None:
        f_body = -pose.mass[:, None] * pose.gravity[None, :] * (1.0 if with_gravity else 0.0)
        n_body = np.zeros_like(f_body)
    else:
        g = pose.gravity if with_gravity else np.zeros(3)
        f_body = pose.mass[:, None] * (motion.a_com - g[None, :])
        iw = pose.inertia_w
        n_body = (np.einsum("kij,kj->ki", iw, motion.domega)
                  + cross3(motion.omega, np.einsum("kij,kj->ki", iw, motion.omega)))

    moment_origin = n_body + cross3(pose.com_w, f_body)
    f_sub = np.cumsum(f_body[::-1], axis=0)[::-1]
    m_sub = np.cumsum(moment_origin[::-1], axis=0)[::-1]
    n_joint = m_sub - cross3(pose.origins, f_sub)
    return np.einsum("ki,ki->k", pose.axes_w, n_joint)


def bias_terms(model: RobotModel, state: RobotState) -> DynamicsTerms:
    """All dynamics terms at a state.

    Coriolis forces come from a Newton-Euler pass with zero acceleration and
    zero gravity, gravity from a rest pass; damping and stiffness are the
    diagonal restoring forces D_s qd and K_s q.
    """
    pose = chain_pose(model, state.q)
    motion = chain_motion(pose, state.dq)
    mass = _mass_matrix_from_pose(pose)
    c_vec = _inverse_dynamics_zero_qdd(pose, motion, with_gravity=False)
    g_vec = _inverse_dynamics_zero_qdd(pose, None, with_gravity=True)
    return DynamicsTerms(M=mass, c_vec=c_vec, d_vec=model.D_s * state.dq,
                         k_vec=model.K_s * state.q, g_vec=g_vec)


def h_vector(model: RobotModel, state: RobotState) -> np.ndarray:
    """Sum of Coriolis, damping, stiffness, and gravity forces."""
    return bias_terms(model, state).h


def solve_inertia(mass: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve M x = rhs by Cholesky, guarding against a degenerate M."""
    w = np.linalg.eigvalsh(mass)
    if w[0] <= 0.0 or w[-1] / w[0] > COND_LIMIT:
        raise IllConditioned(
            f"inertia matrix condition {w[-1] / max(w[0], 1e-300):.2e} exceeds {COND_LIMIT:.0e}")
    factor = scipy.linalg.cho_factor(mass, lower=True, check_finite=False)
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


def forward_dynamics(model: RobotModel, state: RobotState, u: np.ndarray,
                     terms: DynamicsTerms | None = None) -> np.ndarray:
    """Joint accelerations qdd = M^-1 (B u - h).

    Input bounds are the controllers' business, not enforced here. Passing
    precomputed terms avoids re-evaluating the chain.
    """
    if terms is None:
        terms = bias_terms(model, state)
    return solve_inertia(terms.M, model.B @ np.asarray(u, dtype=float) - terms.h)


def gravitational_potential(model: RobotModel, q: np.ndarray) -> float:
    """Potential energy of gravity (zero with all COMs at the origin)."""
    pose = chain_pose(model, np.asarray(q, dtype=float))
    return float(-np.sum(pose.mass[:, None] * pose.gravity[None, :] * pose.com_w))


def total_energy(model: RobotModel, state: RobotState) -> float:
    """Kinetic plus gravitational plus elastic energy; conserved when the
    robot is undamped and unforced."""
    mass = mass_matrix(model, state.q)
    kinetic = 0.5 * state.dq @ mass @ state.dq
    elastic = 0.5 * state.q @ (model.K_s * state.q)
    return kinetic + gravitational_potential(model, state.q) + elastic
