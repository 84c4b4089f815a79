"""Nonlocal drift fields, the interaction-kernel library, and executable
validators for the structural assumptions on drifts.

A drift field f[t, mu_flow](z) may depend on the whole measure flow up to
time t (never beyond: non-anticipativity is part of the contract) and on
the evaluation point z = (x, v). The validators turn the analytic
hypotheses (sublinearity, anisotropic Hoelder continuity, dissipativity
via its Lipschitz sufficient condition) into sampled regression checks:
they report worst quotients over finite sample sets, they do not prove
anything over all of phase space.
"""

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .phase_space import LeaderState, MeasureFlow, PhasePoint, sup_moment
from .wasserstein import wasserstein_exact, wasserstein_paired_bound

__all__ = [
    "InteractionKernel",
    "DriftField",
    "LeaderField",
    "LeaderCouplingField",
    "ValidationReport",
    "kernel",
    "KERNEL_NAMES",
    "kernel_convolution_drift",
    "leader_coupling_drift",
    "drift_from_kernel",
    "linear_damping_field",
    "constant_field",
    "zero_field",
    "validate_sublinearity",
    "validate_hoelder",
    "validate_dissipativity_v3pp",
    "clamp_drift",
    "cutoff_eta",
    "latin_hypercube_points",
]

_VALIDATOR_TOL = 1e-9

# Exact dissipativity checks switch to the paired bound above this size,
# matching the Picard gap convention.
_EXACT_W_MAX_N = 256


@dataclass(frozen=True)
class InteractionKernel:
    """Pairwise interaction kernel K with declared constants.

    arity "phase" kernels map (dx, dv) -> R^d; arity "position" kernels map
    dx -> R^d (used for the leader position couplings). The declared L_ker
    and M_ker are promises checked by the validators, not by construction;
    kernels with M_ker = inf are flagged unbounded and exist for
    closed-form tests only.
    """

    name: str
    fn: Callable
    L_ker: float
    M_ker: float
    even: bool
    arity: str = "phase"

    def __post_init__(self):
        if self.arity not in ("phase", "position"):
            raise ValueError("kernel arity must be 'phase' or 'position'")

    @property
    def unbounded(self):
        return not math.isfinite(self.M_ker)

    def __call__(self, dx, dv=None):
        if self.arity == "position":
            return self.fn(np.asarray(dx, dtype=float))
        if dv is None:
            raise ValueError(f"kernel '{self.name}' needs both dx and dv")
        return self.fn(np.asarray(dx, dtype=float), np.asarray(dv, dtype=float))


def _k_zero(dx, dv=None):
    return np.zeros_like(dx)


def _k_alignment(dx, dv):
    return np.array(dv, copy=True)


def _k_bounded_alignment(dx, dv):
    return np.tanh(dv)


def _k_attraction(dx, dv=None):
    return np.array(dx, copy=True)


def _k_bounded_attraction(dx, dv=None):
    dx = np.asarray(dx, dtype=float)
    r2 = np.sum(dx * dx, axis=-1, keepdims=True)
    return dx / (1.0 + r2)


def kernel(name, d=None, params=None):
    """Construct a library kernel by name.

    Shipped names: zero, constant, alignment, bounded_alignment, attraction,
    bounded_attraction, zero_position, attraction_position,
    bounded_attraction_position. The linear kernels (alignment, attraction)
    carry M_ker = inf: they break the sublinearity assumption by design and
    are meant for closed-form tests.
    """
    params = dict(params or {})
    if name == "zero":
        return InteractionKernel("zero", _k_zero, 0.0, 0.0, even=True)
    if name == "zero_position":
        return InteractionKernel("zero_position", _k_zero, 0.0, 0.0, even=True,
                                 arity="position")
    if name == "constant":
        if d is None:
            raise ValueError("constant kernel needs the dimension d")
        c = np.full(d, float(params.get("value", 1.0)))
        mag = float(np.linalg.norm(c))

        def fn(dx, dv=None, c=c):
            return np.broadcast_to(c, np.shape(dx)).copy()

        return InteractionKernel("constant", fn, 0.0, mag, even=True)
    if name == "alignment":
        # K(dx, dv) = dv. Lipschitz 1, unbounded: fails sublinearity.
        return InteractionKernel("alignment", _k_alignment, 1.0, math.inf, even=False)
    if name == "bounded_alignment":
        # K(dx, dv) = tanh(dv) componentwise; |K| <= sqrt(d), Lipschitz 1.
        if d is None:
            raise ValueError("bounded_alignment kernel needs the dimension d")
        return InteractionKernel("bounded_alignment", _k_bounded_alignment,
                                 1.0, math.sqrt(d), even=False)
    if name == "attraction":
        return InteractionKernel("attraction", _k_attraction, 1.0, math.inf, even=False)
    if name == "bounded_attraction":
        # K(dx) = dx / (1 + |dx|^2); |K| <= 1/2, gradient bounded by 1.
        return InteractionKernel("bounded_attraction", _k_bounded_attraction,
                                 1.0, 0.5, even=False)
    if name == "attraction_position":
        return InteractionKernel("attraction_position", _k_attraction, 1.0,
                                 math.inf, even=False, arity="position")
    if name == "bounded_attraction_position":
        return InteractionKernel("bounded_attraction_position",
                                 _k_bounded_attraction, 1.0, 0.5, even=False,
                                 arity="position")
    raise ValueError(f"unknown kernel '{name}'")


KERNEL_NAMES = ("zero", "constant", "alignment", "bounded_alignment", "attraction",
                "bounded_attraction", "zero_position", "attraction_position",
                "bounded_attraction_position")


@dataclass(frozen=True)
class DriftField:
    """Nonlocal drift f[t, flow](z) with its declared assumption constants.

    fn(t, flow, z: PhasePoint) -> (d,) is the scalar interface; batch, when
    provided, evaluates all rows of (X, V) at once and must agree with fn.
    Constants: K and beta for sublinearity, alpha and L for the anisotropic
    Hoelder bound, D for the dissipativity sufficient condition, p for the
    Wasserstein order the field is paired with. Fields flagged unbounded
    ship constants that the validators are expected to reject.
    """

    fn: Callable
    K: float = 1.0
    beta: float = 0.0
    alpha: float = 1.0
    L: float = 1.0
    D: float = 1.0
    p: float = 2.0
    name: str = "custom"
    unbounded: bool = False
    batch: Callable | None = None

    def __post_init__(self):
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("sublinearity exponent beta must lie in [0, 1)")
        if not (self.beta < self.alpha <= 1.0):
            raise ValueError("Hoelder exponent alpha must lie in (beta, 1]")
        if self.p < 1:
            raise ValueError("Wasserstein order p must be >= 1")

    def eval(self, t, flow, z):
        return np.asarray(self.fn(t, flow, z), dtype=float)

    def eval_batch(self, t, flow, X, V):
        if self.batch is not None:
            return np.asarray(self.batch(t, flow, X, V), dtype=float)
        out = np.empty_like(X)
        for i in range(X.shape[0]):
            out[i] = self.fn(t, flow, PhasePoint(X[i], V[i]))
        return out

    def __call__(self, t, flow, z):
        return self.eval(t, flow, z)


@dataclass(frozen=True)
class LeaderField:
    """Leader drive F[t, flow](leader path prefix) -> (m, d), with declared
    sublinearity constant K_F and Lipschitz constant L_F. Non-anticipative
    in both the flow and the trajectory prefix."""

    fn: Callable
    K_F: float = 1.0
    L_F: float = 1.0
    name: str = "custom"

    def eval(self, t, flow, leaders_prefix):
        return np.asarray(self.fn(t, flow, leaders_prefix), dtype=float)

    def __call__(self, t, flow, leaders_prefix):
        return self.eval(t, flow, leaders_prefix)


@dataclass(frozen=True)
class LeaderCouplingField:
    """Leader-to-follower coupling w[t, leader path prefix](z) -> (d,)."""

    fn: Callable
    K_w: float = 1.0
    L_w: float = 1.0
    name: str = "custom"
    batch: Callable | None = None

    def eval(self, t, leaders_prefix, z):
        return np.asarray(self.fn(t, leaders_prefix, z), dtype=float)

    def eval_batch(self, t, leaders_prefix, X, V):
        if self.batch is not None:
            return np.asarray(self.batch(t, leaders_prefix, X, V), dtype=float)
        out = np.empty_like(X)
        for i in range(X.shape[0]):
            out[i] = self.fn(t, leaders_prefix, PhasePoint(X[i], V[i]))
        return out

    def __call__(self, t, leaders_prefix, z):
        return self.eval(t, leaders_prefix, z)


def kernel_convolution_drift(K, ens, z):
    """(K * mu)(z) = (1/N) sum_i K(xi_i - x, nu_i - v) for the empirical mu."""
    if ens.d != z.d:
        raise ValueError("ensemble and point dimensions differ")
    if K.arity == "position":
        vals = K(ens.X - z.x)
    else:
        vals = K(ens.X - z.x, ens.V - z.v)
    return np.asarray(vals, dtype=float).mean(axis=0)


def _kernel_convolution_batch(K, ens, X, V):
    """Convolution against mu at every row of (X, V): (N_eval, d) output."""
    dX = ens.X[None, :, :] - X[:, None, :]
    if K.arity == "position":
        vals = K(dX)
    else:
        dV = ens.V[None, :, :] - V[:, None, :]
        vals = K(dX, dV)
    return np.asarray(vals, dtype=float).mean(axis=1)


def leader_coupling_drift(K12, leaders, z):
    """(1/m) sum_i K12(Y_i - x, W_i - v); zero vector when m = 0."""
    if leaders.m == 0:
        return np.zeros(z.d)
    if K12.arity == "position":
        vals = K12(leaders.Y - z.x)
    else:
        vals = K12(leaders.Y - z.x, leaders.W - z.v)
    return np.asarray(vals, dtype=float).mean(axis=0)


def drift_from_kernel(K, p=2.0):
    """Mean-field drift f[t, flow](z) = (K * mu_t)(z) where mu_t is the flow
    snapshot at the largest node <= t.

    Declared constants follow the kernel: sublinearity K = M_ker (the
    convolution of a bounded kernel is bounded), Hoelder L = L_ker with
    alpha = 1, dissipativity D = 2 L_ker (triangle split of the z and
    measure variations). Unbounded kernels propagate the unbounded flag.
    """

    def fn(t, flow, z, K=K):
        return kernel_convolution_drift(K, flow.at_time(t), z)

    def batch(t, flow, X, V, K=K):
        return _kernel_convolution_batch(K, flow.at_time(t), X, V)

    return DriftField(fn=fn, batch=batch, K=K.M_ker if not K.unbounded else 1.0,
                      beta=0.0, alpha=1.0, L=K.L_ker, D=2.0 * K.L_ker, p=p,
                      name=f"conv[{K.name}]", unbounded=K.unbounded)


def linear_damping_field(p=2.0):
    """f(z) = -v. Linear, hence outside the sublinear class: flagged
    unbounded and expected to fail validate_sublinearity."""
    return DriftField(fn=lambda t, flow, z: -z.v,
                      batch=lambda t, flow, X, V: -V,
                      K=1.0, beta=0.0, alpha=1.0, L=1.0, D=1.0, p=p,
                      name="linear_damping", unbounded=True)


def constant_field(c, p=2.0):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return DriftField(fn=lambda t, flow, z: c.copy(),
                      batch=lambda t, flow, X, V: np.broadcast_to(c, X.shape).copy(),
                      K=float(np.linalg.norm(c)) if np.any(c) else 1.0,
                      beta=0.0, alpha=1.0, L=0.0, D=0.0, p=p, name="constant")


def zero_field(p=2.0):
    return DriftField(fn=lambda t, flow, z: np.zeros(z.d),
                      batch=lambda t, flow, X, V: np.zeros_like(X),
                      K=1.0, beta=0.0, alpha=1.0, L=0.0, D=0.0, p=p, name="zero")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of a sampled assumption check; carries the worst offender."""

    passed: bool
    worst_ratio: float
    bound: float
    n_checked: int
    worst: dict = dc_field(default_factory=dict)
    note: str = ""

    def __bool__(self):
        return self.passed


def latin_hypercube_points(n, d, low, high, seed):
    """n Latin-hypercube phase points with coordinates in [low, high]^{2d}."""
    sampler = qmc.LatinHypercube(d=2 * d, seed=seed)
    u = qmc.scale(sampler.random(n), low, high)
    return [PhasePoint(row[:d], row[d:]) for row in u]


def validate_sublinearity(f, flow, sample_z, sample_t):
    """Sampled check of the sublinear growth bound: PASS iff
    |f[t, flow](z)| <= K * (1 + |x|^{beta/3} + |v|^beta + Mbar_p(T)^{1/p})
    on every sample, within 1e-9 relative slack. Note the anisotropic
    position exponent beta/3 (kinetic scaling: x ~ t^3, v ~ t)."""
    K, beta, p = f.K, f.beta, f.p
    mbar = sup_moment(flow, p, flow.T) ** (1.0 / p)
    worst, worst_info = 0.0, {}
    n = 0
    for t in sample_t:
        for z in sample_z:
            denom = 1.0 + np.linalg.norm(z.x) ** (beta / 3.0) \
                + np.linalg.norm(z.v) ** beta + mbar
            ratio = float(np.linalg.norm(f.eval(t, flow, z))) / denom
            n += 1
            if ratio > worst:
                worst, worst_info = ratio, {"t": t, "z": z, "ratio": ratio}
    return ValidationReport(passed=bool(worst <= K * (1.0 + _VALIDATOR_TOL)),
                            worst_ratio=worst, bound=K, n_checked=n,
                            worst=worst_info,
                            note=f"sublinearity with beta={beta}, p={p}")


def validate_hoelder(f, flow, pairs, L, alpha, R=None):
    """Sampled anisotropic Hoelder check at fixed flow and time: PASS iff
    |f(z1) - f(z2)| <= L * (|x1 - x2|^{alpha/3} + |v1 - v2|^alpha) on all
    sampled pairs. Coincident pairs are skipped (quotient undefined).
    When R is given, pairs outside |z| <= R are skipped too, mirroring the
    local form of the assumption."""
    worst, worst_info = 0.0, {}
    n = 0
    times = flow.times
    for z1, z2 in pairs:
        if R is not None and (np.linalg.norm(z1.z) > R or np.linalg.norm(z2.z) > R):
            continue
        dx = np.linalg.norm(z1.x - z2.x)
        dv = np.linalg.norm(z1.v - z2.v)
        denom = dx ** (alpha / 3.0) + dv**alpha
        if denom == 0.0:
            continue
        for t in times:
            q = float(np.linalg.norm(f.eval(t, flow, z1) - f.eval(t, flow, z2))) / denom
            n += 1
            if q > worst:
                worst, worst_info = q, {"t": float(t), "z1": z1, "z2": z2, "ratio": q}
    return ValidationReport(passed=bool(worst <= L * (1.0 + _VALIDATOR_TOL)),
                            worst_ratio=worst, bound=L, n_checked=n,
                            worst=worst_info, note=f"hoelder with alpha={alpha}")


def _flow_distance(a, b, p):
    if a.N <= _EXACT_W_MAX_N:
        return wasserstein_exact(a, b, p)[0]
    return wasserstein_paired_bound(a, b, p)


def validate_dissipativity_v3pp(f, flows, samples):
    """Sampled check of the Lipschitz sufficient condition for
    dissipativity: |f[t, mu1](z1) - f[t, mu2](z2)| <= D * (sup_{s<=t}
    W_p(mu1_s, mu2_s) + |z1 - z2|). Passing certifies the integrated
    dissipativity assumption through the implication chain. The two flows
    must share their initial snapshot (the hypothesis of the condition).

    samples is an iterable of (t, z1, z2) triples.
    """
    flow1, flow2 = flows
    d0 = _flow_distance(flow1.snapshots[0], flow2.snapshots[0], f.p)
    if d0 > 1e-12:
        raise ValueError("dissipativity check requires flows sharing mu_0")
    # sup_{s<=t} W_p along the shared grid, exact below the size switch.
    per_node = [_flow_distance(a, b, f.p)
                for a, b in zip(flow1.snapshots, flow2.snapshots)]
    run_sup = np.maximum.accumulate(per_node)
    worst, worst_info, n = 0.0, {}, 0
    for t, z1, z2 in samples:
        k = flow1.index_at(t)
        denom = float(run_sup[k]) + float(np.linalg.norm(z1.z - z2.z))
        if denom == 0.0:
            continue
        num = float(np.linalg.norm(f.eval(t, flow1, z1) - f.eval(t, flow2, z2)))
        q = num / denom
        n += 1
        if q > worst:
            worst, worst_info = q, {"t": t, "z1": z1, "z2": z2, "ratio": q}
    metric = "exact" if flow1.N <= _EXACT_W_MAX_N else "paired-bound"
    return ValidationReport(passed=bool(worst <= f.D * (1.0 + _VALIDATOR_TOL)),
                            worst_ratio=worst, bound=f.D, n_checked=n,
                            worst=worst_info,
                            note=f"dissipativity sufficient condition, {metric} W_p")


def cutoff_eta(r, cap):
    """C^1 cubic cutoff: 1 on [0, cap], 0 from cap + 1 on, with
    eta(r) = 1 - 3 s^2 + 2 s^3 for s = clamp(r - cap, 0, 1). Pinned to this
    exact polynomial so truncation is reproducible bit for bit."""
    s = min(max(float(r) - float(cap), 0.0), 1.0)
    return min(max(1.0 - 3.0 * s * s + 2.0 * s * s * s, 0.0), 1.0)


def clamp_drift(f, N_cap):
    """Truncated field f_N[t, flow](z) = f[t, flow](z) * eta(Mbar_p(t, flow)).

    Never increases the field norm pointwise; equals f wherever the running
    moment stays at or below N_cap.
    """
    if N_cap <= 0:
        raise ValueError("truncation cap must be positive")

    def fn(t, flow, z):
        eta = cutoff_eta(sup_moment(flow, f.p, t), N_cap)
        return eta * f.eval(t, flow, z)

    def batch(t, flow, X, V):
        eta = cutoff_eta(sup_moment(flow, f.p, t), N_cap)
        return eta * f.eval_batch(t, flow, X, V)

    return DriftField(fn=fn, batch=batch, K=f.K, beta=f.beta, alpha=f.alpha,
                      L=f.L, D=f.D, p=f.p, name=f"clamped[{f.name}]",
                      unbounded=f.unbounded)


def leader_field_from_kernels(K21, K22, m):
    """Kernel-built leader drive: component j is
    (K21 * mu_t)(Y_j) + (1/m) sum_i K22(Y_i - Y_j), evaluated at the current
    leader positions (the last node of the trajectory prefix).

    Declared constants: K_F = M_21 + M_22 and L_F = L_21 + 2 L_22 where
    finite.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")

    def fn(t, flow, leaders_prefix, K21=K21, K22=K22):
        leaders = leaders_prefix.at_time(t) if hasattr(leaders_prefix, "at_time") \
            else leaders_prefix
        mm = leaders.m
        if mm == 0:
            return np.zeros((0, flow.d))
        ens = flow.at_time(t)
        out = np.empty((mm, flow.d))
        for j in range(mm):
            yj = leaders.Y[j]
            conv = np.asarray(K21(ens.X - yj), dtype=float).mean(axis=0)
            pair = np.asarray(K22(leaders.Y - yj), dtype=float).mean(axis=0)
            out[j] = conv + pair
        return out

    K_F = (K21.M_ker if not K21.unbounded else 1.0) \
        + (K22.M_ker if not K22.unbounded else 1.0)
    L_F = K21.L_ker + 2.0 * K22.L_ker
    return LeaderField(fn=fn, K_F=K_F, L_F=L_F,
                       name=f"leader[{K21.name},{K22.name}]")


def coupling_from_kernel(K12):
    """Leader-to-follower coupling w[t, H](z) = (1/m) sum_i
    K12(Y_i(t) - x, W_i(t) - v), reading the trajectory prefix at its last
    node <= t; zero when m = 0."""

    def fn(t, leaders_prefix, z, K12=K12):
        leaders = leaders_prefix.at_time(t) if hasattr(leaders_prefix, "at_time") \
            else leaders_prefix
        return leader_coupling_drift(K12, leaders, z)

    def batch(t, leaders_prefix, X, V, K12=K12):
        leaders = leaders_prefix.at_time(t) if hasattr(leaders_prefix, "at_time") \
            else leaders_prefix
        if leaders.m == 0:
            return np.zeros_like(X)
        dY = leaders.Y[None, :, :] - X[:, None, :]
        if K12.arity == "position":
            vals = K12(dY)
        else:
            dW = leaders.W[None, :, :] - V[:, None, :]
            vals = K12(dY, dW)
        return np.asarray(vals, dtype=float).mean(axis=1)

    return LeaderCouplingField(fn=fn, batch=batch,
                               K_w=K12.M_ker if not K12.unbounded else 1.0,
                               L_w=K12.L_ker, name=f"coupling[{K12.name}]")
