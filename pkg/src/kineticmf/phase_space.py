"""Phase-space state types, empirical measures, and moment functionals.

Everything downstream works on uniform-weight empirical measures
mu = (1/N) sum_i delta_{z_i} over phase points z = (x, v) in R^d x R^d,
and on discrete measure flows: a time grid plus one ensemble per node,
where point i at node k samples the same particle's trajectory. That
persistent identity is what makes index-paired couplings meaningful.
"""

import csv
import math

import numpy as np

__all__ = [
    "PhasePoint",
    "ParticleEnsemble",
    "MeasureFlow",
    "LeaderState",
    "LeaderPath",
    "YoungFunction",
    "time_grid",
    "moment_p",
    "sup_moment",
    "young_moment",
    "holder_ratio",
    "write_flow_csv",
    "read_flow_csv",
    "write_leader_csv",
    "read_leader_csv",
]

# Relative slack used when locating a time node on a grid. Nodes are exact
# multiples of the base step, so this only has to absorb one rounding.
_TIME_TOL = 1e-9


def _as_locked(a, dtype=float):
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _require_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must contain only finite values")


class PhasePoint:
    """One agent state z = (x, v) with position and velocity in R^d."""

    __slots__ = ("x", "v")

    def __init__(self, x, v):
        self.x = _as_locked(np.atleast_1d(x))
        self.v = _as_locked(np.atleast_1d(v))
        if self.x.ndim != 1 or self.v.ndim != 1:
            raise ValueError("x and v must be vectors")
        if self.x.shape != self.v.shape:
            raise ValueError("x and v must have the same length")
        if self.x.size < 1:
            raise ValueError("dimension d must be >= 1")
        _require_finite("x", self.x)
        _require_finite("v", self.v)

    @property
    def d(self):
        return self.x.size

    @property
    def z(self):
        """Concatenated (x, v) vector in R^{2d}."""
        return np.concatenate([self.x, self.v])

    def __repr__(self):
        return f"PhasePoint(x={self.x.tolist()}, v={self.v.tolist()})"


class ParticleEnsemble:
    """Uniform-weight empirical measure (1/N) sum_i delta_{(x_i, v_i)}.

    Stored as two (N, d) arrays. The particle order is part of the object:
    couplings and CSV output rely on it, while every measure-level
    functional is (and is tested to be) permutation-invariant.
    """

    __slots__ = ("X", "V")

    def __init__(self, X, V):
        self.X = _as_locked(np.atleast_2d(X))
        self.V = _as_locked(np.atleast_2d(V))
        if self.X.shape != self.V.shape:
            raise ValueError("position and velocity arrays must share shape (N, d)")
        if self.X.shape[0] < 1:
            raise ValueError("empty measure")
        _require_finite("positions", self.X)
        _require_finite("velocities", self.V)

    @classmethod
    def from_points(cls, points):
        points = list(points)
        if not points:
            raise ValueError("empty measure")
        d = points[0].d
        if any(p.d != d for p in points):
            raise ValueError("all points must share one dimension d")
        return cls(np.stack([p.x for p in points]), np.stack([p.v for p in points]))

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def point(self, i):
        return PhasePoint(self.X[i], self.V[i])

    def points(self):
        return [self.point(i) for i in range(self.N)]

    def Z(self):
        """(N, 2d) array of concatenated states."""
        return np.hstack([self.X, self.V])

    def radii(self):
        """Euclidean norms |z_i| of the concatenated states."""
        return np.sqrt(np.einsum("ij,ij->i", self.X, self.X)
                       + np.einsum("ij,ij->i", self.V, self.V))

    def permuted(self, order):
        return ParticleEnsemble(self.X[order], self.V[order])

    def __repr__(self):
        return f"ParticleEnsemble(N={self.N}, d={self.d})"


def time_grid(T, n_steps):
    """Uniform grid 0 = t_0 < ... < t_M = T with t_k = k * (T / n_steps).

    Nodes are integer multiples of the base step (multiplied, never
    accumulated), so pairwise differences carry no summation drift.
    """
    if T <= 0:
        raise ValueError("horizon T must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return np.arange(n_steps + 1) * (T / n_steps)


class MeasureFlow:
    """A discrete curve of empirical measures on a strictly increasing grid.

    Snapshot k holds the same N particles as snapshot 0; the flow doubles
    as one admissible path-space coupling through that identity.
    """

    __slots__ = ("times", "snapshots")

    def __init__(self, times, snapshots):
        self.times = _as_locked(np.atleast_1d(times))
        self.snapshots = tuple(snapshots)
        if self.times.ndim != 1 or self.times.size != len(self.snapshots):
            raise ValueError("one snapshot per grid node required")
        if self.times.size < 1:
            raise ValueError("flow needs at least one node")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("grid must be strictly increasing")
        _require_finite("grid", self.times)
        N, d = self.snapshots[0].N, self.snapshots[0].d
        for s in self.snapshots:
            if s.N != N or s.d != d:
                raise ValueError("snapshots must share N and d")

    @classmethod
    def constant(cls, ens, times):
        """Constant-in-time extension of one ensemble over a grid."""
        times = np.atleast_1d(times)
        return cls(times, [ens] * times.size)

    @property
    def N(self):
        return self.snapshots[0].N

    @property
    def d(self):
        return self.snapshots[0].d

    @property
    def T(self):
        return float(self.times[-1])

    def __len__(self):
        return len(self.snapshots)

    def _tol(self):
        return _TIME_TOL * max(1.0, abs(self.T))

    def index_at(self, t):
        """Largest node index k with t_k <= t (up to grid tolerance)."""
        tol = self._tol()
        if t < self.times[0] - tol or t > self.times[-1] + tol:
            raise ValueError(f"time {t} outside grid range [{self.times[0]}, {self.T}]")
        return int(np.searchsorted(self.times, t + tol, side="right")) - 1

    def at_time(self, t):
        """Snapshot at the largest node <= t. Fields evaluate measures here,
        which keeps every shipped drift non-anticipative by construction."""
        return self.snapshots[self.index_at(t)]

    def prefix(self, t):
        """Sub-flow on the nodes <= t."""
        k = self.index_at(t)
        return MeasureFlow(self.times[: k + 1], self.snapshots[: k + 1])

    def __repr__(self):
        return f"MeasureFlow(nodes={len(self)}, N={self.N}, d={self.d}, T={self.T})"


class LeaderState:
    """Positions Y and velocities W of the m leaders; m = 0 is legal."""

    __slots__ = ("Y", "W")

    def __init__(self, Y, W):
        Y = np.asarray(Y, dtype=float)
        W = np.asarray(W, dtype=float)
        if Y.size == 0:
            Y = Y.reshape(0, W.shape[1] if W.ndim == 2 and W.shape[1] else 1)
            W = W.reshape(Y.shape)
        self.Y = _as_locked(np.atleast_2d(Y))
        self.W = _as_locked(np.atleast_2d(W))
        if self.Y.shape != self.W.shape:
            raise ValueError("Y and W must share shape (m, d)")
        _require_finite("Y", self.Y)
        _require_finite("W", self.W)

    @classmethod
    def empty(cls, d):
        return cls(np.zeros((0, d)), np.zeros((0, d)))

    @property
    def m(self):
        return self.Y.shape[0]

    @property
    def d(self):
        return self.Y.shape[1]

    def flat(self):
        """(2 m d,) vector (Y then W), the abstract R^{2md} view."""
        return np.concatenate([self.Y.ravel(), self.W.ravel()])

    def __repr__(self):
        return f"LeaderState(m={self.m}, d={self.d})"


class LeaderPath:
    """Leader trajectory on a grid: Y, W arrays of shape (M+1, m, d).

    W_k stores the evaluated right-hand side of the first-order leader
    equation at node k; it is not an independent state variable.
    """

    __slots__ = ("times", "Y", "W")

    def __init__(self, times, Y, W):
        self.times = _as_locked(np.atleast_1d(times))
        self.Y = _as_locked(Y)
        self.W = _as_locked(W)
        if self.Y.shape != self.W.shape or self.Y.ndim != 3:
            raise ValueError("Y and W must share shape (nodes, m, d)")
        if self.Y.shape[0] != self.times.size:
            raise ValueError("one leader state per grid node required")

    @property
    def m(self):
        return self.Y.shape[1]

    @property
    def d(self):
        return self.Y.shape[2]

    def state(self, k):
        return LeaderState(self.Y[k], self.W[k])

    def index_at(self, t):
        tol = _TIME_TOL * max(1.0, abs(float(self.times[-1])))
        if t < self.times[0] - tol or t > self.times[-1] + tol:
            raise ValueError(f"time {t} outside leader grid")
        return int(np.searchsorted(self.times, t + tol, side="right")) - 1

    def at_time(self, t):
        return self.state(self.index_at(t))

    def prefix(self, t):
        k = self.index_at(t)
        return LeaderPath(self.times[: k + 1], self.Y[: k + 1], self.W[: k + 1])

    def sup_norm(self):
        """sup over nodes of |(Y, W)| as a flattened vector per node."""
        if self.m == 0:
            return 0.0
        flat = np.concatenate([self.Y.reshape(len(self.times), -1),
                               self.W.reshape(len(self.times), -1)], axis=1)
        return float(np.max(np.linalg.norm(flat, axis=1)))

    def __repr__(self):
        return f"LeaderPath(nodes={len(self.times)}, m={self.m}, d={self.d})"


class YoungFunction:
    """A user-supplied Young function handle phi: [0, inf) -> [0, inf).

    Convexity is not verified globally (documented limitation): construction
    samples a grid and checks phi(0) = 0, nonnegativity, and monotonicity.
    The dominated_by_square flag asserts phi(x) <= x^2 and is trusted.
    """

    __slots__ = ("phi", "dominated_by_square")

    _CHECK_GRID = np.concatenate([[0.0], np.geomspace(1e-6, 1e3, 28)])

    def __init__(self, phi, dominated_by_square=False):
        self.phi = phi
        self.dominated_by_square = bool(dominated_by_square)
        vals = np.array([float(phi(x)) for x in self._CHECK_GRID])
        if abs(vals[0]) > 0.0:
            raise ValueError("Young function must satisfy phi(0) = 0")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("Young function must be nonnegative and finite on the check grid")
        if np.any(np.diff(vals) < -1e-15 * np.maximum(1.0, vals[:-1])):
            raise ValueError("Young function must be nondecreasing on the check grid")

    def __call__(self, x):
        return self.phi(x)


IDENTITY_YOUNG = YoungFunction(lambda x: x, dominated_by_square=False)


def moment_p(ens, p):
    """p-th radial moment M_p(mu) = (1/N) sum_i |z_i|^p.

    |z| is the Euclidean norm of the concatenated (x, v) vector. The sum is
    accumulated with math.fsum, so the value is exactly permutation-invariant
    and identical at every thread count.
    """
    if p < 1:
        raise ValueError("moment order p must be >= 1")
    r = ens.radii()
    return math.fsum(r**p) / ens.N


def sup_moment(flow, p, t):
    """Running sup moment M_bar_p(t) = max over nodes s <= t of M_p(mu_s)."""
    k = flow.index_at(t)
    return max(moment_p(flow.snapshots[j], p) for j in range(k + 1))


def young_moment(ens, Phi, p):
    """Generalized moment M_{Phi_p}(mu) = (1/N) sum_i Phi(|z_i|^p),
    i.e. the moment of Phi_p(x) = Phi(x^p)."""
    if p < 1:
        raise ValueError("moment order p must be >= 1")
    r = ens.radii()
    terms = [float(Phi(x)) for x in r**p]
    return math.fsum(terms) / ens.N


def gamma_p(p):
    """Time-regularity exponent gamma_p = 1 / max(2, p)."""
    return 1.0 / max(2.0, float(p))


def holder_ratio(flow, p, wp):
    """Worst Hoelder quotient max_{t != s} wp(mu_t, mu_s) / |t - s|^{gamma_p}.

    wp is a distance callback on ensemble pairs; the exponent is
    gamma_p = 1/max(2, p). All grid pairs are visited, so the value is
    invariant under time reversal of the flow.
    """
    if len(flow) < 2:
        raise ValueError("holder_ratio needs a flow with at least 2 snapshots")
    g = gamma_p(p)
    worst = 0.0
    for i in range(len(flow)):
        for j in range(i + 1, len(flow)):
            dt = float(flow.times[j] - flow.times[i])
            q = wp(flow.snapshots[i], flow.snapshots[j]) / dt**g
            if q > worst:
                worst = q
    return worst


def _fmt(x):
    return format(float(x), ".17g")


def write_flow_csv(flow, path):
    """Flow CSV: header t,particle,x0..x{d-1},v0..v{d-1}, one row per
    (time node, particle), full round-trip precision."""
    d = flow.d
    header = (["t", "particle"]
              + [f"x{i}" for i in range(d)]
              + [f"v{i}" for i in range(d)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(flow.times):
            snap = flow.snapshots[k]
            for i in range(snap.N):
                row = [_fmt(t), str(i)]
                row += [_fmt(x) for x in snap.X[i]]
                row += [_fmt(v) for v in snap.V[i]]
                w.writerow(row)


def read_flow_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    d = sum(1 for name in header if name.startswith("x"))
    times, blocks = [], []
    cur_t, X, V = None, [], []
    for row in rows[1:]:
        t = float(row[0])
        x = [float(c) for c in row[2 : 2 + d]]
        v = [float(c) for c in row[2 + d : 2 + 2 * d]]
        if cur_t is None or t != cur_t:
            if cur_t is not None:
                times.append(cur_t)
                blocks.append(ParticleEnsemble(np.array(X), np.array(V)))
            cur_t, X, V = t, [], []
        X.append(x)
        V.append(v)
    times.append(cur_t)
    blocks.append(ParticleEnsemble(np.array(X), np.array(V)))
    return MeasureFlow(np.array(times), blocks)


def write_leader_csv(lp, path):
    """Leader CSV: header t,leader,y0..y{d-1},w0..w{d-1}."""
    d = lp.d
    header = (["t", "leader"]
              + [f"y{i}" for i in range(d)]
              + [f"w{i}" for i in range(d)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(lp.times):
            for i in range(lp.m):
                row = [_fmt(t), str(i)]
                row += [_fmt(y) for y in lp.Y[k, i]]
                row += [_fmt(x) for x in lp.W[k, i]]
                w.writerow(row)


def read_leader_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    d = sum(1 for name in header if name.startswith("y"))
    data = {}
    order = []
    for row in rows[1:]:
        t = float(row[0])
        if t not in data:
            data[t] = []
            order.append(t)
        y = [float(c) for c in row[2 : 2 + d]]
        w = [float(c) for c in row[2 + d : 2 + 2 * d]]
        data[t].append((y, w))
    times = np.array(order)
    m = len(data[order[0]]) if order else 0
    Y = np.array([[pair[0] for pair in data[t]] for t in order]).reshape(len(order), m, d)
    W = np.array([[pair[1] for pair in data[t]] for t in order]).reshape(len(order), m, d)
    return LeaderPath(times, Y, W)
