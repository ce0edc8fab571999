"""Continuous-state queries on a solved value function."""
from __future__ import annotations

import math

import numpy as np
from scipy import sparse

from .hj_solver import StateGrid, ValueFunction


def _stencil(grid: StateGrid, pts: np.ndarray):
    """Corner node indices (flat) and multilinear weights for points of shape (n, ndim).

    Periodic dims wrap; bounded dims clip, and points beyond them are flagged.
    """
    sp = grid.spacing
    n = pts.shape[0]
    lo_idx, hi_idx, frac = [], [], []
    outside = np.zeros(n, dtype=bool)
    for d in range(grid.ndim):
        s = (pts[:, d] - grid.lower[d]) / sp[d]
        N = grid.shape[d]
        if grid.periodic[d]:
            s = np.mod(s, N)
            i0 = np.floor(s).astype(np.intp)
            f = s - i0
            i0 %= N
            i1 = (i0 + 1) % N
        else:
            outside |= (s < -1e-9) | (s > N - 1 + 1e-9) | ~np.isfinite(s)
            s = np.clip(np.nan_to_num(s), 0.0, N - 1)
            i0 = np.minimum(np.floor(s).astype(np.intp), N - 2)
            f = s - i0
            i1 = i0 + 1
        lo_idx.append(i0)
        hi_idx.append(i1)
        frac.append(f)
    corners = 1 << grid.ndim
    idx = np.empty((n, corners), dtype=np.intp)
    w = np.empty((n, corners))
    for c in range(corners):
        wc = np.ones(n)
        ind = []
        for d in range(grid.ndim):
            if c >> d & 1:
                wc = wc * frac[d]
                ind.append(hi_idx[d])
            else:
                wc = wc * (1.0 - frac[d])
                ind.append(lo_idx[d])
        idx[:, c] = np.ravel_multi_index(ind, grid.shape)
        w[:, c] = wc
    return idx, w, outside


def interpolate(V: ValueFunction, states) -> np.ndarray:
    """Multilinear interpolation; periodic dims wrap, out-of-bounds reads +clamp."""
    grid = V.grid
    x = np.asarray(states, dtype=float)
    flat = x.reshape(-1, x.shape[-1])[:, :grid.ndim]
    idx, w, outside = _stencil(grid, flat)
    out = np.sum(w * V.values.ravel()[idx], axis=1)
    out[outside] = V.clamp
    return out.reshape(x.shape[:-1])


def gradient(V: ValueFunction, states) -> np.ndarray:
    """Central differences of the interpolant with one grid spacing per dimension.

    Probes are clipped into the domain along bounded dims, so the stencil turns
    one-sided at the edges instead of reading the out-of-bounds clamp.
    """
    grid = V.grid
    x = np.asarray(states, dtype=float)
    base = x[..., :grid.ndim]
    sp = grid.spacing
    out = np.empty(base.shape)
    for d in range(grid.ndim):
        plus, minus = base.copy(), base.copy()
        plus[..., d] += sp[d]
        minus[..., d] -= sp[d]
        if not grid.periodic[d]:
            hi = grid.lower[d] + (grid.shape[d] - 1) * sp[d]
            plus[..., d] = np.minimum(plus[..., d], hi)
            minus[..., d] = np.maximum(minus[..., d], grid.lower[d])
        span = plus[..., d] - minus[..., d]
        diff = interpolate(V, plus) - interpolate(V, minus)
        out[..., d] = np.where(span > 0, diff / np.where(span > 0, span, 1.0), 0.0)
    return out


def is_feasible(V: ValueFunction, states, delta: float):
    return interpolate(V, states) < -delta


def costate_control(V: ValueFunction, states, dynamics) -> np.ndarray:
    """Bang-bang controller minimising grad V . f at each state."""
    x = np.asarray(states, dtype=float)
    return dynamics.optimal_control(x, gradient(V, x))


# ---------------------------------------------------------------------------
# time-to-reach field and the lookahead controller built on it
#
# Inside the feasible set V sits at the zone's minimum target value wherever the
# zone core is reachable within the horizon, so grad V vanishes there and the
# costate controller has nothing to follow. A minimum-time dynamic program over the
# same grid, same obstacle function and a finite control set supplies the missing
# ordering; the controller searches two steps ahead on it.
# ---------------------------------------------------------------------------

SEARCH_DEPTH = 2
SUBSTEPS = 3


def lookahead_step(grid: StateGrid, dynamics) -> float:
    """One planar cell at top speed. Shorter steps pile up interpolation diffusion."""
    return float(min(grid.spacing[:2]) / dynamics.max_speed)


def _advance(x, u, dt: float, dynamics):
    for _ in range(SUBSTEPS):
        x = dynamics.step(x, u, dt / SUBSTEPS)
    return x


def _sweep(L: ValueFunction, G: ValueFunction, x, u, dt: float, dynamics):
    """Advance ``x`` under ``u`` for ``dt`` in substeps.

    Returns the end state, the time of the first entry into a zone (inf if none) and
    whether an obstacle was touched before that entry.
    """
    enter = np.full(np.broadcast_shapes(x.shape[:-1], np.shape(u)[:-1]), np.inf)
    hit = np.zeros(enter.shape, dtype=bool)
    x = np.broadcast_to(x, enter.shape + x.shape[-1:])
    for k in range(1, SUBSTEPS + 1):
        x = dynamics.step(x, u, dt / SUBSTEPS)
        open_ = np.isinf(enter)
        hit |= open_ & (interpolate(G, x) > 0.0)
        enter = np.where(open_ & ~hit & (interpolate(L, x) < 0.0), k * dt / SUBSTEPS, enter)
    return x, enter, hit


_OPS_CACHE: dict = {}


def _dynamics_signature(dynamics) -> tuple:
    return (type(dynamics).__name__, dynamics.control_samples().tobytes(), dynamics.max_speed)


def _transition_ops(grid: StateGrid, dynamics, dt: float):
    """Per sampled control: sparse interpolation onto the successor of every node, and
    the mask of successors that leave the grid. Depends only on geometry, so cached."""
    key = (tuple(map(float, grid.lower)), tuple(map(float, grid.upper)), tuple(grid.shape), tuple(grid.periodic),
           _dynamics_signature(dynamics), dt, SUBSTEPS)
    if key in _OPS_CACHE:
        return _OPS_CACHE[key]
    nodes = grid.states().reshape(-1, grid.ndim)
    n = nodes.shape[0]
    rows = np.repeat(np.arange(n), 1 << grid.ndim)
    ops = []
    for u in dynamics.control_samples():
        idx, w, outside = _stencil(grid, _advance(nodes, u, dt, dynamics))
        w[outside] = 0.0
        ops.append((sparse.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n)), outside))
    if len(_OPS_CACHE) >= 4:
        _OPS_CACHE.pop(next(iter(_OPS_CACHE)))
    _OPS_CACHE[key] = ops
    return ops


def _level_sets(V: ValueFunction):
    return (ValueFunction(V.grid, V.target, V.horizon, clamp=V.clamp),
            ValueFunction(V.grid, V.obstacle, V.horizon, clamp=V.clamp))


def reach_time(V: ValueFunction, dynamics) -> ValueFunction:
    """Minimum time to a safe zone under the sampled controls, capped at ``horizon + 1``.

    Solved by value iteration on the grid. A step that enters a zone before touching an
    obstacle ends there; otherwise the successor's time is interpolated from the
    non-zone nodes only. Interpolating across the zone edge would report near-zero
    times for states that sit beside a zone while facing away from it. Nodes within
    half a cell of an obstacle are held at the cap, so the field keeps a margin from
    walls. Cached on ``V``.
    """
    if V.target is None or V.obstacle is None:
        raise ValueError("reach time needs the target and obstacle functions of the solve")
    key = ("reach_time", _dynamics_signature(dynamics))
    if key in V.cache:
        return V.cache[key]
    grid = V.grid
    dt = lookahead_step(grid, dynamics)
    ops = _transition_ops(grid, dynamics, dt)
    cap = V.horizon + 1.0
    L, G = _level_sets(V)
    l, g = V.target.ravel(), V.obstacle.ravel()
    margin = 0.5 * float(min(grid.spacing[:2]))
    target = (l <= 0) & (g <= 0)
    free = target | (g <= -margin)
    keep = (~target).astype(float)
    nodes = grid.states().reshape(-1, grid.ndim)
    pre = []
    for (A, out), u in zip(ops, dynamics.control_samples()):
        mass = A @ keep
        _, enter, _ = _sweep(L, G, nodes, u, dt, dynamics)
        pre.append((A, np.maximum(mass, 1e-12), enter, out | (mass <= 1e-12)))
    t = np.where(target, 0.0, cap)
    for _ in range(int(math.ceil(cap / dt)) + 2):
        tk = t * keep
        cand = [np.where(np.isfinite(enter), enter, np.where(dead, cap, (A @ tk) / mass + dt))
                for A, mass, enter, dead in pre]
        new = np.where(target, 0.0, np.where(free, np.minimum(np.min(cand, axis=0), cap), cap))
        if np.array_equal(new, t):
            break
        t = new
    R = ValueFunction(grid, t.reshape(grid.shape), V.horizon, V.map_revision, clamp=cap)
    R.cache["keep"] = ~target
    V.cache[key] = R
    return R


def _outside_zone_interpolate(R: ValueFunction, pts) -> np.ndarray:
    x = np.asarray(pts, dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    idx, w, outside = _stencil(R.grid, flat)
    w = w * R.cache["keep"][idx]
    mass = w.sum(axis=1)
    out = np.where(mass > 1e-12, np.sum(w * R.values.ravel()[idx], axis=1) / np.maximum(mass, 1e-12), 0.0)
    out[outside] = R.clamp
    return out.reshape(x.shape[:-1])


def optimal_control(V: ValueFunction, states, dynamics) -> np.ndarray:
    """HJ controller toward the nearest reachable safe zone.

    With the solve's target and obstacle functions at hand, searches the sampled
    controls two steps deep and picks the first control of the branch with the least
    total time: the entry time if a zone is entered on the way, otherwise the elapsed
    time plus the reach time at the branch end. Branches touching an obstacle are
    discarded. Otherwise, or where nothing within the cap is reachable, falls back to
    :func:`costate_control`. When the samples do not cover the optimal controls (a disc
    of velocities, say), the control descending the reach time joins the candidates and
    is preferred unless clearly worse.
    """
    x = np.asarray(states, dtype=float)
    if V.target is None or V.obstacle is None:
        return costate_control(V, x, dynamics)
    R = reach_time(V, dynamics)
    L, G = _level_sets(V)
    U = dynamics.control_samples()
    dt = lookahead_step(V.grid, dynamics)
    first = np.broadcast_to(U, x.shape[:-1] + U.shape)
    descend = not getattr(dynamics, "samples_cover_optima", True)
    if descend:
        first = np.concatenate([first, dynamics.optimal_control(x, gradient(R, x))[..., None, :]], axis=-2)

    frontier, enter, blocked = _sweep(L, G, x[..., None, :], first, dt, dynamics)
    total = enter
    elapsed = dt
    for _ in range(SEARCH_DEPTH - 1):
        frontier, e, h = _sweep(L, G, frontier[..., None, :], U, dt, dynamics)
        blocked = blocked[..., None] | (h & np.isinf(total)[..., None])
        total = np.where(np.isfinite(total), total, elapsed)[..., None] + np.where(np.isfinite(total[..., None]), 0.0, e)
        elapsed += dt
    total = np.where(np.isfinite(total), total, elapsed + _outside_zone_interpolate(R, frontier))
    total = np.where(blocked, np.inf, total)
    while total.ndim > x.ndim:
        total = total.min(axis=-1)
    best = np.min(total, axis=-1)
    pick = np.argmin(total, axis=-1)
    if descend:
        # the descent control wins near-ties, since it is not limited to the sampled directions
        pick = np.where(total[..., -1] <= best + 0.5 * dt, total.shape[-1] - 1, pick)
    u = np.take_along_axis(first, pick[..., None, None], axis=-2)[..., 0, :]
    stuck = best >= elapsed + R.clamp - 1e-9
    if np.any(stuck):
        u = np.where(stuck[..., None], costate_control(V, x, dynamics), u)
    return u


def compute_margin(lipschitz: float, eps_zoh: float, dx: float, n: int) -> float:
    """Margin covering ZOH drift plus grid interpolation error."""
    if lipschitz < 0 or eps_zoh < 0 or dx < 0 or n < 1:
        raise ValueError("margin inputs must be non-negative")
    return lipschitz * eps_zoh + lipschitz * dx * math.sqrt(n) / 2.0
