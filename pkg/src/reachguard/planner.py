"""Sampling-based MPC with value-function gated, group-local resampling rollouts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .hj_solver import ValueFunction
from .value_query import interpolate, optimal_control

INF_COST = 1e12
VARIANTS = ("SCRAMPPI", "SCRAMPPI_NoRBR", "VanillaMPPI")
BRANCHES = ("WeightedMean", "BestSample", "HJFallback")


@dataclass
class PlannerConfig:
    M: int = 200
    M_a: int = 2
    N: int = 20
    dt: float = 0.1
    sigma: tuple = ((0.09, 0.0), (0.0, 0.36))
    lam: float = 1.0
    alpha: float = 0.9
    delta: float = 0.15
    w_pos: float = 1.0
    w_term: float = 5.0

    def __post_init__(self):
        S = np.asarray(self.sigma, dtype=float)
        if S.shape != (2, 2) or not np.allclose(S, S.T) or np.any(np.linalg.eigvalsh(S) <= 0):
            raise ValueError("sigma must be a symmetric positive definite 2x2 matrix")
        if self.M < self.M_a + 1 or self.M_a < 0:
            raise ValueError("need M >= M_a + 1 samples")
        if self.N < 1 or self.dt <= 0 or self.lam <= 0:
            raise ValueError("N, dt and lam must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)


# ---------------------------------------------------------------------------
# goal shaping
# ---------------------------------------------------------------------------

class GoalCost:
    """Distance-to-goal used by the stage cost: straight-line or shortest path on the known map."""

    def __init__(self, goal, field: np.ndarray | None = None, cell_size: float | None = None):
        self.goal = np.asarray(goal, dtype=float)[:2]
        self.field = field
        self.cell_size = cell_size

    @classmethod
    def euclidean(cls, goal):
        return cls(goal)

    @classmethod
    def geodesic(cls, goal, blocked: np.ndarray, cell_size: float):
        """8-connected shortest-path distance to the goal cell; blocked cells get a high plateau."""
        blocked = np.asarray(blocked, dtype=bool)
        W, H = blocked.shape
        gx = min(max(int(goal[0] // cell_size), 0), W - 1)
        gy = min(max(int(goal[1] // cell_size), 0), H - 1)
        free = ~blocked
        free[gx, gy] = True
        idx = np.arange(W * H).reshape(W, H)
        rows, cols, wts = [], [], []
        for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
            a = free[max(0, -dx):W - max(0, dx), max(0, -dy):H - max(0, dy)]
            b = free[max(0, dx):W - max(0, -dx) or None, max(0, dy):H - max(0, -dy) or None]
            ok = a & b
            if dx and dy:
                # no corner cutting past blocked cells
                c1 = free[max(0, dx):W - max(0, -dx) or None, max(0, -dy):H - max(0, dy)]
                c2 = free[max(0, -dx):W - max(0, dx), max(0, dy):H - max(0, -dy) or None]
                ok &= c1 & c2
            ia = idx[max(0, -dx):W - max(0, dx), max(0, -dy):H - max(0, dy)][ok]
            ib = idx[max(0, dx):W - max(0, -dx) or None, max(0, dy):H - max(0, -dy) or None][ok]
            rows.append(ia)
            cols.append(ib)
            wts.append(np.full(ia.size, math.hypot(dx, dy) * cell_size))
        graph = coo_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(W * H, W * H)).tocsr()
        dist = dijkstra(graph, directed=False, indices=int(idx[gx, gy])).reshape(W, H)
        finite = np.isfinite(dist)
        cap = float(dist[finite].max()) + 2.0 * math.hypot(W, H) * cell_size
        dist[~finite] = cap
        return cls(goal, dist, cell_size)

    def __call__(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)[..., :2]
        if self.field is None:
            return np.hypot(xy[..., 0] - self.goal[0], xy[..., 1] - self.goal[1])
        f = xy / self.cell_size - 0.5
        flat = f.reshape(-1, 2).T
        out = ndimage.map_coordinates(self.field, flat, order=1, mode="nearest")
        return out.reshape(xy.shape[:-1])


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------

@dataclass
class RolloutBatch:
    groups: np.ndarray        # (M,) group id per sample
    means: np.ndarray         # (G, N, 2) proposal means
    states: np.ndarray        # (M, N+1, 3)
    controls: np.ndarray      # (M, N, 2) saturated
    noise: np.ndarray         # (M, N, 2) effective deviation from the sample's mean
    alive: np.ndarray         # (M, N) survival of x_{i+1} before any resampling
    costs: np.ndarray         # (M,)
    survivors: np.ndarray     # (G, N) survivor counts per group and step
    dead_groups: np.ndarray   # (G,) groups with no survivors at some step
    events: list = field(default_factory=list)  # (step, dst indices, src indices)

    @property
    def M(self) -> int:
        return self.groups.size


@dataclass
class PlanResult:
    control: np.ndarray
    mean: np.ndarray
    branch: str
    ess: float
    survivors: np.ndarray
    weights: np.ndarray
    clean_costs: np.ndarray
    value_next: float = float("nan")
    update_ok: bool = True


def group_sizes(M: int, n_groups: int) -> list:
    """Even split of M samples over the means; the remainder goes to group 0."""
    base = M // n_groups
    sizes = [base] * n_groups
    sizes[0] += M - base * n_groups
    return sizes


def value_survival(V: ValueFunction, delta: float):
    def survive(states):
        return interpolate(V, states) < -delta
    return survive


def _stage_cost(states_next, noise_i, config: PlannerConfig, goal_cost, sig_inv, ok):
    c = config.w_pos * goal_cost(states_next)
    c = c + config.lam * (1.0 - config.alpha) * np.einsum("mi,ij,mj->m", noise_i, sig_inv, noise_i)
    if ok is not None:
        c = c + np.where(ok, 0.0, INF_COST)
    return c


def sample_and_rollout(x0, means, config: PlannerConfig, survive, rng_seed, dynamics, goal_cost,
                       resample: bool = True, penalize: bool = True) -> RolloutBatch:
    """Perturb each group's mean, roll out with the Euler stepper, and accumulate costs.

    ``survive(states) -> bool`` is the per-state feasibility test. With ``resample`` the
    dead samples are rewired to survivors of their own group after every step.
    ``rng_seed`` seeds the base noise; resampling draws from an independent stream so
    batches without deaths consume exactly the same random numbers as plain sampling.
    """
    means = np.asarray(means, dtype=float)
    G, N = means.shape[0], config.N
    if means.shape[1:] != (N, 2):
        raise ValueError("every mean must have shape (N, 2)")
    sizes = group_sizes(config.M, G)
    groups = np.repeat(np.arange(G), sizes)
    M = config.M
    base_rng, res_rng = (np.random.default_rng(c) for c in
                         np.random.SeedSequence(np.atleast_1d(rng_seed).tolist()).spawn(2))
    L = np.linalg.cholesky(config.sigma_array)
    sig_inv = np.linalg.inv(config.sigma_array)
    raw = base_rng.standard_normal((M, N, 2)) @ L.T
    mu = means[groups]                                   # (M, N, 2)

    states = np.empty((M, N + 1, 3))
    states[:, 0] = np.asarray(x0, dtype=float)
    controls = np.empty((M, N, 2))
    noise = np.empty((M, N, 2))
    alive = np.ones((M, N), dtype=bool)
    costs = np.zeros(M)
    survivors = np.zeros((G, N), dtype=int)
    dead_groups = np.zeros(G, dtype=bool)
    events = []
    for i in range(N):
        u = dynamics.saturate(mu[:, i] + raw[:, i])
        controls[:, i] = u
        noise[:, i] = u - mu[:, i]
        states[:, i + 1] = dynamics.step(states[:, i], u, config.dt)
        ok = survive(states[:, i + 1]) if survive is not None else np.ones(M, dtype=bool)
        alive[:, i] = ok
        for g in range(G):
            in_g = groups == g
            survivors[g, i] = int(np.count_nonzero(ok & in_g))
        if resample and survive is not None:
            dead = _rewire(groups, G, ok, i, res_rng, states, controls, noise, costs, dead_groups, events)
            if dead.size and i + 1 < N:
                raw[dead, i + 1:] = res_rng.standard_normal((dead.size, N - i - 1, 2)) @ L.T
            ok = ok.copy()
            ok[dead] = True
        costs += _stage_cost(states[:, i + 1], noise[:, i], config, goal_cost, sig_inv,
                             ok if penalize and survive is not None else None)
    costs += config.w_term * goal_cost(states[:, N])
    return RolloutBatch(groups, means, states, controls, noise, alive, costs, survivors, dead_groups, events)


def _rewire(groups, G, ok, i, rng, states, controls, noise, costs, dead_groups, events) -> np.ndarray:
    """Clone uniform same-group survivors into dead samples in place; returns the rewired indices."""
    rewired = []
    for g in range(G):
        if dead_groups[g]:
            continue
        members = np.flatnonzero(groups == g)
        surv = members[ok[members]]
        dead = members[~ok[members]]
        if dead.size == 0:
            continue
        if surv.size == 0:
            # the whole homotopy group is infeasible: frozen until the next planning step
            dead_groups[g] = True
            continue
        src = surv[rng.integers(0, surv.size, size=dead.size)]
        states[dead, :i + 2] = states[src, :i + 2]
        controls[dead, :i + 1] = controls[src, :i + 1]
        noise[dead, :i + 1] = noise[src, :i + 1]
        costs[dead] = costs[src]
        events.append((i, dead, src))
        rewired.append(dead)
    return np.concatenate(rewired) if rewired else np.zeros(0, dtype=int)


def group_local_resample(batch: RolloutBatch, i: int, survive, rng) -> RolloutBatch:
    """Rewire samples whose x_{i+1} fails ``survive`` to a uniform survivor of the same group.

    History through step ``i`` is cloned from the survivor; redrawing later controls is
    left to the caller.
    """
    ok = survive(batch.states[:, i + 1])
    batch.alive[:, i] = ok
    G = batch.means.shape[0]
    for g in range(G):
        batch.survivors[g, i] = int(np.count_nonzero(ok & (batch.groups == g)))
    _rewire(batch.groups, G, ok, i, rng, batch.states, batch.controls, batch.noise, batch.costs,
            batch.dead_groups, batch.events)
    return batch


def clean_reevaluation(batch: RolloutBatch, x0, survive, config: PlannerConfig, dynamics, goal_cost,
                       penalize: bool = True):
    """Re-roll every final control sequence from ``x0`` without resampling.

    Returns ``(costs, states, ok)`` where ``ok[m]`` is true iff every state of sample m survives.
    """
    M, N = batch.controls.shape[:2]
    sig_inv = np.linalg.inv(config.sigma_array)
    states = np.empty((M, N + 1, 3))
    states[:, 0] = np.asarray(x0, dtype=float)
    costs = np.zeros(M)
    all_ok = np.ones(M, dtype=bool)
    for i in range(N):
        states[:, i + 1] = dynamics.step(states[:, i], batch.controls[:, i], config.dt)
        ok = survive(states[:, i + 1]) if survive is not None else np.ones(M, dtype=bool)
        all_ok &= ok
        costs += _stage_cost(states[:, i + 1], batch.noise[:, i], config, goal_cost, sig_inv,
                             ok if penalize and survive is not None else None)
    costs += config.w_term * goal_cost(states[:, N])
    return costs, states, all_ok


def mppi_weights(costs, lam: float):
    costs = np.asarray(costs, dtype=float)
    finite = costs < INF_COST
    if not finite.any():
        return np.zeros_like(costs), False
    rho = costs.min()
    return np.exp(-(costs - rho) / lam), True


def mppi_update(mean, costs, noises, lam: float):
    """``mean + sum_m w_m noise_m / sum_m w_m`` with ``w_m = exp(-(S_m - min S) / lam)``.

    Returns ``(new_mean, weights, ok)``; when every cost carries the infinite penalty the
    mean is returned unchanged with ``ok = False``.
    """
    mean = np.asarray(mean, dtype=float)
    w, ok = mppi_weights(costs, lam)
    if not ok:
        return mean.copy(), w, False
    shift = np.tensordot(w, np.asarray(noises, dtype=float), axes=1) / w.sum()
    return mean + shift, w, True


def normalized_ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s2 = float(np.sum(w * w))
    if w.size == 0 or s2 == 0.0:
        return 0.0
    return float(np.sum(w)) ** 2 / (w.size * s2)


def select_control(x0, mean, batch: RolloutBatch, V: ValueFunction, delta: float, dynamics,
                   clean_costs, clean_ok, dt: float):
    """Executed control by fallback order: updated mean, best fully-safe sample, HJ controller.

    Returns ``(control, branch, V at the one-step successor, chosen sample index or -1)``.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = dynamics.step(x0, mean[0], dt)
    v1 = float(interpolate(V, x1))
    if v1 < -delta:
        return np.asarray(mean[0], dtype=float), "WeightedMean", v1, -1
    cand = np.flatnonzero(np.asarray(clean_ok) & (np.asarray(clean_costs) < INF_COST))
    if cand.size:
        k = cand[np.argmin(np.asarray(clean_costs)[cand])]
        u = batch.controls[k, 0]
        return u.copy(), "BestSample", float(interpolate(V, dynamics.step(x0, u, dt))), int(k)
    u = optimal_control(V, x0, dynamics)
    return u, "HJFallback", float(interpolate(V, dynamics.step(x0, u, dt))), -1


def contingency_execute(x, V: ValueFunction, dynamics) -> np.ndarray:
    """HJ optimal controller; the caller loops until a safe zone is entered."""
    return optimal_control(V, np.asarray(x, dtype=float), dynamics)


def shift_mean(mean) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    return np.concatenate([mean[1:], mean[-1:]], axis=0)


class Planner:
    """Receding-horizon planner holding the nominal mean between steps."""

    def __init__(self, config: PlannerConfig, dynamics, variant: str = "SCRAMPPI"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.config = config
        self.dynamics = dynamics
        self.variant = variant
        b = dynamics.bounds
        self.mean = np.tile([0.5 * (b.v_min + b.v_max), 0.0], (config.N, 1))

    def plan(self, x0, V: ValueFunction | None, goal_cost, ancillary=(), seed=0,
             obstacle_survive=None) -> PlanResult:
        cfg = self.config
        means = np.stack([self.mean] + [np.asarray(a, dtype=float) for a in ancillary][:cfg.M_a])
        if self.variant == "VanillaMPPI":
            survive, rbr = obstacle_survive, False
        else:
            survive, rbr = value_survival(V, cfg.delta), self.variant == "SCRAMPPI"
        batch = sample_and_rollout(x0, means, cfg, survive, seed, self.dynamics, goal_cost, resample=rbr)
        if batch.events:
            costs, _, ok = clean_reevaluation(batch, x0, survive, cfg, self.dynamics, goal_cost)
        else:
            costs = batch.costs
            ok = batch.alive.all(axis=1) if survive is not None else np.ones(batch.M, dtype=bool)
        new_mean, w, upd = mppi_update(self.mean, costs, batch.controls - self.mean, cfg.lam)
        new_mean = self.dynamics.saturate(new_mean)
        ess = normalized_ess(w)
        if self.variant == "VanillaMPPI":
            u, branch = new_mean[0].copy(), "WeightedMean"
            v1 = float(interpolate(V, self.dynamics.step(x0, u, cfg.dt))) if V is not None else float("nan")
        else:
            u, branch, v1, k = select_control(x0, new_mean, batch, V, cfg.delta, self.dynamics, costs, ok, cfg.dt)
            if branch == "BestSample":
                new_mean = batch.controls[k].copy()
        self.mean = shift_mean(new_mean)
        return PlanResult(u, new_mean, branch, ess, batch.survivors, w, costs, v1, upd)
