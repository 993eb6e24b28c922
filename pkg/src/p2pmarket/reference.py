"""Centralized reference solutions used to check the decentralized engine.

:func:`solve_centralized` solves the full MBED as one convex QP with an
interior-point solver (Clarabel). :func:`pool_price_bisection` solves the
pool-based equivalent reached when no trade is differentiated, and
:func:`pool_to_mbed` spreads a pool dispatch over bilateral trades.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import clarabel
import numpy as np
from scipy import linalg, sparse

from .errors import ConfigurationError, InfeasibleError
from .market import (
    AgentSpec,
    Edge,
    MarketInstance,
    TradeMatrix,
    agent_cost,
    check_feasibility,
    kkt_residual,
    total_cost,
)
from .negotiation import ClearingResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CentralSolution:
    trades: TradeMatrix
    prices: dict[Edge, float]
    mu_up: dict[str, float]
    mu_down: dict[str, float]
    objective: float
    kkt_residual: float
    status: str

    @property
    def net_injections(self) -> dict[str, float]:
        return dict(self.trades.net_injections)


@dataclass(frozen=True)
class PoolSolution:
    price: float
    injections: dict[str, float]


def _trade_bounds(instance: MarketInstance, n: str, m: str) -> tuple[float, float]:
    """Bounds on t = P_nm implied by the sign constraints of both endpoints."""
    lo, hi = -math.inf, math.inf
    if instance.agent(n).is_producer:
        lo = 0.0
    else:
        hi = 0.0
    if instance.agent(m).is_producer:
        hi = min(hi, 0.0)
    else:
        lo = max(lo, 0.0)
    return lo, hi


def _check_aggregate(agents: Iterable[AgentSpec]) -> None:
    agents = list(agents)
    if sum(a.p_min for a in agents) > 0 or sum(a.p_max for a in agents) < 0:
        raise InfeasibleError("aggregate bounds admit no balanced dispatch")


def solve_centralized(instance: MarketInstance, tol: float = 1e-8) -> CentralSolution:
    """Solve the MBED centrally, one variable per trading pair.

    Reciprocity is eliminated by setting P_mn = -P_nm. Bound multipliers come
    from the QP duals; the trade price of a pair is recovered from the two
    endpoints' marginal conditions.

    Raises:
        InfeasibleError: no dispatch satisfies bounds, signs and reciprocity.
    """
    _check_aggregate(instance.agents)
    ids = [a.id for a in instance.agents]
    row_of = {n: i for i, n in enumerate(ids)}
    coeffs = instance.coefficients
    pairs = []
    fixed_zero = []
    for n, m in instance.graph.undirected_edges():
        lo, hi = _trade_bounds(instance, n, m)
        (pairs if lo < hi else fixed_zero).append((n, m, lo, hi))

    n_agents, n_pairs = len(ids), len(pairs)
    inc = sparse.lil_matrix((n_agents, n_pairs))
    q = np.zeros(n_pairs)
    for j, (n, m, _, _) in enumerate(pairs):
        inc[row_of[n], j] = 1.0
        inc[row_of[m], j] = -1.0
        q[j] = instance.agent(n).b - instance.agent(m).b + coeffs[(n, m)] - coeffs[(m, n)]
    inc = inc.tocsr()
    a = np.array([x.a for x in instance.agents])
    hess = (inc.T @ sparse.diags(a) @ inc).tocsc()

    for agent in instance.agents:
        if inc[row_of[agent.id]].nnz == 0 and not agent.p_min <= 0 <= agent.p_max:
            raise InfeasibleError(f"agent {agent.id} cannot trade but its bounds exclude 0")

    eq_rows, eq_rhs, eq_agents = [], [], []
    ineq_rows, ineq_rhs = [], []
    upper_idx, lower_idx = {}, {}
    for agent in instance.agents:
        row = inc[row_of[agent.id]]
        if row.nnz == 0:
            continue
        if agent.must_take:
            eq_agents.append(agent.id)
            eq_rows.append(row)
            eq_rhs.append(agent.p_max)
        else:
            upper_idx[agent.id] = len(ineq_rows)
            ineq_rows.append(row)
            ineq_rhs.append(agent.p_max)
            lower_idx[agent.id] = len(ineq_rows)
            ineq_rows.append(-row)
            ineq_rhs.append(-agent.p_min)
    for j, (_, _, lo, hi) in enumerate(pairs):
        unit = sparse.csr_matrix(([1.0], ([0], [j])), shape=(1, n_pairs))
        # producer-consumer pairs carry exactly one of these rows
        if lo == 0.0:
            ineq_rows.append(-unit)
            ineq_rhs.append(0.0)
        if hi == 0.0:
            ineq_rows.append(unit)
            ineq_rhs.append(0.0)

    blocks = eq_rows + ineq_rows
    A = sparse.vstack(blocks).tocsc() if blocks else sparse.csc_matrix((0, n_pairs))
    b = np.array(eq_rhs + ineq_rhs, dtype=float)
    cones = []
    if eq_rows:
        cones.append(clarabel.ZeroConeT(len(eq_rows)))
    if ineq_rows:
        cones.append(clarabel.NonnegativeConeT(len(ineq_rows)))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    # trades pinned at zero by their sign constraint shrink like gap / multiplier,
    # so the interior-point gap must sit well below the requested KKT residual
    settings.tol_gap_abs = settings.tol_gap_rel = tol * 1e-6
    settings.tol_feas = tol * 1e-2
    settings.tol_ktratio = tol
    settings.max_iter = 200
    solver = clarabel.DefaultSolver(sparse.triu(hess).tocsc(), q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if "Infeasible" in status:
        raise InfeasibleError(f"centralized QP reports {status}")
    if status not in ("Solved", "AlmostSolved"):
        raise InfeasibleError(f"centralized QP failed: {status}")

    x = np.asarray(sol.x, dtype=float)
    n_eq = len(eq_rows)

    def kappa_of(z: np.ndarray) -> np.ndarray:
        """mu_up - mu_down per agent from constraint duals."""
        kappa = np.zeros(n_agents)
        for i, n in enumerate(eq_agents):
            kappa[row_of[n]] = z[i]
        for n, i in upper_idx.items():
            kappa[row_of[n]] += max(z[n_eq + i], 0.0)
        for n, i in lower_idx.items():
            kappa[row_of[n]] -= max(z[n_eq + i], 0.0)
        return kappa

    def assemble(t: np.ndarray, k: np.ndarray):
        trades: dict[Edge, float] = {}
        for j, (n, m, lo, hi) in enumerate(pairs):
            v = min(max(float(t[j]), lo), hi)
            trades[(n, m)] = v
            trades[(m, n)] = -v
        for n, m, _, _ in fixed_zero:
            trades[(n, m)] = trades[(m, n)] = 0.0
        matrix = TradeMatrix(trades)
        mu_up = {n: max(float(k[row_of[n]]), 0.0) for n in ids}
        mu_down = {n: max(-float(k[row_of[n]]), 0.0) for n in ids}
        prices = _recover_prices(instance, matrix, mu_up, mu_down)
        return matrix, prices, mu_up, mu_down, kkt_residual(instance, matrix, prices, mu_up, mu_down)

    best = assemble(x, kappa_of(np.asarray(sol.z, dtype=float)))
    if best[4] > 1e-3 * tol and n_pairs:
        refined = _active_set(hess.toarray(), q, A.toarray(), b, n_eq, x)
        if refined is not None:
            candidate = assemble(refined[0], kappa_of(refined[1]))
            if candidate[4] < best[4] and check_feasibility(instance, candidate[0], tol).feasible:
                best = candidate
    if best[4] > tol:
        log.warning("centralized KKT residual %.3g exceeds tolerance %.3g (%s)", best[4], tol, status)
    matrix, prices, mu_up, mu_down, residual = best
    return CentralSolution(matrix, prices, mu_up, mu_down, total_cost(instance, matrix), residual, status)


def _active_set(hess, q, A, b, n_eq, x, max_iter: int | None = None):
    """Primal active-set crossover for min 0.5 x'Hx + q'x s.t. A[:n_eq] x = b, A[n_eq:] x <= b.

    Starts from a near-optimal interior point. H may be singular: on a flat
    direction with nonzero slope the step follows that ray to the first
    blocking constraint, which is how trades in undifferentiated cycles are
    driven to exact zeros. Returns (x, duals) with H x + q + A' duals = 0, or
    None when the iteration limit is hit.
    """
    n = len(x)
    scale = max(1.0, float(np.abs(q).max()), float(np.abs(hess).max()))
    eps = 1e-13 * scale
    max_iter = max_iter or 10 * (n + len(b))

    def independent(rows, i):
        return np.linalg.matrix_rank(A[rows + [i]]) == len(rows) + 1

    work = [i for i in range(n_eq)]
    slack = b[n_eq:] - A[n_eq:] @ x
    for i in np.argsort(slack):
        if slack[i] <= 1e-9 * (1.0 + abs(b[n_eq + i])) and independent(work, n_eq + i):
            work.append(n_eq + int(i))
    if work:
        aw = A[work]
        x = x + np.linalg.lstsq(aw, b[work] - aw @ x, rcond=None)[0]

    for _ in range(max_iter):
        g = hess @ x + q
        basis = linalg.null_space(A[work]) if work else np.eye(n)
        ray = False
        d = np.zeros(n)
        if basis.shape[1]:
            vals, vecs = np.linalg.eigh(basis.T @ hess @ basis)
            curved = vals > 1e-10 * max(1.0, float(vals.max(initial=0.0)))
            gr = basis.T @ g
            flat = vecs[:, ~curved] @ (vecs[:, ~curved].T @ gr)
            if np.linalg.norm(flat) > eps:
                d, ray = -basis @ flat, True
            else:
                d = -basis @ (vecs[:, curved] @ ((vecs[:, curved].T @ gr) / vals[curved]))
        if not ray and np.linalg.norm(d) <= eps:
            duals = np.zeros(len(b))
            if work:
                duals[work] = np.linalg.lstsq(A[work].T, -g, rcond=None)[0]
            inequality = [i for i in work if i >= n_eq]
            if not inequality or min(duals[i] for i in inequality) >= -eps:
                return x, duals
            work.remove(min(inequality, key=lambda i: duals[i]))
            continue
        step, blocking = (np.inf if ray else 1.0), None
        ad = A[n_eq:] @ d
        room = b[n_eq:] - A[n_eq:] @ x
        for i in np.flatnonzero(ad > 1e-12 * np.linalg.norm(d)):
            if n_eq + i in work:
                continue
            ratio = max(room[i], 0.0) / ad[i]
            if ratio < step:
                step, blocking = ratio, n_eq + int(i)
        if not np.isfinite(step):
            return None
        x = x + step * d
        if blocking is not None:
            work.append(blocking)
    return None


def _recover_prices(
    instance: MarketInstance, trades: TradeMatrix, mu_up: Mapping[str, float], mu_down: Mapping[str, float]
) -> dict[Edge, float]:
    coeffs = instance.coefficients

    def grad(agent: AgentSpec, m: str) -> float:
        p_n = trades.net(agent.id)
        return agent.a * p_n + agent.b + coeffs[(agent.id, m)] + mu_up[agent.id] - mu_down[agent.id]

    prices = {}
    for n, m in instance.graph.undirected_edges():
        x, y = instance.agent(n), instance.agent(m)
        gx, gy = grad(x, m), grad(y, n)
        if x.is_producer == y.is_producer:
            # sign constraints pin this pair to zero; any price on the correct side works
            lam = min(gx, gy) if x.is_producer else max(gx, gy)
        else:
            lam = 0.5 * (gx + gy)
        prices[(n, m)] = prices[(m, n)] = lam
    return prices


def lagrangian_dual_value(
    instance: MarketInstance,
    prices: Mapping[Edge, float],
    mu_up: Mapping[str, float],
    mu_down: Mapping[str, float],
) -> float:
    """Dual function: the relaxed Lagrangian minimized over sign-feasible trades.

    Needs consensual prices (lambda_nm == lambda_mn) so that the reciprocity
    terms reduce to -lambda * (P_nm + P_mn).
    """
    coeffs = instance.coefficients
    total = 0.0
    for agent in instance.agents:
        n = agent.id
        up, down = mu_up[n], mu_down[n]
        perceived = [prices[(n, m)] - coeffs[(n, m)] for m in instance.neighbors(n)]
        slope = agent.b + up - down
        if not perceived:
            p = 0.0
        elif agent.is_producer:
            best = max(perceived)
            p = max(0.0, (best - slope) / agent.a)
        else:
            best = min(perceived)
            p = min(0.0, (best - slope) / agent.a)
        lin = (slope - best) * p if perceived else 0.0
        total += 0.5 * agent.a * p * p + lin + agent.d - up * agent.p_max + down * agent.p_min
    return total


def pool_response(agent: AgentSpec, price: float) -> float:
    return min(max((price - agent.b) / agent.a, agent.p_min), agent.p_max)


def pool_price_bisection(agents: Iterable[AgentSpec], tol: float = 1e-9, max_iter: int = 200) -> PoolSolution:
    """Uniform clearing price of the pool market by bisection on aggregate net supply."""
    agents = list(agents)
    if not agents:
        raise ConfigurationError("no agents to clear")
    # widest clamped response reached on either side, for consumers as well as producers
    reach = [a.a * max(abs(a.p_min), abs(a.p_max)) for a in agents]
    lo = min(a.b - r for a, r in zip(agents, reach)) - 1.0
    hi = max(a.b + r for a, r in zip(agents, reach)) + 1.0

    def excess(price: float) -> float:
        return sum(pool_response(a, price) for a in agents)

    if excess(lo) > tol or excess(hi) < -tol:
        raise InfeasibleError("no balancing price in the bisection bracket")
    price = 0.5 * (lo + hi)
    for _ in range(max_iter):
        price = 0.5 * (lo + hi)
        s = excess(price)
        if abs(s) <= tol:
            break
        if s > 0:
            hi = price
        else:
            lo = price
    return PoolSolution(price, {a.id: pool_response(a, price) for a in agents})


def pool_to_mbed(instance: MarketInstance, pool: PoolSolution) -> TradeMatrix:
    """Spread a balanced pool dispatch over producer-consumer trades pro rata.

    Each producer sells to each consumer in proportion to that consumer's share
    of total consumption.
    """
    producers = [a for a in instance.agents if a.is_producer]
    consumers = [a for a in instance.agents if not a.is_producer]
    for p in producers:
        missing = [c.id for c in consumers if c.id not in instance.neighbors(p.id)]
        if missing:
            raise ConfigurationError(f"producer {p.id} is not linked to consumers {missing}")
    demand = sum(pool.injections[c.id] for c in consumers)
    trades = {e: 0.0 for e in instance.graph.directed_edges()}
    if demand == 0.0:
        if any(pool.injections[p.id] != 0.0 for p in producers):
            raise ConfigurationError("producers inject power but no consumer draws any")
        return TradeMatrix(trades)
    for p in producers:
        for c in consumers:
            value = pool.injections[c.id] / demand * pool.injections[p.id]
            trades[(p.id, c.id)] = value
            trades[(c.id, p.id)] = -value
    return TradeMatrix(trades)


def optimality_gap(rci: ClearingResult, central: CentralSolution) -> float:
    """Relative objective gap of the symmetrized RCI point; absolute when the optimum is 0."""
    value = total_cost(rci.instance, rci.trades.symmetrized())
    if central.objective == 0.0:
        return value - central.objective
    return (value - central.objective) / abs(central.objective)


def pool_objective(agents: Iterable[AgentSpec], pool: PoolSolution) -> float:
    return sum(agent_cost(a, pool.injections[a.id]) for a in agents)
