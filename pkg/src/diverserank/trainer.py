"""Cutting-plane max-margin training of the bi-criteria ranking model.

One slack variable per training example (n-slack): minimize
0.5 |w|^2 + (C/n) sum_i xi_i subject to, for every constraint ranking y
in example i's working set,

    w . [Psi(x_i, target_i) - Psi(x_i, y)] >= loss(target_i, y) - xi_i.

The restricted problem over the current working sets is solved in the
dual by coordinate ascent: one multiplier per constraint, simplex-with-
budget feasibility per example (sum of an example's multipliers <= C/n),
move selection by maximal KKT violation. w is recovered as the
multiplier-weighted sum of constraint difference vectors.

Constraint generation is sweep-batched: each outer iteration runs
loss-augmented inference for every example against the sweep-start
weights (this is the parallelizable phase), then serially re-checks each
proposal against the current weights, adds it if it violates by more
than epsilon, and re-solves the dual. Training stops on the first sweep
that adds nothing.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import metrics
from .greedy import build_target
from .model import joint_feature_map, loss_augmented_infer, predict
from .types import DegenerateQueryError, MeasureParams, QueryInstance, WeightVector

_ZERO_ALPHA = 1e-12
_PRUNE_AFTER = 50  # re-solves a multiplier may sit at zero before its constraint is dropped


class QPConvergenceError(RuntimeError):
    """Dual solver ran out of sweeps; carries the final KKT violation."""

    def __init__(self, violation: float, sweeps: int):
        super().__init__(f"QP did not converge after {sweeps} sweeps (KKT violation {violation:.3e})")
        self.violation = violation
        self.sweeps = sweeps


@dataclass
class Constraint:
    """One active constraint: a ranking with its cached loss and features."""

    ranking: tuple
    psi: np.ndarray  # flat joint feature of the ranking
    delta: float  # loss of the ranking against the example's target
    dpsi: np.ndarray  # psi(target) - psi(ranking)
    alpha: float = 0.0
    zero_streak: int = 0


@dataclass
class WorkingSet:
    """Per-example constraint set plus everything cached about the example."""

    q: QueryInstance
    target: list
    target_psi: np.ndarray
    ideal_raw: float
    params: MeasureParams
    constraints: list = field(default_factory=list)

    def rankings(self) -> set:
        return {c.ranking for c in self.constraints}


@dataclass
class TrainConfig:
    C: float
    epsilon: float = 1e-3
    max_outer_iters: int = 200
    qp_tol: float = 1e-8
    params: MeasureParams = field(default_factory=MeasureParams)

    def __post_init__(self):
        if self.C <= 0 or self.epsilon <= 0 or self.max_outer_iters <= 0 or self.qp_tol <= 0:
            raise ValueError("C, epsilon, max_outer_iters and qp_tol must all be positive")


@dataclass
class TrainStats:
    outer_iterations: int = 0
    constraints_added: int = 0
    constraints_active: int = 0
    converged: bool = False
    truncated: bool = False
    primal_objective: float = math.nan
    dual_objective: float = math.nan
    loss_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    constraints_trace: list = field(default_factory=list)
    skipped_query_ids: list = field(default_factory=list)
    working_sets: list = field(default_factory=list)  # final state, for diagnostics


def make_working_set(q: QueryInstance, params: MeasureParams, target=None) -> WorkingSet:
    """Build the per-example cache; raises DegenerateQueryError when unusable."""
    if target is None:
        target = build_target(q, params)
    ideal_raw = metrics.raw_dcem(target, q.judgments, params)
    if ideal_raw <= 0.0:
        raise DegenerateQueryError(f"query {q.query_id}: target scores zero")
    return WorkingSet(
        q=q,
        target=list(target),
        target_psi=joint_feature_map(q, target).flat(),
        ideal_raw=ideal_raw,
        params=params,
    )


def hinge(w: WeightVector, ws: WorkingSet, ranking) -> float:
    """H(y; w) = loss(target, y) + w.Psi(x, y) - w.Psi(x, target), recomputed fresh."""
    delta = metrics.dcem_loss(ws.ideal_raw, ranking, ws.q, ws.params)
    psi = joint_feature_map(ws.q, ranking).flat()
    return delta + float(w.flat() @ (psi - ws.target_psi))


def _block_arrays(ws: WorkingSet):
    dpsi = np.stack([c.dpsi for c in ws.constraints])
    delta = np.array([c.delta for c in ws.constraints])
    alpha = np.array([c.alpha for c in ws.constraints])
    return dpsi, delta, alpha


def _block_violation(g: np.ndarray, alpha: np.ndarray, room: float) -> float:
    """Largest KKT violation among the feasible moves for one example block."""
    viol = 0.0
    if room > _ZERO_ALPHA:
        viol = max(viol, float(g.max()))
    active = alpha > _ZERO_ALPHA
    if active.any():
        g_min_active = float(g[active].min())
        viol = max(viol, -g_min_active)
        viol = max(viol, float(g.max()) - g_min_active)
    return viol


def _optimize_block(dpsi, delta, alpha, w, budget, tol, max_moves=1000):
    """Coordinate-ascent moves on one example's multipliers until KKT-clean.

    Mutates alpha and w in place. Moves: grow one multiplier, shrink one,
    or transfer mass between two; always the move with the largest
    violation. Zero-curvature directions take the longest feasible step.
    """
    for _ in range(max_moves):
        g = delta - dpsi @ w
        room = budget - float(alpha.sum())
        active = alpha > _ZERO_ALPHA
        up = int(np.argmax(g))

        best_viol = tol
        move = None
        if room > _ZERO_ALPHA and g[up] > best_viol:
            best_viol = g[up]
            move = ("inc", up)
        if active.any():
            active_idx = np.flatnonzero(active)
            dn = int(active_idx[np.argmin(g[active_idx])])
            if -g[dn] > best_viol:
                best_viol = -g[dn]
                move = ("dec", dn)
            if up != dn and g[up] - g[dn] > best_viol:
                best_viol = g[up] - g[dn]
                move = ("xfer", up, dn)
        if move is None:
            return

        if move[0] == "inc":
            c = move[1]
            curv = float(dpsi[c] @ dpsi[c])
            step = g[c] / curv if curv > _ZERO_ALPHA else np.inf
            step = min(step, room)
            alpha[c] += step
            w += step * dpsi[c]
        elif move[0] == "dec":
            c = move[1]
            curv = float(dpsi[c] @ dpsi[c])
            step = g[c] / curv if curv > _ZERO_ALPHA else -np.inf
            step = max(step, -float(alpha[c]))
            alpha[c] += step
            w += step * dpsi[c]
        else:
            _, c_up, c_dn = move
            direction = dpsi[c_up] - dpsi[c_dn]
            curv = float(direction @ direction)
            step = (g[c_up] - g[c_dn]) / curv if curv > _ZERO_ALPHA else np.inf
            step = min(step, float(alpha[c_dn]))
            alpha[c_up] += step
            alpha[c_dn] -= step
            w += step * direction


def solve_restricted_qp(working_sets, C: float, tol: float = 1e-8, max_sweeps: int = 20000):
    """Solve the restricted n-slack QP over the current working sets.

    Returns (w, xi, info) where xi holds each example's recovered slack
    max(0, max_y H(y; w)) and info carries the objectives and the duality
    gap. Multipliers are warm-started from (and written back to) the
    constraints. Raises QPConvergenceError if the sweep cap is hit.
    """
    n = len(working_sets)
    if n == 0:
        raise ValueError("no working sets")
    dim = working_sets[0].target_psi.shape[0]
    budget = C / n

    blocks = []
    for ws in working_sets:
        if not ws.constraints:
            continue
        dpsi, delta, alpha = _block_arrays(ws)
        np.clip(alpha, 0.0, None, out=alpha)
        total = float(alpha.sum())
        if total > budget:  # renormalize a stale warm start into the feasible set
            alpha *= budget / total
        blocks.append((ws, dpsi, delta, alpha))

    def assemble_w():
        w = np.zeros(dim)
        for _, dpsi, _, alpha in blocks:
            w += dpsi.T @ alpha
        return w

    w = assemble_w()
    final_viol = 0.0
    for _ in range(max_sweeps):
        max_viol = 0.0
        for _, dpsi, delta, alpha in blocks:
            g = delta - dpsi @ w
            room = budget - float(alpha.sum())
            viol = _block_violation(g, alpha, room)
            max_viol = max(max_viol, viol)
            if viol > tol:
                _optimize_block(dpsi, delta, alpha, w, budget, tol * 0.5)
        final_viol = max_viol
        if max_viol <= tol:
            break
        w = assemble_w()  # kill incremental drift between sweeps
    else:
        raise QPConvergenceError(final_viol, max_sweeps)

    for ws, _, _, alpha in blocks:
        for c, a in zip(ws.constraints, alpha):
            c.alpha = float(a)

    xi = np.zeros(n)
    dual_linear = 0.0
    for i, ws in enumerate(working_sets):
        if not ws.constraints:
            continue
        dpsi, delta, alpha = _block_arrays(ws)
        g = delta - dpsi @ w
        xi[i] = max(0.0, float(g.max()))
        dual_linear += float(alpha @ delta)

    wsq = float(w @ w)
    primal = 0.5 * wsq + budget * float(xi.sum())
    dual = dual_linear - 0.5 * wsq
    info = {
        "primal_objective": primal,
        "dual_objective": dual,
        "duality_gap": primal - dual,
        "kkt_violation": final_viol,
    }
    return w, xi, info


def _prune_working_sets(working_sets) -> None:
    for ws in working_sets:
        kept = []
        for c in ws.constraints:
            if c.alpha <= _ZERO_ALPHA:
                c.zero_streak += 1
            else:
                c.zero_streak = 0
            if c.zero_streak < _PRUNE_AFTER:
                kept.append(c)
        ws.constraints = kept


def mean_training_loss(w: WeightVector, working_sets, params: MeasureParams) -> float:
    """Mean diversity loss of the current model's predictions on the training set."""
    losses = [
        metrics.dcem_loss(ws.ideal_raw, predict(w, ws.q, params.cutoff), ws.q, params)
        for ws in working_sets
    ]
    return float(np.mean(losses)) if losses else 0.0


def cutting_plane_train(
    queries,
    cfg: TrainConfig,
    targets: Optional[list] = None,
    n_jobs: int = 1,
    log_fn: Optional[Callable[[dict], None]] = None,
):
    """Train weights on a list of QueryInstances.

    targets, when given, must align with queries (entries may be None to
    force recomputation). Queries without any relevant document are
    skipped and reported in the stats. log_fn receives one record per
    outer iteration. Returns (WeightVector, TrainStats).
    """
    if not queries:
        raise ValueError("empty training set")
    params = cfg.params
    stats = TrainStats()

    working_sets = []
    for idx, q in enumerate(queries):
        given = targets[idx] if targets is not None else None
        try:
            ws = make_working_set(q, params, target=given)
        except DegenerateQueryError:
            stats.skipped_query_ids.append(q.query_id)
            continue
        working_sets.append(ws)
    if not working_sets:
        raise DegenerateQueryError("every training query has zero relevant documents")

    num_rel = working_sets[0].q.num_relevance_features
    dim = working_sets[0].target_psi.shape[0]
    w = np.zeros(dim)
    xi = np.zeros(len(working_sets))
    qp_info = {"primal_objective": 0.0, "dual_objective": 0.0, "duality_gap": 0.0}
    best = {"loss": math.inf, "w": w.copy()}

    for outer in range(1, cfg.max_outer_iters + 1):
        stats.outer_iterations = outer
        w_vec = WeightVector.from_flat(w, num_rel)

        def propose(ws):
            return loss_augmented_infer(w_vec, ws.q, ws.target, params, params.cutoff)

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                proposals = list(pool.map(propose, working_sets))
        else:
            proposals = [propose(ws) for ws in working_sets]

        changed = False
        for ws, yhat in zip(working_sets, proposals):
            # re-check against the weights as they stand after earlier
            # re-solves in this sweep; stale proposals simply fail the test
            delta = metrics.dcem_loss(ws.ideal_raw, yhat, ws.q, params)
            psi = joint_feature_map(ws.q, yhat).flat()
            dpsi = ws.target_psi - psi
            h_hat = delta - float(w @ dpsi)
            if ws.constraints:
                arr_dpsi, arr_delta, _ = _block_arrays(ws)
                xi_i = max(0.0, float((arr_delta - arr_dpsi @ w).max()))
            else:
                xi_i = 0.0
            if h_hat > xi_i + cfg.epsilon:
                key = tuple(yhat)
                if key in ws.rankings():
                    continue  # cannot happen: a member's hinge is counted in xi_i
                ws.constraints.append(Constraint(ranking=key, psi=psi, delta=delta, dpsi=dpsi))
                stats.constraints_added += 1
                changed = True
                w, xi, qp_info = solve_restricted_qp(working_sets, cfg.C, cfg.qp_tol)
                _prune_working_sets(working_sets)

        w_vec = WeightVector.from_flat(w, num_rel)
        train_loss = mean_training_loss(w_vec, working_sets, params)
        if train_loss < best["loss"]:
            best["loss"] = train_loss
            best["w"] = w.copy()
        stats.loss_trace.append(train_loss)
        stats.objective_trace.append(qp_info["primal_objective"])
        stats.constraints_trace.append(sum(len(ws.constraints) for ws in working_sets))
        if log_fn is not None:
            log_fn(
                {
                    "iteration": outer,
                    "objective": qp_info["primal_objective"],
                    "constraints": stats.constraints_trace[-1],
                    "constraints_added": stats.constraints_added,
                    "mean_loss": train_loss,
                }
            )
        if not changed:
            stats.converged = True
            break

    if not stats.converged:
        stats.truncated = True
        w = best["w"]

    stats.constraints_active = sum(len(ws.constraints) for ws in working_sets)
    stats.primal_objective = qp_info["primal_objective"]
    stats.dual_objective = qp_info["dual_objective"]
    stats.working_sets = working_sets
    return WeightVector.from_flat(w, num_rel), stats


@dataclass
class CSweepRow:
    C: float
    train_loss: float
    val_score: float


@dataclass
class CSweepResult:
    rows: list
    best_c: float
    best_weights: WeightVector
    best_stats: TrainStats


DEFAULT_C_GRID = tuple(10.0**e for e in range(-4, 4))  # 1e-4 .. 1e3


def mean_dcem_of_predictions(w: WeightVector, queries, params: MeasureParams) -> float:
    """Mean normalized score of the model's rankings; degenerate queries skipped."""
    scores = []
    for q in queries:
        try:
            scores.append(metrics.dcem(predict(w, q, params.cutoff), q, params))
        except DegenerateQueryError:
            continue
    return float(np.mean(scores)) if scores else 0.0


def c_sweep(
    train_queries,
    val_queries,
    grid,
    cfg: TrainConfig,
    n_jobs: int = 1,
    log_fn: Optional[Callable[[dict], None]] = None,
) -> CSweepResult:
    """Train once per C on the grid; pick the best C by validation score.

    Ties resolve to the smaller C. The returned rows keep the grid order.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty C grid")
    targets = None
    rows = []
    best = None
    for c_value in grid:
        cfg_c = TrainConfig(
            C=float(c_value),
            epsilon=cfg.epsilon,
            max_outer_iters=cfg.max_outer_iters,
            qp_tol=cfg.qp_tol,
            params=cfg.params,
        )
        w, stats = cutting_plane_train(train_queries, cfg_c, targets=targets, n_jobs=n_jobs)
        train_loss = stats.loss_trace[-1] if stats.loss_trace else math.nan
        val_score = mean_dcem_of_predictions(w, val_queries, cfg.params)
        rows.append(CSweepRow(C=float(c_value), train_loss=train_loss, val_score=val_score))
        if log_fn is not None:
            log_fn({"C": float(c_value), "train_loss": train_loss, "val_score": val_score})
        if best is None or val_score > best[0]:
            best = (val_score, float(c_value), w, stats)
    return CSweepResult(rows=rows, best_c=best[1], best_weights=best[2], best_stats=best[3])
