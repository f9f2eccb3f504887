"""
Offline benchmark: the omniscient planner.

The planner sees every arrival, lifetime and compatible pair in advance, so
any two agents whose presence intervals overlap can be matched. Only agents
that become critical inside the loss window can be lost. For each side the
planner picks a maximum matching that, among all maximum matchings, covers
the most agents of that side critical inside the window; by the
Mendelsohn-Dulmage theorem one matching achieves the U-side and the V-side
choice at once: the per-side covers are solved independently and merged.
"""
import logging

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import min_weight_full_bipartite_matching

from ..schemas import OMNISCIENT, LossReport, MarketParams
from .simulation import MATCHED, PERISHED, Realization, _Execution, loss_report, sample_realization

logger = logging.getLogger(__name__)

# Assignment costs: a row left on its private dummy column costs DUMMY_COST,
# a real edge costs DUMMY_COST minus the row's priority weight
DUMMY_COST = 3.0
WINDOW_WEIGHT, OTHER_WEIGHT = 2.0, 1.0


def _priority_cover(realization: Realization, rows: np.ndarray, cols: np.ndarray, priority: np.ndarray) -> np.ndarray:
    """
    Partner (agent id or -1) of each row agent in a maximum matching of rows
    against cols that covers as many `priority` rows as possible.

    Covering a row is worth 2 if it has priority and 1 otherwise; the covered
    rows form a transversal matroid, so the heaviest cover is a maximum
    matching with the most priority rows. Each row also gets a private dummy
    column so that the full assignment always exists.
    """
    partner = np.full(len(rows), -1, dtype=np.int64)
    if not len(rows):
        return partner
    col_of = {int(y): c for c, y in enumerate(cols)}
    weight = np.where(priority, WINDOW_WEIGHT, OTHER_WEIGHT)
    edge_rows, edge_cols, costs = [], [], []
    for r, x in enumerate(rows):
        for y in realization.adjacency[x]:
            if y in col_of:
                edge_rows.append(r)
                edge_cols.append(col_of[y])
                costs.append(DUMMY_COST - weight[r])
    if not edge_rows:
        return partner

    n_rows, n_cols = len(rows), len(cols)
    dummy = np.arange(n_rows)
    graph = csr_matrix(
        (np.concatenate([costs, np.full(n_rows, DUMMY_COST)]),
         (np.concatenate([edge_rows, dummy]), np.concatenate([edge_cols, n_cols + dummy]))),
        shape=(n_rows, n_cols + n_rows),
    )
    row_ind, col_ind = min_weight_full_bipartite_matching(graph)
    real = col_ind < n_cols
    partner[row_ind[real]] = cols[col_ind[real]]
    return partner


def _merge_covers(u_cover: dict[int, int], v_cover: dict[int, int]) -> list[tuple[int, int]]:
    """
    One matching covering every U agent covered by `u_cover` (U id -> V id)
    and every V agent covered by `v_cover` (V id -> U id).

    The union of the two matchings splits into alternating paths and cycles.
    A component takes its `v_cover` edges only when one of its path ends is
    a V agent reached by `v_cover` alone; a path cannot also end in a U agent
    reached by `u_cover` alone, so nothing covered is dropped.
    """
    first = {**u_cover, **{y: x for x, y in u_cover.items()}}
    second = {**v_cover, **{x: y for y, x in v_cover.items()}}
    seen: set[int] = set()
    pairs = []
    for start in sorted(first.keys() | second.keys()):
        if start in seen:
            continue
        seen.add(start)
        component, stack = [], [start]
        while stack:
            x = stack.pop()
            component.append(x)
            for y in (first.get(x), second.get(x)):
                if y is not None and y not in seen:
                    seen.add(y)
                    stack.append(y)
        chosen = second if any(x in v_cover and x not in first for x in component) else first
        pairs.extend((x, chosen[x]) for x in component if x in chosen and x < chosen[x])
    return pairs


def omniscient_execution(realization: Realization, burn_in: float = 0.0) -> _Execution:
    """
    Outcome arrays of the omniscient planner.

    Covered agents are matched. Uncovered agents critical by the horizon
    perish and the rest remain, so the window loss is the smallest any
    matching allows and the matched count is the maximum matching size.
    ``partner`` is symmetric: both covers are merged into one matching. Match
    times are left undefined.
    """
    result = _Execution(realization.size)
    criticality = realization.criticality
    result.outcome[criticality <= realization.horizon] = PERISHED
    in_window = (criticality >= burn_in) & (criticality <= realization.horizon)
    u_ids = np.flatnonzero(realization.side == 0)
    v_ids = np.flatnonzero(realization.side == 1)

    covers = []
    for rows, cols in ((u_ids, v_ids), (v_ids, u_ids)):
        partner = _priority_cover(realization, rows, cols, in_window[rows])
        covers.append({int(x): int(y) for x, y in zip(rows, partner) if y >= 0})
    for x, y in _merge_covers(*covers):
        result.outcome[[x, y]] = MATCHED
        result.partner[x], result.partner[y] = y, x

    logger.debug(
        'Omniscient planner matches %s pairs; %s of %s window agents perish',
        int((result.outcome[u_ids] == MATCHED).sum()),
        int((in_window & (result.outcome == PERISHED)).sum()), int(in_window.sum()),
    )
    return result


def omniscient_loss(params: MarketParams, horizon: float, seed: int, burn_in: float = 0.0) -> LossReport:
    """Loss of the omniscient planner on the realization drawn from `seed`"""
    realization = sample_realization(params, horizon, seed)
    return loss_report(realization, omniscient_execution(realization, burn_in).outcome, OMNISCIENT, burn_in)
