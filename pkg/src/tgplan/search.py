"""A*, breadth-first search and greedy best-first search over ground tasks.

Heuristics are plain callables ``h(state) -> float``; ``math.inf`` marks a
dead end and prunes the state.  All ties are broken FIFO by insertion order.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .pddl import GroundTask, is_goal, successors

__all__ = [
    "SOLVED",
    "EXHAUSTED",
    "EVAL_LIMIT",
    "SearchResult",
    "BudgetExceeded",
    "astar",
    "bfs_oracle",
    "gbfs",
    "validate_plan",
    "optimal_cost_table",
]

SOLVED = "solved"
EXHAUSTED = "exhausted"
EVAL_LIMIT = "eval-limit"

Heuristic = Callable[[int], float]


class BudgetExceeded(RuntimeError):
    """The exhaustive oracle ran out of its node budget."""


@dataclass
class SearchResult:
    status: str
    plan: list = field(default_factory=list)
    cost: int = 0
    evaluations: int = 0
    expansions: int = 0

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def _extract(parents: dict, state: int) -> list[int]:
    plan = []
    while True:
        prev = parents[state]
        if prev is None:
            break
        state, action = prev
        plan.append(action)
    plan.reverse()
    return plan


def validate_plan(task: GroundTask, plan: list[int], state: int | None = None) -> bool:
    """Replay ``plan`` and check applicability of every step and the goal."""
    s = task.init if state is None else state
    for i in plan:
        a = task.actions[i]
        if a.pre & s != a.pre:
            return False
        s = (s & ~a.delete) | a.add
    return is_goal(task, s)


def astar(task: GroundTask, h: Heuristic, max_expansions: int | None = None) -> SearchResult:
    """Optimal search when ``h`` is admissible.

    Priority is ``(f, -g, insertion order)``.  States are re-opened when a
    cheaper path is found, so admissible but inconsistent ``h`` stays optimal.
    ``max_expansions`` turns an over-budget run into an ``eval-limit`` result.
    """
    counter = itertools.count()
    init = task.init
    hval: dict[int, float] = {init: h(init)}
    if math.isinf(hval[init]):
        return SearchResult(EXHAUSTED, evaluations=1)
    g = {init: 0}
    parents = {init: None}
    open_ = [(hval[init], 0, next(counter), init)]
    closed = set()
    expansions = 0
    while open_:
        f, neg_g, _, s = heapq.heappop(open_)
        gs = -neg_g
        if gs > g[s] or s in closed:
            continue
        if is_goal(task, s):
            return SearchResult(SOLVED, _extract(parents, s), gs, len(hval), expansions)
        if max_expansions is not None and expansions >= max_expansions:
            return SearchResult(EVAL_LIMIT, evaluations=len(hval), expansions=expansions)
        closed.add(s)
        expansions += 1
        for ai, t in successors(task, s):
            gt = gs + task.actions[ai].cost
            if t in g and g[t] <= gt:
                continue
            if t not in hval:
                hval[t] = h(t)
            if math.isinf(hval[t]):
                continue
            g[t] = gt
            parents[t] = (s, ai)
            closed.discard(t)
            heapq.heappush(open_, (gt + hval[t], -gt, next(counter), t))
    return SearchResult(EXHAUSTED, evaluations=len(hval), expansions=expansions)


def bfs_oracle(task: GroundTask, budget: int = 1_000_000) -> SearchResult:
    """Uniform breadth-first search; optimal for unit costs.

    Raises :class:`BudgetExceeded` once more than ``budget`` states have been
    generated.
    """
    init = task.init
    parents = {init: None}
    if is_goal(task, init):
        return SearchResult(SOLVED, [], 0)
    queue = deque([init])
    expansions = 0
    while queue:
        s = queue.popleft()
        expansions += 1
        for ai, t in successors(task, s):
            if t in parents:
                continue
            parents[t] = (s, ai)
            if is_goal(task, t):
                plan = _extract(parents, t)
                return SearchResult(SOLVED, plan, len(plan), 0, expansions)
            if len(parents) > budget:
                raise BudgetExceeded(f"bfs generated more than {budget} states")
            queue.append(t)
    return SearchResult(EXHAUSTED, expansions=expansions)


def optimal_cost_table(task: GroundTask, budget: int = 1_000_000) -> dict[int, int]:
    """Exact goal distance of every state reachable from ``init``.

    Forward enumeration followed by a backward BFS from the goal states over
    the reversed transition graph.
    """
    preds: dict[int, list[int]] = {task.init: []}
    queue = deque([task.init])
    while queue:
        s = queue.popleft()
        for _, t in successors(task, s):
            if t not in preds:
                if len(preds) >= budget:
                    raise BudgetExceeded(f"state space larger than {budget}")
                preds[t] = []
                queue.append(t)
            preds[t].append(s)
    dist = {s: 0 for s in preds if is_goal(task, s)}
    queue = deque(dist)
    while queue:
        t = queue.popleft()
        for s in preds[t]:
            if s not in dist:
                dist[s] = dist[t] + 1
                queue.append(s)
    return dist


def gbfs(task: GroundTask, h: Heuristic, eval_cap: int = 10_000) -> SearchResult:
    """Greedy best-first search ordered by ``h`` alone.

    Successors are evaluated when generated and every state is evaluated at
    most once; ``evaluations`` is the number of distinct states evaluated.
    Hitting ``eval_cap`` without a solution gives status ``eval-limit`` with
    ``evaluations == eval_cap``.
    """
    if eval_cap < 1:
        raise ValueError("eval_cap must be at least 1")
    counter = itertools.count()
    init = task.init
    hval = {init: h(init)}
    parents = {init: None}
    open_ = [] if math.isinf(hval[init]) else [(hval[init], next(counter), init)]
    closed = set()
    expansions = 0
    while open_:
        _, _, s = heapq.heappop(open_)
        if s in closed:
            continue
        if is_goal(task, s):
            plan = _extract(parents, s)
            return SearchResult(SOLVED, plan, len(plan), len(hval), expansions)
        closed.add(s)
        expansions += 1
        for ai, t in successors(task, s):
            if t in hval:
                continue
            if len(hval) >= eval_cap:
                return SearchResult(EVAL_LIMIT, evaluations=eval_cap, expansions=expansions)
            ht = h(t)
            hval[t] = ht
            parents[t] = (s, ai)
            if not math.isinf(ht):
                heapq.heappush(open_, (ht, next(counter), t))
    return SearchResult(EXHAUSTED, evaluations=len(hval), expansions=expansions)
