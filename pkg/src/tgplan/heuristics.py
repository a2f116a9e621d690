"""Classical planning heuristics over grounded tasks.

``hmax`` and ``ff`` both build the unit-cost relaxed planning graph layer by
layer.  With unit costs the first layer at which an atom appears is exactly
its h^max cost, so no priority queue is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .pddl import GroundTask

__all__ = ["RelaxedPlanInfo", "blind", "goal_count", "hmax", "ff", "relaxed_plan"]

INF = math.inf


@dataclass(frozen=True)
class RelaxedPlanInfo:
    ff_value: float  # int, or inf on relaxed dead ends
    total_ignored_effects: int
    mean_ignored_effects: float
    hmax: float = 0


def blind(task: GroundTask, state: int) -> int:
    return 0 if task.goal & state == task.goal else 1


def goal_count(task: GroundTask, state: int) -> int:
    return (task.goal & ~state).bit_count()


def hmax(task: GroundTask, state: int) -> float:
    """Max-cost of the goal atoms under the delete relaxation (admissible)."""
    goal = task.goal
    reached = state
    if goal & reached == goal:
        return 0
    pending = [(a.pre, a.add) for a in task.actions]
    layer = 0
    while True:
        layer += 1
        new = 0
        rest = []
        for pre, add in pending:
            if pre & reached == pre:
                new |= add
            else:
                rest.append((pre, add))
        new &= ~reached
        if not new:
            return INF
        reached |= new
        if goal & reached == goal:
            return layer
        pending = rest


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def relaxed_plan(task: GroundTask, state: int):
    """Return ``(hmax value, relaxed plan as [(level, action index)])``.

    Supporters: for each atom the lowest-index action among those of minimal
    h^max level that add it.  The plan is extracted by backward marking from
    the goal atoms and returned sorted by (level, index).  ``None`` replaces
    the plan when the goal is relaxed-unreachable.
    """
    goal = task.goal
    if goal & state == goal:
        return 0, []
    actions = task.actions
    cost = {}  # atom -> layer, only for atoms not in `state`
    supporter = {}
    level = {}
    reached = state
    pending = list(range(len(actions)))
    layer = 0
    while True:
        layer += 1
        fired = []
        rest = []
        for i in pending:
            pre = actions[i].pre
            if pre & reached == pre:
                fired.append(i)
            else:
                rest.append(i)
        new_total = 0
        for i in fired:
            level[i] = layer
            new = actions[i].add & ~reached & ~new_total
            if new:
                for b in _bits(new):
                    supporter[b] = i
                    cost[b] = layer
                new_total |= new
        if not new_total:
            return INF, None
        reached |= new_total
        pending = rest
        if goal & reached == goal:
            break
    h = max(cost.get(b, 0) for b in _bits(goal))
    plan = set()
    done = 0
    agenda = [b for b in _bits(goal & ~state)]
    while agenda:
        b = agenda.pop()
        if done >> b & 1:
            continue
        done |= 1 << b
        a = supporter[b]
        if a in plan:
            continue
        plan.add(a)
        for p in _bits(actions[a].pre & ~state & ~done):
            agenda.append(p)
    return h, sorted((level[a], a) for a in plan)


def ff(task: GroundTask, state: int) -> RelaxedPlanInfo:
    """FF relaxed-plan cost plus ignored-effect statistics.

    An add effect counts as ignored when the atom is already true in the
    monotone relaxed state at the moment its action is replayed (actions are
    replayed in (level, index) order starting from ``state``).
    """
    h, plan = relaxed_plan(task, state)
    if plan is None:
        return RelaxedPlanInfo(INF, 0, 0.0, INF)
    if not plan:
        return RelaxedPlanInfo(0, 0, 0.0, 0)
    cur = state
    total = 0
    for _, a in plan:
        add = task.actions[a].add
        total += (add & cur).bit_count()
        cur |= add
    return RelaxedPlanInfo(len(plan), total, total / len(plan), h)
