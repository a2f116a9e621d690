"""
Blocksworld with classical heuristics
=====================================

Generate a random 6-block problem, solve it optimally with A* and h^max,
then compare greedy best-first search with FF against the optimum.
"""

from tgplan import heuristics
from tgplan.dataset import gen_blocksworld
from tgplan.pddl import ground, problem_to_pddl
from tgplan.search import astar, gbfs

domain, problem = gen_blocksworld(6, seed=7)
print(problem_to_pddl(problem))

task = ground(domain, problem)
print(f"{task.n_atoms} atoms, {len(task.actions)} ground actions")

s0 = task.init
info = heuristics.ff(task, s0)
print("h^max, ff, goal count at init:", heuristics.hmax(task, s0), info.ff_value, heuristics.goal_count(task, s0))

opt = astar(task, lambda s: heuristics.hmax(task, s))
print("optimal cost:", opt.cost, "expansions:", opt.expansions)
for i in opt.plan:
    print("   ", task.actions[i].name)

greedy = gbfs(task, lambda s: heuristics.ff(task, s).ff_value)
print("GBFS+ff cost:", greedy.cost, "evaluations:", greedy.evaluations)
