"""STRIPS + typing subset of PDDL: parsing, grounding and state transitions.

Only positive conjunctive preconditions and add/delete effects are accepted.
``:action-costs`` is tolerated (``increase`` effects, ``:functions`` and
``:metric`` are read and dropped); every ground action has cost 1.

States are Python ints used as bitsets over the task's atom indices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator

__all__ = [
    "PDDLError",
    "TypedParam",
    "ActionSchema",
    "Domain",
    "Problem",
    "GroundAction",
    "GroundTask",
    "parse_domain",
    "parse_problem",
    "ground",
    "successors",
    "is_goal",
    "apply",
    "format_atom",
    "domain_to_pddl",
    "problem_to_pddl",
    "load_task",
]

SUPPORTED_REQUIREMENTS = {":strips", ":typing", ":action-costs"}
_UNSUPPORTED = {
    "not": "negative literal 'not'",
    "or": "disjunction 'or'",
    "imply": "implication 'imply'",
    "when": "conditional effect 'when'",
    "forall": "universal quantifier 'forall'",
    "exists": "existential quantifier 'exists'",
    "=": "equality '='",
}

Atom = tuple  # (predicate, arg1, ..., argk), all lower-case strings


class PDDLError(ValueError):
    """Parse or validation failure; the message names the construct and line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class _Sym(str):
    """A token that remembers the source line it came from."""

    line: int

    def __new__(cls, text: str, line: int):
        obj = super().__new__(cls, text)
        obj.line = line
        return obj


class _List(list):
    line: int


def _tokenize(text: str) -> Iterator[_Sym]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0]
        for tok in line.replace("(", " ( ").replace(")", " ) ").split():
            yield _Sym(tok.lower(), lineno)


def _parse_sexpr(text: str) -> _List:
    stack: list[_List] = []
    root = None
    for tok in _tokenize(text):
        if tok == "(":
            node = _List()
            node.line = tok.line
            if stack:
                stack[-1].append(node)
            stack.append(node)
        elif tok == ")":
            if not stack:
                raise PDDLError("unbalanced ')'", tok.line)
            node = stack.pop()
            if not stack:
                if root is not None:
                    raise PDDLError("more than one top-level expression", tok.line)
                root = node
        else:
            if not stack:
                raise PDDLError(f"token {tok!r} outside any expression", tok.line)
            stack[-1].append(tok)
    if stack:
        raise PDDLError("unbalanced '(' at end of input", stack[-1].line)
    if root is None:
        raise PDDLError("empty input")
    return root


def _line(node) -> int | None:
    return getattr(node, "line", None)


def _parse_typed_list(items: list, line=None) -> list[tuple[str, str]]:
    """``a b - t c - u d`` -> [(a, t), (b, t), (c, u), (d, object)]."""
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    i = 0
    while i < len(items):
        tok = items[i]
        if isinstance(tok, list):
            if tok and tok[0] == "either":
                raise PDDLError("'either' types are not supported", _line(tok))
            raise PDDLError("unexpected list in typed list", _line(tok))
        if tok == "-":
            if i + 1 >= len(items) or isinstance(items[i + 1], list):
                bad = items[i + 1] if i + 1 < len(items) else None
                if isinstance(bad, list) and bad and bad[0] == "either":
                    raise PDDLError("'either' types are not supported", _line(bad))
                raise PDDLError("missing type after '-'", _line(tok))
            t = str(items[i + 1])
            out.extend((str(p), t) for p in pending)
            pending = []
            i += 2
            continue
        pending.append(str(tok))
        i += 1
    out.extend((str(p), "object") for p in pending)
    return out


@dataclass(frozen=True)
class TypedParam:
    name: str
    type: str = "object"


@dataclass(frozen=True)
class ActionSchema:
    name: str
    parameters: tuple[TypedParam, ...]
    precondition: tuple[Atom, ...]
    add: tuple[Atom, ...]
    delete: tuple[Atom, ...]


@dataclass(frozen=True)
class Domain:
    name: str
    requirements: tuple[str, ...]
    types: dict  # type -> parent type; "object" is the root
    constants: tuple[TypedParam, ...]
    predicates: tuple[tuple[str, tuple[TypedParam, ...]], ...]
    actions: tuple[ActionSchema, ...]

    def predicate_arity(self) -> dict[str, int]:
        return {name: len(params) for name, params in self.predicates}

    def is_subtype(self, t: str, ancestor: str) -> bool:
        seen = set()
        while t not in seen:
            if t == ancestor:
                return True
            seen.add(t)
            if t not in self.types:
                return False
            t = self.types[t]
        return False


@dataclass(frozen=True)
class Problem:
    name: str
    domain_name: str
    objects: tuple[TypedParam, ...]
    init: frozenset
    goal: frozenset


def _check_formula(node, context: str, allow_not: bool = False) -> None:
    if isinstance(node, list) and node:
        head = node[0]
        if allow_not and head == "not":
            return
        if isinstance(head, str) and head in _UNSUPPORTED:
            raise PDDLError(f"unsupported construct {_UNSUPPORTED[head]} in {context}", _line(node))


def _conjunction(node, context: str, effects: bool = False) -> list:
    """Flatten ``(and a b ...)`` or a single atom into a list of atom nodes."""
    if not isinstance(node, list):
        raise PDDLError(f"expected a formula in {context}", _line(node))
    if not node:
        return []
    _check_formula(node, context, allow_not=effects)
    if node[0] == "and":
        out = []
        for sub in node[1:]:
            out.extend(_conjunction(sub, context, effects))
        return out
    return [node]


def _atom(node, context: str) -> Atom:
    _check_formula(node, context)
    if not node or any(isinstance(t, list) for t in node):
        raise PDDLError(f"malformed atom in {context}", _line(node))
    return tuple(str(t) for t in node)


def _parse_action(node: list, arity: dict[str, int]) -> ActionSchema:
    if len(node) < 2 or isinstance(node[1], list):
        raise PDDLError("action without a name", _line(node))
    name = str(node[1])
    params: tuple[TypedParam, ...] = ()
    pre: list[Atom] = []
    add: list[Atom] = []
    dele: list[Atom] = []
    i = 2
    while i < len(node):
        key = node[i]
        if i + 1 >= len(node):
            raise PDDLError(f"missing value after {key!r} in action {name}", _line(key))
        val = node[i + 1]
        if key == ":parameters":
            params = tuple(TypedParam(n, t) for n, t in _parse_typed_list(val))
        elif key == ":precondition":
            pre = [_atom(a, f"precondition of {name}") for a in _conjunction(val, f"precondition of {name}")]
        elif key == ":effect":
            for eff in _conjunction(val, f"effect of {name}", effects=True):
                head = eff[0]
                if head == "not":
                    if len(eff) != 2:
                        raise PDDLError(f"malformed delete effect in {name}", _line(eff))
                    dele.append(_atom(eff[1], f"effect of {name}"))
                elif head in ("increase", "decrease"):
                    continue  # action-costs bookkeeping, unit cost assumed
                else:
                    add.append(_atom(eff, f"effect of {name}"))
        else:
            raise PDDLError(f"unsupported action field {key!r} in {name}", _line(key))
        i += 2
    pnames = {p.name for p in params}
    for a in itertools.chain(pre, add, dele):
        if a[0] not in arity:
            raise PDDLError(f"undeclared predicate {a[0]!r} in action {name}", _line(node))
        if len(a) - 1 != arity[a[0]]:
            raise PDDLError(f"arity mismatch for {a[0]!r} in action {name}", _line(node))
        for arg in a[1:]:
            if arg.startswith("?") and arg not in pnames:
                raise PDDLError(f"unbound variable {arg} in action {name}", _line(node))
    return ActionSchema(name, params, tuple(pre), tuple(add), tuple(dele))


def parse_domain(text: str) -> Domain:
    """Parse a domain file's contents into a :class:`Domain`."""
    root = _parse_sexpr(text)
    if len(root) < 2 or root[0] != "define":
        raise PDDLError("expected (define ...)", _line(root))
    name = None
    requirements: list[str] = []
    types: dict[str, str] = {}
    constants: tuple[TypedParam, ...] = ()
    predicates: list[tuple[str, tuple[TypedParam, ...]]] = []
    action_nodes: list = []
    for sec in root[1:]:
        if not isinstance(sec, list) or not sec:
            raise PDDLError("unexpected token in domain", _line(sec))
        head = sec[0]
        if head == "domain":
            name = str(sec[1])
        elif head == ":requirements":
            for r in sec[1:]:
                if r not in SUPPORTED_REQUIREMENTS:
                    raise PDDLError(f"unsupported requirement {r}", _line(r))
                requirements.append(str(r))
        elif head == ":types":
            for t, parent in _parse_typed_list(sec[1:]):
                types[t] = parent
        elif head == ":constants":
            constants = tuple(TypedParam(n, t) for n, t in _parse_typed_list(sec[1:]))
        elif head == ":predicates":
            for p in sec[1:]:
                if not isinstance(p, list) or not p:
                    raise PDDLError("malformed predicate declaration", _line(p))
                params = tuple(TypedParam(n, t) for n, t in _parse_typed_list(p[1:]))
                predicates.append((str(p[0]), params))
        elif head == ":functions":
            continue
        elif head == ":action":
            action_nodes.append(sec)
        else:
            raise PDDLError(f"unsupported domain section {head}", _line(head))
    if name is None:
        raise PDDLError("domain has no name", _line(root))
    declared = set(types) | {"object"} | set(types.values())
    for param_list in [constants] + [ps for _, ps in predicates]:
        for p in param_list:
            if p.type not in declared:
                raise PDDLError(f"undeclared type {p.type!r}")
    arity = {n: len(ps) for n, ps in predicates}
    actions = tuple(_parse_action(a, arity) for a in action_nodes)
    for a in actions:
        for p in a.parameters:
            if p.type not in declared:
                raise PDDLError(f"undeclared type {p.type!r} in action {a.name}")
    return Domain(name, tuple(requirements), types, constants, tuple(predicates), actions)


def parse_problem(text: str, domain: Domain) -> Problem:
    """Parse a problem file against ``domain`` and validate objects and atoms."""
    root = _parse_sexpr(text)
    if len(root) < 2 or root[0] != "define":
        raise PDDLError("expected (define ...)", _line(root))
    name = None
    dname = None
    objects: tuple[TypedParam, ...] = ()
    init: list = []
    goal: list = []
    for sec in root[1:]:
        if not isinstance(sec, list) or not sec:
            raise PDDLError("unexpected token in problem", _line(sec))
        head = sec[0]
        if head == "problem":
            name = str(sec[1])
        elif head == ":domain":
            dname = str(sec[1])
        elif head == ":requirements":
            for r in sec[1:]:
                if r not in SUPPORTED_REQUIREMENTS:
                    raise PDDLError(f"unsupported requirement {r}", _line(r))
        elif head == ":objects":
            objects = tuple(TypedParam(n, t) for n, t in _parse_typed_list(sec[1:]))
        elif head == ":init":
            for a in sec[1:]:
                if isinstance(a, list) and a and a[0] == "=":
                    continue  # numeric fluent initialisation from action-costs
                init.append((_atom(a, "init"), _line(a)))
        elif head == ":goal":
            if len(sec) != 2:
                raise PDDLError("goal must be a single formula", _line(sec))
            goal = [(_atom(a, "goal"), _line(a)) for a in _conjunction(sec[1], "goal")]
        elif head == ":metric":
            continue
        else:
            raise PDDLError(f"unsupported problem section {head}", _line(head))
    if dname != domain.name:
        raise PDDLError(f"problem refers to domain {dname!r}, expected {domain.name!r}", _line(root))
    declared = set(domain.types) | {"object"}
    obj_type = {c.name: c.type for c in domain.constants}
    for o in objects:
        if o.type not in declared:
            raise PDDLError(f"object {o.name!r} has undeclared type {o.type!r}")
        obj_type[o.name] = o.type
    preds = dict(domain.predicates)
    for atom, line in itertools.chain(init, goal):
        if atom[0] not in preds:
            raise PDDLError(f"undeclared predicate {atom[0]!r}", line)
        params = preds[atom[0]]
        if len(atom) - 1 != len(params):
            raise PDDLError(f"arity mismatch in {format_atom(atom)}", line)
        for arg, p in zip(atom[1:], params):
            if arg not in obj_type:
                raise PDDLError(f"unknown object {arg!r} in {format_atom(atom)}", line)
            if not domain.is_subtype(obj_type[arg], p.type):
                raise PDDLError(f"object {arg!r} is not of type {p.type!r} in {format_atom(atom)}", line)
    return Problem(
        name or "problem",
        dname,
        objects,
        frozenset(a for a, _ in init),
        frozenset(a for a, _ in goal),
    )


@dataclass(frozen=True)
class GroundAction:
    name: str  # e.g. "(stack a b)"
    pre: int
    add: int
    delete: int
    cost: int = 1


@dataclass(frozen=True)
class GroundTask:
    """Grounded unit-cost STRIPS task; states are int bitsets over ``atoms``."""

    atoms: tuple[Atom, ...]
    actions: tuple[GroundAction, ...]
    init: int
    goal: int
    atom_index: dict = field(repr=False, compare=False, hash=False, default=None)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def state_from_atoms(self, atoms: Iterable[Atom]) -> int:
        s = 0
        for a in atoms:
            s |= 1 << self.atom_index[a]
        return s

    def state_atoms(self, state: int) -> list[Atom]:
        return [a for i, a in enumerate(self.atoms) if state >> i & 1]


def format_atom(atom: Atom) -> str:
    return "(" + " ".join(atom) + ")"


def _objects_by_type(domain: Domain, problem: Problem) -> dict[str, list[str]]:
    all_objs = list(domain.constants) + list(problem.objects)
    types = set(domain.types) | set(domain.types.values()) | {"object"}
    return {
        t: [o.name for o in all_objs if domain.is_subtype(o.type, t)] for t in sorted(types)
    }


def _instantiations(schema: ActionSchema, by_type: dict[str, list[str]]) -> Iterator[dict]:
    names = [p.name for p in schema.parameters]
    pools = [by_type.get(p.type, []) for p in schema.parameters]
    for combo in itertools.product(*pools):
        if len(set(combo)) != len(combo):
            continue
        yield dict(zip(names, combo))


def ground(domain: Domain, problem: Problem) -> GroundTask:
    """Instantiate every schema over well-typed tuples of distinct objects.

    Atom indices follow lexicographic order of (predicate, args); actions are
    ordered by schema declaration, then by argument tuple.
    """
    by_type = _objects_by_type(domain, problem)
    raw_actions = []
    atoms = set(problem.init) | set(problem.goal)
    for schema in domain.actions:
        for binding in _instantiations(schema, by_type):
            sub = lambda a: (a[0],) + tuple(binding.get(x, x) for x in a[1:])
            pre = frozenset(map(sub, schema.precondition))
            add = frozenset(map(sub, schema.add))
            dele = frozenset(map(sub, schema.delete))
            args = tuple(binding[p.name] for p in schema.parameters)
            raw_actions.append((schema.name, args, pre, add, dele))
            atoms |= pre | add | dele
    atom_list = tuple(sorted(atoms))
    index = {a: i for i, a in enumerate(atom_list)}
    mask = lambda atoms_: sum(1 << index[a] for a in atoms_)
    actions = []
    for name, args, pre, add, dele in raw_actions:
        # delete-then-add: an atom in both lists stays true
        actions.append(
            GroundAction(format_atom((name,) + args), mask(pre), mask(add), mask(dele - add))
        )
    return GroundTask(
        atom_list, tuple(actions), mask(problem.init), mask(problem.goal), atom_index=index
    )


def apply(action: GroundAction, state: int) -> int:
    return (state & ~action.delete) | action.add


def successors(task: GroundTask, state: int) -> list[tuple[int, int]]:
    """Applicable ``(action index, successor state)`` pairs in action order."""
    out = []
    for i, a in enumerate(task.actions):
        if a.pre & state == a.pre:
            out.append((i, (state & ~a.delete) | a.add))
    return out


def is_goal(task: GroundTask, state: int) -> bool:
    return task.goal & state == task.goal


def _fmt_typed(params: Iterable[TypedParam]) -> str:
    return " ".join(f"{p.name} - {p.type}" for p in params)


def _fmt_conj(atoms: Iterable[Atom]) -> str:
    atoms = list(atoms)
    return "(and " + " ".join(format_atom(a) for a in atoms) + ")"


def domain_to_pddl(domain: Domain) -> str:
    lines = [f"(define (domain {domain.name})"]
    if domain.requirements:
        lines.append("  (:requirements " + " ".join(domain.requirements) + ")")
    if domain.types:
        lines.append("  (:types " + " ".join(f"{t} - {p}" for t, p in domain.types.items()) + ")")
    if domain.constants:
        lines.append("  (:constants " + _fmt_typed(domain.constants) + ")")
    preds = " ".join(
        "(" + " ".join([n] + ([_fmt_typed(ps)] if ps else [])) + ")" for n, ps in domain.predicates
    )
    lines.append(f"  (:predicates {preds})")
    for a in domain.actions:
        effects = [format_atom(x) for x in a.add] + [f"(not {format_atom(x)})" for x in a.delete]
        lines.append(f"  (:action {a.name}")
        lines.append(f"    :parameters ({_fmt_typed(a.parameters)})")
        lines.append(f"    :precondition {_fmt_conj(a.precondition)}")
        lines.append("    :effect (and " + " ".join(effects) + "))")
    lines.append(")")
    return "\n".join(lines) + "\n"


def problem_to_pddl(problem: Problem) -> str:
    objs = _fmt_typed(problem.objects)
    init = " ".join(format_atom(a) for a in sorted(problem.init))
    return (
        f"(define (problem {problem.name})\n"
        f"  (:domain {problem.domain_name})\n"
        f"  (:objects {objs})\n"
        f"  (:init {init})\n"
        f"  (:goal {_fmt_conj(sorted(problem.goal))}))\n"
    )


def load_task(domain_text: str, problem_text: str) -> GroundTask:
    domain = parse_domain(domain_text)
    return ground(domain, parse_problem(problem_text, domain))
