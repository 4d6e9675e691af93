"""Syntax trees for terms, formulas and programs, plus the structural
operations (free variables, capture-avoiding substitution, fresh names,
sugar expansion) shared by every other module.

All nodes are frozen dataclasses: immutable, hashable, compared
structurally, and safe to share between threads.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Union


class EpiscopeError(Exception):
    pass


class SortError(EpiscopeError):
    pass


class ScopeError(EpiscopeError):
    pass


class Sort(Enum):
    BOOL = "Bool"
    INT = "Int"
    CHOICE = "Choice"

    def __str__(self) -> str:
        return self.value


class ChoiceValue(Enum):
    """The two tags a nondeterministic choice can resolve to."""

    L = "l"
    R = "r"

    def __str__(self) -> str:
        return self.value


Value = Union[bool, int, ChoiceValue]

# Generated names use this separator; user identifiers may not contain it,
# so freshness is checkable purely syntactically.
FRESH_SEP = "__"


@dataclass(frozen=True)
class ObsVar:
    """A variable tagged with the set of agents able to observe its value."""

    name: str
    observers: frozenset[str]
    sort: Sort

    def observed_by(self, agent: str) -> bool:
        return agent in self.observers

    def __str__(self) -> str:
        return self.name


def obsvar(name: str, observers, sort: Sort = Sort.BOOL) -> ObsVar:
    return ObsVar(name, frozenset(observers), sort)


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class IntLit:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class BoolLit:
    value: bool

    def __str__(self) -> str:
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Var:
    var: ObsVar

    def __str__(self) -> str:
        return self.var.name


INT_OPS = ("+", "-", "*", "mod")
BOOL_OPS = ("and", "or", "xor")


@dataclass(frozen=True)
class BinTerm:
    op: str
    left: "Term"
    right: "Term"

    def __post_init__(self) -> None:
        want = Sort.INT if self.op in INT_OPS else Sort.BOOL
        if self.op not in INT_OPS and self.op not in BOOL_OPS:
            raise SortError(f"unknown term operator {self.op!r}")
        for side in (self.left, self.right):
            got = term_sort(side)
            if got is not want:
                raise SortError(f"operator {self.op!r} needs {want} operand, got {got}")


@dataclass(frozen=True)
class NotTerm:
    arg: "Term"

    def __post_init__(self) -> None:
        if term_sort(self.arg) is not Sort.BOOL:
            raise SortError("'not' needs a Bool operand")


Term = Union[IntLit, BoolLit, Var, BinTerm, NotTerm]


@functools.lru_cache(maxsize=None)
def term_sort(t: Term) -> Sort:
    if isinstance(t, IntLit):
        return Sort.INT
    if isinstance(t, BoolLit):
        return Sort.BOOL
    if isinstance(t, Var):
        return t.var.sort
    if isinstance(t, BinTerm):
        return Sort.INT if t.op in INT_OPS else Sort.BOOL
    if isinstance(t, NotTerm):
        return Sort.BOOL
    raise SortError(f"not a term: {t!r}")


# ---------------------------------------------------------------------------
# Formulas
#
# One node hierarchy covers the quantifier-free, first-order and epistemic
# layers; the predicates is_qf / is_fo below check membership in the smaller
# fragments.  Derived connectives (or, implies, exists, iff) are constructor
# functions that normalize immediately, so everything downstream handles the
# core grammar only.


@dataclass(frozen=True)
class BoolAtom:
    """A Bool-sorted term used directly as an atomic formula."""

    term: Term

    def __post_init__(self) -> None:
        if term_sort(self.term) is not Sort.BOOL:
            raise SortError("atom term must be Bool-sorted")


@dataclass(frozen=True)
class Eq:
    left: Term
    right: Term

    def __post_init__(self) -> None:
        ls, rs = term_sort(self.left), term_sort(self.right)
        if ls is not rs:
            raise SortError(f"'=' operands disagree: {ls} vs {rs}")


@dataclass(frozen=True)
class Lt:
    left: Term
    right: Term

    def __post_init__(self) -> None:
        for side in (self.left, self.right):
            if term_sort(side) is not Sort.INT:
                raise SortError("'<' needs Int operands")


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class Forall:
    var: ObsVar
    body: "Formula"


@dataclass(frozen=True)
class Knows:
    agent: str
    body: "Formula"


@dataclass(frozen=True)
class KnowsVal:
    """Sugar: agent knows the value of a variable."""

    agent: str
    var: ObsVar


@dataclass(frozen=True)
class Announce:
    """Box announcement: after every truthful announcement of `ann`, `body`."""

    ann: "Formula"
    body: "Formula"


@dataclass(frozen=True)
class DiamondAnnounce:
    """`ann` is truthfully announceable, and announcing it makes `body` hold."""

    ann: "Formula"
    body: "Formula"


@dataclass(frozen=True)
class After:
    """`body` holds in every state reachable by running the program."""

    prog: "Program"
    body: "Formula"


Formula = Union[
    BoolAtom, Eq, Lt, And, Not, Forall, Knows, KnowsVal, Announce, DiamondAnnounce, After
]

TRUE: Formula = BoolAtom(BoolLit(True))
FALSE: Formula = BoolAtom(BoolLit(False))


def Or(left: Formula, right: Formula) -> Formula:
    return Not(And(Not(left), Not(right)))


def Implies(left: Formula, right: Formula) -> Formula:
    return Not(And(left, Not(right)))


def Exists(var: ObsVar, body: Formula) -> Formula:
    return Not(Forall(var, Not(body)))


def conj(parts: list[Formula]) -> Formula:
    """Balanced conjunction; TRUE for the empty list."""
    if not parts:
        return TRUE
    if len(parts) == 1:
        return parts[0]
    mid = len(parts) // 2
    return And(conj(parts[:mid]), conj(parts[mid:]))


def disj(parts: list[Formula]) -> Formula:
    if not parts:
        return FALSE
    if len(parts) == 1:
        return parts[0]
    mid = len(parts) // 2
    return Or(disj(parts[:mid]), disj(parts[mid:]))


def bin_chain(op: str, parts: list[Term]) -> Term:
    """Balanced term chain, e.g. xor of all announcements."""
    if not parts:
        raise SortError(f"empty {op} chain")
    if len(parts) == 1:
        return parts[0]
    mid = len(parts) // 2
    return BinTerm(op, bin_chain(op, parts[:mid]), bin_chain(op, parts[mid:]))


# ---------------------------------------------------------------------------
# Programs


@dataclass(frozen=True)
class Test:
    cond: Formula

    def __post_init__(self) -> None:
        if contains_box(self.cond):
            raise ScopeError("test conditions may not contain a program box")


@dataclass(frozen=True)
class Assign:
    target: ObsVar
    expr: Term

    def __post_init__(self) -> None:
        if term_sort(self.expr) is not self.target.sort:
            raise SortError(
                f"assigning {term_sort(self.expr)} term to {self.target.sort} "
                f"variable {self.target.name}"
            )


@dataclass(frozen=True)
class NewVar:
    var: ObsVar
    body: "Program"


@dataclass(frozen=True)
class Seq:
    first: "Program"
    second: "Program"


@dataclass(frozen=True)
class Choice:
    left: "Program"
    right: "Program"


Program = Union[Test, Assign, NewVar, Seq, Choice]

Node = Union[Term, Formula, Program]


# ---------------------------------------------------------------------------
# Structural queries


def children(node: Node) -> Iterator[Node]:
    if isinstance(node, (IntLit, BoolLit, Var, KnowsVal)):
        return
    elif isinstance(node, BinTerm):
        yield node.left
        yield node.right
    elif isinstance(node, NotTerm):
        yield node.arg
    elif isinstance(node, BoolAtom):
        yield node.term
    elif isinstance(node, (Eq, Lt)):
        yield node.left
        yield node.right
    elif isinstance(node, And):
        yield node.left
        yield node.right
    elif isinstance(node, Not):
        yield node.arg
    elif isinstance(node, Forall):
        yield node.body
    elif isinstance(node, Knows):
        yield node.body
    elif isinstance(node, (Announce, DiamondAnnounce)):
        yield node.ann
        yield node.body
    elif isinstance(node, After):
        yield node.prog
        yield node.body
    elif isinstance(node, Test):
        yield node.cond
    elif isinstance(node, Assign):
        yield node.expr
    elif isinstance(node, NewVar):
        yield node.body
    elif isinstance(node, Seq):
        yield node.first
        yield node.second
    elif isinstance(node, Choice):
        yield node.left
        yield node.right
    else:
        raise TypeError(f"not a syntax node: {node!r}")


def node_count(node: Node) -> int:
    return 1 + sum(node_count(c) for c in children(node))


def free_vars(node: Node) -> frozenset[ObsVar]:
    """Variables with a free occurrence; quantifier- and new-bound ones excluded."""
    if isinstance(node, Var):
        return frozenset((node.var,))
    if isinstance(node, KnowsVal):
        return frozenset((node.var,))
    if isinstance(node, Forall):
        return free_vars(node.body) - {node.var}
    if isinstance(node, NewVar):
        return free_vars(node.body) - {node.var}
    if isinstance(node, Assign):
        return free_vars(node.expr) | {node.target}
    out: frozenset[ObsVar] = frozenset()
    for c in children(node):
        out |= free_vars(c)
    return out


def all_names(node: Node) -> frozenset[str]:
    """Every variable name occurring anywhere, bound or free."""
    if isinstance(node, Var):
        return frozenset((node.var.name,))
    if isinstance(node, KnowsVal):
        return frozenset((node.var.name,))
    out: frozenset[str] = frozenset()
    if isinstance(node, Forall):
        out |= {node.var.name}
    if isinstance(node, NewVar):
        out |= {node.var.name}
    if isinstance(node, Assign):
        out |= {node.target.name}
    for c in children(node):
        out |= all_names(c)
    return out


def agents_of(node: Node) -> frozenset[str]:
    """Agents referenced by knowledge operators (observer sets not included)."""
    out: frozenset[str] = frozenset()
    if isinstance(node, Knows):
        out |= {node.agent}
    if isinstance(node, KnowsVal):
        out |= {node.agent}
    for c in children(node):
        out |= agents_of(c)
    return out


def contains_box(node: Node) -> bool:
    if isinstance(node, After):
        return True
    return any(contains_box(c) for c in children(node))


def contains_knowledge(node: Node) -> bool:
    if isinstance(node, (Knows, KnowsVal, Announce, DiamondAnnounce, After)):
        return True
    return any(contains_knowledge(c) for c in children(node))


def contains_quantifier(node: Node) -> bool:
    if isinstance(node, Forall):
        return True
    return any(contains_quantifier(c) for c in children(node))


def is_fo(f: Formula) -> bool:
    """First-order: no knowledge, announcement or program operators."""
    return not contains_knowledge(f)


def is_qf(f: Formula) -> bool:
    return is_fo(f) and not contains_quantifier(f)


def is_epistemic(f: Formula) -> bool:
    """Member of the box-free epistemic layer (announcements allowed)."""
    return not contains_box(f)


# ---------------------------------------------------------------------------
# Fresh names


def base_name(name: str) -> str:
    return name.split(FRESH_SEP, 1)[0]


def fresh_var(
    base: str, observers: frozenset[str], sort: Sort, avoid: frozenset[str]
) -> ObsVar:
    """First `base__i` not in `avoid`; deterministic in (base, avoid)."""
    base = base_name(base)
    i = 0
    while f"{base}{FRESH_SEP}{i}" in avoid:
        i += 1
    return ObsVar(f"{base}{FRESH_SEP}{i}", observers, sort)


class NameSupply:
    """Allocates fresh variables, remembering every name handed out."""

    def __init__(self, avoid=()) -> None:
        self._avoid: set[str] = set(avoid)

    def reserve(self, names) -> None:
        self._avoid.update(names)

    def fresh(self, base: str, observers: frozenset[str], sort: Sort) -> ObsVar:
        v = fresh_var(base, observers, sort, frozenset(self._avoid))
        self._avoid.add(v.name)
        return v

    @classmethod
    def for_nodes(cls, *nodes: Node) -> "NameSupply":
        supply = cls()
        for n in nodes:
            supply.reserve(all_names(n))
        return supply


# ---------------------------------------------------------------------------
# Substitution


class SubstitutionError(EpiscopeError):
    pass


def substitute(node: Node, x: ObsVar, t: Term) -> Node:
    """Replace free occurrences of x by t, renaming binders to avoid capture.

    A renamed binder keeps its observer set and sort; only the name changes.
    """
    if term_sort(t) is not x.sort:
        raise SortError(f"substituting {term_sort(t)} term for {x.sort} variable {x.name}")
    return _subst(node, x, t, free_vars(t))


def _subst(node: Node, x: ObsVar, t: Term, t_free: frozenset[ObsVar]) -> Node:
    if isinstance(node, Var):
        return t if node.var == x else node
    if isinstance(node, (IntLit, BoolLit)):
        return node
    if isinstance(node, KnowsVal):
        if node.var != x:
            return node
        if isinstance(t, Var):
            return KnowsVal(node.agent, t.var)
        raise SubstitutionError(
            f"cannot substitute a compound term for {x.name} under a know-value operator"
        )
    if isinstance(node, (Forall, NewVar)):
        ctor = type(node)
        if node.var == x:
            return node
        if node.var in t_free:
            avoid = {v.name for v in t_free} | all_names(node.body) | {x.name}
            renamed = fresh_var(node.var.name, node.var.observers, node.var.sort, frozenset(avoid))
            body = _subst(node.body, node.var, Var(renamed), frozenset((renamed,)))
            return ctor(renamed, _subst(body, x, t, t_free))
        return ctor(node.var, _subst(node.body, x, t, t_free))
    if isinstance(node, Assign):
        if node.target == x:
            if isinstance(t, Var):
                return Assign(t.var, _subst(node.expr, x, t, t_free))
            raise SubstitutionError(
                f"cannot substitute a compound term for assignment target {x.name}"
            )
        return Assign(node.target, _subst(node.expr, x, t, t_free))
    if isinstance(node, BinTerm):
        return BinTerm(node.op, _subst(node.left, x, t, t_free), _subst(node.right, x, t, t_free))
    if isinstance(node, NotTerm):
        return NotTerm(_subst(node.arg, x, t, t_free))
    if isinstance(node, BoolAtom):
        return BoolAtom(_subst(node.term, x, t, t_free))
    if isinstance(node, Eq):
        return Eq(_subst(node.left, x, t, t_free), _subst(node.right, x, t, t_free))
    if isinstance(node, Lt):
        return Lt(_subst(node.left, x, t, t_free), _subst(node.right, x, t, t_free))
    if isinstance(node, And):
        return And(_subst(node.left, x, t, t_free), _subst(node.right, x, t, t_free))
    if isinstance(node, Not):
        return Not(_subst(node.arg, x, t, t_free))
    if isinstance(node, Knows):
        return Knows(node.agent, _subst(node.body, x, t, t_free))
    if isinstance(node, Announce):
        return Announce(_subst(node.ann, x, t, t_free), _subst(node.body, x, t, t_free))
    if isinstance(node, DiamondAnnounce):
        return DiamondAnnounce(_subst(node.ann, x, t, t_free), _subst(node.body, x, t, t_free))
    if isinstance(node, After):
        return After(_subst(node.prog, x, t, t_free), _subst(node.body, x, t, t_free))
    if isinstance(node, Test):
        return Test(_subst(node.cond, x, t, t_free))
    if isinstance(node, Seq):
        return Seq(_subst(node.first, x, t, t_free), _subst(node.second, x, t, t_free))
    if isinstance(node, Choice):
        return Choice(_subst(node.left, x, t, t_free), _subst(node.right, x, t, t_free))
    raise TypeError(f"not a syntax node: {node!r}")


# ---------------------------------------------------------------------------
# Sugar expansion


def expand_sugar(f: Formula, avoid: frozenset[str] = frozenset()) -> Formula:
    """Rewrite know-value operators into the core grammar.

    Kv[a] x becomes exists v . K[a](v = x) with v observable by exactly
    {a}; the existential itself normalizes to not-forall-not.  Idempotent.
    """
    supply = NameSupply(avoid | all_names(f))
    return _expand(f, supply)


def _expand(node: Node, supply: NameSupply) -> Node:
    if isinstance(node, KnowsVal):
        v = supply.fresh("v", frozenset((node.agent,)), node.var.sort)
        return Exists(v, Knows(node.agent, Eq(Var(v), Var(node.var))))
    if isinstance(node, (IntLit, BoolLit, Var)):
        return node
    if isinstance(node, BinTerm):
        return node
    if isinstance(node, NotTerm):
        return node
    if isinstance(node, (BoolAtom, Eq, Lt)):
        return node
    if isinstance(node, And):
        return And(_expand(node.left, supply), _expand(node.right, supply))
    if isinstance(node, Not):
        return Not(_expand(node.arg, supply))
    if isinstance(node, Forall):
        return Forall(node.var, _expand(node.body, supply))
    if isinstance(node, Knows):
        return Knows(node.agent, _expand(node.body, supply))
    if isinstance(node, Announce):
        return Announce(_expand(node.ann, supply), _expand(node.body, supply))
    if isinstance(node, DiamondAnnounce):
        return DiamondAnnounce(_expand(node.ann, supply), _expand(node.body, supply))
    if isinstance(node, After):
        return After(_expand(node.prog, supply), _expand(node.body, supply))
    if isinstance(node, Test):
        return Test(_expand(node.cond, supply))
    if isinstance(node, Assign):
        return node
    if isinstance(node, NewVar):
        return NewVar(node.var, _expand(node.body, supply))
    if isinstance(node, Seq):
        return Seq(_expand(node.first, supply), _expand(node.second, supply))
    if isinstance(node, Choice):
        return Choice(_expand(node.left, supply), _expand(node.right, supply))
    raise TypeError(f"not a syntax node: {node!r}")


# ---------------------------------------------------------------------------
# Optional simplifier (off by default; verification output stays literal)


def simplify(f: Formula) -> Formula:
    if isinstance(f, Not):
        arg = simplify(f.arg)
        if isinstance(arg, Not):
            return arg.arg
        if arg == TRUE:
            return FALSE
        if arg == FALSE:
            return TRUE
        return Not(arg)
    if isinstance(f, And):
        left, right = simplify(f.left), simplify(f.right)
        if left == TRUE:
            return right
        if right == TRUE:
            return left
        if left == FALSE or right == FALSE:
            return FALSE
        return And(left, right)
    if isinstance(f, Forall):
        body = simplify(f.body)
        if body in (TRUE, FALSE):
            return body
        return Forall(f.var, body)
    if isinstance(f, Knows):
        return Knows(f.agent, simplify(f.body))
    if isinstance(f, Announce):
        return Announce(simplify(f.ann), simplify(f.body))
    if isinstance(f, DiamondAnnounce):
        return DiamondAnnounce(simplify(f.ann), simplify(f.body))
    if isinstance(f, After):
        return After(f.prog, simplify(f.body))
    return f
