"""Bounded explicit-state reference semantics.

Enumerates all valuations of the declared variables over a finite domain
and evaluates formulas and programs directly against their defining
clauses: per-agent indistinguishability from observer sets, submodel
restriction for announcements, model augmentation for quantifiers, and
the relational program semantics (on single states and on whole models).

This is the ground-truth engine for property tests and small puzzles;
it deliberately does not scale past the configured state cap.  Note the
quantification/enumeration range is a bound, not a type: a program may
compute integer values outside it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional

from .parser import SAT, VALID, DomainBound, Query, VerificationTask
from .syntax import (
    After,
    And,
    Announce,
    Assign,
    BinTerm,
    BoolAtom,
    BoolLit,
    Choice,
    ChoiceValue,
    DiamondAnnounce,
    Eq,
    EpiscopeError,
    Exists,
    Forall,
    Formula,
    IntLit,
    Knows,
    KnowsVal,
    Lt,
    NameSupply,
    NewVar,
    Not,
    NotTerm,
    ObsVar,
    Program,
    Seq,
    Sort,
    Term,
    Test,
    Value,
    Var,
    all_names,
    children,
    expand_sugar,
    substitute,
)

DEFAULT_CAP = 2**20


class OracleError(EpiscopeError):
    pass


class CapExceeded(OracleError):
    def __init__(self, count: int, cap: int) -> None:
        super().__init__(f"state count {count} exceeds the cap of {cap}")
        self.count = count
        self.cap = cap


class State:
    """An immutable valuation of variables."""

    __slots__ = ("_vals", "_hash")

    def __init__(self, vals: dict[ObsVar, Value]) -> None:
        self._vals = vals
        self._hash: Optional[int] = None

    def __getitem__(self, var: ObsVar) -> Value:
        try:
            return self._vals[var]
        except KeyError:
            raise OracleError(f"variable {var.name} is unbound in this state") from None

    def get(self, var: ObsVar, default=None):
        return self._vals.get(var, default)

    def set(self, var: ObsVar, value: Value) -> "State":
        vals = dict(self._vals)
        vals[var] = value
        return State(vals)

    def vars(self) -> Iterable[ObsVar]:
        return self._vals.keys()

    def items(self):
        return self._vals.items()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, State) and self._vals == other._vals

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._vals.items()))
        return self._hash

    def pretty(self, order: Optional[Iterable[ObsVar]] = None) -> str:
        if order is None:
            order = sorted(self._vals, key=lambda v: v.name)
        parts = []
        for v in order:
            if v in self._vals:
                val = self._vals[v]
                parts.append(f"{v.name}={str(val).lower()}")
        return " ".join(parts)

    def __repr__(self) -> str:
        return f"State({self.pretty()})"


class EpiModel:
    """A set of states; indistinguishability is derived from observer sets.

    Iteration order is deterministic (insertion order, duplicates
    dropped); equality and hashing are set-like.
    """

    __slots__ = ("states", "_set")

    def __init__(self, states: Iterable[State]) -> None:
        seen: dict[State, None] = {}
        for s in states:
            if s not in seen:
                seen[s] = None
        self.states: tuple[State, ...] = tuple(seen)
        self._set = frozenset(self.states)

    def __contains__(self, s: State) -> bool:
        return s in self._set

    def __iter__(self):
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EpiModel) and self._set == other._set

    def __hash__(self) -> int:
        return hash(self._set)

    def dom_names(self) -> frozenset[str]:
        out: set[str] = set()
        for s in self.states:
            out.update(v.name for v in s.vars())
        return frozenset(out)


def observable_slice(s: State, agent: str) -> frozenset:
    return frozenset((v, val) for v, val in s.items() if v.observed_by(agent))


def indistinguishable(s: State, t: State, agent: str) -> bool:
    return observable_slice(s, agent) == observable_slice(t, agent)


# Annotated programs: every assignment carries the variable its old value
# is saved into, every choice carries its tag variable, so the state-level
# and model-level semantics allocate identical fresh names.


@dataclass(frozen=True)
class _ATest:
    cond: Formula


@dataclass(frozen=True)
class _AAssign:
    target: ObsVar
    expr: Term
    saved: ObsVar


@dataclass(frozen=True)
class _ANew:
    var: ObsVar
    body: "_AProg"


@dataclass(frozen=True)
class _ASeq:
    first: "_AProg"
    second: "_AProg"


@dataclass(frozen=True)
class _AChoice:
    left: "_AProg"
    right: "_AProg"
    tag: ObsVar


_AProg = object  # union of the five classes above


class Evaluator:
    """Evaluation session holding the domain bounds and per-model caches."""

    def __init__(
        self,
        agents: Iterable[str],
        bound: Optional[DomainBound] = None,
        cap: int = DEFAULT_CAP,
    ) -> None:
        self.agents = tuple(agents)
        self.bound = bound
        self.cap = cap
        self._partitions: dict = {}
        self._submodels: dict = {}
        self._augmented: dict = {}
        self._model_sem: dict = {}
        self._rel_sem: dict = {}
        self._truth: dict = {}
        self._annotations: dict = {}
        self._kv_expansions: dict = {}
        self._pinned: list = []  # keeps id()-keyed cache entries alive

    @classmethod
    def for_task(cls, task: VerificationTask, cap: int = DEFAULT_CAP) -> "Evaluator":
        return cls(task.agents, task.bound, cap)

    # -- domains

    def domain(self, sort: Sort) -> tuple[Value, ...]:
        if sort is Sort.BOOL:
            return (False, True)
        if sort is Sort.CHOICE:
            return (ChoiceValue.L, ChoiceValue.R)
        if self.bound is None:
            raise OracleError(
                "this task uses Int variables: declare a bound (e.g. 'bound 0..9') "
                "or pass --bound to enumerate them"
            )
        return tuple(self.bound.values())

    def universe(self, task: VerificationTask) -> EpiModel:
        count = 1
        domains = []
        for v in task.vars:
            d = self.domain(v.sort)
            domains.append(d)
            count *= len(d)
            if count > self.cap:
                raise CapExceeded(count, self.cap)
        states = [
            State(dict(zip(task.vars, combo)))
            for combo in itertools.product(*domains)
        ]
        return EpiModel(states)

    def check_constants(self, task: VerificationTask) -> None:
        if self.bound is None:
            return
        lo, hi = self.bound.lo, self.bound.hi
        def walk(node) -> None:
            if isinstance(node, IntLit) and not lo <= node.value <= hi:
                raise OracleError(f"constant {node.value} lies outside the bound {self.bound}")
            for c in children(node):
                walk(c)
        walk(task.phi)
        for q in task.queries:
            walk(q.formula)

    # -- terms and first-order formulas

    def eval_term(self, s: State, t: Term) -> Value:
        if isinstance(t, IntLit):
            return t.value
        if isinstance(t, BoolLit):
            return t.value
        if isinstance(t, Var):
            return s[t.var]
        if isinstance(t, NotTerm):
            return not self.eval_term(s, t.arg)
        if isinstance(t, BinTerm):
            a = self.eval_term(s, t.left)
            b = self.eval_term(s, t.right)
            op = t.op
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "mod":
                if b == 0:
                    raise OracleError("mod by zero")
                return a % abs(b)
            if op == "and":
                return a and b
            if op == "or":
                return a or b
            if op == "xor":
                return a != b
        raise OracleError(f"cannot evaluate term {t!r}")

    def eval_fo(self, s: State, f: Formula) -> bool:
        """First-order truth at a state; quantifiers enumerate the bound."""
        if isinstance(f, BoolAtom):
            return bool(self.eval_term(s, f.term))
        if isinstance(f, Eq):
            return self.eval_term(s, f.left) == self.eval_term(s, f.right)
        if isinstance(f, Lt):
            return self.eval_term(s, f.left) < self.eval_term(s, f.right)
        if isinstance(f, And):
            return self.eval_fo(s, f.left) and self.eval_fo(s, f.right)
        if isinstance(f, Not):
            return not self.eval_fo(s, f.arg)
        if isinstance(f, Forall):
            return all(
                self.eval_fo(s.set(f.var, c), f.body) for c in self.domain(f.var.sort)
            )
        raise OracleError(f"not a first-order formula: {type(f).__name__}")

    # -- epistemic models

    def partition(self, model: EpiModel, agent: str) -> dict:
        key = (id(model), agent)
        part = self._partitions.get(key)
        if part is None:
            part = {}
            for s in model:
                part.setdefault(observable_slice(s, agent), []).append(s)
            self._partitions[key] = part
            self._pinned.append(model)
        return part

    def submodel(self, model: EpiModel, ann: Formula) -> EpiModel:
        key = (id(model), id(ann))
        sub = self._submodels.get(key)
        if sub is None:
            sub = EpiModel(s for s in model if self.eval_epi(model, s, ann))
            self._submodels[key] = sub
            self._pinned.append((model, ann))
        return sub

    def augment(self, model: EpiModel, var: ObsVar) -> EpiModel:
        """All states of the model extended with every value of var."""
        key = (id(model), var)
        aug = self._augmented.get(key)
        if aug is None:
            dom = self.domain(var.sort)
            if len(model) * len(dom) > self.cap:
                raise CapExceeded(len(model) * len(dom), self.cap)
            aug = EpiModel(s.set(var, d) for d in dom for s in model)
            self._augmented[key] = aug
            self._pinned.append(model)
        return aug

    # -- epistemic truth

    def eval_epi(self, model: EpiModel, s: State, f: Formula) -> bool:
        if s not in model:
            raise OracleError("state is not part of the model")
        key = (id(model), id(f), s)
        hit = self._truth.get(key)
        if hit is None:
            hit = self._eval_epi(model, s, f)
            self._truth[key] = hit
            self._pinned.append((model, f))
        return hit

    def _eval_epi(self, model: EpiModel, s: State, f: Formula) -> bool:
        if isinstance(f, (BoolAtom, Eq, Lt)):
            return self.eval_fo(s, f)
        if isinstance(f, And):
            return self.eval_epi(model, s, f.left) and self.eval_epi(model, s, f.right)
        if isinstance(f, Not):
            return not self.eval_epi(model, s, f.arg)
        if isinstance(f, Knows):
            cls = self.partition(model, f.agent)[observable_slice(s, f.agent)]
            return all(self.eval_epi(model, t, f.body) for t in cls)
        if isinstance(f, KnowsVal):
            return self.eval_epi(model, s, self._expand_kv(model, f))
        if isinstance(f, Announce):
            if not self.eval_epi(model, s, f.ann):
                return True
            return self.eval_epi(self.submodel(model, f.ann), s, f.body)
        if isinstance(f, DiamondAnnounce):
            if not self.eval_epi(model, s, f.ann):
                return False
            return self.eval_epi(self.submodel(model, f.ann), s, f.body)
        if isinstance(f, Forall):
            if f.var.name in model.dom_names():
                raise OracleError(
                    f"quantified variable {f.var.name} already occurs in the model"
                )
            aug = self.augment(model, f.var)
            return all(
                self.eval_epi(aug, s.set(f.var, c), f.body)
                for c in self.domain(f.var.sort)
            )
        if isinstance(f, After):
            prog = self._annotate(f.prog, model)
            after_model = self._run_model(prog, model)
            return all(
                self.eval_epi(after_model, t, f.body)
                for t in self._run_state(prog, model, s)
            )
        raise OracleError(f"cannot evaluate formula node {type(f).__name__}")

    def _expand_kv(self, model: EpiModel, f: KnowsVal) -> Formula:
        key = (model.dom_names(), f)
        out = self._kv_expansions.get(key)
        if out is None:
            supply = NameSupply(model.dom_names() | {f.var.name})
            v = supply.fresh("v", frozenset((f.agent,)), f.var.sort)
            out = Exists(v, Knows(f.agent, Eq(Var(v), Var(f.var))))
            self._kv_expansions[key] = out
        return out

    # -- program semantics

    def _annotate(self, prog: Program, model: EpiModel) -> _AProg:
        dom = model.dom_names()
        key = (prog, dom)
        out = self._annotations.get(key)
        if out is None:
            supply = NameSupply(dom | all_names(prog))
            path: set[str] = set(dom)
            out = self._annotate_walk(prog, supply, path)
            self._annotations[key] = out
        return out

    def _annotate_walk(self, prog: Program, supply: NameSupply, path: set[str]) -> _AProg:
        if isinstance(prog, Test):
            return _ATest(prog.cond)
        if isinstance(prog, Assign):
            saved = supply.fresh("k", prog.target.observers, prog.target.sort)
            path.add(saved.name)
            return _AAssign(prog.target, prog.expr, saved)
        if isinstance(prog, NewVar):
            var, body = prog.var, prog.body
            if var.name in path:
                renamed = supply.fresh(var.name, var.observers, var.sort)
                body = substitute(body, var, Var(renamed))
                var = renamed
            path.add(var.name)
            return _ANew(var, self._annotate_walk(body, supply, path))
        if isinstance(prog, Seq):
            first = self._annotate_walk(prog.first, supply, path)
            return _ASeq(first, self._annotate_walk(prog.second, supply, path))
        if isinstance(prog, Choice):
            tag = supply.fresh("c", frozenset(self.agents), Sort.CHOICE)
            path.add(tag.name)
            left = self._annotate_walk(prog.left, supply, path)
            return _AChoice(left, self._annotate_walk(prog.right, supply, path), tag)
        raise OracleError(f"not a program node: {prog!r}")

    def _run_state(self, prog: _AProg, model: EpiModel, s: State) -> tuple[State, ...]:
        key = (id(model), id(prog), s)
        out = self._rel_sem.get(key)
        if out is not None:
            return out
        if isinstance(prog, _ATest):
            out = (s,) if self.eval_epi(model, s, prog.cond) else ()
        elif isinstance(prog, _AAssign):
            out = (s.set(prog.saved, s[prog.target]).set(
                prog.target, self.eval_term(s, prog.expr)),)
        elif isinstance(prog, _ANew):
            aug = self.augment(model, prog.var)
            acc: list[State] = []
            for d in self.domain(prog.var.sort):
                acc.extend(self._run_state(prog.body, aug, s.set(prog.var, d)))
            out = tuple(acc)
        elif isinstance(prog, _ASeq):
            mid_model = self._run_model(prog.first, model)
            acc = []
            for t in self._run_state(prog.first, model, s):
                acc.extend(self._run_state(prog.second, mid_model, t))
            out = tuple(acc)
        elif isinstance(prog, _AChoice):
            out = tuple(
                t.set(prog.tag, ChoiceValue.L)
                for t in self._run_state(prog.left, model, s)
            ) + tuple(
                t.set(prog.tag, ChoiceValue.R)
                for t in self._run_state(prog.right, model, s)
            )
        else:
            raise OracleError(f"not an annotated program: {prog!r}")
        self._rel_sem[key] = out
        self._pinned.append((model, prog))
        return out

    def _run_model(self, prog: _AProg, model: EpiModel) -> EpiModel:
        key = (id(model), id(prog))
        out = self._model_sem.get(key)
        if out is not None:
            return out
        if isinstance(prog, _ATest):
            out = self.submodel(model, prog.cond)
        elif isinstance(prog, _AAssign):
            out = EpiModel(
                s.set(prog.saved, s[prog.target]).set(
                    prog.target, self.eval_term(s, prog.expr))
                for s in model
            )
        elif isinstance(prog, _ANew):
            out = self._run_model(prog.body, self.augment(model, prog.var))
        elif isinstance(prog, _ASeq):
            out = self._run_model(prog.second, self._run_model(prog.first, model))
        elif isinstance(prog, _AChoice):
            out = EpiModel(
                tuple(
                    s.set(prog.tag, ChoiceValue.L)
                    for s in self._run_model(prog.left, model)
                )
                + tuple(
                    s.set(prog.tag, ChoiceValue.R)
                    for s in self._run_model(prog.right, model)
                )
            )
        else:
            raise OracleError(f"not an annotated program: {prog!r}")
        self._model_sem[key] = out
        self._pinned.append((model, prog))
        return out

    # public program semantics (fresh names shared between the two views)

    def rel_sem(self, model: EpiModel, prog: Program, s: State) -> frozenset[State]:
        if s not in model:
            raise OracleError("state is not part of the model")
        return frozenset(self._run_state(self._annotate(prog, model), model, s))

    def model_sem(self, model: EpiModel, prog: Program) -> EpiModel:
        return self._run_model(self._annotate(prog, model), model)


# ---------------------------------------------------------------------------
# Task-level entry points


def initial_model(task: VerificationTask, ev: Evaluator) -> EpiModel:
    """All states of the universe satisfying the initial condition."""
    return EpiModel(s for s in ev.universe(task) if ev.eval_fo(s, task.phi))


def prepare_query(task: VerificationTask, f: Formula) -> Formula:
    avoid = {v.name for v in task.vars} | all_names(f)
    return expand_sugar(f, frozenset(avoid))


def check_valid(
    task: VerificationTask, f: Formula, ev: Optional[Evaluator] = None
) -> tuple[bool, Optional[State]]:
    """Truth of the query on every initial state; returns a countermodel if not."""
    ev = ev or Evaluator.for_task(task)
    ev.check_constants(task)
    w = initial_model(task, ev)
    alpha = prepare_query(task, f)
    for s in w:
        if not ev.eval_epi(w, s, alpha):
            return False, s
    return True, None


def solve_puzzle(
    task: VerificationTask, f: Formula, ev: Optional[Evaluator] = None
) -> list[State]:
    """Initial states at which the query holds (the puzzle's solutions)."""
    ev = ev or Evaluator.for_task(task)
    ev.check_constants(task)
    w = initial_model(task, ev)
    alpha = prepare_query(task, f)
    return [s for s in w if ev.eval_epi(w, s, alpha)]


def check_query(
    task: VerificationTask, query: Query, ev: Optional[Evaluator] = None
) -> tuple[str, Optional[State]]:
    """Oracle verdict for one query: status plus witness/countermodel."""
    ev = ev or Evaluator.for_task(task)
    if query.mode == VALID:
        ok, counter = check_valid(task, query.formula, ev)
        return ("valid", None) if ok else ("invalid", counter)
    assert query.mode == SAT
    hits = solve_puzzle(task, query.formula, ev)
    if hits:
        return "model", hits[0]
    return "no-model", None
