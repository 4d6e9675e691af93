"""Task files: parsing, rendering, and the VerificationTask container.

A task file (`.epi`, UTF-8, `#` line comments) declares agents and
observable variables, an optional integer range for the bounded
evaluator, an initial condition, and a list of queries:

    agents A, B
    var x : Bool obs {A, B}
    bound 0..9
    assume x = true
    check valid q1: K[A] x

Formula syntax.  `forall x : S obs {..} . a`, `exists ... . a`,
`[ann b] a`, `<ann b> a` and `[prog P] a` bind their whole right
operand; then `=>` (right-assoc), `|`, `&`, and tightest `!`, `K[A] a`,
`Kv[A] x`.  Atoms compare terms (`t = t`, `t < t`) or use a Bool term
directly.  Term operators: `or`, `xor`, `and`, `not` on Bool and
`+ - * mod` on Int.  Programs: `b ?` (test), `x := t`,
`new k : S obs {..} . P`, `P ; Q`, `P [] Q`; `;` binds tighter than `[]`.

`or`, `=>`, `exists` and `Kv` are accepted as input and normalized; the
renderer prints the canonical core, and parse(render(task)) is the
identity on well-formed tasks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .syntax import (
    FRESH_SEP,
    And,
    Announce,
    After,
    Assign,
    BinTerm,
    BoolAtom,
    BoolLit,
    Choice,
    DiamondAnnounce,
    Eq,
    EpiscopeError,
    Exists,
    Forall,
    Formula,
    Implies,
    IntLit,
    Knows,
    KnowsVal,
    Lt,
    NewVar,
    Not,
    NotTerm,
    ObsVar,
    Or,
    Program,
    Seq,
    Sort,
    SortError,
    Term,
    Test,
    TRUE,
    Var,
    agents_of,
    children,
    free_vars,
    is_fo,
)


class ParseError(EpiscopeError):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class TaskError(EpiscopeError):
    """Well-formedness violation in a programmatically built task."""


# ---------------------------------------------------------------------------
# Task container


@dataclass(frozen=True)
class DomainBound:
    """Inclusive integer interval enumerated for Int variables."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise TaskError(f"empty bound {self.lo}..{self.hi}")

    def values(self) -> range:
        return range(self.lo, self.hi + 1)

    def __str__(self) -> str:
        return f"{self.lo}..{self.hi}"


VALID = "valid"
SAT = "sat"


@dataclass(frozen=True)
class Query:
    name: str
    mode: str
    formula: Formula


@dataclass(frozen=True)
class VerificationTask:
    agents: tuple[str, ...]
    vars: tuple[ObsVar, ...]
    bound: Optional[DomainBound]
    phi: Formula
    queries: tuple[Query, ...]

    def var(self, name: str) -> ObsVar:
        for v in self.vars:
            if v.name == name:
                return v
        raise KeyError(name)


def validate_task(task: VerificationTask) -> None:
    if not task.agents:
        raise TaskError("a task needs at least one agent")
    if len(set(task.agents)) != len(task.agents):
        raise TaskError("duplicate agent name")
    names = [v.name for v in task.vars]
    if len(set(names)) != len(names):
        raise TaskError("duplicate variable name")
    agents = set(task.agents)
    for v in task.vars:
        if FRESH_SEP in v.name:
            raise TaskError(f"variable name {v.name!r} uses the reserved separator")
        if not v.observers <= agents:
            raise TaskError(f"variable {v.name} observed by undeclared agents")
        if v.sort is Sort.CHOICE:
            raise TaskError(f"variable {v.name}: choice tags cannot be declared")
    declared = set(task.vars)
    if not is_fo(task.phi):
        raise TaskError("initial condition must be first-order")
    if not free_vars(task.phi) <= declared:
        raise TaskError("initial condition mentions undeclared variables")
    _check_binders(task.phi, {v.name for v in task.vars})
    qnames = [q.name for q in task.queries]
    if len(set(qnames)) != len(qnames):
        raise TaskError("duplicate query name")
    for q in task.queries:
        if q.mode not in (VALID, SAT):
            raise TaskError(f"query {q.name}: unknown mode {q.mode!r}")
        if not agents_of(q.formula) <= agents:
            raise TaskError(f"query {q.name} mentions undeclared agents")
        if not free_vars(q.formula) <= declared:
            raise TaskError(f"query {q.name} has free variables outside the declarations")
        _check_binders(q.formula, {v.name for v in task.vars})


def _check_binders(node, taken: set[str]) -> None:
    if isinstance(node, (Forall, NewVar)):
        v = node.var
        if v.name in taken:
            raise TaskError(f"bound variable {v.name} shadows another variable")
        if v.sort is Sort.CHOICE:
            raise TaskError(f"bound variable {v.name} cannot have choice sort")
        _check_binders(node.body, taken | {v.name})
        return
    for c in children(node):
        _check_binders(c, taken)


# ---------------------------------------------------------------------------
# Lexer

KEYWORDS = {
    "agents", "var", "obs", "bound", "assume", "check", "valid", "sat",
    "Bool", "Int", "K", "Kv", "ann", "prog", "new", "forall", "exists",
    "true", "false", "not", "and", "or", "xor", "mod",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<int>[0-9]+)
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<sym>\[\]|=>|:=|\.\.|[(){}\[\],:.;?=<>!&|+\-*])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'int' | 'ident' | 'kw' | 'sym' | 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, bol = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - bol + 1)
        kind = m.lastgroup
        value = m.group()
        col = pos - bol + 1
        if kind == "nl":
            line += 1
            bol = m.end()
        elif kind == "int":
            tokens.append(Token("int", value, line, col))
        elif kind == "ident":
            tokens.append(Token("kw" if value in KEYWORDS else "ident", value, line, col))
        elif kind == "sym":
            tokens.append(Token("sym", value, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, len(text) - bol + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = tokenize(text)
        self.i = 0
        self.agents: list[str] = []
        self.vars: dict[str, ObsVar] = {}
        self.locals: dict[str, ObsVar] = {}
        self.bound: Optional[DomainBound] = None
        self.assumes: list[Formula] = []
        self.queries: list[Query] = []
        self.query_names: set[str] = set()

    # token plumbing

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at(self, kind: str, text: Optional[str] = None, ahead: int = 0) -> bool:
        tok = self.peek(ahead)
        return tok.kind == kind and (text is None or tok.text == text)

    def eat(self, kind: str, text: Optional[str] = None) -> Token:
        if not self.at(kind, text):
            got = self.peek()
            want = text or kind
            shown = got.text or "end of input"
            raise ParseError(f"expected {want!r}, found {shown!r}", got.line, got.col)
        return self.next()

    def fail(self, message: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(message, tok.line, tok.col)

    # declarations

    def parse_task(self) -> VerificationTask:
        while not self.at("eof"):
            tok = self.peek()
            if self.at("kw", "agents"):
                self.parse_agents()
            elif self.at("kw", "var"):
                self.parse_var()
            elif self.at("kw", "bound"):
                self.parse_bound()
            elif self.at("kw", "assume"):
                self.next()
                f = self.parse_formula()
                if not is_fo(f):
                    raise self.fail("assume takes a first-order formula", tok)
                self.assumes.append(f)
            elif self.at("kw", "check"):
                self.parse_check()
            else:
                raise self.fail(
                    f"expected a declaration, found {tok.text!r}" if tok.text
                    else "expected a declaration"
                )
        if not self.agents:
            raise self.fail("no agents declared")
        phi = TRUE
        for f in self.assumes:
            phi = f if phi == TRUE else And(phi, f)
        return VerificationTask(
            agents=tuple(self.agents),
            vars=tuple(self.vars.values()),
            bound=self.bound,
            phi=phi,
            queries=tuple(self.queries),
        )

    def parse_agents(self) -> None:
        self.eat("kw", "agents")
        while True:
            tok = self.eat("ident")
            if tok.text in self.agents:
                raise self.fail(f"duplicate agent {tok.text}", tok)
            self.agents.append(tok.text)
            if not self.at("sym", ","):
                break
            self.next()

    def parse_ident(self, what: str) -> Token:
        if self.at("ident"):
            return self.next()
        raise self.fail(f"expected {what}")

    def parse_var(self) -> None:
        self.eat("kw", "var")
        name = self.parse_ident("a variable name")
        if FRESH_SEP in name.text:
            raise self.fail(f"identifier {name.text!r} uses the reserved separator", name)
        if name.text in self.vars:
            raise self.fail(f"duplicate variable {name.text}", name)
        self.eat("sym", ":")
        sort = self.parse_sort()
        self.eat("kw", "obs")
        observers = self.parse_obs_set()
        self.vars[name.text] = ObsVar(name.text, observers, sort)

    def parse_sort(self) -> Sort:
        if self.at("kw", "Bool"):
            self.next()
            return Sort.BOOL
        if self.at("kw", "Int"):
            self.next()
            return Sort.INT
        raise self.fail("expected a sort (Bool or Int)")

    def parse_obs_set(self) -> frozenset[str]:
        self.eat("sym", "{")
        out: set[str] = set()
        while not self.at("sym", "}"):
            tok = self.eat("ident")
            if tok.text not in self.agents:
                raise self.fail(f"undeclared agent {tok.text}", tok)
            out.add(tok.text)
            if self.at("sym", ","):
                self.next()
            else:
                break
        self.eat("sym", "}")
        return frozenset(out)

    def parse_int(self) -> int:
        sign = 1
        if self.at("sym", "-"):
            self.next()
            sign = -1
        return sign * int(self.eat("int").text)

    def parse_bound(self) -> None:
        tok = self.eat("kw", "bound")
        if self.bound is not None:
            raise self.fail("bound declared twice", tok)
        lo = self.parse_int()
        self.eat("sym", "..")
        hi = self.parse_int()
        if lo > hi:
            raise self.fail(f"empty bound {lo}..{hi}", tok)
        self.bound = DomainBound(lo, hi)

    def parse_check(self) -> None:
        self.eat("kw", "check")
        if self.at("kw", "valid"):
            mode = VALID
        elif self.at("kw", "sat"):
            mode = SAT
        else:
            raise self.fail("expected 'valid' or 'sat' after check")
        self.next()
        if self.at("ident") and self.at("sym", ":", ahead=1):
            tok = self.next()
            name = tok.text
            if name in self.query_names:
                raise self.fail(f"duplicate query name {name}", tok)
            self.next()  # ':'
        else:
            k = len(self.queries) + 1
            name = f"q{k}"
            while name in self.query_names:
                k += 1
                name = f"q{k}"
            tok = self.peek()
        formula = self.parse_formula()
        self.query_names.add(name)
        self.queries.append(Query(name, mode, formula))

    # formulas

    def lookup(self, tok: Token) -> ObsVar:
        v = self.locals.get(tok.text) or self.vars.get(tok.text)
        if v is None:
            raise self.fail(f"undeclared identifier {tok.text}", tok)
        return v

    def parse_binder(self) -> ObsVar:
        name = self.parse_ident("a variable name")
        if FRESH_SEP in name.text:
            raise self.fail(f"identifier {name.text!r} uses the reserved separator", name)
        if name.text in self.locals or name.text in self.vars:
            raise self.fail(f"bound variable {name.text} shadows another variable", name)
        self.eat("sym", ":")
        sort = self.parse_sort()
        self.eat("kw", "obs")
        observers = self.parse_obs_set()
        return ObsVar(name.text, observers, sort)

    def with_local(self, v: ObsVar, parse_body):
        self.locals[v.name] = v
        try:
            return parse_body()
        finally:
            del self.locals[v.name]

    def parse_formula(self) -> Formula:
        if self.at("kw", "forall") or self.at("kw", "exists"):
            kw = self.next()
            v = self.parse_binder()
            self.eat("sym", ".")
            body = self.with_local(v, self.parse_formula)
            return Forall(v, body) if kw.text == "forall" else Exists(v, body)
        if self.at("sym", "[") and self.at("kw", "ann", ahead=1):
            self.next(), self.next()
            ann = self.parse_formula()
            self.eat("sym", "]")
            return Announce(ann, self.parse_formula())
        if self.at("sym", "<") and self.at("kw", "ann", ahead=1):
            self.next(), self.next()
            ann = self.parse_formula()
            self.eat("sym", ">")
            return DiamondAnnounce(ann, self.parse_formula())
        if self.at("sym", "[") and self.at("kw", "prog", ahead=1):
            tok = self.peek()
            self.next(), self.next()
            prog = self.parse_program()
            self.eat("sym", "]")
            return self.build(tok, After, prog, self.parse_formula())
        return self.parse_implies()

    def parse_implies(self) -> Formula:
        left = self.parse_or()
        if self.at("sym", "=>"):
            self.next()
            return Implies(left, self.parse_implies())
        return left

    def parse_or(self) -> Formula:
        f = self.parse_and()
        while self.at("sym", "|"):
            self.next()
            f = Or(f, self.parse_and())
        return f

    def parse_and(self) -> Formula:
        f = self.parse_unary()
        while self.at("sym", "&"):
            self.next()
            f = And(f, self.parse_unary())
        return f

    def parse_unary(self) -> Formula:
        if self.at("sym", "!"):
            self.next()
            return Not(self.parse_unary())
        if self.at("kw", "K"):
            self.next()
            agent = self.parse_agent_ref()
            return Knows(agent, self.parse_unary())
        if self.at("kw", "Kv"):
            self.next()
            agent = self.parse_agent_ref()
            tok = self.parse_ident("a variable name")
            return KnowsVal(agent, self.lookup(tok))
        return self.parse_atom()

    def parse_agent_ref(self) -> str:
        self.eat("sym", "[")
        tok = self.eat("ident")
        if tok.text not in self.agents:
            raise self.fail(f"undeclared agent {tok.text}", tok)
        self.eat("sym", "]")
        return tok.text

    def parse_atom(self) -> Formula:
        tok = self.peek()
        if self.at("sym", "("):
            # either a parenthesized term or a parenthesized formula
            start = self.i
            try:
                term = self.parse_term()
            except ParseError:
                self.i = start
                self.next()
                f = self.parse_formula()
                self.eat("sym", ")")
                return f
            return self.finish_atom(tok, term)
        if (
            self.at("int")
            or self.at("ident")
            or self.at("kw", "true")
            or self.at("kw", "false")
            or self.at("kw", "not")
        ):
            return self.finish_atom(tok, self.parse_term())
        raise self.fail("expected a formula")

    def finish_atom(self, tok: Token, term: Term) -> Formula:
        if self.at("sym", "="):
            self.next()
            return self.build(tok, Eq, term, self.parse_term())
        if self.at("sym", "<"):
            self.next()
            return self.build(tok, Lt, term, self.parse_term())
        return self.build(tok, BoolAtom, term)

    def build(self, tok: Token, ctor, *args):
        try:
            return ctor(*args)
        except (SortError, EpiscopeError) as e:
            raise ParseError(str(e), tok.line, tok.col) from e

    # terms

    def parse_term(self) -> Term:
        return self.parse_term_or()

    def _term_binop(self, subparse, ops: tuple[str, ...], kind: str) -> Term:
        t = subparse()
        while self.at(kind) and self.peek().text in ops:
            tok = self.next()
            t = self.build(tok, BinTerm, tok.text, t, subparse())
        return t

    def parse_term_or(self) -> Term:
        return self._term_binop(self.parse_term_xor, ("or",), "kw")

    def parse_term_xor(self) -> Term:
        return self._term_binop(self.parse_term_and, ("xor",), "kw")

    def parse_term_and(self) -> Term:
        return self._term_binop(self.parse_term_not, ("and",), "kw")

    def parse_term_not(self) -> Term:
        if self.at("kw", "not"):
            tok = self.next()
            return self.build(tok, NotTerm, self.parse_term_not())
        return self.parse_term_add()

    def parse_term_add(self) -> Term:
        t = self.parse_term_mul()
        while self.at("sym", "+") or self.at("sym", "-"):
            tok = self.next()
            t = self.build(tok, BinTerm, tok.text, t, self.parse_term_mul())
        return t

    def parse_term_mul(self) -> Term:
        t = self.parse_term_prim()
        while self.at("sym", "*") or self.at("kw", "mod"):
            tok = self.next()
            t = self.build(tok, BinTerm, tok.text, t, self.parse_term_prim())
        return t

    def parse_term_prim(self) -> Term:
        if self.at("int"):
            return IntLit(int(self.next().text))
        if self.at("kw", "true"):
            self.next()
            return BoolLit(True)
        if self.at("kw", "false"):
            self.next()
            return BoolLit(False)
        if self.at("ident"):
            return Var(self.lookup(self.next()))
        if self.at("sym", "("):
            self.next()
            t = self.parse_term()
            self.eat("sym", ")")
            return t
        raise self.fail("expected a term")

    # programs

    def parse_program(self) -> Program:
        p = self.parse_program_seq()
        while self.at("sym", "[]"):
            self.next()
            p = Choice(p, self.parse_program_seq())
        return p

    def parse_program_seq(self) -> Program:
        p = self.parse_program_atom()
        while self.at("sym", ";"):
            self.next()
            p = Seq(p, self.parse_program_atom())
        return p

    def parse_program_atom(self) -> Program:
        if self.at("kw", "new"):
            self.next()
            v = self.parse_binder()
            self.eat("sym", ".")
            body = self.with_local(v, self.parse_program)
            return NewVar(v, body)
        if self.at("ident") and self.at("sym", ":=", ahead=1):
            tok = self.next()
            target = self.lookup(tok)
            self.next()  # ':='
            return self.build(tok, Assign, target, self.parse_term())
        if self.at("sym", "("):
            start = self.i
            self.next()
            try:
                p = self.parse_program()
                self.eat("sym", ")")
            except ParseError:
                self.i = start
                return self.parse_test()
            if self.at("sym", "?"):
                # it was a parenthesized test formula after all
                self.i = start
                return self.parse_test()
            return p
        return self.parse_test()

    def parse_test(self) -> Program:
        tok = self.peek()
        cond = self.parse_formula()
        self.eat("sym", "?")
        return self.build(tok, Test, cond)


def parse_task(text: str) -> VerificationTask:
    """Parse a task file; raises ParseError (with position) on any bad input."""
    try:
        parser = _Parser(text.lstrip("﻿"))
        task = parser.parse_task()
        validate_task(task)
    except RecursionError:
        raise ParseError("nesting too deep", 0, 0) from None
    except TaskError as e:
        raise ParseError(str(e), 0, 0) from e
    return task


def parse_formula(text: str, task: VerificationTask) -> Formula:
    """Parse a single formula in the context of a task's declarations."""
    parser = _Parser(text)
    parser.agents = list(task.agents)
    parser.vars = {v.name: v for v in task.vars}
    f = parser.parse_formula()
    parser.eat("eof")
    return f


# ---------------------------------------------------------------------------
# Rendering

_TERM_LEVELS = {"or": 1, "xor": 2, "and": 3, "+": 5, "-": 5, "*": 6, "mod": 6}
_NOT_LEVEL = 4
_PRIM_LEVEL = 7


def render_term(t: Term, level: int = 0) -> str:
    if isinstance(t, (IntLit, BoolLit, Var)):
        return str(t)
    if isinstance(t, NotTerm):
        text = f"not {render_term(t.arg, _NOT_LEVEL)}"
        return f"({text})" if level > _NOT_LEVEL else text
    if isinstance(t, BinTerm):
        mine = _TERM_LEVELS[t.op]
        text = f"{render_term(t.left, mine)} {t.op} {render_term(t.right, mine + 1)}"
        return f"({text})" if level > mine else text
    raise TypeError(f"not a term: {t!r}")


def _render_obs(observers: frozenset[str]) -> str:
    return "{" + ", ".join(sorted(observers)) + "}"


def _render_binder(v: ObsVar) -> str:
    return f"{v.name} : {v.sort} obs {_render_obs(v.observers)}"


# formula levels: 0 loose prefix, 2 and, 3 unary, 4 atom
_F_AND, _F_UNARY, _F_ATOM = 2, 3, 4


def render_formula(f: Formula, level: int = 0) -> str:
    def wrap(text: str, mine: int) -> str:
        return f"({text})" if level > mine else text

    if isinstance(f, BoolAtom):
        return wrap(render_term(f.term), _F_ATOM)
    if isinstance(f, Eq):
        return wrap(f"{render_term(f.left)} = {render_term(f.right)}", _F_ATOM)
    if isinstance(f, Lt):
        return wrap(f"{render_term(f.left)} < {render_term(f.right)}", _F_ATOM)
    if isinstance(f, And):
        text = f"{render_formula(f.left, _F_AND)} & {render_formula(f.right, _F_AND + 1)}"
        return wrap(text, _F_AND)
    if isinstance(f, Not):
        return wrap(f"!{render_formula(f.arg, _F_UNARY)}", _F_UNARY)
    if isinstance(f, Knows):
        return wrap(f"K[{f.agent}] {render_formula(f.body, _F_UNARY)}", _F_UNARY)
    if isinstance(f, KnowsVal):
        return wrap(f"Kv[{f.agent}] {f.var.name}", _F_UNARY)
    if isinstance(f, Forall):
        return wrap(f"forall {_render_binder(f.var)} . {render_formula(f.body)}", 0)
    if isinstance(f, Announce):
        return wrap(f"[ann {render_formula(f.ann)}] {render_formula(f.body)}", 0)
    if isinstance(f, DiamondAnnounce):
        return wrap(f"<ann {render_formula(f.ann)}> {render_formula(f.body)}", 0)
    if isinstance(f, After):
        return wrap(f"[prog {render_program(f.prog)}] {render_formula(f.body)}", 0)
    raise TypeError(f"not a formula: {f!r}")


# program levels: 0 choice, 1 seq, 2 atom
def render_program(p: Program, level: int = 0) -> str:
    def wrap(text: str, mine: int) -> str:
        return f"({text})" if level > mine else text

    if isinstance(p, Choice):
        return wrap(f"{render_program(p.left, 0)} [] {render_program(p.right, 1)}", 0)
    if isinstance(p, Seq):
        return wrap(f"{render_program(p.first, 1)} ; {render_program(p.second, 2)}", 1)
    if isinstance(p, NewVar):
        return wrap(f"new {_render_binder(p.var)} . {render_program(p.body)}", 0)
    if isinstance(p, Assign):
        return f"{p.target.name} := {render_term(p.expr)}"
    if isinstance(p, Test):
        return f"{render_formula(p.cond, 1)} ?"
    raise TypeError(f"not a program: {p!r}")


def render_task(task: VerificationTask) -> str:
    lines = ["agents " + ", ".join(task.agents)]
    for v in task.vars:
        lines.append(f"var {v.name} : {v.sort} obs {_render_obs(v.observers)}")
    if task.bound is not None:
        lines.append(f"bound {task.bound}")
    lines.append(f"assume {render_formula(task.phi)}")
    for q in task.queries:
        lines.append(f"check {q.mode} {q.name}: {render_formula(q.formula)}")
    return "\n".join(lines) + "\n"
