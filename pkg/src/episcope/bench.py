"""Benchmark generators: the dining cryptographers protocol and the
birthday puzzle, built programmatically so the instance size is a real
parameter.

Dining cryptographers: n agents around a table, each pair of neighbours
sharing a coin only they can see, each agent seeing whether they
themselves paid; the protocol announces the xor of everybody's
(paid xor left coin xor right coin).  Queries: after the protocol a
non-payer learns nothing about who paid (beta1), agent 0 can decode
whether anyone paid (beta2), agent 0 knows who paid (beta3, expected
invalid), and the before-run variant of beta2 (gamma).

Birthday puzzle: agent a hears the month, agent b the day, of one of ten
candidate dates; both speak truthfully about what they know and don't;
the sat-mode query pins down the single date consistent with the dialog.
"""

from __future__ import annotations

from pathlib import Path

from .parser import Query, SAT, VALID, VerificationTask, render_task, validate_task
from .syntax import (
    After,
    And,
    Assign,
    BinTerm,
    BoolAtom,
    DiamondAnnounce,
    Eq,
    Formula,
    Implies,
    IntLit,
    Knows,
    KnowsVal,
    Not,
    Or,
    Sort,
    Var,
    bin_chain,
    conj,
    disj,
    obsvar,
)

DC_QUERIES = ("beta1", "beta2", "beta3", "gamma")


def gen_dc(n: int, query: str) -> VerificationTask:
    """Dining cryptographers instance with one of the four queries."""
    if n < 3:
        raise ValueError("the protocol needs at least 3 cryptographers")
    if query not in DC_QUERIES:
        raise ValueError(f"unknown query {query!r}; pick one of {DC_QUERIES}")
    agents = tuple(f"A{i}" for i in range(n))
    everyone = frozenset(agents)
    x = obsvar("x", everyone, Sort.BOOL)
    paid = [obsvar(f"p{i}", frozenset({agents[i]}), Sort.BOOL) for i in range(n)]
    # coin i is shared by neighbours i and i+1 (mod n)
    coins = [
        obsvar(f"c{i}", frozenset({agents[i], agents[(i + 1) % n]}), Sort.BOOL)
        for i in range(n)
    ]

    at_most_one = conj(
        [
            Implies(
                BoolAtom(Var(paid[i])),
                conj([Not(BoolAtom(Var(paid[j]))) for j in range(n) if j != i]),
            )
            for i in range(n)
        ]
    )
    announced = bin_chain(
        "xor",
        [
            t
            for i in range(n)
            for t in (Var(paid[i]), Var(coins[(i - 1) % n]), Var(coins[i]))
        ],
    )
    protocol = Assign(x, announced)
    someone_paid = bin_chain("or", [Var(p) for p in paid])
    me = agents[0]

    formulas: dict[str, Formula] = {
        "beta1": After(
            protocol,
            Implies(
                Not(BoolAtom(Var(paid[0]))),
                _or2(
                    Knows(me, conj([Not(BoolAtom(Var(paid[i]))) for i in range(1, n)])),
                    conj([Not(Knows(me, BoolAtom(Var(paid[i])))) for i in range(1, n)]),
                ),
            ),
        ),
        "beta2": After(protocol, Knows(me, Eq(Var(x), someone_paid))),
        "beta3": After(protocol, Knows(me, BoolAtom(Var(paid[1])))),
        "gamma": Knows(me, After(protocol, Eq(Var(x), someone_paid))),
    }
    task = VerificationTask(
        agents=agents,
        vars=(x, *paid, *coins),
        bound=None,
        phi=at_most_one,
        queries=(Query(query, VALID, formulas[query]),),
    )
    validate_task(task)
    return task


def _or2(a: Formula, b: Formula) -> Formula:
    return Not(And(Not(a), Not(b)))


CHERYL_DATES = (
    (5, 15), (5, 16), (5, 19),
    (6, 17), (6, 18),
    (7, 14), (7, 16),
    (8, 14), (8, 15), (8, 17),
)


def gen_cheryl() -> VerificationTask:
    """The birthday puzzle as a sat-mode task over two integers."""
    a, b = "a", "b"
    month = obsvar("m", frozenset({a}), Sort.INT)
    day = obsvar("d", frozenset({b}), Sort.INT)
    candidates = disj(
        [
            And(Eq(Var(month), IntLit(mo)), Eq(Var(day), IntLit(da)))
            for mo, da in CHERYL_DATES
        ]
    )
    # a: "I don't know the date, but I know b doesn't know it either."
    first_statement = And(
        Not(KnowsVal(a, day)), Knows(a, Not(KnowsVal(b, month)))
    )
    # b: "I didn't know, but now I do."  Then a: "now I know too."
    dialogue = DiamondAnnounce(
        And(Not(KnowsVal(b, month)), DiamondAnnounce(first_statement, KnowsVal(b, month))),
        KnowsVal(a, day),
    )
    task = VerificationTask(
        agents=(a, b),
        vars=(month, day),
        bound=_cheryl_bound(),
        phi=candidates,
        queries=(Query("birthday", SAT, dialogue),),
    )
    validate_task(task)
    return task


def _cheryl_bound():
    from .parser import DomainBound

    months = [mo for mo, _ in CHERYL_DATES]
    days = [da for _, da in CHERYL_DATES]
    return DomainBound(min(months + days), max(months + days))


def write_epi(task: VerificationTask, path: Path) -> None:
    path.write_text(render_task(task))


def count_disjuncts(f: Formula) -> int:
    """Leaves of the normalized or-tree (1 if the formula is no disjunction)."""
    if isinstance(f, Not) and isinstance(f.arg, And):
        left, right = f.arg.left, f.arg.right
        if isinstance(left, Not) and isinstance(right, Not):
            return count_disjuncts(left.arg) + count_disjuncts(right.arg)
    return 1
