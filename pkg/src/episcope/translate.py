"""Translation of knowledge queries into plain first-order formulas.

Knowledge of an agent becomes universal quantification over the
variables the agent cannot observe, guarded by the context formula;
announcements thread a grown context; program boxes go through the
weakest-precondition transformer.  The result contains no knowledge,
announcement or program operators and can be handed to an SMT solver:
a query is valid on the initial states iff `phi and not tau(phi, query)`
is unsatisfiable, and a state witnessing `phi and tau(phi, query)`
solves a satisfiability query.
"""

from __future__ import annotations

from .parser import Query, SAT, VALID, VerificationTask
from .syntax import (
    After,
    And,
    Announce,
    BoolAtom,
    DiamondAnnounce,
    Eq,
    EpiscopeError,
    Forall,
    Formula,
    Implies,
    Knows,
    KnowsVal,
    Lt,
    NameSupply,
    Not,
    Seq,
    all_names,
    expand_sugar,
    free_vars,
    is_fo,
)
from .wp import wp


class TranslateError(EpiscopeError):
    pass


def merge_boxes(f: Formula) -> Formula:
    """Rewrite directly nested program boxes into one sequential box."""
    if isinstance(f, After):
        body = merge_boxes(f.body)
        if isinstance(body, After):
            return After(Seq(f.prog, body.prog), body.body)
        return After(f.prog, body)
    if isinstance(f, And):
        return And(merge_boxes(f.left), merge_boxes(f.right))
    if isinstance(f, Not):
        return Not(merge_boxes(f.arg))
    if isinstance(f, Forall):
        return Forall(f.var, merge_boxes(f.body))
    if isinstance(f, Knows):
        return Knows(f.agent, merge_boxes(f.body))
    if isinstance(f, Announce):
        return Announce(merge_boxes(f.ann), merge_boxes(f.body))
    if isinstance(f, DiamondAnnounce):
        return DiamondAnnounce(merge_boxes(f.ann), merge_boxes(f.body))
    return f


def prepare(f: Formula, avoid: frozenset[str] = frozenset()) -> Formula:
    """Expand sugar and merge nested boxes; run before translating."""
    return merge_boxes(expand_sugar(f, avoid))


def tau(phi: Formula, alpha: Formula) -> Formula:
    """First-order translation of `alpha` under the context formula `phi`.

    `alpha` must be sugar-free (see `prepare`); `phi` must be first-order.
    """
    if not is_fo(phi):
        raise TranslateError("the context formula must be first-order")
    out = _tau(phi, alpha)
    assert is_fo(out), "translation produced a non-first-order formula"
    return out


def _tau(phi: Formula, alpha: Formula) -> Formula:
    if isinstance(alpha, (BoolAtom, Eq, Lt)):
        return alpha
    if isinstance(alpha, Not):
        return Not(_tau(phi, alpha.arg))
    if isinstance(alpha, And):
        return And(_tau(phi, alpha.left), _tau(phi, alpha.right))
    if isinstance(alpha, Knows):
        hidden = sorted(
            (
                v
                for v in free_vars(alpha.body) | free_vars(phi)
                if not v.observed_by(alpha.agent)
            ),
            key=lambda v: v.name,
        )
        out = Implies(phi, _tau(phi, alpha.body))
        for v in reversed(hidden):
            out = Forall(v, out)
        return out
    if isinstance(alpha, Announce):
        heard = _tau(phi, alpha.ann)
        return Implies(heard, _tau(And(phi, heard), alpha.body))
    if isinstance(alpha, DiamondAnnounce):
        heard = _tau(phi, alpha.ann)
        return And(heard, _tau(And(phi, heard), alpha.body))
    if isinstance(alpha, After):
        supply = NameSupply.for_nodes(phi, alpha.prog, alpha.body)
        return _tau(phi, wp(alpha.prog, alpha.body, supply))
    if isinstance(alpha, Forall):
        return Forall(alpha.var, _tau(phi, alpha.body))
    if isinstance(alpha, KnowsVal):
        raise TranslateError("unexpanded know-value operator: call prepare() first")
    raise TranslateError(f"cannot translate formula node {type(alpha).__name__}")


def _prepared_query(task: VerificationTask, alpha: Formula) -> Formula:
    avoid = frozenset(v.name for v in task.vars) | all_names(alpha) | all_names(task.phi)
    return prepare(alpha, avoid)


def validity_goal(task: VerificationTask, alpha: Formula) -> Formula:
    """Unsatisfiable iff `alpha` holds at every initial state."""
    return And(task.phi, Not(tau(task.phi, _prepared_query(task, alpha))))


def satisfiability_goal(task: VerificationTask, alpha: Formula) -> Formula:
    """Any model is an initial state at which `alpha` holds."""
    return And(task.phi, tau(task.phi, _prepared_query(task, alpha)))


def goal_for(task: VerificationTask, query: Query) -> Formula:
    if query.mode == VALID:
        return validity_goal(task, query.formula)
    assert query.mode == SAT
    return satisfiability_goal(task, query.formula)
