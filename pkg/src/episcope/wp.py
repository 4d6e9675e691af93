"""Weakest-precondition transformer over knowledge formulas.

Maps a program and a box-free post-formula to the weakest pre-formula,
one clause per program constructor; assignments save the overwritten
value in a fresh variable with the same observer set, so agents keep
perfect recall of everything they could see.  Output is returned
literally, with no logical simplification.
"""

from __future__ import annotations

from typing import Optional

from .syntax import (
    And,
    Announce,
    Assign,
    Choice,
    Eq,
    EpiscopeError,
    Forall,
    Formula,
    NameSupply,
    NewVar,
    ObsVar,
    Program,
    ScopeError,
    Seq,
    Test,
    Var,
    contains_box,
    free_vars,
    substitute,
)


class WpError(EpiscopeError):
    pass


def wp(
    prog: Program,
    post: Formula,
    supply: Optional[NameSupply] = None,
    program_vars: Optional[frozenset[ObsVar]] = None,
) -> Formula:
    """Weakest precondition of `prog` establishing `post`.

    `post` must not contain a program box (nested boxes are merged away
    by the translator before it calls here).  When `program_vars` is
    given, the free variables of `post` are checked against it.
    """
    if contains_box(post):
        raise WpError("the post-formula may not contain a program box")
    if program_vars is not None:
        extra = free_vars(post) - program_vars
        if extra:
            names = ", ".join(sorted(v.name for v in extra))
            raise WpError(f"post-formula has free variables outside the program's: {names}")
    if supply is None:
        supply = NameSupply.for_nodes(prog, post)
    return _wp(prog, post, supply)


def _wp(prog: Program, post: Formula, supply: NameSupply) -> Formula:
    if isinstance(prog, Seq):
        return _wp(prog.first, _wp(prog.second, post, supply), supply)
    if isinstance(prog, Choice):
        return And(_wp(prog.left, post, supply), _wp(prog.right, post, supply))
    if isinstance(prog, NewVar):
        if prog.var in free_vars(post):
            raise ScopeError(
                f"variable {prog.var.name} bound by 'new' occurs free in the post-formula"
            )
        return Forall(prog.var, _wp(prog.body, post, supply))
    if isinstance(prog, Test):
        return Announce(prog.cond, post)
    if isinstance(prog, Assign):
        saved = supply.fresh("k", prog.target.observers, prog.target.sort)
        renamed = substitute(post, prog.target, Var(saved))
        return Forall(saved, Announce(Eq(Var(saved), prog.expr), renamed))
    raise WpError(f"not a program node: {prog!r}")
