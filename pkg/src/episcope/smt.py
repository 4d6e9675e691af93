"""SMT-LIB 2 serialization and the external solver driver.

Goals are emitted as deterministic SMT-LIB 2 text and handed to a solver
subprocess invoked with a single file argument; `sat`/`unsat`/`unknown`
and any model are read back from its standard output and mapped into the
task's vocabulary.

Solver discovery order: the explicit `--solver` flag, the
EPISCOPE_SOLVER environment variable, `z3` on PATH, `cvc5` on PATH, and
finally the bundled WebAssembly Z3 shim (requires node and the
`z3-solver` npm package).
"""

from __future__ import annotations

import os
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .parser import SAT, VALID, VerificationTask
from .syntax import (
    And,
    BinTerm,
    BoolAtom,
    BoolLit,
    ChoiceValue,
    Eq,
    EpiscopeError,
    Forall,
    Formula,
    IntLit,
    Lt,
    Not,
    NotTerm,
    ObsVar,
    Sort,
    Term,
    Value,
    Var,
    free_vars,
    is_fo,
    node_count,
)

CHOICE_SORT = "Choice"
CHOICE_CONSTS = {ChoiceValue.L: "choice_l", ChoiceValue.R: "choice_r"}


class SmtError(EpiscopeError):
    pass


# ---------------------------------------------------------------------------
# Emission


def _smt_sort(sort: Sort) -> str:
    if sort is Sort.BOOL:
        return "Bool"
    if sort is Sort.INT:
        return "Int"
    return CHOICE_SORT


def _emit_term(t: Term, out: list[str]) -> None:
    if isinstance(t, IntLit):
        out.append(f"(- {-t.value})" if t.value < 0 else str(t.value))
    elif isinstance(t, BoolLit):
        out.append("true" if t.value else "false")
    elif isinstance(t, Var):
        out.append(t.var.name)
    elif isinstance(t, NotTerm):
        out.append("(not ")
        _emit_term(t.arg, out)
        out.append(")")
    elif isinstance(t, BinTerm):
        out.append(f"({t.op} ")
        _emit_term(t.left, out)
        out.append(" ")
        _emit_term(t.right, out)
        out.append(")")
    else:
        raise SmtError(f"cannot serialize term {t!r}")


def _emit_formula(f: Formula, out: list[str]) -> None:
    if isinstance(f, BoolAtom):
        _emit_term(f.term, out)
    elif isinstance(f, Eq):
        out.append("(= ")
        _emit_term(f.left, out)
        out.append(" ")
        _emit_term(f.right, out)
        out.append(")")
    elif isinstance(f, Lt):
        out.append("(< ")
        _emit_term(f.left, out)
        out.append(" ")
        _emit_term(f.right, out)
        out.append(")")
    elif isinstance(f, And):
        out.append("(and ")
        _emit_formula(f.left, out)
        out.append(" ")
        _emit_formula(f.right, out)
        out.append(")")
    elif isinstance(f, Not):
        out.append("(not ")
        _emit_formula(f.arg, out)
        out.append(")")
    elif isinstance(f, Forall):
        out.append(f"(forall (({f.var.name} {_smt_sort(f.var.sort)})) ")
        _emit_formula(f.body, out)
        out.append(")")
    else:
        raise SmtError(f"goal is not first-order: {type(f).__name__}")


def _uses_choice_sort(f: Formula) -> bool:
    from .syntax import children

    def walk(node) -> bool:
        if isinstance(node, Var) and node.var.sort is Sort.CHOICE:
            return True
        if isinstance(node, Forall) and node.var.sort is Sort.CHOICE:
            return True
        return any(walk(c) for c in children(node))

    return walk(f)


def emit_smtlib(goal: Formula, logic: str = "ALL", get_model: bool = True) -> str:
    """Deterministic SMT-LIB 2 text for a first-order goal."""
    if not is_fo(goal):
        raise SmtError("only first-order goals can be serialized")
    lines = ["(set-option :produce-models true)"]
    if logic:
        lines.append(f"(set-logic {logic})")
    if _uses_choice_sort(goal):
        lines.append(f"(declare-sort {CHOICE_SORT} 0)")
        for const in CHOICE_CONSTS.values():
            lines.append(f"(declare-const {const} {CHOICE_SORT})")
        lines.append(f"(assert (distinct {' '.join(CHOICE_CONSTS.values())}))")
        lines.append(
            f"(assert (forall ((c {CHOICE_SORT})) "
            f"(or {' '.join(f'(= c {c})' for c in CHOICE_CONSTS.values())})))"
        )
    for v in sorted(free_vars(goal), key=lambda v: v.name):
        lines.append(f"(declare-const {v.name} {_smt_sort(v.sort)})")
    chunks: list[str] = []
    _emit_formula(goal, chunks)
    lines.append(f"(assert {''.join(chunks)})")
    lines.append("(check-sat)")
    if get_model:
        lines.append("(get-model)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Solver configuration and discovery


@dataclass(frozen=True)
class SolverConfig:
    command: tuple[str, ...]  # argv prefix; the .smt2 path is appended
    kind: str = "z3-compatible"  # z3-compatible | cvc5-compatible | generic-smtlib
    timeout: float = 600.0
    logic: Optional[str] = None  # None selects the default ALL
    keep_artifacts: bool = False

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise SmtError("solver timeout must be positive")

    @property
    def executable(self) -> str:
        return self.command[0]


ENV_SOLVER = "EPISCOPE_SOLVER"


def bundled_shim() -> Path:
    return Path(__file__).parent / "solvers" / "z3wasm.mjs"


def _kind_of(name: str) -> str:
    base = os.path.basename(name).lower()
    if "cvc" in base:
        return "cvc5-compatible"
    if "z3" in base:
        return "z3-compatible"
    return "generic-smtlib"


def find_solver(
    override: Optional[str] = None,
    timeout: float = 600.0,
    keep_artifacts: bool = False,
    logic: Optional[str] = None,
) -> SolverConfig:
    """Locate a usable solver; raises SmtError when none is available."""

    def cfg(command: tuple[str, ...], kind: str) -> SolverConfig:
        return SolverConfig(command, kind, timeout, logic, keep_artifacts)

    if override:
        return cfg((override,), _kind_of(override))
    env = os.environ.get(ENV_SOLVER)
    if env:
        return cfg((env,), _kind_of(env))
    for name in ("z3", "cvc5"):
        path = shutil.which(name)
        if path:
            return cfg((path,), _kind_of(path))
    node = shutil.which("node")
    if node and bundled_shim().exists():
        return cfg((node, str(bundled_shim())), "z3-compatible")
    raise SmtError(
        "no SMT solver found: set EPISCOPE_SOLVER, put z3 or cvc5 on PATH, "
        "or install node plus the z3-solver npm package for the bundled shim"
    )


# ---------------------------------------------------------------------------
# Verdicts


class Status(Enum):
    VALID = "valid"
    INVALID = "invalid"
    PUZZLE_MODEL = "model"
    UNKNOWN = "unknown"
    TIMEOUT = "timeout"
    SOLVER_ERROR = "error"


@dataclass(frozen=True)
class Verdict:
    status: Status
    model: Optional[dict[ObsVar, Value]] = None
    wall_time: float = 0.0
    goal_size: int = 0
    detail: str = ""

    def ok(self, mode: str) -> bool:
        """Did the query succeed (valid claim proved / witness found)?"""
        if mode == VALID:
            return self.status is Status.VALID
        return self.status is Status.PUZZLE_MODEL


# ---------------------------------------------------------------------------
# Model parsing (a small s-expression reader)


def _sexpr_tokens(text: str):
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            yield c
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 1
            yield text[i : j + 1]
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            yield text[i:j]
            i = j


def _parse_sexprs(text: str) -> list:
    stack: list[list] = [[]]
    for tok in _sexpr_tokens(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise SmtError("unbalanced solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    return stack[0]


def _value_from_sexpr(expr, sort: Sort) -> Optional[Value]:
    if sort is Sort.BOOL and expr in ("true", "false"):
        return expr == "true"
    if sort is Sort.INT:
        if isinstance(expr, str):
            try:
                return int(expr)
            except ValueError:
                return None
        if isinstance(expr, list) and len(expr) == 2 and expr[0] == "-":
            try:
                return -int(expr[1])
            except (ValueError, TypeError):
                return None
    if sort is Sort.CHOICE and isinstance(expr, str):
        for val, name in CHOICE_CONSTS.items():
            if expr == name or expr.startswith(name):
                return val
    return None


def parse_model(text: str, vars: list[ObsVar]) -> dict[ObsVar, Value]:
    """Extract task-variable values from `(define-fun ...)` entries."""
    by_name = {v.name: v for v in vars}
    model: dict[ObsVar, Value] = {}
    exprs = _parse_sexprs(text)
    items: list = []
    for e in exprs:
        if isinstance(e, list):
            items.extend(e[1:] if e and e[0] == "model" else e)
    for item in items:
        if (
            isinstance(item, list)
            and len(item) >= 5
            and item[0] == "define-fun"
            and isinstance(item[1], str)
            and item[1] in by_name
            and item[2] == []
        ):
            v = by_name[item[1]]
            val = _value_from_sexpr(item[4], v.sort)
            if val is not None:
                model[v] = val
    return model


# ---------------------------------------------------------------------------
# Running


def run_solver(
    text: str,
    cfg: SolverConfig,
    mode: str = VALID,
    task: Optional[VerificationTask] = None,
    goal_size: int = 0,
    artifact_path: Optional[Path] = None,
) -> Verdict:
    """Run the solver on SMT-LIB text and interpret its answer for `mode`."""
    if cfg.keep_artifacts and artifact_path is not None:
        path = artifact_path
        path.write_text(text)
        cleanup = False
    else:
        fd, tmp = tempfile.mkstemp(suffix=".smt2", prefix="episcope-")
        path = Path(tmp)
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        cleanup = True
    start = time.monotonic()
    try:
        proc = subprocess.run(
            [*cfg.command, str(path)],
            capture_output=True,
            text=True,
            timeout=cfg.timeout,
        )
    except subprocess.TimeoutExpired:
        return Verdict(Status.TIMEOUT, wall_time=time.monotonic() - start, goal_size=goal_size)
    except OSError as e:
        return Verdict(
            Status.SOLVER_ERROR,
            wall_time=time.monotonic() - start,
            goal_size=goal_size,
            detail=f"cannot run {cfg.executable}: {e}",
        )
    finally:
        if cleanup:
            path.unlink(missing_ok=True)
    elapsed = time.monotonic() - start

    answer = None
    rest_lines: list[str] = []
    for line in proc.stdout.splitlines():
        word = line.strip()
        if answer is None and word in ("sat", "unsat", "unknown"):
            answer = word
        elif answer is not None:
            rest_lines.append(line)
    if answer is None:
        raw = (proc.stdout + "\n" + proc.stderr).strip()
        return Verdict(
            Status.SOLVER_ERROR,
            wall_time=elapsed,
            goal_size=goal_size,
            detail=raw or f"solver exited with status {proc.returncode} and no answer",
        )
    if answer == "unknown":
        return Verdict(Status.UNKNOWN, wall_time=elapsed, goal_size=goal_size)

    if mode == VALID:
        if answer == "unsat":
            return Verdict(Status.VALID, wall_time=elapsed, goal_size=goal_size)
        model = parse_model("\n".join(rest_lines), list(task.vars) if task else [])
        return Verdict(Status.INVALID, model=model or None, wall_time=elapsed, goal_size=goal_size)
    assert mode == SAT
    if answer == "unsat":
        return Verdict(
            Status.INVALID,
            wall_time=elapsed,
            goal_size=goal_size,
            detail="no state satisfies the query",
        )
    model = parse_model("\n".join(rest_lines), list(task.vars) if task else [])
    return Verdict(Status.PUZZLE_MODEL, model=model or None, wall_time=elapsed, goal_size=goal_size)


def solve_goal(
    goal: Formula,
    cfg: SolverConfig,
    mode: str,
    task: VerificationTask,
    artifact_path: Optional[Path] = None,
) -> Verdict:
    text = emit_smtlib(goal, logic=cfg.logic or "ALL")
    return run_solver(
        text,
        cfg,
        mode=mode,
        task=task,
        goal_size=node_count(goal),
        artifact_path=artifact_path,
    )


# ---------------------------------------------------------------------------
# Console entry point for the bundled WASM shim


def z3wasm_main() -> None:
    """`episcope-z3wasm FILE.smt2`: run the bundled WASM Z3 on a file."""
    if len(sys.argv) != 2:
        print("usage: episcope-z3wasm FILE.smt2", file=sys.stderr)
        raise SystemExit(2)
    node = shutil.which("node")
    if node is None:
        print("episcope-z3wasm: node is not on PATH", file=sys.stderr)
        raise SystemExit(3)
    os.execv(node, [node, str(bundled_shim()), sys.argv[1]])
