"""Persistent SMT-LIB 2 solver subprocess.

One child process serves many queries.  Every top-level query is preceded by
``(reset)`` so no state leaks between callers; a session object exposes
push/pop for callers that batch many related checks (guard-tuple enumeration,
unsat-core pruning).  The transport is line-based with echo sentinels: we
never guess how many lines a command prints, we read until the sentinel.

The default backend is a bundled node shim over the z3 WASM distribution
(see _z3shim/server.js); any binary speaking ``z3 -in -smt2`` conventions can
be substituted via PIA_SOLVER or an explicit command.
"""

from __future__ import annotations

import enum
import os
import select
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass, field


class SatResult(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


class SolverError(RuntimeError):
    """The solver crashed, spoke garbage, or could not be started.

    Distinct from SatResult.UNKNOWN: callers map UNKNOWN to their sound
    default, while SolverError generally aborts or degrades loudly.
    """


_SHIM_DIR_ENV = "PIA_MC_NPM_DIR"
_SOLVER_ENV = "PIA_SOLVER"


def shim_command(timeout_ms: int | None = None) -> list[str]:
    """Command line for the bundled node/WASM shim."""
    server = os.path.join(os.path.dirname(__file__), "_z3shim", "server.js")
    cmd = ["node", server]
    if timeout_ms:
        cmd.append(f"--timeout-ms={timeout_ms}")
    return cmd


def default_command(timeout_ms: int | None = None) -> list[str]:
    """Resolve the solver command: PIA_SOLVER, then a z3 binary, then the shim."""
    env = os.environ.get(_SOLVER_ENV)
    if env:
        return shlex.split(env)
    z3 = shutil.which("z3")
    if z3:
        cmd = [z3, "-in", "-smt2"]
        if timeout_ms:
            cmd.append(f"-t:{timeout_ms}")
        return cmd
    return shim_command(timeout_ms)


# ==== s-expression reading ====


def parse_sexprs(text: str):
    """Parse a sequence of s-expressions into nested lists of atoms."""
    toks: list[str] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in "()":
            toks.append(c)
            i += 1
        elif c.isspace():
            i += 1
        elif c == "|":
            j = text.index("|", i + 1)
            toks.append(text[i : j + 1])
            i = j + 1
        elif c == '"':
            j = i + 1
            while j < n:
                if text[j] == '"':
                    if j + 1 < n and text[j + 1] == '"':
                        j += 2
                        continue
                    break
                j += 1
            toks.append(text[i : j + 1])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in '()|"':
                j += 1
            toks.append(text[i:j])
            i = j
    out: list = []
    stack: list[list] = []
    for tok in toks:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            done = stack.pop()
            (stack[-1] if stack else out).append(done)
        else:
            (stack[-1] if stack else out).append(tok)
    if stack:
        raise SolverError(f"unbalanced solver output: {text[:200]!r}")
    return out


def sexpr_int(node) -> int:
    """Integer value of a model term; handles (- k)."""
    if isinstance(node, list):
        if len(node) == 2 and node[0] == "-":
            return -sexpr_int(node[1])
        raise SolverError(f"not an integer term: {node!r}")
    return int(node)


# ==== the subprocess ====


@dataclass
class _Stats:
    queries: int = 0
    restarts: int = 0
    time: float = 0.0


class Solver:
    """One solver child process, serially reused; restarted on trouble."""

    def __init__(self, command: list[str] | None = None, timeout: float = 20.0):
        self.command = list(command) if command else default_command(
            timeout_ms=int(timeout * 1000)
        )
        self.timeout = timeout
        self.stats = _Stats()
        self._proc: subprocess.Popen | None = None
        self._buf = b""
        self._sentinel_n = 0

    # -- transport --

    def _start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as e:
            raise SolverError(f"cannot start solver {self.command!r}: {e}") from e
        self._buf = b""

    def _ensure(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            self._start()

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
            except OSError:
                pass
            self._proc.wait()
            self._proc = None

    def restart(self) -> None:
        self.close()
        self.stats.restarts += 1
        self._start()

    def _send(self, text: str) -> None:
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(text.encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise SolverError(f"solver pipe broke: {e}") from e

    def _read_until(self, sentinel: str, deadline: float) -> list[str]:
        """Collect output lines until the sentinel line arrives."""
        assert self._proc is not None and self._proc.stdout is not None
        fd = self._proc.stdout.fileno()
        lines: list[str] = []
        while True:
            while b"\n" in self._buf:
                raw, self._buf = self._buf.split(b"\n", 1)
                line = raw.decode(errors="replace").strip()
                if line == sentinel:
                    return lines
                if line:
                    lines.append(line)
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise TimeoutError
            chunk = os.read(fd, 65536)
            if not chunk:
                raise SolverError(
                    "solver exited unexpectedly (is the npm z3-solver package "
                    "installed? see README, or set PIA_SOLVER)"
                )
            self._buf += chunk

    def _sentinel(self) -> str:
        self._sentinel_n += 1
        return f"@pia-{self._sentinel_n}"

    def _roundtrip(self, text: str, timeout: float | None) -> list[str]:
        """Send text, then an echo sentinel; return the lines before it."""
        self._ensure()
        mark = self._sentinel()
        deadline = time.monotonic() + (timeout if timeout is not None else self.timeout)
        t0 = time.monotonic()
        try:
            self._send(text + f'\n(echo "{mark}")\n')
            lines = self._read_until(mark, deadline)
        except TimeoutError:
            self.restart()
            raise
        finally:
            self.stats.time += time.monotonic() - t0
        for ln in lines:
            if ln.startswith("(error"):
                raise SolverError(f"solver error: {ln}")
        return lines

    # -- queries --

    _PRELUDE = "(set-option :print-success false)\n"

    def check(self, script: str, timeout: float | None = None) -> SatResult:
        """Fresh check-sat of a self-contained script (decls + asserts)."""
        self.stats.queries += 1
        try:
            lines = self._roundtrip(
                "(reset)\n" + self._PRELUDE + script + "\n(check-sat)", timeout
            )
        except TimeoutError:
            return SatResult.UNKNOWN
        return self._verdict(lines)

    def check_values(
        self, script: str, names: list[str], timeout: float | None = None
    ) -> tuple[SatResult, dict[str, int] | None]:
        """check, then (get-value) of the named Int constants when sat."""
        res = self.check(script, timeout)
        if res is not SatResult.SAT or not names:
            return res, None
        try:
            lines = self._roundtrip(f"(get-value ({' '.join(names)}))", timeout)
        except TimeoutError:
            return SatResult.SAT, None
        return SatResult.SAT, self._values(lines)

    def check_core(
        self, script: str, timeout: float | None = None
    ) -> tuple[SatResult, list[str]]:
        """check with :produce-unsat-cores; asserts must use (! e :named nm)."""
        self.stats.queries += 1
        try:
            lines = self._roundtrip(
                "(reset)\n"
                + self._PRELUDE
                + "(set-option :produce-unsat-cores true)\n"
                + script
                + "\n(check-sat)",
                timeout,
            )
        except TimeoutError:
            return SatResult.UNKNOWN, []
        res = self._verdict(lines)
        if res is not SatResult.UNSAT:
            return res, []
        try:
            core_lines = self._roundtrip("(get-unsat-core)", timeout)
        except TimeoutError:
            return SatResult.UNSAT, []
        parsed = parse_sexprs("\n".join(core_lines))
        core = [str(x) for x in parsed[0]] if parsed and isinstance(parsed[0], list) else []
        return SatResult.UNSAT, core

    @staticmethod
    def _verdict(lines: list[str]) -> SatResult:
        for ln in reversed(lines):
            if ln == "sat":
                return SatResult.SAT
            if ln == "unsat":
                return SatResult.UNSAT
            if ln in ("unknown", "timeout"):
                return SatResult.UNKNOWN
        raise SolverError(f"no check-sat verdict in solver output: {lines!r}")

    def _values(self, lines: list[str]) -> dict[str, int]:
        parsed = parse_sexprs("\n".join(lines))
        if not parsed or not isinstance(parsed[0], list):
            raise SolverError(f"bad get-value output: {lines!r}")
        out: dict[str, int] = {}
        for pair in parsed[0]:
            if isinstance(pair, list) and len(pair) == 2:
                out[str(pair[0])] = sexpr_int(pair[1])
        return out

    def session(self, prelude: str = "") -> "Session":
        return Session(self, prelude)

    def __enter__(self) -> "Solver":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class Session:
    """Incremental push/pop scope over one solver, for query batches.

    No (reset) happens inside a session; the constructor resets once and
    replays the prelude (declarations and shared asserts).
    """

    def __init__(self, solver: Solver, prelude: str):
        self.solver = solver
        self.prelude = prelude
        self._depth = 0
        self._open = False

    def __enter__(self) -> "Session":
        self.solver._ensure()
        self.solver._roundtrip("(reset)\n" + Solver._PRELUDE + self.prelude, None)
        self._open = True
        return self

    def __exit__(self, *exc) -> None:
        # leave the child clean for the next caller
        self._open = False
        try:
            self.solver._roundtrip("(reset)", None)
        except (SolverError, TimeoutError):
            self.solver.restart()

    def add(self, text: str) -> None:
        assert self._open
        self.solver._send(text + "\n")

    def push(self) -> None:
        self.add("(push 1)")
        self._depth += 1

    def pop(self) -> None:
        assert self._depth > 0
        self.add("(pop 1)")
        self._depth -= 1

    def check(self, timeout: float | None = None) -> SatResult:
        self.solver.stats.queries += 1
        try:
            lines = self.solver._roundtrip("(check-sat)", timeout)
        except TimeoutError:
            # the child was restarted; session state is gone
            self._open = False
            raise SolverError("solver timeout inside a session") from None
        return Solver._verdict(lines)

    def values(self, names: list[str]) -> dict[str, int]:
        lines = self.solver._roundtrip(f"(get-value ({' '.join(names)}))", None)
        return self.solver._values(lines)
