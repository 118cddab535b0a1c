"""Tape-based reverse-mode automatic differentiation over scalar expressions.

A :class:`Tape` records one forward pass as an append-only sequence of nodes.
Each node stores its forward value, the indices of up to two predecessor
nodes, and the local partial derivatives with respect to them, so predecessor
indices are always smaller than the node's own index and a single reverse
sweep accumulates exact adjoints for every registered leaf.

Piecewise operations (relu, min, max, clamp) use one fixed subgradient
convention so results are reproducible:

* ``relu'(0) = 0``
* ``d max(a, b)/da = 1 if a > b else 0`` (a tie gives the full subgradient
  to the second argument); ``min`` mirrors this.
* ``clamp`` has gradient 1 strictly inside ``(lo, hi)`` and 0 elsewhere,
  including exactly at the boundaries.

Every piecewise op also appends a branch byte to the tape, which lets a
finite-difference checker detect when probe evaluations straddle a kink.

Hot paths (the hydrologic model, the MLP, the training loop) call the index
methods directly (``tape.mul(i, j) -> int``); :class:`Var` is a thin operator
wrapper over those methods for building expressions by hand.  The module-level
:data:`FLOATS` backend implements the same method surface on plain floats, so
model code written against the backend runs either traced or untraced with
bitwise-identical forward values.

A Tape is single-threaded; independent tapes may run concurrently because
there is no shared mutable state.  All arithmetic is double precision.
"""
from __future__ import annotations

import math
from array import array
from dataclasses import dataclass

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

import numpy as np


class DomainError(ValueError):
    """Raised when an operation is evaluated outside its admitted domain."""


_NO_PRED = -1


@dataclass
class TapeNode:
    """Read-only view of one recorded node (for inspection and invariant scans)."""

    index: int
    value: float
    adjoint: float
    predecessors: tuple[int, ...]
    local_partials: tuple[float, ...]


class Tape:
    """Append-only record of a scalar forward pass.

    Nodes live in parallel ``array`` buffers (values, predecessor indices,
    local partials) rather than per-node objects; this keeps a one-basin-year
    hydrologic trace (~10^5 nodes) cheap to build and to sweep backward.
    """

    __slots__ = (
        "_val",
        "_p1",
        "_p2",
        "_d1",
        "_d2",
        "_bits",
        "_adj",
        "leaves",
        "_va",
        "_p1a",
        "_p2a",
        "_d1a",
        "_d2a",
        "_ba",
    )

    def __init__(self):
        self._val = array("d")
        self._p1 = array("i")
        self._p2 = array("i")
        self._d1 = array("d")
        self._d2 = array("d")
        self._bits = array("b")  # one byte per piecewise op, in emission order
        self._adj = None  # populated by backward()
        self.leaves: dict = {}  # leaf key -> node index
        # bound append methods, hoisted once; emit cost dominates everything
        self._va = self._val.append
        self._p1a = self._p1.append
        self._p2a = self._p2.append
        self._d1a = self._d1.append
        self._d2a = self._d2.append
        self._ba = self._bits.append

    # ------------------------------------------------------------------ #
    # introspection
    # ------------------------------------------------------------------ #

    def __len__(self) -> int:
        return len(self._val)

    def value(self, i: int) -> float:
        """Forward value stored at node ``i``."""
        return self._val[i]

    @property
    def branch_bits(self) -> bytes:
        """Branch decisions of all piecewise ops, in emission order."""
        return bytes(self._bits)

    def node(self, i: int) -> TapeNode:
        preds, parts = (), ()
        p1 = self._p1[i]
        if p1 != _NO_PRED:
            p2 = self._p2[i]
            if p2 != _NO_PRED:
                preds = (p1, p2)
                parts = (self._d1[i], self._d2[i])
            else:
                preds = (p1,)
                parts = (self._d1[i],)
        adj = 0.0 if self._adj is None else float(self._adj[i])
        return TapeNode(i, self._val[i], adj, preds, parts)

    # ------------------------------------------------------------------ #
    # leaves and constants
    # ------------------------------------------------------------------ #

    def leaf(self, value: float, key) -> int:
        """Record an input node and register it under ``key`` for gradients."""
        if not math.isfinite(value):
            raise DomainError(f"leaf value must be finite, got {value!r}")
        if key in self.leaves:
            raise ValueError(f"duplicate leaf key {key!r}")
        i = len(self._val)
        self._va(value)
        self._p1a(_NO_PRED)
        self._p2a(_NO_PRED)
        self._d1a(0.0)
        self._d2a(0.0)
        self.leaves[key] = i
        return i

    def const(self, value: float) -> int:
        """Record a constant node; not registered, so it gets no gradient entry."""
        if not math.isfinite(value):
            raise DomainError(f"constant must be finite, got {value!r}")
        self._va(value)
        self._p1a(_NO_PRED)
        self._p2a(_NO_PRED)
        self._d1a(0.0)
        self._d2a(0.0)
        return len(self._val) - 1

    # ------------------------------------------------------------------ #
    # arithmetic (two-argument)
    # ------------------------------------------------------------------ #

    def add(self, a: int, b: int) -> int:
        self._va(self._val[a] + self._val[b])
        self._p1a(a)
        self._p2a(b)
        self._d1a(1.0)
        self._d2a(1.0)
        return len(self._val) - 1

    def sub(self, a: int, b: int) -> int:
        self._va(self._val[a] - self._val[b])
        self._p1a(a)
        self._p2a(b)
        self._d1a(1.0)
        self._d2a(-1.0)
        return len(self._val) - 1

    def mul(self, a: int, b: int) -> int:
        va = self._val[a]
        vb = self._val[b]
        self._va(va * vb)
        self._p1a(a)
        self._p2a(b)
        self._d1a(vb)
        self._d2a(va)
        return len(self._val) - 1

    def div(self, a: int, b: int) -> int:
        vb = self._val[b]
        if vb == 0.0:
            raise DomainError(f"division by zero at node {len(self._val)}")
        va = self._val[a]
        q = va / vb
        self._va(q)
        self._p1a(a)
        self._p2a(b)
        self._d1a(1.0 / vb)
        self._d2a(-q / vb)
        return len(self._val) - 1

    # ------------------------------------------------------------------ #
    # arithmetic against a constant (no node is created for the constant)
    # ------------------------------------------------------------------ #

    def addc(self, a: int, c: float) -> int:
        self._va(self._val[a] + c)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(1.0)
        self._d2a(0.0)
        return len(self._val) - 1

    def subc(self, a: int, c: float) -> int:
        return self.addc(a, -c)

    def rsubc(self, c: float, a: int) -> int:
        self._va(c - self._val[a])
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(-1.0)
        self._d2a(0.0)
        return len(self._val) - 1

    def mulc(self, a: int, c: float) -> int:
        self._va(self._val[a] * c)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(c)
        self._d2a(0.0)
        return len(self._val) - 1

    def divc(self, a: int, c: float) -> int:
        if c == 0.0:
            raise DomainError(f"division by zero constant at node {len(self._val)}")
        self._va(self._val[a] / c)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(1.0 / c)
        self._d2a(0.0)
        return len(self._val) - 1

    def rdivc(self, c: float, a: int) -> int:
        va = self._val[a]
        if va == 0.0:
            raise DomainError(f"division by zero at node {len(self._val)}")
        q = c / va
        self._va(q)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(-q / va)
        self._d2a(0.0)
        return len(self._val) - 1

    def powc(self, a: int, c: float) -> int:
        """``a ** c`` for a constant exponent.

        Admitted for positive bases; a zero base needs ``c >= 1`` and a
        negative base needs an integer ``c``, otherwise value or partial
        would leave the reals.
        """
        va = self._val[a]
        if va > 0.0:
            v = va ** c
            d = c * va ** (c - 1.0)
        elif va == 0.0:
            if c < 1.0:
                raise DomainError(
                    f"0**{c} has unbounded derivative at node {len(self._val)}"
                )
            v = 0.0
            d = 1.0 if c == 1.0 else 0.0
        else:
            if c != int(c):
                raise DomainError(
                    f"negative base with non-integer exponent at node {len(self._val)}"
                )
            v = va ** c
            d = c * va ** (c - 1.0)
        self._va(v)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(d)
        self._d2a(0.0)
        return len(self._val) - 1

    # ------------------------------------------------------------------ #
    # smooth unary ops
    # ------------------------------------------------------------------ #

    def exp(self, a: int) -> int:
        v = math.exp(self._val[a])
        self._va(v)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(v)
        self._d2a(0.0)
        return len(self._val) - 1

    def log(self, a: int) -> int:
        va = self._val[a]
        if va <= 0.0:
            raise DomainError(f"log of non-positive value {va} at node {len(self._val)}")
        self._va(math.log(va))
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(1.0 / va)
        self._d2a(0.0)
        return len(self._val) - 1

    def sigmoid(self, a: int) -> int:
        s = _sigmoid(self._val[a])
        self._va(s)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(s * (1.0 - s))
        self._d2a(0.0)
        return len(self._val) - 1

    def tanh(self, a: int) -> int:
        t = math.tanh(self._val[a])
        self._va(t)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d1a(1.0 - t * t)
        self._d2a(0.0)
        return len(self._val) - 1

    # ------------------------------------------------------------------ #
    # piecewise ops (each appends a branch byte)
    # ------------------------------------------------------------------ #

    def relu(self, a: int) -> int:
        va = self._val[a]
        if va > 0.0:
            self._va(va)
            self._d1a(1.0)
            self._ba(1)
        else:
            self._va(0.0)
            self._d1a(0.0)
            self._ba(0)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d2a(0.0)
        return len(self._val) - 1

    def minv(self, a: int, b: int) -> int:
        va = self._val[a]
        vb = self._val[b]
        if va < vb:
            self._va(va)
            self._d1a(1.0)
            self._d2a(0.0)
            self._ba(1)
        else:
            self._va(vb)
            self._d1a(0.0)
            self._d2a(1.0)
            self._ba(0)
        self._p1a(a)
        self._p2a(b)
        return len(self._val) - 1

    def maxv(self, a: int, b: int) -> int:
        va = self._val[a]
        vb = self._val[b]
        if va > vb:
            self._va(va)
            self._d1a(1.0)
            self._d2a(0.0)
            self._ba(1)
        else:
            self._va(vb)
            self._d1a(0.0)
            self._d2a(1.0)
            self._ba(0)
        self._p1a(a)
        self._p2a(b)
        return len(self._val) - 1

    def minc(self, a: int, c: float) -> int:
        va = self._val[a]
        if va < c:
            self._va(va)
            self._d1a(1.0)
            self._ba(1)
        else:
            self._va(c)
            self._d1a(0.0)
            self._ba(0)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d2a(0.0)
        return len(self._val) - 1

    def maxc(self, a: int, c: float) -> int:
        va = self._val[a]
        if va > c:
            self._va(va)
            self._d1a(1.0)
            self._ba(1)
        else:
            self._va(c)
            self._d1a(0.0)
            self._ba(0)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d2a(0.0)
        return len(self._val) - 1

    def clampc(self, a: int, lo: float, hi: float) -> int:
        if not lo < hi:
            raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
        va = self._val[a]
        if va <= lo:
            self._va(lo)
            self._d1a(0.0)
            self._ba(0)
        elif va >= hi:
            self._va(hi)
            self._d1a(0.0)
            self._ba(2)
        else:
            self._va(va)
            self._d1a(1.0)
            self._ba(1)
        self._p1a(a)
        self._p2a(_NO_PRED)
        self._d2a(0.0)
        return len(self._val) - 1

    # ------------------------------------------------------------------ #
    # reverse sweep
    # ------------------------------------------------------------------ #

    def backward(self, output: int) -> dict:
        """Accumulate adjoints in reverse index order from ``output``.

        Returns a map ``leaf key -> d output / d leaf`` covering every
        registered leaf.  Forward values are untouched; calling backward
        again (with any output) resets and recomputes the adjoints.
        """
        n = len(self._val)
        if not 0 <= output < n:
            raise IndexError(f"output index {output} not on this tape (size {n})")
        adj = np.zeros(n)
        adj[output] = 1.0
        p1 = np.frombuffer(self._p1, dtype=np.intc)
        p2 = np.frombuffer(self._p2, dtype=np.intc)
        d1 = np.frombuffer(self._d1, dtype=np.float64)
        d2 = np.frombuffer(self._d2, dtype=np.float64)
        _sweep(p1, p2, d1, d2, adj, output)
        self._adj = adj
        return {key: float(adj[i]) for key, i in self.leaves.items()}


def _sweep_py(p1, p2, d1, d2, adj, start):
    for i in range(start, -1, -1):
        a = adj[i]
        if a != 0.0:
            j = p1[i]
            if j >= 0:
                adj[j] += d1[i] * a
                k = p2[i]
                if k >= 0:
                    adj[k] += d2[i] * a


if _HAVE_NUMBA:
    _sweep = njit(cache=True)(_sweep_py)
else:  # pragma: no cover
    _sweep = _sweep_py


def _sigmoid(x: float) -> float:
    # overflow-safe logistic; both branches stay inside [0, 1]
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class FloatBackend:
    """Plain-float twin of the Tape method surface.

    Model code written against this interface produces bitwise-identical
    forward values traced or untraced, because each method applies the exact
    arithmetic the corresponding Tape op applies.
    """

    @staticmethod
    def leaf(value, key=None):
        return value

    @staticmethod
    def const(value):
        return value

    @staticmethod
    def value(h):
        return h

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def sub(a, b):
        return a - b

    @staticmethod
    def mul(a, b):
        return a * b

    @staticmethod
    def div(a, b):
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b

    @staticmethod
    def addc(a, c):
        return a + c

    @staticmethod
    def subc(a, c):
        return a + (-c)

    @staticmethod
    def rsubc(c, a):
        return c - a

    @staticmethod
    def mulc(a, c):
        return a * c

    @staticmethod
    def divc(a, c):
        if c == 0.0:
            raise DomainError("division by zero constant")
        return a / c

    @staticmethod
    def rdivc(c, a):
        if a == 0.0:
            raise DomainError("division by zero")
        return c / a

    @staticmethod
    def powc(a, c):
        if a > 0.0:
            return a ** c
        if a == 0.0:
            if c < 1.0:
                raise DomainError(f"0**{c} has unbounded derivative")
            return 0.0
        if c != int(c):
            raise DomainError("negative base with non-integer exponent")
        return a ** c

    @staticmethod
    def exp(a):
        return math.exp(a)

    @staticmethod
    def log(a):
        if a <= 0.0:
            raise DomainError(f"log of non-positive value {a}")
        return math.log(a)

    @staticmethod
    def sigmoid(a):
        return _sigmoid(a)

    @staticmethod
    def tanh(a):
        return math.tanh(a)

    @staticmethod
    def relu(a):
        return a if a > 0.0 else 0.0

    @staticmethod
    def minv(a, b):
        return a if a < b else b

    @staticmethod
    def maxv(a, b):
        return a if a > b else b

    minc = minv
    maxc = maxv

    @staticmethod
    def clampc(a, lo, hi):
        if not lo < hi:
            raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
        if a <= lo:
            return lo
        if a >= hi:
            return hi
        return a


FLOATS = FloatBackend()


class Var:
    """Operator-overloading handle to one tape node.

    Valid only for the tape that created it.  Mixed expressions with plain
    numbers are supported (``x * 2.0 + 1.0``); two-Var expressions must share
    a tape.
    """

    __slots__ = ("tape", "i")

    def __init__(self, tape: Tape, i: int):
        self.tape = tape
        self.i = i

    @property
    def value(self) -> float:
        return self.tape.value(self.i)

    def __repr__(self):
        return f"Var({self.value})"

    def _wrap(self, i: int) -> "Var":
        return Var(self.tape, i)

    def __add__(self, other):
        if isinstance(other, Var):
            return self._wrap(self.tape.add(self.i, other.i))
        return self._wrap(self.tape.addc(self.i, other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return self._wrap(self.tape.sub(self.i, other.i))
        return self._wrap(self.tape.subc(self.i, other))

    def __rsub__(self, other):
        return self._wrap(self.tape.rsubc(other, self.i))

    def __mul__(self, other):
        if isinstance(other, Var):
            return self._wrap(self.tape.mul(self.i, other.i))
        return self._wrap(self.tape.mulc(self.i, other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self._wrap(self.tape.div(self.i, other.i))
        return self._wrap(self.tape.divc(self.i, other))

    def __rtruediv__(self, other):
        return self._wrap(self.tape.rdivc(other, self.i))

    def __pow__(self, c):
        return self._wrap(self.tape.powc(self.i, c))

    def __neg__(self):
        return self._wrap(self.tape.mulc(self.i, -1.0))


def exp(x: Var) -> Var:
    return Var(x.tape, x.tape.exp(x.i))


def log(x: Var) -> Var:
    return Var(x.tape, x.tape.log(x.i))


def sigmoid(x: Var) -> Var:
    return Var(x.tape, x.tape.sigmoid(x.i))


def tanh(x: Var) -> Var:
    return Var(x.tape, x.tape.tanh(x.i))


def relu(x: Var) -> Var:
    return Var(x.tape, x.tape.relu(x.i))


def minimum(x: Var, y) -> Var:
    if isinstance(y, Var):
        return Var(x.tape, x.tape.minv(x.i, y.i))
    return Var(x.tape, x.tape.minc(x.i, y))


def maximum(x: Var, y) -> Var:
    if isinstance(y, Var):
        return Var(x.tape, x.tape.maxv(x.i, y.i))
    return Var(x.tape, x.tape.maxc(x.i, y))


def clamp(x: Var, lo: float, hi: float) -> Var:
    return Var(x.tape, x.tape.clampc(x.i, lo, hi))
