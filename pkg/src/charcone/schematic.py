"""Schematic order calculus and the well-foundedness check of the jet recursion.

Terms are words of derivations applied to a base symbol.  The calculus is
coefficient-free: a polynomial is a set of monomials and only the symbols
that occur matter.  ``ord`` counts derivatives, ``ord_T`` counts transversal
derivatives with ``kappa`` and ``kappa^-1`` counted as T-order one.

Letters: ``"L"``, ``"T"``, ``"X1"``, ``"X2"`` and ``"Th"`` for the unit
normal ``That = kappa^-1 T``.  Terms store words over ``L, T, X1, X2`` only;
applying ``Th`` to a polynomial injects a ``kappa^-1`` factor.

:func:`commute` expands ``[L, word]`` in the abstract classes ``P(n, l)``
using the base rules ``[L, X_A] = 0``, ``[L, T] = P(1,1) X_A`` and
``[L, That] = P(1,1) X_A + P(1,1) That``.

:func:`determination_check` instantiates the ledger of defining equations
(``data/determination_ledger.json``) for T-orders up to ``K`` and verifies
that it can be evaluated in order.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from graphlib import CycleError, TopologicalSorter
from importlib import resources

from .errors import CyclicDependency

BASES = frozenset(
    {"rho", "rho_inv", "v", "s", "X", "That", "Omega", "kappa", "kappa_inv", "c", "c_inv", "Phi0", "Psi0"}
)
KAPPA_BASES = frozenset({"kappa", "kappa_inv"})
LETTERS = ("L", "T", "X1", "X2")
ALL_LETTERS = LETTERS + ("Th",)
TRANSVERSAL = frozenset({"T", "Th"})

# ---------------------------------------------------------------------------
# terms and polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class SchematicTerm:
    """``word[0] o word[1] o ... (base)``; the last letter acts first."""

    base: str
    word: tuple = ()

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown base symbol {self.base!r}")
        bad = [d for d in self.word if d not in LETTERS]
        if bad:
            raise ValueError(f"letters {bad} are not derivations of the ring")

    @property
    def ord(self) -> int:
        return len(self.word)

    @property
    def ord_T(self) -> int:
        return sum(d == "T" for d in self.word) + (1 if self.base in KAPPA_BASES else 0)

    def __str__(self):
        return "".join(f"{d} " for d in self.word) + self.base


def term(base: str, *word: str) -> SchematicTerm:
    return SchematicTerm(base, tuple(word))


@dataclass(frozen=True)
class SchematicPoly:
    """Set of monomials; a monomial is a sorted tuple of terms (a multiset)."""

    monomials: frozenset = frozenset()

    @staticmethod
    def of(*monomials) -> "SchematicPoly":
        return SchematicPoly(frozenset(tuple(sorted(m)) for m in monomials))

    @staticmethod
    def from_term(t: SchematicTerm) -> "SchematicPoly":
        return SchematicPoly.of((t,))

    def __add__(self, other: "SchematicPoly") -> "SchematicPoly":
        return SchematicPoly(self.monomials | other.monomials)

    def __mul__(self, other: "SchematicPoly") -> "SchematicPoly":
        return SchematicPoly(
            frozenset(tuple(sorted(a + b)) for a in self.monomials for b in other.monomials)
        )

    def __bool__(self):
        return bool(self.monomials)

    def __len__(self):
        return len(self.monomials)


def order_of(x) -> tuple:
    """``(ord, ord_T)`` of a term, monomial, polynomial or class."""
    if isinstance(x, SchematicTerm):
        return x.ord, x.ord_T
    if isinstance(x, PClass):
        return x.n, x.k
    if isinstance(x, SchematicPoly):
        pairs = [order_of(m) for m in x.monomials]
    elif isinstance(x, tuple):
        pairs = [order_of(t) for t in x]
    else:
        raise TypeError(f"cannot take the order of {type(x).__name__}")
    if not pairs:
        return 0, 0
    return max(p[0] for p in pairs), max(p[1] for p in pairs)


def _derive_monomial(mono: tuple, letter: str) -> list:
    out = []
    for i, t in enumerate(mono):
        new = SchematicTerm(t.base, (letter,) + t.word)
        out.append(tuple(sorted(mono[:i] + (new,) + mono[i + 1:])))
    return out


def derive(x, letter: str) -> SchematicPoly:
    """Apply one derivation with the Leibniz rule.

    ``"Th"`` is applied as ``kappa^-1 T``.  Constants differentiate to the
    empty polynomial.
    """
    if letter not in ALL_LETTERS:
        raise ValueError(f"unknown derivation {letter!r}")
    if isinstance(x, SchematicTerm):
        x = SchematicPoly.from_term(x)
    if isinstance(x, PClass):
        return x.derive(letter)
    if letter == "Th":
        return SchematicPoly.from_term(term("kappa_inv")) * derive(x, "T")
    mons = set()
    for m in x.monomials:
        mons.update(_derive_monomial(m, letter))
    return SchematicPoly(frozenset(mons))


# ---------------------------------------------------------------------------
# abstract classes P(n, k)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class PClass:
    """All polynomials with order <= n and T-order <= k."""

    n: int
    k: int

    def __add__(self, other: "PClass") -> "PClass":
        return PClass(max(self.n, other.n), max(self.k, other.k))

    __mul__ = __add__

    def derive(self, letter: str) -> "PClass":
        return PClass(self.n + 1, self.k + (1 if letter in TRANSVERSAL else 0))

    def __str__(self):
        return f"P[{self.n},{self.k}]"


# ---------------------------------------------------------------------------
# commutator with L
# ---------------------------------------------------------------------------

_BASE_COMMUTATOR = {
    "L": (),
    "X1": (),
    "X2": (),
    "T": ((PClass(1, 1), ("X1",)), (PClass(1, 1), ("X2",))),
    "Th": ((PClass(1, 1), ("X1",)), (PClass(1, 1), ("X2",)), (PClass(1, 1), ("Th",))),
}


@lru_cache(maxsize=None)
def _commute(word: tuple) -> frozenset:
    if not word:
        return frozenset()
    head, rest = word[0], word[1:]
    # [L, d W] = [L, d] W + d o [L, W]
    out = {(c, w + rest) for c, w in _BASE_COMMUTATOR[head]}
    for c, w in _commute(rest):
        out.add((c.derive(head), w))
        out.add((c, (head,) + w))
    return frozenset(out)


@dataclass(frozen=True)
class CommuteTerm:
    coeff: PClass
    word: tuple

    def __str__(self):
        return f"{self.coeff}*{''.join(self.word) or '1'}"


def commute(word) -> list:
    """Expansion of ``[L, word]`` as a list of ``coeff * word`` terms."""
    word = tuple(word)
    bad = [d for d in word if d not in ALL_LETTERS]
    if bad:
        raise ValueError(f"unknown derivations {bad}")
    terms = [CommuteTerm(c, w) for c, w in _commute(word)]
    return sorted(terms, key=lambda t: (-len(t.word), t.word, t.coeff))


def pure_transversal_top(word, terms=None) -> list:
    """Terms of ``[L, word]`` whose operator has full length and only T letters."""
    word = tuple(word)
    terms = commute(word) if terms is None else terms
    return [t for t in terms if len(t.word) == len(word) and all(d in TRANSVERSAL for d in t.word)]


def lemma_violations(max_len: int, alphabet=LETTERS) -> list:
    """Words (up to ``max_len``) where the commutator lemma fails.

    The lemma states that every term of ``[L, d^k]`` has the form
    ``P(j, l) d^(k+1-j)`` with ``l <= k`` and that no top-order operator is
    purely transversal.
    """
    bad = []
    for k in range(1, max_len + 1):
        for word in itertools.product(alphabet, repeat=k):
            for t in commute(word):
                j = t.coeff.n
                if j + len(t.word) != k + 1 or t.coeff.k > k or j < 1:
                    bad.append((word, t, "order"))
            if pure_transversal_top(word):
                bad.append((word, pure_transversal_top(word)[0], "pure transversal"))
    return bad


# ---------------------------------------------------------------------------
# ledger and determination check
# ---------------------------------------------------------------------------

ORDER0_CORE = ("rho", "rho_inv", "v", "s", "X", "That", "Omega", "c", "c_inv", "Phi0", "Psi0")
STAGE_RANK = {"data": 0, "ODE": 1, "algebraic": 2, "frame ODE": 3, "tangential": 4, "closure": 5}


def load_ledger() -> dict:
    text = resources.files("charcone").joinpath("data/determination_ledger.json").read_text()
    return json.loads(text)


def qname(q: str, p: int) -> str:
    return q if p == 0 else f"Th^{p} {q}"


@dataclass
class Node:
    id: str
    tier: int
    stage: str
    kind: str
    determines: list = field(default_factory=list)
    refs: list = field(default_factory=list)
    self_refs: list = field(default_factory=list)
    sketch: list = field(default_factory=list)
    description: str = ""

    @property
    def key(self):
        return (self.tier, STAGE_RANK.get(self.stage, 9), self.id)


@dataclass
class DeterminationReport:
    passed: bool
    n: int
    K: int
    order: list
    nodes: dict
    problems: list

    def stage_of(self, quantity: str) -> Node:
        for node in self.nodes.values():
            if quantity in node.determines:
                return node
        raise KeyError(quantity)

    def consumers_of(self, quantity: str) -> list:
        owner = self.stage_of(quantity).id
        return [n.id for n in self.nodes.values() if owner in n.refs or f"tan {quantity}" in n.refs]

    def text(self) -> str:
        lines = [f"determination order for ord <= {self.n}, T-order <= {self.K}: {'PASS' if self.passed else 'FAIL'}"]
        for i, nid in enumerate(self.order):
            node = self.nodes[nid]
            pad = "  " * node.tier
            what = ", ".join(node.determines) if node.determines else ""
            lines.append(f"{i:4d} {pad}[T-order {node.tier} {node.stage}] {node.id}" + (f" -> {what}" if what else ""))
            if node.refs:
                lines.append(f"     {pad}    uses: {', '.join(node.refs)}")
            if node.sketch:
                lines.append(f"     {pad}    sketched only: {', '.join(node.sketch)}")
        lines += [f"problem: {p}" for p in self.problems]
        return "\n".join(lines)

    def graph(self) -> dict:
        return {
            "passed": self.passed,
            "max_ord": self.n,
            "max_T_order": self.K,
            "order": self.order,
            "nodes": {
                nid: {
                    "tier": nd.tier,
                    "stage": nd.stage,
                    "kind": nd.kind,
                    "determines": nd.determines,
                    "refs": nd.refs,
                    "self_refs": nd.self_refs,
                    "sketched": nd.sketch,
                }
                for nid, nd in self.nodes.items()
            },
            "problems": self.problems,
        }


class _Builder:
    """Instantiates ledger templates on demand."""

    def __init__(self, ledger: dict, max_stage: int):
        self.ledger = ledger
        self.max_stage = max_stage
        self.nodes: dict = {}
        self.owner: dict = {}  # quantity name -> node id
        self.overflow = False
        for e in ledger["order_zero"]:
            node = Node(e["id"], 0, e["stage"], e["kind"], list(e["determines"]), description=e.get("description", ""))
            for q in e["determines"]:
                self.owner[q] = node.id
            refs = []
            for r in e["refs"]:
                (node.self_refs if r in node.determines else refs).append(r)
            node.refs = refs
            self.nodes[node.id] = node
        # resolve order-zero refs to owners after all are registered
        for node in list(self.nodes.values()):
            node.refs = list(dict.fromkeys(self.owner[r] for r in node.refs))
        self._stage_done: set = set()

    # ---- quantities --------------------------------------------------------

    def _stage_for(self, q: str, p: int):
        """Template and k that determine ``That^p q``."""
        for e in self.ledger["stages"]:
            for d in e["determines"]:
                if d["q"] != q:
                    continue
                k = p - d["dk"]
                if k < 0 or ("only_k" in e and e["only_k"] != k):
                    continue
                return e, k
        return None, None

    def quantity(self, q: str, p: int) -> str | None:
        name = qname(q, p)
        if name in self.owner:
            return self.owner[name]
        e, k = self._stage_for(q, p)
        if e is None:
            return None
        if k > self.max_stage:
            self.overflow = True
            return None
        self._instantiate(e, k)
        return self.owner.get(name)

    def tangential(self, q: str, p: int) -> str | None:
        name = f"tan {qname(q, p)}"
        if name in self.nodes:
            return name
        src = self.quantity(q, p)
        if src is None:
            return None
        tier = self.nodes[src].tier
        self.nodes[name] = Node(name, tier, "tangential", "tangential", [], [src],
                                description="L and X_A derivatives of a quantity known on the cone")
        return name

    # ---- classes -----------------------------------------------------------

    def pclass(self, n: int, l: int) -> str:
        name = f"P[{n},{l}]"
        if name in self.nodes:
            return name
        if l > n + 1 or n < 0 or l < 0:
            raise ValueError(f"empty class {name}")
        node = Node(name, l, "closure", "closure", description="all schematic terms of this order and T-order")
        self.nodes[name] = node
        refs = []
        if l == 0:
            refs += [self.owner[q] for q in ORDER0_CORE] + [self.owner["wbar"]]
            if n >= 1:
                refs.append(self.pclass(n - 1, 0))
        else:
            if l - 1 <= n:
                refs.append(self.pclass(n, l - 1))
            refs += [self.quantity("kappa", l - 1), self.tangential("kappa", l - 1)]
            if n >= l:
                for q in ORDER0_CORE:
                    refs += [self.quantity(q, l), self.tangential(q, l)]
            if n - 1 >= l - 1 and n >= 1:
                refs.append(self.pclass(n - 1, l))
            if n >= 2 and (n, l) != (1, 1):
                # reordering That past L, X_A costs commutator coefficients
                refs.append(self.pclass(1, 1))
        missing = [r for r in refs if r is None]
        node.refs = list(dict.fromkeys(r for r in refs if r is not None))
        if missing:
            node.sketch.append("unresolved core quantity")
        return name

    # ---- templated stage entries --------------------------------------------

    def _instantiate(self, e: dict, k: int):
        nid = f"{e['id']}[k={k}]"
        if nid in self.nodes:
            return
        determines = [qname(d["q"], k + d["dk"]) for d in e["determines"]]
        node = Node(nid, k + 1, e["stage"], e["kind"], determines, description=e.get("description", ""))
        self.nodes[nid] = node
        for q in determines:
            self.owner[q] = nid
        refs, self_refs, sketch = [], [], []
        for r in e["refs"]:
            if "only_k" in r and r["only_k"] != k:
                continue
            if "class" in r:
                dn, dl = r["class"]
                refs.append(self.pclass(k + dn, k + dl))
                continue
            powers = [k + r["dk"]] if "dk" in r else range(r["from"], k + r["to_dk"] + 1)
            for p in powers:
                name = qname(r["q"], p)
                if name in determines and not r.get("tan"):
                    self_refs.append(name)
                    continue
                target = self.tangential(r["q"], p) if r.get("tan") else self.quantity(r["q"], p)
                if target is None:
                    node.sketch.append(f"unresolved {'tan ' if r.get('tan') else ''}{name}")
                    continue
                refs.append(target)
                if "sketch_from_k" in r and k >= r["sketch_from_k"]:
                    sketch.append(("tan " if r.get("tan") else "") + name)
        node.refs = list(dict.fromkeys(refs))
        node.self_refs = self_refs
        node.sketch += sketch


def determination_check(max_ord: int, max_T_order: int, ledger: dict | None = None, raise_on_fail: bool = True):
    """Instantiate the ledger and verify the determination order.

    Targets are all classes ``P[n, l]`` with ``n <= max_ord`` and
    ``l <= max_T_order``.  Passes when the dependency graph is acyclic,
    every reference has T-order at most that of the referring entry, and
    every ODE consumes only strictly lower T-orders besides its unknowns and
    the entropy normal derivatives assumed at that stage.
    """
    ledger = load_ledger() if ledger is None else ledger
    b = _Builder(ledger, max_stage=max_T_order + max_ord + 4)
    for k in range(max_T_order):
        for e in ledger["stages"]:
            if e.get("only_k", k) == k:
                b._instantiate(e, k)
    for l in range(max_T_order + 1):
        for n in range(max(0, l - 1), max_ord + 1):
            b.pclass(n, l)
    problems = []
    ts = TopologicalSorter({nid: set(nd.refs) for nid, nd in b.nodes.items()})
    try:
        ts.prepare()
    except CycleError as exc:
        cycle = list(exc.args[1]) if len(exc.args) > 1 else []
        if raise_on_fail:
            raise CyclicDependency("defining equations are circular: " + " -> ".join(cycle), cycle=cycle) from None
        return DeterminationReport(False, max_ord, max_T_order, [], b.nodes, [f"cycle {cycle}"])
    if b.overflow:
        msg = "the ledger references quantities of ever higher T-order (no well-founded order)"
        if raise_on_fail:
            raise CyclicDependency(msg)
        problems.append(msg)
    order = _stratified_order(b.nodes)
    pos = {nid: i for i, nid in enumerate(order)}
    for nid, nd in b.nodes.items():
        for r in nd.refs:
            if pos[r] >= pos[nid]:
                problems.append(f"{nid} uses {r} which is not determined earlier")
            if b.nodes[r].tier > nd.tier:
                problems.append(f"{nid} (T-order {nd.tier}) uses {r} of T-order {b.nodes[r].tier}")
        for s in nd.sketch:
            if s.startswith("unresolved"):
                problems.append(f"{nid}: {s}")
    rep = DeterminationReport(not problems, max_ord, max_T_order, order, b.nodes, problems)
    if problems and raise_on_fail and any("not determined earlier" in p for p in problems):
        raise CyclicDependency(problems[0])
    return rep


def _stratified_order(nodes: dict) -> list:
    """Topological order that prefers lower (T-order, stage, id) first."""
    indeg = {nid: 0 for nid in nodes}
    users: dict = {nid: [] for nid in nodes}
    for nid, nd in nodes.items():
        for r in set(nd.refs):
            indeg[nid] += 1
            users[r].append(nid)
    heap = [(nodes[nid].key, nid) for nid, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        _, nid = heapq.heappop(heap)
        out.append(nid)
        for u in users[nid]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(heap, (nodes[u].key, u))
    return out


def ode_inputs(report: DeterminationReport, entry: str, k: int) -> dict:
    """T-orders of everything an ODE entry consumes, besides its own unknowns."""
    node = report.nodes[f"{entry}[k={k}]"]
    return {r: report.nodes[r].tier for r in node.refs}
