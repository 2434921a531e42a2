"""A small weighted finite-state transducer library.

Label 0 is epsilon everywhere. Weights are negative log probabilities; the
tropical semiring combines paths with ``min`` and extends them with ``+``.
The log semiring is accepted by the constructors and by composition but has no
shortest-path.

Text format (one arc or final weight per line, tab separated)::

    src  dst  ilabel  olabel  weight
    state  weight

The source of the first line is the start state.
"""

from collections import deque, namedtuple

import numpy as np

from .errors import EmptyMachine, FormatError, SemiringError

EPSILON = 0
TROPICAL = "tropical"
LOG = "log"
SEMIRINGS = (TROPICAL, LOG)

Arc = namedtuple("Arc", "ilabel olabel weight nextstate")
ShortestPath = namedtuple("ShortestPath", "ilabels olabels weight")


class SymbolTable:
    """Bidirectional ``symbol <-> id`` map with ``<eps>`` fixed at 0."""

    def __init__(self, symbols=()):
        self._ids = {"<eps>": EPSILON}
        self._syms = ["<eps>"]
        for s in symbols:
            self.add(s)

    def add(self, symbol):
        if symbol not in self._ids:
            self._ids[symbol] = len(self._syms)
            self._syms.append(symbol)
        return self._ids[symbol]

    def id(self, symbol):
        return self._ids[symbol]

    def get(self, symbol, default=None):
        return self._ids.get(symbol, default)

    def symbol(self, idx):
        return self._syms[idx]

    def __contains__(self, symbol):
        return symbol in self._ids

    def __len__(self):
        return len(self._syms)

    def __iter__(self):
        return iter(self._syms)

    def encode(self, words):
        return [self._ids[w] for w in words]

    def decode(self, ids):
        return [self._syms[i] for i in ids if i != EPSILON]

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, s in enumerate(self._syms):
                f.write("%s\t%d\n" % (s, i))

    @classmethod
    def read(cls, path):
        table = cls()
        entries = []
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    sym, idx = line.rsplit("\t", 1)
                    entries.append((int(idx), sym))
                except ValueError:
                    raise FormatError("%s:%d: expected 'symbol<TAB>id'" % (path, n))
        entries.sort()
        for expected, (idx, sym) in enumerate(entries):
            if idx != expected:
                raise FormatError("%s: symbol ids must be dense from 0" % path)
            if idx == 0:
                continue
            table.add(sym)
        return table


class Wfst:
    def __init__(self, semiring=TROPICAL):
        if semiring not in SEMIRINGS:
            raise SemiringError("unknown semiring %r" % semiring)
        self.semiring = semiring
        self.arcs = []
        self.finals = {}
        self.start = None

    def add_state(self):
        self.arcs.append([])
        if self.start is None:
            self.start = len(self.arcs) - 1
        return len(self.arcs) - 1

    def add_states(self, n):
        return [self.add_state() for _ in range(n)]

    def add_arc(self, src, ilabel, olabel, weight, dst):
        weight = float(weight)
        if not np.isfinite(weight):
            raise ValueError("arc weight must be finite, got %r" % weight)
        if not (0 <= src < len(self.arcs) and 0 <= dst < len(self.arcs)):
            raise IndexError("arc %d -> %d references a missing state" % (src, dst))
        self.arcs[src].append(Arc(int(ilabel), int(olabel), weight, int(dst)))

    def set_final(self, state, weight=0.0):
        weight = float(weight)
        if not np.isfinite(weight):
            raise ValueError("final weight must be finite, got %r" % weight)
        self.finals[state] = weight

    def set_start(self, state):
        self.start = state

    def is_final(self, state):
        return state in self.finals

    @property
    def num_states(self):
        return len(self.arcs)

    @property
    def num_arcs(self):
        return sum(len(a) for a in self.arcs)

    def states(self):
        return range(len(self.arcs))

    def copy(self):
        out = Wfst(self.semiring)
        out.arcs = [list(a) for a in self.arcs]
        out.finals = dict(self.finals)
        out.start = self.start
        return out

    def map_arcs(self, fn, final_fn=None):
        out = Wfst(self.semiring)
        out.arcs = [[fn(a) for a in arcs] for arcs in self.arcs]
        out.finals = {s: (final_fn(w) if final_fn else w) for s, w in self.finals.items()}
        out.start = self.start
        return out

    def topological_order(self):
        """States in topological order, or ``None`` when the machine has a cycle."""
        n = self.num_states
        indeg = [0] * n
        for arcs in self.arcs:
            for a in arcs:
                indeg[a.nextstate] += 1
        ready = deque(s for s in range(n) if indeg[s] == 0)
        order = []
        while ready:
            s = ready.popleft()
            order.append(s)
            for a in self.arcs[s]:
                indeg[a.nextstate] -= 1
                if indeg[a.nextstate] == 0:
                    ready.append(a.nextstate)
        return order if len(order) == n else None

    def is_acyclic(self):
        return self.topological_order() is not None

    def __repr__(self):
        return "Wfst(%s, states=%d, arcs=%d)" % (self.semiring, self.num_states, self.num_arcs)

    # -- text serialization --------------------------------------------------

    def to_text(self):
        if self.start is None:
            return ""
        lines = []
        order = [self.start] + [s for s in self.states() if s != self.start]
        for s in order:
            for a in self.arcs[s]:
                lines.append("%d\t%d\t%d\t%d\t%r" % (s, a.nextstate, a.ilabel, a.olabel, a.weight))
            if s in self.finals:
                lines.append("%d\t%r" % (s, self.finals[s]))
        if not lines:
            # a start state with no arcs and no final weight still has to name the start
            lines.append("%d\t%r" % (self.start, float("inf")))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, semiring=TROPICAL):
        fst = cls(semiring)
        rows = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 5):
                raise FormatError("line %d: expected 2 or 5 tab-separated fields" % n)
            rows.append(fields)
        if not rows:
            return fst
        top = max(max(int(r[0]), int(r[1]) if len(r) == 5 else 0) for r in rows)
        fst.arcs = [[] for _ in range(top + 1)]
        fst.start = int(rows[0][0])
        for r in rows:
            if len(r) == 5:
                fst.add_arc(int(r[0]), int(r[2]), int(r[3]), float(r[4]), int(r[1]))
            elif np.isfinite(float(r[1])):
                fst.set_final(int(r[0]), float(r[1]))
        return fst

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def read(cls, path, semiring=TROPICAL):
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read(), semiring)


def linear_fst(ilabels, olabels=None, weight=0.0, semiring=TROPICAL):
    """Single-path machine; an acceptor when ``olabels`` is omitted."""
    olabels = ilabels if olabels is None else olabels
    if len(ilabels) != len(olabels):
        raise ValueError("input and output label sequences differ in length")
    fst = Wfst(semiring)
    prev = fst.add_state()
    for i, o in zip(ilabels, olabels):
        nxt = fst.add_state()
        fst.add_arc(prev, i, o, 0.0, nxt)
        prev = nxt
    fst.set_final(prev, weight)
    return fst


def identity_fst(labels, semiring=TROPICAL):
    """One-state machine accepting any string over ``labels``, mapping it to itself."""
    fst = Wfst(semiring)
    s = fst.add_state()
    for lab in labels:
        if lab != EPSILON:
            fst.add_arc(s, lab, lab, 0.0, s)
    fst.set_final(s, 0.0)
    return fst


def _times(a, b):
    return a + b


def compose(a, b, connect_result=True):
    """Composition ``a o b`` with the epsilon-matching filter.

    Filter state 0 allows any move; after ``a`` moves alone on an output
    epsilon (state 1) only ``a`` may keep moving alone; after ``b`` moves alone
    on an input epsilon (state 2) only ``b`` may. Both machines reading an
    epsilon at once is only allowed from state 0. Each pair of successful paths
    therefore appears exactly once in the result.
    """
    if a.semiring != b.semiring:
        raise SemiringError("cannot compose %s with %s" % (a.semiring, b.semiring))
    out = Wfst(a.semiring)
    if a.start is None or b.start is None:
        return out

    b_index = []
    for arcs in b.arcs:
        by_label = {}
        for arc in arcs:
            by_label.setdefault(arc.ilabel, []).append(arc)
        b_index.append(by_label)

    ids = {}
    todo = deque()

    def state(triple):
        sid = ids.get(triple)
        if sid is None:
            sid = ids[triple] = out.add_state()
            todo.append(triple)
        return sid

    out.start = state((a.start, b.start, 0))
    while todo:
        qa, qb, f = triple = todo.popleft()
        src = ids[triple]
        b_arcs = b_index[qb]
        b_eps = b_arcs.get(EPSILON, ())
        for ea in a.arcs[qa]:
            if ea.olabel == EPSILON:
                if f != 2:
                    dst = state((ea.nextstate, qb, 1))
                    out.arcs[src].append(Arc(ea.ilabel, EPSILON, ea.weight, dst))
                if f == 0:
                    for eb in b_eps:
                        dst = state((ea.nextstate, eb.nextstate, 0))
                        out.arcs[src].append(Arc(ea.ilabel, eb.olabel, _times(ea.weight, eb.weight), dst))
            else:
                for eb in b_arcs.get(ea.olabel, ()):
                    dst = state((ea.nextstate, eb.nextstate, 0))
                    out.arcs[src].append(Arc(ea.ilabel, eb.olabel, _times(ea.weight, eb.weight), dst))
        if f != 1:
            for eb in b_eps:
                dst = state((qa, eb.nextstate, 2))
                out.arcs[src].append(Arc(EPSILON, eb.olabel, eb.weight, dst))
        if qa in a.finals and qb in b.finals:
            out.finals[src] = _times(a.finals[qa], b.finals[qb])
    return connect(out) if connect_result else out


def project(fst, side="output"):
    if side not in ("input", "output"):
        raise ValueError("side must be 'input' or 'output'")
    if side == "input":
        return fst.map_arcs(lambda a: Arc(a.ilabel, a.ilabel, a.weight, a.nextstate))
    return fst.map_arcs(lambda a: Arc(a.olabel, a.olabel, a.weight, a.nextstate))


def invert(fst):
    return fst.map_arcs(lambda a: Arc(a.olabel, a.ilabel, a.weight, a.nextstate))


def scale_weights(fst, factor):
    """Multiply every arc and final weight by ``factor`` (an LM scale)."""
    factor = float(factor)
    return fst.map_arcs(lambda a: Arc(a.ilabel, a.olabel, a.weight * factor, a.nextstate),
                        lambda w: w * factor)


def connect(fst):
    """Drop states that are not both reachable from the start and able to reach a final."""
    out = Wfst(fst.semiring)
    if fst.start is None:
        return out
    seen = {fst.start}
    stack = [fst.start]
    while stack:
        s = stack.pop()
        for a in fst.arcs[s]:
            if a.nextstate not in seen:
                seen.add(a.nextstate)
                stack.append(a.nextstate)
    rev = [[] for _ in fst.states()]
    for s in fst.states():
        for a in fst.arcs[s]:
            rev[a.nextstate].append(s)
    alive = set()
    stack = [s for s in fst.finals if s in seen]
    alive.update(stack)
    while stack:
        s = stack.pop()
        for p in rev[s]:
            if p not in alive and p in seen:
                alive.add(p)
                stack.append(p)
    if fst.start not in alive:
        # no accepting path: keep a lone start state so the machine stays well formed
        out.add_state()
        return out
    keep = sorted(alive)
    remap = {s: i for i, s in enumerate(keep)}
    out.arcs = [[Arc(a.ilabel, a.olabel, a.weight, remap[a.nextstate])
                 for a in fst.arcs[s] if a.nextstate in remap] for s in keep]
    out.finals = {remap[s]: w for s, w in fst.finals.items() if s in remap}
    out.start = remap[fst.start]
    return out


def _suffix_better(cand, best, tol):
    """Compare ``(weight, olabels)`` pairs: lower weight, then lexicographically smaller labels."""
    if best is None:
        return True
    cw, co = cand
    bw, bo = best
    if cw < bw - tol:
        return True
    if cw > bw + tol:
        return False
    return co < bo


def shortest_path(fst, tol=1e-9):
    """Minimum-weight accepting path.

    Ties (weights within ``tol``) go to the lexicographically smallest output
    label sequence, epsilons removed. Works backwards from the final states so
    that comparing suffixes is enough to order complete paths.
    """
    if fst.semiring != TROPICAL:
        raise SemiringError("shortest_path needs the tropical semiring")
    if fst.start is None or not fst.finals:
        raise EmptyMachine("machine has no final state")
    n = fst.num_states
    best = [None] * n  # (weight, olabels tuple, ilabels tuple)
    order = fst.topological_order()

    def relax(s):
        cur = None
        if s in fst.finals:
            cur = (fst.finals[s], (), ())
        for a in fst.arcs[s]:
            nb = best[a.nextstate]
            if nb is None:
                continue
            o = nb[1] if a.olabel == EPSILON else (a.olabel,) + nb[1]
            i = nb[2] if a.ilabel == EPSILON else (a.ilabel,) + nb[2]
            cand = (a.weight + nb[0], o, i)
            if cur is None or _suffix_better(cand[:2], cur[:2], tol):
                cur = cand
        return cur

    if order is not None:
        for s in reversed(order):
            best[s] = relax(s)
    else:
        # label-correcting passes; fine for machines without negative cycles
        for _ in range(n + 1):
            changed = False
            for s in range(n):
                cur = relax(s)
                if cur is not None and (best[s] is None or _suffix_better(cur[:2], best[s][:2], tol)):
                    best[s] = cur
                    changed = True
            if not changed:
                break
    if best[fst.start] is None:
        raise EmptyMachine("no accepting path from the start state")
    w, o, i = best[fst.start]
    return ShortestPath(list(i), list(o), w)


def enumerate_paths(fst, max_paths=100000):
    """All ``(ilabels, olabels, weight)`` of an acyclic machine, epsilons removed."""
    if fst.start is None:
        return []
    if not fst.is_acyclic():
        raise ValueError("path enumeration needs an acyclic machine")
    paths = []
    stack = [(fst.start, (), (), 0.0)]
    while stack:
        s, ins, outs, w = stack.pop()
        if s in fst.finals:
            paths.append((ins, outs, w + fst.finals[s]))
            if len(paths) > max_paths:
                raise ValueError("more than %d paths" % max_paths)
        for a in fst.arcs[s]:
            stack.append((a.nextstate,
                          ins + ((a.ilabel,) if a.ilabel else ()),
                          outs + ((a.olabel,) if a.olabel else ()),
                          w + a.weight))
    return paths
