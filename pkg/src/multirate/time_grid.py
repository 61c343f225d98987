"""Two-level (macro / micro) time partitions with patch structure.

Node positions are stored as exact fractions of the horizon T so that the
coincidence test behind macro splitting never depends on rounding.  A
partition keeps the global sorted node list of each subdomain; the micro
nodes of macro interval n are the slice between the two macro nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

SUBDOMAINS = ("fluid", "solid")


@dataclass(frozen=True)
class TimePartition:
    T: float
    macro: tuple[Fraction, ...]
    fluid: tuple[Fraction, ...]
    solid: tuple[Fraction, ...]
    fluid_patches: tuple[tuple[int, ...], ...]
    solid_patches: tuple[tuple[int, ...], ...]
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    # -- sizes -----------------------------------------------------------
    @property
    def N(self) -> int:
        return len(self.macro) - 1

    @property
    def M(self) -> int:
        return len(self.fluid) - 1

    @property
    def L(self) -> int:
        return len(self.solid) - 1

    def nodes(self, which: str) -> tuple[Fraction, ...]:
        return getattr(self, which)

    def patches(self, which: str) -> tuple[tuple[int, ...], ...]:
        return getattr(self, f"{which}_patches")

    def times(self, which: str) -> np.ndarray:
        return np.array([self.T * float(s) for s in self.nodes(which)])

    def macro_times(self) -> np.ndarray:
        return np.array([self.T * float(s) for s in self.macro])

    def macro_slices(self, which: str) -> np.ndarray:
        """Index of every macro node inside the micro node list."""
        key = ("slices", which)
        if key not in self._index:
            pos = {s: i for i, s in enumerate(self.nodes(which))}
            self._index[key] = np.array([pos[s] for s in self.macro])
        return self._index[key]

    def micro_nodes(self, which: str, n: int) -> tuple[Fraction, ...]:
        """Micro nodes t^0..t^{M_n} of macro interval n (1-based)."""
        idx = self.macro_slices(which)
        return self.nodes(which)[idx[n - 1] : idx[n] + 1]

    def counts(self, which: str) -> np.ndarray:
        return np.diff(self.macro_slices(which))

    def interval_macro(self, which: str) -> np.ndarray:
        """Macro index (1-based) owning each micro interval."""
        return np.repeat(np.arange(1, self.N + 1), self.counts(which))

    def lengths(self, which: str) -> list[Fraction]:
        s = self.nodes(which)
        return [b - a for a, b in zip(s[:-1], s[1:])]

    def summary(self) -> tuple[int, int, int]:
        return self.N, self.M, self.L


def _tile(count: int) -> tuple[tuple[int, ...], ...]:
    pairs = [(i, i + 1) for i in range(0, count - 1, 2)]
    if count % 2:
        pairs.append((count - 1,))
    return tuple(pairs)


def uniform_partition(T: float, N: int, M: int, L: int) -> TimePartition:
    """Equidistant macro mesh with M fluid and L solid micro steps per macro step.

    Patches tile the global micro intervals left to right; with an odd total
    count the last interval stays unpaired and ``validate`` reports it.
    """
    for name, val in (("N", N), ("M", M), ("L", L)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    macro = tuple(Fraction(i, N) for i in range(N + 1))
    fluid = tuple(Fraction(i, N * M) for i in range(N * M + 1))
    solid = tuple(Fraction(i, N * L) for i in range(N * L + 1))
    return TimePartition(
        T=float(T),
        macro=macro,
        fluid=fluid,
        solid=solid,
        fluid_patches=_tile(N * M),
        solid_patches=_tile(N * L),
    )


def validate(p: TimePartition) -> list[str]:
    """Return every violated partition invariant; empty means valid."""
    out: list[str] = []
    for name in ("macro",) + SUBDOMAINS:
        s = p.nodes(name)
        if len(s) < 2:
            out.append(f"{name}: fewer than two nodes")
            continue
        if s[0] != 0 or s[-1] != 1:
            out.append(f"{name}: endpoints {s[0]}, {s[-1]} do not span [0, T]")
        for i, (a, b) in enumerate(zip(s[:-1], s[1:])):
            if not a < b:
                out.append(f"{name}: not strictly increasing at node {i + 1}")
    macro = set(p.macro)
    for which in SUBDOMAINS:
        missing = macro - set(p.nodes(which))
        if missing:
            out.append(f"{which}: macro nodes {sorted(missing)} missing from micro mesh")
    shared = (set(p.fluid) & set(p.solid)) - macro
    for t in sorted(shared):
        out.append(f"shared interior node {t} inside a macro interval")
    for which in SUBDOMAINS:
        lengths = p.lengths(which)
        seen: dict[int, int] = {}
        for k, patch in enumerate(p.patches(which)):
            for i in patch:
                if not 0 <= i < len(lengths):
                    out.append(f"{which}: patch {k} references missing interval {i}")
                    continue
                seen[i] = seen.get(i, 0) + 1
            if len(patch) == 1:
                out.append(f"{which}: unpaired interval {patch[0]}")
            elif len(patch) == 2:
                a, b = patch
                if b != a + 1:
                    out.append(f"{which}: patch {k} intervals {a}, {b} not adjacent")
                elif b < len(lengths) and lengths[a] != lengths[b]:
                    out.append(
                        f"{which}: unequal patch lengths {lengths[a]}, {lengths[b]} "
                        f"in patch {k}"
                    )
            else:
                out.append(f"{which}: patch {k} has {len(patch)} intervals")
        for i in range(len(lengths)):
            if seen.get(i, 0) != 1:
                out.append(f"{which}: interval {i} in {seen.get(i, 0)} patches")
    return out


@dataclass(frozen=True)
class MarkSet:
    fluid: frozenset = frozenset()
    solid: frozenset = frozenset()

    def of(self, which: str) -> frozenset:
        return getattr(self, which)

    def counts(self) -> tuple[int, int]:
        return len(self.fluid), len(self.solid)


def _bisect(nodes, patches, marks):
    lengths = len(nodes) - 1
    bad = [i for i in marks if not 0 <= i < lengths]
    if bad:
        raise ValueError(f"marks reference missing intervals {sorted(bad)}")
    closed = set(marks)
    for patch in patches:
        if closed.intersection(patch):
            closed.update(patch)
    new_nodes = [nodes[0]]
    new_index = []  # first new interval index of each old interval
    for i in range(lengths):
        a, b = nodes[i], nodes[i + 1]
        new_index.append(len(new_nodes) - 1)
        if i in closed:
            new_nodes.append((a + b) / 2)
        new_nodes.append(b)
    new_patches = []
    for patch in patches:
        if patch[0] in closed:
            for i in patch:
                j = new_index[i]
                new_patches.append((j, j + 1))
        else:
            new_patches.append(tuple(new_index[i] for i in patch))
    new_patches.sort()
    return tuple(new_nodes), tuple(new_patches), len(closed)


def refine(p: TimePartition, marks: MarkSet) -> TimePartition:
    """Bisect marked micro intervals, keep patches intact, split macro steps.

    A mark on one half of a patch marks the other half too.  Wherever a fluid
    and a solid micro node then coincide inside a macro interval, that macro
    interval is split at the common node.
    """
    fluid, fp, _ = _bisect(p.fluid, p.fluid_patches, marks.fluid)
    solid, spat, _ = _bisect(p.solid, p.solid_patches, marks.solid)
    macro = tuple(sorted(set(p.macro) | (set(fluid) & set(solid))))
    return TimePartition(
        T=p.T, macro=macro, fluid=fluid, solid=solid, fluid_patches=fp, solid_patches=spat
    )


def closed_marks(p: TimePartition, marks: MarkSet) -> MarkSet:
    """Marks after closure under patch pairing."""
    out = {}
    for which in SUBDOMAINS:
        closed = set(marks.of(which))
        for patch in p.patches(which):
            if closed.intersection(patch):
                closed.update(patch)
        out[which] = frozenset(closed)
    return MarkSet(**out)


# -- text serialisation -------------------------------------------------------


def to_text(p: TimePartition) -> str:
    """One line per macro interval: endpoints | fluid nodes | solid nodes.

    Patch lines follow, one per subdomain, as space separated ``i-j`` pairs.
    """
    lines = [f"# time-partition v1 T={p.T!r}"]
    for n in range(1, p.N + 1):
        a, b = p.macro[n - 1], p.macro[n]
        f = " ".join(str(s) for s in p.micro_nodes("fluid", n))
        s = " ".join(str(s) for s in p.micro_nodes("solid", n))
        lines.append(f"{a} {b} | {f} | {s}")
    for which in SUBDOMAINS:
        pairs = " ".join("-".join(str(i) for i in patch) for patch in p.patches(which))
        lines.append(f"patches {which} {pairs}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> TimePartition:
    T = None
    macro: list[Fraction] = []
    nodes = {"fluid": [], "solid": []}
    patches = {"fluid": (), "solid": ()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "T=" in line:
                T = float(line.split("T=", 1)[1])
            continue
        if line.startswith("patches"):
            _, which, *pairs = line.split()
            patches[which] = tuple(tuple(int(i) for i in s.split("-")) for s in pairs)
            continue
        try:
            ends, f, s = (part.split() for part in line.split("|"))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: expected three '|' separated fields") from exc
        a, b = Fraction(ends[0]), Fraction(ends[1])
        if not macro:
            macro.append(a)
        macro.append(b)
        for which, vals in (("fluid", f), ("solid", s)):
            vals = [Fraction(v) for v in vals]
            if vals[0] != a or vals[-1] != b:
                raise ValueError(f"line {lineno}: {which} nodes do not match macro endpoints")
            if not nodes[which]:
                nodes[which].append(vals[0])
            nodes[which].extend(vals[1:])
    if T is None:
        raise ValueError("missing header with T=")
    return TimePartition(
        T=T,
        macro=tuple(macro),
        fluid=tuple(nodes["fluid"]),
        solid=tuple(nodes["solid"]),
        fluid_patches=patches["fluid"],
        solid_patches=patches["solid"],
    )
