"""Allocation policies for users and capacitated servers on a line.

Unidirectional policies (users only take servers at or to their right):

* :func:`mtr` -- Move To Right: users, scanned left to right, take the
  leftmost server with spare capacity at or right of them (FIFO).
* :func:`ugs` -- Unidirectional Gale-Shapley: every user emits a ray to
  the right simultaneously; a ray claims the first server it reaches that
  still has spare capacity (LIFO at each server).

Bidirectional policies:

* :func:`gale_shapley` -- repeatedly match mutually nearest user/slot pairs.
* :func:`optimal_dp` -- minimum total distance by the banded dynamic
  program over capacity slots; :func:`brute_force_optimal` is an exhaustive
  oracle for small instances.

A server of capacity ``c`` is treated as ``c`` co-located unit slots wherever
slots are needed. Exact ties are broken by lower user index, then lower
server (slot) index.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleInstanceError

__all__ = [
    "SpatialInstance",
    "Assignment",
    "LoadProfile",
    "mtr",
    "ugs",
    "ugs_events",
    "gale_shapley",
    "gale_shapley_rounds",
    "optimal_dp",
    "optimal_cost",
    "optimal_cost_heap",
    "brute_force_optimal",
    "load_profile",
    "gs_worst_case",
    "read_instance_csv",
    "write_instance_csv",
    "write_assignment_csv",
    "POLICIES",
]

UNMATCHED = -1


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpatialInstance:
    users: np.ndarray
    servers: np.ndarray
    capacities: np.ndarray = None

    def __post_init__(self):
        users = _frozen(self.users, float)
        servers = _frozen(self.servers, float)
        caps = self.capacities
        caps = np.ones(len(servers), dtype=np.int64) if caps is None else np.broadcast_to(
            np.asarray(caps, dtype=np.int64), servers.shape
        )
        caps = _frozen(caps, np.int64)
        for name, arr in (("users", users), ("servers", servers)):
            if np.any(np.diff(arr) < 0):
                raise ValueError(f"{name} positions must be sorted nondecreasing")
            if len(arr) and (arr[0] < 0 or not np.all(np.isfinite(arr))):
                raise ValueError(f"{name} positions must be finite and >= 0")
        if np.any(caps < 1):
            raise ValueError("capacities must be positive integers")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "servers", servers)
        object.__setattr__(self, "capacities", caps)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def total_capacity(self) -> int:
        return int(self.capacities.sum())

    def slots(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit-capacity slots: ``(positions, owning server index)``, sorted."""
        owner = np.repeat(np.arange(self.n_servers), self.capacities)
        return self.servers[owner], owner

    def subset_users(self, mask) -> "SpatialInstance":
        return SpatialInstance(self.users[mask], self.servers, self.capacities)


@dataclass(frozen=True, eq=False)
class Assignment:
    """Per-user server index (``-1`` when unmatched) and distance (NaN when unmatched)."""

    match: np.ndarray
    distances: np.ndarray
    policy: str
    slot: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_match(cls, inst: SpatialInstance, match, policy: str, slot=None) -> "Assignment":
        match = np.asarray(match, dtype=np.int64)
        d = np.full(len(match), np.nan)
        ok = match >= 0
        d[ok] = np.abs(inst.servers[match[ok]] - inst.users[ok])
        return cls(match, d, policy, None if slot is None else np.asarray(slot, dtype=np.int64))

    @property
    def matched(self) -> np.ndarray:
        return self.match >= 0

    @property
    def n_matched(self) -> int:
        return int(np.count_nonzero(self.matched))

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.distances[self.matched]))

    @property
    def mean_distance(self) -> float:
        n = self.n_matched
        return self.total_cost / n if n else math.nan

    def server_loads(self, n_servers: int) -> np.ndarray:
        return np.bincount(self.match[self.matched], minlength=n_servers)


# ---------------------------------------------------------------------------
# unidirectional


def mtr(inst: SpatialInstance) -> Assignment:
    """Move To Right.

    With servers expanded to slots, user ``i`` lands on slot
    ``m_i = max(m_{i-1} + 1, f_i)`` where ``f_i`` is the first slot at or
    right of the user, i.e. ``m_i = i + max_{k<=i}(f_k - k)``.
    """
    slot_pos, owner = inst.slots()
    n = inst.n_users
    if n == 0:
        return Assignment.from_match(inst, np.zeros(0, dtype=np.int64), "mtr", np.zeros(0))
    f = np.searchsorted(slot_pos, inst.users, side="left")
    idx = np.arange(n)
    m = np.maximum.accumulate(f - idx) + idx
    ok = m < len(slot_pos)
    match = np.full(n, UNMATCHED, dtype=np.int64)
    match[ok] = owner[m[ok]]
    slot = np.where(ok, m, UNMATCHED)
    return Assignment.from_match(inst, match, "mtr", slot)


def ugs(inst: SpatialInstance) -> Assignment:
    """Unidirectional Gale-Shapley via a stack of waiting users.

    Rays reach a server in order of increasing distance, so at each server
    the nearest waiting users (top of the stack) claim its capacity.
    """
    users = inst.users
    nu = inst.n_users
    match = np.full(nu, UNMATCHED, dtype=np.int64)
    stack: list[int] = []
    ui = 0
    for j, (s, cap) in enumerate(zip(inst.servers.tolist(), inst.capacities.tolist())):
        while ui < nu and users[ui] <= s:
            stack.append(ui)
            ui += 1
        take = min(cap, len(stack))
        if take == 0:
            continue
        cut = len(stack) - take
        if cut > 0 and users[stack[cut - 1]] == users[stack[cut]]:
            # a group of co-located users straddles the cut: lower indices win
            pos = users[stack[cut]]
            a = cut - 1
            while a > 0 and users[stack[a - 1]] == pos:
                a -= 1
            b = cut
            while b < len(stack) and users[stack[b]] == pos:
                b += 1
            need = take - (len(stack) - b)
            chosen = stack[a : a + need] + stack[b:]
            del stack[b:]
            del stack[a : a + need]
        else:
            chosen = stack[cut:]
            del stack[cut:]
        match[chosen] = j
    return Assignment.from_match(inst, match, "ugs")


def ugs_events(inst: SpatialInstance) -> Assignment:
    """Reference UGS: process all (user, server) crossings by distance. Quadratic."""
    users, servers = inst.users, inst.servers
    events = [
        (servers[j] - users[i], i, j)
        for i in range(inst.n_users)
        for j in range(inst.n_servers)
        if servers[j] >= users[i]
    ]
    events.sort()
    left = inst.capacities.astype(int).tolist()
    match = np.full(inst.n_users, UNMATCHED, dtype=np.int64)
    for _, i, j in events:
        if match[i] == UNMATCHED and left[j] > 0:
            match[i] = j
            left[j] -= 1
    return Assignment.from_match(inst, match, "ugs")


# ---------------------------------------------------------------------------
# Gale-Shapley (bidirectional)


def gale_shapley(inst: SpatialInstance) -> Assignment:
    """Stable matching under distance preferences.

    Preferences derive from one strict ranking of pairs, ``(distance, user,
    slot)``, so the stable matching is unique and equals greedy
    closest-pair-first. The closest remaining pair is always inside one
    position group or between adjacent groups, which keeps the heap small.
    """
    slot_pos, owner = inst.slots()
    users = inst.users
    # position groups holding remaining users / slots in increasing index order
    pos = np.unique(np.concatenate([users, slot_pos]))
    ng = len(pos)
    g_users = [[] for _ in range(ng)]
    g_slots = [[] for _ in range(ng)]
    for i, g in enumerate(np.searchsorted(pos, users).tolist()):
        g_users[g].append(i)
    for q, g in enumerate(np.searchsorted(pos, slot_pos).tolist()):
        g_slots[g].append(q)
    uptr = [0] * ng
    sptr = [0] * ng
    prev = list(range(-1, ng - 1))
    nxt = list(range(1, ng + 1))
    nxt[-1:] = [-1] if ng else []
    posl = pos.tolist()

    def umin(g):
        return g_users[g][uptr[g]] if uptr[g] < len(g_users[g]) else None

    def smin(g):
        return g_slots[g][sptr[g]] if sptr[g] < len(g_slots[g]) else None

    heap: list[tuple] = []

    def push_within(g):
        u, q = umin(g), smin(g)
        if u is not None and q is not None:
            heapq.heappush(heap, (0.0, u, q, g, g))

    def push_between(a, b):
        if a < 0 or b < 0:
            return
        d = posl[b] - posl[a]
        u, q = umin(a), smin(b)
        if u is not None and q is not None:
            heapq.heappush(heap, (d, u, q, a, b))
        u, q = umin(b), smin(a)
        if u is not None and q is not None:
            heapq.heappush(heap, (d, u, q, b, a))

    for g in range(ng):
        push_within(g)
        if nxt[g] >= 0:
            push_between(g, nxt[g])

    match = np.full(inst.n_users, UNMATCHED, dtype=np.int64)
    slot_of = np.full(inst.n_users, UNMATCHED, dtype=np.int64)
    slot_used = np.zeros(len(slot_pos), dtype=bool)
    remaining = inst.n_users
    while heap and remaining:
        d, u, q, gu, gs = heapq.heappop(heap)
        if match[u] != UNMATCHED or slot_used[q]:
            continue
        match[u] = owner[q]
        slot_of[u] = q
        slot_used[q] = True
        remaining -= 1
        uptr[gu] += 1
        sptr[gs] += 1
        for g in {gu, gs}:
            if umin(g) is None and smin(g) is None:
                p, n = prev[g], nxt[g]
                if p >= 0:
                    nxt[p] = n
                if n >= 0:
                    prev[n] = p
                push_between(p, n)
            else:
                push_within(g)
                push_between(prev[g], g)
                push_between(g, nxt[g])
    return Assignment.from_match(inst, match, "gs", slot_of)


def gale_shapley_rounds(inst: SpatialInstance) -> Assignment:
    """Reference GS by literal rounds of mutual-nearest removal. Small instances only."""
    slot_pos, owner = inst.slots()
    users = inst.users
    free_u = list(range(inst.n_users))
    free_s = list(range(len(slot_pos)))
    match = np.full(inst.n_users, UNMATCHED, dtype=np.int64)
    slot_of = np.full(inst.n_users, UNMATCHED, dtype=np.int64)
    while free_u and free_s:
        best_s = {u: min(free_s, key=lambda q: (abs(users[u] - slot_pos[q]), q)) for u in free_u}
        best_u = {q: min(free_u, key=lambda u: (abs(users[u] - slot_pos[q]), u)) for q in free_s}
        pairs = [(u, q) for u, q in best_s.items() if best_u[q] == u]
        if not pairs:
            break
        for u, q in pairs:
            match[u] = owner[q]
            slot_of[u] = q
        done_u = {u for u, _ in pairs}
        done_s = {q for _, q in pairs}
        free_u = [u for u in free_u if u not in done_u]
        free_s = [q for q in free_s if q not in done_s]
    return Assignment.from_match(inst, match, "gs", slot_of)


# ---------------------------------------------------------------------------
# optimal (bidirectional)


def _dp_rows(users: np.ndarray, slots: np.ndarray, keep_argmin: bool):
    nr, ns = len(users), len(slots)
    w = ns - nr
    cols = np.arange(w + 1)
    prev = np.zeros(w + 1)
    back = np.empty((nr, w + 1), dtype=np.int32) if keep_argmin else None
    for i in range(nr):
        cand = np.abs(slots[i : i + w + 1] - users[i]) + prev
        row = np.minimum.accumulate(cand)
        if keep_argmin:
            # ties go to the later slot, as in the reference recurrence
            back[i] = np.maximum.accumulate(np.where(cand <= row, cols, -1))
        prev = row
    return prev, back


def optimal_dp(inst: SpatialInstance) -> Assignment:
    """Minimum-total-distance assignment by the banded dynamic program.

    ``C[i, j] = min(C[i, j-1], d[i, j] + C[i-1, j-1])`` over slots, with
    ``j`` restricted to ``[i, i + |S| - |R|]``. Runs in
    ``O(|R| (|S| - |R| + 1))`` time; the result never has crossing pairs.
    """
    slot_pos, owner = inst.slots()
    nr, ns = inst.n_users, len(slot_pos)
    if nr > ns:
        raise InfeasibleInstanceError(f"{nr} users exceed total capacity {ns}")
    if nr == 0:
        return Assignment.from_match(inst, np.zeros(0, dtype=np.int64), "optimal", np.zeros(0))
    _, back = _dp_rows(inst.users, slot_pos, keep_argmin=True)
    slot = np.empty(nr, dtype=np.int64)
    k = ns - nr
    for i in range(nr - 1, -1, -1):
        k = int(back[i, k])
        slot[i] = i + k
    return Assignment.from_match(inst, owner[slot], "optimal", slot)


def optimal_cost(inst: SpatialInstance) -> float:
    """Optimal total distance only; memory ``O(|S| - |R|)``."""
    slot_pos, _ = inst.slots()
    nr, ns = inst.n_users, len(slot_pos)
    if nr > ns:
        raise InfeasibleInstanceError(f"{nr} users exceed total capacity {ns}")
    if nr == 0:
        return 0.0
    row, _ = _dp_rows(inst.users, slot_pos, keep_argmin=False)
    return float(row[-1])


def optimal_cost_heap(inst: SpatialInstance) -> float:
    """Optimal total distance in ``O(n log n)`` by left-to-right exchange heaps.

    Each user provisionally takes the cheapest option among free slots to
    its left and exchanges offered by earlier decisions; each slot may take
    over an earlier user when that lowers the cost, leaving an undo option
    behind. Costs carry an explicit count of "no slot yet" penalties so the
    arithmetic stays exact.
    """
    slot_pos, _ = inst.slots()
    nr, ns = inst.n_users, len(slot_pos)
    if nr > ns:
        raise InfeasibleInstanceError(f"{nr} users exceed total capacity {ns}")
    users = inst.users.tolist()
    slots = slot_pos.tolist()
    # (penalty count, value): cost of an option is penalty * BIG + value + position
    user_opts: list[tuple[int, float]] = []  # a slot at y takes the option at y + u
    slot_opts: list[tuple[int, float]] = []  # a user at x takes the option at x + v
    pen, total = 0, 0.0
    i = j = 0
    while i < nr or j < ns:
        if j >= ns or (i < nr and users[i] < slots[j]):
            x = users[i]
            i += 1
            k, v = heapq.heappop(slot_opts) if slot_opts else (1, 0.0)
            pen += k
            total += x + v
            heapq.heappush(user_opts, (-k, -v - 2 * x))
        else:
            y = slots[j]
            j += 1
            if user_opts and (user_opts[0][0] < 0 or (user_opts[0][0] == 0 and user_opts[0][1] + y < 0)):
                k, u = heapq.heappop(user_opts)
                pen += k
                total += y + u
                heapq.heappush(slot_opts, (-k, -u - 2 * y))
                heapq.heappush(user_opts, (0, -y))
            else:
                heapq.heappush(slot_opts, (0, -y))
    if pen != 0:
        raise InfeasibleInstanceError("no capacity-feasible assignment")
    return float(total)


def brute_force_optimal(inst: SpatialInstance, max_users: int = 8) -> Assignment:
    """Exhaustive branch-and-bound over capacity-feasible assignments."""
    nr = inst.n_users
    if nr > max_users:
        raise ValueError(f"brute force limited to {max_users} users, got {nr}")
    if nr > inst.total_capacity:
        raise InfeasibleInstanceError(f"{nr} users exceed total capacity {inst.total_capacity}")
    users = inst.users.tolist()
    servers = inst.servers.tolist()
    dist = [[abs(u - s) for s in servers] for u in users]
    nearest = [min(row) if row else math.inf for row in dist]
    suffix = [0.0] * (nr + 1)
    for i in range(nr - 1, -1, -1):
        suffix[i] = suffix[i + 1] + nearest[i]
    left = inst.capacities.astype(int).tolist()
    best = [math.inf, None]
    cur = [0] * nr

    def dfs(i, cost):
        if cost + suffix[i] >= best[0]:
            return
        if i == nr:
            best[0] = cost
            best[1] = list(cur)
            return
        for j in sorted(range(len(servers)), key=dist[i].__getitem__):
            if left[j]:
                left[j] -= 1
                cur[i] = j
                dfs(i + 1, cost + dist[i][j])
                left[j] += 1

    if nr == 0:
        return Assignment.from_match(inst, np.zeros(0, dtype=np.int64), "brute")
    dfs(0, 0.0)
    return Assignment.from_match(inst, np.array(best[1]), "brute")


POLICIES = {
    "mtr": mtr,
    "ugs": ugs,
    "gs": gale_shapley,
    "optimal": optimal_dp,
}


# ---------------------------------------------------------------------------
# load profile


@dataclass(frozen=True, eq=False)
class LoadProfile:
    """Piecewise-constant ``N_x``: ``values[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray
    busy_cycles: np.ndarray  # shape (n, 2): [start, end]

    def __eq__(self, other):
        if not isinstance(other, LoadProfile):
            return NotImplemented
        return (
            np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.busy_cycles, other.busy_cycles)
        )

    def at(self, x):
        k = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.where(k >= 0, self.values[np.maximum(k, 0)], 0)

    def integral(self, a: float = -math.inf, b: float = math.inf) -> float:
        """``int_a^b N_x dx``."""
        if len(self.breakpoints) < 2:
            return 0.0
        lo = np.clip(self.breakpoints[:-1], a, b)
        hi = np.clip(self.breakpoints[1:], a, b)
        return float(np.sum(self.values[:-1] * (hi - lo)))

    def cycle_of(self, x) -> np.ndarray:
        """Index of the busy cycle containing each position (``-1`` if none)."""
        x = np.asarray(x, dtype=float)
        if len(self.busy_cycles) == 0:
            return np.full(x.shape, -1)
        k = np.searchsorted(self.busy_cycles[:, 0], x, side="right") - 1
        inside = (k >= 0) & (x < self.busy_cycles[np.maximum(k, 0), 1])
        return np.where(inside, k, -1)


def load_profile(inst: SpatialInstance, a: Assignment) -> LoadProfile:
    """``N_x = #{matched i : r_i <= x < s_eta(i)}`` with its busy cycles."""
    ok = a.matched
    r = inst.users[ok]
    s = inst.servers[a.match[ok]]
    if np.any(s < r):
        raise ValueError("load profile is defined for unidirectional assignments only")
    pos = np.concatenate([r, s])
    delta = np.concatenate([np.ones(len(r), dtype=np.int64), -np.ones(len(s), dtype=np.int64)])
    if len(pos) == 0:
        empty = np.zeros(0)
        return LoadProfile(empty, np.zeros(0, dtype=np.int64), np.zeros((0, 2)))
    bp, inv = np.unique(pos, return_inverse=True)
    step = np.bincount(inv, weights=delta, minlength=len(bp)).astype(np.int64)
    vals = np.cumsum(step)
    keep = np.concatenate([[True], vals[1:] != vals[:-1]]) & (step != 0)
    if not keep[0] and step[0] == 0:
        keep[0] = False
    bp, vals = bp[keep], vals[keep]
    prev = np.concatenate([[0], vals[:-1]])
    starts = bp[(prev == 0) & (vals > 0)]
    ends = bp[(prev > 0) & (vals == 0)]
    cycles = np.column_stack([starts, ends]) if len(starts) else np.zeros((0, 2))
    return LoadProfile(bp, vals, cycles)


# ---------------------------------------------------------------------------
# constructions and I/O


def gs_worst_case(t: int, slack: float = 1e-2) -> SpatialInstance:
    """Layout on which greedy mutual-nearest matching is far from optimal.

    Level 1 is one user and one server at distance 1. Level ``t`` is two
    copies of level ``t-1`` separated by a gap just below the span of a
    copy, so Gale-Shapley pairs the inner ends first and leaves the two
    outer points to be matched across the whole layout. ``2**(t-1)`` users;
    the optimal cost stays ``2**(t-1)`` while the greedy cost grows roughly
    like ``3**t``.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    pts = [(0.0, "u"), (1.0, "s")]
    for _ in range(2, t + 1):
        span = pts[-1][0] - pts[0][0]
        gap = span - slack
        shift = span + gap
        pts = pts + [(p + shift, kind) for p, kind in pts]
    users = [p for p, k in pts if k == "u"]
    servers = [p for p, k in pts if k == "s"]
    return SpatialInstance(np.array(users), np.array(servers))


def read_instance_csv(path) -> SpatialInstance:
    """Read ``role,position,capacity`` rows (capacity ignored for users)."""
    users, servers, caps = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"role", "position"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected a header with role,position[,capacity]")
        for lineno, row in enumerate(reader, start=2):
            role = (row.get("role") or "").strip().lower()
            try:
                x = float(row["position"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: bad position {row.get('position')!r}") from None
            if role == "user":
                users.append(x)
            elif role == "server":
                cap = (row.get("capacity") or "").strip()
                try:
                    caps.append(int(cap) if cap else 1)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad capacity {cap!r}") from None
                servers.append(x)
            else:
                raise ValueError(f"{path}:{lineno}: role must be 'user' or 'server', got {role!r}")
    users_arr = np.sort(np.array(users, dtype=float))
    order = np.argsort(np.array(servers, dtype=float), kind="stable")
    return SpatialInstance(
        users_arr, np.array(servers, dtype=float)[order], np.array(caps, dtype=np.int64)[order]
    )


def write_instance_csv(path, inst: SpatialInstance) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["role", "position", "capacity"])
        for x in inst.users.tolist():
            w.writerow(["user", repr(x), ""])
        for x, c in zip(inst.servers.tolist(), inst.capacities.tolist()):
            w.writerow(["server", repr(x), c])


def write_assignment_csv(fh_or_path, inst: SpatialInstance, a: Assignment) -> None:
    """Columns ``user_index,user_pos,server_index,server_pos,distance``; blanks when unmatched."""
    own = isinstance(fh_or_path, (str, Path))
    fh = open(fh_or_path, "w", newline="") if own else fh_or_path
    try:
        w = csv.writer(fh)
        w.writerow(["user_index", "user_pos", "server_index", "server_pos", "distance"])
        for i, (x, j, d) in enumerate(zip(inst.users.tolist(), a.match.tolist(), a.distances.tolist())):
            if j >= 0:
                w.writerow([i, repr(x), j, repr(float(inst.servers[j])), repr(d)])
            else:
                w.writerow([i, repr(x), "", "", ""])
    finally:
        if own:
            fh.close()
