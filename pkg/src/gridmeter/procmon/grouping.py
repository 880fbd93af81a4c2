from __future__ import annotations

import os

from gridmeter.procmon.model import GroupingPolicy

ALL_GROUP = "all"
_INTERPRETERS = ("python", "perl", "ruby", "node", "java", "sh", "bash", "dash", "env")


def is_marked(command: str, marker: str) -> bool:
    return marker in command.split()


def application_name(command: str) -> str:
    """Best-effort program name: the script or module behind an interpreter."""
    tokens = command.split()
    if not tokens:
        return "?"
    if command.startswith("["):
        return command.strip("[]")  # kernel thread
    name = os.path.basename(tokens[0])
    if not name.startswith(_INTERPRETERS):
        return name
    rest = tokens[1:]
    if "-m" in rest and rest.index("-m") + 1 < len(rest):
        return rest[rest.index("-m") + 1]
    for tok in rest:
        if not tok.startswith("-"):
            return os.path.basename(tok)
    return name


def group_key(root, policy: GroupingPolicy) -> str:
    if policy is GroupingPolicy.AllManagedJobs:
        return ALL_GROUP
    if policy is GroupingPolicy.PerUser:
        return str(root.uid)
    return application_name(root.command)


def build_process_groups(snapshots, policy: GroupingPolicy, marker: str, sticky=None):
    """Map group id to the set of managed pids.

    A pid is managed if its command carries ``marker`` or it descends (via
    ppid) from a managed pid; it joins the group of its nearest marked
    ancestor. ``sticky`` is a pid -> group map carried between scans: pids
    already assigned keep their group even after being reparented, and the
    map is updated in place (entries for vanished pids are dropped).
    """
    procs = snapshots if isinstance(snapshots, dict) else {s.pid: s for s in snapshots}
    if sticky is not None:
        for pid in [p for p in sticky if p not in procs]:
            del sticky[pid]
    known = sticky if sticky is not None else {}
    resolved: dict[int, str | None] = {}

    def resolve(pid):
        chain = []
        result = None
        seen = set()
        while pid in procs and pid not in seen:
            if pid in resolved:
                result = resolved[pid]
                break
            seen.add(pid)
            chain.append(pid)
            if pid in known:
                result = known[pid]
                break
            snap = procs[pid]
            if is_marked(snap.command, marker):
                result = group_key(snap, policy)
                break
            pid = snap.ppid
        for p in chain:
            resolved[p] = result
        return result

    groups: dict[str, set[int]] = {}
    for pid in procs:
        g = resolve(pid)
        if g is not None:
            groups.setdefault(g, set()).add(pid)
            if sticky is not None:
                sticky[pid] = g
    return groups
