"""Tree-shaped region graphs.

A region graph alternates regions and partitions.  Regions split into one or
more candidate partitions; a partition splits its parent region's variables
among two or more child regions.  Which variables go where is not part of the
graph; that is decided by the scope assignment (see :mod:`bayspn.scope`).
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Invalid graph or training configuration."""


@dataclass(frozen=True)
class Region:
    id: int
    parent: int | None
    children: tuple[int, ...] = ()
    is_leaf: bool = True


@dataclass(frozen=True)
class Partition:
    id: int
    parent: int
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class GraphConfig:
    depth: int = 2
    num_partitions_per_region: int = 2
    children_per_partition: int = 2
    sums_per_region: int = 4
    leaves_per_region: int = 4

    def check(self):
        if self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if self.num_partitions_per_region < 1:
            raise ConfigError("num_partitions_per_region must be >= 1")
        if self.children_per_partition < 2:
            raise ConfigError("children_per_partition must be >= 2")
        if self.sums_per_region < 1:
            raise ConfigError("sums_per_region (J) must be >= 1")
        if self.leaves_per_region < 1:
            raise ConfigError("leaves_per_region (I) must be >= 1")
        return self


@dataclass
class RegionGraph:
    regions: list[Region]
    partitions: list[Partition]
    root: int
    num_dims: int
    _region_pos: dict = field(default=None, init=False, repr=False, compare=False)
    _partition_pos: dict = field(default=None, init=False, repr=False, compare=False)

    def region(self, rid):
        if self._region_pos is None:
            self._region_pos = {r.id: i for i, r in enumerate(self.regions)}
        return self.regions[self._region_pos[rid]]

    def partition(self, pid):
        if self._partition_pos is None:
            self._partition_pos = {p.id: i for i, p in enumerate(self.partitions)}
        return self.partitions[self._partition_pos[pid]]

    def partition_index(self, pid):
        self.partition(pid)
        return self._partition_pos[pid]

    def leaf_regions(self):
        return [r for r in self.regions if r.is_leaf]

    def path_to(self, kind, node_id):
        """Root-to-node path as ``(kind, id)`` pairs, excluding the node itself."""
        path = []
        if kind == "partition":
            rid = self.partition(node_id).parent
            path.append(("region", rid))
        else:
            rid = node_id
        while (parent := self.region(rid).parent) is not None:
            path.append(("partition", parent))
            rid = self.partition(parent).parent
            path.append(("region", rid))
        return path[::-1]

    def layers(self):
        """Regions grouped by distance (in region steps) from the root."""
        out = []
        frontier = [self.root]
        while frontier:
            out.append(frontier)
            nxt = []
            for rid in frontier:
                for pid in self.region(rid).children:
                    nxt.extend(self.partition(pid).children)
            frontier = nxt
        return out

    def to_dict(self):
        return {
            "root": self.root,
            "num_dims": self.num_dims,
            "regions": [
                {"id": r.id, "parent": r.parent, "children": list(r.children), "is_leaf": r.is_leaf}
                for r in self.regions
            ],
            "partitions": [
                {"id": p.id, "parent": p.parent, "children": list(p.children)}
                for p in self.partitions
            ],
        }

    @classmethod
    def from_dict(cls, data):
        regions = [
            Region(int(r["id"]), None if r["parent"] is None else int(r["parent"]),
                   tuple(int(c) for c in r["children"]), bool(r["is_leaf"]))
            for r in data["regions"]
        ]
        partitions = [
            Partition(int(p["id"]), int(p["parent"]), tuple(int(c) for c in p["children"]))
            for p in data["partitions"]
        ]
        return cls(regions, partitions, int(data["root"]), int(data["num_dims"]))


def build_region_graph(config: GraphConfig, num_dims: int) -> RegionGraph:
    """Layered builder with uniform arity.

    Every non-leaf region gets ``num_partitions_per_region`` partitions, every
    partition ``children_per_partition`` child regions, and regions at layer
    ``depth`` are leaves.  Ids are assigned breadth-first, so region 0 is the
    root and children of a node carry consecutive ids.
    """
    config.check()
    if num_dims < 1:
        raise ConfigError(f"num_dims must be >= 1, got {num_dims}")

    regions: list[dict] = [{"parent": None, "children": []}]
    partitions: list[dict] = []
    frontier = [0]
    for _ in range(config.depth):
        nxt = []
        for rid in frontier:
            for _ in range(config.num_partitions_per_region):
                pid = len(partitions)
                partitions.append({"parent": rid, "children": []})
                regions[rid]["children"].append(pid)
                for _ in range(config.children_per_partition):
                    cid = len(regions)
                    regions.append({"parent": pid, "children": []})
                    partitions[pid]["children"].append(cid)
                    nxt.append(cid)
        frontier = nxt

    return RegionGraph(
        regions=[
            Region(i, r["parent"], tuple(r["children"]), not r["children"])
            for i, r in enumerate(regions)
        ],
        partitions=[Partition(i, p["parent"], tuple(p["children"])) for i, p in enumerate(partitions)],
        root=0,
        num_dims=num_dims,
    )


def validate_region_graph(rg: RegionGraph) -> list[str]:
    """Return human-readable violations; an empty list means the graph is valid."""
    problems = []
    region_ids = Counter(r.id for r in rg.regions)
    partition_ids = Counter(p.id for p in rg.partitions)
    for rid, n in region_ids.items():
        if n > 1:
            problems.append(f"region {rid}: duplicate id")
    for pid, n in partition_ids.items():
        if n > 1:
            problems.append(f"partition {pid}: duplicate id")
    if rg.num_dims < 1:
        problems.append(f"graph: num_dims must be >= 1, got {rg.num_dims}")

    regions = {r.id: r for r in rg.regions}
    partitions = {p.id: p for p in rg.partitions}

    if rg.root not in regions:
        problems.append(f"region {rg.root}: root id does not exist")
        return problems

    # parent links
    roots = [r.id for r in rg.regions if r.parent is None]
    for rid in roots:
        if rid != rg.root:
            problems.append(f"region {rid}: has no parent but is not the root (multiple roots)")
    if regions[rg.root].parent is not None:
        problems.append(f"region {rg.root}: root must not have a parent")

    region_parent_count = Counter()
    partition_parent_count = Counter()
    for r in rg.regions:
        if r.is_leaf != (len(r.children) == 0):
            problems.append(f"region {r.id}: is_leaf flag disagrees with its {len(r.children)} children")
        for pid in r.children:
            if pid not in partitions:
                problems.append(f"region {r.id}: child partition {pid} does not exist")
                continue
            partition_parent_count[pid] += 1
            if partitions[pid].parent != r.id:
                problems.append(f"partition {pid}: parent field {partitions[pid].parent} disagrees with region {r.id}")
        if r.parent is not None and r.parent not in partitions:
            problems.append(f"region {r.id}: parent partition {r.parent} does not exist")
    for p in rg.partitions:
        if p.parent not in regions:
            problems.append(f"partition {p.id}: parent region {p.parent} does not exist")
        if len(p.children) < 2:
            problems.append(f"partition {p.id}: has {len(p.children)} child region(s), needs >= 2")
        for rid in p.children:
            if rid not in regions:
                problems.append(f"partition {p.id}: child region {rid} does not exist")
                continue
            region_parent_count[rid] += 1
            if regions[rid].parent != p.id:
                problems.append(f"region {rid}: parent field {regions[rid].parent} disagrees with partition {p.id}")

    for rid, n in region_parent_count.items():
        if n > 1:
            problems.append(f"region {rid}: not tree-shaped, has {n} parent partitions")
        if rid == rg.root:
            problems.append(f"region {rid}: root appears as a child")
    for pid, n in partition_parent_count.items():
        if n > 1:
            problems.append(f"partition {pid}: not tree-shaped, has {n} parent regions")
    for p in rg.partitions:
        if partition_parent_count[p.id] == 0:
            problems.append(f"partition {p.id}: not listed as a child of any region")

    # reachability / acyclicity
    seen_r, seen_p = set(), set()
    queue = deque([rg.root])
    while queue:
        rid = queue.popleft()
        if rid in seen_r:
            problems.append(f"region {rid}: reached twice (cycle or shared child)")
            continue
        seen_r.add(rid)
        for pid in regions[rid].children:
            if pid not in partitions or pid in seen_p:
                continue
            seen_p.add(pid)
            for cid in partitions[pid].children:
                if cid in regions:
                    queue.append(cid)
    for rid in regions:
        if rid not in seen_r:
            problems.append(f"region {rid}: unreachable from the root")
    for pid in partitions:
        if pid not in seen_p:
            problems.append(f"partition {pid}: unreachable from the root")
    return problems
