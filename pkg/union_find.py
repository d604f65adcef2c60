"""
Disjoint-set forest over factor indices, with union by rank and path compression
"""

from collections import Counter
from typing import Dict, List


class UnionFind:
    """
    Examples
    --------
    >>> uf = UnionFind(4)
    >>> uf.union(0, 2)
    >>> uf.find(2) == uf.find(0)
    True
    >>> uf.components()
    [[0, 2], [1], [3]]
    """

    def __init__(self, size: int) -> None:
        self.parent: Dict[int, int] = {i: i for i in range(size)}
        self.rank: Dict[int, int] = Counter()

    def find(self, x: int) -> int:
        if self.parent[x] != x:
            self.parent[x] = self.find(self.parent[x])
        return self.parent[x]

    def union(self, x: int, y: int) -> None:
        px = self.find(x)
        py = self.find(y)

        if px == py:
            return

        if self.rank[px] == self.rank[py]:
            self.parent[py] = px
            self.rank[px] += 1
        elif self.rank[px] > self.rank[py]:
            self.parent[py] = px
        else:
            self.parent[px] = py

    def components(self) -> List[List[int]]:
        """Disjoint sets, each sorted, ordered by smallest member"""
        groups: Dict[int, List[int]] = {}
        for x in sorted(self.parent):
            groups.setdefault(self.find(x), []).append(x)
        return sorted(groups.values(), key=lambda members: members[0])
