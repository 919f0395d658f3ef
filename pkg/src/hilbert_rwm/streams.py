"""Counter-based random streams keyed on (master_seed, replica, role).

Every replica owns independent Philox streams, so the draws a replica sees
never depend on how replicas are scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROLES = {"init": 0, "noise": 1, "accept": 2, "inner": 3, "reference": 4}


def stream(master_seed: int, replica: int, role: str, cell: int = 0) -> np.random.Generator:
    """Independent Philox generator for one (cell, replica, role) triple.

    ``cell`` separates experiment cells (e.g. different N) sharing a seed.
    """
    seq = np.random.SeedSequence(int(master_seed) % 2**64,
                                 spawn_key=(int(cell), int(replica), ROLES[role]))
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class ChainRng:
    """Random streams owned by one chain.

    ``init`` feeds the starting draw, ``noise`` the proposal normals
    (N per step) and ``accept`` the Metropolis uniforms (one per step).
    """

    init: np.random.Generator
    noise: np.random.Generator
    accept: np.random.Generator

    @classmethod
    def for_replica(cls, master_seed: int, replica: int = 0, cell: int = 0) -> "ChainRng":
        return cls(*(stream(master_seed, replica, r, cell) for r in ("init", "noise", "accept")))


def replica_rngs(master_seed: int, replicas: int, cell: int = 0) -> list[ChainRng]:
    return [ChainRng.for_replica(master_seed, i, cell) for i in range(replicas)]
