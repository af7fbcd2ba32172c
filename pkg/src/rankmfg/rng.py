"""Counter-based random streams for reproducible population simulation.

Replication ``j`` of seed ``s`` owns a Philox key derived from (s, j).  Inside
that keyed stream, agent ``i`` owns the contiguous counter block
[i * block, (i + 1) * block) of 64-bit outputs, where ``block`` is the number
of draws an agent needs rounded up to a whole Philox counter (4 outputs).
Draw 0 of the block is the agent's initial state, draws 1..n_steps its
Brownian increments.  Any agent can therefore be generated alone, in any
order, by any worker, and yields the same numbers.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["GENERATOR", "agent_block", "stream_key", "agent_normals"]

GENERATOR = "numpy.Philox-4x64 keyed by SeedSequence(seed, replication); inverse-CDF normals"

_WORDS_PER_COUNTER = 4


def agent_block(n_steps: int) -> int:
    need = n_steps + 1
    return -(-need // _WORDS_PER_COUNTER) * _WORDS_PER_COUNTER


def stream_key(seed: int, replication: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed), int(replication)]).generate_state(2, np.uint64)


def agent_normals(seed: int, replication: int, first_agent: int, n_agents: int,
                  n_steps: int) -> np.ndarray:
    """Standard normals of agents first_agent .. first_agent + n_agents - 1.

    Returns shape (n_steps + 1, n_agents); row 0 seeds the initial states.
    """
    block = agent_block(n_steps)
    bitgen = np.random.Philox(key=stream_key(seed, replication))
    bitgen.advance(first_agent * block // _WORDS_PER_COUNTER)
    u = np.random.Generator(bitgen).random(n_agents * block)
    # random() maps to [0, 1); the zero outcome (probability 2^-53) is nudged inside
    u[u == 0.0] = np.finfo(float).tiny
    z = ndtri(u).reshape(n_agents, block)[:, : n_steps + 1]
    return np.ascontiguousarray(z.T)
