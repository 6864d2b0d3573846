"""Transition store for off-policy learning.

Each record keeps, besides the usual (s, a, s', r, d), the safety
controller's action at s, which the focus-weight update consumes later.
Storage is a preallocated ring; sampling is uniform with replacement from
the filled region and fully determined by the caller's generator.
"""

import numpy as np

from .errors import ConfigError
from .nets import load_checkpoint, save_checkpoint


class Batch:
    """Column-stacked transitions as contiguous float arrays."""

    def __init__(self, s, a, s2, r, d, a_reg):
        self.s = s
        self.a = a
        self.s2 = s2
        self.r = r
        self.d = d
        self.a_reg = a_reg

    def __len__(self):
        return self.s.shape[0]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions.

    d must be 1 only on safety-failure termination; time-limit truncation
    stores d=0 so the critic keeps bootstrapping through the cut.
    """

    def __init__(self, capacity, obs_dim, action_dim, dtype=np.float64):
        capacity = int(capacity)
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self._s = np.zeros((capacity, obs_dim), dtype=dtype)
        self._a = np.zeros((capacity, action_dim), dtype=dtype)
        self._s2 = np.zeros((capacity, obs_dim), dtype=dtype)
        self._r = np.zeros(capacity, dtype=dtype)
        self._d = np.zeros(capacity, dtype=dtype)
        self._a_reg = np.zeros((capacity, action_dim), dtype=dtype)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, s, a, s2, r, d, a_reg):
        d = float(d)
        if d not in (0.0, 1.0):
            raise ConfigError(f"terminal flag must be 0 or 1, got {d}")
        i = self._next
        self._s[i] = s
        self._a[i] = a
        self._s2[i] = s2
        self._r[i] = float(r)
        self._d[i] = d
        self._a_reg[i] = a_reg
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self._size < 1:
            raise ConfigError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=int(batch_size))
        return Batch(self._s[idx].copy(), self._a[idx].copy(),
                     self._s2[idx].copy(), self._r[idx].copy(),
                     self._d[idx].copy(), self._a_reg[idx].copy())

    def dump(self, path):
        """Persist the filled region for post-hoc analysis."""
        n = self._size
        order = (np.arange(n) if n < self.capacity
                 else (self._next + np.arange(n)) % self.capacity)
        save_checkpoint(path, {
            "s": self._s[order], "a": self._a[order], "s2": self._s2[order],
            "r": self._r[order], "d": self._d[order],
            "a_reg": self._a_reg[order], "capacity": self.capacity,
        })

    @classmethod
    def load(cls, path):
        data = load_checkpoint(path)
        s, a = data["s"], data["a"]
        buf = cls(int(data["capacity"]), s.shape[1], a.shape[1], dtype=s.dtype)
        for i in range(s.shape[0]):
            buf.push(s[i], a[i], data["s2"][i], data["r"][i], data["d"][i],
                     data["a_reg"][i])
        return buf
