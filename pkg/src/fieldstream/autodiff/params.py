"""Named parameter registry and initialization."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Maps names to leaf Tensors; the unit of checkpointing and optimization.

    Iteration order is insertion order, which construction makes deterministic,
    so gradient maps and checkpoint layouts are reproducible.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        # C order always: in-place mutation through reshape(-1) views must work
        arr = np.array(value, dtype=self.dtype, order="C")
        t = Tensor(arr)
        self._params[name] = t
        return t

    def linear_init(self, name, shape, rng, fan_in=None):
        """Uniform +-1/sqrt(fan_in), the default for linear maps."""
        if fan_in is None:
            fan_in = shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def orthogonal_init(self, name, shape, rng, gain=1.0):
        """(Semi-)orthogonal matrix; preserves signal norms through deep stacks."""
        rows, cols = shape
        a = rng.standard_normal((max(rows, cols), min(rows, cols)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        m = q[:rows, :cols] if rows >= cols else q[:cols, :rows].T
        return self.add(name, gain * m)

    def identity_init(self, name, n):
        """Square identity; a learned map that starts as a pass-through."""
        return self.add(name, np.eye(n))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def state_arrays(self):
        """name -> array view of current values, in registration order."""
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, mapping):
        """Overwrite parameter values in place; shapes must match exactly."""
        missing = [n for n in self._params if n not in mapping]
        if missing:
            raise KeyError(f"missing parameters in state: {missing[:3]}")
        extra = [n for n in mapping if n not in self._params]
        if extra:
            raise KeyError(f"state has parameters the model lacks: {extra[:3]}")
        for name, t in self._params.items():
            arr = np.asarray(mapping[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r}: stored shape {arr.shape} != model shape {t.data.shape}"
                )
            t.data = arr.copy()
            t.grad = None
