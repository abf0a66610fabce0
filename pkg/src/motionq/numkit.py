"""Shared numeric primitives: activations, deterministic RNG, named parameter
storage with gradient slots, and a finite-difference gradient checker.

Vectors are 1-D numpy arrays and matrices 2-D; no wrapper types. Tests run
everything in float64 (central differences are unusable at float32); training
may opt into float32 through the ParamStore dtype.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_finite",
    "sigmoid",
    "relu",
    "softplus",
    "cosine_sim",
    "cosine_sim_grad",
    "Rng",
    "sample_gaussian",
    "ParamStore",
    "grad_check",
]

COSINE_EPS = 1e-12


def check_finite(arr, name="array"):
    """Raise ValueError if arr holds NaN or Inf; return arr unchanged."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def sigmoid(x):
    """Numerically stable logistic function, 1 / (1 + exp(-x))."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))  # argument always <= 0, no overflow
    return np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    """log(1 + exp(x)) without overflow for large x."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def cosine_sim(a, b, eps=COSINE_EPS):
    """Cosine similarity of two equal-length vectors, clamped to [-1, 1].

    If either vector has norm below eps the result is defined as 0.0 (hidden
    features are exactly zero at initialization, so this case is reachable).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"cosine_sim expects equal-length vectors, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < eps or nb < eps:
        return 0.0
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


def cosine_sim_grad(a, b, eps=COSINE_EPS):
    """Cosine similarity plus its gradients w.r.t. both vectors.

    Returns (cos, d_cos/d_a, d_cos/d_b); the near-zero-norm guard returns zero
    gradients to match the constant-0 branch of cosine_sim.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"cosine_sim expects equal-length vectors, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < eps or nb < eps:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    c = float(np.dot(a, b) / (na * nb))
    da = b / (na * nb) - c * a / (na * na)
    db = a / (na * nb) - c * b / (nb * nb)
    return c, da, db


class Rng:
    """Seed-deterministic random stream.

    Fixed algorithm: a numpy PCG64 bit generator seeded with the integer seed,
    drawn through numpy.random.Generator (normals use the ziggurat method).
    The same seed yields the same stream on every platform; the test suite
    pins the seed-42 stream against a committed golden vector.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def shuffle(self, x):
        self._gen.shuffle(x)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def sample_gaussian(rng, mu, sigma):
    """Reparameterized Gaussian draw: mu + sigma * eps, eps ~ N(0, 1) per entry."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ValueError(f"mu/sigma shape mismatch: {mu.shape} vs {sigma.shape}")
    if np.any(sigma < 0):
        raise ValueError("sigma entries must be nonnegative")
    return mu + sigma * rng.normal(mu.shape)


class ParamStore:
    """Named tensors, each with a value slot and a same-shape gradient slot.

    Names are unique and whitespace-free. Values are registered once and then
    only mutated in place (optimizer steps, checkpoint loads, finite-difference
    perturbations), so modules may safely hold direct references to the arrays.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name, value):
        if name in self._values:
            raise ValueError(f"duplicate parameter name: {name}")
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"parameter names must be non-empty and whitespace-free: {name!r}")
        value = np.array(value, dtype=self.dtype)
        check_finite(value, name)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def value(self, name):
        return self._values[name]

    def grad(self, name):
        return self._grads[name]

    def names(self):
        return list(self._values.keys())

    def __contains__(self, name):
        return name in self._values

    def size(self):
        """Total number of scalar entries across all tensors."""
        return sum(v.size for v in self._values.values())

    def zero_grads(self):
        for g in self._grads.values():
            g[...] = 0.0

    def scale_grads(self, factor):
        for g in self._grads.values():
            g *= factor

    def first_nonfinite_grad(self):
        """Name of the first parameter with a non-finite gradient, or None."""
        for name, g in self._grads.items():
            if not np.all(np.isfinite(g)):
                return name
        return None

    def copy_values(self):
        return {name: v.copy() for name, v in self._values.items()}

    def load_values(self, mapping):
        """Assign values in place; names and shapes must match exactly."""
        if set(mapping) != set(self._values):
            missing = set(self._values) - set(mapping)
            extra = set(mapping) - set(self._values)
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in mapping.items():
            dst = self._values[name]
            arr = np.asarray(arr)
            if arr.shape != dst.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {dst.shape}")
            dst[...] = arr

    def save(self, path):
        with open(path, "w") as fh:
            write_tensors(fh, self._values)

    def load(self, path):
        with open(path) as fh:
            self.load_values(read_tensors(fh))


def write_tensors(fh, mapping):
    """Serialize name -> array to a text block.

    Layout: a header line ``tensors <count>``, then per tensor one line
    ``tensor <name> <dtype> <ndim> <dim0> <dim1> ...`` followed by the
    row-major payload as C99 hex floats (bit-exact round trip), eight per line.
    """
    fh.write(f"tensors {len(mapping)}\n")
    for name, arr in mapping.items():
        arr = np.asarray(arr)
        dims = " ".join(str(d) for d in arr.shape)
        fh.write(f"tensor {name} {arr.dtype.name} {arr.ndim} {dims}".rstrip() + "\n")
        flat = arr.reshape(-1)
        for start in range(0, flat.size, 8):
            fh.write(" ".join(float(v).hex() for v in flat[start:start + 8]) + "\n")


def read_tensors(fh):
    """Inverse of write_tensors."""
    head = fh.readline().split()
    if len(head) != 2 or head[0] != "tensors":
        raise ValueError("bad tensor block header")
    count = int(head[1])
    out = {}
    for _ in range(count):
        parts = fh.readline().split()
        if not parts or parts[0] != "tensor":
            raise ValueError("bad tensor header line")
        name, dtype, ndim = parts[1], parts[2], int(parts[3])
        shape = tuple(int(d) for d in parts[4:4 + ndim])
        n = int(np.prod(shape)) if shape else 1
        vals = []
        while len(vals) < n:
            vals.extend(float.fromhex(tok) for tok in fh.readline().split())
        out[name] = np.array(vals, dtype=np.dtype(dtype)).reshape(shape)
    return out


def grad_check(f, store, eps=1e-5, f_value=None):
    """Compare analytic gradients against central finite differences.

    f(store) must return a scalar loss and fill the store's gradient slots
    (the store is zeroed before each call). f_value, when given, is a cheaper
    forward-only variant used for the perturbed evaluations. f must be
    deterministic: freeze any RNG it consumes.

    Returns the maximum relative error |a - n| / max(|a|, |n|, 1e-8) over
    every parameter entry.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps out of range [1e-7, 1e-3]: {eps}")
    if f_value is None:
        f_value = f
    store.zero_grads()
    base = float(f(store))
    if not np.isfinite(base):
        raise FloatingPointError("loss is non-finite at the evaluation point")
    analytic = {name: store.grad(name).copy() for name in store.names()}
    worst = 0.0
    for name in store.names():
        flat = store.value(name).reshape(-1)
        aflat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + eps
            fp = float(f_value(store))
            flat[idx] = keep - eps
            fm = float(f_value(store))
            flat[idx] = keep
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"loss non-finite while perturbing {name}[{idx}]")
            numeric = (fp - fm) / (2.0 * eps)
            rel = abs(aflat[idx] - numeric) / max(abs(aflat[idx]), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst
