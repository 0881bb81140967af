"""Concrete probability-space realization: torus shifts, sampling, averaging.

The sample space is the flat torus [0,1)^dim carrying Lebesgue probability.
A dim-parameter group of shifts acts by

    tau(y) omega = omega + A y  (mod 1)   on the active coordinates,

where A is the shift matrix and coordinates flagged by ``invariant_mask``
are never moved. The group law and measure invariance hold exactly in this
realization, the stochastic derivative along direction i becomes the
ordinary directional derivative along A e_i, and the invariant functions
are exactly the functions of the masked coordinates. An empty mask gives
the ergodic regime (averages collapse to constants); a non-empty mask
keeps a fiber of conditional averages indexed by the masked coordinates.

The time-microstructure factor of the two-scale pairing is realized as a
singleton (:class:`TwoScaleConfig`): the oscillatory problem has no fast
time variable and the time-micro correctors vanish in the limit, so a
trivial factor is the faithful realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import InputError

__all__ = [
    "DynamicalSystemSpec",
    "OmegaPoint",
    "TwoScaleConfig",
    "FiberTable",
    "tau_apply",
    "tau_apply_many",
    "sample_omega",
    "sample_omega_array",
    "stochastic_derivative",
    "ergodic_average",
]


@dataclass(frozen=True)
class OmegaPoint:
    """A sample point: coordinates on the flat torus, each in [0, 1)."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coords, dtype=float))
        if c.ndim != 1:
            raise InputError("OmegaPoint coordinates must be a 1-d vector")
        if not np.all(np.isfinite(c)):
            raise InputError("OmegaPoint coordinates must be finite")
        if np.any(c < 0.0) or np.any(c >= 1.0):
            raise InputError("OmegaPoint coordinates must lie in [0, 1)")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class DynamicalSystemSpec:
    """Shift dynamics on the torus: dimension, shift matrix, invariant mask, seed.

    ``shift_matrix`` is the matrix A in tau(y) omega = omega + A y (mod 1).
    ``invariant_mask`` is a boolean vector; True marks a coordinate that no
    shift ever moves (the rows of A on masked coordinates are ignored).
    The default A = I on active coordinates is the stock ergodic choice:
    with epsilon ranging over a continuum of scales, rational shift
    directions still average correctly at finite sampling.
    """

    dim: int = 3
    shift_matrix: np.ndarray = None
    invariant_mask: np.ndarray = None
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.dim, (int, np.integer)) and self.dim >= 1):
            raise InputError("dim must be a positive integer")
        A = self.shift_matrix
        A = np.eye(self.dim) if A is None else np.asarray(A, dtype=float)
        if A.shape != (self.dim, self.dim) or not np.all(np.isfinite(A)):
            raise InputError(f"shift_matrix must be a finite {self.dim}x{self.dim} matrix")
        m = self.invariant_mask
        m = np.zeros(self.dim, dtype=bool) if m is None else np.asarray(m, dtype=bool)
        if m.shape != (self.dim,):
            raise InputError(f"invariant_mask must have length {self.dim}")
        A = A.copy()
        A[m, :] = 0.0  # masked coordinates are never acted on
        A.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "shift_matrix", A)
        object.__setattr__(self, "invariant_mask", m)
        object.__setattr__(self, "seed", int(self.seed))

    def ergodic(self) -> bool:
        """True iff no coordinate is invariant."""
        return not bool(self.invariant_mask.any())

    @property
    def active_axes(self) -> tuple:
        return tuple(int(i) for i in np.nonzero(~self.invariant_mask)[0])

    @property
    def masked_axes(self) -> tuple:
        return tuple(int(i) for i in np.nonzero(self.invariant_mask)[0])

    def direction(self, i: int) -> np.ndarray:
        """Displacement direction on the torus per unit parameter along axis i."""
        if not 0 <= i < self.dim:
            raise InputError(f"axis {i} out of range for dim {self.dim}")
        return self.shift_matrix[:, i].copy()

    def to_config(self) -> dict:
        return {
            "dim": self.dim,
            "shift_matrix": [float(v) for v in self.shift_matrix.ravel()],
            "invariant_mask": [bool(v) for v in self.invariant_mask],
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "DynamicalSystemSpec":
        dim = int(cfg.get("dim", 3))
        A = cfg.get("shift_matrix")
        if A is not None:
            A = np.asarray(A, dtype=float).reshape(dim, dim)
        return cls(
            dim=dim,
            shift_matrix=A,
            invariant_mask=cfg.get("invariant_mask"),
            seed=int(cfg["seed"]) if "seed" in cfg else 0,
        )


@dataclass(frozen=True)
class TwoScaleConfig:
    """Time-microstructure factor of the pairing, realized as a singleton.

    Only the trivial realization is constructible: the oscillatory problem
    carries no fast time variable, and the fast-time correctors of the limit
    vanish identically, so collapsing the factor loses nothing.
    """

    time_micro: str = "trivial"
    reason: str = field(
        default="no fast time oscillation in the problem; fast-time correctors vanish"
    )

    def __post_init__(self):
        if self.time_micro != "trivial":
            raise InputError("only the trivial time-microstructure is available")


def tau_apply(ds: DynamicalSystemSpec, y, omega: OmegaPoint) -> OmegaPoint:
    """Apply the shift tau(y) to a sample point.

    Returns (omega + A y) mod 1 on active coordinates; masked coordinates
    are returned unchanged (bit-exactly).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (ds.dim,):
        raise InputError(f"displacement must have shape ({ds.dim},), got {y.shape}")
    if omega.dim != ds.dim:
        raise InputError("omega dimension does not match the dynamical system")
    shifted = np.mod(omega.coords + ds.shift_matrix @ y, 1.0)
    out = np.where(ds.invariant_mask, omega.coords, shifted)
    return OmegaPoint(out)


def tau_apply_many(ds: DynamicalSystemSpec, displacements, omega: OmegaPoint) -> np.ndarray:
    """Vectorized orbit evaluation: tau(y_k) omega for a batch of displacements.

    ``displacements`` has shape (..., dim); the result has the same shape.
    Used by the solvers to trace coefficients along x -> tau(x/eps) omega.
    """
    Y = np.asarray(displacements, dtype=float)
    if Y.shape[-1] != ds.dim:
        raise InputError(f"displacements must have trailing dimension {ds.dim}")
    shifted = np.mod(omega.coords + Y @ ds.shift_matrix.T, 1.0)
    return np.where(ds.invariant_mask, omega.coords, shifted)


def sample_omega_array(ds: DynamicalSystemSpec, count: int) -> np.ndarray:
    """Uniform torus samples as an array of shape (count, dim).

    Deterministic given ds.seed; the first k rows of a count-n draw equal a
    count-k draw, so parallel workers may consume disjoint index ranges of
    the same logical stream.
    """
    if count < 1:
        raise InputError("count must be >= 1")
    rng = np.random.default_rng(ds.seed)
    return rng.random((count, ds.dim))


def sample_omega(ds: DynamicalSystemSpec, count: int) -> list:
    """Uniform torus samples as OmegaPoint instances (see sample_omega_array)."""
    return [OmegaPoint(row) for row in sample_omega_array(ds, count)]


def stochastic_derivative(f_grid: np.ndarray, ds: DynamicalSystemSpec, i: int) -> np.ndarray:
    """Directional derivative of a torus grid function along the i-th shift generator.

    ``f_grid`` samples f on the uniform periodic grid with nodes j/m per
    axis. The derivative direction is A e_i with masked components zeroed,
    realized by second-order central differences with periodic wrap. Grids
    with fewer than 4 points per axis are rejected.
    """
    f = np.asarray(f_grid, dtype=float)
    if f.ndim != ds.dim:
        raise InputError(f"grid function must have {ds.dim} axes, got {f.ndim}")
    if min(f.shape) < 4:
        raise InputError("grid too coarse: need at least 4 points per axis")
    direction = ds.direction(i)
    direction = np.where(ds.invariant_mask, 0.0, direction)
    out = np.zeros_like(f)
    for axis, d in enumerate(direction):
        if d == 0.0:
            continue
        h = 1.0 / f.shape[axis]
        out += d * (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)
    return out


@dataclass
class FiberTable:
    """Conditional averages over bins of the invariant coordinates."""

    masked_axes: tuple
    bin_edges: np.ndarray  # shared edges per masked axis, shape (bins+1,)
    means: np.ndarray      # shape (bins,)*len(masked_axes)
    counts: np.ndarray

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def ergodic_average(f, ds: DynamicalSystemSpec, count: int, bins: int = 8):
    """Monte-Carlo average of f over the torus.

    Ergodic systems yield a single scalar. Non-ergodic systems yield a
    :class:`FiberTable` of conditional means over bins of the invariant
    coordinates, since averaging cannot cross invariant fibers.
    ``f`` maps an array of points (count, dim) to (count,) values, or is a
    scalar function of OmegaPoint (detected by trial call).
    """
    if count < 1:
        raise InputError("count must be >= 1")
    pts = sample_omega_array(ds, count)
    vals = _eval_scalar(f, pts)
    if ds.ergodic():
        return float(np.mean(vals))
    axes = ds.masked_axes
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = [np.clip(np.digitize(pts[:, a], edges) - 1, 0, bins - 1) for a in axes]
    means = np.full((bins,) * len(axes), np.nan)
    counts = np.zeros((bins,) * len(axes), dtype=int)
    flat = np.ravel_multi_index(idx, (bins,) * len(axes))
    sums = np.bincount(flat, weights=vals, minlength=bins ** len(axes))
    nums = np.bincount(flat, minlength=bins ** len(axes))
    nonzero = nums > 0
    means.ravel()[nonzero] = sums[nonzero] / nums[nonzero]
    counts.ravel()[:] = nums
    return FiberTable(masked_axes=axes, bin_edges=edges, means=means, counts=counts)


def _eval_scalar(f, pts: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(f(pts), dtype=float)
        if vals.shape == (pts.shape[0],):
            return vals
    except Exception:
        pass
    return np.array([float(f(OmegaPoint(row))) for row in pts])
