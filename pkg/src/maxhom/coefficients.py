"""Material fields and the nonlinear conductivity law.

Magnetic permeability and permittivity are symmetric 3x3 matrix fields
M(x, omega, z), continuous in the macro point x, measurable on the torus in
omega, and periodic in the cell variable z, with certified two-sided bounds

    |M(x, omega, z) lam| <= c1 |lam|,      lam^T M(x, omega, z) lam >= c2 |lam|^2.

Conductivity is a vector-valued monotone law xi -> sigma(x, omega, z, xi)
with sigma(.., 0) = 0, a Lipschitz constant in xi, and a strong
monotonicity constant delta >= 1. The built-in family is

    sigma(xi) = kappa(x, omega, z) xi + beta * xi / (1 + |xi|),

whose saturating part is monotone with Lipschitz constant 1, so the family
constants are delta = min kappa and lipschitz = max kappa + beta. Validation
of the structure conditions is statistical: the constructor certifies the
constants from the family parameters, and ``verify_conductivity`` samples
difference quotients to estimate them independently.

All ``eval`` callables are vectorized over leading axes: x and z have
trailing axis 3, omega has trailing axis ``ds.dim``.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import InputError
from .probability import DynamicalSystemSpec, OmegaPoint, tau_apply_many

__all__ = [
    "CoefficientField",
    "ConductivityLaw",
    "ScalarFieldSpec",
    "ConductivityReport",
    "build_coefficient_field",
    "build_conductivity_law",
    "trace_eval",
    "sigma_eval",
    "verify_conductivity",
]


def _sym_check(M, name):
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise InputError(f"{name} must be a 3x3 matrix")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} must be finite")
    if not np.allclose(M, M.T, atol=1e-12):
        raise InputError(f"{name} must be symmetric")
    return 0.5 * (M + M.T)


def _spectral_bounds(M):
    w = np.linalg.eigvalsh(M)
    return float(w[-1]), float(w[0])


# ---------------------------------------------------------------------------
# scalar building blocks shared by matrix fields and kappa
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarFieldSpec:
    """Scalar z/omega/x-dependent factor used by the built-in families.

    family one of:
      constant      value
      laminate      value_a, value_b, axis, theta     (alternating in z[axis])
      smooth_mix    base + amp * cos(2 pi k_omega . omega) * cos(2 pi k_z . z)
      checkerboard  value_a, value_b                  (octant parity in z)
    """

    family: str
    params: dict

    def __call__(self, x, omega, z):
        p = self.params
        fam = self.family
        if fam == "constant":
            base = np.broadcast_shapes(np.shape(x)[:-1], np.shape(z)[:-1])
            return np.full(base, float(p["value"]))
        if fam == "laminate":
            zf = np.mod(np.asarray(z, dtype=float)[..., p["axis"]], 1.0)
            return np.where(zf < p["theta"], p["value_a"], p["value_b"])
        if fam == "smooth_mix":
            out = np.full(np.broadcast_shapes(np.shape(x)[:-1], np.shape(omega)[:-1],
                                              np.shape(z)[:-1]), float(p["base"]))
            amp = p.get("amp", 0.0)
            if amp:
                w = np.ones(out.shape)
                k_om = np.asarray(p.get("k_omega", ()), dtype=float)
                if k_om.size and np.any(k_om):
                    w = w * np.cos(2 * np.pi * (np.asarray(omega, float) @ k_om))
                k_z = np.asarray(p.get("k_z", ()), dtype=float)
                if k_z.size and np.any(k_z):
                    w = w * np.cos(2 * np.pi * (np.mod(np.asarray(z, float), 1.0) @ k_z))
                k_x = np.asarray(p.get("k_x", ()), dtype=float)
                if k_x.size and np.any(k_x):
                    w = w * np.cos(2 * np.pi * (np.asarray(x, float) @ k_x))
                out = out + amp * w
            return out
        if fam == "checkerboard":
            zf = np.mod(np.asarray(z, dtype=float), 1.0)
            parity = np.sum(np.floor(2.0 * zf), axis=-1).astype(int) % 2
            return np.where(parity == 0, p["value_a"], p["value_b"])
        raise InputError(f"unknown scalar family '{fam}'")

    @property
    def bounds(self):
        """Certified (min, max) over all arguments."""
        p = self.params
        if self.family == "constant":
            v = float(p["value"])
            return v, v
        if self.family in ("laminate", "checkerboard"):
            a, b = float(p["value_a"]), float(p["value_b"])
            return min(a, b), max(a, b)
        if self.family == "smooth_mix":
            base, amp = float(p["base"]), abs(float(p.get("amp", 0.0)))
            return base - amp, base + amp
        raise InputError(self.family)

    @property
    def depends_on_z(self) -> bool:
        if self.family in ("laminate", "checkerboard"):
            return True
        if self.family == "smooth_mix":
            return bool(self.params.get("amp", 0.0)) and bool(
                np.any(np.asarray(self.params.get("k_z", ()), dtype=float))
            )
        return False

    @property
    def z_axes(self) -> tuple:
        """Cell-variable axes along which the factor actually varies."""
        if self.family == "laminate":
            return (int(self.params["axis"]),)
        if self.family == "checkerboard":
            return (0, 1, 2)
        if self.family == "smooth_mix" and self.depends_on_z:
            k = np.asarray(self.params.get("k_z", ()), dtype=float)
            return tuple(int(i) for i in np.nonzero(k)[0])
        return ()

    @property
    def depends_on_omega(self) -> bool:
        if self.family == "smooth_mix":
            return bool(self.params.get("amp", 0.0)) and bool(
                np.any(np.asarray(self.params.get("k_omega", ()), dtype=float))
            )
        return False

    @property
    def depends_on_x(self) -> bool:
        if self.family == "smooth_mix":
            return bool(self.params.get("amp", 0.0)) and bool(
                np.any(np.asarray(self.params.get("k_x", ()), dtype=float))
            )
        return False


# ---------------------------------------------------------------------------
# matrix-valued coefficient fields (mu, eta)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric matrix field with certified bounds.

    ``eval(x, omega, z) -> (..., 3, 3)``; z is reduced mod 1 internally so
    the field is periodic in the cell variable by construction. ``z_axes``
    lists the cell axes the field actually varies along (the resolution
    gate of the oscillatory solver keys on them).
    """

    label: str
    family: str
    params: dict
    c1: float
    c2: float
    diagonal: bool
    depends_on_z: bool
    depends_on_omega: bool
    depends_on_x: bool
    z_axes: tuple = ()

    def eval(self, x, omega, z):
        return _eval_matrix_family(self.family, self.params, x, omega, z)

    def eval_diag(self, x, omega, z):
        """Diagonal entries (..., 3); valid only for diagonal-certified fields."""
        if not self.diagonal:
            raise InputError(f"field '{self.label}' is not diagonal")
        return np.einsum("...ii->...i", self.eval(x, omega, z))

    def to_config(self) -> dict:
        cfg = {"family": self.family}
        for k, v in self.params.items():
            if isinstance(v, np.ndarray):
                cfg[k] = [float(t) for t in v.ravel()]
            elif isinstance(v, ScalarFieldSpec):
                cfg[k] = {"family": v.family, **v.params}
            else:
                cfg[k] = v
        return cfg


def _eval_matrix_family(family, p, x, omega, z):
    z = np.mod(np.asarray(z, dtype=float), 1.0)
    x = np.asarray(x, dtype=float)
    omega = np.asarray(omega, dtype=float)
    base = np.broadcast_shapes(x.shape[:-1], omega.shape[:-1], z.shape[:-1])
    if family == "constant":
        return np.broadcast_to(p["matrix"], base + (3, 3)).copy()
    if family == "laminate":
        zf = z[..., p["axis"]]
        sel = (zf < p["theta"])[..., None, None]
        return np.where(sel, p["matrix_a"], p["matrix_b"]) + np.zeros(base + (3, 3))
    if family == "smooth_mix":
        w = p["weight"](x, omega, z)  # ScalarFieldSpec
        return p["matrix_0"] + w[..., None, None] * p["matrix_1"]
    if family == "checkerboard":
        parity = (np.sum(np.floor(2.0 * z), axis=-1).astype(int) % 2)[..., None, None]
        return np.where(parity == 0, p["matrix_a"], p["matrix_b"]) + np.zeros(base + (3, 3))
    raise InputError(f"unknown coefficient family '{family}'")


def build_coefficient_field(spec: dict, label: str = "mu") -> CoefficientField:
    """Construct a coefficient field from a parametric family description.

    Families: ``constant`` (matrix), ``laminate`` (matrix_a, matrix_b, axis,
    theta), ``smooth_mix`` (matrix_0, matrix_1, weight: scalar spec),
    ``checkerboard`` (matrix_a, matrix_b). Construction certifies the bounds
    c1 (operator norm) and c2 (coercivity) from the family parameters and
    rejects non-symmetric inputs or families that can lose coercivity,
    reporting the offending direction.
    """
    spec = dict(spec)
    family = spec.pop("family")
    if family == "constant":
        M = _sym_check(spec["matrix"], f"{label}.matrix")
        c1, c2 = _spectral_bounds(M)
        _require_coercive(M, c2, label)
        params = {"matrix": _frozen(M)}
        diag = _is_diag(M)
        dep_z = dep_om = dep_x = False
        z_axes = ()
    elif family == "laminate":
        Ma = _sym_check(spec["matrix_a"], f"{label}.matrix_a")
        Mb = _sym_check(spec["matrix_b"], f"{label}.matrix_b")
        axis = int(spec.get("axis", 0))
        theta = float(spec.get("theta", 0.5))
        if not 0.0 < theta < 1.0:
            raise InputError("laminate volume fraction theta must be in (0,1)")
        if axis not in (0, 1, 2):
            raise InputError("laminate axis must be 0, 1 or 2")
        hi_a, lo_a = _spectral_bounds(Ma)
        hi_b, lo_b = _spectral_bounds(Mb)
        _require_coercive(Ma if lo_a < lo_b else Mb, min(lo_a, lo_b), label)
        c1, c2 = max(hi_a, hi_b), min(lo_a, lo_b)
        params = {"matrix_a": _frozen(Ma), "matrix_b": _frozen(Mb),
                  "axis": axis, "theta": theta}
        diag = _is_diag(Ma) and _is_diag(Mb)
        dep_z, dep_om, dep_x = True, False, False
        z_axes = (axis,)
    elif family == "smooth_mix":
        M0 = _sym_check(spec["matrix_0"], f"{label}.matrix_0")
        M1 = _sym_check(spec["matrix_1"], f"{label}.matrix_1")
        weight = spec["weight"]
        if not isinstance(weight, ScalarFieldSpec):
            weight = ScalarFieldSpec(weight["family"],
                                     {k: v for k, v in weight.items() if k != "family"})
        lo_w, hi_w = weight.bounds
        wmax = max(abs(lo_w), abs(hi_w))
        hi0, lo0 = _spectral_bounds(M0)
        hi1, _ = _spectral_bounds(M1)
        norm1 = float(np.linalg.norm(M1, 2))
        c1 = hi0 + wmax * norm1
        c2 = lo0 - wmax * norm1
        if c2 <= 0.0:
            # name a violating sample: extreme weight against the softest direction
            w_ext = lo_w if abs(lo_w) > abs(hi_w) else hi_w
            M = M0 + w_ext * M1
            vals, vecs = np.linalg.eigh(M)
            raise InputError(
                f"{label}: coercivity lost (certified c2={c2:.3g} <= 0); e.g. at weight "
                f"{w_ext:.3g} the direction {np.round(vecs[:, 0], 4).tolist()} gives "
                f"quadratic form {vals[0]:.3g}"
            )
        params = {"matrix_0": _frozen(M0), "matrix_1": _frozen(M1), "weight": weight}
        diag = _is_diag(M0) and _is_diag(M1)
        dep_z, dep_om, dep_x = weight.depends_on_z, weight.depends_on_omega, weight.depends_on_x
        z_axes = weight.z_axes
    elif family == "checkerboard":
        Ma = _sym_check(spec["matrix_a"], f"{label}.matrix_a")
        Mb = _sym_check(spec["matrix_b"], f"{label}.matrix_b")
        hi_a, lo_a = _spectral_bounds(Ma)
        hi_b, lo_b = _spectral_bounds(Mb)
        _require_coercive(Ma if lo_a < lo_b else Mb, min(lo_a, lo_b), label)
        c1, c2 = max(hi_a, hi_b), min(lo_a, lo_b)
        params = {"matrix_a": _frozen(Ma), "matrix_b": _frozen(Mb)}
        diag = _is_diag(Ma) and _is_diag(Mb)
        dep_z, dep_om, dep_x = True, False, False
        z_axes = (0, 1, 2)
    else:
        raise InputError(
            f"unknown coefficient family '{family}'; "
            "available: constant, laminate, smooth_mix, checkerboard"
        )
    return CoefficientField(label=label, family=family, params=params, c1=c1, c2=c2,
                            diagonal=diag, depends_on_z=dep_z, depends_on_omega=dep_om,
                            depends_on_x=dep_x, z_axes=z_axes)


def _require_coercive(M, c2, label):
    if c2 <= 0.0:
        vals, vecs = np.linalg.eigh(M)
        raise InputError(
            f"{label}: coercivity bound c2={c2:.3g} <= 0; direction "
            f"{np.round(vecs[:, 0], 4).tolist()} has quadratic form {vals[0]:.3g}"
        )


def _is_diag(M):
    return bool(np.all(M == np.diag(np.diag(M))))


def _frozen(a):
    a = np.asarray(a, dtype=float).copy()
    a.setflags(write=False)
    return a


def trace_eval(field: CoefficientField, x, omega: OmegaPoint,
               ds: DynamicalSystemSpec, epsilon: float):
    """Realized oscillatory trace: field(x, tau(x/eps) omega, x/eps^2).

    ``x`` may be a single point or an array (..., 3); the torus argument is
    advanced by the shift dynamics and the cell argument reduced mod 1.
    """
    if not epsilon > 0.0:
        raise InputError("epsilon must be positive")
    x = np.asarray(x, dtype=float)
    disp = _x_to_torus_displacement(x, ds)
    om = tau_apply_many(ds, disp / epsilon, omega)
    z = np.mod(x / epsilon ** 2, 1.0)
    return field.eval(x, om, z)


def _x_to_torus_displacement(x, ds):
    # spatial points drive the first min(3, dim) torus parameters
    d = np.zeros(x.shape[:-1] + (ds.dim,))
    k = min(3, ds.dim)
    d[..., :k] = x[..., :k]
    return d


# ---------------------------------------------------------------------------
# conductivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConductivityLaw:
    """Monotone conductivity sigma(x, omega, z, xi) = kappa xi + beta xi/(1+|xi|).

    ``family`` is "linear" when beta == 0. ``monotone_delta`` and
    ``lipschitz_c1`` are the certified family constants (min kappa and
    max kappa + beta). Laws with delta < 1 are constructible so the
    verification path can flag them; solvers refuse them.
    """

    family: str
    kappa: ScalarFieldSpec
    beta: float
    monotone_delta: float
    lipschitz_c1: float

    def eval(self, x, omega, z, xi):
        xi = np.asarray(xi, dtype=float)
        k = self.kappa(x, omega, np.mod(np.asarray(z, float), 1.0))
        out = np.asarray(k)[..., None] * xi
        if self.beta:
            out = out + self.beta * _saturate(xi)
        return out

    def jacobian(self, x, omega, z, xi):
        """d sigma / d xi, shape (..., 3, 3)."""
        xi = np.asarray(xi, dtype=float)
        k = np.asarray(self.kappa(x, omega, np.mod(np.asarray(z, float), 1.0)))
        J = k[..., None, None] * np.eye(3)
        if self.beta:
            J = J + self.beta * _saturate_jacobian(xi)
        return J

    def to_config(self) -> dict:
        return {"family": self.family, "beta": self.beta,
                "kappa": {"family": self.kappa.family, **self.kappa.params}}


def _saturate(xi):
    r = np.linalg.norm(xi, axis=-1, keepdims=True)
    return xi / (1.0 + r)


def _saturate_jacobian(xi):
    r = np.linalg.norm(xi, axis=-1)
    eye = np.eye(3)
    safe = np.maximum(r, 1e-300)
    outer = xi[..., :, None] * xi[..., None, :] / safe[..., None, None]
    J = ((1.0 + r)[..., None, None] * eye - outer) / (1.0 + r)[..., None, None] ** 2
    # at xi = 0 the saturating part has derivative exactly I
    at_zero = (r == 0.0)[..., None, None]
    return np.where(at_zero, eye, J)


def build_conductivity_law(spec: dict) -> ConductivityLaw:
    """Construct a conductivity law: {family: linear|saturating, kappa, beta}."""
    spec = dict(spec)
    family = spec.pop("family")
    kappa = spec.get("kappa", {"family": "constant", "value": 1.0})
    if not isinstance(kappa, ScalarFieldSpec):
        if np.isscalar(kappa):
            kappa = {"family": "constant", "value": float(kappa)}
        kappa = ScalarFieldSpec(kappa["family"],
                                {k: v for k, v in kappa.items() if k != "family"})
    if family == "linear":
        beta = 0.0
    elif family == "saturating":
        beta = float(spec.get("beta", 0.5))
        if beta < 0.0:
            raise InputError("saturating beta must be >= 0")
    else:
        raise InputError(f"unknown conductivity family '{family}'")
    k_lo, k_hi = kappa.bounds
    if k_lo <= 0.0:
        raise InputError(f"kappa must stay positive; certified min is {k_lo:.3g}")
    return ConductivityLaw(family=family, kappa=kappa, beta=beta,
                           monotone_delta=k_lo, lipschitz_c1=k_hi + beta)


ZERO_CONDUCTIVITY = None  # solvers treat sigma=None as sigma identically zero


def sigma_eval(law: ConductivityLaw, x, omega, z, xi):
    """Evaluate the conductivity; exact zero at xi = 0."""
    if law is None:
        return np.zeros_like(np.asarray(xi, dtype=float))
    return law.eval(x, omega, z, xi)


# ---------------------------------------------------------------------------
# statistical verification of the structure conditions
# ---------------------------------------------------------------------------


@dataclass
class ConductivityReport:
    lipschitz_hat: float
    delta_hat: float
    jacobian_form_min: float
    nemytskii_input_gaps: np.ndarray
    nemytskii_output_gaps: np.ndarray
    passed: bool
    message: str

    def to_dict(self) -> dict:
        return {
            "lipschitz_hat": self.lipschitz_hat,
            "delta_hat": self.delta_hat,
            "jacobian_form_min": self.jacobian_form_min,
            "nemytskii_input_gaps": [float(v) for v in self.nemytskii_input_gaps],
            "nemytskii_output_gaps": [float(v) for v in self.nemytskii_output_gaps],
            "passed": self.passed,
            "message": self.message,
        }


def verify_conductivity(law: ConductivityLaw, n_samples: int = 10_000,
                        seed: int = 0, tol: float = 1e-6) -> ConductivityReport:
    """Sampled verification of the Lipschitz, monotonicity and Jacobian conditions.

    Estimates the Lipschitz constant as the largest sampled difference
    quotient and the monotonicity constant as the smallest sampled
    Rayleigh-type quotient, checks the Jacobian quadratic form via central
    finite differences (relative step 1e-5), and runs a discrete Nemytskii
    continuity check: u_n -> u in discrete L2 must force sigma(u_n) ->
    sigma(u) in discrete L2. Passes iff delta_hat >= 1 - tol and the
    Jacobian form stays above -tol.
    """
    if n_samples < 100:
        raise InputError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    x = rng.random((n_samples, 3))
    om = rng.random((n_samples, 3))
    z = rng.random((n_samples, 3))
    scale = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), size=(n_samples, 1)))
    xi1 = scale * _random_unit(rng, n_samples)
    xi2 = xi1 + np.exp(rng.uniform(np.log(1e-4), np.log(10.0), size=(n_samples, 1))) \
        * _random_unit(rng, n_samples)

    s1 = law.eval(x, om, z, xi1)
    s2 = law.eval(x, om, z, xi2)
    d = xi1 - xi2
    dn2 = np.sum(d * d, axis=-1)
    quot = np.linalg.norm(s1 - s2, axis=-1) / np.sqrt(dn2)
    ray = np.sum((s1 - s2) * d, axis=-1) / dn2
    lips_hat = float(np.max(quot))
    delta_hat = float(np.min(ray))

    # condition on the Jacobian quadratic form, via central differences
    m = min(n_samples, 2000)
    h = 1e-5 * np.maximum(1.0, np.linalg.norm(xi1[:m], axis=-1))[:, None, None]
    eye = np.eye(3)
    Jfd = np.stack([
        (law.eval(x[:m], om[:m], z[:m], xi1[:m] + h[..., 0] * eye[j])
         - law.eval(x[:m], om[:m], z[:m], xi1[:m] - h[..., 0] * eye[j]))
        / (2.0 * h[..., 0])
        for j in range(3)
    ], axis=-1)  # (m, 3, 3): column j = d sigma / d xi_j
    xi_test = _random_unit(rng, m)
    form = np.einsum("ni,nij,nj->n", xi_test, Jfd, xi_test)
    form_min = float(np.min(form))

    # Nemytskii continuity on a grid function sequence u_k -> u
    grid = rng.standard_normal((4096, 3))
    pert = rng.standard_normal((4096, 3))
    xg, og, zg = rng.random((3, 4096, 3))
    base = law.eval(xg, og, zg, grid)
    in_gaps, out_gaps = [], []
    for k in range(1, 7):
        uk = grid + pert / 2.0 ** k
        in_gaps.append(_l2(uk - grid))
        out_gaps.append(_l2(law.eval(xg, og, zg, uk) - base))
    in_gaps = np.array(in_gaps)
    out_gaps = np.array(out_gaps)
    nem_ok = bool(np.all(out_gaps <= law.lipschitz_c1 * in_gaps * (1 + 1e-12))
                  and np.all(np.diff(out_gaps) < 0))

    ok = delta_hat >= 1.0 - tol and form_min >= -tol and nem_ok
    msg = "ok" if ok else (
        f"violations: delta_hat={delta_hat:.6g} (need >= {1 - tol}), "
        f"jacobian_form_min={form_min:.3g}, nemytskii_ok={nem_ok}"
    )
    return ConductivityReport(lipschitz_hat=lips_hat, delta_hat=delta_hat,
                              jacobian_form_min=form_min,
                              nemytskii_input_gaps=in_gaps,
                              nemytskii_output_gaps=out_gaps,
                              passed=ok, message=msg)


def _random_unit(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _l2(a):
    return float(np.sqrt(np.mean(np.sum(np.asarray(a) ** 2, axis=-1))))
