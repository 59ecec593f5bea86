"""Fourier toroidal surfaces and the differential geometry the force kernel needs.

Surfaces follow the VMEC boundary convention::

    R(θ, ζ) = Σ rc cos(mθ - n·nfp·ζ) + rs sin(mθ - n·nfp·ζ)
    Z(θ, ζ) = Σ zc cos(mθ - n·nfp·ζ) + zs sin(mθ - n·nfp·ζ)

with ζ the geometric toroidal angle, so the Cartesian position is
``(R cos ζ, R sin ζ, Z)``.  All first and second derivatives are taken
analytically from the series.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GeometryError",
    "SurfaceFormatError",
    "FourierSurface",
    "SurfaceGrid",
    "evaluate_grid",
    "grid_from_derivatives",
    "sphere_grid",
    "load_surface",
    "save_surface",
    "circular_torus",
    "project_tangent",
    "projector_divergence",
    "projector_divergence_vector",
    "angle_derivative",
    "tangential_gradient",
    "surface_divergence",
    "geometric_bound_check",
]


class GeometryError(ValueError):
    """Raised for invalid or degenerate surfaces and grids."""


class SurfaceFormatError(ValueError):
    """Raised when a surface file cannot be parsed; carries the line number."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


@dataclass(frozen=True)
class FourierSurface:
    """Toroidal surface given by its boundary Fourier modes."""

    m: np.ndarray
    n: np.ndarray
    rc: np.ndarray
    rs: np.ndarray
    zc: np.ndarray
    zs: np.ndarray
    nfp: int = 1

    def __post_init__(self):
        arrays = {}
        for name in ("m", "n"):
            arrays[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=int))
        for name in ("rc", "rs", "zc", "zs"):
            arrays[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
        sizes = {a.shape for a in arrays.values()}
        if len(sizes) != 1 or arrays["m"].ndim != 1:
            raise GeometryError("mode arrays must be one-dimensional and of equal length")
        for name, value in arrays.items():
            object.__setattr__(self, name, value)
        if int(self.nfp) < 1:
            raise GeometryError(f"nfp must be a positive integer, got {self.nfp}")
        object.__setattr__(self, "nfp", int(self.nfp))
        if np.any(self.m < 0):
            raise GeometryError("poloidal mode numbers must be non-negative")
        if self.major_radius <= 0:
            raise GeometryError(
                f"the (m=0, n=0) radial coefficient must be positive, got {self.major_radius}"
            )

    @classmethod
    def from_modes(cls, modes, nfp=1):
        """Build from an iterable of ``(m, n, rc, rs, zc, zs)`` records."""
        rows = np.array([tuple(r) for r in modes], dtype=float).reshape(-1, 6)
        return cls(rows[:, 0].astype(int), rows[:, 1].astype(int), rows[:, 2],
                   rows[:, 3], rows[:, 4], rows[:, 5], nfp=nfp)

    @property
    def major_radius(self) -> float:
        sel = (self.m == 0) & (self.n == 0)
        return float(self.rc[sel].sum())

    def modes(self):
        return [(int(m), int(n), float(a), float(b), float(c), float(d))
                for m, n, a, b, c, d in zip(self.m, self.n, self.rc, self.rs, self.zc, self.zs)]

    def evaluate(self, theta, zeta):
        """Positions and analytic derivatives on the tensor grid ``theta × zeta``.

        Returns a dict with keys ``r, r_t, r_z, r_tt, r_tz, r_zz``, each of
        shape ``(len(theta), len(zeta), 3)``.
        """
        theta = np.asarray(theta, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        th = theta[:, None, None]
        ze = zeta[None, :, None]
        m = self.m[None, None, :]
        nn = (self.n * self.nfp)[None, None, :]
        arg = m * th - nn * ze
        c, s = np.cos(arg), np.sin(arg)

        def series(cc, ss):
            # value, d/dθ, d/dζ, d²/dθ², d²/dθdζ, d²/dζ²
            f = c * cc + s * ss
            g = -s * cc + c * ss  # derivative with respect to arg
            return (f.sum(-1), (m * g).sum(-1), (-nn * g).sum(-1),
                    (-m * m * f).sum(-1), (m * nn * f).sum(-1), (-nn * nn * f).sum(-1))

        R, R_t, R_z, R_tt, R_tz, R_zz = series(self.rc, self.rs)
        Z, Z_t, Z_z, Z_tt, Z_tz, Z_zz = series(self.zc, self.zs)
        cz = np.broadcast_to(np.cos(zeta)[None, :], R.shape)
        sz = np.broadcast_to(np.sin(zeta)[None, :], R.shape)

        def stack(x, y, z):
            return np.stack([x, y, z], axis=-1)

        return {
            "r": stack(R * cz, R * sz, Z),
            "r_t": stack(R_t * cz, R_t * sz, Z_t),
            "r_z": stack(R_z * cz - R * sz, R_z * sz + R * cz, Z_z),
            "r_tt": stack(R_tt * cz, R_tt * sz, Z_tt),
            "r_tz": stack(R_tz * cz - R_t * sz, R_tz * sz + R_t * cz, Z_tz),
            "r_zz": stack(R_zz * cz - 2 * R_z * sz - R * cz,
                          R_zz * sz + 2 * R_z * cz - R * sz, Z_zz),
        }


def circular_torus(major_radius: float, minor_radius: float) -> FourierSurface:
    """Axisymmetric circular torus ``R = R0 + a cos θ``, ``Z = a sin θ``."""
    return FourierSurface.from_modes(
        [(0, 0, major_radius, 0.0, 0.0, 0.0), (1, 0, minor_radius, 0.0, 0.0, minor_radius)]
    )


@dataclass
class SurfaceGrid:
    """Samples of a surface on a uniform ``n_theta × n_zeta`` angle grid.

    ``normal`` is the outward unit normal, ``area_element`` is
    ``|∂θr × ∂ζr|`` and ``mean_curvature_sum`` is ``div_S n`` (the sum of
    principal curvatures, ``2/ρ`` on a sphere of radius ρ).
    """

    theta: np.ndarray
    zeta: np.ndarray
    d_theta: float
    d_zeta: float
    points: np.ndarray
    d_theta_r: np.ndarray
    d_zeta_r: np.ndarray
    normal: np.ndarray
    area_element: np.ndarray
    mean_curvature_sum: np.ndarray
    second: dict = field(default_factory=dict, repr=False)
    periodic: bool = True

    @property
    def n_theta(self) -> int:
        return len(self.theta)

    @property
    def n_zeta(self) -> int:
        return len(self.zeta)

    @property
    def shape(self):
        return (self.n_theta, self.n_zeta)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights ``dS`` (m²)."""
        return self.area_element * (self.d_theta * self.d_zeta)

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @property
    def spacing(self) -> float:
        """Characteristic node spacing h: grid mean of the smaller of the two local steps."""
        ht = np.linalg.norm(self.d_theta_r, axis=-1) * self.d_theta
        hz = np.linalg.norm(self.d_zeta_r, axis=-1) * self.d_zeta
        return float(np.minimum(ht, hz).mean())

    @property
    def metric(self):
        """Covariant metric ``(E, F, G)`` = ``(r_θ·r_θ, r_θ·r_ζ, r_ζ·r_ζ)``."""
        rt, rz = self.d_theta_r, self.d_zeta_r
        return (np.einsum("...i,...i", rt, rt), np.einsum("...i,...i", rt, rz),
                np.einsum("...i,...i", rz, rz))

    def contravariant_basis(self):
        """Dual tangent vectors ``(∇θ, ∇ζ)`` so that ``∇_S f = f_θ ∇θ + f_ζ ∇ζ``."""
        E, F, G = self.metric
        det = E * G - F * F
        rt, rz = self.d_theta_r, self.d_zeta_r
        grad_t = ((G / det)[..., None] * rt - (F / det)[..., None] * rz)
        grad_z = ((E / det)[..., None] * rz - (F / det)[..., None] * rt)
        return grad_t, grad_z

    def flat(self, name):
        arr = getattr(self, name)
        return arr.reshape((self.n_theta * self.n_zeta,) + arr.shape[2:])


def grid_from_derivatives(theta, zeta, d_theta, d_zeta, derivs, periodic=True) -> SurfaceGrid:
    """Assemble a :class:`SurfaceGrid` from positions and analytic derivatives.

    ``derivs`` holds ``r, r_t, r_z, r_tt, r_tz, r_zz`` arrays of shape
    ``(n_theta, n_zeta, 3)``.  The normal orientation is chosen so that the
    enclosed volume is positive.
    """
    r, rt, rz = derivs["r"], derivs["r_t"], derivs["r_z"]
    cross = np.cross(rz, rt)
    area = np.linalg.norm(cross, axis=-1)
    scale = max(float(area.max()), np.finfo(float).tiny)
    bad = np.argwhere(area <= 1e-12 * scale)
    if len(bad) or not np.all(np.isfinite(area)):
        i, j = (bad[0] if len(bad) else np.argwhere(~np.isfinite(area))[0])
        raise GeometryError(
            f"degenerate surface: zero area element at grid index ({i}, {j}), "
            f"theta={theta[i]:.6g}, zeta={zeta[j]:.6g}"
        )
    normal = cross / area[..., None]
    volume = np.einsum("...i,...i", r, cross).sum() / 3.0
    if volume < 0:
        normal = -normal
    E = np.einsum("...i,...i", rt, rt)
    F = np.einsum("...i,...i", rt, rz)
    G = np.einsum("...i,...i", rz, rz)
    L = np.einsum("...i,...i", derivs["r_tt"], normal)
    M = np.einsum("...i,...i", derivs["r_tz"], normal)
    N = np.einsum("...i,...i", derivs["r_zz"], normal)
    # div_S n = -(L G - 2 M F + N E) / (E G - F²)
    kappa = -(L * G - 2.0 * M * F + N * E) / (E * G - F * F)
    second = {k: derivs[k] for k in ("r_tt", "r_tz", "r_zz")}
    return SurfaceGrid(
        theta=np.asarray(theta, dtype=float), zeta=np.asarray(zeta, dtype=float),
        d_theta=float(d_theta), d_zeta=float(d_zeta), points=r, d_theta_r=rt,
        d_zeta_r=rz, normal=normal, area_element=area, mean_curvature_sum=kappa,
        second=second, periodic=periodic,
    )


def evaluate_grid(surface: FourierSurface, n_theta: int, n_zeta: int) -> SurfaceGrid:
    """Sample ``surface`` at ``θ_i = 2πi/n_theta``, ``ζ_j = 2πj/n_zeta``."""
    if n_theta < 4 or n_zeta < 4:
        raise GeometryError(f"grid sizes must be >= 4, got {n_theta}x{n_zeta}")
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    zeta = 2 * np.pi * np.arange(n_zeta) / n_zeta
    derivs = surface.evaluate(theta, zeta)
    return grid_from_derivatives(theta, zeta, 2 * np.pi / n_theta, 2 * np.pi / n_zeta, derivs)


def sphere_grid(radius: float, n_theta: int, n_zeta: int) -> SurfaceGrid:
    """Sphere test surface on a pole-avoiding midpoint grid in polar angle.

    Not periodic in θ, so spectral differentiation is unavailable on it.
    """
    theta = np.pi * (np.arange(n_theta) + 0.5) / n_theta
    zeta = 2 * np.pi * np.arange(n_zeta) / n_zeta
    th, ze = np.meshgrid(theta, zeta, indexing="ij")
    st, ct, sz, cz = np.sin(th), np.cos(th), np.sin(ze), np.cos(ze)
    zero = np.zeros_like(th)
    s = lambda a, b, c: np.stack([a, b, c], axis=-1)  # noqa: E731
    derivs = {
        "r": radius * s(st * cz, st * sz, ct),
        "r_t": radius * s(ct * cz, ct * sz, -st),
        "r_z": radius * s(-st * sz, st * cz, zero),
        "r_tt": radius * s(-st * cz, -st * sz, -ct),
        "r_tz": radius * s(-ct * sz, ct * cz, zero),
        "r_zz": radius * s(-st * cz, -st * sz, zero),
    }
    return grid_from_derivatives(theta, zeta, np.pi / n_theta, 2 * np.pi / n_zeta,
                                 derivs, periodic=False)


# ---------------------------------------------------------------------------
# surface files

_SPLIT = re.compile(r"[,\s]+")


def load_surface(path) -> FourierSurface:
    """Read a Fourier-mode table.

    Text format: one ``m n r_cos r_sin z_cos z_sin`` record per line,
    whitespace or comma separated, ``#`` starts a comment, and an optional
    ``nfp <int>`` line sets the number of field periods.  Files ending in
    ``.json`` hold ``{"nfp": int, "modes": [{"m", "n", "rc", "rs", "zc", "zs"}]}``.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
            rows = [(d["m"], d["n"], d.get("rc", 0.0), d.get("rs", 0.0),
                     d.get("zc", 0.0), d.get("zs", 0.0)) for d in data["modes"]]
            return FourierSurface.from_modes(rows, nfp=int(data.get("nfp", 1)))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise SurfaceFormatError(path, getattr(exc, "lineno", 1), f"bad JSON surface: {exc}")
    rows, nfp = [], 1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = [t for t in _SPLIT.split(line) if t]
        if tokens[0].lower() == "nfp":
            if len(tokens) != 2 or not tokens[1].lstrip("+").isdigit():
                raise SurfaceFormatError(path, lineno, f"expected 'nfp <int>', got {raw!r}")
            nfp = int(tokens[1])
            continue
        if len(tokens) != 6:
            raise SurfaceFormatError(path, lineno, f"expected 6 fields, got {len(tokens)}: {raw!r}")
        try:
            m, n = int(tokens[0]), int(tokens[1])
            rows.append((m, n) + tuple(float(t) for t in tokens[2:]))
        except ValueError:
            raise SurfaceFormatError(path, lineno, f"non-numeric field in {raw!r}") from None
    if not rows:
        raise SurfaceFormatError(path, 1, "no Fourier modes found")
    try:
        return FourierSurface.from_modes(rows, nfp=nfp)
    except GeometryError as exc:
        raise SurfaceFormatError(path, len(text.splitlines()), str(exc)) from None


def save_surface(surface: FourierSurface, path) -> None:
    """Write in the format :func:`load_surface` reads (JSON if the suffix is ``.json``)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        modes = [dict(zip(("m", "n", "rc", "rs", "zc", "zs"), row)) for row in surface.modes()]
        path.write_text(json.dumps({"nfp": surface.nfp, "modes": modes}, indent=1))
        return
    lines = [f"nfp {surface.nfp}", "# m n r_cos r_sin z_cos z_sin"]
    lines += [f"{m} {n} {a!r} {b!r} {c!r} {d!r}" for m, n, a, b, c, d in surface.modes()]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# projector and surface calculus


def project_tangent(grid: SurfaceGrid, v) -> np.ndarray:
    """π(v) = v - <v, n> n at every grid point (v constant or grid-shaped)."""
    v = np.broadcast_to(np.asarray(v, dtype=float), grid.normal.shape)
    return v - np.einsum("...i,...i", v, grid.normal)[..., None] * grid.normal


def projector_divergence(grid: SurfaceGrid, v) -> np.ndarray:
    """div_S(π v) for a constant ambient vector v, via ``-(div_S n) <v, n>``."""
    v = np.asarray(v, dtype=float)
    return -grid.mean_curvature_sum * np.einsum("...i,i", grid.normal, v)


def projector_divergence_vector(grid: SurfaceGrid) -> np.ndarray:
    """The vector Σ_i div_S(π e_i) e_i = -(div_S n) n."""
    return -grid.mean_curvature_sum[..., None] * grid.normal


def angle_derivative(grid: SurfaceGrid, f, axis: int, method: str = "spectral") -> np.ndarray:
    """∂f/∂θ (axis 0) or ∂f/∂ζ (axis 1) of grid samples ``f`` (extra trailing dims allowed)."""
    f = np.asarray(f, dtype=float)
    step = grid.d_theta if axis == 0 else grid.d_zeta
    if method == "fd":
        if not grid.periodic and axis == 0:
            return np.gradient(f, step, axis=0)
        # fourth-order centred stencil
        return (8 * (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis))
                - (np.roll(f, -2, axis=axis) - np.roll(f, 2, axis=axis))) / (12 * step)
    if method != "spectral":
        raise ValueError(f"unknown differentiation method {method!r}")
    if not grid.periodic:
        raise GeometryError("spectral differentiation needs a periodic grid")
    n = f.shape[axis]
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * f.ndim
    shape[axis] = n
    ik = (1j * k * (2 * np.pi / (n * step))).reshape(shape)
    return np.fft.ifft(ik * np.fft.fft(f, axis=axis), axis=axis).real


def tangential_gradient(grid: SurfaceGrid, f, method: str = "spectral") -> np.ndarray:
    """Surface gradient ∇_S f of a sampled scalar field.

    ``method`` is ``"spectral"`` (FFT, for Fourier-representable fields)
    or ``"fd"`` (fourth-order centred periodic differences).  Output shape
    ``f.shape + (3,)``.
    """
    f_t = angle_derivative(grid, f, 0, method)
    f_z = angle_derivative(grid, f, 1, method)
    grad_t, grad_z = grid.contravariant_basis()
    extra = (slice(None), slice(None)) + (None,) * (np.ndim(f) - 2) + (slice(None),)
    return f_t[..., None] * grad_t[extra] + f_z[..., None] * grad_z[extra]


def surface_divergence(grid: SurfaceGrid, X, method: str = "spectral") -> np.ndarray:
    """div_S X of a sampled tangent vector field X (shape ``(nθ, nζ, 3)``).

    Uses the coordinate form ``(1/√g)[∂θ(√g X^θ) + ∂ζ(√g X^ζ)]``; any
    normal component of X is discarded first.
    """
    X = project_tangent(grid, X)
    grad_t, grad_z = grid.contravariant_basis()
    sg = grid.area_element
    Xt = np.einsum("...i,...i", X, grad_t)
    Xz = np.einsum("...i,...i", X, grad_z)
    return (angle_derivative(grid, sg * Xt, 0, method)
            + angle_derivative(grid, sg * Xz, 1, method)) / sg


def geometric_bound_check(grid: SurfaceGrid, chunk: int = 512) -> float:
    """max over distinct node pairs of |<y - x, n(x)>| / |y - x|².

    Coincident nodes (as on multiply covered parametrisations) are skipped.
    """
    pts = grid.flat("points")
    nrm = grid.flat("normal")
    tol = 1e-12 * max(float(np.ptp(pts, axis=0).max()), 1.0)
    best = 0.0
    for start in range(0, len(pts), chunk):
        y = pts[start:start + chunk]
        d = y[:, None, :] - pts[None, :, :]
        r2 = np.einsum("abi,abi->ab", d, d)
        num = np.abs(np.einsum("abi,bi->ab", d, nrm))
        valid = r2 > tol * tol
        ratio = np.where(valid, num / np.where(valid, r2, 1.0), 0.0)
        best = max(best, float(ratio.max()))
    return best
