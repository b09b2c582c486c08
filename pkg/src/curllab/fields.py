"""Exterior calculus on the flat 3-torus via truncated Fourier series.

Fields live on T^3 = R^3 / (2 pi Z)^3 and are represented by complex
Fourier coefficients indexed by integer wavevectors m with |m_i| <= N.
Real-valuedness is encoded as the Hermitian symmetry c(-m) = conj(c(m)).

Component conventions, used consistently everywhere:

* scalars: one component.
* 1-forms: a = a_1 dx + a_2 dy + a_3 dz.
* 2-forms: b = b_1 dy^dz + b_2 dz^dx + b_3 dx^dy.
* vectors: u = u^1 d/dx + u^2 d/dy + u^3 d/dz.

With these conventions the wedge pairing of a 1-form against a 2-form is
the Euclidean dot product of components, and the exterior derivative of a
1-form is the classical curl.

Pointwise metric operations (Hodge star, index raising/lowering, weighted
inner products) are evaluated on a pseudospectral collocation grid sized
for dealiased products and re-truncated afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DegenerateMetricError, UnsupportedRankError

TAU = 2.0 * np.pi
VOLUME = TAU**3

RANK_COMPONENTS = {"scalar": 1, "one_form": 3, "two_form": 3, "vector": 3}

# Relative tolerance for the Hermitian-symmetry check at construction.
HERMITIAN_TOL = 1e-10


def mode_range(truncation: int) -> np.ndarray:
    return np.arange(-truncation, truncation + 1)


def _next_odd(n: int) -> int:
    return n if n % 2 == 1 else n + 1


def grid_resolution(truncation: int) -> int:
    """Default collocation resolution for a given truncation.

    At least the 3/2 dealiasing size 3N+1 for quadratic products, padded
    so quadrature against smooth (non-polynomial) metric weights has
    spectrally small error.
    """
    return _next_odd(max(3 * truncation + 1, 2 * truncation + 9))


class CollocationGrid:
    """Uniform periodic collocation grid with exact trig interpolation.

    The resolution is odd so every retained wavevector has an unambiguous
    bin; forward-then-inverse transforms are identities on fields whose
    truncation fits the grid.
    """

    def __init__(self, resolution: int):
        if resolution < 3 or resolution % 2 == 0:
            raise ValueError("grid resolution must be odd and >= 3")
        self.resolution = int(resolution)
        self.axis_points = TAU * np.arange(self.resolution) / self.resolution
        # equal-weight quadrature, exact for trig polynomials of degree < M
        self.weight = (TAU / self.resolution) ** 3

    @classmethod
    def for_truncation(cls, truncation: int) -> "CollocationGrid":
        return cls(grid_resolution(truncation))

    @property
    def max_truncation(self) -> int:
        return (self.resolution - 1) // 2

    def points(self) -> np.ndarray:
        """All sample points, shape (M, M, M, 3)."""
        x, y, z = np.meshgrid(
            self.axis_points, self.axis_points, self.axis_points, indexing="ij"
        )
        return np.stack([x, y, z], axis=-1)

    def _bins(self, truncation: int) -> np.ndarray:
        if truncation > self.max_truncation:
            raise ValueError(
                f"truncation {truncation} exceeds grid capacity "
                f"{self.max_truncation}"
            )
        return mode_range(truncation) % self.resolution

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Sample a coefficient array (..., L, L, L) on the grid (..., M, M, M)."""
        L = coeffs.shape[-1]
        n = (L - 1) // 2
        idx = self._bins(n)
        shape = coeffs.shape[:-3] + (self.resolution,) * 3
        embedded = np.zeros(shape, dtype=np.complex128)
        embedded[..., idx[:, None, None], idx[None, :, None], idx[None, None, :]] = (
            coeffs
        )
        vals = np.fft.ifftn(embedded, axes=(-3, -2, -1)) * self.resolution**3
        return vals.real

    def analyze(self, values: np.ndarray, truncation: int) -> np.ndarray:
        """Trig coefficients of grid samples, truncated to the given order."""
        spec = np.fft.fftn(values, axes=(-3, -2, -1)) / self.resolution**3
        idx = self._bins(truncation)
        return spec[..., idx[:, None, None], idx[None, :, None], idx[None, None, :]]


def _hermitian_pair(coeffs: np.ndarray) -> np.ndarray:
    """conj(c(-m)) with the mode axes reversed in place of negation."""
    return coeffs[..., ::-1, ::-1, ::-1].conj()


class FourierField:
    """Immutable real-valued field on T^3 stored as Fourier coefficients.

    coeffs has shape (ncomp, 2N+1, 2N+1, 2N+1); axis index i corresponds
    to wavevector component i - N.
    """

    __slots__ = ("rank", "coeffs")

    def __init__(self, rank: str, coeffs: np.ndarray, *, _validated: bool = False):
        if rank not in RANK_COMPONENTS:
            raise UnsupportedRankError(f"unknown rank {rank!r}")
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        ncomp = RANK_COMPONENTS[rank]
        if coeffs.ndim != 4 or coeffs.shape[0] != ncomp:
            raise ValueError(
                f"rank {rank} expects coefficients of shape ({ncomp}, L, L, L)"
            )
        L = coeffs.shape[1]
        if coeffs.shape[1:] != (L, L, L) or L % 2 == 0:
            raise ValueError("coefficient array must be cubic with odd side")
        if not _validated:
            mirror = _hermitian_pair(coeffs)
            scale = max(np.abs(coeffs).max(), 1.0)
            if np.abs(coeffs - mirror).max() > HERMITIAN_TOL * scale:
                raise ValueError("coefficients violate Hermitian symmetry")
            coeffs = 0.5 * (coeffs + mirror)
        coeffs.setflags(write=False)
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "coeffs", coeffs)

    def __setattr__(self, name, value):  # immutability
        raise AttributeError("FourierField is immutable")

    # -- constructors ------------------------------------------------

    @classmethod
    def zeros(cls, rank: str, truncation: int) -> "FourierField":
        L = 2 * truncation + 1
        ncomp = RANK_COMPONENTS[rank]
        return cls(rank, np.zeros((ncomp, L, L, L), np.complex128), _validated=True)

    @classmethod
    def constant(cls, rank: str, values) -> "FourierField":
        ncomp = RANK_COMPONENTS[rank]
        vals = np.atleast_1d(np.asarray(values, dtype=float))
        if vals.shape != (ncomp,):
            raise ValueError(f"rank {rank} needs {ncomp} constant components")
        coeffs = vals.reshape(ncomp, 1, 1, 1).astype(np.complex128)
        return cls(rank, coeffs, _validated=True)

    @classmethod
    def from_modes(
        cls,
        rank: str,
        truncation: int,
        entries: Mapping[tuple, complex],
        *,
        complete: bool = True,
    ) -> "FourierField":
        """Build a field from sparse entries {(m1, m2, m3, comp): value}.

        With complete=True (default) the conjugate entry at -m is added
        automatically so the result is real-valued.
        """
        L = 2 * truncation + 1
        ncomp = RANK_COMPONENTS[rank]
        coeffs = np.zeros((ncomp, L, L, L), np.complex128)
        for key, value in entries.items():
            m1, m2, m3, comp = key
            coeffs[comp, m1 + truncation, m2 + truncation, m3 + truncation] += value
            if complete and (m1, m2, m3) != (0, 0, 0):
                coeffs[comp, -m1 + truncation, -m2 + truncation, -m3 + truncation] += (
                    np.conj(value)
                )
        return cls(rank, coeffs)

    # -- basic properties --------------------------------------------

    @property
    def truncation(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]

    def mode(self, m1: int, m2: int, m3: int, comp: int = 0) -> complex:
        n = self.truncation
        return complex(self.coeffs[comp, m1 + n, m2 + n, m3 + n])

    def pad_to(self, truncation: int) -> "FourierField":
        n = self.truncation
        if truncation < n:
            raise ValueError("cannot pad to a smaller truncation")
        if truncation == n:
            return self
        L = 2 * truncation + 1
        out = np.zeros((self.ncomp, L, L, L), np.complex128)
        s = slice(truncation - n, truncation + n + 1)
        out[:, s, s, s] = self.coeffs
        return FourierField(self.rank, out, _validated=True)

    def truncate_to(self, truncation: int) -> "FourierField":
        n = self.truncation
        if truncation >= n:
            return self.pad_to(truncation)
        s = slice(n - truncation, n + truncation + 1)
        return FourierField(self.rank, self.coeffs[:, s, s, s], _validated=True)

    # -- algebra ------------------------------------------------------

    def _binary(self, other: "FourierField", sign: float) -> "FourierField":
        if self.rank != other.rank:
            raise ValueError("rank mismatch")
        n = max(self.truncation, other.truncation)
        a = self.pad_to(n).coeffs
        b = other.pad_to(n).coeffs
        return FourierField(self.rank, a + sign * b, _validated=True)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __mul__(self, scalar):
        return FourierField(
            self.rank, self.coeffs * float(scalar), _validated=True
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # -- evaluation ----------------------------------------------------

    def eval(self, x) -> np.ndarray | float:
        """Value at a point by direct trigonometric summation.

        Returns a float for scalars, otherwise an array of 3 components
        in the coordinate frame.
        """
        x = np.asarray(x, dtype=float)
        m = mode_range(self.truncation)
        p1 = np.exp(1j * m * x[0])
        p2 = np.exp(1j * m * x[1])
        p3 = np.exp(1j * m * x[2])
        out = np.einsum("cijk,i,j,k->c", self.coeffs, p1, p2, p3).real
        return float(out[0]) if self.rank == "scalar" else out

    def sample(self, grid: CollocationGrid) -> np.ndarray:
        """Grid samples, shape (ncomp, M, M, M)."""
        return grid.synthesize(self.coeffs)

    def l2_flat(self) -> float:
        """L2 norm in the Euclidean metric (Parseval)."""
        return float(np.sqrt(VOLUME * np.sum(np.abs(self.coeffs) ** 2)))

    # -- serialization --------------------------------------------------

    def to_json_dict(self, tol: float = 0.0) -> dict:
        n = self.truncation
        entries = []
        it = np.argwhere(np.abs(self.coeffs) > tol)
        for comp, i, j, k in it:
            c = self.coeffs[comp, i, j, k]
            entries.append(
                [int(i - n), int(j - n), int(k - n), int(comp), float(c.real),
                 float(c.imag)]
            )
        entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
        return {"rank": self.rank, "N": n, "coeffs": entries}

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "FourierField":
        rank = data["rank"]
        n = int(data["N"])
        L = 2 * n + 1
        ncomp = RANK_COMPONENTS[rank]
        coeffs = np.zeros((ncomp, L, L, L), np.complex128)
        for m1, m2, m3, comp, re, im in data["coeffs"]:
            coeffs[int(comp), int(m1) + n, int(m2) + n, int(m3) + n] = re + 1j * im
        return cls(rank, coeffs)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "FourierField":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))

    def __repr__(self):
        nz = int(np.count_nonzero(self.coeffs))
        return f"FourierField(rank={self.rank!r}, N={self.truncation}, nnz={nz})"


# -- convenience constructors for trigonometric monomials ----------------


def cos_mode(rank: str, truncation: int, m, comp: int, amplitude: float = 1.0):
    """amplitude * cos(m . x) in the given component."""
    m1, m2, m3 = m
    return FourierField.from_modes(
        rank, truncation, {(m1, m2, m3, comp): amplitude / 2.0}
    )


def sin_mode(rank: str, truncation: int, m, comp: int, amplitude: float = 1.0):
    """amplitude * sin(m . x) in the given component."""
    m1, m2, m3 = m
    return FourierField.from_modes(
        rank, truncation, {(m1, m2, m3, comp): -0.5j * amplitude}
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

# order of the six stored components of a symmetric 3x3 tensor
METRIC_COMPONENTS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


@dataclass(frozen=True)
class MetricSamples:
    """Pointwise metric data cached on one collocation grid."""

    grid: CollocationGrid
    g: np.ndarray          # (M, M, M, 3, 3)
    inv: np.ndarray        # (M, M, M, 3, 3)
    sqrt_det: np.ndarray   # (M, M, M)

    @property
    def weight(self) -> np.ndarray:
        """sqrt(det g) g^{-1}, the 1-form quadrature weight."""
        return self.inv * self.sqrt_det[..., None, None]


class MetricField:
    """Riemannian metric on T^3 given by six scalar Fourier fields.

    Immutable; pointwise samples (g, its inverse, the volume density)
    are cached per collocation grid on first use and validated to be
    symmetric positive definite.
    """

    def __init__(self, components: Iterable[FourierField]):
        comps = tuple(components)
        if len(comps) != 6 or any(c.rank != "scalar" for c in comps):
            raise ValueError(
                "metric needs six scalar fields ordered g11,g22,g33,g23,g13,g12"
            )
        n = max(c.truncation for c in comps)
        self._components = tuple(c.pad_to(n) for c in comps)
        self._cache: dict[int, MetricSamples] = {}
        # validate SPD on the default grid right away
        self.samples(CollocationGrid.for_truncation(n))

    @property
    def components(self) -> tuple:
        return self._components

    @property
    def truncation(self) -> int:
        return self._components[0].truncation

    @property
    def is_flat(self) -> bool:
        for comp, (i, j) in zip(self._components, METRIC_COMPONENTS):
            want = 1.0 if i == j else 0.0
            c = comp.coeffs.copy()
            n = comp.truncation
            c[0, n, n, n] -= want
            if np.abs(c).max() > 1e-14:
                return False
        return True

    @property
    def is_conformally_flat(self) -> bool:
        """True when g = c^2 * identity for a constant c."""
        diag = [self._components[i] for i in range(3)]
        c0 = diag[0].mode(0, 0, 0)
        for comp, (i, j) in zip(self._components, METRIC_COMPONENTS):
            c = comp.coeffs.copy()
            n = comp.truncation
            c[0, n, n, n] -= c0 if i == j else 0.0
            if np.abs(c).max() > 1e-14:
                return False
        return True

    def samples(self, grid: CollocationGrid) -> MetricSamples:
        cached = self._cache.get(grid.resolution)
        if cached is not None:
            return cached
        vals = np.stack([c.sample(grid) for c in self._components])  # (6,1,M,M,M)
        vals = vals[:, 0]
        M = grid.resolution
        g = np.zeros((M, M, M, 3, 3))
        for comp, (i, j) in zip(vals, METRIC_COMPONENTS):
            g[..., i, j] = comp
            g[..., j, i] = comp
        eigs = np.linalg.eigvalsh(g)
        min_eig = eigs[..., 0]
        if min_eig.min() <= 0.0:
            flat_idx = int(np.argmin(min_eig))
            loc = np.unravel_index(flat_idx, (M, M, M))
            point = [grid.axis_points[i] for i in loc]
            raise DegenerateMetricError(point, min_eig.min())
        samples = MetricSamples(
            grid=grid,
            g=g,
            inv=np.linalg.inv(g),
            sqrt_det=np.sqrt(np.linalg.det(g)),
        )
        self._cache[grid.resolution] = samples
        return samples

    def eval(self, x) -> np.ndarray:
        """Metric tensor at a point, shape (3, 3)."""
        out = np.zeros((3, 3))
        for comp, (i, j) in zip(self._components, METRIC_COMPONENTS):
            v = comp.eval(x)
            out[i, j] = v
            out[j, i] = v
        return out

    # -- serialization ------------------------------------------------

    def to_json_dict(self) -> dict:
        n = self.truncation
        entries = []
        for comp_index, comp in enumerate(self._components):
            for m1, m2, m3, _, re, im in comp.to_json_dict()["coeffs"]:
                entries.append([m1, m2, m3, comp_index, re, im])
        entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
        return {"rank": "metric", "N": n, "coeffs": entries}

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "MetricField":
        if data.get("rank") != "metric":
            raise ValueError("not a metric file")
        n = int(data["N"])
        L = 2 * n + 1
        comps = np.zeros((6, 1, L, L, L), np.complex128)
        for m1, m2, m3, comp, re, im in data["coeffs"]:
            comps[int(comp), 0, int(m1) + n, int(m2) + n, int(m3) + n] = re + 1j * im
        return cls(FourierField("scalar", comps[i]) for i in range(6))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "MetricField":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))

    def __repr__(self):
        kind = "flat" if self.is_flat else f"N={self.truncation}"
        return f"MetricField({kind})"


def flat_metric() -> MetricField:
    one = FourierField.constant("scalar", [1.0])
    zero = FourierField.zeros("scalar", 0)
    return MetricField([one, one, one, zero, zero, zero])


def conformal_metric(c: float) -> MetricField:
    if c <= 0:
        raise ValueError("conformal factor must be positive")
    d = FourierField.constant("scalar", [c * c])
    zero = FourierField.zeros("scalar", 0)
    return MetricField([d, d, d, zero, zero, zero])


def random_metric(
    smoothness: float,
    amplitude: float,
    seed,
    *,
    cutoff: int = 2,
    base: MetricField | None = None,
    max_retries: int = 20,
) -> MetricField:
    """Random SPD perturbation of a base metric.

    g = base + amplitude * h where h is a random symmetric trigonometric
    polynomial with independent coefficients damped by
    (1 + |m|)^(-smoothness - 2), a proxy for an amplitude-controlled
    C^smoothness neighborhood. Resamples (bounded retries) if a draw
    fails the SPD grid check.
    """
    from .errors import EnsembleAmplitudeError

    if base is None:
        base = flat_metric()
    n_base = base.truncation
    n_out = max(n_base, cutoff)
    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = np.random.Generator(np.random.Philox(key=int(seed) % 2**128))
    mvals = mode_range(cutoff)
    mx, my, mz = np.meshgrid(mvals, mvals, mvals, indexing="ij")
    damp = (1.0 + np.sqrt(mx**2 + my**2 + mz**2)) ** (-smoothness - 2.0)
    for _ in range(max_retries):
        comps = []
        for _c in range(6):
            re = rng.standard_normal(damp.shape)
            im = rng.standard_normal(damp.shape)
            c = (re + 1j * im) * damp
            c = 0.5 * (c + c[::-1, ::-1, ::-1].conj())  # make the field real
            comps.append(FourierField("scalar", c[None, ...]))
        try:
            fields = []
            for bc, hc in zip(base.components, comps):
                fields.append(bc.pad_to(n_out) + amplitude * hc.pad_to(n_out))
            return MetricField(fields)
        except DegenerateMetricError:
            continue
    raise EnsembleAmplitudeError(
        f"no SPD sample after {max_retries} retries: amplitude {amplitude} too "
        f"large for smoothness {smoothness}"
    )


def named_metric(spec: str) -> MetricField:
    """Parse a named metric: "flat", "conformal(c)", "random_cr(r, eps, seed)"."""
    spec = spec.strip()
    if spec == "flat":
        return flat_metric()
    if spec.startswith("conformal(") and spec.endswith(")"):
        return conformal_metric(float(spec[len("conformal("):-1]))
    if spec.startswith("random_cr(") and spec.endswith(")"):
        parts = [p.strip() for p in spec[len("random_cr("):-1].split(",")]
        if len(parts) not in (3, 4):
            raise ValueError("random_cr takes (r, eps, seed[, cutoff])")
        r, eps = float(parts[0]), float(parts[1])
        seed = int(parts[2])
        cutoff = int(parts[3]) if len(parts) == 4 else 2
        return random_metric(r, eps, seed, cutoff=cutoff)
    raise ValueError(f"unknown metric name {spec!r}")


# ---------------------------------------------------------------------------
# Exterior calculus operations
# ---------------------------------------------------------------------------


def _mode_grids(truncation: int):
    m = mode_range(truncation)
    return np.meshgrid(m, m, m, indexing="ij")


def exterior_d(field: FourierField) -> FourierField:
    """Exterior derivative, exact in coefficient space.

    Scalars map to 1-forms (gradient); 1-forms map to 2-forms (curl in
    the component conventions of this module). Higher ranks are rejected.
    """
    mx, my, mz = _mode_grids(field.truncation)
    c = field.coeffs
    if field.rank == "scalar":
        out = 1j * np.stack([mx * c[0], my * c[0], mz * c[0]])
        return FourierField("one_form", out, _validated=True)
    if field.rank == "one_form":
        out = 1j * np.stack(
            [
                my * c[2] - mz * c[1],
                mz * c[0] - mx * c[2],
                mx * c[1] - my * c[0],
            ]
        )
        return FourierField("two_form", out, _validated=True)
    raise UnsupportedRankError(
        f"exterior derivative implemented for ranks 0 and 1, got {field.rank}"
    )


def _coefficient_divergence(coeffs: np.ndarray) -> np.ndarray:
    """d of a 2-form in coefficient space: i m . b, one scalar component."""
    n = (coeffs.shape[-1] - 1) // 2
    mx, my, mz = _mode_grids(n)
    return (1j * (mx * coeffs[0] + my * coeffs[1] + mz * coeffs[2]))[None, ...]


def default_grid(*objects) -> CollocationGrid:
    """Shared grid sized for the largest truncation among fields/metrics."""
    n = max(obj.truncation for obj in objects)
    return CollocationGrid.for_truncation(n)


def hodge(
    metric: MetricField,
    field: FourierField,
    grid: CollocationGrid | None = None,
    out_truncation: int | None = None,
) -> FourierField:
    """Pointwise Hodge star of a 1-form or 2-form on the dealiased grid.

    The result is re-truncated to the input truncation unless
    out_truncation says otherwise.
    """
    if field.rank not in ("one_form", "two_form"):
        raise UnsupportedRankError(f"hodge star needs a 1- or 2-form, got {field.rank}")
    if grid is None:
        grid = default_grid(metric, field)
    ms = metric.samples(grid)
    vals = field.sample(grid)  # (3, M, M, M)
    v = np.moveaxis(vals, 0, -1)  # (M, M, M, 3)
    if field.rank == "one_form":
        out_v = np.einsum("...ab,...b->...a", ms.inv, v) * ms.sqrt_det[..., None]
        out_rank = "two_form"
    else:
        out_v = np.einsum("...ab,...b->...a", ms.g, v) / ms.sqrt_det[..., None]
        out_rank = "one_form"
    n_out = field.truncation if out_truncation is None else out_truncation
    coeffs = grid.analyze(np.moveaxis(out_v, -1, 0), n_out)
    return FourierField(out_rank, coeffs)


def sharp(
    metric: MetricField,
    form: FourierField,
    grid: CollocationGrid | None = None,
    out_truncation: int | None = None,
) -> FourierField:
    """Raise the index of a 1-form to a vector field."""
    if form.rank != "one_form":
        raise UnsupportedRankError("sharp needs a 1-form")
    if grid is None:
        grid = default_grid(metric, form)
    ms = metric.samples(grid)
    v = np.moveaxis(form.sample(grid), 0, -1)
    out = np.einsum("...ab,...b->...a", ms.inv, v)
    n_out = form.truncation if out_truncation is None else out_truncation
    return FourierField("vector", grid.analyze(np.moveaxis(out, -1, 0), n_out))


def flat(
    metric: MetricField,
    vector: FourierField,
    grid: CollocationGrid | None = None,
    out_truncation: int | None = None,
) -> FourierField:
    """Lower the index of a vector field to a 1-form."""
    if vector.rank != "vector":
        raise UnsupportedRankError("flat needs a vector field")
    if grid is None:
        grid = default_grid(metric, vector)
    ms = metric.samples(grid)
    v = np.moveaxis(vector.sample(grid), 0, -1)
    out = np.einsum("...ab,...b->...a", ms.g, v)
    n_out = vector.truncation if out_truncation is None else out_truncation
    return FourierField("one_form", grid.analyze(np.moveaxis(out, -1, 0), n_out))


def codifferential(
    metric: MetricField,
    form: FourierField,
    grid: CollocationGrid | None = None,
    out_truncation: int | None = None,
) -> FourierField:
    """Codifferential of a 1-form, the negative metric divergence.

    Computed as -(1/sqrt(det g)) d_a (sqrt(det g) g^{ab} alpha_b) with the
    derivative taken exactly in coefficient space on the dealiased grid.
    The sign makes <d phi, alpha> = <phi, delta alpha> in the weighted
    inner products (checked by the adjointness tests). The result keeps
    the full grid bandwidth by default so that pairing identity holds to
    round-off; pass out_truncation to re-truncate.
    """
    if form.rank != "one_form":
        raise UnsupportedRankError("codifferential needs a 1-form")
    if grid is None:
        grid = default_grid(metric, form)
    ms = metric.samples(grid)
    v = np.moveaxis(form.sample(grid), 0, -1)
    dens = np.einsum("...ab,...b->...a", ms.weight, v)  # sqrt(g) g^{-1} alpha
    dens_coeffs = grid.analyze(np.moveaxis(dens, -1, 0), grid.max_truncation)
    div_coeffs = _coefficient_divergence(dens_coeffs)
    div_vals = grid.synthesize(div_coeffs)[0]
    out_vals = -div_vals / ms.sqrt_det
    n_out = grid.max_truncation if out_truncation is None else out_truncation
    return FourierField("scalar", grid.analyze(out_vals[None, ...], n_out))


def l2_inner(
    metric: MetricField,
    a: FourierField,
    b: FourierField,
    grid: CollocationGrid | None = None,
) -> float:
    """Weighted L2 inner product by grid quadrature.

    Scalars pair against the volume density, 1-forms through the inverse
    metric, vectors through the metric.
    """
    if a.rank != b.rank:
        raise ValueError("rank mismatch in inner product")
    if grid is None:
        grid = default_grid(metric, a, b)
    ms = metric.samples(grid)
    va = a.sample(grid)
    vb = b.sample(grid)
    if a.rank == "scalar":
        integrand = va[0] * vb[0]
    elif a.rank == "one_form":
        integrand = np.einsum(
            "...ab,a...,b...->...", ms.inv, va, vb
        )
    elif a.rank == "vector":
        integrand = np.einsum("...ab,a...,b...->...", ms.g, va, vb)
    else:
        raise UnsupportedRankError("inner product for scalar/one_form/vector only")
    return float(grid.weight * np.sum(integrand * ms.sqrt_det))


def l2_norm(metric: MetricField, a: FourierField, grid=None) -> float:
    return float(np.sqrt(max(l2_inner(metric, a, a, grid), 0.0)))


def wedge_pairing_samples(
    form: FourierField, grid: CollocationGrid | None = None
) -> np.ndarray:
    """Grid samples of (alpha ^ d alpha) / (dx^dy^dz)."""
    if form.rank != "one_form":
        raise UnsupportedRankError("contact pairing needs a 1-form")
    if grid is None:
        grid = CollocationGrid.for_truncation(form.truncation)
    a = form.sample(grid)
    da = exterior_d(form).sample(grid)
    return np.einsum("c...,c...->...", a, da)


def contact_defect(form: FourierField, grid: CollocationGrid | None = None) -> float:
    """min over the grid of |(alpha ^ d alpha)/(dx^dy^dz)|.

    Strictly positive iff the form is certified contact at grid
    resolution.
    """
    return float(np.abs(wedge_pairing_samples(form, grid)).min())


# ---------------------------------------------------------------------------
# Fast point evaluation (value + Jacobian) for flowline integration
# ---------------------------------------------------------------------------


class FieldJet:
    """Evaluate a 3-component field and its Jacobian at arbitrary points.

    Precomputes derivative coefficient arrays so one call costs a few
    small tensor contractions. Used as the right-hand side of all orbit
    and stability integrators.
    """

    def __init__(self, field: FourierField):
        if field.ncomp != 3:
            raise UnsupportedRankError("jet evaluation needs a 3-component field")
        self.field = field
        n = field.truncation
        self._modes = mode_range(n)
        mx, my, mz = _mode_grids(n)
        c = field.coeffs
        stacked = np.stack([c, 1j * mx * c, 1j * my * c, 1j * mz * c])
        self._stacked = stacked  # (4, 3, L, L, L)

    @property
    def truncation(self):
        return self.field.truncation

    def value(self, x) -> np.ndarray:
        return self.field.eval(x)

    def value_and_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        p1 = np.exp(1j * self._modes * x[0])
        p2 = np.exp(1j * self._modes * x[1])
        p3 = np.exp(1j * self._modes * x[2])
        out = np.einsum("dcijk,i,j,k->dc", self._stacked, p1, p2, p3).real
        value = out[0]
        jac = out[1:].T.copy()  # jac[a, b] = d_b u_a
        return value, jac

    def jacobian(self, x) -> np.ndarray:
        return self.value_and_jacobian(x)[1]


def as_jet(field_or_jet) -> FieldJet:
    if isinstance(field_or_jet, FourierField):
        return FieldJet(field_or_jet)
    return field_or_jet


class MetricJet:
    """Metric tensor and its first derivatives at arbitrary points."""

    def __init__(self, metric: MetricField):
        self.metric = metric
        n = metric.truncation
        self._modes = mode_range(n)
        mx, my, mz = _mode_grids(n)
        c = np.concatenate([f.coeffs for f in metric.components])  # (6, L,L,L)
        self._stacked = np.stack([c, 1j * mx * c, 1j * my * c, 1j * mz * c])

    def value_and_gradient(self, x):
        """Returns g (3,3) and dg (3,3,3) with dg[b] = d_b g."""
        x = np.asarray(x, dtype=float)
        p1 = np.exp(1j * self._modes * x[0])
        p2 = np.exp(1j * self._modes * x[1])
        p3 = np.exp(1j * self._modes * x[2])
        out = np.einsum("dcijk,i,j,k->dc", self._stacked, p1, p2, p3).real
        g = np.zeros((3, 3))
        dg = np.zeros((3, 3, 3))
        for comp, (i, j) in enumerate(METRIC_COMPONENTS):
            g[i, j] = g[j, i] = out[0, comp]
            for b in range(3):
                dg[b, i, j] = dg[b, j, i] = out[1 + b, comp]
        return g, dg
