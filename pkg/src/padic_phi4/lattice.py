"""Finite window Lambda_s / (L^-r Z_p)^3 as a p^3-ary tree, and the exact Gaussian sampler.

Cells of the window are labelled by integer triples ``t`` in ``[0, p**D)^3``
with ``D = l (s - r)``: the cell of a point ``x`` (``|x| <= L**s``) keeps the
base-p digits of index ``-ls .. -lr-1`` of each coordinate, and ``t_i`` is
that digit string read as an integer (digit of index ``-ls`` least
significant).  The flat cell index interleaves the three coordinates one
digit at a time, coarsest digit first, so each tree node owns a contiguous
block of indices.

Two unit conventions are used.  ``v`` is the field in the original
normalisation (``C_r(0) = <v^2>``); ``u = L**(r [phi]) v`` is the rescaled
field whose single-cell variance ``sigma_u^2 = (1 - p^-3)/(1 - p^(-2[phi]))``
does not depend on ``r``.  Fluctuations of the tree level whose children have
radius ``p**n`` enter ``u`` with weight ``p**(-(n - lr)[phi])``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .covariance import CovarianceKernel, CutoffWindow
from .padic import Cell, ModelParams, PadicVector3, Rotation, reduce_mod_ball, vec_norm_exponent
from .testfunctions import TestFunction

GENERATOR_ID = "numpy.Philox(SeedSequence)"


class OutOfBoxError(ValueError):
    pass


def make_rng(seed, *spawn_key: int) -> np.random.Generator:
    """Philox stream keyed by ``SeedSequence(seed, spawn_key)``.

    Child streams (chains, batches) use ``spawn_key=(index,)``; numpy's
    SeedSequence hashes the pair, so streams are independent and reproducible.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def sigma_u2(params: ModelParams) -> float:
    p, phi = params.p, params.phi_dim
    return (1.0 - p ** -3.0) / (1.0 - p ** (-2.0 * phi))


@dataclass(frozen=True)
class LatticeGeometry:
    params: ModelParams
    window: CutoffWindow

    def __post_init__(self):
        self.window.check_budget(self.params)

    # basic sizes
    @property
    def p(self) -> int:
        return self.params.p

    @property
    def r(self) -> int:
        return self.window.r

    @property
    def s(self) -> int:
        return self.window.s

    @property
    def depth(self) -> int:
        return self.params.l * (self.s - self.r)

    @property
    def family(self) -> int:
        return self.p ** 3

    @property
    def cell_count(self) -> int:
        return self.family ** self.depth

    @property
    def lr(self) -> int:
        return self.params.l * self.r

    @property
    def ls(self) -> int:
        return self.params.l * self.s

    @property
    def cell_volume(self) -> float:
        return float(self.params.L) ** (3 * self.r)

    @property
    def v_per_u(self) -> float:
        """Conversion factor v = v_per_u * u, i.e. L**(-r [phi])."""
        return float(self.params.L) ** (-self.r * self.params.phi_dim)

    def level_weights(self) -> np.ndarray:
        """u-unit weight of the fluctuation at tree depth d (root d = 0)."""
        phi = self.params.phi_dim
        D = self.depth
        return np.array([self.p ** (-(D - 1 - d) * phi) for d in range(D)])

    @property
    def zero_mode_sigma(self) -> float:
        """u-unit standard deviation of the box-constant mode."""
        return math.sqrt(sigma_u2(self.params)) * self.p ** (-self.depth * self.params.phi_dim)

    @property
    def coordinate_count(self) -> int:
        return self.family * sum(self.family ** d for d in range(self.depth)) + 1

    def kernel(self) -> CovarianceKernel:
        return CovarianceKernel(self.params, self.r)

    # --- labels ------------------------------------------------------------
    def digits_to_index(self, t) -> np.ndarray:
        """Flat indices for integer triples ``t`` (shape (n, 3))."""
        t = np.atleast_2d(np.asarray(t, dtype=np.int64))
        p, D = self.p, self.depth
        idx = np.zeros(len(t), dtype=np.int64)
        for d in range(D):
            digit = ((t // p ** d) % p) @ np.array([1, p, p * p], dtype=np.int64)
            idx = idx * self.family + digit
        return idx

    def index_to_digits(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).copy()
        p, D = self.p, self.depth
        t = np.zeros((idx.size, 3), dtype=np.int64)
        for d in range(D - 1, -1, -1):
            digit = idx % self.family
            idx //= self.family
            t[:, 0] += (digit % p) * p ** d
            t[:, 1] += ((digit // p) % p) * p ** d
            t[:, 2] += (digit // (p * p)) * p ** d
        return t

    def all_digits(self) -> np.ndarray:
        return self.index_to_digits(np.arange(self.cell_count))

    def point_digits(self, x) -> tuple[int, int, int]:
        comps = x.components if isinstance(x, PadicVector3) else tuple(Fraction(c) for c in x)
        if vec_norm_exponent(comps, self.p) > self.ls:
            raise OutOfBoxError(f"point {comps} lies outside the box of radius p^{self.ls}")
        scale = self.p ** self.ls
        return tuple(int(reduce_mod_ball(c, self.p, self.lr) * scale) % self.p ** self.depth
                     for c in comps)

    def cell(self, index: int) -> Cell:
        t = self.index_to_digits([index])[0]
        base = Fraction(self.p) ** (-self.ls)
        return Cell(self.p, self.lr, tuple(int(a) * base for a in t))

    def node_block(self, cell: Cell) -> tuple[int, int]:
        """Index range [start, stop) of the finest cells inside ``cell`` (scale >= lr)."""
        if cell.scale < self.lr:
            raise ValueError("cell finer than the lattice")
        if cell.scale > self.ls:
            raise OutOfBoxError("cell larger than the box")
        if vec_norm_exponent(cell.center, self.p) > self.ls:
            raise OutOfBoxError("cell outside the box")
        d = self.ls - cell.scale
        t = self.point_digits(cell.center)
        start = int(self.digits_to_index([t])[0])
        size = self.family ** (self.depth - d)
        start -= start % size
        return start, start + size

    def distance_exponent(self, i: int, j: int) -> float:
        """Norm exponent of x - y for points of cells i and j (-inf if same cell)."""
        if i == j:
            return -math.inf
        t = self.index_to_digits([i, j])
        diff = t[0] - t[1]
        v = min((_int_val(int(x), self.p) for x in diff), default=math.inf)
        return self.ls - v


def _int_val(n: int, p: int) -> float:
    if n == 0:
        return math.inf
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def cell_index(x, geometry: LatticeGeometry) -> int:
    """Flat index of the finest cell containing ``x``."""
    return int(geometry.digits_to_index([geometry.point_digits(x)])[0])


# ---------------------------------------------------------------------------
# coordinates and fields


@dataclass
class MultiscaleCoordinates:
    """Standard-normal coordinates: ``levels[d]`` has shape (p^(3d), p^3); plus the zero mode."""

    levels: list
    zero_mode: float
    seed: object = None

    @classmethod
    def zeros(cls, geometry: LatticeGeometry) -> "MultiscaleCoordinates":
        fam = geometry.family
        return cls([np.zeros((fam ** d, fam)) for d in range(geometry.depth)], 0.0)

    @classmethod
    def from_flat(cls, flat, geometry: LatticeGeometry, seed=None) -> "MultiscaleCoordinates":
        flat = np.asarray(flat, dtype=float)
        if flat.size != geometry.coordinate_count:
            raise ValueError(f"expected {geometry.coordinate_count} coordinates, got {flat.size}")
        fam = geometry.family
        levels, pos = [], 0
        for d in range(geometry.depth):
            n = fam ** (d + 1)
            levels.append(flat[pos:pos + n].reshape(fam ** d, fam).copy())
            pos += n
        return cls(levels, float(flat[pos]), seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([lv.ravel() for lv in self.levels] + [np.array([self.zero_mode])])

    def copy(self) -> "MultiscaleCoordinates":
        return MultiscaleCoordinates([lv.copy() for lv in self.levels], self.zero_mode, self.seed)

    def check(self, geometry: LatticeGeometry) -> None:
        fam = geometry.family
        if len(self.levels) != geometry.depth or any(
            lv.shape != (fam ** d, fam) for d, lv in enumerate(self.levels)
        ):
            raise ValueError("coordinate layout does not match the lattice geometry")


@dataclass
class FieldConfiguration:
    """Field values ``v`` per finest cell, in flat cell-index order."""

    values: np.ndarray
    geometry: LatticeGeometry
    seed: object = None

    @property
    def u(self) -> np.ndarray:
        return self.values / self.geometry.v_per_u


def synthesize_u(coords: MultiscaleCoordinates, geometry: LatticeGeometry) -> np.ndarray:
    """Rescaled field u for one coordinate set."""
    coords.check(geometry)
    fam, D = geometry.family, geometry.depth
    w = geometry.level_weights()
    u = np.full(geometry.cell_count, geometry.zero_mode_sigma * coords.zero_mode)
    for d, z in enumerate(coords.levels):
        fluct = (z - z.mean(axis=1, keepdims=True)).ravel() * w[d]
        u += np.repeat(fluct, fam ** (D - 1 - d))
    return u


def synthesize(coords: MultiscaleCoordinates, geometry: LatticeGeometry) -> FieldConfiguration:
    """Field from multiscale coordinates; i.i.d. N(0,1) coordinates give exactly mu_{C_r} on the box."""
    u = synthesize_u(coords, geometry)
    return FieldConfiguration(u * geometry.v_per_u, geometry, coords.seed)


def synthesize_batch_u(flat: np.ndarray, geometry: LatticeGeometry) -> np.ndarray:
    """Vectorised synthesis; ``flat`` has shape (batch, coordinate_count)."""
    flat = np.atleast_2d(flat)
    B = flat.shape[0]
    fam, D = geometry.family, geometry.depth
    w = geometry.level_weights()
    u = np.repeat((flat[:, -1] * geometry.zero_mode_sigma)[:, None], geometry.cell_count, axis=1)
    pos = 0
    for d in range(D):
        n = fam ** (d + 1)
        z = flat[:, pos:pos + n].reshape(B, fam ** d, fam)
        pos += n
        fluct = (z - z.mean(axis=2, keepdims=True)).reshape(B, n) * w[d]
        u += np.repeat(fluct, fam ** (D - 1 - d), axis=1)
    return u


def synthesis_matrix(geometry: LatticeGeometry) -> np.ndarray:
    """Linear map A from coordinates to v-values (rows = cells)."""
    n = geometry.coordinate_count
    A = synthesize_batch_u(np.eye(n), geometry).T
    return A * geometry.v_per_u


def gram_of_window(geometry: LatticeGeometry) -> np.ndarray:
    """C_r(x_i - x_j) over all finest cells, from the closed form."""
    kern = geometry.kernel()
    N = geometry.cell_count
    t = geometry.all_digits()
    G = np.empty((N, N))
    for i in range(N):
        diff = t - t[i]
        v = np.full(N, np.inf)
        for c in range(3):
            v = np.minimum(v, _vec_int_val(diff[:, c], geometry.p))
        for j in range(N):
            m = -math.inf if v[j] == np.inf else geometry.ls - int(v[j])
            G[i, j] = kern.c_closed(m)
    return G


def _vec_int_val(a: np.ndarray, p: int) -> np.ndarray:
    a = np.abs(a.astype(np.int64))
    out = np.full(a.shape, np.inf)
    live = a != 0
    out[live] = 0
    work = a.copy()
    while True:
        m = live & (work % p == 0)
        if not m.any():
            return out
        work[m] //= p
        out[m] += 1


def sample_gaussian(geometry: LatticeGeometry, seed, *spawn_key: int) -> FieldConfiguration:
    """Exact draw from mu_{C_r} restricted to the box; bit-identical for equal seeds."""
    rng = make_rng(seed, *spawn_key)
    flat = rng.standard_normal(geometry.coordinate_count)
    coords = MultiscaleCoordinates.from_flat(flat, geometry, seed)
    return synthesize(coords, geometry)


def sample_gaussian_batch(geometry: LatticeGeometry, seed, count: int, batch: int = 256):
    """Yield v-value arrays of shape (<=batch, cells), ``count`` draws in total."""
    rng = make_rng(seed)
    done = 0
    while done < count:
        b = min(batch, count - done)
        flat = rng.standard_normal((b, geometry.coordinate_count))
        yield synthesize_batch_u(flat, geometry) * geometry.v_per_u
        done += b


# ---------------------------------------------------------------------------
# pairing with test functions


def pairing_weights(f: TestFunction, geometry: LatticeGeometry) -> np.ndarray:
    """Vector w with phi(f) = w . values for every field on the window."""
    if not f.is_real():
        raise ValueError("pairing needs a real test function")
    w = np.zeros(geometry.cell_count)
    for c, coeff in f.terms.items():
        if vec_norm_exponent(c.center, geometry.p) > geometry.ls or c.scale > geometry.ls:
            raise OutOfBoxError("test function support leaves the box")
        if c.scale >= geometry.lr:
            a, b = geometry.node_block(c)
            w[a:b] += coeff * geometry.cell_volume
        else:
            i = cell_index(c.center, geometry)
            w[i] += coeff * float(c.volume)
    return w


def pair(field: FieldConfiguration, f: TestFunction) -> float:
    """phi(f) = sum over cells of L^(3r) * value * coefficient."""
    if not f.terms:
        return 0.0
    return float(pairing_weights(f, field.geometry) @ field.values)


# ---------------------------------------------------------------------------
# symmetry actions on fields


def translation_permutation(geometry: LatticeGeometry, y) -> np.ndarray:
    """sigma with (tau_y phi)[sigma[i]] = phi[i]."""
    comps = y.components if isinstance(y, PadicVector3) else tuple(Fraction(c) for c in y)
    if vec_norm_exponent(comps, geometry.p) > geometry.ls:
        raise OutOfBoxError("translation by |y| > L^s does not preserve the box")
    ty = np.array(geometry.point_digits(comps), dtype=np.int64)
    t = geometry.all_digits()
    return geometry.digits_to_index((t + ty) % geometry.p ** geometry.depth)


def rotation_permutation(geometry: LatticeGeometry, M: Rotation) -> np.ndarray:
    """sigma with (M phi)[sigma[i]] = phi[i]."""
    if M.precision < geometry.depth:
        from .padic import PrecisionError

        raise PrecisionError(f"rotation needs {geometry.depth} digits, has {M.precision}")
    mod = geometry.p ** geometry.depth
    t = geometry.all_digits()
    m = np.array(M.matrix, dtype=object) % mod
    if mod < 2 ** 20:
        img = (t @ m.astype(np.int64).T) % mod
    else:
        img = np.array([[sum(int(m[i][k]) * int(row[k]) for k in range(3)) % mod for i in range(3)]
                        for row in t], dtype=np.int64)
    return geometry.digits_to_index(img)


def act_on_field(field: FieldConfiguration, transformation) -> FieldConfiguration:
    """Apply a translation (PadicVector3 / triple) or a Rotation to a field."""
    g = field.geometry
    if isinstance(transformation, Rotation):
        sigma = rotation_permutation(g, transformation)
    else:
        sigma = translation_permutation(g, transformation)
    out = np.empty_like(field.values)
    out[sigma] = field.values
    return FieldConfiguration(out, g, field.seed)


# ---------------------------------------------------------------------------
# serialisation

_FIELD_MAGIC = b"PADFIELD"


def write_field(fh, field: FieldConfiguration, seed=0, generator: str = GENERATOR_ID) -> None:
    """Binary snapshot: header (p, l, r, s, seed, generator id) + little-endian float64 values."""
    g = field.geometry
    gen = generator.encode("ascii")
    fh.write(_FIELD_MAGIC)
    fh.write(struct.pack("<IIiiQH", g.p, g.params.l, g.r, g.s, int(seed) & (2 ** 64 - 1), len(gen)))
    fh.write(gen)
    fh.write(struct.pack("<dQ", g.params.epsilon, g.cell_count))
    fh.write(np.asarray(field.values, dtype="<f8").tobytes())


def read_field(fh) -> tuple[FieldConfiguration, dict]:
    if fh.read(8) != _FIELD_MAGIC:
        raise ValueError("not a field snapshot")
    p, l, r, s, seed, n = struct.unpack("<IIiiQH", fh.read(struct.calcsize("<IIiiQH")))
    gen = fh.read(n).decode("ascii")
    eps, count = struct.unpack("<dQ", fh.read(16))
    geometry = LatticeGeometry(ModelParams(p, l, eps), CutoffWindow(r, s))
    values = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(float)
    if values.size != geometry.cell_count:
        raise ValueError("truncated field snapshot")
    return FieldConfiguration(values, geometry, seed), {"seed": seed, "generator": gen}


def field_to_csv(field: FieldConfiguration) -> str:
    g = field.geometry
    t = g.all_digits()
    buf = io.StringIO()
    buf.write("index,t1,t2,t3,value\n")
    for i, (row, v) in enumerate(zip(t, field.values)):
        buf.write(f"{i},{row[0]},{row[1]},{row[2]},{v!r}\n")
    return buf.getvalue()
