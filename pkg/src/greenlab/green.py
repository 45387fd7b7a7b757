"""Killed-domain Green solves, exit distributions, boundary Green matrices,
Monte Carlo hitting estimators, and the quarter-plane killed walk.

Conventions.  For a finite domain Omega and a finite-range symmetric step
law mu, the killed Green table solves (I - P_Omega) v = delta_a where
P_Omega[x, y] = mu(x^{-1} y) for x, y in Omega; v equals G_Omega(a, .),
the expected visit counts before exiting Omega.  Killed values increase
monotonically to the full Green function as Omega grows.  The outer
boundary of a set S is always taken with respect to T = supp(mu), and that
choice is recorded on the domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import groups
from .groups import GroupSpec, identity, inv, mul
from .measures import StepMeasure

DIRECT_SOLVE_MAX = 4000       # direct factorization below this many unknowns
DEFAULT_TOL = 1e-10


class TransienceError(ValueError):
    """Full-plane Green request on a non-transient backend."""


class SolverError(RuntimeError):
    pass


def check_transient(spec: GroupSpec) -> None:
    if spec.variant == "lattice" and spec.d <= 2:
        raise TransienceError(
            f"{spec.label()} walk is recurrent; only the quadrant-killed "
            "Z^2 case is supported")


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

class Domain:
    """Finite element set S with optional outer boundary w.r.t. support T.

    Payload lookups go through ``lookup`` so large domains can keep an
    array-backed index instead of a tuple dict.
    """

    def __init__(self, spec: GroupSpec, label: str, elements: list,
                 boundary: Optional[list], support: tuple):
        self.spec = spec
        self.label = label
        self.elements = elements
        self.boundary = boundary
        self.support = support
        self._index = None

    def __len__(self):
        return len(self.elements)

    def __contains__(self, g):
        return self.lookup(g) is not None

    def lookup(self, g) -> Optional[int]:
        if self._index is None:
            self._index = {h: i for i, h in enumerate(self.elements)}
        return self._index.get(g)

    def iter_indexed(self):
        return ((g, i) for i, g in enumerate(self.elements))


class _FreeBallDomain(Domain):
    """Word ball in F_k with int-coded elements (letters base 2k, lead marker).

    Letter codes: generator i -> 2(i-1), its inverse -> 2(i-1)+1; appending
    letter l to code c is (c << s) | l unless it cancels the last letter
    (l == last ^ 1), in which case c >> s.  Used only for the standard
    one-letter support.
    """

    def __init__(self, spec: GroupSpec, radius: int, with_boundary: bool):
        self.rank = spec.rank
        self.two_k = 2 * spec.rank
        self.shift = int(np.ceil(np.log2(self.two_k)))
        # level r holds the codes of reduced words of length exactly r; a
        # non-cancelling append is exactly a step whose code crosses the
        # next length threshold 2^(shift*(r+1))
        levels = [np.array([1], dtype=np.int64)]
        for r in range(radius):
            stepped = self._step_all(levels[-1])
            thresh = np.int64(1) << (self.shift * (r + 1))
            levels.append(np.unique(stepped[stepped >= thresh]))
        self.level_codes = levels
        self.codes = np.sort(np.concatenate(levels))
        boundary = None
        if with_boundary:
            stepped = self._step_all(levels[radius])
            thresh = np.int64(1) << (self.shift * (radius + 1))
            bcodes = np.unique(stepped[stepped >= thresh])
            boundary = sorted(self.decode(int(c)) for c in bcodes)
        self.spec = spec
        self.label = f"ball[F_{spec.rank},R={radius}]"
        self.boundary = boundary
        self.support = tuple(groups.standard_generators(spec).elements)
        self._elements = None

    def _step_all(self, codes: np.ndarray) -> np.ndarray:
        outs = []
        s = self.shift
        for letter in range(self.two_k):
            last = codes & ((1 << s) - 1)
            nontrivial = codes != 1
            cancel = nontrivial & (last == (letter ^ 1))
            stepped = np.where(cancel, codes >> s, (codes << s) | letter)
            outs.append(stepped)
        return np.concatenate(outs)

    # -- payload conversions -------------------------------------------------

    def encode(self, word: tuple) -> int:
        c = 1
        for letter in word:
            l = 2 * (abs(letter) - 1) + (1 if letter < 0 else 0)
            c = (c << self.shift) | l
        return c

    def decode(self, code: int) -> tuple:
        letters = []
        s = self.shift
        while code != 1:
            l = code & ((1 << s) - 1)
            sign = -1 if (l & 1) else 1
            letters.append(sign * (l // 2 + 1))
            code >>= s
        return tuple(reversed(letters))

    # -- Domain interface ----------------------------------------------------

    @property
    def elements(self):
        if self._elements is None:
            self._elements = [self.decode(int(c)) for c in self.codes]
        return self._elements

    @elements.setter
    def elements(self, value):
        self._elements = value

    def __len__(self):
        return len(self.codes)

    def lookup(self, g) -> Optional[int]:
        c = self.encode(g)
        i = int(np.searchsorted(self.codes, c))
        if i < len(self.codes) and self.codes[i] == c:
            return i
        return None

    def iter_indexed(self):
        return ((g, i) for i, g in enumerate(self.elements))

    def code_positions(self, codes: np.ndarray) -> np.ndarray:
        """Indices of codes in the domain (-1 when absent)."""
        i = np.searchsorted(self.codes, codes)
        i = np.clip(i, 0, len(self.codes) - 1)
        hit = self.codes[i] == codes
        return np.where(hit, i, -1)


class _LatticeBallDomain(Domain):
    """L1 ball in Z^d with a dense grid index for O(1) vector lookups."""

    def __init__(self, spec: GroupSpec, radius: int, center, with_boundary: bool,
                 support: tuple):
        coords = np.array(groups.lattice_ball(spec.d, radius), dtype=np.int64)
        coords += np.asarray(center, dtype=np.int64)
        boundary = None
        if with_boundary:
            sphere = np.array(
                [g for g in groups.lattice_ball(spec.d, radius + 1)
                 if sum(abs(a) for a in g) == radius + 1], dtype=np.int64)
            sphere += np.asarray(center, dtype=np.int64)
            boundary = [tuple(int(a) for a in row) for row in sphere]
        self.coords = coords
        self.center = np.asarray(center, dtype=np.int64)
        self.radius = radius
        half = radius + 1
        self.half = half
        shape = (2 * half + 1,) * spec.d
        self.grid = np.full(shape, -1, dtype=np.int32)
        rel = coords - self.center + half
        self.grid[tuple(rel.T)] = np.arange(len(coords), dtype=np.int32)
        elements = [tuple(int(a) for a in row) for row in coords]
        super().__init__(spec, f"ball[{spec.label()},R={radius}]",
                         elements, boundary, support)

    def lookup(self, g) -> Optional[int]:
        rel = np.asarray(g, dtype=np.int64) - self.center + self.half
        if np.any(rel < 0) or np.any(rel >= self.grid.shape[0]):
            return None
        i = int(self.grid[tuple(rel)])
        return None if i < 0 else i

    def coord_positions(self, pts: np.ndarray) -> np.ndarray:
        rel = pts - self.center + self.half
        ok = np.all((rel >= 0) & (rel < self.grid.shape[0]), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        out[ok] = self.grid[tuple(rel[ok].T)]
        return out


def _is_standard_lattice_support(spec: GroupSpec, steps: list) -> bool:
    want = set(groups.standard_generators(spec).elements)
    return set(steps) == want


def ball_domain(spec: GroupSpec, mu: StepMeasure, radius: int, center=None,
                with_boundary: bool = True) -> Domain:
    """Word-metric ball B(center, radius) in the Cayley graph of supp(mu)."""
    support = tuple(sorted(mu.support_elements()))
    e = identity(spec)
    steps = [s for s in support if s != e]
    if center is None:
        center = e
    if spec.variant == "free" and set(steps) == set(groups.standard_generators(spec).elements) \
            and center == e:
        return _FreeBallDomain(spec, radius, with_boundary)
    if spec.variant == "lattice" and _is_standard_lattice_support(spec, steps):
        return _LatticeBallDomain(spec, radius, center, with_boundary, support)
    # generic BFS
    dist = {center: 0}
    frontier = [center]
    d = 0
    while frontier and d < radius:
        nxt = []
        for g in frontier:
            for s in steps:
                h = mul(spec, g, s)
                if h not in dist:
                    dist[h] = d + 1
                    nxt.append(h)
        frontier = nxt
        d += 1
    elements = sorted(dist.keys())
    eset = set(elements)
    boundary = None
    if with_boundary:
        bdry = set()
        for g in frontier:
            for s in steps:
                h = mul(spec, g, s)
                if h not in eset:
                    bdry.add(h)
        boundary = sorted(bdry)
    return Domain(spec, f"ball[{spec.label()},R={radius}]",
                  elements, boundary, support)


def box_domain(spec: GroupSpec, mu: StepMeasure, halfwidth: int) -> Domain:
    """Lattice box [-L, L]^d with its one-step outer boundary."""
    if spec.variant != "lattice":
        raise ValueError("box domains are lattice-only")
    support = tuple(sorted(mu.support_elements()))
    e = identity(spec)
    steps = [s for s in support if s != e]
    axes = [range(-halfwidth, halfwidth + 1)] * spec.d
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.d)
    elements = [tuple(int(a) for a in row) for row in mesh]
    eset = set(elements)
    bdry = set()
    for g in elements:
        if max(abs(a) for a in g) == halfwidth:
            for s in steps:
                h = mul(spec, g, s)
                if h not in eset:
                    bdry.add(h)
    return Domain(spec, f"box[{spec.label()},L={halfwidth}]",
                  sorted(elements), sorted(bdry), support)


# ---------------------------------------------------------------------------
# Killed Green tables
# ---------------------------------------------------------------------------

@dataclass
class GreenTable:
    """Killed-domain Green values G_Omega(a, .) for each source a."""

    omega: Domain
    sources: list
    values: np.ndarray            # shape (n_sources, |Omega|)
    residuals: np.ndarray
    laziness: float
    measure_name: str
    tol: float

    def green(self, a, x) -> float:
        i = self.sources.index(a)
        j = self.omega.lookup(x)
        if j is None:
            raise KeyError(f"{x!r} outside the computation domain")
        return float(self.values[i, j])

    def row(self, a) -> np.ndarray:
        return self.values[self.sources.index(a)]

    def bracket(self, a, x) -> tuple:
        """Solver-error bracket of the killed value (not of the full G)."""
        v = self.green(a, x)
        r = 10.0 * float(self.residuals.max())
        return (max(v - r, 0.0), v + r)

    def max_residual(self) -> float:
        return float(self.residuals.max())


def _operator(omega: Domain, mu: StepMeasure) -> sp.csr_matrix:
    """I - P restricted to Omega (SPD for symmetric substochastic P)."""
    if not mu.finite_range():
        raise ValueError("killed solver requires a finite-support measure")
    spec = omega.spec
    e = identity(spec)
    steps = [(s, mu.pmf(s)) for s in mu.support_elements() if s != e]
    diag = mu.pmf(e)
    n = len(omega)

    if isinstance(omega, _FreeBallDomain):
        codes = omega.codes
        s_bits = omega.shift
        rows, cols, vals = [], [], []
        for letter in range(omega.two_k):
            p = mu.pmf(((letter // 2 + 1) * (-1 if letter & 1 else 1),))
            last = codes & ((1 << s_bits) - 1)
            cancel = (codes != 1) & (last == (letter ^ 1))
            stepped = np.where(cancel, codes >> s_bits, (codes << s_bits) | letter)
            pos = omega.code_positions(stepped)
            ok = pos >= 0
            rows.append(np.nonzero(ok)[0])
            cols.append(pos[ok])
            vals.append(np.full(int(ok.sum()), -p))
        mat = sp.csr_matrix((np.concatenate(vals),
                             (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n))
    elif isinstance(omega, _LatticeBallDomain):
        rows, cols, vals = [], [], []
        for s, p in steps:
            stepped = omega.coords + np.asarray(s, dtype=np.int64)
            pos = omega.coord_positions(stepped)
            ok = pos >= 0
            rows.append(np.nonzero(ok)[0])
            cols.append(pos[ok])
            vals.append(np.full(int(ok.sum()), -p))
        mat = sp.csr_matrix((np.concatenate(vals),
                             (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n))
    else:
        rows, cols, vals = [], [], []
        for g, i in omega.iter_indexed():
            for s, p in steps:
                j = omega.lookup(mul(spec, g, s))
                if j is not None:
                    rows.append(i)
                    cols.append(j)
                    vals.append(-p)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return mat + sp.identity(n, format="csr") * (1.0 - diag)


def killed_green_solve(omega: Domain, sources: list, mu: StepMeasure,
                       tol: float = DEFAULT_TOL, method: str = "auto") -> GreenTable:
    """Solve (I - P_Omega) v = delta_a per source by an SPD method.

    method "auto" uses a direct factorization below DIRECT_SOLVE_MAX
    unknowns (or when many sources are requested and memory allows) and
    conjugate gradients otherwise; residuals are reported per source.
    """
    for a in sources:
        if a not in omega:
            raise ValueError(f"source {a!r} outside the domain")
    mat = _operator(omega, mu)
    n = len(omega)
    if method == "auto":
        if n <= DIRECT_SOLVE_MAX or (len(sources) > 8 and n <= 120000):
            method = "direct"
        else:
            method = "cg"
    vals = np.zeros((len(sources), n))
    residuals = np.zeros(len(sources))
    lu = spla.splu(mat.tocsc()) if method == "direct" else None
    for i, a in enumerate(sources):
        rhs = np.zeros(n)
        rhs[omega.lookup(a)] = 1.0
        if method == "direct":
            v = lu.solve(rhs)
        else:
            v, info = spla.cg(mat, rhs, rtol=0.0, atol=tol, maxiter=20 * n)
            if info != 0:
                raise SolverError(f"CG failed for source {a!r} (info={info})")
        res = float(np.max(np.abs(mat @ v - rhs)))
        if res > 100 * max(tol, 1e-14):
            raise SolverError(f"residual {res:g} above tolerance for source {a!r}")
        vals[i] = v
        residuals[i] = res
    return GreenTable(omega, list(sources), vals, residuals,
                      mu.laziness, mu.name, tol)


@dataclass
class GreenBracket:
    lower: float
    upper: float
    estimate: float
    extrapolated: bool
    geometric_ratio: float


def green_bracket(spec: GroupSpec, mu: StepMeasure, a, x,
                  r1: int, r2: int, tol: float = DEFAULT_TOL) -> GreenBracket:
    """Bracket the full Green value G(a, x) from nested killed solves.

    Killed values increase with the domain; increments across three nested
    radii (r1, mid, r2) are inflated geometrically to cover the tail.  A
    non-geometric increment pattern (ratio >= 1) yields a conservative
    (lower, +inf) bracket.
    """
    check_transient(spec)
    if not (r1 < r2 - 1):
        raise ValueError("need r1 < r2 - 1 for a middle radius")
    rm = (r1 + r2) // 2
    vals = []
    for r in (r1, rm, r2):
        omega = ball_domain(spec, mu, r, with_boundary=False)
        if a not in omega or x not in omega:
            raise ValueError("a, x must lie inside the smallest ball")
        table = killed_green_solve(omega, [a], mu, tol)
        vals.append(table.green(a, x))
    return _bracket_from_triplet(vals, r1, r2)


def _bracket_from_triplet(vals, r1: int, r2: int) -> GreenBracket:
    v1, vm, v2 = vals
    i1, i2 = vm - v1, v2 - vm
    ratio = (i2 / i1) if i1 > 0 else 0.0
    if ratio >= 1.0:
        return GreenBracket(v1, np.inf, v2, False, ratio)
    upper = v1 + (v2 - v1) / (1.0 - ratio)
    # point estimate: Richardson for a c/R truncation error (harmonic decay);
    # for geometric decay the increments are tiny and this collapses to ~v2
    estimate = (r2 * v2 - r1 * v1) / (r2 - r1)
    estimate = min(max(estimate, v2), upper) if np.isfinite(upper) else max(estimate, v2)
    return GreenBracket(v1, upper, estimate, True, ratio)


# ---------------------------------------------------------------------------
# Exit distributions
# ---------------------------------------------------------------------------

@dataclass
class ExitDistribution:
    domain: Domain
    start: object
    probs: dict                   # boundary element -> probability
    method: str

    def total(self) -> float:
        return sum(self.probs.values())

    def vector(self) -> np.ndarray:
        return np.array([self.probs.get(z, 0.0) for z in self.domain.boundary])


def exit_distribution(domain: Domain, a, mu: StepMeasure,
                      method: str = "solve", trials: int = 0,
                      rng: Optional[np.random.Generator] = None,
                      tol: float = DEFAULT_TOL) -> ExitDistribution:
    """Law of the first position outside S started from a in S.

    "solve": mu_S(a, z) = sum_{y in S} G_S(a, y) mu(y^{-1} z) from the
    absorbing-chain linear system on S.  "mc": empirical exit counts.
    """
    if a not in domain:
        raise ValueError("start point must lie in S")
    spec = domain.spec
    e = identity(spec)
    if method == "solve":
        table = killed_green_solve(domain, [a], mu, tol)
        gvals = table.row(a)
        steps = [(s, mu.pmf(s)) for s in mu.support_elements() if s != e]
        probs = {}
        for g, i in zip(domain.elements, range(len(domain))):
            gv = gvals[i]
            if gv == 0.0:
                continue
            for s, p in steps:
                h = mul(spec, g, s)
                if domain.lookup(h) is None:
                    probs[h] = probs.get(h, 0.0) + gv * p
        return ExitDistribution(domain, a, probs, "solve")
    if method != "mc":
        raise ValueError("method must be 'solve' or 'mc'")
    if rng is None or trials <= 0:
        raise ValueError("Monte Carlo mode needs rng and trials")
    counts = {}
    sup = [s for s in mu.support_elements()]
    w = np.array([mu.pmf(s) for s in sup])
    w = w / w.sum()
    for _ in range(trials):
        g = a
        while g in domain:
            g = mul(spec, g, sup[int(rng.choice(len(sup), p=w))])
        counts[g] = counts.get(g, 0) + 1
    return ExitDistribution(domain, a,
                            {z: c / trials for z, c in counts.items()}, "mc")


def verify_exit_decomposition(domain: Domain, a, x, mu: StepMeasure,
                              table: GreenTable) -> float:
    """|G(a,x) - sum_z mu_S(a,z) G(z,x)| on the table's computation domain.

    The identity holds exactly for killed Green values once S and its
    boundary lie inside the computation domain, so the residual is
    solver-level.
    """
    if x in domain:
        raise ValueError("x must lie outside S")
    exits = exit_distribution(domain, a, mu, "solve", tol=table.tol)
    prov = TableGreenProvider(table)
    lhs = prov.value(a, x)
    rhs = sum(p * prov.value(z, x) for z, p in exits.probs.items())
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Boundary Green matrix
# ---------------------------------------------------------------------------

@dataclass
class BoundaryGreenMatrix:
    domain: Domain
    matrix: np.ndarray
    spd_ok: bool
    min_eigenvalue: float
    symmetry_defect: float


def boundary_green_matrix(domain: Domain, table: GreenTable) -> BoundaryGreenMatrix:
    """M_S[x, z] = G(z, x) over the outer boundary, with an SPD certificate.

    The certificate is a successful Cholesky factorization plus the smallest
    eigenvalue.  Failure is flagged as a numerical-error signal (the matrix
    is provably SPD for symmetric transient kernels, being a principal
    submatrix of the inverse of the SPD operator I - P).
    """
    bdry = domain.boundary
    m = len(bdry)
    mat = np.empty((m, m))
    for j, z in enumerate(bdry):
        row = table.row(z)
        for i, x in enumerate(bdry):
            mat[i, j] = row[table.omega.lookup(x)]
    sym_defect = float(np.max(np.abs(mat - mat.T)))
    mat_sym = 0.5 * (mat + mat.T)
    try:
        np.linalg.cholesky(mat_sym)
        chol_ok = True
    except np.linalg.LinAlgError:
        chol_ok = False
    min_eig = float(np.linalg.eigvalsh(mat_sym)[0])
    return BoundaryGreenMatrix(domain, mat, chol_ok and min_eig > 0,
                               min_eig, sym_defect)


def spd_certificate_1x1(value: float) -> BoundaryGreenMatrix:
    """Degenerate |boundary| = 1 case: M = [G(z,z)] must be positive."""
    mat = np.array([[value]])
    return BoundaryGreenMatrix(None, mat, value > 0, value, 0.0)


def vector_identity_residual(domain: Domain, a, mu: StepMeasure,
                             table: GreenTable,
                             bgm: Optional[BoundaryGreenMatrix] = None) -> float:
    """max-norm of M_S mu_S(a) - g_S(a) (the vector exit identity)."""
    if bgm is None:
        bgm = boundary_green_matrix(domain, table)
    exits = exit_distribution(domain, a, mu, "solve", tol=table.tol)
    mu_vec = exits.vector()
    g_vec = np.array([table.green(a, x) for x in domain.boundary])
    return float(np.max(np.abs(bgm.matrix @ mu_vec - g_vec)))


# ---------------------------------------------------------------------------
# Monte Carlo hitting estimators
# ---------------------------------------------------------------------------

def default_path_cap(spec: GroupSpec, radius: int) -> int:
    """50 R^2 steps on diffusive backends, 20 R on trees."""
    r = max(radius, 3)
    if spec.variant == "free":
        return max(100, 20 * r)
    return 50 * r * r


@dataclass
class McGreenEstimate:
    value: float
    hit_fraction: float
    ci95: float
    bias_bound: float
    trials: int
    path_cap: int
    bias_flag: bool


def _tree_distance_hits(rank: int, start_dist: int, cap: int, walkers: int,
                        rng: np.random.Generator) -> tuple:
    """(hit mask, final distances of unhit walkers) for the distance-to-target
    chain of tree SRW: from r >= 1 exactly one neighbor is closer, so the
    distance is a birth-death chain (down w.p. 1/2k); exact in law by
    vertex-isotropy of the tree."""
    two_k = 2 * rank
    d = np.full(walkers, start_dist, dtype=np.int64)
    hit = d == 0
    for _ in range(cap):
        active = ~hit
        if not active.any():
            break
        u = rng.random(walkers)
        down = u < 1.0 / two_k
        d = np.where(active, np.where(down, d - 1, d + 1), d)
        hit = hit | (d == 0)
    return hit, d[~hit]


def _tree_visit_counts(rank: int, cap: int, walkers: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Visit counts of the root within the cap, via the distance chain."""
    two_k = 2 * rank
    d = np.zeros(walkers, dtype=np.int64)
    visits = np.ones(walkers, dtype=np.int64)
    for _ in range(cap):
        u = rng.random(walkers)
        at0 = d == 0
        down = (~at0) & (u < 1.0 / two_k)
        d = np.where(at0, 1, np.where(down, d - 1, d + 1))
        visits += (d == 0)
    return visits


def _lattice_step_table(spec: GroupSpec, mu: StepMeasure):
    sup = [s for s in mu.support_elements()]
    w = np.array([mu.pmf(s) for s in sup])
    return np.array(sup, dtype=np.int64), w / w.sum()


def mc_green_diagonal(spec: GroupSpec, mu: StepMeasure, trials: int,
                      path_cap: int, rng: np.random.Generator) -> tuple:
    """(estimate, ci95) for G(e,e) = mean visits to e from e within the cap."""
    if spec.variant == "free":
        visits = _tree_visit_counts(spec.rank, path_cap, trials, rng)
    elif spec.variant == "lattice":
        check_transient(spec)
        steps, w = _lattice_step_table(spec, mu)
        pos = np.zeros((trials, spec.d), dtype=np.int64)
        visits = np.ones(trials, dtype=np.int64)
        for _ in range(path_cap):
            pos += steps[rng.choice(len(steps), size=trials, p=w)]
            visits += (pos == 0).all(axis=1)
    else:
        raise ValueError("diagonal MC implemented for trees and lattices")
    est = float(visits.mean())
    ci = 1.96 * float(visits.std(ddof=1)) / np.sqrt(trials)
    return est, ci


def mc_hitting_green(spec: GroupSpec, mu: StepMeasure, a, x, trials: int,
                     rng: np.random.Generator, path_cap: Optional[int] = None,
                     gee: Optional[float] = None) -> McGreenEstimate:
    """Estimate G(a, x) = F(a, x) G(e, e) from empirical hitting frequencies.

    Valid on vertex-transitive backends (all supported ones).  The
    confidence band is a binomial 95% interval; the additive truncation
    bias term bounds the conditional hitting probability of the capped,
    unhit walkers through their final distance profile.
    """
    dist0 = _word_distance(spec, a, x)
    if path_cap is None:
        path_cap = default_path_cap(spec, dist0)
    if gee is None:
        gee, _ = mc_green_diagonal(spec, mu, trials, min(path_cap, 2000), rng)
    if dist0 == 0:
        return McGreenEstimate(gee, 1.0, 0.0, 0.0, trials, path_cap, False)
    if spec.variant == "free":
        hit, dfin = _tree_distance_hits(spec.rank, dist0, path_cap, trials, rng)
        q = 2 * spec.rank - 1
        # conditional hitting probability from distance d is exactly q^{-d}
        bias = float(np.sum(np.power(float(q), -dfin.astype(np.float64)))) / trials
    elif spec.variant == "lattice":
        check_transient(spec)
        steps, w = _lattice_step_table(spec, mu)
        pos = np.tile(np.asarray(a, dtype=np.int64), (trials, 1))
        target = np.asarray(x, dtype=np.int64)
        hit = (pos == target).all(axis=1)
        for _ in range(path_cap):
            if hit.all():
                break
            pos += steps[rng.choice(len(steps), size=trials, p=w)]
            hit = hit | (pos == target).all(axis=1)
        # for Z^3 SRW: F(y, x) <= 0.63 / |y - x|_1 from the c_3/|.| bound
        d1 = np.abs(pos[~hit] - target).sum(axis=1)
        bias = float(np.sum(np.minimum(1.0, 0.63 / np.maximum(d1, 1)))) / trials
    else:
        raise ValueError("MC hitting implemented for trees and lattices")
    f_hat = float(hit.mean())
    ci = 1.96 * np.sqrt(max(f_hat * (1 - f_hat), 1.0 / trials) / trials)
    return McGreenEstimate(f_hat * gee, f_hat, ci * gee, bias * gee,
                           trials, path_cap, bias > max(3 * ci, 1e-3))


def _word_distance(spec: GroupSpec, a, x) -> int:
    d = mul(spec, inv(spec, a), x)
    if spec.variant == "heisenberg":
        table = groups.bfs_oracle(spec, groups.standard_generators(spec), 14)
        return table.length(d)
    return groups.exact_word_length(spec, d)


# ---------------------------------------------------------------------------
# Green providers (uniform interface consumed by the functionals layer)
# ---------------------------------------------------------------------------

@dataclass
class TreeGreenOracle:
    """Exact Green values for SRW on the free group F_k (2k-regular tree):
    F(e,x) = q^{-|x|}, G(e,e) = q/(q-1), G(x,y) = (q/(q-1)) q^{-d(x,y)},
    with q = 2k - 1."""

    spec: GroupSpec

    def __post_init__(self):
        if self.spec.variant != "free":
            raise ValueError("tree oracle needs a free-group backend")
        self.q = 2 * self.spec.rank - 1

    def gee(self) -> float:
        return self.q / (self.q - 1.0)

    def distance(self, a, x) -> int:
        return len(mul(self.spec, inv(self.spec, a), x))

    def green(self, a, x) -> float:
        return self.gee() * self.q ** (-self.distance(a, x))

    def value(self, a, x) -> float:
        return self.green(a, x)

    def bracket(self, a, x) -> tuple:
        v = self.green(a, x)
        return (v, v)

    def hitting(self, a, x) -> float:
        return float(self.q) ** (-self.distance(a, x))


@dataclass
class TableGreenProvider:
    """Provider backed by a killed table; brackets carry solver error only
    (values are killed-domain values, flagged by the domain label).  Either
    argument may be the tabulated source: symmetric kernels give
    G(a, x) = G(x, a)."""

    table: GreenTable

    def _resolve(self, a, x):
        if a in self.table.sources and self.table.omega.lookup(x) is not None:
            return a, x
        if x in self.table.sources and self.table.omega.lookup(a) is not None:
            return x, a
        raise KeyError(f"neither {a!r} nor {x!r} is a tabulated source")

    def value(self, a, x) -> float:
        a, x = self._resolve(a, x)
        return self.table.green(a, x)

    def bracket(self, a, x) -> tuple:
        a, x = self._resolve(a, x)
        return self.table.bracket(a, x)


class NestedBracketProvider:
    """Full-Green brackets from three nested killed solves per source.

    value() is the Richardson point estimate; bracket() is
    [G_{B(r1)}, geometric-inflation upper].  Rows are solved lazily per
    source and shared across queries.
    """

    def __init__(self, spec: GroupSpec, mu: StepMeasure, r1: int, r2: int,
                 tol: float = DEFAULT_TOL):
        check_transient(spec)
        if not (r1 < r2 - 1):
            raise ValueError("need r1 < r2 - 1")
        self.spec, self.mu, self.tol = spec, mu, tol
        self.radii = (r1, (r1 + r2) // 2, r2)
        self.domains = [ball_domain(spec, mu, r, with_boundary=False)
                        for r in self.radii]
        self._tables = {}

    def _rows(self, a):
        if a not in self._tables:
            self._tables[a] = [killed_green_solve(om, [a], self.mu, self.tol)
                               for om in self.domains]
        return self._tables[a]

    def _triplet(self, a, x):
        tables = self._rows(a)
        return [t.green(a, x) for t in tables]

    def bracket_full(self, a, x) -> GreenBracket:
        return _bracket_from_triplet(self._triplet(a, x),
                                     self.radii[0], self.radii[2])

    def value(self, a, x) -> float:
        return self.bracket_full(a, x).estimate

    def bracket(self, a, x) -> tuple:
        b = self.bracket_full(a, x)
        return (b.lower, b.upper)


# ---------------------------------------------------------------------------
# Quarter-plane killed walk (Z^2 SRW killed on the axes and outside a box)
# ---------------------------------------------------------------------------

@dataclass
class QuadrantGreenTable:
    box: int
    sources: list
    values: np.ndarray            # (n_sources, box, box); [i, x1-1, x2-1]
    residuals: np.ndarray

    def green(self, src, y) -> float:
        i = self.sources.index(tuple(src))
        return float(self.values[i, y[0] - 1, y[1] - 1])


def quadrant_killed_green(box: int, sources: list,
                          tol: float = DEFAULT_TOL) -> QuadrantGreenTable:
    """Killed Green table of SRW on Z^2 with Dirichlet kill on the
    coordinate axes and outside the box [1, L]^2."""
    L = box
    n = L * L

    def idx(x1, x2):
        return (x1 - 1) * L + (x2 - 1)

    rows, cols, vals = [], [], []
    for x1 in range(1, L + 1):
        for x2 in range(1, L + 1):
            i = idx(x1, x2)
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                y1, y2 = x1 + dx, x2 + dy
                if 1 <= y1 <= L and 1 <= y2 <= L:
                    rows.append(i)
                    cols.append(idx(y1, y2))
                    vals.append(-0.25)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)) + sp.identity(n, format="csr")
    lu = spla.splu(mat.tocsc())
    out = np.zeros((len(sources), L, L))
    res = np.zeros(len(sources))
    for i, srcp in enumerate(sources):
        rhs = np.zeros(n)
        rhs[idx(*srcp)] = 1.0
        v = lu.solve(rhs)
        res[i] = float(np.max(np.abs(mat @ v - rhs)))
        out[i] = v.reshape(L, L)
    return QuadrantGreenTable(L, [tuple(s) for s in sources], out, res)


def quadrant_harmonicity_defect(box: int) -> float:
    """Exact harmonicity defect of h(x1,x2) = x1 x2 under the killed kernel,
    maximised over interior points (both coordinates <= box - 1; h vanishes
    on the killing axes, so near-axis points are included)."""
    L = box
    worst = 0.0
    for x1 in range(1, L):
        for x2 in range(1, L):
            acc = 0.0
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                y1, y2 = x1 + dx, x2 + dy
                if y1 >= 1 and y2 >= 1:   # killed sites carry h = 0
                    acc += 0.25 * y1 * y2
            worst = max(worst, abs(acc - x1 * x2))
    return worst
