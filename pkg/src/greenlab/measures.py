"""Step laws: construction, sampling, and exact convolution.

Three families are provided: finite-support measures (simple random walk
and its lazifications), heavy-tailed shell measures whose per-radius mass
is p_r = const / (r^2 log r) carried by axis powers, and power-tail
measures on Z with pmf proportional to |k|^{-(1+alpha)}.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import special

from . import groups
from .groups import GroupSpec, GeneratorSet, identity, mul

MASS_TOL = 1e-12

# Fraction of shell-measure mass pinned uniformly on the unit generators;
# certifies non-degeneracy without disturbing the r >= r0 shell bounds.
UNIT_MASS = 0.1


# ---------------------------------------------------------------------------
# Integer pmfs with truncation bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class PmfOnZ:
    """Pmf on Z as a dense array over [lo, lo+len)，with tracked clipped mass."""

    vals: np.ndarray
    lo: int
    delta_trunc: float = 0.0

    def __post_init__(self):
        self.vals = np.asarray(self.vals, dtype=np.float64)
        if np.any(self.vals < -1e-15):
            raise ValueError("pmf values must be nonnegative")
        total = float(self.vals.sum()) + self.delta_trunc
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mass + delta_trunc = {total} is not 1")

    @property
    def hi(self) -> int:
        return self.lo + len(self.vals) - 1

    def at(self, k: int) -> float:
        if self.lo <= k <= self.hi:
            return float(self.vals[k - self.lo])
        return 0.0

    def mass(self) -> float:
        return float(self.vals.sum())

    def support(self) -> np.ndarray:
        return np.nonzero(self.vals)[0] + self.lo

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        ks = np.arange(self.lo, self.hi + 1)
        lo2, hi2 = min(self.lo, -self.hi), max(self.hi, -self.lo)
        full = np.zeros(hi2 - lo2 + 1)
        full[ks - lo2] = self.vals
        return bool(np.max(np.abs(full - full[::-1])) <= tol)


def pmf_from_dict(d: dict, delta_trunc: float = 0.0) -> PmfOnZ:
    lo, hi = min(d), max(d)
    vals = np.zeros(hi - lo + 1)
    for k, p in d.items():
        vals[k - lo] = p
    return PmfOnZ(vals, lo, delta_trunc)


def delta_pmf(k: int = 0) -> PmfOnZ:
    return PmfOnZ(np.array([1.0]), k)


def convolve_z(p: PmfOnZ, q: PmfOnZ, cap: int) -> PmfOnZ:
    """Exact convolution of two integer pmfs restricted to |k| <= cap.

    All clipped mass (and any mass already missing from the inputs) is
    accumulated into delta_trunc of the result.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    n = len(p.vals) + len(q.vals) - 1
    if n > 4096:
        from scipy.signal import fftconvolve

        raw = fftconvolve(p.vals, q.vals)
        raw = np.maximum(raw, 0.0)
    else:
        raw = np.convolve(p.vals, q.vals)
    lo = p.lo + q.lo
    lo_keep = max(lo, -cap)
    hi_keep = min(lo + len(raw) - 1, cap)
    if hi_keep < lo_keep:
        raise ValueError("cap window misses the whole convolution support")
    kept = raw[lo_keep - lo: hi_keep - lo + 1]
    delta = 1.0 - float(kept.sum())
    return PmfOnZ(kept, lo_keep, max(delta, 0.0))


def self_convolution_powers(p: PmfOnZ, exponents: list, cap: int) -> dict:
    """p^(n) for n in a set of powers of two, by repeated squaring."""
    want = sorted(set(exponents))
    for n in want:
        if n & (n - 1):
            raise ValueError("exponents must be powers of two")
    out = {}
    cur, n = p, 1
    if n in want:
        out[n] = cur
    while n < want[-1]:
        cur = convolve_z(cur, cur, cap)
        n *= 2
        if n in want:
            out[n] = cur
    return out


def total_variation_shift(p: PmfOnZ, k: int) -> float:
    """TV distance between p and its shift by k, on the represented window."""
    if k == 0:
        return 0.0
    a = p.vals
    pad = np.zeros(abs(k))
    if k > 0:
        left = np.concatenate([a, pad])
        right = np.concatenate([pad, a])
    else:
        left = np.concatenate([pad, a])
        right = np.concatenate([a, pad])
    return 0.5 * float(np.abs(left - right).sum())


# ---------------------------------------------------------------------------
# Step measures on group backends
# ---------------------------------------------------------------------------

@dataclass
class StepMeasure:
    """Step law on a group backend.

    kind = "finite": explicit support dict {element: prob}.
    kind = "shell":  radial law p_r ~ 1/(r^2 log r) on axis powers, plus a
                     fixed unit-generator mass; exact pmf available for any
                     element, explicit support listed up to r_cap.
    kind = "stable_z": pmf C_alpha |k|^{-(1+alpha)} on the Z backend.
    """

    spec: GroupSpec
    kind: str
    name: str
    symmetric: bool = True
    laziness: float = 0.0
    probs: Optional[dict] = None          # finite kind
    r0: int = 0                           # shell kind
    r_cap: int = 0
    shell_norm: float = 0.0               # 1/Z for the radius law
    axes: tuple = ()                      # shell direction set (axis, sign) roots
    alpha: float = 0.0                    # stable kind
    c_alpha: float = 0.0
    _radius_cdf: Optional[np.ndarray] = field(default=None, repr=False)
    _stable_cdf: Optional[np.ndarray] = field(default=None, repr=False)

    # -- generic interface ---------------------------------------------------

    def pmf(self, g) -> float:
        e = identity(self.spec)
        lazy = self.laziness
        base = self._base_pmf(g)
        if g == e:
            return lazy + (1.0 - lazy) * base
        return (1.0 - lazy) * base

    def _base_pmf(self, g) -> float:
        if self.kind == "finite":
            return self.probs.get(g, 0.0)
        if self.kind == "stable_z":
            (k,) = g
            if k == 0:
                return 0.0
            return self.c_alpha * abs(k) ** -(1.0 + self.alpha)
        # shell
        e = identity(self.spec)
        if g == e:
            return 0.0
        unit = UNIT_MASS / len(self._unit_generators())
        if g in self._unit_generators():
            return unit
        r, ok = self._axis_radius(g)
        if ok and r >= self.r0:
            return (1.0 - UNIT_MASS) * self.shell_norm / (r * r * np.log(r)) / (2 * len(self.axes))
        return 0.0

    def support_elements(self) -> list:
        """Explicit support (shell kind truncated at r_cap; stable at r_cap)."""
        if self.kind == "finite":
            sup = [g for g, p in self.probs.items() if p > 0]
            if self.laziness > 0:
                e = identity(self.spec)
                if e not in sup:
                    sup.append(e)
            return sorted(sup)
        raise ValueError("infinite-support measure has no finite support list")

    def finite_range(self) -> bool:
        return self.kind == "finite"

    def shell_radius_mass(self, r: int) -> float:
        """Total mass p_r at word radius r (shell kind)."""
        if self.kind != "shell":
            raise ValueError("radius law defined only for shell measures")
        if r < self.r0:
            return 0.0
        return (1.0 - self.laziness) * (1.0 - UNIT_MASS) * self.shell_norm / (r * r * np.log(r))

    def shell_constants(self) -> tuple:
        """(c1, c2) with c1/(r^2 log r) <= p_r <= c2/(r^2 log r) for r >= r0."""
        c = (1.0 - self.laziness) * (1.0 - UNIT_MASS) * self.shell_norm
        return (c, c)

    # -- shell helpers -------------------------------------------------------

    def _unit_generators(self):
        return standard_support(self.spec)

    def _axis_radius(self, g):
        """If g is an axis power t^{+-r}, return (r, True)."""
        if self.spec.variant == "lattice":
            nz = [(i, a) for i, a in enumerate(g) if a != 0]
            if len(nz) == 1:
                return abs(nz[0][1]), True
            return 0, False
        if self.spec.variant == "heisenberg":
            a, b, c = g
            if c == 0 and (a == 0) != (b == 0):
                return abs(a) + abs(b), True
            return 0, False
        raise ValueError("shell measures need lattice or Heisenberg axes")

    # -- sampling ------------------------------------------------------------

    def sample(self, rng: np.random.Generator, size: int = 1) -> list:
        """Draw elements; tail radii by inverse CDF, direction uniform."""
        out = []
        lazy_mask = rng.random(size) < self.laziness if self.laziness > 0 else np.zeros(size, bool)
        e = identity(self.spec)
        if self.kind == "finite":
            sup = sorted(self.probs)
            w = np.array([self.probs[g] for g in sup])
            w = w / w.sum()
            idx = rng.choice(len(sup), size=size, p=w)
            for i in range(size):
                out.append(e if lazy_mask[i] else sup[idx[i]])
            return out
        if self.kind == "stable_z":
            ks = self.sample_stable_ints(rng, size)
            return [e if lazy_mask[i] else (int(ks[i]),) for i in range(size)]
        # shell: unit generator w.p. UNIT_MASS, else radial law on axis powers
        radii = self.sample_shell_radii(rng, size)
        units = self._unit_generators()
        unit_pick = rng.integers(0, len(units), size=size)
        axis_pick = rng.integers(0, len(self.axes), size=size)
        sign_pick = rng.integers(0, 2, size=size) * 2 - 1
        for i in range(size):
            if lazy_mask[i]:
                out.append(e)
            elif radii[i] == 1:
                out.append(units[unit_pick[i]])
            else:
                out.append(axis_power(self.spec, self.axes[axis_pick[i]],
                                      int(sign_pick[i]) * int(radii[i])))
        return out

    def sample_shell_radii(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Radius draws: 1 marks a unit-generator step."""
        if self._radius_cdf is None:
            rr = np.arange(self.r0, max(self.r_cap, 2 * 10 ** 6) + 1, dtype=np.float64)
            w = 1.0 / (rr * rr * np.log(rr))
            self._radius_cdf = np.cumsum(w) / w.sum()
        u = rng.random(size)
        unit = u < UNIT_MASS
        idx = np.searchsorted(self._radius_cdf, rng.random(size))
        idx = np.clip(idx, 0, len(self._radius_cdf) - 1)
        return np.where(unit, 1, idx + self.r0)

    def sample_stable_ints(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self._stable_cdf is None:
            kk = np.arange(1, 10 ** 7, dtype=np.float64)
            w = kk ** -(1.0 + self.alpha)
            self._stable_cdf = np.cumsum(w) / w.sum()
        idx = np.searchsorted(self._stable_cdf, rng.random(size))
        mag = np.clip(idx, 0, len(self._stable_cdf) - 1) + 1
        sign = rng.integers(0, 2, size=size) * 2 - 1
        return sign * mag

    def to_pmf_on_z(self, cap: int) -> PmfOnZ:
        """Exact truncated pmf for Z-backed measures."""
        if self.spec.variant != "lattice" or self.spec.d != 1:
            raise ValueError("pmf-on-Z view requires the Z backend")
        ks = np.arange(-cap, cap + 1)
        if self.kind == "stable_z":
            mag = np.abs(ks).astype(np.float64)
            with np.errstate(divide="ignore"):
                vals = self.c_alpha * mag ** -(1.0 + self.alpha)
            vals[cap] = 0.0
            vals *= (1.0 - self.laziness)
            vals[cap] += self.laziness
        else:
            vals = np.array([self.pmf((int(k),)) for k in ks])
        return PmfOnZ(vals, -cap, max(0.0, 1.0 - float(vals.sum())))


def standard_support(spec: GroupSpec) -> tuple:
    return tuple(groups.standard_generators(spec).elements)


def axis_power(spec: GroupSpec, axis: int, k: int):
    """k-th power of the designated axis generator (word length |k| exactly)."""
    if spec.variant == "lattice":
        v = [0] * spec.d
        v[axis] = k
        return tuple(v)
    if spec.variant == "heisenberg":
        return (k, 0, 0) if axis == 0 else (0, k, 0)
    raise ValueError("axis powers defined for lattice and Heisenberg backends")


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def uniform_on_generators(gens: GeneratorSet) -> StepMeasure:
    if len(gens) == 0:
        raise ValueError("empty generator set")
    p = 1.0 / len(gens)
    probs = {g: p for g in gens}
    return StepMeasure(gens.spec, "finite", f"srw[{gens.spec.label()}]", probs=probs)


def lazy_transform(mu: StepMeasure, eps: float) -> StepMeasure:
    """The law eps*delta_e + (1-eps)*mu."""
    if not (0.0 <= eps < 1.0):
        raise ValueError("laziness must lie in [0, 1)")
    if eps == 0.0:
        return mu
    # compose lazinesses: eps' = eps + (1-eps)*lazy_old
    new_lazy = eps + (1.0 - eps) * mu.laziness
    return replace(mu, laziness=new_lazy, name=f"lazy({mu.name},{eps:g})")


def shell_norm_constant(r0: int) -> float:
    """1/Z with Z = sum_{r>=r0} 1/(r^2 log r), summed directly to 1e7 with an
    integral tail bound (tail < 1e-8 there)."""
    total = 0.0
    hi = 10 ** 7
    for lo in range(r0, hi, 10 ** 6):
        r = np.arange(lo, min(lo + 10 ** 6, hi), dtype=np.float64)
        total += float(np.sum(1.0 / (r * r * np.log(r))))
    total += 1.0 / (hi * np.log(hi))  # integral bound for the remainder
    return 1.0 / total


def shell_measure(spec: GroupSpec, r0: int = 3, r_cap: int = 10 ** 6) -> StepMeasure:
    """Symmetric heavy-tailed law with two-sided shell bounds
    c1/(r^2 log r) <= p_r <= c2/(r^2 log r) for all r >= r0.

    Mass at radius r sits on the powers {x^{+-r}, y^{+-r}} of designated
    axis generators (each has word length exactly r); a further 10% of the
    mass is uniform on the unit generators, certifying non-degeneracy.
    """
    if r0 < 3:
        raise ValueError("r0 must be at least 3")
    if spec.variant == "lattice":
        axes = tuple(range(spec.d))
    elif spec.variant == "heisenberg":
        axes = (0, 1)
    else:
        raise ValueError("shell measures need lattice or Heisenberg backends")
    mu = StepMeasure(spec, "shell", f"shell[{spec.label()},r0={r0}]",
                     r0=r0, r_cap=r_cap, shell_norm=shell_norm_constant(r0),
                     axes=axes)
    certify_generates(mu)
    return mu


def stable_z_measure(alpha: float) -> StepMeasure:
    """Symmetric power-tail law on Z: mu(k) = C_alpha |k|^{-(1+alpha)} (k != 0),
    normalised by 2 C_alpha zeta(1+alpha) = 1.  Support contains {+-1, +-2},
    so the gcd of support differences is 1 (aperiodicity)."""
    if not (0.0 < alpha < 2.0):
        raise ValueError("alpha must lie in (0, 2)")
    c = 1.0 / (2.0 * special.zeta(1.0 + alpha))
    return StepMeasure(groups.integer_lattice(1), "stable_z",
                       f"stable[alpha={alpha:g}]", alpha=alpha, c_alpha=c)


def certify_generates(mu: StepMeasure) -> None:
    """Check supp(mu) reaches all of B(e,2) by bounded closure (non-degeneracy)."""
    spec = mu.spec
    gens = groups.standard_generators(spec)
    target = set(groups.ball(spec, gens, 2))
    if mu.kind == "finite":
        steps = mu.support_elements()
    else:
        steps = list(standard_support(spec))
        if mu.kind == "shell":
            steps += [axis_power(spec, a, s * mu.r0)
                      for a in mu.axes for s in (1, -1)]
    oracle = groups.bfs_oracle(spec, gens, 6) if spec.variant == "heisenberg" \
        else groups.exact_oracle(spec)
    visited = {identity(spec)}
    frontier = [identity(spec)]
    while frontier:
        nxt = []
        for g in frontier:
            for s in steps:
                h = mul(spec, g, s)
                try:
                    far = oracle.length(h) > 6
                except groups.OutOfRangeError:
                    far = True
                if far or h in visited:
                    continue
                visited.add(h)
                nxt.append(h)
        frontier = nxt
    if not target <= visited:
        raise ValueError("support does not generate B(e,2); measure degenerate")


def sample(mu: StepMeasure, rng: np.random.Generator, size: int = 1):
    """Module-level draw helper (see StepMeasure.sample)."""
    return mu.sample(rng, size)


def first_moment_partial(mu: StepMeasure, radius: int) -> float:
    """sum_{|g| <= R} |g| mu(g) via the radius decomposition."""
    lazy = mu.laziness
    if mu.kind == "finite":
        spec = mu.spec
        if spec.variant == "heisenberg":
            oracle = groups.bfs_oracle(spec, groups.standard_generators(spec), 8)
        else:
            oracle = groups.exact_oracle(spec)
        return (1.0 - lazy) * sum(
            p * oracle.length(g) for g, p in mu.probs.items() if oracle.length(g) <= radius
        )
    if mu.kind == "stable_z":
        # 2 C sum_{k<=R} k^{-alpha}
        if abs(mu.alpha - 1.0) < 1e-12:
            h = float(special.digamma(radius + 1)) + np.euler_gamma
        else:
            h = 0.0
            for lo in range(1, radius + 1, 10 ** 6):
                k = np.arange(lo, min(lo + 10 ** 6, radius + 1), dtype=np.float64)
                h += float(np.sum(k ** -mu.alpha))
        return (1.0 - lazy) * 2.0 * mu.c_alpha * h
    # shell: unit part + sum_{r0<=r<=R} r p_r
    total = UNIT_MASS * 1.0
    acc = 0.0
    for lo in range(mu.r0, radius + 1, 10 ** 6):
        r = np.arange(lo, min(lo + 10 ** 6, radius + 1), dtype=np.float64)
        acc += float(np.sum(1.0 / (r * np.log(r))))
    total += (1.0 - UNIT_MASS) * mu.shell_norm * acc
    return (1.0 - lazy) * total
