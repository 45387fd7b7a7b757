"""Trajectory simulation and asymptotics experiments: speed in probability,
increment-ratio diagnostics, Green-speed estimates, total-variation
dispersion along the centre, Mal'cev coordinates, and the quarter-plane
Martin-ratio experiment.

All Monte Carlo runs are vectorised over trials and draw from generators
derived deterministically from a master seed (see rng.derive_stream).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import math

import numpy as np

from . import green as green_mod
from . import groups
from .green import TreeGreenOracle, ball_domain, killed_green_solve, mc_hitting_green
from .groups import GroupSpec, identity, mul
from .measures import (PmfOnZ, StepMeasure, UNIT_MASS,
                       self_convolution_powers, total_variation_shift)


# ---------------------------------------------------------------------------
# Single-trajectory simulation
# ---------------------------------------------------------------------------

@dataclass
class WalkSummary:
    checkpoints: list
    lengths: list
    metric_mode: str               # exact | quasi_norm
    malcev: Optional[list] = None  # MalcevCoords at checkpoints (Heisenberg)
    seed_info: str = ""


@dataclass
class MalcevCoords:
    x1: tuple                      # weight-1 block (a, b)
    x2: int                        # weight-2 central block
    norm: int                      # homogeneous quasi-norm

    def __iter__(self):
        return iter((self.x1, self.x2, self.norm))


def malcev_coords(g) -> MalcevCoords:
    """Weighted coordinates of a Heisenberg element with homogeneous norm
    N = |a| + |b| + ceil(sqrt(|c|))."""
    a, b, c = g
    return MalcevCoords((a, b), c, groups.homogeneous_quasi_norm(g))


def simulate_walk(spec: GroupSpec, mu: StepMeasure, n: int, checkpoints,
                  rng: np.random.Generator, seed_info: str = "") -> WalkSummary:
    """One trajectory of the right walk X_k = S_1 ... S_k with summaries at
    the given checkpoints (checkpoint 0 reports the identity)."""
    checkpoints = sorted(set(int(c) for c in checkpoints))
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > n):
        raise ValueError("checkpoints must lie in [0, n]")
    want = set(checkpoints)
    jumps = mu.sample(rng, n)
    mode = "quasi_norm" if spec.variant == "heisenberg" else "exact"
    lengths, coords = [], []
    g = identity(spec)
    for k in range(n + 1):
        if k in want:
            if spec.variant == "heisenberg":
                lengths.append(groups.homogeneous_quasi_norm(g))
                coords.append(malcev_coords(g))
            else:
                lengths.append(groups.exact_word_length(spec, g))
        if k < n:
            g = mul(spec, g, jumps[k])
    return WalkSummary(checkpoints, lengths, mode,
                       coords if spec.variant == "heisenberg" else None,
                       seed_info)


# ---------------------------------------------------------------------------
# Batched walkers (exact in law, vectorised over trials)
# ---------------------------------------------------------------------------

def _heisenberg_batch(mu: StepMeasure, n: int, trials: int,
                      rng: np.random.Generator, checkpoints,
                      truncate_at: Optional[int] = None):
    """Vectorised Heisenberg walk under a shell (or finite axis) law.

    Steps are identity / unit generators / axis powers; composing
    (a,b,c)(da,db,0) = (a+da, b+db, c + a db).  Yields per-checkpoint
    coordinate arrays (A, B, C).
    """
    if mu.kind not in ("shell", "finite"):
        raise ValueError("batch walker supports shell and finite laws")
    checkpoints = sorted(set(checkpoints))
    A = np.zeros(trials, dtype=np.int64)
    B = np.zeros(trials, dtype=np.int64)
    C = np.zeros(trials, dtype=np.int64)
    out = {}
    if 0 in checkpoints:
        out[0] = (A.copy(), B.copy(), C.copy())
    for k in range(1, n + 1):
        da, db = _sample_heis_increments(mu, trials, rng, truncate_at)
        C += A * db
        A += da
        B += db
        if k in checkpoints:
            out[k] = (A.copy(), B.copy(), C.copy())
    return out


def _sample_heis_increments(mu: StepMeasure, trials: int,
                            rng: np.random.Generator,
                            truncate_at: Optional[int]):
    """(da, db) arrays for one step of every walker."""
    if mu.kind == "finite":
        sup = mu.support_elements()
        w = np.array([mu.pmf(s) for s in sup])
        w = w / w.sum()
        pick = rng.choice(len(sup), size=trials, p=w)
        arr = np.array([(s[0], s[1]) for s in sup], dtype=np.int64)
        out = arr[pick]
        return out[:, 0], out[:, 1]
    lazy_mask = rng.random(trials) < mu.laziness if mu.laziness > 0 else None
    radii = mu.sample_shell_radii(rng, trials).astype(np.int64)
    if truncate_at is not None:
        radii = np.where(radii > truncate_at, 0, radii)   # drop to identity
    axis = rng.integers(0, 2, size=trials)
    sign = rng.integers(0, 2, size=trials) * 2 - 1
    da = np.where(axis == 0, sign * radii, 0)
    db = np.where(axis == 1, sign * radii, 0)
    if lazy_mask is not None:
        da = np.where(lazy_mask, 0, da)
        db = np.where(lazy_mask, 0, db)
    return da, db


def _lattice_batch_positions(spec: GroupSpec, mu: StepMeasure, n: int,
                             trials: int, rng: np.random.Generator,
                             checkpoints):
    checkpoints = sorted(set(checkpoints))
    pos = np.zeros((trials, spec.d), dtype=np.int64)
    out = {}
    if 0 in checkpoints:
        out[0] = pos.copy()
    if mu.kind == "finite":
        sup = mu.support_elements()
        w = np.array([mu.pmf(s) for s in sup])
        w = w / w.sum()
        steps = np.array(sup, dtype=np.int64)
        for k in range(1, n + 1):
            pos += steps[rng.choice(len(sup), size=trials, p=w)]
            if k in checkpoints:
                out[k] = pos.copy()
        return out
    if mu.kind == "stable_z":
        if spec.d != 1:
            raise ValueError("stable law lives on Z")
        for k in range(1, n + 1):
            lazy = rng.random(trials) < mu.laziness if mu.laziness else None
            ks = mu.sample_stable_ints(rng, trials)
            if lazy is not None:
                ks = np.where(lazy, 0, ks)
            pos[:, 0] += ks
            if k in checkpoints:
                out[k] = pos.copy()
        return out
    # lattice shell law: axis powers
    for k in range(1, n + 1):
        radii = mu.sample_shell_radii(rng, trials).astype(np.int64)
        axis = rng.integers(0, spec.d, size=trials)
        sign = rng.integers(0, 2, size=trials) * 2 - 1
        step = np.zeros((trials, spec.d), dtype=np.int64)
        step[np.arange(trials), axis] = sign * radii
        if mu.laziness:
            step[rng.random(trials) < mu.laziness] = 0
        pos += step
        if k in checkpoints:
            out[k] = pos.copy()
    return out


def _tree_batch_lengths(rank: int, n: int, trials: int,
                        rng: np.random.Generator, checkpoints,
                        laziness: float = 0.0):
    """|X_k| for SRW on the 2k-regular tree via the exact distance chain."""
    checkpoints = sorted(set(checkpoints))
    two_k = 2 * rank
    d = np.zeros(trials, dtype=np.int64)
    out = {}
    if 0 in checkpoints:
        out[0] = d.copy()
    for k in range(1, n + 1):
        u = rng.random(trials)
        stay = u < laziness
        down = (~stay) & (d > 0) & (u < laziness + (1 - laziness) / two_k)
        up = ~stay & ~down
        d = d + np.where(stay, 0, np.where(down, -1, 1))
        if k in checkpoints:
            out[k] = d.copy()
    return out


def batch_lengths(spec: GroupSpec, mu: StepMeasure, n: int, trials: int,
                  rng: np.random.Generator, checkpoints) -> dict:
    """Word-length (or quasi-norm) arrays at checkpoints; metric mode depends
    on the backend (exact on lattices/trees, quasi-norm on Heisenberg)."""
    if spec.variant == "free":
        return _tree_batch_lengths(spec.rank, n, trials, rng, checkpoints,
                                   mu.laziness)
    if spec.variant == "heisenberg":
        snaps = _heisenberg_batch(mu, n, trials, rng, checkpoints)
        return {k: _quasi_norm_arrays(*v) for k, v in snaps.items()}
    if spec.variant == "lattice":
        snaps = _lattice_batch_positions(spec, mu, n, trials, rng, checkpoints)
        return {k: np.abs(v).sum(axis=1) for k, v in snaps.items()}
    raise ValueError("batched lengths unsupported on this backend")


def _quasi_norm_arrays(A, B, C):
    return np.abs(A) + np.abs(B) + np.ceil(np.sqrt(np.abs(C))).astype(np.int64)


# ---------------------------------------------------------------------------
# Speed in probability
# ---------------------------------------------------------------------------

@dataclass
class SpeedTable:
    metric_mode: str
    trials: int
    rows: list                      # (n, eps, prob, ci95)


def speed_in_probability(spec: GroupSpec, mu: StepMeasure, n_list, eps_list,
                         trials: int, rng: np.random.Generator) -> SpeedTable:
    """Monte Carlo estimates of P(|X_n|/n > eps) with binomial 95% bands;
    the same samples serve every eps (rows are monotone in eps by
    construction)."""
    n_list = sorted(set(int(n) for n in n_list))
    lengths = batch_lengths(spec, mu, n_list[-1], trials, rng, n_list)
    mode = "quasi_norm" if spec.variant == "heisenberg" else "exact"
    rows = []
    for n in n_list:
        ratio = lengths[n].astype(np.float64) / n
        for eps in eps_list:
            p = float((ratio > eps).mean())
            ci = 1.96 * math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
            rows.append((n, float(eps), p, ci))
    return SpeedTable(mode, trials, rows)


# ---------------------------------------------------------------------------
# Increment-ratio diagnostic (finite speed forces finite first moment)
# ---------------------------------------------------------------------------

def sample_jump_lengths(mu: StepMeasure, rng: np.random.Generator,
                        size: int) -> np.ndarray:
    """Word lengths of i.i.d. jumps (axis powers have |g| = r exactly)."""
    if mu.kind == "finite":
        sup = mu.support_elements()
        spec = mu.spec
        if spec.variant == "heisenberg":
            oracle = groups.bfs_oracle(spec, groups.standard_generators(spec), 8)
        else:
            oracle = groups.exact_oracle(spec)
        lens = np.array([oracle.length(s) for s in sup], dtype=np.float64)
        w = np.array([mu.pmf(s) for s in sup])
        w = w / w.sum()
        out = lens[rng.choice(len(sup), size=size, p=w)]
    elif mu.kind == "shell":
        out = mu.sample_shell_radii(rng, size).astype(np.float64)
    else:
        out = np.abs(mu.sample_stable_ints(rng, size)).astype(np.float64)
    if mu.laziness:
        out = np.where(rng.random(size) < mu.laziness, 0.0, out)
    return out


@dataclass
class IncrementRatioReport:
    checkpoints: list
    medians: list
    per_trial_max: np.ndarray       # shape (trials, len(checkpoints))


def increment_ratio_max(mu: StepMeasure, n: int, trials: int,
                        rng: np.random.Generator,
                        checkpoints=None) -> IncrementRatioReport:
    """Distribution of the running max of |S_k|/k up to each checkpoint.

    Infinite-first-moment laws must show growing medians across decades
    (almost-sure unboundedness of |S_k|/k); bounded-step laws stay pinned
    at the maximal generator length.
    """
    if checkpoints is None:
        checkpoints = [n]
    checkpoints = sorted(set(int(c) for c in checkpoints))
    per_trial = np.zeros((trials, len(checkpoints)))
    k = np.arange(1, n + 1, dtype=np.float64)
    for t in range(trials):
        s = sample_jump_lengths(mu, rng, n)
        running = np.maximum.accumulate(s / k)
        per_trial[t] = running[np.array(checkpoints) - 1]
    medians = [float(np.median(per_trial[:, j])) for j in range(len(checkpoints))]
    return IncrementRatioReport(checkpoints, medians, per_trial)


# ---------------------------------------------------------------------------
# Green speed
# ---------------------------------------------------------------------------

@dataclass
class GreenSpeedRow:
    n: int
    mean: float
    ci95: float
    mc_fallback_points: int


def green_speed_estimate(spec: GroupSpec, mu: StepMeasure, n_list, trials: int,
                         rng: np.random.Generator,
                         reach: Optional[int] = None,
                         tol: float = 1e-10) -> list:
    """Rows (n, mean d_G(e, X_n)/n, ci) for the Green metric
    d_G(e, x) = log G(e,e) - log G(e,x).

    Trees use the closed form d_G = |x| log q with the exact distance
    chain.  Transient lattices use one killed solve from the origin on a
    ball large enough for essentially all endpoints; endpoints beyond the
    solver reach fall back to Monte Carlo hitting estimates.
    """
    n_list = sorted(set(int(n) for n in n_list))
    if spec.variant == "free":
        oracle = TreeGreenOracle(spec)
        logq = math.log(oracle.q)
        lengths = _tree_batch_lengths(spec.rank, n_list[-1], trials, rng,
                                      n_list, mu.laziness)
        rows = []
        for n in n_list:
            dg = lengths[n].astype(np.float64) * logq / n
            rows.append(GreenSpeedRow(n, float(dg.mean()),
                                      1.96 * float(dg.std(ddof=1)) / math.sqrt(trials), 0))
        return rows
    if spec.variant != "lattice" or spec.d < 3:
        raise ValueError("Green-speed estimates need a transient backend "
                         "with a Green oracle")
    n_max = n_list[-1]
    if reach is None:
        # |X_n|_1 has mean sqrt(6n/pi) and variance n (1 - 2/pi); reach at
        # +4.5 sd keeps the MC fallback probability ~1e-5 per endpoint
        mean_l1 = math.sqrt(6.0 * n_max / math.pi)
        sd_l1 = math.sqrt(n_max * (1.0 - 2.0 / math.pi))
        reach = int(mean_l1 + 4.5 * sd_l1) + 2
    omega = ball_domain(spec, mu, reach, with_boundary=False)
    table = killed_green_solve(omega, [identity(spec)], mu, tol, method="cg")
    origin_row = table.row(identity(spec))
    gee = table.green(identity(spec), identity(spec))
    snaps = _lattice_batch_positions(spec, mu, n_max, trials, rng, n_list)
    rows = []
    for n in n_list:
        pts = snaps[n]
        pos = omega.coord_positions(pts) if hasattr(omega, "coord_positions") \
            else np.array([omega.lookup(tuple(int(c) for c in p)) or -1 for p in pts])
        vals = np.empty(trials)
        fallback = 0
        for i in range(trials):
            j = pos[i]
            if j >= 0 and origin_row[j] > 0:
                g = origin_row[j]
            else:
                fallback += 1
                x = tuple(int(c) for c in pts[i])
                est = mc_hitting_green(spec, mu, identity(spec), x,
                                       trials=400, rng=rng, gee=gee,
                                       path_cap=min(green_mod.default_path_cap(spec, reach),
                                                    200_000))
                g = max(est.value, 1e-300)
            vals[i] = (math.log(gee) - math.log(g)) / n
        rows.append(GreenSpeedRow(n, float(vals.mean()),
                                  1.96 * float(vals.std(ddof=1)) / math.sqrt(trials),
                                  fallback))
    return rows


# ---------------------------------------------------------------------------
# Total-variation dispersion along the centre
# ---------------------------------------------------------------------------

@dataclass
class DispersionCurve:
    shift: int
    rows: list                     # (n, tv, delta_trunc)
    periodic: bool

    def final_tv(self) -> float:
        return self.rows[-1][1]


def _support_gcd(pmf: PmfOnZ) -> int:
    sup = pmf.support()
    if len(sup) < 2:
        return 0
    diffs = np.diff(sup)
    g = 0
    for d in diffs:
        g = math.gcd(g, int(d))
    return g


def tv_dispersion_z(pmf: PmfOnZ, shift: int, n_list, cap: int) -> DispersionCurve:
    """TV(n) = (1/2) sum_m |p^(n)(m) - p^(n)(m - shift)| by exact doubling
    convolutions on the window |m| <= cap; the reported TV error includes
    the tracked truncation loss.  Periodic supports (gcd of support
    differences > 1) are computed but flagged."""
    n_list = sorted(set(int(n) for n in n_list))
    for n in n_list:
        if n & (n - 1):
            raise ValueError("checkpoints must be powers of two (doubling chain)")
    periodic = _support_gcd(pmf) > 1
    powers = self_convolution_powers(pmf, n_list, cap)
    rows = []
    for n in n_list:
        p = powers[n]
        rows.append((n, total_variation_shift(p, shift), p.delta_trunc))
    return DispersionCurve(shift, rows, periodic)


@dataclass
class ProductDispersionRow:
    n: int
    tv_product: float
    tv_h: float
    tv_z: float
    slack: float
    error_budget: float


def product_dispersion_bound(h_pmf: PmfOnZ, z_pmf: PmfOnZ, shift: tuple,
                             n_list, cap_h: int, cap_z: int) -> list:
    """Check TV_{HxZ}(n) <= TV_H(n) + TV_Z(n) for the product walk shifted
    by a central element (z_h, z_z); all three total variations computed
    exactly on truncated supports."""
    zh, zz = shift
    n_list = sorted(set(int(n) for n in n_list))
    pow_h = self_convolution_powers(h_pmf, n_list, cap_h)
    pow_z = self_convolution_powers(z_pmf, n_list, cap_z)
    rows = []
    for n in n_list:
        a, b = pow_h[n], pow_z[n]
        tv_h = total_variation_shift(a, zh)
        tv_z = total_variation_shift(b, zz)
        tv_prod = _tv_product_shift(a.vals, zh, b.vals, zz)
        budget = a.delta_trunc + b.delta_trunc
        rows.append(ProductDispersionRow(n, tv_prod, tv_h, tv_z,
                                         tv_h + tv_z - tv_prod, budget))
    return rows


def _tv_product_shift(a: np.ndarray, sh: int, b: np.ndarray, sz: int,
                      chunk: int = 256) -> float:
    """(1/2) sum_{u,v} |a_u b_v - a_{u-sh} b_{v-sz}| streamed over u."""
    pad_a = np.zeros(abs(sh))
    a_full = np.concatenate([a, pad_a]) if sh >= 0 else np.concatenate([pad_a, a])
    a_shift = np.concatenate([pad_a, a]) if sh >= 0 else np.concatenate([a, pad_a])
    pad_b = np.zeros(abs(sz))
    b_full = np.concatenate([b, pad_b]) if sz >= 0 else np.concatenate([pad_b, b])
    b_shift = np.concatenate([pad_b, b]) if sz >= 0 else np.concatenate([b, pad_b])
    total = 0.0
    for lo in range(0, len(a_full), chunk):
        au = a_full[lo:lo + chunk, None]
        av = a_shift[lo:lo + chunk, None]
        total += float(np.abs(au * b_full[None, :] - av * b_shift[None, :]).sum())
    return 0.5 * total


# ---------------------------------------------------------------------------
# Truncated coordinate moments on the Heisenberg group
# ---------------------------------------------------------------------------

@dataclass
class TruncatedMomentRow:
    n: int
    weight1_second_moment: float    # E[x1 coords^2] / n^2 (averaged over a, b)
    weight2_second_moment: float    # E[c^2] / n^4
    coupling_failure_rate: float    # n P(|S_1| > n)


def truncated_coordinate_moments(mu: StepMeasure, n_list, trials: int,
                                 rng: np.random.Generator) -> list:
    """Second moments of the weighted coordinates of the jump-truncated walk
    (jumps longer than n are replaced by the identity), normalised by
    n^(2 w); the coupling failure rate n P(|S_1| > n) comes from the exact
    radius law."""
    if mu.spec.variant != "heisenberg" or mu.kind != "shell":
        raise ValueError("coordinate moments target the Heisenberg shell law")
    rows = []
    for n in sorted(set(int(n) for n in n_list)):
        snaps = _heisenberg_batch(mu, n, trials, rng, [n], truncate_at=n)
        A, B, C = snaps[n]
        w1 = 0.5 * float((A.astype(np.float64) ** 2 + B.astype(np.float64) ** 2).mean()) / n ** 2
        w2 = float((C.astype(np.float64) ** 2).mean()) / float(n) ** 4
        tail = _shell_tail_probability(mu, n)
        rows.append(TruncatedMomentRow(n, w1, w2, n * tail))
    return rows


def _shell_tail_probability(mu: StepMeasure, x: int) -> float:
    """P(|S_1| > x) from the radius law (unit steps have length 1)."""
    if x < mu.r0:
        return 1.0 - UNIT_MASS * (1 if x >= 1 else 0)
    acc = 0.0
    lo = mu.r0
    total = 0.0
    hi = 10 ** 7
    for start in range(lo, hi, 10 ** 6):
        r = np.arange(start, min(start + 10 ** 6, hi), dtype=np.float64)
        w = 1.0 / (r * r * np.log(r))
        total += float(w.sum())
        acc += float(w[r > x].sum())
    acc += 1.0 / (hi * np.log(hi))      # integral tail (all beyond x)
    total += 1.0 / (hi * np.log(hi))
    return (1.0 - UNIT_MASS) * (1.0 - mu.laziness) * acc / total


# ---------------------------------------------------------------------------
# Quarter-plane Martin ratios
# ---------------------------------------------------------------------------

@dataclass
class ConeRatioRow:
    n: int
    ratios: list                   # G_K(x, (n,n)) / G_K(x*, (n,n)) per probe


def cone_martin_experiment(box: int, probes: list, base: tuple,
                           n_list) -> dict:
    """Ratios G_K(x, y_n) / G_K(x*, y_n) along the diagonal ray y_n = (n, n)
    of the quadrant-killed walk, compared to h(x)/h(x*) for the exact
    killed-harmonic function h(x) = x1 x2; also returns the homogeneity
    degree of h fitted on the diagonal (exactly 2)."""
    sources = [tuple(p) for p in probes] + [tuple(base)]
    table = green_mod.quadrant_killed_green(box, sources)
    rows = []
    for n in sorted(set(int(n) for n in n_list)):
        if not (1 <= n <= box):
            raise ValueError("ray point outside the box")
        y = (n, n)
        denom = table.green(base, y)
        rows.append(ConeRatioRow(n, [table.green(p, y) / denom for p in probes]))
    limits = [p[0] * p[1] / (base[0] * base[1]) for p in probes]
    ks = np.arange(1, box + 1, dtype=np.float64)
    degree = float(np.polyfit(np.log(ks), np.log(ks * ks), 1)[0])
    return {"rows": rows, "limits": limits, "homogeneity_degree": degree,
            "harmonicity_defect": green_mod.quadrant_harmonicity_defect(box),
            "residual": float(table.residuals.max())}
