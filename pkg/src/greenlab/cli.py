"""Batch experiment driver: config parsing, dispatch, Green-table caching,
deterministic seeding, and CSV reporting.

Configs are flat JSON with a "kind" discriminator (nesting only inside the
measure descriptor); unknown keys are rejected.  Exit statuses: 0 success,
2 config error, 3 numeric failure, 4 invariant violation (a result that
would contradict a proven property, e.g. an SPD failure or TV > 1, with a
pointer to the offending row).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, cache, envelope, functionals, green, groups, \
    measures, reporting, rng as rngmod, walks

STATUS_OK = 0
STATUS_CONFIG = 2
STATUS_NUMERIC = 3
STATUS_CONTRADICTION = 4


class ConfigError(ValueError):
    pass


class ContradictionError(RuntimeError):
    """A computed value contradicts a proven invariant."""


KINDS = ("delta-scan", "eps-delta", "green-table", "envelope", "speed",
         "dispersion", "green-speed", "cone", "increment-probe", "on-diagonal")

_ALLOWED_KEYS = {
    "delta-scan": {"kind", "backend", "measure", "scales", "basepoint",
                   "engine", "tol", "seed", "output"},
    "eps-delta": {"kind", "backend", "measure", "scales", "basepoint",
                  "tol", "seed", "output"},
    "green-table": {"kind", "backend", "measure", "radius", "sources",
                    "boundary_matrix", "tol", "seed", "output"},
    "envelope": {"kind", "d_star", "gamma", "alpha", "phi", "r_decades",
                 "points_per_decade", "seed", "output"},
    "speed": {"kind", "backend", "measure", "n_list", "eps_list", "trials",
              "seed", "output"},
    "dispersion": {"kind", "measure", "shift", "n_list", "cap",
                   "product_shift", "product_cap", "seed", "output"},
    "green-speed": {"kind", "backend", "measure", "n_list", "trials",
                    "seed", "output"},
    "cone": {"kind", "box", "probes", "base", "n_list", "seed", "output"},
    "increment-probe": {"kind", "backend", "measure", "n", "trials",
                        "checkpoints", "seed", "output"},
    "on-diagonal": {"kind", "backend", "measure", "m_max", "seed", "output"},
}


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def parse_backend(name: str) -> groups.GroupSpec:
    if name.startswith("Z^"):
        return groups.integer_lattice(int(name[2:]))
    if name.startswith("F_"):
        return groups.free_group(int(name[2:]))
    if name == "Heis3":
        return groups.heisenberg()
    if name.endswith("xZ") and name.startswith("(") :
        return groups.product_with_z(parse_backend(name[1:-3]))
    raise ConfigError(f"unknown backend {name!r}")


def build_measure(spec, desc: dict) -> measures.StepMeasure:
    allowed = {"type", "laziness", "alpha", "r0", "r_cap"}
    unknown = set(desc) - allowed
    if unknown:
        raise ConfigError(f"unknown measure keys {sorted(unknown)}")
    mtype = desc.get("type")
    lazy = float(desc.get("laziness", 0.0))
    if mtype == "srw":
        mu = measures.uniform_on_generators(groups.standard_generators(spec))
    elif mtype == "shell":
        mu = measures.shell_measure(spec, int(desc.get("r0", 3)),
                                    int(desc.get("r_cap", 10 ** 6)))
    elif mtype == "stable":
        mu = measures.stable_z_measure(float(desc["alpha"]))
    else:
        raise ConfigError(f"unknown measure type {mtype!r}")
    if lazy:
        mu = measures.lazy_transform(mu, lazy)
    return mu


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    unknown = set(cfg) - _ALLOWED_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "output" not in cfg:
        raise ConfigError("config needs an 'output' path")
    return cfg


def _meta(cfg: dict, backend: str, mhash: str) -> dict:
    return {"seed": cfg.get("seed", 0), "version": __version__,
            "backend": backend, "measure_hash": mhash,
            "kind": cfg["kind"]}


def _prefix(cfg, backend, mhash):
    return [cfg.get("seed", 0), __version__, backend, mhash]


# ---------------------------------------------------------------------------
# Experiment implementations
# ---------------------------------------------------------------------------

def _delta_scan(cfg, cache_dir, force, with_band):
    spec = parse_backend(cfg["backend"])
    green.check_transient(spec)
    mu = build_measure(spec, cfg["measure"])
    mhash = cache.measure_hash(cfg["measure"])
    tol = float(cfg.get("tol", 1e-10))
    e = groups.identity(spec)
    b = reporting.parse_element(spec, cfg["basepoint"]) if "basepoint" in cfg \
        else groups.standard_generators(spec).elements[0]
    engine = cfg.get("engine", "auto")
    use_tree = (engine in ("auto", "closed-form") and spec.variant == "free"
                and mu.kind == "finite" and mu.laziness == 0.0)
    if engine == "closed-form" and not use_tree:
        raise ConfigError("closed-form engine needs the free-group SRW")
    rows = []
    d_ab = 1
    for r in cfg["scales"]:
        r = int(r)
        s_dom = green.ball_domain(spec, mu, r)
        if use_tree:
            provider = green.TreeGreenOracle(spec)
        else:
            omega = green.ball_domain(spec, mu, 2 * r + 2, with_boundary=False)
            table = None
            if cache_dir and not force:
                table = cache.load_table(cache_dir, cfg["backend"], mhash,
                                         omega, tol)
            if table is None:
                table = green.killed_green_solve(omega, [e, b], mu, tol)
                if cache_dir:
                    cache.save_table(cache_dir, cfg["backend"], mhash, table)
            provider = green.TableGreenProvider(table)
        drow = functionals.delta(s_dom, e, b, provider, scale=r)
        if drow.value < -1e-15:
            raise ContradictionError(f"negative delta at R={r}")
        eps_val = eta = band_ok = None
        if with_band:
            check = functionals.eps_delta_band_check(s_dom, e, b, mu, provider,
                                                     tol=tol)
            eps_val, eta, band_ok = check.epsilon_value, check.eta_hat, check.band_ok
        rows.append((r, d_ab, drow.value, drow.err,
                     reporting.render_element(spec, drow.argmax),
                     eps_val, eta, band_ok))
    header = ["seed", "version", "backend", "measure_hash",
              "R", "d_ab", "delta", "delta_err", "argmax",
              "epsilon", "eta_hat", "band_ok"]
    pre = _prefix(cfg, cfg["backend"], mhash)
    out_rows = [pre + list(r) for r in rows]
    reporting.emit_report(out_rows, cfg["output"], header,
                          _meta(cfg, cfg["backend"], mhash))


def _green_table(cfg, cache_dir, force):
    spec = parse_backend(cfg["backend"])
    green.check_transient(spec)
    mu = build_measure(spec, cfg["measure"])
    mhash = cache.measure_hash(cfg["measure"])
    tol = float(cfg.get("tol", 1e-10))
    radius = int(cfg["radius"])
    omega = green.ball_domain(spec, mu, radius,
                              with_boundary=bool(cfg.get("boundary_matrix")))
    sources = [reporting.parse_element(spec, s) for s in cfg["sources"]]
    table = None
    if cache_dir and not force:
        table = cache.load_table(cache_dir, cfg["backend"], mhash, omega, tol)
        if table is not None and any(s not in table.sources for s in sources):
            table = None
    if table is None:
        table = green.killed_green_solve(omega, sources, mu, tol)
        if cache_dir:
            cache.save_table(cache_dir, cfg["backend"], mhash, table)
    e = groups.identity(spec)
    rows = []
    for s in sources:
        rows.append((reporting.render_element(spec, s),
                     table.green(s, e), table.green(s, s),
                     float(table.residuals[table.sources.index(s)])))
    meta = _meta(cfg, cfg["backend"], mhash)
    if cfg.get("boundary_matrix"):
        inner = green.ball_domain(spec, mu, radius)
        bgm_table = green.killed_green_solve(
            green.ball_domain(spec, mu, 2 * radius + 2, with_boundary=False),
            inner.boundary, mu, tol)
        bgm = green.boundary_green_matrix(inner, bgm_table)
        meta["spd_ok"] = bool(bgm.spd_ok)
        meta["min_eigenvalue"] = bgm.min_eigenvalue
        if not bgm.spd_ok:
            raise ContradictionError(
                f"boundary Green matrix failed SPD (min eig {bgm.min_eigenvalue})")
    header = ["seed", "version", "backend", "measure_hash",
              "source", "green_to_identity", "green_diagonal", "residual"]
    pre = _prefix(cfg, cfg["backend"], mhash)
    reporting.emit_report([pre + list(r) for r in rows], cfg["output"],
                          header, meta)


def _envelope(cfg):
    phi_desc = dict(cfg["phi"])
    kind = phi_desc.pop("kind")
    phi = envelope.Envelope(kind, **phi_desc)
    spec = envelope.EnvelopeSpec(float(cfg["d_star"]), float(cfg["gamma"]),
                                 phi, alpha=float(cfg.get("alpha", 1.0)))
    lo, hi = cfg.get("r_decades", [0.5, 3.0])
    ppd = int(cfg.get("points_per_decade", 4))
    n_pts = max(2, int((hi - lo) * ppd) + 1)
    grid = np.logspace(lo, hi, n_pts)
    report = envelope.tr_alpha_ratio(spec, grid)
    meta = _meta(cfg, "-", cache.measure_hash(cfg["phi"]))
    meta["verdict"] = report.verdict
    meta["decade_growth"] = report.decade_growth
    header = ["seed", "version", "backend", "measure_hash",
              "r", "lhs", "rhs", "ratio"]
    pre = _prefix(cfg, "-", meta["measure_hash"])
    rows = [pre + [float(r), float(l), float(h), float(q)]
            for r, l, h, q in report.rows()]
    reporting.emit_report(rows, cfg["output"], header, meta)


def _speed(cfg):
    spec = parse_backend(cfg["backend"])
    mu = build_measure(spec, cfg["measure"])
    mhash = cache.measure_hash(cfg["measure"])
    stream = rngmod.derive_stream(int(cfg.get("seed", 0)), "speed")
    table = walks.speed_in_probability(spec, mu, cfg["n_list"],
                                       cfg["eps_list"], int(cfg["trials"]),
                                       stream)
    for n, eps, p, ci in table.rows:
        if not (0.0 <= p <= 1.0):
            raise ContradictionError(f"probability {p} outside [0,1] at n={n}")
    header = ["seed", "version", "backend", "measure_hash",
              "n", "eps", "prob", "ci95", "metric_mode"]
    pre = _prefix(cfg, cfg["backend"], mhash)
    rows = [pre + [n, eps, p, ci, table.metric_mode]
            for n, eps, p, ci in table.rows]
    meta = _meta(cfg, cfg["backend"], mhash)
    meta["trials"] = table.trials
    reporting.emit_report(rows, cfg["output"], header, meta)


def _dispersion(cfg):
    desc = cfg["measure"]
    z_spec = groups.integer_lattice(1)
    mu = build_measure(z_spec, desc)
    mhash = cache.measure_hash(desc)
    cap = int(cfg.get("cap", 2 * 10 ** 5))
    pmf = mu.to_pmf_on_z(cap)
    curve = walks.tv_dispersion_z(pmf, int(cfg["shift"]), cfg["n_list"], cap)
    for n, tv, dt in curve.rows:
        if tv > 1.0 + 2 * dt + 1e-12:
            raise ContradictionError(f"TV {tv} exceeds 1 at n={n}")
    meta = _meta(cfg, "Z^1", mhash)
    meta["periodic"] = curve.periodic
    header = ["seed", "version", "backend", "measure_hash",
              "n", "tv", "delta_trunc"]
    pre = _prefix(cfg, "Z^1", mhash)
    rows = [pre + [n, tv, dt] for n, tv, dt in curve.rows]
    if "product_shift" in cfg:
        h_pmf = measures.lazy_transform(
            measures.uniform_on_generators(groups.standard_generators(z_spec)),
            0.5).to_pmf_on_z(max(cfg["n_list"]) + 1)
        pcap = int(cfg.get("product_cap", 10 ** 5))
        prod = walks.product_dispersion_bound(h_pmf, mu.to_pmf_on_z(pcap),
                                              tuple(cfg["product_shift"]),
                                              cfg["n_list"], max(cfg["n_list"]) + 1,
                                              pcap)
        header += ["tv_h", "tv_z", "tv_product", "slack"]
        for i, row in enumerate(prod):
            if row.slack < -(row.error_budget * 2 + 1e-12):
                raise ContradictionError(
                    f"product TV bound violated at n={row.n}")
            rows[i] += [row.tv_h, row.tv_z, row.tv_product, row.slack]
    reporting.emit_report(rows, cfg["output"], header, meta)


def _green_speed(cfg):
    spec = parse_backend(cfg["backend"])
    green.check_transient(spec)
    mu = build_measure(spec, cfg["measure"])
    mhash = cache.measure_hash(cfg["measure"])
    stream = rngmod.derive_stream(int(cfg.get("seed", 0)), "green-speed")
    rows = walks.green_speed_estimate(spec, mu, cfg["n_list"],
                                      int(cfg["trials"]), stream)
    header = ["seed", "version", "backend", "measure_hash",
              "n", "mean_green_speed", "ci95", "mc_fallback_points"]
    pre = _prefix(cfg, cfg["backend"], mhash)
    out = [pre + [r.n, r.mean, r.ci95, r.mc_fallback_points] for r in rows]
    reporting.emit_report(out, cfg["output"], header,
                          _meta(cfg, cfg["backend"], mhash))


def _cone(cfg):
    box = int(cfg["box"])
    probes = [tuple(p) for p in cfg["probes"]]
    base = tuple(cfg["base"])
    result = walks.cone_martin_experiment(box, probes, base, cfg["n_list"])
    meta = _meta(cfg, "Z^2-quadrant", "-")
    meta["limits"] = result["limits"]
    meta["homogeneity_degree"] = result["homogeneity_degree"]
    meta["harmonicity_defect"] = result["harmonicity_defect"]
    header = ["seed", "version", "backend", "measure_hash", "n"] + \
        [f"ratio_{p[0]}_{p[1]}" for p in probes]
    pre = _prefix(cfg, "Z^2-quadrant", "-")
    rows = [pre + [row.n] + row.ratios for row in result["rows"]]
    reporting.emit_report(rows, cfg["output"], header, meta)


def _increment_probe(cfg):
    spec = parse_backend(cfg["backend"])
    mu = build_measure(spec, cfg["measure"])
    mhash = cache.measure_hash(cfg["measure"])
    stream = rngmod.derive_stream(int(cfg.get("seed", 0)), "increment-probe")
    checkpoints = cfg.get("checkpoints", [int(cfg["n"])])
    report = walks.increment_ratio_max(mu, int(cfg["n"]), int(cfg["trials"]),
                                       stream, checkpoints)
    header = ["seed", "version", "backend", "measure_hash",
              "checkpoint", "median_running_max"]
    pre = _prefix(cfg, cfg["backend"], mhash)
    rows = [pre + [c, m] for c, m in zip(report.checkpoints, report.medians)]
    reporting.emit_report(rows, cfg["output"], header,
                          _meta(cfg, cfg["backend"], mhash))


def _on_diagonal(cfg):
    spec = parse_backend(cfg["backend"])
    mu = build_measure(spec, cfg["measure"])
    mhash = cache.measure_hash(cfg["measure"])
    report = envelope.on_diagonal_probe(spec, mu, int(cfg["m_max"]))
    meta = _meta(cfg, cfg["backend"], mhash)
    meta["beta_hat"] = report.beta_hat
    meta["rate"] = report.rate
    meta["kesten_root"] = report.kesten_root
    header = ["seed", "version", "backend", "measure_hash", "m", "p_2m"]
    pre = _prefix(cfg, cfg["backend"], mhash)
    rows = [pre + [int(m), float(p)] for m, p in zip(report.m_values, report.p2m)]
    reporting.emit_report(rows, cfg["output"], header, meta)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def run(config_path: str, cache_dir=None, seed=None, jobs: int = 1,
        force_recompute: bool = False, emit_plot_script: bool = False) -> int:
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg["seed"] = int(seed)
        if jobs < 1:
            raise ConfigError("--jobs must be positive")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return STATUS_CONFIG
    if cache_dir is None:
        cache_dir = cache.default_cache_dir()
    kind = cfg["kind"]
    try:
        if kind == "delta-scan":
            _delta_scan(cfg, cache_dir, force_recompute, with_band=False)
        elif kind == "eps-delta":
            _delta_scan(cfg, cache_dir, force_recompute, with_band=True)
        elif kind == "green-table":
            _green_table(cfg, cache_dir, force_recompute)
        elif kind == "envelope":
            _envelope(cfg)
        elif kind == "speed":
            _speed(cfg)
        elif kind == "dispersion":
            _dispersion(cfg)
        elif kind == "green-speed":
            _green_speed(cfg)
        elif kind == "cone":
            _cone(cfg)
        elif kind == "increment-probe":
            _increment_probe(cfg)
        elif kind == "on-diagonal":
            _on_diagonal(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return STATUS_CONFIG
    except ContradictionError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return STATUS_CONTRADICTION
    except (green.SolverError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return STATUS_NUMERIC
    except (KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return STATUS_CONFIG
    if emit_plot_script:
        _write_plot_script(cfg["output"])
    return STATUS_OK


def _write_plot_script(csv_path: str) -> None:
    script = csv_path + ".plot.py"
    with open(script, "w", encoding="utf-8") as fh:
        fh.write(f'''"""Quick-look plot for {os.path.basename(csv_path)}."""
import csv
import matplotlib.pyplot as plt

with open({csv_path!r}) as fh:
    lines = [l for l in fh if not l.startswith("#")]
reader = csv.reader(lines)
header = next(reader)
rows = list(reader)
xcol = 4                       # first experiment-specific column
fig, ax = plt.subplots()
for col in range(xcol + 1, len(header)):
    try:
        ys = [float(r[col]) for r in rows]
    except ValueError:
        continue
    ax.plot([float(r[xcol]) for r in rows], ys, marker="o", label=header[col])
ax.set_xlabel(header[xcol])
ax.legend()
fig.savefig({csv_path!r} + ".png", dpi=150)
''')


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="greenlab",
                                     description="batch experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run one experiment config")
    runp.add_argument("config")
    runp.add_argument("--cache-dir", default=None)
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--jobs", type=int, default=1)
    runp.add_argument("--force-recompute", action="store_true")
    runp.add_argument("--emit-plot-script", action="store_true")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, cache_dir=args.cache_dir, seed=args.seed,
                   jobs=args.jobs, force_recompute=args.force_recompute,
                   emit_plot_script=args.emit_plot_script)
    return STATUS_CONFIG


if __name__ == "__main__":
    sys.exit(main())
