"""Experiment orchestration: config parsing, dispatch, result emission.

Configuration is a TOML file; results are JSON-lines records plus a flat
CSV table per experiment.  Every record embeds the config digest, the
master seed, and the package version; CSV bodies contain neither
timestamps nor version tags, so a rerun with the same config and seed
is byte-identical.

Subcommands: cover, classify, wegner, two-volume, initial-step,
lemma-check, msa, dump-matrix.  Desk-scale statistical runs must pass
--illustrative (or set it in the config) whenever the schedule's
constants fall below the regime the theory assumes.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from . import classify as cls
from . import msa
from . import operators as ops
from . import spectral
from .disorder import (
    AmplitudeDistribution,
    InteractionSpec,
    ModelParams,
    SingleSiteProfile,
    region_for,
    sample_disorder,
)
from .geometry import NRectangle, suitable_cover, verify_cover_laws

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "main"]

EXPERIMENTS = (
    "cover",
    "classify",
    "wegner",
    "two-volume",
    "initial-step",
    "lemma-check",
    "msa",
    "dump-matrix",
)
STATISTICAL = ("wegner", "two-volume", "initial-step", "msa")

OUT_ENV_VAR = "MSALAB_OUT"


class ConfigError(ValueError):
    """Invalid configuration; carries the full list of violations."""

    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass
class RunConfig:
    """Validated experiment configuration with its provenance digest."""

    model: ModelParams
    ledger: msa.ExponentLedger
    schedule_kind: str
    l0: float
    steps: int
    factor: float
    experiment: str
    options: dict
    seed: int
    trials: int
    out: Path
    workers: int
    max_dim: int
    illustrative: bool
    digest: str


def _config_digest(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _build_config(raw: dict, experiment: str | None = None) -> RunConfig:
    violations: list[str] = []
    model_raw = raw.get("model", {})
    ledger_raw = raw.get("ledger", {})
    sched_raw = raw.get("schedule", {})
    exp_raw = raw.get("experiment", {})

    d = model_raw.get("d", 1)
    n = model_raw.get("n", 1)
    h = model_raw.get("h", 0.25)
    if not (isinstance(d, int) and d >= 1):
        violations.append("model.d must be an integer >= 1")
    if not (isinstance(n, int) and n >= 1):
        violations.append("model.n must be an integer >= 1")
    if not h > 0:
        violations.append("model.h must be positive")
    boundary = model_raw.get("boundary", "dirichlet")
    if boundary != "dirichlet":
        violations.append("model.boundary: only 'dirichlet' is supported")

    u_minus = model_raw.get("u_minus", 1.0)
    delta_minus = model_raw.get("delta_minus", 1.0)
    delta_plus = model_raw.get("delta_plus", 1.0)
    if not 0 < u_minus <= 1:
        violations.append("model.u_minus must lie in (0, 1]")
    if not 0 < delta_minus <= delta_plus:
        violations.append("model profile widths need 0 < delta_minus <= delta_plus")

    dist_kind = model_raw.get("distribution", "uniform")
    m_plus = model_raw.get("m_plus", 1.0)
    tilt = model_raw.get("tilt", 0.0)
    if dist_kind not in ("uniform", "tilted"):
        violations.append("model.distribution must be 'uniform' or 'tilted'")
    if not m_plus > 0:
        violations.append("model.m_plus must be positive")
    if dist_kind == "tilted" and not abs(tilt) < 1:
        violations.append("model.tilt must satisfy |tilt| < 1")

    i_bound = model_raw.get("interaction_bound", 0.0)
    i_range = model_raw.get("interaction_range", 1.0)
    if i_bound < 0:
        violations.append("model.interaction_bound must be nonnegative")
    if not i_range > 0:
        violations.append("model.interaction_range must be positive")

    ledger = msa.ExponentLedger(
        **{k: ledger_raw.get(k, getattr(msa.ExponentLedger, k)) for k in
           ("zeta", "zeta2", "zeta1", "beta", "zeta0", "tau", "gamma", "kappa", "m_star")}
    )
    ok, ledger_violations = msa.validate_ledger(ledger)
    if not ok:
        violations.extend(f"ledger: {v}" for v in ledger_violations)

    sk = sched_raw.get("kind", "geometric")
    l0 = sched_raw.get("l0", 12.0)
    steps = sched_raw.get("steps", 3)
    factor = sched_raw.get("factor", 2.0)
    if sk not in ("geometric", "power"):
        violations.append("schedule.kind must be 'geometric' or 'power'")
    if not l0 > 1:
        violations.append("schedule.l0 must exceed 1")
    if not (isinstance(steps, int) and steps >= 1):
        violations.append("schedule.steps must be an integer >= 1")
    if not factor > 1:
        violations.append("schedule.factor must exceed 1")

    kind = experiment or exp_raw.get("kind")
    if kind not in EXPERIMENTS:
        violations.append(f"experiment.kind must be one of {EXPERIMENTS}; got {kind!r}")
    if "seed" not in exp_raw:
        violations.append("experiment.seed is required")
    seed = exp_raw.get("seed", 0)
    if not isinstance(seed, int):
        violations.append("experiment.seed must be an integer")
        seed = 0
    trials = exp_raw.get("trials", 100)
    if not (isinstance(trials, int) and trials >= 0):
        violations.append("experiment.trials must be a nonnegative integer")
    elif kind in STATISTICAL and trials < 1:
        violations.append(f"experiment.trials must be >= 1 for the {kind} experiment")
    workers = exp_raw.get("workers", 1)
    if not (isinstance(workers, int) and workers >= 1):
        violations.append("experiment.workers must be an integer >= 1")
    max_dim = exp_raw.get("max_dim", 30_000)
    if not (isinstance(max_dim, int) and max_dim >= 16):
        violations.append("experiment.max_dim must be an integer >= 16")

    if violations:
        raise ConfigError(violations)

    model = ModelParams(
        d=d,
        n=n,
        profile=SingleSiteProfile(u_minus=u_minus, delta_minus=delta_minus, delta_plus=delta_plus),
        distribution=AmplitudeDistribution(kind=dist_kind, m_plus=m_plus, tilt=tilt),
        interaction=InteractionSpec(bound=i_bound, r0=i_range),
        h=h,
        boundary=boundary,
    )
    out = Path(os.environ.get(OUT_ENV_VAR) or exp_raw.get("out", "results"))
    return RunConfig(
        model=model,
        ledger=ledger,
        schedule_kind=sk,
        l0=float(l0),
        steps=steps,
        factor=float(factor),
        experiment=kind,
        options=dict(exp_raw.get("options", {})),
        seed=seed,
        trials=trials,
        out=out,
        workers=workers,
        max_dim=max_dim,
        illustrative=bool(exp_raw.get("illustrative", False)),
        digest=_config_digest(raw),
    )


def parse_config(path, experiment: str | None = None) -> RunConfig:
    """Load and fully validate a TOML config, reporting all violations."""
    p = Path(path)
    if not p.exists():
        raise ConfigError([f"config file not found: {p}"])
    with open(p, "rb") as fh:
        raw = tomli.load(fh)
    return _build_config(raw, experiment)


# ------------------------------------------------------------------ output


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit(config: RunConfig, name: str, header: list[str], rows: list[list], records: list[dict]):
    config.out.mkdir(parents=True, exist_ok=True)
    csv_path = config.out / f"{name}.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    jsonl_path = config.out / f"{name}.jsonl"
    with open(jsonl_path, "w") as fh:
        for rec in records:
            rec = dict(rec)
            rec["config_digest"] = config.digest
            rec["seed"] = config.seed
            rec["version"] = __version__
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return csv_path, jsonl_path


# -------------------------------------------------------------- experiments


def _run_cover(config: RunConfig):
    cases = int(config.options.get("cases", 200))
    max_nd = int(config.options.get("max_nd", 3))
    rng = np.random.default_rng(config.seed)
    header = ["case", "n", "d", "L", "ell", "alpha", "cells", "nesting", "free_band", "number", "boundary_cover", "lattice_cover", "pass"]
    rows, records = [], []
    all_pass = True
    for case in range(cases):
        nd = int(rng.integers(1, max_nd + 1))
        n = 1 if nd == 1 else int(rng.integers(1, nd + 1))
        d = max(1, nd // n)
        ell = float(rng.uniform(0.5, 3.0))
        big_l = ell * float(rng.uniform(6.0, 10.0))
        box = NRectangle.box(rng.uniform(-5, 5, size=(n, d)), big_l)
        cover = suitable_cover(box, ell)
        laws = verify_cover_laws(cover, probe_points=16, rng=rng)
        passed = all(laws.values())
        all_pass = all_pass and passed
        rows.append([case, n, d, big_l, ell, cover.alpha, cover.cell_count, *laws.values(), passed])
        records.append({"case": case, "n": n, "d": d, "L": big_l, "ell": ell, "alpha": cover.alpha, **laws})
    _emit(config, "cover", header, rows, records)
    return 0 if all_pass else 1


def _run_classify(config: RunConfig):
    opt = config.options
    side = float(opt.get("side", 24.0))
    theta = float(opt.get("theta", 0.5))
    m = float(opt.get("m", 0.2))
    zeta = float(opt.get("zeta", 0.4))
    gaps = opt.get("gaps", [0.5, 1.0, 2.0])
    box = NRectangle.box(np.zeros((config.model.n, config.model.d)), side)
    fld = sample_disorder(region_for(box), config.model.distribution, config.seed)
    op = ops.assemble(box, fld, config.model, max_dim=config.max_dim)
    base = spectral.min_eigenvalue(op)
    header = ["energy", "resonance_dist", "suitable", "suitable_margin", "ses", "regular", "implications_hold"]
    rows, records = [], []
    all_ok = True
    for gap in gaps:
        e = base - float(gap)
        sv = cls.classify_suitable(op, e, theta)
        zv = cls.classify_ses(op, e, zeta)
        rv = cls.classify_regular(op, e, m)
        good = cls.goodbox_implications(op, e, theta, m, zeta)
        all_ok = all_ok and good.all_hold
        rows.append([e, spectral.resonance_distance(op, e), sv.outcome, sv.margin, zv.outcome, rv.outcome, good.all_hold])
        records.append(
            {
                "energy": e,
                "suitable": sv.outcome,
                "ses": zv.outcome,
                "regular": rv.outcome,
                "margins": [sv.margin, zv.margin, rv.margin],
                "witnesses": [sv.witness, zv.witness, rv.witness],
                "implications_hold": good.all_hold,
            }
        )
    audit = cls.goodbox_audit()
    all_ok = all_ok and not audit
    _emit(config, "classify", header, rows, records)
    return 0 if all_ok else 1


def _run_wegner(config: RunConfig):
    opt = config.options
    side = float(opt.get("side", 20.0))
    lo = float(opt.get("interval_low", 0.5))
    width = float(opt.get("interval_width", 0.1))
    face = int(opt.get("face", 0))
    e_plus = float(opt.get("e_plus", 1.0))
    batches = int(opt.get("batches", 20))
    m_d = float(opt.get("m_d", 1.0))
    variants = [
        ("base", side, (lo, lo + width)),
        ("double_interval", side, (lo, lo + 2 * width)),
        ("double_side", 2 * side, (lo, lo + width)),
    ]
    header = ["variant", "L", "I_lo", "I_hi", "trials", "face_mean", "face_lo", "face_hi", "full_mean", "full_lo", "full_hi", "cis_overlap"]
    rows, records = [], []
    ok = True
    reports = {}
    for name, s, interval in variants:
        rect = NRectangle.box(np.zeros((config.model.n, config.model.d)), s)
        rep = msa.wegner_trace_estimate(
            rect, interval, face, config.model, e_plus, config.trials, config.seed,
            batches=batches, m_d=m_d, max_dim=config.max_dim,
        )
        reports[name] = rep
        ok = ok and rep.cis_overlap
        rows.append([
            name, s, interval[0], interval[1], config.trials,
            rep.face_mean, rep.face_ci[0], rep.face_ci[1],
            rep.full_mean, rep.full_ci[0], rep.full_ci[1], rep.cis_overlap,
        ])
        records.append({
            "variant": name, "L": s, "interval": list(interval),
            "face_mean": rep.face_mean, "full_mean": rep.full_mean,
            "face_ci": list(rep.face_ci), "full_ci": list(rep.full_ci),
            "gamma_bound": rep.gamma_bound,
        })
    base = reports["base"].full_mean
    records.append({
        "interval_doubling_ratio": reports["double_interval"].full_mean / base if base else math.nan,
        "side_doubling_ratio": reports["double_side"].full_mean / base if base else math.nan,
    })
    _emit(config, "wegner", header, rows, records)
    return 0 if ok else 1


def _run_two_volume(config: RunConfig):
    opt = config.options
    side = float(opt.get("side", 6.0))
    gap_axis = float(opt.get("offset", 30.0))
    epsilons = [float(e) for e in opt.get("epsilons", [0.0, 0.05, 0.2])]
    e_plus = float(opt.get("e_plus", 1.0))
    n, d = config.model.n, config.model.d
    c1 = np.zeros((n, d))
    c2 = np.zeros((n, d))
    c2[-1, 0] = gap_axis
    r1 = NRectangle.box(c1, side)
    r2 = NRectangle.box(c2, side)
    header = ["epsilon", "trials", "estimate", "ci_low", "ci_high", "reference", "ratio"]
    rows, records = [], []
    successes = []
    for eps in sorted(epsilons):
        rep = msa.two_volume_spacing_estimate(
            r1, r2, e_plus, eps, config.model, config.trials, config.seed, max_dim=config.max_dim
        )
        successes.append(rep.estimate.successes)
        rows.append([eps, config.trials, rep.estimate.estimate, rep.estimate.ci_low, rep.estimate.ci_high, rep.reference, rep.ratio])
        records.append({"epsilon": eps, "estimate": rep.estimate.estimate, "ci": [rep.estimate.ci_low, rep.estimate.ci_high], "ratio": rep.ratio})
    monotone = all(b >= a for a, b in zip(successes, successes[1:]))
    _emit(config, "two_volume", header, rows, records)
    return 0 if monotone else 1


def _run_initial_step(config: RunConfig):
    opt = config.options
    side = float(opt.get("side", 40.0))
    p0 = float(opt.get("p0", 0.1))
    eps = float(opt.get("eps", 1.0))
    theta = float(opt.get("theta", 0.25))
    rep = msa.verify_initial_step(
        config.model.n, side, p0, eps, config.model, theta, config.trials, config.seed,
        max_dim=config.max_dim,
    )
    header = ["L", "p0", "theta", "E_L", "trials", "estimate", "ci_low", "ci_high", "passed"]
    rows = [[side, p0, theta, rep.threshold_energy, config.trials, rep.estimate.estimate, rep.estimate.ci_low, rep.estimate.ci_high, rep.passed]]
    records = [{
        "L": side, "p0": p0, "theta": theta, "threshold_energy": rep.threshold_energy,
        "estimate": rep.estimate.estimate, "ci": [rep.estimate.ci_low, rep.estimate.ci_high],
        "passed": rep.passed,
    }]
    _emit(config, "initial_step", header, rows, records)
    return 0 if rep.passed else 1


def _run_lemma_check(config: RunConfig):
    opt = config.options
    kind = opt.get("kind", "resolvent-inequality")
    instances = int(opt.get("instances", 5))
    overrides = {
        k: opt[k]
        for k in (
            "ell", "energy_mode", "energy_value", "scale_ratio", "gamma", "theta", "s",
            "beta", "m0", "kappa", "zeta0", "zeta_prime", "j_max", "m_star", "e_top",
            "mode", "pi_offset", "outer_ratio",
        )
        if k in opt
    }
    overrides.setdefault("ell", 8.0)
    header = ["instance", "kind", "skipped", "reason", "hypothesis_ok", "conclusion_ok", "violated"]
    rows, records = [], []
    violations = 0
    for i in range(instances):
        inst = msa.LemmaInstance(model=config.model, seed=msa.derive_seed(config.seed, 10, i), max_dim=config.max_dim, **overrides)
        rep = msa.verify_deterministic_lemma(kind, inst)
        violations += int(rep.implication_violated)
        rows.append([i, kind, rep.skipped, rep.reason or "", rep.hypothesis_ok, rep.conclusion_ok, rep.implication_violated])
        records.append({
            "instance": i, "kind": kind, "skipped": rep.skipped, "reason": rep.reason,
            "hypothesis_ok": rep.hypothesis_ok, "conclusion_ok": rep.conclusion_ok,
            "violated": rep.implication_violated, "details": {k: str(v) for k, v in rep.details.items()},
        })
    _emit(config, "lemma_check", header, rows, records)
    return 0 if violations == 0 else 1


def _run_msa_stage(config: RunConfig):
    opt = config.options
    stage = str(opt.get("stage", "1"))
    energy = float(opt.get("energy", 0.01))
    theta = float(opt.get("theta", 0.5))
    p = float(opt.get("p", 1.0))
    m0 = opt.get("m0")
    schedule = msa.scale_schedule(
        config.schedule_kind, config.l0, config.steps, config.factor, n_particles=config.model.n
    )
    if schedule.illustrative and not config.illustrative:
        raise ConfigError(
            ["schedule constants are below the analysis regime: pass --illustrative to acknowledge"]
        )
    rep = msa.run_msa_stage(
        stage, config.model, config.ledger, schedule, energy, config.trials, config.seed,
        theta=theta, m0=float(m0) if m0 is not None else None, p=p,
        interval_halfwidth=opt.get("interval_halfwidth"),
        illustrative=config.illustrative, workers=config.workers, max_dim=config.max_dim,
    )
    header = ["scale", "event", "trials", "estimate", "ci_low", "ci_high", "target_bound", "illustrative"]
    rows = [[r.scale, r.event, r.trials, r.estimate, r.ci_low, r.ci_high, r.target_bound, r.illustrative] for r in rep.rows]
    records = [dataclasses.asdict(r) for r in rep.rows]
    records.append({"stage": stage, "monotone_ok": rep.monotone_ok, "bounds_ok": rep.bounds_ok})
    _emit(config, f"msa_stage_{stage.replace('-', '_')}", header, rows, records)
    if config.illustrative:
        return 0 if rep.monotone_ok else 1
    return 0 if rep.bounds_ok else 1


def _run_dump_matrix(config: RunConfig):
    opt = config.options
    side = float(opt.get("side", 8.0))
    box = NRectangle.box(np.zeros((config.model.n, config.model.d)), side)
    fld = sample_disorder(region_for(box), config.model.distribution, config.seed)
    op = ops.assemble(box, fld, config.model, max_dim=config.max_dim)
    config.out.mkdir(parents=True, exist_ok=True)
    path = config.out / "matrix.txt"
    ops.dump_matrix(op, path)
    header = ["dim", "nnz", "provenance", "path"]
    rows = [[op.dim, op.matrix.nnz, op.provenance, str(path)]]
    _emit(config, "dump_matrix", header, rows, [{"dim": op.dim, "nnz": int(op.matrix.nnz), "provenance": op.provenance}])
    return 0


_RUNNERS = {
    "cover": _run_cover,
    "classify": _run_classify,
    "wegner": _run_wegner,
    "two-volume": _run_two_volume,
    "initial-step": _run_initial_step,
    "lemma-check": _run_lemma_check,
    "msa": _run_msa_stage,
    "dump-matrix": _run_dump_matrix,
}


def run(config: RunConfig) -> int:
    """Dispatch a validated config; 0 exit iff asserted invariants pass."""
    return _RUNNERS[config.experiment](config)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="msalab",
        description="finite-volume spectra, box classification, and multiscale-analysis statistics",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--trials", type=int, help="override the trial count")
        sp.add_argument("--out", help="override the output directory")
        sp.add_argument("--workers", type=int, help="override the worker count")
        sp.add_argument("--illustrative", action="store_true", help="acknowledge reduced-constant desk scales")
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config, experiment=args.experiment)
        if args.seed is not None:
            config.seed = args.seed
        if args.trials is not None:
            config.trials = args.trials
            if config.experiment in STATISTICAL and config.trials < 1:
                raise ConfigError(["experiment.trials must be >= 1 for statistical experiments"])
        if args.out is not None and not os.environ.get(OUT_ENV_VAR):
            config.out = Path(args.out)
        if args.workers is not None:
            config.workers = args.workers
        if args.illustrative:
            config.illustrative = True
        return run(config)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
