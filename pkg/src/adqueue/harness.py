"""Scenario runner: replicas, aggregate statistics, epsilon sweeps and CSV output.

Every CSV starts with ``#`` comment lines recording the package version, the
build (``git describe``), the seed, epsilon, the variant and the instance.
Floats are written with ``repr`` so files reload bit for bit.
"""

from __future__ import annotations

import csv
import io
import subprocess
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ctr import CtrSimulator, HourlyRates, ShortTermConfig, customize_requirements
from .instance_io import InstanceBundle, load_bundle
from .model import InstanceError, ProblemInstance, compute_B1, compute_D1, require_valid
from .offline import ConvergenceWarning, solve_offline, solve_offline_ctr
from .revenue import RevenuePolicy, simulate_revenue
from .stats import batch_means_se

MODELS = ("revenue", "ctr")


@lru_cache(maxsize=1)
def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows, meta: dict) -> Path:
    """Write ``rows`` under ``# key=value`` comment lines; errors name the path."""
    path = Path(path)
    buf = io.StringIO()
    buf.write(f"# adqueue {package_version()}\n# build={build_id()}\n")
    for k, v in meta.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path):
    """Return ``(meta, header, float array)`` from a file written by :func:`write_csv`."""
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(header)))
    return meta, header, data


@dataclass
class Scenario:
    """A model, an instance and algorithm parameters run for ``horizon`` cycles per seed.

    ``params`` keys: ``epsilon``; revenue: ``variant`` (standard, underdraft,
    estimated), ``delta``, ``pay_per_impression``; ctr: ``policy`` (mwm,
    mwm-fast, opt), ``fast_T``, ``q_max``, ``hours`` (hourly rates in the
    instance are used unless ``hours`` is 0).
    """

    instance_ref: str
    model: str
    params: dict
    horizon: int
    seeds: tuple = (0,)
    bundle: Optional[InstanceBundle] = field(default=None, repr=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"replica seeds must be distinct, got {self.seeds}")
        if not self.params.get("epsilon", 0) > 0:
            raise ValueError("params must include a positive epsilon")

    @classmethod
    def replicated(cls, instance_ref, model, params, horizon, seed=0, replicas=1, **kw):
        return cls(instance_ref, model, params, horizon, tuple(seed + r for r in range(replicas)), **kw)

    def load(self) -> InstanceBundle:
        if self.bundle is None:
            self.bundle = load_bundle(self.instance_ref)
        return self.bundle

    @property
    def variant(self) -> str:
        if self.model == "revenue":
            return self.params.get("variant", "standard")
        return self.params.get("policy", "mwm")


def revenue_policy(inst: ProblemInstance, params: dict) -> RevenuePolicy:
    eps = float(params["epsilon"])
    variant = params.get("variant", "standard")
    ppi = bool(params.get("pay_per_impression", False))
    if variant == "standard":
        return RevenuePolicy.standard(inst, eps, ppi)
    if variant == "underdraft":
        return RevenuePolicy.underdraft(inst, eps, strict=bool(params.get("strict", False)),
                                        pay_per_impression=ppi)
    if variant == "estimated":
        return RevenuePolicy.estimated(inst, eps, delta=float(params.get("delta", 0.0)),
                                       seed=int(params.get("estimate_seed", 0)), pay_per_impression=ppi)
    raise ValueError(f"unknown revenue variant {variant!r}")


@dataclass
class CtrSetup:
    instance: ProblemInstance
    simulator: CtrSimulator
    xi: Optional[float] = None


def ctr_setup(bundle: InstanceBundle, params: dict) -> CtrSetup:
    """Instance with requirements (customized when ``q_max`` is given) and a simulator."""
    inst = bundle.instance
    eps = float(params["epsilon"])
    xi = None
    q_max = params.get("q_max")
    if q_max is None and inst.requirement is None and "q_max_times_epsilon" in bundle.defaults:
        q_max = bundle.defaults["q_max_times_epsilon"] / eps
    if q_max is not None:
        custom = customize_requirements(inst, float(q_max), eps)
        inst = inst.with_requirement(custom.requirement)
        xi = custom.xi
    if inst.requirement is None:
        raise InstanceError(["requirement is required for the ctr model (or give q_max)"])
    policy = params.get("policy", "mwm")
    hourly = None
    hours = params.get("hours")
    if bundle.hourly_rates is not None and hours != 0:
        hourly = HourlyRates(bundle.hourly_rates)
        if hours is not None and int(hours) != hourly.hours:
            raise ValueError(f"instance has {hourly.hours} hourly rows, hours={hours}")
    elif hours:
        raise ValueError("hours given but the instance has no hourly_rates")
    short = ShortTermConfig(**bundle.short_term) if bundle.short_term else None
    opt_support = None
    if policy == "opt":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            opt_support = solve_offline_ctr(inst).support
    fast_T = params.get("fast_T")
    sim = CtrSimulator(inst, eps, policy, fast_T=None if fast_T is None else int(fast_T),
                       opt_support=opt_support, hourly=hourly, short_term=short)
    return CtrSetup(inst, sim, xi)


def _names(inst: ProblemInstance):
    return [inst.client_label(i) for i in range(inst.num_clients)]


def revenue_table(inst: ProblemInstance, trace):
    names = _names(inst)
    header = ["cycle"] + [f"A_{c}" for c in names] + [f"Q_{c}" for c in names] + ["revenue", "cum_avg_revenue"]
    rev = trace.revenue
    cum = np.cumsum(rev) / np.arange(1, rev.size + 1)
    data = np.column_stack([np.arange(rev.size), trace.A, trace.Q[1:], rev, cum])
    return header, data


def ctr_table(inst: ProblemInstance, trace):
    names = _names(inst)
    header = (["cycle"] + [f"S_{c}" for c in names] + [f"over_{c}" for c in names]
              + [f"under_{c}" for c in names] + [f"Q_{c}" for c in names]
              + ["J", "norm_over", "norm_under"])
    if trace.alpha.shape[1]:
        header += [f"alpha_{names[i]}" for i in np.nonzero(~trace.long_term)[0]]
    m = inst.requirement
    cols = [np.arange(trace.cycles), trace.S, trace.over, trace.under, trace.Q[1:], trace.J,
            trace.normalized_over(m), trace.normalized_under(m)]
    if trace.alpha.shape[1]:
        cols.append(trace.alpha)
    return header, np.column_stack(cols)


def _table_rows(header, data):
    ints = {j for j, h in enumerate(header) if h == "cycle" or h == "J" or h.startswith("S_")}
    for r in data:
        yield [int(v) if j in ints else float(v) for j, v in enumerate(r)]


def run_replica(sc: Scenario, seed: int):
    """Simulate one seed; returns ``(header, data)``."""
    bundle = sc.load()
    if sc.model == "revenue":
        inst = bundle.instance
        require_valid(inst, need="budget")
        trace = simulate_revenue(inst, revenue_policy(inst, sc.params), sc.horizon, seed)
        return revenue_table(inst, trace)
    setup = ctr_setup(bundle, sc.params)
    trace = setup.simulator.run(sc.horizon, seed)
    return ctr_table(setup.instance, trace)


def _meta(sc: Scenario, seed) -> dict:
    return {"seed": seed, "epsilon": fmt(float(sc.params["epsilon"])), "variant": sc.variant,
            "model": sc.model, "instance": sc.instance_ref, "horizon": sc.horizon}


@dataclass
class ScenarioResult:
    replica_paths: list
    aggregate_path: Path
    header: list
    mean: np.ndarray
    std: np.ndarray


def _replica_job(args):
    sc, seed = args
    return run_replica(sc, seed)


def run_scenario(sc: Scenario, out_dir, workers: int = 1, stem: Optional[str] = None) -> ScenarioResult:
    """Write one CSV per replica and an aggregate CSV of per-cycle mean and std (ddof=0)."""
    out_dir = Path(out_dir)
    stem = stem or f"{sc.model}_{sc.variant}"
    sc.load()
    if workers > 1 and len(sc.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            tables = list(pool.map(_replica_job, [(sc, s) for s in sc.seeds]))
    else:
        tables = [run_replica(sc, s) for s in sc.seeds]
    paths = []
    for seed, (header, data) in zip(sc.seeds, tables):
        paths.append(write_csv(out_dir / f"{stem}_seed{seed}.csv", header, _table_rows(header, data),
                               _meta(sc, seed)))
    header = tables[0][0]
    stack = np.stack([t[1] for t in tables])
    mean, std = stack.mean(axis=0), stack.std(axis=0)
    agg_header = ["cycle"] + [f"{h}_{s}" for h in header[1:] for s in ("mean", "std")]
    rows = []
    for k in range(mean.shape[0]):
        row = [k]
        for j in range(1, len(header)):
            row += [float(mean[k, j]), float(std[k, j])]
        rows.append(row)
    meta = _meta(sc, ",".join(str(s) for s in sc.seeds))
    meta["replicas"] = len(sc.seeds)
    agg = write_csv(out_dir / f"{stem}_aggregate.csv", agg_header, rows, meta)
    return ScenarioResult(paths, agg, header, mean, std)


SWEEP_HEADER = ["epsilon", "avg_objective", "stderr", "offline_optimum", "gap", "theory_gap",
                "max_queue", "mean_queue"]


def sweep_epsilon(sc: Scenario, eps_list, out: Optional[str] = None, offline_iterations: int = 100_000):
    """Run the scenario at each epsilon on the same random path (first seed).

    Revenue rows report average revenue per slot against the offline optimum
    and ``B1 eps / N``; ctr rows report clicks per slot against the
    requirement-constrained optimum and ``D1 eps / N``. ``stderr`` uses
    batch means.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ValueError("eps_list must be a nonempty list of positive values")
    bundle = sc.load()
    seed = sc.seeds[0]
    rows = []
    base_inst = bundle.instance
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if sc.model == "revenue":
            require_valid(base_inst, need="budget")
            opt = solve_offline(base_inst, iterations=offline_iterations).objective
            B1 = compute_B1(base_inst)
    for eps in eps_list:
        params = dict(sc.params, epsilon=eps)
        N = base_inst.cycle_slots
        if sc.model == "revenue":
            tr = simulate_revenue(base_inst, revenue_policy(base_inst, params), sc.horizon, seed)
            per_slot = tr.revenue / N
            Qtot = tr.Q[1:].sum(axis=1)
            theory = B1 * eps / N
            value = per_slot.mean()
        else:
            setup = ctr_setup(bundle, params)
            inst = setup.instance
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                opt = solve_offline_ctr(inst).objective
            tr = setup.simulator.run(sc.horizon, seed)
            per_slot = tr.J / N
            Qtot = tr.total_queue()
            theory = compute_D1(N, inst.num_slots, inst.requirement) * eps / N
            value = per_slot.mean()
        rows.append([eps, float(value), batch_means_se(per_slot), float(opt), float(opt - value),
                     float(theory), float(Qtot.max()), float(Qtot.mean())])
    if out is not None:
        meta = _meta(sc, seed)
        meta["epsilon"] = ",".join(fmt(e) for e in eps_list)
        write_csv(out, SWEEP_HEADER, rows, meta)
    return SWEEP_HEADER, np.array(rows)

