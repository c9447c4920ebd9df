"""Experiment driver: data collection, dominance study, reports."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import primitives as prim
from .bounce_sim import (
    FAILURE_REASONS, OracleController, StrategyConfig, TIMEOUT, run_trial,
)
from .policy_learning import CostModel, Dataset, DEFAULT_LAMBDA, features
from .prioritized import (
    DominanceOrder, enumerate_orders, train_prioritized, train_single_model,
)
from .primitives import advance
from .robot import KinematicArm, TASK_MAPS, oracle_control, reference_arm, step_dynamics

log = logging.getLogger(__name__)

PRIMITIVE_NAMES = ("move", "hit", "orient")
REST_CONVENTION = "inactive primitives contribute zero task acceleration (rest output)"
COLLECTION_DT = 1e-3


# -- primitives ----------------------------------------------------------------------

def _min_jerk(t, T, x0, x1):
    s = np.clip(t / T, 0, 1)[:, None]
    d = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)
    x = x0 + d * (10 * s**3 - 15 * s**4 + 6 * s**5)
    xd = d * (30 * s**2 - 60 * s**3 + 30 * s**4) / T
    xdd = d * (60 * s - 180 * s**2 + 120 * s**3) / T**2
    return x, xd, xdd


def _hit_demo(T=0.5, v_end=0.6, n=501):
    """Swing that starts at rest on the plane, dips and comes back up through it.

    Quintic with x(0)=xd(0)=xdd(0)=0, x(T)=0, xd(T)=v_end, xdd(T)=0; the
    dip falls out of the boundary conditions.
    """
    t = np.linspace(0, T, n)
    M = np.array([[1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], [0, 0, 2, 0, 0, 0],
                  [1, T, T**2, T**3, T**4, T**5], [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
                  [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3]])
    c = np.linalg.solve(M, [0, 0, 0, 0, v_end, 0])[::-1]
    x = np.polyval(c, t)
    xd = np.polyval(np.polyder(c), t)
    xdd = np.polyval(np.polyder(c, 2), t)
    return prim.TaskTrajectory(t, x[:, None], xd[:, None], xdd[:, None])


def demonstrations() -> dict:
    """Built-in demonstrations the three ball-bouncing primitives imitate."""
    t = np.linspace(0, 0.5, 501)
    mv = _min_jerk(t, 0.5, [0.0, 0.0], [0.08, 0.04])
    ori = _min_jerk(t, 0.5, [0.0], [0.2])
    return {
        "move": (prim.TaskTrajectory(t, *mv), prim.STANDARD),
        "hit": (_hit_demo(), prim.VELOCITY_GOAL),
        "orient": (prim.TaskTrajectory(t, *ori), prim.STANDARD),
    }


def default_primitives(n_basis: int = 15) -> dict:
    out = {name: prim.imitate(demo, n_basis, mode)
           for name, (demo, mode) in demonstrations().items()}
    out["hit"].fixed_amplitude = True
    return out


# -- configuration ----------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    arm_file: str | None = None
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    primitives: tuple[str, ...] = PRIMITIVE_NAMES
    n_basis: int = 15
    collection_duration: float = 30.0
    collection_seed: int = 0
    n_trials: int = 20
    seed: int = 1000
    max_time: float = 20.0
    ridge_lambda: float = DEFAULT_LAMBDA
    kp: float = 10.0
    alpha: float | None = None
    kernel: bool = False
    kernel_subsample: int = 30
    collection_mode: str = "hold"
    workers: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if not self.collection_duration > 0:
            raise ValueError("collection duration must be positive")
        if self.collection_mode not in COLLECTION_MODES:
            raise ValueError(f"unknown collection mode {self.collection_mode!r}")
        if isinstance(self.strategy, dict):
            self.strategy = StrategyConfig.from_dict(self.strategy)
        self.primitives = tuple(self.primitives)
        unknown = set(self.primitives) - set(PRIMITIVE_NAMES)
        if unknown:
            raise ValueError(f"unknown primitives: {sorted(unknown)}")

    def arm(self) -> KinematicArm:
        return KinematicArm.load(self.arm_file) if self.arm_file else reference_arm()

    def cost(self, arm: KinematicArm) -> CostModel:
        return CostModel.default(arm.n, arm.rest_posture, self.kp, self.alpha)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.to_dict()
        d["primitives"] = list(self.primitives)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- data collection ---------------------------------------------------------------------

COLLECTION_MODES = ("alone", "hold", "fixed-goal")


def _episode_setup(name: str, arm: KinematicArm, cfg: StrategyConfig, rng, perturb_all: bool):
    """Random start state, goal and duration for one demonstration of ``name``.

    ``perturb_all`` also scatters the coordinates of the other primitives.
    """
    rest = arm.task_coordinates(arm.rest_posture)
    start = rest.copy()
    xd0 = np.zeros(4)
    T = rng.uniform(0.45, 0.75)
    r = cfg.workspace_radius
    spread = {"move": lambda: start.__setitem__(slice(0, 2), rest[:2] + rng.uniform(-r / 2, r / 2, 2)),
              "hit": lambda: start.__setitem__(2, rest[2] + rng.uniform(-0.03, 0.03)),
              "orient": lambda: start.__setitem__(3, rest[3] + rng.uniform(-0.3, 0.3))}
    for k in PRIMITIVE_NAMES:
        if k == name or perturb_all:
            spread[k]()
    if name == "move":
        goal = rest[:2] + rng.uniform(-r / 2, r / 2, 2)
        gvel = None
    elif name == "hit":
        xd0[2] = rng.uniform(0.0, 0.8)
        goal = rest[2:3]
        gvel = np.array([rng.uniform(0.1, 0.8)])
    elif name == "orient":
        goal = rest[3:4] + rng.uniform(-0.3, 0.3)
        gvel = None
    else:
        raise ValueError(f"unknown primitive {name!r}")
    q = arm.inverse_kinematics(start, q_init=arm.rest_posture)
    J = arm.full_jacobian(q)
    qd = np.linalg.solve(J, xd0) if J.shape[0] == J.shape[1] else np.linalg.pinv(J) @ xd0
    return q, qd, goal, gvel, T


def collect_primitive_data(name: str, duration: float, seed: int, arm: KinematicArm | None = None,
                           cost: CostModel | None = None, strategy: StrategyConfig | None = None,
                           primitives: dict | None = None, mode: str = "hold",
                           dt: float = COLLECTION_DT) -> Dataset:
    """Demonstrations of one primitive, logged at ``1/dt``.

    The analytic oracle realizes the task accelerations.  Only the active
    primitive's acceleration enters the features.  ``mode`` says what the
    other primitives do meanwhile:

    ``alone``       their tasks are left free (null space only);
    ``hold``        their task accelerations are held at zero;
    ``fixed-goal``  they keep running with fixed goals from scattered
                    starts, so the robot also performs them.

    Segments that leave the joint limits are discarded.
    """
    if not duration > 0:
        raise ValueError("collection duration must be positive")
    if mode not in COLLECTION_MODES:
        raise ValueError(f"unknown collection mode {mode!r}")
    arm = arm or reference_arm()
    cost = cost or CostModel.default(arm.n, arm.rest_posture)
    strategy = strategy or StrategyConfig()
    prims = {k: p.copy() for k, p in (primitives or default_primitives()).items()}
    rest = arm.task_coordinates(arm.rest_posture)
    active = prims[name]
    task = TASK_MAPS[name]
    others = [k for k in PRIMITIVE_NAMES if k != name and k in prims]
    rng = np.random.default_rng([seed, PRIMITIVE_NAMES.index(name)])
    n_rows = int(round(duration / dt))
    phis, us = [], []
    discarded = 0
    while len(phis) < n_rows:
        q, qd, goal, gvel, T = _episode_setup(name, arm, strategy, rng, mode == "fixed-goal")
        x = arm.task_coordinates(q)
        xd = arm.full_jacobian(q) @ qd
        rows = list(task.rows)
        active.start(x[rows], xd[rows], goal, T, gvel)
        if mode == "fixed-goal":
            for k in others:
                r = list(TASK_MAPS[k].rows)
                prims[k].start(x[r], xd[r], rest[r], T, np.zeros(len(r)))
        n_steps = int(round(T / dt))
        plans = {k: advance(prims[k], 1.0, n_steps, dt)
                 for k in ([name] + others if mode == "fixed-goal" else [name])}
        seg_phi, seg_u = [], []
        ok = True
        for i in range(n_steps):
            xdd = plans[name][i]
            if mode == "alone":
                tasks = []
            elif mode == "hold":
                tasks = [(TASK_MAPS[k], np.zeros(TASK_MAPS[k].dim)) for k in others]
            else:
                tasks = [(TASK_MAPS[k], plans[k][i]) for k in others]
            u = oracle_control(arm, q, qd, tasks + [(task, xdd)], cost).u
            seg_phi.append(features(xdd, qd, q))
            seg_u.append(u)
            q, qd, fine, inside = step_dynamics(arm, q, qd, u, dt)
            if not (fine and inside):
                ok = False
                break
        if not ok:
            discarded += 1
            log.info("discarded a %s segment that left the workspace", name)
            continue
        phis.extend(seg_phi)
        us.extend(seg_u)
    meta = {"primitive": name, "seed": seed, "duration": duration, "dt": dt,
            "rest_convention": REST_CONVENTION, "collection_mode": mode,
            "discarded_segments": discarded}
    return Dataset(np.array(phis[:n_rows]), np.array(us[:n_rows]), task.dim, meta)


def collect_all(cfg: ExperimentConfig, arm=None, cost=None, prims=None) -> list[Dataset]:
    arm = arm or cfg.arm()
    cost = cost or cfg.cost(arm)
    prims = prims or default_primitives(cfg.n_basis)
    return [collect_primitive_data(n, cfg.collection_duration, cfg.collection_seed, arm, cost,
                                   cfg.strategy, prims, cfg.collection_mode)
            for n in cfg.primitives]


# -- dominance study -------------------------------------------------------------------

SINGLE_MODEL = "single model"
TRIALS_NOTE = "trial count per ordering is an assumption; the reference table does not state it"


@dataclass
class DominanceResult:
    """Hit statistics of one controller over the study's seeded trials."""

    label: str
    hits: list[int]
    failures: dict[str, int]
    failed: bool = False
    error: str = ""
    best: bool = False

    @property
    def mean(self) -> float:
        return statistics.fmean(self.hits) if self.hits else float("nan")

    @property
    def std(self) -> float:
        """Sample standard deviation; zero for a single trial."""
        return statistics.stdev(self.hits) if len(self.hits) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"label": self.label, "hits": list(self.hits), "failures": dict(self.failures),
                "failed": self.failed, "error": self.error, "best": self.best,
                "mean": self.mean if self.hits else None, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "DominanceResult":
        return cls(d["label"], [int(h) for h in d["hits"]], dict(d["failures"]),
                   bool(d.get("failed", False)), d.get("error", ""), bool(d.get("best", False)))


def trial_seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed + k for k in range(cfg.n_trials)]


def evaluate_controller(ctrl, cfg: ExperimentConfig, arm=None, prims=None) -> list:
    arm = arm or cfg.arm()
    prims = prims or {n: p for n, p in default_primitives(cfg.n_basis).items() if n in cfg.primitives}
    return [run_trial(arm, ctrl, prims, cfg.strategy, s, cfg.max_time) for s in trial_seeds(cfg)]


def _summarize(label: str, trials) -> DominanceResult:
    hist = {r: 0 for r in FAILURE_REASONS}
    for t in trials:
        hist[t.failure_reason] += 1
    return DominanceResult(label, [t.n_hits for t in trials], hist)


def train_controllers(datasets, cfg: ExperimentConfig, cost: CostModel):
    """Every dominance ordering plus the pooled single model.

    Yields ``(label, controller or exception)``; a failed fit does not stop
    the others.
    """
    names = list(cfg.primitives)
    for order in enumerate_orders(len(names)):
        try:
            ctrl = train_prioritized(datasets, order, cost, cfg.ridge_lambda,
                                     kernel=cfg.kernel, names=names)
        except (ValueError, np.linalg.LinAlgError) as exc:
            ctrl = exc
        yield order.label(names), ctrl
    try:
        ctrl = train_single_model(datasets, cost, cfg.ridge_lambda, names=names)
    except (ValueError, np.linalg.LinAlgError) as exc:
        ctrl = exc
    yield SINGLE_MODEL, ctrl


def _subsample(datasets, every: int):
    return [Dataset(ds.phi[::every], ds.u[::every], ds.task_dim, ds.meta) for ds in datasets]


def _evaluate_job(args):
    ctrl, cfg_dict, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    arm = cfg.arm()
    prims = {n: p for n, p in default_primitives(cfg.n_basis).items() if n in cfg.primitives}
    return run_trial(arm, ctrl, prims, cfg.strategy, seed, cfg.max_time)


def run_dominance_study(cfg: ExperimentConfig, datasets=None) -> list[DominanceResult]:
    """Train and evaluate all orderings and the single model.

    Results are sorted by mean hits (descending, ties by label) and the best
    non-failed row is flagged.  With ``cfg.workers > 1`` trials fan out to a
    process pool; results are reduced by ordering then seed, so the output
    does not depend on scheduling.
    """
    arm = cfg.arm()
    cost = cfg.cost(arm)
    prims = {n: p for n, p in default_primitives(cfg.n_basis).items() if n in cfg.primitives}
    if datasets is None:
        datasets = collect_all(cfg, arm, cost, prims)
    if cfg.kernel and cfg.kernel_subsample > 1:
        datasets = _subsample(datasets, cfg.kernel_subsample)
    trained = list(train_controllers(datasets, cfg, cost))
    seeds = trial_seeds(cfg)
    jobs = [(i, s) for i, (_, c) in enumerate(trained) if not isinstance(c, Exception)
            for s in seeds]
    if cfg.workers > 1:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(cfg.workers) as pool:
            outs = list(pool.map(_evaluate_job,
                                 [(trained[i][1], cfg_dict, s) for i, s in jobs]))
    else:
        outs = [run_trial(arm, trained[i][1], prims, cfg.strategy, s, cfg.max_time)
                for i, s in jobs]
    by_ctrl = {}
    for (i, _), out in zip(jobs, outs):
        by_ctrl.setdefault(i, []).append(out)
    results = []
    for i, (label, ctrl) in enumerate(trained):
        if isinstance(ctrl, Exception):
            log.warning("training %s failed: %s", label, ctrl)
            results.append(DominanceResult(label, [], {r: 0 for r in FAILURE_REASONS},
                                           failed=True, error=str(ctrl)))
        else:
            results.append(_summarize(label, by_ctrl[i]))
    return rank_results(results)


def rank_results(results) -> list[DominanceResult]:
    ok = sorted((r for r in results if not r.failed), key=lambda r: (-r.mean, r.label))
    bad = sorted((r for r in results if r.failed), key=lambda r: r.label)
    for r in ok + bad:
        r.best = False
    if ok:
        ok[0].best = True
    return ok + bad


def best_ordering(results) -> DominanceResult | None:
    """Best-scoring prioritized ordering (the single model excluded)."""
    rows = [r for r in results if not r.failed and r.label != SINGLE_MODEL]
    return min(rows, key=lambda r: (-r.mean, r.label)) if rows else None


def write_study(results, cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "metadata": {"n_trials": cfg.n_trials, "trial_seeds": trial_seeds(cfg),
                     "note": TRIALS_NOTE, "rest_convention": REST_CONVENTION,
                     "config": cfg.to_dict()},
        "results": [r.to_dict() for r in results],
    }
    path = out / "results.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for fmt, name in (("table", "report.txt"), ("csv", "report.csv"), ("plot-data", "hits.json")):
        (out / name).write_text(report(results, fmt), encoding="utf-8")
    return path


def load_study(in_dir) -> list[DominanceResult]:
    path = Path(in_dir)
    if path.is_dir():
        path = path / "results.json"
    doc = json.loads(path.read_text(encoding="utf-8"))
    return [DominanceResult.from_dict(d) for d in doc["results"]]


# -- reports ----------------------------------------------------------------------------

REPORT_FORMATS = ("table", "csv", "plot-data")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def report(results, fmt: str = "table") -> str:
    """Render study results; output depends only on ``results``."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; choose from {REPORT_FORMATS}")
    results = list(results)
    if fmt == "plot-data":
        doc = {"orderings": [{"label": r.label, "hits": list(r.hits), "failed": r.failed}
                             for r in results]}
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ordering", "mean", "std", "n_trials", "best", "failed"]
                   + list(FAILURE_REASONS))
        for r in results:
            w.writerow([r.label, "" if r.failed else repr(r.mean), repr(r.std), len(r.hits),
                        int(r.best), int(r.failed)]
                       + [r.failures.get(k, 0) for k in FAILURE_REASONS])
        return buf.getvalue()
    rows = [("Dominance Structure", "Hits (mean±std)", "")]
    for r in results:
        stat = "failed" if r.failed else f"{_fmt(r.mean)}±{_fmt(r.std)}"
        rows.append((r.label, stat, "best" if r.best else ""))
    w0 = max(len(r[0]) for r in rows)
    w1 = max(len(r[1]) for r in rows)
    lines = [f"{a:<{w0}}  {b:<{w1}}  {c}".rstrip() for a, b, c in rows]
    lines.insert(1, "-" * (w0 + w1 + 2))
    return "\n".join(lines) + "\n"
