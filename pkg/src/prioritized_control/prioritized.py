"""Prioritized control laws assembled from per-primitive offset policies.

Primitives are trained from lowest to highest priority.  Each stage
regresses the offset between its demonstrated control and what the null
space control plus all lower-priority policies already command, so a
higher-priority policy only learns the correction it needs on top of them.
At run time the controls add up: ``u = u0 + sum_n phi_n^T theta_n``.

During training the lower-priority policies are evaluated on the current
sample's joint state with their own task-acceleration slot at rest (zero),
because every dataset is recorded with only its own primitive active.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .policy_learning import (
    CostModel, Dataset, DegenerateData, KernelPolicy, LinearPolicy, DEFAULT_LAMBDA,
    exp_weights, features, fit_kernel, fit_weighted, policy_from_dict,
)

MAX_PRIMITIVES = 6


@dataclass(frozen=True)
class DominanceOrder:
    """Priority permutation, lowest priority first."""

    ordering: tuple[int, ...]

    def __post_init__(self):
        o = tuple(int(i) for i in self.ordering)
        if sorted(o) != list(range(len(o))):
            raise ValueError(f"not a permutation: {o}")
        object.__setattr__(self, "ordering", o)

    def __len__(self):
        return len(self.ordering)

    def highest_first(self) -> tuple[int, ...]:
        return tuple(reversed(self.ordering))

    def label(self, names) -> str:
        return "⪰".join(names[i] for i in self.highest_first())

    @classmethod
    def from_names(cls, highest_first, names) -> "DominanceOrder":
        """Parse e.g. ``["hit", "move", "orient"]`` meaning hit dominates move
        dominates orient."""
        highest_first = list(highest_first)
        missing = set(names) - set(highest_first)
        unknown = set(highest_first) - set(names)
        if missing or unknown or len(highest_first) != len(names):
            raise ValueError(f"order {highest_first} must list each of {list(names)} once")
        return cls(tuple(names.index(n) for n in reversed(highest_first)))


def enumerate_orders(n_prim: int) -> list[DominanceOrder]:
    """All ``n_prim!`` dominance structures in lexicographic order."""
    if n_prim < 1:
        raise ValueError("need at least one primitive")
    if n_prim > MAX_PRIMITIVES:
        raise ValueError(
            f"refusing to enumerate {n_prim}! = {math.factorial(n_prim)} dominance "
            f"structures; exhaustive search grows factorially (limit {MAX_PRIMITIVES})")
    return [DominanceOrder(p) for p in itertools.permutations(range(n_prim))]


def rest_features(task_dim: int, qd, q) -> np.ndarray:
    """Feature rows of an inactive primitive: zero task acceleration."""
    qd = np.atleast_2d(qd)
    return np.column_stack([np.zeros((qd.shape[0], task_dim)), qd, np.atleast_2d(q)])


@dataclass
class StageRecord:
    """Intermediates of one training stage, kept for inspection."""

    primitive: int
    offsets: np.ndarray
    weights: np.ndarray
    alpha: float


@dataclass
class PrioritizedController:
    """Stack of offset policies in training order (lowest priority first)."""

    order: DominanceOrder
    policies: list            # indexed by training position
    cost: CostModel
    primitive_dims: list[int]  # indexed by primitive id
    names: list[str] = field(default_factory=list)
    stages: list[StageRecord] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.policies) != len(self.primitive_dims) or len(self.order) != len(self.policies):
            raise ValueError("need exactly one policy per primitive")
        n = self.cost.n
        for pos, prim in enumerate(self.order.ordering):
            p = self.policies[pos]
            width = p.theta.shape[0] if isinstance(p, LinearPolicy) else p.phi.shape[1]
            if width != self.primitive_dims[prim] + 2 * n:
                raise ValueError(f"policy for primitive {prim} has feature width {width}")
        if not self.names:
            self.names = [f"p{i}" for i in range(len(self.primitive_dims))]
        self._thetas = None
        if all(isinstance(p, LinearPolicy) for p in self.policies):
            self._thetas = [(self.order.ordering[pos], p.theta) for pos, p in enumerate(self.policies)]

    @property
    def label(self) -> str:
        return self.order.label(self.names)

    def offset(self, prim: int, q, qd, xdd) -> np.ndarray:
        pos = self.order.ordering.index(prim)
        return self.policies[pos].predict(features(xdd, qd, q))

    def control(self, q, qd, accels) -> np.ndarray:
        return predict_control(self, q, qd, accels)

    def to_dict(self) -> dict:
        return {
            "kind": "prioritized",
            "order": [self.names[i] for i in self.order.highest_first()],
            "names": list(self.names),
            "policies": [p.to_dict() for p in self.policies],
            "cost_model": self.cost.to_dict(),
            "primitive_dims": list(self.primitive_dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrioritizedController":
        names = d["names"]
        return cls(DominanceOrder.from_names(d["order"], names),
                   [policy_from_dict(p) for p in d["policies"]],
                   CostModel.from_dict(d["cost_model"]), list(d["primitive_dims"]), names)


def predict_control(ctrl: PrioritizedController, q, qd, accels) -> np.ndarray:
    """Combined control ``u0 + sum_n phi_n^T theta_n``.

    ``accels`` holds the current desired task acceleration of every
    primitive, indexed by primitive id.
    """
    if len(accels) != len(ctrl.primitive_dims) or any(a is None for a in accels):
        raise ValueError("a desired acceleration is required for every primitive")
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    u = ctrl.cost.null_control(q, qd)
    tail = np.concatenate([qd, q])
    if ctrl._thetas is not None:
        for prim, theta in ctrl._thetas:
            d = ctrl.primitive_dims[prim]
            u = u + np.asarray(accels[prim], dtype=float).reshape(d) @ theta[:d] + tail @ theta[d:]
        return u
    for pos, prim in enumerate(ctrl.order.ordering):
        u = u + ctrl.policies[pos].predict(features(accels[prim], qd, q))
    return u


def train_prioritized(datasets, order: DominanceOrder, cost: CostModel,
                      lam: float = DEFAULT_LAMBDA, kernel: bool = False,
                      kernel_regularizer: float = 1e-6, names=None,
                      keep_stages: bool = False) -> PrioritizedController:
    """Learn the offset policies of every primitive in increasing priority.

    ``datasets[i]`` holds primitive ``i``'s demonstrations.  Offsets subtract
    the null-space control and all lower-priority predictions; weights are
    the exponentiated offset costs.  ``kernel=True`` fits kernelized stages
    whose diagonal is the offset costs plus ``kernel_regularizer``.
    """
    if len(datasets) != len(order):
        raise ValueError("need one dataset per primitive")
    for i, ds in enumerate(datasets):
        if len(ds) == 0:
            raise ValueError(f"dataset for primitive {i} is empty")
    dims = [ds.task_dim for ds in datasets]
    policies, stages = [], []
    for prim in order.ordering:
        ds = datasets[prim]
        u0 = cost.null_control(ds.q, ds.qd)
        lower = np.zeros_like(ds.u)
        for pos, p in enumerate(policies):
            j = order.ordering[pos]
            lower += p.predict(rest_features(dims[j], ds.qd, ds.q))
        offsets = ds.u - lower - u0
        c = cost.costs(offsets)
        alpha = cost.resolve_alpha(c)
        w = exp_weights(c, alpha)
        stage_data = Dataset(ds.phi, offsets, ds.task_dim)
        if kernel:
            pol = fit_kernel(stage_data, w_u=c, regularizer=kernel_regularizer)
        else:
            if not np.any(w > 0):
                raise DegenerateData(f"all weights vanish for primitive {prim}")
            pol = fit_weighted(stage_data, w, lam, alpha=alpha)
        policies.append(pol)
        if keep_stages:
            stages.append(StageRecord(prim, offsets, w, alpha))
    return PrioritizedController(order, policies, cost, dims,
                                 list(names) if names else [], stages)


# -- single-model baseline ------------------------------------------------------

def pool_datasets(datasets) -> Dataset:
    """Concatenate per-primitive datasets over the joint task vector.

    Each row carries its own primitive's acceleration and zeros (rest) in
    the other primitives' slots.
    """
    dims = [ds.task_dim for ds in datasets]
    total = sum(dims)
    offsets = np.concatenate([[0], np.cumsum(dims)])
    blocks_phi, blocks_u = [], []
    for i, ds in enumerate(datasets):
        xdd = np.zeros((len(ds), total))
        xdd[:, offsets[i]:offsets[i + 1]] = ds.xdd
        blocks_phi.append(np.column_stack([xdd, ds.qd, ds.q]))
        blocks_u.append(ds.u)
    return Dataset(np.vstack(blocks_phi), np.vstack(blocks_u), total)


@dataclass
class SingleModelController:
    """One policy over the pooled data of all primitives."""

    policy: LinearPolicy
    cost: CostModel
    primitive_dims: list[int]
    names: list[str] = field(default_factory=list)

    label = "single model"

    def control(self, q, qd, accels) -> np.ndarray:
        if len(accels) != len(self.primitive_dims):
            raise ValueError("a desired acceleration is required for every primitive")
        xdd = np.concatenate([np.asarray(a, dtype=float).reshape(d)
                              for a, d in zip(accels, self.primitive_dims)])
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        return self.cost.null_control(q, qd) + features(xdd, qd, q) @ self.policy.theta

    def to_dict(self) -> dict:
        return {"kind": "single", "names": list(self.names), "policy": self.policy.to_dict(),
                "cost_model": self.cost.to_dict(), "primitive_dims": list(self.primitive_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "SingleModelController":
        return cls(LinearPolicy.from_dict(d["policy"]), CostModel.from_dict(d["cost_model"]),
                   list(d["primitive_dims"]), d.get("names", []))


def train_single_model(datasets, cost: CostModel, lam: float = DEFAULT_LAMBDA,
                       names=None) -> SingleModelController:
    """Cost-weighted regression of ``u - u0`` on the pooled data."""
    pooled = pool_datasets(datasets)
    u0 = cost.null_control(pooled.q, pooled.qd)
    offsets = pooled.u - u0
    c = cost.costs(offsets)
    alpha = cost.resolve_alpha(c)
    pol = fit_weighted(Dataset(pooled.phi, offsets, pooled.task_dim), exp_weights(c, alpha),
                       lam, alpha=alpha)
    return SingleModelController(pol, cost, [ds.task_dim for ds in datasets],
                                 list(names) if names else [])


def load_controller(path):
    d = json.loads(Path(path).read_text())
    if d.get("kind") == "single":
        return SingleModelController.from_dict(d)
    return PrioritizedController.from_dict(d)


def save_controller(ctrl, path) -> None:
    Path(path).write_text(json.dumps(ctrl.to_dict(), indent=2) + "\n")
