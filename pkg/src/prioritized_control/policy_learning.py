"""Single-primitive operational-space control laws learned by regression.

Features are ``phi = [xdd_i, qd, q]`` and the control is the joint
acceleration ``u = phi^T theta``.  Plain ridge regression averages
inconsistent demonstrations; cost-weighted regression resolves redundancy
toward the null-space control ``u0 = -K_D qd - K_P (q - q0)`` by weighting
each sample with ``exp(-alpha * (u - u0)^T N (u - u0))``.  The kernelized
form solves the same problem in sample space.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

DEFAULT_LAMBDA = 1e-6
DEFAULT_KP = 10.0


class DegenerateData(ValueError):
    """Raised when a regression problem has no usable samples."""


@dataclass(frozen=True)
class Dataset:
    """Demonstrated features and controls for one primitive.

    ``phi`` rows are ``[xdd (task_dim), qd (n), q (n)]``; ``u`` rows are the
    demonstrated joint accelerations.
    """

    phi: np.ndarray
    u: np.ndarray
    task_dim: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if phi.shape[0] != u.shape[0]:
            raise ValueError("phi and u must have the same number of rows")
        n = u.shape[1]
        if phi.shape[1] != self.task_dim + 2 * n:
            raise ValueError(
                f"feature width {phi.shape[1]} != task_dim + 2n = {self.task_dim + 2 * n}")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(u))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "u", u)

    @property
    def n_joints(self) -> int:
        return self.u.shape[1]

    def __len__(self) -> int:
        return self.phi.shape[0]

    @property
    def xdd(self) -> np.ndarray:
        return self.phi[:, :self.task_dim]

    @property
    def qd(self) -> np.ndarray:
        return self.phi[:, self.task_dim:self.task_dim + self.n_joints]

    @property
    def q(self) -> np.ndarray:
        return self.phi[:, self.task_dim + self.n_joints:]

    def rows(self, idx) -> "Dataset":
        return Dataset(self.phi[idx], self.u[idx], self.task_dim, dict(self.meta))

    def save(self, path) -> None:
        """CSV ``q..,qd..,xdd..,u..`` plus a JSON sidecar next to it."""
        path = Path(path)
        n, d = self.n_joints, self.task_dim
        header = [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)] \
            + [f"xdd{i}" for i in range(d)] + [f"u{i}" for i in range(n)]
        table = np.column_stack([self.q, self.qd, self.xdd, self.u])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in table:
                w.writerow([repr(float(v)) for v in row])
        sidecar = {
            "task_dim": d, "n_joints": n, "rows": len(self),
            "units": {"q": "rad", "qd": "rad/s", "xdd": "task units/s^2", "u": "rad/s^2"},
            **self.meta,
        }
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        meta = json.loads(sidecar_path(path).read_text())
        n, d = meta["n_joints"], meta["task_dim"]
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.shape[1] != 3 * n + d:
            raise ValueError(f"{path}: expected {3 * n + d} columns, got {table.shape[1]}")
        q, qd = table[:, :n], table[:, n:2 * n]
        xdd, u = table[:, 2 * n:2 * n + d], table[:, 2 * n + d:]
        extra = {k: v for k, v in meta.items() if k not in ("task_dim", "n_joints", "rows", "units")}
        return cls(np.column_stack([xdd, qd, q]), u, d, extra)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def features(xdd, qd, q) -> np.ndarray:
    return np.concatenate([np.atleast_1d(xdd), qd, q])


@dataclass(frozen=True)
class CostModel:
    """Metric, cost-to-weight scaling and the null-space posture control.

    ``alpha=None`` picks ``ln 2 / median cost`` whenever weights are computed.
    """

    metric: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    q0: np.ndarray
    alpha: float | None = None

    def __post_init__(self):
        for name in ("metric", "kp", "kd"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        n = self.q0.shape[0]
        for name in ("metric", "kp", "kd"):
            m = getattr(self, name)
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if not np.allclose(m, m.T):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.metric).min() < -1e-10:
            raise ValueError("metric must be positive semi-definite")
        for name in ("kp", "kd"):
            if np.linalg.eigvalsh(getattr(self, name)).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @classmethod
    def default(cls, n: int, q0=None, kp: float = DEFAULT_KP, alpha=None) -> "CostModel":
        """Identity metric, critically damped posture gains."""
        q0 = np.zeros(n) if q0 is None else q0
        return cls(np.eye(n), kp * np.eye(n), 2 * math.sqrt(kp) * np.eye(n), q0, alpha)

    @property
    def n(self) -> int:
        return self.q0.shape[0]

    def null_control(self, q, qd) -> np.ndarray:
        """``u0`` for a single state or row-wise for stacked states."""
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        return -qd @ self.kd.T - (q - self.q0) @ self.kp.T

    def costs(self, u_tilde) -> np.ndarray:
        u_tilde = np.atleast_2d(u_tilde)
        return np.einsum("ti,ij,tj->t", u_tilde, self.metric, u_tilde)

    def resolve_alpha(self, costs) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        med = float(np.median(costs)) if len(costs) else 0.0
        return math.log(2.0) / med if med > 0 else 1.0

    def to_dict(self) -> dict:
        return {"metric": self.metric.tolist(), "kp": self.kp.tolist(),
                "kd": self.kd.tolist(), "q0": self.q0.tolist(), "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        return cls(np.array(d["metric"]), np.array(d["kp"]), np.array(d["kd"]),
                   np.array(d["q0"]), d.get("alpha"))


def exp_weights(costs, alpha: float) -> np.ndarray:
    return np.exp(-alpha * np.asarray(costs, dtype=float))


def compute_weights(data: Dataset, cost: CostModel, alpha: float | None = None) -> np.ndarray:
    """Per-sample weights ``exp(-alpha (u - u0)^T N (u - u0))``."""
    if data.n_joints != cost.n:
        raise ValueError("cost model and dataset disagree on the joint count")
    c = cost.costs(data.u - cost.null_control(data.q, data.qd))
    a = cost.resolve_alpha(c) if alpha is None else alpha
    return exp_weights(c, a)


# -- linear policies --------------------------------------------------------

@dataclass(frozen=True)
class LinearPolicy:
    """``u = phi^T theta``.

    ``theta`` is expressed in raw feature units; ``feature_scaling`` records
    the per-column RMS used to condition the ridge problem.
    """

    theta: np.ndarray
    ridge_lambda: float
    feature_scaling: np.ndarray
    task_dim: int
    residual: float = float("nan")
    alpha: float | None = None

    @property
    def n_joints(self) -> int:
        return self.theta.shape[1]

    def predict(self, phi) -> np.ndarray:
        return predict_linear(self, phi)

    def to_dict(self, cost: CostModel | None = None) -> dict:
        d = {"kind": "linear", "theta": self.theta.reshape(-1).tolist(),
             "shape": list(self.theta.shape), "lambda": self.ridge_lambda,
             "feature_scaling": self.feature_scaling.tolist(), "task_dim": self.task_dim,
             "alpha": self.alpha}
        if cost is not None:
            d["cost_model"] = cost.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearPolicy":
        return cls(np.array(d["theta"], dtype=float).reshape(d["shape"]), d["lambda"],
                   np.array(d["feature_scaling"], dtype=float), d["task_dim"],
                   alpha=d.get("alpha"))


def _column_scale(phi: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return np.ones(phi.shape[1])
    rms = np.sqrt(np.mean(phi ** 2, axis=0))
    return np.where(rms > 1e-12, rms, 1.0)


def _ridge(phi, u, w, lam, normalize):
    if lam <= 0:
        raise ValueError("ridge lambda must be positive")
    if len(phi) == 0:
        raise DegenerateData("empty dataset")
    scale = _column_scale(phi, normalize)
    X = phi / scale
    Xw = X * w[:, None]
    A = X.T @ Xw + lam * np.eye(X.shape[1])
    theta_s = linalg.solve(A, Xw.T @ u, assume_a="pos")
    return theta_s / scale[:, None], scale


def fit_plain(data: Dataset, lam: float = DEFAULT_LAMBDA, normalize: bool = True) -> LinearPolicy:
    """Ridge regression of the demonstrated controls on the features."""
    theta, scale = _ridge(data.phi, data.u, np.ones(len(data)), lam, normalize)
    res = float(np.sum((data.u - data.phi @ theta) ** 2))
    return LinearPolicy(theta, lam, scale, data.task_dim, res)


def fit_weighted(data: Dataset, weights, lam: float = DEFAULT_LAMBDA,
                 normalize: bool = True, alpha: float | None = None) -> LinearPolicy:
    """Weighted ridge regression ``(Phi^T W Phi + lam I)^-1 Phi^T W U``."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(data),):
        raise ValueError("need one weight per sample")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise DegenerateData("all sample weights are zero")
    theta, scale = _ridge(data.phi, data.u, w, lam, normalize)
    res = float(np.sum(w[:, None] * (data.u - data.phi @ theta) ** 2))
    return LinearPolicy(theta, lam, scale, data.task_dim, res, alpha)


def predict_linear(policy: LinearPolicy, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != policy.theta.shape[0]:
        raise ValueError(f"feature length {phi.shape[-1]} != {policy.theta.shape[0]}")
    return phi @ policy.theta


# -- kernelized form ----------------------------------------------------------

@dataclass(frozen=True)
class KernelPolicy:
    """``u(s) = k(s)^T (K + W_U)^-1 U`` with the linear kernel.

    ``w_u`` holds the diagonal actually used, i.e. the sample costs plus the
    regularizer.  Weighted ridge regression with weights ``w_t`` and ridge
    ``lam`` gives identical predictions when ``w_u = lam / w_t``.
    """

    phi: np.ndarray
    u: np.ndarray
    w_u: np.ndarray
    regularizer: float
    feature_scaling: np.ndarray
    task_dim: int
    _coef: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def n_joints(self) -> int:
        return self.u.shape[1]

    def predict(self, phi) -> np.ndarray:
        return predict_kernel(self, phi)

    def to_dict(self, cost: CostModel | None = None) -> dict:
        d = {"kind": "kernel", "phi": self.phi.tolist(), "u": self.u.tolist(),
             "w_u": self.w_u.tolist(), "regularizer": self.regularizer,
             "feature_scaling": self.feature_scaling.tolist(), "task_dim": self.task_dim}
        if cost is not None:
            d["cost_model"] = cost.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelPolicy":
        return _kernel_from_parts(np.array(d["phi"]), np.array(d["u"]), np.array(d["w_u"]),
                                  d["regularizer"], np.array(d["feature_scaling"]), d["task_dim"])


def _kernel_from_parts(phi, u, w_u, reg, scale, task_dim) -> KernelPolicy:
    X = phi / scale
    K = X @ X.T
    A = K + np.diag(w_u)
    try:
        cf = linalg.cho_factor(A)
        coef = linalg.cho_solve(cf, u)
    except linalg.LinAlgError:
        try:
            coef = linalg.solve(A, u)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("kernel system is singular") from exc
    if not np.all(np.isfinite(coef)):
        raise np.linalg.LinAlgError("kernel system is singular")
    return KernelPolicy(phi, u, w_u, reg, scale, task_dim, coef)


def fit_kernel(data: Dataset, cost: CostModel | None = None, regularizer: float = 0.0,
               w_u=None, normalize: bool = True) -> KernelPolicy:
    """Kernelized cost-weighted regression.

    By default the diagonal is ``(u - u0)^T N (u - u0)`` per sample, plus
    ``regularizer``.  An explicit ``w_u`` diagonal overrides the costs.
    """
    if regularizer < 0:
        raise ValueError("regularizer must be non-negative")
    if len(data) == 0:
        raise DegenerateData("empty dataset")
    if w_u is None:
        if cost is None:
            raise ValueError("need a cost model or an explicit W_U diagonal")
        w_u = cost.costs(data.u - cost.null_control(data.q, data.qd))
    w_u = np.asarray(w_u, dtype=float) + regularizer
    if w_u.shape != (len(data),) or np.any(w_u < 0):
        raise ValueError("W_U diagonal must be non-negative with one entry per sample")
    scale = _column_scale(data.phi, normalize)
    return _kernel_from_parts(data.phi, data.u, w_u, regularizer, scale, data.task_dim)


def predict_kernel(policy: KernelPolicy, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != policy.phi.shape[1]:
        raise ValueError(f"feature length {phi.shape[-1]} != {policy.phi.shape[1]}")
    k = (phi / policy.feature_scaling) @ (policy.phi / policy.feature_scaling).T
    return k @ policy._coef


def policy_from_dict(d: dict):
    return KernelPolicy.from_dict(d) if d.get("kind") == "kernel" else LinearPolicy.from_dict(d)
