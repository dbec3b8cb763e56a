"""Server-side strategies: FedAvg, the robust aggregators, and
verify-before-aggregate (VBA) with the lazy-ED similarity check.

Aggregators take the stacked deltas as an ``(m, n)`` array (or a list of
ParamVector / ModelUpdate) and return the aggregated delta as a 1-D array.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import kernels
from .data import LabeledDataset
from .errors import ConfigError
from .federation import GlobalModel, ModelUpdate, aggregate_mean, apply_increment, evaluate
from .nn import MlpSpec, ParamVector

# accuracies are ratios k/n; absorbs rounding in (baseline - temp) so that a
# drop of exactly the threshold is not rejected
DROP_TOLERANCE = 1e-12

STRATEGIES = ("fedavg", "comed", "geomed", "cotmed", "krum", "normbound", "rsa", "vba")


class Label(str, Enum):
    BENIGN = "B"
    POISONED = "P"
    LAZY = "L"


@dataclass(frozen=True)
class Verdict:
    ed_id: int
    label: Label
    temp_accuracy: float
    accuracy_drop: float


@dataclass(frozen=True)
class DefenseConfig:
    strategy: str = "vba"
    vba_threshold: float = 0.005
    lazy_check: bool = True
    lazy_cosine_threshold: float = 0.99
    trim_count: int | None = None  # None -> ceil(m / 4)
    krum_f: int = 1
    norm_cap: float | None = None  # None -> median of the round's norms
    rsa_step: float = 0.01
    geomed_tol: float = 1e-8
    geomed_max_iter: int = 200

    def problems(self) -> list[str]:
        out = []
        if self.strategy not in STRATEGIES:
            out.append(f"defense.strategy {self.strategy!r} not one of {', '.join(STRATEGIES)}")
        if not self.vba_threshold > 0:
            out.append(f"defense.vba_threshold must be > 0, got {self.vba_threshold}")
        if not -1.0 <= self.lazy_cosine_threshold <= 1.0:
            out.append("defense.lazy_cosine_threshold must lie in [-1, 1]")
        if self.trim_count is not None and self.trim_count < 0:
            out.append("defense.trim_count must be >= 0")
        if self.krum_f < 0:
            out.append("defense.krum_f must be >= 0")
        if self.norm_cap is not None and not self.norm_cap > 0:
            out.append("defense.norm_cap must be > 0")
        if not self.rsa_step > 0:
            out.append("defense.rsa_step must be > 0")
        if not self.geomed_tol > 0 or self.geomed_max_iter < 1:
            out.append("defense.geomed_tol must be > 0 and geomed_max_iter >= 1")
        return out


class IterationLimitWarning(RuntimeWarning):
    pass


def _stack(updates) -> np.ndarray:
    if isinstance(updates, np.ndarray):
        X = updates
    else:
        rows = []
        for u in updates:
            if isinstance(u, ModelUpdate):
                u = u.delta
            rows.append(u.values if isinstance(u, ParamVector) else np.asarray(u, dtype=np.float64))
        X = np.stack(rows) if rows else np.empty((0, 0))
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ConfigError("aggregation needs at least one update")
    return X


def agg_mean(updates) -> np.ndarray:
    return kernels.column_mean(_stack(updates))


def agg_comed(updates) -> np.ndarray:
    """Coordinate-wise median."""
    return kernels.coord_median(_stack(updates))


@dataclass(frozen=True)
class GeomedResult:
    point: np.ndarray
    iterations: int
    converged: bool
    objectives: np.ndarray


def geomed_solve(updates, tol: float = 1e-8, max_iter: int = 200,
                 eps: float = 1e-12) -> GeomedResult:
    z, it, converged, objectives = kernels.weiszfeld(_stack(updates), tol, max_iter, eps)
    return GeomedResult(np.asarray(z), int(it), bool(converged), np.asarray(objectives))


def agg_geomed(updates, tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """Geometric median via Weiszfeld, started from the coordinate-wise mean."""
    res = geomed_solve(updates, tol, max_iter)
    if not res.converged:
        warnings.warn(f"Weiszfeld stopped at the iteration limit ({max_iter})",
                      IterationLimitWarning, stacklevel=2)
    return res.point


def agg_cotmed(updates, trim_count: int) -> np.ndarray:
    """Coordinate-wise trimmed mean: drop ``trim_count`` from each end, average the rest."""
    X = _stack(updates)
    if trim_count < 0 or X.shape[0] <= 2 * trim_count:
        raise ConfigError(
            f"trimmed mean needs more than 2*trim_count updates (m={X.shape[0]}, trim={trim_count})"
        )
    return kernels.trimmed_mean(X, int(trim_count))


def krum_select(updates, f: int, ids: Sequence[int] | None = None) -> int:
    """Row index of the Krum winner; equal scores go to the lowest ED id."""
    X = _stack(updates)
    m = X.shape[0]
    if m < f + 3:
        raise ConfigError(f"Krum needs at least f + 3 updates (m={m}, f={f})")
    scores = kernels.krum_scores(X, int(f))
    ids = list(range(m)) if ids is None else list(ids)
    best = min(range(m), key=lambda i: (scores[i], ids[i]))
    return best


def agg_krum(updates, f: int, ids: Sequence[int] | None = None) -> np.ndarray:
    X = _stack(updates)
    return X[krum_select(X, f, ids)].copy()


def agg_normbound(updates, cap: float | None = None) -> np.ndarray:
    """Clip each update to norm ``cap`` (default: median norm), then average."""
    X = _stack(updates)
    if cap is None:
        cap = float(np.median(kernels.row_norms(X)))
        if cap == 0.0:
            return kernels.column_mean(X) * 0.0
    if not cap > 0:
        raise ConfigError(f"norm cap must be positive, got {cap}")
    return kernels.clip_mean(X, float(cap))


def agg_rsa(updates, step: float) -> np.ndarray:
    """``step`` times the coordinate-wise mean of the update signs."""
    if not step > 0:
        raise ConfigError(f"RSA step must be positive, got {step}")
    return kernels.sign_mean(_stack(updates), float(step))


def robust_delta(updates: list[ModelUpdate], config: DefenseConfig) -> np.ndarray:
    """Aggregated delta for every non-VBA strategy."""
    X = _stack(updates)
    m = X.shape[0]
    s = config.strategy
    if s == "fedavg":
        return kernels.column_mean(X)
    if s == "comed":
        return agg_comed(X)
    if s == "geomed":
        return agg_geomed(X, config.geomed_tol, config.geomed_max_iter)
    if s == "cotmed":
        trim = math.ceil(m / 4) if config.trim_count is None else config.trim_count
        return agg_cotmed(X, trim)
    if s == "krum":
        return agg_krum(X, config.krum_f, [u.ed_id for u in updates])
    if s == "normbound":
        return agg_normbound(X, config.norm_cap)
    if s == "rsa":
        return agg_rsa(X, config.rsa_step)
    raise ConfigError(f"no aggregation rule for strategy {s!r}")


# ---------------------------------------------------------------------------
# Verify-before-aggregate

def vba_lazy_check(update, increment_history, cosine_threshold: float = 0.99) -> bool:
    """True when ``update`` is a near-copy of any stored global increment."""
    u = update.delta.values if isinstance(update, ModelUpdate) else (
        update.values if isinstance(update, ParamVector) else np.asarray(update, dtype=np.float64))
    history = [h.values if isinstance(h, ParamVector) else np.asarray(h, dtype=np.float64)
               for h in increment_history]
    if not history:
        return False
    H = np.ascontiguousarray(np.stack(history), dtype=np.float64)
    return bool(kernels.max_cosine(np.ascontiguousarray(u, dtype=np.float64), H) > cosine_threshold)


def vba_verify(model: GlobalModel, updates: list[ModelUpdate], auxiliary: LabeledDataset,
               spec: MlpSpec, config: DefenseConfig) -> list[Verdict]:
    """Score every update by the auxiliary accuracy of global + delta.

    ``model.last_accuracy`` is the shared baseline; it is computed here when
    missing.
    """
    baseline = model.last_accuracy
    if baseline is None:
        baseline = evaluate(model.params, spec, auxiliary)
    verdicts = []
    for u in updates:
        temp_acc = evaluate(model.params + u.delta, spec, auxiliary)
        drop = baseline - temp_acc
        label = Label.BENIGN if drop <= config.vba_threshold + DROP_TOLERANCE else Label.POISONED
        if config.lazy_check and vba_lazy_check(u, model.increment_history,
                                                config.lazy_cosine_threshold):
            label = Label.LAZY
        verdicts.append(Verdict(u.ed_id, label, temp_acc, drop))
    return verdicts


def vba_aggregate(model: GlobalModel, updates: list[ModelUpdate],
                  verdicts: list[Verdict]) -> GlobalModel:
    """Mean of the Benign updates only; nothing Benign leaves the parameters as they were."""
    if len(verdicts) != len(updates):
        raise ConfigError(f"{len(verdicts)} verdicts for {len(updates)} updates")
    benign = [u for u, v in zip(updates, verdicts) if v.label == Label.BENIGN]
    return aggregate_mean(model, benign)


def defend(model: GlobalModel, updates: list[ModelUpdate], auxiliary: LabeledDataset,
           spec: MlpSpec, config: DefenseConfig) -> tuple[GlobalModel, list[Verdict] | None]:
    """Run the configured strategy for one round."""
    if config.strategy == "vba":
        verdicts = vba_verify(model, updates, auxiliary, spec, config)
        return vba_aggregate(model, updates, verdicts), verdicts
    if not updates:
        return aggregate_mean(model, []), None
    if config.strategy == "fedavg":
        return aggregate_mean(model, updates), None
    return apply_increment(model, robust_delta(updates, config)), None
