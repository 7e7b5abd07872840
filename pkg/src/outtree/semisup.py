"""Semi-supervised label inference through the latent out-tree.

Labels mutate along the same latent tree as the attributes: the joint edge
weight factorizes into the attribute conditional times a label stickiness
term (probability alpha of keeping the parent's label, the remainder split
evenly over the other classes). Unknown labels are filled by greedy hill
climbing on the joint log-partition: sweeps visit unlabeled nodes in random
order, rank the alternative labels by a first-order estimate from the
maintained inverse, evaluate the best candidate exactly through incremental
rank-one determinant edits, and commit strictly improving flips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import treemath
from .errors import (DataError, NumericalFaultError, SingularUpdateError,
                     ZeroPartitionError)
from .likelihood import _partition_gradient
from .models import MutationModel
from .treemath import IncrementalLogdet, RootWeights, WeightMatrix

MISSING = -1


@dataclass(frozen=True)
class LabelModel:
    """Label mutation parameters: stickiness alpha over n_classes classes,
    uniform root label distribution."""

    alpha: float
    n_classes: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")

    @property
    def log_same(self):
        return float(np.log(self.alpha))

    @property
    def log_diff(self):
        return float(np.log((1.0 - self.alpha) / (self.n_classes - 1)))

    @property
    def log_root(self):
        return float(-np.log(self.n_classes))


def check_labels(y, n_classes, *, require_observed=True):
    """Validate a label vector with MISSING (-1) marking unobserved entries."""
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1:
        raise DataError("labels must be a vector")
    if np.any((y < MISSING) | (y >= n_classes)):
        raise DataError(f"labels must be missing or in [0, {n_classes})")
    if require_observed and not np.any(y >= 0):
        raise DataError("need at least one observed label")
    return y


def build_joint_beta(X, y, model: MutationModel, label_model: LabelModel):
    """Joint input/output weights: attribute conditional times label term.

    Every label must be assigned; inference fills missing entries before
    calling. Root weights pick up the uniform label factor 1/K.
    """
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= label_model.n_classes):
        raise DataError("all labels must be assigned before building joint weights")
    X = model.validate_data(X)
    log_cond = model.log_conditional_matrix(X)
    same = y[:, None] == y[None, :]
    log_joint = log_cond + np.where(same, label_model.log_same, label_model.log_diff)
    log_roots = model.log_marginal_vector(X) + label_model.log_root
    return (WeightMatrix(log_entries=log_joint),
            RootWeights(log_values=log_roots))


class LabelInference:
    """Mutable hill-climbing state: current labels plus the incrementally
    factored joint determinant. Single-writer, like the session it wraps."""

    def __init__(self, X, y, model, label_model, observed=None):
        self.X = model.validate_data(X)
        self.labels = np.asarray(y, dtype=np.int64).copy()
        self.model = model
        self.label_model = label_model
        self.observed = (self.labels >= 0) if observed is None \
            else np.asarray(observed, dtype=bool).copy()
        if np.any(self.labels < 0):
            raise DataError("state requires a full label assignment")
        self._log_cond = model.log_conditional_matrix(self.X)
        self.size = len(self.labels)
        self.sweeps = 0
        self._rebuild()

    def _rebuild(self):
        beta, roots = build_joint_beta(self.X, self.labels, self.model, self.label_model)
        # one flip edits a full row and column (about 2T entries), so this
        # cadence refactorizes after every committed flip, keeping previews
        # anchored to a fresh inverse
        self.session = IncrementalLogdet(beta, roots,
                                         refactor_every=2 * (self.size - 1))

    @property
    def log_partition(self) -> float:
        return self.session.log_partition

    def recomputed_log_partition(self) -> float:
        """Fresh full factorization of the current assignment (oracle path)."""
        beta, roots = build_joint_beta(self.X, self.labels, self.model, self.label_model)
        return treemath.log_partition(beta, roots).log_z

    def _label_term(self, a, b):
        return self.label_model.log_same if a == b else self.label_model.log_diff

    def flip_edits(self, node, new_label):
        """The row and column weight edits a label flip induces."""
        edits = []
        for v in range(self.size):
            if v == node:
                continue
            edits.append((node, v, float(self._log_cond[node, v]
                                         + self._label_term(new_label, self.labels[v]))))
            edits.append((v, node, float(self._log_cond[v, node]
                                         + self._label_term(self.labels[v], new_label))))
        return edits

    def _check_flip(self, node, new_label):
        if self.observed[node]:
            raise ValueError(f"label of node {node} is observed and frozen")
        if new_label == self.labels[node]:
            raise ValueError("new label must differ from the current one")
        if not 0 <= new_label < self.label_model.n_classes:
            raise ValueError("label out of range")

    def flip_delta(self, node, new_label) -> float:
        """Exact change in log-partition if node took new_label (no commit).

        Evaluated through rank-one edits on a scratch copy; falls back to a
        full recomputation when the update path crosses a singularity.
        """
        self._check_flip(node, new_label)
        edits = self.flip_edits(node, new_label)
        try:
            return self.session.preview_edits(edits)
        except SingularUpdateError:
            saved = self.labels[node]
            self.labels[node] = new_label
            try:
                return self.recomputed_log_partition() - self.log_partition
            except (ZeroPartitionError, NumericalFaultError):
                # the flip numerically extinguishes the partition function
                return -np.inf
            finally:
                self.labels[node] = saved

    def screen_delta(self, node, new_label) -> float:
        """First-order estimate of the flip gain from the maintained inverse."""
        self._check_flip(node, new_label)
        inverse = self.session.inverse
        row_scales = self.session.row_scales
        log_beta = self.session.log_beta
        total = 0.0
        for u, v, new_log in self.flip_edits(node, new_label):
            old = log_beta[u, v]
            delta = (np.exp(new_log - row_scales[u]) if new_log != -np.inf else 0.0) \
                - (np.exp(old - row_scales[u]) if old != -np.inf else 0.0)
            if delta != 0.0:
                total += delta * (inverse[u + 1, u + 1] - inverse[v + 1, u + 1])
        return float(total)

    def commit(self, node, new_label) -> float:
        """Apply the flip, returning the new log-partition."""
        self._check_flip(node, new_label)
        edits = self.flip_edits(node, new_label)
        self.labels[node] = new_label
        try:
            return self.session.apply_edits(edits)
        except SingularUpdateError:
            self._rebuild()
            return self.log_partition


@dataclass
class InferenceResult:
    labels: np.ndarray
    log_partition: float
    sweeps: int
    restart: int
    model: MutationModel
    flips: int = 0


def greedy_label_inference(X, y, model: MutationModel, label_model: LabelModel, *,
                           restarts=1, max_sweeps=50, rng=None, min_gain=1e-9,
                           theta_steps_per_sweep=0) -> InferenceResult:
    """Fill missing labels by restarted greedy hill climbing on ln Z.

    Missing labels start uniformly at random; each sweep visits unlabeled
    nodes in random order, screens the K-1 alternative labels to first
    order, exactly evaluates the best candidate, and commits it when the
    exact gain exceeds ``min_gain``. A sweep with no commits terminates the
    run; the best of ``restarts`` runs by final log-partition wins. With
    ``theta_steps_per_sweep`` > 0, that many gradient-ascent steps on the
    model parameters (through the joint partition function) follow each
    sweep, alternating structure search with parameter refinement.
    """
    y = check_labels(y, label_model.n_classes)
    X = model.validate_data(X)
    observed = y >= 0
    hidden = np.flatnonzero(~observed)
    if hidden.size == 0:
        return InferenceResult(labels=y.copy(), log_partition=_full_log_partition(
            X, y, model, label_model), sweeps=0, restart=0, model=model)
    if restarts < 1:
        raise ValueError("need at least one restart")
    rng = np.random.default_rng(rng)
    best = None
    for restart, stream in enumerate(rng.spawn(restarts)):
        labels = y.copy()
        labels[hidden] = stream.integers(0, label_model.n_classes, hidden.size)
        current_model = model
        state = LabelInference(X, labels, current_model, label_model, observed=observed)
        flips = 0
        for sweep in range(1, max_sweeps + 1):
            state.sweeps = sweep
            committed = False
            for node in stream.permutation(hidden):
                candidates = [k for k in range(label_model.n_classes)
                              if k != state.labels[node]]
                if len(candidates) > 1:
                    scores = [state.screen_delta(node, k) for k in candidates]
                    candidates = [candidates[int(np.argmax(scores))]]
                gain = state.flip_delta(node, candidates[0])
                if gain > min_gain:
                    state.commit(node, candidates[0])
                    committed = True
                    flips += 1
            if theta_steps_per_sweep > 0:
                current_model = _ascend_theta(X, state.labels, current_model,
                                              label_model, theta_steps_per_sweep)
                state = LabelInference(X, state.labels, current_model, label_model,
                                       observed=observed)
                state.sweeps = sweep
            if not committed:
                break
        result = InferenceResult(labels=state.labels.copy(),
                                 log_partition=state.log_partition,
                                 sweeps=state.sweeps, restart=restart,
                                 model=current_model, flips=flips)
        if best is None or result.log_partition > best.log_partition:
            best = result
    return best


def _full_log_partition(X, y, model, label_model):
    beta, roots = build_joint_beta(X, y, model, label_model)
    return treemath.log_partition(beta, roots).log_z


def _ascend_theta(X, y, model, label_model, steps):
    """A few Armijo gradient steps on theta through the joint partition."""
    vector = model.param_vector()
    for _ in range(steps):
        beta, roots = build_joint_beta(X, y, model, label_model)
        d_beta, d_roots = model.log_weight_gradients(model.validate_data(X))
        grad = _partition_gradient(beta, roots, d_beta, d_roots)
        value = treemath.log_partition(beta, roots).log_z
        step, improved = 1.0, False
        while step >= 1e-12:
            candidate = model.with_params(vector + step * grad)
            try:
                trial = _full_log_partition(X, y, candidate, label_model)
            except (ZeroPartitionError, NumericalFaultError, ValueError):
                trial = -np.inf
            if np.isfinite(trial) and trial >= value + 1e-4 * step * float(grad @ grad):
                model, vector, improved = candidate, vector + step * grad, True
                break
            step *= 0.5
        if not improved:
            break
    return model


def cross_validate_alpha(X, y, model: MutationModel, alpha_grid, *, n_classes=None,
                         folds=3, holdout_frac=0.5, restarts=3, max_sweeps=50,
                         rng=None) -> float:
    """Pick the stickiness maximizing held-out label accuracy.

    Each fold masks ``holdout_frac`` of the observed labels, runs inference
    per grid value, and scores accuracy on the masked entries. Ties go to
    the alpha nearest 0.5.
    """
    alpha_grid = list(alpha_grid)
    if not alpha_grid:
        raise ValueError("alpha grid must be non-empty")
    if n_classes is None:
        n_classes = int(np.max(y)) + 1
    y = check_labels(y, n_classes)
    observed_idx = np.flatnonzero(y >= 0)
    if len(alpha_grid) == 1:
        return float(alpha_grid[0])
    n_mask = int(round(holdout_frac * observed_idx.size))
    if n_mask < 1 or n_mask >= observed_idx.size:
        raise DataError("not enough observed labels to hold some out")
    rng = np.random.default_rng(rng)
    hits = np.zeros(len(alpha_grid))
    totals = 0
    for fold_stream in rng.spawn(folds):
        masked = fold_stream.choice(observed_idx, size=n_mask, replace=False)
        y_fold = y.copy()
        y_fold[masked] = MISSING
        totals += masked.size
        for i, alpha in enumerate(alpha_grid):
            result = greedy_label_inference(
                X, y_fold, model, LabelModel(alpha=float(alpha), n_classes=n_classes),
                restarts=restarts, max_sweeps=max_sweeps, rng=fold_stream.spawn(1)[0])
            hits[i] += int((result.labels[masked] == y[masked]).sum())
    accuracy = hits / totals
    best = accuracy.max()
    tied = [alpha_grid[i] for i in range(len(alpha_grid))
            if accuracy[i] >= best - 1e-12]
    return float(min(tied, key=lambda a: abs(a - 0.5)))


def exhaustive_label_search(X, y, model: MutationModel, label_model: LabelModel):
    """Oracle: the exact argmax completion by enumerating all assignments.

    Exponential in the number of missing labels; guarded at 6.
    """
    y = check_labels(y, label_model.n_classes)
    hidden = np.flatnonzero(y < 0)
    if hidden.size > 6:
        raise ValueError("exhaustive search limited to 6 missing labels")
    best_labels, best_value = None, -np.inf
    grids = np.meshgrid(*[np.arange(label_model.n_classes)] * hidden.size,
                        indexing="ij") if hidden.size else []
    combos = np.stack([g.ravel() for g in grids], axis=1) if hidden.size \
        else np.zeros((1, 0), dtype=np.int64)
    for combo in combos:
        labels = y.copy()
        labels[hidden] = combo
        try:
            value = _full_log_partition(X, labels, model, label_model)
        except (ZeroPartitionError, NumericalFaultError):
            continue
        if value > best_value:
            best_labels, best_value = labels, value
    if best_labels is None:
        raise ZeroPartitionError("every completion has zero partition weight")
    return best_labels, float(best_value)
