"""Weighted out-tree combinatorics via the directed matrix tree theorem.

An out-tree on T nodes is a rooted directed tree whose edges all point away
from the root. Given a nonnegative weight matrix beta with beta[u, v] the
weight of edge v -> u, the cofactor of the out-Laplacian at a root r equals
the total weight of all out-trees rooted at r. This module computes those
partition functions (exactly, in log domain), root posteriors, edge
marginals and tree entropies, and maintains an incrementally editable
determinant for greedy search. A brute-force enumeration oracle is provided
for small T.

All values are immutable after construction and safe to share across
threads; the incremental determinant session is single-writer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalFaultError, SingularUpdateError, ZeroPartitionError

# Enumeration is capped here: T=7 already means 7^6 = 117649 out-trees.
MAX_ENUMERATION_NODES = 7


def _frozen(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


class WeightMatrix:
    """T x T nonnegative edge weights; entry (u, v) weights the edge v -> u.

    The log-domain matrix is authoritative: structural zeros are stored as
    -inf, and the diagonal is always -inf (no self edges). Because every
    out-tree uses exactly one entry from each non-root row, row rescaling
    factors out of all partition functions exactly; computations therefore
    use ``scaled`` = exp(log_entries - row_scales[:, None]) with
    ``row_scales`` the largest finite log entry of each row. Scaled entries
    lie in [0, 1] with a 1 in every row, which keeps the best tree's weight
    product (and hence the determinant) within floating-point range no
    matter how many thousands of nats the raw rows span. ln Z_r picks up
    the correction scale_total - row_scales[r], and the root weights absorb
    exp(-row_scales[r]) inside the augmented determinant.
    """

    __slots__ = ("log_entries", "size", "row_scales", "scale_total", "scaled")

    def __init__(self, entries=None, *, log_entries=None):
        if (entries is None) == (log_entries is None):
            raise ValueError("pass exactly one of entries= or log_entries=")
        if entries is not None:
            entries = np.asarray(entries, dtype=float)
            _check_square(entries)
            if not np.all(np.isfinite(entries)) or np.any(entries < 0):
                raise ValueError("weights must be finite and nonnegative")
            if np.any(np.diag(entries) != 0.0):
                raise ValueError("diagonal weights must be zero")
            with np.errstate(divide="ignore"):
                log_entries = np.log(entries)
        else:
            log_entries = np.array(log_entries, dtype=float)
            _check_square(log_entries)
            if np.any(np.isnan(log_entries)) or np.any(log_entries == np.inf):
                raise ValueError("log-weights must be < +inf and not NaN")
            if np.any(np.diag(log_entries) != -np.inf):
                raise ValueError("diagonal log-weights must be -inf")
        if log_entries.shape[0] < 2:
            raise ValueError("need at least 2 nodes")
        self.log_entries = _frozen(log_entries)
        self.size = log_entries.shape[0]
        finite = np.isfinite(self.log_entries)
        has_entry = finite.any(axis=1)
        row_max = np.max(np.where(finite, self.log_entries, -np.inf), axis=1)
        row_scales = np.where(has_entry, row_max, 0.0)
        self.row_scales = _frozen(row_scales)
        self.scale_total = float(row_scales.sum())
        with np.errstate(under="ignore"):
            scaled = np.exp(self.log_entries - row_scales[:, None])
        scaled[~finite] = 0.0
        self.scaled = _frozen(scaled)

    @property
    def entries(self):
        """Weights in the linear domain (may underflow for extreme logs)."""
        with np.errstate(under="ignore"):
            out = np.exp(self.log_entries)
        return out

    def with_edits(self, edits):
        """New matrix with (child, parent, new_log_weight) entries replaced."""
        log_entries = np.array(self.log_entries)
        for u, v, new_log in edits:
            if u == v:
                raise ValueError("cannot edit the diagonal")
            log_entries[u, v] = new_log
        return WeightMatrix(log_entries=log_entries)


class RootWeights:
    """Nonnegative per-node root weights p(X_r), kept in log domain."""

    __slots__ = ("log_values", "size", "log_total", "normalized")

    def __init__(self, values=None, *, log_values=None):
        if (values is None) == (log_values is None):
            raise ValueError("pass exactly one of values= or log_values=")
        if values is not None:
            values = np.asarray(values, dtype=float)
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise ValueError("root weights must be finite and nonnegative")
            with np.errstate(divide="ignore"):
                log_values = np.log(values)
        else:
            log_values = np.array(log_values, dtype=float)
            if np.any(np.isnan(log_values)) or np.any(log_values == np.inf):
                raise ValueError("log root weights must be < +inf and not NaN")
        if log_values.ndim != 1:
            raise ValueError("root weights must be a vector")
        self.log_values = _frozen(log_values)
        self.size = log_values.shape[0]
        self.log_total = float(logsumexp(self.log_values))
        if not np.isfinite(self.log_total):
            raise ValueError("at least one root weight must be positive")
        with np.errstate(under="ignore"):
            self.normalized = _frozen(np.exp(self.log_values - self.log_total))


@dataclass(frozen=True)
class OutTree:
    """Rooted directed tree over node indices.

    ``parent[t]`` is the parent of node t; the root's entry is -1.
    """

    root: int
    parent: np.ndarray

    def __post_init__(self):
        parent = _frozen(self.parent, dtype=np.int64)
        object.__setattr__(self, "parent", parent)
        size = parent.shape[0]
        if not 0 <= self.root < size:
            raise ValueError("root index out of range")
        if parent[self.root] != -1:
            raise ValueError("root must have no parent")
        if np.count_nonzero(parent == -1) != 1:
            raise ValueError("exactly one node may lack a parent")
        if np.any((parent < -1) | (parent >= size)):
            raise ValueError("parent indices out of range")
        for start in range(size):
            node, steps = start, 0
            while node != self.root:
                node = int(parent[node])
                steps += 1
                if steps > size:
                    raise ValueError("parent links contain a cycle")

    @property
    def size(self):
        return self.parent.shape[0]

    def edges(self):
        """(child, parent) pairs; the root contributes no edge."""
        return [(t, int(p)) for t, p in enumerate(self.parent) if p != -1]

    def topological_order(self):
        """Node indices root-first, every parent before its children."""
        children = [[] for _ in range(self.size)]
        for child, par in self.edges():
            children[par].append(child)
        order, stack = [], [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(children[node])
        return order


@dataclass(frozen=True)
class LogPartition:
    """ln Z plus the log-domain rescaling that was applied internally."""

    log_z: float
    log_scale_shift: float
    per_root_log_z: np.ndarray | None = None


@dataclass(frozen=True)
class EdgeMarginals:
    """Posterior edge probabilities W[u, v] = P(edge v -> u in the tree)."""

    W: np.ndarray
    per_root: np.ndarray | None = None


def _check_square(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("weight matrix must be square")


def _check_sizes(beta, roots):
    if beta.size != roots.size:
        raise ValueError("weight matrix and root weights disagree on T")


def build_out_laplacian(beta: WeightMatrix) -> np.ndarray:
    """Out-Laplacian Q = diag(row sums of beta) - beta.

    Rows of Q sum to zero; the cofactor of Q at r (delete row r and column
    r, take the determinant) is the total weight of out-trees rooted at r.
    """
    entries = beta.entries
    return np.diag(entries.sum(axis=1)) - entries


def build_augmented_laplacian(beta: WeightMatrix, roots: RootWeights) -> np.ndarray:
    """Bordered (T+1) x (T+1) matrix [[1, p^T], [-p, Q]] in the raw domain.

    p is the normalized root vector and Q the out-Laplacian of the raw
    weights; the determinant equals sum_r p(r) Z_r. Internal computations
    use a row-rescaled variant of the same layout for conditioning.
    """
    _check_sizes(beta, roots)
    return _augmented(beta.entries, roots.normalized)


def _augmented(weights, normalized):
    size = weights.shape[0]
    q_hat = np.empty((size + 1, size + 1))
    q_hat[0, 0] = 1.0
    q_hat[0, 1:] = normalized
    q_hat[1:, 0] = -normalized
    q_hat[1:, 1:] = np.diag(weights.sum(axis=1)) - weights
    return q_hat


def _scaled_augmented_parts(beta, roots):
    """Row-rescaled augmented matrix plus the root adjustment it implies.

    Returns (q_hat, adjusted_normalized, adjusted_log_total) where the
    adjusted root weights are p(X_r) * exp(-row_scales[r]); the identity
    ln Z = scale_total + adjusted_log_total + logdet(q_hat) is exact.
    """
    _check_sizes(beta, roots)
    adjusted_log = roots.log_values - beta.row_scales
    adjusted_total = float(logsumexp(adjusted_log))
    with np.errstate(under="ignore"):
        adjusted_norm = np.exp(adjusted_log - adjusted_total)
    return _augmented(beta.scaled, adjusted_norm), adjusted_norm, adjusted_total


def _logdet_nonneg(matrix, what):
    """Log-determinant of a matrix that is a nonnegative sum of tree weights.

    Returns -inf for an exactly singular matrix; a negative determinant is
    impossible for valid inputs and reported as a numerical fault.
    """
    sign, logdet = np.linalg.slogdet(matrix)
    if sign == 0.0 or logdet == -np.inf:
        return -np.inf
    if sign < 0.0:
        raise NumericalFaultError(f"negative determinant for {what}")
    return float(logdet)


def _has_positive_arborescence(support, root_order):
    """Whether some candidate root reaches every node over positive edges.

    ``support[u, v]`` marks a positive weight for the edge v -> u. Complete
    support (every off-diagonal weight positive, the generic continuous
    case) short-circuits; sparse supports run a breadth-first sweep per
    candidate root, cheap at the desk scales where structural zeros occur.
    """
    size = support.shape[0]
    off_diag = ~np.eye(size, dtype=bool)
    if np.all(support[off_diag]):
        return True
    for root in root_order:
        reached = np.zeros(size, dtype=bool)
        reached[root] = True
        while True:
            frontier = support[:, reached].any(axis=1) & ~reached
            if not frontier.any():
                break
            reached |= frontier
        if reached.all():
            return True
    return False


def _augmented_logdet(q_hat, beta, adjusted_norm, what):
    """Log |det| of the bordered matrix, robust to indeterminate LU signs.

    The true determinant is a nonnegative sum of tree weights, but chain-
    structured instances are nonsymmetric operators whose smallest singular
    value shrinks exponentially in T while the determinant stays a healthy
    positive number, so LU may report a zero or negative pivot that is pure
    roundoff. When that happens, reachability over the positive-weight
    support decides whether the partition function is structurally zero;
    if not, the log-magnitude is taken as the sum of log singular values.
    A clearly negative determinant (smallest singular value well above the
    roundoff floor) is still a numerical fault.
    """
    sign, logdet = np.linalg.slogdet(q_hat)
    if sign > 0.0 and logdet != -np.inf:
        return float(logdet)
    root_order = np.argsort(adjusted_norm)[::-1]
    root_order = [int(r) for r in root_order if adjusted_norm[r] > 0.0]
    if not _has_positive_arborescence(beta.scaled > 0.0, root_order):
        return -np.inf
    singular = np.linalg.svd(q_hat, compute_uv=False)
    floor = singular[0] * np.finfo(float).eps * q_hat.shape[0]
    if sign < 0.0 and singular[-1] > floor:
        raise NumericalFaultError(f"negative determinant for {what}")
    with np.errstate(divide="ignore"):
        return float(np.log(np.maximum(singular, floor)).sum())


def log_partition_per_root(beta: WeightMatrix) -> np.ndarray:
    """ln Z_r for every root r: the log-cofactor of the out-Laplacian at r.

    Entries are -inf where no out-tree rooted at r has positive weight.
    """
    size = beta.size
    scaled = beta.scaled
    q = np.diag(scaled.sum(axis=1)) - scaled
    out = np.empty(size)
    for r in range(size):
        keep = np.arange(size) != r
        logdet = _logdet_nonneg(q[np.ix_(keep, keep)], f"cofactor at root {r}")
        shift = beta.scale_total - beta.row_scales[r]
        out[r] = logdet + shift if logdet != -np.inf else -np.inf
    return out


def log_partition(beta: WeightMatrix, roots: RootWeights, *, per_root=False) -> LogPartition:
    """ln Z = ln(sum_r p(X_r)) + logdet of the augmented Laplacian.

    One O(T^3) determinant covers all roots at once. ``per_root=True`` also
    fills the slower per-root vector ln Z_r.
    """
    _check_sizes(beta, roots)
    q_hat, adjusted_norm, adjusted_total = _scaled_augmented_parts(beta, roots)
    logdet = _augmented_logdet(q_hat, beta, adjusted_norm, "augmented Laplacian")
    if logdet == -np.inf:
        raise ZeroPartitionError("no out-tree has positive weight")
    per = log_partition_per_root(beta) if per_root else None
    return LogPartition(log_z=beta.scale_total + adjusted_total + logdet,
                        log_scale_shift=beta.scale_total,
                        per_root_log_z=per)


def enumerate_out_trees(size: int) -> list[OutTree]:
    """Every out-tree on ``size`` labeled nodes (there are size**(size-1))."""
    if size > MAX_ENUMERATION_NODES:
        raise ValueError(f"enumeration limited to T <= {MAX_ENUMERATION_NODES}")
    if size < 1:
        raise ValueError("need at least one node")
    trees = []
    for root in range(size):
        others = [u for u in range(size) if u != root]
        candidates = [[v for v in range(size) if v != u] for u in others]
        parent = np.full(size, -1, dtype=np.int64)
        for combo in itertools.product(*candidates):
            parent[others] = combo
            if _reaches_root(parent, root):
                trees.append(OutTree(root, parent.copy()))
    return trees


def _reaches_root(parent, root):
    size = parent.shape[0]
    for start in range(size):
        node, steps = start, 0
        while node != root:
            node = parent[node]
            steps += 1
            if steps > size:
                return False
    return True


def brute_force_log_partition(beta: WeightMatrix, roots: RootWeights) -> LogPartition:
    """Enumeration oracle: sum edge-weight products over every out-tree.

    Exact (in log domain) but exponential; guarded at T <= 7.
    """
    _check_sizes(beta, roots)
    per_root_terms = [[] for _ in range(beta.size)]
    for tree in enumerate_out_trees(beta.size):
        children = [t for t in range(beta.size) if t != tree.root]
        log_weight = beta.log_entries[children, tree.parent[children]].sum()
        per_root_terms[tree.root].append(log_weight)
    per_root = np.array([logsumexp(terms) for terms in per_root_terms])
    log_z = float(logsumexp(roots.log_values + per_root))
    if not np.isfinite(log_z):
        raise ZeroPartitionError("no out-tree has positive weight")
    return LogPartition(log_z=log_z, log_scale_shift=0.0, per_root_log_z=per_root)


def root_posterior(beta: WeightMatrix, roots: RootWeights) -> np.ndarray:
    """Posterior over the latent root: p(r | X) proportional to p(X_r) Z_r."""
    _check_sizes(beta, roots)
    logits = roots.log_values + log_partition_per_root(beta)
    total = logsumexp(logits)
    if not np.isfinite(total):
        raise ZeroPartitionError("no out-tree has positive weight")
    with np.errstate(under="ignore"):
        return np.exp(logits - total)


def _clip_probabilities(p, what):
    low = p.min()
    if low < -1e-9:
        raise NumericalFaultError(f"{what} produced probability {low}")
    return np.maximum(p, 0.0)


def per_root_marginal(beta: WeightMatrix, r: int) -> np.ndarray:
    """P_r[u, v] = probability of edge v -> u under trees rooted at r.

    Computed as beta_uv * d(ln Z_r)/d(beta_uv) from the inverse of the
    cofactor matrix. Every non-root row sums to one (each non-root node has
    exactly one parent). Returns all zeros when Z_r = 0.
    """
    size = beta.size
    scaled = beta.scaled
    q = np.diag(scaled.sum(axis=1)) - scaled
    keep = np.flatnonzero(np.arange(size) != r)
    sub = q[np.ix_(keep, keep)]
    if _logdet_nonneg(sub, f"cofactor at root {r}") == -np.inf:
        return np.zeros((size, size))
    inv = np.linalg.inv(sub)
    diag = np.diag(inv)
    # gain[u, v] = d ln Z_r / d beta_uv, both in reduced (root-deleted) index space
    gain = diag[:, None] - inv.T
    p = np.zeros((size, size))
    p[np.ix_(keep, keep)] = scaled[np.ix_(keep, keep)] * gain
    p[keep, r] = scaled[keep, r] * diag
    np.fill_diagonal(p, 0.0)
    return _clip_probabilities(p, f"per-root marginal at {r}")


def edge_marginals(beta: WeightMatrix, roots: RootWeights, want_per_root=False) -> EdgeMarginals:
    """Posterior edge probabilities W, optionally with the per-root stack.

    Without per-root output, W comes in one O(T^3) pass from the inverse of
    the augmented Laplacian; with it, W is the root-posterior mixture of the
    per-root marginals.
    """
    _check_sizes(beta, roots)
    if want_per_root:
        posterior = root_posterior(beta, roots)
        stack = np.stack([per_root_marginal(beta, r) for r in range(beta.size)])
        w = np.einsum("r,ruv->uv", posterior, stack)
        return EdgeMarginals(W=_frozen(w), per_root=_frozen(stack))
    q_hat, _, _ = _scaled_augmented_parts(beta, roots)
    try:
        inv = np.linalg.inv(q_hat)
    except np.linalg.LinAlgError as exc:
        raise ZeroPartitionError("no out-tree has positive weight") from exc
    core = inv[1:, 1:]
    gain = np.diag(core)[:, None] - core.T
    w = beta.scaled * gain
    np.fill_diagonal(w, 0.0)
    return EdgeMarginals(W=_frozen(_clip_probabilities(w, "edge marginals")))


def tree_entropy(beta: WeightMatrix, r: int) -> float:
    """Shannon entropy of the tree posterior q_r over out-trees rooted at r.

    H(q_r) = ln Z_r - sum_uv P_r(u, v) ln beta_uv; zero when the weights
    support exactly one tree at r.
    """
    per_root = log_partition_per_root(beta)
    if not np.isfinite(per_root[r]):
        raise ZeroPartitionError(f"no out-tree rooted at {r} has positive weight")
    p = per_root_marginal(beta, r)
    mask = p > 0.0
    return float(per_root[r] - np.sum(p[mask] * beta.log_entries[mask]))


class IncrementalLogdet:
    """Editable determinant of the augmented Laplacian for one weight matrix.

    Holds the factored matrix (log-determinant plus explicit inverse) and
    applies (child, parent, new_log_weight) edits as sequential rank-one
    Sherman-Morrison updates. A capacitance factor <= 0 means the update
    crosses a singularity: the state is left untouched and the caller must
    recompute from scratch. After ``refactor_every`` cumulative edits
    (default 2T) or any near-singular capacitance the session refactorizes
    itself to bound drift. Single-writer: one mutable session at a time.
    """

    def __init__(self, beta: WeightMatrix, roots: RootWeights, refactor_every=None):
        _check_sizes(beta, roots)
        self.size = beta.size
        self._log_beta = np.array(beta.log_entries)
        self._log_roots = np.array(roots.log_values)
        self.refactor_every = refactor_every if refactor_every is not None else 2 * beta.size
        self._factorize()

    def _factorize(self):
        # re-anchor the row rescaling to the current weights, so drift in
        # the edited entries never degrades the conditioning
        beta = WeightMatrix(log_entries=self._log_beta)
        roots = RootWeights(log_values=self._log_roots)
        self.row_scales = np.array(beta.row_scales)
        self._scale_total = beta.scale_total
        adjusted_log = roots.log_values - self.row_scales
        self._adjusted_total = float(logsumexp(adjusted_log))
        with np.errstate(under="ignore"):
            normalized = np.exp(adjusted_log - self._adjusted_total)
        self._scaled = np.array(beta.scaled)
        q_hat = _augmented(self._scaled, normalized)
        logdet = _augmented_logdet(q_hat, beta, normalized, "augmented Laplacian")
        if logdet == -np.inf:
            raise ZeroPartitionError("no out-tree has positive weight")
        self._logdet = logdet
        self._inverse = np.linalg.inv(q_hat)
        self._edits_since_refactor = 0

    @property
    def logdet(self) -> float:
        """Log-determinant of the (rescaled) augmented Laplacian."""
        return self._logdet

    @property
    def log_partition(self) -> float:
        return self._scale_total + self._adjusted_total + self._logdet

    @property
    def inverse(self) -> np.ndarray:
        """Current inverse of the augmented Laplacian (do not mutate)."""
        return self._inverse

    @property
    def log_beta(self) -> np.ndarray:
        return self._log_beta

    def _run_edits(self, edits, inverse, log_beta, scaled):
        logdet = self._logdet
        tiny_capacitance = False
        for u, v, new_log in edits:
            if u == v:
                raise ValueError("edits must touch off-diagonal entries only")
            if math.isnan(new_log) or new_log == math.inf:
                raise ValueError("new log-weight must be < +inf and not NaN")
            new_scaled = math.exp(new_log - self.row_scales[u]) \
                if new_log != -math.inf else 0.0
            delta = new_scaled - scaled[u, v]
            log_beta[u, v] = new_log
            scaled[u, v] = new_scaled
            if delta == 0.0:
                continue
            column = inverse[:, u + 1]
            capacitance = 1.0 + delta * (column[u + 1] - column[v + 1])
            if not capacitance > 0.0:
                raise SingularUpdateError(
                    "rank-one update crossed a singularity; recompute from scratch")
            if capacitance < 1e-8:
                tiny_capacitance = True
            logdet += math.log(capacitance)
            row = inverse[u + 1, :] - inverse[v + 1, :]
            inverse -= np.outer(column * delta, row) / capacitance
        return logdet, tiny_capacitance

    def apply_edits(self, edits) -> float:
        """Apply edits, returning the updated log-partition.

        On SingularUpdateError the session state is unchanged.
        """
        edits = list(edits)
        if not edits:
            return self.log_partition
        inverse = self._inverse.copy()
        log_beta = self._log_beta.copy()
        scaled = self._scaled.copy()
        logdet, tiny = self._run_edits(edits, inverse, log_beta, scaled)
        self._inverse = inverse
        self._log_beta = log_beta
        self._scaled = scaled
        self._logdet = logdet
        self._edits_since_refactor += len(edits)
        if tiny or self._edits_since_refactor >= self.refactor_every:
            self._factorize()
        return self.log_partition

    def preview_edits(self, edits) -> float:
        """Change in log-partition the edits would cause, without committing."""
        edits = list(edits)
        if not edits:
            return 0.0
        logdet, _ = self._run_edits(edits, self._inverse.copy(),
                                    self._log_beta.copy(), self._scaled.copy())
        return logdet - self._logdet

    def refresh(self):
        """Refactorize from scratch (clears accumulated rank-one drift)."""
        self._factorize()
