"""Mutation models: a root marginal plus one stationary parent-to-child
conditional shared by every edge.

Three families are provided. The linear Gaussian family has a root
N(mu_pi, Sigma_pipi) and conditional N(A x_parent + mu_c, Sigma_cc). The
tabular family keeps one categorical table per attribute dimension, with
child dimension d conditioned on parent dimension d only. The kernel family
replaces the linear conditional mean with a kernel regression on the parent
attributes.

Every family exposes an unconstrained flat parameter vector (covariances
via Cholesky factors with log diagonals, probability tables via log-odds
with the last category as reference) together with analytic gradients of
all log-weights, so gradient ascent needs no projection step.
"""

from __future__ import annotations

import abc

import numpy as np

from .errors import DataError
from .treemath import RootWeights, WeightMatrix

LOG_2PI = float(np.log(2.0 * np.pi))


class MutationModel(abc.ABC):
    """Contract shared by all model families.

    The same conditional parameter governs every edge; models are immutable
    once constructed, and ``with_params`` returns a fresh instance.
    """

    @abc.abstractmethod
    def log_marginal(self, x) -> float:
        """Log density (or mass) of one attribute row under the root marginal."""

    @abc.abstractmethod
    def log_conditional(self, x_child, x_parent) -> float:
        """Log density of a child row given its parent row."""

    @abc.abstractmethod
    def param_vector(self) -> np.ndarray:
        """Unconstrained flat parameter vector."""

    @abc.abstractmethod
    def with_params(self, vector) -> "MutationModel":
        """New model of the same family from an unconstrained vector."""

    @abc.abstractmethod
    def log_weight_gradients(self, data):
        """(d_log_beta, d_log_roots) with shapes (P, T, T) and (P, T).

        Entry [i, u, v] is the derivative of log beta_uv with respect to
        coordinate i of the unconstrained vector; diagonals are zero.
        """

    @abc.abstractmethod
    def sample_root(self, rng) -> np.ndarray:
        """Draw one attribute row from the root marginal."""

    @abc.abstractmethod
    def sample_child(self, x_parent, rng) -> np.ndarray:
        """Draw one child row given a parent row."""

    @abc.abstractmethod
    def validate_data(self, data) -> np.ndarray:
        """Check and canonicalize a T x D data matrix for this family."""

    def penalty(self, vector):
        """Additive regularizer (value, gradient) for fitting; zero by default."""
        return 0.0, np.zeros_like(vector)

    def log_marginal_vector(self, data) -> np.ndarray:
        return np.array([self.log_marginal(row) for row in data])

    def log_conditional_matrix(self, data) -> np.ndarray:
        """All pairwise conditionals, entry (u, v) = log p(x_u | x_v); -inf diagonal."""
        size = len(data)
        out = np.full((size, size), -np.inf)
        for u in range(size):
            for v in range(size):
                if u != v:
                    out[u, v] = self.log_conditional(data[u], data[v])
        return out


def build_beta(data, model: MutationModel):
    """Weight matrix and root weights for a dataset under a model.

    log beta_uv = log p(x_u | x_v) for u != v (diagonal structurally zero),
    log root weight r = log p(x_r). Any non-finite log density aborts with
    the offending pair.
    """
    data = model.validate_data(data)
    log_cond = model.log_conditional_matrix(data)
    log_marg = model.log_marginal_vector(data)
    off_diag = ~np.eye(len(data), dtype=bool)
    if not np.all(np.isfinite(log_cond[off_diag])):
        u, v = np.argwhere(off_diag & ~np.isfinite(log_cond))[0]
        raise DataError(f"non-finite log conditional for pair ({u}, {v})")
    if not np.all(np.isfinite(log_marg)):
        r = int(np.flatnonzero(~np.isfinite(log_marg))[0])
        raise DataError(f"non-finite log marginal for row {r}")
    return WeightMatrix(log_entries=log_cond), RootWeights(log_values=log_marg)


def grad_log_weights(data, model: MutationModel):
    """Gradients of every log-weight with respect to the flat parameter vector."""
    return model.log_weight_gradients(model.validate_data(data))


# ---------------------------------------------------------------------------
# Cholesky packing shared by the Gaussian family


def _pack_chol(chol):
    d = chol.shape[0]
    packed = chol[np.tril_indices(d)].copy()
    diag_slots = np.cumsum(np.arange(1, d + 1)) - 1
    packed[diag_slots] = np.log(chol[np.diag_indices(d)])
    return packed, diag_slots


def _unpack_chol(packed, d):
    chol = np.zeros((d, d))
    chol[np.tril_indices(d)] = packed
    chol[np.diag_indices(d)] = np.exp(np.diag(chol))
    return chol


def _chol_or_raise(sigma, name):
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be symmetric positive definite") from None


def _chol_grad_block(sym_grads, chol):
    """Map d/dSigma gradients (stacked ..., D, D) to packed-Cholesky coords."""
    d = chol.shape[0]
    full = 2.0 * sym_grads @ chol
    rows, cols = np.tril_indices(d)
    block = full[..., rows, cols]
    diag_slots = np.cumsum(np.arange(1, d + 1)) - 1
    block[..., diag_slots] *= chol[np.diag_indices(d)]
    return block


class GaussianModel(MutationModel):
    """Linear Gaussian mutation model.

    Root marginal N(mu_pi, Sigma_pipi); conditional of child given parent
    N(Sigma_c_given_pi @ x_parent + mu_c, Sigma_cc).
    """

    def __init__(self, mu_c, mu_pi, sigma_c_given_pi, sigma_cc, sigma_pipi):
        self.mu_c = np.asarray(mu_c, dtype=float)
        self.mu_pi = np.asarray(mu_pi, dtype=float)
        self.sigma_c_given_pi = np.atleast_2d(np.asarray(sigma_c_given_pi, dtype=float))
        self.sigma_cc = np.atleast_2d(np.asarray(sigma_cc, dtype=float))
        self.sigma_pipi = np.atleast_2d(np.asarray(sigma_pipi, dtype=float))
        d = self.mu_c.shape[0]
        self.dim = d
        for name, mat in (("sigma_c_given_pi", self.sigma_c_given_pi),
                          ("sigma_cc", self.sigma_cc),
                          ("sigma_pipi", self.sigma_pipi)):
            if mat.shape != (d, d):
                raise ValueError(f"{name} must be {d} x {d}")
        self._chol_cc = _chol_or_raise(self.sigma_cc, "sigma_cc")
        self._chol_pipi = _chol_or_raise(self.sigma_pipi, "sigma_pipi")
        self._inv_cc = np.linalg.inv(self.sigma_cc)
        self._inv_pipi = np.linalg.inv(self.sigma_pipi)
        self._logdet_cc = 2.0 * np.log(np.diag(self._chol_cc)).sum()
        self._logdet_pipi = 2.0 * np.log(np.diag(self._chol_pipi)).sum()

    def validate_data(self, data):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[1] != self.dim:
            raise DataError(f"expected {self.dim} attribute columns, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise DataError("attributes must be finite")
        return data

    def _log_normal(self, resid, inv, logdet):
        maha = resid @ inv @ resid
        return -0.5 * (self.dim * LOG_2PI + logdet + maha)

    def log_marginal(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DataError("attributes must be finite")
        return float(self._log_normal(x - self.mu_pi, self._inv_pipi, self._logdet_pipi))

    def log_conditional(self, x_child, x_parent):
        x_child = np.asarray(x_child, dtype=float)
        x_parent = np.asarray(x_parent, dtype=float)
        if not (np.all(np.isfinite(x_child)) and np.all(np.isfinite(x_parent))):
            raise DataError("attributes must be finite")
        resid = x_child - self.sigma_c_given_pi @ x_parent - self.mu_c
        return float(self._log_normal(resid, self._inv_cc, self._logdet_cc))

    def log_marginal_vector(self, data):
        resid = data - self.mu_pi
        maha = np.einsum("ti,ij,tj->t", resid, self._inv_pipi, resid)
        return -0.5 * (self.dim * LOG_2PI + self._logdet_pipi + maha)

    def log_conditional_matrix(self, data):
        means = data @ self.sigma_c_given_pi.T + self.mu_c
        resid = data[:, None, :] - means[None, :, :]
        maha = np.einsum("uvi,ij,uvj->uv", resid, self._inv_cc, resid)
        out = -0.5 * (self.dim * LOG_2PI + self._logdet_cc + maha)
        np.fill_diagonal(out, -np.inf)
        return out

    def param_vector(self):
        cc, _ = _pack_chol(self._chol_cc)
        pipi, _ = _pack_chol(self._chol_pipi)
        return np.concatenate([self.mu_c, self.mu_pi,
                               self.sigma_c_given_pi.ravel(), cc, pipi])

    def with_params(self, vector):
        d = self.dim
        tri = d * (d + 1) // 2
        parts = np.split(np.asarray(vector, dtype=float),
                         np.cumsum([d, d, d * d, tri]))
        chol_cc = _unpack_chol(parts[3], d)
        chol_pipi = _unpack_chol(parts[4], d)
        return GaussianModel(parts[0], parts[1], parts[2].reshape(d, d),
                             chol_cc @ chol_cc.T, chol_pipi @ chol_pipi.T)

    def log_weight_gradients(self, data):
        size, d = data.shape
        tri = d * (d + 1) // 2
        means = data @ self.sigma_c_given_pi.T + self.mu_c
        resid = data[:, None, :] - means[None, :, :]
        score = resid @ self._inv_cc
        d_beta = np.empty((2 * d + d * d + 2 * tri, size, size))
        pos = 0
        d_beta[pos:pos + d] = score.transpose(2, 0, 1)                   # mu_c
        pos += d
        d_beta[pos:pos + d] = 0.0                                        # mu_pi
        pos += d
        d_beta[pos:pos + d * d] = np.einsum("uva,vb->abuv", score, data) \
            .reshape(d * d, size, size)                                  # A
        pos += d * d
        sigma_grads = 0.5 * (np.einsum("uvi,uvj->uvij", score, score)
                             - self._inv_cc)
        d_beta[pos:pos + tri] = _chol_grad_block(sigma_grads, self._chol_cc) \
            .transpose(2, 0, 1)                                          # chol(sigma_cc)
        pos += tri
        d_beta[pos:pos + tri] = 0.0                                      # chol(sigma_pipi)
        for block in d_beta:
            np.fill_diagonal(block, 0.0)

        resid0 = data - self.mu_pi
        score0 = resid0 @ self._inv_pipi
        d_roots = np.zeros((d_beta.shape[0], size))
        d_roots[d:2 * d] = score0.T                                      # mu_pi
        sigma0_grads = 0.5 * (np.einsum("ti,tj->tij", score0, score0)
                              - self._inv_pipi)
        d_roots[2 * d + d * d + tri:] = _chol_grad_block(sigma0_grads, self._chol_pipi).T
        return d_beta, d_roots

    def sample_root(self, rng):
        return self.mu_pi + self._chol_pipi @ rng.standard_normal(self.dim)

    def sample_child(self, x_parent, rng):
        mean = self.sigma_c_given_pi @ np.asarray(x_parent, dtype=float) + self.mu_c
        return mean + self._chol_cc @ rng.standard_normal(self.dim)

    def scaled_noise(self, factor):
        """Copy with the conditional covariance multiplied by ``factor``."""
        if factor <= 0:
            raise ValueError("noise scale must be positive")
        return GaussianModel(self.mu_c, self.mu_pi, self.sigma_c_given_pi,
                             factor * self.sigma_cc, self.sigma_pipi)


def gaussian_log_marginal(model: GaussianModel, x) -> float:
    return model.log_marginal(x)


def gaussian_log_conditional(model: GaussianModel, x_child, x_parent) -> float:
    return model.log_conditional(x_child, x_parent)


def gaussian_init_iid(data, ridge=1e-6) -> GaussianModel:
    """Seed model matching the iid Gaussian fit.

    mu_pi = mu_c = sample mean, both covariances the (ridge-regularized)
    sample covariance, and a zero regression matrix, so the conditional
    equals the marginal and the out-tree likelihood at this point equals
    the iid likelihood exactly. ``ridge=None`` disables regularization and
    rejects degenerate data instead.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    size, d = data.shape
    if size < 2:
        raise DataError("need at least 2 rows to fit a seed model")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (size - 1)
    if ridge is not None:
        eps = max(ridge * np.trace(cov) / d, 1e-12)
        cov = cov + eps * np.eye(d)
    return GaussianModel(mu_c=mean, mu_pi=mean, sigma_c_given_pi=np.zeros((d, d)),
                         sigma_cc=cov, sigma_pipi=cov)


# ---------------------------------------------------------------------------
# Tabular family


def _check_prob_vector(p, name):
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a probability vector (sum within 1e-12)")


class TabularModel(MutationModel):
    """Per-dimension categorical tables over small integer alphabets.

    ``root_tables[d]`` is the marginal over values of dimension d;
    ``cond_tables[d][a, b]`` is p(child value a | parent value b), every
    column summing to one. Dimensions are conditionally independent given
    the parent row.
    """

    def __init__(self, root_tables, cond_tables):
        if len(root_tables) != len(cond_tables):
            raise ValueError("need one root table and one conditional table per dimension")
        self.root_tables = [np.asarray(t, dtype=float) for t in root_tables]
        self.cond_tables = [np.atleast_2d(np.asarray(t, dtype=float)) for t in cond_tables]
        self.alphabet_sizes = []
        for d, (root, cond) in enumerate(zip(self.root_tables, self.cond_tables)):
            k = root.shape[0]
            if cond.shape != (k, k):
                raise ValueError(f"conditional table {d} must be {k} x {k}")
            _check_prob_vector(root, f"root table {d}")
            for b in range(k):
                _check_prob_vector(cond[:, b], f"conditional table {d} column {b}")
            self.alphabet_sizes.append(k)
        self.dim = len(self.root_tables)
        with np.errstate(divide="ignore"):
            self._log_root = [np.log(t) for t in self.root_tables]
            self._log_cond = [np.log(t) for t in self.cond_tables]
        self._root_cdf = [np.cumsum(t) for t in self.root_tables]
        self._cond_cdf = [np.cumsum(t, axis=0) for t in self.cond_tables]

    def validate_data(self, data):
        data = np.atleast_2d(np.asarray(data))
        if data.shape[1] != self.dim:
            raise DataError(f"expected {self.dim} attribute columns, got {data.shape[1]}")
        if not np.issubdtype(data.dtype, np.integer):
            as_int = data.astype(np.int64)
            if not np.array_equal(as_int, data):
                raise DataError("tabular attributes must be integers")
            data = as_int
        for d, k in enumerate(self.alphabet_sizes):
            if data[:, d].min() < 0 or data[:, d].max() >= k:
                raise DataError(f"column {d} has values outside [0, {k})")
        return data

    def log_marginal(self, x):
        return float(sum(self._log_root[d][x[d]] for d in range(self.dim)))

    def log_conditional(self, x_child, x_parent):
        return float(sum(self._log_cond[d][x_child[d], x_parent[d]]
                         for d in range(self.dim)))

    def log_marginal_vector(self, data):
        out = np.zeros(len(data))
        for d in range(self.dim):
            out += self._log_root[d][data[:, d]]
        return out

    def log_conditional_matrix(self, data):
        size = len(data)
        out = np.zeros((size, size))
        for d in range(self.dim):
            out += self._log_cond[d][np.ix_(data[:, d], data[:, d])]
        np.fill_diagonal(out, -np.inf)
        return out

    def param_vector(self):
        parts = []
        for d, k in enumerate(self.alphabet_sizes):
            if np.any(self.root_tables[d] == 0) or np.any(self.cond_tables[d] == 0):
                raise ValueError("zero probabilities have no finite log-odds")
            parts.append(self._log_root[d][:-1] - self._log_root[d][-1])
            for b in range(k):
                parts.append(self._log_cond[d][:-1, b] - self._log_cond[d][-1, b])
        return np.concatenate(parts)

    def with_params(self, vector):
        vector = np.asarray(vector, dtype=float)
        root_tables, cond_tables, pos = [], [], 0
        for k in self.alphabet_sizes:
            root_tables.append(_softmax_with_reference(vector[pos:pos + k - 1]))
            pos += k - 1
            cond = np.empty((k, k))
            for b in range(k):
                cond[:, b] = _softmax_with_reference(vector[pos:pos + k - 1])
                pos += k - 1
            cond_tables.append(cond)
        return TabularModel(root_tables, cond_tables)

    def log_weight_gradients(self, data):
        size = len(data)
        total = sum((k - 1) * (k + 1) for k in self.alphabet_sizes)
        d_beta = np.zeros((total, size, size))
        d_roots = np.zeros((total, size))
        pos = 0
        for d, k in enumerate(self.alphabet_sizes):
            column = data[:, d]
            for j in range(k - 1):
                d_roots[pos + j] = (column == j).astype(float) - self.root_tables[d][j]
            pos += k - 1
            for b in range(k):
                parent_mask = column == b
                for j in range(k - 1):
                    gain = (column == j).astype(float) - self.cond_tables[d][j, b]
                    d_beta[pos + j][:, parent_mask] = gain[:, None]
                pos += k - 1
        for block in d_beta:
            np.fill_diagonal(block, 0.0)
        return d_beta, d_roots

    def sample_root(self, rng):
        u = rng.random(self.dim)
        return np.array([int(np.searchsorted(self._root_cdf[d], u[d], side="right"))
                         for d in range(self.dim)], dtype=np.int64)

    def sample_child(self, x_parent, rng):
        u = rng.random(self.dim)
        return np.array(
            [int(np.searchsorted(self._cond_cdf[d][:, x_parent[d]], u[d], side="right"))
             for d in range(self.dim)], dtype=np.int64)


def _softmax_with_reference(logits):
    full = np.concatenate([logits, [0.0]])
    full -= full.max()
    exp = np.exp(full)
    return exp / exp.sum()


def tabular_init_iid(data, alphabet_sizes, pseudocount=1.0) -> TabularModel:
    """Seed tabular model: empirical marginals, conditional columns all equal
    to the marginal (so the out-tree likelihood matches iid exactly)."""
    data = np.atleast_2d(np.asarray(data, dtype=np.int64))
    root_tables, cond_tables = [], []
    for d, k in enumerate(alphabet_sizes):
        counts = np.bincount(data[:, d], minlength=k).astype(float) + pseudocount
        marginal = counts / counts.sum()
        root_tables.append(marginal)
        cond_tables.append(np.tile(marginal[:, None], (1, k)))
    return TabularModel(root_tables, cond_tables)


# ---------------------------------------------------------------------------
# Kernelized Gaussian family


class KernelModel(MutationModel):
    """Per-dimension Gaussians whose conditional mean is a kernel regression
    over fixed training anchors.

    mean_d(x_parent) = sum_t alpha[t, d] * k(x_parent, anchor_t) + mu[d],
    with standard deviation sigma[d]. The marginal drops the kernel term.
    The bandwidth gradient (RBF only) is taken by central finite
    differences; everything else is analytic. Fitting penalizes alpha with
    an L2 term of weight ``alpha_penalty``.
    """

    def __init__(self, anchors, alpha, mu, sigma, kernel="rbf", gamma=None,
                 alpha_penalty=1e-3):
        self.anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        self.alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        if kernel not in ("rbf", "linear"):
            raise ValueError("kernel must be 'rbf' or 'linear'")
        self.kernel = kernel
        self.gamma = float(gamma) if gamma is not None else None
        self.alpha_penalty = float(alpha_penalty)
        self.dim = self.mu.shape[0]
        if self.anchors.shape[0] == 0:
            raise ValueError("anchors must be non-empty")
        if self.alpha.shape != (self.anchors.shape[0], self.dim):
            raise ValueError("alpha must be (num anchors) x D")
        if self.sigma.shape != (self.dim,) or np.any(self.sigma <= 0):
            raise ValueError("sigma must be length-D and positive")
        if kernel == "rbf" and (self.gamma is None or self.gamma <= 0):
            raise ValueError("rbf kernel needs a positive bandwidth")

    def validate_data(self, data):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[1] != self.dim:
            raise DataError(f"expected {self.dim} attribute columns, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise DataError("attributes must be finite")
        return data

    def _features(self, points, gamma=None):
        points = np.atleast_2d(points)
        if self.kernel == "linear":
            return points @ self.anchors.T
        gamma = self.gamma if gamma is None else gamma
        sq = ((points[:, None, :] - self.anchors[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(under="ignore"):
            return np.exp(-sq / (2.0 * gamma ** 2))

    def _univariate_log_normal(self, resid):
        return (-0.5 * LOG_2PI - np.log(self.sigma) - 0.5 * (resid / self.sigma) ** 2).sum(axis=-1)

    def log_marginal(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DataError("attributes must be finite")
        return float(self._univariate_log_normal(x - self.mu))

    def log_conditional(self, x_child, x_parent):
        x_child = np.asarray(x_child, dtype=float)
        mean = self._features(x_parent)[0] @ self.alpha + self.mu
        return float(self._univariate_log_normal(x_child - mean))

    def log_marginal_vector(self, data):
        return self._univariate_log_normal(data - self.mu)

    def log_conditional_matrix(self, data, gamma=None):
        means = self._features(data, gamma=gamma) @ self.alpha + self.mu
        resid = data[:, None, :] - means[None, :, :]
        out = self._univariate_log_normal(resid)
        np.fill_diagonal(out, -np.inf)
        return out

    def param_vector(self):
        parts = [self.alpha.ravel(), self.mu, np.log(self.sigma)]
        if self.kernel == "rbf":
            parts.append(np.array([np.log(self.gamma)]))
        return np.concatenate(parts)

    def with_params(self, vector):
        vector = np.asarray(vector, dtype=float)
        n, d = self.alpha.shape
        alpha = vector[:n * d].reshape(n, d)
        mu = vector[n * d:n * d + d]
        sigma = np.exp(vector[n * d + d:n * d + 2 * d])
        gamma = np.exp(vector[-1]) if self.kernel == "rbf" else None
        return KernelModel(self.anchors, alpha, mu, sigma, kernel=self.kernel,
                           gamma=gamma, alpha_penalty=self.alpha_penalty)

    def penalty(self, vector):
        n, d = self.alpha.shape
        grad = np.zeros_like(vector)
        alpha_flat = vector[:n * d]
        grad[:n * d] = -2.0 * self.alpha_penalty * alpha_flat
        return float(-self.alpha_penalty * (alpha_flat ** 2).sum()), grad

    def log_weight_gradients(self, data):
        size, d = data.shape
        n = self.anchors.shape[0]
        feats = self._features(data)
        means = feats @ self.alpha + self.mu
        resid = data[:, None, :] - means[None, :, :]
        score = resid / self.sigma ** 2
        total = n * d + 2 * d + (1 if self.kernel == "rbf" else 0)
        d_beta = np.zeros((total, size, size))
        d_beta[:n * d] = np.einsum("uvd,vt->tduv", score, feats).reshape(n * d, size, size)
        d_beta[n * d:n * d + d] = score.transpose(2, 0, 1)
        d_beta[n * d + d:n * d + 2 * d] = (resid * score - 1.0).transpose(2, 0, 1)
        if self.kernel == "rbf":
            step = 1e-6
            hi = self.log_conditional_matrix(data, gamma=self.gamma * np.exp(step))
            lo = self.log_conditional_matrix(data, gamma=self.gamma * np.exp(-step))
            np.fill_diagonal(hi, 0.0)
            np.fill_diagonal(lo, 0.0)
            diff = (hi - lo) / (2.0 * step)
            d_beta[-1] = diff
        for block in d_beta:
            np.fill_diagonal(block, 0.0)

        d_roots = np.zeros((total, size))
        resid0 = data - self.mu
        d_roots[n * d:n * d + d] = (resid0 / self.sigma ** 2).T
        d_roots[n * d + d:n * d + 2 * d] = ((resid0 / self.sigma) ** 2 - 1.0).T
        return d_beta, d_roots

    def sample_root(self, rng):
        return self.mu + self.sigma * rng.standard_normal(self.dim)

    def sample_child(self, x_parent, rng):
        mean = self._features(x_parent)[0] @ self.alpha + self.mu
        return mean + self.sigma * rng.standard_normal(self.dim)


def kernel_log_conditional(model: KernelModel, x_child, x_parent) -> float:
    return model.log_conditional(x_child, x_parent)


def kernel_init_iid(data, kernel="rbf", gamma=None, alpha_penalty=1e-3) -> KernelModel:
    """Seed kernel model anchored at the training rows, with zero regression
    weights (conditional = marginal) and per-dimension moment-matched
    mu/sigma. The RBF bandwidth defaults to the median pairwise distance."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if gamma is None and kernel == "rbf":
        dists = np.sqrt(((data[:, None, :] - data[None, :, :]) ** 2).sum(axis=2))
        off = dists[~np.eye(len(data), dtype=bool)]
        gamma = float(np.median(off)) or 1.0
    sigma = data.std(axis=0, ddof=1)
    sigma[sigma == 0] = 1e-6
    return KernelModel(anchors=data, alpha=np.zeros_like(data), mu=data.mean(axis=0),
                       sigma=sigma, kernel=kernel, gamma=gamma,
                       alpha_penalty=alpha_penalty)
