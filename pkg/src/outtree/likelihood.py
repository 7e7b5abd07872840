"""The latent out-tree likelihood, its gradient, and gradient-ascent fitting.

For T rows the likelihood is Z / T^(T-1), where Z sums the factorized tree
likelihood over all T^(T-1) out-trees under a uniform structure prior. It
is exchangeable, and collapses to the iid likelihood whenever the
conditional ignores the parent and equals the marginal. Test data is scored
conditionally on the training rows through the ratio of two partition
functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import treemath
from .errors import DataError, NumericalFaultError, ZeroPartitionError
from .models import MutationModel, build_beta


@dataclass(frozen=True)
class TestScore:
    """Train-conditioned test log-likelihood and its three components."""

    score: float
    log_z_union: float
    log_z_train: float
    correction: float


@dataclass
class FitIteration:
    index: int
    objective: float
    step: float
    grad_norm: float


@dataclass
class FitReport:
    """Trace of one gradient-ascent run; the objective trace is nondecreasing."""

    initial_objective: float
    final_objective: float
    iterations: list[FitIteration] = field(default_factory=list)
    reason: str = "max_iterations"
    model: MutationModel | None = None


def tdid_log_likelihood(data, model: MutationModel) -> float:
    """ln Z - (T - 1) ln T for the dataset under the model."""
    beta, roots = build_beta(data, model)
    lp = treemath.log_partition(beta, roots)
    size = beta.size
    return lp.log_z - (size - 1) * np.log(size)


def iid_log_likelihood(data, model: MutationModel) -> float:
    """Sum of marginal log densities (the likelihood with no tree coupling)."""
    data = model.validate_data(data)
    return float(model.log_marginal_vector(data).sum())


def _partition_gradient(beta, roots, d_beta, d_roots):
    """d ln Z / d theta from log-weight gradients and one shared inverse.

    Assembles the root-normalization term and the trace term
    tr(Qhat^-1 dQhat/dtheta) explicitly, including the quotient-rule
    contribution of the normalized root vector inside Qhat.
    """
    q_hat, p_adj, _ = treemath._scaled_augmented_parts(beta, roots)
    try:
        inv = np.linalg.inv(q_hat)
    except np.linalg.LinAlgError as exc:
        raise ZeroPartitionError("no out-tree has positive weight") from exc
    # ln Z decomposes (exactly, for any fixed row rescaling) into the
    # rescale constant + ln(sum_r adjusted p) + logdet(q_hat), so the
    # derivative may hold the row scales fixed
    root_term = d_roots @ p_adj
    # beta entries enter Qhat at (u+1, u+1) and (u+1, v+1)
    core = inv[1:, 1:]
    gain = np.diag(core)[:, None] - core.T
    w = beta.scaled * gain
    np.fill_diagonal(w, 0.0)
    trace_beta = np.einsum("puv,uv->p", d_beta, w)
    # the bordered root vector also moves with theta (quotient rule)
    border = inv[1:, 0] - inv[0, 1:]
    dp = p_adj * (d_roots - (d_roots @ p_adj)[:, None])
    trace_root = dp @ border
    return root_term + trace_beta + trace_root


def grad_tdid(data, model: MutationModel) -> np.ndarray:
    """Gradient of the out-tree log-likelihood in the flat parameter vector."""
    data = model.validate_data(data)
    beta, roots = build_beta(data, model)
    d_beta, d_roots = model.log_weight_gradients(data)
    return _partition_gradient(beta, roots, d_beta, d_roots)


def _objective(data, model, vector):
    value = tdid_log_likelihood(data, model)
    penalty, _ = model.penalty(vector)
    return value + penalty


def fit_ml(data, model0: MutationModel, *, max_iters=500, grad_tol=1e-5,
           armijo_c=1e-4, step_floor=1e-12, holdout=None, early_stop=False,
           patience=10) -> FitReport:
    """Maximize the out-tree log-likelihood by backtracking gradient ascent.

    Steps halve until the Armijo condition holds; only ascent steps are
    accepted, so the reported trace is nondecreasing. Each line search
    starts at min(1, 4 * previous accepted step), which keeps trial counts
    low on badly scaled problems while never exceeding the unit step.
    Stops on a small gradient sup-norm, the iteration cap, or a failed line
    search at the step floor (recorded as the convergence reason, not an
    error). With ``early_stop=True`` and a holdout set, fitting stops once
    the held-out score has not improved for ``patience`` accepted steps and
    the best-scoring model is returned.
    """
    if max_iters < 0 or grad_tol <= 0:
        raise ValueError("max_iters must be >= 0 and grad_tol positive")
    data = model0.validate_data(data)
    model = model0
    vector = model.param_vector()
    objective = _objective(data, model, vector)
    report = FitReport(initial_objective=objective, final_objective=objective,
                       model=model)
    use_holdout = early_stop and holdout is not None
    if use_holdout:
        best_holdout = test_log_likelihood(data, holdout, model).score
        best_model, best_objective, since_best = model, objective, 0

    last_step = 1.0
    for index in range(1, max_iters + 1):
        penalty_grad = model.penalty(vector)[1]
        grad = grad_tdid(data, model) + penalty_grad
        grad_norm = float(np.abs(grad).max())
        if grad_norm < grad_tol:
            report.reason = "gradient_tolerance"
            break
        step = min(1.0, 4.0 * last_step)
        grad_sq = float(grad @ grad)
        accepted = False
        while step >= step_floor:
            candidate_vec = vector + step * grad
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    candidate = model.with_params(candidate_vec)
                    value = _objective(data, candidate, candidate_vec)
            except (ZeroPartitionError, NumericalFaultError, DataError,
                    ValueError, np.linalg.LinAlgError):
                # the trial step left the numerically representable region
                # (overflowed parameters or a vanished partition function);
                # reject it and shorten the step
                value = -np.inf
            if np.isfinite(value) and value >= objective + armijo_c * step * grad_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            report.reason = "line_search_failure"
            break
        last_step = step
        vector, model, objective = candidate_vec, candidate, value
        report.iterations.append(FitIteration(index, objective, step, grad_norm))
        if use_holdout:
            holdout_score = test_log_likelihood(data, holdout, model).score
            if holdout_score > best_holdout:
                best_holdout, best_model, best_objective = holdout_score, model, objective
                since_best = 0
            else:
                since_best += 1
                if since_best >= patience:
                    report.reason = "early_stop"
                    model, objective = best_model, best_objective
                    break
    report.model = model
    report.final_objective = objective
    return report


def test_log_likelihood(train, test, model: MutationModel) -> TestScore:
    """ln p(test | train) under the fitted model.

    Computed as ln Z over the union minus ln Z over the training rows plus
    the tree-count correction (T-1) ln T - (T+U-1) ln(T+U). The union is
    ordered train rows first; exchangeability makes the order immaterial.
    """
    train = model.validate_data(train)
    test = model.validate_data(test)
    t, u = len(train), len(test)
    if t < 1 or t + u < 2:
        raise ValueError("need a nonempty train set and at least 2 rows overall")
    union = np.concatenate([train, test], axis=0)
    beta_union, roots_union = build_beta(union, model)
    log_z_union = treemath.log_partition(beta_union, roots_union).log_z
    if t == 1:
        log_z_train = float(model.log_marginal_vector(train)[0])
    else:
        beta_train, roots_train = build_beta(train, model)
        log_z_train = treemath.log_partition(beta_train, roots_train).log_z
    correction = (t - 1) * np.log(t) - (t + u - 1) * np.log(t + u)
    return TestScore(score=log_z_union - log_z_train + correction,
                     log_z_union=log_z_union, log_z_train=log_z_train,
                     correction=float(correction))
