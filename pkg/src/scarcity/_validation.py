"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_groups(groups, n_samples):
    """Return cluster labels as a 1-d array of length ``n_samples``.

    ``None`` puts every observation in its own cluster.
    """
    if groups is None:
        return np.arange(n_samples)
    groups = np.asarray(groups)
    if groups.ndim != 1:
        raise ValueError("groups must be one-dimensional, got shape %r" % (groups.shape,))
    check_consistent_length(groups, np.empty(n_samples))
    return groups


def check_weights(weights, n_samples):
    if weights is None:
        return np.ones(n_samples)
    weights = check_array(weights, ensure_2d=False, dtype=np.float64)
    check_consistent_length(weights, np.empty(n_samples))
    if np.any(weights <= 0):
        raise ValueError("weights must be strictly positive")
    return weights


def check_finite_scalar(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError("%s must be a finite number, got %r" % (name, value))
    return float(value)


def check_positive(value, name, strict=True):
    value = check_finite_scalar(value, name)
    if value < 0 or (strict and value == 0):
        raise ValueError("%s must be %s, got %r" % (name, "> 0" if strict else ">= 0", value))
    return value


def factorize(labels):
    """Map arbitrary labels to dense integer codes ``0..G-1`` (order of first sight)."""
    labels = np.asarray(labels)
    _, first, codes = np.unique(labels, return_index=True, return_inverse=True)
    # renumber so codes follow first appearance, which keeps output stable
    order = np.argsort(first, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return remap[codes.ravel()], order.size
