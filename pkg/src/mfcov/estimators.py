"""Single- and multi-fidelity covariance estimators over coupled samples."""

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import DefinitenessError, HierarchyError
from .spd import (
    frechet_mean_log_euclidean,
    spd_log,
    spd_pow,
    sym_exp,
    symmetrize,
    truncate_eigenvalues,
)

__all__ = [
    "MeanMode",
    "CoupledSampleHierarchy",
    "DEFAULT_DELTA",
    "sample_covariance",
    "emf_estimate",
    "lemf_log_terms",
    "lemf_estimate",
    "lemf_estimate_frechet",
    "truncated_emf_estimate",
]

DEFAULT_DELTA = 1e-16


class MeanMode(enum.Enum):
    """How sample covariances are centered and normalized.

    ``KNOWN_ZERO``: no centering, ``1/n``. ``SAMPLE_MEAN``: centered by the
    sample mean, ``1/(n-1)``; the two covariances of a level share the mean
    of the full level set. ``SUBSET_MEAN``: like ``SAMPLE_MEAN`` but every
    covariance is centered by the mean of its own sample subset.
    """

    KNOWN_ZERO = "known_zero"
    SAMPLE_MEAN = "sample_mean"
    SUBSET_MEAN = "subset_mean"

    @property
    def centered(self):
        return self is not MeanMode.KNOWN_ZERO

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown mean mode {value!r}; expected one of {[m.value for m in cls]}"
            ) from None


@dataclass(frozen=True)
class CoupledSampleHierarchy:
    """Per-level sample arrays sharing their leading events.

    ``samples[l]`` has shape ``(n_l, d)``; row ``i`` of every level was
    generated from the same underlying event. Counts must be nondecreasing
    in the level index. A level may be empty (``n_l = 0``) only if every
    level before it is empty too.
    """

    samples: tuple

    def __post_init__(self):
        arrays = tuple(np.asarray(s, dtype=float) for s in self.samples)
        if not arrays:
            raise HierarchyError("hierarchy needs at least one level")
        d = None
        for lvl, arr in enumerate(arrays):
            if arr.ndim == 1 and arr.size == 0:
                arr = arr.reshape(0, d or 0)
            if arr.ndim != 2:
                raise HierarchyError(f"level {lvl}: samples must be a 2-D array (n, d)")
            if arr.shape[0] and d is None:
                d = arr.shape[1]
            if arr.shape[0] and arr.shape[1] != d:
                raise HierarchyError(
                    f"level {lvl}: vectors have length {arr.shape[1]}, expected {d}"
                )
        counts = [a.shape[0] for a in arrays]
        for lvl in range(1, len(counts)):
            if counts[lvl] < counts[lvl - 1]:
                raise HierarchyError(
                    f"n_{lvl} = {counts[lvl]} < n_{lvl - 1} = {counts[lvl - 1]}; "
                    "sample counts must be nondecreasing across levels"
                )
        if d is None:
            raise HierarchyError("hierarchy contains no samples")
        arrays = tuple(a.reshape(a.shape[0], d) for a in arrays)
        object.__setattr__(self, "samples", arrays)

    @property
    def dim(self):
        return self.samples[-1].shape[1]

    @property
    def num_levels(self):
        return len(self.samples)

    @property
    def counts(self):
        return tuple(s.shape[0] for s in self.samples)

    def level(self, lvl):
        return self.samples[lvl]

    def select(self, levels):
        """Sub-hierarchy restricted to the given (increasing) level indices."""
        return CoupledSampleHierarchy(tuple(self.samples[i] for i in levels))


def _moment(Y, center, mode):
    """Second moment of rows of ``Y`` about ``center`` with mode normalization."""
    n = Y.shape[0]
    Z = Y - center if center is not None else Y
    denom = n - 1 if mode.centered else n
    return symmetrize(Z.T @ Z / denom)


def sample_covariance(samples, mode=MeanMode.KNOWN_ZERO):
    """Sample covariance of the rows of ``samples``.

    ``KNOWN_ZERO``: ``(1/n) sum y y^T``. Centered modes:
    ``(1/(n-1)) sum (y - ybar)(y - ybar)^T``.
    """
    mode = MeanMode.parse(mode)
    Y = np.atleast_2d(np.asarray(samples, dtype=float))
    n = Y.shape[0]
    if n == 0:
        raise ValueError("sample covariance of an empty sample set")
    if mode.centered:
        if n < 2:
            raise ValueError(f"{mode.value} mode needs at least 2 samples")
        return _moment(Y, Y.mean(axis=0), mode)
    return _moment(Y, None, mode)


def _level_pair(h, lvl, mode):
    """The two covariances of level ``lvl``: full set and coupled prefix.

    In SAMPLE_MEAN mode both are centered by the mean of the full level set;
    in SUBSET_MEAN mode each is centered by its own mean.
    """
    Y = h.samples[lvl]
    n_prev = h.counts[lvl - 1]
    if n_prev == 0:
        raise HierarchyError(f"level {lvl - 1} is empty; drop it before estimating")
    if mode.centered and n_prev < 2:
        raise HierarchyError(f"level {lvl - 1}: {mode.value} mode needs n >= 2")
    if mode is MeanMode.SAMPLE_MEAN:
        center = Y.mean(axis=0)
        return _moment(Y, center, mode), _moment(Y[:n_prev], center, mode)
    if mode is MeanMode.SUBSET_MEAN:
        prefix = Y[:n_prev]
        return _moment(Y, Y.mean(axis=0), mode), _moment(prefix, prefix.mean(axis=0), mode)
    return _moment(Y, None, mode), _moment(Y[:n_prev], None, mode)


def _check_alphas(h, alphas):
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if alphas.size == 0 and h.num_levels == 1:
        return alphas
    if alphas.shape != (h.num_levels - 1,):
        raise HierarchyError(
            f"need {h.num_levels - 1} control-variate weights, got {alphas.size}"
        )
    return alphas


def _check_base(h):
    if h.counts[0] == 0:
        raise HierarchyError("level 0 is empty")


def emf_estimate(h, alphas, mode=MeanMode.KNOWN_ZERO):
    """Euclidean multi-fidelity estimate.

    ``C0 + sum_l alpha_l (C_l[n_l] - C_l[n_{l-1}])``. The result is symmetric
    and may be indefinite; it is returned as is.
    """
    mode = MeanMode.parse(mode)
    _check_base(h)
    alphas = _check_alphas(h, alphas)
    est = sample_covariance(h.samples[0], mode)
    for lvl in range(1, h.num_levels):
        full, prefix = _level_pair(h, lvl, mode)
        est = est + alphas[lvl - 1] * (full - prefix)
    return symmetrize(est)


def _checked_log(C, lvl, which):
    try:
        return spd_log(C)
    except DefinitenessError as exc:
        label = "level 0" if lvl == 0 else f"level {lvl} ({which})"
        raise DefinitenessError(
            f"{label} sample covariance is not SPD (smallest eigenvalue "
            f"{exc.eigenvalue:.3g}); LEMF needs n_l > d at every level",
            eigenvalue=exc.eigenvalue,
            level=lvl,
            which=which,
        ) from exc


def lemf_log_terms(h, mode=MeanMode.KNOWN_ZERO):
    """Matrix logs of the constituent covariances.

    Returns ``(log C0, [(log C_l[n_l], log C_l[n_{l-1}]) for l >= 1])``.
    """
    mode = MeanMode.parse(mode)
    _check_base(h)
    base = _checked_log(sample_covariance(h.samples[0], mode), 0, "n_l")
    pairs = []
    for lvl in range(1, h.num_levels):
        full, prefix = _level_pair(h, lvl, mode)
        pairs.append((_checked_log(full, lvl, "n_l"), _checked_log(prefix, lvl, "n_prev")))
    return base, pairs


def lemf_estimate(h, alphas, mode=MeanMode.KNOWN_ZERO):
    """Log-Euclidean multi-fidelity estimate (always SPD).

    ``Exp(Log C0 + sum_l alpha_l (Log C_l[n_l] - Log C_l[n_{l-1}]))``.

    Raises
    ------
    DefinitenessError
        If a constituent sample covariance is not SPD; ``level`` and
        ``which`` identify it.
    """
    alphas = _check_alphas(h, alphas)
    base, pairs = lemf_log_terms(h, mode)
    acc = base
    for a, (full, prefix) in zip(alphas, pairs):
        acc = acc + a * (full - prefix)
    return sym_exp(acc)


def lemf_estimate_frechet(h, alphas, mode=MeanMode.KNOWN_ZERO):
    """LEMF estimate assembled as a weighted log-Euclidean Fréchet mean.

    The level differences ``D_l = C_l[n_l] (-) C_l[n_{l-1}]`` (order
    reversed when ``alpha_l < 0``) are averaged with the high-fidelity
    covariance under weights ``(1, |alpha_1|, ...)``. The Fréchet mean
    divides by the total weight ``W``, so every input is raised to the
    power ``W`` first; the result then coincides with :func:`lemf_estimate`.
    Levels with ``alpha_l = 0`` carry no weight and are skipped.
    """
    mode = MeanMode.parse(mode)
    alphas = _check_alphas(h, alphas)
    _check_base(h)
    C0 = sample_covariance(h.samples[0], mode)
    _checked_log(C0, 0, "n_l")
    mats, weights = [C0], [1.0]
    for lvl in range(1, h.num_levels):
        a = alphas[lvl - 1]
        full, prefix = _level_pair(h, lvl, mode)
        _checked_log(full, lvl, "n_l")
        _checked_log(prefix, lvl, "n_prev")
        if a == 0:
            continue
        D = sym_exp(spd_log(full) - spd_log(prefix))
        mats.append(D if a > 0 else spd_pow(D, -1.0))
        weights.append(abs(a))
    total = float(np.sum(weights))
    scaled = [spd_pow(M, total) for M in mats]
    return frechet_mean_log_euclidean(scaled, weights)


def truncated_emf_estimate(h, alphas, mode=MeanMode.KNOWN_ZERO, delta=DEFAULT_DELTA):
    """EMF estimate with eigenvalues clamped below at ``delta``."""
    return truncate_eigenvalues(emf_estimate(h, alphas, mode), delta)
