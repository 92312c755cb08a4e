"""Coupled multi-fidelity data sources.

A model maps one underlying random event (a row of "inputs") to outputs at
every fidelity level. ``sample_hierarchy`` draws the events once and
evaluates level ``l`` only on the first ``n_l`` of them, which is what couples
the levels.
"""

import abc

import numpy as np

from .allocation import CostModel, closed_form_moments_gaussian
from .estimators import CoupledSampleHierarchy
from .exceptions import HierarchyError, NumericalError
from .spd import as_spd, sym_eig

__all__ = [
    "Model",
    "GaussianNoiseHierarchy",
    "HeatConduction1D",
    "TwoClassGaussian",
    "APPENDIX_SIGMA",
    "gaussian_preset",
    "two_class_preset",
    "heat_preset",
    "draw_event",
    "sample_hierarchy",
    "solve_heat_fd",
    "solve_heat_fd_batch",
    "heat_observation_points",
    "make_rng",
]

# 4x4 covariance of the motivating Gaussian example, as printed (2 decimals)
APPENDIX_SIGMA = np.array(
    [
        [2.52, -0.17, 0.67, -0.98],
        [-0.17, 0.64, -0.29, 0.35],
        [0.67, -0.29, 0.49, -0.52],
        [-0.98, 0.35, -0.52, 1.31],
    ]
)


def make_rng(seed):
    """``numpy.random.Generator`` from an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Model(abc.ABC):
    """A hierarchy of coupled data sources, level 0 being the reference."""

    output_dim: int
    costs: CostModel

    @property
    def num_levels(self):
        return len(self.costs)

    @property
    def true_covariance(self):
        """Covariance of the level-0 output, or None if unknown."""
        return None

    @abc.abstractmethod
    def draw_inputs(self, rng, count):
        """Draw ``count`` independent events as rows of an array."""

    @abc.abstractmethod
    def evaluate(self, level, inputs):
        """Outputs of ``level`` for each event row; shape ``(rows, d)``."""

    def draw_event(self, rng):
        """Outputs of every level for one event."""
        w = self.draw_inputs(make_rng(rng), 1)
        return [self.evaluate(l, w)[0] for l in range(self.num_levels)]

    def sample_hierarchy(self, n, seed):
        """Coupled samples with ``n[l]`` outputs at level ``l``.

        Events are drawn once (``max(n)`` of them); level ``l`` is evaluated
        on the first ``n[l]`` only, so expensive levels are never run beyond
        their count.
        """
        n = [int(v) for v in n]
        if len(n) != self.num_levels:
            raise HierarchyError(f"need {self.num_levels} sample counts, got {len(n)}")
        if any(v < 0 for v in n):
            raise HierarchyError("sample counts must be nonnegative")
        for l in range(1, len(n)):
            if n[l] < n[l - 1]:
                raise HierarchyError(
                    f"n_{l} = {n[l]} < n_{l - 1} = {n[l - 1]}; counts must be nondecreasing"
                )
        rng = make_rng(seed)
        w = self.draw_inputs(rng, max(n))
        levels = []
        for l, k in enumerate(n):
            if k:
                levels.append(self.evaluate(l, w[:k]))
            else:
                levels.append(np.empty((0, self.output_dim)))
        return CoupledSampleHierarchy(tuple(levels))

    def cost(self, n):
        return self.costs.total(n)


def draw_event(model, rng):
    return model.draw_event(rng)


def sample_hierarchy(model, n, seed):
    return model.sample_hierarchy(n, seed)


def _psd_sqrt(M):
    eig = sym_eig(M)
    return eig.reconstruct(np.sqrt(np.clip(eig.eigenvalues, 0.0, None)))


class GaussianNoiseHierarchy(Model):
    """``y_l = y + eps_l`` with ``y ~ N(mean, Sigma)``, ``eps_l ~ N(0, Gamma_l)``.

    All noises are mutually independent and independent of ``y``. An event
    is a standard-normal row of length ``(L+1) d``: the first block drives
    ``y``, block ``l`` drives ``eps_l``.
    """

    def __init__(self, Sigma, Gammas, costs, mean=None):
        self.Sigma = as_spd(Sigma)
        d = self.Sigma.shape[0]
        self.Gammas = []
        for G in Gammas:
            G = np.asarray(G, dtype=float)
            if G.shape != (d, d):
                raise ValueError(f"noise covariance shape {G.shape} != {(d, d)}")
            if np.linalg.eigvalsh(0.5 * (G + G.T))[0] < -1e-12 * max(1.0, np.abs(G).max()):
                raise ValueError("noise covariances must be positive semidefinite")
            self.Gammas.append(0.5 * (G + G.T))
        self.costs = costs if isinstance(costs, CostModel) else CostModel(costs)
        if len(self.costs) != len(self.Gammas) + 1:
            raise ValueError("need one cost per level (L+1)")
        self.output_dim = d
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        self._sqrt_sigma = _psd_sqrt(self.Sigma)
        self._sqrt_gammas = [_psd_sqrt(G) for G in self.Gammas]

    @property
    def true_covariance(self):
        return self.Sigma.copy()

    def level_covariance(self, level):
        return self.Sigma if level == 0 else self.Sigma + self.Gammas[level - 1]

    def closed_form_moments(self):
        return closed_form_moments_gaussian(self.Sigma, self.Gammas)

    def draw_inputs(self, rng, count):
        return rng.standard_normal((count, self.num_levels * self.output_dim))

    def evaluate(self, level, inputs):
        d = self.output_dim
        y = self.mean + inputs[:, :d] @ self._sqrt_sigma
        if level == 0:
            return y
        z = inputs[:, level * d : (level + 1) * d]
        return y + z @ self._sqrt_gammas[level - 1]


def gaussian_preset(Sigma=None, noise_scales=(0.1, 0.5, 1.0), costs=(1.0, 1e-2, 1e-3, 1e-4)):
    """Four-level noise-corruption hierarchy of the motivating example."""
    Sigma = APPENDIX_SIGMA if Sigma is None else np.asarray(Sigma, dtype=float)
    d = Sigma.shape[0]
    return GaussianNoiseHierarchy(Sigma, [s * np.eye(d) for s in noise_scales], costs)


# ---------------------------------------------------------------------------
# heat conduction


def heat_observation_points(count=10):
    """Equally spaced interior points ``i / (count + 1)``."""
    return np.arange(1, count + 1) / (count + 1)


def _log_conductivity(x, thetas):
    k = np.arange(1, thetas.shape[1] + 1)
    return thetas @ np.sin(2.0 * np.pi * np.outer(k, x))


def solve_heat_fd_batch(thetas, m, obs_points=None):
    r"""Second-order finite differences for ``-(exp(kappa) u')' = 1`` on (0, 1).

    ``u(0) = 0``, ``u(1) = 1``, ``kappa(x) = sum_k theta_k sin(2 pi k x)``.
    The conservative scheme uses ``m`` interior nodes, ``h = 1/(m+1)`` and
    conductivities at cell midpoints. Its tridiagonal system is solved
    exactly by integrating the discrete flux: the flux through face
    ``j+1/2`` is ``F_0 - j h`` and ``u_{j+1} - u_j = h F_{j+1/2} / a_{j+1/2}``,
    with ``F_0`` fixed by the right boundary value.

    Parameters
    ----------
    thetas : ndarray, shape (k, p)
        Sine coefficients, one row per solve.
    m : int
        Number of interior grid points, at least 16.
    obs_points : ndarray, optional
        Observation locations; defaults to ``i/11, i = 1..10``. Values
        between nodes are linearly interpolated.

    Returns
    -------
    ndarray, shape (k, len(obs_points))
    """
    m = int(m)
    if m < 16:
        raise ValueError(f"need at least 16 interior grid points, got {m}")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    x_obs = heat_observation_points() if obs_points is None else np.asarray(obs_points, float)
    h = 1.0 / (m + 1)
    faces = (np.arange(m + 1) + 0.5) * h
    inv_a = np.exp(-_log_conductivity(faces, thetas))  # (k, m+1)
    j = np.arange(m + 1)
    denom = h * inv_a.sum(axis=1)
    if np.any(~np.isfinite(denom)) or np.any(denom <= 0):
        raise NumericalError("singular heat system: non-finite or vanishing conductivity")
    flux0 = (1.0 + h * h * (inv_a @ j)) / denom
    flux = flux0[:, None] - j * h
    u = np.zeros((thetas.shape[0], m + 2))
    np.cumsum(h * flux * inv_a, axis=1, out=u[:, 1:])
    u[:, -1] = 1.0  # exact by construction up to rounding

    pos = x_obs * (m + 1)
    left = np.floor(pos).astype(int)
    frac = pos - left
    snapped = np.isclose(frac, 0.0, atol=1e-12) | np.isclose(frac, 1.0, atol=1e-12)
    left = np.where(np.isclose(frac, 1.0, atol=1e-12), left + 1, left)
    frac = np.where(snapped, 0.0, frac)
    right = np.minimum(left + 1, m + 1)
    return (1.0 - frac) * u[:, left] + frac * u[:, right]


def solve_heat_fd(theta, m, obs_points=None):
    """Single-parameter version of :func:`solve_heat_fd_batch`."""
    return solve_heat_fd_batch(np.atleast_2d(theta), m, obs_points)[0]


class HeatConduction1D(Model):
    """Steady 1-D heat flow with random log-conductivity.

    Level ``l`` solves on ``grid_sizes[l]`` interior points (descending) and
    costs ``grid_sizes[l]`` unless ``costs`` is given. ``theta ~ N(0, I_4)``.
    """

    theta_dim = 4

    def __init__(self, grid_sizes=(4096, 256), costs=None, chunk=1024):
        self.grid_sizes = tuple(int(m) for m in grid_sizes)
        if any(a < b for a, b in zip(self.grid_sizes, self.grid_sizes[1:])):
            raise ValueError("grid sizes must be nonincreasing (level 0 finest)")
        self.costs = CostModel(self.grid_sizes if costs is None else costs)
        if len(self.costs) != len(self.grid_sizes):
            raise ValueError("need one cost per grid")
        self.output_dim = 10
        self.obs_points = heat_observation_points(self.output_dim)
        self.chunk = int(chunk)

    def draw_inputs(self, rng, count):
        return rng.standard_normal((count, self.theta_dim))

    def evaluate(self, level, inputs):
        m = self.grid_sizes[level]
        out = np.empty((inputs.shape[0], self.output_dim))
        for s in range(0, inputs.shape[0], self.chunk):
            out[s : s + self.chunk] = solve_heat_fd_batch(inputs[s : s + self.chunk], m, self.obs_points)
        return out


PAPER_HEAT_GRIDS = (65536, 1024)
DESK_HEAT_GRIDS = (4096, 256)


def heat_preset(scale="desk"):
    grids = {"desk": DESK_HEAT_GRIDS, "paper": PAPER_HEAT_GRIDS}[scale]
    return HeatConduction1D(grids)


# ---------------------------------------------------------------------------
# two-class source for metric learning


class TwoClassGaussian:
    """Two class-conditional Gaussian hierarchies sharing costs.

    Stands in for a labelled simulator: class ``i`` data come from
    ``classes[i]``, whose means differ in a single coordinate.
    """

    def __init__(self, classes):
        if len(classes) != 2:
            raise ValueError("need exactly two classes")
        c0, c1 = classes
        if c0.output_dim != c1.output_dim or c0.num_levels != c1.num_levels:
            raise ValueError("classes must share dimension and level count")
        if not np.allclose(c0.costs.costs, c1.costs.costs):
            raise ValueError("classes must share the cost model")
        self.classes = tuple(classes)
        self.output_dim = c0.output_dim
        self.costs = c0.costs

    @property
    def num_levels(self):
        return len(self.costs)

    @property
    def mean_gap(self):
        return self.classes[0].mean - self.classes[1].mean


def two_class_preset(dim=6, gap=1.0, noise=0.1, costs=(65536.0, 4096.0), seed=20230224):
    """Synthetic two-class, two-level Gaussian source.

    Class covariances are fixed Wishart draws (from ``seed``) normalized to
    unit mean eigenvalue; class means differ by ``gap`` in the first
    coordinate; the surrogate adds isotropic noise of variance ``noise``.
    """
    rng = np.random.default_rng(seed)
    classes = []
    for i in range(2):
        A = rng.standard_normal((dim, dim))
        Sigma = A.T @ A / dim + 0.05 * np.eye(dim)
        Sigma /= np.trace(Sigma) / dim
        mean = np.zeros(dim)
        mean[0] = gap if i == 0 else 0.0
        classes.append(GaussianNoiseHierarchy(Sigma, [noise * np.eye(dim)], costs, mean=mean))
    return TwoClassGaussian(classes)
