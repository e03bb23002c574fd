"""Function oracles for objective blocks.

Every oracle exposes value, gradient, proximal map and the exact
minimizer of f(x) + a'x + x'Hx/2 where its kind allows it, together with
declared constants mu (strong convexity) and ell (gradient Lipschitz).
Oracles are immutable after construction and safe to share between
threads.
"""

from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy import linalg
from scipy.special import expit

from config.logging_config import get_logger
from state.errors import CapabilityError, ConfigError, DimensionError


logger = get_logger(__name__)

FD_STEP = 1e-6
NEWTON_TOLERANCE = 1e-12
NEWTON_MAX_ITERS = 100
PSD_TOLERANCE = 1e-10


class FunctionOracle(ABC):
    """Objective block f: R^d -> R.

    Attributes:
        kind: Oracle kind name.
        dimension: Input dimension d.
        mu: Strong convexity constant (0 when merely convex).
        ell: Gradient Lipschitz constant (inf for nonsmooth kinds).
        convex: Whether f is convex.
    """

    kind: str = "abstract"
    convex: bool = True

    def __init__(self, dimension: int, mu: float, ell: float) -> None:
        self.dimension = int(dimension)
        self.mu = float(mu)
        self.ell = float(ell)

    @property
    def smooth(self) -> bool:
        """Whether the gradient exists everywhere."""
        return bool(np.isfinite(self.ell))

    @property
    def kappa(self) -> float:
        """Condition number ell/mu, inf when mu = 0."""
        return self.ell / self.mu if self.mu > 0 else float("inf")

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> float:
        """f(x)."""

    @abstractmethod
    def grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of f at x."""

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        """argmin_x f(x) + ||x - v||^2 / (2 step)."""
        raise CapabilityError(f"Oracle kind '{self.kind}' has no proximal map")

    def argmin_shifted(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        """argmin_x f(x) + a'x + x'Hx/2."""
        raise CapabilityError(f"Oracle kind '{self.kind}' has no exact shifted minimizer")

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(Q, q) when f(x) = x'Qx/2 + q'x exactly, else None."""
        return None

    def check_dimension(self, x: np.ndarray, name: str = "x") -> np.ndarray:
        """Return x as a float vector of the oracle's dimension."""
        arr = np.asarray(x, dtype=float)
        if arr.shape != (self.dimension,):
            raise DimensionError(
                f"{name} has shape {arr.shape}, oracle '{self.kind}' expects ({self.dimension},)"
            )
        return arr

    def _check_shift(self, a: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = self.check_dimension(a, "a")
        h = np.asarray(h, dtype=float)
        if h.shape != (self.dimension, self.dimension):
            raise DimensionError(
                f"H has shape {h.shape}, expected ({self.dimension}, {self.dimension})"
            )
        return a, h


class QuadraticOracle(FunctionOracle):
    """f(x) = x'Qx/2 + q'x with Q symmetric positive semidefinite."""

    kind = "quadratic"

    def __init__(self, Q: np.ndarray, q: np.ndarray | None = None) -> None:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise DimensionError(f"Q must be square, got shape {Q.shape}")
        if np.max(np.abs(Q - Q.T), initial=0.0) > PSD_TOLERANCE * max(1.0, np.abs(Q).max()):
            raise ConfigError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)
        eigenvalues = np.linalg.eigvalsh(Q)
        if eigenvalues[0] < -PSD_TOLERANCE * max(1.0, abs(eigenvalues[-1])):
            raise ConfigError(f"Q must be positive semidefinite (lambda_min = {eigenvalues[0]:.3e})")
        d = Q.shape[0]
        q = np.zeros(d) if q is None else np.asarray(q, dtype=float).reshape(-1)
        if q.shape != (d,):
            raise DimensionError(f"q has shape {q.shape}, expected ({d},)")
        super().__init__(d, mu=max(0.0, eigenvalues[0]), ell=max(0.0, eigenvalues[-1]))
        self.Q = Q
        self.q = q

    def evaluate(self, x: np.ndarray) -> float:
        x = self.check_dimension(x)
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = self.check_dimension(x)
        return self.Q @ x + self.q

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        v = self.check_dimension(v, "v")
        _check_step(step)
        return np.linalg.solve(np.eye(self.dimension) + step * self.Q, v - step * self.q)

    def argmin_shifted(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        a, h = self._check_shift(a, h)
        return _solve_positive_definite(self.Q + h, -(self.q + a), self.kind)

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray]:
        return self.Q, self.q


class LinearOracle(FunctionOracle):
    """f(x) = c'x."""

    kind = "linear"

    def __init__(self, c: np.ndarray) -> None:
        c = np.asarray(c, dtype=float).reshape(-1)
        super().__init__(c.shape[0], mu=0.0, ell=0.0)
        self.c = c

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.c @ self.check_dimension(x))

    def grad(self, x: np.ndarray) -> np.ndarray:
        self.check_dimension(x)
        return self.c.copy()

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        v = self.check_dimension(v, "v")
        _check_step(step)
        return v - step * self.c

    def argmin_shifted(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        a, h = self._check_shift(a, h)
        return _solve_positive_definite(h, -(self.c + a), self.kind)

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((self.dimension, self.dimension)), self.c


class LogisticOracle(FunctionOracle):
    """Regularized logistic loss (1/m) sum log(1 + exp(-y_i a_i'w)) + l2 ||w||^2 / 2.

    Labels are in {-1, +1}. The proximal map and the shifted minimizer
    are computed by damped Newton iterations.
    """

    kind = "logistic"

    def __init__(self, features: np.ndarray, labels: np.ndarray, l2: float = 0.0) -> None:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.asarray(labels, dtype=float).reshape(-1)
        if features.shape[0] != labels.shape[0]:
            raise DimensionError(
                f"{features.shape[0]} samples but {labels.shape[0]} labels"
            )
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ConfigError("Logistic labels must be -1 or +1")
        if l2 < 0:
            raise ConfigError(f"l2 coefficient must be nonnegative, got {l2}")
        m = features.shape[0]
        ell = float(np.linalg.eigvalsh(features.T @ features)[-1]) / (4.0 * m) + l2
        super().__init__(features.shape[1], mu=l2, ell=ell)
        self.features = features
        self.labels = labels
        self.l2 = float(l2)

    def evaluate(self, x: np.ndarray) -> float:
        x = self.check_dimension(x)
        margins = self.labels * (self.features @ x)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * self.l2 * x @ x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = self.check_dimension(x)
        margins = self.labels * (self.features @ x)
        weights = self.labels * expit(-margins)
        return -(self.features.T @ weights) / self.labels.shape[0] + self.l2 * x

    def hessian(self, x: np.ndarray) -> np.ndarray:
        """Hessian of f at x."""
        x = self.check_dimension(x)
        s = expit(self.labels * (self.features @ x))
        curvature = s * (1.0 - s)
        m = self.labels.shape[0]
        return (self.features.T * curvature) @ self.features / m + self.l2 * np.eye(self.dimension)

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        v = self.check_dimension(v, "v")
        _check_step(step)
        return self._shifted_newton(-v / step, np.eye(self.dimension) / step, start=v)

    def argmin_shifted(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        a, h = self._check_shift(a, h)
        if self.l2 <= 0 and np.linalg.eigvalsh(h)[0] <= PSD_TOLERANCE:
            raise CapabilityError("Logistic loss plus H is not strictly convex; minimizer may not exist")
        return self._shifted_newton(a, h, start=np.zeros(self.dimension))

    def _shifted_newton(self, a: np.ndarray, h: np.ndarray, start: np.ndarray) -> np.ndarray:
        def objective(x: np.ndarray) -> float:
            return self.evaluate(x) + a @ x + 0.5 * x @ h @ x

        x = start.copy()
        for _ in range(NEWTON_MAX_ITERS):
            g = self.grad(x) + a + h @ x
            if np.linalg.norm(g) <= NEWTON_TOLERANCE:
                return x
            direction = -np.linalg.solve(self.hessian(x) + h, g)
            t, value = 1.0, objective(x)
            # Armijo backtracking
            while objective(x + t * direction) > value + 1e-4 * t * (g @ direction) and t > 1e-12:
                t *= 0.5
            x = x + t * direction
        logger.warning(f"Logistic Newton solve stopped at |g| = {np.linalg.norm(g):.3e}")
        return x


class PiecewiseQuadraticOracle(FunctionOracle):
    """Separable f(x) = sum_j d_j x_j^2/2 + c_j x_j + w_j |x_j - t_j|.

    Nonsmooth whenever some w_j > 0; its gradient then requires the
    ``"sign"`` subgradient rule.
    """

    kind = "pwlq"

    def __init__(
        self,
        d: np.ndarray,
        c: np.ndarray,
        w: np.ndarray,
        t: np.ndarray,
        subgradient_rule: str | None = None,
    ) -> None:
        d, c, w, t = (np.asarray(v, dtype=float).reshape(-1) for v in (d, c, w, t))
        if not (d.shape == c.shape == w.shape == t.shape):
            raise DimensionError("pwlq coefficient vectors must share one length")
        if np.any(d < 0) or np.any(w < 0):
            raise ConfigError("pwlq curvatures d and kink weights w must be nonnegative")
        if subgradient_rule not in (None, "sign"):
            raise ConfigError(f"Unknown subgradient rule '{subgradient_rule}'")
        ell = float(d.max(initial=0.0)) if np.all(w == 0) else float("inf")
        super().__init__(d.shape[0], mu=float(d.min()) if d.size else 0.0, ell=ell)
        self.d, self.c, self.w, self.t = d, c, w, t
        self.subgradient_rule = subgradient_rule

    def evaluate(self, x: np.ndarray) -> float:
        x = self.check_dimension(x)
        return float(np.sum(0.5 * self.d * x**2 + self.c * x + self.w * np.abs(x - self.t)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = self.check_dimension(x)
        if not self.smooth and self.subgradient_rule is None:
            raise CapabilityError("pwlq oracle with kinks needs subgradient_rule='sign'")
        return self.d * x + self.c + self.w * np.sign(x - self.t)

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        v = self.check_dimension(v, "v")
        _check_step(step)
        return self._separable_min(self.d + 1.0 / step, self.c - v / step)

    def argmin_shifted(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        a, h = self._check_shift(a, h)
        if np.any(h - np.diag(np.diag(h))):
            raise CapabilityError("pwlq shifted minimizer needs a diagonal H")
        curvature = self.d + np.diag(h)
        if np.any(curvature <= 0):
            raise CapabilityError("pwlq block plus H is not strictly convex; unbounded below")
        return self._separable_min(curvature, self.c + a)

    def _separable_min(self, curvature: np.ndarray, slope: np.ndarray) -> np.ndarray:
        # minimize curvature x^2/2 + slope x + w |x - t| coordinatewise
        shift = -slope / curvature - self.t
        threshold = self.w / curvature
        return self.t + np.sign(shift) * np.maximum(np.abs(shift) - threshold, 0.0)


class QuadraticSineOracle(FunctionOracle):
    """Nonconvex f(x) = x'Qx/2 + q'x + beta sum_j sin(omega x_j)."""

    kind = "quadratic_sine"
    convex = False

    def __init__(self, Q: np.ndarray, q: np.ndarray, beta: float, omega: float) -> None:
        self.base = QuadraticOracle(Q, q)
        self.beta = float(beta)
        self.omega = float(omega)
        super().__init__(
            self.base.dimension,
            mu=0.0,
            ell=self.base.ell + abs(self.beta) * self.omega**2,
        )

    def evaluate(self, x: np.ndarray) -> float:
        return self.base.evaluate(x) + self.beta * float(np.sum(np.sin(self.omega * x)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.base.grad(x) + self.beta * self.omega * np.cos(self.omega * x)


class ScaledOracle(FunctionOracle):
    """factor * base(x) for a positive factor."""

    def __init__(self, base: FunctionOracle, factor: float) -> None:
        if factor <= 0:
            raise ConfigError(f"Scale factor must be positive, got {factor}")
        super().__init__(base.dimension, mu=factor * base.mu, ell=factor * base.ell)
        self.base = base
        self.factor = float(factor)
        self.kind = base.kind
        self.convex = base.convex

    def evaluate(self, x: np.ndarray) -> float:
        return self.factor * self.base.evaluate(x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.factor * self.base.grad(x)

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        return self.base.prox(v, self.factor * step)

    def argmin_shifted(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        a, h = self._check_shift(a, h)
        return self.base.argmin_shifted(a / self.factor, h / self.factor)

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray] | None:
        form = self.base.quadratic_form()
        if form is None:
            return None
        return self.factor * form[0], self.factor * form[1]


class SeparableOracle(FunctionOracle):
    """Sum of blocks acting on consecutive slices of one vector."""

    kind = "separable"

    def __init__(self, blocks: Sequence[FunctionOracle]) -> None:
        if not blocks:
            raise ConfigError("A separable oracle needs at least one block")
        self.blocks = tuple(blocks)
        sizes = [b.dimension for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.convex = all(b.convex for b in self.blocks)
        super().__init__(
            int(self.offsets[-1]),
            mu=min(b.mu for b in self.blocks),
            ell=max(b.ell for b in self.blocks),
        )

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        """Per-block views of x."""
        return [x[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.blocks))]

    def block_slice(self, i: int) -> slice:
        """Slice of block i inside the stacked vector."""
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def evaluate(self, x: np.ndarray) -> float:
        x = self.check_dimension(x)
        return float(sum(b.evaluate(xi) for b, xi in zip(self.blocks, self.split(x))))

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = self.check_dimension(x)
        return np.concatenate([b.grad(xi) for b, xi in zip(self.blocks, self.split(x))])

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        v = self.check_dimension(v, "v")
        return np.concatenate([b.prox(vi, step) for b, vi in zip(self.blocks, self.split(v))])

    def argmin_shifted(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        a, h = self._check_shift(a, h)
        form = self.quadratic_form()
        if form is not None:
            Q, q = form
            return _solve_positive_definite(Q + h, -(q + a), self.kind)
        parts = []
        for i, block in enumerate(self.blocks):
            rows = self.block_slice(i)
            coupling = h[rows].copy()
            coupling[:, rows] = 0.0
            if np.any(coupling):
                raise CapabilityError(
                    "Exact joint minimization of non-quadratic blocks needs a block-diagonal H"
                )
            parts.append(block.argmin_shifted(a[rows], h[rows, rows]))
        return np.concatenate(parts)

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray] | None:
        forms = [b.quadratic_form() for b in self.blocks]
        if any(f is None for f in forms):
            return None
        return linalg.block_diag(*[f[0] for f in forms]), np.concatenate([f[1] for f in forms])


def evaluate(o: FunctionOracle, x: np.ndarray) -> float:
    """f(x).

    Raises:
        DimensionError: If x does not match the oracle's dimension.
    """
    return o.evaluate(o.check_dimension(x))


def grad(o: FunctionOracle, x: np.ndarray) -> np.ndarray:
    """Gradient of f at x.

    Raises:
        DimensionError: If x does not match the oracle's dimension.
        CapabilityError: For a nonsmooth kind without a subgradient rule.
    """
    return o.grad(o.check_dimension(x))


def prox(o: FunctionOracle, v: np.ndarray, step: float) -> np.ndarray:
    """argmin_x f(x) + ||x - v||^2 / (2 step).

    Raises:
        CapabilityError: For kinds without a proximal map.
    """
    _check_step(step)
    return o.prox(o.check_dimension(v, "v"), step)


def argmin_shifted(o: FunctionOracle, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Exact minimizer of f(x) + a'x + x'Hx/2.

    Raises:
        CapabilityError: If the shifted problem is unbounded below or the
            kind has no exact minimizer.
    """
    return o.argmin_shifted(a, h)


def finite_difference_grad(o: FunctionOracle, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient with step h."""
    x = o.check_dimension(x)
    g = np.empty(o.dimension)
    for j in range(o.dimension):
        e = np.zeros(o.dimension)
        e[j] = h
        g[j] = (o.evaluate(x + e) - o.evaluate(x - e)) / (2.0 * h)
    return g


@dataclass(frozen=True)
class CertificationReport:
    """Outcome of the sampling checks on declared constants.

    Attributes:
        gradient_ok: Gradients agree with central differences.
        cocoercive: Co-coercivity with 1/ell holds on every sampled pair.
        strongly_convex: The mu lower bound holds on every sampled pair.
        worst_gradient_error: Largest scaled finite-difference mismatch.
    """

    gradient_ok: bool
    cocoercive: bool
    strongly_convex: bool
    worst_gradient_error: float

    @property
    def passed(self) -> bool:
        return self.gradient_ok and self.cocoercive and self.strongly_convex


def certify_constants(
    o: FunctionOracle,
    samples: int = 20,
    seed: int = 0,
    scale: float = 1.0,
) -> CertificationReport:
    """Check gradient, co-coercivity and strong convexity on random points.

    Nonsmooth or nonconvex oracles skip the checks that do not apply to
    them and report them as passed.

    Args:
        o: Oracle to certify.
        samples: Number of random points (and pairs).
        seed: Sampling seed.
        scale: Standard deviation of the sampled points.

    Returns:
        CertificationReport with one verdict per check.
    """
    rng = np.random.default_rng(seed)
    points = scale * rng.standard_normal((samples, o.dimension))
    partners = scale * rng.standard_normal((samples, o.dimension))

    gradient_ok, cocoercive, strongly_convex = True, True, True
    worst = 0.0
    if not o.smooth:
        return CertificationReport(True, True, True, 0.0)

    for x, y in zip(points, partners):
        gx, gy = o.grad(x), o.grad(y)
        error = float(np.max(np.abs(gx - finite_difference_grad(o, x)))) / (1.0 + float(np.max(np.abs(gx))))
        worst = max(worst, error)
        if error > 1e-5:
            gradient_ok = False
        if not o.convex:
            continue
        diff = gx - gy
        if o.ell > 0 and (x - y) @ diff < diff @ diff / o.ell - 1e-8:
            cocoercive = False
        if o.evaluate(y) < o.evaluate(x) + gx @ (y - x) + 0.5 * o.mu * (y - x) @ (y - x) - 1e-8:
            strongly_convex = False

    return CertificationReport(gradient_ok, cocoercive, strongly_convex, worst)


def oracle_from_config(spec: dict[str, Any], base_dir: Path | None = None) -> FunctionOracle:
    """Build an oracle from its config description.

    Args:
        spec: Mapping with a ``kind`` key and kind-specific fields.
        base_dir: Directory that relative ``data_file`` paths refer to.

    Returns:
        Constructed oracle.

    Raises:
        ConfigError: On an unknown kind or unreadable data file.
    """
    kind = spec.get("kind")
    builders: dict[str, Callable[[], FunctionOracle]] = {
        "quadratic": lambda: QuadraticOracle(np.array(spec["Q"], dtype=float), spec.get("q")),
        "linear": lambda: LinearOracle(np.array(spec["c"], dtype=float)),
        "logistic": lambda: _logistic_from_file(spec, base_dir),
        "pwlq": lambda: PiecewiseQuadraticOracle(
            spec["d"], spec["c"], spec["w"], spec["t"], spec.get("subgradient_rule")
        ),
        "quadratic_sine": lambda: QuadraticSineOracle(
            np.array(spec["Q"], dtype=float),
            np.array(spec["q"], dtype=float),
            spec.get("beta", 0.0),
            spec.get("omega", 1.0),
        ),
    }
    if kind not in builders:
        raise ConfigError(f"Unknown oracle kind '{kind}', expected one of {sorted(builders)}")
    return builders[kind]()


def _logistic_from_file(spec: dict[str, Any], base_dir: Path | None) -> LogisticOracle:
    path = Path(spec["data_file"])
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as e:
        raise ConfigError(f"Cannot read logistic data file {path}: {e}") from e
    return LogisticOracle(data[:, :-1], data[:, -1], float(spec.get("l2", 0.0)))


def _check_step(step: float) -> None:
    if not step > 0:
        raise ConfigError(f"Proximal step must be positive, got {step}")


def _solve_positive_definite(matrix: np.ndarray, rhs: np.ndarray, kind: str) -> np.ndarray:
    try:
        factor = linalg.cho_factor(matrix)
    except linalg.LinAlgError as e:
        raise CapabilityError(
            f"Shifted '{kind}' problem is not strictly convex; minimizer unbounded or not unique"
        ) from e
    return linalg.cho_solve(factor, rhs)
