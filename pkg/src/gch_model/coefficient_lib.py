import numpy as np
from scipy.interpolate import PchipInterpolator


class ConstantCoefficient:
    smoothness = "closed form"

    def __init__(self, m: float):
        self.m = float(m)

    def a(self, u: np.ndarray) -> np.ndarray:
        return np.full(np.shape(u), self.m)

    def a_prime(self, u: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(u))

    def a_doubleprime(self, u: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(u))

    def antiderivative(self, u: np.ndarray) -> np.ndarray:
        return self.m * np.asarray(u, dtype=float)


class RationalBumpCoefficient:
    """a(u) = base + gain * u^2 / (1 + u^2)"""

    smoothness = "closed form"

    def __init__(self, base: float, gain: float):
        self.base = float(base)
        self.gain = float(gain)

    def a(self, u: np.ndarray) -> np.ndarray:
        u2 = np.square(u)
        return self.base + self.gain * u2 / (1.0 + u2)

    def a_prime(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return 2.0 * self.gain * u / (1.0 + u**2) ** 2

    def a_doubleprime(self, u: np.ndarray) -> np.ndarray:
        u2 = np.square(u)
        return 2.0 * self.gain * (1.0 - 3.0 * u2) / (1.0 + u2) ** 3

    def antiderivative(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.base * u + self.gain * (u - np.arctan(u))


class TabulatedCoefficient:
    """
    Monotone cubic (PCHIP) interpolant of sampled (u, a) pairs.

    Outside the table the coefficient is held at its end value, so a' and a''
    vanish there and A(u) continues linearly.
    """

    smoothness = "assumed"

    def __init__(self, u_samples, a_samples):
        u_samples = np.asarray(u_samples, dtype=float)
        a_samples = np.asarray(a_samples, dtype=float)
        if u_samples.ndim != 1 or u_samples.shape != a_samples.shape:
            raise ValueError(
                f"Tabulated coefficient needs matching 1D samples, got shapes "
                f"{u_samples.shape} and {a_samples.shape}"
            )
        if u_samples.size < 2:
            raise ValueError("Tabulated coefficient needs at least 2 samples")
        if not np.all(np.diff(u_samples) > 0):
            raise ValueError("Tabulated u samples must be strictly increasing")
        if not (np.all(np.isfinite(u_samples)) and np.all(np.isfinite(a_samples))):
            raise ValueError("Tabulated samples must be finite")

        self.u_samples = u_samples
        self.a_samples = a_samples
        self._spline = PchipInterpolator(u_samples, a_samples)
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)
        self._integral = self._spline.antiderivative()
        self._lo, self._hi = u_samples[0], u_samples[-1]

    def _clamp(self, u):
        return np.clip(np.asarray(u, dtype=float), self._lo, self._hi)

    def _inside(self, u):
        u = np.asarray(u, dtype=float)
        return (u >= self._lo) & (u <= self._hi)

    def a(self, u: np.ndarray) -> np.ndarray:
        return self._spline(self._clamp(u))

    def a_prime(self, u: np.ndarray) -> np.ndarray:
        return np.where(self._inside(u), self._d1(self._clamp(u)), 0.0)

    def a_doubleprime(self, u: np.ndarray) -> np.ndarray:
        return np.where(self._inside(u), self._d2(self._clamp(u)), 0.0)

    def _cumulative(self, u):
        u = np.asarray(u, dtype=float)
        clamped = self._clamp(u)
        return self._integral(clamped) + self._spline(clamped) * (u - clamped)

    def antiderivative(self, u: np.ndarray) -> np.ndarray:
        return self._cumulative(u) - self._cumulative(0.0)


def khain_sander_diffusion(q: float) -> float:
    """Constant diffusion coefficient -ln(1 - q) for an adhesion parameter q in (0, 1)."""
    return float(-np.log1p(-q))


# nonlinearities f and g per variant, with f'


def cubic(s: np.ndarray) -> np.ndarray:
    return s**3


def cubic_prime(s: np.ndarray) -> np.ndarray:
    return 3.0 * s**2


def square(s: np.ndarray) -> np.ndarray:
    return s**2


def shifted_cubic(s: np.ndarray) -> np.ndarray:
    return s**3 - s


def shifted_cubic_prime(s: np.ndarray) -> np.ndarray:
    return 3.0 * s**2 - 1.0


def shifted_square(s: np.ndarray) -> np.ndarray:
    return s**2 - s
