"""Closed-form stationary densities for the two tractable networks, the
shot-noise simulation oracle, and stationary-equation residual checks.

Network A ("feedback neuron"): one neuron with feedback, no sources, whose
rate vanishes on states with two or more window spikes.  Its stationary
density has three components (a silent-state atom, a one-spike density on
(0, 1) and a two-spike density constant along diagonal characteristics) and
is computed here in closed form up to quadrature.

Network B ("shot noise"): one self-exciting neuron with an exponential
response kernel; its membrane value is a jump process with unit jumps at a
state-dependent rate and unit-rate exponential decay.  Its stationary
density solves a delay balance equation and is built recursively on the
intervals (n, n+1).

All quadrature uses composite Simpson with a fixed step; the interval
recursion uses an exact integrating factor with Simpson quadrature of the
source term (fixed step, fourth order), so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, StateError

__all__ = [
    "FeedbackDensity",
    "ShotNoiseDensity",
    "FeedbackEstimate",
    "ResidualReport",
    "example1_density",
    "example1_ode_residual",
    "example2_density",
    "example2_balance_residual",
    "simulate_shotnoise",
    "stationary_equation_residual",
    "empty_state_balance_residual",
]


# ---------------------------------------------------------------------------
# Quadrature helpers (uniform grids)
# ---------------------------------------------------------------------------


def _cumulative_simpson(y: np.ndarray, dx: float) -> np.ndarray:
    """Cumulative integral on a uniform grid, fourth order.

    Each interval pair is integrated from the parabola through its three
    nodes; a trailing odd interval reuses the parabola of the last triple.
    """
    n = len(y) - 1
    out = np.zeros(len(y))
    if n <= 0:
        return out
    pairs = n // 2
    if pairs:
        y0 = y[0 : 2 * pairs - 1 : 2]
        y1 = y[1 : 2 * pairs : 2]
        y2 = y[2 : 2 * pairs + 1 : 2]
        first = dx * (5.0 * y0 + 8.0 * y1 - y2) / 12.0
        second = dx * (-y0 + 8.0 * y1 + 5.0 * y2) / 12.0
        even = np.concatenate(([0.0], np.cumsum(first + second)))
        out[0 : 2 * pairs + 1 : 2] = even
        out[1 : 2 * pairs : 2] = even[:-1] + first
    if n % 2:
        out[n] = out[n - 1] + dx * (-y[n - 2] + 8.0 * y[n - 1] + 5.0 * y[n]) / 12.0
    return out


def _simpson(y: np.ndarray, dx: float) -> float:
    return float(_cumulative_simpson(y, dx)[-1])


def _cumulative_power_smooth(a: float, s: np.ndarray, dx: float) -> np.ndarray:
    """Cumulative integral from 0 of ``x^a * s(x)`` for smooth ``s``, a > -1.

    The first two Taylor terms of ``s`` at 0 are integrated exactly, so the
    integrable singularity at 0 never enters the Simpson sum; exact for
    constant ``s``.
    """
    if a <= -1.0:
        raise ConfigError(f"exponent {a} makes x^a non-integrable at 0")
    n = len(s)
    x = dx * np.arange(n)
    s0 = float(s[0])
    if n >= 4:
        s1 = float(-11.0 * s[0] + 18.0 * s[1] - 9.0 * s[2] + 2.0 * s[3]) / (6.0 * dx)
    else:
        s1 = 0.0
    exact = s0 * x ** (a + 1.0) / (a + 1.0) + s1 * x ** (a + 2.0) / (a + 2.0)
    r = np.zeros(n)
    r[1:] = x[1:] ** a * (s[1:] - s0 - s1 * x[1:])
    return exact + _cumulative_simpson(r, dx)


def _grid(step: float) -> tuple[np.ndarray, float, int]:
    """Uniform grid on [0, 1] with an even number of intervals."""
    if not (0.0 < step <= 0.25):
        raise ConfigError(f"grid step must be in (0, 0.25], got {step}")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9 or n % 2:
        n += n % 2
    return np.linspace(0.0, 1.0, n + 1), 1.0 / n, n


# ---------------------------------------------------------------------------
# Feedback neuron with a two-spike window cap
# ---------------------------------------------------------------------------


@dataclass
class FeedbackDensity:
    """Stationary density of the capped feedback neuron (window length 1).

    ``psi0`` is the silent-state probability, ``psi1`` the one-spike density
    tabulated on ``grid``, and the two-spike density is constant along
    diagonals: psi2(x1, x2) = rate(1-u) * psi1(1-u) with u = x1 - x2,
    tabulated in ``char`` (indexed by 1-u on the same grid).
    """

    grid: np.ndarray
    step: float
    psi0: float
    psi1: np.ndarray
    char: np.ndarray
    rate0: float

    def psi1_at(self, theta) -> np.ndarray:
        return np.interp(theta, self.grid, self.psi1)

    def psi2_at(self, x1, x2) -> np.ndarray:
        u = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
        return np.interp(1.0 - u, self.grid, self.char)

    def psi2_boundary(self, theta) -> np.ndarray:
        """psi2(theta, 0+): the two-spike density as the older age expires."""
        return np.interp(1.0 - np.asarray(theta, dtype=float), self.grid, self.char)

    def component_masses(self) -> tuple[float, float, float]:
        """(silent, one-spike, two-spike) stationary masses."""
        m1 = _simpson(self.psi1, self.step)
        m2 = _simpson(self.grid * self.char, self.step)
        return self.psi0, m1, m2

    def symmetry_defect(self) -> float:
        """max |psi1(theta) - psi1(1-theta)| on the grid."""
        return float(np.max(np.abs(self.psi1 - self.psi1[::-1])))


def example1_density(rate, step: float = 1e-3) -> FeedbackDensity:
    """Closed-form stationary density of the capped feedback neuron.

    ``rate`` maps the age-to-expiry of the single window spike to the firing
    rate (rate(0) doubles as the silent-state rate, by continuity); the rate
    on two-spike states is identically zero by assumption.  The one-spike
    density is rate(0)*psi0*exp(int_0^theta (rate(y) - rate(1-y)) dy) and
    psi0 follows from total mass 1.
    """
    grid, dx, _ = _grid(step)
    R = np.asarray([float(rate(t)) for t in grid])
    if np.any(R < 0.0) or not np.all(np.isfinite(R)):
        raise ConfigError("rate must be finite and >= 0 on [0, 1]")
    if R[0] <= 0.0:
        raise ConfigError("rate at the empty state must be positive")
    antisym = R - R[::-1]
    phi = np.exp(_cumulative_simpson(antisym, dx))
    psi1_raw = R[0] * phi
    m1 = _simpson(psi1_raw, dx)
    m2 = _simpson(grid * R * psi1_raw, dx)
    psi0 = 1.0 / (1.0 + m1 + m2)
    psi1 = psi0 * psi1_raw
    return FeedbackDensity(
        grid=grid, step=dx, psi0=psi0, psi1=psi1, char=R * psi1, rate0=float(R[0])
    )


def example1_ode_residual(dens: FeedbackDensity, rate) -> np.ndarray:
    """Residual of psi1' = (rate(theta) - rate(1-theta)) * psi1 by central
    differences on the interior grid."""
    g, h = dens.grid, dens.step
    R = np.asarray([float(rate(t)) for t in g])
    dpsi = (dens.psi1[2:] - dens.psi1[:-2]) / (2.0 * h)
    return dpsi - (R[1:-1] - R[::-1][1:-1]) * dens.psi1[1:-1]


# ---------------------------------------------------------------------------
# Shot-noise neuron (exponential kernel)
# ---------------------------------------------------------------------------


def _rate_fn(gamma):
    if callable(gamma):
        return gamma, None
    value = float(gamma)
    return (lambda _x: value), value


@dataclass
class ShotNoiseDensity:
    """Stationary density of the shot-noise membrane value on (0, n_max+1).

    On (0, 1) the density factorizes as psi(y) = norm * y^exponent * c(y)
    with a smooth tabulated correction ``c``; on each (n, n+1) it is
    tabulated directly.  ``tail_bound`` bounds the stationary mass beyond
    n_max + 1 (not included in the normalization, reported only).
    """

    step: float
    n_max: int
    exponent: float
    norm: float
    grid01: np.ndarray
    smooth01: np.ndarray
    segments: list[np.ndarray]
    masses: np.ndarray
    tail_bound: float
    _cdf_x: np.ndarray
    _cdf_y: np.ndarray

    def pdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        inside = (y > 0.0) & (y < 1.0)
        if np.any(inside):
            out[inside] = (
                self.norm
                * y[inside] ** self.exponent
                * np.interp(y[inside], self.grid01, self.smooth01)
            )
        for n, seg in enumerate(self.segments, start=1):
            sel = (y >= n) & (y <= n + 1)
            if np.any(sel):
                out[sel] = np.interp(y[sel], n + self.grid01, seg)
        return out

    def cdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.interp(np.clip(y, 0.0, self.n_max + 1.0), self._cdf_x, self._cdf_y)

    def interval_mass(self, n: int) -> float:
        """Stationary mass of (n, n+1)."""
        return float(self.masses[n])


def example2_density(gamma, n_max: int = 12, step: float = 1e-3) -> ShotNoiseDensity:
    """Stationary density of the shot-noise neuron by interval recursion.

    ``gamma`` is the jump rate as a function of the current membrane value
    (a float means a constant rate).  On (0,1) the density is
    norm * y^(gamma(0)-1) * exp(int_1^y (gamma(x)-gamma(0))/x dx); each next
    interval solves a linear ODE driven by the previous one through an exact
    integrating factor.  The normalization makes the mass on (0, n_max+1)
    one; the super-exponentially small tail is reported as ``tail_bound``.
    """
    gfun, gconst = _rate_fn(gamma)
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1, got {n_max}")
    g0 = float(gfun(0.0))
    if g0 <= 0.0:
        raise ConfigError(
            "gamma(0) must be positive: otherwise the density ~ y^(gamma(0)-1) is not integrable at 0"
        )
    grid, dx, _ = _grid(step)
    # half-step tabulation so consecutive segments line up for the recursion
    half = dx / 2.0
    nodes = np.arange(2 * len(grid) - 1) * half  # grid on [0, 1] at half step
    a = g0 - 1.0
    gvals = {0: np.asarray([float(gfun(x)) for x in nodes])}
    # smooth correction on (0, 1]
    gdiff = np.zeros_like(nodes)
    gdiff[1:] = (gvals[0][1:] - g0) / nodes[1:]
    eps = 1e-8
    gdiff[0] = (float(gfun(eps)) - g0) / eps  # one-sided derivative limit
    cumg = _cumulative_simpson(gdiff, half)
    smooth = np.exp(cumg - cumg[-1])  # exp(int_1^y), equals 1 at y=1
    segs: list[np.ndarray] = []
    prev: np.ndarray | None = None  # previous tabulated segment (n >= 1 only)
    masses = [float(_cumulative_power_smooth(a, smooth, half)[-1])]
    gbar = float(np.max(gvals[0]))
    for n in range(1, n_max + 1):
        y = n + nodes
        gy = np.asarray([float(gfun(v)) for v in y])
        gbar = max(gbar, float(np.max(gy)))
        A = (gy - 1.0) / y
        L = _cumulative_simpson(A, half)
        E = np.exp(L)
        gy1 = gvals[n - 1]
        if n == 1:
            # source term has the integrable y^a singularity of the first
            # segment at its left end: integrate x^a * w with smooth w
            w = -(gy1 * smooth) / (y * E)
            src = _cumulative_power_smooth(a, w, half)
        else:
            b_over_e = -(gy1 * prev) / (y * E)
            src = _cumulative_simpson(b_over_e, half)
        start = prev[-1] if n > 1 else smooth[-1]  # continuity at the integer
        cur = E * (start + src)
        # deep in the super-exponential tail the absolute quadrature error can
        # undershoot zero; only a violation on the scale of the density itself
        # signals an unstable step
        scale = max(1.0, *(float(np.max(s)) for s in segs), float(np.max(smooth)))
        if float(cur.min()) < -1e-8 * scale:
            raise StateError(f"negative density on interval ({n}, {n + 1}); refine the step")
        cur = np.maximum(cur, 0.0)
        masses.append(_simpson(cur, half))
        segs.append(cur)
        gvals[n] = gy
        prev = cur
    total = float(sum(masses))
    norm = 1.0 / total
    masses_arr = np.asarray(masses) * norm
    segs = [s * norm for s in segs]
    # tail bound: on (k, k+1) the balance equation gives
    # m_k <= m_{k-1} * gbar / (k - gbar) once k > gbar
    if n_max + 1 <= gbar:
        raise ConfigError(
            f"n_max={n_max} too small for rate bound {gbar}: tail not summable from the recursion"
        )
    tail = 0.0
    term = float(masses_arr[-1])
    k = n_max + 1
    for _ in range(500):
        term *= gbar / (k - gbar)
        tail += term
        k += 1
        if term < 1e-300:
            break
    # cdf table over (0, n_max+1)
    cdf_x = [nodes]
    cdf_y = [norm * _cumulative_power_smooth(a, smooth, half)]
    offset = cdf_y[-1][-1]
    for n, seg in enumerate(segs, start=1):
        cdf_x.append(n + nodes[1:])
        piece = _cumulative_simpson(seg, half)
        cdf_y.append(offset + piece[1:])
        offset += piece[-1]
    return ShotNoiseDensity(
        step=half,
        n_max=n_max,
        exponent=a,
        norm=norm,
        grid01=nodes,
        smooth01=smooth,
        segments=segs,
        masses=masses_arr,
        tail_bound=tail,
        _cdf_x=np.concatenate(cdf_x),
        _cdf_y=np.concatenate(cdf_y),
    )


def example2_balance_residual(dens: ShotNoiseDensity, gamma, ys) -> np.ndarray:
    """Residual of the stationary balance y*psi(y) = int_{(y-1)+}^{y} gamma*psi."""
    gfun, _ = _rate_fn(gamma)
    half = dens.step
    nodes = dens.grid01
    # cumulative integral of gamma * psi from 0, per segment
    g01 = np.asarray([float(gfun(v)) for v in nodes])
    cx = [nodes]
    cy = [dens.norm * _cumulative_power_smooth(dens.exponent, g01 * dens.smooth01, half)]
    offset = cy[-1][-1]
    for n, seg in enumerate(dens.segments, start=1):
        gn = np.asarray([float(gfun(v)) for v in (n + nodes)])
        piece = _cumulative_simpson(gn * seg, half)
        cx.append(n + nodes[1:])
        cy.append(offset + piece[1:])
        offset += piece[-1]
    cum_x = np.concatenate(cx)
    cum_y = np.concatenate(cy)
    ys = np.asarray(ys, dtype=float)
    upper = np.interp(np.clip(ys, 0.0, dens.n_max + 1.0), cum_x, cum_y)
    lower = np.interp(np.clip(ys - 1.0, 0.0, dens.n_max + 1.0), cum_x, cum_y)
    return ys * dens.pdf(ys) - (upper - lower)


def simulate_shotnoise(
    gamma,
    T: float,
    seed,
    *,
    gamma_bar: float | None = None,
    burn_in: float = 20.0,
    stride: float = 3.0,
) -> np.ndarray:
    """Stationary samples of the shot-noise membrane value by exact simulation.

    Between jumps the value decays exponentially at unit rate; jumps of size
    one occur at rate gamma(value), realized by thinning against the bound
    ``gamma_bar`` (defaults to the value of a constant ``gamma``).  Samples
    are taken every ``stride`` time units after ``burn_in``; the default
    stride of three decay times keeps neighbouring samples nearly
    independent.
    """
    gfun, gconst = _rate_fn(gamma)
    if gamma_bar is None:
        if gconst is None:
            raise ConfigError("gamma_bar is required for a non-constant rate")
        gamma_bar = gconst
    if not (gamma_bar > 0.0 and math.isfinite(gamma_bar)):
        raise ConfigError(f"gamma_bar must be positive and finite, got {gamma_bar}")
    if T <= burn_in:
        raise ConfigError(f"horizon {T} must exceed burn-in {burn_in}")
    rng = np.random.Generator(np.random.Philox(seed))
    samples_t = np.arange(stride, T + stride * 1e-9, stride)
    if gconst is not None and gconst == gamma_bar:
        # constant rate: every candidate is accepted, so the jump times are a
        # plain Poisson stream and the decay recurrence can run vectorized
        from scipy.signal import lfilter

        jumps = []
        t = 0.0
        while t <= T:
            gaps = rng.exponential(1.0 / gamma_bar, size=262144)
            ts = t + np.cumsum(gaps)
            jumps.append(ts)
            t = float(ts[-1])
        J = np.concatenate(jumps)
        J = J[J <= samples_t[-1]]
        idx = np.searchsorted(samples_t, J, side="left")
        contrib = np.bincount(idx, weights=np.exp(J - samples_t[idx]), minlength=len(samples_t))
        decay = math.exp(-stride)
        values = lfilter([1.0], [1.0, -decay], contrib)
        return values[samples_t > burn_in]
    # general thinning loop
    out = np.empty(len(samples_t))
    n_out = 0
    sp = 0
    t = 0.0
    y = 0.0
    exp = math.exp
    block = 65536
    done = False
    while not done:
        gaps = rng.exponential(1.0 / gamma_bar, size=block)
        us = rng.random(block)
        for g, u in zip(gaps, us):
            tn = t + g
            while sp < len(samples_t) and samples_t[sp] <= tn:
                out[sp] = y * exp(-(samples_t[sp] - t))
                sp += 1
            if tn > T:
                done = True
                break
            y *= exp(-g)
            t = tn
            rate = gfun(y)
            if rate > gamma_bar * (1.0 + 1e-12):
                raise ConfigError(f"rate {rate} exceeds its declared bound {gamma_bar}")
            if u * gamma_bar <= rate:
                y += 1.0
    return out[: sp][samples_t[: sp] > burn_in]


# ---------------------------------------------------------------------------
# Stationary-equation residual reports
# ---------------------------------------------------------------------------


@dataclass
class FeedbackEstimate:
    """Density estimates of the capped feedback neuron on a uniform grid.

    Any route may fill this: the closed form (zero sigmas), a simulation
    histogram, or a grid-chain embedding.  ``psi2_boundary`` holds estimates
    of psi2(theta, 0) on the same grid; sigmas are one-standard-error bars.
    """

    theta: np.ndarray
    psi0: float
    psi1: np.ndarray
    psi2_boundary: np.ndarray
    psi0_sigma: float = 0.0
    psi1_sigma: np.ndarray | None = None
    psi2_sigma: np.ndarray | None = None


@dataclass
class ResidualReport:
    """Residuals of the stationary-density equations for one estimate."""

    empty_balance: float
    empty_sigma: float
    boundary: float
    boundary_sigma: float
    ode_theta: np.ndarray
    ode_residual: np.ndarray
    ode_sigma: np.ndarray

    @property
    def ode_max(self) -> float:
        return float(np.max(np.abs(self.ode_residual)))

    @property
    def ode_mean(self) -> float:
        return float(np.mean(np.abs(self.ode_residual)))

    def within(self, k: float = 3.0) -> bool:
        """True when every residual is within k standard errors."""
        ok = abs(self.empty_balance) <= k * self.empty_sigma or self.empty_sigma == 0.0
        ok &= abs(self.boundary) <= k * self.boundary_sigma or self.boundary_sigma == 0.0
        finite = self.ode_sigma > 0.0
        if np.any(finite):
            ok &= bool(np.all(np.abs(self.ode_residual[finite]) <= k * self.ode_sigma[finite]))
        return bool(ok)


def _boundary_value(grid: np.ndarray, values: np.ndarray, at: float) -> float:
    """Value at an endpoint, linearly extrapolated when the grid stops short."""
    if math.isclose(grid[0], at):
        return float(values[0])
    if math.isclose(grid[-1], at):
        return float(values[-1])
    if at < grid[0]:
        slope = (values[1] - values[0]) / (grid[1] - grid[0])
        return float(values[0] + slope * (at - grid[0]))
    slope = (values[-1] - values[-2]) / (grid[-1] - grid[-2])
    return float(values[-1] + slope * (at - grid[-1]))


def stationary_equation_residual(est: FeedbackEstimate, rate) -> ResidualReport:
    """Check a feedback-neuron density estimate against the stationary system.

    Evaluates the empty-state balance rate(0)*psi0 = psi1(0), the boundary
    condition psi1(1) = rate(0)*psi0 and, by central differences along the
    drift direction, the interior equation
    psi1' = rate(theta)*psi1(theta) - psi2(theta, 0).
    """
    g = np.asarray(est.theta, dtype=float)
    if len(g) < 3:
        raise ConfigError("need at least three grid points")
    h = g[1] - g[0]
    if np.max(np.abs(np.diff(g) - h)) > 1e-9 * h:
        raise ConfigError("estimate grid must be uniform")
    R = np.asarray([float(rate(t)) for t in g])
    r0 = float(rate(0.0))
    s1 = est.psi1_sigma if est.psi1_sigma is not None else np.zeros_like(g)
    s2 = est.psi2_sigma if est.psi2_sigma is not None else np.zeros_like(g)
    psi1_at0 = _boundary_value(g, est.psi1, 0.0)
    psi1_at1 = _boundary_value(g, est.psi1, 1.0)
    sigma_end = float(s1[0]) if len(s1) else 0.0
    empty = r0 * est.psi0 - psi1_at0
    empty_sigma = math.hypot(r0 * est.psi0_sigma, sigma_end)
    boundary = psi1_at1 - r0 * est.psi0
    boundary_sigma = math.hypot(r0 * est.psi0_sigma, float(s1[-1]) if len(s1) else 0.0)
    dpsi = (est.psi1[2:] - est.psi1[:-2]) / (2.0 * h)
    resid = dpsi - R[1:-1] * est.psi1[1:-1] + est.psi2_boundary[1:-1]
    sig = np.sqrt(
        (s1[2:] ** 2 + s1[:-2] ** 2) / (2.0 * h) ** 2
        + (R[1:-1] * s1[1:-1]) ** 2
        + s2[1:-1] ** 2
    )
    return ResidualReport(
        empty_balance=float(empty),
        empty_sigma=float(empty_sigma),
        boundary=float(boundary),
        boundary_sigma=float(boundary_sigma),
        ode_theta=g[1:-1],
        ode_residual=resid,
        ode_sigma=sig,
    )


def empty_state_balance_residual(
    psi00: float,
    psi10_at0: float,
    psi01_at0: float,
    source_rate: float,
    neuron_empty_rate: float,
) -> float:
    """Residual of the empty-state balance of a one-source one-neuron network:
    (source rate + neuron empty rate) * psi00 - psi10(0) - psi01(0)."""
    return (source_rate + neuron_empty_rate) * psi00 - psi10_at0 - psi01_at0
