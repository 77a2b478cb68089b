"""Built-in model problems with analytic forcing and exact solutions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from sbpsat.discretization import DIFFUSION_FIELDS, DiffusionField
from sbpsat.errors import ConfigurationError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SteadyProblem:
    name: str
    diffusion: DiffusionField
    exact: Callable
    forcing: Callable
    #: ``(x, y) -> (d/dx, d/dy)`` of the exact solution
    gradient: Callable
    #: exact value of the functional ``int g u`` with ``g = 1``
    functional: float | None = None

    def dirichlet(self, x, y):
        return self.exact(x, y)

    def neumann_flux(self, x, y, nx, ny):
        """``n . (Lambda grad U)`` for Neumann data."""
        lam = self.diffusion.nodal(np.stack(np.broadcast_arrays(x, y), axis=-1))
        ux, uy = self.gradient(x, y)
        return (nx * (lam[..., 0, 0] * ux + lam[..., 0, 1] * uy)
                + ny * (lam[..., 1, 0] * ux + lam[..., 1, 1] * uy))


def _sine_exact(x, y):
    return np.sin(TWO_PI * x) * np.sin(TWO_PI * y)


def _sine_gradient(x, y):
    return (TWO_PI * np.cos(TWO_PI * x) * np.sin(TWO_PI * y),
            TWO_PI * np.sin(TWO_PI * x) * np.cos(TWO_PI * y))


def _sine_forcing(x, y):
    """``-div(Lambda grad U)`` for ``Lambda = [[x^2+1, xy], [xy, y^2+1]]``.

    Expanding the divergence gives
    ``3x U_x + 3y U_y + (x^2+1) U_xx + (y^2+1) U_yy + 2xy U_xy``.
    """
    s = TWO_PI
    sx, cx = np.sin(s * x), np.cos(s * x)
    sy, cy = np.sin(s * y), np.cos(s * y)
    ux, uy = s * cx * sy, s * sx * cy
    uxx = uyy = -s * s * sx * sy
    uxy = s * s * cx * cy
    return -(3.0 * x * ux + 3.0 * y * uy + (x**2 + 1.0) * uxx + (y**2 + 1.0) * uyy
             + 2.0 * x * y * uxy)


MANUFACTURED = SteadyProblem(
    name="manufactured", diffusion=DIFFUSION_FIELDS["manufactured"], exact=_sine_exact,
    forcing=_sine_forcing, gradient=_sine_gradient, functional=0.0)


def polynomial_problem(p: int) -> SteadyProblem:
    """Degree-``p`` solution ``U = (x + 2y)^p + c x y + 1`` with the linear
    tensor ``Lambda = [[1 + x, y/4], [y/4, 2 - y]]``; ``c = 1`` for
    ``p >= 2`` and ``c = 0`` otherwise so that ``U`` stays in ``P^p``.

    With ``s = x + 2y``: ``U_x = p s^{p-1} + c y`` and
    ``U_y = 2p s^{p-1} + c x``, second derivatives ``U_xx = p(p-1) s^{p-2}``,
    ``U_xy = 2 U_xx + c`` and ``U_yy = 4 U_xx``. Then
    ``div(Lambda grad U) = (5/4) U_x + (1+x) U_xx + (y/2) U_xy
    - U_y + (2-y) U_yy``, where the lone first-derivative terms come from
    differentiating the tensor entries.
    """
    if p < 1:
        raise ConfigurationError("polynomial problem needs p >= 1")
    lam = DIFFUSION_FIELDS["linear"]
    c = 1.0 if p >= 2 else 0.0

    def exact(x, y):
        return (x + 2.0 * y) ** p + c * x * y + 1.0

    def gradient(x, y):
        s = p * (x + 2.0 * y) ** (p - 1)
        return s + c * y, 2.0 * s + c * x

    def forcing(x, y):
        ux, uy = gradient(x, y)
        d = p * (p - 1) * (x + 2.0 * y) ** (p - 2) if p >= 2 else 0.0 * x
        uxx, uxy, uyy = d, 2.0 * d + c, 4.0 * d
        div = 1.25 * ux + (1.0 + x) * uxx + 0.5 * y * uxy - uy + (2.0 - y) * uyy
        return -div

    return SteadyProblem(name=f"polynomial{p}", diffusion=lam, exact=exact,
                         forcing=forcing, gradient=gradient)


def smooth_random_field(seed: int, modes: int = 4) -> Callable:
    """A fixed random trigonometric field with values in ``[-1, 1]``, so the
    same initial condition can be sampled at the nodes of any operator."""
    rng = np.random.Generator(np.random.PCG64(seed))
    amp = rng.uniform(-1.0, 1.0, (modes, modes))
    phase = rng.uniform(0.0, TWO_PI, (modes, modes, 2))
    norm = np.sum(np.abs(amp))

    def field(x, y):
        out = np.zeros(np.broadcast(x, y).shape)
        for i in range(modes):
            for j in range(modes):
                out += amp[i, j] * np.sin(np.pi * (i + 1) * x + phase[i, j, 0]) \
                    * np.sin(np.pi * (j + 1) * y + phase[i, j, 1])
        return out / norm

    return field
