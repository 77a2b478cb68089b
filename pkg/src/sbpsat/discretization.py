"""
SBP-SAT discretization of ``u_t - div(Lambda grad u) = f`` on triangles.

Each element carries the reference SBP operator mapped to physical space:
for an affine map the derivative operators are combinations of the
reference ones with the constant inverse Jacobian, the norm is scaled by
the Jacobian determinant and face weights by the physical face length.

Interface and boundary coupling uses simultaneous approximation terms with

* ``Sigma2 = -B/2``, ``Sigma3 = B/2``, ``Sigma4 = 0`` on every interface;
* ``Sigma1`` and the Dirichlet ``SigmaD`` from either the SBP version of
  BR2 (a dense Gram matrix of normal extrapolations) or SIPG (a diagonal
  matrix scaled by an eigenvalue bound of that Gram matrix).

The steady problem is written as ``A u = b`` with
``A u - b = -H (D u + f) + s_I(u) + s_B(u)``, so ``A`` is symmetric and,
for the unrelaxed penalties, positive definite. The semi-discrete
right-hand side is ``du/dt = H^{-1} (b - A u)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from sbpsat.errors import (
    AlignmentError, ConfigurationError, DefinitenessError)
from sbpsat.mesh import DIRICHLET, NEUMANN, ElementMap, TriangleMesh
from sbpsat.reference import REFERENCE
from sbpsat.sbp import Check, SbpOperator

SCHEMES = ("br2", "sipg")


# {{{ diffusion tensors

@dataclass(frozen=True)
class DiffusionField:
    """Symmetric tensor field ``func(x, y) -> (l_xx, l_xy, l_yy)``."""

    name: str
    func: Callable

    def nodal(self, x: np.ndarray) -> np.ndarray:
        """Nodal tensors of shape ``x.shape[:-1] + (2, 2)``."""
        lxx, lxy, lyy = (np.broadcast_to(np.asarray(c, dtype=float), x.shape[:-1])
                         for c in self.func(x[..., 0], x[..., 1]))
        lam = np.empty(x.shape[:-1] + (2, 2))
        lam[..., 0, 0] = lxx
        lam[..., 0, 1] = lam[..., 1, 0] = lxy
        lam[..., 1, 1] = lyy
        return lam

    def scaled(self, factor: float) -> "DiffusionField":
        return DiffusionField(f"{factor}*{self.name}",
                              lambda x, y: tuple(factor * np.asarray(c)
                                                 for c in self.func(x, y)))


DIFFUSION_FIELDS = {
    "identity": DiffusionField("identity", lambda x, y: (1.0, 0.0, 1.0)),
    "manufactured": DiffusionField(
        "manufactured", lambda x, y: (x**2 + 1.0, x * y, y**2 + 1.0)),
    "anisotropic": DiffusionField("anisotropic", lambda x, y: (2.0, 0.0, 1.0)),
    "linear": DiffusionField(
        "linear", lambda x, y: (1.0 + x, 0.25 * y, 2.0 - y)),
}


def get_diffusion(name: str) -> DiffusionField:
    try:
        return DIFFUSION_FIELDS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown diffusion field {name!r}; known: {sorted(DIFFUSION_FIELDS)}") from None


def check_spd(lam: np.ndarray) -> None:
    if np.max(np.abs(lam[..., 0, 1] - lam[..., 1, 0]), initial=0.0) > 1.0e-14:
        raise DefinitenessError("diffusion tensor is not symmetric")
    det = lam[..., 0, 0] * lam[..., 1, 1] - lam[..., 0, 1] * lam[..., 1, 0]
    if np.any(lam[..., 0, 0] <= 0.0) or np.any(det <= 0.0):
        raise DefinitenessError("diffusion tensor is not positive definite at every node")


def tensor_lambda_max(lam: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of symmetric 2x2 tensors ``(..., 2, 2)``."""
    a, b, c = lam[..., 0, 0], lam[..., 0, 1], lam[..., 1, 1]
    return 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)

# }}}


# {{{ element-level operations

def normal_derivative_operator(op: SbpOperator, emap: ElementMap, lam: np.ndarray,
                               face: int, *, sign: float = 1.0) -> np.ndarray:
    """``N_x R (L_xx D_x + L_xy D_y) + N_y R (L_yx D_x + L_yy D_y)`` for one
    element face, with physical derivative operators and normals.

    Use ``sign=-1`` for the neighbour side of an interface, whose normal is
    taken with respect to the owning element.
    """
    Dx, Dy = physical_derivatives(op, emap)
    R = op.faces[face].R
    nx, ny = sign * emap.normals[face]
    gx = lam[:, 0, 0, None] * Dx + lam[:, 0, 1, None] * Dy
    gy = lam[:, 1, 0, None] * Dx + lam[:, 1, 1, None] * Dy
    return nx * (R @ gx) + ny * (R @ gy)


def physical_derivatives(op: SbpOperator, emap: ElementMap) -> tuple[np.ndarray, np.ndarray]:
    (xi_x, xi_y), (eta_x, eta_y) = emap.inverse
    return (xi_x * op.Dx + eta_x * op.Dy, xi_y * op.Dx + eta_y * op.Dy)


def lambda_star(lam: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``[[L_xx, L_xy], [L_yx, L_yy]]^{-1} diag(H, H)`` as a dense
    ``2n x 2n`` matrix, inverting the nodal 2x2 blocks."""
    check_spd(lam)
    inv = np.linalg.inv(lam)
    n = len(h)
    out = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    for i in range(2):
        for j in range(2):
            out[i * n + idx, j * n + idx] = inv[:, i, j] * h
    return out


def face_weight(mesh: TriangleMesh, element: int, face: int) -> float:
    """Partition-of-unity weight of *face* in *element*; Dirichlet faces
    count twice, Neumann faces are excluded."""
    kind = face_kinds(mesh)[element]
    lengths = _face_lengths(mesh, element)
    denom = sum(L for L, k in zip(lengths, kind) if k == "interior") \
        + 2.0 * sum(L for L, k in zip(lengths, kind) if k == DIRICHLET)
    if denom <= 0.0:
        raise ConfigurationError(
            f"element {element} has neither interior nor Dirichlet faces")
    if kind[face] == "interior":
        return lengths[face] / denom
    if kind[face] == DIRICHLET:
        return 2.0 * lengths[face] / denom
    return 0.0


def _face_lengths(mesh: TriangleMesh, element: int) -> list[float]:
    out = []
    for f in range(3):
        a, b = mesh.face_vertices(element, f)
        out.append(float(np.linalg.norm(mesh.vertices[b] - mesh.vertices[a])))
    return out


def face_kinds(mesh: TriangleMesh) -> list[list[str]]:
    """Per element, the kind of each local face: interior/dirichlet/neumann."""
    kinds = [["interior"] * 3 for _ in range(mesh.num_elements)]
    for (k, f), tag in zip(mesh.boundary_faces, mesh.boundary_tags):
        kinds[k][f] = tag
    return kinds

# }}}


# {{{ face data

@dataclass(frozen=True)
class InterfaceData:
    """Matrices of one interface, neighbour side aligned to the owner's
    face node order."""

    kappa: int
    nu: int
    Rk: np.ndarray
    Rn: np.ndarray
    Dk: np.ndarray
    Dn: np.ndarray
    b: np.ndarray
    Ck: np.ndarray
    Cn: np.ndarray
    #: ``(alpha Lambda*)^{-1}`` of each side
    Wk: np.ndarray
    Wn: np.ndarray

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.b)


@dataclass(frozen=True)
class BoundaryData:
    kappa: int
    face: int
    tag: str
    R: np.ndarray
    D: np.ndarray
    b: np.ndarray
    C: np.ndarray
    W: np.ndarray | None
    points: np.ndarray

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.b)


@dataclass(frozen=True)
class InterfaceCoefficients:
    sigma1: np.ndarray
    sigma2_k: np.ndarray
    sigma2_n: np.ndarray
    sigma3_k: np.ndarray
    sigma3_n: np.ndarray
    sigma4: np.ndarray


@dataclass
class SatCoefficients:
    """Penalty matrices for all interfaces (stacked along axis 0) and all
    Dirichlet faces."""

    scheme: str
    relax: float
    relax_dirichlet: bool
    sigma1: np.ndarray
    sigma2_k: np.ndarray
    sigma2_n: np.ndarray
    sigma3_k: np.ndarray
    sigma3_n: np.ndarray
    sigma4: np.ndarray
    sigmaD: np.ndarray

    def interface(self, i: int) -> InterfaceCoefficients:
        return InterfaceCoefficients(self.sigma1[i], self.sigma2_k[i], self.sigma2_n[i],
                                     self.sigma3_k[i], self.sigma3_n[i], self.sigma4[i])


def sigma_br2(face: InterfaceData | BoundaryData) -> np.ndarray:
    """SBP-BR2 penalty: ``Sigma1`` for an interface, ``SigmaD`` for a
    Dirichlet face."""
    if isinstance(face, InterfaceData):
        gram = face.Ck @ face.Wk @ face.Ck.T + face.Cn @ face.Wn @ face.Cn.T
        return 0.25 * face.b[:, None] * gram * face.b[None, :]
    gram = face.C @ face.W @ face.C.T
    return face.b[:, None] * gram * face.b[None, :]

# }}}


class Discretization:
    """Physical-space SBP operators of every element of *mesh*.

    *diffusion* is a :class:`DiffusionField` or an array of nodal tensors of
    shape ``(K, n, 2, 2)``.
    """

    def __init__(self, mesh: TriangleMesh, op: SbpOperator, diffusion):
        self.mesh = mesh
        self.op = op
        K, n = mesh.num_elements, op.n
        self.K, self.n = K, n
        self.ng = op.face_rule.size

        P = mesh.vertices[mesh.elements]
        jac = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0.0):
            from sbpsat.errors import MetricError
            raise MetricError(f"{np.sum(det <= 0)} elements have nonpositive Jacobian")
        inv = np.linalg.inv(jac)
        self.jac, self.det, self.inv = jac, det, inv
        self.x = P[:, 0, None, :] + np.einsum("kij,nj->kni", jac, op.points)

        if isinstance(diffusion, DiffusionField):
            lam = diffusion.nodal(self.x)
        else:
            lam = np.asarray(diffusion, dtype=float)
            if lam.shape != (K, n, 2, 2):
                raise ConfigurationError(f"nodal tensor must have shape {(K, n, 2, 2)}")
        check_spd(lam)
        self.lam = lam

        Dxi, Deta = op.Dx, op.Dy
        self.Dx = inv[:, 0, 0, None, None] * Dxi + inv[:, 1, 0, None, None] * Deta
        self.Dy = inv[:, 0, 1, None, None] * Dxi + inv[:, 1, 1, None, None] * Deta
        self.hp = det[:, None] * op.h[None, :]
        self.Gx = lam[:, :, 0, 0, None] * self.Dx + lam[:, :, 0, 1, None] * self.Dy
        self.Gy = lam[:, :, 1, 0, None] * self.Dx + lam[:, :, 1, 1, None] * self.Dy

        self.R = np.stack([f.R for f in op.faces])
        t, w = op.face_rule.points, op.face_rule.weights
        self.lengths = np.empty((K, 3))
        self.normals = np.empty((K, 3, 2))
        self.xface = np.empty((K, 3, self.ng, 2))
        for f, (a, b) in enumerate(REFERENCE.faces):
            d = P[:, b] - P[:, a]
            L = np.hypot(d[:, 0], d[:, 1])
            self.lengths[:, f] = L
            self.normals[:, f, 0] = d[:, 1] / L
            self.normals[:, f, 1] = -d[:, 0] / L
            self.xface[:, f] = P[:, a, None, :] + t[None, :, None] * d[:, None, :]
        self.b = self.lengths[:, :, None] * w[None, None, :]

        self.Dface = np.empty((K, 3, self.ng, n))
        for f in range(3):
            flux = (self.normals[:, f, 0, None, None] * self.Gx
                    + self.normals[:, f, 1, None, None] * self.Gy)
            self.Dface[:, f] = np.einsum("gn,knm->kgm", self.R[f], flux)

        self._setup_faces()

    # {{{ topology

    def _setup_faces(self):
        mesh = self.mesh
        fi = mesh.interior_faces
        self.ik, self.fk, self.iv, self.fv = fi[:, 0], fi[:, 1], fi[:, 2], fi[:, 3]
        xk = self.xface[self.ik, self.fk]
        xn = self.xface[self.iv, self.fv][:, ::-1]
        if len(fi) and np.max(np.abs(xk - xn)) > 1.0e-12:
            raise AlignmentError("face nodes of neighbouring elements do not coincide "
                                 f"(max mismatch {np.max(np.abs(xk - xn)):.2e})")

        tags = np.array(mesh.boundary_tags)
        bf = mesh.boundary_faces
        dmask = tags == DIRICHLET if len(tags) else np.zeros(0, bool)
        self.dk, self.df = bf[dmask, 0], bf[dmask, 1]
        self.nk, self.nf = bf[~dmask, 0], bf[~dmask, 1]
        if len(self.dk) == 0:
            raise ConfigurationError("the Dirichlet boundary must be nonempty")

        kind = np.zeros((self.K, 3), dtype=int)   # 0 interior, 1 dirichlet, 2 neumann
        kind[self.dk, self.df] = 1
        kind[self.nk, self.nf] = 2
        self.kind = kind
        weight = np.where(kind == 0, 1.0, np.where(kind == 1, 2.0, 0.0))
        denom = np.sum(weight * self.lengths, axis=1)
        if np.any(denom <= 0.0):
            raise ConfigurationError("an element has neither interior nor Dirichlet faces")
        self.alpha = weight * self.lengths / denom[:, None]

    @property
    def num_dofs(self) -> int:
        return self.K * self.n

    def dof(self, element: int) -> slice:
        return slice(element * self.n, (element + 1) * self.n)

    # }}}

    # {{{ face data

    def _W(self, k: int, alpha: float) -> np.ndarray:
        return np.linalg.inv(alpha * lambda_star(self.lam[k], self.hp[k]))

    def _C(self, k: int, f: int, R: np.ndarray, sign: float = 1.0) -> np.ndarray:
        nx, ny = sign * self.normals[k, f]
        return np.hstack([nx * R, ny * R])

    def interface_data(self, i: int) -> InterfaceData:
        k, fk, v, fv = (int(a) for a in (self.ik[i], self.fk[i], self.iv[i], self.fv[i]))
        Rk = self.R[fk]
        Rn = self.R[fv][::-1]
        return InterfaceData(
            kappa=k, nu=v, Rk=Rk, Rn=Rn, Dk=self.Dface[k, fk], Dn=self.Dface[v, fv][::-1],
            b=self.b[k, fk], Ck=self._C(k, fk, Rk), Cn=-self._C(k, fk, Rn),
            Wk=self._W(k, self.alpha[k, fk]), Wn=self._W(v, self.alpha[v, fv]))

    def boundary_data(self, k: int, f: int) -> BoundaryData:
        tag = {1: DIRICHLET, 2: NEUMANN}.get(int(self.kind[k, f]))
        if tag is None:
            raise ConfigurationError(f"face {f} of element {k} is not a boundary face")
        R = self.R[f]
        W = self._W(k, self.alpha[k, f]) if tag == DIRICHLET else None
        return BoundaryData(kappa=k, face=f, tag=tag, R=R, D=self.Dface[k, f],
                            b=self.b[k, f], C=self._C(k, f, R), W=W,
                            points=self.xface[k, f])

    def reference_trace_norms(self) -> np.ndarray:
        """``|| B^{1/2} R H^{-1/2} ||_2^2`` per reference face."""
        out = np.empty(3)
        for f, fb in enumerate(self.op.faces):
            M = np.sqrt(fb.b)[:, None] * fb.R / np.sqrt(self.op.h)[None, :]
            out[f] = np.linalg.norm(M, 2) ** 2
        return out

    def contravariant_scale(self) -> np.ndarray:
        """``|| J (n_xi grad xi + n_eta grad eta) ||`` per element face."""
        nref = np.stack([REFERENCE.face_normal(f) for f in range(3)])
        vec = np.einsum("fi,kij->kfj", nref, self.inv) * self.det[:, None, None]
        return np.linalg.norm(vec, axis=2)

    # }}}

    # {{{ penalties

    def _gram(self) -> np.ndarray:
        """``C (alpha Lambda*)^{-1} C^T`` per element face (zero on Neumann
        faces); affine faces have a constant normal, which reduces the Gram
        matrix to ``R diag(n.Lambda.n / h) R^T / alpha``."""
        nn = np.einsum("kfi,knij,kfj->kfn", self.normals, self.lam, self.normals)
        scale = np.divide(1.0, self.alpha, out=np.zeros_like(self.alpha), where=self.alpha > 0)
        q = nn / self.hp[:, None, :] * scale[:, :, None]
        return np.einsum("fgn,kfn,fhn->kfgh", self.R, q, self.R)

    def sat_coefficients(self, scheme: str = "br2", relax: float = 1.0,
                         relax_dirichlet: bool = True) -> SatCoefficients:
        if scheme not in SCHEMES:
            raise ConfigurationError(f"unknown SAT scheme {scheme!r}; known: {SCHEMES}")
        if not 0.0 < relax <= 1.0:
            raise ConfigurationError(f"relaxation factor must lie in (0, 1], got {relax}")

        bk = self.b[self.ik, self.fk]
        bd = self.b[self.dk, self.df]
        if scheme == "br2":
            G = self._gram()
            Gk = G[self.ik, self.fk]
            Gn = G[self.iv, self.fv][:, ::-1, ::-1]
            sigma1 = 0.25 * bk[:, :, None] * (Gk + Gn) * bk[:, None, :]
            sigmaD = bd[:, :, None] * G[self.dk, self.df] * bd[:, None, :]
            # exact symmetry; the Gram products above differ by roundoff
            sigma1 = 0.5 * (sigma1 + np.swapaxes(sigma1, 1, 2))
            sigmaD = 0.5 * (sigmaD + np.swapaxes(sigmaD, 1, 2))
        else:
            delta = self._sipg_delta()
            mb = self._sipg_face_matrix()
            sk = delta[self.ik, self.fk, None] * mb[self.ik, self.fk]
            sn = (delta[self.iv, self.fv, None] * mb[self.iv, self.fv])[:, ::-1]
            sigma1 = _diag_stack(0.25 * (sk + sn))
            sigmaD = _diag_stack(delta[self.dk, self.df, None] * mb[self.dk, self.df])

        sigma1 = relax * sigma1
        if relax_dirichlet:
            sigmaD = relax * sigmaD
        half = _diag_stack(0.5 * bk)
        return SatCoefficients(scheme=scheme, relax=relax, relax_dirichlet=relax_dirichlet,
                               sigma1=sigma1, sigma2_k=-half, sigma2_n=-half.copy(),
                               sigma3_k=half.copy(), sigma3_n=half.copy(),
                               sigma4=np.zeros_like(half), sigmaD=sigmaD)

    def _sipg_delta(self) -> np.ndarray:
        """``lambda_max(Lambda / J) || B^{1/2} R H^{-1/2} ||^2 / alpha`` in
        reference space, per element face (zero on Neumann faces)."""
        lam_max = tensor_lambda_max(self.lam).max(axis=1) / self.det
        inv_alpha = np.divide(1.0, self.alpha, out=np.zeros_like(self.alpha),
                              where=self.alpha > 0)
        return lam_max[:, None] * self.reference_trace_norms()[None, :] * inv_alpha

    def _sipg_face_matrix(self) -> np.ndarray:
        """Diagonal of reference ``B`` times the squared contravariant scale."""
        bref = np.stack([fb.b for fb in self.op.faces])
        return bref[None, :, :] * self.contravariant_scale()[:, :, None] ** 2

    # }}}


def _diag_stack(d: np.ndarray) -> np.ndarray:
    out = np.zeros(d.shape + (d.shape[-1],))
    idx = np.arange(d.shape[-1])
    out[..., idx, idx] = d
    return out


def sigma_sipg(disc: Discretization, face: InterfaceData | BoundaryData) -> np.ndarray:
    """SBP-SIPG penalty for one face: ``delta * B * Mscale`` summed over the
    sides, with ``delta`` from the largest eigenvalue bound of the BR2 Gram
    matrix and ``Mscale`` the squared contravariant scaling."""
    delta = disc._sipg_delta()
    mb = disc._sipg_face_matrix()
    if isinstance(face, InterfaceData):
        i = _interface_index(disc, face.kappa, face.nu)
        k, fk, v, fv = disc.ik[i], disc.fk[i], disc.iv[i], disc.fv[i]
        d = 0.25 * (delta[k, fk] * mb[k, fk] + (delta[v, fv] * mb[v, fv])[::-1])
        return np.diag(d)
    return np.diag(delta[face.kappa, face.face] * mb[face.kappa, face.face])


def _interface_index(disc: Discretization, k: int, v: int) -> int:
    hit = np.flatnonzero((disc.ik == k) & (disc.iv == v))
    if len(hit) != 1:
        raise ConfigurationError(f"no unique interface between elements {k} and {v}")
    return int(hit[0])


# {{{ SAT application

def interface_sat(uk: np.ndarray, un: np.ndarray, face: InterfaceData,
                  coeff: InterfaceCoefficients) -> tuple[np.ndarray, np.ndarray]:
    """Interface penalty vectors of both elements sharing *face*."""
    jump = face.Rk @ uk - face.Rn @ un
    davg = face.Dk @ uk + face.Dn @ un
    sk = face.Rk.T @ (coeff.sigma1 @ jump + coeff.sigma3_k @ davg) \
        + face.Dk.T @ (coeff.sigma2_k @ jump + coeff.sigma4 @ davg)
    sn = face.Rn.T @ (coeff.sigma1 @ (-jump) + coeff.sigma3_n @ davg) \
        + face.Dn.T @ (coeff.sigma2_n @ (-jump) + coeff.sigma4 @ davg)
    return sk, sn


def boundary_sat(u: np.ndarray, face: BoundaryData, data: np.ndarray | None,
                 sigmaD: np.ndarray | None = None) -> np.ndarray:
    """Dirichlet or Neumann penalty vector on one boundary face."""
    if data is None:
        raise ConfigurationError(f"missing {face.tag} data on element {face.kappa}")
    if face.tag == DIRICHLET:
        if sigmaD is None:
            raise ConfigurationError("Dirichlet SAT needs a SigmaD matrix")
        diff = face.R @ u - data
        return face.R.T @ (sigmaD @ diff) - face.D.T @ (face.b * diff)
    return face.R.T @ (face.b * (face.D @ u - data))

# }}}


# {{{ global system

@dataclass
class GlobalSystem:
    A: sp.csr_matrix
    b: np.ndarray
    #: Jacobian-scaled norm, one entry per degree of freedom
    h: np.ndarray
    disc: Discretization = field(repr=False)
    coeffs: SatCoefficients = field(repr=False)

    @property
    def n(self) -> int:
        return self.disc.n

    def residual(self, u: np.ndarray) -> np.ndarray:
        """Semi-discrete ``du/dt`` of the linear problem."""
        return (self.b - self.A @ u) / self.h

    def symmetry_error(self) -> float:
        diff = abs(self.A - self.A.T).max()
        return float(diff / abs(self.A).max())


def _eval_boundary(func, x: np.ndarray, t: float | None) -> np.ndarray:
    if func is None:
        return np.zeros(x.shape[:-1])
    if t is None:
        values = func(x[..., 0], x[..., 1])
    else:
        values = func(x[..., 0], x[..., 1], t)
    return np.broadcast_to(np.asarray(values, dtype=float), x.shape[:-1])


def boundary_values(disc: Discretization, dirichlet=None, neumann=None, t=None):
    """Dirichlet and Neumann data at the cubature nodes of the tagged faces."""
    uD = _eval_boundary(dirichlet, disc.xface[disc.dk, disc.df], t)
    uN = _eval_boundary(neumann, disc.xface[disc.nk, disc.nf], t)
    return uD, uN


def assemble(disc: Discretization, coeffs: SatCoefficients, forcing=None,
             dirichlet=None, neumann=None, t=None) -> GlobalSystem:
    """Assemble ``A u = b``; data are callables ``g(x, y)`` (or ``g(x, y, t)``
    when *t* is given) and default to zero."""
    K, n = disc.K, disc.n
    R = disc.R
    ik, fk, iv, fv = disc.ik, disc.fk, disc.iv, disc.fv

    diag = -disc.hp[:, :, None] * (np.einsum("kij,kjl->kil", disc.Dx, disc.Gx)
                                   + np.einsum("kij,kjl->kil", disc.Dy, disc.Gy))

    Rk = R[fk]
    Rn = R[fv][:, ::-1]
    Dk = disc.Dface[ik, fk]
    Dn = disc.Dface[iv, fv][:, ::-1]
    c = coeffs

    def block(Pt, S, Q):
        return np.einsum("fgi,fgh,fhj->fij", Pt, S, Q)

    Akk = block(Rk, c.sigma1, Rk) + block(Rk, c.sigma3_k, Dk) \
        + block(Dk, c.sigma2_k, Rk) + block(Dk, c.sigma4, Dk)
    Akn = -block(Rk, c.sigma1, Rn) + block(Rk, c.sigma3_k, Dn) \
        - block(Dk, c.sigma2_k, Rn) + block(Dk, c.sigma4, Dn)
    Ann = block(Rn, c.sigma1, Rn) + block(Rn, c.sigma3_n, Dn) \
        + block(Dn, c.sigma2_n, Rn) + block(Dn, c.sigma4, Dn)
    Ank = -block(Rn, c.sigma1, Rk) + block(Rn, c.sigma3_n, Dk) \
        - block(Dn, c.sigma2_n, Rk) + block(Dn, c.sigma4, Dk)
    np.add.at(diag, ik, Akk)
    np.add.at(diag, iv, Ann)

    rhs = np.zeros((K, n))
    if forcing is not None:
        rhs += disc.hp * _eval_boundary(forcing, disc.x, t)

    uD, uN = boundary_values(disc, dirichlet, neumann, t)
    Rd, Dd, bd = R[disc.df], disc.Dface[disc.dk, disc.df], disc.b[disc.dk, disc.df]
    BD = bd[:, :, None] * Dd
    np.add.at(diag, disc.dk, np.einsum("fgi,fgh,fhj->fij", Rd, c.sigmaD, Rd)
              - np.einsum("fgi,fgj->fij", BD, Rd))
    np.add.at(rhs, disc.dk, np.einsum("fgi,fgh,fh->fi", Rd, c.sigmaD, uD)
              - np.einsum("fgi,fg->fi", BD, uD))

    Rn_b, Dn_b, bn = R[disc.nf], disc.Dface[disc.nk, disc.nf], disc.b[disc.nk, disc.nf]
    np.add.at(diag, disc.nk, np.einsum("fgi,fg,fgj->fij", Rn_b, bn, Dn_b))
    np.add.at(rhs, disc.nk, np.einsum("fgi,fg->fi", Rn_b, bn * uN))

    idx = np.arange(n)
    base = np.arange(K) * n
    rows = [(base[:, None, None] + idx[None, :, None]).repeat(n, 2).ravel()]
    cols = [(base[:, None, None] + idx[None, None, :]).repeat(n, 1).ravel()]
    vals = [diag.ravel()]
    for blk, r, cc in ((Akn, ik, iv), (Ank, iv, ik)):
        rows.append((r[:, None, None] * n + idx[None, :, None]).repeat(n, 2).ravel())
        cols.append((cc[:, None, None] * n + idx[None, None, :]).repeat(n, 1).ravel())
        vals.append(blk.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(K * n, K * n))
    A.sum_duplicates()
    return GlobalSystem(A=A, b=rhs.ravel(), h=disc.hp.ravel(), disc=disc, coeffs=coeffs)


def assemble_steady(mesh: TriangleMesh, op: SbpOperator, diffusion, scheme: str = "br2",
                    relax: float = 1.0, forcing=None, dirichlet=None, neumann=None,
                    relax_dirichlet: bool = True) -> GlobalSystem:
    disc = Discretization(mesh, op, diffusion)
    coeffs = disc.sat_coefficients(scheme, relax, relax_dirichlet)
    return assemble(disc, coeffs, forcing, dirichlet, neumann)


def unsteady_residual(disc: Discretization, coeffs: SatCoefficients, u: np.ndarray,
                      t: float | None = None, forcing=None, dirichlet=None,
                      neumann=None) -> np.ndarray:
    """Element-by-element ``du/dt = D u + f - H^{-1} (s_I + s_B)``.

    Evaluated directly on traces rather than through the assembled matrix.
    """
    K, n = disc.K, disc.n
    U = u.reshape(K, n)
    du = np.einsum("kij,kj->ki", disc.Dx, np.einsum("kij,kj->ki", disc.Gx, U)) \
        + np.einsum("kij,kj->ki", disc.Dy, np.einsum("kij,kj->ki", disc.Gy, U))
    if forcing is not None:
        du += _eval_boundary(forcing, disc.x, t)

    s = np.zeros((K, n))
    ik, fk, iv, fv = disc.ik, disc.fk, disc.iv, disc.fv
    Rk, Rn = disc.R[fk], disc.R[fv][:, ::-1]
    Dk, Dn = disc.Dface[ik, fk], disc.Dface[iv, fv][:, ::-1]
    uk, un = U[ik], U[iv]
    jump = np.einsum("fgi,fi->fg", Rk, uk) - np.einsum("fgi,fi->fg", Rn, un)
    davg = np.einsum("fgi,fi->fg", Dk, uk) + np.einsum("fgi,fi->fg", Dn, un)

    def mv(S, v):
        return np.einsum("fgh,fh->fg", S, v)

    c = coeffs
    sk = np.einsum("fgi,fg->fi", Rk, mv(c.sigma1, jump) + mv(c.sigma3_k, davg)) \
        + np.einsum("fgi,fg->fi", Dk, mv(c.sigma2_k, jump) + mv(c.sigma4, davg))
    sn = np.einsum("fgi,fg->fi", Rn, -mv(c.sigma1, jump) + mv(c.sigma3_n, davg)) \
        + np.einsum("fgi,fg->fi", Dn, -mv(c.sigma2_n, jump) + mv(c.sigma4, davg))
    np.add.at(s, ik, sk)
    np.add.at(s, iv, sn)

    uD, uN = boundary_values(disc, dirichlet, neumann, t)
    Rd, Dd, bd = disc.R[disc.df], disc.Dface[disc.dk, disc.df], disc.b[disc.dk, disc.df]
    diff = np.einsum("fgi,fi->fg", Rd, U[disc.dk]) - uD
    np.add.at(s, disc.dk, np.einsum("fgi,fg->fi", Rd, mv(c.sigmaD, diff))
              - np.einsum("fgi,fg->fi", Dd, bd * diff))
    Rb, Db, bn = disc.R[disc.nf], disc.Dface[disc.nk, disc.nf], disc.b[disc.nk, disc.nf]
    ndiff = np.einsum("fgi,fi->fg", Db, U[disc.nk]) - uN
    np.add.at(s, disc.nk, np.einsum("fgi,fg->fi", Rb, bn * ndiff))

    return (du - s / disc.hp).ravel()


def face_contributions(disc: Discretization, coeffs: SatCoefficients,
                       u: np.ndarray) -> np.ndarray:
    """Per element face, the share ``1^T B D_gk u - 1^T s_gk`` of the
    total rate ``1^T H du/dt`` of a homogeneous problem; shape ``(K, 3)``."""
    K, n = disc.K, disc.n
    U = u.reshape(K, n)
    out = np.einsum("kfg,kfgi,ki->kf", disc.b, disc.Dface, U)
    for i in range(len(disc.ik)):
        face = disc.interface_data(i)
        sk, sn = interface_sat(U[face.kappa], U[face.nu], face, coeffs.interface(i))
        out[disc.ik[i], disc.fk[i]] -= sk.sum()
        out[disc.iv[i], disc.fv[i]] -= sn.sum()
    for j, (k, f) in enumerate(zip(disc.dk, disc.df)):
        out[k, f] -= boundary_sat(U[k], disc.boundary_data(k, f), np.zeros(disc.ng),
                                  coeffs.sigmaD[j]).sum()
    for k, f in zip(disc.nk, disc.nf):
        out[k, f] -= boundary_sat(U[k], disc.boundary_data(k, f), np.zeros(disc.ng)).sum()
    return out


def functional(disc: Discretization, coeffs: SatCoefficients, u: np.ndarray, g=None,
               vD=None, vN=None, dirichlet=None) -> float:
    """Discrete linear functional with the adjoint-consistency correction on
    Dirichlet faces."""
    U = u.reshape(disc.K, disc.n)
    total = 0.0
    if g is not None:
        total += float(np.sum(disc.hp * _eval_boundary(g, disc.x, None) * U))
    if vN is not None and len(disc.nk):
        vn = _eval_boundary(vN, disc.xface[disc.nk, disc.nf], None)
        trace = np.einsum("fgi,fi->fg", disc.R[disc.nf], U[disc.nk])
        total += float(np.sum(vn * disc.b[disc.nk, disc.nf] * trace))
    if vD is not None:
        vd = _eval_boundary(vD, disc.xface[disc.dk, disc.df], None)
        uD, _ = boundary_values(disc, dirichlet, None)
        Rd = disc.R[disc.df]
        trace = np.einsum("fgi,fi->fg", Rd, U[disc.dk])
        flux = np.einsum("fgi,fi->fg", disc.Dface[disc.dk, disc.df], U[disc.dk])
        total -= float(np.sum(vd * disc.b[disc.dk, disc.df] * flux))
        total += float(np.einsum("fg,fgh,fh->", vd, coeffs.sigmaD, trace - uD))
    return total

# }}}


# {{{ condition checkers

@dataclass
class ConditionReport:
    checks: dict[str, Check]
    details: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def as_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": {k: {"value": c.value, "tol": c.tol, "passed": c.passed}
                           for k, c in self.checks.items()},
                "details": dict(self.details)}


def verify_adjoint_conditions(disc: Discretization, coeffs: SatCoefficients, *,
                              seed: int = 0, tol: float = 1.0e-10) -> ConditionReport:
    """Check the four interface conditions for adjoint consistency and
    evaluate the adjoint interface SAT on a random global polynomial of
    degree ``p``.

    The adjoint SAT of a polynomial vanishes when its normal flux is
    extrapolated exactly from both sides, i.e. when ``Lambda grad V`` stays
    in ``P^p``; use a diffusion tensor of degree at most one for that part.
    """
    c = coeffs
    B = _diag_stack(disc.b[disc.ik, disc.fk])
    scale = max(np.abs(B).max(), 1.0e-300)
    v1 = np.abs(c.sigma1 - np.swapaxes(c.sigma1, 1, 2)).max(initial=0.0)
    v2 = np.abs(c.sigma2_k + c.sigma2_n + B).max(initial=0.0)
    v3 = np.abs(c.sigma3_k + c.sigma3_n - B).max(initial=0.0)
    v4 = np.abs(c.sigma4 - np.swapaxes(c.sigma4, 1, 2)).max(initial=0.0)
    sym = np.abs(c.sigma3_k - c.sigma2_k - B).max(initial=0.0)

    # random polynomial V in P^p, global and smooth
    rng = np.random.default_rng(seed)
    p = disc.op.p
    exps = [(a - j, j) for a in range(p + 1) for j in range(a + 1)]
    coef = rng.uniform(-1.0, 1.0, len(exps))

    def poly(x):
        return sum(cc * x[..., 0] ** a * x[..., 1] ** b for cc, (a, b) in zip(coef, exps))

    V = poly(disc.x)
    worst = 0.0
    for i in range(len(disc.ik)):
        face = disc.interface_data(i)
        vk, vn = V[face.kappa], V[face.nu]
        Rk, Rn, Dk, Dn = face.Rk @ vk, face.Rn @ vn, face.Dk @ vk, face.Dn @ vn
        Bi = np.diag(face.b)
        top = c.sigma1[i] @ Rk - c.sigma1[i] @ Rn + (c.sigma2_k[i] + Bi) @ Dk \
            - c.sigma2_n[i] @ Dn
        bot = (c.sigma3_k[i] - Bi) @ Rk + c.sigma3_n[i] @ Rn + c.sigma4[i] @ Dk \
            + c.sigma4[i] @ Dn
        sk = face.Rk.T @ top + face.Dk.T @ bot
        worst = max(worst, float(np.abs(sk).max()))
        # mirrored side
        top = c.sigma1[i] @ Rn - c.sigma1[i] @ Rk + (c.sigma2_n[i] + Bi) @ Dn \
            - c.sigma2_k[i] @ Dk
        bot = (c.sigma3_n[i] - Bi) @ Rn + c.sigma3_k[i] @ Rk + c.sigma4[i] @ Dn \
            + c.sigma4[i] @ Dk
        sn = face.Rn.T @ top + face.Dn.T @ bot
        worst = max(worst, float(np.abs(sn).max()))

    checks = {
        "sigma1_shared": Check(float(v1), tol * scale),
        "sigma2_sum": Check(float(v2), tol * scale),
        "sigma3_sum": Check(float(v3), tol * scale),
        "sigma4_shared": Check(float(v4), tol * scale),
        "symmetrization": Check(float(sym), tol * scale),
        "adjoint_sat": Check(worst, 1.0e-9),
    }
    return ConditionReport(checks=checks, details={"B_norm": float(scale)})


def stability_margins(disc: Discretization, coeffs: SatCoefficients):
    """Scaled minimum eigenvalues of the interface and Dirichlet Schur
    complements and of ``Sigma4``, plus the complements themselves."""
    c = coeffs
    inter, dirich, s4 = [], [], []
    comp_i, comp_d = [], []
    for i in range(len(disc.ik)):
        face = disc.interface_data(i)
        gk = face.Ck @ face.Wk @ face.Ck.T
        gn = face.Cn @ face.Wn @ face.Cn.T
        schur = c.sigma1[i] - c.sigma2_k[i] @ gk @ c.sigma2_k[i] \
            - c.sigma2_n[i] @ gn @ c.sigma2_n[i]
        scale = max(np.abs(np.linalg.eigvalsh(c.sigma1[i])).max(), np.abs(schur).max(),
                    1.0e-300)
        inter.append(np.linalg.eigvalsh(0.5 * (schur + schur.T)).min() / scale)
        comp_i.append(schur)
        s4.append(np.linalg.eigvalsh(c.sigma4[i]).min())
    for j, (k, f) in enumerate(zip(disc.dk, disc.df)):
        face = disc.boundary_data(k, f)
        B = face.B
        schur = c.sigmaD[j] - B @ face.C @ face.W @ face.C.T @ B
        scale = max(np.abs(np.linalg.eigvalsh(c.sigmaD[j])).max(), np.abs(schur).max(),
                    1.0e-300)
        dirich.append(np.linalg.eigvalsh(0.5 * (schur + schur.T)).min() / scale)
        comp_d.append(schur)
    return (np.array(inter), np.array(dirich), np.array(s4), comp_i, comp_d)


def verify_stability_conditions(disc: Discretization, coeffs: SatCoefficients, *,
                                tol: float = 1.0e-10) -> ConditionReport:
    inter, dirich, s4, comp_i, comp_d = stability_margins(disc, coeffs)
    min_i = float(inter.min()) if len(inter) else 0.0
    min_d = float(dirich.min()) if len(dirich) else 0.0
    min_4 = float(s4.min()) if len(s4) else 0.0
    checks = {
        "interface_schur": Check(-min_i, tol),
        "dirichlet_schur": Check(-min_d, tol),
        "sigma4_psd": Check(-min_4, tol),
    }
    return ConditionReport(checks=checks, details={
        "interface_margin": min_i, "dirichlet_margin": min_d, "sigma4_margin": min_4,
        "max_interface_complement": float(max((np.abs(s).max() for s in comp_i), default=0.0)),
        "max_dirichlet_complement": float(max((np.abs(s).max() for s in comp_d), default=0.0)),
    })

# }}}


# {{{ export

def write_coo(stream, A: sp.spmatrix) -> None:
    """Write *A* as ``row col value`` lines, one nonzero per line."""
    coo = A.tocoo()
    stream.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
    for r, c, v in zip(coo.row, coo.col, coo.data):
        stream.write(f"{r} {c} {v:.17e}\n")

# }}}

# vim: foldmethod=marker
