"""Approximate ancillary, Cholesky derivatives and sample-space derivatives.

The ancillary vector of observation i is a_i = P_i^{-1}(y_i - mu_i)
evaluated at the unrestricted MLE, where P_i is the lower Cholesky factor
of Sigma_i.  Holding a fixed, the data are reconstructed as
y_i = P_i a_i + mu_i; derivatives of the log-likelihood with respect to
the MLE (l', U') and the information matrix with residuals reconstructed
at the restricted estimate (the double-tilde J) are what the adjustment
factors of the modified test statistics consume.

Cholesky-factor derivatives use the identity dP = P Phi(P^{-1} dS P^{-T})
with Phi = strict lower triangle plus half the diagonal; the elementwise
recursion is kept as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._linalg import chol_inverse, chol_solve, phi_lower, solve_lower
from .families import EllipticalFamily
from .likelihood import _block_core, observed_info
from .model import Dataset, ModelEval, ModelSpec, evaluate

__all__ = [
    "AncillaryBundle",
    "SampleSpaceDerivs",
    "cholesky_lower",
    "cholesky_derivative",
    "build_ancillary",
    "sample_space_gradients",
    "doubletilde_info",
]


def cholesky_lower(S: np.ndarray) -> np.ndarray:
    """Lower-triangular P with P P' = S; raises on non-SPD input."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-8 * max(1.0, np.max(np.abs(S)))):
        raise ValueError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValueError("matrix is not positive definite") from None


def cholesky_derivative(P: np.ndarray, dS: np.ndarray) -> np.ndarray:
    """Directional derivative of the Cholesky factor: d chol(S)[dS].

    Given P = chol(S) and a symmetric perturbation dS, returns the lower
    triangular dP with dP P' + P dP' = dS, via dP = P Phi(P^{-1} dS P^{-T}).
    """
    P = np.asarray(P, dtype=float)
    dS = np.asarray(dS, dtype=float)
    if np.min(np.abs(np.diag(P))) == 0.0:
        raise ValueError("Cholesky factor is singular")
    X = scipy.linalg.solve_triangular(P, dS, lower=True)
    X = scipy.linalg.solve_triangular(P, X.T, lower=True).T
    return P @ phi_lower(X)


# ---------------------------------------------------------------------------
# Ancillary bundle
# ---------------------------------------------------------------------------


@dataclass
class BundleBlock:
    a: np.ndarray  # (m, q) ancillary vectors
    P: np.ndarray  # (m, q, q) Cholesky factors at theta-hat
    dP: np.ndarray  # (m, p, q, q) their parameter derivatives at theta-hat


@dataclass
class AncillaryBundle:
    """Ancillary vectors with hat-level Cholesky factors and derivatives.

    Blocks are aligned with the blocks of ``eval_hat``; the reconstruction
    identity P_i a_i + mu_i(theta_hat) = y_i holds per observation.
    """

    theta_hat: np.ndarray
    eval_hat: ModelEval
    blocks: list

    def a_of(self, i: int) -> np.ndarray:
        for bb, be in zip(self.blocks, self.eval_hat.blocks):
            pos = np.nonzero(be.data.idx == i)[0]
            if pos.size:
                return bb.a[int(pos[0])]
        raise IndexError(f"observation {i} not found")


def build_ancillary(fit_hat, data: Dataset, model: ModelSpec, family: EllipticalFamily) -> AncillaryBundle:
    """Construct the ancillary bundle at the unrestricted MLE.

    ``fit_hat`` must be a converged unrestricted fit; its cached model
    evaluation is reused when present.
    """
    if not fit_hat.converged:
        raise ValueError("ancillary construction requires a converged unrestricted fit")
    ev = getattr(fit_hat, "eval_", None)
    if ev is None:
        ev = evaluate(model, fit_hat.theta, data)
    blocks = []
    for be in ev.blocks:
        z = be.data.y - be.mu
        a = solve_lower(be.P, z[:, :, None])[:, :, 0]
        Pinv = solve_lower(be.P, np.broadcast_to(np.eye(be.data.q), be.P.shape).copy())
        M = np.einsum("mab,mrbc,mdc->mrad", Pinv, be.dsigma, Pinv)
        dP = np.einsum("mab,mrbc->mrac", be.P, phi_lower(M))
        blocks.append(BundleBlock(a=a, P=be.P, dP=dP))
    return AncillaryBundle(theta_hat=ev.theta, eval_hat=ev, blocks=blocks)


# ---------------------------------------------------------------------------
# Sample-space derivatives
# ---------------------------------------------------------------------------


@dataclass
class SampleSpaceDerivs:
    """Derivatives with respect to the MLE entering the adjustment factors."""

    ell_hat_prime: np.ndarray  # (p,) l' at theta-hat
    ell_tilde_prime: np.ndarray  # (p,) l' at theta-tilde
    U_tilde_prime: np.ndarray  # (p,p) U' at theta-tilde; [r,s] = d l'_s / d theta_r
    J_doubletilde: np.ndarray  # (p,p)


def sample_space_gradients(eval_at: ModelEval, bundle: AncillaryBundle, family: EllipticalFamily):
    """(l', U') at eval_at.theta, holding the ancillary fixed.

    l'_r = sum_i (a_i' dP_ir' + dmu-hat_ir') Sigma_i^{-1} (-v_i z_i) and
    U'[r,s] = sum_i (a_i' dP_is' + dmu-hat_is') Sigma_i^{-1} Q_ir, where
    z_i = P-hat_i a_i + mu-hat_i - mu_i, every non-hat quantity is
    evaluated at eval_at.theta, and

    Q_ir = 2 vdot_i z_i (d_ir' Sigma_i^{-1} z_i) + v_i d_ir
           - vdot_i z_i (z_i' A_ir z_i) + v_i C_ir Sigma_i^{-1} z_i.
    """
    p = eval_at.p
    ell = np.zeros(p)
    Uprime = np.zeros((p, p))
    for be, be_hat, bb in zip(eval_at.blocks, bundle.eval_hat.blocks, bundle.blocks):
        if not np.array_equal(be.data.idx, be_hat.data.idx):
            raise ValueError("evaluation and bundle block layouts do not match")
        z = np.einsum("mab,mb->ma", bb.P, bb.a) + be_hat.mu - be.mu
        w, u, v, vdot = _block_core(family, be, z)
        Rhat = np.einsum("mrab,mb->mra", bb.dP, bb.a) + be_hat.dmu

        ell += -np.einsum("m,mra,ma->r", v, Rhat, w)

        Sinv = chol_inverse(be.P)
        dmu, C = be.dmu, be.dsigma
        alpha = np.einsum("mra,ma->mr", dmu, w)
        Cw = np.einsum("mrab,mb->mra", C, w)
        SC = np.einsum("mab,mrbc->mrac", Sinv, C)
        A = -np.einsum("mrac,mcd->mrad", SC, Sinv)
        kappa = np.einsum("ma,mrab,mb->mr", z, A, z)
        coef = 2.0 * vdot[:, None] * alpha - vdot[:, None] * kappa
        Q = coef[:, :, None] * z[:, None, :] + v[:, None, None] * (dmu + Cw)

        QS = np.einsum("mra,mab->mrb", Q, Sinv)
        Uprime += np.einsum("mrb,msb->rs", QS, Rhat)
    return ell, Uprime


def doubletilde_info(eval_tilde: ModelEval, bundle: AncillaryBundle, family: EllipticalFamily) -> np.ndarray:
    """Observed information at theta-tilde with reconstructed residuals.

    Residuals are z_i = P_i(theta-tilde) a_i instead of y_i - mu_i, so the
    squared radius is u_i = a_i' P_i' Sigma_i^{-1} P_i a_i; the assembly is
    otherwise the ordinary observed-information one.  At
    theta-tilde = theta-hat this reproduces J(theta-hat) exactly.
    """
    z_blocks = []
    for be, bb in zip(eval_tilde.blocks, bundle.blocks):
        z_blocks.append(np.einsum("mab,mb->ma", be.P, bb.a))
    return observed_info(family, eval_tilde, z_blocks=z_blocks)
