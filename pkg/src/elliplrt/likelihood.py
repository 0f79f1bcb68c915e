"""Log-likelihood, score vector and observed information for the elliptical model.

The log-likelihood is sum_i [ -1/2 log|Sigma_i| + log g(u_i) ] with
u_i = z_i' Sigma_i^{-1} z_i and z_i = y_i - mu_i.  The score is assembled
in the algebraically simplified form

    U_r = sum_i [ v_i d_ir' Sigma_i^{-1} z_i - tr(Sigma_i^{-1} C_ir)/2
                  + v_i z_i' Sigma_i^{-1} C_ir Sigma_i^{-1} z_i / 2 ],

which is identical to the block form U = F' H s (the materialized
Kronecker variant is kept as a test oracle).  The observed information is
assembled per observation from

    J_rs = sum_i [ T_ir' Sigma_i^{-1} d_is + tr(B_ir A_is) + E_irs ],

with A_ir = -Sigma_i^{-1} C_ir Sigma_i^{-1} and the T/B/E terms below; it
equals the negative Hessian of the log-likelihood.  J is symmetrized by
averaging after assembly; raw relative asymmetry above 1e-8 triggers a
warning.

All routines accept an optional residual override so that the
information matrix can be evaluated with residuals reconstructed through
the ancillary (z_i = P_i a_i) instead of y_i - mu_i.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._linalg import chol_inverse, chol_solve, logdet_from_chol
from .families import EllipticalFamily
from .model import ModelEval

__all__ = ["ScoreInfo", "loglik", "score", "observed_info", "score_info"]

ASYMMETRY_WARN = 1e-8


@dataclass
class ScoreInfo:
    """Likelihood, score and observed information at one theta."""

    loglik: float
    score: np.ndarray  # (p,)
    info: np.ndarray | None  # (p,p), symmetrized
    per_obs_u: np.ndarray  # (n,)
    per_obs_v: np.ndarray  # (n,)
    per_obs_vdot: np.ndarray  # (n,)
    clamped: list  # observation indices where the weight clamp fired


def _residuals(ev: ModelEval, z_blocks):
    if z_blocks is not None:
        return z_blocks
    return [be.data.y - be.mu for be in ev.blocks]


def _block_core(family: EllipticalFamily, be, z):
    """Shared per-block quantities: w = Sigma^{-1} z, u, weights, logdet."""
    q = z.shape[1]
    w = chol_solve(be.P, z)
    u = np.einsum("ma,ma->m", z, w)
    u = np.maximum(u, 0.0)  # rounding can produce tiny negatives at exact fits
    v, vdot = family.weights(u, q, clamp=True)
    return w, u, v, vdot


def _assemble(family: EllipticalFamily, ev: ModelEval, z_blocks=None, want_score=True, want_info=True):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # optimizer line searches probe extreme theta where intermediate
        # products overflow; non-finite results are rejected by the caller
        return _assemble_impl(family, ev, z_blocks, want_score, want_info)


def _assemble_impl(family: EllipticalFamily, ev: ModelEval, z_blocks, want_score, want_info):
    p = ev.p
    total_ll = 0.0
    U = np.zeros(p)
    J = np.zeros((p, p))
    n = ev.n
    per_u = np.empty(n)
    per_v = np.empty(n)
    per_vdot = np.empty(n)
    clamped: list = []

    for be, z in zip(ev.blocks, _residuals(ev, z_blocks)):
        q = be.data.q
        w, u, v, vdot = _block_core(family, be, z)
        per_u[be.data.idx] = u
        per_v[be.data.idx] = v
        per_vdot[be.data.idx] = vdot
        if family.kind == "power_exponential" and family.lam != 1.0:
            hit = be.data.idx[u < 1e-12]
            clamped.extend(int(i) for i in hit)

        total_ll += float(np.sum(-0.5 * logdet_from_chol(be.P) + family.log_g(u, q)))
        if not (want_score or want_info):
            continue

        Sinv = chol_inverse(be.P)
        dmu, C = be.dmu, be.dsigma
        alpha = np.einsum("mra,ma->mr", dmu, w)  # d_r' Sigma^{-1} z
        Cw = np.einsum("mrab,mb->mra", C, w)  # C_r Sigma^{-1} z
        wCw = np.einsum("ma,mra->mr", w, Cw)
        trSC = np.einsum("mab,mrba->mr", Sinv, C)

        if want_score:
            U += np.einsum("m,mr->r", v, alpha + 0.5 * wCw) - 0.5 * trSC.sum(axis=0)

        if want_info:
            SC = np.einsum("mab,mrbc->mrac", Sinv, C)
            A = -np.einsum("mrac,mcd->mrad", SC, Sinv)  # A_r
            kappa = np.einsum("ma,mrab,mb->mr", z, A, z)

            coef_T = -vdot[:, None] * kappa + 2.0 * vdot[:, None] * alpha
            T = coef_T[:, :, None] * z[:, None, :] + v[:, None, None] * (dmu + Cw)
            TS = np.einsum("mra,mab->mrb", T, Sinv)
            term1 = np.einsum("mrb,msb->mrs", TS, dmu)

            zz = z[:, :, None] * z[:, None, :]
            coef_B = -vdot[:, None] * alpha + 0.5 * vdot[:, None] * kappa
            B = (
                coef_B[:, :, None, None] * zz[:, None]
                - v[:, None, None, None] * z[:, None, :, None] * dmu[:, :, None, :]
                - 0.5 * C
            )
            trBA = np.einsum("mrab,msba->mrs", B, A)

            M = be.sigma - v[:, None, None] * zz
            N = chol_solve(be.P, M)  # Sigma^{-1} M
            CN = np.einsum("msbc,mca->msba", C, N)
            E = np.einsum("mrab,msba->mrs", A, CN)
            if be.d2sigma is not None:
                K = np.einsum("mab,mbc->mac", N, Sinv)  # Sigma^{-1} M Sigma^{-1}
                E = E + 0.5 * np.einsum("mrsab,mba->mrs", be.d2sigma, K)
            if be.d2mu is not None:
                E = E - v[:, None, None] * np.einsum("ma,mrsa->mrs", w, be.d2mu)

            J += (term1 + trBA + E).sum(axis=0)

    info = None
    if want_info:
        sym = 0.5 * (J + J.T)
        scale = np.max(np.abs(sym))
        if np.isfinite(scale) and scale > 0:
            raw_asym = np.max(np.abs(J - J.T)) / scale
            if np.isfinite(raw_asym) and raw_asym > ASYMMETRY_WARN:
                warnings.warn(
                    f"observed information asymmetry {raw_asym:.2e} exceeds {ASYMMETRY_WARN:.0e}",
                    RuntimeWarning,
                    stacklevel=3,
                )
        info = sym
    return ScoreInfo(
        loglik=total_ll,
        score=U,
        info=info,
        per_obs_u=per_u,
        per_obs_v=per_v,
        per_obs_vdot=per_vdot,
        clamped=clamped,
    )


def loglik(family: EllipticalFamily, ev: ModelEval, z_blocks=None) -> float:
    """Log-likelihood at ev.theta (optionally with overridden residuals)."""
    return _assemble(family, ev, z_blocks, want_score=False, want_info=False).loglik


def score(family: EllipticalFamily, ev: ModelEval) -> np.ndarray:
    """Score vector at ev.theta."""
    return _assemble(family, ev, want_score=True, want_info=False).score


def observed_info(family: EllipticalFamily, ev: ModelEval, z_blocks=None) -> np.ndarray:
    """Observed information matrix (negative Hessian) at ev.theta.

    ``z_blocks`` overrides the residuals per block; this is how the
    double-tilde information (residuals reconstructed through the
    ancillary) is obtained from the same assembly.
    """
    return _assemble(family, ev, z_blocks, want_score=False, want_info=True).info


def score_info(family: EllipticalFamily, ev: ModelEval, want_info: bool = True) -> ScoreInfo:
    """Log-likelihood, score and (optionally) observed information in one pass."""
    return _assemble(family, ev, want_score=True, want_info=want_info)
