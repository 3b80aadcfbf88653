"""Semiparametric linear mixed model with mean-constrained mixture errors.

    y_it = X_it beta + Z_it gamma_i + eps_it

Both ``eps_it`` and ``gamma_i`` are centred mixtures: ``eps = eps~ - E[eps~]``
with ``eps~ ~ sum_j p_j N(mu_j, a sigma^2)`` and a Dirichlet process on
``(p_j, mu_j)`` with centring measure ``N(0, (1 - a) sigma^2)``; likewise for
``gamma``.  Weights use the re-normalized stick-breaking truncation.

The random effects are integrated out, giving the collapsed likelihood
``f_k`` of :func:`collapsed_loglik`.  Allocations ``s_eps`` (n x T) and
``s_gam`` (n) are part of the state.  The SMC transition appends one atom
per block and moves every allocation to it with probability equal to the
new atom's weight, which makes the incremental weight ``f_{k+1} / f_k``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._batch import ParticleBatch, sample_initial
from .adaptive_mh import AdaptiveScale, mh_step
from .datasets import Panel
from .mixtures import categorical_sample
from .random_measures import log_stick_weights, sample_sticks, stick_from_logit, stick_logit

__all__ = [
    "FoldedTPrior",
    "LmmPriors",
    "LmmState",
    "LmmModel",
    "rsb_log_weights",
    "collapsed_loglik",
    "log_f_core",
    "smc_transition_lmm",
    "make_synthetic_panel",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class FoldedTPrior:
    """Density ``p(x) propto (1 + x/A)^{-(nu+1)/2}`` on ``x > 0``.

    Proper only for ``nu > 1``, where it is a Lomax law with shape
    ``(nu - 1)/2`` and scale ``A``.
    """

    nu: float = 1.0
    A: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.A > 0):
            raise ValueError("nu and A must be positive")

    @property
    def proper(self):
        return self.nu > 1

    def logpdf(self, x):
        """Unnormalized log density (normalized when proper)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            lp = -0.5 * (self.nu + 1.0) * np.log1p(x / self.A)
        if self.proper:
            shape = 0.5 * (self.nu - 1.0)
            lp = lp + np.log(shape / self.A)
        return np.where(x > 0, lp, -np.inf)

    def sample(self, size, rng):
        if not self.proper:
            raise ValueError("the folded-t prior with nu <= 1 is improper and cannot be sampled")
        return stats.lomax.rvs(0.5 * (self.nu - 1.0), scale=self.A, size=size, random_state=rng)


@dataclass(frozen=True)
class LmmPriors:
    """Hyperpriors: ``a ~ Be``, ``sigma^2 ~ FT``, ``M ~ Ga(shape, rate)``, ``beta ~ N(0, I / beta_prec)``."""

    a_eps: tuple = (1.0, 19.0)
    a_gam: tuple = (1.0, 19.0)
    s2_eps: FoldedTPrior = field(default_factory=lambda: FoldedTPrior(1.0, 0.01))
    s2_gam: FoldedTPrior = field(default_factory=lambda: FoldedTPrior(1.0, 1.0))
    M_eps: tuple = (1.0, 1.0)
    M_gam: tuple = (1.0, 1.0)
    beta_prec: float = 1e-6


@dataclass
class LmmState(ParticleBatch):
    beta: np.ndarray  # (S, p)
    Ve: np.ndarray  # (S, N)
    log1m_Ve: np.ndarray  # log(1 - Ve)
    mue: np.ndarray
    Vg: np.ndarray
    log1m_Vg: np.ndarray
    mug: np.ndarray
    a_e: np.ndarray  # (S,)
    s2_e: np.ndarray
    M_e: np.ndarray
    a_g: np.ndarray
    s2_g: np.ndarray
    M_g: np.ndarray
    se: np.ndarray  # (S, n, T)
    sg: np.ndarray  # (S, n)
    sc_mue: AdaptiveScale
    sc_Ve: AdaptiveScale
    sc_mug: AdaptiveScale
    sc_Vg: AdaptiveScale
    sc_ae: AdaptiveScale
    sc_s2e: AdaptiveScale
    sc_ag: AdaptiveScale
    sc_s2g: AdaptiveScale

    @property
    def n_atoms(self):
        return self.Ve.shape[1]


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------


def rsb_log_weights(V, log1m_V=None):
    """Normalized log weights of the RSB truncation, along the last axis.

    ``log1m_V`` is ``log(1 - V)`` (computed from ``V`` when omitted).
    """
    L = np.log1p(-np.asarray(V, dtype=float)) if log1m_V is None else log1m_V
    log_z = np.log(-np.expm1(np.sum(L, axis=-1, keepdims=True)))
    return log_stick_weights(V, L) - log_z


def log_f_core(resid, Z, mue_s, mubar_e, mug_s, mubar_g, Ae, Ag):
    """Log of the likelihood with the random effects integrated out.

    Parameters
    ----------
    resid : (S, n, T)
        ``y - X beta``.
    Z : (n, T)
    mue_s : (S, n, T)
        Atom means of the allocated error components.
    mubar_e, Ae, Ag, mubar_g : (S,)
    mug_s : (S, n)
    """
    de = resid - mue_s + mubar_e[:, None, None]
    dg = mug_s - mubar_g[:, None]
    Ae_ = Ae[:, None]
    Ag_ = Ag[:, None]
    c = (Z * de).sum(axis=-1) / Ae_ + dg / Ag_
    dd = (Z**2).sum(axis=-1)[None, :] / Ae_ + 1.0 / Ag_
    n, T = Z.shape
    quad = (de**2).sum(axis=(1, 2)) / Ae + (dg**2).sum(axis=1) / Ag - (c**2 / dd).sum(axis=1)
    return (
        -0.5 * quad
        - 0.5 * n * np.log(Ag)
        - 0.5 * n * T * np.log(Ae)
        - 0.5 * np.log(dd).sum(axis=1)
        - 0.5 * n * T * _LOG_2PI
    )


def _gather(mu, s):
    """``mu[p, s[p, ...]]`` for a batch."""
    S = mu.shape[0]
    return np.take_along_axis(mu, s.reshape(S, -1), 1).reshape(s.shape)


def collapsed_loglik(panel, state):
    """``log f_k`` for every particle of ``state``."""
    resid = panel.y[None] - np.einsum("ntp,sp->snt", panel.X, state.beta)
    pe = np.exp(rsb_log_weights(state.Ve, state.log1m_Ve))
    pg = np.exp(rsb_log_weights(state.Vg, state.log1m_Vg))
    return log_f_core(
        resid,
        panel.Z,
        _gather(state.mue, state.se),
        (pe * state.mue).sum(axis=1),
        _gather(state.mug, state.sg),
        (pg * state.mug).sum(axis=1),
        state.a_e * state.s2_e,
        state.a_g * state.s2_g,
    )


# ---------------------------------------------------------------------------
# SMC transition
# ---------------------------------------------------------------------------


def smc_transition_lmm(state, rng):
    """Append one atom to each block and move allocations to it.

    Each allocation moves independently with probability ``1 - r`` where
    ``r = Z_old / (Z_old + w_new)``, ``Z_old = 1 - prod(1 - V_j)`` over the
    old sticks and ``w_new`` the unnormalized weight of the new atom; ``1 - r``
    is the new atom's normalized weight.
    """
    S = state.Ve.shape[0]
    out = {}
    for blk, s_name in (("e", "se"), ("g", "sg")):
        V = getattr(state, f"V{blk}")
        L = getattr(state, f"log1m_V{blk}")
        mu = getattr(state, f"mu{blk}")
        M = getattr(state, f"M_{blk}")
        a = getattr(state, f"a_{blk}")
        s2 = getattr(state, f"s2_{blk}")
        V_new, L_new = sample_sticks(1.0, M, rng)
        mu_new = np.sqrt((1.0 - a) * s2) * rng.standard_normal(S)
        log_rem = np.sum(L, axis=1)
        z_old = -np.expm1(log_rem)
        w_new = V_new * np.exp(log_rem)
        move_p = w_new / (z_old + w_new)
        s = getattr(state, s_name)
        u = rng.uniform(size=s.shape)
        shape = (S,) + (1,) * (s.ndim - 1)
        out[s_name] = np.where(u < move_p.reshape(shape), V.shape[1], s)
        out[f"V{blk}"] = np.column_stack([V, V_new])
        out[f"log1m_V{blk}"] = np.column_stack([L, L_new])
        out[f"mu{blk}"] = np.column_stack([mu, mu_new])
        out[f"sc_mu{blk}"] = getattr(state, f"sc_mu{blk}").append(1)
        out[f"sc_V{blk}"] = getattr(state, f"sc_V{blk}").append(1)
    return dataclasses.replace(state, **out)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class LmmModel:
    """Semiparametric linear mixed model on a balanced panel.

    Parameters
    ----------
    panel : Panel
    priors : LmmPriors, optional
    n_init : int
        Initial number of atoms in each mixture.
    """

    def __init__(self, panel, priors=None, n_init=10):
        if not isinstance(panel, Panel):
            raise TypeError("panel must be a datasets.Panel")
        if n_init < 1:
            raise ValueError("n_init must be at least 1")
        self.priors = priors or LmmPriors()
        self.n_init = int(n_init)
        self.set_data(panel)

    def set_data(self, panel):
        self.panel = panel
        n, T, p = panel.X.shape
        self.n, self.T, self.p = n, T, p
        XtX = np.einsum("ntp,ntq->pq", panel.X, panel.X)
        self._xtx_eval, self._xtx_evec = np.linalg.eigh(XtX)

    # -- initialization ----------------------------------------------------

    def _new_state(self, S, beta, a_e, s2_e, M_e, a_g, s2_g, M_g, rng):
        N = self.n_init
        Ve, Le = sample_sticks(np.ones((S, N)), M_e[:, None], rng)
        Vg, Lg = sample_sticks(np.ones((S, N)), M_g[:, None], rng)
        mue = np.sqrt((1 - a_e) * s2_e)[:, None] * rng.standard_normal((S, N))
        mug = np.sqrt((1 - a_g) * s2_g)[:, None] * rng.standard_normal((S, N))
        le = rsb_log_weights(Ve, Le)
        lg = rsb_log_weights(Vg, Lg)
        se = categorical_sample(np.broadcast_to(le[:, None, None, :], (S, self.n, self.T, N)), rng)
        sg = categorical_sample(np.broadcast_to(lg[:, None, :], (S, self.n, N)), rng)
        full = AdaptiveScale.full
        return LmmState(
            beta=beta, Ve=Ve, log1m_Ve=Le, mue=mue, Vg=Vg, log1m_Vg=Lg, mug=mug,
            a_e=a_e, s2_e=s2_e, M_e=M_e, a_g=a_g, s2_g=s2_g, M_g=M_g,
            se=se, sg=sg,
            sc_mue=full((S, N)), sc_Ve=full((S, N)), sc_mug=full((S, N)), sc_Vg=full((S, N)),
            sc_ae=full(S), sc_s2e=full(S), sc_ag=full(S), sc_s2g=full(S),
        )  # fmt: skip

    def prior_state(self, n_particles, rng):
        """Chain starting points.

        Hyperparameters are drawn from their priors when those are proper;
        with the default improper folded-t priors the scales start at data
        based values and ``beta`` at least squares.
        """
        S = n_particles
        pr = self.priors
        X2 = self.panel.X.reshape(-1, self.p)
        y2 = self.panel.y.reshape(-1)
        ols, *_ = np.linalg.lstsq(X2, y2, rcond=None)
        res = (y2 - X2 @ ols).reshape(self.n, self.T)
        v_tot = max(float(res.var()), 1e-8)
        v_subj = max(float(res.mean(axis=1).var()), 1e-3 * v_tot)
        beta = np.tile(ols, (S, 1))
        if pr.beta_prec >= 1e-3:
            beta = rng.standard_normal((S, self.p)) / np.sqrt(pr.beta_prec)
        s2_e = pr.s2_eps.sample(S, rng) if pr.s2_eps.proper else np.full(S, max(v_tot - v_subj, 1e-3 * v_tot))
        s2_g = pr.s2_gam.sample(S, rng) if pr.s2_gam.proper else np.full(S, v_subj)
        a_e = rng.beta(*pr.a_eps, size=S)
        a_g = rng.beta(*pr.a_gam, size=S)
        M_e = rng.gamma(pr.M_eps[0], 1.0 / pr.M_eps[1], size=S)
        M_g = rng.gamma(pr.M_gam[0], 1.0 / pr.M_gam[1], size=S)
        return self._new_state(S, beta, a_e, s2_e, M_e, a_g, s2_g, M_g, rng)

    # -- pieces --------------------------------------------------------------

    def _resid(self, beta):
        return self.panel.y[None] - np.einsum("ntp,sp->snt", self.panel.X, beta)

    def loglik(self, state):
        return collapsed_loglik(self.panel, state)

    def log_target_terms(self, state):
        """Dictionary of the pieces entering every MH target (for audits)."""
        pe = np.exp(rsb_log_weights(state.Ve, state.log1m_Ve))
        pg = np.exp(rsb_log_weights(state.Vg, state.log1m_Vg))
        return {
            "resid": self._resid(state.beta),
            "mue_s": _gather(state.mue, state.se),
            "mug_s": _gather(state.mug, state.sg),
            "mubar_e": (pe * state.mue).sum(axis=1),
            "mubar_g": (pg * state.mug).sum(axis=1),
        }

    # -- MH targets -----------------------------------------------------------
    # Each returns a function of the proposed value (one per particle) giving
    # log f_k plus the prior factors that depend on that value.

    def target_mu(self, state, blk, j):
        t = self.log_target_terms(state)
        V = getattr(state, f"V{blk}")
        mu = getattr(state, f"mu{blk}")
        s = state.se if blk == "e" else state.sg
        a = getattr(state, f"a_{blk}")
        s2 = getattr(state, f"s2_{blk}")
        pj = np.exp(rsb_log_weights(V, getattr(state, f"log1m_V{blk}")))[:, j]
        Ae, Ag = state.a_e * state.s2_e, state.a_g * state.s2_g
        prior_var = (1.0 - a) * s2
        hit = s == j

        def logp(x):
            shift = pj * (x - mu[:, j])
            xs = x.reshape((-1,) + (1,) * (s.ndim - 1))
            if blk == "e":
                mue_s = np.where(hit, xs, t["mue_s"])
                lf = log_f_core(t["resid"], self.panel.Z, mue_s, t["mubar_e"] + shift, t["mug_s"], t["mubar_g"], Ae, Ag)
            else:
                mug_s = np.where(hit, xs, t["mug_s"])
                lf = log_f_core(t["resid"], self.panel.Z, t["mue_s"], t["mubar_e"], mug_s, t["mubar_g"] + shift, Ae, Ag)
            return lf - 0.5 * x**2 / prior_var

        return logp

    def target_V(self, state, blk, j):
        """Log target of ``u = logit(V_j)`` (Jacobian included)."""
        t = self.log_target_terms(state)
        V = getattr(state, f"V{blk}")
        L = getattr(state, f"log1m_V{blk}")
        mu = getattr(state, f"mu{blk}")
        s = state.se if blk == "e" else state.sg
        M = getattr(state, f"M_{blk}")
        Ae, Ag = state.a_e * state.s2_e, state.a_g * state.s2_g
        S = V.shape[0]
        s_flat = s.reshape(S, -1)

        def logp(u):
            v, l1 = stick_from_logit(u)
            Vx = V.copy()
            Lx = L.copy()
            Vx[:, j] = v
            Lx[:, j] = l1
            with np.errstate(divide="ignore", invalid="ignore"):
                lw = rsb_log_weights(Vx, Lx)
            mubar = (np.exp(lw) * mu).sum(axis=1)
            alloc = np.take_along_axis(lw, s_flat, 1).sum(axis=1)
            if blk == "e":
                lf = log_f_core(t["resid"], self.panel.Z, t["mue_s"], mubar, t["mug_s"], t["mubar_g"], Ae, Ag)
            else:
                lf = log_f_core(t["resid"], self.panel.Z, t["mue_s"], t["mubar_e"], t["mug_s"], mubar, Ae, Ag)
            return lf + alloc + (M - 1.0) * l1 + np.log(v) + l1

        return logp

    def _scale_prior(self, blk):
        pr = self.priors
        return (pr.a_eps, pr.s2_eps) if blk == "e" else (pr.a_gam, pr.s2_gam)

    def target_a(self, state, blk):
        t = self.log_target_terms(state)
        mu = getattr(state, f"mu{blk}")
        s2 = getattr(state, f"s2_{blk}")
        N = mu.shape[1]
        ss = (mu**2).sum(axis=1)
        (ba, bb), _ = self._scale_prior(blk)

        def logp(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                A = x * s2
                Ae = A if blk == "e" else state.a_e * state.s2_e
                Ag = A if blk == "g" else state.a_g * state.s2_g
                lf = log_f_core(t["resid"], self.panel.Z, t["mue_s"], t["mubar_e"], t["mug_s"], t["mubar_g"], Ae, Ag)
                pv = (1.0 - x) * s2
                return lf - 0.5 * N * np.log(pv) - 0.5 * ss / pv + (ba - 1) * np.log(x) + (bb - 1) * np.log1p(-x)

        return logp

    def target_s2(self, state, blk):
        t = self.log_target_terms(state)
        mu = getattr(state, f"mu{blk}")
        a = getattr(state, f"a_{blk}")
        N = mu.shape[1]
        ss = (mu**2).sum(axis=1)
        _, ft = self._scale_prior(blk)

        def logp(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                A = a * x
                Ae = A if blk == "e" else state.a_e * state.s2_e
                Ag = A if blk == "g" else state.a_g * state.s2_g
                lf = log_f_core(t["resid"], self.panel.Z, t["mue_s"], t["mubar_e"], t["mug_s"], t["mubar_g"], Ae, Ag)
                pv = (1.0 - a) * x
                return lf - 0.5 * N * np.log(pv) - 0.5 * ss / pv + ft.logpdf(x)

        return logp

    # -- Gibbs pieces ---------------------------------------------------------

    def update_M(self, log1m_V, blk, rng):
        """``M ~ Ga(shape + N, rate - sum log(1 - V_j))`` given ``log(1 - V)``."""
        shape, rate = self.priors.M_eps if blk == "e" else self.priors.M_gam
        return rng.gamma(shape + log1m_V.shape[1], 1.0 / (rate - np.sum(log1m_V, axis=1)))

    def alloc_logits_eps(self, state, t_idx):
        """Log full conditional of ``s_eps[:, :, t_idx]`` over atoms, shape ``(S, n, N)``."""
        tt = self.log_target_terms(state)
        Ae = state.a_e * state.s2_e
        Ag = state.a_g * state.s2_g
        lw = rsb_log_weights(state.Ve, state.log1m_Ve)
        Z = self.panel.Z
        de = tt["resid"] - tt["mue_s"] + tt["mubar_e"][:, None, None]
        dg = tt["mug_s"] - tt["mubar_g"][:, None]
        dd = (Z**2).sum(axis=-1)[None, :] / Ae[:, None] + 1.0 / Ag[:, None]
        e_t = tt["resid"][:, :, t_idx, None] - state.mue[:, None, :] + tt["mubar_e"][:, None, None]  # (S, n, N)
        c_rest = (Z * de).sum(axis=-1) - Z[None, :, t_idx] * de[:, :, t_idx]
        c = (c_rest[..., None] + Z[None, :, t_idx, None] * e_t) / Ae[:, None, None] + (dg / Ag[:, None])[..., None]
        return lw[:, None, :] - 0.5 * (e_t**2 / Ae[:, None, None] - c**2 / dd[..., None])

    def alloc_logits_gam(self, state):
        """Log full conditional of ``s_gam``, shape ``(S, n, N)``."""
        tt = self.log_target_terms(state)
        Ae = state.a_e * state.s2_e
        Ag = state.a_g * state.s2_g
        lw = rsb_log_weights(state.Vg, state.log1m_Vg)
        Z = self.panel.Z
        de = tt["resid"] - tt["mue_s"] + tt["mubar_e"][:, None, None]
        dd = (Z**2).sum(axis=-1)[None, :] / Ae[:, None] + 1.0 / Ag[:, None]
        e_g = state.mug[:, None, :] - tt["mubar_g"][:, None, None]
        c = ((Z * de).sum(axis=-1) / Ae[:, None])[..., None] + e_g / Ag[:, None, None]
        return lw[:, None, :] - 0.5 * (e_g**2 / Ag[:, None, None] - c**2 / dd[..., None])

    def beta_conditional(self, state, gamma):
        """Mean and (eigen-)factors of ``beta | gamma, rest`` for each particle."""
        tt = self.log_target_terms(state)
        Ae = state.a_e * state.s2_e
        w = tt["resid"] + np.einsum("ntp,sp->snt", self.panel.X, state.beta)  # y
        w = w - self.panel.Z[None] * gamma[:, :, None] - tt["mue_s"] + tt["mubar_e"][:, None, None]
        b = np.einsum("ntp,snt->sp", self.panel.X, w) / Ae[:, None]
        prec_eig = self._xtx_eval[None, :] / Ae[:, None] + self.priors.beta_prec
        Q = self._xtx_evec
        mean = ((b @ Q) / prec_eig) @ Q.T
        return mean, prec_eig

    def update_beta(self, state, rng):
        tt = self.log_target_terms(state)
        Ae = state.a_e * state.s2_e
        Ag = state.a_g * state.s2_g
        Z = self.panel.Z
        de = tt["resid"] - tt["mue_s"] + tt["mubar_e"][:, None, None]
        dg = tt["mug_s"] - tt["mubar_g"][:, None]
        c = (Z * de).sum(axis=-1) / Ae[:, None] + dg / Ag[:, None]
        dd = (Z**2).sum(axis=-1)[None, :] / Ae[:, None] + 1.0 / Ag[:, None]
        gamma = c / dd + rng.standard_normal(c.shape) / np.sqrt(dd)
        mean, prec_eig = self.beta_conditional(state, gamma)
        z = rng.standard_normal(mean.shape) / np.sqrt(prec_eig)
        return mean + z @ self._xtx_evec.T

    # -- sweep ------------------------------------------------------------------

    def sweep(self, state, rng):
        st = state
        for blk in ("e", "g"):
            N = st.n_atoms
            mu = getattr(st, f"mu{blk}").copy()
            sc = getattr(st, f"sc_mu{blk}")
            for j in range(N):
                st = dataclasses.replace(st, **{f"mu{blk}": mu})
                mu[:, j], _, _ = mh_step(mu[:, j], self.target_mu(st, blk, j), sc, rng, index=(slice(None), j))
            st = dataclasses.replace(st, **{f"mu{blk}": mu})
            V = getattr(st, f"V{blk}").copy()
            L = getattr(st, f"log1m_V{blk}").copy()
            sc = getattr(st, f"sc_V{blk}")
            for j in range(N):
                st = dataclasses.replace(st, **{f"V{blk}": V, f"log1m_V{blk}": L})
                u, _, _ = mh_step(stick_logit(V[:, j], L[:, j]), self.target_V(st, blk, j), sc, rng, index=(slice(None), j))
                V[:, j], L[:, j] = stick_from_logit(u)
            st = dataclasses.replace(st, **{f"V{blk}": V, f"log1m_V{blk}": L, f"M_{blk}": self.update_M(L, blk, rng)})
            a, _, _ = mh_step(getattr(st, f"a_{blk}"), self.target_a(st, blk), getattr(st, f"sc_a{blk}"), rng, transform="logit")
            st = dataclasses.replace(st, **{f"a_{blk}": a})
            s2, _, _ = mh_step(getattr(st, f"s2_{blk}"), self.target_s2(st, blk), getattr(st, f"sc_s2{blk}"), rng, transform="log")
            st = dataclasses.replace(st, **{f"s2_{blk}": s2})
        se = st.se.copy()
        for t_idx in range(self.T):
            st = dataclasses.replace(st, se=se)
            se[:, :, t_idx] = categorical_sample(self.alloc_logits_eps(st, t_idx), rng)
        st = dataclasses.replace(st, se=se)
        st = dataclasses.replace(st, sg=categorical_sample(self.alloc_logits_gam(st), rng))
        return dataclasses.replace(st, beta=self.update_beta(st, rng))

    def refresh(self, state):
        return state

    # -- SMC protocol ------------------------------------------------------------

    def initial_state(self, n_particles, rng, burn_in=5000, thin=5, n_chains=1):
        return sample_initial(self, n_particles, rng, burn_in, thin, n_chains)

    def extend(self, state, rng):
        return smc_transition_lmm(state, rng)

    def rejuvenate(self, state, n_sweeps, rng):
        for _ in range(n_sweeps):
            state = self.sweep(state, rng)
        return state

    def take(self, state, indices):
        return state.take(indices)

    def truncation_size(self, state):
        return state.n_atoms

    # -- data simulation and summaries ----------------------------------------

    def simulate(self, state, rng):
        """New responses for each particle given its parameters and allocations; ``(S, n, T)``."""
        t = self.log_target_terms(state)
        Ae = state.a_e * state.s2_e
        Ag = state.a_g * state.s2_g
        gam = t["mug_s"] - t["mubar_g"][:, None] + np.sqrt(Ag)[:, None] * rng.standard_normal(t["mug_s"].shape)
        eps = t["mue_s"] - t["mubar_e"][:, None, None] + np.sqrt(Ae)[:, None, None] * rng.standard_normal(t["mue_s"].shape)
        return self.panel.y[None] - t["resid"] + self.panel.Z[None] * gam[:, :, None] + eps

    @staticmethod
    def block_density(V, mu, a, s2, grid, log1m_V=None):
        """Mean-constrained mixture density per particle; shape ``(S, G)``."""
        p = np.exp(rsb_log_weights(V, log1m_V))
        mubar = (p * mu).sum(axis=1, keepdims=True)
        sd = np.sqrt(a * s2)[:, None, None]
        z = (np.asarray(grid)[None, :, None] - (mu - mubar)[:, None, :]) / sd
        return np.einsum("sgj,sj->sg", np.exp(-0.5 * z**2) / (sd * np.sqrt(2 * np.pi)), p)

    def summaries(self, state, weights, grid_eps, grid_gam, quantiles=(0.025, 0.5, 0.975)):
        """Posterior-mean densities of both mixtures and weighted beta summaries."""
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        f_eps = w @ self.block_density(state.Ve, state.mue, state.a_e, state.s2_e, grid_eps, state.log1m_Ve)
        f_gam = w @ self.block_density(state.Vg, state.mug, state.a_g, state.s2_g, grid_gam, state.log1m_Vg)
        beta_mean = w @ state.beta
        order = np.argsort(state.beta, axis=0)
        q = np.empty((len(quantiles), self.p))
        for k in range(self.p):
            cw = np.cumsum(w[order[:, k]])
            q[:, k] = state.beta[order[np.searchsorted(cw, quantiles), k].clip(max=len(w) - 1), k]
        return {"f_eps": f_eps, "f_gam": f_gam, "beta_mean": beta_mean, "beta_quantiles": q}


def make_synthetic_panel(rng, n=20, T=5, groups=3, beta=None):
    """Growth-curve style panel with skewed errors and random intercepts.

    Subjects are split evenly over ``groups`` levels; columns of ``X`` are the
    group dummies and age ``6 .. 6 + T - 1``.
    """
    if beta is None:
        beta = [110.0 + 3.0 * k for k in range(groups)] + [5.5]
    beta = np.asarray(beta, dtype=float)
    if beta.size != groups + 1:
        raise ValueError("beta needs one entry per group plus the age slope")
    g = np.arange(n) % groups
    age = 6.0 + np.arange(T)
    X = np.zeros((n, T, groups + 1))
    X[np.arange(n), :, g] = 1.0
    X[:, :, -1] = age
    gam = rng.gamma(2.0, 1.5, size=n)
    gam -= 3.0
    eps = -(rng.gamma(2.0, 0.3, size=(n, T)) - 0.6)
    y = X @ beta + gam[:, None] + eps
    return Panel(y, X, np.ones((n, T)), np.arange(n).astype(str))
