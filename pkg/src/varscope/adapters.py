"""Built-in Monte Carlo adapters for the conjugate families.

Each adapter samples exact posterior conditionals, vectorized over draws.
Supported conditionals are listed per class; asking for any other
combination raises ``NotImplementedError``.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .conjugate import (
    BetaBinomialParams,
    BPGParams,
    NNGParams,
    NormalKnownVarParams,
    PoissonConjugateParams,
    ThreeLevelNormalParams,
)

__all__ = [
    "ConstantAdapter",
    "NormalKnownVarAdapter",
    "BetaBinomialAdapter",
    "PoissonGammaAdapter",
    "NNGAdapter",
    "BPGAdapter",
    "ThreeLevelNormalAdapter",
    "ADAPTERS",
    "adapter_for",
]


class _Base:
    variables: tuple[str, ...] = ()
    thread_safe = True
    family = ""

    def __init__(self, params):
        self.params = params

    @property
    def model_key(self) -> str:
        return f"{self.family}:{self.params!r}"

    def _unsupported(self, names, given):
        raise NotImplementedError(
            f"{type(self).__name__} cannot sample {tuple(names)} given {tuple(sorted(given))}"
        )


class ConstantAdapter(_Base):
    """Predictive moments that ignore every variable.

    Variables are drawn as independent standard normals; they have no effect
    on the moments, so every term but the leading one is zero.
    """

    family = "constant"

    def __init__(self, mean=0.0, var=1.0, variables=("V1", "V2")):
        super().__init__((mean, var))
        self.mean, self.var = float(mean), float(var)
        self.variables = tuple(variables)

    def sample(self, names, given, size, rng):
        return {nm: rng.standard_normal(size) for nm in names}

    def predictive_mean(self, values):
        return np.full(len(next(iter(values.values()))), self.mean)

    def predictive_var(self, values):
        return np.full(len(next(iter(values.values()))), self.var)


class NormalKnownVarAdapter(_Base):
    """Variable ``mu``; posterior N(mu_n, tau_n^2)."""

    variables = ("mu",)
    family = "normal-known-var"

    def sample(self, names, given, size, rng):
        p: NormalKnownVarParams = self.params
        if tuple(names) != ("mu",):
            self._unsupported(names, given)
        return {"mu": p.mu_n + np.sqrt(p.tau_n_sq) * rng.standard_normal(size)}

    def predictive_mean(self, values):
        return values["mu"]

    def predictive_var(self, values):
        return np.full(values["mu"].shape, self.params.sigma0_sq)


class BetaBinomialAdapter(_Base):
    """Variable ``p``; future count of ``m_next`` trials."""

    variables = ("p",)
    family = "beta-binomial"

    def sample(self, names, given, size, rng):
        if tuple(names) != ("p",):
            self._unsupported(names, given)
        q: BetaBinomialParams = self.params
        return {"p": rng.beta(q.alpha_n, q.beta_n, size)}

    def predictive_mean(self, values):
        return self.params.m_next * values["p"]

    def predictive_var(self, values):
        p = values["p"]
        return self.params.m_next * p * (1 - p)


class PoissonGammaAdapter(_Base):
    variables = ("lambda",)
    family = "poisson-gamma"

    def sample(self, names, given, size, rng):
        if tuple(names) != ("lambda",):
            self._unsupported(names, given)
        q: PoissonConjugateParams = self.params
        return {"lambda": rng.gamma(q.shape_n, 1.0 / q.rate_n, size)}

    def predictive_mean(self, values):
        return values["lambda"]

    def predictive_var(self, values):
        return values["lambda"]


class NNGAdapter(_Base):
    """Variables ``mu`` and ``lambda2`` (the precision).

    Conditionals: ``mu`` alone (Student t), ``lambda2`` alone (gamma),
    ``mu | lambda2`` (normal), ``lambda2 | mu`` (gamma) and the joint block.
    """

    variables = ("mu", "lambda2")
    family = "nng"

    def sample(self, names, given, size, rng):
        q: NNGParams = self.params
        kn, an, bn, mn = q.kappa_n, q.alpha_n, q.beta_n, q.mu_n
        names = tuple(names)
        if set(names) == {"mu", "lambda2"}:
            lam = rng.gamma(an, 1.0 / bn, size)
            return {"lambda2": lam, "mu": mn + rng.standard_normal(size) / np.sqrt(kn * lam)}
        if names == ("mu",):
            if "lambda2" in given:
                lam = given["lambda2"]
                return {"mu": mn + rng.standard_normal(size) / np.sqrt(kn * lam)}
            scale = np.sqrt(bn / (an * kn))
            return {"mu": mn + scale * rng.standard_t(2 * an, size)}
        if names == ("lambda2",):
            if "mu" in given:
                mu = given["mu"]
                rate = bn + 0.5 * kn * (mu - mn) ** 2
                return {"lambda2": rng.gamma(an + 0.5, 1.0, size) / rate}
            return {"lambda2": rng.gamma(an, 1.0 / bn, size)}
        self._unsupported(names, given)

    def predictive_mean(self, values):
        return values["mu"]

    def predictive_var(self, values):
        return 1.0 / values["lambda2"]


class BPGAdapter(_Base):
    """Variables ``lambda`` (Poisson rate) and ``N`` (future count).

    Conditionals: ``lambda`` (gamma), ``N | lambda`` (Poisson), ``N`` alone
    (negative binomial), ``lambda | N`` (gamma) and the joint block.
    """

    variables = ("lambda", "N")
    family = "bpg"

    def sample(self, names, given, size, rng):
        q: BPGParams = self.params
        shape, rate = q.shape_n, q.rate_n
        names = tuple(names)
        if set(names) == {"lambda", "N"}:
            lam = rng.gamma(shape, 1.0 / rate, size)
            return {"lambda": lam, "N": rng.poisson(lam).astype(float)}
        if names == ("N",):
            if "lambda" in given:
                return {"N": rng.poisson(given["lambda"]).astype(float)}
            return {"N": rng.negative_binomial(shape, rate / (rate + 1.0), size).astype(float)}
        if names == ("lambda",):
            if "N" in given:
                return {"lambda": rng.gamma(shape + given["N"], 1.0 / (rate + 1.0))}
            return {"lambda": rng.gamma(shape, 1.0 / rate, size)}
        self._unsupported(names, given)

    def predictive_mean(self, values):
        return self.params.p * values["N"]

    def predictive_var(self, values):
        p = self.params.p
        return values["N"] * p * (1 - p)


class ThreeLevelNormalAdapter(_Base):
    """Variables ``nu`` (top-level mean) and ``mu`` (group mean)."""

    variables = ("nu", "mu")
    family = "normal-3level"

    def sample(self, names, given, size, rng):
        q: ThreeLevelNormalParams = self.params
        s2, t2, b2, n, a, ybar = q.sigma0_sq, q.tau0_sq, q.b_sq, q.n, q.a, q.ybar
        names = tuple(names)
        z = rng.standard_normal(size)
        if set(names) == {"nu", "mu"}:
            nu = self._nu(z, q)
            z2 = rng.standard_normal(size)
            return {"nu": nu, "mu": self._mu_given_nu(z2, nu, q)}
        if names == ("nu",):
            if "mu" in given:
                if b2 == 0:
                    return {"nu": np.full(size, a)}
                prec = 1.0 / b2 + 1.0 / t2
                mean = (a / b2 + given["mu"] / t2) / prec
                return {"nu": mean + z / np.sqrt(prec)}
            return {"nu": self._nu(z, q)}
        if names == ("mu",):
            if "nu" in given:
                return {"mu": self._mu_given_nu(z, given["nu"], q)}
            eta = q.eta_n
            mean = eta * (n * ybar / s2 + a / (t2 + b2))
            return {"mu": mean + np.sqrt(eta) * z}
        self._unsupported(names, given)

    @staticmethod
    def _nu(z, q):
        if q.b_sq == 0:
            return np.full(z.shape, q.a)
        v = q.tau0_sq + q.sigma0_sq / q.n
        prec = 1.0 / q.b_sq + 1.0 / v
        mean = (q.a / q.b_sq + q.ybar / v) / prec
        return mean + z / np.sqrt(prec)

    @staticmethod
    def _mu_given_nu(z, nu, q):
        prec = q.n / q.sigma0_sq + 1.0 / q.tau0_sq
        mean = (q.n * q.ybar / q.sigma0_sq + nu / q.tau0_sq) / prec
        return mean + z / np.sqrt(prec)

    def predictive_mean(self, values):
        return values["mu"]

    def predictive_var(self, values):
        return np.full(values["mu"].shape, self.params.sigma0_sq)


ADAPTERS = {
    "normal-known-var": (NormalKnownVarParams, NormalKnownVarAdapter),
    "beta-binomial": (BetaBinomialParams, BetaBinomialAdapter),
    "poisson-gamma": (PoissonConjugateParams, PoissonGammaAdapter),
    "nng": (NNGParams, NNGAdapter),
    "bpg": (BPGParams, BPGAdapter),
    "normal-3level": (ThreeLevelNormalParams, ThreeLevelNormalAdapter),
}


def adapter_for(family: str, params: Mapping | object):
    """Build the adapter for ``family`` from a params record or a plain mapping.

    For ``nng`` a mapping may carry raw observations under ``y``.
    """
    if family not in ADAPTERS:
        raise ValueError(f"no built-in adapter for {family!r}; choose from {sorted(ADAPTERS)}")
    ptype, atype = ADAPTERS[family]
    if isinstance(params, Mapping):
        params = dict(params)
        if family == "nng" and "y" in params:
            y = params.pop("y")
            params = NNGParams.from_data(y, **params)
        else:
            params = ptype(**params)
    return atype(params)
