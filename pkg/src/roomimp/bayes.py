"""Priors, noise model, likelihood and Monte-Carlo ratio estimators.

The impedance prior is lognormal in the real part and normal in the
imaginary part, parameterized by the mean and standard deviation of the
variable itself; the log-space parameters follow by moment matching

    mu = log(m^2 / sqrt(v + m^2)),     gamma^2 = log(1 + v / m^2).

Measurement noise is complex normal with independent real/imaginary
components; the potential is the standardized squared misfit

    Psi = sum_j (Re r_j)^2 / (2 s_{2j-1}^2) + (Im r_j)^2 / (2 s_{2j}^2),

so the likelihood theta = exp(-Psi) lies in [0, 1].  Posterior moments are
quotients of prior Monte-Carlo averages; all weight arithmetic happens in
log space with max-subtraction, which makes the estimators exactly invariant
under rescaling all weights.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateWeightsError,
    InvalidArgumentError,
    InvalidMomentsError,
    InvalidSpecError,
)
from .fem import ImpedanceSample


def lognormal_params_from_moments(mean, std):
    """Log-space (mu, gamma) of the lognormal with given variable-space moments."""
    if not (mean > 0 and std > 0):
        raise InvalidSpecError(f"lognormal moments need mean, std > 0, got ({mean}, {std})")
    v = std * std
    mu = math.log(mean * mean / math.sqrt(v + mean * mean))
    gamma = math.sqrt(math.log(1.0 + v / (mean * mean)))
    return mu, gamma


@dataclass(frozen=True)
class PatchPrior:
    """Variable-space moments of one patch: lognormal Re, normal Im."""

    mean_re: float
    std_re: float
    mean_im: float
    std_im: float

    def __post_init__(self):
        if not (self.mean_re > 0 and self.std_re > 0 and self.std_im > 0):
            raise InvalidSpecError(
                f"need mean_re, std_re, std_im > 0, got {self}"
            )

    def log_params(self):
        return lognormal_params_from_moments(self.mean_re, self.std_re)


@dataclass(frozen=True)
class PriorSpec:
    patches: tuple  # PatchPrior per Robin patch, in layout order

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        if not self.patches:
            raise InvalidSpecError("prior needs at least one patch")

    def __len__(self):
        return len(self.patches)

    def mean_impedances(self):
        return np.asarray([complex(p.mean_re, p.mean_im) for p in self.patches])


def sample_prior(spec, rng):
    """Draw one impedance sample; per patch Re then Im, in layout order."""
    z = []
    for p in spec.patches:
        mu, gamma = p.log_params()
        zr = math.exp(rng.normal(mu, gamma))
        zi = rng.normal(p.mean_im, p.std_im)
        z.append(complex(zr, zi))
    return ImpedanceSample(tuple(z))


def sample_prior_block(spec, seed, tag, replicate, n):
    """n independent samples from streams (seed, tag, replicate, i), as (n, npatch)."""
    from . import rng as rngmod

    out = np.empty((n, len(spec.patches)), dtype=np.complex128)
    for i in range(n):
        out[i] = sample_prior(spec, rngmod.stream(seed, tag, replicate, i)).array()
    return out


def log_prior_density(spec, Z):
    """Joint log-density of the prior at Z; -inf when any Re(z_i) <= 0."""
    z = Z.array() if isinstance(Z, ImpedanceSample) else np.asarray(Z, dtype=complex)
    if len(z) != len(spec.patches):
        raise InvalidArgumentError(f"{len(z)} components for {len(spec.patches)} patches")
    total = 0.0
    for p, zi in zip(spec.patches, z):
        zr, zim = zi.real, zi.imag
        if zr <= 0:
            return -math.inf
        mu, gamma = p.log_params()
        total += -math.log(zr * gamma * math.sqrt(2 * math.pi)) \
                 - (math.log(zr) - mu) ** 2 / (2 * gamma * gamma)
        total += -math.log(p.std_im * math.sqrt(2 * math.pi)) \
                 - (zim - p.mean_im) ** 2 / (2 * p.std_im ** 2)
    return total


@dataclass(frozen=True)
class NoiseSpec:
    """Per-real-component noise standard deviations.

    Either the homogeneous shorthand ``sigma0`` or an explicit vector of
    2m entries ordered (Re_1, Im_1, Re_2, Im_2, ...).
    """

    sigma0: float = None
    sigma: tuple = None

    def __post_init__(self):
        if (self.sigma0 is None) == (self.sigma is None):
            raise InvalidSpecError("give exactly one of sigma0 or sigma")
        if self.sigma0 is not None and not (self.sigma0 > 0):
            raise InvalidSpecError(f"sigma0 must be > 0, got {self.sigma0}")
        if self.sigma is not None:
            s = tuple(float(v) for v in self.sigma)
            if len(s) == 0 or len(s) % 2 or any(v <= 0 for v in s):
                raise InvalidSpecError("sigma must be 2m positive values")
            object.__setattr__(self, "sigma", s)

    def stds(self, m):
        if self.sigma0 is not None:
            return np.full(2 * m, float(self.sigma0))
        if len(self.sigma) != 2 * m:
            raise InvalidSpecError(f"noise has {len(self.sigma)} components, need {2 * m}")
        return np.asarray(self.sigma)


def sample_noise(noise, m, rng):
    """One complex noise vector; draws interleaved (Re_j, Im_j) per microphone."""
    s = noise.stds(m)
    eta = np.empty(m, dtype=np.complex128)
    for j in range(m):
        eta[j] = complex(rng.normal(0.0, s[2 * j]), rng.normal(0.0, s[2 * j + 1]))
    return eta


@dataclass
class MeasurementSet:
    """Frequency, geometry, complex pressure readings and noise description."""

    frequency_hz: float
    source: tuple
    microphones: np.ndarray   # (m, dim)
    y: np.ndarray             # (m,) complex
    noise: NoiseSpec
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.microphones = np.asarray(self.microphones, dtype=float)
        self.y = np.asarray(self.y, dtype=np.complex128)
        if self.y.shape[0] != self.microphones.shape[0]:
            raise InvalidSpecError("one reading per microphone required")

    @property
    def m(self):
        return self.y.shape[0]

    def to_json(self):
        doc = {
            "frequency_hz": self.frequency_hz,
            "source": list(self.source),
            "microphones": self.microphones.tolist(),
            "readings": [[v.real, v.imag] for v in self.y],
            "noise": {"sigma0": self.noise.sigma0} if self.noise.sigma0 is not None
                     else {"sigma": list(self.noise.sigma)},
            "provenance": self.provenance,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        try:
            noise = NoiseSpec(**doc["noise"])
            y = np.asarray([complex(re, im) for re, im in doc["readings"]])
            return cls(
                frequency_hz=float(doc["frequency_hz"]),
                source=tuple(doc["source"]),
                microphones=np.asarray(doc["microphones"], dtype=float),
                y=y,
                noise=noise,
                provenance=doc.get("provenance", {}),
            )
        except (KeyError, TypeError) as err:
            raise InvalidSpecError(f"malformed measurement file: {err}") from err


def potential(measurement, g):
    """Misfit potential Psi(Z, y) for model observations g; nonnegative."""
    g = np.asarray(g, dtype=np.complex128)
    if g.shape != measurement.y.shape:
        raise InvalidArgumentError(f"{g.shape} observations for {measurement.y.shape} readings")
    return float(potentials(measurement, g[None, :])[0])


def potentials(measurement, G):
    """Vectorized potential for G of shape (N, m).

    Residuals are standardized before squaring so extreme sigma values stay
    well conditioned (a huge misfit gives Psi = inf, hence theta = 0).
    """
    s = measurement.noise.stds(measurement.m)
    r = measurement.y[None, :] - np.asarray(G, dtype=np.complex128)
    t_re = r.real / s[0::2]
    t_im = r.imag / s[1::2]
    with np.errstate(over="ignore"):
        return ((t_re * t_re + t_im * t_im) / 2.0).sum(axis=1)


@dataclass
class WeightedSampleSet:
    """Prior samples with their log-likelihoods log theta_h(Z^i, y)."""

    z: np.ndarray        # (N, npatch) complex
    loglik: np.ndarray   # (N,)
    seed_path: tuple = ()

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.complex128)
        self.loglik = np.asarray(self.loglik, dtype=float)
        if self.z.ndim != 2 or self.z.shape[0] < 1:
            raise InvalidArgumentError("need at least one sample")
        if self.loglik.shape != (self.z.shape[0],):
            raise InvalidArgumentError("one log-likelihood per sample required")

    @property
    def n(self):
        return self.z.shape[0]

    def sample(self, i):
        return ImpedanceSample(tuple(self.z[i]))

    def max_loglik(self):
        return float(self.loglik.max())

    def normalized_weights(self):
        """Weights exp(loglik - max loglik); raises when all underflow."""
        lmax = self.max_loglik()
        if math.exp(min(lmax, 0.0)) == 0.0:
            raise DegenerateWeightsError(
                f"all likelihood weights underflow (max log-likelihood {lmax:.6g})",
                max_loglik=lmax,
            )
        return np.exp(self.loglik - lmax)

    def normalization(self):
        """Lambda_hat = mean theta_i, in absolute (unshifted) scale."""
        self.normalized_weights()  # degenerate check
        return float(np.exp(np.minimum(self.loglik, 0.0)).mean())

    def effective_sample_size(self):
        return float(self.normalized_weights().sum())


def _phi_values(ws, phi):
    if callable(phi):
        return np.asarray([phi(ws.sample(i)) for i in range(ws.n)], dtype=float)
    vals = np.asarray(phi, dtype=float)
    if vals.shape != (ws.n,):
        raise InvalidArgumentError("phi array must have one value per sample")
    return vals


def ratio_estimate(ws, phi):
    """Posterior expectation of phi: (sum phi_i theta_i) / (sum theta_i).

    phi may be a callable on ImpedanceSample or a precomputed value array.
    """
    w = ws.normalized_weights()
    vals = _phi_values(ws, phi)
    return float((vals * w).sum() / w.sum())


def central_second_moment(ws, phi, first_moment=None):
    """Ratio-estimated second central moment, two-pass form."""
    vals = _phi_values(ws, phi)
    m1 = ratio_estimate(ws, vals) if first_moment is None else first_moment
    return ratio_estimate(ws, (vals - m1) ** 2)


def posterior_moments(ws):
    """First and second central moments per patch and component.

    Returns a list over patches of dicts with keys m1_re, m2_re, m1_im, m2_im.
    """
    out = []
    for i in range(ws.z.shape[1]):
        re = ws.z[:, i].real.copy()
        im = ws.z[:, i].imag.copy()
        m1_re = ratio_estimate(ws, re)
        m1_im = ratio_estimate(ws, im)
        out.append({
            "m1_re": m1_re,
            "m2_re": central_second_moment(ws, re, m1_re),
            "m1_im": m1_im,
            "m2_im": central_second_moment(ws, im, m1_im),
        })
    return out


def fit_posterior(m1_re, m2_re, m1_im, m2_im):
    """Lognormal-normal density parameters reproducing the given moments.

    Returns (mu_re, gamma_re, mu_im, gamma_im).  The real-part fit uses the
    standard moment matching with M2 / M1^2 inside the log.
    """
    if not (m1_re > 0):
        raise InvalidMomentsError(f"first moment of the real part must be > 0, got {m1_re}")
    if m2_re < 0 or m2_im < 0:
        raise InvalidMomentsError("second central moments must be nonnegative")
    mu_re = math.log(m1_re * m1_re / math.sqrt(m2_re + m1_re * m1_re))
    gamma_re = math.sqrt(math.log(1.0 + m2_re / (m1_re * m1_re)))
    return mu_re, gamma_re, float(m1_im), math.sqrt(m2_im)


def likelihood_maximizer(ws):
    """Sample with the largest log-likelihood (ties: lowest index)."""
    i = int(np.argmax(ws.loglik))
    return ws.sample(i), float(ws.loglik[i])


@dataclass
class PatchPosterior:
    """Estimated moments and fitted density parameters for one patch."""

    tag: str
    m1_re: float
    m2_re: float
    m1_im: float
    m2_im: float
    mu_re: float
    gamma_re: float
    mu_im: float
    gamma_im: float
    ml_re: float
    ml_im: float


@dataclass
class PosteriorReport:
    """Result of one identification run."""

    patches: list                 # PatchPosterior per Robin patch
    normalization: float          # Lambda_hat in (0, 1]
    max_loglik: float
    ml_loglik: float              # log-likelihood of the maximizer (== max_loglik)
    effective_sample_size: float
    metadata: dict                # h, N, seed, f_hz, ...

    def patch(self, tag):
        for p in self.patches:
            if p.tag == tag:
                return p
        raise KeyError(tag)


def build_report(ws, tags, metadata):
    """Assemble the posterior report from a weighted sample set."""
    moments = posterior_moments(ws)
    zml, lml = likelihood_maximizer(ws)
    patches = []
    for i, tag in enumerate(tags):
        mom = moments[i]
        mu_re, gamma_re, mu_im, gamma_im = fit_posterior(
            mom["m1_re"], mom["m2_re"], mom["m1_im"], mom["m2_im"]
        )
        patches.append(PatchPosterior(
            tag=tag,
            m1_re=mom["m1_re"], m2_re=mom["m2_re"],
            m1_im=mom["m1_im"], m2_im=mom["m2_im"],
            mu_re=mu_re, gamma_re=gamma_re, mu_im=mu_im, gamma_im=gamma_im,
            ml_re=zml.z[i].real, ml_im=zml.z[i].imag,
        ))
    return PosteriorReport(
        patches=patches,
        normalization=ws.normalization(),
        max_loglik=ws.max_loglik(),
        ml_loglik=lml,
        effective_sample_size=ws.effective_sample_size(),
        metadata=dict(metadata),
    )
