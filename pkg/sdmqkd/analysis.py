"""
Information-theoretic post-processing of decoy-state sessions.

Covers the entropy helpers, the vacuum + weak decoy bounds on the
single-photon yield and error rate, the asymptotic secret-key rate under
collective attacks, and MUB tomography with the classical fidelity.
"""

from typing import Optional, Sequence, Tuple, Union
from dataclasses import dataclass

import logging
import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import entr

from .errors import (
  DegenerateScheduleError, InsufficientStatisticsError, NormalizationError, ParameterError,
)
from .qstate import BasisId, measurement_probabilities, prepare_state
from .channel import (
  ChannelParams, VACUUM_ERROR_RATE, analytic_gain, analytic_qber,
  resolve_bits, total_transmittance, transmit_block,
)
from .protocol import DecoyStatistics, IntensityClass, IntensitySchedule, ObservedRates

__all__ = [
  'ATTACK_QBER_LIMIT', 'DEFAULT_F_EC',
  'binary_entropy', 'mutual_information',
  'DecoyBounds', 'decoy_bounds', 'KeyRateReport', 'secret_key_rate', 'sift_factor',
  'analytic_statistics', 'optimize_signal_intensity',
  'classical_fidelity', 'TomographyConfig', 'TomographyMatrix', 'TOMOGRAPHY_STATES',
  'IDEAL_TOMOGRAPHY', 'tomography', 'tomography_fidelity', 'expected_tomography',
  'expected_fidelity', 'misalignment_for_fidelity',
]

logger = logging.getLogger(__name__)

# One-way reconciliation limit under collective attacks
ATTACK_QBER_LIMIT = 0.11
DEFAULT_F_EC = 1.22
_PROB_TOLERANCE = 1e-9
_LN2 = math.log(2.0)

Rates = Union[DecoyStatistics, ObservedRates]


############################################################################
# Entropies

def binary_entropy(p: float) -> float:
  if not 0.0 <= p <= 1.0:
    raise ParameterError(f"probability {p!r} outside [0, 1]", key='p')
  return float((entr(p) + entr(1.0 - p)) / _LN2)


def _entropy_bits(probs: np.ndarray) -> float:
  return float(np.sum(entr(probs)) / _LN2)


def mutual_information(joint: Sequence[Sequence[float]]) -> float:
  """I(X;Y) = H(X) - H(X|Y) in bits for a joint probability table p[x][y]."""
  joint = np.asarray(joint, dtype=float)
  if np.any(joint < 0) or abs(joint.sum() - 1.0) > _PROB_TOLERANCE:
    raise NormalizationError("joint table must be nonnegative and sum to 1", key='joint')
  h_x = _entropy_bits(joint.sum(axis=1))
  h_y = _entropy_bits(joint.sum(axis=0))
  h_x_given_y = _entropy_bits(joint.ravel()) - h_y
  return max(0.0, h_x - h_x_given_y)


############################################################################
# Decoy bounds and key rate

@dataclass(frozen=True)
class DecoyBounds:
  y1_lower: float
  e1_upper: float
  q1_lower: float
  y1_clamped: bool = False
  e1_clamped: bool = False


def decoy_bounds(
  stats: Rates, schedule: IntensitySchedule, *, strict: bool = False,
) -> DecoyBounds:
  """
  Vacuum + weak decoy lower bound on Y1 and upper bound on e1.

  Out-of-range bounds are clamped and flagged so long sweeps survive
  statistical outliers; with `strict`, Y1 <= 0 raises instead.
  """
  u, v = schedule.u, schedule.v
  if v <= 0.0 or u - v <= 1e-9 * u:
    raise DegenerateScheduleError(f"decoy bounds need u > v > 0 (u={u!r}, v={v!r})")
  rates = stats.rates()
  q_u, q_v = rates.gain(IntensityClass.U), rates.gain(IntensityClass.V)
  e_v = rates.error_rate(IntensityClass.V)
  y0 = rates.y0

  y1 = (u / (u * v - v * v)) * (
    q_v * math.exp(v) - q_u * math.exp(u) * (v * v) / (u * u) - ((u * u - v * v) / (u * u)) * y0
  )
  if y1 <= 0.0:
    if strict:
      raise InsufficientStatisticsError(f"single-photon yield bound Y1={y1:.3g} is not positive")
    logger.info("Y1 bound %.3g clamped to 0", y1)
    return DecoyBounds(0.0, 0.5, 0.0, y1_clamped=True, e1_clamped=True)

  e1 = (e_v * q_v * math.exp(v) - VACUUM_ERROR_RATE * y0) / (y1 * v)
  e1_clamped = not 0.0 <= e1 <= 0.5
  e1 = min(max(e1, 0.0), 0.5)
  y1_clamped = y1 > 1.0
  y1 = min(y1, 1.0)
  q1 = min(y1 * u * math.exp(-u), q_u)
  return DecoyBounds(y1, e1, q1, y1_clamped=y1_clamped, e1_clamped=e1_clamped)


def sift_factor(basis_prob_x: float) -> float:
  """Probability that both sides pick the same basis (1/2 for balanced BB84)."""
  return basis_prob_x ** 2 + (1.0 - basis_prob_x) ** 2


@dataclass(frozen=True)
class KeyRateReport:
  y1_lower: float
  e1_upper: float
  q1_lower: float
  raw_rate: float
  rate_per_pulse: float
  rate_per_second: float
  sifted_rate_per_second: float
  qber: float
  gain_bob: float
  gain_alice: Optional[float]
  attack_limit_ok: bool
  no_key: bool
  y1_clamped: bool
  e1_clamped: bool
  f_ec: float
  sift_factor: float

  def to_dict(self) -> dict:
    return {
      'y1_lower': self.y1_lower,
      'e1_upper': self.e1_upper,
      'q1_lower': self.q1_lower,
      'raw_rate': self.raw_rate,
      'rate_per_pulse': self.rate_per_pulse,
      'rate_per_second': self.rate_per_second,
      'sifted_rate_per_second': self.sifted_rate_per_second,
      'qber': self.qber,
      'gain_bob': self.gain_bob,
      'gain_alice': self.gain_alice,
      'attack_limit_ok': self.attack_limit_ok,
      'no_key': self.no_key,
      'y1_clamped': self.y1_clamped,
      'e1_clamped': self.e1_clamped,
      'f_ec': self.f_ec,
      'sift_factor': self.sift_factor,
    }


def secret_key_rate(
  stats: Rates, bounds: DecoyBounds, f_ec: float = DEFAULT_F_EC, *,
  rep_rate_hz: float = 5000.0, basis_prob_x: float = 0.5,
  gain_alice: Optional[float] = None,
) -> KeyRateReport:
  """
  R = s * { -Q_u f(E_u) h2(E_u) + Q_1 [1 - h2(e_1)] }, with s the basis
  sifting probability.  Negative rates mean no extractable key; the raw
  value is kept in the report.
  """
  if f_ec < 1.0:
    raise ParameterError(f"f_ec={f_ec!r} must be >= 1", key='f_ec')
  rates = stats.rates()
  q_u = rates.gain(IntensityClass.U)
  e_u = rates.error_rate(IntensityClass.U)
  s = sift_factor(basis_prob_x)
  raw = s * (-q_u * f_ec * binary_entropy(e_u) + bounds.q1_lower * (1.0 - binary_entropy(bounds.e1_upper)))
  rate = max(raw, 0.0)
  return KeyRateReport(
    y1_lower=bounds.y1_lower,
    e1_upper=bounds.e1_upper,
    q1_lower=bounds.q1_lower,
    raw_rate=raw,
    rate_per_pulse=rate,
    rate_per_second=rate * rep_rate_hz,
    sifted_rate_per_second=q_u * s * rep_rate_hz,
    qber=e_u,
    gain_bob=q_u,
    gain_alice=gain_alice,
    attack_limit_ok=e_u < ATTACK_QBER_LIMIT,
    no_key=raw <= 0.0,
    y1_clamped=bounds.y1_clamped,
    e1_clamped=bounds.e1_clamped,
    f_ec=f_ec,
    sift_factor=s,
  )


def analytic_statistics(params: ChannelParams, schedule: IntensitySchedule) -> ObservedRates:
  """Gains and QBERs the channel model predicts for each intensity class."""
  gains, errors = [], []
  for cls in IntensityClass:
    mu = schedule.mean(cls)
    gain = analytic_gain(mu, params)
    gains.append(gain)
    errors.append(analytic_qber(mu, params) if gain > 0 else 0.0)
  return ObservedRates(tuple(gains), tuple(errors))


def optimize_signal_intensity(
  params: ChannelParams, v_ratio: float = 0.5, f_ec: float = DEFAULT_F_EC,
  basis_prob_x: float = 0.5, u_max: float = 1.5,
) -> Tuple[float, float]:
  """Signal intensity maximizing the predicted key rate per pulse; returns (u, rate)."""
  if not 0.0 < v_ratio < 1.0:
    raise ParameterError(f"v_ratio={v_ratio!r} outside (0, 1)", key='v_ratio')

  def negative_rate(u: float) -> float:
    schedule = IntensitySchedule(u=u, v=v_ratio * u)
    rates = analytic_statistics(params, schedule)
    bounds = decoy_bounds(rates, schedule)
    return -secret_key_rate(rates, bounds, f_ec, basis_prob_x=basis_prob_x).raw_rate

  result = minimize_scalar(negative_rate, bounds=(1e-3, u_max), method='bounded')
  return float(result.x), float(-result.fun)


############################################################################
# Tomography

def classical_fidelity(p: Sequence[float], q: Sequence[float]) -> float:
  """F(p, q) = sum_i sqrt(p_i q_i)"""
  p = np.asarray(p, dtype=float)
  q = np.asarray(q, dtype=float)
  if p.shape != q.shape:
    raise ParameterError(f"length mismatch {p.shape} vs {q.shape}", key='q')
  for name, vec in (('p', p), ('q', q)):
    if np.any(vec < 0) or abs(vec.sum() - 1.0) > _PROB_TOLERANCE:
      raise NormalizationError(f"{name} is not a probability vector", key=name)
  return float(min(np.sum(np.sqrt(p * q)), 1.0))


# Row / column order of the tomography matrix
TOMOGRAPHY_STATES = (
  (0, BasisId.X), (1, BasisId.X), (0, BasisId.Z), (1, BasisId.Z),
)

IDEAL_TOMOGRAPHY = np.array([
  [1.0, 0.0, 0.5, 0.5],
  [0.0, 1.0, 0.5, 0.5],
  [0.5, 0.5, 1.0, 0.0],
  [0.5, 0.5, 0.0, 1.0],
])


@dataclass(frozen=True)
class TomographyConfig:
  n_pulses: int = 200_000  # per (prepared state, measurement basis) cell
  mu: float = 0.4
  rep_rate_hz: float = 10_000.0
  seed: int = 0
  min_counts: int = 100


@dataclass
class TomographyMatrix:
  """
  Conditional outcome frequencies: rows are prepared states, columns the
  projectors, both ordered as TOMOGRAPHY_STATES.  Each row sums to 1 within
  each measurement basis.
  """
  matrix: np.ndarray
  counts: Optional[np.ndarray] = None

  def block(self, row: int, basis: BasisId) -> np.ndarray:
    col = 2 * int(basis)
    return self.matrix[row, col:col + 2]

  def to_dict(self) -> dict:
    rv = {'matrix': self.matrix.tolist()}
    if self.counts is not None:
      rv['counts'] = self.counts.astype(int).tolist()
    return rv


def tomography_fidelity(measured: TomographyMatrix) -> float:
  """Mean classical fidelity of every (row, basis) block against the ideal matrix."""
  ideal = TomographyMatrix(IDEAL_TOMOGRAPHY)
  values = [
    classical_fidelity(measured.block(row, basis), ideal.block(row, basis))
    for row in range(len(TOMOGRAPHY_STATES)) for basis in BasisId
  ]
  return float(np.mean(values))


def tomography(config: TomographyConfig, params: ChannelParams) -> Tuple[TomographyMatrix, float]:
  """Prepare each MUB state, measure it in both bases, and bin the outcomes."""
  rng = np.random.default_rng(config.seed)
  matrix = np.zeros((4, 4))
  counts = np.zeros((4, 4), dtype=np.int64)
  mu = np.full(config.n_pulses, config.mu)
  for row, (bit, prep) in enumerate(TOMOGRAPHY_STATES):
    state = prepare_state(bit, prep)
    for basis in BasisId:
      p_one = measurement_probabilities(state, basis)[1]
      out = transmit_block(np.full(config.n_pulses, p_one), mu, params, rng)
      bits = resolve_bits(out.click0, out.click1, out.tiebreak)
      n0, n1 = int(np.count_nonzero(bits == 0)), int(np.count_nonzero(bits == 1))
      if n0 + n1 < config.min_counts:
        raise InsufficientStatisticsError(
          f"only {n0 + n1} detections for state {row} in basis {basis.name}"
          f" (need {config.min_counts})"
        )
      col = 2 * int(basis)
      counts[row, col:col + 2] = (n0, n1)
      matrix[row, col:col + 2] = (n0 / (n0 + n1), n1 / (n0 + n1))
  result = TomographyMatrix(matrix, counts)
  fidelity = tomography_fidelity(result)
  logger.info("tomography fidelity %.4f over %d pulses per cell", fidelity, config.n_pulses)
  return result, fidelity


def expected_tomography(params: ChannelParams, mu: float) -> TomographyMatrix:
  """
  Tomography matrix in the limit of infinitely many pulses.

  Photons reaching each detector are Poisson with means mu*eta*p0' and
  mu*eta*p1' (p' after misalignment); double clicks split evenly.
  """
  eta = total_transmittance(params)
  pd = params.dark_count_prob
  e = params.e_det
  matrix = np.zeros((4, 4))
  for row, (bit, prep) in enumerate(TOMOGRAPHY_STATES):
    state = prepare_state(bit, prep)
    for basis in BasisId:
      p1 = measurement_probabilities(state, basis)[1]
      p1 = p1 * (1.0 - e) + (1.0 - p1) * e
      c0 = 1.0 - (1.0 - pd) * math.exp(-mu * eta * (1.0 - p1))
      c1 = 1.0 - (1.0 - pd) * math.exp(-mu * eta * p1)
      only0, only1, both = c0 * (1.0 - c1), c1 * (1.0 - c0), c0 * c1
      total = only0 + only1 + both
      if total == 0.0:
        raise InsufficientStatisticsError("no detections expected")
      col = 2 * int(basis)
      matrix[row, col:col + 2] = ((only0 + both / 2) / total, (only1 + both / 2) / total)
  return TomographyMatrix(matrix)


def expected_fidelity(e_det: float) -> float:
  """Tomography fidelity predicted for misalignment e_det (cross-basis blocks are exact)."""
  if not 0.0 <= e_det <= 0.5:
    raise ParameterError(f"e_det={e_det!r} outside [0, 0.5]", key='e_det')
  return (1.0 + math.sqrt(1.0 - e_det)) / 2.0

def misalignment_for_fidelity(fidelity: float) -> float:
  lowest = expected_fidelity(0.5)
  if not lowest <= fidelity <= 1.0:
    raise ParameterError(f"fidelity {fidelity!r} outside [{lowest:.4f}, 1]", key='fidelity')
  return 1.0 - (2.0 * fidelity - 1.0) ** 2
