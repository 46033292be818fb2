"""
Photon-level model of one core-pair link.

Weak coherent pulses carry a Poissonian number of photons.  Each photon
survives the transmitter chip, the multicore fiber, the receiver chip and
the detector independently; survivors may leak into a neighbouring core
pair (incoherent crosstalk), and the rest land on one of the two
detectors according to the measurement probabilities, flipped with the
misalignment probability e_det.  Dark counts fire independently on each
detector.

The same model is exposed three ways: `transmit_pulse` (one pulse),
`transmit_block` (numpy arrays of pulses) and the closed-form
`analytic_gain` / `analytic_qber`.
"""

from typing import List, Optional, Sequence
from dataclasses import dataclass, field, replace

import logging
import math

import numpy as np

from .errors import ParameterError
from .qstate import BasisId, CorePairState, measurement_probabilities

__all__ = [
  'ChannelParams', 'DetectionRecord', 'BlockOutcome',
  'total_transmittance', 'crosstalk_probability', 'vacuum_yield',
  'transmit_pulse', 'transmit_block', 'apply_crosstalk', 'resolve_bits',
  'analytic_gain', 'analytic_qber',
  'calibrate_efficiency', 'calibrated_link', 'VACUUM_ERROR_RATE',
]

logger = logging.getLogger(__name__)

# Dark counts land on either detector with equal probability
VACUUM_ERROR_RATE = 0.5


@dataclass(frozen=True)
class ChannelParams:
  alice_loss_db: float = 0.0
  fiber_alpha_db_per_km: float = 0.0
  fiber_length_km: float = 0.0
  bob_loss_db: float = 0.0
  crosstalk_db: float = -30.0  # -inf disables crosstalk
  det_efficiency: float = 1.0
  dark_count_prob: float = 0.0
  e_det: float = 0.0

  def __post_init__(self):
    for key in ('alice_loss_db', 'fiber_alpha_db_per_km', 'fiber_length_km', 'bob_loss_db'):
      value = getattr(self, key)
      if not (value >= 0.0 and math.isfinite(value)):
        raise ParameterError(f"{key}={value!r} must be a finite value >= 0", key=key)
    if not self.crosstalk_db <= 0.0:
      raise ParameterError(f"crosstalk_db={self.crosstalk_db!r} must be <= 0 dB", key='crosstalk_db')
    if not 0.0 < self.det_efficiency <= 1.0:
      raise ParameterError(
        f"det_efficiency={self.det_efficiency!r} outside (0, 1]", key='det_efficiency')
    if not 0.0 <= self.dark_count_prob < 1.0:
      raise ParameterError(
        f"dark_count_prob={self.dark_count_prob!r} outside [0, 1)", key='dark_count_prob')
    if not 0.0 <= self.e_det <= 0.5:
      raise ParameterError(f"e_det={self.e_det!r} outside [0, 0.5]", key='e_det')

  @property
  def total_loss_db(self) -> float:
    return self.alice_loss_db + self.fiber_alpha_db_per_km * self.fiber_length_km + self.bob_loss_db

  def to_dict(self) -> dict:
    rv = {
      'alice_loss_db': self.alice_loss_db,
      'fiber_alpha_db_per_km': self.fiber_alpha_db_per_km,
      'fiber_length_km': self.fiber_length_km,
      'bob_loss_db': self.bob_loss_db,
      'crosstalk_db': self.crosstalk_db if math.isfinite(self.crosstalk_db) else None,
      'det_efficiency': self.det_efficiency,
      'dark_count_prob': self.dark_count_prob,
      'e_det': self.e_det,
    }
    return rv


@dataclass(frozen=True)
class DetectionRecord:
  clicked_0: bool
  clicked_1: bool
  basis: BasisId
  pulse_index: int = 0
  tiebreak: int = 0  # receiver's coin for double clicks
  leaked: int = 0  # photons that coupled into another core pair


@dataclass
class BlockOutcome:
  """Receiver-side outcome of a block of pulses on one core pair."""
  click0: np.ndarray
  click1: np.ndarray
  tiebreak: np.ndarray
  leaked: np.ndarray
  # One entry per leaked photon: the pulse it belongs to, a uniform draw
  # picking the target pair, and the detector it hits there.
  leak_pulse: np.ndarray = field(repr=False)
  leak_route: np.ndarray = field(repr=False)
  leak_detector: np.ndarray = field(repr=False)

  def __len__(self) -> int:
    return len(self.click0)


def total_transmittance(params: ChannelParams) -> float:
  return 10.0 ** (-params.total_loss_db / 10.0) * params.det_efficiency

def crosstalk_probability(params: ChannelParams) -> float:
  if not math.isfinite(params.crosstalk_db):
    return 0.0
  return 10.0 ** (params.crosstalk_db / 10.0)

def vacuum_yield(params: ChannelParams) -> float:
  """Probability that at least one of the two detectors dark-fires."""
  return 1.0 - (1.0 - params.dark_count_prob) ** 2


def transmit_block(
  p_one: np.ndarray, mu: np.ndarray, params: ChannelParams, rng: np.random.Generator,
) -> BlockOutcome:
  """
  Simulate a block of pulses.

  :param p_one: ideal probability of outcome 1 for each pulse (before misalignment)
  :param mu: mean photon number of each pulse
  :param params: link parameters
  :param rng: random stream owned by this core pair
  """
  p_one = np.asarray(p_one, dtype=float)
  mu = np.broadcast_to(np.asarray(mu, dtype=float), p_one.shape)
  if np.any(mu < 0):
    raise ParameterError("mean photon number must be >= 0", key='mu')
  size = p_one.shape
  eta = total_transmittance(params)
  xt = crosstalk_probability(params)
  e = params.e_det
  pd = params.dark_count_prob

  photons = rng.poisson(mu, size=size)
  survivors = rng.binomial(photons, eta)
  leaked = rng.binomial(survivors, xt) if xt > 0 else np.zeros(size, dtype=np.int64)
  kept = survivors - leaked
  p_flip = p_one * (1.0 - e) + (1.0 - p_one) * e
  ones = rng.binomial(kept, np.clip(p_flip, 0.0, 1.0))
  zeros = kept - ones
  dark = rng.random((2,) + size) < pd
  tiebreak = rng.integers(0, 2, size=size, dtype=np.uint8)
  leak_pulse = np.repeat(np.arange(leaked.size), leaked.ravel())
  leak_route = rng.random(leak_pulse.size)
  leak_detector = rng.integers(0, 2, size=leak_pulse.size, dtype=np.uint8)

  return BlockOutcome(
    click0=(zeros > 0) | dark[0],
    click1=(ones > 0) | dark[1],
    tiebreak=tiebreak,
    leaked=leaked,
    leak_pulse=leak_pulse,
    leak_route=leak_route,
    leak_detector=leak_detector,
  )


def transmit_pulse(
  state: CorePairState, mu: float, params: ChannelParams, rng: np.random.Generator,
  basis: BasisId = BasisId.X, pulse_index: int = 0,
) -> DetectionRecord:
  """Send one pulse prepared in `state` and measure it in `basis`."""
  if mu < 0:
    raise ParameterError(f"mu={mu!r} must be >= 0", key='mu')
  _, p1 = measurement_probabilities(state, basis)
  out = transmit_block(np.array([p1]), np.array([mu]), params, rng)
  return DetectionRecord(
    clicked_0=bool(out.click0[0]),
    clicked_1=bool(out.click1[0]),
    basis=BasisId(basis),
    pulse_index=pulse_index,
    tiebreak=int(out.tiebreak[0]),
    leaked=int(out.leaked[0]),
  )


def apply_crosstalk(outcomes: Sequence[BlockOutcome]) -> List[BlockOutcome]:
  """
  Route every leaked photon into another core pair, same pulse slot.

  Each photon picks its target uniformly among the other pairs, and a
  detector there, from draws made by its source pair, so the result does
  not depend on evaluation order.  With a single core pair leaked photons
  are simply lost.
  """
  n_pairs = len(outcomes)
  merged = [replace(o, click0=o.click0.copy(), click1=o.click1.copy()) for o in outcomes]
  if n_pairs < 2:
    return merged
  for source, out in enumerate(outcomes):
    if len(out.leak_pulse) == 0:
      continue
    offset = 1 + np.minimum((out.leak_route * (n_pairs - 1)).astype(np.int64), n_pairs - 2)
    target = (source + offset) % n_pairs
    for t in range(n_pairs):
      if t == source:
        continue
      if len(merged[t]) != len(out):
        raise ParameterError("core pairs must carry the same number of pulses", key='n_pulses')
      hit = target == t
      np.put(merged[t].click0, out.leak_pulse[hit & (out.leak_detector == 0)], True)
      np.put(merged[t].click1, out.leak_pulse[hit & (out.leak_detector == 1)], True)
    logger.debug("pair %d leaked %d photons", source, len(out.leak_pulse))
  return merged


def resolve_bits(click0: np.ndarray, click1: np.ndarray, tiebreak: np.ndarray) -> np.ndarray:
  """
  Bob's bit per pulse: 0/1 for single clicks, the tie-break coin for double
  clicks, -1 when nothing clicked.
  """
  click0 = np.asarray(click0, dtype=bool)
  click1 = np.asarray(click1, dtype=bool)
  bits = np.full(click0.shape, -1, dtype=np.int8)
  bits[click0 & ~click1] = 0
  bits[click1 & ~click0] = 1
  both = click0 & click1
  bits[both] = np.asarray(tiebreak, dtype=np.int8)[both]
  return bits


def analytic_gain(mu: float, params: ChannelParams) -> float:
  if mu < 0:
    raise ParameterError(f"mu={mu!r} must be >= 0", key='mu')
  y0 = vacuum_yield(params)
  signal = -math.expm1(-total_transmittance(params) * mu)
  return y0 + signal - y0 * signal

def analytic_qber(mu: float, params: ChannelParams) -> float:
  gain = analytic_gain(mu, params)
  if gain == 0.0:
    raise ZeroDivisionError(f"gain is zero at mu={mu!r}; QBER undefined")
  signal = -math.expm1(-total_transmittance(params) * mu)
  return (VACUUM_ERROR_RATE * vacuum_yield(params) + params.e_det * signal) / gain


def calibrate_efficiency(target_gain: float, mu: float, params: ChannelParams) -> ChannelParams:
  """Return `params` with the detector efficiency that makes analytic_gain(mu) hit `target_gain`."""
  y0 = vacuum_yield(params)
  if not y0 < target_gain < 1.0 or mu <= 0:
    raise ParameterError(f"cannot reach gain {target_gain!r} at mu={mu!r}", key='target_gain')
  eta = -math.log((1.0 - target_gain) / (1.0 - y0)) / mu
  efficiency = eta / 10.0 ** (-params.total_loss_db / 10.0)
  if efficiency > 1.0:
    raise ParameterError(
      f"gain {target_gain!r} needs detector efficiency {efficiency:.3g} > 1", key='target_gain')
  return replace(params, det_efficiency=efficiency)


# (signal mean photon number, measured signal gain, misalignment) per key
_TWO_KEY_MEASUREMENTS = (
  (0.5, 3.32e-2, 0.059),
  (0.45, 1.67e-2, 0.047),
)

def calibrated_link(key: int, crosstalk_db: Optional[float] = -30.0) -> ChannelParams:
  """
  Channel calibrated to the two-key chip-to-chip link.

  The transmitter loss is folded into the mean photon number, which is
  referenced at the chip output; a few metres of multicore fiber, 8 dB
  receiver chip loss and InGaAs dark counts remain.  The detector
  efficiency absorbs the rest so that the signal gain matches the measured
  one, and e_det matches the measured average QBER.
  """
  mu, gain, e_det = _TWO_KEY_MEASUREMENTS[key]
  base = ChannelParams(
    alice_loss_db=0.0,
    fiber_alpha_db_per_km=0.37,
    fiber_length_km=0.005,
    bob_loss_db=8.0,
    crosstalk_db=-math.inf if crosstalk_db is None else crosstalk_db,
    det_efficiency=1.0,
    dark_count_prob=2e-8,
    e_det=e_det,
  )
  return calibrate_efficiency(gain, mu, base)
