"""
Decoy-state BB84 sessions over N/2 parallel core pairs.

Each core pair owns a PRBS register (Alice's bits and bases), a random
stream (intensity choice, Bob's bases, channel) and its schedule, so pairs
are simulated independently and only meet again when crosstalk photons
are routed between them.
"""

from typing import Dict, List, Optional, Sequence, Tuple, Union
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

import logging

import numpy as np

from .errors import InsufficientStatisticsError, ParameterError, StatisticsError
from .qstate import BasisId, ideal_outcome_table
from .channel import (
  BlockOutcome, ChannelParams, DetectionRecord,
  apply_crosstalk, resolve_bits, transmit_block,
)

__all__ = [
  'PRBS_TAPS', 'prbs_next', 'Prbs',
  'IntensityClass', 'IntensitySchedule', 'TWO_KEY_PATTERN',
  'SessionConfig', 'SeedSet', 'derive_seeds',
  'PulseRecord', 'PulseRecords', 'DetectionRecords',
  'SiftedBatch', 'ClassCounts', 'DecoyStatistics', 'ObservedRates',
  'PairResult', 'WindowStats',
  'sift', 'estimate_qber', 'accumulate_statistics', 'run_session', 'qber_series',
]

logger = logging.getLogger(__name__)


############################################################################
# Pseudorandom binary sequences

# Feedback tap (other than the MSb) for x^k + x^tap + 1
PRBS_TAPS = {7: 6, 31: 28}

# Widest vector step used by Prbs.bits()
_MAX_LAG = 1 << 16


def prbs_next(state: int, order: int = 31) -> Tuple[int, int]:
  """
  One Fibonacci LFSR step; returns (output bit, new state).

  Bit j of the register holds the output from j+1 steps ago.
  """
  if order not in PRBS_TAPS:
    raise ParameterError(f"unsupported PRBS order {order}", key='order')
  mask = (1 << order) - 1
  if state & mask == 0 or state != state & mask:
    raise ParameterError(f"invalid PRBS-{order} state {state:#x}", key='state')
  tap = PRBS_TAPS[order]
  bit = ((state >> (order - 1)) ^ (state >> (tap - 1))) & 1
  return bit, ((state << 1) | bit) & mask


class Prbs:
  """Stateful PRBS source, bit-identical to repeated prbs_next()."""

  def __init__(self, seed: int, order: int = 31):
    prbs_next(seed, order)  # validates
    self.order = order
    self.state = seed

  def next_bit(self) -> int:
    bit, self.state = prbs_next(self.state, self.order)
    return bit

  def bits(self, count: int) -> np.ndarray:
    """
    Next `count` output bits as a uint8 array.

    The sequence obeys o[t] = o[t-k] ^ o[t-tap]; squaring the trinomial over
    GF(2) doubles both lags, which lets each numpy step cover more bits once
    enough history exists.
    """
    k, tap = self.order, PRBS_TAPS[self.order]
    out = np.empty(k + count, dtype=np.uint8)
    out[:k] = [(self.state >> (k - 1 - i)) & 1 for i in range(k)]
    long_lag, short_lag = k, tap
    pos, end = k, k + count
    while pos < end:
      while pos >= 2 * long_lag and 2 * short_lag <= _MAX_LAG:
        long_lag, short_lag = 2 * long_lag, 2 * short_lag
      n = min(short_lag, end - pos)
      out[pos:pos + n] = out[pos - long_lag:pos - long_lag + n] ^ out[pos - short_lag:pos - short_lag + n]
      pos += n
    tail = out[end - k:end]
    self.state = int(sum(int(b) << (k - 1 - i) for i, b in enumerate(tail)))
    return out[k:]


############################################################################
# Schedules and configuration

class IntensityClass(IntEnum):
  U = 0
  V = 1
  VACUUM = 2

  @property
  def label(self) -> str:
    return ('u', 'v', 'vacuum')[self]

  @classmethod
  def from_label(cls, label: str) -> 'IntensityClass':
    return cls(('u', 'v', 'vacuum').index(label))


_U, _V, _0 = IntensityClass.U, IntensityClass.V, IntensityClass.VACUUM

# Literal two-key intensity table: nine consecutive slots per key
TWO_KEY_PATTERN = (
  (_U, _U, _0, _V, _U, _0, _0, _V, _V),
  (_U, _0, _U, _U, _V, _0, _V, _0, _V),
)


@dataclass(frozen=True)
class IntensitySchedule:
  u: float = 0.5
  v: Optional[float] = None  # defaults to u/2
  p_u: float = 0.7
  p_v: float = 0.2
  p_vac: float = 0.1
  mode: str = 'iid'  # or 'pattern'

  def __post_init__(self):
    if self.v is None:
      object.__setattr__(self, 'v', self.u / 2)
    if not self.u > 0:
      raise ParameterError(f"u={self.u!r} must be > 0", key='u')
    if not 0.0 <= self.v < self.u:
      raise ParameterError(f"v={self.v!r} must satisfy 0 <= v < u", key='v')
    for key in ('p_u', 'p_v', 'p_vac'):
      if not 0.0 <= getattr(self, key) <= 1.0:
        raise ParameterError(f"{key} outside [0, 1]", key=key)
    if abs(self.p_u + self.p_v + self.p_vac - 1.0) > 1e-12:
      raise ParameterError("p_u + p_v + p_vac must equal 1", key='p_u')
    if self.mode not in ('iid', 'pattern'):
      raise ParameterError(f"unknown schedule mode {self.mode!r}", key='mode')

  @property
  def probabilities(self) -> Tuple[float, float, float]:
    return (self.p_u, self.p_v, self.p_vac)

  @property
  def means(self) -> np.ndarray:
    return np.array([self.u, self.v, 0.0])

  def mean(self, cls: IntensityClass) -> float:
    return float(self.means[cls])

  def draw(self, n: int, rng: np.random.Generator, pair: int = 0) -> np.ndarray:
    if self.mode == 'pattern':
      pattern = np.array(TWO_KEY_PATTERN[pair % len(TWO_KEY_PATTERN)], dtype=np.uint8)
      return np.resize(pattern, n)
    return rng.choice(3, size=n, p=self.probabilities).astype(np.uint8)

  def to_dict(self) -> dict:
    return {
      'u': self.u, 'v': self.v,
      'p_u': self.p_u, 'p_v': self.p_v, 'p_vac': self.p_vac,
      'mode': self.mode,
    }


@dataclass(frozen=True)
class SeedSet:
  prbs: Tuple[int, ...]
  bob_prbs: Tuple[int, ...]
  rng: Tuple[int, ...]


def _prbs_seed(words: np.ndarray) -> int:
  return int(words[0]) % ((1 << 31) - 1) + 1

def derive_seeds(master_seed: int, n_pairs: int) -> SeedSet:
  """Deterministically derive every per-pair seed from one master seed."""
  root = np.random.SeedSequence(master_seed)
  prbs, bob, rng = [], [], []
  for child in root.spawn(n_pairs):
    words = child.generate_state(4, dtype=np.uint32)
    seed = _prbs_seed(words)
    while seed in prbs:
      seed = seed % ((1 << 31) - 1) + 1
    prbs.append(seed)
    bob.append(_prbs_seed(words[1:]))
    rng.append(int(words[2]) << 32 | int(words[3]))
  return SeedSet(tuple(prbs), tuple(bob), tuple(rng))


@dataclass(frozen=True)
class SessionConfig:
  n_pulses: int
  prbs_seeds: Tuple[int, ...]
  rng_seeds: Tuple[int, ...]
  schedules: Tuple[IntensitySchedule, ...]
  rep_rate_hz: float = 5000.0
  basis_prob_x: float = 0.5
  bob_basis_source: str = 'rng'  # or 'prbs'
  bob_prbs_seeds: Tuple[int, ...] = ()
  workers: int = 1

  def __post_init__(self):
    n = self.n_core_pairs
    if n < 1:
      raise ParameterError("at least one core pair is required", key='n_core_pairs')
    if self.n_pulses < 0:
      raise ParameterError(f"n_pulses={self.n_pulses!r} must be >= 0", key='n_pulses')
    if len(self.rng_seeds) != n or len(self.schedules) != n:
      raise ParameterError("one RNG seed and one schedule per core pair", key='schedules')
    if len(set(self.prbs_seeds)) != n:
      raise ParameterError("PRBS seeds must be distinct", key='prbs_seeds')
    for seed in self.prbs_seeds:
      prbs_next(seed)
    if not 0.0 < self.basis_prob_x < 1.0:
      raise ParameterError(f"basis_prob_x={self.basis_prob_x!r} outside (0, 1)", key='basis_prob_x')
    if self.rep_rate_hz <= 0:
      raise ParameterError("rep_rate_hz must be > 0", key='rep_rate_hz')
    if self.bob_basis_source not in ('rng', 'prbs'):
      raise ParameterError(f"unknown bob_basis_source {self.bob_basis_source!r}", key='bob_basis_source')
    if self.bob_basis_source == 'prbs' and len(self.bob_prbs_seeds) != n:
      raise ParameterError("one Bob PRBS seed per core pair", key='bob_prbs_seeds')
    if self.workers < 1:
      raise ParameterError("workers must be >= 1", key='workers')

  @property
  def n_core_pairs(self) -> int:
    return len(self.prbs_seeds)

  @classmethod
  def from_seed(
    cls, master_seed: int, n_pulses: int, schedules: Sequence[IntensitySchedule], **kwargs
  ) -> 'SessionConfig':
    seeds = derive_seeds(master_seed, len(schedules))
    return cls(
      n_pulses=n_pulses, prbs_seeds=seeds.prbs, rng_seeds=seeds.rng,
      bob_prbs_seeds=seeds.bob_prbs, schedules=tuple(schedules), **kwargs
    )


############################################################################
# Records

@dataclass(frozen=True)
class PulseRecord:
  bit: int
  basis: BasisId
  intensity: IntensityClass
  core_pair_index: int = 0
  pulse_index: int = 0


@dataclass
class PulseRecords:
  """Columnar PulseRecord sequence for one core pair."""
  bits: np.ndarray
  bases: np.ndarray
  classes: np.ndarray
  core_pair_index: int = 0

  def __len__(self) -> int:
    return len(self.bits)

  def __getitem__(self, i: int) -> PulseRecord:
    return PulseRecord(
      int(self.bits[i]), BasisId(int(self.bases[i])), IntensityClass(int(self.classes[i])),
      self.core_pair_index, int(i),
    )

  @classmethod
  def from_records(cls, records: Sequence[PulseRecord]) -> 'PulseRecords':
    pair = records[0].core_pair_index if len(records) else 0
    return cls(
      bits=np.array([r.bit for r in records], dtype=np.uint8),
      bases=np.array([int(r.basis) for r in records], dtype=np.uint8),
      classes=np.array([int(r.intensity) for r in records], dtype=np.uint8),
      core_pair_index=pair,
    )


@dataclass
class DetectionRecords:
  """Columnar DetectionRecord sequence for one core pair."""
  click0: np.ndarray
  click1: np.ndarray
  bases: np.ndarray
  tiebreak: np.ndarray
  leaked: np.ndarray

  def __len__(self) -> int:
    return len(self.click0)

  def __getitem__(self, i: int) -> DetectionRecord:
    return DetectionRecord(
      bool(self.click0[i]), bool(self.click1[i]), BasisId(int(self.bases[i])),
      int(i), int(self.tiebreak[i]), int(self.leaked[i]),
    )

  @property
  def bits(self) -> np.ndarray:
    return resolve_bits(self.click0, self.click1, self.tiebreak)

  @classmethod
  def from_records(cls, records: Sequence[DetectionRecord]) -> 'DetectionRecords':
    return cls(
      click0=np.array([r.clicked_0 for r in records], dtype=bool),
      click1=np.array([r.clicked_1 for r in records], dtype=bool),
      bases=np.array([int(r.basis) for r in records], dtype=np.uint8),
      tiebreak=np.array([r.tiebreak for r in records], dtype=np.uint8),
      leaked=np.array([r.leaked for r in records], dtype=np.int64),
    )

  @classmethod
  def from_outcome(cls, outcome: BlockOutcome, bases: np.ndarray) -> 'DetectionRecords':
    return cls(outcome.click0, outcome.click1, bases, outcome.tiebreak, outcome.leaked)


@dataclass
class SiftedBatch:
  alice_bits: np.ndarray
  bob_bits: np.ndarray

  def __post_init__(self):
    self.alice_bits = np.asarray(self.alice_bits, dtype=np.uint8)
    self.bob_bits = np.asarray(self.bob_bits, dtype=np.uint8)
    if self.alice_bits.shape != self.bob_bits.shape:
      raise ParameterError("sifted bit sequences differ in length", key='bob_bits')

  def __len__(self) -> int:
    return len(self.alice_bits)

  @property
  def errors(self) -> int:
    return int(np.count_nonzero(self.alice_bits != self.bob_bits))


############################################################################
# Statistics

@dataclass(frozen=True)
class ClassCounts:
  sent: int = 0
  clicked: int = 0
  sifted: int = 0
  errors: int = 0

  def __post_init__(self):
    if min(self.sent, self.clicked, self.sifted, self.errors) < 0:
      raise StatisticsError(f"negative count in {self}")
    if not (self.errors <= self.sifted <= self.clicked <= self.sent):
      raise StatisticsError(f"counts violate errors <= sifted <= clicked <= sent: {self}")

  def __add__(self, other: 'ClassCounts') -> 'ClassCounts':
    return ClassCounts(
      self.sent + other.sent, self.clicked + other.clicked,
      self.sifted + other.sifted, self.errors + other.errors,
    )

  @property
  def gain(self) -> float:
    return self.clicked / self.sent if self.sent else 0.0

  @property
  def error_rate(self) -> float:
    return self.errors / self.sifted if self.sifted else 0.0


@dataclass(frozen=True)
class ObservedRates:
  """Gains and error rates per intensity class, measured or predicted."""
  gains: Tuple[float, float, float]
  error_rates: Tuple[float, float, float]

  def gain(self, cls: IntensityClass) -> float:
    return self.gains[cls]

  def error_rate(self, cls: IntensityClass) -> float:
    return self.error_rates[cls]

  @property
  def y0(self) -> float:
    return self.gains[IntensityClass.VACUUM]

  def rates(self) -> 'ObservedRates':
    return self


@dataclass(frozen=True)
class DecoyStatistics:
  counts: Tuple[ClassCounts, ClassCounts, ClassCounts] = (ClassCounts(), ClassCounts(), ClassCounts())

  def __post_init__(self):
    if len(self.counts) != len(IntensityClass):
      raise StatisticsError("one ClassCounts per intensity class is required")

  def __getitem__(self, cls: IntensityClass) -> ClassCounts:
    return self.counts[cls]

  def __add__(self, other: 'DecoyStatistics') -> 'DecoyStatistics':
    return DecoyStatistics(tuple(a + b for a, b in zip(self.counts, other.counts)))

  @property
  def n_pulses(self) -> int:
    return sum(c.sent for c in self.counts)

  def gain(self, cls: IntensityClass) -> float:
    return self.counts[cls].gain

  def error_rate(self, cls: IntensityClass) -> float:
    return self.counts[cls].error_rate

  @property
  def y0(self) -> float:
    return self.gain(IntensityClass.VACUUM)

  def rates(self) -> ObservedRates:
    return ObservedRates(
      tuple(c.gain for c in self.counts), tuple(c.error_rate for c in self.counts)
    )

  def to_dict(self) -> dict:
    rv = {}
    for cls in IntensityClass:
      c = self.counts[cls]
      rv[cls.label] = {
        'sent': c.sent, 'clicked': c.clicked, 'sifted': c.sifted, 'errors': c.errors,
        'gain': c.gain, 'qber': c.error_rate,
      }
    rv['y0'] = self.y0
    return rv


############################################################################
# Sifting

PulseInput = Union[PulseRecords, Sequence[PulseRecord]]
DetectionInput = Union[DetectionRecords, Sequence[DetectionRecord]]

def _columnar(alice: PulseInput, bob: DetectionInput) -> Tuple[PulseRecords, DetectionRecords]:
  if not isinstance(alice, PulseRecords):
    alice = PulseRecords.from_records(list(alice))
  if not isinstance(bob, DetectionRecords):
    bob = DetectionRecords.from_records(list(bob))
  if len(alice) != len(bob):
    raise ParameterError(
      f"pulse and detection records differ in length ({len(alice)} vs {len(bob)})", key='records')
  return alice, bob


def _sift_mask(alice: PulseRecords, bob: DetectionRecords) -> Tuple[np.ndarray, np.ndarray]:
  bob_bits = bob.bits
  keep = (alice.bases == bob.bases) & (bob_bits >= 0)
  return keep, bob_bits


def sift(alice: PulseInput, bob: DetectionInput) -> Dict[IntensityClass, SiftedBatch]:
  """
  Keep basis-matched pulses where at least one detector clicked, split by
  intensity class.  Double clicks take the receiver's tie-break coin.
  """
  alice, bob = _columnar(alice, bob)
  keep, bob_bits = _sift_mask(alice, bob)
  batches = {}
  for cls in IntensityClass:
    sel = keep & (alice.classes == cls)
    batches[cls] = SiftedBatch(alice.bits[sel], bob_bits[sel].astype(np.uint8))
  return batches


def estimate_qber(batch: SiftedBatch) -> float:
  if len(batch) == 0:
    raise InsufficientStatisticsError("cannot estimate QBER of an empty batch")
  return batch.errors / len(batch)


def accumulate_statistics(alice: PulseInput, bob: DetectionInput) -> DecoyStatistics:
  alice, bob = _columnar(alice, bob)
  keep, bob_bits = _sift_mask(alice, bob)
  clicked = bob_bits >= 0
  wrong = keep & (alice.bits != bob_bits)
  counts = []
  for cls in IntensityClass:
    in_cls = alice.classes == cls
    counts.append(ClassCounts(
      sent=int(np.count_nonzero(in_cls)),
      clicked=int(np.count_nonzero(in_cls & clicked)),
      sifted=int(np.count_nonzero(in_cls & keep)),
      errors=int(np.count_nonzero(in_cls & wrong)),
    ))
  return DecoyStatistics(tuple(counts))


############################################################################
# Sessions

@dataclass
class PairResult:
  index: int
  statistics: DecoyStatistics
  batches: Dict[IntensityClass, SiftedBatch]
  pulses: PulseRecords = field(repr=False)
  detections: DetectionRecords = field(repr=False)


def _bits_per_basis(basis_prob_x: float) -> int:
  return 1 if basis_prob_x == 0.5 else 16

def _draw_bases(raw: np.ndarray, basis_prob_x: float) -> np.ndarray:
  """Map PRBS bits (one row per pulse) onto bases; X when the word is below p_x."""
  width = raw.shape[1]
  weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
  words = raw.astype(np.int64) @ weights
  return np.where(words < basis_prob_x * (1 << width), BasisId.X, BasisId.Z).astype(np.uint8)


def _simulate_pair(
  pair: int, config: SessionConfig, params: ChannelParams,
) -> Tuple[PulseRecords, np.ndarray, BlockOutcome]:
  n = config.n_pulses
  schedule = config.schedules[pair]
  rng = np.random.default_rng(config.rng_seeds[pair])
  width = _bits_per_basis(config.basis_prob_x)

  raw = Prbs(config.prbs_seeds[pair]).bits(n * (1 + width)).reshape(n, 1 + width)
  pulses = PulseRecords(
    bits=raw[:, 0].copy(),
    bases=_draw_bases(raw[:, 1:], config.basis_prob_x),
    classes=schedule.draw(n, rng, pair),
    core_pair_index=pair,
  )
  if config.bob_basis_source == 'prbs':
    bob_raw = Prbs(config.bob_prbs_seeds[pair]).bits(n * width).reshape(n, width)
    bob_bases = _draw_bases(bob_raw, config.basis_prob_x)
  else:
    bob_bases = np.where(rng.random(n) < config.basis_prob_x, BasisId.X, BasisId.Z).astype(np.uint8)

  p_one = ideal_outcome_table()[pulses.bases, pulses.bits, bob_bases]
  mu = schedule.means[pulses.classes]
  outcome = transmit_block(p_one, mu, params, rng)
  logger.debug("pair %d: simulated %d pulses", pair, n)
  return pulses, bob_bases, outcome


def _per_pair(params: Union[ChannelParams, Sequence[ChannelParams]], n: int) -> List[ChannelParams]:
  if isinstance(params, ChannelParams):
    return [params] * n
  params = list(params)
  if len(params) != n:
    raise ParameterError(f"expected {n} ChannelParams, got {len(params)}", key='channel')
  return params


def run_session(
  config: SessionConfig, params: Union[ChannelParams, Sequence[ChannelParams]],
) -> List[PairResult]:
  """
  Run one decoy-state session on every core pair and sift the results.

  Pairs are independent until crosstalk routing, which only uses draws
  made by the source pair, so the worker count never changes the output.
  """
  n_pairs = config.n_core_pairs
  pair_params = _per_pair(params, n_pairs)
  if config.workers > 1 and n_pairs > 1:
    with ProcessPoolExecutor(max_workers=min(config.workers, n_pairs)) as pool:
      simulated = list(pool.map(
        _simulate_pair, range(n_pairs), [config] * n_pairs, pair_params))
  else:
    simulated = [_simulate_pair(k, config, pair_params[k]) for k in range(n_pairs)]

  outcomes = apply_crosstalk([out for _, _, out in simulated])
  results = []
  for k, ((pulses, bob_bases, _), outcome) in enumerate(zip(simulated, outcomes)):
    detections = DetectionRecords.from_outcome(outcome, bob_bases)
    stats = accumulate_statistics(pulses, detections)
    results.append(PairResult(k, stats, sift(pulses, detections), pulses, detections))
    logger.info(
      "pair %d: Q_u=%.4g E_u=%.4g Q_v=%.4g Y0=%.3g",
      k, stats.gain(IntensityClass.U), stats.error_rate(IntensityClass.U),
      stats.gain(IntensityClass.V), stats.y0,
    )
  return results


@dataclass(frozen=True)
class WindowStats:
  window: int
  start_pulse: int
  statistics: DecoyStatistics


def qber_series(alice: PulseInput, bob: DetectionInput, window_pulses: int) -> List[WindowStats]:
  """Per-window statistics, the time-series view of a session."""
  if window_pulses < 1:
    raise ParameterError("window_pulses must be >= 1", key='window_pulses')
  alice, bob = _columnar(alice, bob)
  series = []
  for w, start in enumerate(range(0, len(alice), window_pulses)):
    stop = start + window_pulses
    stats = accumulate_statistics(
      PulseRecords(alice.bits[start:stop], alice.bases[start:stop], alice.classes[start:stop],
                   alice.core_pair_index),
      DetectionRecords(bob.click0[start:stop], bob.click1[start:stop], bob.bases[start:stop],
                       bob.tiebreak[start:stop], bob.leaked[start:stop]),
    )
    series.append(WindowStats(w, start, stats))
  return series
