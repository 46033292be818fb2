"""
Closed-form rates of multiplexed QKD links.

Every scheme's rate has the form  prefactor * [1 - exp(-x)]  where x is
the transmittance seen by one channel (eta, or eta/N when the channel is
shared in time or by codes).  With `noise_floor=True` the bracket is
replaced by an approximate dark-count-limited key fraction
max(0, Q [1 - 2 h2(E)]).
"""

from typing import IO, List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, field, replace
from enum import Enum

import csv
import json
import logging
import math

from .errors import FORMAT_VERSION, SchemeError, SdmQkdError
from .analysis import binary_entropy

__all__ = [
  'Scheme', 'LinkParams', 'SchemeParams', 'Sweep', 'RateRow',
  'eta_from_distance', 'link_transmittance', 'scheme_rate', 'compare_sweep',
  'CSV_HEADER', 'write_csv', 'noise_mode_label',
]

logger = logging.getLogger(__name__)

CSV_HEADER = ('scheme', 'N', 'length_km', 'eta', 'rate')


class Scheme(str, Enum):
  SDM = 'SDM'
  HD = 'HD'
  WDM = 'WDM'
  TDM = 'TDM'
  CDMA = 'CDMA'


@dataclass(frozen=True)
class LinkParams:
  """Link figures used by the comparison; defaults reproduce the published sweep."""
  alpha_db_per_km: float = 0.37
  length_km: float = 50.0
  bob_loss_db: float = 8.0
  det_efficiency: float = 0.1
  dark_count_prob: float = 2e-8  # noise-floor mode only
  e_det: float = 0.0  # noise-floor mode only

  def to_dict(self) -> dict:
    return {
      'alpha_db_per_km': self.alpha_db_per_km,
      'length_km': self.length_km,
      'bob_loss_db': self.bob_loss_db,
      'det_efficiency': self.det_efficiency,
      'dark_count_prob': self.dark_count_prob,
      'e_det': self.e_det,
    }


@dataclass(frozen=True)
class SchemeParams:
  scheme: Scheme
  n: int
  link: LinkParams = field(default_factory=LinkParams)
  cdma_weight: Optional[float] = None
  cdma_code_length: Optional[int] = None

  def validate(self) -> None:
    if self.n < 2:
      raise SchemeError(f"{self.scheme.value}: N={self.n} must be >= 2", key='n')
    if self.scheme is Scheme.SDM and self.n % 2:
      raise SchemeError(f"SDM: N={self.n} must be even (one key per core pair)", key='n')
    if self.scheme is Scheme.CDMA:
      if self.cdma_weight is None or self.cdma_code_length is None:
        raise SchemeError("CDMA needs cdma_weight and cdma_code_length", key='cdma_weight')
      if not 0.0 < self.cdma_weight < 1.0:
        raise SchemeError(f"cdma_weight={self.cdma_weight!r} outside (0, 1)", key='cdma_weight')
      if self.cdma_code_length < self.n:
        raise SchemeError(
          f"cdma_code_length={self.cdma_code_length} shorter than N={self.n}",
          key='cdma_code_length')
    link = self.link
    if min(link.alpha_db_per_km, link.length_km, link.bob_loss_db) < 0:
      raise SchemeError("losses and length must be >= 0", key='link')
    if not 0.0 < link.det_efficiency <= 1.0:
      raise SchemeError(f"det_efficiency={link.det_efficiency!r} outside (0, 1]", key='det_efficiency')


def eta_from_distance(alpha_db_per_km: float, length_km: float) -> float:
  if alpha_db_per_km < 0 or length_km < 0:
    raise SchemeError("attenuation and length must be >= 0", key='length_km')
  return 10.0 ** (-alpha_db_per_km * length_km / 10.0)


def link_transmittance(link: LinkParams) -> float:
  """Fiber, receiver chip and detector transmittances folded into one eta."""
  return (eta_from_distance(link.alpha_db_per_km, link.length_km)
          * 10.0 ** (-link.bob_loss_db / 10.0) * link.det_efficiency)


def _scheme_terms(p: SchemeParams, eta: float) -> Tuple[float, float]:
  "(prefactor, per-channel transmittance)"
  n = p.n
  if p.scheme is Scheme.SDM:
    return n / 2, eta
  if p.scheme is Scheme.HD:
    return math.log2(n), eta
  if p.scheme is Scheme.WDM:
    return float(n), eta
  if p.scheme is Scheme.TDM:
    return float(n), eta / n
  w, nc = p.cdma_weight, p.cdma_code_length
  return ((1.0 - w * w) / nc) ** (n - 1), eta / n


def _noisy_fraction(x: float, link: LinkParams) -> float:
  # Approximation: dark counts on two detectors, symmetric error correction cost
  y0 = 1.0 - (1.0 - link.dark_count_prob) ** 2
  signal = -math.expm1(-x)
  gain = y0 + signal - y0 * signal
  if gain == 0.0:
    return 0.0
  e = min((y0 / 2 + link.e_det * signal) / gain, 0.5)
  return max(0.0, gain * (1.0 - 2.0 * binary_entropy(e)))


def scheme_rate(p: SchemeParams, noise_floor: bool = False) -> float:
  """Relative key rate of `p.scheme` with N channels (or dimensions, users)."""
  p.validate()
  eta = link_transmittance(p.link)
  prefactor, x = _scheme_terms(p, eta)
  if noise_floor:
    return prefactor * _noisy_fraction(x, p.link)
  return prefactor * -math.expm1(-x)


def noise_mode_label(noise_floor: bool) -> str:
  return 'noise_floor_approx' if noise_floor else 'ideal'


@dataclass(frozen=True)
class Sweep:
  variable: str  # 'N' or 'length_km'
  values: Tuple[Union[int, float], ...]

  def __post_init__(self):
    if self.variable not in ('N', 'length_km'):
      raise SchemeError(f"cannot sweep over {self.variable!r}", key='sweep')
    if not self.values:
      raise SchemeError("empty sweep", key='sweep')

  def apply(self, p: SchemeParams, value: Union[int, float]) -> SchemeParams:
    if self.variable == 'N':
      return replace(p, n=int(value))
    return replace(p, link=replace(p.link, length_km=float(value)))


@dataclass(frozen=True)
class RateRow:
  scheme: Scheme
  n: int
  length_km: float
  eta: float
  rate: float
  noise_mode: str = 'ideal'
  error: Optional[str] = None

  def to_dict(self) -> dict:
    return {
      'scheme': self.scheme.value,
      'N': self.n,
      'length_km': self.length_km,
      'eta': self.eta,
      'rate': self.rate,
      'noise_mode': self.noise_mode,
      'error': self.error,
    }


def compare_sweep(
  schemes: Sequence[SchemeParams], sweep: Sweep, noise_floor: bool = False,
) -> List[RateRow]:
  """
  Evaluate every scheme at every sweep value.  A failing point becomes a
  row with rate nan and the error message; the sweep carries on.
  """
  if not schemes:
    raise SchemeError("no schemes to compare", key='schemes')
  mode = noise_mode_label(noise_floor)
  rows = []
  for base in schemes:
    for value in sweep.values:
      p = sweep.apply(base, value)
      try:
        eta = link_transmittance(p.link)
        rate, error = scheme_rate(p, noise_floor), None
      except SdmQkdError as exc:
        logger.warning("%s at %s=%s: %s", p.scheme.value, sweep.variable, value, exc)
        eta, rate, error = math.nan, math.nan, str(exc)
      rows.append(RateRow(p.scheme, p.n, p.link.length_km, eta, rate, mode, error))
  return rows


def write_csv(
  rows: Sequence[RateRow], fp: IO[str], config: Optional[dict] = None,
  noise_floor: bool = False,
) -> None:
  """Write the sweep table, preceded by '#' lines describing how it was made."""
  fp.write(f"# format_version: {FORMAT_VERSION}\n")
  fp.write(f"# noise_mode: {noise_mode_label(noise_floor)}\n")
  if config is not None:
    fp.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
  writer = csv.writer(fp, lineterminator='\n')
  writer.writerow(CSV_HEADER)
  for row in rows:
    writer.writerow((row.scheme.value, row.n, repr(row.length_km), repr(row.eta), repr(row.rate)))
  for row in rows:
    if row.error is not None:
      fp.write(f"# failed: {row.scheme.value} N={row.n} length_km={row.length_km!r}: {row.error}\n")
