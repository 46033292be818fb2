"""
Run configuration: one JSON object with a flat section per module.

    {
      "seed": 7,
      "channel": {"bob_loss_db": 8, "e_det": [0.059, 0.047]},
      "session": {"n_pulses": 1000000, "n_core_pairs": 2},
      "schedule": {"u": [0.5, 0.45]}
    }

Per-core-pair values may be given as a list of length n_core_pairs;
scalars apply to every pair.  Unknown sections or keys are errors.
Every default is filled in and `RunConfig.to_dict()` echoes the result,
so each artifact describes exactly how it was produced.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field

import json
import logging
import math
import os
import re

from .errors import FORMAT_VERSION, ConfigError, ParameterError
from .channel import ChannelParams, calibrate_efficiency
from .protocol import IntensitySchedule, SessionConfig, derive_seeds
from .analysis import DEFAULT_F_EC, TomographyConfig
from .multiplex import LinkParams, Scheme, SchemeParams, Sweep

__all__ = [
  'SUBCOMMANDS', 'FORMATS', 'RunConfig', 'SessionSettings', 'AnalysisSettings',
  'TomographySettings', 'MultiplexSettings',
  'parse_config', 'config_from_dict', 'load_config',
]

logger = logging.getLogger(__name__)

SUBCOMMANDS = ('simulate', 'analyze', 'tomography', 'compare')
FORMATS = ('json', 'csv')

# Section -> key -> default.  `None` marks optional values.
_CHANNEL_KEYS = {
  'alice_loss_db': 0.0,
  'fiber_alpha_db_per_km': 0.0,
  'fiber_length_km': 0.0,
  'bob_loss_db': 0.0,
  'crosstalk_db': -30.0,
  'det_efficiency': 1.0,
  'dark_count_prob': 0.0,
  'e_det': 0.0,
  'target_gain': None,  # calibrates det_efficiency at the signal intensity
}
_SCHEDULE_KEYS = {'u': 0.5, 'v': None, 'p_u': 0.7, 'p_v': 0.2, 'p_vac': 0.1, 'mode': 'iid'}
_SESSION_KEYS = {
  'n_pulses': 100_000,
  'n_core_pairs': 1,
  'rep_rate_hz': 5000.0,
  'basis_prob_x': 0.5,
  'bob_basis_source': 'rng',
  'workers': 1,
  'window_s': 10.0,
  'pulse_log': None,
}
_ANALYSIS_KEYS = {'f_ec': DEFAULT_F_EC, 'strict': False, 'pulse_log': None}
_TOMOGRAPHY_KEYS = {
  'n_pulses': 200_000, 'mu': 0.4, 'rep_rate_hz': 10_000.0, 'min_counts': 100, 'e_det': None,
}
_MULTIPLEX_KEYS = {
  'schemes': ['SDM', 'HD', 'WDM', 'TDM', 'CDMA'],
  'sweep': 'N',
  'values': [2, 4, 6, 8, 10, 12, 14, 16],
  'n': 4,
  'length_km': 50.0,
  'alpha_db_per_km': 0.37,
  'bob_loss_db': 8.0,
  'det_efficiency': 0.1,
  'dark_count_prob': 2e-8,
  'e_det': 0.0,
  'cdma_weight': 0.5,
  'cdma_code_length': 32,
  'noise_floor': False,
}
_SECTIONS = {
  'channel': _CHANNEL_KEYS,
  'schedule': _SCHEDULE_KEYS,
  'session': _SESSION_KEYS,
  'analysis': _ANALYSIS_KEYS,
  'tomography': _TOMOGRAPHY_KEYS,
  'multiplex': _MULTIPLEX_KEYS,
}
_PER_PAIR = {
  'channel': set(_CHANNEL_KEYS),
  'schedule': set(_SCHEDULE_KEYS),
  'tomography': {'e_det'},
}


@dataclass(frozen=True)
class SessionSettings:
  n_pulses: int
  n_core_pairs: int
  rep_rate_hz: float
  basis_prob_x: float
  bob_basis_source: str
  workers: int
  window_s: float
  pulse_log: Optional[str]


@dataclass(frozen=True)
class AnalysisSettings:
  f_ec: float
  strict: bool
  pulse_log: Optional[str]


@dataclass(frozen=True)
class TomographySettings:
  n_pulses: int
  mu: float
  rep_rate_hz: float
  min_counts: int
  e_det: Tuple[Optional[float], ...]

  def config_for(self, seed: int) -> TomographyConfig:
    return TomographyConfig(
      n_pulses=self.n_pulses, mu=self.mu, rep_rate_hz=self.rep_rate_hz,
      seed=seed, min_counts=self.min_counts,
    )


@dataclass(frozen=True)
class MultiplexSettings:
  schemes: Tuple[SchemeParams, ...]
  sweep: Sweep
  noise_floor: bool


@dataclass(frozen=True)
class RunConfig:
  subcommand: str
  seed: int
  channels: Tuple[ChannelParams, ...]
  schedules: Tuple[IntensitySchedule, ...]
  session: SessionSettings
  analysis: AnalysisSettings
  tomography: TomographySettings
  multiplex: MultiplexSettings
  out: Optional[str] = None
  format: str = 'json'
  resolved: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

  @property
  def n_core_pairs(self) -> int:
    return self.session.n_core_pairs

  def session_config(self) -> SessionConfig:
    return SessionConfig.from_seed(
      self.seed, self.session.n_pulses, self.schedules,
      rep_rate_hz=self.session.rep_rate_hz,
      basis_prob_x=self.session.basis_prob_x,
      bob_basis_source=self.session.bob_basis_source,
      workers=self.session.workers,
    )

  def tomography_seeds(self) -> Tuple[int, ...]:
    # Children n..2n-1 of the master seed; the session uses 0..n-1
    n = self.n_core_pairs
    return derive_seeds(self.seed, 2 * n).rng[n:]

  def to_dict(self) -> Dict[str, Any]:
    """Fully-resolved configuration, defaults included."""
    return self.resolved


############################################################################
# Parsing

def _locate(text: Optional[str], section: str, key: Optional[str]) -> Tuple[Optional[int], Optional[int]]:
  """Line and column (1-based) of `"key"` inside `"section"`, or of the section itself."""
  if not text:
    return None, None
  start = 0
  m = re.search(r'"%s"\s*:' % re.escape(section), text)
  if m is not None:
    start = m.start()
  if key is not None:
    m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, start)
  if m is None:
    return None, None
  line = text.count('\n', 0, m.start()) + 1
  column = m.start() - (text.rfind('\n', 0, m.start()) + 1) + 1
  return line, column


class _Parser:

  def __init__(self, data: Dict[str, Any], text: Optional[str]):
    self.data = data
    self.text = text
    self.defaulted: List[str] = []

  def error(self, message: str, section: str, key: Optional[str] = None) -> ConfigError:
    line, column = _locate(self.text, section, key)
    return ConfigError(message, key=key or section, line=line, column=column)

  def section(self, name: str) -> Dict[str, Any]:
    raw = self.data.get(name, {})
    if not isinstance(raw, dict):
      raise self.error(f"section {name!r} must be an object", name)
    defaults = _SECTIONS[name]
    for key in raw:
      if key not in defaults:
        raise self.error(f"unknown key {key!r} in section {name!r}", name, key)
    self.defaulted.extend(f"{name}.{key}" for key in defaults if key not in raw)
    return {key: raw.get(key, default) for key, default in defaults.items()}

  def number(self, section: str, key: str, value: Any, integer: bool = False) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
      raise self.error(f"{section}.{key} must be a number, got {value!r}", section, key)
    if integer:
      if isinstance(value, float) and not value.is_integer():
        raise self.error(f"{section}.{key} must be an integer, got {value!r}", section, key)
      return int(value)
    return float(value)

  def choice(self, section: str, key: str, value: Any, choices: Sequence[str]) -> str:
    if value not in choices:
      raise self.error(f"{section}.{key} must be one of {', '.join(choices)}; got {value!r}", section, key)
    return value

  def path(self, section: str, key: str, value: Any) -> Optional[str]:
    if value is not None and not isinstance(value, str):
      raise self.error(f"{section}.{key} must be a path string, got {value!r}", section, key)
    return value

  def flag(self, section: str, key: str, value: Any) -> bool:
    if not isinstance(value, bool):
      raise self.error(f"{section}.{key} must be true or false, got {value!r}", section, key)
    return value

  def per_pair(self, section: str, values: Dict[str, Any], n_pairs: int) -> List[Dict[str, Any]]:
    """Split a section with list-valued keys into one dict per core pair."""
    pairs = [{} for _ in range(n_pairs)]
    for key, value in values.items():
      if isinstance(value, list) and key in _PER_PAIR.get(section, ()):
        if len(value) != n_pairs:
          raise self.error(
            f"{section}.{key} lists {len(value)} values for {n_pairs} core pairs", section, key)
        for k in range(n_pairs):
          pairs[k][key] = value[k]
      else:
        for k in range(n_pairs):
          pairs[k][key] = value
    return pairs

  def wrap(self, exc: ParameterError, section: str) -> ConfigError:
    key = exc.key if exc.key in _SECTIONS[section] else None
    err = self.error(str(exc), section, key)
    err.key = exc.key
    return err


def config_from_dict(
  data: Dict[str, Any], subcommand: str = 'simulate', *, text: Optional[str] = None,
  seed: Optional[int] = None, out: Optional[str] = None, format: Optional[str] = None,
) -> RunConfig:
  """Validate and default a decoded configuration object."""
  if not isinstance(data, dict):
    raise ConfigError("configuration must be a JSON object", key='config')
  p = _Parser(data, text)
  for name in data:
    if name != 'seed' and name not in _SECTIONS:
      raise p.error(f"unknown section {name!r}", name)
  if subcommand not in SUBCOMMANDS:
    raise ConfigError(f"unknown subcommand {subcommand!r}", key='subcommand')
  if format is None:
    format = 'csv' if subcommand == 'compare' else 'json'
  if format not in FORMATS:
    raise ConfigError(f"unknown output format {format!r}", key='format')

  if seed is None:
    seed = data.get('seed', 0)
  if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
    raise p.error(f"seed must be an integer in [0, 2^64), got {seed!r}", 'seed')

  # session
  raw = p.section('session')
  session = SessionSettings(
    n_pulses=p.number('session', 'n_pulses', raw['n_pulses'], integer=True),
    n_core_pairs=p.number('session', 'n_core_pairs', raw['n_core_pairs'], integer=True),
    rep_rate_hz=p.number('session', 'rep_rate_hz', raw['rep_rate_hz']),
    basis_prob_x=p.number('session', 'basis_prob_x', raw['basis_prob_x']),
    bob_basis_source=p.choice('session', 'bob_basis_source', raw['bob_basis_source'], ('rng', 'prbs')),
    workers=p.number('session', 'workers', raw['workers'], integer=True),
    window_s=p.number('session', 'window_s', raw['window_s']),
    pulse_log=p.path('session', 'pulse_log', raw['pulse_log']),
  )
  if session.n_core_pairs < 1:
    raise p.error("session.n_core_pairs must be >= 1", 'session', 'n_core_pairs')
  if session.n_pulses < 0:
    raise p.error("session.n_pulses must be >= 0", 'session', 'n_pulses')
  if session.window_s <= 0:
    raise p.error("session.window_s must be > 0", 'session', 'window_s')
  n_pairs = session.n_core_pairs

  # schedule
  schedules = []
  for values in p.per_pair('schedule', p.section('schedule'), n_pairs):
    kw = {k: (v if k == 'mode' or v is None else p.number('schedule', k, v)) for k, v in values.items()}
    try:
      schedules.append(IntensitySchedule(**kw))
    except ParameterError as exc:
      raise p.wrap(exc, 'schedule') from exc

  # channel
  channels, targets = [], []
  for schedule, values in zip(schedules, p.per_pair('channel', p.section('channel'), n_pairs)):
    target = values.pop('target_gain')
    if target is not None:
      target = p.number('channel', 'target_gain', target)
    if values['crosstalk_db'] is None:
      values['crosstalk_db'] = -math.inf
    kw = {k: p.number('channel', k, v) for k, v in values.items()}
    try:
      params = ChannelParams(**kw)
      if target is not None:
        params = calibrate_efficiency(target, schedule.u, params)
    except ParameterError as exc:
      raise p.wrap(exc, 'channel') from exc
    channels.append(params)
    targets.append(target)

  raw = p.section('analysis')
  analysis = AnalysisSettings(
    f_ec=p.number('analysis', 'f_ec', raw['f_ec']),
    strict=p.flag('analysis', 'strict', raw['strict']),
    pulse_log=p.path('analysis', 'pulse_log', raw['pulse_log']),
  )
  if analysis.f_ec < 1.0:
    raise p.error("analysis.f_ec must be >= 1", 'analysis', 'f_ec')
  if subcommand == 'analyze' and analysis.pulse_log is None:
    raise p.error("analyze needs analysis.pulse_log", 'analysis', 'pulse_log')

  raw = p.section('tomography')
  tomo_e_det = []
  for values in p.per_pair('tomography', {'e_det': raw['e_det']}, n_pairs):
    e = values['e_det']
    if e is not None:
      e = p.number('tomography', 'e_det', e)
      if not 0.0 <= e <= 0.5:
        raise p.error(f"tomography.e_det={e!r} outside [0, 0.5]", 'tomography', 'e_det')
    tomo_e_det.append(e)
  tomography = TomographySettings(
    n_pulses=p.number('tomography', 'n_pulses', raw['n_pulses'], integer=True),
    mu=p.number('tomography', 'mu', raw['mu']),
    rep_rate_hz=p.number('tomography', 'rep_rate_hz', raw['rep_rate_hz']),
    min_counts=p.number('tomography', 'min_counts', raw['min_counts'], integer=True),
    e_det=tuple(tomo_e_det),
  )
  if tomography.n_pulses < 1 or tomography.mu <= 0:
    raise p.error("tomography needs n_pulses >= 1 and mu > 0", 'tomography')

  multiplex = _multiplex_settings(p, p.section('multiplex'))

  # Worker count never changes results, so it stays out of the echo
  resolved = {
    'format_version': FORMAT_VERSION,
    'subcommand': subcommand,
    'seed': seed,
    'channel': [dict(c.to_dict(), target_gain=t) for c, t in zip(channels, targets)],
    'schedule': [s.to_dict() for s in schedules],
    'session': {
      'n_pulses': session.n_pulses, 'n_core_pairs': n_pairs,
      'rep_rate_hz': session.rep_rate_hz, 'basis_prob_x': session.basis_prob_x,
      'bob_basis_source': session.bob_basis_source,
      'window_s': session.window_s, 'pulse_log': session.pulse_log,
    },
    'analysis': {'f_ec': analysis.f_ec, 'strict': analysis.strict, 'pulse_log': analysis.pulse_log},
    'tomography': {
      'n_pulses': tomography.n_pulses, 'mu': tomography.mu,
      'rep_rate_hz': tomography.rep_rate_hz, 'min_counts': tomography.min_counts,
      'e_det': list(tomography.e_det),
    },
    'multiplex': {
      'schemes': [s.scheme.value for s in multiplex.schemes],
      'sweep': multiplex.sweep.variable,
      'values': list(multiplex.sweep.values),
      'link': multiplex.schemes[0].link.to_dict(),
      'n': multiplex.schemes[0].n,
      'cdma_weight': multiplex.schemes[0].cdma_weight,
      'cdma_code_length': multiplex.schemes[0].cdma_code_length,
      'noise_floor': multiplex.noise_floor,
    },
    'defaulted': sorted(p.defaulted),
  }
  logger.debug("resolved config: %s", resolved)
  return RunConfig(
    subcommand=subcommand, seed=seed, channels=tuple(channels), schedules=tuple(schedules),
    session=session, analysis=analysis, tomography=tomography, multiplex=multiplex,
    out=out, format=format, resolved=resolved,
  )


def _multiplex_settings(p: _Parser, raw: Dict[str, Any]) -> MultiplexSettings:
  names = raw['schemes']
  if not isinstance(names, list) or not names:
    raise p.error("multiplex.schemes must be a nonempty list", 'multiplex', 'schemes')
  for name in names:
    p.choice('multiplex', 'schemes', name, [s.value for s in Scheme])
  variable = p.choice('multiplex', 'sweep', raw['sweep'], ('N', 'length_km'))
  values = raw['values']
  if not isinstance(values, list) or not values:
    raise p.error("multiplex.values must be a nonempty list", 'multiplex', 'values')
  values = tuple(p.number('multiplex', 'values', v, integer=(variable == 'N')) for v in values)
  link = LinkParams(
    alpha_db_per_km=p.number('multiplex', 'alpha_db_per_km', raw['alpha_db_per_km']),
    length_km=p.number('multiplex', 'length_km', raw['length_km']),
    bob_loss_db=p.number('multiplex', 'bob_loss_db', raw['bob_loss_db']),
    det_efficiency=p.number('multiplex', 'det_efficiency', raw['det_efficiency']),
    dark_count_prob=p.number('multiplex', 'dark_count_prob', raw['dark_count_prob']),
    e_det=p.number('multiplex', 'e_det', raw['e_det']),
  )
  n = p.number('multiplex', 'n', raw['n'], integer=True)
  weight = p.number('multiplex', 'cdma_weight', raw['cdma_weight'])
  code_length = p.number('multiplex', 'cdma_code_length', raw['cdma_code_length'], integer=True)
  schemes = tuple(
    SchemeParams(Scheme(name), n, link, cdma_weight=weight, cdma_code_length=code_length)
    for name in names
  )
  return MultiplexSettings(schemes, Sweep(variable, values), p.flag('multiplex', 'noise_floor', raw['noise_floor']))


def parse_config(text: str, subcommand: str = 'simulate', **kwargs) -> RunConfig:
  """Parse configuration text; errors carry the line and column of the offending key."""
  try:
    data = json.loads(text) if text.strip() else {}
  except json.JSONDecodeError as exc:
    raise ConfigError(f"invalid JSON: {exc.msg}", key='config', line=exc.lineno, column=exc.colno) from exc
  return config_from_dict(data, subcommand, text=text, **kwargs)


def load_config(path: os.PathLike, subcommand: str = 'simulate', **kwargs) -> RunConfig:
  with open(path, 'r') as fp:
    text = fp.read()
  return parse_config(text, subcommand, **kwargs)
