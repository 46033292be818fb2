"""
Command-line front end.

    python -m sdmqkd simulate   --config link.json --out report.json [--seed N]
    python -m sdmqkd analyze    --config analyze.json --out report.json
    python -m sdmqkd tomography --config link.json --out tomo.json
    python -m sdmqkd compare    --config sweep.json --out sweep.csv

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 analysis
failure.  On failure a JSON error record is written to stderr.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace

from .errors import (
  EXIT_IO, EXIT_OK, FORMAT_VERSION, ConfigError, SdmQkdError,
)
from .common import c, hr, msg, setup_logging
from .config import FORMATS, SUBCOMMANDS, RunConfig, load_config, parse_config
from .channel import ChannelParams, analytic_gain
from .protocol import (
  DecoyStatistics, IntensityClass, IntensitySchedule,
  accumulate_statistics, qber_series, run_session,
)
from .analysis import (
  KeyRateReport, decoy_bounds, expected_fidelity, expected_tomography, secret_key_rate, tomography,
)
from .multiplex import compare_sweep, write_csv
from .pulselog import read_pulse_log, write_pulse_log

__all__ = ['main', 'run', 'build_parser', 'pair_report']

logger = logging.getLogger(__name__)

TIME_SERIES_HEADER = (
  'pair', 'window', 't_start_s', 'class', 'sent', 'clicked', 'sifted', 'errors', 'gain', 'qber',
)


def _dumps(obj: Any) -> str:
  return json.dumps(obj, indent=2, sort_keys=True) + '\n'


def _finite(x: float) -> Optional[float]:
  return x if math.isfinite(x) else None


def _write(config: RunConfig, text: str) -> None:
  if config.out is None:
    sys.stdout.write(text)
    return
  with open(config.out, 'w', newline='') as fp:
    fp.write(text)
  logger.info("wrote %s", config.out)


def pair_report(
  stats: DecoyStatistics, schedule: IntensitySchedule, params: ChannelParams,
  rep_rate_hz: float, basis_prob_x: float, f_ec: float, strict: bool,
) -> KeyRateReport:
  """Decoy bounds and key rate of one core pair; simulate and analyze share it."""
  bounds = decoy_bounds(stats, schedule, strict=strict)
  return secret_key_rate(
    stats, bounds, f_ec, rep_rate_hz=rep_rate_hz, basis_prob_x=basis_prob_x,
    gain_alice=analytic_gain(schedule.u, params),
  )


def _key_rate_document(
  kind: str, resolved: Dict[str, Any], stats: Sequence[DecoyStatistics],
  reports: Sequence[KeyRateReport],
) -> Dict[str, Any]:
  pairs = []
  for k, (s, r) in enumerate(zip(stats, reports)):
    pairs.append({'pair': k, 'statistics': s.to_dict(), 'key_rate': r.to_dict()})
  return {
    'format_version': FORMAT_VERSION,
    'kind': kind,
    'config': resolved,
    'pairs': pairs,
    'total_rate_per_second': sum(r.rate_per_second for r in reports),
    'total_sifted_rate_per_second': sum(r.sifted_rate_per_second for r in reports),
  }


def _summary(reports: Sequence[KeyRateReport]) -> None:
  msg(hr())
  for k, r in enumerate(reports):
    ok = c('green') + 'ok' if r.attack_limit_ok else c('red') + 'above 11%'
    msg(f"pair {k}: Q_u={r.gain_bob:.4g} E_u={r.qber:.4f} ({ok}{c()}) "
        f"R={r.rate_per_second:.4g} bit/s sifted={r.sifted_rate_per_second:.4g} bit/s"
        + (" [no key]" if r.no_key else ""))
  msg(hr())


def _time_series_csv(config: RunConfig, results) -> str:
  window = max(1, int(round(config.session.window_s * config.session.rep_rate_hz)))
  buf = io.StringIO()
  buf.write(f"# format_version: {FORMAT_VERSION}\n")
  buf.write("# config: " + json.dumps(config.to_dict(), sort_keys=True) + "\n")
  writer = csv.writer(buf, lineterminator='\n')
  writer.writerow(TIME_SERIES_HEADER)
  for result in results:
    for w in qber_series(result.pulses, result.detections, window):
      t_start = w.start_pulse / config.session.rep_rate_hz
      for cls in IntensityClass:
        counts = w.statistics[cls]
        writer.writerow((
          result.index, w.window, repr(t_start), cls.label, counts.sent, counts.clicked,
          counts.sifted, counts.errors, repr(counts.gain), repr(counts.error_rate),
        ))
  return buf.getvalue()


def _simulate(config: RunConfig) -> None:
  session = config.session_config()
  results = run_session(session, config.channels)
  if config.session.pulse_log is not None:
    with open(config.session.pulse_log, 'w') as fp:
      write_pulse_log(fp, results, config.to_dict())
  if config.format == 'csv':
    _write(config, _time_series_csv(config, results))
    return
  stats = [r.statistics for r in results]
  reports = [
    pair_report(
      s, config.schedules[k], config.channels[k], session.rep_rate_hz,
      session.basis_prob_x, config.analysis.f_ec, config.analysis.strict,
    )
    for k, s in enumerate(stats)
  ]
  _summary(reports)
  _write(config, _dumps(_key_rate_document('simulate', config.to_dict(), stats, reports)))


def _channel_from_dict(d: Dict[str, Any]) -> ChannelParams:
  d = {k: v for k, v in d.items() if k != 'target_gain'}
  if d.get('crosstalk_db') is None:
    d['crosstalk_db'] = -math.inf
  return ChannelParams(**d)


def _replay_analysis(config: RunConfig, logged: Dict[str, Any]) -> Tuple[float, bool]:
  """f_ec and strict for a replay: explicit settings win, then the logged run's."""
  recorded = logged.get('analysis')
  if not isinstance(recorded, dict):
    recorded = {}
  defaulted = config.to_dict().get('defaulted', ())
  f_ec, strict = config.analysis.f_ec, config.analysis.strict
  if 'analysis.f_ec' in defaulted and 'f_ec' in recorded:
    f_ec = recorded['f_ec']
  if 'analysis.strict' in defaulted and 'strict' in recorded:
    strict = recorded['strict']
  valid_f_ec = isinstance(f_ec, (int, float)) and not isinstance(f_ec, bool) and f_ec >= 1.0
  if not valid_f_ec or not isinstance(strict, bool):
    raise ConfigError("pulse log header has malformed analysis settings", key='pulse_log')
  return float(f_ec), strict


def _analyze(config: RunConfig) -> None:
  if config.format != 'json':
    raise ConfigError("analyze writes json only", key='format')
  with open(config.analysis.pulse_log, 'r') as fp:
    header, pairs = read_pulse_log(fp)
  logged = header['config']
  try:
    schedules = [IntensitySchedule(**s) for s in logged['schedule']]
    channels = [_channel_from_dict(ch) for ch in logged['channel']]
    rep_rate = logged['session']['rep_rate_hz']
    basis_prob_x = logged['session']['basis_prob_x']
  except (KeyError, TypeError) as exc:
    raise ConfigError(f"pulse log header lacks session parameters ({exc})", key='pulse_log') from exc
  if not len(schedules) == len(channels) == len(pairs):
    raise ConfigError("pulse log header and records disagree on the number of core pairs", key='pulse_log')
  f_ec, strict = _replay_analysis(config, logged)

  stats = [accumulate_statistics(pulses, detections) for pulses, detections in pairs]
  reports = [
    pair_report(
      s, schedules[k], channels[k], rep_rate, basis_prob_x,
      f_ec, strict,
    )
    for k, s in enumerate(stats)
  ]
  _summary(reports)
  doc = _key_rate_document('analyze', logged, stats, reports)
  doc['analysis'] = {'f_ec': f_ec, 'strict': strict,
                     'pulse_log': config.analysis.pulse_log}
  _write(config, _dumps(doc))


def _tomography(config: RunConfig) -> None:
  if config.format != 'json':
    raise ConfigError("tomography writes json only", key='format')
  seeds = config.tomography_seeds()
  pairs = []
  for k, params in enumerate(config.channels):
    e_det = config.tomography.e_det[k]
    if e_det is not None:
      params = replace(params, e_det=e_det)
    matrix, fidelity = tomography(config.tomography.config_for(seeds[k]), params)
    pairs.append({
      'pair': k,
      'e_det': params.e_det,
      'fidelity': fidelity,
      'expected_fidelity': expected_fidelity(params.e_det),
      'tomography': matrix.to_dict(),
      'expected_tomography': expected_tomography(params, config.tomography.mu).to_dict(),
    })
    msg(f"pair {k}: classical fidelity {fidelity:.4f}")
  _write(config, _dumps({
    'format_version': FORMAT_VERSION, 'kind': 'tomography',
    'config': config.to_dict(), 'pairs': pairs,
  }))


def _compare(config: RunConfig) -> None:
  m = config.multiplex
  rows = compare_sweep(m.schemes, m.sweep, m.noise_floor)
  if config.format == 'csv':
    buf = io.StringIO()
    write_csv(rows, buf, config.to_dict(), m.noise_floor)
    _write(config, buf.getvalue())
    return
  records = []
  for row in rows:
    d = row.to_dict()
    d.update(eta=_finite(row.eta), rate=_finite(row.rate))
    records.append(d)
  _write(config, _dumps({
    'format_version': FORMAT_VERSION, 'kind': 'compare',
    'config': config.to_dict(), 'rows': records,
  }))


_COMMANDS = {
  'simulate': _simulate,
  'analyze': _analyze,
  'tomography': _tomography,
  'compare': _compare,
}


def run(config: RunConfig) -> int:
  """Execute one subcommand; raises SdmQkdError or OSError on failure."""
  logger.info("%s (seed %d)", config.subcommand, config.seed)
  _COMMANDS[config.subcommand](config)
  return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
    prog='sdmqkd',
    description="Decoy-state BB84 over multicore fiber: simulation and analysis.",
  )
  sub = parser.add_subparsers(dest='subcommand', required=True)
  for name in SUBCOMMANDS:
    p = sub.add_parser(name)
    p.add_argument('--config', help="JSON configuration file (defaults apply when omitted)")
    p.add_argument('--out', help="output file (stdout when omitted)")
    p.add_argument('--seed', type=int, help="master seed, overrides the config")
    p.add_argument('--format', choices=FORMATS, help="json, or csv (compare default)")
    p.add_argument('-v', '--verbose', action='count', default=0)
    p.add_argument('-q', '--quiet', action='store_true')
  return parser


def _fail(record: Dict[str, Any], code: int) -> int:
  sys.stderr.write(json.dumps(record, sort_keys=True) + '\n')
  return code


def main(argv: Optional[List[str]] = None) -> int:
  args = build_parser().parse_args(argv)
  setup_logging(-1 if args.quiet else args.verbose)
  kwargs = dict(seed=args.seed, out=args.out, format=args.format)
  try:
    if args.config is None:
      config = parse_config('', args.subcommand, **kwargs)
    else:
      config = load_config(args.config, args.subcommand, **kwargs)
    return run(config)
  except SdmQkdError as exc:
    logger.debug("failed", exc_info=True)
    return _fail(exc.to_dict(), exc.exit_code)
  except OSError as exc:
    return _fail({
      'format_version': FORMAT_VERSION,
      'error': {'kind': 'io', 'message': str(exc), 'path': exc.filename},
      'exit_code': EXIT_IO,
    }, EXIT_IO)
