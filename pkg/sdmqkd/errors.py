"""
Exception hierarchy shared by all sdmqkd modules.

Every error knows the process exit code the command-line front end should use
and can render itself as a machine-readable record.
"""

from typing import Any, Dict, Optional

__all__ = [
  'FORMAT_VERSION',
  'SdmQkdError', 'ParameterError', 'ConfigError', 'NormalizationError',
  'SchemeError', 'StatisticsError', 'AnalysisError',
  'InsufficientStatisticsError', 'DegenerateScheduleError',
  'EXIT_OK', 'EXIT_CONFIG', 'EXIT_IO', 'EXIT_ANALYSIS',
]

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


class SdmQkdError(Exception):
  exit_code: int = 1
  kind: str = 'error'

  def details(self) -> Dict[str, Any]:
    return {}

  def to_dict(self) -> Dict[str, Any]:
    error = {'kind': self.kind, 'message': str(self)}
    error.update(self.details())
    return {
      'format_version': FORMAT_VERSION,
      'error': error,
      'exit_code': self.exit_code,
    }


class ParameterError(SdmQkdError, ValueError):
  """A parameter is outside its valid range; `key` names it."""
  exit_code = EXIT_CONFIG
  kind = 'parameter'

  def __init__(self, message: str, key: Optional[str] = None):
    super().__init__(message)
    self.key = key

  def details(self) -> Dict[str, Any]:
    return {} if self.key is None else {'key': self.key}


class ConfigError(ParameterError):
  kind = 'config'

  def __init__(
    self, message: str, key: Optional[str] = None,
    line: Optional[int] = None, column: Optional[int] = None,
  ):
    if line is not None:
      message = f'{message} (line {line}, column {column})'
    super().__init__(message, key)
    self.line = line
    self.column = column

  def details(self) -> Dict[str, Any]:
    rv = super().details()
    if self.line is not None:
      rv.update(line=self.line, column=self.column)
    return rv


class NormalizationError(ParameterError):
  kind = 'normalization'


class SchemeError(ParameterError):
  kind = 'scheme'


class StatisticsError(SdmQkdError):
  """Count statistics violate errors <= sifted <= sent."""
  exit_code = EXIT_ANALYSIS
  kind = 'statistics'


class AnalysisError(SdmQkdError):
  exit_code = EXIT_ANALYSIS
  kind = 'analysis'


class InsufficientStatisticsError(AnalysisError):
  kind = 'insufficient_statistics'


class DegenerateScheduleError(AnalysisError):
  kind = 'degenerate_schedule'
