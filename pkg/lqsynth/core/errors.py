"""Hierarchia wyjątków LQ Synth."""

from typing import Any, Dict, Optional


class LqSynthError(Exception):
    """Bazowy wyjątek pakietu."""


class DimensionError(LqSynthError, ValueError):
    """Niezgodne wymiary tensorów lub obrazów."""


class StepRangeError(LqSynthError, ValueError):
    """Krok dyfuzji t poza dozwolonym zakresem."""


class ScheduleError(LqSynthError, ValueError):
    """Niepoprawne parametry harmonogramu szumu."""


class KernelError(LqSynthError, ValueError):
    """Niepoprawne parametry jądra rozmycia."""


class DegradationError(LqSynthError, ValueError):
    """Niepoprawne zakresy lub zdegenerowany wynik degradacji."""


class InsufficientSamplesError(LqSynthError, ValueError):
    """Za mało próbek do estymacji statystyk."""


class ConfigError(LqSynthError, ValueError):
    """Niespójna konfiguracja."""


class CheckpointError(LqSynthError):
    """Uszkodzony lub niekompatybilny checkpoint."""


class ImageDecodeError(LqSynthError):
    """Nie udało się zdekodować obrazu."""


class TrainingDivergedError(LqSynthError):
    """Nieskończona wartość straty podczas treningu."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class StatisticsError(LqSynthError, ValueError):
    """Macierz kowariancji nie jest dodatnio półokreślona."""
