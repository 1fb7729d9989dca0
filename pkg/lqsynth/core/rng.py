"""
Rng - Deterministyczny Generator Liczb Losowych
===============================================
Generator licznikowy (Philox) adresowany trójką (seed, stream, counter).
Każde losowanie zużywa dokładnie jedną wartość licznika i przesuwa go jawnie;
brak ukrytego stanu globalnego.
"""

import zlib
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple, TypeVar, Union

import numpy as np

_MASK64 = (1 << 64) - 1

T = TypeVar("T")


def _tag_to_int(tag: Union[int, str]) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    return int(tag) & _MASK64


@dataclass
class Rng:
    """Strumień liczb losowych (seed, stream, counter)."""
    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream = int(self.stream) & _MASK64
        self.counter = int(self.counter) & _MASK64

    def generator(self) -> np.random.Generator:
        """Zwróć generator dla bieżącego licznika i przesuń licznik o 1."""
        bit_gen = np.random.Philox(
            key=self.seed | (self.stream << 64),
            counter=self.counter << 128,
        )
        self.counter = (self.counter + 1) & _MASK64
        return np.random.Generator(bit_gen)

    def child(self, tag: Union[int, str]) -> "Rng":
        """Wyprowadź niezależny strumień potomny (nie zmienia licznika rodzica)."""
        entropy = [self.seed, self.stream, _tag_to_int(tag)]
        stream = int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
        return Rng(self.seed, stream, 0)

    # ==================== Losowania ====================

    def normal(self, shape: Sequence[int], dtype: Any = np.float32) -> np.ndarray:
        """Próbki N(0, 1) (ziggurat na bitach Philox)."""
        return self.generator().standard_normal(tuple(shape), dtype=np.float64).astype(dtype)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """Pojedyncza próbka U[low, high)."""
        return float(self.generator().uniform(low, high))

    def integers(self, lo: int, hi: int, size: Union[int, Tuple[int, ...], None] = None):
        """Liczby całkowite jednostajnie z [lo, hi] (oba końce włącznie)."""
        values = self.generator().integers(lo, hi, size=size, endpoint=True)
        return int(values) if size is None else values

    def bernoulli(self, p: float) -> bool:
        """Rzut monetą z prawdopodobieństwem sukcesu p."""
        return bool(self.generator().random() < p)

    def choice(self, items: Sequence[T]) -> T:
        """Wybierz jednostajnie jeden element."""
        if not items:
            raise ValueError("Pusta sekwencja do wyboru")
        return items[self.integers(0, len(items) - 1)]

    def permutation(self, n: int) -> list:
        """Losowa permutacja range(n)."""
        return [int(i) for i in self.generator().permutation(n)]

    # ==================== Pomocnicze ====================

    def state(self) -> Dict[str, int]:
        """Stan do zapisu w manifestach."""
        return {"seed": self.seed, "stream": self.stream, "counter": self.counter}

    @classmethod
    def from_state(cls, data: Dict[str, int]) -> "Rng":
        return cls(data["seed"], data.get("stream", 0), data.get("counter", 0))


def rand_uniform_int(rng: Rng, lo: int, hi: int) -> int:
    """Liczba całkowita jednostajnie z [lo, hi] (włącznie)."""
    if hi < lo:
        raise ValueError(f"Pusty zakres [{lo}, {hi}]")
    return rng.integers(lo, hi)
