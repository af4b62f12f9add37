"""Physical link: QAM constellations, pilots, quasi-static MIMO channel, quantized front end.

All randomness is driven by explicit seeds (anything accepted by
``numpy.random.default_rng``), so every operation here is a pure function
and frame generation can be parallelized freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Constellation",
    "QuantizerSpec",
    "Task",
    "TaskDistribution",
    "FrameSignals",
    "build_constellation",
    "modulate",
    "demap_hard",
    "generate_pilots",
    "quantize",
    "apply_channel",
    "transmit_frame",
    "sample_task",
]


@dataclass(frozen=True)
class Constellation:
    """Gray-labeled square M-QAM point set with unit average energy.

    ``points[m]`` is the symbol whose q-bit label is the binary expansion of
    ``m`` (MSB first).  The first q/2 label bits select the real amplitude,
    the last q/2 the imaginary amplitude, each through a reflected Gray code,
    so neighbors along either axis differ in exactly one bit.
    """

    order: int
    bits_per_symbol: int
    points: np.ndarray  # (M,) complex128
    bit_subsets: tuple  # per bit position kappa: (idx where bit=0, idx where bit=1)

    def labels(self) -> np.ndarray:
        """(M, q) array of 0/1 label bits, MSB first."""
        m = np.arange(self.order)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((m[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def _gray_to_binary(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = 1
    while shift < 64:
        nxt = b >> shift
        if not nxt.any():
            break
        b ^= nxt
        shift *= 2
    return b


def build_constellation(M: int) -> Constellation:
    """Build the unit-energy Gray-labeled square M-QAM constellation.

    Supported orders are 4, 16 and 64.  Amplitudes per axis follow the
    reflected-Gray rule with the all-zero word at the most positive level,
    matching (1 - 2b)/sqrt(2) for QPSK.
    """
    if M not in (4, 16, 64):
        raise ValueError(f"unsupported constellation order {M}; need square QAM in {{4, 16, 64}}")
    q = int(np.log2(M))
    q_axis = q // 2
    levels = 1 << q_axis

    # Gray word w -> level index k -> amplitude (levels-1) - 2k
    words = np.arange(levels)
    k = _gray_to_binary(words)
    amps = (levels - 1) - 2 * k  # word 0 maps to the top amplitude

    mean_sq = 2.0 * np.mean(amps.astype(float) ** 2)
    scale = 1.0 / np.sqrt(mean_sq)

    m = np.arange(M)
    re_word = m >> q_axis
    im_word = m & (levels - 1)
    points = (amps[re_word] + 1j * amps[im_word]) * scale

    labels = ((m[:, None] >> np.arange(q - 1, -1, -1)[None, :]) & 1).astype(np.int8)
    subsets = tuple(
        (np.flatnonzero(labels[:, kappa] == 0), np.flatnonzero(labels[:, kappa] == 1))
        for kappa in range(q)
    )
    return Constellation(order=M, bits_per_symbol=q, points=points, bit_subsets=subsets)


def modulate(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Map a bit array (multiple of q long) to constellation symbols, MSB first per block."""
    bits = np.asarray(bits).ravel()
    q = c.bits_per_symbol
    if bits.size % q != 0:
        raise ValueError(f"bit count {bits.size} not divisible by bits/symbol {q}")
    blocks = bits.reshape(-1, q).astype(np.int64)
    idx = blocks @ (1 << np.arange(q - 1, -1, -1))
    return c.points[idx]


def demap_hard(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    """Nearest-point hard demapping back to label bits (inverse of ``modulate`` on clean symbols)."""
    symbols = np.asarray(symbols).ravel()
    d2 = np.abs(symbols[:, None] - c.points[None, :]) ** 2
    idx = np.argmin(d2, axis=1)
    q = c.bits_per_symbol
    return ((idx[:, None] >> np.arange(q - 1, -1, -1)[None, :]) & 1).astype(np.int8).ravel()


@dataclass(frozen=True)
class QuantizerSpec:
    """Clipped uniform mid-rise quantizer acting per real axis."""

    l_min: float = -4.0
    l_max: float = 4.0
    bits: int = 4

    def __post_init__(self):
        if self.l_min >= self.l_max:
            raise ValueError("l_min must be below l_max")
        if self.bits < 1:
            raise ValueError("bit width must be at least 1")

    @property
    def step(self) -> float:
        return (self.l_max - self.l_min) / (1 << self.bits)

    @property
    def levels(self) -> np.ndarray:
        k = np.arange(1 << self.bits)
        return self.l_min + self.step * (k + 0.5)


def quantize(v, spec: QuantizerSpec):
    """Apply the clipped mid-rise quantizer entry-wise.

    Real inputs map to the nearest of the 2^B bin midpoints; values at or
    above l_max land on the top level, values below l_min on the bottom one.
    Complex inputs are quantized separately in real and imaginary parts.
    """
    v = np.asarray(v)
    if np.iscomplexobj(v):
        return quantize(v.real, spec) + 1j * quantize(v.imag, spec)
    step = spec.step
    k = np.floor((v - spec.l_min) / step)
    k = np.clip(k, 0, (1 << spec.bits) - 1)
    out = spec.l_min + step * (k + 0.5)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Task:
    """One communication link: channel matrix, noise variance and quantizer."""

    H: np.ndarray  # (N_r, N_t) complex
    sigma2: float
    quant: QuantizerSpec

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("noise variance must be positive")
        if not np.all(np.isfinite(self.H)):
            raise ValueError("channel matrix must be finite")

    @property
    def n_r(self) -> int:
        return self.H.shape[0]

    @property
    def n_t(self) -> int:
        return self.H.shape[1]


@dataclass
class FrameSignals:
    """Transmit/receive quadruple for one coherence block."""

    pilots: np.ndarray  # (N_t, T_P)
    data: np.ndarray  # (N_t, T)
    received_pilots: np.ndarray  # (N_r, T_P)
    received_data: np.ndarray  # (N_r, T)


def generate_pilots(n_t: int, t_pilot: int, c: Constellation, seed) -> np.ndarray:
    """Draw an (N_t, T_P) pilot matrix i.i.d. uniform over the constellation."""
    if t_pilot < 1:
        raise ValueError("pilot length must be at least 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, c.order, size=(n_t, t_pilot))
    return c.points[idx]


def apply_channel(task: Task, S: np.ndarray, seed) -> np.ndarray:
    """Propagate symbol columns through H and add circular Gaussian noise of variance sigma2."""
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != task.n_t:
        raise ValueError(f"symbol matrix shape {S.shape} incompatible with {task.n_t} transmit antennas")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(task.sigma2 / 2.0)
    noise = scale * (rng.standard_normal((task.n_r, S.shape[1])) + 1j * rng.standard_normal((task.n_r, S.shape[1])))
    return task.H @ S + noise


def transmit_frame(task: Task, pilots: np.ndarray, data: np.ndarray, seed):
    """Send pilots then data through the channel and the quantized front end.

    Returns (Z, Y), both on the quantizer output alphabet per real axis, with
    independent noise on every column.
    """
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    s_pilot, s_data = ss.spawn(2)
    Z = quantize(apply_channel(task, pilots, s_pilot), task.quant)
    Y = quantize(apply_channel(task, data, s_data), task.quant)
    return Z, Y


@dataclass(frozen=True)
class TaskDistribution:
    """Sampling law for tasks: i.i.d. CN(0,1) channel entries, uniform noise variance and bit width."""

    n_t: int = 2
    n_r: int = 2
    sigma2_low: float = 1e-3
    sigma2_high: float = 1.0
    bit_widths: tuple = (2, 3, 4, 10)
    l_min: float = -4.0
    l_max: float = 4.0


def sample_task(dist: TaskDistribution, seed) -> Task:
    """Draw one task from the distribution, deterministically in the seed."""
    if len(dist.bit_widths) == 0:
        raise ValueError("bit-width set must be non-empty")
    rng = np.random.default_rng(seed)
    H = (rng.standard_normal((dist.n_r, dist.n_t)) + 1j * rng.standard_normal((dist.n_r, dist.n_t))) / np.sqrt(2.0)
    sigma2 = rng.uniform(dist.sigma2_low, dist.sigma2_high)
    bits = int(dist.bit_widths[rng.integers(0, len(dist.bit_widths))])
    return Task(H=H, sigma2=float(sigma2), quant=QuantizerSpec(dist.l_min, dist.l_max, bits))
