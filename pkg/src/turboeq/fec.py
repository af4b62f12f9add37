"""LDPC coding from parity-check matrices: alist ingestion, systematic encoding,
flooding sum-product decoding, and seeded random interleaving.

Codes are generic parity-check-matrix codes; a few regular codes ship with the
package (see ``builtin_code_names``).  The decoder works on any binary H and
uses the LLR convention L = ln P(1)/P(0) from :mod:`turboeq.softinfo`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

__all__ = [
    "LdpcCode",
    "Interleaver",
    "DecodeResult",
    "load_alist",
    "parse_alist",
    "load_builtin_code",
    "builtin_code_names",
    "encode",
    "bp_decode",
    "interleave",
    "deinterleave",
    "hard_decision",
    "MSG_CLIP",
]

# Check-to-bit message magnitude bound; tanh(MSG_CLIP/2) is still < 1 in float64.
MSG_CLIP = 18.714


def _gf2_rref(H: np.ndarray):
    """Reduced row echelon form over GF(2); returns (rref, pivot column list)."""
    R = (H.copy() % 2).astype(np.uint8)
    m, n = R.shape
    pivots = []
    row = 0
    for col in range(n):
        if row >= m:
            break
        hot = np.flatnonzero(R[row:, col]) + row
        if hot.size == 0:
            continue
        if hot[0] != row:
            R[[row, hot[0]]] = R[[hot[0], row]]
        others = np.flatnonzero(R[:, col])
        others = others[others != row]
        R[others] ^= R[row]
        pivots.append(col)
        row += 1
    return R, pivots


@dataclass
class LdpcCode:
    """A binary linear code described by its parity-check matrix.

    ``systematic_map`` lists the codeword positions that carry information
    bits (the non-pivot columns of H); ``_solver`` maps information bits to
    the pivot positions so that every codeword satisfies H c = 0 (mod 2).
    """

    H: np.ndarray  # (m, n) uint8
    n: int
    k: int
    systematic_map: np.ndarray  # (k,) info-bit positions
    _pivots: np.ndarray = field(repr=False)
    _solver: np.ndarray = field(repr=False)  # (rank, k) uint8
    _graph: dict = field(default=None, repr=False)

    @property
    def rate(self) -> float:
        return self.k / self.n

    def graph(self) -> dict:
        if self._graph is None:
            self._graph = _build_graph(self.H)
        return self._graph


def _code_from_h(H: np.ndarray) -> LdpcCode:
    H = (np.asarray(H) % 2).astype(np.uint8)
    m, n = H.shape
    rref, pivots = _gf2_rref(H)
    rank = len(pivots)
    k = n - rank
    if k <= 0:
        raise ValueError(f"parity-check matrix leaves no information bits (n={n}, rank={rank})")
    pivots = np.asarray(pivots, dtype=np.int64)
    free = np.setdiff1d(np.arange(n), pivots)
    solver = rref[:rank][:, free].astype(np.uint8)  # c[pivots] = solver @ c[free]
    return LdpcCode(H=H, n=n, k=k, systematic_map=free, _pivots=pivots, _solver=solver)


def parse_alist(text: str) -> LdpcCode:
    """Parse the standard alist sparse description of a parity-check matrix.

    Layout: ``n m`` / max column and row degrees / per-column degrees /
    per-row degrees / per-column 1-based row indices / per-row 1-based column
    indices, zero-padded entries allowed.
    """
    tokens = text.split()
    if len(tokens) < 4:
        raise ValueError("alist too short")
    vals = iter(tokens)

    def take(count):
        out = []
        for _ in range(count):
            try:
                out.append(int(next(vals)))
            except StopIteration:
                raise ValueError("alist ended early") from None
        return out

    n, m = take(2)
    if n <= 0 or m <= 0:
        raise ValueError(f"bad alist dimensions n={n} m={m}")
    max_col, max_row = take(2)
    col_deg = take(n)
    row_deg = take(m)
    if max(col_deg) > max_col or max(row_deg) > max_row:
        raise ValueError("alist degree exceeds declared maximum")

    H = np.zeros((m, n), dtype=np.uint8)
    for col in range(n):
        entries = take(max_col)
        rows = [e - 1 for e in entries if e > 0]
        if len(rows) != col_deg[col]:
            raise ValueError(f"column {col} lists {len(rows)} entries but declares degree {col_deg[col]}")
        H[rows, col] = 1
    for row in range(m):
        entries = take(max_row)
        cols = [e - 1 for e in entries if e > 0]
        if len(cols) != row_deg[row]:
            raise ValueError(f"row {row} lists {len(cols)} entries but declares degree {row_deg[row]}")
        if not np.array_equal(np.sort(np.flatnonzero(H[row])), np.sort(cols)):
            raise ValueError(f"row {row} index list inconsistent with column lists")
    return _code_from_h(H)


def load_alist(path) -> LdpcCode:
    """Load a parity-check matrix from an alist file on disk."""
    with open(path, "r", encoding="ascii") as fh:
        return parse_alist(fh.read())


def builtin_code_names() -> list:
    """Names of the alist files shipped with the package (without extension)."""
    pkg = resources.files("turboeq") / "codes"
    return sorted(p.name[:-6] for p in pkg.iterdir() if p.name.endswith(".alist"))


def load_builtin_code(name: str) -> LdpcCode:
    """Load one of the packaged codes, e.g. ``regular_3_6_n256``."""
    res = resources.files("turboeq") / "codes" / f"{name}.alist"
    if not res.is_file():
        raise FileNotFoundError(f"no builtin code named {name!r}; have {builtin_code_names()}")
    return parse_alist(res.read_text(encoding="ascii"))


def encode(info: np.ndarray, code: LdpcCode) -> np.ndarray:
    """Systematically encode k information bits into an n-bit codeword."""
    info = np.asarray(info).ravel().astype(np.uint8)
    if info.size != code.k:
        raise ValueError(f"expected {code.k} information bits, got {info.size}")
    cw = np.zeros(code.n, dtype=np.uint8)
    cw[code.systematic_map] = info
    cw[code._pivots] = (code._solver @ info) % 2
    return cw


def _build_graph(H: np.ndarray) -> dict:
    """Edge arrays for flooding BP, with per-degree check groupings for vectorized updates."""
    chk, bit = np.nonzero(H)
    order = np.lexsort((bit, chk))  # edges grouped by check
    chk, bit = chk[order], bit[order]
    n_edges = chk.size
    row_deg = np.diff(np.searchsorted(chk, np.arange(H.shape[0] + 1)))
    groups = []
    for d in np.unique(row_deg[row_deg > 0]):
        rows = np.flatnonzero(row_deg == d)
        starts = np.searchsorted(chk, rows)
        edge_idx = starts[:, None] + np.arange(d)[None, :]
        groups.append(edge_idx)
    return {
        "chk": chk,
        "bit": bit,
        "n_edges": n_edges,
        "groups": groups,
        "n_chk": H.shape[0],
        "n_bit": H.shape[1],
    }


def _syndrome_ok(graph: dict, hard_bits: np.ndarray) -> bool:
    parity = np.bincount(graph["chk"], weights=hard_bits[graph["bit"]], minlength=graph["n_chk"])
    return not np.any(parity.astype(np.int64) % 2)


@dataclass
class DecodeResult:
    posterior_llrs: np.ndarray
    syndrome_ok: bool
    iterations_used: int


def bp_decode(channel_llrs: np.ndarray, code: LdpcCode, max_iter: int = 20) -> DecodeResult:
    """Flooding sum-product decoding of one codeword.

    The syndrome is checked before any message passing and after every
    iteration; decoding stops as soon as it is satisfied.  Check-to-bit
    messages are clipped to +-MSG_CLIP for numerical safety.
    """
    llr = np.asarray(channel_llrs, dtype=float).ravel()
    if llr.size != code.n:
        raise ValueError(f"expected {code.n} channel LLRs, got {llr.size}")
    g = code.graph()
    hard = hard_decision(llr)
    if _syndrome_ok(g, hard):
        return DecodeResult(posterior_llrs=llr.copy(), syndrome_ok=True, iterations_used=0)

    bit_of = g["bit"]
    chk_msgs = np.zeros(g["n_edges"])  # check -> bit
    posterior = llr.copy()
    it = 0
    for it in range(1, max_iter + 1):
        bit_msgs = posterior[bit_of] - chk_msgs  # bit -> check, leave-one-out
        t = np.tanh(bit_msgs / 2.0)
        neg_t = -t
        for edge_idx in g["groups"]:
            block = neg_t[edge_idx]  # (n_checks_of_degree, d)
            d = block.shape[1]
            prefix = np.ones_like(block)
            suffix = np.ones_like(block)
            np.cumprod(block[:, : d - 1], axis=1, out=prefix[:, 1:])
            np.cumprod(block[:, :0:-1], axis=1, out=suffix[:, -2::-1])
            loo = prefix * suffix
            chk_msgs[edge_idx] = -2.0 * np.arctanh(np.clip(loo, -1.0 + 1e-15, 1.0 - 1e-15))
        np.clip(chk_msgs, -MSG_CLIP, MSG_CLIP, out=chk_msgs)
        sums = np.bincount(bit_of, weights=chk_msgs, minlength=g["n_bit"])
        posterior = llr + sums
        if _syndrome_ok(g, hard_decision(posterior)):
            return DecodeResult(posterior_llrs=posterior, syndrome_ok=True, iterations_used=it)
    return DecodeResult(posterior_llrs=posterior, syndrome_ok=False, iterations_used=it)


@dataclass(frozen=True)
class Interleaver:
    """Seeded random permutation with exact inverse."""

    permutation: np.ndarray
    seed: object = None

    @classmethod
    def random(cls, length: int, seed) -> "Interleaver":
        rng = np.random.default_rng(seed)
        return cls(permutation=rng.permutation(length), seed=seed)

    @classmethod
    def identity(cls, length: int) -> "Interleaver":
        return cls(permutation=np.arange(length))


def interleave(v: np.ndarray, pi: Interleaver) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != pi.permutation.size:
        raise ValueError(f"length {v.shape[-1]} does not match interleaver of size {pi.permutation.size}")
    return v[..., pi.permutation]


def deinterleave(v: np.ndarray, pi: Interleaver) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != pi.permutation.size:
        raise ValueError(f"length {v.shape[-1]} does not match interleaver of size {pi.permutation.size}")
    out = np.empty_like(v)
    out[..., pi.permutation] = v
    return out


def hard_decision(llrs: np.ndarray) -> np.ndarray:
    """1 where the LLR favours bit 1 (L > 0), else 0; ties resolve to 0."""
    return (np.asarray(llrs) > 0).astype(np.uint8)
