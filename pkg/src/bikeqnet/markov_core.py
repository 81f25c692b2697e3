"""Level-structured CTMC generators and their UL-type RG-factorization.

The generators handled here have a block-bidiagonal layout with a single
corner block closing the cycle::

    Q = | D0  S0            |
        |     D1  S1        |
        |         ..  ..    |
        |             .. S_{L-1} |
        | C            D_L  |

Levels move up one at a time through the super-diagonal blocks and reset to
level 0 through the corner (a batch departure).  Censoring the chain to
levels <= k therefore only creates fill-in in the first block column, which
keeps the factorization cheap: the diagonal factors above level 0 are the
original diagonal blocks, and the censored level-0 generator absorbs the
whole cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularBlockError(RuntimeError):
    """A diagonal block that must be invertible is numerically singular."""

    def __init__(self, level: int):
        self.level = level
        super().__init__(
            f"diagonal block at level {level} is singular; the generator does not "
            "leak probability out of that level and cannot be censored"
        )


class NotIrreducibleError(RuntimeError):
    """The block-sparsity digraph of the generator is not strongly connected."""


class SingularChainError(RuntimeError):
    """The level-0 censored chain has no unique stationary vector."""


@dataclass
class BlockGenerator:
    """A conservative generator stored as diagonal, super and corner blocks.

    ``diag[k]`` is the square block on level k, ``super_[k]`` maps level k
    to level k+1, and ``corner`` maps the top level back to level 0.
    """

    diag: list[np.ndarray]
    super_: list[np.ndarray]
    corner: np.ndarray

    @property
    def num_levels(self) -> int:
        return len(self.diag)

    @property
    def level_dims(self) -> tuple[int, ...]:
        return tuple(block.shape[0] for block in self.diag)

    def assemble(self) -> np.ndarray:
        """Dense matrix with the blocks in place."""
        dims = self.level_dims
        offsets = np.concatenate(([0], np.cumsum(dims)))
        n = offsets[-1]
        full = np.zeros((n, n))
        for k, block in enumerate(self.diag):
            full[offsets[k]:offsets[k + 1], offsets[k]:offsets[k + 1]] = block
        for k, block in enumerate(self.super_):
            full[offsets[k]:offsets[k + 1], offsets[k + 1]:offsets[k + 2]] = block
        top = self.num_levels - 1
        full[offsets[top]:offsets[top + 1], 0:offsets[1]] = self.corner
        return full

    def check_valid(self, tol: float = 1e-9) -> list[str]:
        """Structural problems with the generator, empty if none."""
        problems = []
        L = self.num_levels - 1
        if len(self.super_) != L:
            problems.append(f"expected {L} super blocks, got {len(self.super_)}")
            return problems
        dims = self.level_dims
        for k in range(L):
            if self.super_[k].shape != (dims[k], dims[k + 1]):
                problems.append(f"super block {k} has shape {self.super_[k].shape}")
        if self.corner.shape != (dims[L], dims[0]):
            problems.append(f"corner block has shape {self.corner.shape}")
        if problems:
            return problems
        full = self.assemble()
        off = full - np.diag(np.diag(full))
        if off.min() < -tol:
            problems.append("negative off-diagonal entry")
        if np.diag(full).max() > tol:
            problems.append("positive diagonal entry")
        row_err = np.abs(full.sum(axis=1)).max()
        if row_err > tol:
            problems.append(f"row sums deviate from zero by {row_err:.3e}")
        return problems

    def check_block_irreducible(self) -> None:
        """Require the level cycle 0 -> 1 -> ... -> L -> 0 to be present."""
        if self.num_levels == 1:
            return
        for k, block in enumerate(self.super_):
            if not np.any(block):
                raise NotIrreducibleError(
                    f"no transitions from level {k} to level {k + 1}; the level "
                    "cycle is broken and the chain is not irreducible"
                )
        if not np.any(self.corner):
            raise NotIrreducibleError(
                "corner block is zero; the top level cannot return to level 0"
            )


@dataclass
class RGFactors:
    """UL-type factorization Q = (I - R_U) Psi_D (I - G_L).

    ``psi[k]`` is the level-k diagonal factor (the censored level-0
    generator for k = 0, the original diagonal block otherwise), ``r_up[k]``
    maps level k to k+1 and ``g_low[k-1]`` maps level k down to level 0.
    """

    psi: list[np.ndarray]
    r_up: list[np.ndarray]
    g_low: list[np.ndarray]

    @property
    def num_levels(self) -> int:
        return len(self.psi)

    @property
    def level_dims(self) -> tuple[int, ...]:
        return tuple(block.shape[0] for block in self.psi)


def _solve_neg(block: np.ndarray, rhs: np.ndarray, level: int) -> np.ndarray:
    """(-block)^{-1} @ rhs via a pivoted LU solve; never forms the inverse."""
    try:
        return np.linalg.solve(-block, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularBlockError(level) from exc


def censored_corner(gen: BlockGenerator, k: int) -> np.ndarray:
    """Corner block of the chain censored to levels <= k.

    Eliminating levels above k funnels the corner through every removed
    level: the result is S_k (-D_{k+1})^{-1} S_{k+1} ... (-D_L)^{-1} C.
    Valid for 1 <= k <= L-1.
    """
    L = gen.num_levels - 1
    if not 1 <= k <= L - 1:
        raise ValueError(f"censored corner defined for 1 <= k <= {L - 1}, got {k}")
    x = gen.corner
    for level in range(L - 1, k - 1, -1):
        x = gen.super_[level] @ _solve_neg(gen.diag[level + 1], x, level + 1)
    return x


def censored_level0(gen: BlockGenerator) -> np.ndarray:
    """Generator of the chain censored to level 0 (a conservative matrix)."""
    L = gen.num_levels - 1
    if L == 0:
        return gen.diag[0].copy()
    inner = gen.corner if L == 1 else censored_corner(gen, 1)
    return gen.diag[0] + gen.super_[0] @ _solve_neg(gen.diag[1], inner, 1)


def rg_factorize(gen: BlockGenerator) -> RGFactors:
    """UL-type RG-factorization of a block-bidiagonal-plus-corner generator.

    The returned factors satisfy (I - R_U) Psi_D (I - G_L) == Q, with R
    nonzero only on the first super-diagonal and G nonzero only in the
    first block column (the structural sparsity of this layout).
    """
    gen.check_block_irreducible()
    L = gen.num_levels - 1
    psi = [censored_level0(gen)] + [gen.diag[k].copy() for k in range(1, L + 1)]
    r_up = []
    for k in range(L):
        # R_{k,k+1} = S_k (-D_{k+1})^{-1}, computed as a transposed solve.
        try:
            r = np.linalg.solve(-gen.diag[k + 1].T, gen.super_[k].T).T
        except np.linalg.LinAlgError as exc:
            raise SingularBlockError(k + 1) from exc
        r_up.append(r)
    g_low = []
    for k in range(1, L + 1):
        corner_k = gen.corner if k == L else censored_corner(gen, k)
        g_low.append(_solve_neg(gen.diag[k], corner_k, k))
    return RGFactors(psi, r_up, g_low)


def reconstruct(factors: RGFactors) -> np.ndarray:
    """Dense (I - R_U) Psi_D (I - G_L); used to verify a factorization."""
    dims = factors.level_dims
    offsets = np.concatenate(([0], np.cumsum(dims)))
    n = offsets[-1]
    i_ru = np.eye(n)
    for k, r in enumerate(factors.r_up):
        i_ru[offsets[k]:offsets[k + 1], offsets[k + 1]:offsets[k + 2]] = -r
    psi_d = np.zeros((n, n))
    for k, block in enumerate(factors.psi):
        psi_d[offsets[k]:offsets[k + 1], offsets[k]:offsets[k + 1]] = block
    i_gl = np.eye(n)
    for k, g in enumerate(factors.g_low, start=1):
        i_gl[offsets[k]:offsets[k + 1], 0:offsets[1]] = -g
    return i_ru @ psi_d @ i_gl


def stationary_of_conservative(gen0: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Stationary probability vector x of a conservative generator.

    Solves x @ gen0 = 0 with x summing to one by replacing the first
    balance equation with the normalization.
    """
    n = gen0.shape[0]
    row_err = np.abs(gen0.sum(axis=1)).max()
    if row_err > tol:
        raise SingularChainError(
            f"level-0 censored generator is not conservative (row-sum error {row_err:.3e})"
        )
    system = gen0.T.copy()
    system[0, :] = 1.0
    rhs = np.zeros(n)
    rhs[0] = 1.0
    try:
        x = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularChainError("level-0 censored chain not irreducible") from exc
    residual = np.abs(x @ gen0).max()
    if not np.isfinite(x).all() or residual > max(1e-6, tol * np.abs(gen0).max()):
        raise SingularChainError(
            f"level-0 censored chain not irreducible (residual {residual:.3e})"
        )
    return _clamp_probabilities(x)


def _clamp_probabilities(x: np.ndarray) -> np.ndarray:
    """Zero out floating-point noise in [-1e-12, 0) and renormalize."""
    if x.min() < -1e-12:
        raise SingularChainError(
            f"stationary solve produced a negative entry {x.min():.3e}"
        )
    x = np.where(x < 0, 0.0, x)
    return x / x.sum()


def stationary_vector(factors: RGFactors) -> list[np.ndarray]:
    """Per-level stationary probability vectors from the factorization.

    The level-0 slice is proportional to the stationary vector of the
    censored level-0 chain; each higher level follows by one multiplication
    with the R factor below it.  The full vector is normalized to sum to 1.
    """
    x0 = stationary_of_conservative(factors.psi[0])
    levels = [x0]
    for r in factors.r_up:
        levels.append(levels[-1] @ r)
    total = sum(vec.sum() for vec in levels)
    out = []
    for vec in levels:
        vec = vec / total
        if vec.min() < -1e-12:
            raise SingularChainError(
                f"stationary recursion produced a negative entry {vec.min():.3e}"
            )
        out.append(np.where(vec < 0, 0.0, vec))
    total = sum(vec.sum() for vec in out)
    return [vec / total for vec in out]


# ---------------------------------------------------------------------------
# Debug dumps (coordinate text format, matrix-market style)
# ---------------------------------------------------------------------------

def _dump_block(fh, name: str, block: np.ndarray) -> None:
    nz = np.argwhere(block != 0.0)
    fh.write(f"%block {name} {block.shape[0]} {block.shape[1]} {len(nz)}\n")
    for i, j in nz:
        fh.write(f"{i + 1} {j + 1} {block[i, j]:.17g}\n")


def dump_block_generator(gen: BlockGenerator, fh) -> None:
    """Write a generator to an open text file for offline inspection."""
    fh.write("%%MatrixMarket-style block generator\n")
    fh.write(f"%levels {gen.num_levels} dims {' '.join(map(str, gen.level_dims))}\n")
    for k, block in enumerate(gen.diag):
        _dump_block(fh, f"diag{k}", block)
    for k, block in enumerate(gen.super_):
        _dump_block(fh, f"super{k}", block)
    _dump_block(fh, "corner", gen.corner)


def dump_rg_factors(factors: RGFactors, fh) -> None:
    """Write RG factors to an open text file for offline inspection."""
    fh.write("%%MatrixMarket-style RG factors\n")
    fh.write(f"%levels {factors.num_levels} dims {' '.join(map(str, factors.level_dims))}\n")
    for k, block in enumerate(factors.psi):
        _dump_block(fh, f"psi{k}", block)
    for k, block in enumerate(factors.r_up):
        _dump_block(fh, f"r{k}.{k + 1}", block)
    for k, block in enumerate(factors.g_low, start=1):
        _dump_block(fh, f"g{k}.0", block)
