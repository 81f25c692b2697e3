import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bikeqnet.markov_core import (
    BlockGenerator,
    NotIrreducibleError,
    censored_corner,
    censored_level0,
    dump_block_generator,
    dump_rg_factors,
    reconstruct,
    rg_factorize,
    stationary_vector,
)
from bikeqnet.region_chain import build_region_generator

from conftest import censor_dense, dense_stationary, random_block_generator, two_region_config


def two_level_scalar():
    return BlockGenerator(
        [np.array([[-1.0]]), np.array([[-2.0]])],
        [np.array([[1.0]])],
        np.array([[2.0]]),
    )


class TestCensoring:
    def test_level0_formula_at_two_levels(self):
        gen = two_level_scalar()
        psi0 = censored_level0(gen)
        # Q00 + Q01 (-Q11)^-1 Q10 with the corner playing Q10
        assert psi0 == pytest.approx(-1.0 + 1.0 * 0.5 * 2.0)

    def test_corner_range_empty_at_two_levels(self):
        with pytest.raises(ValueError):
            censored_corner(two_level_scalar(), 1)

    def test_corner_matches_dense_schur_oracle(self, rng):
        for _ in range(10):
            gen = random_block_generator(rng, max_levels=4, max_dim=4)
            L = gen.num_levels - 1
            if L < 2:
                continue
            full = gen.assemble()
            dims = gen.level_dims
            for k in range(1, L):
                censored = censor_dense(full, dims, k)
                block = censored[sum(dims[:k]):sum(dims[:k + 1]), :dims[0]]
                np.testing.assert_allclose(
                    censored_corner(gen, k), block, atol=1e-10
                )

    def test_region_corner_is_two_term_product(self):
        cfg = two_region_config(K=3, M=2, Z=2, beta=(1.0, 0.0))
        gen = build_region_generator(cfg, 1, 0.7)
        direct = gen.super_[1] @ np.linalg.solve(-gen.diag[2], gen.corner)
        np.testing.assert_allclose(censored_corner(gen, 1), direct, atol=1e-12)

    def test_level0_is_conservative(self, rng):
        for _ in range(20):
            gen = random_block_generator(rng)
            psi0 = censored_level0(gen)
            np.testing.assert_allclose(psi0.sum(axis=1), 0.0, atol=1e-12)
            off = psi0 - np.diag(np.diag(psi0))
            assert off.min() >= -1e-12

    def test_level0_matches_dense_schur_oracle(self):
        cfg = two_region_config(K=3, M=2, Z=2, beta=(1.0, 0.0))
        gen = build_region_generator(cfg, 1, 0.7)
        oracle = censor_dense(gen.assemble(), gen.level_dims, 0)
        np.testing.assert_allclose(censored_level0(gen), oracle, atol=1e-12)


class TestFactorization:
    def test_two_level_hand_values(self):
        factors = rg_factorize(two_level_scalar())
        assert factors.psi[1] == pytest.approx(-2.0)
        assert factors.r_up[0] == pytest.approx(0.5)
        assert factors.g_low[0] == pytest.approx(1.0)
        assert factors.psi[0] == pytest.approx(0.0)  # conservative 1x1

    def test_zero_super_blocks_rejected(self):
        gen = BlockGenerator(
            [np.array([[-1.0, 1.0], [1.0, -1.0]]), np.array([[0.0]])],
            [np.zeros((2, 1))],
            np.zeros((1, 2)),
        )
        with pytest.raises(NotIrreducibleError):
            rg_factorize(gen)

    def test_region_generator_reconstruction(self):
        cfg = two_region_config(K=4, M=2, Z=2, beta=(1.0, 0.0))
        gen = build_region_generator(cfg, 1, 0.9)
        factors = rg_factorize(gen)
        err = np.abs(reconstruct(factors) - gen.assemble()).max()
        assert err < 1e-10

    def test_high_order_r_and_g_blocks_vanish(self, rng):
        # The censored blocks above the first superdiagonal and left of the
        # first column are exactly zero, so R_{i,j} (j >= i+2) and G_{i,j}
        # (1 <= j <= i-1) vanish: verified on the dense censored matrices.
        gen = random_block_generator(rng, max_levels=4, max_dim=3)
        L = gen.num_levels - 1
        if L < 2:
            gen = random_block_generator(rng, max_levels=4, max_dim=3)
        full = gen.assemble()
        dims = gen.level_dims
        offsets = np.concatenate(([0], np.cumsum(dims)))
        for k in range(1, L):
            censored = censor_dense(full, dims, k)
            for j in range(1, k):
                block = censored[offsets[k]:offsets[k + 1], offsets[j]:offsets[j + 1]]
                np.testing.assert_allclose(block, 0.0, atol=1e-12)
            for i in range(0, k - 1):
                block = censored[offsets[i]:offsets[i + 1], offsets[k]:offsets[k + 1]]
                np.testing.assert_allclose(block, 0.0, atol=1e-12)


class TestStationary:
    def test_two_state_chain(self):
        pi = stationary_vector(rg_factorize(two_level_scalar()))
        assert pi[0][0] == pytest.approx(2.0 / 3.0)
        assert pi[1][0] == pytest.approx(1.0 / 3.0)

    def test_stationarity_definition(self, rng):
        for _ in range(10):
            gen = random_block_generator(rng)
            pi = np.concatenate(stationary_vector(rg_factorize(gen)))
            np.testing.assert_allclose(pi @ gen.assemble(), 0.0, atol=1e-10)

    def test_region_chain_matches_dense_null_space(self):
        cfg = two_region_config(K=4, M=2, Z=2, beta=(1.0, 0.0))
        gen = build_region_generator(cfg, 1, 1.3)
        pi = np.concatenate(stationary_vector(rg_factorize(gen)))
        np.testing.assert_allclose(pi, dense_stationary(gen.assemble()), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_factorization_agrees_with_dense_solve(seed):
    gen = random_block_generator(np.random.default_rng(seed))
    factors = rg_factorize(gen)
    assert np.abs(reconstruct(factors) - gen.assemble()).max() < 1e-10
    pi = np.concatenate(stationary_vector(factors))
    assert np.abs(pi - dense_stationary(gen.assemble())).max() < 1e-9
    assert pi.min() >= 0.0


def test_debug_dumps_round_numbers(rng):
    gen = random_block_generator(rng, max_levels=2, max_dim=2)
    buf = io.StringIO()
    dump_block_generator(gen, buf)
    text = buf.getvalue()
    assert text.startswith("%%MatrixMarket-style block generator")
    assert "%block corner" in text
    buf = io.StringIO()
    dump_rg_factors(rg_factorize(gen), buf)
    assert "%block psi0" in buf.getvalue()
