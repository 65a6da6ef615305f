#!/usr/bin/env python3
# test_lsh_core.py - Test hash tables, bucket ids and collision probabilities

import math
import os
import sys
import unittest

import numpy as np

# Add the parent directory to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from socketlsh.errors import DimensionMismatchError, ParameterError
from socketlsh.lsh_core import (
    BUCKET_DTYPE,
    HashTableSet,
    KvCache,
    LshParams,
    bucket_bits,
    bucket_occupancy,
    build_tables,
    collision_probability_mc,
    encode_signs,
    hash_keys,
    hash_query,
    max_bucket_occupancy,
    memory_bits_per_token,
    oracle_collision_probability,
)
from socketlsh.synthetic import gaussian_cache


class TestLshParams(unittest.TestCase):

    def test_rejects_out_of_range_values(self):
        for kwargs in ({"P": 0, "L": 4, "d": 8}, {"P": 17, "L": 4, "d": 8},
                       {"P": 4, "L": 0, "d": 8}, {"P": 4, "L": 4, "d": 0},
                       {"P": 2.5, "L": 4, "d": 8}):
            with self.assertRaises(ParameterError):
                LshParams(**kwargs)

    def test_bucket_count(self):
        self.assertEqual(LshParams(P=8, L=60, d=128).R, 256)
        self.assertEqual(LshParams(P=16, L=1, d=4).R, 65536)


class TestBuildTables(unittest.TestCase):

    def test_same_seed_same_tables(self):
        a = build_tables(LshParams(P=4, L=6, d=16, seed=42))
        b = build_tables(LshParams(P=4, L=6, d=16, seed=42))
        np.testing.assert_array_equal(a.projections, b.projections)

    def test_different_seed_different_tables(self):
        a = build_tables(LshParams(P=4, L=6, d=16, seed=1))
        b = build_tables(LshParams(P=4, L=6, d=16, seed=2))
        self.assertFalse(np.array_equal(a.projections, b.projections))

    def test_table_does_not_depend_on_table_count(self):
        short = build_tables(LshParams(P=4, L=3, d=16, seed=9))
        long = build_tables(LshParams(P=4, L=10, d=16, seed=9))
        np.testing.assert_array_equal(short.projections, long.projections[:3])

    def test_projection_entries_are_standard_normal(self):
        entries = np.concatenate([
            build_tables(LshParams(P=4, L=1, d=64, seed=seed)).projections.ravel()
            for seed in range(10000)
        ])
        n = entries.shape[0]

        self.assertLessEqual(abs(entries.mean()), 3.0 / math.sqrt(n))
        # var of a sample variance of N(0, 1) draws is 2/n
        self.assertLessEqual(abs(entries.var() - 1.0), 3.0 * math.sqrt(2.0 / n))

    def test_projections_are_read_only(self):
        tables = build_tables(LshParams(P=2, L=2, d=4))
        with self.assertRaises(ValueError):
            tables.projections[0, 0, 0] = 1.0


class TestBucketIds(unittest.TestCase):

    def test_lsb_first_encoding(self):
        # bit i set iff projection i is non-negative
        ids = encode_signs(np.array([1.0, -1.0, 1.0]))
        self.assertEqual(int(ids), 0b101)

    def test_zero_counts_as_positive(self):
        self.assertEqual(int(encode_signs(np.array([0.0, -2.0]))), 1)
        self.assertEqual(int(encode_signs(np.array([-0.0, 0.0]))), 3)

    def test_bucket_bits_inverts_encoding(self):
        rng = np.random.default_rng(3)
        projected = rng.standard_normal((50, 7))
        ids = encode_signs(projected)
        np.testing.assert_array_equal(bucket_bits(ids, 7), projected >= 0)

    def test_hash_keys_matches_hash_query(self):
        cache = gaussian_cache(64, 12, seed=5)
        tables = build_tables(LshParams(P=6, L=8, d=12, seed=11))
        assignment = hash_keys(tables, cache)

        self.assertEqual(assignment.bucket_ids.shape, (64, 8))
        self.assertEqual(assignment.bucket_ids.dtype, BUCKET_DTYPE)
        for j in (0, 17, 63):
            np.testing.assert_array_equal(assignment.bucket_ids[j],
                                          hash_query(tables, cache.keys[j]))

    def test_ids_fit_bucket_range(self):
        cache = gaussian_cache(200, 8, seed=1)
        assignment = hash_keys(build_tables(LshParams(P=3, L=5, d=8)), cache)
        self.assertLess(int(assignment.bucket_ids.max()), 8)

    def test_thread_count_does_not_change_ids(self):
        # more keys than one hashing chunk
        cache = gaussian_cache(10000, 8, seed=2)
        tables = build_tables(LshParams(P=8, L=4, d=8, seed=4))
        single = hash_keys(tables, cache, threads=1)
        pooled = hash_keys(tables, cache, threads=4)
        np.testing.assert_array_equal(single.bucket_ids, pooled.bucket_ids)

    def test_all_positive_projections_give_top_bucket(self):
        params = LshParams(P=3, L=1, d=3)
        tables = HashTableSet(params=params, projections=np.eye(3)[None])
        cache = KvCache.from_arrays(np.array([[1.0, 2.0, 3.0]]), np.ones((1, 3)))

        self.assertEqual(int(hash_keys(tables, cache).bucket_ids[0, 0]), 7)

    def test_negated_key_gets_complementary_ids(self):
        P = 8
        keys = np.random.default_rng(6).standard_normal((20, 16))
        cache = KvCache.from_arrays(np.concatenate([keys, -keys]), np.ones((40, 16)))
        ids = hash_keys(build_tables(LshParams(P=P, L=10, d=16, seed=3)), cache).bucket_ids

        np.testing.assert_array_equal(ids[:20] ^ ids[20:], np.full((20, 10), (1 << P) - 1))

    def test_zero_projection_query_gets_top_bucket(self):
        tables = build_tables(LshParams(P=5, L=4, d=8, seed=2))
        np.testing.assert_array_equal(hash_query(tables, np.zeros(8)), np.full(4, 31))

    def test_identical_keys_share_every_bucket(self):
        key = np.random.default_rng(8).standard_normal(12)
        cache = KvCache.from_arrays(np.stack([key, key]), np.ones((2, 12)))
        ids = hash_keys(build_tables(LshParams(P=6, L=9, d=12, seed=5)), cache).bucket_ids
        np.testing.assert_array_equal(ids[0], ids[1])

    def test_permuted_keys_permute_rows(self):
        cache = gaussian_cache(300, 12, seed=4)
        order = np.random.default_rng(4).permutation(300)
        permuted = KvCache.from_arrays(cache.keys[order], cache.values[order])
        tables = build_tables(LshParams(P=7, L=6, d=12, seed=1))

        original = hash_keys(tables, cache).bucket_ids
        shuffled = hash_keys(tables, permuted).bucket_ids

        np.testing.assert_array_equal(shuffled, original[order])

    def test_single_plane_query_buckets_are_balanced(self):
        trials = 10000
        q = np.random.default_rng(13).standard_normal(16)
        q = q / np.linalg.norm(q)
        ids = hash_query(build_tables(LshParams(P=1, L=trials, d=16, seed=13)), q)

        self.assertTrue(set(np.unique(ids).tolist()) <= {0, 1})
        self.assertLessEqual(abs(ids.mean() - 0.5), 3.0 * math.sqrt(0.25 / trials))

    def test_dimension_mismatch(self):
        tables = build_tables(LshParams(P=4, L=2, d=8))
        with self.assertRaises(DimensionMismatchError):
            hash_query(tables, np.ones(9))
        with self.assertRaises(DimensionMismatchError):
            hash_keys(tables, gaussian_cache(10, 7, seed=0))


class TestOccupancy(unittest.TestCase):

    def test_counts_cover_every_key(self):
        cache = gaussian_cache(300, 16, seed=8)
        assignment = hash_keys(build_tables(LshParams(P=4, L=7, d=16, seed=1)), cache)
        counts = bucket_occupancy(assignment)

        self.assertEqual(counts.shape, (7, 16))
        np.testing.assert_array_equal(counts.sum(axis=1), np.full(7, 300))
        self.assertGreaterEqual(max_bucket_occupancy(assignment), math.ceil(300 / 16))

    def test_memory_bits(self):
        self.assertEqual(memory_bits_per_token(LshParams(P=8, L=60, d=128)), 16 * 60 + 32)


class TestCollisionProbability(unittest.TestCase):

    def test_closed_form_limits(self):
        q = np.array([1.0, 2.0, -1.0])
        self.assertAlmostEqual(oracle_collision_probability(q, q, 8), 1.0)
        self.assertAlmostEqual(oracle_collision_probability(q, -q, 1), 0.0)
        self.assertAlmostEqual(oracle_collision_probability([1.0, 0.0], [0.0, 3.0], 1), 0.5)

    def test_kernel_is_power_of_single_plane(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            q, k = rng.standard_normal((2, 10))
            base = oracle_collision_probability(q, k, 1)
            for P in (2, 4, 8):
                self.assertAlmostEqual(oracle_collision_probability(q, k, P), base ** P, places=12)

    def test_monte_carlo_matches_closed_form(self):
        # 50 Gaussian pairs x P in {1, 2, 4, 8} at 1e5 single tables each
        rng = np.random.default_rng(21)
        trials = 100000
        exceedances = 0
        worst = 0.0
        for pair in range(50):
            q, k = rng.standard_normal((2, 8))
            for P in (1, 2, 4, 8):
                expected = oracle_collision_probability(q, k, P)
                estimate = collision_probability_mc(q, k, P, trials, seed=1000 * pair + P)
                sigma = math.sqrt(expected * (1.0 - expected) / trials)
                z = abs(estimate.probability - expected) / sigma
                exceedances += z > 3.0
                worst = max(worst, z)
                self.assertEqual(estimate.trials, trials)

        # 200 comparisons at a 0.27% two-sided 3-sigma rate expect 0.54 exceedances
        self.assertLessEqual(exceedances, 3)
        self.assertLess(worst, 4.5)

    def test_identical_vectors_always_collide(self):
        q = np.random.default_rng(2).standard_normal(10)
        estimate = collision_probability_mc(q, q, 8, 5000, seed=2)
        self.assertEqual(estimate.probability, 1.0)
        self.assertEqual(estimate.standard_error, 0.0)

    def test_orthogonal_pair(self):
        trials = 100000
        estimate = collision_probability_mc([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 4, trials, seed=7)
        sigma = math.sqrt(0.0625 * 0.9375 / trials)
        self.assertLessEqual(abs(estimate.probability - 0.0625), 3 * sigma)

    def test_high_cosine_pair(self):
        trials = 100000
        q = np.array([1.0, 0.0])
        k = np.array([0.9, math.sqrt(1.0 - 0.81)])
        expected = (1.0 - math.acos(0.9) / math.pi) ** 8
        estimate = collision_probability_mc(q, k, 8, trials, seed=8)
        sigma = math.sqrt(expected * (1.0 - expected) / trials)
        self.assertLessEqual(abs(estimate.probability - expected), 3 * sigma)

    def test_rotation_does_not_change_rate(self):
        rng = np.random.default_rng(31)
        q, k = rng.standard_normal((2, 12))
        rotation, _ = np.linalg.qr(rng.standard_normal((12, 12)))

        plain = collision_probability_mc(q, k, 2, 50000, seed=1)
        rotated = collision_probability_mc(rotation @ q, rotation @ k, 2, 50000, seed=2)

        joint = math.hypot(plain.standard_error, rotated.standard_error)
        self.assertLessEqual(abs(plain.probability - rotated.probability), 3 * joint)

    def test_monte_carlo_rejects_bad_input(self):
        with self.assertRaises(ParameterError):
            collision_probability_mc(np.ones(3), np.ones(3), 4, 0, seed=0)
        with self.assertRaises(DimensionMismatchError):
            collision_probability_mc(np.ones(3), np.ones(4), 4, 10, seed=0)


class TestKvCache(unittest.TestCase):

    def test_value_norms_and_default_mask(self):
        cache = KvCache.from_arrays(np.zeros((2, 2)), np.array([[3.0, 4.0], [0.0, 1.0]]))
        np.testing.assert_allclose(cache.value_norms, [5.0, 1.0])
        self.assertTrue(cache.mask.all())
        self.assertEqual((cache.N, cache.d), (2, 2))

    def test_shape_errors(self):
        with self.assertRaises(DimensionMismatchError):
            KvCache.from_arrays(np.zeros((3, 2)), np.zeros((4, 2)))
        with self.assertRaises(DimensionMismatchError):
            KvCache.from_arrays(np.zeros((3, 2)), np.zeros((3, 2)), mask=[1, 0])

    def test_with_mask(self):
        cache = gaussian_cache(5, 3, seed=0).with_mask([1, 0, 1, 0, 1])
        np.testing.assert_array_equal(cache.mask, [True, False, True, False, True])


if __name__ == '__main__':
    unittest.main()
