#!/usr/bin/env python

import unittest
import math
import numpy as np
from georeg.core import InvalidInputError
from georeg.core import NumericalError
from georeg.core import ConfigError
from georeg.superpoints import normalize_rows_to_sphere
from georeg.superpoints import gaussian_correlation
from georeg.superpoints import dual_normalize
from georeg.superpoints import select_topk_correspondences
from georeg.superpoints import match_superpoints

class TestNormalizeRowsToSphere(unittest.TestCase):
    def test_three_four_five(self):
        """
        normalize_rows_to_sphere: (3,4) becomes (0.6,0.8)
        """
        self.assertTrue(np.allclose(normalize_rows_to_sphere([[3.0,4.0],
                                                              [1.0,0.0]]),
                                    [[0.6,0.8],[1.0,0.0]]))

    def test_unit_norms(self):
        """
        normalize_rows_to_sphere: all rows have unit norm
        """
        H = np.random.default_rng(0).normal(size=(30,17))
        norms = np.linalg.norm(normalize_rows_to_sphere(H),axis=1)
        self.assertTrue(np.max(np.abs(norms - 1.0)) < 1e-7)

    def test_zero_row(self):
        """
        normalize_rows_to_sphere: zero row raises naming the row
        """
        with self.assertRaises(InvalidInputError) as cm:
            normalize_rows_to_sphere([[1.0,0.0],[0.0,0.0]])
        self.assertTrue("row 1" in str(cm.exception))

class TestGaussianCorrelation(unittest.TestCase):
    def test_special_values(self):
        """
        gaussian_correlation: identical, orthogonal, antipodal rows
        """
        H_P = np.array([[1.0,0.0]])
        H_Q = np.array([[1.0,0.0],[0.0,1.0],[-1.0,0.0]])
        S = gaussian_correlation(H_P,H_Q)
        self.assertTrue(np.allclose(S,[[1.0,math.exp(-2.0),
                                        math.exp(-4.0)]]))

    def test_range(self):
        """
        gaussian_correlation: entries in [exp(-4),1]
        """
        rng = np.random.default_rng(1)
        S = gaussian_correlation(
            normalize_rows_to_sphere(rng.normal(size=(20,8))),
            normalize_rows_to_sphere(rng.normal(size=(15,8))))
        self.assertTrue(np.all(S >= math.exp(-4.0)))
        self.assertTrue(np.all(S <= 1.0))

    def test_errors(self):
        """
        gaussian_correlation: width mismatch or non-unit rows raise
        """
        self.assertRaises(InvalidInputError,gaussian_correlation,
                          np.eye(2),np.eye(3))
        self.assertRaises(InvalidInputError,gaussian_correlation,
                          2.0*np.eye(2),np.eye(2))

class TestDualNormalize(unittest.TestCase):
    def test_examples(self):
        """
        dual_normalize: hand evaluated examples
        """
        self.assertTrue(np.allclose(dual_normalize(np.eye(2)),np.eye(2)))
        self.assertTrue(np.allclose(dual_normalize(2.0*np.ones((2,2))),
                                    0.25))
        self.assertTrue(np.allclose(dual_normalize([[4.0,1.0],[1.0,1.0]]),
                                    [[0.64,0.1],[0.1,0.25]]))

    def test_zero_sum(self):
        """
        dual_normalize: zero row sum raises NumericalError
        """
        self.assertRaises(NumericalError,dual_normalize,
                          [[1.0,0.0],[0.0,0.0]])

    def test_mutual_maximum_kept(self):
        """
        dual_normalize: a strict row and column maximum stays row maximum
        """
        rng = np.random.default_rng(2)
        for _ in range(100):
            S = rng.uniform(0.01,1.0,size=(6,5))
            S_bar = dual_normalize(S)
            for i in range(6):
                j = int(np.argmax(S[i]))
                if S[i,j] > np.max(np.delete(S[i],j)) and \
                   S[i,j] > np.max(np.delete(S[:,j],i)):
                    self.assertEqual(int(np.argmax(S_bar[i])),j)

class TestSelectTopkCorrespondences(unittest.TestCase):
    def test_single_largest(self):
        """
        select_topk_correspondences: N_c = 1 gives the largest entry
        """
        c = select_topk_correspondences([[0.1,0.7],[0.3,0.2]],1)
        self.assertEqual(c.to_list(),[[0,1,0.7]])

    def test_all_entries(self):
        """
        select_topk_correspondences: large N_c returns everything
        """
        c = select_topk_correspondences([[0.1,0.7],[0.3,0.2]],10)
        self.assertEqual(len(c),4)
        self.assertEqual([(i,j) for i,j,_ in c],
                         [(0,1),(1,0),(1,1),(0,0)])

    def test_ties(self):
        """
        select_topk_correspondences: ties ordered by (i,j)
        """
        c = select_topk_correspondences(np.ones((2,2)),3)
        self.assertEqual([(i,j) for i,j,_ in c],[(0,0),(0,1),(1,0)])

    def test_matches_sort_oracle(self):
        """
        select_topk_correspondences: matches sorting all entries
        """
        for seed in range(50):
            S = np.random.default_rng(seed).uniform(size=(50,40))
            c = select_topk_correspondences(S,256)
            entries = sorted([(-S[i,j],i,j) for i in range(50)
                              for j in range(40)])[:256]
            self.assertEqual([(i,j) for i,j,_ in c],
                             [(i,j) for _,i,j in entries])
            self.assertTrue(np.all(np.diff(c.scores) <= 0.0))

    def test_bad_count(self):
        """
        select_topk_correspondences: N_c < 1 raises
        """
        self.assertRaises(ConfigError,select_topk_correspondences,
                          np.ones((2,2)),0)

class TestMatchSuperpoints(unittest.TestCase):
    def test_identical_features(self):
        """
        match_superpoints: identical distinct features match diagonally
        """
        H = np.random.default_rng(3).normal(size=(10,32))
        c = match_superpoints(H,3.0*H,10)
        self.assertEqual(sorted([(i,j) for i,j,_ in c]),
                         [(i,i) for i in range(10)])

    def test_without_dual_normalization(self):
        """
        match_superpoints: plain correlation scores when disabled
        """
        H = np.random.default_rng(4).normal(size=(5,8))
        c = match_superpoints(H,H,1,dual_normalization=False)
        self.assertAlmostEqual(c.scores[0],1.0)
