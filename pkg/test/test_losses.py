#!/usr/bin/env python

import unittest
import math
import numpy as np
from georeg.core import ConfigError
from georeg.core import InvalidInputError
from georeg.config import CircleLossConfig
from georeg.pointmatch import AssignmentMatrix
from georeg.pointmatch import augment_with_dustbin
from georeg.losses import OverlapLabels
from georeg.losses import overlap_aware_circle_loss
from georeg.losses import vanilla_circle_loss
from georeg.losses import point_matching_loss
from georeg.losses import point_matching_loss_from_scores
from georeg.losses import sample_ground_truth_matches
from georeg.losses import mean_point_matching_loss
from georeg.losses import total_loss
from georeg.losses import multilabel_cross_entropy
from georeg.losses import softmax_ce_gradient_demo
from georeg.losses import suppressed_positives
from georeg.losses import central_difference
from georeg.losses import max_relative_error
from georeg.losses import random_circle_instance
from georeg.losses import random_matching_instance
from georeg.losses import run_gradcheck

class TestOverlapLabels(unittest.TestCase):
    def test_positive_negative_anchors(self):
        """
        OverlapLabels: positives at 0.1 or more, negatives at zero
        """
        labels = OverlapLabels([[0.5,0.0,0.05],
                                [0.0,0.0,0.1]])
        self.assertEqual(labels.positive.tolist(),[[True,False,False],
                                                   [False,False,True]])
        self.assertEqual(labels.negative.tolist(),[[False,True,False],
                                                   [True,True,False]])
        self.assertEqual(list(labels.src_anchors),[0,1])
        self.assertEqual(list(labels.dst_anchors),[0,2])
        self.assertEqual(labels.transpose().overlaps.shape,(3,2))

    def test_bad_overlaps(self):
        """
        OverlapLabels: ratios outside [0,1] raise
        """
        self.assertRaises(InvalidInputError,OverlapLabels,[[1.5]])
        self.assertRaises(InvalidInputError,OverlapLabels,[0.5,0.5])

class TestCircleLoss(unittest.TestCase):
    def test_margin_points(self):
        """
        overlap_aware_circle_loss: distances at the margins give log(2)
        """
        H_P = np.array([[0.0,0.0]])
        H_Q = np.array([[0.1,0.0],[1.4,0.0]])
        labels = OverlapLabels([[0.5,0.0]])
        result = overlap_aware_circle_loss(H_P,H_Q,labels)
        # Source anchor gives log(1 + 1*1); the destination anchor
        # has no negatives and contributes zero
        self.assertAlmostEqual(result.loss,0.5*math.log(2.0))
        self.assertTrue(np.allclose(result.grad_src,0.0))
        self.assertTrue(np.allclose(result.grad_dst,0.0))
        self.assertFalse(result.empty)

    def test_no_anchors(self):
        """
        overlap_aware_circle_loss: no anchors gives zero and flags it
        """
        rng = np.random.default_rng(0)
        result = overlap_aware_circle_loss(rng.normal(size=(3,4)),
                                           rng.normal(size=(2,4)),
                                           OverlapLabels(np.zeros((3,2))))
        self.assertEqual(result.loss,0.0)
        self.assertTrue(result.empty)
        self.assertTrue(np.all(result.grad_src == 0.0))
        self.assertTrue(np.all(result.grad_dst == 0.0))

    def test_vanilla_matches_full_overlap(self):
        """
        vanilla_circle_loss: equals the overlap-aware loss when
        every positive has overlap 1
        """
        rng = np.random.default_rng(1)
        for _ in range(10):
            H_P = rng.normal(0.0,0.3,size=(6,8))
            H_Q = rng.normal(0.0,0.3,size=(5,8))
            labels = OverlapLabels(rng.integers(0,2,size=(6,5)))
            a = overlap_aware_circle_loss(H_P,H_Q,labels)
            b = vanilla_circle_loss(H_P,H_Q,labels)
            self.assertAlmostEqual(a.loss,b.loss)
            self.assertTrue(np.allclose(a.grad_src,b.grad_src))

    def test_partial_overlap_differs(self):
        """
        vanilla_circle_loss: differs when a positive has overlap 0.25
        """
        H_P = np.array([[0.0,0.0]])
        H_Q = np.array([[0.5,0.0],[0.7,0.0]])
        labels = OverlapLabels([[0.25,0.0]])
        a = overlap_aware_circle_loss(H_P,H_Q,labels).loss
        b = vanilla_circle_loss(H_P,H_Q,labels).loss
        self.assertTrue(a < b)
        # exponents: 10*0.5*0.4^2 and 10*0.7^2
        self.assertAlmostEqual(a,0.5*math.log1p(math.exp(0.8 + 4.9)))
        self.assertAlmostEqual(b,0.5*math.log1p(math.exp(1.6 + 4.9)))

    def test_shape_errors(self):
        """
        overlap_aware_circle_loss: mismatched shapes raise
        """
        labels = OverlapLabels(np.ones((2,2)))
        self.assertRaises(InvalidInputError,overlap_aware_circle_loss,
                          np.ones((2,3)),np.ones((2,4)),labels)
        self.assertRaises(InvalidInputError,overlap_aware_circle_loss,
                          np.ones((3,3)),np.ones((2,3)),labels)

    def test_gradient(self):
        """
        overlap_aware_circle_loss: gradient agrees with differences
        """
        rng = np.random.default_rng(2)
        H_P,H_Q,labels = random_circle_instance(rng)
        result = overlap_aware_circle_loss(H_P,H_Q,labels)
        numeric = central_difference(
            lambda x: overlap_aware_circle_loss(x,H_Q,labels).loss,H_P)
        self.assertTrue(max_relative_error(result.grad_src,numeric) < 1e-4)

class TestPointMatchingLoss(unittest.TestCase):
    def test_perfect_assignment(self):
        """
        point_matching_loss: z = 1 at referenced cells gives 0
        """
        log_z = np.full((3,3),-5.0)
        log_z[0,1] = 0.0
        log_z[1,2] = 0.0
        log_z[2,0] = 0.0
        result = point_matching_loss(AssignmentMatrix(log_z),[[0,1]],
                                     [1],[0])
        self.assertEqual(result.loss,0.0)
        self.assertEqual(result.floored,0)

    def test_single_match(self):
        """
        point_matching_loss: one match with z = exp(-1) gives 1
        """
        log_z = np.zeros((2,2))
        log_z[0,0] = -1.0
        result = point_matching_loss(log_z,[[0,0]],[],[])
        self.assertAlmostEqual(result.loss,1.0)
        self.assertEqual(result.gradient.tolist(),[[-1.0,0.0],[0.0,0.0]])

    def test_floor(self):
        """
        point_matching_loss: zero entries are floored at 1e-12
        """
        log_z = np.zeros((2,2))
        log_z[0,0] = -np.inf
        result = point_matching_loss(log_z,[[0,0]],[],[])
        self.assertAlmostEqual(result.loss,-math.log(1e-12))
        self.assertEqual(result.floored,1)
        self.assertTrue(np.all(result.gradient == 0.0))

    def test_out_of_bounds(self):
        """
        point_matching_loss: indices outside the assignment raise
        """
        log_z = np.zeros((3,3))
        self.assertRaises(InvalidInputError,point_matching_loss,
                          log_z,[[2,0]],[],[])
        self.assertRaises(InvalidInputError,point_matching_loss,
                          log_z,[],[0],[5])

    def test_from_scores(self):
        """
        point_matching_loss_from_scores: gradient agrees with differences
        """
        rng = np.random.default_rng(3)
        C_bar,M,I,J = random_matching_instance(rng)
        result = point_matching_loss_from_scores(C_bar,100,M,I,J)
        self.assertTrue(result.loss > 0.0)
        numeric = central_difference(
            lambda x: point_matching_loss_from_scores(x,100,M,I,J).loss,
            C_bar)
        self.assertTrue(max_relative_error(result.gradient,numeric) < 1e-4)

class TestTrainingReductions(unittest.TestCase):
    def test_sample_ground_truth_matches(self):
        """
        sample_ground_truth_matches: at most N_g rows, in order
        """
        pairs = np.stack([np.arange(300),np.arange(300)],axis=1)
        rng = np.random.default_rng(4)
        sample = sample_ground_truth_matches(pairs,128,rng)
        self.assertEqual(len(sample),128)
        self.assertTrue(np.all(np.diff(sample[:,0]) > 0))
        self.assertEqual(len(sample_ground_truth_matches(pairs[:5],128,
                                                         rng)),5)
        self.assertRaises(ConfigError,sample_ground_truth_matches,
                          pairs,0,rng)

    def test_mean_and_total(self):
        """
        total_loss: circle loss plus the mean point matching loss
        """
        rng = np.random.default_rng(5)
        terms = [random_matching_instance(rng) for _ in range(3)]
        mean = mean_point_matching_loss(terms,50)
        self.assertTrue(mean > 0.0)
        self.assertEqual(mean_point_matching_loss([],50),0.0)
        H_P,H_Q,labels = random_circle_instance(rng)
        circle = overlap_aware_circle_loss(H_P,H_Q,labels).loss
        self.assertAlmostEqual(total_loss(H_P,H_Q,labels,terms,50),
                               circle + mean)

    def test_uniform_scores(self):
        """
        mean_point_matching_loss: uniform scores on a 1 x 1 patch
        """
        C_bar = augment_with_dustbin(np.zeros((1,1)),0.0)
        loss = mean_point_matching_loss([(C_bar,[[0,0]],[],[])],100)
        self.assertAlmostEqual(loss,math.log(2.0),places=5)

class TestCrossEntropyDemo(unittest.TestCase):
    def test_two_positives(self):
        """
        softmax_ce_gradient_demo: z = 0.6 with two positives gives 0.2
        """
        y = np.log([0.6,0.3,0.1])
        d = softmax_ce_gradient_demo(y,[1,1,0])
        self.assertTrue(np.allclose(d,[0.2,-0.4,0.2]))
        self.assertEqual(list(suppressed_positives(y,[1,1,0])),[0])

    def test_single_positive(self):
        """
        softmax_ce_gradient_demo: a single positive is never pushed down
        """
        rng = np.random.default_rng(6)
        for _ in range(50):
            y = rng.normal(0.0,3.0,size=8)
            g = np.zeros(8)
            g[rng.integers(0,8)] = 1.0
            d = softmax_ce_gradient_demo(y,g)
            self.assertTrue(d[g > 0][0] <= 0.0)
            self.assertEqual(len(suppressed_positives(y,g)),0)

    def test_cross_entropy(self):
        """
        multilabel_cross_entropy: uniform scores give sum(g)*log(n)
        """
        self.assertAlmostEqual(multilabel_cross_entropy(np.zeros(4),
                                                        [1,1,0,0]),
                               2.0*math.log(4.0))

    def test_errors(self):
        """
        softmax_ce_gradient_demo: shape mismatch or no positive raises
        """
        self.assertRaises(InvalidInputError,softmax_ce_gradient_demo,
                          [0.0,1.0],[1,0,0])
        self.assertRaises(InvalidInputError,softmax_ce_gradient_demo,
                          [0.0,1.0],[0,0])

class TestGradcheck(unittest.TestCase):
    def test_central_difference(self):
        """
        central_difference: exact on a cubic
        """
        grad = central_difference(lambda x: float(np.sum(x**3)),
                                  np.array([1.0,-2.0]))
        self.assertTrue(np.allclose(grad,[3.0,12.0]))

    def test_max_relative_error(self):
        """
        max_relative_error: tiny analytic entries are excluded
        """
        self.assertAlmostEqual(max_relative_error([1.0,1e-9],[1.1,1.0]),
                               0.1/1.1)
        self.assertEqual(max_relative_error([0.0],[1.0]),0.0)

    def test_random_circle_instance_avoids_margins(self):
        """
        random_circle_instance: distances stay away from the margins
        """
        cfg = CircleLossConfig()
        H_P,H_Q,labels = random_circle_instance(np.random.default_rng(7))
        D = np.linalg.norm(H_P[:,None,:] - H_Q[None,:,:],axis=2)
        self.assertTrue(np.min(np.abs(D - cfg.delta_p)) > 1e-3)
        self.assertTrue(np.min(np.abs(D - cfg.delta_n)) > 1e-3)
        self.assertEqual(labels.overlaps.shape,(8,8))

    def test_run_gradcheck(self):
        """
        run_gradcheck: all losses pass
        """
        results = run_gradcheck(seed=0,trials=3)
        self.assertEqual([r.name for r in results],
                         ['overlap_aware_circle_loss',
                          'vanilla_circle_loss',
                          'point_matching_loss',
                          'cross_entropy'])
        for r in results:
            self.assertTrue(r.passed,"%s: %g" % (r.name,r.max_error))
