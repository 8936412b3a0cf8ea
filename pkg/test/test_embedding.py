#!/usr/bin/env python

import unittest
import math
import numpy as np
from georeg.core import ConfigError
from georeg.config import EmbeddingConfig
from georeg.geometry import PointCloud
from georeg.geometry import random_transform
from georeg.embedding import sinusoidal_embed
from georeg.embedding import sinusoidal_embedding
from georeg.embedding import pairwise_distance_embedding
from georeg.embedding import nearest_neighbours
from georeg.embedding import triplet_angles
from georeg.embedding import triplet_angular_embedding
from georeg.embedding import geometric_structure_embedding

def random_cloud(seed,n=16):
    return PointCloud(np.random.default_rng(seed).uniform(-1.0,1.0,
                                                          size=(n,3)))

def random_projections(seed,d_t):
    rng = np.random.default_rng(seed)
    scale = 1.0/math.sqrt(d_t)
    return (rng.uniform(-scale,scale,size=(d_t,d_t)),
            rng.uniform(-scale,scale,size=(d_t,d_t)))

class TestSinusoidalEmbed(unittest.TestCase):
    def test_zero_value(self):
        """
        sinusoidal_embed: zero encodes as alternating 0 and 1
        """
        self.assertTrue(np.allclose(sinusoidal_embed(0.0,0.3,4),
                                    [0.0,1.0,0.0,1.0]))

    def test_unit_argument(self):
        """
        sinusoidal_embed: value equal to temperature gives sin(1),cos(1)
        """
        self.assertTrue(np.allclose(sinusoidal_embed(0.2,0.2,2),
                                    [0.84147098,0.54030231]))
        e = sinusoidal_embed(0.2,0.2,4)
        self.assertTrue(np.allclose(e[2:],[math.sin(0.01),
                                           math.cos(0.01)]))
        self.assertAlmostEqual(e[2],0.0100,places=4)

    def test_bounded(self):
        """
        sinusoidal_embedding: all entries in [-1,1]
        """
        values = np.random.default_rng(0).uniform(-50.0,50.0,size=(7,5))
        e = sinusoidal_embedding(values,0.2,16)
        self.assertEqual(e.shape,(7,5,16))
        self.assertTrue(np.all(np.abs(e) <= 1.0))

    def test_bad_width_and_temperature(self):
        """
        sinusoidal_embed: odd width or bad temperature raises
        """
        self.assertRaises(ConfigError,sinusoidal_embed,1.0,0.2,5)
        self.assertRaises(ConfigError,sinusoidal_embed,1.0,0.0,4)

class TestPairwiseDistanceEmbedding(unittest.TestCase):
    def test_two_points(self):
        """
        pairwise_distance_embedding: entries encode the distances
        """
        cfg = EmbeddingConfig(d_t=8)
        cloud = PointCloud([(0.0,0.0,0.0),(0.2,0.0,0.0)])
        e = pairwise_distance_embedding(cloud,cfg)
        self.assertEqual(e.shape,(2,2,8))
        self.assertTrue(np.allclose(e[0,1],sinusoidal_embed(0.2,0.2,8)))
        self.assertTrue(np.allclose(e[0,0],sinusoidal_embed(0.0,0.2,8)))
        self.assertAlmostEqual(e[0,1,0],math.sin(1.0))

    def test_symmetric(self):
        """
        pairwise_distance_embedding: symmetric in (i,j)
        """
        e = pairwise_distance_embedding(random_cloud(1),
                                        EmbeddingConfig(d_t=16))
        self.assertTrue(np.allclose(e,e.transpose(1,0,2)))

class TestTripletAngles(unittest.TestCase):
    def test_perpendicular(self):
        """
        triplet_angles: perpendicular vectors give pi/2
        """
        points = np.array([(0.0,0.0,0.0),(1.0,0.0,0.0),
                           (0.0,1.5,0.0),(0.0,0.0,3.0)])
        angles,neighbours = triplet_angles(points,1)
        self.assertEqual(int(neighbours[0,0]),1)
        self.assertAlmostEqual(angles[0,2,0],math.pi/2.0)
        self.assertAlmostEqual(angles[0,3,0],math.pi/2.0)
        self.assertEqual(angles[0,0,0],0.0)

    def test_collinear(self):
        """
        triplet_angles: same ray gives 0, opposite ray gives pi
        """
        points = np.array([(0.0,0.0,0.0),(1.0,0.0,0.0),
                           (2.0,0.0,0.0),(-3.0,0.0,0.0)])
        angles,_ = triplet_angles(points,1)
        self.assertAlmostEqual(angles[0,2,0],0.0)
        self.assertAlmostEqual(angles[0,3,0],math.pi)

    def test_nearest_neighbours(self):
        """
        nearest_neighbours: excludes the point itself, ties by index
        """
        points = np.array([(0.0,0.0,0.0),(1.0,0.0,0.0),
                           (-1.0,0.0,0.0),(0.0,2.0,0.0)])
        neighbours = nearest_neighbours(points,2)
        self.assertEqual(list(neighbours[0]),[1,2])
        self.assertFalse(np.any(neighbours == np.arange(4)[:,None]))
        self.assertRaises(ConfigError,nearest_neighbours,points,4)

    def test_rigid_invariance(self):
        """
        triplet_angles: unchanged by a rigid transform
        """
        cloud = random_cloud(2)
        T = random_transform(np.random.default_rng(3))
        a,n = triplet_angles(cloud.points,3)
        b,m = triplet_angles(T.apply(cloud.points),3)
        self.assertTrue(np.array_equal(n,m))
        self.assertTrue(np.max(np.abs(a - b)) < 1e-6)

    def test_angular_embedding_shape(self):
        """
        triplet_angular_embedding: n x n x k x d_t tensor
        """
        cfg = EmbeddingConfig(d_t=8,k=2)
        e,neighbours = triplet_angular_embedding(random_cloud(4,n=6),cfg)
        self.assertEqual(e.shape,(6,6,2,8))
        self.assertEqual(neighbours.shape,(6,2))

class TestGeometricStructureEmbedding(unittest.TestCase):
    def _reference(self,cloud,cfg,W_D,W_A):
        # Materialise all k angular terms, then reduce
        r_D = pairwise_distance_embedding(cloud,cfg) @ W_D
        r_A,_ = triplet_angular_embedding(cloud,cfg)
        return r_D + np.max(r_A @ W_A,axis=2)

    def test_matches_reference(self):
        """
        geometric_structure_embedding: equals the brute-force reduction
        """
        cfg = EmbeddingConfig(d_t=16)
        cloud = random_cloud(5)
        W_D,W_A = random_projections(6,16)
        geo = geometric_structure_embedding(cloud,cfg,W_D,W_A)
        self.assertEqual(geo.size,16)
        self.assertEqual(geo.width,16)
        self.assertTrue(np.allclose(geo.values,
                                    self._reference(cloud,cfg,W_D,W_A)))

    def test_zero_angular_projection(self):
        """
        geometric_structure_embedding: W_A = 0 leaves the distance term
        """
        cfg = EmbeddingConfig(d_t=8)
        cloud = random_cloud(7)
        W_D,_ = random_projections(8,8)
        geo = geometric_structure_embedding(cloud,cfg,W_D,np.zeros((8,8)))
        self.assertTrue(np.array_equal(
            geo.values,pairwise_distance_embedding(cloud,cfg) @ W_D))

    def test_single_neighbour(self):
        """
        geometric_structure_embedding: k = 1 pools a single term
        """
        cfg = EmbeddingConfig(d_t=8,k=1)
        cloud = random_cloud(9)
        W_D,W_A = random_projections(10,8)
        r_A,_ = triplet_angular_embedding(cloud,cfg)
        geo = geometric_structure_embedding(cloud,cfg,W_D,W_A)
        expected = pairwise_distance_embedding(cloud,cfg) @ W_D + \
                   r_A[:,:,0,:] @ W_A
        self.assertTrue(np.allclose(geo.values,expected))

    def test_distance_only(self):
        """
        geometric_structure_embedding: angular=False drops the angles
        """
        cfg = EmbeddingConfig(d_t=8,angular=False)
        cloud = random_cloud(11,n=3)
        W_D,W_A = random_projections(12,8)
        geo = geometric_structure_embedding(cloud,cfg,W_D,W_A)
        self.assertTrue(np.allclose(
            geo.values,pairwise_distance_embedding(cloud,cfg) @ W_D))

    def test_rigid_invariance(self):
        """
        geometric_structure_embedding: invariant under rigid transforms
        """
        cfg = EmbeddingConfig(d_t=16)
        cloud = random_cloud(13,n=20)
        W_D,W_A = random_projections(14,16)
        geo = geometric_structure_embedding(cloud,cfg,W_D,W_A).values
        rng = np.random.default_rng(15)
        for _ in range(100):
            T = random_transform(rng,max_translation=10.0)
            moved = PointCloud(T.apply(cloud.points))
            other = geometric_structure_embedding(moved,cfg,W_D,W_A).values
            self.assertTrue(np.max(np.abs(other - geo)) < 1e-6)

    def test_permutation_equivariance(self):
        """
        geometric_structure_embedding: permutes with the superpoints
        """
        cfg = EmbeddingConfig(d_t=8)
        cloud = random_cloud(16,n=10)
        W_D,W_A = random_projections(17,8)
        perm = np.random.default_rng(18).permutation(10)
        geo = geometric_structure_embedding(cloud,cfg,W_D,W_A).values
        other = geometric_structure_embedding(cloud.subset(perm),cfg,
                                              W_D,W_A).values
        self.assertTrue(np.allclose(other,geo[perm][:,perm]))

    def test_bad_projection_shape(self):
        """
        geometric_structure_embedding: wrong projection shape raises
        """
        cfg = EmbeddingConfig(d_t=8)
        self.assertRaises(ConfigError,geometric_structure_embedding,
                          random_cloud(19),cfg,np.eye(4),np.eye(8))
