#!/usr/bin/env python

import unittest
import tempfile
import shutil
import os
import math
import json
from georeg.core import ConfigError
from georeg.config import RunConfig
from georeg.config import SceneSpec
from georeg.config import EmbeddingConfig
from georeg.config import LgrConfig
from georeg.config import preset_config
from georeg.config import load_config

class TestRunConfigDefaults(unittest.TestCase):
    def test_published_defaults(self):
        """
        RunConfig: defaults are the published indoor settings
        """
        config = RunConfig()
        self.assertEqual(config.embedding.sigma_d,0.2)
        self.assertAlmostEqual(config.embedding.sigma_a,
                               math.radians(15.0))
        self.assertEqual(config.embedding.k,3)
        self.assertEqual(config.attention.num_layers,3)
        self.assertEqual(config.attention.heads,4)
        self.assertEqual(config.matching.num_correspondences,256)
        self.assertEqual(config.matching.sinkhorn_iterations,100)
        self.assertEqual(config.lgr.tau_a,0.1)
        self.assertEqual(config.lgr.refinement_iterations,5)
        self.assertEqual(config.evaluation.matching_radius,0.05)
        self.assertEqual(config.losses.delta_p,0.1)
        self.assertEqual(config.losses.delta_n,1.4)

    def test_to_dict_uses_json_keys(self):
        """
        RunConfig.to_dict: emits JSON keys and units
        """
        data = RunConfig().to_dict()
        self.assertEqual(data['lgr']['acceptance_radius_m'],0.1)
        self.assertEqual(data['embedding']['sigma_a_deg'],15.0)
        self.assertEqual(data['embedding']['k_angular'],3)
        self.assertEqual(data['attention']['n_t'],3)
        self.assertEqual(data['features']['radii_m'],[0.1,0.2,0.4])
        self.assertEqual(data['seed'],42)

    def test_to_dict_from_dict(self):
        """
        RunConfig.from_dict: reads back its own output
        """
        config = preset_config('outdoor').replace(seed=3)
        self.assertEqual(RunConfig.from_dict(config.to_dict()),config)

class TestRunConfigFromDict(unittest.TestCase):
    def test_partial_update(self):
        """
        RunConfig.from_dict: missing keys keep their defaults
        """
        config = RunConfig.from_dict({'seed': 7,
                                      'lgr': {'acceptance_radius_m': 0.2},
                                      'embedding': {'sigma_a_deg': 30}})
        self.assertEqual(config.seed,7)
        self.assertEqual(config.lgr.tau_a,0.2)
        self.assertEqual(config.lgr.refinement_iterations,5)
        self.assertAlmostEqual(config.embedding.sigma_a,math.radians(30.0))
        self.assertEqual(config.embedding.sigma_d,0.2)

    def test_unknown_top_level_key(self):
        """
        RunConfig.from_dict: unknown top level key is rejected
        """
        with self.assertRaises(ConfigError) as cm:
            RunConfig.from_dict({'sed': 7})
        self.assertTrue("'sed'" in str(cm.exception))

    def test_unknown_nested_key(self):
        """
        RunConfig.from_dict: unknown nested key names its dotted path
        """
        with self.assertRaises(ConfigError) as cm:
            RunConfig.from_dict({'lgr': {'acceptance_radius': 0.1}})
        self.assertTrue("'lgr.acceptance_radius'" in str(cm.exception))

    def test_type_checking(self):
        """
        RunConfig.from_dict: values of the wrong type are rejected
        """
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'attention': {'heads': 4.5}})
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'attention': {'geometric': 1}})
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'lgr': {'acceptance_radius_m': "0.1"}})
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'lgr': []})

    def test_validation(self):
        """
        RunConfig.from_dict: invalid values are rejected
        """
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'embedding': {'d_t': 255}})
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'embedding': {'d_t': 250}})
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'attention': {'precision': 'half'}})
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'losses': {'delta_n': 0.05}})
        self.assertRaises(ConfigError,RunConfig.from_dict,
                          {'lgr': {'min_local_matches': 2}})

    def test_section_validate(self):
        """
        Config sections: validate catches bad values
        """
        self.assertRaises(ConfigError,
                          EmbeddingConfig(sigma_d=0.0).validate)
        self.assertRaises(ConfigError,LgrConfig(tau_a=-1.0).validate)
        EmbeddingConfig().validate()

class TestPresets(unittest.TestCase):
    def test_indoor_is_default(self):
        """
        preset_config: 'indoor' gives the defaults
        """
        self.assertEqual(preset_config('indoor'),RunConfig())

    def test_outdoor(self):
        """
        preset_config: 'outdoor' scales radii and embedding
        """
        config = preset_config('outdoor')
        self.assertEqual(config.embedding.sigma_d,4.8)
        self.assertEqual(config.lgr.tau_a,0.6)
        config.validate()

    def test_unknown_preset(self):
        """
        preset_config: unknown preset raises ConfigError
        """
        self.assertRaises(ConfigError,preset_config,'underwater')

class TestLoadConfig(unittest.TestCase):
    """
    Tests for the 'load_config' function

    """
    def setUp(self):
        # Create temp working dir
        self.tmpdir = tempfile.mkdtemp(suffix='TestLoadConfig')

    def tearDown(self):
        # Remove the temporary test directory
        shutil.rmtree(self.tmpdir)

    def _write(self,data):
        path = os.path.join(self.tmpdir,"config.json")
        with open(path,'w') as fp:
            json.dump(data,fp)
        return path

    def test_load_config_no_file(self):
        """
        load_config: no file gives the preset
        """
        self.assertEqual(load_config(),RunConfig())
        self.assertEqual(load_config(seed=9).seed,9)

    def test_load_config_over_preset(self):
        """
        load_config: file values override the preset
        """
        path = self._write({'seed': 5,'matching': {'mutual_k': 2}})
        config = load_config(path,preset='outdoor')
        self.assertEqual(config.seed,5)
        self.assertEqual(config.matching.mutual_k,2)
        self.assertEqual(config.lgr.tau_a,0.6)

    def test_load_config_seed_override(self):
        """
        load_config: explicit seed overrides the file
        """
        path = self._write({'seed': 5})
        self.assertEqual(load_config(path,seed=11).seed,11)

    def test_load_config_unknown_key(self):
        """
        load_config: unknown key in the file raises ConfigError
        """
        path = self._write({'ransac': {'iters': 10}})
        self.assertRaises(ConfigError,load_config,path)

class TestSceneSpec(unittest.TestCase):
    def test_scene_spec_from_dict(self):
        """
        SceneSpec.from_dict: parses units and rejects unknown keys
        """
        spec = SceneSpec.from_dict({'seed': 4,'overlap': 0.5,
                                    'max_rotation_deg': 90.0,
                                    'noise_sigma_m': 0.005})
        self.assertEqual(spec.seed,4)
        self.assertEqual(spec.overlap,0.5)
        self.assertAlmostEqual(spec.max_rotation,math.pi/2.0)
        self.assertEqual(spec.to_dict()['max_rotation_deg'],90.0)
        self.assertRaises(ConfigError,SceneSpec.from_dict,{'colour': 1})

    def test_scene_spec_validation(self):
        """
        SceneSpec.from_dict: invalid overlap is rejected
        """
        self.assertRaises(ConfigError,SceneSpec.from_dict,{'overlap': 0.0})
        self.assertRaises(ConfigError,SceneSpec.from_dict,{'overlap': 1.5})
        self.assertRaises(ConfigError,SceneSpec.from_dict,
                          {'num_planes': 0,'num_boxes': 0,
                           'num_cylinders': 0})
