#!/usr/bin/env python

import unittest
import tempfile
import shutil
import os
import io
from contextlib import redirect_stdout
import numpy as np
from georeg.core import Reporter
from georeg.core import StageError
from georeg.core import GeoRegError
from georeg.core import FormatError
from georeg.core import InvalidInputError
from georeg.core import stream_seed
from georeg.core import splitmix64
from georeg.core import splitmix_uniform
from georeg.core import to_builtin
from georeg.core import dumps_json
from georeg.core import write_json
from georeg.core import read_json

class TestReporter(unittest.TestCase):
    """
    Tests for the 'Reporter' class

    """
    def test_lines_padded(self):
        """
        Reporter.lines: pads columns to the widest item
        """
        output = Reporter()
        output.append(['lgr',0.0123,3])
        output.append(['ransac',1.5,19])
        self.assertEqual(output.lines(),
                         ['lgr     0.0123  3',
                          'ransac  1.5     19'])

    def test_lines_no_padding(self):
        """
        Reporter.lines: joins items with the delimiter
        """
        output = Reporter()
        output.append(['lgr',2,None])
        self.assertEqual(output.lines(delimiter='\t',padding=False),
                         ['lgr\t2\t-'])

    def test_lines_prefix(self):
        """
        Reporter.lines: prepends the prefix
        """
        output = Reporter(float_format="%.2f")
        output.append(['a',np.float64(0.5)])
        self.assertEqual(output.lines(prefix='# '),['# a  0.50'])

    def test_nlines(self):
        """
        Reporter.nlines: counts appended lines
        """
        output = Reporter()
        self.assertEqual(output.nlines,0)
        output.append(['x'])
        output.append(['y'])
        self.assertEqual(output.nlines,2)

    def test_report(self):
        """
        Reporter.report: prints the lines
        """
        output = Reporter()
        output.append(['svd',1])
        fp = io.StringIO()
        with redirect_stdout(fp):
            output.report()
        self.assertEqual(fp.getvalue(),"svd  1\n")

class TestStageError(unittest.TestCase):
    def test_stage_error_message(self):
        """
        StageError: message is tagged with the stage
        """
        ex = StageError('group',InvalidInputError("no superpoints"))
        self.assertTrue(isinstance(ex,GeoRegError))
        self.assertEqual(ex.stage,'group')
        self.assertEqual(str(ex),"[group] no superpoints")

class TestSeeds(unittest.TestCase):
    def test_stream_seed_depends_on_name(self):
        """
        stream_seed: distinct names give distinct seeds
        """
        self.assertEqual(stream_seed(1,'input'),stream_seed(1,'input'))
        self.assertNotEqual(stream_seed(1,'input'),
                            stream_seed(1,'output'))
        self.assertNotEqual(stream_seed(1,'input'),
                            stream_seed(2,'input'))
        self.assertTrue(0 <= stream_seed(1,'input') < 2**64)

    def test_splitmix64_reference_values(self):
        """
        splitmix64: matches the reference generator
        """
        # First outputs of splitmix64 seeded with 0
        self.assertEqual([int(x) for x in splitmix64(0,3)],
                         [0xe220a8397b1dcdaf,
                          0x6e789e6aa1b965f4,
                          0x06c45d188009454f])

    def test_splitmix64_prefix(self):
        """
        splitmix64: shorter streams are prefixes of longer ones
        """
        self.assertTrue(np.array_equal(splitmix64(99,5),
                                       splitmix64(99,10)[:5]))

    def test_splitmix_uniform_range(self):
        """
        splitmix_uniform: values lie in [low,high)
        """
        values = splitmix_uniform(7,(50,4),-0.25,0.25)
        self.assertEqual(values.shape,(50,4))
        self.assertTrue(np.all(values >= -0.25))
        self.assertTrue(np.all(values < 0.25))
        self.assertTrue(np.array_equal(values,
                                       splitmix_uniform(7,(50,4),
                                                        -0.25,0.25)))

class TestJson(unittest.TestCase):
    """
    Tests for the JSON helpers

    """
    def setUp(self):
        # Create temp working dir
        self.tmpdir = tempfile.mkdtemp(suffix='TestJson')

    def tearDown(self):
        # Remove the temporary test directory
        shutil.rmtree(self.tmpdir)

    def test_to_builtin(self):
        """
        to_builtin: converts numpy types
        """
        data = to_builtin({'a': np.int64(3),
                           'b': np.array([1.5,2.0]),
                           'c': (np.bool_(True),None)})
        self.assertEqual(data,{'a': 3,'b': [1.5,2.0],'c': [True,None]})
        self.assertEqual(type(data['a']),int)

    def test_dumps_json_sorted(self):
        """
        dumps_json: sorted keys, two-space indent, final newline
        """
        self.assertEqual(dumps_json({'b': 1,'a': [2]}),
                         '{\n  "a": [\n    2\n  ],\n  "b": 1\n}\n')

    def test_write_and_read_json(self):
        """
        write_json/read_json: data survives the file
        """
        path = os.path.join(self.tmpdir,"report.json")
        write_json(path,{'rre_deg': np.float64(0.25)})
        self.assertEqual(read_json(path),{'rre_deg': 0.25})

    def test_read_json_bad_file(self):
        """
        read_json: raises FormatError for invalid JSON
        """
        path = os.path.join(self.tmpdir,"bad.json")
        with open(path,'w') as fp:
            fp.write("{ not json")
        self.assertRaises(FormatError,read_json,path)
