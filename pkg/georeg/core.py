#!/usr/bin/env python
#
# core: core georeg classes and functions
import json
import hashlib
import logging
import numpy as np

logger = logging.getLogger(__name__)

# Constants
SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
SPLITMIX_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
SPLITMIX_MUL2 = np.uint64(0x94D049BB133111EB)
UINT64_MASK = 0xFFFFFFFFFFFFFFFF

# Exceptions

class GeoRegError(Exception):
    """
    Base class for all errors raised by georeg
    """

class InvalidInputError(GeoRegError):
    """
    Input data is malformed or contains non-finite values
    """

class DegenerateInputError(GeoRegError):
    """
    Input is well-formed but does not determine a unique answer
    (too few correspondences, collinear points and so on)
    """

class ConfigError(GeoRegError):
    """
    Invalid or unknown configuration value
    """

class NumericalError(GeoRegError):
    """
    A numerical routine produced NaN or overflowed
    """

class FormatError(GeoRegError):
    """
    A file could not be parsed
    """

class StageError(GeoRegError):
    """
    Error raised inside a registration pipeline stage

    The ``stage`` attribute names the stage that failed
    and ``cause`` holds the original exception.
    """
    def __init__(self,stage,cause):
        self.stage = stage
        self.cause = cause
        GeoRegError.__init__(self,"[%s] %s" % (stage,cause))

# Classes

class Reporter:
    """
    Class for reporting column data

    Given multiple "lines" of column data (supplied
    as lists), pretty print the data in columns.
    Floating point items are formatted using the
    ``float_format`` supplied on creation.

    Example usage:

    >>> output = Reporter()
    >>> output.append(['lgr',0.0123,3])
    >>> output.append(['ransac',1.5,19])
    >>> output.report()
    lgr     0.0123  3
    ransac  1.5     19
    """
    def __init__(self,float_format="%.4g"):
        """
        New Reporter instance

        Arguments:
          float_format (str): format string applied to
            floating point items (default '%.4g')
        """
        self._content = list()
        self._field_widths = list()
        self._float_format = float_format

    def _format(self,item):
        if isinstance(item,(float,np.floating)):
            return self._float_format % item
        if item is None:
            return '-'
        return str(item)

    def append(self,line):
        """
        Add a line of data

        Arguments:
          line (list): list of data items to
            append
        """
        line = [self._format(item) for item in line]
        self._content.append(line)
        for ix,item in enumerate(line):
            try:
                self._field_widths[ix] = max(self._field_widths[ix],
                                             len(item))
            except IndexError:
                self._field_widths.append(len(item))

    @property
    def nlines(self):
        """
        Number of lines stored
        """
        return len(self._content)

    def lines(self,delimiter=None,padding=True,prefix=None,
              rstrip=True):
        """
        Return the formatted lines as a list of strings

        Arguments:
          delimiter (str): delimiter to use (defaults
            to two space characters i.e. '  ')
          padding (bool): if True then line up columns
            of data by padding with spaces
          prefix (str): string to prepend to each line
          rstrip (bool): if True then strip all trailing
            whitespace from lines
        """
        if delimiter is None:
            delimiter = '  '
        if not prefix:
            prefix = ''
        output = []
        for line in self._content:
            if padding:
                # Pad all but the last field
                out_line = ["%-*s" % (width,item)
                            for width,item
                            in zip(self._field_widths[:-1],line[:-1])]
                out_line.append(line[-1])
            else:
                out_line = list(line)
            out_line = "{}{}".format(prefix,delimiter.join(out_line))
            if rstrip:
                out_line = out_line.rstrip()
            output.append(out_line)
        return output

    def report(self,**kws):
        """
        Pretty-print the data

        Takes the same keyword arguments as the
        ``lines`` method.
        """
        for line in self.lines(**kws):
            print(line)

# Functions

def stream_seed(seed,name):
    """
    Derive a 64-bit stream seed from a base seed and a name

    Arguments:
      seed (int): base seed
      name (str): name of the stream (e.g. a weight matrix
        name)

    Returns:
      Integer: 64-bit seed unique to (seed,name).
    """
    digest = hashlib.sha256(("%d:%s" % (seed,name)).encode('utf-8'))
    return int.from_bytes(digest.digest()[:8],'little')

def splitmix64(seed,count):
    """
    Return ``count`` outputs of the splitmix64 generator

    Output ``i`` is the splitmix64 finaliser applied to
    ``seed + (i+1)*gamma``, so any element can be computed
    independently of the others.

    Arguments:
      seed (int): 64-bit seed
      count (int): number of values to return

    Returns:
      numpy.ndarray: uint64 array of length ``count``.
    """
    counter = np.arange(1,count+1,dtype=np.uint64)
    z = np.full(count,seed & UINT64_MASK,dtype=np.uint64)
    z = z + counter*SPLITMIX_GAMMA
    z = (z ^ (z >> np.uint64(30)))*SPLITMIX_MUL1
    z = (z ^ (z >> np.uint64(27)))*SPLITMIX_MUL2
    return z ^ (z >> np.uint64(31))

def splitmix_uniform(seed,shape,low=0.0,high=1.0):
    """
    Return uniform deviates in [low,high) from splitmix64

    Arguments:
      seed (int): 64-bit seed
      shape (tuple): shape of the returned array
      low (float): lower bound
      high (float): upper bound

    Returns:
      numpy.ndarray: float64 array with the requested shape.
    """
    count = int(np.prod(shape,dtype=np.int64))
    bits = splitmix64(seed,count) >> np.uint64(11)
    unit = bits.astype(np.float64)*(1.0/9007199254740992.0)
    return (low + (high - low)*unit).reshape(shape)

def to_builtin(value):
    """
    Convert numpy scalars and arrays to builtin Python types

    Used before serialising reports to JSON.
    """
    if isinstance(value,dict):
        return {str(k): to_builtin(v) for k,v in value.items()}
    if isinstance(value,(list,tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value,np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value,np.bool_):
        return bool(value)
    if isinstance(value,np.integer):
        return int(value)
    if isinstance(value,np.floating):
        return float(value)
    return value

def dumps_json(data):
    """
    Serialise data to a JSON string with sorted keys

    Identical inputs always produce identical text.
    """
    return json.dumps(to_builtin(data),indent=2,sort_keys=True) + "\n"

def write_json(path,data):
    """
    Write data to a JSON file (sorted keys, 2-space indent)
    """
    with open(path,'w') as fp:
        fp.write(dumps_json(data))

def read_json(path):
    """
    Read a JSON file

    Raises a FormatError if the file can't be parsed.
    """
    with open(path) as fp:
        try:
            return json.load(fp)
        except ValueError as ex:
            raise FormatError("%s: invalid JSON (%s)" % (path,ex))
