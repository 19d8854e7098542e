"""Embedding extraction adapter for the disctok toolkit.

Writes ``.dtek`` embedding files plus a JSON-lines manifest, either from
published pretrained speech encoders or from a seeded synthetic
gaussian-mixture generator (the default, dependency-free mode).
"""

from .errors import ExtractorError, MissingAssetError, SpecError
from .extract import extract
from .spec import ExtractionSpec, SyntheticUtterance, frames_consistent, load_spec
from .writer import UtteranceRecord, write_dtek, write_manifest

__version__ = "0.1.0"
