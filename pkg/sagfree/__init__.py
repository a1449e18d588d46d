import logging
from importlib import resources as pkg_resources

import pint

from . import resources

__version__ = "0.1.1"

# Load the extra unit definitions shipped with the package
unit_lines = (
    pkg_resources.files(resources)
    .joinpath("unit_def.txt")
    .read_text(encoding="utf-8")
    .splitlines()
)

# Setup pint for the package
ureg = pint.UnitRegistry()
Q_ = ureg.Quantity
ureg.load_definitions(unit_lines)

logging.getLogger(__name__).addHandler(logging.NullHandler())
