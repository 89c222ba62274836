"""Distribution information.

Loaded dynamically by `setup.py` at package build time, so it must not import
anything outside the standard library.
"""

__version__ = "0.4.0"

# Bumped whenever the layout of report rows or the JSON envelope changes.
REPORT_SCHEMA_VERSION = 1

# Bumped whenever the accepted scenario keys change incompatibly.
SCENARIO_SCHEMA_VERSION = 1

OUTPUT_DIR_ENV = "WIENERLAB_OUTPUT_DIR"
