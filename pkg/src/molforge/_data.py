"""Access to bundled data files (templates, stock, benchmark, fixtures)."""

from importlib import resources


def data_path(name: str) -> str:
    """Filesystem path of a bundled data file."""
    return str(resources.files("molforge").joinpath("data").joinpath(name))
