"""CRB-optimal probing currents for continuous-aperture near-field sensing."""
from .fisher import CrbProblem, UnidentifiableError
from .geometry import Scenario, scenario_from_table1
from .optimizer import SmgdConfig, smgd

__version__ = "0.1.0"

__all__ = ["CrbProblem", "Scenario", "SmgdConfig", "UnidentifiableError", "scenario_from_table1", "smgd"]
