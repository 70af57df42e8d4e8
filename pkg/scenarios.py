# scenarios.py - built-in design scenarios as partial configuration documents
import copy
from typing import Dict

from config import ConfigError


def _scenario(P, theta_inc_te, theta_inc_tm, theta_refl_te, theta_refl_tm) -> Dict:
    return {
        "layout": {"P": P, "Q": P},
        "illumination": {"TE": {"theta_deg": theta_inc_te}, "TM": {"theta_deg": theta_inc_tm}},
        "targets": {"TE": {"theta_deg": theta_refl_te}, "TM": {"theta_deg": theta_refl_tm}},
    }


# co-located feeds share one incidence angle; tc3 separates them
PRESETS = {
    "tc1": _scenario(20, 0.0, 0.0, 30.0, -40.0),
    "tc1-oblique": _scenario(20, -30.0, -30.0, 30.0, -40.0),
    "tc2-30": _scenario(30, -30.0, -30.0, 30.0, -40.0),
    "tc2-40": _scenario(40, -30.0, -30.0, 30.0, -40.0),
    "tc3": _scenario(40, -30.0, 40.0, 20.0, -20.0),
}


def preset(name: str) -> Dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])
