"""Published fitted parameters and eta_k values for three InGaAs/InP detectors.

``FITTED`` holds the model parameters per (range, detector, model kind);
``ETA_TABLE`` the eta_k values reported alongside them, rounded to three
decimals.  ``DETECTORS`` gives dead time and afterpulse probability.
"""
from .models import Dependent, Empirical, Independent

DETECTORS = {
    "IDQ": {"tau": 14.6e-6, "p_ap": 0.117},
    "SPD1": {"tau": 4.7e-6, "p_ap": 0.032},
    "SPD2": {"tau": 5.4e-6, "p_ap": 0.006},
}

RANGES = {"mu1": (0.1, 1.0), "mu2": (0.1, 2.0)}

FITTED = {
    "mu1": {
        "IDQ": {
            "independent": Independent(0.256),
            "dependent": Dependent(0.251, (1.157, 1.884)),
            "empirical": Empirical(0.259, 1.117),
        },
        "SPD1": {
            "independent": Independent(0.149),
            "dependent": Dependent(0.164, (0.624, 1.334)),
            "empirical": Empirical(0.166, 2.81),
        },
        "SPD2": {
            "independent": Independent(0.138),
            "dependent": Dependent(0.159, (0.5, 0.917)),
            "empirical": Empirical(0.161, 3.726),
        },
    },
    "mu2": {
        "IDQ": {
            "independent": Independent(0.255),
            "dependent": Dependent(0.264, (0.731, 1.516, 0.5, 0.959, 1.061)),
            "empirical": Empirical(0.257, 1.038),
        },
        "SPD1": {
            "independent": Independent(0.138),
            "dependent": Dependent(0.164, (0.5, 0.589, 0.828, 0.949, 0.989)),
            "empirical": Empirical(0.164, 2.717),
        },
        "SPD2": {
            "independent": Independent(0.127),
            "dependent": Dependent(0.150, (0.5, 0.653, 0.868, 0.963, 0.993)),
            "empirical": Empirical(0.152, 2.897),
        },
    },
}

ETA_TABLE = {
    "mu1": {
        "IDQ": {
            "independent": (0.256, 0.446, 0.588),
            "dependent": (0.251, 0.469, 0.721),
            "empirical": (0.259, 0.443, 0.573),
        },
        "SPD1": {
            "independent": (0.149, 0.276, 0.384),
            "dependent": (0.164, 0.250, 0.415),
            "empirical": (0.166, 0.254, 0.302),
        },
        "SPD2": {
            "independent": (0.138, 0.257, 0.360),
            "dependent": (0.159, 0.225, 0.338),
            "empirical": (0.161, 0.225, 0.251),
        },
    },
    "mu2": {
        "IDQ": {
            "independent": (0.255, 0.445, 0.586, 0.692, 0.770, 0.829),
            "dependent": (0.264, 0.406, 0.644, 0.691, 0.770, 0.834),
            "empirical": (0.257, 0.445, 0.583, 0.685, 0.759, 0.814),
        },
        "SPD1": {
            "independent": (0.138, 0.256, 0.358, 0.447, 0.523, 0.588),
            "dependent": (0.164, 0.233, 0.307, 0.402, 0.495, 0.577),
            "empirical": (0.164, 0.255, 0.305, 0.333, 0.349, 0.357),
        },
        "SPD2": {
            "independent": (0.127, 0.237, 0.334, 0.419, 0.492, 0.557),
            "dependent": (0.150, 0.214, 0.291, 0.384, 0.473, 0.552),
            "empirical": (0.152, 0.237, 0.284, 0.311, 0.326, 0.334),
        },
    },
}

# reduced chi-squared reported with each fit (None where not reported)
CHI2_REDUCED = {
    "mu1": {
        "IDQ": {"independent": 0.12, "dependent": 0.31, "empirical": 0.07},
        "SPD1": {"independent": 3.1, "dependent": 0.34, "empirical": 0.17},
        "SPD2": {"independent": 7.5, "dependent": 1.2, "empirical": 0.79},
    },
    "mu2": {
        "IDQ": {"independent": 0.08, "dependent": 0.02, "empirical": 0.05},
        "SPD1": {"independent": 12.44, "dependent": 2.06, "empirical": 0.8},
        "SPD2": {"independent": 15.53, "dependent": 3.31, "empirical": 1.25},
    },
}
