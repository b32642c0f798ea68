"""Regenerate the synthetic call-center service-time samples.

The bank data behind the published calibration is not redistributable, so
the package ships lognormal-shaped stand-ins: 200 evenly spaced quantiles
per customer class, in seconds.
"""

import json
from pathlib import Path

import numpy as np
from scipy.stats import lognorm

# per-class (mean, coefficient of variation), seconds
VRU = [(40, 0.8), (60, 0.8), (35, 0.8), (90, 0.8), (55, 0.8), (30, 0.8)]
AGENT = [(180, 1.0), (230, 1.0), (160, 1.0), (300, 1.0), (210, 1.0), (140, 1.0)]


def quantiles(mean, cv, n=200):
    s2 = np.log(1 + cv**2)
    mu = np.log(mean) - s2 / 2
    p = (np.arange(n) + 0.5) / n
    return [round(float(x), 6) for x in lognorm.ppf(p, np.sqrt(s2), scale=np.exp(mu))]


def main():
    out = {
        "description": "synthetic lognormal service-time quantiles (seconds), 200 per class",
        "vru": [quantiles(m, cv) for m, cv in VRU],
        "agent": [quantiles(m, cv) for m, cv in AGENT],
    }
    path = Path(__file__).resolve().parents[1] / "src" / "queueseq" / "data" / "callcenter_service_samples.json"
    path.write_text(json.dumps(out) + "\n")


if __name__ == "__main__":
    main()
