"""Fuzzy private set intersection toolkit.

A sender holding m points and a receiver holding n points, both in a
d-dimensional integer grid, compute the set of sender points that lie within
distance delta of some receiver point, under the L-infinity or an L_p metric.
The receiver learns exactly that set and nothing else; the sender learns
nothing.

The stack, bottom up:

- ``core``            fixed-width binary-field elements, shares, parameters,
                      seeded randomness
- ``prefix``          binary prefix algebra and interval decomposition
- ``okvs``            oblivious key-value store (random band matrix)
- ``amprf``           alternating-moduli PRF (plain evaluation)
- ``transport``       framed duplex channels with byte accounting
- ``functionalities`` trusted-dealer backend for the base MPC functionalities
- ``soopprf``         oblivious programmable PRF with secret-shared outputs
- ``eqsel``           random equality-conditional selection
- ``fmap``            fuzzy mapping (plain and prefix-optimized)
- ``protocols``       the four end-to-end intersection protocols
- ``harness``         dataset generation, brute-force oracle, runners, bench
"""

from fuzzypsi.core import Params, PointSet, validate

__all__ = [
    "Params",
    "PointSet",
    "validate",
    "gen_dataset",
    "oracle",
    "run_protocol",
]


def __getattr__(name):
    if name in ("gen_dataset", "oracle", "run_protocol"):
        from fuzzypsi import harness

        return getattr(harness, name)
    raise AttributeError(name)
