"""Power allocation for multi-user decode-and-forward relay networks.

A relay with a total power budget serves M sources that transmit to a common
destination over orthogonal subchannels under Rayleigh fading. Only the
channel statistics (path losses and fading law) are available to the
allocator. The package provides:

* ``specfun``    -- the exponential-integral product exp(x)*E1(x) that all
  ergodic-rate expressions are built from, and its per-range rational
  approximation (lookup table, selection, least-squares refitting);
* ``model``      -- scenario geometry, propagation constants, fading and
  topology sampling;
* ``rates``      -- instantaneous and ergodic achievable rates per user and
  for the whole system;
* ``quartic``    -- closed forms used by the fast allocators: the
  rate-constraint power cap and the quartic stationarity condition of the
  relay power Lagrangian;
* ``allocators`` -- the allocation schemes: PAS-0 (numerical reference),
  PAS-1 (Lagrangian bisection), PAS-2 (sorted equal power), CWF and SUBOP
  baselines, and an exhaustive grid oracle for small systems;
* ``sim``        -- Monte Carlo sweep driver and complexity benchmark;
* ``cli``        -- command-line front end (``relayalloc``).
"""

__version__ = "0.1.0"
