"""netdrift: distributed online learning over networks under concept drift.

Simulates diffusion, consensus, and centralized baselines against
stationary and drifting data streams, and evaluates the corresponding
closed-form steady-state and tracking performance predictions.
"""

__version__ = "0.1.0"
