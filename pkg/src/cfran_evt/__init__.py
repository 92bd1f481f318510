"""Cell-free RAN simulator with tail-risk-aware user-centric AP clustering.

The package provides, layer by layer:

* ``topology``  -- network geometry, large-scale fading, pilot assignment
* ``channel``   -- MMSE estimation quality and a Monte Carlo SINR oracle
* ``phy``       -- closed-form SINR, short-packet rates, power and EE
* ``queueing``  -- physical and virtual queue dynamics, arrival processes
* ``evt``       -- peaks-over-threshold generalized-Pareto tail modeling
* ``solver``    -- per-slot clustering optimizer (relaxation + SCA)
* ``sim``       -- slot loop, policies, experiment orchestration
* ``cli``       -- TOML-configured command-line front end
"""

__version__ = "0.1.0"
