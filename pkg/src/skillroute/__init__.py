"""Learning-based routing for skill-based queueing systems.

Modules: ``model`` (system description), ``lp`` (routing programs),
``estimators`` (payoff, arrival and service-rate estimators), ``engine``
(discrete-event simulation), ``policies`` (routing rules), ``data``
(scenarios), ``metrics`` (performance measures) and ``experiments``
(config-driven runs, also behind the ``skillroute`` command).
"""
from .engine import EventLog, Simulation, run_replication
from .metrics import KpiReport, compute_kpis, relative_payoff
from .model import (ArrivalSource, CapacitySchedule, Distribution, PolicyKind, PolicySpec,
                    RoutingPlan, SpanningForest, SystemConfig, validate_config)

__version__ = "0.1.0"
