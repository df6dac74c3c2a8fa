"""Safe taxi routing, reference generation and MPC/PID-CBF control for ground aircraft."""

from taxicbf.geo_graph import (
    AirportMap,
    DirectedTaxiGraph,
    TaxiRoute,
    build_undirected,
    expand_directed,
    load_airport_map,
    project_latlon,
    shortest_taxi_path,
)
from taxicbf.trajectory import (
    GeometricPath,
    RefSample,
    ReferenceTrajectory,
    fillet_waypoints,
    ref_at,
    sample_reference,
)
from taxicbf.vehicle import ControlInput, Disturbance, VehicleParams, VehicleState

__version__ = "0.1.0"

__all__ = [
    "AirportMap",
    "ControlInput",
    "DirectedTaxiGraph",
    "Disturbance",
    "GeometricPath",
    "RefSample",
    "ReferenceTrajectory",
    "TaxiRoute",
    "VehicleParams",
    "VehicleState",
    "build_undirected",
    "expand_directed",
    "fillet_waypoints",
    "load_airport_map",
    "project_latlon",
    "ref_at",
    "sample_reference",
    "shortest_taxi_path",
]
