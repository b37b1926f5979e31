from .routing import RoutingEnv, Topology, load_topology
from .junction import JunctionEnv

__all__ = ["RoutingEnv", "Topology", "load_topology", "JunctionEnv"]
