"""greenlab: Green functions, exit distributions, and random-walk
asymptotics on concrete groups (lattices, free groups, Heisenberg, product
lifts), with exact small-scale oracles and reproducible batch experiments."""

__version__ = "0.1.0"
