"""Deterministic mobile-manipulator simulator and shared-control stack.

Subsystems: serial-chain kinematics with damped-least-squares IK
(`kinematics`), the virtual-force command pipeline (`tpo`),
manipulability-aware arm/base splitting (`vtr`), the bimanual grasp and
transport laws (`bimanual`), a behavior-tree interpreter (`bt`), simulated
laser perception (`perception`), the fixed-timestep world (`world`), and
the mission runner / wire protocol / server (`mission`, `wire`, `server`).
"""

__version__ = "0.1.0"
