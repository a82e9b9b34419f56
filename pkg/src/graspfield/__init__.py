"""High-DOF grasp pose regression with consistency and collision losses."""
__version__ = "0.1.0"
