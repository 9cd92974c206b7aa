"""Simulation, certification and controller synthesis for networks of
stochastic hybrid subsystems under Markov-switching topologies."""

__version__ = "0.1.0"
