"""Cycle-counting MSP430 simulator with IP Encapsulation, and an interrupt
driven single-stepping attack against code running inside it."""

__version__ = "0.1.0"
