"""Quantum information processing on strongly dipolar-coupled nuclear spins.

Submodules:
    numerics: Hermitian eigensolver, propagators, Nelder-Mead, seeded RNG.
    spin: dipolar spin Hamiltonian, eigenbasis, transitions, spectra, fitting.
    qnge: gradient-estimation circuit and its embedding in the eigenbasis.
    smp: strongly modulating pulses, fidelities and pulse design.
    expsim: POPS preparation, dephasing, diagonal tomography, correlation.
    cli: command-line driver.
"""

__version__ = "0.1.0"
