"""Compiled inner loops for Pauli-rotation gate application.

Every Pauli string acts on a state vector as a signed permutation, so a
rotation exp(-i theta sigma) is psi -> cos(theta) psi - i sin(theta)
(phase * psi[perm]).  The tables built here are shared by the Trotter,
qDrift, and Poisson-process propagators.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .pauli import PauliString


def build_tables(strings: list[PauliString]) -> tuple[np.ndarray, np.ndarray]:
    """Stack (perm, phase) signed-permutation tables for a term list."""
    if not strings:
        return (
            np.zeros((0, 1), dtype=np.int64),
            np.zeros((0, 1), dtype=np.complex128),
        )
    dim = 1 << strings[0].n_qubits
    perms = np.empty((len(strings), dim), dtype=np.int64)
    phases = np.empty((len(strings), dim), dtype=np.complex128)
    for j, s in enumerate(strings):
        perms[j], phases[j] = s.dense_action()
    return perms, phases


@njit(cache=True, nogil=True)
def apply_rotations(psi, perms, phases, term_idx, angles):
    """Apply rotations exp(-i angles[e] sigma_{term_idx[e]}) in order, in place."""
    dim = psi.shape[0]
    buf = np.empty(dim, dtype=np.complex128)
    for e in range(term_idx.shape[0]):
        t = term_idx[e]
        c = math.cos(angles[e])
        s = math.sin(angles[e])
        for i in range(dim):
            buf[i] = c * psi[i] - 1j * s * (phases[t, i] * psi[perms[t, i]])
        psi[:] = buf


@njit(cache=True, nogil=True)
def apply_rotations_checkpointed(psi, perms, phases, term_idx, angles, stops, bra, out):
    """Apply rotations with inner products <bra|psi> recorded at checkpoints.

    stops[j] is the exclusive event index of checkpoint j; out[j] receives
    conj(bra) . psi after applying events [0, stops[j]).
    """
    dim = psi.shape[0]
    buf = np.empty(dim, dtype=np.complex128)
    e = 0
    for j in range(stops.shape[0]):
        while e < stops[j]:
            t = term_idx[e]
            c = math.cos(angles[e])
            s = math.sin(angles[e])
            for i in range(dim):
                buf[i] = c * psi[i] - 1j * s * (phases[t, i] * psi[perms[t, i]])
            psi[:] = buf
            e += 1
        acc = 0.0 + 0.0j
        for i in range(dim):
            acc += np.conj(bra[i]) * psi[i]
        out[j] = acc
