"""Walkthrough: building and evolving spin-Hamiltonian models.

Models are named sums of Pauli terms: rotation terms Sx/Sy/Sz on the
principal spin, axial couplings Ax/Ay/Az to an environment qubit, and
transverse couplings Txy/Txz/Tyz.  Each term carries one real coefficient
in rad/us.
"""

import numpy as np

from qmla import assemble_hamiltonian, evolve_unitary, parse_model
from qmla.pauli import term_from_label, term_matrix

np.set_printoptions(precision=3, suppress=True, linewidth=100)

# --- parsing -------------------------------------------------------------
model = parse_model("SxyzAz")
print(f"model {model.name}: {model.num_terms} terms on {model.num_qubits} qubit(s)")
print("terms:", ", ".join(model.term_labels))

# names are canonical: order of families and axes never matters
assert parse_model("S_zxy A_z").name == "SxyzAz"

# --- term matrices -------------------------------------------------------
print("\nsigma_z (x) sigma_z  ->")
print(term_matrix(term_from_label("Az"), 2).real)

print("\nsingle-qubit term padded to two qubits (Sz -> Sz (x) I):")
print(term_matrix(term_from_label("Sz"), 2).real)

# --- assembling and evolving ---------------------------------------------
params = np.array([2.8, 5.7, 1.6, 3.4])  # rad/us
H = assemble_hamiltonian(model, params)
print("\nH = 2.8 Sx + 5.7 Sy + 1.6 Sz + 3.4 Az =")
print(H)

U = evolve_unitary(H, t=0.25)
print("\nU = exp(-i H t) at t = 0.25 us; unitarity residual:",
      np.max(np.abs(U.conj().T @ U - np.eye(4))))

# every term squares to the identity
for label in ("Sx", "Ay", "Txz"):
    P = term_matrix(term_from_label(label), 2)
    assert np.allclose(P @ P, np.eye(4))
print("\nall term matrices are Hermitian involutions (P @ P = I)")
