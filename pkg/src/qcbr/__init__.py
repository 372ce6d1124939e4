"""Quantum case-based reasoning for the Social Workers' Problem.

Modules:

``qsim``        dense statevector simulator
``vqc``         data re-uploading variational classifier
``optim``       SPSA and finite-difference quasi-Newton minimizers
``vqe``         hardware-efficient eigensolver over diagonal Ising problems
``swp``         schedule instances, QUBO/Ising construction, decoding, datasets
``preprocess``  PCA and FastICA feature reduction
``casemem``     case memory and the retrieve / reuse / revise / retain cycle
``cli``         command-line harness
"""

__version__ = "0.1.0"
