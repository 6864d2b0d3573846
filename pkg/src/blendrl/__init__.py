"""Control learning with a predictive-control safety regularizer.

A model-based regularizer (receding-horizon planner on an estimated plant
model) is blended with a model-free learner through a state-dependent weight
that starts near 1 (trust the planner) and relaxes as the learner's critic
finds better actions. Includes four ODE plant benchmarks, a tabular
brute-force oracle for the underlying policy-improvement claims, and a CLI
harness for desk-scale experiments.
"""

__version__ = "0.1.0"
