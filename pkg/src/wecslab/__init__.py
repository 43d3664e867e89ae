"""Pitch-control laboratory for a 2 MW variable-speed wind turbine.

Submodules
----------
wind     ARMA turbulent wind generation
turbine  Cp surface, aerodynamic power, torque law, rotor and pitch actuator
refgen   optimal-pitch oracle and controller training data
mlp      multilayer perceptron pitch controller
rbf      radial-basis-function pitch controller
gfs      genetic fuzzy (Michigan) pitch controller
simloop  closed-loop simulation, metrics and comparison
cli      batch command-line front end
"""

__version__ = "0.1.0"
