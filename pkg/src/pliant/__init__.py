"""Diffusion-policy learning for compliant contact tasks, desk scale.

Train a conditional denoising transformer to predict chunks of Cartesian
pose + gripper + stiffness actions from force/pose/grid observations,
execute them through a Cartesian impedance controller in a deterministic
contact simulator, and collect demonstrations from scripted experts or a
teleoperating human.
"""

__version__ = "0.1.0"
