"""Exemplar-based material transfer on procedurally rendered scenes.

Subsystems:
  scene/render     procedural walled-box scenes, CPU ray tracer, AOV buffers
  dataset          material-swapped pair generation and on-disk formats
  schedule/models  noise schedule, conditional denoiser, texture encoder
  training/sampling  diffusion training loop, DDIM sampling with guidance
  intrinsics       single-image normal and irradiance estimators
  metrics/evaluate quantitative protocol and report generation
"""

__version__ = "0.1.0"
