"""Keyed spread-spectrum watermarking for 3D Gaussian Splatting assets."""
