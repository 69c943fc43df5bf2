"""Object-level semantic costmaps from simulated RGB-D data.

The package renders a synthetic furniture scene, detects and tracks objects,
extracts their dominant horizontal surface and stamps the projected footprint
into a probabilistic costmap alongside a log-odds metric grid.
"""

__version__ = "0.1.0"
