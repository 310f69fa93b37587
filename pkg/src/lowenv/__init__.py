"""Lower envelope method: multiphase interfaces, transport and three-phase EIT."""

__version__ = "0.1.0"
