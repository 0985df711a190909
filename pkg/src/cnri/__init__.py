from cnri.errors import CNRIError

__version__ = "0.1.0"
