"""Exception hierarchy shared by all modules."""


class HierPlaceError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(HierPlaceError, ValueError):
    """An argument is outside its documented domain."""


class StructureError(HierPlaceError):
    """Inputs reference each other inconsistently (dangling ids, misaligned edges, ...)."""


class CapacityError(HierPlaceError):
    """The network does not fit the hardware slot grid."""


class ParseError(HierPlaceError):
    """A network, placement or configuration file could not be decoded."""


class UnknownNeuronError(HierPlaceError, LookupError):
    """A neuron id is not part of the network."""
