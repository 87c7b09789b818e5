from .base import RegistryHandler
from .create import Create
from .find import Find
from .delete import Delete

__all__ = ["RegistryHandler", "Create", "Find", "Delete"]
