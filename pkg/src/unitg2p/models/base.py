from typing import Any, Optional, Type

from sqlalchemy.orm import DeclarativeBase

from ..exceptions import SchemaBindingError
from ..handlers import Create, Delete, Find

REQUIRED_SCHEMAS = ("CreateSchema", "FilterSchema")


class BaseRecord(DeclarativeBase):
    """Declarative base for registry tables; ``bind_handlers`` attaches create/find/delete."""

    __abstract__ = True

    @classmethod
    def bind_handlers(cls, validation_schema: Optional[Type[Any]] = None):
        """
        Attach ``create``, ``find`` and ``delete`` handlers to the table class.

        Args:
            validation_schema: Optional namespace class named like the record
                (or its ``__schema_name__``) holding a ``CreateSchema`` for
                ``create`` and a ``FilterSchema`` for ``find``/``delete``

        Raises:
            SchemaBindingError: If the namespace is misnamed or incomplete

        Example:
            class StageRun:
                class CreateSchema(PydanticModel): ...
                class FilterSchema(PydanticModel): ...

            StageRunRecord.bind_handlers(validation_schema=StageRun)
        """
        create_schema = filter_schema = None
        if validation_schema is not None:
            cls._check_schema_namespace(validation_schema)
            create_schema, filter_schema = (getattr(validation_schema, n) for n in REQUIRED_SCHEMAS)

        cls.create = Create(cls, create_schema)
        cls.find = Find(cls, filter_schema)
        cls.delete = Delete(cls, filter_schema)

    @classmethod
    def _check_schema_namespace(cls, namespace: Type[Any]) -> None:
        expected = getattr(cls, "__schema_name__", cls.__name__)
        if namespace.__name__ != expected:
            raise SchemaBindingError(
                f"Schema namespace '{namespace.__name__}' does not match record name '{expected}'."
            )

        missing = [n for n in REQUIRED_SCHEMAS if not hasattr(namespace, n)]
        if missing:
            raise SchemaBindingError(f"{namespace.__name__} lacks {missing}; required: {list(REQUIRED_SCHEMAS)}")

        not_classes = [n for n in REQUIRED_SCHEMAS if not isinstance(getattr(namespace, n), type)]
        if not_classes:
            raise SchemaBindingError(f"{namespace.__name__}.{not_classes[0]} must be a class")


__all__ = ["BaseRecord"]
