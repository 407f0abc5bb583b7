"""
Modelo de nodos: tipos, metadatos y descriptores de funciones.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from jsonschema import Draft202012Validator

from src.common.errors import SchemaViolation


class NodeKind(str, Enum):
    """Tipo de nodo del espacio de nombres."""
    DIRECTORY = 'directory'
    DATA = 'data'
    EXECUTABLE = 'executable'


# Tipos admitidos por los esquemas estructurales → tipos JSON Schema
SCHEMA_TYPES = {'string', 'integer', 'number', 'boolean', 'object', 'array'}


def _normalize_schema(schema: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """
    Normaliza un esquema estructural {campo: {type, required}}.

    Acepta la forma abreviada {campo: 'string'} (required=True).
    """
    normalized: Dict[str, Dict[str, Any]] = {}
    for name, spec in (schema or {}).items():
        if not name:
            raise SchemaViolation("Nombre de campo vacío en esquema")
        if isinstance(spec, str):
            spec = {'type': spec, 'required': True}
        field_type = spec.get('type')
        if field_type not in SCHEMA_TYPES:
            raise SchemaViolation(
                f"Tipo '{field_type}' inválido para campo '{name}'. Válidos: {sorted(SCHEMA_TYPES)}"
            )
        normalized[name] = {'type': field_type, 'required': bool(spec.get('required', False))}
    return normalized


def to_json_schema(schema: Dict[str, Dict[str, Any]]) -> Dict[str, Any]:
    """Traduce el esquema estructural a un objeto JSON Schema cerrado."""
    return {
        'type': 'object',
        'properties': {name: {'type': spec['type']} for name, spec in schema.items()},
        'required': sorted(name for name, spec in schema.items() if spec['required']),
        'additionalProperties': False,
    }


@dataclass
class FunctionDescriptor:
    """
    Descriptor de un nodo ejecutable: descripción y esquemas de entrada/salida.

    Ambos esquemas son cerrados: campos no declarados se rechazan.
    """
    name: str
    description: str
    input_schema: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    output_schema: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        self.input_schema = _normalize_schema(self.input_schema)
        self.output_schema = _normalize_schema(self.output_schema)
        self._input_validator = Draft202012Validator(to_json_schema(self.input_schema))
        self._output_validator = Draft202012Validator(to_json_schema(self.output_schema))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FunctionDescriptor':
        try:
            return cls(
                name=data['name'],
                description=data.get('description', ''),
                input_schema=data.get('inputSchema', {}),
                output_schema=data.get('outputSchema', {}),
            )
        except (KeyError, AttributeError, TypeError) as e:
            raise SchemaViolation(f"Descriptor de función inválido: {e}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'description': self.description,
            'inputSchema': self.input_schema,
            'outputSchema': self.output_schema,
        }

    def serialize(self) -> bytes:
        """Serialización textual estable (lo que devuelve read sobre el nodo)."""
        return (json.dumps(self.to_dict(), sort_keys=True, indent=2) + '\n').encode('utf-8')

    def validate_input(self, args: Dict[str, Any]) -> None:
        _validate(self._input_validator, args, f"argumentos de '{self.name}'")

    def validate_output(self, result: Dict[str, Any]) -> None:
        _validate(self._output_validator, result, f"resultado de '{self.name}'")

    def coerce_args(self, raw: Dict[str, str]) -> Dict[str, Any]:
        """
        Convierte argumentos textuales (CLI ``--arg k=v``) a los tipos declarados.

        Campos no declarados se dejan como texto para que la validación los rechace.
        """
        coerced: Dict[str, Any] = {}
        for key, value in raw.items():
            field_type = self.input_schema.get(key, {}).get('type')
            try:
                if field_type == 'integer':
                    coerced[key] = int(value)
                elif field_type == 'number':
                    coerced[key] = float(value)
                elif field_type == 'boolean':
                    coerced[key] = value.strip().lower() in ('1', 'true', 'yes')
                elif field_type in ('object', 'array'):
                    coerced[key] = json.loads(value)
                else:
                    coerced[key] = value
            except ValueError:
                raise SchemaViolation(f"Valor de '{key}' no es {field_type}: '{value}'")
        return coerced


def _validate(validator: Draft202012Validator, value: Any, what: str) -> None:
    if not isinstance(value, dict):
        raise SchemaViolation(f"{what}: se esperaba un mapa de campos")
    errors = sorted(validator.iter_errors(value), key=lambda e: e.message)
    if errors:
        raise SchemaViolation(f"{what}: " + '; '.join(e.message for e in errors))


@dataclass
class NodeMetadata:
    """
    Metadatos de un nodo del espacio de nombres.

    Invariantes:
    - modified_at >= created_at
    - revision_id empieza en 1 y sube exactamente 1 por escritura
    - claves de user_attrs no vacías
    - solo los nodos ejecutables llevan FunctionDescriptor
    """
    kind: NodeKind
    created_at: int = 0
    modified_at: int = 0
    size: int = 0
    revision_id: int = 1
    source_id: Optional[str] = None
    access_scope: str = 'system'
    user_attrs: Dict[str, str] = field(default_factory=dict)
    descriptor: Optional[FunctionDescriptor] = None
    content_hash: Optional[str] = None

    def __post_init__(self):
        self.kind = NodeKind(self.kind)
        if self.kind == NodeKind.EXECUTABLE and self.descriptor is None:
            raise SchemaViolation("Nodo ejecutable sin FunctionDescriptor")
        if self.kind != NodeKind.EXECUTABLE and self.descriptor is not None:
            raise SchemaViolation(f"Nodo '{self.kind.value}' no puede llevar descriptor")
        if self.modified_at < self.created_at:
            self.modified_at = self.created_at
        for key in self.user_attrs:
            if not key:
                raise SchemaViolation("Clave vacía en userAttrs")

    @property
    def archived(self) -> bool:
        return self.user_attrs.get('archived') == 'true'

    @property
    def is_directory(self) -> bool:
        return self.kind == NodeKind.DIRECTORY

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'kind': self.kind.value,
            'createdAt': self.created_at,
            'modifiedAt': self.modified_at,
            'size': self.size,
            'revisionId': self.revision_id,
            'sourceId': self.source_id,
            'accessScope': self.access_scope,
            'userAttrs': dict(sorted(self.user_attrs.items())),
        }
        if self.descriptor is not None:
            data['descriptor'] = self.descriptor.to_dict()
        return data


@dataclass(frozen=True)
class NodeState:
    """Proyección de un nodo usada en digests de estado y replay."""
    path: str
    kind: str
    revision_id: int
    content_hash: str

    def as_list(self) -> List[Any]:
        return [self.path, self.kind, self.revision_id, self.content_hash]


__all__ = [
    'NodeKind',
    'NodeMetadata',
    'NodeState',
    'FunctionDescriptor',
    'SCHEMA_TYPES',
    'to_json_schema',
]
