"""
Montaje de un proceso de herramienta externo (Tool Wire Protocol).

Protocolo: mensajes UTF-8 de una línea terminados en "\\n", cada uno un
objeto JSON {id, type, name?, args?, result?, message?} con type en
describe | invoke | result | error.

Handshake: el cliente envía {"id":0,"type":"describe"} y el servidor
responde {"id":0,"type":"result","result":{"functions":[...]}}. Cada
descriptor se proyecta como nodo ejecutable bajo la raíz del montaje.

Una conexión por proceso; las invocaciones se serializan con un lock.
Una línea mal formada deja el montaje inutilizable (ProtocolViolation);
si el proceso muere, las invocaciones fallan con ToolFailure sin afectar
a otros montajes.
"""

import json
import logging
import os
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from src.afs.nodes import FunctionDescriptor, NodeKind, NodeMetadata
from src.afs.paths import is_valid_segment
from src.backends.base import Backend, RelPath, rel_text
from src.common.config import CoreConfig, ToolConfig
from src.common.digests import sha256_hex
from src.common.errors import (
    HandshakeTimeout, IsDirectory, NotFound, ProtocolViolation, SchemaViolation, ToolFailure,
)

logger = logging.getLogger(__name__)

MESSAGE_TYPES = {'describe', 'invoke', 'result', 'error'}
_EOF = object()


@dataclass
class ToolProcessConfig:
    command: str
    args: List[str] = field(default_factory=list)
    env: Dict[str, str] = field(default_factory=dict)
    handshake_timeout_ms: int = ToolConfig.HANDSHAKE_TIMEOUT_MS
    invoke_timeout_s: float = CoreConfig.EXEC_TIMEOUT


def encode_message(message: Dict[str, Any]) -> bytes:
    """Una línea JSON compacta terminada en '\\n' (sin saltos embebidos)."""
    return (json.dumps(message, separators=(',', ':'), ensure_ascii=True) + '\n').encode('utf-8')


def decode_message(line: bytes) -> Dict[str, Any]:
    """
    Decodifica y valida un mensaje del protocolo.

    Raises:
        ProtocolViolation: línea no JSON, no objeto, o sin id/type válidos
    """
    try:
        message = json.loads(line.decode('utf-8'))
    except (ValueError, UnicodeDecodeError) as e:
        raise ProtocolViolation(f"Línea mal formada: {line[:80]!r} ({e})")
    if not isinstance(message, dict):
        raise ProtocolViolation(f"Mensaje no es un objeto: {line[:80]!r}")
    if not isinstance(message.get('id'), int) or message.get('type') not in MESSAGE_TYPES:
        raise ProtocolViolation(f"Mensaje sin id/type válidos: {line[:80]!r}")
    return message


class ToolProcessBackend(Backend):
    """Proyecta las funciones de un proceso de herramienta como nodos ejecutables."""

    backend_type = 'tool'

    def __init__(self, config: ToolProcessConfig):
        self.config = config
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 1
        self._broken: Optional[str] = None
        self._functions: Dict[str, FunctionDescriptor] = {}

        env = dict(os.environ)
        env.update(config.env)
        try:
            self.process = subprocess.Popen(
                [config.command] + list(config.args),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                env=env,
            )
        except OSError as e:
            raise ToolFailure(f"No se pudo lanzar '{config.command}': {e}")

        threading.Thread(target=self._read_stdout, daemon=True).start()
        threading.Thread(target=self._drain_stderr, daemon=True).start()

        try:
            self._handshake()
        except ToolFailure:
            self.close()
            raise

    # --- E/S ---
    def _read_stdout(self) -> None:
        for line in iter(self.process.stdout.readline, b''):
            self._lines.put(line.rstrip(b'\n'))
        self._lines.put(_EOF)

    def _drain_stderr(self) -> None:
        for line in iter(self.process.stderr.readline, b''):
            logger.debug(f"[{self.config.command}] {line.decode('utf-8', errors='replace').rstrip()}")

    def _send(self, message: Dict[str, Any]) -> None:
        try:
            self.process.stdin.write(encode_message(message))
            self.process.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as e:
            raise ToolFailure(f"Proceso de herramienta no disponible: {e}")

    def _receive(self, expected_id: int, timeout_s: float, handshake: bool = False) -> Dict[str, Any]:
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            if handshake:
                raise HandshakeTimeout(
                    f"'{self.config.command}' no respondió al handshake en "
                    f"{self.config.handshake_timeout_ms} ms"
                )
            self._broken = 'timeout de invocación'
            raise ToolFailure(f"'{self.config.command}' no respondió en {timeout_s}s")
        if line is _EOF:
            self._broken = 'proceso terminado'
            raise ToolFailure(f"El proceso '{self.config.command}' terminó")
        try:
            message = decode_message(line)
        except ProtocolViolation as e:
            self._broken = str(e)
            logger.warning(f"Violación de protocolo en '{self.config.command}': {e}")
            raise
        if message['id'] != expected_id:
            self._broken = f"id {message['id']} != {expected_id}"
            raise ProtocolViolation(
                f"Respuesta con id {message['id']}, se esperaba {expected_id}"
            )
        return message

    def _handshake(self) -> None:
        self._send({'id': 0, 'type': 'describe'})
        reply = self._receive(0, self.config.handshake_timeout_ms / 1000.0, handshake=True)
        if reply['type'] != 'result' or not isinstance(reply.get('result'), dict):
            raise ProtocolViolation(f"Handshake inesperado: {reply}")
        functions = reply['result'].get('functions')
        if not isinstance(functions, list):
            raise ProtocolViolation("Handshake sin lista 'functions'")
        for raw in functions:
            try:
                descriptor = FunctionDescriptor.from_dict(raw)
            except (SchemaViolation, AttributeError) as e:
                raise ProtocolViolation(f"Descriptor inválido en handshake: {e}")
            if not is_valid_segment(descriptor.name) or descriptor.name in self._functions:
                raise ProtocolViolation(f"Nombre de función inválido o repetido: '{descriptor.name}'")
            self._functions[descriptor.name] = descriptor
        logger.info(
            f"Herramienta '{self.config.command}' anuncia {len(self._functions)} funciones",
            extra={'functions': sorted(self._functions)}
        )

    # --- contrato Backend ---
    def _descriptor(self, rel: RelPath) -> FunctionDescriptor:
        if len(rel) != 1 or rel[0] not in self._functions:
            raise NotFound(f"{rel_text(rel)} no existe en el montaje de herramienta")
        return self._functions[rel[0]]

    def stat(self, rel: RelPath) -> NodeMetadata:
        if not rel:
            return NodeMetadata(kind=NodeKind.DIRECTORY)
        descriptor = self._descriptor(rel)
        content = descriptor.serialize()
        return NodeMetadata(
            kind=NodeKind.EXECUTABLE,
            size=len(content),
            descriptor=descriptor,
            content_hash=sha256_hex(content),
        )

    def children(self, rel: RelPath) -> List[str]:
        return sorted(self._functions) if not rel else []

    def read(self, rel: RelPath) -> bytes:
        if not rel:
            raise IsDirectory("La raíz del montaje es un directorio")
        return self._descriptor(rel).serialize()

    def execute(self, rel: RelPath, args: Dict[str, Any]) -> Dict[str, Any]:
        descriptor = self._descriptor(rel)
        with self._lock:
            if self._broken:
                raise ToolFailure(f"Montaje inutilizable: {self._broken}")
            request_id = self._next_id
            self._next_id += 1
            self._send({'id': request_id, 'type': 'invoke', 'name': descriptor.name, 'args': args})
            reply = self._receive(request_id, self.config.invoke_timeout_s)
        if reply['type'] == 'error':
            raise ToolFailure(f"{descriptor.name}: {reply.get('message', 'error sin mensaje')}")
        if reply['type'] != 'result' or not isinstance(reply.get('result'), dict):
            raise ProtocolViolation(f"Respuesta inesperada a invoke: {reply}")
        return reply['result']

    @property
    def usable(self) -> bool:
        return self._broken is None and self.process.poll() is None

    def describe(self) -> Dict[str, Any]:
        """Entrada persistible: solo los nombres de las variables de entorno, nunca sus valores."""
        return {
            'type': 'tool',
            'command': self.config.command,
            'args': list(self.config.args),
            'envKeys': sorted(self.config.env),
        }

    def close(self) -> None:
        if self.process.poll() is not None:
            return
        try:
            self.process.stdin.close()
            self.process.wait(timeout=ToolConfig.SHUTDOWN_TIMEOUT)
        except (OSError, subprocess.TimeoutExpired):
            self.process.kill()
            self.process.wait()
        logger.debug(f"Proceso de herramienta '{self.config.command}' cerrado")


__all__ = ['ToolProcessBackend', 'ToolProcessConfig', 'encode_message', 'decode_message', 'MESSAGE_TYPES']
