"""
Línea de comandos de AFS.

Uso:
    afs [--store URL] [--config FILE] [--provider P] [--clock C] [--json] <verbo> ...

Verbos de shell:    mount, unmount, ls, cat, write, stat, attr, grep, exec
Repositorio:        history, memory, pad, index
Pipeline:           session run, manifest show, review list|approve|correct|reject|commit
Auditoría:          log tail|verify|replay, gc
Gobernanza:         scope define|show

Códigos de salida: 0 éxito, 1 error de usuario, 2 acceso, 3 interno. Los
errores se escriben en stderr como "<Código>: <mensaje>".
"""

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.afs.nodes import NodeKind
from src.cli.runtime import AfsRuntime
from src.cli.settings import Settings, load_policy, load_settings
from src.common.errors import EXIT_INTERNAL, EXIT_USER, AfsError, ConfigError, LogCorrupt
from src.common.logging_config import attach_actor_context, detach_actor_context, setup_logging
from src.governance.scopes import format_scope_text, parse_scope_text
from src.pipeline.budget import TokenBudget
from src.pipeline.evaluator import EvaluationReport
from src.pipeline.session import parse_script
from src.provenance.log import ProvenanceLog
from src.provenance.replay import replay
from src.repository.history import HistoryBackend

logger = logging.getLogger(__name__)

# Toda invocación de la CLI actúa como operador humano
CLI_ACTOR = 'human'
CLI_SCOPE = 'operator'


class CliParser(argparse.ArgumentParser):
    """Errores de uso con código 1 (el 2 está reservado para acceso)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"ConfigError: {message}\n")


def _pairs(values: Optional[List[str]], what: str) -> Dict[str, str]:
    pairs = {}
    for item in values or []:
        key, sep, value = item.partition('=')
        if not sep or not key:
            raise ConfigError(f"{what} debe tener la forma clave=valor: '{item}'")
        pairs[key] = value
    return pairs


def _emit(args: argparse.Namespace, data: Any, text: Optional[str] = None) -> None:
    """Forma legible en líneas, o JSON con --json."""
    if args.json:
        print(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False))
    elif text:
        print(text)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"No se puede leer '{path}': {e}")


# ----------------------------------------------------------------------
# verbos de shell
# ----------------------------------------------------------------------
def cmd_mount(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    if args.root is None:
        mounts = [m.to_dict() for m in runtime.afs.mounts()]
        lines = [f"{m['root']}\t{m['backend']}\t{'ro' if m['readOnly'] else 'rw'}" for m in mounts]
        lines += [f"{root}\tunavailable\t{reason}" for root, reason in sorted(runtime.mount_errors.items())]
        _emit(args, {'mounts': mounts, 'errors': runtime.mount_errors}, '\n'.join(lines))
        return 0

    chosen = [flag for flag in (args.dir, args.store_url, args.tool) if flag]
    if len(chosen) != 1:
        raise ConfigError("Indique exactamente uno de --dir, --store-url o --tool")
    if args.dir:
        entry = {'type': 'dir', 'hostRoot': str(Path(args.dir).resolve()),
                 'followSymlinks': args.follow_symlinks}
    elif args.store_url:
        entry = {'type': 'store', 'url': args.store_url}
    else:
        argv = shlex.split(args.tool)
        entry = {'type': 'tool', 'command': argv[0], 'args': argv[1:] + list(args.tool_arg or []),
                 'env': _pairs(args.env, '--env')}
    entry.update(readOnly=args.read_only, maxDepth=args.max_depth, execTimeoutS=args.exec_timeout)
    mount_id = runtime.add_mount(args.root, entry)
    _emit(args, {'mountId': mount_id}, mount_id)
    return 0


def cmd_unmount(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    runtime.remove_mount(args.root)
    _emit(args, {'unmounted': args.root}, args.root)
    return 0


def cmd_ls(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    entries = runtime.afs.list(args.path, depth=args.depth, include_archived=args.all)
    if args.long:
        text = '\n'.join(
            f"{meta.kind.value:<10} {meta.revision_id:>4} {meta.size:>8}  {path}" for path, meta in entries
        )
    else:
        text = '\n'.join(str(path) for path, _ in entries)
    _emit(args, [dict(path=str(p), **m.to_dict()) for p, m in entries], text)
    return 0


def cmd_cat(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    afs = runtime.afs
    if args.rev is None:
        content, _ = afs.read(args.path)
    else:
        afs.stat(args.path)
        with afs.operation('read', args.path) as frame:
            frame.detail['revisionId'] = args.rev
            content = afs.log.get_revision(str(args.path), args.rev)
            frame.set_output(content)
    sys.stdout.buffer.write(content)
    sys.stdout.flush()
    return 0


def cmd_write(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    if args.file:
        try:
            content = Path(args.file).read_bytes()
        except OSError as e:
            raise ConfigError(f"No se puede leer '{args.file}': {e}")
    elif args.text is not None:
        content = args.text.encode('utf-8')
    else:
        content = sys.stdin.buffer.read()
    meta = runtime.afs.write(args.path, content, _pairs(args.attr, '--attr'))
    _emit(args, dict(path=args.path, **meta.to_dict()), f"{args.path}@{meta.revision_id}")
    return 0


def cmd_stat(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    meta = runtime.afs.stat(args.path)
    data = meta.to_dict()
    lines = [f"path: {args.path}"]
    for key, value in data.items():
        if isinstance(value, dict):
            value = json.dumps(value, sort_keys=True, ensure_ascii=False)
        lines.append(f"{key}: {value}")
    _emit(args, dict(path=args.path, **data), '\n'.join(lines))
    return 0


def cmd_attr(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    meta = runtime.afs.set_attr(args.path, args.key, args.value)
    _emit(args, dict(path=args.path, **meta.to_dict()), f"{args.path}@{meta.revision_id}")
    return 0


def cmd_grep(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    hits = runtime.afs.search(args.path, args.query, mode=args.mode, limit=args.limit)
    _emit(args, [h.to_dict() for h in hits],
          '\n'.join(f"{h.path}:{h.score:g}:{h.snippet}" for h in hits))
    return 0


def cmd_exec(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    raw = _pairs(args.arg, '--arg')
    meta = runtime.afs.stat(args.path)
    call_args = meta.descriptor.coerce_args(raw) if meta.kind == NodeKind.EXECUTABLE else raw
    result, _ = runtime.afs.exec(args.path, call_args)
    print(json.dumps(result, indent=2, sort_keys=True, ensure_ascii=False))
    return 0


# ----------------------------------------------------------------------
# repositorio
# ----------------------------------------------------------------------
def cmd_history(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    if args.action == 'append':
        record = runtime.repository.append_history(
            args.origin, args.agent, args.session or '', None, args.text.encode('utf-8'),
        )
        _emit(args, record.to_dict(), record.record_id)
        return 0
    report = runtime.repository.verify_chain()
    if not report.ok:
        raise LogCorrupt(f"registro {report.failed_record_id}: {report.reason}")
    _emit(args, {'ok': True, 'checked': report.checked}, f"OK {report.checked} records")
    return 0


def cmd_memory(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    repository = runtime.repository
    if args.action == 'list':
        entries = repository.list_entries(args.agent, args.type, include_archived=args.all)
        _emit(args, [e.to_dict() for e in entries],
              '\n'.join(f"{e.entry_id}\t{e.memory_type}\t{e.path}" for e in entries))
    elif args.action == 'derive':
        entry = repository.derive_memory(args.records, args.type, args.derivation, args.agent, args.session)
        _emit(args, entry.to_dict(), entry.path)
    elif args.action == 'consolidate':
        report = repository.consolidate_memory(args.agent, args.type, args.threshold)
        text = '\n'.join([f"before {report.before} after {report.after}"]
                         + [f"merged {kept} <- {absorbed}" for kept, absorbed in report.merged])
        _emit(args, report.to_dict(), text)
    else:
        sources = repository.lineage(args.entry)
        _emit(args, {'entryId': args.entry, 'lineage': sources}, '\n'.join(sources))
    return 0


def cmd_pad(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    if args.action == 'write':
        entry = runtime.repository.write_scratchpad(
            args.task, args.text.encode('utf-8'), args.agent, args.source, args.session,
        )
        _emit(args, entry.to_dict(), entry.path)
    else:
        new_id = runtime.repository.promote_scratchpad(args.entry, args.target)
        _emit(args, {'entryId': args.entry, 'promotedTo': new_id}, new_id)
    return 0


def cmd_index(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    if args.action == 'build':
        handle = runtime.indexer.build_index(args.root, args.id)
        _emit(args, {'indexId': handle.index_id, 'documents': len(handle), 'corpusDigest': handle.digest},
              f"{handle.index_id} {len(handle)} documents")
        return 0
    results = runtime.indexer.query_index(runtime.indexer.load(args.id), args.query, args.k)
    _emit(args, [{'path': p, 'score': s} for p, s in results],
          '\n'.join(f"{p}\t{s:.6f}" for p, s in results))
    return 0


# ----------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------
def cmd_session(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    script = parse_script(_read_text(args.script))
    budget = TokenBudget(
        args.max_tokens if args.max_tokens is not None else runtime.settings.max_tokens,
        args.reserved if args.reserved is not None else runtime.settings.reserved_tokens,
    )
    transcript = runtime.sessions.run(script, args.agent, budget, args.session_id)
    if args.json:
        print(transcript.to_json())
    else:
        sys.stdout.write(transcript.to_text())
    return 0


def cmd_manifest(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    manifest = runtime.constructor.load_manifest(args.manifest_id)
    _emit(args, manifest.to_dict(), manifest.to_text())
    return 0


def _commit(runtime: AfsRuntime, args: argparse.Namespace, reasoning_id: str) -> List[str]:
    record = runtime.evaluator.load_evaluation(reasoning_id)
    report = EvaluationReport.from_dict(record['report'])
    entries = runtime.evaluator.commit_validated(report, record['output'], record['agentId'])
    return [e.path for e in entries]


def cmd_review(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    evaluator = runtime.evaluator
    if args.action == 'list':
        pending = evaluator.pending_reviews()
        lines = [
            f"{r['reasoningId']}\tconfidence={r['report']['confidence']:.4f}\t"
            f"{(r['output'].splitlines() or [''])[0]}"
            for r in pending
        ]
        _emit(args, pending, '\n'.join(lines))
        return 0
    if args.action == 'commit':
        committed = _commit(runtime, args, args.reasoning_id)
        _emit(args, {'committed': committed}, '\n'.join(committed))
        return 0

    with runtime.afs.acting_as(CLI_ACTOR, scope='reviewer'):
        path = evaluator.annotate(
            args.reasoning_id, args.reviewer, args.action,
            note=getattr(args, 'note', '') or '',
            correction=getattr(args, 'text', None),
        )
    committed = _commit(runtime, args, args.reasoning_id) if args.action != 'reject' else []
    _emit(args, {'annotation': str(path), 'committed': committed}, '\n'.join([str(path)] + committed))
    return 0


# ----------------------------------------------------------------------
# auditoría y gobernanza
# ----------------------------------------------------------------------
def cmd_log(settings: Settings, args: argparse.Namespace) -> int:
    """Auditoría directa sobre el almacén: no abre el runtime ni añade eventos."""
    log = ProvenanceLog(settings.store_dir / 'provenance', fsync=False)
    if args.action == 'tail':
        events = log.tail(args.n)
        _emit(args, [e.body() for e in events], '\n'.join(
            f"{e.event_id} {e.timestamp} {e.actor} {e.op_type} {e.path or '-'} {e.outcome}" for e in events
        ))
    elif args.action == 'verify':
        report = log.verify()
        if not report.ok:
            raise LogCorrupt(f"evento {report.failed_event_id}: {report.reason}")
        chain = HistoryBackend(settings.store_dir / 'history', fsync=False).verify_chain()
        if not chain.ok:
            raise LogCorrupt(f"registro {chain.failed_record_id}: {chain.reason}")
        _emit(args, {'ok': True, 'events': report.events, 'records': chain.checked},
              f"OK {report.events} events")
    else:
        digest = replay(log, args.up_to)
        _emit(args, {'stateDigest': digest, 'upTo': args.up_to}, digest)
    return 0


def cmd_gc(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    policy = load_policy(args.policy)
    now = args.now if args.now is not None else runtime.clock.now_ms()
    report = runtime.repository.apply_retention(policy, now)
    _emit(args, report.to_dict(), report.to_text())
    return 0


def cmd_scope(runtime: AfsRuntime, args: argparse.Namespace) -> int:
    if args.action == 'define':
        scope = runtime.afs.define_scope(args.name, parse_scope_text(_read_text(args.file)))
    else:
        scope = runtime.scopes.get(args.name)
    grants = [{'prefix': str(g.prefix), 'rights': sorted(r.value for r in g.rights)} for g in scope.grants]
    _emit(args, {'name': scope.name, 'grants': grants}, format_scope_text(scope.grants).rstrip('\n'))
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog='afs',
        description='Agentic File System: espacio de nombres, repositorio de contexto y pipeline',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Ejemplos:
  %(prog)s ls /context --depth 1
  %(prog)s mount /modules/mock-tool --tool "python tools/mock_tool.py"
  %(prog)s exec /modules/mock-tool/search_repositories --arg query=afs
  %(prog)s session run scripts/chatbot.script --agent chatbot
  %(prog)s log verify
        """,
    )
    parser.add_argument('--store', help='Almacén "file:<dir>" (default: AFS_STORE)')
    parser.add_argument('--config', help='Archivo de configuración (default: AFS_CONFIG o ./afs.toml)')
    parser.add_argument('--provider', help='"stub" o "external:<comando>" (default: AFS_PROVIDER)')
    parser.add_argument('--clock', help='"system" o "logical:<inicio_ms>[:<paso_ms>]" (default: AFS_CLOCK)')
    parser.add_argument('--json', action='store_true', help='Salida JSON')
    parser.add_argument('-v', '--verbose', action='store_true', help='Logging DEBUG en stderr')
    parser.add_argument('-q', '--quiet', action='store_true', help='Solo errores en stderr')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    p = sub.add_parser('mount', help='Monta un backend o lista los montajes')
    p.add_argument('root', nargs='?')
    p.add_argument('--dir', help='Directorio del anfitrión')
    p.add_argument('--store-url', help='Almacén "file:<dir>"')
    p.add_argument('--tool', help='Comando del proceso de herramienta')
    p.add_argument('--tool-arg', action='append', help='Argumento adicional del proceso')
    p.add_argument('--env', action='append', help='Variable de entorno K=V del proceso')
    p.add_argument('--follow-symlinks', action='store_true')
    p.add_argument('--read-only', action='store_true')
    p.add_argument('--max-depth', type=int)
    p.add_argument('--exec-timeout', type=float)
    p.set_defaults(handler=cmd_mount)

    p = sub.add_parser('unmount', help='Desmonta una raíz')
    p.add_argument('root')
    p.set_defaults(handler=cmd_unmount)

    p = sub.add_parser('ls', help='Lista descendientes')
    p.add_argument('path')
    p.add_argument('--depth', type=int, default=1)
    p.add_argument('--all', action='store_true', help='Incluye nodos archivados')
    p.add_argument('-l', '--long', action='store_true')
    p.set_defaults(handler=cmd_ls)

    p = sub.add_parser('cat', help='Contenido de un nodo')
    p.add_argument('path')
    p.add_argument('--rev', type=int, help='Revisión concreta (desde el log)')
    p.set_defaults(handler=cmd_cat)

    p = sub.add_parser('write', help='Escribe un nodo de datos')
    p.add_argument('path')
    p.add_argument('text', nargs='?')
    p.add_argument('--file')
    p.add_argument('--attr', action='append', help='Atributo k=v')
    p.set_defaults(handler=cmd_write)

    p = sub.add_parser('stat', help='Metadatos de un nodo')
    p.add_argument('path')
    p.set_defaults(handler=cmd_stat)

    p = sub.add_parser('attr', help='Fija un atributo de usuario')
    p.add_argument('path')
    p.add_argument('key')
    p.add_argument('value')
    p.set_defaults(handler=cmd_attr)

    p = sub.add_parser('grep', help='Búsqueda de contenido')
    p.add_argument('path')
    p.add_argument('query')
    p.add_argument('--mode', default='substring', choices=['substring', 'regex', 'semantic'])
    p.add_argument('--limit', type=int, default=10)
    p.set_defaults(handler=cmd_grep)

    p = sub.add_parser('exec', help='Invoca un nodo ejecutable')
    p.add_argument('path')
    p.add_argument('--arg', action='append', help='Argumento k=v')
    p.set_defaults(handler=cmd_exec)

    p = sub.add_parser('history', help='Historial inmutable')
    hs = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = hs.add_parser('append')
    a.add_argument('text')
    a.add_argument('--origin', default='user', choices=['user', 'agent', 'tool', 'human-reviewer'])
    a.add_argument('--agent', default=CLI_ACTOR)
    a.add_argument('--session')
    hs.add_parser('verify')
    p.set_defaults(handler=cmd_history)

    p = sub.add_parser('memory', help='Memoria tipada')
    ms = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = ms.add_parser('list')
    a.add_argument('--agent')
    a.add_argument('--type')
    a.add_argument('--all', action='store_true')
    a = ms.add_parser('derive')
    a.add_argument('records', nargs='*')
    a.add_argument('--agent', required=True)
    a.add_argument('--type', required=True)
    a.add_argument('--derivation', required=True, choices=['summarize', 'embed', 'index'])
    a.add_argument('--session')
    a = ms.add_parser('consolidate')
    a.add_argument('--agent', required=True)
    a.add_argument('--type', required=True)
    a.add_argument('--threshold', type=float, default=0.9)
    a = ms.add_parser('lineage')
    a.add_argument('entry')
    p.set_defaults(handler=cmd_memory)

    p = sub.add_parser('pad', help='Scratchpads')
    ps = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = ps.add_parser('write')
    a.add_argument('task')
    a.add_argument('text')
    a.add_argument('--agent', required=True)
    a.add_argument('--source', action='append', help='recordId/entryId de linaje')
    a.add_argument('--session')
    a = ps.add_parser('promote')
    a.add_argument('entry')
    a.add_argument('target', help='"history" o "memory:<tipo>"')
    p.set_defaults(handler=cmd_pad)

    p = sub.add_parser('index', help='Índices semánticos persistidos')
    xs = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = xs.add_parser('build')
    a.add_argument('root')
    a.add_argument('--id', default='default')
    a = xs.add_parser('query')
    a.add_argument('query')
    a.add_argument('--id', default='default')
    a.add_argument('-k', type=int, default=10)
    p.set_defaults(handler=cmd_index)

    p = sub.add_parser('session', help='Sesiones del pipeline')
    ss = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = ss.add_parser('run')
    a.add_argument('script')
    a.add_argument('--agent', default='chatbot')
    a.add_argument('--session-id')
    a.add_argument('--max-tokens', type=int)
    a.add_argument('--reserved', type=int)
    p.set_defaults(handler=cmd_session)

    p = sub.add_parser('manifest', help='Manifiestos de contexto')
    ms = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = ms.add_parser('show')
    a.add_argument('manifest_id')
    p.set_defaults(handler=cmd_manifest)

    p = sub.add_parser('review', help='Revisión humana')
    rs = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    rs.add_parser('list')
    for verb in ('approve', 'reject'):
        a = rs.add_parser(verb)
        a.add_argument('reasoning_id')
        a.add_argument('--note', default='')
        a.add_argument('--reviewer', default='operator')
    a = rs.add_parser('correct')
    a.add_argument('reasoning_id')
    a.add_argument('text')
    a.add_argument('--note', default='')
    a.add_argument('--reviewer', default='operator')
    a = rs.add_parser('commit')
    a.add_argument('reasoning_id')
    p.set_defaults(handler=cmd_review)

    p = sub.add_parser('log', help='Auditoría del log de transacciones')
    ls = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = ls.add_parser('tail')
    a.add_argument('-n', type=int, default=10)
    ls.add_parser('verify')
    a = ls.add_parser('replay')
    a.add_argument('--up-to', type=int)
    p.set_defaults(handler=cmd_log)

    p = sub.add_parser('gc', help='Aplica la política de retención')
    p.add_argument('--policy', help='Archivo INI con sección [retention]')
    p.add_argument('--now', type=int, help='Instante de referencia (ms UTC)')
    p.set_defaults(handler=cmd_gc)

    p = sub.add_parser('scope', help='Ámbitos de acceso')
    cs = p.add_subparsers(dest='action', required=True, parser_class=CliParser)
    a = cs.add_parser('define')
    a.add_argument('name')
    a.add_argument('file')
    a = cs.add_parser('show')
    a.add_argument('name')
    p.set_defaults(handler=cmd_scope)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config).override(
            store_url=args.store, provider=args.provider, clock=args.clock,
        )
        level = 'DEBUG' if args.verbose else ('ERROR' if args.quiet else None)
        setup_logging(log_level=level, log_dir=settings.store_dir / 'logs')

        if args.command == 'log':
            return cmd_log(settings, args)
        with AfsRuntime.open(settings, actor=CLI_ACTOR) as runtime:
            actor_filter = attach_actor_context(lambda: runtime.afs.actor)
            try:
                with runtime.afs.acting_as(CLI_ACTOR, scope=CLI_SCOPE):
                    return args.handler(runtime, args)
            finally:
                detach_actor_context(actor_filter)
    except AfsError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Error interno: {e}", exc_info=True)
        print(f"InternalError: {e}", file=sys.stderr)
        return EXIT_INTERNAL


__all__ = ['main', 'build_parser']
