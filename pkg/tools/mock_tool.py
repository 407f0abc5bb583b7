#!/usr/bin/env python3
"""
Proceso de herramienta simulado que habla el Tool Wire Protocol por stdio.

Anuncia dos funciones con respuestas fijas:
- search_repositories(query, limit?) -> {items, total_count}
- list_issues(owner, repo, state?) -> {issues}

Uso:
    python tools/mock_tool.py [--malformed] [--crash-after N]

--malformed       responde al handshake con una línea que no es JSON
--crash-after N   termina el proceso tras atender N invocaciones
"""

import argparse
import json
import os
import sys

FUNCTIONS = [
    {
        'name': 'search_repositories',
        'description': 'Busca repositorios por texto (respuestas fijas)',
        'inputSchema': {
            'query': {'type': 'string', 'required': True},
            'limit': {'type': 'integer', 'required': False},
        },
        'outputSchema': {
            'items': {'type': 'array', 'required': True},
            'total_count': {'type': 'integer', 'required': True},
        },
    },
    {
        'name': 'list_issues',
        'description': 'Lista issues de un repositorio (respuestas fijas)',
        'inputSchema': {
            'owner': {'type': 'string', 'required': True},
            'repo': {'type': 'string', 'required': True},
            'state': {'type': 'string', 'required': False},
        },
        'outputSchema': {
            'issues': {'type': 'array', 'required': True},
        },
    },
]

REPOSITORIES = [
    {'full_name': 'afs-project/afs', 'description': 'Agentic file system', 'stars': 42},
    {'full_name': 'afs-project/afs-tools', 'description': 'Tools mounted into the afs namespace', 'stars': 7},
    {'full_name': 'example/context-engineering', 'description': 'Context pipeline experiments', 'stars': 3},
]

ISSUES = [
    {'number': 1, 'title': 'Mount table persistence', 'state': 'open'},
    {'number': 2, 'title': 'Compaction index format', 'state': 'closed'},
    {'number': 3, 'title': 'Scope file parser', 'state': 'open'},
]


def search_repositories(args):
    query = args['query'].lower()
    items = [r for r in REPOSITORIES
             if query in r['full_name'].lower() or query in r['description'].lower()]
    limit = args.get('limit')
    if limit is not None:
        items = items[:limit]
    return {'items': items, 'total_count': len(items)}


def list_issues(args):
    state = args.get('state')
    issues = [i for i in ISSUES if state in (None, 'all') or i['state'] == state]
    return {'issues': [dict(i, repo=f"{args['owner']}/{args['repo']}") for i in issues]}


HANDLERS = {'search_repositories': search_repositories, 'list_issues': list_issues}


def send(message):
    sys.stdout.write(json.dumps(message, separators=(',', ':')) + '\n')
    sys.stdout.flush()


def main():
    parser = argparse.ArgumentParser(description='Herramienta simulada (Tool Wire Protocol)')
    parser.add_argument('--malformed', action='store_true',
                        help='Responder al handshake con una línea mal formada')
    parser.add_argument('--crash-after', type=int, default=None,
                        help='Terminar tras N invocaciones')
    args = parser.parse_args()

    served = 0
    for line in sys.stdin:
        try:
            message = json.loads(line)
        except ValueError:
            send({'id': -1, 'type': 'error', 'message': 'línea mal formada'})
            continue

        request_id = message.get('id')
        if message.get('type') == 'describe':
            if args.malformed:
                sys.stdout.write('this is not a protocol message\n')
                sys.stdout.flush()
                continue
            send({'id': request_id, 'type': 'result', 'result': {'functions': FUNCTIONS}})
        elif message.get('type') == 'invoke':
            if args.crash_after is not None and served >= args.crash_after:
                os._exit(1)
            handler = HANDLERS.get(message.get('name'))
            if handler is None:
                send({'id': request_id, 'type': 'error', 'message': f"función desconocida: {message.get('name')}"})
            else:
                try:
                    send({'id': request_id, 'type': 'result', 'result': handler(message.get('args') or {})})
                except (KeyError, TypeError) as e:
                    send({'id': request_id, 'type': 'error', 'message': f'argumentos inválidos: {e}'})
            served += 1
        else:
            send({'id': request_id, 'type': 'error', 'message': f"tipo no soportado: {message.get('type')}"})
    return 0


if __name__ == '__main__':
    sys.exit(main())
