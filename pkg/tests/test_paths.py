"""
Tests para la gramática de rutas.
"""

import pytest

from src.afs.paths import ROOT, AfsPath, is_valid_segment
from src.common.errors import InvalidPath


class TestParse:
    """Tests para AfsPath.parse."""

    def test_root(self):
        """Test: '/' es la raíz canónica."""
        assert AfsPath.parse('/') is ROOT
        assert str(ROOT) == '/'
        assert ROOT.is_root

    def test_canonical_form(self):
        """Test: la barra final se normaliza."""
        assert str(AfsPath.parse('/context/history/')) == '/context/history'
        assert AfsPath.parse('/context/history').segments == ('context', 'history')

    @pytest.mark.parametrize('text', [
        '/context/../etc',
        '..',
        'context/history',
        '/context//history',
        '/context/his tory',
        '/context/{agentID}',
        '',
    ])
    def test_rejected(self, text):
        """Test: rutas relativas, con '..', vacías o fuera de gramática."""
        with pytest.raises(InvalidPath):
            AfsPath.parse(text)

    def test_non_string(self):
        """Test: tipos que no son texto."""
        with pytest.raises(InvalidPath):
            AfsPath.parse(42)

    def test_case_sensitive(self):
        """Test: las rutas distinguen mayúsculas."""
        assert AfsPath.parse('/Context') != AfsPath.parse('/context')


class TestNavigation:
    """Tests para child, parent, prefijos y rutas relativas."""

    def test_child_and_parent(self):
        path = AfsPath.parse('/context').child('memory', 'bot')
        assert str(path) == '/context/memory/bot'
        assert str(path.parent) == '/context/memory'
        assert path.name == 'bot'
        assert path.depth == 3
        assert ROOT.parent is ROOT

    def test_prefix_by_segments(self):
        """Test: el prefijo compara segmentos completos, no caracteres."""
        context = AfsPath.parse('/context')
        assert context.is_prefix_of(AfsPath.parse('/context/history'))
        assert context.is_prefix_of(context)
        assert not context.is_prefix_of(AfsPath.parse('/contextual'))

    def test_relative_to(self):
        path = AfsPath.parse('/context/history/0000000001')
        assert path.relative_to(AfsPath.parse('/context')) == ('history', '0000000001')
        with pytest.raises(InvalidPath):
            path.relative_to(AfsPath.parse('/modules'))

    def test_child_validates_segments(self):
        with pytest.raises(InvalidPath):
            AfsPath.parse('/context').child('a/b')

    def test_segment_helper(self):
        assert is_valid_segment('e00000001')
        assert is_valid_segment('mock-tool')
        assert not is_valid_segment('..')
        assert not is_valid_segment('a:b')
