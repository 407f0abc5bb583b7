"""
Presupuesto de tokens y estimador.
"""

from dataclasses import dataclass
from typing import Any, Dict, Union

from src.common.config import BudgetConfig
from src.common.errors import BudgetInvalid


def estimate_tokens(text: Union[bytes, str]) -> int:
    """ceil(bytes / 4) sobre la codificación UTF-8."""
    if isinstance(text, str):
        text = text.encode('utf-8')
    return (len(text) + 3) // 4


@dataclass(frozen=True)
class TokenBudget:
    """Ventana de tokens: el Constructor nunca supera ``usable``."""
    max_tokens: int = BudgetConfig.MAX_TOKENS
    reserved_for_response: int = BudgetConfig.RESERVED_FOR_RESPONSE

    @property
    def usable(self) -> int:
        return self.max_tokens - self.reserved_for_response

    def validate(self) -> 'TokenBudget':
        if self.max_tokens < 1 or self.reserved_for_response < 0:
            raise BudgetInvalid(
                f"Presupuesto inválido: maxTokens={self.max_tokens}, "
                f"reservedForResponse={self.reserved_for_response}"
            )
        if self.usable <= 0:
            raise BudgetInvalid(f"Presupuesto sin capacidad utilizable (usable={self.usable})")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {'maxTokens': self.max_tokens, 'reservedForResponse': self.reserved_for_response}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TokenBudget':
        return cls(int(data['maxTokens']), int(data['reservedForResponse']))


__all__ = ['TokenBudget', 'estimate_tokens']
