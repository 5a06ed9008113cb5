"""Token accounting for the conversation budget.

The artifact must not depend on any provider's proprietary tokenizer, so
tokens are approximated as one per four characters, rounded up, with a
floor of one token per entry.
"""

from __future__ import annotations


def count_tokens(text: str) -> int:
    return max(1, -(-len(text) // 4))
