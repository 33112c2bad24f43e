"""Emoji detection over raw post text.

Detection is table driven: a set of explicit codepoint sequences is tried
longest-first, then a small grammar over the Unicode emoji ranges handles
flags, keycaps, skin-tone modifiers and ZWJ sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Label set of the 20-class task. Slots with a known frequency rank hold that
# emoji; the rest are filled with other common Instagram emoji.
TOP20_EMOJI = (
    "\u2764",  # red heart
    "\U0001F602",
    "\U0001F60D",
    "\U0001F495",
    "\U0001F60A",
    "\U0001F525",
    "\U0001F1FA\U0001F1F8",  # US flag
    "\u2600",
    "\U0001F60E",
    "\U0001F64C",
    "\U0001F499",
    "\U0001F618",
    "\U0001F64F",
    "\U0001F49C",
    "\U0001F4AA",
    "\u2728",
    "\U0001F44C",
    "\U0001F4AF",
    "\U0001F389",
    "\U0001F436",
)

EMOJI_RANGES = (
    (0x203C, 0x203C),
    (0x2049, 0x2049),
    (0x231A, 0x231B),
    (0x2328, 0x2328),
    (0x23CF, 0x23CF),
    (0x23E9, 0x23F3),
    (0x23F8, 0x23FA),
    (0x24C2, 0x24C2),
    (0x25AA, 0x25AB),
    (0x25B6, 0x25B6),
    (0x25C0, 0x25C0),
    (0x25FB, 0x25FE),
    (0x2600, 0x27BF),
    (0x2934, 0x2935),
    (0x2B05, 0x2B07),
    (0x2B1B, 0x2B1C),
    (0x2B50, 0x2B50),
    (0x2B55, 0x2B55),
    (0x3030, 0x3030),
    (0x303D, 0x303D),
    (0x3297, 0x3297),
    (0x3299, 0x3299),
    (0x1F004, 0x1F004),
    (0x1F0CF, 0x1F0CF),
    (0x1F170, 0x1F251),
    (0x1F300, 0x1F64F),
    (0x1F680, 0x1F6FF),
    (0x1F7E0, 0x1F7FF),
    (0x1F900, 0x1F9FF),
    (0x1FA70, 0x1FAFF),
)

VARIATION_SELECTORS = frozenset({0xFE0E, 0xFE0F})
SKIN_TONES = range(0x1F3FB, 0x1F400)
REGIONAL_INDICATORS = range(0x1F1E6, 0x1F200)
TAGS = range(0xE0020, 0xE0080)
ZWJ = 0x200D
KEYCAP = 0x20E3
KEYCAP_BASES = frozenset("0123456789#*")


def _in_ranges(cp: int) -> bool:
    for lo, hi in EMOJI_RANGES:
        if lo <= cp <= hi:
            return True
    return False


def normalize_emoji(seq: str) -> str:
    """Drop presentation selectors so text- and emoji-style forms share a label."""
    return "".join(ch for ch in seq if ord(ch) not in VARIATION_SELECTORS)


@dataclass(frozen=True)
class EmojiTable:
    sequences: frozenset = field(default_factory=lambda: frozenset(TOP20_EMOJI))
    use_ranges: bool = True

    def __post_init__(self):
        lengths = sorted({len(s) for s in self.sequences}, reverse=True)
        object.__setattr__(self, "_lengths", tuple(lengths))

    def match_at(self, text: str, i: int) -> int:
        """Length of the emoji starting at ``text[i]``, or 0 if there is none."""
        for n in self._lengths:
            if text[i : i + n] in self.sequences:
                # an explicit hit may still carry modifiers (e.g. a skin tone)
                return n + self._modifiers(text, i + n)
        if not self.use_ranges:
            return 0
        cp = ord(text[i])
        if cp in REGIONAL_INDICATORS:
            if i + 1 < len(text) and ord(text[i + 1]) in REGIONAL_INDICATORS:
                return 2
            return 1
        if text[i] in KEYCAP_BASES:
            j = i + 1
            if j < len(text) and ord(text[j]) in VARIATION_SELECTORS:
                j += 1
            if j < len(text) and ord(text[j]) == KEYCAP:
                return j + 1 - i
            return 0
        if _in_ranges(cp):
            return 1 + self._modifiers(text, i + 1)
        return 0

    def _modifiers(self, text: str, j: int) -> int:
        start = j
        while j < len(text):
            cp = ord(text[j])
            if cp in VARIATION_SELECTORS or cp in SKIN_TONES or cp in TAGS or cp == KEYCAP:
                j += 1
            elif cp == ZWJ and j + 1 < len(text) and _in_ranges(ord(text[j + 1])):
                j += 2
            else:
                break
        return j - start

    def find_all(self, text: str) -> list[tuple[int, int]]:
        """Non-overlapping (start, end) spans of every emoji, left to right."""
        spans = []
        i = 0
        while i < len(text):
            n = self.match_at(text, i)
            if n:
                spans.append((i, i + n))
                i += n
            else:
                i += 1
        return spans


DEFAULT_EMOJI_TABLE = EmojiTable()
