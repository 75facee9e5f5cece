"""Regenerate tokenizer_golden.jsonl with the HuggingFace `tokenizers` byte-level BPE."""

import json
import random
from pathlib import Path

from tokenizers import Tokenizer, decoders, models, pre_tokenizers

HERE = Path(__file__).parent

SHAPES = [
    "Statement {a} is {t}. Statement {b} matches statement {a}. Statement {b} is",
    "Statement {a} is {t}. Statement {b} has the same truth value as {a}. Statement {b} is",
    "Statement {b} has the opposite truth value of {a}. Statement {a} is {t}. Statement {b} is",
    "Statement {a} and statement {b} are opposites. Statement {a} is {t}. Statement {b} is",
    "Statement {a} is {t}. Statement {b} has same truth value as {a}. Statement {c} is {u}. Statement {b} is",
    "Statement {a} is {t}. Statement {a} and {b} are opposites. Statement {c} is {u}. Statement {b} is",
]
WORDS = ["true", "false", "good", "bad", "pos", "neg", "correct", "incorrect", "right", "wrong"]

EDGE_CASES = [
    "",
    " ",
    "   leading spaces",
    "trailing spaces   ",
    "tabs\tand\nnewlines\n\n",
    "Statement B doesn't matter.",
    "we're they'll I'd you've she's",
    "numbers 123 4567 89.01",
    "punctuation!?... ,;: --- ()[]{}",
    "naïve café résumé",
    "日本語のテキスト",
    "emoji 🙂🚀 mixed",
    "Ελληνικά και кириллица",
    "<|endoftext|>",
    "   \n  multiple   gaps\t\t here ",
    "CamelCaseWordsAndALLCAPS",
    "a'b'c''d",
    " non-breaking space",
]


def main():
    tok = Tokenizer(models.BPE.from_file(str(HERE / "gpt2/vocab.json"), str(HERE / "gpt2/merges.txt")))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()

    rng = random.Random(20241019)
    texts = []
    for _ in range(100):
        a, b, c = rng.sample("ABCDEFGHIJKLMNOPQRSTUVWXYZ", 3)
        shape = rng.choice(SHAPES)
        texts.append(shape.format(a=a, b=b, c=c, t=rng.choice(WORDS), u=rng.choice(WORDS)))
    texts += EDGE_CASES

    with open(HERE / "tokenizer_golden.jsonl", "w", encoding="utf-8") as out:
        for text in texts:
            ids = tok.encode(text).ids
            out.write(json.dumps({"text": text, "ids": ids}, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
