"""Regenerate tests/golden/help_<command>.txt from the current parser.

    python3 tools/make_golden_help.py
"""
from pathlib import Path

from nnuzoo.cli import build_parser

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"


def help_texts() -> dict[str, str]:
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    texts = {"nnuzoo": parser.format_help()}
    texts.update({name: p.format_help() for name, p in sub.choices.items()})
    return texts


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for name, text in help_texts().items():
        (GOLDEN / f"help_{name}.txt").write_text(text)
        print(f"wrote help_{name}.txt")


if __name__ == "__main__":
    main()
